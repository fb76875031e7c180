//! Fitting a [`DisplacementModel`] to image pairs: mini-batch Adam over
//! shuffled pixels, warm-started sequences and multi-seed ensembles.

mod adam;
mod config;

pub use adam::{adam_update, AdamHyper, AdamState};
pub use config::{RunConfig, CONFIG_KEYS};

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{sample_grid, FieldGrid};
use crate::image::Image;
use crate::model::{DisplacementModel, ModelConfig, NetworkParams};
use crate::real::Real;
use crate::warp::{EmbeddingCache, LossEngine, PixelBatch};

/// Embeddings for every pixel are precomputed when they fit in this many
/// bytes; larger images embed each batch on the fly.
pub const EMBEDDING_CACHE_LIMIT: usize = 512 << 20;

/// Runs whose final loss exceeds this multiple of the ensemble median are
/// treated as non-converged.
pub const DEFAULT_DIVERGENCE_FACTOR: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    /// Pixels per mini-batch.
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Drives batch shuffling (and model init where a trainer creates one).
    pub seed: u64,
    /// Fixed-order gradient reduction independent of the thread count.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 10_000,
            epochs: 100,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            deterministic: false,
        }
    }
}

impl TrainConfig {
    /// Cheap per-pair profile for long experimental sequences.
    pub fn low_cost_rest() -> Self {
        TrainConfig {
            epochs: 1,
            batch_size: 50_000,
            ..Default::default()
        }
    }

    /// Warm-started pairs of synthetic sequences.
    pub fn warm_rest() -> Self {
        TrainConfig {
            epochs: 20,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::InvalidConfig(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps.is_nan() || self.eps <= 0.0 {
            return Err(Error::InvalidConfig("Adam constants out of range".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamHyper {
        AdamHyper {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean batch loss of every completed epoch.
    pub loss_per_epoch: Vec<f64>,
    /// Seconds.
    pub wall_time: f64,
    pub diverged: bool,
    /// Loss of the last completed epoch, infinite if none completed.
    pub final_loss: f64,
}

impl TrainReport {
    pub fn epochs_run(&self) -> usize {
        self.loss_per_epoch.len()
    }

    /// First epoch (1-based) whose loss is at most `target`.
    pub fn epochs_to_reach(&self, target: f64) -> Option<usize> {
        self.loss_per_epoch.iter().position(|&l| l <= target).map(|i| i + 1)
    }
}

fn check_pair(first: &Image, second: &Image) -> Result<()> {
    if first.dims() != second.dims() {
        return Err(Error::DimensionMismatch(format!(
            "images are {}x{} and {}x{}",
            first.width(),
            first.height(),
            second.width(),
            second.height()
        )));
    }
    Ok(())
}

fn maybe_cache<T: Real>(model: &DisplacementModel<T>, img: &Image) -> Option<EmbeddingCache<T>> {
    let bytes = img.pixel_count() * 2 * model.config().n_embed * std::mem::size_of::<T>();
    (bytes <= EMBEDDING_CACHE_LIMIT).then(|| EmbeddingCache::build(model, img.width(), img.height()))
}

/// Fits `model` so that the second image warped by it matches the first.
///
/// Each epoch shuffles all pixels of `first` and visits them in batches of
/// `cfg.batch_size`. A non-finite loss or update stops training, restores
/// the last finite parameters and sets `diverged`.
pub fn train_pair<T: Real>(
    model: &mut DisplacementModel<T>,
    first: &Image,
    second: &Image,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    check_pair(first, second)?;
    cfg.validate()?;
    let cache = maybe_cache(model, first);
    run_epochs(model, first, second, cfg, cache.as_ref())
}

fn run_epochs<T: Real>(
    model: &mut DisplacementModel<T>,
    first: &Image,
    second: &Image,
    cfg: &TrainConfig,
    cache: Option<&EmbeddingCache<T>>,
) -> Result<TrainReport> {
    let start = Instant::now();
    let hyper = cfg.adam();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..first.pixel_count()).collect();
    let mut adam = AdamState::for_params(model.params());
    let mut grads = NetworkParams::zeros_like(&model.config().layer_widths());
    let mut engine = LossEngine::new(cfg.deterministic);
    let mut backup = model.params().clone();
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut diverged = false;

    'epochs: for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut sum, mut batches) = (0.0, 0usize);
        for pixels in order.chunks(cfg.batch_size) {
            let loss = match cache {
                Some(cache) => engine.loss_and_grad_cached(model, cache, first, second, pixels, &mut grads),
                None => {
                    let batch = PixelBatch::from_indices(first, pixels);
                    engine.loss_and_grad_into(model, second, &batch, &mut grads)
                }
            };
            let loss = match loss {
                Ok(l) if grads.is_finite() => l,
                Ok(_) | Err(Error::Diverged(_)) => {
                    diverged = true;
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };
            backup.clone_from(model.params());
            if adam.step(model.params_mut(), &grads, &hyper).is_err() {
                model.set_params(backup.clone());
                diverged = true;
                break 'epochs;
            }
            sum += loss;
            batches += 1;
        }
        losses.push(sum / batches as f64);
    }

    Ok(TrainReport {
        final_loss: losses.last().copied().unwrap_or(f64::INFINITY),
        loss_per_epoch: losses,
        wall_time: start.elapsed().as_secs_f64(),
        diverged,
    })
}

/// Trained state after one pair of a sequence.
#[derive(Clone, Debug)]
pub struct PairResult<T> {
    pub model: DisplacementModel<T>,
    pub report: TrainReport,
}

/// Trains consecutive frame pairs, each starting from the parameters the
/// previous pair ended with. The first pair uses `cfg_first`, the rest
/// `cfg_rest`; pair `k` shuffles with seed `cfg.seed + k`. The embedding
/// matrix is never resampled. A diverged pair is reported and the next one
/// continues from the last finite parameters.
pub fn train_sequence<T: Real>(
    frames: &[Image],
    cfg_first: &TrainConfig,
    cfg_rest: &TrainConfig,
    mut model: DisplacementModel<T>,
) -> Result<Vec<PairResult<T>>> {
    if frames.len() < 2 {
        return Err(Error::NotEnoughData(format!(
            "a sequence needs at least 2 frames, got {}",
            frames.len()
        )));
    }
    for pair in frames.windows(2) {
        check_pair(&pair[0], &pair[1])?;
    }
    cfg_first.validate()?;
    cfg_rest.validate()?;
    let cache = maybe_cache(&model, &frames[0]);
    let mut out = Vec::with_capacity(frames.len() - 1);
    for (k, pair) in frames.windows(2).enumerate() {
        let mut cfg = if k == 0 { *cfg_first } else { *cfg_rest };
        cfg.seed = cfg.seed.wrapping_add(k as u64);
        let report = run_epochs(&mut model, &pair[0], &pair[1], &cfg, cache.as_ref())?;
        out.push(PairResult {
            model: model.clone(),
            report,
        });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub members: usize,
    pub divergence_factor: f64,
    /// Embed coordinates normalized by the image size.
    pub normalize_coords: bool,
    /// Member `i` uses seed `cfg.seed + i * seed_stride`; zero repeats one run.
    pub seed_stride: u64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            members: 10,
            divergence_factor: DEFAULT_DIVERGENCE_FACTOR,
            normalize_coords: false,
            seed_stride: 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EnsembleMember<T> {
    pub seed: u64,
    pub model: DisplacementModel<T>,
    pub report: TrainReport,
}

#[derive(Clone, Debug)]
pub struct EnsembleResult<T> {
    pub members: Vec<EnsembleMember<T>>,
    /// Mean over converged members.
    pub mean: FieldGrid,
    /// Population standard deviation over converged members.
    pub std: FieldGrid,
    pub converged: Vec<bool>,
}

impl<T> EnsembleResult<T> {
    pub fn excluded(&self) -> Vec<usize> {
        self.converged
            .iter()
            .enumerate()
            .filter(|(_, &c)| !c)
            .map(|(i, _)| i)
            .collect()
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// `true` for runs with a finite final loss no larger than `factor` times
/// the median final loss.
pub fn convergence_mask(final_losses: &[f64], factor: f64) -> Vec<bool> {
    let mut finite: Vec<f64> = final_losses.iter().copied().filter(|l| l.is_finite()).collect();
    if finite.is_empty() {
        return vec![false; final_losses.len()];
    }
    let threshold = factor * median(&mut finite);
    final_losses
        .iter()
        .map(|&l| l.is_finite() && l <= threshold)
        .collect()
}

/// Trains `ens.members` models with seeds `cfg.seed + i * ens.seed_stride`;
/// each seed drives the embedding, the weights and the batch order.
pub fn train_members<T: Real>(
    first: &Image,
    second: &Image,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    ens: &EnsembleConfig,
) -> Result<Vec<EnsembleMember<T>>> {
    check_pair(first, second)?;
    cfg.validate()?;
    model_cfg.validate()?;
    (0..ens.members)
        .into_par_iter()
        .map(|i| {
            let seed = cfg.seed.wrapping_add((i as u64).wrapping_mul(ens.seed_stride));
            let mut model = DisplacementModel::init(*model_cfg, seed)?;
            if ens.normalize_coords {
                model.normalize_coordinates(first.width(), first.height());
            }
            let member_cfg = TrainConfig { seed, ..*cfg };
            let report = train_pair(&mut model, first, second, &member_cfg)?;
            Ok(EnsembleMember { seed, model, report })
        })
        .collect()
}

/// Applies the divergence filter and reduces the converged members to mean
/// and standard-deviation fields on `xs x ys`.
pub fn summarize_ensemble<T: Real>(
    members: Vec<EnsembleMember<T>>,
    xs: &[f64],
    ys: &[f64],
    divergence_factor: f64,
) -> Result<EnsembleResult<T>> {
    let losses: Vec<f64> = members
        .iter()
        .map(|m| if m.report.diverged { f64::INFINITY } else { m.report.final_loss })
        .collect();
    let converged = convergence_mask(&losses, divergence_factor);
    let kept: Vec<FieldGrid> = members
        .iter()
        .zip(&converged)
        .filter(|(_, &c)| c)
        .map(|(m, _)| sample_grid(&m.model, xs, ys))
        .collect();
    if kept.is_empty() {
        return Err(Error::Diverged("every ensemble member diverged".into()));
    }
    let n = kept.len() as f64;
    let len = kept[0].len();
    let mut mean = FieldGrid::from_fn(xs.to_vec(), ys.to_vec(), |_, _| [0.0; 2]);
    let mut std = mean.clone();
    for i in 0..len {
        let mu = kept.iter().map(|g| g.u[i]).sum::<f64>() / n;
        let mv = kept.iter().map(|g| g.v[i]).sum::<f64>() / n;
        mean.u[i] = mu;
        mean.v[i] = mv;
        std.u[i] = (kept.iter().map(|g| (g.u[i] - mu).powi(2)).sum::<f64>() / n).sqrt();
        std.v[i] = (kept.iter().map(|g| (g.v[i] - mv).powi(2)).sum::<f64>() / n).sqrt();
    }
    Ok(EnsembleResult {
        members,
        mean,
        std,
        converged,
    })
}

/// [`train_members`] followed by [`summarize_ensemble`].
pub fn ensemble_train<T: Real>(
    first: &Image,
    second: &Image,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    ens: &EnsembleConfig,
    xs: &[f64],
    ys: &[f64],
) -> Result<EnsembleResult<T>> {
    if ens.members < 2 {
        return Err(Error::InvalidConfig(format!(
            "an ensemble needs at least 2 members, got {}",
            ens.members
        )));
    }
    let members = train_members(first, second, model_cfg, cfg, ens)?;
    summarize_ensemble(members, xs, ys, ens.divergence_factor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::axis;

    fn small_model(seed: u64) -> DisplacementModel<f32> {
        DisplacementModel::init(
            ModelConfig {
                beta: 20.0,
                n_embed: 8,
                n_layers: 1,
                layer_size: 8,
            },
            seed,
        )
        .unwrap()
    }

    fn texture(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, |x, y| {
            let (x, y) = (x as f32, y as f32);
            0.5 + 0.25 * (0.9 * x).sin() * (0.7 * y).cos() + 0.2 * (0.31 * x + 0.53 * y).sin()
        })
    }

    #[test]
    fn identical_images_zero_head_stays_still() {
        let img = texture(24, 20);
        let mut model = small_model(1);
        let head = model.params_mut().layers.last_mut().unwrap();
        head.weights.iter_mut().for_each(|w| *w = 0.0);
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 100,
            ..Default::default()
        };
        let report = train_pair(&mut model, &img, &img, &cfg).unwrap();
        assert_eq!(report.epochs_run(), 5);
        assert!(!report.diverged);
        assert!(report.loss_per_epoch.iter().all(|&l| l < 1e-8));
        let field = sample_grid(&model, &axis(0.0, 1.0, 24), &axis(0.0, 1.0, 20));
        assert!(field.max_magnitude() < 1e-3);
    }

    #[test]
    fn deterministic_runs_repeat_exactly() {
        let a = texture(30, 30);
        let b = Image::from_fn(30, 30, |x, y| a.get_or_zero(x as isize - 1, y as isize));
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 128,
            seed: 5,
            deterministic: true,
            ..Default::default()
        };
        let mut m1 = small_model(2);
        let mut m2 = small_model(2);
        let r1 = train_pair(&mut m1, &a, &b, &cfg).unwrap();
        let r2 = train_pair(&mut m2, &a, &b, &cfg).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(r1.loss_per_epoch, r2.loss_per_epoch);
        assert_eq!(r1.final_loss, r2.final_loss);
    }

    #[test]
    fn mismatched_images_rejected() {
        let mut m = small_model(1);
        let r = train_pair(&mut m, &texture(8, 8), &texture(9, 8), &TrainConfig::default());
        assert!(matches!(r, Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn divergence_restores_finite_parameters() {
        let a = texture(16, 16);
        let b = Image::from_fn(16, 16, |x, y| a.get(15 - x, y));
        let mut model = small_model(3);
        let cfg = TrainConfig {
            lr: 1e300,
            epochs: 4,
            batch_size: 64,
            ..Default::default()
        };
        let report = train_pair(&mut model, &a, &b, &cfg).unwrap();
        assert!(report.diverged);
        assert!(report.epochs_run() < 4);
        assert!(model.params().is_finite());
    }

    #[test]
    fn static_sequence_keeps_embedding() {
        let f = texture(20, 16);
        let frames = vec![f.clone(), f.clone(), f];
        let mut model = small_model(4);
        model.params_mut().layers.last_mut().unwrap().weights.fill(0.0);
        let b0 = model.embedding().clone();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 64,
            ..Default::default()
        };
        let out = train_sequence(&frames, &cfg, &cfg, model).unwrap();
        assert_eq!(out.len(), 2);
        for pair in &out {
            assert_eq!(pair.model.embedding(), &b0);
            assert!(pair.report.final_loss < 1e-8);
        }
        assert!(train_sequence(&frames[..1], &cfg, &cfg, small_model(1)).is_err());
    }

    #[test]
    fn mask_excludes_inflated_loss() {
        let mask = convergence_mask(&[1.0, 1.2, 0.9, 25.0, 1.1], 10.0);
        assert_eq!(mask, vec![true, true, true, false, true]);
        let mask = convergence_mask(&[1.0, f64::NAN, 2.0], 10.0);
        assert_eq!(mask, vec![true, false, true]);
        assert_eq!(convergence_mask(&[f64::INFINITY; 2], 10.0), vec![false, false]);
    }

    #[test]
    fn ensemble_needs_two_members() {
        let img = texture(8, 8);
        let ens = EnsembleConfig {
            members: 1,
            ..Default::default()
        };
        let r = ensemble_train::<f32>(&img, &img, &ModelConfig::default(), &TrainConfig::default(), &ens, &[0.0], &[0.0]);
        assert!(matches!(r, Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn identical_seed_members_have_zero_spread() {
        let img = texture(12, 12);
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 50,
            ..Default::default()
        };
        let member = || {
            let mut model = small_model(9);
            let report = train_pair(&mut model, &img, &img, &cfg).unwrap();
            EnsembleMember { seed: 9, model, report }
        };
        let xs = axis(0.0, 1.0, 12);
        let res = summarize_ensemble(vec![member(), member()], &xs, &xs, 10.0).unwrap();
        let single = sample_grid(&res.members[0].model, &xs, &xs);
        assert_eq!(res.mean, single);
        assert!(res.std.u.iter().chain(&res.std.v).all(|&s| s == 0.0));
    }
}
