//! The continuous displacement field: a random Fourier-feature embedding of
//! the pixel coordinate followed by a fully connected `tanh` network whose
//! affine head outputs `(dx, dy)` in pixels.

mod io;

pub(crate) mod io_support {
    pub(crate) use super::io::{check_magic, Reader};
}

pub use io::{decode_model, encode_model, load_model, save_model, MODEL_HEADER_BYTES, MODEL_MAGIC};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

/// Architecture hyper-parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Embedding scale: entries of `B` have standard deviation `1 / beta`.
    pub beta: f32,
    /// Number of Fourier features (embedding width is twice this).
    pub n_embed: usize,
    /// Number of hidden `tanh` layers.
    pub n_layers: usize,
    /// Width of each hidden layer.
    pub layer_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            beta: 100.0,
            n_embed: 200,
            n_layers: 1,
            layer_size: 100,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "beta must be positive, got {}",
                self.beta
            )));
        }
        for (name, v) in [
            ("n_embed", self.n_embed),
            ("n_layers", self.n_layers),
            ("layer_size", self.layer_size),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }

    /// `[2 * n_embed, layer_size, ..., layer_size, 2]`.
    pub fn layer_widths(&self) -> Vec<usize> {
        let mut widths = Vec::with_capacity(self.n_layers + 2);
        widths.push(2 * self.n_embed);
        widths.extend(std::iter::repeat_n(self.layer_size, self.n_layers));
        widths.push(2);
        widths
    }

    /// Scalars needed to store the model: `B` plus every weight and bias.
    pub fn param_count(&self) -> usize {
        let widths = self.layer_widths();
        2 * self.n_embed
            + widths
                .windows(2)
                .map(|w| w[0] * w[1] + w[1])
                .sum::<usize>()
    }
}

/// The fixed `n_embed x 2` Gaussian matrix mapping coordinates to phases.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix<T> {
    rows: Vec<[T; 2]>,
}

impl<T: Real> EmbeddingMatrix<T> {
    pub fn from_rows(rows: Vec<[T; 2]>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Shape("embedding matrix has no rows".into()));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Shape("embedding matrix has non-finite entries".into()));
        }
        Ok(EmbeddingMatrix { rows })
    }

    pub fn rows(&self) -> &[[T; 2]] {
        &self.rows
    }

    pub fn n_embed(&self) -> usize {
        self.rows.len()
    }

    /// Writes `[sin(Bv), cos(Bv)]` into `out` (length `2 * n_embed`).
    /// Phases are formed in `f64`.
    #[inline]
    pub fn embed_into(&self, x: f64, y: f64, out: &mut [T]) {
        let ne = self.rows.len();
        let (sin, cos) = out.split_at_mut(ne);
        for ((row, s), c) in self.rows.iter().zip(sin).zip(cos) {
            let phase = row[0].as_f64() * x + row[1].as_f64() * y;
            let (ps, pc) = phase.sin_cos();
            *s = T::from_f64_lossy(ps);
            *c = T::from_f64_lossy(pc);
        }
    }

    fn cast<U: Real>(&self) -> EmbeddingMatrix<U> {
        EmbeddingMatrix {
            rows: self
                .rows
                .iter()
                .map(|r| [U::from_f64_lossy(r[0].as_f64()), U::from_f64_lossy(r[1].as_f64())])
                .collect(),
        }
    }
}

/// One affine layer: `out = in . weights + biases`, weights row-major
/// `fan_in x fan_out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: Vec<T>,
    pub biases: Vec<T>,
}

impl<T: Real> Dense<T> {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Dense {
            fan_in,
            fan_out,
            weights: vec![T::zero(); fan_in * fan_out],
            biases: vec![T::zero(); fan_out],
        }
    }

    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> T {
        self.weights[i * self.fan_out + j]
    }

    fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.biases).all(|v| v.is_finite())
    }
}

/// Weights and biases of every layer, hidden layers first.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams<T> {
    pub layers: Vec<Dense<T>>,
}

impl<T: Real> NetworkParams<T> {
    pub fn zeros_like(widths: &[usize]) -> Self {
        NetworkParams {
            layers: widths.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        }
    }

    pub fn shape(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| (l.fan_in, l.fan_out)).collect()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shape() == other.shape()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Dense::is_finite)
    }

    pub fn scalar_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    /// Every scalar in storage order (per layer: weights then biases).
    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.biases))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
    }

    pub fn fill_zero(&mut self) {
        self.iter_mut().for_each(|v| *v = T::zero());
    }
}

/// `(x, y) -> (dx, dy)` in pixels, evaluable anywhere in the plane.
#[derive(Clone, Debug, PartialEq)]
pub struct DisplacementModel<T = f32> {
    config: ModelConfig,
    embedding: EmbeddingMatrix<T>,
    params: NetworkParams<T>,
}

/// Standard normal pair via the Box-Muller transform.
fn box_muller(rng: &mut impl Rng) -> (f64, f64) {
    // 1 - u keeps the log argument in (0, 1]
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen::<f64>();
    let r = (-2.0 * u1.ln()).sqrt();
    let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
    (r * c, r * s)
}

impl<T: Real> DisplacementModel<T> {
    /// Samples `B ~ N(0, 1/beta^2)` and uniform fan-scaled weights with zero
    /// biases, all from one seeded stream.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = 1.0 / config.beta as f64;
        let mut normals = Vec::with_capacity(2 * config.n_embed);
        while normals.len() < 2 * config.n_embed {
            let (a, b) = box_muller(&mut rng);
            normals.push(a);
            normals.push(b);
        }
        let rows = normals
            .chunks_exact(2)
            .take(config.n_embed)
            .map(|c| [T::from_f64_lossy(c[0] * std), T::from_f64_lossy(c[1] * std)])
            .collect();

        let widths = config.layer_widths();
        let mut params = NetworkParams::zeros_like(&widths);
        for layer in &mut params.layers {
            let limit = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
            for w in &mut layer.weights {
                *w = T::from_f64_lossy(rng.gen_range(-limit..=limit));
            }
        }
        Ok(DisplacementModel {
            config,
            embedding: EmbeddingMatrix { rows },
            params,
        })
    }

    /// Assembles a model from parts, checking that the shapes agree with
    /// `config`.
    pub fn from_parts(
        config: ModelConfig,
        embedding: EmbeddingMatrix<T>,
        params: NetworkParams<T>,
    ) -> Result<Self> {
        config.validate()?;
        if embedding.n_embed() != config.n_embed {
            return Err(Error::Shape(format!(
                "embedding has {} rows, config says {}",
                embedding.n_embed(),
                config.n_embed
            )));
        }
        let widths = config.layer_widths();
        let expected: Vec<_> = widths.windows(2).map(|w| (w[0], w[1])).collect();
        if params.shape() != expected {
            return Err(Error::Shape(format!(
                "layer shapes {:?} do not match config {:?}",
                params.shape(),
                expected
            )));
        }
        for l in &params.layers {
            if l.weights.len() != l.fan_in * l.fan_out || l.biases.len() != l.fan_out {
                return Err(Error::Shape("layer buffer lengths disagree with fan sizes".into()));
            }
        }
        if !params.is_finite() {
            return Err(Error::Shape("network parameters are not finite".into()));
        }
        Ok(DisplacementModel {
            config,
            embedding,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn embedding(&self) -> &EmbeddingMatrix<T> {
        &self.embedding
    }

    pub fn params(&self) -> &NetworkParams<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut NetworkParams<T> {
        &mut self.params
    }

    pub fn set_params(&mut self, params: NetworkParams<T>) {
        assert!(
            self.params.same_shape(&params),
            "parameter shapes must not change"
        );
        self.params = params;
    }

    /// Rescales the embedding so that raw pixel coordinates are embedded as
    /// if they had first been normalized to `[0, 1]` by `(width, height)`.
    pub fn normalize_coordinates(&mut self, width: usize, height: usize) {
        let (sx, sy) = (T::from_f64_lossy(1.0 / width as f64), T::from_f64_lossy(1.0 / height as f64));
        for row in &mut self.embedding.rows {
            row[0] = row[0] * sx;
            row[1] = row[1] * sy;
        }
    }

    /// Same model in another precision.
    pub fn cast<U: Real>(&self) -> DisplacementModel<U> {
        DisplacementModel {
            config: self.config,
            embedding: self.embedding.cast(),
            params: NetworkParams {
                layers: self
                    .params
                    .layers
                    .iter()
                    .map(|l| Dense {
                        fan_in: l.fan_in,
                        fan_out: l.fan_out,
                        weights: l.weights.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect(),
                        biases: l.biases.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect(),
                    })
                    .collect(),
            },
        }
    }

    /// Fourier features `[sin(Bv), cos(Bv)]` of a raw pixel coordinate.
    pub fn embed(&self, x: f64, y: f64) -> Vec<T> {
        let mut out = vec![T::zero(); 2 * self.config.n_embed];
        self.embedding.embed_into(x, y, &mut out);
        out
    }

    /// Displacement at one coordinate.
    pub fn forward(&self, x: f64, y: f64) -> [T; 2] {
        self.forward_batch(&[[x, y]])[0]
    }

    /// Displacements at many coordinates; identical to calling `forward`
    /// on each.
    pub fn forward_batch(&self, coords: &[[f64; 2]]) -> Vec<[T; 2]> {
        let mut ws = Activations::default();
        self.forward_into(coords, &mut ws);
        ws.output()
            .chunks_exact(2)
            .map(|c| [c[0], c[1]])
            .collect()
    }

    /// Runs the network, keeping every layer's activations in `ws`.
    pub(crate) fn forward_into(&self, coords: &[[f64; 2]], ws: &mut Activations<T>) {
        let width = 2 * self.config.n_embed;
        ws.prepare(coords.len(), &self.config.layer_widths());
        let emb = &mut ws.layers[0];
        for (c, out) in coords.iter().zip(emb.chunks_exact_mut(width)) {
            self.embedding.embed_into(c[0], c[1], out);
        }
        self.propagate(ws);
    }

    /// Forward pass from `ws.layers[0]`, which must already hold the
    /// embedding rows of `ws.rows` samples.
    pub(crate) fn propagate(&self, ws: &mut Activations<T>) {
        let n = ws.rows;
        let last = self.params.layers.len() - 1;
        for (i, layer) in self.params.layers.iter().enumerate() {
            let (before, after) = ws.layers.split_at_mut(i + 1);
            let input = &before[i];
            let out = &mut after[0];
            let (k, m) = (layer.fan_in, layer.fan_out);
            for row in out.chunks_exact_mut(m) {
                row.copy_from_slice(&layer.biases);
            }
            T::gemm(n, k, m, T::one(), input, (k, 1), &layer.weights, (m, 1), T::one(), out, (m, 1));
            if i < last {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
        }
    }

    /// Analytic `d(dx, dy)/d(x, y)` as `[[ddx/dx, ddx/dy], [ddy/dx, ddy/dy]]`.
    pub fn jacobian(&self, x: f64, y: f64) -> [[T; 2]; 2] {
        let ne = self.config.n_embed;
        let emb = self.embed(x, y);
        // tangents for d/dx and d/dy carried side by side
        let mut act = emb.clone();
        let mut tan: Vec<[T; 2]> = (0..2 * ne)
            .map(|k| {
                let row = self.embedding.rows[k % ne];
                let d = if k < ne { emb[k + ne] } else { -emb[k - ne] };
                [d * row[0], d * row[1]]
            })
            .collect();
        let last = self.params.layers.len() - 1;
        for (i, layer) in self.params.layers.iter().enumerate() {
            let mut z = layer.biases.clone();
            let mut dz = vec![[T::zero(); 2]; layer.fan_out];
            for (p, (&a, t)) in act.iter().zip(&tan).enumerate() {
                for j in 0..layer.fan_out {
                    let w = layer.weight(p, j);
                    z[j] = z[j] + a * w;
                    dz[j][0] = dz[j][0] + t[0] * w;
                    dz[j][1] = dz[j][1] + t[1] * w;
                }
            }
            if i < last {
                for (zj, dj) in z.iter_mut().zip(dz.iter_mut()) {
                    *zj = zj.tanh();
                    let s = T::one() - *zj * *zj;
                    dj[0] = dj[0] * s;
                    dj[1] = dj[1] * s;
                }
            }
            act = z;
            tan = dz;
        }
        [[tan[0][0], tan[0][1]], [tan[1][0], tan[1][1]]]
    }
}

/// Per-layer activation buffers for a batch, row-major `rows x width`.
#[derive(Debug, Default)]
pub(crate) struct Activations<T> {
    pub rows: usize,
    pub layers: Vec<Vec<T>>,
}

impl<T: Real> Activations<T> {
    pub fn prepare(&mut self, rows: usize, widths: &[usize]) {
        self.rows = rows;
        self.layers.resize_with(widths.len(), Vec::new);
        for (buf, &w) in self.layers.iter_mut().zip(widths) {
            buf.resize(rows * w, T::zero());
        }
    }

    pub fn output(&self) -> &[T] {
        self.layers.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Parameter count for `config`; see [`ModelConfig::param_count`].
pub fn param_count(config: &ModelConfig) -> usize {
    config.param_count()
}
