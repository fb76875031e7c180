//! Bilinear sampling with zero padding, the photometric warp loss and its
//! exact gradient with respect to the network parameters.
//!
//! For a batch of pixel centers `v_i` of the first image the loss is
//! `mean_i (I1(v_i) - I2(v_i + d(v_i)))^2`. The embedding matrix is fixed,
//! so gradients cover weights and biases only.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::{Activations, DisplacementModel, NetworkParams};
use crate::real::Real;

/// Rows per independently reduced chunk in deterministic mode.
pub const DETERMINISTIC_CHUNK: usize = 2048;

#[inline]
fn corners(img: &Image, x: f64, y: f64) -> Option<(f64, f64, [f64; 4])> {
    if !(x.is_finite() && y.is_finite()) {
        return None;
    }
    let (w, h) = (img.width() as f64, img.height() as f64);
    // every neighbour outside: nothing to read
    if x <= -1.0 || y <= -1.0 || x >= w || y >= h {
        return None;
    }
    let (xf, yf) = (x.floor(), y.floor());
    let (x0, y0) = (xf as isize, yf as isize);
    let v = [
        img.get_or_zero(x0, y0) as f64,
        img.get_or_zero(x0 + 1, y0) as f64,
        img.get_or_zero(x0, y0 + 1) as f64,
        img.get_or_zero(x0 + 1, y0 + 1) as f64,
    ];
    Some((x - xf, y - yf, v))
}

/// Bilinear interpolation between the four surrounding pixel centers;
/// neighbours outside the image count as 0.
pub fn bilinear_sample(img: &Image, x: f64, y: f64) -> f64 {
    match corners(img, x, y) {
        None => 0.0,
        Some((fx, fy, [v00, v10, v01, v11])) => {
            (1.0 - fx) * (1.0 - fy) * v00 + fx * (1.0 - fy) * v10 + (1.0 - fx) * fy * v01 + fx * fy * v11
        }
    }
}

/// Derivative of the bilinear surface, `(dI/dx, dI/dy)`. On lattice lines
/// the cell to the right/below is used.
pub fn sample_gradient(img: &Image, x: f64, y: f64) -> (f64, f64) {
    let (_, gx, gy) = sample_with_gradient(img, x, y);
    (gx, gy)
}

/// Value and gradient in one lookup.
#[inline]
pub fn sample_with_gradient(img: &Image, x: f64, y: f64) -> (f64, f64, f64) {
    match corners(img, x, y) {
        None => (0.0, 0.0, 0.0),
        Some((fx, fy, [v00, v10, v01, v11])) => {
            let value = (1.0 - fx) * (1.0 - fy) * v00
                + fx * (1.0 - fy) * v10
                + (1.0 - fx) * fy * v01
                + fx * fy * v11;
            let gx = (1.0 - fy) * (v10 - v00) + fy * (v11 - v01);
            let gy = (1.0 - fx) * (v01 - v00) + fx * (v11 - v10);
            (value, gx, gy)
        }
    }
}

/// Second image sampled at the displaced position `v + d(v)`.
pub fn deformed_intensity<T: Real>(model: &DisplacementModel<T>, second: &Image, x: f64, y: f64) -> f64 {
    let d = model.forward(x, y);
    bilinear_sample(second, x + d[0].as_f64(), y + d[1].as_f64())
}

/// Pixel coordinates and their first-image intensities.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PixelBatch {
    pub coords: Vec<[f64; 2]>,
    pub targets: Vec<f64>,
}

impl PixelBatch {
    /// The listed pixels of `first` (flat row-major indices).
    pub fn from_indices(first: &Image, indices: &[usize]) -> Self {
        let w = first.width();
        PixelBatch {
            coords: indices
                .iter()
                .map(|&i| [(i % w) as f64, (i / w) as f64])
                .collect(),
            targets: indices.iter().map(|&i| first.data()[i] as f64).collect(),
        }
    }

    /// Every pixel of `first` in row-major order.
    pub fn full(first: &Image) -> Self {
        let idx: Vec<usize> = (0..first.pixel_count()).collect();
        Self::from_indices(first, &idx)
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

/// Mean squared residual and its gradient, shaped like the network.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGradient<T> {
    pub loss: f64,
    pub grads: NetworkParams<T>,
}

/// Embedding rows precomputed for every pixel of an image, indexed by flat
/// pixel index. Valid as long as the model's embedding matrix is unchanged.
#[derive(Clone, Debug)]
pub struct EmbeddingCache<T> {
    width: usize,
    rows: usize,
    data: Vec<T>,
}

impl<T: Real> EmbeddingCache<T> {
    pub fn build(model: &DisplacementModel<T>, width: usize, height: usize) -> Self {
        let w = 2 * model.config().n_embed;
        let mut data = vec![T::zero(); width * height * w];
        data.par_chunks_mut(w).enumerate().for_each(|(i, row)| {
            model
                .embedding()
                .embed_into((i % width) as f64, (i / width) as f64, row);
        });
        EmbeddingCache {
            width: w,
            rows: width * height,
            data,
        }
    }

    pub fn row(&self, pixel: usize) -> &[T] {
        &self.data[pixel * self.width..(pixel + 1) * self.width]
    }

    pub fn pixels(&self) -> usize {
        self.rows
    }

    pub fn bytes(&self) -> usize {
        self.data.len() * std::mem::size_of::<T>()
    }
}

/// Where a chunk gets its first-layer input from.
#[derive(Clone, Copy)]
enum Inputs<'a, T> {
    Coords,
    Cached(&'a EmbeddingCache<T>, &'a [usize]),
}

#[derive(Debug, Default)]
struct ChunkState<T> {
    acts: Activations<T>,
    delta: Vec<T>,
    delta_prev: Vec<T>,
    grads: Option<NetworkParams<T>>,
}

/// Reusable buffers for repeated loss/gradient evaluations.
#[derive(Debug, Default)]
pub struct LossEngine<T> {
    states: Vec<ChunkState<T>>,
    deterministic: bool,
}

impl<T: Real> LossEngine<T> {
    /// With `deterministic` set, the batch is split into fixed-size chunks
    /// reduced in order, independent of the thread count. Otherwise chunks
    /// follow the thread pool size.
    pub fn new(deterministic: bool) -> Self {
        LossEngine {
            states: Vec::new(),
            deterministic,
        }
    }

    fn chunk_size(&self, n: usize) -> usize {
        if self.deterministic {
            DETERMINISTIC_CHUNK
        } else {
            n.div_ceil(rayon::current_num_threads()).max(256)
        }
    }

    pub fn loss_and_grad(
        &mut self,
        model: &DisplacementModel<T>,
        second: &Image,
        batch: &PixelBatch,
    ) -> Result<LossGradient<T>> {
        let mut grads = NetworkParams::zeros_like(&model.config().layer_widths());
        let loss = self.loss_and_grad_into(model, second, batch, &mut grads)?;
        Ok(LossGradient { loss, grads })
    }

    /// As [`loss_and_grad`](Self::loss_and_grad), reusing `grads`.
    pub fn loss_and_grad_into(
        &mut self,
        model: &DisplacementModel<T>,
        second: &Image,
        batch: &PixelBatch,
        grads: &mut NetworkParams<T>,
    ) -> Result<f64> {
        self.run(model, second, &batch.coords, &batch.targets, Inputs::Coords, grads)
    }

    /// Loss over the given pixels of `first`, using precomputed embeddings.
    /// Gradients are written into `grads`.
    pub(crate) fn loss_and_grad_cached(
        &mut self,
        model: &DisplacementModel<T>,
        cache: &EmbeddingCache<T>,
        first: &Image,
        second: &Image,
        pixels: &[usize],
        grads: &mut NetworkParams<T>,
    ) -> Result<f64> {
        let batch = PixelBatch::from_indices(first, pixels);
        self.run(
            model,
            second,
            &batch.coords,
            &batch.targets,
            Inputs::Cached(cache, pixels),
            grads,
        )
    }

    fn run(
        &mut self,
        model: &DisplacementModel<T>,
        second: &Image,
        coords: &[[f64; 2]],
        targets: &[f64],
        inputs: Inputs<'_, T>,
        grads: &mut NetworkParams<T>,
    ) -> Result<f64> {
        let n = coords.len();
        if n == 0 {
            return Err(Error::NotEnoughData("empty pixel batch".into()));
        }
        assert_eq!(n, targets.len(), "coords and targets must match");
        let chunk = self.chunk_size(n);
        let n_chunks = n.div_ceil(chunk);
        if self.states.len() < n_chunks {
            self.states.resize_with(n_chunks, ChunkState::default);
        }
        let sums: Vec<f64> = self.states[..n_chunks]
            .par_iter_mut()
            .enumerate()
            .map(|(c, state)| {
                let range = c * chunk..((c + 1) * chunk).min(n);
                let inputs = match inputs {
                    Inputs::Coords => Inputs::Coords,
                    Inputs::Cached(cache, px) => Inputs::Cached(cache, &px[range.clone()]),
                };
                chunk_gradient(model, second, &coords[range.clone()], &targets[range], inputs, state)
            })
            .collect();

        grads.fill_zero();
        let mut total = 0.0;
        for (state, sum) in self.states[..n_chunks].iter().zip(sums) {
            total += sum;
            let part = state.grads.as_ref().expect("chunk ran");
            for (g, p) in grads.iter_mut().zip(part.iter()) {
                *g = *g + *p;
            }
        }
        let scale = T::from_f64_lossy(1.0 / n as f64);
        grads.iter_mut().for_each(|g| *g = *g * scale);
        let loss = total / n as f64;
        if !loss.is_finite() {
            return Err(Error::Diverged(format!("loss is {loss}")));
        }
        Ok(loss)
    }
}

/// Sum of squared residuals over one chunk; the gradient of that sum lands
/// in `state.grads`.
fn chunk_gradient<T: Real>(
    model: &DisplacementModel<T>,
    second: &Image,
    coords: &[[f64; 2]],
    targets: &[f64],
    inputs: Inputs<'_, T>,
    state: &mut ChunkState<T>,
) -> f64 {
    let n = coords.len();
    let widths = model.config().layer_widths();
    let ws = &mut state.acts;
    match inputs {
        Inputs::Coords => model.forward_into(coords, ws),
        Inputs::Cached(cache, pixels) => {
            ws.prepare(n, &widths);
            let w = widths[0];
            for (dst, &p) in ws.layers[0].chunks_exact_mut(w).zip(pixels) {
                dst.copy_from_slice(cache.row(p));
            }
            model.propagate(ws);
        }
    }

    // d(sum r^2)/d(output) = -2 r grad(I2)
    let mut sum = 0.0;
    state.delta.clear();
    for ((c, &t), d) in coords.iter().zip(targets).zip(ws.output().chunks_exact(2)) {
        let (s, gx, gy) = sample_with_gradient(second, c[0] + d[0].as_f64(), c[1] + d[1].as_f64());
        let r = t - s;
        sum += r * r;
        state.delta.push(T::from_f64_lossy(-2.0 * r * gx));
        state.delta.push(T::from_f64_lossy(-2.0 * r * gy));
    }

    let params = model.params();
    let grads = state
        .grads
        .get_or_insert_with(|| NetworkParams::zeros_like(&widths));
    if !grads.same_shape(params) {
        *grads = NetworkParams::zeros_like(&widths);
    }
    for l in (0..params.layers.len()).rev() {
        let layer = &params.layers[l];
        let (k, m) = (layer.fan_in, layer.fan_out);
        let input = &ws.layers[l];
        let g = &mut grads.layers[l];
        // dW = input^T . delta
        T::gemm(k, n, m, T::one(), input, (1, k), &state.delta, (m, 1), T::zero(), &mut g.weights, (m, 1));
        g.biases.iter_mut().for_each(|b| *b = T::zero());
        for row in state.delta.chunks_exact(m) {
            for (b, &d) in g.biases.iter_mut().zip(row) {
                *b = *b + d;
            }
        }
        if l == 0 {
            break;
        }
        // delta_prev = (delta . W^T) * (1 - h^2)
        state.delta_prev.resize(n * k, T::zero());
        T::gemm(n, m, k, T::one(), &state.delta, (m, 1), &layer.weights, (1, m), T::zero(), &mut state.delta_prev, (k, 1));
        for (d, &h) in state.delta_prev.iter_mut().zip(input.iter()) {
            *d = *d * (T::one() - h * h);
        }
        std::mem::swap(&mut state.delta, &mut state.delta_prev);
    }
    sum
}

/// One-shot loss and gradient over `batch`.
pub fn loss_and_grad<T: Real>(
    model: &DisplacementModel<T>,
    second: &Image,
    batch: &PixelBatch,
) -> Result<LossGradient<T>> {
    LossEngine::new(true).loss_and_grad(model, second, batch)
}

/// Loss only, evaluated over every pixel of `first`.
pub fn full_image_loss<T: Real>(model: &DisplacementModel<T>, first: &Image, second: &Image) -> f64 {
    let batch = PixelBatch::full(first);
    let out = model.forward_batch(&batch.coords);
    let sum: f64 = batch
        .coords
        .iter()
        .zip(&batch.targets)
        .zip(&out)
        .map(|((c, &t), d)| {
            let r = t - bilinear_sample(second, c[0] + d[0].as_f64(), c[1] + d[1].as_f64());
            r * r
        })
        .sum();
    sum / batch.len() as f64
}
