//! Frame cleanup applied before estimation: background removal, a 3x3
//! Gaussian blur and contrast-limited adaptive histogram equalization.

use super::{clamp_unit, quantize_u8, Image};
use crate::error::{Error, Result};

pub const DEFAULT_CLAHE_TILES: usize = 8;
pub const DEFAULT_CLAHE_CLIP_LIMIT: f64 = 2.0;

const BINS: usize = 256;

/// Subtracts the per-pixel temporal minimum from every frame.
pub fn subtract_background(frames: &[Image]) -> Result<Vec<Image>> {
    if frames.len() < 2 {
        return Err(Error::NotEnoughData(format!(
            "background removal needs at least 2 frames, got {}",
            frames.len()
        )));
    }
    let first = &frames[0];
    if let Some(bad) = frames.iter().find(|f| !f.same_dims(first)) {
        return Err(Error::DimensionMismatch(format!(
            "frame is {}x{}, expected {}x{}",
            bad.width(),
            bad.height(),
            first.width(),
            first.height()
        )));
    }
    let mut background = first.data().to_vec();
    for frame in &frames[1..] {
        for (b, &v) in background.iter_mut().zip(frame.data()) {
            *b = b.min(v);
        }
    }
    Ok(frames
        .iter()
        .map(|frame| Image {
            width: frame.width,
            height: frame.height,
            data: frame
                .data()
                .iter()
                .zip(&background)
                .map(|(&v, &b)| clamp_unit(v - b))
                .collect(),
        })
        .collect())
}

/// Half-sample symmetric index reflection: -1 -> 0, n -> n-1.
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut i = i.rem_euclid(period);
    if i >= n {
        i = period - 1 - i;
    }
    i as usize
}

/// Convolution with the binomial kernel `[1 2 1; 2 4 2; 1 2 1] / 16`.
pub fn gaussian_filter_3x3(img: &Image) -> Image {
    const K: [f32; 3] = [1.0, 2.0, 1.0];
    let (w, h) = img.dims();
    // separable: rows then columns
    let mut rows = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, dx) in K.iter().zip(-1isize..=1) {
                acc += k * img.get(reflect(x as isize + dx, w), y);
            }
            rows[y * w + x] = acc / 4.0;
        }
    }
    let mut data = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, dy) in K.iter().zip(-1isize..=1) {
                acc += k * rows[reflect(y as isize + dy, h) * w + x];
            }
            data[y * w + x] = clamp_unit(acc / 4.0);
        }
    }
    Image {
        width: w,
        height: h,
        data,
    }
}

/// Splits `len` into `tiles` contiguous ranges and returns their start
/// offsets plus a final `len`.
fn tile_edges(len: usize, tiles: usize) -> Vec<usize> {
    (0..=tiles).map(|i| i * len / tiles).collect()
}

fn tile_mapping(img: &Image, xs: (usize, usize), ys: (usize, usize), clip_limit: f64) -> [f32; BINS] {
    let mut hist = [0.0f64; BINS];
    for y in ys.0..ys.1 {
        for x in xs.0..xs.1 {
            hist[quantize_u8(img.get(x, y)) as usize] += 1.0;
        }
    }
    let total = ((xs.1 - xs.0) * (ys.1 - ys.0)) as f64;
    if clip_limit.is_finite() {
        let clip = clip_limit * total / BINS as f64;
        let mut excess = 0.0;
        for h in hist.iter_mut() {
            if *h > clip {
                excess += *h - clip;
                *h = clip;
            }
        }
        let share = excess / BINS as f64;
        for h in hist.iter_mut() {
            *h += share;
        }
    }
    let mut map = [0.0f32; BINS];
    let mut cdf = 0.0;
    for (m, h) in map.iter_mut().zip(hist) {
        cdf += h;
        *m = clamp_unit((cdf / total) as f32);
    }
    map
}

/// Index of the lower neighbouring tile center and the blend weight toward
/// the upper one.
fn blend(pos: usize, centers: &[f64]) -> (usize, usize, f32) {
    let p = pos as f64;
    let last = centers.len() - 1;
    if p <= centers[0] {
        return (0, 0, 0.0);
    }
    if p >= centers[last] {
        return (last, last, 0.0);
    }
    let i = centers.partition_point(|&c| c <= p) - 1;
    let t = (p - centers[i]) / (centers[i + 1] - centers[i]);
    (i, i + 1, t as f32)
}

/// Contrast-limited adaptive histogram equalization on a `tiles x tiles`
/// grid. `clip_limit` is relative to a flat histogram; pass
/// `f64::INFINITY` to disable clipping.
pub fn clahe(img: &Image, tiles: usize, clip_limit: f64) -> Result<Image> {
    if tiles == 0 {
        return Err(Error::InvalidConfig("CLAHE needs at least one tile".into()));
    }
    if clip_limit.is_nan() || clip_limit <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "CLAHE clip limit must be positive, got {clip_limit}"
        )));
    }
    let (w, h) = img.dims();
    if w < tiles || h < tiles {
        return Err(Error::InvalidImage(format!(
            "{w}x{h} image is smaller than the {tiles}x{tiles} tile grid"
        )));
    }
    let xe = tile_edges(w, tiles);
    let ye = tile_edges(h, tiles);
    let center = |e: &[usize], i: usize| (e[i] + e[i + 1] - 1) as f64 / 2.0;
    let xc: Vec<f64> = (0..tiles).map(|i| center(&xe, i)).collect();
    let yc: Vec<f64> = (0..tiles).map(|i| center(&ye, i)).collect();

    let maps: Vec<[f32; BINS]> = (0..tiles)
        .flat_map(|ty| (0..tiles).map(move |tx| (tx, ty)))
        .map(|(tx, ty)| tile_mapping(img, (xe[tx], xe[tx + 1]), (ye[ty], ye[ty + 1]), clip_limit))
        .collect();

    let xblend: Vec<_> = (0..w).map(|x| blend(x, &xc)).collect();
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        let (y0, y1, ty) = blend(y, &yc);
        for (x, &(x0, x1, tx)) in xblend.iter().enumerate() {
            let bin = quantize_u8(img.get(x, y)) as usize;
            let m = |ix: usize, iy: usize| maps[iy * tiles + ix][bin];
            let top = m(x0, y0) * (1.0 - tx) + m(x1, y0) * tx;
            let bottom = m(x0, y1) * (1.0 - tx) + m(x1, y1) * tx;
            data.push(clamp_unit(top * (1.0 - ty) + bottom * ty));
        }
    }
    Ok(Image {
        width: w,
        height: h,
        data,
    })
}
