//! Dense sampling of a trained field, error metrics against ground truth,
//! velocity conversion and vorticity.

mod io;

pub use io::{
    decode_field, encode_field, load_field, save_field, write_csv_grid, FIELD_HEADER_BYTES,
    FIELD_MAGIC,
};

use crate::error::{Error, Result};
use crate::image::SequenceMeta;
use crate::model::DisplacementModel;
use crate::real::Real;

/// Two-component field sampled on the tensor grid `xs x ys`; values are
/// row-major with `x` varying fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldGrid {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

/// Scalar companion of [`FieldGrid`], e.g. vorticity or a statistic.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarGrid {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl ScalarGrid {
    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.data[iy * self.width + ix]
    }
}

/// `n` coordinates `start, start + step, ...`.
pub fn axis(start: f64, step: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| start + step * i as f64).collect()
}

impl FieldGrid {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        let n = xs.len() * ys.len();
        if u.len() != n || v.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} grid needs {n} values per component, got {} and {}",
                xs.len(),
                ys.len(),
                u.len(),
                v.len()
            )));
        }
        if xs.iter().chain(&ys).chain(&u).chain(&v).any(|c| !c.is_finite()) {
            return Err(Error::Shape("field grid contains non-finite values".into()));
        }
        Ok(FieldGrid { xs, ys, u, v })
    }

    pub fn from_fn(xs: Vec<f64>, ys: Vec<f64>, mut f: impl FnMut(f64, f64) -> [f64; 2]) -> Self {
        let mut u = Vec::with_capacity(xs.len() * ys.len());
        let mut v = Vec::with_capacity(xs.len() * ys.len());
        for &y in &ys {
            for &x in &xs {
                let d = f(x, y);
                u.push(d[0]);
                v.push(d[1]);
            }
        }
        FieldGrid { xs, ys, u, v }
    }

    /// Zero field over the pixel centers of a `width x height` image.
    pub fn pixel_grid(width: usize, height: usize) -> Self {
        Self::from_fn(axis(0.0, 1.0, width), axis(0.0, 1.0, height), |_, _| [0.0; 2])
    }

    pub fn width(&self) -> usize {
        self.xs.len()
    }

    pub fn height(&self) -> usize {
        self.ys.len()
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn get(&self, ix: usize, iy: usize) -> [f64; 2] {
        let i = iy * self.width() + ix;
        [self.u[i], self.v[i]]
    }

    pub fn coords(&self) -> Vec<[f64; 2]> {
        self.ys
            .iter()
            .flat_map(|&y| self.xs.iter().map(move |&x| [x, y]))
            .collect()
    }

    pub fn same_grid(&self, other: &FieldGrid) -> bool {
        self.xs == other.xs && self.ys == other.ys
    }

    /// `(origin, spacing)` of an evenly spaced axis; single-sample axes get
    /// spacing 1.
    pub(crate) fn uniform_axis(coords: &[f64]) -> Result<(f64, f64)> {
        match coords {
            [] => Err(Error::Shape("empty grid axis".into())),
            [only] => Ok((*only, 1.0)),
            [first, second, ..] => {
                let step = second - first;
                let n = coords.len() - 1;
                let tol = 1e-9 * (step.abs() + first.abs() + coords[n].abs());
                if step == 0.0 || coords.iter().enumerate().any(|(i, &c)| (c - (first + step * i as f64)).abs() > tol) {
                    return Err(Error::Shape("grid axis is not uniformly spaced".into()));
                }
                Ok((*first, step))
            }
        }
    }

    pub fn max_magnitude(&self) -> f64 {
        self.u
            .iter()
            .zip(&self.v)
            .map(|(a, b)| a.hypot(*b))
            .fold(0.0, f64::max)
    }

    /// Per-sample magnitude as a scalar grid.
    pub fn magnitude(&self) -> ScalarGrid {
        ScalarGrid {
            width: self.width(),
            height: self.height(),
            data: self.u.iter().zip(&self.v).map(|(a, b)| a.hypot(*b)).collect(),
        }
    }
}

/// Evaluates the model on the tensor grid `xs x ys`; spacing may be finer
/// than a pixel.
pub fn sample_grid<T: Real>(model: &DisplacementModel<T>, xs: &[f64], ys: &[f64]) -> FieldGrid {
    let coords: Vec<[f64; 2]> = ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| [x, y]))
        .collect();
    let mut u = Vec::with_capacity(coords.len());
    let mut v = Vec::with_capacity(coords.len());
    // bounded batches keep the activation buffers small on large grids
    for chunk in coords.chunks(16_384) {
        for d in model.forward_batch(chunk) {
            u.push(d[0].as_f64());
            v.push(d[1].as_f64());
        }
    }
    FieldGrid {
        xs: xs.to_vec(),
        ys: ys.to_vec(),
        u,
        v,
    }
}

fn rmse_of(errors: impl Iterator<Item = (f64, f64)>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for (du, dv) in errors {
        sum += du * du + dv * dv;
        n += 1;
    }
    (sum / n as f64).sqrt()
}

/// `sqrt(mean(du^2 + dv^2))` over all samples.
pub fn rmse_dense(pred: &FieldGrid, truth: &FieldGrid) -> Result<f64> {
    if pred.width() != truth.width() || pred.height() != truth.height() {
        return Err(Error::DimensionMismatch(format!(
            "prediction is {}x{}, truth is {}x{}",
            pred.width(),
            pred.height(),
            truth.width(),
            truth.height()
        )));
    }
    if pred.is_empty() {
        return Err(Error::NotEnoughData("empty field".into()));
    }
    Ok(rmse_of(
        pred.u
            .iter()
            .zip(&pred.v)
            .zip(truth.u.iter().zip(&truth.v))
            .map(|((pu, pv), (tu, tv))| (pu - tu, pv - tv)),
    ))
}

/// RMSE of the model at scattered points, normalized by the point count.
pub fn rmse_at_points<T: Real>(
    model: &DisplacementModel<T>,
    points: &[[f64; 2]],
    truth: &[[f64; 2]],
) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::NotEnoughData("no evaluation points".into()));
    }
    if points.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} points but {} truth displacements",
            points.len(),
            truth.len()
        )));
    }
    let pred = model.forward_batch(points);
    Ok(rmse_of(
        pred.iter()
            .zip(truth)
            .map(|(p, t)| (p[0].as_f64() - t[0], p[1].as_f64() - t[1])),
    ))
}

/// Bilinear interpolation of a uniformly spaced grid; `None` outside it.
pub fn interpolate(grid: &FieldGrid, x: f64, y: f64) -> Result<Option<[f64; 2]>> {
    let (x0, dx) = FieldGrid::uniform_axis(&grid.xs)?;
    let (y0, dy) = FieldGrid::uniform_axis(&grid.ys)?;
    let (w, h) = (grid.width(), grid.height());
    let fx = (x - x0) / dx;
    let fy = (y - y0) / dy;
    let eps = 1e-9;
    if !(fx >= -eps && fy >= -eps && fx <= (w - 1) as f64 + eps && fy <= (h - 1) as f64 + eps) {
        return Ok(None);
    }
    let ix = (fx.floor().max(0.0) as usize).min(w.saturating_sub(2));
    let iy = (fy.floor().max(0.0) as usize).min(h.saturating_sub(2));
    let tx = if w > 1 { (fx - ix as f64).clamp(0.0, 1.0) } else { 0.0 };
    let ty = if h > 1 { (fy - iy as f64).clamp(0.0, 1.0) } else { 0.0 };
    let at = |i: usize, j: usize| grid.get(i.min(w - 1), j.min(h - 1));
    let (a, b, c, d) = (at(ix, iy), at(ix + 1, iy), at(ix, iy + 1), at(ix + 1, iy + 1));
    let mix = |k: usize| {
        a[k] * (1.0 - tx) * (1.0 - ty) + b[k] * tx * (1.0 - ty) + c[k] * (1.0 - tx) * ty + d[k] * tx * ty
    };
    Ok(Some([mix(0), mix(1)]))
}

/// RMSE of an interpolated field at scattered points inside its grid.
pub fn rmse_field_at_points(grid: &FieldGrid, points: &[[f64; 2]], truth: &[[f64; 2]]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::NotEnoughData("no evaluation points".into()));
    }
    if points.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} points but {} truth displacements",
            points.len(),
            truth.len()
        )));
    }
    let mut errors = Vec::with_capacity(points.len());
    for (p, t) in points.iter().zip(truth) {
        let v = interpolate(grid, p[0], p[1])?
            .ok_or_else(|| Error::Shape(format!("point ({}, {}) lies outside the field grid", p[0], p[1])))?;
        errors.push((v[0] - t[0], v[1] - t[1]));
    }
    Ok(rmse_of(errors.into_iter()))
}

/// Scales px/frame displacements to physical velocity, `C / dt * d`.
pub fn to_velocity(grid: &FieldGrid, meta: &SequenceMeta) -> Result<FieldGrid> {
    meta.validate()?;
    let s = meta.velocity_scale();
    Ok(FieldGrid {
        xs: grid.xs.clone(),
        ys: grid.ys.clone(),
        u: grid.u.iter().map(|v| v * s).collect(),
        v: grid.v.iter().map(|v| v * s).collect(),
    })
}

/// Derivative along one axis: central differences inside, one-sided at
/// the ends.
fn diff(n: usize, step: f64, at: impl Fn(usize) -> f64, i: usize) -> f64 {
    if i == 0 {
        (at(1) - at(0)) / step
    } else if i == n - 1 {
        (at(n - 1) - at(n - 2)) / step
    } else {
        (at(i + 1) - at(i - 1)) / (2.0 * step)
    }
}

/// `dv/dx - du/dy` on a uniformly spaced grid.
pub fn vorticity(grid: &FieldGrid) -> Result<ScalarGrid> {
    let (w, h) = (grid.width(), grid.height());
    if w < 2 || h < 2 {
        return Err(Error::NotEnoughData(format!(
            "vorticity needs at least 2x2 samples, got {w}x{h}"
        )));
    }
    let (_, dx) = FieldGrid::uniform_axis(&grid.xs)?;
    let (_, dy) = FieldGrid::uniform_axis(&grid.ys)?;
    let mut data = Vec::with_capacity(w * h);
    for iy in 0..h {
        for ix in 0..w {
            let dvdx = diff(w, dx, |k| grid.v[iy * w + k], ix);
            let dudy = diff(h, dy, |k| grid.u[k * w + ix], iy);
            data.push(dvdx - dudy);
        }
    }
    Ok(ScalarGrid {
        width: w,
        height: h,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use proptest::prelude::*;

    fn field(f: impl FnMut(f64, f64) -> [f64; 2]) -> FieldGrid {
        FieldGrid::from_fn(axis(0.0, 1.0, 12), axis(0.0, 1.0, 9), f)
    }

    #[test]
    fn sample_grid_matches_forward() {
        let m = DisplacementModel::<f32>::init(ModelConfig::default(), 3).unwrap();
        let g = sample_grid(&m, &axis(0.0, 1.0, 5), &axis(0.0, 1.0, 4));
        for iy in 0..4 {
            for ix in 0..5 {
                let d = m.forward(ix as f64, iy as f64);
                assert_eq!(g.get(ix, iy), [d[0] as f64, d[1] as f64]);
            }
        }
        let fine = sample_grid(&m, &axis(0.0, 0.5, 10), &axis(0.0, 0.5, 8));
        assert_eq!(fine.len(), 4 * g.len());
        let d = m.forward(1.5, 2.5);
        assert_eq!(fine.get(3, 5), [d[0] as f64, d[1] as f64]);

        let mut zero = m.clone();
        zero.params_mut().fill_zero();
        let z = sample_grid(&zero, &axis(0.0, 1.0, 5), &axis(0.0, 1.0, 4));
        assert!(z.u.iter().chain(&z.v).all(|&v| v == 0.0));
    }

    #[test]
    fn rmse_cases() {
        let a = field(|x, y| [x * 0.1, -y]);
        assert_eq!(rmse_dense(&a, &a).unwrap(), 0.0);
        let b = field(|x, y| [x * 0.1 + 0.3, -y + 0.4]);
        assert!((rmse_dense(&a, &b).unwrap() - 0.5).abs() < 1e-12);
        let small = FieldGrid::pixel_grid(3, 3);
        assert!(matches!(rmse_dense(&a, &small), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn rmse_at_points_cases() {
        let mut m = DisplacementModel::<f32>::init(ModelConfig::default(), 1).unwrap();
        m.params_mut().fill_zero();
        let pts = [[3.0, 4.0], [10.0, 1.0]];
        assert_eq!(rmse_at_points(&m, &pts, &[[0.0, 0.0]; 2]).unwrap(), 0.0);
        assert_eq!(rmse_at_points(&m, &pts[..1], &[[1.0, 0.0]]).unwrap(), 1.0);
        assert!(rmse_at_points(&m, &[], &[]).is_err());
        assert!(rmse_at_points(&m, &pts, &[[0.0, 0.0]]).is_err());
    }

    #[test]
    fn velocity_conversion() {
        let g = field(|_, _| [8.0, 0.0]);
        let meta = SequenceMeta::new(0.0125, 0.001).unwrap();
        let vel = to_velocity(&g, &meta).unwrap();
        assert!((vel.u[0] - 0.64).abs() < 1e-12);
        assert_eq!(vel.v[0], 0.0);
        let ident = to_velocity(&g, &SequenceMeta::new(1.0, 1.0).unwrap()).unwrap();
        assert_eq!(ident, g);
        let z = to_velocity(&FieldGrid::pixel_grid(4, 4), &meta).unwrap();
        assert!(z.u.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn vorticity_of_analytic_fields() {
        let uniform = vorticity(&field(|_, _| [2.0, -1.0])).unwrap();
        assert!(uniform.data.iter().all(|&w| w == 0.0));

        let w0 = 0.037;
        let (cx, cy) = (5.5, 4.0);
        let rot = vorticity(&field(|x, y| [-w0 * (y - cy), w0 * (x - cx)])).unwrap();
        for &w in &rot.data {
            assert!((w - 2.0 * w0).abs() / (2.0 * w0) < 1e-6);
        }

        let k = 0.25;
        let shear = vorticity(&FieldGrid::from_fn(axis(0.0, 0.5, 7), axis(-1.0, 0.5, 6), |_, y| [k * y, 0.0])).unwrap();
        for &w in &shear.data {
            assert!((w + k).abs() < 1e-12);
        }

        assert!(vorticity(&FieldGrid::pixel_grid(1, 5)).is_err());
        let uneven = FieldGrid::from_fn(vec![0.0, 1.0, 3.0], axis(0.0, 1.0, 3), |_, _| [0.0; 2]);
        assert!(vorticity(&uneven).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn rmse_symmetric_and_scales(seed in any::<u32>(), k in -5.0f64..5.0) {
            let s = seed as f64 * 1e-6;
            let a = field(|x, y| [(x + s).sin(), (y * s).cos()]);
            let b = field(|x, y| [(x * 0.7).cos() + s, y * 0.01]);
            let ab = rmse_dense(&a, &b).unwrap();
            prop_assert!((ab - rmse_dense(&b, &a).unwrap()).abs() < 1e-12);
            let scaled = FieldGrid::new(
                a.xs.clone(), a.ys.clone(),
                a.u.iter().zip(&b.u).map(|(p, q)| q + k * (p - q)).collect(),
                a.v.iter().zip(&b.v).map(|(p, q)| q + k * (p - q)).collect(),
            ).unwrap();
            prop_assert!((rmse_dense(&scaled, &b).unwrap() - k.abs() * ab).abs() < 1e-9);
        }

        #[test]
        fn velocity_is_linear(a in -3.0f64..3.0, dt in 0.01f64..2.0, c in 0.001f64..1.0) {
            let meta = SequenceMeta::new(dt, c).unwrap();
            let f = field(|x, y| [x, y * y]);
            let g = field(|x, y| [y.sin(), -x]);
            let combo = FieldGrid::new(
                f.xs.clone(), f.ys.clone(),
                f.u.iter().zip(&g.u).map(|(p, q)| a * p + q).collect(),
                f.v.iter().zip(&g.v).map(|(p, q)| a * p + q).collect(),
            ).unwrap();
            let lhs = to_velocity(&combo, &meta).unwrap();
            let vf = to_velocity(&f, &meta).unwrap();
            let vg = to_velocity(&g, &meta).unwrap();
            for i in 0..lhs.len() {
                prop_assert!((lhs.u[i] - (a * vf.u[i] + vg.u[i])).abs() < 1e-9);
                prop_assert!((lhs.v[i] - (a * vf.v[i] + vg.v[i])).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn interpolation_reproduces_affine_fields() {
        let grid = FieldGrid::from_fn(axis(1.0, 0.5, 9), axis(-2.0, 2.0, 5), |x, y| [3.0 * x - y, 0.5 * y + 1.0]);
        for (x, y) in [(1.0, -2.0), (2.3, 1.7), (5.0, 6.0), (3.75, 0.1)] {
            let v = interpolate(&grid, x, y).unwrap().unwrap();
            assert!((v[0] - (3.0 * x - y)).abs() < 1e-12 && (v[1] - (0.5 * y + 1.0)).abs() < 1e-12);
        }
        assert!(interpolate(&grid, 0.9, 0.0).unwrap().is_none());
        assert!(interpolate(&grid, 2.0, 6.5).unwrap().is_none());
    }

    #[test]
    fn field_point_rmse() {
        let grid = FieldGrid::from_fn(axis(0.0, 1.0, 4), axis(0.0, 1.0, 4), |_, _| [0.3, 0.4]);
        let pts = [[0.5, 0.5], [2.2, 1.9]];
        assert!((rmse_field_at_points(&grid, &pts, &[[0.0, 0.0]; 2]).unwrap() - 0.5).abs() < 1e-12);
        assert!(rmse_field_at_points(&grid, &[[7.0, 0.0]], &[[0.0, 0.0]]).is_err());
    }
}
