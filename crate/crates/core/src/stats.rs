//! Time statistics of field streams and power spectra of point series.

use std::f64::consts::PI;
use std::io::{BufWriter, Write};
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::eval::{FieldGrid, ScalarGrid};

/// Mean field and second moments of a stream of fields. Averages are
/// population averages over the `count` fields.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowStats {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub mean_u: ScalarGrid,
    pub mean_v: ScalarGrid,
    /// `<u'v'>`
    pub reynolds_uv: ScalarGrid,
    /// `(<u'^2> + <v'^2>) / 2`
    pub tke: ScalarGrid,
    pub count: usize,
}

impl FlowStats {
    pub fn mean_field(&self) -> FieldGrid {
        FieldGrid {
            xs: self.xs.clone(),
            ys: self.ys.clone(),
            u: self.mean_u.data.clone(),
            v: self.mean_v.data.clone(),
        }
    }
}

/// Single-pass (Welford) accumulator over fields sharing one grid.
#[derive(Clone, Debug, Default)]
pub struct StatsAccumulator {
    xs: Vec<f64>,
    ys: Vec<f64>,
    count: usize,
    mean_u: Vec<f64>,
    mean_v: Vec<f64>,
    m2_u: Vec<f64>,
    m2_v: Vec<f64>,
    c_uv: Vec<f64>,
}

impl StatsAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn push(&mut self, field: &FieldGrid) -> Result<()> {
        if self.count == 0 {
            let n = field.len();
            self.xs = field.xs.clone();
            self.ys = field.ys.clone();
            self.mean_u = vec![0.0; n];
            self.mean_v = vec![0.0; n];
            self.m2_u = vec![0.0; n];
            self.m2_v = vec![0.0; n];
            self.c_uv = vec![0.0; n];
        } else if field.xs != self.xs || field.ys != self.ys {
            return Err(Error::DimensionMismatch(format!(
                "field {} is sampled on a {}x{} grid that differs from the first field's {}x{} grid",
                self.count,
                field.width(),
                field.height(),
                self.xs.len(),
                self.ys.len()
            )));
        }
        self.count += 1;
        let n = self.count as f64;
        for i in 0..field.len() {
            let (u, v) = (field.u[i], field.v[i]);
            let du = u - self.mean_u[i];
            let dv = v - self.mean_v[i];
            self.mean_u[i] += du / n;
            self.mean_v[i] += dv / n;
            self.m2_u[i] += du * (u - self.mean_u[i]);
            self.m2_v[i] += dv * (v - self.mean_v[i]);
            self.c_uv[i] += du * (v - self.mean_v[i]);
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<FlowStats> {
        if self.count < 2 {
            return Err(Error::NotEnoughData(format!(
                "statistics need at least 2 fields, got {}",
                self.count
            )));
        }
        let n = self.count as f64;
        let grid = |data: Vec<f64>| ScalarGrid {
            width: self.xs.len(),
            height: self.ys.len(),
            data,
        };
        Ok(FlowStats {
            xs: self.xs.clone(),
            ys: self.ys.clone(),
            mean_u: grid(self.mean_u.clone()),
            mean_v: grid(self.mean_v.clone()),
            reynolds_uv: grid(self.c_uv.iter().map(|c| c / n).collect()),
            tke: grid(
                self.m2_u
                    .iter()
                    .zip(&self.m2_v)
                    .map(|(a, b)| (0.5 * (a + b) / n).max(0.0))
                    .collect(),
            ),
            count: self.count,
        })
    }
}

pub fn accumulate_stats<'a>(fields: impl IntoIterator<Item = &'a FieldGrid>) -> Result<FlowStats> {
    let mut acc = StatsAccumulator::new();
    for field in fields {
        acc.push(field)?;
    }
    acc.finish()
}

/// Welch estimator settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WelchConfig {
    /// Upper bound on the segment length; the segment is the largest power
    /// of two not exceeding this or the series length.
    pub max_segment: usize,
    /// Fraction of a segment shared with the next one.
    pub overlap: f64,
}

impl Default for WelchConfig {
    fn default() -> Self {
        WelchConfig {
            max_segment: 256,
            overlap: 0.5,
        }
    }
}

pub const MIN_PSD_LENGTH: usize = 64;

/// One-sided power spectral density, in squared units per Hz.
#[derive(Clone, Debug, PartialEq)]
pub struct PsdSeries {
    pub frequencies: Vec<f64>,
    pub power: Vec<f64>,
}

impl PsdSeries {
    pub fn resolution(&self) -> f64 {
        self.frequencies[1] - self.frequencies[0]
    }

    /// Rectangle-rule integral of the density.
    pub fn total_power(&self) -> f64 {
        self.power.iter().sum::<f64>() * self.resolution()
    }

    pub fn peak_frequency(&self) -> f64 {
        let (i, _) = self
            .power
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        self.frequencies[i]
    }

    /// Least-squares slope of `log10 power` against `log10 frequency` over
    /// the bins with `lo <= f <= hi` and positive power.
    pub fn fit_slope(&self, lo: f64, hi: f64) -> Result<f64> {
        let (lx, ly): (Vec<f64>, Vec<f64>) = self
            .frequencies
            .iter()
            .zip(&self.power)
            .filter(|(&f, &p)| f > 0.0 && f >= lo && f <= hi && p > 0.0)
            .map(|(f, p)| (f.log10(), p.log10()))
            .unzip();
        if lx.len() < 2 {
            return Err(Error::NotEnoughData(format!(
                "slope fit over [{lo}, {hi}] Hz has {} usable bins",
                lx.len()
            )));
        }
        let n = lx.len() as f64;
        let mx = lx.iter().sum::<f64>() / n;
        let my = ly.iter().sum::<f64>() / n;
        let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
        Ok(sxy / sxx)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let mut write = || -> std::io::Result<()> {
            writeln!(out, "frequency,power")?;
            for (f, p) in self.frequencies.iter().zip(&self.power) {
                writeln!(out, "{f:e},{p:e}")?;
            }
            out.flush()
        };
        write().map_err(|e| Error::io(path, e))
    }
}

pub fn psd(series: &[f64], sample_rate: f64) -> Result<PsdSeries> {
    psd_with(series, sample_rate, &WelchConfig::default())
}

/// Welch estimate: periodic-Hann windowed segments, each with its own mean
/// removed, averaged periodograms.
pub fn psd_with(series: &[f64], sample_rate: f64, cfg: &WelchConfig) -> Result<PsdSeries> {
    if series.len() < MIN_PSD_LENGTH {
        return Err(Error::NotEnoughData(format!(
            "a spectrum needs at least {MIN_PSD_LENGTH} samples, got {}",
            series.len()
        )));
    }
    if !(sample_rate.is_finite() && sample_rate > 0.0) {
        return Err(Error::InvalidConfig(format!("sample rate must be positive, got {sample_rate}")));
    }
    if !(0.0..1.0).contains(&cfg.overlap) || cfg.max_segment < 2 {
        return Err(Error::InvalidConfig(format!("bad Welch settings {cfg:?}")));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig("series contains non-finite samples".into()));
    }

    let limit = cfg.max_segment.min(series.len());
    let seg = 1usize << (usize::BITS - 1 - limit.leading_zeros());
    let step = (((1.0 - cfg.overlap) * seg as f64).round() as usize).max(1);
    let window: Vec<f64> = (0..seg)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / seg as f64).cos())
        .collect();
    let window_power: f64 = window.iter().map(|w| w * w).sum();
    let fft = FftPlanner::new().plan_fft_forward(seg);

    let bins = seg / 2 + 1;
    let mut power = vec![0.0; bins];
    let mut buf = vec![Complex::new(0.0, 0.0); seg];
    let mut segments = 0usize;
    let mut start = 0;
    while start + seg <= series.len() {
        let chunk = &series[start..start + seg];
        let mean = chunk.iter().sum::<f64>() / seg as f64;
        for ((b, &x), &w) in buf.iter_mut().zip(chunk).zip(&window) {
            *b = Complex::new((x - mean) * w, 0.0);
        }
        fft.process(&mut buf);
        for (p, b) in power.iter_mut().zip(&buf) {
            *p += b.norm_sqr();
        }
        segments += 1;
        start += step;
    }

    let scale = 1.0 / (sample_rate * window_power * segments as f64);
    for (k, p) in power.iter_mut().enumerate() {
        *p *= scale;
        if k != 0 && !(seg.is_multiple_of(2) && k == seg / 2) {
            *p *= 2.0;
        }
    }
    Ok(PsdSeries {
        frequencies: (0..bins).map(|k| k as f64 * sample_rate / seg as f64).collect(),
        power,
    })
}

/// Time series of one grid sample across a stream of fields.
pub fn point_series(fields: &[FieldGrid], ix: usize, iy: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let Some(first) = fields.first() else {
        return Err(Error::NotEnoughData("no fields".into()));
    };
    if ix >= first.width() || iy >= first.height() {
        return Err(Error::Shape(format!(
            "point ({ix}, {iy}) outside the {}x{} grid",
            first.width(),
            first.height()
        )));
    }
    let mut u = Vec::with_capacity(fields.len());
    let mut v = Vec::with_capacity(fields.len());
    for f in fields {
        if !f.same_grid(first) {
            return Err(Error::DimensionMismatch("fields are sampled on different grids".into()));
        }
        let [a, b] = f.get(ix, iy);
        u.push(a);
        v.push(b);
    }
    Ok((u, v))
}
