use std::path::{Path, PathBuf};

use neural_velocimetry::eval::{
    axis, load_field, rmse_at_points, rmse_dense, rmse_field_at_points, sample_grid, save_field, to_velocity,
    write_csv_grid, FieldGrid,
};
use neural_velocimetry::model::load_model;
use neural_velocimetry::stats::{accumulate_stats, point_series, psd};
use neural_velocimetry::{DisplacementModel, Error, SequenceMeta};
use serde::Serialize;

use crate::args::{EvalArgs, EvalMode, StatsArgs};
use crate::error::{usage, CliError};
use crate::manifest::RunManifest;
use crate::{create_dir, expand_inputs, write_text};

const FLO_MAGIC: f32 = 202021.25;

/// Reads a Middlebury `.flo` file as a field on the pixel grid.
pub fn load_flo(path: impl AsRef<Path>) -> Result<FieldGrid, CliError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let word = |i: usize| -> [u8; 4] { bytes[4 * i..4 * i + 4].try_into().unwrap() };
    if bytes.len() < 12 || f32::from_le_bytes(word(0)) != FLO_MAGIC {
        return Err(usage(format!("{} is not a .flo file", path.display())));
    }
    let (w, h) = (i32::from_le_bytes(word(1)), i32::from_le_bytes(word(2)));
    if w <= 0 || h <= 0 {
        return Err(usage(format!("{}: bad size {w}x{h}", path.display())));
    }
    let (w, h) = (w as usize, h as usize);
    let needed = 12 + 8 * w * h;
    if bytes.len() != needed {
        return Err(Error::Truncated {
            needed,
            found: bytes.len(),
        }
        .into());
    }
    let (mut u, mut v) = (Vec::with_capacity(w * h), Vec::with_capacity(w * h));
    for i in 0..w * h {
        let a = f32::from_le_bytes(word(3 + 2 * i)) as f64;
        let b = f32::from_le_bytes(word(4 + 2 * i)) as f64;
        if a.abs() > 1e9 || b.abs() > 1e9 {
            return Err(usage(format!("{}: unknown-flow markers are not supported", path.display())));
        }
        u.push(a);
        v.push(b);
    }
    Ok(FieldGrid::new(axis(0.0, 1.0, w), axis(0.0, 1.0, h), u, v)?)
}

/// Dense truth from an NVF1 file or, by extension, a `.flo` file.
pub fn load_truth(path: impl AsRef<Path>) -> Result<FieldGrid, CliError> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("flo") => load_flo(path),
        _ => Ok(load_field(path)?),
    }
}

type PointTruth = (Vec<[f64; 2]>, Vec<[f64; 2]>);

/// `x, y, dx, dy` rows; a non-numeric first line is taken as a header.
fn load_points(path: &Path) -> Result<PointTruth, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (mut points, mut truth) = (Vec::new(), Vec::new());
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let cols: Result<Vec<f64>, _> = line.split(',').map(|c| c.trim().parse::<f64>()).collect();
        match cols {
            Ok(c) if c.len() == 4 => {
                points.push([c[0], c[1]]);
                truth.push([c[2], c[3]]);
            }
            Err(_) if n == 0 => {}
            _ => {
                return Err(usage(format!(
                    "{} line {}: expected x,y,dx,dy",
                    path.display(),
                    n + 1
                )))
            }
        }
    }
    Ok((points, truth))
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub mode: String,
    pub rmse: f64,
    pub samples: usize,
    pub source: PathBuf,
    pub truth: PathBuf,
}

impl EvalReport {
    pub fn summary(&self) -> String {
        format!("{} rmse {:.6} px over {} samples", self.mode, self.rmse, self.samples)
    }
}

enum Estimate {
    Field(FieldGrid),
    Model(DisplacementModel<f32>),
}

/// RMSE of a stored field or model against dense or point truth.
pub fn cmd_eval(args: &EvalArgs) -> Result<EvalReport, CliError> {
    let (source, estimate) = match (&args.field, &args.model) {
        (Some(f), None) => (f.clone(), Estimate::Field(load_field(f)?)),
        (None, Some(m)) => (m.clone(), Estimate::Model(load_model(m)?)),
        _ => return Err(usage("give exactly one of --field and --model")),
    };
    let (rmse, samples, truth_path) = match args.mode {
        EvalMode::Dense => {
            let path = args.truth.as_ref().ok_or_else(|| usage("dense mode needs --truth"))?;
            let truth = load_truth(path)?;
            let pred = match &estimate {
                Estimate::Field(f) => f.clone(),
                Estimate::Model(m) => sample_grid(m, &truth.xs, &truth.ys),
            };
            (rmse_dense(&pred, &truth)?, truth.len(), path.clone())
        }
        EvalMode::Points => {
            let path = args.points.as_ref().ok_or_else(|| usage("points mode needs --points"))?;
            let (points, truth) = load_points(path)?;
            let rmse = match &estimate {
                Estimate::Field(f) => rmse_field_at_points(f, &points, &truth)?,
                Estimate::Model(m) => rmse_at_points(m, &points, &truth)?,
            };
            (rmse, points.len(), path.clone())
        }
    };
    let report = EvalReport {
        mode: match args.mode {
            EvalMode::Dense => "dense".into(),
            EvalMode::Points => "points".into(),
        },
        rmse,
        samples,
        source: source.clone(),
        truth: truth_path.clone(),
    };
    if let Some(path) = &args.report {
        write_text(path, &(serde_json::to_string_pretty(&report)? + "\n"))?;
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let mut manifest = RunManifest::new("eval", &[source, truth_path]);
        manifest.outputs.push(path.clone());
        manifest.write(dir)?;
    }
    Ok(report)
}

fn parse_pair<T: std::str::FromStr>(text: &str, sep: char, what: &str) -> Result<(T, T), CliError> {
    let bad = || usage(format!("expected {what}, got {text:?}"));
    let (a, b) = text.split_once(sep).ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

fn load_any(path: &Path, size: Option<(usize, usize)>) -> Result<FieldGrid, CliError> {
    let mut magic = [0u8; 4];
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    magic.copy_from_slice(bytes.get(..4).ok_or_else(|| usage(format!("{} is empty", path.display())))?);
    match &magic {
        b"NVM1" => {
            let (w, h) = size.ok_or_else(|| usage("model inputs need --size WIDTHxHEIGHT"))?;
            let model = load_model(path)?;
            Ok(sample_grid(&model, &axis(0.0, 1.0, w), &axis(0.0, 1.0, h)))
        }
        _ => Ok(load_field(path)?),
    }
}

#[derive(Serialize)]
struct PointSummary {
    ix: usize,
    iy: usize,
    x: f64,
    y: f64,
    slope_u: Option<f64>,
    slope_v: Option<f64>,
}

#[derive(Serialize)]
struct StatsSummary {
    fields: usize,
    velocity_scale: Option<f64>,
    sample_rate: f64,
    points: Vec<PointSummary>,
}

/// Writes mean, Reynolds stress and TKE grids as CSV, the mean field as
/// NVF1, and a PSD per requested point and component.
pub fn cmd_stats(args: &StatsArgs) -> Result<(), CliError> {
    let size = args.size.as_deref().map(|s| parse_pair(s, 'x', "WIDTHxHEIGHT")).transpose()?;
    let meta = match (args.frame_interval, args.magnification) {
        (Some(dt), Some(c)) => Some(SequenceMeta::new(dt, c)?),
        (None, Some(_)) => return Err(usage("--magnification needs --frame-interval")),
        _ => None,
    };
    let sample_rate = match (args.frame_interval, args.sample_rate) {
        (Some(_), Some(_)) => return Err(usage("give --frame-interval or --sample-rate, not both")),
        (Some(dt), None) if dt > 0.0 => 1.0 / dt,
        (Some(dt), None) => return Err(usage(format!("frame interval must be positive, got {dt}"))),
        (None, rate) => rate.unwrap_or(1.0),
    };
    let band = args.band.as_deref().map(|b| parse_pair::<f64>(b, ',', "LO,HI")).transpose()?;
    let points = args
        .points
        .iter()
        .map(|p| parse_pair::<usize>(p, ',', "IX,IY"))
        .collect::<Result<Vec<_>, _>>()?;

    let paths = expand_inputs(&args.inputs)?;
    if paths.len() < 2 {
        return Err(usage(format!("statistics need at least 2 fields, got {}", paths.len())));
    }
    let mut fields = Vec::with_capacity(paths.len());
    for path in &paths {
        let field = load_any(path, size)?;
        fields.push(match &meta {
            Some(m) => to_velocity(&field, m)?,
            None => field,
        });
    }
    let stats = accumulate_stats(&fields)?;

    let out = &args.out;
    create_dir(out)?;
    let mut manifest = RunManifest::new("stats", &paths);
    write_csv_grid(&stats.mean_u, manifest.output(out.join("mean_u.csv")))?;
    write_csv_grid(&stats.mean_v, manifest.output(out.join("mean_v.csv")))?;
    write_csv_grid(&stats.reynolds_uv, manifest.output(out.join("reynolds_uv.csv")))?;
    write_csv_grid(&stats.tke, manifest.output(out.join("tke.csv")))?;
    save_field(&stats.mean_field(), manifest.output(out.join("mean.nvf")))?;

    let mut summary = StatsSummary {
        fields: fields.len(),
        velocity_scale: meta.map(|m| m.velocity_scale()),
        sample_rate,
        points: Vec::new(),
    };
    for &(ix, iy) in &points {
        let (u, v) = point_series(&fields, ix, iy)?;
        let (pu, pv) = (psd(&u, sample_rate)?, psd(&v, sample_rate)?);
        pu.write_csv(manifest.output(out.join(format!("psd_x{ix}_y{iy}_u.csv"))))?;
        pv.write_csv(manifest.output(out.join(format!("psd_x{ix}_y{iy}_v.csv"))))?;
        // a flat component has no positive bins to fit
        let slope = |p: &neural_velocimetry::stats::PsdSeries| band.and_then(|(lo, hi)| p.fit_slope(lo, hi).ok());
        summary.points.push(PointSummary {
            ix,
            iy,
            x: fields[0].xs[ix],
            y: fields[0].ys[iy],
            slope_u: slope(&pu),
            slope_v: slope(&pv),
        });
    }
    write_text(
        &manifest.output(out.join("summary.json")),
        &(serde_json::to_string_pretty(&summary)? + "\n"),
    )?;
    manifest.write(out)?;
    Ok(())
}
