//! The `nvel` command line: every subcommand is also callable as a library
//! function taking its parsed arguments.

pub mod args;
pub mod benchmark;
mod error;
mod evaluate;
mod manifest;
mod tools;
mod training;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Parser;
use neural_velocimetry::eval::{vorticity, FieldGrid, ScalarGrid};
use neural_velocimetry::image::save_image;
use neural_velocimetry::{Error, Image};

pub use args::{Cli, Command};
pub use error::CliError;
pub use evaluate::{cmd_eval, cmd_stats, load_flo, load_truth, EvalReport};
pub use manifest::{RunManifest, MANIFEST_FILE};
pub use tools::{cmd_model_info, cmd_preprocess, cmd_synth};
pub use training::{cmd_ensemble, cmd_estimate, cmd_sequence, EstimateOutput};

pub const MODEL_FILE: &str = "model.nvm";
pub const FIELD_FILE: &str = "field.nvf";
pub const LOSS_FILE: &str = "loss.csv";

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Estimate(a) => cmd_estimate(&a).map(|_| ()),
        Command::Sequence(a) => cmd_sequence(&a),
        Command::Ensemble(a) => cmd_ensemble(&a),
        Command::Eval(a) => cmd_eval(&a).map(|r| println!("{}", r.summary())),
        Command::Stats(a) => cmd_stats(&a),
        Command::Synth(a) => cmd_synth(&a),
        Command::Preprocess(a) => cmd_preprocess(&a),
        Command::ModelInfo(a) => cmd_model_info(&a).map(|text| print!("{text}")),
    }
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn main_with<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Expands a lone glob pattern; explicit lists are kept in order.
pub(crate) fn expand_inputs(items: &[String]) -> Result<Vec<PathBuf>, CliError> {
    if let [pattern] = items {
        if pattern.contains(['*', '?', '[']) {
            let paths = glob::glob(pattern)
                .map_err(|e| error::usage(format!("bad glob {pattern:?}: {e}")))?
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| error::usage(format!("cannot read {pattern:?}: {e}")))?;
            if paths.is_empty() {
                return Err(error::usage(format!("no files match {pattern:?}")));
            }
            return Ok(paths);
        }
    }
    Ok(items.iter().map(PathBuf::from).collect())
}

pub(crate) fn with_jobs<R: Send>(jobs: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R, CliError> {
    match jobs {
        None => Ok(f()),
        Some(0) => Err(error::usage("--jobs must be at least 1")),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| error::usage(format!("cannot start {n} threads: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

pub(crate) fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e).into())
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| Error::io(path, e).into())
}

pub(crate) fn write_lines(path: &Path, header: &str, rows: impl IntoIterator<Item = String>) -> Result<(), CliError> {
    let io = |e| CliError::from(Error::io(path, e));
    let mut out = std::io::BufWriter::new(fs::File::create(path).map_err(io)?);
    writeln!(out, "{header}").map_err(io)?;
    for row in rows {
        writeln!(out, "{row}").map_err(io)?;
    }
    out.flush().map_err(io)
}

fn normalized(grid: &ScalarGrid) -> Image {
    let (lo, hi) = grid
        .data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    Image::from_fn(grid.width, grid.height, |x, y| ((grid.get(x, y) - lo) / span) as f32)
}

/// Min-max normalized magnitude and vorticity images.
pub(crate) fn write_heatmaps(field: &FieldGrid, dir: &Path, manifest: &mut RunManifest) -> Result<(), CliError> {
    save_image(&normalized(&field.magnitude()), manifest.output(dir.join("magnitude.pgm")))?;
    if field.width() >= 2 && field.height() >= 2 {
        save_image(&normalized(&vorticity(field)?), manifest.output(dir.join("vorticity.pgm")))?;
    }
    Ok(())
}
