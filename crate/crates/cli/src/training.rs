use std::path::{Path, PathBuf};

use neural_velocimetry::eval::{axis, sample_grid, save_field, FieldGrid};
use neural_velocimetry::image::load_image;
use neural_velocimetry::model::save_model;
use neural_velocimetry::train::{
    summarize_ensemble, train_members, train_pair, train_sequence, EnsembleConfig, RunConfig, TrainReport,
};
use neural_velocimetry::{DisplacementModel, Image};

use crate::args::{EnsembleArgs, EstimateArgs, SequenceArgs, TrainFlags};
use crate::error::{usage, CliError};
use crate::manifest::RunManifest;
use crate::{create_dir, expand_inputs, with_jobs, write_heatmaps, write_lines, FIELD_FILE, LOSS_FILE, MODEL_FILE};

/// Results of [`cmd_estimate`] besides the files it writes.
#[derive(Clone, Debug)]
pub struct EstimateOutput {
    pub model: DisplacementModel<f32>,
    pub field: FieldGrid,
    pub report: TrainReport,
    pub manifest: RunManifest,
}

fn new_model(cfg: &RunConfig, flags: &TrainFlags, img: &Image) -> Result<DisplacementModel<f32>, CliError> {
    let mut model = DisplacementModel::init(cfg.model, cfg.train.seed)?;
    if flags.normalize_coords {
        model.normalize_coordinates(img.width(), img.height());
    }
    Ok(model)
}

fn pixel_field(model: &DisplacementModel<f32>, img: &Image) -> FieldGrid {
    sample_grid(model, &axis(0.0, 1.0, img.width()), &axis(0.0, 1.0, img.height()))
}

fn loss_rows<'a>(reports: impl IntoIterator<Item = (usize, &'a TrainReport)>) -> Vec<String> {
    reports
        .into_iter()
        .flat_map(|(k, r)| {
            r.loss_per_epoch
                .iter()
                .enumerate()
                .map(move |(e, l)| format!("{k},{},{l:e}", e + 1))
        })
        .collect()
}

fn started(command: &str, inputs: &[PathBuf], cfg: &RunConfig, flags: &TrainFlags) -> RunManifest {
    let mut manifest = RunManifest::new(command, inputs);
    manifest.config = Some(*cfg);
    manifest.seeds = vec![cfg.train.seed];
    manifest.normalize_coords = flags.normalize_coords;
    manifest
}

/// Trains one model on a pair and writes the model, the dense field at
/// pixel resolution, the loss history and a manifest into `args.out`.
pub fn cmd_estimate(args: &EstimateArgs) -> Result<EstimateOutput, CliError> {
    let cfg = args.train.resolve()?;
    let first = load_image(&args.first)?;
    let second = load_image(&args.second)?;
    let mut model = new_model(&cfg, &args.train, &first)?;
    let mut manifest = started("estimate", &[args.first.clone(), args.second.clone()], &cfg, &args.train);

    let (report, field) = with_jobs(args.train.jobs, || -> Result<_, CliError> {
        let report = train_pair(&mut model, &first, &second, &cfg.train)?;
        let field = pixel_field(&model, &first);
        Ok((report, field))
    })??;

    let out = &args.out;
    create_dir(out)?;
    write_lines(&manifest.output(out.join(LOSS_FILE)), "pair,epoch,loss", loss_rows([(0, &report)]))?;
    manifest.reports.push(report.clone());
    if report.diverged {
        manifest.status = "diverged".into();
        manifest.write(out)?;
        return Err(CliError::Diverged(format!(
            "non-finite loss after {} epochs",
            report.epochs_run()
        )));
    }
    save_model(&model, manifest.output(out.join(MODEL_FILE)))?;
    save_field(&field, manifest.output(out.join(FIELD_FILE)))?;
    if args.heatmaps {
        write_heatmaps(&field, out, &mut manifest)?;
    }
    manifest.write(out)?;
    Ok(EstimateOutput {
        model,
        field,
        report,
        manifest,
    })
}

pub(crate) fn pair_dir(out: &Path, k: usize) -> PathBuf {
    out.join(format!("pair_{k:04}"))
}

/// Trains every consecutive pair, warm-starting each from the previous one.
/// Writes `pair_NNNN/{model.nvm,field.nvf}` per pair.
pub fn cmd_sequence(args: &SequenceArgs) -> Result<(), CliError> {
    let cfg = args.train.resolve()?;
    let mut rest = RunConfig {
        train: cfg.train,
        ..cfg
    };
    rest.train.epochs = args.rest_epochs;
    if let Some(path) = &args.rest_config {
        rest.apply_file(path)?;
        if rest.model != cfg.model {
            return Err(usage("the rest configuration cannot change the model shape"));
        }
    }
    if let Some(b) = args.rest_batch_size {
        rest.train.batch_size = b;
    }
    rest.train.deterministic = cfg.train.deterministic;
    rest.validate()?;

    let paths = expand_inputs(&args.frames)?;
    if paths.len() < 2 {
        return Err(usage(format!("a sequence needs at least 2 frames, got {}", paths.len())));
    }
    let frames = paths.iter().map(load_image).collect::<Result<Vec<_>, _>>()?;
    let model = new_model(&cfg, &args.train, &frames[0])?;
    let mut manifest = started("sequence", &paths, &cfg, &args.train);
    manifest.rest_config = Some(rest.train);

    let (results, fields) = with_jobs(args.train.jobs, || -> Result<_, CliError> {
        let results = train_sequence(&frames, &cfg.train, &rest.train, model)?;
        let fields: Vec<FieldGrid> = results.iter().map(|r| pixel_field(&r.model, &frames[0])).collect();
        Ok((results, fields))
    })??;

    create_dir(&args.out)?;
    let mut diverged = Vec::new();
    for (k, (result, field)) in results.iter().zip(&fields).enumerate() {
        let dir = pair_dir(&args.out, k);
        create_dir(&dir)?;
        save_model(&result.model, manifest.output(dir.join(MODEL_FILE)))?;
        save_field(field, manifest.output(dir.join(FIELD_FILE)))?;
        if args.heatmaps {
            write_heatmaps(field, &dir, &mut manifest)?;
        }
        if result.report.diverged {
            diverged.push(k);
        }
        manifest.reports.push(result.report.clone());
    }
    manifest.seeds = (0..results.len()).map(|k| cfg.train.seed.wrapping_add(k as u64)).collect();
    write_lines(
        &manifest.output(args.out.join(LOSS_FILE)),
        "pair,epoch,loss",
        loss_rows(results.iter().map(|r| &r.report).enumerate()),
    )?;
    if !diverged.is_empty() {
        manifest.status = "diverged".into();
        manifest.notes.push(format!("diverged pairs: {diverged:?}"));
    }
    manifest.write(&args.out)?;
    match diverged.is_empty() {
        true => Ok(()),
        false => Err(CliError::Diverged(format!("pairs {diverged:?}"))),
    }
}

/// Trains `args.members` seeded models and writes mean and standard
/// deviation fields plus `report.txt` listing every member.
pub fn cmd_ensemble(args: &EnsembleArgs) -> Result<(), CliError> {
    if args.members < 2 {
        return Err(usage(format!("an ensemble needs at least 2 members, got {}", args.members)));
    }
    let cfg = args.train.resolve()?;
    let first = load_image(&args.first)?;
    let second = load_image(&args.second)?;
    let ens = EnsembleConfig {
        members: args.members,
        divergence_factor: args.divergence_factor,
        normalize_coords: args.train.normalize_coords,
        seed_stride: args.seed_stride,
    };
    let mut manifest = started("ensemble", &[args.first.clone(), args.second.clone()], &cfg, &args.train);
    let xs = axis(0.0, 1.0, first.width());
    let ys = axis(0.0, 1.0, first.height());

    let result = with_jobs(args.train.jobs, || -> Result<_, CliError> {
        let members = train_members::<f32>(&first, &second, &cfg.model, &cfg.train, &ens)?;
        Ok(summarize_ensemble(members, &xs, &ys, ens.divergence_factor)?)
    })??;

    let out = &args.out;
    create_dir(out)?;
    save_field(&result.mean, manifest.output(out.join("mean.nvf")))?;
    save_field(&result.std, manifest.output(out.join("std.nvf")))?;
    let mut report = String::from("member seed final_loss status\n");
    for (i, (m, kept)) in result.members.iter().zip(&result.converged).enumerate() {
        let status = match (*kept, m.report.diverged) {
            (true, _) => "kept",
            (false, true) => "diverged",
            (false, false) => "excluded",
        };
        report += &format!("{i} {} {:e} {status}\n", m.seed, m.report.final_loss);
    }
    report += &format!("excluded: {:?}\n", result.excluded());
    crate::write_text(&manifest.output(out.join("report.txt")), &report)?;
    manifest.seeds = result.members.iter().map(|m| m.seed).collect();
    manifest.reports = result.members.iter().map(|m| m.report.clone()).collect();
    manifest.notes.push(format!("excluded members: {:?}", result.excluded()));
    manifest.write(out)?;
    Ok(())
}
