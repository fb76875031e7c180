use std::path::Path;

use neural_velocimetry::eval::save_field;
use neural_velocimetry::image::{clahe, gaussian_filter_3x3, load_image, save_image, subtract_background};
use neural_velocimetry::model::{load_model, MODEL_HEADER_BYTES};
use neural_velocimetry::synth::{
    generate_sequence, AnalyticFlow, Noise, ParticleSet, DEFAULT_DIAMETER, SINGLE_PARTICLE_DIAMETER,
};

use crate::args::{ModelInfoArgs, Preset, PreprocessArgs, SynthArgs};
use crate::error::{usage, CliError};
use crate::manifest::RunManifest;
use crate::{create_dir, expand_inputs, write_lines};

/// Renders `args.frames` frames plus, for every consecutive pair, the dense
/// truth (`truth_NNNN.nvf`) and the particles inside the first frame with
/// their displacements (`particles_NNNN.csv`).
pub fn cmd_synth(args: &SynthArgs) -> Result<(), CliError> {
    let (w, h) = (args.width, args.height);
    let (flow, particles) = match (args.preset, &args.flow) {
        (Some(Preset::SingleParticle), _) => (
            AnalyticFlow::SingleParticle { dx: 10.0, dy: 10.0 },
            ParticleSet::centered(w, h, args.diameter.unwrap_or(SINGLE_PARTICLE_DIAMETER), args.peak)?,
        ),
        (Some(Preset::Zero), _) | (None, _) => {
            let flow = match &args.flow {
                _ if args.preset == Some(Preset::Zero) => AnalyticFlow::Zero,
                Some(spec) => spec.parse()?,
                None => return Err(usage("give --flow or --preset")),
            };
            let d = args.diameter.unwrap_or(DEFAULT_DIAMETER);
            (flow, ParticleSet::random(w, h, args.density, d, args.peak, args.seed)?)
        }
    };
    let noise = Noise {
        std: args.noise,
        seed: args.seed,
    };
    let seq = generate_sequence(&flow, &particles, w, h, args.frames, noise)?;

    let out = &args.out;
    create_dir(out)?;
    let mut manifest = RunManifest::new("synth", &[]);
    let ext = if args.png { "png" } else { "pgm" };
    for (t, frame) in seq.frames.iter().enumerate() {
        save_image(frame, manifest.output(out.join(format!("frame_{t:04}.{ext}"))))?;
    }
    let truth = flow.grid(w, h);
    for t in 0..args.frames - 1 {
        save_field(&truth, manifest.output(out.join(format!("truth_{t:04}.nvf"))))?;
        let (points, disp) = seq.pair_points(t);
        write_lines(
            &manifest.output(out.join(format!("particles_{t:04}.csv"))),
            "x,y,dx,dy",
            points
                .iter()
                .zip(&disp)
                .map(|(p, d)| format!("{:e},{:e},{:e},{:e}", p[0], p[1], d[0], d[1])),
        )?;
    }
    manifest.seeds = vec![args.seed];
    manifest.notes.push(format!("flow {flow}"));
    manifest.notes.push(format!(
        "{} particles, diameter {} px, peak {}, noise std {}",
        particles.len(),
        particles.diameter,
        particles.peak,
        args.noise
    ));
    manifest.write(out)?;
    Ok(())
}

/// Applies background subtraction, smoothing and CLAHE, in that order, and
/// writes each result under its original file name.
pub fn cmd_preprocess(args: &PreprocessArgs) -> Result<(), CliError> {
    let paths = expand_inputs(&args.inputs)?;
    let mut images = paths.iter().map(load_image).collect::<Result<Vec<_>, _>>()?;
    if args.background {
        images = subtract_background(&images)?;
    }
    if args.smooth {
        images = images.iter().map(gaussian_filter_3x3).collect();
    }
    if args.clahe {
        images = images
            .iter()
            .map(|img| clahe(img, args.tiles, args.clip_limit))
            .collect::<Result<_, _>>()?;
    }
    create_dir(&args.out)?;
    let mut manifest = RunManifest::new("preprocess", &paths);
    for (path, img) in paths.iter().zip(&images) {
        let name = path
            .file_name()
            .ok_or_else(|| usage(format!("{} has no file name", path.display())))?;
        let target = args.out.join(name);
        if same_file(path, &target) {
            return Err(usage(format!("refusing to overwrite input {}", path.display())));
        }
        save_image(img, manifest.output(target))?;
    }
    manifest.notes.push(format!(
        "background {}, smooth {}, clahe {} (tiles {}, clip limit {})",
        args.background, args.smooth, args.clahe, args.tiles, args.clip_limit
    ));
    manifest.write(&args.out)?;
    Ok(())
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}

pub fn cmd_model_info(args: &ModelInfoArgs) -> Result<String, CliError> {
    let model = load_model(&args.model)?;
    let cfg = model.config();
    let params = cfg.param_count();
    if args.json {
        let value = serde_json::json!({
            "config": cfg,
            "parameters": params,
            "bytes": MODEL_HEADER_BYTES + 4 * params,
            "layer_widths": cfg.layer_widths(),
        });
        return Ok(serde_json::to_string_pretty(&value)? + "\n");
    }
    Ok(format!(
        "beta        {}\nn_embed     {}\nn_layers    {}\nlayer_size  {}\nwidths      {:?}\nparameters  {params}\nfile bytes  {} ({MODEL_HEADER_BYTES}-byte header + 4 x {params})\n",
        cfg.beta,
        cfg.n_embed,
        cfg.n_layers,
        cfg.layer_size,
        cfg.layer_widths(),
        MODEL_HEADER_BYTES + 4 * params,
    ))
}
