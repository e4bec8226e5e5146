use crate::manifest::{self, Manifest, Record};
use crate::output::{collect_records, ensure_dir, Outputs};
use crate::Context;
use anyhow::{bail, Result};
use clap::ValueEnum;
use cone_mosaic::density::{Modality, DEFAULT_SCALING_FACTOR};
use cone_mosaic::fit::{eval_log_density, PowerFitParams, RandomEffects};
use cone_mosaic::synth::{generate_mosaic, hex_spacing_px, write_mosaic, Layout, MosaicSpec};
use rayon::prelude::*;
use std::path::PathBuf;

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayoutArg {
    Hexagonal,
    JitteredHex,
    PoissonDisc,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModalityArg {
    Confocal,
    Calculated,
}

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Target density, cones/mm² (ignored with --profile).
    #[arg(long, default_value_t = 10000.0)]
    pub density: f64,
    #[arg(long, default_value_t = 256)]
    pub width: usize,
    #[arg(long, default_value_t = 256)]
    pub height: usize,
    /// Defaults to 1 µm/px, or 0.5 µm/px with --profile.
    #[arg(long)]
    pub microns_per_pixel: Option<f64>,
    #[arg(long, value_enum, default_value_t = LayoutArg::Hexagonal)]
    pub layout: LayoutArg,
    /// Jitter radius as a fraction of the lattice spacing.
    #[arg(long, default_value_t = 0.25)]
    pub jitter: f64,
    /// Number of mosaics (ignored with --profile).
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long, default_value = "synthetic")]
    pub participant: String,
    #[arg(long, value_enum, default_value_t = ModalityArg::Confocal)]
    pub modality: ModalityArg,
    /// Eccentricity recorded for every mosaic (ignored with --profile).
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub eccentricity: f64,

    /// One mosaic per eccentricity, with density following the power law.
    #[arg(long)]
    pub profile: bool,
    #[arg(long, default_value_t = 11.63, allow_hyphen_values = true)]
    pub kappa: f64,
    #[arg(long, default_value_t = -0.6, allow_hyphen_values = true)]
    pub pi_n: f64,
    #[arg(long, default_value_t = -0.8, allow_hyphen_values = true)]
    pub pi_t: f64,
    #[arg(long, default_value_t = 0.9)]
    pub rho: f64,
    #[arg(long, default_value_t = -10.0, allow_hyphen_values = true)]
    pub ecc_min: f64,
    #[arg(long, default_value_t = 10.0, allow_hyphen_values = true)]
    pub ecc_max: f64,
    #[arg(long, default_value_t = 1.0)]
    pub ecc_step: f64,
    /// Profile window side, in lattice spacings.
    #[arg(long, default_value_t = 60.0)]
    pub window_spacings: f64,
}

struct Job {
    id: String,
    eccentricity_deg: f64,
    spec: MosaicSpec,
}

fn jobs(ctx: &Context, args: &Args) -> Result<Vec<Job>> {
    let layout = match args.layout {
        LayoutArg::Hexagonal => Layout::Hexagonal,
        LayoutArg::JitteredHex => Layout::JitteredHex,
        LayoutArg::PoissonDisc => Layout::PoissonDisc,
    };
    let spec = |density: f64, w: usize, h: usize, mu: f64, k: usize| MosaicSpec {
        target_density: density,
        width: w,
        height: h,
        microns_per_pixel: mu,
        layout,
        jitter_fraction: if layout == Layout::JitteredHex { args.jitter } else { 0.0 },
        rng_seed: ctx.seed.wrapping_add(k as u64),
    };
    let id = |k: usize| format!("{}_{k:03}", args.participant);
    if !args.profile {
        let mu = args.microns_per_pixel.unwrap_or(1.0);
        return Ok((0..args.count)
            .map(|k| Job {
                id: id(k),
                eccentricity_deg: args.eccentricity,
                spec: spec(args.density, args.width, args.height, mu, k),
            })
            .collect());
    }

    let mu = args.microns_per_pixel.unwrap_or(0.5);
    if !(args.ecc_step > 0.0 && args.ecc_max >= args.ecc_min) {
        bail!("eccentricity grid needs --ecc-step > 0 and --ecc-max >= --ecc-min");
    }
    if !(args.window_spacings > 0.0) {
        bail!("--window-spacings must be positive");
    }
    let params = PowerFitParams { kappa: args.kappa, pi_n: args.pi_n, pi_t: args.pi_t, rho: args.rho };
    let n = ((args.ecc_max - args.ecc_min) / args.ecc_step + 1e-9).floor() as usize;
    (0..=n)
        .map(|k| {
            let r = args.ecc_min + k as f64 * args.ecc_step;
            let density = eval_log_density(&params, &RandomEffects::default(), r)?.exp();
            let side = (args.window_spacings * hex_spacing_px(density, mu)).ceil() as usize;
            Ok(Job { id: id(k), eccentricity_deg: r, spec: spec(density, side, side, mu, k) })
        })
        .collect()
}

pub fn run(ctx: &Context, args: &Args) -> Result<()> {
    let jobs = jobs(ctx, args)?;
    ensure_dir(&ctx.out_dir)?;
    let modality = match args.modality {
        ModalityArg::Confocal => Modality::Confocal,
        ModalityArg::Calculated => Modality::Calculated,
    };
    let outputs = Outputs::default();
    let results: Vec<(String, Result<Record>)> = jobs
        .par_iter()
        .map(|job| {
            let r = (|| {
                let mosaic = generate_mosaic(&job.spec)?;
                for suffix in [".png", "_centers.csv", ".truth.json"] {
                    outputs.track(ctx.out_dir.join(format!("{}{suffix}", job.id)));
                }
                let written = write_mosaic(&mosaic, &job.spec, &ctx.out_dir, &job.id)?;
                let name = |p: PathBuf| PathBuf::from(p.file_name().expect("written files have names"));
                Ok(Record {
                    id: job.id.clone(),
                    participant: args.participant.clone(),
                    modality,
                    eccentricity_deg: job.eccentricity_deg,
                    microns_per_pixel: job.spec.microns_per_pixel,
                    scaling_factor: DEFAULT_SCALING_FACTOR,
                    width: job.spec.width,
                    height: job.spec.height,
                    label_map: Some(name(written.label_map)),
                    centers: Some(name(written.centers)),
                    ground_truth: None,
                    truth: Some(name(written.ground_truth)),
                })
            })();
            (job.id.clone(), r)
        })
        .collect();
    let result = collect_records(results)
        .and_then(|records| manifest::save(&Manifest { records }, &outputs.track(ctx.out_dir.join("manifest.json"))));
    if result.is_err() {
        outputs.discard();
    }
    result
}
