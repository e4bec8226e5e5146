use super::load_manifest;
use crate::manifest::{LoadedManifest, Record};
use crate::output::{collect_records, ensure_dir, Outputs};
use crate::Context;
use anyhow::Result;
use cone_mosaic::density::{analyze_image, save_density_table, DensitySample};
use cone_mosaic::maskops::{load_centers_csv, load_label_map};
use rayon::prelude::*;

/// Centre files may disagree with the mask count by this fraction before a
/// warning is printed.
const COUNT_WARN_FRACTION: f64 = 0.02;

#[derive(clap::Args, Debug)]
pub struct Args {}

fn analyze(rec: &Record, lm: &LoadedManifest) -> Result<DensitySample> {
    let map = load_label_map(lm.require(&rec.label_map, "label map")?)?;
    let sample = analyze_image(&map, &rec.meta())?;
    if rec.centers.is_some() {
        let centers = load_centers_csv(lm.require(&rec.centers, "centers file")?)?;
        let (c, m) = (centers.len() as f64, sample.n_cones as f64);
        if (c - m).abs() > COUNT_WARN_FRACTION * m {
            eprintln!(
                "warning: record {}: centers file lists {} cones, label map has {}; using the label map",
                rec.id,
                centers.len(),
                sample.n_cones
            );
        }
    }
    Ok(sample)
}

pub fn run(ctx: &Context, _args: &Args) -> Result<()> {
    let lm = load_manifest(ctx)?;
    ensure_dir(&ctx.out_dir)?;
    let results: Vec<(String, Result<DensitySample>)> =
        lm.manifest.records.par_iter().map(|rec| (rec.id.clone(), analyze(rec, &lm))).collect();
    let mut samples = collect_records(results)?;
    // stable sort keeps manifest order among equal keys
    samples.sort_by(|a, b| {
        a.participant_id.cmp(&b.participant_id).then(a.eccentricity_deg.total_cmp(&b.eccentricity_deg))
    });
    let outputs = Outputs::default();
    let result = save_density_table(&samples, outputs.track(ctx.out_dir.join("density.csv"))).map_err(Into::into);
    if result.is_err() {
        outputs.discard();
    }
    result
}
