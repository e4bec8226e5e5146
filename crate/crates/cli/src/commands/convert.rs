use super::load_manifest;
use crate::manifest::{self, LoadedManifest, Manifest, Record};
use crate::output::{collect_records, ensure_dir, Outputs};
use crate::Context;
use anyhow::{bail, Context as _, Result};
use clap::ValueEnum;
use cone_mosaic::geometry::{build_voronoi, closest_ridge_midpoint_circle, closest_vertex_circle, BoundingBox};
use cone_mosaic::maskops::{load_centers_csv, rasterize_circles, rasterize_voronoi, save_label_map, InstanceLabelMap};
use rayon::prelude::*;
use std::path::{Path, PathBuf};

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Voronoi,
    ClosestVertex,
    ClosestRidgeMidpoint,
}

#[derive(clap::Args, Debug)]
pub struct Args {
    #[arg(long, value_enum, default_value_t = Method::Voronoi)]
    pub method: Method,
}

fn absolute(p: &Path) -> PathBuf {
    std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf())
}

fn convert_map(rec: &Record, lm: &LoadedManifest, method: Method) -> Result<InstanceLabelMap> {
    let centers = load_centers_csv(lm.require(&rec.centers, "centers file")?)?;
    let bounds = BoundingBox::new(rec.width as f64, rec.height as f64)?;
    let tess = build_voronoi(&centers.points, bounds)?;
    Ok(match method {
        Method::Voronoi => rasterize_voronoi(&tess, rec.width, rec.height)?,
        Method::ClosestVertex | Method::ClosestRidgeMidpoint => {
            let circles = (0..tess.seeds.len())
                .map(|i| match method {
                    Method::ClosestVertex => closest_vertex_circle(&tess, i),
                    _ => closest_ridge_midpoint_circle(&tess, i),
                })
                .collect::<Result<Vec<_>, _>>()?;
            rasterize_circles(&circles, rec.width, rec.height)?
        }
    })
}

pub fn run(ctx: &Context, args: &Args) -> Result<()> {
    let lm = load_manifest(ctx)?;
    ensure_dir(&ctx.out_dir)?;
    let out_manifest = ctx.out_dir.join("manifest.json");
    if let (Some(src), true) = (&ctx.manifest, out_manifest.exists()) {
        if absolute(src) == absolute(&out_manifest) {
            bail!("output manifest would overwrite the input manifest {}", src.display());
        }
    }
    let outputs = Outputs::default();
    let results: Vec<(String, Result<Record>)> = lm
        .manifest
        .records
        .par_iter()
        .map(|rec| {
            let r = (|| {
                let map = convert_map(rec, &lm, args.method)?;
                let name = format!("{}.png", rec.id);
                let path = outputs.track(ctx.out_dir.join(&name));
                save_label_map(&map, &path).with_context(|| format!("writing {}", path.display()))?;
                let carry = |p: &Option<PathBuf>| p.as_ref().map(|p| absolute(&lm.resolve(p)));
                Ok(Record {
                    label_map: Some(PathBuf::from(name)),
                    centers: carry(&rec.centers),
                    ground_truth: carry(&rec.ground_truth),
                    truth: carry(&rec.truth),
                    ..rec.clone()
                })
            })();
            (rec.id.clone(), r)
        })
        .collect();
    let result = collect_records(results).and_then(|records| {
        manifest::save(&Manifest { records }, &outputs.track(out_manifest))?;
        Ok(())
    });
    if result.is_err() {
        outputs.discard();
    }
    result
}
