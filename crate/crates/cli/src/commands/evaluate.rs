use super::load_manifest;
use crate::manifest::Record;
use crate::output::{collect_records, csv_writer, ensure_dir, num, write_json, Outputs};
use crate::Context;
use anyhow::{ensure, Context as _, Result};
use cone_mosaic::density::{cone_density, eccentricity_group, EccentricityGroup, Modality};
use cone_mosaic::maskops::{centroids, load_label_map};
use cone_mosaic::metrics::{
    correlation_report, detection_metrics, match_instances, precision_recall_f1, DetectionScores, OverlapCounts,
    SegEvalReport, DEFAULT_IOU_THRESHOLD,
};
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeSet;

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Minimum IoU for a predicted and a reference instance to match.
    #[arg(long, default_value_t = DEFAULT_IOU_THRESHOLD)]
    pub iou_threshold: f64,
    /// Maximum centre distance, in pixels, for a detection to count.
    #[arg(long, default_value_t = 3.0)]
    pub tolerance: f64,
}

#[derive(Debug, Serialize)]
struct PairReport {
    id: String,
    participant: String,
    modality: Modality,
    eccentricity_deg: f64,
    group: EccentricityGroup,
    segmentation: SegEvalReport,
    tolerance_px: f64,
    center_detection: DetectionScores,
    n_pred_centers: usize,
    n_gt_centers: usize,
    pred_density_per_mm2: f64,
    gt_density_per_mm2: f64,
}

fn evaluate_one(rec: &Record, lm: &crate::manifest::LoadedManifest, args: &Args) -> Result<PairReport> {
    let pred_path = lm.require(&rec.label_map, "label map")?;
    let gt_path = lm.require(&rec.ground_truth, "ground truth")?;
    let pred = load_label_map(&pred_path)?;
    let gt = load_label_map(&gt_path)?;
    let pair = || format!("pair {} / {}", pred_path.display(), gt_path.display());
    ensure!(
        pred.same_shape(&gt),
        "{}: dimensions {}x{} and {}x{} differ",
        pair(),
        pred.width(),
        pred.height(),
        gt.width(),
        gt.height()
    );
    let seg = match_instances(&pred, &gt, args.iou_threshold).with_context(pair)?;
    let pc = centroids(&pred);
    let gc = centroids(&gt);
    let det = detection_metrics(&pc, &gc, args.tolerance)?;
    let density = |n: usize| cone_density(n as u64, rec.width, rec.height, rec.microns_per_pixel, rec.scaling_factor);
    Ok(PairReport {
        id: rec.id.clone(),
        participant: rec.participant.clone(),
        modality: rec.modality,
        eccentricity_deg: rec.eccentricity_deg,
        group: eccentricity_group(rec.eccentricity_deg)?,
        pred_density_per_mm2: density(seg.n_pred)?,
        gt_density_per_mm2: density(seg.n_gt)?,
        n_pred_centers: pc.len(),
        n_gt_centers: gc.len(),
        segmentation: seg,
        tolerance_px: args.tolerance,
        center_detection: det,
    })
}

const GROUPED_HEADER: [&str; 13] = [
    "modality",
    "group",
    "n_images",
    "aggregate_iou",
    "aggregate_dice",
    "mean_matched_iou",
    "mean_matched_dice",
    "instance_precision",
    "instance_recall",
    "instance_f1",
    "center_precision",
    "center_recall",
    "center_f1",
];

fn grouped_row(modality: Modality, group: &str, reports: &[&PairReport]) -> Vec<String> {
    let mut row = vec![modality.to_string(), group.to_string(), reports.len().to_string()];
    if reports.is_empty() {
        row.resize(GROUPED_HEADER.len(), String::new());
        return row;
    }
    let overlap = reports.iter().fold(OverlapCounts::default(), |acc, r| acc + r.segmentation.overlap);
    let pairs: Vec<f64> = reports.iter().flat_map(|r| r.segmentation.matched_pairs.iter().map(|m| m.iou)).collect();
    let (mean_iou, mean_dice) = if pairs.is_empty() {
        let any = reports.iter().any(|r| r.segmentation.n_pred + r.segmentation.n_gt > 0);
        if any { (0.0, 0.0) } else { (1.0, 1.0) }
    } else {
        let n = pairs.len() as f64;
        (pairs.iter().sum::<f64>() / n, pairs.iter().map(|i| 2.0 * i / (1.0 + i)).sum::<f64>() / n)
    };
    let sum = |f: fn(&PairReport) -> usize| reports.iter().map(|r| f(r)).sum::<usize>();
    let inst = precision_recall_f1(sum(|r| r.segmentation.tp), sum(|r| r.segmentation.n_pred), sum(|r| r.segmentation.n_gt));
    let cent = precision_recall_f1(sum(|r| r.center_detection.tp), sum(|r| r.n_pred_centers), sum(|r| r.n_gt_centers));
    for v in [overlap.iou(), overlap.dice(), mean_iou, mean_dice, inst.0, inst.1, inst.2, cent.0, cent.1, cent.2] {
        row.push(num(v));
    }
    row
}

fn correlation_json(xs: &[f64], ys: &[f64]) -> serde_json::Value {
    match correlation_report(xs, ys) {
        Ok(r) => serde_json::to_value(r).expect("correlation serializes"),
        Err(e) => serde_json::json!({ "unavailable": e.to_string(), "n": xs.len() }),
    }
}

pub fn run(ctx: &Context, args: &Args) -> Result<()> {
    let lm = load_manifest(ctx)?;
    ensure_dir(&ctx.out_dir)?;
    let outputs = Outputs::default();
    let result = (|| {
        let results: Vec<(String, Result<PairReport>)> = lm
            .manifest
            .records
            .par_iter()
            .map(|rec| {
                let r = evaluate_one(rec, &lm, args).and_then(|rep| {
                    write_json(&outputs.track(ctx.out_dir.join(format!("{}.eval.json", rec.id))), &rep)?;
                    Ok(rep)
                });
                (rec.id.clone(), r)
            })
            .collect();
        let reports = collect_records(results)?;

        let mut w = csv_writer(&outputs.track(ctx.out_dir.join("evaluation_summary.csv")))?;
        w.write_record([
            "id",
            "participant",
            "modality",
            "eccentricity_deg",
            "group",
            "aggregate_iou",
            "aggregate_dice",
            "mean_matched_iou",
            "mean_matched_dice",
            "n_pred",
            "n_gt",
            "tp",
            "fp",
            "fn",
            "instance_precision",
            "instance_recall",
            "instance_f1",
            "center_precision",
            "center_recall",
            "center_f1",
        ])?;
        for r in &reports {
            let s = &r.segmentation;
            let d = &r.center_detection;
            w.write_record([
                r.id.clone(),
                r.participant.clone(),
                r.modality.to_string(),
                num(r.eccentricity_deg),
                r.group.to_string(),
                num(s.aggregate_iou),
                num(s.aggregate_dice),
                num(s.mean_matched_iou),
                num(s.mean_matched_dice),
                s.n_pred.to_string(),
                s.n_gt.to_string(),
                s.tp.to_string(),
                s.fp.to_string(),
                s.fn_.to_string(),
                num(s.detection_precision),
                num(s.detection_recall),
                num(s.detection_f1),
                num(d.precision),
                num(d.recall),
                num(d.f1),
            ])?;
        }
        w.flush()?;

        let mut w = csv_writer(&outputs.track(ctx.out_dir.join("evaluation_grouped.csv")))?;
        w.write_record(GROUPED_HEADER)?;
        let modalities: BTreeSet<Modality> = reports.iter().map(|r| r.modality).collect();
        for m in modalities {
            let of_m: Vec<&PairReport> = reports.iter().filter(|r| r.modality == m).collect();
            for g in [EccentricityGroup::CentralFovea, EccentricityGroup::Parafovea] {
                let sel: Vec<&PairReport> = of_m.iter().copied().filter(|r| r.group == g).collect();
                w.write_record(grouped_row(m, &g.to_string(), &sel))?;
            }
            w.write_record(grouped_row(m, "all", &of_m))?;
        }
        w.flush()?;

        let col = |f: fn(&PairReport) -> f64| reports.iter().map(f).collect::<Vec<f64>>();
        let corr = serde_json::json!({
            "n_images": reports.len(),
            "counts": correlation_json(&col(|r| r.segmentation.n_pred as f64), &col(|r| r.segmentation.n_gt as f64)),
            "densities": correlation_json(&col(|r| r.pred_density_per_mm2), &col(|r| r.gt_density_per_mm2)),
        });
        write_json(&outputs.track(ctx.out_dir.join("correlations.json")), &corr)?;
        Ok(())
    })();
    if result.is_err() {
        outputs.discard();
    }
    result
}
