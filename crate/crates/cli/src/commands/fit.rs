use crate::output::{csv_writer, ensure_dir, num, write_json, Outputs};
use crate::Context;
use anyhow::{bail, Context as _, Result};
use clap::ValueEnum;
use cone_mosaic::density::load_density_table;
use cone_mosaic::fit::{fit_fixed_with, fit_two_stage_with, predict_curve, FitOptions, FitReport, SignConvention};
use serde::Serialize;
use std::collections::BTreeSet;
use std::path::PathBuf;

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sign {
    /// Non-negative eccentricities use the nasal exponent.
    Literal,
    /// Negative (nasal) eccentricities use the nasal exponent.
    Flipped,
}

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Density table written by `density`.
    pub table: PathBuf,
    /// Per-participant fits pooled into fixed and random effects.
    #[arg(long)]
    pub two_stage: bool,
    /// Logarithm base for the reported intercept and variances: e, 2, 10 or any number > 0.
    #[arg(long, default_value = "e")]
    pub log_base: String,
    #[arg(long, value_enum, default_value_t = Sign::Literal)]
    pub sign_convention: Sign,
}

#[derive(Serialize)]
struct FitOutput<'a> {
    model: &'static str,
    n_samples: usize,
    n_participants: usize,
    #[serde(flatten)]
    report: &'a FitReport,
}

fn parse_base(s: &str) -> Result<f64> {
    let b = match s.trim() {
        "e" | "ln" | "natural" => std::f64::consts::E,
        other => other.parse::<f64>().with_context(|| format!("invalid --log-base {other:?}"))?,
    };
    if !(b > 0.0 && b.is_finite() && b != 1.0) {
        bail!("--log-base must be positive and not 1, got {s}");
    }
    Ok(b)
}

/// `r = -10, -9.9, ..., 10` degrees.
pub fn curve_grid() -> Vec<f64> {
    (0..=200).map(|i| (i as f64 - 100.0) / 10.0).collect()
}

pub fn run(ctx: &Context, args: &Args) -> Result<()> {
    let base = parse_base(&args.log_base)?;
    let samples = load_density_table(&args.table)?;
    let options = FitOptions {
        sign_convention: match args.sign_convention {
            Sign::Literal => SignConvention::Literal,
            Sign::Flipped => SignConvention::Flipped,
        },
    };
    let report = if args.two_stage { fit_two_stage_with(&samples, &options) } else { fit_fixed_with(&samples, &options) }
        .with_context(|| format!("fitting {}", args.table.display()))?;
    let report = if base == std::f64::consts::E { report } else { report.in_log_base(base)? };

    ensure_dir(&ctx.out_dir)?;
    let outputs = Outputs::default();
    let result = (|| {
        let participants: BTreeSet<&str> = samples.iter().map(|s| s.participant_id.as_str()).collect();
        let out = FitOutput {
            model: if args.two_stage { "two_stage" } else { "fixed" },
            n_samples: samples.len(),
            n_participants: participants.len(),
            report: &report,
        };
        write_json(&outputs.track(ctx.out_dir.join("fit_report.json")), &out)?;

        let grid = curve_grid();
        let mut w = csv_writer(&outputs.track(ctx.out_dir.join("fit_curve.csv")))?;
        w.write_record(["curve", "eccentricity_deg", "density_per_mm2"])?;
        for (r, d) in predict_curve(&report, &grid, None)? {
            w.write_record(["population".to_string(), num(r), num(d)])?;
        }
        if args.two_stage {
            for id in &participants {
                for (r, d) in predict_curve(&report, &grid, Some(id))? {
                    w.write_record([id.to_string(), num(r), num(d)])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    })();
    if result.is_err() {
        outputs.discard();
    }
    result
}
