//! Asymmetric power law for cone density against signed eccentricity, and its
//! fixed-effect and two-stage mixed-effect fits.
//!
//! For `r >= 0` the log density is `κ + k_s + (πₙ + p_ns)·ln(|r| + ρ + r_s)`.
//! For `r < 0` it is
//! `κ + k_s + (πₙ − πₜ + p_ns − p_ts)·ln(ρ + r_s) + (πₜ + p_ts)·ln(|r| + ρ + r_s)`,
//! which meets the first branch at `r = 0`. Everything is computed in natural
//! log; [`FitReport::in_log_base`] converts a finished report.

use crate::density::{DensitySample, MAX_ECCENTRICITY_DEG};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

pub const MAX_ITERATIONS: usize = 200;
pub const INITIAL_DAMPING: f64 = 1e-3;
pub const COST_TOLERANCE: f64 = 1e-10;
pub const STEP_TOLERANCE: f64 = 1e-12;
/// Parameters per fit: κ, πₙ, πₜ, ln ρ.
pub const N_PARAMS: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    #[error("offset ρ + r_s = {0} must be positive")]
    InvalidOffset(f64),
    #[error("sample {index} has non-positive density {density}")]
    NonPositiveDensity { index: usize, density: f64 },
    #[error("{got} samples cannot determine {needed} parameters")]
    Underdetermined { got: usize, needed: usize },
    #[error("fit diverged after {iterations} iterations (cost {cost})")]
    Diverged { iterations: usize, cost: f64 },
    #[error("participant {participant}: {source}")]
    Participant {
        participant: String,
        #[source]
        source: Box<FitError>,
    },
    #[error("unknown participant {0:?}")]
    UnknownParticipant(String),
    #[error("eccentricity {0}° outside ±{MAX_ECCENTRICITY_DEG}°")]
    OutOfRange(f64),
    #[error("invalid log base {0}")]
    InvalidLogBase(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerFitParams {
    pub kappa: f64,
    pub pi_n: f64,
    pub pi_t: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RandomEffects {
    pub k_s: f64,
    pub p_ns: f64,
    pub p_ts: f64,
    pub r_s: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct VarianceComponents {
    pub sigma2: f64,
    pub sigma2_s: f64,
    pub sigma2_ns: f64,
    pub sigma2_ts: f64,
    pub sigma2_rs: f64,
}

/// How the signed eccentricity of a sample maps onto the two branches.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignConvention {
    /// `r >= 0` uses the πₙ branch, as the model is written.
    #[default]
    Literal,
    /// Eccentricities are negated first, so nasal (negative) samples use πₙ.
    Flipped,
}

impl SignConvention {
    fn apply(self, r: f64) -> f64 {
        match self {
            SignConvention::Literal => r,
            SignConvention::Flipped => -r,
        }
    }
}

/// Exponent held equal to the other one because no sample constrains it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exponent {
    PiN,
    PiT,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FitOptions {
    pub sign_convention: SignConvention,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub params: PowerFitParams,
    pub effects: BTreeMap<String, RandomEffects>,
    pub variances: VarianceComponents,
    /// `ln d_i` minus the model, in input order.
    pub residuals: Vec<f64>,
    pub rms_log_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Exponents frozen per participant for lack of samples on one side.
    pub frozen: BTreeMap<String, Exponent>,
    pub sign_convention: SignConvention,
    /// Base of the logarithms in κ, the residuals and the variances.
    pub log_base: f64,
}

pub fn eval_log_density(params: &PowerFitParams, effects: &RandomEffects, r: f64) -> Result<f64, FitError> {
    let offset = params.rho + effects.r_s;
    if !(offset > 0.0) {
        return Err(FitError::InvalidOffset(offset));
    }
    let k = params.kappa + effects.k_s;
    let pn = params.pi_n + effects.p_ns;
    let l = (r.abs() + offset).ln();
    Ok(if r >= 0.0 {
        k + pn * l
    } else {
        let pt = params.pi_t + effects.p_ts;
        k + (pn - pt) * offset.ln() + pt * l
    })
}

/// Partials of the log density over (κ, πₙ, πₜ, ln ρ) with zero effects.
fn model_gradient(p: &PowerFitParams, r: f64) -> [f64; 4] {
    let a = r.abs() + p.rho;
    let l = a.ln();
    if r >= 0.0 {
        [1.0, l, 0.0, p.pi_n * p.rho / a]
    } else {
        let lr = p.rho.ln();
        [1.0, lr, l - lr, (p.pi_n - p.pi_t) + p.pi_t * p.rho / a]
    }
}

fn log_densities(samples: &[DensitySample]) -> Result<Vec<f64>, FitError> {
    samples
        .iter()
        .enumerate()
        .map(|(index, s)| {
            if s.density > 0.0 && s.density.is_finite() {
                Ok(s.density.ln())
            } else {
                Err(FitError::NonPositiveDensity { index, density: s.density })
            }
        })
        .collect()
}

/// Residuals `ln d_i − model(r_i)` and their partials over (κ, πₙ, πₜ, ln ρ).
pub fn residuals_jacobian(
    params: &PowerFitParams,
    samples: &[DensitySample],
) -> Result<(Vec<f64>, Vec<[f64; 4]>), FitError> {
    let ln_d = log_densities(samples)?;
    let rs: Vec<f64> = samples.iter().map(|s| s.eccentricity_deg).collect();
    residuals_jacobian_raw(params, &rs, &ln_d)
}

fn residuals_jacobian_raw(
    params: &PowerFitParams,
    rs: &[f64],
    ln_d: &[f64],
) -> Result<(Vec<f64>, Vec<[f64; 4]>), FitError> {
    let zero = RandomEffects::default();
    let mut res = Vec::with_capacity(rs.len());
    let mut jac = Vec::with_capacity(rs.len());
    for (&r, &y) in rs.iter().zip(ln_d) {
        res.push(y - eval_log_density(params, &zero, r)?);
        jac.push(model_gradient(params, r).map(|g| -g));
    }
    Ok((res, jac))
}

fn params_from(theta: &[f64; 4]) -> PowerFitParams {
    PowerFitParams { kappa: theta[0], pi_n: theta[1], pi_t: theta[2], rho: theta[3].exp() }
}

/// Maps the free parameters onto (κ, πₙ, πₜ, ln ρ).
fn expand(phi: &DVector<f64>, frozen: Option<Exponent>) -> [f64; 4] {
    match frozen {
        None => [phi[0], phi[1], phi[2], phi[3]],
        Some(_) => [phi[0], phi[1], phi[1], phi[2]],
    }
}

fn reduce_jacobian(jac: &[[f64; 4]], frozen: Option<Exponent>) -> DMatrix<f64> {
    let k = if frozen.is_some() { 3 } else { 4 };
    DMatrix::from_fn(jac.len(), k, |i, j| match (frozen, j) {
        (None, _) => jac[i][j],
        (Some(_), 0) => jac[i][0],
        (Some(_), 1) => jac[i][1] + jac[i][2],
        (Some(_), _) => jac[i][3],
    })
}

fn half_ssr(res: &[f64]) -> f64 {
    0.5 * res.iter().map(|e| e * e).sum::<f64>()
}

/// Gradient of the half squared residual below `1e-8 * (1 + cost)`.
fn gradient_small(jac: &[[f64; 4]], res: &[f64], frozen: Option<Exponent>) -> bool {
    let j = reduce_jacobian(jac, frozen);
    let g = j.transpose() * DVector::from_column_slice(res);
    g.norm() < 1e-8 * (1.0 + half_ssr(res))
}

struct LmOutcome {
    theta: [f64; 4],
    residuals: Vec<f64>,
    iterations: usize,
    converged: bool,
}

/// Change of the model between two parameter vectors, formed from the
/// parameter differences so it stays accurate when they are tiny.
fn model_change(theta: &[f64; 4], trial: &[f64; 4], r: f64) -> f64 {
    let d: [f64; 4] = std::array::from_fn(|i| trial[i] - theta[i]);
    let rho = theta[3].exp();
    let a = r.abs() + rho;
    let d_rho = rho * d[3].exp_m1();
    let d_l = (d_rho / a).ln_1p();
    let l_new = a.ln() + d_l;
    if r >= 0.0 {
        d[0] + d[1] * l_new + theta[1] * d_l
    } else {
        let gap = theta[1] - theta[2];
        d[0] + (d[1] - d[2]) * trial[3] + gap * d[3] + d[2] * l_new + theta[2] * d_l
    }
}

fn levenberg_marquardt(
    rs: &[f64],
    ln_d: &[f64],
    frozen: Option<Exponent>,
    mut trace: Option<&mut Vec<f64>>,
) -> Result<LmOutcome, FitError> {
    let init_k = ln_d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut theta = [init_k, -0.5, -0.5, 0.0];
    let mut phi = DVector::from_vec(match frozen {
        None => theta.to_vec(),
        Some(_) => vec![theta[0], theta[1], theta[3]],
    });

    let eval = |theta: &[f64; 4]| residuals_jacobian_raw(&params_from(theta), rs, ln_d);
    let (mut res, mut jac) = eval(&theta)?;
    let mut cost = half_ssr(&res);
    if let Some(t) = trace.as_deref_mut() {
        t.push(cost);
    }
    let mut lambda = INITIAL_DAMPING;
    let mut iterations = 0;
    let mut converged = false;
    let mut last_rejected = false;

    while iterations < MAX_ITERATIONS {
        if !cost.is_finite() {
            break;
        }
        iterations += 1;
        let j = reduce_jacobian(&jac, frozen);
        let g = j.transpose() * DVector::from_column_slice(&res);
        let jtj = j.transpose() * &j;
        let scale = jtj.diagonal().max().max(f64::MIN_POSITIVE);
        let mut a = jtj.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += lambda * jtj[(i, i)].max(1e-15 * scale);
        }
        let Some(ch) = a.cholesky() else {
            lambda *= 10.0;
            last_rejected = true;
            continue;
        };
        let step = -ch.solve(&g);
        let step_norm = step.norm();
        let trial_phi = &phi + &step;
        let trial_theta = expand(&trial_phi, frozen);
        // cost change computed directly rather than as a difference of costs
        let delta: f64 = rs
            .iter()
            .zip(&res)
            .map(|(&r, &e)| {
                let df = model_change(&theta, &trial_theta, r);
                df * (0.5 * df - e)
            })
            .sum();
        let trial = if delta.is_finite() && delta <= 0.0 { eval(&trial_theta).ok() } else { None };
        match trial {
            Some((tres, tjac)) => {
                let rel = if cost > 0.0 { -delta / cost } else { 0.0 };
                phi = trial_phi;
                theta = trial_theta;
                res = tres;
                jac = tjac;
                cost = (cost + delta).max(0.0);
                if let Some(t) = trace.as_deref_mut() {
                    t.push(cost);
                }
                lambda = (lambda / 10.0).max(1e-15);
                last_rejected = false;
                if cost == 0.0
                    || step_norm < STEP_TOLERANCE
                    || (rel < COST_TOLERANCE && gradient_small(&jac, &res, frozen))
                {
                    converged = true;
                    break;
                }
            }
            None => {
                lambda *= 10.0;
                last_rejected = true;
                if step_norm < STEP_TOLERANCE {
                    converged = true;
                    break;
                }
            }
        }
    }
    if !cost.is_finite() || (!converged && last_rejected) {
        return Err(FitError::Diverged { iterations, cost });
    }
    Ok(LmOutcome { theta, residuals: res, iterations, converged })
}

fn frozen_exponent(rs: &[f64]) -> Option<Exponent> {
    if !rs.iter().any(|&r| r < 0.0) {
        Some(Exponent::PiT)
    } else if !rs.iter().any(|&r| r >= 0.0) {
        Some(Exponent::PiN)
    } else {
        None
    }
}

fn rms(res: &[f64]) -> f64 {
    if res.is_empty() {
        0.0
    } else {
        (res.iter().map(|e| e * e).sum::<f64>() / res.len() as f64).sqrt()
    }
}

struct Stage {
    theta: [f64; 4],
    residuals: Vec<f64>,
    iterations: usize,
    converged: bool,
    frozen: Option<Exponent>,
}

impl Stage {
    fn n_free(&self) -> usize {
        if self.frozen.is_some() {
            N_PARAMS - 1
        } else {
            N_PARAMS
        }
    }
}

fn fit_one(samples: &[DensitySample], options: &FitOptions) -> Result<Stage, FitError> {
    if samples.len() < N_PARAMS {
        return Err(FitError::Underdetermined { got: samples.len(), needed: N_PARAMS });
    }
    let ln_d = log_densities(samples)?;
    let rs: Vec<f64> = samples.iter().map(|s| options.sign_convention.apply(s.eccentricity_deg)).collect();
    let frozen = frozen_exponent(&rs);
    let out = levenberg_marquardt(&rs, &ln_d, frozen, None)?;
    Ok(Stage { theta: out.theta, residuals: out.residuals, iterations: out.iterations, converged: out.converged, frozen })
}

fn group_by_participant(samples: &[DensitySample]) -> BTreeMap<String, Vec<usize>> {
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        groups.entry(s.participant_id.clone()).or_default().push(i);
    }
    groups
}

/// One set of parameters for all samples; every participant gets zero effects.
pub fn fit_fixed(samples: &[DensitySample]) -> Result<FitReport, FitError> {
    fit_fixed_with(samples, &FitOptions::default())
}

pub fn fit_fixed_with(samples: &[DensitySample], options: &FitOptions) -> Result<FitReport, FitError> {
    let stage = fit_one(samples, options)?;
    let groups = group_by_participant(samples);
    let sigma2 = stage.residuals.iter().map(|e| e * e).sum::<f64>() / dof(samples.len(), stage.n_free());
    Ok(FitReport {
        params: params_from(&stage.theta),
        effects: groups.keys().map(|k| (k.clone(), RandomEffects::default())).collect(),
        variances: VarianceComponents { sigma2, ..Default::default() },
        rms_log_residual: rms(&stage.residuals),
        residuals: stage.residuals,
        iterations: stage.iterations,
        converged: stage.converged,
        frozen: stage.frozen.map(|f| groups.keys().map(|k| (k.clone(), f)).collect()).unwrap_or_default(),
        sign_convention: options.sign_convention,
        log_base: std::f64::consts::E,
    })
}

fn dof(n: usize, p: usize) -> f64 {
    n.saturating_sub(p).max(1) as f64
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Per-participant fits, then fixed effects as their means and random effects
/// as deviations from those means.
pub fn fit_two_stage(samples: &[DensitySample]) -> Result<FitReport, FitError> {
    fit_two_stage_with(samples, &FitOptions::default())
}

pub fn fit_two_stage_with(samples: &[DensitySample], options: &FitOptions) -> Result<FitReport, FitError> {
    let groups = group_by_participant(samples);
    if groups.is_empty() {
        return Err(FitError::Underdetermined { got: 0, needed: N_PARAMS });
    }
    let mut stages = BTreeMap::new();
    for (id, idx) in &groups {
        let subset: Vec<DensitySample> = idx.iter().map(|&i| samples[i].clone()).collect();
        let stage = fit_one(&subset, options)
            .map_err(|e| FitError::Participant { participant: id.clone(), source: Box::new(e) })?;
        stages.insert(id.clone(), stage);
    }

    let column = |c: usize| -> Vec<f64> { stages.values().map(|s| s.theta[c]).collect() };
    let theta_bar = [mean(&column(0)), mean(&column(1)), mean(&column(2)), mean(&column(3))];
    let params = params_from(&theta_bar);

    let mut effects = BTreeMap::new();
    for (id, s) in &stages {
        let p = params_from(&s.theta);
        effects.insert(
            id.clone(),
            RandomEffects {
                k_s: p.kappa - params.kappa,
                p_ns: p.pi_n - params.pi_n,
                p_ts: p.pi_t - params.pi_t,
                r_s: p.rho - params.rho,
            },
        );
    }

    let mut residuals = vec![0.0; samples.len()];
    for (id, idx) in &groups {
        let eff = &effects[id];
        for &i in idx {
            let r = options.sign_convention.apply(samples[i].eccentricity_deg);
            residuals[i] = samples[i].density.ln() - eval_log_density(&params, eff, r)?;
        }
    }

    let dev = |f: fn(&RandomEffects) -> f64| -> Vec<f64> { effects.values().map(f).collect() };
    let n_free: usize = stages.values().map(Stage::n_free).sum();
    let variances = VarianceComponents {
        sigma2: residuals.iter().map(|e| e * e).sum::<f64>() / dof(samples.len(), n_free),
        sigma2_s: sample_variance(&dev(|e| e.k_s)),
        sigma2_ns: sample_variance(&dev(|e| e.p_ns)),
        sigma2_ts: sample_variance(&dev(|e| e.p_ts)),
        sigma2_rs: sample_variance(&dev(|e| e.r_s)),
    };

    Ok(FitReport {
        params,
        effects,
        variances,
        rms_log_residual: rms(&residuals),
        residuals,
        iterations: stages.values().map(|s| s.iterations).sum(),
        converged: stages.values().all(|s| s.converged),
        frozen: stages.iter().filter_map(|(id, s)| s.frozen.map(|f| (id.clone(), f))).collect(),
        sign_convention: options.sign_convention,
        log_base: std::f64::consts::E,
    })
}

impl FitReport {
    /// Re-expresses the report for `log_base`. The exponents and ρ do not
    /// change: both sides of the model switch base together.
    pub fn in_log_base(&self, base: f64) -> Result<FitReport, FitError> {
        if !(base > 0.0 && base.is_finite() && base != 1.0) {
            return Err(FitError::InvalidLogBase(base));
        }
        let c = self.log_base.ln() / base.ln();
        let mut out = self.clone();
        out.params.kappa *= c;
        for e in out.effects.values_mut() {
            e.k_s *= c;
        }
        out.variances.sigma2 *= c * c;
        out.variances.sigma2_s *= c * c;
        for r in &mut out.residuals {
            *r *= c;
        }
        out.rms_log_residual *= c;
        out.log_base = base;
        Ok(out)
    }

    fn natural(&self) -> (PowerFitParams, BTreeMap<String, RandomEffects>) {
        let c = self.log_base.ln();
        let mut p = self.params;
        p.kappa *= c;
        let effects = self.effects.iter().map(|(k, e)| (k.clone(), RandomEffects { k_s: e.k_s * c, ..*e })).collect();
        (p, effects)
    }
}

/// `(r, density)` along `r_grid`, for one participant or the population.
pub fn predict_curve(
    report: &FitReport,
    r_grid: &[f64],
    participant: Option<&str>,
) -> Result<Vec<(f64, f64)>, FitError> {
    let (params, effects) = report.natural();
    let eff = match participant {
        None => RandomEffects::default(),
        Some(id) => *effects.get(id).ok_or_else(|| FitError::UnknownParticipant(id.to_string()))?,
    };
    r_grid
        .iter()
        .map(|&r| {
            if !(r.abs() <= MAX_ECCENTRICITY_DEG) {
                return Err(FitError::OutOfRange(r));
            }
            let f = eval_log_density(&params, &eff, report.sign_convention.apply(r))?;
            Ok((r, f.exp()))
        })
        .collect()
}
