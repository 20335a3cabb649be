use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::{
    self, c2_c3_with_factor, BoundTerms, ConvergenceParams, TrajectoryDiagnostics,
};
use crate::error::Result;
use crate::fl::{initial_model, CoefficientSchedule, Trajectory};
use crate::rng::{stream, Purpose};

use super::config::ExperimentConfig;
use super::suite::{load_summary, load_trajectory, write_json};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedDiagnostics {
    pub seed: u64,
    /// `(m, B̂)` pairs; `None` where the gradient was too small.
    pub b_hat: Vec<(usize, Option<f64>)>,
    /// A lower estimate of the true smoothness constant.
    pub l_hat: f64,
    pub params: Option<ConvergenceParams>,
    pub c1: Option<f64>,
    pub c2_first: Option<f64>,
    pub c3_first: Option<f64>,
    pub bound: Option<BoundTerms>,
    pub bound_error: Option<String>,
    pub min_grad_norm_sq: Option<f64>,
    pub bound_holds: Option<bool>,
    /// Observed maxima of the step and gradient norms.
    pub max_step: f64,
    pub max_grad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub label: String,
    pub empirical_fstar: Option<f64>,
    pub seeds: Vec<SeedDiagnostics>,
    pub note: String,
}

/// μ seen by the convergence analysis: the proximal weight, or the
/// schedule's own μ for non-proximal baselines.
pub fn analysis_mu(cfg: &ExperimentConfig) -> Option<f64> {
    let mu = cfg.run.strategy.prox_mu();
    if mu > 0.0 {
        return Some(mu);
    }
    match cfg.run.upcycled.map(|u| u.schedule) {
        Some(CoefficientSchedule::Prox { mu, .. }) => Some(mu),
        _ => None,
    }
}

/// Diagnostics for one seed of a finished run.
pub fn diagnose_seed(
    cfg: &ExperimentConfig,
    seed: u64,
    trajectory: &Trajectory,
    fstar: f64,
    probe_count: usize,
) -> Result<SeedDiagnostics> {
    let dataset = cfg.dataset.build(seed)?;
    let l_hat = analysis::estimate_smoothness(
        &dataset,
        probe_count,
        &mut stream(seed, Purpose::Probe, 0, 0),
    )?;
    let diags = TrajectoryDiagnostics::from_trajectory(trajectory);
    let b = trajectory
        .dissimilarity
        .first()
        .and_then(|p| p.b_hat)
        .map(Ok)
        .unwrap_or_else(|| {
            let init = initial_model(&cfg.run_for_seed(seed), dataset.model_shape());
            analysis::estimate_dissimilarity(&dataset, &init)
        });
    let mut out = SeedDiagnostics {
        seed,
        b_hat: trajectory
            .dissimilarity
            .iter()
            .map(|p| (p.m, p.b_hat))
            .collect(),
        l_hat,
        params: None,
        c1: None,
        c2_first: None,
        c3_first: None,
        bound: None,
        bound_error: None,
        min_grad_norm_sq: diags.min_grad_norm_sq(),
        bound_holds: None,
        max_step: diags.max_step(),
        max_grad: diags.max_grad(),
    };
    let (mu, b) = match (analysis_mu(cfg), b) {
        (Some(mu), Ok(b)) => (mu, b),
        (None, _) => {
            out.bound_error = Some("no proximal μ in this configuration".into());
            return Ok(out);
        }
        (_, Err(e)) => {
            out.bound_error = Some(e.to_string());
            return Ok(out);
        }
    };
    let first_c = diags.points.first().map_or(0.0, |p| p.coefficient);
    let params = ConvergenceParams {
        l: l_hat.max(f64::MIN_POSITIVE),
        b,
        mu,
        rho: mu,
        k: trajectory.selected_per_round.max(1),
        lambda: if first_c > 0.0 { mu * (1.0 - first_c) / first_c } else { f64::INFINITY },
        h: Some(out.max_step),
        d: Some(out.max_grad),
    };
    let (c2, c3) = c2_c3_with_factor(&params, first_c);
    out.c1 = Some(analysis::c1(&params));
    out.c2_first = Some(c2);
    out.c3_first = Some(c3);
    out.params = Some(params);
    match analysis::theorem1_bound_recorded(
        &diags,
        &params,
        trajectory.initial_loss - fstar,
        diags.points.len().max(1),
    ) {
        Ok(bound) => {
            out.bound_holds = out.min_grad_norm_sq.map(|g| g <= bound.total);
            out.bound = Some(bound);
        }
        Err(e) => out.bound_error = Some(e.to_string()),
    }
    Ok(out)
}

/// Reads a suite directory and writes `diagnostics.json` beside its summary.
pub fn analyze_run(dir: &Path, probe_count: usize) -> Result<DiagnosticsReport> {
    let summary = load_summary(dir)?;
    let fixed = summary.config.dataset.is_fixed();
    let mut seeds = Vec::new();
    for s in &summary.seeds {
        // Seeds with their own dataset only share an optimum with themselves.
        let fstar = if fixed { summary.empirical_fstar } else { s.best_train_loss };
        let fstar = fstar.unwrap_or(0.0);
        let t = load_trajectory(dir, s.seed)?;
        seeds.push(diagnose_seed(&summary.config, s.seed, &t, fstar, probe_count)?);
    }
    let report = DiagnosticsReport {
        label: summary.label.clone(),
        empirical_fstar: summary.empirical_fstar,
        seeds,
        note: "f* is the empirical best train loss over runs on the same dataset; \
               L is a probe-based lower estimate; rho = mu; B from the initial model"
            .into(),
    };
    write_json(&dir.join("diagnostics.json"), &report)?;
    Ok(report)
}
