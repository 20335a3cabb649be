use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::FederatedDataset;
use crate::error::{Error, Result};
use crate::fl::Trajectory;
use crate::models::{LocalObjective, ModelVector};
use crate::rng::Stream;

/// Below this global gradient norm B̂ is not reported.
pub const GRADIENT_TOLERANCE: f64 = 1e-8;

/// Full-batch gradients: `(∇f(ω), [∇F_i(ω)])`, with `f = Σ p_i F_i`.
pub fn global_gradient(
    dataset: &FederatedDataset,
    omega: &ModelVector,
) -> Result<(ModelVector, Vec<ModelVector>)> {
    let shape = dataset.model_shape();
    let per_device: Vec<Result<ModelVector>> = dataset
        .devices()
        .par_iter()
        .map(|d| LocalObjective::new(&d.train, shape).gradient(omega))
        .collect();
    let per_device: Vec<ModelVector> = per_device.into_iter().collect::<Result<_>>()?;
    let mut global = ModelVector::zeros(shape);
    for (g, p) in per_device.iter().zip(dataset.device_weights()) {
        global.add_scaled(p, g)?;
    }
    Ok((global, per_device))
}

/// `B̂(ω) = √(Σ p_i‖∇F_i‖² / ‖Σ p_i∇F_i‖²)`.
pub fn estimate_dissimilarity(dataset: &FederatedDataset, omega: &ModelVector) -> Result<f64> {
    let (global, per_device) = global_gradient(dataset, omega)?;
    let denom = global.norm_sq();
    if denom.sqrt() <= GRADIENT_TOLERANCE {
        return Err(Error::Diagnostic(format!(
            "global gradient norm {:.3e} is below {GRADIENT_TOLERANCE:e}; \
             evaluate B̂ at a point away from a stationary point",
            denom.sqrt()
        )));
    }
    let num: f64 = per_device
        .iter()
        .zip(dataset.device_weights())
        .map(|(g, p)| p * g.norm_sq())
        .sum();
    Ok((num / denom).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceParams {
    /// Smoothness.
    pub l: f64,
    /// Dissimilarity.
    pub b: f64,
    pub mu: f64,
    /// Strong convexity of the local objectives.
    pub rho: f64,
    /// Clients sampled per round.
    pub k: usize,
    pub lambda: f64,
    #[serde(default)]
    pub h: Option<f64>,
    #[serde(default)]
    pub d: Option<f64>,
}

impl ConvergenceParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.l > 0.0
            && self.b >= 0.0
            && self.mu > 0.0
            && self.rho > 0.0
            && self.k >= 1
            && self.lambda >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid convergence parameters {self:?}")))
        }
    }

    /// `μ/(μ+λ)`.
    pub fn factor(&self) -> f64 {
        if self.lambda.is_infinite() {
            0.0
        } else {
            self.mu / (self.mu + self.lambda)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

/// C1 does not involve λ.
pub fn c1(p: &ConvergenceParams) -> f64 {
    let (l, b, mu, rho) = (p.l, p.b, p.mu, p.rho);
    let k = p.k as f64;
    let s = (2.0 / k).sqrt();
    1.0 / mu
        - l * b / (mu * mu * rho)
        - l * b * b / (2.0 * rho * rho)
        - 2.0 * b * b / (k * rho * rho)
        - ((2.0 * l * b + rho) / rho) * s * (b / rho)
}

/// C2 and C3 with an explicit multiplier in place of `μ/(μ+λ)`.
pub fn c2_c3_with_factor(p: &ConvergenceParams, factor: f64) -> (f64, f64) {
    let (l, b, mu, rho) = (p.l, p.b, p.mu, p.rho);
    let k = p.k as f64;
    let s = (2.0 / k).sqrt();
    let c2 = (l * l / (mu * mu * rho)
        + (l + mu) / (mu * mu)
        + l * (l + rho) * b / (rho * rho)
        + 4.0 * l * b / (k * rho * rho)
        + ((4.0 * l * l * b + rho * l * (1.0 + 2.0 * b)) / (rho * rho)) * s)
        * factor;
    let c3 = (l * (l + rho).powi(2) / (2.0 * rho * rho)
        + (2.0 / k) * l * l / (rho * rho)
        + 2.0 * l * ((l + rho) / rho) * s * (l / rho))
        * factor
        * factor;
    (c2, c3)
}

pub fn constants(p: &ConvergenceParams) -> Constants {
    let (c2, c3) = c2_c3_with_factor(p, p.factor());
    Constants { c1: c1(p), c2, c3 }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticPoint {
    pub m: usize,
    pub grad_norm: f64,
    pub step_norm: f64,
    pub h1: f64,
    pub h2: f64,
    /// Extrapolation coefficient applied after this step.
    pub coefficient: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryDiagnostics {
    pub points: Vec<DiagnosticPoint>,
}

impl TrajectoryDiagnostics {
    pub fn from_norms(norms: &[(f64, f64)]) -> Self {
        let points = norms
            .iter()
            .enumerate()
            .map(|(i, &(g, s))| DiagnosticPoint {
                m: i + 1,
                grad_norm: g,
                step_norm: s,
                h1: g * s,
                h2: s * s,
                coefficient: 0.0,
            })
            .collect();
        Self { points }
    }

    pub fn from_trajectory(t: &Trajectory) -> Self {
        let points = t
            .points
            .iter()
            .map(|p| DiagnosticPoint {
                m: p.m,
                grad_norm: p.grad_norm,
                step_norm: p.step_norm,
                h1: p.grad_norm * p.step_norm,
                h2: p.step_norm * p.step_norm,
                coefficient: p.coefficient,
            })
            .collect();
        Self { points }
    }

    pub fn min_grad_norm_sq(&self) -> Option<f64> {
        self.points
            .iter()
            .map(|p| p.grad_norm * p.grad_norm)
            .min_by(f64::total_cmp)
    }

    pub fn max_step(&self) -> f64 {
        self.points.iter().map(|p| p.step_norm).fold(0.0, f64::max)
    }

    pub fn max_grad(&self) -> f64 {
        self.points.iter().map(|p| p.grad_norm).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundTerms {
    pub initial: f64,
    pub first_order: f64,
    pub second_order: f64,
    pub total: f64,
    pub c1: f64,
}

/// Right-hand side of the convergence bound with constant λ:
/// `(f0 − f*)/(M·C1) + C2·Σh1/(M·C1) + C3·Σh2/(M·C1)`, sums over the first
/// `M` recorded points.
pub fn theorem1_bound(
    diags: &TrajectoryDiagnostics,
    params: &ConvergenceParams,
    f0_minus_fstar: f64,
    m_total: usize,
) -> Result<BoundTerms> {
    let factor = params.factor();
    bound_with(diags, params, f0_minus_fstar, m_total, |_| factor)
}

/// Same bound with the per-step factor taken from the recorded
/// extrapolation coefficients, for runs whose `c_m` varies.
pub fn theorem1_bound_recorded(
    diags: &TrajectoryDiagnostics,
    params: &ConvergenceParams,
    f0_minus_fstar: f64,
    m_total: usize,
) -> Result<BoundTerms> {
    bound_with(diags, params, f0_minus_fstar, m_total, |p| p.coefficient)
}

fn bound_with(
    diags: &TrajectoryDiagnostics,
    params: &ConvergenceParams,
    f0_minus_fstar: f64,
    m_total: usize,
    factor: impl Fn(&DiagnosticPoint) -> f64,
) -> Result<BoundTerms> {
    params.validate()?;
    if m_total < 1 {
        return Err(Error::Config("M must be ≥ 1".into()));
    }
    let c1 = c1(params);
    if c1 <= 0.0 {
        return Err(Error::BoundInapplicable { c1 });
    }
    let denom = m_total as f64 * c1;
    let (mut first, mut second) = (0.0, 0.0);
    for p in diags.points.iter().take(m_total) {
        let (c2, c3) = c2_c3_with_factor(params, factor(p));
        first += c2 * p.h1;
        second += c3 * p.h2;
    }
    let initial = f0_minus_fstar / denom;
    let first_order = first / denom;
    let second_order = second / denom;
    Ok(BoundTerms {
        initial,
        first_order,
        second_order,
        total: initial + first_order + second_order,
        c1,
    })
}

/// Lower estimate of L: largest `‖∇f(ω₁) − ∇f(ω₂)‖/‖ω₁ − ω₂‖` over random
/// nearby pairs. Pairs are drawn sequentially, so more probes never lower it.
pub fn estimate_smoothness(
    dataset: &FederatedDataset,
    probe_count: usize,
    rng: &mut Stream,
) -> Result<f64> {
    let shape = dataset.model_shape();
    estimate_smoothness_of(
        |w: &[f64]| {
            let omega = ModelVector::from_values(shape, w.to_vec())?;
            Ok(global_gradient(dataset, &omega)?.0.into_values())
        },
        shape.len(),
        probe_count,
        rng,
    )
}

/// Probe centres are standard normal; partners sit at distance ~0.01·√dim.
pub fn estimate_smoothness_of(
    mut gradient: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    dim: usize,
    probe_count: usize,
    rng: &mut Stream,
) -> Result<f64> {
    if probe_count < 1 {
        return Err(Error::Config("probe_count must be ≥ 1".into()));
    }
    let mut best: f64 = 0.0;
    for _ in 0..probe_count {
        let a: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let b: Vec<f64> = a
            .iter()
            .map(|x| x + 0.01 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let ga = gradient(&a)?;
        let gb = gradient(&b)?;
        let dg: f64 = ga.iter().zip(&gb).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let dw: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        if dw > 0.0 {
            best = best.max(dg / dw);
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, DeviceShard, Sample, SyntheticSpec};
    use crate::rng::{stream, Purpose};

    fn params() -> ConvergenceParams {
        ConvergenceParams {
            l: 1.0,
            b: 1.0,
            mu: 1.0,
            rho: 2.0,
            k: 9,
            lambda: 0.0,
            h: None,
            d: None,
        }
    }

    fn toy(devices: usize, identical: bool) -> FederatedDataset {
        let shards = (0..devices)
            .map(|i| {
                let shift = if identical { 0.0 } else { i as f64 };
                let train = (0..6)
                    .map(|j| Sample {
                        features: vec![j as f64 * 0.3 - shift, 1.0 + shift * 0.5],
                        label: (j + i * (!identical as usize)) % 3,
                    })
                    .collect();
                DeviceShard {
                    device_id: i as u32,
                    train,
                    test: Vec::new(),
                }
            })
            .collect();
        FederatedDataset::new(shards, 2, 3, None).unwrap()
    }

    #[test]
    fn single_device_dissimilarity_is_one() {
        let ds = toy(1, false);
        let w = ModelVector::zeros(ds.model_shape());
        assert!((estimate_dissimilarity(&ds, &w).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_shards_dissimilarity_is_one() {
        let ds = toy(5, true);
        let w = ModelVector::zeros(ds.model_shape());
        assert!((estimate_dissimilarity(&ds, &w).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn heterogeneous_shards_exceed_one() {
        let ds = toy(5, false);
        let w = ModelVector::zeros(ds.model_shape());
        assert!(estimate_dissimilarity(&ds, &w).unwrap() > 1.0);
    }

    #[test]
    fn heterogeneity_raises_dissimilarity() {
        let (mut het, mut hom) = (0.0, 0.0);
        for seed in 0..4 {
            let mk = |b: f64, g: f64| generate_synthetic(&SyntheticSpec::standard(b, g, false, seed)).unwrap();
            let (a, b) = (mk(1.0, 1.0), mk(0.0, 0.0));
            let w = ModelVector::zeros(a.model_shape());
            het += estimate_dissimilarity(&a, &w).unwrap() / 4.0;
            hom += estimate_dissimilarity(&b, &w).unwrap() / 4.0;
        }
        assert!(het > hom, "{het} vs {hom}");
    }

    #[test]
    fn stationary_point_is_diagnostic_error() {
        let shards = vec![DeviceShard {
            device_id: 0,
            train: vec![
                Sample { features: vec![0.0], label: 0 },
                Sample { features: vec![0.0], label: 1 },
            ],
            test: Vec::new(),
        }];
        let ds = FederatedDataset::new(shards, 1, 2, None).unwrap();
        let w = ModelVector::zeros(ds.model_shape());
        assert!(matches!(estimate_dissimilarity(&ds, &w), Err(Error::Diagnostic(_))));
    }

    #[test]
    fn zero_dissimilarity_gives_inverse_mu() {
        let p = ConvergenceParams { b: 0.0, mu: 0.37, ..params() };
        assert_eq!(c1(&p), 1.0 / 0.37);
    }

    #[test]
    fn c2_c3_decrease_with_lambda() {
        let a = constants(&params());
        let b = constants(&ConvergenceParams { lambda: 1.0, ..params() });
        assert!(b.c2 < a.c2 && b.c3 < a.c3);
        assert_eq!(a.c1, b.c1);
        let inf = constants(&ConvergenceParams { lambda: f64::INFINITY, ..params() });
        assert_eq!((inf.c2, inf.c3), (0.0, 0.0));
    }

    #[test]
    fn stationary_trajectory_bound_is_initial_term() {
        let p = ConvergenceParams { b: 0.0, ..params() };
        let diags = TrajectoryDiagnostics::from_norms(&[(0.0, 0.0); 5]);
        let t = theorem1_bound(&diags, &p, 2.0, 5).unwrap();
        assert_eq!(t.total, 2.0 / (5.0 * c1(&p)));
        let t2 = theorem1_bound(&diags, &p, 2.0, 10).unwrap();
        assert!((t2.initial - t.initial / 2.0).abs() < 1e-15);
    }

    #[test]
    fn negative_c1_is_inapplicable() {
        let p = ConvergenceParams { b: 5.0, ..params() };
        let diags = TrajectoryDiagnostics::from_norms(&[(1.0, 1.0)]);
        assert!(matches!(
            theorem1_bound(&diags, &p, 1.0, 1),
            Err(Error::BoundInapplicable { .. })
        ));
    }

    #[test]
    fn h_identities() {
        let d = TrajectoryDiagnostics::from_norms(&[(2.0, 0.5), (0.3, 0.1)]);
        for p in &d.points {
            assert!((p.h1 - p.grad_norm * p.step_norm).abs() < 1e-12);
            assert!((p.h2 - p.step_norm.powi(2)).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_gradient_has_zero_smoothness() {
        let mut rng = stream(1, Purpose::Probe, 0, 0);
        let l = estimate_smoothness_of(|_| Ok(vec![1.0, -2.0, 0.5]), 3, 10, &mut rng).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn smoothness_monotone_in_probes() {
        let ds = toy(3, false);
        let est = |n| estimate_smoothness(&ds, n, &mut stream(5, Purpose::Probe, 0, 0)).unwrap();
        let (a, b, c) = (est(1), est(4), est(12));
        assert!(a <= b && b <= c);
        assert!(a > 0.0);
    }

    #[test]
    fn scaling_features_raises_smoothness() {
        let ds = toy(3, false);
        let doubled = FederatedDataset::new(
            ds.devices()
                .iter()
                .map(|d| DeviceShard {
                    device_id: d.device_id,
                    train: d
                        .train
                        .iter()
                        .map(|s| Sample {
                            features: s.features.iter().map(|x| 2.0 * x).collect(),
                            label: s.label,
                        })
                        .collect(),
                    test: Vec::new(),
                })
                .collect(),
            2,
            3,
            None,
        )
        .unwrap();
        let l1 = estimate_smoothness(&ds, 8, &mut stream(2, Purpose::Probe, 0, 0)).unwrap();
        let l2 = estimate_smoothness(&doubled, 8, &mut stream(2, Purpose::Probe, 0, 0)).unwrap();
        assert!(l2 > l1, "{l2} vs {l1}");
    }
}
