//! Output perturbation (clip + Gaussian), objective perturbation (linear
//! noise with density ∝ exp(−α‖n‖)), closed-form accountants and per-client
//! privacy ledgers.
//!
//! Only training rounds touch client data, so only they spend budget. An
//! extrapolation round is post-processing of already-private aggregates and
//! is recorded as a zero-cost event.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{ModelVector, Shape};
use crate::rng::Stream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutputNoiseSpec {
    /// Clipping threshold τ.
    pub tau: f64,
    /// Gaussian standard deviation σ.
    pub sigma: f64,
}

impl OutputNoiseSpec {
    pub fn new(tau: f64, sigma: f64) -> Result<Self> {
        if !(tau > 0.0 && sigma > 0.0) {
            return Err(Error::Config(format!(
                "output perturbation needs tau > 0 and sigma > 0 (got tau={tau}, sigma={sigma})"
            )));
        }
        Ok(Self { tau, sigma })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveNoiseSpec {
    /// Noise density parameter α per training round.
    pub alpha: f64,
    /// Per-sample gradient norm bound.
    pub u1: f64,
    /// Per-sample second-derivative bound.
    pub u2: f64,
}

impl ObjectiveNoiseSpec {
    pub const DEFAULT_U1: f64 = std::f64::consts::SQRT_2;
    pub const DEFAULT_U2: f64 = 0.5;

    pub fn new(alpha: f64, u1: f64, u2: f64) -> Result<Self> {
        if !(alpha > 0.0 && u1 > 0.0 && u2 > 0.0) {
            return Err(Error::Config(format!(
                "objective perturbation needs alpha, u1, u2 > 0 (got {alpha}, {u1}, {u2})"
            )));
        }
        Ok(Self { alpha, u1, u2 })
    }

    /// Fails with the first client whose shard violates `u2 ≤ 0.5·|D_i|·μ`.
    pub fn check_feasibility(&self, sample_counts: &[usize], mu: f64) -> Result<()> {
        for (client, &n) in sample_counts.iter().enumerate() {
            if !(self.u2 <= 0.5 * n as f64 * mu) {
                return Err(Error::Domain(format!(
                    "client {client}: objective perturbation requires u2 ≤ 0.5·|D_i|·μ, \
                     but u2 = {} and 0.5·{n}·{mu} = {}",
                    self.u2,
                    0.5 * n as f64 * mu
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mechanism", rename_all = "lowercase")]
pub enum Mechanism {
    Output(OutputNoiseSpec),
    Objective(ObjectiveNoiseSpec),
}

impl Mechanism {
    pub fn tag(&self) -> MechanismTag {
        match self {
            Mechanism::Output(_) => MechanismTag::Output,
            Mechanism::Objective(_) => MechanismTag::Objective,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MechanismTag {
    Output,
    Objective,
}

// ---------------------------------------------------------------------------
// Mechanisms
// ---------------------------------------------------------------------------

/// `ω / max(1, ‖ω‖/τ)`.
pub fn clip(omega: &ModelVector, tau: f64) -> ModelVector {
    let norm = omega.norm();
    if norm <= tau {
        omega.clone()
    } else {
        omega.scale(tau / norm)
    }
}

/// `ω + n` with `n` entrywise `N(0, σ²)`.
pub fn gaussian_perturb(omega: &ModelVector, sigma: f64, rng: &mut Stream) -> ModelVector {
    let values = omega
        .values()
        .iter()
        .map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    ModelVector::from_raw(omega.shape(), values)
}

/// Draws `n ∈ R^dim` with density ∝ `exp(−α‖n‖₂)`: the norm is
/// `Gamma(shape = dim, rate = α)` and the direction is uniform on the sphere.
pub fn sample_exp_norm_noise(dim: usize, alpha: f64, rng: &mut Stream) -> Vec<f64> {
    assert!(dim >= 1 && alpha > 0.0, "need dim ≥ 1 and alpha > 0");
    let radius = Gamma::new(dim as f64, 1.0 / alpha)
        .expect("positive gamma parameters")
        .sample(rng);
    let mut dir: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let mut norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    while norm == 0.0 {
        dir = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    }
    dir.iter().map(|v| radius * v / norm).collect()
}

pub fn sample_exp_norm_model(shape: Shape, alpha: f64, rng: &mut Stream) -> ModelVector {
    ModelVector::from_raw(shape, sample_exp_norm_noise(shape.len(), alpha, rng))
}

/// Wraps a local update with the configured mechanism.
///
/// `local_update` receives the linear noise term to add to its objective
/// (`None` for output perturbation). Output perturbation clips and perturbs
/// the returned model; objective perturbation draws the noise first.
pub fn perturbed_local_update<F>(
    mechanism: &Mechanism,
    shape: Shape,
    local_update: F,
    rng: &mut Stream,
) -> Result<ModelVector>
where
    F: FnOnce(Option<&ModelVector>) -> Result<ModelVector>,
{
    match mechanism {
        Mechanism::Output(spec) => {
            let local = local_update(None)?;
            Ok(gaussian_perturb(&clip(&local, spec.tau), spec.sigma, rng))
        }
        Mechanism::Objective(spec) => {
            let noise = sample_exp_norm_model(shape, spec.alpha, rng);
            local_update(Some(&noise))
        }
    }
}

// ---------------------------------------------------------------------------
// Accountants
// ---------------------------------------------------------------------------

/// `q = M·τ² / (2σ²|D|²)`.
pub fn output_q(rounds: usize, tau: f64, sigma: f64, n_samples: usize) -> f64 {
    let n = n_samples as f64;
    rounds as f64 * tau * tau / (2.0 * sigma * sigma * n * n)
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must be positive and finite, got {v}")))
    }
}

/// `ε = 2√(q·ln(1/δ)) + q`.
pub fn output_eps_of_delta(
    rounds: usize,
    tau: f64,
    sigma: f64,
    n_samples: usize,
    delta: f64,
) -> Result<f64> {
    check_positive("tau", tau)?;
    check_positive("sigma", sigma)?;
    if rounds == 0 || n_samples == 0 {
        return Err(Error::Domain("rounds and sample count must be ≥ 1".into()));
    }
    let q = output_q(rounds, tau, sigma, n_samples);
    eps_from_q(q, delta)
}

pub(crate) fn eps_from_q(q: f64, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain(format!("delta must lie in (0, 1), got {delta}")));
    }
    Ok(2.0 * (q * (1.0 / delta).ln()).sqrt() + q)
}

/// `δ = exp(−q(ε/(2q) − 1/2)²)`, defined for `ε ≥ q`.
pub fn output_delta_of_eps(
    rounds: usize,
    tau: f64,
    sigma: f64,
    n_samples: usize,
    eps: f64,
) -> Result<f64> {
    check_positive("tau", tau)?;
    check_positive("sigma", sigma)?;
    if rounds == 0 || n_samples == 0 {
        return Err(Error::Domain("rounds and sample count must be ≥ 1".into()));
    }
    let q = output_q(rounds, tau, sigma, n_samples);
    if !(eps >= q) {
        return Err(Error::Domain(format!(
            "the Gaussian accountant needs ε ≥ Mτ²/(2σ²|D|²) = {q}, got ε = {eps}"
        )));
    }
    let t = eps / (2.0 * q) - 0.5;
    Ok((-q * t * t).exp())
}

/// `ε = Σ_m (2·α_m·u1·μ + 2.8·u2) / (|D|·μ)` over the executed training
/// rounds.
pub fn objective_eps(alphas: &[f64], u1: f64, u2: f64, n_samples: usize, mu: f64) -> Result<f64> {
    check_positive("u1", u1)?;
    check_positive("u2", u2)?;
    check_positive("mu", mu)?;
    if n_samples == 0 {
        return Err(Error::Domain("sample count must be ≥ 1".into()));
    }
    let n = n_samples as f64;
    if !(u2 <= 0.5 * n * mu) {
        return Err(Error::Domain(format!(
            "objective perturbation requires u2 ≤ 0.5·|D_i|·μ = {}, got u2 = {u2}",
            0.5 * n * mu
        )));
    }
    if let Some(a) = alphas.iter().find(|a| !(**a > 0.0)) {
        return Err(Error::Domain(format!("alpha must be positive, got {a}")));
    }
    // Summing α first keeps equal-α sums exact in the common case.
    let alpha_sum: f64 = alphas.iter().sum();
    let count = alphas.len() as f64;
    Ok((2.0 * u1 * mu * alpha_sum + 2.8 * u2 * count) / (n * mu))
}

// ---------------------------------------------------------------------------
// Ledger
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Odd,
    Even,
}

/// Parameters of one privacy-spending release.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PrivacyEvent {
    Output { tau: f64, sigma: f64 },
    Objective { alpha: f64, u1: f64, u2: f64, mu: f64 },
}

impl PrivacyEvent {
    fn tag(&self) -> MechanismTag {
        match self {
            PrivacyEvent::Output { .. } => MechanismTag::Output,
            PrivacyEvent::Objective { .. } => MechanismTag::Objective,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientLedger {
    pub n_samples: usize,
    pub odd_events: Vec<PrivacyEvent>,
    pub even_events: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyLedger {
    mechanism: Option<MechanismTag>,
    clients: Vec<ClientLedger>,
}

impl PrivacyLedger {
    pub fn new(sample_counts: &[usize]) -> Self {
        Self {
            mechanism: None,
            clients: sample_counts
                .iter()
                .map(|&n| ClientLedger {
                    n_samples: n,
                    odd_events: Vec::new(),
                    even_events: 0,
                })
                .collect(),
        }
    }

    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn mechanism(&self) -> Option<MechanismTag> {
        self.mechanism
    }

    pub fn client(&self, client: usize) -> &ClientLedger {
        &self.clients[client]
    }

    /// Number of privacy-spending releases recorded for `client`.
    pub fn releases(&self, client: usize) -> usize {
        self.clients[client].odd_events.len()
    }

    /// Odd rounds append `event`; even rounds are counted but cost nothing.
    pub fn record(&mut self, client: usize, parity: Parity, event: PrivacyEvent) -> Result<()> {
        let tag = event.tag();
        match self.mechanism {
            Some(existing) if existing != tag => {
                return Err(Error::Config(format!(
                    "cannot mix {existing:?} and {tag:?} perturbation in one run"
                )))
            }
            _ => self.mechanism = Some(tag),
        }
        let entry = self
            .clients
            .get_mut(client)
            .ok_or_else(|| Error::Contract(format!("unknown client {client}")))?;
        match parity {
            Parity::Odd => entry.odd_events.push(event),
            Parity::Even => entry.even_events += 1,
        }
        Ok(())
    }

    /// Cumulative `(ε, δ)` for `client`. Output perturbation composes the
    /// per-release `q` terms into the Gaussian closed form at `delta`;
    /// objective perturbation sums per-release ε with `δ = 0`.
    pub fn query(&self, client: usize, delta: Option<f64>) -> Result<(f64, f64)> {
        let entry = self
            .clients
            .get(client)
            .ok_or_else(|| Error::Contract(format!("unknown client {client}")))?;
        if entry.odd_events.is_empty() {
            return Ok((0.0, 0.0));
        }
        match self.mechanism {
            Some(MechanismTag::Output) => {
                let delta = delta.ok_or_else(|| {
                    Error::Domain("output-perturbation queries need a delta".into())
                })?;
                let n = entry.n_samples as f64;
                let q: f64 = entry
                    .odd_events
                    .iter()
                    .map(|e| match *e {
                        PrivacyEvent::Output { tau, sigma } => {
                            tau * tau / (2.0 * sigma * sigma * n * n)
                        }
                        PrivacyEvent::Objective { .. } => unreachable!("mechanism checked"),
                    })
                    .sum();
                Ok((eps_from_q(q, delta)?, delta))
            }
            Some(MechanismTag::Objective) => {
                let first = entry.odd_events[0];
                let (u1, u2, mu) = match first {
                    PrivacyEvent::Objective { u1, u2, mu, .. } => (u1, u2, mu),
                    PrivacyEvent::Output { .. } => unreachable!("mechanism checked"),
                };
                let mut alphas = Vec::with_capacity(entry.odd_events.len());
                for e in &entry.odd_events {
                    match *e {
                        PrivacyEvent::Objective {
                            alpha,
                            u1: a,
                            u2: b,
                            mu: c,
                        } if a == u1 && b == u2 && c == mu => alphas.push(alpha),
                        _ => {
                            return Err(Error::Config(
                                "objective events must share u1, u2 and mu".into(),
                            ))
                        }
                    }
                }
                Ok((objective_eps(&alphas, u1, u2, entry.n_samples, mu)?, 0.0))
            }
            None => Ok((0.0, 0.0)),
        }
    }

    /// `(min, mean, max)` of ε over all clients.
    pub fn epsilon_stats(&self, delta: Option<f64>) -> Result<(f64, f64, f64)> {
        let eps = self.epsilons(delta)?;
        let min = eps.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = eps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mean = eps.iter().sum::<f64>() / eps.len() as f64;
        Ok((min, mean, max))
    }

    pub fn epsilons(&self, delta: Option<f64>) -> Result<Vec<f64>> {
        (0..self.clients.len())
            .map(|c| self.query(c, delta).map(|(e, _)| e))
            .collect()
    }
}
