use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis;
use crate::data::FederatedDataset;
use crate::error::{Error, Result};
use crate::models::{evaluate, ModelVector, SolverSpec};
use crate::privacy::{self, Mechanism, Parity, PrivacyEvent, PrivacyLedger};
use crate::rng::{self, Purpose};

use super::plan::RoundPlan;
use super::strategy::{
    aggregate, local_update, scaffold_control_update, server_update, StrategyKind, StrategyState,
};
use super::upcycled::{upcycled_even_update, CoefficientSchedule};

/// How an upcycled run is laid out against its baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Comparison {
    /// Rounds alternate: odd rounds train, even rounds only extrapolate.
    Double,
    /// Every round trains and then extrapolates.
    Fused,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpcycledSpec {
    pub comparison: Comparison,
    pub schedule: CoefficientSchedule,
}

/// Which clients a training round charges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Accounting {
    /// Every client is charged for every training round.
    AllRounds,
    /// Only the clients that trained are charged.
    Participation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacySpec {
    pub mechanism: Mechanism,
    /// δ at which output-perturbation ε is reported.
    pub delta: f64,
    pub accounting: Accounting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub strategy: StrategyKind,
    pub upcycled: Option<UpcycledSpec>,
    /// Total rounds, counting extrapolation-only rounds in double mode.
    pub rounds: usize,
    pub participation: f64,
    pub stragglers: f64,
    pub solver: SolverSpec,
    pub privacy: Option<PrivacySpec>,
    pub master_seed: u64,
    /// Standard deviation of the initial model; 0 starts from zeros.
    pub init_scale: f64,
    /// Probe B̂ every this many training rounds (and at the start); 0 disables.
    pub dissimilarity_every: usize,
}

impl RunConfig {
    pub fn baseline(strategy: StrategyKind, rounds: usize, master_seed: u64) -> Self {
        Self {
            strategy,
            upcycled: None,
            rounds,
            participation: 0.3,
            stragglers: 0.9,
            solver: SolverSpec::default(),
            privacy: None,
            master_seed,
            init_scale: 0.0,
            dissimilarity_every: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.rounds < 1 {
            bad.push("rounds must be ≥ 1".to_string());
        }
        if let Some(u) = &self.upcycled {
            if u.comparison == Comparison::Double && !self.rounds.is_multiple_of(2) {
                bad.push(format!(
                    "double-iteration mode needs an even round count, got {}",
                    self.rounds
                ));
            }
            if let Err(e) = u.schedule.validate() {
                bad.push(e.to_string());
            }
        }
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            bad.push(format!("participation must lie in (0, 1], got {}", self.participation));
        }
        if !(0.0..=1.0).contains(&self.stragglers) {
            bad.push(format!("straggler fraction must lie in [0, 1], got {}", self.stragglers));
        }
        if let Err(e) = self.solver.validate() {
            bad.push(e.to_string());
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            bad.push("init_scale must be ≥ 0".to_string());
        }
        match self.strategy {
            StrategyKind::FedProx { mu } if !(mu >= 0.0 && mu.is_finite()) => {
                bad.push(format!("fedprox mu must be ≥ 0, got {mu}"))
            }
            StrategyKind::FedAvgM { server_momentum } if !(0.0..1.0).contains(&server_momentum) => {
                bad.push(format!("server momentum must lie in [0, 1), got {server_momentum}"))
            }
            _ => {}
        }
        if let Some(p) = &self.privacy {
            if !(p.delta > 0.0 && p.delta < 1.0) {
                bad.push(format!("privacy delta must lie in (0, 1), got {}", p.delta));
            }
            if let Mechanism::Objective(_) = p.mechanism {
                if !(self.strategy.prox_mu() > 0.0) {
                    bad.push(
                        "objective perturbation needs a proximal strategy with mu > 0".to_string(),
                    );
                }
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::ConfigViolations(bad))
        }
    }

    pub fn training_rounds(&self) -> usize {
        match self.upcycled.map(|u| u.comparison) {
            Some(Comparison::Double) => self.rounds / 2,
            _ => self.rounds,
        }
    }

    pub fn extrapolation_rounds(&self) -> usize {
        match self.upcycled.map(|u| u.comparison) {
            None => 0,
            Some(Comparison::Double) => self.rounds / 2,
            Some(Comparison::Fused) => self.rounds,
        }
    }

    fn is_training_round(&self, t: usize) -> bool {
        match self.upcycled.map(|u| u.comparison) {
            Some(Comparison::Double) => t % 2 == 1,
            _ => true,
        }
    }
}

/// One row of `rounds.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub parity: Parity,
    pub train_loss: f64,
    pub test_acc: f64,
    pub test_acc_std: f64,
    /// Time spent in the round's algorithm steps; metric evaluation excluded.
    pub wall_s: f64,
    pub eps_min: Option<f64>,
    pub eps_avg: Option<f64>,
    pub eps_max: Option<f64>,
    /// Devices that trained this round.
    pub selected: Vec<usize>,
}

/// Per-training-round quantities for the convergence diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub m: usize,
    pub round: usize,
    /// `‖∇f(ω̄)‖` right after aggregation.
    pub grad_norm: f64,
    /// `‖ω̄_after − ω̄_before‖` for the training round.
    pub step_norm: f64,
    /// Extrapolation coefficient applied after this round (0 without one).
    pub coefficient: f64,
    pub train_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DissimilarityProbe {
    pub m: usize,
    pub b_hat: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub initial_loss: f64,
    pub selected_per_round: usize,
    pub points: Vec<TrajectoryPoint>,
    pub dissimilarity: Vec<DissimilarityProbe>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<RoundRecord>,
    pub trajectory: Trajectory,
    pub ledger: Option<PrivacyLedger>,
    pub final_global: ModelVector,
}

#[derive(Debug)]
pub struct RunAborted {
    pub error: Error,
    /// Everything completed before the failure.
    pub partial: RunOutput,
}

/// Hooks into a run; every method defaults to a no-op.
pub trait RoundObserver {
    /// After local training and aggregation, before the server rule.
    fn on_training_round(
        &mut self,
        _round: usize,
        _plan: &RoundPlan,
        _locals: &[(usize, ModelVector)],
        _weights: &[f64],
        _aggregate: &ModelVector,
    ) {
    }

    /// After an extrapolation step.
    fn on_extrapolation(
        &mut self,
        _round: usize,
        _current: &ModelVector,
        _previous: &ModelVector,
        _coefficient: f64,
        _result: &ModelVector,
    ) {
    }

    fn on_record(&mut self, _record: &RoundRecord) {}
}

pub struct NoObserver;

impl RoundObserver for NoObserver {}

/// Metrics of a global model: p-weighted train loss, p-weighted mean and
/// standard deviation of per-device test accuracy. Devices without test data
/// are skipped; with no test data anywhere, train accuracy is reported.
pub fn evaluate_global(dataset: &FederatedDataset, omega: &ModelVector) -> Result<(f64, f64, f64)> {
    let weights = dataset.device_weights();
    let per_device: Vec<Result<(f64, Option<f64>, f64)>> = dataset
        .devices()
        .par_iter()
        .map(|d| {
            let (loss, train_acc) = evaluate(omega, &d.train)?;
            let test_acc = if d.test.is_empty() {
                None
            } else {
                Some(evaluate(omega, &d.test)?.1)
            };
            Ok((loss, test_acc, train_acc))
        })
        .collect();
    let per_device: Vec<(f64, Option<f64>, f64)> = per_device.into_iter().collect::<Result<_>>()?;
    let train_loss: f64 = per_device.iter().zip(&weights).map(|(d, w)| w * d.0).sum();
    let has_test = per_device.iter().any(|d| d.1.is_some());
    let accs: Vec<(f64, f64)> = per_device
        .iter()
        .zip(&weights)
        .filter_map(|(d, &w)| if has_test { d.1.map(|a| (w, a)) } else { Some((w, d.2)) })
        .collect();
    let wsum: f64 = accs.iter().map(|(w, _)| w).sum();
    let mean = accs.iter().map(|(w, a)| w * a).sum::<f64>() / wsum;
    let var = accs.iter().map(|(w, a)| w * (a - mean) * (a - mean)).sum::<f64>() / wsum;
    Ok((train_loss, mean.clamp(0.0, 1.0), var.sqrt()))
}

struct TrainingOutcome {
    before: ModelVector,
    after: ModelVector,
    coefficient: f64,
    m: usize,
}

/// Runs one configuration to completion.
///
/// Training rounds are numbered `k = 1, 2, …` independently of the round
/// index, and every random draw in a training round is keyed by `k`. A
/// double-mode upcycled run and a baseline run therefore share client
/// samples, straggler budgets and solver streams round for round.
pub fn run(
    dataset: &FederatedDataset,
    cfg: &RunConfig,
    observer: &mut dyn RoundObserver,
) -> std::result::Result<RunOutput, Box<RunAborted>> {
    let shape = dataset.model_shape();
    let init = initial_model(cfg, shape);
    let mut state = StrategyState::new(&cfg.strategy, init.clone(), dataset.num_devices());
    let mut out = RunOutput {
        records: Vec::new(),
        trajectory: Trajectory::default(),
        ledger: cfg
            .privacy
            .as_ref()
            .map(|_| PrivacyLedger::new(&dataset.train_sizes())),
        final_global: init,
    };
    macro_rules! bail {
        ($e:expr) => {
            match $e {
                Ok(v) => v,
                Err(error) => {
                    out.final_global = state.global.clone();
                    return Err(Box::new(RunAborted { error: error.into(), partial: out }));
                }
            }
        };
    }

    bail!(cfg.validate());
    if let Some(PrivacySpec {
        mechanism: Mechanism::Objective(spec),
        ..
    }) = &cfg.privacy
    {
        bail!(spec.check_feasibility(&dataset.train_sizes(), cfg.strategy.prox_mu()));
    }

    let sizes = dataset.train_sizes();
    let total_extrapolations = cfg.extrapolation_rounds();
    out.trajectory.initial_loss = bail!(evaluate_global(dataset, &state.global)).0;
    out.trajectory.selected_per_round =
        ((cfg.participation * dataset.num_devices() as f64).round() as usize)
            .clamp(1, dataset.num_devices());
    if cfg.dissimilarity_every > 0 {
        out.trajectory.dissimilarity.push(DissimilarityProbe {
            m: 0,
            b_hat: analysis::estimate_dissimilarity(dataset, &state.global).ok(),
        });
    }

    let mut training_index = 0usize;
    for t in 1..=cfg.rounds {
        let started = Instant::now();
        let mut training: Option<TrainingOutcome> = None;
        let plan = if cfg.is_training_round(t) {
            training_index += 1;
            let k = training_index;
            let plan = RoundPlan::training(
                t,
                k,
                dataset.num_devices(),
                cfg.participation,
                cfg.stragglers,
                cfg.solver.epochs,
                cfg.master_seed,
            );
            let before = state.global.clone();
            let (locals, controls) = bail!(train_selected(dataset, cfg, &state, &plan, t, k));
            let selected_weights: Vec<f64> =
                locals.iter().map(|(d, _)| sizes[*d] as f64).collect();
            let models: Vec<ModelVector> = locals.iter().map(|(_, m)| m.clone()).collect();
            let agg = bail!(aggregate(&models, &selected_weights));
            observer.on_training_round(t, &plan, &locals, &selected_weights, &agg);
            bail!(server_update(
                &cfg.strategy,
                &mut state,
                agg,
                controls,
                dataset.num_devices()
            ));
            if let (Some(ledger), Some(p)) = (out.ledger.as_mut(), cfg.privacy.as_ref()) {
                let event = privacy_event(&p.mechanism, cfg.strategy.prox_mu());
                let charged: Vec<usize> = match p.accounting {
                    Accounting::AllRounds => (0..dataset.num_devices()).collect(),
                    Accounting::Participation => plan.selected.clone(),
                };
                for c in charged {
                    bail!(ledger.record(c, Parity::Odd, event));
                }
            }
            let after = state.global.clone();
            let mut coefficient = 0.0;
            if let Some(UpcycledSpec {
                comparison: Comparison::Fused,
                schedule,
            }) = &cfg.upcycled
            {
                coefficient = schedule.coefficient(k, total_extrapolations);
                let next = bail!(upcycled_even_update(&after, &before, coefficient));
                observer.on_extrapolation(t, &after, &before, coefficient, &next);
                state.previous_global = Some(after.clone());
                state.global = next;
            } else if let Some(UpcycledSpec { schedule, .. }) = &cfg.upcycled {
                coefficient = schedule.coefficient(k, total_extrapolations);
            }
            training = Some(TrainingOutcome {
                before,
                after,
                coefficient,
                m: k,
            });
            plan
        } else {
            let m = t / 2;
            let schedule = cfg.upcycled.expect("even rounds only exist in upcycled mode").schedule;
            let coefficient = schedule.coefficient(m, total_extrapolations);
            let current = state.global.clone();
            let previous = state
                .previous_global
                .clone()
                .expect("an odd round precedes every even round");
            let next = bail!(upcycled_even_update(&current, &previous, coefficient));
            observer.on_extrapolation(t, &current, &previous, coefficient, &next);
            state.previous_global = Some(current);
            state.global = next;
            if let (Some(ledger), Some(p)) = (out.ledger.as_mut(), cfg.privacy.as_ref()) {
                let event = privacy_event(&p.mechanism, cfg.strategy.prox_mu());
                for c in 0..dataset.num_devices() {
                    bail!(ledger.record(c, Parity::Even, event));
                }
            }
            RoundPlan::even(t)
        };
        let wall_s = started.elapsed().as_secs_f64();

        if !state.global.is_finite() {
            bail!(Err(Error::Divergence {
                round: t,
                device: plan.selected.first().copied().unwrap_or(0) as u32,
            }));
        }
        let (train_loss, test_acc, test_acc_std) = bail!(evaluate_global(dataset, &state.global));
        let eps = match (&out.ledger, &cfg.privacy) {
            (Some(ledger), Some(p)) => Some(bail!(ledger.epsilon_stats(Some(p.delta)))),
            _ => None,
        };
        if let Some(TrainingOutcome {
            before,
            after,
            coefficient,
            m,
        }) = training
        {
            let (grad, _) = bail!(analysis::global_gradient(dataset, &after));
            let trained_loss = if cfg.upcycled.map(|u| u.comparison) == Some(Comparison::Fused) {
                bail!(evaluate_global(dataset, &after)).0
            } else {
                train_loss
            };
            out.trajectory.points.push(TrajectoryPoint {
                m,
                round: t,
                grad_norm: grad.norm(),
                step_norm: bail!(after.distance(&before)),
                coefficient,
                train_loss: trained_loss,
            });
            if cfg.dissimilarity_every > 0 && m % cfg.dissimilarity_every == 0 {
                out.trajectory.dissimilarity.push(DissimilarityProbe {
                    m,
                    b_hat: analysis::estimate_dissimilarity(dataset, &after).ok(),
                });
            }
        }
        let record = RoundRecord {
            round: t,
            parity: plan.parity,
            train_loss,
            test_acc,
            test_acc_std,
            wall_s,
            eps_min: eps.map(|e| e.0),
            eps_avg: eps.map(|e| e.1),
            eps_max: eps.map(|e| e.2),
            selected: plan.selected,
        };
        observer.on_record(&record);
        out.records.push(record);
    }
    out.final_global = state.global;
    Ok(out)
}

/// Zeros, or Gaussian with standard deviation `init_scale` from the init stream.
pub fn initial_model(cfg: &RunConfig, shape: crate::models::Shape) -> ModelVector {
    if cfg.init_scale == 0.0 {
        return ModelVector::zeros(shape);
    }
    let mut rng = rng::stream(cfg.master_seed, Purpose::Init, 0, 0);
    let values = (0..shape.len())
        .map(|_| cfg.init_scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    ModelVector::from_values(shape, values).expect("finite init")
}

fn privacy_event(mechanism: &Mechanism, mu: f64) -> PrivacyEvent {
    match *mechanism {
        Mechanism::Output(s) => PrivacyEvent::Output {
            tau: s.tau,
            sigma: s.sigma,
        },
        Mechanism::Objective(s) => PrivacyEvent::Objective {
            alpha: s.alpha,
            u1: s.u1,
            u2: s.u2,
            mu,
        },
    }
}

type Locals = Vec<(usize, ModelVector)>;
type Controls = Vec<(usize, ModelVector)>;

/// Local training for every selected device, in parallel. Results come back
/// in device order; the first failing device (in that order) is reported.
fn train_selected(
    dataset: &FederatedDataset,
    cfg: &RunConfig,
    state: &StrategyState,
    plan: &RoundPlan,
    round: usize,
    k: usize,
) -> Result<(Locals, Controls)> {
    let shape = dataset.model_shape();
    let seed = cfg.master_seed;
    let results: Vec<Result<(usize, ModelVector, Option<ModelVector>)>> = plan
        .selected
        .par_iter()
        .map(|&device| {
            let shard = dataset.training_shard(device);
            let solver = SolverSpec {
                epochs: plan.epochs[&device],
                ..cfg.solver
            };
            let mut solver_rng = rng::stream(seed, Purpose::LocalSolver, k as u64, device as u64);
            let mut update = |noise: Option<&ModelVector>| {
                local_update(
                    &cfg.strategy,
                    state,
                    device,
                    &shard.train,
                    &solver,
                    noise,
                    &mut solver_rng,
                )
                .map_err(|d| d.at(round, shard.device_id))
            };
            let model = match &cfg.privacy {
                None => update(None)?,
                Some(p) => {
                    let purpose = match p.mechanism {
                        Mechanism::Output(_) => Purpose::OutputNoise,
                        Mechanism::Objective(_) => Purpose::ObjectiveNoise,
                    };
                    let mut noise_rng = rng::stream(seed, purpose, k as u64, device as u64);
                    privacy::perturbed_local_update(&p.mechanism, shape, update, &mut noise_rng)?
                }
            };
            let control = match cfg.strategy {
                StrategyKind::Scaffold => Some(scaffold_control_update(
                    state,
                    device,
                    &model,
                    solver.steps(shard.train.len()),
                    &solver,
                )?),
                _ => None,
            };
            Ok((device, model, control))
        })
        .collect();
    let mut locals = Vec::with_capacity(results.len());
    let mut controls = Vec::new();
    for r in results {
        let (device, model, control) = r?;
        if let Some(c) = control {
            controls.push((device, c));
        }
        locals.push((device, model));
    }
    Ok((locals, controls))
}
