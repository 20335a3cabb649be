use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::models::{solve_sgd, Diverged, LocalObjective, ModelVector, SolverSpec};
use crate::rng::Stream;

/// The baseline algorithm run on training rounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum StrategyKind {
    FedAvg,
    /// Server-side heavy-ball momentum on the aggregate pseudo-gradient.
    FedAvgM { server_momentum: f64 },
    /// Local objective gains `(μ/2)‖ω − ω̄‖²`.
    FedProx { mu: f64 },
    /// Control variates with the "option II" client update.
    Scaffold,
}

impl StrategyKind {
    pub fn name(&self) -> &'static str {
        match self {
            StrategyKind::FedAvg => "fedavg",
            StrategyKind::FedAvgM { .. } => "fedavgm",
            StrategyKind::FedProx { .. } => "fedprox",
            StrategyKind::Scaffold => "scaffold",
        }
    }

    pub fn prox_mu(&self) -> f64 {
        match *self {
            StrategyKind::FedProx { mu } => mu,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Aux {
    None,
    Momentum(ModelVector),
    Scaffold {
        server: ModelVector,
        clients: Vec<ModelVector>,
    },
}

/// Server-held state carried across rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyState {
    pub global: ModelVector,
    pub previous_global: Option<ModelVector>,
    pub aux: Aux,
}

impl StrategyState {
    pub fn new(kind: &StrategyKind, init: ModelVector, num_devices: usize) -> Self {
        let zeros = ModelVector::zeros(init.shape());
        let aux = match kind {
            StrategyKind::FedAvg | StrategyKind::FedProx { .. } => Aux::None,
            StrategyKind::FedAvgM { .. } => Aux::Momentum(zeros),
            StrategyKind::Scaffold => Aux::Scaffold {
                server: zeros.clone(),
                clients: vec![zeros; num_devices],
            },
        };
        Self {
            global: init,
            previous_global: None,
            aux,
        }
    }
}

/// One device's local training from the current global model.
///
/// FedAvg and FedAvgM minimise `F_i`; FedProx adds the prox term anchored at
/// the global model; Scaffold adds the drift correction `⟨c − c_i, ω⟩`, which
/// turns every SGD gradient `g` into `g − c_i + c`. `extra_linear` is the
/// objective-perturbation noise, if any.
pub fn local_update(
    kind: &StrategyKind,
    state: &StrategyState,
    device: usize,
    samples: &[Sample],
    solver: &SolverSpec,
    extra_linear: Option<&ModelVector>,
    rng: &mut Stream,
) -> std::result::Result<ModelVector, Diverged> {
    let shape = state.global.shape();
    let mut linear = extra_linear.cloned();
    if let (StrategyKind::Scaffold, Aux::Scaffold { server, clients }) = (kind, &state.aux) {
        let correction = server.sub(&clients[device]).expect("control variate shape");
        linear = Some(match linear {
            Some(n) => n.add(&correction).expect("noise shape"),
            None => correction,
        });
    }
    let mut objective = LocalObjective::new(samples, shape)
        .with_prox(kind.prox_mu(), &state.global)
        .expect("prox anchor shape");
    if let Some(lin) = linear.as_ref() {
        objective = objective.with_linear(lin).expect("linear term shape");
    }
    solve_sgd(&objective, &state.global, solver, rng)
}

/// Scaffold option II: `c_i⁺ = c_i − c + (x − y_i)/(K·η_eff)` with `K` local
/// steps and `η_eff = lr/(1 − momentum)`, the asymptotic step length of
/// heavy-ball SGD.
pub fn scaffold_control_update(
    state: &StrategyState,
    device: usize,
    uploaded: &ModelVector,
    steps: usize,
    solver: &SolverSpec,
) -> Result<ModelVector> {
    let Aux::Scaffold { server, clients } = &state.aux else {
        return Err(Error::Contract("control update requires Scaffold state".into()));
    };
    let old = &clients[device];
    if steps == 0 || solver.learning_rate == 0.0 {
        return Ok(old.clone());
    }
    let eta = solver.learning_rate / (1.0 - solver.momentum);
    let drift = state.global.sub(uploaded)?.scale(1.0 / (steps as f64 * eta));
    old.sub(server)?.add(&drift)
}

/// Weighted average with weights renormalised to sum to one.
///
/// Computed as `ω_first + Σ w_i (ω_i − ω_first)`, which equals the plain
/// weighted sum in exact arithmetic and returns identical inputs unchanged
/// bit for bit. Terms are added in the order given.
pub fn aggregate(locals: &[ModelVector], weights: &[f64]) -> Result<ModelVector> {
    if locals.is_empty() {
        return Err(Error::Contract("cannot aggregate zero models".into()));
    }
    if locals.len() != weights.len() {
        return Err(Error::Contract("one weight per local model required".into()));
    }
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
        return Err(Error::Contract(format!("aggregation weights must be positive, got {w}")));
    }
    let base = &locals[0];
    for m in &locals[1..] {
        base.check_shape(m)?;
    }
    let total: f64 = weights.iter().sum();
    let mut out = base.clone();
    for (m, w) in locals.iter().zip(weights).skip(1) {
        let w = w / total;
        for ((o, x), b) in out.values_mut().iter_mut().zip(m.values()).zip(base.values()) {
            *o += w * (x - b);
        }
    }
    Ok(out)
}

/// Applies the strategy's server rule to the aggregate of a training round
/// and advances `previous_global`.
pub fn server_update(
    kind: &StrategyKind,
    state: &mut StrategyState,
    aggregate: ModelVector,
    control_updates: Vec<(usize, ModelVector)>,
    num_devices: usize,
) -> Result<()> {
    state.global.check_shape(&aggregate)?;
    let old = state.global.clone();
    let new_global = match (kind, &mut state.aux) {
        (StrategyKind::FedAvgM { server_momentum }, Aux::Momentum(buffer)) => {
            let pseudo_grad = old.sub(&aggregate)?;
            let mut next = buffer.scale(*server_momentum);
            next.add_scaled(1.0, &pseudo_grad)?;
            *buffer = next;
            old.sub(buffer)?
        }
        (StrategyKind::Scaffold, Aux::Scaffold { server, clients }) => {
            if !control_updates.is_empty() {
                let mut mean_delta = ModelVector::zeros(server.shape());
                let scale = 1.0 / control_updates.len() as f64;
                for (device, new_c) in &control_updates {
                    let delta = new_c.sub(&clients[*device])?;
                    mean_delta.add_scaled(scale, &delta)?;
                }
                let frac = control_updates.len() as f64 / num_devices as f64;
                server.add_scaled(frac, &mean_delta)?;
                for (device, new_c) in control_updates {
                    clients[device] = new_c;
                }
            }
            aggregate
        }
        _ => aggregate,
    };
    state.previous_global = Some(old);
    state.global = new_global;
    Ok(())
}
