use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::privacy::Parity;
use crate::rng::{self, Purpose};

/// Devices chosen for one training round and their (straggler-reduced)
/// epoch budgets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundPlan {
    pub round: usize,
    pub parity: Parity,
    pub selected: Vec<usize>,
    pub epochs: BTreeMap<usize, usize>,
}

impl RoundPlan {
    /// Plan of an extrapolation round: nobody trains.
    pub fn even(round: usize) -> Self {
        Self {
            round,
            parity: Parity::Even,
            selected: Vec::new(),
            epochs: BTreeMap::new(),
        }
    }

    /// Plan of the `training_index`-th training round. Sampling and straggler
    /// draws are keyed by the training index only, so every strategy under
    /// one master seed sees the same plan.
    pub fn training(
        round: usize,
        training_index: usize,
        num_devices: usize,
        participation: f64,
        straggler_fraction: f64,
        epochs: usize,
        master_seed: u64,
    ) -> Self {
        let selected = sample_clients(num_devices, participation, master_seed, training_index);
        let epochs = assign_stragglers(&selected, straggler_fraction, epochs, master_seed, training_index);
        Self {
            round,
            parity: Parity::Odd,
            selected,
            epochs,
        }
    }
}

/// Uniform subset of `round(fraction·n)` devices (at least one), sorted.
pub fn sample_clients(
    num_devices: usize,
    participation: f64,
    master_seed: u64,
    training_index: usize,
) -> Vec<usize> {
    assert!(
        participation > 0.0 && participation <= 1.0,
        "participation fraction must lie in (0, 1]"
    );
    let k = ((participation * num_devices as f64).round() as usize).clamp(1, num_devices);
    let mut rng = rng::stream(master_seed, Purpose::Sampling, training_index as u64, 0);
    let mut chosen = index::sample(&mut rng, num_devices, k).into_vec();
    chosen.sort_unstable();
    chosen
}

/// `round(fraction·|selected|)` devices train for a uniform number of epochs
/// in `{1, …, E−1}`; the rest train for `E`.
pub fn assign_stragglers(
    selected: &[usize],
    straggler_fraction: f64,
    epochs: usize,
    master_seed: u64,
    training_index: usize,
) -> BTreeMap<usize, usize> {
    assert!(
        (0.0..=1.0).contains(&straggler_fraction),
        "straggler fraction must lie in [0, 1]"
    );
    assert!(epochs >= 1, "epochs must be ≥ 1");
    let mut plan: BTreeMap<usize, usize> = selected.iter().map(|&d| (d, epochs)).collect();
    let count = (straggler_fraction * selected.len() as f64).round() as usize;
    if count == 0 || epochs == 1 {
        return plan;
    }
    let mut rng = rng::stream(master_seed, Purpose::Stragglers, training_index as u64, 0);
    let mut stragglers = index::sample(&mut rng, selected.len(), count.min(selected.len())).into_vec();
    stragglers.sort_unstable();
    for pos in stragglers {
        let e = rng.random_range(1..epochs);
        plan.insert(selected[pos], e);
    }
    plan
}
