use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;

use super::objective::{batch_gradient, LocalObjective};
use super::vector::ModelVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSpec {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
}

impl Default for SolverSpec {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 10,
            learning_rate: 0.01,
            momentum: 0.5,
        }
    }
}

impl SolverSpec {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.epochs < 1 {
            bad.push("epochs must be ≥ 1".to_string());
        }
        if self.batch_size < 1 {
            bad.push("batch_size must be ≥ 1".to_string());
        }
        // lr = 0 is accepted: it is the identity solver used in tests.
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            bad.push(format!("learning_rate must be ≥ 0, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            bad.push(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }

    /// Number of mini-batch steps taken over `n` samples.
    pub fn steps(&self, n: usize) -> usize {
        self.epochs * n.div_ceil(self.batch_size)
    }
}

/// The solver stopped because the loss or iterate became non-finite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Diverged {
    pub epoch: usize,
    pub step: usize,
}

impl Diverged {
    pub fn at(self, round: usize, device: u32) -> Error {
        Error::Divergence { round, device }
    }
}

/// Mini-batch SGD with heavy-ball momentum:
/// `v ← m·v − lr·g`, `ω ← ω + v`.
///
/// Each epoch visits the shard in a fresh shuffle drawn from `rng`; the last
/// batch of an epoch may be short.
pub fn solve_sgd(
    objective: &LocalObjective<'_>,
    init: &ModelVector,
    spec: &SolverSpec,
    rng: &mut Stream,
) -> std::result::Result<ModelVector, Diverged> {
    let shape = objective.shape();
    assert_eq!(init.shape(), shape, "solver init shape mismatch");
    let samples = objective.samples();
    let mut w = init.values().to_vec();
    if spec.learning_rate == 0.0 || samples.is_empty() {
        return Ok(init.clone());
    }
    let mut velocity = vec![0.0; w.len()];
    let mut grad = vec![0.0; w.len()];
    let mut probs = vec![0.0; shape.classes];
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut step = 0;
    for epoch in 0..spec.epochs {
        order.shuffle(rng);
        for batch in order.chunks(spec.batch_size) {
            let loss = batch_gradient(
                &w,
                shape,
                batch.iter().map(|&i| &samples[i]),
                &mut grad,
                &mut probs,
            );
            objective.add_extra_gradient(&w, &mut grad);
            if !loss.is_finite() {
                return Err(Diverged { epoch, step });
            }
            for ((wi, vi), gi) in w.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                *vi = spec.momentum * *vi - spec.learning_rate * gi;
                *wi += *vi;
            }
            step += 1;
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Diverged { epoch, step });
        }
    }
    Ok(ModelVector::from_raw(shape, w))
}
