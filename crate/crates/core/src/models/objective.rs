use crate::data::Sample;
use crate::error::{Error, Result};

use super::vector::{ModelVector, Shape};

/// A device's local objective
/// `F_i(ω) + (μ/2)‖ω − anchor‖² + ⟨linear, ω⟩`, where `F_i` is the mean
/// softmax cross-entropy over the shard.
///
/// The linear term carries objective-perturbation noise and, for Scaffold,
/// the drift correction `c − c_i`.
#[derive(Debug, Clone)]
pub struct LocalObjective<'a> {
    samples: &'a [Sample],
    shape: Shape,
    prox: Option<(f64, &'a ModelVector)>,
    linear: Option<&'a ModelVector>,
}

impl<'a> LocalObjective<'a> {
    pub fn new(samples: &'a [Sample], shape: Shape) -> Self {
        Self {
            samples,
            shape,
            prox: None,
            linear: None,
        }
    }

    /// Adds `(μ/2)‖ω − anchor‖²`. `μ = 0` leaves the objective unchanged.
    pub fn with_prox(mut self, mu: f64, anchor: &'a ModelVector) -> Result<Self> {
        if !(mu >= 0.0 && mu.is_finite()) {
            return Err(Error::Contract(format!("prox coefficient must be ≥ 0, got {mu}")));
        }
        if anchor.shape() != self.shape {
            return Err(Error::Contract("prox anchor shape mismatch".into()));
        }
        self.prox = (mu > 0.0).then_some((mu, anchor));
        Ok(self)
    }

    pub fn with_linear(mut self, linear: &'a ModelVector) -> Result<Self> {
        if linear.shape() != self.shape {
            return Err(Error::Contract("linear term shape mismatch".into()));
        }
        self.linear = Some(linear);
        Ok(self)
    }

    pub fn samples(&self) -> &'a [Sample] {
        self.samples
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn prox_mu(&self) -> f64 {
        self.prox.map_or(0.0, |(mu, _)| mu)
    }

    fn check(&self, omega: &ModelVector) -> Result<()> {
        if omega.shape() != self.shape {
            return Err(Error::Contract(format!(
                "model shape {:?} does not match shard shape {:?}",
                omega.shape(),
                self.shape
            )));
        }
        Ok(())
    }

    pub fn loss(&self, omega: &ModelVector) -> Result<f64> {
        self.check(omega)?;
        let w = omega.values();
        let mut logits = vec![0.0; self.shape.classes];
        let data = if self.samples.is_empty() {
            0.0
        } else {
            self.samples
                .iter()
                .map(|s| sample_loss(w, self.shape, s, &mut logits))
                .sum::<f64>()
                / self.samples.len() as f64
        };
        Ok(data + self.extra_loss(w))
    }

    pub fn gradient(&self, omega: &ModelVector) -> Result<ModelVector> {
        self.check(omega)?;
        let mut grad = vec![0.0; self.shape.len()];
        let mut scratch = vec![0.0; self.shape.classes];
        batch_gradient(omega.values(), self.shape, self.samples.iter(), &mut grad, &mut scratch);
        self.add_extra_gradient(omega.values(), &mut grad);
        Ok(ModelVector::from_raw(self.shape, grad))
    }

    pub(crate) fn extra_loss(&self, w: &[f64]) -> f64 {
        let mut extra = 0.0;
        if let Some((mu, anchor)) = self.prox {
            let d: f64 = w
                .iter()
                .zip(anchor.values())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            extra += 0.5 * mu * d;
        }
        if let Some(lin) = self.linear {
            extra += w.iter().zip(lin.values()).map(|(a, b)| a * b).sum::<f64>();
        }
        extra
    }

    pub(crate) fn add_extra_gradient(&self, w: &[f64], grad: &mut [f64]) {
        if let Some((mu, anchor)) = self.prox {
            for ((g, x), a) in grad.iter_mut().zip(w).zip(anchor.values()) {
                *g += mu * (x - a);
            }
        }
        if let Some(lin) = self.linear {
            for (g, n) in grad.iter_mut().zip(lin.values()) {
                *g += n;
            }
        }
    }
}

/// Fills `logits` with `W x + b`.
pub(crate) fn logits_into(w: &[f64], shape: Shape, x: &[f64], logits: &mut [f64]) {
    let d = shape.dim_x;
    let bias = &w[shape.bias_offset()..];
    for (c, z) in logits.iter_mut().enumerate() {
        let row = &w[c * d..(c + 1) * d];
        *z = bias[c] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// Turns logits into probabilities in place; returns `logsumexp`.
fn softmax_in_place(logits: &mut [f64]) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for z in logits.iter_mut() {
        *z = (*z - max).exp();
        sum += *z;
    }
    for z in logits.iter_mut() {
        *z /= sum;
    }
    max + sum.ln()
}

fn sample_loss(w: &[f64], shape: Shape, s: &Sample, logits: &mut [f64]) -> f64 {
    logits_into(w, shape, &s.features, logits);
    let target = logits[s.label];
    let lse = softmax_in_place(logits);
    lse - target
}

/// Accumulates the mean cross-entropy gradient of `samples` into `grad`
/// (which is overwritten) and returns the mean loss.
pub(crate) fn batch_gradient<'s>(
    w: &[f64],
    shape: Shape,
    samples: impl ExactSizeIterator<Item = &'s Sample>,
    grad: &mut [f64],
    probs: &mut [f64],
) -> f64 {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let n = samples.len();
    if n == 0 {
        return 0.0;
    }
    let d = shape.dim_x;
    let bias_off = shape.bias_offset();
    let mut loss = 0.0;
    for s in samples {
        logits_into(w, shape, &s.features, probs);
        let target = probs[s.label];
        loss += softmax_in_place(probs) - target;
        probs[s.label] -= 1.0;
        for (c, &r) in probs.iter().enumerate() {
            let row = &mut grad[c * d..(c + 1) * d];
            for (g, x) in row.iter_mut().zip(&s.features) {
                *g += r * x;
            }
            grad[bias_off + c] += r;
        }
    }
    let inv = 1.0 / n as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
    loss * inv
}

/// Mean cross-entropy and accuracy of `omega` on `samples`. Predictions use
/// the lowest index among tied maximal logits.
pub fn evaluate(omega: &ModelVector, samples: &[Sample]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::Evaluation("cannot evaluate on an empty split".into()));
    }
    let shape = omega.shape();
    let w = omega.values();
    let mut logits = vec![0.0; shape.classes];
    let mut loss = 0.0;
    let mut correct = 0usize;
    for s in samples {
        if s.features.len() != shape.dim_x || s.label >= shape.classes {
            return Err(Error::Contract("sample does not match model shape".into()));
        }
        logits_into(w, shape, &s.features, &mut logits);
        if predict(&logits) == s.label {
            correct += 1;
        }
        let target = logits[s.label];
        loss += softmax_in_place(&mut logits) - target;
    }
    let n = samples.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Index of the first maximal logit.
pub fn predict(logits: &[f64]) -> usize {
    let mut best = 0;
    for (c, &z) in logits.iter().enumerate().skip(1) {
        if z > logits[best] {
            best = c;
        }
    }
    best
}
