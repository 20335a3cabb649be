use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ModelVector;

/// Data-free even-round update `current + c·(current − previous)`.
///
/// Takes no dataset and no client state; only the two most recent global
/// models.
pub fn upcycled_even_update(
    current: &ModelVector,
    previous: &ModelVector,
    coefficient: f64,
) -> Result<ModelVector> {
    current.check_shape(previous)?;
    if coefficient == 0.0 {
        return Ok(current.clone());
    }
    let mut out = current.clone();
    let diff = current.sub(previous)?;
    out.add_scaled(coefficient, &diff)?;
    Ok(out)
}

/// λ_m as a function of the 1-based extrapolation index m.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaSchedule {
    pub lambda0: f64,
    /// Per-round increment; 0 for a constant schedule.
    #[serde(default)]
    pub slope: f64,
}

impl LambdaSchedule {
    pub fn constant(lambda0: f64) -> Self {
        Self { lambda0, slope: 0.0 }
    }

    pub fn at(&self, m: usize) -> f64 {
        self.lambda0 + self.slope * (m.saturating_sub(1)) as f64
    }
}

/// How the extrapolation coefficient `c_m` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum CoefficientSchedule {
    /// `c_m = μ/(μ + λ_m)`, the first-order-condition coefficient.
    Prox { mu: f64, lambda: LambdaSchedule },
    /// `c_m = λ_m/2`, as written in the server pseudocode.
    Alg1 { lambda: LambdaSchedule },
    /// `c_m = c0/√M`, constant over the run.
    Corollary { c0: f64 },
    /// `c_m = c0`.
    Fixed { c0: f64 },
}

impl CoefficientSchedule {
    pub fn parse(
        mode: &str,
        mu: Option<f64>,
        lambda: LambdaSchedule,
        c0: Option<f64>,
    ) -> Result<Self> {
        let schedule = match mode {
            "prox" => CoefficientSchedule::Prox {
                mu: mu.ok_or_else(|| Error::Config("prox schedule needs mu".into()))?,
                lambda,
            },
            "alg1" => CoefficientSchedule::Alg1 { lambda },
            "corollary" => CoefficientSchedule::Corollary {
                c0: c0.ok_or_else(|| Error::Config("corollary schedule needs c0".into()))?,
            },
            "fixed" => CoefficientSchedule::Fixed {
                c0: c0.ok_or_else(|| Error::Config("fixed schedule needs c0".into()))?,
            },
            other => {
                return Err(Error::Config(format!(
                    "unknown coefficient mode {other:?}; expected one of prox, alg1, corollary, fixed"
                )))
            }
        };
        schedule.validate()?;
        Ok(schedule)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            CoefficientSchedule::Prox { mu, lambda } => {
                mu > 0.0 && lambda.lambda0 >= 0.0 && lambda.slope >= 0.0
            }
            CoefficientSchedule::Alg1 { lambda } => lambda.lambda0 >= 0.0 && lambda.slope >= 0.0,
            CoefficientSchedule::Corollary { c0 } | CoefficientSchedule::Fixed { c0 } => {
                c0 >= 0.0 && c0.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid coefficient schedule {self:?}")))
        }
    }

    /// `c_m` for extrapolation `m` (1-based) out of `total` in the run.
    pub fn coefficient(&self, m: usize, total: usize) -> f64 {
        match *self {
            CoefficientSchedule::Prox { mu, lambda } => {
                let l = lambda.at(m);
                if l.is_infinite() {
                    0.0
                } else {
                    mu / (mu + l)
                }
            }
            CoefficientSchedule::Alg1 { lambda } => lambda.at(m) / 2.0,
            CoefficientSchedule::Corollary { c0 } => c0 / (total.max(1) as f64).sqrt(),
            CoefficientSchedule::Fixed { c0 } => c0,
        }
    }
}
