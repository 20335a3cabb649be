use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The `(d_x, C)` pair a parameter vector was built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub dim_x: usize,
    pub classes: usize,
}

impl Shape {
    pub fn new(dim_x: usize, classes: usize) -> Self {
        Self { dim_x, classes }
    }

    /// `C·d_x` weights followed by `C` biases.
    pub fn len(&self) -> usize {
        self.classes * self.dim_x + self.classes
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn bias_offset(&self) -> usize {
        self.classes * self.dim_x
    }
}

/// Flat softmax-regression parameters, row-major weights then biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModel")]
pub struct ModelVector {
    shape: Shape,
    values: Vec<f64>,
}

#[derive(Deserialize)]
struct RawModel {
    shape: Shape,
    values: Vec<f64>,
}

impl TryFrom<RawModel> for ModelVector {
    type Error = Error;

    fn try_from(raw: RawModel) -> Result<Self> {
        ModelVector::from_values(raw.shape, raw.values)
    }
}

impl ModelVector {
    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            values: vec![0.0; shape.len()],
        }
    }

    pub fn from_values(shape: Shape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.len() {
            return Err(Error::Contract(format!(
                "expected {} parameters for shape {}x{}, got {}",
                shape.len(),
                shape.classes,
                shape.dim_x,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Contract(format!("parameter {i} is not finite")));
        }
        Ok(Self { shape, values })
    }

    pub(crate) fn from_raw(shape: Shape, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), shape.len());
        Self { shape, values }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn check_shape(&self, other: &ModelVector) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Contract(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn dot(&self, other: &ModelVector) -> Result<f64> {
        self.check_shape(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum())
    }

    pub fn add(&self, other: &ModelVector) -> Result<ModelVector> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &ModelVector) -> Result<ModelVector> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, factor: f64) -> ModelVector {
        ModelVector::from_raw(self.shape, self.values.iter().map(|v| v * factor).collect())
    }

    /// `self += alpha · other`
    pub fn add_scaled(&mut self, alpha: f64, other: &ModelVector) -> Result<()> {
        self.check_shape(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn distance(&self, other: &ModelVector) -> Result<f64> {
        self.check_shape(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }

    fn zip_with(&self, other: &ModelVector, f: impl Fn(f64, f64) -> f64) -> Result<ModelVector> {
        self.check_shape(other)?;
        Ok(ModelVector::from_raw(
            self.shape,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }
}
