//! Data-independent analytic losses used as oracle fixtures.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::vector::ParamVector;

use super::{CurvatureBounds, LossFn};

/// Separable quartic `L(θ) = Σ_k θ_k⁴ / 4`, gradient `θ³`, Hessian
/// `diag(3θ²)`. Ignores the dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Quartic {
    n: usize,
}

impl Quartic {
    pub fn new(n: usize) -> Self {
        Quartic { n }
    }
}

impl LossFn for Quartic {
    fn dim(&self) -> usize {
        self.n
    }

    fn input_dim(&self) -> Option<usize> {
        None
    }

    fn value(&self, theta: &ParamVector, data: &Dataset) -> Result<f64> {
        self.check(theta, data)?;
        Ok(theta.iter().map(|t| t.powi(4) / 4.0).sum())
    }

    fn grad(&self, theta: &ParamVector, data: &Dataset) -> Result<ParamVector> {
        self.check(theta, data)?;
        ParamVector::from_vec(theta.iter().map(|t| t * t * t).collect()).ensure_finite("quartic gradient")
    }

    fn exact_hvp(&self, theta: &ParamVector, r: &ParamVector, data: &Dataset) -> Result<ParamVector> {
        self.check(theta, data)?;
        r.ensure_dim("hvp direction", self.n)?;
        Ok(ParamVector::from_vec(
            theta.iter().zip(r.iter()).map(|(t, v)| 3.0 * t * t * v).collect(),
        ))
    }

    /// Over `‖θ‖ ≤ B`: `μ = 3B²`, `ζ = 6B`, `β = B³`.
    fn curvature_bounds(&self, _data: &Dataset, radius: f64) -> Option<CurvatureBounds> {
        Some(CurvatureBounds {
            mu: 3.0 * radius * radius,
            zeta: 6.0 * radius,
            beta: radius.powi(3),
            certified: true,
        })
    }
}

/// Linear loss `L(θ) = bᵀθ` with constant gradient `b`. Ignores the dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    slope: ParamVector,
}

impl Linear {
    pub fn new(slope: Vec<f64>) -> Result<Self> {
        if slope.is_empty() {
            return Err(Error::invalid("linear fixture needs n >= 1"));
        }
        Ok(Linear {
            slope: ParamVector::from_vec(slope),
        })
    }
}

impl LossFn for Linear {
    fn dim(&self) -> usize {
        self.slope.dim()
    }

    fn input_dim(&self) -> Option<usize> {
        None
    }

    fn value(&self, theta: &ParamVector, data: &Dataset) -> Result<f64> {
        self.check(theta, data)?;
        Ok(self.slope.dot(theta))
    }

    fn grad(&self, theta: &ParamVector, data: &Dataset) -> Result<ParamVector> {
        self.check(theta, data)?;
        Ok(self.slope.clone())
    }

    fn exact_hvp(&self, theta: &ParamVector, r: &ParamVector, data: &Dataset) -> Result<ParamVector> {
        self.check(theta, data)?;
        r.ensure_dim("hvp direction", self.dim())?;
        Ok(ParamVector::zeros(self.dim()))
    }

    fn curvature_bounds(&self, _data: &Dataset, _radius: f64) -> Option<CurvatureBounds> {
        Some(CurvatureBounds {
            mu: 0.0,
            zeta: 0.0,
            beta: self.slope.norm(),
            certified: true,
        })
    }
}
