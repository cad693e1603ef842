//! Differentiable mean-loss models and first-order oracles.
//!
//! Every model evaluates the *mean* per-sample loss over a dataset and its
//! exact analytic gradient. On top of that this module provides the
//! finite-difference oracles used to check gradients and the two-gradient
//! Hessian-vector estimator that keeps the AugFL client update first-order.

mod counting;
pub mod fixtures;
mod logistic;
mod mlp;
mod quadratic;

use serde::{Deserialize, Serialize};

pub use counting::CountingLoss;
pub use logistic::Logistic;
pub use mlp::{Mlp1, DEFAULT_HIDDEN};
pub use quadratic::Quadratic;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::vector::ParamVector;

/// Step of the nested central difference used by the default
/// [`LossFn::exact_hvp`] for models without an analytic Hessian.
pub const NESTED_FD_STEP: f64 = 1e-6;

/// Smoothness constants of a loss over a ball `‖θ‖ ≤ radius`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvatureBounds {
    /// Gradient Lipschitz constant.
    pub mu: f64,
    /// Hessian Lipschitz constant.
    pub zeta: f64,
    /// Gradient norm bound.
    pub beta: f64,
    /// `true` when the values are proven bounds rather than sampled estimates.
    pub certified: bool,
}

impl CurvatureBounds {
    /// Component-wise maximum, used to merge support and query constants.
    pub fn max(self, other: CurvatureBounds) -> CurvatureBounds {
        CurvatureBounds {
            mu: self.mu.max(other.mu),
            zeta: self.zeta.max(other.zeta),
            beta: self.beta.max(other.beta),
            certified: self.certified && other.certified,
        }
    }
}

/// Penultimate-layer representation of a model, as used by contrastive
/// distillation.
pub trait Embedding: Sync {
    fn embedding_dim(&self) -> usize;

    /// `g^θ(x)`.
    fn embed(&self, theta: &ParamVector, x: &[f64]) -> Vec<f64>;

    /// Vector-Jacobian product `∇_θ ⟨v, g^θ(x)⟩`, accumulated into `out`
    /// with weight `scale`.
    fn embed_vjp(&self, theta: &ParamVector, x: &[f64], v: &[f64], scale: f64, out: &mut ParamVector);
}

/// A differentiable mean loss `L(θ, D) = (1/|D|) Σ_j l(θ, (x_j, y_j))`.
pub trait LossFn: Send + Sync {
    /// Parameter dimension n.
    fn dim(&self) -> usize;

    /// Feature dimension the model expects, if it reads inputs at all.
    fn input_dim(&self) -> Option<usize>;

    fn value(&self, theta: &ParamVector, data: &Dataset) -> Result<f64>;

    fn grad(&self, theta: &ParamVector, data: &Dataset) -> Result<ParamVector>;

    /// `∇²L(θ, D)·r`. The default is a central difference of the analytic
    /// gradient along `r/‖r‖` with step [`NESTED_FD_STEP`], rescaled by `‖r‖`.
    fn exact_hvp(&self, theta: &ParamVector, r: &ParamVector, data: &Dataset) -> Result<ParamVector> {
        self.check(theta, data)?;
        r.ensure_dim("hvp direction", self.dim())?;
        let rn = r.norm();
        if rn == 0.0 {
            return Ok(ParamVector::zeros(self.dim()));
        }
        let h = NESTED_FD_STEP;
        let mut plus = theta.clone();
        plus.axpy(h / rn, r);
        let mut minus = theta.clone();
        minus.axpy(-h / rn, r);
        let mut out = &self.grad(&plus, data)? - &self.grad(&minus, data)?;
        out.scale(rn / (2.0 * h));
        out.ensure_finite("exact_hvp")
    }

    /// Fraction of correctly classified samples; `None` when the model has
    /// no notion of a class prediction.
    fn accuracy(&self, _theta: &ParamVector, _data: &Dataset) -> Result<Option<f64>> {
        Ok(None)
    }

    fn embedding(&self) -> Option<&dyn Embedding> {
        None
    }

    /// Closed-form smoothness constants over `‖θ‖ ≤ radius`, when the model
    /// admits them.
    fn curvature_bounds(&self, _data: &Dataset, _radius: f64) -> Option<CurvatureBounds> {
        None
    }

    /// Shared precondition of every evaluation.
    fn check(&self, theta: &ParamVector, data: &Dataset) -> Result<()> {
        theta.ensure_dim("model parameters", self.dim())?;
        if data.is_empty() {
            return Err(Error::invalid("dataset must be non-empty"));
        }
        if let Some(d) = self.input_dim() {
            if data.feature_dim() != d {
                return Err(Error::dim("dataset features", d, data.feature_dim()));
            }
        }
        Ok(())
    }
}

/// Analytic gradient of the mean loss.
pub fn grad<M: LossFn + ?Sized>(model: &M, theta: &ParamVector, data: &Dataset) -> Result<ParamVector> {
    model.grad(theta, data)
}

/// Coordinate-wise central-difference gradient:
/// `(L(θ + h e_k) − L(θ − h e_k)) / 2h`.
pub fn fd_grad<M: LossFn + ?Sized>(
    model: &M,
    theta: &ParamVector,
    data: &Dataset,
    h: f64,
) -> Result<ParamVector> {
    if !(h > 0.0) {
        return Err(Error::invalid(format!("finite-difference step must be > 0, got {h}")));
    }
    model.check(theta, data)?;
    let mut out = ParamVector::zeros(theta.dim());
    let mut probe = theta.clone();
    for k in 0..theta.dim() {
        let orig = probe[k];
        probe[k] = orig + h;
        let up = model.value(&probe, data)?;
        probe[k] = orig - h;
        let down = model.value(&probe, data)?;
        probe[k] = orig;
        out[k] = (up - down) / (2.0 * h);
    }
    out.ensure_finite("fd_grad")
}

/// First-order estimate of `∇²L(θ, D)·r` from two gradient evaluations:
/// `(∇L(θ + δr) − ∇L(θ − δr)) / 2δ`.
pub fn hvp_estimate<M: LossFn + ?Sized>(
    model: &M,
    theta: &ParamVector,
    r: &ParamVector,
    delta: f64,
    data: &Dataset,
) -> Result<ParamVector> {
    if !(delta > 0.0) {
        return Err(Error::invalid(format!("estimator step delta must be > 0, got {delta}")));
    }
    r.ensure_dim("hvp direction", theta.dim())?;
    let mut plus = theta.clone();
    plus.axpy(delta, r);
    let mut minus = theta.clone();
    minus.axpy(-delta, r);
    let mut out = &model.grad(&plus, data)? - &model.grad(&minus, data)?;
    out.scale(1.0 / (2.0 * delta));
    out.ensure_finite("hvp_estimate")
}

/// Exact Hessian-vector product (analytic where available).
pub fn exact_hvp<M: LossFn + ?Sized>(
    model: &M,
    theta: &ParamVector,
    r: &ParamVector,
    data: &Dataset,
) -> Result<ParamVector> {
    model.exact_hvp(theta, r, data)
}

/// Which Hessian-vector routine to use inside a meta-gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HessianProduct {
    /// Central-difference estimator with the given step.
    Estimate(f64),
    Exact,
}

impl HessianProduct {
    pub fn apply<M: LossFn + ?Sized>(
        self,
        model: &M,
        theta: &ParamVector,
        r: &ParamVector,
        data: &Dataset,
    ) -> Result<ParamVector> {
        match self {
            HessianProduct::Estimate(delta) => hvp_estimate(model, theta, r, delta, data),
            HessianProduct::Exact => exact_hvp(model, theta, r, data),
        }
    }
}

/// Model kinds configurable from experiment files.
#[derive(Debug, Clone, PartialEq)]
pub enum LossModel {
    Quadratic(Quadratic),
    Logistic(Logistic),
    Mlp1(Mlp1),
}

impl LossModel {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LossModel::Quadratic(_) => "quadratic",
            LossModel::Logistic(_) => "logistic",
            LossModel::Mlp1(_) => "mlp1",
        }
    }

    fn inner(&self) -> &dyn LossFn {
        match self {
            LossModel::Quadratic(m) => m,
            LossModel::Logistic(m) => m,
            LossModel::Mlp1(m) => m,
        }
    }
}

impl LossFn for LossModel {
    fn dim(&self) -> usize {
        self.inner().dim()
    }
    fn input_dim(&self) -> Option<usize> {
        self.inner().input_dim()
    }
    fn value(&self, theta: &ParamVector, data: &Dataset) -> Result<f64> {
        self.inner().value(theta, data)
    }
    fn grad(&self, theta: &ParamVector, data: &Dataset) -> Result<ParamVector> {
        self.inner().grad(theta, data)
    }
    fn exact_hvp(&self, theta: &ParamVector, r: &ParamVector, data: &Dataset) -> Result<ParamVector> {
        self.inner().exact_hvp(theta, r, data)
    }
    fn accuracy(&self, theta: &ParamVector, data: &Dataset) -> Result<Option<f64>> {
        self.inner().accuracy(theta, data)
    }
    fn embedding(&self) -> Option<&dyn Embedding> {
        match self {
            LossModel::Mlp1(m) => Some(m),
            _ => None,
        }
    }
    fn curvature_bounds(&self, data: &Dataset, radius: f64) -> Option<CurvatureBounds> {
        self.inner().curvature_bounds(data, radius)
    }
}

/// Largest eigenvalue of a symmetric matrix given row-major.
pub(crate) fn sym_lambda_max(n: usize, entries: &[f64]) -> f64 {
    let m = nalgebra::DMatrix::from_row_slice(n, n, entries);
    let eig = nalgebra::SymmetricEigen::new(m);
    eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}
