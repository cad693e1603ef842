use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::vector::ParamVector;

use super::{sym_lambda_max, CurvatureBounds, LossFn};

/// Logits are clamped to this range before exponentiation.
pub const LOGIT_CLAMP: f64 = 30.0;

/// `max |σ''(z)|`, attained at `z = ±ln(2 + √3)`.
const SIGMOID_SECOND_DERIV_MAX: f64 = 0.096_225_044_864_937_63;

/// Binary logistic regression without intercept, cross-entropy on logits
/// `z = θᵀx`. Labels above 0.5 count as the positive class.
#[derive(Debug, Clone, PartialEq)]
pub struct Logistic {
    n: usize,
}

impl Logistic {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("logistic model needs n >= 1"));
        }
        Ok(Logistic { n })
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    let zc = z.clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
    1.0 / (1.0 + (-zc).exp())
}

#[inline]
fn label(y: f64) -> f64 {
    if y > 0.5 {
        1.0
    } else {
        0.0
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl LossFn for Logistic {
    fn dim(&self) -> usize {
        self.n
    }

    fn input_dim(&self) -> Option<usize> {
        Some(self.n)
    }

    fn value(&self, theta: &ParamVector, data: &Dataset) -> Result<f64> {
        self.check(theta, data)?;
        let total: f64 = data
            .iter()
            .map(|s| {
                let z = dot(theta.as_slice(), &s.x);
                // softplus(z) - y z, with the exponent clamped
                let a = z.abs().min(LOGIT_CLAMP);
                z.max(0.0) + (-a).exp().ln_1p() - label(s.y) * z
            })
            .sum();
        Ok(total / data.len() as f64)
    }

    fn grad(&self, theta: &ParamVector, data: &Dataset) -> Result<ParamVector> {
        self.check(theta, data)?;
        let inv = 1.0 / data.len() as f64;
        let mut g = ParamVector::zeros(self.n);
        for s in data.iter() {
            let coef = (sigmoid(dot(theta.as_slice(), &s.x)) - label(s.y)) * inv;
            for (gk, xk) in g.as_mut_slice().iter_mut().zip(&s.x) {
                *gk += coef * xk;
            }
        }
        g.ensure_finite("logistic gradient")
    }

    fn exact_hvp(&self, theta: &ParamVector, r: &ParamVector, data: &Dataset) -> Result<ParamVector> {
        self.check(theta, data)?;
        r.ensure_dim("hvp direction", self.n)?;
        let inv = 1.0 / data.len() as f64;
        let mut out = ParamVector::zeros(self.n);
        for s in data.iter() {
            let p = sigmoid(dot(theta.as_slice(), &s.x));
            let coef = p * (1.0 - p) * dot(r.as_slice(), &s.x) * inv;
            for (ok, xk) in out.as_mut_slice().iter_mut().zip(&s.x) {
                *ok += coef * xk;
            }
        }
        Ok(out)
    }

    fn accuracy(&self, theta: &ParamVector, data: &Dataset) -> Result<Option<f64>> {
        self.check(theta, data)?;
        let correct = data
            .iter()
            .filter(|s| (dot(theta.as_slice(), &s.x) > 0.0) == (label(s.y) == 1.0))
            .count();
        Ok(Some(correct as f64 / data.len() as f64))
    }

    /// Global bounds (independent of the radius): `μ = λ_max(XᵀX/|D|)/4`,
    /// `β = mean ‖x‖`, `ζ = max|σ''| · mean ‖x‖³`.
    fn curvature_bounds(&self, data: &Dataset, _radius: f64) -> Option<CurvatureBounds> {
        let n = self.n;
        let inv = 1.0 / data.len() as f64;
        let mut gram = vec![0.0; n * n];
        let mut mean_norm = 0.0;
        let mut mean_norm3 = 0.0;
        for s in data.iter() {
            for i in 0..n {
                for j in 0..n {
                    gram[i * n + j] += inv * s.x[i] * s.x[j];
                }
            }
            let nx = dot(&s.x, &s.x).sqrt();
            mean_norm += inv * nx;
            mean_norm3 += inv * nx * nx * nx;
        }
        Some(CurvatureBounds {
            mu: 0.25 * sym_lambda_max(n, &gram),
            zeta: SIGMOID_SECOND_DERIV_MAX * mean_norm3,
            beta: mean_norm,
            certified: true,
        })
    }
}
