use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::vector::ParamVector;

use super::{sym_lambda_max, CurvatureBounds, LossFn};

/// Quadratic loss with per-sample center shift:
/// `l(θ, x) = ½ (θ − c − x)ᵀ A (θ − c − x)`.
///
/// The inputs move the minimizer, so clients holding different data get
/// different optima while sharing the curvature `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    n: usize,
    a: Vec<f64>,
    center: Vec<f64>,
    lambda_max: f64,
}

impl Quadratic {
    /// `a` is row-major `n × n`, symmetric positive semidefinite.
    pub fn new(a: Vec<f64>, center: Vec<f64>) -> Result<Self> {
        let n = center.len();
        if n == 0 {
            return Err(Error::invalid("quadratic model needs n >= 1"));
        }
        if a.len() != n * n {
            return Err(Error::dim("quadratic matrix entries", n * n, a.len()));
        }
        for i in 0..n {
            for j in 0..i {
                if (a[i * n + j] - a[j * n + i]).abs() > 1e-12 * (1.0 + a[i * n + j].abs()) {
                    return Err(Error::invalid("quadratic matrix must be symmetric"));
                }
            }
        }
        let m = nalgebra::DMatrix::from_row_slice(n, n, &a);
        let eig = nalgebra::SymmetricEigen::new(m);
        let lmin = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        if lmin < -1e-12 {
            return Err(Error::invalid("quadratic matrix must be positive semidefinite"));
        }
        let lambda_max = sym_lambda_max(n, &a);
        Ok(Quadratic {
            n,
            a,
            center,
            lambda_max,
        })
    }

    pub fn diagonal(diag: &[f64], center: Vec<f64>) -> Result<Self> {
        let n = diag.len();
        let mut a = vec![0.0; n * n];
        for (i, d) in diag.iter().enumerate() {
            a[i * n + i] = *d;
        }
        Self::new(a, center)
    }

    /// `A = curvature · I`, `c = 0`.
    pub fn isotropic(n: usize, curvature: f64) -> Result<Self> {
        Self::diagonal(&vec![curvature; n], vec![0.0; n])
    }

    fn apply(&self, v: &[f64]) -> ParamVector {
        let n = self.n;
        ParamVector::from_vec(
            (0..n)
                .map(|i| self.a[i * n..(i + 1) * n].iter().zip(v).map(|(a, b)| a * b).sum())
                .collect(),
        )
    }

    /// `c + mean(x)`: the minimizer of the mean loss when `A` is definite.
    pub fn effective_center(&self, data: &Dataset) -> Vec<f64> {
        let inv = 1.0 / data.len() as f64;
        let mut m = self.center.clone();
        for s in data.iter() {
            for (mk, xk) in m.iter_mut().zip(&s.x) {
                *mk += inv * xk;
            }
        }
        m
    }
}

impl LossFn for Quadratic {
    fn dim(&self) -> usize {
        self.n
    }

    fn input_dim(&self) -> Option<usize> {
        Some(self.n)
    }

    fn value(&self, theta: &ParamVector, data: &Dataset) -> Result<f64> {
        self.check(theta, data)?;
        let mut total = 0.0;
        let mut u = vec![0.0; self.n];
        for s in data.iter() {
            for k in 0..self.n {
                u[k] = theta[k] - self.center[k] - s.x[k];
            }
            let au = self.apply(&u);
            total += 0.5 * au.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>();
        }
        Ok(total / data.len() as f64)
    }

    fn grad(&self, theta: &ParamVector, data: &Dataset) -> Result<ParamVector> {
        self.check(theta, data)?;
        let m = self.effective_center(data);
        let u: Vec<f64> = theta.iter().zip(&m).map(|(t, c)| t - c).collect();
        self.apply(&u).ensure_finite("quadratic gradient")
    }

    fn exact_hvp(&self, theta: &ParamVector, r: &ParamVector, data: &Dataset) -> Result<ParamVector> {
        self.check(theta, data)?;
        r.ensure_dim("hvp direction", self.n)?;
        Ok(self.apply(r.as_slice()))
    }

    fn curvature_bounds(&self, data: &Dataset, radius: f64) -> Option<CurvatureBounds> {
        let c = self.effective_center(data);
        let cn = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        Some(CurvatureBounds {
            mu: self.lambda_max,
            zeta: 0.0,
            beta: self.lambda_max * (radius + cn),
            certified: true,
        })
    }
}
