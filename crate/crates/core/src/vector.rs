//! Dense parameter vectors.

use std::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense vector of 64-bit reals used for models, duals and gradients.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(dim: usize) -> Self {
        ParamVector(vec![0.0; dim])
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        ParamVector(values)
    }

    pub fn basis(dim: usize, k: usize) -> Self {
        let mut v = Self::zeros(dim);
        v.0[k] = 1.0;
        v
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm_squared(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: f64, x: &ParamVector) {
        debug_assert_eq!(self.dim(), x.dim());
        for (s, v) in self.0.iter_mut().zip(&x.0) {
            *s += a * v;
        }
    }

    pub fn scale(&mut self, a: f64) {
        for s in &mut self.0 {
            *s *= a;
        }
    }

    pub fn scaled(&self, a: f64) -> ParamVector {
        ParamVector(self.0.iter().map(|v| a * v).collect())
    }

    pub fn distance(&self, other: &ParamVector) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub(crate) fn ensure_dim(&self, context: &'static str, expected: usize) -> Result<()> {
        if self.dim() == expected {
            Ok(())
        } else {
            Err(Error::dim(context, expected, self.dim()))
        }
    }

    pub(crate) fn ensure_finite(self, context: &str) -> Result<ParamVector> {
        if self.is_finite() {
            Ok(self)
        } else {
            Err(Error::NumericOverflow(format!("non-finite entry in {context}")))
        }
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        ParamVector(v)
    }
}

impl Index<usize> for ParamVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for ParamVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

impl Add for &ParamVector {
    type Output = ParamVector;
    fn add(self, rhs: &ParamVector) -> ParamVector {
        debug_assert_eq!(self.dim(), rhs.dim());
        ParamVector(self.0.iter().zip(&rhs.0).map(|(a, b)| a + b).collect())
    }
}

impl Sub for &ParamVector {
    type Output = ParamVector;
    fn sub(self, rhs: &ParamVector) -> ParamVector {
        debug_assert_eq!(self.dim(), rhs.dim());
        ParamVector(self.0.iter().zip(&rhs.0).map(|(a, b)| a - b).collect())
    }
}

impl Mul<f64> for &ParamVector {
    type Output = ParamVector;
    fn mul(self, rhs: f64) -> ParamVector {
        self.scaled(rhs)
    }
}

impl Neg for &ParamVector {
    type Output = ParamVector;
    fn neg(self) -> ParamVector {
        self.scaled(-1.0)
    }
}
