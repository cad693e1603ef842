use std::sync::atomic::{AtomicU64, Ordering};

use crate::data::Dataset;
use crate::error::Result;
use crate::vector::ParamVector;

use super::{CurvatureBounds, Embedding, LossFn};

/// Wraps a model and counts gradient evaluations, split by whether the
/// dataset passed in is a designated support set, query set, or neither.
/// Datasets are matched by address.
pub struct CountingLoss<'a, M: ?Sized> {
    inner: &'a M,
    support: usize,
    query: usize,
    support_grads: AtomicU64,
    query_grads: AtomicU64,
    other_grads: AtomicU64,
}

impl<'a, M: LossFn + ?Sized> CountingLoss<'a, M> {
    pub fn new(inner: &'a M, support: &Dataset, query: &Dataset) -> Self {
        CountingLoss {
            inner,
            support: support as *const Dataset as usize,
            query: query as *const Dataset as usize,
            support_grads: AtomicU64::new(0),
            query_grads: AtomicU64::new(0),
            other_grads: AtomicU64::new(0),
        }
    }

    pub fn support_grads(&self) -> u64 {
        self.support_grads.load(Ordering::Relaxed)
    }

    pub fn query_grads(&self) -> u64 {
        self.query_grads.load(Ordering::Relaxed)
    }

    pub fn other_grads(&self) -> u64 {
        self.other_grads.load(Ordering::Relaxed)
    }
}

impl<M: LossFn + ?Sized> LossFn for CountingLoss<'_, M> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn input_dim(&self) -> Option<usize> {
        self.inner.input_dim()
    }
    fn value(&self, theta: &ParamVector, data: &Dataset) -> Result<f64> {
        self.inner.value(theta, data)
    }
    fn grad(&self, theta: &ParamVector, data: &Dataset) -> Result<ParamVector> {
        let addr = data as *const Dataset as usize;
        let counter = if addr == self.support {
            &self.support_grads
        } else if addr == self.query {
            &self.query_grads
        } else {
            &self.other_grads
        };
        counter.fetch_add(1, Ordering::Relaxed);
        self.inner.grad(theta, data)
    }
    fn exact_hvp(&self, theta: &ParamVector, r: &ParamVector, data: &Dataset) -> Result<ParamVector> {
        self.inner.exact_hvp(theta, r, data)
    }
    fn accuracy(&self, theta: &ParamVector, data: &Dataset) -> Result<Option<f64>> {
        self.inner.accuracy(theta, data)
    }
    fn embedding(&self) -> Option<&dyn Embedding> {
        self.inner.embedding()
    }
    fn curvature_bounds(&self, data: &Dataset, radius: f64) -> Option<CurvatureBounds> {
        self.inner.curvature_bounds(data, radius)
    }
}
