//! Labeled datasets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One labeled example. Labels are class indices stored as reals so that
/// the same container serves regression-style fixtures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "(Vec<f64>, f64)", into = "(Vec<f64>, f64)")]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: f64,
}

impl Sample {
    pub fn new(x: Vec<f64>, y: f64) -> Self {
        Sample { x, y }
    }

    /// Label as a class index. Labels are produced by the generator as
    /// exact small integers.
    #[inline]
    pub fn class(&self) -> usize {
        self.y as usize
    }
}

impl From<(Vec<f64>, f64)> for Sample {
    fn from((x, y): (Vec<f64>, f64)) -> Self {
        Sample { x, y }
    }
}

impl From<Sample> for (Vec<f64>, f64) {
    fn from(s: Sample) -> Self {
        (s.x, s.y)
    }
}

/// A non-empty collection of samples sharing one feature dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Sample>", into = "Vec<Sample>")]
pub struct Dataset {
    samples: Vec<Sample>,
    feature_dim: usize,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::invalid("dataset must be non-empty"))?;
        let feature_dim = first.x.len();
        if let Some(bad) = samples.iter().find(|s| s.x.len() != feature_dim) {
            return Err(Error::dim("dataset features", feature_dim, bad.x.len()));
        }
        if samples
            .iter()
            .any(|s| !s.y.is_finite() || s.x.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::invalid("dataset contains non-finite values"));
        }
        Ok(Dataset {
            samples,
            feature_dim,
        })
    }

    /// Convenience for fixtures: inputs with a shared label of zero.
    pub fn from_inputs(inputs: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(inputs.into_iter().map(|x| Sample::new(x, 0.0)).collect())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    #[inline]
    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    #[inline]
    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Sample> {
        self.samples.iter()
    }

    /// Sub-dataset made of the given indices, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        Dataset::new(indices.iter().map(|&i| self.samples[i].clone()).collect())
    }

    /// Concatenation; both parts must share the feature dimension.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        let mut samples = self.samples.clone();
        samples.extend(other.samples.iter().cloned());
        Dataset::new(samples)
    }

    /// Sorted list of distinct class labels.
    pub fn classes(&self) -> Vec<usize> {
        let mut c: Vec<usize> = self.samples.iter().map(Sample::class).collect();
        c.sort_unstable();
        c.dedup();
        c
    }
}

impl TryFrom<Vec<Sample>> for Dataset {
    type Error = Error;
    fn try_from(samples: Vec<Sample>) -> Result<Self> {
        Dataset::new(samples)
    }
}

impl From<Dataset> for Vec<Sample> {
    fn from(d: Dataset) -> Self {
        d.samples
    }
}
