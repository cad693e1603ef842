//! Server-side knowledge-transfer terms `R_h(θ, θ_p)`.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::{Embedding, LossFn};
use crate::rng::{substream, Stage};
use crate::vector::ParamVector;

/// Contrastive distillation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrdParams {
    /// Temperature τ.
    pub temperature: f64,
    /// Negatives N per positive pair.
    pub negatives: usize,
    pub batch_size: usize,
}

impl Default for CrdParams {
    fn default() -> Self {
        CrdParams {
            temperature: 0.5,
            negatives: 16,
            batch_size: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub enum Regularizer {
    None,
    #[default]
    SqDist,
    Crd(CrdParams),
}

impl Regularizer {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Regularizer::None => "none",
            Regularizer::SqDist => "sq_dist",
            Regularizer::Crd(_) => "crd",
        }
    }

    /// Gradient Lipschitz constant `μ_r`, when known in closed form.
    pub fn smoothness(&self) -> Option<f64> {
        match self {
            Regularizer::None => Some(0.0),
            Regularizer::SqDist => Some(2.0),
            Regularizer::Crd(_) => None,
        }
    }

    /// Checks that the regularizer can be used with `model`.
    pub fn validate_for<M: LossFn + ?Sized>(&self, model: &M) -> Result<()> {
        if let Regularizer::Crd(p) = self {
            if !(p.temperature > 0.0) {
                return Err(Error::InvalidConfig("crd temperature must be > 0".into()));
            }
            if p.batch_size < p.negatives + 1 {
                return Err(Error::InvalidConfig(format!(
                    "crd batch_size {} must be >= negatives + 1 = {}",
                    p.batch_size,
                    p.negatives + 1
                )));
            }
            if model.embedding().is_none() {
                return Err(Error::InvalidConfig(
                    "crd regularizer needs a model with a hidden layer (mlp1)".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Value and θ-gradient of the regularizer. `seed` drives the contrastive
/// minibatch and negative sampling; the other kinds ignore it.
pub fn reg_value_grad<M: LossFn + ?Sized>(
    reg: &Regularizer,
    model: &M,
    theta: &ParamVector,
    theta_p: &ParamVector,
    server_data: &Dataset,
    seed: u64,
) -> Result<(f64, ParamVector)> {
    theta_p.ensure_dim("pretrained parameters", theta.dim())?;
    match reg {
        Regularizer::None => Ok((0.0, ParamVector::zeros(theta.dim()))),
        Regularizer::SqDist => {
            let diff = theta - theta_p;
            Ok((diff.norm_squared(), diff.scaled(2.0)))
        }
        Regularizer::Crd(p) => {
            reg.validate_for(model)?;
            let emb = model.embedding().expect("validated above");
            let mut rng = substream(seed, Stage::Regularizer, 0);
            let b = p.batch_size.min(server_data.len());
            if b < p.negatives + 1 {
                return Err(Error::invalid(format!(
                    "server pool of {} samples is smaller than negatives + 1",
                    server_data.len()
                )));
            }
            let picked = index::sample(&mut rng, server_data.len(), b).into_vec();
            let batch = server_data.select(&picked)?;
            let crd = CrdConfig {
                temperature: p.temperature,
                negatives: p.negatives,
                server_size: server_data.len(),
            };
            crd_value_grad(theta, theta_p, emb, emb, &batch, crd, seed)
        }
    }
}

/// The critic `h(c, s) = exp(cᵀs/τ) / (exp(cᵀs/τ) + N/D_s)` with the identity
/// mapping between teacher and student representations.
pub fn crd_critic(c: &[f64], s: &[f64], temperature: f64, negatives: usize, server_size: usize) -> Result<f64> {
    check_critic(temperature, server_size)?;
    if c.len() != s.len() {
        return Err(Error::dim("crd representations", c.len(), s.len()));
    }
    let u = dot(c, s) / temperature;
    Ok(log_h(u, negatives as f64 / server_size as f64).exp())
}

fn check_critic(temperature: f64, server_size: usize) -> Result<()> {
    if !(temperature > 0.0) {
        return Err(Error::invalid("crd temperature must be > 0"));
    }
    if server_size == 0 {
        return Err(Error::invalid("crd server dataset size must be >= 1"));
    }
    Ok(())
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `ln(eᵘ + a)` for `a > 0`, without overflow.
#[inline]
fn log_exp_plus(u: f64, a: f64) -> f64 {
    let la = a.ln();
    let m = u.max(la);
    m + ((u - m).exp() + (la - m).exp()).ln()
}

/// `ln h` where `h = eᵘ / (eᵘ + a)`.
#[inline]
fn log_h(u: f64, a: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else {
        u - log_exp_plus(u, a)
    }
}

/// `ln(1 − h)`; only called with `a > 0`.
#[inline]
fn log_one_minus_h(u: f64, a: f64) -> f64 {
    a.ln() - log_exp_plus(u, a)
}

#[derive(Debug, Clone, Copy)]
pub struct CrdConfig {
    pub temperature: f64,
    pub negatives: usize,
    /// Cardinality `D_s` of the full server dataset.
    pub server_size: usize,
}

/// Empirical contrastive distillation loss over `batch` and its θ-gradient.
///
/// Each anchor `x_j` contributes `−ln h(c_j, s_j) − Σ_k ln(1 − h(c_k, s_j))`,
/// where `s = g^θ(x)` is the student representation, `c = g^{θ_p}(x)` the
/// frozen teacher representation and the `N` indices `k ≠ j` are drawn
/// without replacement from the batch. The value is averaged over anchors.
pub fn crd_value_grad(
    theta: &ParamVector,
    theta_p: &ParamVector,
    student: &dyn Embedding,
    teacher: &dyn Embedding,
    batch: &Dataset,
    crd: CrdConfig,
    seed: u64,
) -> Result<(f64, ParamVector)> {
    check_critic(crd.temperature, crd.server_size)?;
    let b = batch.len();
    if b < crd.negatives + 1 {
        return Err(Error::invalid(format!(
            "crd batch of {b} samples is smaller than negatives + 1 = {}",
            crd.negatives + 1
        )));
    }
    if student.embedding_dim() != teacher.embedding_dim() {
        return Err(Error::dim(
            "crd representations",
            teacher.embedding_dim(),
            student.embedding_dim(),
        ));
    }
    let tau = crd.temperature;
    let a = crd.negatives as f64 / crd.server_size as f64;
    let students: Vec<Vec<f64>> = batch.iter().map(|s| student.embed(theta, &s.x)).collect();
    let teachers: Vec<Vec<f64>> = batch.iter().map(|s| teacher.embed(theta_p, &s.x)).collect();

    let mut rng = substream(seed, Stage::Regularizer, 1);
    let mut value = 0.0;
    let mut grad = ParamVector::zeros(theta.dim());
    let mut ds = vec![0.0; student.embedding_dim()];
    for (j, sample) in batch.iter().enumerate() {
        let s = &students[j];
        ds.iter_mut().for_each(|v| *v = 0.0);

        let u = dot(&teachers[j], s) / tau;
        let lh = log_h(u, a);
        value -= lh;
        let w = -(1.0 - lh.exp()) / tau;
        for (d, c) in ds.iter_mut().zip(&teachers[j]) {
            *d += w * c;
        }

        if crd.negatives > 0 {
            for pick in index::sample(&mut rng, b - 1, crd.negatives).into_iter() {
                let k = if pick >= j { pick + 1 } else { pick };
                let u = dot(&teachers[k], s) / tau;
                value -= log_one_minus_h(u, a);
                let w = log_h(u, a).exp() / tau;
                for (d, c) in ds.iter_mut().zip(&teachers[k]) {
                    *d += w * c;
                }
            }
        }
        student.embed_vjp(theta, &sample.x, &ds, 1.0 / b as f64, &mut grad);
    }
    let value = value / b as f64;
    if !value.is_finite() {
        return Err(Error::NumericOverflow("crd value".into()));
    }
    Ok((value, grad.ensure_finite("crd gradient")?))
}
