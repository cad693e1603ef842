use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::vector::ParamVector;

use super::{Embedding, LossFn};

/// Default hidden width.
pub const DEFAULT_HIDDEN: usize = 8;

/// One-hidden-layer tanh network with a softmax cross-entropy head.
///
/// Parameter layout, flattened in this order:
/// `W1` (hidden × input, row-major), `b1` (hidden), `W2` (classes × hidden,
/// row-major), `b2` (classes). The hidden activation is the embedding used by
/// contrastive distillation.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp1 {
    input: usize,
    hidden: usize,
    classes: usize,
}

struct Layout {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

impl Mlp1 {
    pub fn new(input: usize, hidden: usize, classes: usize) -> Result<Self> {
        if input == 0 || hidden == 0 {
            return Err(Error::invalid("mlp1 needs positive input and hidden widths"));
        }
        if classes < 2 {
            return Err(Error::invalid("mlp1 needs at least 2 classes"));
        }
        Ok(Mlp1 {
            input,
            hidden,
            classes,
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    fn layout(&self) -> Layout {
        let w1 = 0;
        let b1 = w1 + self.hidden * self.input;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.classes * self.hidden;
        Layout { w1, b1, w2, b2 }
    }

    fn hidden_act(&self, theta: &[f64], x: &[f64], h: &mut [f64]) {
        let l = self.layout();
        for (j, hj) in h.iter_mut().enumerate() {
            let row = &theta[l.w1 + j * self.input..l.w1 + (j + 1) * self.input];
            let a: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + theta[l.b1 + j];
            *hj = a.tanh();
        }
    }

    fn logits(&self, theta: &[f64], h: &[f64], o: &mut [f64]) {
        let l = self.layout();
        for (k, ok) in o.iter_mut().enumerate() {
            let row = &theta[l.w2 + k * self.hidden..l.w2 + (k + 1) * self.hidden];
            *ok = row.iter().zip(h).map(|(w, v)| w * v).sum::<f64>() + theta[l.b2 + k];
        }
    }

    fn label(&self, y: f64) -> Result<usize> {
        let k = y as usize;
        if y < 0.0 || y.fract() != 0.0 || k >= self.classes {
            return Err(Error::invalid(format!(
                "label {y} outside 0..{} for mlp1",
                self.classes
            )));
        }
        Ok(k)
    }
}

/// Softmax in place; returns log-sum-exp.
fn softmax(o: &mut [f64]) -> f64 {
    let m = o.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for v in o.iter_mut() {
        *v = (*v - m).exp();
        z += *v;
    }
    for v in o.iter_mut() {
        *v /= z;
    }
    m + z.ln()
}

impl LossFn for Mlp1 {
    fn dim(&self) -> usize {
        self.hidden * self.input + self.hidden + self.classes * self.hidden + self.classes
    }

    fn input_dim(&self) -> Option<usize> {
        Some(self.input)
    }

    fn value(&self, theta: &ParamVector, data: &Dataset) -> Result<f64> {
        self.check(theta, data)?;
        let th = theta.as_slice();
        let mut h = vec![0.0; self.hidden];
        let mut o = vec![0.0; self.classes];
        let mut total = 0.0;
        for s in data.iter() {
            let k = self.label(s.y)?;
            self.hidden_act(th, &s.x, &mut h);
            self.logits(th, &h, &mut o);
            let target = o[k];
            total += softmax(&mut o) - target;
        }
        Ok(total / data.len() as f64)
    }

    fn grad(&self, theta: &ParamVector, data: &Dataset) -> Result<ParamVector> {
        self.check(theta, data)?;
        let th = theta.as_slice();
        let l = self.layout();
        let inv = 1.0 / data.len() as f64;
        let mut g = ParamVector::zeros(self.dim());
        let gs = g.as_mut_slice();
        let mut h = vec![0.0; self.hidden];
        let mut o = vec![0.0; self.classes];
        let mut dh = vec![0.0; self.hidden];
        for s in data.iter() {
            let k = self.label(s.y)?;
            self.hidden_act(th, &s.x, &mut h);
            self.logits(th, &h, &mut o);
            softmax(&mut o);
            o[k] -= 1.0;
            dh.iter_mut().for_each(|v| *v = 0.0);
            for (c, dc) in o.iter().enumerate() {
                let dc = dc * inv;
                gs[l.b2 + c] += dc;
                let base = l.w2 + c * self.hidden;
                for j in 0..self.hidden {
                    gs[base + j] += dc * h[j];
                    dh[j] += dc * th[base + j];
                }
            }
            for j in 0..self.hidden {
                let da = dh[j] * (1.0 - h[j] * h[j]);
                gs[l.b1 + j] += da;
                let base = l.w1 + j * self.input;
                for (i, xi) in s.x.iter().enumerate() {
                    gs[base + i] += da * xi;
                }
            }
        }
        g.ensure_finite("mlp1 gradient")
    }

    fn accuracy(&self, theta: &ParamVector, data: &Dataset) -> Result<Option<f64>> {
        self.check(theta, data)?;
        let th = theta.as_slice();
        let mut h = vec![0.0; self.hidden];
        let mut o = vec![0.0; self.classes];
        let mut correct = 0usize;
        for s in data.iter() {
            let k = self.label(s.y)?;
            self.hidden_act(th, &s.x, &mut h);
            self.logits(th, &h, &mut o);
            // first maximal index wins ties
            let pred = o
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                .0;
            if pred == k {
                correct += 1;
            }
        }
        Ok(Some(correct as f64 / data.len() as f64))
    }

    fn embedding(&self) -> Option<&dyn Embedding> {
        Some(self)
    }
}

impl Embedding for Mlp1 {
    fn embedding_dim(&self) -> usize {
        self.hidden
    }

    fn embed(&self, theta: &ParamVector, x: &[f64]) -> Vec<f64> {
        let mut h = vec![0.0; self.hidden];
        self.hidden_act(theta.as_slice(), x, &mut h);
        h
    }

    fn embed_vjp(&self, theta: &ParamVector, x: &[f64], v: &[f64], scale: f64, out: &mut ParamVector) {
        let l = self.layout();
        let mut h = vec![0.0; self.hidden];
        self.hidden_act(theta.as_slice(), x, &mut h);
        let os = out.as_mut_slice();
        for j in 0..self.hidden {
            let da = scale * v[j] * (1.0 - h[j] * h[j]);
            os[l.b1 + j] += da;
            let base = l.w1 + j * self.input;
            for (i, xi) in x.iter().enumerate() {
                os[base + i] += da * xi;
            }
        }
    }
}
