//! Per-client computations of a round.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{HessianProduct, LossFn};
use crate::tasks::ClientRecord;
use crate::vector::ParamVector;

/// Adapted model `φ = θ − α ∇L(θ, D^s)`.
pub fn client_inner_step<M: LossFn + ?Sized>(
    client: &ClientRecord,
    theta: &ParamVector,
    model: &M,
    alpha: f64,
) -> Result<ParamVector> {
    let mut phi = theta.clone();
    phi.axpy(-alpha, &model.grad(theta, &client.support)?);
    Ok(phi)
}

/// Pieces of the first-order meta-gradient at θ.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaTerms {
    /// Adapted model φ.
    pub phi: ParamVector,
    /// Query gradient at φ.
    pub r: ParamVector,
    /// Hessian-vector term `∇²L(θ, D^s)·r` (estimated or exact).
    pub g: ParamVector,
}

impl MetaTerms {
    /// `r − α g`, the surrogate of `∇F_i(θ)`.
    pub fn surrogate_gradient(&self, alpha: f64) -> ParamVector {
        let mut v = self.r.clone();
        v.axpy(-alpha, &self.g);
        v
    }
}

/// One support gradient for φ, one query gradient for r, and whatever the
/// Hessian-vector routine needs (two support gradients for the estimator).
pub fn meta_terms<M: LossFn + ?Sized>(
    client: &ClientRecord,
    theta: &ParamVector,
    model: &M,
    alpha: f64,
    hvp: HessianProduct,
) -> Result<MetaTerms> {
    let phi = client_inner_step(client, theta, model, alpha)?;
    let r = model.grad(&phi, &client.query)?;
    let g = hvp.apply(model, theta, &r, &client.support)?;
    Ok(MetaTerms { phi, r, g })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalUpdate {
    pub theta_i: ParamVector,
    pub terms: MetaTerms,
}

/// Linearized local step:
/// `θ_i = θ − (y_prev + w_i (r − α g)) / ρ_i`.
pub fn client_local_update<M: LossFn + ?Sized>(
    client: &ClientRecord,
    theta: &ParamVector,
    dual_prev: &ParamVector,
    model: &M,
    alpha: f64,
    delta: f64,
) -> Result<LocalUpdate> {
    client_local_update_with(client, theta, dual_prev, model, alpha, HessianProduct::Estimate(delta))
}

/// [`client_local_update`] with an explicit Hessian-vector routine.
pub fn client_local_update_with<M: LossFn + ?Sized>(
    client: &ClientRecord,
    theta: &ParamVector,
    dual_prev: &ParamVector,
    model: &M,
    alpha: f64,
    hvp: HessianProduct,
) -> Result<LocalUpdate> {
    if !(client.rho > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "client {} has rho = {}, must be > 0",
            client.id, client.rho
        )));
    }
    dual_prev.ensure_dim("dual variable", theta.dim())?;
    let terms = meta_terms(client, theta, model, alpha, hvp)?;
    let mut force = dual_prev.clone();
    force.axpy(client.weight, &terms.surrogate_gradient(alpha));
    let mut theta_i = theta.clone();
    theta_i.axpy(-1.0 / client.rho, &force);
    Ok(LocalUpdate { theta_i, terms })
}

/// `y = y_prev + ρ_i (θ_i − θ)`.
pub fn client_dual_update(
    client: &ClientRecord,
    theta_i: &ParamVector,
    theta: &ParamVector,
    dual_prev: &ParamVector,
) -> Result<ParamVector> {
    theta_i.ensure_dim("local parameters", theta.dim())?;
    dual_prev.ensure_dim("dual variable", theta.dim())?;
    let mut y = dual_prev.clone();
    y.axpy(client.rho, &(theta_i - theta));
    Ok(y)
}

/// Meta-objective `F_i(θ) = L(θ − α∇L(θ, D^s), D^q)`.
pub fn meta_objective<M: LossFn + ?Sized>(
    client: &ClientRecord,
    theta: &ParamVector,
    model: &M,
    alpha: f64,
) -> Result<f64> {
    let phi = client_inner_step(client, theta, model, alpha)?;
    model.value(&phi, &client.query)
}

/// Exact gradient `(I − α∇²L(θ, D^s)) ∇L(φ, D^q)` of [`meta_objective`].
pub fn meta_gradient<M: LossFn + ?Sized>(
    client: &ClientRecord,
    theta: &ParamVector,
    model: &M,
    alpha: f64,
) -> Result<ParamVector> {
    Ok(meta_terms(client, theta, model, alpha, HessianProduct::Exact)?.surrogate_gradient(alpha))
}

/// Default iteration cap of [`exact_local_solve`].
pub const EXACT_SOLVE_MAX_ITER: usize = 100_000;

/// Minimizes the exact local subproblem
/// `w_i F_i(θ_i) + ⟨y_prev, θ_i − θ⟩ + (ρ_i/2)‖θ_i − θ‖²`
/// by gradient descent with Armijo backtracking, starting from θ.
pub fn exact_local_solve<M: LossFn + ?Sized>(
    client: &ClientRecord,
    theta: &ParamVector,
    dual_prev: &ParamVector,
    model: &M,
    alpha: f64,
    tol: f64,
    max_iter: usize,
) -> Result<ParamVector> {
    if !(tol > 0.0) {
        return Err(Error::invalid("exact solve tolerance must be > 0"));
    }
    if !(client.rho > 0.0) {
        return Err(Error::InvalidConfig(format!("client {} has rho <= 0", client.id)));
    }
    let (w, rho) = (client.weight, client.rho);
    let objective = |x: &ParamVector| -> Result<f64> {
        let d = x - theta;
        Ok(w * meta_objective(client, x, model, alpha)? + dual_prev.dot(&d) + 0.5 * rho * d.norm_squared())
    };
    let gradient = |x: &ParamVector| -> Result<ParamVector> {
        let mut g = meta_gradient(client, x, model, alpha)?.scaled(w);
        g.axpy(1.0, dual_prev);
        g.axpy(rho, &(x - theta));
        Ok(g)
    };

    let mut x = theta.clone();
    let mut fx = objective(&x)?;
    let mut g = gradient(&x)?;
    let mut step = 1.0 / rho;
    for iteration in 0..max_iter {
        let gn2 = g.norm_squared();
        if gn2.sqrt() <= tol {
            return Ok(x);
        }
        let mut accepted = false;
        for _ in 0..60 {
            let mut cand = x.clone();
            cand.axpy(-step, &g);
            let fc = objective(&cand)?;
            if fc <= fx - 0.5 * step * gn2 {
                x = cand;
                fx = fc;
                g = gradient(&x)?;
                accepted = true;
                break;
            }
            // below round-off the objective cannot rank candidates; fall back
            // to requiring a smaller gradient
            if (fx - fc).abs() <= ROUNDOFF * fx.abs().max(1.0) {
                let gc = gradient(&cand)?;
                if gc.norm_squared() < gn2 {
                    x = cand;
                    fx = fc;
                    g = gc;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            return Err(Error::NoConvergence {
                iterations: iteration,
                residual: gn2.sqrt(),
            });
        }
        step *= 2.0;
    }
    let residual = g.norm();
    if residual <= tol {
        Ok(x)
    } else {
        Err(Error::NoConvergence {
            iterations: max_iter,
            residual,
        })
    }
}

/// Relative objective change treated as rounding noise by the line search.
const ROUNDOFF: f64 = 1e-13;

/// Result of adapting a meta-model on one client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adaptation {
    pub client: usize,
    pub pre_loss: f64,
    pub post_loss: f64,
    /// Absent for models without class predictions.
    pub post_accuracy: Option<f64>,
    /// Adapted model.
    pub phi: ParamVector,
}

/// `steps` full-batch gradient steps of size α on the support set from θ,
/// scored on the query set.
pub fn adapt_and_eval<M: LossFn + ?Sized>(
    theta: &ParamVector,
    client: &ClientRecord,
    model: &M,
    alpha: f64,
    steps: usize,
) -> Result<Adaptation> {
    if steps == 0 {
        return Err(Error::invalid("adaptation needs steps >= 1"));
    }
    let pre_loss = model.value(theta, &client.query)?;
    let mut phi = theta.clone();
    for _ in 0..steps {
        phi = client_inner_step(client, &phi, model, alpha)?;
    }
    Ok(Adaptation {
        client: client.id,
        pre_loss,
        post_loss: model.value(&phi, &client.query)?,
        post_accuracy: model.accuracy(&phi, &client.query)?,
        phi,
    })
}
