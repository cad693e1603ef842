use crate::error::{Error, Result};
use crate::vector::ParamVector;

use super::FederationState;

/// Global meta-model update
/// `θ⁺ = (Σ_i (y_i + ρ_i θ_i) − λ ∇R_h(θ, θ_p)) / Σ_i ρ_i`,
/// summed in ascending client order.
pub fn server_aggregate(state: &FederationState<'_>, reg_grad: &ParamVector) -> Result<ParamVector> {
    if state.clients.is_empty() {
        return Err(Error::invalid("aggregation needs at least one client"));
    }
    let n = state.theta.dim();
    reg_grad.ensure_dim("regularizer gradient", n)?;
    let mut acc = ParamVector::zeros(n);
    let mut rho_sum = 0.0;
    for (client, local) in state.clients.iter().zip(&state.locals) {
        acc.axpy(1.0, &local.dual);
        acc.axpy(client.rho, &local.theta);
        rho_sum += client.rho;
    }
    if !(rho_sum > 0.0) {
        return Err(Error::InvalidConfig("sum of rho must be > 0".into()));
    }
    if state.lambda != 0.0 {
        acc.axpy(-state.lambda, reg_grad);
    }
    acc.scale(1.0 / rho_sum);
    Ok(acc)
}
