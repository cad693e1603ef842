//! Runtime evaluation of objective, stationarity, Lagrangian, smoothness
//! constants, penalty feasibility and estimator-error bounds.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::engine::{
    adapt_and_eval, meta_objective, meta_terms, AlgoConfig, EvalSchedule, FederationState, RoundRecord, RunOutput,
    RunSetup,
};
use crate::error::{Error, Result};
use crate::models::{hvp_estimate, CurvatureBounds, HessianProduct, LossFn};
use crate::regularizers::{reg_value_grad, Regularizer};
use crate::rng::{gaussian_vec, stream, Stage};
use crate::tasks::{ClientRecord, DeltaSchedule, Federation};
use crate::vector::ParamVector;

/// One row of a run trace.
///
/// Row `t` describes the meta-model θ^t together with the local iterates and
/// duals that produced it. Adaptation metrics are present only on evaluation
/// rows of runs with held-out clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    #[serde(rename = "F")]
    pub f_value: f64,
    #[serde(rename = "grad_F_norm")]
    pub grad_f_norm: f64,
    pub lagrangian: f64,
    pub consensus_residual: f64,
    pub dual_residual: f64,
    /// `λ R_h(θ, θ_p)`.
    pub reg_value: f64,
    pub pre_adapt_loss: Option<f64>,
    pub post_adapt_loss: Option<f64>,
    pub post_adapt_acc: Option<f64>,
}

impl RoundMetrics {
    pub fn is_finite(&self) -> bool {
        [
            self.f_value,
            self.grad_f_norm,
            self.lagrangian,
            self.consensus_residual,
            self.dual_residual,
            self.reg_value,
        ]
        .iter()
        .chain(self.pre_adapt_loss.iter())
        .chain(self.post_adapt_loss.iter())
        .chain(self.post_adapt_acc.iter())
        .all(|v| v.is_finite())
    }
}

struct ClientEval {
    meta_value: f64,
    meta_grad: ParamVector,
    lagrangian: f64,
    consensus: f64,
}

fn eval_client<M: LossFn + ?Sized>(state: &FederationState<'_>, model: &M, i: usize, hvp: HessianProduct) -> Result<ClientEval> {
    let client = &state.clients[i];
    let local = &state.locals[i];
    let terms = meta_terms(client, &state.theta, model, state.alpha, hvp)?;
    let meta_value = model.value(&terms.phi, &client.query)?;
    let local_value = if local.theta == state.theta {
        meta_value
    } else {
        meta_objective(client, &local.theta, model, state.alpha)?
    };
    let d = &local.theta - &state.theta;
    Ok(ClientEval {
        meta_value,
        meta_grad: terms.surrogate_gradient(state.alpha),
        lagrangian: client.weight * local_value + local.dual.dot(&d) + 0.5 * client.rho * d.norm_squared(),
        consensus: d.norm(),
    })
}

fn eval_clients<M: LossFn + ?Sized>(
    state: &FederationState<'_>,
    model: &M,
    hvp: HessianProduct,
    pool: Option<&rayon::ThreadPool>,
) -> Result<Vec<ClientEval>> {
    let n = state.clients.len();
    let f = |i: usize| eval_client(state, model, i, hvp);
    match pool {
        Some(p) => p.install(|| (0..n).into_par_iter().map(f).collect()),
        None => (0..n).map(f).collect(),
    }
}

fn reg_terms<M: LossFn + ?Sized>(state: &FederationState<'_>, model: &M) -> Result<(f64, ParamVector)> {
    if state.lambda == 0.0 {
        return Ok((0.0, ParamVector::zeros(state.theta.dim())));
    }
    let (v, g) = reg_value_grad(
        &state.regularizer,
        model,
        &state.theta,
        &state.theta_p,
        state.server_data,
        state.reg_eval_seed,
    )?;
    Ok((state.lambda * v, g.scaled(state.lambda)))
}

/// `F(θ) = Σ_i w_i L_i(φ_i(θ), D_i^q) + λ R_h(θ, θ_p)`.
pub fn objective_f<M: LossFn + ?Sized>(state: &FederationState<'_>, model: &M) -> Result<f64> {
    let mut total = 0.0;
    for client in state.clients {
        total += client.weight * meta_objective(client, &state.theta, model, state.alpha)?;
    }
    Ok(total + reg_terms(state, model)?.0)
}

/// `∇F(θ)` assembled with the given Hessian-vector routine.
pub fn objective_gradient<M: LossFn + ?Sized>(
    state: &FederationState<'_>,
    model: &M,
    hvp: HessianProduct,
) -> Result<ParamVector> {
    let mut g = reg_terms(state, model)?.1;
    for client in state.clients {
        let terms = meta_terms(client, &state.theta, model, state.alpha, hvp)?;
        g.axpy(client.weight, &terms.surrogate_gradient(state.alpha));
    }
    Ok(g)
}

/// `‖∇F(θ)‖` with exact Hessian-vector products.
pub fn fosp_norm<M: LossFn + ?Sized>(state: &FederationState<'_>, model: &M) -> Result<f64> {
    Ok(objective_gradient(state, model, HessianProduct::Exact)?.norm())
}

/// `Σ_i (w_i F_i(θ_i) + ⟨y_i, θ_i − θ⟩ + (ρ_i/2)‖θ_i − θ‖²) + λ R_h(θ, θ_p)`.
pub fn augmented_lagrangian<M: LossFn + ?Sized>(state: &FederationState<'_>, model: &M) -> Result<f64> {
    let mut total = 0.0;
    for (client, local) in state.clients.iter().zip(&state.locals) {
        let d = &local.theta - &state.theta;
        total += client.weight * meta_objective(client, &local.theta, model, state.alpha)?
            + local.dual.dot(&d)
            + 0.5 * client.rho * d.norm_squared();
    }
    Ok(total + reg_terms(state, model)?.0)
}

/// Mean adaptation metrics over `clients`; `None` entries when there are none.
pub fn mean_adaptation<M: LossFn + ?Sized>(
    theta: &ParamVector,
    clients: &[ClientRecord],
    model: &M,
    alpha: f64,
    steps: usize,
    pool: Option<&rayon::ThreadPool>,
) -> Result<(Option<f64>, Option<f64>, Option<f64>)> {
    if clients.is_empty() {
        return Ok((None, None, None));
    }
    let f = |c: &ClientRecord| adapt_and_eval(theta, c, model, alpha, steps);
    let results: Vec<_> = match pool {
        Some(p) => p.install(|| clients.par_iter().map(f).collect::<Result<Vec<_>>>())?,
        None => clients.iter().map(f).collect::<Result<Vec<_>>>()?,
    };
    let n = results.len() as f64;
    let pre = results.iter().map(|a| a.pre_loss).sum::<f64>() / n;
    let post = results.iter().map(|a| a.post_loss).sum::<f64>() / n;
    let acc = results
        .iter()
        .map(|a| a.post_accuracy)
        .collect::<Option<Vec<f64>>>()
        .map(|v| v.iter().sum::<f64>() / n);
    Ok((Some(pre), Some(post), acc))
}

/// All metrics of the current state in one pass over the clients.
pub fn round_metrics<M: LossFn + ?Sized>(
    state: &FederationState<'_>,
    model: &M,
    test: Option<(&[ClientRecord], usize)>,
    dual_residual: f64,
    pool: Option<&rayon::ThreadPool>,
) -> Result<RoundMetrics> {
    let evals = eval_clients(state, model, HessianProduct::Exact, pool)?;
    let (reg_value, mut grad) = reg_terms(state, model)?;
    let mut f_value = reg_value;
    let mut lagrangian = reg_value;
    let mut consensus: f64 = 0.0;
    for (client, e) in state.clients.iter().zip(&evals) {
        f_value += client.weight * e.meta_value;
        grad.axpy(client.weight, &e.meta_grad);
        lagrangian += e.lagrangian;
        consensus = consensus.max(e.consensus);
    }
    let (pre, post, acc) = match test {
        Some((clients, steps)) => mean_adaptation(&state.theta, clients, model, state.alpha, steps, pool)?,
        None => (None, None, None),
    };
    Ok(RoundMetrics {
        round: state.round,
        f_value,
        grad_f_norm: grad.norm(),
        lagrangian,
        consensus_residual: consensus,
        dual_residual,
        reg_value,
        pre_adapt_loss: pre,
        post_adapt_loss: post,
        post_adapt_acc: acc,
    })
}

/// `ν = (1 + αμ)(1 + μ)μ + αβζ`.
pub fn meta_smoothness(alpha: f64, mu: f64, zeta: f64, beta: f64) -> f64 {
    (1.0 + alpha * mu) * (1.0 + mu) * mu + alpha * beta * zeta
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClientConstants {
    pub client: usize,
    pub mu: f64,
    pub zeta: f64,
    pub beta: f64,
    pub nu: f64,
    pub certified: bool,
}

impl ClientConstants {
    pub fn from_bounds(client: usize, b: CurvatureBounds, alpha: f64) -> Self {
        ClientConstants {
            client,
            mu: b.mu,
            zeta: b.zeta,
            beta: b.beta,
            nu: meta_smoothness(alpha, b.mu, b.zeta, b.beta),
            certified: b.certified,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessConstants {
    /// Radius B of the ball `‖θ‖ ≤ B` the constants refer to.
    pub radius: f64,
    pub alpha: f64,
    pub clients: Vec<ClientConstants>,
    /// Regularizer smoothness, when known.
    pub mu_r: Option<f64>,
}

/// Number of random points used by [`estimate_curvature`].
pub const CURVATURE_SAMPLES: usize = 32;
/// Safety factor applied to sampled curvature estimates.
pub const CURVATURE_SAFETY: f64 = 2.0;

fn random_in_ball(rng: &mut crate::rng::Rng, dim: usize, radius: f64) -> ParamVector {
    let mut v = ParamVector::from_vec(gaussian_vec(rng, dim, 1.0));
    let n = v.norm().max(f64::MIN_POSITIVE);
    let u: f64 = rng.random();
    v.scale(radius * u.powf(1.0 / dim as f64) / n);
    v
}

fn unit(rng: &mut crate::rng::Rng, dim: usize) -> ParamVector {
    let v = ParamVector::from_vec(gaussian_vec(rng, dim, 1.0));
    let n = v.norm().max(f64::MIN_POSITIVE);
    v.scaled(1.0 / n)
}

/// Sampled estimate of μ, ζ, β over the ball, inflated by
/// [`CURVATURE_SAFETY`]. Not a proof; flagged as uncertified.
pub fn estimate_curvature<M: LossFn + ?Sized>(model: &M, data: &Dataset, radius: f64, seed: u64) -> Result<CurvatureBounds> {
    let n = model.dim();
    let mut rng = stream(seed, Stage::Diagnostics);
    let (mut mu, mut zeta, mut beta) = (0.0f64, 0.0f64, 0.0f64);
    let h = 1e-2 * radius.min(1.0);
    for _ in 0..CURVATURE_SAMPLES {
        let theta = random_in_ball(&mut rng, n, radius);
        let u = unit(&mut rng, n);
        let v = unit(&mut rng, n);
        beta = beta.max(model.grad(&theta, data)?.norm());
        let hu = model.exact_hvp(&theta, &u, data)?;
        mu = mu.max(hu.norm());
        let mut moved = theta.clone();
        moved.axpy(h, &v);
        let hu2 = model.exact_hvp(&moved, &u, data)?;
        zeta = zeta.max(hu2.distance(&hu) / h);
    }
    Ok(CurvatureBounds {
        mu: CURVATURE_SAFETY * mu,
        zeta: CURVATURE_SAFETY * zeta,
        beta: CURVATURE_SAFETY * beta,
        certified: false,
    })
}

fn bounds_for<M: LossFn + ?Sized>(model: &M, data: &Dataset, radius: f64, seed: u64) -> Result<CurvatureBounds> {
    match model.curvature_bounds(data, radius) {
        Some(b) => Ok(b),
        None => estimate_curvature(model, data, radius, seed),
    }
}

/// Per-client constants over `‖θ‖ ≤ radius`, merged over each client's
/// support and query sets.
pub fn smoothness_constants<M: LossFn + ?Sized>(
    model: &M,
    clients: &[ClientRecord],
    regularizer: &Regularizer,
    radius: f64,
    alpha: f64,
    seed: u64,
) -> Result<SmoothnessConstants> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::invalid(format!("certification radius must be > 0, got {radius}")));
    }
    let mut out = Vec::with_capacity(clients.len());
    for c in clients {
        let s = c.id as u64;
        let b = bounds_for(model, &c.support, radius, seed ^ (2 * s))?
            .max(bounds_for(model, &c.query, radius, seed ^ (2 * s + 1))?);
        out.push(ClientConstants::from_bounds(c.id, b, alpha));
    }
    Ok(SmoothnessConstants {
        radius,
        alpha,
        clients: out,
        mu_r: regularizer.smoothness(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhoFeasibility {
    pub client: usize,
    pub eq17_margin: f64,
    pub eq18_margin: f64,
    pub eq19_margin: f64,
    pub feasible: bool,
}

/// Margins of the three penalty-size conditions for one client:
/// `ρ/2 − 4wν`, `ρ/2 − 2w²ν²(4wν/ρ² + 1/ρ) − λμ_r/(2|I|)` and `ρ − 3ν`.
pub fn rho_margins(client: usize, rho: f64, weight: f64, nu: f64, lambda: f64, mu_r: f64, num_clients: usize) -> RhoFeasibility {
    let m17 = rho / 2.0 - 4.0 * weight * nu;
    let m18 = rho / 2.0
        - 2.0 * weight * weight * nu * nu * (4.0 * weight * nu / (rho * rho) + 1.0 / rho)
        - lambda * mu_r / (2.0 * num_clients as f64);
    let m19 = rho - 3.0 * nu;
    RhoFeasibility {
        client,
        eq17_margin: m17,
        eq18_margin: m18,
        eq19_margin: m19,
        feasible: m17 > 0.0 && m18 > 0.0 && m19 > 0.0,
    }
}

/// [`rho_margins`] for every client. An unknown `μ_r` counts as 0.
pub fn check_rho_feasible(consts: &SmoothnessConstants, clients: &[ClientRecord], lambda: f64) -> Vec<RhoFeasibility> {
    let mu_r = consts.mu_r.unwrap_or(0.0);
    clients
        .iter()
        .zip(&consts.clients)
        .map(|(c, k)| rho_margins(c.id, c.rho, c.weight, k.nu, lambda, mu_r, clients.len()))
        .collect()
}

/// Absolute slack added to estimator-bound comparisons.
pub const HVP_BOUND_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HvpCheck {
    pub client: Option<usize>,
    pub delta: f64,
    pub observed_error: f64,
    pub bound: f64,
    pub ok: bool,
    /// Whether `θ ± δr` stays inside the ball the constants refer to.
    pub in_ball: Option<bool>,
}

/// Estimator error `‖∇²L(θ)r − g‖` along an explicit direction r against
/// the bound `δζβ²`.
pub fn check_hvp_bound_along<M: LossFn + ?Sized>(
    model: &M,
    theta: &ParamVector,
    r: &ParamVector,
    delta: f64,
    data: &Dataset,
    zeta: f64,
    beta: f64,
) -> Result<HvpCheck> {
    let exact = model.exact_hvp(theta, r, data)?;
    let est = hvp_estimate(model, theta, r, delta, data)?;
    let observed_error = exact.distance(&est);
    let bound = delta * zeta * beta * beta;
    Ok(HvpCheck {
        client: None,
        delta,
        observed_error,
        bound,
        ok: observed_error <= bound + HVP_BOUND_SLACK,
        in_ball: None,
    })
}

/// Estimator check at θ with `r = ∇L(φ, D^q)`, as used inside a round.
pub fn check_hvp_bound<M: LossFn + ?Sized>(
    model: &M,
    theta: &ParamVector,
    phi: &ParamVector,
    delta: f64,
    client: &ClientRecord,
    consts: &ClientConstants,
    radius: f64,
) -> Result<HvpCheck> {
    let r = model.grad(phi, &client.query)?;
    let mut check = check_hvp_bound_along(model, theta, &r, delta, &client.support, consts.zeta, consts.beta)?;
    check.client = Some(client.id);
    check.in_ball = Some(theta.norm() + delta * r.norm() <= radius);
    Ok(check)
}

/// Per-round check of
/// `‖y_i^t − y_i^{t−1}‖ ≤ w_i ν_i ‖θ^t − θ^{t−1}‖ + (δ_{t−1} + δ_t) α w_i ζ_i β_i²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualBoundCheck {
    pub rounds_checked: usize,
    pub violations: usize,
    /// Largest observed `lhs / rhs`.
    pub max_ratio: f64,
    pub certified: bool,
}

pub fn check_dual_bound(
    records: &[RoundRecord],
    consts: &SmoothnessConstants,
    clients: &[ClientRecord],
    alpha: f64,
) -> DualBoundCheck {
    let mut violations = 0;
    let mut max_ratio: f64 = 0.0;
    let mut checked = 0;
    for pair in records.windows(2) {
        let (prev, cur) = (&pair[0], &pair[1]);
        checked += 1;
        for ((c, k), lhs) in clients.iter().zip(&consts.clients).zip(&cur.dual_steps) {
            let rhs = c.weight * k.nu * prev.theta_step + (prev.delta + cur.delta) * alpha * c.weight * k.zeta * k.beta * k.beta;
            if *lhs > rhs * (1.0 + 1e-9) + 1e-12 {
                violations += 1;
            }
            if rhs > 0.0 {
                max_ratio = max_ratio.max(lhs / rhs);
            }
        }
    }
    DualBoundCheck {
        rounds_checked: checked,
        violations,
        max_ratio,
        certified: consts.clients.iter().all(|k| k.certified),
    }
}

/// Engineering factor applied to the summed descent slack.
pub const DESCENT_SLACK_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagrangianDescent {
    /// Sum of positive round-to-round increases of the Lagrangian.
    pub violations: f64,
    /// `10 · Σ_t Σ_i c_i^{t+1}`.
    pub slack_budget: f64,
    pub running_min_non_increasing: bool,
    pub within_budget: bool,
}

/// Vanishing slack `c_i^{t+1}` of the Lagrangian descent inequality.
pub fn descent_slack(k: &ClientConstants, weight: f64, rho: f64, alpha: f64, delta_t: f64, delta_next: f64) -> f64 {
    let e = alpha * weight * k.zeta * k.beta * k.beta;
    let s = delta_t + delta_next;
    2.0 * s * s * e * e * (4.0 * weight * k.nu / (rho * rho) + 1.0 / rho) + 2.0 * e * e * delta_next * s / rho
}

pub fn lagrangian_descent(
    trace: &[RoundMetrics],
    consts: &SmoothnessConstants,
    clients: &[ClientRecord],
    schedule: &DeltaSchedule,
    alpha: f64,
) -> LagrangianDescent {
    let mut violations = 0.0;
    let mut slack = 0.0;
    let mut running = f64::INFINITY;
    let mut monotone = true;
    let mut last_min = f64::INFINITY;
    for (t, row) in trace.iter().enumerate() {
        running = running.min(row.lagrangian);
        monotone &= running <= last_min;
        last_min = running;
        if t + 1 < trace.len() {
            violations += (trace[t + 1].lagrangian - row.lagrangian).max(0.0);
            for (c, k) in clients.iter().zip(&consts.clients) {
                slack += descent_slack(k, c.weight, c.rho, alpha, schedule.at(t), schedule.at(t + 1));
            }
        }
    }
    let slack_budget = DESCENT_SLACK_FACTOR * slack;
    LagrangianDescent {
        violations,
        slack_budget,
        running_min_non_increasing: monotone,
        within_budget: violations <= slack_budget,
    }
}

/// Tolerances at which the first-hit round of `grad_F_norm` is recorded.
pub const FOSP_TOLERANCES: [f64; 3] = [1e-1, 3e-2, 1e-2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FospRate {
    /// `(ε, first round with grad_F_norm ≤ ε)`.
    pub hits: Vec<(f64, Option<usize>)>,
    /// Least-squares slope of `ln T(ε)` against `ln(1/ε)`; needs two hits
    /// with positive rounds.
    pub slope: Option<f64>,
}

pub fn fosp_rate(trace: &[RoundMetrics], tolerances: &[f64]) -> FospRate {
    let hits: Vec<(f64, Option<usize>)> = tolerances
        .iter()
        .map(|&eps| (eps, trace.iter().find(|r| r.grad_f_norm <= eps).map(|r| r.round)))
        .collect();
    let pts: Vec<(f64, f64)> = hits
        .iter()
        .filter_map(|(eps, t)| t.filter(|&t| t > 0).map(|t| ((1.0 / eps).ln(), (t as f64).ln())))
        .collect();
    let slope = if pts.len() >= 2 {
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        (sxx > 0.0).then(|| sxy / sxx)
    } else {
        None
    };
    FospRate { hits, slope }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub constants: SmoothnessConstants,
    pub rho_feasibility: Vec<RhoFeasibility>,
    pub hvp_checks: Vec<HvpCheck>,
    pub lagrangian_descent: LagrangianDescent,
    pub fosp_trace: Vec<f64>,
    pub dual_bound: DualBoundCheck,
    pub fosp_rate: FospRate,
    /// `|‖∇F‖_exact − ‖∇F‖_estimated|` at θ^T with δ = 1e−6.
    pub fosp_estimator_gap: f64,
}

/// Default certification radius: twice the largest meta-model norm seen.
pub fn default_radius(output: &RunOutput) -> f64 {
    let max = output
        .rounds
        .iter()
        .map(|r| r.theta_norm)
        .chain(std::iter::once(output.theta.norm()))
        .fold(0.0, f64::max);
    if max > 0.0 {
        2.0 * max
    } else {
        1.0
    }
}

/// Post-hoc diagnostics of a finished run.
pub fn diagnose<M: LossFn + ?Sized>(
    setup: &RunSetup<'_, M>,
    cfg: &AlgoConfig,
    output: &RunOutput,
    radius: Option<f64>,
) -> Result<DiagnosticsReport> {
    let fed = setup.federation;
    let radius = radius.unwrap_or_else(|| default_radius(output));
    let lambda = match cfg.algorithm {
        crate::engine::Algorithm::Augfl | crate::engine::Algorithm::ExactAdmm => cfg.lambda,
        _ => 0.0,
    };
    let consts = smoothness_constants(setup.model, &fed.train, &setup.regularizer, radius, cfg.alpha, cfg.seed)?;
    let rho_feasibility = check_rho_feasible(&consts, &fed.train, lambda);
    let delta = cfg.delta.at(output.rounds.len());
    let mut hvp_checks = Vec::with_capacity(fed.train.len());
    for (c, k) in fed.train.iter().zip(&consts.clients) {
        let phi = crate::engine::client_inner_step(c, &output.theta, setup.model, cfg.alpha)?;
        hvp_checks.push(check_hvp_bound(setup.model, &output.theta, &phi, delta, c, k, radius)?);
    }
    let mut state = FederationState::new(
        output.theta.clone(),
        &fed.train,
        &fed.server_data,
        setup.regularizer.clone(),
        setup.theta_p.clone(),
        lambda,
        cfg.alpha,
    );
    state.reg_eval_seed = crate::rng::derive_seed(cfg.seed, Stage::Regularizer as u64);
    let exact = fosp_norm(&state, setup.model)?;
    let est = objective_gradient(&state, setup.model, HessianProduct::Estimate(1e-6))?.norm();
    Ok(DiagnosticsReport {
        rho_feasibility,
        hvp_checks,
        lagrangian_descent: lagrangian_descent(&output.trace, &consts, &fed.train, &cfg.delta, cfg.alpha),
        fosp_trace: output.trace.iter().map(|r| r.grad_f_norm).collect(),
        dual_bound: check_dual_bound(&output.rounds, &consts, &fed.train, cfg.alpha),
        fosp_rate: fosp_rate(&output.trace, &FOSP_TOLERANCES),
        fosp_estimator_gap: (exact - est).abs(),
        constants: consts,
    })
}

/// One λ point of a forgetting sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgettingRow {
    pub lambda: f64,
    /// `‖∇L_p(θ^T)‖`, the gradient of the server-data loss.
    pub pretrain_grad_norm: f64,
    pub distance_to_pretrained: f64,
    pub initial_distance: f64,
    pub pre_adapt_loss: Option<f64>,
    pub post_adapt_loss: Option<f64>,
    pub post_adapt_acc: Option<f64>,
}

/// Runs the engine once per λ with the squared-distance regularizer and a
/// fixed pretrained model.
pub fn forgetting_sweep<M: LossFn + ?Sized>(
    federation: &Federation,
    model: &M,
    theta_p: &ParamVector,
    lambdas: &[f64],
    cfg: &AlgoConfig,
    eval: EvalSchedule,
) -> Result<Vec<ForgettingRow>> {
    let mut rows = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let mut c = cfg.clone();
        c.lambda = lambda;
        let setup = RunSetup {
            federation,
            model,
            regularizer: Regularizer::SqDist,
            theta_p: theta_p.clone(),
            eval,
        };
        let out = crate::engine::run(&setup, &c)?;
        let (pre, post, acc) = mean_adaptation(&out.theta, &federation.test, model, c.alpha, eval.steps, None)?;
        rows.push(ForgettingRow {
            lambda,
            pretrain_grad_norm: model.grad(&out.theta, &federation.server_data)?.norm(),
            distance_to_pretrained: out.theta.distance(theta_p),
            initial_distance: out.theta0.distance(theta_p),
            pre_adapt_loss: pre,
            post_adapt_loss: post,
            post_adapt_acc: acc,
        });
    }
    Ok(rows)
}
