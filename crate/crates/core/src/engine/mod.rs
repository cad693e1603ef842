//! Round-based optimization engine.
//!
//! [`Engine`] owns a [`FederationState`] and advances it one communication
//! round at a time for any of the supported [`Algorithm`]s. Per-client work in
//! a round is independent and may run on a worker pool; the server always
//! consumes client results in ascending id order, so traces are bitwise
//! reproducible regardless of the number of workers.

pub mod client;
mod server;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use client::{
    adapt_and_eval, client_dual_update, client_inner_step, client_local_update, client_local_update_with,
    exact_local_solve, meta_gradient, meta_objective, meta_terms, Adaptation, LocalUpdate, MetaTerms,
    EXACT_SOLVE_MAX_ITER,
};
pub use server::server_aggregate;

use crate::data::Dataset;
use crate::diagnostics::{round_metrics, RoundMetrics};
use crate::error::{Error, Result};
use crate::models::{CountingLoss, HessianProduct, LossFn};
use crate::regularizers::{reg_value_grad, Regularizer};
use crate::rng::{derive_seed, gaussian_vec, stream, Stage};
use crate::tasks::{ClientRecord, DeltaSchedule, Federation};
use crate::vector::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Augfl,
    ExactAdmm,
    Fedavg,
    Perfedavg,
}

/// Uniform penalty or one value per training client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RhoSetting {
    Uniform(f64),
    PerClient(Vec<f64>),
}

impl RhoSetting {
    pub fn values(&self) -> Vec<f64> {
        match self {
            RhoSetting::Uniform(r) => vec![*r],
            RhoSetting::PerClient(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlgoConfig {
    pub algorithm: Algorithm,
    pub rounds: usize,
    /// Meta step size α.
    pub alpha: f64,
    /// Regularization weight λ.
    pub lambda: f64,
    pub rho: RhoSetting,
    pub delta: DeltaSchedule,
    /// Gradient-norm tolerance of the exact local solver.
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    /// Local steps per round for the baselines.
    pub local_epochs: usize,
    /// Local step size for the baselines.
    pub local_lr: f64,
    /// Standard deviation of the random initial meta-model.
    pub init_scale: f64,
    pub seed: u64,
    /// Worker threads for per-client work; 1 runs inline.
    pub workers: usize,
}

impl Default for AlgoConfig {
    fn default() -> Self {
        AlgoConfig {
            algorithm: Algorithm::Augfl,
            rounds: 200,
            alpha: 0.03,
            lambda: 5.0,
            rho: RhoSetting::Uniform(crate::tasks::DEFAULT_RHO),
            delta: DeltaSchedule::default(),
            inner_tol: 1e-10,
            inner_max_iter: EXACT_SOLVE_MAX_ITER,
            local_epochs: 1,
            local_lr: 0.05,
            init_scale: 0.1,
            seed: 0,
            workers: 1,
        }
    }
}

impl AlgoConfig {
    pub fn validate(&self) -> Result<()> {
        let v = |msg: &str| Err(Error::Validation(msg.to_string()));
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return v("alpha must be > 0");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return v("lambda must be >= 0");
        }
        let rho = self.rho.values();
        if rho.is_empty() || rho.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return v("rho must be > 0");
        }
        self.delta.validate()?;
        if !(self.inner_tol > 0.0) {
            return v("inner_tol must be > 0");
        }
        if self.inner_max_iter == 0 {
            return v("inner_max_iter must be >= 1");
        }
        if self.local_epochs == 0 {
            return v("local_epochs must be >= 1");
        }
        if !(self.local_lr > 0.0 && self.local_lr.is_finite()) {
            return v("local_lr must be > 0");
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return v("init_scale must be >= 0");
        }
        if self.workers == 0 {
            return v("workers must be >= 1");
        }
        Ok(())
    }
}

/// When adaptation metrics are evaluated on the held-out clients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSchedule {
    /// Gradient steps of size α taken on each test client's support set.
    pub steps: usize,
    /// Evaluate every `cadence` rounds (0: final round only); the final
    /// round is always evaluated.
    pub cadence: usize,
}

impl Default for EvalSchedule {
    fn default() -> Self {
        EvalSchedule { steps: 1, cadence: 10 }
    }
}

impl EvalSchedule {
    pub fn due(&self, row: usize, rounds: usize) -> bool {
        row == rounds || (self.cadence > 0 && row.is_multiple_of(self.cadence))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalState {
    pub theta: ParamVector,
    pub dual: ParamVector,
}

/// Global round state.
#[derive(Debug, Clone)]
pub struct FederationState<'a> {
    /// Current meta-model θ^t.
    pub theta: ParamVector,
    /// Most recent `(θ_i, y_i)` per training client, ascending id.
    pub locals: Vec<LocalState>,
    pub theta_p: ParamVector,
    pub lambda: f64,
    pub alpha: f64,
    /// Number of completed rounds.
    pub round: usize,
    pub regularizer: Regularizer,
    pub clients: &'a [ClientRecord],
    pub server_data: &'a Dataset,
    /// Seed of the regularizer minibatch used when evaluating objectives.
    pub reg_eval_seed: u64,
}

impl<'a> FederationState<'a> {
    /// Cold start at θ: local models equal θ and duals are zero.
    pub fn new(
        theta: ParamVector,
        clients: &'a [ClientRecord],
        server_data: &'a Dataset,
        regularizer: Regularizer,
        theta_p: ParamVector,
        lambda: f64,
        alpha: f64,
    ) -> Self {
        let n = theta.dim();
        let locals = clients
            .iter()
            .map(|_| LocalState {
                theta: theta.clone(),
                dual: ParamVector::zeros(n),
            })
            .collect();
        FederationState {
            theta,
            locals,
            theta_p,
            lambda,
            alpha,
            round: 0,
            regularizer,
            clients,
            server_data,
            reg_eval_seed: 0,
        }
    }

    /// Regularizer gradient at θ^t with a round-specific minibatch seed.
    pub fn reg_grad<M: LossFn + ?Sized>(&self, model: &M, seed: u64) -> Result<(f64, ParamVector)> {
        if self.lambda == 0.0 {
            return Ok((0.0, ParamVector::zeros(self.theta.dim())));
        }
        reg_value_grad(&self.regularizer, model, &self.theta, &self.theta_p, self.server_data, seed)
    }
}

/// Everything a run needs besides the algorithm settings.
pub struct RunSetup<'a, M: ?Sized> {
    pub federation: &'a Federation,
    pub model: &'a M,
    pub regularizer: Regularizer,
    /// Pretrained parameters; ignored when λ = 0.
    pub theta_p: ParamVector,
    pub eval: EvalSchedule,
}

/// Gradient evaluations made by the algorithm itself (metrics excluded).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GradCounters {
    pub support: u64,
    pub query: u64,
    pub other: u64,
    pub client_rounds: u64,
}

impl GradCounters {
    fn add(&mut self, support: u64, query: u64, other: u64) {
        self.support += support;
        self.query += query;
        self.other += other;
        self.client_rounds += 1;
    }
}

/// What one client produced in a round.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientStep {
    pub theta_i: ParamVector,
    pub dual: ParamVector,
    pub dual_prev: ParamVector,
    /// Present for the meta-learning algorithms.
    pub terms: Option<MetaTerms>,
}

/// Full record of one executed round, for callers that want to inspect the
/// iterates directly.
#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub round: usize,
    pub delta: f64,
    pub theta: ParamVector,
    pub theta_next: ParamVector,
    pub reg_grad: ParamVector,
    pub clients: Vec<ClientStep>,
}

/// Scalar summary of one executed round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub delta: f64,
    pub theta_norm: f64,
    /// `‖θ^{t+1} − θ^t‖`.
    pub theta_step: f64,
    /// `‖y_i^t − y_i^{t−1}‖` per client.
    pub dual_steps: Vec<f64>,
    /// `‖θ_i^t − θ_i^{t−1}‖` per client.
    pub local_steps: Vec<f64>,
    /// `max_i ‖y_i^t + w_i (r_i − α g_i)‖`; zero for the baselines.
    pub dual_identity: f64,
    /// `‖λ∇R_h − Σ_i (y_i + ρ_i (θ_i − θ^{t+1}))‖`.
    pub aggregation_identity: f64,
}

impl RoundOutcome {
    pub fn record(&self, previous_locals: &[ParamVector], lambda: f64, alpha: f64, clients: &[ClientRecord]) -> RoundRecord {
        let mut dual_identity: f64 = 0.0;
        let mut agg = self.reg_grad.scaled(lambda);
        for (c, step) in clients.iter().zip(&self.clients) {
            if let Some(t) = &step.terms {
                let mut id = step.dual.clone();
                id.axpy(c.weight, &t.surrogate_gradient(alpha));
                dual_identity = dual_identity.max(id.norm());
            }
            agg.axpy(-1.0, &step.dual);
            agg.axpy(-c.rho, &(&step.theta_i - &self.theta_next));
        }
        RoundRecord {
            round: self.round,
            delta: self.delta,
            theta_norm: self.theta.norm(),
            theta_step: self.theta_next.distance(&self.theta),
            dual_steps: self.clients.iter().map(|s| s.dual.distance(&s.dual_prev)).collect(),
            local_steps: self
                .clients
                .iter()
                .zip(previous_locals)
                .map(|(s, p)| s.theta_i.distance(p))
                .collect(),
            dual_identity,
            aggregation_identity: agg.norm(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub theta: ParamVector,
    pub theta0: ParamVector,
    /// `rounds + 1` rows, row 0 being the initial state.
    pub trace: Vec<RoundMetrics>,
    pub rounds: Vec<RoundRecord>,
    pub counters: GradCounters,
    /// Adaptation of the final meta-model on every test client.
    pub adaptation: Vec<Adaptation>,
    pub wall_clock_secs: f64,
}

/// Seeded Gaussian initial meta-model.
pub fn initial_theta(dim: usize, scale: f64, seed: u64) -> ParamVector {
    ParamVector::from_vec(gaussian_vec(&mut stream(seed, Stage::ModelInit), dim, scale))
}

pub struct Engine<'a, M: ?Sized> {
    setup: &'a RunSetup<'a, M>,
    cfg: AlgoConfig,
    pub state: FederationState<'a>,
    pool: Option<rayon::ThreadPool>,
    unions: Vec<Dataset>,
    counters: GradCounters,
}

impl<'a, M: LossFn + ?Sized> Engine<'a, M> {
    pub fn new(setup: &'a RunSetup<'a, M>, cfg: &AlgoConfig) -> Result<Self> {
        cfg.validate()?;
        let fed = setup.federation;
        if fed.train.is_empty() {
            return Err(Error::invalid("federation has no training clients"));
        }
        let model = setup.model;
        setup.regularizer.validate_for(model)?;
        let n = model.dim();
        setup.theta_p.ensure_dim("pretrained parameters", n)?;
        let theta0 = initial_theta(n, cfg.init_scale, cfg.seed);
        // the baselines do not use the pretrained model
        let lambda = match cfg.algorithm {
            Algorithm::Augfl | Algorithm::ExactAdmm => cfg.lambda,
            Algorithm::Fedavg | Algorithm::Perfedavg => 0.0,
        };
        let mut state = FederationState::new(
            theta0,
            &fed.train,
            &fed.server_data,
            setup.regularizer.clone(),
            setup.theta_p.clone(),
            lambda,
            cfg.alpha,
        );
        state.reg_eval_seed = derive_seed(cfg.seed, Stage::Regularizer as u64);
        let pool = if cfg.workers > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(cfg.workers)
                    .build()
                    .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?,
            )
        } else {
            None
        };
        let unions = if cfg.algorithm == Algorithm::Fedavg {
            fed.train
                .iter()
                .map(|c| c.support.concat(&c.query))
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        Ok(Engine {
            setup,
            cfg: cfg.clone(),
            state,
            pool,
            unions,
            counters: GradCounters::default(),
        })
    }

    pub fn counters(&self) -> GradCounters {
        self.counters
    }

    pub fn config(&self) -> &AlgoConfig {
        &self.cfg
    }

    fn map_clients<T: Send>(&self, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Vec<Result<T>> {
        let n = self.state.clients.len();
        match &self.pool {
            Some(pool) => pool.install(|| (0..n).into_par_iter().map(&f).collect()),
            None => (0..n).map(f).collect(),
        }
    }

    /// Metrics of the current state.
    pub fn metrics(&self, dual_residual: f64) -> Result<RoundMetrics> {
        let row = self.state.round;
        let test = if self.setup.eval.due(row, self.cfg.rounds) {
            Some((&self.setup.federation.test[..], self.setup.eval.steps))
        } else {
            None
        };
        round_metrics(&self.state, self.setup.model, test, dual_residual, self.pool.as_ref())
    }

    /// Executes one round and advances the state.
    pub fn step(&mut self) -> Result<RoundOutcome> {
        let t = self.state.round;
        let delta = self.cfg.delta.at(t);
        let alpha = self.cfg.alpha;
        let model = self.setup.model;
        let algorithm = self.cfg.algorithm;
        let cfg = &self.cfg;
        let state = &self.state;
        let unions = &self.unions;

        let results = self.map_clients(|i| {
            let client = &state.clients[i];
            let dual_prev = &state.locals[i].dual;
            let counted = CountingLoss::new(model, &client.support, &client.query);
            let step = match algorithm {
                Algorithm::Augfl => {
                    let up = client_local_update(client, &state.theta, dual_prev, &counted, alpha, delta)?;
                    let dual = client_dual_update(client, &up.theta_i, &state.theta, dual_prev)?;
                    ClientStep {
                        theta_i: up.theta_i,
                        dual,
                        dual_prev: dual_prev.clone(),
                        terms: Some(up.terms),
                    }
                }
                Algorithm::ExactAdmm => {
                    let theta_i = exact_local_solve(
                        client,
                        &state.theta,
                        dual_prev,
                        &counted,
                        alpha,
                        cfg.inner_tol,
                        cfg.inner_max_iter,
                    )?;
                    let dual = client_dual_update(client, &theta_i, &state.theta, dual_prev)?;
                    ClientStep {
                        theta_i,
                        dual,
                        dual_prev: dual_prev.clone(),
                        terms: None,
                    }
                }
                Algorithm::Fedavg => {
                    let mut x = state.theta.clone();
                    for _ in 0..cfg.local_epochs {
                        x.axpy(-cfg.local_lr, &counted.grad(&x, &unions[i])?);
                    }
                    ClientStep {
                        theta_i: x,
                        dual: dual_prev.clone(),
                        dual_prev: dual_prev.clone(),
                        terms: None,
                    }
                }
                Algorithm::Perfedavg => {
                    let mut x = state.theta.clone();
                    for _ in 0..cfg.local_epochs {
                        let terms = meta_terms(client, &x, &counted, alpha, HessianProduct::Estimate(delta))?;
                        x.axpy(-cfg.local_lr, &terms.surrogate_gradient(alpha));
                    }
                    ClientStep {
                        theta_i: x,
                        dual: dual_prev.clone(),
                        dual_prev: dual_prev.clone(),
                        terms: None,
                    }
                }
            };
            let counts = (counted.support_grads(), counted.query_grads(), counted.other_grads());
            Ok((step, counts))
        });

        let mut steps = Vec::with_capacity(results.len());
        for (i, res) in results.into_iter().enumerate() {
            let id = state.clients[i].id;
            let (step, (s, q, o)) = res.map_err(|e| divergence_or(e, t, id))?;
            if !step.theta_i.is_finite() || !step.dual.is_finite() {
                return Err(Error::Divergence {
                    round: t,
                    client: Some(id),
                });
            }
            self.counters.add(s, q, o);
            steps.push(step);
        }

        let reg_seed = derive_seed(self.state.reg_eval_seed, t as u64 + 1);
        let (_, reg_grad) = self
            .state
            .reg_grad(model, reg_seed)
            .map_err(|e| divergence_or(e, t, usize::MAX))?;

        let theta_prev = self.state.theta.clone();
        for (local, step) in self.state.locals.iter_mut().zip(&steps) {
            local.theta = step.theta_i.clone();
            local.dual = step.dual.clone();
        }
        let theta_next = match algorithm {
            Algorithm::Augfl | Algorithm::ExactAdmm => server_aggregate(&self.state, &reg_grad)?,
            Algorithm::Fedavg | Algorithm::Perfedavg => {
                let mut acc = ParamVector::zeros(theta_prev.dim());
                for (c, s) in self.state.clients.iter().zip(&steps) {
                    acc.axpy(c.weight, &s.theta_i);
                }
                acc
            }
        };
        if !theta_next.is_finite() {
            return Err(Error::Divergence { round: t, client: None });
        }
        self.state.theta = theta_next.clone();
        self.state.round = t + 1;
        Ok(RoundOutcome {
            round: t,
            delta,
            theta: theta_prev,
            theta_next,
            reg_grad,
            clients: steps,
        })
    }

    /// Runs every configured round, recording metrics after each one.
    pub fn run(mut self) -> Result<RunOutput> {
        let start = Instant::now();
        let theta0 = self.state.theta.clone();
        let mut trace = Vec::with_capacity(self.cfg.rounds + 1);
        let mut rounds = Vec::with_capacity(self.cfg.rounds);
        trace.push(self.metrics(0.0)?);
        for _ in 0..self.cfg.rounds {
            let previous: Vec<ParamVector> = self.state.locals.iter().map(|l| l.theta.clone()).collect();
            let outcome = self.step()?;
            let record = outcome.record(&previous, self.state.lambda, self.cfg.alpha, self.state.clients);
            let dual_residual = record.dual_steps.iter().cloned().fold(0.0, f64::max);
            rounds.push(record);
            let row = self.metrics(dual_residual)?;
            if !row.is_finite() {
                return Err(Error::Divergence {
                    round: outcome.round,
                    client: None,
                });
            }
            trace.push(row);
        }
        let model = self.setup.model;
        let steps = self.setup.eval.steps;
        let test = &self.setup.federation.test;
        let theta = self.state.theta.clone();
        let adaptation = test
            .iter()
            .map(|c| adapt_and_eval(&theta, c, model, self.cfg.alpha, steps))
            .collect::<Result<Vec<_>>>()?;
        Ok(RunOutput {
            theta,
            theta0,
            trace,
            rounds,
            counters: self.counters,
            adaptation,
            wall_clock_secs: start.elapsed().as_secs_f64(),
        })
    }
}

fn divergence_or(e: Error, round: usize, client: usize) -> Error {
    match e {
        Error::NumericOverflow(_) => Error::Divergence {
            round,
            client: (client != usize::MAX).then_some(client),
        },
        other => other,
    }
}

fn run_checked<M: LossFn + ?Sized>(setup: &RunSetup<'_, M>, cfg: &AlgoConfig, expected: Algorithm) -> Result<RunOutput> {
    if cfg.algorithm != expected {
        return Err(Error::InvalidConfig(format!(
            "config selects {:?}, expected {:?}",
            cfg.algorithm, expected
        )));
    }
    Engine::new(setup, cfg)?.run()
}

/// AugFL: linearized local updates with the first-order Hessian estimator.
pub fn run_augfl<M: LossFn + ?Sized>(setup: &RunSetup<'_, M>, cfg: &AlgoConfig) -> Result<RunOutput> {
    run_checked(setup, cfg, Algorithm::Augfl)
}

/// ADMM with each local subproblem solved to tolerance.
pub fn run_exact_admm<M: LossFn + ?Sized>(setup: &RunSetup<'_, M>, cfg: &AlgoConfig) -> Result<RunOutput> {
    run_checked(setup, cfg, Algorithm::ExactAdmm)
}

pub fn run_fedavg<M: LossFn + ?Sized>(setup: &RunSetup<'_, M>, cfg: &AlgoConfig) -> Result<RunOutput> {
    run_checked(setup, cfg, Algorithm::Fedavg)
}

pub fn run_perfedavg<M: LossFn + ?Sized>(setup: &RunSetup<'_, M>, cfg: &AlgoConfig) -> Result<RunOutput> {
    run_checked(setup, cfg, Algorithm::Perfedavg)
}

/// Dispatches on `cfg.algorithm`.
pub fn run<M: LossFn + ?Sized>(setup: &RunSetup<'_, M>, cfg: &AlgoConfig) -> Result<RunOutput> {
    Engine::new(setup, cfg)?.run()
}
