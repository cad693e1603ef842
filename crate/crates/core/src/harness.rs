//! Experiment configuration, orchestration and metrics output.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Dataset;
use crate::diagnostics::{diagnose, DiagnosticsReport, RoundMetrics};
use crate::engine::{self, Adaptation, AlgoConfig, Algorithm, EvalSchedule, GradCounters, RhoSetting, RunSetup};
use crate::error::{Error, Result};
use crate::models::{LossFn, LossModel, Logistic, Mlp1, Quadratic};
use crate::regularizers::{CrdParams, Regularizer};
use crate::rng::{gaussian_vec, stream, Stage};
use crate::tasks::{generate_federation, Federation, FederationConfig};
use crate::vector::ParamVector;

/// Environment variable holding the default output directory.
pub const OUT_DIR_ENV: &str = "AUGFL_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "augfl-out";

pub const CSV_HEADER: &str =
    "round,F,grad_F_norm,lagrangian,consensus_residual,dual_residual,reg_value,pre_adapt_loss,post_adapt_loss,post_adapt_acc";
pub const CSV_FILE: &str = "metrics.csv";
pub const JSON_FILE: &str = "report.json";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Quadratic,
    Logistic,
    Mlp1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Hidden width of mlp1.
    pub hidden: usize,
    /// Isotropic curvature of the quadratic model.
    pub curvature: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::Mlp1,
            hidden: crate::models::DEFAULT_HIDDEN,
            curvature: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularizerKind {
    None,
    SqDist,
    Crd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegularizerConfig {
    pub kind: RegularizerKind,
    pub temperature: f64,
    pub negatives: usize,
    pub batch_size: usize,
}

impl Default for RegularizerConfig {
    fn default() -> Self {
        let crd = CrdParams::default();
        RegularizerConfig {
            kind: RegularizerKind::SqDist,
            temperature: crd.temperature,
            negatives: crd.negatives,
            batch_size: crd.batch_size,
        }
    }
}

impl RegularizerConfig {
    pub fn build(&self) -> Regularizer {
        match self.kind {
            RegularizerKind::None => Regularizer::None,
            RegularizerKind::SqDist => Regularizer::SqDist,
            RegularizerKind::Crd => Regularizer::Crd(CrdParams {
                temperature: self.temperature,
                negatives: self.negatives,
                batch_size: self.batch_size,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub grad_tol: f64,
    pub max_steps: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            grad_tol: 1e-6,
            max_steps: 10_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Falls back to `$AUGFL_OUT_DIR`, then `./augfl-out`.
    pub directory: Option<PathBuf>,
    pub formats: Vec<Format>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            directory: None,
            formats: vec![Format::Csv, Format::Json],
        }
    }
}

impl OutputConfig {
    pub fn resolved_directory(&self) -> PathBuf {
        self.directory
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsConfig {
    pub enabled: bool,
    /// Overrides the certification radius (default: twice the largest ‖θ‖).
    pub radius: Option<f64>,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            enabled: true,
            radius: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub federation: FederationConfig,
    pub model: ModelConfig,
    pub algo: AlgoConfig,
    pub regularizer: RegularizerConfig,
    pub pretrain: PretrainConfig,
    pub adaptation: EvalSchedule,
    pub output: OutputConfig,
    pub diagnostics: DiagnosticsConfig,
}

fn validation(e: Error) -> Error {
    match e {
        Error::InvalidInput(m) | Error::InvalidConfig(m) => Error::Validation(m),
        other => other,
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.federation.validate().map_err(validation)?;
        self.algo.validate().map_err(validation)?;
        let fed = &self.federation;
        match self.model.kind {
            ModelKind::Logistic if fed.num_classes != 2 => {
                return Err(Error::Validation("logistic model needs num_classes = 2".into()))
            }
            ModelKind::Mlp1 if self.model.hidden == 0 => return Err(Error::Validation("hidden must be >= 1".into())),
            ModelKind::Quadratic if !(self.model.curvature > 0.0 && self.model.curvature.is_finite()) => {
                return Err(Error::Validation("curvature must be > 0".into()))
            }
            _ => {}
        }
        if let RhoSetting::PerClient(v) = &self.algo.rho {
            if v.len() != fed.num_train() {
                return Err(Error::Validation(format!(
                    "rho list has {} entries but there are {} training clients",
                    v.len(),
                    fed.num_train()
                )));
            }
        }
        if self.adaptation.steps == 0 {
            return Err(Error::Validation("adaptation steps must be >= 1".into()));
        }
        if !(self.pretrain.grad_tol > 0.0) {
            return Err(Error::Validation("pretrain grad_tol must be > 0".into()));
        }
        if let Some(r) = self.diagnostics.radius {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::Validation("diagnostics radius must be > 0".into()));
            }
        }
        if self.output.formats.is_empty() {
            return Err(Error::Validation("output formats must not be empty".into()));
        }
        self.regularizer.build().validate_for(&self.build_model()?).map_err(validation)
    }

    pub fn build_model(&self) -> Result<LossModel> {
        let d = self.federation.feature_dim;
        Ok(match self.model.kind {
            ModelKind::Quadratic => LossModel::Quadratic(Quadratic::isotropic(d, self.model.curvature)?),
            ModelKind::Logistic => LossModel::Logistic(Logistic::new(d)?),
            ModelKind::Mlp1 => LossModel::Mlp1(Mlp1::new(d, self.model.hidden, self.federation.num_classes)?),
        })
    }

    /// SHA-256 of the canonical JSON form of the resolved config.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

/// Parses and validates a JSON config; missing keys take defaults.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| match e.classify() {
        serde_json::error::Category::Data => Error::Validation(format!("{e}")),
        _ => Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        },
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    parse_config(&fs::read_to_string(path)?)
}

/// Outcome of fitting the pretrained model on the server pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pretrained {
    pub theta: ParamVector,
    pub steps: usize,
    pub grad_norm: f64,
    /// Whether the gradient tolerance was reached within the step budget.
    pub attained: bool,
}

/// Full-batch gradient descent with backtracking on `data` from a seeded
/// start until `‖∇L‖ ≤ grad_tol` or `max_steps`.
pub fn pretrain<M: LossFn + ?Sized>(model: &M, data: &Dataset, cfg: &PretrainConfig, seed: u64, init_scale: f64) -> Result<Pretrained> {
    let mut theta = ParamVector::from_vec(gaussian_vec(&mut stream(seed, Stage::Pretrain), model.dim(), init_scale));
    let mut value = model.value(&theta, data)?;
    let mut step = 1.0;
    let mut g = model.grad(&theta, data)?;
    let mut steps = 0;
    while steps < cfg.max_steps && g.norm() > cfg.grad_tol {
        let gn2 = g.norm_squared();
        let mut accepted = false;
        for _ in 0..60 {
            let mut cand = theta.clone();
            cand.axpy(-step, &g);
            let v = model.value(&cand, data)?;
            if v <= value - 0.5 * step * gn2 {
                theta = cand;
                value = v;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        step = (step * 2.0).min(1e3);
        g = model.grad(&theta, data)?;
        steps += 1;
    }
    let grad_norm = g.norm();
    Ok(Pretrained {
        theta: theta.ensure_finite("pretrained parameters")?,
        steps,
        grad_norm,
        attained: grad_norm <= cfg.grad_tol,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub pretrained: Option<Pretrained>,
    pub theta_initial: ParamVector,
    pub theta_final: ParamVector,
    pub trace: Vec<RoundMetrics>,
    /// Final adaptation of θ^T on each held-out client.
    pub adaptation: Vec<Adaptation>,
    /// `‖∇L_p(θ^T)‖` on the server pool.
    pub server_grad_norm: f64,
    pub diagnostics: Option<DiagnosticsReport>,
    pub counters: GradCounters,
    /// Measured but not serialized, so repeated runs give identical files.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

impl MetricsReport {
    pub fn final_row(&self) -> &RoundMetrics {
        self.trace.last().expect("trace has round 0")
    }
}

/// Creates `dir` and checks that a file can be written there.
pub fn probe_directory(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let probe = dir.join(".augfl-write-probe");
    fs::write(&probe, b"")?;
    fs::remove_file(&probe)?;
    Ok(())
}

/// Builds the federation described by `config`, with penalties applied.
pub fn build_federation(config: &ExperimentConfig) -> Result<Federation> {
    let mut fed = generate_federation(&config.federation)?;
    fed.set_rho(&config.algo.rho.values())?;
    Ok(fed)
}

/// Runs an experiment without touching the file system.
pub fn execute(config: &ExperimentConfig) -> Result<MetricsReport> {
    config.validate()?;
    let fed = build_federation(config)?;
    let model = config.build_model()?;
    execute_on(config, &fed, &model)
}

/// [`execute`] on an existing federation and model.
pub fn execute_on<M: LossFn + ?Sized>(config: &ExperimentConfig, fed: &Federation, model: &M) -> Result<MetricsReport> {
    let regularizer = config.regularizer.build();
    let uses_reg = matches!(config.algo.algorithm, Algorithm::Augfl | Algorithm::ExactAdmm)
        && config.algo.lambda > 0.0
        && regularizer != Regularizer::None;
    let pretrained = if uses_reg {
        Some(pretrain(model, &fed.server_data, &config.pretrain, config.algo.seed, config.algo.init_scale)?)
    } else {
        None
    };
    let theta_p = pretrained
        .as_ref()
        .map(|p| p.theta.clone())
        .unwrap_or_else(|| ParamVector::zeros(model.dim()));
    let setup = RunSetup {
        federation: fed,
        model,
        regularizer,
        theta_p,
        eval: config.adaptation,
    };
    let out = engine::run(&setup, &config.algo)?;
    let diagnostics = if config.diagnostics.enabled {
        Some(diagnose(&setup, &config.algo, &out, config.diagnostics.radius)?)
    } else {
        None
    };
    Ok(MetricsReport {
        config: config.clone(),
        config_hash: config.hash(),
        pretrained,
        theta_initial: out.theta0.clone(),
        server_grad_norm: model.grad(&out.theta, &fed.server_data)?.norm(),
        theta_final: out.theta,
        trace: out.trace,
        adaptation: out.adaptation,
        diagnostics,
        counters: out.counters,
        wall_clock_secs: out.wall_clock_secs,
    })
}

/// Probes the output directory, then runs the experiment.
pub fn run_experiment(config: &ExperimentConfig) -> Result<MetricsReport> {
    config.validate()?;
    probe_directory(&config.output.resolved_directory())?;
    execute(config)
}

fn push_real(out: &mut String, v: f64) {
    let mut buf = ryu::Buffer::new();
    out.push_str(buf.format(v));
}

/// The trace as CSV text.
pub fn trace_csv(trace: &[RoundMetrics]) -> String {
    let mut out = String::with_capacity(64 * (trace.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in trace {
        let _ = write!(out, "{}", r.round);
        for v in [
            Some(r.f_value),
            Some(r.grad_f_norm),
            Some(r.lagrangian),
            Some(r.consensus_residual),
            Some(r.dual_residual),
            Some(r.reg_value),
            r.pre_adapt_loss,
            r.post_adapt_loss,
            r.post_adapt_acc,
        ] {
            out.push(',');
            if let Some(v) = v {
                push_real(&mut out, v);
            }
        }
        out.push('\n');
    }
    out
}

/// Writes the report in the requested formats and returns the paths.
pub fn emit_metrics(report: &MetricsReport, dir: &Path, formats: &[Format]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    for f in formats {
        let path = match f {
            Format::Csv => {
                let p = dir.join(CSV_FILE);
                fs::write(&p, trace_csv(&report.trace))?;
                p
            }
            Format::Json => {
                let p = dir.join(JSON_FILE);
                let mut text = serde_json::to_string_pretty(report)?;
                text.push('\n');
                fs::write(&p, text)?;
                p
            }
        };
        paths.push(path);
    }
    Ok(paths)
}

/// Parameter varied by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Lambda,
    Rho,
    #[serde(rename = "M")]
    MinSamples,
    NumClients,
    Seed,
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Lambda => "lambda",
            SweepAxis::Rho => "rho",
            SweepAxis::MinSamples => "M",
            SweepAxis::NumClients => "num_clients",
            SweepAxis::Seed => "seed",
        }
    }

    /// `base` with this axis set to `value`.
    pub fn apply(&self, base: &ExperimentConfig, value: f64) -> Result<ExperimentConfig> {
        let mut cfg = base.clone();
        let as_count = |v: f64| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
                Ok(v as usize)
            } else {
                Err(Error::Validation(format!("{} values must be non-negative integers, got {v}", self.name())))
            }
        };
        match self {
            SweepAxis::Lambda => cfg.algo.lambda = value,
            SweepAxis::Rho => cfg.algo.rho = RhoSetting::Uniform(value),
            SweepAxis::MinSamples => cfg.federation.min_samples = as_count(value)?,
            SweepAxis::NumClients => cfg.federation.num_clients = as_count(value)?,
            SweepAxis::Seed => {
                let s = as_count(value)? as u64;
                cfg.federation.seed = s;
                cfg.algo.seed = s;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lambda" => Ok(SweepAxis::Lambda),
            "rho" => Ok(SweepAxis::Rho),
            "M" | "min_samples" => Ok(SweepAxis::MinSamples),
            "num_clients" => Ok(SweepAxis::NumClients),
            "seed" => Ok(SweepAxis::Seed),
            other => Err(Error::Validation(format!(
                "unknown sweep axis '{other}' (expected lambda, rho, M, num_clients or seed)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub final_f: f64,
    pub final_grad_f_norm: f64,
    pub post_adapt_loss: Option<f64>,
    pub post_adapt_acc: Option<f64>,
    pub server_grad_norm: f64,
}

impl SweepRow {
    fn from_report(value: f64, r: &MetricsReport) -> Self {
        let last = r.final_row();
        SweepRow {
            value,
            final_f: last.f_value,
            final_grad_f_norm: last.grad_f_norm,
            post_adapt_loss: last.post_adapt_loss,
            post_adapt_acc: last.post_adapt_acc,
            server_grad_norm: r.server_grad_norm,
        }
    }
}

/// One report per value, computed in parallel; order follows `values`.
pub fn run_sweep(base: &ExperimentConfig, axis: SweepAxis, values: &[f64]) -> Result<Vec<MetricsReport>> {
    if values.is_empty() {
        return Err(Error::Validation("sweep needs at least one value".into()));
    }
    let configs = values.iter().map(|&v| axis.apply(base, v)).collect::<Result<Vec<_>>>()?;
    configs.par_iter().map(execute).collect()
}

pub fn sweep_summary(values: &[f64], reports: &[MetricsReport]) -> Vec<SweepRow> {
    values
        .iter()
        .zip(reports)
        .map(|(&v, r)| SweepRow::from_report(v, r))
        .collect()
}

/// Directory name of one sweep point.
pub fn sweep_point_dir(axis: SweepAxis, value: f64) -> String {
    let mut buf = ryu::Buffer::new();
    format!("{}={}", axis.name(), buf.format(value))
}

/// Runs a sweep and writes each point to its own subdirectory plus a
/// `summary.json` and `summary.csv` in `dir`.
pub fn run_sweep_to_dir(base: &ExperimentConfig, axis: SweepAxis, values: &[f64], dir: &Path) -> Result<Vec<SweepRow>> {
    probe_directory(dir)?;
    let reports = run_sweep(base, axis, values)?;
    for (&v, r) in values.iter().zip(&reports) {
        emit_metrics(r, &dir.join(sweep_point_dir(axis, v)), &base.output.formats)?;
    }
    let rows = sweep_summary(values, &reports);
    let mut csv = format!("{},F,grad_F_norm,post_adapt_loss,post_adapt_acc,server_grad_norm\n", axis.name());
    for r in &rows {
        push_real(&mut csv, r.value);
        for v in [Some(r.final_f), Some(r.final_grad_f_norm), r.post_adapt_loss, r.post_adapt_acc, Some(r.server_grad_norm)] {
            csv.push(',');
            if let Some(v) = v {
                push_real(&mut csv, v);
            }
        }
        csv.push('\n');
    }
    fs::write(dir.join("summary.csv"), csv)?;
    let mut json = serde_json::to_string_pretty(&rows)?;
    json.push('\n');
    fs::write(dir.join("summary.json"), json)?;
    Ok(rows)
}

/// Rounds used by the short diagnostics-only run.
pub const CHECK_ROUNDS: usize = 50;

/// Diagnostics of a short run of at most [`CHECK_ROUNDS`] rounds.
pub fn run_check(config: &ExperimentConfig) -> Result<(MetricsReport, DiagnosticsReport)> {
    let mut cfg = config.clone();
    cfg.algo.rounds = cfg.algo.rounds.min(CHECK_ROUNDS);
    cfg.diagnostics.enabled = true;
    let report = execute(&cfg)?;
    let diag = report.diagnostics.clone().expect("diagnostics enabled");
    Ok((report, diag))
}
