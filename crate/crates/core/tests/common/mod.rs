#![allow(dead_code)]

use augfl_core::data::{Dataset, Sample};
use augfl_core::harness::{ExperimentConfig, ModelKind, RegularizerKind};
use augfl_core::tasks::{ClientRecord, Federation, FederationConfig};
use augfl_core::models::{fd_grad, LossFn, LossModel, Logistic, Mlp1, Quadratic};
use augfl_core::rng::{gaussian_vec, substream, Stage};
use augfl_core::ParamVector;
use rand::Rng;

pub fn v(x: &[f64]) -> ParamVector {
    ParamVector::from_vec(x.to_vec())
}

pub fn origin(n: usize) -> Dataset {
    Dataset::from_inputs(vec![vec![0.0; n]]).unwrap()
}

pub fn points(rows: &[&[f64]]) -> Dataset {
    Dataset::from_inputs(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
}

pub fn labeled(rows: &[(&[f64], f64)]) -> Dataset {
    Dataset::new(rows.iter().map(|(x, y)| Sample::new(x.to_vec(), *y)).collect()).unwrap()
}

pub fn client(id: usize, support: Dataset, query: Dataset, weight: f64, rho: f64) -> ClientRecord {
    ClientRecord {
        id,
        support,
        query,
        weight,
        rho,
    }
}

/// Federation built from explicit training clients, no test clients.
pub fn federation(train: Vec<ClientRecord>, server: Dataset) -> Federation {
    Federation {
        config: FederationConfig::default(),
        train,
        test: Vec::new(),
        server_data: server,
    }
}

/// Ten-client binary logistic federation with overlapping classes.
pub fn convex_reference() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.federation.num_clients = 10;
    c.federation.num_classes = 2;
    c.federation.feature_dim = 20;
    c.federation.train_fraction = 1.0;
    c.federation.class_scale = 0.3;
    c.federation.min_samples = 20;
    c.federation.server_samples = 100;
    c.model.kind = ModelKind::Logistic;
    c.algo.lambda = 0.0;
    c.algo.rho = augfl_core::engine::RhoSetting::Uniform(2.0);
    c.algo.rounds = 2000;
    c.regularizer.kind = RegularizerKind::None;
    c.diagnostics.enabled = false;
    c
}

/// Two-classes-per-client mlp1 federation with scarce, overlapping data.
pub fn heterogeneous_reference() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.federation.min_samples = 10;
    c.federation.class_scale = 0.5;
    c.model.kind = ModelKind::Mlp1;
    c.algo.lambda = 0.0;
    c.algo.rounds = 500;
    c.algo.alpha = 0.5;
    c.algo.rho = augfl_core::engine::RhoSetting::Uniform(0.2);
    c.algo.local_lr = 0.125;
    c.adaptation.steps = 5;
    c.regularizer.kind = RegularizerKind::None;
    c.diagnostics.enabled = false;
    c
}

/// Knowledge-transfer fixture: few samples per client, a large server pool
/// and a poor random start.
pub fn transfer_reference() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.federation.min_samples = 5;
    c.federation.class_scale = 0.5;
    c.model.kind = ModelKind::Mlp1;
    c.algo.rounds = 500;
    c.algo.alpha = 0.1;
    c.algo.rho = augfl_core::engine::RhoSetting::Uniform(2.0);
    c.algo.init_scale = 1.0;
    c.pretrain.max_steps = 1000;
    c.adaptation.steps = 5;
    c.regularizer.kind = RegularizerKind::SqDist;
    c.diagnostics.enabled = false;
    c
}

/// Ten-client quadratic federation in five dimensions.
pub fn quadratic_reference() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.federation.num_clients = 10;
    c.federation.feature_dim = 5;
    c.federation.train_fraction = 1.0;
    c.federation.min_samples = 10;
    c.model.kind = ModelKind::Quadratic;
    c.algo.lambda = 0.0;
    c.algo.rounds = 400;
    c.algo.rho = augfl_core::engine::RhoSetting::Uniform(2.0);
    c.regularizer.kind = RegularizerKind::None;
    c.diagnostics.enabled = false;
    c
}

pub fn max_rel_err(a: &ParamVector, b: &ParamVector) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy)]
pub enum Kind {
    Quadratic,
    Logistic,
    Mlp1,
}

/// Random model, parameters and dataset of the given kind.
pub fn draw(kind: Kind, seed: u64) -> (LossModel, ParamVector, Dataset) {
    let mut rng = substream(seed, Stage::Samples, kind as u64);
    let d = 2 + (seed % 4) as usize;
    let n = 3 + (seed % 5) as usize;
    let mut xs = |k: usize| -> Vec<Vec<f64>> { (0..n).map(|_| gaussian_vec(&mut rng, k, 1.0)).collect() };
    match kind {
        Kind::Quadratic => {
            let inputs = xs(d);
            let mut rng = substream(seed, Stage::ModelInit, 0);
            // A = BᵀB + 0.1 I
            let b = gaussian_vec(&mut rng, d * d, 1.0);
            let mut a = vec![0.0; d * d];
            for i in 0..d {
                for j in 0..d {
                    a[i * d + j] = (0..d).map(|k| b[k * d + i] * b[k * d + j]).sum::<f64>() + if i == j { 0.1 } else { 0.0 };
                }
            }
            let c = gaussian_vec(&mut rng, d, 1.0);
            let theta = ParamVector::from_vec(gaussian_vec(&mut rng, d, 1.0));
            (
                LossModel::Quadratic(Quadratic::new(a, c).unwrap()),
                theta,
                Dataset::from_inputs(inputs).unwrap(),
            )
        }
        Kind::Logistic => {
            let inputs = xs(d);
            let mut rng = substream(seed, Stage::ModelInit, 1);
            let samples = inputs
                .into_iter()
                .map(|x| Sample::new(x, f64::from(rng.random::<bool>() as u8)))
                .collect();
            let theta = ParamVector::from_vec(gaussian_vec(&mut rng, d, 1.0));
            (LossModel::Logistic(Logistic::new(d).unwrap()), theta, Dataset::new(samples).unwrap())
        }
        Kind::Mlp1 => {
            let inputs = xs(d);
            let k = 2 + (seed % 3) as usize;
            let mlp = Mlp1::new(d, 3, k).unwrap();
            let mut rng = substream(seed, Stage::ModelInit, 2);
            let samples = inputs
                .into_iter()
                .map(|x| Sample::new(x, rng.random_range(0..k) as f64))
                .collect();
            let theta = ParamVector::from_vec(gaussian_vec(&mut rng, mlp.dim(), 0.7));
            (LossModel::Mlp1(mlp), theta, Dataset::new(samples).unwrap())
        }
    }
}

/// Relative agreement of analytic and central-difference gradients, with an
/// absolute floor for entries near zero.
pub fn gradient_agreement(kind: Kind, seed: u64) -> f64 {
    let (model, theta, data) = draw(kind, seed);
    let g = model.grad(&theta, &data).unwrap();
    let fd = fd_grad(&model, &theta, &data, 1e-6).unwrap();
    let scale = g.max_abs().max(1e-3);
    g.iter().zip(fd.iter()).map(|(a, b)| (a - b).abs() / scale).fold(0.0, f64::max)
}

