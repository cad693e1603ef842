//! Fixtures shared by the benchmarks.

use augfl_core::engine::{AlgoConfig, Algorithm, EvalSchedule, RunSetup};
use augfl_core::harness::{build_federation, ExperimentConfig, ModelKind};
use augfl_core::models::{LossFn, LossModel};
use augfl_core::regularizers::Regularizer;
use augfl_core::tasks::Federation;
use augfl_core::ParamVector;

/// Default 50-client federation with the given model kind, ρ = 0.7.
pub fn federation(kind: ModelKind) -> (Federation, LossModel, AlgoConfig) {
    let mut cfg = ExperimentConfig::default();
    cfg.model.kind = kind;
    if kind == ModelKind::Logistic {
        cfg.federation.num_classes = 2;
    }
    cfg.algo.algorithm = Algorithm::Augfl;
    cfg.algo.lambda = 0.0;
    let fed = build_federation(&cfg).expect("default federation is valid");
    let model = cfg.build_model().expect("default model is valid");
    (fed, model, cfg.algo)
}

pub fn setup<'a>(fed: &'a Federation, model: &'a LossModel) -> RunSetup<'a, LossModel> {
    RunSetup {
        federation: fed,
        model,
        regularizer: Regularizer::None,
        theta_p: ParamVector::zeros(model.dim()),
        eval: EvalSchedule::default(),
    }
}
