mod common;

use augfl_core::data::Dataset;
use augfl_core::diagnostics::objective_gradient;
use augfl_core::engine::{
    adapt_and_eval, client_dual_update, client_inner_step, client_local_update, client_local_update_with,
    exact_local_solve, initial_theta, run, run_augfl, run_exact_admm, run_fedavg, run_perfedavg, server_aggregate,
    AlgoConfig, Algorithm, EvalSchedule, FederationState, RunOutput, RunSetup,
};
use augfl_core::models::fixtures::Linear;
use augfl_core::models::{hvp_estimate, HessianProduct, LossFn, Quadratic};
use augfl_core::regularizers::Regularizer;
use augfl_core::rng::{gaussian_vec, substream, Stage};
use augfl_core::tasks::{ClientRecord, Federation};
use augfl_core::{Error, ParamVector};
use common::{client, federation, origin, points, v};
use nalgebra::{DMatrix, DVector};

fn scalar_client(weight: f64, rho: f64) -> ClientRecord {
    client(0, origin(1), origin(1), weight, rho)
}

fn unit_quadratic() -> Quadratic {
    Quadratic::diagonal(&[1.0], vec![1.0]).unwrap()
}

fn setup<'a, M: LossFn>(fed: &'a Federation, model: &'a M, reg: Regularizer) -> RunSetup<'a, M> {
    RunSetup {
        federation: fed,
        model,
        regularizer: reg,
        theta_p: ParamVector::zeros(model.dim()),
        eval: EvalSchedule::default(),
    }
}

fn cfg(algorithm: Algorithm, rounds: usize) -> AlgoConfig {
    AlgoConfig {
        algorithm,
        rounds,
        lambda: 0.0,
        ..AlgoConfig::default()
    }
}

fn trace_json(out: &RunOutput) -> String {
    serde_json::to_string(&out.trace).unwrap()
}

#[test]
fn inner_step_examples() {
    let q = unit_quadratic();
    let c = scalar_client(1.0, 1.0);
    let theta = v(&[0.7]);
    assert_eq!(client_inner_step(&c, &theta, &q, 0.0).unwrap(), theta);
    assert!((client_inner_step(&c, &v(&[0.0]), &q, 0.03).unwrap()[0] - 0.03).abs() <= 1e-15);
    assert!((client_inner_step(&c, &v(&[1.0]), &q, 0.5).unwrap()[0] - 1.0).abs() <= 1e-12);
}

#[test]
fn local_update_examples() {
    // query gradient at φ = θ equals −1 when θ = 0
    let q = unit_quadratic();
    let c = scalar_client(1.0, 1.0);
    let up = client_local_update(&c, &v(&[0.0]), &v(&[0.0]), &q, 0.0, 0.01).unwrap();
    assert_eq!(up.theta_i[0], 1.0);
    let up = client_local_update(&c, &v(&[1.0]), &v(&[0.0]), &q, 0.0, 0.01).unwrap();
    assert_eq!(up.theta_i[0], 1.0);
    // zero force, dual 0.7 with ρ = 0.7
    let c = scalar_client(1.0, 0.7);
    let up = client_local_update(&c, &v(&[1.0]), &v(&[0.7]), &q, 0.0, 0.01).unwrap();
    assert!((up.theta_i[0] - 0.0).abs() <= 1e-15);
    let bad = scalar_client(1.0, 0.0);
    assert!(matches!(
        client_local_update(&bad, &v(&[1.0]), &v(&[0.0]), &q, 0.03, 0.01),
        Err(Error::InvalidConfig(_))
    ));
}

#[test]
fn dual_update_examples() {
    let c = scalar_client(1.0, 0.7);
    let y = client_dual_update(&c, &v(&[2.0]), &v(&[2.0]), &v(&[0.3])).unwrap();
    assert_eq!(y[0], 0.3);
    let y = client_dual_update(&c, &v(&[1.0]), &v(&[0.0]), &v(&[0.0])).unwrap();
    assert_eq!(y[0], 0.7);
}

#[test]
fn dual_identity_after_update() {
    let q = Quadratic::new(vec![2.0, 0.3, 0.3, 1.0], vec![0.5, -0.5]).unwrap();
    let c = client(0, points(&[&[0.1, 0.2], &[0.3, -0.4]]), points(&[&[-0.2, 0.1]]), 0.4, 0.7);
    let theta = v(&[0.3, 0.9]);
    let y_prev = v(&[0.2, -0.1]);
    let up = client_local_update(&c, &theta, &y_prev, &q, 0.03, 0.01).unwrap();
    let y = client_dual_update(&c, &up.theta_i, &theta, &y_prev).unwrap();
    let mut check = y.clone();
    check.axpy(c.weight, &up.terms.surrogate_gradient(0.03));
    assert!(check.norm() <= 1e-10, "{}", check.norm());
}

fn state_with<'a>(
    clients: &'a [ClientRecord],
    server: &'a Dataset,
    theta: f64,
    locals: &[(f64, f64)],
    theta_p: f64,
    lambda: f64,
) -> FederationState<'a> {
    let mut s = FederationState::new(v(&[theta]), clients, server, Regularizer::SqDist, v(&[theta_p]), lambda, 0.03);
    for (l, (t, y)) in s.locals.iter_mut().zip(locals) {
        l.theta = v(&[*t]);
        l.dual = v(&[*y]);
    }
    s
}

#[test]
fn server_aggregate_examples() {
    let server = origin(1);
    let clients: Vec<ClientRecord> = (0..3).map(|i| client(i, origin(1), origin(1), 1.0 / 3.0, 0.7)).collect();
    let s = state_with(&clients, &server, 0.0, &[(1.0, 0.0), (2.0, 0.0), (6.0, 0.0)], 0.0, 0.0);
    assert!((server_aggregate(&s, &v(&[0.0])).unwrap()[0] - 3.0).abs() <= 1e-12);

    let one = vec![client(0, origin(1), origin(1), 1.0, 1.0)];
    let s = state_with(&one, &server, 1.0, &[(0.0, 0.0)], 1.0, 0.5);
    let (_, rg) = s.reg_grad(&unit_quadratic(), 0).unwrap();
    assert_eq!(server_aggregate(&s, &rg).unwrap()[0], 0.0);

    let s = state_with(&clients, &server, 0.4, &[(0.4, 0.0), (0.4, 0.0), (0.4, 0.0)], 0.4, 5.0);
    let (_, rg) = s.reg_grad(&unit_quadratic(), 0).unwrap();
    assert!((server_aggregate(&s, &rg).unwrap()[0] - 0.4).abs() <= 1e-15);

    let none: Vec<ClientRecord> = Vec::new();
    let s = FederationState::new(v(&[0.0]), &none, &server, Regularizer::None, v(&[0.0]), 0.0, 0.03);
    assert!(matches!(server_aggregate(&s, &v(&[0.0])), Err(Error::InvalidInput(_))));
}

#[test]
fn exact_solve_examples() {
    // α = 0 makes F_i the query loss ½(θ − 1)²
    let q = unit_quadratic();
    let c = scalar_client(1.0, 1.0);
    let x = exact_local_solve(&c, &v(&[0.0]), &v(&[0.0]), &q, 0.0, 1e-12, 100_000).unwrap();
    assert!((x[0] - 0.5).abs() <= 1e-10);

    let flat = Linear::new(vec![0.0, 0.0]).unwrap();
    let c2 = client(0, origin(1), origin(1), 1.0, 2.0);
    let x = exact_local_solve(&c2, &v(&[1.0, -1.0]), &v(&[0.5, 1.0]), &flat, 0.1, 1e-12, 100_000).unwrap();
    assert!(x.distance(&v(&[0.75, -1.5])) <= 1e-10);

    // linear F_i: the linearized closed form is exact
    let lin = Linear::new(vec![0.3, -1.2]).unwrap();
    let c3 = client(0, origin(1), origin(1), 0.6, 0.9);
    let (theta, y) = (v(&[0.2, 0.1]), v(&[-0.4, 0.25]));
    let x = exact_local_solve(&c3, &theta, &y, &lin, 0.05, 1e-12, 100_000).unwrap();
    let closed = client_local_update_with(&c3, &theta, &y, &lin, 0.05, HessianProduct::Exact).unwrap();
    assert!(x.distance(&closed.theta_i) <= 1e-10);

    let (fed, q3) = small_quadratic_federation(1);
    assert!(matches!(
        exact_local_solve(&fed.train[0], &v(&[1.0, 2.0, 3.0]), &v(&[0.0; 3]), &q3, 0.03, 1e-14, 2),
        Err(Error::NoConvergence { .. })
    ));
}

#[test]
fn adaptation_examples() {
    let q = unit_quadratic();
    let c = scalar_client(1.0, 1.0);
    let a = adapt_and_eval(&v(&[1.0]), &c, &q, 0.1, 3).unwrap();
    assert_eq!(a.phi[0], 1.0);
    assert_eq!(a.pre_loss, a.post_loss);
    assert!(a.post_accuracy.is_none());
    let theta = v(&[-0.4]);
    let a = adapt_and_eval(&theta, &c, &q, 0.1, 1).unwrap();
    assert_eq!(a.phi, client_inner_step(&c, &theta, &q, 0.1).unwrap());
    for alpha in [0.1, 1.0, 1.9] {
        let a = adapt_and_eval(&theta, &c, &q, alpha, 1).unwrap();
        assert!(a.post_loss < a.pre_loss, "alpha {alpha}");
    }
    assert!(adapt_and_eval(&theta, &c, &q, 0.1, 0).is_err());
}

/// Minimizer of the single-client meta objective by plain gradient descent
/// with exact dense Hessians.
fn dense_meta_minimizer(a: &DMatrix<f64>, cs: &DVector<f64>, cq: &DVector<f64>, alpha: f64) -> DVector<f64> {
    let n = a.nrows();
    let p = DMatrix::identity(n, n) - a * alpha;
    let h = &p * a * &p;
    let step = 1.0 / h.symmetric_eigenvalues().max();
    let mut x = DVector::zeros(n);
    for _ in 0..200_000 {
        let phi = &x - a * (&x - cs) * alpha;
        let g = &p * a * (phi - cq);
        if g.norm() <= 1e-14 {
            break;
        }
        x -= g * step;
    }
    x
}

#[test]
fn single_client_converges_to_dense_oracle() {
    let a = vec![1.5, 0.4, 0.0, 0.4, 1.0, 0.2, 0.0, 0.2, 0.6];
    let q = Quadratic::new(a.clone(), vec![0.5, -1.0, 0.25]).unwrap();
    let support = points(&[&[0.2, 0.0, 0.1], &[-0.1, 0.3, 0.0]]);
    for same in [true, false] {
        let query = if same { support.clone() } else { points(&[&[0.4, -0.2, 0.3]]) };
        let cs = DVector::from_vec(q.effective_center(&support));
        let cq = DVector::from_vec(q.effective_center(&query));
        let fed = federation(vec![client(0, support.clone(), query, 1.0, 5.0)], origin(3));
        let s = setup(&fed, &q, Regularizer::None);
        let c = AlgoConfig {
            rho: augfl_core::engine::RhoSetting::Uniform(5.0),
            rounds: 3000,
            ..cfg(Algorithm::Augfl, 3000)
        };
        let out = run_augfl(&s, &c).unwrap();
        let oracle = dense_meta_minimizer(&DMatrix::from_row_slice(3, 3, &a), &cs, &cq, c.alpha);
        let err = (DVector::from_column_slice(out.theta.as_slice()) - oracle).norm();
        assert!(err <= 1e-6, "same={same}: {err}");
        assert!(out.trace.last().unwrap().grad_f_norm <= 1e-6);
    }
}

fn small_quadratic_federation(num_clients: usize) -> (Federation, Quadratic) {
    let mut rng = substream(17, Stage::Samples, 0);
    let clients = (0..num_clients)
        .map(|i| {
            let s: Vec<Vec<f64>> = (0..4).map(|_| gaussian_vec(&mut rng, 3, 1.0)).collect();
            let q: Vec<Vec<f64>> = (0..3).map(|_| gaussian_vec(&mut rng, 3, 1.0)).collect();
            client(
                i,
                Dataset::from_inputs(s).unwrap(),
                Dataset::from_inputs(q).unwrap(),
                1.0 / num_clients as f64,
                0.7,
            )
        })
        .collect();
    let q = Quadratic::new(vec![1.0, 0.2, 0.0, 0.2, 0.8, 0.1, 0.0, 0.1, 0.5], vec![0.0; 3]).unwrap();
    (federation(clients, origin(3)), q)
}

#[test]
fn runs_are_bitwise_deterministic() {
    let (fed, q) = small_quadratic_federation(4);
    let s = setup(&fed, &q, Regularizer::None);
    for alg in [Algorithm::Augfl, Algorithm::ExactAdmm, Algorithm::Fedavg, Algorithm::Perfedavg] {
        let c = cfg(alg, 20);
        let a = run(&s, &c).unwrap();
        let b = run(&s, &c).unwrap();
        assert_eq!(trace_json(&a), trace_json(&b), "{alg:?}");
        assert_eq!(a.theta, b.theta);
        let par = run(&s, &AlgoConfig { workers: 4, ..c.clone() }).unwrap();
        assert_eq!(trace_json(&a), trace_json(&par), "{alg:?} parallel");
    }
}

#[test]
fn trace_has_initial_row_and_identities_hold() {
    let (fed, q) = small_quadratic_federation(5);
    let s = RunSetup {
        theta_p: v(&[0.3, -0.2, 0.1]),
        ..setup(&fed, &q, Regularizer::SqDist)
    };
    let c = AlgoConfig {
        lambda: 0.5,
        ..cfg(Algorithm::Augfl, 25)
    };
    let out = run_augfl(&s, &c).unwrap();
    assert_eq!(out.trace.len(), 26);
    assert_eq!(out.rounds.len(), 25);
    for (t, r) in out.rounds.iter().enumerate() {
        assert!(r.dual_identity <= 1e-10, "round {t}: {}", r.dual_identity);
        assert!(r.aggregation_identity <= 1e-9 * (1.0 + out.trace[t + 1].f_value.abs().max(1.0)));
        assert_eq!(r.delta, 1.0 / (10.0 * t as f64 + 100.0));
    }
    assert_eq!(out.theta0, initial_theta(3, 0.1, 0));
}

#[test]
fn gradient_counts_per_client_round() {
    let (fed, q) = small_quadratic_federation(3);
    let s = setup(&fed, &q, Regularizer::None);
    let out = run_augfl(&s, &cfg(Algorithm::Augfl, 7)).unwrap();
    assert_eq!(out.counters.client_rounds, 21);
    assert_eq!(out.counters.support, 3 * 21);
    assert_eq!(out.counters.query, 21);
    assert_eq!(out.counters.other, 0);
}

#[test]
fn disabled_and_zero_weight_regularizers_agree() {
    let (fed, q) = small_quadratic_federation(3);
    let c = cfg(Algorithm::Augfl, 15);
    let a = run_augfl(&setup(&fed, &q, Regularizer::SqDist), &c).unwrap();
    let b = run_augfl(&setup(&fed, &q, Regularizer::None), &c).unwrap();
    assert_eq!(trace_json(&a), trace_json(&b));
}

#[test]
fn fedavg_single_client_is_centralized_descent() {
    let (mut fed, q) = small_quadratic_federation(1);
    fed.train[0].weight = 1.0;
    let c = AlgoConfig {
        local_lr: 0.1,
        ..cfg(Algorithm::Fedavg, 30)
    };
    let out = run_fedavg(&setup(&fed, &q, Regularizer::None), &c).unwrap();
    let union = fed.train[0].support.concat(&fed.train[0].query).unwrap();
    let mut x = initial_theta(3, c.init_scale, c.seed);
    for _ in 0..30 {
        x.axpy(-0.1, &q.grad(&x, &union).unwrap());
    }
    assert!(out.theta.distance(&x) <= 1e-12);
}

#[test]
fn fedavg_identical_clients_match_one_client() {
    let (fed1, q) = small_quadratic_federation(1);
    let mut fed3 = fed1.clone();
    fed3.train = (0..3)
        .map(|i| ClientRecord {
            id: i,
            weight: 1.0 / 3.0,
            ..fed1.train[0].clone()
        })
        .collect();
    let mut one = fed1.clone();
    one.train[0].weight = 1.0;
    let c = cfg(Algorithm::Fedavg, 10);
    let a = run_fedavg(&setup(&one, &q, Regularizer::None), &c).unwrap();
    let b = run_fedavg(&setup(&fed3, &q, Regularizer::None), &c).unwrap();
    assert!(a.theta.distance(&b.theta) <= 1e-12);
}

#[test]
fn perfedavg_single_client_is_meta_descent() {
    let (mut fed, q) = small_quadratic_federation(1);
    fed.train[0].weight = 1.0;
    let c = AlgoConfig {
        local_lr: 0.2,
        alpha: 0.1,
        ..cfg(Algorithm::Perfedavg, 40)
    };
    let out = run_perfedavg(&setup(&fed, &q, Regularizer::None), &c).unwrap();
    let cl = &fed.train[0];
    let mut x = initial_theta(3, c.init_scale, c.seed);
    for t in 0..40 {
        let mut phi = x.clone();
        phi.axpy(-c.alpha, &q.grad(&x, &cl.support).unwrap());
        let r = q.grad(&phi, &cl.query).unwrap();
        let g = hvp_estimate(&q, &x, &r, c.delta.at(t), &cl.support).unwrap();
        let mut d = r.clone();
        d.axpy(-c.alpha, &g);
        x.axpy(-c.local_lr, &d);
    }
    assert!(out.theta.distance(&x) <= 1e-12);
}

#[test]
fn zero_step_meta_gradient_is_query_gradient() {
    // the baseline's local direction with α = 0 is the plain query gradient
    let (fed, q) = small_quadratic_federation(1);
    let cl = &fed.train[0];
    let x = v(&[0.3, 0.1, -0.2]);
    let terms = augfl_core::engine::meta_terms(cl, &x, &q, 0.0, HessianProduct::Estimate(0.01)).unwrap();
    assert_eq!(terms.surrogate_gradient(0.0), q.grad(&x, &cl.query).unwrap());
}

#[test]
fn baselines_ignore_the_regularizer() {
    let (fed, q) = small_quadratic_federation(3);
    let base = cfg(Algorithm::Perfedavg, 10);
    let with = AlgoConfig {
        lambda: 5.0,
        ..base.clone()
    };
    let a = run_perfedavg(&setup(&fed, &q, Regularizer::SqDist), &base).unwrap();
    let b = run_perfedavg(&setup(&fed, &q, Regularizer::SqDist), &with).unwrap();
    assert_eq!(a.theta, b.theta);
}

#[test]
fn exact_admm_tracks_augfl_on_quadratics() {
    let (fed, q) = small_quadratic_federation(4);
    let s = setup(&fed, &q, Regularizer::None);
    let c = AlgoConfig {
        rho: augfl_core::engine::RhoSetting::Uniform(2.0),
        ..cfg(Algorithm::Augfl, 300)
    };
    let a = run_augfl(&s, &c).unwrap();
    let b = run_exact_admm(&s, &AlgoConfig { algorithm: Algorithm::ExactAdmm, ..c.clone() }).unwrap();
    assert!(a.theta.distance(&b.theta) <= 1e-6, "{}", a.theta.distance(&b.theta));
    let state = FederationState::new(a.theta.clone(), &fed.train, &fed.server_data, Regularizer::None, ParamVector::zeros(3), 0.0, c.alpha);
    assert!(objective_gradient(&state, &q, HessianProduct::Exact).unwrap().norm() <= 1e-6);
}

#[test]
fn wrong_algorithm_and_invalid_config_are_rejected() {
    let (fed, q) = small_quadratic_federation(2);
    let s = setup(&fed, &q, Regularizer::None);
    assert!(matches!(run_augfl(&s, &cfg(Algorithm::Fedavg, 1)), Err(Error::InvalidConfig(_))));
    let bad = AlgoConfig {
        alpha: 0.0,
        ..cfg(Algorithm::Augfl, 1)
    };
    assert!(matches!(run(&s, &bad), Err(Error::Validation(_))));
}

#[test]
fn tiny_penalty_diverges_with_round() {
    let (mut fed, q) = small_quadratic_federation(2);
    for c in &mut fed.train {
        c.rho = 1e-9;
    }
    let c = AlgoConfig {
        rho: augfl_core::engine::RhoSetting::Uniform(1e-9),
        init_scale: 1.0,
        ..cfg(Algorithm::Augfl, 500)
    };
    match run_augfl(&setup(&fed, &q, Regularizer::None), &c) {
        Err(Error::Divergence { round, .. }) => assert!(round < 500),
        other => panic!("expected divergence, got {:?}", other.map(|o| o.theta)),
    }
}
