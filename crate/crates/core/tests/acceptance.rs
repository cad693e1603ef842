//! End-to-end acceptance criteria with their pinned tolerances and runtime
//! budgets. Prints one PASS/FAIL line per criterion and fails if any does.

mod common;

use std::fs;
use std::time::{Duration, Instant};

use augfl_core::diagnostics::{check_hvp_bound, smoothness_constants, RoundMetrics};
use augfl_core::engine::{
    client_inner_step, client_local_update_with, exact_local_solve, run_augfl, Algorithm, EvalSchedule, RunSetup,
};
use augfl_core::harness::{
    build_federation, emit_metrics, execute, pretrain, run_sweep, ExperimentConfig, Format, MetricsReport, SweepAxis,
    CSV_FILE, JSON_FILE,
};
use augfl_core::models::fixtures::{Linear, Quartic};
use augfl_core::models::{HessianProduct, Logistic, Quadratic};
use augfl_core::regularizers::Regularizer;
use augfl_core::tasks::ClientRecord;
use common::{
    client, convex_reference, gradient_agreement, heterogeneous_reference, origin, points, quadratic_reference,
    transfer_reference, v, Kind,
};

const SEEDS: [u64; 3] = [0, 1, 2];

struct Outcome {
    passed: bool,
    detail: String,
}

type Criterion = (&'static str, Duration, fn() -> Outcome);

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn final_acc(r: &MetricsReport) -> f64 {
    r.final_row().post_adapt_acc.expect("classification model")
}

fn with_seed(mut c: ExperimentConfig, seed: u64) -> ExperimentConfig {
    c.federation.seed = seed;
    c.algo.seed = seed;
    c
}

fn seed_mean(base: &ExperimentConfig, f: impl Fn(&MetricsReport) -> f64) -> f64 {
    let reports = run_sweep(base, SweepAxis::Seed, &SEEDS.map(|s| s as f64)).unwrap();
    reports.iter().map(&f).sum::<f64>() / reports.len() as f64
}

fn non_decreasing(x: &[f64]) -> bool {
    x.windows(2).all(|w| w[1] >= w[0])
}

fn identities() -> Outcome {
    let mut cfg = convex_reference();
    cfg.algo.rounds = 200;
    cfg.algo.lambda = 5.0;
    let fed = build_federation(&cfg).unwrap();
    let model = Logistic::new(20).unwrap();
    let p = pretrain(&model, &fed.server_data, &cfg.pretrain, 0, cfg.algo.init_scale).unwrap();
    let setup = RunSetup {
        federation: &fed,
        model: &model,
        regularizer: Regularizer::SqDist,
        theta_p: p.theta,
        eval: EvalSchedule::default(),
    };
    let out = run_augfl(&setup, &cfg.algo).unwrap();
    let dual = out.rounds.iter().map(|r| r.dual_identity).fold(0.0, f64::max);
    let agg_ok = out
        .rounds
        .iter()
        .all(|r| r.aggregation_identity <= 1e-9 * (1.0 + next_norm(&out.rounds, r.round, out.theta.norm())));
    let agg = out.rounds.iter().map(|r| r.aggregation_identity).fold(0.0, f64::max);
    outcome(
        out.rounds.len() == 200 && dual <= 1e-10 && agg_ok,
        format!("max dual residual {dual:.2e} (<= 1e-10), max aggregation residual {agg:.2e} (<= 1e-9 (1+|theta|))"),
    )
}

/// ‖θ^{t+1}‖ from the next record, or the final norm after the last round.
fn next_norm(rounds: &[augfl_core::engine::RoundRecord], t: usize, last: f64) -> f64 {
    rounds.get(t + 1).map_or(last, |r| r.theta_norm)
}

fn oracle_gradients() -> Outcome {
    let mut worst = [0.0f64; 3];
    for (k, kind) in [Kind::Quadratic, Kind::Logistic, Kind::Mlp1].into_iter().enumerate() {
        for seed in 0..50 {
            worst[k] = worst[k].max(gradient_agreement(kind, seed));
        }
    }
    outcome(
        worst.iter().all(|w| *w <= 1e-5),
        format!(
            "max rel error quadratic {:.1e}, logistic {:.1e}, mlp1 {:.1e} (<= 1e-5)",
            worst[0], worst[1], worst[2]
        ),
    )
}

fn estimator_bound() -> Outcome {
    let radius = 2.0;
    let alpha = 0.03;
    let quartic = Quartic::new(2);
    let quad = Quadratic::new(vec![2.0, 0.5, 0.5, 1.0], vec![0.3, -0.2]).unwrap();
    let qc = client(0, points(&[&[0.1, 0.1], &[-0.2, 0.4]]), points(&[&[0.3, -0.1]]), 1.0, 1.0);
    let kc = client(0, origin(1), origin(1), 1.0, 1.0);
    let kq = smoothness_constants(&quartic, std::slice::from_ref(&kc), &Regularizer::None, radius, alpha, 0).unwrap();
    let kd = smoothness_constants(&quad, std::slice::from_ref(&qc), &Regularizer::None, radius, alpha, 0).unwrap();
    let mut all_ok = true;
    let mut quad_worst = 0.0f64;
    let mut quartic_worst = 0.0f64;
    for theta in [v(&[0.8, -0.5]), v(&[-1.2, 0.3]), v(&[0.1, 1.5])] {
        for delta in [1e-1, 1e-2, 1e-3] {
            let phi = client_inner_step(&kc, &theta, &quartic, alpha).unwrap();
            let a = check_hvp_bound(&quartic, &theta, &phi, delta, &kc, &kq.clients[0], radius).unwrap();
            let phi = client_inner_step(&qc, &theta, &quad, alpha).unwrap();
            let b = check_hvp_bound(&quad, &theta, &phi, delta, &qc, &kd.clients[0], radius).unwrap();
            all_ok &= a.ok && b.ok && a.in_ball == Some(true) && b.observed_error <= 1e-12;
            quad_worst = quad_worst.max(b.observed_error);
            quartic_worst = quartic_worst.max(a.observed_error / a.bound);
        }
    }
    outcome(
        all_ok && kq.clients[0].certified && kd.clients[0].certified,
        format!("quartic max error/bound {quartic_worst:.2e}, quadratic max error {quad_worst:.1e} (<= 1e-12)"),
    )
}

fn exact_admm_equivalence() -> Outcome {
    let mut lin_worst = 0.0f64;
    for (i, slope) in [vec![0.3, -1.2], vec![2.0, 0.5], vec![-0.1, 0.0]].into_iter().enumerate() {
        let lin = Linear::new(slope).unwrap();
        let c: ClientRecord = client(i, origin(1), origin(1), 0.2 + 0.3 * i as f64, 0.5 + i as f64);
        let (theta, y) = (v(&[0.2, -0.7]), v(&[0.4 - i as f64, 0.1]));
        let exact = exact_local_solve(&c, &theta, &y, &lin, 0.03, 1e-12, 100_000).unwrap();
        let closed = client_local_update_with(&c, &theta, &y, &lin, 0.03, HessianProduct::Exact).unwrap();
        lin_worst = lin_worst.max(exact.distance(&closed.theta_i));
    }
    let cfg = quadratic_reference();
    let augfl = execute(&cfg).unwrap();
    let mut admm_cfg = cfg.clone();
    admm_cfg.algo.algorithm = Algorithm::ExactAdmm;
    let admm = execute(&admm_cfg).unwrap();
    let (ga, gb) = (augfl.final_row().grad_f_norm, admm.final_row().grad_f_norm);
    let gap = augfl.theta_final.distance(&admm.theta_final);
    outcome(
        lin_worst <= 1e-10 && ga <= 1e-6 && gb <= 1e-6 && gap <= 1e-4,
        format!(
            "linear gap {lin_worst:.1e} (<= 1e-10); quadratic grad_F augfl {ga:.1e}, exact {gb:.1e} (<= 1e-6); theta gap {gap:.1e} (<= 1e-4)"
        ),
    )
}

fn running_min_non_increasing(trace: &[RoundMetrics]) -> (bool, f64) {
    let mut m = f64::INFINITY;
    let mut ok = true;
    for r in trace {
        let next = m.min(r.lagrangian);
        ok &= next <= m && next.is_finite();
        m = next;
    }
    (ok, m)
}

fn convergence() -> Outcome {
    let mut cfg = convex_reference();
    cfg.diagnostics.enabled = true;
    let r = execute(&cfg).unwrap();
    let last = r.final_row();
    let (mono, low) = running_min_non_increasing(&r.trace);
    let d = r.diagnostics.as_ref().unwrap();
    outcome(
        r.trace.len() == 2001 && last.grad_f_norm <= 1e-3 && mono && last.consensus_residual <= 1e-4,
        format!(
            "grad_F at T=2000 {:.2e} (<= 1e-3), consensus {:.2e} (<= 1e-4), Lagrangian running min non-increasing to {low:.4}; \
             descent increases {:.1e} vs budget {:.1e}, fosp slope {:?}",
            last.grad_f_norm,
            last.consensus_residual,
            d.lagrangian_descent.violations,
            d.lagrangian_descent.slack_budget,
            d.fosp_rate.slope.map(|s| (s * 100.0).round() / 100.0),
        ),
    )
}

fn heterogeneity() -> Outcome {
    let base = heterogeneous_reference();
    let mut accs = Vec::new();
    for alg in [Algorithm::Augfl, Algorithm::Perfedavg, Algorithm::Fedavg] {
        let mut c = base.clone();
        c.algo.algorithm = alg;
        accs.push(seed_mean(&c, final_acc));
    }
    let (a, p, f) = (accs[0], accs[1], accs[2]);
    outcome(
        a >= p && a >= f + 0.03,
        format!("seed-mean accuracy augfl {a:.4}, perfedavg {p:.4}, fedavg {f:.4} (augfl >= perfedavg, >= fedavg + 0.03)"),
    )
}

fn knowledge_transfer() -> Outcome {
    let base = transfer_reference();
    let reports = run_sweep(&base, SweepAxis::Lambda, &[0.0, 1.0, 5.0]).unwrap();
    let acc: Vec<f64> = reports.iter().map(final_acc).collect();
    let grad: Vec<f64> = reports.iter().map(|r| r.server_grad_norm).collect();
    let attained = reports[1].pretrained.as_ref().map(|p| p.grad_norm);
    outcome(
        acc[2] > acc[0] && grad[1] <= grad[0] && grad[2] <= grad[1],
        format!(
            "accuracy lambda=0/1/5 {:.4}/{:.4}/{:.4}; server-loss grad {:.3}/{:.3}/{:.3} (non-increasing); pretrain grad {:?}",
            acc[0], acc[1], acc[2], grad[0], grad[1], grad[2], attained
        ),
    )
}

fn first_round_below(trace: &[RoundMetrics], threshold: f64) -> Option<usize> {
    trace.iter().find(|r| r.f_value <= threshold).map(|r| r.round)
}

fn sweep_trends() -> Outcome {
    let base = heterogeneous_reference();
    let mean_over = |axis: SweepAxis, values: &[f64]| -> Vec<f64> {
        values
            .iter()
            .map(|&x| seed_mean(&axis.apply(&base, x).unwrap(), final_acc))
            .collect()
    };
    let by_m = mean_over(SweepAxis::MinSamples, &[5.0, 10.0, 20.0]);
    let by_n = mean_over(SweepAxis::NumClients, &[10.0, 40.0, 80.0]);

    let mut convex = convex_reference();
    convex.algo.rounds = 400;
    let threshold = 0.355;
    let rho = run_sweep(&convex, SweepAxis::Rho, &[0.5, 0.7, 1.0]).unwrap();
    let hits: Vec<Option<usize>> = rho.iter().map(|r| first_round_below(&r.trace, threshold)).collect();
    let rho_ok = hits.iter().all(|h| h.is_some()) && hits.windows(2).all(|w| w[0] <= w[1]);
    outcome(
        non_decreasing(&by_m) && non_decreasing(&by_n) && rho_ok,
        format!(
            "accuracy vs M {:.4}/{:.4}/{:.4}, vs clients {:.4}/{:.4}/{:.4}; rounds to F <= {threshold} for rho 0.5/0.7/1.0 {:?}",
            by_m[0], by_m[1], by_m[2], by_n[0], by_n[1], by_n[2], hits
        ),
    )
}

fn determinism() -> Outcome {
    let mut cfg = transfer_reference();
    cfg.algo.rounds = 100;
    cfg.algo.workers = 4;
    cfg.diagnostics.enabled = true;
    let emit = |c: &ExperimentConfig| {
        let dir = tempfile::tempdir().unwrap();
        let r = execute(c).unwrap();
        emit_metrics(&r, dir.path(), &[Format::Csv, Format::Json]).unwrap();
        (
            fs::read(dir.path().join(CSV_FILE)).unwrap(),
            fs::read(dir.path().join(JSON_FILE)).unwrap(),
        )
    };
    let a = emit(&cfg);
    let b = emit(&cfg);
    let mut serial = cfg.clone();
    serial.algo.workers = 1;
    let s = emit(&serial);
    let mut hetero = with_seed(heterogeneous_reference(), 1);
    hetero.algo.rounds = 50;
    hetero.algo.workers = 3;
    let h1 = emit(&hetero);
    let h2 = emit(&hetero);
    outcome(
        a == b && a.0 == s.0 && h1 == h2,
        format!(
            "parallel repeat csv+json identical {}, parallel vs serial csv identical {}, second fixture identical {}",
            a == b,
            a.0 == s.0,
            h1 == h2
        ),
    )
}

#[test]
fn acceptance_criteria() {
    let criteria: [Criterion; 9] = [
        ("1 algebraic identities", Duration::from_secs(10), identities),
        ("2 oracle gradients", Duration::from_secs(5), oracle_gradients),
        ("3 estimator bound", Duration::from_secs(1), estimator_bound),
        ("4 exact-admm equivalence", Duration::from_secs(30), exact_admm_equivalence),
        ("5 convergence", Duration::from_secs(60), convergence),
        ("6 heterogeneity benefit", Duration::from_secs(600), heterogeneity),
        ("7 knowledge transfer", Duration::from_secs(600), knowledge_transfer),
        ("8 sweep trends", Duration::from_secs(900), sweep_trends),
        ("9 determinism", Duration::from_secs(60), determinism),
    ];
    let mut failed = Vec::new();
    for (name, budget, check) in criteria {
        let start = Instant::now();
        let o = check();
        let took = start.elapsed();
        let in_budget = took <= budget;
        let ok = o.passed && in_budget;
        println!(
            "{} criterion {name}: {} [{:.2}s of {}s]",
            if ok { "PASS" } else { "FAIL" },
            o.detail,
            took.as_secs_f64(),
            budget.as_secs()
        );
        if !ok {
            failed.push(name);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
