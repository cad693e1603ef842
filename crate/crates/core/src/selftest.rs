//! Built-in suite of small worked examples, run by `augfl selftest`.

use crate::data::{Dataset, Sample};
use crate::diagnostics::{
    augmented_lagrangian, check_hvp_bound_along, fosp_norm, meta_smoothness, objective_f, rho_margins,
};
use crate::engine::{
    adapt_and_eval, client_dual_update, client_inner_step, client_local_update, client_local_update_with,
    exact_local_solve, server_aggregate, FederationState,
};
use crate::models::fixtures::{Linear, Quartic};
use crate::models::{fd_grad, hvp_estimate, HessianProduct, LossFn, Quadratic};
use crate::regularizers::{crd_critic, reg_value_grad, Regularizer};
use crate::tasks::{split_support_query, ClientRecord, DeltaSchedule};
use crate::vector::ParamVector;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: Option<String>,
}

impl CheckResult {
    pub fn detail_suffix(&self) -> String {
        self.detail.as_ref().map(|d| format!(": {d}")).unwrap_or_default()
    }
}

type Outcome = std::result::Result<(), String>;

fn close(name: &str, got: f64, want: f64, tol: f64) -> Outcome {
    if (got - want).abs() <= tol {
        Ok(())
    } else {
        Err(format!("{name} = {got}, expected {want} (tol {tol})"))
    }
}

fn v(x: &[f64]) -> ParamVector {
    ParamVector::from_vec(x.to_vec())
}

fn origin(n: usize) -> Dataset {
    Dataset::from_inputs(vec![vec![0.0; n]]).expect("non-empty")
}

fn scalar_client(w: f64, rho: f64) -> ClientRecord {
    ClientRecord {
        id: 0,
        support: origin(1),
        query: origin(1),
        weight: w,
        rho,
    }
}

/// `½(θ − 1)²` on the origin dataset.
fn unit_quadratic() -> Quadratic {
    Quadratic::new(vec![1.0], vec![1.0]).expect("valid")
}

fn e<T: std::fmt::Display>(err: T) -> String {
    err.to_string()
}

fn inner_step() -> Outcome {
    let c = scalar_client(1.0, 0.7);
    let phi = client_inner_step(&c, &v(&[0.0]), &unit_quadratic(), 0.03).map_err(e)?;
    close("phi", phi[0], 0.03, 1e-15)
}

fn local_update_unit_push() -> Outcome {
    // query gradient −1 at φ with α = 0
    let c = scalar_client(1.0, 1.0);
    let up = client_local_update(&c, &v(&[0.0]), &v(&[0.0]), &unit_quadratic(), 0.0, 0.01).map_err(e)?;
    close("theta_i", up.theta_i[0], 1.0, 1e-15)
}

fn local_update_dual_shift() -> Outcome {
    let c = scalar_client(1.0, 0.7);
    // θ = 1 is stationary, so only the dual moves θ_i
    let up = client_local_update(&c, &v(&[1.0]), &v(&[0.7]), &unit_quadratic(), 0.03, 0.01).map_err(e)?;
    close("theta_i", up.theta_i[0], 0.0, 1e-12)
}

fn dual_update() -> Outcome {
    let c = scalar_client(1.0, 0.7);
    let y = client_dual_update(&c, &v(&[1.0]), &v(&[0.0]), &v(&[0.0])).map_err(e)?;
    close("y", y[0], 0.7, 1e-15)
}

fn dual_identity() -> Outcome {
    let c = scalar_client(0.4, 0.7);
    let (theta, y_prev) = (v(&[0.3]), v(&[0.2]));
    let up = client_local_update(&c, &theta, &y_prev, &unit_quadratic(), 0.03, 0.01).map_err(e)?;
    let y = client_dual_update(&c, &up.theta_i, &theta, &y_prev).map_err(e)?;
    close("y + w(r - αg)", y[0] + 0.4 * up.terms.surrogate_gradient(0.03)[0], 0.0, 1e-12)
}

fn aggregate_single_client() -> Outcome {
    let clients = [scalar_client(1.0, 1.0)];
    let data = origin(1);
    let mut st = FederationState::new(v(&[1.0]), &clients, &data, Regularizer::SqDist, v(&[1.0]), 0.5, 0.03);
    st.locals[0].theta = v(&[0.0]);
    let (_, g) = st.reg_grad(&unit_quadratic(), 0).map_err(e)?;
    let next = server_aggregate(&st, &g).map_err(e)?;
    close("theta_next", next[0], 0.0, 1e-15)
}

fn exact_solve_half() -> Outcome {
    let c = scalar_client(1.0, 1.0);
    let x = exact_local_solve(&c, &v(&[0.0]), &v(&[0.0]), &unit_quadratic(), 0.0, 1e-12, 10_000).map_err(e)?;
    close("theta_i", x[0], 0.5, 1e-10)
}

fn exact_solve_linear_matches_closed_form() -> Outcome {
    let m = Linear::new(vec![0.5, -1.5]).map_err(e)?;
    let mut c = scalar_client(0.3, 2.0);
    c.support = origin(2);
    c.query = origin(2);
    let (theta, y) = (v(&[0.2, 0.1]), v(&[0.4, -0.3]));
    let up = client_local_update_with(&c, &theta, &y, &m, 0.03, HessianProduct::Exact).map_err(e)?;
    let x = exact_local_solve(&c, &theta, &y, &m, 0.03, 1e-12, 10_000).map_err(e)?;
    close("distance", up.theta_i.distance(&x), 0.0, 1e-10)
}

fn quartic_estimator() -> Outcome {
    let m = Quartic::new(1);
    let d = origin(1);
    let g = hvp_estimate(&m, &v(&[1.0]), &v(&[2.0]), 0.1, &d).map_err(e)?;
    close("estimate", g[0], 6.08, 1e-12)?;
    let chk = check_hvp_bound_along(&m, &v(&[1.0]), &v(&[2.0]), 0.1, &d, 12.0, 8.0).map_err(e)?;
    close("observed", chk.observed_error, 0.08, 1e-12)?;
    if chk.ok {
        Ok(())
    } else {
        Err("quartic bound violated".into())
    }
}

fn fd_gradient() -> Outcome {
    let g = fd_grad(&unit_quadratic(), &v(&[0.0]), &origin(1), 1e-5).map_err(e)?;
    close("fd grad", g[0], -1.0, 1e-9)
}

fn sq_dist_values() -> Outcome {
    let (val, g) = reg_value_grad(&Regularizer::SqDist, &Quartic::new(2), &v(&[1.0, -2.0]), &v(&[0.0, 0.0]), &origin(1), 0)
        .map_err(e)?;
    close("R", val, 5.0, 0.0)?;
    close("grad", g[0] - 2.0 + g[1] + 4.0, 0.0, 0.0)
}

fn critic_midpoint() -> Outcome {
    // N = D_s makes the critic 1/2 at orthogonal representations
    let h = crd_critic(&[1.0, 0.0], &[0.0, 1.0], 0.5, 4, 4).map_err(e)?;
    close("h", h, 0.5, 1e-15)
}

fn objective_weighted() -> Outcome {
    // losses 1 and 3 with weights 0.25 and 0.75 at α = 0
    let q = Quadratic::new(vec![1.0], vec![0.0]).map_err(e)?;
    let mut a = scalar_client(0.25, 1.0);
    let mut b = scalar_client(0.75, 1.0);
    a.query = Dataset::from_inputs(vec![vec![2f64.sqrt()]]).map_err(e)?;
    b.query = Dataset::from_inputs(vec![vec![6f64.sqrt()]]).map_err(e)?;
    b.id = 1;
    let clients = [a, b];
    let data = origin(1);
    let st = FederationState::new(v(&[0.0]), &clients, &data, Regularizer::None, v(&[0.0]), 0.0, 0.0);
    close("F", objective_f(&st, &q).map_err(e)?, 2.5, 1e-12)
}

fn fosp_unit() -> Outcome {
    let clients = [scalar_client(1.0, 1.0)];
    let data = origin(1);
    let st = FederationState::new(v(&[0.0]), &clients, &data, Regularizer::None, v(&[0.0]), 0.0, 0.0);
    close("grad F", fosp_norm(&st, &unit_quadratic()).map_err(e)?, 1.0, 1e-12)
}

fn lagrangian_scalar() -> Outcome {
    // θ_i = 1 is the minimizer, so w F_i(θ_i) = 0
    let clients = [scalar_client(1.0, 1.0)];
    let data = origin(1);
    let mut st = FederationState::new(v(&[0.0]), &clients, &data, Regularizer::None, v(&[0.0]), 0.0, 0.0);
    st.locals[0].theta = v(&[1.0]);
    st.locals[0].dual = v(&[2.0]);
    close("L", augmented_lagrangian(&st, &unit_quadratic()).map_err(e)?, 2.5, 1e-12)
}

fn smoothness_examples() -> Outcome {
    close("nu", meta_smoothness(0.0, 1.0, 0.0, 1.0), 2.0, 0.0)?;
    close("nu", meta_smoothness(0.03, 1.0, 0.0, 5.0), 2.06, 1e-12)
}

fn rho_examples() -> Outcome {
    let f = rho_margins(0, 10.0, 1.0, 1.0, 0.0, 2.0, 1);
    if f.eq17_margin <= 0.0 {
        return Err(format!("eq17 margin {} at rho = 10", f.eq17_margin));
    }
    let g = rho_margins(0, 0.7, 1.0, 2.06, 0.0, 2.0, 1);
    close("eq19 margin", g.eq19_margin, 0.7 - 6.18, 1e-12)
}

fn delta_schedule() -> Outcome {
    let d = DeltaSchedule::default();
    close("delta_0", d.at(0), 0.01, 0.0)?;
    close("delta_1", d.at(1), 1.0 / 110.0, 0.0)
}

fn split_rule() -> Outcome {
    let data = Dataset::new((0..5).map(|i| Sample::new(vec![i as f64], 0.0)).collect()).map_err(e)?;
    let (s, q) = split_support_query(&data, 7).map_err(e)?;
    if (s.len(), q.len()) == (2, 3) {
        Ok(())
    } else {
        Err(format!("split sizes {} / {}", s.len(), q.len()))
    }
}

fn adaptation_descends() -> Outcome {
    let c = scalar_client(1.0, 1.0);
    let a = adapt_and_eval(&v(&[0.0]), &c, &unit_quadratic(), 0.5, 1).map_err(e)?;
    if a.post_loss < a.pre_loss && a.post_accuracy.is_none() {
        Ok(())
    } else {
        Err(format!("pre {} post {}", a.pre_loss, a.post_loss))
    }
}

fn estimator_exact_on_quadratic() -> Outcome {
    let q = Quadratic::diagonal(&[1.0, 3.0], vec![0.5, -0.5]).map_err(e)?;
    let d = origin(2);
    for delta in [1e-1, 1e-2, 1e-3] {
        let chk = check_hvp_bound_along(&q, &v(&[0.3, 0.2]), &v(&[1.0, -2.0]), delta, &d, 0.0, 1.0).map_err(e)?;
        if !chk.ok {
            return Err(format!("error {} at delta {delta}", chk.observed_error));
        }
    }
    let _ = q.dim();
    Ok(())
}

type Check = (&'static str, fn() -> Outcome);

const CHECKS: &[Check] = &[
    ("inner step on scalar quadratic", inner_step),
    ("local update pushed by query gradient", local_update_unit_push),
    ("local update shifted by dual", local_update_dual_shift),
    ("dual update", dual_update),
    ("dual identity after one round", dual_identity),
    ("aggregation with regularizer at the pretrained point", aggregate_single_client),
    ("exact local solve on scalar quadratic", exact_solve_half),
    ("exact solve equals closed form for linear loss", exact_solve_linear_matches_closed_form),
    ("quartic estimator error and bound", quartic_estimator),
    ("estimator exact on quadratic", estimator_exact_on_quadratic),
    ("finite-difference gradient", fd_gradient),
    ("squared-distance regularizer", sq_dist_values),
    ("contrastive critic midpoint", critic_midpoint),
    ("weighted objective", objective_weighted),
    ("stationarity norm", fosp_unit),
    ("augmented Lagrangian", lagrangian_scalar),
    ("meta-smoothness constant", smoothness_examples),
    ("penalty feasibility margins", rho_examples),
    ("delta schedule", delta_schedule),
    ("support/query split sizes", split_rule),
    ("adaptation lowers query loss", adaptation_descends),
];

pub fn run_all() -> Vec<CheckResult> {
    CHECKS
        .iter()
        .map(|(name, f)| {
            let r = f();
            CheckResult {
                name,
                passed: r.is_ok(),
                detail: r.err(),
            }
        })
        .collect()
}
