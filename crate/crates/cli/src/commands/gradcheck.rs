use std::fmt::Write;

use nanode::config::RunConfig;
use nanode::dynamics::{DynamicsFn, VectorField};
use nanode::grad::{grad_adjoint, grad_discrete, grad_fd, relative_error, FD_STEP};
use nanode::linalg::{dot, Matrix};
use nanode::model::{NanodeModel, Targets};
use nanode::odeint::{Method, SolveSpec};
use nanode::train_tasks::{init_model, train_test_split};
use nanode::grad::GradMethod;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::io::{load_config, output_dir, write_text};
use crate::{CliError, CliResult, Common};

pub const DISCRETE_FD_TOL: f64 = 1e-6;
pub const ADJOINT_TOL: f64 = 1e-3;
pub const JACOBIAN_TOL: f64 = 1e-6;
/// Solver resolution for the adjoint comparison, raised to the next grid
/// aligned with any bucketed field.
pub const ADJOINT_STEPS: usize = 100;
const PROBES: usize = 3;
const MODEL_BATCH: usize = 4;
const ERROR_FLOOR: f64 = 1e-8;

pub const GRADCHECK_CSV_HEADER: &str = "check,max_rel_err,tolerance,pass";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckRow {
    pub check: &'static str,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl CheckRow {
    fn new(check: &'static str, max_rel_err: f64, tolerance: f64) -> Self {
        Self {
            check,
            max_rel_err,
            tolerance,
            pass: max_rel_err <= tolerance,
        }
    }
}

pub fn csv(rows: &[CheckRow]) -> String {
    let mut s = format!("{GRADCHECK_CSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.check, r.max_rel_err, r.tolerance, r.pass);
    }
    s
}

fn adjoint_spec(f: &DynamicsFn, t1: f64) -> CliResult<SolveSpec> {
    let steps = (ADJOINT_STEPS..ADJOINT_STEPS * 64)
        .find(|&l| f.aligned_with_grid(0.0, t1, l))
        .ok_or_else(|| CliError::Config("no solver grid aligns with the bucketed field".into()))?;
    Ok(SolveSpec::new(Method::Rk4, 0.0, t1, steps)?)
}

fn central_jacobians(f: &DynamicsFn, x: &[f64], t: f64, theta: &[f64]) -> CliResult<(Matrix, Matrix)> {
    let n = x.len();
    let mut jx = Matrix::zeros(n, n);
    let mut xp = x.to_vec();
    for j in 0..n {
        let h = FD_STEP * x[j].abs().max(1.0);
        xp[j] = x[j] + h;
        let up = f.eval(&xp, t, theta)?;
        xp[j] = x[j] - h;
        let down = f.eval(&xp, t, theta)?;
        xp[j] = x[j];
        for i in 0..n {
            jx[(i, j)] = (up[i] - down[i]) / (2.0 * h);
        }
    }
    let mut jt = Matrix::zeros(n, theta.len());
    let mut tp = theta.to_vec();
    for j in 0..theta.len() {
        let h = FD_STEP * theta[j].abs().max(1.0);
        tp[j] = theta[j] + h;
        let up = f.eval(x, t, &tp)?;
        tp[j] = theta[j] - h;
        let down = f.eval(x, t, &tp)?;
        tp[j] = theta[j];
        for i in 0..n {
            jt[(i, j)] = (up[i] - down[i]) / (2.0 * h);
        }
    }
    Ok((jx, jt))
}

fn model_check(cfg: &RunConfig, model: &NanodeModel, theta: &[f64]) -> CliResult<f64> {
    let t = &cfg.task;
    let (train, _) = train_test_split(t.name, cfg.train.seed, MODEL_BATCH.max(2), 2, t.noise)?;
    let idx: Vec<usize> = (0..MODEL_BATCH.min(train.len())).collect();
    let inputs = nanode::model::select_rows(&train.inputs, &idx);
    let targets: Targets = train.targets.select(&idx);
    let loss = cfg.loss_spec();
    let exact = model.loss_and_grad(theta, &inputs, &targets, &loss, GradMethod::Discrete)?;
    let value = |th: &[f64]| -> CliResult<f64> {
        Ok(model.loss_and_grad(th, &inputs, &targets, &loss, GradMethod::Discrete)?.loss)
    };
    let mut probe = theta.to_vec();
    let mut fd = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let h = FD_STEP * theta[i].abs().max(1.0);
        probe[i] = theta[i] + h;
        let up = value(&probe)?;
        probe[i] = theta[i] - h;
        let down = value(&probe)?;
        probe[i] = theta[i];
        fd.push((up - down) / (2.0 * h));
    }
    Ok(relative_error(&exact.grad, &fd, ERROR_FLOOR))
}

/// All checks for the configured model at its initialization.
pub fn checks(cfg: &RunConfig, corrupt_jac_theta: bool) -> CliResult<Vec<CheckRow>> {
    let (model, theta) = init_model(cfg)?;
    let f = model.flow();
    let ftheta = model.flow_view().slice(&theta);
    let spec = *model.solve();
    let adj_spec = adjoint_spec(f, spec.t1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    rng.set_stream(5);
    let n = f.dim();

    let (mut disc_fd, mut adj_disc, mut jx_err, mut jt_err) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..PROBES {
        let x0: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let t = rng.random_range(spec.t0..spec.t1);

        let exact = grad_discrete(f, &x0, ftheta, &spec, &c)?;
        let fd = grad_fd(f, &x0, ftheta, &spec, |x| dot(&c, x))?;
        disc_fd = disc_fd
            .max(relative_error(&exact.d_theta, &fd.d_theta, ERROR_FLOOR))
            .max(relative_error(&exact.d_x0, &fd.d_x0, ERROR_FLOOR));

        let fine = grad_discrete(f, &x0, ftheta, &adj_spec, &c)?;
        let adj = grad_adjoint(f, &x0, ftheta, &adj_spec, &c)?;
        adj_disc = adj_disc
            .max(relative_error(&adj.d_theta, &fine.d_theta, ERROR_FLOOR))
            .max(relative_error(&adj.d_x0, &fine.d_x0, ERROR_FLOOR));

        let jx = f.jac_x(&x0, t, ftheta)?;
        let mut jt = f.jac_theta(&x0, t, ftheta)?;
        if corrupt_jac_theta && jt.cols() > 0 {
            jt[(0, 0)] += 1.0;
        }
        let (jx_fd, jt_fd) = central_jacobians(f, &x0, t, ftheta)?;
        jx_err = jx_err.max(relative_error(jx.as_slice(), jx_fd.as_slice(), ERROR_FLOOR));
        jt_err = jt_err.max(relative_error(jt.as_slice(), jt_fd.as_slice(), ERROR_FLOOR));
    }
    Ok(vec![
        CheckRow::new("discrete_vs_fd", disc_fd, DISCRETE_FD_TOL),
        CheckRow::new("model_discrete_vs_fd", model_check(cfg, &model, &theta)?, DISCRETE_FD_TOL),
        CheckRow::new("adjoint_vs_discrete", adj_disc, ADJOINT_TOL),
        CheckRow::new("jac_x_vs_fd", jx_err, JACOBIAN_TOL),
        CheckRow::new("jac_theta_vs_fd", jt_err, JACOBIAN_TOL),
    ])
}

/// Writes `gradcheck.csv`; fails with the worst offender named when any
/// check exceeds its tolerance.
pub fn run(common: &Common, corrupt_jac_theta: bool) -> CliResult<String> {
    let cfg = load_config(common)?;
    let dir = output_dir(common, &cfg)?;
    let rows = checks(&cfg, corrupt_jac_theta)?;
    write_text(&dir, "gradcheck.csv", &csv(&rows))?;
    let mut report = String::from("check                 max_rel_err   tolerance  result\n");
    for r in &rows {
        let _ = writeln!(
            report,
            "{:<21} {:<13.3e} {:<10.0e} {}",
            r.check,
            r.max_rel_err,
            r.tolerance,
            if r.pass { "ok" } else { "FAIL" }
        );
    }
    let worst = rows
        .iter()
        .filter(|r| !r.pass)
        .max_by(|a, b| (a.max_rel_err / a.tolerance).total_cmp(&(b.max_rel_err / b.tolerance)));
    match worst {
        Some(w) => {
            eprint!("{report}");
            Err(CliError::Check(format!(
                "{} relative error {:e} exceeds {:e}",
                w.check, w.max_rel_err, w.tolerance
            )))
        }
        None => Ok(report),
    }
}
