//! Gradients of a terminal loss through a fixed-step solve.

use serde::{Deserialize, Serialize};

use crate::dynamics::VectorField;
use crate::error::{check_dim, Error, Result};
use crate::linalg::axpy;
use crate::odeint::{as_divergence, check_state, integrate, step_with, FrameCache, Method, SolveSpec, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradMethod {
    Discrete,
    Adjoint,
    FiniteDiff,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradResult {
    pub d_theta: Vec<f64>,
    pub d_x0: Vec<f64>,
    pub method: GradMethod,
    /// State vectors held simultaneously to produce the gradient.
    pub activation_memory_units: usize,
}

/// Central-difference step, scaled by `max(1, |θ_i|)`.
pub const FD_STEP: f64 = 1e-6;

/// Memory units of the adjoint: the `x`, `a` and `g` parts of the
/// augmented state.
pub const ADJOINT_MEMORY_UNITS: usize = 3;

/// Reverse-mode differentiation of the unrolled solver.
pub fn grad_discrete<F: VectorField + ?Sized>(
    f: &F,
    x0: &[f64],
    theta: &[f64],
    spec: &SolveSpec,
    loss_grad: &[f64],
) -> Result<GradResult> {
    let mut spec = *spec;
    spec.store_all = true;
    let traj = integrate(f, x0, theta, &spec)?;
    grad_discrete_from(f, &traj, theta, &spec, loss_grad)
}

/// [`grad_discrete`] reusing a forward trajectory stored with `store_all`.
pub fn grad_discrete_from<F: VectorField + ?Sized>(
    f: &F,
    traj: &Trajectory,
    theta: &[f64],
    spec: &SolveSpec,
    loss_grad: &[f64],
) -> Result<GradResult> {
    check_dim("grad_discrete", f.dim(), loss_grad.len())?;
    if traj.states.len() != spec.steps + 1 {
        return Err(Error::Contract("discrete gradient needs every grid state stored".into()));
    }
    let h = spec.h();
    let mut cache = FrameCache::new(f, theta);
    let mut a = loss_grad.to_vec();
    let mut g = vec![0.0; f.num_params()];
    for k in (0..spec.steps).rev() {
        let t = spec.time(k);
        let x = &traj.states[k];
        let res = match spec.method {
            Method::Euler => {
                let frame = cache.frame(t)?;
                let scaled: Vec<f64> = a.iter().map(|v| h * v).collect();
                f.apply_vjp(frame, x, &scaled, &mut g).map(|gx| {
                    axpy(1.0, &gx, &mut a);
                })
            }
            Method::Rk4 => rk4_step_vjp(f, &mut cache, t, h, x, &mut a, &mut g),
        };
        res.map_err(|e| as_divergence(e, k, t))?;
    }
    Ok(GradResult {
        d_theta: g,
        d_x0: a,
        method: GradMethod::Discrete,
        activation_memory_units: spec.steps + 1,
    })
}

/// Pulls `a` back through one RK4 step taken from `x` at `t`.
fn rk4_step_vjp<F: VectorField + ?Sized>(
    f: &F,
    cache: &mut FrameCache<'_, F>,
    t: f64,
    h: f64,
    x: &[f64],
    a: &mut [f64],
    g: &mut [f64],
) -> Result<()> {
    let tm = t + 0.5 * h;
    let te = t + h;
    let k1 = cache.eval(t, x)?;
    let mut y2 = x.to_vec();
    axpy(0.5 * h, &k1, &mut y2);
    let k2 = cache.eval(tm, &y2)?;
    let mut y3 = x.to_vec();
    axpy(0.5 * h, &k2, &mut y3);
    let k3 = cache.eval(tm, &y3)?;
    let mut y4 = x.to_vec();
    axpy(h, &k3, &mut y4);

    let abar = a.to_vec();
    let k4bar: Vec<f64> = abar.iter().map(|v| v * h / 6.0).collect();
    let mut k3bar: Vec<f64> = abar.iter().map(|v| v * h / 3.0).collect();
    let mut k2bar = k3bar.clone();
    let mut k1bar = k4bar.clone();

    let y4bar = f.apply_vjp(cache.frame(te)?, &y4, &k4bar, g)?;
    axpy(1.0, &y4bar, a);
    axpy(h, &y4bar, &mut k3bar);
    let y3bar = f.apply_vjp(cache.frame(tm)?, &y3, &k3bar, g)?;
    axpy(1.0, &y3bar, a);
    axpy(0.5 * h, &y3bar, &mut k2bar);
    let y2bar = f.apply_vjp(cache.frame(tm)?, &y2, &k2bar, g)?;
    axpy(1.0, &y2bar, a);
    axpy(0.5 * h, &y2bar, &mut k1bar);
    let y1bar = f.apply_vjp(cache.frame(t)?, x, &k1bar, g)?;
    axpy(1.0, &y1bar, a);
    Ok(())
}

/// Continuous adjoint: integrates `[x; a; g]` backward from `t1` with
/// `ȧ = −(∂f/∂x)ᵀa`, `ġ = −(∂f/∂θ)ᵀa`, re-integrating `x` instead of
/// storing the forward trajectory.
pub fn grad_adjoint<F: VectorField + ?Sized>(
    f: &F,
    x0: &[f64],
    theta: &[f64],
    spec: &SolveSpec,
    loss_grad: &[f64],
) -> Result<GradResult> {
    let fwd = integrate(f, x0, theta, &spec.terminal_only())?;
    grad_adjoint_from(f, &fwd.terminal, theta, spec, loss_grad)
}

/// [`grad_adjoint`] from a known terminal state.
pub fn grad_adjoint_from<F: VectorField + ?Sized>(
    f: &F,
    terminal: &[f64],
    theta: &[f64],
    spec: &SolveSpec,
    loss_grad: &[f64],
) -> Result<GradResult> {
    spec.validate()?;
    let n = f.dim();
    let p = f.num_params();
    check_dim("grad_adjoint", n, terminal.len())?;
    check_dim("grad_adjoint", n, loss_grad.len())?;
    check_dim("grad_adjoint theta", p, theta.len())?;
    if !f.aligned_with_grid(spec.t0, spec.t1, spec.steps) {
        return Err(Error::Contract(
            "adjoint through a bucketed field needs the step count to be a multiple of the bucket count".into(),
        ));
    }
    let h = spec.h();
    let mut cache = FrameCache::new(f, theta);
    let mut y = Vec::with_capacity(2 * n + p);
    y.extend_from_slice(terminal);
    y.extend_from_slice(loss_grad);
    y.extend(std::iter::repeat_n(0.0, p));
    let mut rhs = |t: f64, y: &[f64]| -> Result<Vec<f64>> {
        let (x, rest) = y.split_at(n);
        let a = &rest[..n];
        let frame = cache.frame(t)?;
        let fx = f.apply(frame, x)?;
        let mut gt = vec![0.0; p];
        let gx = f.apply_vjp(frame, x, a, &mut gt)?;
        let mut out = fx;
        out.extend(gx.iter().map(|v| -v));
        out.extend(gt.iter().map(|v| -v));
        Ok(out)
    };
    for k in (0..spec.steps).rev() {
        let t = spec.time(k + 1);
        y = step_with(spec.method, t, -h, &y, &mut rhs).map_err(|e| as_divergence(e, k, t))?;
        check_state(&y[..2 * n], n.max(1), k, spec.time(k))?;
        if y[2 * n..].iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: k, t: spec.time(k) });
        }
    }
    Ok(GradResult {
        d_theta: y[2 * n..].to_vec(),
        d_x0: y[n..2 * n].to_vec(),
        method: GradMethod::Adjoint,
        activation_memory_units: ADJOINT_MEMORY_UNITS,
    })
}

/// Central finite differences of `loss(x(t1))` in `θ` and `x0`.
pub fn grad_fd<F: VectorField + ?Sized>(
    f: &F,
    x0: &[f64],
    theta: &[f64],
    spec: &SolveSpec,
    loss: impl Fn(&[f64]) -> f64,
) -> Result<GradResult> {
    let spec = spec.terminal_only();
    let eval = |x: &[f64], th: &[f64]| -> Result<f64> { Ok(loss(&integrate(f, x, th, &spec)?.terminal)) };
    let mut probe = theta.to_vec();
    let mut d_theta = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let step = FD_STEP * theta[i].abs().max(1.0);
        probe[i] = theta[i] + step;
        let up = eval(x0, &probe)?;
        probe[i] = theta[i] - step;
        let down = eval(x0, &probe)?;
        probe[i] = theta[i];
        d_theta.push((up - down) / (2.0 * step));
    }
    let mut xp = x0.to_vec();
    let mut d_x0 = Vec::with_capacity(x0.len());
    for i in 0..x0.len() {
        let step = FD_STEP * x0[i].abs().max(1.0);
        xp[i] = x0[i] + step;
        let up = eval(&xp, theta)?;
        xp[i] = x0[i] - step;
        let down = eval(&xp, theta)?;
        xp[i] = x0[i];
        d_x0.push((up - down) / (2.0 * step));
    }
    Ok(GradResult {
        d_theta,
        d_x0,
        method: GradMethod::FiniteDiff,
        activation_memory_units: 1,
    })
}

/// Norm-wise relative difference `‖a − b‖_∞ / max(‖b‖_∞, floor)`.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let scale = b.iter().fold(0.0f64, |m, y| m.max(y.abs())).max(floor);
    diff / scale
}
