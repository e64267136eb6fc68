//! Fixed-step explicit integrators on a uniform grid.

use serde::{Deserialize, Serialize};

use crate::dynamics::VectorField;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{axpy, norm2};

/// Any block of the state with a larger norm aborts the solve.
pub const DIVERGENCE_NORM: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Euler,
    Rk4,
}

impl Method {
    pub fn stages(self) -> usize {
        match self {
            Method::Euler => 1,
            Method::Rk4 => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveSpec {
    pub method: Method,
    pub t0: f64,
    pub t1: f64,
    pub steps: usize,
    pub store_all: bool,
}

impl SolveSpec {
    pub fn new(method: Method, t0: f64, t1: f64, steps: usize) -> Result<Self> {
        let spec = Self {
            method,
            t0,
            t1,
            steps,
            store_all: true,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn terminal_only(mut self) -> Self {
        self.store_all = false;
        self
    }

    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps = steps;
        self
    }

    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.h();
        if self.steps == 0 || !(self.t1 > self.t0) || !h.is_finite() || h <= 0.0 {
            return Err(Error::Contract(format!(
                "solve needs t1 > t0 and steps >= 1 (t0 = {}, t1 = {}, steps = {})",
                self.t0, self.t1, self.steps
            )));
        }
        Ok(())
    }

    pub fn h(&self) -> f64 {
        (self.t1 - self.t0) / self.steps as f64
    }

    /// Grid time `t_k`; the last point is `t1` exactly.
    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps {
            self.t1
        } else {
            self.t0 + k as f64 * self.h()
        }
    }

    pub fn grid(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.time(k)).collect()
    }

    pub fn eval_count(&self) -> usize {
        self.steps * self.method.stages()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: Vec<f64>,
    /// Every grid state when `store_all`, otherwise only the initial and
    /// terminal states.
    pub states: Vec<Vec<f64>>,
    pub terminal: Vec<f64>,
    pub eval_count: usize,
}

/// One explicit step of `ẏ = rhs(t, y)` from `t` with (possibly negative)
/// step `h`.
pub fn step_with(
    method: Method,
    t: f64,
    h: f64,
    y: &[f64],
    mut rhs: impl FnMut(f64, &[f64]) -> Result<Vec<f64>>,
) -> Result<Vec<f64>> {
    let mut out = y.to_vec();
    match method {
        Method::Euler => {
            let k1 = rhs(t, y)?;
            axpy(h, &k1, &mut out);
        }
        Method::Rk4 => {
            let k1 = rhs(t, y)?;
            let mut tmp = y.to_vec();
            axpy(0.5 * h, &k1, &mut tmp);
            let k2 = rhs(t + 0.5 * h, &tmp)?;
            tmp.copy_from_slice(y);
            axpy(0.5 * h, &k2, &mut tmp);
            let k3 = rhs(t + 0.5 * h, &tmp)?;
            tmp.copy_from_slice(y);
            axpy(h, &k3, &mut tmp);
            let k4 = rhs(t + h, &tmp)?;
            for i in 0..out.len() {
                out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
    }
    Ok(out)
}

/// Rejects non-finite or oversized blocks, naming the block when the state
/// holds more than one.
pub(crate) fn check_state(y: &[f64], block: usize, step: usize, t: f64) -> Result<()> {
    let block = block.max(1);
    let blocks = y.len().div_ceil(block);
    for (index, chunk) in y.chunks(block).enumerate() {
        let n = norm2(chunk);
        if !n.is_finite() || n > DIVERGENCE_NORM {
            let err = Error::Divergence { step, t };
            return Err(if blocks > 1 {
                Error::ExampleDivergence {
                    index,
                    source: Box::new(err),
                }
            } else {
                err
            });
        }
    }
    Ok(())
}

/// Turns overflow inside `f` during step `step` into a divergence error.
pub(crate) fn as_divergence(err: Error, step: usize, t: f64) -> Error {
    match err {
        Error::NumericOverflow { .. } => Error::Divergence { step, t },
        Error::ExampleDivergence { index, source } => Error::ExampleDivergence {
            index,
            source: Box::new(as_divergence(*source, step, t)),
        },
        other => other,
    }
}

/// Evaluates `f` with a one-entry frame cache keyed on the exact time.
pub(crate) struct FrameCache<'a, F: VectorField + ?Sized> {
    f: &'a F,
    theta: &'a [f64],
    cached: Option<(f64, F::Frame)>,
}

impl<'a, F: VectorField + ?Sized> FrameCache<'a, F> {
    pub(crate) fn new(f: &'a F, theta: &'a [f64]) -> Self {
        Self { f, theta, cached: None }
    }

    pub(crate) fn frame(&mut self, t: f64) -> Result<&F::Frame> {
        let hit = matches!(&self.cached, Some((ct, _)) if ct.to_bits() == t.to_bits());
        if !hit {
            self.cached = Some((t, self.f.frame(t, self.theta)?));
        }
        Ok(&self.cached.as_ref().expect("filled above").1)
    }

    pub(crate) fn eval(&mut self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let f = self.f;
        let frame = self.frame(t)?;
        f.apply(frame, x)
    }
}

/// Integrates `ẋ = f(x, t, θ)` from `spec.t0` to `spec.t1`.
pub fn integrate<F: VectorField + ?Sized>(f: &F, x0: &[f64], theta: &[f64], spec: &SolveSpec) -> Result<Trajectory> {
    spec.validate()?;
    check_dim("integrate", f.dim(), x0.len())?;
    check_dim("integrate theta", f.num_params(), theta.len())?;
    check_state(x0, f.block_dim(), 0, spec.t0)?;
    let h = spec.h();
    let mut cache = FrameCache::new(f, theta);
    let mut states = vec![x0.to_vec()];
    let mut x = x0.to_vec();
    for k in 0..spec.steps {
        let t = spec.time(k);
        x = step_with(spec.method, t, h, &x, |s, y| cache.eval(s, y)).map_err(|e| as_divergence(e, k, t))?;
        check_state(&x, f.block_dim(), k + 1, spec.time(k + 1))?;
        if spec.store_all {
            states.push(x.clone());
        }
    }
    if !spec.store_all {
        states.push(x.clone());
    }
    Ok(Trajectory {
        grid: spec.grid(),
        states,
        terminal: x,
        eval_count: spec.eval_count(),
    })
}

/// Integrates from `spec.t1` back to `spec.t0` with step `−h`; the
/// returned grid runs backward in time.
pub fn integrate_backward<F: VectorField + ?Sized>(
    f: &F,
    x1: &[f64],
    theta: &[f64],
    spec: &SolveSpec,
) -> Result<Trajectory> {
    spec.validate()?;
    check_dim("integrate_backward", f.dim(), x1.len())?;
    let h = spec.h();
    let mut cache = FrameCache::new(f, theta);
    let mut states = vec![x1.to_vec()];
    let mut x = x1.to_vec();
    for k in (0..spec.steps).rev() {
        let t = spec.time(k + 1);
        x = step_with(spec.method, t, -h, &x, |s, y| cache.eval(s, y)).map_err(|e| as_divergence(e, k, t))?;
        check_state(&x, f.block_dim(), k, spec.time(k))?;
        if spec.store_all {
            states.push(x.clone());
        }
    }
    if !spec.store_all {
        states.push(x.clone());
    }
    let mut grid = spec.grid();
    grid.reverse();
    Ok(Trajectory {
        grid,
        states,
        terminal: x,
        eval_count: spec.eval_count(),
    })
}

/// Steps of the fine reference solve used by [`convergence_order`].
pub const REFERENCE_STEPS: usize = 4096;

/// Empirical order `log2(e_L / e_2L)` where `e` is the terminal error
/// against an RK4 solve with [`REFERENCE_STEPS`] steps.
pub fn convergence_order<F: VectorField + ?Sized>(
    f: &F,
    x0: &[f64],
    theta: &[f64],
    method: Method,
    t0: f64,
    t1: f64,
    steps: usize,
) -> Result<f64> {
    let base = SolveSpec::new(method, t0, t1, steps)?.terminal_only();
    let reference = integrate(f, x0, theta, &base.with_method(Method::Rk4).with_steps(REFERENCE_STEPS))?.terminal;
    let err = |spec: SolveSpec| -> Result<f64> {
        let x = integrate(f, x0, theta, &spec)?.terminal;
        let mut d = x;
        axpy(-1.0, &reference, &mut d);
        Ok(norm2(&d))
    };
    let coarse = err(base)?;
    let fine = err(base.with_steps(2 * steps))?;
    Ok((coarse / fine).log2())
}
