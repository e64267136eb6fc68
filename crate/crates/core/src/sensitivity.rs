//! Forward sensitivities `S = ∂x/∂θ`, state transition matrices and the
//! norm series used as stability diagnostics.

use serde::{Deserialize, Serialize};

use crate::dynamics::{jacobians_in, DynamicsFn, VectorField};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{spectral_norm, Matrix};
use crate::odeint::{as_divergence, check_state, step_with, FrameCache, Method, SolveSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivitySolve {
    /// `(t_k, S(t_k))` at every grid point when `store_all`, otherwise the
    /// endpoints only.
    pub snapshots: Vec<(f64, Matrix)>,
    pub terminal_s: Matrix,
    pub terminal_x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StmSolve {
    pub phi: Matrix,
    pub t0: f64,
    pub t1: f64,
    /// `(t_k, ‖Φ(t_k, t0)‖₂)` at every grid point.
    pub norm_series: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub t: f64,
    pub norm_s: f64,
    pub norm_a: f64,
    pub norm_phi: f64,
    pub skew_defect: f64,
    pub norm_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub rows: Vec<ReportRow>,
    /// Set when the solve blew up; `rows` then stop at the last good point.
    pub diverged: bool,
    pub diverged_at: Option<f64>,
}

pub const REPORT_CSV_HEADER: &str = "t,norm_S,norm_A,norm_Phi,skew_defect";

impl SensitivityReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{},{}\n", r.t, r.norm_s, r.norm_a, r.norm_phi, r.skew_defect));
        }
        out
    }
}

/// `‖A + Aᵀ‖_F / ‖A‖_F` (0 for `A = 0`).
pub fn relative_skew_defect(a: &Matrix) -> f64 {
    let n = a.frobenius_norm();
    if n == 0.0 {
        0.0
    } else {
        a.skew_defect() / n
    }
}

/// `C = A·B + D` written into a row-major slice.
fn mat_mul_add(a: &Matrix, b: &[f64], d: &Matrix, out: &mut [f64]) {
    let (n, k) = (a.rows(), d.cols());
    for i in 0..n {
        let row = &mut out[i * k..(i + 1) * k];
        row.copy_from_slice(d.row(i));
        for (l, &ail) in a.row(i).iter().enumerate() {
            if ail != 0.0 {
                crate::linalg::axpy(ail, &b[l * k..(l + 1) * k], row);
            }
        }
    }
}

/// Co-integrates `ẋ = f` and `Ṡ = A S + B`, `S(t0) = 0`, with the method
/// of `spec`.
pub fn integrate_sensitivity<F: VectorField + ?Sized>(
    f: &F,
    x0: &[f64],
    theta: &[f64],
    spec: &SolveSpec,
) -> Result<SensitivitySolve> {
    spec.validate()?;
    let n = f.dim();
    let k = f.num_params();
    check_dim("integrate_sensitivity", n, x0.len())?;
    check_dim("integrate_sensitivity theta", k, theta.len())?;
    let mut cache = FrameCache::new(f, theta);
    let mut rhs = |t: f64, y: &[f64]| -> Result<Vec<f64>> {
        let (x, s) = y.split_at(n);
        let frame = cache.frame(t)?;
        let fx = f.apply(frame, x)?;
        let (a, b) = jacobians_in(f, frame, x)?;
        let mut out = fx;
        out.resize(n + n * k, 0.0);
        mat_mul_add(&a, s, &b, &mut out[n..]);
        Ok(out)
    };
    let mut y = x0.to_vec();
    y.resize(n + n * k, 0.0);
    let unpack = |y: &[f64]| Matrix::from_vec(n, k, y[n..].to_vec()).expect("sized above");
    let mut snapshots = vec![(spec.t0, unpack(&y))];
    let h = spec.h();
    for step in 0..spec.steps {
        let t = spec.time(step);
        y = step_with(spec.method, t, h, &y, &mut rhs).map_err(|e| as_divergence(e, step, t))?;
        check_state(&y, y.len(), step + 1, spec.time(step + 1))?;
        if spec.store_all || step + 1 == spec.steps {
            snapshots.push((spec.time(step + 1), unpack(&y)));
        }
    }
    Ok(SensitivitySolve {
        terminal_s: unpack(&y),
        terminal_x: y[..n].to_vec(),
        snapshots,
    })
}

/// `Φ(t1, t0)` from `Ṁ = A(t) M`, `M(t0) = I`, by RK4.
pub fn integrate_stm(
    a_of_t: impl Fn(f64) -> Result<Matrix>,
    t0: f64,
    t1: f64,
    steps: usize,
) -> Result<StmSolve> {
    let spec = SolveSpec::new(Method::Rk4, t0, t1, steps)?;
    let a0 = a_of_t(t0)?;
    if !a0.is_square() {
        return Err(Error::Contract("state transition needs square A(t)".into()));
    }
    let n = a0.rows();
    let zero = Matrix::zeros(n, n);
    let rhs = |t: f64, m: &[f64]| -> Result<Vec<f64>> {
        let a = a_of_t(t)?;
        check_dim("integrate_stm", n, a.rows())?;
        if !a.is_finite() {
            return Err(Error::NumericOverflow { t });
        }
        let mut out = vec![0.0; n * n];
        mat_mul_add(&a, m, &zero, &mut out);
        Ok(out)
    };
    let mut m = Matrix::identity(n).into_vec();
    let mut norm_series = vec![(t0, 1.0)];
    for step in 0..steps {
        let t = spec.time(step);
        m = step_with(Method::Rk4, t, spec.h(), &m, &rhs).map_err(|e| as_divergence(e, step, t))?;
        check_state(&m, m.len(), step + 1, spec.time(step + 1))?;
        let phi = Matrix::from_vec(n, n, m.clone()).expect("sized above");
        norm_series.push((spec.time(step + 1), spectral_norm(&phi)?));
    }
    Ok(StmSolve {
        phi: Matrix::from_vec(n, n, m).expect("sized above"),
        t0,
        t1,
        norm_series,
    })
}

/// Co-integrates `x`, `S` and the linearized transition matrix `Φ(t, t0)`
/// and records `‖S‖₂`, `‖A‖₂`, `‖Φ‖₂`, the relative skew defect of `A` and
/// `‖B‖₂` at every grid point. Divergence truncates the series.
pub fn gradient_flow_report<F: VectorField + ?Sized>(
    f: &F,
    x0: &[f64],
    theta: &[f64],
    spec: &SolveSpec,
) -> Result<SensitivityReport> {
    spec.validate()?;
    let n = f.dim();
    let k = f.num_params();
    check_dim("gradient_flow_report", n, x0.len())?;
    check_dim("gradient_flow_report theta", k, theta.len())?;
    let mut cache = FrameCache::new(f, theta);
    let zero = Matrix::zeros(n, n);
    let s_end = n + n * k;
    let mut rhs = |t: f64, y: &[f64]| -> Result<Vec<f64>> {
        let x = &y[..n];
        let frame = cache.frame(t)?;
        let fx = f.apply(frame, x)?;
        let (a, b) = jacobians_in(f, frame, x)?;
        let mut out = fx;
        out.resize(y.len(), 0.0);
        mat_mul_add(&a, &y[n..s_end], &b, &mut out[n..s_end]);
        mat_mul_add(&a, &y[s_end..], &zero, &mut out[s_end..]);
        Ok(out)
    };
    let row_at = |t: f64, y: &[f64]| -> Result<ReportRow> {
        let x = &y[..n];
        let frame = f.frame(t, theta)?;
        let (a, b) = jacobians_in(f, &frame, x)?;
        let s = Matrix::from_vec(n, k, y[n..s_end].to_vec())?;
        let phi = Matrix::from_vec(n, n, y[s_end..].to_vec())?;
        Ok(ReportRow {
            t,
            norm_s: spectral_norm(&s)?,
            norm_a: spectral_norm(&a)?,
            norm_phi: spectral_norm(&phi)?,
            skew_defect: relative_skew_defect(&a),
            norm_b: spectral_norm(&b)?,
        })
    };
    let mut y = x0.to_vec();
    y.resize(s_end, 0.0);
    y.extend(Matrix::identity(n).into_vec());
    let mut rows = Vec::with_capacity(spec.steps + 1);
    let h = spec.h();
    let mut diverged_at = None;
    match row_at(spec.t0, &y) {
        Ok(r) => rows.push(r),
        Err(e) if e.is_divergence() => diverged_at = Some(spec.t0),
        Err(e) => return Err(e),
    }
    if diverged_at.is_none() {
        for step in 0..spec.steps {
            let t = spec.time(step);
            let next = step_with(spec.method, t, h, &y, &mut rhs)
                .map_err(|e| as_divergence(e, step, t))
                .and_then(|v| check_state(&v, v.len(), step + 1, spec.time(step + 1)).map(|_| v))
                .and_then(|v| row_at(spec.time(step + 1), &v).map(|r| (v, r)));
            match next {
                Ok((v, r)) => {
                    y = v;
                    rows.push(r);
                }
                Err(e) if e.is_divergence() => {
                    diverged_at = Some(spec.time(step + 1));
                    break;
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(SensitivityReport {
        rows,
        diverged: diverged_at.is_some(),
        diverged_at,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightNormRow {
    pub t: f64,
    pub layer: usize,
    pub norm_w: f64,
}

pub const WEIGHT_NORM_CSV_HEADER: &str = "t,layer,norm_W";

/// `‖W_l(t)‖₂` for every layer at every grid time.
pub fn weight_norm_series(f: &DynamicsFn, theta: &[f64], spec: &SolveSpec) -> Result<Vec<WeightNormRow>> {
    let mut out = Vec::new();
    for t in spec.grid() {
        for (layer, w) in f.weight_matrices(t, theta)?.iter().enumerate() {
            out.push(WeightNormRow {
                t,
                layer,
                norm_w: spectral_norm(w)?,
            });
        }
    }
    Ok(out)
}

pub fn weight_norms_csv(rows: &[WeightNormRow]) -> String {
    let mut out = String::from(WEIGHT_NORM_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.t, r.layer, r.norm_w));
    }
    out
}
