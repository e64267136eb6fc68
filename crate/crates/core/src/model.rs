//! Input map → NANODE flow → output map, with loss and gradient.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{Batched, DynamicsFn, DynamicsSpec, FieldInit, VectorField};
use crate::error::{check_dim, Error, Result};
use crate::grad::{grad_adjoint_from, grad_discrete_from, GradMethod};
use crate::linalg::{axpy, dot, Matrix};
use crate::odeint::{integrate, SolveSpec};
use crate::timebasis::{ParamLayout, ParamView};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stem {
    /// Pass-through; the adjacent dimensions must agree.
    Identity,
    Affine,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub input_stem: Stem,
    pub output_stem: Stem,
    pub dynamics: DynamicsSpec,
    pub solve: SolveSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    SoftmaxCrossEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    /// Weight of the L2 penalty on time-varying basis coefficients.
    pub l2_alpha: f64,
    /// Weight coefficient `n` by `n²` instead of 1 in the penalty.
    pub frequency_squared: bool,
    /// Repulsion `ε` keeping orthogonal reflection vectors away from 0,
    /// averaged over the solver grid.
    pub repulsion: f64,
}

impl LossSpec {
    pub fn new(kind: LossKind) -> Self {
        Self {
            kind,
            l2_alpha: 0.0,
            frequency_squared: false,
            repulsion: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Values(Matrix),
    Labels(Vec<usize>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Values(m) => m.rows(),
            Targets::Labels(l) => l.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rows selected by `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Values(m) => Targets::Values(select_rows(m, idx)),
            Targets::Labels(l) => Targets::Labels(idx.iter().map(|&i| l[i]).collect()),
        }
    }
}

pub fn select_rows(m: &Matrix, idx: &[usize]) -> Matrix {
    let mut data = Vec::with_capacity(idx.len() * m.cols());
    for &i in idx {
        data.extend_from_slice(m.row(i));
    }
    Matrix::from_vec(idx.len(), m.cols(), data).expect("rows copied whole")
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    /// Data loss plus penalties.
    pub loss: f64,
    pub data_loss: f64,
    pub penalty: f64,
    pub grad: Vec<f64>,
    pub outputs: Matrix,
    pub activation_memory_units: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct StemViews {
    weight: ParamView,
    bias: ParamView,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NanodeModel {
    in_dim: usize,
    out_dim: usize,
    state_dim: usize,
    input: Option<StemViews>,
    output: Option<StemViews>,
    flow: DynamicsFn,
    flow_view: ParamView,
    solve: SolveSpec,
    layout: ParamLayout,
}

impl NanodeModel {
    pub fn build<R: Rng + ?Sized>(spec: &ModelSpec, rng: &mut R) -> Result<Self> {
        spec.solve.validate()?;
        let n = spec.dynamics.dim;
        let flow = DynamicsFn::build(&spec.dynamics, rng)?;
        let mut layout = ParamLayout::new();
        let input = match spec.input_stem {
            Stem::Identity => {
                check_dim("identity input stem", n, spec.in_dim)?;
                None
            }
            Stem::Affine => Some(StemViews {
                weight: layout.alloc("input.weight", n * spec.in_dim),
                bias: layout.alloc("input.bias", n),
            }),
        };
        let flow_view = layout.alloc("flow", flow.num_params());
        let output = match spec.output_stem {
            Stem::Identity => {
                check_dim("identity output stem", n, spec.out_dim)?;
                None
            }
            Stem::Affine => Some(StemViews {
                weight: layout.alloc("output.weight", spec.out_dim * n),
                bias: layout.alloc("output.bias", spec.out_dim),
            }),
        };
        Ok(Self {
            in_dim: spec.in_dim,
            out_dim: spec.out_dim,
            state_dim: n,
            input,
            output,
            flow,
            flow_view,
            solve: spec.solve,
            layout,
        })
    }

    pub fn num_params(&self) -> usize {
        self.layout.total()
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn flow(&self) -> &DynamicsFn {
        &self.flow
    }

    pub fn flow_view(&self) -> ParamView {
        self.flow_view
    }

    pub fn solve(&self) -> &SolveSpec {
        &self.solve
    }

    /// Top-level views followed by the flow's own views, prefixed `flow.`.
    pub fn param_table(&self) -> Vec<(String, ParamView)> {
        let mut out = Vec::new();
        for (name, view) in self.layout.entries() {
            if name == "flow" {
                for (sub, v) in self.flow.layout().entries() {
                    let shifted = ParamView {
                        offset: view.offset + v.offset,
                        len: v.len,
                    };
                    out.push((format!("flow.{sub}"), shifted));
                }
            } else {
                out.push((name.clone(), *view));
            }
        }
        out
    }

    pub fn init_params<R: Rng + ?Sized>(&self, init: FieldInit, rng: &mut R) -> Result<Vec<f64>> {
        let mut theta = vec![0.0; self.num_params()];
        if let Some(v) = self.input {
            let normal = Normal::new(0.0, 1.0 / (self.in_dim as f64).sqrt()).expect("finite std");
            v.weight.slice_mut(&mut theta).iter_mut().for_each(|w| *w = normal.sample(rng));
        }
        let flow = self.flow.init_params(init, rng)?;
        self.flow_view.slice_mut(&mut theta).copy_from_slice(&flow);
        if let Some(v) = self.output {
            let normal = Normal::new(0.0, 1.0 / (self.state_dim as f64).sqrt()).expect("finite std");
            v.weight.slice_mut(&mut theta).iter_mut().for_each(|w| *w = normal.sample(rng));
        }
        Ok(theta)
    }

    fn affine(w: &[f64], b: &[f64], rows: usize, x: &[f64], out: &mut Vec<f64>) {
        let cols = x.len();
        for i in 0..rows {
            out.push(dot(&w[i * cols..(i + 1) * cols], x) + b[i]);
        }
    }

    /// Initial flow states `[z_1; …; z_B]` for a batch of inputs.
    pub fn lift(&self, theta: &[f64], inputs: &Matrix) -> Vec<f64> {
        let mut z = Vec::with_capacity(inputs.rows() * self.state_dim);
        for r in 0..inputs.rows() {
            match self.input {
                Some(v) => Self::affine(v.weight.slice(theta), v.bias.slice(theta), self.state_dim, inputs.row(r), &mut z),
                None => z.extend_from_slice(inputs.row(r)),
            }
        }
        z
    }

    fn project(&self, theta: &[f64], states: &[f64]) -> Matrix {
        let b = states.len() / self.state_dim.max(1);
        let mut y = Vec::with_capacity(b * self.out_dim);
        for zb in states.chunks(self.state_dim) {
            match self.output {
                Some(v) => Self::affine(v.weight.slice(theta), v.bias.slice(theta), self.out_dim, zb, &mut y),
                None => y.extend_from_slice(zb),
            }
        }
        Matrix::from_vec(b, self.out_dim, y).expect("sized above")
    }

    fn tag_divergence(e: Error) -> Error {
        match e {
            Error::ExampleDivergence { .. } => e,
            e if e.is_divergence() => Error::ExampleDivergence {
                index: 0,
                source: Box::new(e),
            },
            e => e,
        }
    }

    /// `output_map(flow(input_map(x)))` for every row of `inputs`.
    pub fn forward(&self, theta: &[f64], inputs: &Matrix) -> Result<Matrix> {
        check_dim("NanodeModel::forward theta", self.num_params(), theta.len())?;
        check_dim("NanodeModel::forward inputs", self.in_dim, inputs.cols())?;
        let z0 = self.lift(theta, inputs);
        let batched = Batched::new(&self.flow, inputs.rows());
        let traj = integrate(&batched, &z0, self.flow_view.slice(theta), &self.solve.terminal_only())
            .map_err(Self::tag_divergence)?;
        Ok(self.project(theta, &traj.terminal))
    }

    /// Mean data loss plus penalties, and its gradient. Per-example
    /// contributions are reduced in example order.
    pub fn loss_and_grad(
        &self,
        theta: &[f64],
        inputs: &Matrix,
        targets: &Targets,
        loss: &LossSpec,
        method: GradMethod,
    ) -> Result<LossGrad> {
        check_dim("NanodeModel::loss_and_grad theta", self.num_params(), theta.len())?;
        check_dim("NanodeModel::loss_and_grad inputs", self.in_dim, inputs.cols())?;
        check_dim("NanodeModel::loss_and_grad targets", inputs.rows(), targets.len())?;
        if inputs.rows() == 0 {
            return Err(Error::Contract("loss needs a non-empty batch".into()));
        }
        let b = inputs.rows();
        let n = self.state_dim;
        let z0 = self.lift(theta, inputs);
        let batched = Batched::new(&self.flow, b);
        let flow_theta = self.flow_view.slice(theta);
        let spec = match method {
            GradMethod::Discrete => self.solve,
            GradMethod::Adjoint => self.solve.terminal_only(),
            GradMethod::FiniteDiff => {
                return Err(Error::Contract("training gradients are discrete or adjoint".into()));
            }
        };
        let traj = integrate(&batched, &z0, flow_theta, &spec).map_err(Self::tag_divergence)?;
        let outputs = self.project(theta, &traj.terminal);
        let (data_loss, d_out) = data_loss_and_grad(loss.kind, &outputs, targets)?;

        let mut grad = vec![0.0; self.num_params()];
        // output stem
        let d_zt = match self.output {
            Some(v) => {
                let w = v.weight.slice(theta);
                let mut d_zt = vec![0.0; b * n];
                for r in 0..b {
                    let g = d_out.row(r);
                    let z = &traj.terminal[r * n..(r + 1) * n];
                    let gw = v.weight.slice_mut(&mut grad);
                    for (i, &gi) in g.iter().enumerate() {
                        axpy(gi, z, &mut gw[i * n..(i + 1) * n]);
                    }
                    axpy(1.0, g, v.bias.slice_mut(&mut grad));
                    for (i, &gi) in g.iter().enumerate() {
                        axpy(gi, &w[i * n..(i + 1) * n], &mut d_zt[r * n..(r + 1) * n]);
                    }
                }
                d_zt
            }
            None => d_out.as_slice().to_vec(),
        };
        // flow
        let fg = match method {
            GradMethod::Discrete => grad_discrete_from(&batched, &traj, flow_theta, &spec, &d_zt),
            _ => grad_adjoint_from(&batched, &traj.terminal, flow_theta, &spec, &d_zt),
        }
        .map_err(Self::tag_divergence)?;
        axpy(1.0, &fg.d_theta, self.flow_view.slice_mut(&mut grad));
        // input stem
        if let Some(v) = self.input {
            for r in 0..b {
                let g = &fg.d_x0[r * n..(r + 1) * n];
                let gw = v.weight.slice_mut(&mut grad);
                for (i, &gi) in g.iter().enumerate() {
                    axpy(gi, inputs.row(r), &mut gw[i * self.in_dim..(i + 1) * self.in_dim]);
                }
                axpy(1.0, g, v.bias.slice_mut(&mut grad));
            }
        }
        let penalty = self.penalty(theta, loss, &mut grad)?;
        if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { index });
        }
        Ok(LossGrad {
            loss: data_loss + penalty,
            data_loss,
            penalty,
            grad,
            outputs,
            activation_memory_units: fg.activation_memory_units,
        })
    }

    /// L2 penalty on time-varying coefficients plus the optional
    /// repulsion; gradient accumulated into `grad`.
    pub fn penalty(&self, theta: &[f64], loss: &LossSpec, grad: &mut [f64]) -> Result<f64> {
        let mut total = 0.0;
        let flow_theta = self.flow_view.slice(theta);
        if loss.l2_alpha > 0.0 {
            let weights = self.flow.penalty_weights(loss.frequency_squared);
            let g = self.flow_view.slice_mut(grad);
            for ((gi, &w), &a) in g.iter_mut().zip(&weights).zip(flow_theta) {
                if w != 0.0 {
                    total += loss.l2_alpha * w * a * a;
                    *gi += 2.0 * loss.l2_alpha * w * a;
                }
            }
        }
        if loss.repulsion > 0.0 {
            let grid = self.solve.grid();
            let eps = loss.repulsion / grid.len() as f64;
            for (field, view) in self.flow.ortho_fields() {
                let coeffs = view.slice(flow_theta);
                for &t in &grid {
                    let g = view.slice_mut(self.flow_view.slice_mut(grad));
                    total += field.repulsion(coeffs, t, eps, g)?;
                }
            }
        }
        Ok(total)
    }
}

/// Mean loss over the batch and its gradient with respect to the outputs.
pub fn data_loss_and_grad(kind: LossKind, outputs: &Matrix, targets: &Targets) -> Result<(f64, Matrix)> {
    let b = outputs.rows();
    let m = outputs.cols();
    let mut grad = Matrix::zeros(b, m);
    let mut total = 0.0;
    match (kind, targets) {
        (LossKind::Mse, Targets::Values(t)) => {
            check_dim("mse targets", m, t.cols())?;
            let scale = 1.0 / (b * m) as f64;
            for r in 0..b {
                for c in 0..m {
                    let d = outputs[(r, c)] - t[(r, c)];
                    total += d * d * scale;
                    grad[(r, c)] = 2.0 * d * scale;
                }
            }
        }
        (LossKind::SoftmaxCrossEntropy, Targets::Labels(labels)) => {
            for (r, &label) in labels.iter().enumerate() {
                if label >= m {
                    return Err(Error::Contract(format!("label {label} out of range for {m} classes")));
                }
                let row = outputs.row(r);
                let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = row.iter().map(|v| (v - mx).exp()).sum();
                let log_z = mx + sum.ln();
                total += (log_z - row[label]) / b as f64;
                for c in 0..m {
                    let p = (row[c] - log_z).exp();
                    grad[(r, c)] = (p - if c == label { 1.0 } else { 0.0 }) / b as f64;
                }
            }
        }
        _ => return Err(Error::Contract("loss kind does not match target type".into())),
    }
    Ok((total, grad))
}

/// Fraction of rows whose arg-max equals the label.
pub fn accuracy(outputs: &Matrix, labels: &[usize]) -> f64 {
    let correct = (0..outputs.rows())
        .filter(|&r| {
            let row = outputs.row(r);
            let arg = (0..row.len()).fold(0, |best, c| if row[c] > row[best] { c } else { best });
            arg == labels[r]
        })
        .count();
    correct as f64 / outputs.rows().max(1) as f64
}
