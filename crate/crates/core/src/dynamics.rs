//! Right-hand sides `f(x, t, θ)` built from time-varying weight fields.
//!
//! Everything differentiable implements [`VectorField`]: a time-dependent
//! [`VectorField::frame`] (weights materialized at `t`) plus a forward map
//! and its vector-Jacobian product. Full Jacobians are assembled row by row
//! from vector-Jacobian products.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{axpy, dot, matvec, matvec_t, Matrix};
use crate::ortho::{OrthoWrappedField, Reflections};
use crate::timebasis::{BasisKind, CoeffInit, ParamLayout, ParamView, TimeBasis};

/// A differentiable vector field `ẋ = f(x, t, θ)`.
pub trait VectorField {
    /// Everything about `f` that depends on `(t, θ)` but not on `x`.
    type Frame;

    fn dim(&self) -> usize;
    fn num_params(&self) -> usize;
    fn frame(&self, t: f64, theta: &[f64]) -> Result<Self::Frame>;
    fn apply(&self, frame: &Self::Frame, x: &[f64]) -> Result<Vec<f64>>;

    /// Returns `(∂f/∂x)ᵀ a` and adds `(∂f/∂θ)ᵀ a` into `grad_theta`.
    fn apply_vjp(&self, frame: &Self::Frame, x: &[f64], a: &[f64], grad_theta: &mut [f64]) -> Result<Vec<f64>>;

    /// False when `f` jumps in `t` (bucketed weights).
    fn is_smooth_in_time(&self) -> bool {
        true
    }

    /// Whether every jump of `f` in `t` falls on the grid of `steps`
    /// uniform steps over `[t0, t1]`.
    fn aligned_with_grid(&self, _t0: f64, _t1: f64, _steps: usize) -> bool {
        true
    }

    /// Size of the independent blocks of the state (the per-example
    /// dimension for batched fields).
    fn block_dim(&self) -> usize {
        self.dim()
    }

    fn eval(&self, x: &[f64], t: f64, theta: &[f64]) -> Result<Vec<f64>> {
        check_dim("VectorField::eval", self.dim(), x.len())?;
        check_dim("VectorField::eval theta", self.num_params(), theta.len())?;
        let frame = self.frame(t, theta)?;
        self.apply(&frame, x)
    }

    fn vjp(&self, x: &[f64], t: f64, theta: &[f64], a: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_dim("VectorField::vjp", self.dim(), a.len())?;
        let frame = self.frame(t, theta)?;
        let mut g = vec![0.0; self.num_params()];
        let gx = self.apply_vjp(&frame, x, a, &mut g)?;
        Ok((gx, g))
    }

    /// `∂f/∂x` (n × n).
    fn jac_x(&self, x: &[f64], t: f64, theta: &[f64]) -> Result<Matrix> {
        let frame = self.frame(t, theta)?;
        jacobians_in(self, &frame, x).map(|(jx, _)| jx)
    }

    /// `∂f/∂θ` (n × k).
    fn jac_theta(&self, x: &[f64], t: f64, theta: &[f64]) -> Result<Matrix> {
        let frame = self.frame(t, theta)?;
        jacobians_in(self, &frame, x).map(|(_, jt)| jt)
    }
}

/// Both Jacobians at a prepared frame.
pub fn jacobians_in<F: VectorField + ?Sized>(f: &F, frame: &F::Frame, x: &[f64]) -> Result<(Matrix, Matrix)> {
    let n = f.dim();
    let k = f.num_params();
    let mut jx = Matrix::zeros(n, n);
    let mut jt = Matrix::zeros(n, k);
    let mut e = vec![0.0; n];
    for i in 0..n {
        e[i] = 1.0;
        let gx = f.apply_vjp(frame, x, &e, jt.row_mut(i))?;
        jx.row_mut(i).copy_from_slice(&gx);
        e[i] = 0.0;
    }
    Ok((jx, jt))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Identity => v,
        }
    }

    /// Derivative expressed through the activation output `y = σ(v)`.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

/// Embedding width of `v_ij` in the hypernetwork field.
pub const HYPER_EMBED: usize = 4;
/// Hidden width of the hypernetwork `Ψ`.
pub const HYPER_HIDDEN: usize = 16;

/// Per-entry hypernetwork weights `W_ij(t) = Ψ([v_ij; t])`, with a single
/// two-layer tanh network `Ψ` shared by every entry of the field.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperField {
    rows: usize,
    cols: usize,
}

impl HyperField {
    const PSI_IN: usize = HYPER_EMBED + 1;

    fn embed_len(&self) -> usize {
        self.rows * self.cols * HYPER_EMBED
    }

    fn num_params(&self) -> usize {
        self.embed_len() + HYPER_HIDDEN * Self::PSI_IN + 2 * HYPER_HIDDEN + 1
    }

    /// `(v, W1, b1, w2, b2)` slices of this field's parameters.
    fn split<'a>(&self, p: &'a [f64]) -> (&'a [f64], &'a [f64], &'a [f64], &'a [f64], f64) {
        let (v, rest) = p.split_at(self.embed_len());
        let (w1, rest) = rest.split_at(HYPER_HIDDEN * Self::PSI_IN);
        let (b1, rest) = rest.split_at(HYPER_HIDDEN);
        let (w2, rest) = rest.split_at(HYPER_HIDDEN);
        (v, w1, b1, w2, rest[0])
    }
}

/// A matrix-valued function of time.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightField {
    /// One [`TimeBasis`] expansion per entry; coefficients `[(i·cols + j)·k ..]`.
    PerEntry { rows: usize, cols: usize, basis: TimeBasis },
    Ortho(OrthoWrappedField),
    Hyper(HyperField),
}

#[derive(Debug, Clone)]
pub enum FieldFrame {
    PerEntry { w: Matrix, features: Vec<f64> },
    Ortho { w: Matrix, refl: Reflections },
    Hyper { w: Matrix, hidden: Vec<f64>, t: f64 },
}

impl FieldFrame {
    pub fn matrix(&self) -> &Matrix {
        match self {
            FieldFrame::PerEntry { w, .. } | FieldFrame::Ortho { w, .. } | FieldFrame::Hyper { w, .. } => w,
        }
    }
}

impl WeightField {
    pub fn per_entry(rows: usize, cols: usize, basis: TimeBasis) -> Self {
        WeightField::PerEntry { rows, cols, basis }
    }

    pub fn hyper(rows: usize, cols: usize) -> Self {
        WeightField::Hyper(HyperField { rows, cols })
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            WeightField::PerEntry { rows, cols, .. } => (*rows, *cols),
            WeightField::Ortho(o) => (o.dim(), o.dim()),
            WeightField::Hyper(h) => (h.rows, h.cols),
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            WeightField::PerEntry { rows, cols, basis } => rows * cols * basis.num_coeffs(),
            WeightField::Ortho(o) => o.num_params(),
            WeightField::Hyper(h) => h.num_params(),
        }
    }

    pub fn basis(&self) -> Option<&TimeBasis> {
        match self {
            WeightField::PerEntry { basis, .. } => Some(basis),
            WeightField::Ortho(o) => Some(o.basis()),
            WeightField::Hyper(_) => None,
        }
    }

    pub fn frame(&self, t: f64, p: &[f64]) -> Result<FieldFrame> {
        check_dim("WeightField::frame", self.num_params(), p.len())?;
        let frame = match self {
            WeightField::PerEntry { rows, cols, basis } => {
                let features = basis.features(t)?;
                let k = features.len();
                let mut w = Matrix::zeros(*rows, *cols);
                for (wij, c) in w.as_mut_slice().iter_mut().zip(p.chunks_exact(k.max(1))) {
                    *wij = dot(c, &features);
                }
                FieldFrame::PerEntry { w, features }
            }
            WeightField::Ortho(o) => {
                let refl = o.reflections(p, t)?;
                let w = refl.materialize(o.dim());
                FieldFrame::Ortho { w, refl }
            }
            WeightField::Hyper(h) => {
                let (v, w1, b1, w2, b2) = h.split(p);
                let entries = h.rows * h.cols;
                let mut hidden = vec![0.0; entries * HYPER_HIDDEN];
                let mut w = Matrix::zeros(h.rows, h.cols);
                let mut input = [0.0; HyperField::PSI_IN];
                for e in 0..entries {
                    input[..HYPER_EMBED].copy_from_slice(&v[e * HYPER_EMBED..(e + 1) * HYPER_EMBED]);
                    input[HYPER_EMBED] = t;
                    let hid = &mut hidden[e * HYPER_HIDDEN..(e + 1) * HYPER_HIDDEN];
                    for (m, hm) in hid.iter_mut().enumerate() {
                        *hm = (dot(&w1[m * HyperField::PSI_IN..(m + 1) * HyperField::PSI_IN], &input) + b1[m]).tanh();
                    }
                    w.as_mut_slice()[e] = dot(w2, hid) + b2;
                }
                FieldFrame::Hyper { w, hidden, t }
            }
        };
        if !frame.matrix().is_finite() {
            return Err(Error::NumericOverflow { t });
        }
        Ok(frame)
    }

    /// Adds `∂(gᵀ W x)/∂p` into `grad` and returns `Wᵀ g`.
    pub fn backward(&self, frame: &FieldFrame, p: &[f64], x: &[f64], g: &[f64], grad: &mut [f64]) -> Vec<f64> {
        match (self, frame) {
            (WeightField::PerEntry { rows, cols, .. }, FieldFrame::PerEntry { w, features }) => {
                let k = features.len();
                for i in 0..*rows {
                    if g[i] == 0.0 {
                        continue;
                    }
                    for j in 0..*cols {
                        let base = (i * cols + j) * k;
                        axpy(g[i] * x[j], features, &mut grad[base..base + k]);
                    }
                }
                matvec_t(w, g).expect("shape checked at frame")
            }
            (WeightField::Ortho(o), FieldFrame::Ortho { refl, .. }) => o.backprop(refl, x, g, grad),
            (WeightField::Hyper(h), FieldFrame::Hyper { w, hidden, t }) => {
                let (v, w1, _b1, w2, _b2) = h.split(p);
                let embed_len = h.embed_len();
                let (g_v, rest) = grad.split_at_mut(embed_len);
                let (g_w1, rest) = rest.split_at_mut(HYPER_HIDDEN * HyperField::PSI_IN);
                let (g_b1, rest) = rest.split_at_mut(HYPER_HIDDEN);
                let (g_w2, g_b2) = rest.split_at_mut(HYPER_HIDDEN);
                let mut input = [0.0; HyperField::PSI_IN];
                let mut dh = [0.0; HYPER_HIDDEN];
                for i in 0..h.rows {
                    for j in 0..h.cols {
                        let gw = g[i] * x[j];
                        if gw == 0.0 {
                            continue;
                        }
                        let e = i * h.cols + j;
                        let hid = &hidden[e * HYPER_HIDDEN..(e + 1) * HYPER_HIDDEN];
                        axpy(gw, hid, g_w2);
                        g_b2[0] += gw;
                        input[..HYPER_EMBED].copy_from_slice(&v[e * HYPER_EMBED..(e + 1) * HYPER_EMBED]);
                        input[HYPER_EMBED] = *t;
                        for m in 0..HYPER_HIDDEN {
                            dh[m] = gw * w2[m] * (1.0 - hid[m] * hid[m]);
                            axpy(dh[m], &input, &mut g_w1[m * HyperField::PSI_IN..(m + 1) * HyperField::PSI_IN]);
                            g_b1[m] += dh[m];
                            let row = &w1[m * HyperField::PSI_IN..m * HyperField::PSI_IN + HYPER_EMBED];
                            axpy(dh[m], row, &mut g_v[e * HYPER_EMBED..(e + 1) * HYPER_EMBED]);
                        }
                    }
                }
                matvec_t(w, g).expect("shape checked at frame")
            }
            _ => unreachable!("frame built by a different field kind"),
        }
    }

    fn init<R: Rng + ?Sized>(&self, init: FieldInit, fan_in: usize, rng: &mut R, out: &mut [f64]) -> Result<()> {
        match self {
            WeightField::PerEntry { rows, cols, basis } => {
                let k = basis.num_coeffs();
                if let FieldInit::Skew { scale } = init {
                    if rows != cols {
                        return Err(Error::Contract("skew initialization needs square weights".into()));
                    }
                    let normal = Normal::new(0.0, scale / (fan_in.max(1) as f64).sqrt()).expect("finite std");
                    out.iter_mut().for_each(|v| *v = 0.0);
                    for i in 0..*rows {
                        for j in (i + 1)..*cols {
                            for c in 0..k {
                                let r = normal.sample(rng);
                                out[(i * cols + j) * k + c] = r;
                                out[(j * cols + i) * k + c] = -r;
                            }
                        }
                    }
                    return Ok(());
                }
                for chunk in out.chunks_exact_mut(k) {
                    basis.init_coeffs(init.coeff_init(), fan_in, rng, chunk);
                }
            }
            WeightField::Ortho(o) => {
                let k = o.basis().num_coeffs();
                for chunk in out.chunks_exact_mut(k) {
                    o.basis().init_coeffs(init.coeff_init(), fan_in, rng, chunk);
                }
            }
            WeightField::Hyper(h) => {
                let embed = h.embed_len();
                let std_w1 = 1.0 / (HyperField::PSI_IN as f64).sqrt();
                let std_w2 = 0.5 / (fan_in.max(1) as f64).sqrt();
                let unit = Normal::new(0.0, 1.0).expect("unit normal");
                for (idx, o) in out.iter_mut().enumerate() {
                    let rel = idx.checked_sub(embed);
                    *o = match rel {
                        None => unit.sample(rng),
                        Some(r) if r < HYPER_HIDDEN * HyperField::PSI_IN => std_w1 * unit.sample(rng),
                        Some(r) if r < HYPER_HIDDEN * (HyperField::PSI_IN + 1) => 0.0,
                        Some(r) if r < HYPER_HIDDEN * (HyperField::PSI_IN + 2) => std_w2 * unit.sample(rng),
                        Some(_) => 0.0,
                    };
                }
            }
        }
        Ok(())
    }
}

/// Initialization of a whole dynamics function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum FieldInit {
    /// Autonomous coefficients ~ Normal(0, 1/fan_in); time-varying ones 0.
    FanIn,
    /// Every basis coefficient ~ Normal(0, scale²/fan_in).
    Normal { scale: f64 },
    /// Every coefficient matrix skew-symmetric (so `W(t)` is skew for all
    /// `t`), entries ~ Normal(0, scale²/fan_in); biases zero.
    Skew { scale: f64 },
}

impl FieldInit {
    fn coeff_init(self) -> CoeffInit {
        match self {
            FieldInit::FanIn => CoeffInit::FanIn,
            FieldInit::Normal { scale } | FieldInit::Skew { scale } => CoeffInit::Normal { scale },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    weight: WeightField,
    weight_view: ParamView,
    bias: Option<(WeightField, ParamView)>,
    activation: Activation,
    append_time: bool,
}

impl Layer {
    pub fn weight(&self) -> &WeightField {
        &self.weight
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }
}

#[derive(Debug, Clone)]
pub struct LayerFrame {
    weight: FieldFrame,
    bias: Option<FieldFrame>,
}

/// An ordered stack of layers `h ↦ σ(W(t)·[h; t?] + b(t))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Stack {
    dim: usize,
    layers: Vec<Layer>,
}

#[derive(Debug, Clone)]
pub struct StackFrame {
    t: f64,
    layers: Vec<LayerFrame>,
}

impl StackFrame {
    pub fn weight_matrices(&self) -> Vec<&Matrix> {
        self.layers.iter().map(|l| l.weight.matrix()).collect()
    }
}

impl Stack {
    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    fn frame(&self, t: f64, theta: &[f64]) -> Result<StackFrame> {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let weight = l.weight.frame(t, l.weight_view.slice(theta))?;
                let bias = match &l.bias {
                    Some((f, v)) => Some(f.frame(t, v.slice(theta))?),
                    None => None,
                };
                Ok(LayerFrame { weight, bias })
            })
            .collect::<Result<_>>()?;
        Ok(StackFrame { t, layers })
    }

    fn layer_input(layer: &Layer, h: &[f64], t: f64) -> Vec<f64> {
        let mut inp = h.to_vec();
        if layer.append_time {
            inp.push(t);
        }
        inp
    }

    /// Returns `(layer inputs, layer outputs)`.
    fn forward(&self, frame: &StackFrame, x: &[f64]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        for (layer, lf) in self.layers.iter().zip(&frame.layers) {
            let inp = Self::layer_input(layer, &h, frame.t);
            let mut pre = matvec(lf.weight.matrix(), &inp)?;
            if let Some(bf) = &lf.bias {
                for (p, b) in pre.iter_mut().zip(bf.matrix().as_slice()) {
                    *p += b;
                }
            }
            h = pre.into_iter().map(|v| layer.activation.apply(v)).collect();
            if h.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericOverflow { t: frame.t });
            }
            inputs.push(inp);
            outputs.push(h.clone());
        }
        Ok((inputs, outputs))
    }

    fn apply(&self, frame: &StackFrame, x: &[f64]) -> Result<Vec<f64>> {
        let mut h = x.to_vec();
        for (layer, lf) in self.layers.iter().zip(&frame.layers) {
            if layer.append_time {
                h.push(frame.t);
            }
            let w = lf.weight.matrix();
            let bias = lf.bias.as_ref().map(|b| b.matrix().as_slice());
            let mut next = Vec::with_capacity(w.rows());
            for i in 0..w.rows() {
                let mut v = dot(w.row(i), &h);
                if let Some(b) = bias {
                    v += b[i];
                }
                v = layer.activation.apply(v);
                if !v.is_finite() {
                    return Err(Error::NumericOverflow { t: frame.t });
                }
                next.push(v);
            }
            h = next;
        }
        Ok(h)
    }

    fn apply_vjp(&self, frame: &StackFrame, x: &[f64], a: &[f64], theta: &[f64], grad: &mut [f64]) -> Result<Vec<f64>> {
        let (inputs, outputs) = self.forward(frame, x)?;
        let mut upstream = a.to_vec();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let lf = &frame.layers[idx];
            let delta: Vec<f64> = upstream
                .iter()
                .zip(&outputs[idx])
                .map(|(u, &y)| u * layer.activation.derivative_from_output(y))
                .collect();
            if let (Some((bfield, bview)), Some(bframe)) = (&layer.bias, &lf.bias) {
                bfield.backward(bframe, bview.slice(theta), &[1.0], &delta, bview.slice_mut(grad));
            }
            let mut g_in = layer.weight.backward(
                &lf.weight,
                layer.weight_view.slice(theta),
                &inputs[idx],
                &delta,
                layer.weight_view.slice_mut(grad),
            );
            if layer.append_time {
                g_in.pop();
            }
            upstream = g_in;
        }
        Ok(upstream)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Constant weights shared across time.
    Autonomous,
    /// Constant weights acting on `[x; t]`.
    AppendTime,
    /// Weights expanded in a time basis (optionally orthogonally wrapped).
    Nanode,
    /// `Σ σ_n(t) f_n(x)` with logistic gates.
    GatedMixture,
    /// Per-entry hypernetwork weights `Ψ([v_ij; t])`.
    DirectHypernet,
}

/// Structural description of a [`DynamicsFn`].
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsSpec {
    pub variant: Variant,
    pub dim: usize,
    pub layers: usize,
    pub activation: Activation,
    pub bias: bool,
    pub basis: BasisKind,
    /// Basis order, or the number of mixture components for
    /// [`Variant::GatedMixture`].
    pub order: usize,
    pub omega: f64,
    pub horizon: f64,
    pub ortho: bool,
}

impl DynamicsSpec {
    pub fn new(variant: Variant, dim: usize) -> Self {
        Self {
            variant,
            dim,
            layers: 1,
            activation: Activation::Tanh,
            bias: true,
            basis: BasisKind::Constant,
            order: 0,
            omega: 1.0,
            horizon: 1.0,
            ortho: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Body {
    Stack(Stack),
    Gated { gates: ParamView, subs: Vec<Stack> },
}

/// The right-hand side of a NANODE block.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsFn {
    variant: Variant,
    dim: usize,
    body: Body,
    layout: ParamLayout,
    smooth: bool,
}

#[derive(Debug, Clone)]
pub struct DynamicsFrame {
    theta: Vec<f64>,
    kind: FrameKind,
}

#[derive(Debug, Clone)]
enum FrameKind {
    Stack(StackFrame),
    Gated { t: f64, sigma: Vec<f64>, subs: Vec<StackFrame> },
}

fn logistic(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

impl DynamicsFn {
    /// Builds the structure; `rng` only draws frozen random features.
    pub fn build<R: Rng + ?Sized>(spec: &DynamicsSpec, rng: &mut R) -> Result<Self> {
        if spec.dim == 0 || spec.layers == 0 {
            return Err(Error::Contract("dynamics needs dim >= 1 and layers >= 1".into()));
        }
        let mut layout = ParamLayout::new();
        let n = spec.dim;
        let constant = TimeBasis::constant(spec.horizon)?;
        let body = match spec.variant {
            Variant::Autonomous => Body::Stack(Self::build_stack(spec, "", &constant, false, false, &mut layout)),
            Variant::AppendTime => Body::Stack(Self::build_stack(spec, "", &constant, false, true, &mut layout)),
            Variant::Nanode => {
                let basis = TimeBasis::of_kind(spec.basis, spec.order, spec.omega, spec.horizon, rng)?;
                Body::Stack(Self::build_stack(spec, "", &basis, spec.ortho, false, &mut layout))
            }
            Variant::DirectHypernet => {
                let mut layers = Vec::with_capacity(spec.layers);
                for l in 0..spec.layers {
                    let weight = WeightField::hyper(n, n);
                    let weight_view = layout.alloc(format!("layer{l}.weight"), weight.num_params());
                    let bias = spec.bias.then(|| {
                        let f = WeightField::per_entry(n, 1, constant.clone());
                        let v = layout.alloc(format!("layer{l}.bias"), f.num_params());
                        (f, v)
                    });
                    layers.push(Layer {
                        weight,
                        weight_view,
                        bias,
                        activation: spec.activation,
                        append_time: false,
                    });
                }
                Body::Stack(Stack { dim: n, layers })
            }
            Variant::GatedMixture => {
                let count = spec.order.max(1);
                let gates = layout.alloc("gates", 2 * count);
                let subs = (0..count)
                    .map(|s| Self::build_stack(spec, &format!("sub{s}."), &constant, false, false, &mut layout))
                    .collect();
                Body::Gated { gates, subs }
            }
        };
        let mut out = Self {
            variant: spec.variant,
            dim: n,
            body,
            layout,
            smooth: true,
        };
        out.smooth = out.bucket_counts().is_empty();
        Ok(out)
    }

    fn build_stack(
        spec: &DynamicsSpec,
        prefix: &str,
        basis: &TimeBasis,
        ortho: bool,
        append_time: bool,
        layout: &mut ParamLayout,
    ) -> Stack {
        let n = spec.dim;
        let in_dim = if append_time { n + 1 } else { n };
        let layers = (0..spec.layers)
            .map(|l| {
                let weight = if ortho {
                    WeightField::Ortho(OrthoWrappedField::new(n, basis.clone()).expect("n >= 1"))
                } else {
                    WeightField::per_entry(n, in_dim, basis.clone())
                };
                let weight_view = layout.alloc(format!("{prefix}layer{l}.weight"), weight.num_params());
                let bias = spec.bias.then(|| {
                    let f = WeightField::per_entry(n, 1, basis.clone());
                    let v = layout.alloc(format!("{prefix}layer{l}.bias"), f.num_params());
                    (f, v)
                });
                Layer {
                    weight,
                    weight_view,
                    bias,
                    activation: spec.activation,
                    append_time,
                }
            })
            .collect();
        Stack { dim: n, layers }
    }

    /// Single-layer, bias-free stack `f(x, t) = σ(W(t) x)` around an
    /// explicit weight field. Useful for analysis and tests.
    pub fn single_layer(weight: WeightField, activation: Activation) -> Result<Self> {
        let (rows, cols) = weight.shape();
        if rows != cols {
            return Err(Error::Contract("single-layer dynamics needs square weights".into()));
        }
        let mut layout = ParamLayout::new();
        let weight_view = layout.alloc("layer0.weight", weight.num_params());
        let smooth = !weight.basis().is_some_and(TimeBasis::is_discontinuous);
        Ok(Self {
            variant: Variant::Nanode,
            dim: rows,
            body: Body::Stack(Stack {
                dim: rows,
                layers: vec![Layer {
                    weight,
                    weight_view,
                    bias: None,
                    activation,
                    append_time: false,
                }],
            }),
            layout,
            smooth,
        })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn stack(&self) -> Option<&Stack> {
        match &self.body {
            Body::Stack(s) => Some(s),
            Body::Gated { .. } => None,
        }
    }

    pub fn init_params<R: Rng + ?Sized>(&self, init: FieldInit, rng: &mut R) -> Result<Vec<f64>> {
        let mut theta = vec![0.0; self.layout.total()];
        let init_stack = |stack: &Stack, theta: &mut [f64], rng: &mut R| -> Result<()> {
            for layer in &stack.layers {
                let fan_in = layer.weight.shape().1;
                layer.weight.init(init, fan_in, rng, layer.weight_view.slice_mut(theta))?;
                if let Some((f, v)) = &layer.bias {
                    if matches!(init, FieldInit::Skew { .. }) {
                        v.slice_mut(theta).iter_mut().for_each(|b| *b = 0.0);
                    } else {
                        f.init(init, fan_in, rng, v.slice_mut(theta))?;
                    }
                }
            }
            Ok(())
        };
        match &self.body {
            Body::Stack(s) => init_stack(s, &mut theta, rng)?,
            Body::Gated { subs, .. } => {
                // gates start at logistic(0) = 1/2
                for s in subs {
                    init_stack(s, &mut theta, rng)?;
                }
            }
        }
        Ok(theta)
    }

    /// Per-parameter penalty weights: 0 for autonomous coefficients and for
    /// anything that is not a basis coefficient, otherwise 1 or `n²` for a
    /// coefficient of spectral index `n`.
    pub fn penalty_weights(&self, frequency_squared: bool) -> Vec<f64> {
        let mut w = vec![0.0; self.layout.total()];
        let mut mark = |field: &WeightField, view: &ParamView| {
            if let Some(basis) = field.basis() {
                let orders = basis.coeff_orders();
                for (slot, ord) in view.slice_mut(&mut w).iter_mut().zip(orders.iter().cycle()) {
                    *slot = match *ord {
                        0 => 0.0,
                        n if frequency_squared => (n * n) as f64,
                        _ => 1.0,
                    };
                }
            }
        };
        let stacks: Vec<&Stack> = match &self.body {
            Body::Stack(s) => vec![s],
            Body::Gated { subs, .. } => subs.iter().collect(),
        };
        for s in stacks {
            for layer in &s.layers {
                mark(&layer.weight, &layer.weight_view);
                if let Some((f, v)) = &layer.bias {
                    mark(f, v);
                }
            }
        }
        w
    }

    /// `(bucket count, horizon)` of every bucketed field with more than one
    /// bucket.
    fn bucket_counts(&self) -> Vec<(usize, f64)> {
        let stacks: Vec<&Stack> = match &self.body {
            Body::Stack(s) => vec![s],
            Body::Gated { subs, .. } => subs.iter().collect(),
        };
        let mut out = Vec::new();
        for s in stacks {
            for layer in &s.layers {
                let fields = std::iter::once(&layer.weight).chain(layer.bias.as_ref().map(|(f, _)| f));
                for f in fields {
                    if let Some(b) = f.basis().filter(|b| b.is_discontinuous()) {
                        out.push((b.order(), b.horizon()));
                    }
                }
            }
        }
        out
    }

    /// Weight matrices `W_l(t)` of every layer (of every mixture component).
    pub fn weight_matrices(&self, t: f64, theta: &[f64]) -> Result<Vec<Matrix>> {
        Ok(match self.frame(t, theta)?.kind {
            FrameKind::Stack(f) => f.weight_matrices().into_iter().cloned().collect(),
            FrameKind::Gated { subs, .. } => subs
                .iter()
                .flat_map(|f| f.weight_matrices().into_iter().cloned())
                .collect(),
        })
    }

    /// Orthogonal weight fields with their parameter slices, for the
    /// repulsion penalty.
    pub fn ortho_fields(&self) -> Vec<(&OrthoWrappedField, ParamView)> {
        match &self.body {
            Body::Stack(s) => s
                .layers
                .iter()
                .filter_map(|l| match &l.weight {
                    WeightField::Ortho(o) => Some((o, l.weight_view)),
                    _ => None,
                })
                .collect(),
            Body::Gated { .. } => Vec::new(),
        }
    }
}

impl VectorField for DynamicsFn {
    type Frame = DynamicsFrame;

    fn dim(&self) -> usize {
        self.dim
    }

    fn num_params(&self) -> usize {
        self.layout.total()
    }

    fn is_smooth_in_time(&self) -> bool {
        self.smooth
    }

    fn aligned_with_grid(&self, t0: f64, t1: f64, steps: usize) -> bool {
        self.bucket_counts().into_iter().all(|(d, horizon)| {
            let tol = 1e-9 * horizon.max(1.0);
            steps % d == 0 && t0.abs() <= tol && (t1 - horizon).abs() <= tol
        })
    }

    fn frame(&self, t: f64, theta: &[f64]) -> Result<DynamicsFrame> {
        check_dim("DynamicsFn::frame", self.layout.total(), theta.len())?;
        let kind = match &self.body {
            Body::Stack(s) => FrameKind::Stack(s.frame(t, theta)?),
            Body::Gated { gates, subs } => {
                let g = gates.slice(theta);
                let count = subs.len();
                let sigma = (0..count).map(|n| logistic(g[n] * t + g[count + n])).collect();
                let subs = subs.iter().map(|s| s.frame(t, theta)).collect::<Result<_>>()?;
                FrameKind::Gated { t, sigma, subs }
            }
        };
        Ok(DynamicsFrame {
            theta: theta.to_vec(),
            kind,
        })
    }

    fn apply(&self, frame: &DynamicsFrame, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("DynamicsFn::apply", self.dim, x.len())?;
        match (&self.body, &frame.kind) {
            (Body::Stack(s), FrameKind::Stack(f)) => s.apply(f, x),
            (Body::Gated { subs, .. }, FrameKind::Gated { sigma, subs: frames, t }) => {
                let mut out = vec![0.0; self.dim];
                for ((s, f), &sg) in subs.iter().zip(frames).zip(sigma) {
                    axpy(sg, &s.apply(f, x)?, &mut out);
                }
                if out.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NumericOverflow { t: *t });
                }
                Ok(out)
            }
            _ => unreachable!("frame/body mismatch"),
        }
    }

    fn apply_vjp(&self, frame: &DynamicsFrame, x: &[f64], a: &[f64], grad: &mut [f64]) -> Result<Vec<f64>> {
        check_dim("DynamicsFn::apply_vjp", self.dim, a.len())?;
        check_dim("DynamicsFn::apply_vjp grad", self.layout.total(), grad.len())?;
        let theta = &frame.theta;
        match (&self.body, &frame.kind) {
            (Body::Stack(s), FrameKind::Stack(f)) => s.apply_vjp(f, x, a, theta, grad),
            (Body::Gated { gates, subs }, FrameKind::Gated { t, sigma, subs: frames }) => {
                let count = subs.len();
                let mut gx = vec![0.0; self.dim];
                for (n, (s, f)) in subs.iter().zip(frames).enumerate() {
                    let fn_x = s.apply(f, x)?;
                    let dsig = sigma[n] * (1.0 - sigma[n]);
                    let a_fn = dot(a, &fn_x);
                    let gv = gates.slice_mut(grad);
                    gv[n] += a_fn * dsig * t;
                    gv[count + n] += a_fn * dsig;
                    let scaled: Vec<f64> = a.iter().map(|v| v * sigma[n]).collect();
                    let g = s.apply_vjp(f, x, &scaled, theta, grad)?;
                    axpy(1.0, &g, &mut gx);
                }
                Ok(gx)
            }
            _ => unreachable!("frame/body mismatch"),
        }
    }
}

/// Examples per parameter-gradient buffer in [`Batched::apply_vjp`].
pub const VJP_GROUP: usize = 16;

/// A batch of independent states stacked as `[x_1; …; x_B]`, sharing one
/// frame per time. Parameter gradients are summed within fixed groups of
/// [`VJP_GROUP`] examples and the group sums reduced in order, so results do
/// not depend on the thread count.
#[derive(Debug, Clone, Copy)]
pub struct Batched<'a, F> {
    inner: &'a F,
    batch: usize,
    parallel: bool,
}

impl<'a, F: VectorField> Batched<'a, F> {
    pub fn new(inner: &'a F, batch: usize) -> Self {
        Self {
            inner,
            batch,
            parallel: batch >= 2 * VJP_GROUP,
        }
    }

    pub fn sequential(mut self) -> Self {
        self.parallel = false;
        self
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn inner(&self) -> &F {
        self.inner
    }
}

impl<F> VectorField for Batched<'_, F>
where
    F: VectorField + Sync,
    F::Frame: Sync,
{
    type Frame = F::Frame;

    fn dim(&self) -> usize {
        self.inner.dim() * self.batch
    }

    fn num_params(&self) -> usize {
        self.inner.num_params()
    }

    fn is_smooth_in_time(&self) -> bool {
        self.inner.is_smooth_in_time()
    }

    fn aligned_with_grid(&self, t0: f64, t1: f64, steps: usize) -> bool {
        self.inner.aligned_with_grid(t0, t1, steps)
    }

    fn block_dim(&self) -> usize {
        self.inner.dim()
    }

    fn frame(&self, t: f64, theta: &[f64]) -> Result<F::Frame> {
        self.inner.frame(t, theta)
    }

    fn apply(&self, frame: &F::Frame, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("Batched::apply", self.dim(), x.len())?;
        let n = self.inner.dim();
        let parts: Vec<Vec<f64>> = if self.parallel {
            x.par_chunks(n).enumerate().map(|(i, xb)| tag(i, self.inner.apply(frame, xb))).collect::<Result<_>>()?
        } else {
            x.chunks(n).enumerate().map(|(i, xb)| tag(i, self.inner.apply(frame, xb))).collect::<Result<_>>()?
        };
        Ok(parts.concat())
    }

    fn apply_vjp(&self, frame: &F::Frame, x: &[f64], a: &[f64], grad_theta: &mut [f64]) -> Result<Vec<f64>> {
        check_dim("Batched::apply_vjp", self.dim(), x.len())?;
        check_dim("Batched::apply_vjp", self.dim(), a.len())?;
        let n = self.inner.dim();
        let k = self.inner.num_params();
        let group = |(gi, (xg, ag)): (usize, (&[f64], &[f64]))| -> Result<(Vec<f64>, Vec<f64>)> {
            let mut g = vec![0.0; k];
            let mut gx = Vec::with_capacity(xg.len());
            for (j, (xb, ab)) in xg.chunks(n).zip(ag.chunks(n)).enumerate() {
                gx.extend(tag(gi * VJP_GROUP + j, self.inner.apply_vjp(frame, xb, ab, &mut g))?);
            }
            Ok((gx, g))
        };
        let width = n * VJP_GROUP;
        let parts: Vec<(Vec<f64>, Vec<f64>)> = if self.parallel {
            x.par_chunks(width).zip(a.par_chunks(width)).enumerate().map(group).collect::<Result<_>>()?
        } else {
            x.chunks(width).zip(a.chunks(width)).enumerate().map(group).collect::<Result<_>>()?
        };
        let mut gx = Vec::with_capacity(x.len());
        for (gxb, g) in parts {
            gx.extend_from_slice(&gxb);
            axpy(1.0, &g, grad_theta);
        }
        Ok(gx)
    }
}

fn tag<T>(index: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::NumericOverflow { .. } => Error::ExampleDivergence {
            index,
            source: Box::new(e),
        },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timebasis::PolyFamily;
    use nanode_testkit as tk;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn spec(variant: Variant, dim: usize, basis: BasisKind, order: usize) -> DynamicsSpec {
        let mut s = DynamicsSpec::new(variant, dim);
        s.basis = basis;
        s.order = order;
        s.omega = 2.0;
        s
    }

    fn set(f: &DynamicsFn, theta: &mut [f64], name: &str, values: &[f64]) {
        let v = f.layout().get(name).unwrap();
        v.slice_mut(theta).copy_from_slice(values);
    }

    fn fd_check(f: &DynamicsFn, theta: &[f64], x: &[f64], t: f64) {
        let jx = f.jac_x(x, t, theta).unwrap();
        let jt = f.jac_theta(x, t, theta).unwrap();
        let ox = tk::central_jacobian(|y| f.eval(y, t, theta).unwrap(), x, 1e-6);
        let ot = tk::central_jacobian(|p| f.eval(x, t, p).unwrap(), theta, 1e-6);
        assert!(tk::rel_err(jx.as_slice(), &ox.concat(), 1e-6) <= 1e-6, "jac_x");
        assert!(tk::rel_err(jt.as_slice(), &ot.concat(), 1e-6) <= 1e-6, "jac_theta");
    }

    #[test]
    fn identity_layer_with_unit_weights_is_identity_map() {
        let mut s = spec(Variant::Autonomous, 3, BasisKind::Constant, 0);
        s.activation = Activation::Identity;
        s.bias = false;
        let f = DynamicsFn::build(&s, &mut rng(0)).unwrap();
        let mut theta = vec![0.0; f.num_params()];
        set(&f, &mut theta, "layer0.weight", Matrix::identity(3).as_slice());
        for t in [0.0, 0.3, 1.0] {
            assert_eq!(f.eval(&[1.0, -2.0, 0.5], t, &theta).unwrap(), vec![1.0, -2.0, 0.5]);
        }
    }

    #[test]
    fn neutral_gates_average_components() {
        let s = spec(Variant::GatedMixture, 2, BasisKind::Constant, 2);
        let mut r = rng(1);
        let f = DynamicsFn::build(&s, &mut r).unwrap();
        let theta = f.init_params(FieldInit::Normal { scale: 1.0 }, &mut r).unwrap();
        assert!(f.layout().get("gates").unwrap().slice(&theta).iter().all(|&g| g == 0.0));
        let x = [0.3, -0.8];
        let out = f.eval(&x, 0.4, &theta).unwrap();
        let sub = |prefix: &str| {
            let w = Matrix::from_vec(2, 2, f.layout().get(&format!("{prefix}layer0.weight")).unwrap().slice(&theta).to_vec()).unwrap();
            let b = f.layout().get(&format!("{prefix}layer0.bias")).unwrap().slice(&theta).to_vec();
            let mut v = matvec(&w, &x).unwrap();
            for (vi, bi) in v.iter_mut().zip(&b) {
                *vi = (*vi + bi).tanh();
            }
            v
        };
        let (f1, f2) = (sub("sub0."), sub("sub1."));
        for i in 0..2 {
            assert!((out[i] - 0.5 * (f1[i] + f2[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn append_time_reads_the_time_coordinate() {
        let mut s = spec(Variant::AppendTime, 3, BasisKind::Constant, 0);
        s.activation = Activation::Identity;
        s.bias = false;
        let f = DynamicsFn::build(&s, &mut rng(0)).unwrap();
        let mut theta = vec![0.0; f.num_params()];
        let w = Matrix::from_fn(3, 4, |_, j| if j == 3 { 1.0 } else { 0.0 });
        set(&f, &mut theta, "layer0.weight", w.as_slice());
        assert_eq!(f.eval(&[5.0, 6.0, 7.0], 0.625, &theta).unwrap(), vec![0.625; 3]);
    }

    #[test]
    fn single_layer_jacobians_have_closed_forms() {
        let basis = TimeBasis::trigonometric(2, 1.5, 1.0).unwrap();
        let field = WeightField::per_entry(3, 3, basis.clone());
        let theta: Vec<f64> = tk::Lcg::new(4).vec(field.num_params(), -1.0, 1.0);
        let w = field.frame(0.7, &theta).unwrap().matrix().clone();

        let lin = DynamicsFn::single_layer(field.clone(), Activation::Identity).unwrap();
        assert_eq!(lin.jac_x(&[0.2, -0.4, 0.9], 0.7, &theta).unwrap(), w);

        let nl = DynamicsFn::single_layer(field, Activation::Tanh).unwrap();
        assert_eq!(nl.jac_x(&[0.0; 3], 0.7, &theta).unwrap(), w);
    }

    #[test]
    fn constant_jac_theta_is_kronecker_structure() {
        let f = DynamicsFn::single_layer(
            WeightField::per_entry(2, 2, TimeBasis::constant(1.0).unwrap()),
            Activation::Identity,
        )
        .unwrap();
        let x = [3.0, -5.0];
        let jt = f.jac_theta(&x, 0.5, &[0.1, 0.2, 0.3, 0.4]).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let col = jt.column(i * 2 + j);
                let mut expected = [0.0; 2];
                expected[i] = x[j];
                assert_eq!(col, expected);
            }
        }
        let trig0 = DynamicsFn::single_layer(
            WeightField::per_entry(2, 2, TimeBasis::trigonometric(0, 1.0, 1.0).unwrap()),
            Activation::Identity,
        )
        .unwrap();
        assert_eq!(trig0.jac_theta(&x, 0.5, &[0.1, 0.2, 0.3, 0.4]).unwrap(), jt);
    }

    #[test]
    fn every_variant_matches_finite_differences() {
        let cases = [
            spec(Variant::Autonomous, 3, BasisKind::Constant, 0),
            spec(Variant::AppendTime, 3, BasisKind::Constant, 0),
            spec(Variant::Nanode, 3, BasisKind::Trigonometric, 3),
            spec(Variant::Nanode, 3, BasisKind::Polynomial(PolyFamily::Chebyshev), 3),
            spec(Variant::Nanode, 2, BasisKind::Polynomial(PolyFamily::Legendre), 3),
            spec(Variant::Nanode, 4, BasisKind::Polynomial(PolyFamily::Monomial), 2),
            spec(Variant::Nanode, 3, BasisKind::Bucketed, 3),
            spec(Variant::Nanode, 3, BasisKind::RandomFeature, 3),
            spec(Variant::GatedMixture, 3, BasisKind::Constant, 2),
            spec(Variant::DirectHypernet, 3, BasisKind::Constant, 0),
        ];
        for (seed, mut s) in cases.into_iter().enumerate() {
            for layers in [1, 2] {
                s.layers = layers;
                let mut r = rng(seed as u64 * 10 + layers as u64);
                let f = DynamicsFn::build(&s, &mut r).unwrap();
                let theta = f.init_params(FieldInit::Normal { scale: 0.9 }, &mut r).unwrap();
                let x: Vec<f64> = tk::Lcg::new(seed as u64).vec(s.dim, -1.0, 1.0);
                fd_check(&f, &theta, &x, 0.4);
            }
        }
    }

    #[test]
    fn ortho_wrapped_layer_matches_finite_differences() {
        let mut s = spec(Variant::Nanode, 3, BasisKind::Polynomial(PolyFamily::Chebyshev), 3);
        s.ortho = true;
        let mut r = rng(9);
        let f = DynamicsFn::build(&s, &mut r).unwrap();
        let theta = f.init_params(FieldInit::Normal { scale: 1.0 }, &mut r).unwrap();
        fd_check(&f, &theta, &[0.3, 0.1, -0.5], 0.35);
        for w in f.weight_matrices(0.35, &theta).unwrap() {
            assert!(w.orthogonality_defect() < 1e-12);
        }
    }

    #[test]
    fn autonomous_is_time_independent() {
        let s = spec(Variant::Autonomous, 4, BasisKind::Constant, 0);
        let mut r = rng(2);
        let f = DynamicsFn::build(&s, &mut r).unwrap();
        let theta = f.init_params(FieldInit::FanIn, &mut r).unwrap();
        let x = [0.1, 0.2, -0.3, 0.4];
        let a = f.eval(&x, 0.0, &theta).unwrap();
        for t in [0.1, 0.5, 0.99, 1.0] {
            assert_eq!(f.eval(&x, t, &theta).unwrap(), a);
        }
    }

    #[test]
    fn zero_high_order_coefficients_reproduce_autonomous_bitwise() {
        let mut r = rng(3);
        let auto = DynamicsFn::build(&spec(Variant::Autonomous, 3, BasisKind::Constant, 0), &mut r).unwrap();
        let base = auto.init_params(FieldInit::Normal { scale: 1.0 }, &mut r).unwrap();
        let nano = DynamicsFn::build(&spec(Variant::Nanode, 3, BasisKind::Trigonometric, 3), &mut r).unwrap();
        let mut theta = vec![0.0; nano.num_params()];
        for (name, view) in auto.layout().entries() {
            let src = view.slice(&base);
            let dst = nano.layout().get(name).unwrap().slice_mut(&mut theta);
            for (chunk, &v) in dst.chunks_exact_mut(7).zip(src) {
                chunk[0] = v;
            }
        }
        let x = [0.5, -0.25, 0.75];
        for t in [0.0, 0.3, 0.8] {
            assert_eq!(nano.eval(&x, t, &theta).unwrap(), auto.eval(&x, t, &base).unwrap());
        }
    }

    #[test]
    fn degree_one_polynomial_reproduces_append_time() {
        let horizon = 2.0;
        let mut r = rng(5);
        let mut sa = spec(Variant::AppendTime, 3, BasisKind::Constant, 0);
        sa.horizon = horizon;
        let app = DynamicsFn::build(&sa, &mut r).unwrap();
        let ta = app.init_params(FieldInit::Normal { scale: 1.0 }, &mut r).unwrap();
        let mut sp = spec(Variant::Nanode, 3, BasisKind::Polynomial(PolyFamily::Monomial), 2);
        sp.horizon = horizon;
        let poly = DynamicsFn::build(&sp, &mut r).unwrap();
        let mut tp = vec![0.0; poly.num_params()];

        let w = app.layout().get("layer0.weight").unwrap().slice(&ta).to_vec();
        let b = app.layout().get("layer0.bias").unwrap().slice(&ta).to_vec();
        let pw = poly.layout().get("layer0.weight").unwrap();
        let pb = poly.layout().get("layer0.bias").unwrap();
        for i in 0..3 {
            for j in 0..3 {
                pw.slice_mut(&mut tp)[(i * 3 + j) * 2] = w[i * 4 + j];
            }
            // t = T (s + 1) / 2 on the mapped coordinate s
            let wt = w[i * 4 + 3];
            pb.slice_mut(&mut tp)[i * 2] = b[i] + wt * horizon / 2.0;
            pb.slice_mut(&mut tp)[i * 2 + 1] = wt * horizon / 2.0;
        }
        let mut lcg = tk::Lcg::new(77);
        for _ in 0..20 {
            let x = lcg.vec(3, -2.0, 2.0);
            let t = lcg.uniform(0.0, horizon);
            let a = app.eval(&x, t, &ta).unwrap();
            let p = poly.eval(&x, t, &tp).unwrap();
            for (u, v) in a.iter().zip(&p) {
                assert!((u - v).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn batched_matches_independent_examples_bitwise() {
        let s = spec(Variant::Nanode, 3, BasisKind::Trigonometric, 2);
        let mut r = rng(6);
        let f = DynamicsFn::build(&s, &mut r).unwrap();
        let theta = f.init_params(FieldInit::Normal { scale: 1.0 }, &mut r).unwrap();
        let xs = tk::Lcg::new(2).vec(3 * 40, -1.0, 1.0);
        let av = tk::Lcg::new(3).vec(3 * 40, -1.0, 1.0);
        for batched in [Batched::new(&f, 40), Batched::new(&f, 40).sequential()] {
            let frame = batched.frame(0.3, &theta).unwrap();
            let out = batched.apply(&frame, &xs).unwrap();
            let mut g = vec![0.0; f.num_params()];
            let gx = batched.apply_vjp(&frame, &xs, &av, &mut g).unwrap();
            let mut g_ref = vec![0.0; f.num_params()];
            for group in (0..40).collect::<Vec<_>>().chunks(VJP_GROUP) {
                let mut g_group = vec![0.0; f.num_params()];
                for &b in group {
                    let r = 3 * b..3 * (b + 1);
                    assert_eq!(out[r.clone()], f.eval(&xs[r.clone()], 0.3, &theta).unwrap()[..]);
                    let gxb = f.apply_vjp(&frame, &xs[r.clone()], &av[r.clone()], &mut g_group).unwrap();
                    assert_eq!(gx[r], gxb[..]);
                }
                axpy(1.0, &g_group, &mut g_ref);
            }
            assert_eq!(g, g_ref);
        }
    }

    #[test]
    fn overflow_reports_time() {
        let f = DynamicsFn::single_layer(
            WeightField::per_entry(1, 1, TimeBasis::constant(1.0).unwrap()),
            Activation::Identity,
        )
        .unwrap();
        assert_eq!(f.eval(&[f64::MAX], 0.25, &[4.0]), Err(Error::NumericOverflow { t: 0.25 }));
    }

    #[test]
    fn skew_init_gives_skew_weights_at_every_time() {
        let mut s = spec(Variant::Nanode, 4, BasisKind::Trigonometric, 2);
        s.activation = Activation::Identity;
        let mut r = rng(8);
        let f = DynamicsFn::build(&s, &mut r).unwrap();
        let theta = f.init_params(FieldInit::Skew { scale: 1.0 }, &mut r).unwrap();
        for t in [0.0, 0.4, 1.0] {
            let w = &f.weight_matrices(t, &theta).unwrap()[0];
            assert!(w.skew_defect() == 0.0 && w.frobenius_norm() > 0.0);
        }
        assert!(f.layout().get("layer0.bias").unwrap().slice(&theta).iter().all(|&b| b == 0.0));
    }

    #[test]
    fn penalty_weights_skip_autonomous_coefficients() {
        let f = DynamicsFn::build(&spec(Variant::Nanode, 2, BasisKind::Trigonometric, 2), &mut rng(0)).unwrap();
        let uniform = f.penalty_weights(false);
        let squared = f.penalty_weights(true);
        let w = f.layout().get("layer0.weight").unwrap();
        // per entry: a0, a1, a2, b1, b2
        assert_eq!(&uniform[w.range()][..5], &[0.0, 1.0, 1.0, 1.0, 1.0]);
        assert_eq!(&squared[w.range()][..5], &[0.0, 1.0, 4.0, 1.0, 4.0]);
    }

    #[test]
    fn bucketed_alignment_rule() {
        let f = DynamicsFn::build(&spec(Variant::Nanode, 2, BasisKind::Bucketed, 3), &mut rng(0)).unwrap();
        assert!(!f.is_smooth_in_time());
        assert!(f.aligned_with_grid(0.0, 1.0, 12));
        assert!(!f.aligned_with_grid(0.0, 1.0, 10));
    }
}
