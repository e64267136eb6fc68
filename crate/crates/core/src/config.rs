//! Run configuration with whole-document validation.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dynamics::{Activation, DynamicsSpec, FieldInit, Variant};
use crate::grad::GradMethod;
use crate::model::{LossKind, LossSpec, ModelSpec, Stem};
use crate::odeint::{Method, SolveSpec};
use crate::timebasis::{BasisKind, PolyFamily};
use crate::train_tasks::data::TaskName;
use crate::train_tasks::optim::OptimKind;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskConfig,
    pub model: ModelConfig,
    pub basis: BasisConfig,
    pub ortho: OrthoConfig,
    pub solver: SolverConfig,
    pub grad: GradConfig,
    pub train: TrainConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    pub name: TaskName,
    pub n_train: i64,
    pub n_test: i64,
    /// Gaussian jitter on Spirals2D points.
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    /// State dimension `N`.
    pub n: i64,
    pub layers: i64,
    pub activation: Activation,
    pub bias: bool,
    pub input_stem: Stem,
    pub output_stem: Stem,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisName {
    Constant,
    Bucketed,
    Monomial,
    Chebyshev,
    Legendre,
    Trigonometric,
    RandomFeature,
}

impl BasisName {
    pub fn kind(self) -> BasisKind {
        match self {
            BasisName::Constant => BasisKind::Constant,
            BasisName::Bucketed => BasisKind::Bucketed,
            BasisName::Monomial => BasisKind::Polynomial(PolyFamily::Monomial),
            BasisName::Chebyshev => BasisKind::Polynomial(PolyFamily::Chebyshev),
            BasisName::Legendre => BasisKind::Polynomial(PolyFamily::Legendre),
            BasisName::Trigonometric => BasisKind::Trigonometric,
            BasisName::RandomFeature => BasisKind::RandomFeature,
        }
    }

    fn needs_positive_order(self) -> bool {
        !matches!(self, BasisName::Constant | BasisName::Trigonometric)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitName {
    FanIn,
    Normal,
    Skew,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasisConfig {
    pub kind: BasisName,
    /// Basis order `d`; the component count for gated mixtures.
    pub order: i64,
    pub omega: f64,
    pub init: InitName,
    pub init_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrthoConfig {
    pub enabled: bool,
    pub repulsion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub method: Method,
    pub steps: i64,
    pub horizon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainGradMethod {
    Discrete,
    Adjoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradConfig {
    pub method: TrainGradMethod,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyWeighting {
    Uniform,
    FrequencySquared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: OptimKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: i64,
    pub batch: i64,
    pub l2_alpha: f64,
    pub penalty_weighting: PenaltyWeighting,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: String,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            name: TaskName::Spirals2d,
            n_train: 512,
            n_test: 512,
            noise: 0.05,
        }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Nanode,
            n: 8,
            layers: 1,
            activation: Activation::Tanh,
            bias: true,
            input_stem: Stem::Affine,
            output_stem: Stem::Affine,
        }
    }
}

impl Default for BasisConfig {
    fn default() -> Self {
        Self {
            kind: BasisName::Trigonometric,
            order: 2,
            omega: 1.0,
            init: InitName::FanIn,
            init_scale: 1.0,
        }
    }
}

impl Default for OrthoConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            repulsion: 0.0,
        }
    }
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: Method::Rk4,
            steps: 32,
            horizon: 1.0,
        }
    }
}

impl Default for GradConfig {
    fn default() -> Self {
        Self {
            method: TrainGradMethod::Discrete,
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimKind::Adam,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 10,
            batch: 64,
            l2_alpha: 0.0,
            penalty_weighting: PenaltyWeighting::Uniform,
            seed: 0,
        }
    }
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: "runs/default".into(),
        }
    }
}

/// One violated rule, keyed by the dotted config path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub key: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct ConfigErrors(pub Vec<Violation>);

impl ConfigErrors {
    pub fn keys(&self) -> Vec<&str> {
        self.0.iter().map(|v| v.key.as_str()).collect()
    }
}

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "invalid configuration ({} problem(s)):", self.0.len())?;
        for v in &self.0 {
            writeln!(f, "  {}: {}", v.key, v.message)?;
        }
        Ok(())
    }
}

impl RunConfig {
    /// Checks every rule and reports all violations at once.
    pub fn validate(&self) -> Result<(), ConfigErrors> {
        let mut errs = Vec::new();
        let mut bad = |key: &str, message: String| {
            errs.push(Violation {
                key: key.into(),
                message,
            })
        };
        let t = &self.task;
        if t.n_train < 2 {
            bad("task.n_train", format!("must be at least 2, got {}", t.n_train));
        }
        if t.n_test < 2 {
            bad("task.n_test", format!("must be at least 2, got {}", t.n_test));
        }
        if !(t.noise >= 0.0 && t.noise.is_finite()) {
            bad("task.noise", format!("must be finite and non-negative, got {}", t.noise));
        }
        let m = &self.model;
        if m.n < 1 {
            bad("model.n", format!("must be positive, got {}", m.n));
        }
        if m.layers < 1 {
            bad("model.layers", format!("must be positive, got {}", m.layers));
        }
        let (in_dim, out_dim) = self.task.name.dims();
        if m.input_stem == Stem::Identity && m.n != in_dim as i64 {
            bad("model.input_stem", format!("identity stem needs model.n == {in_dim} for this task"));
        }
        if m.output_stem == Stem::Identity && m.n != out_dim as i64 {
            bad("model.output_stem", format!("identity stem needs model.n == {out_dim} for this task"));
        }
        let b = &self.basis;
        if b.order < 0 {
            bad("basis.order", format!("must be non-negative, got {}", b.order));
        } else if m.variant == Variant::Nanode && b.kind.needs_positive_order() && b.order < 1 {
            bad("basis.order", format!("{:?} bases need order >= 1", b.kind));
        } else if m.variant == Variant::GatedMixture && b.order < 1 {
            bad("basis.order", "gated mixtures need at least one component".into());
        }
        if !(b.omega > 0.0 && b.omega.is_finite()) {
            bad("basis.omega", format!("must be positive, got {}", b.omega));
        }
        if !(b.init_scale > 0.0 && b.init_scale.is_finite()) {
            bad("basis.init_scale", format!("must be positive, got {}", b.init_scale));
        }
        if b.init == InitName::Skew && (self.ortho.enabled || !matches!(m.variant, Variant::Nanode | Variant::Autonomous)) {
            bad("basis.init", "skew initialization needs per-entry Nanode or Autonomous weights".into());
        }
        if self.ortho.enabled && m.variant != Variant::Nanode {
            bad("ortho.enabled", "orthogonal wrapping applies to the nanode variant only".into());
        }
        if !(self.ortho.repulsion >= 0.0 && self.ortho.repulsion.is_finite()) {
            bad("ortho.repulsion", format!("must be non-negative, got {}", self.ortho.repulsion));
        }
        let s = &self.solver;
        if s.steps < 1 {
            bad("solver.steps", format!("must be positive, got {}", s.steps));
        }
        if !(s.horizon > 0.0 && s.horizon.is_finite()) {
            bad("solver.horizon", format!("must be positive, got {}", s.horizon));
        }
        if self.grad.method == TrainGradMethod::Adjoint
            && m.variant == Variant::Nanode
            && b.kind == BasisName::Bucketed
            && b.order > 0
            && s.steps > 0
            && s.steps % b.order != 0
        {
            let msg = format!(
                "the adjoint through a bucketed basis needs solver.steps ({}) divisible by basis.order ({})",
                s.steps, b.order
            );
            bad("solver.steps", msg.clone());
            bad("basis.order", msg);
        }
        let tr = &self.train;
        if !(tr.lr > 0.0 && tr.lr.is_finite()) {
            bad("train.lr", format!("must be positive, got {}", tr.lr));
        }
        if tr.epochs < 0 {
            bad("train.epochs", format!("must be non-negative, got {}", tr.epochs));
        }
        if tr.batch < 1 {
            bad("train.batch", format!("must be positive, got {}", tr.batch));
        }
        if !(tr.l2_alpha >= 0.0 && tr.l2_alpha.is_finite()) {
            bad("train.l2_alpha", format!("must be non-negative, got {}", tr.l2_alpha));
        }
        if !(0.0..1.0).contains(&tr.beta1) {
            bad("train.beta1", format!("must lie in [0, 1), got {}", tr.beta1));
        }
        if !(0.0..1.0).contains(&tr.beta2) {
            bad("train.beta2", format!("must lie in [0, 1), got {}", tr.beta2));
        }
        if !(tr.eps > 0.0) {
            bad("train.eps", format!("must be positive, got {}", tr.eps));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ConfigErrors(errs))
        }
    }

    pub fn dynamics_spec(&self) -> DynamicsSpec {
        DynamicsSpec {
            variant: self.model.variant,
            dim: self.model.n.max(0) as usize,
            layers: self.model.layers.max(0) as usize,
            activation: self.model.activation,
            bias: self.model.bias,
            basis: self.basis.kind.kind(),
            order: self.basis.order.max(0) as usize,
            omega: self.basis.omega,
            horizon: self.solver.horizon,
            ortho: self.ortho.enabled,
        }
    }

    pub fn solve_spec(&self) -> crate::Result<SolveSpec> {
        SolveSpec::new(self.solver.method, 0.0, self.solver.horizon, self.solver.steps.max(0) as usize)
    }

    pub fn model_spec(&self) -> crate::Result<ModelSpec> {
        let (in_dim, out_dim) = self.task.name.dims();
        Ok(ModelSpec {
            in_dim,
            out_dim,
            input_stem: self.model.input_stem,
            output_stem: self.model.output_stem,
            dynamics: self.dynamics_spec(),
            solve: self.solve_spec()?,
        })
    }

    pub fn field_init(&self) -> FieldInit {
        let scale = self.basis.init_scale;
        match self.basis.init {
            InitName::FanIn => FieldInit::FanIn,
            InitName::Normal => FieldInit::Normal { scale },
            InitName::Skew => FieldInit::Skew { scale },
        }
    }

    pub fn loss_spec(&self) -> LossSpec {
        LossSpec {
            kind: self.task.name.loss_kind(),
            l2_alpha: self.train.l2_alpha,
            frequency_squared: self.train.penalty_weighting == PenaltyWeighting::FrequencySquared,
            repulsion: self.ortho.repulsion,
        }
    }

    pub fn grad_method(&self) -> GradMethod {
        match self.grad.method {
            TrainGradMethod::Discrete => GradMethod::Discrete,
            TrainGradMethod::Adjoint => GradMethod::Adjoint,
        }
    }
}

impl TaskName {
    /// `(input dim, output dim)`; classification outputs are logits.
    pub fn dims(self) -> (usize, usize) {
        match self {
            TaskName::Reflection1d => (1, 1),
            TaskName::Annuli2d | TaskName::Spirals2d => (2, 2),
        }
    }

    pub fn loss_kind(self) -> LossKind {
        match self {
            TaskName::Reflection1d => LossKind::Mse,
            TaskName::Annuli2d | TaskName::Spirals2d => LossKind::SoftmaxCrossEntropy,
        }
    }
}
