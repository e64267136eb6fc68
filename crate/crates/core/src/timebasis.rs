//! Scalar functions of time `φ(t; α)` used to parameterize individual
//! weight entries.
//!
//! Every basis kind here is linear in its coefficients: `φ(t; α) = αᵀ z(t)`
//! for a feature map `z` fixed at construction. A [`TimeBasis`] therefore
//! describes only the feature map; coefficients live in the model's flat
//! parameter vector and are addressed through [`ParamView`]s.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolyFamily {
    Monomial,
    Chebyshev,
    Legendre,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    Constant,
    Bucketed,
    Polynomial(PolyFamily),
    Trigonometric,
    RandomFeature,
}

/// Frozen frequencies and phases of a random-feature basis.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomFeatures {
    pub zeta: Vec<f64>,
    pub eta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeBasis {
    kind: BasisKind,
    order: usize,
    omega: f64,
    horizon: f64,
    frozen: Option<RandomFeatures>,
}

/// Slack allowed past the ends of `[0, T]` so grid points computed in
/// floating point still land in the domain.
const DOMAIN_SLACK: f64 = 1e-9;

impl TimeBasis {
    pub fn constant(horizon: f64) -> Result<Self> {
        Self::build(BasisKind::Constant, 0, 1.0, horizon, None)
    }

    pub fn bucketed(buckets: usize, horizon: f64) -> Result<Self> {
        Self::build(BasisKind::Bucketed, buckets, 1.0, horizon, None)
    }

    /// `order` coefficients, i.e. degree `order − 1`.
    pub fn polynomial(family: PolyFamily, order: usize, horizon: f64) -> Result<Self> {
        Self::build(BasisKind::Polynomial(family), order, 1.0, horizon, None)
    }

    pub fn trigonometric(order: usize, omega: f64, horizon: f64) -> Result<Self> {
        Self::build(BasisKind::Trigonometric, order, omega, horizon, None)
    }

    /// Draws `ζ_k ~ ω·Normal(0, var = d)` and `η_k ~ Uniform[0, 2π)` once.
    pub fn random_feature<R: Rng + ?Sized>(order: usize, omega: f64, horizon: f64, rng: &mut R) -> Result<Self> {
        if order == 0 {
            return Err(Error::Contract("random-feature basis needs order >= 1".into()));
        }
        let normal = Normal::new(0.0, (order as f64).sqrt()).expect("finite std");
        let uniform = Uniform::new(0.0, 2.0 * PI).expect("valid range");
        let zeta = (0..order).map(|_| omega * normal.sample(rng)).collect();
        let eta = (0..order).map(|_| uniform.sample(rng)).collect();
        Self::random_feature_with(RandomFeatures { zeta, eta }, omega, horizon)
    }

    pub fn random_feature_with(frozen: RandomFeatures, omega: f64, horizon: f64) -> Result<Self> {
        if frozen.zeta.len() != frozen.eta.len() {
            return Err(Error::Contract("zeta and eta must have equal length".into()));
        }
        let order = frozen.zeta.len();
        Self::build(BasisKind::RandomFeature, order, omega, horizon, Some(frozen))
    }

    /// Builds a basis of the given kind, drawing random features from `rng`
    /// when needed.
    pub fn of_kind<R: Rng + ?Sized>(kind: BasisKind, order: usize, omega: f64, horizon: f64, rng: &mut R) -> Result<Self> {
        match kind {
            BasisKind::Constant => Self::constant(horizon),
            BasisKind::Bucketed => Self::bucketed(order, horizon),
            BasisKind::Polynomial(f) => Self::polynomial(f, order, horizon),
            BasisKind::Trigonometric => Self::trigonometric(order, omega, horizon),
            BasisKind::RandomFeature => Self::random_feature(order, omega, horizon, rng),
        }
    }

    fn build(kind: BasisKind, order: usize, omega: f64, horizon: f64, frozen: Option<RandomFeatures>) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::Contract(format!("horizon must be positive, got {horizon}")));
        }
        if !(omega.is_finite() && omega > 0.0) {
            return Err(Error::Contract(format!("frequency scale must be positive, got {omega}")));
        }
        let needs_order = matches!(kind, BasisKind::Bucketed | BasisKind::Polynomial(_) | BasisKind::RandomFeature);
        if needs_order && order == 0 {
            return Err(Error::Contract(format!("{kind:?} basis needs order >= 1")));
        }
        Ok(Self {
            kind,
            order,
            omega,
            horizon,
            frozen,
        })
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn frozen(&self) -> Option<&RandomFeatures> {
        self.frozen.as_ref()
    }

    /// Number of coefficients α this basis consumes.
    pub fn num_coeffs(&self) -> usize {
        match self.kind {
            BasisKind::Constant => 1,
            BasisKind::Bucketed | BasisKind::Polynomial(_) | BasisKind::RandomFeature => self.order,
            BasisKind::Trigonometric => 2 * self.order + 1,
        }
    }

    /// True when `φ` is piecewise constant with jumps.
    pub fn is_discontinuous(&self) -> bool {
        self.kind == BasisKind::Bucketed && self.order > 1
    }

    fn check_time(&self, t: f64) -> Result<f64> {
        let slack = DOMAIN_SLACK * self.horizon.max(1.0);
        if !t.is_finite() || t < -slack || t > self.horizon + slack {
            return Err(Error::OutOfDomain { t, horizon: self.horizon });
        }
        Ok(t.clamp(0.0, self.horizon))
    }

    /// Bucket selected at time `t`: `min(⌊t·d/T⌋, d−1)`, with a 1e-9 guard
    /// so grid points computed as `k·T/L` do not round into the previous
    /// bucket.
    pub fn bucket_index(&self, t: f64) -> usize {
        let d = self.order;
        let raw = (t * d as f64 / self.horizon + 1e-9).floor();
        (raw.max(0.0) as usize).min(d - 1)
    }

    fn normalized(&self, t: f64) -> f64 {
        2.0 * t / self.horizon - 1.0
    }

    /// Feature vector `z(t)` with `φ(t; α) = αᵀ z(t)`.
    pub fn features(&self, t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.num_coeffs()];
        self.features_into(t, &mut out)?;
        Ok(out)
    }

    pub fn features_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        check_dim("TimeBasis::features_into", self.num_coeffs(), out.len())?;
        let t = self.check_time(t)?;
        match self.kind {
            BasisKind::Constant => out[0] = 1.0,
            BasisKind::Bucketed => {
                out.iter_mut().for_each(|v| *v = 0.0);
                out[self.bucket_index(t)] = 1.0;
            }
            BasisKind::Polynomial(family) => poly_values(family, self.normalized(t), out),
            BasisKind::Trigonometric => {
                let d = self.order;
                out[0] = 1.0;
                for n in 1..=d {
                    let arg = n as f64 * self.omega * t;
                    out[n] = arg.cos();
                    out[d + n] = arg.sin();
                }
            }
            BasisKind::RandomFeature => {
                let rf = self.frozen.as_ref().expect("random features present");
                for (k, o) in out.iter_mut().enumerate() {
                    *o = (rf.zeta[k] * t + rf.eta[k]).cos();
                }
            }
        }
        Ok(())
    }

    /// `dz/dt`. Bucketed bases report 0 (derivative away from breakpoints).
    pub fn feature_derivatives(&self, t: f64) -> Result<Vec<f64>> {
        let t = self.check_time(t)?;
        let mut out = vec![0.0; self.num_coeffs()];
        match self.kind {
            BasisKind::Constant | BasisKind::Bucketed => {}
            BasisKind::Polynomial(family) => {
                let mut vals = vec![0.0; out.len()];
                poly_values_and_derivs(family, self.normalized(t), &mut vals, &mut out);
                let ds_dt = 2.0 / self.horizon;
                out.iter_mut().for_each(|v| *v *= ds_dt);
            }
            BasisKind::Trigonometric => {
                let d = self.order;
                for n in 1..=d {
                    let w = n as f64 * self.omega;
                    out[n] = -w * (w * t).sin();
                    out[d + n] = w * (w * t).cos();
                }
            }
            BasisKind::RandomFeature => {
                let rf = self.frozen.as_ref().expect("random features present");
                for (k, o) in out.iter_mut().enumerate() {
                    *o = -rf.zeta[k] * (rf.zeta[k] * t + rf.eta[k]).sin();
                }
            }
        }
        Ok(out)
    }

    /// `φ(t; α)`. Chebyshev expansions are summed with the Clenshaw
    /// recurrence; other kinds use the feature vector directly.
    pub fn eval(&self, coeffs: &[f64], t: f64) -> Result<f64> {
        check_dim("TimeBasis::eval", self.num_coeffs(), coeffs.len())?;
        if let BasisKind::Polynomial(PolyFamily::Chebyshev) = self.kind {
            let t = self.check_time(t)?;
            return Ok(clenshaw(coeffs, self.normalized(t)));
        }
        let z = self.features(t)?;
        Ok(z.iter().zip(coeffs).map(|(a, b)| a * b).sum())
    }

    /// `upstream · ∂φ/∂α`, which for these linear bases is `upstream · z(t)`.
    pub fn grad_coeffs(&self, t: f64, upstream: f64) -> Result<Vec<f64>> {
        let mut z = self.features(t)?;
        z.iter_mut().for_each(|v| *v *= upstream);
        Ok(z)
    }

    /// `dφ/dt`.
    pub fn time_derivative(&self, coeffs: &[f64], t: f64) -> Result<f64> {
        check_dim("TimeBasis::time_derivative", self.num_coeffs(), coeffs.len())?;
        let dz = self.feature_derivatives(t)?;
        Ok(dz.iter().zip(coeffs).map(|(a, b)| a * b).sum())
    }

    /// Spectral index of each coefficient: 0 marks the autonomous component.
    /// Polynomial degree, trigonometric frequency; bucket entries are all
    /// index 0 and random features (no constant feature) are all index 1.
    pub fn coeff_orders(&self) -> Vec<usize> {
        match self.kind {
            BasisKind::Constant => vec![0],
            BasisKind::Bucketed => vec![0; self.order],
            BasisKind::Polynomial(_) => (0..self.order).collect(),
            BasisKind::Trigonometric => {
                let mut v = vec![0];
                v.extend(1..=self.order);
                v.extend(1..=self.order);
                v
            }
            BasisKind::RandomFeature => vec![1; self.order],
        }
    }

    /// Fills one entry's coefficients for a layer with the given fan-in.
    pub fn init_coeffs<R: Rng + ?Sized>(&self, scheme: CoeffInit, fan_in: usize, rng: &mut R, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.num_coeffs());
        let lecun = 1.0 / (fan_in.max(1) as f64).sqrt();
        match scheme {
            CoeffInit::FanIn => {
                let base = match self.kind {
                    // E[cos²] = 1/2, spread over d features
                    BasisKind::RandomFeature => lecun * (2.0 / self.order as f64).sqrt(),
                    _ => lecun,
                };
                let normal = Normal::new(0.0, base).expect("finite std");
                let orders = self.coeff_orders();
                for (o, &ord) in out.iter_mut().zip(&orders) {
                    let autonomous = ord == 0 || self.kind == BasisKind::RandomFeature;
                    *o = if autonomous { normal.sample(rng) } else { 0.0 };
                }
            }
            CoeffInit::Normal { scale } => {
                let normal = Normal::new(0.0, scale * lecun).expect("finite std");
                out.iter_mut().for_each(|o| *o = normal.sample(rng));
            }
        }
    }
}

/// Coefficient initialization for a single basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CoeffInit {
    /// Autonomous coefficients ~ Normal(0, 1/fan_in), everything else 0.
    FanIn,
    /// Every coefficient ~ Normal(0, scale²/fan_in).
    Normal { scale: f64 },
}

fn poly_values(family: PolyFamily, s: f64, out: &mut [f64]) {
    let d = out.len();
    if d == 0 {
        return;
    }
    out[0] = 1.0;
    if d == 1 {
        return;
    }
    out[1] = s;
    for n in 1..d - 1 {
        let nf = n as f64;
        out[n + 1] = match family {
            PolyFamily::Monomial => s * out[n],
            PolyFamily::Chebyshev => 2.0 * s * out[n] - out[n - 1],
            PolyFamily::Legendre => ((2.0 * nf + 1.0) * s * out[n] - nf * out[n - 1]) / (nf + 1.0),
        };
    }
}

fn poly_values_and_derivs(family: PolyFamily, s: f64, vals: &mut [f64], ders: &mut [f64]) {
    poly_values(family, s, vals);
    let d = vals.len();
    if d == 0 {
        return;
    }
    ders[0] = 0.0;
    if d == 1 {
        return;
    }
    ders[1] = 1.0;
    for n in 1..d - 1 {
        let nf = n as f64;
        ders[n + 1] = match family {
            PolyFamily::Monomial => vals[n] + s * ders[n],
            PolyFamily::Chebyshev => 2.0 * vals[n] + 2.0 * s * ders[n] - ders[n - 1],
            PolyFamily::Legendre => {
                ((2.0 * nf + 1.0) * (vals[n] + s * ders[n]) - nf * ders[n - 1]) / (nf + 1.0)
            }
        };
    }
}

/// `Σ c_k T_k(s)` by the Clenshaw recurrence.
pub fn clenshaw(coeffs: &[f64], s: f64) -> f64 {
    let mut b1 = 0.0;
    let mut b2 = 0.0;
    for &c in coeffs.iter().skip(1).rev() {
        let b0 = c + 2.0 * s * b1 - b2;
        b2 = b1;
        b1 = b0;
    }
    match coeffs.first() {
        Some(&c0) => c0 + s * b1 - b2,
        None => 0.0,
    }
}

/// A contiguous slice of the global parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamView {
    pub offset: usize,
    pub len: usize,
}

impl ParamView {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }

    pub fn slice<'a>(&self, theta: &'a [f64]) -> &'a [f64] {
        &theta[self.range()]
    }

    pub fn slice_mut<'a>(&self, theta: &'a mut [f64]) -> &'a mut [f64] {
        &mut theta[self.range()]
    }
}

/// Named, disjoint, gap-free partition of a parameter vector.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamLayout {
    entries: Vec<(String, ParamView)>,
    total: usize,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn alloc(&mut self, name: impl Into<String>, len: usize) -> ParamView {
        let view = ParamView { offset: self.total, len };
        self.total += len;
        self.entries.push((name.into(), view));
        view
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn entries(&self) -> &[(String, ParamView)] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<ParamView> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    /// Views are consecutive, disjoint and cover `0..total`.
    pub fn is_partition(&self) -> bool {
        let mut next = 0;
        for (_, v) in &self.entries {
            if v.offset != next {
                return false;
            }
            next += v.len;
        }
        next == self.total
    }
}
