//! Orthogonal-group machinery: Householder reflection chains, Givens
//! rotations and walks, geodesics, and the orthogonally reparameterized
//! time-varying weight field.

use crate::error::{check_dim, Error, Result};
use crate::linalg::{axpy, dot, matexp, Matrix};
use crate::timebasis::TimeBasis;

/// Norm below which a reflection vector is rejected outright.
pub const MIN_REFLECTION_NORM: f64 = 1e-12;

/// Norm below which a time-varying reflection vector is replaced by the
/// identity during evaluation.
pub const FIELD_DEGENERATE_NORM: f64 = 1e-8;

/// `H(u) = I − 2uuᵀ/‖u‖²`.
pub fn householder_reflect(u: &[f64]) -> Result<Matrix> {
    let nsq = dot(u, u);
    if nsq.sqrt() <= MIN_REFLECTION_NORM {
        return Err(Error::DegenerateVector { norm: nsq.sqrt() });
    }
    let n = u.len();
    Ok(Matrix::from_fn(n, n, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - 2.0 * u[i] * u[j] / nsq
    }))
}

/// `y ← H(u) y` given `‖u‖²`.
#[inline]
pub fn reflect_in_place(u: &[f64], norm_sq: f64, y: &mut [f64]) {
    let c = -2.0 * dot(u, y) / norm_sq;
    axpy(c, u, y);
}

/// Pullback of `y ↦ H(u) y` with respect to `u`: returns `(∂(H(u)y)/∂u)ᵀ g`.
pub fn reflect_vjp_u(u: &[f64], norm_sq: f64, y: &[f64], g: &[f64]) -> Vec<f64> {
    let beta = dot(u, y);
    let gu = dot(g, u);
    let a = -2.0 / norm_sq;
    let b = 4.0 * beta * gu / (norm_sq * norm_sq);
    (0..u.len()).map(|k| a * (gu * y[k] + beta * g[k]) + b * u[k]).collect()
}

/// Product `s · H(u₁) ⋯ H(u_d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HouseholderChain {
    vectors: Vec<Vec<f64>>,
    norms_sq: Vec<f64>,
    sign: f64,
}

impl HouseholderChain {
    pub fn new(vectors: Vec<Vec<f64>>, sign: f64) -> Result<Self> {
        if vectors.is_empty() {
            return Err(Error::Contract("a Householder chain needs at least one vector".into()));
        }
        if sign != 1.0 && sign != -1.0 {
            return Err(Error::Contract(format!("chain sign must be ±1, got {sign}")));
        }
        let n = vectors[0].len();
        let mut norms_sq = Vec::with_capacity(vectors.len());
        for v in &vectors {
            check_dim("HouseholderChain::new", n, v.len())?;
            let nsq = dot(v, v);
            if nsq.sqrt() <= MIN_REFLECTION_NORM {
                return Err(Error::DegenerateVector { norm: nsq.sqrt() });
            }
            norms_sq.push(nsq);
        }
        Ok(Self { vectors, norms_sq, sign })
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].len()
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn sign(&self) -> f64 {
        self.sign
    }
}

/// Dense matrix of a chain.
pub fn chain_materialize(chain: &HouseholderChain) -> Matrix {
    let n = chain.dim();
    let mut m = Matrix::identity(n).scale(chain.sign);
    // M ← M H(u) = M − (2/‖u‖²)(M u) uᵀ
    for (u, &nsq) in chain.vectors.iter().zip(&chain.norms_sq) {
        let mu: Vec<f64> = (0..n).map(|r| dot(m.row(r), u)).collect();
        for r in 0..n {
            let c = -2.0 * mu[r] / nsq;
            axpy(c, u, m.row_mut(r));
        }
    }
    m
}

/// Applies the chain to `x` right-to-left without forming any matrix.
pub fn chain_apply(chain: &HouseholderChain, x: &[f64]) -> Result<Vec<f64>> {
    chain_apply_counted(chain, x).map(|(y, _)| y)
}

/// [`chain_apply`] plus the number of floating point operations performed:
/// per reflection, `N` multiplies and `N` adds for `uᵀy`, 2 for the scalar
/// coefficient, and `N` multiplies and `N` adds for the update.
pub fn chain_apply_counted(chain: &HouseholderChain, x: &[f64]) -> Result<(Vec<f64>, u64)> {
    check_dim("chain_apply", chain.dim(), x.len())?;
    let mut y = x.to_vec();
    let mut flops = 0u64;
    for (u, &nsq) in chain.vectors.iter().zip(&chain.norms_sq).rev() {
        let mut beta = 0.0;
        for (ui, yi) in u.iter().zip(&y) {
            beta += ui * yi;
            flops += 2;
        }
        let c = -2.0 * beta / nsq;
        flops += 2;
        for (yi, ui) in y.iter_mut().zip(u) {
            *yi += c * ui;
            flops += 2;
        }
    }
    if chain.sign != 1.0 {
        y.iter_mut().for_each(|v| *v = -*v);
        flops += y.len() as u64;
    }
    Ok((y, flops))
}

/// Dense `M x` with the same operation accounting as [`chain_apply_counted`]:
/// `N` multiplies and `N` adds per output row.
pub fn dense_apply_counted(m: &Matrix, x: &[f64]) -> Result<(Vec<f64>, u64)> {
    check_dim("dense_apply", m.cols(), x.len())?;
    let mut flops = 0u64;
    let mut out = Vec::with_capacity(m.rows());
    for r in 0..m.rows() {
        let mut s = 0.0;
        for (a, b) in m.row(r).iter().zip(x) {
            s += a * b;
            flops += 2;
        }
        out.push(s);
    }
    Ok((out, flops))
}

/// Givens rotation in the `(i, j)` plane (zero-based, `i < j`):
/// identity except `(i,i) = (j,j) = cos θ`, `(i,j) = sin θ`, `(j,i) = −sin θ`.
pub fn givens(n: usize, i: usize, j: usize, theta: f64) -> Result<Matrix> {
    check_pair(n, i, j)?;
    let mut g = Matrix::identity(n);
    let (s, c) = theta.sin_cos();
    g[(i, i)] = c;
    g[(j, j)] = c;
    g[(i, j)] = s;
    g[(j, i)] = -s;
    Ok(g)
}

fn check_pair(n: usize, i: usize, j: usize) -> Result<()> {
    if !(i < j && j < n) {
        return Err(Error::Contract(format!("Givens pair ({i}, {j}) invalid for N = {n}")));
    }
    Ok(())
}

/// `M ← M · G(i, j, θ)`, touching only columns `i` and `j`.
pub fn rotate_columns(m: &mut Matrix, i: usize, j: usize, theta: f64) {
    let (s, c) = theta.sin_cos();
    for r in 0..m.rows() {
        let a = m[(r, i)];
        let b = m[(r, j)];
        m[(r, i)] = c * a - s * b;
        m[(r, j)] = s * a + c * b;
    }
}

/// Equal-angle coordinate walk `Q · G(i₁,j₁,θ) ⋯ G(i_k,j_k,θ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GivensWalk {
    start: Matrix,
    pairs: Vec<(usize, usize)>,
    angle: f64,
}

impl GivensWalk {
    pub fn new(start: Matrix, pairs: Vec<(usize, usize)>, angle: f64) -> Result<Self> {
        if !start.is_square() {
            return Err(Error::Contract("walk start must be square".into()));
        }
        for &(i, j) in &pairs {
            check_pair(start.rows(), i, j)?;
        }
        Ok(Self { start, pairs, angle })
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn angle(&self) -> f64 {
        self.angle
    }

    pub fn with_angle(&self, angle: f64) -> Self {
        Self {
            angle,
            ..self.clone()
        }
    }
}

pub fn walk_materialize(walk: &GivensWalk) -> Matrix {
    let mut w = walk.start.clone();
    for &(i, j) in &walk.pairs {
        rotate_columns(&mut w, i, j, walk.angle);
    }
    w
}

/// Geodesic `γ(t) = Q exp(tΩ)` through `Q` with skew-symmetric direction Ω.
pub fn geodesic(q: &Matrix, omega: &Matrix, t: f64) -> Result<Matrix> {
    if !q.is_square() || q.orthogonality_defect() > 1e-8 {
        return Err(Error::Contract("geodesic base point must be orthogonal".into()));
    }
    check_dim("geodesic", q.cols(), omega.rows())?;
    if omega.skew_defect() > 1e-12 * omega.frobenius_norm().max(1.0) {
        return Err(Error::Contract("geodesic direction must be skew-symmetric".into()));
    }
    q.matmul(&matexp(&omega.scale(t))?)
}

/// Time-varying orthogonal weight `W(t) = H(u₁(t)) ⋯ H(u_N(t))` (sign +1)
/// where every coordinate of every `u_i(t)` is its own [`TimeBasis`]
/// expansion. Coefficients are laid out `[vector i][coordinate c][k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthoWrappedField {
    n: usize,
    basis: TimeBasis,
}

/// Reflection vectors of an [`OrthoWrappedField`] at one time.
/// `None` marks a degenerate vector replaced by the identity.
#[derive(Debug, Clone)]
pub struct Reflections {
    pub vectors: Vec<Option<(Vec<f64>, f64)>>,
    pub features: Vec<f64>,
}

impl Reflections {
    /// `y ← H(u₁) ⋯ H(u_N) y`.
    pub fn apply(&self, y: &mut [f64]) {
        for (u, nsq) in self.vectors.iter().rev().flatten() {
            reflect_in_place(u, *nsq, y);
        }
    }

    /// `y ← (H(u₁) ⋯ H(u_N))ᵀ y`.
    pub fn apply_transpose(&self, y: &mut [f64]) {
        for (u, nsq) in self.vectors.iter().flatten() {
            reflect_in_place(u, *nsq, y);
        }
    }

    pub fn materialize(&self, n: usize) -> Matrix {
        let mut m = Matrix::identity(n);
        for (u, nsq) in self.vectors.iter().flatten() {
            let mu: Vec<f64> = (0..n).map(|r| dot(m.row(r), u)).collect();
            for r in 0..n {
                axpy(-2.0 * mu[r] / nsq, u, m.row_mut(r));
            }
        }
        m
    }
}

impl OrthoWrappedField {
    pub fn new(n: usize, basis: TimeBasis) -> Result<Self> {
        if n == 0 {
            return Err(Error::Contract("orthogonal field needs N >= 1".into()));
        }
        Ok(Self { n, basis })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn basis(&self) -> &TimeBasis {
        &self.basis
    }

    pub fn num_params(&self) -> usize {
        self.n * self.n * self.basis.num_coeffs()
    }

    pub fn reflections(&self, coeffs: &[f64], t: f64) -> Result<Reflections> {
        check_dim("OrthoWrappedField", self.num_params(), coeffs.len())?;
        let k = self.basis.num_coeffs();
        let features = self.basis.features(t)?;
        let vectors = coeffs
            .chunks(self.n * k)
            .map(|vec_coeffs| {
                let u: Vec<f64> = vec_coeffs.chunks(k).map(|c| dot(c, &features)).collect();
                let nsq = dot(&u, &u);
                (nsq.sqrt() >= FIELD_DEGENERATE_NORM).then_some((u, nsq))
            })
            .collect();
        Ok(Reflections { vectors, features })
    }

    pub fn eval(&self, coeffs: &[f64], t: f64) -> Result<Matrix> {
        Ok(self.reflections(coeffs, t)?.materialize(self.n))
    }

    /// Accumulates `∂(gᵀ W(t) x)/∂coeffs` into `grad` and returns `W(t)ᵀ g`.
    pub fn backprop(&self, refl: &Reflections, x: &[f64], g: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let n = self.n;
        let k = self.basis.num_coeffs();
        // inputs[i] = H(u_{i+1}) ⋯ H(u_N) x, the vector reflected by H(u_i)
        let mut inputs = vec![Vec::new(); n];
        let mut y = x.to_vec();
        for i in (0..n).rev() {
            inputs[i] = y.clone();
            if let Some((u, nsq)) = &refl.vectors[i] {
                reflect_in_place(u, *nsq, &mut y);
            }
        }
        let mut gbar = g.to_vec();
        for i in 0..n {
            if let Some((u, nsq)) = &refl.vectors[i] {
                let ubar = reflect_vjp_u(u, *nsq, &inputs[i], &gbar);
                for (c, &uc) in ubar.iter().enumerate() {
                    let base = (i * n + c) * k;
                    axpy(uc, &refl.features, &mut grad[base..base + k]);
                }
                reflect_in_place(u, *nsq, &mut gbar);
            }
        }
        gbar
    }

    /// Repulsive penalty `ε Σ_i 1/‖u_i(t)‖²` and its coefficient gradient
    /// (accumulated into `grad`). Degenerate vectors contribute nothing.
    pub fn repulsion(&self, coeffs: &[f64], t: f64, eps: f64, grad: &mut [f64]) -> Result<f64> {
        let refl = self.reflections(coeffs, t)?;
        let k = self.basis.num_coeffs();
        let mut value = 0.0;
        for (i, v) in refl.vectors.iter().enumerate() {
            if let Some((u, nsq)) = v {
                value += eps / nsq;
                let scale = -2.0 * eps / (nsq * nsq);
                for (c, &uc) in u.iter().enumerate() {
                    let base = (i * self.n + c) * k;
                    axpy(scale * uc, &refl.features, &mut grad[base..base + k]);
                }
            }
        }
        Ok(value)
    }
}
