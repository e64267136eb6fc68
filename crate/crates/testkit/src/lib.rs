//! Independent numerical oracles for the nanode test suites.
//!
//! Nothing in here calls into the library under test. Each helper is the
//! simplest textbook route to the quantity it computes, so that tests can
//! compare the optimized implementation against something obviously right.

use std::f64::consts::PI;

/// Small deterministic generator (64-bit LCG + xorshift output) so the
/// oracles carry no dependencies.
#[derive(Debug, Clone)]
pub struct Lcg(u64);

impl Lcg {
    pub fn new(seed: u64) -> Self {
        Self(seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let mut x = self.0;
        x ^= x >> 33;
        x = x.wrapping_mul(0xff51afd7ed558ccd);
        x ^= x >> 33;
        x
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let u = (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        lo + (hi - lo) * u
    }

    pub fn vec(&mut self, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|_| self.uniform(lo, hi)).collect()
    }
}

/// Triple-loop reference for `A x`.
pub fn naive_matvec(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for i in 0..a.len() {
        let mut s = 0.0;
        for j in 0..x.len() {
            s += a[i][j] * x[j];
        }
        out[i] = s;
    }
    out
}

pub fn naive_matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let m = b[0].len();
    let k = b.len();
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for l in 0..k {
                s += a[i][l] * b[l][j];
            }
            out[i][j] = s;
        }
    }
    out
}

/// Largest singular value of a 2x2 matrix from the closed form of the
/// eigenvalues of `AᵀA`.
pub fn sigma_max_2x2(a: [[f64; 2]; 2]) -> f64 {
    let s = a[0][0].powi(2) + a[0][1].powi(2) + a[1][0].powi(2) + a[1][1].powi(2);
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    ((s + (s * s - 4.0 * det * det).max(0.0).sqrt()) / 2.0).sqrt()
}

/// Largest singular value of a 3x3 matrix: trigonometric closed form for the
/// largest eigenvalue of the symmetric matrix `AᵀA`.
pub fn sigma_max_3x3(a: &[Vec<f64>]) -> f64 {
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = (0..3).map(|k| a[k][i] * a[k][j]).sum();
        }
    }
    let p1 = m[0][1].powi(2) + m[0][2].powi(2) + m[1][2].powi(2);
    let q = (m[0][0] + m[1][1] + m[2][2]) / 3.0;
    if p1 == 0.0 {
        return m[0][0].max(m[1][1]).max(m[2][2]).sqrt();
    }
    let p2 = (m[0][0] - q).powi(2) + (m[1][1] - q).powi(2) + (m[2][2] - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let mut b = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            b[i][j] = (m[i][j] - if i == j { q } else { 0.0 }) / p;
        }
    }
    let r = det3(&b) / 2.0;
    let phi = if r <= -1.0 {
        PI / 3.0
    } else if r >= 1.0 {
        0.0
    } else {
        r.acos() / 3.0
    };
    (q + 2.0 * p * phi.cos()).sqrt()
}

fn det3(b: &[[f64; 3]; 3]) -> f64 {
    b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1]) - b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0])
        + b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0])
}

/// Determinant by cofactor expansion; exact structure, intended for N ≤ 5.
pub fn det_cofactor(a: &[Vec<f64>]) -> f64 {
    let n = a.len();
    match n {
        0 => 1.0,
        1 => a[0][0],
        2 => a[0][0] * a[1][1] - a[0][1] * a[1][0],
        _ => {
            let mut total = 0.0;
            for col in 0..n {
                let minor: Vec<Vec<f64>> = a[1..]
                    .iter()
                    .map(|row| row.iter().enumerate().filter(|(j, _)| *j != col).map(|(_, v)| *v).collect())
                    .collect();
                let sign = if col % 2 == 0 { 1.0 } else { -1.0 };
                total += sign * a[0][col] * det_cofactor(&minor);
            }
            total
        }
    }
}

/// Least squares `min ‖X c − y‖` by modified Gram-Schmidt QR.
/// Returns `(coefficients, residual 2-norm)`.
pub fn lstsq(design: &[Vec<f64>], y: &[f64]) -> (Vec<f64>, f64) {
    let m = design.len();
    let n = design[0].len();
    let mut q: Vec<Vec<f64>> = (0..n).map(|j| (0..m).map(|i| design[i][j]).collect()).collect();
    let mut r = vec![vec![0.0; n]; n];
    for j in 0..n {
        for k in 0..j {
            let proj: f64 = (0..m).map(|i| q[k][i] * q[j][i]).sum();
            r[k][j] = proj;
            for i in 0..m {
                q[j][i] -= proj * q[k][i];
            }
        }
        let nrm = q[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        r[j][j] = nrm;
        for v in q[j].iter_mut() {
            *v /= nrm;
        }
    }
    let qty: Vec<f64> = (0..n).map(|j| (0..m).map(|i| q[j][i] * y[i]).sum()).collect();
    let mut c = vec![0.0; n];
    for j in (0..n).rev() {
        let s: f64 = ((j + 1)..n).map(|k| r[j][k] * c[k]).sum();
        c[j] = (qty[j] - s) / r[j][j];
    }
    let resid = (0..m)
        .map(|i| {
            let fit: f64 = (0..n).map(|j| design[i][j] * c[j]).sum();
            (fit - y[i]).powi(2)
        })
        .sum::<f64>()
        .sqrt();
    (c, resid)
}

/// Design row `[1, cos θ, …, cos kθ, sin θ, …, sin kθ]`.
pub fn trig_design_row(theta: f64, k: usize) -> Vec<f64> {
    let mut row = vec![1.0];
    row.extend((1..=k).map(|s| (s as f64 * theta).cos()));
    row.extend((1..=k).map(|s| (s as f64 * theta).sin()));
    row
}

/// Composite Simpson rule with `n` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    assert!(n % 2 == 0 && n > 0);
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + h * i as f64);
    }
    s * h / 3.0
}

/// Central-difference gradient of a scalar function; step scaled by
/// `max(1, |x_i|)`.
pub fn central_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = step * x[i].abs().max(1.0);
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Central-difference Jacobian of a vector function, `out[i][j] = ∂f_i/∂x_j`.
pub fn central_jacobian(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], step: f64) -> Vec<Vec<f64>> {
    let m = f(x).len();
    let mut jac = vec![vec![0.0; x.len()]; m];
    let mut probe = x.to_vec();
    for j in 0..x.len() {
        let h = step * x[j].abs().max(1.0);
        probe[j] = x[j] + h;
        let up = f(&probe);
        probe[j] = x[j] - h;
        let down = f(&probe);
        probe[j] = x[j];
        for i in 0..m {
            jac[i][j] = (up[i] - down[i]) / (2.0 * h);
        }
    }
    jac
}

/// Norm-wise relative error `‖a − b‖_∞ / max(‖b‖_∞, floor)`.
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let scale = b.iter().fold(0.0f64, |m, y| m.max(y.abs())).max(floor);
    diff / scale
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn det_of_permutation() {
        let p = vec![vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]];
        assert_eq!(det_cofactor(&p), -1.0);
    }

    #[test]
    fn lstsq_recovers_exact_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let design: Vec<Vec<f64>> = xs.iter().map(|&x| vec![1.0, x]).collect();
        let y: Vec<f64> = xs.iter().map(|&x| 2.0 - 3.0 * x).collect();
        let (c, r) = lstsq(&design, &y);
        assert!((c[0] - 2.0).abs() < 1e-12 && (c[1] + 3.0).abs() < 1e-12 && r < 1e-12);
    }

    #[test]
    fn simpson_is_exact_for_cubics() {
        let v = simpson(|x| x * x * x - x, 0.0, 2.0, 4);
        assert!((v - 2.0).abs() < 1e-12);
    }

    #[test]
    fn sigma_closed_forms_agree_on_diagonal() {
        assert!((sigma_max_2x2([[3.0, 0.0], [0.0, -1.0]]) - 3.0).abs() < 1e-12);
        let a = vec![vec![1.0, 0.0, 0.0], vec![0.0, -4.0, 0.0], vec![0.0, 0.0, 2.0]];
        assert!((sigma_max_3x3(&a) - 4.0).abs() < 1e-12);
    }
}
