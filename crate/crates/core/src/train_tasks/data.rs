use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::Targets;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskName {
    /// Regression `x ↦ −x` on `[−1, 1]` with `|x| < 0.05` excluded.
    Reflection1d,
    /// Disk of radius 1 (label 0) inside a ring `1.5 ≤ r ≤ 2.5` (label 1).
    Annuli2d,
    /// Two interleaved three-turn spirals.
    Spirals2d,
}

/// Half-width of the excluded gap around 0 in Reflection1D.
pub const REFLECTION_GAP: f64 = 0.05;
pub const SPIRAL_TURNS: f64 = 3.0;
/// Radius at the start of each spiral arm; arms end at radius 1.
pub const SPIRAL_INNER_RADIUS: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: TaskName,
    pub seed: u64,
    pub inputs: Matrix,
    pub targets: Targets,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `x0[,x1],target` rows with a header.
    pub fn to_csv(&self) -> String {
        let d = self.inputs.cols();
        let mut out: Vec<String> = (0..d).map(|i| format!("x{i}")).collect();
        out.push(match self.targets {
            Targets::Values(_) => "target".into(),
            Targets::Labels(_) => "label".into(),
        });
        let mut s = out.join(",");
        s.push('\n');
        for r in 0..self.len() {
            let mut fields: Vec<String> = self.inputs.row(r).iter().map(|v| format!("{v}")).collect();
            fields.push(match &self.targets {
                Targets::Values(t) => format!("{}", t[(r, 0)]),
                Targets::Labels(l) => format!("{}", l[r]),
            });
            s.push_str(&fields.join(","));
            s.push('\n');
        }
        s
    }
}

/// Label of a noiseless Annuli2D point, `None` in the gap between classes.
pub fn annuli_label(p: [f64; 2]) -> Option<usize> {
    let r = p[0].hypot(p[1]);
    if r <= 1.0 {
        Some(0)
    } else if (1.5..=2.5).contains(&r) {
        Some(1)
    } else {
        None
    }
}

/// Noiseless point of arm `class` at arm position `u ∈ [0, 1]`.
pub fn spiral_point(class: usize, u: f64) -> [f64; 2] {
    let angle = 2.0 * PI * SPIRAL_TURNS * u + PI * class as f64;
    let r = SPIRAL_INNER_RADIUS + (1.0 - SPIRAL_INNER_RADIUS) * u;
    [r * angle.cos(), r * angle.sin()]
}

fn generate(name: TaskName, rng: &mut ChaCha8Rng, n: usize, noise: f64, seed: u64) -> Dataset {
    match name {
        TaskName::Reflection1d => {
            let mut xs = Vec::with_capacity(n);
            while xs.len() < n {
                let x: f64 = rng.random_range(-1.0..1.0);
                if x.abs() >= REFLECTION_GAP {
                    xs.push(x);
                }
            }
            let ys = xs.iter().map(|x| -x).collect();
            Dataset {
                name,
                seed,
                inputs: Matrix::from_vec(n, 1, xs).expect("sized"),
                targets: Targets::Values(Matrix::from_vec(n, 1, ys).expect("sized")),
            }
        }
        TaskName::Annuli2d => {
            let mut pts = Vec::with_capacity(2 * n);
            let mut labels = Vec::with_capacity(n);
            for i in 0..n {
                let label = i % 2;
                let angle = rng.random_range(0.0..2.0 * PI);
                let r = if label == 0 {
                    rng.random_range(0.0f64..1.0).sqrt()
                } else {
                    rng.random_range(1.5f64 * 1.5..2.5 * 2.5).sqrt()
                };
                pts.extend([r * angle.cos(), r * angle.sin()]);
                labels.push(label);
            }
            Dataset {
                name,
                seed,
                inputs: Matrix::from_vec(n, 2, pts).expect("sized"),
                targets: Targets::Labels(labels),
            }
        }
        TaskName::Spirals2d => {
            let mut pts = Vec::with_capacity(2 * n);
            let mut labels = Vec::with_capacity(n);
            for i in 0..n {
                let label = i % 2;
                let u: f64 = rng.random_range(0.0..1.0);
                let p = spiral_point(label, u);
                let jx: f64 = StandardNormal.sample(rng);
                let jy: f64 = StandardNormal.sample(rng);
                pts.extend([p[0] + noise * jx, p[1] + noise * jy]);
                labels.push(label);
            }
            Dataset {
                name,
                seed,
                inputs: Matrix::from_vec(n, 2, pts).expect("sized"),
                targets: Targets::Labels(labels),
            }
        }
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `n` samples determined by `(name, seed, n, noise)`.
pub fn gen_dataset(name: TaskName, seed: u64, n: usize, noise: f64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::Contract(format!("datasets need n >= 2, got {n}")));
    }
    Ok(generate(name, &mut stream_rng(seed, 0), n, noise, seed))
}

/// Train and test sets drawn from independent streams of the same seed.
pub fn train_test_split(name: TaskName, seed: u64, n_train: usize, n_test: usize, noise: f64) -> Result<(Dataset, Dataset)> {
    if n_train < 2 || n_test < 2 {
        return Err(Error::Contract("datasets need n >= 2".into()));
    }
    let train = generate(name, &mut stream_rng(seed, 1), n_train, noise, seed);
    let test = generate(name, &mut stream_rng(seed, 2), n_test, noise, seed);
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regeneration_is_deterministic() {
        let a = gen_dataset(TaskName::Reflection1d, 7, 4, 0.0).unwrap();
        let b = gen_dataset(TaskName::Reflection1d, 7, 4, 0.0).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, gen_dataset(TaskName::Reflection1d, 8, 4, 0.0).unwrap());
    }

    #[test]
    fn reflection_targets_and_gap() {
        let d = gen_dataset(TaskName::Reflection1d, 1, 500, 0.0).unwrap();
        let Targets::Values(t) = &d.targets else { panic!() };
        for r in 0..d.len() {
            let x = d.inputs[(r, 0)];
            assert!(x.abs() >= REFLECTION_GAP && x.abs() <= 1.0);
            assert_eq!(t[(r, 0)], -x);
        }
    }

    #[test]
    fn annuli_labels_follow_radius() {
        assert_eq!(annuli_label([0.0, 0.0]), Some(0));
        assert_eq!(annuli_label([2.0, 0.0]), Some(1));
        let d = gen_dataset(TaskName::Annuli2d, 3, 200, 0.0).unwrap();
        let Targets::Labels(l) = &d.targets else { panic!() };
        for r in 0..d.len() {
            let p = d.inputs.row(r);
            assert_eq!(annuli_label([p[0], p[1]]), Some(l[r]));
        }
    }

    #[test]
    fn spirals_are_balanced_and_noiseless_on_arms() {
        let d = gen_dataset(TaskName::Spirals2d, 4, 100, 0.0).unwrap();
        let Targets::Labels(l) = &d.targets else { panic!() };
        assert_eq!(l.iter().filter(|&&c| c == 0).count(), 50);
        for r in 0..d.len() {
            let p = d.inputs.row(r);
            let rad = p[0].hypot(p[1]);
            assert!((SPIRAL_INNER_RADIUS - 1e-12..=1.0 + 1e-12).contains(&rad));
        }
        assert_eq!(spiral_point(1, 0.0), [-SPIRAL_INNER_RADIUS, SPIRAL_INNER_RADIUS * PI.sin()]);
    }

    #[test]
    fn train_and_test_are_disjoint() {
        for name in [TaskName::Reflection1d, TaskName::Annuli2d, TaskName::Spirals2d] {
            let (tr, te) = train_test_split(name, 11, 300, 300, 0.05).unwrap();
            for i in 0..tr.len() {
                for j in 0..te.len() {
                    assert_ne!(tr.inputs.row(i), te.inputs.row(j));
                }
            }
        }
    }
}
