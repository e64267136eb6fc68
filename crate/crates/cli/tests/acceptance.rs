//! Acceptance suite: one PASS/FAIL line per criterion, tolerances pinned
//! below. Writes `acceptance/summary.json` under the cargo target tmpdir.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use nanode::config::{BasisName, RunConfig};
use nanode::dynamics::{Activation, DynamicsFn, DynamicsSpec, FieldInit, Variant, VectorField, WeightField};
use nanode::grad::{grad_adjoint, grad_discrete, grad_fd, relative_error};
use nanode::linalg::{dot, Matrix};
use nanode::model::Stem;
use nanode::odeint::{Method, SolveSpec};
use nanode::ortho::{chain_materialize, geodesic, walk_materialize, GivensWalk, HouseholderChain, OrthoWrappedField};
use nanode::sensitivity::{integrate_sensitivity, integrate_stm};
use nanode::timebasis::{BasisKind, PolyFamily, TimeBasis};
use nanode::train_tasks::{train_run, TaskName};
use nanode_testkit as tk;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

// 1
const GRAD_INSTANCES_PER_PAIR: usize = 2;
const GRAD_FD_TOL: f64 = 1e-6;
const GRAD_BUDGET_S: f64 = 120.0;
// 2
const ADJOINT_TOL: f64 = 1e-3;
const ADJOINT_STEPS: usize = 100;
const ADJOINT_MEMORY_MAX: usize = 4;
// 3
const ORTHO_TOL: f64 = 1e-8;
const ORTHO_SAMPLES: usize = 50;
const ORTHO_BUDGET_S: f64 = 30.0;
// 4
const WALK_RESIDUAL_TOL: f64 = 1e-8;
// 5
const SCALAR_SENS_TOL: f64 = 1e-6;
const COMMUTING_TOL: f64 = 1e-7;
const SKEW_NORM_TOL: f64 = 1e-6;
// 6
const AUTONOMOUS_MSE_MIN: f64 = 0.1;
const NANODE_MSE_MAX: f64 = 1e-2;
const REFLECTION_STEPS: usize = 2000;
const REFLECTION_BUDGET_S: f64 = 300.0;
// 7
const SWEEP_ORDERS: [i64; 4] = [1, 2, 4, 8];
const SWEEP_NOISE_BAND: f64 = 0.03;
const SWEEP_GAIN_MIN: f64 = 0.05;
const SWEEP_BUDGET_S: f64 = 1200.0;
const SPIRAL_EPOCHS: i64 = 200;
const SPIRAL_LR: f64 = 1e-2;
// 8
const SMOOTHNESS_ORDER: i64 = 4;
const SMOOTHNESS_MARGIN: f64 = 0.02;
// 9
const ORTHO_NORM_TOL: f64 = 1e-8;

const SEEDS: [u64; 3] = [0, 1, 2];

struct Outcome {
    pass: bool,
    detail: String,
    data: Value,
}

fn outcome(pass: bool, detail: String, data: Value) -> Outcome {
    Outcome { pass, detail, data }
}

const KINDS: [BasisKind; 7] = [
    BasisKind::Constant,
    BasisKind::Bucketed,
    BasisKind::Polynomial(PolyFamily::Monomial),
    BasisKind::Polynomial(PolyFamily::Chebyshev),
    BasisKind::Polynomial(PolyFamily::Legendre),
    BasisKind::Trigonometric,
    BasisKind::RandomFeature,
];

const VARIANTS: [Variant; 5] = [
    Variant::Autonomous,
    Variant::AppendTime,
    Variant::Nanode,
    Variant::GatedMixture,
    Variant::DirectHypernet,
];

fn field(rng: &mut ChaCha8Rng, variant: Variant, kind: BasisKind, n: usize, layers: usize, order: usize) -> (DynamicsFn, Vec<f64>) {
    let mut spec = DynamicsSpec::new(variant, n);
    spec.layers = layers;
    spec.basis = kind;
    spec.order = order;
    let f = DynamicsFn::build(&spec, rng).expect("valid spec");
    let theta = f.init_params(FieldInit::Normal { scale: 1.0 }, rng).expect("init");
    (f, theta)
}

fn uniform_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut worst, mut count) = (0.0f64, 0usize);
    let mut worst_case = String::new();
    for &variant in &VARIANTS {
        for &kind in &KINDS {
            for _ in 0..GRAD_INSTANCES_PER_PAIR {
                let n = rng.random_range(1..=5);
                let layers = rng.random_range(1..=2);
                let order = rng.random_range(1..=3);
                let steps = order * rng.random_range(1..=50 / order);
                let method = if rng.random_bool(0.5) { Method::Rk4 } else { Method::Euler };
                let (f, theta) = field(&mut rng, variant, kind, n, layers, order);
                let x0 = uniform_vec(&mut rng, n);
                let c = uniform_vec(&mut rng, n);
                let spec = SolveSpec::new(method, 0.0, 1.0, steps).unwrap();
                let exact = grad_discrete(&f, &x0, &theta, &spec, &c).unwrap();
                let fd = grad_fd(&f, &x0, &theta, &spec, |x| dot(&c, x)).unwrap();
                let err = relative_error(&exact.d_theta, &fd.d_theta, 1e-8).max(relative_error(&exact.d_x0, &fd.d_x0, 1e-8));
                if err > worst {
                    worst = err;
                    worst_case = format!("{variant:?}/{kind:?} N={n} layers={layers} d={order} L={steps} {method:?}");
                }
                count += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        count >= 50 && worst <= GRAD_FD_TOL && secs <= GRAD_BUDGET_S,
        format!("{count} instances, max rel err {worst:.2e} (<= {GRAD_FD_TOL:e}) at {worst_case}, {secs:.1}s (<= {GRAD_BUDGET_S}s)"),
        json!({"instances": count, "max_rel_err": worst, "seconds": secs}),
    )
}

fn adjoint_consistency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let spec = SolveSpec::new(Method::Rk4, 0.0, 1.0, ADJOINT_STEPS).unwrap();
    let (mut worst, mut count, mut memory_ok) = (0.0f64, 0usize, true);
    let smooth: Vec<BasisKind> = KINDS.iter().copied().filter(|k| *k != BasisKind::Bucketed).collect();
    for &variant in &VARIANTS {
        for &kind in &smooth {
            let n = rng.random_range(1..=5);
            let layers = rng.random_range(1..=2);
            let order = rng.random_range(1..=3);
            let (f, theta) = field(&mut rng, variant, kind, n, layers, order);
            assert!(f.is_smooth_in_time());
            let x0 = uniform_vec(&mut rng, n);
            let c = uniform_vec(&mut rng, n);
            let d = grad_discrete(&f, &x0, &theta, &spec, &c).unwrap();
            let a = grad_adjoint(&f, &x0, &theta, &spec, &c).unwrap();
            worst = worst
                .max(relative_error(&a.d_theta, &d.d_theta, 1e-8))
                .max(relative_error(&a.d_x0, &d.d_x0, 1e-8));
            memory_ok &= a.activation_memory_units <= ADJOINT_MEMORY_MAX && d.activation_memory_units == ADJOINT_STEPS + 1;
            count += 1;
        }
    }
    outcome(
        worst <= ADJOINT_TOL && memory_ok,
        format!(
            "{count} smooth instances at RK4 L={ADJOINT_STEPS}: max rel gap {worst:.2e} (<= {ADJOINT_TOL:e}); memory adjoint <= {ADJOINT_MEMORY_MAX}, discrete == L+1: {memory_ok}"
        ),
        json!({"instances": count, "max_rel_gap": worst, "memory_ok": memory_ok}),
    )
}

fn orthogonality_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let (mut worst, mut count) = (0.0f64, 0usize);
    let mut check = |m: &Matrix| {
        worst = worst.max(m.orthogonality_defect());
        count += 1;
    };
    for &n in &[1usize, 2, 3, 5, 8, 16, 32, 64] {
        let times: Vec<f64> = (0..ORTHO_SAMPLES).map(|s| s as f64 / (ORTHO_SAMPLES - 1) as f64).collect();
        for d in [1, n.div_ceil(2), n] {
            let vectors = (0..d).map(|_| uniform_vec(&mut rng, n)).collect();
            let sign = if d % 2 == 0 { 1.0 } else { -1.0 };
            check(&chain_materialize(&HouseholderChain::new(vectors, sign).unwrap()));
        }
        if n >= 2 {
            let pairs: Vec<(usize, usize)> = (0..6)
                .map(|_| {
                    let i = rng.random_range(0..n - 1);
                    (i, rng.random_range(i + 1..n))
                })
                .collect();
            let start_q = chain_materialize(&HouseholderChain::new((0..n).map(|_| uniform_vec(&mut rng, n)).collect(), 1.0).unwrap());
            let walk = GivensWalk::new(start_q.clone(), pairs, 0.0).unwrap();
            let s = Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let omega = s.sub(&s.transpose()).unwrap();
            for &t in &times {
                check(&walk_materialize(&walk.with_angle(2.0 * std::f64::consts::PI * t)));
                check(&geodesic(&start_q, &omega, 3.0 * t).unwrap());
            }
        }
        for basis in [
            TimeBasis::polynomial(PolyFamily::Chebyshev, 4, 1.0).unwrap(),
            TimeBasis::trigonometric(2, 1.0, 1.0).unwrap(),
        ] {
            let f = OrthoWrappedField::new(n, basis).unwrap();
            let coeffs = uniform_vec(&mut rng, f.num_params());
            for &t in &times {
                check(&f.eval(&coeffs, t).unwrap());
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= ORTHO_TOL && secs <= ORTHO_BUDGET_S,
        format!("{count} maps with N <= 64: max ||M^T M - I||_F {worst:.2e} (<= {ORTHO_TOL:e}), {secs:.1}s (<= {ORTHO_BUDGET_S}s)"),
        json!({"maps": count, "max_defect": worst, "seconds": secs}),
    )
}

fn givens_trig_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let (mut worst, mut fits) = (0.0f64, 0usize);
    for n in 2..=8usize {
        for k in 1..=6usize {
            let pairs: Vec<(usize, usize)> = (0..k)
                .map(|_| {
                    let i = rng.random_range(0..n - 1);
                    (i, rng.random_range(i + 1..n))
                })
                .collect();
            let q = chain_materialize(&HouseholderChain::new((0..n).map(|_| uniform_vec(&mut rng, n)).collect(), 1.0).unwrap());
            let walk = GivensWalk::new(q, pairs, 0.0).unwrap();
            let m = 4 * k + 1;
            let angles: Vec<f64> = (0..m).map(|s| 2.0 * std::f64::consts::PI * s as f64 / m as f64).collect();
            let design: Vec<Vec<f64>> = angles.iter().map(|&a| tk::trig_design_row(a, k)).collect();
            let mats: Vec<Matrix> = angles.iter().map(|&a| walk_materialize(&walk.with_angle(a))).collect();
            for i in 0..n {
                for j in 0..n {
                    let y: Vec<f64> = mats.iter().map(|mm| mm[(i, j)]).collect();
                    worst = worst.max(tk::lstsq(&design, &y).1);
                    fits += 1;
                }
            }
        }
    }
    outcome(
        worst <= WALK_RESIDUAL_TOL,
        format!("{fits} entry fits (N <= 8, k <= 6, 4k+1 angles): max residual {worst:.2e} (<= {WALK_RESIDUAL_TOL:e})"),
        json!({"fits": fits, "max_residual": worst}),
    )
}

fn sensitivity_oracles() -> Outcome {
    // Scalar growth: S(t) = x0 t e^{θt}.
    let f = DynamicsFn::single_layer(
        WeightField::per_entry(1, 1, TimeBasis::constant(1.0).unwrap()),
        Activation::Identity,
    )
    .unwrap();
    let (theta, x0) = (0.7, 1.3);
    let spec = SolveSpec::new(Method::Rk4, 0.0, 1.0, 200).unwrap();
    let sol = integrate_sensitivity(&f, &[x0], &[theta], &spec).unwrap();
    let scalar = sol
        .snapshots
        .iter()
        .filter(|(t, _)| *t > 0.0)
        .map(|(t, s)| {
            let exact = x0 * t * (theta * t).exp();
            (s[(0, 0)] - exact).abs() / exact.abs()
        })
        .fold(0.0f64, f64::max);

    // Commuting family A(t) = Q diag(a(t)) Qᵀ; Φ = Q diag(exp ∫a) Qᵀ.
    let n = 4;
    let q = chain_materialize(&HouseholderChain::new(tk::Lcg::new(5).vec(n * n, -1.0, 1.0).chunks(n).map(<[f64]>::to_vec).collect(), 1.0).unwrap());
    let alpha = [0.3, -0.5, 0.8, -0.1];
    let beta = [1.0, 0.4, -0.7, 0.2];
    let a_of = |t: f64| -> nanode::Result<Matrix> {
        let d: Vec<f64> = (0..n).map(|i| alpha[i] + beta[i] * (2.0 * t).sin()).collect();
        q.matmul(&Matrix::diag(&d))?.matmul(&q.transpose())
    };
    let (t0, t1) = (0.0, 1.5);
    let integral: Vec<f64> = (0..n)
        .map(|i| tk::simpson(|t| alpha[i] + beta[i] * (2.0 * t).sin(), t0, t1, 2000).exp())
        .collect();
    let expected = q.matmul(&Matrix::diag(&integral)).unwrap().matmul(&q.transpose()).unwrap();
    let phi = integrate_stm(a_of, t0, t1, 400).unwrap().phi;
    let commuting = phi.sub(&expected).unwrap().max_abs();

    // Skew-valued A(t) on [0, 10].
    let s1 = Matrix::from_fn(n, n, |i, j| (i as f64 - 2.0 * j as f64).sin());
    let s2 = Matrix::from_fn(n, n, |i, j| ((i * j) as f64 + 0.5).cos());
    let k1 = s1.sub(&s1.transpose()).unwrap();
    let k2 = s2.sub(&s2.transpose()).unwrap();
    let skew_of = |t: f64| -> nanode::Result<Matrix> {
        let mut m = k1.scale(t.sin());
        m.add_scaled(0.3, &k2);
        Ok(m)
    };
    let series = integrate_stm(skew_of, 0.0, 10.0, 4000).unwrap().norm_series;
    let skew = series.iter().map(|(_, v)| (v - 1.0).abs()).fold(0.0f64, f64::max);

    outcome(
        scalar <= SCALAR_SENS_TOL && commuting <= COMMUTING_TOL && skew <= SKEW_NORM_TOL,
        format!(
            "scalar rel err {scalar:.2e} (<= {SCALAR_SENS_TOL:e}); commuting |Phi - exp| {commuting:.2e} (<= {COMMUTING_TOL:e}); skew max | ||Phi|| - 1 | {skew:.2e} (<= {SKEW_NORM_TOL:e})"
        ),
        json!({"scalar_rel_err": scalar, "commuting_abs_err": commuting, "skew_norm_dev": skew}),
    )
}

fn reflection_config(variant: Variant, seed: u64) -> RunConfig {
    let mut c = RunConfig::default();
    c.task.name = TaskName::Reflection1d;
    c.task.n_train = 256;
    c.task.n_test = 64;
    c.model.variant = variant;
    c.model.n = 1;
    c.model.activation = Activation::Identity;
    c.model.input_stem = Stem::Identity;
    c.model.output_stem = Stem::Identity;
    if variant == Variant::Autonomous {
        c.basis.kind = BasisName::Constant;
        c.basis.order = 0;
    } else {
        c.basis.kind = BasisName::Trigonometric;
        c.basis.order = 2;
        c.basis.omega = std::f64::consts::PI;
    }
    c.solver.method = Method::Euler;
    c.solver.steps = 4;
    c.train.lr = 1e-2;
    c.train.batch = 64;
    c.train.epochs = (REFLECTION_STEPS / 4) as i64;
    c.train.seed = seed;
    c
}

fn expressiveness_separation() -> Outcome {
    let start = Instant::now();
    let mut auto = Vec::new();
    let mut nanode = Vec::new();
    let mut steps_ok = true;
    for &seed in &SEEDS {
        for (variant, sink) in [(Variant::Autonomous, &mut auto), (Variant::Nanode, &mut nanode)] {
            let out = train_run(&reflection_config(variant, seed)).unwrap();
            let s = out.summary();
            steps_ok &= s.optimizer_steps == REFLECTION_STEPS as u64 && !s.diverged;
            sink.push(s.final_train_loss);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = steps_ok
        && auto.iter().all(|&m| m >= AUTONOMOUS_MSE_MIN)
        && nanode.iter().all(|&m| m <= NANODE_MSE_MAX)
        && secs <= REFLECTION_BUDGET_S;
    outcome(
        pass,
        format!(
            "autonomous MSE {auto:.3?} (>= {AUTONOMOUS_MSE_MIN}), T-NANODE d=2 MSE [{}] (<= {NANODE_MSE_MAX:e}) after {REFLECTION_STEPS} steps, {secs:.1}s",
            nanode.iter().map(|m| format!("{m:.1e}")).collect::<Vec<_>>().join(", ")
        ),
        json!({"autonomous_mse": auto, "nanode_mse": nanode, "seconds": secs}),
    )
}

fn spiral_config(kind: BasisName, order: i64, seed: u64) -> RunConfig {
    let mut c = RunConfig::default();
    c.basis.kind = kind;
    c.basis.order = order;
    c.train.epochs = SPIRAL_EPOCHS;
    c.train.lr = SPIRAL_LR;
    c.train.seed = seed;
    c
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s[s.len() / 2]
}

/// `(train accuracies, test accuracies)` over [`SEEDS`].
fn spiral_runs(kind: BasisName, order: i64) -> (Vec<f64>, Vec<f64>) {
    SEEDS
        .iter()
        .map(|&seed| {
            let out = train_run(&spiral_config(kind, order, seed)).unwrap();
            let s = out.summary();
            assert!(!s.diverged, "{kind:?} d={order} seed {seed} diverged");
            (s.final_train_acc.unwrap(), s.final_test_acc.unwrap())
        })
        .unzip()
}

fn order_scaling(runs: &[(i64, Vec<f64>, Vec<f64>)], secs: f64) -> Outcome {
    let medians: Vec<f64> = runs.iter().map(|(_, tr, _)| median(tr)).collect();
    let monotone = medians.windows(2).all(|w| w[1] >= w[0] - SWEEP_NOISE_BAND);
    let gain = medians[medians.len() - 1] - medians[0];
    outcome(
        monotone && gain >= SWEEP_GAIN_MIN && secs <= SWEEP_BUDGET_S,
        format!(
            "median train acc over d={SWEEP_ORDERS:?}: {medians:.3?}; non-decreasing within {SWEEP_NOISE_BAND}: {monotone}; d=8 - d=1 = {gain:.3} (>= {SWEEP_GAIN_MIN}); {secs:.0}s"
        ),
        json!({"orders": SWEEP_ORDERS, "median_train_acc": medians, "gain": gain, "seconds": secs,
               "runs": runs.iter().map(|(d, tr, te)| json!({"order": d, "train_acc": tr, "test_acc": te})).collect::<Vec<_>>()}),
    )
}

fn smoothness(trig_test: &[f64]) -> Outcome {
    let (_, bucket_test) = spiral_runs(BasisName::Bucketed, SMOOTHNESS_ORDER);
    let (t, b) = (median(trig_test), median(&bucket_test));
    outcome(
        t >= b + SMOOTHNESS_MARGIN,
        format!("L=32 d={SMOOTHNESS_ORDER}: T-NANODE median test acc {t:.3} vs B-NANODE {b:.3} (margin {SMOOTHNESS_MARGIN})"),
        json!({"trig_test_acc": trig_test, "bucketed_test_acc": bucket_test, "trig_median": t, "bucketed_median": b, "margin": SMOOTHNESS_MARGIN}),
    )
}

fn nanode_bin(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_nanode")).args(args).output().expect("binary runs")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn stability_contrast(work: &Path) -> Outcome {
    let mut details = Vec::new();
    let mut pass = true;
    let mut raw_max = Vec::new();
    for &seed in &SEEDS {
        for ortho in [false, true] {
            let cfg = work.join(format!("stab_{ortho}.json"));
            let body = json!({
                "basis": {"kind": "chebyshev", "order": 4, "init": "normal", "init_scale": 1.0},
                "ortho": {"enabled": ortho},
            });
            fs::write(&cfg, body.to_string()).unwrap();
            let out = work.join(format!("stab_{ortho}_{seed}"));
            let o = nanode_bin(&["stability", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", &seed.to_string(), "--quiet"]);
            pass &= o.status.code() == Some(0);
            let s = read_json(&out.join("stability.json"));
            if ortho {
                let norms = fs::read_to_string(out.join("weight_norms.csv")).unwrap();
                let dev = norms
                    .lines()
                    .skip(1)
                    .map(|l| (l.split(',').nth(2).unwrap().parse::<f64>().unwrap() - 1.0).abs())
                    .fold(0.0f64, f64::max);
                pass &= s["diverged"] == false && dev <= ORTHO_NORM_TOL;
                details.push(format!("seed {seed} ortho: diverged={} max| ||W||-1 |={dev:.1e}", s["diverged"]));
            } else {
                raw_max.push(s["max_norm_w"].as_f64().unwrap());
            }
        }
    }
    outcome(
        pass,
        format!("{}; raw max ||W(t)||_2 {raw_max:.3?} (reported)", details.join(", ")),
        json!({"raw_max_norm_w": raw_max, "ortho": details}),
    )
}

fn artifacts(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    files
        .into_iter()
        .filter(|p| {
            let name = p.file_name().unwrap().to_str().unwrap();
            (name.ends_with(".csv") || name.ends_with(".json")) && name != "timing.csv"
        })
        .map(|p| {
            let name = p.file_name().unwrap().to_str().unwrap().to_string();
            let mut bytes = fs::read(&p).unwrap();
            if name == "orthobench.csv" {
                // Drop the measured ns_per_apply column.
                let text = String::from_utf8(bytes).unwrap();
                bytes = text
                    .lines()
                    .map(|l| {
                        let mut cols: Vec<&str> = l.split(',').collect();
                        cols.remove(3);
                        cols.join(",")
                    })
                    .collect::<Vec<_>>()
                    .join("\n")
                    .into_bytes();
            }
            (name, bytes)
        })
        .collect()
}

fn determinism(work: &Path) -> Outcome {
    let cfg = work.join("det.json");
    fs::write(
        &cfg,
        json!({
            "task": {"n_train": 64, "n_test": 32},
            "model": {"n": 4},
            "basis": {"kind": "random_feature", "order": 3},
            "solver": {"steps": 8},
            "train": {"epochs": 3, "batch": 16, "lr": 0.01, "seed": 4}
        })
        .to_string(),
    )
    .unwrap();
    let cfg = cfg.to_str().unwrap();
    let commands: [(&str, Vec<&str>); 5] = [
        ("train", vec!["train", "--config", cfg]),
        ("gradcheck", vec!["gradcheck", "--config", cfg]),
        ("stability", vec!["stability", "--config", cfg]),
        ("datagen", vec!["datagen", "--config", cfg]),
        ("orthobench", vec!["orthobench", "--n", "16", "--d", "8", "--repeats", "5", "--seed", "3"]),
    ];
    let mut pass = true;
    let mut compared = 0usize;
    let mut mismatches = Vec::new();
    for (name, args) in &commands {
        let mut runs = Vec::new();
        for (rep, threads) in [(0, "1"), (1, "3")] {
            let out = work.join(format!("det_{name}_{rep}"));
            let mut full = args.clone();
            let out_s = out.to_str().unwrap().to_string();
            full.extend(["--out", &out_s, "--quiet"]);
            let o = Command::new(env!("CARGO_BIN_EXE_nanode"))
                .args(&full)
                .env("NANODE_THREADS", threads)
                .output()
                .unwrap();
            pass &= o.status.code() == Some(0);
            runs.push(artifacts(&out));
        }
        compared += runs[0].len();
        if runs[0] != runs[1] || runs[0].is_empty() {
            pass = false;
            mismatches.push(name.to_string());
        }
    }
    outcome(
        pass,
        format!(
            "{compared} artifacts from 5 commands byte-identical across reruns (1 vs 3 threads); timing.csv and ns_per_apply excluded as wall-clock measurements{}",
            if mismatches.is_empty() { String::new() } else { format!("; mismatched: {mismatches:?}") }
        ),
        json!({"artifacts": compared, "mismatched": mismatches}),
    )
}

fn main() {
    let work = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let _ = fs::remove_dir_all(&work);
    fs::create_dir_all(&work).unwrap();
    let mut results: Vec<(u32, &str, Outcome, f64)> = Vec::new();
    let mut record = |id: u32, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let o = f();
        let secs = start.elapsed().as_secs_f64();
        println!("{} [{id}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((id, name, o, secs));
    };

    record(1, "gradient correctness", &mut gradient_correctness);
    record(2, "adjoint consistency and memory", &mut adjoint_consistency);
    record(3, "orthogonality suite", &mut orthogonality_suite);
    record(4, "Givens walk trig equivalence", &mut givens_trig_equivalence);
    record(5, "sensitivity and transition oracles", &mut sensitivity_oracles);
    record(6, "expressiveness separation", &mut expressiveness_separation);

    let sweep_start = Instant::now();
    let sweep: Vec<(i64, Vec<f64>, Vec<f64>)> = SWEEP_ORDERS
        .iter()
        .map(|&d| {
            let (tr, te) = spiral_runs(BasisName::Trigonometric, d);
            (d, tr, te)
        })
        .collect();
    let sweep_secs = sweep_start.elapsed().as_secs_f64();
    record(7, "order scaling trend", &mut || order_scaling(&sweep, sweep_secs));
    let trig_test = sweep.iter().find(|(d, _, _)| *d == SMOOTHNESS_ORDER).map(|(_, _, te)| te.clone()).unwrap();
    record(8, "smoothness comparison", &mut || smoothness(&trig_test));
    record(9, "stability contrast", &mut || stability_contrast(&work));
    record(10, "determinism", &mut || determinism(&work));

    let summary = json!({
        "criteria": results.iter().map(|(id, name, o, secs)| json!({
            "id": id, "name": name, "pass": o.pass, "detail": o.detail, "seconds": secs, "data": o.data,
        })).collect::<Vec<_>>(),
        "passed": results.iter().filter(|r| r.2.pass).count(),
        "total": results.len(),
    });
    let path = work.join("summary.json");
    fs::write(&path, serde_json::to_string_pretty(&summary).unwrap() + "\n").unwrap();
    let passed = results.iter().filter(|r| r.2.pass).count();
    println!("{passed}/{} criteria passed; summary at {}", results.len(), path.display());
    if passed != results.len() {
        std::process::exit(1);
    }
}
