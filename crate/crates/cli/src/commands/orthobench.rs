use std::fmt::Write;
use std::hint::black_box;
use std::time::Instant;

use nanode::ortho::{chain_apply, chain_apply_counted, chain_materialize, dense_apply_counted, HouseholderChain};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::io::{output_dir, write_text};
use crate::{CliError, CliResult, Common};

pub const ORTHOBENCH_CSV_HEADER: &str = "N,d,method,ns_per_apply,flop_count";
/// Largest allowed `|chain x − M x|` entry before timings are meaningless.
pub const AGREEMENT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub n: usize,
    pub d: usize,
    pub method: &'static str,
    pub ns_per_apply: f64,
    pub flop_count: u64,
}

pub struct Bench {
    pub rows: Vec<BenchRow>,
    pub max_abs_diff: f64,
}

pub fn bench(n: usize, d: usize, repeats: usize, seed: u64) -> CliResult<Bench> {
    if n == 0 || d == 0 || repeats == 0 {
        return Err(CliError::Config("orthobench needs positive N, d and repeats".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let vectors: Vec<Vec<f64>> = (0..d).map(|_| (0..n).map(|_| normal()).collect()).collect();
    let x: Vec<f64> = (0..n).map(|_| normal()).collect();
    let chain = HouseholderChain::new(vectors, 1.0)?;
    let dense = chain_materialize(&chain);

    let (y_chain, chain_flops) = chain_apply_counted(&chain, &x)?;
    let (y_dense, dense_flops) = dense_apply_counted(&dense, &x)?;
    let max_abs_diff = y_chain.iter().zip(&y_dense).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));

    let start = Instant::now();
    for _ in 0..repeats {
        black_box(chain_apply(black_box(&chain), black_box(&x))?);
    }
    let chain_ns = start.elapsed().as_nanos() as f64 / repeats as f64;
    let start = Instant::now();
    for _ in 0..repeats {
        black_box(nanode::linalg::matvec(black_box(&dense), black_box(&x))?);
    }
    let dense_ns = start.elapsed().as_nanos() as f64 / repeats as f64;

    Ok(Bench {
        rows: vec![
            BenchRow {
                n,
                d,
                method: "chain",
                ns_per_apply: chain_ns,
                flop_count: chain_flops,
            },
            BenchRow {
                n,
                d,
                method: "dense",
                ns_per_apply: dense_ns,
                flop_count: dense_flops,
            },
        ],
        max_abs_diff,
    })
}

pub fn csv(rows: &[BenchRow]) -> String {
    let mut s = format!("{ORTHOBENCH_CSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{}", r.n, r.d, r.method, r.ns_per_apply, r.flop_count);
    }
    s
}

/// Writes `orthobench.csv`. Timings are reported, never judged; the only
/// failure is the two methods disagreeing.
pub fn run(common: &Common, n: usize, d: usize, repeats: usize) -> CliResult<String> {
    let b = bench(n, d, repeats, common.seed.unwrap_or(0))?;
    if b.max_abs_diff > AGREEMENT_TOL {
        return Err(CliError::Check(format!(
            "chain and dense outputs differ by {:e} (> {AGREEMENT_TOL:e})",
            b.max_abs_diff
        )));
    }
    let dir = common.out.clone().unwrap_or_else(|| "runs/orthobench".into());
    let dir = output_dir(
        &Common {
            out: Some(dir),
            ..common.clone()
        },
        &Default::default(),
    )?;
    write_text(&dir, "orthobench.csv", &csv(&b.rows))?;
    let mut out = String::new();
    for r in &b.rows {
        let _ = writeln!(out, "N={} d={} {:<5} {:>12.1} ns/apply {:>10} flops", r.n, r.d, r.method, r.ns_per_apply, r.flop_count);
    }
    let _ = writeln!(out, "max |chain - dense| = {:e}", b.max_abs_diff);
    Ok(out)
}
