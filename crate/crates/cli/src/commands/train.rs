use std::fmt::Write;

use nanode::train_tasks::{metrics_csv, train_run};

use crate::io::{load_config, output_dir, write_json, write_text};
use crate::{CliError, CliResult, Common};

pub const TIMING_CSV_HEADER: &str = "epoch,wall_ms";

/// Writes `metrics.csv`, `checkpoint.json`, `summary.json` and
/// `timing.csv`. A diverged run still writes everything it has.
pub fn run(common: &Common) -> CliResult<String> {
    let cfg = load_config(common)?;
    let dir = output_dir(common, &cfg)?;
    let out = train_run(&cfg)?;
    write_text(&dir, "metrics.csv", &metrics_csv(&out.rows))?;
    write_json(&dir, "checkpoint.json", &out.checkpoint)?;
    write_json(&dir, "summary.json", out.summary())?;
    let mut timing = format!("{TIMING_CSV_HEADER}\n");
    for (epoch, ms) in out.wall_ms.iter().enumerate() {
        let _ = writeln!(timing, "{epoch},{ms}");
    }
    write_text(&dir, "timing.csv", &timing)?;

    let s = out.summary();
    if s.diverged {
        return Err(CliError::Divergence(format!(
            "{} after {} epochs; partial metrics in {}",
            s.divergence.as_deref().unwrap_or("run diverged"),
            s.epochs_completed,
            dir.display()
        )));
    }
    let mut report = String::new();
    let _ = writeln!(report, "epoch  train_loss    test_loss     train_acc  test_acc");
    for r in &out.rows {
        let acc = |a: Option<f64>| a.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        let _ = writeln!(
            report,
            "{:<6} {:<13.6e} {:<13.6e} {:<10} {}",
            r.epoch,
            r.train_loss,
            r.test_loss,
            acc(r.train_acc),
            acc(r.test_acc)
        );
    }
    let total: f64 = out.wall_ms.iter().sum();
    let _ = writeln!(
        report,
        "{} parameters, {} activation memory units, {:.0} ms; artifacts in {}",
        s.param_count,
        s.activation_memory_units,
        total,
        dir.display()
    );
    Ok(report)
}
