use std::fmt::Write;
use std::path::Path;

use nanode::model::select_rows;
use nanode::sensitivity::{gradient_flow_report, weight_norm_series, weight_norms_csv};
use nanode::train_tasks::{init_model, train_test_split, Checkpoint};
use serde::Serialize;

use crate::io::{load_config, output_dir, read_json, write_json, write_text};
use crate::{CliResult, Common};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilitySummary {
    pub source: String,
    pub diverged: bool,
    pub diverged_at: Option<f64>,
    pub rows: usize,
    pub max_norm_s: f64,
    pub max_norm_phi: f64,
    pub min_norm_phi: f64,
    pub max_norm_w: f64,
    pub min_norm_w: f64,
}

/// Writes `stability.csv`, `weight_norms.csv` and `stability.json` for the
/// configured model at initialization, or for checkpointed parameters.
/// Divergence is a finding here, not an error.
pub fn run(common: &Common, checkpoint: Option<&Path>) -> CliResult<String> {
    let (cfg, model, theta, source) = match checkpoint {
        Some(path) => {
            let ck: Checkpoint = read_json(path)?;
            let (model, theta) = ck.restore()?;
            (ck.config, model, theta, path.display().to_string())
        }
        None => {
            let cfg = load_config(common)?;
            let (model, theta) = init_model(&cfg)?;
            (cfg, model, theta, "initialization".to_string())
        }
    };
    let dir = output_dir(common, &cfg)?;
    let t = &cfg.task;
    let (train, _) = train_test_split(t.name, cfg.train.seed, 2, 2, t.noise)?;
    let x0 = model.lift(&theta, &select_rows(&train.inputs, &[0]));
    let ftheta = model.flow_view().slice(&theta);
    let report = gradient_flow_report(model.flow(), &x0, ftheta, model.solve())?;
    let norms = weight_norm_series(model.flow(), ftheta, model.solve())?;

    write_text(&dir, "stability.csv", &report.to_csv())?;
    write_text(&dir, "weight_norms.csv", &weight_norms_csv(&norms))?;
    let fold = |it: &mut dyn Iterator<Item = f64>, max: bool| {
        it.fold(if max { f64::NEG_INFINITY } else { f64::INFINITY }, |m, v| if max { m.max(v) } else { m.min(v) })
    };
    let summary = StabilitySummary {
        source,
        diverged: report.diverged,
        diverged_at: report.diverged_at,
        rows: report.rows.len(),
        max_norm_s: fold(&mut report.rows.iter().map(|r| r.norm_s), true),
        max_norm_phi: fold(&mut report.rows.iter().map(|r| r.norm_phi), true),
        min_norm_phi: fold(&mut report.rows.iter().map(|r| r.norm_phi), false),
        max_norm_w: fold(&mut norms.iter().map(|r| r.norm_w), true),
        min_norm_w: fold(&mut norms.iter().map(|r| r.norm_w), false),
    };
    write_json(&dir, "stability.json", &summary)?;

    let mut out = String::new();
    if let Some(at) = summary.diverged_at {
        let _ = writeln!(out, "DIVERGED at t = {at}");
    }
    let _ = writeln!(
        out,
        "{} rows; max ||S|| {:.6e}; ||Phi|| in [{:.6e}, {:.6e}]; ||W|| in [{:.6e}, {:.6e}]",
        summary.rows, summary.max_norm_s, summary.min_norm_phi, summary.max_norm_phi, summary.min_norm_w, summary.max_norm_w
    );
    Ok(out)
}
