use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::grad::{GradMethod, ADJOINT_MEMORY_UNITS};
use crate::linalg::{norm2, Matrix};
use crate::model::{accuracy, data_loss_and_grad, select_rows, NanodeModel, Targets};
use crate::train_tasks::data::{train_test_split, Dataset};
use crate::train_tasks::optim::OptimState;

pub const CHECKPOINT_VERSION: u32 = 1;

pub const METRICS_CSV_HEADER: &str = "epoch,train_loss,test_loss,train_acc,test_acc,grad_norm,activation_memory_units";

/// One evaluation row. Epoch 0 is the model at initialization; accuracies
/// are absent for regression tasks and the gradient norm (mean over the
/// epoch's minibatches) is absent before training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub train_acc: Option<f64>,
    pub test_acc: Option<f64>,
    pub grad_norm: Option<f64>,
    pub activation_memory_units: usize,
}

fn opt_field(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from(METRICS_CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.epoch,
            r.train_loss,
            r.test_loss,
            opt_field(r.train_acc),
            opt_field(r.test_acc),
            opt_field(r.grad_norm),
            r.activation_memory_units
        ));
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub final_train_loss: f64,
    pub final_test_loss: f64,
    pub final_train_acc: Option<f64>,
    pub final_test_acc: Option<f64>,
    pub param_count: usize,
    pub activation_memory_units: usize,
    pub epochs_completed: usize,
    pub optimizer_steps: u64,
    pub diverged: bool,
    pub divergence: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewEntry {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// Everything needed to rebuild a trained model: the configuration (whose
/// seed also fixes any frozen random features) and the flat parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: RunConfig,
    pub params: Vec<f64>,
    pub views: Vec<ViewEntry>,
    pub summary: RunSummary,
}

impl Checkpoint {
    pub fn restore(&self) -> Result<(NanodeModel, Vec<f64>)> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Contract(format!("unsupported checkpoint version {}", self.version)));
        }
        let model = build_model(&self.config)?;
        if model.num_params() != self.params.len() || view_table(&model) != self.views {
            return Err(Error::Contract("checkpoint parameters do not match the configured model".into()));
        }
        Ok((model, self.params.clone()))
    }
}

pub struct RunOutcome {
    pub rows: Vec<MetricsRow>,
    /// Wall time of each row's epoch in milliseconds; kept apart from the
    /// metrics so those stay reproducible.
    pub wall_ms: Vec<f64>,
    pub checkpoint: Checkpoint,
    pub model: NanodeModel,
    pub train: Dataset,
    pub test: Dataset,
}

impl RunOutcome {
    pub fn summary(&self) -> &RunSummary {
        &self.checkpoint.summary
    }

    pub fn params(&self) -> &[f64] {
        &self.checkpoint.params
    }
}

fn model_rng(config: &RunConfig) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(config.train.seed);
    rng.set_stream(3);
    rng
}

fn build_model(config: &RunConfig) -> Result<NanodeModel> {
    NanodeModel::build(&config.model_spec()?, &mut model_rng(config))
}

/// Builds the configured model and its initial parameters.
pub fn init_model(config: &RunConfig) -> Result<(NanodeModel, Vec<f64>)> {
    config.validate().map_err(|e| Error::Contract(e.to_string()))?;
    let mut rng = model_rng(config);
    let model = NanodeModel::build(&config.model_spec()?, &mut rng)?;
    let theta = model.init_params(config.field_init(), &mut rng)?;
    Ok((model, theta))
}

pub fn view_table(model: &NanodeModel) -> Vec<ViewEntry> {
    model
        .param_table()
        .into_iter()
        .map(|(name, v)| ViewEntry {
            name,
            offset: v.offset,
            len: v.len,
        })
        .collect()
}

pub fn memory_units(config: &RunConfig) -> usize {
    match config.grad_method() {
        GradMethod::Adjoint => ADJOINT_MEMORY_UNITS,
        _ => config.solver.steps.max(0) as usize + 1,
    }
}

/// `(data loss, accuracy)` of `theta` on a whole dataset.
pub fn evaluate(model: &NanodeModel, theta: &[f64], data: &Dataset) -> Result<(f64, Option<f64>)> {
    let out = model.forward(theta, &data.inputs)?;
    let kind = data.name.loss_kind();
    let (loss, _) = data_loss_and_grad(kind, &out, &data.targets)?;
    let acc = match &data.targets {
        Targets::Labels(l) => Some(accuracy(&out, l)),
        Targets::Values(_) => None,
    };
    Ok((loss, acc))
}

fn eval_row(
    model: &NanodeModel,
    theta: &[f64],
    train: &Dataset,
    test: &Dataset,
    epoch: usize,
    grad_norm: Option<f64>,
    units: usize,
) -> Result<MetricsRow> {
    let (train_loss, train_acc) = evaluate(model, theta, train)?;
    let (test_loss, test_acc) = evaluate(model, theta, test)?;
    Ok(MetricsRow {
        epoch,
        train_loss,
        test_loss,
        train_acc,
        test_acc,
        grad_norm,
        activation_memory_units: units,
    })
}

/// Seeded end-to-end training. Divergence stops the run early and is
/// recorded in the summary rather than returned as an error.
pub fn train_run(config: &RunConfig) -> Result<RunOutcome> {
    let (model, mut theta) = init_model(config)?;
    let t = &config.task;
    let (train, test) = train_test_split(t.name, config.train.seed, t.n_train as usize, t.n_test as usize, t.noise)?;
    let loss = config.loss_spec();
    let method = config.grad_method();
    let units = memory_units(config);
    let mut opt = OptimState::new(config.train.optimizer, config.train.lr, model.num_params()).with_betas(
        config.train.beta1,
        config.train.beta2,
        config.train.eps,
    );
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.train.seed);
    shuffle_rng.set_stream(4);
    let batch = config.train.batch as usize;

    let mut rows = Vec::new();
    let mut wall_ms = Vec::new();
    let mut divergence: Option<Error> = None;

    let start = Instant::now();
    match eval_row(&model, &theta, &train, &test, 0, None, units) {
        Ok(r) => rows.push(r),
        Err(e) if e.is_divergence() => divergence = Some(e),
        Err(e) => return Err(e),
    }
    wall_ms.push(start.elapsed().as_secs_f64() * 1e3);

    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=config.train.epochs.max(0) as usize {
        if divergence.is_some() {
            break;
        }
        let start = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut norm_sum = 0.0;
        let mut batches = 0usize;
        let epoch_result: Result<()> = (|| {
            for idx in order.chunks(batch) {
                let x: Matrix = select_rows(&train.inputs, idx);
                let y = train.targets.select(idx);
                let lg = model.loss_and_grad(&theta, &x, &y, &loss, method)?;
                norm_sum += norm2(&lg.grad);
                batches += 1;
                opt.step(&mut theta, &lg.grad)?;
            }
            Ok(())
        })();
        let row = epoch_result.and_then(|_| {
            eval_row(&model, &theta, &train, &test, epoch, Some(norm_sum / batches.max(1) as f64), units)
        });
        match row {
            Ok(r) => rows.push(r),
            Err(e) if e.is_divergence() => divergence = Some(e),
            Err(e) => return Err(e),
        }
        wall_ms.push(start.elapsed().as_secs_f64() * 1e3);
    }

    let last = rows.last();
    let summary = RunSummary {
        final_train_loss: last.map_or(f64::NAN, |r| r.train_loss),
        final_test_loss: last.map_or(f64::NAN, |r| r.test_loss),
        final_train_acc: last.and_then(|r| r.train_acc),
        final_test_acc: last.and_then(|r| r.test_acc),
        param_count: model.num_params(),
        activation_memory_units: units,
        epochs_completed: last.map_or(0, |r| r.epoch),
        optimizer_steps: opt.steps_taken(),
        diverged: divergence.is_some(),
        divergence: divergence.map(|e| e.to_string()),
    };
    let checkpoint = Checkpoint {
        version: CHECKPOINT_VERSION,
        config: config.clone(),
        views: view_table(&model),
        params: theta,
        summary,
    };
    Ok(RunOutcome {
        rows,
        wall_ms,
        checkpoint,
        model,
        train,
        test,
    })
}
