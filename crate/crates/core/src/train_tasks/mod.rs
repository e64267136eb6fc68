//! Optimizers, synthetic datasets and the seeded training loop.

pub mod data;
pub mod optim;
pub mod run;

pub use data::{gen_dataset, train_test_split, Dataset, TaskName};
pub use optim::{adam_step, OptimKind, OptimState};
pub use run::{
    evaluate, init_model, memory_units, metrics_csv, train_run, view_table, Checkpoint, MetricsRow, RunOutcome, RunSummary,
    ViewEntry, CHECKPOINT_VERSION, METRICS_CSV_HEADER,
};
