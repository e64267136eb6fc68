//! Non-autonomous neural ODEs: time-varying weight fields, fixed-step
//! solvers, discrete and adjoint gradients, and sensitivity analysis.

pub mod config;
pub mod dynamics;
pub mod error;
pub mod grad;
pub mod linalg;
pub mod model;
pub mod odeint;
pub mod ortho;
pub mod sensitivity;
pub mod timebasis;
pub mod train_tasks;

pub use error::{Error, Result};
