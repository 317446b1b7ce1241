//! Config-driven experiment runner: fading-rate sweeps over modes and
//! seeds, CSV output and plot data.

pub mod config;
pub mod error;
pub mod experiment;
pub mod plotdata;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
pub use experiment::{run_experiment, write_outputs, ExperimentResult};
pub use plotdata::emit_plotdata;
