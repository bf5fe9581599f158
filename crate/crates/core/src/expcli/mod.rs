//! Experiment harness behind the `glrl` binary: instance generation,
//! config files, runs and CSV output.

pub mod config;
pub mod gen;
pub mod output;
pub mod run;

pub use config::{Algorithm, ExperimentConfig, InitShape, LossChoice, Reference, SchemeChoice};
pub use gen::{gen_ground_truth, gen_measurements, test_loss, CompletionInstance};
pub use run::{exit_code, run, RunOutput};
