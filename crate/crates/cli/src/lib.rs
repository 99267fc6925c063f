//! Scenario runner, figure reproduction and persistence for `gshf-core`.

pub mod designs;
pub mod error;
pub mod figures;
pub mod instance_file;
pub mod output;
pub mod runner;
pub mod scenario;
pub mod suite;

pub use error::{CliError, CliResult};
pub use figures::{reproduce_figure, FigureName};
pub use runner::{run_scenario, RunOptions, RunSummary};
pub use scenario::{Scenario, ScenarioConfig};
