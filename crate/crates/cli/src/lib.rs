//! Scenario-driven command-line front end: configuration loading, station
//! and displacement tables, and the task runners behind the `dislo` binary.

pub mod error;
pub mod io;
pub mod run;
pub mod scenario;

pub use error::{CliError, CliResult};
pub use io::{emit_grid, read_displacements, read_stations, Lattice};
pub use run::run;
pub use scenario::{load_scenario, Scenario, Task};
