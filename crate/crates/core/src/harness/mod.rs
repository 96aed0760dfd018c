//! Scenario runner: loads an application fixture, wires the world, runs it
//! to settlement and reports verdicts recomputed from ledger state.

mod app;
mod matrix;
mod report;
mod scenario;
mod world;

pub use app::{compile_program, load_interfaces, App};
pub use matrix::{fault_matrix, random_scenario, stall_fault, Matrix, MatrixCell, Stall};
pub use report::{atomicity, Atomicity, AtomicityInput, Reversion, RunReport, TidReport};
pub use scenario::{critical_path, Expect, NsbSection, Scenario, Timers, CONFIG_DIR_ENV};
pub use world::{run, run_with, World};
