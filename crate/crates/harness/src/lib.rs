//! Scenario-driven runs of the reconfiguration stack over the simulated
//! network, with checkers over the resulting traces.

pub mod checkers;
pub mod faults;
pub mod node;
pub mod notes;
pub mod runner;
pub mod scenario;

pub use checkers::{check, check_all, Verdict, CHECKERS};
pub use runner::{run, Run, Runner};
pub use scenario::{Scenario, ScenarioError};
