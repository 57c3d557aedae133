//! Protocol layers for a self-stabilizing reconfigurable quorum system.
//!
//! Every layer is a pure state machine. Nothing here knows about channels or
//! scheduling; a driver (see the `reconf-netsim` and `reconf-harness` crates)
//! feeds messages in and carries the returned messages out.

pub mod counter;
pub mod fd;
pub mod joining;
pub mod labeling;
pub mod recma;
pub mod recsa;
pub mod types;
pub mod vssmr;

pub use types::{ConfigValue, PSet, Pid, Proposal};
