//! Deterministic discrete-event network simulator.
//!
//! Processors exchange payloads over bounded, lossy, reordering and
//! duplicating channels through a token data link per pair. A seeded
//! scheduler picks one atomic step at a time: a timer activation or the
//! arrival of one packet. Every step is written to a trace.

pub mod channel;
pub mod link;
pub mod sim;
pub mod trace;

pub type Pid = u32;

pub use channel::{Channel, DropPolicy, Packet, PacketKind};
pub use link::{LinkEnd, Role};
pub use sim::{Io, Process, SimConfig, SimError, Simulation, Status};
pub use trace::{digest_of, Event, EventKind, Note, Trace};
