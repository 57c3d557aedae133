use std::fmt;

use sha2::{Digest, Sha256};

use crate::channel::PacketKind;
use crate::Pid;

/// Structured trace notes emitted by processes.
pub trait Note: fmt::Debug {
    fn kind(&self) -> &'static str;
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EventKind {
    Timer,
    Recv { from: Pid, kind: PacketKind },
    Deliver { from: Pid },
    Lost { from: Pid },
    Dup { from: Pid },
    Overflow { to: Pid },
    Noop,
    Crash,
    Join,
    LinkUp { peer: Pid },
    Heartbeat { from: Pid },
    Inject,
    Note(&'static str),
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EventKind::Timer => write!(f, "timer"),
            EventKind::Recv { from, kind } => write!(f, "recv:{}<{}", kind.as_str(), from),
            EventKind::Deliver { from } => write!(f, "deliver<{from}"),
            EventKind::Lost { from } => write!(f, "lost<{from}"),
            EventKind::Dup { from } => write!(f, "dup<{from}"),
            EventKind::Overflow { to } => write!(f, "overflow>{to}"),
            EventKind::Noop => write!(f, "noop"),
            EventKind::Crash => write!(f, "crash"),
            EventKind::Join => write!(f, "join"),
            EventKind::LinkUp { peer } => write!(f, "link-up:{peer}"),
            EventKind::Heartbeat { from } => write!(f, "hb<{from}"),
            EventKind::Inject => write!(f, "inject"),
            EventKind::Note(k) => write!(f, "note:{k}"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Event<N> {
    pub step: u64,
    pub proc: Pid,
    pub kind: EventKind,
    pub digest: String,
    pub note: Option<N>,
}

impl<N> Event<N> {
    pub fn line(&self) -> String {
        format!("{}\t{}\t{}\t{}", self.step, self.proc, self.kind, self.digest)
    }
}

/// First 8 bytes of the SHA-256 of `body`'s debug rendering, in hex.
pub fn digest_of(body: &impl fmt::Debug) -> String {
    let s = format!("{body:?}");
    let h = Sha256::digest(s.as_bytes());
    hex::encode(&h[..8])
}

#[derive(Clone, Debug)]
pub struct Trace<N> {
    pub events: Vec<Event<N>>,
}

impl<N> Default for Trace<N> {
    fn default() -> Self {
        Trace { events: Vec::new() }
    }
}

impl<N> Trace<N> {
    pub fn lines(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&e.line());
            out.push('\n');
        }
        out
    }

    /// SHA-256 over the rendered lines.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for e in &self.events {
            h.update(e.line().as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    pub fn notes(&self) -> impl Iterator<Item = (u64, Pid, &N)> + '_ {
        self.events
            .iter()
            .filter_map(|e| e.note.as_ref().map(|n| (e.step, e.proc, n)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_is_stable() {
        assert_eq!(digest_of(&(1, "a")), digest_of(&(1, "a")));
        assert_ne!(digest_of(&(1, "a")), digest_of(&(2, "a")));
        assert_eq!(digest_of(&0u8).len(), 16);
    }

    #[test]
    fn line_format() {
        let e: Event<()> = Event {
            step: 3,
            proc: 2,
            kind: EventKind::Recv {
                from: 1,
                kind: PacketKind::Ack,
            },
            digest: "ab".into(),
            note: None,
        };
        assert_eq!(e.line(), "3\t2\trecv:ack<1\tab");
    }
}
