use std::collections::VecDeque;

use crate::Pid;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PacketKind {
    /// Token carrying the holder's payload.
    Token,
    Ack,
    /// Link-cleaning probe.
    Clean,
    CleanAck,
}

impl PacketKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PacketKind::Token => "token",
            PacketKind::Ack => "ack",
            PacketKind::Clean => "clean",
            PacketKind::CleanAck => "clean-ack",
        }
    }
}

/// A packet on one directed channel. `src`/`dst` form the link label the
/// receiving endpoint checks on arrival.
#[derive(Clone, Debug, PartialEq)]
pub struct Packet<M> {
    pub src: Pid,
    pub dst: Pid,
    pub kind: PacketKind,
    /// Cleaning nonce the packet belongs to.
    pub epoch: u64,
    pub seq: u64,
    pub payload: Option<M>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum DropPolicy {
    /// A full channel discards the incoming packet.
    #[default]
    DropNew,
    /// A full channel discards its oldest packet.
    DropOld,
}

#[derive(Clone, Debug)]
pub struct Channel<M> {
    pub src: Pid,
    pub dst: Pid,
    pub cap: usize,
    pub packets: VecDeque<Packet<M>>,
    /// Step of the last delivery out of this channel.
    pub last_delivery: u64,
}

impl<M> Channel<M> {
    pub fn new(src: Pid, dst: Pid, cap: usize) -> Self {
        assert!(cap > 0, "channel capacity must be positive");
        Channel {
            src,
            dst,
            cap,
            packets: VecDeque::with_capacity(cap),
            last_delivery: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.packets.len() >= self.cap
    }

    /// Inserts `p`. Returns the packet dropped on overflow, if any.
    pub fn push(&mut self, p: Packet<M>, policy: DropPolicy) -> Option<Packet<M>> {
        if !self.is_full() {
            self.packets.push_back(p);
            return None;
        }
        match policy {
            DropPolicy::DropNew => Some(p),
            DropPolicy::DropOld => {
                let old = self.packets.pop_front();
                self.packets.push_back(p);
                old
            }
        }
    }

    pub fn take(&mut self, idx: usize) -> Option<Packet<M>> {
        self.packets.remove(idx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pkt(seq: u64) -> Packet<u8> {
        Packet {
            src: 1,
            dst: 2,
            kind: PacketKind::Token,
            epoch: 0,
            seq,
            payload: None,
        }
    }

    #[test]
    fn cap_one_holds_single() {
        let mut c = Channel::new(1, 2, 1);
        assert!(c.push(pkt(1), DropPolicy::DropNew).is_none());
        assert_eq!(c.len(), 1);
        let dropped = c.push(pkt(2), DropPolicy::DropNew).unwrap();
        assert_eq!(dropped.seq, 2);
        assert_eq!(c.packets[0].seq, 1);
    }

    #[test]
    fn drop_old_keeps_newest() {
        let mut c = Channel::new(1, 2, 2);
        c.push(pkt(1), DropPolicy::DropOld);
        c.push(pkt(2), DropPolicy::DropOld);
        let dropped = c.push(pkt(3), DropPolicy::DropOld).unwrap();
        assert_eq!(dropped.seq, 1);
        let seqs: Vec<u64> = c.packets.iter().map(|p| p.seq).collect();
        assert_eq!(seqs, vec![2, 3]);
    }
}
