//! Token exchange over one pair of anti-parallel channels.
//!
//! The endpoint with the greater identifier sends the token. Before the
//! first token it cleans the link: it repeats a `Clean` probe under a fresh
//! nonce until more than `2·cap` matching acknowledgments came back. The
//! receiver adopts a nonce only after more than `cap` packets carrying it,
//! which no set of leftover packets can supply. Tokens and acks of any other
//! nonce are ignored, so nothing sent before the cleaning reaches the
//! application.
//!
//! A token round completes when the sender has more than `cap` acks for its
//! current sequence number. Each completed round is a heartbeat on both
//! sides and delivers one payload in each direction.

use crate::channel::{Packet, PacketKind};
use crate::Pid;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Sender,
    Receiver,
}

#[derive(Clone, Debug)]
pub enum LinkOut<M> {
    Send(Packet<M>),
    Deliver(M),
    Heartbeat,
    Up,
}

#[derive(Clone, Debug)]
pub struct LinkEnd {
    pub me: Pid,
    pub peer: Pid,
    pub role: Role,
    pub cap: usize,
    // sender side
    pub epoch: u64,
    pub cleaning: bool,
    pub clean_acks: u32,
    pub seq: u64,
    pub acks: u32,
    // receiver side
    pub cur_epoch: Option<u64>,
    pub cand: Option<(u64, u32)>,
    pub last_seen: Option<u64>,
}

impl LinkEnd {
    pub fn new(me: Pid, peer: Pid, cap: usize) -> Self {
        LinkEnd {
            me,
            peer,
            role: if me > peer { Role::Sender } else { Role::Receiver },
            cap,
            epoch: 0,
            cleaning: true,
            clean_acks: 0,
            seq: 0,
            acks: 0,
            cur_epoch: None,
            cand: None,
            last_seen: None,
        }
    }

    /// Restart under a new nonce. Only meaningful on the sender side; the
    /// receiver forgets its adopted nonce.
    pub fn reset(&mut self, nonce: u64) {
        self.epoch = nonce;
        self.cleaning = true;
        self.clean_acks = 0;
        self.seq = 0;
        self.acks = 0;
        self.cur_epoch = None;
        self.cand = None;
        self.last_seen = None;
    }

    pub fn is_up(&self) -> bool {
        match self.role {
            Role::Sender => !self.cleaning,
            Role::Receiver => self.cur_epoch.is_some(),
        }
    }

    fn packet<M>(&self, kind: PacketKind, epoch: u64, seq: u64, payload: Option<M>) -> Packet<M> {
        Packet {
            src: self.me,
            dst: self.peer,
            kind,
            epoch,
            seq,
            payload,
        }
    }

    /// Timer-driven retransmission. Receivers only answer.
    pub fn resend<M>(&self, payload: Option<M>) -> Option<Packet<M>> {
        match self.role {
            Role::Receiver => None,
            Role::Sender if self.cleaning => {
                Some(self.packet(PacketKind::Clean, self.epoch, 0, None))
            }
            Role::Sender => Some(self.packet(PacketKind::Token, self.epoch, self.seq, payload)),
        }
    }

    /// Counts toward adopting `e`; true once adopted.
    fn adopt(&mut self, e: u64, out_up: &mut bool) -> bool {
        if self.cur_epoch == Some(e) {
            return true;
        }
        let n = match self.cand {
            Some((c, n)) if c == e => n + 1,
            _ => 1,
        };
        self.cand = Some((e, n));
        if n as usize > self.cap {
            self.cur_epoch = Some(e);
            self.cand = None;
            self.last_seen = None;
            *out_up = true;
            return true;
        }
        false
    }

    /// Handles one arriving packet. `reply` supplies the payload for our
    /// answer when one is needed.
    pub fn on_packet<M>(&mut self, p: Packet<M>, reply: impl FnOnce() -> Option<M>) -> Vec<LinkOut<M>> {
        let mut out = Vec::new();
        if p.src != self.peer || p.dst != self.me {
            return out;
        }
        match (self.role, p.kind) {
            (Role::Receiver, PacketKind::Clean) => {
                let mut up = false;
                self.adopt(p.epoch, &mut up);
                if up {
                    out.push(LinkOut::Up);
                }
                out.push(LinkOut::Send(self.packet(PacketKind::CleanAck, p.epoch, 0, None)));
            }
            (Role::Receiver, PacketKind::Token) => {
                let mut up = false;
                if !self.adopt(p.epoch, &mut up) {
                    return out;
                }
                if up {
                    out.push(LinkOut::Up);
                }
                // Older tokens still in the channel carry stale payloads.
                if self.last_seen.is_none_or(|l| p.seq > l) {
                    self.last_seen = Some(p.seq);
                    if let Some(m) = p.payload {
                        out.push(LinkOut::Deliver(m));
                    }
                    out.push(LinkOut::Heartbeat);
                }
                out.push(LinkOut::Send(self.packet(PacketKind::Ack, p.epoch, p.seq, reply())));
            }
            (Role::Sender, PacketKind::CleanAck) => {
                if self.cleaning && p.epoch == self.epoch {
                    self.clean_acks += 1;
                    if self.clean_acks as usize > 2 * self.cap {
                        self.cleaning = false;
                        self.seq = 1;
                        self.acks = 0;
                        out.push(LinkOut::Up);
                    }
                }
            }
            (Role::Sender, PacketKind::Ack) => {
                if !self.cleaning && p.epoch == self.epoch && p.seq == self.seq {
                    self.acks += 1;
                    if self.acks as usize > self.cap {
                        if let Some(m) = p.payload {
                            out.push(LinkOut::Deliver(m));
                        }
                        out.push(LinkOut::Heartbeat);
                        self.seq += 1;
                        self.acks = 0;
                    }
                }
            }
            _ => {}
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(cap: usize) -> (LinkEnd, LinkEnd) {
        let mut s = LinkEnd::new(7, 3, cap);
        let mut r = LinkEnd::new(3, 7, cap);
        s.reset(99);
        r.reset(0);
        (s, r)
    }

    fn sends<M>(v: Vec<LinkOut<M>>) -> Vec<Packet<M>> {
        v.into_iter()
            .filter_map(|o| match o {
                LinkOut::Send(p) => Some(p),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn greater_id_sends() {
        let (s, r) = pair(1);
        assert_eq!(s.role, Role::Sender);
        assert_eq!(r.role, Role::Receiver);
        assert!(r.resend::<u8>(None).is_none());
    }

    #[test]
    fn cleaning_needs_more_than_two_cap_acks() {
        let cap = 2;
        let (mut s, mut r) = pair(cap);
        let mut acks = 0;
        while !s.is_up() {
            let probe = s.resend::<u8>(None).unwrap();
            assert_eq!(probe.kind, PacketKind::Clean);
            for a in sends(r.on_packet(probe, || None)) {
                acks += 1;
                s.on_packet(a, || None);
            }
        }
        // Oracle: cleaning completes on the first ack past 2·cap.
        assert_eq!(acks, 2 * cap + 1);
        assert!(r.is_up());
    }

    #[test]
    fn leftover_tokens_are_ignored() {
        let cap = 2;
        let (_, mut r) = pair(cap);
        for seq in 0..cap as u64 {
            let stale = Packet {
                src: 7,
                dst: 3,
                kind: PacketKind::Token,
                epoch: 5,
                seq,
                payload: Some(1u8),
            };
            assert!(r.on_packet(stale, || None).is_empty());
        }
        assert!(!r.is_up());
    }

    #[test]
    fn wrong_label_ignored() {
        let (_, mut r) = pair(1);
        let p = Packet {
            src: 9,
            dst: 3,
            kind: PacketKind::Clean,
            epoch: 99,
            seq: 0,
            payload: None::<u8>,
        };
        assert!(r.on_packet(p, || None).is_empty());
    }

    #[test]
    fn round_delivers_both_ways() {
        let cap = 1;
        let (mut s, mut r) = pair(cap);
        while !s.is_up() {
            let probe = s.resend::<u8>(None).unwrap();
            for a in sends(r.on_packet(probe, || None)) {
                s.on_packet(a, || None);
            }
        }
        let mut got_r = Vec::new();
        let mut got_s = Vec::new();
        for _ in 0..=cap {
            let t = s.resend(Some(10u8)).unwrap();
            for o in r.on_packet(t, || Some(20u8)) {
                match o {
                    LinkOut::Deliver(m) => got_r.push(m),
                    LinkOut::Send(a) => {
                        for o in s.on_packet(a, || None) {
                            if let LinkOut::Deliver(m) = o {
                                got_s.push(m);
                            }
                        }
                    }
                    _ => {}
                }
            }
        }
        assert_eq!(got_r, vec![10]);
        assert_eq!(got_s, vec![20]);
        assert_eq!(s.seq, 2);
    }

    #[test]
    fn late_duplicate_not_redelivered() {
        let cap = 1;
        let (mut s, mut r) = pair(cap);
        while !s.is_up() {
            let probe = s.resend::<u8>(None).unwrap();
            for a in sends(r.on_packet(probe, || None)) {
                s.on_packet(a, || None);
            }
        }
        let old = s.resend(Some(1u8)).unwrap();
        for a in sends(r.on_packet(old.clone(), || None)) {
            s.on_packet(a, || None);
        }
        for a in sends(r.on_packet(s.resend(Some(1u8)).unwrap(), || None)) {
            s.on_packet(a, || None);
        }
        assert_eq!(s.seq, 2);
        let fresh = s.resend(Some(2u8)).unwrap();
        let got: Vec<_> = r.on_packet(fresh, || None);
        assert!(got.iter().any(|o| matches!(o, LinkOut::Deliver(2))));
        let again = r.on_packet(old, || None);
        assert!(!again.iter().any(|o| matches!(o, LinkOut::Deliver(_))));
    }
}
