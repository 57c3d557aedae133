use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::channel::{Channel, DropPolicy, Packet};
use crate::link::{LinkEnd, LinkOut};
use crate::trace::{digest_of, Event, EventKind, Note, Trace};
use crate::Pid;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("step budget exhausted")]
    Halted,
    #[error("unknown endpoint {0}")]
    UnknownEndpoint(Pid),
    #[error("injection of {got} packets exceeds capacity {cap}")]
    ExceedsCap { got: usize, cap: usize },
}

/// Adversary and budget settings.
#[derive(Clone, Debug)]
pub struct SimConfig {
    pub cap: usize,
    pub fairness_window: u64,
    pub seed: u64,
    pub step_budget: u64,
    pub drop_policy: DropPolicy,
    /// Deliveries pick among this many packets at the head of a channel.
    pub reorder_window: usize,
    pub loss: f64,
    pub dup: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            cap: 2,
            fairness_window: 64,
            seed: 0,
            step_budget: 10_000,
            drop_policy: DropPolicy::DropNew,
            reorder_window: 2,
            loss: 0.05,
            dup: 0.02,
        }
    }
}

/// Handle a process uses to talk to the simulator during one step.
pub struct Io<M, N> {
    pub me: Pid,
    pub step: u64,
    /// Present processors other than `me`, crashed or not.
    pub peers: Vec<Pid>,
    posts: Vec<(Pid, M)>,
    notes: Vec<N>,
}

impl<M, N> Io<M, N> {
    /// Replaces the payload the link to `to` carries from now on.
    pub fn post(&mut self, to: Pid, msg: M) {
        self.posts.push((to, msg));
    }

    pub fn note(&mut self, n: N) {
        self.notes.push(n);
    }
}

pub trait Process {
    type Msg: Clone + fmt::Debug;
    type Note: Note;

    fn on_timer(&mut self, io: &mut Io<Self::Msg, Self::Note>);
    fn on_message(&mut self, from: Pid, msg: Self::Msg, io: &mut Io<Self::Msg, Self::Note>);
    fn on_heartbeat(&mut self, _from: Pid, _io: &mut Io<Self::Msg, Self::Note>) {}
    fn on_link_up(&mut self, _peer: Pid, _io: &mut Io<Self::Msg, Self::Note>) {}
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Absent,
    Live,
    Crashed,
}

struct Slot<P> {
    proc: P,
    status: Status,
    last_timer: u64,
}

pub struct Simulation<P: Process> {
    pub cfg: SimConfig,
    rng: ChaCha8Rng,
    step: u64,
    slots: BTreeMap<Pid, Slot<P>>,
    channels: BTreeMap<(Pid, Pid), Channel<P::Msg>>,
    links: BTreeMap<(Pid, Pid), LinkEnd>,
    outbox: BTreeMap<(Pid, Pid), P::Msg>,
    trace: Trace<P::Note>,
    injected: usize,
}

enum Pick {
    Timer(Pid),
    Deliver((Pid, Pid), usize, bool),
    Idle,
}

impl<P: Process> Simulation<P> {
    pub fn new(cfg: SimConfig) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Simulation {
            cfg,
            rng,
            step: 0,
            slots: BTreeMap::new(),
            channels: BTreeMap::new(),
            links: BTreeMap::new(),
            outbox: BTreeMap::new(),
            trace: Trace::default(),
            injected: 0,
        }
    }

    /// Registers a processor. Absent ones enter later through [`join`].
    ///
    /// [`join`]: Simulation::join
    pub fn add(&mut self, pid: Pid, proc: P, live: bool) {
        let status = if live { Status::Live } else { Status::Absent };
        let ids: Vec<Pid> = self.slots.keys().copied().collect();
        for q in ids {
            for (a, b) in [(pid, q), (q, pid)] {
                self.channels.insert((a, b), Channel::new(a, b, self.cfg.cap));
                self.links.insert((a, b), LinkEnd::new(a, b, self.cfg.cap));
            }
        }
        self.slots.insert(
            pid,
            Slot {
                proc,
                status,
                last_timer: 0,
            },
        );
    }

    /// Cleans every link between live processors.
    pub fn start(&mut self) {
        let live: Vec<Pid> = self.live().into_iter().collect();
        for (n, &a) in live.iter().enumerate() {
            for &b in &live[n + 1..] {
                self.establish_link(a, b);
            }
        }
    }

    pub fn establish_link(&mut self, a: Pid, b: Pid) {
        let nonce: u64 = self.rng.gen();
        for key in [(a, b), (b, a)] {
            if let Some(l) = self.links.get_mut(&key) {
                l.reset(nonce);
            }
        }
    }

    pub fn step_no(&self) -> u64 {
        self.step
    }

    pub fn status(&self, p: Pid) -> Option<Status> {
        self.slots.get(&p).map(|s| s.status)
    }

    pub fn live(&self) -> BTreeSet<Pid> {
        self.slots
            .iter()
            .filter(|(_, s)| s.status == Status::Live)
            .map(|(&p, _)| p)
            .collect()
    }

    pub fn ids(&self) -> Vec<Pid> {
        self.slots.keys().copied().collect()
    }

    pub fn process(&self, p: Pid) -> Option<&P> {
        self.slots.get(&p).map(|s| &s.proc)
    }

    pub fn process_mut(&mut self, p: Pid) -> Option<&mut P> {
        self.slots.get_mut(&p).map(|s| &mut s.proc)
    }

    pub fn channel(&self, src: Pid, dst: Pid) -> Option<&Channel<P::Msg>> {
        self.channels.get(&(src, dst))
    }

    pub fn channels(&self) -> impl Iterator<Item = &Channel<P::Msg>> + '_ {
        self.channels.values()
    }

    pub fn link(&self, me: Pid, peer: Pid) -> Option<&LinkEnd> {
        self.links.get(&(me, peer))
    }

    pub fn trace(&self) -> &Trace<P::Note> {
        &self.trace
    }

    pub fn into_trace(self) -> Trace<P::Note> {
        self.trace
    }

    pub fn injected(&self) -> usize {
        self.injected
    }

    fn record(&mut self, proc: Pid, kind: EventKind, digest: String, note: Option<P::Note>) {
        self.trace.events.push(Event {
            step: self.step,
            proc,
            kind,
            digest,
            note,
        });
    }

    /// Adds a harness-level note to the trace.
    pub fn note(&mut self, proc: Pid, n: P::Note) {
        let d = digest_of(&n);
        self.record(proc, EventKind::Note(n.kind()), d, Some(n));
    }

    pub fn crash(&mut self, p: Pid) -> Result<(), SimError> {
        let s = self.slots.get_mut(&p).ok_or(SimError::UnknownEndpoint(p))?;
        s.status = Status::Crashed;
        self.record(p, EventKind::Crash, String::new(), None);
        Ok(())
    }

    /// Brings an absent processor in and cleans its links to everyone
    /// present.
    pub fn join(&mut self, p: Pid) -> Result<(), SimError> {
        let s = self.slots.get_mut(&p).ok_or(SimError::UnknownEndpoint(p))?;
        s.status = Status::Live;
        s.last_timer = self.step;
        let others: Vec<Pid> = self
            .slots
            .iter()
            .filter(|(&q, s)| q != p && s.status != Status::Absent)
            .map(|(&q, _)| q)
            .collect();
        for q in others {
            self.establish_link(p, q);
        }
        self.record(p, EventKind::Join, String::new(), None);
        Ok(())
    }

    /// Overwrites the contents of channel `src → dst`.
    pub fn inject_channel(
        &mut self,
        src: Pid,
        dst: Pid,
        packets: Vec<Packet<P::Msg>>,
    ) -> Result<(), SimError> {
        let cap = self.cfg.cap;
        if packets.len() > cap {
            return Err(SimError::ExceedsCap {
                got: packets.len(),
                cap,
            });
        }
        let ch = self
            .channels
            .get_mut(&(src, dst))
            .ok_or(SimError::UnknownEndpoint(if self.slots.contains_key(&src) { dst } else { src }))?;
        self.injected += packets.len();
        ch.packets = packets.into();
        let d = digest_of(&ch.packets);
        self.record(src, EventKind::Inject, d, None);
        Ok(())
    }

    pub fn link_mut(&mut self, me: Pid, peer: Pid) -> Option<&mut LinkEnd> {
        self.links.get_mut(&(me, peer))
    }

    fn peers_of(&self, p: Pid) -> Vec<Pid> {
        self.slots
            .iter()
            .filter(|(&q, s)| q != p && s.status != Status::Absent)
            .map(|(&q, _)| q)
            .collect()
    }

    fn with_io<R>(
        &mut self,
        p: Pid,
        f: impl FnOnce(&mut P, &mut Io<P::Msg, P::Note>) -> R,
    ) -> R {
        let mut io = Io {
            me: p,
            step: self.step,
            peers: self.peers_of(p),
            posts: Vec::new(),
            notes: Vec::new(),
        };
        let slot = self.slots.get_mut(&p).expect("known processor");
        let r = f(&mut slot.proc, &mut io);
        for (to, m) in io.posts {
            if self.links.contains_key(&(p, to)) {
                self.outbox.insert((p, to), m);
            }
        }
        for n in io.notes {
            let d = digest_of(&n);
            self.record(p, EventKind::Note(n.kind()), d, Some(n));
        }
        r
    }

    fn push_packet(&mut self, pkt: Packet<P::Msg>) {
        let (src, dst) = (pkt.src, pkt.dst);
        let policy = self.cfg.drop_policy;
        let Some(ch) = self.channels.get_mut(&(src, dst)) else {
            return;
        };
        if ch.push(pkt, policy).is_some() {
            self.record(src, EventKind::Overflow { to: dst }, String::new(), None);
        }
    }

    fn pick(&mut self) -> Pick {
        let s = self.step;
        let w = self.cfg.fairness_window;
        let overdue_timer = self
            .slots
            .iter()
            .filter(|(_, sl)| sl.status == Status::Live && s.saturating_sub(sl.last_timer) >= w)
            .min_by_key(|(&p, sl)| (sl.last_timer, p))
            .map(|(&p, _)| p);
        if let Some(p) = overdue_timer {
            return Pick::Timer(p);
        }
        let overdue_ch = self
            .channels
            .iter()
            .filter(|(_, c)| !c.is_empty() && s.saturating_sub(c.last_delivery) >= w)
            .min_by_key(|(&k, c)| (c.last_delivery, k))
            .map(|(&k, c)| (k, c.len() - 1));
        if let Some((k, idx)) = overdue_ch {
            return Pick::Deliver(k, idx, true);
        }
        let live: Vec<Pid> = self.live().into_iter().collect();
        let busy: Vec<(Pid, Pid)> = self
            .channels
            .iter()
            .filter(|(_, c)| !c.is_empty())
            .map(|(&k, _)| k)
            .collect();
        let timer = !live.is_empty() && (busy.is_empty() || self.rng.gen_bool(0.5));
        if timer {
            let p = live[self.rng.gen_range(0..live.len())];
            return Pick::Timer(p);
        }
        if busy.is_empty() {
            return Pick::Idle;
        }
        let k = busy[self.rng.gen_range(0..busy.len())];
        let len = self.channels[&k].len();
        let idx = self.rng.gen_range(0..len.min(self.cfg.reorder_window.max(1)));
        Pick::Deliver(k, idx, false)
    }

    /// Executes one scheduler step.
    pub fn step(&mut self) -> Result<(), SimError> {
        if self.step >= self.cfg.step_budget {
            return Err(SimError::Halted);
        }
        self.step += 1;
        match self.pick() {
            Pick::Idle => self.record(0, EventKind::Noop, String::new(), None),
            Pick::Timer(p) => self.timer(p),
            Pick::Deliver(k, idx, forced) => self.deliver(k, idx, forced),
        }
        for c in self.channels.values() {
            assert!(c.len() <= c.cap, "channel {}->{} over capacity", c.src, c.dst);
        }
        Ok(())
    }

    /// Steps until the budget is exhausted.
    pub fn run(&mut self) {
        while self.step().is_ok() {}
    }

    fn timer(&mut self, p: Pid) {
        let step = self.step;
        if let Some(s) = self.slots.get_mut(&p) {
            s.last_timer = step;
        }
        self.record(p, EventKind::Timer, String::new(), None);
        self.with_io(p, |proc, io| proc.on_timer(io));
        let peers = self.peers_of(p);
        for q in peers {
            let payload = self.outbox.get(&(p, q)).cloned();
            let pkt = self.links.get(&(p, q)).and_then(|l| l.resend(payload));
            if let Some(pkt) = pkt {
                self.push_packet(pkt);
            }
        }
    }

    fn deliver(&mut self, key: (Pid, Pid), idx: usize, forced: bool) {
        let (src, dst) = key;
        let step = self.step;
        let loss = !forced && self.cfg.loss > 0.0 && self.rng.gen_bool(self.cfg.loss);
        let dup = !forced && !loss && self.cfg.dup > 0.0 && self.rng.gen_bool(self.cfg.dup);
        let ch = self.channels.get_mut(&key).expect("picked channel");
        ch.last_delivery = step;
        let pkt = if dup {
            ch.packets[idx].clone()
        } else {
            ch.take(idx).expect("picked index")
        };
        if loss {
            self.record(dst, EventKind::Lost { from: src }, digest_of(&pkt), None);
            return;
        }
        if dup {
            self.record(dst, EventKind::Dup { from: src }, String::new(), None);
        }
        if self.status(dst) != Some(Status::Live) {
            self.record(dst, EventKind::Noop, String::new(), None);
            return;
        }
        self.record(dst, EventKind::Recv { from: src, kind: pkt.kind }, digest_of(&pkt), None);
        let reply = self.outbox.get(&(dst, src)).cloned();
        let outs = match self.links.get_mut(&(dst, src)) {
            Some(l) => l.on_packet(pkt, || reply),
            None => return,
        };
        for o in outs {
            match o {
                LinkOut::Send(p) => self.push_packet(p),
                LinkOut::Deliver(m) => {
                    self.record(dst, EventKind::Deliver { from: src }, String::new(), None);
                    self.with_io(dst, |proc, io| proc.on_message(src, m, io));
                }
                LinkOut::Heartbeat => {
                    self.record(dst, EventKind::Heartbeat { from: src }, String::new(), None);
                    self.with_io(dst, |proc, io| proc.on_heartbeat(src, io));
                }
                LinkOut::Up => {
                    self.record(dst, EventKind::LinkUp { peer: src }, String::new(), None);
                    self.with_io(dst, |proc, io| proc.on_link_up(src, io));
                }
            }
        }
    }
}
