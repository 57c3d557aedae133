//! One processor: the whole protocol stack behind a netsim process.

use std::collections::BTreeMap;

use reconf_core::counter::{CounterPair, Counters, IncMsg, IncOutcome, IncrementClient};
use reconf_core::fd::{FailureDetector, FdMode};
use reconf_core::joining::{JoinMsg, Joining};
use reconf_core::labeling::{EpochLabel, LabelStore, Pair, StoreEvent};
use reconf_core::recma::{Recma, RecmaInputs, RecmaMsg, TriggerMode};
use reconf_core::recsa::{Recsa, RecsaMsg};
use reconf_core::vssmr::{AppendLog, VsInputs, VsNode, VsNote, VsRecord, VsState};
use reconf_core::{PSet, Pid};
use reconf_netsim::{Io, Process};

use crate::notes::{Ev, Snap};

/// Creator id used to mark injected taint.
pub const TAINT: Pid = Pid::MAX;

type Vs = VsState<AppendLog>;
type LabelPair = Pair<EpochLabel>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EvalRule {
    Never,
    Always { from: u64 },
    /// Fewer than `fraction` of the configuration trusted.
    LiveBelow { fraction: f64, from: u64 },
}

#[derive(Clone, Debug)]
pub struct NodeParams {
    pub n_bound: usize,
    pub gap_factor: f64,
    pub fd_mode: FdMode,
    pub cap: usize,
    pub b: u32,
    pub labels: bool,
    pub vs: bool,
    pub mode: TriggerMode,
    pub collapse_after: u32,
    pub eval: EvalRule,
    pub inputs: u32,
    pub increments: u32,
    pub inc_from: u64,
    /// Steps between the end of one increment and the start of the next.
    pub inc_gap: u64,
}

/// Everything one link carries from one node to another.
#[derive(Clone, Debug, Default)]
pub struct Bundle {
    pub recsa: Option<RecsaMsg>,
    pub recma: Option<RecmaMsg>,
    pub label: Option<(LabelPair, LabelPair)>,
    pub counter: Option<(CounterPair, CounterPair)>,
    pub inc: Vec<IncMsg>,
    pub join: Option<JoinMsg<Option<Vs>>>,
    pub vs: Option<VsRecord<AppendLog>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Owner {
    Workload,
    Vs,
}

pub struct Node {
    pub me: Pid,
    pub params: NodeParams,
    pub fd: FailureDetector,
    pub recsa: Recsa,
    pub recma: Recma,
    pub joining: Joining<Option<Vs>>,
    pub labels: Option<LabelStore>,
    pub counters: Counters,
    pub client: IncrementClient,
    pub vs: VsNode<AppendLog>,
    pub app: AppendLog,
    pub eval_forced: Option<bool>,
    pub admit: bool,
    pub inc_left: u32,
    next_inc_at: u64,
    vs_wants_inc: bool,
    owner: Option<(u64, Owner)>,
    replies: BTreeMap<Pid, (u64, Vec<IncMsg>)>,
    join_replies: BTreeMap<Pid, JoinMsg<Option<Vs>>>,
    join_requests: Vec<Pid>,
    last_snap: Option<Snap>,
    label_rx: bool,
    label_members: PSet,
}

impl Node {
    pub fn new(me: Pid, params: NodeParams) -> Self {
        let mut recsa = Recsa::boot(me);
        recsa.collapse_after = params.collapse_after;
        let mut recma = Recma::new(me);
        recma.mode = params.mode;
        Node {
            me,
            fd: FailureDetector::new(me, params.fd_mode, params.n_bound, params.gap_factor),
            recsa,
            recma,
            joining: Joining::new(me),
            labels: params.labels.then(|| LabelStore::new(me, params.cap)),
            counters: Counters::new(me, params.cap, params.b),
            client: IncrementClient::new(me),
            vs: VsNode::new(me),
            app: AppendLog::new(me, params.inputs),
            eval_forced: None,
            admit: true,
            inc_left: params.increments,
            next_inc_at: params.inc_from,
            vs_wants_inc: false,
            owner: None,
            replies: BTreeMap::new(),
            join_replies: BTreeMap::new(),
            join_requests: Vec::new(),
            last_snap: None,
            label_rx: false,
            label_members: PSet::new(),
            params,
        }
    }

    /// Quiet participant of `config`, trusting `peers`.
    pub fn steady(me: Pid, params: NodeParams, config: &PSet, peers: &PSet) -> Self {
        let mut n = Node::new(me, params);
        let c = n.recsa.collapse_after;
        n.recsa = Recsa::steady(me, config, peers);
        n.recsa.collapse_after = c;
        n.recma.prev_config = n.recsa.get_config();
        n
    }

    pub fn eval_conf(&self, step: u64) -> bool {
        if let Some(f) = self.eval_forced {
            return f;
        }
        match self.params.eval {
            EvalRule::Never => false,
            EvalRule::Always { from } => step >= from,
            EvalRule::LiveBelow { fraction, from } => {
                if step < from {
                    return false;
                }
                match self.recsa.get_config().set() {
                    Some(c) if !c.is_empty() => {
                        let live = c.intersection(self.recsa.own_fd()).count();
                        (live as f64) < fraction * c.len() as f64
                    }
                    _ => false,
                }
            }
        }
    }

    fn is_member(&self) -> bool {
        self.recsa
            .get_config()
            .set()
            .is_some_and(|c| c.contains(&self.me))
    }

    /// Application variables back to defaults, as joining requires.
    fn reset_app(&mut self) {
        self.vs.reset_vars();
        self.counters = Counters::new(self.me, self.params.cap, self.params.b);
        if self.labels.is_some() {
            self.labels = Some(LabelStore::new(self.me, self.params.cap));
        }
        self.client.session = None;
        self.owner = None;
        self.vs_wants_inc = false;
        self.replies.clear();
        self.label_rx = false;
        self.label_members.clear();
    }

    /// Label state was just overwritten, so no receipt since counts.
    pub fn labels_scrambled(&mut self) {
        self.label_rx = false;
    }

    pub fn tainted(&self) -> bool {
        let lbl = |l: &EpochLabel| l.creator == TAINT;
        self.vs.own.state.iter().any(|m| m.origin == TAINT)
            || self.vs.own.msg.items.values().any(|m| m.origin == TAINT)
            || self.counters.store.all_labels().any(lbl)
            || self.labels.as_ref().is_some_and(|s| s.all_labels().any(lbl))
    }

    fn foreign(&self) -> bool {
        if !self.is_member() {
            return false;
        }
        self.labels.as_ref().is_some_and(|s| {
            let m = &s.members;
            s.all_labels().any(|l| !m.contains(&l.creator))
        })
    }

    pub fn snap(&self) -> Snap {
        let me = self.me;
        Snap {
            stale: self.recsa.detect_stale().bits(),
            participant: self.recsa.is_participant(),
            config: self.recsa.own_config().clone(),
            prp: self.recsa.own_prp().clone(),
            degree: self.recsa.degree(me),
            no_reco: self.recsa.no_reco(),
            fd: self.recsa.own_fd().clone(),
            part: self.recsa.own_part(),
            max_label: self
                .labels
                .as_ref()
                .and_then(|s| s.own_max().legit().then(|| s.own_max().ml).flatten()),
            foreign: self.foreign(),
            label_rx: self.label_rx,
            tainted: self.tainted(),
            crd: self.vs.crd,
        }
    }

    fn emit_snap(&mut self, io: &mut Io<Bundle, Ev>) {
        let s = self.snap();
        if self.last_snap.as_ref() != Some(&s) {
            io.note(Ev::Snap(Box::new(s.clone())));
            self.last_snap = Some(s);
        }
    }

    fn drain_store_events(&mut self, io: &mut Io<Bundle, Ev>) {
        if let Some(ls) = self.labels.as_mut() {
            for e in ls.events.drain(..) {
                io.note(match e {
                    StoreEvent::Created(l) => Ev::LabelCreated(l),
                    StoreEvent::Flushed => Ev::LabelFlush,
                    StoreEvent::Rebuilt(c) => Ev::Rebuilt(c),
                });
            }
            if ls.members != self.label_members {
                self.label_members = ls.members.clone();
                self.label_rx = false;
            }
        }
        for e in self.counters.store.events.drain(..) {
            if let StoreEvent::Created(l) = e {
                io.note(Ev::CounterLabel(l));
            }
        }
    }

    fn vs_notes(&mut self, notes: Vec<VsNote<AppendLog>>, io: &mut Io<Bundle, Ev>) {
        for n in notes {
            io.note(match n {
                VsNote::Fetch(m) => Ev::Fetch(m),
                VsNote::Deliver { view, msgs, .. } => Ev::Deliver { view, msgs },
                VsNote::Proposed(v) => Ev::Proposed(v),
                VsNote::Installed(v) => Ev::Installed(v),
                VsNote::Settled { view, state } => Ev::Settled { view, state },
                VsNote::Drained(s) => Ev::Drained(s),
                VsNote::Suspend(s) => Ev::Suspend(s),
            });
        }
    }

    fn finish_inc(&mut self, outcome: IncOutcome, step: u64, io: &mut Io<Bundle, Ev>) {
        let Some((sid, owner)) = self.owner.take() else {
            return;
        };
        let ct = match &outcome {
            IncOutcome::Done(ct) => {
                io.note(Ev::IncDone { sid, ct: ct.clone() });
                Some(ct.clone())
            }
            IncOutcome::Aborted(reason) => {
                io.note(Ev::IncAbort { sid, reason: *reason });
                None
            }
        };
        match owner {
            Owner::Vs => {
                if let Some(n) = self.vs.on_inc(&self.recsa, ct) {
                    self.vs_notes(vec![n], io);
                }
            }
            Owner::Workload => {
                if ct.is_some() {
                    self.inc_left = self.inc_left.saturating_sub(1);
                }
                self.next_inc_at = step + self.params.inc_gap;
            }
        }
    }

    fn maybe_start_inc(&mut self, step: u64, io: &mut Io<Bundle, Ev>) {
        if self.client.busy() {
            return;
        }
        let owner = if self.vs_wants_inc {
            Owner::Vs
        } else if self.inc_left > 0 && step >= self.next_inc_at && self.recsa.is_participant() {
            Owner::Workload
        } else {
            return;
        };
        if owner == Owner::Vs {
            self.vs_wants_inc = false;
        }
        let member = self.is_member();
        let counters = member.then_some(&mut self.counters);
        match self.client.start(&self.recsa, counters) {
            Ok((sid, _)) => {
                io.note(Ev::IncStart { sid, member });
                self.owner = Some((sid, owner));
            }
            Err(_) => {
                if owner == Owner::Vs {
                    self.vs.on_inc(&self.recsa, None);
                }
            }
        }
    }

    fn serve_inc(&mut self, from: Pid, m: IncMsg) -> Option<IncMsg> {
        match m {
            IncMsg::ReadReq { sid } => Some(match self.counters.on_read(&self.recsa) {
                Some(pair) => IncMsg::ReadResp { sid, pair },
                None => IncMsg::Abort { sid },
            }),
            IncMsg::WriteReq { sid, ct } => {
                Some(match self.counters.on_write(&self.recsa, from, &ct) {
                    Some(()) => IncMsg::WriteAck { sid },
                    None => IncMsg::Abort { sid },
                })
            }
            _ => None,
        }
    }

    fn store_reply(&mut self, to: Pid, r: IncMsg) {
        let sid = r.sid();
        let e = self.replies.entry(to).or_insert((sid, Vec::new()));
        if sid > e.0 {
            *e = (sid, Vec::new());
        } else if sid < e.0 {
            return;
        }
        let same = std::mem::discriminant(&r);
        e.1.retain(|x| std::mem::discriminant(x) != same);
        e.1.push(r);
    }

    fn pass_query(&self) -> bool {
        if self.params.vs {
            self.admit && self.vs.pass_query()
        } else {
            self.admit
        }
    }
}

impl Process for Node {
    type Msg = Bundle;
    type Note = Ev;

    fn on_timer(&mut self, io: &mut Io<Bundle, Ev>) {
        let step = io.step;
        self.recsa.set_fd(self.fd.trusted());
        let mut out: BTreeMap<Pid, Bundle> = io.peers.iter().map(|&j| (j, Bundle::default())).collect();

        let rep = self.recsa.loop_iteration();
        if let Some(c) = rep.reset {
            io.note(Ev::Reset(c));
        }
        if let Some(s) = rep.restarted {
            io.note(Ev::Restart(s));
        }
        if let Some((a, b)) = rep.advanced {
            io.note(Ev::Phase(a, b));
        }
        if let Some(s) = rep.replaced {
            io.note(Ev::Replaced(s));
        }
        for (j, m) in rep.sends {
            if let Some(b) = out.get_mut(&j) {
                b.recsa = Some(m);
            }
        }

        let no_reco = self.recsa.no_reco();
        let jr = self.joining.tick(&mut self.recsa);
        if jr.reset_vars {
            self.reset_app();
            io.note(Ev::JoinReset);
        }
        if let Some(states) = jr.joined_from {
            io.note(Ev::Participate { no_reco });
            let st: Vec<Vs> = states.into_iter().filter_map(|(_, s)| s).collect();
            if self.params.vs {
                self.vs.init_vars(&st);
            }
        }
        self.join_requests = jr.requests;
        let part = self.recsa.own_part();
        self.join_replies.retain(|j, _| !part.contains(j));

        let ev = self.eval_conf(step);
        let need_delicate = self.params.vs && self.vs.need_delicate_reconf();
        let rr = self.recma.tick(
            &mut self.recsa,
            RecmaInputs {
                eval_conf: ev,
                need_delicate,
            },
        );
        if let Some(t) = rr.trigger {
            io.note(Ev::Estab {
                cause: Some(t.cause),
                set: t.set,
                effective: t.effective,
            });
        }
        for (j, m) in rr.sends {
            if let Some(b) = out.get_mut(&j) {
                b.recma = Some(m);
            }
        }

        if let Some(ls) = self.labels.as_mut() {
            ls.tick(&self.recsa);
            for (&j, b) in out.iter_mut() {
                b.label = ls.transmit(&self.recsa, j);
            }
        }
        self.counters.tick(&self.recsa);
        for (&j, b) in out.iter_mut() {
            b.counter = self.counters.transmit(&self.recsa, j);
        }
        self.drain_store_events(io);

        if self.params.vs {
            let inputs = VsInputs {
                eval_config: ev,
                admit: self.admit,
            };
            let r = self.vs.tick(&self.recsa, &mut self.app, inputs);
            self.vs_notes(r.notes, io);
            for (j, rec) in r.sends {
                if let Some(b) = out.get_mut(&j) {
                    b.vs = Some(rec);
                }
            }
            if r.want_inc {
                self.vs_wants_inc = true;
            }
        }

        if let Some(o) = self.client.check(&self.recsa) {
            self.finish_inc(o, step, io);
        }
        self.maybe_start_inc(step, io);
        for (j, m) in self.client.pending() {
            if let Some(b) = out.get_mut(&j) {
                b.inc.push(m);
            }
        }
        for (j, (_, rs)) in &self.replies {
            if let Some(b) = out.get_mut(j) {
                b.inc.extend(rs.iter().cloned());
            }
        }
        for &j in &self.join_requests {
            if let Some(b) = out.get_mut(&j) {
                b.join = Some(JoinMsg::Join);
            }
        }
        for (j, r) in &self.join_replies {
            if let Some(b) = out.get_mut(j) {
                b.join = Some(r.clone());
            }
        }
        for (j, b) in out {
            io.post(j, b);
        }
        self.emit_snap(io);
    }

    fn on_message(&mut self, from: Pid, b: Bundle, io: &mut Io<Bundle, Ev>) {
        let step = io.step;
        if let Some(m) = b.recsa {
            self.recsa.receive(from, m);
        }
        if let Some(m) = b.recma {
            self.recma.receive(&self.recsa, from, m);
        }
        if let (Some(ls), Some((s, l))) = (self.labels.as_mut(), b.label) {
            if ls.quiet(&self.recsa) && ls.members.contains(&from) {
                self.label_rx = true;
            }
            ls.receive(&self.recsa, from, s, l);
        }
        if let Some((s, l)) = b.counter {
            self.counters.receive(&self.recsa, from, s, l);
        }
        self.drain_store_events(io);
        for m in b.inc {
            match m {
                IncMsg::ReadReq { .. } | IncMsg::WriteReq { .. } => {
                    if let Some(r) = self.serve_inc(from, m) {
                        self.store_reply(from, r);
                    }
                }
                _ => {
                    let (_, outcome) =
                        self.client
                            .on_reply(&self.recsa, Some(&mut self.counters), from, m);
                    if let Some(o) = outcome {
                        self.finish_inc(o, step, io);
                    }
                }
            }
        }
        self.drain_store_events(io);
        match b.join {
            Some(JoinMsg::Join) => {
                let pass = self.pass_query();
                let vs = &self.vs;
                let with_state = self.params.vs;
                if let Some(r) = Joining::on_join_request(&self.recsa, from, pass, || {
                    with_state.then(|| vs.own.clone())
                }) {
                    self.join_replies.insert(from, r);
                }
            }
            Some(JoinMsg::Pass { pass, state }) => {
                self.joining.on_pass(&self.recsa, from, pass, state);
            }
            None => {}
        }
        if let Some(rec) = b.vs {
            if self.params.vs {
                self.vs.receive(from, rec);
            }
        }
        self.emit_snap(io);
    }

    fn on_heartbeat(&mut self, from: Pid, _io: &mut Io<Bundle, Ev>) {
        self.fd.on_heartbeat(from);
    }
}
