//! Reconfigurable virtually synchronous state machine replication.
//!
//! A configuration member whose proposal carries the greatest counter
//! becomes coordinator of a view. The coordinator runs multicast rounds in
//! unison with the view members: apply the last collected batch, fetch a new
//! input, collect the members' inputs. On view changes it synchronizes the
//! most advanced replica and installs the proposed view. Before a planned
//! reconfiguration it suspends fetching until every view member has caught
//! up, and only then asks the management layer to reconfigure.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Debug;

use crate::counter::Counter;
use crate::recsa::Recsa;
use crate::types::{ConfigValue, PSet, Pid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum Status {
    #[default]
    Multicast,
    Propose,
    Install,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct View {
    pub id: Option<Counter>,
    pub set: PSet,
    /// Configuration the view was proposed under.
    pub conf: PSet,
}

/// Inputs collected in one round, tagged with the view and round they were
/// collected in.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Batch<M> {
    pub view: Option<Counter>,
    pub rnd: u64,
    pub items: BTreeMap<Pid, M>,
}

impl<M> Default for Batch<M> {
    fn default() -> Self {
        Batch {
            view: None,
            rnd: 0,
            items: BTreeMap::new(),
        }
    }
}

/// The replicated application.
pub trait Application: Clone + Debug + PartialEq {
    type State: Clone + PartialEq + Debug + Default;
    type Msg: Clone + Ord + Debug;

    /// Next input to multicast. Returns the same input until it has been
    /// delivered.
    fn fetch(&mut self) -> Option<Self::Msg>;
    /// State transition for one batch, in identifier order.
    fn apply(&self, state: &mut Self::State, msgs: &[Self::Msg]);
    /// Side effect of a first delivery at this processor.
    fn on_deliver(&mut self, _m: &Self::Msg) {}
}

/// The replicated record.
#[derive(Clone, Debug, PartialEq)]
pub struct VsState<A: Application> {
    pub view: View,
    pub status: Status,
    pub rnd: u64,
    pub state: A::State,
    pub msg: Batch<A::Msg>,
    pub input: Option<A::Msg>,
    pub prop_v: View,
    pub no_crd: bool,
    pub suspend: bool,
    pub reconf_ready: bool,
    /// Coordinator's join permission, copied by followers.
    pub admit: bool,
}

impl<A: Application> Default for VsState<A> {
    fn default() -> Self {
        VsState {
            view: View::default(),
            status: Status::Multicast,
            rnd: 0,
            state: A::State::default(),
            msg: Batch::default(),
            input: None,
            prop_v: View::default(),
            no_crd: true,
            suspend: false,
            reconf_ready: false,
            admit: false,
        }
    }
}

/// Wire record: the replicated record plus the sender's failure detector
/// fields.
#[derive(Clone, Debug, PartialEq)]
pub struct VsRecord<A: Application> {
    pub vs: VsState<A>,
    pub part: PSet,
    pub crd: Option<Pid>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum VsNote<A: Application> {
    Fetch(Option<A::Msg>),
    Deliver {
        view: Option<Counter>,
        rnd: u64,
        msgs: Vec<A::Msg>,
    },
    Proposed(View),
    Installed(View),
    /// First round of a view applied; the state that results.
    Settled {
        view: Option<Counter>,
        state: A::State,
    },
    /// All view members suspended; the state handed to the next
    /// configuration.
    Drained(A::State),
    Suspend(bool),
}

#[derive(Clone, Debug)]
pub struct VsReport<A: Application> {
    pub sends: Vec<(Pid, VsRecord<A>)>,
    /// The node wants a counter for a new view proposal.
    pub want_inc: bool,
    pub notes: Vec<VsNote<A>>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct VsInputs {
    pub eval_config: bool,
    /// Coordinator's current willingness to admit joiners.
    pub admit: bool,
}

#[derive(Clone, Debug)]
pub struct VsNode<A: Application> {
    pub me: Pid,
    pub own: VsState<A>,
    pub crd: Option<Pid>,
    pub recs: BTreeMap<Pid, VsRecord<A>>,
    pub delivered: BTreeSet<A::Msg>,
    pub inc_pending: bool,
    pub seem_crd: PSet,
    pub val_crd: PSet,
    last_eval: bool,
}

/// `a` precedes `b` in `(view.ID, rnd)` order. Views without identifier come
/// first.
fn older<A: Application>(a: &VsState<A>, b: &VsState<A>) -> bool {
    match (&a.view.id, &b.view.id) {
        (None, Some(_)) => true,
        (Some(_), None) => false,
        (None, None) => a.rnd < b.rnd,
        (Some(x), Some(y)) => {
            if x == y {
                a.rnd < b.rnd
            } else {
                x.precedes(y)
            }
        }
    }
}

/// The most advanced replica by `(view.ID, rnd)`, earliest in iteration
/// order on ties.
pub fn synch_replica<'a, A: Application + 'a>(
    replicas: impl IntoIterator<Item = &'a VsState<A>>,
) -> Option<&'a VsState<A>> {
    let mut best: Option<&VsState<A>> = None;
    for r in replicas {
        best = match best {
            Some(b) if !older(b, r) => Some(b),
            _ => Some(r),
        };
    }
    best
}

fn half(conf: &PSet) -> usize {
    conf.len() / 2
}

impl<A: Application> VsNode<A> {
    pub fn new(me: Pid) -> Self {
        VsNode {
            me,
            own: VsState::default(),
            crd: None,
            recs: BTreeMap::new(),
            delivered: BTreeSet::new(),
            inc_pending: false,
            seem_crd: PSet::new(),
            val_crd: PSet::new(),
            last_eval: false,
        }
    }

    /// Application variables back to defaults, as a joiner does.
    pub fn reset_vars(&mut self) {
        self.own = VsState::default();
        self.crd = None;
        self.recs.clear();
        self.inc_pending = false;
        self.seem_crd.clear();
        self.val_crd.clear();
    }

    /// Initializes from states received with join passes.
    pub fn init_vars(&mut self, states: &[VsState<A>]) {
        if let Some(best) = synch_replica(states.iter()) {
            self.own = (*best).clone();
            self.own.suspend = false;
            self.own.reconf_ready = false;
        }
    }

    pub fn pass_query(&self) -> bool {
        self.own.admit
    }

    pub fn receive(&mut self, from: Pid, rec: VsRecord<A>) {
        if from != self.me {
            self.recs.insert(from, rec);
        }
    }

    fn vs_of(&self, k: Pid) -> Option<&VsState<A>> {
        if k == self.me {
            Some(&self.own)
        } else {
            self.recs.get(&k).map(|r| &r.vs)
        }
    }

    fn part_of(&self, k: Pid, own_part: &PSet) -> Option<PSet> {
        if k == self.me {
            Some(own_part.clone())
        } else {
            self.recs.get(&k).map(|r| r.part.clone())
        }
    }

    fn crd_of(&self, k: Pid) -> Option<Pid> {
        if k == self.me {
            self.crd
        } else {
            self.recs.get(&k).and_then(|r| r.crd)
        }
    }

    fn compute_seem(&self, cur: &PSet, part: &PSet) -> PSet {
        let mut out = PSet::new();
        for &l in part.intersection(cur) {
            let Some(s) = self.vs_of(l) else { continue };
            let Some(id) = &s.prop_v.id else { continue };
            if id.wid != l {
                continue;
            }
            let Some(lpart) = self.part_of(l, part) else {
                continue;
            };
            if s.prop_v.set.intersection(cur).count() <= half(cur) {
                continue;
            }
            if lpart.intersection(cur).count() <= half(cur) {
                continue;
            }
            if !s.prop_v.set.contains(&l) {
                continue;
            }
            let recip = part.iter().all(|&k| {
                let trusts = self
                    .part_of(k, part)
                    .is_some_and(|p| p.contains(&l));
                s.prop_v.set.contains(&k) == trusts
            });
            if !recip {
                continue;
            }
            let crd_ok = self.crd_of(l) == Some(l);
            match s.status {
                Status::Multicast if !(s.view == s.prop_v && crd_ok) => continue,
                Status::Install if !crd_ok => continue,
                _ => {}
            }
            out.insert(l);
        }
        out
    }

    fn compute_val(&self, seem: &PSet) -> PSet {
        seem.iter()
            .copied()
            .filter(|&l| {
                let me_id = &self.vs_of(l).expect("seem has records").prop_v.id;
                seem.iter().all(|&k| {
                    let kid = &self.vs_of(k).expect("seem has records").prop_v.id;
                    match (kid, me_id) {
                        (Some(a), Some(b)) => a.le(b),
                        _ => false,
                    }
                })
            })
            .collect()
    }

    /// Coordinator selection over the current records.
    pub fn compute_crd(&self, cur: &PSet, part: &PSet) -> (PSet, PSet) {
        let seem = self.compute_seem(cur, part);
        let val = self.compute_val(&seem);
        (seem, val)
    }

    pub fn need_delicate_reconf(&self) -> bool {
        self.own.reconf_ready && self.val_crd == PSet::from([self.me]) && self.last_eval
    }

    fn deliver(&mut self, app: &mut A, batch: &Batch<A::Msg>, notes: &mut Vec<VsNote<A>>) {
        let mut fresh = Vec::new();
        for m in batch.items.values() {
            if self.delivered.insert(m.clone()) {
                app.on_deliver(m);
                fresh.push(m.clone());
            }
        }
        if !fresh.is_empty() {
            notes.push(VsNote::Deliver {
                view: batch.view.clone(),
                rnd: batch.rnd,
                msgs: fresh,
            });
        }
    }

    fn fetch(&mut self, app: &mut A, notes: &mut Vec<VsNote<A>>) {
        let m = app.fetch();
        notes.push(VsNote::Fetch(m.clone()));
        self.own.input = m;
    }

    fn set_suspend(&mut self, v: bool, notes: &mut Vec<VsNote<A>>) {
        if self.own.suspend != v {
            notes.push(VsNote::Suspend(v));
        }
        self.own.suspend = v;
    }

    fn unison_multicast(&self) -> bool {
        let o = &self.own;
        o.view.set.contains(&self.me)
            && o.view.set.iter().all(|&j| {
                self.vs_of(j)
                    .is_some_and(|s| s.view == o.view && s.status == o.status && s.rnd == o.rnd)
            })
    }

    fn all_prop_at(&self, status: Status) -> bool {
        let o = &self.own;
        o.prop_v.set.iter().all(|&j| {
            self.vs_of(j)
                .is_some_and(|s| s.prop_v == o.prop_v && s.status == status)
        })
    }

    /// Completion of a requested increment.
    pub fn on_inc(&mut self, recsa: &Recsa, ct: Option<Counter>) -> Option<VsNote<A>> {
        self.inc_pending = false;
        let ct = ct?;
        if !recsa.no_reco() {
            return None;
        }
        let cur = recsa.get_config().set()?.clone();
        let view = View {
            id: Some(ct),
            set: recsa.own_part(),
            conf: cur,
        };
        self.own.status = Status::Propose;
        self.own.prop_v = view.clone();
        Some(VsNote::Proposed(view))
    }

    pub fn tick(&mut self, recsa: &Recsa, app: &mut A, inp: VsInputs) -> VsReport<A> {
        let me = self.me;
        let mut rep = VsReport {
            sends: Vec::new(),
            want_inc: false,
            notes: Vec::new(),
        };
        self.last_eval = inp.eval_config;
        let part = recsa.own_part();
        if !part.contains(&me) {
            return rep;
        }
        let cur = match recsa.get_config() {
            ConfigValue::Set(c) => c,
            _ => {
                self.set_suspend(true, &mut rep.notes);
                return rep;
            }
        };
        let no_reco = recsa.no_reco();
        let (seem, val) = self.compute_crd(&cur, &part);
        self.own.no_crd = val.len() != 1;
        self.crd = if val.len() == 1 {
            val.iter().next().copied()
        } else {
            None
        };
        let single = self.crd;
        let i_am_crd = single == Some(me);
        self.seem_crd = seem.clone();
        self.val_crd = val.clone();
        if i_am_crd {
            self.own.admit = inp.admit;
        }

        if i_am_crd && self.own.status == Status::Multicast && self.own.reconf_ready {
            let e = inp.eval_config;
            self.own.reconf_ready = e;
            self.set_suspend(e, &mut rep.notes);
        } else if let Some(l) = single.filter(|&l| l != me) {
            if self.vs_of(l).is_some_and(|s| s.status != Status::Multicast) {
                self.own.reconf_ready = false;
                self.set_suspend(false, &mut rep.notes);
            }
        }
        if !no_reco {
            self.set_suspend(true, &mut rep.notes);
        }

        let live_conf = part.intersection(&cur).count() > half(&cur);
        let no_crd_votes = part
            .iter()
            .filter(|&&k| {
                let i_in_k = self.part_of(k, &part).is_some_and(|p| p.contains(&me));
                i_in_k && self.vs_of(k).is_some_and(|s| s.no_crd)
            })
            .count();
        let followers = part
            .iter()
            .filter(|&&k| self.vs_of(k).is_some_and(|s| s.prop_v == self.own.prop_v))
            .count();
        let drift = part != self.own.prop_v.set || cur != self.own.prop_v.conf;
        let propose = live_conf
            && no_reco
            && cur.contains(&me)
            && ((val.len() != 1 && no_crd_votes > half(&cur))
                || (i_am_crd && drift && followers > half(&cur)));

        if propose {
            if !self.inc_pending {
                self.inc_pending = true;
                rep.want_inc = true;
            }
        } else if i_am_crd && self.coordinator_ready() {
            self.coordinator_step(app, inp, no_reco, &mut rep.notes);
        } else if let Some(l) = single.filter(|&l| l != me) {
            self.follower_step(app, l, no_reco, &mut rep.notes);
        }

        let mut send_set = seem;
        if i_am_crd {
            send_set.extend(self.own.prop_v.set.iter().copied());
        }
        if self.own.no_crd || self.own.status == Status::Propose {
            send_set.extend(recsa.own_fd().iter().copied());
        }
        send_set.remove(&me);
        let rec = VsRecord {
            vs: self.own.clone(),
            part,
            crd: self.crd,
        };
        for j in send_set {
            rep.sends.push((j, rec.clone()));
        }
        rep
    }

    fn coordinator_ready(&self) -> bool {
        match self.own.status {
            Status::Multicast => self.unison_multicast(),
            Status::Propose => self.all_prop_at(Status::Propose),
            Status::Install => self.all_prop_at(Status::Install),
        }
    }

    fn coordinator_step(
        &mut self,
        app: &mut A,
        inp: VsInputs,
        no_reco: bool,
        notes: &mut Vec<VsNote<A>>,
    ) {
        match self.own.status {
            Status::Multicast => {
                if self.own.reconf_ready {
                    return;
                }
                let batch = self.own.msg.clone();
                let msgs: Vec<A::Msg> = batch.items.values().cloned().collect();
                app.apply(&mut self.own.state, &msgs);
                self.deliver(app, &batch, notes);
                if self.own.rnd == 0 {
                    notes.push(VsNote::Settled {
                        view: self.own.view.id.clone(),
                        state: self.own.state.clone(),
                    });
                }
                self.set_suspend(inp.eval_config, notes);
                let view_set = self.own.view.set.clone();
                let ready = view_set
                    .iter()
                    .all(|&k| self.vs_of(k).is_some_and(|s| s.suspend));
                self.own.reconf_ready = ready;
                if ready {
                    notes.push(VsNote::Drained(self.own.state.clone()));
                } else if no_reco {
                    self.fetch(app, notes);
                    let mut items = BTreeMap::new();
                    for &j in &view_set {
                        if let Some(m) = self.vs_of(j).and_then(|s| s.input.clone()) {
                            items.insert(j, m);
                        }
                    }
                    self.own.rnd += 1;
                    self.own.msg = Batch {
                        view: self.own.view.id.clone(),
                        rnd: self.own.rnd,
                        items,
                    };
                }
            }
            Status::Propose => {
                let set = self.own.prop_v.set.clone();
                let best = synch_replica(set.iter().filter_map(|&j| self.vs_of(j)))
                    .map(|s| (s.state.clone(), s.msg.clone()));
                if let Some((state, msg)) = best {
                    self.own.state = state;
                    self.own.msg = msg;
                }
                self.own.status = Status::Install;
            }
            Status::Install => {
                self.own.view = self.own.prop_v.clone();
                self.own.status = Status::Multicast;
                self.own.rnd = 0;
                self.own.reconf_ready = false;
                self.set_suspend(false, notes);
                notes.push(VsNote::Installed(self.own.view.clone()));
            }
        }
    }

    fn follower_step(&mut self, app: &mut A, l: Pid, no_reco: bool, notes: &mut Vec<VsNote<A>>) {
        let Some(lead) = self.vs_of(l).cloned() else {
            return;
        };
        let behind = lead.rnd == 0 || self.own.rnd < lead.rnd || lead.view != lead.prop_v;
        if !behind {
            return;
        }
        match lead.status {
            Status::Multicast if !self.own.suspend => {
                let was = self.own.suspend;
                let fresh = lead.rnd == 0 && (self.own.rnd != 0 || self.own.view.id != lead.view.id);
                self.own = lead.clone();
                let msgs: Vec<A::Msg> = lead.msg.items.values().cloned().collect();
                app.apply(&mut self.own.state, &msgs);
                if was != lead.suspend {
                    notes.push(VsNote::Suspend(lead.suspend));
                }
                if fresh {
                    notes.push(VsNote::Settled {
                        view: lead.view.id.clone(),
                        state: self.own.state.clone(),
                    });
                }
                self.deliver(app, &lead.msg, notes);
                if !lead.suspend {
                    self.fetch(app, notes);
                }
            }
            Status::Multicast => {}
            Status::Install => {
                self.own = lead.clone();
                self.deliver(app, &lead.msg, notes);
                // The coordinator is still installing, so the suspension
                // it carries is lifted here as on every other tick.
                self.own.reconf_ready = false;
                self.own.suspend = !no_reco;
            }
            Status::Propose => {
                self.own.status = lead.status;
                self.own.prop_v = lead.prop_v.clone();
            }
        }
    }
}

/// Replicated append-log: inputs are `(origin, seq)` identifiers scripted
/// per processor; the state is the list of applied identifiers.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AppendLog {
    pub me: Pid,
    pub next_seq: u32,
    /// Inputs still to be produced, in order.
    pub budget: u32,
    pending: Option<MsgId>,
    pub delivered_own: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MsgId {
    pub origin: Pid,
    pub seq: u32,
}

impl AppendLog {
    pub fn new(me: Pid, budget: u32) -> Self {
        AppendLog {
            me,
            next_seq: 0,
            budget,
            pending: None,
            delivered_own: 0,
        }
    }
}

impl Application for AppendLog {
    type State = Vec<MsgId>;
    type Msg = MsgId;

    fn fetch(&mut self) -> Option<MsgId> {
        if self.pending.is_none() && self.next_seq < self.budget {
            self.pending = Some(MsgId {
                origin: self.me,
                seq: self.next_seq,
            });
            self.next_seq += 1;
        }
        self.pending
    }

    fn apply(&self, state: &mut Vec<MsgId>, msgs: &[MsgId]) {
        for m in msgs {
            if !state.contains(m) {
                state.push(*m);
            }
        }
    }

    fn on_deliver(&mut self, m: &MsgId) {
        if self.pending == Some(*m) {
            self.pending = None;
            self.delivered_own += 1;
        }
    }
}
