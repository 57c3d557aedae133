//! Trace checkers. Each one is a pure function of the scenario and a
//! finished run.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use reconf_core::counter::Counter;
use reconf_core::recma::TriggerCause;
use reconf_core::vssmr::{MsgId, View};
use reconf_core::{ConfigValue, PSet, Pid};
use reconf_netsim::{Event, EventKind};

use crate::notes::{Ev, Snap};
use crate::runner::Run;
use crate::scenario::Scenario;

/// Multiplier in the label creation bounds.
pub const LABEL_C: u64 = 1;

pub const CHECKERS: &[&str] = &[
    "convergence",
    "closure",
    "conflict-freedom",
    "unison",
    "trigger-fires",
    "trigger-once",
    "trigger-bound",
    "join-safety",
    "join-progress",
    "taint-free",
    "no-foreign-labels",
    "label-bound",
    "label-reconf-bound",
    "label-max",
    "counter-monotone",
    "counter-exhaust",
    "virtual-synchrony",
    "state-transfer",
    "drain-quiet",
];

#[derive(Clone, Debug, PartialEq)]
pub struct Verdict {
    pub name: &'static str,
    pub pass: bool,
    /// First offending event, or why the check could not pass.
    pub witness: Option<String>,
    pub measured: BTreeMap<&'static str, u64>,
}

impl Verdict {
    fn new(name: &'static str) -> Self {
        Verdict {
            name,
            pass: true,
            witness: None,
            measured: BTreeMap::new(),
        }
    }

    fn fail(&mut self, w: impl Into<String>) {
        if self.pass {
            self.pass = false;
            self.witness = Some(w.into());
        }
    }

    fn m(&mut self, k: &'static str, v: u64) {
        self.measured.insert(k, v);
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", if self.pass { "PASS" } else { "FAIL" }, self.name)?;
        for (k, v) in &self.measured {
            write!(f, " {k}={v}")?;
        }
        if let Some(w) = &self.witness {
            write!(f, " witness: {w}")?;
        }
        Ok(())
    }
}

pub fn check(name: &str, sc: &Scenario, run: &Run) -> Option<Verdict> {
    let f: fn(&Scenario, &Run) -> Verdict = match name {
        "convergence" => convergence,
        "closure" => closure,
        "conflict-freedom" => conflict_freedom,
        "unison" => unison,
        "trigger-fires" => trigger_fires,
        "trigger-once" => trigger_once,
        "trigger-bound" => trigger_bound,
        "join-safety" => join_safety,
        "join-progress" => join_progress,
        "taint-free" => taint_free,
        "no-foreign-labels" => no_foreign_labels,
        "label-bound" => label_bound,
        "label-reconf-bound" => label_reconf_bound,
        "label-max" => label_max,
        "counter-monotone" => counter_monotone,
        "counter-exhaust" => counter_exhaust,
        "virtual-synchrony" => virtual_synchrony,
        "state-transfer" => state_transfer,
        "drain-quiet" => drain_quiet,
        _ => return None,
    };
    Some(f(sc, run))
}

/// All checkers the scenario asks for.
pub fn check_all(sc: &Scenario, run: &Run) -> Vec<Verdict> {
    sc.checkers
        .iter()
        .filter_map(|c| check(c, sc, run))
        .collect()
}

fn at(e: &Event<Ev>) -> String {
    format!("step {} node {}", e.step, e.proc)
}

/// Replays the trace, keeping the live set and the latest snapshot per node.
struct Replay {
    live: PSet,
    snaps: BTreeMap<Pid, Snap>,
}

impl Replay {
    fn new(sc: &Scenario) -> Self {
        Replay {
            live: sc.nodes.iter().copied().filter(|p| !sc.absent.contains(p)).collect(),
            snaps: BTreeMap::new(),
        }
    }

    /// Applies `e`; true when the global state changed.
    fn apply(&mut self, e: &Event<Ev>) -> bool {
        match (&e.kind, &e.note) {
            (EventKind::Crash, _) => {
                self.live.remove(&e.proc);
                self.snaps.remove(&e.proc);
                true
            }
            (EventKind::Join, _) => self.live.insert(e.proc),
            (_, Some(Ev::Snap(s))) => {
                self.snaps.insert(e.proc, (**s).clone());
                true
            }
            _ => false,
        }
    }

    fn live_snaps(&self) -> impl Iterator<Item = (Pid, Option<&Snap>)> + '_ {
        self.live.iter().map(|p| (*p, self.snaps.get(p)))
    }

    /// Stale-free, one trusted set everywhere, one configuration everywhere.
    /// Returns whether that configuration came from a replacement rather
    /// than the trusted set.
    fn settled(&self, last_change: &BTreeMap<Pid, Ev>) -> Option<bool> {
        let mut it = self.live_snaps();
        let (_, first) = it.next()?;
        let first = first?;
        let cfg = first.config.set()?;
        for (_, s) in self.live_snaps() {
            let s = s?;
            if s.stale != 0 || !s.participant || s.fd != first.fd || s.config != first.config {
                return None;
            }
        }
        if *cfg == first.fd {
            return Some(false);
        }
        let replaced = self
            .live
            .iter()
            .all(|p| matches!(last_change.get(p), Some(Ev::Replaced(r)) if r == cfg));
        replaced.then_some(true)
    }
}

fn convergence(sc: &Scenario, run: &Run) -> Verdict {
    let mut v = Verdict::new("convergence");
    let mut r = Replay::new(sc);
    let mut last_change: BTreeMap<Pid, Ev> = BTreeMap::new();
    let mut since: Option<(u64, bool)> = None;
    for e in &run.trace.events {
        let mut changed = r.apply(e);
        if let Some(n @ (Ev::Replaced(_) | Ev::Restart(_) | Ev::Reset(_))) = &e.note {
            last_change.insert(e.proc, n.clone());
            changed = true;
        }
        if changed {
            match r.settled(&last_change) {
                Some(via) => {
                    since.get_or_insert((e.step, via));
                }
                None => since = None,
            }
        }
    }
    match since {
        Some((s, via)) => {
            v.m("converged_at", s);
            v.m("via_replacement", via as u64);
        }
        None => v.fail(format!("budget: not settled after {} steps", run.steps)),
    }
    v
}

fn closure(sc: &Scenario, run: &Run) -> Verdict {
    let mut v = Verdict::new("closure");
    let mut r = Replay::new(sc);
    for e in &run.trace.events {
        match &e.note {
            Some(Ev::Reset(c)) => v.fail(format!("{}: reset {c:?}", at(e))),
            Some(Ev::Snap(s)) if s.participant && s.stale != 0 => {
                v.fail(format!("{}: stale bits {:#x}", at(e), s.stale))
            }
            _ => {}
        }
        if r.apply(e) {
            let configs: BTreeSet<&ConfigValue> = r
                .live_snaps()
                .filter_map(|(_, s)| s.filter(|s| s.participant).map(|s| &s.config))
                .collect();
            if configs.len() > 1 {
                v.fail(format!("{}: {} distinct configurations", at(e), configs.len()));
            }
        }
    }
    v
}

/// Once the live participants agree after the last reset, they keep
/// agreeing whenever no replacement is under way.
fn conflict_freedom(sc: &Scenario, run: &Run) -> Verdict {
    let mut v = Verdict::new("conflict-freedom");
    let last_reset = run
        .trace
        .events
        .iter()
        .rposition(|e| matches!(e.note, Some(Ev::Reset(_))))
        .map_or(0, |i| i + 1);
    let mut r = Replay::new(sc);
    let mut converged = false;
    let mut states = 0;
    for (i, e) in run.trace.events.iter().enumerate() {
        if !r.apply(e) || i < last_reset {
            continue;
        }
        let parts: Vec<&Snap> = r
            .live_snaps()
            .filter_map(|(_, s)| s.filter(|s| s.participant))
            .collect();
        if parts.iter().any(|s| !s.prp.is_default()) {
            continue;
        }
        let sets: BTreeSet<&ConfigValue> = parts.iter().map(|s| &s.config).collect();
        let agree = sets.len() == 1 && sets.iter().all(|c| c.set().is_some());
        if !converged {
            converged = agree && parts.iter().all(|s| s.stale == 0);
            if !converged {
                continue;
            }
        }
        states += 1;
        if !agree {
            v.fail(format!("{}: configurations {sets:?}", at(e)));
        }
    }
    if !converged {
        v.fail("never converged".to_string());
    }
    v.m("states", states);
    v
}

fn unison(sc: &Scenario, run: &Run) -> Verdict {
    let mut v = Verdict::new("unison");
    let mut r = Replay::new(sc);
    let mut installed: BTreeSet<PSet> = BTreeSet::new();
    let mut max_gap = 0;
    for e in &run.trace.events {
        if let Some(Ev::Replaced(s)) = &e.note {
            installed.insert(s.clone());
        }
        if r.apply(e) {
            let degs: Vec<u8> = r
                .live_snaps()
                .filter_map(|(_, s)| s)
                .filter(|s| s.participant && !s.prp.is_default())
                .map(|s| s.degree)
                .collect();
            if let (Some(lo), Some(hi)) = (degs.iter().min(), degs.iter().max()) {
                max_gap = max_gap.max(hi - lo);
                if hi - lo > 1 {
                    v.fail(format!("{}: degrees {degs:?}", at(e)));
                }
            }
        }
    }
    v.m("max_degree_gap", max_gap as u64);
    v.m("installed_sets", installed.len() as u64);
    if installed.len() != 1 {
        v.fail(format!("{} distinct sets installed", installed.len()));
    }
    let finals: BTreeSet<(&ConfigValue, bool)> = r
        .live_snaps()
        .filter_map(|(_, s)| s.map(|s| (&s.config, s.prp.is_default())))
        .collect();
    let want = installed.iter().next().cloned().map(ConfigValue::Set);
    if finals.len() != 1 || finals.iter().any(|(c, d)| Some(*c) != want.as_ref() || !d) {
        v.fail(format!("final state {finals:?}"));
    }
    v
}

fn trigger_fires(_sc: &Scenario, run: &Run) -> Verdict {
    let mut v = Verdict::new("trigger-fires");
    let first = run.trace.notes().find(|(_, _, n)| {
        matches!(
            n,
            Ev::Estab {
                cause: Some(TriggerCause::Collapse),
                effective: true,
                ..
            }
        )
    });
    match first {
        Some((s, _, _)) => v.m("fired_at", s),
        None => v.fail("no effective collapse trigger"),
    }
    v
}

/// Trigger calls per processor and cause, counted between installations.
fn trigger_once(_sc: &Scenario, run: &Run) -> Verdict {
    let mut v = Verdict::new("trigger-once");
    let mut counts: BTreeMap<(Pid, TriggerCause), u64> = BTreeMap::new();
    let mut worst = 0;
    for (s, p, n) in run.trace.notes() {
        match n {
            Ev::Replaced(_) | Ev::Restart(_) => counts.retain(|(q, _), _| *q != p),
            Ev::Estab { cause: Some(c), .. } => {
                let k = counts.entry((p, *c)).or_default();
                *k += 1;
                worst = worst.max(*k);
                if *k > 1 {
                    v.fail(format!("step {s} node {p}: {c:?} trigger #{k}"));
                }
            }
            _ => {}
        }
    }
    v.m("max_per_cause", worst);
    v
}

fn trigger_bound(sc: &Scenario, run: &Run) -> Verdict {
    let mut v = Verdict::new("trigger-bound");
    let n = sc.nodes.len() as u64;
    let bound = n * (1 + sc.sim.cap as u64 * n);
    let total = run
        .trace
        .notes()
        .filter(|(_, _, e)| matches!(e, Ev::Estab { cause: Some(_), .. }))
        .count() as u64;
    v.m("triggers", total);
    v.m("bound", bound);
    if total > bound {
        v.fail(format!("{total} triggers exceed {bound}"));
    }
    v
}

fn join_safety(_sc: &Scenario, run: &Run) -> Verdict {
    let mut v = Verdict::new("join-safety");
    let mut joins = 0;
    for (s, p, n) in run.trace.notes() {
        if let Ev::Participate { no_reco } = n {
            joins += 1;
            if !no_reco {
                v.fail(format!("step {s} node {p}: joined during reconfiguration"));
            }
        }
    }
    v.m("joins", joins);
    v
}

fn join_progress(_sc: &Scenario, run: &Run) -> Verdict {
    let mut v = Verdict::new("join-progress");
    let mut waiting: BTreeMap<Pid, u64> = BTreeMap::new();
    let mut latency = 0;
    for e in &run.trace.events {
        match (&e.kind, &e.note) {
            (EventKind::Join, _) => {
                waiting.insert(e.proc, e.step);
            }
            (EventKind::Crash, _) => {
                waiting.remove(&e.proc);
            }
            (_, Some(Ev::Participate { .. })) => {
                if let Some(t) = waiting.remove(&e.proc) {
                    latency = latency.max(e.step - t);
                }
            }
            _ => {}
        }
    }
    v.m("max_latency", latency);
    if let Some((p, t)) = waiting.iter().next() {
        v.fail(format!("node {p} joined at step {t} never participated"));
    }
    v
}

fn taint_free(_sc: &Scenario, run: &Run) -> Verdict {
    let mut v = Verdict::new("taint-free");
    let mut joined: BTreeSet<Pid> = BTreeSet::new();
    for e in &run.trace.events {
        match &e.note {
            Some(Ev::Participate { .. }) => {
                joined.insert(e.proc);
            }
            Some(Ev::Snap(s)) if s.tainted && joined.contains(&e.proc) => {
                v.fail(format!("{}: taint survived joining", at(e)))
            }
            _ => {}
        }
    }
    v.m("joined", joined.len() as u64);
    if joined.is_empty() {
        v.fail("nobody joined");
    }
    v
}

fn no_foreign_labels(_sc: &Scenario, run: &Run) -> Verdict {
    let mut v = Verdict::new("no-foreign-labels");
    let mut rx = 0;
    for e in &run.trace.events {
        if let Some(Ev::Snap(s)) = &e.note {
            if s.label_rx {
                rx += 1;
                if s.foreign {
                    v.fail(format!("{}: foreign label after receipt", at(e)));
                }
            }
        }
    }
    v.m("checked", rx);
    v
}

fn label_bound(sc: &Scenario, run: &Run) -> Verdict {
    let mut v = Verdict::new("label-bound");
    let n = sc.nodes.len() as u64;
    // Every injected packet carries at most four labels.
    let m = 4 * run.injected as u64;
    let bound = LABEL_C * n * (n * n + m);
    let created = run
        .trace
        .notes()
        .filter(|(_, _, e)| matches!(e, Ev::LabelCreated(_)))
        .count() as u64;
    v.m("created", created);
    v.m("bound", bound);
    if created > bound {
        v.fail(format!("{created} labels created, bound {bound}"));
    }
    v
}

/// Creations after each configuration replacement.
fn label_reconf_bound(sc: &Scenario, run: &Run) -> Verdict {
    let mut v = Verdict::new("label-reconf-bound");
    let n = sc.nodes.len() as u64;
    let bound = LABEL_C * n * n;
    let mut window: Option<(PSet, u64)> = None;
    let mut windows = 0;
    let mut worst = 0;
    for (s, _, e) in run.trace.notes() {
        match e {
            Ev::Replaced(set) if window.as_ref().is_none_or(|(w, _)| w != set) => {
                window = Some((set.clone(), 0));
                windows += 1;
            }
            Ev::LabelCreated(_) => {
                if let Some((_, c)) = window.as_mut() {
                    *c += 1;
                    worst = worst.max(*c);
                    if *c > bound {
                        v.fail(format!("step {s}: {c} labels since replacement, bound {bound}"));
                    }
                }
            }
            _ => {}
        }
    }
    v.m("replacements", windows);
    v.m("max_created", worst);
    v.m("bound", bound);
    if windows == 0 {
        v.fail("no replacement happened");
    }
    v
}

fn label_max(sc: &Scenario, run: &Run) -> Verdict {
    let mut v = Verdict::new("label-max");
    let mut r = Replay::new(sc);
    let mut last_created = 0;
    for e in &run.trace.events {
        r.apply(e);
        if let Some(Ev::LabelCreated(_)) = e.note {
            last_created = e.step;
        }
    }
    v.m("last_creation", last_created);
    let members: Vec<(Pid, &Snap)> = r
        .live_snaps()
        .filter_map(|(p, s)| s.map(|s| (p, s)))
        .filter(|(p, s)| s.config.set().is_some_and(|c| c.contains(p)))
        .collect();
    let maxes: BTreeSet<Option<String>> = members
        .iter()
        .map(|(_, s)| s.max_label.as_ref().map(|l| format!("{l:?}")))
        .collect();
    if members.is_empty() || maxes.len() != 1 || maxes.contains(&None) {
        v.fail(format!("final maxima {maxes:?}"));
    }
    if last_created > run.steps * 3 / 4 {
        v.fail(format!("label created at step {last_created}, in the last quarter"));
    }
    v
}

struct Inc {
    node: Pid,
    start: u64,
    done: Option<(u64, Counter)>,
}

fn increments(run: &Run) -> Vec<Inc> {
    let mut open: BTreeMap<(Pid, u64), usize> = BTreeMap::new();
    let mut out: Vec<Inc> = Vec::new();
    for (s, p, e) in run.trace.notes() {
        match e {
            Ev::IncStart { sid, .. } => {
                open.insert((p, *sid), out.len());
                out.push(Inc {
                    node: p,
                    start: s,
                    done: None,
                });
            }
            Ev::IncDone { sid, ct } => {
                if let Some(i) = open.remove(&(p, *sid)) {
                    out[i].done = Some((s, ct.clone()));
                }
            }
            _ => {}
        }
    }
    out
}

fn counter_monotone(_sc: &Scenario, run: &Run) -> Verdict {
    let mut v = Verdict::new("counter-monotone");
    let incs = increments(run);
    let done: Vec<(u64, &Counter, Pid)> = incs
        .iter()
        .filter_map(|i| i.done.as_ref().map(|(s, c)| (*s, c, i.node)))
        .collect();
    v.m("completed", done.len() as u64);
    let mut pairs = 0u64;
    let mut bad = 0u64;
    let mut last_bad = 0;
    for b in &incs {
        let Some((db, cb)) = &b.done else { continue };
        for &(da, ca, na) in &done {
            if da < b.start {
                pairs += 1;
                if !ca.precedes(cb) {
                    bad += 1;
                    last_bad = last_bad.max(*db);
                    v.fail(format!(
                        "node {na} finished {ca:?} at {da}, node {} started at {} and got {cb:?}",
                        b.node, b.start
                    ));
                }
            }
        }
    }
    v.m("ordered_pairs", pairs);
    if bad > 0 {
        v.m("violations", bad);
        v.m("last_violation", last_bad);
    }
    if done.is_empty() {
        v.fail("no increment completed");
    }
    v
}

fn counter_exhaust(_sc: &Scenario, run: &Run) -> Verdict {
    let mut v = Verdict::new("counter-exhaust");
    let bumped = run.trace.notes().find_map(|(s, _, e)| match e {
        Ev::Script(t) if t.starts_with("inject BumpCounters") => Some(s),
        _ => None,
    });
    let Some(bumped) = bumped else {
        v.fail("no bump_counters event");
        return v;
    };
    let fresh = run
        .trace
        .notes()
        .filter(|(s, _, e)| *s > bumped && matches!(e, Ev::CounterLabel(_)))
        .count() as u64;
    let after: BTreeSet<String> = run
        .trace
        .notes()
        .filter_map(|(s, _, e)| match e {
            Ev::IncDone { ct, .. } if s > bumped => Some(format!("{:?}", ct.lbl)),
            _ => None,
        })
        .collect();
    let first_done = run
        .trace
        .notes()
        .find_map(|(s, _, e)| matches!(e, Ev::IncDone { .. } if s > bumped).then_some(s));
    let early = run
        .trace
        .notes()
        .filter(|(s, _, e)| *s > bumped && first_done.is_none_or(|d| *s < d) && matches!(e, Ev::CounterLabel(_)))
        .count() as u64;
    v.m("labels_created", fresh);
    v.m("labels_used", after.len() as u64);
    v.m("created_before_first_use", early);
    if fresh == 0 || early == 0 {
        v.fail("no label created after exhaustion");
    }
    v
}

/// Order in which views were first installed.
fn views(run: &Run) -> Vec<View> {
    let mut seen: Vec<View> = Vec::new();
    for (_, _, e) in run.trace.notes() {
        if let Ev::Installed(w) = e {
            if !seen.iter().any(|x| x.id == w.id) {
                seen.push(w.clone());
            }
        }
    }
    seen
}

fn virtual_synchrony(_sc: &Scenario, run: &Run) -> Verdict {
    let mut v = Verdict::new("virtual-synchrony");
    let vs = views(run);
    let mut delivered: HashMap<(Option<Counter>, Pid), BTreeSet<MsgId>> = HashMap::new();
    let mut reset = false;
    for (_, p, e) in run.trace.notes() {
        match e {
            Ev::Deliver { view, msgs } => {
                delivered
                    .entry((view.clone(), p))
                    .or_default()
                    .extend(msgs.iter().copied());
            }
            Ev::Reset(_) => reset = true,
            _ => {}
        }
    }
    v.m("views", vs.len() as u64);
    v.m("deliveries", delivered.values().map(|s| s.len() as u64).sum());
    if reset {
        v.m("exempt_reset", 1);
        return v;
    }
    let mut compared = 0;
    for w in vs.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let survivors: Vec<Pid> = a
            .set
            .iter()
            .copied()
            .filter(|p| delivered.contains_key(&(b.id.clone(), *p)))
            .collect();
        let sets: BTreeSet<Vec<MsgId>> = survivors
            .iter()
            .map(|p| {
                let s = delivered.get(&(a.id.clone(), *p));
                s.map(|s| s.iter().copied().collect()).unwrap_or_default()
            })
            .collect();
        compared += survivors.len() as u64;
        if sets.len() > 1 {
            v.fail(format!(
                "view {:?}: survivors {survivors:?} delivered {} different sets",
                a.set,
                sets.len()
            ));
        }
    }
    v.m("compared", compared);
    if vs.len() < 2 {
        v.fail("fewer than two views installed");
    }
    v
}

fn state_transfer(_sc: &Scenario, run: &Run) -> Verdict {
    let mut v = Verdict::new("state-transfer");
    let mut drained: Option<(View, Vec<MsgId>)> = None;
    let mut current: BTreeMap<Pid, View> = BTreeMap::new();
    let mut pending: Option<(Vec<MsgId>, PSet)> = None;
    let mut settled = PSet::new();
    let installed = views(run);
    let mut transfers = 0;
    for (s, p, e) in run.trace.notes() {
        match e {
            Ev::Installed(w) => {
                current.insert(p, w.clone());
            }
            Ev::Drained(state) => {
                if let Some(w) = current.get(&p) {
                    drained = Some((w.clone(), state.clone()));
                }
            }
            Ev::Replaced(_) => {
                if let Some((w, state)) = drained.take() {
                    pending = Some((state, w.conf));
                    settled.clear();
                }
            }
            Ev::Settled { view, state } => {
                let Some((want, conf)) = &pending else { continue };
                let w = installed.iter().find(|w| w.id == *view);
                if w.is_some_and(|w| w.conf != *conf) && settled.insert(p) {
                    transfers += 1;
                    if state != want {
                        v.fail(format!(
                            "step {s} node {p}: settled {} messages, drained {}",
                            state.len(),
                            want.len()
                        ));
                    }
                }
            }
            _ => {}
        }
    }
    v.m("transfers", transfers);
    if transfers == 0 {
        v.fail("no state transfer across a replacement");
    }
    v
}

fn drain_quiet(_sc: &Scenario, run: &Run) -> Verdict {
    let mut v = Verdict::new("drain-quiet");
    let mut open: Option<Pid> = None;
    let mut windows = 0;
    for (s, p, e) in run.trace.notes() {
        match e {
            Ev::Drained(_) => {
                if open.is_none() {
                    windows += 1;
                }
                open = Some(p);
            }
            Ev::Installed(_) => open = None,
            Ev::Suspend(false) if open == Some(p) => open = None,
            Ev::Fetch(m) if open.is_some() => {
                v.fail(format!("step {s} node {p}: fetch {m:?} while drained"));
            }
            _ => {}
        }
    }
    v.m("drains", windows);
    v
}
