//! Bounded epoch labels over the current configuration.
//!
//! A label is `⟨creator, sting, antistings⟩`. Labels from different creators
//! are ordered by creator; labels from the same creator are ordered when the
//! sting of one is an antisting of the other and not vice versa, and may be
//! incomparable. Members keep, per creator, a most-recently-used queue of
//! label pairs `⟨ml, cl⟩` where a non-null `cl` cancels `ml`, and converge on
//! a globally maximal legit label.
//!
//! [`EpochStore`] is generic over [`Epoch`] so that the counter layer runs
//! the same receipt action over counters.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use thiserror::Error;

use crate::recsa::Recsa;
use crate::types::{ConfigValue, PSet, PartialCmp, Pid};

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EpochLabel {
    pub creator: Pid,
    pub sting: u32,
    /// Sorted, duplicate free.
    pub anti: Arc<[u32]>,
}

impl EpochLabel {
    pub fn new(creator: Pid, sting: u32, anti: impl IntoIterator<Item = u32>) -> Self {
        let set: BTreeSet<u32> = anti.into_iter().collect();
        EpochLabel {
            creator,
            sting,
            anti: set.into_iter().collect(),
        }
    }

    pub fn has_anti(&self, s: u32) -> bool {
        self.anti.binary_search(&s).is_ok()
    }

    /// `self ≺_lb other`.
    pub fn precedes(&self, other: &EpochLabel) -> bool {
        match self.creator.cmp(&other.creator) {
            Ordering::Less => true,
            Ordering::Greater => false,
            Ordering::Equal => other.has_anti(self.sting) && !self.has_anti(other.sting),
        }
    }

    pub fn cmp_lb(&self, other: &EpochLabel) -> PartialCmp {
        if self == other {
            PartialCmp::Equal
        } else if self.precedes(other) {
            PartialCmp::Less
        } else if other.precedes(self) {
            PartialCmp::Greater
        } else {
            PartialCmp::Incomparable
        }
    }

    /// `self ⪯_lb other`.
    pub fn le(&self, other: &EpochLabel) -> bool {
        self == other || self.precedes(other)
    }
}

impl fmt::Debug for EpochLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Antisting sets are long; print a fingerprint.
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.anti.hash(&mut h);
        write!(
            f,
            "⟨{},{},{}:{:08x}⟩",
            self.creator,
            self.sting,
            self.anti.len(),
            h.finish() as u32
        )
    }
}

/// Something carried in a label pair: a plain label or a counter.
pub trait Epoch: Clone + Eq + fmt::Debug {
    fn label(&self) -> &EpochLabel;
    /// First epoch of a freshly created label.
    fn fresh(label: EpochLabel, creator: Pid) -> Self;
    /// Order of two epochs that share a label.
    fn refine(&self, other: &Self) -> Ordering;

    fn creator(&self) -> Pid {
        self.label().creator
    }
}

impl Epoch for EpochLabel {
    fn label(&self) -> &EpochLabel {
        self
    }
    fn fresh(label: EpochLabel, _creator: Pid) -> Self {
        label
    }
    fn refine(&self, _other: &Self) -> Ordering {
        Ordering::Equal
    }
}

/// `⟨ml, cl⟩`.
#[derive(Clone, PartialEq, Eq)]
pub struct Pair<E> {
    pub ml: Option<E>,
    pub cl: Option<E>,
}

impl<E> Pair<E> {
    pub fn bottom() -> Self {
        Pair { ml: None, cl: None }
    }
    pub fn legit(&self) -> bool {
        self.cl.is_none()
    }
}

impl<E: Epoch> Pair<E> {
    pub fn of(ml: E) -> Self {
        Pair { ml: Some(ml), cl: None }
    }

    fn same_ml(&self, other: &Pair<E>) -> bool {
        match (&self.ml, &other.ml) {
            (Some(a), Some(b)) => a.label() == b.label(),
            (None, None) => true,
            _ => false,
        }
    }

    fn creators(&self) -> impl Iterator<Item = Pid> + '_ {
        self.ml.iter().chain(self.cl.iter()).map(|e| e.creator())
    }
}

impl<E: fmt::Debug> fmt::Debug for Pair<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |x: &Option<E>, f: &mut fmt::Formatter<'_>| match x {
            Some(e) => write!(f, "{:?}", e),
            None => f.write_str("⊥"),
        };
        f.write_str("(")?;
        show(&self.ml, f)?;
        f.write_str(",")?;
        show(&self.cl, f)?;
        f.write_str(")")
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SizingError {
    #[error("label domain {d} too small: need at least {need} for k={k}")]
    DomainTooSmall { d: u32, k: usize, need: u64 },
}

/// Queue bounds and label domain for a configuration of `v` members.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Sizing {
    pub v: usize,
    pub m: usize,
    pub own_bound: usize,
    pub peer_bound: usize,
    pub k: usize,
    pub d: u32,
}

impl Sizing {
    /// `m` is the number of pairs that may be in transit.
    pub fn new(v: usize, m: usize) -> Self {
        let own_bound = v * (v * v + m) + v;
        let k = 2 * own_bound;
        let d = (k * (k + 1) + 1) as u32;
        Sizing {
            v,
            m,
            own_bound,
            peer_bound: v + m,
            k,
            d,
        }
    }

    /// Same bounds over an explicit domain size.
    pub fn with_domain(v: usize, m: usize, d: u32) -> Result<Self, SizingError> {
        let mut s = Sizing::new(v, m);
        let need = (s.k as u64) * (s.k as u64 + 1) + 1;
        if (d as u64) < need {
            return Err(SizingError::DomainTooSmall { d, k: s.k, need });
        }
        s.d = d;
        Ok(s)
    }
}

/// Things worth logging.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StoreEvent {
    Created(EpochLabel),
    Flushed,
    Rebuilt(PSet),
}

#[derive(Clone, Debug)]
pub struct EpochStore<E> {
    pub me: Pid,
    pub members: PSet,
    pub max: BTreeMap<Pid, Pair<E>>,
    pub queues: BTreeMap<Pid, VecDeque<Pair<E>>>,
    pub sizing: Sizing,
    /// Pairs in transit per peer link; `m = cap·(v−1)`.
    pub cap: usize,
    pub created: u64,
    pub events: Vec<StoreEvent>,
}

pub type LabelStore = EpochStore<EpochLabel>;

/// Creates a label greater than every label in `own` (both fields of every
/// pair). Returns `None` only when the domain is too small, which sizing
/// rules out.
pub fn next_label<'a, E: Epoch + 'a>(
    me: Pid,
    own: impl Iterator<Item = &'a Pair<E>>,
    k: usize,
    d: u32,
) -> Option<EpochLabel> {
    let mut stings = BTreeSet::new();
    let mut banned = BTreeSet::new();
    for lp in own {
        for e in lp.ml.iter().chain(lp.cl.iter()) {
            let l = e.label();
            stings.insert(l.sting);
            banned.extend(l.anti.iter().copied());
        }
    }
    let mut anti = stings;
    let mut v = 1u32;
    while anti.len() < k && v <= d {
        anti.insert(v);
        v += 1;
    }
    let sting = (1..=d).find(|s| !anti.contains(s) && !banned.contains(s))?;
    Some(EpochLabel::new(me, sting, anti))
}

impl<E: Epoch> EpochStore<E> {
    pub fn new(me: Pid, cap: usize) -> Self {
        EpochStore {
            me,
            members: PSet::new(),
            max: BTreeMap::new(),
            queues: BTreeMap::new(),
            sizing: Sizing::new(1, 0),
            cap,
            created: 0,
            events: Vec::new(),
        }
    }

    fn bound(&self, j: Pid) -> usize {
        if j == self.me {
            self.sizing.own_bound
        } else {
            self.sizing.peer_bound
        }
    }

    pub fn own_max(&self) -> Pair<E> {
        self.max.get(&self.me).cloned().unwrap_or_else(Pair::bottom)
    }

    fn max_of(&self, j: Pid) -> Pair<E> {
        self.max.get(&j).cloned().unwrap_or_else(Pair::bottom)
    }

    /// The structure's members differ from `conf`.
    pub fn conf_change(&self, conf: &ConfigValue) -> bool {
        match conf {
            ConfigValue::Set(c) => *c != self.members,
            _ => false,
        }
    }

    pub fn rebuild(&mut self, conf: &PSet) {
        self.members = conf.clone();
        let v = conf.len().max(1);
        self.sizing = Sizing::new(v, self.cap * (v - 1));
        self.max.retain(|k, _| conf.contains(k));
        for &j in conf {
            self.max.entry(j).or_insert_with(Pair::bottom);
        }
        self.queues.clear();
        for &j in conf {
            self.queues.insert(j, VecDeque::new());
        }
        self.events.push(StoreEvent::Rebuilt(conf.clone()));
    }

    pub fn empty_all_queues(&mut self) {
        for q in self.queues.values_mut() {
            q.clear();
        }
        self.events.push(StoreEvent::Flushed);
    }

    pub fn clean_lp(&self, x: &Pair<E>, conf: &PSet) -> Pair<E> {
        if x.creators().any(|c| !conf.contains(&c)) {
            Pair::bottom()
        } else {
            x.clone()
        }
    }

    pub fn clean_max(&mut self, conf: &PSet) {
        for (j, lp) in self.max.iter_mut() {
            if conf.contains(j) && lp.creators().any(|c| !conf.contains(&c)) {
                *lp = Pair::bottom();
            }
        }
    }

    /// Places `lp` at the front of its creator's queue, merging with an
    /// existing record of the same label: the canceled copy wins, otherwise
    /// the greater epoch.
    pub fn enqueue(&mut self, lp: Pair<E>) {
        let Some(ml) = &lp.ml else { return };
        let owner = ml.creator();
        let bound = self.bound(owner);
        let Some(q) = self.queues.get_mut(&owner) else {
            return;
        };
        let merged = match q.iter().position(|x| x.same_ml(&lp)) {
            Some(pos) => {
                let old = q.remove(pos).expect("position in range");
                merge(old, lp)
            }
            None => lp,
        };
        q.push_front(merged);
        q.truncate(bound);
    }

    fn stale_info(&self) -> bool {
        self.queues.iter().any(|(&j, q)| {
            q.iter().enumerate().any(|(a, lp)| {
                lp.ml.as_ref().is_none_or(|e| e.creator() != j)
                    || q.iter().enumerate().any(|(b, lp2)| {
                        a != b && (lp.same_ml(lp2) || (lp.legit() && lp2.legit()))
                    })
            })
        })
    }

    /// Finds the stored twin of `lp` (same label) and brings it to the
    /// front.
    fn lookup(&mut self, lp: &Pair<E>) -> Option<Pair<E>> {
        let owner = lp.ml.as_ref()?.creator();
        let q = self.queues.get_mut(&owner)?;
        let pos = q.iter().position(|x| x.same_ml(lp))?;
        let x = q.remove(pos).expect("position in range");
        q.push_front(x.clone());
        Some(x)
    }

    /// The receipt action. `None` is the argument-less call that skips the
    /// first two lines.
    pub fn receipt_action(&mut self, input: Option<(Pair<E>, Pair<E>, Pid)>) {
        let me = self.me;
        if let Some((sent_max, last_sent, k)) = input {
            self.max.insert(k, sent_max);
            let own = self.own_max();
            if !last_sent.legit() && own.ml.is_some() && own.same_ml(&last_sent) {
                self.max.insert(me, last_sent);
            }
        }
        if self.stale_info() {
            self.empty_all_queues();
        }
        let maxes: Vec<Pair<E>> = self.max.values().cloned().collect();
        for lp in maxes {
            self.enqueue(lp);
        }
        for q in self.queues.values_mut() {
            let snapshot: Vec<Pair<E>> = q.iter().cloned().collect();
            for lp in q.iter_mut() {
                if !lp.legit() {
                    continue;
                }
                let Some(ml) = lp.ml.clone() else { continue };
                if let Some(other) = snapshot.iter().find_map(|o| {
                    o.ml.as_ref().filter(|oe| !oe.label().le(ml.label()))
                }) {
                    lp.cl = Some(other.clone());
                }
            }
        }
        for q in self.queues.values_mut() {
            let mut kept: Vec<Pair<E>> = Vec::with_capacity(q.len());
            for lp in q.drain(..) {
                match kept.iter().position(|x| x.same_ml(&lp)) {
                    Some(pos) => {
                        let old = kept.remove(pos);
                        kept.insert(pos, merge(old, lp));
                    }
                    None => kept.push(lp),
                }
            }
            q.extend(kept);
        }
        let keys: Vec<Pid> = self.max.keys().copied().collect();
        for j in keys {
            let mj = self.max_of(j);
            if mj.legit() && mj.ml.is_some() {
                if let Some(twin) = self.lookup(&mj) {
                    if !twin.legit() {
                        self.max.insert(j, twin);
                    }
                }
            }
        }
        let legit: Vec<E> = self
            .max
            .values()
            .filter(|lp| lp.legit())
            .filter_map(|lp| lp.ml.clone())
            .collect();
        if let Some(best) = maximal(&legit) {
            self.max.insert(me, Pair::of(best));
        } else {
            self.use_own_label();
        }
    }

    fn use_own_label(&mut self) {
        let me = self.me;
        let found = self
            .queues
            .get(&me)
            .and_then(|q| q.iter().position(|lp| lp.legit() && lp.ml.is_some()));
        if let Some(pos) = found {
            let q = self.queues.get_mut(&me).expect("own queue");
            let lp = q.remove(pos).expect("position in range");
            q.push_front(lp.clone());
            self.max.insert(me, lp);
            return;
        }
        let own: Vec<Pair<E>> = self
            .queues
            .get(&me)
            .map(|q| q.iter().cloned().collect())
            .unwrap_or_default();
        let label = next_label(me, own.iter(), self.sizing.k, self.sizing.d)
            .expect("label domain sized at rebuild");
        self.created += 1;
        self.events.push(StoreEvent::Created(label.clone()));
        let lp = Pair::of(E::fresh(label, me));
        self.max.insert(me, lp.clone());
        if let Some(q) = self.queues.get_mut(&me) {
            q.push_front(lp);
            q.truncate(self.sizing.own_bound);
        }
    }

    /// True when the layer may exchange messages right now.
    pub fn quiet(&self, recsa: &Recsa) -> bool {
        recsa.no_reco() && !self.conf_change(&recsa.get_config())
    }

    /// The do-forever body. Returns whether structures were rebuilt.
    pub fn tick(&mut self, recsa: &Recsa) -> bool {
        if !recsa.no_reco() {
            return false;
        }
        let cur = recsa.get_config();
        if !self.conf_change(&cur) {
            return false;
        }
        let conf = cur.set().cloned().unwrap_or_default();
        self.rebuild(&conf);
        self.empty_all_queues();
        self.clean_max(&conf);
        let own = self.own_max();
        self.receipt_action(Some((Pair::bottom(), own, self.me)));
        true
    }

    /// Message for peer `k`: `⟨max[i], max[k]⟩`, both cleaned.
    pub fn transmit(&self, recsa: &Recsa, k: Pid) -> Option<(Pair<E>, Pair<E>)> {
        if !self.quiet(recsa) || k == self.me || !self.members.contains(&k) {
            return None;
        }
        let conf = &self.members;
        Some((
            self.clean_lp(&self.own_max(), conf),
            self.clean_lp(&self.max_of(k), conf),
        ))
    }

    pub fn receive(&mut self, recsa: &Recsa, from: Pid, sent: Pair<E>, last: Pair<E>) {
        if !self.quiet(recsa) || !self.members.contains(&from) {
            return;
        }
        let conf = self.members.clone();
        // Storage covers members only.
        let me = self.me;
        self.max.retain(|j, _| *j == me || conf.contains(j));
        self.queues.retain(|j, _| conf.contains(j));
        self.clean_max(&conf);
        let sent = self.clean_lp(&sent, &conf);
        let last = self.clean_lp(&last, &conf);
        self.receipt_action(Some((sent, last, from)));
    }

    /// Every label mentioned anywhere in the store.
    pub fn all_labels(&self) -> impl Iterator<Item = &EpochLabel> + '_ {
        self.max
            .values()
            .chain(self.queues.values().flatten())
            .flat_map(|lp| lp.ml.iter().chain(lp.cl.iter()))
            .map(|e| e.label())
    }
}

fn merge<E: Epoch>(old: Pair<E>, new: Pair<E>) -> Pair<E> {
    match (old.legit(), new.legit()) {
        (false, true) => old,
        (true, false) => new,
        _ => {
            let (Some(a), Some(b)) = (&old.ml, &new.ml) else {
                return new;
            };
            if b.refine(a) == Ordering::Less {
                old
            } else {
                new
            }
        }
    }
}

/// A maximal element under `≺_lb`, ties among incomparable maxima broken by
/// the total order on labels; among epochs of that label, the greatest.
fn maximal<E: Epoch>(xs: &[E]) -> Option<E> {
    let tops: Vec<&E> = xs
        .iter()
        .filter(|a| !xs.iter().any(|b| a.label().precedes(b.label())))
        .collect();
    let label = tops.iter().map(|e| e.label()).max()?.clone();
    xs.iter()
        .filter(|e| *e.label() == label)
        .max_by(|a, b| a.refine(b))
        .cloned()
}
