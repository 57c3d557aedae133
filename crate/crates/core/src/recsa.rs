//! Reconfiguration stability assurance.
//!
//! Keeps one configuration agreed among the participants. Stale
//! information of four kinds is detected locally and answered with a
//! brute-force reset: every `config` becomes `⊥` and, once all trusted
//! processors report the same failure detector output, that trusted set is
//! installed. Planned replacements go through a three-phase automaton
//! (select, replace, back to quiescence) whose phase changes are
//! synchronized through echoes.
//!
//! All state is public: any assignment of the fields is a legal starting
//! point for a self-stabilizing algorithm, and fault injection relies on it.

use std::collections::BTreeMap;
use std::fmt;

use crate::types::{ConfigValue, PSet, Pid, Proposal};

/// What a processor last heard back about its own state.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct Echo {
    pub part: PSet,
    pub prp: Proposal,
    pub all: bool,
}

impl fmt::Debug for Echo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:?},{:?},{})", self.part, self.prp, self.all)
    }
}

/// Wire record. `echo` is specific to the destination.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RecsaMsg {
    pub fd: PSet,
    pub part: PSet,
    pub config: ConfigValue,
    pub prp: Proposal,
    pub all: bool,
    pub echo: Echo,
}

/// Kinds of stale information, as a small bit set.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct StaleSet(u8);

impl StaleSet {
    pub const TYPE1: StaleSet = StaleSet(1);
    pub const TYPE2: StaleSet = StaleSet(2);
    pub const TYPE3: StaleSet = StaleSet(4);
    pub const TYPE4: StaleSet = StaleSet(8);

    pub fn empty() -> Self {
        StaleSet(0)
    }
    pub fn is_empty(self) -> bool {
        self.0 == 0
    }
    pub fn contains(self, other: StaleSet) -> bool {
        self.0 & other.0 == other.0
    }
    pub fn insert(&mut self, other: StaleSet) {
        self.0 |= other.0;
    }
    pub fn bits(self) -> u8 {
        self.0
    }
    /// Type numbers present, ascending.
    pub fn types(self) -> Vec<u8> {
        (0..4).filter(|b| self.0 & (1 << b) != 0).map(|b| b + 1).collect()
    }
}

impl fmt::Debug for StaleSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.types())
    }
}

/// Why a reset was started.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ResetCause {
    Stale(StaleSet),
    Conflict,
}

/// What one loop iteration did.
#[derive(Clone, Debug, Default)]
pub struct LoopReport {
    pub reset: Option<ResetCause>,
    /// Reset completed with this trusted set.
    pub restarted: Option<PSet>,
    /// `(old_phase, new_phase)` when the automaton advanced.
    pub advanced: Option<(u8, u8)>,
    /// Set written into `config[i]` by a phase-2 step.
    pub replaced: Option<PSet>,
    pub sends: Vec<(Pid, RecsaMsg)>,
}

#[derive(Clone, Debug)]
pub struct Recsa {
    pub me: Pid,
    /// `FD[i]` under `me`, peers' last reported trusted sets otherwise.
    pub fd: BTreeMap<Pid, PSet>,
    /// Peers' last reported participant sets. Our own is derived.
    pub part: BTreeMap<Pid, PSet>,
    pub config: BTreeMap<Pid, ConfigValue>,
    pub prp: BTreeMap<Pid, Proposal>,
    pub all: BTreeMap<Pid, bool>,
    pub echo: BTreeMap<Pid, Echo>,
    pub all_seen: PSet,
    /// Consecutive loop iterations spent as a non-participant without any
    /// trusted participant.
    pub silent: u32,
    /// Silence length after which a non-participant concludes that no
    /// participant is left and starts a reset.
    pub collapse_after: u32,
}

pub const DEFAULT_COLLAPSE_AFTER: u32 = 48;

const HASH: ConfigValue = ConfigValue::Hash;
const DFLT: Proposal = Proposal::default_ntf();
static DFLT_REF: Proposal = Proposal::default_ntf();

impl Recsa {
    /// Fresh processor after boot: not a participant, nothing heard.
    pub fn boot(me: Pid) -> Self {
        let mut fd = BTreeMap::new();
        fd.insert(me, [me].into_iter().collect());
        let mut config = BTreeMap::new();
        config.insert(me, ConfigValue::Hash);
        Recsa {
            me,
            fd,
            part: BTreeMap::new(),
            config,
            prp: BTreeMap::new(),
            all: BTreeMap::new(),
            echo: BTreeMap::new(),
            all_seen: PSet::new(),
            silent: 0,
            collapse_after: DEFAULT_COLLAPSE_AFTER,
        }
    }

    /// Re-runs the boot interrupt on an existing instance.
    pub fn reboot(&mut self) {
        for v in self.config.values_mut() {
            *v = ConfigValue::Hash;
        }
        self.config.insert(self.me, ConfigValue::Hash);
        self.prp.clear();
        self.all.clear();
        self.echo.clear();
        self.all_seen.clear();
        self.silent = 0;
    }

    /// Participant of `config` that already agrees with `peers` on
    /// everything, as in a quiet system.
    pub fn steady(me: Pid, config: &PSet, peers: &PSet) -> Self {
        let mut s = Recsa::boot(me);
        s.set_fd(peers.clone());
        for &k in peers {
            s.config.insert(k, ConfigValue::Set(config.clone()));
            if k != me {
                s.fd.insert(k, peers.clone());
                s.part.insert(k, peers.clone());
                s.echo.insert(
                    k,
                    Echo {
                        part: peers.clone(),
                        prp: DFLT,
                        all: false,
                    },
                );
            }
        }
        s
    }

    /// Installs the current failure detector output.
    pub fn set_fd(&mut self, mut trusted: PSet) {
        trusted.insert(self.me);
        self.fd.insert(self.me, trusted);
    }

    pub fn own_fd(&self) -> &PSet {
        &self.fd[&self.me]
    }

    pub fn config_of(&self, k: Pid) -> &ConfigValue {
        self.config.get(&k).unwrap_or(&HASH)
    }

    pub fn prp_of(&self, k: Pid) -> &Proposal {
        self.prp.get(&k).unwrap_or(&DFLT_REF)
    }

    pub fn all_of(&self, k: Pid) -> bool {
        self.all.get(&k).copied().unwrap_or(false)
    }

    pub fn own_config(&self) -> &ConfigValue {
        self.config_of(self.me)
    }

    pub fn own_prp(&self) -> &Proposal {
        self.prp_of(self.me)
    }

    pub fn is_participant(&self) -> bool {
        !self.own_config().is_hash()
    }

    /// `FD[i].part`.
    pub fn own_part(&self) -> PSet {
        self.own_fd()
            .iter()
            .copied()
            .filter(|&k| !self.config_of(k).is_hash())
            .collect()
    }

    fn part_of(&self, k: Pid, own: &PSet) -> Option<PSet> {
        if k == self.me {
            Some(own.clone())
        } else {
            self.part.get(&k).cloned()
        }
    }

    fn echo_of(&self, k: Pid) -> Echo {
        self.echo.get(&k).cloned().unwrap_or_default()
    }

    /// `2·phase + [all]`.
    pub fn degree(&self, k: Pid) -> u8 {
        2 * self.prp_of(k).phase + u8::from(self.all_of(k))
    }

    /// Lexicographic maximum of the participants' proposals, `None` when
    /// all are default.
    pub fn max_ntf(&self) -> Option<Proposal> {
        self.max_ntf_over(&self.own_part())
    }

    fn max_ntf_over(&self, part: &PSet) -> Option<Proposal> {
        part.iter()
            .map(|&k| self.prp_of(k))
            .filter(|p| !p.is_default())
            .max()
            .cloned()
    }

    fn trusted_values(&self) -> Vec<&ConfigValue> {
        let mut v: Vec<&ConfigValue> = self
            .own_fd()
            .iter()
            .map(|&k| self.config_of(k))
            .filter(|c| !c.is_hash())
            .collect();
        v.sort();
        v.dedup();
        v
    }

    /// Smallest non-`#` configuration among trusted entries, `⊥` if none.
    pub fn chs_config(&self) -> ConfigValue {
        self.trusted_values()
            .first()
            .map(|c| (*c).clone())
            .unwrap_or(ConfigValue::Bottom)
    }

    /// True when no reconfiguration is in progress.
    pub fn no_reco(&self) -> bool {
        let me = self.me;
        let fd = self.own_fd();
        let part = self.own_part();
        let participant = self.is_participant();
        for &k in part.iter().filter(|&&k| k != me) {
            match self.fd.get(&k) {
                Some(f) if f.contains(&me) => {}
                _ => return false,
            }
            if self.part.get(&k) != Some(&part) {
                return false;
            }
            if participant && self.echo_of(k).part != part {
                return false;
            }
        }
        let vals = self.trusted_values();
        if vals.len() > 1 || vals.iter().any(|c| c.is_void()) {
            return false;
        }
        fd.iter().all(|&k| self.prp_of(k).is_default())
    }

    pub fn get_config(&self) -> ConfigValue {
        if self.no_reco() {
            self.chs_config()
        } else {
            self.own_config().clone()
        }
    }

    /// Requests replacement of the configuration by `set`. Returns whether
    /// the call took effect.
    pub fn estab(&mut self, set: PSet) -> bool {
        if !self.no_reco() || set.is_empty() {
            return false;
        }
        if *self.own_config() == ConfigValue::Set(set.clone()) {
            return false;
        }
        self.set_own_prp(Proposal::new(1, set));
        true
    }

    /// Turns a non-participant into a participant. Returns whether the
    /// call took effect.
    pub fn participate(&mut self) -> bool {
        if !self.no_reco() {
            return false;
        }
        let c = self.chs_config();
        self.config.insert(self.me, c);
        true
    }

    pub fn receive(&mut self, from: Pid, m: RecsaMsg) {
        if from == self.me {
            return;
        }
        self.fd.insert(from, m.fd);
        self.part.insert(from, m.part);
        self.config.insert(from, m.config);
        self.prp.insert(from, m.prp);
        self.all.insert(from, m.all);
        self.echo.insert(from, m.echo);
    }

    fn set_own_prp(&mut self, p: Proposal) {
        if *self.own_prp() != p {
            self.prp.insert(self.me, p);
            self.all.insert(self.me, false);
            self.all_seen.clear();
        }
    }

    /// Sets every known participant entry (and our own) to `val` and drops
    /// local notifications.
    fn config_set(&mut self, val: ConfigValue) {
        let mut keys: PSet = self.own_part();
        keys.insert(self.me);
        for k in keys {
            self.config.insert(k, val.clone());
            self.prp.insert(k, DFLT);
        }
        self.all.insert(self.me, false);
        self.all_seen.clear();
    }

    fn invalid_prp(p: &Proposal) -> bool {
        match p.phase {
            0 => p.set.is_some(),
            // An empty set can never become a configuration.
            1 | 2 => p.set.as_ref().is_none_or(|s| s.is_empty()),
            _ => true,
        }
    }

    fn type1(&self, scope: &PSet) -> bool {
        scope.iter().any(|&k| Self::invalid_prp(self.prp_of(k)))
    }

    fn type3(&self, part: &PSet) -> bool {
        let me = self.me;
        let own = self.own_prp();
        // A processor back at the default notification has degree 0 and is
        // legitimately behind a peer still in phase 2.
        let active = |k: Pid| self.degree(k) > 0 || !self.prp_of(k).is_default();
        if active(me) {
            let d = self.degree(me) as i16;
            if part
                .iter()
                .filter(|&&k| active(k))
                .any(|&k| (self.degree(k) as i16 - d).abs() > 1)
            {
                return true;
            }
        }
        let x = own.phase;
        if (x == 1 || x == 2)
            && part.iter().any(|&k| {
                k != me && self.prp_of(k).phase == (x + 1) % 3 && !self.all_seen.contains(&k)
            })
        {
            return true;
        }
        if part.iter().any(|&k| self.prp_of(k).phase == 2) {
            let mut sets: Vec<&Option<PSet>> = part
                .iter()
                .map(|&k| self.prp_of(k))
                .filter(|p| !p.is_default())
                .map(|p| &p.set)
                .collect();
            sets.sort();
            sets.dedup();
            if sets.len() > 1 {
                return true;
            }
        }
        false
    }

    fn type4(&self, part: &PSet) -> bool {
        let fd = self.own_fd();
        let agree = part.iter().filter(|&&k| k != self.me).all(|&k| {
            self.fd.get(&k) == Some(fd) && self.part.get(&k) == Some(part)
        });
        if !agree {
            return false;
        }
        let cfg = if self.is_participant() {
            self.own_config().clone()
        } else {
            self.chs_config()
        };
        match cfg {
            ConfigValue::Set(s) => s.is_disjoint(part),
            ConfigValue::Bottom => {
                !self.is_participant() && part.is_empty() && self.silent >= self.collapse_after
            }
            ConfigValue::Hash => false,
        }
    }

    fn conflict(&self) -> bool {
        self.trusted_values()
            .iter()
            .filter(|c| !c.is_bottom())
            .count()
            > 1
    }

    /// Every kind of stale information present in the local state.
    pub fn detect_stale(&self) -> StaleSet {
        let fd = self.own_fd();
        let part = self.own_part();
        let mut s = StaleSet::empty();
        if self.type1(fd) {
            s.insert(StaleSet::TYPE1);
        }
        let void = fd.iter().any(|&k| self.config_of(k).is_void());
        if void || (self.max_ntf_over(&part).is_none() && self.conflict()) {
            s.insert(StaleSet::TYPE2);
        }
        if self.type3(&part) {
            s.insert(StaleSet::TYPE3);
        }
        if self.type4(&part) {
            s.insert(StaleSet::TYPE4);
        }
        s
    }

    /// The reset trigger evaluated at the top of the loop. Differs from
    /// [`Recsa::detect_stale`] in how type-2 is read: a peer's `⊥` only
    /// forces us into the reset when we are neither in it already nor done
    /// with it, and conflicts are left to the brute-force branch.
    fn loop_trigger(&self, part: &PSet) -> StaleSet {
        let fd = self.own_fd();
        let mut s = StaleSet::empty();
        if self.type1(fd) {
            s.insert(StaleSet::TYPE1);
        }
        let own = self.own_config();
        let done = ConfigValue::Set(fd.clone());
        let empty_set = fd
            .iter()
            .any(|&k| matches!(self.config_of(k), ConfigValue::Set(x) if x.is_empty()));
        let peer_bottom = fd.iter().any(|&k| self.config_of(k).is_bottom());
        if empty_set || (peer_bottom && !own.is_bottom() && *own != done) {
            s.insert(StaleSet::TYPE2);
        }
        if self.type3(part) {
            s.insert(StaleSet::TYPE3);
        }
        if self.type4(part) {
            s.insert(StaleSet::TYPE4);
        }
        s
    }

    /// One pass of the do-forever loop.
    pub fn loop_iteration(&mut self) -> LoopReport {
        let me = self.me;
        let mut rep = LoopReport::default();

        let part = self.own_part();
        let stale_keys: Vec<Pid> = self
            .config
            .keys()
            .chain(self.prp.keys())
            .copied()
            .filter(|k| !part.contains(k))
            .collect();
        for k in stale_keys {
            self.config.insert(k, ConfigValue::Hash);
            self.prp.insert(k, DFLT);
        }

        if !self.is_participant() && part.is_empty() {
            self.silent = self.silent.saturating_add(1);
        } else {
            self.silent = 0;
        }
        let trig = self.loop_trigger(&part);
        if !trig.is_empty() {
            self.config_set(ConfigValue::Bottom);
            rep.reset = Some(ResetCause::Stale(trig));
        }

        let part = self.own_part();
        if self.max_ntf_over(&part).is_none() {
            if self.conflict() {
                self.config_set(ConfigValue::Bottom);
                if rep.reset.is_none() {
                    rep.reset = Some(ResetCause::Conflict);
                }
            }
            let fd = self.own_fd().clone();
            let part = self.own_part();
            let agree = part
                .iter()
                .filter(|&&k| k != me)
                .all(|&k| self.fd.get(&k) == Some(&fd));
            if self.own_config().is_bottom() && agree {
                self.config_set(ConfigValue::Set(fd.clone()));
                rep.restarted = Some(fd);
            }
        } else if part.contains(&me) {
            self.delicate_step(&part, &mut rep);
        }

        if self.is_participant() {
            let fd = self.own_fd().clone();
            let part = self.own_part();
            for &j in fd.iter().filter(|&&j| j != me) {
                let echo = Echo {
                    part: self.part.get(&j).cloned().unwrap_or_default(),
                    prp: self.prp_of(j).clone(),
                    all: self.all_of(j),
                };
                rep.sends.push((
                    j,
                    RecsaMsg {
                        fd: fd.clone(),
                        part: part.clone(),
                        config: self.own_config().clone(),
                        prp: self.own_prp().clone(),
                        all: self.all_of(me),
                        echo,
                    },
                ));
            }
        }
        rep
    }

    fn same(&self, k: Pid, part: &PSet) -> bool {
        self.part_of(k, part).as_ref() == Some(part) && self.prp_of(k) == self.own_prp()
    }

    fn delicate_step(&mut self, part: &PSet, rep: &mut LoopReport) {
        let me = self.me;
        let peers: Vec<Pid> = part.iter().copied().filter(|&k| k != me).collect();
        let own_prp = self.own_prp().clone();
        let echo_no_all = peers.iter().all(|&j| {
            let e = self.echo_of(j);
            e.part == *part && e.prp == own_prp
        });
        let all_now = echo_no_all && peers.iter().all(|&k| self.same(k, part));
        if all_now {
            self.all.insert(me, true);
        }
        for &k in &peers {
            if self.same(k, part) && self.all_of(k) {
                self.all_seen.insert(k);
            }
        }
        let own_all = self.all_of(me);
        let echo_full = peers.iter().all(|&j| {
            let e = self.echo_of(j);
            e.part == *part && e.prp == own_prp && e.all == own_all
        });
        let seen_all = part
            .iter()
            .all(|k| self.all_seen.contains(k) || (*k == me && own_all));
        if echo_full && seen_all {
            let old = own_prp.phase;
            let new = match old {
                1 => 2,
                _ => 0,
            };
            let mut p = own_prp.clone();
            p.phase = new;
            self.set_own_prp(p);
            self.all_seen.clear();
            if old != new {
                rep.advanced = Some((old, new));
            }
        }
        match self.own_prp().phase {
            0 => {
                let next = match self.max_ntf_over(part) {
                    Some(m) if m.phase == 1 => m,
                    _ => DFLT,
                };
                self.set_own_prp(next);
            }
            1 => {
                if let Some(m) = self.max_ntf_over(part) {
                    // Jumping ahead before every peer has acknowledged our
                    // `all` flag looks like a skipped phase to them. A peer's
                    // entry may also predate the change `m` reports; wait
                    // for fresher news rather than open a degree gap.
                    let behind = peers.iter().any(|&k| self.degree(k) + 1 < 2 * m.phase);
                    if m.phase == 1 || (own_all && echo_full && !behind) {
                        self.set_own_prp(m);
                    }
                }
            }
            2 => {
                if let Some(s) = self.own_prp().set.clone() {
                    if *self.own_config() != ConfigValue::Set(s.clone()) {
                        rep.replaced = Some(s.clone());
                    }
                    self.config.insert(me, ConfigValue::Set(s));
                }
            }
            _ => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::pset;

    fn quiet(me: Pid, n: u32) -> Recsa {
        let all: PSet = (1..=n).collect();
        Recsa::steady(me, &all, &all)
    }

    #[test]
    fn steady_state_is_quiet() {
        let s = quiet(1, 3);
        assert!(s.no_reco());
        assert_eq!(s.get_config(), ConfigValue::from_ids([1, 2, 3]));
        assert!(s.detect_stale().is_empty());
    }

    #[test]
    fn estab_guard() {
        let mut s = quiet(1, 3);
        assert!(!s.estab(pset(&[1, 2, 3])));
        assert!(!s.estab(PSet::new()));
        assert!(s.estab(pset(&[1, 2])));
        assert_eq!(*s.own_prp(), Proposal::new(1, pset(&[1, 2])));
        assert!(!s.no_reco());
        assert!(!s.estab(pset(&[2, 3])));
    }

    #[test]
    fn phase_zero_with_set_is_type1() {
        let mut s = quiet(1, 3);
        s.prp.insert(2, Proposal::new(0, pset(&[2])));
        assert_eq!(s.detect_stale(), StaleSet::TYPE1);
    }

    #[test]
    fn bottom_blocks_no_reco() {
        let mut s = quiet(1, 3);
        s.config.insert(3, ConfigValue::Bottom);
        assert!(!s.no_reco());
    }

    #[test]
    fn joiner_boots_silent() {
        let mut s = Recsa::boot(4);
        s.set_fd(pset(&[1, 4]));
        assert!(!s.is_participant());
        for _ in 1..s.collapse_after {
            assert!(s.loop_iteration().sends.is_empty());
        }
        // Nobody ever spoke: total collapse, so the joiner starts a reset.
        let rep = s.loop_iteration();
        assert!(rep.reset.is_some());
        assert_eq!(rep.sends.len(), 1);
        s.reboot();
        let once = s.config.clone();
        s.reboot();
        assert_eq!(s.config, once);
        assert!(!s.is_participant());
    }

    #[test]
    fn max_ntf_prefers_phase() {
        let mut s = quiet(1, 3);
        s.prp.insert(2, Proposal::new(1, pset(&[1, 2])));
        s.prp.insert(3, Proposal::new(2, pset(&[1])));
        assert_eq!(s.max_ntf(), Some(Proposal::new(2, pset(&[1]))));
    }

    #[test]
    fn type4_on_dead_config() {
        let peers = pset(&[1, 2]);
        let mut s = Recsa::steady(1, &pset(&[9]), &peers);
        s.config.insert(2, ConfigValue::Set(pset(&[9])));
        assert!(s.detect_stale().contains(StaleSet::TYPE4));
    }

    #[test]
    fn max_ntf_by_set_tuple() {
        let mut s = quiet(1, 3);
        let a = Proposal::new(1, pset(&[1, 2]));
        let b = Proposal::new(1, pset(&[1, 3]));
        s.prp.insert(2, a.clone());
        s.prp.insert(3, b.clone());
        // Oracle: compare the ascending id tuples directly.
        let ta: Vec<Pid> = a.set.clone().unwrap().into_iter().collect();
        let tb: Vec<Pid> = b.set.clone().unwrap().into_iter().collect();
        let want = if tb > ta { b } else { a };
        assert_eq!(s.max_ntf(), Some(want.clone()));
        assert_eq!(want, Proposal::new(1, pset(&[1, 3])));
        s.prp.clear();
        assert_eq!(s.max_ntf(), None);
    }

    #[test]
    fn degree_formula() {
        let mut s = quiet(1, 3);
        assert_eq!(s.degree(2), 0);
        s.prp.insert(2, Proposal::new(1, pset(&[1])));
        s.all.insert(2, true);
        assert_eq!(s.degree(2), 3);
        s.prp.insert(3, Proposal::new(2, pset(&[1])));
        assert_eq!(s.degree(3), 4);
    }

    #[test]
    fn degree_gap_is_type3() {
        let mut s = quiet(1, 2);
        s.all.insert(1, true);
        s.prp.insert(2, Proposal::new(2, pset(&[1])));
        let (d1, d2) = (s.degree(1), s.degree(2));
        // Oracle: 2·phase + [all] for each side.
        let (phase1, phase2) = (0u8, 2u8);
        assert_eq!((d1, d2), (2 * phase1 + 1, 2 * phase2));
        assert!((d1 as i32 - d2 as i32).abs() > 1);
        assert!(s.detect_stale().contains(StaleSet::TYPE3));
    }

    #[test]
    fn participate_with_all_hash_peers() {
        let mut s = Recsa::boot(3);
        s.set_fd(pset(&[1, 2, 3]));
        // Oracle: the non-# values among trusted entries are none, so the
        // choice is the reset marker.
        let vals: Vec<&ConfigValue> = s
            .own_fd()
            .iter()
            .map(|&k| s.config_of(k))
            .filter(|c| !c.is_hash())
            .collect();
        assert!(vals.is_empty());
        assert_eq!(s.chs_config(), ConfigValue::Bottom);
        assert!(s.participate());
        assert_eq!(*s.own_config(), ConfigValue::Bottom);
    }

    #[test]
    fn conflicting_configs_reset_then_restart() {
        let peers = pset(&[1, 2]);
        let mut a = Recsa::steady(1, &pset(&[1]), &peers);
        a.config.insert(2, ConfigValue::Set(pset(&[2])));
        assert!(a.detect_stale().contains(StaleSet::TYPE2));
        let rep = a.loop_iteration();
        assert_eq!(rep.reset, Some(ResetCause::Conflict));
        // Own entry is reset; the peer's stored value is the reset marker
        // too, and FD snapshots agree, so the trusted set is installed.
        assert_eq!(rep.restarted, Some(peers.clone()));
        assert_eq!(*a.own_config(), ConfigValue::Set(peers));
    }
}
