//! The (N,Θ) failure detector.
//!
//! Each processor keeps a heartbeat age per peer. A token arrival from `j`
//! zeroes `j`'s age and ages everybody else by one. Peers are ranked by age
//! and the first big jump in the ranking separates the live processors from
//! the ones that stopped returning the token.

use std::collections::BTreeMap;

use crate::types::{PSet, Pid};

/// Default ratio that counts as a significant gap in the ranking.
pub const DEFAULT_GAP_FACTOR: f64 = 3.0;

/// How a node obtains its trusted set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FdMode {
    /// The driver supplies the exact live set.
    Admissible,
    /// Derived from heartbeat ages.
    Unreliable,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeartbeatVector {
    counts: BTreeMap<Pid, u64>,
    n_bound: usize,
    gap_factor: f64,
}

impl HeartbeatVector {
    pub fn new(n_bound: usize, gap_factor: f64) -> Self {
        assert!(n_bound > 0, "N must be positive");
        assert!(gap_factor > 0.0, "gap factor must be positive");
        HeartbeatVector {
            counts: BTreeMap::new(),
            n_bound,
            gap_factor,
        }
    }

    pub fn from_counts(counts: BTreeMap<Pid, u64>, n_bound: usize, gap_factor: f64) -> Self {
        let mut v = HeartbeatVector::new(n_bound, gap_factor);
        v.counts = counts;
        v
    }

    pub fn counts(&self) -> &BTreeMap<Pid, u64> {
        &self.counts
    }

    pub fn n_bound(&self) -> usize {
        self.n_bound
    }

    /// Token received from `j`.
    pub fn on_heartbeat(&mut self, j: Pid) {
        for (k, c) in self.counts.iter_mut() {
            if *k != j {
                *c = c.saturating_add(1);
            }
        }
        self.counts.insert(j, 0);
    }

    /// Drops the entry of `j`, e.g. when the link to `j` is re-established
    /// and the old history no longer means anything.
    pub fn forget(&mut self, j: Pid) {
        self.counts.remove(&j);
    }

    /// Entries ascending by age, ties by identifier, cut at the N-th rank.
    pub fn ranked(&self) -> Vec<(Pid, u64)> {
        let mut v: Vec<(Pid, u64)> = self.counts.iter().map(|(k, c)| (*k, *c)).collect();
        v.sort_by_key(|&(k, c)| (c, k));
        v.truncate(self.n_bound);
        v
    }

    /// Number of ranked entries before the first significant gap.
    ///
    /// Position `k+1` opens a gap when its age exceeds
    /// `gap_factor * max(age[1..=k], 1)`. Without a gap every ranked entry
    /// counts. An empty vector yields 0.
    pub fn estimate_n(&self) -> usize {
        let ranked = self.ranked();
        let mut hi = 0u64;
        for (idx, &(_, c)) in ranked.iter().enumerate() {
            if idx > 0 && (c as f64) > self.gap_factor * (hi.max(1) as f64) {
                return idx;
            }
            hi = hi.max(c);
        }
        ranked.len()
    }

    /// `me` plus the peers ranked before the gap.
    pub fn trusted(&self, me: Pid) -> PSet {
        let n = self.estimate_n();
        let mut out: PSet = self.ranked().into_iter().take(n).map(|(k, _)| k).collect();
        out.insert(me);
        out
    }
}

/// A node's failure detector: heartbeat ranking plus an optional exact
/// override used for admissible intervals.
#[derive(Clone, Debug)]
pub struct FailureDetector {
    me: Pid,
    mode: FdMode,
    hb: HeartbeatVector,
    exact: PSet,
}

impl FailureDetector {
    pub fn new(me: Pid, mode: FdMode, n_bound: usize, gap_factor: f64) -> Self {
        let mut exact = PSet::new();
        exact.insert(me);
        FailureDetector {
            me,
            mode,
            hb: HeartbeatVector::new(n_bound, gap_factor),
            exact,
        }
    }

    pub fn mode(&self) -> FdMode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: FdMode) {
        self.mode = mode;
    }

    pub fn heartbeats(&self) -> &HeartbeatVector {
        &self.hb
    }

    pub fn on_heartbeat(&mut self, j: Pid) {
        if j != self.me {
            self.hb.on_heartbeat(j);
        }
    }

    /// Installs the live set used in admissible mode.
    pub fn set_exact(&mut self, live: PSet) {
        self.exact = live;
        self.exact.insert(self.me);
    }

    pub fn trusted(&self) -> PSet {
        match self.mode {
            FdMode::Admissible => self.exact.clone(),
            FdMode::Unreliable => self.hb.trusted(self.me),
        }
    }
}
