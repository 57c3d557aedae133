//! Identifiers, configuration values and replacement proposals.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;

/// Processor identifier. Totally ordered.
pub type Pid = u32;

/// A processor set, kept sorted so that set comparison is the ascending
/// tuple order.
pub type PSet = BTreeSet<Pid>;

/// A processor's view of the quorum configuration.
#[derive(Clone, PartialEq, Eq, Hash)]
pub enum ConfigValue {
    /// A concrete processor set. The empty set is representable because a
    /// transient fault can put it there; it is always treated as stale.
    Set(PSet),
    /// Reset in progress.
    Bottom,
    /// Not a participant.
    Hash,
}

impl ConfigValue {
    pub fn set(&self) -> Option<&PSet> {
        match self {
            ConfigValue::Set(s) => Some(s),
            _ => None,
        }
    }

    pub fn is_hash(&self) -> bool {
        matches!(self, ConfigValue::Hash)
    }

    pub fn is_bottom(&self) -> bool {
        matches!(self, ConfigValue::Bottom)
    }

    /// `Bottom` or the empty set.
    pub fn is_void(&self) -> bool {
        match self {
            ConfigValue::Bottom => true,
            ConfigValue::Set(s) => s.is_empty(),
            ConfigValue::Hash => false,
        }
    }

    pub fn from_ids<I: IntoIterator<Item = Pid>>(ids: I) -> Self {
        ConfigValue::Set(ids.into_iter().collect())
    }

    fn rank(&self) -> u8 {
        match self {
            ConfigValue::Bottom => 0,
            ConfigValue::Set(_) => 1,
            ConfigValue::Hash => 2,
        }
    }
}

impl Ord for ConfigValue {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (ConfigValue::Set(a), ConfigValue::Set(b)) => a.cmp(b),
            _ => self.rank().cmp(&other.rank()),
        }
    }
}

impl PartialOrd for ConfigValue {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Debug for ConfigValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigValue::Set(s) => write!(f, "{:?}", s),
            ConfigValue::Bottom => f.write_str("⊥"),
            ConfigValue::Hash => f.write_str("#"),
        }
    }
}

/// Replacement notification `⟨phase, set⟩`. `set == None` is the null value.
///
/// The derived order is phase first, then the set as an ascending tuple,
/// with the null set below every concrete set.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Proposal {
    pub phase: u8,
    pub set: Option<PSet>,
}

impl Proposal {
    /// `⟨0, ⊥⟩`.
    pub const fn default_ntf() -> Self {
        Proposal { phase: 0, set: None }
    }

    pub fn new(phase: u8, set: PSet) -> Self {
        Proposal { phase, set: Some(set) }
    }

    pub fn is_default(&self) -> bool {
        self.phase == 0 && self.set.is_none()
    }
}

impl Default for Proposal {
    fn default() -> Self {
        Proposal::default_ntf()
    }
}

impl fmt::Debug for Proposal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.set {
            Some(s) => write!(f, "⟨{},{:?}⟩", self.phase, s),
            None => write!(f, "⟨{},⊥⟩", self.phase),
        }
    }
}

/// Three-way comparison for partial orders.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PartialCmp {
    Less,
    Equal,
    Greater,
    Incomparable,
}

/// Builds a [`PSet`] from a slice; handy in tests and scenario code.
pub fn pset(ids: &[Pid]) -> PSet {
    ids.iter().copied().collect()
}

/// `⌊|s|/2⌋ + 1`.
pub fn majority(n: usize) -> usize {
    n / 2 + 1
}
