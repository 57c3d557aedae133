//! Reconfiguration management.
//!
//! Decides when to replace the configuration: either a majority of the
//! configuration has collapsed and every processor in the core agrees, or
//! the prediction function asks for it at a majority. The coordinator-led
//! variant replaces the prediction test with a single flag supplied by the
//! replication layer.

use std::collections::BTreeMap;

use crate::recsa::Recsa;
use crate::types::{majority, ConfigValue, PSet, Pid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TriggerCause {
    Collapse,
    Prediction,
}

/// Which test guards the planned-replacement path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum TriggerMode {
    /// Majority of `evalConf()` readings.
    #[default]
    Prediction,
    /// The coordinator's `needDelicateReconf()`.
    CoordinatorLed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RecmaMsg {
    pub no_maj: bool,
    pub need_reconf: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trigger {
    pub cause: TriggerCause,
    pub set: PSet,
    /// Whether `estab` accepted the proposal.
    pub effective: bool,
}

#[derive(Clone, Debug, Default)]
pub struct RecmaReport {
    pub trigger: Option<Trigger>,
    pub flushed: bool,
    pub sends: Vec<(Pid, RecmaMsg)>,
}

#[derive(Clone, Debug)]
pub struct Recma {
    pub me: Pid,
    pub need_reconf: BTreeMap<Pid, bool>,
    pub no_maj: BTreeMap<Pid, bool>,
    pub prev_config: ConfigValue,
    pub mode: TriggerMode,
}

/// Inputs supplied by the application for one tick.
#[derive(Clone, Copy, Debug, Default)]
pub struct RecmaInputs {
    pub eval_conf: bool,
    pub need_delicate: bool,
}

impl Recma {
    pub fn new(me: Pid) -> Self {
        Recma {
            me,
            need_reconf: BTreeMap::new(),
            no_maj: BTreeMap::new(),
            prev_config: ConfigValue::Bottom,
            mode: TriggerMode::default(),
        }
    }

    fn flag(map: &BTreeMap<Pid, bool>, k: Pid) -> bool {
        map.get(&k).copied().unwrap_or(false)
    }

    /// Intersection of the participants' reported participant sets.
    pub fn core(recsa: &Recsa) -> PSet {
        let own = recsa.own_part();
        let mut acc: Option<PSet> = None;
        for &j in &own {
            let pj = if j == recsa.me {
                own.clone()
            } else {
                recsa.part.get(&j).cloned().unwrap_or_default()
            };
            acc = Some(match acc {
                None => pj,
                Some(a) => a.intersection(&pj).copied().collect(),
            });
        }
        acc.unwrap_or_default()
    }

    pub fn flush_flags(&mut self, fd: &PSet) {
        for &j in fd {
            self.need_reconf.insert(j, false);
            self.no_maj.insert(j, false);
        }
    }

    pub fn tick(&mut self, recsa: &mut Recsa, input: RecmaInputs) -> RecmaReport {
        let me = self.me;
        let mut rep = RecmaReport::default();
        let part = recsa.own_part();
        if !part.contains(&me) {
            return rep;
        }
        let fd = recsa.own_fd().clone();
        let cur = recsa.get_config();
        self.need_reconf.insert(me, false);
        self.no_maj.insert(me, false);
        if !self.prev_config.is_bottom() && self.prev_config != cur {
            self.flush_flags(&fd);
            rep.flushed = true;
        }
        if recsa.no_reco() {
            self.prev_config = cur.clone();
            if let Some(conf) = cur.set() {
                let live = conf.intersection(&fd).count();
                if live < majority(conf.len()) {
                    self.no_maj.insert(me, true);
                }
                let core = Self::core(recsa);
                let collapse = Self::flag(&self.no_maj, me)
                    && core.len() > 1
                    && core.iter().all(|&k| Self::flag(&self.no_maj, k));
                let planned = match self.mode {
                    TriggerMode::Prediction => {
                        self.need_reconf.insert(me, input.eval_conf);
                        input.eval_conf
                            && 2 * conf
                                .intersection(&fd)
                                .filter(|&&j| Self::flag(&self.need_reconf, j))
                                .count()
                                > conf.len()
                    }
                    TriggerMode::CoordinatorLed => input.need_delicate,
                };
                let cause = if collapse {
                    Some(TriggerCause::Collapse)
                } else if planned {
                    Some(TriggerCause::Prediction)
                } else {
                    None
                };
                if let Some(cause) = cause {
                    let effective = recsa.estab(part.clone());
                    self.flush_flags(&fd);
                    rep.trigger = Some(Trigger {
                        cause,
                        set: part.clone(),
                        effective,
                    });
                }
            }
        }
        let m = RecmaMsg {
            no_maj: Self::flag(&self.no_maj, me),
            need_reconf: Self::flag(&self.need_reconf, me),
        };
        for &j in part.iter().filter(|&&j| j != me) {
            rep.sends.push((j, m));
        }
        rep
    }

    pub fn receive(&mut self, recsa: &Recsa, from: Pid, m: RecmaMsg) {
        if recsa.own_part().contains(&self.me) {
            self.no_maj.insert(from, m.no_maj);
            self.need_reconf.insert(from, m.need_reconf);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::pset;

    fn with_parts(me: Pid, parts: &[(Pid, &[Pid])]) -> Recsa {
        let fd: PSet = parts.iter().map(|p| p.0).collect();
        let mut r = Recsa::steady(me, &fd, &fd);
        for &(k, p) in parts {
            if k != me {
                r.part.insert(k, pset(p));
            }
        }
        r
    }

    #[test]
    fn core_is_intersection() {
        // Own part is {1,2,3}; the peers report narrower views.
        let r = with_parts(1, &[(1, &[1, 2, 3]), (2, &[1, 2]), (3, &[1, 2, 4])]);
        assert_eq!(Recma::core(&r), pset(&[1, 2]));
    }

    #[test]
    fn core_single() {
        let r = with_parts(1, &[(1, &[1])]);
        assert_eq!(Recma::core(&r), pset(&[1]));
    }

    #[test]
    fn core_of_disjoint_snapshots_is_empty() {
        let r = with_parts(1, &[(1, &[1, 2, 3]), (2, &[4]), (3, &[5])]);
        // Oracle: fold intersection over the reported sets.
        let sets = [pset(&[1, 2, 3]), pset(&[4]), pset(&[5])];
        let oracle = sets
            .iter()
            .skip(1)
            .fold(sets[0].clone(), |a, s| a.intersection(s).copied().collect());
        assert!(oracle.is_empty());
        assert_eq!(Recma::core(&r), oracle);
    }

    #[test]
    fn minority_trusted_sets_no_maj() {
        let conf = pset(&[1, 2, 3]);
        let peers = pset(&[1, 4]);
        let mut r = Recsa::steady(1, &conf, &peers);
        let mut m = Recma::new(1);
        let rep = m.tick(&mut r, RecmaInputs::default());
        assert!(rep.trigger.is_none());
        assert_eq!(rep.sends, vec![(4, RecmaMsg { no_maj: true, need_reconf: false })]);
        m.receive(&r, 4, RecmaMsg { no_maj: true, need_reconf: false });
        let rep = m.tick(&mut r, RecmaInputs::default());
        let t = rep.trigger.unwrap();
        assert_eq!(t.cause, TriggerCause::Collapse);
        assert!(t.effective);
        assert_eq!(t.set, peers);
    }

    #[test]
    fn one_supporting_core_member_blocks_collapse() {
        let conf = pset(&[1, 2, 3]);
        let peers = pset(&[1, 4]);
        let mut r = Recsa::steady(1, &conf, &peers);
        let mut m = Recma::new(1);
        for _ in 0..5 {
            m.receive(&r, 4, RecmaMsg { no_maj: false, need_reconf: false });
            assert!(m.tick(&mut r, RecmaInputs::default()).trigger.is_none());
        }
    }

    #[test]
    fn prediction_needs_majority() {
        let conf = pset(&[1, 2, 3]);
        let mut r = Recsa::steady(1, &conf, &conf);
        let mut m = Recma::new(1);
        let on = RecmaInputs { eval_conf: true, need_delicate: false };
        assert!(m.tick(&mut r, on).trigger.is_none());
        m.receive(&r, 2, RecmaMsg { no_maj: false, need_reconf: true });
        let t = m.tick(&mut r, on).trigger.unwrap();
        assert_eq!(t.cause, TriggerCause::Prediction);
        // FD.part equals the configuration, so estab refuses.
        assert!(!t.effective);
    }

    #[test]
    fn non_participant_ignores_flags() {
        let r = Recsa::boot(7);
        let mut m = Recma::new(7);
        m.receive(&r, 2, RecmaMsg { no_maj: true, need_reconf: true });
        assert!(m.no_maj.is_empty());
    }
}
