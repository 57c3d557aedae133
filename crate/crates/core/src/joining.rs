//! Joining mechanism.
//!
//! A non-participant keeps asking the trusted processors for a pass. Once a
//! majority of the current configuration has granted one while no
//! reconfiguration is running, it initializes its application state from
//! the members' replies and becomes a participant.

use std::collections::BTreeMap;

use crate::recsa::Recsa;
use crate::types::{ConfigValue, Pid};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum JoinMsg<S> {
    Join,
    Pass { pass: bool, state: S },
}

#[derive(Clone, Debug)]
pub struct JoinReport<S> {
    /// The application must reset its variables to defaults.
    pub reset_vars: bool,
    /// `participate()` succeeded. The application initializes from these
    /// member states.
    pub joined_from: Option<Vec<(Pid, S)>>,
    /// `noReco()` was false, so joining was not possible this round.
    pub blocked: bool,
    pub requests: Vec<Pid>,
}

impl<S> Default for JoinReport<S> {
    fn default() -> Self {
        JoinReport {
            reset_vars: false,
            joined_from: None,
            blocked: false,
            requests: Vec::new(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Joining<S> {
    pub me: Pid,
    pub pass: BTreeMap<Pid, bool>,
    pub state: BTreeMap<Pid, S>,
    /// Inside the non-participant branch.
    pub joining: bool,
    com_conf: Option<ConfigValue>,
}

impl<S: Clone> Joining<S> {
    pub fn new(me: Pid) -> Self {
        Joining {
            me,
            pass: BTreeMap::new(),
            state: BTreeMap::new(),
            joining: false,
            com_conf: None,
        }
    }

    /// Members currently granting a pass under `conf`.
    fn granted(&self, recsa: &Recsa, conf: &ConfigValue) -> Vec<Pid> {
        let Some(c) = conf.set() else {
            return Vec::new();
        };
        c.intersection(recsa.own_fd())
            .copied()
            .filter(|j| self.pass.get(j).copied().unwrap_or(false))
            .collect()
    }

    pub fn tick(&mut self, recsa: &mut Recsa) -> JoinReport<S> {
        let me = self.me;
        let mut rep = JoinReport::default();
        if recsa.own_part().contains(&me) {
            self.joining = false;
            return rep;
        }
        if !self.joining {
            self.joining = true;
            rep.reset_vars = true;
            self.pass.clear();
            self.state.clear();
        }
        let com = recsa.get_config();
        if self.com_conf.as_ref() != Some(&com) {
            self.pass.clear();
            self.com_conf = Some(com.clone());
        }
        let granted = self.granted(recsa, &com);
        rep.blocked = !recsa.no_reco();
        let size = com.set().map_or(0, |c| c.len());
        if size > 0 && 2 * granted.len() > size {
            if !rep.blocked {
                let states: Vec<(Pid, S)> = granted
                    .iter()
                    .filter_map(|j| self.state.get(j).map(|s| (*j, s.clone())))
                    .collect();
                if recsa.participate() {
                    self.joining = false;
                    rep.joined_from = Some(states);
                    return rep;
                }
            }
        }
        rep.requests = recsa
            .own_fd()
            .iter()
            .copied()
            .filter(|&j| j != me)
            .collect();
        rep
    }

    /// Member side of a `Join` request. `pass_query` and `state` come from
    /// the application.
    pub fn on_join_request(
        recsa: &Recsa,
        from: Pid,
        pass_query: bool,
        state: impl FnOnce() -> S,
    ) -> Option<JoinMsg<S>> {
        if !recsa.own_fd().contains(&from) || recsa.own_part().contains(&from) {
            return None;
        }
        if !recsa.no_reco() {
            return None;
        }
        match recsa.get_config() {
            ConfigValue::Set(c) if c.contains(&recsa.me) => Some(JoinMsg::Pass {
                pass: pass_query,
                state: state(),
            }),
            _ => None,
        }
    }

    pub fn on_pass(&mut self, recsa: &Recsa, from: Pid, pass: bool, state: S) {
        if !recsa.own_part().contains(&self.me) {
            self.pass.insert(from, pass);
            self.state.insert(from, state);
        }
    }
}
