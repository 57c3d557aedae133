//! Scenario files.
//!
//! ```toml
//! name = "brute-force-recovery"
//! nodes = [1, 2, 3, 4]
//! cap = 2
//! budget = 10000
//! start = "steady"
//! config = [1, 2, 3, 4]
//! checkers = ["convergence"]
//!
//! [[event]]
//! step = 0
//! action = "inject"
//! fault = "arbitrary"
//! ```

use std::collections::BTreeSet;

use reconf_core::fd::{FdMode, DEFAULT_GAP_FACTOR};
use reconf_core::recma::TriggerMode;
use reconf_core::recsa::DEFAULT_COLLAPSE_AFTER;
use reconf_core::{PSet, Pid};
use reconf_netsim::{DropPolicy, SimConfig};
use serde::Deserialize;
use thiserror::Error;
use toml::Spanned;

use crate::checkers::CHECKERS;
use crate::node::{EvalRule, NodeParams};

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("{0}")]
    Parse(String),
    #[error("line {line}: {msg}")]
    Invalid { line: usize, msg: String },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: String,
    nodes: Spanned<Vec<Pid>>,
    #[serde(default)]
    absent: Option<Spanned<Vec<Pid>>>,
    n_bound: Option<usize>,
    #[serde(default = "d_cap")]
    cap: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default = "d_budget")]
    budget: u64,
    #[serde(default = "d_window")]
    fairness_window: u64,
    #[serde(default = "d_fd")]
    fd: String,
    #[serde(default = "d_gap")]
    gap_factor: f64,
    #[serde(default = "d_b")]
    b: u32,
    #[serde(default = "d_loss")]
    loss: f64,
    #[serde(default = "d_dup")]
    dup: f64,
    #[serde(default = "d_reorder")]
    reorder: usize,
    #[serde(default = "d_drop")]
    drop: String,
    #[serde(default = "d_start")]
    start: String,
    config: Option<Spanned<Vec<Pid>>>,
    #[serde(default)]
    layers: Vec<String>,
    #[serde(default = "d_mode")]
    mode: String,
    #[serde(default = "d_collapse")]
    collapse_after: u32,
    checkers: Option<Spanned<Vec<String>>>,
    eval: Option<RawEval>,
    workload: Option<RawWorkload>,
    #[serde(default, rename = "event")]
    events: Vec<Spanned<RawEvent>>,
}

fn d_cap() -> usize {
    2
}
fn d_budget() -> u64 {
    10_000
}
fn d_window() -> u64 {
    64
}
fn d_fd() -> String {
    "admissible".into()
}
fn d_gap() -> f64 {
    DEFAULT_GAP_FACTOR
}
fn d_b() -> u32 {
    16
}
fn d_loss() -> f64 {
    0.05
}
fn d_dup() -> f64 {
    0.02
}
fn d_reorder() -> usize {
    2
}
fn d_drop() -> String {
    "new".into()
}
fn d_start() -> String {
    "steady".into()
}
fn d_mode() -> String {
    "prediction".into()
}
fn d_collapse() -> u32 {
    DEFAULT_COLLAPSE_AFTER
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEval {
    rule: String,
    #[serde(default)]
    fraction: f64,
    #[serde(default)]
    from: u64,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawWorkload {
    #[serde(default)]
    inputs: u32,
    #[serde(default)]
    increments: u32,
    #[serde(default)]
    inc_nodes: Vec<Pid>,
    #[serde(default)]
    inc_from: u64,
    #[serde(default)]
    inc_gap: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEvent {
    step: u64,
    action: String,
    node: Option<Pid>,
    #[serde(default)]
    nodes: Vec<Pid>,
    set: Option<Vec<Pid>>,
    fault: Option<String>,
    mode: Option<String>,
    value: Option<u64>,
    on: Option<bool>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Start {
    /// Quiet participants of `config`.
    Steady,
    /// Freshly booted non-participants.
    Boot,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Random recsa, recma and label state, and full channels.
    Arbitrary,
    /// Random management flags at nodes and in channels.
    CorruptFlags,
    /// `config[i] = ∅` at the node.
    EmptyConfig,
    /// Marked values in application state, labels and counters.
    Taint,
    /// Random label queues and maxima.
    Labels,
    /// Every stored counter moved to this sequence number.
    BumpCounters(u64),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Action {
    Crash(Vec<Pid>),
    /// Crashes whichever live node currently coordinates the view.
    CrashCoordinator,
    Join(Vec<Pid>),
    Inject { fault: Fault, nodes: Vec<Pid> },
    Estab { node: Pid, set: PSet },
    /// Forces `evalConf()` on or off, or back to the rule.
    Eval { nodes: Vec<Pid>, on: Option<bool> },
    Fd(FdMode),
    Admit { nodes: Vec<Pid>, on: bool },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScriptEvent {
    pub step: u64,
    pub line: usize,
    pub action: Action,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Workload {
    pub inputs: u32,
    pub increments: u32,
    pub inc_nodes: PSet,
    pub inc_from: u64,
    pub inc_gap: u64,
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub nodes: Vec<Pid>,
    pub absent: PSet,
    pub n_bound: usize,
    pub sim: SimConfig,
    pub fd_mode: FdMode,
    pub gap_factor: f64,
    pub b: u32,
    pub start: Start,
    pub config: PSet,
    pub labels: bool,
    pub vs: bool,
    pub mode: TriggerMode,
    pub collapse_after: u32,
    pub eval: EvalRule,
    pub workload: Workload,
    pub events: Vec<ScriptEvent>,
    pub checkers: Vec<String>,
}

struct Lines<'a>(&'a str);

impl Lines<'_> {
    fn of(&self, offset: usize) -> usize {
        self.0[..offset.min(self.0.len())].matches('\n').count() + 1
    }
}

fn invalid(line: usize, msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        line,
        msg: msg.into(),
    }
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Scenario, ScenarioError> {
        let raw: RawScenario = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        let lines = Lines(text);
        let nodes_line = lines.of(raw.nodes.span().start);
        let nodes: Vec<Pid> = raw.nodes.get_ref().clone();
        if nodes.is_empty() {
            return Err(invalid(nodes_line, "no nodes declared"));
        }
        let declared: BTreeSet<Pid> = nodes.iter().copied().collect();
        if declared.len() != nodes.len() {
            return Err(invalid(nodes_line, "duplicate node id"));
        }
        let check = |ids: &[Pid], line: usize| -> Result<(), ScenarioError> {
            match ids.iter().find(|p| !declared.contains(p)) {
                Some(p) => Err(invalid(line, format!("undeclared node {p}"))),
                None => Ok(()),
            }
        };
        let absent: PSet = match &raw.absent {
            Some(a) => {
                check(a.get_ref(), lines.of(a.span().start))?;
                a.get_ref().iter().copied().collect()
            }
            None => PSet::new(),
        };
        let config: PSet = match &raw.config {
            Some(c) => {
                check(c.get_ref(), lines.of(c.span().start))?;
                c.get_ref().iter().copied().collect()
            }
            None => declared.iter().copied().filter(|p| !absent.contains(p)).collect(),
        };
        let fd_mode = match raw.fd.as_str() {
            "admissible" => FdMode::Admissible,
            "unreliable" => FdMode::Unreliable,
            o => return Err(ScenarioError::Parse(format!("unknown fd mode {o:?}"))),
        };
        let drop_policy = match raw.drop.as_str() {
            "new" => DropPolicy::DropNew,
            "old" => DropPolicy::DropOld,
            o => return Err(ScenarioError::Parse(format!("unknown drop policy {o:?}"))),
        };
        let start = match raw.start.as_str() {
            "steady" => Start::Steady,
            "boot" => Start::Boot,
            o => return Err(ScenarioError::Parse(format!("unknown start {o:?}"))),
        };
        let mode = match raw.mode.as_str() {
            "prediction" => TriggerMode::Prediction,
            "coordinator" => TriggerMode::CoordinatorLed,
            o => return Err(ScenarioError::Parse(format!("unknown trigger mode {o:?}"))),
        };
        let mut labels = false;
        let mut vs = false;
        for l in &raw.layers {
            match l.as_str() {
                "labels" => labels = true,
                "vs" => vs = true,
                o => return Err(ScenarioError::Parse(format!("unknown layer {o:?}"))),
            }
        }
        let eval = match raw.eval {
            None => EvalRule::Never,
            Some(e) => match e.rule.as_str() {
                "never" => EvalRule::Never,
                "always" => EvalRule::Always { from: e.from },
                "live_below" => EvalRule::LiveBelow {
                    fraction: e.fraction,
                    from: e.from,
                },
                o => return Err(ScenarioError::Parse(format!("unknown eval rule {o:?}"))),
            },
        };
        let w = raw.workload.unwrap_or_default();
        let checkers = match raw.checkers {
            Some(c) => {
                let line = lines.of(c.span().start);
                if let Some(bad) = c.get_ref().iter().find(|c| !CHECKERS.contains(&c.as_str())) {
                    return Err(invalid(line, format!("unknown checker {bad:?}")));
                }
                c.into_inner()
            }
            None => Vec::new(),
        };
        check(&w.inc_nodes, 1)?;
        let mut events = Vec::new();
        let mut last_step = 0;
        for ev in &raw.events {
            let line = lines.of(ev.span().start);
            let e = ev.get_ref();
            if e.step < last_step {
                return Err(invalid(line, "events are not sorted by step"));
            }
            last_step = e.step;
            let mut ids = e.nodes.clone();
            ids.extend(e.node);
            if let Some(s) = &e.set {
                ids.extend(s.iter().copied());
            }
            check(&ids, line)?;
            let targets = || -> Vec<Pid> {
                let mut v = e.nodes.clone();
                v.extend(e.node);
                v
            };
            let action = match e.action.as_str() {
                "crash" => Action::Crash(targets()),
                "crash_coordinator" => Action::CrashCoordinator,
                "join" => Action::Join(targets()),
                "inject" => {
                    let fault = match e.fault.as_deref() {
                        Some("arbitrary") => Fault::Arbitrary,
                        Some("corrupt_flags") => Fault::CorruptFlags,
                        Some("empty_config") => Fault::EmptyConfig,
                        Some("taint") => Fault::Taint,
                        Some("labels") => Fault::Labels,
                        Some("bump_counters") => Fault::BumpCounters(
                            e.value.ok_or_else(|| invalid(line, "bump_counters needs value"))?,
                        ),
                        other => return Err(invalid(line, format!("unknown fault {other:?}"))),
                    };
                    Action::Inject {
                        fault,
                        nodes: targets(),
                    }
                }
                "estab" => Action::Estab {
                    node: e.node.ok_or_else(|| invalid(line, "estab needs node"))?,
                    set: e
                        .set
                        .as_ref()
                        .ok_or_else(|| invalid(line, "estab needs set"))?
                        .iter()
                        .copied()
                        .collect(),
                },
                "eval" => Action::Eval {
                    nodes: targets(),
                    on: e.on,
                },
                "fd" => Action::Fd(match e.mode.as_deref() {
                    Some("admissible") => FdMode::Admissible,
                    Some("unreliable") => FdMode::Unreliable,
                    other => return Err(invalid(line, format!("unknown fd mode {other:?}"))),
                }),
                "admit" => Action::Admit {
                    nodes: targets(),
                    on: e.on.unwrap_or(true),
                },
                o => return Err(invalid(line, format!("unknown action {o:?}"))),
            };
            events.push(ScriptEvent {
                step: e.step,
                line,
                action,
            });
        }
        let n_bound = raw.n_bound.unwrap_or(nodes.len());
        Ok(Scenario {
            name: raw.name,
            nodes,
            absent,
            n_bound,
            sim: SimConfig {
                cap: raw.cap,
                fairness_window: raw.fairness_window,
                seed: raw.seed,
                step_budget: raw.budget,
                drop_policy,
                reorder_window: raw.reorder,
                loss: raw.loss,
                dup: raw.dup,
            },
            fd_mode,
            gap_factor: raw.gap_factor,
            b: raw.b,
            start,
            config,
            labels,
            vs,
            mode,
            collapse_after: raw.collapse_after,
            eval,
            workload: Workload {
                inputs: w.inputs,
                increments: w.increments,
                inc_nodes: w.inc_nodes.into_iter().collect(),
                inc_from: w.inc_from,
                inc_gap: w.inc_gap,
            },
            events,
            checkers,
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Scenario, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScenarioError::Parse(format!("{}: {e}", path.display())))?;
        Scenario::parse(&text)
    }

    pub fn params_for(&self, p: Pid) -> NodeParams {
        let inc = self.workload.inc_nodes.contains(&p);
        NodeParams {
            n_bound: self.n_bound,
            gap_factor: self.gap_factor,
            fd_mode: self.fd_mode,
            cap: self.sim.cap,
            b: self.b,
            labels: self.labels,
            vs: self.vs,
            mode: self.mode,
            collapse_after: self.collapse_after,
            eval: self.eval,
            inputs: self.workload.inputs,
            increments: if inc { self.workload.increments } else { 0 },
            inc_from: self.workload.inc_from,
            inc_gap: self.workload.inc_gap,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.sim.seed = seed;
        self
    }
}
