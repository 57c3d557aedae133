//! Builds a simulation from a scenario and runs its script.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use reconf_core::fd::FdMode;
use reconf_core::PSet;
use reconf_netsim::{Simulation, Trace};

use crate::faults;
use crate::node::Node;
use crate::notes::Ev;
use crate::scenario::{Action, Scenario, Start};

pub struct Run {
    pub trace: Trace<Ev>,
    pub steps: u64,
    /// Packets placed in channels by fault injection.
    pub injected: usize,
    /// Live processors at the end.
    pub live: PSet,
}

pub fn build(sc: &Scenario) -> Simulation<Node> {
    let mut sim = Simulation::new(sc.sim.clone());
    let present: PSet = sc.nodes.iter().copied().filter(|p| !sc.absent.contains(p)).collect();
    for &p in &sc.nodes {
        let params = sc.params_for(p);
        let node = if sc.start == Start::Steady && present.contains(&p) {
            Node::steady(p, params, &sc.config, &present)
        } else {
            Node::new(p, params)
        };
        sim.add(p, node, present.contains(&p));
    }
    sim.start();
    sim
}

fn apply(sim: &mut Simulation<Node>, rng: &mut ChaCha8Rng, fd_mode: &mut FdMode, action: &Action) {
    let note = |sim: &mut Simulation<Node>, p, s: String| sim.note(p, Ev::Script(s));
    match action {
        Action::Crash(ps) => {
            for &p in ps {
                let _ = sim.crash(p);
            }
        }
        Action::CrashCoordinator => {
            let crd = sim
                .live()
                .into_iter()
                .filter(|&p| sim.process(p).is_some_and(|n| n.vs.crd == Some(p)))
                .max();
            match crd {
                Some(p) => {
                    note(sim, p, format!("coordinator {p}"));
                    let _ = sim.crash(p);
                }
                None => note(sim, 0, "no coordinator".into()),
            }
        }
        Action::Join(ps) => {
            for &p in ps {
                let _ = sim.join(p);
            }
        }
        Action::Inject { fault, nodes } => {
            let targets = if nodes.is_empty() {
                sim.live().into_iter().collect()
            } else {
                nodes.clone()
            };
            faults::inject(sim, rng, *fault, &targets);
            note(sim, targets[0], format!("inject {fault:?} {targets:?}"));
        }
        Action::Estab { node, set } => {
            let Some(n) = sim.process_mut(*node) else {
                return;
            };
            let effective = n.recsa.estab(set.clone());
            sim.note(
                *node,
                Ev::Estab {
                    cause: None,
                    set: set.clone(),
                    effective,
                },
            );
        }
        Action::Eval { nodes, on } => {
            for &p in nodes {
                if let Some(n) = sim.process_mut(p) {
                    n.eval_forced = *on;
                }
            }
        }
        Action::Fd(m) => {
            *fd_mode = *m;
            for p in sim.ids() {
                if let Some(n) = sim.process_mut(p) {
                    n.fd.set_mode(*m);
                }
            }
            note(sim, 0, format!("fd {m:?}"));
        }
        Action::Admit { nodes, on } => {
            for &p in nodes {
                if let Some(n) = sim.process_mut(p) {
                    n.admit = *on;
                }
            }
        }
    }
}

/// A scenario in progress.
pub struct Runner<'a> {
    sc: &'a Scenario,
    pub sim: Simulation<Node>,
    rng: ChaCha8Rng,
    fd_mode: FdMode,
    next: usize,
}

impl<'a> Runner<'a> {
    pub fn new(sc: &'a Scenario) -> Self {
        Runner {
            sc,
            sim: build(sc),
            rng: ChaCha8Rng::seed_from_u64(sc.sim.seed ^ 0x5eed_fa17),
            fd_mode: sc.fd_mode,
            next: 0,
        }
    }

    /// Applies due script events and takes one step. False once the budget
    /// is spent.
    pub fn step(&mut self) -> bool {
        let now = self.sim.step_no();
        let events = &self.sc.events;
        while self.next < events.len() && events[self.next].step <= now {
            apply(&mut self.sim, &mut self.rng, &mut self.fd_mode, &events[self.next].action);
            self.next += 1;
        }
        if self.fd_mode == FdMode::Admissible {
            let live = self.sim.live();
            for &p in &live {
                if let Some(n) = self.sim.process_mut(p) {
                    n.fd.set_exact(live.clone());
                }
            }
        }
        self.sim.step().is_ok()
    }

    pub fn finish(self) -> Run {
        let live = self.sim.live();
        let steps = self.sim.step_no();
        let injected = self.sim.injected();
        Run {
            trace: self.sim.into_trace(),
            steps,
            injected,
            live,
        }
    }
}

/// Runs the scenario to its step budget.
pub fn run(sc: &Scenario) -> Run {
    let mut r = Runner::new(sc);
    while r.step() {}
    r.finish()
}
