use std::path::PathBuf;

use proptest::prelude::*;
use reconf_core::counter::Counter;
use reconf_core::labeling::EpochLabel;
use reconf_core::PSet;
use reconf_harness::notes::Ev;
use reconf_harness::{check, run, Run, Scenario};
use reconf_netsim::{Event, EventKind, Note, Trace};

fn minimal() -> Scenario {
    Scenario::parse("name = \"synthetic\"\nnodes = [1, 2, 3]\n").expect("minimal scenario")
}

fn bundled(name: &str) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(format!("{name}.toml"));
    Scenario::load(&path).expect("bundled scenario")
}

fn synthetic(notes: Vec<(u64, u32, Ev)>) -> Run {
    let events = notes
        .into_iter()
        .map(|(step, proc, ev)| Event {
            step,
            proc,
            kind: EventKind::Note(ev.kind()),
            digest: String::new(),
            note: Some(ev),
        })
        .collect();
    Run {
        trace: Trace { events },
        steps: 0,
        injected: 0,
        live: PSet::new(),
    }
}

fn ct(seqn: u64, wid: u32) -> Counter {
    Counter::new(EpochLabel::new(3, 7, [1, 2]), seqn, wid)
}

/// One increment: node, sid, start step, completion step and counter.
type Inc = (u32, u64, u64, Option<(u64, Counter)>);

fn increments(incs: &[Inc]) -> Run {
    let mut notes = Vec::new();
    for (node, sid, start, done) in incs {
        notes.push((*start, *node, Ev::IncStart { sid: *sid, member: true }));
        if let Some((at, c)) = done {
            notes.push((*at, *node, Ev::IncDone { sid: *sid, ct: c.clone() }));
        }
    }
    notes.sort_by_key(|n| n.0);
    synthetic(notes)
}

#[test]
fn equal_sequential_counters_fail_with_both_records() {
    let run = increments(&[(1, 1, 10, Some((20, ct(5, 1)))), (2, 1, 30, Some((40, ct(5, 1))))]);
    let v = check("counter-monotone", &minimal(), &run).expect("known checker");
    assert!(!v.pass);
    let w = v.witness.expect("witness");
    assert!(w.contains("node 1 finished"), "{w}");
    assert!(w.contains("at 20"), "{w}");
    assert!(w.contains("node 2 started at 30"), "{w}");
    assert_eq!(w.matches("⟨⟨").count(), 2, "{w}");
    assert_eq!(v.measured["violations"], 1);
}

#[test]
fn increasing_counters_pass() {
    let run = increments(&[
        (1, 1, 10, Some((20, ct(5, 1)))),
        (2, 1, 30, Some((40, ct(6, 2)))),
        (1, 2, 50, Some((60, ct(6, 3)))),
    ]);
    let v = check("counter-monotone", &minimal(), &run).expect("known checker");
    assert!(v.pass, "{v}");
    assert_eq!(v.measured["ordered_pairs"], 3);
}

#[test]
fn overlapping_and_aborted_calls_are_not_compared() {
    let run = increments(&[
        (1, 1, 10, Some((40, ct(5, 1)))),
        // Starts before the first completes.
        (2, 1, 30, Some((50, ct(5, 1)))),
        // Never completes.
        (3, 1, 45, None),
    ]);
    let v = check("counter-monotone", &minimal(), &run).expect("known checker");
    assert!(v.pass, "{v}");
    assert_eq!(v.measured["ordered_pairs"], 0);
    assert_eq!(v.measured["completed"], 2);
}

#[test]
fn no_completion_fails() {
    let run = increments(&[(1, 1, 10, None)]);
    let v = check("counter-monotone", &minimal(), &run).expect("known checker");
    assert!(!v.pass);
}

#[test]
fn conflict_freedom_passes_on_converged_trace() {
    let sc = bundled("brute-force-recovery").with_seed(0);
    let r = run(&sc);
    let v = check("conflict-freedom", &sc, &r).expect("known checker");
    assert!(v.pass, "{v}");
    assert!(v.measured["states"] > 0);
}

#[test]
fn trigger_bound_instantiates_formula() {
    let sc = bundled("recma-corrupt-flags").with_seed(2);
    assert_eq!((sc.nodes.len(), sc.sim.cap), (4, 2));
    let r = run(&sc);
    let v = check("trigger-bound", &sc, &r).expect("known checker");
    assert!(v.pass, "{v}");
    assert_eq!(v.measured["bound"], 4 * (1 + 2 * 4));
    assert_eq!(v.measured["bound"], 36);
}

#[test]
fn checking_twice_gives_the_same_verdicts() {
    let sc = bundled("join-basic").with_seed(4);
    let r = run(&sc);
    let a = reconf_harness::check_all(&sc, &r);
    let b = reconf_harness::check_all(&sc, &r);
    assert_eq!(a, b);
}

#[test]
fn unknown_checker_is_none() {
    assert!(check("nope", &minimal(), &synthetic(Vec::new())).is_none());
}

proptest! {
    /// Violation count matches a direct count over all sequential pairs
    /// when counters share one label, where the order is on (seqn, wid).
    #[test]
    fn monotone_violations_match_oracle(
        calls in prop::collection::vec((1u32..4, 0u64..20, 1u64..20, 0u64..6, 1u32..4, any::<bool>()), 1..12)
    ) {
        let mut incs: Vec<Inc> = Vec::new();
        for (i, (node, start, len, seqn, wid, done)) in calls.iter().enumerate() {
            let start = start * 10 + i as u64;
            let fin = done.then(|| (start + len * 10, ct(*seqn, *wid)));
            incs.push((*node, i as u64, start, fin));
        }
        let mut oracle = 0u64;
        let mut pairs = 0u64;
        for a in &incs {
            for b in &incs {
                if let (Some((da, ca)), Some(_)) = (&a.3, &b.3) {
                    if *da < b.2 {
                        pairs += 1;
                        let cb = &b.3.as_ref().expect("completed").1;
                        if (ca.seqn, ca.wid) >= (cb.seqn, cb.wid) {
                            oracle += 1;
                        }
                    }
                }
            }
        }
        let v = check("counter-monotone", &minimal(), &increments(&incs)).expect("known checker");
        prop_assert_eq!(v.measured["ordered_pairs"], pairs);
        prop_assert_eq!(v.measured.get("violations").copied().unwrap_or(0), oracle);
        let any_done = incs.iter().any(|i| i.3.is_some());
        prop_assert_eq!(v.pass, oracle == 0 && any_done);
    }
}
