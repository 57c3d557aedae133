use std::path::PathBuf;

use reconf_harness::{run, Scenario};

fn bundled(name: &str) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(format!("{name}.toml"));
    Scenario::load(&path).expect("bundled scenario")
}

#[test]
fn same_seed_same_trace() {
    for name in ["join-basic", "labels-arbitrary", "vs-crashes"] {
        let sc = bundled(name).with_seed(11);
        let a = run(&sc);
        let b = run(&sc);
        assert_eq!(a.trace.lines(), b.trace.lines(), "{name}");
        assert_eq!(a.trace.digest(), b.trace.digest(), "{name}");
    }
}

#[test]
fn seeds_change_the_schedule() {
    let sc = bundled("join-basic");
    let a = run(&sc.clone().with_seed(1)).trace.digest();
    let b = run(&sc.with_seed(2)).trace.digest();
    assert_ne!(a, b);
}

#[test]
fn runs_use_the_whole_budget() {
    let sc = bundled("recma-collapse").with_seed(0);
    let r = run(&sc);
    assert_eq!(r.steps, sc.sim.step_budget);
    assert_eq!(r.trace.events.last().map(|e| e.step), Some(sc.sim.step_budget));
}
