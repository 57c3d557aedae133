use std::collections::BTreeMap;

use proptest::prelude::*;
use reconf_core::counter::Counter;
use reconf_core::labeling::{next_label, EpochLabel, Pair, Sizing};
use reconf_core::recsa::{Recsa, RecsaMsg};
use reconf_core::{ConfigValue, PSet, Pid, Proposal};

fn label() -> impl Strategy<Value = EpochLabel> {
    (1u32..4, 1u32..12, prop::collection::btree_set(1u32..12, 0..5))
        .prop_map(|(c, s, a)| EpochLabel::new(c, s, a))
}

proptest! {
    #[test]
    fn label_order_is_strict(a in label(), b in label()) {
        prop_assert!(!a.precedes(&a));
        prop_assert!(!(a.precedes(&b) && b.precedes(&a)));
    }

    #[test]
    fn creator_decides_across_creators(a in label(), b in label()) {
        if a.creator < b.creator {
            prop_assert!(a.precedes(&b));
        }
        if a.creator == b.creator {
            let want = b.anti.contains(&a.sting) && !a.anti.contains(&b.sting);
            prop_assert_eq!(a.precedes(&b), want);
        }
    }

    #[test]
    fn next_label_dominates_own(stored in prop::collection::vec(label(), 0..6), v in 2usize..5) {
        let me = 2;
        let sizing = Sizing::new(v, 2 * (v - 1));
        let pairs: Vec<Pair<EpochLabel>> = stored
            .into_iter()
            .map(|l| Pair::of(EpochLabel::new(me, l.sting, l.anti.iter().copied())))
            .collect();
        let l = next_label(me, pairs.iter(), sizing.k, sizing.d).expect("domain is large enough");
        prop_assert_eq!(l.creator, me);
        for p in &pairs {
            let old = p.ml.as_ref().expect("legit pair");
            prop_assert!(old.precedes(&l), "{:?} does not precede {:?}", old, l);
        }
    }

    #[test]
    fn counter_order_matches_definition(
        a in label(), b in label(), sa in 0u64..4, sb in 0u64..4, wa in 1u32..4, wb in 1u32..4, same in any::<bool>()
    ) {
        let b = if same { a.clone() } else { b };
        let x = Counter::new(a.clone(), sa, wa);
        let y = Counter::new(b.clone(), sb, wb);
        let want = a.precedes(&b) || (a == b && (sa < sb || (sa == sb && wa < wb)));
        prop_assert_eq!(x.precedes(&y), want);
        prop_assert!(!(x.precedes(&y) && y.precedes(&x)));
    }
}

/// A set of recsa processors connected by latest-wins links.
struct Net {
    nodes: BTreeMap<Pid, Recsa>,
    inbox: BTreeMap<(Pid, Pid), RecsaMsg>,
}

impl Net {
    fn steady(n: u32) -> Self {
        let all: PSet = (1..=n).collect();
        let nodes = all.iter().map(|&p| (p, Recsa::steady(p, &all, &all))).collect();
        Net {
            nodes,
            inbox: BTreeMap::new(),
        }
    }

    fn tick(&mut self, p: Pid) -> bool {
        let r = self.nodes.get_mut(&p).expect("node").loop_iteration();
        for (to, m) in r.sends {
            self.inbox.insert((p, to), m);
        }
        r.reset.is_none()
    }

    fn deliver(&mut self, from: Pid, to: Pid) {
        if let Some(m) = self.inbox.get(&(from, to)).cloned() {
            self.nodes.get_mut(&to).expect("node").receive(from, m);
        }
    }

    fn ids(&self) -> Vec<Pid> {
        self.nodes.keys().copied().collect()
    }

    /// One activation, then every link delivered once.
    fn fair_round(&mut self) -> bool {
        let ids = self.ids();
        let mut ok = true;
        for &p in &ids {
            ok &= self.tick(p);
        }
        for &a in &ids {
            for &b in &ids {
                if a != b {
                    self.deliver(a, b);
                }
            }
        }
        ok
    }

    /// Degree spread among processors holding a non-default proposal.
    fn max_degree_gap(&self) -> u8 {
        let ds: Vec<u8> = self
            .nodes
            .iter()
            .filter(|(_, r)| *r.own_prp() != Proposal::default_ntf())
            .map(|(&p, r)| r.degree(p))
            .collect();
        ds.iter().max().copied().unwrap_or(0) - ds.iter().min().copied().unwrap_or(0)
    }
}

/// A step of an arbitrary schedule: activate a node, or deliver a link.
fn schedule(n: u32) -> impl Strategy<Value = Vec<(bool, Pid, Pid)>> {
    prop::collection::vec((any::<bool>(), 1..=n, 1..=n), 0..400)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn closure_from_steady_state(n in 3u32..6, sched in schedule(5)) {
        let mut net = Net::steady(n);
        let conf = ConfigValue::Set((1..=n).collect());
        for (act, a, b) in sched {
            let (a, b) = (a.min(n), b.min(n));
            if act {
                prop_assert!(net.tick(a), "reset at node {}", a);
            } else if a != b {
                net.deliver(a, b);
            }
            for (p, r) in &net.nodes {
                prop_assert!(r.detect_stale().is_empty(), "node {} stale", p);
                prop_assert_eq!(r.own_config(), &conf);
            }
        }
    }

    #[test]
    fn one_estab_installs_everywhere(n in 3u32..6, by in 1u32..6, sched in schedule(5)) {
        let mut net = Net::steady(n);
        let by = by.min(n);
        let target: PSet = (1..n).collect();
        prop_assert!(net.nodes.get_mut(&by).expect("node").estab(target.clone()));
        for (act, a, b) in sched {
            let (a, b) = (a.min(n), b.min(n));
            if act {
                prop_assert!(net.tick(a), "reset at node {}", a);
            } else if a != b {
                net.deliver(a, b);
            }
            prop_assert!(net.max_degree_gap() <= 1);
        }
        let mut rounds = 0;
        let want = ConfigValue::Set(target);
        while !net.nodes.values().all(|r| r.own_config() == &want && *r.own_prp() == Proposal::default_ntf()) {
            prop_assert!(net.fair_round(), "reset during fair suffix");
            prop_assert!(net.max_degree_gap() <= 1);
            rounds += 1;
            prop_assert!(rounds < 200, "no convergence");
        }
    }
}
