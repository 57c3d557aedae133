//! Transient fault injection.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use reconf_core::counter::Counter;
use reconf_core::labeling::{EpochLabel, Pair};
use reconf_core::recma::RecmaMsg;
use reconf_core::recsa::{Echo, RecsaMsg};
use reconf_core::vssmr::MsgId;
use reconf_core::{ConfigValue, PSet, Pid, Proposal};
use reconf_netsim::{Packet, PacketKind, Simulation};

use crate::node::{Bundle, Node, TAINT};
use crate::scenario::Fault;

/// Foreign creator ids used in random labels.
const STRANGERS: [Pid; 2] = [90, 91];

fn subset(rng: &mut ChaCha8Rng, ids: &[Pid]) -> PSet {
    ids.iter().copied().filter(|_| rng.gen_bool(0.5)).collect()
}

fn config(rng: &mut ChaCha8Rng, ids: &[Pid]) -> ConfigValue {
    match rng.gen_range(0..4) {
        0 => ConfigValue::Hash,
        1 => ConfigValue::Bottom,
        _ => ConfigValue::Set(subset(rng, ids)),
    }
}

fn proposal(rng: &mut ChaCha8Rng, ids: &[Pid]) -> Proposal {
    let phase = rng.gen_range(0..3);
    let set = rng.gen_bool(0.7).then(|| subset(rng, ids));
    Proposal { phase, set }
}

fn label(rng: &mut ChaCha8Rng, ids: &[Pid]) -> EpochLabel {
    let creator = if rng.gen_bool(0.3) {
        *STRANGERS.choose(rng).expect("non-empty")
    } else {
        *ids.choose(rng).expect("non-empty")
    };
    let sting = rng.gen_range(1..64);
    let anti: Vec<u32> = (0..rng.gen_range(0..6)).map(|_| rng.gen_range(1..64)).collect();
    EpochLabel::new(creator, sting, anti)
}

fn label_pair(rng: &mut ChaCha8Rng, ids: &[Pid]) -> Pair<EpochLabel> {
    let ml = rng.gen_bool(0.8).then(|| label(rng, ids));
    let cl = rng.gen_bool(0.3).then(|| label(rng, ids));
    Pair { ml, cl }
}

fn recsa_msg(rng: &mut ChaCha8Rng, ids: &[Pid]) -> RecsaMsg {
    RecsaMsg {
        fd: subset(rng, ids),
        part: subset(rng, ids),
        config: config(rng, ids),
        prp: proposal(rng, ids),
        all: rng.gen_bool(0.5),
        echo: Echo {
            part: subset(rng, ids),
            prp: proposal(rng, ids),
            all: rng.gen_bool(0.5),
        },
    }
}

fn bundle(rng: &mut ChaCha8Rng, ids: &[Pid], labels: bool, flags_only: bool) -> Bundle {
    let mut b = Bundle {
        recma: Some(RecmaMsg {
            no_maj: rng.gen_bool(0.5),
            need_reconf: rng.gen_bool(0.5),
        }),
        ..Bundle::default()
    };
    if !flags_only {
        b.recsa = Some(recsa_msg(rng, ids));
        if labels {
            b.label = Some((label_pair(rng, ids), label_pair(rng, ids)));
        }
    }
    b
}

/// Fills every channel between `targets` and anyone else. Tokens carry the
/// link's current nonce so that they can reach the receiver.
fn fill_channels(sim: &mut Simulation<Node>, rng: &mut ChaCha8Rng, targets: &[Pid], labels: bool, flags_only: bool) {
    let ids = sim.ids();
    let cap = sim.cfg.cap;
    for &a in &ids {
        for &b in &ids {
            if a == b || !(targets.contains(&a) || targets.contains(&b)) {
                continue;
            }
            let epoch = sim.link(a.max(b), a.min(b)).map_or(0, |l| l.epoch);
            let kind = if a > b { PacketKind::Token } else { PacketKind::Ack };
            let pkts = (0..cap)
                .map(|_| Packet {
                    src: a,
                    dst: b,
                    kind,
                    epoch,
                    seq: rng.gen_range(0..4),
                    payload: Some(bundle(rng, &ids, labels, flags_only)),
                })
                .collect();
            sim.inject_channel(a, b, pkts).expect("within capacity");
        }
    }
}

pub fn inject(sim: &mut Simulation<Node>, rng: &mut ChaCha8Rng, fault: Fault, targets: &[Pid]) {
    let ids = sim.ids();
    match fault {
        Fault::Arbitrary => {
            let labels = sim.process(ids[0]).is_some_and(|n| n.labels.is_some());
            for (n, &p) in targets.iter().enumerate() {
                let node = sim.process_mut(p).expect("declared");
                let r = &mut node.recsa;
                for &k in &ids {
                    r.config.insert(k, config(rng, &ids));
                    r.prp.insert(k, proposal(rng, &ids));
                    r.all.insert(k, rng.gen_bool(0.5));
                    if k != p {
                        r.fd.insert(k, subset(rng, &ids));
                        r.part.insert(k, subset(rng, &ids));
                        r.echo.insert(
                            k,
                            Echo {
                                part: subset(rng, &ids),
                                prp: proposal(rng, &ids),
                                all: rng.gen_bool(0.5),
                            },
                        );
                    }
                }
                r.all_seen = subset(rng, &ids);
                // At least one processor holds an empty configuration, so
                // that the state is stale.
                if n == 0 {
                    r.config.insert(p, ConfigValue::Set(PSet::new()));
                }
                for &k in &ids {
                    node.recma.no_maj.insert(k, rng.gen_bool(0.5));
                    node.recma.need_reconf.insert(k, rng.gen_bool(0.5));
                }
                if let Some(ls) = node.labels.as_mut() {
                    scramble_labels(ls, rng, &ids);
                    node.labels_scrambled();
                }
            }
            fill_channels(sim, rng, targets, labels, false);
        }
        Fault::CorruptFlags => {
            for &p in targets {
                let node = sim.process_mut(p).expect("declared");
                for &k in &ids {
                    node.recma.no_maj.insert(k, rng.gen_bool(0.7));
                    node.recma.need_reconf.insert(k, rng.gen_bool(0.7));
                }
            }
            fill_channels(sim, rng, targets, false, true);
        }
        Fault::EmptyConfig => {
            for &p in targets {
                let node = sim.process_mut(p).expect("declared");
                node.recsa.config.insert(p, ConfigValue::Set(PSet::new()));
            }
        }
        Fault::Taint => {
            for &p in targets {
                let node = sim.process_mut(p).expect("declared");
                node.vs.own.state.push(MsgId { origin: TAINT, seq: 0 });
                let tl = EpochLabel::new(TAINT, 1, []);
                let ct = Counter::new(tl.clone(), 3, TAINT);
                node.counters.store.max.insert(p, Pair::of(ct));
                if let Some(ls) = node.labels.as_mut() {
                    ls.max.insert(p, Pair::of(tl));
                }
            }
        }
        Fault::Labels => {
            for &p in targets {
                let node = sim.process_mut(p).expect("declared");
                if let Some(ls) = node.labels.as_mut() {
                    scramble_labels(ls, rng, &ids);
                    node.labels_scrambled();
                }
            }
        }
        Fault::BumpCounters(v) => {
            for &p in targets {
                let node = sim.process_mut(p).expect("declared");
                let st = &mut node.counters.store;
                let bump = |lp: &mut Pair<Counter>| {
                    if let Some(c) = lp.ml.as_mut() {
                        c.seqn = c.seqn.max(v);
                    }
                };
                st.max.values_mut().for_each(bump);
                st.queues.values_mut().flatten().for_each(bump);
            }
        }
    }
}

fn scramble_labels(ls: &mut reconf_core::labeling::LabelStore, rng: &mut ChaCha8Rng, ids: &[Pid]) {
    for &k in ids {
        ls.max.insert(k, label_pair(rng, ids));
        let q = ls.queues.entry(k).or_default();
        q.clear();
        for _ in 0..rng.gen_range(0..4) {
            q.push_back(label_pair(rng, ids));
        }
    }
}
