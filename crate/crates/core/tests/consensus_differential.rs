//! Differential test: with every weight equal to one, the storage-weighted
//! engine must be trace-equivalent to the unweighted reference on the same
//! seeded message schedule — identical broadcasts, timeouts, evidence and
//! commits at every step.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, BTreeMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use sectornet::consensus::reference::RefEngine;
use sectornet::consensus::{BlockSource, ConsensusMsg, Engine, Output, Step, TimeoutConfig};
use sectornet::hash::sha256;
use sectornet::ledger::{Block, WeightTable};
use sectornet::sig::SecretKey;
use sectornet::types::MinerId;

struct DummySource;

impl BlockSource for DummySource {
    fn build_block(&mut self, height: u64, round: u32) -> Block {
        // deterministic dummy content; parent varies by round so different
        // rounds propose different blocks
        Block::new(height, sha256(&round.to_be_bytes()), MinerId(0), vec![])
    }

    fn block_valid(&mut self, _block: &Block) -> bool {
        true
    }
}

enum Ev {
    Deliver(usize, ConsensusMsg),
    Timer(usize, u64, u32, Step),
}

/// Run both engines over one seeded chaotic schedule for a single height;
/// panic on the first divergence. Returns the committed block hashes.
fn run_schedule(seed: u64, n: usize) -> Vec<sectornet::hash::Hash256> {
    let keys: Vec<SecretKey> = (1..=n as u64)
        .map(|i| SecretKey::from_seed(sha256(&[seed.to_le_bytes(), i.to_le_bytes()].concat())))
        .collect();
    let registry: BTreeMap<MinerId, sectornet::sig::PublicKey> = keys
        .iter()
        .enumerate()
        .map(|(i, sk)| (MinerId(i as u64 + 1), sk.public()))
        .collect();
    let table = WeightTable {
        weights: (1..=n as u64).map(|i| (MinerId(i), 1)).collect(),
    };
    let cfg = TimeoutConfig { delta_ms: 20 };

    let mut weighted: Vec<Engine> = (0..n)
        .map(|i| {
            Engine::new(
                MinerId(i as u64 + 1),
                keys[i].clone(),
                registry.clone(),
                cfg,
            )
        })
        .collect();
    let mut reference: Vec<RefEngine> = (0..n)
        .map(|i| {
            RefEngine::new(
                MinerId(i as u64 + 1),
                keys[i].clone(),
                registry.clone(),
                cfg,
            )
        })
        .collect();

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut queue: BinaryHeap<Reverse<(u64, u64, usize)>> = BinaryHeap::new();
    let mut events: BTreeMap<u64, Ev> = BTreeMap::new();
    let mut seq = 0u64;
    let mut now = 0u64;
    let mut commits: Vec<Option<sectornet::ledger::CommittedBlock>> = vec![None; n];

    let chaos_until = 400u64;

    let mut push = |queue: &mut BinaryHeap<Reverse<(u64, u64, usize)>>,
                    events: &mut BTreeMap<u64, Ev>,
                    seq: &mut u64,
                    at: u64,
                    ev: Ev| {
        *seq += 1;
        events.insert(*seq, ev);
        queue.push(Reverse((at, *seq, 0)));
    };

    // absorb outputs from node i, asserting both engines agreed
    macro_rules! absorb {
        ($i:expr, $outs_w:expr, $outs_r:expr) => {{
            let (i, outs_w, outs_r) = ($i, $outs_w, $outs_r);
            assert_eq!(
                outs_w, outs_r,
                "divergence at node {i} t={now} seed={seed}"
            );
            for out in outs_w {
                match out {
                    Output::Broadcast(msg) => {
                        for to in 0..n {
                            if to != i {
                                let delay = if now < chaos_until {
                                    rng.gen_range(1..=200)
                                } else {
                                    rng.gen_range(1..=20)
                                };
                                push(
                                    &mut queue,
                                    &mut events,
                                    &mut seq,
                                    now + delay,
                                    Ev::Deliver(to, msg.clone()),
                                );
                            }
                        }
                    }
                    Output::Schedule {
                        height,
                        round,
                        step,
                        delay_ms,
                    } => push(
                        &mut queue,
                        &mut events,
                        &mut seq,
                        now + delay_ms,
                        Ev::Timer(i, height, round, step),
                    ),
                    Output::Commit(cb) => commits[i] = Some(*cb),
                    Output::Evidence(_) => {}
                }
            }
        }};
    }

    let mut src = DummySource;
    for i in 0..n {
        let w = weighted[i].start_height(1, table.clone(), &mut src);
        let r = reference[i].start_height(1, table.clone(), &mut src);
        absorb!(i, w, r);
    }

    let mut processed = 0u64;
    while let Some(Reverse((at, id, _))) = queue.pop() {
        now = at;
        processed += 1;
        assert!(processed < 200_000, "schedule did not terminate");
        let ev = events.remove(&id).unwrap();
        match ev {
            Ev::Deliver(i, msg) => {
                if commits[i].is_some() {
                    continue;
                }
                let w = weighted[i].on_message(msg.clone(), &mut src);
                let r = reference[i].on_message(msg, &mut src);
                absorb!(i, w, r);
            }
            Ev::Timer(i, h, round, step) => {
                if commits[i].is_some() {
                    continue;
                }
                let w = weighted[i].on_timeout(h, round, step, &mut src);
                let r = reference[i].on_timeout(h, round, step, &mut src);
                absorb!(i, w, r);
            }
        }
        if commits.iter().all(|c| c.is_some()) {
            break;
        }
    }

    commits
        .into_iter()
        .map(|c| c.expect("all nodes commit").block.hash())
        .collect()
}

#[test]
fn weighted_engine_trace_equivalent_to_reference_on_50_schedules() {
    for seed in 0..50u64 {
        let hashes = run_schedule(seed, 4);
        // agreement as a sanity check on top of trace equality
        assert!(
            hashes.windows(2).all(|w| w[0] == w[1]),
            "conflicting commits under seed {seed}"
        );
    }
}

#[test]
fn differential_holds_for_seven_nodes() {
    for seed in 100..110u64 {
        let hashes = run_schedule(seed, 7);
        assert!(hashes.windows(2).all(|w| w[0] == w[1]));
    }
}
