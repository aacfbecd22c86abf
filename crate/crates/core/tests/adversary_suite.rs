//! Full-stack adversary scenarios: each strategy against a live network.

use sectornet::adversary::Strategy;
use sectornet::harness::{run_scenario, Scenario};

fn scenario(name: &str, seed: u64, strategy: Strategy, fraction: f64) -> Scenario {
    let mut s = Scenario::default();
    s.name = name.into();
    s.seed = seed;
    s.network.sectors = 10;
    s.network.nodes = 10;
    s.network.delta_ms = 20;
    s.chain.sector_size = 1 << 14;
    s.chain.block_interval_ms = 100;
    s.adversary.fraction = fraction;
    s.adversary.strategy = strategy;
    s.workload.files = 2;
    s.workload.file_size = 4000;
    s.workload.gets_per_file = 2;
    s.workload.min_heights = 4;
    s
}

fn assert_resilient(s: &Scenario) {
    let r = run_scenario(s).unwrap();
    assert!(r.byz_weight <= r.f, "{}: packed over f", s.name);
    assert_eq!(r.violations, Vec::<String>::new(), "{}", s.name);
    assert_eq!(r.success_rate, 1.0, "{}", s.name);
    assert_eq!(r.wrong_file_acceptances, 0, "{}", s.name);
    assert_eq!(r.put_success_count(), 2, "{}", s.name);
}

#[test]
fn drop_chunk_tolerated() {
    assert_resilient(&scenario("drop", 11, Strategy::DropChunk, 0.3));
}

#[test]
fn bad_retrieval_miner_retried() {
    let s = scenario("bad-rm", 12, Strategy::BadRetrieval, 0.3);
    let r = run_scenario(&s).unwrap();
    assert_eq!(r.violations, Vec::<String>::new());
    assert_eq!(r.success_rate, 1.0);
    // with byz retrieval weight some sessions need more than one try
    assert!(r.mean_tries >= 1.0);
}

#[test]
fn generation_attack_cannot_serve_discarded_chunks() {
    let s = scenario("genatk", 13, Strategy::GenerationAttack, 0.3);
    let r = run_scenario(&s).unwrap();
    assert_eq!(
        r.violations,
        Vec::<String>::new(),
        "retrieval must survive junk regeneration"
    );
    assert_eq!(r.success_rate, 1.0);
}

#[test]
fn sybil_pledges_never_gain_weight() {
    let s = scenario("sybil", 14, Strategy::SybilPledge, 0.3);
    let byz_budget = (0.3 * 10.0) as u64;
    let r = run_scenario(&s).unwrap();
    assert_eq!(r.violations, Vec::<String>::new());
    // the fake sectors never entered the table: live n excludes them
    assert!(r.n <= 10 - r.byz_weight.min(byz_budget) || r.byz_weight == 0);
    assert_eq!(r.success_rate, 1.0);
}

#[test]
fn equivocators_cannot_fork_and_get_slashed() {
    let mut s = scenario("equiv", 15, Strategy::Equivocate, 0.3);
    s.workload.min_heights = 8;
    let r = run_scenario(&s).unwrap();
    let safety: Vec<&String> = r
        .violations
        .iter()
        .filter(|v| v.starts_with("safety"))
        .collect();
    assert_eq!(safety, Vec::<&String>::new());
    assert_eq!(r.success_rate, 1.0);
    assert_eq!(r.wrong_file_acceptances, 0);
}

#[test]
fn combined_strategy_tolerated() {
    assert_resilient(&scenario("combined", 16, Strategy::Combined, 0.3));
}

#[test]
fn fuzzed_messages_do_not_crash_honest_nodes() {
    let s = scenario("fuzz", 17, Strategy::Fuzz, 0.3);
    let r = run_scenario(&s).unwrap();
    let safety: Vec<&String> = r
        .violations
        .iter()
        .filter(|v| v.starts_with("safety") || v.starts_with("verification"))
        .collect();
    assert_eq!(safety, Vec::<&String>::new());
    assert_eq!(r.success_rate, 1.0);
}

#[test]
fn over_threshold_corruption_recorded_without_wrong_files() {
    // fraction beyond 1/3: degraded service may happen, wrong files never
    let mut s = scenario("over", 18, Strategy::DropChunk, 0.4);
    s.workload.gets_per_file = 1;
    s.workload.max_get_tries = 6;
    let r = run_scenario(&s).unwrap();
    assert_eq!(r.wrong_file_acceptances, 0);
    let safety: Vec<&String> = r
        .violations
        .iter()
        .filter(|v| v.starts_with("safety") || v.starts_with("verification"))
        .collect();
    assert_eq!(safety, Vec::<&String>::new());
}
