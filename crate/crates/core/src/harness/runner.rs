//! Network assembly and scenario execution with safety monitors.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::adversary::{apply_strategy, Strategy};
use crate::codec::Encode;
use crate::fingerprint::{hf_encode, Fingerprint, FingerprintParams};
use crate::galois::build_generator;
use crate::hash::{derive_seed, sha256_parts, Hash256};
use crate::ledger::{
    Block, ChainConfig, LedgerState, PledgePayload, Transaction, TxPayload,
};
use crate::pos::{build_tree, challenge_index, epoch0_digest, prove, PosProof};
use crate::protocol::{
    ClientNode, MinerNode, NetParams, Node, WorkItem,
};
use crate::protocol::miner::LocalSector;
use crate::sig::SecretKey;
use crate::sim::{LinkPolicy, Network, NodeId, RunOutcome};
use crate::types::{ChunkIndex, MinerId, SectorId};
use crate::wts::{wts_keygen, wts_setup, SigningKey};

use super::metrics::{GetRow, HeightRecord, ScenarioResult};
use super::scenario::Scenario;
use super::ScenarioError;

/// Client actor id; miners use ids 1..=candidates.
pub const CLIENT_ACTOR: MinerId = MinerId(10_000);

pub struct BuiltNetwork {
    pub net: Network<Node>,
    pub cfg: Arc<NetParams>,
    pub client_node: NodeId,
    pub miner_count: usize,
    pub byz_weight: u64,
    pub byz_miners: BTreeSet<MinerId>,
    pub n_live: u64,
}

fn sector_fill(scenario_seed: u64, sector: SectorId, size: u64) -> Vec<u8> {
    let mut rng = ChaCha12Rng::from_seed(derive_seed(scenario_seed, "sector-fill", sector.0));
    let mut data = vec![0u8; size as usize];
    rand::RngCore::fill_bytes(&mut rng, &mut data);
    data
}

/// A pledge opening that cannot verify: zero leaf and zero path. Used by
/// the sybil strategy, which claims sectors it never materialized.
fn bogus_pledge(
    config: &ChainConfig,
    miner: MinerId,
    sector: SectorId,
    sk: &SecretKey,
) -> Transaction {
    let leaves = config.leaf_count();
    let depth = leaves.trailing_zeros() as usize;
    let expected = challenge_index(&epoch0_digest(sector, &config.genesis_hash), leaves);
    let proof = PosProof {
        sector,
        epoch: 0,
        leaf_index: expected,
        leaf_data: vec![0u8; config.fragment_size as usize],
        path: vec![Hash256::ZERO; depth],
    };
    Transaction::sign(
        TxPayload::Pledge(PledgePayload {
            miner,
            sector,
            root: sha256_parts(&[b"claimed-root", &sector.0.to_be_bytes()]),
            initial_proof: proof,
        }),
        miner,
        sk,
    )
}

/// Assemble the whole simulated network for a scenario: the seeded pledge
/// process, genesis block, key material, miners (with local sector data),
/// the client, and the link policy.
pub fn build_network(scenario: &Scenario) -> Result<BuiltNetwork, ScenarioError> {
    scenario.validate()?;
    let seed = scenario.seed;
    let n = scenario.network.sectors;

    // chain identity precedes the genesis block: epoch-0 challenges and the
    // fingerprint point both derive from it
    let mut core = Vec::new();
    scenario.name.as_bytes().to_vec().encode(&mut core);
    seed.encode(&mut core);
    n.encode(&mut core);
    scenario.chain.sector_size.encode(&mut core);
    scenario.chain.fragment_size.encode(&mut core);
    let genesis_hash = sha256_parts(&[b"chain-id", &core]);

    // pledge arrival: each of the n sectors lands on a uniformly drawn
    // candidate; candidates that draw nothing are removed
    let mut pledge_rng = ChaCha12Rng::from_seed(derive_seed(seed, "pledges", 0));
    let candidates = scenario.network.nodes;
    let mut sectors_of: BTreeMap<MinerId, Vec<SectorId>> = BTreeMap::new();
    for s in 1..=n {
        let owner = MinerId(pledge_rng.gen_range(1..=candidates));
        sectors_of.entry(owner).or_default().push(SectorId(s));
    }
    let miners: Vec<MinerId> = sectors_of.keys().copied().collect();

    // adversary assignment: pack shuffled miners while the budget allows
    let budget = (scenario.adversary.fraction * n as f64).floor() as u64;
    let mut adv_rng = ChaCha12Rng::from_seed(derive_seed(seed, "adversary", 0));
    let mut shuffled = miners.clone();
    for i in (1..shuffled.len()).rev() {
        let j = adv_rng.gen_range(0..=i);
        shuffled.swap(i, j);
    }
    let mut byz_miners = BTreeSet::new();
    let mut byz_weight = 0u64;
    if scenario.adversary.strategy != Strategy::Honest {
        for m in shuffled {
            let w = sectors_of[&m].len() as u64;
            if byz_weight + w <= budget {
                byz_weight += w;
                byz_miners.insert(m);
            }
            if byz_weight == budget {
                break;
            }
        }
    }

    // identities
    let mut registry = BTreeMap::new();
    let mut keys: BTreeMap<MinerId, SecretKey> = BTreeMap::new();
    for &m in miners.iter().chain([CLIENT_ACTOR].iter()) {
        let sk = SecretKey::from_seed(Hash256(derive_seed(seed, "identity", m.0)));
        registry.insert(m, sk.public());
        keys.insert(m, sk);
    }

    let config = ChainConfig {
        genesis_hash,
        sector_size: scenario.chain.sector_size,
        fragment_size: scenario.chain.fragment_size,
        pos_period: scenario.chain.pos_period,
        pos_grace: scenario.chain.pos_grace,
        registry,
    };

    // sector data and genesis pledges; sybil-corrupted miners pledge
    // nothing real
    let sybil = scenario.adversary.strategy == Strategy::SybilPledge;
    let mut local_sectors: BTreeMap<MinerId, BTreeMap<SectorId, LocalSector>> = BTreeMap::new();
    let mut pledges = Vec::new();
    for (&m, sector_ids) in &sectors_of {
        let corrupted = byz_miners.contains(&m);
        for &sid in sector_ids {
            if sybil && corrupted {
                continue;
            }
            let data = sector_fill(seed, sid, config.sector_size);
            let tree = build_tree(&data, config.fragment_size as usize).expect("sector aligned");
            let expected = challenge_index(
                &epoch0_digest(sid, &config.genesis_hash),
                tree.leaf_count(),
            );
            let proof = prove(&tree, &data, sid, 0, expected).expect("index in range");
            pledges.push(Transaction::sign(
                TxPayload::Pledge(PledgePayload {
                    miner: m,
                    sector: sid,
                    root: tree.root(),
                    initial_proof: proof,
                }),
                m,
                &keys[&m],
            ));
            local_sectors
                .entry(m)
                .or_default()
                .insert(sid, LocalSector::new(sid, data, config.fragment_size as usize));
        }
    }

    let genesis_block = Block::new(0, Hash256::ZERO, MinerId(0), pledges);
    let genesis_state = LedgerState::genesis(config.clone(), &genesis_block)
        .map_err(|e| ScenarioError::Invalid(format!("genesis failed: {e}")))?;
    let n_live = genesis_state.n();

    // threshold-signature keys over the genesis weight table
    let pp = wts_setup(128, seed).expect("128 is supported");
    let live: Vec<(MinerId, u64)> = genesis_state.weights.miners().collect();
    let wts_keys = wts_keygen(&pp, live.len(), &live).expect("weights positive");
    let (wts_vk, wts_ak) = (wts_keys.vk.clone(), wts_keys.ak.clone());
    let pp_for_keys = pp.clone();
    let signing_keys = wts_keys.signing_keys;
    let wts_sk_of = move |m: MinerId| -> SigningKey {
        match signing_keys.get(&m) {
            Some(sk) => sk.clone(),
            // unregistered key (zero-weight miner): same derivation, not
            // in the verification registry
            None => wts_keygen(&pp_for_keys, 1, &[(m, 1)]).unwrap().signing_keys[&m].clone(),
        }
    };

    // node layout: miners in id order, then the client
    let node_of: BTreeMap<MinerId, NodeId> = miners
        .iter()
        .enumerate()
        .map(|(i, &m)| (m, i))
        .chain([(CLIENT_ACTOR, miners.len())])
        .collect();
    let miner_nodes: Vec<NodeId> = (0..miners.len()).collect();
    let client_node = miners.len();

    let cfg = Arc::new(NetParams {
        chain: config.clone(),
        fp: FingerprintParams::from_genesis(&genesis_hash),
        wts_pp: pp,
        wts_vk,
        wts_ak,
        delta_ms: scenario.network.delta_ms,
        bytes_per_ms: scenario.network.bandwidth_bytes_per_ms,
        block_interval_ms: scenario.chain.block_interval_ms,
        max_block_txs: scenario.chain.max_block_txs as usize,
        wts_refresh_every: scenario.chain.wts_refresh_every,
        node_of,
        miner_nodes,
        client_nodes: vec![client_node],
    });

    let mut nodes = Vec::with_capacity(miners.len() + 1);
    for (i, &m) in miners.iter().enumerate() {
        let mut miner = MinerNode::new(
            m,
            i,
            cfg.clone(),
            keys[&m].clone(),
            wts_sk_of(m),
            genesis_state.clone(),
            local_sectors.remove(&m).unwrap_or_default(),
            derive_seed(seed, "miner-rng", m.0),
        );
        if byz_miners.contains(&m) {
            miner.adversary = Some(apply_strategy(scenario.adversary.strategy, seed, m.0));
            if sybil {
                miner.sybil_pledges = sectors_of[&m]
                    .iter()
                    .map(|&sid| bogus_pledge(&config, m, sid, &keys[&m]))
                    .collect();
            }
        }
        nodes.push(Node::Miner(Box::new(miner)));
    }

    let workload: Vec<WorkItem> = (0..scenario.workload.files)
        .map(|_| WorkItem {
            size: scenario.workload.file_size,
            gets: scenario.workload.gets_per_file,
            expiry_height: (scenario.workload.file_expiry > 0)
                .then_some(scenario.workload.file_expiry),
        })
        .collect();
    nodes.push(Node::Client(Box::new(ClientNode::new(
        CLIENT_ACTOR,
        client_node,
        cfg.clone(),
        keys[&CLIENT_ACTOR].clone(),
        genesis_state,
        workload,
        scenario.workload.max_get_tries,
        derive_seed(seed, "client-rng", 0),
    ))));

    let policy = LinkPolicy {
        delta_ms: scenario.network.delta_ms,
        gst_ms: scenario.network.gst_ms,
        bytes_per_ms: scenario.network.bandwidth_bytes_per_ms,
        pre_gst_drop: scenario.network.pre_gst_drop_prob,
        pre_gst_delay_mult: scenario.network.pre_gst_delay_mult,
    };
    let net = Network::new(nodes, policy, derive_seed(seed, "links", 0));

    Ok(BuiltNetwork {
        net,
        cfg,
        client_node,
        miner_count: miners.len(),
        byz_weight,
        byz_miners,
        n_live,
    })
}

/// Recompute the fingerprint of every chunk an honest miner holds and
/// compare against the manifest-derived expectation.
fn audit_stored_chunks(miner: &MinerNode, cfg: &NetParams) -> Vec<String> {
    let mut violations = Vec::new();
    for (file, manifest) in &miner.ledger.manifests {
        let Ok(gen) = build_generator(manifest.k as usize, (manifest.n - manifest.k) as usize)
        else {
            continue;
        };
        let data_fps: Vec<Fingerprint> = manifest
            .fingerprints
            .iter()
            .map(|fp| Fingerprint::from_be_bytes(*fp, &cfg.fp))
            .collect();
        let all_fps = hf_encode(&data_fps, &gen).expect("k matches");
        for (i, sid) in manifest.placement.iter().enumerate() {
            let index = ChunkIndex(i as u16 + 1);
            let Some(sector) = miner.sectors.get(sid) else {
                continue;
            };
            let Some(payload) = sector.chunk_payload(*file, index) else {
                continue;
            };
            let fp = crate::fingerprint::hf_compute(&payload, &cfg.fp).expect("aligned");
            if fp.value != all_fps[i].value {
                violations.push(format!(
                    "miner {} stores wrong chunk {}#{}",
                    miner.me, file, index.0
                ));
            }
        }
    }
    violations
}

/// Execute one scenario and gather metrics and monitor verdicts.
pub fn run_scenario(scenario: &Scenario) -> Result<ScenarioResult, ScenarioError> {
    let mut built = build_network(scenario)?;
    let min_heights = scenario.workload.min_heights;
    let client_node = built.client_node;

    built.net.start();
    let outcome = built.net.run_until(
        |net| {
            let client_done = net.nodes[client_node]
                .as_client()
                .map(|c| c.done())
                .unwrap_or(true);
            if !client_done {
                return false;
            }
            net.nodes
                .iter()
                .filter_map(|n| n.as_miner())
                .filter(|m| m.is_honest())
                .all(|m| m.ledger.height >= min_heights)
        },
        scenario.workload.time_cap_ms,
    );

    let mut violations: Vec<String> = Vec::new();
    if !matches!(outcome, RunOutcome::Satisfied(_)) {
        violations.push(format!("liveness: run ended without completion ({outcome:?})"));
    }
    violations.extend(built.net.delivery_violations.iter().cloned());

    let honest_miners: Vec<&MinerNode> = built
        .net
        .nodes
        .iter()
        .filter_map(|n| n.as_miner())
        .filter(|m| m.is_honest())
        .collect();

    // safety: all honest replicas agree on every height they committed
    let mut by_height: BTreeMap<u64, (BTreeSet<Hash256>, BTreeSet<Hash256>)> = BTreeMap::new();
    let mut heights: BTreeMap<u64, HeightRecord> = BTreeMap::new();
    let gst = scenario.network.gst_ms;
    for miner in &honest_miners {
        let mut pre_gst_round: BTreeMap<u64, u32> = BTreeMap::new();
        for &(h, r, t) in &miner.round_log {
            if t < gst {
                let e = pre_gst_round.entry(h).or_insert(0);
                *e = (*e).max(r);
            }
        }
        for rec in &miner.commit_log {
            let entry = by_height
                .entry(rec.height)
                .or_insert_with(|| (BTreeSet::new(), BTreeSet::new()));
            entry.0.insert(rec.block_hash);
            entry.1.insert(rec.state_hash);
            let hr = heights.entry(rec.height).or_insert(HeightRecord {
                height: rec.height,
                commit_round: rec.round,
                commit_ms: rec.at_ms,
                max_rounds_post_gst: 0,
            });
            hr.commit_round = hr.commit_round.max(rec.round);
            hr.commit_ms = hr.commit_ms.max(rec.at_ms);
            let pre = pre_gst_round.get(&rec.height).copied().unwrap_or(0);
            hr.max_rounds_post_gst = hr.max_rounds_post_gst.max(rec.round.saturating_sub(pre));
        }
    }
    for (h, (blocks, states)) in &by_height {
        if blocks.len() > 1 {
            violations.push(format!("safety: conflicting commits at height {h}"));
        }
        if states.len() > 1 {
            violations.push(format!("safety: divergent state hashes at height {h}"));
        }
    }

    for miner in &honest_miners {
        violations.extend(audit_stored_chunks(miner, &built.cfg));
    }

    let stored_bytes: u64 = built
        .net
        .nodes
        .iter()
        .filter_map(|n| n.as_miner())
        .map(|m| m.stored_chunk_bytes())
        .sum();
    let max_height = honest_miners.iter().map(|m| m.ledger.height).max().unwrap_or(0);
    let retrieve_reports = honest_miners
        .iter()
        .map(|m| m.ledger.retrieve_reports)
        .max()
        .unwrap_or(0);

    let client = built.net.nodes[client_node].as_client().expect("client node");
    if client.wrong_file_acceptances > 0 {
        violations.push(format!(
            "verification: {} wrong files accepted",
            client.wrong_file_acceptances
        ));
    }

    let mut result = ScenarioResult {
        name: scenario.name.clone(),
        seed: scenario.seed,
        n: built.n_live,
        f: crate::ledger::compute_f(built.n_live.max(1)),
        byz_weight: built.byz_weight,
        strategy: scenario.adversary.strategy.name().to_string(),
        file_size: scenario.workload.file_size,
        puts: client.puts.clone(),
        gets: client
            .gets
            .iter()
            .map(|g| GetRow {
                ok: g.ok,
                tries: g.tries,
                latency_ms: g.completed_ms.map(|c| c - g.started_ms),
            })
            .collect(),
        total_file_bytes: client.puts.iter().map(|p| p.bytes).sum(),
        total_padded_bytes: client.puts.iter().map(|p| p.padded_bytes).sum(),
        total_stored_bytes: stored_bytes,
        success_rate: 0.0,
        mean_tries: 0.0,
        mean_put_ms: 0.0,
        mean_get_ms: 0.0,
        storage_ratio_true: 0.0,
        storage_ratio_padded: 0.0,
        final_height: max_height,
        retrieve_reports,
        wrong_file_acceptances: client.wrong_file_acceptances,
        heights: heights.into_values().collect(),
        violations,
        trace_hash: built.net.trace_hash().to_hex(),
        sim_ms: built.net.now(),
    };
    result.finalize();
    Ok(result)
}
