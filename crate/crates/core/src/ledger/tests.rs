use std::collections::BTreeMap;

use super::*;
use crate::hash::sha256;
use crate::pos::{build_tree, prove, SectorTree};
use crate::sig::SecretKey;

const SECTOR_SIZE: u64 = 1024;
const FRAGMENT_SIZE: u64 = 256;

struct Net {
    state: LedgerState,
    keys: BTreeMap<MinerId, SecretKey>,
    data: BTreeMap<SectorId, Vec<u8>>,
    trees: BTreeMap<SectorId, SectorTree>,
}

fn sector_fill(sector: SectorId) -> Vec<u8> {
    let mut data = Vec::with_capacity(SECTOR_SIZE as usize);
    let mut digest = sha256(&sector.0.to_be_bytes());
    while data.len() < SECTOR_SIZE as usize {
        data.extend_from_slice(digest.as_bytes());
        digest = sha256(digest.as_bytes());
    }
    data.truncate(SECTOR_SIZE as usize);
    data
}

fn pledge_tx(
    config: &ChainConfig,
    keys: &BTreeMap<MinerId, SecretKey>,
    miner: MinerId,
    sector: SectorId,
    data: &[u8],
    tree: &SectorTree,
) -> Transaction {
    let idx = challenge_index(
        &epoch0_digest(sector, &config.genesis_hash),
        tree.leaf_count(),
    );
    let proof = prove(tree, data, sector, 0, idx).unwrap();
    Transaction::sign(
        TxPayload::Pledge(PledgePayload {
            miner,
            sector,
            root: tree.root(),
            initial_proof: proof,
        }),
        miner,
        &keys[&miner],
    )
}

/// Build a genesis network. `miner_sectors[i]` = sector count for miner i+1.
/// Miner id 100 is a registered non-pledging client.
fn build_net(miner_sectors: &[u64]) -> Net {
    let mut registry = BTreeMap::new();
    let mut keys = BTreeMap::new();
    let mut ids: Vec<MinerId> = (1..=miner_sectors.len() as u64).map(MinerId).collect();
    ids.push(MinerId(100));
    for id in &ids {
        let sk = SecretKey::from_seed(sha256(&id.0.to_be_bytes()));
        registry.insert(*id, sk.public());
        keys.insert(*id, sk);
    }
    let config = ChainConfig {
        genesis_hash: sha256(b"test-genesis"),
        sector_size: SECTOR_SIZE,
        fragment_size: FRAGMENT_SIZE,
        pos_period: 2,
        pos_grace: 2,
        registry,
    };

    let mut data = BTreeMap::new();
    let mut trees = BTreeMap::new();
    let mut txs = Vec::new();
    let mut next_sector = 1u64;
    for (i, &count) in miner_sectors.iter().enumerate() {
        let miner = MinerId(i as u64 + 1);
        for _ in 0..count {
            let sector = SectorId(next_sector);
            next_sector += 1;
            let fill = sector_fill(sector);
            let tree = build_tree(&fill, FRAGMENT_SIZE as usize).unwrap();
            txs.push(pledge_tx(&config, &keys, miner, sector, &fill, &tree));
            data.insert(sector, fill);
            trees.insert(sector, tree);
        }
    }
    let genesis_block = Block::new(0, Hash256::ZERO, MinerId(0), txs);
    let state = LedgerState::genesis(config, &genesis_block).unwrap();
    Net {
        state,
        keys,
        data,
        trees,
    }
}

impl Net {
    /// Commit a block carrying `txs`, certified by every live miner.
    fn commit(&mut self, txs: Vec<Transaction>) -> Result<(), BlockError> {
        let height = self.state.height + 1;
        let proposer = MinerId(1);
        let block = Block::new(height, self.state.last_block_hash, proposer, txs);
        let hash = block.hash();
        let votes: Vec<SignedVote> = self
            .state
            .weights
            .miners()
            .map(|(m, _)| {
                SignedVote::sign(
                    Vote {
                        height,
                        round: 0,
                        step: VoteStep::Precommit,
                        block_hash: Some(hash),
                        voter: m,
                    },
                    &self.keys[&m],
                )
            })
            .collect();
        self.state.apply_block(&CommittedBlock {
            block,
            cert: CommitCert { round: 0, votes },
        })
    }

    fn pos_tx(&self, sector: SectorId) -> Transaction {
        let rec = &self.state.sectors[&sector];
        let idx = challenge_index(&rec.last_digest, rec.leaf_count);
        let tree = &self.trees[&sector];
        let data = &self.data[&sector];
        let proof = prove(tree, data, sector, rec.last_epoch + 1, idx).unwrap();
        Transaction::sign(
            TxPayload::Pos(PosPayload {
                sector,
                epoch: rec.last_epoch + 1,
                proof,
                new_root: tree.root(),
            }),
            rec.owner,
            &self.keys[&rec.owner],
        )
    }

    fn store_tx(&self, fp_seed: u8) -> Transaction {
        let k = self.state.n() - self.state.f();
        let fingerprints: Vec<[u8; 8]> = (0..k).map(|i| [fp_seed, i as u8, 0, 0, 0, 0, 0, 1]).collect();
        let file_id = StorePayload::derived_id(&fingerprints);
        Transaction::sign(
            TxPayload::Store(StorePayload {
                file_id,
                fingerprints,
                chunk_size: 16,
                true_len: 10,
                expiry_height: None,
            }),
            MinerId(100),
            &self.keys[&MinerId(100)],
        )
    }
}

#[test]
fn compute_f_examples() {
    assert_eq!(compute_f(4), 1);
    assert_eq!(compute_f(10), 3);
    assert_eq!(compute_f(40), 13);
    assert_eq!(compute_f(1), 0);
}

#[test]
fn genesis_pledges_seed_weights() {
    let net = build_net(&[2, 1, 1]);
    assert_eq!(net.state.n(), 4);
    assert_eq!(net.state.f(), 1);
    assert_eq!(net.state.weights.weight(MinerId(1)), 2);
    assert_eq!(net.state.live_sectors().len(), 4);
    assert_eq!(net.state.weight_of(MinerId(1), 0).unwrap(), 2);
}

#[test]
fn empty_block_only_advances_height() {
    let mut net = build_net(&[1, 1, 1, 1]);
    let before = net.state.clone();
    net.commit(vec![]).unwrap();
    assert_eq!(net.state.height, 1);
    assert_eq!(net.state.weights, before.weights);
    assert_eq!(net.state.sectors, before.sectors);
    assert_eq!(net.state.manifests, before.manifests);
}

#[test]
fn store_tx_valid_and_id_binding_enforced() {
    let net = build_net(&[1, 1, 1, 1]);
    let tx = net.store_tx(7);
    assert_eq!(net.state.validate_tx(&tx), Ok(()));

    // one fingerprint altered after id computation
    let TxPayload::Store(mut p) = tx.payload.clone() else {
        unreachable!()
    };
    p.fingerprints[0][0] ^= 1;
    let bad = Transaction::sign(
        TxPayload::Store(p),
        MinerId(100),
        &net.keys[&MinerId(100)],
    );
    assert_eq!(net.state.validate_tx(&bad), Err(TxRejection::IdMismatch));
}

#[test]
fn store_requires_current_fingerprint_count() {
    let net = build_net(&[1, 1, 1, 1]); // n=4, K=3
    let fingerprints: Vec<[u8; 8]> = (0..2).map(|i| [i as u8; 8]).collect();
    let file_id = StorePayload::derived_id(&fingerprints);
    let tx = Transaction::sign(
        TxPayload::Store(StorePayload {
            file_id,
            fingerprints,
            chunk_size: 16,
            true_len: 1,
            expiry_height: None,
        }),
        MinerId(100),
        &net.keys[&MinerId(100)],
    );
    assert_eq!(
        net.state.validate_tx(&tx),
        Err(TxRejection::FingerprintCount {
            expected: 3,
            got: 2
        })
    );
}

#[test]
fn store_capacity_enforced_per_sector() {
    let mut net = build_net(&[1, 1, 1, 1]);
    // Sector size 1024; two files of chunk_size 512 fill it, a third fails.
    for seed in 0..2 {
        let k = net.state.n() - net.state.f();
        let fingerprints: Vec<[u8; 8]> = (0..k).map(|i| [seed, i as u8, 9, 9, 9, 9, 9, 9]).collect();
        let file_id = StorePayload::derived_id(&fingerprints);
        let tx = Transaction::sign(
            TxPayload::Store(StorePayload {
                file_id,
                fingerprints,
                chunk_size: 512,
                true_len: 100,
                expiry_height: None,
            }),
            MinerId(100),
            &net.keys[&MinerId(100)],
        );
        net.commit(vec![tx]).unwrap();
    }
    let k = net.state.n() - net.state.f();
    let fingerprints: Vec<[u8; 8]> = (0..k).map(|i| [8, i as u8, 8, 8, 8, 8, 8, 8]).collect();
    let file_id = StorePayload::derived_id(&fingerprints);
    let tx = Transaction::sign(
        TxPayload::Store(StorePayload {
            file_id,
            fingerprints,
            chunk_size: 512,
            true_len: 100,
            expiry_height: None,
        }),
        MinerId(100),
        &net.keys[&MinerId(100)],
    );
    assert!(matches!(
        net.state.validate_tx(&tx),
        Err(TxRejection::SectorFull(_))
    ));
}

#[test]
fn manifest_records_placement_and_params() {
    let mut net = build_net(&[2, 1, 1]);
    let tx = net.store_tx(3);
    let TxPayload::Store(p) = tx.payload.clone() else {
        unreachable!()
    };
    net.commit(vec![tx]).unwrap();
    let manifest = &net.state.manifests[&p.file_id];
    assert_eq!(manifest.n, 4);
    assert_eq!(manifest.k, 3);
    assert_eq!(manifest.placement.len(), 4);
    assert_eq!(manifest.threshold(), 2); // f + 1
    assert_eq!(manifest.store_height, 1);
    for sid in &manifest.placement {
        assert_eq!(net.state.sectors[sid].used_bytes, 16);
    }
}

#[test]
fn pledge_takes_effect_at_commit_height() {
    let mut net = build_net(&[1, 1, 1, 1]);
    net.commit(vec![]).unwrap(); // height 1

    let miner = MinerId(2);
    let sector = SectorId(50);
    let fill = sector_fill(sector);
    let tree = build_tree(&fill, FRAGMENT_SIZE as usize).unwrap();
    let tx = pledge_tx(&net.state.config, &net.keys, miner, sector, &fill, &tree);
    net.commit(vec![tx]).unwrap(); // height 2

    assert_eq!(net.state.weight_of(miner, 1).unwrap(), 1);
    assert_eq!(net.state.weight_of(miner, 2).unwrap(), 2);
    assert_eq!(net.state.n(), 5);
}

#[test]
fn pledge_without_valid_opening_rejected() {
    let net = build_net(&[1, 1, 1, 1]);
    let miner = MinerId(1);
    let sector = SectorId(50);
    let fill = sector_fill(sector);
    let tree = build_tree(&fill, FRAGMENT_SIZE as usize).unwrap();
    let idx = challenge_index(
        &epoch0_digest(sector, &net.state.config.genesis_hash),
        tree.leaf_count(),
    );
    let mut proof = prove(&tree, &fill, sector, 0, idx).unwrap();
    proof.leaf_data[0] ^= 1; // claims storage it does not have
    let tx = Transaction::sign(
        TxPayload::Pledge(PledgePayload {
            miner,
            sector,
            root: tree.root(),
            initial_proof: proof,
        }),
        miner,
        &net.keys[&miner],
    );
    assert_eq!(net.state.validate_tx(&tx), Err(TxRejection::PledgeInvalid));
}

#[test]
fn pos_accepted_and_advances_epoch() {
    let mut net = build_net(&[1, 1, 1, 1]);
    let tx = net.pos_tx(SectorId(1));
    net.commit(vec![tx]).unwrap();
    assert_eq!(net.state.sectors[&SectorId(1)].last_epoch, 1);
}

#[test]
fn pos_with_wrong_challenge_or_corrupt_proof_rejected() {
    let net = build_net(&[1, 1, 1, 1]);
    let sector = SectorId(1);
    let rec = &net.state.sectors[&sector];
    let expected = challenge_index(&rec.last_digest, rec.leaf_count);
    let wrong = (expected + 1) % rec.leaf_count;
    let proof = prove(&net.trees[&sector], &net.data[&sector], sector, 1, wrong).unwrap();
    let tx = Transaction::sign(
        TxPayload::Pos(PosPayload {
            sector,
            epoch: 1,
            proof,
            new_root: net.trees[&sector].root(),
        }),
        MinerId(1),
        &net.keys[&MinerId(1)],
    );
    assert_eq!(net.state.validate_tx(&tx), Err(TxRejection::PosInvalid));

    let mut tx2 = net.pos_tx(sector);
    if let TxPayload::Pos(p) = &mut tx2.payload {
        p.proof.leaf_data[0] ^= 1;
    }
    let tx2 = Transaction::sign(tx2.payload, MinerId(1), &net.keys[&MinerId(1)]);
    assert_eq!(net.state.validate_tx(&tx2), Err(TxRejection::PosInvalid));
}

#[test]
fn pos_epoch_must_be_sequential() {
    let net = build_net(&[1, 1, 1, 1]);
    let mut tx = net.pos_tx(SectorId(1));
    if let TxPayload::Pos(p) = &mut tx.payload {
        p.epoch = 3;
        p.proof.epoch = 3;
    }
    let tx = Transaction::sign(tx.payload, MinerId(1), &net.keys[&MinerId(1)]);
    assert_eq!(
        net.state.validate_tx(&tx),
        Err(TxRejection::WrongEpoch {
            expected: 1,
            got: 3
        })
    );
}

#[test]
fn missed_pos_deadline_faults_sector() {
    let mut net = build_net(&[1, 1, 1, 1]);
    // period 2 + grace 2: epoch 1 owed by height 4; miss it.
    for _ in 0..4 {
        net.commit(vec![]).unwrap();
    }
    assert!(net.state.sectors.values().all(|r| !r.faulted));
    net.commit(vec![]).unwrap(); // height 5: deadline passed
    assert!(net.state.sectors.values().all(|r| r.faulted));
    assert_eq!(net.state.n(), 0);
}

#[test]
fn pos_keeps_sector_alive_through_deadlines() {
    let mut net = build_net(&[1, 1, 1, 1]);
    for _ in 0..8 {
        let txs = net
            .state
            .live_sectors()
            .iter()
            .map(|&s| net.pos_tx(s))
            .collect();
        net.commit(txs).unwrap();
    }
    assert_eq!(net.state.n(), 4);
    assert_eq!(net.state.sectors[&SectorId(1)].last_epoch, 8);
}

#[test]
fn invalid_proof_evidence_slashes_sector() {
    let mut net = build_net(&[2, 1, 1]);
    // Accused signs a POS whose path cannot reproduce its claimed root.
    let sector = SectorId(1);
    let mut bogus = net.pos_tx(sector);
    if let TxPayload::Pos(p) = &mut bogus.payload {
        p.proof.leaf_data[0] ^= 0xFF;
    }
    let bogus = Transaction::sign(bogus.payload, MinerId(1), &net.keys[&MinerId(1)]);
    let fault = Transaction::sign(
        TxPayload::Fault(FaultPayload {
            accused: MinerId(1),
            sector: Some(sector),
            evidence: Evidence::InvalidProof(Box::new(bogus)),
        }),
        MinerId(2),
        &net.keys[&MinerId(2)],
    );
    assert_eq!(net.state.validate_tx(&fault), Ok(()));
    net.commit(vec![fault]).unwrap();
    assert!(net.state.sectors[&sector].faulted);
    assert_eq!(net.state.weights.weight(MinerId(1)), 1);
    assert!(!net.state.live_sectors().contains(&sector));
    // weight table is height-indexed: pre-fault weight still queryable
    assert_eq!(net.state.weight_of(MinerId(1), 0).unwrap(), 2);
    assert_eq!(net.state.weight_of(MinerId(1), 1).unwrap(), 1);
}

#[test]
fn fabricated_invalid_proof_evidence_rejected() {
    let net = build_net(&[1, 1, 1, 1]);
    // A well-formed POS signed by the accused verifies fine, so it is not
    // usable as evidence.
    let honest = net.pos_tx(SectorId(1));
    let fault = Transaction::sign(
        TxPayload::Fault(FaultPayload {
            accused: MinerId(1),
            sector: Some(SectorId(1)),
            evidence: Evidence::InvalidProof(Box::new(honest)),
        }),
        MinerId(2),
        &net.keys[&MinerId(2)],
    );
    assert_eq!(
        net.state.validate_tx(&fault),
        Err(TxRejection::EvidenceInvalid)
    );
}

#[test]
fn equivocation_evidence_removes_miner() {
    let mut net = build_net(&[2, 1, 1]);
    let a = SignedVote::sign(
        Vote {
            height: 1,
            round: 0,
            step: VoteStep::Prevote,
            block_hash: Some(sha256(b"a")),
            voter: MinerId(1),
        },
        &net.keys[&MinerId(1)],
    );
    let b = SignedVote::sign(
        Vote {
            height: 1,
            round: 0,
            step: VoteStep::Prevote,
            block_hash: Some(sha256(b"b")),
            voter: MinerId(1),
        },
        &net.keys[&MinerId(1)],
    );
    let fault = Transaction::sign(
        TxPayload::Fault(FaultPayload {
            accused: MinerId(1),
            sector: None,
            evidence: Evidence::Equivocation(Box::new((a, b))),
        }),
        MinerId(3),
        &net.keys[&MinerId(3)],
    );
    assert_eq!(net.state.validate_tx(&fault), Ok(()));
    net.commit(vec![fault]).unwrap();
    assert_eq!(net.state.weights.weight(MinerId(1)), 0);
    assert_eq!(net.state.n(), 2);
    assert!(net.state.faulted_miners.contains(&MinerId(1)));
}

#[test]
fn equivocation_requires_conflicting_votes() {
    let net = build_net(&[1, 1, 1, 1]);
    let v = SignedVote::sign(
        Vote {
            height: 1,
            round: 0,
            step: VoteStep::Prevote,
            block_hash: Some(sha256(b"a")),
            voter: MinerId(1),
        },
        &net.keys[&MinerId(1)],
    );
    let fault = Transaction::sign(
        TxPayload::Fault(FaultPayload {
            accused: MinerId(1),
            sector: None,
            evidence: Evidence::Equivocation(Box::new((v.clone(), v))),
        }),
        MinerId(2),
        &net.keys[&MinerId(2)],
    );
    assert_eq!(
        net.state.validate_tx(&fault),
        Err(TxRejection::EvidenceInvalid)
    );
}

#[test]
fn file_expiry_frees_capacity() {
    let mut net = build_net(&[1, 1, 1, 1]);
    let k = net.state.n() - net.state.f();
    let fingerprints: Vec<[u8; 8]> = (0..k).map(|i| [5, i as u8, 5, 5, 5, 5, 5, 5]).collect();
    let file_id = StorePayload::derived_id(&fingerprints);
    let tx = Transaction::sign(
        TxPayload::Store(StorePayload {
            file_id,
            fingerprints,
            chunk_size: 64,
            true_len: 100,
            expiry_height: Some(3),
        }),
        MinerId(100),
        &net.keys[&MinerId(100)],
    );
    net.commit(vec![tx]).unwrap(); // height 1
    assert!(net.state.manifests.contains_key(&file_id));
    net.commit(vec![]).unwrap(); // height 2
    assert!(net.state.manifests.contains_key(&file_id));
    net.commit(vec![]).unwrap(); // height 3: expiry sweep fires
    assert!(!net.state.manifests.contains_key(&file_id));
    assert!(net.state.sectors.values().all(|r| r.used_bytes == 0));
}

#[test]
fn certificate_below_quorum_rejected() {
    let mut net = build_net(&[1, 1, 1, 1]);
    let block = Block::new(1, net.state.last_block_hash, MinerId(1), vec![]);
    let hash = block.hash();
    // n=4, f=1, quorum=3; two votes are not enough.
    let votes: Vec<SignedVote> = [MinerId(1), MinerId(2)]
        .iter()
        .map(|&m| {
            SignedVote::sign(
                Vote {
                    height: 1,
                    round: 0,
                    step: VoteStep::Precommit,
                    block_hash: Some(hash),
                    voter: m,
                },
                &net.keys[&m],
            )
        })
        .collect();
    let err = net
        .state
        .apply_block(&CommittedBlock {
            block,
            cert: CommitCert { round: 0, votes },
        })
        .unwrap_err();
    assert_eq!(err, BlockError::BadCertificate("quorum not reached"));
}

#[test]
fn certificate_weight_uses_previous_height_table() {
    // Miner 1 holds weight 2 of n=5 (quorum 4): votes from miners {1, 2, 3}
    // reach quorum only because the table at h-1 credits miner 1 with 2.
    let mut net = build_net(&[2, 1, 1, 1]);
    let block = Block::new(1, net.state.last_block_hash, MinerId(1), vec![]);
    let hash = block.hash();
    let votes: Vec<SignedVote> = [MinerId(1), MinerId(2), MinerId(3)]
        .iter()
        .map(|&m| {
            SignedVote::sign(
                Vote {
                    height: 1,
                    round: 0,
                    step: VoteStep::Precommit,
                    block_hash: Some(hash),
                    voter: m,
                },
                &net.keys[&m],
            )
        })
        .collect();
    net.state
        .apply_block(&CommittedBlock {
            block,
            cert: CommitCert { round: 0, votes },
        })
        .unwrap();
    assert_eq!(net.state.height, 1);
}

#[test]
fn replicas_applying_same_blocks_agree_bytewise() {
    let mut a = build_net(&[2, 1, 1]);
    let mut b = build_net(&[2, 1, 1]);
    assert_eq!(a.state.state_hash(), b.state.state_hash());

    let txs1 = vec![a.store_tx(1)];
    let txs2 = vec![a.pos_tx(SectorId(2))];
    for txs in [txs1, txs2, vec![]] {
        a.commit(txs.clone()).unwrap();
        // replay the identical committed block on b
        let height = b.state.height + 1;
        let block = Block::new(height, b.state.last_block_hash, MinerId(1), txs);
        let hash = block.hash();
        let votes: Vec<SignedVote> = b
            .state
            .weights
            .miners()
            .map(|(m, _)| {
                SignedVote::sign(
                    Vote {
                        height,
                        round: 0,
                        step: VoteStep::Precommit,
                        block_hash: Some(hash),
                        voter: m,
                    },
                    &b.keys[&m],
                )
            })
            .collect();
        b.state
            .apply_block(&CommittedBlock {
                block,
                cert: CommitCert { round: 0, votes },
            })
            .unwrap();
        assert_eq!(a.state.state_hash(), b.state.state_hash());
    }
}

#[test]
fn retrieve_report_counts() {
    let mut net = build_net(&[1, 1, 1, 1]);
    let store = net.store_tx(9);
    let TxPayload::Store(p) = store.payload.clone() else {
        unreachable!()
    };
    net.commit(vec![store]).unwrap();
    let report = Transaction::sign(
        TxPayload::RetrieveReport(RetrieveReportPayload {
            file_id: p.file_id,
            failed_miner: MinerId(2),
        }),
        MinerId(100),
        &net.keys[&MinerId(100)],
    );
    let weights_before = net.state.weights.clone();
    net.commit(vec![report]).unwrap();
    assert_eq!(net.state.retrieve_reports, 1);
    assert_eq!(net.state.weights, weights_before);
}

#[test]
fn block_valid_checks_sequential_txs() {
    let net = build_net(&[1, 1, 1, 1]);
    let tx = net.store_tx(2);
    let good = Block::new(1, net.state.last_block_hash, MinerId(1), vec![tx.clone()]);
    assert!(net.state.block_valid(&good));
    // same store twice in one block: second one is a duplicate
    let bad = Block::new(1, net.state.last_block_hash, MinerId(1), vec![tx.clone(), tx]);
    assert!(!net.state.block_valid(&bad));
}

#[test]
fn state_wire_roundtrip() {
    let mut net = build_net(&[2, 1, 1]);
    net.commit(vec![net.store_tx(4)]).unwrap();
    let bytes = net.state.encode_to_vec();
    let back = LedgerState::decode_all(&bytes).unwrap();
    assert_eq!(back, net.state);
    assert_eq!(back.state_hash(), net.state.state_hash());
}

#[test]
fn transaction_wire_roundtrip() {
    let net = build_net(&[1, 1, 1, 1]);
    for tx in [net.store_tx(1), net.pos_tx(SectorId(1))] {
        let back = Transaction::decode_all(&tx.encode_to_vec()).unwrap();
        assert_eq!(back, tx);
        assert_eq!(back.id(), tx.id());
    }
}
