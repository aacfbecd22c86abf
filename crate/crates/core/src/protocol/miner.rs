//! The miner node: storage, consensus shell, encoding and retrieval roles.
//!
//! One miner may pledge several sectors. Every miner with live weight
//! participates in consensus, signs chunk fingerprints for every stored
//! file, and serves its own sectors' chunks to retrieval miners. The
//! encoding and retrieval roles activate when a client picks this miner.

use std::collections::{BTreeMap, BTreeSet};

use rand_chacha::ChaCha12Rng;
use rand::SeedableRng;

use crate::adversary::{AdversaryState, RetrievalAction, ServeAction, Strategy};
use crate::codec::{Decode, Encode};
use crate::consensus::{BlockSource, ConsensusMsg, Engine, Output, Step, TimeoutConfig};
use crate::fingerprint::{hf_compute, hf_encode, Fingerprint};
use crate::galois::{build_generator, rs_encode, GeneratorMatrix};
use crate::hash::Hash256;
use crate::ledger::{
    Block, CommittedBlock, Evidence, FaultPayload, FileManifest, LedgerState, PosPayload,
    Transaction, TxPayload,
};
use crate::pos::{build_tree, challenge_index, prove, update_tree, SectorTree};
use crate::sig::SecretKey;
use crate::sim::{Ctx, NodeId};
use crate::types::{ChunkIndex, FileId, MinerId, SectorId};
use crate::wts::{self, AggregateSignature, PartialSignature, SigningKey, VerificationKey};

use super::messages::WireMsg;
use super::{chunk_message, Net, NodeTimer};

#[derive(Debug, Clone)]
pub enum MinerTimer {
    Consensus { height: u64, round: u32, step: Step },
    StartHeight { height: u64 },
    /// Recurring gossip tick: when consensus made no progress since the
    /// last tick, retransmit everything known about the current height.
    Heartbeat,
}

/// One commit as observed by this node, for post-run auditing.
#[derive(Debug, Clone)]
pub struct CommitRecord {
    pub height: u64,
    pub round: u32,
    pub at_ms: u64,
    pub block_hash: Hash256,
    pub state_hash: Hash256,
}

/// A pledged sector held locally: the data, its hash tree, and a free
/// list for chunk regions.
pub struct LocalSector {
    pub id: SectorId,
    pub data: Vec<u8>,
    pub tree: SectorTree,
    free: Vec<(u64, u64)>, // (offset, len), sorted, non-adjacent
    chunks: BTreeMap<(FileId, ChunkIndex), (u64, u64)>,
}

impl LocalSector {
    pub fn new(id: SectorId, data: Vec<u8>, fragment_size: usize) -> LocalSector {
        let tree = build_tree(&data, fragment_size).expect("sector sized at build time");
        let size = data.len() as u64;
        LocalSector {
            id,
            data,
            tree,
            free: vec![(0, size)],
            chunks: BTreeMap::new(),
        }
    }

    fn allocate(&mut self, len: u64) -> Option<u64> {
        let slot = self.free.iter().position(|&(_, l)| l >= len)?;
        let (off, l) = self.free[slot];
        if l == len {
            self.free.remove(slot);
        } else {
            self.free[slot] = (off + len, l - len);
        }
        Some(off)
    }

    fn release(&mut self, offset: u64, len: u64) {
        self.free.push((offset, len));
        self.free.sort_unstable();
        // merge adjacent regions
        let mut merged: Vec<(u64, u64)> = Vec::with_capacity(self.free.len());
        for &(off, len) in &self.free {
            match merged.last_mut() {
                Some((moff, mlen)) if *moff + *mlen == off => *mlen += len,
                _ => merged.push((off, len)),
            }
        }
        self.free = merged;
    }

    /// Write a chunk into the sector and refresh the tree incrementally.
    fn write_chunk(&mut self, file: FileId, index: ChunkIndex, payload: &[u8]) -> Option<u64> {
        let offset = self.allocate(payload.len() as u64)?;
        self.data[offset as usize..offset as usize + payload.len()].copy_from_slice(payload);
        self.tree = update_tree(&self.tree, &self.data, offset as usize, payload.len())
            .expect("chunk region within sector");
        self.chunks.insert((file, index), (offset, payload.len() as u64));
        Some(offset)
    }

    /// Remove a stored chunk, zeroing its region.
    fn remove_chunk(&mut self, file: FileId, index: ChunkIndex) {
        let Some((offset, len)) = self.chunks.remove(&(file, index)) else {
            return;
        };
        self.data[offset as usize..(offset + len) as usize].fill(0);
        self.tree = update_tree(&self.tree, &self.data, offset as usize, len as usize)
            .expect("region within sector");
        self.release(offset, len);
    }

    /// Zero a chunk's bytes without touching the tree (generation-attack
    /// discard: the stale tree hides the erasure until challenged).
    fn discard_silently(&mut self, file: FileId, index: ChunkIndex) {
        if let Some(&(offset, len)) = self.chunks.get(&(file, index)) {
            self.data[offset as usize..(offset + len) as usize].fill(0);
        }
    }

    pub fn chunk_payload(&self, file: FileId, index: ChunkIndex) -> Option<Vec<u8>> {
        let &(offset, len) = self.chunks.get(&(file, index))?;
        Some(self.data[offset as usize..(offset + len) as usize].to_vec())
    }

    pub fn stored_chunk_bytes(&self) -> u64 {
        self.chunks.values().map(|(_, len)| len).sum()
    }
}

struct RetrievalSession {
    client: NodeId,
    started_at: u64,
    collected: BTreeMap<u16, Vec<u8>>,
    done: bool,
}

/// Mempool/ledger view handed to the consensus engine for block building
/// and validation.
struct Host<'a> {
    ledger: &'a LedgerState,
    mempool: &'a BTreeMap<Hash256, Transaction>,
    max_txs: usize,
    proposer: MinerId,
}

impl BlockSource for Host<'_> {
    fn build_block(&mut self, height: u64, _round: u32) -> Block {
        let txs = self
            .ledger
            .select_valid(self.mempool.values(), self.max_txs);
        Block::new(height, self.ledger.last_block_hash, self.proposer, txs)
    }

    fn block_valid(&mut self, block: &Block) -> bool {
        self.ledger.block_valid(block)
    }
}

pub struct MinerNode {
    pub me: MinerId,
    pub node_id: NodeId,
    cfg: Net,
    sk: SecretKey,
    wts_sk: SigningKey,
    wts_vk: VerificationKey,
    pub ledger: LedgerState,
    engine: Engine,
    mempool: BTreeMap<Hash256, Transaction>,
    seen_txs: BTreeSet<Hash256>,
    my_pending: BTreeSet<Hash256>,
    pub sectors: BTreeMap<SectorId, LocalSector>,

    partials: BTreeMap<(FileId, ChunkIndex), BTreeMap<MinerId, PartialSignature>>,
    pub aggregates: BTreeMap<(FileId, ChunkIndex), AggregateSignature>,
    chunk_buffer: BTreeMap<(FileId, ChunkIndex), Vec<u8>>,
    file_buffer: BTreeMap<FileId, Vec<u8>>,
    retrievals: BTreeMap<FileId, RetrievalSession>,

    pending_blocks: BTreeMap<u64, CommittedBlock>,
    early_consensus: BTreeMap<u64, Vec<ConsensusMsg>>,
    next_height_scheduled: u64,
    gen_cache: BTreeMap<(u16, u16), GeneratorMatrix>,

    pub adversary: Option<AdversaryState>,
    /// Sybil pledges to fire at startup (sector id, bogus tx).
    pub sybil_pledges: Vec<Transaction>,
    last_heartbeat_state: (u64, u32, Step),
    rng: ChaCha12Rng,

    pub commit_log: Vec<CommitRecord>,
    /// (height, round, sim time) for every round this node entered.
    pub round_log: Vec<(u64, u32, u64)>,
    pub rejected_partials: u64,
    pub rejected_chunks: u64,
}

const CHUNK_BUFFER_CAP: usize = 512;
const RETRIEVAL_SESSION_CAP: usize = 64;
const EARLY_CONSENSUS_HEIGHTS: u64 = 4;

impl MinerNode {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        me: MinerId,
        node_id: NodeId,
        cfg: Net,
        sk: SecretKey,
        wts_sk: SigningKey,
        ledger: LedgerState,
        sectors: BTreeMap<SectorId, LocalSector>,
        seed: [u8; 32],
    ) -> MinerNode {
        let engine = Engine::new(
            me,
            sk.clone(),
            cfg.chain.registry.clone(),
            TimeoutConfig {
                delta_ms: cfg.delta_ms,
            },
        );
        let wts_vk = cfg.wts_vk.clone();
        MinerNode {
            me,
            node_id,
            cfg,
            sk,
            wts_sk,
            wts_vk,
            ledger,
            engine,
            mempool: BTreeMap::new(),
            seen_txs: BTreeSet::new(),
            my_pending: BTreeSet::new(),
            sectors,
            partials: BTreeMap::new(),
            aggregates: BTreeMap::new(),
            chunk_buffer: BTreeMap::new(),
            file_buffer: BTreeMap::new(),
            retrievals: BTreeMap::new(),
            pending_blocks: BTreeMap::new(),
            early_consensus: BTreeMap::new(),
            next_height_scheduled: 0,
            gen_cache: BTreeMap::new(),
            adversary: None,
            sybil_pledges: Vec::new(),
            last_heartbeat_state: (0, 0, Step::Commit),
            rng: ChaCha12Rng::from_seed(seed),
            commit_log: Vec::new(),
            round_log: Vec::new(),
            rejected_partials: 0,
            rejected_chunks: 0,
        }
    }

    pub fn is_honest(&self) -> bool {
        match &self.adversary {
            None => true,
            Some(a) => a.strategy == Strategy::Honest,
        }
    }

    pub fn stored_chunk_bytes(&self) -> u64 {
        self.sectors.values().map(|s| s.stored_chunk_bytes()).sum()
    }

    fn generator(&mut self, k: u16, m: u16) -> &GeneratorMatrix {
        self.gen_cache
            .entry((k, m))
            .or_insert_with(|| build_generator(k as usize, m as usize).expect("valid shape"))
    }

    // -- outbound helpers ---------------------------------------------------

    fn send_wire(&mut self, ctx: &mut Ctx<NodeTimer>, to: NodeId, msg: &WireMsg) {
        let mut payload = msg.encode_to_vec();
        if let Some(adv) = &mut self.adversary {
            if !adv.fuzz_outgoing(&mut payload) {
                return;
            }
        }
        ctx.send(to, payload);
    }

    fn broadcast_miners(&mut self, ctx: &mut Ctx<NodeTimer>, msg: &WireMsg) {
        for node in self.cfg.miner_nodes.clone() {
            if node != self.node_id {
                self.send_wire(ctx, node, msg);
            }
        }
    }

    fn broadcast_all(&mut self, ctx: &mut Ctx<NodeTimer>, msg: &WireMsg) {
        let nodes: Vec<NodeId> = self
            .cfg
            .miner_nodes
            .iter()
            .chain(self.cfg.client_nodes.iter())
            .copied()
            .collect();
        for node in nodes {
            if node != self.node_id {
                self.send_wire(ctx, node, msg);
            }
        }
    }

    /// Broadcast a consensus vote, applying the equivocation hook: even
    /// rounds split the conflicting pair across peer halves, odd rounds
    /// send both votes to everyone.
    fn broadcast_vote(&mut self, ctx: &mut Ctx<NodeTimer>, sv: crate::ledger::SignedVote) {
        let pair = match &mut self.adversary {
            Some(adv) => adv.equivocate_vote(&sv, &self.sk),
            None => None,
        };
        match pair {
            None => self.broadcast_miners(ctx, &WireMsg::Consensus(ConsensusMsg::Vote(sv))),
            Some((a, b)) => {
                let split = self
                    .adversary
                    .as_ref()
                    .map(|adv| adv.split_delivery(a.vote.round))
                    .unwrap_or(false);
                let peers: Vec<NodeId> = self
                    .cfg
                    .miner_nodes
                    .iter()
                    .copied()
                    .filter(|&n| n != self.node_id)
                    .collect();
                for (i, node) in peers.into_iter().enumerate() {
                    if split {
                        let msg = if i % 2 == 0 { &a } else { &b };
                        self.send_wire(ctx, node, &WireMsg::Consensus(ConsensusMsg::Vote(msg.clone())));
                    } else {
                        self.send_wire(ctx, node, &WireMsg::Consensus(ConsensusMsg::Vote(a.clone())));
                        self.send_wire(ctx, node, &WireMsg::Consensus(ConsensusMsg::Vote(b.clone())));
                    }
                }
            }
        }
    }

    fn submit_tx(&mut self, ctx: &mut Ctx<NodeTimer>, tx: Transaction) {
        let id = tx.id();
        if self.seen_txs.insert(id) {
            self.mempool.insert(id, tx.clone());
        }
        self.my_pending.insert(id);
        self.broadcast_miners(ctx, &WireMsg::Tx(tx));
    }

    // -- consensus shell ----------------------------------------------------

    fn with_host<R>(&mut self, f: impl FnOnce(&mut Engine, &mut Host<'_>) -> R) -> R {
        let mut host = Host {
            ledger: &self.ledger,
            mempool: &self.mempool,
            max_txs: self.cfg.max_block_txs,
            proposer: self.me,
        };
        f(&mut self.engine, &mut host)
    }

    fn track_round(&mut self, now: u64) {
        let (h, r) = (self.engine.height(), self.engine.round());
        match self.round_log.last() {
            Some(&(lh, lr, _)) if lh == h && lr == r => {}
            _ => {
                if !self.engine.is_idle() {
                    self.round_log.push((h, r, now));
                }
            }
        }
    }

    fn process_outputs(&mut self, ctx: &mut Ctx<NodeTimer>, outputs: Vec<Output>) {
        for out in outputs {
            match out {
                Output::Broadcast(ConsensusMsg::Vote(sv)) => self.broadcast_vote(ctx, sv),
                Output::Broadcast(msg) => {
                    self.broadcast_miners(ctx, &WireMsg::Consensus(msg));
                }
                Output::Schedule {
                    height,
                    round,
                    step,
                    delay_ms,
                } => ctx.set_timer(
                    delay_ms,
                    NodeTimer::Miner(MinerTimer::Consensus {
                        height,
                        round,
                        step,
                    }),
                ),
                Output::Commit(cb) => self.accept_block(ctx, *cb),
                Output::Evidence(pair) => {
                    let accused = pair.0.vote.voter;
                    let tx = Transaction::sign(
                        TxPayload::Fault(FaultPayload {
                            accused,
                            sector: None,
                            evidence: Evidence::Equivocation(pair),
                        }),
                        self.me,
                        &self.sk,
                    );
                    if self.ledger.validate_tx(&tx).is_ok() {
                        self.submit_tx(ctx, tx);
                    }
                }
            }
        }
        self.track_round(ctx.now);
    }

    // -- block application --------------------------------------------------

    fn accept_block(&mut self, ctx: &mut Ctx<NodeTimer>, cb: CommittedBlock) {
        let height = cb.block.header.height;
        if height <= self.ledger.height {
            return;
        }
        self.pending_blocks.entry(height).or_insert(cb);
        loop {
            let next = self.ledger.height + 1;
            let Some(cb) = self.pending_blocks.remove(&next) else {
                break;
            };
            let expiring = self.ledger.files_expiring_at(next);
            let expiring_manifests: Vec<FileManifest> = expiring
                .iter()
                .filter_map(|f| self.ledger.manifests.get(f).cloned())
                .collect();
            if self.ledger.apply_block(&cb).is_err() {
                break; // certificate or tx invalid: discard
            }
            self.post_apply(ctx, &cb, &expiring_manifests);
        }
    }

    fn post_apply(
        &mut self,
        ctx: &mut Ctx<NodeTimer>,
        cb: &CommittedBlock,
        expired: &[FileManifest],
    ) {
        let height = cb.block.header.height;
        self.commit_log.push(CommitRecord {
            height,
            round: cb.cert.round,
            at_ms: ctx.now,
            block_hash: cb.block.hash(),
            state_hash: self.ledger.state_hash(),
        });

        // replicas that missed the votes still get the block
        self.broadcast_all(ctx, &WireMsg::BlockSync(Box::new(cb.clone())));

        // threshold-signature weights may be re-issued from the table
        if self.cfg.wts_refresh_every > 0 && height % self.cfg.wts_refresh_every == 0 {
            self.wts_vk = self.wts_vk.with_weights(&self.ledger.weights.weights);
        }

        // storage-miner reaction to committed store transactions
        let files: Vec<FileId> = cb
            .block
            .txs
            .iter()
            .filter_map(|tx| match &tx.payload {
                TxPayload::Store(p) => Some(p.file_id),
                _ => None,
            })
            .collect();
        for file in files {
            self.on_store_committed(ctx, file);
        }

        // local cleanup for expired files
        for manifest in expired {
            for (i, sid) in manifest.placement.iter().enumerate() {
                let index = ChunkIndex(i as u16 + 1);
                if let Some(sector) = self.sectors.get_mut(sid) {
                    sector.remove_chunk(manifest.file_id, index);
                }
                self.aggregates.remove(&(manifest.file_id, index));
                self.partials.remove(&(manifest.file_id, index));
            }
        }

        // drop mempool entries that no longer validate
        let stale: Vec<Hash256> = self
            .mempool
            .iter()
            .filter(|(_, tx)| self.ledger.validate_tx(tx).is_err())
            .map(|(id, _)| *id)
            .collect();
        for id in stale {
            self.mempool.remove(&id);
            self.my_pending.remove(&id);
        }

        self.check_pos_due(ctx);

        // rebroadcast own still-pending transactions
        let pending: Vec<Transaction> = self
            .my_pending
            .iter()
            .filter_map(|id| self.mempool.get(id).cloned())
            .collect();
        for tx in pending {
            self.broadcast_miners(ctx, &WireMsg::Tx(tx));
        }

        // pace the next height
        if height + 1 > self.next_height_scheduled {
            self.next_height_scheduled = height + 1;
            ctx.set_timer(
                self.cfg.block_interval_ms,
                NodeTimer::Miner(MinerTimer::StartHeight { height: height + 1 }),
            );
        }
    }

    /// Submit proofs for own sectors whose next epoch is due.
    fn check_pos_due(&mut self, ctx: &mut Ctx<NodeTimer>) {
        let height = self.ledger.height;
        let period = self.cfg.chain.pos_period;
        let due: Vec<(SectorId, u64, Hash256)> = self
            .ledger
            .sectors
            .iter()
            .filter(|(sid, rec)| {
                rec.owner == self.me
                    && !rec.faulted
                    && self.sectors.contains_key(sid)
                    && height >= rec.committed_at + (rec.last_epoch + 1) * period
            })
            .map(|(sid, rec)| (*sid, rec.last_epoch + 1, rec.last_digest))
            .collect();
        for (sid, epoch, last_digest) in due {
            let already_pending = self.mempool.values().any(|tx| {
                matches!(&tx.payload, TxPayload::Pos(p) if p.sector == sid && p.epoch == epoch)
            });
            if already_pending {
                continue;
            }
            let sector = &self.sectors[&sid];
            let index = challenge_index(&last_digest, sector.tree.leaf_count());
            let proof = prove(&sector.tree, &sector.data, sid, epoch, index)
                .expect("challenge index in range");
            let tx = Transaction::sign(
                TxPayload::Pos(PosPayload {
                    sector: sid,
                    epoch,
                    proof,
                    new_root: sector.tree.root(),
                }),
                self.me,
                &self.sk,
            );
            self.submit_tx(ctx, tx);
        }
    }

    // -- put flow (storage side) ---------------------------------------------

    /// A store transaction committed: verify the id binding, expand the
    /// data fingerprints to all n chunks, sign each, and route the shares
    /// to the chunk hosts.
    fn on_store_committed(&mut self, ctx: &mut Ctx<NodeTimer>, file: FileId) {
        let Some(manifest) = self.ledger.manifests.get(&file).cloned() else {
            return;
        };
        if self.ledger.weights.weight(self.me) > 0 {
            let all_fps = self.expand_fingerprints(&manifest);
            for (i, sid) in manifest.placement.iter().enumerate() {
                let index = (i + 1) as u16;
                let msg = chunk_message(&file, index, &all_fps[i]);
                let partial = wts::wts_psign(&msg, &self.wts_sk);
                let host = self.ledger.sectors[sid].owner;
                if host == self.me {
                    self.accept_partial(ctx, file, index, partial);
                } else {
                    let wire = WireMsg::Partial {
                        file_id: file,
                        index,
                        partial,
                    };
                    let node = self.cfg.node_of(host);
                    self.send_wire(ctx, node, &wire);
                }
            }
        }

        // encoder role: a buffered upload can proceed now
        if self.file_buffer.contains_key(&file) {
            self.encode_and_distribute(ctx, file);
        }

        // partials that arrived before the manifest can now be counted
        let indices: Vec<u16> = (1..=manifest.n).collect();
        for index in indices {
            self.try_form_aggregate(ctx, file, index);
        }
    }

    /// Apply the generator to the manifest's data-chunk fingerprints,
    /// yielding the expected fingerprint of every chunk.
    fn expand_fingerprints(&mut self, manifest: &FileManifest) -> Vec<[u8; 8]> {
        let fp_params = self.cfg.fp;
        let gen = self.generator(manifest.k, manifest.n - manifest.k).clone();
        let data_fps: Vec<Fingerprint> = manifest
            .fingerprints
            .iter()
            .map(|fp| Fingerprint::from_be_bytes(*fp, &fp_params))
            .collect();
        hf_encode(&data_fps, &gen)
            .expect("manifest fingerprint count matches k")
            .iter()
            .map(|fp| fp.to_be_bytes())
            .collect()
    }

    fn accept_partial(
        &mut self,
        ctx: &mut Ctx<NodeTimer>,
        file: FileId,
        index: u16,
        partial: PartialSignature,
    ) {
        self.partials
            .entry((file, ChunkIndex(index)))
            .or_default()
            .insert(partial.signer, partial);
        self.try_form_aggregate(ctx, file, index);
    }

    /// Aggregate the moment distinct-signer weight reaches f + 1; invalid
    /// shares are dropped and counted.
    fn try_form_aggregate(&mut self, ctx: &mut Ctx<NodeTimer>, file: FileId, index: u16) {
        let key = (file, ChunkIndex(index));
        if self.aggregates.contains_key(&key) || !self.partials.contains_key(&key) {
            return;
        }
        let Some(manifest) = self.ledger.manifests.get(&file).cloned() else {
            return;
        };
        let all_fps = self.expand_fingerprints(&manifest);
        let msg = chunk_message(&file, index, &all_fps[index as usize - 1]);

        let mut valid: Vec<PartialSignature> = Vec::new();
        let mut weight = 0u64;
        let mut invalid: Vec<MinerId> = Vec::new();
        for (signer, p) in &self.partials[&key] {
            if wts::partial_valid(p, &msg, &self.wts_vk.entries) {
                weight += self.wts_vk.weight_of(*signer);
                valid.push(p.clone());
            } else {
                invalid.push(*signer);
            }
        }
        if !invalid.is_empty() {
            self.rejected_partials += invalid.len() as u64;
            let map = self.partials.get_mut(&key).unwrap();
            for signer in invalid {
                map.remove(&signer);
            }
        }
        if weight >= manifest.threshold() {
            let agg = AggregateSignature { parts: valid };
            self.aggregates.insert(key, agg);
            self.partials.remove(&key); // first sufficient aggregate wins
            if let Some(payload) = self.chunk_buffer.remove(&key) {
                self.try_store_chunk(ctx, file, index, payload);
            }
        }
    }

    /// Verify a delivered chunk against its aggregate-certified
    /// fingerprint and write it into the hosting sector.
    fn try_store_chunk(
        &mut self,
        ctx: &mut Ctx<NodeTimer>,
        file: FileId,
        index: u16,
        payload: Vec<u8>,
    ) {
        let key = (file, ChunkIndex(index));
        let Some(manifest) = self.ledger.manifests.get(&file).cloned() else {
            self.buffer_chunk(file, index, payload);
            return;
        };
        let Some(agg) = self.aggregates.get(&key).cloned() else {
            self.buffer_chunk(file, index, payload);
            return;
        };
        if self.sectors.values().any(|s| s.chunks.contains_key(&key)) {
            return; // duplicate delivery
        }
        let client_node = self.cfg.node_of(manifest.submitter);
        if payload.len() as u64 != manifest.chunk_size {
            self.rejected_chunks += 1;
            self.send_wire(ctx, client_node, &WireMsg::PutNack { file_id: file, index });
            return;
        }
        let Ok(fp) = hf_compute(&payload, &self.cfg.fp) else {
            self.rejected_chunks += 1;
            self.send_wire(ctx, client_node, &WireMsg::PutNack { file_id: file, index });
            return;
        };
        let msg = chunk_message(&file, index, &fp.to_be_bytes());
        if !wts::wts_verify(&msg, &agg, &self.wts_vk, manifest.threshold()) {
            // fingerprint mismatch: the encoder delivered a wrong chunk
            self.rejected_chunks += 1;
            self.send_wire(ctx, client_node, &WireMsg::PutNack { file_id: file, index });
            return;
        }
        let sid = manifest.placement[index as usize - 1];
        let Some(sector) = self.sectors.get_mut(&sid) else {
            return; // not the host (stale placement)
        };
        if sector.write_chunk(file, ChunkIndex(index), &payload).is_none() {
            return; // no capacity: the chain-side check makes this unreachable
        }
        // generation attack: ack then silently drop the bytes
        let discard = match &mut self.adversary {
            Some(adv) => adv.discard_after_store(file, ChunkIndex(index)),
            None => false,
        };
        if discard {
            if let Some(sector) = self.sectors.get_mut(&sid) {
                sector.discard_silently(file, ChunkIndex(index));
            }
        }
        self.send_wire(ctx, client_node, &WireMsg::StoredAck { file_id: file, index });
    }

    fn buffer_chunk(&mut self, file: FileId, index: u16, payload: Vec<u8>) {
        if self.chunk_buffer.len() >= CHUNK_BUFFER_CAP {
            self.chunk_buffer.pop_first();
        }
        self.chunk_buffer.insert((file, ChunkIndex(index)), payload);
    }

    // -- encoder role ---------------------------------------------------------

    fn on_file_upload(&mut self, ctx: &mut Ctx<NodeTimer>, file: FileId, data: Vec<u8>) {
        self.file_buffer.insert(file, data);
        if self.ledger.manifests.contains_key(&file) {
            self.encode_and_distribute(ctx, file);
        }
    }

    /// Encode the buffered file per the committed manifest and send chunk
    /// i to the host of the i-th placement sector.
    fn encode_and_distribute(&mut self, ctx: &mut Ctx<NodeTimer>, file: FileId) {
        let Some(data) = self.file_buffer.remove(&file) else {
            return;
        };
        let Some(manifest) = self.ledger.manifests.get(&file).cloned() else {
            return;
        };
        // integrity of the upload: recompute the id from the file bytes
        let padded = super::pad_file(&data, manifest.k as u64);
        if padded.len() as u64 != manifest.padded_len() || (data.len() as u64) != manifest.true_len
        {
            return; // upload does not match the manifest; client will retry
        }
        let rows = super::split_file(&padded, manifest.k as u64);
        let fps: Vec<[u8; 8]> = rows
            .iter()
            .map(|row| hf_compute(row, &self.cfg.fp).unwrap().to_be_bytes())
            .collect();
        if crate::ledger::StorePayload::derived_id(&fps) != file {
            return;
        }

        let gen = self.generator(manifest.k, manifest.n - manifest.k).clone();
        let encoded = rs_encode(&rows, &gen).expect("rows match generator");
        let mut payloads: Vec<Vec<u8>> = encoded
            .into_chunks()
            .into_iter()
            .map(|c| c.payload)
            .collect();
        if let Some(adv) = &mut self.adversary {
            adv.corrupt_encoding(&mut payloads, manifest.k as usize);
        }

        for (i, payload) in payloads.into_iter().enumerate() {
            let index = (i + 1) as u16;
            let sid = manifest.placement[i];
            let host = self.ledger.sectors[&sid].owner;
            if host == self.me {
                self.try_store_chunk(ctx, file, index, payload);
            } else {
                let node = self.cfg.node_of(host);
                self.send_wire(
                    ctx,
                    node,
                    &WireMsg::Chunk {
                        file_id: file,
                        index,
                        payload,
                    },
                );
            }
        }
    }

    // -- retrieval role --------------------------------------------------------

    fn on_get_request(&mut self, ctx: &mut Ctx<NodeTimer>, client: NodeId, file: FileId) {
        match self.adversary.as_mut().map(|a| a.retrieval_behavior()) {
            Some(RetrievalAction::Stall) => return,
            Some(RetrievalAction::Garbage) => {
                let junk_len = self
                    .ledger
                    .manifests
                    .get(&file)
                    .map(|m| m.true_len)
                    .unwrap_or(64);
                let data = vec![0xA5u8; junk_len as usize];
                self.send_wire(
                    ctx,
                    client,
                    &WireMsg::GetResponse {
                        file_id: file,
                        data: Some(data),
                    },
                );
                return;
            }
            _ => {}
        }

        let Some(manifest) = self.ledger.manifests.get(&file).cloned() else {
            self.send_wire(
                ctx,
                client,
                &WireMsg::GetResponse {
                    file_id: file,
                    data: None,
                },
            );
            return;
        };
        if self.retrievals.len() >= RETRIEVAL_SESSION_CAP {
            let oldest = self
                .retrievals
                .iter()
                .min_by_key(|(_, s)| s.started_at)
                .map(|(f, _)| *f);
            if let Some(f) = oldest {
                self.retrievals.remove(&f);
            }
        }
        self.retrievals.insert(
            file,
            RetrievalSession {
                client,
                started_at: ctx.now,
                collected: BTreeMap::new(),
                done: false,
            },
        );

        // fan out to every distinct host, serving own sectors inline
        let hosts: BTreeSet<MinerId> = manifest
            .placement
            .iter()
            .filter_map(|sid| self.ledger.sectors.get(sid).map(|r| r.owner))
            .collect();
        for host in hosts {
            if host == self.me {
                let own = self.collect_own_chunks(&manifest);
                for (index, payload, aggregate) in own {
                    self.on_chunk_response(ctx, file, index, payload, aggregate);
                }
            } else {
                let node = self.cfg.node_of(host);
                self.send_wire(ctx, node, &WireMsg::GetBroadcast { file_id: file });
            }
        }
    }

    fn collect_own_chunks(
        &mut self,
        manifest: &FileManifest,
    ) -> Vec<(u16, Vec<u8>, AggregateSignature)> {
        let mut out = Vec::new();
        for (i, sid) in manifest.placement.iter().enumerate() {
            let index = ChunkIndex(i as u16 + 1);
            let Some(sector) = self.sectors.get(sid) else {
                continue;
            };
            let Some(payload) = sector.chunk_payload(manifest.file_id, index) else {
                continue;
            };
            let Some(agg) = self.aggregates.get(&(manifest.file_id, index)).cloned() else {
                continue;
            };
            let action = match &mut self.adversary {
                Some(adv) => adv.serve_chunk(manifest.file_id, index, payload),
                None => ServeAction::Serve(payload),
            };
            if let ServeAction::Serve(payload) = action {
                out.push((index.0, payload, agg));
            }
        }
        out
    }

    fn on_get_broadcast(&mut self, ctx: &mut Ctx<NodeTimer>, requester: NodeId, file: FileId) {
        let Some(manifest) = self.ledger.manifests.get(&file).cloned() else {
            return;
        };
        let served = self.collect_own_chunks(&manifest);
        for (index, payload, aggregate) in served {
            self.send_wire(
                ctx,
                requester,
                &WireMsg::ChunkResponse {
                    file_id: file,
                    index,
                    payload,
                    aggregate,
                },
            );
        }
    }

    /// Retrieval miner verifies each arriving chunk at threshold f + 1 and
    /// decodes as soon as K distinct verified chunks are in.
    fn on_chunk_response(
        &mut self,
        ctx: &mut Ctx<NodeTimer>,
        file: FileId,
        index: u16,
        payload: Vec<u8>,
        aggregate: AggregateSignature,
    ) {
        let Some(manifest) = self.ledger.manifests.get(&file).cloned() else {
            return;
        };
        if !self.retrievals.contains_key(&file) {
            return;
        }
        if self.retrievals[&file].done {
            return;
        }
        if index == 0 || index > manifest.n || payload.len() as u64 != manifest.chunk_size {
            return;
        }
        let Ok(fp) = hf_compute(&payload, &self.cfg.fp) else {
            return;
        };
        let msg = chunk_message(&file, index, &fp.to_be_bytes());
        if !wts::wts_verify(&msg, &aggregate, &self.wts_vk, manifest.threshold()) {
            return; // tampered or junk chunk: rejected
        }
        let session = self.retrievals.get_mut(&file).unwrap();
        session.collected.entry(index).or_insert(payload);
        if session.collected.len() as u16 >= manifest.k {
            let chunks: Vec<crate::galois::Chunk> = session
                .collected
                .iter()
                .take(manifest.k as usize)
                .map(|(i, p)| crate::galois::Chunk {
                    index: ChunkIndex(*i),
                    payload: p.clone(),
                })
                .collect();
            let client = session.client;
            session.done = true;
            let gen = self.generator(manifest.k, manifest.n - manifest.k).clone();
            let set = crate::galois::ChunkSet::new(chunks, manifest.n as usize)
                .expect("verified chunks are well-formed");
            let data = match crate::galois::rs_decode(&set, &gen, manifest.k as usize) {
                Ok(rows) => Some(super::concat_and_strip(&rows, manifest.true_len)),
                Err(_) => None,
            };
            self.retrievals.remove(&file);
            self.send_wire(
                ctx,
                client,
                &WireMsg::GetResponse {
                    file_id: file,
                    data,
                },
            );
        }
    }

    // -- SimNode plumbing -------------------------------------------------------

    pub fn on_start(&mut self, ctx: &mut Ctx<NodeTimer>) {
        let _ = &self.rng; // reserved for future randomized roles
        let table = self
            .ledger
            .table_at(0)
            .expect("genesis table present")
            .clone();
        let outs = self.with_host(|engine, host| engine.start_height(1, table, host));
        self.process_outputs(ctx, outs);
        ctx.set_timer(
            self.cfg.delta_ms * 4,
            NodeTimer::Miner(MinerTimer::Heartbeat),
        );

        // sybil strategy: fire the bogus pledges
        let pledges = std::mem::take(&mut self.sybil_pledges);
        for tx in pledges {
            let id = tx.id();
            self.seen_txs.insert(id);
            self.mempool.insert(id, tx.clone());
            self.my_pending.insert(id);
            self.broadcast_miners(ctx, &WireMsg::Tx(tx));
        }
    }

    pub fn on_message(&mut self, ctx: &mut Ctx<NodeTimer>, from: NodeId, payload: Vec<u8>) {
        let Ok(msg) = WireMsg::decode_all(&payload) else {
            return;
        };
        match msg {
            WireMsg::Consensus(cmsg) => {
                let h = cmsg.height();
                let current = self.engine.height();
                if h == current {
                    let outs = self.with_host(|engine, host| engine.on_message(cmsg, host));
                    self.process_outputs(ctx, outs);
                } else if h > current && h <= current + EARLY_CONSENSUS_HEIGHTS {
                    self.early_consensus.entry(h).or_default().push(cmsg);
                }
            }
            WireMsg::Tx(tx) => {
                let id = tx.id();
                if self.seen_txs.insert(id) {
                    // cheap admission: signature only; full validity is
                    // checked at proposal and application time
                    if let Some(pk) = self.cfg.chain.registry.get(&tx.submitter) {
                        if tx.signature_valid(pk) {
                            self.mempool.insert(id, tx);
                        }
                    }
                }
            }
            WireMsg::BlockSync(cb) => self.accept_block(ctx, *cb),
            WireMsg::FileUpload { file_id, data } => self.on_file_upload(ctx, file_id, data),
            WireMsg::Chunk {
                file_id,
                index,
                payload,
            } => self.try_store_chunk(ctx, file_id, index, payload),
            WireMsg::Partial {
                file_id,
                index,
                partial,
            } => self.accept_partial(ctx, file_id, index, partial),
            WireMsg::GetRequest { file_id } => self.on_get_request(ctx, from, file_id),
            WireMsg::GetBroadcast { file_id } => self.on_get_broadcast(ctx, from, file_id),
            WireMsg::ChunkResponse {
                file_id,
                index,
                payload,
                aggregate,
            } => self.on_chunk_response(ctx, file_id, index, payload, aggregate),
            WireMsg::StoredAck { .. } | WireMsg::PutNack { .. } | WireMsg::GetResponse { .. } => {}
        }
    }

    pub fn on_timer(&mut self, ctx: &mut Ctx<NodeTimer>, timer: MinerTimer) {
        match timer {
            MinerTimer::Consensus {
                height,
                round,
                step,
            } => {
                let outs =
                    self.with_host(|engine, host| engine.on_timeout(height, round, step, host));
                self.process_outputs(ctx, outs);
            }
            MinerTimer::Heartbeat => {
                ctx.set_timer(
                    self.cfg.delta_ms * 4,
                    NodeTimer::Miner(MinerTimer::Heartbeat),
                );
                let state = (self.engine.height(), self.engine.round(), self.engine.step());
                let stalled = state == self.last_heartbeat_state;
                self.last_heartbeat_state = state;
                if !stalled || self.engine.is_idle() {
                    return;
                }
                for cmsg in self.engine.known_messages() {
                    self.broadcast_miners(ctx, &WireMsg::Consensus(cmsg));
                }
            }
            MinerTimer::StartHeight { height } => {
                if height != self.ledger.height + 1 || self.engine.height() >= height {
                    return;
                }
                let table = self
                    .ledger
                    .table_at(height - 1)
                    .expect("parent table committed")
                    .clone();
                let outs = self.with_host(|engine, host| engine.start_height(height, table, host));
                self.process_outputs(ctx, outs);
                let early = self.early_consensus.remove(&height).unwrap_or_default();
                self.early_consensus.retain(|h, _| *h > height);
                for cmsg in early {
                    let outs = self.with_host(|engine, host| engine.on_message(cmsg, host));
                    self.process_outputs(ctx, outs);
                }
            }
        }
    }
}
