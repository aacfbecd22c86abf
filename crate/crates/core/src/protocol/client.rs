//! The client: drives the workload, owns put and get sessions, and
//! verifies every retrieved file against its on-chain identity.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::codec::{Decode, Encode};
use crate::fingerprint::hf_compute;
use crate::ledger::{
    LedgerState, RetrieveReportPayload, StorePayload, Transaction, TxPayload, WeightTable,
};
use crate::sig::SecretKey;
use crate::sim::{Ctx, NodeId};
use crate::types::{FileId, MinerId};

use super::messages::WireMsg;
use super::{Net, NodeTimer};

#[derive(Debug, Clone)]
pub enum ClientTimer {
    StartNext,
    PutDeadline { file: FileId, attempt: u32 },
    GetDeadline { file: FileId, attempt: u32 },
}

/// One workload entry: store a file of `size` bytes, then retrieve it
/// `gets` times.
#[derive(Debug, Clone)]
pub struct WorkItem {
    pub size: u64,
    pub gets: u32,
    pub expiry_height: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct PutRecord {
    pub file: FileId,
    pub bytes: u64,
    pub padded_bytes: u64,
    pub chunk_size: u64,
    pub n: u64,
    pub k: u64,
    pub started_ms: u64,
    pub completed_ms: Option<u64>,
    pub attempts: u32,
}

#[derive(Debug, Clone)]
pub struct GetRecord {
    pub file: FileId,
    pub ok: bool,
    pub tries: u32,
    pub started_ms: u64,
    pub completed_ms: Option<u64>,
}

struct PutSession {
    file: FileId,
    data: Vec<u8>,
    store_tx: Transaction,
    expected_n: u64,
    acks: BTreeSet<u16>,
    attempt: u32,
    tried_encoders: BTreeSet<MinerId>,
    nack_seen: bool,
    record: PutRecord,
}

struct GetSession {
    file: FileId,
    tries: u32,
    attempt: u32,
    started_ms: u64,
    current_rm: Option<MinerId>,
}

const MAX_PUT_ATTEMPTS: u32 = 12;

pub struct ClientNode {
    pub me: MinerId,
    pub node_id: NodeId,
    cfg: Net,
    sk: SecretKey,
    pub ledger: LedgerState,
    rng: ChaCha12Rng,

    workload: VecDeque<WorkItem>,
    max_get_tries: u32,
    gets_pending: VecDeque<FileId>,
    put: Option<PutSession>,
    get: Option<GetSession>,

    pending_blocks: BTreeMap<u64, crate::ledger::CommittedBlock>,

    pub originals: BTreeMap<FileId, Vec<u8>>,
    pub puts: Vec<PutRecord>,
    pub gets: Vec<GetRecord>,
    /// Retrieved bytes passed the id check but differ from the original
    /// upload; must stay zero.
    pub wrong_file_acceptances: u64,
}

impl ClientNode {
    pub fn new(
        me: MinerId,
        node_id: NodeId,
        cfg: Net,
        sk: SecretKey,
        ledger: LedgerState,
        workload: Vec<WorkItem>,
        max_get_tries: u32,
        seed: [u8; 32],
    ) -> ClientNode {
        ClientNode {
            me,
            node_id,
            cfg,
            sk,
            ledger,
            rng: ChaCha12Rng::from_seed(seed),
            workload: workload.into(),
            max_get_tries,
            gets_pending: VecDeque::new(),
            put: None,
            get: None,
            pending_blocks: BTreeMap::new(),
            originals: BTreeMap::new(),
            puts: Vec::new(),
            gets: Vec::new(),
            wrong_file_acceptances: 0,
        }
    }

    /// All puts and gets finished (successfully or exhausted).
    pub fn done(&self) -> bool {
        self.workload.is_empty()
            && self.gets_pending.is_empty()
            && self.put.is_none()
            && self.get.is_none()
    }

    fn weighted_pick(&mut self, exclude: &BTreeSet<MinerId>) -> Option<MinerId> {
        let table: &WeightTable = &self.ledger.weights;
        let candidates: Vec<(MinerId, u64)> =
            table.miners().filter(|(m, _)| !exclude.contains(m)).collect();
        let total: u64 = candidates.iter().map(|(_, w)| w).sum();
        if total == 0 {
            return None;
        }
        let mut slot = self.rng.gen_range(0..total);
        for (m, w) in candidates {
            if slot < w {
                return Some(m);
            }
            slot -= w;
        }
        None
    }

    fn broadcast_tx(&mut self, ctx: &mut Ctx<NodeTimer>, tx: &Transaction) {
        let wire = WireMsg::Tx(tx.clone());
        let payload = wire.encode_to_vec();
        for node in self.cfg.miner_nodes.clone() {
            if node != self.node_id {
                ctx.send(node, payload.clone());
            }
        }
    }

    // -- put ------------------------------------------------------------------

    fn start_next_item(&mut self, ctx: &mut Ctx<NodeTimer>) {
        if let Some(file) = self.gets_pending.pop_front() {
            self.begin_get(ctx, file);
            return;
        }
        let Some(item) = self.workload.pop_front() else {
            return;
        };
        self.begin_put(ctx, item);
    }

    /// Pad and split the file, fingerprint the data chunks, derive the
    /// file id, put the store transaction on chain, and hand the raw file
    /// to a weight-sampled encoding miner.
    fn begin_put(&mut self, ctx: &mut Ctx<NodeTimer>, item: WorkItem) {
        assert!(item.size > 0, "empty files are rejected up front");
        let n = self.ledger.n();
        let f = self.ledger.f();
        let k = n - f;
        let mut data = vec![0u8; item.size as usize];
        self.rng.fill_bytes(&mut data);

        let padded = super::pad_file(&data, k);
        let rows = super::split_file(&padded, k);
        let fingerprints: Vec<[u8; 8]> = rows
            .iter()
            .map(|row| hf_compute(row, &self.cfg.fp).unwrap().to_be_bytes())
            .collect();
        let file = StorePayload::derived_id(&fingerprints);
        let chunk_size = (padded.len() / k as usize) as u64;
        let store_tx = Transaction::sign(
            TxPayload::Store(StorePayload {
                file_id: file,
                fingerprints,
                chunk_size,
                true_len: item.size,
                expiry_height: item.expiry_height,
            }),
            self.me,
            &self.sk,
        );
        self.broadcast_tx(ctx, &store_tx);

        let record = PutRecord {
            file,
            bytes: item.size,
            padded_bytes: padded.len() as u64,
            chunk_size,
            n,
            k,
            started_ms: ctx.now,
            completed_ms: None,
            attempts: 1,
        };
        self.originals.insert(file, data.clone());
        for _ in 0..item.gets {
            self.gets_pending.push_back(file);
        }
        let mut session = PutSession {
            file,
            data,
            store_tx,
            expected_n: n,
            acks: BTreeSet::new(),
            attempt: 0,
            tried_encoders: BTreeSet::new(),
            nack_seen: false,
            record,
        };
        self.dispatch_to_encoder(ctx, &mut session);
        self.put = Some(session);
    }

    fn dispatch_to_encoder(&mut self, ctx: &mut Ctx<NodeTimer>, session: &mut PutSession) {
        session.attempt += 1;
        session.nack_seen = false;
        let mut encoder = self.weighted_pick(&session.tried_encoders);
        if encoder.is_none() {
            // every miner tried once: start over
            session.tried_encoders.clear();
            encoder = self.weighted_pick(&session.tried_encoders);
        }
        let Some(encoder) = encoder else {
            return;
        };
        session.tried_encoders.insert(encoder);
        let node = self.cfg.node_of(encoder);
        let wire = WireMsg::FileUpload {
            file_id: session.file,
            data: session.data.clone(),
        };
        ctx.send(node, wire.encode_to_vec());
        ctx.set_timer(
            self.cfg.put_deadline_ms(session.data.len() as u64),
            NodeTimer::Client(ClientTimer::PutDeadline {
                file: session.file,
                attempt: session.attempt,
            }),
        );
    }

    fn on_stored_ack(&mut self, ctx: &mut Ctx<NodeTimer>, file: FileId, index: u16) {
        let Some(session) = &mut self.put else {
            return;
        };
        if session.file != file {
            return;
        }
        session.acks.insert(index);
        if let Some(manifest) = self.ledger.manifests.get(&file) {
            session.expected_n = manifest.n as u64;
        }
        if (session.acks.len() as u64) >= session.expected_n {
            let mut session = self.put.take().unwrap();
            session.record.completed_ms = Some(ctx.now);
            session.record.attempts = session.attempt;
            self.puts.push(session.record);
            ctx.set_timer(1, NodeTimer::Client(ClientTimer::StartNext));
        }
    }

    fn on_put_nack(&mut self, ctx: &mut Ctx<NodeTimer>, file: FileId) {
        // a storage miner rejected a chunk: the encoder is bad, retry with
        // a different one right away (first nack per attempt only)
        let Some(session) = &mut self.put else {
            return;
        };
        if session.file != file || session.nack_seen {
            return;
        }
        session.nack_seen = true;
        if session.attempt >= MAX_PUT_ATTEMPTS {
            return;
        }
        let mut session = self.put.take().unwrap();
        self.dispatch_to_encoder(ctx, &mut session);
        self.put = Some(session);
    }

    fn on_put_deadline(&mut self, ctx: &mut Ctx<NodeTimer>, file: FileId, attempt: u32) {
        let Some(session) = &self.put else {
            return;
        };
        if session.file != file || session.attempt != attempt {
            return;
        }
        if session.attempt >= MAX_PUT_ATTEMPTS {
            let mut session = self.put.take().unwrap();
            session.record.attempts = session.attempt;
            self.puts.push(session.record);
            // drop queued gets for the failed file
            self.gets_pending.retain(|f| *f != file);
            ctx.set_timer(1, NodeTimer::Client(ClientTimer::StartNext));
            return;
        }
        let mut session = self.put.take().unwrap();
        // store tx may have been lost pre-GST: resubmit until visible
        if !self.ledger.manifests.contains_key(&file) {
            let tx = session.store_tx.clone();
            self.broadcast_tx(ctx, &tx);
        }
        self.dispatch_to_encoder(ctx, &mut session);
        self.put = Some(session);
    }

    // -- get ------------------------------------------------------------------

    fn begin_get(&mut self, ctx: &mut Ctx<NodeTimer>, file: FileId) {
        let mut session = GetSession {
            file,
            tries: 0,
            attempt: 0,
            started_ms: ctx.now,
            current_rm: None,
        };
        self.dispatch_to_retrieval_miner(ctx, &mut session);
        self.get = Some(session);
    }

    /// Weight-proportional sampling with replacement: each try draws
    /// independently, so the try count follows the geometric law the
    /// retry analysis expects.
    fn dispatch_to_retrieval_miner(&mut self, ctx: &mut Ctx<NodeTimer>, session: &mut GetSession) {
        session.tries += 1;
        session.attempt += 1;
        let Some(rm) = self.weighted_pick(&BTreeSet::new()) else {
            return;
        };
        session.current_rm = Some(rm);
        let node = self.cfg.node_of(rm);
        let wire = WireMsg::GetRequest { file_id: session.file };
        ctx.send(node, wire.encode_to_vec());
        let file_bytes = self
            .ledger
            .manifests
            .get(&session.file)
            .map(|m| m.padded_len())
            .unwrap_or(1 << 16);
        ctx.set_timer(
            self.cfg.get_timeout_ms(file_bytes),
            NodeTimer::Client(ClientTimer::GetDeadline {
                file: session.file,
                attempt: session.attempt,
            }),
        );
    }

    fn verify_retrieved(&self, file: FileId, data: &[u8]) -> bool {
        let Some(manifest) = self.ledger.manifests.get(&file) else {
            return false;
        };
        if data.len() as u64 != manifest.true_len {
            return false;
        }
        let padded = super::pad_file(data, manifest.k as u64);
        if padded.len() as u64 != manifest.padded_len() {
            return false;
        }
        let rows = super::split_file(&padded, manifest.k as u64);
        let fps: Vec<[u8; 8]> = rows
            .iter()
            .map(|row| hf_compute(row, &self.cfg.fp).unwrap().to_be_bytes())
            .collect();
        StorePayload::derived_id(&fps) == file
    }

    fn on_get_response(&mut self, ctx: &mut Ctx<NodeTimer>, file: FileId, data: Option<Vec<u8>>) {
        let Some(session) = &self.get else {
            return;
        };
        if session.file != file {
            return;
        }
        if let Some(bytes) = data {
            if self.verify_retrieved(file, &bytes) {
                if self.originals.get(&file).map(|o| o != &bytes).unwrap_or(true) {
                    self.wrong_file_acceptances += 1;
                }
                let session = self.get.take().unwrap();
                self.gets.push(GetRecord {
                    file,
                    ok: true,
                    tries: session.tries,
                    started_ms: session.started_ms,
                    completed_ms: Some(ctx.now),
                });
                ctx.set_timer(1, NodeTimer::Client(ClientTimer::StartNext));
                return;
            }
        }
        self.fail_get_try(ctx, file);
    }

    fn fail_get_try(&mut self, ctx: &mut Ctx<NodeTimer>, file: FileId) {
        let Some(session) = &self.get else {
            return;
        };
        if session.file != file {
            return;
        }
        // report the failed retrieval miner on chain, then try another
        if let Some(failed) = session.current_rm {
            let report = Transaction::sign(
                TxPayload::RetrieveReport(RetrieveReportPayload {
                    file_id: file,
                    failed_miner: failed,
                }),
                self.me,
                &self.sk,
            );
            if self.ledger.validate_tx(&report).is_ok() {
                self.broadcast_tx(ctx, &report);
            }
        }
        if self.get.as_ref().unwrap().tries >= self.max_get_tries {
            let session = self.get.take().unwrap();
            self.gets.push(GetRecord {
                file,
                ok: false,
                tries: session.tries,
                started_ms: session.started_ms,
                completed_ms: None,
            });
            ctx.set_timer(1, NodeTimer::Client(ClientTimer::StartNext));
            return;
        }
        let mut session = self.get.take().unwrap();
        self.dispatch_to_retrieval_miner(ctx, &mut session);
        self.get = Some(session);
    }

    fn on_get_deadline(&mut self, ctx: &mut Ctx<NodeTimer>, file: FileId, attempt: u32) {
        let Some(session) = &self.get else {
            return;
        };
        if session.file != file || session.attempt != attempt {
            return;
        }
        self.fail_get_try(ctx, file);
    }

    // -- chain replica ----------------------------------------------------------

    fn accept_block(&mut self, cb: crate::ledger::CommittedBlock) {
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
            if self.ledger.apply_block(&cb).is_err() {
                break;
            }
        }
    }

    // -- SimNode plumbing ---------------------------------------------------------

    pub fn on_start(&mut self, ctx: &mut Ctx<NodeTimer>) {
        if !self.workload.is_empty() {
            ctx.set_timer(1, NodeTimer::Client(ClientTimer::StartNext));
        }
    }

    pub fn on_message(&mut self, ctx: &mut Ctx<NodeTimer>, _from: NodeId, payload: Vec<u8>) {
        let Ok(msg) = WireMsg::decode_all(&payload) else {
            return;
        };
        match msg {
            WireMsg::BlockSync(cb) => self.accept_block(*cb),
            WireMsg::StoredAck { file_id, index } => self.on_stored_ack(ctx, file_id, index),
            WireMsg::PutNack { file_id, .. } => self.on_put_nack(ctx, file_id),
            WireMsg::GetResponse { file_id, data } => self.on_get_response(ctx, file_id, data),
            _ => {}
        }
    }

    pub fn on_timer(&mut self, ctx: &mut Ctx<NodeTimer>, timer: ClientTimer) {
        match timer {
            ClientTimer::StartNext => {
                if self.put.is_none() && self.get.is_none() {
                    self.start_next_item(ctx);
                }
            }
            ClientTimer::PutDeadline { file, attempt } => self.on_put_deadline(ctx, file, attempt),
            ClientTimer::GetDeadline { file, attempt } => self.on_get_deadline(ctx, file, attempt),
        }
    }
}
