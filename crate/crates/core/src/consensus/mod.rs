//! Storage-weighted BFT consensus.
//!
//! Tendermint-style propose/prevote/precommit rounds where vote counting
//! is weighted by pledged sectors: a phase advances when the accumulated
//! distinct-voter weight reaches n - f (n = total sectors in the table,
//! f = floor((n-1)/3)), and a round skip needs weight f + 1. All locking
//! and valid-value rules follow the standard Tendermint algorithm; the
//! weight table snapshot for height h is the one committed at h - 1.
//!
//! The engine is a pure state machine: feed it proposals, votes and
//! timeout expirations, and it returns messages to broadcast, timeouts to
//! schedule, equivocation evidence, and at most one commit per height.
//! The host drives one engine per node and owns all networking.

pub mod reference;

use std::collections::{BTreeMap, BTreeSet};

use crate::codec::{CodecError, Decode, Encode, Reader};
use crate::hash::{domain, sha256_parts, Hash256};
use crate::ledger::{
    Block, CommitCert, CommittedBlock, SignedVote, Vote, VoteStep, WeightTable,
};
use crate::sig::{verify, PublicKey, SecretKey, Signature};
use crate::types::MinerId;

/// Where a node stands within the current round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Step {
    Propose,
    Prevote,
    Precommit,
    /// Height decided; waiting for the host to start the next one.
    Commit,
}

/// A proposed block with the proposer's valid-round hint (-1 when none).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Proposal {
    pub height: u64,
    pub round: u32,
    pub block: Block,
    pub valid_round: i64,
    pub proposer: MinerId,
}

impl Proposal {
    pub fn digest(&self) -> Hash256 {
        sha256_parts(&[&[domain::PROPOSAL], &self.encode_to_vec()])
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignedProposal {
    pub proposal: Proposal,
    pub signature: Signature,
}

impl SignedProposal {
    pub fn sign(proposal: Proposal, sk: &SecretKey) -> SignedProposal {
        let signature = sk.sign(domain::PROPOSAL, &proposal.digest());
        SignedProposal {
            proposal,
            signature,
        }
    }

    pub fn valid(&self, pk: &PublicKey) -> bool {
        verify(pk, domain::PROPOSAL, &self.proposal.digest(), &self.signature)
    }
}

/// Consensus wire messages (versioned, length handled by the transport).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConsensusMsg {
    Proposal(SignedProposal),
    Vote(SignedVote),
}

impl ConsensusMsg {
    pub fn height(&self) -> u64 {
        match self {
            ConsensusMsg::Proposal(p) => p.proposal.height,
            ConsensusMsg::Vote(v) => v.vote.height,
        }
    }
}

/// Effects for the host to execute.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Output {
    Broadcast(ConsensusMsg),
    Schedule {
        height: u64,
        round: u32,
        step: Step,
        delay_ms: u64,
    },
    Commit(Box<CommittedBlock>),
    Evidence(Box<(SignedVote, SignedVote)>),
}

/// Block construction and validation services supplied by the host.
pub trait BlockSource {
    fn build_block(&mut self, height: u64, round: u32) -> Block;
    fn block_valid(&mut self, block: &Block) -> bool;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeoutConfig {
    pub delta_ms: u64,
}

impl TimeoutConfig {
    /// Initial timeout of 4 delta, growing by one delta per round, for all
    /// three steps.
    pub fn timeout_ms(&self, round: u32) -> u64 {
        self.delta_ms * (4 + round as u64)
    }
}

/// Deterministic weighted rotation: miners occupy consecutive slots
/// proportional to weight (in id order) and slot (height + round) mod
/// total-weight picks the proposer.
pub fn select_proposer(height: u64, round: u32, table: &WeightTable) -> Option<MinerId> {
    let total = table.total();
    if total == 0 {
        return None;
    }
    let slot = (height.wrapping_add(round as u64)) % total;
    let mut acc = 0u64;
    for (miner, weight) in table.miners() {
        acc += weight;
        if slot < acc {
            return Some(miner);
        }
    }
    None
}

#[derive(Debug, Default)]
struct VoteSet {
    votes: BTreeMap<MinerId, SignedVote>,
    weight_by_target: BTreeMap<Option<Hash256>, u64>,
    total_weight: u64,
}

impl VoteSet {
    fn add(&mut self, sv: SignedVote, weight: u64) {
        if self.votes.contains_key(&sv.vote.voter) {
            return;
        }
        *self
            .weight_by_target
            .entry(sv.vote.block_hash)
            .or_insert(0) += weight;
        self.total_weight += weight;
        self.votes.insert(sv.vote.voter, sv);
    }

    fn weight_for(&self, target: &Option<Hash256>) -> u64 {
        self.weight_by_target.get(target).copied().unwrap_or(0)
    }

    fn votes_for(&self, target: &Option<Hash256>) -> Vec<SignedVote> {
        self.votes
            .values()
            .filter(|sv| sv.vote.block_hash == *target)
            .cloned()
            .collect()
    }
}

/// One node's consensus instance for a single chain.
pub struct Engine {
    me: MinerId,
    sk: SecretKey,
    registry: BTreeMap<MinerId, PublicKey>,
    cfg: TimeoutConfig,

    height: u64,
    round: u32,
    step: Step,
    idle: bool,
    table: WeightTable,

    locked_value: Option<Block>,
    locked_round: i64,
    valid_value: Option<Block>,
    valid_round: i64,

    proposals: BTreeMap<u32, SignedProposal>,
    prevotes: BTreeMap<u32, VoteSet>,
    precommits: BTreeMap<u32, VoteSet>,
    round_senders: BTreeMap<u32, BTreeSet<MinerId>>,

    sent_prevote: BTreeSet<u32>,
    sent_precommit: BTreeSet<u32>,
    prevote_timeout_scheduled: BTreeSet<u32>,
    precommit_timeout_scheduled: BTreeSet<u32>,
    relock_applied: BTreeSet<u32>,

    first_votes: BTreeMap<(MinerId, u32, VoteStep), SignedVote>,
    evidence_emitted: BTreeSet<MinerId>,
    validity_cache: BTreeMap<Hash256, bool>,
}

impl Engine {
    pub fn new(
        me: MinerId,
        sk: SecretKey,
        registry: BTreeMap<MinerId, PublicKey>,
        cfg: TimeoutConfig,
    ) -> Engine {
        Engine {
            me,
            sk,
            registry,
            cfg,
            height: 0,
            round: 0,
            step: Step::Commit,
            idle: true,
            table: WeightTable::default(),
            locked_value: None,
            locked_round: -1,
            valid_value: None,
            valid_round: -1,
            proposals: BTreeMap::new(),
            prevotes: BTreeMap::new(),
            precommits: BTreeMap::new(),
            round_senders: BTreeMap::new(),
            sent_prevote: BTreeSet::new(),
            sent_precommit: BTreeSet::new(),
            prevote_timeout_scheduled: BTreeSet::new(),
            precommit_timeout_scheduled: BTreeSet::new(),
            relock_applied: BTreeSet::new(),
            first_votes: BTreeMap::new(),
            evidence_emitted: BTreeSet::new(),
            validity_cache: BTreeMap::new(),
        }
    }

    pub fn height(&self) -> u64 {
        self.height
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn step(&self) -> Step {
        self.step
    }

    pub fn is_idle(&self) -> bool {
        self.idle
    }

    fn quorum(&self) -> u64 {
        self.table.quorum()
    }

    fn skip_threshold(&self) -> u64 {
        self.table.f() + 1
    }

    /// Begin consensus for `height` with the weight table committed at
    /// `height - 1`.
    pub fn start_height(
        &mut self,
        height: u64,
        table: WeightTable,
        host: &mut impl BlockSource,
    ) -> Vec<Output> {
        self.height = height;
        self.table = table;
        self.idle = false;
        self.locked_value = None;
        self.locked_round = -1;
        self.valid_value = None;
        self.valid_round = -1;
        self.proposals.clear();
        self.prevotes.clear();
        self.precommits.clear();
        self.round_senders.clear();
        self.sent_prevote.clear();
        self.sent_precommit.clear();
        self.prevote_timeout_scheduled.clear();
        self.precommit_timeout_scheduled.clear();
        self.relock_applied.clear();
        self.first_votes.clear();
        self.evidence_emitted.clear();
        self.validity_cache.clear();

        let mut out = Vec::new();
        self.start_round(0, host, &mut out);
        self.poll(host, &mut out);
        out
    }

    fn start_round(&mut self, round: u32, host: &mut impl BlockSource, out: &mut Vec<Output>) {
        self.round = round;
        self.step = Step::Propose;
        if select_proposer(self.height, round, &self.table) == Some(self.me) {
            let block = match &self.valid_value {
                Some(v) => v.clone(),
                None => host.build_block(self.height, round),
            };
            let proposal = Proposal {
                height: self.height,
                round,
                block,
                valid_round: self.valid_round,
                proposer: self.me,
            };
            let signed = SignedProposal::sign(proposal, &self.sk);
            out.push(Output::Broadcast(ConsensusMsg::Proposal(signed.clone())));
            self.ingest_proposal(signed);
        } else {
            out.push(Output::Schedule {
                height: self.height,
                round,
                step: Step::Propose,
                delay_ms: self.cfg.timeout_ms(round),
            });
        }
    }

    /// Handle a consensus message for the current height.
    pub fn on_message(&mut self, msg: ConsensusMsg, host: &mut impl BlockSource) -> Vec<Output> {
        let mut out = Vec::new();
        if msg.height() != self.height {
            return out;
        }
        match msg {
            ConsensusMsg::Proposal(sp) => {
                if self.proposal_acceptable(&sp) {
                    self.ingest_proposal(sp);
                }
            }
            ConsensusMsg::Vote(sv) => {
                self.ingest_vote(sv, &mut out);
            }
        }
        if !self.idle {
            self.poll(host, &mut out);
        }
        out
    }

    /// A scheduled timeout fired.
    pub fn on_timeout(
        &mut self,
        height: u64,
        round: u32,
        step: Step,
        host: &mut impl BlockSource,
    ) -> Vec<Output> {
        let mut out = Vec::new();
        if self.idle || height != self.height || round != self.round {
            return out;
        }
        match step {
            Step::Propose if self.step == Step::Propose => {
                self.emit_vote(VoteStep::Prevote, None, &mut out);
                self.step = Step::Prevote;
            }
            Step::Prevote if self.step == Step::Prevote => {
                self.emit_vote(VoteStep::Precommit, None, &mut out);
                self.step = Step::Precommit;
            }
            Step::Precommit => {
                self.start_round(round + 1, host, &mut out);
            }
            _ => return out,
        }
        self.poll(host, &mut out);
        out
    }

    fn proposal_acceptable(&self, sp: &SignedProposal) -> bool {
        let p = &sp.proposal;
        if p.height != self.height || p.valid_round >= p.round as i64 {
            return false;
        }
        if select_proposer(self.height, p.round, &self.table) != Some(p.proposer) {
            return false;
        }
        let Some(pk) = self.registry.get(&p.proposer) else {
            return false;
        };
        sp.valid(pk)
    }

    fn ingest_proposal(&mut self, sp: SignedProposal) {
        let round = sp.proposal.round;
        let sender = sp.proposal.proposer;
        self.proposals.entry(round).or_insert(sp);
        self.round_senders.entry(round).or_default().insert(sender);
    }

    fn ingest_vote(&mut self, sv: SignedVote, out: &mut Vec<Output>) {
        let v = &sv.vote;
        if v.height != self.height {
            return;
        }
        let weight = self.table.weight(v.voter);
        if weight == 0 {
            return;
        }
        let Some(pk) = self.registry.get(&v.voter) else {
            return;
        };
        if !sv.valid(pk) {
            return;
        }

        let key = (v.voter, v.round, v.step);
        if let Some(first) = self.first_votes.get(&key) {
            if first.vote.block_hash != v.block_hash && self.evidence_emitted.insert(v.voter) {
                out.push(Output::Evidence(Box::new((first.clone(), sv))));
            }
            return; // only the first vote per (voter, round, step) counts
        }
        self.first_votes.insert(key, sv.clone());
        self.round_senders.entry(v.round).or_default().insert(v.voter);

        let set = match v.step {
            VoteStep::Prevote => self.prevotes.entry(v.round).or_default(),
            VoteStep::Precommit => self.precommits.entry(v.round).or_default(),
        };
        set.add(sv, weight);
    }

    fn emit_vote(&mut self, step: VoteStep, target: Option<Hash256>, out: &mut Vec<Output>) {
        let sent = match step {
            VoteStep::Prevote => &mut self.sent_prevote,
            VoteStep::Precommit => &mut self.sent_precommit,
        };
        if !sent.insert(self.round) {
            return;
        }
        let vote = Vote {
            height: self.height,
            round: self.round,
            step,
            block_hash: target,
            voter: self.me,
        };
        let sv = SignedVote::sign(vote, &self.sk);
        out.push(Output::Broadcast(ConsensusMsg::Vote(sv.clone())));
        let mut scratch = Vec::new();
        self.ingest_vote(sv, &mut scratch);
        out.extend(scratch);
    }

    fn is_valid(&mut self, block: &Block, host: &mut impl BlockSource) -> bool {
        let hash = block.hash();
        if let Some(&v) = self.validity_cache.get(&hash) {
            return v;
        }
        let v = host.block_valid(block);
        self.validity_cache.insert(hash, v);
        v
    }

    /// Run the upon-rules to a fixpoint.
    fn poll(&mut self, host: &mut impl BlockSource, out: &mut Vec<Output>) {
        loop {
            if self.idle {
                return;
            }
            let before = out.len();
            let state = (self.round, self.step);

            self.rule_prevote_on_proposal(host, out);
            self.rule_prevote_quorum_timeout(out);
            self.rule_lock_and_precommit(host, out);
            self.rule_precommit_nil_on_nil_quorum(out);
            self.rule_precommit_quorum_timeout(out);
            self.rule_commit(host, out);
            if self.idle {
                return;
            }
            self.rule_round_skip(host, out);

            if out.len() == before && (self.round, self.step) == state {
                return;
            }
        }
    }

    /// Prevote for a fresh proposal (no valid-round) or re-prevote for a
    /// proposal carrying a proof-of-lock round.
    fn rule_prevote_on_proposal(&mut self, host: &mut impl BlockSource, out: &mut Vec<Output>) {
        if self.step != Step::Propose {
            return;
        }
        let Some(sp) = self.proposals.get(&self.round) else {
            return;
        };
        let proposal = sp.proposal.clone();
        let block_hash = proposal.block.hash();
        let vr = proposal.valid_round;

        if vr < 0 {
            let ok = self.is_valid(&proposal.block, host)
                && (self.locked_round == -1
                    || self.locked_value.as_ref().map(|b| b.hash()) == Some(block_hash));
            self.emit_vote(VoteStep::Prevote, ok.then_some(block_hash), out);
            self.step = Step::Prevote;
        } else {
            let pol = self
                .prevotes
                .get(&(vr as u32))
                .map(|s| s.weight_for(&Some(block_hash)))
                .unwrap_or(0);
            if pol < self.quorum() {
                return;
            }
            let ok = self.is_valid(&proposal.block, host)
                && (self.locked_round <= vr
                    || self.locked_value.as_ref().map(|b| b.hash()) == Some(block_hash));
            self.emit_vote(VoteStep::Prevote, ok.then_some(block_hash), out);
            self.step = Step::Prevote;
        }
    }

    /// Any-value prevote quorum in the current round arms the prevote
    /// timeout once.
    fn rule_prevote_quorum_timeout(&mut self, out: &mut Vec<Output>) {
        if self.step != Step::Prevote {
            return;
        }
        let total = self
            .prevotes
            .get(&self.round)
            .map(|s| s.total_weight)
            .unwrap_or(0);
        if total >= self.quorum() && self.prevote_timeout_scheduled.insert(self.round) {
            out.push(Output::Schedule {
                height: self.height,
                round: self.round,
                step: Step::Prevote,
                delay_ms: self.cfg.timeout_ms(self.round),
            });
        }
    }

    /// Proposal plus prevote quorum for it: lock, precommit, and remember
    /// the valid value.
    fn rule_lock_and_precommit(&mut self, host: &mut impl BlockSource, out: &mut Vec<Output>) {
        if self.step < Step::Prevote || self.step == Step::Commit {
            return;
        }
        if self.relock_applied.contains(&self.round) {
            return;
        }
        let Some(sp) = self.proposals.get(&self.round) else {
            return;
        };
        let block = sp.proposal.block.clone();
        let hash = block.hash();
        let weight = self
            .prevotes
            .get(&self.round)
            .map(|s| s.weight_for(&Some(hash)))
            .unwrap_or(0);
        if weight < self.quorum() || !self.is_valid(&block, host) {
            return;
        }
        self.relock_applied.insert(self.round);
        if self.step == Step::Prevote {
            self.locked_value = Some(block.clone());
            self.locked_round = self.round as i64;
            self.emit_vote(VoteStep::Precommit, Some(hash), out);
            self.step = Step::Precommit;
        }
        self.valid_value = Some(block);
        self.valid_round = self.round as i64;
    }

    /// Nil prevote quorum: give up on the round's proposal.
    fn rule_precommit_nil_on_nil_quorum(&mut self, out: &mut Vec<Output>) {
        if self.step != Step::Prevote {
            return;
        }
        let nil = self
            .prevotes
            .get(&self.round)
            .map(|s| s.weight_for(&None))
            .unwrap_or(0);
        if nil >= self.quorum() {
            self.emit_vote(VoteStep::Precommit, None, out);
            self.step = Step::Precommit;
        }
    }

    /// Any-value precommit quorum arms the precommit timeout once.
    fn rule_precommit_quorum_timeout(&mut self, out: &mut Vec<Output>) {
        let total = self
            .precommits
            .get(&self.round)
            .map(|s| s.total_weight)
            .unwrap_or(0);
        if total >= self.quorum() && self.precommit_timeout_scheduled.insert(self.round) {
            out.push(Output::Schedule {
                height: self.height,
                round: self.round,
                step: Step::Precommit,
                delay_ms: self.cfg.timeout_ms(self.round),
            });
        }
    }

    /// Precommit quorum for a proposed block in any round decides the
    /// height and yields the commit certificate.
    fn rule_commit(&mut self, host: &mut impl BlockSource, out: &mut Vec<Output>) {
        let rounds: Vec<u32> = self.proposals.keys().copied().collect();
        for r in rounds {
            let block = self.proposals[&r].proposal.block.clone();
            let hash = block.hash();
            let weight = self
                .precommits
                .get(&r)
                .map(|s| s.weight_for(&Some(hash)))
                .unwrap_or(0);
            if weight < self.quorum() || !self.is_valid(&block, host) {
                continue;
            }
            let votes = self.precommits[&r].votes_for(&Some(hash));
            out.push(Output::Commit(Box::new(CommittedBlock {
                block,
                cert: CommitCert { round: r, votes },
            })));
            self.step = Step::Commit;
            self.idle = true;
            return;
        }
    }

    /// Everything this node knows about the current height, for gossip
    /// retransmission. Post-GST retransmission of known state is what
    /// guarantees rounds keep advancing after pre-GST message loss.
    pub fn known_messages(&self) -> Vec<ConsensusMsg> {
        let mut out = Vec::new();
        for sp in self.proposals.values() {
            out.push(ConsensusMsg::Proposal(sp.clone()));
        }
        for set in self.prevotes.values() {
            for sv in set.votes.values() {
                out.push(ConsensusMsg::Vote(sv.clone()));
            }
        }
        for set in self.precommits.values() {
            for sv in set.votes.values() {
                out.push(ConsensusMsg::Vote(sv.clone()));
            }
        }
        out
    }

    /// Messages of weight f+1 from a higher round pull us forward.
    fn rule_round_skip(&mut self, host: &mut impl BlockSource, out: &mut Vec<Output>) {
        let target = self
            .round_senders
            .range(self.round + 1..)
            .find_map(|(r, senders)| {
                let w: u64 = senders.iter().map(|m| self.table.weight(*m)).sum();
                (w >= self.skip_threshold()).then_some(*r)
            });
        if let Some(r) = target {
            self.start_round(r, host, out);
        }
    }
}

impl Encode for Step {
    fn encode(&self, out: &mut Vec<u8>) {
        out.push(match self {
            Step::Propose => 0,
            Step::Prevote => 1,
            Step::Precommit => 2,
            Step::Commit => 3,
        });
    }
}

impl Decode for Step {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        match r.u8()? {
            0 => Ok(Step::Propose),
            1 => Ok(Step::Prevote),
            2 => Ok(Step::Precommit),
            3 => Ok(Step::Commit),
            tag => Err(CodecError::Tag { what: "step", tag }),
        }
    }
}

impl Encode for Proposal {
    fn encode(&self, out: &mut Vec<u8>) {
        self.height.encode(out);
        self.round.encode(out);
        self.block.encode(out);
        (self.valid_round as u64).encode(out);
        self.proposer.encode(out);
    }
}

impl Decode for Proposal {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Proposal {
            height: r.u64()?,
            round: r.u32()?,
            block: Block::decode(r)?,
            valid_round: r.u64()? as i64,
            proposer: MinerId::decode(r)?,
        })
    }
}

impl Encode for SignedProposal {
    fn encode(&self, out: &mut Vec<u8>) {
        self.proposal.encode(out);
        self.signature.encode(out);
    }
}

impl Decode for SignedProposal {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(SignedProposal {
            proposal: Proposal::decode(r)?,
            signature: Signature::decode(r)?,
        })
    }
}

impl Encode for ConsensusMsg {
    fn encode(&self, out: &mut Vec<u8>) {
        match self {
            ConsensusMsg::Proposal(p) => {
                out.push(0);
                p.encode(out);
            }
            ConsensusMsg::Vote(v) => {
                out.push(1);
                v.encode(out);
            }
        }
    }
}

impl Decode for ConsensusMsg {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        match r.u8()? {
            0 => Ok(ConsensusMsg::Proposal(SignedProposal::decode(r)?)),
            1 => Ok(ConsensusMsg::Vote(SignedVote::decode(r)?)),
            tag => Err(CodecError::Tag {
                what: "consensus msg",
                tag,
            }),
        }
    }
}
