//! Unweighted Tendermint reference implementation.
//!
//! Counts distinct voters instead of sector weight; otherwise follows the
//! same round structure as the weighted engine. Kept as an independent
//! implementation (separate vote bookkeeping and counting code) so the
//! weighted engine can be differential-tested against it: with all weights
//! equal to one, both must produce identical output traces for identical
//! input schedules.

use std::collections::{BTreeMap, BTreeSet};

use crate::hash::Hash256;
use crate::ledger::{Block, CommitCert, CommittedBlock, SignedVote, Vote, VoteStep, WeightTable};
use crate::sig::{PublicKey, SecretKey};
use crate::types::MinerId;

use super::{BlockSource, ConsensusMsg, Output, Proposal, SignedProposal, Step, TimeoutConfig};

/// Count-based quorums over `n` voters, matching the weighted formulas
/// with every weight equal to one.
fn quorum_count(n: usize) -> usize {
    n - (n - 1) / 3
}

fn skip_count(n: usize) -> usize {
    (n - 1) / 3 + 1
}

pub struct RefEngine {
    me: MinerId,
    sk: SecretKey,
    registry: BTreeMap<MinerId, PublicKey>,
    voters: Vec<MinerId>,
    cfg: TimeoutConfig,

    height: u64,
    round: u32,
    step: Step,
    idle: bool,

    locked: Option<(Block, i64)>,
    valid: Option<(Block, i64)>,

    proposals: BTreeMap<u32, SignedProposal>,
    // (round, step) -> voter -> vote
    votes: BTreeMap<(u32, VoteStep), BTreeMap<MinerId, SignedVote>>,
    seen_in_round: BTreeMap<u32, BTreeSet<MinerId>>,

    voted: BTreeSet<(u32, VoteStep)>,
    armed: BTreeSet<(u32, VoteStep)>,
    locked_once: BTreeSet<u32>,
    evidence_sent: BTreeSet<MinerId>,
}

impl RefEngine {
    pub fn new(
        me: MinerId,
        sk: SecretKey,
        registry: BTreeMap<MinerId, PublicKey>,
        cfg: TimeoutConfig,
    ) -> RefEngine {
        RefEngine {
            me,
            sk,
            registry,
            voters: Vec::new(),
            cfg,
            height: 0,
            round: 0,
            step: Step::Commit,
            idle: true,
            locked: None,
            valid: None,
            proposals: BTreeMap::new(),
            votes: BTreeMap::new(),
            seen_in_round: BTreeMap::new(),
            voted: BTreeSet::new(),
            armed: BTreeSet::new(),
            locked_once: BTreeSet::new(),
            evidence_sent: BTreeSet::new(),
        }
    }

    /// The table is only used for the voter set; each listed miner counts
    /// as exactly one voter.
    pub fn start_height(
        &mut self,
        height: u64,
        table: WeightTable,
        host: &mut impl BlockSource,
    ) -> Vec<Output> {
        self.height = height;
        self.voters = table.miners().map(|(m, _)| m).collect();
        self.idle = false;
        self.locked = None;
        self.valid = None;
        self.proposals.clear();
        self.votes.clear();
        self.seen_in_round.clear();
        self.voted.clear();
        self.armed.clear();
        self.locked_once.clear();
        self.evidence_sent.clear();

        let mut out = Vec::new();
        self.enter_round(0, host, &mut out);
        self.drive(host, &mut out);
        out
    }

    pub fn on_message(&mut self, msg: ConsensusMsg, host: &mut impl BlockSource) -> Vec<Output> {
        let mut out = Vec::new();
        if msg.height() != self.height {
            return out;
        }
        match msg {
            ConsensusMsg::Proposal(sp) => self.accept_proposal(sp),
            ConsensusMsg::Vote(sv) => self.accept_vote(sv, &mut out),
        }
        if !self.idle {
            self.drive(host, &mut out);
        }
        out
    }

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
                self.cast(VoteStep::Prevote, None, &mut out);
                self.step = Step::Prevote;
            }
            Step::Prevote if self.step == Step::Prevote => {
                self.cast(VoteStep::Precommit, None, &mut out);
                self.step = Step::Precommit;
            }
            Step::Precommit => self.enter_round(round + 1, host, &mut out),
            _ => return out,
        }
        self.drive(host, &mut out);
        out
    }

    fn proposer_for(&self, round: u32) -> Option<MinerId> {
        if self.voters.is_empty() {
            return None;
        }
        let slot = (self.height.wrapping_add(round as u64)) as usize % self.voters.len();
        Some(self.voters[slot])
    }

    fn enter_round(&mut self, round: u32, host: &mut impl BlockSource, out: &mut Vec<Output>) {
        self.round = round;
        self.step = Step::Propose;
        if self.proposer_for(round) == Some(self.me) {
            let (block, vr) = match &self.valid {
                Some((b, vr)) => (b.clone(), *vr),
                None => (host.build_block(self.height, round), -1),
            };
            let sp = SignedProposal::sign(
                Proposal {
                    height: self.height,
                    round,
                    block,
                    valid_round: vr,
                    proposer: self.me,
                },
                &self.sk,
            );
            out.push(Output::Broadcast(ConsensusMsg::Proposal(sp.clone())));
            self.accept_proposal(sp);
        } else {
            out.push(Output::Schedule {
                height: self.height,
                round,
                step: Step::Propose,
                delay_ms: self.cfg.timeout_ms(round),
            });
        }
    }

    fn accept_proposal(&mut self, sp: SignedProposal) {
        let p = &sp.proposal;
        if p.height != self.height || p.valid_round >= p.round as i64 {
            return;
        }
        if self.proposer_for(p.round) != Some(p.proposer) {
            return;
        }
        let Some(pk) = self.registry.get(&p.proposer) else {
            return;
        };
        if !sp.valid(pk) {
            return;
        }
        self.seen_in_round
            .entry(p.round)
            .or_default()
            .insert(p.proposer);
        self.proposals.entry(p.round).or_insert(sp);
    }

    fn accept_vote(&mut self, sv: SignedVote, out: &mut Vec<Output>) {
        let v = sv.vote.clone();
        if v.height != self.height || !self.voters.contains(&v.voter) {
            return;
        }
        let Some(pk) = self.registry.get(&v.voter) else {
            return;
        };
        if !sv.valid(pk) {
            return;
        }
        let slot = self.votes.entry((v.round, v.step)).or_default();
        if let Some(first) = slot.get(&v.voter) {
            if first.vote.block_hash != v.block_hash && self.evidence_sent.insert(v.voter) {
                out.push(Output::Evidence(Box::new((first.clone(), sv))));
            }
            return;
        }
        slot.insert(v.voter, sv);
        self.seen_in_round.entry(v.round).or_default().insert(v.voter);
    }

    fn cast(&mut self, step: VoteStep, target: Option<Hash256>, out: &mut Vec<Output>) {
        if !self.voted.insert((self.round, step)) {
            return;
        }
        let sv = SignedVote::sign(
            Vote {
                height: self.height,
                round: self.round,
                step,
                block_hash: target,
                voter: self.me,
            },
            &self.sk,
        );
        out.push(Output::Broadcast(ConsensusMsg::Vote(sv.clone())));
        let mut scratch = Vec::new();
        self.accept_vote(sv, &mut scratch);
        out.extend(scratch);
    }

    fn count_for(&self, round: u32, step: VoteStep, target: &Option<Hash256>) -> usize {
        self.votes
            .get(&(round, step))
            .map(|m| {
                m.values()
                    .filter(|sv| sv.vote.block_hash == *target)
                    .count()
            })
            .unwrap_or(0)
    }

    fn count_any(&self, round: u32, step: VoteStep) -> usize {
        self.votes.get(&(round, step)).map(|m| m.len()).unwrap_or(0)
    }

    fn drive(&mut self, host: &mut impl BlockSource, out: &mut Vec<Output>) {
        loop {
            if self.idle {
                return;
            }
            let marker = (out.len(), self.round, self.step);
            let q = quorum_count(self.voters.len());

            // prevote on the current round's proposal
            if self.step == Step::Propose {
                if let Some(sp) = self.proposals.get(&self.round).cloned() {
                    let hash = sp.proposal.block.hash();
                    let vr = sp.proposal.valid_round;
                    let pol_ok = vr < 0
                        || self.count_for(vr as u32, VoteStep::Prevote, &Some(hash)) >= q;
                    if pol_ok {
                        let lock_ok = match &self.locked {
                            None => true,
                            Some((b, lr)) => {
                                b.hash() == hash || (vr >= 0 && *lr <= vr)
                            }
                        };
                        let ok = lock_ok && host.block_valid(&sp.proposal.block);
                        self.cast(VoteStep::Prevote, ok.then_some(hash), out);
                        self.step = Step::Prevote;
                    }
                }
            }

            // prevote quorum of any value arms the prevote timeout
            if self.step == Step::Prevote
                && self.count_any(self.round, VoteStep::Prevote) >= q
                && self.armed.insert((self.round, VoteStep::Prevote))
            {
                out.push(Output::Schedule {
                    height: self.height,
                    round: self.round,
                    step: Step::Prevote,
                    delay_ms: self.cfg.timeout_ms(self.round),
                });
            }

            // lock on proposal + prevote quorum for it
            if self.step >= Step::Prevote
                && self.step != Step::Commit
                && !self.locked_once.contains(&self.round)
            {
                if let Some(sp) = self.proposals.get(&self.round).cloned() {
                    let hash = sp.proposal.block.hash();
                    if self.count_for(self.round, VoteStep::Prevote, &Some(hash)) >= q
                        && host.block_valid(&sp.proposal.block)
                    {
                        self.locked_once.insert(self.round);
                        if self.step == Step::Prevote {
                            self.locked = Some((sp.proposal.block.clone(), self.round as i64));
                            self.cast(VoteStep::Precommit, Some(hash), out);
                            self.step = Step::Precommit;
                        }
                        self.valid = Some((sp.proposal.block.clone(), self.round as i64));
                    }
                }
            }

            // nil prevote quorum
            if self.step == Step::Prevote
                && self.count_for(self.round, VoteStep::Prevote, &None) >= q
            {
                self.cast(VoteStep::Precommit, None, out);
                self.step = Step::Precommit;
            }

            // precommit quorum of any value arms the precommit timeout
            if self.count_any(self.round, VoteStep::Precommit) >= q
                && self.armed.insert((self.round, VoteStep::Precommit))
            {
                out.push(Output::Schedule {
                    height: self.height,
                    round: self.round,
                    step: Step::Precommit,
                    delay_ms: self.cfg.timeout_ms(self.round),
                });
            }

            // commit on precommit quorum for any round's proposal
            let rounds: Vec<u32> = self.proposals.keys().copied().collect();
            for r in rounds {
                let sp = self.proposals[&r].clone();
                let hash = sp.proposal.block.hash();
                if self.count_for(r, VoteStep::Precommit, &Some(hash)) >= q
                    && host.block_valid(&sp.proposal.block)
                {
                    let votes: Vec<SignedVote> = self.votes[&(r, VoteStep::Precommit)]
                        .values()
                        .filter(|sv| sv.vote.block_hash == Some(hash))
                        .cloned()
                        .collect();
                    out.push(Output::Commit(Box::new(CommittedBlock {
                        block: sp.proposal.block,
                        cert: CommitCert { round: r, votes },
                    })));
                    self.step = Step::Commit;
                    self.idle = true;
                    return;
                }
            }

            // skip ahead on f+1 voters seen in a later round
            let skip = self
                .seen_in_round
                .range(self.round + 1..)
                .find(|(_, senders)| senders.len() >= skip_count(self.voters.len()))
                .map(|(r, _)| *r);
            if let Some(r) = skip {
                self.enter_round(r, host, out);
            }

            if marker == (out.len(), self.round, self.step) {
                return;
            }
        }
    }
}
