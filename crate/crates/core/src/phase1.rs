//! Cloud formation by a tournament of two-node commit-reveal interactions.
//!
//! An interaction between the leaders of two fragments runs:
//!
//! 1. the initiator sends a formation request carrying the digest of its bid;
//! 2. the responder answers with its bid in the clear;
//! 3. the initiator reveals its bid, which must hash to the digest;
//! 4. the loser sends its client list to the winner;
//! 5. the loser tells each of its clients who the new leader is.
//!
//! Steps 1 to 4 cost one message each and step 5 one message per client, so
//! a full tournament over `n` nodes costs `4(n-1) + n_l` messages, where
//! `n_l` sums the loser client counts. Requests addressed to a client are
//! forwarded to its leader; forwards are logged separately.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auction::{bid_order, commit, BidValue};
use crate::crypto::{CryptoSuite, Digest};
use crate::message::{MessageKind, MessageLog};
use crate::NodeId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Phase1Error {
    #[error("{0} revealed a bid that does not match its commitment")]
    Cheat(NodeId),
    #[error("{0} is not a member of any fragment")]
    Membership(NodeId),
    #[error("{0} and {1} already belong to the same fragment")]
    SameFragment(NodeId, NodeId),
    #[error("a tournament needs at least two bidders, got {0}")]
    TooFewParticipants(usize),
    #[error("{0} appears more than once")]
    DuplicateNode(NodeId),
    #[error("schedule ended with {0} fragments")]
    Incomplete(usize),
}

/// A leader with its clients. `sd_fee` is the leader's bid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fragment {
    pub leader: NodeId,
    pub clients: BTreeSet<NodeId>,
    pub sd_fee: f64,
}

impl Fragment {
    pub fn singleton(leader: NodeId, sd_fee: f64) -> Self {
        Fragment { leader, clients: BTreeSet::new(), sd_fee }
    }

    pub fn size(&self) -> usize {
        self.clients.len() + 1
    }

    pub fn members(&self) -> impl Iterator<Item = NodeId> + '_ {
        std::iter::once(self.leader).chain(self.clients.iter().copied())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InteractionPhase {
    RequestSent,
    ResponderBid,
    InitiatorRevealed,
    Resolved,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseInteraction {
    pub initiator: NodeId,
    pub responder: NodeId,
    pub phase: InteractionPhase,
    pub initiator_commitment: Digest,
    pub responder_bid: Option<f64>,
    pub initiator_bid: Option<f64>,
    pub winner: Option<NodeId>,
}

/// One resolved merge, as recorded by the tournament driver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub round: u64,
    pub initiator: NodeId,
    pub responder: NodeId,
    pub winner: NodeId,
    pub loser: NodeId,
    pub winner_fee: f64,
    pub loser_fee: f64,
    /// Clients the loser had to notify.
    pub loser_clients: usize,
}

/// Runs one interaction. `revealed` is what the initiator discloses at step
/// 3; an honest initiator reveals its committed `sd_fee`.
pub fn run_interaction(
    initiator: &Fragment,
    responder: &Fragment,
    revealed: f64,
    suite: &dyn CryptoSuite,
    log: &mut MessageLog,
) -> Result<(Fragment, Merge, PairwiseInteraction), Phase1Error> {
    let (i, j) = (initiator.leader, responder.leader);
    let mut state = PairwiseInteraction {
        initiator: i,
        responder: j,
        phase: InteractionPhase::RequestSent,
        initiator_commitment: commit(suite, i, BidValue::Offer(initiator.sd_fee)),
        responder_bid: None,
        initiator_bid: None,
        winner: None,
    };
    log.push(i, j, MessageKind::FormationRequest);

    state.responder_bid = Some(responder.sd_fee);
    state.phase = InteractionPhase::ResponderBid;
    log.push(j, i, MessageKind::ResponderBid);

    state.initiator_bid = Some(revealed);
    state.phase = InteractionPhase::InitiatorRevealed;
    log.push(i, j, MessageKind::InitiatorReveal);
    if commit(suite, i, BidValue::Offer(revealed)) != state.initiator_commitment {
        return Err(Phase1Error::Cheat(i));
    }

    let initiator_wins = bid_order((i, revealed), (j, responder.sd_fee)).is_lt();
    let (winner, loser) = if initiator_wins {
        (initiator, responder)
    } else {
        (responder, initiator)
    };
    log.push(loser.leader, winner.leader, MessageKind::ClientListTransfer);
    for &c in &loser.clients {
        log.push(loser.leader, c, MessageKind::NewLeaderNotice);
    }

    let mut merged = winner.clone();
    merged.clients.insert(loser.leader);
    merged.clients.extend(loser.clients.iter().copied());
    state.winner = Some(winner.leader);
    state.phase = InteractionPhase::Resolved;

    let merge = Merge {
        round: log.round(),
        initiator: i,
        responder: j,
        winner: winner.leader,
        loser: loser.leader,
        winner_fee: winner.sd_fee,
        loser_fee: loser.sd_fee,
        loser_clients: loser.clients.len(),
    };
    Ok((merged, merge, state))
}

/// Fragments keyed by leader, plus a reverse index from member to leader.
#[derive(Debug, Clone, Default)]
pub struct Partition {
    fragments: BTreeMap<NodeId, Fragment>,
    leader_of: BTreeMap<NodeId, NodeId>,
}

impl Partition {
    pub fn singletons(participants: &[(NodeId, f64)]) -> Result<Self, Phase1Error> {
        let mut p = Partition::default();
        for &(node, fee) in participants {
            if p.leader_of.contains_key(&node) {
                return Err(Phase1Error::DuplicateNode(node));
            }
            p.insert(Fragment::singleton(node, fee));
        }
        Ok(p)
    }

    fn insert(&mut self, fragment: Fragment) {
        for m in fragment.members() {
            self.leader_of.insert(m, fragment.leader);
        }
        self.fragments.insert(fragment.leader, fragment);
    }

    fn take(&mut self, leader: NodeId) -> Option<Fragment> {
        let f = self.fragments.remove(&leader)?;
        for m in f.members() {
            self.leader_of.remove(&m);
        }
        Some(f)
    }

    pub fn leader_of(&self, node: NodeId) -> Option<NodeId> {
        self.leader_of.get(&node).copied()
    }

    pub fn fragment(&self, leader: NodeId) -> Option<&Fragment> {
        self.fragments.get(&leader)
    }

    pub fn fragments(&self) -> impl Iterator<Item = &Fragment> {
        self.fragments.values()
    }

    pub fn len(&self) -> usize {
        self.fragments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fragments.is_empty()
    }

    /// Every node of `universe` sits in exactly one fragment and nothing else does.
    pub fn covers_exactly(&self, universe: &BTreeSet<NodeId>) -> bool {
        let mut seen = BTreeSet::new();
        for f in self.fragments.values() {
            if f.clients.contains(&f.leader) {
                return false;
            }
            for m in f.members() {
                if !seen.insert(m) {
                    return false;
                }
            }
        }
        &seen == universe
    }
}

/// Resolves the node a formation request for `target` finally reaches. A
/// request sent to a client is forwarded to its leader, at the cost of one
/// message.
pub fn route_request(
    target: NodeId,
    partition: &Partition,
    log: &mut MessageLog,
) -> Result<NodeId, Phase1Error> {
    let leader = partition.leader_of(target).ok_or(Phase1Error::Membership(target))?;
    if leader != target {
        log.push(target, leader, MessageKind::RequestForward);
    }
    Ok(leader)
}

/// Order in which fragments meet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Schedule {
    /// Adjacent fragments pair off round by round, the earlier one initiating.
    BalancedTree,
    /// A running winner absorbs one fresh node at a time.
    SequentialChain,
    /// Two random fragments meet at each step.
    RandomSeeded(u64),
    /// Explicit `(initiator, target)` pairs; targets are routed to their leader.
    Scripted(Vec<(NodeId, NodeId)>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TournamentOutcome {
    pub cloud: Fragment,
    pub merges: Vec<Merge>,
    pub cheaters: Vec<NodeId>,
}

impl TournamentOutcome {
    /// `n_l`: total new-leader notices over all merges.
    pub fn notifications(&self) -> usize {
        self.merges.iter().map(|m| m.loser_clients).sum()
    }
}

struct Driver<'a> {
    partition: Partition,
    fees: BTreeMap<NodeId, f64>,
    reveals: &'a BTreeMap<NodeId, f64>,
    suite: &'a dyn CryptoSuite,
    merges: Vec<Merge>,
    cheaters: Vec<NodeId>,
}

enum Step {
    Merged(NodeId),
    /// Cheater removed; the honest side and any released clients remain.
    Voided { survivor: NodeId, released: Vec<NodeId> },
}

impl Driver<'_> {
    fn interact(&mut self, a: NodeId, b: NodeId, log: &mut MessageLog) -> Result<Step, Phase1Error> {
        let fa = self.partition.fragment(a).ok_or(Phase1Error::Membership(a))?.clone();
        let fb = self.partition.fragment(b).ok_or(Phase1Error::Membership(b))?.clone();
        let revealed = self.reveals.get(&a).copied().unwrap_or(fa.sd_fee);
        match run_interaction(&fa, &fb, revealed, self.suite, log) {
            Ok((merged, merge, _)) => {
                self.partition.take(a);
                self.partition.take(b);
                let leader = merged.leader;
                self.partition.insert(merged);
                self.merges.push(merge);
                Ok(Step::Merged(leader))
            }
            Err(Phase1Error::Cheat(cheater)) => {
                let gone = self.partition.take(cheater).expect("cheater fragment present");
                self.cheaters.push(cheater);
                let released: Vec<NodeId> = gone.clients.iter().copied().collect();
                for &c in &released {
                    self.partition.insert(Fragment::singleton(c, self.fees[&c]));
                }
                Ok(Step::Voided { survivor: b, released })
            }
            Err(e) => Err(e),
        }
    }
}

/// Runs interactions under `schedule` until one fragment holds every honest
/// participant. `reveals` lists initiators that disclose something other
/// than their committed bid; such a node is excluded once caught and its
/// clients go back to being singletons.
pub fn run_tournament(
    participants: &[(NodeId, f64)],
    schedule: &Schedule,
    reveals: &BTreeMap<NodeId, f64>,
    suite: &dyn CryptoSuite,
    log: &mut MessageLog,
) -> Result<TournamentOutcome, Phase1Error> {
    if participants.len() < 2 {
        return Err(Phase1Error::TooFewParticipants(participants.len()));
    }
    let partition = Partition::singletons(participants)?;
    let mut d = Driver {
        partition,
        fees: participants.iter().copied().collect(),
        reveals,
        suite,
        merges: Vec::new(),
        cheaters: Vec::new(),
    };
    let order: Vec<NodeId> = participants.iter().map(|p| p.0).collect();

    match schedule {
        Schedule::BalancedTree => {
            let mut current = order;
            let mut round = 0;
            while current.len() > 1 {
                round += 1;
                log.set_round(round);
                let mut next = Vec::with_capacity(current.len() / 2 + 1);
                for pair in current.chunks(2) {
                    match *pair {
                        [a, b] => match d.interact(a, b, log)? {
                            Step::Merged(w) => next.push(w),
                            Step::Voided { survivor, released } => {
                                next.push(survivor);
                                next.extend(released);
                            }
                        },
                        [a] => next.push(a),
                        _ => unreachable!(),
                    }
                }
                current = next;
            }
        }
        Schedule::SequentialChain => {
            let mut queue: VecDeque<NodeId> = order.into();
            let mut running = queue.pop_front().expect("at least two participants");
            let mut round = 0;
            while let Some(fresh) = queue.pop_front() {
                round += 1;
                log.set_round(round);
                match d.interact(running, fresh, log)? {
                    Step::Merged(w) => running = w,
                    Step::Voided { survivor, released } => {
                        running = survivor;
                        queue.extend(released);
                    }
                }
            }
        }
        Schedule::RandomSeeded(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut current = order;
            let mut round = 0;
            while current.len() > 1 {
                round += 1;
                log.set_round(round);
                let i = rng.gen_range(0..current.len());
                let mut j = rng.gen_range(0..current.len() - 1);
                if j >= i {
                    j += 1;
                }
                let (a, b) = (current[i], current[j]);
                current.remove(i.max(j));
                current.remove(i.min(j));
                match d.interact(a, b, log)? {
                    Step::Merged(w) => current.push(w),
                    Step::Voided { survivor, released } => {
                        current.push(survivor);
                        current.extend(released);
                    }
                }
            }
        }
        Schedule::Scripted(pairs) => {
            for (round, &(from, target)) in pairs.iter().enumerate() {
                log.set_round(round as u64 + 1);
                let a = d.partition.leader_of(from).ok_or(Phase1Error::Membership(from))?;
                let b = route_request(target, &d.partition, log)?;
                if a == b {
                    return Err(Phase1Error::SameFragment(from, target));
                }
                d.interact(a, b, log)?;
            }
        }
    }

    if d.partition.len() != 1 {
        return Err(Phase1Error::Incomplete(d.partition.len()));
    }
    let cloud = d.partition.fragments().next().cloned().expect("one fragment");
    Ok(TournamentOutcome { cloud, merges: d.merges, cheaters: d.cheaters })
}
