//! Seeded discrete-event simulation of a mobile cloud.
//!
//! In leader-based mode the cloud forms once through the pairwise
//! tournament, then every slot the leader answers `eta` SDs per client while
//! the next leader is elected at `alpha * T`. In pure mode every node floods
//! its own queries. Both modes draw initial energies from the same stream,
//! so runs with equal seeds are paired.
//!
//! Slot `t` runs from `t * T` to `(t + 1) * T`:
//!
//! - start: movement, membership changes, slot work (energy is debited and
//!   payoffs booked at the resource status the slot starts with);
//! - `alpha * T`: election for slot `t + 1`;
//! - claim and justification windows close;
//! - end: the leader presents its vouchers, dead nodes leave, a frame is
//!   recorded.

pub mod energy;
pub mod export;
pub mod metrics;
pub mod mobility;

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auction::BidValue;
use crate::cost::{check_calibration, component_costs, eta_min, CostError, CostProfile, SimParams};
use crate::crypto::SimCrypto;
use crate::message::MessageLog;
use crate::phase1::{run_tournament, Phase1Error, Schedule};
use crate::phase2::{
    begin_slot, handle_departure, handle_join, run_slot, CloudState, IncumbentConduct,
    Phase2Error, SlotConduct, SlotRecord, SlotTiming, DEFAULT_CLAIM_WINDOW, DEFAULT_JUSTIFICATION_WINDOW,
};
use crate::transaction::{
    from_micros, run_sd_transaction, LeaderConduct, Provider, RequesterConduct, SdRequest, TrustedUnit, TxContext,
    TxError, TxPhase, Voucher,
};
use crate::NodeId;

use energy::{action_energy, drain, Action, NodeState, Role};
use metrics::{MetricsFrame, PHASES};
use mobility::{MobilityModel, Position, Walker};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid scenario: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("eta = {eta} is below eta_min = {eta_min} for n = {nodes}")]
    EtaBelowMinimum { eta: u32, eta_min: u32, nodes: usize },
    #[error("{0} starts without enough energy to lead")]
    InitiallyInfeasible(NodeId),
    #[error("no connected placement found in {0} attempts")]
    Disconnected(u32),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Formation(#[from] Phase1Error),
    #[error(transparent)]
    Election(#[from] Phase2Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Mode {
    #[default]
    LeaderBased,
    Pure,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::LeaderBased => "leader",
            Mode::Pure => "pure",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "leader" | "leader_based" => Ok(Mode::LeaderBased),
            "pure" => Ok(Mode::Pure),
            other => Err(format!("unknown mode {other:?} (expected leader or pure)")),
        }
    }
}

/// Scripted deviation from the protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Misbehavior {
    /// As incumbent, announce this own bid instead of the committed one.
    AlterOwnBid(f64),
    /// As incumbent, announce `value` for `victim`.
    ManipulateBid { victim: NodeId, value: f64 },
    RefuseAuction,
    /// As client, claim manipulation asserting this bid.
    FakeClaim(f64),
    WithholdKey,
    ForgeMessage,
    WithholdVoucher,
    FreeKeyAttempt,
    ReplayVoucher,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedMisbehavior {
    pub slot: u64,
    pub node: NodeId,
    pub action: Misbehavior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub params: SimParams,
    pub seed: u64,
    /// Duration in slots.
    pub slots: u64,
    pub mode: Mode,
    /// Battery capacity `E_max` in energy units.
    pub capacity: f64,
    /// Initial energy is uniform in this range, as fractions of capacity.
    pub initial_energy: (f64, f64),
    /// Energy per message for clients.
    pub message_energy: f64,
    pub mobility: MobilityModel,
    pub claim_window: f64,
    pub justification_window: f64,
    pub initial_credit: f64,
    /// Number of distinct service types requested.
    pub services: u64,
    pub adversaries: Vec<ScriptedMisbehavior>,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            params: SimParams::default(),
            seed: 1,
            slots: 24,
            mode: Mode::LeaderBased,
            capacity: 2000.0,
            initial_energy: (0.5, 1.0),
            message_energy: 0.3,
            mobility: MobilityModel::default(),
            claim_window: DEFAULT_CLAIM_WINDOW,
            justification_window: DEFAULT_JUSTIFICATION_WINDOW,
            initial_credit: SIM_STAKE,
            services: 8,
            adversaries: Vec::new(),
        }
    }
}

impl Scenario {
    pub fn problems(&self) -> Vec<String> {
        let mut out = self.params.problems();
        if !(self.capacity > 0.0 && self.capacity.is_finite()) {
            out.push(format!("capacity must be positive (got {})", self.capacity));
        }
        let (lo, hi) = self.initial_energy;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            out.push(format!("initial energy range must satisfy 0 < min <= max <= 1 (got {lo}..{hi})"));
        }
        if !(self.message_energy >= 0.0 && self.message_energy.is_finite()) {
            out.push(format!("message energy must be non-negative (got {})", self.message_energy));
        }
        let m = &self.mobility;
        if !(m.side > 0.0) {
            out.push(format!("area side must be positive (got {})", m.side));
        }
        if !(m.tx_range > 0.0) {
            out.push(format!("transmission range must be positive (got {})", m.tx_range));
        }
        if !(m.min_speed >= 0.0 && m.min_speed <= m.max_speed) {
            out.push(format!("speed range must satisfy 0 <= min <= max (got {}..{})", m.min_speed, m.max_speed));
        }
        if !(self.claim_window >= 0.0 && self.justification_window >= 0.0) {
            out.push("claim and justification windows must be non-negative".to_string());
        } else if self.params.election_fraction + self.claim_window + self.justification_window > 1.0 {
            out.push(format!(
                "election at {} plus windows {} + {} overrun the slot",
                self.params.election_fraction, self.claim_window, self.justification_window
            ));
        }
        if self.services == 0 {
            out.push("at least one service type is needed".to_string());
        }
        if !(self.initial_credit >= 0.0) {
            out.push(format!("initial credit must be non-negative (got {})", self.initial_credit));
        }
        for a in &self.adversaries {
            if a.node.0 == 0 || a.node.0 > self.params.nodes as u64 {
                out.push(format!("misbehaving node {} is not in the scenario", a.node));
            }
        }
        out
    }

    pub fn node_ids(&self) -> Vec<NodeId> {
        (1..=self.params.nodes as u64).map(NodeId).collect()
    }
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct SimRun {
    pub mode: Mode,
    pub nodes: Vec<NodeId>,
    pub frames: Vec<MetricsFrame>,
    pub slots: Vec<SlotRecord>,
    pub log: MessageLog,
    pub ledger: TrustedUnit,
    /// Times at which elections ran.
    pub elections: Vec<u64>,
    /// Slots whose cloud size made the configured quota infeasible.
    pub infeasible_quota_slots: Vec<(u64, usize)>,
    /// SDs a client had to do itself because its credit ran out.
    pub credit_shortfalls: u64,
    pub eta_min: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Event {
    SlotStart(u64),
    Election(u64),
    ClaimsClose(u64),
    JustificationClose(u64),
    SlotEnd(u64),
}

/// Credit every node starts a simulation with. Larger than the ledger's
/// default stake so that, over the default horizon, no client runs out of
/// credit while leadership is still concentrated on the strongest nodes;
/// payoffs then compare the mechanisms rather than the endowment.
pub const SIM_STAKE: f64 = 1000.0;

const STREAM_ENERGY: u64 = 1;
const STREAM_MOBILITY: u64 = 2;
const STREAM_FORMATION: u64 = 3;
const STREAM_SERVICES: u64 = 4;
const PLACEMENT_ATTEMPTS: u32 = 10_000;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

struct World<'a> {
    s: &'a Scenario,
    timing: SlotTiming,
    nodes: Vec<NodeState>,
    walkers: Vec<Walker>,
    cloud: Option<CloudState>,
    log: MessageLog,
    counted: usize,
    phase_counts: [usize; 5],
    suite: SimCrypto,
    tu: TrustedUnit,
    tx: TxContext,
    held: Vec<Voucher>,
    rng_mobility: ChaCha8Rng,
    rng_formation: ChaCha8Rng,
    rng_services: ChaCha8Rng,
    frames: Vec<MetricsFrame>,
    slots: Vec<SlotRecord>,
    elections: Vec<u64>,
    infeasible: Vec<(u64, usize)>,
    shortfalls: u64,
    last_size: usize,
}

/// Runs a scenario to completion.
pub fn run_scenario(s: &Scenario) -> Result<SimRun, SimError> {
    let problems = s.problems();
    if !problems.is_empty() {
        return Err(SimError::Invalid(problems));
    }
    let eta_min = eta_min(&s.params)?;
    if s.params.quota < eta_min {
        return Err(SimError::EtaBelowMinimum { eta: s.params.quota, eta_min, nodes: s.params.nodes });
    }
    check_calibration(&s.params)?;
    let timing = SlotTiming::new(&s.params, s.claim_window, s.justification_window)?;

    let ids = s.node_ids();
    let mut rng_energy = stream(s.seed, STREAM_ENERGY);
    let mut rng_mobility = stream(s.seed, STREAM_MOBILITY);
    let (lo, hi) = s.initial_energy;
    let energies: Vec<f64> = ids
        .iter()
        .map(|_| if hi > lo { rng_energy.gen_range(lo..hi) } else { lo } * s.capacity)
        .collect();

    let mut walkers: Vec<Walker> = ids.iter().map(|_| s.mobility.spawn(&mut rng_mobility)).collect();
    if s.mode == Mode::LeaderBased {
        let mut attempts = 1;
        let all = vec![true; ids.len()];
        while !s.mobility.connected(&walkers.iter().map(|w| w.position).collect::<Vec<_>>(), &all) {
            if attempts >= PLACEMENT_ATTEMPTS {
                return Err(SimError::Disconnected(attempts));
            }
            walkers = ids.iter().map(|_| s.mobility.spawn(&mut rng_mobility)).collect();
            attempts += 1;
        }
    }

    let mut tu = TrustedUnit::new(s.params.punishment_fraction).map_err(|e| SimError::Invalid(vec![e.to_string()]))?;
    let mut nodes = Vec::with_capacity(ids.len());
    for ((&id, &energy), w) in ids.iter().zip(&energies).zip(&walkers) {
        let profile = CostProfile::new(id, energy, s.capacity, s.params.max_self_searches, &s.params)?;
        if !profile.sdpc.is_feasible() {
            return Err(SimError::InitiallyInfeasible(id));
        }
        tu.open(id, s.initial_credit);
        nodes.push(NodeState {
            id,
            energy,
            capacity: s.capacity,
            position: w.position,
            alive: true,
            role: Role::Outside,
            payoff: 0.0,
        });
    }

    let mut w = World {
        s,
        timing,
        nodes,
        walkers,
        cloud: None,
        log: MessageLog::new(),
        counted: 0,
        phase_counts: [0; 5],
        suite: SimCrypto::new(s.seed),
        tu,
        tx: TxContext::new(),
        held: Vec::new(),
        rng_mobility,
        rng_formation: stream(s.seed, STREAM_FORMATION),
        rng_services: stream(s.seed, STREAM_SERVICES),
        frames: Vec::new(),
        slots: Vec::new(),
        elections: Vec::new(),
        infeasible: Vec::new(),
        shortfalls: 0,
        last_size: ids.len(),
    };
    w.record_frame(0, 0);

    let mut queue: BinaryHeap<Reverse<(u64, u64, Event)>> = BinaryHeap::new();
    let mut seq = 0u64;
    let mut push = |q: &mut BinaryHeap<Reverse<(u64, u64, Event)>>, at: u64, e: Event| {
        q.push(Reverse((at, seq, e)));
        seq += 1;
    };
    if s.slots > 0 {
        push(&mut queue, 0, Event::SlotStart(0));
    }
    while let Some(Reverse((at, _, event))) = queue.pop() {
        w.log.set_clock(at);
        match event {
            Event::SlotStart(t) => {
                w.slot_start(t)?;
                let base = t * s.params.slot_ms;
                if s.mode == Mode::LeaderBased {
                    push(&mut queue, base + w.timing.election_ms, Event::Election(t));
                    push(&mut queue, base + w.timing.claims_close(), Event::ClaimsClose(t));
                    push(&mut queue, base + w.timing.justification_close(), Event::JustificationClose(t));
                }
                push(&mut queue, base + s.params.slot_ms, Event::SlotEnd(t));
            }
            Event::Election(t) => {
                w.elections.push(at);
                w.election(t)?;
            }
            // claims are settled inside the election; the windows only bound it
            Event::ClaimsClose(_) | Event::JustificationClose(_) => {}
            Event::SlotEnd(t) => {
                w.slot_end(t, at)?;
                if t + 1 < s.slots {
                    push(&mut queue, at, Event::SlotStart(t + 1));
                }
            }
        }
    }

    Ok(SimRun {
        mode: s.mode,
        nodes: ids,
        frames: w.frames,
        slots: w.slots,
        log: w.log,
        ledger: w.tu,
        elections: w.elections,
        infeasible_quota_slots: w.infeasible,
        credit_shortfalls: w.shortfalls,
        eta_min,
    })
}

impl World<'_> {
    fn index(&self, id: NodeId) -> usize {
        (id.0 - 1) as usize
    }

    fn cloud_params(&self, size: usize) -> SimParams {
        self.s.params.with_nodes(size.max(2))
    }

    fn bids(&self, members: &BTreeSet<NodeId>) -> BTreeMap<NodeId, BidValue> {
        let p = self.cloud_params(members.len());
        members
            .iter()
            .map(|&m| {
                let n = &self.nodes[self.index(m)];
                let bid = if n.alive {
                    CostProfile::new(m, n.energy, n.capacity, p.max_self_searches, &p)
                        .ok()
                        .and_then(|prof| prof.bid(&p))
                } else {
                    None
                };
                (m, bid.map_or(BidValue::Abstain, BidValue::Offer))
            })
            .collect()
    }

    fn form(&mut self, cloud: &mut CloudState) -> Result<(), SimError> {
        let bids = self.bids(&cloud.members);
        let offers: Vec<(NodeId, f64)> =
            bids.iter().filter_map(|(&n, v)| v.offer().map(|x| (n, x))).collect();
        let elected = match offers.len() {
            0 => None,
            1 => Some(offers[0]),
            _ => {
                let schedule = Schedule::RandomSeeded(self.rng_formation.gen());
                let out = run_tournament(&offers, &schedule, &BTreeMap::new(), &self.suite, &mut self.log)?;
                Some((out.cloud.leader, out.cloud.sd_fee))
            }
        };
        cloud.leader = elected.map(|e| e.0);
        cloud.p_star = elected.map(|e| e.1);
        Ok(())
    }

    fn note_size(&mut self, t: u64, size: usize) {
        if size != self.last_size {
            self.last_size = size;
            if size >= 2 {
                let p = self.s.params.with_nodes(size);
                let ok = eta_min(&p).map(|e| self.s.params.quota >= e).unwrap_or(false);
                if !ok {
                    self.infeasible.push((t, size));
                }
            }
        }
    }

    /// Cloud membership follows the component around the leader.
    fn update_membership(&mut self, t: u64) -> Result<(), SimError> {
        let present: Vec<bool> = self.nodes.iter().map(|n| n.alive).collect();
        let positions: Vec<Position> = self.nodes.iter().map(|n| n.position).collect();
        let comps = self.s.mobility.components(&positions, &present);
        let mut cloud = self.cloud.take().expect("leader-based run has a cloud");
        let anchor: BTreeSet<NodeId> = {
            let ids = |c: &Vec<usize>| c.iter().map(|&i| self.nodes[i].id).collect::<BTreeSet<_>>();
            let by_leader = cloud.leader.and_then(|l| comps.iter().find(|c| c.contains(&self.index(l))));
            match by_leader {
                Some(c) => ids(c),
                None => comps
                    .iter()
                    .max_by_key(|c| (c.iter().filter(|&&i| cloud.members.contains(&self.nodes[i].id)).count(), Reverse(c[0])))
                    .map(ids)
                    .unwrap_or_default(),
            }
        };
        begin_slot(&mut cloud);
        cloud.slot = t;
        let gone: Vec<NodeId> = cloud.members.iter().copied().filter(|m| !anchor.contains(m)).collect();
        for m in gone {
            handle_departure(&mut cloud, m)?;
        }
        cloud.pending_joins.retain(|p| anchor.contains(p));
        for &a in &anchor {
            if !cloud.members.contains(&a) && !cloud.pending_joins.contains(&a) && !cloud.blacklist.contains(a) {
                handle_join(&mut cloud, a, &mut self.log);
            }
        }
        if cloud.members.len() >= 2 && (cloud.leader.is_none() || cloud.p_star.is_none()) {
            self.form(&mut cloud)?;
        }
        self.note_size(t, cloud.members.len());
        self.cloud = Some(cloud);
        Ok(())
    }

    fn conduct_of(&self, t: u64, node: NodeId) -> (LeaderConduct, RequesterConduct) {
        let mut l = LeaderConduct::Honest;
        let mut r = RequesterConduct::Honest;
        for a in self.s.adversaries.iter().filter(|a| a.slot == t && a.node == node) {
            match a.action {
                Misbehavior::WithholdKey => l = LeaderConduct::WithholdKey,
                Misbehavior::ForgeMessage => l = LeaderConduct::ForgeMessage,
                Misbehavior::WithholdVoucher => r = RequesterConduct::WithholdVoucher,
                Misbehavior::FreeKeyAttempt => r = RequesterConduct::FreeKeyAttempt,
                Misbehavior::ReplayVoucher => r = RequesterConduct::ReplayVoucher,
                _ => {}
            }
        }
        (l, r)
    }

    fn pure_cost(&self, i: usize, sds: u32) -> Result<f64, CostError> {
        action_energy(&self.nodes[i], Action::PureSlot { sds }, &self.s.params, self.s.params.nodes, self.s.message_energy)
    }

    fn slot_start(&mut self, t: u64) -> Result<(), SimError> {
        let eta = self.s.params.quota;
        if self.s.mode == Mode::Pure {
            for i in 0..self.nodes.len() {
                if self.nodes[i].alive {
                    let cost = self.pure_cost(i, eta)?;
                    self.nodes[i].payoff -= cost;
                    drain(&mut self.nodes[i], cost);
                }
            }
            return Ok(());
        }

        if t > 0 {
            let secs = self.s.params.slot_ms as f64 / 1000.0;
            for (w, n) in self.walkers.iter_mut().zip(self.nodes.iter_mut()) {
                self.s.mobility.advance(w, secs, &mut self.rng_mobility);
                n.position = w.position;
            }
        }
        if self.cloud.is_none() {
            let members: BTreeSet<NodeId> = self.nodes.iter().map(|n| n.id).collect();
            let mut cloud = CloudState {
                capacity: members.len(),
                members,
                leader: None,
                slot: 0,
                p_star: None,
                blacklist: Default::default(),
                pending_joins: BTreeSet::new(),
                unused_quotas: 0,
            };
            self.log.set_round(0);
            self.form(&mut cloud)?;
            self.cloud = Some(cloud);
        } else {
            self.update_membership(t)?;
        }

        let cloud = self.cloud.clone().expect("cloud present");
        let active = match (cloud.leader, cloud.p_star) {
            (Some(l), Some(p)) if cloud.members.len() >= 2 => Some((l, p)),
            _ => None,
        };
        for n in self.nodes.iter_mut() {
            n.role = if Some(n.id) == cloud.leader && cloud.members.contains(&n.id) {
                Role::Leader
            } else if cloud.members.contains(&n.id) && active.is_some() {
                Role::Client
            } else {
                Role::Outside
            };
        }

        // costs are fixed at the slot-start resource status
        let mut debit = vec![0.0; self.nodes.len()];
        let mut gain = vec![0.0; self.nodes.len()];
        if let Some((leader, p_star)) = active {
            let li = self.index(leader);
            let p = self.cloud_params(cloud.members.len());
            let c = component_costs(self.nodes[li].rs(), &p)?;
            let (leader_conduct, _) = self.conduct_of(t, leader);
            let mut served = 0u64;
            let mut revenue = 0.0;
            let clients: Vec<NodeId> = cloud.clients().collect();
            for &cid in &clients {
                let ci = self.index(cid);
                let (_, sr_conduct) = self.conduct_of(t, cid);
                let mut exchanged = 0u32;
                let mut fallback = 0u32;
                for _ in 0..self.s.params.quota {
                    let service = self.rng_services.gen_range(0..self.s.services);
                    let others: Vec<NodeId> = cloud.members.iter().copied().filter(|&m| m != cid).collect();
                    let provider = others[(service as usize) % others.len()];
                    let providers = BTreeMap::from([(service, Provider { node: provider, willing: true })]);
                    let req = SdRequest { sr: cid, leader, service, p_star };
                    match run_sd_transaction(
                        &mut self.tx,
                        &mut self.tu,
                        req,
                        &providers,
                        leader_conduct,
                        sr_conduct,
                        &self.suite,
                        &mut self.log,
                    ) {
                        Ok(r) => {
                            served += 1;
                            exchanged += 1;
                            if let Some(v) = r.leader_voucher {
                                self.held.push(v);
                            }
                            let paid = match (r.state.phase, r.arbitration) {
                                (_, Some(a)) => {
                                    revenue += from_micros(a.credited);
                                    from_micros(a.debited)
                                }
                                (TxPhase::Settled, None) => {
                                    revenue += p_star;
                                    p_star
                                }
                                _ => 0.0,
                            };
                            if r.learned_genuine {
                                gain[ci] -= paid;
                            } else {
                                // no usable answer: discover it alone
                                gain[ci] -= paid;
                                fallback += 1;
                            }
                        }
                        Err(TxError::InsufficientCredit { .. }) => {
                            self.shortfalls += 1;
                            fallback += 1;
                        }
                        Err(_) => fallback += 1,
                    }
                }
                debit[ci] += action_energy(&self.nodes[ci], Action::ClientSlot { sds: exchanged }, &p, p.nodes, self.s.message_energy)?;
                if fallback > 0 {
                    let cost = self.pure_cost(ci, fallback)?;
                    debit[ci] += cost;
                    gain[ci] -= cost;
                }
            }
            let work = served as f64 * (c.search + c.messaging)
                + f64::from(p.max_self_searches) * c.search
                + c.database
                + c.selection;
            debit[li] += work;
            gain[li] += revenue - work;
        }
        // a singleton cloud idles: its lone member neither leads nor floods
        for i in 0..self.nodes.len() {
            let n = &self.nodes[i];
            if n.alive && n.role == Role::Outside && !(cloud.members.len() == 1 && cloud.members.contains(&n.id)) {
                let cost = self.pure_cost(i, self.s.params.quota)?;
                debit[i] += cost;
                gain[i] -= cost;
            }
        }
        for (i, n) in self.nodes.iter_mut().enumerate() {
            if n.alive {
                n.payoff += gain[i];
                drain(n, debit[i]);
            }
        }
        Ok(())
    }

    fn election(&mut self, t: u64) -> Result<(), SimError> {
        let Some(mut cloud) = self.cloud.take() else { return Ok(()) };
        // the dead cannot vote; they leave at slot end
        let live: BTreeSet<NodeId> =
            cloud.members.iter().copied().filter(|m| self.nodes[self.index(*m)].alive).collect();
        let incumbent_alive = cloud.leader.is_some_and(|l| live.contains(&l));
        if live.len() >= 2 && incumbent_alive && cloud.p_star.is_some() {
            for m in cloud.members.clone() {
                if !live.contains(&m) {
                    handle_departure(&mut cloud, m)?;
                }
            }
            let bids = self.bids(&cloud.members);
            let conduct = self.slot_conduct(t, &cloud);
            let record = run_slot(&mut cloud, &bids, &conduct, &self.suite, &mut self.log)?;
            self.slots.push(record);
        }
        self.cloud = Some(cloud);
        Ok(())
    }

    fn slot_conduct(&self, t: u64, cloud: &CloudState) -> SlotConduct {
        let mut c = SlotConduct::default();
        for a in self.s.adversaries.iter().filter(|a| a.slot == t && cloud.members.contains(&a.node)) {
            let is_incumbent = cloud.leader == Some(a.node);
            match (&a.action, is_incumbent) {
                (Misbehavior::AlterOwnBid(v), true) => c.incumbent = IncumbentConduct::AlterOwnBid(*v),
                (Misbehavior::RefuseAuction, true) => c.incumbent = IncumbentConduct::Refuse,
                (Misbehavior::ManipulateBid { victim, value }, true) => {
                    let mut map = match std::mem::take(&mut c.incumbent) {
                        IncumbentConduct::ManipulateBids(m) => m,
                        _ => BTreeMap::new(),
                    };
                    map.insert(*victim, *value);
                    c.incumbent = IncumbentConduct::ManipulateBids(map);
                }
                (Misbehavior::FakeClaim(v), false) => {
                    c.fake_claims.insert(a.node, *v);
                }
                _ => {}
            }
        }
        c
    }

    fn slot_end(&mut self, t: u64, at: u64) -> Result<(), SimError> {
        if let Some(cloud) = &self.cloud {
            let held = std::mem::take(&mut self.held);
            let mut by_leader: BTreeMap<NodeId, Vec<Voucher>> = BTreeMap::new();
            for v in held {
                by_leader.entry(v.leader).or_default().push(v);
            }
            for (leader, vs) in by_leader {
                self.tu.redeem_vouchers(leader, &vs, &self.suite);
                self.tx.presented(&vs);
            }
            let dead: Vec<NodeId> =
                cloud.members.iter().copied().filter(|m| !self.nodes[self.index(*m)].alive).collect();
            let mut cloud = self.cloud.take().expect("cloud present");
            for d in dead {
                handle_departure(&mut cloud, d)?;
            }
            self.cloud = Some(cloud);
        }
        self.record_frame(at, t + 1);
        Ok(())
    }

    fn record_frame(&mut self, at: u64, slot: u64) {
        for m in self.log.since(self.counted) {
            let k = PHASES.iter().position(|p| *p == m.kind.phase()).expect("known phase");
            self.phase_counts[k] += 1;
        }
        self.counted = self.log.len();
        let (leader, p_star) = match &self.cloud {
            Some(c) if c.members.len() >= 2 => (c.leader, c.p_star),
            _ => (None, None),
        };
        self.frames.push(MetricsFrame {
            time_ms: at,
            slot,
            energy_pct: self.nodes.iter().map(|n| 100.0 * n.energy / n.capacity).collect(),
            alive: self.nodes.iter().map(|n| n.alive).collect(),
            payoff: self.nodes.iter().map(|n| n.payoff).collect(),
            messages: self.phase_counts,
            leader,
            p_star,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase2::{BlacklistReason, SlotVerdict};

    fn short(seed: u64, slots: u64) -> Scenario {
        Scenario { seed, slots, ..Default::default() }
    }

    #[test]
    fn zero_slots_gives_one_untouched_frame() {
        let run = run_scenario(&short(3, 0)).unwrap();
        assert_eq!(run.frames.len(), 1);
        assert!(run.log.is_empty());
        let f = &run.frames[0];
        assert_eq!(f.alive_fraction(), 1.0);
        assert!(f.energy_pct.iter().all(|e| (50.0..=100.0).contains(e)));
        assert!(f.payoff.iter().all(|p| *p == 0.0));
    }

    #[test]
    fn same_seed_same_frames() {
        let a = run_scenario(&short(11, 8)).unwrap();
        let b = run_scenario(&short(11, 8)).unwrap();
        assert_eq!(a.frames, b.frames);
        assert_eq!(a.slots, b.slots);
        assert_eq!(a.log.records(), b.log.records());
        let c = run_scenario(&short(12, 8)).unwrap();
        assert_ne!(a.frames, c.frames);
    }

    #[test]
    fn modes_share_initial_energies() {
        let lr = run_scenario(&short(5, 1)).unwrap();
        let pr = run_scenario(&Scenario { mode: Mode::Pure, ..short(5, 1) }).unwrap();
        assert_eq!(lr.frames[0].energy_pct, pr.frames[0].energy_pct);
    }

    #[test]
    fn quota_below_minimum_is_refused() {
        let s = Scenario { params: SimParams::default().with_quota(1), ..Default::default() };
        match run_scenario(&s) {
            Err(SimError::EtaBelowMinimum { eta: 1, eta_min: 5, nodes: 10 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invalid_scenarios_list_every_problem() {
        let s = Scenario { capacity: -1.0, services: 0, initial_energy: (0.9, 0.2), ..Default::default() };
        match run_scenario(&s) {
            Err(SimError::Invalid(p)) => assert_eq!(p.len(), 3, "{p:?}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn one_election_per_slot_before_slot_end() {
        let s = short(2, 6);
        let run = run_scenario(&s).unwrap();
        assert_eq!(run.elections.len(), 6);
        for (t, at) in run.elections.iter().enumerate() {
            let start = t as u64 * s.params.slot_ms;
            assert!(*at > start && *at < start + s.params.slot_ms);
        }
    }

    #[test]
    fn energy_and_population_never_recover() {
        for mode in [Mode::LeaderBased, Mode::Pure] {
            let run = run_scenario(&Scenario { mode, ..short(4, 40) }).unwrap();
            for w in run.frames.windows(2) {
                assert!(w[1].alive_fraction() <= w[0].alive_fraction());
                for (a, b) in w[0].energy_pct.iter().zip(&w[1].energy_pct) {
                    assert!(b <= a);
                }
            }
        }
    }

    #[test]
    fn leadership_rotates() {
        let run = run_scenario(&short(1, 24)).unwrap();
        let leaders: BTreeSet<NodeId> = run.frames.iter().filter_map(|f| f.leader).collect();
        assert!(leaders.len() >= 3, "{leaders:?}");
    }

    #[test]
    fn pure_mode_has_no_leader_and_no_messages() {
        let run = run_scenario(&Scenario { mode: Mode::Pure, ..short(6, 5) }).unwrap();
        assert!(run.frames.iter().all(|f| f.leader.is_none()));
        assert!(run.log.is_empty());
        assert!(run.slots.is_empty());
    }

    #[test]
    fn honest_run_keeps_credit_conserved() {
        let run = run_scenario(&short(8, 10)).unwrap();
        assert!(run.ledger.conserved());
        assert_eq!(run.ledger.burned(), 0);
        assert_eq!(run.credit_shortfalls, 0);
    }

    fn leader_for(seed: u64, slot: u64) -> NodeId {
        let run = run_scenario(&short(seed, slot + 1)).unwrap();
        run.frames[slot as usize].leader.expect("cloud has a leader")
    }

    #[test]
    fn scripted_fake_claim_is_blacklisted() {
        let leader = leader_for(9, 2);
        let liar = NodeId(if leader.0 == 1 { 2 } else { 1 });
        let s = Scenario {
            adversaries: vec![ScriptedMisbehavior { slot: 2, node: liar, action: Misbehavior::FakeClaim(0.01) }],
            ..short(9, 4)
        };
        let run = run_scenario(&s).unwrap();
        let rec = run.slots.iter().find(|r| r.slot == 2).unwrap();
        assert_eq!(rec.blacklisted, vec![(liar, BlacklistReason::FakeClaim)]);
        // the liar is shut out of every later slot's election
        for r in run.slots.iter().filter(|r| r.slot > 2) {
            assert!(!r.bids.contains_key(&liar));
        }
    }

    #[test]
    fn scripted_refusal_reforms_the_cloud() {
        let leader = leader_for(10, 3);
        let s = Scenario {
            adversaries: vec![ScriptedMisbehavior { slot: 3, node: leader, action: Misbehavior::RefuseAuction }],
            ..short(10, 5)
        };
        let run = run_scenario(&s).unwrap();
        let rec = run.slots.iter().find(|r| r.slot == 3).unwrap();
        assert!(matches!(rec.verdict, SlotVerdict::Reformed { reason: BlacklistReason::RefusedAuction, .. }));
        assert!(rec.blacklisted.contains(&(leader, BlacklistReason::RefusedAuction)));
    }

    #[test]
    fn key_withholding_leader_is_paid_beta_share() {
        let leader = leader_for(7, 1);
        let honest = run_scenario(&short(7, 2)).unwrap();
        let s = Scenario {
            adversaries: vec![ScriptedMisbehavior { slot: 1, node: leader, action: Misbehavior::WithholdKey }],
            ..short(7, 2)
        };
        let run = run_scenario(&s).unwrap();
        assert!(run.ledger.conserved());
        assert!(run.ledger.burned() > 0);
        let gain = |r: &SimRun| r.ledger.balance(leader).unwrap();
        assert!(gain(&run) < gain(&honest));
    }
}
