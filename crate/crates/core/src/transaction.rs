//! Requester / leader / provider exchange with a trusted unit for clearing
//! and disputes.
//!
//! The leader never hands over the provider's identity before it is paid,
//! and the requester never pays before it holds the encrypted answer:
//!
//! 1. requester → leader: request `(service, seq)`;
//! 2. leader → provider: query;
//! 3. provider → leader: `m = (SP, L, service, seq, S_SP)`;
//! 4. leader → requester: `c = E_k(m)` and `EK = E_TU(k ‖ seq)`;
//! 5. requester → leader: signed voucher worth `p*`;
//! 6. leader → requester: `k`.
//!
//! If the key is withheld the requester shows the flow and the voucher to
//! the trusted unit, which releases `k` from `EK`, charges the requester in
//! full and pays the leader only a fraction `β`; the rest is burned. If `m`
//! turns out forged, the unit disregards the voucher. Credits are kept in
//! integer micro-units so conservation can be checked exactly.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{Attestation, CryptoSuite, SessionKey};
use crate::message::{MessageKind, MessageLog};
use crate::NodeId;

/// Credits per unit of cost.
pub const MICROS: i64 = 1_000_000;
pub const DEFAULT_STAKE: f64 = 100.0;

/// Converts cost units to ledger micro-units.
pub fn to_micros(value: f64) -> i64 {
    (value * MICROS as f64).round() as i64
}

pub fn from_micros(value: i64) -> f64 {
    value as f64 / MICROS as f64
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TxError {
    #[error("no provider for service {0}")]
    SdFailure(u64),
    #[error("{node} holds {balance} credit micro-units, needs {needed}")]
    InsufficientCredit { node: NodeId, balance: i64, needed: i64 },
    #[error("{0} has no account")]
    UnknownAccount(NodeId),
    #[error("punishment fraction must lie in (0, 1), got {0}")]
    Beta(f64),
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum ArbitrationError {
    #[error("no voucher was presented")]
    MissingVoucher,
    #[error("voucher does not verify")]
    InvalidVoucher,
    #[error("encrypted key does not open to this flow")]
    KeyMismatch,
    #[error("voucher was already settled")]
    AlreadySettled,
    #[error("the message in the flow is genuine")]
    MessageGenuine,
}

/// `m`: the provider's signed statement that it offers the service.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProviderMessage {
    pub provider: NodeId,
    pub leader: NodeId,
    pub service: u64,
    pub seq: u64,
    pub signature: Attestation,
}

impl ProviderMessage {
    pub const LEN: usize = 64;

    fn body(provider: NodeId, leader: NodeId, service: u64, seq: u64) -> [u8; 32] {
        let mut b = [0u8; 32];
        b[..8].copy_from_slice(&provider.to_be_bytes());
        b[8..16].copy_from_slice(&leader.to_be_bytes());
        b[16..24].copy_from_slice(&service.to_be_bytes());
        b[24..].copy_from_slice(&seq.to_be_bytes());
        b
    }

    pub fn signed(suite: &dyn CryptoSuite, provider: NodeId, leader: NodeId, service: u64, seq: u64) -> Self {
        let digest = suite.digest(&Self::body(provider, leader, service, seq));
        ProviderMessage { provider, leader, service, seq, signature: suite.sign(provider, &digest) }
    }

    pub fn verify(&self, suite: &dyn CryptoSuite) -> bool {
        let digest = suite.digest(&Self::body(self.provider, self.leader, self.service, self.seq));
        suite.verify(self.provider, &digest, &self.signature)
    }

    pub fn to_bytes(&self) -> [u8; Self::LEN] {
        let mut out = [0u8; Self::LEN];
        out[..32].copy_from_slice(&Self::body(self.provider, self.leader, self.service, self.seq));
        out[32..].copy_from_slice(&self.signature.0);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Option<Self> {
        if bytes.len() != Self::LEN {
            return None;
        }
        let word = |i: usize| u64::from_be_bytes(bytes[i * 8..i * 8 + 8].try_into().expect("8 bytes"));
        Some(ProviderMessage {
            provider: NodeId(word(0)),
            leader: NodeId(word(1)),
            service: word(2),
            seq: word(3),
            signature: Attestation(bytes[32..].try_into().expect("32 bytes")),
        })
    }
}

/// Payment instrument signed by the requester.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Voucher {
    pub sr: NodeId,
    pub leader: NodeId,
    pub voucher_no: u64,
    pub value: f64,
    pub attestation: Attestation,
}

impl Voucher {
    pub const WIRE_LEN: usize = 64;

    fn body(sr: NodeId, leader: NodeId, voucher_no: u64, value: f64) -> [u8; 32] {
        let mut b = [0u8; 32];
        b[..8].copy_from_slice(&sr.to_be_bytes());
        b[8..16].copy_from_slice(&leader.to_be_bytes());
        b[16..24].copy_from_slice(&voucher_no.to_be_bytes());
        b[24..].copy_from_slice(&value.to_be_bytes());
        b
    }

    pub fn issue(suite: &dyn CryptoSuite, sr: NodeId, leader: NodeId, voucher_no: u64, value: f64) -> Self {
        let digest = suite.digest(&Self::body(sr, leader, voucher_no, value));
        Voucher { sr, leader, voucher_no, value, attestation: suite.sign(sr, &digest) }
    }

    pub fn verify(&self, suite: &dyn CryptoSuite) -> bool {
        let digest = suite.digest(&Self::body(self.sr, self.leader, self.voucher_no, self.value));
        suite.verify(self.sr, &digest, &self.attestation)
    }

    /// Fixed-field wire form: sr, leader, number, value (f64 BE), attestation.
    pub fn to_bytes(&self) -> [u8; Self::WIRE_LEN] {
        let mut out = [0u8; Self::WIRE_LEN];
        out[..32].copy_from_slice(&Self::body(self.sr, self.leader, self.voucher_no, self.value));
        out[32..].copy_from_slice(&self.attestation.0);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Option<Self> {
        if bytes.len() != Self::WIRE_LEN {
            return None;
        }
        let word = |i: usize| <[u8; 8]>::try_from(&bytes[i * 8..i * 8 + 8]).expect("8 bytes");
        Some(Voucher {
            sr: NodeId(u64::from_be_bytes(word(0))),
            leader: NodeId(u64::from_be_bytes(word(1))),
            voucher_no: u64::from_be_bytes(word(2)),
            value: f64::from_be_bytes(word(3)),
            attestation: Attestation(bytes[32..].try_into().expect("32 bytes")),
        })
    }

    fn key(&self) -> (NodeId, u64) {
        (self.sr, self.voucher_no)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TxPhase {
    Requested,
    ProviderAttested,
    CipherSent,
    VoucherPaid,
    KeyReleased,
    Settled,
    Arbitrated,
}

impl TxPhase {
    pub const ALL: [TxPhase; 7] = [
        TxPhase::Requested,
        TxPhase::ProviderAttested,
        TxPhase::CipherSent,
        TxPhase::VoucherPaid,
        TxPhase::KeyReleased,
        TxPhase::Settled,
        TxPhase::Arbitrated,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TxPhase::Requested => "REQUESTED",
            TxPhase::ProviderAttested => "PROVIDER_ATTESTED",
            TxPhase::CipherSent => "CIPHER_SENT",
            TxPhase::VoucherPaid => "VOUCHER_PAID",
            TxPhase::KeyReleased => "KEY_RELEASED",
            TxPhase::Settled => "SETTLED",
            TxPhase::Arbitrated => "ARBITRATED",
        }
    }
}

impl fmt::Display for TxPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TxEvent {
    Attested,
    CipherDelivered,
    VoucherAccepted,
    KeyDelivered,
    MessageVerified,
    /// The trusted unit settled a dispute.
    Arbitration,
}

impl TxEvent {
    pub const ALL: [TxEvent; 6] = [
        TxEvent::Attested,
        TxEvent::CipherDelivered,
        TxEvent::VoucherAccepted,
        TxEvent::KeyDelivered,
        TxEvent::MessageVerified,
        TxEvent::Arbitration,
    ];
}

/// The transaction state machine. `None` means the event is rejected in
/// that phase. Arbitration is reachable once the requester holds the
/// ciphertext: a withheld key (after payment) or a forged message (after
/// the key arrives).
pub fn next_phase(phase: TxPhase, event: TxEvent) -> Option<TxPhase> {
    use TxEvent as E;
    use TxPhase as P;
    match (phase, event) {
        (P::Requested, E::Attested) => Some(P::ProviderAttested),
        (P::ProviderAttested, E::CipherDelivered) => Some(P::CipherSent),
        (P::CipherSent, E::VoucherAccepted) => Some(P::VoucherPaid),
        (P::VoucherPaid, E::KeyDelivered) => Some(P::KeyReleased),
        (P::KeyReleased, E::MessageVerified) => Some(P::Settled),
        (P::CipherSent | P::VoucherPaid | P::KeyReleased, E::Arbitration) => Some(P::Arbitrated),
        _ => None,
    }
}

/// What the leader sends at step 4; also the evidence shown to the unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CipherFlow {
    pub leader: NodeId,
    pub sr: NodeId,
    pub service: u64,
    pub seq: u64,
    pub ciphertext: Vec<u8>,
    pub encrypted_key: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransactionState {
    pub phase: TxPhase,
    pub sr: NodeId,
    pub leader: NodeId,
    pub service: u64,
    pub seq: u64,
    pub session_key: Option<SessionKey>,
    pub flow: Option<CipherFlow>,
    pub voucher: Option<Voucher>,
}

impl TransactionState {
    fn advance(&mut self, event: TxEvent) {
        self.phase = next_phase(self.phase, event)
            .unwrap_or_else(|| panic!("{event:?} is not valid in {}", self.phase));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum LeaderConduct {
    #[default]
    Honest,
    WithholdKey,
    ForgeMessage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum RequesterConduct {
    #[default]
    Honest,
    WithholdVoucher,
    /// Asks the unit for the key without a voucher.
    FreeKeyAttempt,
    /// Pays with a voucher already used.
    ReplayVoucher,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Disposition {
    Credited,
    Duplicate,
    Disregarded,
    Invalid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SettlementReport {
    pub leader: NodeId,
    pub entries: Vec<(u64, NodeId, Disposition)>,
    /// Net micro-units credited to the leader.
    pub credited: i64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arbitration {
    pub key: SessionKey,
    pub debited: i64,
    pub credited: i64,
    pub burned: i64,
}

/// Credit clearing and dispute handling.
#[derive(Debug, Clone)]
pub struct TrustedUnit {
    balances: BTreeMap<NodeId, i64>,
    issued: i64,
    burned: i64,
    beta_ppm: i64,
    settled: BTreeSet<(NodeId, u64)>,
    disregarded: BTreeSet<(NodeId, u64)>,
}

impl TrustedUnit {
    pub fn new(beta: f64) -> Result<Self, TxError> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(TxError::Beta(beta));
        }
        Ok(TrustedUnit {
            balances: BTreeMap::new(),
            issued: 0,
            burned: 0,
            beta_ppm: (beta * MICROS as f64).round() as i64,
            settled: BTreeSet::new(),
            disregarded: BTreeSet::new(),
        })
    }

    /// Opens an account with the entry stake. Reopening is a no-op.
    pub fn open(&mut self, node: NodeId, stake: f64) {
        if !self.balances.contains_key(&node) {
            let s = to_micros(stake);
            self.balances.insert(node, s);
            self.issued += s;
        }
    }

    pub fn balance(&self, node: NodeId) -> Option<i64> {
        self.balances.get(&node).copied()
    }

    pub fn balances(&self) -> &BTreeMap<NodeId, i64> {
        &self.balances
    }

    pub fn burned(&self) -> i64 {
        self.burned
    }

    /// Stakes handed out; always equals balances plus burns.
    pub fn issued(&self) -> i64 {
        self.issued
    }

    pub fn conserved(&self) -> bool {
        self.balances.values().sum::<i64>() + self.burned == self.issued
    }

    pub fn is_settled(&self, v: &Voucher) -> bool {
        self.settled.contains(&v.key())
    }

    pub fn beta_share(&self, value: i64) -> i64 {
        (value as i128 * self.beta_ppm as i128 / MICROS as i128) as i64
    }

    fn transfer(&mut self, from: NodeId, to: NodeId, debit: i64, credit: i64) {
        *self.balances.entry(from).or_insert(0) -= debit;
        *self.balances.entry(to).or_insert(0) += credit;
        self.burned += debit - credit;
    }

    fn open_key(&self, flow: &CipherFlow, suite: &dyn CryptoSuite) -> Result<SessionKey, ArbitrationError> {
        let plain = suite.decrypt_by_tu(&flow.encrypted_key).ok_or(ArbitrationError::KeyMismatch)?;
        if plain.len() != 40 || plain[32..] != flow.seq.to_be_bytes() {
            return Err(ArbitrationError::KeyMismatch);
        }
        Ok(SessionKey(plain[..32].try_into().expect("32 bytes")))
    }

    fn check_voucher(&self, flow: &CipherFlow, v: &Voucher, suite: &dyn CryptoSuite) -> Result<(), ArbitrationError> {
        if !v.verify(suite) || v.sr != flow.sr || v.leader != flow.leader {
            return Err(ArbitrationError::InvalidVoucher);
        }
        if self.settled.contains(&v.key()) || self.disregarded.contains(&v.key()) {
            return Err(ArbitrationError::AlreadySettled);
        }
        Ok(())
    }

    /// The leader took the voucher but kept the key: the unit releases the
    /// key, charges the requester in full and pays the leader `β` of it.
    pub fn arbitrate_withheld_key(
        &mut self,
        flow: &CipherFlow,
        voucher: &Voucher,
        suite: &dyn CryptoSuite,
    ) -> Result<Arbitration, ArbitrationError> {
        self.check_voucher(flow, voucher, suite)?;
        let key = self.open_key(flow, suite)?;
        let value = to_micros(voucher.value);
        let credit = self.beta_share(value);
        self.transfer(voucher.sr, voucher.leader, value, credit);
        self.settled.insert(voucher.key());
        Ok(Arbitration { key, debited: value, credited: credit, burned: value - credit })
    }

    /// The requester asks for the key directly. Only a flow together with a
    /// valid voucher gets it, and the voucher is charged on the spot.
    pub fn arbitrate_free_key_attempt(
        &mut self,
        flow: &CipherFlow,
        voucher: Option<&Voucher>,
        suite: &dyn CryptoSuite,
    ) -> Result<Arbitration, ArbitrationError> {
        let voucher = voucher.ok_or(ArbitrationError::MissingVoucher)?;
        self.check_voucher(flow, voucher, suite)?;
        let key = self.open_key(flow, suite)?;
        let value = to_micros(voucher.value);
        self.transfer(voucher.sr, voucher.leader, value, value);
        self.settled.insert(voucher.key());
        Ok(Arbitration { key, debited: value, credited: value, burned: 0 })
    }

    /// The requester says `m` is forged. If the unit's own decryption of the
    /// flow does not verify, the voucher is disregarded (and reversed if it
    /// was already cleared).
    pub fn appeal_forged_message(
        &mut self,
        flow: &CipherFlow,
        voucher: &Voucher,
        suite: &dyn CryptoSuite,
    ) -> Result<(), ArbitrationError> {
        if !voucher.verify(suite) || voucher.sr != flow.sr || voucher.leader != flow.leader {
            return Err(ArbitrationError::InvalidVoucher);
        }
        let key = self.open_key(flow, suite)?;
        let plain = suite.sym_decrypt(&key, &flow.ciphertext);
        let genuine = ProviderMessage::from_bytes(&plain).is_some_and(|m| {
            m.verify(suite) && m.leader == flow.leader && m.service == flow.service && m.seq == flow.seq
        });
        if genuine {
            return Err(ArbitrationError::MessageGenuine);
        }
        if self.settled.remove(&voucher.key()) {
            let value = to_micros(voucher.value);
            self.transfer(voucher.leader, voucher.sr, value, value);
        }
        self.disregarded.insert(voucher.key());
        Ok(())
    }

    /// Clears a batch of vouchers presented by `leader`. Each voucher is
    /// judged on its own; a second presentation changes nothing.
    pub fn redeem_vouchers(&mut self, leader: NodeId, vouchers: &[Voucher], suite: &dyn CryptoSuite) -> SettlementReport {
        let mut report = SettlementReport { leader, entries: Vec::new(), credited: 0 };
        for v in vouchers {
            let d = if !v.verify(suite) || v.leader != leader {
                Disposition::Invalid
            } else if self.disregarded.contains(&v.key()) {
                Disposition::Disregarded
            } else if self.settled.contains(&v.key()) {
                Disposition::Duplicate
            } else {
                let value = to_micros(v.value);
                self.transfer(v.sr, leader, value, value);
                self.settled.insert(v.key());
                report.credited += value;
                Disposition::Credited
            };
            report.entries.push((v.voucher_no, v.sr, d));
        }
        report
    }

    /// `node,balance` rows plus a final `burned` row.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "node,balance")?;
        for (n, b) in &self.balances {
            writeln!(w, "{},{}", n.0, from_micros(*b))?;
        }
        writeln!(w, "burned,{}", from_micros(self.burned))
    }
}

/// A node able to serve a service type; `willing = false` declines queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Provider {
    pub node: NodeId,
    pub willing: bool,
}

/// Per-node counters and the leader's record of vouchers it accepted.
#[derive(Debug, Clone, Default)]
pub struct TxContext {
    seq: BTreeMap<NodeId, u64>,
    voucher_no: BTreeMap<NodeId, u64>,
    last_voucher: BTreeMap<NodeId, Voucher>,
    accepted: BTreeSet<(NodeId, u64)>,
    /// Value of accepted vouchers not yet presented to the trusted unit.
    outstanding: BTreeMap<NodeId, i64>,
    keys_issued: u64,
}

impl TxContext {
    pub fn new() -> Self {
        Self::default()
    }

    /// Micro-units `sr` has promised in vouchers that leaders still hold.
    pub fn outstanding(&self, sr: NodeId) -> i64 {
        self.outstanding.get(&sr).copied().unwrap_or(0)
    }

    /// Forgets vouchers once their leader has presented them for clearing.
    pub fn presented(&mut self, vouchers: &[Voucher]) {
        for v in vouchers {
            if let Some(o) = self.outstanding.get_mut(&v.sr) {
                *o -= to_micros(v.value);
            }
        }
    }

    fn next(counter: &mut BTreeMap<NodeId, u64>, node: NodeId) -> u64 {
        let c = counter.entry(node).or_insert(0);
        *c += 1;
        *c
    }

    fn session_key(&mut self, suite: &dyn CryptoSuite, leader: NodeId, sr: NodeId, seq: u64) -> SessionKey {
        self.keys_issued += 1;
        let mut seed = Vec::with_capacity(32);
        seed.extend_from_slice(b"session");
        seed.extend_from_slice(&leader.to_be_bytes());
        seed.extend_from_slice(&sr.to_be_bytes());
        seed.extend_from_slice(&seq.to_be_bytes());
        seed.extend_from_slice(&self.keys_issued.to_be_bytes());
        // the digest is public, so sign it to keep keys unpredictable to others
        SessionKey(suite.sign(leader, &suite.digest(&seed)).0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdRequest {
    pub sr: NodeId,
    pub leader: NodeId,
    pub service: u64,
    pub p_star: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransactionReport {
    pub state: TransactionState,
    /// `m` as the requester finally reads it, if it could decrypt anything.
    pub learned: Option<ProviderMessage>,
    /// The requester could read `m` and `m` verifies.
    pub learned_genuine: bool,
    /// Voucher left with the leader for later redemption.
    pub leader_voucher: Option<Voucher>,
    pub arbitration: Option<Arbitration>,
    pub refusal: Option<ArbitrationError>,
}

/// Runs one SD exchange. On the honest path this logs six messages, three
/// of them sent by the leader.
#[allow(clippy::too_many_arguments)]
pub fn run_sd_transaction(
    ctx: &mut TxContext,
    tu: &mut TrustedUnit,
    req: SdRequest,
    providers: &BTreeMap<u64, Provider>,
    leader_conduct: LeaderConduct,
    sr_conduct: RequesterConduct,
    suite: &dyn CryptoSuite,
    log: &mut MessageLog,
) -> Result<TransactionReport, TxError> {
    let SdRequest { sr, leader, service, p_star } = req;
    let balance = tu.balance(sr).ok_or(TxError::UnknownAccount(sr))? - ctx.outstanding(sr);
    let needed = to_micros(p_star);
    if balance < needed {
        return Err(TxError::InsufficientCredit { node: sr, balance, needed });
    }

    let seq = TxContext::next(&mut ctx.seq, sr);
    let mut state = TransactionState {
        phase: TxPhase::Requested,
        sr,
        leader,
        service,
        seq,
        session_key: None,
        flow: None,
        voucher: None,
    };
    log.push(sr, leader, MessageKind::SdRequest);

    let provider = match providers.get(&service) {
        Some(p) => p,
        None => {
            log.push(leader, sr, MessageKind::SdFailure);
            return Err(TxError::SdFailure(service));
        }
    };
    log.push(leader, provider.node, MessageKind::ProviderQuery);
    if !provider.willing {
        log.push(leader, sr, MessageKind::SdFailure);
        return Err(TxError::SdFailure(service));
    }
    let genuine = ProviderMessage::signed(suite, provider.node, leader, service, seq);
    log.push(provider.node, leader, MessageKind::ProviderAttestation);
    state.advance(TxEvent::Attested);

    let m = match leader_conduct {
        // the leader substitutes a provider of its own choosing; it cannot
        // produce that provider's signature
        LeaderConduct::ForgeMessage => ProviderMessage { provider: leader, ..genuine },
        _ => genuine,
    };
    let key = ctx.session_key(suite, leader, sr, seq);
    let mut ek_plain = key.0.to_vec();
    ek_plain.extend_from_slice(&seq.to_be_bytes());
    let flow = CipherFlow {
        leader,
        sr,
        service,
        seq,
        ciphertext: suite.sym_encrypt(&key, &m.to_bytes()),
        encrypted_key: suite.encrypt_for_tu(&ek_plain),
    };
    state.session_key = Some(key);
    state.flow = Some(flow.clone());
    log.push(leader, sr, MessageKind::CipherDelivery);
    state.advance(TxEvent::CipherDelivered);

    let mut report = TransactionReport {
        state: state.clone(),
        learned: None,
        learned_genuine: false,
        leader_voucher: None,
        arbitration: None,
        refusal: None,
    };

    let voucher = match sr_conduct {
        RequesterConduct::WithholdVoucher => return Ok(report),
        RequesterConduct::FreeKeyAttempt => {
            report.refusal = tu.arbitrate_free_key_attempt(&flow, None, suite).err();
            return Ok(report);
        }
        RequesterConduct::ReplayVoucher => ctx.last_voucher.get(&sr).copied().unwrap_or(Voucher {
            sr,
            leader,
            voucher_no: 0,
            value: p_star,
            attestation: Attestation([0; 32]),
        }),
        RequesterConduct::Honest => {
            let no = TxContext::next(&mut ctx.voucher_no, sr);
            let v = Voucher::issue(suite, sr, leader, no, p_star);
            ctx.last_voucher.insert(sr, v);
            v
        }
    };
    log.push(sr, leader, MessageKind::VoucherPayment);
    let acceptable = voucher.verify(suite)
        && voucher.leader == leader
        && voucher.sr == sr
        && to_micros(voucher.value) == needed
        && !ctx.accepted.contains(&voucher.key());
    if !acceptable {
        report.state = state;
        return Ok(report);
    }
    ctx.accepted.insert(voucher.key());
    *ctx.outstanding.entry(sr).or_insert(0) += needed;
    state.voucher = Some(voucher);
    state.advance(TxEvent::VoucherAccepted);

    let received_key = match leader_conduct {
        LeaderConduct::WithholdKey => match tu.arbitrate_withheld_key(&flow, &voucher, suite) {
            Ok(a) => {
                report.arbitration = Some(a);
                state.advance(TxEvent::Arbitration);
                a.key
            }
            Err(e) => {
                report.refusal = Some(e);
                report.state = state;
                return Ok(report);
            }
        },
        _ => {
            log.push(leader, sr, MessageKind::KeyRelease);
            state.advance(TxEvent::KeyDelivered);
            key
        }
    };
    report.leader_voucher = Some(voucher);

    let learned = ProviderMessage::from_bytes(&suite.sym_decrypt(&received_key, &flow.ciphertext));
    let genuine_m = learned.is_some_and(|m| m.verify(suite) && m.leader == leader && m.seq == seq);
    report.learned = learned;
    report.learned_genuine = genuine_m;
    if state.phase == TxPhase::KeyReleased {
        if genuine_m {
            state.advance(TxEvent::MessageVerified);
        } else {
            report.refusal = tu.appeal_forged_message(&flow, &voucher, suite).err();
            state.advance(TxEvent::Arbitration);
        }
    }
    report.state = state;
    Ok(report)
}
