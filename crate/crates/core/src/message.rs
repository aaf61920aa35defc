//! Wire-message accounting. Every protocol step appends one record per
//! message; overhead figures are plain counts over the log.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    Formation,
    Election,
    Claims,
    Transaction,
    Membership,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Formation => "formation",
            Phase::Election => "election",
            Phase::Claims => "claims",
            Phase::Transaction => "transaction",
            Phase::Membership => "membership",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MessageKind {
    // pairwise formation
    FormationRequest,
    ResponderBid,
    InitiatorReveal,
    ClientListTransfer,
    NewLeaderNotice,
    RequestForward,
    // slot auction
    BidCommitment,
    ClientBid,
    ResultBroadcast,
    // claim windows
    ClaimAnnouncement,
    ClaimConfirmation,
    FakeClaimReport,
    // SD transaction
    SdRequest,
    ProviderQuery,
    ProviderAttestation,
    CipherDelivery,
    VoucherPayment,
    KeyRelease,
    SdFailure,
    // churn
    JoinRequest,
    JoinReply,
}

impl MessageKind {
    pub fn phase(self) -> Phase {
        use MessageKind::*;
        match self {
            FormationRequest | ResponderBid | InitiatorReveal | ClientListTransfer
            | NewLeaderNotice | RequestForward => Phase::Formation,
            BidCommitment | ClientBid | ResultBroadcast => Phase::Election,
            ClaimAnnouncement | ClaimConfirmation | FakeClaimReport => Phase::Claims,
            SdRequest | ProviderQuery | ProviderAttestation | CipherDelivery | VoucherPayment
            | KeyRelease | SdFailure => Phase::Transaction,
            JoinRequest | JoinReply => Phase::Membership,
        }
    }

    pub fn size_class(self) -> SizeClass {
        use MessageKind::*;
        match self {
            FormationRequest | BidCommitment => SizeClass::Digest,
            ResultBroadcast => SizeClass::BidList,
            ClientListTransfer => SizeClass::ClientList,
            CipherDelivery => SizeClass::Cipher,
            _ => SizeClass::Small,
        }
    }

    pub fn as_str(self) -> &'static str {
        use MessageKind::*;
        match self {
            FormationRequest => "formation_request",
            ResponderBid => "responder_bid",
            InitiatorReveal => "initiator_reveal",
            ClientListTransfer => "client_list_transfer",
            NewLeaderNotice => "new_leader_notice",
            RequestForward => "request_forward",
            BidCommitment => "bid_commitment",
            ClientBid => "client_bid",
            ResultBroadcast => "result_broadcast",
            ClaimAnnouncement => "claim_announcement",
            ClaimConfirmation => "claim_confirmation",
            FakeClaimReport => "fake_claim_report",
            SdRequest => "sd_request",
            ProviderQuery => "provider_query",
            ProviderAttestation => "provider_attestation",
            CipherDelivery => "cipher_delivery",
            VoucherPayment => "voucher_payment",
            KeyRelease => "key_release",
            SdFailure => "sd_failure",
            JoinRequest => "join_request",
            JoinReply => "join_reply",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SizeClass {
    Small,
    Digest,
    BidList,
    ClientList,
    Cipher,
}

impl SizeClass {
    pub fn as_str(self) -> &'static str {
        match self {
            SizeClass::Small => "small",
            SizeClass::Digest => "digest",
            SizeClass::BidList => "bid_list",
            SizeClass::ClientList => "client_list",
            SizeClass::Cipher => "cipher",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolMessage {
    pub from: NodeId,
    pub to: NodeId,
    pub kind: MessageKind,
    pub round: u64,
    pub size: SizeClass,
    pub at_ms: u64,
}

/// Append-only message record.
#[derive(Debug, Clone, Default)]
pub struct MessageLog {
    records: Vec<ProtocolMessage>,
    clock_ms: u64,
    round: u64,
}

impl MessageLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Timestamp applied to subsequent appends.
    pub fn set_clock(&mut self, at_ms: u64) {
        self.clock_ms = at_ms;
    }

    pub fn clock(&self) -> u64 {
        self.clock_ms
    }

    pub fn set_round(&mut self, round: u64) {
        self.round = round;
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn push(&mut self, from: NodeId, to: NodeId, kind: MessageKind) {
        self.records.push(ProtocolMessage {
            from,
            to,
            kind,
            round: self.round,
            size: kind.size_class(),
            at_ms: self.clock_ms,
        });
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[ProtocolMessage] {
        &self.records
    }

    /// Records appended since `mark` (a previous [`Self::len`]).
    pub fn since(&self, mark: usize) -> &[ProtocolMessage] {
        &self.records[mark.min(self.records.len())..]
    }

    pub fn count(&self, kind: MessageKind) -> usize {
        self.records.iter().filter(|m| m.kind == kind).count()
    }

    pub fn count_phase(&self, phase: Phase) -> usize {
        self.records.iter().filter(|m| m.kind.phase() == phase).count()
    }

    /// CSV with header `from,to,kind,round,bytes_class`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "from,to,kind,round,bytes_class")?;
        for m in &self.records {
            writeln!(
                w,
                "{},{},{},{},{}",
                m.from.0,
                m.to.0,
                m.kind.as_str(),
                m.round,
                m.size.as_str()
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_csv() {
        let mut log = MessageLog::new();
        log.set_round(2);
        log.push(NodeId(1), NodeId(2), MessageKind::FormationRequest);
        log.push(NodeId(2), NodeId(1), MessageKind::ResponderBid);
        log.push(NodeId(3), NodeId(1), MessageKind::ClientBid);
        assert_eq!(log.count(MessageKind::ResponderBid), 1);
        assert_eq!(log.count_phase(Phase::Formation), 2);
        assert_eq!(log.since(1).len(), 2);

        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "from,to,kind,round,bytes_class");
        assert_eq!(lines[1], "1,2,formation_request,2,digest");
        assert_eq!(lines.len(), 4);
    }
}
