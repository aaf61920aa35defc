//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. `adversary` may repeat; every
//! other key may appear once. Parsing never stops at the first problem: all
//! of them are collected so a broken file can be fixed in one pass.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use mcloud_core::sim::{Misbehavior, Mode, Scenario, ScriptedMisbehavior};
use mcloud_core::NodeId;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { scenario: Scenario::default(), out: PathBuf::from("out") }
    }
}

/// Every problem found, one per entry.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigErrors(pub Vec<String>);

impl std::fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "  - {e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

fn parse<T: FromStr>(key: &str, value: &str, errors: &mut Vec<String>) -> Option<T> {
    match value.parse() {
        Ok(v) => Some(v),
        Err(_) => {
            errors.push(format!("{key}: cannot parse {value:?}"));
            None
        }
    }
}

macro_rules! set {
    ($target:expr, $key:expr, $value:expr, $errors:expr) => {
        if let Some(v) = parse($key, $value, $errors) {
            $target = v;
        }
    };
}

impl RunConfig {
    /// Applies one setting. Unknown keys and unparsable values are reported
    /// in `errors` and leave the configuration unchanged.
    pub fn set(&mut self, key: &str, value: &str, errors: &mut Vec<String>) {
        let s = &mut self.scenario;
        let p = &mut s.params;
        let k = &mut p.constants;
        match key {
            "seed" => set!(s.seed, key, value, errors),
            "mode" => match value.parse::<Mode>() {
                Ok(m) => s.mode = m,
                Err(e) => errors.push(format!("mode: {e}")),
            },
            "slots" => set!(s.slots, key, value, errors),
            "out" => self.out = PathBuf::from(value),
            "nodes" => set!(p.nodes, key, value, errors),
            "eta" => set!(p.quota, key, value, errors),
            "slot_ms" => set!(p.slot_ms, key, value, errors),
            "advert_ms" => set!(p.advert_ms, key, value, errors),
            "cost_support" => set!(p.cost_support, key, value, errors),
            "election_fraction" => set!(p.election_fraction, key, value, errors),
            "max_self_searches" => set!(p.max_self_searches, key, value, errors),
            "punishment_fraction" => set!(p.punishment_fraction, key, value, errors),
            "rs_min" => set!(p.rs_min, key, value, errors),
            "rs_max" => set!(p.rs_max, key, value, errors),
            "search_cost" => set!(k.search, key, value, errors),
            "messaging_cost" => set!(k.messaging, key, value, errors),
            "database_cost" => set!(k.database, key, value, errors),
            "selection_cost" => set!(k.selection, key, value, errors),
            "pure_flood_cost" => set!(k.pure_flood, key, value, errors),
            "pure_base_cost" => set!(k.pure_base, key, value, errors),
            "capacity" => set!(s.capacity, key, value, errors),
            "initial_energy_min" => set!(s.initial_energy.0, key, value, errors),
            "initial_energy_max" => set!(s.initial_energy.1, key, value, errors),
            "message_energy" => set!(s.message_energy, key, value, errors),
            "area_side" => set!(s.mobility.side, key, value, errors),
            "tx_range" => set!(s.mobility.tx_range, key, value, errors),
            "min_speed" => set!(s.mobility.min_speed, key, value, errors),
            "max_speed" => set!(s.mobility.max_speed, key, value, errors),
            "claim_window" => set!(s.claim_window, key, value, errors),
            "justification_window" => set!(s.justification_window, key, value, errors),
            "initial_credit" => set!(s.initial_credit, key, value, errors),
            "services" => set!(s.services, key, value, errors),
            "adversary" => match parse_adversary(value) {
                Ok(a) => s.adversaries.push(a),
                Err(e) => errors.push(format!("adversary {value:?}: {e}")),
            },
            other => errors.push(format!("unknown key {other:?}")),
        }
    }

    /// Parses a configuration file's text on top of the defaults.
    pub fn parse(text: &str) -> Result<RunConfig, ConfigErrors> {
        let mut cfg = RunConfig::default();
        let mut errors = Vec::new();
        let mut seen = BTreeSet::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                errors.push(format!("line {}: expected key = value, got {line:?}", no + 1));
                continue;
            };
            let (key, value) = (key.trim(), value.trim());
            if key != "adversary" && !seen.insert(key.to_string()) {
                errors.push(format!("line {}: {key} given twice", no + 1));
                continue;
            }
            let before = errors.len();
            cfg.set(key, value, &mut errors);
            for e in &mut errors[before..] {
                *e = format!("line {}: {e}", no + 1);
            }
        }
        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(ConfigErrors(errors))
        }
    }

    /// Scenario problems that parsing alone cannot catch.
    pub fn problems(&self) -> Vec<String> {
        self.scenario.problems()
    }

    /// The effective configuration as text that [`RunConfig::parse`] reads
    /// back to an identical value.
    pub fn to_text(&self) -> String {
        let s = &self.scenario;
        let p = &s.params;
        let k = &p.constants;
        let mut out = String::new();
        let mut line = |key: &str, value: String| {
            let _ = writeln!(out, "{key} = {value}");
        };
        line("seed", s.seed.to_string());
        line("mode", s.mode.to_string());
        line("slots", s.slots.to_string());
        line("out", self.out.display().to_string());
        line("nodes", p.nodes.to_string());
        line("eta", p.quota.to_string());
        line("slot_ms", p.slot_ms.to_string());
        line("advert_ms", p.advert_ms.to_string());
        line("cost_support", p.cost_support.to_string());
        line("election_fraction", p.election_fraction.to_string());
        line("max_self_searches", p.max_self_searches.to_string());
        line("punishment_fraction", p.punishment_fraction.to_string());
        line("rs_min", p.rs_min.to_string());
        line("rs_max", p.rs_max.to_string());
        line("search_cost", k.search.to_string());
        line("messaging_cost", k.messaging.to_string());
        line("database_cost", k.database.to_string());
        line("selection_cost", k.selection.to_string());
        line("pure_flood_cost", k.pure_flood.to_string());
        line("pure_base_cost", k.pure_base.to_string());
        line("capacity", s.capacity.to_string());
        line("initial_energy_min", s.initial_energy.0.to_string());
        line("initial_energy_max", s.initial_energy.1.to_string());
        line("message_energy", s.message_energy.to_string());
        line("area_side", s.mobility.side.to_string());
        line("tx_range", s.mobility.tx_range.to_string());
        line("min_speed", s.mobility.min_speed.to_string());
        line("max_speed", s.mobility.max_speed.to_string());
        line("claim_window", s.claim_window.to_string());
        line("justification_window", s.justification_window.to_string());
        line("initial_credit", s.initial_credit.to_string());
        line("services", s.services.to_string());
        for a in &s.adversaries {
            line("adversary", format_adversary(a));
        }
        out
    }
}

/// `SLOT NODE KIND [ARGS...]`, e.g. `3 4 fake_claim 0.5` or
/// `2 1 manipulate_bid 5 7.25`.
pub fn parse_adversary(text: &str) -> Result<ScriptedMisbehavior, String> {
    let parts: Vec<&str> = text.split_whitespace().collect();
    let num = |i: usize, what: &str| -> Result<f64, String> {
        parts.get(i).ok_or_else(|| format!("missing {what}"))?.parse().map_err(|_| format!("bad {what}"))
    };
    let int = |i: usize, what: &str| -> Result<u64, String> {
        parts.get(i).ok_or_else(|| format!("missing {what}"))?.parse().map_err(|_| format!("bad {what}"))
    };
    let slot = int(0, "slot")?;
    let node = NodeId(int(1, "node")?);
    let kind = *parts.get(2).ok_or("missing kind")?;
    let (action, arity) = match kind {
        "alter_own_bid" => (Misbehavior::AlterOwnBid(num(3, "bid")?), 4),
        "manipulate_bid" => {
            (Misbehavior::ManipulateBid { victim: NodeId(int(3, "victim")?), value: num(4, "bid")? }, 5)
        }
        "refuse_auction" => (Misbehavior::RefuseAuction, 3),
        "fake_claim" => (Misbehavior::FakeClaim(num(3, "bid")?), 4),
        "withhold_key" => (Misbehavior::WithholdKey, 3),
        "forge_message" => (Misbehavior::ForgeMessage, 3),
        "withhold_voucher" => (Misbehavior::WithholdVoucher, 3),
        "free_key_attempt" => (Misbehavior::FreeKeyAttempt, 3),
        "replay_voucher" => (Misbehavior::ReplayVoucher, 3),
        other => return Err(format!("unknown kind {other:?}")),
    };
    if parts.len() != arity {
        return Err(format!("{kind} takes {} argument(s)", arity - 3));
    }
    Ok(ScriptedMisbehavior { slot, node, action })
}

pub fn format_adversary(a: &ScriptedMisbehavior) -> String {
    let tail = match &a.action {
        Misbehavior::AlterOwnBid(v) => format!("alter_own_bid {v}"),
        Misbehavior::ManipulateBid { victim, value } => format!("manipulate_bid {} {value}", victim.0),
        Misbehavior::RefuseAuction => "refuse_auction".into(),
        Misbehavior::FakeClaim(v) => format!("fake_claim {v}"),
        Misbehavior::WithholdKey => "withhold_key".into(),
        Misbehavior::ForgeMessage => "forge_message".into(),
        Misbehavior::WithholdVoucher => "withhold_voucher".into(),
        Misbehavior::FreeKeyAttempt => "free_key_attempt".into(),
        Misbehavior::ReplayVoucher => "replay_voucher".into(),
    };
    format!("{} {} {tail}", a.slot, a.node.0)
}
