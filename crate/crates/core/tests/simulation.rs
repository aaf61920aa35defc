use std::fs;

use mcloud_core::sim::export::write_artifacts;
use mcloud_core::sim::metrics::{dominance_violations, summarize};
use mcloud_core::sim::{run_scenario, Misbehavior, Mode, Scenario, ScriptedMisbehavior};
use mcloud_core::verify::render;
use mcloud_core::NodeId;
use proptest::prelude::*;

#[test]
fn artifacts_land_on_disk() {
    let dir = std::env::temp_dir().join(format!("mcloud-artifacts-{}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    let run = run_scenario(&Scenario { seed: 3, slots: 6, ..Default::default() }).unwrap();
    write_artifacts(&run, &dir).unwrap();
    for name in ["metrics.csv", "slots.csv", "slots.jsonl", "messages.csv", "ledger.csv", "summary.txt"] {
        assert!(dir.join(name).is_file(), "{name} missing");
    }
    let metrics = fs::read_to_string(dir.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 7);
    let header = metrics.lines().next().unwrap();
    assert!(header.starts_with("time_ms,slot,alive_pct,energy_std,leader,p_star,msgs_formation"));
    assert_eq!(header.split(',').count(), 6 + 5 + 2 * 10);
    assert_eq!(fs::read_to_string(dir.join("slots.jsonl")).unwrap().lines().count(), run.slots.len());
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn pure_and_leader_runs_pair_up() {
    let s = Scenario { seed: 21, ..Default::default() };
    let lr = run_scenario(&s).unwrap();
    let pr = run_scenario(&Scenario { mode: Mode::Pure, ..s }).unwrap();
    assert_eq!(lr.frames.len(), pr.frames.len());
    assert_eq!(dominance_violations(&lr.frames, &pr.frames, 1e-9), 0);
    assert!(summarize(&lr.frames).terminal_energy_std < summarize(&pr.frames).terminal_energy_std);
}

fn misbehavior() -> impl Strategy<Value = Misbehavior> {
    prop_oneof![
        (0.1f64..8.0).prop_map(Misbehavior::AlterOwnBid),
        (1u64..=10, 0.1f64..8.0).prop_map(|(v, value)| Misbehavior::ManipulateBid { victim: NodeId(v), value }),
        Just(Misbehavior::RefuseAuction),
        (0.01f64..8.0).prop_map(Misbehavior::FakeClaim),
        Just(Misbehavior::WithholdKey),
        Just(Misbehavior::ForgeMessage),
        Just(Misbehavior::WithholdVoucher),
        Just(Misbehavior::FreeKeyAttempt),
        Just(Misbehavior::ReplayVoucher),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn same_seed_same_bytes(seed in 0u64..10_000, slots in 0u64..12, pure: bool) {
        let s = Scenario { seed, slots, mode: if pure { Mode::Pure } else { Mode::LeaderBased }, ..Default::default() };
        let a = render(&run_scenario(&s).unwrap());
        let b = render(&run_scenario(&s).unwrap());
        prop_assert_eq!(a, b);
    }

    /// Scripted deviations never break the ledger, resurrect a node or
    /// produce a leader that is not a member of the run.
    #[test]
    fn adversaries_cannot_break_invariants(
        seed in 0u64..1_000,
        script in prop::collection::vec((0u64..10, 1u64..=10, misbehavior()), 1..8),
    ) {
        let adversaries = script
            .into_iter()
            .map(|(slot, node, action)| ScriptedMisbehavior { slot, node: NodeId(node), action })
            .collect();
        let run = run_scenario(&Scenario { seed, slots: 10, adversaries, ..Default::default() }).unwrap();
        prop_assert!(run.ledger.conserved());
        for w in run.frames.windows(2) {
            prop_assert!(w[1].alive_fraction() <= w[0].alive_fraction());
        }
        for f in &run.frames {
            if let Some(l) = f.leader {
                prop_assert!((1..=10).contains(&l.0));
            }
        }
        prop_assert_eq!(run.elections.len(), 10);
    }
}
