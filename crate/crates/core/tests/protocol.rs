use std::collections::{BTreeMap, BTreeSet};

use mcloud_core::auction::{equilibrium_bid, BidValue};
use mcloud_core::crypto::SimCrypto;
use mcloud_core::message::{MessageLog, Phase};
use mcloud_core::phase1::{run_tournament, Schedule};
use mcloud_core::phase2::{
    begin_slot, handle_departure, handle_join, run_slot, CloudState, JoinDecision, SlotConduct, SlotVerdict,
};
use mcloud_core::NodeId;
use proptest::prelude::*;

fn bids(costs: &[f64]) -> Vec<(NodeId, f64)> {
    costs.iter().enumerate().map(|(i, &c)| (NodeId(i as u64 + 1), equilibrium_bid(c, costs.len(), 10.0))).collect()
}

fn lowest(b: &[(NodeId, f64)]) -> (NodeId, f64) {
    *b.iter().min_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0))).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    /// Every schedule elects the lowest bidder, and formation then election
    /// agree on the same leader and fee.
    #[test]
    fn formation_and_election_agree(costs in prop::collection::vec(0.0f64..10.0, 2..24), seed: u64) {
        let suite = SimCrypto::new(seed);
        let b = bids(&costs);
        let (winner, fee) = lowest(&b);
        for schedule in [Schedule::BalancedTree, Schedule::SequentialChain, Schedule::RandomSeeded(seed)] {
            let mut log = MessageLog::new();
            let out = run_tournament(&b, &schedule, &BTreeMap::new(), &suite, &mut log).unwrap();
            prop_assert_eq!(out.cloud.leader, winner);
            prop_assert_eq!(out.cloud.sd_fee, fee);
            prop_assert_eq!(out.cloud.size(), b.len());
            prop_assert_eq!(log.count_phase(Phase::Formation), 4 * (b.len() - 1) + out.notifications());
        }

        let mut cloud = CloudState::new(b.iter().map(|x| x.0), b[0].0, 5.0);
        let offers: BTreeMap<NodeId, BidValue> = b.iter().map(|&(n, x)| (n, BidValue::Offer(x))).collect();
        let mut log = MessageLog::new();
        let rec = run_slot(&mut cloud, &offers, &SlotConduct::default(), &suite, &mut log).unwrap();
        prop_assert_eq!(rec.verdict, SlotVerdict::Elected { leader: winner, p_star: fee });
        prop_assert_eq!(log.len(), 3 * (b.len() - 1));
    }

    /// Arbitrary churn never leaves a leader outside the roster, a
    /// blacklisted member, or a joiner admitted beyond capacity.
    #[test]
    fn membership_churn_keeps_roster_consistent(
        ops in prop::collection::vec((0u8..3, 1u64..16), 1..60),
    ) {
        let mut cloud = CloudState::new((1..=8).map(NodeId), NodeId(1), 3.0);
        let mut log = MessageLog::new();
        for (op, id) in ops {
            let node = NodeId(id);
            match op {
                0 => {
                    let before = cloud.members.len();
                    let already = cloud.members.contains(&node);
                    match handle_join(&mut cloud, node, &mut log) {
                        JoinDecision::Admitted { .. } => prop_assert!(already || before < cloud.capacity),
                        JoinDecision::Deferred => prop_assert!(cloud.pending_joins.contains(&node)),
                        JoinDecision::Rejected => {}
                    }
                }
                1 => { let _ = handle_departure(&mut cloud, node); }
                _ => { begin_slot(&mut cloud); }
            }
            if let Some(l) = cloud.leader {
                prop_assert!(cloud.members.contains(&l));
            }
            let members: BTreeSet<NodeId> = cloud.members.clone();
            prop_assert!(members.iter().all(|m| !cloud.blacklist.contains(*m)));
            prop_assert!(cloud.members.len() <= cloud.capacity.max(8));
        }
    }
}
