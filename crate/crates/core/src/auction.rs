//! First-price sealed-bid procurement auction among cloud members.
//!
//! Every node's provisioning cost is private; rivals are believed to draw
//! theirs uniformly from `[0, K]`. The symmetric equilibrium bid is linear in
//! the cost:
//!
//! ```text
//! sigma(c) = (n-1)^2 / (n(n-1)+1) * (c + K(n-1) / ((n-1)^2 + 1))
//! ```
//!
//! It does not depend on the per-client quota, which cancels out of the
//! first-order condition.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{CryptoSuite, Digest};
use crate::NodeId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AuctionError {
    #[error("bid {bid} outside the equilibrium range [{low}, {high}]")]
    OutOfRange { bid: f64, low: f64, high: f64 },
    #[error("every participant abstained")]
    NoCandidate,
}

/// Slope `(n-1)^2 / (n(n-1)+1)` of the equilibrium bid.
pub fn bid_slope(nodes: usize) -> f64 {
    let p = nodes as f64 - 1.0;
    p * p / (nodes as f64 * p + 1.0)
}

/// Additive shading `K(n-1) / ((n-1)^2 + 1)` applied before the slope.
pub fn bid_shading(nodes: usize, support: f64) -> f64 {
    let p = nodes as f64 - 1.0;
    support * p / (p * p + 1.0)
}

pub fn equilibrium_bid(cost: f64, nodes: usize, support: f64) -> f64 {
    bid_slope(nodes) * (cost + bid_shading(nodes, support))
}

/// Range of equilibrium bids over costs in `[0, K]`.
pub fn bid_range(nodes: usize, support: f64) -> (f64, f64) {
    (
        equilibrium_bid(0.0, nodes, support),
        equilibrium_bid(support, nodes, support),
    )
}

fn check_range(bid: f64, nodes: usize, support: f64) -> Result<(), AuctionError> {
    let (low, high) = bid_range(nodes, support);
    let slack = 1e-12 * high.abs().max(1.0);
    if bid.is_finite() && bid >= low - slack && bid <= high + slack {
        Ok(())
    } else {
        Err(AuctionError::OutOfRange { bid, low, high })
    }
}

/// Cost that produces `bid` in equilibrium.
pub fn inverse_bid(bid: f64, nodes: usize, support: f64) -> Result<f64, AuctionError> {
    check_range(bid, nodes, support)?;
    Ok(bid / bid_slope(nodes) - bid_shading(nodes, support))
}

/// Expected payoff of a node with cost `cost` bidding `bid` while every rival
/// plays the equilibrium strategy.
///
/// This is the integrated closed form divided by `K^(n-1)`, so it is the
/// expectation itself rather than a scaled version. Writing `t` for the
/// probability-root `(K - sigma^-1(b)) / K`, `M = (n-1) eta`, `a` the bid
/// slope, `d` the shading and `w = eta a` the loss weight:
///
/// ```text
/// U = M (b - c) t^(n-1)
///   - w K t^n / n + w (K + d) t^(n-1) / (n-1)
///   + w K / n     - w (K + d) / (n-1)
/// ```
///
/// The loss terms charge `eta` times the winning bid of one designated rival
/// whenever that rival wins.
pub fn expected_payoff(
    cost: f64,
    bid: f64,
    nodes: usize,
    support: f64,
    quota: u32,
) -> Result<f64, AuctionError> {
    check_range(bid, nodes, support)?;
    let n = nodes as f64;
    let eta = f64::from(quota);
    let m = (n - 1.0) * eta;
    let slope = (n - 1.0) * m / (n * m + eta);
    let shading = m * support / ((n - 1.0) * m + eta);
    let weight = eta * slope;

    let rival_cost = bid / slope - shading;
    let t = ((support - rival_cost) / support).clamp(0.0, 1.0);
    let win = t.powi(nodes as i32 - 1);

    Ok(m * (bid - cost) * win - weight * support * t * win / n
        + weight * (support + shading) * win / (n - 1.0)
        + weight * support / n
        - weight * (support + shading) / (n - 1.0))
}

/// Residual of the equilibrium differential equation at cost `c`:
/// `M (K - c) sigma'(c) - M (sigma(c) - c)(n-1) - eta sigma(c)`.
pub fn ode_residual(cost: f64, nodes: usize, support: f64, quota: u32) -> f64 {
    let n = nodes as f64;
    let eta = f64::from(quota);
    let m = (n - 1.0) * eta;
    let sigma = equilibrium_bid(cost, nodes, support);
    let derivative = bid_slope(nodes);
    m * (support - cost) * derivative - m * (sigma - cost) * (n - 1.0) - eta * sigma
}

pub fn verify_ode_residual(nodes: usize, support: f64, quota: u32, grid: &[f64]) -> f64 {
    grid.iter()
        .map(|&c| ode_residual(c, nodes, support, quota).abs())
        .fold(0.0, f64::max)
}

/// Evenly spaced bids covering the equilibrium range with spacing close to `step`.
pub fn bid_grid(nodes: usize, support: f64, step: f64) -> Vec<f64> {
    let (low, high) = bid_range(nodes, support);
    let count = ((high - low) / step).ceil().max(1.0) as usize;
    (0..=count)
        .map(|i| low + (high - low) * i as f64 / count as f64)
        .collect()
}

/// Outcome of a grid search over a rival-equilibrium payoff curve.
#[derive(Debug, Clone, PartialEq)]
pub struct BestResponse {
    pub argmax: f64,
    pub equilibrium: f64,
    /// Largest grid spacing, the resolution of `argmax`.
    pub grid_step: f64,
    /// Largest discrete second difference along the grid.
    pub max_second_difference: f64,
    /// Payoff rises then falls along the grid, up to rounding noise.
    pub unimodal: bool,
}

impl BestResponse {
    pub fn argmax_within_step(&self) -> bool {
        (self.argmax - self.equilibrium).abs() <= self.grid_step * (1.0 + 1e-9)
    }

    pub fn concave(&self, tolerance: f64) -> bool {
        self.max_second_difference <= tolerance
    }
}

pub fn verify_best_response(
    cost: f64,
    nodes: usize,
    support: f64,
    quota: u32,
    grid: &[f64],
) -> Result<BestResponse, AuctionError> {
    let values = grid
        .iter()
        .map(|&b| expected_payoff(cost, b, nodes, support, quota))
        .collect::<Result<Vec<_>, _>>()?;
    let (best, _) = values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .ok_or(AuctionError::NoCandidate)?;

    let max_second_difference = values
        .windows(3)
        .map(|w| w[2] - 2.0 * w[1] + w[0])
        .fold(f64::NEG_INFINITY, f64::max);
    let grid_step = grid.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);

    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let noise = 1e-12 * scale;
    let rising = values[..=best].windows(2).all(|w| w[1] >= w[0] - noise);
    let falling = values[best..].windows(2).all(|w| w[1] <= w[0] + noise);

    Ok(BestResponse {
        argmax: grid[best],
        equilibrium: equilibrium_bid(cost, nodes, support),
        grid_step,
        max_second_difference,
        unimodal: rising && falling,
    })
}

/// Offered SD fee, or abstention by a node whose provisioning cost is
/// infeasible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BidValue {
    Offer(f64),
    Abstain,
}

impl BidValue {
    pub fn offer(self) -> Option<f64> {
        match self {
            BidValue::Offer(v) => Some(v),
            BidValue::Abstain => None,
        }
    }

    /// 8-byte big-endian float; abstention is all ones.
    pub fn to_be_bytes(self) -> [u8; 8] {
        match self {
            BidValue::Offer(v) => v.to_be_bytes(),
            BidValue::Abstain => [0xff; 8],
        }
    }
}

/// Byte layout hashed into a commitment: node id (8 bytes, big-endian)
/// followed by the bid value (8 bytes, big-endian IEEE-754).
pub fn commitment_bytes(node: NodeId, value: BidValue) -> [u8; 16] {
    let mut out = [0u8; 16];
    out[..8].copy_from_slice(&node.to_be_bytes());
    out[8..].copy_from_slice(&value.to_be_bytes());
    out
}

pub fn commit(suite: &dyn CryptoSuite, node: NodeId, value: BidValue) -> Digest {
    suite.digest(&commitment_bytes(node, value))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bid {
    pub node: NodeId,
    pub value: BidValue,
    pub commitment: Digest,
}

impl Bid {
    pub fn sealed(suite: &dyn CryptoSuite, node: NodeId, value: BidValue) -> Self {
        Bid { node, value, commitment: commit(suite, node, value) }
    }

    pub fn offer(suite: &dyn CryptoSuite, node: NodeId, value: f64) -> Self {
        Self::sealed(suite, node, BidValue::Offer(value))
    }

    pub fn verify(&self, suite: &dyn CryptoSuite) -> bool {
        commit(suite, self.node, self.value) == self.commitment
    }
}

/// Orders offers by value, then by node id.
pub fn bid_order(a: (NodeId, f64), b: (NodeId, f64)) -> Ordering {
    a.1.total_cmp(&b.1).then(a.0.cmp(&b.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuctionOutcome {
    pub winner: NodeId,
    pub p_star: f64,
    /// Offers in ascending order; abstentions are left out.
    pub ranking: Vec<(NodeId, f64)>,
}

pub fn select_winner<I>(bids: I) -> Result<AuctionOutcome, AuctionError>
where
    I: IntoIterator<Item = (NodeId, BidValue)>,
{
    let mut ranking: Vec<(NodeId, f64)> = bids
        .into_iter()
        .filter_map(|(node, v)| v.offer().map(|x| (node, x)))
        .collect();
    ranking.sort_by(|a, b| bid_order(*a, *b));
    let &(winner, p_star) = ranking.first().ok_or(AuctionError::NoCandidate)?;
    Ok(AuctionOutcome { winner, p_star, ranking })
}

pub fn select_winner_from_bids(bids: &[Bid]) -> Result<AuctionOutcome, AuctionError> {
    select_winner(bids.iter().map(|b| (b.node, b.value)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::SimCrypto;
    use proptest::prelude::*;

    const TABLE1_BIDS: [f64; 8] = [3.09, 3.86, 2.75, 5.15, 3.35, 4.21, 3.26, 4.04];
    const TABLE2_BIDS: [f64; 8] = [3.18, 3.95, 3.26, 5.24, 3.44, 4.3, 3.35, 4.12];

    #[test]
    fn worked_example_bids() {
        assert!((equilibrium_bid(1.8, 8, 10.0) - 2.75).abs() < 0.005);
        // 5.1579 is printed as 5.15 (truncated, not rounded)
        assert!((equilibrium_bid(4.6, 8, 10.0) - 5.15).abs() < 0.01);
        assert_eq!((equilibrium_bid(4.6, 8, 10.0) * 100.0).floor() / 100.0, 5.15);
        assert!((equilibrium_bid(2.3, 8, 10.0) - 3.18).abs() < 0.005);
        let zero = equilibrium_bid(0.0, 8, 10.0);
        assert!((zero - 49.0 / 57.0 * 1.4).abs() < 1e-12);
        assert!((zero - 1.2035).abs() < 1e-4);
    }

    #[test]
    fn inverse_of_rounded_table_bid() {
        assert!((inverse_bid(2.75, 8, 10.0).unwrap() - 1.8).abs() < 2e-3);
    }

    #[test]
    fn inverse_rejects_bids_below_range() {
        let (low, high) = bid_range(8, 10.0);
        assert!(matches!(inverse_bid(low - 0.01, 8, 10.0), Err(AuctionError::OutOfRange { .. })));
        assert!(inverse_bid(high + 0.01, 8, 10.0).is_err());
        assert!(inverse_bid(f64::NAN, 8, 10.0).is_err());
    }

    #[test]
    fn appendix_range_matches_bid_range() {
        // [(n-1) M^2 K / ((nM+eta)((n-1)M+eta)), (n-1) M K / ((n-1)M+eta)]
        for (n, eta) in [(2usize, 1u32), (8, 5), (30, 7)] {
            let k = 10.0;
            let nf = n as f64;
            let e = f64::from(eta);
            let m = (nf - 1.0) * e;
            let low = (nf - 1.0) * m * m * k / ((nf * m + e) * ((nf - 1.0) * m + e));
            let high = (nf - 1.0) * m * k / ((nf - 1.0) * m + e);
            let (l, h) = bid_range(n, k);
            assert!((l - low).abs() < 1e-12 && (h - high).abs() < 1e-12);
        }
    }

    #[test]
    fn residual_vanishes() {
        let grid: Vec<f64> = (0..=100).map(|i| i as f64 / 10.0).collect();
        for &(n, eta) in &[(8usize, 5u32), (2, 5), (3, 1)] {
            let m = ((n - 1) as u32 * eta) as f64;
            assert!(verify_ode_residual(n, 10.0, eta, &grid) < 1e-6 * m * 10.0);
        }
        assert!(ode_residual(10.0, 8, 10.0, 5).abs() < 1e-9);
    }

    #[test]
    fn payoff_at_top_of_range_is_pure_loss() {
        let (_, high) = bid_range(8, 10.0);
        let n = 8.0;
        let eta = 5.0;
        let m = 7.0 * eta;
        let slope = 7.0 * m / (n * m + eta);
        let shading = m * 10.0 / (7.0 * m + eta);
        let w = eta * slope;
        let loss_only = w * 10.0 / n - w * (10.0 + shading) / 7.0;
        let u = expected_payoff(high, high, 8, 10.0, 5).unwrap();
        assert!((u - loss_only).abs() < 1e-9);
        assert!(u < 0.0);
    }

    #[test]
    fn expected_payoff_rejects_out_of_range_bid() {
        assert!(expected_payoff(1.0, 20.0, 8, 10.0, 5).is_err());
    }

    #[test]
    fn best_response_lands_on_equilibrium() {
        let grid = bid_grid(8, 10.0, 1e-3 * 10.0);
        let br = verify_best_response(1.8, 8, 10.0, 5, &grid).unwrap();
        assert!(br.argmax_within_step());
        assert!((br.argmax - 2.75).abs() < 1e-2);
        assert!(br.unimodal);
        let br0 = verify_best_response(0.0, 8, 10.0, 5, &grid).unwrap();
        assert!((br0.argmax - 1.2035).abs() <= br0.grid_step);
    }

    #[test]
    fn two_node_payoff_is_concave() {
        let grid = bid_grid(2, 10.0, 1e-2);
        let br = verify_best_response(9.0, 2, 10.0, 5, &grid).unwrap();
        assert!(br.concave(1e-9));
        assert!(br.argmax_within_step());
    }

    #[test]
    fn winner_selection_tables() {
        let s = SimCrypto::default();
        let bids: Vec<Bid> = TABLE1_BIDS
            .iter()
            .enumerate()
            .map(|(i, &b)| Bid::offer(&s, NodeId(i as u64 + 1), b))
            .collect();
        let out = select_winner_from_bids(&bids).unwrap();
        assert_eq!(out.winner, NodeId(3));
        assert_eq!(out.p_star, 2.75);
        assert_eq!(out.ranking.len(), 8);

        let out2 = select_winner(
            TABLE2_BIDS.iter().enumerate().map(|(i, &b)| (NodeId(i as u64 + 1), BidValue::Offer(b))),
        )
        .unwrap();
        assert_eq!(out2.winner, NodeId(1));
        assert_eq!(out2.p_star, 3.18);
    }

    #[test]
    fn ties_go_to_lowest_id() {
        let out = select_winner([(NodeId(7), BidValue::Offer(3.0)), (NodeId(2), BidValue::Offer(3.0))]).unwrap();
        assert_eq!(out.winner, NodeId(2));
    }

    #[test]
    fn all_abstain_is_no_candidate() {
        let r = select_winner([(NodeId(1), BidValue::Abstain), (NodeId(2), BidValue::Abstain)]);
        assert_eq!(r, Err(AuctionError::NoCandidate));
    }

    #[test]
    fn commitments_verify_and_bind() {
        let s = SimCrypto::default();
        let b = Bid::offer(&s, NodeId(4), 5.15);
        assert!(b.verify(&s));
        let forged = Bid { value: BidValue::Offer(5.0), ..b.clone() };
        assert!(!forged.verify(&s));
        let abstain = Bid::sealed(&s, NodeId(4), BidValue::Abstain);
        assert_ne!(abstain.commitment, b.commitment);
        assert_eq!(&commitment_bytes(NodeId(1), BidValue::Offer(1.0))[..8], &[0, 0, 0, 0, 0, 0, 0, 1]);
    }

    proptest! {
        #[test]
        fn bid_is_increasing(n in 2usize..200, c1 in 0.0f64..10.0, c2 in 0.0f64..10.0) {
            prop_assume!(c1 < c2);
            prop_assert!(equilibrium_bid(c1, n, 10.0) < equilibrium_bid(c2, n, 10.0));
        }

        #[test]
        fn inverse_round_trip(n in 2usize..200, c in 0.0f64..=10.0) {
            let b = equilibrium_bid(c, n, 10.0);
            prop_assert!((inverse_bid(b, n, 10.0).unwrap() - c).abs() < 1e-9);
        }

        #[test]
        fn selection_ignores_order_and_abstentions(
            values in proptest::collection::vec(0.0f64..10.0, 1..20),
            extra in 0usize..5,
            rot in 0usize..20,
        ) {
            let mut bids: Vec<(NodeId, BidValue)> = values
                .iter()
                .enumerate()
                .map(|(i, &v)| (NodeId(i as u64), BidValue::Offer(v)))
                .collect();
            let base = select_winner(bids.clone()).unwrap();
            let k = rot % bids.len();
            bids.rotate_left(k);
            for j in 0..extra {
                bids.push((NodeId(1000 + j as u64), BidValue::Abstain));
            }
            let other = select_winner(bids).unwrap();
            prop_assert_eq!(base, other);
        }
    }

    #[test]
    fn bid_exceeds_cost_below_crossover() {
        // sigma(c) > c holds exactly for c < (n-1)^3 K / (n (n^2 - 2n + 2))
        for n in [2usize, 3, 8, 50, 1000] {
            let nf = n as f64;
            let crossover = (nf - 1.0).powi(3) * 10.0 / (nf * (nf * nf - 2.0 * nf + 2.0));
            assert!((equilibrium_bid(crossover, n, 10.0) - crossover).abs() < 1e-9);
            for i in 0..1000 {
                let c = crossover * i as f64 / 1000.0;
                assert!(equilibrium_bid(c, n, 10.0) > c, "n={n} c={c}");
            }
            assert!(equilibrium_bid(10.0, n, 10.0) < 10.0);
        }
    }

    #[test]
    fn shading_vanishes_for_large_clouds() {
        let gap = equilibrium_bid(3.0, 1000, 10.0) - 3.0;
        assert!(gap.abs() < 0.01 * 10.0);
    }
}
