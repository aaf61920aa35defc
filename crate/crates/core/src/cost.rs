//! Per-node economics: component costs, provisioning cost (SDPC), pure-model
//! discovery cost (SDC), the energy needed to lead one slot, payoffs and the
//! minimum SD quota that keeps every equilibrium bid below the pure cost.
//!
//! The component cost shapes are all of the form `constant * workload / rs`,
//! where `rs` is the remaining energy fraction of the node:
//!
//! | component  | workload                         |
//! |------------|----------------------------------|
//! | search     | `log2(n)` (lookup over n-1 rows)  |
//! | messaging  | `1` (fixed three-message exchange)|
//! | database   | `(n-1) * floor(T_select/T_adv)`   |
//! | selection  | `2 (n-1)` auction messages        |
//! | pure SDC   | `(n-1)` flooded peers plus a base |

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auction;
use crate::NodeId;

/// Interior points of the resource-status grid used by [`eta_min`]; both
/// endpoints are added on top.
pub const RS_GRID_INTERIOR: usize = 1024;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostError {
    #[error("resource status must be positive and finite, got {0}")]
    Domain(f64),
    #[error("provisioning cost is infeasible (energy at or below the leadership requirement)")]
    Infeasible,
    #[error("no finite SD quota keeps bids below the pure cost (resource status {rs})")]
    NoFeasibleQuota { rs: f64 },
    #[error("cost calibration violated at rs={rs}: sdpc {sdpc} is not below sdc {sdc}")]
    Calibration { rs: f64, sdpc: f64, sdc: f64 },
    #[error("invalid parameters: {}", .0.join("; "))]
    InvalidParams(Vec<String>),
}

/// Scale constants of the cost shapes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostConstants {
    pub search: f64,
    pub messaging: f64,
    pub database: f64,
    pub selection: f64,
    pub pure_flood: f64,
    pub pure_base: f64,
}

impl Default for CostConstants {
    /// Calibrated for a 10-node cloud with `rs` in `[0.25, 1]`: provisioning
    /// costs span roughly `[2.1, 8.5]`, pure costs `[3.1, 12.4]`, and the
    /// minimum quota is 5.
    fn default() -> Self {
        CostConstants {
            search: 0.03,
            messaging: 0.9,
            database: 0.4,
            selection: 0.8,
            pure_flood: 0.31,
            pure_base: 0.31,
        }
    }
}

/// Protocol and economic parameters shared by every node in a cloud.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    /// Cloud size `n`.
    pub nodes: usize,
    /// SD responses owed to each client per slot (`eta`).
    pub quota: u32,
    /// Slot duration `T_select` in milliseconds.
    pub slot_ms: u64,
    /// Advertisement period `T_adv` in milliseconds.
    pub advert_ms: u64,
    /// Upper end `K` of the uniform belief over rivals' provisioning costs.
    pub cost_support: f64,
    /// Fraction of the slot after which the next election starts (`alpha`).
    pub election_fraction: f64,
    /// Upper bound on a leader's own searches per slot (`lambda`).
    pub max_self_searches: u32,
    /// Share of a voucher paid to a leader that withheld the session key (`beta`).
    pub punishment_fraction: f64,
    pub rs_min: f64,
    pub rs_max: f64,
    pub constants: CostConstants,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            nodes: 10,
            quota: 5,
            slot_ms: 300_000,
            advert_ms: 30_000,
            cost_support: 10.0,
            election_fraction: 0.9,
            max_self_searches: 5,
            punishment_fraction: 0.5,
            rs_min: 0.25,
            rs_max: 1.0,
            constants: CostConstants::default(),
        }
    }
}

impl SimParams {
    /// Collects every violated invariant instead of stopping at the first.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.nodes < 2 {
            out.push(format!("n must be at least 2 (got {})", self.nodes));
        }
        if self.quota < 1 {
            out.push("eta must be at least 1".to_string());
        }
        if self.advert_ms == 0 || self.advert_ms > self.slot_ms {
            out.push(format!(
                "need 0 < t_adv <= t_select (got t_adv={} ms, t_select={} ms)",
                self.advert_ms, self.slot_ms
            ));
        }
        if !(self.election_fraction > 0.0 && self.election_fraction < 1.0) {
            out.push(format!("alpha must lie in (0, 1) (got {})", self.election_fraction));
        }
        if !(self.punishment_fraction > 0.0 && self.punishment_fraction < 1.0) {
            out.push(format!("beta must lie in (0, 1) (got {})", self.punishment_fraction));
        }
        if !(self.rs_min > 0.0 && self.rs_min <= self.rs_max && self.rs_max.is_finite()) {
            out.push(format!(
                "need 0 < rs_min <= rs_max (got rs_min={}, rs_max={})",
                self.rs_min, self.rs_max
            ));
        }
        if !(self.cost_support > 0.0 && self.cost_support.is_finite()) {
            out.push(format!("k must be positive (got {})", self.cost_support));
        }
        let c = &self.constants;
        for (name, v) in [
            ("kappa_s", c.search),
            ("kappa_m", c.messaging),
            ("kappa_db", c.database),
            ("kappa_ls", c.selection),
            ("kappa_p", c.pure_flood),
            ("kappa_q", c.pure_base),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                out.push(format!("{name} must be positive (got {v})"));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), CostError> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CostError::InvalidParams(problems))
        }
    }

    /// `floor(T_select / T_adv)`.
    pub fn adverts_per_slot(&self) -> u64 {
        self.slot_ms / self.advert_ms.max(1)
    }

    /// Total SDs the leader serves per slot, `M = (n-1) * eta`.
    pub fn sd_per_slot(&self) -> u64 {
        (self.nodes as u64).saturating_sub(1) * u64::from(self.quota)
    }

    /// Same parameters for a cloud of a different size.
    pub fn with_nodes(&self, nodes: usize) -> SimParams {
        SimParams { nodes, ..self.clone() }
    }

    pub fn with_quota(&self, quota: u32) -> SimParams {
        SimParams { quota, ..self.clone() }
    }
}

/// Search, messaging, database and leader-selection costs of one node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComponentCosts {
    pub search: f64,
    pub messaging: f64,
    pub database: f64,
    pub selection: f64,
}

fn check_rs(rs: f64) -> Result<(), CostError> {
    if rs > 0.0 && rs.is_finite() {
        Ok(())
    } else {
        Err(CostError::Domain(rs))
    }
}

pub fn component_costs(rs: f64, params: &SimParams) -> Result<ComponentCosts, CostError> {
    check_rs(rs)?;
    let n = params.nodes as f64;
    let peers = n - 1.0;
    let k = &params.constants;
    Ok(ComponentCosts {
        search: k.search * n.log2() / rs,
        messaging: k.messaging / rs,
        database: k.database * peers * params.adverts_per_slot() as f64 / rs,
        selection: k.selection * 2.0 * peers / rs,
    })
}

/// Pure-model cost per SD for a node flooding queries to `nodes - 1` peers.
pub fn sdc(rs: f64, nodes: usize, constants: &CostConstants) -> Result<f64, CostError> {
    check_rs(rs)?;
    let peers = nodes as f64 - 1.0;
    Ok((constants.pure_flood * peers + constants.pure_base) / rs)
}

/// Provisioning cost per SD. Never represented as a floating infinity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Sdpc {
    Finite(f64),
    Infeasible,
}

impl Sdpc {
    pub fn finite(self) -> Option<f64> {
        match self {
            Sdpc::Finite(v) => Some(v),
            Sdpc::Infeasible => None,
        }
    }

    pub fn is_feasible(self) -> bool {
        matches!(self, Sdpc::Finite(_))
    }
}

/// Provisioning cost ignoring the energy gate.
pub fn unconstrained_sdpc(costs: &ComponentCosts, self_searches: u32, params: &SimParams) -> f64 {
    let m = params.sd_per_slot() as f64;
    costs.search
        + costs.messaging
        + (costs.database + costs.selection + f64::from(self_searches) * costs.search) / m
}

/// Energy a node must hold to lead for one slot.
pub fn required_energy(costs: &ComponentCosts, self_searches: u32, params: &SimParams) -> f64 {
    let m = params.sd_per_slot() as f64;
    (m + f64::from(self_searches)) * costs.search
        + m * costs.messaging
        + costs.database
        + costs.selection
}

/// Provisioning cost with the energy gate: infeasible whenever
/// `energy <= required_energy`.
pub fn gated_sdpc(
    costs: &ComponentCosts,
    self_searches: u32,
    energy: f64,
    params: &SimParams,
) -> Sdpc {
    if energy <= required_energy(costs, self_searches, params) {
        Sdpc::Infeasible
    } else {
        Sdpc::Finite(unconstrained_sdpc(costs, self_searches, params))
    }
}

/// Everything a node knows about its own costs at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostProfile {
    pub node: NodeId,
    pub rs: f64,
    pub costs: ComponentCosts,
    pub self_searches: u32,
    pub energy: f64,
    pub sdpc: Sdpc,
    pub sdc: f64,
}

impl CostProfile {
    /// Builds a profile for a node holding `energy` out of `capacity`.
    pub fn new(
        node: NodeId,
        energy: f64,
        capacity: f64,
        self_searches: u32,
        params: &SimParams,
    ) -> Result<Self, CostError> {
        let rs = energy / capacity;
        let costs = component_costs(rs, params)?;
        Ok(CostProfile {
            node,
            rs,
            costs,
            self_searches,
            energy,
            sdpc: gated_sdpc(&costs, self_searches, energy, params),
            sdc: sdc(rs, params.nodes, &params.constants)?,
        })
    }

    pub fn required_energy(&self, params: &SimParams) -> f64 {
        required_energy(&self.costs, self.self_searches, params)
    }

    /// Equilibrium bid, or `None` when the node must abstain.
    pub fn bid(&self, params: &SimParams) -> Option<f64> {
        self.sdpc
            .finite()
            .map(|c| auction::equilibrium_bid(c, params.nodes, params.cost_support))
    }
}

/// Leader payoff `M (p* - c_i)`.
pub fn leader_payoff(p_star: f64, profile: &CostProfile, params: &SimParams) -> Result<f64, CostError> {
    let c = profile.sdpc.finite().ok_or(CostError::Infeasible)?;
    Ok(params.sd_per_slot() as f64 * (p_star - c))
}

/// Leader payoff with the component costs spelled out, for a leader that
/// actually served `served` SDs.
pub fn leader_payoff_expanded(
    p_star: f64,
    served: u64,
    costs: &ComponentCosts,
    self_searches: u32,
) -> f64 {
    served as f64 * (p_star - costs.search - costs.messaging)
        - costs.database
        - f64::from(self_searches) * costs.search
        - costs.selection
}

pub fn client_payoff(p_star: f64, params: &SimParams) -> f64 {
    -f64::from(params.quota) * p_star
}

pub fn pure_payoff(sdc: f64, params: &SimParams) -> f64 {
    -f64::from(params.quota) * sdc
}

/// Resource-status grid: both endpoints plus [`RS_GRID_INTERIOR`] interior points.
pub fn rs_grid(params: &SimParams) -> Vec<f64> {
    if params.rs_min == params.rs_max {
        return vec![params.rs_min];
    }
    let steps = RS_GRID_INTERIOR + 1;
    let span = params.rs_max - params.rs_min;
    (0..=steps)
        .map(|i| params.rs_min + span * i as f64 / steps as f64)
        .collect()
}

/// Checks that provisioning stays cheaper than pure discovery across the
/// configured resource range.
pub fn check_calibration(params: &SimParams) -> Result<(), CostError> {
    for rs in rs_grid(params) {
        let costs = component_costs(rs, params)?;
        let sdpc = unconstrained_sdpc(&costs, params.max_self_searches, params);
        let sdc = sdc(rs, params.nodes, &params.constants)?;
        if sdpc >= sdc {
            return Err(CostError::Calibration { rs, sdpc, sdc });
        }
    }
    Ok(())
}

fn bid_below_pure(rs: f64, params: &SimParams) -> Result<bool, CostError> {
    let costs = component_costs(rs, params)?;
    let sdpc = unconstrained_sdpc(&costs, params.max_self_searches, params);
    let bid = auction::equilibrium_bid(sdpc, params.nodes, params.cost_support);
    Ok(bid < sdc(rs, params.nodes, &params.constants)?)
}

/// Lower bound on the quota for a single resource status, from the
/// rearranged bid-below-pure-cost inequality. `None` when the denominator is
/// not positive, i.e. no quota works at this `rs`.
fn quota_bound(rs: f64, params: &SimParams) -> Result<Option<f64>, CostError> {
    let costs = component_costs(rs, params)?;
    let pure = sdc(rs, params.nodes, &params.constants)?;
    let n = params.nodes as f64;
    let peers = n - 1.0;
    let q = n * n - 2.0 * n + 2.0;
    let p = n * n - n + 1.0;
    let fixed = costs.database
        + costs.selection
        + f64::from(params.max_self_searches) * costs.search;
    let denom = p * q * pure
        - peers.powi(3) * params.cost_support
        - peers * peers * q * (costs.search + costs.messaging);
    if denom <= 0.0 {
        return Ok(None);
    }
    Ok(Some(peers * q * fixed / denom))
}

/// Smallest integer quota for which the equilibrium bid is strictly below the
/// pure cost at every resource status on the grid (self-searches at their
/// upper bound).
pub fn eta_min(params: &SimParams) -> Result<u32, CostError> {
    let grid = rs_grid(params);
    let mut best = 1u32;
    for &rs in &grid {
        let bound = quota_bound(rs, params)?.ok_or(CostError::NoFeasibleQuota { rs })?;
        // strict inequality: eta must exceed the bound
        let candidate = (bound.floor() as u32).saturating_add(1).max(1);
        best = best.max(candidate);
    }
    // guard the rounding at integer bounds
    loop {
        let p = params.with_quota(best);
        let mut ok = true;
        for &rs in &grid {
            if !bid_below_pure(rs, &p)? {
                ok = false;
                break;
            }
        }
        if ok {
            return Ok(best);
        }
        best = best
            .checked_add(1)
            .ok_or(CostError::NoFeasibleQuota { rs: params.rs_max })?;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_params() -> SimParams {
        SimParams {
            constants: CostConstants {
                search: 0.01,
                messaging: 0.01,
                database: 0.01,
                selection: 0.01,
                pure_flood: 0.31,
                pure_base: 0.31,
            },
            ..SimParams::default()
        }
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn database_cost_example() {
        let c = component_costs(1.0, &unit_params()).unwrap();
        assert!(close(c.database, 0.9, 1e-12));
    }

    #[test]
    fn doubling_rs_halves_every_component() {
        let p = SimParams::default();
        let a = component_costs(0.4, &p).unwrap();
        let b = component_costs(0.8, &p).unwrap();
        assert!(close(a.search / 2.0, b.search, 1e-12));
        assert!(close(a.messaging / 2.0, b.messaging, 1e-12));
        assert!(close(a.database / 2.0, b.database, 1e-12));
        assert!(close(a.selection / 2.0, b.selection, 1e-12));
    }

    #[test]
    fn messaging_cost_ignores_cloud_size() {
        let p = SimParams::default();
        let small = component_costs(0.7, &p.with_nodes(2)).unwrap();
        let big = component_costs(0.7, &p.with_nodes(10)).unwrap();
        assert_eq!(small.messaging, big.messaging);
        assert!(small.search < big.search);
    }

    #[test]
    fn non_positive_rs_is_a_domain_error() {
        let p = SimParams::default();
        assert_eq!(component_costs(0.0, &p), Err(CostError::Domain(0.0)));
        assert!(component_costs(-1.0, &p).is_err());
        assert!(sdc(0.0, 10, &p.constants).is_err());
    }

    fn sample_costs() -> ComponentCosts {
        ComponentCosts { search: 0.1, messaging: 0.5, database: 9.0, selection: 4.5 }
    }

    #[test]
    fn sdpc_hand_sum() {
        let p = SimParams { nodes: 10, quota: 5, ..SimParams::default() };
        let v = unconstrained_sdpc(&sample_costs(), 5, &p);
        assert!(close(v, 0.6 + 14.0 / 45.0, 1e-12));
        assert!(close(v, 0.9111, 1e-4));
    }

    #[test]
    fn required_energy_hand_sum() {
        let p = SimParams { nodes: 10, quota: 5, ..SimParams::default() };
        assert!(close(required_energy(&sample_costs(), 5, &p), 41.0, 1e-12));
    }

    #[test]
    fn energy_gate_boundary_is_infeasible() {
        let p = SimParams { nodes: 10, quota: 5, ..SimParams::default() };
        let costs = sample_costs();
        let req = required_energy(&costs, 5, &p);
        assert_eq!(gated_sdpc(&costs, 5, req, &p), Sdpc::Infeasible);
        assert!(gated_sdpc(&costs, 5, req + 1e-9, &p).is_feasible());
        assert_eq!(gated_sdpc(&costs, 5, 0.0, &p), Sdpc::Infeasible);
    }

    #[test]
    fn sdpc_without_fixed_terms_is_search_plus_messaging() {
        let p = SimParams::default();
        let costs = ComponentCosts { search: 0.2, messaging: 0.3, database: 0.0, selection: 0.0 };
        assert!(close(unconstrained_sdpc(&costs, 0, &p), 0.5, 1e-15));
    }

    #[test]
    fn required_energy_scales_with_quota() {
        let costs = ComponentCosts { search: 0.0, messaging: 1.0, database: 0.0, selection: 0.0 };
        let p = SimParams::default();
        let a = required_energy(&costs, 0, &p.with_quota(5));
        let b = required_energy(&costs, 0, &p.with_quota(10));
        assert!(close(b, 2.0 * a, 1e-12));
    }

    #[test]
    fn sdc_monotone_in_rs_and_n() {
        let k = CostConstants::default();
        assert!(sdc(1.0, 10, &k).unwrap() < sdc(0.5, 10, &k).unwrap());
        assert!(sdc(0.5, 10, &k).unwrap() > sdc(0.5, 5, &k).unwrap());
    }

    #[test]
    fn default_calibration_matches_ten_node_intervals() {
        let p = SimParams::default();
        check_calibration(&p).unwrap();
        for rs in rs_grid(&p) {
            let costs = component_costs(rs, &p).unwrap();
            let c = unconstrained_sdpc(&costs, p.max_self_searches, &p);
            let s = sdc(rs, p.nodes, &p.constants).unwrap();
            assert!(c > 0.0 && c < 10.0, "sdpc {c} at rs {rs}");
            assert!(s > 3.0 && s < 15.0, "sdc {s} at rs {rs}");
        }
    }

    #[test]
    fn payoffs() {
        let p = SimParams::default();
        let profile = CostProfile::new(NodeId(1), 900.0, 1000.0, 5, &p).unwrap();
        let c = profile.sdpc.finite().unwrap();
        assert_eq!(leader_payoff(c, &profile, &p).unwrap(), 0.0);
        assert!(leader_payoff(c - 0.1, &profile, &p).unwrap() < 0.0);
        assert!(close(client_payoff(2.75, &p), -13.75, 1e-12));
        assert_eq!(client_payoff(0.0, &p), 0.0);
        assert!(close(pure_payoff(3.0, &p), -15.0, 1e-12));

        let starved = CostProfile::new(NodeId(2), 1.0, 1000.0, 5, &p).unwrap();
        assert_eq!(leader_payoff(3.0, &starved, &p), Err(CostError::Infeasible));
    }

    #[test]
    fn leader_payoff_product_example() {
        // M = 45, p* = 2.75, sdpc = 1.8
        let p = SimParams::default();
        let costs = ComponentCosts { search: 0.1, messaging: 0.5, database: 53.5, selection: 0.0 };
        let c = unconstrained_sdpc(&costs, 5, &p);
        assert!(close(c, 1.8, 1e-12));
        let expanded = leader_payoff_expanded(2.75, p.sd_per_slot(), &costs, 5);
        assert!(close(expanded, 42.75, 1e-9));
    }

    #[test]
    fn eta_min_is_one_when_pure_cost_dominates() {
        let mut p = SimParams::default();
        p.constants.pure_flood = 50.0;
        assert_eq!(eta_min(&p).unwrap(), 1);
    }

    #[test]
    fn eta_min_reports_infeasible_denominator() {
        let mut p = SimParams::default();
        p.constants.pure_flood = 0.01;
        p.constants.pure_base = 0.01;
        assert!(matches!(eta_min(&p), Err(CostError::NoFeasibleQuota { .. })));
    }

    #[test]
    fn invalid_params_are_all_reported() {
        let p = SimParams {
            nodes: 1,
            quota: 0,
            election_fraction: 1.0,
            punishment_fraction: 1.0,
            ..SimParams::default()
        };
        assert_eq!(p.problems().len(), 4);
    }
}
