//! Energy bookkeeping. One cost unit is one energy unit.

use serde::{Deserialize, Serialize};

use crate::cost::{component_costs, sdc, CostError, SimParams};
use crate::NodeId;

use super::mobility::Position;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Leader,
    Client,
    Outside,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Leader => "leader",
            Role::Client => "client",
            Role::Outside => "outside",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeState {
    pub id: NodeId,
    pub energy: f64,
    pub capacity: f64,
    pub position: Position,
    pub alive: bool,
    pub role: Role,
    /// Cumulative payoff in cost units.
    pub payoff: f64,
}

impl NodeState {
    /// Remaining fraction of capacity, the node's resource status.
    pub fn rs(&self) -> f64 {
        self.energy / self.capacity
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Action {
    /// Leading a slot in which `served` SDs were answered. With the full
    /// quota served this equals the required energy.
    LeadSlot { served: u64 },
    /// Listening to the slot's advertisements and running `sds` exchanges
    /// of three messages each.
    ClientSlot { sds: u32 },
    /// Discovering `sds` services without a leader.
    PureSlot { sds: u32 },
    Message { count: u32 },
}

/// Energy `action` would cost `node` at its current resource status.
/// `params` must describe the cloud the node acts in (its `nodes` sets the
/// leader's costs); pure discovery always floods `network_size - 1` peers.
pub fn action_energy(
    node: &NodeState,
    action: Action,
    params: &SimParams,
    network_size: usize,
    message_energy: f64,
) -> Result<f64, CostError> {
    let rs = node.rs();
    Ok(match action {
        Action::LeadSlot { served } => {
            let c = component_costs(rs, params)?;
            served as f64 * (c.search + c.messaging)
                + f64::from(params.max_self_searches) * c.search
                + c.database
                + c.selection
        }
        Action::ClientSlot { sds } => {
            (params.adverts_per_slot() as f64 + 3.0 * f64::from(sds)) * message_energy
        }
        Action::PureSlot { sds } => f64::from(sds) * sdc(rs, network_size, &params.constants)?,
        Action::Message { count } => f64::from(count) * message_energy,
    })
}

/// Residual energy, as a fraction of capacity, below which a node is empty.
/// Absorbs rounding when a node spends exactly what it has.
pub const DEPLETED: f64 = 1e-9;

/// Takes `amount` from a live node. Energy floors at zero, which kills it.
/// Returns what was actually taken.
pub fn drain(node: &mut NodeState, amount: f64) -> f64 {
    if !node.alive {
        return 0.0;
    }
    let mut taken = amount.max(0.0).min(node.energy);
    node.energy -= taken;
    if node.energy <= DEPLETED * node.capacity {
        taken += node.energy;
        node.energy = 0.0;
        node.alive = false;
    }
    taken
}

/// Debits `action` from `node` and returns the amount taken. Dead nodes are
/// left alone.
pub fn energy_debit(
    node: &mut NodeState,
    action: Action,
    params: &SimParams,
    network_size: usize,
    message_energy: f64,
) -> Result<f64, CostError> {
    if !node.alive {
        return Ok(0.0);
    }
    let amount = action_energy(node, action, params, network_size, message_energy)?;
    Ok(drain(node, amount))
}
