//! Auction-based leader selection and service discovery for device-to-device
//! mobile clouds.
//!
//! The crate is organised bottom-up:
//!
//! - [`cost`]: per-node provisioning and pure-discovery costs, required energy,
//!   payoffs and the minimum feasible SD quota.
//! - [`auction`]: the symmetric equilibrium bid, its inverse, the closed-form
//!   expected payoff and winner selection.
//! - [`phase1`]: pairwise commit-reveal tournament that forms the cloud.
//! - [`phase2`]: per-slot auctions run by the incumbent leader, claims,
//!   blacklisting and membership churn.
//! - [`transaction`]: the requester/leader/provider exchange, vouchers and the
//!   trusted unit's arbitration.
//! - [`sim`]: a seeded discrete-event simulator comparing the leader-based
//!   model with the pure (leaderless) model.
//!
//! Everything is deterministic given its inputs; randomness only enters
//! through explicitly seeded generators.

pub mod auction;
pub mod cost;
pub mod crypto;
pub mod message;
pub mod phase1;
pub mod phase2;
pub mod sim;
pub mod transaction;
pub mod verify;

mod node;

pub use node::NodeId;
