//! Multi-commodity cell transmission model with FIFO diverges, and the convex
//! relaxation of its optimal control problem.
//!
//! The crate is `no_std` and allocates through `alloc`. Pipeline:
//! [`relax::discretize`] builds a sparse LP over trajectories, [`solve`]
//! solves it with a homogeneous self-dual interior-point method,
//! [`recover`] turns the relaxed optimum into speed limits, metering and
//! turning ratios, and [`optimality`] checks the result.
#![no_std]

extern crate alloc;

pub mod fixtures;
pub mod fundamental;
pub mod network;
pub mod optimality;
pub mod pipeline;
pub mod problem;
pub mod recover;
pub mod relax;
pub mod sim;
pub mod solve;

pub use fundamental::{DemandFn, Fundamentals, SupplyFn};
pub use network::{build_network, CellId, CommodityId, Network, NetworkSpec, NodeId};
pub use problem::Problem;
pub use sim::{Control, CostSpec, InflowProfile, SimConfig, State, Trajectory};
