//! Predictive-CSM: behavioral trust scoring and chained-hash fragment
//! validation for the 6LoWPAN adaptation layer, plus a deterministic
//! discrete-event simulator that pits it against vanilla, CSM-like and
//! SecuPAN-like stacks under five fragmentation attacks.

pub mod adversary;
pub mod analytic;
pub mod baselines;
pub mod codec;
pub mod config;
pub mod energy;
pub mod fsv;
pub mod metrics;
pub mod netsim;
pub mod reassembly;
pub mod runner;
pub mod trust;
pub mod vectors;

/// Simulated node identifier. The root is always node 0.
pub type NodeId = u16;
