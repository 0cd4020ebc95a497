//! Adaptive convex model predictive control for a single HVAC zone.

pub mod baseline;
pub mod config;
pub mod domain;
pub mod harness;
pub mod metrics;
pub mod planner;
pub mod plant;
pub mod power;
pub mod prediction;
pub mod sysid;
