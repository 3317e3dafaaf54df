//! Planner and single-step simulator for ZeRO-style model-state sharding.
//!
//! Given a model, a GPU cluster and a measured collective bandwidth profile,
//! [`planner::solve`] finds the sharding factors for parameters, gradients
//! and optimizer states that minimize per-step communication while fitting
//! in GPU memory, and [`sim::simulate`] plays one training step of a plan on
//! compute and communication streams to estimate step time and bubbles.
//!
//! ```
//! use shardplan_core::{comm, cost::CostConfig, domain::{ClusterSpec, ModelSpec}, planner};
//!
//! let model = ModelSpec::llama_7b(1);
//! let cluster = ClusterSpec::new(8, 4, 80e9);
//! let profile = comm::calibrated_profile();
//! let report = planner::solve(&model, &cluster, &profile, &CostConfig::default(), false).unwrap();
//! println!("{}", report.best.plan);
//! ```

pub mod comm;
pub mod cost;
pub mod domain;
pub mod placement;
pub mod planner;
pub mod sim;

pub use comm::{BandwidthProfile, CollectiveCost, CollectiveKind};
pub use cost::{CostConfig, MemoryBreakdown, TimeBreakdown};
pub use domain::{ClusterSpec, DeviceMesh, ModelSpec, PresetName, ShardingPlan};
pub use sim::{OverlapTier, SimConfig};
