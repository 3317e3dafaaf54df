//! Run configuration: one JSON document naming the model, the cluster, the
//! bandwidth profile and the knobs of the cost model, simulator and solver.
//! Unknown keys are rejected everywhere and parse errors name the offending
//! path, e.g. `cluster.gpu_memory_capacity`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use shardplan_core::comm::{calibrated_profile, BandwidthProfile};
use shardplan_core::domain::{validate_plan, ClusterSpec, DeviceMesh, ModelSpec, PresetName, ShardingPlan};
use shardplan_core::placement::Topology;
use shardplan_core::planner::DEFAULT_ORACLE_GUARD;
use shardplan_core::{CostConfig, SimConfig};

use crate::CliError;

/// Cluster section. `dp_mesh` defaults to every GPU and `topology` to a
/// single leaf switch; both are filled in when the config is resolved so
/// that the echoed config is explicit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterConfig {
    pub gpus_per_node: u32,
    pub node_count: u32,
    pub gpu_memory_capacity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dp_mesh: Option<DeviceMesh>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topology: Option<Topology>,
}

impl ClusterConfig {
    pub fn to_spec(&self) -> Result<ClusterSpec, CliError> {
        if self.gpus_per_node == 0 || self.node_count == 0 {
            return Err(CliError::Invalid("cluster: gpus_per_node and node_count must be >= 1".into()));
        }
        let mut spec = ClusterSpec::new(self.gpus_per_node, self.node_count, self.gpu_memory_capacity);
        if let Some(dp) = self.dp_mesh {
            spec.dp_mesh = dp;
        }
        if let Some(t) = self.topology {
            spec.topology = t;
        }
        spec.validate().map_err(|e| CliError::Invalid(format!("cluster: {e}")))?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    /// Include every ranked candidate in the report.
    #[serde(default)]
    pub all_candidates: bool,
    /// Cross-check the solver against the unfiltered brute-force search when
    /// the raw grid has at most this many tuples. 0 disables the check.
    #[serde(default = "default_guard")]
    pub oracle_guard: u64,
}

fn default_guard() -> u64 {
    DEFAULT_ORACLE_GUARD
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { all_candidates: false, oracle_guard: DEFAULT_ORACLE_GUARD }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub cluster: ClusterConfig,
    /// CSV or canonical JSON profile, relative to the config file. Absent
    /// means the built-in calibrated profile.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile_path: Option<PathBuf>,
    #[serde(default)]
    pub cost: CostConfig,
    #[serde(default)]
    pub sim: SimConfig,
    /// Explicit plan for `simulate`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<ShardingPlan>,
    /// Preset plan for `simulate`; exclusive with `plan`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<PresetName>,
    #[serde(default)]
    pub solver: SolverConfig,
}

impl RunConfig {
    /// Parses a config document, reporting the JSON path of the first error.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::Config { path, message: e.into_inner().to_string() }
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io { path: path.to_path_buf(), source: e })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Fills defaulted fields and checks every section.
    pub fn resolve(mut self) -> Result<Resolved, CliError> {
        let cluster = self.cluster.to_spec()?;
        self.cluster.dp_mesh = Some(cluster.dp_mesh);
        self.cluster.topology = Some(cluster.topology);
        self.model.validate().map_err(|e| CliError::Invalid(format!("model: {e}")))?;
        self.cost.validate().map_err(|e| CliError::Invalid(format!("cost: {e}")))?;
        if !matches!(self.sim.comm_streams, 1 | 2) {
            return Err(CliError::Invalid(format!("sim: comm_streams must be 1 or 2, got {}", self.sim.comm_streams)));
        }
        if !(self.sim.peak_flops_per_gpu.is_finite() && self.sim.peak_flops_per_gpu > 0.0) {
            return Err(CliError::Invalid("sim: peak_flops_per_gpu must be > 0".into()));
        }
        if self.plan.is_some() && self.preset.is_some() {
            return Err(CliError::Invalid("plan and preset are mutually exclusive".into()));
        }
        if let Some(plan) = &self.plan {
            let violations = validate_plan(plan, &cluster);
            if !violations.is_empty() {
                return Err(CliError::InvalidPlan {
                    plan: *plan,
                    violations: violations.iter().map(ToString::to_string).collect(),
                });
            }
        }
        Ok(Resolved { config: self, cluster })
    }
}

/// A checked config together with the cluster it describes.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: RunConfig,
    pub cluster: ClusterSpec,
}

impl Resolved {
    /// Loads the profile, resolving a relative path against `base`.
    pub fn profile(&self, base: &Path) -> Result<BandwidthProfile, CliError> {
        match &self.config.profile_path {
            None => Ok(calibrated_profile()),
            Some(p) => {
                let path = if p.is_absolute() { p.clone() } else { base.join(p) };
                BandwidthProfile::load(&path).map_err(|e| CliError::Profile { path, source: e })
            }
        }
    }
}
