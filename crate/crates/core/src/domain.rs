//! Model, cluster and sharding-plan descriptions, the dependency-rule
//! validator, and the named preset plans used by the baselines.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::placement::Topology;

/// Participant layout of a collective or a sharding group: `per_node` GPUs
/// inside each of `nodes` nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "RawMesh", into = "RawMesh")]
pub struct DeviceMesh {
    per_node: u32,
    nodes: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMesh {
    per_node: u32,
    nodes: u32,
}

impl TryFrom<RawMesh> for DeviceMesh {
    type Error = String;

    fn try_from(raw: RawMesh) -> Result<Self, Self::Error> {
        DeviceMesh::try_new(raw.per_node, raw.nodes)
            .ok_or_else(|| format!("mesh {}x{} must have both axes >= 1", raw.per_node, raw.nodes))
    }
}

impl From<DeviceMesh> for RawMesh {
    fn from(mesh: DeviceMesh) -> Self {
        RawMesh { per_node: mesh.per_node, nodes: mesh.nodes }
    }
}

impl DeviceMesh {
    pub const SINGLE: DeviceMesh = DeviceMesh { per_node: 1, nodes: 1 };

    /// Panics if either axis is zero.
    pub fn new(per_node: u32, nodes: u32) -> Self {
        Self::try_new(per_node, nodes).expect("device mesh axes must be >= 1")
    }

    pub fn try_new(per_node: u32, nodes: u32) -> Option<Self> {
        (per_node >= 1 && nodes >= 1).then_some(DeviceMesh { per_node, nodes })
    }

    pub fn per_node(&self) -> u32 {
        self.per_node
    }

    pub fn nodes(&self) -> u32 {
        self.nodes
    }

    pub fn size(&self) -> u64 {
        u64::from(self.per_node) * u64::from(self.nodes)
    }

    /// Axis-wise quotient `self / inner`, e.g. the data-parallel mesh divided
    /// by the parameter mesh gives the group that shares one parameter shard.
    /// Returns `None` unless both axes divide exactly.
    pub fn quotient(&self, inner: DeviceMesh) -> Option<DeviceMesh> {
        if !self.per_node.is_multiple_of(inner.per_node) || !self.nodes.is_multiple_of(inner.nodes) {
            return None;
        }
        Some(DeviceMesh { per_node: self.per_node / inner.per_node, nodes: self.nodes / inner.nodes })
    }
}

impl fmt::Display for DeviceMesh {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.per_node, self.nodes)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SpecError {
    #[error("{field} must be strictly positive")]
    NonPositive { field: &'static str },
    #[error("layer parameters ({layered}) exceed total_params ({total})")]
    LayerParamsExceedTotal { layered: u64, total: u64 },
    #[error("model must have at least one module per layer")]
    NoModules,
    #[error("data-parallel mesh {dp} does not fit a cluster of {gpus_per_node} GPUs x {node_count} nodes")]
    DpMeshTooLarge { dp: DeviceMesh, gpus_per_node: u32, node_count: u32 },
    #[error("topology has {capacity} node slots for {node_count} nodes")]
    TopologyTooSmall { capacity: u64, node_count: u32 },
    #[error("inter_leaf_penalty must be >= 1, got {0}")]
    PenaltyBelowOne(f64),
}

/// GPU cluster and the data-parallel mesh training runs on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSpec {
    pub gpus_per_node: u32,
    pub node_count: u32,
    /// Bytes of device memory per GPU.
    pub gpu_memory_capacity: f64,
    pub dp_mesh: DeviceMesh,
    #[serde(default)]
    pub topology: Topology,
}

impl ClusterSpec {
    /// Cluster whose data-parallel mesh spans every GPU, under a single leaf switch.
    pub fn new(gpus_per_node: u32, node_count: u32, gpu_memory_capacity: f64) -> Self {
        ClusterSpec {
            gpus_per_node,
            node_count,
            gpu_memory_capacity,
            dp_mesh: DeviceMesh::new(gpus_per_node, node_count),
            topology: Topology::single_leaf(node_count),
        }
    }

    pub fn with_topology(mut self, topology: Topology) -> Self {
        self.topology = topology;
        self
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        if self.gpus_per_node == 0 {
            return Err(SpecError::NonPositive { field: "gpus_per_node" });
        }
        if self.node_count == 0 {
            return Err(SpecError::NonPositive { field: "node_count" });
        }
        if self.gpu_memory_capacity.is_nan() || self.gpu_memory_capacity <= 0.0 {
            return Err(SpecError::NonPositive { field: "gpu_memory_capacity" });
        }
        if self.dp_mesh.per_node > self.gpus_per_node || self.dp_mesh.nodes > self.node_count {
            return Err(SpecError::DpMeshTooLarge {
                dp: self.dp_mesh,
                gpus_per_node: self.gpus_per_node,
                node_count: self.node_count,
            });
        }
        self.topology.validate(self.node_count)
    }
}

fn default_two() -> u32 {
    2
}

fn default_twelve() -> u32 {
    12
}

/// Transformer shape and training hyper-parameters.
///
/// `module_params` is the per-layer template: every one of the `layer_count`
/// layers holds modules with these parameter counts. Parameters outside the
/// layers (embeddings, output head, final norm) make up the remainder of
/// `total_params`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub total_params: u64,
    pub layer_count: u32,
    pub module_params: Vec<u64>,
    pub hidden: u32,
    pub seq_len: u32,
    /// Sequences per micro-batch.
    pub micro_batch: u32,
    pub micro_batch_count: u32,
    pub vocab: u32,
    #[serde(default = "default_two")]
    pub bytes_per_param: u32,
    #[serde(default = "default_two")]
    pub bytes_per_grad: u32,
    #[serde(default = "default_twelve")]
    pub bytes_per_os_per_param: u32,
}

impl ModelSpec {
    pub fn modules_per_layer(&self) -> usize {
        self.module_params.len()
    }

    /// Parameters held by the repeated transformer layers.
    pub fn layer_params(&self) -> u64 {
        u64::from(self.layer_count) * self.module_params.iter().sum::<u64>()
    }

    /// Parameters outside the layers (embedding, head, final norm).
    pub fn extra_params(&self) -> u64 {
        self.total_params - self.layer_params()
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        let positive = [
            ("total_params", self.total_params),
            ("layer_count", u64::from(self.layer_count)),
            ("hidden", u64::from(self.hidden)),
            ("seq_len", u64::from(self.seq_len)),
            ("micro_batch", u64::from(self.micro_batch)),
            ("micro_batch_count", u64::from(self.micro_batch_count)),
            ("vocab", u64::from(self.vocab)),
            ("bytes_per_param", u64::from(self.bytes_per_param)),
            ("bytes_per_grad", u64::from(self.bytes_per_grad)),
            ("bytes_per_os_per_param", u64::from(self.bytes_per_os_per_param)),
        ];
        for (field, value) in positive {
            if value == 0 {
                return Err(SpecError::NonPositive { field });
            }
        }
        if self.module_params.is_empty() {
            return Err(SpecError::NoModules);
        }
        if self.module_params.contains(&0) {
            return Err(SpecError::NonPositive { field: "module_params" });
        }
        let layered = self.layer_params();
        if layered > self.total_params {
            return Err(SpecError::LayerParamsExceedTotal { layered, total: self.total_params });
        }
        Ok(())
    }

    /// LLaMA-7B: 32 layers of hidden 4096 with a 11008-wide SwiGLU MLP and a
    /// 32000-token vocabulary, trained on 4096-token sequences.
    pub fn llama_7b(micro_batch_count: u32) -> Self {
        Self::llama(4096, 11008, 32, 32000, micro_batch_count)
    }

    pub fn llama_13b(micro_batch_count: u32) -> Self {
        Self::llama(5120, 13824, 40, 32000, micro_batch_count)
    }

    pub fn llama_30b(micro_batch_count: u32) -> Self {
        Self::llama(6656, 17920, 60, 32000, micro_batch_count)
    }

    fn llama(hidden: u32, ffn: u32, layers: u32, vocab: u32, micro_batch_count: u32) -> Self {
        let h = u64::from(hidden);
        let f = u64::from(ffn);
        // q, k, v, o projections, then gate, up, down.
        let module_params = vec![h * h, h * h, h * h, h * h, h * f, h * f, f * h];
        let per_layer_norms = 2 * h;
        let layered: u64 = module_params.iter().sum::<u64>() + per_layer_norms;
        let total_params = u64::from(layers) * layered + 2 * u64::from(vocab) * h + h;
        ModelSpec {
            total_params,
            layer_count: layers,
            module_params,
            hidden,
            seq_len: 4096,
            micro_batch: 1,
            micro_batch_count,
            vocab,
            bytes_per_param: 2,
            bytes_per_grad: 2,
            bytes_per_os_per_param: 12,
        }
    }
}

/// Sharding factors for parameters, gradients and optimizer states.
///
/// `secondary_params` is only set by the ZeRO++ preset: a smaller mesh that
/// keeps an extra parameter shard for the backward AllGather.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShardingPlan {
    pub p: DeviceMesh,
    pub g: DeviceMesh,
    pub os: DeviceMesh,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub secondary_params: Option<DeviceMesh>,
}

impl ShardingPlan {
    pub fn new(p: DeviceMesh, g: DeviceMesh, os: DeviceMesh) -> Self {
        ShardingPlan { p, g, os, secondary_params: None }
    }

    pub fn full_replica() -> Self {
        Self::new(DeviceMesh::SINGLE, DeviceMesh::SINGLE, DeviceMesh::SINGLE)
    }

    pub fn full_sharding(dp: DeviceMesh) -> Self {
        Self::new(dp, dp, dp)
    }

    pub fn s_p(&self) -> u64 {
        self.p.size()
    }

    pub fn s_g(&self) -> u64 {
        self.g.size()
    }

    pub fn s_os(&self) -> u64 {
        self.os.size()
    }

    /// Lexicographic key over `(s_p⁰, s_p¹, s_g⁰, s_g¹, s_os⁰, s_os¹)`.
    pub fn order_key(&self) -> [u32; 6] {
        [
            self.p.per_node,
            self.p.nodes,
            self.g.per_node,
            self.g.nodes,
            self.os.per_node,
            self.os.nodes,
        ]
    }

    /// Largest node-axis factor among the three components.
    pub fn max_node_factor(&self) -> u32 {
        self.p.nodes.max(self.g.nodes).max(self.os.nodes)
    }
}

impl fmt::Display for ShardingPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p={} g={} os={}", self.p, self.g, self.os)?;
        if let Some(secondary) = self.secondary_params {
            write!(f, " secondary={secondary}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Params,
    Grads,
    OptimizerStates,
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Component::Params => "p",
            Component::Grads => "g",
            Component::OptimizerStates => "os",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// GPUs within a node.
    Gpu,
    /// Nodes.
    Node,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::Gpu => "0",
            Axis::Node => "1",
        })
    }
}

/// One failed constraint of the dependency rule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Violation {
    /// `R >= s_dp⁰` or `N >= s_dp¹` does not hold.
    DpExceedsCluster { axis: Axis, dp: u32, limit: u32 },
    /// The ordering `s_dp >= s_os >= s_g >= s_p` is broken between two factors.
    Ordering { axis: Axis, larger: String, smaller: String, larger_value: u32, smaller_value: u32 },
    /// `s_i` does not divide the data-parallel factor on this axis.
    NotDivisor { component: Component, axis: Axis, factor: u32, dp: u32 },
    /// An inner factor does not divide the next outer one (`s_p | s_g | s_os`).
    NotNested { axis: Axis, inner: Component, outer: Component, inner_value: u32, outer_value: u32 },
    /// `s_i¹ > 1` requires the component to span whole nodes (`s_i⁰ = s_dp⁰`).
    PartialNodeAcrossNodes { component: Component, per_node: u32, dp_per_node: u32 },
    /// `s_g` must equal `s_p` or `s_os`.
    GradFactor { s_p: u64, s_g: u64, s_os: u64 },
    /// The ZeRO++ secondary parameter mesh does not tile the data-parallel mesh.
    SecondaryMesh { secondary: DeviceMesh, dp: DeviceMesh },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DpExceedsCluster { axis, dp, limit } => {
                write!(f, "s_dp^{axis} = {dp} exceeds the cluster limit {limit}")
            }
            Violation::Ordering { axis, larger, smaller, larger_value, smaller_value } => write!(
                f,
                "ordering violated: s_{larger}^{axis} = {larger_value} < s_{smaller}^{axis} = {smaller_value}"
            ),
            Violation::NotDivisor { component, axis, factor, dp } => {
                write!(f, "s_{component}^{axis} = {factor} does not divide s_dp^{axis} = {dp}")
            }
            Violation::NotNested { axis, inner, outer, inner_value, outer_value } => write!(
                f,
                "s_{inner}^{axis} = {inner_value} does not divide s_{outer}^{axis} = {outer_value}"
            ),
            Violation::PartialNodeAcrossNodes { component, per_node, dp_per_node } => write!(
                f,
                "s_{component}^1 > 1 requires s_{component}^0 = s_dp^0 = {dp_per_node}, got {per_node}"
            ),
            Violation::GradFactor { s_p, s_g, s_os } => {
                write!(f, "s_g = {s_g} must equal s_p = {s_p} or s_os = {s_os}")
            }
            Violation::SecondaryMesh { secondary, dp } => {
                write!(f, "secondary parameter mesh {secondary} does not tile the dp mesh {dp}")
            }
        }
    }
}

/// Checks a plan against the dependency rule and reports every failed
/// constraint. An empty list means the plan is valid.
pub fn validate_plan(plan: &ShardingPlan, cluster: &ClusterSpec) -> Vec<Violation> {
    let mut violations = Vec::new();
    let dp = cluster.dp_mesh;
    let components =
        [(Component::Params, plan.p), (Component::Grads, plan.g), (Component::OptimizerStates, plan.os)];

    for (axis, limit, dp_value, pick) in [
        (Axis::Gpu, cluster.gpus_per_node, dp.per_node, DeviceMesh::per_node as fn(&DeviceMesh) -> u32),
        (Axis::Node, cluster.node_count, dp.nodes, DeviceMesh::nodes as fn(&DeviceMesh) -> u32),
    ] {
        if dp_value > limit {
            violations.push(Violation::DpExceedsCluster { axis, dp: dp_value, limit });
        }
        // Chain dp >= os >= g >= p, each link checked separately.
        let chain = [("dp", dp_value), ("os", pick(&plan.os)), ("g", pick(&plan.g)), ("p", pick(&plan.p))];
        for pair in chain.windows(2) {
            let (larger, larger_value) = pair[0];
            let (smaller, smaller_value) = pair[1];
            if larger_value < smaller_value {
                violations.push(Violation::Ordering {
                    axis,
                    larger: larger.to_string(),
                    smaller: smaller.to_string(),
                    larger_value,
                    smaller_value,
                });
            }
        }
        for (component, mesh) in components {
            let factor = pick(&mesh);
            if dp_value % factor != 0 {
                violations.push(Violation::NotDivisor { component, axis, factor, dp: dp_value });
            }
        }
        let nested = [
            (Component::Params, pick(&plan.p), Component::Grads, pick(&plan.g)),
            (Component::Grads, pick(&plan.g), Component::OptimizerStates, pick(&plan.os)),
        ];
        for (inner, inner_value, outer, outer_value) in nested {
            if inner_value <= outer_value && outer_value % inner_value != 0 {
                violations.push(Violation::NotNested { axis, inner, outer, inner_value, outer_value });
            }
        }
    }

    for (component, mesh) in components {
        if mesh.nodes > 1 && mesh.per_node != dp.per_node {
            violations.push(Violation::PartialNodeAcrossNodes {
                component,
                per_node: mesh.per_node,
                dp_per_node: dp.per_node,
            });
        }
    }

    let (s_p, s_g, s_os) = (plan.s_p(), plan.s_g(), plan.s_os());
    if s_g != s_p && s_g != s_os {
        violations.push(Violation::GradFactor { s_p, s_g, s_os });
    }

    if let Some(secondary) = plan.secondary_params {
        if secondary.per_node > dp.per_node || dp.quotient(secondary).is_none() {
            violations.push(Violation::SecondaryMesh { secondary, dp });
        }
    }
    violations
}

/// Named baseline and reference configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PresetName {
    #[serde(rename = "ZeRO-1")]
    Zero1,
    #[serde(rename = "ZeRO-3")]
    Zero3,
    #[serde(rename = "MiCS")]
    Mics,
    /// MiCS as configured for the 30B model (two-node partition groups).
    #[serde(rename = "MiCS-30B")]
    Mics30b,
    #[serde(rename = "ZeRO++")]
    ZeroPlusPlus,
    #[serde(rename = "AMSP-7B")]
    Amsp7b,
    #[serde(rename = "AMSP-13B")]
    Amsp13b,
    #[serde(rename = "AMSP-30B")]
    Amsp30b,
}

impl PresetName {
    pub const ALL: [PresetName; 8] = [
        PresetName::Zero1,
        PresetName::Zero3,
        PresetName::Mics,
        PresetName::Mics30b,
        PresetName::ZeroPlusPlus,
        PresetName::Amsp7b,
        PresetName::Amsp13b,
        PresetName::Amsp30b,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PresetName::Zero1 => "ZeRO-1",
            PresetName::Zero3 => "ZeRO-3",
            PresetName::Mics => "MiCS",
            PresetName::Mics30b => "MiCS-30B",
            PresetName::ZeroPlusPlus => "ZeRO++",
            PresetName::Amsp7b => "AMSP-7B",
            PresetName::Amsp13b => "AMSP-13B",
            PresetName::Amsp30b => "AMSP-30B",
        }
    }
}

impl fmt::Display for PresetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PresetError {
    #[error("unknown preset '{0}'")]
    Unknown(String),
    #[error("preset {name} is infeasible on this cluster: {reason}")]
    Infeasible { name: PresetName, reason: String },
}

impl FromStr for PresetName {
    type Err = PresetError;

    /// Accepts the canonical names case-insensitively, with or without
    /// separators (`zero3`, `ZeRO-3`, `zeropp`, `amsp_7b`).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| !matches!(c, '-' | '_' | ' '))
            .flat_map(char::to_lowercase)
            .collect();
        let name = match key.as_str() {
            "zero1" => PresetName::Zero1,
            "zero3" => PresetName::Zero3,
            "mics" => PresetName::Mics,
            "mics30b" => PresetName::Mics30b,
            "zero++" | "zeropp" => PresetName::ZeroPlusPlus,
            "amsp7b" => PresetName::Amsp7b,
            "amsp13b" => PresetName::Amsp13b,
            "amsp30b" => PresetName::Amsp30b,
            _ => return Err(PresetError::Unknown(s.to_string())),
        };
        Ok(name)
    }
}

/// Instantiates a named preset against the cluster's data-parallel mesh.
/// Fixed-size meshes that do not fit the cluster are reported as infeasible
/// rather than clamped.
pub fn preset(name: PresetName, cluster: &ClusterSpec) -> Result<ShardingPlan, PresetError> {
    let dp = cluster.dp_mesh;
    let fixed = |per_node: u32, nodes: u32| -> Result<DeviceMesh, PresetError> {
        let mesh = DeviceMesh::new(per_node, nodes);
        if per_node > dp.per_node || nodes > dp.nodes {
            return Err(PresetError::Infeasible {
                name,
                reason: format!("mesh {mesh} exceeds the data-parallel mesh {dp}"),
            });
        }
        Ok(mesh)
    };
    let plan = match name {
        PresetName::Zero1 => ShardingPlan::new(DeviceMesh::SINGLE, DeviceMesh::SINGLE, dp),
        PresetName::Zero3 => ShardingPlan::full_sharding(dp),
        PresetName::Mics => {
            let m = fixed(8, 1)?;
            ShardingPlan::new(m, m, m)
        }
        PresetName::Mics30b => {
            let m = fixed(8, 2)?;
            ShardingPlan::new(m, m, m)
        }
        PresetName::ZeroPlusPlus => {
            let secondary = fixed(8, 1)?;
            ShardingPlan { secondary_params: Some(secondary), ..ShardingPlan::full_sharding(dp) }
        }
        PresetName::Amsp7b => ShardingPlan::new(DeviceMesh::SINGLE, DeviceMesh::SINGLE, fixed(8, 1)?),
        PresetName::Amsp13b => {
            let p = fixed(4, 1)?;
            ShardingPlan::new(p, p, fixed(8, 1)?)
        }
        PresetName::Amsp30b => {
            let p = fixed(8, 1)?;
            ShardingPlan::new(p, p, fixed(8, 4)?)
        }
    };
    let violations = validate_plan(&plan, cluster);
    if !violations.is_empty() {
        let reason = violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ");
        return Err(PresetError::Infeasible { name, reason });
    }
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mesh(a: u32, b: u32) -> DeviceMesh {
        DeviceMesh::new(a, b)
    }

    #[test]
    fn amsp_7b_row_is_valid() {
        let cluster = ClusterSpec::new(8, 4, 80e9);
        let plan = ShardingPlan::new(mesh(1, 1), mesh(1, 1), mesh(8, 1));
        assert!(validate_plan(&plan, &cluster).is_empty());
    }

    #[test]
    fn full_replica_and_full_sharding_are_valid_everywhere() {
        for r in 1..=8 {
            for n in 1..=8 {
                let cluster = ClusterSpec::new(r, n, 1e9);
                assert!(validate_plan(&ShardingPlan::full_replica(), &cluster).is_empty());
                assert!(validate_plan(&ShardingPlan::full_sharding(cluster.dp_mesh), &cluster).is_empty());
            }
        }
    }

    #[test]
    fn partial_node_across_nodes_is_reported_per_component() {
        let cluster = ClusterSpec::new(8, 2, 80e9);
        let plan = ShardingPlan::new(mesh(2, 2), mesh(2, 2), mesh(2, 2));
        let violations = validate_plan(&plan, &cluster);
        let partial: Vec<_> = violations
            .iter()
            .filter(|v| matches!(v, Violation::PartialNodeAcrossNodes { .. }))
            .collect();
        assert_eq!(partial.len(), 3);
    }

    #[test]
    fn all_violations_are_reported() {
        let cluster = ClusterSpec::new(8, 2, 80e9);
        // p > g on the GPU axis, 3 does not divide 8, s_g not in {s_p, s_os}.
        let plan = ShardingPlan::new(mesh(4, 1), mesh(3, 1), mesh(8, 1));
        let violations = validate_plan(&plan, &cluster);
        assert!(violations.iter().any(|v| matches!(v, Violation::Ordering { .. })));
        assert!(violations.iter().any(|v| matches!(v, Violation::NotDivisor { factor: 3, .. })));
        assert!(violations.iter().any(|v| matches!(v, Violation::GradFactor { .. })));
    }

    #[test]
    fn non_nested_factors_are_rejected() {
        let cluster = ClusterSpec::new(6, 1, 80e9);
        let plan = ShardingPlan::new(mesh(2, 1), mesh(2, 1), mesh(3, 1));
        let violations = validate_plan(&plan, &cluster);
        assert_eq!(
            violations,
            vec![Violation::NotNested {
                axis: Axis::Gpu,
                inner: Component::Grads,
                outer: Component::OptimizerStates,
                inner_value: 2,
                outer_value: 3
            }]
        );
    }

    #[test]
    fn validation_is_pure() {
        let cluster = ClusterSpec::new(8, 2, 80e9);
        let plan = ShardingPlan::new(mesh(2, 2), mesh(8, 1), mesh(1, 1));
        assert_eq!(validate_plan(&plan, &cluster), validate_plan(&plan, &cluster));
    }

    #[test]
    fn table_presets_at_full_scale() {
        let cluster = ClusterSpec::new(8, 128, 80e9);
        assert_eq!(
            preset(PresetName::Zero1, &cluster).unwrap(),
            ShardingPlan::new(mesh(1, 1), mesh(1, 1), mesh(8, 128))
        );
        assert_eq!(
            preset(PresetName::Mics, &cluster).unwrap(),
            ShardingPlan::new(mesh(8, 1), mesh(8, 1), mesh(8, 1))
        );
        assert_eq!(preset(PresetName::Zero3, &cluster).unwrap(), ShardingPlan::full_sharding(mesh(8, 128)));
        let zpp = preset(PresetName::ZeroPlusPlus, &cluster).unwrap();
        assert_eq!(zpp.p, mesh(8, 128));
        assert_eq!(zpp.secondary_params, Some(mesh(8, 1)));
        assert_eq!(
            preset(PresetName::Amsp13b, &cluster).unwrap(),
            ShardingPlan::new(mesh(4, 1), mesh(4, 1), mesh(8, 1))
        );
        assert_eq!(
            preset(PresetName::Amsp30b, &cluster).unwrap(),
            ShardingPlan::new(mesh(8, 1), mesh(8, 1), mesh(8, 4))
        );
    }

    #[test]
    fn zero3_on_single_gpu_degenerates() {
        let cluster = ClusterSpec::new(1, 1, 80e9);
        assert_eq!(preset(PresetName::Zero3, &cluster).unwrap(), ShardingPlan::full_replica());
    }

    #[test]
    fn presets_larger_than_cluster_are_infeasible() {
        let small = ClusterSpec::new(4, 1, 80e9);
        assert!(matches!(preset(PresetName::Mics, &small), Err(PresetError::Infeasible { .. })));
        let two_nodes = ClusterSpec::new(8, 2, 80e9);
        assert!(matches!(preset(PresetName::Amsp30b, &two_nodes), Err(PresetError::Infeasible { .. })));
    }

    #[test]
    fn every_preset_validates_or_is_infeasible_on_reference_clusters() {
        for n in [1, 2, 4, 8, 16, 32, 64, 128] {
            let cluster = ClusterSpec::new(8, n, 80e9);
            for name in PresetName::ALL {
                match preset(name, &cluster) {
                    Ok(plan) => assert!(validate_plan(&plan, &cluster).is_empty()),
                    Err(PresetError::Infeasible { .. }) => {
                        assert!(matches!(name, PresetName::Amsp30b | PresetName::Mics30b) && n < 4)
                    }
                    Err(e) => panic!("{e}"),
                }
            }
        }
    }

    #[test]
    fn preset_names_parse_loosely() {
        assert_eq!("zero3".parse::<PresetName>().unwrap(), PresetName::Zero3);
        assert_eq!("ZeRO++".parse::<PresetName>().unwrap(), PresetName::ZeroPlusPlus);
        assert_eq!("amsp_7b".parse::<PresetName>().unwrap(), PresetName::Amsp7b);
        assert!(matches!("zero2".parse::<PresetName>(), Err(PresetError::Unknown(_))));
    }

    #[test]
    fn llama_7b_parameter_count() {
        let model = ModelSpec::llama_7b(1);
        assert_eq!(model.total_params, 6_738_415_616);
        assert!(model.validate().is_ok());
    }

    #[test]
    fn mesh_rejects_zero_axes_on_deserialize() {
        assert!(serde_json::from_str::<DeviceMesh>(r#"{"per_node":0,"nodes":1}"#).is_err());
        let m: DeviceMesh = serde_json::from_str(r#"{"per_node":8,"nodes":2}"#).unwrap();
        assert_eq!(m.size(), 16);
    }
}
