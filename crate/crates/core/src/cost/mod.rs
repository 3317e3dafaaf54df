//! Closed-form communication time and memory for a sharding plan, FLOPs and
//! MFU estimation, and the inter-tensor greedy partitioner.

mod partition;

use serde::{Deserialize, Serialize};

use crate::comm::{CollectiveCost, CollectiveKind, ProfileError};
use crate::domain::{ClusterSpec, DeviceMesh, ModelSpec, ShardingPlan};

pub use partition::{partition_tensors_greedy, TensorPartition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationMode {
    #[default]
    None,
    FullRecompute,
}

/// How gradient buckets are priced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bucketing {
    /// `ceil(total / U)` buckets, each priced at the full bucket size.
    #[default]
    Padded,
    /// Full buckets plus one residual bucket priced at its true size.
    ExactResidual,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActivationCoefficients {
    /// Bytes per `L*B*S*H` element without recomputation.
    pub no_recompute: f64,
    /// Bytes per `L*B*S*H` element when only layer inputs are kept.
    pub full_recompute: f64,
}

impl Default for ActivationCoefficients {
    fn default() -> Self {
        ActivationCoefficients { no_recompute: 34.0, full_recompute: 2.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TmpBufferPolicy {
    /// Gradient buckets alive at once.
    pub in_flight_buckets: u32,
    /// Reserve room for the largest gathered module.
    pub gather_buffer: bool,
}

impl Default for TmpBufferPolicy {
    fn default() -> Self {
        TmpBufferPolicy { in_flight_buckets: 2, gather_buffer: true }
    }
}

/// Model FLOPs convention: `params_coefficient * Φ` per token plus
/// `attention_coefficient * L * H * S` per token.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlopsConvention {
    pub params_coefficient: f64,
    pub attention_coefficient: f64,
}

impl Default for FlopsConvention {
    fn default() -> Self {
        FlopsConvention { params_coefficient: 6.0, attention_coefficient: 12.0 }
    }
}

fn default_bucket_size() -> f64 {
    (1u64 << 27) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    /// Gradient bucket size `U` in bytes.
    #[serde(default = "default_bucket_size")]
    pub bucket_size: f64,
    #[serde(default)]
    pub bucketing: Bucketing,
    #[serde(default)]
    pub activation_mode: ActivationMode,
    #[serde(default)]
    pub activation_coefficients: ActivationCoefficients,
    #[serde(default)]
    pub tmp_buffer: TmpBufferPolicy,
    #[serde(default)]
    pub flops: FlopsConvention,
}

impl Default for CostConfig {
    fn default() -> Self {
        CostConfig {
            bucket_size: default_bucket_size(),
            bucketing: Bucketing::default(),
            activation_mode: ActivationMode::default(),
            activation_coefficients: ActivationCoefficients::default(),
            tmp_buffer: TmpBufferPolicy::default(),
            flops: FlopsConvention::default(),
        }
    }
}

impl CostConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.bucket_size.is_finite() && self.bucket_size > 0.0) {
            return Err(format!("bucket_size must be finite and > 0, got {}", self.bucket_size));
        }
        let c = self.activation_coefficients;
        if !(c.no_recompute >= 0.0 && c.full_recompute >= 0.0) {
            return Err("activation coefficients must be >= 0".to_string());
        }
        let f = self.flops;
        if !(f.params_coefficient >= 0.0 && f.attention_coefficient >= 0.0) {
            return Err("flops coefficients must be >= 0".to_string());
        }
        Ok(())
    }
}

/// Seconds of communication per step, by cause.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TimeBreakdown {
    pub t_p: f64,
    pub t_g: f64,
    pub t_os_allreduce: f64,
    pub t_os_broadcast: f64,
    pub total: f64,
}

impl TimeBreakdown {
    pub fn new(t_p: f64, t_g: f64, t_os_allreduce: f64, t_os_broadcast: f64) -> Self {
        TimeBreakdown { t_p, t_g, t_os_allreduce, t_os_broadcast, total: t_p + t_g + t_os_allreduce + t_os_broadcast }
    }
}

/// Bytes per GPU.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MemoryBreakdown {
    pub d_params: f64,
    pub d_grads: f64,
    pub d_os: f64,
    pub d_modelstate: f64,
    pub d_activation: f64,
    pub d_tmp: f64,
    pub d_total: f64,
}

/// Sizes of the gradient buckets covering `total` bytes.
pub fn bucket_sizes(total: f64, bucket_size: f64, mode: Bucketing) -> Vec<f64> {
    if total <= 0.0 {
        return Vec::new();
    }
    let count = (total / bucket_size).ceil() as usize;
    let mut sizes = vec![bucket_size; count];
    if mode == Bucketing::ExactResidual {
        let residual = total - bucket_size * (count - 1) as f64;
        sizes[count - 1] = residual;
    }
    sizes
}

/// Gradient bytes one rank holds before reduction: its parameter shard.
fn shard_grad_bytes(model: &ModelSpec, plan: &ShardingPlan) -> f64 {
    f64::from(model.bytes_per_grad) * model.total_params as f64 / plan.s_p() as f64
}

fn bucketed_allreduce(
    cost: &dyn CollectiveCost,
    model: &ModelSpec,
    plan: &ShardingPlan,
    cfg: &CostConfig,
    mesh: DeviceMesh,
) -> Result<f64, ProfileError> {
    if mesh.size() == 1 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    let sizes = bucket_sizes(shard_grad_bytes(model, plan), cfg.bucket_size, cfg.bucketing);
    match cfg.bucketing {
        Bucketing::Padded => {
            total = sizes.len() as f64 * cost.collective_time(CollectiveKind::AllReduce, cfg.bucket_size, mesh)?;
        }
        Bucketing::ExactResidual => {
            for size in sizes {
                total += cost.collective_time(CollectiveKind::AllReduce, size, mesh)?;
            }
        }
    }
    Ok(total)
}

/// Quotient of two meshes of a validated plan.
fn sub_mesh(outer: DeviceMesh, inner: DeviceMesh) -> DeviceMesh {
    outer.quotient(inner).unwrap_or_else(|| panic!("mesh {inner} does not tile {outer}; validate the plan first"))
}

/// Per-module collective times for one micro-batch pass over one layer:
/// `(forward AllGather, backward AllGather, ReduceScatter)` for module `i`.
pub(crate) fn module_collectives(
    cost: &dyn CollectiveCost,
    model: &ModelSpec,
    plan: &ShardingPlan,
    i: usize,
) -> Result<(f64, f64, f64), ProfileError> {
    if plan.s_p() == 1 {
        return Ok((0.0, 0.0, 0.0));
    }
    let bytes = f64::from(model.bytes_per_param) * model.module_params[i] as f64;
    let forward = cost.collective_time(CollectiveKind::AllGather, bytes, plan.p)?;
    let backward = match plan.secondary_params {
        Some(secondary) => cost.collective_time(CollectiveKind::AllGather, bytes, secondary)?,
        None => forward,
    };
    let rs = cost.collective_time(CollectiveKind::ReduceScatter, bytes, plan.p)?;
    Ok((forward, backward, rs))
}

/// Parameter-sharding traffic: per micro-batch and layer, two AllGathers and
/// one ReduceScatter of every module.
pub fn time_params_sharding(
    model: &ModelSpec,
    plan: &ShardingPlan,
    cost: &dyn CollectiveCost,
) -> Result<f64, ProfileError> {
    if plan.s_p() == 1 {
        return Ok(0.0);
    }
    let mut per_layer = 0.0;
    for i in 0..model.modules_per_layer() {
        let (forward, backward, rs) = module_collectives(cost, model, plan, i)?;
        per_layer += forward + backward + rs;
    }
    Ok(f64::from(model.micro_batch_count) * f64::from(model.layer_count) * per_layer)
}

/// Final-micro-batch gradient AllReduce among the ranks sharing a parameter shard.
pub fn time_os_allreduce(
    model: &ModelSpec,
    cluster: &ClusterSpec,
    plan: &ShardingPlan,
    cost: &dyn CollectiveCost,
    cfg: &CostConfig,
) -> Result<f64, ProfileError> {
    bucketed_allreduce(cost, model, plan, cfg, sub_mesh(cluster.dp_mesh, plan.p))
}

/// Broadcast of updated parameters from optimizer-state owners, one shard
/// per member of the `s_os / s_p` subgroup.
pub fn time_os_broadcast(model: &ModelSpec, plan: &ShardingPlan, cost: &dyn CollectiveCost) -> Result<f64, ProfileError> {
    let group = sub_mesh(plan.os, plan.p);
    if group.size() == 1 {
        return Ok(0.0);
    }
    let shard_bytes = f64::from(model.bytes_per_param) * model.total_params as f64 / plan.s_os() as f64;
    let per_shard = cost.collective_time(CollectiveKind::Broadcast, shard_bytes, group)?;
    Ok(group.size() as f64 * per_shard)
}

/// Gradient AllReduce on every non-final micro-batch when gradients are
/// sharded more coarsely than parameters.
pub fn time_grads_sharding(
    model: &ModelSpec,
    plan: &ShardingPlan,
    cost: &dyn CollectiveCost,
    cfg: &CostConfig,
) -> Result<f64, ProfileError> {
    if model.micro_batch_count <= 1 || plan.s_g() == plan.s_p() {
        return Ok(0.0);
    }
    let per_micro_batch = bucketed_allreduce(cost, model, plan, cfg, sub_mesh(plan.g, plan.p))?;
    Ok(f64::from(model.micro_batch_count - 1) * per_micro_batch)
}

pub fn total_comm_time(
    model: &ModelSpec,
    cluster: &ClusterSpec,
    plan: &ShardingPlan,
    cost: &dyn CollectiveCost,
    cfg: &CostConfig,
) -> Result<TimeBreakdown, ProfileError> {
    Ok(TimeBreakdown::new(
        time_params_sharding(model, plan, cost)?,
        time_grads_sharding(model, plan, cost, cfg)?,
        time_os_allreduce(model, cluster, plan, cost, cfg)?,
        time_os_broadcast(model, plan, cost)?,
    ))
}

pub fn memory_breakdown(model: &ModelSpec, plan: &ShardingPlan, cfg: &CostConfig) -> MemoryBreakdown {
    let phi = model.total_params as f64;
    let mut d_params = f64::from(model.bytes_per_param) * phi / plan.s_p() as f64;
    if let Some(secondary) = plan.secondary_params {
        d_params += f64::from(model.bytes_per_param) * phi / secondary.size() as f64;
    }
    let d_grads = f64::from(model.bytes_per_grad) * phi / plan.s_g() as f64;
    let d_os = f64::from(model.bytes_per_os_per_param) * phi / plan.s_os() as f64;
    let d_modelstate = d_params + d_grads + d_os;

    let elements = f64::from(model.layer_count)
        * f64::from(model.micro_batch)
        * f64::from(model.seq_len)
        * f64::from(model.hidden);
    let d_activation = elements
        * match cfg.activation_mode {
            ActivationMode::None => cfg.activation_coefficients.no_recompute,
            ActivationMode::FullRecompute => cfg.activation_coefficients.full_recompute,
        };

    let mut d_tmp = f64::from(cfg.tmp_buffer.in_flight_buckets) * cfg.bucket_size;
    if cfg.tmp_buffer.gather_buffer {
        let largest = model.module_params.iter().copied().max().unwrap_or(0) as f64;
        d_tmp += f64::from(model.bytes_per_param) * largest;
    }

    MemoryBreakdown {
        d_params,
        d_grads,
        d_os,
        d_modelstate,
        d_activation,
        d_tmp,
        d_total: d_modelstate + d_activation + d_tmp,
    }
}

pub fn flops_per_step(model: &ModelSpec) -> f64 {
    flops_per_step_with(model, &FlopsConvention::default())
}

pub fn flops_per_step_with(model: &ModelSpec, convention: &FlopsConvention) -> f64 {
    let tokens = f64::from(model.micro_batch_count) * f64::from(model.micro_batch) * f64::from(model.seq_len);
    let per_token = convention.params_coefficient * model.total_params as f64
        + convention.attention_coefficient
            * f64::from(model.layer_count)
            * f64::from(model.hidden)
            * f64::from(model.seq_len);
    tokens * per_token
}

/// Model FLOPs utilization of `gpu_count` GPUs that each ran `flops` in `step_time`.
pub fn mfu(flops: f64, step_time: f64, peak_flops_per_gpu: f64, gpu_count: u64) -> f64 {
    flops / (step_time * peak_flops_per_gpu * gpu_count as f64)
}
