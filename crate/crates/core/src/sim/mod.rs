//! Single-step discrete-event simulation of one representative rank: a
//! compute stream plus one or two communication streams, with the prefetch,
//! decoupled ReduceScatter, bucketed AllReduce and Broadcast overlap
//! schedules switched on tier by tier.

mod engine;
mod trace;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::comm::{CollectiveCost, CollectiveKind, ProfileError};
use crate::cost::{bucket_sizes, flops_per_step_with, module_collectives, time_os_broadcast, CostConfig};
use crate::domain::{ClusterSpec, DeviceMesh, ModelSpec, ShardingPlan};

pub use engine::{bubble_report, simulate_step, summarize, BubbleReport, ScheduledEvent, SimSummary, StreamBubbles, Timeline};
pub use trace::{export_trace, trace_json};

pub const COMPUTE_STREAM: u32 = 0;

/// Overlap capabilities, each tier adding one to the previous.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapTier {
    /// Every communication runs alone, in program order with compute.
    None,
    /// AllGather prefetch and non-blocking ReduceScatter.
    AgRs,
    /// Plus AllReduce buckets that do not block compute.
    AgRsAr,
    /// Plus Broadcast of updated shards hidden under forward compute.
    #[default]
    AgRsArBc,
}

impl OverlapTier {
    pub const ALL: [OverlapTier; 4] = [OverlapTier::None, OverlapTier::AgRs, OverlapTier::AgRsAr, OverlapTier::AgRsArBc];

    pub fn as_str(&self) -> &'static str {
        match self {
            OverlapTier::None => "none",
            OverlapTier::AgRs => "ag_rs",
            OverlapTier::AgRsAr => "ag_rs_ar",
            OverlapTier::AgRsArBc => "ag_rs_ar_bc",
        }
    }
}

impl std::str::FromStr for OverlapTier {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OverlapTier::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown overlap tier '{s}' (expected none, ag_rs, ag_rs_ar or ag_rs_ar_bc)"))
    }
}

/// Where compute durations come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum ComputeTimes {
    /// Model FLOPs at `efficiency` of the GPU's peak, split evenly between
    /// forward, weight-gradient and input-gradient passes and spread over
    /// modules by parameter count.
    Flops { efficiency: f64 },
    /// Seconds per module of one layer for one micro-batch. Backward time is
    /// split evenly between the weight and input gradients.
    Measured { forward: Vec<f64>, backward: Vec<f64> },
}

impl Default for ComputeTimes {
    fn default() -> Self {
        ComputeTimes::Flops { efficiency: 0.6 }
    }
}

fn default_streams() -> u32 {
    2
}

fn default_peak() -> f64 {
    312e12
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default)]
    pub overlap_tier: OverlapTier,
    #[serde(default)]
    pub recompute: bool,
    /// 2 keeps AllReduce/Broadcast apart from AllGather/ReduceScatter; 1
    /// puts every collective on one queue.
    #[serde(default = "default_streams")]
    pub comm_streams: u32,
    /// Dense half-precision FLOP/s of one GPU.
    #[serde(default = "default_peak")]
    pub peak_flops_per_gpu: f64,
    #[serde(default)]
    pub compute: ComputeTimes,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            overlap_tier: OverlapTier::default(),
            recompute: false,
            comm_streams: default_streams(),
            peak_flops_per_gpu: default_peak(),
            compute: ComputeTimes::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error("invalid simulator config: {0}")]
    Config(String),
    #[error("event {event} depends on unknown event {dependency}")]
    UnknownDependency { event: usize, dependency: usize },
    #[error("dependency cycle: {remaining} events can never start")]
    Cycle { remaining: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    FwdCompute,
    BwdGradInput,
    BwdGradWeight,
    RecomputeFwd,
    Allgather,
    ReduceScatter,
    AllreduceBucket,
    BroadcastShard,
    /// Zero-length barrier: all gradients reduced.
    StepEnd,
}

impl EventKind {
    pub fn is_compute(&self) -> bool {
        matches!(self, EventKind::FwdCompute | EventKind::BwdGradInput | EventKind::BwdGradWeight | EventKind::RecomputeFwd)
    }

    pub fn is_comm(&self) -> bool {
        !self.is_compute() && *self != EventKind::StepEnd
    }
}

/// One node of the step's dependency graph.
///
/// `layer` and `module` locate compute and per-module collectives. For an
/// AllReduce bucket `module` is the bucket index and `layer` is 0; a
/// Broadcast carries one layer's updated parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub id: usize,
    pub kind: EventKind,
    pub layer: u32,
    pub module: u32,
    pub micro_batch: u32,
    pub duration: f64,
    pub depends_on: Vec<usize>,
    pub stream: u32,
}

impl Event {
    pub fn name(&self) -> String {
        let mb = self.micro_batch;
        let (l, m) = (self.layer, self.module);
        match self.kind {
            EventKind::FwdCompute => format!("fwd L{l}.M{m} mb{mb}"),
            EventKind::BwdGradInput => format!("grad_input L{l}.M{m} mb{mb}"),
            EventKind::BwdGradWeight => format!("grad_weight L{l}.M{m} mb{mb}"),
            EventKind::RecomputeFwd => format!("recompute L{l}.M{m} mb{mb}"),
            EventKind::Allgather => format!("allgather L{l}.M{m} mb{mb}"),
            EventKind::ReduceScatter => format!("reduce_scatter L{l}.M{m} mb{mb}"),
            EventKind::AllreduceBucket => format!("allreduce bucket{m} mb{mb}"),
            EventKind::BroadcastShard => format!("broadcast L{l}"),
            EventKind::StepEnd => "step_end".to_string(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventGraph {
    pub events: Vec<Event>,
}

impl EventGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends an event with the next id and returns that id.
    pub fn push(&mut self, kind: EventKind, duration: f64, stream: u32, depends_on: Vec<usize>) -> usize {
        let id = self.events.len();
        self.events.push(Event { id, kind, layer: 0, module: 0, micro_batch: 0, duration, depends_on, stream });
        id
    }

    pub fn total_duration(&self) -> f64 {
        self.events.iter().map(|e| e.duration).sum()
    }

    pub fn compute_duration(&self) -> f64 {
        self.events.iter().filter(|e| e.kind.is_compute()).map(|e| e.duration).sum()
    }

    pub fn comm_duration(&self) -> f64 {
        self.events.iter().filter(|e| e.kind.is_comm()).map(|e| e.duration).sum()
    }

    /// Summed durations per stream, indexed by stream id.
    pub fn stream_durations(&self) -> Vec<f64> {
        let streams = self.events.iter().map(|e| e.stream as usize + 1).max().unwrap_or(0);
        let mut totals = vec![0.0; streams];
        for e in &self.events {
            totals[e.stream as usize] += e.duration;
        }
        totals
    }
}

/// Program-order graph builder. Every event waits for the previous event on
/// its stream; with `serialize` it also waits for the previous event overall.
struct Builder {
    graph: EventGraph,
    last_on_stream: [Option<usize>; 3],
    last_any: Option<usize>,
    serialize: bool,
}

impl Builder {
    fn push(&mut self, kind: EventKind, at: (u32, u32, u32), duration: f64, stream: u32, mut deps: Vec<usize>) -> usize {
        deps.extend(self.last_on_stream[stream as usize]);
        if self.serialize {
            deps.extend(self.last_any);
        }
        deps.sort_unstable();
        deps.dedup();
        let id = self.graph.push(kind, duration, stream, deps);
        let event = &mut self.graph.events[id];
        (event.layer, event.module, event.micro_batch) = at;
        self.last_on_stream[stream as usize] = Some(id);
        self.last_any = Some(id);
        id
    }

    fn last_compute(&self) -> Option<usize> {
        self.last_on_stream[COMPUTE_STREAM as usize]
    }
}

/// Per-module compute seconds for one layer and one micro-batch.
struct ComputeModel {
    forward: Vec<f64>,
    grad_weight: Vec<f64>,
    grad_input: Vec<f64>,
}

impl ComputeModel {
    fn new(model: &ModelSpec, cost_cfg: &CostConfig, cfg: &SimConfig) -> Result<Self, SimError> {
        let k = model.modules_per_layer();
        match &cfg.compute {
            ComputeTimes::Flops { efficiency } => {
                if !(*efficiency > 0.0 && *efficiency <= 1.0) {
                    return Err(SimError::Config(format!("efficiency must be in (0, 1], got {efficiency}")));
                }
                if cfg.peak_flops_per_gpu.is_nan() || cfg.peak_flops_per_gpu <= 0.0 {
                    return Err(SimError::Config("peak_flops_per_gpu must be > 0".to_string()));
                }
                let per_micro_batch = flops_per_step_with(model, &cost_cfg.flops) / f64::from(model.micro_batch_count);
                let rate = cfg.peak_flops_per_gpu * efficiency;
                let layer_params = model.layer_params() as f64;
                let forward: Vec<f64> = model
                    .module_params
                    .iter()
                    .map(|&phi| per_micro_batch / 3.0 * phi as f64 / layer_params / rate)
                    .collect();
                Ok(ComputeModel { grad_weight: forward.clone(), grad_input: forward.clone(), forward })
            }
            ComputeTimes::Measured { forward, backward } => {
                if forward.len() != k || backward.len() != k {
                    return Err(SimError::Config(format!(
                        "measured tables need {k} entries, got {} forward and {} backward",
                        forward.len(),
                        backward.len()
                    )));
                }
                if forward.iter().chain(backward).any(|&t| !(t > 0.0 && t.is_finite())) {
                    return Err(SimError::Config("measured compute times must be finite and > 0".to_string()));
                }
                let half: Vec<f64> = backward.iter().map(|t| t / 2.0).collect();
                Ok(ComputeModel { forward: forward.clone(), grad_weight: half.clone(), grad_input: half })
            }
        }
    }
}

/// Gradient bucket filler for one micro-batch.
struct Buckets {
    durations: Vec<f64>,
    capacity: f64,
    filled: f64,
    launched: usize,
    contributors: Vec<usize>,
}

impl Buckets {
    fn add(&mut self, b: &mut Builder, ready: usize, bytes: f64, mb: u32, stream: u32, blocking: &mut Vec<usize>) {
        if self.launched >= self.durations.len() {
            return;
        }
        self.contributors.push(ready);
        self.filled += bytes;
        while self.launched < self.durations.len() && self.filled >= (self.launched + 1) as f64 * self.capacity {
            let spills = self.filled > (self.launched + 1) as f64 * self.capacity;
            self.launch(b, mb, stream, blocking);
            if spills {
                self.contributors.push(ready);
            }
        }
    }

    fn launch(&mut self, b: &mut Builder, mb: u32, stream: u32, blocking: &mut Vec<usize>) {
        let deps = std::mem::take(&mut self.contributors);
        let at = (0, self.launched as u32, mb);
        let id = b.push(EventKind::AllreduceBucket, at, self.durations[self.launched], stream, deps);
        blocking.push(id);
        self.launched += 1;
    }

    fn flush(&mut self, b: &mut Builder, last_ready: Option<usize>, mb: u32, stream: u32, blocking: &mut Vec<usize>) {
        while self.launched < self.durations.len() {
            if self.contributors.is_empty() {
                self.contributors.extend(last_ready);
            }
            self.launch(b, mb, stream, blocking);
        }
    }
}

/// Builds the dependency graph of one training step.
pub fn build_schedule(
    model: &ModelSpec,
    cluster: &ClusterSpec,
    plan: &ShardingPlan,
    cost: &dyn CollectiveCost,
    cost_cfg: &CostConfig,
    cfg: &SimConfig,
) -> Result<EventGraph, SimError> {
    if !(1..=2).contains(&cfg.comm_streams) {
        return Err(SimError::Config(format!("comm_streams must be 1 or 2, got {}", cfg.comm_streams)));
    }
    let dp_group = cluster
        .dp_mesh
        .quotient(plan.p)
        .ok_or_else(|| SimError::Config(format!("plan {plan} does not tile the data-parallel mesh")))?;
    let os_group = plan.os.quotient(plan.p).ok_or_else(|| SimError::Config(format!("plan {plan} is not nested")))?;
    let g_group = plan.g.quotient(plan.p).ok_or_else(|| SimError::Config(format!("plan {plan} is not nested")))?;

    let compute = ComputeModel::new(model, cost_cfg, cfg)?;
    let tier = cfg.overlap_tier;
    let ag_rs_stream = 1;
    let ar_bc_stream = if cfg.comm_streams == 2 { 2 } else { 1 };
    let layers = model.layer_count;
    let k = model.modules_per_layer();
    let m_count = model.micro_batch_count;
    let sharded = plan.s_p() > 1;

    let mut collectives = Vec::with_capacity(k);
    for i in 0..k {
        collectives.push(module_collectives(cost, model, plan, i)?);
    }

    let grad_bytes = |phi: u64| f64::from(model.bytes_per_grad) * phi as f64 / plan.s_p() as f64;
    let shard_grad_total = grad_bytes(model.total_params);
    let bucket_plan = bucket_sizes(shard_grad_total, cost_cfg.bucket_size, cost_cfg.bucketing);
    let bucket_durations = |mesh: DeviceMesh| -> Result<Vec<f64>, ProfileError> {
        if mesh.size() == 1 {
            return Ok(Vec::new());
        }
        bucket_plan.iter().map(|&s| cost.collective_time(CollectiveKind::AllReduce, s, mesh)).collect()
    };
    let final_buckets = bucket_durations(dp_group)?;
    let accum_buckets = if m_count > 1 && plan.s_g() > plan.s_p() { bucket_durations(g_group)? } else { Vec::new() };

    let mut b = Builder {
        graph: EventGraph::new(),
        last_on_stream: [None; 3],
        last_any: None,
        serialize: tier == OverlapTier::None,
    };

    // Broadcast of the updated parameters: one group call per layer, in
    // forward order, each sending that layer's tensors from their owners.
    // Durations split the aggregate broadcast time by bytes; the remainder
    // outside the layers travels with layer 0.
    let mut layer_broadcast: Vec<usize> = Vec::new();
    if os_group.size() > 1 {
        let total = time_os_broadcast(model, plan, cost)?;
        let phi = model.total_params as f64;
        for layer in 0..layers {
            let mut params: u64 = model.module_params.iter().sum();
            if layer == 0 {
                params += model.extra_params();
            }
            let duration = total * params as f64 / phi;
            layer_broadcast.push(b.push(EventKind::BroadcastShard, (layer, 0, 0), duration, ar_bc_stream, vec![]));
        }
    }
    let last_broadcast = layer_broadcast.last().copied();
    let broadcast_gate = |layer: u32| -> Vec<usize> {
        if tier == OverlapTier::AgRsArBc {
            layer_broadcast.get(layer as usize).copied().into_iter().collect()
        } else {
            last_broadcast.into_iter().collect()
        }
    };

    let ar_blocks = tier < OverlapTier::AgRsAr;

    for mb in 0..m_count {
        let gate = |layer: u32| if mb == 0 { broadcast_gate(layer) } else { Vec::new() };

        // Forward with one layer of AllGather prefetch.
        let mut ag = vec![vec![0usize; k]; layers as usize];
        let issue_ag = |b: &mut Builder, ag: &mut Vec<Vec<usize>>, layer: u32| {
            for i in 0..k {
                let mut deps = gate(layer);
                deps.extend(b.last_compute());
                ag[layer as usize][i] =
                    b.push(EventKind::Allgather, (layer, i as u32, mb), collectives[i].0, ag_rs_stream, deps);
            }
        };
        for layer in 0..layers {
            if sharded {
                if layer == 0 {
                    issue_ag(&mut b, &mut ag, 0);
                    if layers > 1 {
                        issue_ag(&mut b, &mut ag, 1);
                    }
                } else if layer + 1 < layers {
                    issue_ag(&mut b, &mut ag, layer + 1);
                }
            }
            #[allow(clippy::needless_range_loop)]
            for i in 0..k {
                let mut deps = gate(layer);
                if sharded {
                    deps.push(ag[layer as usize][i]);
                }
                b.push(EventKind::FwdCompute, (layer, i as u32, mb), compute.forward[i], COMPUTE_STREAM, deps);
            }
        }

        // Backward.
        let final_mb = mb + 1 == m_count;
        let mut buckets = Buckets {
            durations: if final_mb { final_buckets.clone() } else { accum_buckets.clone() },
            capacity: cost_cfg.bucket_size,
            filled: 0.0,
            launched: 0,
            contributors: Vec::new(),
        };
        let mut pending: Vec<usize> = Vec::new();
        let block = |pending: &mut Vec<usize>| if ar_blocks { std::mem::take(pending) } else { Vec::new() };
        let mut last_ready = None;

        let mut grad_step = |b: &mut Builder, layer: u32, i: usize, pending: &mut Vec<usize>, deps: Vec<usize>| {
            let mut gw_deps = deps;
            gw_deps.extend(block(pending));
            let at = (layer, i as u32, mb);
            let gw = b.push(EventKind::BwdGradWeight, at, compute.grad_weight[i], COMPUTE_STREAM, gw_deps);
            let ready = if sharded {
                b.push(EventKind::ReduceScatter, at, collectives[i].2, ag_rs_stream, vec![gw])
            } else {
                gw
            };
            last_ready = Some(ready);
            buckets.add(b, ready, grad_bytes(model.module_params[i]), mb, ar_bc_stream, pending);
            let gi_deps = block(pending);
            b.push(EventKind::BwdGradInput, at, compute.grad_input[i], COMPUTE_STREAM, gi_deps);
        };

        if cfg.recompute {
            let mut regathered = vec![vec![0usize; k]; layers as usize];
            let issue = |b: &mut Builder, regathered: &mut Vec<Vec<usize>>, layer: u32| {
                for i in 0..k {
                    let deps: Vec<usize> = b.last_compute().into_iter().collect();
                    regathered[layer as usize][i] =
                        b.push(EventKind::Allgather, (layer, i as u32, mb), collectives[i].1, ag_rs_stream, deps);
                }
            };
            for layer in (0..layers).rev() {
                if sharded {
                    if layer + 1 == layers {
                        issue(&mut b, &mut regathered, layer);
                    }
                    if layer > 0 {
                        issue(&mut b, &mut regathered, layer - 1);
                    }
                }
                #[allow(clippy::needless_range_loop)]
                for i in 0..k {
                    let mut deps = block(&mut pending);
                    if sharded {
                        deps.push(regathered[layer as usize][i]);
                    }
                    b.push(EventKind::RecomputeFwd, (layer, i as u32, mb), compute.forward[i], COMPUTE_STREAM, deps);
                }
                // Gathered parameters are retained from the recompute pass.
                for i in (0..k).rev() {
                    grad_step(&mut b, layer, i, &mut pending, Vec::new());
                }
            }
        } else {
            let order: Vec<(u32, usize)> = (0..layers).rev().flat_map(|l| (0..k).rev().map(move |i| (l, i))).collect();
            let mut gathered = vec![0usize; order.len()];
            let issue = |b: &mut Builder, gathered: &mut Vec<usize>, idx: usize| {
                let (layer, i) = order[idx];
                let deps: Vec<usize> = b.last_compute().into_iter().collect();
                gathered[idx] = b.push(EventKind::Allgather, (layer, i as u32, mb), collectives[i].1, ag_rs_stream, deps);
            };
            if sharded {
                issue(&mut b, &mut gathered, 0);
            }
            for idx in 0..order.len() {
                if sharded && idx + 1 < order.len() {
                    issue(&mut b, &mut gathered, idx + 1);
                }
                let deps = if sharded { vec![gathered[idx]] } else { Vec::new() };
                let (layer, i) = order[idx];
                grad_step(&mut b, layer, i, &mut pending, deps);
            }
        }

        // Embedding and head gradients close out the last bucket.
        if let Some(ready) = last_ready {
            buckets.add(&mut b, ready, grad_bytes(model.extra_params()), mb, ar_bc_stream, &mut pending);
        }
        buckets.flush(&mut b, last_ready, mb, ar_bc_stream, &mut pending);
    }

    // Gradients are final only once every ReduceScatter and AllReduce is done.
    let reduce_events: Vec<usize> = b
        .graph
        .events
        .iter()
        .filter(|e| matches!(e.kind, EventKind::ReduceScatter | EventKind::AllreduceBucket))
        .map(|e| e.id)
        .collect();
    b.push(EventKind::StepEnd, (0, 0, 0), 0.0, COMPUTE_STREAM, reduce_events);
    Ok(b.graph)
}

/// Builds and runs one step.
pub fn simulate(
    model: &ModelSpec,
    cluster: &ClusterSpec,
    plan: &ShardingPlan,
    cost: &dyn CollectiveCost,
    cost_cfg: &CostConfig,
    cfg: &SimConfig,
) -> Result<(EventGraph, Timeline), SimError> {
    let graph = build_schedule(model, cluster, plan, cost, cost_cfg, cfg)?;
    let timeline = simulate_step(&graph)?;
    Ok((graph, timeline))
}
