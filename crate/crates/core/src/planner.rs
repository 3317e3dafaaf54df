//! Search over sharding plans: generation of the constrained candidate set,
//! parallel evaluation, deterministic selection of the communication-minimal
//! feasible plan, and an unfiltered brute-force oracle.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::comm::{CollectiveCost, ProfileError};
use crate::cost::{memory_breakdown, total_comm_time, CostConfig, MemoryBreakdown, TimeBreakdown};
use crate::domain::{preset, validate_plan, ClusterSpec, DeviceMesh, ModelSpec, PresetName, ShardingPlan};
use crate::placement::{assign_nodes, PlacedCost, PlacementError};

/// Raw-grid size above which the brute-force oracle refuses to run.
pub const DEFAULT_ORACLE_GUARD: u64 = 1_000_000;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Placement(#[from] PlacementError),
    #[error(
        "no candidate fits in {capacity} bytes; the smallest footprint is {plan} needing {d_total} bytes"
    )]
    Infeasible { capacity: f64, plan: ShardingPlan, d_total: f64, report: Box<SearchReport> },
    #[error("raw grid of {grid} tuples exceeds the oracle guard of {guard}")]
    GridTooLarge { grid: u64, guard: u64 },
    #[error("plan {plan} is invalid: {violations}")]
    InvalidPlan { plan: ShardingPlan, violations: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub plan: ShardingPlan,
    pub time: TimeBreakdown,
    pub memory: MemoryBreakdown,
    pub feasible: bool,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub best: PlanResult,
    pub candidates_evaluated: u64,
    pub candidates_filtered: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub all_results: Option<Vec<PlanResult>>,
}

fn divisors(n: u32) -> Vec<u32> {
    (1..=n).filter(|d| n.is_multiple_of(*d)).collect()
}

/// Admissible meshes for one component on a cluster: both axes divide the
/// data-parallel mesh, and a multi-node mesh must use whole nodes.
fn component_meshes(dp: DeviceMesh) -> Vec<DeviceMesh> {
    let mut meshes = Vec::new();
    for a in divisors(dp.per_node()) {
        for b in divisors(dp.nodes()) {
            if b == 1 || a == dp.per_node() {
                meshes.push(DeviceMesh::new(a, b));
            }
        }
    }
    meshes
}

/// `inner` may sit below `outer` in the dependency chain on both axes.
fn nests(inner: DeviceMesh, outer: DeviceMesh) -> bool {
    inner.per_node() <= outer.per_node()
        && inner.nodes() <= outer.nodes()
        && outer.quotient(inner).is_some()
}

/// Every plan accepted by [`validate_plan`], built from divisor chains of
/// the data-parallel mesh, in lexicographic `(p, g, os)` order.
pub fn enumerate_candidates(cluster: &ClusterSpec) -> Vec<ShardingPlan> {
    let dp = cluster.dp_mesh;
    if dp.per_node() > cluster.gpus_per_node || dp.nodes() > cluster.node_count {
        return Vec::new();
    }
    let meshes = component_meshes(dp);
    let mut plans = Vec::new();
    for &p in &meshes {
        for &os in meshes.iter().filter(|&&os| nests(p, os)) {
            // s_g is either s_p or s_os; with nesting that pins g to p or os.
            let mut grads = vec![p, os];
            grads.dedup();
            for g in grads {
                plans.push(ShardingPlan::new(p, g, os));
            }
        }
    }
    plans.sort_by_key(ShardingPlan::order_key);
    plans
}

/// Time and memory for one plan, priced under the cluster's placement when
/// its topology carries a cross-leaf penalty.
pub fn evaluate_plan(
    model: &ModelSpec,
    cluster: &ClusterSpec,
    plan: &ShardingPlan,
    cost: &dyn CollectiveCost,
    cfg: &CostConfig,
) -> Result<(TimeBreakdown, MemoryBreakdown), PlanError> {
    let memory = memory_breakdown(model, plan, cfg);
    let time = if cluster.topology.inter_leaf_penalty > 1.0 {
        let assignment = assign_nodes(&cluster.topology, cluster, plan)?;
        let placed = PlacedCost { inner: cost, topology: cluster.topology, assignment };
        total_comm_time(model, cluster, plan, &placed, cfg)?
    } else {
        total_comm_time(model, cluster, plan, cost, cfg)?
    };
    Ok((time, memory))
}

fn result_for(
    model: &ModelSpec,
    cluster: &ClusterSpec,
    plan: ShardingPlan,
    cost: &dyn CollectiveCost,
    cfg: &CostConfig,
) -> Result<PlanResult, PlanError> {
    let (time, memory) = evaluate_plan(model, cluster, &plan, cost, cfg)?;
    let feasible = memory.d_total <= cluster.gpu_memory_capacity;
    Ok(PlanResult { plan, time, memory, feasible, rank: 0 })
}

/// Ranking order: feasible first, then lower total time, lower memory, and
/// finally lexicographic plan order.
fn compare_results(a: &PlanResult, b: &PlanResult) -> Ordering {
    b.feasible
        .cmp(&a.feasible)
        .then(a.time.total.total_cmp(&b.time.total))
        .then(a.memory.d_total.total_cmp(&b.memory.d_total))
        .then(a.plan.order_key().cmp(&b.plan.order_key()))
}

fn raw_grid_size(cluster: &ClusterSpec) -> u64 {
    let per_node = u64::from(cluster.gpus_per_node);
    let nodes = u64::from(cluster.node_count);
    per_node.pow(3).saturating_mul(nodes.pow(3))
}

fn finish(mut results: Vec<PlanResult>, cluster: &ClusterSpec, include_all: bool) -> Result<SearchReport, PlanError> {
    results.sort_by(compare_results);
    for (rank, r) in results.iter_mut().enumerate() {
        r.rank = rank;
    }
    let evaluated = results.len() as u64;
    let best = results.first().cloned().ok_or(PlanError::InvalidPlan {
        plan: ShardingPlan::full_replica(),
        violations: "the cluster admits no candidate plans".to_string(),
    })?;
    let report = SearchReport {
        best: best.clone(),
        candidates_evaluated: evaluated,
        candidates_filtered: raw_grid_size(cluster).saturating_sub(evaluated),
        all_results: include_all.then_some(results.clone()),
    };
    if !best.feasible {
        let smallest = results
            .iter()
            .min_by(|a, b| {
                a.memory
                    .d_total
                    .total_cmp(&b.memory.d_total)
                    .then(a.plan.order_key().cmp(&b.plan.order_key()))
            })
            .expect("non-empty");
        return Err(PlanError::Infeasible {
            capacity: cluster.gpu_memory_capacity,
            plan: smallest.plan,
            d_total: smallest.memory.d_total,
            report: Box::new(report),
        });
    }
    Ok(report)
}

/// Evaluates every candidate (in parallel) and returns the feasible plan
/// with the least communication time.
pub fn solve(
    model: &ModelSpec,
    cluster: &ClusterSpec,
    cost: &dyn CollectiveCost,
    cfg: &CostConfig,
    include_all: bool,
) -> Result<SearchReport, PlanError> {
    let results = enumerate_candidates(cluster)
        .into_par_iter()
        .map(|plan| result_for(model, cluster, plan, cost, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    finish(results, cluster, include_all)
}

/// Walks the full `[1..R]^3 x [1..N]^3` grid, keeps what [`validate_plan`]
/// accepts, and selects exactly as [`solve`] does.
pub fn brute_force_oracle(
    model: &ModelSpec,
    cluster: &ClusterSpec,
    cost: &dyn CollectiveCost,
    cfg: &CostConfig,
    guard: u64,
) -> Result<SearchReport, PlanError> {
    let grid = raw_grid_size(cluster);
    if grid > guard {
        return Err(PlanError::GridTooLarge { grid, guard });
    }
    let mut results = Vec::new();
    for plan in raw_grid(cluster) {
        if validate_plan(&plan, cluster).is_empty() {
            results.push(result_for(model, cluster, plan, cost, cfg)?);
        }
    }
    finish(results, cluster, false)
}

/// Every `(p, g, os)` with axes in `[1..R] x [1..N]`, unfiltered.
pub fn raw_grid(cluster: &ClusterSpec) -> impl Iterator<Item = ShardingPlan> {
    let (r, n) = (cluster.gpus_per_node, cluster.node_count);
    let meshes: Vec<DeviceMesh> =
        (1..=r).flat_map(|a| (1..=n).map(move |b| DeviceMesh::new(a, b))).collect();
    let m = meshes.clone();
    meshes.clone().into_iter().flat_map(move |p| {
        let m = m.clone();
        m.clone().into_iter().flat_map(move |g| m.clone().into_iter().map(move |os| ShardingPlan::new(p, g, os)))
    })
}

/// Evaluates one plan, checking it first.
pub fn evaluate_checked(
    model: &ModelSpec,
    cluster: &ClusterSpec,
    plan: ShardingPlan,
    cost: &dyn CollectiveCost,
    cfg: &CostConfig,
) -> Result<PlanResult, PlanError> {
    let violations = validate_plan(&plan, cluster);
    if !violations.is_empty() {
        let violations = violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ");
        return Err(PlanError::InvalidPlan { plan, violations });
    }
    result_for(model, cluster, plan, cost, cfg)
}

/// One row of a preset comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresetResult {
    /// Preset name, or `"best"` for the solver's choice.
    pub name: String,
    /// `None` when the preset cannot be instantiated on this cluster.
    pub result: Option<PlanResult>,
    pub feasible: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Evaluates the presets (all of them when `names` is empty) plus the
/// solver's best, sorted by total communication time with infeasible rows last.
pub fn compare_presets(
    model: &ModelSpec,
    cluster: &ClusterSpec,
    cost: &dyn CollectiveCost,
    cfg: &CostConfig,
    names: &[PresetName],
) -> Result<Vec<PresetResult>, PlanError> {
    let names = if names.is_empty() { &PresetName::ALL[..] } else { names };
    let mut rows = Vec::new();
    for &name in names {
        let row = match preset(name, cluster) {
            Ok(plan) => {
                let result = result_for(model, cluster, plan, cost, cfg)?;
                let note = (!result.feasible).then(|| "exceeds GPU memory capacity".to_string());
                PresetResult { name: name.to_string(), feasible: result.feasible, result: Some(result), note }
            }
            Err(e) => PresetResult { name: name.to_string(), result: None, feasible: false, note: Some(e.to_string()) },
        };
        rows.push(row);
    }
    match solve(model, cluster, cost, cfg, false) {
        Ok(report) => rows.push(PresetResult {
            name: "best".to_string(),
            feasible: true,
            result: Some(report.best),
            note: None,
        }),
        Err(PlanError::Infeasible { report, .. }) => rows.push(PresetResult {
            name: "best".to_string(),
            feasible: false,
            result: Some(report.best),
            note: Some("no candidate fits in GPU memory".to_string()),
        }),
        Err(e) => return Err(e),
    }
    rows.sort_by(|a, b| {
        b.feasible.cmp(&a.feasible).then_with(|| {
            let t = |r: &PresetResult| r.result.as_ref().map_or(f64::INFINITY, |x| x.time.total);
            t(a).total_cmp(&t(b))
        })
    });
    for (rank, row) in rows.iter_mut().enumerate() {
        if let Some(r) = row.result.as_mut() {
            r.rank = rank;
        }
    }
    Ok(rows)
}
