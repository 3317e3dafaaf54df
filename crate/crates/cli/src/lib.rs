//! Command implementations behind the `shardplan` binary: config ingestion,
//! dispatch to the planner and simulator, and deterministic JSON reports.
//!
//! Exit codes: 0 success, 1 config/profile/plan errors, 2 memory
//! infeasibility (the report is still written).

use std::path::{Path, PathBuf};

use shardplan_core::comm::{import_csv, BandwidthProfile, CollectiveCost, ProfileError};
use shardplan_core::cost::flops_per_step_with;
use shardplan_core::domain::{preset, ClusterSpec, ModelSpec, PresetError, ShardingPlan};
use shardplan_core::placement::{assign_nodes, GroupAssignment, PlacedCost};
use shardplan_core::planner::{brute_force_oracle, compare_presets, evaluate_checked, solve, PlanError};
use shardplan_core::sim::{bubble_report, simulate, summarize, SimError, Timeline};
use shardplan_core::{CostConfig, OverlapTier, PresetName, SimConfig};
use thiserror::Error;

pub mod config;
pub mod report;

pub use config::{ClusterConfig, Resolved, RunConfig, SolverConfig};
pub use report::{ComparisonRow, InfeasibleDetail, OracleCheck, Report, SimulationReport};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error("plan {plan} is invalid:\n  {}", violations.join("\n  "))]
    InvalidPlan { plan: ShardingPlan, violations: Vec<String> },
    #[error("profile {}: {source}", path.display())]
    Profile { path: PathBuf, source: ProfileError },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Preset(#[from] PresetError),
}

impl CliError {
    /// Every error maps to 1; infeasibility is not an error but an outcome.
    pub fn exit_code(&self) -> u8 {
        1
    }
}

/// Overrides from the command line, applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub profile: Option<PathBuf>,
    pub overlap: Option<OverlapTier>,
    pub preset: Option<PresetName>,
    pub all_candidates: bool,
}

impl Overrides {
    pub fn apply(&self, mut config: RunConfig) -> RunConfig {
        if let Some(p) = &self.profile {
            // Absolute so that the echoed config runs from anywhere.
            config.profile_path = Some(std::path::absolute(p).unwrap_or_else(|_| p.clone()));
        }
        if let Some(t) = self.overlap {
            config.sim.overlap_tier = t;
        }
        if let Some(p) = self.preset {
            config.preset = Some(p);
            config.plan = None;
        }
        if self.all_candidates {
            config.solver.all_candidates = true;
        }
        config
    }
}

/// A finished command: the report and the exit code it implies.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: Report,
    pub exit_code: u8,
    pub timeline: Option<Timeline>,
}

/// Loads the config at `path`, applies overrides and resolves it.
pub fn load_config(path: &Path, overrides: &Overrides) -> Result<(Resolved, BandwidthProfile), CliError> {
    let config = overrides.apply(RunConfig::load(path)?);
    let resolved = config.resolve()?;
    let base = path.parent().unwrap_or(Path::new("."));
    let profile = resolved.profile(base)?;
    Ok((resolved, profile))
}

fn with_placement<T>(
    cluster: &ClusterSpec,
    plan: &ShardingPlan,
    profile: &BandwidthProfile,
    f: impl FnOnce(&dyn CollectiveCost) -> Result<T, CliError>,
) -> Result<T, CliError> {
    if cluster.topology.inter_leaf_penalty > 1.0 {
        let assignment = assign_nodes(&cluster.topology, cluster, plan).map_err(PlanError::from)?;
        f(&PlacedCost { inner: profile, topology: cluster.topology, assignment })
    } else {
        f(profile)
    }
}

fn placement_of(cluster: &ClusterSpec, plan: &ShardingPlan) -> Result<GroupAssignment, CliError> {
    Ok(assign_nodes(&cluster.topology, cluster, plan).map_err(PlanError::from)?)
}

/// Simulates one step of `plan` and summarizes it.
pub fn simulate_plan(
    model: &ModelSpec,
    cluster: &ClusterSpec,
    plan: &ShardingPlan,
    profile: &BandwidthProfile,
    cost: &CostConfig,
    sim: &SimConfig,
) -> Result<(SimulationReport, Timeline), CliError> {
    let (_, timeline) = with_placement(cluster, plan, profile, |c| Ok(simulate(model, cluster, plan, c, cost, sim)?))?;
    let flops = flops_per_step_with(model, &cost.flops);
    let report = SimulationReport {
        overlap_tier: sim.overlap_tier,
        summary: summarize(&timeline, flops, sim.peak_flops_per_gpu),
        bubbles: bubble_report(&timeline),
    };
    Ok((report, timeline))
}

/// `plan`: search for the communication-minimal feasible plan.
pub fn cmd_plan(resolved: &Resolved, profile: &BandwidthProfile) -> Result<Outcome, CliError> {
    let RunConfig { model, cost, solver, .. } = &resolved.config;
    let cluster = &resolved.cluster;
    let mut report = Report::new("plan", &resolved.config);
    let searched = solve(model, cluster, profile, cost, solver.all_candidates);

    if solver.oracle_guard > 0 {
        match brute_force_oracle(model, cluster, profile, cost, solver.oracle_guard) {
            Err(PlanError::GridTooLarge { .. }) => {}
            oracle => report.oracle = Some(OracleCheck::compare(&searched, &oracle)),
        }
    }

    let exit_code = match searched {
        Ok(search) => {
            report.placement = Some(placement_of(cluster, &search.best.plan)?);
            report.search = Some(search);
            0
        }
        Err(PlanError::Infeasible { capacity, plan, d_total, report: search }) => {
            report.infeasible = Some(InfeasibleDetail { capacity, min_memory_plan: plan, min_d_total: d_total });
            report.search = Some(*search);
            2
        }
        Err(e) => return Err(e.into()),
    };
    Ok(Outcome { report, exit_code, timeline: None })
}

/// The plan `simulate` runs: the preset, the explicit plan, or the solver's best.
fn chosen_plan(resolved: &Resolved, profile: &BandwidthProfile) -> Result<ShardingPlan, CliError> {
    let c = &resolved.config;
    if let Some(name) = c.preset {
        return Ok(preset(name, &resolved.cluster)?);
    }
    if let Some(plan) = c.plan {
        return Ok(plan);
    }
    match solve(&c.model, &resolved.cluster, profile, &c.cost, false) {
        Ok(search) => Ok(search.best.plan),
        Err(PlanError::Infeasible { report, .. }) => Ok(report.best.plan),
        Err(e) => Err(e.into()),
    }
}

/// `simulate`: play one step of a plan at the configured overlap tier.
pub fn cmd_simulate(resolved: &Resolved, profile: &BandwidthProfile) -> Result<Outcome, CliError> {
    let c = &resolved.config;
    let cluster = &resolved.cluster;
    let plan = chosen_plan(resolved, profile)?;
    // Evaluation applies the placement penalty itself.
    let evaluated = evaluate_checked(&c.model, cluster, plan, profile, &c.cost)?;
    let (simulation, timeline) = simulate_plan(&c.model, cluster, &plan, profile, &c.cost, &c.sim)?;

    let mut report = Report::new("simulate", c);
    let exit_code = if evaluated.feasible {
        0
    } else {
        report.infeasible = Some(InfeasibleDetail {
            capacity: cluster.gpu_memory_capacity,
            min_memory_plan: plan,
            min_d_total: evaluated.memory.d_total,
        });
        2
    };
    report.placement = Some(placement_of(cluster, &plan)?);
    report.evaluated = Some(evaluated);
    report.simulation = Some(simulation);
    Ok(Outcome { report, exit_code, timeline: Some(timeline) })
}

/// `compare`: every preset plus the solver's best, each simulated, sorted by
/// simulated step time. Rows without a plan go last.
pub fn cmd_compare(resolved: &Resolved, profile: &BandwidthProfile) -> Result<Outcome, CliError> {
    let c = &resolved.config;
    let cluster = &resolved.cluster;
    let mut rows = Vec::new();
    for row in compare_presets(&c.model, cluster, profile, &c.cost, &[])? {
        let simulation = match &row.result {
            Some(r) => Some(simulate_plan(&c.model, cluster, &r.plan, profile, &c.cost, &c.sim)?.0.summary),
            None => None,
        };
        rows.push(ComparisonRow {
            name: row.name,
            feasible: row.feasible,
            note: row.note,
            result: row.result,
            simulation,
        });
    }
    let key = |r: &ComparisonRow| r.simulation.as_ref().map_or(f64::INFINITY, |s| s.step_time);
    rows.sort_by(|a, b| key(a).total_cmp(&key(b)));
    let mut report = Report::new("compare", c);
    report.comparison = Some(rows);
    Ok(Outcome { report, exit_code: 0, timeline: None })
}

/// `import-profile`: CSV measurements to canonical profile JSON.
pub fn cmd_import_profile(csv: &Path) -> Result<String, CliError> {
    let profile = import_csv(csv).map_err(|e| CliError::Profile { path: csv.to_path_buf(), source: e })?;
    Ok(profile.to_json())
}

/// Writes `text` to `out`, or stdout when `out` is `None`.
pub fn emit(text: &str, out: Option<&Path>) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError::Io { path: path.to_path_buf(), source: e }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
