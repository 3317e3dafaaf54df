//! JSON report written by every command, plus a human-readable rendering
//! for `--pretty`. JSON numbers are plain SI scalars: bytes and seconds.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use shardplan_core::placement::GroupAssignment;
use shardplan_core::planner::{PlanError, PlanResult, SearchReport};
use shardplan_core::sim::{BubbleReport, SimSummary};
use shardplan_core::{OverlapTier, ShardingPlan};

use crate::RunConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfeasibleDetail {
    /// GPU memory capacity in bytes.
    pub capacity: f64,
    /// The plan with the smallest footprint (or the simulated plan).
    pub min_memory_plan: ShardingPlan,
    pub min_d_total: f64,
}

/// Agreement of the solver with the unfiltered brute-force search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCheck {
    pub agrees: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_plan: Option<ShardingPlan>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_total: Option<f64>,
}

impl OracleCheck {
    pub fn compare(solver: &Result<SearchReport, PlanError>, oracle: &Result<SearchReport, PlanError>) -> Self {
        let best = |r: &Result<SearchReport, PlanError>| match r {
            Ok(s) => Some((s.best.plan, s.best.time.total, true)),
            Err(PlanError::Infeasible { report, .. }) => Some((report.best.plan, report.best.time.total, false)),
            Err(_) => None,
        };
        let (a, b) = (best(solver), best(oracle));
        OracleCheck { agrees: a.is_some() && a == b, oracle_plan: b.map(|x| x.0), oracle_total: b.map(|x| x.1) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub overlap_tier: OverlapTier,
    pub summary: SimSummary,
    pub bubbles: BubbleReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub feasible: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub result: Option<PlanResult>,
    pub simulation: Option<SimSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// The resolved config; feeding it back reproduces this report.
    pub config: RunConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search: Option<SearchReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleCheck>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub infeasible: Option<InfeasibleDetail>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluated: Option<PlanResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub placement: Option<GroupAssignment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparison: Option<Vec<ComparisonRow>>,
}

impl Report {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Report {
            tool: "shardplan".to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config: config.clone(),
            search: None,
            oracle: None,
            infeasible: None,
            evaluated: None,
            placement: None,
            simulation: None,
            comparison: None,
        }
    }

    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("report serializes");
        out.push('\n');
        out
    }

    /// Human-readable summary with scaled units.
    pub fn to_pretty(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "shardplan {} ({})", self.version, self.command);
        if let Some(search) = &self.search {
            let _ = writeln!(
                s,
                "candidates: {} evaluated, {} filtered",
                search.candidates_evaluated, search.candidates_filtered
            );
            push_result(&mut s, "best", &search.best);
        }
        if let Some(o) = &self.oracle {
            let _ = writeln!(s, "oracle check: {}", if o.agrees { "agrees" } else { "DISAGREES" });
        }
        if let Some(i) = &self.infeasible {
            let _ = writeln!(
                s,
                "INFEASIBLE: capacity {}, smallest footprint {} needs {}",
                bytes(i.capacity),
                i.min_memory_plan,
                bytes(i.min_d_total)
            );
        }
        if let Some(r) = &self.evaluated {
            push_result(&mut s, "plan", r);
        }
        if let Some(sim) = &self.simulation {
            let m = &sim.summary;
            let _ = writeln!(
                s,
                "simulated step ({}): {}, compute idle {}, MFU {:.1}%",
                sim.overlap_tier.as_str(),
                seconds(m.step_time),
                seconds(m.compute_idle),
                100.0 * m.mfu
            );
        }
        if let Some(rows) = &self.comparison {
            let _ = writeln!(s, "{:<10} {:>12} {:>12} {:>8} {:>10}  plan", "name", "comm", "step", "MFU", "memory");
            for row in rows {
                let (comm, mem, plan) = match &row.result {
                    Some(r) => (seconds(r.time.total), bytes(r.memory.d_total), r.plan.to_string()),
                    None => ("-".into(), "-".into(), row.note.clone().unwrap_or_default()),
                };
                let (step, mfu) = match &row.simulation {
                    Some(m) => (seconds(m.step_time), format!("{:.1}%", 100.0 * m.mfu)),
                    None => ("-".into(), "-".into()),
                };
                let flag = if row.feasible { "" } else { " (infeasible)" };
                let _ = writeln!(s, "{:<10} {comm:>12} {step:>12} {mfu:>8} {mem:>10}  {plan}{flag}", row.name);
            }
        }
        s
    }
}

fn push_result(s: &mut String, label: &str, r: &PlanResult) {
    let t = &r.time;
    let m = &r.memory;
    let _ = writeln!(s, "{label}: {}", r.plan);
    let _ = writeln!(
        s,
        "  comm {} (P {}, G {}, OS allreduce {}, OS broadcast {})",
        seconds(t.total),
        seconds(t.t_p),
        seconds(t.t_g),
        seconds(t.t_os_allreduce),
        seconds(t.t_os_broadcast)
    );
    let _ = writeln!(
        s,
        "  memory {} (model states {}, activations {}, buffers {}){}",
        bytes(m.d_total),
        bytes(m.d_modelstate),
        bytes(m.d_activation),
        bytes(m.d_tmp),
        if r.feasible { "" } else { " exceeds capacity" }
    );
}

fn bytes(b: f64) -> String {
    format!("{:.2} GB", b / 1e9)
}

fn seconds(t: f64) -> String {
    if t >= 1.0 {
        format!("{t:.3} s")
    } else {
        format!("{:.3} ms", t * 1e3)
    }
}
