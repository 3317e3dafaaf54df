mod common;

use common::{check_golden, fixture, shardplan};
use shardplan_core::comm::calibrated_profile;

#[test]
fn shipped_calibrated_profile_is_current() {
    let path = fixture("profiles/calibrated_a800.json");
    let generated = calibrated_profile().to_json();
    if std::env::var_os("SHARDPLAN_BLESS").is_some() {
        std::fs::write(&path, &generated).unwrap();
    }
    assert_eq!(std::fs::read_to_string(&path).unwrap(), generated);
}

#[test]
fn tiny_plan_report() {
    let run = shardplan(&["plan", "--config", "fixtures/configs/tiny.json"]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    check_golden("tiny_plan.json", &run.stdout).unwrap();
}

#[test]
fn tiny_simulation_report_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.json");
    let run = shardplan(&["simulate", "--config", "fixtures/configs/tiny.json", "--trace", trace.to_str().unwrap()]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    check_golden("tiny_simulate.json", &run.stdout).unwrap();
    check_golden("tiny_trace.json", &std::fs::read_to_string(trace).unwrap()).unwrap();
}

#[test]
fn llama7b_comparison_report() {
    let run = shardplan(&["compare", "--config", "fixtures/configs/llama7b_1024.json"]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    check_golden("llama7b_1024_compare.json", &run.stdout).unwrap();
}
