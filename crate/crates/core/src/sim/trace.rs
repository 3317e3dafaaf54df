//! Trace Event Format export: one complete ("X") event per scheduled event,
//! microsecond timestamps, one thread row per stream.

use std::path::Path;

use serde_json::{json, Number, Value};

use super::Timeline;

/// Seconds to microseconds, rounded to the nanosecond so that values such as
/// 1 ms print as `1000` rather than `1000.0000000000001`.
fn micros(seconds: f64) -> Value {
    let ns = (seconds * 1e9).round();
    if ns % 1000.0 == 0.0 && ns.abs() < 9.0e15 {
        Value::Number(Number::from((ns / 1000.0) as i64))
    } else {
        Number::from_f64(ns / 1000.0).map_or(Value::Null, Value::Number)
    }
}

pub fn trace_json(timeline: &Timeline) -> String {
    let events: Vec<Value> = timeline
        .events
        .iter()
        .map(|e| {
            json!({
                "name": e.name,
                "ph": "X",
                "ts": micros(e.start),
                "dur": micros(e.end - e.start),
                "pid": 1,
                "tid": e.stream,
            })
        })
        .collect();
    let mut out = serde_json::to_string_pretty(&Value::Array(events)).expect("trace serializes");
    out.push('\n');
    out
}

pub fn export_trace(timeline: &Timeline, path: &Path) -> std::io::Result<()> {
    std::fs::write(path, trace_json(timeline))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{simulate_step, EventGraph, EventKind};

    #[test]
    fn one_millisecond_event() {
        let mut g = EventGraph::new();
        g.push(EventKind::FwdCompute, 1e-3, 0, vec![]);
        g.push(EventKind::Allgather, 2.5e-6, 2, vec![]);
        let text = trace_json(&simulate_step(&g).unwrap());
        let v: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v[0]["ts"], json!(0));
        assert_eq!(v[0]["dur"], json!(1000));
        assert_eq!(v[0]["ph"], json!("X"));
        assert_eq!(v[1]["tid"], json!(2));
        assert_eq!(v[1]["dur"], json!(2.5));
    }
}
