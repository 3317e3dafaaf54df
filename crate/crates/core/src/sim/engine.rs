//! List-scheduling executor and idle-time accounting.

use serde::{Deserialize, Serialize};

use super::{EventGraph, EventKind, SimError, COMPUTE_STREAM};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledEvent {
    pub id: usize,
    pub kind: EventKind,
    pub name: String,
    pub stream: u32,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    /// Events in the order they were started (non-decreasing start).
    pub events: Vec<ScheduledEvent>,
    pub step_time: f64,
    /// Busy seconds per stream, indexed by stream id.
    pub busy: Vec<f64>,
    /// Idle seconds within `[0, step_time]` per stream.
    pub idle: Vec<f64>,
}

impl Timeline {
    pub fn on_stream(&self, stream: u32) -> impl Iterator<Item = &ScheduledEvent> {
        self.events.iter().filter(move |e| e.stream == stream)
    }
}

/// Earliest-start list scheduling. A stream runs one event at a time; among
/// events already waiting when the stream frees up the lowest id goes first,
/// otherwise the one that becomes ready first. Across streams the earliest
/// start (then lowest id) is committed next.
pub fn simulate_step(graph: &EventGraph) -> Result<Timeline, SimError> {
    let n = graph.events.len();
    let mut dependents: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut missing = vec![0usize; n];
    for (idx, e) in graph.events.iter().enumerate() {
        for &d in &e.depends_on {
            if d >= n {
                return Err(SimError::UnknownDependency { event: e.id, dependency: d });
            }
            dependents[d].push(idx);
            missing[idx] += 1;
        }
    }
    let streams = graph.events.iter().map(|e| e.stream as usize + 1).max().unwrap_or(1);
    let mut free = vec![0.0f64; streams];
    let mut ready_at = vec![0.0f64; n];
    let mut end = vec![0.0f64; n];
    // Events whose dependencies are all scheduled, per stream.
    let mut available: Vec<Vec<usize>> = vec![Vec::new(); streams];
    for (idx, e) in graph.events.iter().enumerate() {
        if missing[idx] == 0 {
            available[e.stream as usize].push(idx);
        }
    }

    let mut scheduled = Vec::with_capacity(n);
    let mut busy = vec![0.0f64; streams];
    while scheduled.len() < n {
        let mut choice: Option<(f64, usize, usize)> = None;
        for (s, queue) in available.iter().enumerate() {
            let waiting = queue.iter().copied().filter(|&i| ready_at[i] <= free[s]).min();
            let pick = match waiting {
                Some(i) => (free[s], i),
                None => match queue.iter().copied().min_by(|&a, &b| ready_at[a].total_cmp(&ready_at[b]).then(a.cmp(&b))) {
                    Some(i) => (ready_at[i], i),
                    None => continue,
                },
            };
            let better = match choice {
                None => true,
                Some((start, id, _)) => pick.0 < start || (pick.0 == start && pick.1 < id),
            };
            if better {
                choice = Some((pick.0, pick.1, s));
            }
        }
        let Some((start, idx, s)) = choice else {
            return Err(SimError::Cycle { remaining: n - scheduled.len() });
        };
        available[s].retain(|&i| i != idx);
        let e = &graph.events[idx];
        end[idx] = start + e.duration;
        free[s] = end[idx];
        busy[s] += e.duration;
        scheduled.push(ScheduledEvent { id: e.id, kind: e.kind, name: e.name(), stream: e.stream, start, end: end[idx] });
        for &next in &dependents[idx] {
            ready_at[next] = ready_at[next].max(end[idx]);
            missing[next] -= 1;
            if missing[next] == 0 {
                available[graph.events[next].stream as usize].push(next);
            }
        }
    }

    let step_time = end.iter().copied().fold(0.0, f64::max);
    let idle = busy.iter().map(|b| (step_time - b).max(0.0)).collect();
    Ok(Timeline { events: scheduled, step_time, busy, idle })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamBubbles {
    pub stream: u32,
    pub busy: f64,
    pub idle: f64,
    /// Idle `[start, end)` intervals within the step.
    pub intervals: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BubbleReport {
    pub step_time: f64,
    pub compute_idle: f64,
    pub streams: Vec<StreamBubbles>,
}

pub fn bubble_report(timeline: &Timeline) -> BubbleReport {
    let mut streams = Vec::new();
    for (s, &busy) in timeline.busy.iter().enumerate() {
        let mut intervals = Vec::new();
        let mut cursor = 0.0;
        for e in timeline.on_stream(s as u32) {
            if e.start > cursor {
                intervals.push((cursor, e.start));
            }
            cursor = f64::max(cursor, e.end);
        }
        if timeline.step_time > cursor {
            intervals.push((cursor, timeline.step_time));
        }
        streams.push(StreamBubbles { stream: s as u32, busy, idle: timeline.idle[s], intervals });
    }
    let compute_idle = streams.iter().find(|b| b.stream == COMPUTE_STREAM).map_or(0.0, |b| b.idle);
    BubbleReport { step_time: timeline.step_time, compute_idle, streams }
}

/// Step-level figures for reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub step_time: f64,
    pub compute_busy: f64,
    pub compute_idle: f64,
    /// Busy seconds per communication stream, in stream order.
    pub comm_busy: Vec<f64>,
    pub event_count: usize,
    pub flops_per_step: f64,
    /// Utilization of the simulated rank's GPU.
    pub mfu: f64,
}

/// `flops` is the model FLOPs of one rank's step.
pub fn summarize(timeline: &Timeline, flops: f64, peak_flops_per_gpu: f64) -> SimSummary {
    let compute_busy = timeline.busy.first().copied().unwrap_or(0.0);
    let mfu = if timeline.step_time > 0.0 {
        crate::cost::mfu(flops, timeline.step_time, peak_flops_per_gpu, 1)
    } else {
        0.0
    };
    SimSummary {
        step_time: timeline.step_time,
        compute_busy,
        compute_idle: timeline.idle.first().copied().unwrap_or(0.0),
        comm_busy: timeline.busy.iter().skip(1).copied().collect(),
        event_count: timeline.events.len(),
        flops_per_step: flops,
        mfu,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_graph() {
        let t = simulate_step(&EventGraph::new()).unwrap();
        assert_eq!(t.step_time, 0.0);
        assert_eq!(bubble_report(&t).compute_idle, 0.0);
    }

    #[test]
    fn serial_chain_sums() {
        let mut g = EventGraph::new();
        let a = g.push(EventKind::FwdCompute, 1.0, 0, vec![]);
        let b = g.push(EventKind::Allgather, 2.0, 1, vec![a]);
        g.push(EventKind::FwdCompute, 3.0, 0, vec![b]);
        let t = simulate_step(&g).unwrap();
        assert_eq!(t.step_time, 6.0);
        let bubbles = bubble_report(&t);
        assert_eq!(bubbles.compute_idle, 2.0);
        assert_eq!(bubbles.streams[0].intervals, vec![(1.0, 3.0)]);
    }

    #[test]
    fn parallel_streams_take_the_max() {
        let mut g = EventGraph::new();
        g.push(EventKind::FwdCompute, 4.0, 0, vec![]);
        g.push(EventKind::Allgather, 7.0, 1, vec![]);
        assert_eq!(simulate_step(&g).unwrap().step_time, 7.0);
    }

    #[test]
    fn fifo_by_id_on_a_shared_stream() {
        let mut g = EventGraph::new();
        let late = g.push(EventKind::Allgather, 1.0, 1, vec![]);
        let early = g.push(EventKind::Allgather, 1.0, 1, vec![]);
        let t = simulate_step(&g).unwrap();
        assert_eq!(t.events[0].id, late);
        assert_eq!(t.events[1].id, early);
        assert_eq!(t.events[1].start, 1.0);
    }

    #[test]
    fn cycles_and_dangling_edges_are_errors() {
        let mut g = EventGraph::new();
        g.push(EventKind::FwdCompute, 1.0, 0, vec![1]);
        g.push(EventKind::FwdCompute, 1.0, 0, vec![0]);
        assert!(matches!(simulate_step(&g), Err(SimError::Cycle { remaining: 2 })));
        let mut g = EventGraph::new();
        g.push(EventKind::FwdCompute, 1.0, 0, vec![5]);
        assert!(matches!(simulate_step(&g), Err(SimError::UnknownDependency { .. })));
    }
}
