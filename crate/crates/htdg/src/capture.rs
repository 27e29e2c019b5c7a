//! Device-flow scheduling: explicit device graphs, stream-capture graphs,
//! the levelize + round-robin transformation into a [`StreamSchedule`], and a
//! deterministic discrete-event simulator that stands in for a multi-stream
//! device.
//!
//! The transformation levelizes the op graph (level = longest path from a
//! source), assigns each op an id equal to its index within its level, maps
//! it to stream `id % max_streams`, and connects cross-stream dependencies
//! with record/wait event pairs. Same-stream dependencies need no events:
//! streams execute their op list in FIFO order.

use std::collections::VecDeque;
use std::sync::Mutex;

use crate::error::ScheduleError;

/// Index of an op within one device graph.
pub type OpId = usize;

/// What an op does on the simulated device.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    /// Memory transfer.
    Copy,
    /// Compute kernel with known parameters.
    Kernel,
    /// Opaque stream-style call captured from a third-party API.
    Opaque,
}

pub(crate) struct DeviceOp {
    pub(crate) kind: OpKind,
    pub(crate) label: String,
    pub(crate) payload: Mutex<Box<dyn FnMut() + Send>>,
}

/// An explicit device-side task graph: ops with known kinds plus dependency
/// edges. Built inside a device-flow task's closure.
///
/// Builder misuse (unknown op id, duplicate edge) panics; cycles are legal to
/// build and are reported by [`levelize`]/[`make_schedule`].
#[derive(Default)]
pub struct DeviceGraph {
    pub(crate) ops: Vec<DeviceOp>,
    pub(crate) edges: Vec<(OpId, OpId)>,
}

impl DeviceGraph {
    pub fn new() -> Self {
        Self::default()
    }

    fn add(&mut self, kind: OpKind, label: &str, payload: impl FnMut() + Send + 'static) -> OpId {
        let id = self.ops.len();
        self.ops.push(DeviceOp {
            kind,
            label: label.to_string(),
            payload: Mutex::new(Box::new(payload)),
        });
        id
    }

    /// Adds a memory-transfer op.
    pub fn copy(&mut self, label: &str, payload: impl FnMut() + Send + 'static) -> OpId {
        self.add(OpKind::Copy, label, payload)
    }

    /// Adds a kernel op.
    pub fn kernel(&mut self, label: &str, payload: impl FnMut() + Send + 'static) -> OpId {
        self.add(OpKind::Kernel, label, payload)
    }

    /// Adds an opaque stream-call op.
    pub fn opaque(&mut self, label: &str, payload: impl FnMut() + Send + 'static) -> OpId {
        self.add(OpKind::Opaque, label, payload)
    }

    /// Declares that `from` must complete before `to` starts.
    pub fn precede(&mut self, from: OpId, to: &[OpId]) {
        assert!(from < self.ops.len(), "unknown device op {from}");
        for &t in to {
            assert!(t < self.ops.len(), "unknown device op {t}");
            assert!(
                !self.edges.contains(&(from, t)),
                "duplicate device edge {from} -> {t}"
            );
            self.edges.push((from, t));
        }
    }

    /// Declares that `to` starts only after every op in `from` (mirror of
    /// `precede`).
    pub fn succeed(&mut self, to: OpId, from: &[OpId]) {
        for &f in from {
            self.precede(f, &[to]);
        }
    }

    pub fn op_count(&self) -> usize {
        self.ops.len()
    }

    pub fn label(&self, op: OpId) -> Option<&str> {
        self.ops.get(op).map(|o| o.label.as_str())
    }

    pub fn op_kind(&self, op: OpId) -> Option<OpKind> {
        self.ops.get(op).map(|o| o.kind)
    }

    pub fn edges(&self) -> &[(OpId, OpId)] {
        &self.edges
    }

    pub(crate) fn invoke_payload(&self, op: OpId) {
        (self.ops[op].payload.lock().unwrap())()
    }
}

/// A device graph captured from opaque stream-style calls: every op is
/// [`OpKind::Opaque`]. Scheduling treats it exactly like a [`DeviceGraph`].
#[derive(Default)]
pub struct CapturedGraph {
    inner: DeviceGraph,
}

impl CapturedGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Captures one opaque stream call.
    pub fn on(&mut self, label: &str, payload: impl FnMut() + Send + 'static) -> OpId {
        self.inner.opaque(label, payload)
    }

    pub fn precede(&mut self, from: OpId, to: &[OpId]) {
        self.inner.precede(from, to)
    }

    pub fn succeed(&mut self, to: OpId, from: &[OpId]) {
        self.inner.succeed(to, from)
    }

    pub fn op_count(&self) -> usize {
        self.inner.op_count()
    }
}

impl AsRef<DeviceGraph> for CapturedGraph {
    fn as_ref(&self) -> &DeviceGraph {
        &self.inner
    }
}

impl AsRef<DeviceGraph> for DeviceGraph {
    fn as_ref(&self) -> &DeviceGraph {
        self
    }
}

/// Output of [`levelize`]: per-op level and within-level id, plus the ops of
/// each level in id order.
#[derive(Debug, Clone)]
pub struct LevelTable {
    pub level: Vec<usize>,
    pub id_in_level: Vec<usize>,
    pub levels: Vec<Vec<OpId>>,
}

/// Levelizes an acyclic op graph: sources sit at level 0, every other op at
/// one past its deepest predecessor. Within a level, ids follow op-insertion
/// order.
pub fn levelize(graph: impl AsRef<DeviceGraph>) -> Result<LevelTable, ScheduleError> {
    let g = graph.as_ref();
    let n = g.ops.len();
    let mut indegree = vec![0usize; n];
    let mut succs: Vec<Vec<OpId>> = vec![Vec::new(); n];
    for &(u, v) in &g.edges {
        indegree[v] += 1;
        succs[u].push(v);
    }

    let mut level = vec![0usize; n];
    let mut frontier: Vec<OpId> = (0..n).filter(|&i| indegree[i] == 0).collect();
    frontier.sort_unstable();
    let mut levels: Vec<Vec<OpId>> = Vec::new();
    let mut visited = 0usize;
    while !frontier.is_empty() {
        let depth = levels.len();
        let mut next: Vec<OpId> = Vec::new();
        for &u in &frontier {
            level[u] = depth;
            visited += 1;
            for &v in &succs[u] {
                indegree[v] -= 1;
                if indegree[v] == 0 {
                    next.push(v);
                }
            }
        }
        levels.push(frontier);
        next.sort_unstable();
        frontier = next;
    }
    if visited != n {
        return Err(ScheduleError::CycleDetected);
    }

    let mut id_in_level = vec![0usize; n];
    for ops in &levels {
        for (i, &op) in ops.iter().enumerate() {
            id_in_level[op] = i;
        }
    }
    Ok(LevelTable {
        level,
        id_in_level,
        levels,
    })
}

/// A cross-stream dependency: an event recorded after `record` is waited on
/// before `wait` starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventPair {
    pub record: OpId,
    pub wait: OpId,
}

/// Per-op placement in a [`StreamSchedule`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OpAssignment {
    pub level: usize,
    pub id: usize,
    pub stream: usize,
}

/// The stream-schedule form of a device graph: ordered per-stream op lists
/// plus record/wait event pairs for every cross-stream edge.
#[derive(Debug, Clone)]
pub struct StreamSchedule {
    pub max_streams: usize,
    /// `streams[k]` lists the ops of stream `k` in issue order.
    pub streams: Vec<Vec<OpId>>,
    /// One pair per cross-stream edge, in emission order.
    pub events: Vec<EventPair>,
    pub assign: Vec<OpAssignment>,
    labels: Vec<String>,
}

impl StreamSchedule {
    pub fn stream_of(&self, op: OpId) -> usize {
        self.assign[op].stream
    }

    pub fn op_count(&self) -> usize {
        self.assign.len()
    }

    /// Streams that actually hold ops.
    pub fn streams_used(&self) -> usize {
        self.streams.iter().filter(|s| !s.is_empty()).count()
    }

    /// Byte-stable text form: per-stream op lists, then event pairs sorted
    /// lexicographically.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (k, ops) in self.streams.iter().enumerate() {
            let names: Vec<&str> = ops.iter().map(|&o| self.labels[o].as_str()).collect();
            out.push_str(&format!("S{k}: {}\n", names.join(",")));
        }
        let mut lines: Vec<String> = self
            .events
            .iter()
            .map(|e| format!("E: {}->{}", self.labels[e.record], self.labels[e.wait]))
            .collect();
        lines.sort();
        for line in lines {
            out.push_str(&line);
            out.push('\n');
        }
        out
    }
}

/// Transforms an op graph into a [`StreamSchedule`] with at most
/// `max_streams` streams, walking levels in ascending order and assigning
/// each op the stream `id % max_streams`.
pub fn make_schedule(
    graph: impl AsRef<DeviceGraph>,
    max_streams: usize,
) -> Result<StreamSchedule, ScheduleError> {
    assert!(max_streams >= 1, "max_streams must be positive");
    let g = graph.as_ref();
    let table = levelize(g)?;
    let n = g.ops.len();

    let mut preds: Vec<Vec<OpId>> = vec![Vec::new(); n];
    for &(u, v) in &g.edges {
        preds[v].push(u);
    }

    let mut streams: Vec<Vec<OpId>> = vec![Vec::new(); max_streams];
    let mut events = Vec::new();
    let mut assign = vec![
        OpAssignment {
            level: 0,
            id: 0,
            stream: 0
        };
        n
    ];
    for ops in &table.levels {
        for &t in ops {
            let stream = table.id_in_level[t] % max_streams;
            assign[t] = OpAssignment {
                level: table.level[t],
                id: table.id_in_level[t],
                stream,
            };
            // Wait on every cross-stream predecessor's recorded event. The
            // predecessor's stream is known ahead of time from the id
            // arithmetic; same-stream edges ride on FIFO order instead.
            for &p in &preds[t] {
                if table.id_in_level[p] % max_streams != stream {
                    events.push(EventPair { record: p, wait: t });
                }
            }
            streams[stream].push(t);
        }
    }

    Ok(StreamSchedule {
        max_streams,
        streams,
        events,
        assign,
        labels: g.ops.iter().map(|o| o.label.clone()).collect(),
    })
}

/// One op completion in a [`SimTrace`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimEntry {
    pub op: OpId,
    pub stream: usize,
    pub start: u64,
    pub finish: u64,
}

/// Completion trace of a simulated schedule execution, ordered by finish
/// time (ties broken by stream then op id).
#[derive(Debug, Clone)]
pub struct SimTrace {
    pub entries: Vec<SimEntry>,
    pub makespan: u64,
}

impl SimTrace {
    pub fn start_of(&self, op: OpId) -> Option<u64> {
        self.entries.iter().find(|e| e.op == op).map(|e| e.start)
    }

    pub fn finish_of(&self, op: OpId) -> Option<u64> {
        self.entries.iter().find(|e| e.op == op).map(|e| e.finish)
    }
}

/// Runs a schedule on the simulated device: each stream executes its list in
/// order; an op starts once its stream is free and all its wait-events have
/// been released; a record-event releases when its op completes. Virtual
/// time is integer; `latency` must be positive.
pub fn simulate(
    schedule: &StreamSchedule,
    latency: impl Fn(OpId) -> u64,
) -> Result<SimTrace, ScheduleError> {
    let n = schedule.op_count();
    let mut waits_on: Vec<Vec<OpId>> = vec![Vec::new(); n];
    for e in &schedule.events {
        waits_on[e.wait].push(e.record);
    }

    let mut finish: Vec<Option<u64>> = vec![None; n];
    let mut cursor = vec![0u64; schedule.streams.len()];
    let mut next_idx = vec![0usize; schedule.streams.len()];
    let mut entries = Vec::with_capacity(n);
    let mut remaining: usize = schedule.streams.iter().map(|s| s.len()).sum();

    while remaining > 0 {
        let mut progressed = false;
        for (s, ops) in schedule.streams.iter().enumerate() {
            while next_idx[s] < ops.len() {
                let op = ops[next_idx[s]];
                let mut ready_at = cursor[s];
                let mut ready = true;
                for &rec in &waits_on[op] {
                    match finish[rec] {
                        Some(f) => ready_at = ready_at.max(f),
                        None => {
                            ready = false;
                            break;
                        }
                    }
                }
                if !ready {
                    break;
                }
                let lat = latency(op).max(1);
                let done = ready_at + lat;
                finish[op] = Some(done);
                cursor[s] = done;
                entries.push(SimEntry {
                    op,
                    stream: s,
                    start: ready_at,
                    finish: done,
                });
                next_idx[s] += 1;
                remaining -= 1;
                progressed = true;
            }
        }
        if !progressed {
            return Err(ScheduleError::Deadlock);
        }
    }

    entries.sort_by_key(|e| (e.finish, e.stream, e.op));
    let makespan = entries.last().map(|e| e.finish).unwrap_or(0);
    Ok(SimTrace { entries, makespan })
}

/// Schedules, simulates, and invokes each op's payload in completion order.
/// This is the execution path device-flow tasks take inside the executor.
pub fn run_device_graph(
    graph: impl AsRef<DeviceGraph>,
    max_streams: usize,
) -> Result<SimTrace, ScheduleError> {
    let g = graph.as_ref();
    let schedule = make_schedule(g, max_streams)?;
    let trace = simulate(&schedule, |_| 1)?;
    for entry in &trace.entries {
        g.invoke_payload(entry.op);
    }
    Ok(trace)
}

/// Checks the three schedule invariants against its source graph; used by
/// tests and the acceptance suite. Returns a description of the first
/// violation, if any.
pub fn check_schedule_invariants(
    graph: impl AsRef<DeviceGraph>,
    schedule: &StreamSchedule,
) -> Result<(), String> {
    let g = graph.as_ref();
    let n = g.ops.len();

    // Every op in exactly one stream, at stream id % max_streams.
    let mut seen = vec![0usize; n];
    for (s, ops) in schedule.streams.iter().enumerate() {
        for &op in ops {
            seen[op] += 1;
            if schedule.assign[op].stream != s {
                return Err(format!("op {op} listed in stream {s} but assigned elsewhere"));
            }
        }
    }
    for (op, &count) in seen.iter().enumerate() {
        if count != 1 {
            return Err(format!("op {op} appears in {count} stream slots"));
        }
        let a = schedule.assign[op];
        if a.stream != a.id % schedule.max_streams {
            return Err(format!("op {op} stream {} != id {} mod {}", a.stream, a.id, schedule.max_streams));
        }
    }

    // Position of each op within its stream list.
    let mut pos = vec![0usize; n];
    for ops in &schedule.streams {
        for (i, &op) in ops.iter().enumerate() {
            pos[op] = i;
        }
    }

    // Every edge is either same-stream FIFO-ordered, or carried by exactly
    // one event pair; events exist only for cross-stream edges.
    for &(p, t) in &g.edges {
        let same = schedule.assign[p].stream == schedule.assign[t].stream;
        let paired = schedule
            .events
            .iter()
            .filter(|e| e.record == p && e.wait == t)
            .count();
        if same {
            if pos[p] >= pos[t] {
                return Err(format!("edge {p}->{t} not ordered within stream"));
            }
            if paired != 0 {
                return Err(format!("same-stream edge {p}->{t} carries an event"));
            }
        } else if paired != 1 {
            return Err(format!("cross-stream edge {p}->{t} has {paired} event pairs"));
        }
    }
    if schedule.events.len()
        != g.edges
            .iter()
            .filter(|&&(p, t)| schedule.assign[p].stream != schedule.assign[t].stream)
            .count()
    {
        return Err("spurious event pairs beyond cross-stream edges".into());
    }
    Ok(())
}

/// Checks that a simulation preserved every dependency of the source graph.
pub fn check_dependency_preservation(
    graph: impl AsRef<DeviceGraph>,
    trace: &SimTrace,
) -> Result<(), String> {
    let g = graph.as_ref();
    let mut start = vec![0u64; g.ops.len()];
    let mut finish = vec![0u64; g.ops.len()];
    for e in &trace.entries {
        start[e.op] = e.start;
        finish[e.op] = e.finish;
    }
    for &(p, t) in &g.edges {
        if finish[p] > start[t] {
            return Err(format!(
                "edge {p}->{t} broken: finish({p})={} > start({t})={}",
                finish[p], start[t]
            ));
        }
    }
    Ok(())
}

/// The worked two-stream example: ops A..E with edges A->C, A->D, B->D, B->E.
#[cfg(test)]
fn two_level_example() -> DeviceGraph {
    let mut g = DeviceGraph::new();
    let a = g.opaque("A", || {});
    let b = g.opaque("B", || {});
    let c = g.opaque("C", || {});
    let d = g.opaque("D", || {});
    let e = g.opaque("E", || {});
    g.precede(a, &[c, d]);
    g.precede(b, &[d, e]);
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::VecDeque;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    use rand::RngCore;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn levelize_two_level_example() {
        let g = two_level_example();
        let t = levelize(&g).unwrap();
        assert_eq!(t.level, vec![0, 0, 1, 1, 1]);
        assert_eq!(t.id_in_level, vec![0, 1, 0, 1, 2]);
        assert_eq!(t.levels, vec![vec![0, 1], vec![2, 3, 4]]);
    }

    #[test]
    fn levelize_single_node_and_chain() {
        let mut g = DeviceGraph::new();
        g.opaque("only", || {});
        let t = levelize(&g).unwrap();
        assert_eq!((t.level[0], t.id_in_level[0]), (0, 0));

        let mut chain = DeviceGraph::new();
        let ops: Vec<OpId> = (0..5).map(|i| chain.opaque(&format!("n{i}"), || {})).collect();
        for w in ops.windows(2) {
            chain.precede(w[0], &[w[1]]);
        }
        let t = levelize(&chain).unwrap();
        assert_eq!(t.level, vec![0, 1, 2, 3, 4]);
        assert!(t.id_in_level.iter().all(|&id| id == 0));
    }

    #[test]
    fn levelize_detects_cycle() {
        let mut g = DeviceGraph::new();
        let a = g.opaque("a", || {});
        let b = g.opaque("b", || {});
        g.precede(a, &[b]);
        g.precede(b, &[a]);
        assert!(matches!(levelize(&g), Err(ScheduleError::CycleDetected)));
        assert!(matches!(
            make_schedule(&g, 2),
            Err(ScheduleError::CycleDetected)
        ));
    }

    #[test]
    fn schedule_two_level_example_two_streams() {
        let g = two_level_example();
        let s = make_schedule(&g, 2).unwrap();
        // A,C,E round-robin to stream 0; B,D to stream 1.
        assert_eq!(s.streams[0], vec![0, 2, 4]);
        assert_eq!(s.streams[1], vec![1, 3]);
        // Exactly the two cross-stream dependencies carry events.
        assert_eq!(
            s.events,
            vec![
                EventPair { record: 0, wait: 3 }, // A->D
                EventPair { record: 1, wait: 4 }, // B->E
            ]
        );
        check_schedule_invariants(&g, &s).unwrap();
    }

    #[test]
    fn schedule_dump_golden() {
        let g = two_level_example();
        let s = make_schedule(&g, 2).unwrap();
        assert_eq!(s.dump(), "S0: A,C,E\nS1: B,D\nE: A->D\nE: B->E\n");
    }

    #[test]
    fn single_stream_is_topological_with_no_events() {
        let g = two_level_example();
        let s = make_schedule(&g, 1).unwrap();
        assert_eq!(s.streams_used(), 1);
        assert!(s.events.is_empty());
        check_schedule_invariants(&g, &s).unwrap();
        // The single list is a topological order.
        let order = &s.streams[0];
        let position = |op: OpId| order.iter().position(|&o| o == op).unwrap();
        for &(p, t) in g.edges() {
            assert!(position(p) < position(t));
        }
    }

    #[test]
    fn diamond_events_follow_id_arithmetic() {
        let mut g = DeviceGraph::new();
        let a = g.opaque("A", || {});
        let b = g.opaque("B", || {});
        let c = g.opaque("C", || {});
        let d = g.opaque("D", || {});
        g.precede(a, &[b, c]);
        g.precede(b, &[d]);
        g.precede(c, &[d]);
        let s = make_schedule(&g, 2).unwrap();
        // Levels: A@0 id0 -> s0; B,C@1 ids 0,1 -> s0,s1; D@2 id0 -> s0.
        assert_eq!(
            s.events,
            vec![
                EventPair { record: a, wait: c },
                EventPair { record: c, wait: d },
            ]
        );
        check_schedule_invariants(&g, &s).unwrap();
    }

    #[test]
    fn simulate_preserves_edges_and_sums_single_stream() {
        let g = two_level_example();
        for streams in [1, 2, 4, 8] {
            let s = make_schedule(&g, streams).unwrap();
            let trace = simulate(&s, |_| 1).unwrap();
            check_dependency_preservation(&g, &trace).unwrap();
        }
        let s1 = make_schedule(&g, 1).unwrap();
        let trace = simulate(&s1, |op| (op as u64) + 1).unwrap();
        assert_eq!(trace.makespan, (1..=5).sum::<u64>());
    }

    #[test]
    fn independent_ops_run_in_parallel() {
        let mut g = DeviceGraph::new();
        g.opaque("x", || {});
        g.opaque("y", || {});
        let wide = simulate(&make_schedule(&g, 2).unwrap(), |_| 1).unwrap();
        let narrow = simulate(&make_schedule(&g, 1).unwrap(), |_| 1).unwrap();
        assert_eq!(wide.makespan, 1);
        assert_eq!(narrow.makespan, 2);
    }

    #[test]
    fn makespan_monotone_in_stream_count() {
        let mut g = DeviceGraph::new();
        for i in 0..16 {
            g.opaque(&format!("op{i}"), || {});
        }
        let mut prev = u64::MAX;
        for streams in [1, 2, 4, 8] {
            let trace = simulate(&make_schedule(&g, streams).unwrap(), |_| 1).unwrap();
            assert!(trace.makespan <= prev);
            prev = trace.makespan;
        }
    }

    #[test]
    fn malformed_schedule_deadlocks() {
        // Hand-built: two streams waiting on each other's never-recorded order.
        let schedule = StreamSchedule {
            max_streams: 2,
            streams: vec![vec![0], vec![1]],
            events: vec![
                EventPair { record: 1, wait: 0 },
                EventPair { record: 0, wait: 1 },
            ],
            assign: vec![
                OpAssignment { level: 0, id: 0, stream: 0 },
                OpAssignment { level: 0, id: 1, stream: 1 },
            ],
            labels: vec!["a".into(), "b".into()],
        };
        assert!(matches!(
            simulate(&schedule, |_| 1),
            Err(ScheduleError::Deadlock)
        ));
    }

    #[test]
    fn empty_graph_is_a_noop() {
        let g = DeviceGraph::new();
        let s = make_schedule(&g, 4).unwrap();
        let trace = simulate(&s, |_| 1).unwrap();
        assert_eq!(trace.makespan, 0);
        assert!(trace.entries.is_empty());
        run_device_graph(&g, 4).unwrap();
    }

    #[test]
    fn run_device_graph_invokes_payloads_in_dependency_order() {
        // Two copies feed a kernel which feeds two copies.
        let hits = Arc::new(AtomicUsize::new(0));
        let seen_at = |hits: &Arc<AtomicUsize>| {
            let hits = Arc::clone(hits);
            move || {
                hits.fetch_add(1, Ordering::SeqCst);
            }
        };
        let mut g = DeviceGraph::new();
        let h2d_x = g.copy("h2d_x", seen_at(&hits));
        let h2d_y = g.copy("h2d_y", seen_at(&hits));
        let kernel = {
            let hits = Arc::clone(&hits);
            g.kernel("kernel", move || {
                // Both inputs must have run.
                assert!(hits.load(Ordering::SeqCst) >= 2);
                hits.fetch_add(1, Ordering::SeqCst);
            })
        };
        let d2h_x = g.copy("d2h_x", seen_at(&hits));
        let d2h_y = g.copy("d2h_y", seen_at(&hits));
        g.succeed(kernel, &[h2d_x, h2d_y]);
        g.precede(kernel, &[d2h_x, d2h_y]);
        run_device_graph(&g, 2).unwrap();
        assert_eq!(hits.load(Ordering::SeqCst), 5);
    }

    #[test]
    fn capturer_builds_opaque_ops_only() {
        let mut c = CapturedGraph::new();
        let a = c.on("a", || {});
        let b = c.on("b", || {});
        c.precede(a, &[b]);
        let g: &DeviceGraph = c.as_ref();
        assert!(g.ops.iter().all(|o| o.kind == OpKind::Opaque));
        let s = make_schedule(&c, 2).unwrap();
        check_schedule_invariants(&c, &s).unwrap();
    }

    /// Random DAG by forward edges over a shuffled order.
    fn random_dag(rng: &mut ChaCha8Rng, n: usize, edge_bias: u64) -> DeviceGraph {
        let mut g = DeviceGraph::new();
        for i in 0..n {
            g.opaque(&format!("op{i}"), || {});
        }
        for u in 0..n {
            for v in (u + 1)..n {
                if rng.next_u64() % 100 < edge_bias {
                    g.precede(u, &[v]);
                }
            }
        }
        g
    }

    #[test]
    fn random_dags_satisfy_all_schedule_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for round in 0..60 {
            let n = 2 + (rng.next_u64() % 40) as usize;
            let g = random_dag(&mut rng, n, 15);
            for streams in [1, 2, 4, 8] {
                let s = make_schedule(&g, streams).unwrap();
                check_schedule_invariants(&g, &s)
                    .unwrap_or_else(|e| panic!("round {round} streams {streams}: {e}"));
                assert!(s.streams_used() <= streams);
                let trace = simulate(&s, |_| 1).unwrap();
                check_dependency_preservation(&g, &trace)
                    .unwrap_or_else(|e| panic!("round {round} streams {streams}: {e}"));
            }
        }
    }

    #[test]
    fn schedules_are_deterministic() {
        let build = || {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let g = random_dag(&mut rng, 24, 20);
            make_schedule(&g, 4).unwrap().dump()
        };
        assert_eq!(build(), build());
    }

    /// Brute-force oracle: BFS longest-path levels computed independently of
    /// `levelize`'s wave construction.
    #[test]
    fn levelize_matches_longest_path_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..40 {
            let n = 2 + (rng.next_u64() % 30) as usize;
            let g = random_dag(&mut rng, n, 20);
            let t = levelize(&g).unwrap();
            // Relaxation oracle over a topological order (ids are one).
            let mut level = vec![0usize; n];
            let mut indeg = vec![0usize; n];
            for &(_, v) in g.edges() {
                indeg[v] += 1;
            }
            let mut q: VecDeque<OpId> = (0..n).filter(|&i| indeg[i] == 0).collect();
            while let Some(u) = q.pop_front() {
                for &(p, v) in g.edges() {
                    if p == u {
                        level[v] = level[v].max(level[u] + 1);
                        indeg[v] -= 1;
                        if indeg[v] == 0 {
                            q.push_back(v);
                        }
                    }
                }
            }
            assert_eq!(t.level, level);
        }
    }
}
