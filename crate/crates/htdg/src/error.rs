//! Error types shared across the crate.

use thiserror::Error;

use crate::graph::{Diagnostic, NodeId};

/// Errors raised while building or finalizing a [`crate::TaskGraph`].
#[derive(Debug, Clone, Error)]
pub enum GraphError {
    /// The graph was already finalized; builder calls are no longer allowed.
    #[error("graph is finalized and can no longer be mutated")]
    FinalizedGraph,

    /// A task was created with a domain index outside the graph's configured range.
    #[error("domain {domain} out of range (graph declares {limit} domains)")]
    UnknownDomain { domain: usize, limit: usize },

    /// An operation referenced a node id that does not exist in this graph.
    #[error("unknown node id {0}")]
    UnknownNode(NodeId),

    /// The same (from, to) edge was added twice.
    #[error("duplicate edge {from} -> {to}")]
    DuplicateEdge { from: NodeId, to: NodeId },

    /// A non-condition node tried to precede itself. A strong self-loop can
    /// never satisfy its own dependency, so it is rejected at build time.
    #[error("self-loop on node {0} is only allowed from a condition node")]
    SelfLoopOnStrongEdge(NodeId),

    /// Composing the child would make a graph (transitively) contain itself.
    #[error("composition would create a cycle among task graphs")]
    CompositionCycle,

    /// Only finalized graphs may be composed as module tasks.
    #[error("cannot compose an unfinalized graph")]
    UnfinalizedChild,

    /// `finalize` found error-severity diagnostics.
    #[error("validation failed: {}", format_diagnostics(.0))]
    ValidationFailed(Vec<Diagnostic>),
}

fn format_diagnostics(diags: &[Diagnostic]) -> String {
    diags
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

/// Errors raised when constructing an executor.
#[derive(Debug, Clone, Error)]
pub enum ConfigError {
    #[error("executor needs at least one domain with at least one worker")]
    NoWorkers,

    #[error("workers_per_domain[{0}] must be positive")]
    EmptyDomain(usize),

    #[error("max_steals_multiplier must be at least 1")]
    ZeroMaxSteals,

    #[error("max_streams must be at least 1")]
    ZeroStreams,
}

/// Errors surfaced by `Executor::run` and `RunHandle::wait`.
#[derive(Debug, Clone, Error)]
pub enum RunError {
    /// The submitted graph was never finalized.
    #[error("graph must be finalized before it can run")]
    NotFinalized,

    /// The graph (or a graph it composes) declares more domains than the executor has.
    #[error("graph requires {required} domains but the executor has {available}")]
    DomainMismatch { required: usize, available: usize },

    /// The same graph is already running; per-graph runtime state cannot be shared.
    #[error("graph is already running; concurrent re-runs of one graph are rejected")]
    SecondConcurrentRun,

    /// The executor received a stop signal and no longer accepts or finishes work.
    #[error("executor is stopped")]
    Stopped,

    /// A condition task returned an index with no matching successor.
    #[error("condition task {node} returned {returned} but has {successors} successors")]
    ConditionIndexOutOfRange {
        node: NodeId,
        returned: usize,
        successors: usize,
    },

    /// A user callable panicked; the run is aborted and the executor stops.
    #[error("task panicked: {0}")]
    TaskPanic(String),

    /// A dynamically spawned graph failed validation.
    #[error("spawned subflow graph is invalid: {0}")]
    SpawnedGraphInvalid(String),

    /// A device-flow body produced an unschedulable graph.
    #[error("device flow error: {0}")]
    DeviceFlow(#[from] ScheduleError),

    /// Metrics or trace access requires `instrument: true` in the config.
    #[error("executor was not built with instrumentation enabled")]
    NotInstrumented,
}

/// Errors from the stream-schedule transformation and its simulator.
#[derive(Debug, Clone, Error)]
pub enum ScheduleError {
    /// The device graph contains a dependency cycle.
    #[error("device graph contains a cycle")]
    CycleDetected,

    /// The schedule's event graph stalled; only possible for hand-built
    /// schedules, never for `make_schedule` outputs.
    #[error("schedule deadlocked during simulation")]
    Deadlock,
}

/// Errors from the benchmark harness.
#[derive(Debug, Clone, Error)]
pub enum BenchError {
    /// Per-task execution counts differ between the executor and the oracle.
    #[error("oracle mismatch: {0}")]
    OracleMismatch(String),

    /// The results array differs from the oracle's array (lost or re-executed task).
    #[error("checksum mismatch: {0}")]
    ChecksumMismatch(String),

    /// A configured bound assertion failed.
    #[error("bound violation: {0}")]
    BoundViolation(String),

    /// The oracle exceeded its step limit (unbounded user loop).
    #[error("oracle aborted after {0} steps without terminating")]
    NonTermination(u64),

    /// The oracle hit a graph-level fault (e.g. condition index out of range).
    #[error("oracle failure: {0}")]
    OracleFailure(String),

    /// The executor reported a run error during a benchmark.
    #[error("run failed: {0}")]
    Run(#[from] RunError),

    /// A run exceeded the benchmark watchdog.
    #[error("watchdog expired after {0:?}")]
    Watchdog(std::time::Duration),

    /// Invalid benchmark configuration.
    #[error("invalid benchmark config: {0}")]
    InvalidConfig(String),
}
