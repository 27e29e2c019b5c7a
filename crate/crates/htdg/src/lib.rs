//! A heterogeneous task-graph computing runtime.
//!
//! `htdg` executes task graphs whose nodes target different execution
//! domains (host CPU plus any number of simulated devices) and whose control
//! flow lives *inside* the graph: condition tasks pick their successor at
//! runtime, enabling branches, loops, and non-deterministic flows without
//! leaving the graph. Dynamic subflows, graph composition, and device-flow
//! tasks (transformed to stream schedules and run on a simulated multi-stream
//! device) round out the model.
//!
//! Execution is driven by an adaptive per-domain work-stealing scheduler:
//! each worker owns one deque per domain, steals only within its own domain,
//! and parks through a two-phase-commit notifier when work runs dry. The
//! active/thief accounting keeps exactly enough workers awake for the
//! available parallelism instead of busy-spinning the pool.
//!
//! ```
//! use htdg::{Executor, ExecutorConfig, TaskGraph};
//! use std::sync::Arc;
//!
//! let mut graph = TaskGraph::new(1);
//! let hello = graph.add_static("hello", 0, || println!("hello")).unwrap();
//! let world = graph.add_static("world", 0, || println!("world")).unwrap();
//! graph.precede(hello, &[world]).unwrap();
//! graph.finalize().unwrap();
//!
//! let exec = Executor::new(ExecutorConfig::default()).unwrap();
//! exec.run(&Arc::new(graph)).unwrap().wait().unwrap();
//! ```
//!
//! See the crate examples for one runnable program per capability, and the
//! `htdg-bench` binary for the benchmark harness.

pub mod bench;
pub mod capture;
pub mod corpus;
pub mod deque;
pub mod error;
pub mod executor;
pub mod graph;
pub mod notifier;
pub mod trace;

pub use capture::{
    levelize, make_schedule, simulate, CapturedGraph, DeviceGraph, EventPair, LevelTable, OpId,
    OpKind, SimTrace, StreamSchedule,
};
pub use deque::{Steal, Stealer, WorkDeque};
pub use error::{BenchError, ConfigError, GraphError, RunError, ScheduleError};
pub use executor::{
    ExecutionCounts, Executor, ExecutorConfig, MetricsReport, RunHandle, TaskKey,
    UtilizationSample,
};
pub use graph::{
    Diagnostic, DiagnosticCode, DomainId, GraphId, NodeId, Severity, Subflow, TaskGraph, TaskKind,
};
pub use notifier::Notifier;
pub use trace::{TraceArg, TraceEvent, TraceEventKind, TraceLog};
