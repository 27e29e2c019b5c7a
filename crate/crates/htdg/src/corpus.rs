//! Built-in corpus of small canonical graphs exercising every task kind:
//! plain DAGs, dynamic subflows, composition, condition loops and branches,
//! non-deterministic control flow, and device flows. Used by the benchmark
//! CLI (`--gen corpus:<name>`) and throughout the test suites.
//!
//! Every builder takes a seed so stochastic condition callables are
//! reproducible, and returns an execution log that tasks append their names
//! to; the log order is a user-visible trace of the run.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::GraphError;
use crate::graph::TaskGraph;

/// Names accepted by [`build`].
pub const CORPUS_NAMES: [&str; 10] = [
    "listing1", "listing2", "listing3", "listing4", "listing5", "listing6", "listing7",
    "listing9", "fig6", "fig9right",
];

/// Shared append-only log of task-name execution order.
pub type ExecLog = Arc<Mutex<Vec<String>>>;

/// A corpus graph plus its observation hooks.
pub struct CorpusEntry {
    pub graph: Arc<TaskGraph>,
    pub log: ExecLog,
    /// Domains the graph needs (1 for host-only graphs, 2 when it has
    /// device-flow tasks on domain 1).
    pub domains: usize,
}

fn logger(log: &ExecLog, name: &'static str) -> impl FnMut() + Send + 'static {
    let log = Arc::clone(log);
    move || log.lock().unwrap().push(name.to_string())
}

/// Builds a corpus graph by name. The `seed` feeds any stochastic condition
/// callables (each condition node gets its own stream, so behavior does not
/// depend on scheduling order).
pub fn build(name: &str, seed: u64) -> Result<CorpusEntry, GraphError> {
    match name {
        "listing1" | "simple" => simple_dag(),
        "listing2" | "subflow" => dynamic_subflow(),
        "listing3" | "composition" => composition(),
        "listing4" | "dowhile" => do_while(100),
        "listing5" | "ifelse" => if_else(),
        "listing6" | "saxpy" => saxpy_deviceflow(),
        "listing7" | "capturer" => saxpy_capturer(),
        "listing9" | "kmeans" => kmeans_loop(5),
        "fig6" | "nondet" => nondeterministic(seed),
        "fig9right" => race_pitfall(),
        other => Err(unknown_corpus(other)),
    }
}

fn unknown_corpus(name: &str) -> GraphError {
    // Reuse ValidationFailed to carry a readable message without a dedicated
    // error variant for a test/CLI-only lookup.
    GraphError::ValidationFailed(vec![crate::graph::Diagnostic {
        severity: crate::graph::Severity::Error,
        code: crate::graph::DiagnosticCode::NoSource,
        nodes: vec![],
        message: format!(
            "unknown corpus graph '{name}' (expected one of {})",
            CORPUS_NAMES.join(", ")
        ),
    }])
}

/// Four static tasks: A before B and C, D after B and C.
fn simple_dag() -> Result<CorpusEntry, GraphError> {
    let log: ExecLog = Arc::default();
    let mut g = TaskGraph::new(1);
    let a = g.add_static("A", 0, logger(&log, "A"))?;
    let b = g.add_static("B", 0, logger(&log, "B"))?;
    let c = g.add_static("C", 0, logger(&log, "C"))?;
    let d = g.add_static("D", 0, logger(&log, "D"))?;
    g.precede(a, &[b, c])?;
    g.succeed(d, &[b, c])?;
    g.finalize()?;
    Ok(CorpusEntry {
        graph: Arc::new(g),
        log,
        domains: 1,
    })
}

/// A runs before B and C; B spawns B1, B2 -> B3 as a joined subflow; D runs
/// after B and C.
fn dynamic_subflow() -> Result<CorpusEntry, GraphError> {
    let log: ExecLog = Arc::default();
    let mut g = TaskGraph::new(1);
    let a = g.add_static("A", 0, logger(&log, "A"))?;
    let c = g.add_static("C", 0, logger(&log, "C"))?;
    let d = g.add_static("D", 0, logger(&log, "D"))?;
    let b = {
        let log = Arc::clone(&log);
        g.add_subflow("B", 0, move |sf| {
            log.lock().unwrap().push("B".to_string());
            let b1 = sf.add_static("B1", 0, logger(&log, "B1"));
            let b2 = sf.add_static("B2", 0, logger(&log, "B2"));
            let b3 = sf.add_static("B3", 0, logger(&log, "B3"));
            sf.succeed(b3, &[b1, b2]);
        })?
    };
    g.precede(a, &[b, c])?;
    g.succeed(d, &[b, c])?;
    g.finalize()?;
    Ok(CorpusEntry {
        graph: Arc::new(g),
        log,
        domains: 1,
    })
}

/// Two-file composition: child graph A -> B is composed as module E behind
/// C -> D (a subflow spawning D1 -> D2).
fn composition() -> Result<CorpusEntry, GraphError> {
    let log: ExecLog = Arc::default();
    let child = {
        let mut child = TaskGraph::new(1);
        let a = child.add_static("A", 0, logger(&log, "A"))?;
        let b = child.add_static("B", 0, logger(&log, "B"))?;
        child.precede(a, &[b])?;
        child.finalize()?;
        Arc::new(child)
    };
    let mut g = TaskGraph::new(1);
    let c = g.add_static("C", 0, logger(&log, "C"))?;
    let d = {
        let log = Arc::clone(&log);
        g.add_subflow("D", 0, move |sf| {
            log.lock().unwrap().push("D".to_string());
            let d1 = sf.add_static("D1", 0, logger(&log, "D1"));
            let d2 = sf.add_static("D2", 0, logger(&log, "D2"));
            sf.precede(d1, &[d2]);
        })?
    };
    let e = g.compose("E", &child)?;
    g.precede(c, &[d])?;
    g.precede(d, &[e])?;
    g.finalize()?;
    Ok(CorpusEntry {
        graph: Arc::new(g),
        log,
        domains: 1,
    })
}

/// Do-while: init -> body -> cond; cond loops to body until the counter hits
/// `iterations`, then moves to done.
fn do_while(iterations: usize) -> Result<CorpusEntry, GraphError> {
    let log: ExecLog = Arc::default();
    let counter = Arc::new(AtomicUsize::new(0));
    let mut g = TaskGraph::new(1);
    let init = {
        let (log, c) = (Arc::clone(&log), Arc::clone(&counter));
        g.add_static("init", 0, move || {
            c.store(0, Ordering::SeqCst);
            log.lock().unwrap().push("init".to_string());
        })?
    };
    let body = {
        let (log, c) = (Arc::clone(&log), Arc::clone(&counter));
        g.add_static("body", 0, move || {
            c.fetch_add(1, Ordering::SeqCst);
            log.lock().unwrap().push("body".to_string());
        })?
    };
    let cond = {
        let (log, c) = (Arc::clone(&log), Arc::clone(&counter));
        g.add_condition("cond", 0, move || {
            log.lock().unwrap().push("cond".to_string());
            if c.load(Ordering::SeqCst) < iterations {
                0
            } else {
                1
            }
        })?
    };
    let done = g.add_static("done", 0, logger(&log, "done"))?;
    g.precede(init, &[body])?;
    g.precede(body, &[cond])?;
    g.precede(cond, &[body, done])?;
    g.finalize()?;
    Ok(CorpusEntry {
        graph: Arc::new(g),
        log,
        domains: 1,
    })
}

/// If-else: init -> cond -> (yes | no), with cond returning 0.
fn if_else() -> Result<CorpusEntry, GraphError> {
    let log: ExecLog = Arc::default();
    let mut g = TaskGraph::new(1);
    let init = g.add_static("init", 0, logger(&log, "init"))?;
    let cond = {
        let log = Arc::clone(&log);
        g.add_condition("cond", 0, move || {
            log.lock().unwrap().push("cond".to_string());
            0
        })?
    };
    let yes = g.add_static("yes", 0, logger(&log, "yes"))?;
    let no = g.add_static("no", 0, logger(&log, "no"))?;
    g.precede(init, &[cond])?;
    g.precede(cond, &[yes, no])?;
    g.finalize()?;
    Ok(CorpusEntry {
        graph: Arc::new(g),
        log,
        domains: 1,
    })
}

/// Two host allocation tasks feeding a device flow of two input copies, a
/// kernel, and two output copies.
fn saxpy_deviceflow() -> Result<CorpusEntry, GraphError> {
    let log: ExecLog = Arc::default();
    let mut g = TaskGraph::new(2);
    let ax = g.add_static("allocate_x", 0, logger(&log, "allocate_x"))?;
    let ay = g.add_static("allocate_y", 0, logger(&log, "allocate_y"))?;
    let flow = {
        let log = Arc::clone(&log);
        g.add_deviceflow("deviceflow", 1, move |df| {
            let mk = |name: &'static str| {
                let log = Arc::clone(&log);
                move || log.lock().unwrap().push(name.to_string())
            };
            let h2d_x = df.copy("h2d_x", mk("h2d_x"));
            let h2d_y = df.copy("h2d_y", mk("h2d_y"));
            let kernel = df.kernel("kernel", mk("kernel"));
            let d2h_x = df.copy("d2h_x", mk("d2h_x"));
            let d2h_y = df.copy("d2h_y", mk("d2h_y"));
            df.succeed(kernel, &[h2d_x, h2d_y]);
            df.precede(kernel, &[d2h_x, d2h_y]);
        })?
    };
    g.succeed(flow, &[ax, ay])?;
    g.finalize()?;
    Ok(CorpusEntry {
        graph: Arc::new(g),
        log,
        domains: 2,
    })
}

/// The same workload expressed through the opaque-capture interface.
fn saxpy_capturer() -> Result<CorpusEntry, GraphError> {
    let log: ExecLog = Arc::default();
    let mut g = TaskGraph::new(2);
    let ax = g.add_static("allocate_x", 0, logger(&log, "allocate_x"))?;
    let ay = g.add_static("allocate_y", 0, logger(&log, "allocate_y"))?;
    let flow = {
        let log = Arc::clone(&log);
        g.add_capturer("capturer", 1, move |cfc| {
            let mk = |name: &'static str| {
                let log = Arc::clone(&log);
                move || log.lock().unwrap().push(name.to_string())
            };
            let h2d_x = cfc.on("h2d_x", mk("h2d_x"));
            let h2d_y = cfc.on("h2d_y", mk("h2d_y"));
            let kernel = cfc.on("kernel", mk("kernel"));
            let d2h_x = cfc.on("d2h_x", mk("d2h_x"));
            let d2h_y = cfc.on("d2h_y", mk("d2h_y"));
            cfc.succeed(kernel, &[h2d_x, h2d_y]);
            cfc.precede(kernel, &[d2h_x, d2h_y]);
        })?
    };
    g.succeed(flow, &[ax, ay])?;
    g.finalize()?;
    Ok(CorpusEntry {
        graph: Arc::new(g),
        log,
        domains: 2,
    })
}

/// Iterative device loop: h2d -> update -> cond, cond loops update until
/// convergence (a fixed iteration budget here), then d2h.
fn kmeans_loop(iterations: usize) -> Result<CorpusEntry, GraphError> {
    let log: ExecLog = Arc::default();
    let rounds = Arc::new(AtomicUsize::new(0));
    let mut g = TaskGraph::new(2);
    let device_task = |g: &mut TaskGraph, name: &'static str, log: &ExecLog| {
        let log = Arc::clone(log);
        g.add_deviceflow(name, 1, move |df| {
            let log = Arc::clone(&log);
            df.kernel(name, move || log.lock().unwrap().push(name.to_string()));
        })
    };
    let h2d = device_task(&mut g, "h2d", &log)?;
    let update = device_task(&mut g, "update", &log)?;
    let cond = {
        let (log, rounds) = (Arc::clone(&log), Arc::clone(&rounds));
        g.add_condition("cond", 0, move || {
            log.lock().unwrap().push("cond".to_string());
            if rounds.fetch_add(1, Ordering::SeqCst) + 1 < iterations {
                0
            } else {
                1
            }
        })?
    };
    let d2h = device_task(&mut g, "d2h", &log)?;
    g.precede(h2d, &[update])?;
    g.precede(update, &[cond])?;
    g.precede(cond, &[update, d2h])?;
    g.finalize()?;
    Ok(CorpusEntry {
        graph: Arc::new(g),
        log,
        domains: 2,
    })
}

/// Non-deterministic control flow: three chained conditions each flip a coin
/// to advance or loop back to the first.
///
/// Each condition owns a seeded stream, so a given seed fixes the whole
/// random walk regardless of scheduling.
pub fn nondeterministic(seed: u64) -> Result<CorpusEntry, GraphError> {
    let log: ExecLog = Arc::default();
    let mut g = TaskGraph::new(1);
    let init = g.add_static("init", 0, logger(&log, "init"))?;
    let coin = |salt: u64, log: &ExecLog, name: &'static str| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt);
        let log = Arc::clone(log);
        move || {
            log.lock().unwrap().push(name.to_string());
            (rng.next_u64() & 1) as usize
        }
    };
    let f1 = g.add_condition("F1", 0, coin(0x1111, &log, "F1"))?;
    let f2 = g.add_condition("F2", 0, coin(0x2222, &log, "F2"))?;
    let f3 = g.add_condition("F3", 0, coin(0x3333, &log, "F3"))?;
    let stop = g.add_static("stop", 0, logger(&log, "stop"))?;
    g.precede(init, &[f1])?;
    g.precede(f1, &[f2, f1])?;
    g.precede(f2, &[f3, f1])?;
    g.precede(f3, &[stop, f1])?;
    g.finalize()?;
    Ok(CorpusEntry {
        graph: Arc::new(g),
        log,
        domains: 1,
    })
}

/// The mixed weak/strong pitfall: C conditions D weakly while E conditions D
/// strongly on an independent path. Validates with a PossibleRace warning.
fn race_pitfall() -> Result<CorpusEntry, GraphError> {
    let log: ExecLog = Arc::default();
    let mut g = TaskGraph::new(1);
    let s = g.add_static("S", 0, logger(&log, "S"))?;
    let c = {
        let log = Arc::clone(&log);
        g.add_condition("C", 0, move || {
            log.lock().unwrap().push("C".to_string());
            1 // take the safe branch by default
        })?
    };
    let x = g.add_static("X", 0, logger(&log, "X"))?;
    let e = g.add_static("E", 0, logger(&log, "E"))?;
    let d = g.add_static("D", 0, logger(&log, "D"))?;
    g.precede(s, &[c, e])?;
    g.precede(c, &[d, x])?;
    g.precede(e, &[d])?;
    g.finalize()?;
    Ok(CorpusEntry {
        graph: Arc::new(g),
        log,
        domains: 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::DiagnosticCode;

    #[test]
    fn all_names_build() {
        for name in CORPUS_NAMES {
            let entry = build(name, 7).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert!(entry.graph.is_finalized());
            assert!(entry.graph.node_count() > 0);
        }
    }

    #[test]
    fn unknown_name_is_an_error() {
        assert!(build("no-such-graph", 0).is_err());
    }

    #[test]
    fn race_pitfall_carries_warning() {
        let entry = build("fig9right", 0).unwrap();
        let diags = entry.graph.validate();
        assert!(diags.iter().any(|d| d.code == DiagnosticCode::PossibleRace));
    }
}
