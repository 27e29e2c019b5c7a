//! The multi-domain adaptive work-stealing executor.
//!
//! Each domain owns a worker pool, a shared submission queue, and an event
//! notifier. Every worker owns one deque per domain: it can *produce* tasks
//! of any domain but only *consumes* (pops or steals) tasks of its own.
//! Workers alternate between exploiting their local queue and stealing from
//! same-domain victims; per-domain `actives`/`thieves` counters drive the
//! adaptive rule that keeps one thief alive while any worker is active,
//! without busy-spinning the whole pool.
//!
//! Scheduling of control flow follows the weak/strong dependency split: a
//! finished non-condition task decrements each successor's strong counter
//! and submits those that reach zero, while a condition task directly
//! submits the single successor selected by its return value. A task's
//! strong counter is re-armed to its build-time value when the task starts,
//! which is what lets condition cycles re-execute a region.

use std::collections::BTreeMap;
use std::panic::{self, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicI64, AtomicU32, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam_utils::CachePadded;
use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::capture::{run_device_graph, DeviceGraph};
use crate::deque::{Steal, Stealer, WorkDeque};
use crate::error::{ConfigError, RunError};
use crate::graph::{Callable, GraphId, NodeId, Subflow, TaskGraph};
use crate::notifier::Notifier;
use crate::trace::{TraceArg, TraceEvent, TraceEventKind, TraceLog};

/// Executor construction parameters.
#[derive(Debug, Clone)]
pub struct ExecutorConfig {
    /// Worker-thread count per domain; the vector length is the domain count.
    pub workers_per_domain: Vec<usize>,
    /// MAX_STEALS = multiplier x total worker count; a thief gives up and
    /// becomes a sleep candidate after that many failed attempts.
    pub max_steals_multiplier: usize,
    /// Seed for per-worker victim selection (reproducible stealing).
    pub rng_seed: u64,
    /// Enables metrics, the event trace, and utilization sampling.
    pub instrument: bool,
    /// Stream width for device-flow schedules.
    pub max_streams: usize,
    /// Utilization sampling period when instrumented.
    pub sample_interval_us: u64,
}

impl Default for ExecutorConfig {
    fn default() -> Self {
        let host = thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
        ExecutorConfig {
            workers_per_domain: vec![host],
            max_steals_multiplier: 10,
            rng_seed: 0x7F4A_7C15,
            instrument: false,
            max_streams: 4,
            sample_interval_us: 100,
        }
    }
}

impl ExecutorConfig {
    fn validate(&self) -> Result<(), ConfigError> {
        if self.workers_per_domain.is_empty() {
            return Err(ConfigError::NoWorkers);
        }
        for (d, &w) in self.workers_per_domain.iter().enumerate() {
            if w == 0 {
                return Err(ConfigError::EmptyDomain(d));
            }
        }
        if self.max_steals_multiplier == 0 {
            return Err(ConfigError::ZeroMaxSteals);
        }
        if self.max_streams == 0 {
            return Err(ConfigError::ZeroStreams);
        }
        Ok(())
    }
}

/// Structural address of a task across nested graphs: `coord` is the path of
/// host node ids (module or subflow nodes) from the run's root instance, and
/// `node` the id within the addressed graph. Counts aggregate over loop
/// re-instantiations of the same coordinate.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TaskKey {
    pub coord: Vec<NodeId>,
    pub node: NodeId,
}

impl TaskKey {
    pub fn root(node: NodeId) -> Self {
        TaskKey {
            coord: Vec::new(),
            node,
        }
    }
}

/// Per-task execution counts of one run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExecutionCounts {
    pub counts: BTreeMap<TaskKey, u64>,
}

impl ExecutionCounts {
    /// Count of a root-graph node.
    pub fn of_root(&self, node: NodeId) -> u64 {
        self.counts.get(&TaskKey::root(node)).copied().unwrap_or(0)
    }

    /// Count of the first root-graph node with this name.
    pub fn count_named(&self, graph: &TaskGraph, name: &str) -> u64 {
        graph
            .node_by_name(name)
            .map(|n| self.of_root(n))
            .unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }
}

/// A consistent snapshot of the executor's monotone counters; requires
/// `instrument: true`.
#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub steal_attempts_total: u64,
    pub steals_successful: u64,
    /// Failed steal attempts. Always `steal_attempts_total - steals_successful`.
    pub wasteful_steals: u64,
    /// Largest number of failed attempts any single explore round made;
    /// bounded by MAX_STEALS.
    pub max_failed_steals_per_explore: u64,
    pub notifications_sent: u64,
    /// commit_wait count (workers that actually parked).
    pub parks: u64,
    pub samples: Vec<UtilizationSample>,
}

/// One utilization sample, captured while at least one run was in flight.
#[derive(Debug, Clone, Copy)]
pub struct UtilizationSample {
    pub ns: u64,
    pub domain: usize,
    pub actives: usize,
    pub thieves: usize,
}

struct WorkerStats {
    steals_ok: AtomicU64,
    wasteful: AtomicU64,
    max_fail_per_explore: AtomicU64,
    notifications: AtomicU64,
    parks: AtomicU64,
}

impl WorkerStats {
    fn new() -> Self {
        WorkerStats {
            steals_ok: AtomicU64::new(0),
            wasteful: AtomicU64::new(0),
            max_fail_per_explore: AtomicU64::new(0),
            notifications: AtomicU64::new(0),
            parks: AtomicU64::new(0),
        }
    }
}

/// Shared state of one `Executor::run` invocation.
struct RunCtx {
    root: GraphId,
    inflight: AtomicUsize,
    done: Mutex<Option<Result<(), RunError>>>,
    done_cv: Condvar,
    error: Mutex<Option<RunError>>,
    instances: Mutex<Vec<Arc<GraphInstance>>>,
    inst_seq: AtomicU32,
}

impl RunCtx {
    fn new(root: GraphId) -> Self {
        RunCtx {
            root,
            inflight: AtomicUsize::new(0),
            done: Mutex::new(None),
            done_cv: Condvar::new(),
            error: Mutex::new(None),
            instances: Mutex::new(Vec::new()),
            inst_seq: AtomicU32::new(0),
        }
    }

    fn record_error(&self, err: RunError) {
        let mut slot = self.error.lock().unwrap();
        if slot.is_none() {
            *slot = Some(err);
        }
    }
}

/// One executing instantiation of a graph: the root graph of a run, a module
/// child, or a spawned subflow. Holds the per-run strong counters and
/// execution counts; `pending` tracks unfinished tasks for join/completion.
struct GraphInstance {
    run: Arc<RunCtx>,
    seq: u32,
    graph: Arc<TaskGraph>,
    coord: Vec<NodeId>,
    strong: Vec<AtomicI64>,
    pending: AtomicUsize,
    counts: Vec<AtomicU64>,
    /// Set for joined subflows and module children: the hosting node to
    /// complete once this instance drains.
    parent: Option<ParentLink>,
}

struct ParentLink {
    inst: Arc<GraphInstance>,
    node: NodeId,
}

impl GraphInstance {
    fn register(
        run: &Arc<RunCtx>,
        graph: Arc<TaskGraph>,
        coord: Vec<NodeId>,
        parent: Option<ParentLink>,
    ) -> Arc<GraphInstance> {
        let n = graph.node_count();
        let strong = (0..n)
            .map(|i| AtomicI64::new(graph.strong_dependents(i).unwrap() as i64))
            .collect();
        let inst = Arc::new(GraphInstance {
            run: Arc::clone(run),
            seq: run.inst_seq.fetch_add(1, Ordering::Relaxed),
            graph,
            coord,
            strong,
            pending: AtomicUsize::new(0),
            counts: (0..n).map(|_| AtomicU64::new(0)).collect(),
            parent,
        });
        run.instances.lock().unwrap().push(Arc::clone(&inst));
        inst
    }
}

/// A schedulable task: one node of one graph instance.
struct TaskRef {
    inst: Arc<GraphInstance>,
    node: NodeId,
}

/// Handle to a submitted run. Dropping it does not cancel the run.
pub struct RunHandle {
    run: Arc<RunCtx>,
}

impl RunHandle {
    /// Blocks until every task of the run (including detached subflows) has
    /// finished, then returns the run outcome.
    pub fn wait(&self) -> Result<(), RunError> {
        let mut done = self.run.done.lock().unwrap();
        loop {
            if let Some(res) = done.as_ref() {
                return res.clone();
            }
            done = self.run.done_cv.wait(done).unwrap();
        }
    }

    /// Like [`RunHandle::wait`] but gives up after `timeout`.
    pub fn wait_timeout(&self, timeout: Duration) -> Option<Result<(), RunError>> {
        let deadline = Instant::now() + timeout;
        let mut done = self.run.done.lock().unwrap();
        loop {
            if let Some(res) = done.as_ref() {
                return Some(res.clone());
            }
            let now = Instant::now();
            if now >= deadline {
                return None;
            }
            let (guard, _) = self
                .run
                .done_cv
                .wait_timeout(done, deadline - now)
                .unwrap();
            done = guard;
        }
    }

    pub fn is_done(&self) -> bool {
        self.run.done.lock().unwrap().is_some()
    }

    /// Per-task execution counts. Meaningful once the run has completed.
    pub fn counts(&self) -> ExecutionCounts {
        let mut out = ExecutionCounts::default();
        let instances = self.run.instances.lock().unwrap();
        for inst in instances.iter() {
            for (node, c) in inst.counts.iter().enumerate() {
                let v = c.load(Ordering::Relaxed);
                if v > 0 {
                    *out.counts
                        .entry(TaskKey {
                            coord: inst.coord.clone(),
                            node,
                        })
                        .or_insert(0) += v;
                }
            }
        }
        out
    }
}

struct SharedQueue {
    /// Owner end, serialized for external submitters.
    push: Mutex<WorkDeque<TaskRef>>,
    steal: Stealer<TaskRef>,
}

struct Inner {
    domains: usize,
    workers_per_domain: Vec<usize>,
    worker_count: usize,
    max_steals: usize,
    rng_seed: u64,
    instrument: bool,
    max_streams: usize,
    start: Instant,
    actives: Vec<CachePadded<AtomicI64>>,
    thieves: Vec<CachePadded<AtomicI64>>,
    notifiers: Vec<Notifier>,
    shared: Vec<SharedQueue>,
    /// Steal handles, indexed [worker][domain].
    worker_steal: Vec<Vec<Stealer<TaskRef>>>,
    /// (domain, slot-within-domain) per worker id.
    worker_meta: Vec<(usize, usize)>,
    stop: AtomicBool,
    runs: Mutex<Vec<Arc<RunCtx>>>,
    /// Per worker, plus one trailing slot for external threads.
    stats: Vec<CachePadded<WorkerStats>>,
    trace_bufs: Option<Vec<Mutex<Vec<TraceEvent>>>>,
    samples: Mutex<Vec<UtilizationSample>>,
}

struct WorkerCtx {
    id: usize,
    domain: usize,
    slot: usize,
    deques: Vec<WorkDeque<TaskRef>>,
    rng: ChaCha8Rng,
}

/// The work-stealing executor. Worker threads are created at construction
/// and joined on drop; `run` may be called from any thread.
pub struct Executor {
    inner: Arc<Inner>,
    workers: Vec<JoinHandle<()>>,
    sampler: Option<JoinHandle<()>>,
}

impl Executor {
    pub fn new(config: ExecutorConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let domains = config.workers_per_domain.len();
        let worker_count: usize = config.workers_per_domain.iter().sum();
        let max_steals = config.max_steals_multiplier * worker_count;

        let mut worker_meta = Vec::with_capacity(worker_count);
        for (d, &n) in config.workers_per_domain.iter().enumerate() {
            for slot in 0..n {
                worker_meta.push((d, slot));
            }
        }

        let mut owners: Vec<Vec<WorkDeque<TaskRef>>> = Vec::with_capacity(worker_count);
        let mut worker_steal = Vec::with_capacity(worker_count);
        for _ in 0..worker_count {
            let per_domain: Vec<WorkDeque<TaskRef>> =
                (0..domains).map(|_| WorkDeque::new()).collect();
            worker_steal.push(per_domain.iter().map(|q| q.stealer()).collect());
            owners.push(per_domain);
        }

        let shared = (0..domains)
            .map(|_| {
                let q = WorkDeque::new();
                SharedQueue {
                    steal: q.stealer(),
                    push: Mutex::new(q),
                }
            })
            .collect();

        let inner = Arc::new(Inner {
            domains,
            workers_per_domain: config.workers_per_domain.clone(),
            worker_count,
            max_steals,
            rng_seed: config.rng_seed,
            instrument: config.instrument,
            max_streams: config.max_streams,
            start: Instant::now(),
            actives: (0..domains).map(|_| CachePadded::new(AtomicI64::new(0))).collect(),
            thieves: (0..domains).map(|_| CachePadded::new(AtomicI64::new(0))).collect(),
            notifiers: config
                .workers_per_domain
                .iter()
                .map(|&n| Notifier::new(n))
                .collect(),
            shared,
            worker_steal,
            worker_meta,
            stop: AtomicBool::new(false),
            runs: Mutex::new(Vec::new()),
            stats: (0..=worker_count)
                .map(|_| CachePadded::new(WorkerStats::new()))
                .collect(),
            trace_bufs: config
                .instrument
                .then(|| (0..=worker_count).map(|_| Mutex::new(Vec::new())).collect()),
            samples: Mutex::new(Vec::new()),
        });

        let mut workers = Vec::with_capacity(worker_count);
        for (id, deques) in owners.into_iter().enumerate() {
            let inner = Arc::clone(&inner);
            let (domain, slot) = inner.worker_meta[id];
            let seed = config.rng_seed ^ (id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            let handle = thread::Builder::new()
                .name(format!("htdg-worker-{id}"))
                .spawn(move || {
                    let mut ctx = WorkerCtx {
                        id,
                        domain,
                        slot,
                        deques,
                        rng: ChaCha8Rng::seed_from_u64(seed),
                    };
                    inner.worker_loop(&mut ctx);
                })
                .expect("spawn worker thread");
            workers.push(handle);
        }

        let sampler = config.instrument.then(|| {
            let inner = Arc::clone(&inner);
            let interval = Duration::from_micros(config.sample_interval_us.max(1));
            thread::Builder::new()
                .name("htdg-sampler".into())
                .spawn(move || inner.sampler_loop(interval))
                .expect("spawn sampler thread")
        });

        Ok(Executor {
            inner,
            workers,
            sampler,
        })
    }

    pub fn domains(&self) -> usize {
        self.inner.domains
    }

    pub fn worker_count(&self) -> usize {
        self.inner.worker_count
    }

    pub fn max_steals(&self) -> usize {
        self.inner.max_steals
    }

    /// Submits a finalized graph: every source task is pushed to its
    /// domain's shared queue with one notification per push. Returns
    /// immediately with a handle.
    pub fn run(&self, graph: &Arc<TaskGraph>) -> Result<RunHandle, RunError> {
        let inner = &*self.inner;
        if !graph.is_finalized() {
            return Err(RunError::NotFinalized);
        }
        if graph.required_domains() > inner.domains {
            return Err(RunError::DomainMismatch {
                required: graph.required_domains(),
                available: inner.domains,
            });
        }
        if inner.stop.load(Ordering::SeqCst) {
            return Err(RunError::Stopped);
        }
        let run = {
            let mut runs = inner.runs.lock().unwrap();
            if runs.iter().any(|r| r.root == graph.graph_id()) {
                return Err(RunError::SecondConcurrentRun);
            }
            let run = Arc::new(RunCtx::new(graph.graph_id()));
            runs.push(Arc::clone(&run));
            run
        };

        let inst = GraphInstance::register(&run, Arc::clone(graph), Vec::new(), None);
        let sources = graph.source_nodes();
        debug_assert!(!sources.is_empty(), "finalized graphs have a source");
        // Count every source before the first push so the run cannot be
        // observed complete while later sources are still unsubmitted.
        run.inflight.fetch_add(sources.len(), Ordering::SeqCst);
        inst.pending.fetch_add(sources.len(), Ordering::SeqCst);
        for src in sources {
            let d = graph.domain(src).unwrap();
            inner.trace(inner.worker_count, TraceEventKind::Submit, TraceArg::Task {
                inst: inst.seq,
                node: src as u32,
            });
            {
                let q = inner.shared[d].push.lock().unwrap();
                q.push(TaskRef {
                    inst: Arc::clone(&inst),
                    node: src,
                });
            }
            inner.notify_one(inner.worker_count, d);
        }
        Ok(RunHandle { run })
    }

    /// Counter snapshot; requires `instrument: true`.
    pub fn metrics(&self) -> Result<MetricsReport, RunError> {
        let inner = &*self.inner;
        if !inner.instrument {
            return Err(RunError::NotInstrumented);
        }
        let mut ok = 0u64;
        let mut wasteful = 0u64;
        let mut max_fail = 0u64;
        let mut notifications = 0u64;
        let mut parks = 0u64;
        for s in &inner.stats {
            ok += s.steals_ok.load(Ordering::Relaxed);
            wasteful += s.wasteful.load(Ordering::Relaxed);
            max_fail = max_fail.max(s.max_fail_per_explore.load(Ordering::Relaxed));
            notifications += s.notifications.load(Ordering::Relaxed);
            parks += s.parks.load(Ordering::Relaxed);
        }
        Ok(MetricsReport {
            steal_attempts_total: ok + wasteful,
            steals_successful: ok,
            wasteful_steals: wasteful,
            max_failed_steals_per_explore: max_fail,
            notifications_sent: notifications,
            parks,
            samples: inner.samples.lock().unwrap().clone(),
        })
    }

    /// Drains and returns the event trace recorded so far; requires
    /// `instrument: true`.
    pub fn take_trace(&self) -> Result<TraceLog, RunError> {
        let inner = &*self.inner;
        let Some(bufs) = &inner.trace_bufs else {
            return Err(RunError::NotInstrumented);
        };
        let mut events = Vec::new();
        for buf in bufs {
            events.append(&mut buf.lock().unwrap());
        }
        events.sort_by_key(|e| (e.ns, e.worker));
        Ok(TraceLog { events })
    }
}

impl Drop for Executor {
    fn drop(&mut self) {
        self.inner.initiate_stop();
        for h in self.workers.drain(..) {
            let _ = h.join();
        }
        if let Some(h) = self.sampler.take() {
            let _ = h.join();
        }
    }
}

enum Invoked {
    /// Satisfy strong successors, then finish.
    Plain,
    /// Condition returned this successor index.
    Branch(usize),
    /// Subflow spawned a graph.
    Spawn { graph: TaskGraph, detached: bool },
    /// Module node: run the composed child.
    Module(Arc<TaskGraph>),
    Fail(RunError),
}

impl Inner {
    fn now_ns(&self) -> u64 {
        self.start.elapsed().as_nanos() as u64
    }

    #[inline]
    fn trace(&self, who: usize, kind: TraceEventKind, arg: TraceArg) {
        if let Some(bufs) = &self.trace_bufs {
            bufs[who].lock().unwrap().push(TraceEvent {
                ns: self.now_ns(),
                worker: who as u32,
                kind,
                arg,
            });
        }
    }

    fn notify_one(&self, who: usize, domain: usize) {
        self.stats[who].notifications.fetch_add(1, Ordering::Relaxed);
        self.trace(who, TraceEventKind::Notify, TraceArg::Notify {
            domain: domain as u32,
            all: false,
        });
        self.notifiers[domain].notify_one();
    }

    fn notify_all_domains(&self, who: usize) {
        for d in 0..self.domains {
            self.stats[who].notifications.fetch_add(1, Ordering::Relaxed);
            self.trace(who, TraceEventKind::Notify, TraceArg::Notify {
                domain: d as u32,
                all: true,
            });
            self.notifiers[d].notify_all();
        }
    }

    /// Sets the stop flag, wakes everyone, and fails all in-flight runs.
    fn initiate_stop(&self) {
        if !self.stop.swap(true, Ordering::SeqCst) {
            self.notify_all_domains(self.worker_count);
        }
        let runs: Vec<Arc<RunCtx>> = self.runs.lock().unwrap().clone();
        for run in runs {
            let err = run.error.lock().unwrap().clone();
            self.complete_run(&run, Err(err.unwrap_or(RunError::Stopped)));
        }
    }

    /// Opens a run's completion latch exactly once and unregisters it.
    fn complete_run(&self, run: &Arc<RunCtx>, result: Result<(), RunError>) {
        {
            let mut done = run.done.lock().unwrap();
            if done.is_none() {
                *done = Some(result);
                run.done_cv.notify_all();
            }
        }
        self.runs
            .lock()
            .unwrap()
            .retain(|r| !Arc::ptr_eq(r, run));
    }

    fn sampler_loop(&self, interval: Duration) {
        while !self.stop.load(Ordering::SeqCst) {
            let active_runs = { !self.runs.lock().unwrap().is_empty() };
            if active_runs {
                let ns = self.now_ns();
                let mut samples = self.samples.lock().unwrap();
                for d in 0..self.domains {
                    samples.push(UtilizationSample {
                        ns,
                        domain: d,
                        actives: self.actives[d].load(Ordering::Relaxed).max(0) as usize,
                        thieves: self.thieves[d].load(Ordering::Relaxed).max(0) as usize,
                    });
                }
            }
            thread::sleep(interval);
        }
    }

    fn worker_loop(&self, ctx: &mut WorkerCtx) {
        let mut current: Option<TaskRef> = None;
        loop {
            self.exploit_task(ctx, &mut current);
            if !self.wait_for_task(ctx, &mut current) {
                break;
            }
        }
    }

    /// Runs the carried task (if any) and drains the worker's own-domain
    /// deque. The first activation fires the adaptive wakeup: becoming the
    /// only active worker while no thieves exist notifies one peer. The
    /// comparison order (increment-and-read actives, then read thieves) is
    /// load-bearing; it pairs with the checks in `wait_for_task`.
    fn exploit_task(&self, ctx: &mut WorkerCtx, slot: &mut Option<TaskRef>) {
        if let Some(first) = slot.take() {
            let d = ctx.domain;
            let result = self.actives[d].fetch_add(1, Ordering::SeqCst) + 1;
            if result == 1 {
                let thieves = self.thieves[d].load(Ordering::SeqCst);
                self.trace(ctx.id, TraceEventKind::ActiveInc, TraceArg::ActiveInc {
                    domain: d as u32,
                    result,
                    thieves: Some(thieves),
                });
                if thieves == 0 {
                    self.notify_one(ctx.id, d);
                }
            } else {
                self.trace(ctx.id, TraceEventKind::ActiveInc, TraceArg::ActiveInc {
                    domain: d as u32,
                    result,
                    thieves: None,
                });
            }
            let mut task = first;
            loop {
                self.execute_task(ctx, task);
                match ctx.deques[d].pop() {
                    Some(next) => task = next,
                    None => break,
                }
            }
            self.actives[d].fetch_sub(1, Ordering::SeqCst);
            self.trace(ctx.id, TraceEventKind::ActiveDec, TraceArg::Domain(d as u32));
        }
    }

    fn execute_task(&self, ctx: &mut WorkerCtx, tref: TaskRef) {
        let TaskRef { inst, node } = tref;
        let graph = Arc::clone(&inst.graph);
        let tn = graph.node(node);
        debug_assert_eq!(tn.domain, ctx.domain, "task executed on wrong domain");

        inst.counts[node].fetch_add(1, Ordering::Relaxed);
        // Re-arm the strong counter so a later weak-edge jump back into this
        // region finds it ready for another round of decrements.
        inst.strong[node].store(tn.strong_dependents as i64, Ordering::Relaxed);
        self.trace(ctx.id, TraceEventKind::Exec, TraceArg::Task {
            inst: inst.seq,
            node: node as u32,
        });

        let invoked = {
            let mut callable = tn.callable.lock().unwrap();
            match &mut *callable {
                Callable::Static(f) => match catch(f) {
                    Ok(()) => Invoked::Plain,
                    Err(e) => Invoked::Fail(e),
                },
                Callable::Condition(f) => match catch(f) {
                    Ok(r) => Invoked::Branch(r),
                    Err(e) => Invoked::Fail(e),
                },
                Callable::Subflow(f) => {
                    let mut sf = Subflow::new(self.domains);
                    match catch(AssertUnwindSafe(|| f(&mut sf))) {
                        Ok(()) => {
                            let (graph, detached) = sf.into_parts();
                            Invoked::Spawn { graph, detached }
                        }
                        Err(e) => Invoked::Fail(e),
                    }
                }
                Callable::Module => Invoked::Module(Arc::clone(
                    tn.module_child.as_ref().expect("module node has a child"),
                )),
                Callable::DeviceFlow(f) => {
                    let mut dg = DeviceGraph::new();
                    match catch(AssertUnwindSafe(|| f(&mut dg))) {
                        Ok(()) => match run_device_graph(&dg, self.max_streams) {
                            Ok(_) => Invoked::Plain,
                            Err(e) => Invoked::Fail(RunError::DeviceFlow(e)),
                        },
                        Err(e) => Invoked::Fail(e),
                    }
                }
                Callable::Capturer(f) => {
                    let mut cg = crate::capture::CapturedGraph::new();
                    match catch(AssertUnwindSafe(|| f(&mut cg))) {
                        Ok(()) => match run_device_graph(&cg, self.max_streams) {
                            Ok(_) => Invoked::Plain,
                            Err(e) => Invoked::Fail(RunError::DeviceFlow(e)),
                        },
                        Err(e) => Invoked::Fail(e),
                    }
                }
            }
        };

        match invoked {
            Invoked::Plain => {
                self.satisfy_strong_successors(ctx, &inst, node);
                self.finish_task(ctx, inst, node);
            }
            Invoked::Branch(r) => {
                let successors = graph.successors(node).unwrap();
                if r >= successors.len() {
                    self.fail_run(ctx, &inst, RunError::ConditionIndexOutOfRange {
                        node,
                        returned: r,
                        successors: successors.len(),
                    });
                } else {
                    // Weak dependency: jump straight to the indexed successor,
                    // bypassing its strong counter.
                    self.submit_task(ctx, TaskRef {
                        inst: Arc::clone(&inst),
                        node: successors[r],
                    });
                }
                self.finish_task(ctx, inst, node);
            }
            Invoked::Spawn { graph: mut spawned, detached } => {
                if spawned.node_count() == 0 {
                    self.satisfy_strong_successors(ctx, &inst, node);
                    self.finish_task(ctx, inst, node);
                    return;
                }
                if let Err(e) = spawned.finalize() {
                    self.fail_run(ctx, &inst, RunError::SpawnedGraphInvalid(e.to_string()));
                    self.finish_task(ctx, inst, node);
                    return;
                }
                let spawned = Arc::new(spawned);
                let mut coord = inst.coord.clone();
                coord.push(node);
                let parent = (!detached).then(|| ParentLink {
                    inst: Arc::clone(&inst),
                    node,
                });
                let child = GraphInstance::register(&inst.run, spawned, coord, parent);
                self.launch_instance(ctx, &child);
                if detached {
                    // The run still tracks the spawned tasks through
                    // `inflight`, but this task's successors proceed now.
                    self.satisfy_strong_successors(ctx, &inst, node);
                    self.finish_task(ctx, inst, node);
                }
            }
            Invoked::Module(child_graph) => {
                let mut coord = inst.coord.clone();
                coord.push(node);
                let child = GraphInstance::register(
                    &inst.run,
                    child_graph,
                    coord,
                    Some(ParentLink {
                        inst: Arc::clone(&inst),
                        node,
                    }),
                );
                self.launch_instance(ctx, &child);
            }
            Invoked::Fail(e) => {
                self.fail_run(ctx, &inst, e);
                self.finish_task(ctx, inst, node);
            }
        }
    }

    /// Submits every source of a fresh instance, counting all of them before
    /// the first push.
    fn launch_instance(&self, ctx: &mut WorkerCtx, inst: &Arc<GraphInstance>) {
        let sources = inst.graph.source_nodes();
        debug_assert!(!sources.is_empty());
        inst.pending.fetch_add(sources.len(), Ordering::SeqCst);
        inst.run.inflight.fetch_add(sources.len(), Ordering::SeqCst);
        for src in sources {
            self.deliver(ctx, TaskRef {
                inst: Arc::clone(inst),
                node: src,
            });
        }
    }

    fn fail_run(&self, _ctx: &mut WorkerCtx, inst: &Arc<GraphInstance>, err: RunError) {
        inst.run.record_error(err);
        self.initiate_stop();
    }

    fn satisfy_strong_successors(&self, ctx: &mut WorkerCtx, inst: &Arc<GraphInstance>, node: NodeId) {
        let successors = inst.graph.successors(node).unwrap();
        for &s in successors {
            if inst.strong[s].fetch_sub(1, Ordering::AcqRel) == 1 {
                self.submit_task(ctx, TaskRef {
                    inst: Arc::clone(inst),
                    node: s,
                });
            }
        }
    }

    /// Counts and delivers one task.
    fn submit_task(&self, ctx: &mut WorkerCtx, tref: TaskRef) {
        tref.inst.pending.fetch_add(1, Ordering::SeqCst);
        tref.inst.run.inflight.fetch_add(1, Ordering::SeqCst);
        self.deliver(ctx, tref);
    }

    /// Pushes a task into the calling worker's own deque for the task's
    /// domain. A cross-domain push notifies the target domain only when it
    /// is fully idle (no actives, no thieves).
    fn deliver(&self, ctx: &mut WorkerCtx, tref: TaskRef) {
        let dt = tref.inst.graph.domain(tref.node).unwrap();
        self.trace(ctx.id, TraceEventKind::Submit, TraceArg::Task {
            inst: tref.inst.seq,
            node: tref.node as u32,
        });
        ctx.deques[dt].push(tref);
        if dt != ctx.domain
            && self.actives[dt].load(Ordering::SeqCst) == 0
            && self.thieves[dt].load(Ordering::SeqCst) == 0
        {
            self.notify_one(ctx.id, dt);
        }
    }

    /// Marks one task finished; a drained joined instance completes its
    /// hosting node, cascading up the instance chain.
    fn finish_task(&self, ctx: &mut WorkerCtx, inst: Arc<GraphInstance>, node: NodeId) {
        let mut inst = inst;
        let mut _node = node;
        loop {
            let run = Arc::clone(&inst.run);
            let drained = inst.pending.fetch_sub(1, Ordering::SeqCst) == 1;
            if drained {
                if let Some(link) = &inst.parent {
                    let parent_inst = Arc::clone(&link.inst);
                    let parent_node = link.node;
                    // The hosting module/subflow node is now complete:
                    // satisfy its successors, then finish it too.
                    self.satisfy_strong_successors(ctx, &parent_inst, parent_node);
                    self.finish_one_inflight(&run);
                    inst = parent_inst;
                    _node = parent_node;
                    continue;
                }
            }
            self.finish_one_inflight(&run);
            break;
        }
    }

    fn finish_one_inflight(&self, run: &Arc<RunCtx>) {
        if run.inflight.fetch_sub(1, Ordering::SeqCst) == 1 {
            let err = run.error.lock().unwrap().clone();
            self.complete_run(run, err.map(Err).unwrap_or(Ok(())));
        }
    }

    /// Random-victim stealing: up to MAX_STEALS rounds of yield-then-steal
    /// over the same-domain deques of all workers plus the shared queue.
    fn explore_task(&self, ctx: &mut WorkerCtx, slot: &mut Option<TaskRef>) {
        debug_assert!(slot.is_none());
        let d = ctx.domain;
        let victims = self.worker_count + 1;
        let mut failed = 0u64;
        for _ in 0..self.max_steals {
            thread::yield_now();
            let v = (ctx.rng.next_u64() % victims as u64) as usize;
            let outcome = if v == self.worker_count {
                self.shared[d].steal.steal()
            } else {
                self.worker_steal[v][d].steal()
            };
            match outcome {
                Steal::Success(t) => {
                    self.stats[ctx.id].steals_ok.fetch_add(1, Ordering::Relaxed);
                    self.trace(ctx.id, TraceEventKind::StealOk, TraceArg::Task {
                        inst: t.inst.seq,
                        node: t.node as u32,
                    });
                    *slot = Some(t);
                    break;
                }
                Steal::Empty | Steal::Retry => {
                    failed += 1;
                    self.stats[ctx.id].wasteful.fetch_add(1, Ordering::Relaxed);
                    self.trace(ctx.id, TraceEventKind::StealFail, TraceArg::Domain(d as u32));
                }
            }
        }
        self.stats[ctx.id]
            .max_fail_per_explore
            .fetch_max(failed, Ordering::Relaxed);
    }

    /// One steal attempt at the shared queue (the prepare/cancel re-check path).
    fn steal_shared(&self, ctx: &mut WorkerCtx) -> Option<TaskRef> {
        let d = ctx.domain;
        match self.shared[d].steal.steal() {
            Steal::Success(t) => {
                self.stats[ctx.id].steals_ok.fetch_add(1, Ordering::Relaxed);
                self.trace(ctx.id, TraceEventKind::StealOk, TraceArg::Task {
                    inst: t.inst.seq,
                    node: t.node as u32,
                });
                Some(t)
            }
            _ => {
                self.stats[ctx.id].wasteful.fetch_add(1, Ordering::Relaxed);
                self.trace(ctx.id, TraceEventKind::StealFail, TraceArg::Domain(d as u32));
                None
            }
        }
    }

    /// The thief/sleep state machine. Returns false only on stop.
    ///
    /// The worker registers as a thief, explores, and on failure becomes a
    /// sleep candidate under the notifier's two-phase commit: it prepares,
    /// re-checks the shared queue and the stop flag, and (as the last thief)
    /// re-checks domain activity and every same-domain deque before
    /// committing. A failed shared-queue steal loops back into exploration
    /// with the thief count still held; the last-thief re-checks re-register
    /// before looping, keeping the count balanced.
    fn wait_for_task(&self, ctx: &mut WorkerCtx, slot: &mut Option<TaskRef>) -> bool {
        let d = ctx.domain;
        self.thieves[d].fetch_add(1, Ordering::SeqCst);
        loop {
            self.explore_task(ctx, slot);
            if slot.is_some() {
                if self.thieves[d].fetch_sub(1, Ordering::SeqCst) == 1 {
                    // Last thief going active: hand the thief role to a peer.
                    self.notify_one(ctx.id, d);
                }
                return true;
            }

            self.notifiers[d].prepare_wait(ctx.slot);

            if !self.shared[d].steal.is_empty() {
                self.notifiers[d].cancel_wait(ctx.slot);
                match self.steal_shared(ctx) {
                    Some(t) => {
                        *slot = Some(t);
                        if self.thieves[d].fetch_sub(1, Ordering::SeqCst) == 1 {
                            self.notify_one(ctx.id, d);
                        }
                        return true;
                    }
                    None => continue, // re-explore; thief count still held
                }
            }

            if self.stop.load(Ordering::SeqCst) {
                self.notifiers[d].cancel_wait(ctx.slot);
                self.notify_all_domains(ctx.id);
                self.thieves[d].fetch_sub(1, Ordering::SeqCst);
                return false;
            }

            if self.thieves[d].fetch_sub(1, Ordering::SeqCst) == 1 {
                // Last thief: parking now could strand work, so re-check.
                if self.actives[d].load(Ordering::SeqCst) > 0 {
                    self.notifiers[d].cancel_wait(ctx.slot);
                    self.thieves[d].fetch_add(1, Ordering::SeqCst);
                    continue;
                }
                let mut nonempty = false;
                for w in 0..self.worker_count {
                    if !self.worker_steal[w][d].is_empty() {
                        nonempty = true;
                        break;
                    }
                }
                if nonempty {
                    self.notifiers[d].cancel_wait(ctx.slot);
                    self.thieves[d].fetch_add(1, Ordering::SeqCst);
                    continue;
                }
            }

            self.stats[ctx.id].parks.fetch_add(1, Ordering::Relaxed);
            self.trace(ctx.id, TraceEventKind::Park, TraceArg::Domain(d as u32));
            self.notifiers[d].commit_wait(ctx.slot);
            self.trace(ctx.id, TraceEventKind::Unpark, TraceArg::Domain(d as u32));
            return true;
        }
    }
}

fn catch<R>(f: impl FnOnce() -> R) -> Result<R, RunError> {
    panic::catch_unwind(AssertUnwindSafe(f)).map_err(|payload| {
        let msg = if let Some(s) = payload.downcast_ref::<&str>() {
            (*s).to_string()
        } else if let Some(s) = payload.downcast_ref::<String>() {
            s.clone()
        } else {
            "<non-string panic payload>".to_string()
        };
        RunError::TaskPanic(msg)
    })
}
