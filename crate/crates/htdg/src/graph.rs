//! The heterogeneous task-graph model: builder, edge classification,
//! composition, validation, and DOT export.
//!
//! A [`TaskGraph`] starts as a single-threaded builder. Tasks are appended
//! with dense ordinal ids; `precede` records successor edges in call order
//! (the order is significant for condition tasks, whose return value indexes
//! into it). Edges out of a condition task are *weak*: they do not count
//! toward a dependent's strong-dependency counter and are instead followed
//! directly by the scheduler when the condition selects them. All other
//! edges are *strong*.
//!
//! `finalize` freezes the dependency counters and flips the graph into an
//! immutable, runnable state. A finalized graph is `Sync` and is shared with
//! the executor behind an `Arc`; all per-run mutable state lives in the
//! executor, not here.

use std::collections::{HashSet, VecDeque};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crate::capture::{CapturedGraph, DeviceGraph};
use crate::error::GraphError;

/// Index of an execution domain. Domain 0 is the host/CPU domain by convention.
pub type DomainId = usize;

/// Dense per-graph node ordinal, assigned in insertion order.
pub type NodeId = usize;

/// Process-unique identity of a [`TaskGraph`], used for composition-cycle
/// checks and for rejecting concurrent re-runs of one graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GraphId(pub u64);

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(0);

/// The five task kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskKind {
    /// Plain callable of no arguments.
    Static,
    /// Spawns a task graph dynamically while executing; joins its parent by default.
    Subflow,
    /// Runs another (finalized) graph to completion as a unit.
    Module,
    /// Returns an index selecting exactly one successor to run next.
    Condition,
    /// Describes a device-side op graph, transformed to a stream schedule and simulated.
    DeviceFlow,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TaskKind::Static => "static",
            TaskKind::Subflow => "subflow",
            TaskKind::Module => "module",
            TaskKind::Condition => "condition",
            TaskKind::DeviceFlow => "deviceflow",
        };
        f.write_str(s)
    }
}

pub(crate) enum Callable {
    Static(Box<dyn FnMut() + Send>),
    Condition(Box<dyn FnMut() -> usize + Send>),
    Subflow(Box<dyn FnMut(&mut Subflow) + Send>),
    /// Module nodes have no callable; execution drives the composed graph.
    Module,
    DeviceFlow(Box<dyn FnMut(&mut DeviceGraph) + Send>),
    Capturer(Box<dyn FnMut(&mut CapturedGraph) + Send>),
}

pub(crate) struct TaskNode {
    pub(crate) kind: TaskKind,
    pub(crate) domain: DomainId,
    pub(crate) name: String,
    pub(crate) callable: Mutex<Callable>,
    /// Successor ids in `precede` call order.
    pub(crate) successors: Vec<NodeId>,
    succ_set: HashSet<NodeId>,
    /// Number of incoming edges whose origin is not a condition node.
    pub(crate) strong_dependents: usize,
    /// Number of incoming edges whose origin is a condition node.
    pub(crate) weak_dependents: usize,
    /// Composed child graph, for module nodes.
    pub(crate) module_child: Option<Arc<TaskGraph>>,
}

/// Severity of a [`Diagnostic`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Severity {
    Warning,
    Error,
}

/// Lint codes produced by [`TaskGraph::validate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum DiagnosticCode {
    /// The graph has no node with zero dependencies; the scheduler has nowhere to start.
    NoSource,
    /// A node mixes a weak in-edge with a strong in-edge whose origin can run
    /// concurrently with the condition; both paths may touch the node at once.
    PossibleRace,
    /// A condition node has no successors, so any return value is out of range.
    DanglingCondition,
    /// Two module nodes over the same child graph may run concurrently.
    ConcurrentModuleUse,
}

impl fmt::Display for DiagnosticCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DiagnosticCode::NoSource => "NoSource",
            DiagnosticCode::PossibleRace => "PossibleRace",
            DiagnosticCode::DanglingCondition => "DanglingCondition",
            DiagnosticCode::ConcurrentModuleUse => "ConcurrentModuleUse",
        };
        f.write_str(s)
    }
}

/// One finding from [`TaskGraph::validate`].
#[derive(Debug, Clone)]
pub struct Diagnostic {
    pub severity: Severity,
    pub code: DiagnosticCode,
    /// Nodes involved, primary node first.
    pub nodes: Vec<NodeId>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        write!(f, "{sev}[{}]: {}", self.code, self.message)
    }
}

/// A container of tasks and dependencies, built single-threaded and then
/// finalized into an immutable runnable graph.
pub struct TaskGraph {
    id: GraphId,
    num_domains: usize,
    nodes: Vec<TaskNode>,
    /// Child graphs referenced by module nodes, in composition order.
    composed: Vec<Arc<TaskGraph>>,
    finalized: bool,
    /// Max over this graph's and all composed graphs' declared domain counts.
    required_domains: usize,
}

impl TaskGraph {
    /// Creates an empty graph configured with `num_domains` execution domains.
    ///
    /// Panics if `num_domains` is zero.
    pub fn new(num_domains: usize) -> Self {
        assert!(num_domains > 0, "a task graph needs at least one domain");
        TaskGraph {
            id: GraphId(NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed)),
            num_domains,
            nodes: Vec::new(),
            composed: Vec::new(),
            finalized: false,
            required_domains: num_domains,
        }
    }

    pub fn graph_id(&self) -> GraphId {
        self.id
    }

    pub fn num_domains(&self) -> usize {
        self.num_domains
    }

    /// Domain count an executor must provide to run this graph, including
    /// every graph it transitively composes.
    pub fn required_domains(&self) -> usize {
        self.required_domains
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.nodes.iter().map(|n| n.successors.len()).sum()
    }

    pub fn is_finalized(&self) -> bool {
        self.finalized
    }

    fn add_node(
        &mut self,
        name: &str,
        kind: TaskKind,
        domain: DomainId,
        callable: Callable,
    ) -> Result<NodeId, GraphError> {
        if self.finalized {
            return Err(GraphError::FinalizedGraph);
        }
        if domain >= self.num_domains {
            return Err(GraphError::UnknownDomain {
                domain,
                limit: self.num_domains,
            });
        }
        let id = self.nodes.len();
        self.nodes.push(TaskNode {
            kind,
            domain,
            name: name.to_string(),
            callable: Mutex::new(callable),
            successors: Vec::new(),
            succ_set: HashSet::new(),
            strong_dependents: 0,
            weak_dependents: 0,
            module_child: None,
        });
        Ok(id)
    }

    /// Adds a static task: a callable of no arguments.
    pub fn add_static(
        &mut self,
        name: &str,
        domain: DomainId,
        f: impl FnMut() + Send + 'static,
    ) -> Result<NodeId, GraphError> {
        self.add_node(name, TaskKind::Static, domain, Callable::Static(Box::new(f)))
    }

    /// Adds a condition task. The callable's return value indexes into the
    /// node's successor list (in `precede` call order) to pick the next task.
    pub fn add_condition(
        &mut self,
        name: &str,
        domain: DomainId,
        f: impl FnMut() -> usize + Send + 'static,
    ) -> Result<NodeId, GraphError> {
        self.add_node(
            name,
            TaskKind::Condition,
            domain,
            Callable::Condition(Box::new(f)),
        )
    }

    /// Adds a subflow task. While executing, the callable receives a
    /// [`Subflow`] builder and may spawn a task graph that (by default)
    /// joins this task before its successors run.
    pub fn add_subflow(
        &mut self,
        name: &str,
        domain: DomainId,
        f: impl FnMut(&mut Subflow) + Send + 'static,
    ) -> Result<NodeId, GraphError> {
        self.add_node(
            name,
            TaskKind::Subflow,
            domain,
            Callable::Subflow(Box::new(f)),
        )
    }

    /// Adds a device-flow task with an explicit op graph (known ops).
    pub fn add_deviceflow(
        &mut self,
        name: &str,
        domain: DomainId,
        f: impl FnMut(&mut DeviceGraph) + Send + 'static,
    ) -> Result<NodeId, GraphError> {
        self.add_node(
            name,
            TaskKind::DeviceFlow,
            domain,
            Callable::DeviceFlow(Box::new(f)),
        )
    }

    /// Adds a device-flow task whose body captures opaque stream-style calls.
    pub fn add_capturer(
        &mut self,
        name: &str,
        domain: DomainId,
        f: impl FnMut(&mut CapturedGraph) + Send + 'static,
    ) -> Result<NodeId, GraphError> {
        self.add_node(
            name,
            TaskKind::DeviceFlow,
            domain,
            Callable::Capturer(Box::new(f)),
        )
    }

    /// Composes `child` as a module task: at runtime the child graph runs to
    /// completion before the module node's successors are satisfied. The
    /// module node does not own the child; several module nodes may reference
    /// one graph, but they must not run concurrently (see
    /// [`DiagnosticCode::ConcurrentModuleUse`]). Module nodes live on domain 0.
    pub fn compose(&mut self, name: &str, child: &Arc<TaskGraph>) -> Result<NodeId, GraphError> {
        if self.finalized {
            return Err(GraphError::FinalizedGraph);
        }
        if !child.finalized {
            return Err(GraphError::UnfinalizedChild);
        }
        if child.composes_transitively(self.id) {
            return Err(GraphError::CompositionCycle);
        }
        let id = self.add_node(name, TaskKind::Module, 0, Callable::Module)?;
        self.nodes[id].module_child = Some(Arc::clone(child));
        self.composed.push(Arc::clone(child));
        self.required_domains = self.required_domains.max(child.required_domains);
        Ok(id)
    }

    /// True if `self` is `target` or reaches it through composition links.
    fn composes_transitively(&self, target: GraphId) -> bool {
        if self.id == target {
            return true;
        }
        self.composed
            .iter()
            .any(|c| c.composes_transitively(target))
    }

    /// Declares that `from` precedes every node in `to`, preserving call
    /// order. Edges out of a condition node are weak; all others are strong.
    ///
    /// The whole call is checked before any edge is applied, so an error
    /// leaves the graph unchanged.
    pub fn precede(&mut self, from: NodeId, to: &[NodeId]) -> Result<(), GraphError> {
        if self.finalized {
            return Err(GraphError::FinalizedGraph);
        }
        if from >= self.nodes.len() {
            return Err(GraphError::UnknownNode(from));
        }
        let is_condition = self.nodes[from].kind == TaskKind::Condition;
        let mut in_call: HashSet<NodeId> = HashSet::new();
        for &t in to {
            if t >= self.nodes.len() {
                return Err(GraphError::UnknownNode(t));
            }
            if t == from && !is_condition {
                return Err(GraphError::SelfLoopOnStrongEdge(from));
            }
            if self.nodes[from].succ_set.contains(&t) || !in_call.insert(t) {
                return Err(GraphError::DuplicateEdge { from, to: t });
            }
        }
        for &t in to {
            self.nodes[from].successors.push(t);
            self.nodes[from].succ_set.insert(t);
            if is_condition {
                self.nodes[t].weak_dependents += 1;
            } else {
                self.nodes[t].strong_dependents += 1;
            }
        }
        Ok(())
    }

    /// Declares that `to` succeeds every node in `from` (mirror of `precede`).
    pub fn succeed(&mut self, to: NodeId, from: &[NodeId]) -> Result<(), GraphError> {
        for &f in from {
            self.precede(f, &[to])?;
        }
        Ok(())
    }

    /// Renames a node (used for display, diagnostics, and DOT export).
    pub fn set_name(&mut self, node: NodeId, name: &str) -> Result<(), GraphError> {
        if self.finalized {
            return Err(GraphError::FinalizedGraph);
        }
        if node >= self.nodes.len() {
            return Err(GraphError::UnknownNode(node));
        }
        self.nodes[node].name = name.to_string();
        Ok(())
    }

    pub fn kind(&self, node: NodeId) -> Option<TaskKind> {
        self.nodes.get(node).map(|n| n.kind)
    }

    pub fn domain(&self, node: NodeId) -> Option<DomainId> {
        self.nodes.get(node).map(|n| n.domain)
    }

    pub fn name(&self, node: NodeId) -> Option<&str> {
        self.nodes.get(node).map(|n| n.name.as_str())
    }

    pub fn successors(&self, node: NodeId) -> Option<&[NodeId]> {
        self.nodes.get(node).map(|n| n.successors.as_slice())
    }

    pub fn strong_dependents(&self, node: NodeId) -> Option<usize> {
        self.nodes.get(node).map(|n| n.strong_dependents)
    }

    pub fn weak_dependents(&self, node: NodeId) -> Option<usize> {
        self.nodes.get(node).map(|n| n.weak_dependents)
    }

    /// A node is a source iff it has zero incoming edges of either kind.
    pub fn is_source(&self, node: NodeId) -> Option<bool> {
        self.nodes
            .get(node)
            .map(|n| n.strong_dependents + n.weak_dependents == 0)
    }

    /// First node carrying `name`, if any.
    pub fn node_by_name(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.name == name)
    }

    pub fn source_nodes(&self) -> Vec<NodeId> {
        (0..self.nodes.len())
            .filter(|&i| self.is_source(i) == Some(true))
            .collect()
    }

    /// The child graph composed by a module node.
    pub fn module_child(&self, node: NodeId) -> Option<&Arc<TaskGraph>> {
        self.nodes.get(node).and_then(|n| n.module_child.as_ref())
    }

    pub(crate) fn node(&self, id: NodeId) -> &TaskNode {
        &self.nodes[id]
    }

    /// Static lint over the built graph. Diagnostics are ordered by primary
    /// node id, then code; `finalize` rejects the graph only on
    /// error-severity findings.
    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut diags = Vec::new();

        if self.source_nodes().is_empty() {
            diags.push(Diagnostic {
                severity: Severity::Error,
                code: DiagnosticCode::NoSource,
                nodes: Vec::new(),
                message: "graph has no source node for the scheduler to start with".into(),
            });
        }

        // Predecessor lists, by scanning all edges once.
        let mut preds: Vec<Vec<NodeId>> = vec![Vec::new(); self.nodes.len()];
        for (u, node) in self.nodes.iter().enumerate() {
            for &v in &node.successors {
                preds[v].push(u);
            }
        }

        for (n, node) in self.nodes.iter().enumerate() {
            if node.kind == TaskKind::Condition && node.successors.is_empty() {
                diags.push(Diagnostic {
                    severity: Severity::Warning,
                    code: DiagnosticCode::DanglingCondition,
                    nodes: vec![n],
                    message: format!(
                        "condition task '{}' has no successors; any return value is out of range",
                        node.name
                    ),
                });
            }

            let weak_preds: Vec<NodeId> = preds[n]
                .iter()
                .copied()
                .filter(|&p| self.nodes[p].kind == TaskKind::Condition)
                .collect();
            let strong_preds: Vec<NodeId> = preds[n]
                .iter()
                .copied()
                .filter(|&p| self.nodes[p].kind != TaskKind::Condition)
                .collect();
            if !weak_preds.is_empty() && !strong_preds.is_empty() {
                'pairs: for &c in &weak_preds {
                    for &e in &strong_preds {
                        if self.reachable_from_sources_avoiding(e, c) {
                            diags.push(Diagnostic {
                                severity: Severity::Warning,
                                code: DiagnosticCode::PossibleRace,
                                nodes: vec![n, c, e],
                                message: format!(
                                    "'{}' may race: condition '{}' reaches it weakly while \
                                     '{}' reaches it strongly on an independent path",
                                    node.name, self.nodes[c].name, self.nodes[e].name
                                ),
                            });
                            break 'pairs;
                        }
                    }
                }
            }
        }

        // Module nodes sharing a child with no ordering path between them.
        let module_nodes: Vec<NodeId> = (0..self.nodes.len())
            .filter(|&i| self.nodes[i].kind == TaskKind::Module)
            .collect();
        for (i, &m1) in module_nodes.iter().enumerate() {
            for &m2 in &module_nodes[i + 1..] {
                let same_child = match (&self.nodes[m1].module_child, &self.nodes[m2].module_child)
                {
                    (Some(a), Some(b)) => a.id == b.id,
                    _ => false,
                };
                if same_child && !self.path_exists(m1, m2) && !self.path_exists(m2, m1) {
                    diags.push(Diagnostic {
                        severity: Severity::Warning,
                        code: DiagnosticCode::ConcurrentModuleUse,
                        nodes: vec![m1, m2],
                        message: format!(
                            "module tasks '{}' and '{}' compose the same graph and may run \
                             concurrently",
                            self.nodes[m1].name, self.nodes[m2].name
                        ),
                    });
                }
            }
        }

        diags.sort_by(|a, b| {
            let ka = (a.nodes.first().copied().unwrap_or(0), a.code);
            let kb = (b.nodes.first().copied().unwrap_or(0), b.code);
            ka.cmp(&kb)
        });
        diags
    }

    /// BFS over all edges from every source node, skipping `avoid` entirely.
    fn reachable_from_sources_avoiding(&self, target: NodeId, avoid: NodeId) -> bool {
        if target == avoid {
            return false;
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut queue: VecDeque<NodeId> = VecDeque::new();
        for s in self.source_nodes() {
            if s != avoid {
                seen[s] = true;
                queue.push_back(s);
            }
        }
        while let Some(u) = queue.pop_front() {
            if u == target {
                return true;
            }
            for &v in &self.nodes[u].successors {
                if v != avoid && !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        false
    }

    /// True if `to` is reachable from `from` over any edges.
    fn path_exists(&self, from: NodeId, to: NodeId) -> bool {
        let mut seen = vec![false; self.nodes.len()];
        let mut queue = VecDeque::from([from]);
        seen[from] = true;
        while let Some(u) = queue.pop_front() {
            for &v in &self.nodes[u].successors {
                if v == to {
                    return true;
                }
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        false
    }

    /// Freezes the dependency counters and makes the graph runnable and
    /// immutable. Fails if `validate` reports any error-severity diagnostic.
    pub fn finalize(&mut self) -> Result<(), GraphError> {
        if self.finalized {
            return Err(GraphError::FinalizedGraph);
        }
        let errors: Vec<Diagnostic> = self
            .validate()
            .into_iter()
            .filter(|d| d.severity == Severity::Error)
            .collect();
        if !errors.is_empty() {
            return Err(GraphError::ValidationFailed(errors));
        }
        self.finalized = true;
        Ok(())
    }

    /// Renders the graph as DOT. Condition nodes get `shape=diamond`, weak
    /// edges `style=dashed`, device-flow nodes `shape=box` with a domain
    /// label, and module nodes `shape=component`. Output is byte-stable for
    /// a given graph.
    pub fn export_dot(&self) -> String {
        let idents = self.dot_identifiers();
        let mut out = String::from("digraph {\n");
        for (i, node) in self.nodes.iter().enumerate() {
            let ident = &idents[i];
            match node.kind {
                TaskKind::Condition => out.push_str(&format!("  {ident} [shape=diamond];\n")),
                TaskKind::DeviceFlow => out.push_str(&format!(
                    "  {ident} [shape=box, label=\"{} (d{})\"];\n",
                    escape_dot(&node.name),
                    node.domain
                )),
                TaskKind::Module => out.push_str(&format!("  {ident} [shape=component];\n")),
                TaskKind::Static | TaskKind::Subflow => out.push_str(&format!("  {ident};\n")),
            }
        }
        for (u, node) in self.nodes.iter().enumerate() {
            for &v in &node.successors {
                if node.kind == TaskKind::Condition {
                    out.push_str(&format!("  {} -> {} [style=dashed];\n", idents[u], idents[v]));
                } else {
                    out.push_str(&format!("  {} -> {};\n", idents[u], idents[v]));
                }
            }
        }
        out.push_str("}\n");
        out
    }

    /// One DOT identifier per node: the sanitized name when it is unique and
    /// nonempty, otherwise suffixed with the node id.
    fn dot_identifiers(&self) -> Vec<String> {
        let mut counts: std::collections::HashMap<&str, usize> = std::collections::HashMap::new();
        for n in &self.nodes {
            *counts.entry(n.name.as_str()).or_insert(0) += 1;
        }
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, n)| {
                if n.name.is_empty() || counts[n.name.as_str()] > 1 {
                    format!("n{i}")
                } else {
                    dot_ident(&n.name)
                }
            })
            .collect()
    }
}

const DOT_KEYWORDS: [&str; 6] = ["graph", "digraph", "node", "edge", "subgraph", "strict"];

fn dot_ident(name: &str) -> String {
    let bare = !DOT_KEYWORDS.contains(&name.to_ascii_lowercase().as_str())
        && name
            .chars()
            .enumerate()
            .all(|(i, c)| c == '_' || c.is_ascii_alphabetic() || (i > 0 && c.is_ascii_digit()));
    if bare {
        name.to_string()
    } else {
        format!("\"{}\"", escape_dot(name))
    }
}

fn escape_dot(name: &str) -> String {
    name.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Builder handed to a subflow task while it executes. It spawns a private
/// task graph that by default joins the spawning task; call [`Subflow::detach`]
/// to let it run independently (the run still waits for it to finish).
///
/// Builder misuse (bad domain, duplicate edge, ...) panics; the executor
/// captures the panic and aborts the run with a task error.
pub struct Subflow {
    graph: TaskGraph,
    detached: bool,
}

impl Subflow {
    pub(crate) fn new(num_domains: usize) -> Self {
        Subflow {
            graph: TaskGraph::new(num_domains),
            detached: false,
        }
    }

    pub fn add_static(
        &mut self,
        name: &str,
        domain: DomainId,
        f: impl FnMut() + Send + 'static,
    ) -> NodeId {
        self.graph.add_static(name, domain, f).expect("subflow task")
    }

    pub fn add_condition(
        &mut self,
        name: &str,
        domain: DomainId,
        f: impl FnMut() -> usize + Send + 'static,
    ) -> NodeId {
        self.graph
            .add_condition(name, domain, f)
            .expect("subflow task")
    }

    pub fn add_subflow(
        &mut self,
        name: &str,
        domain: DomainId,
        f: impl FnMut(&mut Subflow) + Send + 'static,
    ) -> NodeId {
        self.graph
            .add_subflow(name, domain, f)
            .expect("subflow task")
    }

    pub fn add_deviceflow(
        &mut self,
        name: &str,
        domain: DomainId,
        f: impl FnMut(&mut DeviceGraph) + Send + 'static,
    ) -> NodeId {
        self.graph
            .add_deviceflow(name, domain, f)
            .expect("subflow task")
    }

    pub fn add_capturer(
        &mut self,
        name: &str,
        domain: DomainId,
        f: impl FnMut(&mut CapturedGraph) + Send + 'static,
    ) -> NodeId {
        self.graph
            .add_capturer(name, domain, f)
            .expect("subflow task")
    }

    pub fn compose(&mut self, name: &str, child: &Arc<TaskGraph>) -> NodeId {
        self.graph.compose(name, child).expect("subflow compose")
    }

    pub fn precede(&mut self, from: NodeId, to: &[NodeId]) {
        self.graph.precede(from, to).expect("subflow precede")
    }

    pub fn succeed(&mut self, to: NodeId, from: &[NodeId]) {
        self.graph.succeed(to, from).expect("subflow succeed")
    }

    /// Detaches the spawned graph: the spawning task's successors no longer
    /// wait for it, but the run as a whole still does.
    pub fn detach(&mut self) {
        self.detached = true;
    }

    pub fn is_detached(&self) -> bool {
        self.detached
    }

    pub fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    pub(crate) fn into_parts(self) -> (TaskGraph, bool) {
        (self.graph, self.detached)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nop() {}

    #[test]
    fn dense_ids_in_insertion_order() {
        let mut g = TaskGraph::new(1);
        let a = g.add_static("A", 0, nop).unwrap();
        let b = g.add_static("B", 0, nop).unwrap();
        let c = g.add_static("C", 0, nop).unwrap();
        let d = g.add_static("D", 0, nop).unwrap();
        assert_eq!((a, b, c, d), (0, 1, 2, 3));
    }

    #[test]
    fn add_task_rejects_unknown_domain() {
        let mut g = TaskGraph::new(2);
        let err = g.add_static("A", 2, nop).unwrap_err();
        assert!(matches!(err, GraphError::UnknownDomain { domain: 2, limit: 2 }));
    }

    #[test]
    fn add_task_after_finalize_fails() {
        let mut g = TaskGraph::new(1);
        g.add_static("A", 0, nop).unwrap();
        g.finalize().unwrap();
        assert!(matches!(
            g.add_static("B", 0, nop),
            Err(GraphError::FinalizedGraph)
        ));
        assert!(matches!(g.precede(0, &[0]), Err(GraphError::FinalizedGraph)));
    }

    #[test]
    fn condition_edges_are_weak() {
        // do-while shape: init -> body -> cond; cond -> (body, done)
        let mut g = TaskGraph::new(1);
        let init = g.add_static("init", 0, nop).unwrap();
        let body = g.add_static("body", 0, nop).unwrap();
        let cond = g.add_condition("cond", 0, || 1).unwrap();
        let done = g.add_static("done", 0, nop).unwrap();
        g.precede(init, &[body]).unwrap();
        g.precede(body, &[cond]).unwrap();
        g.precede(cond, &[body, done]).unwrap();

        assert_eq!(g.weak_dependents(body), Some(1));
        assert_eq!(g.strong_dependents(body), Some(1));
        assert_eq!(g.weak_dependents(done), Some(1));
        assert_eq!(g.strong_dependents(done), Some(0));
        assert_eq!(g.strong_dependents(cond), Some(1));
        // Successor order is the condition's index space.
        assert_eq!(g.successors(cond), Some(&[body, done][..]));
    }

    #[test]
    fn duplicate_edge_rejected() {
        let mut g = TaskGraph::new(1);
        let a = g.add_static("A", 0, nop).unwrap();
        let b = g.add_static("B", 0, nop).unwrap();
        g.precede(a, &[b]).unwrap();
        assert!(matches!(
            g.precede(a, &[b]),
            Err(GraphError::DuplicateEdge { from: 0, to: 1 })
        ));
        // Duplicates within one call are also rejected, atomically.
        let c = g.add_static("C", 0, nop).unwrap();
        assert!(matches!(
            g.precede(b, &[c, c]),
            Err(GraphError::DuplicateEdge { .. })
        ));
        assert_eq!(g.successors(b), Some(&[][..]));
    }

    #[test]
    fn self_loop_only_from_condition() {
        let mut g = TaskGraph::new(1);
        let a = g.add_static("A", 0, nop).unwrap();
        assert!(matches!(
            g.precede(a, &[a]),
            Err(GraphError::SelfLoopOnStrongEdge(0))
        ));
        let c = g.add_condition("C", 0, || 0).unwrap();
        g.precede(c, &[c]).unwrap();
        assert_eq!(g.weak_dependents(c), Some(1));
    }

    #[test]
    fn compose_requires_finalized_child() {
        let child = Arc::new({
            let mut c = TaskGraph::new(1);
            c.add_static("A", 0, nop).unwrap();
            c
        });
        let mut parent = TaskGraph::new(1);
        assert!(matches!(
            parent.compose("E", &child),
            Err(GraphError::UnfinalizedChild)
        ));
    }

    #[test]
    fn compose_links_and_ordering_counters() {
        let child = Arc::new({
            let mut c = TaskGraph::new(1);
            let a = c.add_static("A", 0, nop).unwrap();
            let b = c.add_static("B", 0, nop).unwrap();
            c.precede(a, &[b]).unwrap();
            c.finalize().unwrap();
            c
        });
        let mut parent = TaskGraph::new(1);
        let c0 = parent.add_static("C", 0, nop).unwrap();
        let d = parent.add_static("D", 0, nop).unwrap();
        let e = parent.compose("E", &child).unwrap();
        parent.precede(c0, &[d]).unwrap();
        parent.precede(d, &[e]).unwrap();
        assert_eq!(parent.kind(e), Some(TaskKind::Module));
        assert_eq!(parent.strong_dependents(e), Some(1));
        assert!(parent.module_child(e).is_some());
    }

    #[test]
    fn concurrent_module_use_is_a_warning() {
        let child = Arc::new({
            let mut c = TaskGraph::new(1);
            c.add_static("A", 0, nop).unwrap();
            c.finalize().unwrap();
            c
        });
        // Two unordered module nodes over the same child: warn.
        let mut g = TaskGraph::new(1);
        let m1 = g.compose("M1", &child).unwrap();
        let m2 = g.compose("M2", &child).unwrap();
        let diags = g.validate();
        assert!(diags
            .iter()
            .any(|d| d.code == DiagnosticCode::ConcurrentModuleUse
                && d.nodes == vec![m1, m2]
                && d.severity == Severity::Warning));
        // Ordering them silences the warning.
        let mut g2 = TaskGraph::new(1);
        let m1 = g2.compose("M1", &child).unwrap();
        let m2 = g2.compose("M2", &child).unwrap();
        g2.precede(m1, &[m2]).unwrap();
        assert!(g2
            .validate()
            .iter()
            .all(|d| d.code != DiagnosticCode::ConcurrentModuleUse));
    }

    #[test]
    fn no_source_cycle_fails_validation() {
        // Pure cycle of two condition tasks, no source anywhere.
        let mut g = TaskGraph::new(1);
        let c1 = g.add_condition("C1", 0, || 0).unwrap();
        let c2 = g.add_condition("C2", 0, || 0).unwrap();
        g.precede(c1, &[c2]).unwrap();
        g.precede(c2, &[c1]).unwrap();
        let diags = g.validate();
        assert!(diags
            .iter()
            .any(|d| d.code == DiagnosticCode::NoSource && d.severity == Severity::Error));
        assert!(matches!(g.finalize(), Err(GraphError::ValidationFailed(_))));
    }

    #[test]
    fn plain_dag_validates_clean() {
        let mut g = TaskGraph::new(1);
        let a = g.add_static("A", 0, nop).unwrap();
        let b = g.add_static("B", 0, nop).unwrap();
        let c = g.add_static("C", 0, nop).unwrap();
        let d = g.add_static("D", 0, nop).unwrap();
        g.precede(a, &[b, c]).unwrap();
        g.succeed(d, &[b, c]).unwrap();
        assert!(g.validate().is_empty());
        g.finalize().unwrap();
    }

    #[test]
    fn weak_and_independent_strong_edges_race() {
        // S -> C (condition), S -> E; C weakly -> D, E strongly -> D.
        let mut g = TaskGraph::new(1);
        let s = g.add_static("S", 0, nop).unwrap();
        let c = g.add_condition("C", 0, || 0).unwrap();
        let e = g.add_static("E", 0, nop).unwrap();
        let d = g.add_static("D", 0, nop).unwrap();
        g.precede(s, &[c, e]).unwrap();
        g.precede(c, &[d]).unwrap();
        g.precede(e, &[d]).unwrap();
        let diags = g.validate();
        let race: Vec<_> = diags
            .iter()
            .filter(|d| d.code == DiagnosticCode::PossibleRace)
            .collect();
        assert_eq!(race.len(), 1);
        assert_eq!(race[0].nodes, vec![d, c, e]);
        // Warnings do not block finalize.
        g.finalize().unwrap();
    }

    #[test]
    fn dangling_condition_warned() {
        let mut g = TaskGraph::new(1);
        let s = g.add_static("S", 0, nop).unwrap();
        let c = g.add_condition("C", 0, || 0).unwrap();
        g.precede(s, &[c]).unwrap();
        assert!(g
            .validate()
            .iter()
            .any(|d| d.code == DiagnosticCode::DanglingCondition && d.nodes == vec![c]));
    }

    #[test]
    fn dot_export_marks_kinds_and_weak_edges() {
        let mut g = TaskGraph::new(2);
        let init = g.add_static("init", 0, nop).unwrap();
        let body = g.add_static("body", 0, nop).unwrap();
        let cond = g.add_condition("cond", 0, || 0).unwrap();
        let done = g.add_static("done", 0, nop).unwrap();
        let dev = g.add_deviceflow("dev", 1, |_| {}).unwrap();
        g.precede(init, &[body]).unwrap();
        g.precede(body, &[cond]).unwrap();
        g.precede(cond, &[body, done]).unwrap();
        g.precede(done, &[dev]).unwrap();
        let dot = g.export_dot();
        assert!(dot.contains("cond [shape=diamond];"));
        assert!(dot.contains("cond -> body [style=dashed];"));
        assert!(dot.contains("dev [shape=box, label=\"dev (d1)\"];"));
        assert!(dot.contains("init -> body;"));
        assert_eq!(dot, g.export_dot());
    }

    #[test]
    fn dot_export_empty_graph() {
        let g = TaskGraph::new(1);
        assert_eq!(g.export_dot(), "digraph {\n}\n");
    }

    #[test]
    fn dot_export_nondeterministic_corpus_shape() {
        // init -> F1; F1 -> (F2, F1); F2 -> (F3, F1); F3 -> (stop, F1).
        let mut g = TaskGraph::new(1);
        let init = g.add_static("init", 0, nop).unwrap();
        let f1 = g.add_condition("F1", 0, || 0).unwrap();
        let f2 = g.add_condition("F2", 0, || 0).unwrap();
        let f3 = g.add_condition("F3", 0, || 0).unwrap();
        let stop = g.add_static("stop", 0, nop).unwrap();
        g.precede(init, &[f1]).unwrap();
        g.precede(f1, &[f2, f1]).unwrap();
        g.precede(f2, &[f3, f1]).unwrap();
        g.precede(f3, &[stop, f1]).unwrap();
        let dot = g.export_dot();
        assert_eq!(dot.matches("shape=diamond").count(), 3);
        assert_eq!(dot.matches("style=dashed").count(), 6);
        assert_eq!(dot.matches(" -> ").count(), 7); // 6 dashed + 1 solid
        assert_eq!(dot.matches(";\n").count(), 5 + 7);
    }

    #[test]
    fn composition_cycle_guard_on_identity() {
        // Arc ownership makes real cycles unbuildable through the public API;
        // the guard still refuses a child that (transitively) carries the
        // parent's identity.
        let mut inner = TaskGraph::new(1);
        inner.add_static("A", 0, nop).unwrap();
        inner.finalize().unwrap();
        let inner = Arc::new(inner);
        assert!(inner.composes_transitively(inner.id));
        assert!(!inner.composes_transitively(GraphId(u64::MAX)));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        /// Random build scripts: n nodes, a subset condition-kind, then a
        /// series of edges filtered through the builder's own rules.
        fn build_script() -> impl Strategy<Value = (usize, Vec<bool>, Vec<(usize, usize)>)> {
            (2usize..12).prop_flat_map(|n| {
                (
                    Just(n),
                    proptest::collection::vec(any::<bool>(), n),
                    proptest::collection::vec((0..n, 0..n), 0..40),
                )
            })
        }

        proptest! {
            #[test]
            fn edge_classification_recount((n, conds, edges) in build_script()) {
                let mut g = TaskGraph::new(1);
                for i in 0..n {
                    if conds[i] {
                        g.add_condition(&format!("c{i}"), 0, || 0).unwrap();
                    } else {
                        g.add_static(&format!("s{i}"), 0, || {}).unwrap();
                    }
                }
                for (u, v) in edges {
                    let _ = g.precede(u, &[v]);
                }
                // Recount every edge from scratch and compare to the counters.
                let mut strong = vec![0usize; n];
                let mut weak = vec![0usize; n];
                for u in 0..n {
                    for &v in g.successors(u).unwrap() {
                        if g.kind(u) == Some(TaskKind::Condition) {
                            weak[v] += 1;
                        } else {
                            strong[v] += 1;
                        }
                    }
                }
                for v in 0..n {
                    prop_assert_eq!(g.strong_dependents(v), Some(strong[v]));
                    prop_assert_eq!(g.weak_dependents(v), Some(weak[v]));
                    prop_assert_eq!(
                        g.is_source(v),
                        Some(strong[v] + weak[v] == 0)
                    );
                }
            }

            #[test]
            fn dot_is_deterministic((n, conds, edges) in build_script()) {
                let build = || {
                    let mut g = TaskGraph::new(1);
                    for i in 0..n {
                        if conds[i] {
                            g.add_condition(&format!("c{i}"), 0, || 0).unwrap();
                        } else {
                            g.add_static(&format!("s{i}"), 0, || {}).unwrap();
                        }
                    }
                    for &(u, v) in &edges {
                        let _ = g.precede(u, &[v]);
                    }
                    g.export_dot()
                };
                prop_assert_eq!(build(), build());
            }
        }
    }
}
