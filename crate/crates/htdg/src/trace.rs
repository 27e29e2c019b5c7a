//! Line-oriented scheduler event trace, recorded when the executor runs with
//! `instrument: true`.
//!
//! Each line is `<monotonic-ns> <worker-id> <event> <arg>` with a stable
//! field order. Events submitted by external threads (graph submission,
//! shutdown) carry the worker id one past the last worker.

use std::fmt;

/// Scheduler event kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceEventKind {
    /// A task began executing.
    Exec,
    /// A task was submitted to a queue.
    Submit,
    /// A steal attempt returned a task.
    StealOk,
    /// A steal attempt found nothing (or lost a race).
    StealFail,
    /// notify_one/notify_all was issued on a domain.
    Notify,
    /// A worker committed to wait (about to block).
    Park,
    /// A worker returned from its wait.
    Unpark,
    /// A worker incremented its domain's active counter.
    ActiveInc,
    /// A worker decremented its domain's active counter.
    ActiveDec,
}

impl TraceEventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TraceEventKind::Exec => "EXEC",
            TraceEventKind::Submit => "SUBMIT",
            TraceEventKind::StealOk => "STEAL_OK",
            TraceEventKind::StealFail => "STEAL_FAIL",
            TraceEventKind::Notify => "NOTIFY",
            TraceEventKind::Park => "PARK",
            TraceEventKind::Unpark => "UNPARK",
            TraceEventKind::ActiveInc => "ACTIVE_INC",
            TraceEventKind::ActiveDec => "ACTIVE_DEC",
        }
    }
}

/// Argument payload of a trace event, rendered as one token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceArg {
    /// A task, addressed as instance sequence + node id: `i<seq>:n<node>`.
    Task { inst: u32, node: u32 },
    /// A domain: `d<domain>`.
    Domain(u32),
    /// Active-counter increment: `d<domain>:r<result>:t<thieves>`, where the
    /// thieves component is `t-` when the guard short-circuited before
    /// reading it (increment result was not 1).
    ActiveInc {
        domain: u32,
        result: i64,
        thieves: Option<i64>,
    },
    /// A notification: `d<domain>:one` or `d<domain>:all`.
    Notify { domain: u32, all: bool },
}

impl fmt::Display for TraceArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceArg::Task { inst, node } => write!(f, "i{inst}:n{node}"),
            TraceArg::Domain(d) => write!(f, "d{d}"),
            TraceArg::ActiveInc {
                domain,
                result,
                thieves,
            } => match thieves {
                Some(t) => write!(f, "d{domain}:r{result}:t{t}"),
                None => write!(f, "d{domain}:r{result}:t-"),
            },
            TraceArg::Notify { domain, all } => {
                write!(f, "d{domain}:{}", if *all { "all" } else { "one" })
            }
        }
    }
}

/// One recorded scheduler event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceEvent {
    /// Nanoseconds since the executor started.
    pub ns: u64,
    /// Worker id; external threads use the sentinel one past the last worker.
    pub worker: u32,
    pub kind: TraceEventKind,
    pub arg: TraceArg,
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} {}",
            self.ns,
            self.worker,
            self.kind.as_str(),
            self.arg
        )
    }
}

/// A merged, time-ordered event log drained from the executor.
#[derive(Debug, Clone, Default)]
pub struct TraceLog {
    pub events: Vec<TraceEvent>,
}

impl TraceLog {
    /// Renders the log in the stable line format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&e.to_string());
            out.push('\n');
        }
        out
    }

    /// Events of one worker, preserving order.
    pub fn of_worker(&self, worker: u32) -> Vec<&TraceEvent> {
        self.events.iter().filter(|e| e.worker == worker).collect()
    }

    /// The (worker, kind, arg) sequence with timestamps stripped; useful for
    /// determinism comparisons.
    pub fn shape(&self) -> Vec<(u32, TraceEventKind, TraceArg)> {
        self.events.iter().map(|e| (e.worker, e.kind, e.arg)).collect()
    }

    /// Checks the notification-soundness rule on this log: every active
    /// 0 -> 1 transition that observed zero thieves at the guard must be
    /// immediately followed (same worker) by a notify_one. Returns the
    /// offending event indexes.
    pub fn guard_notify_violations(&self) -> Vec<usize> {
        let mut bad = Vec::new();
        for (idx, e) in self.events.iter().enumerate() {
            if let TraceArg::ActiveInc {
                domain,
                result: 1,
                thieves: Some(0),
            } = e.arg
            {
                let next = self
                    .events
                    .iter()
                    .skip(idx + 1)
                    .find(|n| n.worker == e.worker);
                let ok = matches!(
                    next,
                    Some(TraceEvent {
                        kind: TraceEventKind::Notify,
                        arg: TraceArg::Notify { domain: d, all: false },
                        ..
                    }) if *d == domain
                );
                if !ok {
                    bad.push(idx);
                }
            }
        }
        bad
    }
}
