//! Transactional histories: recording, serialization and opacity analysis.

mod analysis;
mod opg;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::value::{LocId, ThreadId, TxId};

pub use analysis::{
    expand_merges, happens_before, is_consistent, nonlocal, reads_from, HappensBefore,
};
pub use opg::{
    acyclic, build_opg, check_opaque, check_opaque_with, find_cycle, natural_order, red_forest,
    well_formed, Clause, Colour, Edge, Failure, OpacityGraph, Verdict,
};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum EventKind {
    Begin,
    /// Values are kept in their canonical text form.
    Read {
        loc: LocId,
        value: String,
    },
    Write {
        loc: LocId,
        value: String,
    },
    Commit,
    Abort,
    Merge {
        into: TxId,
    },
    NewLoc {
        loc: LocId,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::Begin => "begin",
            EventKind::Read { .. } => "read",
            EventKind::Write { .. } => "write",
            EventKind::Commit => "commit",
            EventKind::Abort => "abort",
            EventKind::Merge { .. } => "merge",
            EventKind::NewLoc { .. } => "new",
        }
    }

    pub fn loc(&self) -> Option<LocId> {
        match self {
            EventKind::Read { loc, .. }
            | EventKind::Write { loc, .. }
            | EventKind::NewLoc { loc } => Some(*loc),
            _ => None,
        }
    }

    pub fn is_read(&self) -> bool {
        matches!(self, EventKind::Read { .. })
    }

    pub fn is_write(&self) -> bool {
        matches!(self, EventKind::Write { .. })
    }

    pub fn is_access(&self) -> bool {
        self.is_read() || self.is_write()
    }

    fn is_final(&self) -> bool {
        matches!(self, EventKind::Commit | EventKind::Abort)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct HistoryEvent {
    pub seq: u64,
    pub tx: TxId,
    pub thread: Option<ThreadId>,
    pub kind: EventKind,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum TxStatus {
    Running,
    CommitPending,
    Committed,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HistoryError {
    #[error("event {seq}: sequence numbers must be strictly increasing")]
    NonMonotonicSeq { seq: u64 },
    #[error("event {seq}: transaction {tx} already finished")]
    AfterFinish { seq: u64, tx: TxId },
    #[error("line {line}: {message}")]
    Decode { line: usize, message: String },
}

/// A time-ordered sequence of transactional events.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct History {
    pub events: Vec<HistoryEvent>,
    /// Transactions that prepared to commit by merging into another one.
    pub commit_pending: BTreeSet<TxId>,
}

impl History {
    pub fn new(events: Vec<HistoryEvent>) -> Self {
        History {
            events,
            commit_pending: BTreeSet::new(),
        }
    }

    /// Builds a history from `(tx, kind)` pairs, numbering events in order.
    pub fn from_ops(ops: impl IntoIterator<Item = (TxId, EventKind)>) -> Self {
        History::new(
            ops.into_iter()
                .enumerate()
                .map(|(i, (tx, kind))| HistoryEvent {
                    seq: i as u64,
                    tx,
                    thread: None,
                    kind,
                })
                .collect(),
        )
    }

    /// Checks ordering and that nothing is issued after a commit or abort.
    pub fn validate(&self) -> Result<(), HistoryError> {
        let mut last: Option<u64> = None;
        let mut finished = BTreeSet::new();
        for e in &self.events {
            if last.is_some_and(|l| e.seq <= l) {
                return Err(HistoryError::NonMonotonicSeq { seq: e.seq });
            }
            last = Some(e.seq);
            if finished.contains(&e.tx) {
                return Err(HistoryError::AfterFinish {
                    seq: e.seq,
                    tx: e.tx,
                });
            }
            if e.kind.is_final() {
                finished.insert(e.tx);
            }
        }
        Ok(())
    }

    /// Transactions with at least one event, in order of first appearance.
    pub fn transactions(&self) -> Vec<TxId> {
        let mut seen = BTreeSet::new();
        self.events
            .iter()
            .filter(|e| seen.insert(e.tx))
            .map(|e| e.tx)
            .collect()
    }

    /// The initializing transaction `t0` is committed whether or not it has a commit event.
    pub fn status(&self, tx: TxId) -> TxStatus {
        if tx == TxId::INIT {
            return TxStatus::Committed;
        }
        for e in self.events.iter().rev().filter(|e| e.tx == tx) {
            match e.kind {
                EventKind::Commit => return TxStatus::Committed,
                EventKind::Abort => return TxStatus::Aborted,
                _ => {}
            }
        }
        if self.commit_pending.contains(&tx) {
            TxStatus::CommitPending
        } else {
            TxStatus::Running
        }
    }

    pub fn statuses(&self) -> BTreeMap<TxId, TxStatus> {
        self.transactions()
            .into_iter()
            .map(|t| (t, self.status(t)))
            .collect()
    }

    pub fn merges(&self) -> impl Iterator<Item = (TxId, TxId)> + '_ {
        self.events.iter().filter_map(|e| match e.kind {
            EventKind::Merge { into } => Some((e.tx, into)),
            _ => None,
        })
    }

    pub fn commits(&self) -> impl Iterator<Item = TxId> + '_ {
        self.events
            .iter()
            .filter(|e| e.kind == EventKind::Commit)
            .map(|e| e.tx)
    }

    /// One JSON record per line: `seq`, `tx`, `thread`, `kind`, `loc`, `value`.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            let (loc, value) = match &e.kind {
                EventKind::Read { loc, value } | EventKind::Write { loc, value } => {
                    (Some(loc.0), Some(value.clone()))
                }
                EventKind::NewLoc { loc } => (Some(loc.0), None),
                EventKind::Merge { into } => (None, Some(into.0.to_string())),
                _ => (None, None),
            };
            let rec = Record {
                seq: e.seq,
                tx: Some(e.tx.0),
                thread: e.thread.map(|t| t.0),
                kind: e.kind.name().to_string(),
                loc,
                value,
            };
            out.push_str(&serde_json::to_string(&rec).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<History, HistoryError> {
        let mut events = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| HistoryError::Decode {
                line: line_no,
                message,
            };
            let rec: Record = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
            let tx = rec
                .tx
                .ok_or_else(|| err("event without a transaction".into()))?;
            let loc = || {
                rec.loc
                    .map(LocId)
                    .ok_or_else(|| err("missing `loc`".into()))
            };
            let value = || {
                rec.value
                    .clone()
                    .ok_or_else(|| err("missing `value`".into()))
            };
            let kind =
                match rec.kind.as_str() {
                    "begin" => EventKind::Begin,
                    "read" => EventKind::Read {
                        loc: loc()?,
                        value: value()?,
                    },
                    "write" => EventKind::Write {
                        loc: loc()?,
                        value: value()?,
                    },
                    "commit" => EventKind::Commit,
                    "abort" => EventKind::Abort,
                    "merge" => EventKind::Merge {
                        into: TxId(value()?.parse().map_err(|_| {
                            err("merge target must be a transaction number".into())
                        })?),
                    },
                    "new" => EventKind::NewLoc { loc: loc()? },
                    other => return Err(err(format!("unknown event kind `{other}`"))),
                };
            events.push(HistoryEvent {
                seq: rec.seq,
                tx: TxId(tx),
                thread: rec.thread.map(ThreadId),
                kind,
            });
        }
        let h = History::new(events);
        h.validate()?;
        Ok(h)
    }
}

#[derive(Serialize, Deserialize)]
struct Record {
    seq: u64,
    tx: Option<u64>,
    thread: Option<u64>,
    kind: String,
    loc: Option<u64>,
    value: Option<String>,
}

/// Append-only, totally ordered, thread-safe event sink.
#[derive(Debug, Default)]
pub struct Recorder {
    next: AtomicU64,
    events: Mutex<Vec<HistoryEvent>>,
}

impl Recorder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, tx: TxId, thread: Option<ThreadId>, kind: EventKind) -> u64 {
        let mut events = self.events.lock().unwrap_or_else(|p| p.into_inner());
        // The sequence number is taken under the lock so vector order and seq agree.
        let seq = self.next.fetch_add(1, Ordering::SeqCst);
        events.push(HistoryEvent {
            seq,
            tx,
            thread,
            kind,
        });
        seq
    }

    pub fn len(&self) -> usize {
        self.events.lock().unwrap_or_else(|p| p.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn snapshot(&self) -> History {
        History::new(
            self.events
                .lock()
                .unwrap_or_else(|p| p.into_inner())
                .clone(),
        )
    }
}
