//! Reference small-step machine.
//!
//! A state holds the heap, the working memory of claims, the fork forest and
//! the thread family. [`Machine::enabled`] lists the transitions a scheduler
//! may pick and [`Machine::apply`] performs one. Every transition is
//! deterministic, so a run is fixed by the program, the input and the
//! sequence of choices.

mod explore;
mod rules;
mod sched;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use thiserror::Error;

use crate::history::{EventKind, History, HistoryEvent};
use crate::syntax::SourceProgram;
use crate::term::{EvalError, Expr, Frame, Term};
use crate::value::{LocId, ThreadId, TxId, Value};

pub use explore::{explore, explore_machine, ExploreConfig, ExploreResult};
pub(crate) use rules::kind_name;
pub use rules::reduce_term;
pub use sched::{Policy, RunOutcome, RunResult, Summary, ThreadOutcome};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MachineError {
    #[error("location {0} is not allocated")]
    UnallocatedLocation(LocId),
    #[error("evaluation error: {0}")]
    Eval(#[from] EvalError),
    #[error("not a redex")]
    NotARedex,
    #[error("thread {0} cannot step: {1}")]
    Stuck(ThreadId, String),
    #[error("no such transition: {0}")]
    NotApplicable(String),
    #[error("sub-derivation of thread {0} did not finish within {1} steps")]
    OutOfFuel(ThreadId, usize),
    #[error("state budget of {0} exceeded")]
    BudgetExceeded(usize),
}

/// Labels of machine transitions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Label {
    Tau,
    Input(char),
    Output(char),
    New(TxId),
    Commit(TxId),
    Abort(TxId, ThreadId, Value),
    /// A transaction whose participant reached a top-level `retry` was reset.
    Restart(TxId),
}

/// A choice available to the scheduler.
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Transition {
    /// Internal or IO step of one thread, including `New`.
    Step(ThreadId),
    Commit(TxId),
    Abort {
        tx: TxId,
        thread: ThreadId,
    },
    Restart(TxId),
}

impl fmt::Display for Transition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Transition::Step(t) => write!(f, "step {t}"),
            Transition::Commit(k) => write!(f, "commit {k}"),
            Transition::Abort { tx, thread } => write!(f, "abort {tx} by {thread}"),
            Transition::Restart(k) => write!(f, "restart {k}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Thread {
    Plain {
        term: Term,
        /// Read-set versions a restarted transaction waits on.
        wait: Option<Vec<(LocId, u64)>>,
    },
    InTx {
        /// As created; resolve with [`Machine::find`].
        tx: TxId,
        term: Term,
        cont: Vec<Frame>,
        snapshot: Term,
    },
}

impl Thread {
    pub fn plain(term: Term) -> Thread {
        Thread::Plain { term, wait: None }
    }

    pub fn term(&self) -> &Term {
        match self {
            Thread::Plain { term, .. } | Thread::InTx { term, .. } => term,
        }
    }
}

/// Fork forest: child to parent links. Threads without a parent are roots.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Forest {
    parent: BTreeMap<ThreadId, ThreadId>,
}

impl Forest {
    pub fn add_child(&mut self, parent: ThreadId, child: ThreadId) {
        self.parent.insert(child, parent);
    }

    pub fn root(&self, mut t: ThreadId) -> ThreadId {
        while let Some(p) = self.parent.get(&t) {
            t = *p;
        }
        t
    }

    pub fn is_root(&self, t: ThreadId) -> bool {
        !self.parent.contains_key(&t)
    }

    pub fn parent(&self, t: ThreadId) -> Option<ThreadId> {
        self.parent.get(&t).copied()
    }

    /// Removes the whole tree rooted at `r`.
    pub fn remove(&mut self, r: ThreadId) {
        let members: Vec<ThreadId> = self
            .parent
            .keys()
            .copied()
            .filter(|t| self.root(*t) == r)
            .collect();
        for t in members {
            self.parent.remove(&t);
        }
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }
}

/// Live transactions as a union-find over ids.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct TxTable {
    parent: BTreeMap<TxId, TxId>,
    read_sets: BTreeMap<TxId, BTreeSet<LocId>>,
}

impl TxTable {
    pub fn find(&self, mut k: TxId) -> TxId {
        while let Some(p) = self.parent.get(&k) {
            k = *p;
        }
        k
    }

    /// Makes `j` the representative of `k`'s class. Returns false if already joined.
    pub fn union(&mut self, k: TxId, j: TxId) -> bool {
        let (k, j) = (self.find(k), self.find(j));
        if k == j {
            return false;
        }
        self.parent.insert(k, j);
        if let Some(rs) = self.read_sets.remove(&k) {
            self.read_sets.entry(j).or_default().extend(rs);
        }
        true
    }

    pub fn read_set(&self, k: TxId) -> BTreeSet<LocId> {
        self.read_sets
            .get(&self.find(k))
            .cloned()
            .unwrap_or_default()
    }

    pub(crate) fn note_read(&mut self, k: TxId, r: LocId) {
        let k = self.find(k);
        self.read_sets.entry(k).or_default().insert(r);
    }

    /// Drops every id whose class is `k`.
    pub(crate) fn retire(&mut self, k: TxId) {
        let k = self.find(k);
        let members: Vec<TxId> = self
            .parent
            .keys()
            .copied()
            .filter(|m| self.find(*m) == k)
            .collect();
        for m in members {
            self.parent.remove(&m);
        }
        self.read_sets.remove(&k);
    }
}

/// Machine state: memory, threads, fresh-name counters, IO and the event log.
#[derive(Clone, Debug)]
pub struct Machine {
    pub heap: BTreeMap<LocId, Value>,
    /// Claims, with the claiming transaction as recorded at claim time.
    pub work: BTreeMap<LocId, (Value, TxId)>,
    pub forest: Forest,
    pub threads: BTreeMap<ThreadId, Thread>,
    pub txs: TxTable,
    pub next_tx: u64,
    pub next_thread: u64,
    pub next_loc: u64,
    pub input: VecDeque<char>,
    pub output: String,
    pub killed: BTreeSet<ThreadId>,
    /// Bumped on every heap or claim write; restarted transactions wait on these.
    pub versions: BTreeMap<LocId, u64>,
    pub events: Vec<HistoryEvent>,
    pub record: bool,
    pub thread_names: BTreeMap<ThreadId, String>,
    pub var_names: BTreeMap<LocId, String>,
    pub fuel: usize,
}

impl Default for Machine {
    fn default() -> Self {
        Machine {
            heap: BTreeMap::new(),
            work: BTreeMap::new(),
            forest: Forest::default(),
            threads: BTreeMap::new(),
            txs: TxTable::default(),
            next_tx: 1,
            next_thread: 0,
            next_loc: 0,
            input: VecDeque::new(),
            output: String::new(),
            killed: BTreeSet::new(),
            versions: BTreeMap::new(),
            events: Vec::new(),
            record: true,
            thread_names: BTreeMap::new(),
            var_names: BTreeMap::new(),
            fuel: 100_000,
        }
    }
}

impl Machine {
    pub fn new() -> Self {
        Self::default()
    }

    /// Loads a program: declared variables become locations `0..m` written
    /// by the initializing transaction, threads become `0..n`.
    pub fn from_program(p: &SourceProgram) -> Self {
        let mut m = Machine::new();
        let mut globals = Vec::new();
        for v in &p.vars {
            let r = m.alloc_heap(v.init.clone());
            m.var_names.insert(r, v.name.clone());
            globals.push((v.name.clone(), Value::Loc(r)));
        }
        for th in &p.threads {
            let term = globals
                .iter()
                .fold(th.term.clone(), |t, (x, v)| t.subst(x, v));
            let t = m.spawn(term);
            m.thread_names.insert(t, th.name.clone());
        }
        m
    }

    pub fn with_input(mut self, input: &str) -> Self {
        self.input = input.chars().collect();
        self
    }

    /// Allocates a committed location as the initializing transaction.
    pub fn alloc_heap(&mut self, v: Value) -> LocId {
        let r = LocId(self.next_loc);
        self.next_loc += 1;
        self.emit(TxId::INIT, None, EventKind::NewLoc { loc: r });
        self.emit(
            TxId::INIT,
            None,
            EventKind::Write {
                loc: r,
                value: v.to_string(),
            },
        );
        self.heap.insert(r, v);
        r
    }

    pub fn spawn(&mut self, term: Term) -> ThreadId {
        let t = ThreadId(self.next_thread);
        self.next_thread += 1;
        self.threads.insert(t, Thread::plain(term));
        t
    }

    pub fn find(&self, k: TxId) -> TxId {
        self.txs.find(k)
    }

    /// Current transaction of `t`, if it is inside one.
    pub fn tx_of(&self, t: ThreadId) -> Option<TxId> {
        match self.threads.get(&t)? {
            Thread::InTx { tx, .. } => Some(self.find(*tx)),
            Thread::Plain { .. } => None,
        }
    }

    /// Working memory with every claimant resolved to its representative.
    pub fn claims(&self) -> BTreeMap<LocId, (Value, TxId)> {
        self.work
            .iter()
            .map(|(r, (v, k))| (*r, (v.clone(), self.find(*k))))
            .collect()
    }

    /// Threads of transaction `k`, in id order.
    pub fn participants(&self, k: TxId) -> Vec<ThreadId> {
        let k = self.find(k);
        self.threads
            .keys()
            .copied()
            .filter(|t| self.tx_of(*t) == Some(k))
            .collect()
    }

    /// Live transaction representatives.
    pub fn live_txs(&self) -> BTreeSet<TxId> {
        self.threads.keys().filter_map(|t| self.tx_of(*t)).collect()
    }

    pub fn history(&self) -> History {
        History::new(self.events.clone())
    }

    fn emit(&mut self, tx: TxId, thread: Option<ThreadId>, kind: EventKind) {
        if self.record {
            let seq = self.events.len() as u64;
            self.events.push(HistoryEvent {
                seq,
                tx,
                thread,
                kind,
            });
        }
    }

    fn bump(&mut self, r: LocId) {
        *self.versions.entry(r).or_default() += 1;
    }

    /// Copy of everything except the event log, with recording off.
    pub fn scratch(&self) -> Machine {
        let mut m = self.clone_without_events();
        m.record = false;
        m
    }

    fn clone_without_events(&self) -> Machine {
        Machine {
            heap: self.heap.clone(),
            work: self.work.clone(),
            forest: self.forest.clone(),
            threads: self.threads.clone(),
            txs: self.txs.clone(),
            next_tx: self.next_tx,
            next_thread: self.next_thread,
            next_loc: self.next_loc,
            input: self.input.clone(),
            output: self.output.clone(),
            killed: self.killed.clone(),
            versions: self.versions.clone(),
            events: Vec::new(),
            record: self.record,
            thread_names: self.thread_names.clone(),
            var_names: self.var_names.clone(),
            fuel: self.fuel,
        }
    }

    /// Checks the structural invariants: one claimant per location (by
    /// construction of the map), claimants are live, forest members are in
    /// transactions, and referenced ids are known.
    pub fn check_invariants(&self) -> Result<(), String> {
        let live = self.live_txs();
        for (r, (_, k)) in self.claims() {
            if !live.contains(&k) {
                return Err(format!("{r} claimed by dead transaction {k}"));
            }
        }
        for t in self.forest.parent.keys() {
            if self.tx_of(*t).is_none() {
                return Err(format!("forked thread {t} outside a transaction"));
            }
            let root = self.forest.root(*t);
            if self.tx_of(root) != self.tx_of(*t) {
                return Err(format!(
                    "thread {t} and its root {root} in different transactions"
                ));
            }
        }
        for r in self.heap.keys().chain(self.work.keys()) {
            if r.0 >= self.next_loc {
                return Err(format!("location {r} beyond allocation counter"));
            }
        }
        Ok(())
    }
}

/// `commit(k, Σ)`: the heap with every value claimed by `k` published.
pub fn commit_fn(k: TxId, m: &Machine) -> BTreeMap<LocId, Value> {
    let mut heap = m.heap.clone();
    for (r, (v, j)) in m.claims() {
        if j == m.find(k) {
            heap.insert(r, v);
        }
    }
    heap
}

/// `cleanup(k, Σ)`: the working memory without `k`'s claims.
pub fn cleanup_fn(k: TxId, m: &Machine) -> BTreeMap<LocId, (Value, TxId)> {
    let k = m.find(k);
    m.work
        .iter()
        .filter(|(_, (_, j))| m.find(*j) != k)
        .map(|(r, e)| (*r, e.clone()))
        .collect()
}

/// `leak(k, Σ)`: the heap plus locations that exist only as claims of `k`.
pub fn leak_fn(k: TxId, m: &Machine) -> BTreeMap<LocId, Value> {
    let mut heap = m.heap.clone();
    for (r, (v, j)) in m.claims() {
        if j == m.find(k) {
            heap.entry(r).or_insert(v);
        }
    }
    heap
}

pub(crate) fn eval_value(e: &Expr) -> Result<Value, MachineError> {
    Ok(e.eval()?)
}
