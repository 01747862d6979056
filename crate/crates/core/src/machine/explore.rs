use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::hash::{Hash, Hasher};

use rustc_hash::FxHasher;

use super::{Machine, MachineError, Thread};
use crate::history::HistoryEvent;
use crate::syntax::SourceProgram;
use crate::term::{Frame, Term};
use crate::value::{LocId, ThreadId, TxId, Value};

#[derive(Clone, Debug)]
pub struct ExploreConfig {
    pub max_depth: usize,
    /// Maximum number of distinct states visited.
    pub budget: usize,
    /// Keep the event log in states and summaries, so schedules with
    /// different histories are told apart.
    pub with_history: bool,
    pub input: String,
}

impl Default for ExploreConfig {
    fn default() -> Self {
        ExploreConfig {
            max_depth: 200,
            budget: 200_000,
            with_history: false,
            input: String::new(),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct ExploreResult {
    pub terminals: BTreeSet<super::Summary>,
    pub states: usize,
    /// Paths cut off by the depth bound.
    pub truncated: usize,
}

impl ExploreResult {
    pub fn all_deadlock(&self) -> bool {
        !self.terminals.is_empty() && self.terminals.iter().all(|s| s.deadlock)
    }

    pub fn any_deadlock(&self) -> bool {
        self.terminals.iter().any(|s| s.deadlock)
    }

    /// Terminal states without history, for comparing engines.
    pub fn outcomes(&self) -> BTreeSet<super::Summary> {
        self.terminals
            .iter()
            .map(|s| super::Summary {
                history: None,
                ..s.clone()
            })
            .collect()
    }
}

/// State key with transaction ids renamed in order of first appearance.
/// Location and thread ids are kept: they can hide inside host closures.
/// A state key with its hash computed once; terms are deep and the set rehashes.
#[derive(PartialEq, Eq)]
struct Hashed(u64, Key);

impl Hash for Hashed {
    fn hash<H: Hasher>(&self, state: &mut H) {
        state.write_u64(self.0);
    }
}

fn hashed(key: Key) -> Hashed {
    let mut h = FxHasher::default();
    key.hash(&mut h);
    Hashed(h.finish(), key)
}

/// Thread, renamed transaction, term, frames, restart snapshot, wait set.
type ThreadKey = (
    ThreadId,
    Option<u64>,
    Term,
    Vec<Frame>,
    Option<Term>,
    Option<Vec<(LocId, u64)>>,
);

#[derive(PartialEq, Eq, Hash)]
struct Key {
    heap: BTreeMap<LocId, Value>,
    work: BTreeMap<LocId, (Value, u64)>,
    forest: Vec<(ThreadId, ThreadId)>,
    threads: Vec<ThreadKey>,
    read_sets: Vec<(u64, BTreeSet<LocId>)>,
    counters: (u64, u64),
    input: usize,
    output: String,
    killed: BTreeSet<ThreadId>,
    versions: BTreeMap<LocId, u64>,
    events: Option<Vec<HistoryEvent>>,
}

fn key(m: &Machine, with_history: bool) -> Key {
    let mut names: BTreeMap<TxId, u64> = BTreeMap::new();
    let mut rename = |k: TxId| {
        let n = names.len() as u64;
        *names.entry(k).or_insert(n)
    };
    let mut threads = Vec::new();
    for (t, th) in &m.threads {
        match th {
            Thread::Plain { term, wait } => {
                threads.push((*t, None, term.clone(), Vec::new(), None, wait.clone()))
            }
            Thread::InTx {
                tx,
                term,
                cont,
                snapshot,
            } => threads.push((
                *t,
                Some(rename(m.find(*tx))),
                term.clone(),
                cont.clone(),
                Some(snapshot.clone()),
                None,
            )),
        }
    }
    let work = m
        .claims()
        .into_iter()
        .map(|(r, (v, k))| (r, (v, rename(k))))
        .collect();
    let read_sets = m
        .live_txs()
        .into_iter()
        .map(|k| (rename(k), m.txs.read_set(k)))
        .collect();
    Key {
        heap: m.heap.clone(),
        work,
        forest: m.forest.parent.iter().map(|(c, p)| (*c, *p)).collect(),
        threads,
        read_sets,
        counters: (m.next_thread, m.next_loc),
        input: m.input.len(),
        output: m.output.clone(),
        killed: m.killed.clone(),
        versions: m.versions.clone(),
        events: with_history.then(|| m.events.clone()),
    }
}

/// Depth-first enumeration of every schedule of `p` up to `cfg.max_depth`
/// transitions, returning the distinct terminal states.
pub fn explore(p: &SourceProgram, cfg: &ExploreConfig) -> Result<ExploreResult, MachineError> {
    explore_machine(Machine::from_program(p).with_input(&cfg.input), cfg)
}

pub fn explore_machine(start: Machine, cfg: &ExploreConfig) -> Result<ExploreResult, MachineError> {
    let mut start = start;
    start.record = cfg.with_history;
    if !cfg.with_history {
        start.events.clear();
    }
    let mut result = ExploreResult::default();
    let mut seen: HashSet<Hashed> = HashSet::new();
    seen.insert(hashed(key(&start, cfg.with_history)));
    let mut stack = vec![(start, 0usize)];
    while let Some((m, depth)) = stack.pop() {
        result.states += 1;
        let enabled = m.enabled();
        if enabled.is_empty() {
            result.terminals.insert(m.summary(cfg.with_history));
            continue;
        }
        if depth >= cfg.max_depth {
            result.truncated += 1;
            continue;
        }
        for tr in enabled {
            let mut next = m.clone();
            next.apply(tr)?;
            if seen.insert(hashed(key(&next, cfg.with_history))) {
                if seen.len() > cfg.budget {
                    return Err(MachineError::BudgetExceeded(cfg.budget));
                }
                stack.push((next, depth + 1));
            }
        }
    }
    Ok(result)
}
