//! Multi-threaded runtime.
//!
//! Every thread of the program runs on its own OS thread. Shared state (the
//! committed heap, the claim table and the transaction registry) lives behind
//! one mutex; an isolation token serialises isolated sections against all
//! other transactional operations. Commit is a barrier over the participants
//! of a (possibly merged) transaction: the last one to become ready publishes
//! the write set. Aborts and restarts are delivered as directives that the
//! affected threads pick up at their next transactional operation or wait.

mod interp;
mod tx;

use std::collections::{BTreeMap, VecDeque};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::history::{EventKind, History, Recorder};
use crate::machine::{MachineError, Summary, ThreadOutcome, TxTable};
use crate::syntax::SourceProgram;
use crate::term::Term;
use crate::value::{LocId, ThreadId, TxId, Value};

#[derive(Clone, Debug)]
pub struct RuntimeConfig {
    /// How long the whole system may go without progress before the run is
    /// declared deadlocked.
    pub timeout: Duration,
    pub input: String,
    pub record: bool,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        RuntimeConfig {
            timeout: Duration::from_secs(5),
            input: String::new(),
            record: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RuntimeError {
    #[error("uncaught exception {0}")]
    Uncaught(Value),
    #[error("probable deadlock: no progress for {0:?}")]
    Deadlock(Duration),
    #[error(transparent)]
    Machine(#[from] MachineError),
    #[error("atomic block inside a transaction")]
    NestedAtomic,
    #[error("a runtime thread panicked")]
    Panicked,
}

/// What a participant must do once its transaction is decided.
#[derive(Clone, Debug, PartialEq)]
enum Directive {
    Committed(Value),
    Rethrow(Value),
    Killed,
    /// Re-run the atomic block, optionally after one of these locations changes.
    Restart(Option<Vec<(LocId, u64)>>),
}

#[derive(Clone, Debug)]
struct Part {
    tx: Option<TxId>,
    parent: Option<ThreadId>,
    ready: Option<Value>,
    directive: Option<Directive>,
}

#[derive(Debug)]
struct Shared {
    heap: BTreeMap<LocId, Value>,
    /// Committed writes per location.
    versions: BTreeMap<LocId, u64>,
    /// Any write per location, tentative or committed.
    change: BTreeMap<LocId, u64>,
    claims: BTreeMap<LocId, (Value, TxId)>,
    txs: TxTable,
    parts: BTreeMap<ThreadId, Part>,
    next_tx: u64,
    next_thread: u64,
    next_loc: u64,
    iso: Option<ThreadId>,
    pending: Vec<(TxId, Option<ThreadId>, EventKind)>,
    input: VecDeque<char>,
    output: String,
    last_progress: Instant,
    deadlock: bool,
    commits: usize,
}

struct Inner {
    state: Mutex<Shared>,
    cv: Condvar,
    recorder: Recorder,
    cfg: RuntimeConfig,
    handles: Mutex<Vec<JoinHandle<()>>>,
    outcomes: Mutex<BTreeMap<ThreadId, Result<Value, RuntimeError>>>,
    names: Mutex<(BTreeMap<LocId, String>, BTreeMap<ThreadId, String>)>,
}

impl Inner {
    fn lock(&self) -> MutexGuard<'_, Shared> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }
}

/// Handle to a runtime instance; clones share it.
#[derive(Clone)]
pub struct Runtime {
    inner: Arc<Inner>,
}

/// Result of running a program to quiescence.
#[derive(Clone, Debug)]
pub struct RunReport {
    pub heap: BTreeMap<LocId, Value>,
    pub var_names: BTreeMap<LocId, String>,
    pub thread_names: BTreeMap<ThreadId, String>,
    pub outcomes: BTreeMap<ThreadId, ThreadOutcome>,
    pub output: String,
    pub deadlock: bool,
    pub commits: usize,
    pub history: History,
}

impl RunReport {
    pub fn var(&self, name: &str) -> Option<&Value> {
        let (r, _) = self.var_names.iter().find(|(_, n)| *n == name)?;
        self.heap.get(r)
    }

    /// Same shape as the reference machine's terminal summaries.
    pub fn summary(&self) -> Summary {
        let vars = self
            .var_names
            .iter()
            .map(|(r, n)| {
                let v = self
                    .heap
                    .get(r)
                    .map(|v| v.to_string())
                    .unwrap_or_else(|| "?".into());
                (n.clone(), v)
            })
            .collect();
        let mut anon: Vec<String> = self
            .heap
            .iter()
            .filter(|(r, _)| !self.var_names.contains_key(r))
            .map(|(_, v)| v.to_string())
            .collect();
        anon.sort();
        let threads = self
            .thread_names
            .iter()
            .map(|(t, n)| {
                (
                    n.clone(),
                    self.outcomes
                        .get(t)
                        .cloned()
                        .unwrap_or(ThreadOutcome::Blocked),
                )
            })
            .collect();
        Summary {
            vars,
            anon,
            output: self.output.clone(),
            threads,
            deadlock: self.deadlock,
            history: None,
        }
    }
}

impl Runtime {
    pub fn new(cfg: RuntimeConfig) -> Runtime {
        let shared = Shared {
            heap: BTreeMap::new(),
            versions: BTreeMap::new(),
            change: BTreeMap::new(),
            claims: BTreeMap::new(),
            txs: TxTable::default(),
            parts: BTreeMap::new(),
            next_tx: 1,
            next_thread: 0,
            next_loc: 0,
            iso: None,
            pending: Vec::new(),
            input: cfg.input.chars().collect(),
            output: String::new(),
            last_progress: Instant::now(),
            deadlock: false,
            commits: 0,
        };
        Runtime {
            inner: Arc::new(Inner {
                state: Mutex::new(shared),
                cv: Condvar::new(),
                recorder: Recorder::new(),
                cfg,
                handles: Mutex::new(Vec::new()),
                outcomes: Mutex::new(BTreeMap::new()),
                names: Mutex::new((BTreeMap::new(), BTreeMap::new())),
            }),
        }
    }

    /// Creates a committed location, recorded as written by the initializing transaction.
    pub fn alloc(&self, v: Value) -> LocId {
        let mut s = self.inner.lock();
        let r = LocId(s.next_loc);
        s.next_loc += 1;
        s.heap.insert(r, v.clone());
        if self.inner.cfg.record {
            self.inner
                .recorder
                .record(TxId::INIT, None, EventKind::NewLoc { loc: r });
            self.inner.recorder.record(
                TxId::INIT,
                None,
                EventKind::Write {
                    loc: r,
                    value: v.to_string(),
                },
            );
        }
        r
    }

    /// Allocates the declared variables and returns the threads with
    /// variable names replaced by their locations.
    pub fn load(&self, p: &SourceProgram) -> Vec<(String, Term)> {
        let mut globals = Vec::new();
        for v in &p.vars {
            let r = self.alloc(v.init.clone());
            self.inner.names.lock().unwrap().0.insert(r, v.name.clone());
            globals.push((v.name.clone(), Value::Loc(r)));
        }
        p.threads
            .iter()
            .map(|th| {
                let t = globals
                    .iter()
                    .fold(th.term.clone(), |t, (x, v)| t.subst(x, v));
                (th.name.clone(), t)
            })
            .collect()
    }

    pub fn var(&self, name: &str) -> Option<LocId> {
        let names = self.inner.names.lock().unwrap();
        names.0.iter().find(|(_, n)| *n == name).map(|(r, _)| *r)
    }

    /// Committed value of a location.
    pub fn committed(&self, r: LocId) -> Option<Value> {
        self.inner.lock().heap.get(&r).cloned()
    }

    /// Number of committed writes to `r` so far.
    pub fn version(&self, r: LocId) -> u64 {
        self.inner.lock().versions.get(&r).copied().unwrap_or(0)
    }

    /// Starts each thread on its own OS thread and waits until every thread,
    /// including forked ones, has finished.
    pub fn run_threads(&self, threads: Vec<(String, Term)>) -> RunReport {
        for (name, term) in threads {
            let t = self.inner.fresh_thread();
            self.inner.names.lock().unwrap().1.insert(t, name);
            self.inner.spawn_io(t, term);
        }
        self.join_all();
        self.report()
    }

    pub fn run_program(&self, p: &SourceProgram) -> RunReport {
        let threads = self.load(p);
        self.run_threads(threads)
    }

    /// Runs an IO action on the calling thread, then waits for every thread
    /// it forked. Returns the action's value.
    pub fn run_io(&self, action: Term) -> Result<Value, RuntimeError> {
        let t = self.inner.fresh_thread();
        let r = self.inner.io_loop(t, action);
        self.join_all();
        r
    }

    fn join_all(&self) {
        loop {
            let hs: Vec<_> = std::mem::take(&mut *self.inner.handles.lock().unwrap());
            if hs.is_empty() {
                break;
            }
            for h in hs {
                let _ = h.join();
            }
        }
    }

    pub fn history(&self) -> History {
        let mut h = self.inner.recorder.snapshot();
        h.events.sort_by_key(|e| e.seq);
        h
    }

    pub fn report(&self) -> RunReport {
        let s = self.inner.lock();
        let names = self.inner.names.lock().unwrap().clone();
        let outcomes = self
            .inner
            .outcomes
            .lock()
            .unwrap()
            .iter()
            .map(|(t, r)| {
                let o = match r {
                    Ok(v) => ThreadOutcome::Returned(v.to_string()),
                    Err(RuntimeError::Uncaught(e)) => ThreadOutcome::Threw(e.to_string()),
                    Err(_) => ThreadOutcome::Blocked,
                };
                (*t, o)
            })
            .collect();
        RunReport {
            heap: s.heap.clone(),
            var_names: names.0,
            thread_names: names.1,
            outcomes,
            output: s.output.clone(),
            deadlock: s.deadlock,
            commits: s.commits,
            history: {
                drop(s);
                self.history()
            },
        }
    }
}

impl Inner {
    fn fresh_thread(&self) -> ThreadId {
        let mut s = self.lock();
        let t = ThreadId(s.next_thread);
        s.next_thread += 1;
        t
    }

    fn spawn_io(self: &Arc<Self>, t: ThreadId, term: Term) {
        let me = Arc::clone(self);
        let h = std::thread::spawn(move || {
            let me2 = Arc::clone(&me);
            let r = std::panic::catch_unwind(std::panic::AssertUnwindSafe(move || {
                me2.io_loop(t, term)
            }))
            .unwrap_or(Err(RuntimeError::Panicked));
            me.outcomes.lock().unwrap().insert(t, r);
        });
        self.handles.lock().unwrap().push(h);
    }
}
