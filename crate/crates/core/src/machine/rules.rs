use std::collections::BTreeSet;

use super::{
    cleanup_fn, commit_fn, eval_value, leak_fn, Label, Machine, MachineError, Thread, Transition,
};
use crate::history::EventKind;
use crate::term::{Expr, Term};
use crate::value::{LocId, ThreadId, TxId, Value};

/// Pure term reductions: bind and catch of a final term, and forcing of
/// conditionals and thunks.
pub fn reduce_term(m: &Term) -> Result<Term, MachineError> {
    match m {
        Term::Bind(l, f) => match &**l {
            Term::Return(e) => Ok(f.apply(eval_value(e)?)),
            Term::Retry | Term::Throw(_) => Ok((**l).clone()),
            _ => Err(MachineError::NotARedex),
        },
        Term::Catch(l, h) => match &**l {
            Term::Retry | Term::Return(_) => Ok((**l).clone()),
            Term::Throw(e) => Ok(h.apply(eval_value(e)?)),
            _ => Err(MachineError::NotARedex),
        },
        Term::If(c, a, b) => match eval_value(c)? {
            Value::Bool(true) => Ok((**a).clone()),
            Value::Bool(false) => Ok((**b).clone()),
            v => Err(MachineError::Stuck(
                ThreadId(u64::MAX),
                format!("condition evaluated to {v}, expected a boolean"),
            )),
        },
        Term::Pure(th) => Ok(th.force()),
        _ => Err(MachineError::NotARedex),
    }
}

/// Result of running a body alone to completion.
enum Solo {
    Done(Term),
    Retried,
}

impl Machine {
    fn stuck(t: ThreadId, why: &str) -> MachineError {
        MachineError::Stuck(t, why.to_string())
    }

    fn as_loc(t: ThreadId, e: &Expr) -> Result<LocId, MachineError> {
        eval_value(e)?
            .as_loc()
            .ok_or_else(|| Self::stuck(t, "expected a location"))
    }

    fn waiting(&self, wait: &Option<Vec<(LocId, u64)>>) -> bool {
        match wait {
            None => false,
            Some(ws) => ws
                .iter()
                .all(|(r, v)| self.versions.get(r).copied().unwrap_or(0) == *v),
        }
    }

    fn kill(&mut self, t: ThreadId) {
        self.threads.remove(&t);
        self.killed.insert(t);
    }

    /// Performs the single rule that applies to thread `t`, if any.
    /// `Ok(None)` means the thread has no transition of its own right now.
    pub fn step_thread(&mut self, t: ThreadId) -> Result<Option<Label>, MachineError> {
        match self.threads.get(&t).cloned() {
            None => Err(MachineError::NotApplicable(format!("no thread {t}"))),
            Some(Thread::Plain { term, wait }) => {
                if self.waiting(&wait) {
                    return Ok(None);
                }
                self.step_io(t, term)
            }
            Some(Thread::InTx { term, .. }) => {
                let (redex, frames) = term.decompose();
                if frames.is_empty() && redex.is_final() {
                    return Ok(None);
                }
                match self.step_tau(t, redex, false)? {
                    None => Ok(None),
                    Some(next) => {
                        if let Some(Thread::InTx { term, .. }) = self.threads.get_mut(&t) {
                            *term = Term::plug(next, &frames);
                        }
                        Ok(Some(Label::Tau))
                    }
                }
            }
        }
    }

    /// IO-level rules for a plain thread, including `New`.
    fn step_io(&mut self, t: ThreadId, term: Term) -> Result<Option<Label>, MachineError> {
        let (redex, frames) = term.decompose();
        let (next, label) = match &redex {
            Term::Return(_) | Term::Throw(_) | Term::Retry if frames.is_empty() => return Ok(None),
            Term::GetChar => match self.input.pop_front() {
                None => return Ok(None),
                Some(c) => (Term::ret(Value::Char(c)), Label::Input(c)),
            },
            Term::PutChar(e) => {
                let c = eval_value(e)?
                    .as_char()
                    .ok_or_else(|| Self::stuck(t, "putChar expects a character"))?;
                self.output.push(c);
                (Term::unit(), Label::Output(c))
            }
            Term::Fork(m) => {
                let child = self.spawn((**m).clone());
                (Term::ret(Value::Thread(child)), Label::Tau)
            }
            Term::Atomic(_) => return self.begin_tx(t).map(Some),
            Term::Bind(..) | Term::Catch(..) | Term::If(..) | Term::Pure(_) => {
                (reduce_term(&redex)?, Label::Tau)
            }
            other => {
                return Err(Self::stuck(
                    t,
                    &format!("{} outside a transaction", kind_name(other)),
                ))
            }
        };
        self.threads
            .insert(t, Thread::plain(Term::plug(next, &frames)));
        Ok(Some(label))
    }

    /// `New`: opens a fresh transaction whose continuation is the
    /// surrounding context of the `atomic` block.
    pub fn begin_tx(&mut self, t: ThreadId) -> Result<Label, MachineError> {
        let Some(Thread::Plain { term, .. }) = self.threads.get(&t) else {
            return Err(MachineError::NotApplicable(format!(
                "{t} is not a plain thread"
            )));
        };
        let (redex, cont) = term.decompose();
        let Term::Atomic(body) = redex else {
            return Err(MachineError::NotApplicable(format!(
                "{t} is not at an atomic block"
            )));
        };
        let k = TxId(self.next_tx);
        self.next_tx += 1;
        let body = (*body).clone();
        self.threads.insert(
            t,
            Thread::InTx {
                tx: k,
                term: body.clone(),
                cont,
                snapshot: body,
            },
        );
        self.emit(k, Some(t), EventKind::Begin);
        Ok(Label::New(k))
    }

    /// Transactional rules for one redex of thread `t`. `solo` is set inside
    /// isolated and orElse sub-derivations, where forking is not allowed.
    fn step_tau(
        &mut self,
        t: ThreadId,
        redex: Term,
        solo: bool,
    ) -> Result<Option<Term>, MachineError> {
        let k = self
            .tx_of(t)
            .ok_or_else(|| Self::stuck(t, "not inside a transaction"))?;
        let next = match redex {
            Term::Bind(..) | Term::Catch(..) | Term::If(..) | Term::Pure(_) => reduce_term(&redex)?,
            Term::Fork(m) => {
                if solo {
                    return Err(Self::stuck(t, "fork inside an isolated section"));
                }
                let child = ThreadId(self.next_thread);
                self.next_thread += 1;
                let body = (*m).clone();
                self.threads.insert(
                    child,
                    Thread::InTx {
                        tx: k,
                        term: body.clone(),
                        cont: Vec::new(),
                        snapshot: body,
                    },
                );
                self.forest.add_child(t, child);
                Term::ret(Value::Thread(child))
            }
            Term::NewVar(e) => {
                let v = eval_value(&e)?;
                let r = LocId(self.next_loc);
                self.next_loc += 1;
                self.work.insert(r, (v.clone(), k));
                self.bump(r);
                self.emit(k, Some(t), EventKind::NewLoc { loc: r });
                self.emit(
                    k,
                    Some(t),
                    EventKind::Write {
                        loc: r,
                        value: v.to_string(),
                    },
                );
                Term::ret(Value::Loc(r))
            }
            Term::Read(e) => {
                let r = Self::as_loc(t, &e)?;
                let v = if let Some((v, j)) = self.work.get(&r).cloned() {
                    self.merge_tx(k, j, t);
                    v
                } else if let Some(v) = self.heap.get(&r).cloned() {
                    self.work.insert(r, (v.clone(), k));
                    v
                } else {
                    return Err(MachineError::UnallocatedLocation(r));
                };
                let k = self.find(k);
                self.txs.note_read(k, r);
                self.emit(
                    k,
                    Some(t),
                    EventKind::Read {
                        loc: r,
                        value: v.to_string(),
                    },
                );
                Term::ret(v)
            }
            Term::Write(re, e) => {
                let r = Self::as_loc(t, &re)?;
                let v = eval_value(&e)?;
                if let Some((_, j)) = self.work.get(&r).cloned() {
                    self.merge_tx(k, j, t);
                } else if !self.heap.contains_key(&r) {
                    return Err(MachineError::UnallocatedLocation(r));
                }
                let k = self.find(k);
                self.work.insert(r, (v.clone(), k));
                self.bump(r);
                self.emit(
                    k,
                    Some(t),
                    EventKind::Write {
                        loc: r,
                        value: v.to_string(),
                    },
                );
                Term::unit()
            }
            Term::OrElse(a, b) => {
                let saved = self.clone_without_events();
                let mark = self.events.len();
                match self.run_solo(t, (*a).clone())? {
                    Solo::Done(op) => op,
                    Solo::Retried => {
                        self.rollback(t, saved, mark);
                        (*b).clone()
                    }
                }
            }
            Term::Isolated(body) => {
                let saved = self.clone_without_events();
                let mark = self.events.len();
                match self.run_solo(t, (*body).clone())? {
                    Solo::Done(op) => op,
                    Solo::Retried => {
                        self.rollback(t, saved, mark);
                        return Ok(None);
                    }
                }
            }
            other => {
                return Err(Self::stuck(
                    t,
                    &format!("{} inside a transaction", kind_name(&other)),
                ));
            }
        };
        Ok(Some(next))
    }

    /// Restores `saved` but keeps the locations read since, so a later
    /// restart still waits on them.
    fn rollback(&mut self, t: ThreadId, saved: Machine, mark: usize) {
        let reads = self
            .tx_of(t)
            .map(|k| self.txs.read_set(k))
            .unwrap_or_default();
        let mut events = std::mem::take(&mut self.events);
        events.truncate(mark);
        *self = Machine { events, ..saved };
        if let Some(k) = self.tx_of(t) {
            for r in reads {
                self.txs.note_read(k, r);
            }
        }
    }

    /// Runs `body` as the only thread until it returns, throws or retries.
    fn run_solo(&mut self, t: ThreadId, body: Term) -> Result<Solo, MachineError> {
        let mut term = body;
        for _ in 0..self.fuel {
            let (redex, frames) = term.decompose();
            if frames.is_empty() {
                match redex {
                    Term::Return(_) | Term::Throw(_) => return Ok(Solo::Done(redex)),
                    Term::Retry => return Ok(Solo::Retried),
                    _ => {}
                }
            }
            match self.step_tau(t, redex, true)? {
                Some(next) => term = Term::plug(next, &frames),
                None => return Ok(Solo::Retried),
            }
        }
        Err(MachineError::OutOfFuel(t, self.fuel))
    }

    /// Merges `k` into `j`: claims and threads of `k` now belong to `j`.
    pub fn merge_tx(&mut self, k: TxId, j: TxId, t: ThreadId) {
        let (k, j) = (self.find(k), self.find(j));
        if self.txs.union(k, j) {
            self.emit(k, Some(t), EventKind::Merge { into: j });
        }
    }

    /// `Commit`: applicable only when every participant has returned.
    pub fn try_commit(&mut self, k: TxId) -> Result<Label, MachineError> {
        let k = self.find(k);
        let parts = self.participants(k);
        if parts.is_empty()
            || !parts
                .iter()
                .all(|t| matches!(self.threads[t].term(), Term::Return(_)))
        {
            return Err(MachineError::NotApplicable(format!(
                "{k} is not ready to commit"
            )));
        }
        let published: Vec<LocId> = self
            .claims()
            .iter()
            .filter(|(_, (_, j))| *j == k)
            .map(|(r, _)| *r)
            .collect();
        self.heap = commit_fn(k, self);
        self.work = cleanup_fn(k, self);
        for r in published {
            self.bump(r);
        }
        for t in &parts {
            if let Some(Thread::InTx { term, cont, .. }) = self.threads.get(t).cloned() {
                self.threads
                    .insert(*t, Thread::plain(Term::plug(term, &cont)));
            }
        }
        self.dissolve(&parts);
        self.emit(k, None, EventKind::Commit);
        self.txs.retire(k);
        Ok(Label::Commit(k))
    }

    fn dissolve(&mut self, parts: &[ThreadId]) {
        let roots: BTreeSet<ThreadId> = parts.iter().map(|t| self.forest.root(*t)).collect();
        for r in roots {
            self.forest.remove(r);
        }
    }

    /// Discards `k`'s claims, publishing only locations it created.
    fn leak_and_cleanup(&mut self, k: TxId) {
        let fresh: Vec<LocId> = self
            .claims()
            .iter()
            .filter(|(r, (_, j))| *j == k && !self.heap.contains_key(r))
            .map(|(r, _)| *r)
            .collect();
        self.heap = leak_fn(k, self);
        self.work = cleanup_fn(k, self);
        for r in fresh {
            self.bump(r);
        }
    }

    /// Abort on an unhandled throw by `t`: the root of `t`'s tree rethrows,
    /// other members of that tree are killed, roots of other trees restart
    /// their atomic block and their children are killed.
    pub fn abort_tx(&mut self, k: TxId, t: ThreadId) -> Result<Label, MachineError> {
        let k = self.find(k);
        let e = match self.threads.get(&t) {
            Some(Thread::InTx {
                term: Term::Throw(e),
                ..
            }) if self.tx_of(t) == Some(k) => eval_value(e)?,
            _ => {
                return Err(MachineError::NotApplicable(format!(
                    "{t} is not throwing in {k}"
                )))
            }
        };
        let parts = self.participants(k);
        self.leak_and_cleanup(k);
        let rt = self.forest.root(t);
        for p in &parts {
            let Some(Thread::InTx { cont, snapshot, .. }) = self.threads.get(p).cloned() else {
                continue;
            };
            let root = self.forest.root(*p);
            if *p == rt {
                self.threads
                    .insert(*p, Thread::plain(Term::plug(Term::throw(e.clone()), &cont)));
            } else if root == rt || !self.forest.is_root(*p) {
                self.kill(*p);
            } else {
                self.threads
                    .insert(*p, Thread::plain(Term::plug(Term::atomic(snapshot), &cont)));
            }
        }
        self.dissolve(&parts);
        self.emit(k, Some(t), EventKind::Abort);
        self.txs.retire(k);
        Ok(Label::Abort(k, t, e))
    }

    /// Restart after a top-level `retry`: every root re-runs its atomic block
    /// once a location it read has changed; forked threads are killed.
    pub fn restart_tx(&mut self, k: TxId) -> Result<Label, MachineError> {
        let k = self.find(k);
        let parts = self.participants(k);
        if !parts
            .iter()
            .any(|t| matches!(self.threads[t].term(), Term::Retry))
        {
            return Err(MachineError::NotApplicable(format!("{k} has not retried")));
        }
        let reads = self.txs.read_set(k);
        self.leak_and_cleanup(k);
        let wait: Vec<(LocId, u64)> = reads
            .iter()
            .map(|r| (*r, self.versions.get(r).copied().unwrap_or(0)))
            .collect();
        for p in &parts {
            let Some(Thread::InTx { cont, snapshot, .. }) = self.threads.get(p).cloned() else {
                continue;
            };
            if self.forest.is_root(*p) {
                self.threads.insert(
                    *p,
                    Thread::Plain {
                        term: Term::plug(Term::atomic(snapshot), &cont),
                        wait: Some(wait.clone()),
                    },
                );
            } else {
                self.kill(*p);
            }
        }
        self.dissolve(&parts);
        self.emit(k, None, EventKind::Abort);
        self.txs.retire(k);
        Ok(Label::Restart(k))
    }

    /// Every transition the scheduler may take, in a fixed order.
    pub fn enabled(&self) -> Vec<Transition> {
        let mut steps = Vec::new();
        let mut finals = BTreeSet::new();
        let mut ready: BTreeSet<TxId> = self.live_txs();
        for (t, th) in &self.threads {
            match th {
                Thread::Plain { term, wait } => {
                    if self.waiting(wait) {
                        continue;
                    }
                    let (redex, frames) = term.decompose();
                    let idle = match redex {
                        Term::Return(_) | Term::Throw(_) | Term::Retry => frames.is_empty(),
                        Term::GetChar => self.input.is_empty(),
                        _ => false,
                    };
                    if !idle {
                        steps.push(Transition::Step(*t));
                    }
                }
                Thread::InTx { term, .. } => {
                    let k = self.tx_of(*t).unwrap();
                    if !matches!(term, Term::Return(_)) {
                        ready.remove(&k);
                    }
                    let (redex, frames) = term.decompose();
                    if frames.is_empty() && redex.is_final() {
                        match redex {
                            Term::Throw(_) => {
                                finals.insert(Transition::Abort { tx: k, thread: *t });
                            }
                            Term::Retry => {
                                finals.insert(Transition::Restart(k));
                            }
                            _ => {}
                        }
                    } else if matches!(redex, Term::Isolated(_)) {
                        let mut probe = self.scratch();
                        if !matches!(probe.step_thread(*t), Ok(None)) {
                            steps.push(Transition::Step(*t));
                        }
                    } else {
                        steps.push(Transition::Step(*t));
                    }
                }
            }
        }
        steps.extend(ready.into_iter().map(Transition::Commit));
        steps.extend(finals);
        steps
    }

    pub fn apply(&mut self, tr: Transition) -> Result<Label, MachineError> {
        match tr {
            Transition::Step(t) => self
                .step_thread(t)?
                .ok_or_else(|| MachineError::NotApplicable(format!("{t} has no step"))),
            Transition::Commit(k) => self.try_commit(k),
            Transition::Abort { tx, thread } => self.abort_tx(tx, thread),
            Transition::Restart(k) => self.restart_tx(k),
        }
    }

    /// The thread a transition is attributed to, for round-robin scheduling.
    pub fn actor(&self, tr: Transition) -> ThreadId {
        match tr {
            Transition::Step(t) | Transition::Abort { thread: t, .. } => t,
            Transition::Commit(k) | Transition::Restart(k) => {
                self.participants(k).first().copied().unwrap_or(ThreadId(0))
            }
        }
    }
}

pub(crate) fn kind_name(t: &Term) -> &'static str {
    match t {
        Term::Return(_) => "return",
        Term::Bind(..) => "bind",
        Term::Throw(_) => "throw",
        Term::Catch(..) => "catch",
        Term::Retry => "retry",
        Term::OrElse(..) => "orElse",
        Term::NewVar(_) => "newOTVar",
        Term::Read(_) => "readOTVar",
        Term::Write(..) => "writeOTVar",
        Term::Fork(_) => "fork",
        Term::Atomic(_) => "atomic",
        Term::Isolated(_) => "isolated",
        Term::GetChar => "getChar",
        Term::PutChar(_) => "putChar",
        Term::If(..) => "if",
        Term::Pure(_) => "thunk",
    }
}
