//! Operations on the shared transactional state. Every function here takes
//! the global lock for a short critical section.

use std::collections::BTreeMap;
use std::sync::{Arc, MutexGuard};
use std::time::{Duration, Instant};

use super::{Directive, Inner, Part, RuntimeError, Shared};
use crate::history::EventKind;
use crate::machine::{MachineError, TxTable};
use crate::term::Term;
use crate::value::{LocId, ThreadId, TxId, Value};

const TICK: Duration = Duration::from_millis(20);

/// Why a transactional thread stopped before finishing its body.
#[derive(Debug)]
pub(super) enum Stop {
    /// The thread's transaction was decided by someone else.
    Directive,
    Fail(RuntimeError),
}

impl From<RuntimeError> for Stop {
    fn from(e: RuntimeError) -> Self {
        Stop::Fail(e)
    }
}

impl From<MachineError> for Stop {
    fn from(e: MachineError) -> Self {
        Stop::Fail(e.into())
    }
}

/// State restored when an isolated body or an orElse branch retries.
pub(super) struct Snap {
    claims: BTreeMap<LocId, (Value, TxId)>,
    txs: TxTable,
    change: BTreeMap<LocId, u64>,
    pending: usize,
}

impl Shared {
    fn bump(&mut self, r: LocId) {
        *self.change.entry(r).or_insert(0) += 1;
    }

    fn participants(&self, k: TxId) -> Vec<ThreadId> {
        self.parts
            .iter()
            .filter(|(_, p)| p.tx.map(|j| self.txs.find(j)) == Some(k))
            .map(|(t, _)| *t)
            .collect()
    }

    fn root(&self, mut t: ThreadId) -> ThreadId {
        while let Some(p) = self.parts.get(&t).and_then(|p| p.parent) {
            t = p;
        }
        t
    }

    fn tx_of(&self, t: ThreadId) -> Result<TxId, Stop> {
        self.parts
            .get(&t)
            .and_then(|p| p.tx)
            .map(|k| self.txs.find(k))
            .ok_or_else(|| MachineError::Stuck(t, "not inside a transaction".into()).into())
    }

    fn changes(&self, reads: &[LocId]) -> Vec<(LocId, u64)> {
        reads
            .iter()
            .map(|r| (*r, self.change.get(r).copied().unwrap_or(0)))
            .collect()
    }

    /// Drops `k`'s claims. Locations `k` created stay, with their last value.
    fn leak_and_cleanup(&mut self, k: TxId) {
        let mine: Vec<LocId> = self
            .claims
            .iter()
            .filter(|(_, (_, j))| self.txs.find(*j) == k)
            .map(|(r, _)| *r)
            .collect();
        for r in mine {
            let (v, _) = self.claims.remove(&r).expect("claimed");
            if let std::collections::btree_map::Entry::Vacant(slot) = self.heap.entry(r) {
                slot.insert(v);
                *self.versions.entry(r).or_insert(0) += 1;
            }
            self.bump(r);
        }
    }

    /// Hands every participant of `k` a directive and forgets `k`.
    fn decide(&mut self, k: TxId, mut directive: impl FnMut(&Shared, ThreadId) -> Directive) {
        for p in self.participants(k) {
            let d = directive(self, p);
            let part = self.parts.get_mut(&p).expect("participant");
            part.directive = Some(d);
            part.tx = None;
            part.ready = None;
        }
        self.txs.retire(k);
    }
}

impl Inner {
    fn emit(&self, s: &mut Shared, tx: TxId, thread: Option<ThreadId>, kind: EventKind) {
        if !self.cfg.record {
            return;
        }
        if s.iso.is_some() {
            s.pending.push((tx, thread, kind));
        } else {
            self.recorder.record(tx, thread, kind);
        }
    }

    fn progress(&self, s: &mut Shared) {
        s.last_progress = Instant::now();
        self.cv.notify_all();
    }

    /// Blocks until `cond` holds. Fails when the system has made no progress
    /// for the configured timeout, and with `Stop::Directive` when
    /// `directive` is set and `me` has been handed one.
    pub(super) fn wait_for<'a>(
        &'a self,
        mut g: MutexGuard<'a, Shared>,
        me: ThreadId,
        directive: bool,
        cond: impl Fn(&Shared) -> bool,
    ) -> Result<MutexGuard<'a, Shared>, Stop> {
        loop {
            if g.deadlock {
                return Err(Stop::Fail(RuntimeError::Deadlock(self.cfg.timeout)));
            }
            if directive && g.parts.get(&me).is_some_and(|p| p.directive.is_some()) {
                return Err(Stop::Directive);
            }
            if cond(&g) {
                return Ok(g);
            }
            if g.last_progress.elapsed() >= self.cfg.timeout {
                g.deadlock = true;
                self.cv.notify_all();
                continue;
            }
            g = self
                .cv
                .wait_timeout(g, TICK)
                .unwrap_or_else(|p| p.into_inner())
                .0;
        }
    }

    /// Locks once the isolation token is free or held by `me`.
    fn enter(&self, me: ThreadId) -> Result<MutexGuard<'_, Shared>, Stop> {
        let g = self.lock();
        self.wait_for(g, me, true, |s| s.iso.is_none_or(|o| o == me))
    }

    pub(super) fn begin(&self, me: ThreadId) -> Result<TxId, Stop> {
        let mut s = self.enter(me)?;
        let k = TxId(s.next_tx);
        s.next_tx += 1;
        s.parts.insert(
            me,
            Part {
                tx: Some(k),
                parent: None,
                ready: None,
                directive: None,
            },
        );
        self.emit(&mut s, k, Some(me), EventKind::Begin);
        self.progress(&mut s);
        Ok(k)
    }

    pub(super) fn otvar_new(&self, me: ThreadId, v: Value) -> Result<LocId, Stop> {
        let mut s = self.enter(me)?;
        let k = s.tx_of(me)?;
        let r = LocId(s.next_loc);
        s.next_loc += 1;
        s.claims.insert(r, (v.clone(), k));
        s.bump(r);
        self.emit(&mut s, k, Some(me), EventKind::NewLoc { loc: r });
        let value = v.to_string();
        self.emit(&mut s, k, Some(me), EventKind::Write { loc: r, value });
        self.progress(&mut s);
        Ok(r)
    }

    fn merge(&self, s: &mut Shared, k: TxId, j: TxId, me: ThreadId) {
        let (k, j) = (s.txs.find(k), s.txs.find(j));
        if s.txs.union(k, j) {
            self.emit(s, k, Some(me), EventKind::Merge { into: j });
        }
    }

    pub(super) fn otvar_read(&self, me: ThreadId, r: LocId) -> Result<Value, Stop> {
        let mut s = self.enter(me)?;
        let k = s.tx_of(me)?;
        let v = if let Some((v, j)) = s.claims.get(&r).cloned() {
            self.merge(&mut s, k, j, me);
            v
        } else if let Some(v) = s.heap.get(&r).cloned() {
            s.claims.insert(r, (v.clone(), k));
            v
        } else {
            return Err(MachineError::UnallocatedLocation(r).into());
        };
        let k = s.txs.find(k);
        s.txs.note_read(k, r);
        let value = v.to_string();
        self.emit(&mut s, k, Some(me), EventKind::Read { loc: r, value });
        self.progress(&mut s);
        Ok(v)
    }

    pub(super) fn otvar_write(&self, me: ThreadId, r: LocId, v: Value) -> Result<(), Stop> {
        let mut s = self.enter(me)?;
        let k = s.tx_of(me)?;
        if let Some((_, j)) = s.claims.get(&r).cloned() {
            self.merge(&mut s, k, j, me);
        } else if !s.heap.contains_key(&r) {
            return Err(MachineError::UnallocatedLocation(r).into());
        }
        let k = s.txs.find(k);
        s.claims.insert(r, (v.clone(), k));
        s.bump(r);
        let value = v.to_string();
        self.emit(&mut s, k, Some(me), EventKind::Write { loc: r, value });
        self.progress(&mut s);
        Ok(())
    }

    /// Starts `body` on a new OS thread as a participant of `me`'s transaction.
    pub(super) fn fork_in_tx(self: &Arc<Self>, me: ThreadId, body: Term) -> Result<ThreadId, Stop> {
        let child = {
            let mut s = self.enter(me)?;
            let k = s.tx_of(me)?;
            let child = ThreadId(s.next_thread);
            s.next_thread += 1;
            s.parts.insert(
                child,
                Part {
                    tx: Some(k),
                    parent: Some(me),
                    ready: None,
                    directive: None,
                },
            );
            self.progress(&mut s);
            child
        };
        let inner = Arc::clone(self);
        let h = std::thread::spawn(move || {
            let r = inner.drive(child, body);
            let r = match r {
                Ok(Directive::Committed(v)) => Ok(v),
                Ok(_) => return,
                Err(e) => Err(e),
            };
            inner.outcomes.lock().unwrap().insert(child, r);
        });
        self.handles.lock().unwrap().push(h);
        Ok(child)
    }

    /// Takes the isolation token, waiting for any other holder to finish.
    pub(super) fn acquire_token(&self, me: ThreadId) -> Result<Snap, Stop> {
        let mut s = self.enter(me)?;
        if s.iso == Some(me) {
            return Err(MachineError::Stuck(me, "nested isolated section".into()).into());
        }
        s.iso = Some(me);
        Ok(Self::snap(&s))
    }

    fn snap(s: &Shared) -> Snap {
        Snap {
            claims: s.claims.clone(),
            txs: s.txs.clone(),
            change: s.change.clone(),
            pending: s.pending.len(),
        }
    }

    pub(super) fn snapshot(&self) -> Snap {
        Self::snap(&self.lock())
    }

    /// Undoes everything since `snap` except the record of what was read.
    pub(super) fn restore(&self, me: ThreadId, snap: Snap, reads: &[LocId]) {
        let mut s = self.lock();
        Self::restore_locked(&mut s, me, snap, reads);
    }

    fn restore_locked(s: &mut Shared, me: ThreadId, snap: Snap, reads: &[LocId]) {
        s.claims = snap.claims;
        s.txs = snap.txs;
        s.change = snap.change;
        s.pending.truncate(snap.pending);
        if let Ok(k) = s.tx_of(me) {
            for r in reads {
                s.txs.note_read(k, *r);
            }
        }
    }

    /// Gives the token back. With `rollback` the section's effects are
    /// undone and the returned versions are those of the locations it read;
    /// otherwise its buffered events are published.
    pub(super) fn release_token(
        &self,
        me: ThreadId,
        rollback: Option<(Snap, &[LocId])>,
    ) -> Vec<(LocId, u64)> {
        let mut s = self.lock();
        let mut wait = Vec::new();
        match rollback {
            Some((snap, reads)) => {
                Self::restore_locked(&mut s, me, snap, reads);
                s.pending.clear();
                wait = s.changes(reads);
            }
            None => {
                for (tx, thread, kind) in std::mem::take(&mut s.pending) {
                    self.recorder.record(tx, thread, kind);
                }
            }
        }
        s.iso = None;
        self.progress(&mut s);
        wait
    }

    /// Blocks until one of the locations in `wait` has been written.
    pub(super) fn wait_changed(
        &self,
        me: ThreadId,
        wait: &[(LocId, u64)],
        directive: bool,
    ) -> Result<(), Stop> {
        let g = self.lock();
        self.wait_for(g, me, directive, |s| {
            wait.iter()
                .any(|(r, c)| s.change.get(r).copied().unwrap_or(0) != *c)
        })
        .map(drop)
    }

    pub(super) fn take_directive(&self, me: ThreadId) -> Result<Directive, RuntimeError> {
        let mut s = self.lock();
        let d = s.parts.remove(&me).and_then(|p| p.directive);
        d.ok_or_else(|| MachineError::Stuck(me, "no decision for this thread".into()).into())
    }

    /// Marks `me` as returned with `v`, publishes the transaction if every
    /// participant has returned, and waits for the outcome.
    pub(super) fn finish_ready(&self, me: ThreadId, v: Value) -> Result<Directive, RuntimeError> {
        let mut s = match self.enter(me) {
            Ok(s) => s,
            Err(Stop::Directive) => return self.take_directive(me),
            Err(Stop::Fail(e)) => return Err(e),
        };
        let k = s.tx_of(me).map_err(stop_error)?;
        s.parts.get_mut(&me).expect("registered").ready = Some(v);
        let parts = s.participants(k);
        if parts.iter().all(|p| s.parts[p].ready.is_some()) {
            self.publish(&mut s, k);
        }
        let s = self
            .wait_for(s, me, false, |s| s.parts[&me].directive.is_some())
            .map_err(stop_error)?;
        drop(s);
        self.take_directive(me)
    }

    fn publish(&self, s: &mut Shared, k: TxId) {
        let mine: Vec<LocId> = s
            .claims
            .iter()
            .filter(|(_, (_, j))| s.txs.find(*j) == k)
            .map(|(r, _)| *r)
            .collect();
        for r in mine {
            let (v, _) = s.claims.remove(&r).expect("claimed");
            s.heap.insert(r, v);
            *s.versions.entry(r).or_insert(0) += 1;
            s.bump(r);
        }
        s.decide(k, |s, p| {
            Directive::Committed(s.parts[&p].ready.clone().expect("ready"))
        });
        self.emit(s, k, None, EventKind::Commit);
        s.commits += 1;
        self.progress(s);
    }

    /// Unhandled `throw e` in `me`: the root of `me`'s tree rethrows, the
    /// rest of that tree is killed, other roots restart and their children
    /// are killed.
    pub(super) fn abort(&self, me: ThreadId, e: Value) -> Result<Directive, RuntimeError> {
        let mut s = match self.enter(me) {
            Ok(s) => s,
            Err(Stop::Directive) => return self.take_directive(me),
            Err(Stop::Fail(e)) => return Err(e),
        };
        let k = s.tx_of(me).map_err(stop_error)?;
        s.leak_and_cleanup(k);
        let rt = s.root(me);
        s.decide(k, |s, p| {
            if p == rt {
                Directive::Rethrow(e.clone())
            } else if s.root(p) == rt || s.parts[&p].parent.is_some() {
                Directive::Killed
            } else {
                Directive::Restart(None)
            }
        });
        self.emit(&mut s, k, Some(me), EventKind::Abort);
        self.progress(&mut s);
        drop(s);
        self.take_directive(me)
    }

    /// Top-level `retry` in `me`: roots re-run once something they read
    /// changes, forked participants are killed.
    pub(super) fn restart(&self, me: ThreadId) -> Result<Directive, RuntimeError> {
        let mut s = match self.enter(me) {
            Ok(s) => s,
            Err(Stop::Directive) => return self.take_directive(me),
            Err(Stop::Fail(e)) => return Err(e),
        };
        let k = s.tx_of(me).map_err(stop_error)?;
        let reads: Vec<LocId> = s.txs.read_set(k).into_iter().collect();
        s.leak_and_cleanup(k);
        let wait = s.changes(&reads);
        s.decide(k, |s, p| {
            if s.parts[&p].parent.is_none() {
                Directive::Restart(Some(wait.clone()))
            } else {
                Directive::Killed
            }
        });
        self.emit(&mut s, k, None, EventKind::Abort);
        self.progress(&mut s);
        drop(s);
        self.take_directive(me)
    }

    /// Removes `me` from its transaction after a failure.
    pub(super) fn unregister(&self, me: ThreadId) {
        self.lock().parts.remove(&me);
    }

    pub(super) fn io_progress(&self, f: impl FnOnce(&mut Shared)) {
        let mut s = self.lock();
        f(&mut s);
        self.progress(&mut s);
    }
}

pub(super) fn stop_error(s: Stop) -> RuntimeError {
    match s {
        Stop::Fail(e) => e,
        Stop::Directive => {
            MachineError::Stuck(ThreadId(u64::MAX), "unexpected decision".into()).into()
        }
    }
}
