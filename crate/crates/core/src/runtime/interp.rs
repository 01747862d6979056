//! Term interpreter for runtime threads.

use std::sync::Arc;

use super::tx::{stop_error, Stop};
use super::{Directive, Inner, RuntimeError};
use crate::machine::{eval_value, kind_name, reduce_term, MachineError};
use crate::term::{Expr, Term};
use crate::value::{LocId, ThreadId, Value};

enum Solo {
    Done(Term),
    Retried,
}

fn stuck(t: ThreadId, why: String) -> MachineError {
    MachineError::Stuck(t, why)
}

fn as_loc(t: ThreadId, e: &Expr) -> Result<LocId, MachineError> {
    eval_value(e)?
        .as_loc()
        .ok_or_else(|| stuck(t, "expected a location".into()))
}

impl Inner {
    /// Runs an IO-level term to its final value.
    pub(super) fn io_loop(
        self: &Arc<Self>,
        me: ThreadId,
        term: Term,
    ) -> Result<Value, RuntimeError> {
        let mut term = term;
        loop {
            let (redex, frames) = term.decompose();
            let next = match &redex {
                Term::Return(e) if frames.is_empty() => return Ok(eval_value(e)?),
                Term::Throw(e) if frames.is_empty() => {
                    return Err(RuntimeError::Uncaught(eval_value(e)?))
                }
                Term::GetChar => {
                    let g = self.lock();
                    let mut g = self
                        .wait_for(g, me, false, |s| !s.input.is_empty())
                        .map_err(stop_error)?;
                    let c = g.input.pop_front().expect("input");
                    drop(g);
                    self.io_progress(|_| ());
                    Term::ret(Value::Char(c))
                }
                Term::PutChar(e) => {
                    let c = eval_value(e)?
                        .as_char()
                        .ok_or_else(|| stuck(me, "putChar expects a character".into()))?;
                    self.io_progress(|s| s.output.push(c));
                    Term::unit()
                }
                Term::Fork(m) => {
                    let t = self.fresh_thread();
                    self.spawn_io(t, (**m).clone());
                    Term::ret(Value::Thread(t))
                }
                Term::Atomic(body) => match self.run_atomic(me, (**body).clone())? {
                    Ok(v) => Term::ret(v),
                    Err(e) => Term::throw(e),
                },
                Term::Bind(..) | Term::Catch(..) | Term::If(..) | Term::Pure(_) => {
                    reduce_term(&redex)?
                }
                other => {
                    let why = format!("{} outside a transaction", kind_name(other));
                    return Err(stuck(me, why).into());
                }
            };
            term = Term::plug(next, &frames);
        }
    }

    /// Runs `body` as a transaction until it commits or rethrows.
    /// The inner result is the committed value or the exception.
    fn run_atomic(
        self: &Arc<Self>,
        me: ThreadId,
        body: Term,
    ) -> Result<Result<Value, Value>, RuntimeError> {
        loop {
            self.begin(me).map_err(stop_error)?;
            match self.drive(me, body.clone())? {
                Directive::Committed(v) => return Ok(Ok(v)),
                Directive::Rethrow(e) => return Ok(Err(e)),
                Directive::Killed => {
                    return Err(stuck(me, "transaction root was killed".into()).into())
                }
                Directive::Restart(None) => {}
                Directive::Restart(Some(wait)) => {
                    self.wait_changed(me, &wait, false).map_err(stop_error)?
                }
            }
        }
    }

    /// Runs a participant's body and settles its part in the transaction.
    pub(super) fn drive(
        self: &Arc<Self>,
        me: ThreadId,
        body: Term,
    ) -> Result<Directive, RuntimeError> {
        let end = self.tx_loop(me, body);
        let end = match end {
            Ok(t) => t,
            Err(Stop::Directive) => return self.take_directive(me),
            Err(Stop::Fail(e)) => {
                self.unregister(me);
                return Err(e);
            }
        };
        match end {
            Term::Return(e) => self.finish_ready(me, eval_value(&e)?),
            Term::Throw(e) => self.abort(me, eval_value(&e)?),
            _ => self.restart(me),
        }
    }

    fn tx_loop(self: &Arc<Self>, me: ThreadId, body: Term) -> Result<Term, Stop> {
        let mut term = body;
        let mut reads = Vec::new();
        loop {
            let (redex, frames) = term.decompose();
            if frames.is_empty() && redex.is_final() {
                return Ok(redex);
            }
            let next = match redex {
                Term::Fork(m) => Term::ret(Value::Thread(self.fork_in_tx(me, (*m).clone())?)),
                Term::Isolated(body) => self.run_isolated(me, (*body).clone())?,
                Term::OrElse(a, b) => {
                    let snap = self.acquire_token(me)?;
                    reads.clear();
                    match self.run_solo(me, (*a).clone(), &mut reads) {
                        Ok(Solo::Done(op)) => {
                            self.release_token(me, None);
                            op
                        }
                        Ok(Solo::Retried) => {
                            self.release_token(me, Some((snap, &reads)));
                            (*b).clone()
                        }
                        Err(stop) => {
                            self.release_token(me, Some((snap, &reads)));
                            return Err(stop);
                        }
                    }
                }
                other => self.step(me, other, &mut reads)?,
            };
            term = Term::plug(next, &frames);
        }
    }

    /// Memory operations and pure reductions, shared by both loops.
    fn step(&self, me: ThreadId, redex: Term, reads: &mut Vec<LocId>) -> Result<Term, Stop> {
        Ok(match redex {
            Term::Bind(..) | Term::Catch(..) | Term::If(..) | Term::Pure(_) => reduce_term(&redex)?,
            Term::NewVar(e) => Term::ret(Value::Loc(self.otvar_new(me, eval_value(&e)?)?)),
            Term::Read(e) => {
                let r = as_loc(me, &e)?;
                reads.push(r);
                Term::ret(self.otvar_read(me, r)?)
            }
            Term::Write(re, e) => {
                let r = as_loc(me, &re)?;
                self.otvar_write(me, r, eval_value(&e)?)?;
                Term::unit()
            }
            Term::Atomic(_) => return Err(RuntimeError::NestedAtomic.into()),
            other => {
                let why = format!("{} inside a transaction", kind_name(&other));
                return Err(stuck(me, why).into());
            }
        })
    }

    /// Runs an isolated section, blocking while its body retries.
    fn run_isolated(self: &Arc<Self>, me: ThreadId, body: Term) -> Result<Term, Stop> {
        loop {
            let snap = self.acquire_token(me)?;
            let mut reads = Vec::new();
            match self.run_solo(me, body.clone(), &mut reads) {
                Ok(Solo::Done(op)) => {
                    self.release_token(me, None);
                    return Ok(op);
                }
                Ok(Solo::Retried) => {
                    let wait = self.release_token(me, Some((snap, &reads)));
                    self.wait_changed(me, &wait, true)?;
                }
                Err(stop) => {
                    self.release_token(me, Some((snap, &reads)));
                    return Err(stop);
                }
            }
        }
    }

    /// Runs `body` while holding the isolation token.
    fn run_solo(&self, me: ThreadId, body: Term, reads: &mut Vec<LocId>) -> Result<Solo, Stop> {
        let mut term = body;
        loop {
            let (redex, frames) = term.decompose();
            if frames.is_empty() {
                match redex {
                    Term::Return(_) | Term::Throw(_) => return Ok(Solo::Done(redex)),
                    Term::Retry => return Ok(Solo::Retried),
                    _ => {}
                }
            }
            let next = match redex {
                Term::OrElse(a, b) => {
                    let snap = self.snapshot();
                    match self.run_solo(me, (*a).clone(), reads)? {
                        Solo::Done(op) => op,
                        Solo::Retried => {
                            self.restore(me, snap, reads);
                            (*b).clone()
                        }
                    }
                }
                Term::Isolated(body) => {
                    let snap = self.snapshot();
                    match self.run_solo(me, (*body).clone(), reads)? {
                        Solo::Done(op) => op,
                        Solo::Retried => {
                            self.restore(me, snap, reads);
                            return Ok(Solo::Retried);
                        }
                    }
                }
                Term::Fork(_) => {
                    return Err(stuck(me, "fork inside an isolated section".into()).into())
                }
                other => self.step(me, other, reads)?,
            };
            term = Term::plug(next, &frames);
        }
    }
}
