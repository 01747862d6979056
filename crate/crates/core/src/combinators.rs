//! Derived combinators built from the base interface.

use crate::term::{level_check, Cont, EffectLevel, Expr, LevelError, Name, PrimOp, Term};
use crate::value::{HostFn, Value};

/// `atomically = atomic . isolated`.
pub fn atomically(term: Term) -> Result<Term, LevelError> {
    let wrapped = Term::atomic(Term::isolated(term));
    level_check(&wrapped)?;
    Ok(wrapped)
}

/// `if b then return () else retry`.
pub fn check(b: bool) -> Term {
    if b {
        Term::unit()
    } else {
        Term::Retry
    }
}

/// `check` over a boolean expression, resolved when the expression is evaluated.
pub fn check_expr(cond: Expr) -> Term {
    Term::if_(cond, Term::unit(), Term::Retry)
}

/// Picks a variable name that does not occur free in `avoid`.
fn fresh_name(avoid: &Expr) -> Name {
    let mut free = Vec::new();
    collect_vars(avoid, &mut free);
    let mut n = 0usize;
    loop {
        let cand = if n == 0 {
            "v".to_string()
        } else {
            format!("v{n}")
        };
        if !free.iter().any(|x| **x == *cand) {
            return Name::from(cand);
        }
        n += 1;
    }
}

fn collect_vars(e: &Expr, out: &mut Vec<Name>) {
    match e {
        Expr::Var(x) => out.push(x.clone()),
        Expr::Val(_) => {}
        Expr::Prim(_, args) => args.iter().for_each(|a| collect_vars(a, out)),
    }
}

/// `modifyOTVar var f`, with `f` given as an expression over `x`.
pub fn modify_with(var: Expr, x: &str, f: Expr) -> Term {
    Term::bind(Term::read(var.clone()), x, Term::write(var, f))
}

/// `modifyOTVar var f` with a host update function.
pub fn modify_otvar(var: Expr, f: impl Fn(Value) -> Value + Send + Sync + 'static) -> Term {
    let target = var.clone();
    Term::bind_cont(
        Term::read(var),
        Cont::host(EffectLevel::Itm, move |x| Term::write(target.clone(), f(x))),
    )
}

/// `assertOTVar var p`, with `p` given as a boolean expression over `x`.
pub fn assert_with(var: Expr, x: &str, pred: Expr) -> Term {
    Term::bind(Term::read(var), x, check_expr(pred))
}

/// `assertOTVar var p` with a host predicate.
pub fn assert_otvar(var: Expr, p: impl Fn(&Value) -> bool + Send + Sync + 'static) -> Term {
    Term::bind_cont(
        Term::read(var),
        Cont::host(EffectLevel::Itm, move |x| check(p(&x))),
    )
}

/// `up s = modifyOTVar s (1+)`.
pub fn sem_up(s: Expr) -> Term {
    let x = fresh_name(&s);
    modify_with(
        s,
        &x,
        Expr::prim(PrimOp::Add, vec![Expr::int(1), Expr::Var(x.clone())]),
    )
}

/// `down s = do assertOTVar s (> 0); modifyOTVar s (-1+)`.
pub fn sem_down(s: Expr) -> Term {
    let x = fresh_name(&s);
    Term::then(
        assert_with(
            s.clone(),
            &x,
            Expr::prim(PrimOp::Gt, vec![Expr::Var(x.clone()), Expr::int(0)]),
        ),
        modify_with(
            s,
            &x,
            Expr::prim(PrimOp::Add, vec![Expr::int(-1), Expr::Var(x.clone())]),
        ),
    )
}

/// `downAny (x:xs) = down x `orElse` downAny xs; downAny [] = retry`.
pub fn down_any(sems: &[Expr]) -> Term {
    match sems.split_first() {
        None => Term::Retry,
        Some((x, xs)) => Term::or_else(sem_down(x.clone()), down_any(xs)),
    }
}

fn run_queued(f: &Value) -> Term {
    match f {
        Value::Fn(h) => h.call(Value::Unit),
        _ => Term::unit(),
    }
}

/// Forks `action` inside the current transaction and queues `cont` to run on
/// its result in a fresh IO thread once the transaction has committed.
///
/// `queue` is an OTVar holding the pending continuations (`()` when empty);
/// it is drained by [`drain_conts`], which [`with_fork_conts`] runs after the
/// enclosing `atomic`.
pub fn fork_cont(queue: Expr, action: Term, cont: HostFn) -> Result<Term, LevelError> {
    let lvl = level_check(&action)?;
    if lvl > EffectLevel::Otm {
        return Err(LevelError::Mismatch {
            expected: EffectLevel::Otm,
            found: lvl,
        });
    }
    let enqueue = Cont::host(EffectLevel::Otm, move |v| {
        let q = queue.clone();
        let cont = cont.clone();
        Term::isolated(Term::bind_cont(
            Term::read(q.clone()),
            Cont::host(EffectLevel::Itm, move |old| {
                let cont = cont.clone();
                let v = v.clone();
                let chained = HostFn::new(EffectLevel::Io, move |_| {
                    let old = old.clone();
                    Term::bind_cont(
                        Term::fork(cont.call(v.clone())),
                        Cont::host(EffectLevel::Io, move |_| run_queued(&old)),
                    )
                });
                Term::write(q.clone(), Value::Fn(chained))
            }),
        ))
    });
    Ok(Term::fork(Term::bind_cont(action, enqueue)))
}

/// Empties `queue` and runs every continuation queued in it.
pub fn drain_conts(queue: Expr) -> Term {
    let q = queue.clone();
    let take = Term::bind_cont(
        Term::read(queue),
        Cont::host(EffectLevel::Itm, move |f| {
            Term::then(Term::write(q.clone(), Value::Unit), Term::ret(f))
        }),
    );
    Term::bind_cont(
        Term::atomic(Term::isolated(take)),
        Cont::host(EffectLevel::Io, |f| run_queued(&f)),
    )
}

/// `atomic (body q)` followed by the continuations `body` queued on `q`
/// through [`fork_cont`]. The queue is allocated by a preceding transaction.
pub fn with_fork_conts(body: impl Fn(Expr) -> Term + Send + Sync + 'static) -> Term {
    let body = std::sync::Arc::new(body);
    Term::bind_cont(
        Term::atomic(Term::isolated(Term::new_var(Value::Unit))),
        Cont::host(EffectLevel::Io, move |q| {
            let qe = Expr::Val(q);
            let after = qe.clone();
            Term::bind_cont(
                Term::atomic(body(qe)),
                Cont::host(EffectLevel::Io, move |r| {
                    Term::then(drain_conts(after.clone()), Term::ret(r))
                }),
            )
        }),
    )
}
