//! The action language: expressions, action terms and their effect levels.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::value::{HostFn, Value};

/// Variable names bound by `bind`/`catch` abstractions.
pub type Name = Arc<str>;

#[derive(Copy, Clone, PartialEq, Eq, Hash, Debug)]
pub enum PrimOp {
    Add,
    Sub,
    Mul,
    Eq,
    Ne,
    Lt,
    Gt,
    Le,
    Ge,
    Not,
    And,
    Or,
}

impl PrimOp {
    pub const ALL: [PrimOp; 12] = [
        PrimOp::Add,
        PrimOp::Sub,
        PrimOp::Mul,
        PrimOp::Eq,
        PrimOp::Ne,
        PrimOp::Lt,
        PrimOp::Gt,
        PrimOp::Le,
        PrimOp::Ge,
        PrimOp::Not,
        PrimOp::And,
        PrimOp::Or,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            PrimOp::Add => "+",
            PrimOp::Sub => "-",
            PrimOp::Mul => "*",
            PrimOp::Eq => "=",
            PrimOp::Ne => "/=",
            PrimOp::Lt => "<",
            PrimOp::Gt => ">",
            PrimOp::Le => "<=",
            PrimOp::Ge => ">=",
            PrimOp::Not => "not",
            PrimOp::And => "and",
            PrimOp::Or => "or",
        }
    }

    pub fn from_symbol(s: &str) -> Option<PrimOp> {
        PrimOp::ALL.into_iter().find(|op| op.symbol() == s)
    }

    pub fn arity(self) -> usize {
        match self {
            PrimOp::Not => 1,
            _ => 2,
        }
    }
}

/// Pure expressions appearing as arguments of actions.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub enum Expr {
    Val(Value),
    Var(Name),
    Prim(PrimOp, Vec<Expr>),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("unbound variable `{0}`")]
    Unbound(Name),
    #[error("type mismatch in `{op}`: {args}")]
    Type { op: &'static str, args: String },
    #[error("integer overflow in `{0}`")]
    Overflow(&'static str),
    #[error("expected {expected}, found {found}")]
    Expected {
        expected: &'static str,
        found: Value,
    },
}

impl Expr {
    pub fn int(i: i64) -> Expr {
        Expr::Val(Value::Int(i))
    }

    pub fn var(name: &str) -> Expr {
        Expr::Var(Name::from(name))
    }

    pub fn prim(op: PrimOp, args: Vec<Expr>) -> Expr {
        Expr::Prim(op, args)
    }

    pub fn as_value(&self) -> Option<&Value> {
        match self {
            Expr::Val(v) => Some(v),
            _ => None,
        }
    }

    /// Evaluates a closed expression.
    pub fn eval(&self) -> Result<Value, EvalError> {
        match self {
            Expr::Val(v) => Ok(v.clone()),
            Expr::Var(x) => Err(EvalError::Unbound(x.clone())),
            Expr::Prim(op, args) => {
                let vals = args.iter().map(Expr::eval).collect::<Result<Vec<_>, _>>()?;
                apply_prim(*op, &vals)
            }
        }
    }

    fn subst(&self, x: &str, v: &Value) -> Expr {
        match self {
            Expr::Var(y) if &**y == x => Expr::Val(v.clone()),
            Expr::Val(_) | Expr::Var(_) => self.clone(),
            Expr::Prim(op, args) => {
                let args: Vec<Expr> = args.iter().map(|a| a.subst(x, v)).collect();
                let folded = Expr::Prim(*op, args);
                // Closed subexpressions are folded so substituted terms read as values.
                match folded.eval() {
                    Ok(val) if folded.is_closed() => Expr::Val(val),
                    _ => folded,
                }
            }
        }
    }

    fn mentions(&self, x: &str) -> bool {
        match self {
            Expr::Var(y) => &**y == x,
            Expr::Val(_) => false,
            Expr::Prim(_, args) => args.iter().any(|a| a.mentions(x)),
        }
    }

    fn is_closed(&self) -> bool {
        match self {
            Expr::Val(_) => true,
            Expr::Var(_) => false,
            Expr::Prim(_, args) => args.iter().all(Expr::is_closed),
        }
    }

    fn free_vars_into(&self, out: &mut Vec<Name>) {
        match self {
            Expr::Var(x) => out.push(x.clone()),
            Expr::Val(_) => {}
            Expr::Prim(_, args) => args.iter().for_each(|a| a.free_vars_into(out)),
        }
    }
}

impl From<Value> for Expr {
    fn from(v: Value) -> Self {
        Expr::Val(v)
    }
}

impl From<i64> for Expr {
    fn from(i: i64) -> Self {
        Expr::int(i)
    }
}

impl From<crate::value::LocId> for Expr {
    fn from(l: crate::value::LocId) -> Self {
        Expr::Val(Value::Loc(l))
    }
}

fn apply_prim(op: PrimOp, vals: &[Value]) -> Result<Value, EvalError> {
    use PrimOp::*;
    let mismatch = || EvalError::Type {
        op: op.symbol(),
        args: vals
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(", "),
    };
    if vals.len() != op.arity() {
        return Err(mismatch());
    }
    Ok(match (op, vals) {
        (Add, [Value::Int(a), Value::Int(b)]) => {
            Value::Int(a.checked_add(*b).ok_or(EvalError::Overflow("+"))?)
        }
        (Sub, [Value::Int(a), Value::Int(b)]) => {
            Value::Int(a.checked_sub(*b).ok_or(EvalError::Overflow("-"))?)
        }
        (Mul, [Value::Int(a), Value::Int(b)]) => {
            Value::Int(a.checked_mul(*b).ok_or(EvalError::Overflow("*"))?)
        }
        (Eq, [a, b]) => Value::Bool(a == b),
        (Ne, [a, b]) => Value::Bool(a != b),
        (Lt, [Value::Int(a), Value::Int(b)]) => Value::Bool(a < b),
        (Gt, [Value::Int(a), Value::Int(b)]) => Value::Bool(a > b),
        (Le, [Value::Int(a), Value::Int(b)]) => Value::Bool(a <= b),
        (Ge, [Value::Int(a), Value::Int(b)]) => Value::Bool(a >= b),
        (Not, [Value::Bool(a)]) => Value::Bool(!a),
        (And, [Value::Bool(a), Value::Bool(b)]) => Value::Bool(*a && *b),
        (Or, [Value::Bool(a), Value::Bool(b)]) => Value::Bool(*a || *b),
        _ => return Err(mismatch()),
    })
}

/// A deferred pure computation producing a term (forced by the `Eval` reduction).
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Thunk(HostFn);

impl Thunk {
    pub fn new(level: EffectLevel, f: impl Fn() -> Term + Send + Sync + 'static) -> Self {
        Thunk(HostFn::new(level, move |_| f()))
    }

    pub fn force(&self) -> Term {
        self.0.call(Value::Unit)
    }

    pub fn level(&self) -> EffectLevel {
        self.0.level()
    }
}

impl fmt::Debug for Thunk {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Thunk({:?})", self.0)
    }
}

/// Continuation of `bind`/`catch`: either a syntactic abstraction or a host function.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub enum Cont {
    Lambda(Name, Arc<Term>),
    Host(HostFn),
}

impl Cont {
    pub fn lambda(x: &str, body: Term) -> Cont {
        Cont::Lambda(Name::from(x), Arc::new(body))
    }

    pub fn host(level: EffectLevel, f: impl Fn(Value) -> Term + Send + Sync + 'static) -> Cont {
        Cont::Host(HostFn::new(level, f))
    }

    /// `\x -> return x`.
    pub fn ret() -> Cont {
        Cont::lambda("x", Term::Return(Expr::var("x")))
    }

    pub fn apply(&self, v: Value) -> Term {
        match self {
            Cont::Lambda(x, body) => body.subst(x, &v),
            Cont::Host(f) => f.call(v),
        }
    }
}

/// One layer of an evaluation context: `[] >>= f` or `[] `catch` h`.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub enum Frame {
    Bind(Cont),
    Catch(Cont),
}

/// Action terms.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub enum Term {
    Return(Expr),
    Bind(Arc<Term>, Cont),
    Throw(Expr),
    Catch(Arc<Term>, Cont),
    Retry,
    OrElse(Arc<Term>, Arc<Term>),
    NewVar(Expr),
    Read(Expr),
    Write(Expr, Expr),
    Fork(Arc<Term>),
    Atomic(Arc<Term>),
    Isolated(Arc<Term>),
    GetChar,
    PutChar(Expr),
    /// Pure conditional, resolved by `Eval`.
    If(Expr, Arc<Term>, Arc<Term>),
    /// Host thunk, resolved by `Eval`.
    Pure(Thunk),
}

impl Term {
    pub fn ret(v: impl Into<Expr>) -> Term {
        Term::Return(v.into())
    }

    pub fn unit() -> Term {
        Term::Return(Expr::Val(Value::Unit))
    }

    pub fn throw(v: impl Into<Expr>) -> Term {
        Term::Throw(v.into())
    }

    pub fn bind(m: Term, x: &str, n: Term) -> Term {
        Term::Bind(Arc::new(m), Cont::lambda(x, n))
    }

    pub fn bind_cont(m: Term, k: Cont) -> Term {
        Term::Bind(Arc::new(m), k)
    }

    /// `m >>= \_ -> n`.
    pub fn then(m: Term, n: Term) -> Term {
        Term::bind(m, "_", n)
    }

    /// Right-nested sequence of actions; the last one's result is the result.
    pub fn seq(mut ts: Vec<Term>) -> Term {
        let last = ts.pop().unwrap_or_else(Term::unit);
        ts.into_iter().rev().fold(last, |acc, t| Term::then(t, acc))
    }

    pub fn catch(m: Term, x: &str, h: Term) -> Term {
        Term::Catch(Arc::new(m), Cont::lambda(x, h))
    }

    pub fn or_else(a: Term, b: Term) -> Term {
        Term::OrElse(Arc::new(a), Arc::new(b))
    }

    pub fn new_var(v: impl Into<Expr>) -> Term {
        Term::NewVar(v.into())
    }

    pub fn read(r: impl Into<Expr>) -> Term {
        Term::Read(r.into())
    }

    pub fn write(r: impl Into<Expr>, v: impl Into<Expr>) -> Term {
        Term::Write(r.into(), v.into())
    }

    pub fn fork(m: Term) -> Term {
        Term::Fork(Arc::new(m))
    }

    pub fn atomic(m: Term) -> Term {
        Term::Atomic(Arc::new(m))
    }

    pub fn isolated(m: Term) -> Term {
        Term::Isolated(Arc::new(m))
    }

    pub fn put_char(c: char) -> Term {
        Term::PutChar(Expr::Val(Value::Char(c)))
    }

    pub fn if_(c: Expr, a: Term, b: Term) -> Term {
        Term::If(c, Arc::new(a), Arc::new(b))
    }

    /// Substitutes `v` for the free occurrences of `x`.
    pub fn subst(&self, x: &str, v: &Value) -> Term {
        self.subst_changed(x, v).unwrap_or_else(|| self.clone())
    }

    /// Like `subst`, but `None` when `x` is not free, so unchanged subterms
    /// stay shared.
    fn subst_changed(&self, x: &str, v: &Value) -> Option<Term> {
        let s = |e: &Expr| e.mentions(x).then(|| e.subst(x, v));
        let st = |t: &Arc<Term>| t.subst_changed(x, v).map(Arc::new);
        let sc = |k: &Cont| match k {
            Cont::Lambda(y, _) if &**y == x => None,
            Cont::Lambda(y, body) => st(body).map(|b| Cont::Lambda(y.clone(), b)),
            Cont::Host(_) => None,
        };
        let keep_e = |e: &Expr, n: Option<Expr>| n.unwrap_or_else(|| e.clone());
        let keep_t = |t: &Arc<Term>, n: Option<Arc<Term>>| n.unwrap_or_else(|| t.clone());
        match self {
            Term::Return(e) => s(e).map(Term::Return),
            Term::Throw(e) => s(e).map(Term::Throw),
            Term::NewVar(e) => s(e).map(Term::NewVar),
            Term::Read(e) => s(e).map(Term::Read),
            Term::PutChar(e) => s(e).map(Term::PutChar),
            Term::Retry | Term::GetChar | Term::Pure(_) => None,
            Term::Fork(m) => st(m).map(Term::Fork),
            Term::Atomic(m) => st(m).map(Term::Atomic),
            Term::Isolated(m) => st(m).map(Term::Isolated),
            Term::Bind(m, k) | Term::Catch(m, k) => {
                let (m2, k2) = (st(m), sc(k));
                if m2.is_none() && k2.is_none() {
                    return None;
                }
                let (m2, k2) = (keep_t(m, m2), k2.unwrap_or_else(|| k.clone()));
                Some(if matches!(self, Term::Bind(..)) {
                    Term::Bind(m2, k2)
                } else {
                    Term::Catch(m2, k2)
                })
            }
            Term::OrElse(a, b) => {
                let (a2, b2) = (st(a), st(b));
                (a2.is_some() || b2.is_some()).then(|| Term::OrElse(keep_t(a, a2), keep_t(b, b2)))
            }
            Term::Write(r, e) => {
                let (r2, e2) = (s(r), s(e));
                (r2.is_some() || e2.is_some()).then(|| Term::Write(keep_e(r, r2), keep_e(e, e2)))
            }
            Term::If(c, a, b) => {
                let (c2, a2, b2) = (s(c), st(a), st(b));
                (c2.is_some() || a2.is_some() || b2.is_some())
                    .then(|| Term::If(keep_e(c, c2), keep_t(a, a2), keep_t(b, b2)))
            }
        }
    }

    /// Free variables, in occurrence order (with repetitions).
    pub fn free_vars(&self) -> Vec<Name> {
        let mut out = Vec::new();
        self.free_vars_into(&mut Vec::new(), &mut out);
        out
    }

    fn free_vars_into(&self, bound: &mut Vec<Name>, out: &mut Vec<Name>) {
        let expr = |e: &Expr, bound: &Vec<Name>, out: &mut Vec<Name>| {
            let mut tmp = Vec::new();
            e.free_vars_into(&mut tmp);
            out.extend(tmp.into_iter().filter(|x| !bound.contains(x)));
        };
        let cont = |k: &Cont, bound: &mut Vec<Name>, out: &mut Vec<Name>| {
            if let Cont::Lambda(x, body) = k {
                bound.push(x.clone());
                body.free_vars_into(bound, out);
                bound.pop();
            }
        };
        match self {
            Term::Return(e)
            | Term::Throw(e)
            | Term::NewVar(e)
            | Term::Read(e)
            | Term::PutChar(e) => expr(e, bound, out),
            Term::Write(r, e) => {
                expr(r, bound, out);
                expr(e, bound, out);
            }
            Term::Bind(m, k) | Term::Catch(m, k) => {
                m.free_vars_into(bound, out);
                cont(k, bound, out);
            }
            Term::OrElse(a, b) => {
                a.free_vars_into(bound, out);
                b.free_vars_into(bound, out);
            }
            Term::If(c, a, b) => {
                expr(c, bound, out);
                a.free_vars_into(bound, out);
                b.free_vars_into(bound, out);
            }
            Term::Fork(m) | Term::Atomic(m) | Term::Isolated(m) => m.free_vars_into(bound, out),
            Term::Retry | Term::GetChar | Term::Pure(_) => {}
        }
    }

    /// `return`, `throw` or `retry`: the terms a context frame can consume.
    pub fn is_final(&self) -> bool {
        matches!(self, Term::Return(_) | Term::Throw(_) | Term::Retry)
    }

    /// Splits a term into its redex and the enclosing context frames
    /// (innermost first). Contexts are `[]`, `E >>= f` and `E `catch` h`.
    pub fn decompose(&self) -> (Term, Vec<Frame>) {
        let mut frames = Vec::new();
        let mut cur = self;
        loop {
            match cur {
                Term::Bind(m, k) if !m.is_final() => {
                    frames.push(Frame::Bind(k.clone()));
                    cur = m;
                }
                Term::Catch(m, h) if !m.is_final() => {
                    frames.push(Frame::Catch(h.clone()));
                    cur = m;
                }
                _ => break,
            }
        }
        frames.reverse();
        (cur.clone(), frames)
    }

    /// Inverse of [`Term::decompose`]: wraps `redex` in `frames` (innermost first).
    pub fn plug(redex: Term, frames: &[Frame]) -> Term {
        frames.iter().fold(redex, |acc, fr| match fr {
            Frame::Bind(k) => Term::Bind(Arc::new(acc), k.clone()),
            Frame::Catch(h) => Term::Catch(Arc::new(acc), h.clone()),
        })
    }
}

/// Effect levels, ordered `Itm < Otm < Io`.
#[derive(Copy, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum EffectLevel {
    Itm,
    Otm,
    Io,
}

impl fmt::Display for EffectLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EffectLevel::Itm => "ITM",
            EffectLevel::Otm => "OTM",
            EffectLevel::Io => "IO",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LevelError {
    #[error("fork is not allowed inside isolated")]
    ForkInIsolated,
    #[error("atomic is not allowed inside atomic")]
    NestedAtomic,
    #[error("{0} is not allowed inside isolated")]
    IoInIsolated(&'static str),
    #[error("{0} is not allowed inside a transaction")]
    IoInTransaction(&'static str),
    #[error("{0} requires an enclosing isolated at OTM level")]
    BareItm(&'static str),
    #[error("expected a term at level {expected}, found {found}")]
    Mismatch {
        expected: EffectLevel,
        found: EffectLevel,
    },
}

#[derive(Copy, Clone)]
struct LevelInfo {
    level: EffectLevel,
    /// Name of a `retry`/`orElse` not enclosed by `isolated`.
    bare: Option<&'static str>,
}

impl LevelInfo {
    fn join(self, other: LevelInfo) -> LevelInfo {
        LevelInfo {
            level: self.level.max(other.level),
            bare: self.bare.or(other.bare),
        }
    }

    fn checked(self) -> Result<LevelInfo, LevelError> {
        match self.bare {
            Some(what) if self.level > EffectLevel::Itm => Err(LevelError::BareItm(what)),
            _ => Ok(self),
        }
    }
}

/// Computes the minimal effect level at which `term` is typeable.
pub fn level_check(term: &Term) -> Result<EffectLevel, LevelError> {
    level_info(term).map(|i| i.level)
}

/// Checks that `term` is typeable at `level`.
pub fn check_at(term: &Term, level: EffectLevel) -> Result<(), LevelError> {
    let found = level_check(term)?;
    if found > level {
        return Err(LevelError::Mismatch {
            expected: level,
            found,
        });
    }
    Ok(())
}

fn level_info(term: &Term) -> Result<LevelInfo, LevelError> {
    use EffectLevel::*;
    let leaf = |level| Ok(LevelInfo { level, bare: None });
    let cont = |k: &Cont| -> Result<LevelInfo, LevelError> {
        match k {
            Cont::Lambda(_, body) => level_info(body),
            Cont::Host(f) => leaf(f.level()),
        }
    };
    match term {
        Term::Return(_) | Term::Throw(_) => leaf(Itm),
        Term::NewVar(_) | Term::Read(_) | Term::Write(..) => leaf(Itm),
        Term::Retry => Ok(LevelInfo {
            level: Itm,
            bare: Some("retry"),
        }),
        Term::OrElse(a, b) => {
            let a = level_info(a)?;
            let b = level_info(b)?;
            if a.level > Itm || b.level > Itm {
                return Err(LevelError::Mismatch {
                    expected: Itm,
                    found: a.level.max(b.level),
                });
            }
            Ok(LevelInfo {
                level: Itm,
                bare: Some("orElse"),
            })
        }
        Term::Bind(m, k) | Term::Catch(m, k) => level_info(m)?.join(cont(k)?).checked(),
        Term::If(_, a, b) => level_info(a)?.join(level_info(b)?).checked(),
        Term::Pure(t) => leaf(t.level()),
        Term::Fork(m) => {
            let inner = level_info(m)?;
            LevelInfo {
                level: inner.level.max(Otm),
                bare: inner.bare,
            }
            .checked()
        }
        Term::Isolated(m) => {
            let inner = level_info(m)?;
            if inner.level > Itm {
                return Err(first_non_itm(m));
            }
            leaf(Otm)
        }
        Term::Atomic(m) => {
            let inner = level_info(m)?;
            if inner.level > Otm {
                return Err(first_io_in_tx(m));
            }
            if let Some(what) = inner.bare {
                return Err(LevelError::BareItm(what));
            }
            leaf(Io)
        }
        Term::GetChar | Term::PutChar(_) => leaf(Io),
    }
}

/// Explains why the body of an `isolated` is not ITM.
fn first_non_itm(m: &Term) -> LevelError {
    find_culprit(m, true).unwrap_or(LevelError::Mismatch {
        expected: EffectLevel::Itm,
        found: EffectLevel::Otm,
    })
}

fn first_io_in_tx(m: &Term) -> LevelError {
    find_culprit(m, false).unwrap_or(LevelError::Mismatch {
        expected: EffectLevel::Otm,
        found: EffectLevel::Io,
    })
}

fn find_culprit(m: &Term, in_isolated: bool) -> Option<LevelError> {
    let io = |what| {
        Some(if in_isolated {
            LevelError::IoInIsolated(what)
        } else {
            LevelError::IoInTransaction(what)
        })
    };
    match m {
        Term::Fork(_) if in_isolated => Some(LevelError::ForkInIsolated),
        Term::Atomic(_) => Some(LevelError::NestedAtomic),
        Term::GetChar => io("getChar"),
        Term::PutChar(_) => io("putChar"),
        Term::Bind(a, k) | Term::Catch(a, k) => find_culprit(a, in_isolated).or_else(|| match k {
            Cont::Lambda(_, b) => find_culprit(b, in_isolated),
            Cont::Host(_) => None,
        }),
        Term::If(_, a, b) => find_culprit(a, in_isolated).or_else(|| find_culprit(b, in_isolated)),
        Term::Fork(a) => find_culprit(a, in_isolated),
        Term::OrElse(a, b) => find_culprit(a, in_isolated).or_else(|| find_culprit(b, in_isolated)),
        _ => None,
    }
}
