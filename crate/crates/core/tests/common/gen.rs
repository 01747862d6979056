//! Seeded generators for programs, term trees and histories.

use otm::history::{EventKind, History};
use otm::syntax::SourceProgram;
use otm::term::{Expr, PrimOp, Term};
use otm::value::{LocId, TxId, Value};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- term trees

const NAMES: [&str; 4] = ["x", "y", "acc", "v2"];
const CHARS: [char; 8] = ['a', 'Z', ' ', '\n', '(', '"', '\\', ';'];

fn value(r: &mut ChaCha8Rng) -> Value {
    match r.gen_range(0..6) {
        0 => Value::Unit,
        1 => Value::Bool(r.gen()),
        2 => Value::Char(*CHARS.choose(r).unwrap()),
        3 => Value::exc(["boom", "e1", "stop"].choose(r).unwrap()),
        4 => Value::Loc(LocId(r.gen_range(0..5))),
        _ => Value::Int(r.gen_range(-50..50)),
    }
}

fn expr(r: &mut ChaCha8Rng, depth: u32, scope: &[String]) -> Expr {
    if depth == 0 || r.gen_bool(0.5) {
        if !scope.is_empty() && r.gen_bool(0.4) {
            return Expr::var(scope.choose(r).unwrap());
        }
        return Expr::Val(value(r));
    }
    let op = *PrimOp::ALL.choose(r).unwrap();
    let args = (0..op.arity()).map(|_| expr(r, depth - 1, scope)).collect();
    Expr::prim(op, args)
}

#[derive(Copy, Clone, PartialEq)]
enum Lvl {
    Itm,
    Otm,
    Io,
}

fn bind_like(r: &mut ChaCha8Rng, lvl: Lvl, depth: u32, scope: &mut Vec<String>) -> Term {
    let m = tree(r, lvl, depth - 1, scope);
    let x = NAMES.choose(r).unwrap().to_string();
    scope.push(x.clone());
    let n = tree(r, lvl, depth - 1, scope);
    scope.pop();
    if r.gen_bool(0.7) {
        Term::bind(m, &x, n)
    } else {
        Term::catch(m, &x, n)
    }
}

fn tree(r: &mut ChaCha8Rng, lvl: Lvl, depth: u32, scope: &mut Vec<String>) -> Term {
    let e = |r: &mut ChaCha8Rng, scope: &Vec<String>| expr(r, 2, scope);
    if depth <= 1 {
        return match (lvl, r.gen_range(0..5)) {
            (_, 0) => Term::Return(e(r, scope)),
            (_, 1) => Term::Throw(e(r, scope)),
            (Lvl::Io, 2) => Term::GetChar,
            (Lvl::Io, 3) => Term::PutChar(e(r, scope)),
            (Lvl::Itm, 2) => Term::Retry,
            (Lvl::Itm, 3) => Term::Read(e(r, scope)),
            (Lvl::Itm, _) => Term::Write(e(r, scope), e(r, scope)),
            (Lvl::Otm, 2) => Term::isolated(Term::Read(e(r, scope))),
            _ => Term::Return(Expr::Val(value(r))),
        };
    }
    match (lvl, r.gen_range(0..6)) {
        (_, 0 | 1) => bind_like(r, lvl, depth, scope),
        (_, 2) => Term::if_(
            e(r, scope),
            tree(r, lvl, depth - 1, scope),
            tree(r, lvl, depth - 1, scope),
        ),
        (Lvl::Io, 3) => Term::atomic(tree(r, Lvl::Otm, depth - 1, scope)),
        (Lvl::Io, 4) => Term::fork(tree(r, Lvl::Io, depth - 1, scope)),
        (Lvl::Otm, 3) => Term::isolated(tree(r, Lvl::Itm, depth - 1, scope)),
        (Lvl::Otm, 4) => Term::fork(tree(r, Lvl::Otm, depth - 1, scope)),
        (Lvl::Itm, 3) => Term::or_else(
            tree(r, lvl, depth - 1, scope),
            tree(r, lvl, depth - 1, scope),
        ),
        (Lvl::Itm, 4) => Term::NewVar(e(r, scope)),
        _ => tree(r, lvl, 1, scope),
    }
}

/// A well-levelled IO term of depth at most `depth`.
pub fn term_tree(r: &mut ChaCha8Rng, depth: u32) -> Term {
    tree(r, Lvl::Io, depth, &mut Vec::new())
}

pub fn depth(t: &Term) -> u32 {
    1 + match t {
        Term::Bind(m, k) | Term::Catch(m, k) => match k {
            otm::Cont::Lambda(_, n) => depth(m).max(depth(n)),
            _ => depth(m),
        },
        Term::OrElse(a, b) | Term::If(_, a, b) => depth(a).max(depth(b)),
        Term::Fork(m) | Term::Atomic(m) | Term::Isolated(m) => depth(m),
        _ => 0,
    }
}

// ---------------------------------------------------------------- programs

fn lv(i: usize) -> Expr {
    Expr::var(&format!("l{i}"))
}

fn add(x: &str, n: i64) -> Expr {
    Expr::prim(PrimOp::Add, vec![Expr::var(x), Expr::int(n)])
}

/// Small open-transaction program: at most 4 threads, 4 locations and 12
/// memory operations.
pub fn otm_program(r: &mut ChaCha8Rng) -> SourceProgram {
    let nlocs = r.gen_range(1..=4);
    let nthreads = r.gen_range(1..=4);
    let mut budget: usize = 12;
    let mut p = SourceProgram::new();
    for i in 0..nlocs {
        p = p.var(&format!("l{i}"), r.gen_range(0..3i64));
    }
    for t in 0..nthreads {
        let mut blocks = Vec::new();
        for _ in 0..r.gen_range(1..=2) {
            let mut ops = Vec::new();
            let n = r.gen_range(1..=3).min(budget);
            budget -= n;
            for _ in 0..n {
                let l = lv(r.gen_range(0..nlocs));
                ops.push(match r.gen_range(0..7) {
                    0 | 1 => Term::Read(l),
                    2 | 3 => Term::Write(l, Expr::int(r.gen_range(0..5))),
                    4 => Term::isolated(Term::bind(
                        Term::Read(l.clone()),
                        "x",
                        Term::Write(l, add("x", 1)),
                    )),
                    5 => Term::fork(Term::Write(l, Expr::int(r.gen_range(5..9)))),
                    _ => Term::isolated(Term::Read(l)),
                });
            }
            if r.gen_bool(0.1) {
                ops.push(Term::throw(Value::exc("abort")));
            }
            ops.push(Term::unit());
            blocks.push(Term::catch(Term::atomic(Term::seq(ops)), "e", Term::unit()));
            if budget == 0 {
                break;
            }
        }
        p = p.thread(&format!("t{t}"), Term::seq(blocks));
        if budget == 0 {
            break;
        }
    }
    p
}

fn itm_body(r: &mut ChaCha8Rng, nlocs: usize, depth: u32) -> Term {
    let l = lv(r.gen_range(0..nlocs));
    if depth == 0 {
        return match r.gen_range(0..5) {
            0 => Term::Read(l),
            1 => Term::Write(l, Expr::int(r.gen_range(0..4))),
            2 => Term::bind(Term::Read(l.clone()), "x", Term::Write(l, add("x", 1))),
            3 => Term::bind(
                Term::Read(l),
                "x",
                Term::if_(
                    Expr::prim(PrimOp::Eq, vec![Expr::var("x"), Expr::int(0)]),
                    Term::Retry,
                    Term::ret(Expr::var("x")),
                ),
            ),
            _ => Term::bind(
                Term::NewVar(Expr::int(r.gen_range(0..3))),
                "n",
                Term::unit(),
            ),
        };
    }
    match r.gen_range(0..5) {
        0 => Term::or_else(itm_body(r, nlocs, depth - 1), itm_body(r, nlocs, depth - 1)),
        1 => Term::catch(
            Term::then(itm_body(r, nlocs, depth - 1), Term::throw(Value::exc("x"))),
            "e",
            itm_body(r, nlocs, depth - 1),
        ),
        2 => Term::then(
            itm_body(r, nlocs, depth - 1),
            Term::throw(Value::exc("stop")),
        ),
        _ => Term::then(itm_body(r, nlocs, depth - 1), itm_body(r, nlocs, depth - 1)),
    }
}

/// Program whose threads only run `atomically` blocks with isolated bodies.
/// `wrap` turns an ITM body into the block.
pub fn itm_program(r: &mut ChaCha8Rng, wrap: impl Fn(Term) -> Term) -> SourceProgram {
    let nlocs = r.gen_range(1..=3);
    let mut p = SourceProgram::new();
    for i in 0..nlocs {
        p = p.var(&format!("l{i}"), r.gen_range(0..2i64));
    }
    for t in 0..r.gen_range(2..=3) {
        let blocks: Vec<Term> = (0..r.gen_range(1..=2))
            .map(|_| {
                let d = r.gen_range(0..=2);
                wrap(itm_body(r, nlocs, d))
            })
            .collect();
        p = p.thread(&format!("t{t}"), Term::seq(blocks));
    }
    p
}

// ---------------------------------------------------------------- histories

#[derive(Clone, Copy)]
enum Act {
    Read(u64),
    Write(u64),
}

/// Random history with at most six transactions besides the initializer.
/// Written values are unique per location. Reads pick any value some
/// transaction writes to the location, past or future, and occasionally
/// one nobody writes. Some histories get a forced read-from cycle or a
/// merge.
pub fn history(r: &mut ChaCha8Rng) -> History {
    let nlocs = r.gen_range(1..=3u64);
    let n = r.gen_range(1..=6u64);
    let mut scripts: Vec<Vec<Act>> = (0..n)
        .map(|_| {
            (0..r.gen_range(1..=4))
                .map(|_| {
                    let l = r.gen_range(0..nlocs);
                    if r.gen_bool(0.5) {
                        Act::Read(l)
                    } else {
                        Act::Write(l)
                    }
                })
                .collect()
        })
        .collect();
    let cycle = n >= 2 && r.gen_bool(0.25);
    if cycle {
        let a = r.gen_range(0..n) as usize;
        let b = (a + 1 + r.gen_range(0..n as usize - 1)) % n as usize;
        let (la, lb) = (r.gen_range(0..nlocs), r.gen_range(0..nlocs));
        scripts[a].insert(0, Act::Write(la));
        scripts[b].insert(0, Act::Write(lb));
        scripts[a].push(Act::Read(lb));
        scripts[b].push(Act::Read(la));
    }
    // Values written to each location, fixed in advance so reads can see the future.
    let mut written: Vec<Vec<String>> = (0..nlocs).map(|l| vec![format!("i{l}")]).collect();
    let mut values: Vec<Vec<Option<String>>> = Vec::new();
    for (k, s) in scripts.iter().enumerate() {
        let mut vs = Vec::new();
        for (i, a) in s.iter().enumerate() {
            match a {
                Act::Write(l) => {
                    let v = format!("{}.{}", k + 1, i);
                    written[*l as usize].push(v.clone());
                    vs.push(Some(v));
                }
                Act::Read(_) => vs.push(None),
            }
        }
        values.push(vs);
    }
    let endings: Vec<u8> = (0..n).map(|_| r.gen_range(0..10)).collect();

    let mut ops: Vec<(TxId, EventKind)> = Vec::new();
    for l in 0..nlocs {
        ops.push((TxId::INIT, EventKind::NewLoc { loc: LocId(l) }));
        ops.push((
            TxId::INIT,
            EventKind::Write {
                loc: LocId(l),
                value: format!("i{l}"),
            },
        ));
    }
    let mut pc = vec![0usize; n as usize];
    let mut started = vec![false; n as usize];
    let mut done = vec![false; n as usize];
    while let Some(&k) = (0..n as usize)
        .filter(|k| !done[*k])
        .collect::<Vec<_>>()
        .choose(r)
    {
        let tx = TxId(k as u64 + 1);
        if !started[k] {
            started[k] = true;
            ops.push((tx, EventKind::Begin));
            continue;
        }
        if pc[k] < scripts[k].len() {
            let kind = match scripts[k][pc[k]] {
                Act::Write(l) => EventKind::Write {
                    loc: LocId(l),
                    value: values[k][pc[k]].clone().unwrap(),
                },
                Act::Read(l) => {
                    let value = if r.gen_bool(0.05) {
                        "junk".to_string()
                    } else {
                        written[l as usize].choose(r).unwrap().clone()
                    };
                    EventKind::Read {
                        loc: LocId(l),
                        value,
                    }
                }
            };
            ops.push((tx, kind));
            pc[k] += 1;
            continue;
        }
        done[k] = true;
        match endings[k] {
            0..=5 => ops.push((tx, EventKind::Commit)),
            6 | 7 => ops.push((tx, EventKind::Abort)),
            8 => {
                let live: Vec<usize> = (0..n as usize)
                    .filter(|j| *j != k && started[*j] && !done[*j])
                    .collect();
                if let Some(&j) = live.choose(r) {
                    ops.push((
                        tx,
                        EventKind::Merge {
                            into: TxId(j as u64 + 1),
                        },
                    ));
                }
            }
            _ => {}
        }
    }
    History::from_ops(ops)
}
