//! Classic STM reading of `atomically`: the whole block runs as one
//! indivisible step against the committed heap. A block that retries has
//! no step; one that throws keeps only the locations it allocated.
//! Enumerates every interleaving of these steps and collects terminal
//! states in the same shape as the reference machine's summaries.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use otm::machine::{reduce_term, Summary, ThreadOutcome};
use otm::syntax::SourceProgram;
use otm::term::Term;
use otm::value::{LocId, Value};

#[derive(Clone, PartialEq, Eq, Hash)]
struct State {
    heap: BTreeMap<LocId, Value>,
    next_loc: u64,
    threads: Vec<Term>,
    output: String,
}

enum Block {
    Done(Term),
    Retried,
}

fn loc(t: &otm::Expr) -> LocId {
    t.eval().unwrap().as_loc().expect("location")
}

/// Runs an ITM body alone. `heap` is updated in place.
fn run(heap: &mut BTreeMap<LocId, Value>, next_loc: &mut u64, body: Term) -> Block {
    let mut term = body;
    loop {
        let (redex, frames) = term.decompose();
        if frames.is_empty() {
            match redex {
                Term::Return(_) | Term::Throw(_) => return Block::Done(redex),
                Term::Retry => return Block::Retried,
                _ => {}
            }
        }
        let next = match redex {
            Term::Read(e) => Term::Return(heap[&loc(&e)].clone().into()),
            Term::Write(r, e) => {
                heap.insert(loc(&r), e.eval().unwrap());
                Term::unit()
            }
            Term::NewVar(e) => {
                let r = LocId(*next_loc);
                *next_loc += 1;
                heap.insert(r, e.eval().unwrap());
                Term::Return(Value::Loc(r).into())
            }
            Term::OrElse(a, b) => {
                let saved = (heap.clone(), *next_loc);
                match run(heap, next_loc, (*a).clone()) {
                    Block::Done(op) => op,
                    Block::Retried => {
                        (*heap, *next_loc) = saved;
                        (*b).clone()
                    }
                }
            }
            Term::Isolated(b) => match run(heap, next_loc, (*b).clone()) {
                Block::Done(op) => op,
                Block::Retried => return Block::Retried,
            },
            other => reduce_term(&other).expect("pure step"),
        };
        term = Term::plug(next, &frames);
    }
}

fn step(s: &State, i: usize) -> Option<State> {
    let (redex, frames) = s.threads[i].decompose();
    let mut next = s.clone();
    let t = match redex {
        Term::Return(_) | Term::Throw(_) | Term::Retry if frames.is_empty() => return None,
        Term::Atomic(body) => {
            let mut heap = s.heap.clone();
            let mut next_loc = s.next_loc;
            match run(&mut heap, &mut next_loc, (*body).clone()) {
                Block::Retried => return None,
                Block::Done(Term::Throw(e)) => {
                    for (r, v) in heap {
                        if r.0 >= s.next_loc {
                            next.heap.insert(r, v);
                        }
                    }
                    next.next_loc = next_loc;
                    Term::Throw(e)
                }
                Block::Done(op) => {
                    next.heap = heap;
                    next.next_loc = next_loc;
                    op
                }
            }
        }
        Term::PutChar(e) => {
            next.output.push(e.eval().unwrap().as_char().unwrap());
            Term::unit()
        }
        other => reduce_term(&other).expect("pure step"),
    };
    next.threads[i] = Term::plug(t, &frames);
    Some(next)
}

fn outcome(t: &Term) -> ThreadOutcome {
    match t {
        Term::Return(e) => ThreadOutcome::Returned(e.eval().unwrap().to_string()),
        Term::Throw(e) => ThreadOutcome::Threw(e.eval().unwrap().to_string()),
        _ => ThreadOutcome::Blocked,
    }
}

/// Terminal summaries of every schedule of `p`.
pub fn explore(p: &SourceProgram) -> BTreeSet<Summary> {
    let mut heap = BTreeMap::new();
    let mut globals = Vec::new();
    for (i, v) in p.vars.iter().enumerate() {
        heap.insert(LocId(i as u64), v.init.clone());
        globals.push((v.name.clone(), Value::Loc(LocId(i as u64))));
    }
    let threads = p
        .threads
        .iter()
        .map(|th| {
            globals
                .iter()
                .fold(th.term.clone(), |t, (x, v)| t.subst(x, v))
        })
        .collect();
    let start = State {
        heap,
        next_loc: p.vars.len() as u64,
        threads,
        output: String::new(),
    };
    let mut seen = HashSet::from([start.clone()]);
    let mut stack = vec![start];
    let mut terminals = BTreeSet::new();
    while let Some(s) = stack.pop() {
        let succ: Vec<State> = (0..s.threads.len()).filter_map(|i| step(&s, i)).collect();
        if succ.is_empty() {
            terminals.insert(summary(p, &s));
        }
        for n in succ {
            if seen.insert(n.clone()) {
                stack.push(n);
            }
        }
    }
    terminals
}

fn summary(p: &SourceProgram, s: &State) -> Summary {
    let named = p.vars.len() as u64;
    let mut anon: Vec<String> = s
        .heap
        .iter()
        .filter(|(r, _)| r.0 >= named)
        .map(|(_, v)| v.to_string())
        .collect();
    anon.sort();
    let threads: Vec<(String, ThreadOutcome)> = p
        .threads
        .iter()
        .zip(&s.threads)
        .map(|(d, t)| (d.name.clone(), outcome(t)))
        .collect();
    Summary {
        vars: p
            .vars
            .iter()
            .enumerate()
            .map(|(i, v)| (v.name.clone(), s.heap[&LocId(i as u64)].to_string()))
            .collect(),
        anon,
        output: s.output.clone(),
        deadlock: threads.iter().any(|(_, o)| *o == ThreadOutcome::Blocked),
        threads,
        history: None,
    }
}
