//! One exact pre-state/post-state check per reduction rule and auxiliary function.

use std::collections::BTreeMap;

use otm::history::EventKind;
use otm::machine::{
    cleanup_fn, commit_fn, leak_fn, reduce_term, Label, Machine, Thread, Transition,
};
use otm::term::{Cont, Expr, Frame, PrimOp, Term};
use otm::value::{LocId, ThreadId, TxId, Value};

pub type Case = (&'static str, fn());

pub fn cases() -> Vec<Case> {
    vec![
        ("bind_val", bind_val),
        ("bind_ex_throw", bind_ex_throw),
        ("bind_ex_retry", bind_ex_retry),
        ("catch_val_return", catch_val_return),
        ("catch_val_retry", catch_val_retry),
        ("catch_ex", catch_ex),
        ("eval_if_and_thunk", eval_if_and_thunk),
        ("in_char", in_char),
        ("out_char", out_char),
        ("fork_io", fork_io),
        ("term_io", term_io),
        ("new", new),
        ("term_t", term_t),
        ("fork_t", fork_t),
        ("new_var", new_var),
        ("read1", read1),
        ("read2", read2),
        ("write1", write1),
        ("write2", write2),
        ("or1", or1),
        ("or2", or2),
        ("isolated", isolated),
        ("isolated_retry_has_no_step", isolated_retry_has_no_step),
        ("commit", commit),
        ("commit_waits_for_all", commit_waits_for_all),
        ("abort1", abort1),
        ("abort2", abort2),
        ("abort3", abort3),
        ("restart", restart),
        ("commit_fn", commit_fn_case),
        ("cleanup_fn", cleanup_fn_case),
        ("leak_fn", leak_fn_case),
        ("merge_renames_claims", merge_renames_claims),
    ]
}

fn loc(i: u64) -> LocId {
    LocId(i)
}

fn plus1(x: &str) -> Expr {
    Expr::prim(PrimOp::Add, vec![Expr::var(x), Expr::int(1)])
}

fn heap(vals: &[i64]) -> Machine {
    let mut m = Machine::new();
    for v in vals {
        m.alloc_heap(Value::Int(*v));
    }
    m.events.clear();
    m
}

/// Puts a new thread into transaction `k` with an empty continuation.
fn in_tx(m: &mut Machine, k: u64, term: Term) -> ThreadId {
    in_tx_cont(m, k, term, Vec::new())
}

fn in_tx_cont(m: &mut Machine, k: u64, term: Term, cont: Vec<Frame>) -> ThreadId {
    let t = ThreadId(m.next_thread);
    m.next_thread += 1;
    m.next_tx = m.next_tx.max(k + 1);
    m.threads.insert(
        t,
        Thread::InTx {
            tx: TxId(k),
            term: term.clone(),
            cont,
            snapshot: term,
        },
    );
    t
}

fn term_of(m: &Machine, t: ThreadId) -> Term {
    m.threads[&t].term().clone()
}

fn claims(pairs: &[(u64, i64, u64)]) -> BTreeMap<LocId, (Value, TxId)> {
    pairs
        .iter()
        .map(|(r, v, k)| (loc(*r), (Value::Int(*v), TxId(*k))))
        .collect()
}

fn ints(pairs: &[(u64, i64)]) -> BTreeMap<LocId, Value> {
    pairs
        .iter()
        .map(|(r, v)| (loc(*r), Value::Int(*v)))
        .collect()
}

fn bind_val() {
    let t = Term::bind(Term::ret(3), "x", Term::write(loc(0), Expr::var("x")));
    assert_eq!(reduce_term(&t).unwrap(), Term::write(loc(0), 3));
}

fn bind_ex_throw() {
    let e = Value::exc("e");
    let t = Term::bind(Term::throw(e.clone()), "x", Term::ret(Expr::var("x")));
    assert_eq!(reduce_term(&t).unwrap(), Term::throw(e));
}

fn bind_ex_retry() {
    let t = Term::bind(Term::Retry, "x", Term::ret(Expr::var("x")));
    assert_eq!(reduce_term(&t).unwrap(), Term::Retry);
}

fn catch_val_return() {
    let t = Term::catch(Term::ret(4), "x", Term::ret(0));
    assert_eq!(reduce_term(&t).unwrap(), Term::ret(4));
}

fn catch_val_retry() {
    let t = Term::catch(Term::Retry, "x", Term::ret(0));
    assert_eq!(reduce_term(&t).unwrap(), Term::Retry);
}

fn catch_ex() {
    let t = Term::catch(
        Term::throw(Value::exc("boom")),
        "x",
        Term::ret(Expr::var("x")),
    );
    assert_eq!(reduce_term(&t).unwrap(), Term::ret(Value::exc("boom")));
}

fn eval_if_and_thunk() {
    let t = Term::if_(Expr::Val(Value::Bool(false)), Term::ret(1), Term::ret(2));
    assert_eq!(reduce_term(&t).unwrap(), Term::ret(2));
    let th = Term::Pure(otm::term::Thunk::new(otm::EffectLevel::Itm, || {
        Term::ret(9)
    }));
    assert_eq!(reduce_term(&th).unwrap(), Term::ret(9));
}

fn in_char() {
    let mut m = Machine::new().with_input("xy");
    let t = m.spawn(Term::bind(Term::GetChar, "c", Term::ret(Expr::var("c"))));
    assert_eq!(m.step_thread(t).unwrap(), Some(Label::Input('x')));
    assert_eq!(
        term_of(&m, t),
        Term::bind(Term::ret(Value::Char('x')), "c", Term::ret(Expr::var("c")))
    );
    assert_eq!(m.input.iter().collect::<String>(), "y");
}

fn out_char() {
    let mut m = Machine::new();
    let t = m.spawn(Term::put_char('a'));
    assert_eq!(m.step_thread(t).unwrap(), Some(Label::Output('a')));
    assert_eq!(m.output, "a");
    assert_eq!(term_of(&m, t), Term::unit());
}

fn fork_io() {
    let mut m = Machine::new();
    let t = m.spawn(Term::fork(Term::put_char('b')));
    m.step_thread(t).unwrap();
    let child = ThreadId(1);
    assert_eq!(term_of(&m, t), Term::ret(Value::Thread(child)));
    assert!(
        matches!(&m.threads[&child], Thread::Plain { term, wait: None } if *term == Term::put_char('b'))
    );
    assert_eq!(m.threads.len(), 2);
}

fn term_io() {
    let mut m = Machine::new();
    let t = m.spawn(Term::then(Term::ret(1), Term::put_char('q')));
    assert_eq!(m.step_thread(t).unwrap(), Some(Label::Tau));
    assert_eq!(term_of(&m, t), Term::put_char('q'));
    let done = m.spawn(Term::ret(1));
    assert_eq!(m.step_thread(done).unwrap(), None);
}

fn new() {
    let mut m = Machine::new();
    let body = Term::ret(5);
    let k = Cont::lambda("x", Term::put_char('n'));
    let t = m.spawn(Term::bind_cont(Term::atomic(body.clone()), k.clone()));
    assert_eq!(m.step_thread(t).unwrap(), Some(Label::New(TxId(1))));
    assert_eq!(
        m.threads[&t],
        Thread::InTx {
            tx: TxId(1),
            term: body.clone(),
            cont: vec![Frame::Bind(k)],
            snapshot: body,
        }
    );
    assert_eq!(m.next_tx, 2);
    assert_eq!(m.events.last().unwrap().kind, EventKind::Begin);
}

fn term_t() {
    let mut m = heap(&[0]);
    let t = in_tx(&mut m, 1, Term::then(Term::unit(), Term::read(loc(0))));
    assert_eq!(m.step_thread(t).unwrap(), Some(Label::Tau));
    assert_eq!(term_of(&m, t), Term::read(loc(0)));
    assert!(m.work.is_empty());
}

fn fork_t() {
    let mut m = heap(&[]);
    let t = in_tx(&mut m, 1, Term::fork(Term::ret(1)));
    m.step_thread(t).unwrap();
    let child = ThreadId(1);
    assert_eq!(term_of(&m, t), Term::ret(Value::Thread(child)));
    assert_eq!(m.tx_of(child), Some(TxId(1)));
    assert_eq!(m.forest.parent(child), Some(t));
    assert!(matches!(&m.threads[&child], Thread::InTx { cont, .. } if cont.is_empty()));
}

fn new_var() {
    let mut m = heap(&[3]);
    let t = in_tx(&mut m, 1, Term::new_var(8));
    m.step_thread(t).unwrap();
    assert_eq!(term_of(&m, t), Term::ret(loc(1)));
    assert_eq!(m.work, claims(&[(1, 8, 1)]));
    assert_eq!(m.heap, ints(&[(0, 3)]));
}

fn read1() {
    let mut m = heap(&[7]);
    let t = in_tx(&mut m, 1, Term::read(loc(0)));
    m.step_thread(t).unwrap();
    assert_eq!(m.work, claims(&[(0, 7, 1)]));
    assert_eq!(term_of(&m, t), Term::ret(7));
    assert_eq!(m.heap, ints(&[(0, 7)]));
}

fn read2() {
    let mut m = heap(&[0, 5]);
    m.work = claims(&[(0, 9, 1), (1, 5, 2)]);
    let _j = in_tx(&mut m, 1, Term::Retry);
    let t = in_tx(&mut m, 2, Term::read(loc(0)));
    m.step_thread(t).unwrap();
    assert_eq!(m.tx_of(t), Some(TxId(1)));
    assert_eq!(m.claims(), claims(&[(0, 9, 1), (1, 5, 1)]));
    assert_eq!(term_of(&m, t), Term::ret(9));
    assert_eq!(
        m.events.last().unwrap().kind,
        EventKind::Read {
            loc: loc(0),
            value: "9".into()
        }
    );
    assert!(m
        .events
        .iter()
        .any(|e| e.tx == TxId(2) && e.kind == EventKind::Merge { into: TxId(1) }));
}

fn write1() {
    let mut m = heap(&[1]);
    let t = in_tx(&mut m, 1, Term::write(loc(0), 4));
    m.step_thread(t).unwrap();
    assert_eq!(m.work, claims(&[(0, 4, 1)]));
    assert_eq!(m.heap, ints(&[(0, 1)]));
    assert_eq!(term_of(&m, t), Term::unit());
}

fn write2() {
    let mut m = heap(&[0]);
    m.work = claims(&[(0, 0, 1)]);
    let _j = in_tx(&mut m, 1, Term::Retry);
    let t = in_tx(&mut m, 2, Term::write(loc(0), 4));
    m.step_thread(t).unwrap();
    assert_eq!(m.claims(), claims(&[(0, 4, 1)]));
    assert_eq!(m.tx_of(t), Some(TxId(1)));
}

fn or1() {
    let mut m = heap(&[0]);
    let first = Term::then(Term::write(loc(0), 1), Term::throw(Value::exc("e")));
    let t = in_tx(&mut m, 1, Term::or_else(first, Term::ret(2)));
    m.step_thread(t).unwrap();
    assert_eq!(term_of(&m, t), Term::throw(Value::exc("e")));
    assert_eq!(m.work, claims(&[(0, 1, 1)]));
}

fn or2() {
    let mut m = heap(&[0]);
    let first = Term::then(Term::write(loc(0), 5), Term::Retry);
    let t = in_tx(&mut m, 1, Term::or_else(first, Term::ret(2)));
    m.step_thread(t).unwrap();
    assert_eq!(term_of(&m, t), Term::ret(2));
    assert!(m.work.is_empty());
    assert!(m.events.is_empty());
}

fn isolated() {
    let mut m = heap(&[0]);
    let body = Term::bind(Term::read(loc(0)), "x", Term::write(loc(0), plus1("x")));
    let t = in_tx(&mut m, 1, Term::isolated(body));
    m.step_thread(t).unwrap();
    assert_eq!(m.work, claims(&[(0, 1, 1)]));
    assert_eq!(term_of(&m, t), Term::unit());
}

fn isolated_retry_has_no_step() {
    let mut m = heap(&[0]);
    let body = Term::then(Term::write(loc(0), 3), Term::Retry);
    let t = in_tx(&mut m, 1, Term::isolated(body.clone()));
    assert_eq!(m.step_thread(t).unwrap(), None);
    assert!(m.work.is_empty());
    assert_eq!(term_of(&m, t), Term::isolated(body));
    assert!(!m.enabled().contains(&Transition::Step(t)));
}

fn commit() {
    let mut m = heap(&[0, 0]);
    m.work = claims(&[(0, 5, 1)]);
    let k = Cont::lambda("x", Term::put_char('c'));
    let t = in_tx_cont(&mut m, 1, Term::ret(1), vec![Frame::Bind(k.clone())]);
    assert_eq!(
        m.apply(Transition::Commit(TxId(1))).unwrap(),
        Label::Commit(TxId(1))
    );
    assert_eq!(m.heap, ints(&[(0, 5), (1, 0)]));
    assert!(m.work.is_empty());
    assert_eq!(
        m.threads[&t],
        Thread::plain(Term::bind_cont(Term::ret(1), k))
    );
    assert_eq!(m.events.last().unwrap().kind, EventKind::Commit);
    assert_eq!(m.versions.get(&loc(0)), Some(&1));
}

fn commit_waits_for_all() {
    let mut m = heap(&[]);
    in_tx(&mut m, 1, Term::ret(1));
    let b = in_tx(&mut m, 1, Term::read(loc(0)));
    assert!(m.try_commit(TxId(1)).is_err());
    assert!(!m.enabled().contains(&Transition::Commit(TxId(1))));
    m.threads.insert(
        b,
        Thread::InTx {
            tx: TxId(1),
            term: Term::ret(2),
            cont: Vec::new(),
            snapshot: Term::ret(2),
        },
    );
    assert!(m.enabled().contains(&Transition::Commit(TxId(1))));
}

fn abort1() {
    let mut m = heap(&[0]);
    m.next_loc = 2;
    m.work = claims(&[(0, 99, 1), (1, 7, 1)]);
    let e = Value::exc("e");
    let t = in_tx(&mut m, 1, Term::throw(e.clone()));
    let label = m
        .apply(Transition::Abort {
            tx: TxId(1),
            thread: t,
        })
        .unwrap();
    assert_eq!(label, Label::Abort(TxId(1), t, e.clone()));
    assert_eq!(m.heap, ints(&[(0, 0), (1, 7)]));
    assert!(m.work.is_empty());
    assert_eq!(m.threads[&t], Thread::plain(Term::throw(e)));
}

fn abort2() {
    let mut m = heap(&[]);
    let root = in_tx(&mut m, 1, Term::read(loc(0)));
    let child = in_tx(&mut m, 1, Term::throw(Value::exc("c")));
    m.forest.add_child(root, child);
    m.apply(Transition::Abort {
        tx: TxId(1),
        thread: child,
    })
    .unwrap();
    assert_eq!(
        m.threads[&root],
        Thread::plain(Term::throw(Value::exc("c")))
    );
    assert!(!m.threads.contains_key(&child));
    assert!(m.killed.contains(&child));
    assert!(m.forest.is_empty());
}

fn abort3() {
    let mut m = heap(&[]);
    let a = in_tx(&mut m, 1, Term::throw(Value::exc("a")));
    let snapshot = Term::read(loc(0));
    let k = Cont::lambda("x", Term::put_char('r'));
    let b = in_tx_cont(&mut m, 2, snapshot.clone(), vec![Frame::Bind(k.clone())]);
    let b_child = in_tx(&mut m, 2, Term::ret(0));
    m.forest.add_child(b, b_child);
    m.txs.union(TxId(2), TxId(1));
    m.apply(Transition::Abort {
        tx: TxId(1),
        thread: a,
    })
    .unwrap();
    assert_eq!(m.threads[&a], Thread::plain(Term::throw(Value::exc("a"))));
    assert_eq!(
        m.threads[&b],
        Thread::plain(Term::bind_cont(Term::atomic(snapshot), k))
    );
    assert!(m.killed.contains(&b_child));
    assert!(m.live_txs().is_empty());
}

fn restart() {
    let mut m = heap(&[0]);
    let t = in_tx(&mut m, 1, Term::then(Term::read(loc(0)), Term::Retry));
    m.step_thread(t).unwrap();
    m.step_thread(t).unwrap();
    assert_eq!(
        m.apply(Transition::Restart(TxId(1))).unwrap(),
        Label::Restart(TxId(1))
    );
    let snapshot = Term::then(Term::read(loc(0)), Term::Retry);
    assert_eq!(
        m.threads[&t],
        Thread::Plain {
            term: Term::atomic(snapshot),
            wait: Some(vec![(loc(0), 0)]),
        }
    );
    assert!(m.work.is_empty());
    assert_eq!(m.step_thread(t).unwrap(), None);
    *m.versions.entry(loc(0)).or_default() += 1;
    assert_eq!(m.step_thread(t).unwrap(), Some(Label::New(TxId(2))));
}

fn aux_state() -> Machine {
    let mut m = heap(&[10, 20]);
    m.next_loc = 4;
    m.work = claims(&[(0, 11, 1), (1, 21, 2), (2, 30, 3), (3, 40, 1)]);
    m.txs.union(TxId(3), TxId(1));
    in_tx(&mut m, 1, Term::ret(0));
    in_tx(&mut m, 2, Term::ret(0));
    m
}

fn commit_fn_case() {
    let m = aux_state();
    assert_eq!(
        commit_fn(TxId(1), &m),
        ints(&[(0, 11), (1, 20), (2, 30), (3, 40)])
    );
    assert_eq!(commit_fn(TxId(3), &m), commit_fn(TxId(1), &m));
}

fn cleanup_fn_case() {
    let m = aux_state();
    assert_eq!(cleanup_fn(TxId(1), &m), claims(&[(1, 21, 2)]));
    assert_eq!(
        cleanup_fn(TxId(2), &m),
        claims(&[(0, 11, 1), (2, 30, 3), (3, 40, 1)])
    );
}

fn leak_fn_case() {
    let m = aux_state();
    assert_eq!(
        leak_fn(TxId(1), &m),
        ints(&[(0, 10), (1, 20), (2, 30), (3, 40)])
    );
    assert_eq!(leak_fn(TxId(2), &m), ints(&[(0, 10), (1, 20)]));
}

fn merge_renames_claims() {
    let mut m = aux_state();
    m.merge_tx(TxId(2), TxId(1), ThreadId(1));
    assert_eq!(m.find(TxId(2)), TxId(1));
    assert_eq!(
        m.claims(),
        claims(&[(0, 11, 1), (1, 21, 1), (2, 30, 1), (3, 40, 1)])
    );
    assert_eq!(m.participants(TxId(1)), vec![ThreadId(0), ThreadId(1)]);
}
