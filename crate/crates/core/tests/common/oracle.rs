//! Direct, unoptimised opacity decision: consistency plus a search over
//! every total order for a well-formed acyclic opacity graph.
//!
//! Written apart from the library checker. The interpretive choices are
//! shared on purpose: merges become a fresh location written by the target
//! and read by the merged transaction, which stays commit-pending;
//! `nonlocal` removes local operations until none remain; a read's writer
//! is the unique other transaction writing that value (generated histories
//! never write a value twice to one location).

use std::collections::{BTreeMap, BTreeSet};

use otm::history::{EventKind, History};

#[derive(Clone, Debug)]
struct Op {
    tx: u64,
    kind: Kind,
}

#[derive(Clone, Debug, PartialEq)]
enum Kind {
    Read(u64, String),
    Write(u64, String),
    Finish,
    Other,
}

struct Flat {
    ops: Vec<Op>,
    committed: BTreeSet<u64>,
    txs: Vec<u64>,
}

fn flatten(h: &History) -> Flat {
    let mut fresh = 1 + h
        .events
        .iter()
        .filter_map(|e| e.kind.loc())
        .map(|l| l.0)
        .max()
        .unwrap_or(0);
    let mut ops = Vec::new();
    let mut committed = BTreeSet::from([0]);
    let mut txs = BTreeSet::new();
    for e in &h.events {
        let tx = e.tx.0;
        txs.insert(tx);
        match &e.kind {
            EventKind::Read { loc, value } => ops.push(Op {
                tx,
                kind: Kind::Read(loc.0, value.clone()),
            }),
            EventKind::Write { loc, value } => ops.push(Op {
                tx,
                kind: Kind::Write(loc.0, value.clone()),
            }),
            EventKind::Commit => {
                committed.insert(tx);
                ops.push(Op {
                    tx,
                    kind: Kind::Finish,
                });
            }
            EventKind::Abort => ops.push(Op {
                tx,
                kind: Kind::Finish,
            }),
            EventKind::Merge { into } => {
                let x = fresh;
                fresh += 1;
                let token = format!("merged {tx}");
                txs.insert(into.0);
                ops.push(Op {
                    tx: into.0,
                    kind: Kind::Write(x, token.clone()),
                });
                ops.push(Op {
                    tx,
                    kind: Kind::Read(x, token),
                });
            }
            _ => ops.push(Op {
                tx,
                kind: Kind::Other,
            }),
        }
    }
    for k in &h.commit_pending {
        committed.remove(&k.0);
    }
    Flat {
        ops,
        committed,
        txs: txs.into_iter().collect(),
    }
}

fn loc_of(k: &Kind) -> Option<u64> {
    match k {
        Kind::Read(r, _) | Kind::Write(r, _) => Some(*r),
        _ => None,
    }
}

/// Indices of local operations among `keep`.
fn locals(ops: &[Op], keep: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    for (pos, &i) in keep.iter().enumerate() {
        let op = &ops[i];
        let Some(r) = loc_of(&op.kind) else { continue };
        let same = |j: &&usize| ops[**j].tx == op.tx && loc_of(&ops[**j].kind) == Some(r);
        match op.kind {
            Kind::Read(..) => {
                if let Some(&p) = keep[..pos].iter().rev().find(same) {
                    if matches!(ops[p].kind, Kind::Write(..)) {
                        out.push(i);
                    }
                }
            }
            Kind::Write(..) => {
                if let Some(&n) = keep[pos + 1..].iter().find(same) {
                    if matches!(ops[n].kind, Kind::Write(..)) {
                        out.push(i);
                    }
                }
            }
            _ => {}
        }
    }
    out
}

fn nonlocal(ops: &[Op]) -> Vec<usize> {
    let mut keep: Vec<usize> = (0..ops.len()).collect();
    loop {
        let l = locals(ops, &keep);
        if l.is_empty() {
            return keep;
        }
        keep.retain(|i| !l.contains(i));
    }
}

fn consistent(ops: &[Op], keep: &[usize]) -> bool {
    let all: Vec<usize> = (0..ops.len()).collect();
    for i in locals(ops, &all) {
        if let Kind::Read(r, v) = &ops[i].kind {
            let prev = ops[..i]
                .iter()
                .rev()
                .find(|o| o.tx == ops[i].tx && loc_of(&o.kind) == Some(*r));
            if prev.map(|o| &o.kind) != Some(&Kind::Write(*r, v.clone())) {
                return false;
            }
        }
    }
    keep.iter().all(|&i| match &ops[i].kind {
        Kind::Read(r, v) => keep
            .iter()
            .any(|&j| ops[j].kind == Kind::Write(*r, v.clone())),
        _ => true,
    })
}

/// Edge sets that do not depend on the order, plus the raw relations.
struct Relations {
    hb: BTreeSet<(u64, u64)>,
    /// (reader, writer)
    rf: BTreeSet<(u64, u64)>,
    /// (reader, location, writer)
    rf_loc: BTreeSet<(u64, u64, u64)>,
    reads: BTreeSet<(u64, u64)>,
    writes: BTreeSet<(u64, u64)>,
}

fn relations(ops: &[Op], keep: &[usize], txs: &[u64]) -> Relations {
    let mut first = BTreeMap::new();
    let mut finish = BTreeMap::new();
    for (i, op) in ops.iter().enumerate() {
        first.entry(op.tx).or_insert(i);
        if op.kind == Kind::Finish {
            finish.insert(op.tx, i);
        }
    }
    let mut hb = BTreeSet::new();
    for &a in txs {
        for &b in txs {
            if let (Some(f), Some(s)) = (finish.get(&a), first.get(&b)) {
                if f < s {
                    hb.insert((a, b));
                }
            }
        }
    }
    let mut rf = BTreeSet::new();
    let mut rf_loc = BTreeSet::new();
    let mut reads = BTreeSet::new();
    let mut writes = BTreeSet::new();
    for &i in keep {
        match &ops[i].kind {
            Kind::Read(r, v) => {
                reads.insert((ops[i].tx, *r));
                let writers: BTreeSet<u64> = keep
                    .iter()
                    .filter(|&&j| ops[j].kind == Kind::Write(*r, v.clone()))
                    .map(|&j| ops[j].tx)
                    .collect();
                let other: Vec<u64> = writers
                    .iter()
                    .copied()
                    .filter(|w| *w != ops[i].tx)
                    .collect();
                let w = match other.as_slice() {
                    [w] => Some(*w),
                    [] => None,
                    _ => panic!("value {v} written to {r} by several transactions"),
                };
                if let Some(w) = w {
                    rf.insert((ops[i].tx, w));
                    rf_loc.insert((ops[i].tx, *r, w));
                }
            }
            Kind::Write(r, _) => {
                writes.insert((ops[i].tx, *r));
            }
            _ => {}
        }
    }
    Relations {
        hb,
        rf,
        rf_loc,
        reads,
        writes,
    }
}

/// Edges `k -> k'` with a flag telling whether the edge is red.
fn graph(rel: &Relations, committed: &BTreeSet<u64>, order: &[u64]) -> BTreeMap<(u64, u64), bool> {
    let pos = |k: u64| order.iter().position(|x| *x == k).unwrap();
    let mut edges: BTreeMap<(u64, u64), bool> = BTreeMap::new();
    let black = |e: (u64, u64), edges: &mut BTreeMap<(u64, u64), bool>| {
        if e.0 != e.1 {
            edges.entry(e).or_insert(false);
        }
    };
    for &(a, b) in &rel.hb {
        black((b, a), &mut edges);
    }
    for &(reader, r) in &rel.reads {
        for &(writer, r2) in &rel.writes {
            if r == r2 && reader != writer && pos(reader) < pos(writer) {
                black((writer, reader), &mut edges);
            }
        }
    }
    for &(k2, r, k) in &rel.rf_loc {
        for &(k1, r2) in &rel.writes {
            if r2 == r && k1 != k && committed.contains(&k1) && pos(k1) < pos(k2) {
                black((k, k1), &mut edges);
            }
        }
    }
    for &(reader, writer) in &rel.rf {
        edges.insert((reader, writer), true);
    }
    edges
}

fn acceptable(edges: &BTreeMap<(u64, u64), bool>, committed: &BTreeSet<u64>, txs: &[u64]) -> bool {
    if edges
        .iter()
        .any(|((from, _), red)| !committed.contains(from) && !red)
    {
        return false;
    }
    // Kahn's algorithm.
    let mut indeg: BTreeMap<u64, usize> = txs.iter().map(|k| (*k, 0)).collect();
    for (_, to) in edges.keys() {
        *indeg.get_mut(to).unwrap() += 1;
    }
    let mut queue: Vec<u64> = indeg
        .iter()
        .filter(|(_, d)| **d == 0)
        .map(|(k, _)| *k)
        .collect();
    let mut seen = 0;
    while let Some(k) = queue.pop() {
        seen += 1;
        for (from, to) in edges.keys() {
            if *from == k {
                let d = indeg.get_mut(to).unwrap();
                *d -= 1;
                if *d == 0 {
                    queue.push(*to);
                }
            }
        }
    }
    seen == txs.len()
}

fn permutations(items: &mut Vec<u64>, k: usize, f: &mut impl FnMut(&[u64]) -> bool) -> bool {
    if k == items.len() {
        return f(items);
    }
    for i in k..items.len() {
        items.swap(k, i);
        if permutations(items, k + 1, f) {
            return true;
        }
        items.swap(k, i);
    }
    false
}

pub fn opaque(h: &History) -> bool {
    let flat = flatten(h);
    let keep = nonlocal(&flat.ops);
    if !consistent(&flat.ops, &keep) {
        return false;
    }
    let rel = relations(&flat.ops, &keep, &flat.txs);
    let mut txs = flat.txs.clone();
    let all = txs.clone();
    permutations(&mut txs, 0, &mut |order| {
        acceptable(&graph(&rel, &flat.committed, order), &flat.committed, &all)
    })
}
