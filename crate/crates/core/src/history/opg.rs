use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::analysis::{expand_merges, happens_before, is_consistent, nonlocal, reads_from};
use super::{EventKind, History, HistoryError, TxStatus};
use crate::value::{LocId, TxId};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum Colour {
    Red,
    Black,
}

impl fmt::Display for Colour {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Colour::Red => "red",
            Colour::Black => "black",
        })
    }
}

/// Why an edge `k -> k'` exists.
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Clause {
    /// `k'` happens before `k`.
    HappensBefore,
    /// `k` reads a value written by `k'`.
    ReadsFrom,
    /// `k'` reads a location written by `k` and precedes it in the order.
    AntiDependency,
    /// `k'` is committed, writes `r`, and precedes some `k''` reading `r` from `k`.
    WriteOrder,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Edge {
    pub from: TxId,
    pub to: TxId,
    pub clauses: BTreeSet<Clause>,
}

impl Edge {
    pub fn colour(&self) -> Colour {
        if self.clauses.contains(&Clause::ReadsFrom) {
            Colour::Red
        } else {
            Colour::Black
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct OpacityGraph {
    pub nodes: BTreeMap<TxId, Colour>,
    pub edges: BTreeMap<(TxId, TxId), Edge>,
}

impl OpacityGraph {
    fn add(&mut self, from: TxId, to: TxId, clause: Clause) {
        if from == to {
            return;
        }
        self.edges
            .entry((from, to))
            .or_insert_with(|| Edge {
                from,
                to,
                clauses: BTreeSet::new(),
            })
            .clauses
            .insert(clause);
    }

    pub fn successors(&self, k: TxId) -> impl Iterator<Item = &Edge> + '_ {
        self.edges
            .range((k, TxId(0))..=(k, TxId(u64::MAX)))
            .map(|(_, e)| e)
    }

    /// First edge leaving a red node that is not itself red.
    pub fn ill_formed_edge(&self) -> Option<&Edge> {
        self.edges
            .values()
            .find(|e| self.nodes.get(&e.from) == Some(&Colour::Red) && e.colour() == Colour::Black)
    }
}

impl fmt::Display for OpacityGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, c) in &self.nodes {
            writeln!(f, "node {k} {c}")?;
        }
        for e in self.edges.values() {
            let clauses: Vec<String> = e.clauses.iter().map(|c| format!("{c:?}")).collect();
            writeln!(
                f,
                "edge {} -> {} {} [{}]",
                e.from,
                e.to,
                e.colour(),
                clauses.join(",")
            )?;
        }
        Ok(())
    }
}

pub fn well_formed(g: &OpacityGraph) -> bool {
    g.ill_formed_edge().is_none()
}

pub fn acyclic(g: &OpacityGraph) -> bool {
    find_cycle(g).is_none()
}

/// A directed cycle as a list of nodes, first node not repeated.
pub fn find_cycle(g: &OpacityGraph) -> Option<Vec<TxId>> {
    #[derive(Copy, Clone, PartialEq)]
    enum Mark {
        New,
        Active,
        Done,
    }
    let mut mark: BTreeMap<TxId, Mark> = g.nodes.keys().map(|k| (*k, Mark::New)).collect();
    for e in g.edges.values() {
        mark.entry(e.from).or_insert(Mark::New);
        mark.entry(e.to).or_insert(Mark::New);
    }
    let roots: Vec<TxId> = mark.keys().copied().collect();
    for root in roots {
        if mark[&root] != Mark::New {
            continue;
        }
        let mut path = vec![root];
        let mut stack = vec![g.successors(root).map(|e| e.to).collect::<Vec<_>>()];
        mark.insert(root, Mark::Active);
        while let Some(todo) = stack.last_mut() {
            match todo.pop() {
                Some(next) => match mark[&next] {
                    Mark::Active => {
                        let at = path.iter().position(|k| *k == next).unwrap();
                        return Some(path[at..].to_vec());
                    }
                    Mark::New => {
                        mark.insert(next, Mark::Active);
                        path.push(next);
                        stack.push(g.successors(next).map(|e| e.to).collect());
                    }
                    Mark::Done => {}
                },
                None => {
                    let done = path.pop().unwrap();
                    mark.insert(done, Mark::Done);
                    stack.pop();
                }
            }
        }
    }
    None
}

/// Every edge red, red out-degree at most one, no red cycle, and every node
/// with a parent is red.
pub fn red_forest(g: &OpacityGraph) -> bool {
    if g.edges.values().any(|e| e.colour() != Colour::Red) {
        return false;
    }
    let mut out_degree: BTreeMap<TxId, usize> = BTreeMap::new();
    for e in g.edges.values() {
        *out_degree.entry(e.from).or_default() += 1;
    }
    if out_degree.values().any(|d| *d > 1) {
        return false;
    }
    if out_degree
        .keys()
        .any(|k| g.nodes.get(k) != Some(&Colour::Red))
    {
        return false;
    }
    acyclic(g)
}

/// Order-independent parts of the graph plus the facts needed to add the
/// order-dependent edges quickly.
struct Inputs {
    fixed: OpacityGraph,
    /// `(k, k')`: `k'` reads a location written by `k`.
    anti: Vec<(TxId, TxId)>,
    /// `(k, k', k'')`: committed `k'` writes `r` and `k''` reads `r` from `k`.
    write_order: Vec<(TxId, TxId, TxId)>,
}

impl Inputs {
    fn new(h: &History) -> Inputs {
        let statuses = h.statuses();
        let nodes: BTreeMap<TxId, Colour> = statuses
            .iter()
            .map(|(k, s)| {
                let c = if *s == TxStatus::Committed {
                    Colour::Black
                } else {
                    Colour::Red
                };
                (*k, c)
            })
            .collect();
        let hb = happens_before(h);
        let rf = reads_from(h);
        let txs: Vec<TxId> = nodes.keys().copied().collect();
        let mut fixed = OpacityGraph {
            nodes,
            edges: BTreeMap::new(),
        };
        for &k in &txs {
            for &k2 in &txs {
                if hb.holds(k2, k) {
                    fixed.add(k, k2, Clause::HappensBefore);
                }
            }
        }
        let mut readers: BTreeMap<LocId, BTreeSet<TxId>> = BTreeMap::new();
        let mut writers: BTreeMap<LocId, BTreeSet<TxId>> = BTreeMap::new();
        let mut reads_loc_from: BTreeSet<(TxId, LocId, TxId)> = BTreeSet::new();
        for e in &h.events {
            match &e.kind {
                EventKind::Read { loc, .. } => {
                    readers.entry(*loc).or_default().insert(e.tx);
                    if let Some(&w) = rf.get(&e.seq) {
                        fixed.add(e.tx, w, Clause::ReadsFrom);
                        reads_loc_from.insert((e.tx, *loc, w));
                    }
                }
                EventKind::Write { loc, .. } => {
                    writers.entry(*loc).or_default().insert(e.tx);
                }
                _ => {}
            }
        }
        let mut anti = BTreeSet::new();
        for (loc, ws) in &writers {
            for k in ws {
                for k2 in readers.get(loc).into_iter().flatten() {
                    if k != k2 {
                        anti.insert((*k, *k2));
                    }
                }
            }
        }
        let mut write_order = BTreeSet::new();
        for (k2_reader, loc, k) in &reads_loc_from {
            for k1 in writers.get(loc).into_iter().flatten() {
                if k1 != k && statuses.get(k1) == Some(&TxStatus::Committed) {
                    write_order.insert((*k, *k1, *k2_reader));
                }
            }
        }
        Inputs {
            fixed,
            anti: anti.into_iter().collect(),
            write_order: write_order.into_iter().collect(),
        }
    }

    fn graph(&self, order: &[TxId]) -> OpacityGraph {
        let pos: BTreeMap<TxId, usize> = order.iter().enumerate().map(|(i, k)| (*k, i)).collect();
        let before = |a: &TxId, b: &TxId| pos[a] < pos[b];
        let mut g = self.fixed.clone();
        for (k, k2) in &self.anti {
            if before(k2, k) {
                g.add(*k, *k2, Clause::AntiDependency);
            }
        }
        for (k, k1, k2) in &self.write_order {
            if before(k1, k2) {
                g.add(*k, *k1, Clause::WriteOrder);
            }
        }
        g
    }
}

/// Builds the opacity graph of `h` (already expanded and made nonlocal)
/// under the total order `order`, which must list every transaction of `h`.
pub fn build_opg(h: &History, order: &[TxId]) -> OpacityGraph {
    Inputs::new(h).graph(order)
}

/// `t0` first, then by commit or abort time with live transactions last,
/// ties broken by first event.
pub fn natural_order(h: &History) -> Vec<TxId> {
    let hb = happens_before(h);
    let mut txs = h.transactions();
    txs.sort_by_key(|k| {
        (
            *k != TxId::INIT,
            hb.finish(*k).unwrap_or(u64::MAX),
            hb.first(*k).unwrap_or(u64::MAX),
        )
    });
    txs
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Failure {
    Inconsistent,
    IllFormed { from: TxId, to: TxId },
    Cycle(Vec<TxId>),
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Inconsistent => f.write_str("history is not consistent"),
            Failure::IllFormed { from, to } => {
                write!(f, "black edge {from} -> {to} leaves a red node")
            }
            Failure::Cycle(c) => {
                let names: Vec<String> = c.iter().map(|k| k.to_string()).collect();
                write!(f, "cycle {} -> {}", names.join(" -> "), c[0])
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Verdict {
    Opaque {
        witness: Vec<TxId>,
    },
    NotOpaque {
        failure: Failure,
        graph: OpacityGraph,
    },
    /// Too many transactions to search every order; carries the natural-order graph.
    Unknown {
        failure: Failure,
        graph: OpacityGraph,
    },
}

impl Verdict {
    pub fn opaque(&self) -> Option<bool> {
        match self {
            Verdict::Opaque { .. } => Some(true),
            Verdict::NotOpaque { .. } => Some(false),
            Verdict::Unknown { .. } => None,
        }
    }
}

fn failure_of(g: &OpacityGraph) -> Option<Failure> {
    if let Some(e) = g.ill_formed_edge() {
        return Some(Failure::IllFormed {
            from: e.from,
            to: e.to,
        });
    }
    find_cycle(g).map(Failure::Cycle)
}

pub fn check_opaque(h: &History) -> Result<Verdict, HistoryError> {
    check_opaque_with(h, 10)
}

/// Decides opacity of a raw history. The natural order is tried first; up to
/// `max_brute_force` transactions every other order is tried too.
pub fn check_opaque_with(h: &History, max_brute_force: usize) -> Result<Verdict, HistoryError> {
    h.validate()?;
    let expanded = expand_merges(h);
    let nl = nonlocal(&expanded);
    let inputs = Inputs::new(&nl);
    let natural = natural_order(&nl);
    let graph = inputs.graph(&natural);
    if !is_consistent(&expanded) {
        return Ok(Verdict::NotOpaque {
            failure: Failure::Inconsistent,
            graph,
        });
    }
    let Some(failure) = failure_of(&graph) else {
        return Ok(Verdict::Opaque { witness: natural });
    };
    // Edges that exist under every order can only make things worse.
    if failure_of(&inputs.fixed).is_some() {
        return Ok(Verdict::NotOpaque { failure, graph });
    }
    if natural.len() > max_brute_force {
        return Ok(Verdict::Unknown { failure, graph });
    }
    let mut order = natural.clone();
    order.sort();
    loop {
        if failure_of(&inputs.graph(&order)).is_none() {
            return Ok(Verdict::Opaque { witness: order });
        }
        if !next_permutation(&mut order) {
            return Ok(Verdict::NotOpaque { failure, graph });
        }
    }
}

fn next_permutation<T: Ord>(v: &mut [T]) -> bool {
    let Some(i) = v.windows(2).rposition(|w| w[0] < w[1]) else {
        return false;
    };
    let j = v.iter().rposition(|x| *x > v[i]).unwrap();
    v.swap(i, j);
    v[i + 1..].reverse();
    true
}
