use std::collections::{BTreeMap, HashMap};

use super::{EventKind, History, HistoryEvent};
use crate::value::{LocId, TxId};

/// Replaces every `merge k into j` with `new x; j writes x; k reads x` and
/// marks `k` commit-pending. Events are renumbered in order.
pub fn expand_merges(h: &History) -> History {
    let mut next_loc = h
        .events
        .iter()
        .filter_map(|e| e.kind.loc())
        .map(|l| l.0 + 1)
        .max()
        .unwrap_or(0);
    let mut out = Vec::with_capacity(h.events.len());
    let mut pending = h.commit_pending.clone();
    let mut push = |tx, thread, kind| {
        let seq = out.len() as u64;
        out.push(HistoryEvent {
            seq,
            tx,
            thread,
            kind,
        });
    };
    for e in &h.events {
        match e.kind {
            EventKind::Merge { into } => {
                let x = LocId(next_loc);
                next_loc += 1;
                let token = format!("merge:{}", e.tx);
                push(into, None, EventKind::NewLoc { loc: x });
                push(
                    into,
                    None,
                    EventKind::Write {
                        loc: x,
                        value: token.clone(),
                    },
                );
                push(
                    e.tx,
                    e.thread,
                    EventKind::Read {
                        loc: x,
                        value: token,
                    },
                );
                pending.insert(e.tx);
            }
            _ => push(e.tx, e.thread, e.kind.clone()),
        }
    }
    History {
        events: out,
        commit_pending: pending,
    }
}

/// Indices of reads and writes that are local to their transaction.
fn local_accesses(events: &[&HistoryEvent]) -> Vec<bool> {
    let mut local = vec![false; events.len()];
    let mut last: HashMap<(TxId, LocId), usize> = HashMap::new();
    for (i, e) in events.iter().enumerate() {
        if !e.kind.is_access() {
            continue;
        }
        let key = (e.tx, e.kind.loc().unwrap());
        if let Some(&p) = last.get(&key) {
            if e.kind.is_read() && events[p].kind.is_write() {
                local[i] = true;
            }
            if events[p].kind.is_write() && e.kind.is_write() {
                local[p] = true;
            }
        }
        last.insert(key, i);
    }
    local
}

/// The longest sub-history with no local reads or writes. Removing local
/// operations can expose new ones, so this iterates to a fixpoint.
pub fn nonlocal(h: &History) -> History {
    let mut keep: Vec<&HistoryEvent> = h.events.iter().collect();
    loop {
        let local = local_accesses(&keep);
        if !local.contains(&true) {
            break;
        }
        keep = keep
            .into_iter()
            .zip(local)
            .filter(|(_, l)| !l)
            .map(|(e, _)| e)
            .collect();
    }
    History {
        events: keep.into_iter().cloned().collect(),
        commit_pending: h.commit_pending.clone(),
    }
}

/// For each read in `h`, the transaction it reads from: the latest earlier
/// write of the same value by another transaction, else the earliest later
/// one, else the reader itself if it wrote that value.
pub fn reads_from(h: &History) -> BTreeMap<u64, TxId> {
    let mut writes: HashMap<(LocId, &str), Vec<(u64, TxId)>> = HashMap::new();
    for e in &h.events {
        if let EventKind::Write { loc, value } = &e.kind {
            writes
                .entry((*loc, value.as_str()))
                .or_default()
                .push((e.seq, e.tx));
        }
    }
    let mut out = BTreeMap::new();
    for e in &h.events {
        let EventKind::Read { loc, value } = &e.kind else {
            continue;
        };
        let Some(ws) = writes.get(&(*loc, value.as_str())) else {
            continue;
        };
        let before = ws.iter().rev().find(|(s, t)| *s < e.seq && *t != e.tx);
        let after = || ws.iter().find(|(s, t)| *s > e.seq && *t != e.tx);
        let own = || ws.iter().find(|(_, t)| *t == e.tx);
        if let Some((_, t)) = before.or_else(after).or_else(own) {
            out.insert(e.seq, *t);
        }
    }
    out
}

/// Local consistency plus: every nonlocal read value has a nonlocal writer.
pub fn is_consistent(h: &History) -> bool {
    let refs: Vec<&HistoryEvent> = h.events.iter().collect();
    let local = local_accesses(&refs);
    let mut last_write: HashMap<(TxId, LocId), &str> = HashMap::new();
    for (e, is_local) in refs.iter().zip(&local) {
        match &e.kind {
            EventKind::Write { loc, value } => {
                last_write.insert((e.tx, *loc), value);
            }
            EventKind::Read { loc, value }
                if *is_local && last_write.get(&(e.tx, *loc)) != Some(&value.as_str()) =>
            {
                return false;
            }
            _ => {}
        }
    }
    let nl = nonlocal(h);
    let written: std::collections::HashSet<(LocId, &str)> = nl
        .events
        .iter()
        .filter_map(|e| match &e.kind {
            EventKind::Write { loc, value } => Some((*loc, value.as_str())),
            _ => None,
        })
        .collect();
    nl.events.iter().all(|e| match &e.kind {
        EventKind::Read { loc, value } => written.contains(&(*loc, value.as_str())),
        _ => true,
    })
}

/// `k` happens before `k'` when `k` commits or aborts before `k'` issues its first event.
#[derive(Clone, Debug, Default)]
pub struct HappensBefore {
    finish: BTreeMap<TxId, u64>,
    first: BTreeMap<TxId, u64>,
}

impl HappensBefore {
    pub fn holds(&self, k: TxId, k2: TxId) -> bool {
        match (self.finish.get(&k), self.first.get(&k2)) {
            (Some(f), Some(s)) => f < s,
            _ => false,
        }
    }

    pub fn finish(&self, k: TxId) -> Option<u64> {
        self.finish.get(&k).copied()
    }

    pub fn first(&self, k: TxId) -> Option<u64> {
        self.first.get(&k).copied()
    }
}

pub fn happens_before(h: &History) -> HappensBefore {
    let mut hb = HappensBefore::default();
    for e in &h.events {
        hb.first.entry(e.tx).or_insert(e.seq);
        if matches!(e.kind, EventKind::Commit | EventKind::Abort) {
            hb.finish.insert(e.tx, e.seq);
        }
    }
    hb
}
