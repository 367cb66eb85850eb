//! Histories and the linearizability check against `@ensures` specifications.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::Serialize;

use super::machine::{spec_holds, EventKind, SpecEnv, Tables};
use crate::lang::{Formula, Library};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct HistEvent {
    pub kind: EventKind,
    pub thread: usize,
    pub proc: String,
    /// Arguments for an invocation, return values for a response.
    pub values: Vec<i64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct History {
    pub events: Vec<HistEvent>,
}

impl std::fmt::Display for History {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self
            .events
            .iter()
            .map(|e| {
                let vals = e.values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
                match e.kind {
                    EventKind::Inv => format!("t{}:{}({vals})", e.thread, e.proc),
                    EventKind::Res => format!("t{}:ret({vals})", e.thread),
                }
            })
            .collect();
        f.write_str(&parts.join(" "))
    }
}

struct Op {
    proc: usize,
    args: Vec<i64>,
    rets: Option<Vec<i64>>,
    inv_at: usize,
    res_at: Option<usize>,
}

fn operations(lib: &Library, h: &History) -> Vec<Op> {
    let mut ops: Vec<Op> = Vec::new();
    let mut by_thread: BTreeMap<usize, usize> = BTreeMap::new();
    for (i, e) in h.events.iter().enumerate() {
        match e.kind {
            EventKind::Inv => {
                by_thread.insert(e.thread, ops.len());
                ops.push(Op {
                    proc: lib.proc_index(&e.proc).expect("history names library procedures"),
                    args: e.values.clone(),
                    rets: None,
                    inv_at: i,
                    res_at: None,
                });
            }
            EventKind::Res => {
                if let Some(&k) = by_thread.get(&e.thread) {
                    ops[k].rets = Some(e.values.clone());
                    ops[k].res_at = Some(i);
                }
            }
        }
    }
    ops
}

/// Whether some sequential order of the operations, consistent with their
/// real-time order, has a chain of global states from `init` (ending in
/// `last` when given) along which each operation meets its `@ensures`.
/// Pending operations may be dropped or completed with any return values.
/// Global values range over `[-bound, bound]` plus every value observed in
/// the history.
pub fn check_linearizable(
    lib: &Library,
    h: &History,
    tables: &Tables,
    bound: i64,
    init: &[i64],
    last: Option<&[i64]>,
) -> bool {
    let ops = operations(lib, h);
    let mut vals: BTreeSet<i64> = (-bound..=bound).collect();
    vals.extend(init.iter().copied());
    vals.extend(last.into_iter().flatten().copied());
    for o in &ops {
        vals.extend(o.args.iter().copied());
        vals.extend(o.rets.iter().flatten().copied());
    }
    for t in tables.values() {
        vals.extend(t.entries.values().copied());
        vals.insert(t.default);
    }
    let vals: Vec<i64> = vals.into_iter().collect();
    let specs: Vec<Option<&Formula>> = lib.procs.iter().map(|p| lib.annotations.ensures.get(&p.name)).collect();
    let search = Search { lib, ops: &ops, specs, tables, vals, last, failed: HashSet::new() };
    search.run(init)
}

struct Search<'a> {
    lib: &'a Library,
    ops: &'a [Op],
    specs: Vec<Option<&'a Formula>>,
    tables: &'a Tables,
    vals: Vec<i64>,
    last: Option<&'a [i64]>,
    failed: HashSet<(Vec<bool>, Vec<i64>)>,
}

impl Search<'_> {
    fn run(mut self, init: &[i64]) -> bool {
        let placed = vec![false; self.ops.len()];
        self.go(&placed, init)
    }

    fn ready(&self, placed: &[bool], i: usize) -> bool {
        // Every operation that responded before `i` was invoked goes first.
        !placed[i]
            && self.ops.iter().enumerate().all(|(j, o)| placed[j] || j == i || o.res_at.is_none_or(|r| r > self.ops[i].inv_at))
    }

    fn finished(&self, placed: &[bool]) -> bool {
        self.ops.iter().zip(placed).all(|(o, p)| *p || o.res_at.is_none())
    }

    fn go(&mut self, placed: &[bool], state: &[i64]) -> bool {
        if self.finished(placed) && self.last.is_none_or(|l| l == state) {
            return true;
        }
        let key = (placed.to_vec(), state.to_vec());
        if self.failed.contains(&key) {
            return false;
        }
        for i in 0..self.ops.len() {
            if !self.ready(placed, i) {
                continue;
            }
            let mut next = placed.to_vec();
            next[i] = true;
            let rets: Vec<Vec<i64>> = match &self.ops[i].rets {
                Some(r) => vec![r.clone()],
                None => product(&self.vals, self.lib.procs[self.ops[i].proc].rets.len()),
            };
            for post in product(&self.vals, state.len()) {
                for r in &rets {
                    if self.step_ok(i, state, &post, r) && self.go(&next, &post) {
                        return true;
                    }
                }
            }
        }
        self.failed.insert(key);
        false
    }

    fn step_ok(&self, i: usize, pre: &[i64], post: &[i64], rets: &[i64]) -> bool {
        let op = &self.ops[i];
        let Some(spec) = self.specs[op.proc] else {
            return true;
        };
        let p = &self.lib.procs[op.proc];
        let globals = self.lib.global_vars();
        let env = SpecEnv {
            globals: &globals,
            pre,
            post,
            params: &p.params,
            args: &op.args,
            rets: &p.rets,
            ret_vals: rets,
            tables: self.tables,
        };
        spec_holds(spec, &env)
    }
}

fn product(vals: &[i64], n: usize) -> Vec<Vec<i64>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|p| {
                vals.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push(*v);
                    q
                })
            })
            .collect();
    }
    out
}
