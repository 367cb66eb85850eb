//! Concrete small-step semantics over the control graph.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::lang::{build_control_graph, ControlGraph, EdgeStmt, Expr, Library, Var, VarKind, VertexId, W};
use crate::logic::{eval_bool, eval_int, Env};

/// A function table: explicit entries keyed by comma-joined arguments, and
/// a default for everything else.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Table {
    #[serde(default)]
    pub default: i64,
    #[serde(default)]
    pub entries: BTreeMap<String, i64>,
}

pub type Tables = BTreeMap<String, Table>;

pub fn table_lookup(tables: &Tables, f: &str, args: &[i64]) -> i64 {
    let key = args.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(",");
    tables.get(f).map(|t| t.entries.get(&key).copied().unwrap_or(t.default)).unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Invocation {
    pub proc: String,
    #[serde(default)]
    pub args: Vec<i64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Inv,
    Res,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ThreadState {
    pub pc: VertexId,
    pub started: bool,
    pub done: bool,
    pub frame: Vec<i64>,
    /// Globals then parameters at the entry edge, for `old(v)` when the
    /// library is not two-state.
    pub entry: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct State {
    pub globals: Vec<i64>,
    pub threads: Vec<ThreadState>,
    /// Holder of each lock.
    pub locks: Vec<Option<usize>>,
    pub events: Vec<(EventKind, usize)>,
    /// Threads in the order they passed their entry edge.
    pub lp: Vec<usize>,
}

/// Result of trying one move of one thread.
#[derive(Debug, Clone)]
pub enum Outcome {
    Next(State),
    Violation(String),
    LockMisuse(String),
}

/// What a thread can do from a state.
#[derive(Debug, Clone)]
pub enum Moves {
    Done,
    Blocked(String),
    /// Choices are havoc values where the edge is `v = *`.
    Enabled(Vec<(Option<i64>, Outcome)>),
}

/// A library ready to execute under a fixed client and function tables.
pub struct Machine<'a> {
    pub lib: &'a Library,
    pub g: ControlGraph,
    pub globals: Vec<Var>,
    pub frames: Vec<Vec<Var>>,
    pub locks: Vec<String>,
    pub tables: Tables,
    pub bound: i64,
    pub invocations: Vec<(usize, Vec<i64>)>,
}

struct Ctx<'m, 's> {
    m: &'m Machine<'m>,
    st: &'s State,
    t: usize,
    proc: usize,
}

impl Env for Ctx<'_, '_> {
    fn var(&self, v: &Var) -> Option<i64> {
        let th = self.st.threads.get(self.t)?;
        match v.kind {
            VarKind::Global => self.m.globals.iter().position(|g| g == v).map(|i| self.st.globals[i]),
            VarKind::Shadow if !self.m.lib.two_state => {
                let base = v.base.as_deref()?;
                if let Some(i) = self.m.globals.iter().position(|g| g.name == base) {
                    return th.entry.get(i).copied();
                }
                let p = &self.m.lib.procs[self.proc];
                let i = p.params.iter().position(|q| q.name == base)?;
                th.entry.get(self.m.globals.len() + i).copied()
            }
            VarKind::Logical => None,
            _ => self.m.frames[self.proc].iter().position(|x| x == v).map(|i| th.frame[i]),
        }
    }
    fn app(&self, f: &str, args: &[i64]) -> Option<i64> {
        Some(table_lookup(&self.m.tables, f, args))
    }
}

impl<'a> Machine<'a> {
    pub fn new(lib: &'a Library, tables: Tables, bound: i64, invocations: &[Invocation]) -> Result<Self, String> {
        let g = build_control_graph(lib);
        let globals = lib.global_vars();
        let frames = lib.procs.iter().map(|p| p.frame()).collect();
        let mut locks: Vec<String> = g
            .edges
            .iter()
            .filter_map(|e| match &e.stmt {
                EdgeStmt::Acquire(l) | EdgeStmt::Release(l) => Some(l.clone()),
                _ => None,
            })
            .collect();
        locks.sort();
        locks.dedup();
        let mut invs = Vec::new();
        for inv in invocations {
            let pi = lib.proc_index(&inv.proc).ok_or_else(|| format!("unknown procedure `{}`", inv.proc))?;
            if lib.procs[pi].params.len() != inv.args.len() {
                return Err(format!("`{}` takes {} arguments, got {}", inv.proc, lib.procs[pi].params.len(), inv.args.len()));
            }
            invs.push((pi, inv.args.clone()));
        }
        Ok(Machine { lib, g, globals, frames, locks, tables, bound, invocations: invs })
    }

    /// Globals after evaluating initializers, with overrides applied.
    pub fn initial(&self, init: &BTreeMap<String, i64>) -> Result<State, String> {
        for k in init.keys() {
            if !self.globals.iter().any(|g| &g.name == k) {
                return Err(format!("`{k}` is not a global"));
            }
        }
        let empty = State { globals: vec![], threads: vec![], locks: vec![], events: vec![], lp: vec![] };
        let mut globals = Vec::new();
        for d in &self.lib.globals {
            let v = match init.get(&d.var.name) {
                Some(v) => *v,
                None => {
                    let ctx = Ctx { m: self, st: &empty, t: 0, proc: 0 };
                    eval_int(&d.init, &ctx).ok_or_else(|| format!("cannot evaluate initializer of `{}`", d.var.name))?
                }
            };
            globals.push(v);
        }
        let threads = self
            .invocations
            .iter()
            .map(|(pi, _)| ThreadState {
                pc: W,
                started: false,
                done: false,
                frame: vec![0; self.frames[*pi].len()],
                entry: vec![],
            })
            .collect();
        Ok(State { globals, threads, locks: vec![None; self.locks.len()], events: vec![], lp: vec![] })
    }

    pub fn proc_of(&self, t: usize) -> usize {
        self.invocations[t].0
    }

    /// Return values of a finished thread.
    pub fn returns(&self, st: &State, t: usize) -> Vec<i64> {
        let p = &self.lib.procs[self.proc_of(t)];
        let f = &self.frames[self.proc_of(t)];
        p.rets.iter().map(|r| st.threads[t].frame[f.iter().position(|x| x == r).expect("ret in frame")]).collect()
    }

    fn slot(&self, proc: usize, v: &Var) -> Option<usize> {
        self.frames[proc].iter().position(|x| x == v)
    }

    fn write(&self, st: &mut State, t: usize, v: &Var, val: i64) {
        if v.kind == VarKind::Global {
            let i = self.globals.iter().position(|g| g == v).expect("declared global");
            st.globals[i] = val;
        } else {
            let i = self.slot(self.proc_of(t), v).expect("variable in frame");
            st.threads[t].frame[i] = val;
        }
    }

    fn site(&self, e: &crate::lang::Edge) -> String {
        format!("{}: {} at {}", self.lib.procs[e.proc].name, e.stmt, self.g.vertices[e.src].name)
    }

    /// Every move thread `t` can make from `st`.
    pub fn moves(&self, st: &State, t: usize) -> Moves {
        let th = &st.threads[t];
        if th.done {
            return Moves::Done;
        }
        let proc = self.proc_of(t);
        let mut out = Vec::new();
        let mut blocked = None;
        for e in self.g.succ(th.pc).filter(|e| e.proc == proc) {
            let ctx = Ctx { m: self, st, t, proc };
            let mut next = st.clone();
            if !th.started {
                let nt = &mut next.threads[t];
                nt.started = true;
                for (i, a) in self.invocations[t].1.iter().enumerate() {
                    nt.frame[i] = *a;
                }
                next.events.push((EventKind::Inv, t));
            }
            next.threads[t].pc = e.dst;
            match &e.stmt {
                EdgeStmt::Skip => {}
                EdgeStmt::Assign(v, x) => {
                    let Some(val) = eval_int(x, &ctx) else {
                        return Moves::Enabled(vec![(None, Outcome::Violation(format!("cannot evaluate {x}")))]);
                    };
                    self.write(&mut next, t, v, val);
                }
                EdgeStmt::Havoc(v) => {
                    for val in -self.bound..=self.bound {
                        let mut n2 = next.clone();
                        self.write(&mut n2, t, v, val);
                        out.push((Some(val), Outcome::Next(n2)));
                    }
                    continue;
                }
                EdgeStmt::Assume(c) => {
                    if eval_bool(c, &ctx) != Some(true) {
                        continue;
                    }
                }
                EdgeStmt::Assert(c) | EdgeStmt::Assert2(c) => {
                    if eval_bool(c, &ctx) != Some(true) {
                        out.push((None, Outcome::Violation(self.site(e))));
                        continue;
                    }
                }
                EdgeStmt::Return(es) => {
                    let rets = crate::lang::ret_vars(es.len());
                    for (r, x) in rets.iter().zip(es) {
                        let val = eval_int(x, &ctx).unwrap_or(0);
                        self.write(&mut next, t, r, val);
                    }
                }
                EdgeStmt::Acquire(l) => {
                    let i = self.locks.binary_search(l).expect("known lock");
                    match st.locks[i] {
                        Some(h) if h == t => {
                            out.push((None, Outcome::LockMisuse(format!("thread {t} re-acquires {l}"))));
                            continue;
                        }
                        Some(h) => {
                            blocked = Some(format!("{l} held by thread {h}"));
                            continue;
                        }
                        None => next.locks[i] = Some(t),
                    }
                }
                EdgeStmt::Release(l) => {
                    let i = self.locks.binary_search(l).expect("known lock");
                    if st.locks[i] != Some(t) {
                        out.push((None, Outcome::LockMisuse(format!("thread {t} releases {l} without holding it"))));
                        continue;
                    }
                    next.locks[i] = None;
                }
                EdgeStmt::LPCopy(pairs) => {
                    for (sh, base) in pairs {
                        let ctx = Ctx { m: self, st: &next, t, proc };
                        let val = ctx.var(base).unwrap_or(0);
                        self.write(&mut next, t, sh, val);
                    }
                }
            }
            if e.is_call() {
                let ctx = Ctx { m: self, st: &next, t, proc };
                let mut entry = next.globals.clone();
                entry.extend(self.lib.procs[proc].params.iter().map(|p| ctx.var(p).unwrap_or(0)));
                next.threads[t].entry = entry;
                next.lp.push(t);
            }
            if e.is_exit() {
                next.threads[t].done = true;
                next.events.push((EventKind::Res, t));
            }
            out.push((None, Outcome::Next(next)));
        }
        if out.is_empty() {
            if let Some(b) = blocked {
                return Moves::Blocked(b);
            }
        }
        Moves::Enabled(out)
    }

    pub fn vars_of(&self, t: usize) -> &[Var] {
        &self.frames[self.proc_of(t)]
    }
}

/// Evaluates an `@ensures` formula over a pre-state, post-state, arguments
/// and return values.
pub struct SpecEnv<'a> {
    pub globals: &'a [Var],
    pub pre: &'a [i64],
    pub post: &'a [i64],
    pub params: &'a [Var],
    pub args: &'a [i64],
    pub rets: &'a [Var],
    pub ret_vals: &'a [i64],
    pub tables: &'a Tables,
}

impl Env for SpecEnv<'_> {
    fn var(&self, v: &Var) -> Option<i64> {
        let gi = |name: &str| self.globals.iter().position(|g| g.name == name);
        let pi = |name: &str| self.params.iter().position(|p| p.name == name);
        match v.kind {
            VarKind::Global => gi(&v.name).map(|i| self.post[i]),
            VarKind::Param => pi(&v.name).map(|i| self.args[i]),
            VarKind::Shadow => {
                let base = v.base.as_deref()?;
                gi(base).map(|i| self.pre[i]).or_else(|| pi(base).map(|i| self.args[i]))
            }
            VarKind::Local => self.rets.iter().position(|r| r == v).map(|i| self.ret_vals[i]),
            VarKind::Logical => None,
        }
    }
    fn app(&self, f: &str, args: &[i64]) -> Option<i64> {
        Some(table_lookup(self.tables, f, args))
    }
}

pub fn spec_holds(f: &Expr, env: &SpecEnv<'_>) -> bool {
    eval_bool(f, env) == Some(true)
}
