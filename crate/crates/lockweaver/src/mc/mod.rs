//! Bounded model checking of client programs over a library.
//!
//! Every interleaving of a fixed set of invocations is enumerated depth
//! first, with revisits pruned by hashing the full state (which includes
//! the event history). Assertion failures, deadlocks, lock misuse and
//! non-linearizable histories are reported with a replayable schedule.

mod history;
mod machine;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use history::{check_linearizable, HistEvent, History};
pub use machine::{table_lookup, EventKind, Invocation, Machine, Moves, Outcome, State, Table, Tables, ThreadState};

use crate::lang::{EdgeStmt, Library, StmtKind, StmtNode, VarKind, VertexKind, W};
use crate::lin::transform_two_state;

pub const DEFAULT_DEPTH: usize = 60;

/// A concurrent client: one invocation per thread.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientSpec {
    pub threads: Vec<Invocation>,
    /// Run to completion one after another before the threads start; the
    /// resulting globals are the initial state of the concurrent run.
    #[serde(default)]
    pub prefix: Vec<Invocation>,
    #[serde(default)]
    pub init: BTreeMap<String, i64>,
    #[serde(default = "default_depth")]
    pub depth: usize,
    /// Overrides the domain bound of the run.
    #[serde(default)]
    pub bound: Option<i64>,
    #[serde(default)]
    pub tables: Tables,
    /// Alternative table assignments for `--sweep-tables`.
    #[serde(default)]
    pub sweep: Vec<Tables>,
}

fn default_depth() -> usize {
    DEFAULT_DEPTH
}

impl ClientSpec {
    pub fn new(threads: Vec<Invocation>) -> Self {
        ClientSpec { threads, depth: DEFAULT_DEPTH, ..Default::default() }
    }

    pub fn from_json(src: &str) -> Result<Self, McError> {
        serde_json::from_str(src).map_err(|e| McError::Client(e.to_string()))
    }
}

impl Invocation {
    pub fn new(proc: &str, args: &[i64]) -> Self {
        Invocation { proc: proc.to_string(), args: args.to_vec() }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ExploreOptions {
    pub bound: i64,
    pub check_lin: bool,
    /// Also compare each complete execution with the sequential run of its
    /// threads in the order they passed their entry edges.
    pub check_lp_order: bool,
}

impl Default for ExploreOptions {
    fn default() -> Self {
        ExploreOptions { bound: 4, check_lin: false, check_lp_order: false }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum McError {
    #[error("invalid client: {0}")]
    Client(String),
    #[error("prefix failed: {0}")]
    Prefix(SeqError),
    #[error("schedule step {index} ({step}) is not enabled")]
    Replay { index: usize, step: Step },
}

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SeqError {
    #[error("assertion violated: {site}")]
    AssertViolation { site: String },
    #[error("blocked: {detail}")]
    Blocked { detail: String },
    #[error("lock misuse: {detail}")]
    LockMisuse { detail: String },
    #[error("nondeterministic choice at {site}")]
    Nondeterministic { site: String },
    #[error("depth bound exceeded")]
    DepthExceeded,
    #[error("invalid client: {detail}")]
    Client { detail: String },
}

/// One scheduling decision: which thread moves, and the value picked when
/// its edge is `v = *`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Step {
    pub thread: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<i64>,
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.value {
            Some(v) => write!(f, "t{}={v}", self.thread),
            None => write!(f, "t{}", self.thread),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Status {
    Ok,
    AssertViolation { site: String },
    Deadlock { detail: String },
    LockMisuse { detail: String },
    NonLinearizable { history: String, detail: String },
    DepthExceeded,
}

impl Status {
    pub fn is_ok(&self) -> bool {
        matches!(self, Status::Ok)
    }

    fn category(&self) -> Category {
        match self {
            Status::Ok => unreachable!("ok has no category"),
            Status::AssertViolation { .. } => Category::AssertViolation,
            Status::LockMisuse { .. } => Category::LockMisuse,
            Status::Deadlock { .. } => Category::Deadlock,
            Status::NonLinearizable { .. } => Category::NonLinearizable,
            Status::DepthExceeded => Category::DepthExceeded,
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Status::Ok => write!(f, "OK"),
            Status::AssertViolation { site } => write!(f, "assertion violation at {site}"),
            Status::Deadlock { detail } => write!(f, "deadlock: {detail}"),
            Status::LockMisuse { detail } => write!(f, "lock misuse: {detail}"),
            Status::NonLinearizable { history, detail } => write!(f, "non-linearizable ({detail}): {history}"),
            Status::DepthExceeded => write!(f, "depth bound exceeded"),
        }
    }
}

/// Violation kinds, in reporting priority.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    AssertViolation,
    LockMisuse,
    Deadlock,
    NonLinearizable,
    DepthExceeded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Witness {
    pub status: Status,
    pub schedule: Vec<Step>,
    pub history: History,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Verdict {
    pub status: Status,
    pub witness: Option<Witness>,
    /// False when some path was cut off by the depth bound.
    pub exhaustive: bool,
    pub states: usize,
    pub executions: usize,
    /// Final globals of complete executions.
    pub finals: Vec<BTreeMap<String, i64>>,
    /// Complete histories.
    pub histories: Vec<History>,
    /// Least witness of each violation kind found.
    pub violations: BTreeMap<Category, Witness>,
}

impl Verdict {
    pub fn final_values(&self, global: &str) -> BTreeSet<i64> {
        self.finals.iter().filter_map(|f| f.get(global).copied()).collect()
    }

    pub fn count(&self, c: Category) -> usize {
        usize::from(self.violations.contains_key(&c))
    }
}

/// Removes every `acquire` and `release` statement.
pub fn erase_locks(lib: &Library) -> Library {
    fn strip(b: &[StmtNode]) -> Vec<StmtNode> {
        b.iter()
            .filter(|s| !s.is_lock())
            .map(|s| {
                let mut s = s.clone();
                if let StmtKind::If(c, t, e) = &s.kind {
                    s.kind = StmtKind::If(c.clone(), strip(t), e.as_ref().map(|e| strip(e)));
                }
                s
            })
            .collect()
    }
    let mut out = lib.clone();
    for p in &mut out.procs {
        p.body = strip(&p.body);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SeqRun {
    pub globals: BTreeMap<String, i64>,
    pub returns: Vec<Vec<i64>>,
}

fn globals_map(m: &Machine<'_>, g: &[i64]) -> BTreeMap<String, i64> {
    m.globals.iter().zip(g).map(|(v, x)| (v.name.clone(), *x)).collect()
}

/// Runs the given threads of `st` to completion, one after another.
fn run_threads(m: &Machine<'_>, mut st: State, order: &[usize], depth: usize) -> Result<(State, Vec<Vec<i64>>), SeqError> {
    let mut steps = 0;
    let mut rets = Vec::new();
    for &t in order {
        loop {
            if steps >= depth {
                return Err(SeqError::DepthExceeded);
            }
            match m.moves(&st, t) {
                Moves::Done => break,
                Moves::Blocked(detail) => return Err(SeqError::Blocked { detail }),
                Moves::Enabled(mut opts) => {
                    if opts.len() != 1 {
                        let site = m.g.vertices[st.threads[t].pc].name.clone();
                        return Err(SeqError::Nondeterministic { site });
                    }
                    match opts.pop().expect("one move").1 {
                        Outcome::Next(n) => st = n,
                        Outcome::Violation(site) => return Err(SeqError::AssertViolation { site }),
                        Outcome::LockMisuse(detail) => return Err(SeqError::LockMisuse { detail }),
                    }
                }
            }
            steps += 1;
        }
        rets.push(m.returns(&st, t));
    }
    Ok((st, rets))
}

/// Executes the invocations back to back from the initial globals (with
/// `init` overrides).
pub fn run_sequential(
    lib: &Library,
    invocations: &[Invocation],
    tables: &Tables,
    init: &BTreeMap<String, i64>,
    bound: i64,
    depth: usize,
) -> Result<SeqRun, SeqError> {
    let m = Machine::new(lib, tables.clone(), bound, invocations).map_err(|detail| SeqError::Client { detail })?;
    let st = m.initial(init).map_err(|detail| SeqError::Client { detail })?;
    let order: Vec<usize> = (0..invocations.len()).collect();
    let (st, returns) = run_threads(&m, st, &order, depth)?;
    Ok(SeqRun { globals: globals_map(&m, &st.globals), returns })
}

/// Initial globals of the concurrent run: `init` overrides, then the prefix.
fn starting_globals(lib: &Library, client: &ClientSpec, bound: i64) -> Result<BTreeMap<String, i64>, McError> {
    if client.prefix.is_empty() {
        return Ok(client.init.clone());
    }
    run_sequential(lib, &client.prefix, &client.tables, &client.init, bound, client.depth)
        .map(|r| r.globals)
        .map_err(McError::Prefix)
}

fn history_of(m: &Machine<'_>, st: &State) -> History {
    let events = st
        .events
        .iter()
        .map(|&(kind, t)| HistEvent {
            kind,
            thread: t,
            proc: m.lib.procs[m.proc_of(t)].name.clone(),
            values: match kind {
                EventKind::Inv => m.invocations[t].1.clone(),
                EventKind::Res => m.returns(st, t),
            },
        })
        .collect();
    History { events }
}

/// Shared by exploration and replay: judgement of a complete execution.
struct Judge<'m> {
    m: &'m Machine<'m>,
    init: State,
    opts: ExploreOptions,
    depth: usize,
}

impl Judge<'_> {
    fn complete(&self, st: &State, cache: &mut HashMap<(Vec<(EventKind, usize)>, Vec<i64>, Vec<Vec<i64>>), Option<Status>>) -> Option<Status> {
        let rets: Vec<Vec<i64>> = (0..st.threads.len()).map(|t| self.m.returns(st, t)).collect();
        let key = (st.events.clone(), st.globals.clone(), rets.clone());
        if let Some(s) = cache.get(&key) {
            return s.clone();
        }
        let s = self.judge(st, &rets);
        cache.insert(key, s.clone());
        s
    }

    fn judge(&self, st: &State, rets: &[Vec<i64>]) -> Option<Status> {
        let h = history_of(self.m, st);
        if self.opts.check_lin
            && !check_linearizable(self.m.lib, &h, &self.m.tables, self.opts.bound, &self.init.globals, Some(&st.globals))
        {
            return Some(Status::NonLinearizable { history: h.to_string(), detail: "no legal sequential history".into() });
        }
        if self.opts.check_lp_order {
            let detail = match run_threads(self.m, self.init.clone(), &st.lp, self.depth) {
                Err(e) => Some(format!("sequential run in entry order failed: {e}")),
                Ok((seq, seq_rets)) => {
                    let mut by_thread = vec![Vec::new(); st.threads.len()];
                    for (i, &t) in st.lp.iter().enumerate() {
                        by_thread[t] = seq_rets[i].clone();
                    }
                    if seq.globals != st.globals {
                        Some("final state differs from the sequential run in entry order".into())
                    } else if by_thread != rets {
                        Some("return values differ from the sequential run in entry order".into())
                    } else {
                        None
                    }
                }
            };
            if let Some(detail) = detail {
                return Some(Status::NonLinearizable { history: h.to_string(), detail });
            }
        }
        None
    }
}

type LinCache = HashMap<(Vec<(EventKind, usize)>, Vec<i64>, Vec<Vec<i64>>), Option<Status>>;

struct Search<'j> {
    judge: &'j Judge<'j>,
    visited: HashSet<State>,
    executions: usize,
    exhaustive: bool,
    finals: BTreeSet<Vec<i64>>,
    histories: BTreeSet<History>,
    found: BTreeMap<Category, Witness>,
    cache: LinCache,
}

impl Search<'_> {
    fn new<'j>(judge: &'j Judge<'j>) -> Search<'j> {
        Search {
            judge,
            visited: HashSet::new(),
            executions: 0,
            exhaustive: true,
            finals: BTreeSet::new(),
            histories: BTreeSet::new(),
            found: BTreeMap::new(),
            cache: HashMap::new(),
        }
    }

    fn record(&mut self, status: Status, schedule: &[Step], st: &State) {
        let c = status.category();
        if self.found.get(&c).is_some_and(|w| w.schedule.as_slice() <= schedule) {
            return;
        }
        let history = history_of(self.judge.m, st);
        self.found.insert(c, Witness { status, schedule: schedule.to_vec(), history });
    }

    fn dfs(&mut self, st: State, schedule: &mut Vec<Step>) {
        if !self.visited.insert(st.clone()) {
            return;
        }
        let m = self.judge.m;
        let mut any = false;
        let mut blocked = Vec::new();
        let mut children = Vec::new();
        for t in 0..st.threads.len() {
            match m.moves(&st, t) {
                Moves::Done => {}
                Moves::Blocked(b) => blocked.push(format!("thread {t}: {b}")),
                Moves::Enabled(opts) => {
                    for (value, o) in opts {
                        any = true;
                        children.push((Step { thread: t, value }, o));
                    }
                }
            }
        }
        if !any {
            if blocked.is_empty() {
                self.executions += 1;
                self.finals.insert(st.globals.clone());
                self.histories.insert(history_of(m, &st));
                if let Some(s) = self.judge.complete(&st, &mut self.cache) {
                    self.record(s, schedule, &st);
                }
            } else {
                self.record(Status::Deadlock { detail: blocked.join("; ") }, schedule, &st);
            }
            return;
        }
        if schedule.len() >= self.judge.depth {
            self.exhaustive = false;
            self.record(Status::DepthExceeded, schedule, &st);
            return;
        }
        for (step, o) in children {
            schedule.push(step);
            match o {
                Outcome::Next(n) => self.dfs(n, schedule),
                Outcome::Violation(site) => self.record(Status::AssertViolation { site }, schedule, &st),
                Outcome::LockMisuse(detail) => self.record(Status::LockMisuse { detail }, schedule, &st),
            }
            schedule.pop();
        }
    }
}

fn worker_pool() -> rayon::ThreadPool {
    let n = std::env::var("LOCKWEAVER_WORKERS").ok().and_then(|s| s.parse::<usize>().ok()).filter(|n| *n > 0);
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = n {
        b = b.num_threads(n);
    }
    b.build().expect("thread pool")
}

fn setup<'a>(lib: &'a Library, client: &ClientSpec, opts: &mut ExploreOptions) -> Result<(Machine<'a>, State), McError> {
    if let Some(b) = client.bound {
        opts.bound = b;
    }
    if opts.bound < 1 {
        return Err(McError::Client("domain bound must be at least 1".into()));
    }
    let init = starting_globals(lib, client, opts.bound)?;
    let m = Machine::new(lib, client.tables.clone(), opts.bound, &client.threads).map_err(McError::Client)?;
    let st = m.initial(&init).map_err(McError::Client)?;
    Ok((m, st))
}

/// Explores every schedule of the client's threads up to its depth bound.
///
/// The subtrees under each first move are searched independently (in
/// parallel when `LOCKWEAVER_WORKERS` allows) with their own visited sets,
/// so counts and witnesses do not depend on the number of workers. Each
/// reported witness is the lexicographically least schedule of its kind.
pub fn explore(lib: &Library, client: &ClientSpec, opts: ExploreOptions) -> Result<Verdict, McError> {
    let mut opts = opts;
    let (m, init) = setup(lib, client, &mut opts)?;
    let judge = Judge { m: &m, init: init.clone(), opts, depth: client.depth };

    // Expand the root by hand so each first move gets its own search.
    let mut firsts = Vec::new();
    for t in 0..init.threads.len() {
        if let Moves::Enabled(os) = m.moves(&init, t) {
            for (value, o) in os {
                firsts.push((Step { thread: t, value }, o));
            }
        }
    }
    let mut states = 1;
    let subs: Vec<Search<'_>> = if firsts.is_empty() {
        let mut s = Search::new(&judge);
        s.dfs(init.clone(), &mut Vec::new());
        states = 0;
        vec![s]
    } else {
        let pool = worker_pool();
        pool.install(|| {
            firsts
                .into_par_iter()
                .map(|(step, o)| {
                    let mut s = Search::new(&judge);
                    let mut sched = vec![step];
                    match o {
                        Outcome::Next(n) => {
                            if client.depth == 0 {
                                s.exhaustive = false;
                                s.record(Status::DepthExceeded, &[], &init);
                            } else {
                                s.dfs(n, &mut sched);
                            }
                        }
                        Outcome::Violation(site) => s.record(Status::AssertViolation { site }, &sched, &init),
                        Outcome::LockMisuse(detail) => s.record(Status::LockMisuse { detail }, &sched, &init),
                    }
                    s
                })
                .collect()
        })
    };

    let mut exhaustive = true;
    let mut executions = 0;
    let mut finals = BTreeSet::new();
    let mut histories = BTreeSet::new();
    let mut found: BTreeMap<Category, Witness> = BTreeMap::new();
    for s in subs {
        states += s.visited.len();
        executions += s.executions;
        exhaustive &= s.exhaustive;
        finals.extend(s.finals);
        histories.extend(s.histories);
        for (c, w) in s.found {
            if found.get(&c).is_none_or(|x| w.schedule < x.schedule) {
                found.insert(c, w);
            }
        }
    }
    let witness = found.values().next().cloned();
    Ok(Verdict {
        status: witness.as_ref().map(|w| w.status.clone()).unwrap_or(Status::Ok),
        witness,
        exhaustive,
        states,
        executions,
        finals: finals.iter().map(|g| globals_map(&m, g)).collect(),
        histories: histories.into_iter().collect(),
        violations: found,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Replay {
    pub status: Status,
    pub history: History,
    pub globals: BTreeMap<String, i64>,
    /// One line per step: thread, statement, source and target vertex.
    pub trace: Vec<String>,
    /// Steps a lock-free copy of the library would not take.
    pub lock_steps: Vec<usize>,
}

/// Re-executes a schedule and reports where it ends up.
pub fn replay(lib: &Library, client: &ClientSpec, schedule: &[Step], opts: ExploreOptions) -> Result<Replay, McError> {
    let mut opts = opts;
    let (m, init) = setup(lib, client, &mut opts)?;
    let judge = Judge { m: &m, init: init.clone(), opts, depth: client.depth };
    let mut st = init;
    let mut trace = Vec::new();
    let mut lock_steps = Vec::new();
    for (i, step) in schedule.iter().enumerate() {
        let t = step.thread;
        let bad = || McError::Replay { index: i, step: *step };
        if t >= st.threads.len() {
            return Err(bad());
        }
        let Moves::Enabled(opts) = m.moves(&st, t) else {
            return Err(bad());
        };
        let pc = st.threads[t].pc;
        let (_, o) = opts.into_iter().find(|(v, _)| *v == step.value).ok_or_else(bad)?;
        let next_pc = match &o {
            Outcome::Next(n) => n.threads[t].pc,
            _ => pc,
        };
        let edge = m.g.succ(pc).find(|e| e.proc == m.proc_of(t) && e.dst == next_pc);
        let text = edge.map(|e| e.stmt.to_string()).unwrap_or_else(|| "?".into());
        // An acquire on the invocation edge is followed by a skip into the
        // real entry; without locks only the invocation remains, so the skip
        // is the step to drop.
        let lock = edge.is_some_and(|e| matches!(e.stmt, EdgeStmt::Acquire(_) | EdgeStmt::Release(_)));
        if (lock && pc != W) || m.g.vertices[pc].kind == VertexKind::PreEntry {
            lock_steps.push(i);
        }
        trace.push(format!("t{t}: {text}  [{} -> {}]", m.g.vertices[pc].name, m.g.vertices[next_pc].name));
        match o {
            Outcome::Next(n) => st = n,
            Outcome::Violation(site) => {
                if i + 1 != schedule.len() {
                    return Err(McError::Replay { index: i + 1, step: schedule[i + 1] });
                }
                let status = Status::AssertViolation { site };
                return Ok(Replay { status, history: history_of(&m, &st), globals: globals_map(&m, &st.globals), trace, lock_steps });
            }
            Outcome::LockMisuse(detail) => {
                if i + 1 != schedule.len() {
                    return Err(McError::Replay { index: i + 1, step: schedule[i + 1] });
                }
                let status = Status::LockMisuse { detail };
                return Ok(Replay { status, history: history_of(&m, &st), globals: globals_map(&m, &st.globals), trace, lock_steps });
            }
        }
    }
    let mut blocked = Vec::new();
    let mut live = false;
    for t in 0..st.threads.len() {
        match m.moves(&st, t) {
            Moves::Done => {}
            Moves::Blocked(b) => blocked.push(format!("thread {t}: {b}")),
            Moves::Enabled(_) => live = true,
        }
    }
    let status = if live {
        if schedule.len() >= client.depth {
            Status::DepthExceeded
        } else {
            Status::Ok
        }
    } else if !blocked.is_empty() {
        Status::Deadlock { detail: blocked.join("; ") }
    } else {
        judge.complete(&st, &mut HashMap::new()).unwrap_or(Status::Ok)
    };
    Ok(Replay { status, history: history_of(&m, &st), globals: globals_map(&m, &st.globals), trace, lock_steps })
}

/// The schedule with every lock step removed, for replay on the library
/// without locks.
pub fn erase_lock_steps(lib: &Library, client: &ClientSpec, schedule: &[Step], opts: ExploreOptions) -> Result<Vec<Step>, McError> {
    let r = replay(lib, client, schedule, opts)?;
    let skip: BTreeSet<usize> = r.lock_steps.into_iter().collect();
    Ok(schedule.iter().enumerate().filter(|(i, _)| !skip.contains(i)).map(|(_, s)| *s).collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ProjectionReport {
    /// Pairs of corresponding states compared.
    pub states: usize,
    pub mismatch: Option<String>,
}

/// Runs the library and its two-state transformation in lockstep over every
/// schedule of the client and checks that each transformed state, with the
/// shadow variables dropped, equals the corresponding original state.
pub fn check_projection(lib: &Library, client: &ClientSpec, opts: ExploreOptions) -> Result<ProjectionReport, McError> {
    let lib2 = transform_two_state(lib);
    let mut opts = opts;
    let (m1, s1) = setup(lib, client, &mut opts)?;
    let (m2, s2) = setup(&lib2, client, &mut opts)?;
    let mut visited: HashSet<State> = HashSet::new();
    let mut stack = vec![(s1, s2, 0usize)];
    let mut states = 0;
    while let Some((a, b, d)) = stack.pop() {
        if !visited.insert(b.clone()) {
            continue;
        }
        states += 1;
        if let Some(why) = project_mismatch(&m1, &a, &m2, &b) {
            return Ok(ProjectionReport { states, mismatch: Some(why) });
        }
        if d >= client.depth {
            continue;
        }
        for t in 0..a.threads.len() {
            let (ma, mb) = (m1.moves(&a, t), m2.moves(&b, t));
            match (ma, mb) {
                (Moves::Done, Moves::Done) => {}
                (Moves::Blocked(_), Moves::Blocked(_)) => {}
                (Moves::Enabled(xa), Moves::Enabled(xb)) => {
                    if xa.len() != xb.len() {
                        return Ok(ProjectionReport { states, mismatch: Some(format!("thread {t}: enabled moves differ")) });
                    }
                    for ((va, oa), (vb, ob)) in xa.into_iter().zip(xb) {
                        match (va == vb, oa, ob) {
                            (true, Outcome::Next(na), Outcome::Next(nb)) => stack.push((na, nb, d + 1)),
                            (true, Outcome::Violation(_), Outcome::Violation(_)) => {}
                            (true, Outcome::LockMisuse(_), Outcome::LockMisuse(_)) => {}
                            _ => {
                                return Ok(ProjectionReport { states, mismatch: Some(format!("thread {t}: move outcomes differ")) });
                            }
                        }
                    }
                }
                _ => return Ok(ProjectionReport { states, mismatch: Some(format!("thread {t}: enabledness differs")) }),
            }
        }
    }
    Ok(ProjectionReport { states, mismatch: None })
}

fn project_mismatch(m1: &Machine<'_>, a: &State, m2: &Machine<'_>, b: &State) -> Option<String> {
    if a.globals != b.globals {
        return Some(format!("globals {:?} vs {:?}", a.globals, b.globals));
    }
    if a.locks != b.locks || a.events != b.events || a.lp != b.lp {
        return Some("locks or events differ".into());
    }
    for (t, (x, y)) in a.threads.iter().zip(&b.threads).enumerate() {
        if x.pc != y.pc || x.started != y.started || x.done != y.done {
            return Some(format!("thread {t}: control differs"));
        }
        let f2 = m2.vars_of(t);
        for (i, v) in m1.vars_of(t).iter().enumerate() {
            if v.kind == VarKind::Shadow {
                continue;
            }
            let j = f2.iter().position(|w| w == v)?;
            if x.frame[i] != y.frame[j] {
                return Some(format!("thread {t}: `{}` is {} vs {}", v.name, x.frame[i], y.frame[j]));
            }
        }
    }
    None
}
