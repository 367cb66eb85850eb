//! Lock synthesis from a sequential proof.
//!
//! The pipeline: collect the relevant predicates `R`, compute which edges may
//! falsify which of them (`mbf`), allocate one lock per predicate family with
//! deadlock-avoiding merging, derive per-edge acquire/release/break sets,
//! drop dominated locks, and weave the result back into the source tree.

use std::collections::{BTreeMap, BTreeSet};

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::lang::{
    build_control_graph, ControlGraph, EdgeId, EdgeOrigin, EdgeStmt, Expr, Formula, Library, StmtKind, StmtNode,
    VertexId, W,
};
use crate::logic::{family_key, negate, normalize, rename_locals, Checker};
use crate::proof::{annotation_from_library, may_falsify_renamed, ProofAnnotation, ProofError};

pub type LockId = usize;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SynthError {
    #[error(transparent)]
    Proof(#[from] ProofError),
    #[error("lock imbalance at `{vertex}`: {detail}")]
    Unbalanced { vertex: String, detail: String },
}

/// Identity of the lock guarding a predicate. Members of one family share a
/// lock, and so do a predicate and its negation.
pub fn lock_key(p: &Formula) -> String {
    let a = family_key(p).to_string();
    let b = family_key(&negate(&normalize(p))).to_string();
    // Prefer the form without `!=` so lock members read positively.
    std::cmp::min_by_key(a, b, |k| (k.contains("!="), k.clone()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Lock {
    pub id: LockId,
    pub name: String,
    /// Lock keys of the predicate families this lock protects.
    pub members: Vec<String>,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OptStep {
    /// A predicate family no edge may falsify; it never gets a lock.
    NeverFalsified { family: String },
    /// `lock` is held only where `by` is held too.
    Dominated { lock: LockId, by: LockId },
}

/// Everything the synthesizer decided, indexed by vertex and edge of the
/// control graph it was computed on.
#[derive(Debug, Clone)]
pub struct LockPlan {
    /// Relevant predicates, locals renamed, normalized, sorted by text.
    pub r: Vec<Formula>,
    pub mbf: Vec<Vec<Formula>>,
    /// Optional may-be-falsified-after sets (linearizable mode).
    pub mf: Option<Vec<Vec<Formula>>>,
    /// Lock key to lock.
    pub lm: BTreeMap<String, LockId>,
    pub locks: Vec<Lock>,
    /// Locks held at each vertex.
    pub held: Vec<BTreeSet<LockId>>,
    pub acq: Vec<BTreeSet<LockId>>,
    pub rel: Vec<BTreeSet<LockId>>,
    pub brk: Vec<BTreeSet<LockId>>,
    /// Locks still in use after optimization.
    pub live: BTreeSet<LockId>,
    pub log: Vec<OptStep>,
}

fn renamed(f: &Formula) -> Formula {
    normalize(&rename_locals(f))
}

fn sort_dedup(mut fs: Vec<Formula>) -> Vec<Formula> {
    let mut seen = BTreeSet::new();
    fs.retain(|f| seen.insert(f.to_string()));
    fs.sort_by_key(|f| f.to_string());
    fs
}

/// R: every basis and obligation predicate of every procedure vertex,
/// locals renamed. The quiescent vertex needs no locks.
pub fn compute_r(ann: &ProofAnnotation, extra: Option<&[Vec<Formula>]>) -> Vec<Formula> {
    let mut all = Vec::new();
    for u in (0..ann.mu.len()).filter(|&u| u != W) {
        all.extend(ann.m(u).iter().map(renamed));
        if let Some(x) = extra {
            all.extend(x[u].iter().cloned());
        }
    }
    sort_dedup(all.into_iter().filter(|f| !matches!(f, Expr::Bool(_))).collect())
}

/// mbf(e): the members of `r` that edge `e` may falsify.
pub fn compute_mbf(lib: &Library, g: &ControlGraph, ann: &ProofAnnotation, r: &[Formula], ck: &Checker) -> Vec<Vec<Formula>> {
    g.edges
        .par_iter()
        .map(|e| r.iter().filter(|p| may_falsify_renamed(lib, &ann.mu[e.src], e, p, ck)).cloned().collect())
        .collect()
}

/// Per-vertex predicate sets the thread needs protected, widened so that
/// every lock needed after a branch is already held before the condition is
/// evaluated.
fn needed(g: &ControlGraph, ann: &ProofAnnotation, extra: Option<&[Vec<Formula>]>) -> Vec<BTreeSet<String>> {
    let n = g.vertex_count();
    let mut need: Vec<BTreeSet<String>> = vec![BTreeSet::new(); n];
    let order = g.topo_order();
    for &u in order.iter().rev() {
        if u == W {
            continue;
        }
        let mut s: BTreeSet<String> = ann.m(u).iter().map(|p| lock_key(&renamed(p))).collect();
        if let Some(x) = extra {
            s.extend(x[u].iter().map(lock_key));
        }
        for e in g.succ(u) {
            if matches!(e.stmt, EdgeStmt::Assume(_)) {
                s.extend(need[e.dst].iter().cloned());
            }
        }
        need[u] = s;
    }
    need
}

/// Builds the full plan: lock allocation, lock sets and optimization.
pub fn plan_locks(
    lib: &Library,
    g: &ControlGraph,
    ann: &ProofAnnotation,
    ck: &Checker,
    mf: Option<Vec<Vec<Formula>>>,
    mbf: Option<Vec<Vec<Formula>>>,
) -> LockPlan {
    let r = compute_r(ann, mf.as_deref());
    let mbf = mbf.unwrap_or_else(|| compute_mbf(lib, g, ann, &r, ck));
    let mbf_keys: Vec<BTreeSet<String>> = mbf.iter().map(|s| s.iter().map(lock_key).collect()).collect();
    let falsifiable: BTreeSet<String> = mbf_keys.iter().flatten().cloned().collect();
    let mut log: Vec<OptStep> = r
        .iter()
        .map(lock_key)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .filter(|k| !falsifiable.contains(k))
        .map(|family| OptStep::NeverFalsified { family })
        .collect();

    let need: Vec<BTreeSet<String>> = needed(g, ann, mf.as_deref())
        .into_iter()
        .map(|s| s.intersection(&falsifiable).cloned().collect())
        .collect();

    let (lm, locks) = allocate_locks(g, &need, &mbf_keys, &falsifiable);
    let held: Vec<BTreeSet<LockId>> = need.iter().map(|s| s.iter().map(|k| lm[k]).collect()).collect();
    let mut acq = Vec::with_capacity(g.edges.len());
    let mut rel = Vec::with_capacity(g.edges.len());
    let mut brk = Vec::with_capacity(g.edges.len());
    for e in &g.edges {
        let (hu, hv) = (&held[e.src], &held[e.dst]);
        acq.push(hv.difference(hu).copied().collect::<BTreeSet<_>>());
        rel.push(hu.difference(hv).copied().collect::<BTreeSet<_>>());
        let b: BTreeSet<LockId> = mbf_keys[e.id].iter().map(|k| lm[k]).filter(|l| !hu.contains(l) && !hv.contains(l)).collect();
        brk.push(b);
    }
    let live = locks.iter().map(|l| l.id).collect();
    let mut plan = LockPlan { r, mbf, mf, lm, locks, held, acq, rel, brk, live, log: vec![] };
    log.extend(optimize(g, &mut plan));
    plan.log = log;
    rename_live(&mut plan);
    plan
}

/// Allocates locks over predicate families: families that may be acquired
/// while each other is held are merged, and the merged classes are ranked
/// topologically, ties broken by their least member.
fn allocate_locks(
    g: &ControlGraph,
    need: &[BTreeSet<String>],
    mbf: &[BTreeSet<String>],
    keys: &BTreeSet<String>,
) -> (BTreeMap<String, LockId>, Vec<Lock>) {
    let keys: Vec<&String> = keys.iter().collect();
    let index: BTreeMap<&String, usize> = keys.iter().enumerate().map(|(i, k)| (*k, i)).collect();
    let mut graph = DiGraph::<usize, ()>::new();
    let nodes: Vec<_> = (0..keys.len()).map(|i| graph.add_node(i)).collect();
    let mut arcs = BTreeSet::new();
    for e in &g.edges {
        let (mu, mv) = (&need[e.src], &need[e.dst]);
        for p in mu {
            for r in mv.iter().chain(&mbf[e.id]) {
                if !mu.contains(r) {
                    arcs.insert((index[p], index[r]));
                }
            }
        }
    }
    for (a, b) in arcs {
        graph.add_edge(nodes[a], nodes[b], ());
    }
    let mut comps: Vec<Vec<usize>> =
        tarjan_scc(&graph).into_iter().map(|c| c.into_iter().map(|n| graph[n]).collect()).collect();
    for c in &mut comps {
        c.sort();
    }
    let mut comp_of = vec![0; keys.len()];
    for (ci, c) in comps.iter().enumerate() {
        for &k in c {
            comp_of[k] = ci;
        }
    }
    let mut indeg = vec![0usize; comps.len()];
    let mut succ: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); comps.len()];
    for e in graph.edge_indices() {
        let (a, b) = graph.edge_endpoints(e).expect("edge exists");
        let (ca, cb) = (comp_of[graph[a]], comp_of[graph[b]]);
        if ca != cb && succ[ca].insert(cb) {
            indeg[cb] += 1;
        }
    }
    // Keys are sorted, so a component's first member is its least one.
    let mut ready: BTreeSet<(usize, usize)> =
        (0..comps.len()).filter(|&c| indeg[c] == 0).map(|c| (comps[c][0], c)).collect();
    let mut lm = BTreeMap::new();
    let mut locks = Vec::new();
    while let Some(&(m, c)) = ready.iter().next() {
        ready.remove(&(m, c));
        let id = locks.len();
        for &k in &comps[c] {
            lm.insert(keys[k].clone(), id);
        }
        locks.push(Lock {
            id,
            name: format!("l{id}"),
            members: comps[c].iter().map(|&k| keys[k].clone()).collect(),
            rank: id,
        });
        for &d in &succ[c] {
            indeg[d] -= 1;
            if indeg[d] == 0 {
                ready.insert((comps[d][0], d));
            }
        }
    }
    (lm, locks)
}

/// Held-lock sets at every vertex and during every edge's statement.
fn points(g: &ControlGraph, plan: &LockPlan) -> Vec<BTreeSet<LockId>> {
    let mut out: Vec<BTreeSet<LockId>> = plan.held.clone();
    for e in &g.edges {
        let mut s = plan.held[e.src].clone();
        s.extend(&plan.acq[e.id]);
        s.extend(&plan.brk[e.id]);
        out.push(s);
    }
    out
}

/// Removes locks that are only ever held together with another lock,
/// considering candidates from the highest rank down.
pub fn optimize(g: &ControlGraph, plan: &mut LockPlan) -> Vec<OptStep> {
    let mut log = Vec::new();
    'again: loop {
        let pts = points(g, plan);
        for &l2 in plan.live.iter().rev() {
            let with: Vec<&BTreeSet<LockId>> = pts.iter().filter(|p| p.contains(&l2)).collect();
            let by = plan.live.iter().copied().find(|&l1| l1 != l2 && with.iter().all(|p| p.contains(&l1)));
            if let Some(l1) = by {
                remove_lock(plan, l2);
                log.push(OptStep::Dominated { lock: l2, by: l1 });
                continue 'again;
            }
        }
        return log;
    }
}

fn remove_lock(plan: &mut LockPlan, l: LockId) {
    plan.live.remove(&l);
    for s in plan.held.iter_mut().chain(&mut plan.acq).chain(&mut plan.rel).chain(&mut plan.brk) {
        s.remove(&l);
    }
}

/// Names surviving locks `l0, l1, ...` in rank order.
fn rename_live(plan: &mut LockPlan) {
    for (i, &l) in plan.live.iter().enumerate() {
        plan.locks[l].name = format!("l{i}");
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reason {
    BasisAcq,
    BasisRel,
    Break,
}

/// One inserted lock operation and why it is there.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Provenance {
    pub edge: EdgeId,
    pub lock: String,
    pub acquire: bool,
    pub reason: Reason,
}

/// A library with woven lock operations.
#[derive(Debug, Clone)]
pub struct InstrumentedLibrary {
    pub lib: Library,
    pub provenance: Vec<Provenance>,
}

impl InstrumentedLibrary {
    pub fn source(&self) -> String {
        crate::lang::print_library(&self.lib)
    }
}

fn lock_stmt(acquire: bool, name: &str) -> StmtNode {
    StmtNode {
        id: usize::MAX,
        label: None,
        pos: Default::default(),
        kind: if acquire { StmtKind::Acquire(name.into()) } else { StmtKind::Release(name.into()) },
    }
}

/// Lock operations of one edge: acquisitions before the statement, releases
/// after it.
fn edge_ops(plan: &LockPlan, e: EdgeId, prov: &mut Vec<Provenance>) -> (Vec<StmtNode>, Vec<StmtNode>) {
    let name = |l: LockId| plan.locks[l].name.clone();
    let mut pre: Vec<(LockId, Reason)> = plan.acq[e].iter().map(|&l| (l, Reason::BasisAcq)).collect();
    pre.extend(plan.brk[e].iter().map(|&l| (l, Reason::Break)));
    pre.sort_by_key(|&(l, _)| plan.locks[l].rank);
    let mut post: Vec<(LockId, Reason)> = plan.brk[e].iter().rev().map(|&l| (l, Reason::Break)).collect();
    post.extend(plan.rel[e].iter().rev().map(|&l| (l, Reason::BasisRel)));
    let mut mk = |ops: Vec<(LockId, Reason)>, acquire: bool| -> Vec<StmtNode> {
        ops.into_iter()
            .map(|(l, reason)| {
                prov.push(Provenance { edge: e, lock: name(l), acquire, reason });
                lock_stmt(acquire, &name(l))
            })
            .collect()
    };
    let a = mk(pre, true);
    let r = mk(post, false);
    (a, r)
}

/// Drops `acquire(l) ... release(l)` pairs with no statement in between.
fn cancel_empty_sections(block: &mut Vec<StmtNode>) {
    let mut out: Vec<StmtNode> = Vec::with_capacity(block.len());
    for s in block.drain(..) {
        if let StmtKind::Release(l) = &s.kind {
            let run_start = out.iter().rposition(|t| !t.is_lock()).map_or(0, |i| i + 1);
            if let Some(i) = out[run_start..].iter().rposition(|t| t.kind == StmtKind::Acquire(l.clone())) {
                out.remove(run_start + i);
                continue;
            }
        }
        out.push(s);
    }
    *block = out;
}

#[derive(Default)]
struct Placement {
    before: BTreeMap<usize, Vec<StmtNode>>,
    after: BTreeMap<usize, Vec<StmtNode>>,
    branch: BTreeMap<(usize, bool), Vec<StmtNode>>,
    start: Vec<StmtNode>,
    end: Vec<StmtNode>,
}

/// Weaves the plan into `lib`, whose control graph must be `g`.
pub fn weave(lib: &Library, g: &ControlGraph, plan: &LockPlan) -> InstrumentedLibrary {
    let mut prov = Vec::new();
    let mut places: Vec<Placement> = (0..lib.procs.len()).map(|_| Placement::default()).collect();
    let mut exit_ops: Vec<Vec<StmtNode>> = vec![vec![]; lib.procs.len()];
    for e in g.edges.iter().filter(|e| e.is_exit()) {
        let (pre, post) = edge_ops(plan, e.id, &mut prov);
        exit_ops[e.proc] = pre.into_iter().chain(post).collect();
    }
    for e in g.edges.iter().filter(|e| !e.is_exit()) {
        let (pre, mut post) = edge_ops(plan, e.id, &mut prov);
        let pl = &mut places[e.proc];
        let to_exit = e.dst == g.procs[e.proc].exit;
        if to_exit {
            post.extend(exit_ops[e.proc].iter().cloned());
        }
        match e.origin {
            EdgeOrigin::Call => {
                pl.start.extend(pre);
                pl.start.extend(post);
            }
            EdgeOrigin::Branch(id, b) => {
                debug_assert!(pre.is_empty(), "branch edges only release");
                pl.branch.entry((id, b)).or_default().extend(post);
            }
            EdgeOrigin::FallOff => {
                pl.end.extend(pre);
                pl.end.extend(post);
            }
            EdgeOrigin::Stmt(id) => {
                let hoist = match &e.stmt {
                    EdgeStmt::Return(es) => to_exit && es.iter().all(|x| !x.mentions(&|v| !v.is_thread_local())),
                    _ => false,
                };
                let before = pl.before.entry(id).or_default();
                before.extend(pre);
                if hoist {
                    before.extend(post);
                } else {
                    pl.after.entry(id).or_default().extend(post);
                }
            }
            EdgeOrigin::Exit => unreachable!(),
        }
    }
    let mut out = lib.clone();
    out.annotations.inv.clear();
    out.annotations.basis.clear();
    out.annotations.seeds.clear();
    for (p, pl) in out.procs.iter_mut().zip(&places) {
        let mut body = pl.start.clone();
        body.extend(weave_block(&p.body, pl));
        body.extend(pl.end.iter().cloned());
        cancel_empty_sections(&mut body);
        p.body = body;
    }
    InstrumentedLibrary { lib: out, provenance: prov }
}

fn weave_block(stmts: &[StmtNode], pl: &Placement) -> Vec<StmtNode> {
    let mut out = Vec::new();
    for s in stmts {
        out.extend(pl.before.get(&s.id).into_iter().flatten().cloned());
        let mut t = s.clone();
        t.label = None;
        if let StmtKind::If(c, th, el) = &s.kind {
            let mut th2: Vec<StmtNode> = pl.branch.get(&(s.id, true)).cloned().unwrap_or_default();
            th2.extend(weave_block(th, pl));
            cancel_empty_sections(&mut th2);
            let mut el2: Vec<StmtNode> = pl.branch.get(&(s.id, false)).cloned().unwrap_or_default();
            el2.extend(weave_block(el.as_deref().unwrap_or_default(), pl));
            cancel_empty_sections(&mut el2);
            let el2 = if el2.is_empty() && el.is_none() { None } else { Some(el2) };
            t.kind = StmtKind::If(c.clone(), th2, el2);
        }
        out.push(t);
        out.extend(pl.after.get(&s.id).into_iter().flatten().cloned());
    }
    out
}

/// Statically checks that every path from `w` back to `w` acquires and
/// releases each lock in balance, never re-acquires a held lock, and agrees
/// on the held set wherever paths join.
pub fn check_lock_balance(lib: &Library) -> Result<(), SynthError> {
    let g = build_control_graph(lib);
    let n = g.vertex_count();
    let mut held: Vec<Option<BTreeSet<String>>> = vec![None; n];
    held[W] = Some(BTreeSet::new());
    let bad = |v: VertexId, detail: String| SynthError::Unbalanced { vertex: g.vertices[v].name.clone(), detail };
    for u in g.topo_order() {
        let cur = held[u].clone().unwrap_or_default();
        for e in g.succ(u) {
            let mut s = cur.clone();
            match &e.stmt {
                EdgeStmt::Acquire(l) => {
                    if !s.insert(l.clone()) {
                        return Err(bad(u, format!("re-acquire of {l}")));
                    }
                }
                EdgeStmt::Release(l) => {
                    if !s.remove(l) {
                        return Err(bad(u, format!("release of unheld {l}")));
                    }
                }
                _ => {}
            }
            if e.dst == W {
                if !s.is_empty() {
                    let names: Vec<&String> = s.iter().collect();
                    return Err(bad(u, format!("locks held at return: {names:?}")));
                }
                continue;
            }
            match &held[e.dst] {
                Some(prev) if *prev != s => {
                    return Err(bad(e.dst, format!("paths disagree on held locks: {prev:?} vs {s:?}")));
                }
                _ => held[e.dst] = Some(s),
            }
        }
    }
    Ok(())
}

/// Result of plain synthesis.
#[derive(Debug, Clone)]
pub struct Synthesis {
    pub graph: ControlGraph,
    pub annotation: ProofAnnotation,
    pub plan: LockPlan,
    pub output: InstrumentedLibrary,
}

/// Proof from the library's annotations, then plan, weave and check.
pub fn synthesize(lib: &Library, ck: &Checker) -> Result<Synthesis, SynthError> {
    let g = build_control_graph(lib);
    let ann = annotation_from_library(lib, &g, ck)?;
    synthesize_with(lib, g, ann, ck)
}

pub fn synthesize_with(lib: &Library, g: ControlGraph, ann: ProofAnnotation, ck: &Checker) -> Result<Synthesis, SynthError> {
    let plan = plan_locks(lib, &g, &ann, ck, None, None);
    let output = weave(lib, &g, &plan);
    check_lock_balance(&output.lib)?;
    Ok(Synthesis { graph: g, annotation: ann, plan, output })
}

#[derive(Serialize)]
struct EdgeSets {
    edge: EdgeId,
    at: String,
    acq: Vec<String>,
    rel: Vec<String>,
    brk: Vec<String>,
    mbf: Vec<String>,
}

#[derive(Serialize)]
struct VertexSets {
    vertex: String,
    held: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mf: Option<Vec<String>>,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    locks: Vec<&'a Lock>,
    removed: Vec<&'a Lock>,
    edges: Vec<EdgeSets>,
    vertices: Vec<VertexSets>,
    optimization: &'a [OptStep],
    provenance: &'a [Provenance],
}

/// Machine-readable description of a synthesis run.
pub fn sidecar_json(g: &ControlGraph, plan: &LockPlan, prov: &[Provenance]) -> serde_json::Value {
    let names = |s: &BTreeSet<LockId>| s.iter().map(|&l| plan.locks[l].name.clone()).collect::<Vec<_>>();
    let texts = |s: &[Formula]| s.iter().map(|f| f.to_string()).collect::<Vec<_>>();
    let sc = Sidecar {
        locks: plan.locks.iter().filter(|l| plan.live.contains(&l.id)).collect(),
        removed: plan.locks.iter().filter(|l| !plan.live.contains(&l.id)).collect(),
        edges: g
            .edges
            .iter()
            .map(|e| EdgeSets {
                edge: e.id,
                at: format!("{} -> {} [{}]", g.vertices[e.src].name, g.vertices[e.dst].name, e.stmt),
                acq: names(&plan.acq[e.id]),
                rel: names(&plan.rel[e.id]),
                brk: names(&plan.brk[e.id]),
                mbf: texts(&plan.mbf[e.id]),
            })
            .collect(),
        vertices: g
            .vertices
            .iter()
            .map(|v| VertexSets {
                vertex: v.name.clone(),
                held: names(&plan.held[v.id]),
                mf: plan.mf.as_ref().map(|m| texts(&m[v.id])),
            })
            .collect(),
        optimization: &plan.log,
        provenance: prov,
    };
    serde_json::to_value(sc).expect("sidecar serializes")
}
