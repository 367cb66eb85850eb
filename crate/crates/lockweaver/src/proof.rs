//! Sequential proofs: per-vertex invariants (μ), positive bases (pm) and
//! obligation sets (om); checking, obligation inference and a
//! predicate-abstraction fixpoint for proofs from seed predicates.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::lang::{
    ControlGraph, Edge, EdgeId, EdgeOrigin, EdgeStmt, Expr, Formula, Library, Var, VarKind, VertexId, VertexKind, W,
};
use crate::logic::{leaves, mk_and, mk_or, negate, normalize, rename_locals, wp_edge, Checker, TriState, Valuation};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProofError {
    #[error("no invariant for vertex `{0}`")]
    MissingInvariant(String),
    #[error("annotation names unknown point `{0}`")]
    UnknownPoint(String),
    #[error("entry invariant of `{0}` is not a conjunction of its basis")]
    DisjunctiveEntry(String),
    #[error("invariant not re-established before exit: `{pred}` in `{proc}`")]
    NotReestablished { pred: String, proc: String },
    #[error("proof not found with given seeds: {0}")]
    NotFound(String),
    #[error("disjunction at `{vertex}` exceeds {cap} cubes")]
    CubeCap { vertex: String, cap: usize },
}

/// μ, pm and om indexed by vertex.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProofAnnotation {
    pub mu: Vec<Formula>,
    pub pm: Vec<Vec<Formula>>,
    pub om: Vec<Vec<Formula>>,
}

impl ProofAnnotation {
    /// `μ ≡ true`, empty bases.
    pub fn trivial(g: &ControlGraph) -> ProofAnnotation {
        let n = g.vertex_count();
        ProofAnnotation { mu: vec![Expr::Bool(true); n], pm: vec![vec![]; n], om: vec![vec![]; n] }
    }

    /// m(u) = pm(u) ∪ om(u).
    pub fn m(&self, u: VertexId) -> Vec<Formula> {
        let mut out = self.pm[u].clone();
        for p in &self.om[u] {
            if !out.contains(p) {
                out.push(p.clone());
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    HoareA,
    AssertB,
    EntryExit,
    BasisPositivity,
    ObligationA,
    ObligationB,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rule::HoareA => "hoare-a",
            Rule::AssertB => "assert-b",
            Rule::EntryExit => "entry-exit",
            Rule::BasisPositivity => "basis-positivity",
            Rule::ObligationA => "obligation-a",
            Rule::ObligationB => "obligation-b",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Site {
    Edge(EdgeId),
    Vertex(VertexId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub site: Site,
    pub rule: Rule,
    pub detail: String,
    pub witness: Option<Valuation>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ProofReport {
    pub violations: Vec<Violation>,
}

impl ProofReport {
    pub fn accepted(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, site: Site, rule: Rule, detail: String, t: TriState) {
        let witness = match t {
            TriState::Invalid(w) => Some(w),
            _ => None,
        };
        let detail = if witness.is_none() { format!("{detail} (undecided within budget)") } else { detail };
        self.violations.push(Violation { site, rule, detail, witness });
    }
}

fn edge_desc(g: &ControlGraph, e: &Edge) -> String {
    format!("{} -> {} [{}]", g.vertices[e.src].name, g.vertices[e.dst].name, e.stmt)
}

/// Builds the annotation carried by the library's `@inv`/`@basis` blocks.
/// Without any `@inv`, falls back to seed inference or the trivial proof.
pub fn annotation_from_library(lib: &Library, g: &ControlGraph, ck: &Checker) -> Result<ProofAnnotation, ProofError> {
    let ann = &lib.annotations;
    if ann.inv.is_empty() {
        if !ann.seeds.is_empty() {
            return infer_proof(lib, g, &ann.seeds, ck);
        }
        let mut a = ProofAnnotation::trivial(g);
        a.om = infer_obligations(lib, g, &a, ck)?;
        return Ok(a);
    }
    let n = g.vertex_count();
    let mut mu: Vec<Option<Formula>> = vec![None; n];
    let mut pm: Vec<Option<Vec<Formula>>> = vec![None; n];
    for (pt, f) in &ann.inv {
        let v = g.point(pt).ok_or_else(|| ProofError::UnknownPoint(pt.to_string()))?;
        mu[v] = Some(normalize(f));
    }
    for (pt, fs) in &ann.basis {
        let v = g.point(pt).ok_or_else(|| ProofError::UnknownPoint(pt.to_string()))?;
        pm[v] = Some(dedup(fs.iter().map(normalize).collect()));
    }
    // The unnamed point where a body falls off its end shares the exit's
    // annotation unless given one.
    for v in 0..n {
        let mut succ = g.succ(v);
        if let (Some(e), None, None) = (succ.next(), succ.next(), &mu[v]) {
            if matches!(e.origin, EdgeOrigin::FallOff) {
                mu[v] = mu[e.dst].clone();
                pm[v] = pm[v].take().or_else(|| pm[e.dst].clone());
            }
        }
    }
    let mut out = ProofAnnotation::trivial(g);
    for v in 0..n {
        if g.vertices[v].kind == VertexKind::PreEntry {
            continue;
        }
        let m = mu[v].take().ok_or_else(|| ProofError::MissingInvariant(g.vertices[v].name.clone()))?;
        out.pm[v] = pm[v].take().unwrap_or_else(|| leaves(&m));
        out.mu[v] = m;
    }
    out.om = infer_obligations(lib, g, &out, ck)?;
    Ok(out)
}

fn dedup(fs: Vec<Formula>) -> Vec<Formula> {
    let mut out: Vec<Formula> = Vec::new();
    for f in fs {
        if !out.contains(&f) && !matches!(f, Expr::Bool(_)) {
            out.push(f);
        }
    }
    out
}

/// Initial values of the globals as a conjunction `g == init`.
pub fn initial_state(lib: &Library) -> Formula {
    Expr::and(lib.globals.iter().map(|g| Expr::eq(Expr::Var(g.var.clone()), g.init.clone())).collect())
}

/// Checks Hoare triples on every edge, assertions, and the initial and
/// exit conditions at the quiescent vertex.
pub fn check_proof(lib: &Library, g: &ControlGraph, ann: &ProofAnnotation, ck: &Checker) -> ProofReport {
    let mut rep = ProofReport::default();
    let init = initial_state(lib);
    let t = ck.implies(&init, &ann.mu[W]);
    if !t.is_valid() {
        rep.push(Site::Vertex(W), Rule::EntryExit, format!("initial state violates {}", ann.mu[W]), t);
    }
    for e in &g.edges {
        let pre = &ann.mu[e.src];
        let avoid = pre.vars().into_iter().map(|v| v.name).collect();
        let t = ck.implies(pre, &wp_edge(lib, e, &ann.mu[e.dst], &avoid));
        if !t.is_valid() {
            let rule = if e.is_call() || e.is_exit() { Rule::EntryExit } else { Rule::HoareA };
            rep.push(Site::Edge(e.id), rule, format!("{}: {{{}}} does not ensure {{{}}}", edge_desc(g, e), pre, ann.mu[e.dst]), t);
        }
        if let EdgeStmt::Assert(phi) | EdgeStmt::Assert2(phi) = &e.stmt {
            let t = ck.implies(pre, phi);
            if !t.is_valid() {
                rep.push(Site::Edge(e.id), Rule::AssertB, format!("{}: {} does not imply {}", edge_desc(g, e), pre, phi), t);
            }
        }
    }
    rep
}

/// Every μ(u) must be an and/or combination of pm(u).
pub fn check_positive_basis(g: &ControlGraph, ann: &ProofAnnotation, ck: &Checker) -> ProofReport {
    let mut rep = ProofReport::default();
    for v in 0..g.vertex_count() {
        if !ck.covers(&ann.mu[v], &ann.pm[v]) {
            let basis: Vec<String> = ann.pm[v].iter().map(|p| p.to_string()).collect();
            rep.violations.push(Violation {
                site: Site::Vertex(v),
                rule: Rule::BasisPositivity,
                detail: format!("{}: {} is not a positive combination of {{{}}}", g.vertices[v].name, ann.mu[v], basis.join("; ")),
                witness: None,
            });
        }
    }
    rep
}

/// Whether executing `e` from a state satisfying μ(src) may falsify the
/// renamed predicate. Undecided counts as may-falsify.
pub fn may_falsify(lib: &Library, mu_src: &Formula, e: &Edge, phi: &Formula, ck: &Checker) -> bool {
    let r = rename_locals(phi);
    may_falsify_renamed(lib, mu_src, e, &r, ck)
}

pub(crate) fn may_falsify_renamed(lib: &Library, mu_src: &Formula, e: &Edge, r: &Formula, ck: &Checker) -> bool {
    // Only writes to globals the predicate mentions can change its value.
    let target = match &e.stmt {
        EdgeStmt::Assign(v, _) | EdgeStmt::Havoc(v) if v.kind == VarKind::Global => v,
        _ => return false,
    };
    if !r.mentions(&|v: &Var| v == target) {
        return false;
    }
    let pre = Expr::And(vec![mu_src.clone(), r.clone()]);
    let avoid = pre.vars().into_iter().map(|v| v.name).collect();
    !ck.implies(&pre, &wp_edge(lib, e, r, &avoid)).is_valid()
}

/// Whether `{μ(src)} e {phi}` holds.
pub fn establishes(lib: &Library, mu_src: &Formula, e: &Edge, phi: &Formula, ck: &Checker) -> bool {
    let avoid = mu_src.vars().into_iter().map(|v| v.name).collect();
    ck.implies(mu_src, &wp_edge(lib, e, phi, &avoid)).is_valid()
}

fn snapshot_only(f: &Formula) -> bool {
    !f.mentions(&|v: &Var| !matches!(v.kind, VarKind::Global | VarKind::Shadow))
}

fn globals_only(f: &Formula) -> bool {
    !f.mentions(&|v: &Var| v.kind != VarKind::Global)
}

/// Library-invariant predicates: the global-only basis predicates of every
/// procedure entry. Entry invariants must be conjunctions.
pub fn library_invariants(g: &ControlGraph, ann: &ProofAnnotation) -> Result<Vec<Formula>, ProofError> {
    let mut out = Vec::new();
    for pc in &g.procs {
        if contains_or(&ann.mu[pc.entry]) {
            return Err(ProofError::DisjunctiveEntry(pc.name.clone()));
        }
        for p in &ann.pm[pc.entry] {
            if globals_only(p) && !out.contains(p) {
                out.push(p.clone());
            }
        }
    }
    Ok(out)
}

fn contains_or(f: &Formula) -> bool {
    let mut hit = false;
    f.walk(&mut |e| {
        if matches!(e, Expr::Or(_)) {
            hit = true;
        }
    });
    hit
}

/// Least obligation map: invariants a thread may have broken and still owes.
pub fn infer_obligations(
    lib: &Library,
    g: &ControlGraph,
    ann: &ProofAnnotation,
    ck: &Checker,
) -> Result<Vec<Vec<Formula>>, ProofError> {
    let inv = library_invariants(g, ann)?;
    let n = g.vertex_count();
    let mut om: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    if inv.is_empty() {
        return Ok(vec![vec![]; n]);
    }
    // (a): falsification is a property of the edge alone.
    let mut falsifies: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); g.edges.len()];
    for e in &g.edges {
        if e.is_call() || e.is_exit() {
            continue;
        }
        for (i, p) in inv.iter().enumerate() {
            if may_falsify_renamed(lib, &ann.mu[e.src], e, p, ck) {
                falsifies[e.id].insert(i);
            }
        }
    }
    let mut work: VecDeque<EdgeId> = g.edges.iter().map(|e| e.id).collect();
    while let Some(eid) = work.pop_front() {
        let e = &g.edges[eid];
        if e.is_call() {
            continue;
        }
        let mut add: BTreeSet<usize> = falsifies[eid].clone();
        for &i in &om[e.src] {
            if !establishes(lib, &ann.mu[e.src], e, &inv[i], ck) {
                add.insert(i);
            }
        }
        if e.is_exit() {
            if let Some(&i) = add.iter().next() {
                return Err(ProofError::NotReestablished { pred: inv[i].to_string(), proc: g.procs[e.proc].name.clone() });
            }
            continue;
        }
        let before = om[e.dst].len();
        om[e.dst].extend(add);
        if om[e.dst].len() != before {
            work.extend(g.out[e.dst].iter().copied());
        }
    }
    Ok(om.into_iter().map(|s| s.into_iter().map(|i| inv[i].clone()).collect()).collect())
}

/// Checks that `om` satisfies both closure constraints.
pub fn check_obligations(lib: &Library, g: &ControlGraph, ann: &ProofAnnotation, ck: &Checker) -> ProofReport {
    let mut rep = ProofReport::default();
    let Ok(inv) = library_invariants(g, ann) else {
        return rep;
    };
    for e in &g.edges {
        if e.is_call() || e.is_exit() {
            continue;
        }
        for p in &inv {
            if may_falsify(lib, &ann.mu[e.src], e, p, ck) && !ann.om[e.dst].contains(p) {
                rep.violations.push(Violation {
                    site: Site::Edge(e.id),
                    rule: Rule::ObligationA,
                    detail: format!("{}: falsifies {p} which is missing from om", edge_desc(g, e)),
                    witness: None,
                });
            }
        }
        for p in &ann.om[e.src] {
            if !ann.om[e.dst].contains(p) && !establishes(lib, &ann.mu[e.src], e, p, ck) {
                rep.violations.push(Violation {
                    site: Site::Edge(e.id),
                    rule: Rule::ObligationB,
                    detail: format!("{}: drops obligation {p} without establishing it", edge_desc(g, e)),
                    witness: None,
                });
            }
        }
    }
    rep
}

/// Variables a vertex may mention: globals plus the frame of its procedure.
fn in_scope(lib: &Library, g: &ControlGraph, u: VertexId, f: &Formula) -> bool {
    let frame: Vec<Var> = match g.vertices[u].proc {
        Some(p) if u != W => lib.procs[p].frame(),
        _ => vec![],
    };
    f.vars().iter().all(|v| v.kind == VarKind::Global || frame.contains(v))
}

/// Condition on the source state under which the edge can reach a target
/// state satisfying `post`.
fn pre_image(lib: &Library, e: &Edge, post: &Formula, avoid: &BTreeSet<String>) -> Formula {
    match &e.stmt {
        EdgeStmt::Assume(c) | EdgeStmt::Assert(c) | EdgeStmt::Assert2(c) if !e.is_call() => {
            Expr::And(vec![c.clone(), post.clone()])
        }
        _ => wp_edge(lib, e, post, avoid),
    }
}

const CUBE_CAP: usize = 64;

/// Predicate-abstraction fixpoint over full cubes of the seeds in scope.
pub fn infer_proof(lib: &Library, g: &ControlGraph, seeds: &[Formula], ck: &Checker) -> Result<ProofAnnotation, ProofError> {
    let mut all: Vec<Formula> = seeds.iter().map(normalize).collect();
    for e in &g.edges {
        if let EdgeStmt::Assert(f) | EdgeStmt::Assert2(f) = &e.stmt {
            all.extend(leaves(f));
        }
    }
    let all = dedup(all.into_iter().filter(|f| !f.mentions(&|v: &Var| v.kind == VarKind::Logical)).collect());
    let n = g.vertex_count();
    // Entry vertices track only global and snapshot facts: parameters are
    // arbitrary there and entry invariants must stay conjunctive.
    let scope: Vec<Vec<Formula>> = (0..n)
        .map(|u| {
            let entry = g.vertices[u].kind == VertexKind::Entry;
            all.iter().filter(|p| in_scope(lib, g, u, p) && (!entry || snapshot_only(p))).cloned().collect()
        })
        .collect();
    let mut cubes: Vec<BTreeSet<Vec<bool>>> = vec![BTreeSet::new(); n];

    let init = initial_state(lib);
    let mut start = BTreeSet::new();
    realize_cubes(&scope[W], &mut vec![], &mut start, &|lits: &[Formula]| {
        let mut conj = vec![init.clone()];
        conj.extend(lits.iter().cloned());
        ck.is_sat(&Expr::And(conj)).unwrap_or(true)
    });
    cubes[W] = start;

    let mut work: VecDeque<VertexId> = VecDeque::from([W]);
    let mut queued = vec![false; n];
    queued[W] = true;
    while let Some(u) = work.pop_front() {
        queued[u] = false;
        for e in g.succ(u) {
            let v = e.dst;
            let mut fresh = BTreeSet::new();
            for c in &cubes[u] {
                let src = cube_formula(&scope[u], c);
                let avoid: BTreeSet<String> = src.vars().into_iter().map(|x| x.name).collect();
                realize_cubes(&scope[v], &mut vec![], &mut fresh, &|lits: &[Formula]| {
                    let post = Expr::and(lits.to_vec());
                    let q = Expr::And(vec![src.clone(), pre_image(lib, e, &post, &avoid)]);
                    ck.is_sat(&q).unwrap_or(true)
                });
            }
            let before = cubes[v].len();
            cubes[v].extend(fresh);
            if cubes[v].len() != before && !queued[v] {
                queued[v] = true;
                work.push_back(v);
            }
        }
    }

    let mut ann = ProofAnnotation::trivial(g);
    for u in 0..n {
        let merged = merge_cubes(cubes[u].iter().map(|c| c.iter().map(|b| Some(*b)).collect()).collect());
        if merged.len() > CUBE_CAP {
            return Err(ProofError::CubeCap { vertex: g.vertices[u].name.clone(), cap: CUBE_CAP });
        }
        let disj: Vec<Formula> = merged
            .iter()
            .map(|c| {
                mk_and(
                    c.iter()
                        .zip(&scope[u])
                        .filter_map(|(b, p)| b.map(|b| if b { p.clone() } else { negate(p) }))
                        .collect(),
                )
            })
            .collect();
        ann.mu[u] = mk_or(disj);
        ann.pm[u] = leaves(&ann.mu[u]);
    }
    ann.om = infer_obligations(lib, g, &ann, ck)?;
    let rep = check_proof(lib, g, &ann, ck);
    if let Some(v) = rep.violations.first() {
        return Err(ProofError::NotFound(v.detail.clone()));
    }
    Ok(ann)
}

fn cube_formula(scope: &[Formula], c: &[bool]) -> Formula {
    Expr::and(scope.iter().zip(c).map(|(p, b)| if *b { p.clone() } else { Expr::not(p.clone()) }).collect())
}

/// Enumerates the full cubes over `preds` accepted by `feasible`, pruning
/// infeasible prefixes.
fn realize_cubes(
    preds: &[Formula],
    bits: &mut Vec<bool>,
    out: &mut BTreeSet<Vec<bool>>,
    feasible: &dyn Fn(&[Formula]) -> bool,
) {
    let lits: Vec<Formula> = preds
        .iter()
        .zip(bits.iter())
        .map(|(p, b)| if *b { p.clone() } else { Expr::not(p.clone()) })
        .collect();
    if !feasible(&lits) {
        return;
    }
    if bits.len() == preds.len() {
        out.insert(bits.clone());
        return;
    }
    for b in [true, false] {
        bits.push(b);
        realize_cubes(preds, bits, out, feasible);
        bits.pop();
    }
}

/// Repeatedly merges cubes that differ in exactly one fixed position.
fn merge_cubes(mut cs: BTreeSet<Vec<Option<bool>>>) -> BTreeSet<Vec<Option<bool>>> {
    loop {
        let list: Vec<Vec<Option<bool>>> = cs.iter().cloned().collect();
        let mut merged = None;
        'outer: for i in 0..list.len() {
            for j in i + 1..list.len() {
                let diff: Vec<usize> = (0..list[i].len()).filter(|&k| list[i][k] != list[j][k]).collect();
                if diff.len() == 1 && list[i][diff[0]].is_some() && list[j][diff[0]].is_some() {
                    let mut m = list[i].clone();
                    m[diff[0]] = None;
                    merged = Some((i, j, m));
                    break 'outer;
                }
            }
        }
        match merged {
            Some((i, j, m)) => {
                cs.remove(&list[i]);
                cs.remove(&list[j]);
                cs.insert(m);
            }
            None => {
                // Drop cubes subsumed by a more general one.
                let list: Vec<Vec<Option<bool>>> = cs.iter().cloned().collect();
                return list
                    .iter()
                    .filter(|c| {
                        !list.iter().any(|d| {
                            d != *c && d.iter().zip(c.iter()).all(|(x, y)| x.is_none() || x == y)
                        })
                    })
                    .cloned()
                    .collect();
            }
        }
    }
}
