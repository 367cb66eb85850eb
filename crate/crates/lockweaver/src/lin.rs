//! Linearizable synthesis.
//!
//! Procedures linearize at their entry edge. The two-state transformation
//! makes `old(v)` an ordinary thread-local copy taken there; the basis is
//! closed under weakest preconditions, negation, return values and branch
//! conditions; and locks for predicates a thread may still falsify are held
//! from the entry edge until the last such write.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::lang::{
    build_control_graph, ret_vars, ControlGraph, EdgeStmt, Expr, Formula, Library, StmtKind, StmtNode, Var, VarKind, W,
};
use crate::logic::{family_key, leaves, negate, normalize, wp_edge, Checker};
use crate::proof::{annotation_from_library, ProofAnnotation, ProofError};
use crate::synth::{check_lock_balance, compute_mbf, compute_r, plan_locks, weave, InstrumentedLibrary, LockPlan, SynthError};

/// Maximum basis size per vertex after family merging.
pub const CLOSURE_CAP: usize = 128;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LinError {
    #[error(transparent)]
    Proof(#[from] ProofError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("basis closure diverged at `{vertex}`; last added: {}", trace.join("; "))]
    ClosureDiverged { vertex: String, trace: Vec<String> },
}

/// Adds a shadow for every global and parameter, copies them on the entry
/// edge and turns two-state assertions into ordinary ones over the shadows.
pub fn transform_two_state(lib: &Library) -> Library {
    let mut out = lib.clone();
    out.two_state = true;
    let globals: Vec<String> = lib.globals.iter().map(|g| g.var.name.clone()).collect();
    for p in &mut out.procs {
        let mut sh: Vec<Var> = globals.iter().chain(p.params.iter().map(|v| &v.name)).map(|n| Var::shadow(n)).collect();
        sh.sort();
        sh.dedup();
        p.shadows = sh;
        lower_assert2(&mut p.body);
    }
    out
}

fn lower_assert2(block: &mut [StmtNode]) {
    for s in block {
        match &mut s.kind {
            StmtKind::Assert2(f) => s.kind = StmtKind::Assert(f.clone()),
            StmtKind::If(_, t, e) => {
                lower_assert2(t);
                if let Some(e) = e {
                    lower_assert2(e);
                }
            }
            _ => {}
        }
    }
}

/// The logical variable standing for the eventual value of a return variable.
pub fn ret_logical(r: &Var) -> Var {
    Var::logical(&format!("${}", r.name))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ClosureFlags {
    pub wp_closed: bool,
    pub negation_closed: bool,
    pub returns_covered: bool,
    pub branches_covered: bool,
}

impl ClosureFlags {
    pub fn all(&self) -> bool {
        self.wp_closed && self.negation_closed && self.returns_covered && self.branches_covered
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClosedBasis {
    pub pm: Vec<Vec<Formula>>,
    pub flags: ClosureFlags,
    /// `(vertex, predicate)` in the order predicates were added.
    pub trace: Vec<(String, String)>,
}

/// A per-vertex predicate set in which predicates of one family count once.
#[derive(Default, Clone)]
struct FamilySet {
    items: Vec<Formula>,
    keys: BTreeSet<String>,
}

impl FamilySet {
    fn has(&self, p: &Formula) -> bool {
        self.keys.contains(&family_key(p).to_string())
    }
    fn add(&mut self, p: Formula) -> bool {
        if matches!(p, Expr::Bool(_)) || self.has(&p) {
            return false;
        }
        self.keys.insert(family_key(&p).to_string());
        self.items.push(p);
        true
    }
}

fn covered(set: &FamilySet, f: &Formula) -> bool {
    leaves(f).iter().all(|l| set.has(l))
}

/// Required predicates: assertions and branch conditions at their edge's
/// source, and `$ret == ret` after each return.
fn obligations(g: &ControlGraph) -> Vec<(usize, Formula)> {
    let mut out = Vec::new();
    for e in &g.edges {
        match &e.stmt {
            EdgeStmt::Assert(f) | EdgeStmt::Assert2(f) | EdgeStmt::Assume(f) => out.push((e.src, f.clone())),
            EdgeStmt::Return(es) => {
                for r in ret_vars(es.len()) {
                    out.push((e.dst, Expr::eq(Expr::Var(ret_logical(&r)), Expr::Var(r))));
                }
            }
            _ => {}
        }
    }
    out
}

/// Closes `pm0` under weakest preconditions and negation, after seeding it
/// with every assertion, return value and branch condition. Predicates that
/// differ only by the offset of a logical variable are identified. Entry
/// and exit edges are not crossed: the quiescent vertex keeps its input basis.
pub fn close_basis(lib: &Library, g: &ControlGraph, pm0: &[Vec<Formula>], _ck: &Checker) -> Result<ClosedBasis, LinError> {
    let n = g.vertex_count();
    let mut pm: Vec<FamilySet> = vec![FamilySet::default(); n];
    let mut trace = Vec::new();
    let mut recent: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    let mut add = |pm: &mut Vec<FamilySet>, u: usize, p: &Formula, trace: &mut Vec<(String, String)>| -> Result<bool, LinError> {
        let mut grew = false;
        for l in leaves(p) {
            for q in [l.clone(), negate(&l)] {
                if pm[u].add(q.clone()) {
                    grew = true;
                    trace.push((g.vertices[u].name.clone(), q.to_string()));
                    let r = recent.entry(u).or_default();
                    r.push(q.to_string());
                    if pm[u].items.len() > CLOSURE_CAP {
                        let k = r.len().saturating_sub(5);
                        return Err(LinError::ClosureDiverged { vertex: g.vertices[u].name.clone(), trace: r[k..].to_vec() });
                    }
                }
            }
        }
        Ok(grew)
    };
    for (u, ps) in pm0.iter().enumerate() {
        for p in ps {
            add(&mut pm, u, p, &mut trace)?;
        }
    }
    let required = obligations(g);
    for (u, f) in &required {
        add(&mut pm, *u, f, &mut trace)?;
    }
    loop {
        let mut grew = false;
        for e in g.edges.iter().filter(|e| !e.is_exit() && !e.is_call()) {
            let post = pm[e.dst].items.clone();
            let mut avoid: BTreeSet<String> = BTreeSet::new();
            for p in pm[e.src].items.iter().chain(&post) {
                avoid.extend(p.vars().into_iter().map(|v| v.name));
            }
            for phi in &post {
                let pre = normalize(&wp_edge(lib, e, phi, &avoid));
                grew |= add(&mut pm, e.src, &pre, &mut trace)?;
            }
        }
        if !grew {
            break;
        }
    }
    let flags = ClosureFlags {
        wp_closed: g.edges.iter().filter(|e| !e.is_exit() && !e.is_call()).all(|e| {
            pm[e.dst].items.iter().all(|phi| covered(&pm[e.src], &normalize(&wp_edge(lib, e, phi, &BTreeSet::new()))))
        }),
        negation_closed: pm.iter().all(|s| s.items.iter().all(|p| s.has(&negate(p)))),
        returns_covered: required
            .iter()
            .filter(|(_, f)| f.mentions(&|v| v.kind == VarKind::Logical))
            .all(|(u, f)| covered(&pm[*u], f)),
        branches_covered: g
            .edges
            .iter()
            .filter_map(|e| if let EdgeStmt::Assume(c) = &e.stmt { Some((e.src, c)) } else { None })
            .all(|(u, c)| covered(&pm[u], c)),
    };
    Ok(ClosedBasis { pm: pm.into_iter().map(|s| s.items).collect(), flags, trace })
}

/// mf(u): predicates some path from `u` to its procedure's exit may
/// falsify. The entry edge is the only linearization point, so every such
/// path is free of them.
pub fn compute_mf(g: &ControlGraph, mbf: &[Vec<Formula>]) -> Vec<Vec<Formula>> {
    let n = g.vertex_count();
    let mut mf: Vec<BTreeMap<String, Formula>> = vec![BTreeMap::new(); n];
    for &u in g.topo_order().iter().rev() {
        if u == W {
            continue;
        }
        let mut s = BTreeMap::new();
        for e in g.succ(u).filter(|e| !e.is_call() && !e.is_exit()) {
            for p in &mbf[e.id] {
                s.insert(p.to_string(), p.clone());
            }
            for (k, p) in &mf[e.dst] {
                s.insert(k.clone(), p.clone());
            }
        }
        mf[u] = s;
    }
    mf.into_iter().map(|s| s.into_values().collect()).collect()
}

#[derive(Debug, Clone)]
pub struct LinSynthesis {
    /// Control graph of the input library; vertex and edge ids match those
    /// of the transformed one.
    pub graph: ControlGraph,
    pub transformed: Library,
    pub annotation: ProofAnnotation,
    pub basis: ClosedBasis,
    pub plan: LockPlan,
    pub output: InstrumentedLibrary,
}

/// Two-state transformation, basis closure, mf, then lock synthesis with
/// locks for `mf(u)` held alongside those for `m(u)`. The result is woven
/// into the untransformed source.
pub fn synthesize_linearizable(lib: &Library, ck: &Checker) -> Result<LinSynthesis, LinError> {
    let g = build_control_graph(lib);
    let ann0 = annotation_from_library(lib, &g, ck)?;
    let lib2 = transform_two_state(lib);
    let g2 = build_control_graph(&lib2);
    let basis = close_basis(&lib2, &g2, &ann0.pm, ck)?;
    // Obligations stay those of the input proof: closure predicates at an
    // entry are not part of the library invariant.
    let ann = ProofAnnotation { mu: ann0.mu.clone(), pm: basis.pm.clone(), om: ann0.om.clone() };
    let r = compute_r(&ann, None);
    let mbf = compute_mbf(&lib2, &g2, &ann, &r, ck);
    let mf = compute_mf(&g2, &mbf);
    let plan = plan_locks(&lib2, &g2, &ann, ck, Some(mf), Some(mbf));
    let output = weave(lib, &g, &plan);
    check_lock_balance(&output.lib)?;
    Ok(LinSynthesis { graph: g, transformed: lib2, annotation: ann, basis, plan, output })
}
