//! Substitution, weakest preconditions and local-variable renaming.

use std::collections::{BTreeMap, BTreeSet};

use crate::lang::cfg::shadow_pairs;
use crate::lang::{ret_vars, Edge, EdgeStmt, Expr, Formula, Library, Procedure, Var};

pub fn subst(f: &Formula, map: &BTreeMap<Var, Expr>) -> Formula {
    f.map_vars(&|v| map.get(v).cloned())
}

fn names(f: &Formula) -> BTreeSet<String> {
    f.vars().into_iter().map(|v| v.name).collect()
}

/// A logical variable `base'`, `base''`, ... whose name is not in `taken`.
pub fn fresh_logical(base: &str, taken: &BTreeSet<String>) -> Var {
    let mut name = format!("{base}'");
    while taken.contains(&name) {
        name.push('\'');
    }
    Var::logical(&name)
}

pub fn wp(s: &EdgeStmt, phi: &Formula) -> Formula {
    wp_avoiding(s, phi, &BTreeSet::new())
}

/// Weakest precondition; fresh logical variables introduced for havoc avoid
/// the names in `avoid` as well as those of `phi`.
pub fn wp_avoiding(s: &EdgeStmt, phi: &Formula, avoid: &BTreeSet<String>) -> Formula {
    match s {
        EdgeStmt::Skip
        | EdgeStmt::Assert(_)
        | EdgeStmt::Assert2(_)
        | EdgeStmt::Acquire(_)
        | EdgeStmt::Release(_) => phi.clone(),
        EdgeStmt::Assign(x, e) => phi.map_vars(&|v| (v == x).then(|| e.clone())),
        EdgeStmt::Havoc(x) => {
            let mut taken = names(phi);
            taken.extend(avoid.iter().cloned());
            let fresh = Expr::Var(fresh_logical(&x.name, &taken));
            phi.map_vars(&|v| (v == x).then(|| fresh.clone()))
        }
        EdgeStmt::Assume(c) => Expr::Or(vec![Expr::not(c.clone()), phi.clone()]),
        EdgeStmt::Return(es) => {
            let map: BTreeMap<Var, Expr> = ret_vars(es.len()).into_iter().zip(es.iter().cloned()).collect();
            subst(phi, &map)
        }
        EdgeStmt::LPCopy(pairs) => {
            let map: BTreeMap<Var, Expr> = pairs.iter().map(|(s, b)| (s.clone(), Expr::Var(b.clone()))).collect();
            subst(phi, &map)
        }
    }
}

/// Call-edge precondition: havoc the parameters, zero locals and return
/// variables, snapshot shadows, then run the edge's own statement.
pub fn wp_call(lib: &Library, p: &Procedure, s: &EdgeStmt, phi: &Formula, avoid: &BTreeSet<String>) -> Formula {
    let inner = wp_avoiding(s, phi, avoid);
    let snap: BTreeMap<Var, Expr> =
        shadow_pairs(lib, p).into_iter().map(|(sh, base)| (sh, Expr::Var(base))).collect();
    let inner = subst(&inner, &snap);
    let mut taken = names(&inner);
    taken.extend(avoid.iter().cloned());
    let mut map = BTreeMap::new();
    for v in p.locals.iter().chain(&p.rets) {
        map.insert(v.clone(), Expr::Int(0));
    }
    for v in &p.params {
        let fresh = fresh_logical(&v.name, &taken);
        taken.insert(fresh.name.clone());
        map.insert(v.clone(), Expr::Var(fresh));
    }
    subst(&inner, &map)
}

pub fn wp_edge(lib: &Library, e: &Edge, phi: &Formula, avoid: &BTreeSet<String>) -> Formula {
    if e.is_call() {
        wp_call(lib, &lib.procs[e.proc], &e.stmt, phi, avoid)
    } else {
        wp_avoiding(&e.stmt, phi, avoid)
    }
}

/// Replaces every thread-local variable (parameter, local, shadow) with a
/// logical variable of the same name plus a prime.
pub fn rename_locals(phi: &Formula) -> Formula {
    let mut taken = names(phi);
    let mut map = BTreeMap::new();
    for v in phi.vars() {
        if v.is_thread_local() {
            let fresh = fresh_logical(&v.name, &taken);
            taken.insert(fresh.name.clone());
            map.insert(v, Expr::Var(fresh));
        }
    }
    subst(phi, &map)
}
