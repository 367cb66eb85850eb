//! Finite-domain decision procedure.
//!
//! Variables range over `[-B, B]`; uninterpreted functions are tables whose
//! entries are chosen lazily, only for argument tuples that evaluation
//! actually reaches. The search is a backtracking enumeration with
//! three-valued pruning.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;

use super::normal::normalize;
use super::wp::wp_avoiding;
use crate::lang::{CmpOp, EdgeStmt, Expr, Formula, Var};

/// Domain bound and search budget (nodes per query).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Checker {
    pub bound: i64,
    pub budget: u64,
}

impl Default for Checker {
    fn default() -> Self {
        Checker { bound: 4, budget: 10_000_000 }
    }
}

/// A concrete model: variable values and the function-table entries used.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Valuation {
    pub vars: BTreeMap<String, i64>,
    pub tables: BTreeMap<String, BTreeMap<String, i64>>,
}

impl std::fmt::Display for Valuation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut parts: Vec<String> = self.vars.iter().map(|(k, v)| format!("{k}={v}")).collect();
        for (fun, t) in &self.tables {
            for (args, v) in t {
                parts.push(format!("{fun}({args})={v}"));
            }
        }
        f.write_str(&parts.join(", "))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TriState {
    Valid,
    Invalid(Valuation),
    Unknown,
}

impl TriState {
    pub fn is_valid(&self) -> bool {
        matches!(self, TriState::Valid)
    }
}

#[derive(Debug)]
enum C {
    Int(i64),
    Var(usize),
    Neg(Box<C>),
    Add(Box<C>, Box<C>),
    Sub(Box<C>, Box<C>),
    App(usize, Vec<C>),
    Cmp(CmpOp, Box<C>, Box<C>),
    Not(Box<C>),
    And(Vec<C>),
    Or(Vec<C>),
}

#[derive(Debug, Clone, Copy)]
enum Need {
    Var(usize),
    Entry(usize, [i64; 2]),
}

struct Exhausted;

struct Search {
    vars: Vec<Var>,
    vals: Vec<Option<i64>>,
    funs: Vec<String>,
    table: HashMap<(usize, [i64; 2]), i64>,
    domain: Vec<i64>,
    nodes: u64,
    budget: u64,
}

impl Search {
    fn new(ck: &Checker, budget: u64) -> Search {
        let mut domain = vec![0];
        for k in 1..=ck.bound {
            domain.push(k);
            domain.push(-k);
        }
        Search { vars: vec![], vals: vec![], funs: vec![], table: HashMap::new(), domain, nodes: 0, budget }
    }

    fn compile(&mut self, e: &Expr) -> C {
        match e {
            Expr::Int(n) => C::Int(*n),
            Expr::Bool(b) => C::Int(*b as i64),
            Expr::Var(v) => {
                let i = match self.vars.iter().position(|x| x == v) {
                    Some(i) => i,
                    None => {
                        self.vars.push(v.clone());
                        self.vals.push(None);
                        self.vars.len() - 1
                    }
                };
                C::Var(i)
            }
            Expr::Neg(a) => C::Neg(Box::new(self.compile(a))),
            Expr::Add(a, b) => C::Add(Box::new(self.compile(a)), Box::new(self.compile(b))),
            Expr::Sub(a, b) => C::Sub(Box::new(self.compile(a)), Box::new(self.compile(b))),
            Expr::App(f, args) => {
                let i = match self.funs.iter().position(|x| x == f) {
                    Some(i) => i,
                    None => {
                        self.funs.push(f.clone());
                        self.funs.len() - 1
                    }
                };
                C::App(i, args.iter().map(|a| self.compile(a)).collect())
            }
            Expr::Cmp(op, a, b) => C::Cmp(*op, Box::new(self.compile(a)), Box::new(self.compile(b))),
            Expr::Not(a) => C::Not(Box::new(self.compile(a))),
            Expr::And(xs) => C::And(xs.iter().map(|x| self.compile(x)).collect()),
            Expr::Or(xs) => C::Or(xs.iter().map(|x| self.compile(x)).collect()),
        }
    }

    fn int(&self, c: &C, need: &mut Option<Need>) -> Option<i64> {
        match c {
            C::Int(n) => Some(*n),
            C::Var(i) => {
                let v = self.vals[*i];
                if v.is_none() && need.is_none() {
                    *need = Some(Need::Var(*i));
                }
                v
            }
            C::Neg(a) => self.int(a, need).map(i64::wrapping_neg),
            C::Add(a, b) => {
                let x = self.int(a, need);
                let y = self.int(b, need);
                Some(x?.wrapping_add(y?))
            }
            C::Sub(a, b) => {
                let x = self.int(a, need);
                let y = self.int(b, need);
                Some(x?.wrapping_sub(y?))
            }
            C::App(f, args) => {
                let mut key = [0i64; 2];
                let mut known = true;
                for (k, a) in args.iter().enumerate() {
                    match self.int(a, need) {
                        Some(v) => key[k] = v,
                        None => known = false,
                    }
                }
                if !known {
                    return None;
                }
                let r = self.table.get(&(*f, key)).copied();
                if r.is_none() && need.is_none() {
                    *need = Some(Need::Entry(*f, key));
                }
                r
            }
            _ => self.boolean(c, need).map(|b| b as i64),
        }
    }

    fn boolean(&self, c: &C, need: &mut Option<Need>) -> Option<bool> {
        match c {
            C::Cmp(op, a, b) => {
                let x = self.int(a, need);
                let y = self.int(b, need);
                Some(op.eval(x?, y?))
            }
            C::Not(a) => self.boolean(a, need).map(|b| !b),
            C::And(xs) | C::Or(xs) => {
                let conj = matches!(c, C::And(_));
                let mut first: Option<Need> = None;
                let mut unknown = false;
                for x in xs {
                    let mut n = None;
                    match self.boolean(x, &mut n) {
                        Some(b) if b != conj => return Some(b),
                        Some(_) => {}
                        None => {
                            unknown = true;
                            if first.is_none() {
                                first = n;
                            }
                        }
                    }
                }
                if unknown {
                    if need.is_none() {
                        *need = first;
                    }
                    None
                } else {
                    Some(conj)
                }
            }
            _ => self.int(c, need).map(|n| n != 0),
        }
    }

    /// Looks for an assignment under which `root` evaluates to `want`.
    fn find(&mut self, root: &C, want: bool) -> Result<bool, Exhausted> {
        self.nodes += 1;
        if self.nodes > self.budget {
            return Err(Exhausted);
        }
        let mut need = None;
        match self.boolean(root, &mut need) {
            Some(b) => Ok(b == want),
            None => {
                let domain = self.domain.clone();
                match need.expect("unknown value has a blocking decision") {
                    Need::Var(i) => {
                        for d in domain {
                            self.vals[i] = Some(d);
                            if self.find(root, want)? {
                                return Ok(true);
                            }
                        }
                        self.vals[i] = None;
                    }
                    Need::Entry(f, key) => {
                        for d in domain {
                            self.table.insert((f, key), d);
                            if self.find(root, want)? {
                                return Ok(true);
                            }
                        }
                        self.table.remove(&(f, key));
                    }
                }
                Ok(false)
            }
        }
    }

    fn witness(&self, arity: &dyn Fn(&str) -> usize) -> Valuation {
        let mut w = Valuation::default();
        for (v, x) in self.vars.iter().zip(&self.vals) {
            w.vars.insert(v.name.clone(), x.unwrap_or(0));
        }
        for ((f, key), val) in &self.table {
            let name = &self.funs[*f];
            let n = arity(name).max(1);
            let args: Vec<String> = key[..n.min(2)].iter().map(|k| k.to_string()).collect();
            w.tables.entry(name.clone()).or_default().insert(args.join(","), *val);
        }
        w
    }
}

fn app_arity(f: &Formula) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    f.walk(&mut |e| {
        if let Expr::App(n, args) = e {
            m.insert(n.clone(), args.len());
        }
    });
    m
}

impl Checker {
    /// Searches for a valuation making `f` evaluate to `want`.
    /// `Err(())` means the budget ran out.
    pub fn find(&self, f: &Formula, want: bool) -> Result<Option<Valuation>, ()> {
        self.find_with_budget(f, want, self.budget).map(|(r, _)| r)
    }

    fn find_with_budget(&self, f: &Formula, want: bool, budget: u64) -> Result<(Option<Valuation>, u64), ()> {
        let mut s = Search::new(self, budget);
        let root = s.compile(f);
        let ar = app_arity(f);
        match s.find(&root, want) {
            Ok(true) => Ok((Some(s.witness(&|n| ar.get(n).copied().unwrap_or(1))), s.nodes)),
            Ok(false) => Ok((None, s.nodes)),
            Err(Exhausted) => Err(()),
        }
    }

    pub fn is_valid(&self, f: &Formula) -> TriState {
        match self.find(f, false) {
            Ok(None) => TriState::Valid,
            Ok(Some(w)) => TriState::Invalid(w),
            Err(()) => TriState::Unknown,
        }
    }

    /// `Some(true)` if satisfiable, `None` if the budget ran out.
    pub fn is_sat(&self, f: &Formula) -> Option<bool> {
        self.find(f, true).ok().map(|w| w.is_some())
    }

    pub fn implies(&self, a: &Formula, b: &Formula) -> TriState {
        self.is_valid(&Expr::implies(a.clone(), b.clone()))
    }

    pub fn equivalent(&self, a: &Formula, b: &Formula) -> TriState {
        self.is_valid(&Expr::And(vec![
            Expr::implies(a.clone(), b.clone()),
            Expr::implies(b.clone(), a.clone()),
        ]))
    }

    /// `{pre} s {post}`.
    pub fn hoare_valid(&self, pre: &Formula, s: &EdgeStmt, post: &Formula) -> TriState {
        let avoid = pre.vars().into_iter().map(|v| v.name).collect();
        self.implies(pre, &wp_avoiding(s, post, &avoid))
    }

    /// Whether `phi` equals some and/or combination of members of `set`.
    pub fn covers(&self, phi: &Formula, set: &[Formula]) -> bool {
        let phi = normalize(phi);
        if matches!(phi, Expr::Bool(_)) {
            return true;
        }
        let set: Vec<Formula> = set.iter().map(normalize).collect();
        if built_from(&phi, &set) {
            return true;
        }
        // Predicates sharing no symbol with phi, directly or through other
        // members, cannot help express it.
        let syms = |f: &Formula| -> BTreeSet<String> {
            let mut s = BTreeSet::new();
            f.walk(&mut |e| match e {
                Expr::Var(v) => {
                    s.insert(format!("v:{}", v.name));
                }
                Expr::App(n, _) => {
                    s.insert(format!("f:{n}"));
                }
                _ => {}
            });
            s
        };
        let mut reach = syms(&phi);
        let mut chosen = vec![false; set.len()];
        loop {
            let mut grew = false;
            for (i, p) in set.iter().enumerate() {
                if chosen[i] || matches!(p, Expr::Bool(_)) {
                    continue;
                }
                let ps = syms(p);
                if !ps.is_disjoint(&reach) {
                    chosen[i] = true;
                    reach.extend(ps);
                    grew = true;
                }
            }
            if !grew {
                break;
            }
        }
        let preds: Vec<Formula> = set.iter().zip(&chosen).filter(|(_, c)| **c).map(|(p, _)| p.clone()).collect();
        let mut budget = self.budget;
        let mut rows: Vec<(Vec<bool>, bool)> = Vec::new();
        let mut prefix: Vec<Formula> = Vec::new();
        let mut bits: Vec<bool> = Vec::new();
        if self.realize(&preds, &phi, &mut prefix, &mut bits, &mut rows, &mut budget).is_err() {
            return false;
        }
        let (t, f): (Vec<_>, Vec<_>) = rows.into_iter().partition(|r| r.1);
        for (tv, _) in &t {
            for (fv, _) in &f {
                if tv.iter().zip(fv).all(|(a, b)| !*a || *b) {
                    return false;
                }
            }
        }
        true
    }

    fn realize(
        &self,
        preds: &[Formula],
        phi: &Formula,
        prefix: &mut Vec<Formula>,
        bits: &mut Vec<bool>,
        rows: &mut Vec<(Vec<bool>, bool)>,
        budget: &mut u64,
    ) -> Result<(), ()> {
        let k = bits.len();
        let (target, last) = if k < preds.len() { (&preds[k], false) } else { (phi, true) };
        for b in [true, false] {
            let lit = if b { target.clone() } else { Expr::not(target.clone()) };
            prefix.push(lit);
            let (found, used) = self.find_with_budget(&Expr::And(prefix.clone()), true, *budget)?;
            *budget = budget.saturating_sub(used);
            if *budget == 0 {
                return Err(());
            }
            if found.is_some() {
                if last {
                    rows.push((bits.clone(), b));
                } else {
                    bits.push(b);
                    self.realize(preds, phi, prefix, bits, rows, budget)?;
                    bits.pop();
                }
            }
            prefix.pop();
        }
        Ok(())
    }
}

/// Syntactic and/or tree over members of `set`.
fn built_from(phi: &Formula, set: &[Formula]) -> bool {
    set.contains(phi)
        || match phi {
            Expr::And(xs) | Expr::Or(xs) => xs.iter().all(|x| built_from(x, set)),
            _ => false,
        }
}
