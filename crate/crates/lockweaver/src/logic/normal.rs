//! Syntactic normal form: negation normal form over canonical linear
//! comparisons, with flattened, sorted and deduplicated connectives.

use std::collections::BTreeMap;

use crate::lang::{CmpOp, Expr, Formula, Var, VarKind};

/// A linear combination of non-arithmetic atoms plus a constant.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Linear {
    pub terms: BTreeMap<AtomKey, i64>,
    pub constant: i64,
}

/// Orders atoms: program variables first, then applications, then logical
/// variables; ties by printed text.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct AtomKey {
    class: u8,
    text: String,
    pub atom: Expr,
}

impl AtomKey {
    fn new(atom: Expr) -> AtomKey {
        let class = match &atom {
            Expr::Var(v) if v.kind == VarKind::Logical => 2,
            Expr::Var(_) => 0,
            _ => 1,
        };
        AtomKey { class, text: atom.to_string(), atom }
    }
}

impl Linear {
    fn add_scaled(&mut self, other: Linear, k: i64) {
        for (a, c) in other.terms {
            *self.terms.entry(a).or_insert(0) += c * k;
        }
        self.terms.retain(|_, c| *c != 0);
        self.constant = self.constant.wrapping_add(other.constant.wrapping_mul(k));
    }

    fn negated(mut self) -> Linear {
        for c in self.terms.values_mut() {
            *c = -*c;
        }
        self.constant = self.constant.wrapping_neg();
        self
    }

    /// Canonical term rendering.
    pub fn to_expr(&self) -> Expr {
        let mut acc: Option<Expr> = None;
        for (k, &c) in &self.terms {
            for _ in 0..c.unsigned_abs() {
                acc = Some(match acc {
                    None if c > 0 => k.atom.clone(),
                    None => Expr::Neg(Box::new(k.atom.clone())),
                    Some(e) if c > 0 => Expr::add(e, k.atom.clone()),
                    Some(e) => Expr::sub(e, k.atom.clone()),
                });
            }
        }
        match (acc, self.constant) {
            (None, k) => Expr::Int(k),
            (Some(e), 0) => e,
            (Some(e), k) if k > 0 => Expr::add(e, Expr::Int(k)),
            (Some(e), k) => Expr::sub(e, Expr::Int(k.wrapping_neg())),
        }
    }

    pub fn mentions_logical_unit(&self) -> bool {
        self.terms
            .iter()
            .any(|(k, c)| c.abs() == 1 && matches!(&k.atom, Expr::Var(v) if v.kind == VarKind::Logical))
    }
}

/// Linear form of an integer-valued expression.
pub fn linearize(e: &Expr) -> Linear {
    match e {
        Expr::Int(n) => Linear { terms: BTreeMap::new(), constant: *n },
        Expr::Bool(b) => Linear { terms: BTreeMap::new(), constant: *b as i64 },
        Expr::Neg(a) => linearize(a).negated(),
        Expr::Add(a, b) => {
            let mut l = linearize(a);
            l.add_scaled(linearize(b), 1);
            l
        }
        Expr::Sub(a, b) => {
            let mut l = linearize(a);
            l.add_scaled(linearize(b), -1);
            l
        }
        Expr::Var(_) => atom(e.clone()),
        Expr::App(f, args) => atom(Expr::App(f.clone(), args.iter().map(normalize_term).collect())),
        // A formula in integer position is an opaque 0/1 atom.
        Expr::Cmp(..) | Expr::Not(_) | Expr::And(_) | Expr::Or(_) => match normalize(e) {
            Expr::Bool(b) => Linear { terms: BTreeMap::new(), constant: b as i64 },
            f => atom(f),
        },
    }
}

fn atom(e: Expr) -> Linear {
    let mut terms = BTreeMap::new();
    terms.insert(AtomKey::new(e), 1);
    Linear { terms, constant: 0 }
}

pub fn normalize_term(e: &Expr) -> Expr {
    linearize(e).to_expr()
}

/// Canonical comparison `lhs op rhs` with the first atom on the left with a
/// positive coefficient and the constant on the right.
pub fn canonical_cmp(op: CmpOp, a: &Expr, b: &Expr) -> Formula {
    let mut l = linearize(a);
    l.add_scaled(linearize(b), -1);
    canonical_from_linear(op, l)
}

fn canonical_from_linear(mut op: CmpOp, mut l: Linear) -> Formula {
    let Some((_, &first)) = l.terms.iter().next() else {
        return Expr::Bool(op.eval(l.constant, 0));
    };
    if first < 0 {
        l = l.negated();
        op = op.flip();
    }
    let mut lhs = Linear::default();
    let mut rhs = Linear { terms: BTreeMap::new(), constant: l.constant.wrapping_neg() };
    for (k, c) in l.terms {
        if c > 0 {
            lhs.terms.insert(k, c);
        } else {
            rhs.terms.insert(k, -c);
        }
    }
    Expr::cmp(op, lhs.to_expr(), rhs.to_expr())
}

/// Normal form; idempotent.
pub fn normalize(f: &Formula) -> Formula {
    nnf(f, true)
}

fn nnf(f: &Formula, pos: bool) -> Formula {
    match f {
        Expr::Bool(b) => Expr::Bool(*b == pos),
        Expr::Not(a) => nnf(a, !pos),
        Expr::And(xs) | Expr::Or(xs) => {
            let conj = matches!(f, Expr::And(_)) == pos;
            let items = xs.iter().map(|x| nnf(x, pos)).collect();
            if conj {
                mk_and(items)
            } else {
                mk_or(items)
            }
        }
        Expr::Cmp(op, a, b) => {
            let op = if pos { *op } else { op.negate() };
            canonical_cmp(op, a, b)
        }
        _ => {
            let op = if pos { CmpOp::Ne } else { CmpOp::Eq };
            canonical_cmp(op, f, &Expr::Int(0))
        }
    }
}

fn junction(items: Vec<Formula>, conj: bool) -> Formula {
    let mut flat: Vec<(String, Formula)> = Vec::new();
    for it in items {
        let parts = match it {
            Expr::And(xs) if conj => xs,
            Expr::Or(xs) if !conj => xs,
            other => vec![other],
        };
        for p in parts {
            match p {
                // Absorbing constant.
                Expr::Bool(b) if b != conj => return Expr::Bool(b),
                Expr::Bool(_) => {}
                p => flat.push((p.to_string(), p)),
            }
        }
    }
    flat.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    flat.dedup_by(|a, b| a.1 == b.1);
    let xs: Vec<Formula> = flat.into_iter().map(|(_, f)| f).collect();
    if conj {
        Expr::and(xs)
    } else {
        Expr::or(xs)
    }
}

/// Flattened, sorted, deduplicated conjunction of already-normal formulas.
pub fn mk_and(items: Vec<Formula>) -> Formula {
    junction(items, true)
}

pub fn mk_or(items: Vec<Formula>) -> Formula {
    junction(items, false)
}

/// Negation of a normal formula, in normal form.
pub fn negate(f: &Formula) -> Formula {
    nnf(f, false)
}

/// True when no negation occurs outside atoms.
pub fn is_positive(f: &Formula) -> bool {
    match f {
        Expr::Not(_) => false,
        Expr::And(xs) | Expr::Or(xs) => xs.iter().all(is_positive),
        _ => true,
    }
}

/// Distinct atomic leaves of the normal form, in order.
pub fn leaves(f: &Formula) -> Vec<Formula> {
    fn go(f: &Formula, out: &mut Vec<Formula>) {
        match f {
            Expr::And(xs) | Expr::Or(xs) => xs.iter().for_each(|x| go(x, out)),
            Expr::Bool(_) => {}
            other => {
                if !out.contains(other) {
                    out.push(other.clone())
                }
            }
        }
    }
    let mut out = Vec::new();
    go(&normalize(f), &mut out);
    out
}

/// Key under which predicates that differ only by the constant offset of a
/// unit logical variable are identified (`x == w'` and `x == w' + 1`).
pub fn family_key(p: &Formula) -> Formula {
    let p = normalize(p);
    if let Expr::Cmp(op, a, b) = &p {
        let mut l = linearize(a);
        l.add_scaled(linearize(b), -1);
        if l.mentions_logical_unit() {
            l.constant = 0;
            return canonical_from_linear(*op, l);
        }
    }
    p
}

/// Variables of a formula restricted to one kind.
pub fn vars_of_kind(f: &Formula, kind: VarKind) -> Vec<Var> {
    f.vars().into_iter().filter(|v| v.kind == kind).collect()
}
