//! Shared helpers for the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use lockweaver::lang::{parse_formula, parse_instrumented, parse_library, CmpOp, EdgeStmt, Expr, Formula, Library, Var};
use lockweaver::lin::synthesize_linearizable;
use lockweaver::logic::Checker;
use lockweaver::mc::{ClientSpec, Invocation};
use lockweaver::synth::synthesize;
use proptest::prelude::*;
use proptest::strategy::ValueTree;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

pub const BENCHMARKS: [&str; 5] = ["compute", "increment", "retval", "reduce", "average"];

pub fn root() -> String {
    format!("{}/../..", env!("CARGO_MANIFEST_DIR"))
}

pub fn read(rel: &str) -> String {
    std::fs::read_to_string(format!("{}/{rel}", root())).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

pub fn bench(name: &str) -> Library {
    parse_library(&read(&format!("benchmarks/{name}.lcl"))).unwrap()
}

pub fn client(name: &str) -> ClientSpec {
    ClientSpec::from_json(&read(&format!("benchmarks/clients/{name}.json"))).unwrap()
}

pub fn threads(procs: &[&str]) -> ClientSpec {
    ClientSpec::new(procs.iter().map(|p| Invocation::new(p, &[])).collect())
}

pub fn formula(lib: &Library, proc: Option<&str>, s: &str) -> Formula {
    parse_formula(s, lib, proc).unwrap()
}

/// Plain synthesis output, reparsed from its printed text.
pub fn plain(lib: &Library) -> Library {
    parse_instrumented(&synthesize(lib, &Checker::default()).unwrap().output.source()).unwrap()
}

pub fn linearizable(lib: &Library) -> Library {
    parse_instrumented(&synthesize_linearizable(lib, &Checker::default()).unwrap().output.source()).unwrap()
}

// ---- random formulas and statements over x, y (globals) and t (local) ----

pub fn vars() -> Vec<Var> {
    vec![Var::global("x"), Var::global("y"), Var::local("t")]
}

fn var() -> impl Strategy<Value = Var> {
    prop::sample::select(vars())
}

pub fn term() -> impl Strategy<Value = Expr> {
    prop_oneof![
        var().prop_map(Expr::Var),
        (-2i64..=2).prop_map(Expr::Int),
        (var(), -1i64..=1).prop_map(|(v, c)| Expr::add(Expr::Var(v), Expr::Int(c))),
        var().prop_map(|v| Expr::App("f".into(), vec![Expr::Var(v)])),
    ]
}

fn op() -> impl Strategy<Value = CmpOp> {
    prop::sample::select(vec![CmpOp::Eq, CmpOp::Ne, CmpOp::Lt, CmpOp::Le, CmpOp::Gt, CmpOp::Ge])
}

pub fn atom() -> impl Strategy<Value = Formula> {
    (op(), term(), term()).prop_map(|(o, a, b)| Expr::cmp(o, a, b))
}

pub fn formula_strategy() -> impl Strategy<Value = Formula> {
    atom().prop_recursive(2, 8, 2, |inner| {
        prop_oneof![
            inner.clone().prop_map(Expr::not),
            prop::collection::vec(inner.clone(), 2).prop_map(Expr::And),
            prop::collection::vec(inner, 2).prop_map(Expr::Or),
        ]
    })
}

pub fn stmt_strategy() -> impl Strategy<Value = EdgeStmt> {
    prop_oneof![
        Just(EdgeStmt::Skip),
        (var(), term()).prop_map(|(v, e)| EdgeStmt::Assign(v, e)),
        var().prop_map(EdgeStmt::Havoc),
        atom().prop_map(EdgeStmt::Assume),
        atom().prop_map(EdgeStmt::Assert),
    ]
}

/// `n` (pre, statement, post) triples from a fixed seed.
pub fn random_triples(n: usize) -> Vec<(Formula, EdgeStmt, Formula)> {
    let rng = TestRng::from_seed(RngAlgorithm::ChaCha, &[7; 32]);
    let mut runner = TestRunner::new_with_rng(Config::default(), rng);
    let s = (formula_strategy(), stmt_strategy(), formula_strategy());
    (0..n).map(|_| s.new_tree(&mut runner).unwrap().current()).collect()
}

// ---- brute-force semantics, written independently of the crate ----

/// Evaluation blocked on a table entry for `f(arg)` not yet chosen.
struct Missing(i64);

type State = BTreeMap<Var, i64>;

fn int(e: &Expr, s: &State, f: &BTreeMap<i64, i64>) -> Result<i64, Missing> {
    Ok(match e {
        Expr::Int(n) => *n,
        Expr::Bool(b) => *b as i64,
        Expr::Var(v) => s[v],
        Expr::Neg(a) => -int(a, s, f)?,
        Expr::Add(a, b) => int(a, s, f)? + int(b, s, f)?,
        Expr::Sub(a, b) => int(a, s, f)? - int(b, s, f)?,
        Expr::App(_, args) => {
            let a = int(&args[0], s, f)?;
            *f.get(&a).ok_or(Missing(a))?
        }
        _ => boolean(e, s, f)? as i64,
    })
}

fn boolean(e: &Expr, s: &State, f: &BTreeMap<i64, i64>) -> Result<bool, Missing> {
    Ok(match e {
        Expr::Bool(b) => *b,
        Expr::Cmp(op, a, b) => {
            let (x, y) = (int(a, s, f)?, int(b, s, f)?);
            match op {
                CmpOp::Eq => x == y,
                CmpOp::Ne => x != y,
                CmpOp::Lt => x < y,
                CmpOp::Le => x <= y,
                CmpOp::Gt => x > y,
                CmpOp::Ge => x >= y,
            }
        }
        Expr::Not(a) => !boolean(a, s, f)?,
        Expr::And(xs) => {
            for x in xs {
                if !boolean(x, s, f)? {
                    return Ok(false);
                }
            }
            true
        }
        Expr::Or(xs) => {
            for x in xs {
                if boolean(x, s, f)? {
                    return Ok(true);
                }
            }
            false
        }
        _ => int(e, s, f)? != 0,
    })
}

/// Whether `check` holds for every table of `f` into `d`; only entries the
/// check actually reads are enumerated.
fn all_tables(d: &[i64], f: &mut BTreeMap<i64, i64>, check: &dyn Fn(&BTreeMap<i64, i64>) -> Result<bool, Missing>) -> bool {
    match check(f) {
        Ok(b) => b,
        Err(Missing(a)) => {
            for v in d {
                f.insert(a, *v);
                if !all_tables(d, f, check) {
                    f.remove(&a);
                    return false;
                }
            }
            f.remove(&a);
            true
        }
    }
}

fn states(d: &[i64]) -> Vec<State> {
    let mut out = vec![State::new()];
    for v in vars() {
        out = out
            .into_iter()
            .flat_map(|s| {
                let v = v.clone();
                d.iter().map(move |x| {
                    let mut s = s.clone();
                    s.insert(v.clone(), *x);
                    s
                })
            })
            .collect();
    }
    out
}

/// `{pre} s {post}` by enumeration of all states and tables over `[-b, b]`.
pub fn brute_hoare(pre: &Formula, s: &EdgeStmt, post: &Formula, b: i64) -> bool {
    let d: Vec<i64> = (-b..=b).collect();
    for st in states(&d) {
        let havoc: Vec<Option<i64>> = if matches!(s, EdgeStmt::Havoc(_)) { d.iter().copied().map(Some).collect() } else { vec![None] };
        for h in havoc {
            let check = |f: &BTreeMap<i64, i64>| -> Result<bool, Missing> {
                if !boolean(pre, &st, f)? {
                    return Ok(true);
                }
                let mut next = st.clone();
                match s {
                    EdgeStmt::Assign(v, e) => {
                        let val = int(e, &st, f)?;
                        next.insert(v.clone(), val);
                    }
                    EdgeStmt::Havoc(v) => {
                        next.insert(v.clone(), h.expect("havoc value"));
                    }
                    EdgeStmt::Assume(c) => {
                        if !boolean(c, &st, f)? {
                            return Ok(true);
                        }
                    }
                    _ => {}
                }
                boolean(post, &next, f)
            };
            if !all_tables(&d, &mut BTreeMap::new(), &check) {
                return false;
            }
        }
    }
    true
}

/// Validity of a formula over x, y, t by enumeration.
pub fn brute_valid(phi: &Formula, b: i64) -> bool {
    brute_hoare(&Expr::Bool(true), &EdgeStmt::Skip, phi, b)
}

/// Evaluates a formula in a total state with a total table.
pub fn eval(phi: &Formula, s: &BTreeMap<Var, i64>, f: &BTreeMap<i64, i64>) -> Option<bool> {
    boolean(phi, s, f).ok()
}

pub fn eval_term(e: &Expr, s: &BTreeMap<Var, i64>, f: &BTreeMap<i64, i64>) -> Option<i64> {
    int(e, s, f).ok()
}
