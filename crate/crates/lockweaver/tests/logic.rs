use lockweaver::lang::*;
use lockweaver::logic::*;

fn lib() -> Library {
    parse_library(
        "ufun f/1; globals { lastNum = 0; lastRes = f(0); x = 0; y = 0; }
         proc Compute(num) { int res; return res; }",
    )
    .unwrap()
}

fn p(s: &str) -> Formula {
    parse_formula(s, &lib(), Some("Compute")).unwrap()
}

#[test]
fn wp_examples() {
    let l = lib();
    let x = Var::global("x");
    let s = EdgeStmt::Assign(x.clone(), Expr::add(Expr::Var(x), Expr::Int(1)));
    assert_eq!(wp(&s, &p("x == 5")), p("x + 1 == 5"));
    assert_eq!(wp(&EdgeStmt::Skip, &p("x == 5")), p("x == 5"));
    let s = EdgeStmt::Assign(Var::global("lastRes"), Expr::Var(Var::local("res")));
    assert_eq!(wp(&s, &p("lastRes == f(num')")), p("res == f(num')"));
    let _ = l;
}

#[test]
fn rename_examples() {
    assert_eq!(rename_locals(&p("lastRes == f(num)")), p("lastRes == f(num')"));
    assert_eq!(rename_locals(&p("x == 0")), p("x == 0"));
    assert_eq!(rename_locals(&p("num < num")), p("num' < num'"));
}

#[test]
fn validity_examples() {
    let ck = Checker::default();
    assert_eq!(ck.is_valid(&p("x == x")), TriState::Valid);
    match ck.is_valid(&p("x == 0")) {
        TriState::Invalid(w) => assert_eq!(w.vars["x"], 1),
        other => panic!("{other:?}"),
    }
    assert!(matches!(
        ck.is_valid(&p("res == f(num) && lastNum == num && lastRes == f(num') ==> res == f(num')")),
        TriState::Invalid(_)
    ));
    assert_eq!(
        ck.hoare_valid(&p("lastNum == num && lastRes == f(lastNum)"), &EdgeStmt::Skip, &p("lastRes == f(num)")),
        TriState::Valid
    );
    assert!(matches!(
        ck.hoare_valid(
            &p("res == f(num) && lastNum == num && lastRes == f(num')"),
            &EdgeStmt::Assign(Var::global("lastRes"), Expr::Var(Var::local("res"))),
            &p("lastRes == f(num')")
        ),
        TriState::Invalid(_)
    ));
}

#[test]
fn covers_examples() {
    let ck = Checker::default();
    assert!(ck.covers(&p("x >= y"), &[p("x >= y")]));
    assert!(ck.covers(&p("x == 0"), &[p("x >= 0"), p("x <= 0")]));
    assert!(!ck.covers(&p("x == 0"), &[p("x >= 1")]));
}

#[test]
fn normal_forms() {
    assert_eq!(normalize(&p("0 < x")).to_string(), "x > 0");
    assert_eq!(normalize(&p("y <= x")).to_string(), "x >= y");
    assert_eq!(normalize(&p("!(lastNum == num)")).to_string(), "lastNum != num");
    assert_eq!(normalize(&p("x + 1 == 5")).to_string(), "x == 4");
    assert_eq!(normalize(&p("$ret == x + 2")).to_string(), "x == $ret - 2");
    assert_eq!(family_key(&p("$ret == x + 2")), family_key(&p("$ret == x")));
}

mod common;

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

/// Same shapes as the memoized-compute triples, over the oracle's variables.
fn q(s: &str) -> Formula {
    let l = parse_library("ufun f/1; globals { x = 0; y = 0; } proc P() { int t; return t; }").unwrap();
    parse_formula(s, &l, Some("P")).unwrap()
}

#[test]
fn known_triples_agree_with_enumeration() {
    let ck = Checker { bound: 2, budget: 10_000_000 };
    let cases = [
        ("x == y && t == f(x)", EdgeStmt::Skip, "t == f(y)", true),
        ("true", EdgeStmt::Assign(Var::global("x"), Expr::Int(1)), "x == 1", true),
        ("x >= 0", EdgeStmt::Assign(Var::global("x"), Expr::add(Expr::Var(Var::global("x")), Expr::Int(1))), "x >= 0", true),
        ("t == f(y) && x == y", EdgeStmt::Assign(Var::global("x"), Expr::Var(Var::local("t"))), "x == f(y)", true),
        ("t == f(y)", EdgeStmt::Assign(Var::global("x"), Expr::Var(Var::local("t"))), "x == y", false),
    ];
    for (pre, s, post, expect) in cases {
        let (pre, post) = (q(pre), q(post));
        assert_eq!(common::brute_hoare(&pre, &s, &post, 2), expect, "{pre} {s} {post}");
        assert_eq!(ck.hoare_valid(&pre, &s, &post).is_valid(), expect, "{pre} {s} {post}");
    }
}

#[test]
fn covers_uses_positive_combinations_only() {
    let ck = Checker::default();
    // x != 0 is the negation of a member, not a positive combination.
    assert!(!ck.covers(&p("x != 0"), &[p("x == 0")]));
    assert!(ck.covers(&p("x >= 0 || y >= 0"), &[p("x >= 0"), p("y >= 0")]));
    assert!(ck.covers(&p("true"), &[]));
}

fn table() -> impl Strategy<Value = BTreeMap<i64, i64>> {
    prop::collection::vec(-2i64..=2, 7).prop_map(|v| (-3..=3).zip(v).collect())
}

fn state() -> impl Strategy<Value = BTreeMap<Var, i64>> {
    prop::collection::vec(-2i64..=2, 3).prop_map(|v| common::vars().into_iter().zip(v).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    /// σ ⊨ wp(s, φ) iff the successor of σ under s satisfies φ.
    #[test]
    fn wp_is_sound_on_finite_models(
        phi in common::formula_strategy(),
        s in common::stmt_strategy(),
        st in state(),
        f in table(),
    ) {
        let next = match &s {
            EdgeStmt::Assign(v, e) => {
                let mut n = st.clone();
                let Some(val) = common::eval_term(e, &st, &f) else { return Ok(()) };
                n.insert(v.clone(), val);
                n
            }
            EdgeStmt::Skip | EdgeStmt::Assert(_) => st.clone(),
            _ => return Ok(()),
        };
        let pre = common::eval(&wp(&s, &phi), &st, &f);
        let post = common::eval(&phi, &next, &f);
        if let (Some(a), Some(b)) = (pre, post) {
            prop_assert_eq!(a, b);
        }
    }

    /// Valid and Invalid answers agree with enumeration over [-2, 2].
    #[test]
    fn validity_agrees_with_enumeration(phi in common::formula_strategy()) {
        let ck = Checker { bound: 2, budget: 10_000_000 };
        match ck.is_valid(&phi) {
            TriState::Valid => prop_assert!(common::brute_valid(&phi, 2)),
            TriState::Invalid(_) => prop_assert!(!common::brute_valid(&phi, 2)),
            TriState::Unknown => {}
        }
    }

    #[test]
    fn rename_is_idempotent_and_keeps_globals(phi in common::formula_strategy()) {
        let once = rename_locals(&phi);
        prop_assert_eq!(rename_locals(&once), once.clone());
        let globals = |f: &Formula| f.vars().into_iter().filter(|v| v.kind == VarKind::Global).collect::<BTreeSet<_>>();
        prop_assert_eq!(globals(&once), globals(&phi));
        prop_assert!(!once.mentions(&|v| matches!(v.kind, VarKind::Local | VarKind::Param)));
    }

    #[test]
    fn normalize_is_idempotent_and_equivalent(phi in common::formula_strategy()) {
        let n = normalize(&phi);
        prop_assert_eq!(normalize(&n), n.clone());
        let both = Expr::And(vec![Expr::implies(phi.clone(), n.clone()), Expr::implies(n, phi)]);
        prop_assert!(common::brute_valid(&both, 2));
    }
}
