mod common;

use lockweaver::lang::*;
use proptest::prelude::*;

use common::{bench, BENCHMARKS};

#[test]
fn compute_parses() {
    let lib = bench("compute");
    assert_eq!(lib.procs.len(), 1);
    assert_eq!(lib.globals.len(), 2);
    assert_eq!(lib.ufuns, vec![UfunSig { name: "f".into(), arity: 1 }]);
    let g = build_control_graph(&lib);
    let pc = &g.procs[0];
    assert!(g.succ(W).any(|e| e.dst == pc.entry && e.is_call()));
    assert!(g.succ(pc.exit).any(|e| e.dst == W && e.is_exit()));
    // The branch lowers to a pair of complementary assumes.
    let assumes: Vec<String> = g
        .edges
        .iter()
        .filter_map(|e| match &e.stmt {
            EdgeStmt::Assume(c) => Some(c.to_string()),
            _ => None,
        })
        .collect();
    assert_eq!(assumes.len(), 2);
}

#[test]
fn empty_library() {
    let lib = parse_library("globals {}").unwrap();
    assert!(lib.procs.is_empty());
    let g = build_control_graph(&lib);
    assert_eq!(g.vertex_count(), 1);
    assert!(g.edges.is_empty());
}

#[test]
fn locks_are_rejected_in_input() {
    let err = parse_library("globals { } proc P() { acquire(l); return 0; }").unwrap_err();
    assert!(matches!(err, LangError::LockInInput { .. }), "{err}");
    assert!(err.to_string().starts_with("locking statement in input"));
    assert!(parse_instrumented("globals { } proc P() { acquire(l); release(l); return 0; }").is_ok());
}

#[test]
fn declaration_errors() {
    let undeclared = parse_library("globals { x = 0; } proc P() { y = 1; return 0; }").unwrap_err();
    assert!(matches!(&undeclared, LangError::Undeclared { name, .. } if name == "y"), "{undeclared}");
    let dup = parse_library("globals { x = 0; x = 1; }").unwrap_err();
    assert!(matches!(&dup, LangError::Duplicate { name, .. } if name == "x"), "{dup}");
    let dup = parse_library("globals { } proc P() { return 0; } proc P() { return 1; }").unwrap_err();
    assert!(matches!(dup, LangError::Duplicate { .. }));
    let syntax = parse_library("globals { x = 0 }").unwrap_err();
    let LangError::Syntax { pos, .. } = syntax else { panic!("{syntax}") };
    assert_eq!((pos.line, pos.col), (1, 17));
}

#[test]
fn two_procedures_meet_at_the_quiescent_vertex() {
    let lib = parse_library("globals { x = 0; } proc A() { x = 1; return x; } proc B(v) { x = v; return 0; }").unwrap();
    let g = build_control_graph(&lib);
    assert_eq!(g.succ(W).count(), 2);
    assert_eq!(g.pred(W).count(), 2);
    let per_proc: usize = g.procs.iter().map(|p| p.vertices.len()).sum();
    assert_eq!(g.vertex_count(), per_proc + 1);
}

#[test]
fn two_state_assertions_and_labels() {
    let lib = bench("increment");
    let p = &lib.procs[0];
    assert_eq!(p.shadows, vec![Var::shadow("x")]);
    let g = build_control_graph(&lib);
    let c = g.vertex_by_name("c").unwrap();
    let e = g.succ(c).next().unwrap();
    assert!(matches!(&e.stmt, EdgeStmt::Assert2(f) if f.to_string() == "x == old(x) + 1"));
}

#[test]
fn benchmarks_round_trip() {
    for n in BENCHMARKS {
        let lib = bench(n);
        let text = print_library(&lib);
        assert_eq!(parse_library(&text).unwrap(), lib, "{n}");
    }
}

/// Every edge stays inside one procedure except the call and exit edges,
/// which are the only edges touching `w`.
fn check_graph(lib: &Library) {
    let g = build_control_graph(lib);
    let per_proc: usize = g.procs.iter().map(|p| p.vertices.len()).sum();
    assert_eq!(g.vertex_count(), per_proc + 1);
    for (i, pc) in g.procs.iter().enumerate() {
        assert_eq!(g.pred(pc.entry).count(), 1);
        assert_eq!(g.succ(pc.exit).count(), 1);
        assert!(g.pred(pc.entry).all(|e| e.src == W && e.is_call() && e.proc == i));
        assert!(g.succ(pc.exit).all(|e| e.dst == W && e.is_exit()));
    }
    for e in &g.edges {
        if e.src == W || e.dst == W {
            assert!(e.is_call() || e.is_exit());
        } else {
            assert_eq!(g.vertices[e.src].proc, g.vertices[e.dst].proc);
        }
    }
    // Every procedure vertex reaches its exit.
    for pc in &g.procs {
        for &v in &pc.vertices {
            let mut seen = vec![false; g.vertex_count()];
            let mut stack = vec![v];
            while let Some(u) = stack.pop() {
                if !std::mem::replace(&mut seen[u], true) && u != W {
                    stack.extend(g.succ(u).map(|e| e.dst));
                }
            }
            assert!(seen[pc.exit], "{} cannot reach the exit", g.vertices[v].name);
        }
    }
}

fn expr() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![
        Just("x".to_string()),
        Just("y".to_string()),
        Just("t".to_string()),
        Just("a".to_string()),
        (-3i64..=3).prop_map(|n| n.to_string()),
    ];
    leaf.prop_recursive(2, 6, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(l, r)| format!("{l} + {r}")),
            (inner.clone(), inner.clone()).prop_map(|(l, r)| format!("{l} - ({r})")),
            inner.prop_map(|e| format!("f({e})")),
        ]
    })
}

fn cond() -> impl Strategy<Value = String> {
    let atom = (expr(), prop::sample::select(vec!["==", "!=", "<", "<=", ">", ">="]), expr())
        .prop_map(|(l, op, r)| format!("{l} {op} {r}"));
    atom.prop_recursive(1, 4, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(l, r)| format!("({l}) && ({r})")),
            (inner.clone(), inner.clone()).prop_map(|(l, r)| format!("({l}) || ({r})")),
            inner.prop_map(|c| format!("!({c})")),
        ]
    })
}

fn stmts() -> impl Strategy<Value = String> {
    let simple = prop_oneof![
        Just("skip;".to_string()),
        expr().prop_map(|e| format!("t = {e};")),
        expr().prop_map(|e| format!("x = {e};")),
        Just("t = *;".to_string()),
        cond().prop_map(|c| format!("assert {c};")),
    ];
    let block = prop::collection::vec(simple, 0..4).prop_map(|v| v.join(" "));
    block.prop_recursive(2, 12, 3, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("{a} {b}")),
            (cond(), inner.clone(), inner.clone()).prop_map(|(c, a, b)| format!("if ({c}) {{ {a} }} else {{ {b} }}")),
            (cond(), inner).prop_map(|(c, a)| format!("if ({c}) {{ {a} }}")),
        ]
    })
}

fn library() -> impl Strategy<Value = String> {
    (-2i64..=2, prop::collection::vec((stmts(), expr()), 0..3)).prop_map(|(init, procs)| {
        let mut src = format!("ufun f/1;\nglobals {{ x = {init}; y = f(0); }}\n");
        for (i, (body, ret)) in procs.into_iter().enumerate() {
            src.push_str(&format!("proc P{i}(a) {{ int t; {body} return {ret}; }}\n"));
        }
        src
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn print_then_parse_is_identity(src in library()) {
        let lib = parse_library(&src).unwrap();
        let text = print_library(&lib);
        prop_assert_eq!(parse_library(&text).unwrap(), lib.clone());
        prop_assert_eq!(print_library(&parse_library(&text).unwrap()), text);
        check_graph(&lib);
    }
}

#[test]
fn basis_and_seed_annotations() {
    let lib = parse_library(
        "globals { x = 0; } proc P() { int t; t = x; a: return t; }
         @basis(a) { t == x; x > 0; }
         @seed { t == x; }",
    )
    .unwrap();
    let basis = &lib.annotations.basis[&PointRef::Label("a".into())];
    assert_eq!(basis.iter().map(|f| f.to_string()).collect::<Vec<_>>(), ["t == x", "x > 0"]);
    assert_eq!(lib.annotations.seeds.len(), 1);
    assert_eq!(parse_library(&print_library(&lib)).unwrap(), lib);
}
