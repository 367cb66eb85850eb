mod common;

use lockweaver::lang::*;
use lockweaver::logic::*;
use lockweaver::proof::*;

use common::{bench, formula};

fn annotated(lib: &Library) -> (ControlGraph, ProofAnnotation) {
    let g = build_control_graph(lib);
    let ann = annotation_from_library(lib, &g, &Checker::default()).unwrap();
    (g, ann)
}

fn with_inv(lib: &Library, label: &str, src: &str) -> Library {
    let mut m = lib.clone();
    let pt = PointRef::Label(label.into());
    let proc = lib.procs[0].name.clone();
    m.annotations.inv.insert(pt, formula(lib, Some(&proc), src));
    m
}

fn names(fs: &[Formula]) -> Vec<String> {
    fs.iter().map(|f| f.to_string()).collect()
}

#[test]
fn compute_proof_and_obligations() {
    let ck = Checker::default();
    let lib = bench("compute");
    let (g, ann) = annotated(&lib);
    assert!(check_proof(&lib, &g, &ann, &ck).accepted());
    assert!(check_positive_basis(&g, &ann, &ck).accepted());
    assert!(check_obligations(&lib, &g, &ann, &ck).accepted());
    let om: Vec<(String, Vec<String>)> = (0..g.vertex_count())
        .filter(|&v| !ann.om[v].is_empty())
        .map(|v| (g.vertices[v].name.clone(), names(&ann.om[v])))
        .collect();
    assert_eq!(om, vec![("z".to_string(), vec!["lastRes == f(lastNum)".to_string()])]);
    assert_eq!(library_invariants(&g, &ann).unwrap(), vec![formula(&lib, None, "lastRes == f(lastNum)")]);
}

#[test]
fn dropping_the_asserted_conjunct_is_rejected_at_the_assert() {
    let ck = Checker::default();
    let lib = bench("compute");
    let m = with_inv(&lib, "r", "lastNum == num && lastRes == res");
    let (g, ann) = annotated(&m);
    let rep = check_proof(&m, &g, &ann, &ck);
    let assert_b: Vec<_> = rep.violations.iter().filter(|v| v.rule == Rule::AssertB).collect();
    assert_eq!(assert_b.len(), 1, "{rep:?}");
    assert!(assert_b[0].witness.is_some());
    assert!(assert_b[0].detail.starts_with("r -> a [assert res == f(num)]"), "{}", assert_b[0].detail);
}

#[test]
fn weakening_a_branch_breaks_the_hoare_triple_into_the_join() {
    let ck = Checker::default();
    let lib = bench("compute");
    let m = with_inv(&lib, "x", "lastNum == num");
    let (g, ann) = annotated(&m);
    let rep = check_proof(&m, &g, &ann, &ck);
    assert!(!rep.accepted());
    let v = &rep.violations[0];
    assert_eq!(v.rule, Rule::HoareA);
    let Site::Edge(e) = v.site else { panic!("{v:?}") };
    assert_eq!(g.vertices[g.edges[e].src].name, "x");
    // The witness breaks the memo: lastRes differs from f(num).
    let w = v.witness.as_ref().unwrap();
    let f = &w.tables["f"];
    let num = w.vars["num"];
    assert_ne!(Some(&w.vars["lastRes"]), f.get(&num.to_string()), "{w:?}");
}

#[test]
fn initial_state_must_satisfy_the_quiescent_invariant() {
    let ck = Checker::default();
    let lib = bench("compute");
    let mut m = lib.clone();
    m.annotations.inv.insert(PointRef::Quiescent, formula(&lib, None, "lastNum == 1"));
    let (g, ann) = annotated(&m);
    let rep = check_proof(&m, &g, &ann, &ck);
    assert!(rep.violations.iter().any(|v| v.rule == Rule::EntryExit && v.site == Site::Vertex(W)), "{rep:?}");
}

const NO_ASSERTS: &str = "globals { x = 0; } proc Inc() { x = x + 1; return x; }";

#[test]
fn trivial_proof_is_vacuous_without_assertions() {
    let ck = Checker::default();
    let lib = parse_library(NO_ASSERTS).unwrap();
    let (g, ann) = annotated(&lib);
    assert_eq!(ann, ProofAnnotation::trivial(&g));
    assert!(check_proof(&lib, &g, &ann, &ck).accepted());

    let lib = bench("compute");
    let g = build_control_graph(&lib);
    let rep = check_proof(&lib, &g, &ProofAnnotation::trivial(&g), &ck);
    assert_eq!(rep.violations.iter().map(|v| v.rule).collect::<Vec<_>>(), vec![Rule::AssertB]);
}

#[test]
fn basis_must_cover_the_invariant_positively() {
    let ck = Checker::default();
    let lib = bench("compute");
    let (g, mut ann) = annotated(&lib);
    let x = g.vertex_by_name("x").unwrap();
    ann.pm[x] = vec![formula(&lib, Some("Compute"), "lastNum != num"), formula(&lib, Some("Compute"), "lastRes == f(num)")];
    let rep = check_positive_basis(&g, &ann, &ck);
    assert_eq!(rep.violations.len(), 1);
    assert_eq!(rep.violations[0].rule, Rule::BasisPositivity);
    assert_eq!(rep.violations[0].site, Site::Vertex(x));

    ann.pm[x] = leaves(&ann.mu[x]);
    assert!(check_positive_basis(&g, &ann, &ck).accepted());
}

#[test]
fn obligations_are_checked_on_both_rules() {
    let ck = Checker::default();
    let lib = bench("compute");
    let (g, mut ann) = annotated(&lib);
    let z = g.vertex_by_name("z").unwrap();
    ann.om[z].clear();
    let rep = check_obligations(&lib, &g, &ann, &ck);
    assert_eq!(rep.violations.iter().map(|v| v.rule).collect::<Vec<_>>(), vec![Rule::ObligationA]);

    // An obligation that is never discharged before the exit.
    let lib = parse_library(
        "globals { a = 0; b = 0; } proc P() { a = 1; r: return 0; }
         @inv(quiescent, P.entry) { a == b }
         @inv(r, P.exit) { true }",
    );
    let lib = lib.unwrap();
    let g = build_control_graph(&lib);
    let err = annotation_from_library(&lib, &g, &ck).unwrap_err();
    assert_eq!(err, ProofError::NotReestablished { pred: "a == b".into(), proc: "P".into() });
}

#[test]
fn annotation_errors() {
    let ck = Checker::default();
    let lib = bench("compute");
    let mut m = lib.clone();
    m.annotations.inv.insert(PointRef::Entry("Compute".into()), formula(&lib, None, "lastRes == f(lastNum) || lastNum == 0"));
    let g = build_control_graph(&m);
    assert_eq!(annotation_from_library(&m, &g, &ck).unwrap_err(), ProofError::DisjunctiveEntry("Compute".into()));

    let mut m = lib.clone();
    m.annotations.inv.remove(&PointRef::Label("e".into()));
    let g = build_control_graph(&m);
    assert_eq!(annotation_from_library(&m, &g, &ck).unwrap_err(), ProofError::MissingInvariant("e".into()));

    let mut m = lib.clone();
    m.annotations.inv.insert(PointRef::Label("nowhere".into()), Expr::Bool(true));
    let g = build_control_graph(&m);
    assert_eq!(annotation_from_library(&m, &g, &ck).unwrap_err(), ProofError::UnknownPoint("nowhere".into()));
}

#[test]
fn falsification_and_establishment() {
    let ck = Checker::default();
    let lib = bench("compute");
    let (g, ann) = annotated(&lib);
    let inv = formula(&lib, None, "lastRes == f(lastNum)");
    let edge_from = |name: &str| g.succ(g.vertex_by_name(name).unwrap()).next().unwrap();
    let (y, z, e) = (edge_from("y"), edge_from("z"), edge_from("e"));
    assert!(may_falsify(&lib, &ann.mu[y.src], y, &inv, &ck));
    assert!(!may_falsify(&lib, &ann.mu[e.src], e, &inv, &ck));
    // lastRes = res with res == f(num) and lastNum == num restores it.
    assert!(!may_falsify(&lib, &ann.mu[z.src], z, &inv, &ck));
    assert!(establishes(&lib, &ann.mu[z.src], z, &inv, &ck));
    assert!(!establishes(&lib, &Expr::Bool(true), z, &inv, &ck));
}

#[test]
fn inferred_proofs_are_accepted() {
    let ck = Checker::default();
    for name in common::BENCHMARKS {
        let lib = bench(name);
        let g = build_control_graph(&lib);
        let seeds: Vec<Formula> = lib.annotations.inv.values().flat_map(leaves).collect();
        let ann = infer_proof(&lib, &g, &seeds, &ck).unwrap();
        assert!(check_proof(&lib, &g, &ann, &ck).accepted(), "{name}");
        let t = std::time::Instant::now();
        let rep = check_positive_basis(&g, &ann, &ck);
        assert!(rep.accepted(), "{name}: {rep:?}");
        let rep = check_obligations(&lib, &g, &ann, &ck);
        assert!(rep.accepted(), "{name}: {rep:?}");
        assert!(t.elapsed().as_secs() < 5, "{name}: checks took {:?}", t.elapsed());
    }
}

#[test]
fn inference_on_increment_tracks_the_snapshot() {
    let ck = Checker::default();
    let lib = bench("increment");
    let g = build_control_graph(&lib);
    let seeds = vec![
        formula(&lib, Some("Increment"), "x == old(x)"),
        formula(&lib, Some("Increment"), "tmp == old(x)"),
        formula(&lib, Some("Increment"), "tmp == old(x) + 1"),
        formula(&lib, Some("Increment"), "x == old(x) + 1"),
    ];
    let ann = infer_proof(&lib, &g, &seeds, &ck).unwrap();
    let c = g.vertex_by_name("c").unwrap();
    assert!(ck.implies(&ann.mu[c], &formula(&lib, Some("Increment"), "x == old(x) + 1")).is_valid());
    assert!(check_proof(&lib, &g, &ann, &ck).accepted());

    // Without the snapshot facts nothing supports the two-state assertion.
    let err = infer_proof(&lib, &g, &[], &ck).unwrap_err();
    assert!(matches!(err, ProofError::NotFound(_)), "{err}");
}
