mod common;

use std::collections::{BTreeMap, BTreeSet};

use lockweaver::lang::{build_control_graph, parse_library, EdgeStmt, Library, W};
use lockweaver::lin::synthesize_linearizable;
use lockweaver::logic::Checker;
use lockweaver::mc::{explore, Category, ClientSpec, ExploreOptions, Invocation, Table};
use lockweaver::synth::*;
use proptest::prelude::*;

use common::{bench, read};

fn plans() -> Vec<(String, Library, LockPlan)> {
    let ck = Checker::default();
    let mut out = Vec::new();
    for n in common::BENCHMARKS {
        let s = synthesize(&bench(n), &ck).unwrap();
        out.push((format!("{n}/plain"), s.output.lib.clone(), s.plan));
        let s = synthesize_linearizable(&bench(n), &ck).unwrap();
        out.push((format!("{n}/lin"), s.output.lib.clone(), s.plan));
    }
    out
}

#[test]
fn plain_outputs_match_goldens() {
    let ck = Checker::default();
    for n in ["compute", "increment", "retval"] {
        let s = synthesize(&bench(n), &ck).unwrap();
        assert_eq!(s.output.source(), read(&format!("benchmarks/golden/{n}.instr.lcl")), "{n}");
    }
    let s = synthesize(&bench("compute"), &ck).unwrap();
    let golden: serde_json::Value = serde_json::from_str(&read("benchmarks/golden/compute.synth.json")).unwrap();
    assert_eq!(sidecar_json(&s.graph, &s.plan, &s.output.provenance), golden);
}

#[test]
fn compute_plan() {
    let s = synthesize(&bench("compute"), &Checker::default()).unwrap();
    let members: Vec<&str> = s.plan.locks.iter().map(|l| l.members[0].as_str()).collect();
    assert_eq!(members, ["lastNum == num'", "lastRes == f(lastNum)", "lastRes == f(num')", "lastRes == res'"]);
    // One lock survives; the rest only ever ride along with it.
    assert_eq!(s.plan.live, BTreeSet::from([0]));
    assert_eq!(s.plan.log[0], OptStep::NeverFalsified { family: "f(num') == res'".into() });
    assert!(s.plan.log[1..].iter().all(|st| matches!(st, OptStep::Dominated { by: 0, .. })));
}

#[test]
fn mutually_blocking_families_share_a_lock() {
    let s = synthesize(&bench("average"), &Checker::default()).unwrap();
    let l0 = &s.plan.locks[0];
    assert_eq!(l0.members, ["avg == mean(sum, cnt)", "cnt == c'", "sum + v' == s'"]);
    assert_eq!(s.plan.live, BTreeSet::from([0]));
}

#[test]
fn never_falsified_predicates_get_no_lock() {
    let lib = parse_library(
        "globals { k = 3; }
         proc Get() { int t; t = k; a: assert t == k; b: return t; }
         @inv(quiescent, Get.entry, Get.exit) { true }
         @inv(a, b) { t == k }",
    )
    .unwrap();
    let s = synthesize(&lib, &Checker::default()).unwrap();
    assert!(s.plan.live.is_empty());
    assert_eq!(s.plan.log, vec![OptStep::NeverFalsified { family: "k == t'".into() }]);
    assert!(!s.output.source().contains("acquire"));
}

#[test]
fn ranks_permute_and_members_partition() {
    for (name, _, plan) in plans() {
        let ranks: BTreeSet<usize> = plan.locks.iter().map(|l| l.rank).collect();
        assert_eq!(ranks, (0..plan.locks.len()).collect(), "{name}");
        let mut seen = BTreeSet::new();
        for l in &plan.locks {
            for m in &l.members {
                assert!(seen.insert(m.clone()), "{name}: {m} in two locks");
                assert_eq!(plan.lm[m], l.id, "{name}");
            }
        }
        let idle: BTreeSet<String> = plan
            .log
            .iter()
            .filter_map(|s| match s {
                OptStep::NeverFalsified { family } => Some(family.clone()),
                _ => None,
            })
            .collect();
        for p in &plan.r {
            let k = lock_key(p);
            assert!(plan.lm.contains_key(&k) != idle.contains(&k), "{name}: {p}");
        }
    }
}

#[test]
fn edge_sets_are_disjoint() {
    for (name, _, plan) in plans() {
        for e in 0..plan.acq.len() {
            let (a, r, b) = (&plan.acq[e], &plan.rel[e], &plan.brk[e]);
            assert!(a.is_disjoint(r) && a.is_disjoint(b) && r.is_disjoint(b), "{name}: edge {e}");
        }
    }
}

/// Walks the woven graph and checks that every acquire takes a lock ranked
/// above everything already held.
fn check_rank_order(lib: &Library, plan: &LockPlan) -> Result<(), String> {
    let rank: BTreeMap<&str, usize> = plan.locks.iter().map(|l| (l.name.as_str(), l.rank)).collect();
    let g = build_control_graph(lib);
    let mut held: Vec<Option<BTreeSet<usize>>> = vec![None; g.vertex_count()];
    held[W] = Some(BTreeSet::new());
    for u in g.topo_order() {
        let cur = held[u].clone().unwrap_or_default();
        for e in g.succ(u) {
            let mut s = cur.clone();
            match &e.stmt {
                EdgeStmt::Acquire(l) => {
                    let r = rank[l.as_str()];
                    if s.last().is_some_and(|&m| m >= r) {
                        return Err(format!("{} acquired above rank {:?}", l, s.last()));
                    }
                    s.insert(r);
                }
                EdgeStmt::Release(l) => {
                    s.remove(&rank[l.as_str()]);
                }
                _ => {}
            }
            if e.dst != W {
                held[e.dst] = Some(s);
            }
        }
    }
    Ok(())
}

#[test]
fn woven_outputs_are_balanced_and_rank_ordered() {
    for (name, lib, plan) in plans() {
        check_lock_balance(&lib).unwrap_or_else(|e| panic!("{name}: {e}"));
        check_rank_order(&lib, &plan).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn imbalance_is_reported() {
    let cases = [
        ("globals { } proc P() { acquire(l0); return 0; }", "locks held at return"),
        ("globals { } proc P() { release(l0); return 0; }", "release of unheld l0"),
        ("globals { } proc P() { acquire(l0); acquire(l0); release(l0); return 0; }", "re-acquire of l0"),
        ("globals { x = 0; } proc P() { if (x > 0) { acquire(l0); } release(l0); return 0; }", "paths disagree"),
    ];
    for (src, want) in cases {
        let lib = lockweaver::lang::parse_instrumented(src).unwrap();
        let err = check_lock_balance(&lib).unwrap_err().to_string();
        assert!(err.contains(want), "{src}: {err}");
    }
}

fn table(entries: &[(i64, i64)], default: i64) -> Table {
    Table { default, entries: entries.iter().map(|(k, v)| (k.to_string(), *v)).collect() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn synthesized_compute_is_safe_for_any_client(
        first in -4i64..=4,
        a in -4i64..=4,
        b in -4i64..=4,
        fa in -4i64..=4,
        fb in -4i64..=4,
        default in -4i64..=4,
    ) {
        let out = common::plain(&bench("compute"));
        let mut c = ClientSpec::new(vec![Invocation::new("Compute", &[a]), Invocation::new("Compute", &[b])]);
        c.prefix = vec![Invocation::new("Compute", &[first])];
        c.tables.insert("f".into(), table(&[(a, fa), (b, fb)], default));
        let v = explore(&out, &c, ExploreOptions::default()).unwrap();
        prop_assert!(v.violations.is_empty(), "{}", v.status);
        prop_assert!(v.exhaustive);
    }

    #[test]
    fn synthesized_average_is_safe_for_any_client(x in -2i64..=2, y in -2i64..=2, seed in -4i64..=4) {
        let out = common::plain(&bench("average"));
        let c = ClientSpec::new(vec![Invocation::new("Add", &[x]), Invocation::new("Add", &[y]), Invocation::new("Average", &[])]);
        let mut c = c;
        c.tables.insert("mean".into(), table(&[], seed));
        let v = explore(&out, &c, ExploreOptions::default()).unwrap();
        prop_assert_eq!(v.count(Category::AssertViolation), 0, "{}", v.status);
        prop_assert_eq!(v.count(Category::Deadlock), 0);
        prop_assert_eq!(v.count(Category::LockMisuse), 0);
    }
}
