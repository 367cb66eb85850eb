mod common;

use std::collections::BTreeMap;

use lockweaver::lang::{parse_instrumented, Library};
use lockweaver::mc::*;
use proptest::prelude::*;

use common::{bench, client, linearizable, plain, read, threads};

fn table(entries: &[(&str, i64)], default: i64) -> Table {
    Table { default, entries: entries.iter().map(|(k, v)| (k.to_string(), *v)).collect() }
}

fn f_tables(entries: &[(&str, i64)]) -> Tables {
    BTreeMap::from([("f".to_string(), table(entries, 0))])
}

fn globals(pairs: &[(&str, i64)]) -> BTreeMap<String, i64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn lin() -> ExploreOptions {
    ExploreOptions { check_lin: true, check_lp_order: true, ..Default::default() }
}

#[test]
fn sequential_runs() {
    let lib = bench("compute");
    let five = Invocation::new("Compute", &[5]);
    let r = run_sequential(&lib, &[five.clone(), five], &f_tables(&[("5", 9)]), &BTreeMap::new(), 4, 60).unwrap();
    assert_eq!(r.returns, vec![vec![9], vec![9]]);
    assert_eq!(r.globals, globals(&[("lastNum", 5), ("lastRes", 9)]));

    // No invocations: the initial globals, with lastRes = f(0) from the table.
    let r = run_sequential(&lib, &[], &f_tables(&[("0", 3)]), &BTreeMap::new(), 4, 60).unwrap();
    assert_eq!(r.globals, globals(&[("lastNum", 0), ("lastRes", 3)]));
    assert!(r.returns.is_empty());

    let inc = Invocation::new("Increment", &[]);
    let r = run_sequential(&bench("increment"), &[inc.clone(), inc], &Tables::new(), &BTreeMap::new(), 4, 60).unwrap();
    assert_eq!(r.returns, vec![vec![1], vec![2]]);
    assert_eq!(r.globals, globals(&[("x", 2)]));
}

#[test]
fn sequential_errors() {
    let inc = Invocation::new("Increment", &[]);
    let err = run_sequential(&bench("increment"), &[inc.clone(), inc], &Tables::new(), &BTreeMap::new(), 4, 5).unwrap_err();
    assert_eq!(err, SeqError::DepthExceeded);
    let err = run_sequential(&bench("increment"), &[Invocation::new("Nope", &[])], &Tables::new(), &BTreeMap::new(), 4, 60)
        .unwrap_err();
    assert!(matches!(err, SeqError::Client { .. }), "{err}");
    let lib = parse_library_text("globals { x = 0; } proc P() { x = *; return x; }");
    let err = run_sequential(&lib, &[Invocation::new("P", &[])], &Tables::new(), &BTreeMap::new(), 4, 60).unwrap_err();
    assert!(matches!(err, SeqError::Nondeterministic { .. }), "{err}");
}

fn parse_library_text(src: &str) -> Library {
    lockweaver::lang::parse_library(src).unwrap()
}

#[test]
fn unsynchronized_increment_loses_updates() {
    let v = explore(&bench("increment"), &client("increment2"), ExploreOptions::default()).unwrap();
    assert!(v.exhaustive);
    let w = &v.violations[&Category::AssertViolation];
    assert_eq!(w.status, v.status);
    assert!(matches!(&w.status, Status::AssertViolation { site } if site.contains("Increment")));
}

#[test]
fn plain_increment_is_safe_but_not_linearizable() {
    let v = explore(&plain(&bench("increment")), &client("increment2"), lin()).unwrap();
    assert_eq!(v.count(Category::AssertViolation), 0);
    assert_eq!(v.final_values("x"), [1, 2].into());
    let w = &v.violations[&Category::NonLinearizable];
    assert_eq!(w.history.to_string(), "t0:Increment() t1:Increment() t0:ret(1) t1:ret(1)");
}

#[test]
fn linearizable_increment_with_three_threads() {
    let v = explore(&linearizable(&bench("increment")), &client("increment3"), lin()).unwrap();
    assert_eq!(v.status, Status::Ok);
    assert!(v.exhaustive);
    assert_eq!(v.final_values("x"), [3].into());
}

#[test]
fn compute_prefix_and_sweep() {
    let c = client("compute");
    assert_eq!(c.prefix, vec![Invocation::new("Compute", &[5])]);
    assert_eq!(c.sweep.len(), 3);
    let out = plain(&bench("compute"));
    for t in &c.sweep {
        let mut c = c.clone();
        c.tables = t.clone();
        let v = explore(&out, &c, ExploreOptions::default()).unwrap();
        assert_eq!(v.status, Status::Ok, "{t:?}");
    }
}

#[test]
fn abba_deadlocks_on_the_least_schedule() {
    let lib = parse_instrumented(&read("benchmarks/abba.instr.lcl")).unwrap();
    let v = explore(&lib, &client("abba"), ExploreOptions::default()).unwrap();
    let w = &v.violations[&Category::Deadlock];
    let sched: Vec<String> = w.schedule.iter().map(|s| s.to_string()).collect();
    assert_eq!(sched.join(" "), "t0 t1");
}

#[test]
fn reacquiring_a_held_lock_is_misuse() {
    let lib = parse_instrumented("globals { } proc P() { acquire(l0); acquire(l0); release(l0); return 0; }").unwrap();
    let v = explore(&lib, &threads(&["P"]), ExploreOptions::default()).unwrap();
    assert!(matches!(v.status, Status::LockMisuse { .. }), "{}", v.status);
    let lib = parse_instrumented("globals { } proc P() { release(l0); return 0; }").unwrap();
    let v = explore(&lib, &threads(&["P"]), ExploreOptions::default()).unwrap();
    assert!(matches!(v.status, Status::LockMisuse { .. }), "{}", v.status);
}

#[test]
fn witnesses_replay_exactly() {
    let abba = parse_instrumented(&read("benchmarks/abba.instr.lcl")).unwrap();
    let runs: Vec<(Library, ClientSpec, ExploreOptions)> = vec![
        (bench("increment"), client("increment2"), ExploreOptions::default()),
        (bench("compute"), client("compute"), ExploreOptions::default()),
        (plain(&bench("increment")), client("increment2"), lin()),
        (plain(&bench("retval")), client("retval"), lin()),
        (bench("average"), client("average"), ExploreOptions::default()),
        (abba, client("abba"), ExploreOptions::default()),
    ];
    let mut replayed = 0;
    for (lib, c, opts) in runs {
        let v = explore(&lib, &c, opts).unwrap();
        assert!(!v.violations.is_empty());
        for w in v.violations.values() {
            let r = replay(&lib, &c, &w.schedule, opts).unwrap();
            assert_eq!(r.status, w.status);
            assert_eq!(r.history, w.history);
            assert_eq!(r.trace.len(), w.schedule.len());
            replayed += 1;
        }
    }
    assert_eq!(replayed, 6);
}

#[test]
fn replay_rejects_infeasible_schedules() {
    let lib = bench("increment");
    let c = client("increment2");
    let bad = [Step { thread: 5, value: None }];
    assert!(matches!(replay(&lib, &c, &bad, ExploreOptions::default()), Err(McError::Replay { index: 0, .. })));
    let bad = [Step { thread: 0, value: Some(3) }];
    assert!(matches!(replay(&lib, &c, &bad, ExploreOptions::default()), Err(McError::Replay { index: 0, .. })));
}

#[test]
fn verdicts_do_not_depend_on_worker_count() {
    let run = |n: &str| {
        std::env::set_var("LOCKWEAVER_WORKERS", n);
        let a = explore(&plain(&bench("increment")), &client("increment3"), lin()).unwrap();
        let b = explore(&bench("compute"), &client("compute"), ExploreOptions::default()).unwrap();
        (a, b)
    };
    let one = run("1");
    let four = run("4");
    std::env::remove_var("LOCKWEAVER_WORKERS");
    assert_eq!(one, four);
}

#[test]
fn projection_holds_on_every_benchmark_client() {
    for (n, c) in [("increment", "increment3"), ("reduce", "reduce"), ("retval", "retval")] {
        let r = check_projection(&bench(n), &client(c), ExploreOptions::default()).unwrap();
        assert_eq!(r.mismatch, None, "{n}");
        assert!(r.states > 0);
    }
}

fn inv(proc: &str, thread: usize) -> HistEvent {
    HistEvent { kind: EventKind::Inv, thread, proc: proc.into(), values: vec![] }
}

fn res(proc: &str, thread: usize, v: &[i64]) -> HistEvent {
    HistEvent { kind: EventKind::Res, thread, proc: proc.into(), values: v.to_vec() }
}

#[test]
fn linearizability_examples() {
    let lib = bench("increment");
    let ok = |events: Vec<HistEvent>, last: Option<&[i64]>| check_linearizable(&lib, &History { events }, &Tables::new(), 4, &[0], last);
    let i = "Increment";
    assert!(ok(vec![inv(i, 0), res(i, 0, &[1]), inv(i, 1), res(i, 1, &[2])], None));
    // Overlapping calls may take effect in either order.
    assert!(ok(vec![inv(i, 0), inv(i, 1), res(i, 0, &[2]), res(i, 1, &[1])], None));
    // Real-time order forbids the second call from seeing the first one's absence.
    assert!(!ok(vec![inv(i, 0), res(i, 0, &[2]), inv(i, 1), res(i, 1, &[1])], None));
    assert!(!ok(vec![inv(i, 0), inv(i, 1), res(i, 0, &[1]), res(i, 1, &[1])], None));
    // A pending call may or may not have taken effect.
    assert!(ok(vec![inv(i, 0), inv(i, 1), res(i, 1, &[2])], None));
    assert!(ok(vec![inv(i, 0), inv(i, 1), res(i, 1, &[1])], None));
    assert!(ok(vec![inv(i, 0), res(i, 0, &[1])], Some(&[1])));
    assert!(!ok(vec![inv(i, 0), res(i, 0, &[1])], Some(&[5])));
    assert!(ok(vec![], Some(&[0])));
}

#[test]
fn client_spec_parsing() {
    let c = ClientSpec::from_json(r#"{"threads": [{"proc": "P", "args": [1]}]}"#).unwrap();
    assert_eq!(c.threads, vec![Invocation::new("P", &[1])]);
    assert_eq!(c.depth, 60);
    assert!(matches!(ClientSpec::from_json(r#"{"threads": [], "colour": 1}"#), Err(McError::Client(_))));
    let v = explore(&bench("increment"), &threads(&["Missing"]), ExploreOptions::default());
    assert!(v.is_err());
}

/// A random walk through the machine: `picks` chooses among enabled threads
/// and then among their moves.
fn walk(lib: &Library, c: &ClientSpec, picks: &[usize]) -> Vec<Step> {
    let m = Machine::new(lib, c.tables.clone(), 4, &c.threads).unwrap();
    let mut st = m.initial(&c.init).unwrap();
    let mut out = Vec::new();
    for &p in picks {
        let live: Vec<(usize, Vec<(Option<i64>, Outcome)>)> = (0..c.threads.len())
            .filter_map(|t| match m.moves(&st, t) {
                Moves::Enabled(o) => Some((t, o)),
                _ => None,
            })
            .collect();
        if live.is_empty() {
            break;
        }
        let mut live = live;
        let k = live.len();
        let (t, mut opts) = live.swap_remove(p % k);
        let (value, o) = opts.swap_remove(p / k % opts.len());
        out.push(Step { thread: t, value });
        match o {
            Outcome::Next(n) => st = n,
            _ => break,
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn single_thread_explore_agrees_with_sequential_run(arg in -4i64..=4, fv in -4i64..=4, first in -4i64..=4, fd in -4i64..=4) {
        let lib = bench("compute");
        let mut c = ClientSpec::new(vec![Invocation::new("Compute", &[arg])]);
        c.prefix = vec![Invocation::new("Compute", &[first])];
        c.tables = BTreeMap::from([("f".to_string(), table(&[(&arg.to_string(), fv)], fd))]);
        let v = explore(&lib, &c, ExploreOptions::default()).unwrap();
        let all: Vec<Invocation> = c.prefix.iter().chain(&c.threads).cloned().collect();
        let s = run_sequential(&lib, &all, &c.tables, &c.init, 4, 60).unwrap();
        prop_assert_eq!(v.finals, vec![s.globals]);
    }

    #[test]
    fn locked_schedules_are_feasible_without_locks(picks in prop::collection::vec(0usize..70, 0..40), which in 0usize..4) {
        let (name, cl) = [("increment", "increment2"), ("retval", "retval"), ("reduce", "reduce"), ("average", "average")][which];
        let c = client(cl);
        for out in [plain(&bench(name)), linearizable(&bench(name))] {
            let sched = walk(&out, &c, &picks);
            let locked = replay(&out, &c, &sched, ExploreOptions::default()).unwrap();
            let bare = erase_lock_steps(&out, &c, &sched, ExploreOptions::default()).unwrap();
            let r = replay(&erase_locks(&out), &c, &bare, ExploreOptions::default()).unwrap();
            prop_assert_eq!(r.globals, locked.globals);
            prop_assert_eq!(r.history, locked.history);
        }
    }
}

