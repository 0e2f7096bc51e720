mod common;

use std::collections::BTreeSet;

use common::*;
use mdb_core::algebra::oracle_evaluate;
use mdb_core::dgql::{compile, Atom, Pattern, Term, Var};
use mdb_core::exec::Execution;
use mdb_core::ingest::import_text;
use mdb_core::plan::{
    build_logical, emit_physical, leapfrog_applicable, leapfrog_variable_order, plan_greedy,
    plan_join_order, plan_query, plan_selinger, simplify, Estimator, Strategy,
};
use mdb_core::query::{run_query, QueryOptions};
use mdb_core::storage::{Catalog, Database, OpenOptions, DEFAULT_PAGE_SIZE};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// All orderings of `0..n`.
fn orderings(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in orderings(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

fn open(text: &str) -> (tempfile::TempDir, Database) {
    let dir = tempfile::tempdir().unwrap();
    import_text(text, dir.path(), DEFAULT_PAGE_SIZE).unwrap();
    let db = Database::open(dir.path(), OpenOptions::default()).unwrap();
    (dir, db)
}

fn atoms(q: &str) -> Vec<Atom> {
    match compile(q).unwrap().pattern {
        Pattern::Basic(a) => a,
        Pattern::Optional(..) => panic!("expected a basic pattern"),
    }
}

fn est(db: &Database) -> Estimator<'_> {
    Estimator {
        catalog: db.catalog(),
        resolver: db,
    }
}

fn none() -> BTreeSet<Var> {
    BTreeSet::new()
}

fn opts(strategy: Strategy) -> QueryOptions {
    QueryOptions {
        strategy,
        strict: true,
        ..QueryOptions::default()
    }
}

/// Skewed chain: many `a` edges, few `c` edges.
fn skewed() -> String {
    let mut text = String::new();
    for i in 0..40 {
        text.push_str(&format!("(s{i})-[a]->(m{})\n", i % 8));
    }
    for i in 0..8 {
        text.push_str(&format!("(m{i})-[b]->(k{})\n", i % 4));
        text.push_str(&format!("(m{i})-[b]->(k{})\n", (i + 1) % 4));
    }
    text.push_str("(k0)-[c]->(z0)\n(z0 :end)\n");
    text
}

#[test]
fn selinger_matches_exhaustive_minimum() {
    let (_d, db) = open(&skewed());
    let e = est(&db);
    let chain = atoms("SELECT * MATCH (?w)-[a]->(?x), (?x)-[b]->(?y), (?y)-[c]->(?z), (?z :end)");
    assert_eq!(chain.len(), 4);
    let best = orderings(4)
        .into_iter()
        .map(|o| e.order_cost(&chain, &o, &none()))
        .min_by(|a, b| a.partial_cmp(b).unwrap())
        .unwrap();
    let chosen = plan_selinger(&chain, &none(), &e);
    assert_eq!(e.order_cost(&chain, &chosen, &none()), best);
    // the selective end of the chain goes first
    assert!(chosen[0] >= 2, "{chosen:?}");
}

#[test]
fn two_atoms_cheaper_first() {
    let (_d, db) = open(&skewed());
    let e = est(&db);
    let two = atoms("SELECT * MATCH (?w)-[a]->(?x), (?x)-[b]->(?y)");
    assert_eq!(plan_selinger(&two, &none(), &e), vec![1, 0]);
    assert_eq!(plan_greedy(&two, &none(), &e), vec![1, 0]);
}

#[test]
fn components_before_cross_products() {
    let (_d, db) = open(&skewed());
    let e = est(&db);
    let set = atoms("SELECT * MATCH (?p)-[a]->(?q), (?u)-[c]->(?v), (?q)-[b]->(?r)");
    let order = plan_selinger(&set, &none(), &e);
    assert_eq!(e.order_cost(&set, &order, &none()).0, 1);
    // the a/b component is contiguous
    let pos = |i: usize| order.iter().position(|&x| x == i).unwrap();
    assert_eq!((pos(0) as i64 - pos(2) as i64).abs(), 1, "{order:?}");
}

#[test]
fn greedy_ties_follow_input_order() {
    let (_d, db) = open("(a)-[t]->(b)\n(b)-[t]->(c)");
    let e = est(&db);
    let same = atoms("SELECT * MATCH (?x)-[t]->(?y), (?u)-[t]->(?v)");
    assert_eq!(plan_greedy(&same, &none(), &e), vec![0, 1]);
}

fn random_conjunction(rng: &mut impl Rng, n: usize) -> String {
    let vars = ["a", "b", "c", "d", "e", "f", "g"];
    let types = ["t0", "t1", "t2"];
    let parts: Vec<String> = (0..n)
        .map(|_| {
            format!(
                "(?{})-[{}]->(?{})",
                vars.choose(rng).unwrap(),
                types.choose(rng).unwrap(),
                vars.choose(rng).unwrap()
            )
        })
        .collect();
    format!("SELECT * MATCH {}", parts.join(", "))
}

fn connected(a: &Atom, placed: &[&Atom]) -> bool {
    let mine: BTreeSet<&Var> = a.terms().into_iter().filter_map(Term::var).collect();
    placed
        .iter()
        .any(|p| p.terms().into_iter().filter_map(Term::var).any(|v| mine.contains(v)))
}

#[test]
fn greedy_stays_connected_when_possible() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (_d, db) = open(&random_graph_text(&mut rng, &GraphShape::small()));
    let e = est(&db);
    for _ in 0..50 {
        let set = atoms(&random_conjunction(&mut rng, 15));
        let order = plan_greedy(&set, &none(), &e);
        let mut placed: Vec<&Atom> = Vec::new();
        for &i in &order {
            if !placed.is_empty() && !connected(&set[i], &placed) {
                let rest = set
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| !order[..placed.len()].contains(j));
                for (_, other) in rest {
                    assert!(!connected(other, &placed), "skipped a connected atom");
                }
            }
            placed.push(&set[i]);
        }
        assert_eq!(plan_join_order(&set, &none(), &e), order);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn selinger_never_worse_than_greedy(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (_d, db) = open(&random_graph_text(&mut rng, &GraphShape::small()));
        let e = est(&db);
        let n = rng.gen_range(1..=7);
        let set = atoms(&random_conjunction(&mut rng, n));
        let s = e.order_cost(&set, &plan_selinger(&set, &none(), &e), &none());
        let g = e.order_cost(&set, &plan_greedy(&set, &none(), &e), &none());
        prop_assert!(s.0 < g.0 || (s.0 == g.0 && s.1 <= g.1 * (1.0 + 1e-9)), "{:?} {:?}", s, g);
    }

    #[test]
    fn estimates_are_finite(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut c = Catalog::default();
        for f in [
            &mut c.objects, &mut c.edges, &mut c.labels, &mut c.properties,
            &mut c.distinct_sources, &mut c.distinct_types, &mut c.distinct_targets,
            &mut c.distinct_labeled_objects, &mut c.distinct_labels,
            &mut c.distinct_property_objects, &mut c.distinct_keys, &mut c.distinct_values,
        ] {
            *f = if rng.gen_bool(0.3) { 0 } else { rng.gen_range(0..u64::MAX >> 8) };
        }
        let strings = mdb_core::model::StringArena::new();
        let e = Estimator { catalog: &c, resolver: &strings };
        let set = atoms(&random_conjunction(&mut rng, 4));
        let mut bound = BTreeSet::new();
        for a in &set {
            let x = e.atom(a, &bound);
            prop_assert!(x.is_finite() && x >= 0.0);
            bound.extend(a.vars().into_iter().cloned());
        }
        let refs: Vec<&Atom> = set.iter().collect();
        let j = e.join(&refs, &none());
        prop_assert!(j.is_finite() && j >= 0.0);
    }
}

#[test]
fn fixing_columns_never_raises_estimates() {
    let (_d, db) = open(&skewed());
    let e = est(&db);
    let a = &atoms("SELECT * MATCH (?x)-[?t]->(?y)")[0];
    let free = e.atom(a, &none());
    let mut bound = none();
    let mut last = free;
    for v in ["x", "t", "y", "_c0"] {
        bound.insert(Var::new(v));
        let now = e.atom(a, &bound);
        assert!(now <= last, "{v}: {now} > {last}");
        last = now;
    }
    assert_eq!(free, db.catalog().edges as f64);
    let obj = &atoms("SELECT * MATCH (?x)")[0];
    assert_eq!(e.atom(obj, &none()), db.catalog().objects as f64);
}

#[test]
fn variable_orders() {
    let (_d, db) = open("(a)-[t]->(b)\n(b)-[t]->(c)\n(c)-[t]->(a)\n(a :L)");
    let e = est(&db);
    let star = atoms("SELECT * MATCH (?c)-[t]->(?x), (?c)-[t]->(?y), (?c)-[t]->(?z)");
    let order = leapfrog_variable_order(&star, &none(), &e).unwrap();
    assert_eq!(order[0], Var::new("c"));
    let iso = atoms("SELECT * MATCH (?x)-[t]->(?y), (?w :L)");
    let order = leapfrog_variable_order(&iso, &none(), &e).unwrap();
    assert_eq!(order.last(), Some(&Var::new("w")));
    let tri = atoms("SELECT * MATCH (?x)-[t]->(?y), (?y)-[t]->(?z), (?z)-[t]->(?x)");
    let once = leapfrog_variable_order(&tri, &none(), &e).unwrap();
    assert_eq!(once, leapfrog_variable_order(&tri, &none(), &e).unwrap());
    assert_eq!(once[0], Var::new("x"));
}

#[test]
fn leapfrog_applicability() {
    let (_d, db) = open(&fixture_text("fig1.dg"));
    let e = est(&db);
    let fig7 = atoms("SELECT ?x, ?y MATCH (?x :human)-[father]->(?y :human)");
    assert!(leapfrog_applicable(&fig7, &none(), &e));
    assert!(leapfrog_applicable(&atoms("SELECT * MATCH (?x)-[?t]->(?y)"), &none(), &e));
    let path = atoms("SELECT * MATCH (?x :human)=[child+]=>(?y)");
    assert!(!leapfrog_applicable(&path, &none(), &e));
}

#[test]
fn triangle_on_three_cycle() {
    let (_d, db) = open("(a)-[t]->(b)\n(b)-[t]->(c)\n(c)-[t]->(a)");
    let q = "SELECT ?x, ?y, ?z MATCH (?x)-[t]->(?y), (?y)-[t]->(?z), (?z)-[t]->(?x)";
    let g = db.to_reference_graph().unwrap();
    let mut brute = Vec::new();
    let named: Vec<_> = ["a", "b", "c"].into_iter().map(|n| mdb_core::model::lookup_named(n, &g.strings).unwrap()).collect();
    let has = |s, o| g.gamma.values().any(|&(x, _, y)| x == s && y == o);
    for &x in &named {
        for &y in &named {
            for &z in &named {
                if has(x, y) && has(y, z) && has(z, x) {
                    brute.push((x, y, z));
                }
            }
        }
    }
    assert_eq!(brute.len(), 3);
    for s in [Strategy::Leapfrog, Strategy::NestedLoop] {
        let out = run_query(&db, q, &opts(s)).unwrap();
        assert_eq!(out.solutions.len(), 3);
    }
    assert_eq!(oracle_evaluate(&compile(q).unwrap(), &g).unwrap().len(), 3);
}

#[test]
fn path_only_query_has_no_joins() {
    let (_d, db) = open(&fixture_text("fig1.dg"));
    let out = run_query(&db, "EXPLAIN SELECT ?y MATCH (n2)=[child+]=>(?y)", &QueryOptions::default()).unwrap();
    let text = out.explain.unwrap();
    assert!(text.contains("PathSearch"), "{text}");
    assert!(!text.contains("IndexScan") && !text.contains("Leapfrog ["), "{text}");
}

#[test]
fn explain_is_stable() {
    let (_d, db) = open(&fixture_text("fig1.dg"));
    let q = "EXPLAIN SELECT ?x, ?y MATCH (?x :human)-[father]->(?y :human)";
    let a = run_query(&db, q, &QueryOptions::default()).unwrap().explain.unwrap();
    let b = run_query(&db, q, &QueryOptions::default()).unwrap().explain.unwrap();
    assert_eq!(a, b);
    let nl = run_query(&db, q, &opts(Strategy::NestedLoop)).unwrap().explain.unwrap();
    assert!(nl.contains("IndexScan Label(?x, \"human\")") || nl.contains("IndexScan Label(?y, \"human\")"), "{nl}");
    assert!(nl.contains("IndexScan Edge(?x, father, ?y, ?_c0)"), "{nl}");
}

#[test]
fn simplify_preserves_results() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..8 {
        let (_d, db) = open(&random_graph_text(&mut rng, &GraphShape::small()));
        for _ in 0..25 {
            let (_, q) = random_query(&mut rng, &GraphShape::small(), 5);
            let logical = build_logical(&q);
            let simple = simplify(logical.clone());
            for s in [Strategy::NestedLoop, Strategy::Auto] {
                let a = emit_physical(&logical, est(&db), s, false).unwrap();
                let b = emit_physical(&simple, est(&db), s, false).unwrap();
                let mut ra = Execution::new(&db, &a, 1000).collect_rows().unwrap();
                let mut rb = Execution::new(&db, &b, 1000).collect_rows().unwrap();
                if q.order.is_empty() {
                    ra.sort();
                    rb.sort();
                }
                assert_eq!(ra, rb, "{logical}\n{simple}");
            }
        }
    }
}

#[test]
fn rerunning_a_plan_replays_rows() {
    let (_d, db) = open(&fixture_text("fig5.dg"));
    let q = compile(
        "SELECT ?x, ?y, ?z MATCH (?x)-[?e1 position held]->(President of Chile),
         OPTIONAL { (?e1)-[replaces]->(?y) OPTIONAL { (?y)-[?e2 position held]->(President of Chile), (?e2)-[replaces]->(?z) } }",
    )
    .unwrap();
    for s in [Strategy::NestedLoop, Strategy::Leapfrog] {
        let plan = plan_query(&q, est(&db), s, false).unwrap();
        let first = Execution::new(&db, &plan, 10).collect_rows().unwrap();
        let second = Execution::new(&db, &plan, 10).collect_rows().unwrap();
        assert_eq!(first, second);
        assert_eq!(first.len(), 2);
    }
}

#[test]
fn limit_stops_the_pipeline() {
    let (_d, db) = open(&skewed());
    let q = "SELECT ?x MATCH (?w)-[a]->(?x)";
    let all = run_query(&db, q, &opts(Strategy::NestedLoop)).unwrap();
    let one = run_query(&db, &format!("{q} LIMIT 1"), &opts(Strategy::NestedLoop)).unwrap();
    assert_eq!(one.solutions.len(), 1);
    assert!(one.stats.intermediate < all.stats.intermediate);
}

/// Tripartite instance where every pairwise join is quadratic but the
/// triangle output is linear.
pub fn wedge_text(n: usize) -> String {
    let mut text = String::new();
    for (from, to) in [("x", "y"), ("y", "z"), ("z", "x")] {
        for i in 0..n {
            text.push_str(&format!("({from}0)-[t]->({to}{i})\n"));
            if i > 0 {
                text.push_str(&format!("({from}{i})-[t]->({to}0)\n"));
            }
        }
    }
    text
}

#[test]
fn leapfrog_beats_nested_loops_on_wedges() {
    let (_d, db) = open(&wedge_text(40));
    let q = "SELECT ?a, ?b, ?c MATCH (?a)-[t]->(?b), (?b)-[t]->(?c), (?c)-[t]->(?a)";
    let lf = run_query(&db, q, &opts(Strategy::Leapfrog)).unwrap();
    let nl = run_query(&db, q, &opts(Strategy::NestedLoop)).unwrap();
    let mut a = lf.solutions.rows.clone();
    let mut b = nl.solutions.rows.clone();
    a.sort();
    b.sort();
    assert_eq!(a, b);
    assert!(lf.stats.intermediate < nl.stats.intermediate, "{:?} {:?}", lf.stats, nl.stats);
}
