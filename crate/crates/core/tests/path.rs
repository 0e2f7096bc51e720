mod common;

use std::collections::BTreeSet;

use common::*;
use mdb_core::algebra::eval_rpq;
use mdb_core::dgql::Rpq;
use mdb_core::ingest::import_text;
use mdb_core::model::{lookup_named, Datum, ObjectId, PropertyDomainGraph};
use mdb_core::path::*;
use mdb_core::storage::{Database, OpenOptions, DEFAULT_PAGE_SIZE};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn open(text: &str) -> (tempfile::TempDir, Database) {
    let dir = tempfile::tempdir().unwrap();
    import_text(text, dir.path(), DEFAULT_PAGE_SIZE).unwrap();
    let db = Database::open(dir.path(), OpenOptions::default()).unwrap();
    (dir, db)
}

fn id(g: &PropertyDomainGraph, name: &str) -> ObjectId {
    lookup_named(name, &g.strings).unwrap()
}

#[test]
fn descendants_of_alberto() {
    let (_dir, db) = open(&fixture_text("fig1.dg"));
    let g = db.to_reference_graph().unwrap();
    let m = Automaton::compile(&Rpq::plus(Rpq::named("child")), &db);
    let found = eval_path(&db, &m, id(&g, "n2"), true).unwrap();
    assert_eq!(found.len(), 1);
    let (end, witness) = &found[0];
    assert_eq!(*end, id(&g, "n1"));
    let witness = witness.as_ref().unwrap();
    assert_eq!(witness.len(), 1);
    assert_eq!(witness.format(&db).unwrap(), "(n2)-[_e1,fwd]->(n1)");
}

#[test]
fn one_result_per_end_object() {
    let (_dir, db) = open(&fixture_text("fig5.dg"));
    let g = db.to_reference_graph().unwrap();
    let m = Automaton::compile(&Rpq::named("position held"), &db);
    let found = eval_path(&db, &m, id(&g, "Michelle Bachelet"), false).unwrap();
    assert_eq!(found, vec![(id(&g, "President of Chile"), None)]);
}

#[test]
fn membership_test() {
    let (_dir, db) = open(&fixture_text("fig1.dg"));
    let g = db.to_reference_graph().unwrap();
    let m = Automaton::compile(&Rpq::plus(Rpq::named("child")), &db);
    let (n1, n2) = (id(&g, "n1"), id(&g, "n2"));
    let mut hit = PathSearch::new(&db, &m, Some(n2), Some(n1), false).unwrap();
    assert_eq!(hit.next_match().unwrap().map(|m| m.0), Some(n1));
    assert!(hit.next_match().unwrap().is_none());
    let mut miss = PathSearch::new(&db, &m, Some(n1), Some(n2), false).unwrap();
    assert!(miss.next_match().unwrap().is_none());
}

#[test]
fn star_includes_the_anchor() {
    let (_dir, db) = open(&fixture_text("fig1.dg"));
    let g = db.to_reference_graph().unwrap();
    let m = Automaton::compile(&Rpq::star(Rpq::named("unused")), &db);
    for &o in &g.objects {
        let found = eval_path(&db, &m, o, false).unwrap();
        assert_eq!(found, vec![(o, None)]);
    }
    let absent = ObjectId::inline_str("zz").unwrap();
    assert!(eval_path(&db, &m, absent, false).unwrap().is_empty());
}

#[test]
fn unbound_anchor_is_an_error() {
    let g = fixture_graph("fig1.dg");
    let m = Automaton::compile(&Rpq::named("child"), &g.strings);
    assert!(matches!(
        PathSearch::new(&g, &m, None, None, false),
        Err(mdb_core::Error::UnboundEndpoints)
    ));
}

fn letters(g: &PropertyDomainGraph, types: usize) -> Vec<(Datum, bool, ObjectId)> {
    (0..types)
        .filter_map(|i| {
            let name = format!("t{i}");
            lookup_named(&name, &g.strings).map(|o| (Datum::Named(name), false, o))
        })
        .flat_map(|(d, _, o)| [(d.clone(), false, o), (d, true, o)])
        .collect()
}

fn words(alphabet: usize, max_len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for w in &frontier {
            for a in 0..alphabet {
                let mut w2: Vec<usize> = w.clone();
                w2.push(a);
                next.push(w2);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

#[test]
fn child_plus_language() {
    let g = reference("(a)-[child]->(b)\n(b)-[father]->(a)");
    let m = Automaton::compile(&Rpq::plus(Rpq::named("child")), &g.strings);
    let alphabet = [
        (Datum::Named("child".into()), false, id(&g, "child")),
        (Datum::Named("child".into()), true, id(&g, "child")),
        (Datum::Named("father".into()), false, id(&g, "father")),
    ];
    for w in words(alphabet.len(), 4) {
        let word: Vec<(Datum, bool)> = w.iter().map(|&i| (alphabet[i].0.clone(), alphabet[i].1)).collect();
        let syms: Vec<Symbol> = w
            .iter()
            .map(|&i| (alphabet[i].2, if alphabet[i].1 { Dir::Inverse } else { Dir::Forward }))
            .collect();
        assert_eq!(m.accepts(&syms), word_matches(&Rpq::plus(Rpq::named("child")), &word), "{word:?}");
    }
}

#[test]
fn inverse_father_pairs() {
    let g = fixture_graph("fig1.dg");
    let r = Rpq::inverse(Rpq::named("father"));
    let m = Automaton::compile(&r, &g.strings);
    let mut pairs = BTreeSet::new();
    for &o in &g.objects {
        for (e, _) in eval_path(&g, &m, o, false).unwrap() {
            pairs.insert((o, e));
        }
    }
    assert_eq!(pairs, eval_rpq(&r, &g));
    assert_eq!(pairs, BTreeSet::from([(id(&g, "n2"), id(&g, "n1"))]));
}

/// At most 15 objects, counting edge ids, types and values.
fn small_shape() -> GraphShape {
    GraphShape {
        nodes: 5,
        anon: 0,
        types: 2,
        edges: 6,
        labels: 0,
        props: 0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn automaton_language(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = reference(&random_graph_text(&mut rng, &small_shape()));
        let r = random_rpq(&mut rng, 3, 6);
        let m = Automaton::compile(&r, &g.strings);
        let back = m.reversed();
        let alphabet = letters(&g, 3);
        for w in words(alphabet.len(), 3) {
            let word: Vec<(Datum, bool)> = w.iter().map(|&i| (alphabet[i].0.clone(), alphabet[i].1)).collect();
            let sym = |i: usize| (alphabet[i].2, if alphabet[i].1 { Dir::Inverse } else { Dir::Forward });
            let syms: Vec<Symbol> = w.iter().map(|&i| sym(i)).collect();
            let expected = word_matches(&r, &word);
            prop_assert_eq!(m.accepts(&syms), expected, "{} {:?}", r, word);
            let rev: Vec<Symbol> = syms.iter().rev().map(|&(t, d)| (t, d.flip())).collect();
            prop_assert_eq!(back.accepts(&rev), expected);
        }
    }

    #[test]
    fn search_matches_oracles(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let text = random_graph_text(&mut rng, &small_shape());
        let (_dir, db) = open(&text);
        let g = db.to_reference_graph().unwrap();
        prop_assume!(g.objects.len() <= 15);
        let r = random_rpq(&mut rng, 3, 8);
        let autos = PathAutomata::compile(&r, &db);
        let nfa = TestNfa::new(&r);
        let mut forward = BTreeSet::new();
        let mut backward = BTreeSet::new();
        for &o in &g.objects {
            let mut search = PathSearch::new(&db, &autos.forward, Some(o), None, true).unwrap();
            while let Some((end, w)) = search.next_match().unwrap() {
                prop_assert!(forward.insert((o, end)));
                let w = w.unwrap();
                prop_assert_eq!(w.start, o);
                prop_assert_eq!(w.end(), end);
                let mut at = o;
                let mut word = Vec::new();
                for &(eid, dir, next) in &w.steps {
                    let (s, t, d) = g.gamma[&eid];
                    match dir {
                        Dir::Forward => prop_assert_eq!((s, d), (at, next)),
                        Dir::Inverse => prop_assert_eq!((d, s), (at, next)),
                    }
                    word.push((t, dir));
                    at = next;
                }
                prop_assert!(autos.forward.accepts(&word));
                prop_assert_eq!(Some(w.len()), nfa.distance(&g, o, end), "{}", r);
                let text = w.format(&db).unwrap();
                prop_assert!(text.starts_with('('));
            }
            prop_assert!(search.visited() <= g.objects.len() * autos.forward.state_count());
            let mut search = PathSearch::new(&db, &autos.backward, Some(o), None, true).unwrap();
            while let Some((start, w)) = search.next_match().unwrap() {
                backward.insert((start, o));
                let w = w.unwrap().reversed();
                prop_assert_eq!((w.start, w.end()), (start, o));
                prop_assert_eq!(Some(w.len()), nfa.distance(&g, start, o));
            }
        }
        let pairs = eval_rpq(&r, &g);
        prop_assert_eq!(&forward, &pairs, "{}", r);
        prop_assert_eq!(&backward, &pairs, "{}", r);
        prop_assert_eq!(&pairs, &product_rpq(&r, &g), "{}", r);
    }
}
