mod common;

use common::*;
use mdb_core::ingest::{export, import_text, load_reference};
use mdb_core::model::{decode, lookup_named, lookup_value, Datum, ObjectId, Value};
use mdb_core::storage::{Database, OpenOptions};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn figure1_reference_graph() {
    let g = load_reference(&fixture_text("fig1.dg")).unwrap();
    assert_eq!(g.edge_count(), 2);
    assert_eq!(g.label_count(), 2);
    assert_eq!(g.props.len(), 10);
    let order = lookup_value(&Value::Str("order".into()), &g.strings).unwrap();
    assert_eq!(
        g.prop(ObjectId::edge(1), order),
        lookup_value(&Value::Str("2".into()), &g.strings)
    );
}

#[test]
fn figure5_reference_graph() {
    let g = load_reference(&fixture_text("fig5.dg")).unwrap();
    assert_eq!(g.edge_count(), 10);
    let mb = lookup_named("Michelle Bachelet", &g.strings).unwrap();
    let (s, _, _) = g.gamma[&ObjectId::edge(0)];
    assert_eq!(s, mb);
    let qualifier_sources: Vec<_> = (2..10).map(|n| g.gamma[&ObjectId::edge(n)].0).collect();
    assert!(qualifier_sources.iter().all(|s| s.is_edge()));
}

#[test]
fn export_of_fixtures_reimports_identically() {
    for f in ["fig1.dg", "fig5.dg"] {
        let g = load_reference(&fixture_text(f)).unwrap();
        let back = load_reference(&export(&g).unwrap()).unwrap();
        assert_eq!(decoded(&g), decoded(&back), "{f}");
    }
}

#[test]
fn isolated_nodes_are_objects() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("db");
    let stats = import_text("(lonely)\n(\"v\")", &path, 4096).unwrap();
    assert_eq!(stats.objects, 2);
    let db = Database::open(&path, OpenOptions::default()).unwrap();
    let g = db.to_reference_graph().unwrap();
    let objs: Vec<_> = g.objects.iter().map(|&o| decode(o, &g.strings).unwrap()).collect();
    assert_eq!(objs, vec![Datum::Named("lonely".into()), Datum::Str("v".into())]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn import_export_round_trip(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let text = random_graph_text(&mut rng, &GraphShape::small());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("db");
        import_text(&text, &path, 256).unwrap();
        let db = Database::open(&path, OpenOptions::default()).unwrap();
        let stored = db.to_reference_graph().unwrap();
        let again = load_reference(&export(&stored).unwrap()).unwrap();
        prop_assert_eq!(decoded(&stored), decoded(&again));
    }

    #[test]
    fn names_survive_export(name in "[ -~]{1,12}") {
        let g = load_reference("(placeholder)").unwrap();
        let _ = g;
        let text = format!("(x)-[t]->(\"{}\")", name.replace('\\', "\\\\").replace('"', "\\\""));
        let g = load_reference(&text).unwrap();
        let back = load_reference(&export(&g).unwrap()).unwrap();
        prop_assert_eq!(decoded(&g), decoded(&back));

        let escaped: String = name.chars().flat_map(|c| ['\\', c]).collect();
        let g = load_reference(&format!("({escaped}) :l")).unwrap();
        let back = load_reference(&export(&g).unwrap()).unwrap();
        prop_assert_eq!(decoded(&g), decoded(&back));
    }
}
