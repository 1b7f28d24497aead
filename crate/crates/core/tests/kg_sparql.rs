mod common;

use std::sync::Arc;

use common::{fixture_dir, oracle_extension, random_graph, zoo, OxigraphTransport};
use kgaudit::kg::{ExtensionStrategy, KgEndpoint, KgError, KnowledgeGraph, MemoryGraph, SparqlClient};
use proptest::prelude::*;
use rand::SeedableRng;

const Z: &str = "http://example.org/zoo/";

fn toy_memory() -> MemoryGraph {
    MemoryGraph::from_file(KgEndpoint::rdfs("toy", "http://localhost/sparql"), &fixture_dir().join("animals.ttl")).unwrap()
}

fn client(transport: OxigraphTransport, strategy: ExtensionStrategy) -> SparqlClient {
    SparqlClient::with_transport(KgEndpoint::rdfs("toy", "http://localhost/sparql"), Arc::new(transport))
        .unwrap()
        .with_strategy(strategy)
}

fn toy_client(strategy: ExtensionStrategy) -> SparqlClient {
    client(OxigraphTransport::new(toy_memory().triples()), strategy)
}

#[test]
fn labels_prefer_the_default_language() {
    let c = toy_client(ExtensionStrategy::Auto);
    let mammal = c.label(&format!("{Z}Mammal")).unwrap();
    assert_eq!(mammal.text, "Mammal");
    assert!(!mammal.fallback);
    let unknown = c.label(&format!("{Z}Unicorn")).unwrap();
    assert!(unknown.fallback);
    assert_eq!(unknown.text, "Unicorn");
    let batch = c.labels(&[&format!("{Z}rex"), &format!("{Z}cat")]).unwrap();
    assert_eq!(batch[&format!("{Z}rex")].text, "Rex");
    assert_eq!(batch.len(), 2);
}

#[test]
fn describe_truncates_and_hashes() {
    let c = toy_client(ExtensionStrategy::Auto);
    let d = c.describe(&format!("{Z}Mammal"), 2).unwrap();
    assert_eq!(d.triples.len(), 2);
    assert_eq!(d.response_sha256.len(), 64);
    let all = c.describe(&format!("{Z}Mammal"), 20).unwrap();
    assert_eq!(all.triples.len(), 3);
    assert!(matches!(c.describe(&format!("{Z}Mammal"), 0), Err(KgError::InvalidArgument(_))));
}

#[test]
fn extension_matches_memory_graph_under_every_strategy() {
    let memory = toy_memory();
    for class in ["Animal", "Mammal", "Bird", "Dog"] {
        let iri = format!("{Z}{class}");
        let expected = memory.extension(&iri, 10).unwrap().members;
        for strategy in [ExtensionStrategy::PropertyPath, ExtensionStrategy::Iterative, ExtensionStrategy::Auto] {
            assert_eq!(toy_client(strategy).extension(&iri, 10).unwrap().members, expected, "{class} {strategy:?}");
        }
    }
    assert_eq!(memory.extension(&format!("{Z}Animal"), 10).unwrap().members.len(), 10);
}

#[test]
fn auto_falls_back_when_paths_are_rejected() {
    let mut transport = OxigraphTransport::new(toy_memory().triples());
    transport.reject_paths = true;
    let c = client(transport, ExtensionStrategy::Auto);
    assert_eq!(c.extension(&format!("{Z}Mammal"), 10).unwrap().members.len(), 5);

    let mut transport = OxigraphTransport::new(toy_memory().triples());
    transport.reject_paths = true;
    let strict = client(transport, ExtensionStrategy::PropertyPath);
    assert!(matches!(
        strict.extension(&format!("{Z}Mammal"), 10),
        Err(KgError::QueryRejected { status: 400, .. })
    ));
}

#[test]
fn iterative_extension_honors_max_depth() {
    let c = toy_client(ExtensionStrategy::Iterative);
    let shallow = c.extension(&format!("{Z}Mammal"), 0).unwrap();
    assert!(shallow.depth_exceeded);
    assert_eq!(shallow.members.len(), 3);
    let m = toy_memory().extension(&format!("{Z}Mammal"), 0).unwrap();
    assert_eq!(m, shallow);
}

#[test]
fn subclass_pairs_and_select() {
    let c = toy_client(ExtensionStrategy::Auto);
    let pairs = c.subclass_pairs(100).unwrap();
    assert_eq!(pairs, toy_memory().subclass_pairs(100).unwrap());
    assert_eq!(pairs.len(), 3);
    let rows = c
        .select(&format!("SELECT ?s WHERE {{ ?s <http://www.w3.org/1999/02/22-rdf-syntax-ns#type> <{Z}Bird> }}"))
        .unwrap();
    assert_eq!(rows.len(), 5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn extension_is_the_subclass_fixpoint(seed in any::<u64>(), cyclic in any::<bool>(), target in 0usize..8) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let triples = random_graph(&mut rng, cyclic);
        let class = zoo(&format!("C{target}"));
        let expected = oracle_extension(&triples, &class);
        let memory = MemoryGraph::new(KgEndpoint::rdfs("g", "http://localhost/sparql"), triples.clone());
        prop_assert_eq!(&memory.extension(&class, 10).unwrap().members, &expected);
        for strategy in [ExtensionStrategy::PropertyPath, ExtensionStrategy::Iterative] {
            let c = client(OxigraphTransport::new(&triples), strategy);
            prop_assert_eq!(&c.extension(&class, 10).unwrap().members, &expected);
        }
    }
}
