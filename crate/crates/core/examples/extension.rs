//! Labels, DESCRIBE neighborhoods and transitive class extensions on a local graph.

use std::path::Path;

use kgaudit::kg::{KgEndpoint, KnowledgeGraph, MemoryGraph};

const ZOO: &str = "http://example.org/zoo/";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ttl = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/toy/animals.ttl");
    let kg = MemoryGraph::from_file(KgEndpoint::rdfs("toy", "http://localhost/sparql"), &ttl)?;

    for (class, superclass) in kg.subclass_pairs(100)? {
        println!("{} ⊑ {}", kg.label(&class)?.text, kg.label(&superclass)?.text);
    }
    for class in ["Animal", "Mammal", "Dog"] {
        let iri = format!("{ZOO}{class}");
        let direct = kg.direct_instances(&iri)?;
        let ext = kg.extension(&iri, 10)?;
        println!("{class}: {} direct, {} in extension", direct.len(), ext.members.len());
    }
    let described = kg.describe(&format!("{ZOO}rex"), 20)?;
    println!("\nDESCRIBE rex ({} triples, sha256 {}…)", described.triples.len(), &described.response_sha256[..12]);
    for t in &described.triples {
        println!("  {t}");
    }
    Ok(())
}
