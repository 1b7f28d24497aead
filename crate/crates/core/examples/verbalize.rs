//! Entity descriptions from RDF: tab-separated triples, optionally rewritten by a model.

use std::path::Path;

use kgaudit::gateway::{LlmGateway, MockScript, ModelConfig};
use kgaudit::kg::{KgEndpoint, MemoryGraph};
use kgaudit::verbalizer::{DescriptionSource, RdfSource};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ttl = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/toy/animals.ttl");
    let kg = MemoryGraph::from_file(KgEndpoint::rdfs("toy", "http://localhost/sparql"), &ttl)?;
    let whale = "http://example.org/zoo/whale";

    let tsv = RdfSource::tsv_only(&kg).describe(whale, "Whale")?;
    println!("[{:?}] {}\n{}\n", tsv.source, tsv.provenance, tsv.text);

    let script = MockScript::new().rule("Whale", "The whale is a large marine mammal.");
    let gateway = LlmGateway::in_memory();
    let prose = RdfSource::with_llm(&kg, &gateway, ModelConfig::scripted("writer", script)).describe(whale, "Whale")?;
    println!("[{:?}] {}\n{}", prose.source, prose.provenance, prose.text);
    Ok(())
}
