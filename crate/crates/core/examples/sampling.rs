//! Seeded class and example sampling into labeled datasets.

use kgaudit::config::RunConfig;
use kgaudit::dataset::{build_dataset, sample_classes, SAMPLER_NAME};
use kgaudit::gateway::LlmGateway;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = RunConfig::load(&std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/toy/config.toml"))?;
    let kg = config.open_kg("toy")?;
    let gateway = LlmGateway::in_memory();
    let describer = config.describer("toy", kg.as_ref(), &gateway)?;
    let options = config.sampling.options();
    let seed = config.sampling.seed;

    println!("sampler {SAMPLER_NAME}, seed {seed}");
    let specs = sample_classes(kg.as_ref(), 2, 5, seed, &options, describer.as_ref())?;
    for spec in &specs {
        let ds = build_dataset(kg.as_ref(), spec, 5, seed, &options, describer.as_ref())?;
        println!("\n{} (⊑ {}): {}", spec.label, spec.superclass_iri, spec.definition);
        for ex in ds.examples() {
            println!("  {:<8} {:<10} {}", ex.gold.as_str(), ex.label, ex.description);
        }
    }
    Ok(())
}
