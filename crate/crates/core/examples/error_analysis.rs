//! Disagreement extraction, annotation and the error-cause breakdown for a stored run.

use kgaudit::classifier::CotClassifier;
use kgaudit::config::RunConfig;
use kgaudit::dataset::{build_dataset, sample_classes};
use kgaudit::error_analysis::{analyse, extract_disagreements, record_annotation, AnnotationInput, AnnotationStore, ErrorCause};
use kgaudit::evaluator::run_evaluation;
use kgaudit::gateway::LlmGateway;
use kgaudit::store::RunStore;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = RunConfig::load(&std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/toy/config.toml"))?;
    let kg = config.open_kg("toy")?;
    let gateway = LlmGateway::in_memory();
    let describer = config.describer("toy", kg.as_ref(), &gateway)?;
    let opts = config.sampling.options();
    let datasets = sample_classes(kg.as_ref(), 2, 5, 7, &opts, describer.as_ref())?
        .iter()
        .map(|s| build_dataset(kg.as_ref(), s, 5, 7, &opts, describer.as_ref()))
        .collect::<Result<Vec<_>, _>>()?;
    let classifier = CotClassifier::new(&gateway, config.model("mock")?, config.templates()?);

    let data = tempfile::tempdir()?;
    let store = RunStore::new(data.path());
    store.write_run(&run_evaluation("demo", &classifier, &datasets), None)?;

    let records = extract_disagreements(&store, "demo")?;
    let annotations = AnnotationStore::open(&store.run_dir("demo")?)?;
    for (record, cause) in records.iter().zip([ErrorCause::MissingRelation, ErrorCause::IncorrectReasoning, ErrorCause::MissingData]) {
        println!("{} / {}: KG {} vs model {}", record.class_label, record.entity_label, record.gold, record.predicted);
        let input = AnnotationInput {
            annotator_id: "alice".into(),
            // KG-attributed causes mean the annotator sides with the model.
            human_verdict: if cause.is_kg_attributed() { record.predicted } else { record.gold }.to_string(),
            cause: cause.as_str().into(),
            note: None,
        };
        record_annotation(&annotations, &records, &record.record_id, &input)?;
    }
    let analysis = analyse(&records, &annotations.snapshot());
    println!("\n{}", serde_json::to_string_pretty(&analysis)?);
    Ok(())
}
