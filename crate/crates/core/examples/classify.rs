//! Two-step chain-of-thought classification of a sampled dataset with a scripted model.

use kgaudit::classifier::{build_theta0, build_theta1, CotClassifier, EntityClassifier};
use kgaudit::config::RunConfig;
use kgaudit::dataset::{build_dataset, sample_classes};
use kgaudit::evaluator::run_evaluation;
use kgaudit::gateway::LlmGateway;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = RunConfig::load(&std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/toy/config.toml"))?;
    let kg = config.open_kg("toy")?;
    let gateway = LlmGateway::in_memory();
    let describer = config.describer("toy", kg.as_ref(), &gateway)?;
    let opts = config.sampling.options();
    let specs = sample_classes(kg.as_ref(), 2, 5, 7, &opts, describer.as_ref())?;
    let datasets = specs
        .iter()
        .map(|s| build_dataset(kg.as_ref(), s, 5, 7, &opts, describer.as_ref()))
        .collect::<Result<Vec<_>, _>>()?;

    let classifier = CotClassifier::new(&gateway, config.model("mock")?, config.templates()?);

    // One example step by step.
    let (spec, example) = (&datasets[0].spec, &datasets[0].positives[0]);
    let theta0 = build_theta0(spec, example)?;
    let rationale = classifier.generate_rationale(&theta0)?;
    let answer = classifier.generate_answer(&build_theta1(&theta0, &rationale.text))?;
    println!("{} / {}\n  rationale: {}\n  answer:    {:?}\n", spec.label, example.label, rationale.text, answer.parsed);

    // The whole evaluation.
    let output = run_evaluation("demo", &classifier, &datasets);
    println!("model {} templates {:?}", classifier.model_id(), classifier.template_versions());
    for (iri, class) in &output.summary.per_class {
        println!("{iri}: {:?}", class.matrix);
    }
    println!("pooled: {:?}", output.summary.pooled_matrix());
    Ok(())
}
