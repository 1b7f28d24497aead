//! Command-line interface. Exit codes: 0 success, 1 runtime failure, 2 usage error.

use std::ffi::OsString;
use std::io::{BufRead, Write};
use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::classifier::{CotClassifier, Verdict};
use crate::config::{ConfigError, RunConfig};
use crate::dataset::{build_dataset, dataset_file_name, load_dataset_dir, sample_classes, save_dataset, SAMPLER_NAME, SAMPLING_MANIFEST};
use crate::error_analysis::{
    disagreements_from, record_annotation, AnnotationInput, AnnotationStore, DisagreementRecord, ErrorCause,
};
use crate::evaluator::run_evaluation;
use crate::fsutil::write_json_atomic;
use crate::gateway::LlmGateway;
use crate::report::{build_report, render, ReportFormat};
use crate::service;
use crate::store::{validate_run_id, RunStore};

#[derive(Debug, Parser)]
#[command(name = "kgaudit", version, about = "Audit class-membership relations in a knowledge graph with an LLM classifier")]
pub struct Cli {
    /// Configuration file (TOML). Built-in defaults are used when omitted.
    #[arg(long, short, global = true, env = "KGAUDIT_CONFIG")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample classes and write one dataset file per class.
    Sample(SampleArgs),
    /// Classify every example of a set of datasets and store the run.
    Classify(ClassifyArgs),
    /// Print the performance and error-analysis tables of a run.
    Report(ReportArgs),
    /// Review a run's disagreements in the terminal.
    Annotate(AnnotateArgs),
    /// Serve the review API (and UI assets, if configured).
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Endpoint name from the configuration.
    #[arg(long)]
    pub kg: String,
    /// Number of classes.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: Option<u64>,
    /// Positives (and at most as many negatives) per class.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub k: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory [default: <data_dir>/datasets/<kg>].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    /// Model name from the configuration.
    #[arg(long)]
    pub model: String,
    /// Endpoint whose datasets are classified.
    #[arg(long, required_unless_present = "datasets")]
    pub kg: Option<String>,
    /// Dataset directory [default: <data_dir>/datasets/<kg>].
    #[arg(long)]
    pub datasets: Option<PathBuf>,
    /// Run identifier [default: <model>-<timestamp>].
    #[arg(long)]
    pub run_id: Option<String>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    pub run_id: String,
    /// text, csv, markdown or json.
    #[arg(long, default_value = "text")]
    pub format: ReportFormat,
}

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    pub run_id: String,
    #[arg(long, env = "USER", default_value = "annotator")]
    pub annotator: String,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: SocketAddr,
}

/// A failed command and the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn runtime(e: impl std::fmt::Display) -> Self {
        Self {
            code: 1,
            message: e.to_string(),
        }
    }

    pub fn usage(e: impl std::fmt::Display) -> Self {
        Self {
            code: 2,
            message: e.to_string(),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Unknown { .. } => Self::usage(e),
            other => Self::runtime(other),
        }
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig, CliError> {
    match path {
        Some(p) => Ok(RunConfig::load(p)?),
        None => Ok(RunConfig::default()),
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run_with<I, T>(args: I, input: &mut dyn BufRead, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = if e.use_stderr() {
                write!(err, "{e}")
            } else {
                write!(out, "{e}")
            };
            return e.exit_code();
        }
    };
    match execute(cli, input, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message);
            e.code
        }
    }
}

pub fn execute(cli: Cli, input: &mut dyn BufRead, out: &mut dyn Write) -> Result<(), CliError> {
    let config = load_config(&cli.config)?;
    match cli.command {
        Command::Sample(a) => cmd_sample(&config, &a, out),
        Command::Classify(a) => cmd_classify(&config, &a, out),
        Command::Report(a) => cmd_report(&config, &a.run_id, a.format, out),
        Command::Annotate(a) => cmd_annotate(&config, &a.run_id, &a.annotator, input, out),
        Command::Serve(a) => cmd_serve(&config, a.bind, out),
    }
}

#[derive(Debug, Serialize)]
struct SampledClass {
    class_iri: String,
    superclass_iri: String,
    label: String,
    file: String,
    positives: usize,
    negatives: usize,
    flags: Vec<crate::dataset::DatasetFlag>,
}

#[derive(Debug, Serialize)]
struct SamplingManifest {
    kg: String,
    n_classes: usize,
    k_examples: usize,
    seed: u64,
    sampler: &'static str,
    classes: Vec<SampledClass>,
}

pub fn cmd_sample(config: &RunConfig, a: &SampleArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let n = a.n.map_or(config.sampling.n_classes, |v| v as usize);
    let k = a.k.map_or(config.sampling.k_examples, |v| v as usize);
    let seed = a.seed.unwrap_or(config.sampling.seed);
    if n == 0 {
        return Err(CliError::usage("--n must be at least 1"));
    }
    let options = config.sampling.options();
    let kg = config.open_kg(&a.kg)?;
    let gateway = LlmGateway::with_cache_dir(config.cache_dir().join("llm"));
    let describer = config.describer(&a.kg, kg.as_ref(), &gateway)?;
    let specs = sample_classes(kg.as_ref(), n, k, seed, &options, describer.as_ref()).map_err(CliError::runtime)?;
    let dir = a.out.clone().unwrap_or_else(|| config.datasets_dir(&a.kg));
    let mut classes = Vec::new();
    for spec in &specs {
        let dataset = build_dataset(kg.as_ref(), spec, k, seed, &options, describer.as_ref()).map_err(CliError::runtime)?;
        let file = dataset_file_name(spec);
        save_dataset(&dataset, &dir.join(&file)).map_err(CliError::runtime)?;
        classes.push(SampledClass {
            class_iri: spec.class_iri.clone(),
            superclass_iri: spec.superclass_iri.clone(),
            label: spec.label.clone(),
            file,
            positives: dataset.positives.len(),
            negatives: dataset.negatives.len(),
            flags: dataset.flags.clone(),
        });
    }
    let manifest = SamplingManifest {
        kg: a.kg.clone(),
        n_classes: n,
        k_examples: k,
        seed,
        sampler: SAMPLER_NAME,
        classes,
    };
    write_json_atomic(&dir.join(SAMPLING_MANIFEST), &manifest).map_err(CliError::runtime)?;
    writeln!(out, "{}", serde_json::to_string_pretty(&manifest).expect("manifest serializes")).map_err(CliError::runtime)?;
    Ok(())
}

fn default_run_id(model: &str) -> String {
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    let model: String = model
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect();
    format!("{model}-{stamp}")
}

pub fn cmd_classify(config: &RunConfig, a: &ClassifyArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let model = config.model(&a.model)?;
    let templates = config.templates()?;
    let run_id = a.run_id.clone().unwrap_or_else(|| default_run_id(&a.model));
    validate_run_id(&run_id).map_err(CliError::usage)?;
    let store = RunStore::new(config.data_dir());
    if store.exists(&run_id) {
        return Err(CliError::runtime(format!("run {run_id} already exists")));
    }
    // Checked before any work so that a missing credential leaves nothing behind.
    let gateway = LlmGateway::with_cache_dir(config.cache_dir().join("llm"));
    gateway.preflight(&model).map_err(CliError::runtime)?;
    let dir = match (&a.datasets, &a.kg) {
        (Some(d), _) => d.clone(),
        (None, Some(kg)) => config.datasets_dir(kg),
        (None, None) => return Err(CliError::usage("give --kg or --datasets")),
    };
    let datasets = load_dataset_dir(&dir).map_err(CliError::runtime)?;
    if datasets.is_empty() {
        return Err(CliError::runtime(format!("no datasets in {}", dir.display())));
    }
    gateway.begin_run(&run_id);
    let classifier = CotClassifier::new(&gateway, model, templates);
    let output = run_evaluation(&run_id, &classifier, &datasets);
    let usage = gateway.usage_report(&run_id, &config.prices).map_err(CliError::runtime)?;
    store.write_run(&output, Some(&usage)).map_err(CliError::runtime)?;
    let report = build_report(&store, &run_id).map_err(CliError::runtime)?;
    write!(out, "{}", render(&report, ReportFormat::Text).map_err(CliError::runtime)?).map_err(CliError::runtime)?;
    if let Some(cost) = usage.cost_usd {
        writeln!(out, "cost: ${cost:.4}").map_err(CliError::runtime)?;
    }
    if output.summary.is_complete() {
        Ok(())
    } else {
        Err(CliError::runtime(format!("run {run_id}: no class completed")))
    }
}

pub fn cmd_report(config: &RunConfig, run_id: &str, format: ReportFormat, out: &mut dyn Write) -> Result<(), CliError> {
    let store = RunStore::new(config.data_dir());
    let report = build_report(&store, run_id).map_err(CliError::runtime)?;
    out.write_all(render(&report, format).map_err(CliError::runtime)?.as_bytes())
        .map_err(CliError::runtime)
}

fn prompt(input: &mut dyn BufRead, out: &mut dyn Write, question: &str) -> Result<Option<String>, CliError> {
    write!(out, "{question}").and_then(|()| out.flush()).map_err(CliError::runtime)?;
    let mut line = String::new();
    match input.read_line(&mut line).map_err(CliError::runtime)? {
        0 => Ok(None),
        _ => Ok(Some(line.trim().to_string())),
    }
}

fn show_record(out: &mut dyn Write, i: usize, total: usize, r: &DisagreementRecord) -> std::io::Result<()> {
    writeln!(out, "\n[{i}/{total}] {} — {}", r.class_label, r.entity_label)?;
    writeln!(out, "class:       {}", r.class_iri)?;
    writeln!(out, "entity:      {}", r.entity_iri)?;
    writeln!(out, "definition:  {}", r.class_definition)?;
    writeln!(out, "description: {}", r.entity_description)?;
    writeln!(out, "rationale:   {}", r.rationale)?;
    writeln!(out, "KG says {}, classifier says {}", r.gold, r.predicted)
}

enum Step {
    Verdict(Verdict),
    Skip,
    Quit,
}

/// Terminal review loop: shows each disagreement not yet annotated by
/// `annotator` and records a verdict and cause for it.
pub fn cmd_annotate(
    config: &RunConfig,
    run_id: &str,
    annotator: &str,
    input: &mut dyn BufRead,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let store = RunStore::new(config.data_dir());
    let results = store.load_results(run_id).map_err(CliError::runtime)?;
    let records = disagreements_from(run_id, &results);
    let annotations = AnnotationStore::open(&store.run_dir(run_id).map_err(CliError::runtime)?).map_err(CliError::runtime)?;
    let done = annotations.snapshot();
    let queue: Vec<&DisagreementRecord> = records
        .iter()
        .filter(|r| !done.for_record(&r.record_id).any(|a| a.annotator_id == annotator))
        .collect();
    writeln!(out, "{} of {} disagreements left for {annotator}", queue.len(), records.len()).map_err(CliError::runtime)?;
    let causes: String = ErrorCause::ALL
        .iter()
        .enumerate()
        .map(|(i, c)| format!("[{}] {}", i + 1, c.title()))
        .collect::<Vec<_>>()
        .join("  ");
    let mut recorded = 0;
    'records: for (i, r) in queue.iter().enumerate() {
        show_record(out, i + 1, queue.len(), r).map_err(CliError::runtime)?;
        let step = loop {
            match prompt(input, out, "verdict: [p]ositive [n]egative [s]kip [q]uit > ")?.as_deref() {
                None | Some("q") => break Step::Quit,
                Some("s") => break Step::Skip,
                Some("p") => break Step::Verdict(Verdict::Positive),
                Some("n") => break Step::Verdict(Verdict::Negative),
                Some(_) => writeln!(out, "please answer p, n, s or q").map_err(CliError::runtime)?,
            }
        };
        let verdict = match step {
            Step::Quit => break,
            Step::Skip => continue,
            Step::Verdict(v) => v,
        };
        let cause = loop {
            match prompt(input, out, &format!("cause: {causes} > "))? {
                None => break 'records,
                Some(s) => match s.parse::<usize>().ok().and_then(|n| ErrorCause::ALL.get(n.wrapping_sub(1))) {
                    Some(c) => break *c,
                    None => writeln!(out, "please answer 1-4").map_err(CliError::runtime)?,
                },
            }
        };
        let Some(note) = prompt(input, out, "note (optional) > ")? else {
            break;
        };
        let body = AnnotationInput {
            annotator_id: annotator.into(),
            human_verdict: verdict.to_string(),
            cause: cause.to_string(),
            note: Some(note),
        };
        record_annotation(&annotations, &records, &r.record_id, &body).map_err(CliError::runtime)?;
        recorded += 1;
    }
    writeln!(out, "\nrecorded {recorded} annotation(s)").map_err(CliError::runtime)?;
    Ok(())
}

pub fn cmd_serve(config: &RunConfig, bind: SocketAddr, out: &mut dyn Write) -> Result<(), CliError> {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(CliError::runtime)?;
    let app = service::router(RunStore::new(config.data_dir()), config.static_dir());
    runtime.block_on(async {
        let listener = service::bind(bind).await.map_err(CliError::runtime)?;
        let addr = listener.local_addr().map_err(CliError::runtime)?;
        writeln!(out, "serving http://{addr}/api/v1/runs (Ctrl-C to stop)").map_err(CliError::runtime)?;
        let _ = out.flush();
        service::serve(listener, app, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(CliError::runtime)
    })
}
