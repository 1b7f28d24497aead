//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on failure.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use common::{
    cli, label_lists, normalized_summary, oracle_extension, oracle_metrics, random_graph, results_files, toy_config, zoo,
    OxigraphTransport,
};
use kgaudit::classifier::{parse_verdict, ParseStatus, Verdict};
use kgaudit::error_analysis::{extract_disagreements, CauseBreakdown, ErrorCause};
use kgaudit::evaluator::{accuracy, auc, cohen_kappa, f1_macro, ConfusionMatrix};
use kgaudit::kg::{ExtensionStrategy, KgEndpoint, KnowledgeGraph, MemoryGraph, SparqlClient};
use kgaudit::store::RunStore;
use rand::{Rng, SeedableRng};

type Outcome = Result<String, String>;
type Check = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        {
            let holds: bool = $cond;
            if !holds {
                return Err(format!($($fmt)+));
            }
        }
    };
}

fn within(budget: Duration, started: Instant) -> Outcome {
    let elapsed = started.elapsed();
    if elapsed > budget {
        Err(format!("took {elapsed:.2?}, budget {budget:?}"))
    } else {
        Ok(format!("{elapsed:.2?}"))
    }
}

fn metric_oracle() -> Outcome {
    let started = Instant::now();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(20240501);
    let mut checked = 0;
    while checked < 1000 {
        let counts: [u64; 4] = std::array::from_fn(|_| rng.gen_range(0..=50));
        let [tp, fp, fn_, tn] = counts;
        if counts.iter().sum::<u64>() == 0 {
            continue;
        }
        let m = ConfusionMatrix::new(tp, fp, fn_, tn);
        let (gold, pred) = label_lists(tp, fp, fn_, tn);
        let o = oracle_metrics(&gold, &pred);
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9;
        ensure!(close(accuracy(&m).unwrap(), o.accuracy), "accuracy differs for {counts:?}");
        ensure!(close(f1_macro(&m).unwrap(), o.f1_macro), "f1_macro differs for {counts:?}");
        ensure!(close(cohen_kappa(&m).unwrap().value, o.kappa), "kappa differs for {counts:?}");
        match auc(&m) {
            Ok(v) => ensure!(close(v, o.auc), "auc differs for {counts:?}"),
            Err(_) => ensure!(o.auc.is_nan(), "auc undefined only when a gold class is empty: {counts:?}"),
        }
        checked += 1;
    }
    within(Duration::from_secs(5), started).map(|t| format!("1000 matrices, {t}"))
}

fn kappa_spots() -> Outcome {
    let k = |tp, fp, fn_, tn| cohen_kappa(&ConfusionMatrix::new(tp, fp, fn_, tn)).unwrap().value;
    ensure!(k(10, 0, 0, 10) == 1.0, "perfect agreement gave {}", k(10, 0, 0, 10));
    ensure!(k(8, 2, 3, 7) == 0.5, "[8,2,3,7] gave {}", k(8, 2, 3, 7));
    let balanced = ConfusionMatrix::new(415, 85, 85, 415);
    ensure!(accuracy(&balanced).unwrap() == 0.83, "balanced accuracy");
    let v = k(415, 85, 85, 415);
    ensure!((v - 0.660).abs() <= 1e-9, "balanced 0.830 matrix gave {v}");
    Ok("1.0, 0.5, 0.660".into())
}

fn cause_table() -> Outcome {
    let close = |a: f64, b: f64| (a - b).abs() <= 0.05;
    let rows: [([u64; 4], [f64; 4]); 3] = [
        ([34, 15, 33, 54], [25.0, 11.0, 24.3, 39.7]),
        ([28, 19, 20, 10], [36.4, 24.7, 26.0, 13.0]),
        ([62, 34, 53, 64], [29.1, 16.0, 24.9, 30.0]),
    ];
    for (counts, expected) in rows {
        let b = CauseBreakdown::from_counts(counts);
        for (cause, want) in ErrorCause::ALL.into_iter().zip(expected) {
            ensure!(close(b.percent(cause), want), "{counts:?} {cause:?}: {} vs {want}", b.percent(cause));
        }
    }
    let merged = CauseBreakdown::from_counts(rows[0].0).merge(&CauseBreakdown::from_counts(rows[1].0));
    ensure!(merged == CauseBreakdown::from_counts(rows[2].0), "per-graph rows do not merge into the total");
    ensure!(merged.total == 213, "total {}", merged.total);
    ensure!(close(merged.kg_attributed_percent, 40.9), "KG share {}", merged.kg_attributed_percent);
    Ok(format!("KG-attributed {:.1}%", merged.kg_attributed_percent))
}

const MAMMAL: &str = "http://example.org/zoo/Mammal";
const BIRD: &str = "http://example.org/zoo/Bird";

fn run_cli(args: &[&str]) -> Result<String, String> {
    let (code, out, err) = cli(args, "");
    if code == 0 {
        Ok(out)
    } else {
        Err(format!("`{}` exited {code}: {err}", args.join(" ")))
    }
}

fn scripted_end_to_end() -> Outcome {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let config = toy_config(dir.path());
    let config = config.to_str().unwrap();
    run_cli(&["--config", config, "sample", "--kg", "toy"])?;
    for run in ["cold", "warm"] {
        run_cli(&["--config", config, "classify", "--kg", "toy", "--model", "mock", "--run-id", run])?;
    }
    let store = RunStore::new(dir.path().join("data"));
    let summary = store.load_summary("cold").unwrap();
    ensure!(summary.per_class.len() == 2, "expected 2 classes");
    let mammal = &summary.per_class[MAMMAL];
    ensure!(mammal.matrix == ConfusionMatrix::new(4, 1, 1, 4), "Mammal matrix {:?}", mammal.matrix);
    let mut bird = ConfusionMatrix::new(4, 1, 0, 4);
    bird.invalid = 1;
    ensure!(summary.per_class[BIRD].matrix == bird, "Bird matrix {:?}", summary.per_class[BIRD].matrix);
    let metrics = mammal.metrics.as_ref().unwrap();
    ensure!(metrics.accuracy == 0.8 && (metrics.kappa - 0.6).abs() < 1e-12, "Mammal metrics {metrics:?}");
    ensure!(extract_disagreements(&store, "cold").unwrap().len() == 3, "disagreement count");

    let runs = dir.path().join("data/runs");
    ensure!(results_files(&runs.join("cold")) == results_files(&runs.join("warm")), "results differ on rerun");
    ensure!(
        normalized_summary(&runs.join("cold/summary.json")) == normalized_summary(&runs.join("warm/summary.json")),
        "summaries differ on rerun"
    );
    let usage = store.load_usage("warm").unwrap().unwrap();
    ensure!(usage.per_model.values().all(|m| m.cached_calls == m.calls), "warm run reached the model");
    within(Duration::from_secs(10), started)
}

fn extension_oracle() -> Outcome {
    let started = Instant::now();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let mut cyclic_cases = 0;
    for case in 0..200 {
        let cyclic = case % 4 == 0;
        cyclic_cases += cyclic as usize;
        let triples = random_graph(&mut rng, cyclic);
        let class = zoo(&format!("C{}", rng.gen_range(0..8)));
        let expected = oracle_extension(&triples, &class);
        let memory = MemoryGraph::new(KgEndpoint::rdfs("g", "http://localhost/sparql"), triples.clone());
        ensure!(memory.extension(&class, 10).unwrap().members == expected, "in-memory case {case}");
        let strategy = if case % 2 == 0 { ExtensionStrategy::PropertyPath } else { ExtensionStrategy::Iterative };
        let client = SparqlClient::with_transport(
            KgEndpoint::rdfs("g", "http://localhost/sparql"),
            std::sync::Arc::new(OxigraphTransport::new(&triples)),
        )
        .unwrap()
        .with_strategy(strategy);
        ensure!(client.extension(&class, 10).unwrap().members == expected, "SPARQL case {case} ({strategy:?})");
    }
    within(Duration::from_secs(5), started).map(|t| format!("200 graphs, {cyclic_cases} cyclic, {t}"))
}

fn conservation() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = toy_config(dir.path());
    let config = config.to_str().unwrap();
    let store = RunStore::new(dir.path().join("data"));
    for seed in ["7", "11", "23"] {
        run_cli(&["--config", config, "sample", "--kg", "toy", "--seed", seed])?;
        let run = format!("seed{seed}");
        run_cli(&["--config", config, "classify", "--kg", "toy", "--model", "mock", "--run-id", &run])?;
        let summary = store.load_summary(&run).unwrap();
        for (class, c) in &summary.per_class {
            ensure!(c.matrix.total() as usize == c.positives + c.negatives, "seed {seed} {class}: counts not conserved");
        }
        let pooled = summary.pooled_matrix();
        let records = extract_disagreements(&store, &run).unwrap();
        ensure!(records.len() as u64 == pooled.fp + pooled.fn_, "seed {seed}: {} records vs fp+fn", records.len());
    }
    Ok("3 fixture runs".into())
}

fn verdict_parser() -> Outcome {
    use ParseStatus::{Invalid as I, Ok as K, Repaired as R};
    use Verdict::{Negative as N, Positive as P};
    let cases: [(&str, Option<Verdict>, ParseStatus); 30] = [
        ("positive", Some(P), K),
        ("negative", Some(N), K),
        ("POSITIVE", Some(P), K),
        ("Negative", Some(N), K),
        ("  positive  \n", Some(P), K),
        ("positive.", Some(P), K),
        ("\"negative\"", Some(N), K),
        ("“Positive”", Some(P), K),
        ("**NEGATIVE**", Some(N), K),
        ("'positive'!", Some(P), K),
        ("(negative)", Some(N), K),
        ("The answer is NEGATIVE.", Some(N), R),
        ("Answer: positive", Some(P), R),
        ("Positive — the definition clearly applies.", Some(P), R),
        ("Reasoning...\nnegative", Some(N), R),
        ("It could look negative at first.\nFinal answer: positive", Some(P), R),
        ("The entity is positive\n\n", Some(P), R),
        ("positive\nnegative", Some(N), R),
        ("Verdict: Negative", Some(N), R),
        ("I conclude positive\nThat is my answer.", Some(P), R),
        ("negatively", None, I),
        ("positive or negative", None, I),
        ("maybe", None, I),
        ("", None, I),
        ("   \n  ", None, I),
        ("Both POSITIVE and NEGATIVE apply.", None, I),
        ("Positive? Negative?\n", None, I),
        ("unsure", None, I),
        ("yes", None, I),
        ("The class is positive.\nActually negative and positive.", None, I),
    ];
    for (raw, verdict, status) in cases {
        let parsed = parse_verdict(raw);
        ensure!(
            parsed.verdict == verdict && parsed.status == status,
            "{raw:?}: got {:?}/{:?}",
            parsed.verdict,
            parsed.status
        );
    }
    Ok(format!("{} cases", cases.len()))
}

/// Runs against a hosted model when `KGAUDIT_LIVE_MODEL` and its API key are set.
fn live_smoke() -> Option<Outcome> {
    let model = std::env::var("KGAUDIT_LIVE_MODEL").ok()?;
    let key_env = std::env::var("KGAUDIT_LIVE_KEY_ENV").unwrap_or_else(|_| "OPENAI_API_KEY".into());
    std::env::var(&key_env).ok()?;
    Some(live_run(&model, &key_env))
}

fn live_run(model: &str, key_env: &str) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let path = toy_config(dir.path());
    let mut text = std::fs::read_to_string(&path)
        .unwrap()
        .replace("n_classes = 2", "n_classes = 1")
        .replace("k_examples = 5", "k_examples = 3");
    text.push_str(&format!(
        "\n[models.live]\nmodel_id = {model:?}\nprovider = \"openai_compatible\"\napi_key_env = {key_env:?}\n"
    ));
    if let Ok(url) = std::env::var("KGAUDIT_LIVE_BASE_URL") {
        text.push_str(&format!("base_url = {url:?}\n"));
    }
    std::fs::write(&path, text).unwrap();
    let config = path.to_str().unwrap();
    run_cli(&["--config", config, "sample", "--kg", "toy"])?;
    for run in ["live", "replay"] {
        run_cli(&["--config", config, "classify", "--kg", "toy", "--model", "live", "--run-id", run])?;
    }
    let store = RunStore::new(dir.path().join("data"));
    let summary = store.load_summary("live").unwrap();
    let class = summary.per_class.values().next().ok_or("no class summary")?;
    let m = class.metrics.as_ref().ok_or("no metrics")?;
    ensure!((0.0..=1.0).contains(&m.accuracy) && (-1.0..=1.0).contains(&m.kappa), "metrics out of range: {m:?}");
    let replay = store.load_usage("replay").unwrap().unwrap();
    ensure!(replay.per_model.values().all(|u| u.cached_calls == u.calls), "replay reached the provider");
    ensure!(
        results_files(&dir.path().join("data/runs/live")) == results_files(&dir.path().join("data/runs/replay")),
        "replay differs"
    );
    Ok(format!("accuracy {:.2}, kappa {:.2}", m.accuracy, m.kappa))
}

fn report(name: &str, outcome: Option<Outcome>) -> bool {
    match outcome {
        None => {
            println!("SKIP  {name}  (set KGAUDIT_LIVE_MODEL and an API key to run)");
            true
        }
        Some(Ok(detail)) => {
            println!("PASS  {name}  ({detail})");
            true
        }
        Some(Err(why)) => {
            println!("FAIL  {name}  ({why})");
            false
        }
    }
}

fn guarded(check: fn() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
        let msg = panic
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into());
        Err(msg)
    })
}

fn main() {
    std::env::set_current_dir(Path::new(env!("CARGO_MANIFEST_DIR"))).unwrap();
    let checks: [Check; 7] = [
        ("metric oracle equivalence", metric_oracle),
        ("kappa spot values", kappa_spots),
        ("error-cause table arithmetic", cause_table),
        ("scripted end-to-end run", scripted_end_to_end),
        ("extension oracle", extension_oracle),
        ("counts conservation and disagreement identity", conservation),
        ("verdict parser table", verdict_parser),
    ];
    let mut ok = true;
    for (name, check) in checks {
        ok &= report(name, Some(guarded(check)));
    }
    let live = catch_unwind(live_smoke).unwrap_or_else(|_| Some(Err("panicked".into())));
    ok &= report("live smoke test", live);
    if !ok {
        std::process::exit(1);
    }
}
