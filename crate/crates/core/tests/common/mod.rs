//! Helpers shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use kgaudit::classifier::Verdict;
use kgaudit::kg::{HttpReply, RdfTerm, SparqlRequest, TermKind, Transport, TransportError, Triple, RDF_TYPE, RDFS_SUBCLASS_OF};
use oxigraph::io::RdfFormat;
use oxigraph::sparql::results::QueryResultsFormat;
use oxigraph::sparql::QueryResults;
use oxigraph::store::Store;
use rand::Rng;

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join("toy")
}

/// Writes a copy of the toy configuration whose paths point into `dir`.
pub fn toy_config(dir: &Path) -> PathBuf {
    let fixtures = fixture_dir();
    let text = std::fs::read_to_string(fixtures.join("config.toml"))
        .unwrap()
        .replace("../../../../target/kgaudit-demo/data", &dir.join("data").to_string_lossy())
        .replace("../../../../target/kgaudit-demo/cache", &dir.join("cache").to_string_lossy());
    let text = ["animals.ttl", "descriptions.json", "mock_script.json"]
        .iter()
        .fold(text, |t, f| t.replace(&format!("\"{f}\""), &format!("{:?}", fixtures.join(f))));
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path
}

/// Runs the CLI in-process; returns (exit code, stdout, stderr).
pub fn cli(args: &[&str], stdin: &str) -> (i32, String, String) {
    let mut input = std::io::Cursor::new(stdin.as_bytes().to_vec());
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let argv = std::iter::once("kgaudit").chain(args.iter().copied());
    let code = kgaudit::cli::run_with(argv, &mut input, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

/// In-process SPARQL engine behind the client's transport interface.
pub struct OxigraphTransport {
    pub store: Store,
    /// Answer 400 to queries using `*` property paths.
    pub reject_paths: bool,
    pub calls: AtomicUsize,
}

impl OxigraphTransport {
    pub fn new(triples: &[Triple]) -> Self {
        let store = Store::new().unwrap();
        let nt: String = triples.iter().map(|t| format!("{t}\n")).collect();
        store.load_from_reader(RdfFormat::NTriples, nt.as_bytes()).unwrap();
        Self {
            store,
            reject_paths: false,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

impl Transport for OxigraphTransport {
    fn execute(&self, request: &SparqlRequest) -> Result<HttpReply, TransportError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let reply = |status, content_type: &str, body: Vec<u8>| HttpReply {
            status,
            content_type: Some(content_type.to_string()),
            body,
        };
        if self.reject_paths && request.query.contains(">*") {
            return Ok(reply(400, "text/plain", b"property paths are not supported".to_vec()));
        }
        let results = match self.store.query(request.query.as_str()) {
            Ok(r) => r,
            Err(e) => return Ok(reply(400, "text/plain", e.to_string().into_bytes())),
        };
        let mut body = Vec::new();
        Ok(match results {
            QueryResults::Graph(_) => {
                results.write_graph(&mut body, RdfFormat::NTriples).unwrap();
                reply(200, "application/n-triples", body)
            }
            other => {
                other.write(&mut body, QueryResultsFormat::Json).unwrap();
                reply(200, "application/sparql-results+json", body)
            }
        })
    }
}

/// ext(c) by naive fixpoint: close the class set under "is a subclass of a
/// member", then collect IRI subjects typed with any member.
pub fn oracle_extension(triples: &[Triple], class: &str) -> BTreeSet<String> {
    let mut classes: BTreeSet<String> = BTreeSet::from([class.to_string()]);
    loop {
        let before = classes.len();
        for t in triples {
            if t.property.value == RDFS_SUBCLASS_OF
                && t.subject.kind == TermKind::Iri
                && t.object.kind == TermKind::Iri
                && classes.contains(&t.object.value)
            {
                classes.insert(t.subject.value.clone());
            }
        }
        if classes.len() == before {
            break;
        }
    }
    triples
        .iter()
        .filter(|t| {
            t.property.value == RDF_TYPE
                && t.subject.kind == TermKind::Iri
                && t.object.kind == TermKind::Iri
                && classes.contains(&t.object.value)
        })
        .map(|t| t.subject.value.clone())
        .collect()
}

pub fn zoo(name: &str) -> String {
    format!("http://example.org/g/{name}")
}

/// A random toy graph: up to 8 classes on levels 0..=5 with subclass edges
/// pointing one level up, instances (some blank, some literal-typed noise),
/// and an optional back edge that creates a cycle. At most 100 triples.
pub fn random_graph(rng: &mut impl Rng, cyclic: bool) -> Vec<Triple> {
    let n_classes = rng.gen_range(2..=8);
    let levels: Vec<usize> = (0..n_classes).map(|i| if i == 0 { 0 } else { rng.gen_range(1..=5) }).collect();
    let class = |i: usize| zoo(&format!("C{i}"));
    let mut triples = Vec::new();
    for i in 1..n_classes {
        let parents: Vec<usize> = (0..n_classes).filter(|&j| levels[j] + 1 == levels[i]).collect();
        let candidates = if parents.is_empty() { vec![0] } else { parents };
        for _ in 0..rng.gen_range(1..=2) {
            let p = candidates[rng.gen_range(0..candidates.len())];
            if p != i {
                triples.push(Triple::iris(&class(i), RDFS_SUBCLASS_OF, &class(p)).unwrap());
            }
        }
    }
    if cyclic && n_classes > 1 {
        let deepest = (0..n_classes).max_by_key(|&i| levels[i]).unwrap();
        triples.push(Triple::iris(&class(0), RDFS_SUBCLASS_OF, &class(deepest)).unwrap());
    }
    let n_entities = rng.gen_range(0..40);
    for e in 0..n_entities {
        let c = class(rng.gen_range(0..n_classes));
        let subject = if rng.gen_bool(0.1) {
            RdfTerm::blank(format!("b{e}"))
        } else {
            RdfTerm::iri(zoo(&format!("e{e}"))).unwrap()
        };
        triples.push(Triple::new(subject, RdfTerm::iri(RDF_TYPE).unwrap(), RdfTerm::iri(c).unwrap()).unwrap());
    }
    if rng.gen_bool(0.3) {
        triples.push(
            Triple::new(
                RdfTerm::iri(zoo("e0")).unwrap(),
                RdfTerm::iri(RDF_TYPE).unwrap(),
                RdfTerm::literal("C0"),
            )
            .unwrap(),
        );
    }
    triples.sort_by_key(|t| t.to_string());
    triples.dedup();
    triples.truncate(100);
    triples
}

/// Metrics recomputed from raw label lists by counting agreements directly.
pub struct OracleMetrics {
    pub accuracy: f64,
    pub auc: f64,
    pub f1_macro: f64,
    pub kappa: f64,
}

pub fn oracle_metrics(gold: &[Verdict], predicted: &[Verdict]) -> OracleMetrics {
    let n = gold.len() as f64;
    let agree = gold.iter().zip(predicted).filter(|(g, p)| g == p).count() as f64;
    let rate = |class: Verdict| {
        let members: Vec<usize> = (0..gold.len()).filter(|&i| gold[i] == class).collect();
        members.iter().filter(|&&i| predicted[i] == class).count() as f64 / members.len() as f64
    };
    let f1 = |class: Verdict| {
        let both = (0..gold.len()).filter(|&i| gold[i] == class && predicted[i] == class).count() as f64;
        let g = gold.iter().filter(|&&v| v == class).count() as f64;
        let p = predicted.iter().filter(|&&v| v == class).count() as f64;
        (g + p > 0.0).then(|| 2.0 * both / (g + p))
    };
    let f1s: Vec<f64> = [f1(Verdict::Positive), f1(Verdict::Negative)].into_iter().flatten().collect();
    let share = |v: &[Verdict], class: Verdict| v.iter().filter(|&&x| x == class).count() as f64 / n;
    let p_o = agree / n;
    let p_e = share(gold, Verdict::Positive) * share(predicted, Verdict::Positive)
        + share(gold, Verdict::Negative) * share(predicted, Verdict::Negative);
    OracleMetrics {
        accuracy: p_o,
        auc: (rate(Verdict::Positive) + rate(Verdict::Negative)) / 2.0,
        f1_macro: f1s.iter().sum::<f64>() / f1s.len() as f64,
        kappa: if (1.0 - p_e).abs() < 1e-15 { 0.0 } else { (p_o - p_e) / (1.0 - p_e) },
    }
}

/// Expands counts into aligned label lists.
pub fn label_lists(tp: u64, fp: u64, fn_: u64, tn: u64) -> (Vec<Verdict>, Vec<Verdict>) {
    use Verdict::{Negative as N, Positive as P};
    let mut gold = Vec::new();
    let mut pred = Vec::new();
    for (count, g, p) in [(tp, P, P), (fp, N, P), (fn_, P, N), (tn, N, N)] {
        for _ in 0..count {
            gold.push(g);
            pred.push(p);
        }
    }
    (gold, pred)
}

/// summary.json without the fields that legitimately differ between reruns.
pub fn normalized_summary(path: &Path) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap();
    for key in ["started_at", "finished_at", "run_id"] {
        v.as_object_mut().unwrap().remove(key);
    }
    v
}

/// Every results file of a run, by file name.
pub fn results_files(run_dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(run_dir.join("results"))
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}
