//! Renders a stored run as text, markdown, CSV and JSON.

use kgaudit::cli::run_with;
use kgaudit::report::{build_report, render, ReportFormat};
use kgaudit::store::RunStore;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let config = toy_config(dir.path())?;
    for args in [vec!["sample", "--kg", "toy"], vec!["classify", "--kg", "toy", "--model", "mock", "--run-id", "demo"]] {
        let argv = ["kgaudit", "--config", &config].into_iter().chain(args);
        let code = run_with(argv, &mut std::io::empty(), &mut std::io::sink(), &mut std::io::stderr());
        assert_eq!(code, 0);
    }
    let report = build_report(&RunStore::new(dir.path().join("data")), "demo")?;
    for format in [ReportFormat::Text, ReportFormat::Markdown, ReportFormat::Csv, ReportFormat::Json] {
        println!("==== {format:?}\n{}", render(&report, format)?);
    }
    Ok(())
}

/// Copies the toy configuration with its data and cache directories moved into `dir`.
fn toy_config(dir: &std::path::Path) -> std::io::Result<String> {
    let fixtures = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/toy");
    let text = std::fs::read_to_string(fixtures.join("config.toml"))?
        .replace("../../../../target/kgaudit-demo", &dir.to_string_lossy());
    let text = ["animals.ttl", "descriptions.json", "mock_script.json"]
        .iter()
        .fold(text, |t, f| t.replace(&format!("\"{f}\""), &format!("{:?}", fixtures.join(f))));
    let path = dir.join("config.toml");
    std::fs::write(&path, text)?;
    Ok(path.to_string_lossy().into_owned())
}
