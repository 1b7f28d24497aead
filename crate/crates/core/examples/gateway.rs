//! Cached, metered completions through the gateway with a scripted model.

use kgaudit::gateway::{LlmGateway, MockScript, ModelConfig, ModelPrice, PriceTable};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cache = tempfile::tempdir()?;
    let gateway = LlmGateway::with_cache_dir(cache.path());
    let model = ModelConfig::scripted(
        "mock",
        MockScript::new().rule("capital", "Paris").rule("*", "I don't know."),
    );
    let prices: PriceTable = [("mock".to_string(), ModelPrice { input_per_1k: 0.01, output_per_1k: 0.03 })].into();

    gateway.begin_run("demo");
    for prompt in ["What is the capital of France?", "What is the capital of France?", "Why?"] {
        let c = gateway.complete(&model, prompt)?;
        println!("{prompt:<32} -> {:<14} cached={}", c.text, c.cached);
    }
    let usage = gateway.usage_report("demo", &prices)?;
    println!("\n{}", serde_json::to_string_pretty(&usage)?);
    println!("cache entries: {}", gateway.cache().len());
    Ok(())
}
