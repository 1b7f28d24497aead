use std::collections::BTreeMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::GatewayError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageRecord {
    pub model_id: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub cached: bool,
}

/// USD per 1,000 tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelPrice {
    pub input_per_1k: f64,
    pub output_per_1k: f64,
}

pub type PriceTable = BTreeMap<String, ModelPrice>;

/// Token totals for one model. Only calls that reached the provider are billed;
/// cache replays are counted in `cached_calls` but not in the token totals.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelUsage {
    pub calls: u64,
    pub cached_calls: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
    /// `None` when the price table has no entry for the model.
    pub cost_usd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct UsageReport {
    pub run_id: String,
    pub per_model: BTreeMap<String, ModelUsage>,
    pub input_tokens: u64,
    pub output_tokens: u64,
    /// `None` if any model's cost is unknown.
    pub cost_usd: Option<f64>,
}

impl UsageReport {
    pub fn from_records(run_id: &str, records: &[UsageRecord], prices: &PriceTable) -> Self {
        let mut per_model: BTreeMap<String, ModelUsage> = BTreeMap::new();
        for r in records {
            let m = per_model.entry(r.model_id.clone()).or_default();
            m.calls += 1;
            if r.cached {
                m.cached_calls += 1;
            } else {
                m.input_tokens += r.input_tokens;
                m.output_tokens += r.output_tokens;
            }
        }
        for (model, usage) in per_model.iter_mut() {
            usage.cost_usd = prices.get(model).map(|p| {
                usage.input_tokens as f64 / 1000.0 * p.input_per_1k + usage.output_tokens as f64 / 1000.0 * p.output_per_1k
            });
        }
        let cost_usd = per_model.values().map(|m| m.cost_usd).sum::<Option<f64>>();
        Self {
            run_id: run_id.to_string(),
            input_tokens: per_model.values().map(|m| m.input_tokens).sum(),
            output_tokens: per_model.values().map(|m| m.output_tokens).sum(),
            per_model,
            cost_usd,
        }
    }
}

#[derive(Debug, Default)]
pub struct UsageLedger {
    runs: Mutex<BTreeMap<String, Vec<UsageRecord>>>,
}

impl UsageLedger {
    pub fn register(&self, run_id: &str) {
        self.runs
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .entry(run_id.to_string())
            .or_default();
    }

    pub fn record(&self, run_id: &str, record: UsageRecord) {
        self.runs
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .entry(run_id.to_string())
            .or_default()
            .push(record);
    }

    pub fn records(&self, run_id: &str) -> Option<Vec<UsageRecord>> {
        self.runs.lock().unwrap_or_else(|e| e.into_inner()).get(run_id).cloned()
    }

    pub fn report(&self, run_id: &str, prices: &PriceTable) -> Result<UsageReport, GatewayError> {
        let records = self.records(run_id).ok_or_else(|| GatewayError::UnknownRun(run_id.to_string()))?;
        Ok(UsageReport::from_records(run_id, &records, prices))
    }
}
