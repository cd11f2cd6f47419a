//! Relative training cost in FLOPs.
//!
//! Training compute is taken as proportional to
//! `num_params * steps * batch_size`; sequence length is assumed equal
//! across compared runs and cancels. Costs are percentages of a baseline.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmt::percent;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunCost {
    pub model_name: String,
    pub num_params: u64,
    pub steps: u64,
    pub batch_size: u64,
}

impl RunCost {
    pub fn new(model_name: impl Into<String>, num_params: u64, steps: u64, batch_size: u64) -> Result<Self> {
        let run = RunCost {
            model_name: model_name.into(),
            num_params,
            steps,
            batch_size,
        };
        run.validate()?;
        Ok(run)
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("num_params", self.num_params),
            ("steps", self.steps),
            ("batch_size", self.batch_size),
        ] {
            if v == 0 {
                return Err(Error::invalid(format!(
                    "{field} of run {:?} must be positive",
                    self.model_name
                )));
            }
        }
        Ok(())
    }

    pub fn with_steps(&self, steps: u64) -> Self {
        RunCost { steps, ..self.clone() }
    }
}

/// `100 * (params * steps * batch) / (baseline params * steps * batch)`,
/// full precision.
pub fn relative_cost(run: &RunCost, baseline: &RunCost) -> Result<f64> {
    run.validate()?;
    baseline.validate()?;
    let ratio = (run.num_params as f64 / baseline.num_params as f64)
        * (run.steps as f64 / baseline.steps as f64)
        * (run.batch_size as f64 / baseline.batch_size as f64);
    Ok(100.0 * ratio)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineCost {
    pub components: Vec<RunCost>,
    pub baseline: RunCost,
    /// Percent of the baseline.
    pub relative_total: f64,
}

impl PipelineCost {
    pub fn from_components(components: Vec<RunCost>, baseline: RunCost) -> Result<Self> {
        let mut total = 0.0;
        for c in &components {
            total += relative_cost(c, &baseline)?;
        }
        Ok(PipelineCost {
            components,
            baseline,
            relative_total: total,
        })
    }

    pub fn display_total(&self) -> String {
        percent(self.relative_total)
    }
}

/// Reference run plus main run, both relative to `baseline`.
pub fn pipeline_cost(reference: &RunCost, main: &RunCost, baseline: &RunCost) -> Result<PipelineCost> {
    PipelineCost::from_components(vec![reference.clone(), main.clone()], baseline.clone())
}

/// Parameter counts of the pretrained models the original experiments
/// compared, keyed by lowercase name.
const BUILTIN_MODELS: &[(&str, u64)] = &[
    ("deberta-v3-small", 44_000_000),
    ("deberta-v3-base", 86_000_000),
    ("deberta-v3-large", 304_000_000),
    ("electra-small", 14_000_000),
    ("electra-base", 110_000_000),
    ("electra-large", 335_000_000),
    ("bert-large", 345_000_000),
    ("roberta-large", 355_000_000),
    ("tinybert", 4_400_000),
];

pub const DEFAULT_BASELINE_MODEL: &str = "deberta-v3-large";

/// Model-size registry. Names are case-insensitive and `_` matches `-`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelRegistry {
    entries: BTreeMap<String, u64>,
}

impl Default for ModelRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

fn normalize(name: &str) -> String {
    name.trim().to_ascii_lowercase().replace('_', "-")
}

impl ModelRegistry {
    pub fn builtin() -> Self {
        ModelRegistry {
            entries: BUILTIN_MODELS.iter().map(|(n, p)| (n.to_string(), *p)).collect(),
        }
    }

    pub fn empty() -> Self {
        ModelRegistry { entries: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: &str, num_params: u64) -> Result<()> {
        if num_params == 0 {
            return Err(Error::invalid(format!("model {name:?} needs a positive parameter count")));
        }
        self.entries.insert(normalize(name), num_params);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<u64> {
        self.entries.get(&normalize(name)).copied()
    }

    pub fn lookup(&self, name: &str) -> Result<u64> {
        self.get(name).ok_or_else(|| {
            Error::invalid(format!(
                "unknown model {name:?}; known models: {}",
                self.names().collect::<Vec<_>>().join(", ")
            ))
        })
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u64)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Merges `model,num_params` CSV rows over the current entries.
    pub fn extend_from_csv<R: Read>(&mut self, source: R) -> Result<()> {
        #[derive(Deserialize)]
        struct Row {
            model: String,
            num_params: u64,
        }
        let mut reader = csv::Reader::from_reader(source);
        for row in reader.deserialize() {
            let row: Row = row?;
            self.insert(&row.model, row.num_params)?;
        }
        Ok(())
    }

    /// A run of `name` with the given steps and batch size.
    pub fn run(&self, name: &str, steps: u64, batch_size: u64) -> Result<RunCost> {
        RunCost::new(normalize(name), self.lookup(name)?, steps, batch_size)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostRow {
    pub method: String,
    pub main_model: String,
    pub ref_model: Option<String>,
    pub relative_cost: f64,
}

/// Writes `method,main_model,ref_model,relative_cost`; an absent reference
/// is written as `-`.
pub fn write_cost_csv<W: Write>(rows: &[CostRow], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["method", "main_model", "ref_model", "relative_cost"])?;
    for r in rows {
        w.write_record([
            r.method.as_str(),
            r.main_model.as_str(),
            r.ref_model.as_deref().unwrap_or("-"),
            &percent(r.relative_cost),
        ])?;
    }
    w.flush()?;
    Ok(())
}
