//! Training dynamics: per-instance true-class probabilities across the
//! checkpoints of one training run, plus the `ftft-dyn-1` wire format.
//!
//! The wire format is line-delimited JSON. The first line is a header,
//! every following line is one instance:
//!
//! ```text
//! {"schema_version":"ftft-dyn-1","run_id":"r0","model_name":"mlp","num_params":81,"dataset_name":"toy","num_instances":1,"num_checkpoints":3}
//! {"id":0,"gold":1,"p_true":[0.2,0.5,0.9]}
//! ```
//!
//! Unknown keys are ignored on read and never emitted on write.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: &str = "ftft-dyn-1";

/// Identifies a training instance within a run. Ids need not be dense.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InstanceId(pub u64);

impl fmt::Display for InstanceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl From<u64> for InstanceId {
    fn from(id: u64) -> Self {
        InstanceId(id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsHeader {
    pub schema_version: String,
    pub run_id: String,
    pub model_name: String,
    pub num_params: u64,
    pub dataset_name: String,
    pub num_instances: usize,
    pub num_checkpoints: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub id: InstanceId,
    pub gold: u32,
    pub p_true: Vec<f64>,
}

/// Validated training dynamics of one run.
///
/// Construct through [`TrainingDynamics::new`] or [`parse_dynamics`]; both
/// enforce that every series has `num_checkpoints >= 2` finite values in
/// `[0, 1]` and that ids are unique.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingDynamics {
    run_id: String,
    model_name: String,
    num_params: u64,
    dataset_name: String,
    num_checkpoints: usize,
    records: Vec<InstanceRecord>,
}

impl TrainingDynamics {
    pub fn new(
        run_id: impl Into<String>,
        model_name: impl Into<String>,
        num_params: u64,
        dataset_name: impl Into<String>,
        num_checkpoints: usize,
        records: Vec<InstanceRecord>,
    ) -> Result<Self> {
        if num_params == 0 {
            return Err(Error::invalid("num_params must be positive"));
        }
        check_num_checkpoints(num_checkpoints).map_err(Error::invalid)?;
        let mut seen = HashSet::with_capacity(records.len());
        for record in &records {
            check_record(record, num_checkpoints).map_err(Error::invalid)?;
            if !seen.insert(record.id) {
                return Err(Error::invalid(format!("duplicate instance id {}", record.id)));
            }
        }
        Ok(TrainingDynamics {
            run_id: run_id.into(),
            model_name: model_name.into(),
            num_params,
            dataset_name: dataset_name.into(),
            num_checkpoints,
            records,
        })
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn model_name(&self) -> &str {
        &self.model_name
    }

    pub fn num_params(&self) -> u64 {
        self.num_params
    }

    pub fn dataset_name(&self) -> &str {
        &self.dataset_name
    }

    pub fn num_checkpoints(&self) -> usize {
        self.num_checkpoints
    }

    pub fn records(&self) -> &[InstanceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn header(&self) -> DynamicsHeader {
        DynamicsHeader {
            schema_version: SCHEMA_VERSION.to_string(),
            run_id: self.run_id.clone(),
            model_name: self.model_name.clone(),
            num_params: self.num_params,
            dataset_name: self.dataset_name.clone(),
            num_instances: self.records.len(),
            num_checkpoints: self.num_checkpoints,
        }
    }

    /// Returns a copy with records sorted by ascending id.
    pub fn sorted_by_id(&self) -> Self {
        let mut out = self.clone();
        out.records.sort_by_key(|r| r.id);
        out
    }
}

fn check_num_checkpoints(n: usize) -> std::result::Result<(), String> {
    if n < 2 {
        Err(format!("num_checkpoints must be at least 2, got {n}"))
    } else {
        Ok(())
    }
}

fn check_record(record: &InstanceRecord, num_checkpoints: usize) -> std::result::Result<(), String> {
    if record.p_true.len() != num_checkpoints {
        return Err(format!(
            "length mismatch: instance {} has {} probabilities, header declares {} checkpoints",
            record.id,
            record.p_true.len(),
            num_checkpoints
        ));
    }
    if let Some(p) = record
        .p_true
        .iter()
        .find(|p| !p.is_finite() || **p < 0.0 || **p > 1.0)
    {
        return Err(format!(
            "probability out of range: instance {} has p_true {p}",
            record.id
        ));
    }
    Ok(())
}

/// Reads an `ftft-dyn-1` stream. Every rejection names the offending line.
pub fn parse_dynamics<R: BufRead>(reader: R) -> Result<TrainingDynamics> {
    let mut lines = reader.lines();

    let header_line = match lines.next() {
        Some(line) => line?,
        None => return Err(Error::parse(1, "empty input, expected header")),
    };
    let header: DynamicsHeader = serde_json::from_str(&header_line)
        .map_err(|e| Error::parse(1, format!("malformed header: {e}")))?;
    if header.schema_version != SCHEMA_VERSION {
        return Err(Error::parse(
            1,
            format!(
                "unknown schema_version {:?}, expected {SCHEMA_VERSION:?}",
                header.schema_version
            ),
        ));
    }
    if header.num_params == 0 {
        return Err(Error::parse(1, "num_params must be positive"));
    }
    check_num_checkpoints(header.num_checkpoints).map_err(|m| Error::parse(1, m))?;

    let mut records = Vec::with_capacity(header.num_instances.min(1 << 20));
    let mut seen = HashSet::with_capacity(records.capacity());
    for (idx, line) in lines.enumerate() {
        let lineno = idx + 2;
        let line = line?;
        let record: InstanceRecord = serde_json::from_str(&line)
            .map_err(|e| Error::parse(lineno, format!("malformed record: {e}")))?;
        check_record(&record, header.num_checkpoints).map_err(|m| Error::parse(lineno, m))?;
        if !seen.insert(record.id) {
            return Err(Error::parse(lineno, format!("duplicate instance id {}", record.id)));
        }
        if records.len() == header.num_instances {
            return Err(Error::parse(
                lineno,
                format!(
                    "more records than the {} declared by the header",
                    header.num_instances
                ),
            ));
        }
        records.push(record);
    }
    if records.len() != header.num_instances {
        return Err(Error::parse(
            records.len() + 2,
            format!(
                "truncated input: header declares {} instances, found {}",
                header.num_instances,
                records.len()
            ),
        ));
    }

    Ok(TrainingDynamics {
        run_id: header.run_id,
        model_name: header.model_name,
        num_params: header.num_params,
        dataset_name: header.dataset_name,
        num_checkpoints: header.num_checkpoints,
        records,
    })
}

/// Writes `dynamics` in `ftft-dyn-1`, records in their stored order.
///
/// Floats use the shortest representation that parses back to the same
/// bits, so `parse_dynamics(write_dynamics(d)) == d` exactly.
pub fn write_dynamics<W: Write>(dynamics: &TrainingDynamics, mut sink: W) -> Result<()> {
    serde_json::to_writer(&mut sink, &dynamics.header())?;
    sink.write_all(b"\n")?;
    for record in &dynamics.records {
        serde_json::to_writer(&mut sink, record)?;
        sink.write_all(b"\n")?;
    }
    sink.flush()?;
    Ok(())
}

pub fn read_dynamics_file(path: impl AsRef<std::path::Path>) -> Result<TrainingDynamics> {
    let file = std::fs::File::open(path)?;
    parse_dynamics(std::io::BufReader::new(file))
}

pub fn write_dynamics_file(dynamics: &TrainingDynamics, path: impl AsRef<std::path::Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_dynamics(dynamics, std::io::BufWriter::new(file))
}
