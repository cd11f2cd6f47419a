//! Transferability between data maps: ambiguous-set overlap, easy-data
//! ratios and median p_true trajectories of hard vs. other instances.

use std::collections::BTreeSet;
use std::io::Write;

use serde::Serialize;

use crate::cartography::{compute_stats, lowest_mean, sel_count, DataMap};
use crate::dynamics::{InstanceId, TrainingDynamics};
use crate::error::{Error, Result};
use crate::fmt::fixed;

/// Default share of instances put in the hard split of a trajectory summary.
pub const DEFAULT_SPLIT_FRACTION: f64 = 0.10;

fn check_compatible(a: &DataMap, b: &DataMap) -> Result<()> {
    let same_ids = a.len() == b.len() && a.ids().zip(b.ids()).all(|(x, y)| x == y);
    if !same_ids {
        return Err(Error::Incompatible(format!(
            "instance sets differ between {:?} and {:?}",
            a.run_id, b.run_id
        )));
    }
    if a.q != b.q {
        return Err(Error::Incompatible(format!(
            "q differs ({} vs {})",
            a.q, b.q
        )));
    }
    if a.ambiguous.len() != b.ambiguous.len() {
        return Err(Error::Incompatible("ambiguous sets have different sizes".into()));
    }
    Ok(())
}

/// `|a.ambiguous ∩ b.ambiguous| / |a.ambiguous|` for maps over the same
/// instances and `q`.
pub fn ambiguous_overlap(a: &DataMap, b: &DataMap) -> Result<f64> {
    check_compatible(a, b)?;
    Ok(set_overlap(&a.ambiguous, &b.ambiguous))
}

fn set_overlap(a: &BTreeSet<InstanceId>, b: &BTreeSet<InstanceId>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.intersection(b).count() as f64 / a.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverlapMatrix {
    pub labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

pub fn overlap_matrix(maps: &[DataMap]) -> Result<OverlapMatrix> {
    if maps.len() < 2 {
        return Err(Error::invalid("an overlap matrix needs at least two maps"));
    }
    for m in &maps[1..] {
        check_compatible(&maps[0], m)?;
    }
    let values = maps
        .iter()
        .enumerate()
        .map(|(i, a)| {
            maps.iter()
                .enumerate()
                .map(|(j, b)| if i == j { 1.0 } else { set_overlap(&a.ambiguous, &b.ambiguous) })
                .collect()
        })
        .collect();
    Ok(OverlapMatrix {
        labels: maps.iter().map(|m| m.run_id.clone()).collect(),
        values,
    })
}

impl OverlapMatrix {
    /// Long-format CSV: one `run_a,run_b,overlap` row per matrix entry.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["run_a", "run_b", "overlap"])?;
        for (i, row) in self.values.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                w.write_record([self.labels[i].as_str(), self.labels[j].as_str(), &fixed(*v, 4)])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Plain-text rendering with two decimals, one row per line.
    pub fn render_text(&self) -> String {
        let width = self.labels.iter().map(|l| l.len()).max().unwrap_or(0).max(4);
        let mut out = format!("{:width$}", "");
        for l in &self.labels {
            out.push_str(&format!("  {l:>width$}"));
        }
        out.push('\n');
        for (label, row) in self.labels.iter().zip(&self.values) {
            out.push_str(&format!("{label:width$}"));
            for v in row {
                out.push_str(&format!("  {:>width$}", fixed(*v, 2)));
            }
            out.push('\n');
        }
        out
    }
}

/// Share of instances that are neither ambiguous nor hard-to-learn.
pub fn easy_ratio(map: &DataMap) -> f64 {
    if map.is_empty() {
        return 0.0;
    }
    map.easy.len() as f64 / map.len() as f64
}

/// Bounds every easy ratio must respect at threshold `q` over `n`
/// instances, with `sel_count` rounding.
pub fn easy_ratio_bounds(n: usize, q: f64) -> (f64, f64) {
    let k = sel_count(n, q) as f64;
    let n = n as f64;
    (((n - 2.0 * k) / n).max(0.0), (n - k) / n)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EasyRatioRow {
    pub model: String,
    pub q: f64,
    pub easy_ratio: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EasyRatioTable {
    pub rows: Vec<EasyRatioRow>,
}

impl EasyRatioTable {
    /// Builds maps for every `q` from one run's dynamics and appends a row each.
    pub fn add_dynamics(&mut self, model: &str, dynamics: &TrainingDynamics, qs: &[f64]) -> Result<()> {
        let stats = compute_stats(dynamics);
        for &q in qs {
            let map = crate::cartography::categorize(dynamics.run_id(), &stats, q)?;
            self.rows.push(EasyRatioRow {
                model: model.to_string(),
                q,
                easy_ratio: easy_ratio(&map),
            });
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["model", "q", "easy_ratio"])?;
        for r in &self.rows {
            w.write_record([r.model.as_str(), &fixed(r.q, 2), &fixed(r.easy_ratio, 4)])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectorySummary {
    pub split_fraction: f64,
    pub hard_median_per_checkpoint: Vec<f64>,
    pub other_median_per_checkpoint: Vec<f64>,
}

impl TrajectorySummary {
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["checkpoint", "hard_median", "other_median"])?;
        for (i, (h, o)) in self
            .hard_median_per_checkpoint
            .iter()
            .zip(&self.other_median_per_checkpoint)
            .enumerate()
        {
            w.write_record([i.to_string(), fixed(*h, 6), fixed(*o, 6)])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Median with the midpoint convention for even counts. `values` must be
/// non-empty; it is reordered.
pub fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty set");
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Splits instances by mean p_true (lowest `sel_count(N, split_fraction)`
/// form the hard split) and reports each split's median p_true per checkpoint.
pub fn median_trajectories(dynamics: &TrainingDynamics, split_fraction: f64) -> Result<TrajectorySummary> {
    if !(split_fraction > 0.0 && split_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "split_fraction must be in (0, 1), got {split_fraction}"
        )));
    }
    let n = dynamics.len();
    let hard_count = sel_count(n, split_fraction);
    if n < 2 || hard_count >= n {
        return Err(Error::invalid(format!(
            "{n} instances are too few to form both a hard and an other split"
        )));
    }
    let hard = lowest_mean(&compute_stats(dynamics), hard_count);

    let checkpoints = dynamics.num_checkpoints();
    let mut hard_median = Vec::with_capacity(checkpoints);
    let mut other_median = Vec::with_capacity(checkpoints);
    let mut hard_vals = Vec::with_capacity(hard_count);
    let mut other_vals = Vec::with_capacity(n - hard_count);
    for c in 0..checkpoints {
        hard_vals.clear();
        other_vals.clear();
        for r in dynamics.records() {
            if hard.contains(&r.id) {
                hard_vals.push(r.p_true[c]);
            } else {
                other_vals.push(r.p_true[c]);
            }
        }
        hard_median.push(median(&mut hard_vals));
        other_median.push(median(&mut other_vals));
    }
    Ok(TrajectorySummary {
        split_fraction,
        hard_median_per_checkpoint: hard_median,
        other_median_per_checkpoint: other_median,
    })
}
