//! ERM, dataset-cartography and FTFT pipelines over the toy lab, and a
//! benchmark driver that runs them for several seeds and writes a report
//! bundle.

use std::cmp::Ordering;
use std::fmt;
use std::fs;
use std::io::BufWriter;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cartography::{build_map, check_q, random_map, select_subset, DataMap, SubsetKind, DEFAULT_Q};
use crate::cost::{pipeline_cost, relative_cost, write_cost_csv, CostRow, PipelineCost, RunCost};
use crate::dynamics::write_dynamics;
use crate::error::{Error, Result};
use crate::fmt::fixed;
use crate::plot::{heatmap_svg, line_chart_svg, Series};
use crate::toy::{
    generate, run_reference, train_with_monitor, CheckpointMetrics, DatasetConfig, RunResult, SyntheticDataset,
    ToyModelSpec, TrainConfig,
};
use crate::transfer::{median_trajectories, overlap_matrix, EasyRatioTable, TrajectorySummary, DEFAULT_SPLIT_FRACTION};

/// A checkpoint improves on the best so far only if it beats it by more
/// than this.
pub const IMPROVEMENT_TOLERANCE: f64 = 1e-9;

pub const DEFAULT_PATIENCE: usize = 2;

/// Online patience rule. Feed one metric value per checkpoint.
#[derive(Debug, Clone)]
pub struct PatienceTracker {
    k: usize,
    best: Option<(usize, f64)>,
    seen: usize,
    stale: usize,
}

impl PatienceTracker {
    pub fn new(k: usize) -> Self {
        PatienceTracker {
            k,
            best: None,
            seen: 0,
            stale: 0,
        }
    }

    /// Records the next value and returns whether training should go on,
    /// i.e. fewer than `k` checkpoints in a row have failed to improve.
    pub fn observe(&mut self, value: f64) -> bool {
        let index = self.seen;
        self.seen += 1;
        match self.best {
            Some((_, best)) if value.partial_cmp(&(best + IMPROVEMENT_TOLERANCE)) != Some(Ordering::Greater) => self.stale += 1,
            _ => {
                self.best = Some((index, value));
                self.stale = 0;
            }
        }
        self.stale < self.k
    }

    pub fn best_index(&self) -> usize {
        self.best.map_or(0, |(i, _)| i)
    }

    pub fn best_value(&self) -> Option<f64> {
        self.best.map(|(_, v)| v)
    }

    pub fn last_index(&self) -> usize {
        self.seen.saturating_sub(1)
    }

    pub fn triggered(&self) -> bool {
        self.seen > 0 && self.stale >= self.k
    }
}

/// Returns `(best_index, stop_index)` for a metric series under patience
/// `k`. The stop index is the last index when patience never runs out.
pub fn early_stop(series: &[f64], k: usize) -> Result<(usize, usize)> {
    if series.is_empty() {
        return Err(Error::invalid("metric series is empty"));
    }
    if k == 0 {
        return Err(Error::usage("patience k must be at least 1"));
    }
    let mut tracker = PatienceTracker::new(k);
    for &v in series {
        if !tracker.observe(v) {
            break;
        }
    }
    Ok((tracker.best_index(), tracker.last_index()))
}

/// Index of the first running maximum, under the same improvement rule.
pub fn best_index(series: &[f64]) -> Result<usize> {
    early_stop(series, usize::MAX).map(|(best, _)| best)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopKind {
    #[default]
    None,
    Patience,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMetric {
    HardSliceAccuracy,
    IdAccuracy,
}

impl EvalMetric {
    pub fn value(self, m: &CheckpointMetrics) -> f64 {
        match self {
            EvalMetric::HardSliceAccuracy => m.hard_slice_accuracy,
            EvalMetric::IdAccuracy => m.id_accuracy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopMetric {
    #[default]
    HardSliceAccuracy,
    IdAccuracy,
    /// Unweighted mean of the listed evaluation metrics.
    MeanOfListed(Vec<EvalMetric>),
}

impl StopMetric {
    pub fn value(&self, m: &CheckpointMetrics) -> f64 {
        match self {
            StopMetric::HardSliceAccuracy => m.hard_slice_accuracy,
            StopMetric::IdAccuracy => m.id_accuracy,
            StopMetric::MeanOfListed(list) => list.iter().map(|e| e.value(m)).sum::<f64>() / list.len() as f64,
        }
    }

    pub fn curve(&self, metrics: &[CheckpointMetrics]) -> Vec<f64> {
        metrics.iter().map(|m| self.value(m)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StopPolicy {
    pub kind: StopKind,
    pub k: usize,
    pub metric: StopMetric,
}

impl Default for StopPolicy {
    fn default() -> Self {
        StopPolicy::none()
    }
}

impl StopPolicy {
    pub fn none() -> Self {
        StopPolicy {
            kind: StopKind::None,
            k: DEFAULT_PATIENCE,
            metric: StopMetric::default(),
        }
    }

    pub fn patience(k: usize) -> Self {
        StopPolicy {
            kind: StopKind::Patience,
            k,
            metric: StopMetric::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == StopKind::Patience && self.k == 0 {
            return Err(Error::usage("patience k must be at least 1"));
        }
        if matches!(&self.metric, StopMetric::MeanOfListed(l) if l.is_empty()) {
            return Err(Error::usage("mean_of_listed needs at least one metric"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Erm,
    /// ERM with early stopping.
    ErmEs,
    /// Main model trained on a data-map subset, full length.
    Dm(SubsetKind),
    Ftft,
}

impl Method {
    pub fn label(self) -> String {
        match self {
            Method::Erm => "ERM".into(),
            Method::ErmEs => "ERM(ES)".into(),
            Method::Dm(kind) => format!("DM-{}", kind.as_str().replace('_', "-")),
            Method::Ftft => "FTFT".into(),
        }
    }

    /// File-name form of the label.
    pub fn slug(self) -> String {
        self.label().to_lowercase().replace("(es)", "-es")
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Outcome of one pipeline. `best_checkpoint` and `stop_checkpoint` index
/// the main run's checkpoints; the best checkpoint's parameters are the
/// reported model, while cost is charged through `stop_checkpoint`.
#[derive(Debug, Clone)]
pub struct FtftReport {
    pub method: Method,
    pub reference: Option<RunResult>,
    pub map: Option<DataMap>,
    pub subset_kind: Option<SubsetKind>,
    pub main: RunResult,
    pub stop_metric: StopMetric,
    pub best_checkpoint: usize,
    pub stop_checkpoint: usize,
    pub costs: PipelineCost,
    pub warnings: Vec<String>,
}

impl FtftReport {
    pub fn metric_curves(&self) -> &[CheckpointMetrics] {
        &self.main.checkpoint_metrics
    }

    pub fn best_metrics(&self) -> &CheckpointMetrics {
        &self.main.checkpoint_metrics[self.best_checkpoint]
    }

    pub fn best_params(&self) -> &[f64] {
        &self.main.checkpoint_params[self.best_checkpoint]
    }

    /// Main-run checkpoints paid for, overshoot included.
    pub fn charged_checkpoints(&self) -> usize {
        self.stop_checkpoint + 1
    }

    pub fn reference_model(&self) -> Option<String> {
        self.reference.as_ref().map(|r| r.model.name())
    }
}

/// Training configurations of the reference and main runs.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfigs {
    pub reference: TrainConfig,
    pub main: TrainConfig,
}

pub fn run_cost(run: &RunResult, batch_size: usize) -> Result<RunCost> {
    RunCost::new(run.model.name(), run.num_params as u64, run.steps_trained as u64, batch_size as u64)
}

/// Trains a main model under `stop`, returning the run with its best and
/// stop checkpoint indices.
fn main_run(
    ds: &SyntheticDataset,
    model: ToyModelSpec,
    config: &TrainConfig,
    stop: &StopPolicy,
    run_id: &str,
) -> Result<(RunResult, usize, usize)> {
    stop.validate()?;
    let k = match stop.kind {
        StopKind::None => usize::MAX,
        StopKind::Patience => stop.k,
    };
    let mut tracker = PatienceTracker::new(k);
    let metric = stop.metric.clone();
    let run = train_with_monitor(ds, model, config, run_id, &mut |_: usize, m: &CheckpointMetrics| {
        tracker.observe(metric.value(m))
    })?;
    Ok((run, tracker.best_index(), tracker.last_index()))
}

/// Conventional training on the full training set; early-stopped when
/// `stop` is a patience policy.
pub fn run_erm(
    ds: &SyntheticDataset,
    model: ToyModelSpec,
    config: &TrainConfig,
    stop: &StopPolicy,
    baseline: &RunCost,
) -> Result<FtftReport> {
    let method = match stop.kind {
        StopKind::None => Method::Erm,
        StopKind::Patience => Method::ErmEs,
    };
    let config = TrainConfig {
        subset: None,
        ..config.clone()
    };
    let run_id = format!("{}-s{}", method.slug(), config.seed);
    let (main, best, stop_index) = main_run(ds, model, &config, stop, &run_id)?;
    let costs = PipelineCost::from_components(vec![run_cost(&main, config.batch_size)?], baseline.clone())?;
    Ok(FtftReport {
        method,
        reference: None,
        map: None,
        subset_kind: None,
        main,
        stop_metric: stop.metric.clone(),
        best_checkpoint: best,
        stop_checkpoint: stop_index,
        costs,
        warnings: Vec::new(),
    })
}

/// Trains the reference, builds its map at `q`, and trains the main model
/// on the chosen subset for the full main-config length.
pub fn run_cartography(
    ds: &SyntheticDataset,
    ref_model: ToyModelSpec,
    main_model: ToyModelSpec,
    q: f64,
    subset_kind: SubsetKind,
    configs: &PipelineConfigs,
    baseline: &RunCost,
) -> Result<FtftReport> {
    let reference = run_reference(ds, ref_model, &configs.reference, &reference_run_id(ref_model, &configs.reference))?;
    cartography_from_reference(
        ds,
        reference,
        configs.reference.batch_size,
        main_model,
        q,
        subset_kind,
        &configs.main,
        baseline,
    )
}

/// [`run_cartography`] with an already trained reference.
#[allow(clippy::too_many_arguments)]
pub fn cartography_from_reference(
    ds: &SyntheticDataset,
    reference: RunResult,
    reference_batch_size: usize,
    main_model: ToyModelSpec,
    q: f64,
    subset_kind: SubsetKind,
    main_config: &TrainConfig,
    baseline: &RunCost,
) -> Result<FtftReport> {
    if subset_kind == SubsetKind::Easy {
        return Err(Error::usage("cartography trains on ambiguous, hard_to_learn or random subsets"));
    }
    let method = Method::Dm(subset_kind);
    let stop = StopPolicy::none();
    main_on_subset(ds, reference, reference_batch_size, main_model, q, subset_kind, main_config, &stop, method, baseline)
}

/// Trains the reference, then the main model on the reference's ambiguous
/// subset with patience stopping.
pub fn run_ftft(
    ds: &SyntheticDataset,
    ref_model: ToyModelSpec,
    main_model: ToyModelSpec,
    q: f64,
    stop: &StopPolicy,
    configs: &PipelineConfigs,
    baseline: &RunCost,
) -> Result<FtftReport> {
    let reference = run_reference(ds, ref_model, &configs.reference, &reference_run_id(ref_model, &configs.reference))?;
    ftft_from_reference(ds, reference, configs, main_model, q, stop, baseline)
}

/// [`run_ftft`] with an already trained reference. `configs.reference` is
/// used for cost accounting and the cheaper-reference check.
pub fn ftft_from_reference(
    ds: &SyntheticDataset,
    reference: RunResult,
    configs: &PipelineConfigs,
    main_model: ToyModelSpec,
    q: f64,
    stop: &StopPolicy,
    baseline: &RunCost,
) -> Result<FtftReport> {
    if stop.kind != StopKind::Patience {
        return Err(Error::usage("FTFT needs a patience stop policy"));
    }
    let full_ref = RunCost::new(
        reference.model.name(),
        reference.num_params as u64,
        configs.reference.max_steps as u64,
        configs.reference.batch_size as u64,
    )?;
    let full_main = RunCost::new(
        main_model.name(),
        main_model.num_params(ds.dim, ds.num_classes) as u64,
        configs.main.max_steps as u64,
        configs.main.batch_size as u64,
    )?;
    let mut warnings = Vec::new();
    if relative_cost(&full_ref, &full_main)? >= 100.0 {
        warnings.push(format!(
            "reference {} is not cheaper than main model {}",
            full_ref.model_name, full_main.model_name
        ));
    }
    let mut report = main_on_subset(
        ds,
        reference,
        configs.reference.batch_size,
        main_model,
        q,
        SubsetKind::Ambiguous,
        &configs.main,
        stop,
        Method::Ftft,
        baseline,
    )?;
    report.warnings = warnings;
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
fn main_on_subset(
    ds: &SyntheticDataset,
    reference: RunResult,
    reference_batch_size: usize,
    main_model: ToyModelSpec,
    q: f64,
    subset_kind: SubsetKind,
    main_config: &TrainConfig,
    stop: &StopPolicy,
    method: Method,
    baseline: &RunCost,
) -> Result<FtftReport> {
    check_q(q)?;
    let map = build_map(&reference.dynamics, q)?;
    let subset = select_subset(&map, subset_kind, Some(main_config.seed))?;
    let config = TrainConfig {
        subset: Some(subset),
        ..main_config.clone()
    };
    let run_id = format!("{}-s{}", method.slug(), config.seed);
    let (main, best, stop_index) = main_run(ds, main_model, &config, stop, &run_id)?;
    let costs = pipeline_cost(
        &run_cost(&reference, reference_batch_size)?,
        &run_cost(&main, config.batch_size)?,
        baseline,
    )?;
    Ok(FtftReport {
        method,
        reference: Some(reference),
        map: Some(map),
        subset_kind: Some(subset_kind),
        main,
        stop_metric: stop.metric.clone(),
        best_checkpoint: best,
        stop_checkpoint: stop_index,
        costs,
        warnings: Vec::new(),
    })
}

fn reference_run_id(model: ToyModelSpec, config: &TrainConfig) -> String {
    format!("ref-{}-s{}", model.name(), config.seed)
}

// ---------------------------------------------------------------------------
// Benchmark

/// A named reference model and its training configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSpec {
    pub name: String,
    pub model: ToyModelSpec,
    #[serde(default)]
    pub config: TrainConfig,
}

/// Run that cost percentages are relative to. Unset fields fall back to
/// the full-length ERM main run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSpec {
    pub model: Option<ToyModelSpec>,
    pub steps: Option<usize>,
    pub batch_size: Option<usize>,
}

fn default_q() -> f64 {
    DEFAULT_Q
}

fn default_subset_kinds() -> Vec<SubsetKind> {
    vec![SubsetKind::Random, SubsetKind::Ambiguous]
}

fn default_stop() -> StopPolicy {
    StopPolicy::patience(DEFAULT_PATIENCE)
}

fn default_easy_ratio_qs() -> Vec<f64> {
    vec![0.10, 0.25, 0.33, 0.50]
}

fn default_split() -> f64 {
    DEFAULT_SPLIT_FRACTION
}

/// Benchmark description, read from JSON.
///
/// Methods run per seed: ERM, ERM(ES), one DM run per entry of
/// `subset_kinds` (main model on the `dm_reference` map) and FTFT (main
/// model on the `ftft_reference` ambiguous subset with `stop`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    #[serde(default)]
    pub dataset: DatasetConfig,
    pub main_model: ToyModelSpec,
    #[serde(default)]
    pub main_config: TrainConfig,
    pub references: Vec<ReferenceSpec>,
    #[serde(default = "default_q")]
    pub q: f64,
    pub dm_reference: String,
    pub ftft_reference: String,
    #[serde(default = "default_subset_kinds")]
    pub subset_kinds: Vec<SubsetKind>,
    #[serde(default = "default_stop")]
    pub stop: StopPolicy,
    /// Training seeds; each seed runs every method once.
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub baseline: BaselineSpec,
    #[serde(default = "default_easy_ratio_qs")]
    pub easy_ratio_qs: Vec<f64>,
    #[serde(default = "default_split")]
    pub trajectory_split: f64,
}

const SHIPPED_CONFIG: &str = include_str!("../configs/default-benchmark.json");

impl BenchmarkConfig {
    /// The benchmark configuration shipped with the crate.
    pub fn shipped() -> Self {
        Self::from_json(SHIPPED_CONFIG).expect("shipped benchmark config is valid")
    }

    pub fn shipped_json() -> &'static str {
        SHIPPED_CONFIG
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: BenchmarkConfig = serde_json::from_str(text).map_err(|e| Error::usage(format!("benchmark config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn seeds(&self) -> &[u64] {
        self.seeds.as_deref().unwrap_or(&[])
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds().is_empty() {
            return Err(Error::usage("seeds required"));
        }
        check_q(self.q)?;
        for &q in &self.easy_ratio_qs {
            check_q(q)?;
        }
        if !(self.trajectory_split > 0.0 && self.trajectory_split < 1.0) {
            return Err(Error::usage("trajectory_split must be in (0, 1)"));
        }
        self.stop.validate()?;
        if self.stop.kind != StopKind::Patience {
            return Err(Error::usage("stop.kind must be patience"));
        }
        self.main_config.validate()?;
        let mut names: Vec<&str> = self.references.iter().map(|r| r.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::usage("reference names must be unique"));
        }
        for r in &self.references {
            r.config.validate()?;
        }
        self.reference(&self.dm_reference)?;
        self.reference(&self.ftft_reference)?;
        if self.subset_kinds.contains(&SubsetKind::Easy) {
            return Err(Error::usage("subset_kinds may hold ambiguous, hard_to_learn or random"));
        }
        Ok(())
    }

    pub fn reference(&self, name: &str) -> Result<&ReferenceSpec> {
        self.references.iter().find(|r| r.name == name).ok_or_else(|| {
            let known: Vec<&str> = self.references.iter().map(|r| r.name.as_str()).collect();
            Error::usage(format!("unknown reference {name:?} (known: {})", known.join(", ")))
        })
    }

    pub fn methods(&self) -> Vec<Method> {
        let mut m = vec![Method::Erm, Method::ErmEs];
        m.extend(self.subset_kinds.iter().map(|&k| Method::Dm(k)));
        m.push(Method::Ftft);
        m
    }

    pub fn baseline_cost(&self) -> Result<RunCost> {
        let model = self.baseline.model.unwrap_or(self.main_model);
        let dims = (crate::toy::dataset::FEATURE_DIM, self.dataset.num_classes);
        RunCost::new(
            model.name(),
            model.num_params(dims.0, dims.1) as u64,
            self.baseline.steps.unwrap_or(self.main_config.max_steps) as u64,
            self.baseline.batch_size.unwrap_or(self.main_config.batch_size) as u64,
        )
    }

    fn seeded(config: &TrainConfig, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            subset: None,
            ..config.clone()
        }
    }
}

/// Everything one seed produced. When a stage fails, `failure` names it and
/// the fields hold whatever completed before.
#[derive(Debug, Clone)]
pub struct SeedResult {
    pub seed: u64,
    pub references: Vec<(String, RunResult)>,
    pub maps: Vec<(String, DataMap)>,
    pub easy_ratios: EasyRatioTable,
    pub trajectories: Vec<(String, TrajectorySummary)>,
    pub reports: Vec<FtftReport>,
    pub failure: Option<String>,
}

impl SeedResult {
    pub fn report(&self, method: Method) -> Option<&FtftReport> {
        self.reports.iter().find(|r| r.method == method)
    }

    pub fn reference(&self, name: &str) -> Option<&RunResult> {
        self.references.iter().find(|(n, _)| n == name).map(|(_, r)| r)
    }

    pub fn is_complete(&self) -> bool {
        self.failure.is_none()
    }
}

#[derive(Debug, Clone)]
pub struct BenchmarkResult {
    pub config: BenchmarkConfig,
    pub dataset: SyntheticDataset,
    pub seeds: Vec<SeedResult>,
}

impl BenchmarkResult {
    pub fn is_complete(&self) -> bool {
        self.seeds.iter().all(SeedResult::is_complete)
    }

    /// One row per seed and completed method.
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut rows = Vec::new();
        for s in &self.seeds {
            for r in &s.reports {
                let last = r.main.checkpoint_metrics.last().expect("runs have checkpoints");
                rows.push(SummaryRow {
                    seed: s.seed,
                    method: r.method.label(),
                    main_model: r.main.model.name(),
                    ref_model: r.reference_model(),
                    best_checkpoint: r.best_checkpoint,
                    stop_checkpoint: r.stop_checkpoint,
                    charged_checkpoints: r.charged_checkpoints(),
                    best_hard_slice: r.best_metrics().hard_slice_accuracy,
                    last_hard_slice: last.hard_slice_accuracy,
                    best_id: r.best_metrics().id_accuracy,
                    relative_cost: r.costs.relative_total,
                });
            }
        }
        rows
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub seed: u64,
    pub method: String,
    pub main_model: String,
    pub ref_model: Option<String>,
    pub best_checkpoint: usize,
    pub stop_checkpoint: usize,
    pub charged_checkpoints: usize,
    pub best_hard_slice: f64,
    pub last_hard_slice: f64,
    pub best_id: f64,
    pub relative_cost: f64,
}

pub const SUMMARY_HEADER: [&str; 11] = [
    "seed",
    "method",
    "main_model",
    "ref_model",
    "best_checkpoint",
    "stop_checkpoint",
    "charged_checkpoints",
    "best_hard_slice",
    "last_hard_slice",
    "best_id",
    "relative_cost",
];

impl SummaryRow {
    /// Field strings as written to `summary.csv` and printed by the CLI.
    pub fn fields(&self) -> [String; 11] {
        [
            self.seed.to_string(),
            self.method.clone(),
            self.main_model.clone(),
            self.ref_model.clone().unwrap_or_else(|| "-".into()),
            self.best_checkpoint.to_string(),
            self.stop_checkpoint.to_string(),
            self.charged_checkpoints.to_string(),
            fixed(self.best_hard_slice, 4),
            fixed(self.last_hard_slice, 4),
            fixed(self.best_id, 4),
            fixed(self.relative_cost, 2),
        ]
    }
}

/// Runs every method for every seed. Seeds run in parallel; results keep
/// the configured seed order.
pub fn run_benchmark(config: &BenchmarkConfig) -> Result<BenchmarkResult> {
    config.validate()?;
    let dataset = generate(&config.dataset)?;
    let baseline = config.baseline_cost()?;
    let seeds = config
        .seeds()
        .par_iter()
        .map(|&seed| run_seed(config, &dataset, &baseline, seed))
        .collect();
    Ok(BenchmarkResult {
        config: config.clone(),
        dataset,
        seeds,
    })
}

fn run_seed(config: &BenchmarkConfig, ds: &SyntheticDataset, baseline: &RunCost, seed: u64) -> SeedResult {
    let mut out = SeedResult {
        seed,
        references: Vec::new(),
        maps: Vec::new(),
        easy_ratios: EasyRatioTable::default(),
        trajectories: Vec::new(),
        reports: Vec::new(),
        failure: None,
    };
    if let Err((stage, e)) = fill_seed(config, ds, baseline, seed, &mut out) {
        out.failure = Some(format!("{stage}: {e}"));
    }
    out
}

fn fill_seed(
    config: &BenchmarkConfig,
    ds: &SyntheticDataset,
    baseline: &RunCost,
    seed: u64,
    out: &mut SeedResult,
) -> std::result::Result<(), (String, Error)> {
    let main_config = BenchmarkConfig::seeded(&config.main_config, seed);
    for r in &config.references {
        let stage = |e| (format!("reference {}", r.name), e);
        let rc = BenchmarkConfig::seeded(&r.config, seed);
        let run = run_reference(ds, r.model, &rc, &format!("ref-{}-s{seed}", r.name)).map_err(stage)?;
        out.easy_ratios
            .add_dynamics(&r.name, &run.dynamics, &config.easy_ratio_qs)
            .map_err(stage)?;
        out.trajectories.push((
            r.name.clone(),
            median_trajectories(&run.dynamics, config.trajectory_split).map_err(stage)?,
        ));
        out.maps.push((r.name.clone(), build_map(&run.dynamics, config.q).map_err(stage)?));
        out.references.push((r.name.clone(), run));
    }

    for method in config.methods() {
        let stage = |e| (method.label(), e);
        let report = match method {
            Method::Erm => run_erm(ds, config.main_model, &main_config, &StopPolicy::none(), baseline),
            Method::ErmEs => run_erm(ds, config.main_model, &main_config, &config.stop, baseline),
            Method::Dm(kind) => {
                let spec = config.reference(&config.dm_reference).map_err(stage)?;
                let reference = out.reference(&spec.name).cloned().expect("references trained above");
                cartography_from_reference(
                    ds,
                    reference,
                    spec.config.batch_size,
                    config.main_model,
                    config.q,
                    kind,
                    &main_config,
                    baseline,
                )
            }
            Method::Ftft => {
                let spec = config.reference(&config.ftft_reference).map_err(stage)?;
                let reference = out.reference(&spec.name).cloned().expect("references trained above");
                let configs = PipelineConfigs {
                    reference: BenchmarkConfig::seeded(&spec.config, seed),
                    main: main_config.clone(),
                };
                ftft_from_reference(ds, reference, &configs, config.main_model, config.q, &config.stop, baseline)
            }
        }
        .map_err(stage)?;
        out.reports.push(report);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Report bundle

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    Ok(())
}

/// Writes the report bundle into `dir`, creating it if needed. Existing
/// files with the same names are replaced; callers decide whether that is
/// allowed.
///
/// Layout: `status.txt`, `config.json`, `dataset.csv`, `summary.csv`,
/// `curves.csv`, `curves.svg`, and per seed a `seed-<n>/` directory with
/// reference dynamics, metrics and maps, per-method dynamics and metrics,
/// `costs.csv`, `easy_ratio.csv`, `trajectory-<ref>.csv`, `overlap.csv`,
/// `overlap.svg` and `curves.svg`. Failed seeds get a `FAILED.txt`.
pub fn write_bundle(result: &BenchmarkResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut config_json = serde_json::to_string_pretty(&result.config)?;
    config_json.push('\n');
    write_text(&dir.join("config.json"), &config_json)?;
    result.dataset.write_csv(create(&dir.join("dataset.csv"))?)?;

    let mut summary = csv::Writer::from_writer(create(&dir.join("summary.csv"))?);
    summary.write_record(SUMMARY_HEADER)?;
    for row in result.summary() {
        summary.write_record(row.fields())?;
    }
    summary.flush()?;

    let mut curves = csv::Writer::from_writer(create(&dir.join("curves.csv"))?);
    curves.write_record(["seed", "method", "checkpoint", "step", "id_accuracy", "hard_slice_accuracy"])?;
    for s in &result.seeds {
        for r in &s.reports {
            for (i, m) in r.metric_curves().iter().enumerate() {
                curves.write_record([
                    s.seed.to_string(),
                    r.method.label(),
                    i.to_string(),
                    m.step.to_string(),
                    fixed(m.id_accuracy, 6),
                    fixed(m.hard_slice_accuracy, 6),
                ])?;
            }
        }
    }
    curves.flush()?;
    write_text(&dir.join("curves.svg"), &mean_curves_svg(result))?;

    for s in &result.seeds {
        write_seed(result, s, &dir.join(format!("seed-{}", s.seed)))?;
    }

    let mut status = String::new();
    if result.is_complete() {
        status.push_str("complete\n");
    } else {
        status.push_str("incomplete\n");
        for s in result.seeds.iter().filter(|s| !s.is_complete()) {
            status.push_str(&format!("seed {}: {}\n", s.seed, s.failure.as_deref().unwrap_or_default()));
        }
    }
    write_text(&dir.join("status.txt"), &status)
}

fn write_seed(result: &BenchmarkResult, s: &SeedResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let failed = dir.join("FAILED.txt");
    match &s.failure {
        Some(f) => write_text(&failed, &format!("{f}\noutputs in this directory are partial\n"))?,
        None if failed.exists() => fs::remove_file(&failed)?,
        None => {}
    }
    for (name, run) in &s.references {
        write_dynamics(&run.dynamics, create(&dir.join(format!("reference-{name}.dyn.jsonl")))?)?;
        run.write_metrics_csv(create(&dir.join(format!("reference-{name}.metrics.csv")))?)?;
    }
    for (name, map) in &s.maps {
        map.write(create(&dir.join(format!("map-{name}.json")))?)?;
    }
    if !s.easy_ratios.rows.is_empty() {
        s.easy_ratios.write_csv(create(&dir.join("easy_ratio.csv"))?)?;
    }
    for (name, t) in &s.trajectories {
        t.write_csv(create(&dir.join(format!("trajectory-{name}.csv")))?)?;
    }
    if let Some((_, first)) = s.maps.first() {
        let ids: Vec<_> = first.ids().collect();
        let mut maps: Vec<DataMap> = s.maps.iter().map(|(_, m)| m.clone()).collect();
        let mut labels: Vec<String> = s.maps.iter().map(|(n, _)| n.clone()).collect();
        maps.push(random_map(format!("random-s{}", s.seed), &ids, result.config.q, s.seed)?);
        labels.push("random".into());
        let mut matrix = overlap_matrix(&maps)?;
        matrix.labels = labels;
        matrix.write_csv(create(&dir.join("overlap.csv"))?)?;
        write_text(&dir.join("overlap.svg"), &heatmap_svg(&matrix))?;
    }

    let mut rows = Vec::new();
    for r in &s.reports {
        let slug = r.method.slug();
        write_dynamics(&r.main.dynamics, create(&dir.join(format!("{slug}.dyn.jsonl")))?)?;
        r.main.write_metrics_csv(create(&dir.join(format!("{slug}.metrics.csv")))?)?;
        rows.push(CostRow {
            method: r.method.label(),
            main_model: r.main.model.name(),
            ref_model: r.reference_model(),
            relative_cost: r.costs.relative_total,
        });
    }
    write_cost_csv(&rows, create(&dir.join("costs.csv"))?)?;
    let series: Vec<Series> = s.reports.iter().map(hard_slice_series).collect();
    write_text(
        &dir.join("curves.svg"),
        &line_chart_svg(
            &format!("hard-slice accuracy, seed {}", s.seed),
            "step",
            "hard-slice accuracy",
            &series,
        ),
    )
}

fn hard_slice_series(r: &FtftReport) -> Series {
    Series {
        name: r.method.label(),
        points: r
            .metric_curves()
            .iter()
            .map(|m| (m.step as f64, m.hard_slice_accuracy))
            .collect(),
    }
}

/// Mean hard-slice accuracy per method over complete seeds, truncated to
/// the checkpoints every seed reached.
fn mean_curves_svg(result: &BenchmarkResult) -> String {
    let complete: Vec<&SeedResult> = result.seeds.iter().filter(|s| s.is_complete()).collect();
    let mut series = Vec::new();
    for method in result.config.methods() {
        let curves: Vec<&FtftReport> = complete.iter().filter_map(|s| s.report(method)).collect();
        let Some(len) = curves.iter().map(|r| r.metric_curves().len()).min() else {
            continue;
        };
        let points = (0..len)
            .map(|i| {
                let step = curves[0].metric_curves()[i].step as f64;
                let mean = curves.iter().map(|r| r.metric_curves()[i].hard_slice_accuracy).sum::<f64>() / curves.len() as f64;
                (step, mean)
            })
            .collect();
        series.push(Series {
            name: method.label(),
            points,
        });
    }
    line_chart_svg("mean hard-slice accuracy", "step", "hard-slice accuracy", &series)
}
