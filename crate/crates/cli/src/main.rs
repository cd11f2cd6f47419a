//! `ftft`: data maps, transfer analysis, cost accounting and the toy FTFT
//! benchmark from the command line.
//!
//! Exit codes: 0 success, 1 data or validation error, 2 usage error.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{self, BufWriter, IsTerminal, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use ftft_core::cartography::{build_map, DataMap, SubsetKind, DEFAULT_Q};
use ftft_core::cost::{pipeline_cost, relative_cost, write_cost_csv, CostRow, ModelRegistry, RunCost, DEFAULT_BASELINE_MODEL};
use ftft_core::dynamics::{read_dynamics_file, write_dynamics, InstanceId};
use ftft_core::fmt::{fixed, percent};
use ftft_core::pipeline::{run_benchmark, write_bundle, BenchmarkConfig, SUMMARY_HEADER};
use ftft_core::plot::heatmap_svg;
use ftft_core::toy::{generate, train, DatasetConfig, ToyModelSpec, TrainConfig};
use ftft_core::transfer::{median_trajectories, overlap_matrix, EasyRatioTable, DEFAULT_SPLIT_FRACTION};

#[derive(Parser)]
#[command(name = "ftft", version, about = "Training-dynamics data maps and FTFT pipelines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a toy model on the synthetic dataset and record its dynamics.
    Train(TrainArgs),
    /// Build a data map from a dynamics file.
    Map(MapArgs),
    /// Write the ids of one subset of a data map.
    Select(SelectArgs),
    /// Pairwise ambiguous-set overlap of two or more maps.
    Compare(CompareArgs),
    /// Median p_true trajectories of the hardest instances versus the rest.
    Trajectory(TrajectoryArgs),
    /// Easy ratio of one or more runs at several q.
    EasyRatio(EasyRatioArgs),
    /// Relative training cost against a baseline run.
    Cost(CostArgs),
    /// Run the ERM / data-map / FTFT benchmark and write a report bundle.
    Ftft(FtftArgs),
    /// Summarize a report bundle per method.
    Report(ReportArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// `linear` or `mlp<hidden units>`, e.g. `mlp16`.
    #[arg(long)]
    model: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Dataset configuration (JSON); defaults apply to missing fields.
    #[arg(long)]
    dataset_config: Option<PathBuf>,
    /// Training configuration (JSON); defaults apply to missing fields.
    #[arg(long)]
    train_config: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Id list from `select`; trains on the full train split when absent.
    #[arg(long)]
    subset: Option<PathBuf>,
    /// Output directory for dynamics.jsonl, metrics.csv and dataset.csv.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct MapArgs {
    #[arg(long)]
    dynamics: PathBuf,
    #[arg(long, default_value_t = DEFAULT_Q)]
    q: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long)]
    map: PathBuf,
    /// ambiguous, hard_to_learn, easy or random.
    #[arg(long, default_value = "ambiguous")]
    kind: String,
    /// Required for `random`.
    #[arg(long)]
    seed: Option<u64>,
    /// Id list, one id per line.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(required = true, num_args = 2..)]
    maps: Vec<PathBuf>,
    /// Directory for overlap.csv and overlap.svg.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct TrajectoryArgs {
    #[arg(long)]
    dynamics: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SPLIT_FRACTION)]
    split: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct EasyRatioArgs {
    #[arg(long, required = true)]
    dynamics: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.10, 0.25, 0.33, 0.50])]
    q: Vec<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct CostArgs {
    /// Registry model names; all registry entries when absent.
    #[arg(long)]
    model: Vec<String>,
    /// Explicit parameter count, costed as model `custom`.
    #[arg(long, conflicts_with = "model")]
    params: Option<u64>,
    #[arg(long, default_value_t = 1)]
    steps: u64,
    #[arg(long, default_value_t = 1)]
    batch_size: u64,
    /// Reference model; costs become reference run plus main run.
    #[arg(long)]
    reference: Option<String>,
    /// Reference steps; defaults to `--steps`.
    #[arg(long)]
    reference_steps: Option<u64>,
    #[arg(long, default_value = DEFAULT_BASELINE_MODEL)]
    baseline: String,
    /// Baseline steps; defaults to `--steps`.
    #[arg(long)]
    baseline_steps: Option<u64>,
    /// CSV of `model,num_params` rows merged over the built-in registry.
    #[arg(long)]
    registry: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct FtftArgs {
    /// Benchmark configuration (JSON); the shipped configuration when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replaces the configured seed list.
    #[arg(long)]
    seed: Vec<u64>,
    /// Print the shipped configuration and exit.
    #[arg(long)]
    print_config: bool,
    #[arg(long, required_unless_present = "print_config")]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Bundle directory written by `ftft`.
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(message: impl Into<String>) -> anyhow::Error {
    UsageError(message.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let is_usage = err.chain().any(|e| {
        e.downcast_ref::<UsageError>().is_some() || matches!(e.downcast_ref::<ftft_core::Error>(), Some(ftft_core::Error::Usage(_)))
    });
    if is_usage {
        2
    } else {
        1
    }
}

struct Style {
    color: bool,
}

impl Style {
    fn for_stream(is_terminal: bool) -> Self {
        Style {
            color: is_terminal && std::env::var_os("FTFT_NO_COLOR").is_none(),
        }
    }

    fn paint(&self, code: &str, text: &str) -> String {
        if self.color {
            format!("\x1b[{code}m{text}\x1b[0m")
        } else {
            text.to_string()
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out = Style::for_stream(io::stdout().is_terminal());
    match run(cli.command, &out) {
        Ok(code) => code,
        Err(err) => {
            let style = Style::for_stream(io::stderr().is_terminal());
            eprintln!("{} {err:#}", style.paint("31;1", "error:"));
            ExitCode::from(exit_code(&err))
        }
    }
}

fn run(command: Command, style: &Style) -> Result<ExitCode> {
    match command {
        Command::Train(a) => cmd_train(a, style),
        Command::Map(a) => cmd_map(a, style),
        Command::Select(a) => cmd_select(a),
        Command::Compare(a) => cmd_compare(a, style),
        Command::Trajectory(a) => cmd_trajectory(a, style),
        Command::EasyRatio(a) => cmd_easy_ratio(a, style),
        Command::Cost(a) => cmd_cost(a, style),
        Command::Ftft(a) => return cmd_ftft(a, style),
        Command::Report(a) => cmd_report(a, style),
    }?;
    Ok(ExitCode::SUCCESS)
}

/// Refuses to replace an existing file unless `force`, and creates the
/// parent directory.
fn output_file(path: &Path, force: bool) -> Result<BufWriter<fs::File>> {
    if path.exists() && !force {
        return Err(usage(format!("{} exists; pass --force to overwrite", path.display())));
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

/// Creates `dir`; an existing non-empty directory needs `force`.
fn output_dir(dir: &Path, force: bool) -> Result<()> {
    if !force && dir.is_dir() && fs::read_dir(dir)?.next().is_some() {
        return Err(usage(format!("{} is not empty; pass --force to overwrite", dir.display())));
    }
    if dir.exists() && !dir.is_dir() {
        return Err(usage(format!("{} is not a directory", dir.display())));
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn read_map(path: &Path) -> Result<DataMap> {
    DataMap::read_file(path).with_context(|| format!("reading map {}", path.display()))
}

fn parse_model(name: &str) -> Result<ToyModelSpec> {
    let spec = match name {
        "linear" => ToyModelSpec::Linear,
        _ => match name.strip_prefix("mlp").and_then(|h| h.parse().ok()) {
            Some(hidden_units) => ToyModelSpec::Mlp { hidden_units },
            None => return Err(usage(format!("unknown toy model {name:?} (expected linear or mlp<N>)"))),
        },
    };
    spec.validate().map_err(|e| usage(e.to_string()))?;
    Ok(spec)
}

fn read_ids(path: &Path) -> Result<std::collections::BTreeSet<InstanceId>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse()
                .map(InstanceId)
                .map_err(|_| anyhow::anyhow!("{}: line {}: expected an instance id, got {l:?}", path.display(), i + 1))
        })
        .collect()
}

/// Left-aligned first column, right-aligned rest.
fn render_table(style: &Style, header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: Vec<&str>| {
        cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, &w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = style.paint("1", &line(header.to_vec()));
    out.push('\n');
    for row in rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}

fn cmd_train(a: TrainArgs, style: &Style) -> Result<()> {
    let model = parse_model(&a.model)?;
    let dataset_config: DatasetConfig = match &a.dataset_config {
        Some(p) => read_json(p)?,
        None => DatasetConfig::default(),
    };
    let mut config: TrainConfig = match &a.train_config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    config.seed = a.seed;
    if let Some(s) = a.steps {
        config.max_steps = s;
    }
    if let Some(c) = a.checkpoint_every {
        config.checkpoint_every = c;
    }
    if let Some(lr) = a.lr {
        config.peak_lr = lr;
    }
    if let Some(p) = &a.subset {
        config.subset = Some(read_ids(p)?);
    }
    config.validate().map_err(|e| usage(e.to_string()))?;

    output_dir(&a.out, a.force)?;
    let ds = generate(&dataset_config)?;
    let run_id = format!("{}-s{}", model.name(), a.seed);
    let run = train(&ds, model, &config, &run_id)?;
    write_dynamics(&run.dynamics, output_file(&a.out.join("dynamics.jsonl"), true)?)?;
    run.write_metrics_csv(output_file(&a.out.join("metrics.csv"), true)?)?;
    ds.write_csv(output_file(&a.out.join("dataset.csv"), true)?)?;

    let last = run.checkpoint_metrics.last().context("run produced no checkpoints")?;
    let rows = vec![
        vec!["model".into(), model.name()],
        vec!["params".into(), run.num_params.to_string()],
        vec!["instances".into(), run.dynamics.len().to_string()],
        vec!["steps".into(), run.steps_trained.to_string()],
        vec!["checkpoints".into(), run.dynamics.num_checkpoints().to_string()],
        vec!["id_accuracy".into(), fixed(last.id_accuracy, 6)],
        vec!["hard_slice_accuracy".into(), fixed(last.hard_slice_accuracy, 6)],
    ];
    print!("{}", render_table(style, &["run", &run_id], &rows));
    Ok(())
}

fn cmd_map(a: MapArgs, style: &Style) -> Result<()> {
    ftft_core::cartography::check_q(a.q)?;
    let dynamics = read_dynamics_file(&a.dynamics).with_context(|| format!("reading {}", a.dynamics.display()))?;
    let map = build_map(&dynamics, a.q)?;
    map.write(output_file(&a.out, a.force)?)?;
    let rows = vec![
        vec!["instances".into(), map.len().to_string()],
        vec!["q".into(), fixed(map.q, 2)],
        vec!["ambiguous".into(), map.ambiguous.len().to_string()],
        vec!["hard_to_learn".into(), map.hard_to_learn.len().to_string()],
        vec!["easy".into(), map.easy.len().to_string()],
        vec!["easy_ratio".into(), fixed(ftft_core::transfer::easy_ratio(&map), 4)],
    ];
    print!("{}", render_table(style, &["map", &map.run_id], &rows));
    Ok(())
}

fn cmd_select(a: SelectArgs) -> Result<()> {
    let kind: SubsetKind = a.kind.parse().map_err(|e: ftft_core::Error| usage(e.to_string()))?;
    if kind == SubsetKind::Random && a.seed.is_none() {
        return Err(usage("--seed is required for random selection"));
    }
    let map = read_map(&a.map)?;
    let ids = ftft_core::select_subset(&map, kind, a.seed)?;
    let mut out = output_file(&a.out, a.force)?;
    for id in &ids {
        writeln!(out, "{id}")?;
    }
    out.flush()?;
    println!("{kind}: {} of {} instances", ids.len(), map.len());
    Ok(())
}

fn cmd_compare(a: CompareArgs, _style: &Style) -> Result<()> {
    let maps = a.maps.iter().map(|p| read_map(p)).collect::<Result<Vec<_>>>()?;
    let matrix = overlap_matrix(&maps)?;
    output_dir(&a.out, a.force)?;
    matrix.write_csv(output_file(&a.out.join("overlap.csv"), true)?)?;
    let mut svg = output_file(&a.out.join("overlap.svg"), true)?;
    svg.write_all(heatmap_svg(&matrix).as_bytes())?;
    svg.flush()?;
    print!("{}", matrix.render_text());
    Ok(())
}

fn cmd_trajectory(a: TrajectoryArgs, style: &Style) -> Result<()> {
    let dynamics = read_dynamics_file(&a.dynamics).with_context(|| format!("reading {}", a.dynamics.display()))?;
    let t = median_trajectories(&dynamics, a.split).map_err(|e| usage(e.to_string()))?;
    if let Some(p) = &a.out {
        t.write_csv(output_file(p, a.force)?)?;
    }
    let rows: Vec<Vec<String>> = t
        .hard_median_per_checkpoint
        .iter()
        .zip(&t.other_median_per_checkpoint)
        .enumerate()
        .map(|(i, (h, o))| vec![i.to_string(), fixed(*h, 6), fixed(*o, 6)])
        .collect();
    print!("{}", render_table(style, &["checkpoint", "hard_median", "other_median"], &rows));
    Ok(())
}

fn cmd_easy_ratio(a: EasyRatioArgs, style: &Style) -> Result<()> {
    for &q in &a.q {
        ftft_core::cartography::check_q(q)?;
    }
    let mut table = EasyRatioTable::default();
    for p in &a.dynamics {
        let d = read_dynamics_file(p).with_context(|| format!("reading {}", p.display()))?;
        table.add_dynamics(d.model_name(), &d, &a.q)?;
    }
    if let Some(p) = &a.out {
        table.write_csv(output_file(p, a.force)?)?;
    }
    let rows: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|r| vec![r.model.clone(), fixed(r.q, 2), fixed(r.easy_ratio, 4)])
        .collect();
    print!("{}", render_table(style, &["model", "q", "easy_ratio"], &rows));
    Ok(())
}

fn cmd_cost(a: CostArgs, style: &Style) -> Result<()> {
    let mut registry = ModelRegistry::builtin();
    if let Some(p) = &a.registry {
        let file = fs::File::open(p).with_context(|| format!("reading {}", p.display()))?;
        registry.extend_from_csv(file)?;
    }
    let resolve = |name: &str, steps: u64| -> Result<RunCost> {
        if registry.get(name).is_none() {
            let known: Vec<String> = registry.iter().map(|(n, p)| format!("  {n} ({p})")).collect();
            return Err(usage(format!("unknown model {name:?}; registry entries:\n{}", known.join("\n"))));
        }
        Ok(registry.run(name, steps, a.batch_size)?)
    };
    let baseline = resolve(&a.baseline, a.baseline_steps.unwrap_or(a.steps))?;
    let reference = match &a.reference {
        Some(r) => Some(resolve(r, a.reference_steps.unwrap_or(a.steps))?),
        None => None,
    };
    let mains: Vec<RunCost> = match a.params {
        Some(p) => vec![RunCost::new("custom", p, a.steps, a.batch_size).map_err(|e| usage(e.to_string()))?],
        None if a.model.is_empty() => registry
            .iter()
            .map(|(n, _)| registry.run(n, a.steps, a.batch_size))
            .collect::<ftft_core::Result<_>>()?,
        None => a.model.iter().map(|m| resolve(m, a.steps)).collect::<Result<_>>()?,
    };

    let mut rows = Vec::new();
    for main in &mains {
        let value = match &reference {
            Some(r) => pipeline_cost(r, main, &baseline)?.relative_total,
            None => relative_cost(main, &baseline)?,
        };
        rows.push(CostRow {
            method: if reference.is_some() { "DM".into() } else { "ERM".into() },
            main_model: main.model_name.clone(),
            ref_model: reference.as_ref().map(|r| r.model_name.clone()),
            relative_cost: value,
        });
    }
    if let Some(p) = &a.out {
        write_cost_csv(&rows, output_file(p, a.force)?)?;
    }
    let printed: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.main_model.clone(), r.ref_model.clone().unwrap_or_else(|| "-".into()), percent(r.relative_cost)])
        .collect();
    print!("{}", render_table(style, &["model", "reference", "relative_cost"], &printed));
    Ok(())
}

fn cmd_ftft(a: FtftArgs, style: &Style) -> Result<ExitCode> {
    if a.print_config {
        print!("{}", BenchmarkConfig::shipped_json());
        return Ok(ExitCode::SUCCESS);
    }
    let mut config = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<BenchmarkConfig>(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?
        }
        None => BenchmarkConfig::shipped(),
    };
    if !a.seed.is_empty() {
        config.seeds = Some(a.seed.clone());
    }
    config.validate()?;
    let out = a.out.expect("clap requires --out");
    output_dir(&out, a.force)?;

    let result = run_benchmark(&config)?;
    write_bundle(&result, &out)?;
    let rows: Vec<Vec<String>> = result.summary().iter().map(|r| r.fields().to_vec()).collect();
    print!("{}", render_table(style, &SUMMARY_HEADER, &rows));
    println!("bundle written to {}", out.display());
    if result.is_complete() {
        return Ok(ExitCode::SUCCESS);
    }
    let err = Style::for_stream(io::stderr().is_terminal());
    for s in result.seeds.iter().filter(|s| !s.is_complete()) {
        eprintln!(
            "{} seed {} failed at {}; partial outputs in seed-{}/",
            err.paint("31;1", "error:"),
            s.seed,
            s.failure.as_deref().unwrap_or_default(),
            s.seed
        );
    }
    Ok(ExitCode::from(1))
}

#[derive(Default)]
struct MethodTotals {
    seeds: usize,
    best_hard_slice: f64,
    last_hard_slice: f64,
    charged: f64,
    relative_cost: f64,
}

fn cmd_report(a: ReportArgs, style: &Style) -> Result<()> {
    let path = a.bundle.join("summary.csv");
    let mut reader = csv::Reader::from_path(&path).with_context(|| format!("reading {}", path.display()))?;
    let header = reader.headers()?.clone();
    let column = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| anyhow::anyhow!("{}: missing column {name}", path.display()))
    };
    let (method, best, last, charged, cost) = (
        column("method")?,
        column("best_hard_slice")?,
        column("last_hard_slice")?,
        column("charged_checkpoints")?,
        column("relative_cost")?,
    );
    let mut order = Vec::new();
    let mut totals: BTreeMap<String, MethodTotals> = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let num = |c: usize| -> Result<f64> {
            record[c]
                .parse()
                .with_context(|| format!("{}: row {}: bad number {:?}", path.display(), i + 2, &record[c]))
        };
        let name = record[method].to_string();
        if !totals.contains_key(&name) {
            order.push(name.clone());
        }
        let t = totals.entry(name).or_default();
        t.seeds += 1;
        t.best_hard_slice += num(best)?;
        t.last_hard_slice += num(last)?;
        t.charged += num(charged)?;
        t.relative_cost += num(cost)?;
    }
    let header = ["method", "seeds", "best_hard_slice", "last_hard_slice", "charged_checkpoints", "relative_cost"];
    let rows: Vec<Vec<String>> = order
        .iter()
        .map(|m| {
            let t = &totals[m];
            let n = t.seeds as f64;
            vec![
                m.clone(),
                t.seeds.to_string(),
                fixed(t.best_hard_slice / n, 4),
                fixed(t.last_hard_slice / n, 4),
                fixed(t.charged / n, 2),
                percent(t.relative_cost / n),
            ]
        })
        .collect();
    if let Some(p) = &a.out {
        let mut w = csv::Writer::from_writer(output_file(p, a.force)?);
        w.write_record(header)?;
        for r in &rows {
            w.write_record(r)?;
        }
        w.flush()?;
    }
    print!("{}", render_table(style, &header, &rows));
    if let Ok(status) = fs::read_to_string(a.bundle.join("status.txt")) {
        print!("status: {status}");
    }
    Ok(())
}
