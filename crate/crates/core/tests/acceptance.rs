//! Acceptance gate: one PASS/FAIL line per criterion, exit status 1 if any
//! criterion fails. Tolerances and seed-majority thresholds are fixed here.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ftft_core::cartography::{categorize, random_map, sel_count, InstanceStats};
use ftft_core::cost::{pipeline_cost, relative_cost, ModelRegistry};
use ftft_core::pipeline::{best_index, early_stop, run_benchmark, write_bundle, BenchmarkConfig, BenchmarkResult, Method};
use ftft_core::toy::{ToyModel, ToyModelSpec};
use ftft_core::transfer::{ambiguous_overlap, easy_ratio};
use ftft_core::{InstanceId, InstanceRecord, TrainingDynamics};

const COST_TOLERANCE: f64 = 0.01;
const OVERLAP_RANGE: (f64, f64) = (0.31, 0.35);
const GRADIENT_EPS: f64 = 1e-5;
const GRADIENT_TOLERANCE: f64 = 1e-5;
const CHANCE_BAND: f64 = 0.05;
const STRONG_RISE: f64 = 0.2;
const QS: [f64; 4] = [0.10, 0.25, 0.33, 0.50];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn registry_relative_costs() -> Outcome {
    let expected = [
        ("deberta-v3-small", 14.47),
        ("deberta-v3-base", 28.29),
        ("deberta-v3-large", 100.00),
        ("electra-small", 4.61),
        ("electra-base", 36.18),
        ("electra-large", 110.20),
        ("bert-large", 113.49),
        ("roberta-large", 116.78),
        ("tinybert", 1.45),
    ];
    let reg = ModelRegistry::builtin();
    let baseline = reg.run("deberta-v3-large", 1000, 32).unwrap();
    let mut worst: f64 = 0.0;
    for (name, want) in expected {
        let got = relative_cost(&reg.run(name, 1000, 32).unwrap(), &baseline).unwrap();
        worst = worst.max((got - want).abs());
    }
    outcome(worst <= COST_TOLERANCE, format!("9 models, max |error| {worst:.4} <= {COST_TOLERANCE}"))
}

fn data_map_pipeline_costs() -> Outcome {
    let expected = [
        ("deberta-v3-large", 200.00),
        ("deberta-v3-small", 114.47),
        ("deberta-v3-base", 128.29),
        ("electra-small", 104.61),
        ("electra-base", 136.18),
        ("roberta-large", 216.78),
        ("bert-large", 213.49),
    ];
    let reg = ModelRegistry::builtin();
    let main = reg.run("deberta-v3-large", 1000, 32).unwrap();
    let mut worst: f64 = 0.0;
    for (reference, want) in expected {
        let got = pipeline_cost(&reg.run(reference, 1000, 32).unwrap(), &main, &main).unwrap().relative_total;
        worst = worst.max((got - want).abs());
    }
    outcome(worst <= COST_TOLERANCE, format!("7 reference/main pairs, max |error| {worst:.4} <= {COST_TOLERANCE}"))
}

fn random_map_overlap() -> Outcome {
    let ids: Vec<InstanceId> = (0..10_000).map(InstanceId).collect();
    let pairs = 100;
    let mut total = 0.0;
    for i in 0..pairs {
        let a = random_map("a", &ids, 0.33, 2 * i).unwrap();
        let b = random_map("b", &ids, 0.33, 2 * i + 1).unwrap();
        total += ambiguous_overlap(&a, &b).unwrap();
    }
    let mean = total / pairs as f64;
    outcome(
        (OVERLAP_RANGE.0..=OVERLAP_RANGE.1).contains(&mean),
        format!("mean overlap {mean:.4} over {pairs} pairs, want [{}, {}]", OVERLAP_RANGE.0, OVERLAP_RANGE.1),
    )
}

/// Sort-and-slice on exact values: largest std first / smallest mean
/// first, ties to the smaller id.
fn oracle_sets(stats: &[InstanceStats], q: f64) -> (BTreeSet<InstanceId>, BTreeSet<InstanceId>) {
    let k = ((q * stats.len() as f64 + 0.5).floor() as usize).max(1);
    let mut by_std: Vec<&InstanceStats> = stats.iter().collect();
    by_std.sort_by(|a, b| b.std.partial_cmp(&a.std).unwrap().then(a.id.cmp(&b.id)));
    let mut by_mean: Vec<&InstanceStats> = stats.iter().collect();
    by_mean.sort_by(|a, b| a.mean.partial_cmp(&b.mean).unwrap().then(a.id.cmp(&b.id)));
    (
        by_std[..k].iter().map(|s| s.id).collect(),
        by_mean[..k].iter().map(|s| s.id).collect(),
    )
}

fn categorization_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let trials = 200;
    let mut mismatches = 0;
    let mut tie_trials = 0;
    for t in 0..trials {
        let q = QS[t % QS.len()];
        // Half the trials draw from a coarse grid so duplicated statistics
        // are common.
        let coarse = t % 2 == 0;
        let mut ids: Vec<u64> = (0..1000).collect();
        for i in (1..ids.len()).rev() {
            ids.swap(i, rng.random_range(0..=i));
        }
        let stats: Vec<InstanceStats> = ids
            .iter()
            .map(|&id| {
                let (mean, std) = if coarse {
                    (rng.random_range(0..20) as f64 / 20.0, rng.random_range(0..10) as f64 / 20.0)
                } else {
                    (rng.random::<f64>(), rng.random::<f64>() * 0.5)
                };
                InstanceStats {
                    id: InstanceId(id),
                    mean,
                    std,
                }
            })
            .collect();
        if coarse {
            tie_trials += 1;
        }
        let map = categorize("trial", &stats, q).unwrap();
        let (amb, hard) = oracle_sets(&stats, q);
        let all: BTreeSet<InstanceId> = stats.iter().map(|s| s.id).collect();
        let easy: BTreeSet<InstanceId> = all.iter().filter(|id| !amb.contains(id) && !hard.contains(id)).copied().collect();
        if map.ambiguous != amb || map.hard_to_learn != hard || map.easy != easy {
            mismatches += 1;
        }
    }
    outcome(
        mismatches == 0,
        format!("{trials} trials x 1000 instances ({tie_trials} with duplicated statistics), {mismatches} mismatches"),
    )
}

fn random_dynamics(rng: &mut ChaCha8Rng, n: usize, checkpoints: usize) -> TrainingDynamics {
    let records = (0..n as u64)
        .map(|id| InstanceRecord {
            id: InstanceId(id),
            gold: 0,
            p_true: (0..checkpoints).map(|_| rng.random::<f64>()).collect(),
        })
        .collect();
    TrainingDynamics::new("r", "m", 1, "d", checkpoints, records).unwrap()
}

fn easy_ratio_bounds() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut violations = 0;
    let mut maps = 0;
    for trial in 0..200 {
        // Even trials use N with q*N integral for every q, where the bounds
        // hold exactly in terms of q; odd trials use arbitrary N and the
        // bounds in terms of the rounded selection size.
        let n = if trial % 2 == 0 { 100 * rng.random_range(1..20) } else { rng.random_range(1..400) };
        let checkpoints = rng.random_range(2..8);
        let d = random_dynamics(&mut rng, n, checkpoints);
        for q in QS {
            let map = ftft_core::cartography::build_map(&d, q).unwrap();
            let share = if trial % 2 == 0 { q } else { sel_count(n, q) as f64 / n as f64 };
            let (lo, hi) = ((1.0 - 2.0 * share).max(0.0), 1.0 - share);
            let r = easy_ratio(&map);
            maps += 1;
            if r < lo - 1e-12 || r > hi + 1e-12 {
                violations += 1;
            }
        }
    }
    // Lowest means carry the largest stds, so both selections coincide.
    let stats: Vec<InstanceStats> = (0..10)
        .map(|i| InstanceStats {
            id: InstanceId(i),
            mean: i as f64 / 10.0,
            std: 0.5 - i as f64 / 20.0,
        })
        .collect();
    let forced = easy_ratio(&categorize("forced", &stats, 0.5).unwrap());
    outcome(
        violations == 0 && forced == 0.5,
        format!("{maps} maps, {violations} bound violations; forced identical sets at q=0.50 give {forced}"),
    )
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let points = 20;
    for spec in [ToyModelSpec::Linear, ToyModelSpec::Mlp { hidden_units: 8 }] {
        let model = ToyModel::new(spec, 4, 3).unwrap();
        for _ in 0..points {
            let n = 6;
            let features: Vec<f64> = (0..n * 4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
            let rows: Vec<usize> = (0..n).collect();
            let mut params: Vec<f64> = (0..model.num_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (_, grad) = model.loss_and_grad(&params, &features, &labels, &rows);
            for i in 0..params.len() {
                let orig = params[i];
                params[i] = orig + GRADIENT_EPS;
                let up = model.loss(&params, &features, &labels, &rows);
                params[i] = orig - GRADIENT_EPS;
                let down = model.loss(&params, &features, &labels, &rows);
                params[i] = orig;
                let numeric = (up - down) / (2.0 * GRADIENT_EPS);
                let scale = numeric.abs().max(grad[i].abs()).max(1e-7);
                worst = worst.max((numeric - grad[i]).abs() / scale);
            }
        }
    }
    outcome(
        worst <= GRADIENT_TOLERANCE,
        format!("linear and mlp8, {points} points each, max relative error {worst:.2e} <= {GRADIENT_TOLERANCE:.0e}"),
    )
}

/// Recomputes the best index of every prefix from scratch and stops at the
/// first prefix whose last `k` entries all came after its best.
fn brute_force_early_stop(series: &[f64], k: usize) -> (usize, usize) {
    let prefix_best = |end: usize| {
        let mut best = 0;
        for j in 1..=end {
            if series[j] > series[best] + 1e-9 {
                best = j;
            }
        }
        best
    };
    for i in 0..series.len() {
        let b = prefix_best(i);
        if i - b >= k {
            return (b, i);
        }
    }
    (prefix_best(series.len() - 1), series.len() - 1)
}

fn early_stop_suite() -> Outcome {
    let examples = [
        (vec![0.1, 0.2, 0.3, 0.4], (3, 3)),
        (vec![0.5, 0.6, 0.55, 0.58], (1, 3)),
        (vec![0.7], (0, 0)),
    ];
    let examples_ok = examples.iter().all(|(s, want)| early_stop(s, 2).unwrap() == *want);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut disagreements = 0;
    let fuzzed = 1000;
    for i in 0..fuzzed {
        let len = rng.random_range(1..40);
        let series: Vec<f64> = (0..len)
            .map(|_| if i % 2 == 0 { rng.random_range(0..6) as f64 / 10.0 } else { rng.random() })
            .collect();
        let k = rng.random_range(1..6);
        if early_stop(&series, k).unwrap() != brute_force_early_stop(&series, k) {
            disagreements += 1;
        }
    }
    outcome(
        examples_ok && disagreements == 0,
        format!("3 examples {}, {fuzzed} fuzzed series with {disagreements} disagreements", if examples_ok { "match" } else { "MISMATCH" }),
    )
}

fn weak_strong(result: &BenchmarkResult) -> Outcome {
    let chance = 1.0 / result.config.dataset.num_classes as f64;
    let mut ordered = 0;
    let mut shaped = 0;
    let mut worst_band: f64 = 0.0;
    let mut rises = Vec::new();
    for s in &result.seeds {
        let ratio = |model: &str, q: f64| {
            s.easy_ratios
                .rows
                .iter()
                .find(|r| r.model == model && r.q == q)
                .map(|r| r.easy_ratio)
                .expect("easy ratio row")
        };
        if QS.iter().all(|&q| ratio("linear", q) < ratio("mlp16", q)) {
            ordered += 1;
        }
        let traj = |model: &str| &s.trajectories.iter().find(|(n, _)| n == model).expect("trajectory").1;
        let lin = &traj("linear").hard_median_per_checkpoint;
        let mlp = &traj("mlp16").hard_median_per_checkpoint;
        let band = lin.iter().map(|m| (m - chance).abs()).fold(0.0, f64::max);
        worst_band = worst_band.max(band);
        let rise = mlp[mlp.len() - 1] - mlp[0];
        rises.push(rise);
        if band <= CHANCE_BAND && rise >= STRONG_RISE {
            shaped += 1;
        }
    }
    let n = result.seeds.len();
    let min_rise = rises.iter().copied().fold(f64::INFINITY, f64::min);
    outcome(
        ordered >= 4 && shaped >= 4,
        format!(
            "easy_ratio linear < mlp16 at every q in {ordered}/{n} seeds; trajectory shape in {shaped}/{n} seeds \
             (max linear |median - chance| {worst_band:.3} <= {CHANCE_BAND}, min mlp16 rise {min_rise:.3} >= {STRONG_RISE}); need 4/{n}"
        ),
    )
}

fn speed_gain(result: &BenchmarkResult) -> Outcome {
    let horizon = result.config.main_config.max_steps / 3;
    let mut passing = 0;
    let mut gaps = Vec::new();
    for s in &result.seeds {
        let erm = &s.report(Method::Erm).expect("ERM").main.checkpoint_metrics;
        let dm = &s.report(Method::Dm(ftft_core::SubsetKind::Ambiguous)).expect("DM").main.checkpoint_metrics;
        let gap = erm
            .iter()
            .zip(dm)
            .filter(|(e, _)| e.step <= horizon)
            .map(|(e, d)| d.hard_slice_accuracy - e.hard_slice_accuracy)
            .fold(f64::INFINITY, f64::min);
        gaps.push(format!("{gap:+.3}"));
        if gap >= 0.0 {
            passing += 1;
        }
    }
    outcome(
        passing >= 3,
        format!(
            "DM-ambiguous >= ERM at every checkpoint <= step {horizon} in {passing}/{} seeds (min gap per seed {}); need 3",
            result.seeds.len(),
            gaps.join(" ")
        ),
    )
}

fn ftft_end_to_end(result: &BenchmarkResult) -> Outcome {
    let mut passing = 0;
    let mut lines = Vec::new();
    let mut costs = Vec::new();
    for s in &result.seeds {
        let erm = s.report(Method::Erm).expect("ERM");
        let ftft = s.report(Method::Ftft).expect("FTFT");
        let erm_curve = ftft.stop_metric.curve(&erm.main.checkpoint_metrics);
        let erm_optimal = best_index(&erm_curve).unwrap() + 1;
        let erm_final = erm.main.checkpoint_metrics.last().unwrap().hard_slice_accuracy;
        let ftft_acc = ftft.best_metrics().hard_slice_accuracy;
        let charged = ftft.charged_checkpoints();
        let cost = ftft.costs.relative_total;
        costs.push(cost);
        let ok = 3 * charged <= erm_optimal && ftft_acc >= erm_final && cost < 100.0;
        if ok {
            passing += 1;
        }
        lines.push(format!(
            "seed {}: charged {charged} vs ERM-optimal {erm_optimal}, hard-slice {ftft_acc:.3} vs ERM final {erm_final:.3}, cost {cost:.2}",
            s.seed
        ));
    }
    outcome(
        passing >= 3,
        format!("{passing}/{} seeds pass, need 3\n      {}", result.seeds.len(), lines.join("\n      ")),
    )
}

fn csv_files(dir: &Path, out: &mut Vec<std::path::PathBuf>) {
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            csv_files(&path, out);
        } else if path.extension().is_some_and(|e| e == "csv") {
            out.push(path);
        }
    }
}

fn determinism(first: &BenchmarkResult) -> Outcome {
    let second = run_benchmark(&BenchmarkConfig::shipped()).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    write_bundle(first, a.path()).unwrap();
    write_bundle(&second, b.path()).unwrap();
    let mut files = Vec::new();
    csv_files(a.path(), &mut files);
    let differing: Vec<String> = files
        .iter()
        .filter(|f| {
            let rel = f.strip_prefix(a.path()).unwrap();
            fs::read(f).ok() != fs::read(b.path().join(rel)).ok()
        })
        .map(|f| f.strip_prefix(a.path()).unwrap().display().to_string())
        .collect();
    outcome(
        differing.is_empty() && !files.is_empty(),
        format!("{} CSV files compared, {} differ {:?}", files.len(), differing.len(), differing),
    )
}

fn main() {
    let mut failed = 0;
    let mut report = |name: &str, limit: Duration, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let o = f();
        let took = start.elapsed();
        let pass = o.pass && took <= limit;
        if !pass {
            failed += 1;
        }
        println!(
            "{} {name}: {} [{:.2}s, limit {}s]",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            took.as_secs_f64(),
            limit.as_secs()
        );
    };
    report("registry-relative-costs", Duration::from_secs(1), &mut registry_relative_costs);
    report("data-map-pipeline-costs", Duration::from_secs(1), &mut data_map_pipeline_costs);
    report("random-map-overlap", Duration::from_secs(10), &mut random_map_overlap);
    report("categorization-oracle", Duration::from_secs(30), &mut categorization_oracle);
    report("easy-ratio-bounds", Duration::from_secs(5), &mut easy_ratio_bounds);
    report("gradient-check", Duration::from_secs(10), &mut gradient_check);
    report("early-stop-suite", Duration::from_secs(5), &mut early_stop_suite);

    let start = Instant::now();
    let result = run_benchmark(&BenchmarkConfig::shipped()).expect("shipped benchmark runs");
    let bench_time = start.elapsed();
    assert!(result.is_complete(), "every seed completes");
    report("weak-vs-strong-reference", Duration::from_secs(180).saturating_sub(bench_time), &mut || weak_strong(&result));
    report("training-speed-gain", Duration::from_secs(180).saturating_sub(bench_time), &mut || speed_gain(&result));
    report("ftft-end-to-end", Duration::from_secs(300).saturating_sub(bench_time), &mut || ftft_end_to_end(&result));
    report("determinism", Duration::from_secs(300), &mut || determinism(&result));

    println!("acceptance: {} of 11 criteria failed", failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
