use std::fs;

use ftft_core::cartography::SubsetKind;
use ftft_core::cost::RunCost;
use ftft_core::pipeline::{
    early_stop, ftft_from_reference, run_benchmark, run_cartography, run_erm, run_ftft, write_bundle, BenchmarkConfig,
    Method, PipelineConfigs, StopPolicy,
};
use ftft_core::toy::{generate, run_reference, DatasetConfig, SyntheticDataset, ToyModelSpec, TrainConfig};
use ftft_core::Error;

const MLP: ToyModelSpec = ToyModelSpec::Mlp { hidden_units: 8 };

fn small_dataset() -> SyntheticDataset {
    generate(&DatasetConfig {
        num_instances: 400,
        hard_slice_size: 100,
        ..DatasetConfig::default()
    })
    .unwrap()
}

fn config(seed: u64) -> TrainConfig {
    TrainConfig {
        max_steps: 240,
        checkpoint_every: 40,
        seed,
        ..TrainConfig::default()
    }
}

fn baseline(ds: &SyntheticDataset) -> RunCost {
    RunCost::new("mlp8", MLP.num_params(ds.dim, ds.num_classes) as u64, 240, 32).unwrap()
}

#[test]
fn erm_without_stopping_runs_full_length() {
    let ds = small_dataset();
    let r = run_erm(&ds, MLP, &config(0), &StopPolicy::none(), &baseline(&ds)).unwrap();
    assert_eq!(r.method, Method::Erm);
    assert_eq!(r.main.steps_trained, 240);
    assert_eq!(r.charged_checkpoints(), 6);
    assert!(r.reference.is_none());
    assert!((r.costs.relative_total - 100.0).abs() < 1e-9);

    let es = run_erm(&ds, MLP, &config(0), &StopPolicy::patience(1), &baseline(&ds)).unwrap();
    assert_eq!(es.method, Method::ErmEs);
    assert!(es.stop_checkpoint <= r.stop_checkpoint);
    assert_eq!(es.main.steps_trained, 40 * es.charged_checkpoints());
    let full_curve = r.main.hard_slice_curve();
    assert_eq!(early_stop(&full_curve, 1).unwrap(), (es.best_checkpoint, es.stop_checkpoint));
}

#[test]
fn cartography_costs_reference_plus_main() {
    let ds = small_dataset();
    let configs = PipelineConfigs {
        reference: config(0),
        main: config(0),
    };
    let r = run_cartography(&ds, MLP, MLP, 0.33, SubsetKind::Ambiguous, &configs, &baseline(&ds)).unwrap();
    assert_eq!(r.method, Method::Dm(SubsetKind::Ambiguous));
    assert!((r.costs.relative_total - 200.0).abs() < 1e-9);
    assert_eq!(r.main.steps_trained, 240);
    assert_eq!(r.map.as_ref().unwrap().q, 0.33);

    let err = run_cartography(&ds, MLP, MLP, 0.33, SubsetKind::Easy, &configs, &baseline(&ds)).unwrap_err();
    assert!(matches!(err, Error::Usage(_)));
    let err = run_cartography(&ds, MLP, MLP, 0.7, SubsetKind::Ambiguous, &configs, &baseline(&ds)).unwrap_err();
    assert!(matches!(err, Error::Usage(_)));
}

#[test]
fn random_subset_is_reproducible() {
    let ds = small_dataset();
    let configs = PipelineConfigs {
        reference: config(0),
        main: config(3),
    };
    let a = run_cartography(&ds, ToyModelSpec::Linear, MLP, 0.33, SubsetKind::Random, &configs, &baseline(&ds)).unwrap();
    let b = run_cartography(&ds, ToyModelSpec::Linear, MLP, 0.33, SubsetKind::Random, &configs, &baseline(&ds)).unwrap();
    assert_eq!(a.main.dynamics, b.main.dynamics);
    assert_eq!(a.main.final_params_digest, b.main.final_params_digest);
}

#[test]
fn ftft_charges_through_stop_checkpoint() {
    let ds = small_dataset();
    let configs = PipelineConfigs {
        reference: config(0),
        main: config(0),
    };
    let stop = StopPolicy::patience(1);
    let r = run_ftft(&ds, ToyModelSpec::Linear, MLP, 0.33, &stop, &configs, &baseline(&ds)).unwrap();
    assert_eq!(r.method, Method::Ftft);
    assert!(r.warnings.is_empty());
    assert!(r.best_checkpoint <= r.stop_checkpoint);
    let curve = r.main.hard_slice_curve();
    assert_eq!(curve.len(), r.charged_checkpoints());
    assert_eq!(early_stop(&curve, 1).unwrap(), (r.best_checkpoint, r.stop_checkpoint));
    assert_eq!(r.main.steps_trained, 40 * r.charged_checkpoints());
    let max = curve.iter().copied().fold(f64::MIN, f64::max);
    assert_eq!(r.best_metrics().hard_slice_accuracy, max);
    assert_eq!(r.best_params(), &r.main.checkpoint_params[r.best_checkpoint][..]);

    let reference_share = 100.0 * 10.0 / MLP.num_params(4, 2) as f64;
    let main_share = 100.0 * r.charged_checkpoints() as f64 / 6.0;
    assert!((r.costs.relative_total - reference_share - main_share).abs() < 1e-9);

    let dm = run_cartography(&ds, ToyModelSpec::Linear, MLP, 0.33, SubsetKind::Ambiguous, &configs, &baseline(&ds)).unwrap();
    if r.stop_checkpoint < 5 {
        assert!(r.costs.relative_total < dm.costs.relative_total);
    }
}

#[test]
fn ftft_needs_patience_and_warns_on_expensive_reference() {
    let ds = small_dataset();
    let configs = PipelineConfigs {
        reference: config(0),
        main: config(0),
    };
    let err = run_ftft(&ds, ToyModelSpec::Linear, MLP, 0.33, &StopPolicy::none(), &configs, &baseline(&ds)).unwrap_err();
    assert!(matches!(err, Error::Usage(_)));

    let reference = run_reference(&ds, MLP, &configs.reference, "ref").unwrap();
    let r = ftft_from_reference(&ds, reference, &configs, MLP, 0.33, &StopPolicy::patience(2), &baseline(&ds)).unwrap();
    assert_eq!(r.warnings.len(), 1);
    assert!(r.warnings[0].contains("not cheaper"));
}

fn small_benchmark() -> BenchmarkConfig {
    let mut c = BenchmarkConfig::shipped();
    c.dataset.num_instances = 400;
    c.dataset.hard_slice_size = 100;
    c.main_config.max_steps = 160;
    for r in &mut c.references {
        r.config.max_steps = 160;
    }
    c.seeds = Some(vec![0, 1]);
    c
}

#[test]
fn benchmark_curves_share_cadence() {
    let result = run_benchmark(&small_benchmark()).unwrap();
    assert!(result.is_complete());
    for s in &result.seeds {
        assert_eq!(s.reports.len(), 5);
        let full = s.report(Method::Erm).unwrap().main.checkpoint_metrics.len();
        for r in &s.reports {
            let steps: Vec<usize> = r.main.checkpoint_metrics.iter().map(|m| m.step).collect();
            let expected: Vec<usize> = (1..=steps.len()).map(|i| 40 * i).collect();
            assert_eq!(steps, expected, "{}", r.method);
            assert!(steps.len() <= full);
        }
    }
    let methods: Vec<String> = result.summary().iter().filter(|r| r.seed == 0).map(|r| r.method.clone()).collect();
    assert_eq!(methods, ["ERM", "ERM(ES)", "DM-random", "DM-ambiguous", "FTFT"]);
}

#[test]
fn failed_stage_is_labelled_in_bundle() {
    let mut c = small_benchmark();
    c.main_config.weight_decay = 1e6;
    let result = run_benchmark(&c).unwrap();
    assert!(!result.is_complete());
    let dir = tempfile::tempdir().unwrap();
    write_bundle(&result, dir.path()).unwrap();
    let status = fs::read_to_string(dir.path().join("status.txt")).unwrap();
    assert!(status.starts_with("incomplete\n"), "{status}");
    assert!(status.contains("seed 0: ERM:"), "{status}");
    let failed = fs::read_to_string(dir.path().join("seed-0/FAILED.txt")).unwrap();
    assert!(failed.contains("partial"));
    assert!(dir.path().join("seed-0/reference-linear.dyn.jsonl").exists());
    assert!(!dir.path().join("seed-0/erm.metrics.csv").exists());
}

#[test]
fn benchmark_config_validation() {
    let c = BenchmarkConfig::shipped();
    let mut bad = c.clone();
    bad.seeds = Some(vec![]);
    assert_eq!(bad.validate().unwrap_err().to_string(), "seeds required");
    let mut bad = c.clone();
    bad.ftft_reference = "nope".into();
    assert!(matches!(bad.validate(), Err(Error::Usage(_))));
    let mut bad = c.clone();
    bad.stop = StopPolicy::none();
    assert!(bad.validate().is_err());
    let mut bad = c;
    bad.q = 0.9;
    assert!(matches!(bad.validate(), Err(Error::Usage(_))));
    assert!(matches!(
        BenchmarkConfig::from_json(r#"{"main_model":{"kind":"linear"},"bogus":1}"#),
        Err(Error::Usage(_))
    ));
}
