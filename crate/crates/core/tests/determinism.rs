mod common;

use std::sync::Arc;

use common::tiny_config;
use rallynet::agents::{ActMode, RandomAgent, RuleAgent};
use rallynet::checkpoint::Checkpoint;
use rallynet::data::split_dataset;
use rallynet::data::synth::{generate_synthetic_dataset, SynthConfig};
use rallynet::engine::RolloutMode;
use rallynet::eval::{build_report, evaluate_agent, EvalOptions};
use rallynet::experience::build_index;
use rallynet::model::{train, RallyNetAgent};

/// Synthesizes, trains and evaluates; returns the parameters and the report as JSON.
fn pipeline(seed: u64) -> (String, String) {
    let data = generate_synthetic_dataset(&SynthConfig::two_mode(30, 5.0), seed).unwrap();
    let (train_set, test) = split_dataset(&data, 0.8).unwrap();
    let idx = Arc::new(build_index(&train_set, 5).unwrap());
    let cfg = rallynet::model::ModelConfig { epochs: 2, ..tiny_config(seed) };
    let (net, _) = train(&train_set, &idx, &cfg, None).unwrap();
    let params = serde_json::to_string(&net.params.snapshot().unwrap()).unwrap();

    let opts = EvalOptions { max_len: 40, ..EvalOptions::with_base_seed(RolloutMode::InitOnly, seed) };
    let runs = vec![
        evaluate_agent(&mut RandomAgent::new(seed), &test, &opts).unwrap(),
        evaluate_agent(&mut RuleAgent::new(idx.clone(), seed), &test, &opts).unwrap(),
        evaluate_agent(&mut RallyNetAgent::new(Arc::new(net), idx, ActMode::Sample, seed), &test, &opts).unwrap(),
    ];
    let report = serde_json::to_string(&build_report(&test, &opts, &runs).unwrap()).unwrap();
    (params, report)
}

#[test]
fn same_seed_same_bytes() {
    assert_eq!(pipeline(5), pipeline(5));
}

#[test]
fn different_seeds_differ() {
    let (a, b) = (pipeline(5), pipeline(6));
    assert_ne!(a.0, b.0);
    assert_ne!(a.1, b.1);
}

#[test]
fn checkpoints_restore_identical_models() {
    let data = generate_synthetic_dataset(&SynthConfig::two_mode(20, 5.0), 1).unwrap();
    let idx = build_index(&data, 5).unwrap();
    let (net, _) = train(&data, &idx, &tiny_config(1), None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rn.json");
    Checkpoint::of_rallynet(&net, &idx.dataset_hash).unwrap().save(&path).unwrap();
    let back = Checkpoint::load(&path, Some(&idx.dataset_hash)).unwrap().into_rallynet().unwrap();
    assert_eq!(
        serde_json::to_string(&net.params.snapshot().unwrap()).unwrap(),
        serde_json::to_string(&back.params.snapshot().unwrap()).unwrap()
    );
    assert!(Checkpoint::load(&path, Some("not the hash")).is_err());
}
