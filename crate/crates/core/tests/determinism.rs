//! Strict replay reproduces a recorded run byte for byte at any
//! parallelism, and every example issues exactly its call budget.

mod common;

use std::fs;

use taco::gateway::CacheMode;
use taco::pipeline::{read_artifacts, Pipeline, PipelineConfig};
use taco::querygen::Exemplars;

#[test]
fn strict_replay_is_byte_identical() {
    let mixed = common::mixed_fixture(11, 25, 25);
    assert_eq!(mixed.dataset.len(), 50);
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache.jsonl");
    let exemplars = Exemplars::bundled();
    let run = |parallelism: usize, mode: CacheMode, name: &str| {
        let gateway = common::gateway(&mixed.mllm, &mixed.llm, &cache, mode);
        let config = PipelineConfig {
            parallelism,
            cache_mode: mode,
            ..mixed.config.clone()
        };
        let out = dir.path().join(name);
        let (artifacts, summary) = Pipeline::new(&config, &gateway, &exemplars)
            .run_to_file(&mixed.dataset, &out, false)
            .unwrap();
        assert_eq!(summary.failures, 0, "{:?}", summary.failed_ids);
        (fs::read(&out).unwrap(), artifacts, gateway.stats())
    };

    let (recorded, artifacts, _) = run(8, CacheMode::Record, "record.jsonl");
    let (serial, _, serial_stats) = run(1, CacheMode::ReplayStrict, "p1.jsonl");
    let (parallel, _, parallel_stats) = run(8, CacheMode::ReplayStrict, "p8.jsonl");
    let (again, _, _) = run(8, CacheMode::ReplayStrict, "p8-again.jsonl");
    assert_eq!(serial, parallel);
    assert_eq!(parallel, again);
    assert_eq!(recorded, serial);
    assert_eq!(serial_stats.backend_calls, 0);
    assert_eq!(parallel_stats.cache_hits, parallel_stats.calls);

    // input order, lossless round trip
    let ids: Vec<&str> = artifacts.iter().map(|a| a.example_id.as_str()).collect();
    let expected: Vec<&str> = mixed.dataset.iter().map(|e| e.example_id.as_str()).collect();
    assert_eq!(ids, expected);
    assert_eq!(read_artifacts(dir.path().join("p8.jsonl")).unwrap(), artifacts);

    let n = mixed.config.n_paraphrases as u64;
    for a in &artifacts {
        let k = a.queries.len() as u64;
        let budget = if a.is_passthrough() {
            1 + 1 + n
        } else {
            1 + 2 + k + k * n + 1
        };
        assert_eq!(a.timing.gateway_calls, budget, "{}", a.example_id);
    }
    assert!(artifacts.iter().any(|a| a.is_passthrough()));
    assert!(artifacts.iter().any(|a| !a.is_passthrough()));
}

#[test]
fn cold_cache_strict_replay_fails_every_example() {
    let mixed = common::mixed_fixture(3, 2, 2);
    let dir = tempfile::tempdir().unwrap();
    let gateway = common::gateway(
        &mixed.mllm,
        &mixed.llm,
        &dir.path().join("cold.jsonl"),
        CacheMode::ReplayStrict,
    );
    let exemplars = Exemplars::bundled();
    let pipeline = Pipeline::new(&mixed.config, &gateway, &exemplars);
    for example in &mixed.dataset {
        let a = pipeline.run_example(example);
        assert!(a.failed, "{}", a.example_id);
        assert!(a.flags.iter().any(|f| f.message.contains("strict replay")));
    }
    assert_eq!(gateway.stats().backend_calls, 0);
}
