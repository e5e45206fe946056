//! Shared helpers for the integration tests.
#![allow(dead_code)]

pub mod golden;
pub mod oracles;

use std::path::Path;
use std::sync::Arc;

use taco::fixtures::{Fixture, FixtureOptions, Scenario};
use taco::gateway::{CacheMode, Gateway, MockScript, ReplayCache, ScriptedBackend};
use taco::pipeline::{DatasetExample, PipelineConfig};

/// Passthrough and generative examples in one dataset, with merged scripts.
pub struct Mixed {
    pub dataset: Vec<DatasetExample>,
    pub mllm: MockScript,
    pub llm: MockScript,
    pub config: PipelineConfig,
}

pub fn mixed_fixture(seed: u64, passthrough: usize, generative: usize) -> Mixed {
    let opts = |size| FixtureOptions {
        seed,
        size: Some(size),
        ..FixtureOptions::default()
    };
    let a = Fixture::generate(Scenario::PassthroughPope, &opts(passthrough));
    let b = Fixture::generate(Scenario::GenerativeCaption, &opts(generative));
    let mut mllm = a.mllm.clone();
    mllm.rules.extend(b.mllm.rules.clone());
    let mut llm = b.llm.clone();
    llm.rules.extend(a.llm.rules.clone());
    let mut dataset = Vec::new();
    // interleave so workers see both kinds at once
    let (mut x, mut y) = (a.dataset.into_iter(), b.dataset.into_iter());
    loop {
        match (x.next(), y.next()) {
            (None, None) => break,
            (p, q) => dataset.extend(p.into_iter().chain(q)),
        }
    }
    Mixed {
        dataset,
        mllm,
        llm,
        config: a.pipeline,
    }
}

pub fn gateway(mllm: &MockScript, llm: &MockScript, cache: &Path, mode: CacheMode) -> Gateway {
    let mut g = Gateway::new();
    g.register("mllm", Arc::new(ScriptedBackend::new(mllm.clone())), 8);
    g.register("llm", Arc::new(ScriptedBackend::new(llm.clone())), 8);
    g.with_cache(ReplayCache::open(cache).unwrap(), mode)
}
