//! Record model calls to a cache file, then replay them with no backend
//! traffic. A strict replay of a request that was never recorded fails.

use std::sync::Arc;

use taco::fixtures::{Fixture, FixtureOptions, Scenario};
use taco::gateway::{CacheMode, Gateway, ReplayCache, ScriptedBackend};
use taco::pipeline::Pipeline;
use taco::querygen::Exemplars;

fn gateway(fixture: &Fixture, cache: &std::path::Path, mode: CacheMode) -> std::io::Result<Gateway> {
    let mut g = Gateway::new();
    g.register("mllm", Arc::new(ScriptedBackend::new(fixture.mllm.clone())), 4);
    g.register("llm", Arc::new(ScriptedBackend::new(fixture.llm.clone())), 4);
    Ok(g.with_cache(ReplayCache::open(cache)?, mode))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixture = Fixture::generate(Scenario::PassthroughPope, &FixtureOptions::default());
    let dir = std::env::temp_dir().join(format!("taco-replay-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let cache = dir.join("cache.jsonl");
    let exemplars = Exemplars::bundled();

    for mode in [CacheMode::Record, CacheMode::ReplayStrict] {
        let g = gateway(&fixture, &cache, mode)?;
        let artifacts =
            Pipeline::new(&fixture.pipeline, &g, &exemplars).run_dataset(&fixture.dataset, &mut |_| Ok(()))?;
        let stats = g.stats();
        println!(
            "{mode:?}: {} examples, {} calls, {} cache hits, {} backend calls",
            artifacts.len(),
            stats.calls,
            stats.cache_hits,
            stats.backend_calls
        );
    }

    let cold = dir.join("cold.jsonl");
    let g = gateway(&fixture, &cold, CacheMode::ReplayStrict)?;
    let artifact = Pipeline::new(&fixture.pipeline, &g, &exemplars).run_example(&fixture.dataset[0]);
    println!("cold strict replay failed: {}", artifact.failed);
    if let Some(flag) = artifact.flags.first() {
        println!("  {}", flag.message);
    }
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
