//! The whole pipeline from files on disk, as the `taco run` command does
//! it: write a fixture, load its config, run with resumable output.
//!
//! ```text
//! cargo run --example end_to_end -- [scenario] [out-dir]
//! ```

use std::path::PathBuf;

use taco::fixtures::{Fixture, FixtureOptions, Scenario};
use taco::pipeline::{load_dataset, DatasetFormat, Pipeline, RunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let scenario: Scenario = args.next().as_deref().unwrap_or("generative_caption").parse()?;
    let dir = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("taco-end-to-end"));

    Fixture::generate(scenario, &FixtureOptions::default()).write(&dir)?;
    let config = RunConfig::load(dir.join("config.json"))?;
    let examples = load_dataset(
        dir.join("dataset.jsonl"),
        DatasetFormat::Unified,
        config.image_dir.as_deref(),
    )?;
    let gateway = config.build_gateway()?;
    let exemplars = config.exemplars()?;
    let pipeline = Pipeline::new(&config.pipeline, &gateway, &exemplars);

    let out = dir.join("artifacts.jsonl");
    let (artifacts, summary) = pipeline.run_to_file(&examples, &out, false)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    if let Some(a) = artifacts.iter().find(|a| !a.is_passthrough()) {
        println!(
            "\n{}\n  before: {}",
            a.question,
            a.initial_answer.as_deref().unwrap_or("-")
        );
        if let Some(context) = &a.context {
            println!("{}", context.render());
        }
        println!("  after:  {}", a.final_answer.as_deref().unwrap_or("-"));
    }

    // a second run with resume finds everything done
    let (_, again) = pipeline.run_to_file(&examples, &out, true)?;
    println!(
        "\nresumed {} of {}, executed {}",
        again.resumed, again.examples, again.executed
    );
    println!("artifacts in {}", out.display());
    Ok(())
}
