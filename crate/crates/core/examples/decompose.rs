//! Break a generated caption into atomic tuples and yes/no queries.
//!
//! Uses the scripted helper LLM from the `generative_caption` fixture, so
//! it runs offline.

use taco::fixtures::{Fixture, FixtureOptions, Scenario};
use taco::querygen::{Exemplars, QueryGenerator};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixture = Fixture::generate(
        Scenario::GenerativeCaption,
        &FixtureOptions {
            size: Some(1),
            ..FixtureOptions::default()
        },
    );
    let example = &fixture.dataset[0];
    let gateway = fixture.gateway();
    let caption = gateway
        .query(
            &fixture
                .pipeline
                .mllm()
                .request(example.question.as_str())
                .with_image(example.image_ref),
        )?
        .text;
    let exemplars = Exemplars::bundled();
    let llm = fixture.pipeline.llm();
    let outcome = QueryGenerator::new(&gateway, &llm, &exemplars).generate(&example.question, &caption)?;

    println!("caption: {caption}\n");
    println!("tuples:");
    for t in &outcome.tuples {
        println!("  {}", t.render());
    }
    println!("queries:");
    for q in &outcome.queries {
        println!("  {} | {}", q.id, q.text);
    }
    for d in &outcome.diagnostics {
        println!("note: {d}");
    }
    println!("\n{} helper calls", outcome.llm_calls);

    // already-atomic questions skip the helper entirely
    let direct = QueryGenerator::new(&gateway, &llm, &exemplars).generate("Is there a dog in the image?", "Yes")?;
    println!(
        "passthrough: {:?}, {} helper calls",
        direct.queries[0].text, direct.llm_calls
    );
    Ok(())
}
