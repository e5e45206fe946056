//! Paraphrase one question, answer every phrasing, and score the vote.
//!
//! The first half runs against the scripted `passthrough_pope` models. The
//! second half scores a hand-written gray-box sample set with both
//! aggregators.

use taco::confidence::{normalize_answer, select_answer, Aggregator, AnswerSample, Estimator};
use taco::fixtures::{Fixture, FixtureOptions, Scenario};
use taco::querygen::AtomicQuery;
use taco::reformulation::paraphrase_query;
use taco::Answer;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixture = Fixture::generate(Scenario::PassthroughPope, &FixtureOptions::default());
    let example = &fixture.dataset[0];
    let gateway = fixture.gateway();
    let query = AtomicQuery::passthrough(&example.question);
    let outcome = paraphrase_query(&gateway, &fixture.pipeline.llm(), &query, 6)?;

    let mllm = fixture.pipeline.mllm();
    let mut samples = Vec::new();
    for (i, phrasing) in outcome.set.paraphrases.iter().enumerate() {
        let reply = gateway.query(&mllm.request(phrasing.as_str()).with_image(example.image_ref))?;
        println!("{phrasing:<55} -> {}", reply.text);
        samples.push(AnswerSample::new(i, normalize_answer(&reply.text), None));
    }
    let result = select_answer(&samples, Estimator::SelfConsistency, Aggregator::Mean, None)?;
    println!(
        "majority {:?} with self-consistency {:.2} (gold {:?})\n",
        result.majority, result.score, example.gold
    );

    // p is the probability of the sampled answer token
    // MEAN and MAX disagree: one very sure Yes against two fairly sure Noes
    let gray = [
        (Answer::Yes, 0.98),
        (Answer::Yes, 0.52),
        (Answer::Yes, 0.51),
        (Answer::No, 0.90),
        (Answer::No, 0.90),
    ];
    let gray: Vec<AnswerSample> = gray
        .iter()
        .enumerate()
        .map(|(i, (a, p))| AnswerSample::new(i, *a, Some(*p)))
        .collect();
    for aggregator in [Aggregator::Mean, Aggregator::Max] {
        let r = select_answer(&gray, Estimator::SelfConfidence, aggregator, None)?;
        println!("self-confidence/{aggregator:?}: {:?} score {:.3}", r.majority, r.score);
    }
    let r = select_answer(&gray, Estimator::SelfConsistency, Aggregator::Mean, None)?;
    println!("self-consistency: {:?} score {:.3}", r.majority, r.score);
    Ok(())
}
