//! Majority voting over paraphrases against a yes-biased model.
//!
//! The scripted model answers the canonical question "Yes" 70% of the time
//! regardless of the image, but answers paraphrases from the evidence. The
//! direct answers over-predict Yes; the calibrated answers mostly do not.
//!
//! ```text
//! cargo run --example yes_bias -- [seed]
//! ```

use taco::fixtures::{Fixture, FixtureOptions, Scenario};
use taco::metrics::{yes_bias, LabeledPrediction};
use taco::pipeline::Pipeline;
use taco::querygen::Exemplars;
use taco::stats::{variance_correctness_report, variance_observations, LabeledRecord};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0);
    let fixture = Fixture::generate(
        Scenario::YesBiasedModel,
        &FixtureOptions {
            seed,
            ..FixtureOptions::default()
        },
    );
    let gateway = fixture.gateway();
    let exemplars = Exemplars::bundled();
    let pipeline = Pipeline::new(&fixture.pipeline, &gateway, &exemplars);
    let artifacts = pipeline.run_dataset(&fixture.dataset, &mut |_| Ok(()))?;

    let mut direct = Vec::new();
    let mut calibrated = Vec::new();
    let mut labeled = Vec::new();
    for (ex, a) in fixture.dataset.iter().zip(&artifacts) {
        let gold = ex.gold.expect("biased fixture is labeled");
        direct.push(LabeledPrediction::new(&ex.example_id, a.direct_label(), gold));
        calibrated.push(LabeledPrediction::new(&ex.example_id, a.final_label(), gold));
        labeled.push(LabeledRecord {
            example_id: &ex.example_id,
            record: &a.records[0],
            gold: Some(gold),
        });
    }
    let before = yes_bias(&direct)?;
    let after = yes_bias(&calibrated)?;
    println!(
        "direct      pct_diff {:+.3}  fp_ratio {:?}",
        before.pct_diff, before.fp_ratio
    );
    println!(
        "calibrated  pct_diff {:+.3}  fp_ratio {:?}",
        after.pct_diff, after.fp_ratio
    );

    let report = variance_correctness_report(&variance_observations(&labeled)?)?;
    println!(
        "mean variance: correct {:.4} ({}), incorrect {:.4} ({})",
        report.mean_var_correct, report.n_correct, report.mean_var_incorrect, report.n_incorrect
    );
    if let Some(pbc) = &report.pbc {
        println!("point-biserial r = {:.3}, p = {:.2e}", pbc.statistic, pbc.p_value);
    }
    if let Some(w) = &report.welch {
        println!("welch t = {:.3}, p = {:.2e}", w.statistic, w.p_value);
    }
    Ok(())
}
