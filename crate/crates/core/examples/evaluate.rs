//! Score direct and calibrated answers with the POPE, MME and yes-bias
//! metrics, and a generative run with the AMBER-style object metrics.

use taco::cli::{build_report, render_table, MetricFamily};
use taco::fixtures::{Fixture, FixtureOptions, Scenario};
use taco::metrics::Lexicon;
use taco::pipeline::Pipeline;
use taco::querygen::Exemplars;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let exemplars = Exemplars::bundled();
    let runs = [
        (Scenario::PassthroughPope, vec![MetricFamily::Pope, MetricFamily::Bias]),
        (Scenario::GenerativeCaption, vec![MetricFamily::Amber]),
    ];
    for (scenario, families) in runs {
        let fixture = Fixture::generate(scenario, &FixtureOptions::default());
        let gateway = fixture.gateway();
        let artifacts =
            Pipeline::new(&fixture.pipeline, &gateway, &exemplars).run_dataset(&fixture.dataset, &mut |_| Ok(()))?;
        let lexicon = fixture
            .lexicon
            .as_ref()
            .map(|forms| Lexicon::new(forms.iter().map(|(k, v)| (k, v.clone()))));
        let report = build_report(&fixture.dataset, &artifacts, &families, lexicon.as_ref())?;
        println!("== {}\n{}", scenario.as_str(), render_table(&report));
    }
    Ok(())
}
