//! The `taco` command line: `run`, `eval`, `stats`, `cache`, `fixtures`.
//!
//! Exit codes: 0 success, 1 operational error, 2 usage error. Data and
//! tables go to stdout, diagnostics to stderr.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::answer::Answer;
use crate::confidence::{Aggregator, Estimator};
use crate::fixtures::{Fixture, FixtureOptions, Scenario};
use crate::gateway::{CacheMode, ReplayCache};
use crate::metrics::{
    accuracy_f1, amber_metrics, by_split, confusion, extract_objects, hallusion_metrics, mme_score, yes_bias,
    GenerativePrediction, LabeledPrediction, Lexicon,
};
use crate::pipeline::{
    load_dataset, read_artifacts, DatasetExample, DatasetFormat, Pipeline, RunArtifact, RunConfig,
    ARTIFACT_SCHEMA_VERSION,
};
use crate::stats::{variance_correctness_report, variance_observations, LabeledRecord, StatsError};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(
    name = "taco",
    version,
    about = "Self-verification and confidence calibration for multimodal QA"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the pipeline over a dataset and write JSONL artifacts.
    Run(RunArgs),
    /// Score artifacts against dataset labels.
    Eval(EvalArgs),
    /// Answer-variance and yes-bias analysis.
    Stats(StatsArgs),
    /// Inspect or compact a replay cache.
    Cache(CacheArgs),
    /// Write a deterministic offline scenario (dataset, scripts, config).
    Fixtures(FixturesArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value = "unified")]
    pub format: DatasetFormat,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub estimator: Option<Estimator>,
    #[arg(long)]
    pub aggregator: Option<Aggregator>,
    #[arg(long)]
    pub paraphrases: Option<usize>,
    #[arg(long)]
    pub parallelism: Option<usize>,
    #[arg(long)]
    pub cache_mode: Option<CacheMode>,
    /// Skip examples already present in --out and append the rest.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum)]
pub enum MetricFamily {
    Pope,
    Mme,
    Hallusion,
    Amber,
    Bias,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub artifacts: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value = "unified")]
    pub format: DatasetFormat,
    #[arg(long, value_delimiter = ',', default_value = "pope,bias")]
    pub metrics: Vec<MetricFamily>,
    /// Object lexicon (JSON map of surface form to canonical name); required for amber.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Write the JSON report here instead of after the table on stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub artifacts: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value = "unified")]
    pub format: DatasetFormat,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CacheArgs {
    #[command(subcommand)]
    pub action: CacheAction,
}

#[derive(Debug, Subcommand)]
pub enum CacheAction {
    /// Entry counts per backend and model.
    Stats {
        #[arg(long)]
        cache: PathBuf,
    },
    /// Rewrite the file with one record per key.
    Compact {
        #[arg(long)]
        cache: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct FixturesArgs {
    #[arg(long, value_parser = parse_scenario)]
    pub scenario: Scenario,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_scenario(s: &str) -> Result<Scenario, String> {
    s.parse().map_err(|e: crate::fixtures::UnknownScenario| e.to_string())
}

/// Flag misuse detected after parsing; exits with status 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UsageError(String);

fn usage(message: impl Into<String>) -> anyhow::Error {
    UsageError(message.into()).into()
}

type Outcome = anyhow::Result<()>;

/// Parse `args` (including the program name) and execute. Returns the
/// process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{}", e.render());
                    0
                }
                _ => {
                    let _ = write!(stderr, "{}", e.render());
                    2
                }
            };
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(a, stdout, stderr),
        Command::Eval(a) => cmd_eval(a, stdout),
        Command::Stats(a) => cmd_stats(a, stdout),
        Command::Cache(a) => cmd_cache(a, stdout),
        Command::Fixtures(a) => cmd_fixtures(a, stdout),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                2
            } else {
                1
            }
        }
    }
}

fn emit(stdout: &mut dyn Write, value: &impl Serialize) -> anyhow::Result<()> {
    writeln!(stdout, "{}", serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn write_or_emit(out: Option<&Path>, stdout: &mut dyn Write, value: &impl Serialize) -> anyhow::Result<()> {
    match out {
        Some(path) => {
            let body = serde_json::to_string_pretty(value)? + "\n";
            std::fs::write(path, body).with_context(|| format!("cannot write {}", path.display()))
        }
        None => emit(stdout, value),
    }
}

fn cmd_run(args: RunArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Outcome {
    let mut config = RunConfig::load(&args.config).with_context(|| format!("config {}", args.config.display()))?;
    let p = &mut config.pipeline;
    if let Some(e) = args.estimator {
        p.estimator = e;
    }
    if let Some(a) = args.aggregator {
        p.aggregator = a;
    }
    if let Some(n) = args.paraphrases {
        p.n_paraphrases = n;
    }
    if let Some(n) = args.parallelism {
        p.parallelism = n;
    }
    if let Some(m) = args.cache_mode {
        p.cache_mode = m;
    }
    p.validate().map_err(|e| usage(e.to_string()))?;

    let examples = load_dataset(&args.dataset, args.format, config.image_dir.as_deref())
        .with_context(|| format!("dataset {}", args.dataset.display()))?;
    let gateway = config.build_gateway()?;
    let exemplars = config.exemplars()?;
    let pipeline = Pipeline::new(&config.pipeline, &gateway, &exemplars);
    let (artifacts, summary) = pipeline.run_to_file(&examples, &args.out, args.resume)?;
    emit(stdout, &summary)?;
    if summary.failures > 0 {
        for a in artifacts.iter().filter(|a| a.failed) {
            // the first gateway error usually explains everything after it
            let reason = a
                .flags
                .iter()
                .find(|f| f.kind == "gateway_error" || f.kind == "error")
                .or(a.flags.last())
                .map_or("no final answer", |f| f.message.as_str());
            let _ = writeln!(stderr, "{}: {reason}", a.example_id);
        }
        return Err(anyhow!("{} of {} examples failed", summary.failures, summary.examples));
    }
    Ok(())
}

/// Artifacts and dataset joined by example id, in dataset order.
fn align<'a>(
    examples: &'a [DatasetExample],
    artifacts: &'a [RunArtifact],
) -> anyhow::Result<Vec<(&'a DatasetExample, &'a RunArtifact)>> {
    if artifacts.is_empty() {
        bail!("EmptyInput: the artifact file holds no artifacts");
    }
    let by_id: BTreeMap<&str, &RunArtifact> = artifacts.iter().map(|a| (a.example_id.as_str(), a)).collect();
    let dataset_ids: BTreeSet<&str> = examples.iter().map(|e| e.example_id.as_str()).collect();
    let missing: Vec<&str> = dataset_ids
        .iter()
        .filter(|id| !by_id.contains_key(*id))
        .copied()
        .collect();
    let extra: Vec<&str> = by_id.keys().filter(|id| !dataset_ids.contains(*id)).copied().collect();
    if !missing.is_empty() || !extra.is_empty() {
        bail!(
            "IdMismatch: {} dataset examples without artifacts {:?}; {} artifacts without examples {:?}",
            missing.len(),
            &missing[..missing.len().min(10)],
            extra.len(),
            &extra[..extra.len().min(10)]
        );
    }
    Ok(examples.iter().map(|e| (e, by_id[e.example_id.as_str()])).collect())
}

fn load_pair(
    artifacts: &Path,
    dataset: &Path,
    format: DatasetFormat,
) -> anyhow::Result<(Vec<DatasetExample>, Vec<RunArtifact>)> {
    let examples = load_dataset(dataset, format, None).with_context(|| format!("dataset {}", dataset.display()))?;
    let artifacts = read_artifacts(artifacts)?;
    Ok((examples, artifacts))
}

/// Binary predictions for both the direct (initial) and final answers.
fn labeled(pairs: &[(&DatasetExample, &RunArtifact)], pick: fn(&RunArtifact) -> Answer) -> Vec<LabeledPrediction> {
    pairs
        .iter()
        .filter_map(|(e, a)| {
            let gold = e.gold?;
            let mut p = LabeledPrediction::new(&e.example_id, pick(a), gold);
            p.group_keys = e.group_keys.clone();
            Some(p)
        })
        .collect()
}

fn generative(
    pairs: &[(&DatasetExample, &RunArtifact)],
    lexicon: &Lexicon,
    pick: fn(&RunArtifact) -> Option<&str>,
) -> Vec<GenerativePrediction> {
    pairs
        .iter()
        .filter_map(|(e, a)| {
            Some(GenerativePrediction {
                example_id: e.example_id.clone(),
                mentioned_objects: extract_objects(pick(a).unwrap_or(""), lexicon),
                annotated_objects: e.gold_objects.clone()?,
                hallucination_targets: e.hallucination_targets.clone(),
            })
        })
        .collect()
}

/// The JSON metric report for the chosen families; each family is scored
/// on the direct and on the final answers.
pub fn build_report(
    examples: &[DatasetExample],
    artifacts: &[RunArtifact],
    families: &[MetricFamily],
    lexicon: Option<&Lexicon>,
) -> anyhow::Result<Value> {
    let pairs = align(examples, artifacts)?;
    let direct = labeled(&pairs, RunArtifact::direct_label);
    let fin = labeled(&pairs, RunArtifact::final_label);
    let mut metrics = serde_json::Map::new();
    let families: BTreeSet<MetricFamily> = families.iter().copied().collect();
    for family in families {
        let both = |f: &dyn Fn(&[LabeledPrediction]) -> anyhow::Result<Value>| -> anyhow::Result<Value> {
            Ok(json!({"direct": f(&direct)?, "final": f(&fin)?}))
        };
        let (name, value) = match family {
            MetricFamily::Pope => (
                "pope",
                both(&|p| {
                    Ok(json!({
                        "overall": accuracy_f1(p)?,
                        "confusion": confusion(p)?,
                        "by_split": by_split(p)?,
                    }))
                })?,
            ),
            MetricFamily::Mme => (
                "mme",
                both(&|p| {
                    let scores = mme_score(p)?;
                    let total: f64 = scores.values().sum();
                    Ok(json!({"subtasks": scores, "total": total}))
                })?,
            ),
            MetricFamily::Hallusion => (
                "hallusion",
                both(&|p| Ok(serde_json::to_value(hallusion_metrics(p)?)?))?,
            ),
            MetricFamily::Bias => ("bias", both(&|p| Ok(serde_json::to_value(yes_bias(p)?)?))?),
            MetricFamily::Amber => {
                let lexicon = lexicon.ok_or_else(|| anyhow!("amber metrics need a lexicon"))?;
                let d = amber_metrics(&generative(&pairs, lexicon, |a| a.initial_answer.as_deref()))?;
                let f = amber_metrics(&generative(&pairs, lexicon, |a| a.final_answer.as_deref()))?;
                ("amber", json!({"direct": d, "final": f}))
            }
        };
        metrics.insert(name.to_string(), value);
    }
    Ok(json!({
        "schema_version": REPORT_SCHEMA_VERSION,
        "artifact_schema_version": ARTIFACT_SCHEMA_VERSION,
        "examples": pairs.len(),
        "metrics": metrics,
    }))
}

/// Fixed-width view of the numeric leaves of a report: one row per metric
/// path, direct and final side by side.
pub fn render_table(report: &Value) -> String {
    fn leaves(prefix: String, v: &Value, out: &mut Vec<(String, f64)>) {
        match v {
            Value::Number(n) => out.push((prefix, n.as_f64().unwrap_or(f64::NAN))),
            Value::Object(map) => {
                for (k, v) in map {
                    let p = if prefix.is_empty() {
                        k.clone()
                    } else {
                        format!("{prefix}.{k}")
                    };
                    leaves(p, v, out);
                }
            }
            _ => {}
        }
    }
    let mut rows: BTreeMap<String, [Option<f64>; 2]> = BTreeMap::new();
    let mut order = Vec::new();
    if let Some(Value::Object(families)) = report.get("metrics") {
        for (family, sides) in families {
            for (slot, side) in ["direct", "final"].iter().enumerate() {
                let mut out = Vec::new();
                if let Some(v) = sides.get(*side) {
                    leaves(family.clone(), v, &mut out);
                }
                for (path, value) in out {
                    if !rows.contains_key(&path) {
                        order.push(path.clone());
                    }
                    rows.entry(path).or_default()[slot] = Some(value);
                }
            }
        }
    }
    let width = order.iter().map(String::len).max().unwrap_or(6).max(6);
    let cell = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    let mut table = format!("{:<width$}  {:>12}  {:>12}\n", "metric", "direct", "final");
    for path in order {
        let [d, f] = rows[&path];
        table.push_str(&format!("{path:<width$}  {:>12}  {:>12}\n", cell(d), cell(f)));
    }
    table
}

fn cmd_eval(args: EvalArgs, stdout: &mut dyn Write) -> Outcome {
    let lexicon = match (&args.lexicon, args.metrics.contains(&MetricFamily::Amber)) {
        (None, true) => return Err(usage("--metrics amber requires --lexicon")),
        (Some(path), _) => Some(Lexicon::load(path).with_context(|| format!("lexicon {}", path.display()))?),
        (None, false) => None,
    };
    let (examples, artifacts) = load_pair(&args.artifacts, &args.dataset, args.format)?;
    let report = build_report(&examples, &artifacts, &args.metrics, lexicon.as_ref())?;
    write!(stdout, "{}", render_table(&report))?;
    if args.out.is_none() {
        writeln!(stdout)?;
    }
    write_or_emit(args.out.as_deref(), stdout, &report)?;
    Ok(())
}

/// Variance-versus-correctness on binary examples (one record each) plus
/// the yes-bias of direct and final answers.
pub fn build_stats(examples: &[DatasetExample], artifacts: &[RunArtifact]) -> anyhow::Result<Value> {
    let pairs = align(examples, artifacts)?;
    let records: Vec<LabeledRecord> = pairs
        .iter()
        .filter(|(e, a)| e.gold.is_some() && a.records.len() == 1)
        .map(|(e, a)| LabeledRecord {
            example_id: &e.example_id,
            record: &a.records[0],
            gold: e.gold,
        })
        .collect();
    if records.is_empty() {
        bail!("no labeled binary examples with answer samples");
    }
    let observations = variance_observations(&records)?;
    let report = variance_correctness_report(&observations).map_err(|e| match e {
        StatsError::SingleClass(_) => anyhow!("SingleClass: {e}; the tests compare correct against incorrect answers"),
        other => anyhow!(other),
    })?;
    let direct = labeled(&pairs, RunArtifact::direct_label);
    let fin = labeled(&pairs, RunArtifact::final_label);
    Ok(json!({
        "schema_version": REPORT_SCHEMA_VERSION,
        "examples": records.len(),
        "variance_correctness": report,
        "yes_bias": {"direct": yes_bias(&direct)?, "final": yes_bias(&fin)?},
    }))
}

fn cmd_stats(args: StatsArgs, stdout: &mut dyn Write) -> Outcome {
    let (examples, artifacts) = load_pair(&args.artifacts, &args.dataset, args.format)?;
    let report = build_stats(&examples, &artifacts)?;
    write_or_emit(args.out.as_deref(), stdout, &report)?;
    Ok(())
}

fn cmd_cache(args: CacheArgs, stdout: &mut dyn Write) -> Outcome {
    match args.action {
        CacheAction::Stats { cache } => {
            let records = ReplayCache::records(&cache).with_context(|| format!("cache {}", cache.display()))?;
            let mut per_model: BTreeMap<String, usize> = BTreeMap::new();
            let mut keys = BTreeSet::new();
            for r in &records {
                *per_model
                    .entry(format!("{}/{}", r.request.backend_id, r.request.model_name))
                    .or_default() += 1;
                keys.insert(r.key.as_str().to_string());
            }
            emit(
                stdout,
                &json!({
                    "schema_version": REPORT_SCHEMA_VERSION,
                    "records": records.len(),
                    "unique_keys": keys.len(),
                    "per_model": per_model,
                }),
            )?;
        }
        CacheAction::Compact { cache } => {
            if !cache.exists() {
                bail!("cache {} does not exist", cache.display());
            }
            let before = ReplayCache::records(&cache)?.len();
            let kept = ReplayCache::open(&cache)?.compact()?;
            emit(stdout, &json!({"before": before, "after": kept}))?;
        }
    }
    Ok(())
}

fn cmd_fixtures(args: FixturesArgs, stdout: &mut dyn Write) -> Outcome {
    let fixture = Fixture::generate(
        args.scenario,
        &FixtureOptions {
            seed: args.seed,
            ..FixtureOptions::default()
        },
    );
    let written = fixture
        .write(&args.out)
        .with_context(|| format!("cannot write fixtures to {}", args.out.display()))?;
    for path in written {
        writeln!(stdout, "{}", path.display())?;
    }
    Ok(())
}
