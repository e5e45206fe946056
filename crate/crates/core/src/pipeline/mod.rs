//! End-to-end orchestration: initial answer, atomic queries, paraphrases,
//! ensemble answering, confidence selection, refinement.
//!
//! Stage failures never abort an example; they are recorded as [`Flag`]s and
//! the example falls back to the best answer available. An example is marked
//! `failed` only when no final answer can be produced at all.

mod config;
mod dataset;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::thread;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answer::{Answer, YesNo};
use crate::confidence::{normalize_answer, select_answer, AnswerSample, ConfidenceError, Estimator};
use crate::gateway::{extract_yes_no_probability, Metered, ModelClient};
use crate::querygen::{AtomicQuery, AtomicTuple, Exemplars, QueryGenerator};
use crate::refinement::{format_verification_context, refine, RefineStatus, VerificationContext};
use crate::reformulation::paraphrase_query;
use crate::verification::VerificationRecord;

pub use config::{
    interpolate_env, BackendSpec, ConfigError, PipelineConfig, RunConfig, ScriptSource, CONFIG_SCHEMA_VERSION,
};
pub use dataset::{load_dataset, no_image, write_unified, DatasetError, DatasetExample, DatasetFormat};

pub const ARTIFACT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    InitialAnswer,
    QueryGeneration,
    Paraphrasing,
    Answering,
    Confidence,
    Refinement,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flag {
    pub stage: Stage,
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timing {
    pub gateway_calls: u64,
    /// Backend-reported latency summed over calls. Replayed calls report the
    /// recorded latency, so the value is reproducible.
    pub latency_ms: u64,
}

/// Full trace of one example through the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArtifact {
    pub schema_version: u32,
    pub example_id: String,
    pub question: String,
    pub initial_answer: Option<String>,
    #[serde(default)]
    pub initial_answer_provided: bool,
    pub tuples: Vec<AtomicTuple>,
    pub queries: Vec<AtomicQuery>,
    pub records: Vec<VerificationRecord>,
    pub context: Option<VerificationContext>,
    pub refine_status: Option<RefineStatus>,
    pub final_answer: Option<String>,
    pub failed: bool,
    pub flags: Vec<Flag>,
    pub timing: Timing,
}

impl RunArtifact {
    fn new(example: &DatasetExample) -> Self {
        RunArtifact {
            schema_version: ARTIFACT_SCHEMA_VERSION,
            example_id: example.example_id.clone(),
            question: example.question.clone(),
            initial_answer: None,
            initial_answer_provided: false,
            tuples: Vec::new(),
            queries: Vec::new(),
            records: Vec::new(),
            context: None,
            refine_status: None,
            final_answer: None,
            failed: false,
            flags: Vec::new(),
            timing: Timing::default(),
        }
    }

    fn flag(&mut self, stage: Stage, kind: &str, message: impl Into<String>) {
        self.flags.push(Flag {
            stage,
            kind: kind.to_string(),
            message: message.into(),
        });
    }

    /// The initial answer read as Yes/No: the "direct" prediction.
    pub fn direct_label(&self) -> Answer {
        self.initial_answer
            .as_deref()
            .map_or(Answer::Unparseable, normalize_answer)
    }

    /// The final answer read as Yes/No.
    pub fn final_label(&self) -> Answer {
        self.final_answer
            .as_deref()
            .map_or(Answer::Unparseable, normalize_answer)
    }

    pub fn is_passthrough(&self) -> bool {
        self.queries.len() == 1 && self.queries[0].passthrough
    }
}

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

fn artifact_io(path: &Path) -> impl FnOnce(io::Error) -> ArtifactError + '_ {
    move |source| ArtifactError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn artifact_line(artifact: &RunArtifact) -> String {
    // serialization of these plain data types cannot fail
    serde_json::to_string(artifact).expect("artifact serializes")
}

pub fn write_artifacts(path: impl AsRef<Path>, artifacts: &[RunArtifact]) -> Result<(), ArtifactError> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(artifact_io(path))?;
    let mut w = BufWriter::new(file);
    for a in artifacts {
        writeln!(w, "{}", artifact_line(a)).map_err(artifact_io(path))?;
    }
    w.flush().map_err(artifact_io(path))
}

/// Read every artifact; any malformed line is an error.
pub fn read_artifacts(path: impl AsRef<Path>) -> Result<Vec<RunArtifact>, ArtifactError> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(artifact_io(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(artifact_io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let artifact = serde_json::from_str(&line).map_err(|e| ArtifactError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(artifact);
    }
    Ok(out)
}

/// Read an artifact file for resuming. A malformed final line is an
/// interrupted write: it is dropped and the file rewritten without it.
/// Malformed lines elsewhere are errors.
fn read_for_resume(path: &Path) -> Result<Vec<RunArtifact>, ArtifactError> {
    let raw = match fs::read_to_string(path) {
        Ok(raw) => raw,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(artifact_io(path)(e)),
    };
    let lines: Vec<(usize, &str)> = raw.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()).collect();
    let mut out = Vec::with_capacity(lines.len());
    for (pos, (i, line)) in lines.iter().enumerate() {
        match serde_json::from_str(line) {
            Ok(a) => out.push(a),
            Err(_) if pos + 1 == lines.len() => {
                log::warn!("{}: dropping torn final line {}", path.display(), i + 1);
                let tmp = path.with_extension("jsonl.tmp");
                write_artifacts(&tmp, &out)?;
                fs::rename(&tmp, path).map_err(artifact_io(path))?;
            }
            Err(e) => {
                return Err(ArtifactError::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    /// Examples in the dataset.
    pub examples: usize,
    /// Examples executed in this run (the rest were resumed from disk).
    pub executed: usize,
    pub resumed: usize,
    pub failures: usize,
    pub failed_ids: Vec<String>,
    pub gateway_calls: u64,
    /// Seconds.
    pub wall_time: f64,
}

pub struct Pipeline<'a> {
    pub config: &'a PipelineConfig,
    pub client: &'a dyn ModelClient,
    pub exemplars: &'a Exemplars,
}

impl<'a> Pipeline<'a> {
    pub fn new(config: &'a PipelineConfig, client: &'a dyn ModelClient, exemplars: &'a Exemplars) -> Self {
        Pipeline {
            config,
            client,
            exemplars,
        }
    }

    pub fn run_example(&self, example: &DatasetExample) -> RunArtifact {
        let metered = Metered::new(self.client);
        let mut artifact = RunArtifact::new(example);
        self.stages(example, &metered, &mut artifact);
        artifact.timing = Timing {
            gateway_calls: metered.calls(),
            latency_ms: metered.latency_ms(),
        };
        artifact
    }

    fn stages(&self, example: &DatasetExample, client: &dyn ModelClient, artifact: &mut RunArtifact) {
        let cfg = self.config;
        let mllm = cfg.mllm();
        let llm = cfg.llm();

        // Stage 0: the answer to be verified.
        match (&example.initial_answer, cfg.use_provided_initial_answers) {
            (Some(provided), true) => {
                artifact.initial_answer = Some(provided.clone());
                artifact.initial_answer_provided = true;
            }
            _ => {
                let request = mllm.request(example.question.clone()).with_image(example.image_ref);
                match client.query(&request) {
                    Ok(response) => artifact.initial_answer = Some(response.text),
                    Err(e) => artifact.flag(Stage::InitialAnswer, "gateway_error", e.to_string()),
                }
            }
        }
        let initial = artifact.initial_answer.clone().unwrap_or_default();

        // Stage 1: atomic queries.
        let generator = QueryGenerator::new(client, &llm, self.exemplars);
        match generator.generate(&example.question, &initial) {
            Ok(outcome) => {
                for d in outcome.diagnostics {
                    artifact.flag(Stage::QueryGeneration, "diagnostic", d);
                }
                artifact.tuples = outcome.tuples;
                artifact.queries = outcome.queries;
                if artifact.queries.is_empty() {
                    artifact.flag(Stage::QueryGeneration, "no_queries", "no atomic queries to verify");
                }
            }
            Err(e) => artifact.flag(Stage::QueryGeneration, "error", e.to_string()),
        }
        if artifact.initial_answer.is_none() && !artifact.is_passthrough() {
            artifact.failed = true;
            return;
        }

        // Ties on a passthrough question go to the model's own direct answer.
        let tie_break = if artifact.is_passthrough() {
            normalize_answer(&initial).decided()
        } else {
            None
        };

        // Stages 2 and 3: paraphrase, answer, calibrate.
        let want_probabilities = cfg.estimator == Estimator::SelfConfidence;
        for query in artifact.queries.clone() {
            let mut phrasings = Vec::new();
            if cfg.include_original {
                phrasings.push(query.text.clone());
            }
            match paraphrase_query(client, &llm, &query, cfg.n_paraphrases) {
                Ok(outcome) => {
                    for d in outcome.diagnostics {
                        artifact.flag(Stage::Paraphrasing, "diagnostic", d);
                    }
                    phrasings.extend(outcome.set.paraphrases);
                }
                Err(e) => artifact.flag(Stage::Paraphrasing, "error", format!("query {}: {e}", query.id)),
            }

            let mut raw_answers = Vec::with_capacity(phrasings.len());
            let mut samples = Vec::with_capacity(phrasings.len());
            let mut missing_probability = false;
            for (i, phrasing) in phrasings.iter().enumerate() {
                let request = mllm
                    .request(phrasing.clone())
                    .with_image(example.image_ref)
                    .with_probabilities(want_probabilities);
                match client.query(&request) {
                    Ok(response) => {
                        let probability = if want_probabilities {
                            extract_yes_no_probability(&response).ok()
                        } else {
                            None
                        };
                        let answer = normalize_answer(&response.text);
                        missing_probability |=
                            want_probabilities && probability.is_none() && answer.decided().is_some();
                        samples.push(AnswerSample::new(i, answer, probability));
                        raw_answers.push(Some(response.text));
                    }
                    Err(e) => {
                        artifact.flag(
                            Stage::Answering,
                            "gateway_error",
                            format!("query {} phrasing {i}: {e}", query.id),
                        );
                        samples.push(AnswerSample::new(i, Answer::Unparseable, None));
                        raw_answers.push(None);
                    }
                }
            }

            let mut estimator = cfg.estimator;
            if missing_probability {
                artifact.flag(
                    Stage::Confidence,
                    "missing_probabilities",
                    format!("query {}: falling back to self_consistency", query.id),
                );
                estimator = Estimator::SelfConsistency;
            }
            let result = match select_answer(&samples, estimator, cfg.aggregator, tie_break) {
                Ok(r) => Some(r),
                Err(ConfidenceError::NoParseableSamples) => {
                    artifact.flag(
                        Stage::Confidence,
                        "no_parseable_samples",
                        format!("query {}: no usable answers", query.id),
                    );
                    None
                }
                Err(e) => {
                    artifact.flag(Stage::Confidence, "error", format!("query {}: {e}", query.id));
                    None
                }
            };
            artifact.records.push(VerificationRecord {
                query,
                phrasings,
                raw_answers,
                samples,
                result,
            });
        }

        // Stage 4: the final answer.
        if artifact.is_passthrough() {
            artifact.refine_status = Some(RefineStatus::NotNeeded);
            match artifact.records.first().and_then(|r| r.calibrated()) {
                Some((label, _)) => artifact.final_answer = Some(label.as_str().to_string()),
                None => {
                    artifact.flag(
                        Stage::Confidence,
                        "fallback_initial",
                        "no calibrated answer; keeping initial answer",
                    );
                    artifact.final_answer = artifact.initial_answer.clone();
                }
            }
            artifact.failed = artifact.final_answer.is_none();
            return;
        }

        let context = match format_verification_context(&artifact.records, cfg.context_threshold) {
            Ok(c) => c,
            Err(e) => {
                artifact.flag(Stage::Refinement, "error", e.to_string());
                VerificationContext::default()
            }
        };
        match refine(client, &llm, &artifact.queries, &example.question, &initial, &context) {
            Ok(outcome) => {
                if outcome.status == RefineStatus::EmptyContext {
                    artifact.flag(Stage::Refinement, "fallback_initial", "empty verification context");
                }
                artifact.final_answer = Some(outcome.text);
                artifact.refine_status = Some(outcome.status);
            }
            Err(e) => {
                artifact.flag(Stage::Refinement, "fallback_initial", e.to_string());
                artifact.final_answer = Some(initial);
            }
        }
        artifact.context = Some(context);
    }

    /// Run every example with `config.parallelism` workers. `sink` sees the
    /// artifacts in input order, whatever order they complete in.
    pub fn run_dataset(
        &self,
        examples: &[DatasetExample],
        sink: &mut dyn FnMut(&RunArtifact) -> io::Result<()>,
    ) -> io::Result<Vec<RunArtifact>> {
        let workers = self.config.parallelism.clamp(1, examples.len().max(1));
        let next = AtomicUsize::new(0);
        let mut out = Vec::with_capacity(examples.len());
        let mut sink_error = None;
        thread::scope(|scope| {
            let (tx, rx) = mpsc::channel::<(usize, RunArtifact)>();
            for _ in 0..workers {
                let tx = tx.clone();
                let next = &next;
                scope.spawn(move || loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= examples.len() {
                        break;
                    }
                    let artifact = self.run_example(&examples[i]);
                    if tx.send((i, artifact)).is_err() {
                        break;
                    }
                });
            }
            drop(tx);
            let mut pending = BTreeMap::new();
            let mut want = 0;
            for (i, artifact) in rx {
                pending.insert(i, artifact);
                while let Some(artifact) = pending.remove(&want) {
                    if let Err(e) = sink(&artifact) {
                        sink_error = Some(e);
                        // stop workers from picking up more work
                        next.store(examples.len(), Ordering::Relaxed);
                        return;
                    }
                    out.push(artifact);
                    want += 1;
                }
            }
        });
        match sink_error {
            Some(e) => Err(e),
            None => Ok(out),
        }
    }

    /// Run into a JSONL artifact file. With `resume`, examples whose id is
    /// already in the file are skipped and new artifacts are appended;
    /// otherwise the file is overwritten.
    pub fn run_to_file(
        &self,
        examples: &[DatasetExample],
        out_path: &Path,
        resume: bool,
    ) -> Result<(Vec<RunArtifact>, RunSummary), ArtifactError> {
        let started = Instant::now();
        let existing = if resume { read_for_resume(out_path)? } else { Vec::new() };
        let done: HashSet<&str> = existing.iter().map(|a| a.example_id.as_str()).collect();
        let todo: Vec<DatasetExample> = examples
            .iter()
            .filter(|e| !done.contains(e.example_id.as_str()))
            .cloned()
            .collect();
        let file = fs::OpenOptions::new()
            .create(true)
            .write(true)
            .append(resume)
            .truncate(!resume)
            .open(out_path)
            .map_err(artifact_io(out_path))?;
        let mut writer = BufWriter::new(file);
        let fresh = self
            .run_dataset(&todo, &mut |a| {
                writeln!(writer, "{}", artifact_line(a))?;
                // one example per flush so an interruption loses at most one line
                writer.flush()
            })
            .map_err(artifact_io(out_path))?;

        let failed_ids: Vec<String> = fresh
            .iter()
            .filter(|a| a.failed)
            .map(|a| a.example_id.clone())
            .collect();
        let summary = RunSummary {
            schema_version: ARTIFACT_SCHEMA_VERSION,
            examples: examples.len(),
            executed: fresh.len(),
            resumed: examples.len() - todo.len(),
            failures: failed_ids.len(),
            failed_ids,
            gateway_calls: fresh.iter().map(|a| a.timing.gateway_calls).sum(),
            wall_time: started.elapsed().as_secs_f64(),
        };
        let mut all = existing;
        all.extend(fresh);
        Ok((all, summary))
    }
}

/// Final and direct predictions by example id, for scoring.
pub fn predictions(artifacts: &[RunArtifact]) -> BTreeMap<&str, (Answer, Answer)> {
    artifacts
        .iter()
        .map(|a| (a.example_id.as_str(), (a.direct_label(), a.final_label())))
        .collect()
}

/// Majority answer of a passthrough example's single record, if any.
pub fn calibrated_label(artifact: &RunArtifact) -> Option<YesNo> {
    artifact.records.first().and_then(|r| r.calibrated()).map(|(l, _)| l)
}
