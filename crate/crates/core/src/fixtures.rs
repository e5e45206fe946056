//! Deterministic offline scenarios: a dataset plus scripted backends that
//! exercise the whole pipeline without network access.
//!
//! * `passthrough_pope`: POPE-style existence questions answered directly.
//! * `generative_caption`: captions with one hallucinated object that the
//!   verification step catches and the scripted refiner removes.
//! * `yes_biased_model`: a model that says Yes with probability `0.5 + b`
//!   whenever it sees the canonical question, but answers paraphrases from
//!   the image evidence; half the items have weak evidence.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::answer::YesNo;
use crate::gateway::{
    digest_bytes, BackendKind, CacheMode, Gateway, ImageDigest, MockRule, MockScript, Responder, ScriptedBackend,
};
use crate::metrics::{Difficulty, Split};
use crate::pipeline::{write_unified, BackendSpec, DatasetExample, PipelineConfig, RunConfig, ScriptSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    PassthroughPope,
    GenerativeCaption,
    YesBiasedModel,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [
        Scenario::PassthroughPope,
        Scenario::GenerativeCaption,
        Scenario::YesBiasedModel,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::PassthroughPope => "passthrough_pope",
            Scenario::GenerativeCaption => "generative_caption",
            Scenario::YesBiasedModel => "yes_biased_model",
        }
    }

    pub fn default_size(self) -> usize {
        match self {
            Scenario::PassthroughPope | Scenario::GenerativeCaption => 10,
            Scenario::YesBiasedModel => 200,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown scenario `{0}` (expected passthrough_pope, generative_caption or yes_biased_model)")]
pub struct UnknownScenario(pub String);

impl FromStr for Scenario {
    type Err = UnknownScenario;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.as_str() == s)
            .ok_or_else(|| UnknownScenario(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureOptions {
    pub seed: u64,
    /// Number of examples; `None` uses the scenario default.
    pub size: Option<usize>,
    /// Yes-bias `b` of the biased scenario.
    pub bias: f64,
}

impl Default for FixtureOptions {
    fn default() -> Self {
        FixtureOptions {
            seed: 0,
            size: None,
            bias: 0.2,
        }
    }
}

/// Per-item answer probabilities in the biased scenario.
pub const CLEAR_EVIDENCE: f64 = 0.9;
pub const WEAK_EVIDENCE: f64 = 0.65;

const OBJECTS: &[&str] = &[
    "dog",
    "cat",
    "bicycle",
    "bench",
    "umbrella",
    "bottle",
    "chair",
    "kite",
    "horse",
    "clock",
    "laptop",
    "car",
    "boat",
    "cup",
    "book",
    "vase",
    "train",
    "sheep",
    "pizza",
    "surfboard",
];

pub const CAPTION_QUESTION: &str = "Describe the image.";

fn existence_question(object: &str) -> String {
    format!("Is there a {object} in the image?")
}

fn image(scenario: Scenario, i: usize) -> (String, ImageDigest) {
    let name = format!("{}_{i:04}.jpg", scenario.as_str());
    let digest = digest_bytes(format!("image-name:{name}").as_bytes());
    (name, digest)
}

/// A generated scenario: dataset, backend scripts, and pipeline settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub scenario: Scenario,
    pub dataset: Vec<DatasetExample>,
    pub mllm: MockScript,
    pub llm: MockScript,
    pub pipeline: PipelineConfig,
    /// Object vocabulary for generative scoring (surface form to canonical).
    pub lexicon: Option<BTreeMap<String, String>>,
}

/// Half Yes, half No, in random order.
fn balanced_labels(rng: &mut ChaCha8Rng, n: usize) -> Vec<YesNo> {
    let mut labels: Vec<YesNo> = (0..n)
        .map(|i| if i % 2 == 0 { YesNo::Yes } else { YesNo::No })
        .collect();
    labels.shuffle(rng);
    labels
}

impl Fixture {
    pub fn generate(scenario: Scenario, options: &FixtureOptions) -> Fixture {
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
        let size = options.size.unwrap_or(scenario.default_size());
        let mut fixture = match scenario {
            Scenario::PassthroughPope => passthrough_pope(&mut rng, size),
            Scenario::GenerativeCaption => generative_caption(&mut rng, size),
            Scenario::YesBiasedModel => yes_biased(&mut rng, size, options.bias),
        };
        fixture.mllm.seed = options.seed;
        fixture.llm.seed = options.seed;
        fixture.pipeline.seed = Some(options.seed);
        fixture
    }

    /// A cacheless gateway over the scripted backends.
    pub fn gateway(&self) -> Gateway {
        let mut gateway = Gateway::new();
        gateway.register("mllm", Arc::new(ScriptedBackend::new(self.mllm.clone())), 8);
        gateway.register("llm", Arc::new(ScriptedBackend::new(self.llm.clone())), 8);
        gateway
    }

    pub fn run_config(&self) -> RunConfig {
        let mock = |file: &str| BackendSpec::Mock {
            script: ScriptSource::Path(PathBuf::from(file)),
            parallelism: 8,
        };
        RunConfig {
            schema_version: crate::pipeline::CONFIG_SCHEMA_VERSION,
            backends: BTreeMap::from([
                ("llm".to_string(), mock("llm_script.json")),
                ("mllm".to_string(), mock("mllm_script.json")),
            ]),
            cache_path: Some(PathBuf::from("cache.jsonl")),
            image_dir: None,
            exemplars: None,
            pipeline: self.pipeline.clone(),
        }
    }

    /// Write `dataset.jsonl`, both scripts, `config.json` and, for the
    /// generative scenario, `lexicon.json`. Returns the written paths.
    pub fn write(&self, dir: &Path) -> io::Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let dataset = dir.join("dataset.jsonl");
        write_unified(&dataset, &self.dataset)?;
        written.push(dataset);
        written.push(write_json(dir, "mllm_script.json", &self.mllm)?);
        written.push(write_json(dir, "llm_script.json", &self.llm)?);
        written.push(write_json(dir, "config.json", &self.run_config())?);
        if let Some(lexicon) = &self.lexicon {
            written.push(write_json(dir, "lexicon.json", lexicon)?);
        }
        Ok(written)
    }
}

fn write_json<T: serde::Serialize>(dir: &Path, name: &str, value: &T) -> io::Result<PathBuf> {
    let path = dir.join(name);
    let body = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
    std::fs::write(&path, body + "\n")?;
    Ok(path)
}

fn base_config(n_paraphrases: usize) -> PipelineConfig {
    PipelineConfig {
        n_paraphrases,
        mllm_model: "mock-mllm".into(),
        llm_model: "mock-llm".into(),
        cache_mode: CacheMode::Record,
        ..PipelineConfig::default()
    }
}

fn passthrough_pope(rng: &mut ChaCha8Rng, size: usize) -> Fixture {
    let splits = [Split::Random, Split::Popular, Split::Adversarial];
    let labels = balanced_labels(rng, size);
    let mut mllm = MockScript::new(BackendKind::Mllm);
    let mut dataset = Vec::with_capacity(size);
    for (i, gold) in labels.into_iter().enumerate() {
        let object = OBJECTS[rng.gen_range(0..OBJECTS.len())];
        let split = splits[i % splits.len()];
        let (name, digest) = image(Scenario::PassthroughPope, i);
        let mut ex = DatasetExample::new(
            format!("pope-{}-{i}", split.as_str()),
            digest,
            existence_question(object),
        );
        ex.image = Some(name);
        ex.gold = Some(gold);
        ex.group_keys.split = Some(split);
        dataset.push(ex);
        let p_yes = if gold == YesNo::Yes { 0.8 } else { 0.2 };
        mllm = mllm.rule(MockRule::any(Responder::Bernoulli { p_yes }).on_image(digest));
    }
    Fixture {
        scenario: Scenario::PassthroughPope,
        dataset,
        mllm,
        llm: MockScript::new(BackendKind::Llm).fallback(Responder::Paraphrase),
        pipeline: base_config(10),
        lexicon: None,
    }
}

fn text(t: impl Into<String>) -> Responder {
    Responder::Text {
        text: t.into(),
        probabilities: None,
    }
}

fn generative_caption(rng: &mut ChaCha8Rng, size: usize) -> Fixture {
    let mut mllm = MockScript::new(BackendKind::Mllm);
    let mut llm = MockScript::new(BackendKind::Llm);
    let mut dataset = Vec::with_capacity(size);
    let mut used = BTreeSet::new();
    let mut i = 0;
    while dataset.len() < size {
        let picks: Vec<&str> = OBJECTS.choose_multiple(rng, 5).copied().collect();
        let (present, unseen) = (&picks[..2], picks[3]);
        let hallucinated = picks[2];
        // captions must be unique so the scripted LLM can key on them
        if !used.insert((present[0], present[1], hallucinated)) {
            continue;
        }
        let caption = format!(
            "The image shows a {} next to a {}, with a {} in the background.",
            present[0], present[1], hallucinated
        );
        let refined = format!("The image shows a {} next to a {}.", present[0], present[1]);
        let (name, digest) = image(Scenario::GenerativeCaption, i);

        let mut ex = DatasetExample::new(format!("caption-{i:03}"), digest, CAPTION_QUESTION);
        ex.image = Some(name);
        ex.gold_objects = Some([present[0], present[1], unseen].iter().map(|s| s.to_string()).collect());
        ex.hallucination_targets = [hallucinated, picks[4]].iter().map(|s| s.to_string()).collect();
        dataset.push(ex);

        mllm = mllm
            .rule(MockRule::prompt_equals(CAPTION_QUESTION, text(caption.clone())).on_image(digest))
            .rule(
                MockRule::prompt_contains(format!(" {hallucinated} "), Responder::Bernoulli { p_yes: 0.15 })
                    .on_image(digest),
            )
            .rule(MockRule::any(Responder::Bernoulli { p_yes: 0.9 }).on_image(digest));

        let objects = [present[0], present[1], hallucinated];
        let tuples: Vec<String> = objects
            .iter()
            .enumerate()
            .map(|(k, o)| format!("{} | entity - whole ({o})", k + 1))
            .collect();
        let questions: Vec<String> = objects
            .iter()
            .enumerate()
            .map(|(k, o)| format!("{} | {}", k + 1, existence_question(o)))
            .collect();
        llm = llm
            .rule(MockRule::prompt_contains(
                format!("Model's initial answer: \"{caption}\""),
                text(refined),
            ))
            .rule(MockRule::prompt_contains(
                format!("{}\nBinary questions:", tuples.join("\n")),
                text(questions.join("\n")),
            ))
            .rule(MockRule::prompt_contains(
                format!("Answer: {caption}\nTuples:"),
                text(tuples.join("\n")),
            ));
        i += 1;
    }
    let lexicon = OBJECTS
        .iter()
        .flat_map(|o| [(o.to_string(), o.to_string()), (format!("{o}s"), o.to_string())])
        .collect();
    Fixture {
        scenario: Scenario::GenerativeCaption,
        dataset,
        mllm,
        llm: llm.fallback(Responder::Paraphrase),
        pipeline: base_config(10),
        lexicon: Some(lexicon),
    }
}

fn yes_biased(rng: &mut ChaCha8Rng, size: usize, bias: f64) -> Fixture {
    let labels = balanced_labels(rng, size);
    // weak evidence on half of each gold class
    let mut weak = vec![false; size];
    for class in [YesNo::Yes, YesNo::No] {
        let mut idx: Vec<usize> = (0..size).filter(|&i| labels[i] == class).collect();
        idx.shuffle(rng);
        for &i in idx.iter().take(idx.len() / 2) {
            weak[i] = true;
        }
    }
    let mut mllm = MockScript::new(BackendKind::Mllm);
    let mut dataset = Vec::with_capacity(size);
    for (i, gold) in labels.into_iter().enumerate() {
        let object = OBJECTS[rng.gen_range(0..OBJECTS.len())];
        let question = existence_question(object);
        let (name, digest) = image(Scenario::YesBiasedModel, i);
        let mut ex = DatasetExample::new(format!("biased-{i:04}"), digest, question.clone());
        ex.image = Some(name);
        ex.gold = Some(gold);
        ex.group_keys.difficulty = Some(if weak[i] { Difficulty::Hard } else { Difficulty::Easy });
        dataset.push(ex);

        let evidence = if weak[i] { WEAK_EVIDENCE } else { CLEAR_EVIDENCE };
        let p_yes = if gold == YesNo::Yes { evidence } else { 1.0 - evidence };
        mllm = mllm
            .rule(MockRule::prompt_equals(question, Responder::Bernoulli { p_yes: 0.5 + bias }).on_image(digest))
            .rule(MockRule::any(Responder::Bernoulli { p_yes }).on_image(digest));
    }
    Fixture {
        scenario: Scenario::YesBiasedModel,
        dataset,
        mllm,
        llm: MockScript::new(BackendKind::Llm).fallback(Responder::Paraphrase),
        pipeline: base_config(10),
        lexicon: None,
    }
}
