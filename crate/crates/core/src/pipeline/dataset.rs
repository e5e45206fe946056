//! Loaders for the benchmark file layouts, all mapped onto [`DatasetExample`].
//!
//! The unified JSONL layout is `DatasetExample` serialized one per line and is
//! the interchange format written by the fixture generator.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::answer::YesNo;
use crate::gateway::{digest_bytes, ImageDigest};
use crate::metrics::{Difficulty, GroupKeys, Split};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: missing or invalid field `{field}`")]
    Schema { line: usize, field: String },
    #[error("duplicate example id `{0}`")]
    DuplicateId(String),
    #[error("unknown dataset format `{0}`")]
    UnknownFormat(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    Pope,
    Mme,
    Hallusion,
    Amber,
    Unified,
}

impl FromStr for DatasetFormat {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pope" => Ok(DatasetFormat::Pope),
            "mme" => Ok(DatasetFormat::Mme),
            "hallusion" | "hallusionbench" => Ok(DatasetFormat::Hallusion),
            "amber" => Ok(DatasetFormat::Amber),
            "unified" => Ok(DatasetFormat::Unified),
            other => Err(DatasetError::UnknownFormat(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetExample {
    pub example_id: String,
    /// Image file name relative to the image root, when the example has one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    pub image_ref: ImageDigest,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<YesNo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_objects: Option<BTreeSet<String>>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub hallucination_targets: BTreeSet<String>,
    #[serde(default)]
    pub group_keys: GroupKeys,
    /// Precomputed MLLM answer; used instead of a fresh call when allowed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_answer: Option<String>,
}

impl DatasetExample {
    pub fn new(example_id: impl Into<String>, image_ref: ImageDigest, question: impl Into<String>) -> Self {
        DatasetExample {
            example_id: example_id.into(),
            image: None,
            image_ref,
            question: question.into(),
            gold: None,
            gold_objects: None,
            hallucination_targets: BTreeSet::new(),
            group_keys: GroupKeys::default(),
            initial_answer: None,
        }
    }
}

/// Digest used for questions that come without an image.
pub fn no_image() -> ImageDigest {
    digest_bytes(b"")
}

/// Turns image names into digests: the file's content hash when it exists
/// under the root, otherwise a hash of the name itself so the example still
/// has a stable identity.
struct ImageResolver {
    root: Option<PathBuf>,
    seen: HashMap<String, ImageDigest>,
}

impl ImageResolver {
    fn new(root: Option<&Path>) -> Self {
        ImageResolver {
            root: root.map(Path::to_path_buf),
            seen: HashMap::new(),
        }
    }

    fn resolve(&mut self, name: &str) -> ImageDigest {
        if let Some(d) = self.seen.get(name) {
            return *d;
        }
        let digest = self
            .root
            .as_ref()
            .and_then(|root| fs::read(root.join(name)).ok())
            .map(|bytes| digest_bytes(&bytes))
            .unwrap_or_else(|| digest_bytes(format!("image-name:{name}").as_bytes()));
        self.seen.insert(name.to_string(), digest);
        digest
    }
}

fn read(path: &Path) -> Result<String, DatasetError> {
    fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Parsed non-blank lines of a JSONL file, with 1-based line numbers.
fn jsonl(raw: &str) -> Result<Vec<(usize, Value)>, DatasetError> {
    raw.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map(|v| (i + 1, v))
                .map_err(|e| DatasetError::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })
        })
        .collect()
}

fn json_array(raw: &str) -> Result<Vec<(usize, Value)>, DatasetError> {
    let value: Value = serde_json::from_str(raw).map_err(|e| DatasetError::Parse {
        line: e.line(),
        message: e.to_string(),
    })?;
    match value {
        Value::Array(items) => Ok(items.into_iter().enumerate().map(|(i, v)| (i + 1, v)).collect()),
        _ => Err(DatasetError::Schema {
            line: 1,
            field: "<top-level array>".into(),
        }),
    }
}

/// String form of a field that may be stored as a string or a number.
fn text_field(value: &Value, names: &[&str]) -> Option<String> {
    names.iter().find_map(|name| match value.get(*name)? {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    })
}

fn required(value: &Value, line: usize, names: &[&str]) -> Result<String, DatasetError> {
    text_field(value, names).ok_or_else(|| DatasetError::Schema {
        line,
        field: names[0].to_string(),
    })
}

fn gold_label(value: &Value, line: usize, names: &[&str]) -> Result<YesNo, DatasetError> {
    let raw = required(value, line, names)?;
    YesNo::from_label(&raw).ok_or_else(|| DatasetError::Schema {
        line,
        field: names[0].to_string(),
    })
}

fn string_set(value: Option<&Value>) -> BTreeSet<String> {
    match value {
        Some(Value::Array(items)) => items
            .iter()
            .filter_map(|v| v.as_str().map(|s| s.trim().to_lowercase()))
            .filter(|s| !s.is_empty())
            .collect(),
        _ => BTreeSet::new(),
    }
}

pub fn load_dataset(
    path: impl AsRef<Path>,
    format: DatasetFormat,
    image_root: Option<&Path>,
) -> Result<Vec<DatasetExample>, DatasetError> {
    let path = path.as_ref();
    let raw = read(path)?;
    let mut images = ImageResolver::new(image_root);
    let examples = match format {
        DatasetFormat::Pope => parse_pope(&raw, path, &mut images)?,
        DatasetFormat::Mme => parse_mme(&raw, path, &mut images)?,
        DatasetFormat::Hallusion => parse_hallusion(&raw, &mut images)?,
        DatasetFormat::Amber => parse_amber(&raw, path, &mut images)?,
        DatasetFormat::Unified => parse_unified(&raw, &mut images)?,
    };
    let mut ids = HashSet::new();
    for e in &examples {
        if !ids.insert(e.example_id.as_str()) {
            return Err(DatasetError::DuplicateId(e.example_id.clone()));
        }
    }
    Ok(examples)
}

/// `{"question_id", "image", "text" | "question", "label"}` per line. The
/// split comes from a `split`/`category` field or from the file name.
fn parse_pope(raw: &str, path: &Path, images: &mut ImageResolver) -> Result<Vec<DatasetExample>, DatasetError> {
    let file_split = Split::detect(&path.file_name().unwrap_or_default().to_string_lossy());
    jsonl(raw)?
        .into_iter()
        .map(|(line, v)| {
            let qid = required(&v, line, &["question_id", "id"])?;
            let image = required(&v, line, &["image"])?;
            let question = required(&v, line, &["text", "question"])?;
            let split = text_field(&v, &["split", "category"])
                .and_then(|s| Split::detect(&s))
                .or(file_split);
            let example_id = match split {
                Some(s) => format!("pope-{}-{qid}", s.as_str()),
                None => format!("pope-{qid}"),
            };
            let mut example = DatasetExample::new(example_id, images.resolve(&image), question);
            example.gold = Some(gold_label(&v, line, &["label", "answer"])?);
            example.group_keys.split = split;
            example.image = Some(image);
            Ok(example)
        })
        .collect()
}

/// JSONL `{"question_id" | "image", "question" | "text", "answer" | "label",
/// "category"}`, or the tab-separated `image<TAB>question<TAB>answer` files
/// where the subtask is the file stem. Each image carries two questions.
fn parse_mme(raw: &str, path: &Path, images: &mut ImageResolver) -> Result<Vec<DatasetExample>, DatasetError> {
    let stem = path.file_stem().unwrap_or_default().to_string_lossy().to_string();
    let mut rows = Vec::new();
    for (i, l) in raw.lines().enumerate() {
        let line = i + 1;
        let trimmed = l.trim();
        if trimmed.is_empty() {
            continue;
        }
        if trimmed.starts_with('{') {
            let v: Value = serde_json::from_str(trimmed).map_err(|e| DatasetError::Parse {
                line,
                message: e.to_string(),
            })?;
            let image = required(&v, line, &["image", "question_id"])?;
            let question = required(&v, line, &["question", "text"])?;
            let answer = gold_label(&v, line, &["answer", "label", "gt_answer"])?;
            let subtask = required(&v, line, &["category", "subtask"])?;
            rows.push((image, question, answer, subtask));
        } else {
            let cols: Vec<&str> = l.split('\t').collect();
            if cols.len() != 3 {
                return Err(DatasetError::Parse {
                    line,
                    message: format!("expected 3 tab-separated columns, found {}", cols.len()),
                });
            }
            let answer = YesNo::from_label(cols[2].trim()).ok_or_else(|| DatasetError::Schema {
                line,
                field: "answer".into(),
            })?;
            rows.push((
                cols[0].trim().to_string(),
                cols[1].trim().to_string(),
                answer,
                stem.clone(),
            ));
        }
    }
    let mut seen: HashMap<(String, String), usize> = HashMap::new();
    Ok(rows
        .into_iter()
        .map(|(image, question, answer, subtask)| {
            let k = seen.entry((subtask.clone(), image.clone())).or_default();
            let example_id = format!("mme-{subtask}-{image}-{k}");
            *k += 1;
            let mut example = DatasetExample::new(example_id, images.resolve(&image), question);
            example.gold = Some(answer);
            example.group_keys.subtask = Some(subtask.clone());
            example.group_keys.pair_id = Some(format!("{subtask}/{image}"));
            example.image = Some(image);
            example
        })
        .collect())
}

/// JSON array with `category`, `subcategory`, `set_id`, `figure_id`,
/// `question_id`, `question`, `gt_answer` ("1" = Yes), `visual_input`
/// ("0" none, "1" original figure, "2" edited figure) and `filename`.
fn parse_hallusion(raw: &str, images: &mut ImageResolver) -> Result<Vec<DatasetExample>, DatasetError> {
    json_array(raw)?
        .into_iter()
        .map(|(line, v)| {
            let category = required(&v, line, &["category"])?;
            let subcategory = required(&v, line, &["subcategory"])?;
            let set_id = required(&v, line, &["set_id"])?;
            let figure_id = required(&v, line, &["figure_id"])?;
            let question_id = required(&v, line, &["question_id"])?;
            let question = required(&v, line, &["question"])?;
            let gold = gold_label(&v, line, &["gt_answer"])?;
            let visual = text_field(&v, &["visual_input"]).unwrap_or_default();
            let filename = text_field(&v, &["filename"]).filter(|f| !f.is_empty() && visual != "0");
            let image_ref = match &filename {
                Some(f) => images.resolve(f.trim_start_matches("./")),
                None => no_image(),
            };
            let group = format!("{category}_{subcategory}_{set_id}");
            let mut example = DatasetExample::new(
                format!("hallusion-{group}_{figure_id}_{question_id}"),
                image_ref,
                question,
            );
            example.gold = Some(gold);
            example.group_keys.pair_id = Some(format!("{group}_{question_id}"));
            example.group_keys.figure_id = Some(format!("{group}_{figure_id}"));
            example.group_keys.subtask = Some(category);
            example.group_keys.difficulty = match visual.as_str() {
                "1" => Some(Difficulty::Easy),
                "2" => Some(Difficulty::Hard),
                _ => None,
            };
            example.image = filename;
            Ok(example)
        })
        .collect()
}

/// JSON array of `{"id", "image", "query"}`. Ground truth is read from inline
/// `truth`/`hallu` fields or, failing that, from `annotations.json` next to
/// the query file. A list-valued `truth` gives the annotated objects; a
/// yes/no string gives a discriminative label.
fn parse_amber(raw: &str, path: &Path, images: &mut ImageResolver) -> Result<Vec<DatasetExample>, DatasetError> {
    let queries = json_array(raw)?;
    let needs_sidecar = queries.iter().any(|(_, v)| v.get("truth").is_none());
    let mut annotations: HashMap<String, Value> = HashMap::new();
    if needs_sidecar {
        let sidecar = path.with_file_name("annotations.json");
        if sidecar.exists() {
            for (_, v) in json_array(&read(&sidecar)?)? {
                if let Some(id) = text_field(&v, &["id"]) {
                    annotations.insert(id, v);
                }
            }
        }
    }
    queries
        .into_iter()
        .map(|(line, v)| {
            let id = required(&v, line, &["id"])?;
            let image = required(&v, line, &["image"])?;
            let question = required(&v, line, &["query", "question"])?;
            let truth_source = if v.get("truth").is_some() {
                &v
            } else {
                annotations.get(&id).ok_or_else(|| DatasetError::Schema {
                    line,
                    field: "truth".into(),
                })?
            };
            let mut example = DatasetExample::new(format!("amber-{id}"), images.resolve(&image), question);
            match truth_source.get("truth") {
                Some(Value::Array(_)) => {
                    example.gold_objects = Some(string_set(truth_source.get("truth")));
                    example.hallucination_targets = string_set(truth_source.get("hallu"));
                }
                Some(Value::String(label)) => {
                    example.gold = Some(YesNo::from_label(label).ok_or_else(|| DatasetError::Schema {
                        line,
                        field: "truth".into(),
                    })?);
                }
                _ => {
                    return Err(DatasetError::Schema {
                        line,
                        field: "truth".into(),
                    })
                }
            }
            example.image = Some(image);
            Ok(example)
        })
        .collect()
}

#[derive(Deserialize)]
struct UnifiedLine {
    example_id: String,
    #[serde(default)]
    image: Option<String>,
    #[serde(default)]
    image_ref: Option<ImageDigest>,
    question: String,
    #[serde(default)]
    gold: Option<YesNo>,
    #[serde(default)]
    gold_objects: Option<BTreeSet<String>>,
    #[serde(default)]
    hallucination_targets: BTreeSet<String>,
    #[serde(default)]
    group_keys: GroupKeys,
    #[serde(default)]
    initial_answer: Option<String>,
}

fn parse_unified(raw: &str, images: &mut ImageResolver) -> Result<Vec<DatasetExample>, DatasetError> {
    raw.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let line = i + 1;
            let u: UnifiedLine = serde_json::from_str(l).map_err(|e| DatasetError::Parse {
                line,
                message: e.to_string(),
            })?;
            if u.gold.is_some() && u.gold_objects.is_some() {
                return Err(DatasetError::Schema {
                    line,
                    field: "gold/gold_objects (both present)".into(),
                });
            }
            let image_ref = match (u.image_ref, &u.image) {
                (Some(d), _) => d,
                (None, Some(name)) => images.resolve(name),
                (None, None) => no_image(),
            };
            Ok(DatasetExample {
                example_id: u.example_id,
                image: u.image,
                image_ref,
                question: u.question,
                gold: u.gold,
                gold_objects: u.gold_objects,
                hallucination_targets: u.hallucination_targets,
                group_keys: u.group_keys,
                initial_answer: u.initial_answer,
            })
        })
        .collect()
}

/// Serialize examples in the unified layout, one per line.
pub fn write_unified(path: impl AsRef<Path>, examples: &[DatasetExample]) -> std::io::Result<()> {
    let mut out = String::new();
    for e in examples {
        out.push_str(&serde_json::to_string(e).map_err(std::io::Error::other)?);
        out.push('\n');
    }
    fs::write(path, out)
}
