//! Benchmark scoring: discriminative accuracy/F1, MME pair scores,
//! HallusionBench grouped accuracies, yes-bias measures, and AMBER-style
//! generative object metrics.

mod amber;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answer::{Answer, YesNo};

pub use amber::{amber_metrics, extract_objects, AmberMetrics, GenerativePrediction, Lexicon};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("no predictions to score")]
    EmptyInput,
    #[error("subtask `{subtask}` image `{image}` has {count} questions, expected 2")]
    MalformedGrouping {
        subtask: String,
        image: String,
        count: usize,
    },
    #[error("example `{example_id}` lacks group key `{key}`")]
    MissingGroupKey { example_id: String, key: &'static str },
    #[error("example `{0}` has no annotated objects")]
    EmptyAnnotation(String),
    #[error("duplicate example id `{0}`")]
    DuplicateExample(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Easy,
    Hard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Random,
    Popular,
    Adversarial,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Random => "random",
            Split::Popular => "popular",
            Split::Adversarial => "adversarial",
        }
    }

    /// Recognize a split name anywhere in `text`, e.g. a POPE file name.
    pub fn detect(text: &str) -> Option<Split> {
        let lower = text.to_lowercase();
        [Split::Adversarial, Split::Popular, Split::Random]
            .into_iter()
            .find(|s| lower.contains(s.as_str()))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupKeys {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub figure_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subtask: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<Difficulty>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPrediction {
    pub example_id: String,
    /// `Unparseable` is always scored as wrong.
    pub predicted: Answer,
    pub gold: YesNo,
    #[serde(default)]
    pub group_keys: GroupKeys,
}

impl LabeledPrediction {
    pub fn new(example_id: impl Into<String>, predicted: impl Into<Answer>, gold: YesNo) -> Self {
        LabeledPrediction {
            example_id: example_id.into(),
            predicted: predicted.into(),
            gold,
            group_keys: GroupKeys::default(),
        }
    }

    pub fn correct(&self) -> bool {
        self.predicted.decided() == Some(self.gold)
    }
}

/// Counts with Yes as the positive class. An unparseable prediction on a
/// gold-Yes item is a missed positive and lands in `fn_`; on a gold-No item
/// it is neither a false positive nor a true negative and is only counted in
/// `unparseable_negative`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub unparseable_negative: usize,
    /// All unparseable predictions, whichever bucket they went to.
    pub unparseable: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn + self.unparseable_negative
    }

    pub fn as_tuple(&self) -> (usize, usize, usize, usize) {
        (self.tp, self.fp, self.fn_, self.tn)
    }
}

pub fn confusion(preds: &[LabeledPrediction]) -> Result<Confusion, MetricError> {
    if preds.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let mut c = Confusion::default();
    for p in preds {
        match (p.predicted.decided(), p.gold) {
            (Some(YesNo::Yes), YesNo::Yes) => c.tp += 1,
            (Some(YesNo::Yes), YesNo::No) => c.fp += 1,
            (Some(YesNo::No), YesNo::Yes) => c.fn_ += 1,
            (Some(YesNo::No), YesNo::No) => c.tn += 1,
            (None, gold) => {
                c.unparseable += 1;
                match gold {
                    YesNo::Yes => c.fn_ += 1,
                    YesNo::No => c.unparseable_negative += 1,
                }
            }
        }
    }
    Ok(c)
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyF1 {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Names of the quantities whose denominator was zero (reported as 0).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub degenerate: Vec<String>,
    #[serde(default)]
    pub unparseable: usize,
}

pub fn accuracy_f1(preds: &[LabeledPrediction]) -> Result<AccuracyF1, MetricError> {
    let c = confusion(preds)?;
    Ok(accuracy_f1_from(&c))
}

pub fn accuracy_f1_from(c: &Confusion) -> AccuracyF1 {
    let mut degenerate = Vec::new();
    let mut or_zero = |name: &str, value: Option<f64>| {
        value.unwrap_or_else(|| {
            degenerate.push(name.to_string());
            0.0
        })
    };
    let accuracy = or_zero("accuracy", ratio(c.tp + c.tn, c.total()));
    let precision = or_zero("precision", ratio(c.tp, c.tp + c.fp));
    let recall = or_zero("recall", ratio(c.tp, c.tp + c.fn_));
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        degenerate.push("f1".to_string());
        0.0
    };
    AccuracyF1 {
        accuracy,
        precision,
        recall,
        f1,
        degenerate,
        unparseable: c.unparseable,
    }
}

fn per_question_accuracy(preds: &[&LabeledPrediction]) -> f64 {
    preds.iter().filter(|p| p.correct()).count() as f64 / preds.len() as f64
}

fn all_correct_fraction(groups: &BTreeMap<String, Vec<&LabeledPrediction>>) -> f64 {
    let ok = groups.values().filter(|g| g.iter().all(|p| p.correct())).count();
    ok as f64 / groups.len() as f64
}

fn key<'a>(pred: &'a LabeledPrediction, name: &'static str, value: &'a Option<String>) -> Result<&'a str, MetricError> {
    value.as_deref().ok_or_else(|| MetricError::MissingGroupKey {
        example_id: pred.example_id.clone(),
        key: name,
    })
}

/// Per-subtask score `100 * (acc + acc+)`, where acc+ is the fraction of
/// images with both of their questions right. Images are identified by
/// `pair_id`.
pub fn mme_score(preds: &[LabeledPrediction]) -> Result<BTreeMap<String, f64>, MetricError> {
    if preds.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let mut tasks: BTreeMap<&str, BTreeMap<String, Vec<&LabeledPrediction>>> = BTreeMap::new();
    for p in preds {
        let subtask = key(p, "subtask", &p.group_keys.subtask)?;
        let image = key(p, "pair_id", &p.group_keys.pair_id)?;
        tasks
            .entry(subtask)
            .or_default()
            .entry(image.to_string())
            .or_default()
            .push(p);
    }
    let mut scores = BTreeMap::new();
    for (subtask, images) in tasks {
        if let Some((image, group)) = images.iter().find(|(_, g)| g.len() != 2) {
            return Err(MetricError::MalformedGrouping {
                subtask: subtask.to_string(),
                image: image.clone(),
                count: group.len(),
            });
        }
        let all: Vec<&LabeledPrediction> = images.values().flatten().copied().collect();
        let acc = per_question_accuracy(&all);
        let acc_plus = all_correct_fraction(&images);
        scores.insert(subtask.to_string(), 100.0 * (acc + acc_plus));
    }
    Ok(scores)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HallusionMetrics {
    pub q_acc: f64,
    pub f_acc: f64,
    pub a_acc: f64,
    /// `None` when no example carries that difficulty.
    pub easy_a_acc: Option<f64>,
    pub hard_a_acc: Option<f64>,
}

pub fn hallusion_metrics(preds: &[LabeledPrediction]) -> Result<HallusionMetrics, MetricError> {
    if preds.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let mut pairs: BTreeMap<String, Vec<&LabeledPrediction>> = BTreeMap::new();
    let mut figures: BTreeMap<String, Vec<&LabeledPrediction>> = BTreeMap::new();
    for p in preds {
        let pair = key(p, "pair_id", &p.group_keys.pair_id)?;
        let figure = key(p, "figure_id", &p.group_keys.figure_id)?;
        pairs.entry(pair.to_string()).or_default().push(p);
        figures.entry(figure.to_string()).or_default().push(p);
    }
    let all: Vec<&LabeledPrediction> = preds.iter().collect();
    let slice = |d: Difficulty| {
        let part: Vec<&LabeledPrediction> = preds.iter().filter(|p| p.group_keys.difficulty == Some(d)).collect();
        (!part.is_empty()).then(|| per_question_accuracy(&part))
    };
    Ok(HallusionMetrics {
        q_acc: all_correct_fraction(&pairs),
        f_acc: all_correct_fraction(&figures),
        a_acc: per_question_accuracy(&all),
        easy_a_acc: slice(Difficulty::Easy),
        hard_a_acc: slice(Difficulty::Hard),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YesBias {
    /// (predicted Yes - gold Yes) / N. Zero means no net bias.
    pub pct_diff: f64,
    /// FP / (FP + FN); `None` when there are no errors of either kind.
    pub fp_ratio: Option<f64>,
    pub predicted_yes: usize,
    pub gold_yes: usize,
    pub n: usize,
}

pub fn yes_bias(preds: &[LabeledPrediction]) -> Result<YesBias, MetricError> {
    let c = confusion(preds)?;
    let n = preds.len();
    let predicted_yes = c.tp + c.fp;
    let gold_yes = preds.iter().filter(|p| p.gold == YesNo::Yes).count();
    Ok(YesBias {
        pct_diff: (predicted_yes as f64 - gold_yes as f64) / n as f64,
        fp_ratio: ratio(c.fp, c.fp + c.fn_),
        predicted_yes,
        gold_yes,
        n,
    })
}

/// Discriminative scores overall and per POPE split.
pub fn by_split(preds: &[LabeledPrediction]) -> Result<BTreeMap<String, AccuracyF1>, MetricError> {
    let mut groups: BTreeMap<&str, Vec<LabeledPrediction>> = BTreeMap::new();
    for p in preds {
        if let Some(split) = p.group_keys.split {
            groups.entry(split.as_str()).or_default().push(p.clone());
        }
    }
    let mut out = BTreeMap::new();
    out.insert("all".to_string(), accuracy_f1(preds)?);
    for (split, group) in groups {
        out.insert(split.to_string(), accuracy_f1(&group)?);
    }
    Ok(out)
}
