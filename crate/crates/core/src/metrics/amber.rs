use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::MetricError;

/// Surface form to canonical object name. Surface forms may span several
/// words ("hot dog", "fire hydrant").
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Lexicon {
    forms: HashMap<Vec<String>, String>,
    longest: usize,
}

fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !(c.is_alphanumeric() || c == '-'))
        .map(|w| w.trim_matches('-'))
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

impl Lexicon {
    pub fn new<I, S, T>(entries: I) -> Self
    where
        I: IntoIterator<Item = (S, T)>,
        S: AsRef<str>,
        T: Into<String>,
    {
        let mut lexicon = Lexicon::default();
        for (surface, canonical) in entries {
            let tokens = tokenize(surface.as_ref());
            if tokens.is_empty() {
                continue;
            }
            lexicon.longest = lexicon.longest.max(tokens.len());
            lexicon.forms.insert(tokens, canonical.into());
        }
        lexicon
    }

    pub fn from_json(raw: &str) -> serde_json::Result<Self> {
        let map: BTreeMap<String, String> = serde_json::from_str(raw)?;
        Ok(Lexicon::new(map))
    }

    pub fn load(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let raw = std::fs::read_to_string(path)?;
        Lexicon::from_json(&raw).map_err(std::io::Error::other)
    }

    pub fn len(&self) -> usize {
        self.forms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forms.is_empty()
    }

    pub fn canonical(&self, surface: &str) -> Option<&str> {
        self.forms.get(&tokenize(surface)).map(String::as_str)
    }
}

/// Left-to-right scan that always takes the longest surface form starting
/// at the current word; matched words are consumed.
pub fn extract_objects(response_text: &str, lexicon: &Lexicon) -> BTreeSet<String> {
    let words = tokenize(response_text);
    let mut found = BTreeSet::new();
    let mut i = 0;
    while i < words.len() {
        let max = lexicon.longest.min(words.len() - i);
        let hit = (1..=max)
            .rev()
            .find_map(|len| lexicon.forms.get(&words[i..i + len]).map(|c| (len, c)));
        match hit {
            Some((len, canonical)) => {
                found.insert(canonical.clone());
                i += len;
            }
            None => i += 1,
        }
    }
    found
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerativePrediction {
    pub example_id: String,
    pub mentioned_objects: BTreeSet<String>,
    pub annotated_objects: BTreeSet<String>,
    #[serde(default)]
    pub hallucination_targets: BTreeSet<String>,
}

/// All four values are percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmberMetrics {
    pub chair: f64,
    pub cover: f64,
    pub hal: f64,
    pub cog: f64,
    /// Responses mentioning no lexicon object; left out of `chair` and `cog`.
    pub skipped_empty_mentioned: usize,
    pub n: usize,
}

pub fn amber_metrics(gens: &[GenerativePrediction]) -> Result<AmberMetrics, MetricError> {
    if gens.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let mut chair = Vec::new();
    let mut cog = Vec::new();
    let mut cover = Vec::with_capacity(gens.len());
    let mut hallucinating = 0usize;
    for g in gens {
        if g.annotated_objects.is_empty() {
            return Err(MetricError::EmptyAnnotation(g.example_id.clone()));
        }
        let hallucinated: BTreeSet<&String> = g.mentioned_objects.difference(&g.annotated_objects).collect();
        let covered = g.mentioned_objects.intersection(&g.annotated_objects).count();
        cover.push(covered as f64 / g.annotated_objects.len() as f64);
        if !hallucinated.is_empty() {
            hallucinating += 1;
        }
        if !g.mentioned_objects.is_empty() {
            let m = g.mentioned_objects.len() as f64;
            chair.push(hallucinated.len() as f64 / m);
            let cognitive = hallucinated
                .iter()
                .filter(|o| g.hallucination_targets.contains(o.as_str()))
                .count();
            cog.push(cognitive as f64 / m);
        }
    }
    let mean = |xs: &[f64]| {
        if xs.is_empty() {
            0.0
        } else {
            xs.iter().sum::<f64>() / xs.len() as f64
        }
    };
    Ok(AmberMetrics {
        chair: 100.0 * mean(&chair),
        cover: 100.0 * mean(&cover),
        hal: 100.0 * hallucinating as f64 / gens.len() as f64,
        cog: 100.0 * mean(&cog),
        skipped_empty_mentioned: gens.len() - chair.len(),
        n: gens.len(),
    })
}
