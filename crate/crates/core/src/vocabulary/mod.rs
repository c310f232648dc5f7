//! Caption keywords to candidate dataset classes.

mod entities;

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use entities::{extract_entities, lemmatize, tag_token, EntityList, Tag};

use crate::backbones::Embedding;
use crate::error::{Error, Result};

pub const UNLABELED: &str = "unlabeled";
pub const DEFAULT_PROMPT: &str = "a photo of a {class}";

/// Fills `{class}` in a prompt template.
pub fn prompt(template: &str, class: &str) -> String {
    template.replace("{class}", class)
}

/// Reads a vocabulary file: one class per line, first line `unlabeled`.
pub fn load_class_list(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_class_list(&text)
}

pub fn parse_class_list(text: &str) -> Result<Vec<String>> {
    let classes: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();
    if classes.first().map(String::as_str) != Some(UNLABELED) {
        return Err(Error::InvalidArgument(format!(
            "class list must start with `{UNLABELED}`"
        )));
    }
    Ok(classes)
}

/// How the per-keyword acceptance threshold is computed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CandidateFilter {
    /// Accept the nearest class when its distance is at most the keyword's
    /// mean distance over all classes.
    #[default]
    KeywordMean,
    /// Threshold is the mean over every (keyword, class) distance of the caption.
    CaptionMean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeywordMatch {
    pub keyword: String,
    /// Accepted class, `None` when the keyword was filtered out.
    pub matched: Option<usize>,
    pub nearest: usize,
    pub min_distance: f64,
    pub mean_distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateClassSet {
    /// Index 0 is always `unlabeled`.
    pub dataset_classes: Vec<String>,
    pub candidates: BTreeSet<usize>,
    pub per_keyword: Vec<KeywordMatch>,
}

impl CandidateClassSet {
    /// Every labelled class is a candidate (no caption gating).
    pub fn all(dataset_classes: Vec<String>) -> Self {
        let candidates = (1..dataset_classes.len()).collect();
        CandidateClassSet {
            dataset_classes,
            candidates,
            per_keyword: Vec::new(),
        }
    }

    pub fn contains(&self, class: usize) -> bool {
        self.candidates.contains(&class)
    }

    pub fn candidate_names(&self) -> Vec<&str> {
        self.candidates
            .iter()
            .map(|&i| self.dataset_classes[i].as_str())
            .collect()
    }
}

/// Text embeddings of every labelled class, computed once per run.
#[derive(Clone, Debug)]
pub struct ClassEmbeddings {
    /// `embeddings[i]` belongs to class `i + 1`.
    embeddings: Vec<Embedding>,
}

impl ClassEmbeddings {
    pub fn compute(
        classes: &[String],
        template: &str,
        mut embed: impl FnMut(&str) -> Result<Embedding>,
    ) -> Result<Self> {
        if classes.len() < 2 {
            return Err(Error::InvalidArgument(
                "need at least one class besides `unlabeled`".into(),
            ));
        }
        let embeddings = classes[1..]
            .iter()
            .map(|c| embed(&prompt(template, c)))
            .collect::<Result<Vec<_>>>()?;
        Ok(ClassEmbeddings { embeddings })
    }

    pub fn from_vec(embeddings: Vec<Embedding>) -> Self {
        ClassEmbeddings { embeddings }
    }

    /// Cosine distances to classes `1..=n`, in class order.
    pub fn distances(&self, query: &Embedding) -> Vec<f64> {
        self.embeddings.iter().map(|e| query.distance(e)).collect()
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }
}

/// Index of the smallest value, lowest index on ties.
pub fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v < values[best] {
            best = i;
        }
    }
    best
}

/// Mean of `values` written as `min + Σ(v − min)/n`, so that the result is
/// never below the minimum in floating point and equals it exactly when all
/// values coincide.
pub fn anchored_mean(values: &[f64], min: f64) -> f64 {
    let excess: f64 = values.iter().map(|v| v - min).sum();
    min + excess / values.len() as f64
}

/// Decision for one keyword given its distances to classes `1..=n`:
/// `(nearest class index, min, mean, accepted)`.
pub fn keyword_decision(distances: &[f64], threshold: Option<f64>) -> (usize, f64, f64, bool) {
    let i = argmin(distances);
    let min = distances[i];
    let mean = anchored_mean(distances, min);
    let limit = threshold.unwrap_or(mean);
    (i + 1, min, mean, min <= limit)
}

/// Matches caption keywords to dataset classes in text-embedding space.
pub fn match_candidates(
    entities: &EntityList,
    dataset_classes: &[String],
    class_embeddings: &ClassEmbeddings,
    filter: CandidateFilter,
    mut embed_keyword: impl FnMut(&str) -> Result<Embedding>,
) -> Result<CandidateClassSet> {
    if dataset_classes.len() < 2 || class_embeddings.len() != dataset_classes.len() - 1 {
        return Err(Error::InvalidArgument(format!(
            "{} classes but {} class embeddings",
            dataset_classes.len(),
            class_embeddings.len()
        )));
    }
    let rows = entities
        .keywords
        .iter()
        .map(|k| Ok(class_embeddings.distances(&embed_keyword(k)?)))
        .collect::<Result<Vec<_>>>()?;
    let caption_threshold = match filter {
        CandidateFilter::KeywordMean => None,
        CandidateFilter::CaptionMean if rows.is_empty() => None,
        CandidateFilter::CaptionMean => {
            let all: Vec<f64> = rows.iter().flatten().copied().collect();
            let min = all.iter().copied().fold(f64::INFINITY, f64::min);
            Some(anchored_mean(&all, min))
        }
    };
    let mut candidates = BTreeSet::new();
    let mut per_keyword = Vec::with_capacity(rows.len());
    for (keyword, d) in entities.keywords.iter().zip(&rows) {
        let (nearest, min, mean, accepted) = keyword_decision(d, caption_threshold);
        if accepted {
            candidates.insert(nearest);
        }
        per_keyword.push(KeywordMatch {
            keyword: keyword.clone(),
            matched: accepted.then_some(nearest),
            nearest,
            min_distance: min,
            mean_distance: mean,
        });
    }
    Ok(CandidateClassSet {
        dataset_classes: dataset_classes.to_vec(),
        candidates,
        per_keyword,
    })
}

/// Open-vocabulary mode: the caption keywords themselves become the classes.
pub fn open_vocab_candidates(entities: &EntityList) -> CandidateClassSet {
    let mut dataset_classes = vec![UNLABELED.to_string()];
    dataset_classes.extend(entities.keywords.iter().cloned());
    CandidateClassSet {
        candidates: (1..dataset_classes.len()).collect(),
        dataset_classes,
        per_keyword: Vec::new(),
    }
}
