//! Answer generation by span extension.
//!
//! Each named entity is grown through the constituents that contain it.
//! Only constituents whose bare label is a candidate answer type can become
//! the answer; the walk stops at the first candidate that would cover more
//! than `omega_percent` of the sentence tokens.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{AnnotatedSentence, NerSpan};
use crate::tree::Span;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AnswerType {
    NE,
    NP,
    ADJP,
    VP,
    S,
}

impl AnswerType {
    pub const ALL: [AnswerType; 5] = [
        AnswerType::NE,
        AnswerType::NP,
        AnswerType::ADJP,
        AnswerType::VP,
        AnswerType::S,
    ];

    /// Position in [`AnswerType::ALL`]; used as the class index.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<AnswerType> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AnswerType::NE => "NE",
            AnswerType::NP => "NP",
            AnswerType::ADJP => "ADJP",
            AnswerType::VP => "VP",
            AnswerType::S => "S",
        }
    }
}

impl fmt::Display for AnswerType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown answer type {0:?}")]
pub struct UnknownAnswerType(pub String);

impl FromStr for AnswerType {
    type Err = UnknownAnswerType;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AnswerType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| UnknownAnswerType(s.to_string()))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExtensionError {
    #[error("span extending threshold must be in (0, 100], got {0}")]
    InvalidThreshold(f64),
    #[error("candidate label set is empty")]
    NoCandidateLabels,
    #[error("NE ({0}, {1}) is not an NE of sentence {2:?}")]
    NeNotInSentence(usize, usize, String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtensionConfig {
    omega_percent: f64,
    candidate_labels: BTreeSet<String>,
}

impl Default for ExtensionConfig {
    fn default() -> Self {
        ExtensionConfig {
            omega_percent: 80.0,
            candidate_labels: Self::default_labels(),
        }
    }
}

impl ExtensionConfig {
    pub fn new(
        omega_percent: f64,
        candidate_labels: impl IntoIterator<Item = impl Into<String>>,
    ) -> Result<Self, ExtensionError> {
        if !(omega_percent > 0.0 && omega_percent <= 100.0) {
            return Err(ExtensionError::InvalidThreshold(omega_percent));
        }
        let candidate_labels: BTreeSet<String> = candidate_labels.into_iter().map(Into::into).collect();
        if candidate_labels.is_empty() {
            return Err(ExtensionError::NoCandidateLabels);
        }
        Ok(ExtensionConfig {
            omega_percent,
            candidate_labels,
        })
    }

    pub fn with_omega(omega_percent: f64) -> Result<Self, ExtensionError> {
        Self::new(omega_percent, Self::default_labels())
    }

    /// NP, ADJP, VP, S and SBAR (SBAR counts as a sub-clause).
    pub fn default_labels() -> BTreeSet<String> {
        ["NP", "ADJP", "VP", "S", "SBAR"]
            .into_iter()
            .map(String::from)
            .collect()
    }

    pub fn omega_percent(&self) -> f64 {
        self.omega_percent
    }

    pub fn candidate_labels(&self) -> &BTreeSet<String> {
        &self.candidate_labels
    }

    /// `len / sentence_len * 100 <= omega`, compared without division.
    pub fn within_threshold(&self, len: usize, sentence_len: usize) -> bool {
        (len as f64) * 100.0 <= self.omega_percent * sentence_len as f64
    }
}

/// Maps a bare constituent label to the answer type it stands for, if that
/// label is among `candidate_labels`.
pub fn classify_label(bare_label: &str, candidate_labels: &BTreeSet<String>) -> Option<AnswerType> {
    if !candidate_labels.contains(bare_label) {
        return None;
    }
    match bare_label {
        "NP" => Some(AnswerType::NP),
        "ADJP" => Some(AnswerType::ADJP),
        "VP" => Some(AnswerType::VP),
        "S" | "SBAR" => Some(AnswerType::S),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtendedAnswer {
    pub span: Span,
    pub answer_type: AnswerType,
    pub pseudo_ner_label: String,
    pub source_ne: NerSpan,
}

impl ExtendedAnswer {
    pub fn len(&self) -> usize {
        self.span.1 - self.span.0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The answer left as the bare NE.
    pub fn from_ne(ne: &NerSpan) -> Self {
        ExtendedAnswer {
            span: ne.span(),
            answer_type: AnswerType::NE,
            pseudo_ner_label: ne.label.clone(),
            source_ne: ne.clone(),
        }
    }
}

/// Extends one NE of `sentence` to its answer span.
pub fn extend_answer(
    sentence: &AnnotatedSentence,
    ne: &NerSpan,
    cfg: &ExtensionConfig,
) -> Result<ExtendedAnswer, ExtensionError> {
    if !sentence.ner_spans.contains(ne) {
        return Err(ExtensionError::NeNotInSentence(ne.start, ne.end, sentence.id.clone()));
    }
    let chain = sentence
        .tree
        .constituents_containing(ne.span())
        .map_err(|_| ExtensionError::NeNotInSentence(ne.start, ne.end, sentence.id.clone()))?;
    let n = sentence.tokens.len();
    let mut answer = ExtendedAnswer::from_ne(ne);
    for node in chain {
        let Some(answer_type) = classify_label(node.bare_label(), &cfg.candidate_labels) else {
            continue;
        };
        if !cfg.within_threshold(node.len(), n) {
            break;
        }
        // A node covering exactly the NE leaves the answer as the NE.
        if node.span() != ne.span() {
            answer.span = node.span();
            answer.answer_type = answer_type;
        }
    }
    Ok(answer)
}

/// One answer per NE, in NE order.
pub fn extract_all_answers(sentence: &AnnotatedSentence, cfg: &ExtensionConfig) -> Vec<ExtendedAnswer> {
    sentence
        .ner_spans
        .iter()
        .filter_map(|ne| extend_answer(sentence, ne, cfg).ok())
        .collect()
}
