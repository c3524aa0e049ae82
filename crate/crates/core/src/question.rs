//! Cloze questions and their rule-based conversion to wh-questions.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::AnnotatedSentence;
use crate::extension::{AnswerType, ExtendedAnswer};
use crate::tree::Span;

/// Coarse mask vocabulary shared by all fine NER labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MaskCategory {
    PersonNorpOrg,
    Place,
    Thing,
    Temporal,
    Numeric,
}

impl MaskCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            MaskCategory::PersonNorpOrg => "PERSON_NORP_ORG",
            MaskCategory::Place => "PLACE",
            MaskCategory::Thing => "THING",
            MaskCategory::Temporal => "TEMPORAL",
            MaskCategory::Numeric => "NUMERIC",
        }
    }

    /// The token placed in the cloze, e.g. `[PLACE]`.
    pub fn mask_token(self) -> String {
        format!("[{}]", self.as_str())
    }
}

impl fmt::Display for MaskCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn high_level_mask(ner_label: &str) -> MaskCategory {
    match ner_label {
        "PERSON" | "NORP" | "ORG" => MaskCategory::PersonNorpOrg,
        "GPE" | "LOC" | "FAC" => MaskCategory::Place,
        "DATE" | "TIME" => MaskCategory::Temporal,
        "MONEY" | "CARDINAL" | "ORDINAL" | "QUANTITY" | "PERCENT" => MaskCategory::Numeric,
        _ => MaskCategory::Thing,
    }
}

pub fn wh_word_for(category: MaskCategory, pseudo_ner_label: &str) -> &'static str {
    match category {
        MaskCategory::PersonNorpOrg => "Who",
        MaskCategory::Place => "Where",
        MaskCategory::Temporal => "When",
        MaskCategory::Numeric if pseudo_ner_label == "MONEY" => "How much",
        MaskCategory::Numeric => "How many",
        MaskCategory::Thing => "What",
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum QuestionError {
    #[error("answer span ({0}, {1}) does not fit a sentence of {2} tokens")]
    SpanMismatch(usize, usize, usize),
    #[error("sentence does not occur in the passage at offset {0}")]
    OffsetMismatch(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClozeQuestion {
    pub tokens: Vec<String>,
    pub mask_category: MaskCategory,
    pub mask_position: usize,
    /// Whether the sentence's first token starts an NE; such tokens keep
    /// their case when moved out of sentence-initial position.
    pub initial_token_is_entity: bool,
}

impl ClozeQuestion {
    pub fn mask_count(&self) -> usize {
        let mask = self.mask_category.mask_token();
        self.tokens.iter().filter(|t| **t == mask).count()
    }
}

/// Replaces the answer span by a single mask token.
pub fn build_cloze(sentence: &AnnotatedSentence, answer: &ExtendedAnswer) -> Result<ClozeQuestion, QuestionError> {
    build_cloze_at(sentence, answer.span, &answer.pseudo_ner_label)
}

pub(crate) fn build_cloze_at(
    sentence: &AnnotatedSentence,
    span: Span,
    pseudo_ner_label: &str,
) -> Result<ClozeQuestion, QuestionError> {
    let initial = sentence.ner_spans.iter().any(|ne| ne.start == 0);
    cloze_from_tokens(&sentence.tokens, span, pseudo_ner_label, initial)
}

pub(crate) fn cloze_from_tokens(
    tokens: &[String],
    (start, end): Span,
    pseudo_ner_label: &str,
    initial_token_is_entity: bool,
) -> Result<ClozeQuestion, QuestionError> {
    let n = tokens.len();
    if start >= end || end > n {
        return Err(QuestionError::SpanMismatch(start, end, n));
    }
    let category = high_level_mask(pseudo_ner_label);
    let mut out = Vec::with_capacity(n - (end - start) + 1);
    out.extend_from_slice(&tokens[..start]);
    out.push(category.mask_token());
    out.extend_from_slice(&tokens[end..]);
    Ok(ClozeQuestion {
        tokens: out,
        mask_category: category,
        mask_position: start,
        initial_token_is_entity,
    })
}

fn is_sentence_final(token: &str) -> bool {
    matches!(token, "." | "?" | "!")
}

/// Wh-fronting: wh-word, then the tokens after the mask, then the tokens
/// before it. Trailing sentence-final punctuation is dropped and the
/// sentence-initial token is lowercased unless it begins an NE.
pub fn cloze_to_natural(cloze: &ClozeQuestion, pseudo_ner_label: &str) -> Vec<String> {
    let wh = wh_word_for(cloze.mask_category, pseudo_ner_label);
    let mut question: Vec<String> = wh.split(' ').map(str::to_string).collect();

    let mut after = &cloze.tokens[cloze.mask_position + 1..];
    while let Some((last, rest)) = after.split_last() {
        if !is_sentence_final(last) {
            break;
        }
        after = rest;
    }
    question.extend(after.iter().cloned());

    let before = &cloze.tokens[..cloze.mask_position];
    for (i, tok) in before.iter().enumerate() {
        if i == 0 && !cloze.initial_token_is_entity {
            question.push(tok.to_lowercase());
        } else {
            question.push(tok.clone());
        }
    }
    question
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerOrigin {
    /// Sentence bounds in context coordinates.
    pub sentence: Span,
    /// Source NE in context coordinates.
    pub ne: Span,
    pub sentence_initial_entity: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAInstance {
    pub id: String,
    pub context: Vec<String>,
    pub question: Vec<String>,
    pub answer_start: usize,
    pub answer_end: usize,
    pub answer_text: String,
    pub answer_type: AnswerType,
    pub pseudo_ner_label: String,
    /// Where the answer came from; absent for instances imported from
    /// files that do not carry it.
    pub origin: Option<AnswerOrigin>,
}

impl QAInstance {
    pub fn answer_tokens(&self) -> &[String] {
        &self.context[self.answer_start..self.answer_end]
    }

    pub fn answer_len(&self) -> usize {
        self.answer_end - self.answer_start
    }

    pub fn context_text(&self) -> String {
        self.context.join(" ")
    }

    pub fn question_text(&self) -> String {
        self.question.join(" ")
    }

    /// Checks the answer offsets and text against the context.
    pub fn is_consistent(&self) -> bool {
        self.answer_start < self.answer_end
            && self.answer_end <= self.context.len()
            && self.answer_tokens().join(" ") == self.answer_text
    }
}

pub fn instance_id(passage_id: &str, ne: Span, omega_percent: f64) -> String {
    let mut h = Sha256::new();
    h.update(passage_id.as_bytes());
    h.update([0]);
    h.update(ne.0.to_le_bytes());
    h.update(ne.1.to_le_bytes());
    h.update(omega_percent.to_bits().to_le_bytes());
    hex::encode(&h.finalize()[..12])
}

/// Assembles a QA instance, rebasing the answer into passage coordinates.
pub fn make_instance(
    passage_id: &str,
    passage_context: &[String],
    sentence_offset: usize,
    sentence: &AnnotatedSentence,
    answer: &ExtendedAnswer,
    question: Vec<String>,
    omega_percent: f64,
) -> Result<QAInstance, QuestionError> {
    let n = sentence.tokens.len();
    let end = sentence_offset + n;
    if end > passage_context.len() || passage_context[sentence_offset..end] != sentence.tokens[..] {
        return Err(QuestionError::OffsetMismatch(sentence_offset));
    }
    let (a, b) = answer.span;
    if a >= b || b > n {
        return Err(QuestionError::SpanMismatch(a, b, n));
    }
    let ne = (
        answer.source_ne.start + sentence_offset,
        answer.source_ne.end + sentence_offset,
    );
    Ok(QAInstance {
        id: instance_id(passage_id, ne, omega_percent),
        context: passage_context.to_vec(),
        question,
        answer_start: a + sentence_offset,
        answer_end: b + sentence_offset,
        answer_text: sentence.tokens[a..b].join(" "),
        answer_type: answer.answer_type,
        pseudo_ner_label: answer.pseudo_ner_label.clone(),
        origin: Some(AnswerOrigin {
            sentence: (sentence_offset, end),
            ne,
            sentence_initial_entity: sentence.ner_spans.iter().any(|ne| ne.start == 0),
        }),
    })
}
