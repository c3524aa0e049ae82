//! Top-K and Substring filters over model predictions, and the iterative
//! predict / filter / fine-tune procedure that consumes them.

use std::collections::HashMap;
use std::io::{self, BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{split_dataset, DatasetError, QADataset, SplitPlan};
use crate::extension::AnswerType;
use crate::question::QAInstance;

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("prediction for {prediction:?} applied to instance {instance:?}")]
    IdMismatch { instance: String, prediction: String },
    #[error("invalid prediction record {id:?}: {reason}")]
    InvalidPrediction { id: String, reason: String },
    #[error("malformed prediction at line {line}: {message}")]
    MalformedRecord { line: usize, message: String },
    #[error("model adapter failed in round {round}: {message}")]
    Adapter { round: usize, message: String },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NBestEntry {
    pub text: String,
    /// Token offsets into the instance context, end exclusive.
    pub start: usize,
    pub end: usize,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    #[serde(rename = "id")]
    pub instance_id: String,
    pub nbest: Vec<NBestEntry>,
}

impl PredictionRecord {
    /// Checks non-emptiness, probability range and descending order.
    pub fn validate(&self) -> Result<(), FilterError> {
        let invalid = |reason: &str| FilterError::InvalidPrediction {
            id: self.instance_id.clone(),
            reason: reason.to_string(),
        };
        if self.nbest.is_empty() {
            return Err(invalid("empty n-best list"));
        }
        if self.nbest.iter().any(|e| !(0.0..=1.0).contains(&e.prob)) {
            return Err(invalid("probability outside [0, 1]"));
        }
        if self.nbest.windows(2).any(|w| w[1].prob > w[0].prob) {
            return Err(invalid("n-best list is not sorted by probability"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MatchMode {
    #[default]
    ExactOffsets,
    NormalizedText,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub k: usize,
    pub gamma_sub: f64,
    #[serde(default)]
    pub match_mode: MatchMode,
    /// Replace the answer of substring-kept instances by the matched prediction.
    #[serde(default)]
    pub relabel_substring: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            k: 1,
            gamma_sub: 0.1,
            match_mode: MatchMode::ExactOffsets,
            relabel_substring: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum KeepReason {
    TopK,
    Substring,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterDecision {
    pub instance_id: String,
    pub kept: bool,
    pub reason: KeepReason,
    pub matched_prediction: Option<usize>,
    /// Set when no prediction record existed for the instance.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub missing_prediction: bool,
}

/// SQuAD-style answer normalization: lowercase, drop punctuation and
/// articles, collapse whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let no_punct: String = lowered
        .chars()
        .map(|c| if c.is_ascii_punctuation() { ' ' } else { c })
        .collect();
    no_punct
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn check_ids(instance: &QAInstance, pred: &PredictionRecord) -> Result<(), FilterError> {
    if instance.id != pred.instance_id {
        return Err(FilterError::IdMismatch {
            instance: instance.id.clone(),
            prediction: pred.instance_id.clone(),
        });
    }
    Ok(())
}

fn answer_matches(instance: &QAInstance, entry: &NBestEntry, mode: MatchMode) -> bool {
    match mode {
        MatchMode::ExactOffsets => entry.start == instance.answer_start && entry.end == instance.answer_end,
        MatchMode::NormalizedText => normalize_answer(&entry.text) == normalize_answer(&instance.answer_text),
    }
}

fn is_token_subsequence(needle: &[&str], haystack: &[&str]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

fn is_substring_of_answer(instance: &QAInstance, entry: &NBestEntry, mode: MatchMode) -> bool {
    match mode {
        MatchMode::ExactOffsets => {
            entry.start < entry.end && instance.answer_start <= entry.start && entry.end <= instance.answer_end
        }
        MatchMode::NormalizedText => {
            let needle = normalize_answer(&entry.text);
            let hay = normalize_answer(&instance.answer_text);
            let needle: Vec<&str> = needle.split(' ').filter(|s| !s.is_empty()).collect();
            let hay: Vec<&str> = hay.split(' ').filter(|s| !s.is_empty()).collect();
            is_token_subsequence(&needle, &hay)
        }
    }
}

fn top_k_match(instance: &QAInstance, pred: &PredictionRecord, cfg: &FilterConfig) -> Option<usize> {
    pred.nbest
        .iter()
        .take(cfg.k)
        .position(|e| answer_matches(instance, e, cfg.match_mode))
}

fn substring_match(instance: &QAInstance, pred: &PredictionRecord, cfg: &FilterConfig) -> Option<usize> {
    if instance.answer_type != AnswerType::NE {
        return None;
    }
    pred.nbest
        .iter()
        .position(|e| e.prob > cfg.gamma_sub && is_substring_of_answer(instance, e, cfg.match_mode))
}

/// True iff the synthetic answer is among the first `k` predictions.
pub fn top_k_keep(instance: &QAInstance, pred: &PredictionRecord, cfg: &FilterConfig) -> Result<bool, FilterError> {
    check_ids(instance, pred)?;
    Ok(top_k_match(instance, pred, cfg).is_some())
}

/// True iff the instance has an NE answer and some prediction with
/// probability above `gamma_sub` is a token-aligned piece of it.
pub fn substring_keep(instance: &QAInstance, pred: &PredictionRecord, cfg: &FilterConfig) -> Result<bool, FilterError> {
    check_ids(instance, pred)?;
    Ok(substring_match(instance, pred, cfg).is_some())
}

/// Decides one instance; the Top-K reason wins when both predicates hold.
pub fn decide(instance: &QAInstance, pred: Option<&PredictionRecord>, cfg: &FilterConfig) -> FilterDecision {
    let rejected = |missing| FilterDecision {
        instance_id: instance.id.clone(),
        kept: false,
        reason: KeepReason::Rejected,
        matched_prediction: None,
        missing_prediction: missing,
    };
    let Some(pred) = pred else {
        return rejected(true);
    };
    if pred.instance_id != instance.id {
        return rejected(true);
    }
    let (reason, matched) = if let Some(i) = top_k_match(instance, pred, cfg) {
        (KeepReason::TopK, Some(i))
    } else if let Some(i) = substring_match(instance, pred, cfg) {
        (KeepReason::Substring, Some(i))
    } else {
        return rejected(false);
    };
    FilterDecision {
        instance_id: instance.id.clone(),
        kept: true,
        reason,
        matched_prediction: matched,
        missing_prediction: false,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterCounts {
    pub part_size: usize,
    pub kept_top_k: usize,
    pub kept_substring: usize,
    pub rejected: usize,
    pub missing: usize,
}

impl FilterCounts {
    pub fn kept(&self) -> usize {
        self.kept_top_k + self.kept_substring
    }

    pub fn reconciles(&self) -> bool {
        self.part_size == self.kept() + self.rejected + self.missing
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub kept: QADataset,
    pub decisions: Vec<FilterDecision>,
    pub counts: FilterCounts,
}

/// Applies both filters to every instance of `part`. Instances without a
/// prediction are rejected and counted as missing.
pub fn filter_part(part: &QADataset, preds: &HashMap<String, PredictionRecord>, cfg: &FilterConfig) -> FilterOutcome {
    let mut counts = FilterCounts {
        part_size: part.len(),
        ..Default::default()
    };
    let decisions: Vec<FilterDecision> = part
        .instances
        .par_iter()
        .map(|inst| decide(inst, preds.get(&inst.id), cfg))
        .collect();
    let mut kept = Vec::new();
    for (inst, d) in part.instances.iter().zip(&decisions) {
        let pred = preds.get(&inst.id);
        match d.reason {
            KeepReason::TopK => counts.kept_top_k += 1,
            KeepReason::Substring => counts.kept_substring += 1,
            KeepReason::Rejected if d.missing_prediction => counts.missing += 1,
            KeepReason::Rejected => counts.rejected += 1,
        }
        if d.kept {
            let mut inst = inst.clone();
            if cfg.relabel_substring && d.reason == KeepReason::Substring {
                let entry = &pred.expect("kept implies a prediction").nbest[d.matched_prediction.unwrap()];
                relabel(&mut inst, entry);
            }
            kept.push(inst);
        }
    }
    FilterOutcome {
        kept: QADataset::new(kept, part.provenance.clone()),
        decisions,
        counts,
    }
}

fn relabel(inst: &mut QAInstance, entry: &NBestEntry) {
    if entry.start < entry.end && entry.end <= inst.context.len() {
        inst.answer_start = entry.start;
        inst.answer_end = entry.end;
        inst.answer_text = inst.context[entry.start..entry.end].join(" ");
    }
}

pub fn read_predictions<R: BufRead>(source: R) -> Result<HashMap<String, PredictionRecord>, FilterError> {
    let mut out = HashMap::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PredictionRecord = serde_json::from_str(&line).map_err(|e| FilterError::MalformedRecord {
            line: i + 1,
            message: e.to_string(),
        })?;
        rec.validate()?;
        out.insert(rec.instance_id.clone(), rec);
    }
    Ok(out)
}

pub fn write_predictions<W: Write>(preds: &[PredictionRecord], mut sink: W) -> io::Result<()> {
    for p in preds {
        serde_json::to_writer(&mut sink, p)?;
        sink.write_all(b"\n")?;
    }
    sink.flush()
}

/// A QA model taking part in the iterative procedure.
pub trait ModelAdapter {
    fn fine_tune(&mut self, instances: &QADataset) -> Result<(), String>;

    fn predict(&mut self, instances: &QADataset) -> Result<Vec<PredictionRecord>, String>;

    /// Persists the current model; returns where, if anywhere.
    fn checkpoint(&mut self, _label: &str) -> Result<Option<String>, String> {
        Ok(None)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    #[serde(flatten)]
    pub counts: FilterCounts,
    pub fine_tuned: bool,
    pub checkpoint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub initial_size: usize,
    pub initial_checkpoint: Option<String>,
    pub rounds: Vec<RoundReport>,
    pub filter: FilterConfig,
    pub split: SplitPlan,
}

impl RunReport {
    /// Initial fine-tune plus one round per filter part.
    pub fn round_count(&self) -> usize {
        1 + self.rounds.len()
    }
}

/// Hook invoked after each filter round with the part and its outcome.
pub type RoundObserver<'a> = dyn FnMut(usize, &QADataset, &FilterOutcome) + 'a;

/// Fine-tunes on the initial split, then for each filter part predicts,
/// filters and fine-tunes on what was kept.
pub fn run_training_procedure(
    dataset: &QADataset,
    plan: &SplitPlan,
    adapter: &mut dyn ModelAdapter,
    cfg: &FilterConfig,
) -> Result<RunReport, FilterError> {
    run_training_procedure_observed(dataset, plan, adapter, cfg, &mut |_, _, _| {})
}

pub fn run_training_procedure_observed(
    dataset: &QADataset,
    plan: &SplitPlan,
    adapter: &mut dyn ModelAdapter,
    cfg: &FilterConfig,
    observer: &mut RoundObserver<'_>,
) -> Result<RunReport, FilterError> {
    let split = split_dataset(dataset, plan)?;
    let fail = |round: usize| move |message: String| FilterError::Adapter { round, message };

    if split.initial.is_empty() {
        log::info!("initial split is empty; skipping the initial fine-tune");
    } else {
        adapter.fine_tune(&split.initial).map_err(fail(0))?;
    }
    let initial_checkpoint = adapter.checkpoint("initial").map_err(fail(0))?;

    let mut rounds = Vec::with_capacity(split.parts.len());
    for (i, part) in split.parts.iter().enumerate() {
        let round = i + 1;
        let preds: HashMap<String, PredictionRecord> = adapter
            .predict(part)
            .map_err(fail(round))?
            .into_iter()
            .map(|p| (p.instance_id.clone(), p))
            .collect();
        let outcome = filter_part(part, &preds, cfg);
        observer(round, part, &outcome);
        let fine_tuned = if outcome.kept.is_empty() {
            log::info!("round {round}: nothing kept, skipping fine-tune");
            false
        } else {
            adapter.fine_tune(&outcome.kept).map_err(fail(round))?;
            true
        };
        let checkpoint = adapter.checkpoint(&format!("round-{round}")).map_err(fail(round))?;
        rounds.push(RoundReport {
            round,
            counts: outcome.counts,
            fine_tuned,
            checkpoint,
        });
    }
    Ok(RunReport {
        initial_size: split.initial.len(),
        initial_checkpoint,
        rounds,
        filter: cfg.clone(),
        split: plan.clone(),
    })
}
