//! Annotated corpus records: tokens, NER spans and a constituency tree per
//! sentence, read from JSON Lines.

use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tree::{parse_bracketed_tree, ParseTree, Span, TreeError};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NerSpan {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

impl NerSpan {
    pub fn new(start: usize, end: usize, label: impl Into<String>) -> Self {
        NerSpan {
            start,
            end,
            label: label.into(),
        }
    }

    pub fn span(&self) -> Span {
        (self.start, self.end)
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedSentence {
    pub id: String,
    /// Passage the sentence belongs to. Consecutive sentences sharing a
    /// passage id are joined into one context by the dataset builder.
    pub passage: Option<String>,
    pub tokens: Vec<String>,
    pub ner_spans: Vec<NerSpan>,
    pub tree: ParseTree,
}

impl AnnotatedSentence {
    pub fn passage_id(&self) -> &str {
        self.passage.as_deref().unwrap_or(&self.id)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum IssueCode {
    NerOutOfBounds,
    NerEmptySpan,
    NerOverlap,
    TreeTokenMismatch,
    TreeParseError,
    EmptySentence,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub code: IssueCode,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum WarningCode {
    /// The NE does not coincide with any constituent of the tree.
    NerNotConstituent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Warning {
    pub code: WarningCode,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub sentence_id: String,
    pub issues: Vec<Issue>,
    /// Advisory findings; they do not affect validity.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<Warning>,
    pub is_valid: bool,
}

impl ValidationReport {
    fn new(sentence_id: &str) -> Self {
        ValidationReport {
            sentence_id: sentence_id.to_string(),
            issues: Vec::new(),
            warnings: Vec::new(),
            is_valid: true,
        }
    }

    fn issue(&mut self, code: IssueCode, message: String) {
        self.issues.push(Issue { code, message });
        self.is_valid = false;
    }

    pub fn has(&self, code: IssueCode) -> bool {
        self.issues.iter().any(|i| i.code == code)
    }
}

/// Checks every invariant of an annotated sentence and reports all violations.
pub fn validate_sentence(s: &AnnotatedSentence) -> ValidationReport {
    let mut report = ValidationReport::new(&s.id);
    let n = s.tokens.len();
    if n == 0 {
        report.issue(IssueCode::EmptySentence, "sentence has no tokens".into());
    }

    let leaves = s.tree.tokens();
    if leaves.len() != n || leaves.iter().zip(&s.tokens).any(|(a, b)| *a != b.as_str()) {
        let first_diff = leaves
            .iter()
            .zip(&s.tokens)
            .position(|(a, b)| *a != b.as_str())
            .unwrap_or(leaves.len().min(n));
        report.issue(
            IssueCode::TreeTokenMismatch,
            format!(
                "tree has {} leaves, sentence has {} tokens; first difference at index {}",
                leaves.len(),
                n,
                first_diff
            ),
        );
    }

    for ne in &s.ner_spans {
        if ne.start >= ne.end {
            report.issue(
                IssueCode::NerEmptySpan,
                format!("NE {:?} ({}, {}) has start >= end", ne.label, ne.start, ne.end),
            );
        } else if ne.end > n {
            report.issue(
                IssueCode::NerOutOfBounds,
                format!("NE {:?} ({}, {}) exceeds token count {}", ne.label, ne.start, ne.end, n),
            );
        }
    }

    let mut sorted: Vec<&NerSpan> = s.ner_spans.iter().filter(|ne| ne.start < ne.end).collect();
    sorted.sort_by_key(|ne| (ne.start, ne.end));
    for pair in sorted.windows(2) {
        if pair[1].start < pair[0].end {
            report.issue(
                IssueCode::NerOverlap,
                format!(
                    "NE ({}, {}) overlaps NE ({}, {})",
                    pair[0].start, pair[0].end, pair[1].start, pair[1].end
                ),
            );
        }
    }

    if !report.has(IssueCode::TreeTokenMismatch) {
        let spans: Vec<Span> = s.tree.nodes().iter().map(|n| n.span()).collect();
        for ne in s.ner_spans.iter().filter(|ne| ne.start < ne.end && ne.end <= n) {
            if !spans.contains(&ne.span()) {
                report.warnings.push(Warning {
                    code: WarningCode::NerNotConstituent,
                    message: format!(
                        "NE {:?} ({}, {}) crosses constituent boundaries",
                        ne.label, ne.start, ne.end
                    ),
                });
            }
        }
    }
    report
}

/// One corpus line as stored on disk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusRecord {
    pub id: String,
    pub tokens: Vec<String>,
    #[serde(default)]
    pub ner: Vec<NerSpan>,
    pub tree: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub passage: Option<String>,
}

impl CorpusRecord {
    pub fn into_sentence(self) -> Result<AnnotatedSentence, TreeError> {
        let tree = parse_bracketed_tree(&self.tree)?;
        Ok(AnnotatedSentence {
            id: self.id,
            passage: self.passage,
            tokens: self.tokens,
            ner_spans: self.ner,
            tree,
        })
    }
}

impl From<&AnnotatedSentence> for CorpusRecord {
    fn from(s: &AnnotatedSentence) -> Self {
        CorpusRecord {
            id: s.id.clone(),
            tokens: s.tokens.clone(),
            ner: s.ner_spans.clone(),
            tree: s.tree.render(),
            passage: s.passage.clone(),
        }
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("I/O error reading corpus at line {line}: {source}")]
    Io {
        line: usize,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SkipReason {
    /// The line is not a parseable record (bad JSON or bad tree).
    MalformedRecord { message: String },
    /// The record parsed but fails validation.
    Invalid { report: ValidationReport },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SkippedRecord {
    /// 1-based line number.
    pub line: usize,
    pub reason: SkipReason,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SkipReport {
    pub yielded: usize,
    pub skipped: Vec<SkippedRecord>,
}

impl SkipReport {
    pub fn skipped_lines(&self) -> Vec<usize> {
        self.skipped.iter().map(|s| s.line).collect()
    }
}

/// Parses and validates a single corpus line.
pub fn parse_record_line(line: &str) -> Result<AnnotatedSentence, SkipReason> {
    let record: CorpusRecord =
        serde_json::from_str(line).map_err(|e| SkipReason::MalformedRecord { message: e.to_string() })?;
    let id = record.id.clone();
    let sentence = record.into_sentence().map_err(|e| SkipReason::MalformedRecord {
        message: format!("sentence {id:?}: {e}"),
    })?;
    let report = validate_sentence(&sentence);
    if report.is_valid {
        Ok(sentence)
    } else {
        Err(SkipReason::Invalid { report })
    }
}

/// Lazy reader over a JSON Lines corpus. Invalid records are skipped and
/// recorded in [`CorpusReader::report`]; I/O errors end the stream.
pub struct CorpusReader<R> {
    source: R,
    line_no: usize,
    buf: String,
    report: SkipReport,
    failed: bool,
}

pub fn load_corpus<R: BufRead>(source: R) -> CorpusReader<R> {
    CorpusReader {
        source,
        line_no: 0,
        buf: String::new(),
        report: SkipReport::default(),
        failed: false,
    }
}

impl<R> CorpusReader<R> {
    pub fn report(&self) -> &SkipReport {
        &self.report
    }

    pub fn into_report(self) -> SkipReport {
        self.report
    }

    pub fn into_inner(self) -> R {
        self.source
    }
}

impl<R: BufRead> Iterator for CorpusReader<R> {
    type Item = Result<AnnotatedSentence, CorpusError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        loop {
            self.buf.clear();
            self.line_no += 1;
            match self.source.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(source) => {
                    self.failed = true;
                    return Some(Err(CorpusError::Io {
                        line: self.line_no,
                        source,
                    }));
                }
            }
            let line = self.buf.trim_end_matches(['\n', '\r']);
            if line.trim().is_empty() {
                continue;
            }
            match parse_record_line(line) {
                Ok(s) => {
                    self.report.yielded += 1;
                    return Some(Ok(s));
                }
                Err(reason) => {
                    log::debug!("skipping corpus line {}", self.line_no);
                    self.report.skipped.push(SkippedRecord {
                        line: self.line_no,
                        reason,
                    })
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samples;

    #[test]
    fn estill_is_valid() {
        let s = samples::estill_sentence();
        let r = validate_sentence(&s);
        assert!(r.is_valid, "{r:?}");
        assert!(r.issues.is_empty());
        assert!(r.warnings.is_empty());
    }

    #[test]
    fn ner_out_of_bounds() {
        let mut s = samples::estill_sentence();
        s.ner_spans.push(NerSpan::new(13, 15, "DATE"));
        let r = validate_sentence(&s);
        assert!(!r.is_valid);
        assert!(r.has(IssueCode::NerOutOfBounds));
    }

    #[test]
    fn tree_token_mismatch() {
        let mut s = samples::estill_sentence();
        s.tokens[1] = "City".into();
        let r = validate_sentence(&s);
        assert!(r.has(IssueCode::TreeTokenMismatch));
        assert_eq!(r.issues.len(), 1);
    }

    #[test]
    fn overlap_and_empty_spans() {
        let mut s = samples::estill_sentence();
        s.ner_spans.push(NerSpan::new(12, 13, "GPE"));
        s.ner_spans.push(NerSpan::new(3, 3, "GPE"));
        let r = validate_sentence(&s);
        assert!(r.has(IssueCode::NerOverlap));
        assert!(r.has(IssueCode::NerEmptySpan));
        assert!(!r.is_valid);
    }

    #[test]
    fn non_constituent_ne_is_a_warning() {
        let mut s = samples::estill_sentence();
        s.ner_spans = vec![NerSpan::new(10, 12, "GPE")];
        let r = validate_sentence(&s);
        assert!(r.is_valid);
        assert_eq!(r.warnings.len(), 1);
        assert_eq!(r.warnings[0].code, WarningCode::NerNotConstituent);
    }

    #[test]
    fn validation_does_not_mutate() {
        let s = samples::estill_sentence();
        let copy = s.clone();
        let _ = validate_sentence(&s);
        assert_eq!(s, copy);
    }

    #[test]
    fn three_lines_one_malformed() {
        let good = serde_json::to_string(&CorpusRecord::from(&samples::estill_sentence())).unwrap();
        let text = format!("{good}\n{{\"id\": \"broken\", \"tokens\": [\n{good}\n");
        let mut reader = load_corpus(text.as_bytes());
        let got: Vec<_> = reader.by_ref().collect::<Result<_, _>>().unwrap();
        assert_eq!(got.len(), 2);
        assert_eq!(reader.report().skipped_lines(), vec![2]);
        assert_eq!(reader.report().yielded, 2);
    }

    #[test]
    fn bad_tree_is_malformed() {
        let text = r#"{"id": "x", "tokens": ["a"], "ner": [], "tree": "(S (NP"}"#;
        let mut reader = load_corpus(text.as_bytes());
        assert!(reader.next().is_none());
        assert!(matches!(
            reader.report().skipped[0].reason,
            SkipReason::MalformedRecord { .. }
        ));
    }

    #[test]
    fn invalid_record_is_skipped() {
        let text = r#"{"id": "x", "tokens": ["a", "b"], "ner": [], "tree": "(S (NN a))"}"#;
        let mut reader = load_corpus(text.as_bytes());
        assert!(reader.next().is_none());
        assert!(matches!(reader.report().skipped[0].reason, SkipReason::Invalid { .. }));
    }

    #[test]
    fn empty_file() {
        let mut reader = load_corpus(&b""[..]);
        assert!(reader.next().is_none());
        assert!(reader.report().skipped.is_empty());
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = r#"{"id": "x", "tokens": ["a"], "ner": [], "tree": "(S (NN a))", "extra": 1}"#;
        assert!(matches!(
            parse_record_line(text),
            Err(SkipReason::MalformedRecord { .. })
        ));
    }
}
