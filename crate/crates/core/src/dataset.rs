//! Corpus to QA dataset construction, statistics, splitting and the
//! SQuAD-style JSON Lines format.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{self, BufRead, Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{load_corpus, AnnotatedSentence, CorpusError, SkipReport};
use crate::extension::{extract_all_answers, AnswerType, ExtendedAnswer, ExtensionConfig};
use crate::question::{build_cloze, cloze_from_tokens, cloze_to_natural, make_instance, AnswerOrigin, QAInstance};
use crate::rng;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("initial split size {initial} exceeds dataset size {size}")]
    InitialSizeTooLarge { initial: usize, size: usize },
    #[error("split needs at least one filter part")]
    NoFilterParts,
    #[error("histogram bin edges must be strictly ascending and start above 1")]
    BadBinEdges,
    #[error("malformed record at line {line}: {message}")]
    MalformedRecord { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BuildMode {
    /// Answers are never extended beyond the NE.
    NeOnly,
    #[default]
    Diverse,
    /// Diverse answer lengths, but each span is a random window around the NE.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildOptions {
    pub mode: BuildMode,
    pub seed: u64,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            mode: BuildMode::Diverse,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub omega_percent: Option<f64>,
    pub candidate_labels: Vec<String>,
    pub corpus_hash: String,
    pub seed: u64,
    pub mode: BuildMode,
}

impl Provenance {
    fn unknown() -> Self {
        Provenance {
            omega_percent: None,
            candidate_labels: Vec::new(),
            corpus_hash: String::new(),
            seed: 0,
            mode: BuildMode::Diverse,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QADataset {
    pub instances: Vec<QAInstance>,
    pub provenance: Provenance,
}

impl QADataset {
    pub fn new(instances: Vec<QAInstance>, provenance: Provenance) -> Self {
        QADataset { instances, provenance }
    }

    /// A dataset with no build information, e.g. read back from a file.
    pub fn from_instances(instances: Vec<QAInstance>) -> Self {
        QADataset::new(instances, Provenance::unknown())
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    fn with_instances(&self, instances: Vec<QAInstance>) -> QADataset {
        QADataset::new(instances, self.provenance.clone())
    }
}

/// Hashes everything pulled through it.
struct HashingReader<R> {
    inner: R,
    hasher: Sha256,
}

impl<R: Read> Read for HashingReader<R> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.hasher.update(&buf[..n]);
        Ok(n)
    }
}

impl<R: BufRead> BufRead for HashingReader<R> {
    fn fill_buf(&mut self) -> io::Result<&[u8]> {
        self.inner.fill_buf()
    }

    fn consume(&mut self, amt: usize) {
        if let Ok(buf) = self.inner.fill_buf() {
            let take = amt.min(buf.len());
            self.hasher.update(&buf[..take]);
        }
        self.inner.consume(amt);
    }
}

/// Reads a corpus stream and builds the dataset. Invalid records end up in
/// the returned skip report; only I/O errors abort.
pub fn build_dataset<R: BufRead>(
    corpus: R,
    cfg: &ExtensionConfig,
    opts: &BuildOptions,
) -> Result<(QADataset, SkipReport), DatasetError> {
    let mut reader = load_corpus(HashingReader {
        inner: corpus,
        hasher: Sha256::new(),
    });
    let sentences: Vec<AnnotatedSentence> = reader.by_ref().collect::<Result<_, _>>()?;
    let report = reader.report().clone();
    let corpus_hash = hex::encode(reader.into_inner().hasher.finalize());
    Ok((build_from_sentences(&sentences, cfg, opts, &corpus_hash), report))
}

/// Groups consecutive sentences of the same passage.
pub fn passages(sentences: &[AnnotatedSentence]) -> Vec<&[AnnotatedSentence]> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=sentences.len() {
        if i == sentences.len() || sentences[i].passage_id() != sentences[start].passage_id() {
            if i > start {
                out.push(&sentences[start..i]);
            }
            start = i;
        }
    }
    out
}

fn passage_instances(passage: &[AnnotatedSentence], cfg: &ExtensionConfig, mode: BuildMode) -> Vec<QAInstance> {
    let passage_id = passage[0].passage_id();
    let context: Vec<String> = passage.iter().flat_map(|s| s.tokens.iter().cloned()).collect();
    let mut out = Vec::new();
    let mut offset = 0;
    for sentence in passage {
        let answers: Vec<ExtendedAnswer> = match mode {
            BuildMode::NeOnly => sentence.ner_spans.iter().map(ExtendedAnswer::from_ne).collect(),
            BuildMode::Diverse | BuildMode::Random => extract_all_answers(sentence, cfg),
        };
        for answer in answers {
            let built = build_cloze(sentence, &answer).and_then(|cloze| {
                let question = cloze_to_natural(&cloze, &answer.pseudo_ner_label);
                make_instance(
                    passage_id,
                    &context,
                    offset,
                    sentence,
                    &answer,
                    question,
                    cfg.omega_percent(),
                )
            });
            match built {
                Ok(inst) => out.push(inst),
                Err(e) => log::warn!("sentence {:?}: {e}", sentence.id),
            }
        }
        offset += sentence.tokens.len();
    }
    out
}

/// Builds instances from already loaded sentences. Passages are processed in
/// parallel and merged in corpus order.
pub fn build_from_sentences(
    sentences: &[AnnotatedSentence],
    cfg: &ExtensionConfig,
    opts: &BuildOptions,
    corpus_hash: &str,
) -> QADataset {
    let groups = passages(sentences);
    let per_passage: Vec<Vec<QAInstance>> = groups
        .par_iter()
        .map(|p| passage_instances(p, cfg, opts.mode))
        .collect();

    let mut seen_triples = HashSet::new();
    let mut seen_ids: HashMap<String, usize> = HashMap::new();
    let mut instances = Vec::new();
    for mut inst in per_passage.into_iter().flatten() {
        let triple = (
            inst.context.clone(),
            inst.question.clone(),
            inst.answer_start,
            inst.answer_end,
        );
        if !seen_triples.insert(triple) {
            continue;
        }
        let n = seen_ids.entry(inst.id.clone()).or_insert(0);
        if *n > 0 {
            inst.id = format!("{}-{}", inst.id, n);
        }
        *n += 1;
        instances.push(inst);
    }

    let provenance = Provenance {
        omega_percent: Some(cfg.omega_percent()),
        candidate_labels: cfg.candidate_labels().iter().cloned().collect(),
        corpus_hash: corpus_hash.to_string(),
        seed: opts.seed,
        mode: opts.mode,
    };
    let dataset = QADataset::new(instances, provenance);
    match opts.mode {
        BuildMode::Random => random_extension_dataset(&dataset, opts.seed),
        _ => dataset,
    }
}

/// Start positions of every `len`-token window inside `sentence` that covers `ne`.
pub fn covering_windows(sentence: (usize, usize), ne: (usize, usize), len: usize) -> Vec<usize> {
    let (s0, s1) = sentence;
    if len > s1 - s0 || len < ne.1 - ne.0 {
        return Vec::new();
    }
    let lo = s0.max(ne.1.saturating_sub(len));
    let hi = ne.0.min(s1 - len);
    (lo..=hi).filter(|_| lo <= hi).collect()
}

/// Replaces every answer by a random window of the same length that still
/// covers the source NE, and regenerates the question for it.
///
/// Instances without origin information are kept unchanged.
pub fn random_extension_dataset(dataset: &QADataset, seed: u64) -> QADataset {
    let mut rng = rng::stream(seed, "random-extension");
    let mut instances = Vec::with_capacity(dataset.len());
    for inst in &dataset.instances {
        let Some(origin) = inst.origin.as_ref() else {
            instances.push(inst.clone());
            continue;
        };
        let len = inst.answer_len();
        let windows = covering_windows(origin.sentence, origin.ne, len);
        if windows.is_empty() {
            instances.push(inst.clone());
            continue;
        }
        let start = windows[rng.gen_range(0..windows.len())];
        instances.push(reanswer(inst, origin, start, start + len));
    }
    let mut out = dataset.with_instances(instances);
    out.provenance.mode = BuildMode::Random;
    out
}

fn reanswer(inst: &QAInstance, origin: &AnswerOrigin, start: usize, end: usize) -> QAInstance {
    let (s0, s1) = origin.sentence;
    let sentence_tokens = &inst.context[s0..s1];
    let question = cloze_from_tokens(
        sentence_tokens,
        (start - s0, end - s0),
        &inst.pseudo_ner_label,
        origin.sentence_initial_entity,
    )
    .map(|c| cloze_to_natural(&c, &inst.pseudo_ner_label))
    .unwrap_or_else(|_| inst.question.clone());
    QAInstance {
        question,
        answer_start: start,
        answer_end: end,
        answer_text: inst.context[start..end].join(" "),
        ..inst.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerTypePrior {
    pub counts: BTreeMap<AnswerType, u64>,
    pub frequencies: BTreeMap<AnswerType, f64>,
}

impl AnswerTypePrior {
    pub fn from_counts(counts: [u64; 5]) -> Result<Self, DatasetError> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(DatasetError::EmptyDataset);
        }
        let mut c = BTreeMap::new();
        let mut f = BTreeMap::new();
        for t in AnswerType::ALL {
            c.insert(t, counts[t.index()]);
            f.insert(t, counts[t.index()] as f64 / total as f64);
        }
        Ok(AnswerTypePrior {
            counts: c,
            frequencies: f,
        })
    }

    pub fn from_types(types: impl IntoIterator<Item = AnswerType>) -> Result<Self, DatasetError> {
        let mut counts = [0u64; 5];
        for t in types {
            counts[t.index()] += 1;
        }
        Self::from_counts(counts)
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn count(&self, t: AnswerType) -> u64 {
        self.counts.get(&t).copied().unwrap_or(0)
    }

    pub fn frequency(&self, t: AnswerType) -> f64 {
        self.frequencies.get(&t).copied().unwrap_or(0.0)
    }

    /// Frequencies in [`AnswerType::ALL`] order.
    pub fn frequency_vector(&self) -> [f64; 5] {
        AnswerType::ALL.map(|t| self.frequency(t))
    }

    /// Frequencies after adding one to every count, so no type has zero mass.
    pub fn add_one_smoothed(&self) -> [f64; 5] {
        let total = (self.total() + 5) as f64;
        AnswerType::ALL.map(|t| (self.count(t) + 1) as f64 / total)
    }
}

pub fn compute_type_distribution(dataset: &QADataset) -> Result<AnswerTypePrior, DatasetError> {
    AnswerTypePrior::from_types(dataset.instances.iter().map(|i| i.answer_type))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub label: String,
    pub min: usize,
    /// Inclusive upper bound; `None` for the open last bin.
    pub max: Option<usize>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthHistogram {
    pub bins: Vec<HistogramBin>,
    pub total: usize,
}

/// Bin lower edges used for answer lengths: 1-5, 6-10, 11-15, 16-20, 21-25, >25.
pub const DEFAULT_LENGTH_EDGES: [usize; 5] = [6, 11, 16, 21, 26];

/// Histogram of answer token lengths. `edges` are the lower bounds of the
/// second and later bins; the first bin starts at 1 and the last is open.
pub fn compute_length_histogram(dataset: &QADataset, edges: &[usize]) -> Result<LengthHistogram, DatasetError> {
    if edges.first().is_some_and(|&e| e < 2) || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(DatasetError::BadBinEdges);
    }
    let mut bins: Vec<HistogramBin> = Vec::with_capacity(edges.len() + 1);
    let mut lo = 1;
    for &e in edges {
        bins.push(HistogramBin {
            label: if lo == e - 1 {
                lo.to_string()
            } else {
                format!("{}-{}", lo, e - 1)
            },
            min: lo,
            max: Some(e - 1),
            count: 0,
        });
        lo = e;
    }
    bins.push(HistogramBin {
        label: format!(">{}", lo - 1),
        min: lo,
        max: None,
        count: 0,
    });
    for inst in &dataset.instances {
        let len = inst.answer_len();
        let idx = edges.partition_point(|&e| e <= len);
        bins[idx].count += 1;
    }
    Ok(LengthHistogram {
        bins,
        total: dataset.len(),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitStrategy {
    #[default]
    Uniform,
    /// The initial sample keeps the answer-type proportions of the dataset.
    Stratified,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub initial_size: usize,
    pub filter_parts: usize,
    pub seed: u64,
    #[serde(default)]
    pub strategy: SplitStrategy,
}

impl Default for SplitPlan {
    fn default() -> Self {
        SplitPlan {
            initial_size: 300_000,
            filter_parts: 6,
            seed: 42,
            strategy: SplitStrategy::Uniform,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub initial: QADataset,
    pub parts: Vec<QADataset>,
}

/// Sizes of `n` near-equal parts of `total` items; earlier parts take the remainder.
pub fn part_sizes(total: usize, n: usize) -> Vec<usize> {
    (0..n).map(|i| total / n + usize::from(i < total % n)).collect()
}

pub fn split_dataset(dataset: &QADataset, plan: &SplitPlan) -> Result<DatasetSplit, DatasetError> {
    if plan.filter_parts == 0 {
        return Err(DatasetError::NoFilterParts);
    }
    if plan.initial_size > dataset.len() {
        return Err(DatasetError::InitialSizeTooLarge {
            initial: plan.initial_size,
            size: dataset.len(),
        });
    }
    let mut rng = rng::stream(plan.seed, "split");
    let (initial_idx, rest_idx) = match plan.strategy {
        SplitStrategy::Uniform => {
            let mut order: Vec<usize> = (0..dataset.len()).collect();
            order.shuffle(&mut rng);
            let rest = order.split_off(plan.initial_size);
            (order, rest)
        }
        SplitStrategy::Stratified => stratified_indices(dataset, plan.initial_size, &mut rng),
    };

    let pick = |idx: &[usize]| -> Vec<QAInstance> { idx.iter().map(|&i| dataset.instances[i].clone()).collect() };
    let mut parts = Vec::with_capacity(plan.filter_parts);
    let mut cursor = 0;
    for size in part_sizes(rest_idx.len(), plan.filter_parts) {
        parts.push(dataset.with_instances(pick(&rest_idx[cursor..cursor + size])));
        cursor += size;
    }
    Ok(DatasetSplit {
        initial: dataset.with_instances(pick(&initial_idx)),
        parts,
    })
}

fn stratified_indices(dataset: &QADataset, initial_size: usize, rng: &mut impl Rng) -> (Vec<usize>, Vec<usize>) {
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); AnswerType::ALL.len()];
    for (i, inst) in dataset.instances.iter().enumerate() {
        groups[inst.answer_type.index()].push(i);
    }
    let n = dataset.len().max(1);
    // Largest-remainder allocation of the initial sample across types.
    let mut quotas: Vec<usize> = groups.iter().map(|g| initial_size * g.len() / n).collect();
    let mut order: Vec<usize> = (0..groups.len()).collect();
    order.sort_by_key(|&t| std::cmp::Reverse((initial_size * groups[t].len()) % n));
    let mut missing = initial_size - quotas.iter().sum::<usize>();
    for t in order.into_iter().cycle().take(groups.len() * 2) {
        if missing == 0 {
            break;
        }
        if quotas[t] < groups[t].len() {
            quotas[t] += 1;
            missing -= 1;
        }
    }
    let mut initial = Vec::with_capacity(initial_size);
    let mut rest = Vec::new();
    for (g, quota) in groups.iter_mut().zip(quotas) {
        g.shuffle(rng);
        initial.extend_from_slice(&g[..quota]);
        rest.extend_from_slice(&g[quota..]);
    }
    initial.shuffle(rng);
    rest.shuffle(rng);
    (initial, rest)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SquadAnswer {
    pub text: String,
    pub answer_start: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceMeta {
    pub pseudo_ner_label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<AnswerOrigin>,
}

/// One line of the exchange format. `meta` is optional and carries what the
/// plain SQuAD fields cannot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SquadRecord {
    pub id: String,
    pub context: String,
    pub question: String,
    pub answers: Vec<SquadAnswer>,
    pub answer_type: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<InstanceMeta>,
}

/// Character (Unicode scalar) offset of token `index` in the single-space join.
pub fn char_offset(tokens: &[String], index: usize) -> usize {
    tokens[..index].iter().map(|t| t.chars().count() + 1).sum()
}

impl SquadRecord {
    pub fn from_instance(inst: &QAInstance, with_meta: bool) -> Self {
        SquadRecord {
            id: inst.id.clone(),
            context: inst.context_text(),
            question: inst.question_text(),
            answers: vec![SquadAnswer {
                text: inst.answer_text.clone(),
                answer_start: char_offset(&inst.context, inst.answer_start),
            }],
            answer_type: inst.answer_type.to_string(),
            meta: with_meta.then(|| InstanceMeta {
                pseudo_ner_label: inst.pseudo_ner_label.clone(),
                origin: inst.origin.clone(),
            }),
        }
    }

    pub fn into_instance(self) -> Result<QAInstance, String> {
        let context: Vec<String> = self.context.split(' ').map(str::to_string).collect();
        let question: Vec<String> = if self.question.is_empty() {
            Vec::new()
        } else {
            self.question.split(' ').map(str::to_string).collect()
        };
        let answer = self.answers.first().ok_or("record has no answers")?;
        let answer_start = (0..context.len())
            .find(|&i| char_offset(&context, i) == answer.answer_start)
            .ok_or_else(|| format!("answer_start {} is not on a token boundary", answer.answer_start))?;
        let answer_len = answer.text.split(' ').count();
        let answer_end = answer_start + answer_len;
        if answer.text.is_empty()
            || answer_end > context.len()
            || context[answer_start..answer_end].join(" ") != answer.text
        {
            return Err(format!(
                "answer text {:?} does not match the context at {}",
                answer.text, answer.answer_start
            ));
        }
        let answer_type: AnswerType = self.answer_type.parse().map_err(|e| format!("{e}"))?;
        let (pseudo_ner_label, origin) = match self.meta {
            Some(m) => (m.pseudo_ner_label, m.origin),
            None => (String::new(), None),
        };
        Ok(QAInstance {
            id: self.id,
            context,
            question,
            answer_start,
            answer_end,
            answer_text: answer.text.clone(),
            answer_type,
            pseudo_ner_label,
            origin,
        })
    }
}

pub fn export_squad<W: Write>(dataset: &QADataset, mut sink: W, with_meta: bool) -> io::Result<()> {
    for inst in &dataset.instances {
        let record = SquadRecord::from_instance(inst, with_meta);
        serde_json::to_writer(&mut sink, &record)?;
        sink.write_all(b"\n")?;
    }
    sink.flush()
}

pub fn import_squad<R: BufRead>(source: R) -> Result<QADataset, DatasetError> {
    let mut instances = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| DatasetError::MalformedRecord { line: i + 1, message };
        let record: SquadRecord = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        instances.push(record.into_instance().map_err(malformed)?);
    }
    Ok(QADataset::from_instances(instances))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CorpusRecord, NerSpan};
    use crate::samples::estill_sentence;
    use crate::tree::parse_bracketed_tree;

    fn estill_dataset(mode: BuildMode) -> QADataset {
        let s = estill_sentence();
        build_from_sentences(&[s], &ExtensionConfig::default(), &BuildOptions { mode, seed: 1 }, "h")
    }

    fn dummy(n: usize, t: AnswerType) -> QAInstance {
        QAInstance {
            id: format!("i{n}"),
            context: vec!["a".into(), "b".into()],
            question: vec!["What".into()],
            answer_start: 0,
            answer_end: 1,
            answer_text: "a".into(),
            answer_type: t,
            pseudo_ner_label: "ORG".into(),
            origin: None,
        }
    }

    fn dummies(n: usize) -> QADataset {
        QADataset::from_instances((0..n).map(|i| dummy(i, AnswerType::NE)).collect())
    }

    #[test]
    fn estill_build() {
        let d = estill_dataset(BuildMode::Diverse);
        assert_eq!(d.len(), 1);
        let inst = &d.instances[0];
        assert_eq!(inst.answer_text, "is located in the southern half of Hampton County");
        assert_eq!(inst.question_text(), "Where the Town of Estill");
        assert_eq!(inst.answer_type, AnswerType::VP);
        assert_eq!(d.provenance.omega_percent, Some(80.0));
    }

    #[test]
    fn ne_only_mode() {
        let d = estill_dataset(BuildMode::NeOnly);
        assert_eq!(d.instances[0].answer_text, "Hampton County");
        assert_eq!(d.instances[0].answer_type, AnswerType::NE);
        let prior = compute_type_distribution(&d).unwrap();
        assert_eq!(prior.frequency(AnswerType::NE), 1.0);
    }

    #[test]
    fn no_nes_means_empty() {
        let mut s = estill_sentence();
        s.ner_spans.clear();
        let d = build_from_sentences(&[s], &ExtensionConfig::default(), &BuildOptions::default(), "");
        assert!(d.is_empty());
        assert!(matches!(compute_type_distribution(&d), Err(DatasetError::EmptyDataset)));
    }

    #[test]
    fn duplicates_removed() {
        let s = estill_sentence();
        let d = build_from_sentences(
            &[s.clone(), s],
            &ExtensionConfig::default(),
            &BuildOptions::default(),
            "",
        );
        // Both sentences share a passage id, so they form one two-sentence
        // passage and the two answers sit at different offsets.
        assert_eq!(d.len(), 2);
        assert_eq!(d.instances[1].answer_start, 14 + 4);

        // Three single-sentence passages with identical triples.
        let mut a = estill_sentence();
        let mut b = estill_sentence();
        a.passage = Some("p1".into());
        b.passage = Some("p2".into());
        let mid = estill_sentence();
        let d = build_from_sentences(
            &[a.clone(), mid, b],
            &ExtensionConfig::default(),
            &BuildOptions::default(),
            "",
        );
        assert_eq!(d.len(), 1);

        // Same passage id and NE span but a different question: the id is disambiguated.
        let mut c = a.clone();
        c.ner_spans[0].label = "ORG".into();
        let mut other = estill_sentence();
        other.passage = Some("p2".into());
        let d = build_from_sentences(
            &[a, other, c],
            &ExtensionConfig::default(),
            &BuildOptions::default(),
            "",
        );
        assert_eq!(d.len(), 2);
        assert_eq!(d.instances[1].id, format!("{}-1", d.instances[0].id));
    }

    #[test]
    fn passage_grouping() {
        let mut a = estill_sentence();
        a.passage = Some("doc".into());
        let mut b = a.clone();
        b.id = "estill-1".into();
        let c = estill_sentence();
        let sentences = [a, b, c];
        let groups = passages(&sentences);
        assert_eq!(groups.iter().map(|g| g.len()).collect::<Vec<_>>(), vec![2, 1]);
    }

    #[test]
    fn build_from_stream() {
        let line = serde_json::to_string(&CorpusRecord::from(&estill_sentence())).unwrap();
        let text = format!("{line}\nnot json\n");
        let (d, report) =
            build_dataset(text.as_bytes(), &ExtensionConfig::default(), &BuildOptions::default()).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(report.skipped_lines(), vec![2]);
        assert_eq!(d.provenance.corpus_hash.len(), 64);
        let (d2, _) = build_dataset(text.as_bytes(), &ExtensionConfig::default(), &BuildOptions::default()).unwrap();
        assert_eq!(d, d2);
    }

    #[test]
    fn windows_estill() {
        assert_eq!(covering_windows((0, 14), (11, 13), 9), vec![4, 5]);
        assert_eq!(covering_windows((0, 14), (11, 13), 2), vec![11]);
        assert_eq!(covering_windows((0, 14), (11, 13), 14), vec![0]);
        assert_eq!(covering_windows((0, 14), (11, 13), 15), Vec::<usize>::new());
        assert_eq!(covering_windows((0, 14), (11, 13), 1), Vec::<usize>::new());
    }

    #[test]
    fn random_extension_estill() {
        let d = estill_dataset(BuildMode::Diverse);
        let mut starts = HashSet::new();
        for seed in 0..64 {
            let r = random_extension_dataset(&d, seed);
            let inst = &r.instances[0];
            assert_eq!(inst.answer_len(), 9);
            assert!(inst.answer_start == 4 || inst.answer_start == 5);
            assert!(inst.is_consistent());
            assert_eq!(r.provenance.mode, BuildMode::Random);
            starts.insert(inst.answer_start);
            if inst.answer_start == 5 {
                assert_eq!(inst.answer_text, "located in the southern half of Hampton County .");
                assert_eq!(inst.question_text(), "Where the Town of Estill is");
            }
        }
        assert_eq!(starts.len(), 2);
        assert_eq!(random_extension_dataset(&d, 3), random_extension_dataset(&d, 3));
    }

    #[test]
    fn random_extension_degenerate_lengths() {
        let d = estill_dataset(BuildMode::NeOnly);
        let r = random_extension_dataset(&d, 9);
        assert_eq!((r.instances[0].answer_start, r.instances[0].answer_end), (11, 13));

        let tree = parse_bracketed_tree("(S (NP (NNP Hampton) (NNP County)))").unwrap();
        let s = AnnotatedSentence {
            id: "w".into(),
            passage: None,
            tokens: vec!["Hampton".into(), "County".into()],
            ner_spans: vec![NerSpan::new(0, 2, "GPE")],
            tree,
        };
        let d = build_from_sentences(&[s], &ExtensionConfig::default(), &BuildOptions::default(), "");
        let r = random_extension_dataset(&d, 9);
        assert_eq!((r.instances[0].answer_start, r.instances[0].answer_end), (0, 2));
    }

    #[test]
    fn type_distribution_single() {
        let d = QADataset::from_instances(vec![dummy(0, AnswerType::NE)]);
        let p = compute_type_distribution(&d).unwrap();
        assert_eq!(p.frequency_vector(), [1.0, 0.0, 0.0, 0.0, 0.0]);
        let s = p.add_one_smoothed();
        assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((s[0] - 2.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn histogram_bins() {
        let mut d = dummies(4);
        d.instances[3].context = vec!["x".into(); 40];
        d.instances[3].answer_end = 30;
        let h = compute_length_histogram(&d, &[6, 11]).unwrap();
        assert_eq!(
            h.bins.iter().map(|b| b.label.as_str()).collect::<Vec<_>>(),
            ["1-5", "6-10", ">10"]
        );
        assert_eq!(h.bins.iter().map(|b| b.count).collect::<Vec<_>>(), [3, 0, 1]);
        let h = compute_length_histogram(&d, &DEFAULT_LENGTH_EDGES).unwrap();
        assert_eq!(h.bins.last().unwrap().label, ">25");
        assert_eq!(h.bins.iter().map(|b| b.count).sum::<usize>(), 4);
        assert!(compute_length_histogram(&d, &[6, 6]).is_err());
        assert!(compute_length_histogram(&d, &[1]).is_err());
    }

    #[test]
    fn split_sizes() {
        let plan = |initial, parts| SplitPlan {
            initial_size: initial,
            filter_parts: parts,
            seed: 5,
            strategy: SplitStrategy::Uniform,
        };
        let s = split_dataset(&dummies(9), &plan(3, 3)).unwrap();
        assert_eq!(s.parts.iter().map(|p| p.len()).collect::<Vec<_>>(), [2, 2, 2]);
        let s = split_dataset(&dummies(10), &plan(3, 3)).unwrap();
        assert_eq!(s.initial.len(), 3);
        assert_eq!(s.parts.iter().map(|p| p.len()).collect::<Vec<_>>(), [3, 2, 2]);
        assert!(matches!(
            split_dataset(&dummies(2), &plan(3, 3)),
            Err(DatasetError::InitialSizeTooLarge { .. })
        ));
        assert!(split_dataset(&dummies(2), &plan(1, 0)).is_err());
        assert_eq!(part_sizes(600_000, 6), vec![100_000; 6]);
    }

    #[test]
    fn stratified_split_keeps_proportions() {
        let mut instances = Vec::new();
        for i in 0..80 {
            instances.push(dummy(i, AnswerType::NE));
        }
        for i in 80..100 {
            instances.push(dummy(i, AnswerType::VP));
        }
        let d = QADataset::from_instances(instances);
        let plan = SplitPlan {
            initial_size: 10,
            filter_parts: 2,
            seed: 1,
            strategy: SplitStrategy::Stratified,
        };
        let s = split_dataset(&d, &plan).unwrap();
        let vp = s
            .initial
            .instances
            .iter()
            .filter(|i| i.answer_type == AnswerType::VP)
            .count();
        assert_eq!(vp, 2);
        assert_eq!(s.initial.len(), 10);
        let total: usize = s.parts.iter().map(|p| p.len()).sum();
        assert_eq!(total, 90);
    }

    #[test]
    fn squad_estill_offsets() {
        let d = estill_dataset(BuildMode::Diverse);
        let rec = SquadRecord::from_instance(&d.instances[0], false);
        let expected = rec.context.find("is located").unwrap();
        assert_eq!(rec.answers[0].answer_start, expected);
        assert_eq!(
            &rec.context[expected..expected + rec.answers[0].text.len()],
            rec.answers[0].text
        );
        assert!(rec.meta.is_none());
    }

    #[test]
    fn squad_round_trip_and_empty() {
        let d = estill_dataset(BuildMode::Diverse);
        let mut buf = Vec::new();
        export_squad(&d, &mut buf, true).unwrap();
        let back = import_squad(&buf[..]).unwrap();
        assert_eq!(back.instances, d.instances);

        let mut buf = Vec::new();
        export_squad(&QADataset::from_instances(vec![]), &mut buf, true).unwrap();
        assert!(buf.is_empty());
        assert!(import_squad(&buf[..]).unwrap().is_empty());
    }

    #[test]
    fn squad_import_errors() {
        let bad_offset = r#"{"id":"a","context":"x y z","question":"What","answers":[{"text":"y","answer_start":1}],"answer_type":"NE"}"#;
        assert!(matches!(
            import_squad(bad_offset.as_bytes()),
            Err(DatasetError::MalformedRecord { line: 1, .. })
        ));
        let bad_type = r#"{"id":"a","context":"x y z","question":"What","answers":[{"text":"y","answer_start":2}],"answer_type":"PP"}"#;
        assert!(import_squad(bad_type.as_bytes()).is_err());
        let ok = r#"{"id":"a","context":"x y z","question":"What","answers":[{"text":"y z","answer_start":2}],"answer_type":"NP"}"#;
        let d = import_squad(ok.as_bytes()).unwrap();
        assert_eq!((d.instances[0].answer_start, d.instances[0].answer_end), (1, 3));
    }

    #[test]
    fn unicode_offsets_count_chars() {
        let tokens: Vec<String> = ["Zürich", "is", "big"].iter().map(|s| s.to_string()).collect();
        assert_eq!(char_offset(&tokens, 1), 7);
    }
}
