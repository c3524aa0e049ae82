//! The toy model as a [`ModelAdapter`] for the filter loop.
//!
//! Tokens are hashed into the vocabulary. A sequence is
//! `[CLS] question [SEP] context [END]`, truncated to `max_seq_len`.

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use spanqa_core::dataset::{compute_type_distribution, QADataset};
use spanqa_core::filter::{ModelAdapter, NBestEntry, PredictionRecord};
use spanqa_core::question::QAInstance;

use crate::checkpoint::Checkpoint;
use crate::model::{forward_plain, ClassPriors, ParamStore, ToyBatch, ToyExample, ToyModelConfig};
use crate::toy::{CLS, END, SEP};
use crate::train::{train_steps, TrainSettings};
use crate::AugmentError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdapterConfig {
    pub model: ToyModelConfig,
    pub max_seq_len: usize,
    pub max_answer_len: usize,
    pub nbest: usize,
    /// Descent steps per fine-tune call.
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub clip_norm: Option<f64>,
    /// Add-one smoothing of answer-type priors estimated from the data.
    pub smooth_priors: bool,
    /// Where `checkpoint` writes; nothing is written when unset.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        AdapterConfig {
            model: ToyModelConfig {
                vocab_size: 512,
                ..ToyModelConfig::default()
            },
            max_seq_len: 64,
            max_answer_len: 30,
            nbest: 10,
            steps: 40,
            batch_size: 16,
            lr: 0.05,
            clip_norm: Some(5.0),
            smooth_priors: true,
            checkpoint_dir: None,
        }
    }
}

pub struct ToyAdapter {
    config: AdapterConfig,
    params: ParamStore<f64>,
    rng: ChaCha8Rng,
}

/// Vocabulary id of a word; ids below 3 are the special tokens.
pub fn token_id(word: &str, vocab_size: usize) -> usize {
    let digest = Sha256::digest(word.to_lowercase().as_bytes());
    let mut b = [0u8; 8];
    b.copy_from_slice(&digest[..8]);
    3 + (u64::from_le_bytes(b) % (vocab_size as u64 - 3)) as usize
}

impl ToyAdapter {
    pub fn new(config: AdapterConfig) -> Result<Self, AugmentError> {
        let params = ParamStore::init(&config.model)?;
        Self::with_params(config, params)
    }

    pub fn with_params(config: AdapterConfig, params: ParamStore<f64>) -> Result<Self, AugmentError> {
        config.model.validate()?;
        if config.model.vocab_size <= 3 {
            return Err(AugmentError::InvalidConfig(
                "vocab_size must exceed the 3 special tokens".into(),
            ));
        }
        if config.max_seq_len < 5 || config.max_answer_len == 0 || config.nbest == 0 || config.batch_size == 0 {
            return Err(AugmentError::InvalidConfig(
                "max_seq_len >= 5 and max_answer_len, nbest, batch_size > 0 are required".into(),
            ));
        }
        let rng = spanqa_core::rng::stream(config.model.seed, "toy-adapter");
        Ok(ToyAdapter { config, params, rng })
    }

    /// Restores a model written by [`ModelAdapter::checkpoint`]. The
    /// checkpoint's model config replaces the one in `config`.
    pub fn from_checkpoint(mut config: AdapterConfig, ck: &Checkpoint) -> Result<Self, AugmentError> {
        config.model = ck.config.clone();
        let params = ck.params()?;
        Self::with_params(config, params)
    }

    pub fn config(&self) -> &AdapterConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<f64> {
        &self.params
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(&self.config.model, &self.params)
    }

    /// Encodes an instance; also returns where the context starts and how
    /// many context tokens survived truncation.
    pub fn encode(&self, inst: &QAInstance) -> (Vec<usize>, usize, usize) {
        let v = self.config.model.vocab_size;
        let room = self.config.max_seq_len - 3;
        let q_len = inst.question.len().min(room / 2);
        let c_len = inst.context.len().min(room - q_len);
        let mut ids = vec![CLS];
        ids.extend(inst.question[..q_len].iter().map(|w| token_id(w, v)));
        ids.push(SEP);
        let offset = ids.len();
        ids.extend(inst.context[..c_len].iter().map(|w| token_id(w, v)));
        ids.push(END);
        (ids, offset, c_len)
    }

    fn example(&self, inst: &QAInstance) -> Option<ToyExample> {
        let (tokens, offset, c_len) = self.encode(inst);
        if c_len == 0 || inst.answer_end > c_len || inst.answer_start >= inst.answer_end {
            return None;
        }
        Some(ToyExample {
            tokens,
            context: (offset, offset + c_len - 1),
            answer_start: offset + inst.answer_start,
            answer_end: offset + inst.answer_end - 1,
            label: inst.answer_type.index(),
        })
    }

    fn predict_one(&self, inst: &QAInstance) -> Result<PredictionRecord, AugmentError> {
        let (tokens, offset, c_len) = self.encode(inst);
        if c_len == 0 {
            return Ok(PredictionRecord {
                instance_id: inst.id.clone(),
                nbest: vec![],
            });
        }
        let ex = ToyExample {
            tokens,
            context: (offset, offset + c_len - 1),
            answer_start: offset,
            answer_end: offset,
            label: 0,
        };
        let (ps, pe) = forward_plain(&self.config.model, &self.params, &ex)?;
        // Renormalize both heads over the context positions.
        let zs: f64 = ps[offset..offset + c_len].iter().sum();
        let ze: f64 = pe[offset..offset + c_len].iter().sum();
        let mut spans = Vec::new();
        for i in 0..c_len {
            for j in i..c_len.min(i + self.config.max_answer_len) {
                let p = (ps[offset + i] / zs) * (pe[offset + j] / ze);
                spans.push((p.clamp(0.0, 1.0), i, j + 1));
            }
        }
        spans.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        spans.truncate(self.config.nbest);
        Ok(PredictionRecord {
            instance_id: inst.id.clone(),
            nbest: spans
                .into_iter()
                .map(|(prob, start, end)| NBestEntry {
                    text: inst.context[start..end].join(" "),
                    start,
                    end,
                    prob,
                })
                .collect(),
        })
    }

    pub fn fine_tune_dataset(&mut self, data: &QADataset) -> Result<usize, AugmentError> {
        let examples: Vec<ToyExample> = data.instances.iter().filter_map(|i| self.example(i)).collect();
        if examples.is_empty() {
            return Ok(0);
        }
        let dist = compute_type_distribution(data).map_err(|e| AugmentError::InvalidConfig(e.to_string()))?;
        let priors = ClassPriors::from_answer_types(&dist, self.config.smooth_priors)?;
        for _ in 0..self.config.steps {
            let n = self.config.batch_size.min(examples.len());
            let batch = ToyBatch::new(examples.choose_multiple(&mut self.rng, n).cloned().collect());
            let settings = TrainSettings {
                steps: 1,
                lr: self.config.lr,
                disc_lr: None,
                seed: self.rng.gen(),
                clip_norm: self.config.clip_norm,
            };
            train_steps(&self.config.model, &mut self.params, &batch, &priors, &settings)?;
        }
        Ok(examples.len())
    }

    pub fn predict_dataset(&self, data: &QADataset) -> Result<Vec<PredictionRecord>, AugmentError> {
        data.instances.iter().map(|i| self.predict_one(i)).collect()
    }
}

impl ModelAdapter for ToyAdapter {
    fn fine_tune(&mut self, instances: &QADataset) -> Result<(), String> {
        self.fine_tune_dataset(instances).map(|_| ()).map_err(|e| e.to_string())
    }

    fn predict(&mut self, instances: &QADataset) -> Result<Vec<PredictionRecord>, String> {
        self.predict_dataset(instances).map_err(|e| e.to_string())
    }

    fn checkpoint(&mut self, label: &str) -> Result<Option<String>, String> {
        let Some(dir) = &self.config.checkpoint_dir else {
            return Ok(None);
        };
        std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
        let path = dir.join(format!("{label}.json"));
        let file = std::fs::File::create(&path).map_err(|e| e.to_string())?;
        self.to_checkpoint()
            .write(std::io::BufWriter::new(file))
            .map_err(|e| e.to_string())?;
        Ok(Some(path.display().to_string()))
    }
}
