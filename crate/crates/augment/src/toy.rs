//! A small separable task for checking that training moves in the right
//! direction.
//!
//! Every example is `[CLS] q q [SEP] c c c c c c c [END]`. The first question
//! token names the answer type, the answer is one or two type-specific tokens
//! somewhere in the context, and everything else is filler. The embeddings of
//! the type-specific tokens start out shifted along one direction per type.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use serde::Serialize;

use crate::model::{
    adjusting_vectors, discriminator_accuracy, ClassPriors, Noise, ParamId, ParamStore, ToyBatch, ToyExample,
    ToyModelConfig,
};
use crate::tensor::Scalar;
use crate::train::{train_steps, LossTrace, TrainSettings};
use crate::AugmentError;

pub const CLS: usize = 0;
pub const SEP: usize = 1;
pub const END: usize = 2;
pub const QUESTION_LEN: usize = 2;
pub const CONTEXT_LEN: usize = 7;
pub const FILLER: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyTask {
    pub config: ToyModelConfig,
    pub train: ToyBatch,
    pub held_out: ToyBatch,
}

pub fn question_token(label: usize) -> usize {
    3 + label
}

pub fn answer_token(label: usize, num_types: usize) -> usize {
    3 + num_types + label
}

fn filler_token(k: usize, num_types: usize) -> usize {
    3 + 2 * num_types + k
}

/// Vocabulary size the task needs for `num_types` types.
pub fn vocab_size(num_types: usize) -> usize {
    3 + 2 * num_types + FILLER
}

fn example<R: Rng>(rng: &mut R, label: usize, num_types: usize) -> ToyExample {
    let c0 = 2 + QUESTION_LEN;
    let c1 = c0 + CONTEXT_LEN - 1;
    let mut tokens = vec![CLS, question_token(label)];
    tokens.push(filler_token(rng.gen_range(0..FILLER), num_types));
    tokens.push(SEP);
    for _ in 0..CONTEXT_LEN {
        tokens.push(filler_token(rng.gen_range(0..FILLER), num_types));
    }
    tokens.push(END);
    let len = rng.gen_range(1..=2);
    let start = rng.gen_range(c0..=c1 + 1 - len);
    let end = start + len - 1;
    for t in &mut tokens[start..=end] {
        *t = answer_token(label, num_types);
    }
    ToyExample {
        tokens,
        context: (c0, c1),
        answer_start: start,
        answer_end: end,
        label,
    }
}

impl ToyTask {
    /// `n` training and `n` held-out examples with labels cycling over the
    /// types, so the classes are balanced.
    pub fn separable(n: usize, seed: u64) -> Result<ToyTask, AugmentError> {
        let num_types = 5;
        let config = ToyModelConfig {
            vocab_size: vocab_size(num_types),
            num_types,
            seed,
            ..ToyModelConfig::default()
        };
        config.validate()?;
        let mut rng = spanqa_core::rng::stream(seed, "toy-task");
        let train = ToyBatch::new((0..n).map(|i| example(&mut rng, i % num_types, num_types)).collect());
        let held_out = ToyBatch::new((0..n).map(|i| example(&mut rng, i % num_types, num_types)).collect());
        Ok(ToyTask {
            config,
            train,
            held_out,
        })
    }

    /// Total number of positions in the sequences (P).
    pub fn seq_len(&self) -> usize {
        2 + QUESTION_LEN + CONTEXT_LEN + 1
    }

    /// Shifts the embeddings of each type's question and answer tokens by
    /// `strength` along a random unit direction for that type.
    pub fn plant_directions<T: Scalar>(&self, params: &mut ParamStore<T>, strength: f64) {
        let cfg = &self.config;
        let mut rng = spanqa_core::rng::stream(cfg.seed, "toy-directions");
        for l in 0..cfg.num_types {
            let mut u: Vec<f64> = (0..cfg.d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
            u.iter_mut().for_each(|v| *v *= strength / norm);
            let table = params.get_mut(ParamId::Embedding);
            for tok in [question_token(l), answer_token(l, cfg.num_types)] {
                for (c, &uc) in u.iter().enumerate() {
                    let v = table.get(tok, c) + T::of(uc);
                    table.set(tok, c, v);
                }
            }
        }
    }
}

/// Outcome of training on the separable task.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToySignal {
    pub initial_total: f64,
    pub final_total: f64,
    /// `1 - final / initial`.
    pub loss_reduction: f64,
    /// Discriminator accuracy over all held-out positions, z sampled.
    pub held_out_accuracy: f64,
    pub chance: f64,
    #[serde(skip)]
    pub trace: LossTrace,
}

/// Plants the type directions, trains with uniform priors and evaluates
/// the discriminator on held-out sequences.
pub fn train_separable(
    task: &ToyTask,
    settings: &TrainSettings,
    plant_strength: f64,
) -> Result<(ParamStore<f64>, ToySignal), AugmentError> {
    let cfg = &task.config;
    let mut params = ParamStore::<f64>::init(cfg)?;
    task.plant_directions(&mut params, plant_strength);
    let priors = ClassPriors::uniform(cfg.num_types);
    let trace = train_steps(cfg, &mut params, &task.train, &priors, settings)?;
    let (initial_total, final_total) = match (trace.first(), trace.last()) {
        (Some(a), Some(b)) => (a.losses.total, b.losses.total),
        _ => return Err(AugmentError::InvalidConfig("training needs at least one step".into())),
    };
    let mut rng = spanqa_core::rng::stream(settings.seed, "toy-eval");
    let noise = Noise::sample(&task.held_out, cfg.d, &mut rng);
    let z = adjusting_vectors(cfg, &params, &task.held_out, Some(&noise))?;
    let held_out_accuracy = discriminator_accuracy(&params, &z, &task.held_out, &priors)?;
    let signal = ToySignal {
        initial_total,
        final_total,
        loss_reduction: 1.0 - final_total / initial_total,
        held_out_accuracy,
        chance: 1.0 / cfg.num_types as f64,
        trace,
    };
    Ok((params, signal))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_is_valid_and_balanced() {
        let task = ToyTask::separable(64, 7).unwrap();
        task.train.validate(&task.config).unwrap();
        task.held_out.validate(&task.config).unwrap();
        assert_eq!(task.train.len(), 64);
        let mut counts = [0; 5];
        for e in &task.train.examples {
            assert_eq!(e.len(), task.seq_len());
            counts[e.label] += 1;
            for p in e.answer_start..=e.answer_end {
                assert_eq!(e.tokens[p], answer_token(e.label, 5));
            }
        }
        assert!(counts.iter().all(|&c| c == 12 || c == 13));
        assert_ne!(task.train, task.held_out);
    }
}
