//! Full-batch gradient descent on the total objective.

use serde::{Deserialize, Serialize};

use crate::model::{
    loss_and_gradients, ClassPriors, DiscInput, LossBreakdown, Noise, ParamId, ParamStore, ToyBatch, ToyModelConfig,
};
use crate::tensor::Scalar;
use crate::AugmentError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSettings {
    pub steps: usize,
    pub lr: f64,
    /// Learning rate for the discriminator; `lr` when unset.
    pub disc_lr: Option<f64>,
    /// Seeds the per-step noise stream.
    pub seed: u64,
    /// Rescales the gradient when its global L2 norm exceeds this.
    pub clip_norm: Option<f64>,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            steps: 200,
            lr: 1e-2,
            disc_lr: None,
            seed: 0,
            clip_norm: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub step: usize,
    #[serde(flatten)]
    pub losses: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct LossTrace {
    pub rows: Vec<TraceRow>,
}

impl LossTrace {
    pub const CSV_HEADER: &'static str = "step,l_mle,l_adjust,kl,l_disc,total";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let l = &r.losses;
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.step, l.l_mle, l.l_adjust, l.kl, l.l_disc, l.total
            ));
        }
        out
    }

    pub fn first(&self) -> Option<&TraceRow> {
        self.rows.first()
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }
}

/// Runs `settings.steps` descent steps, logging the losses at each step
/// before its update. One backward pass on the total serves all three
/// parameter groups: θ and φ only see L_MLE + L_Adjust, and π only sees
/// L_D because the discriminator reads a detached z.
pub fn train_steps<T: Scalar>(
    cfg: &ToyModelConfig,
    params: &mut ParamStore<T>,
    batch: &ToyBatch,
    priors: &ClassPriors<T>,
    settings: &TrainSettings,
) -> Result<LossTrace, AugmentError> {
    let mut rng = spanqa_core::rng::stream(settings.seed, "train-noise");
    let lr = T::of(settings.lr);
    let disc_lr = T::of(settings.disc_lr.unwrap_or(settings.lr));
    let mut trace = LossTrace::default();
    for step in 0..settings.steps {
        let noise = Noise::sample(batch, cfg.d, &mut rng);
        let (losses, grads) = loss_and_gradients(cfg, params, batch, &noise, priors, DiscInput::Sampled)?;
        if !losses.is_finite() || !grads.all_finite() {
            return Err(AugmentError::DivergenceDetected(step));
        }
        trace.rows.push(TraceRow { step, losses });
        let scale = match settings.clip_norm {
            Some(max) => {
                let norm = grads.norm().as_f64();
                if norm > max {
                    T::of(max / norm)
                } else {
                    T::one()
                }
            }
            None => T::one(),
        };
        params.descend(&grads, |p: ParamId| {
            scale * if p.is_discriminator() { disc_lr } else { lr }
        });
        if !params.all_finite() {
            return Err(AugmentError::DivergenceDetected(step));
        }
    }
    Ok(trace)
}
