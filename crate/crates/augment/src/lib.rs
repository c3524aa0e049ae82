//! Toy-scale answer-type-dependent augmentation.
//!
//! A small QA model ([`model`]) is trained on its plain inputs and on inputs
//! multiplied element-wise by an adjusting vector z drawn from a learned
//! Gaussian. A logit-adjusted discriminator classifies z into answer types.
//! Gradients come from a reverse-mode tape ([`tape`]) and can be checked
//! against finite differences ([`gradcheck`]). Everything is generic over
//! the float type; `f64` and `f32` aliases are provided below.

pub mod adapter;
pub mod checkpoint;
pub mod gradcheck;
pub mod model;
pub mod tape;
pub mod tensor;
pub mod toy;
pub mod train;

pub use adapter::{AdapterConfig, ToyAdapter};
pub use checkpoint::Checkpoint;
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use model::{
    adjustor_forward, discriminator_forward, forward_adjusted, forward_plain, kl_to_prior, loss_adjust, loss_disc,
    loss_mle, loss_total, sample_adjusting_vector, ClassPriors, GaussianField, LossBreakdown, Noise, ParamId,
    ParamStore, ToyBatch, ToyExample, ToyModelConfig,
};
pub use tensor::{Scalar, Tensor};
pub use train::{train_steps, LossTrace, TrainSettings};

#[derive(Debug, thiserror::Error)]
pub enum AugmentError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("prior for answer type {0} is zero")]
    ZeroPrior(usize),
    #[error("graph already consumed by backward")]
    GraphReuse,
    #[error("max relative error {max_rel_err:e} exceeds tolerance {tolerance:e}")]
    ToleranceExceeded { max_rel_err: f64, tolerance: f64 },
    #[error("loss diverged at step {0}")]
    DivergenceDetected(usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Params64 = ParamStore<f64>;
pub type Params32 = ParamStore<f32>;
pub type Field64 = GaussianField<f64>;
pub type Field32 = GaussianField<f32>;
pub type Priors64 = ClassPriors<f64>;
pub type Priors32 = ClassPriors<f32>;
