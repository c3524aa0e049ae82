//! The toy QA model with an adjusting-vector branch and a discriminator.
//!
//! Sequences are laid out position-major: embeddings, hidden states, the
//! Gaussian field and the adjusting vector are all P×d (one row per position).

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::tape::{Graph, Var};
use crate::tensor::{softmax_rows, Scalar, Tensor};
use crate::AugmentError;
use spanqa_core::dataset::AnswerTypePrior;

/// Bounds applied to the adjustor's log-variance output.
pub const LOGVAR_MIN: f64 = -20.0;
pub const LOGVAR_MAX: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyModelConfig {
    pub vocab_size: usize,
    pub d: usize,
    pub hidden: usize,
    /// Number of answer types.
    #[serde(rename = "L")]
    pub num_types: usize,
    /// Special tokens per sequence.
    pub r: usize,
    /// Variance of the N(1, γI) prior on the adjusting vector.
    pub gamma_prior: f64,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
}

impl Default for ToyModelConfig {
    fn default() -> Self {
        ToyModelConfig {
            vocab_size: 32,
            d: 8,
            hidden: 16,
            num_types: 5,
            r: 3,
            gamma_prior: 1.0,
            alpha: 1.0,
            beta: 1.0,
            seed: 0,
        }
    }
}

impl ToyModelConfig {
    pub fn validate(&self) -> Result<(), AugmentError> {
        let bad = |m: &str| Err(AugmentError::InvalidConfig(m.to_string()));
        if self.d < 1 || self.hidden < 1 || self.vocab_size < 1 {
            return bad("vocab_size, d and hidden must be at least 1");
        }
        if self.num_types < 2 {
            return bad("L must be at least 2");
        }
        if self.gamma_prior.is_nan() || self.gamma_prior <= 0.0 || self.gamma_prior.is_infinite() {
            return bad("gamma_prior must be positive");
        }
        if self.alpha.is_nan() || self.beta.is_nan() || self.alpha < 0.0 || self.beta < 0.0 {
            return bad("alpha and beta must be non-negative");
        }
        Ok(())
    }
}

/// Parameter slots. θ = embedding, encoder and QA heads; φ = adjustor; π = discriminator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamId {
    Embedding,
    EncW1,
    EncB1,
    EncW2,
    EncB2,
    StartW,
    EndW,
    AdjMuW,
    AdjMuB,
    AdjLvW,
    AdjLvB,
    DiscW,
    DiscB,
}

impl ParamId {
    pub const ALL: [ParamId; 13] = [
        ParamId::Embedding,
        ParamId::EncW1,
        ParamId::EncB1,
        ParamId::EncW2,
        ParamId::EncB2,
        ParamId::StartW,
        ParamId::EndW,
        ParamId::AdjMuW,
        ParamId::AdjMuB,
        ParamId::AdjLvW,
        ParamId::AdjLvB,
        ParamId::DiscW,
        ParamId::DiscB,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ParamId::Embedding => "embedding",
            ParamId::EncW1 => "enc_w1",
            ParamId::EncB1 => "enc_b1",
            ParamId::EncW2 => "enc_w2",
            ParamId::EncB2 => "enc_b2",
            ParamId::StartW => "start_w",
            ParamId::EndW => "end_w",
            ParamId::AdjMuW => "adj_mu_w",
            ParamId::AdjMuB => "adj_mu_b",
            ParamId::AdjLvW => "adj_logvar_w",
            ParamId::AdjLvB => "adj_logvar_b",
            ParamId::DiscW => "disc_w",
            ParamId::DiscB => "disc_b",
        }
    }

    pub fn from_name(name: &str) -> Option<ParamId> {
        ParamId::ALL.into_iter().find(|p| p.name() == name)
    }

    pub fn is_discriminator(self) -> bool {
        matches!(self, ParamId::DiscW | ParamId::DiscB)
    }

    pub fn shape(self, cfg: &ToyModelConfig) -> (usize, usize) {
        let (d, h, l) = (cfg.d, cfg.hidden, cfg.num_types);
        match self {
            ParamId::Embedding => (cfg.vocab_size, d),
            ParamId::EncW1 => (d, h),
            ParamId::EncB1 | ParamId::EncB2 => (1, h),
            ParamId::EncW2 => (h, h),
            ParamId::StartW | ParamId::EndW => (2 * h, 1),
            ParamId::AdjMuW | ParamId::AdjLvW => (2 * h, d),
            ParamId::AdjMuB | ParamId::AdjLvB => (1, d),
            ParamId::DiscW => (d, l),
            ParamId::DiscB => (1, l),
        }
    }
}

/// One tensor per [`ParamId`]. Also used as the gradient store.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    tensors: Vec<Tensor<T>>,
}

pub type ToyModelParams<T> = ParamStore<T>;
pub type Gradients<T> = ParamStore<T>;

impl<T: Scalar> ParamStore<T> {
    pub fn zeros(cfg: &ToyModelConfig) -> Self {
        ParamStore {
            tensors: ParamId::ALL
                .iter()
                .map(|p| {
                    let (r, c) = p.shape(cfg);
                    Tensor::zeros(r, c)
                })
                .collect(),
        }
    }

    /// Seeded initialization: scaled normal weights, adjustor mean bias 1 and
    /// log-variance bias 0 so that z starts near the prior N(1, I).
    pub fn init(cfg: &ToyModelConfig) -> Result<Self, AugmentError> {
        cfg.validate()?;
        let mut rng = spanqa_core::rng::stream(cfg.seed, "toy-init");
        let mut store = Self::zeros(cfg);
        for p in ParamId::ALL {
            let (rows, cols) = p.shape(cfg);
            let scale = match p {
                ParamId::Embedding => 1.0,
                ParamId::EncB1 | ParamId::EncB2 | ParamId::DiscB | ParamId::AdjLvB => 0.0,
                ParamId::AdjMuB => 0.0,
                ParamId::AdjMuW | ParamId::AdjLvW => 0.1 / (rows as f64).sqrt(),
                _ => 1.0 / (rows as f64).sqrt(),
            };
            let t = store.get_mut(p);
            for v in t.data_mut() {
                let n: f64 = StandardNormal.sample(&mut rng);
                *v = T::of(n * scale);
            }
            debug_assert_eq!(t.shape(), (rows, cols));
        }
        for v in store.get_mut(ParamId::AdjMuB).data_mut() {
            *v = T::one();
        }
        Ok(store)
    }

    pub fn from_tensors(cfg: &ToyModelConfig, tensors: Vec<Tensor<T>>) -> Result<Self, AugmentError> {
        if tensors.len() != ParamId::ALL.len() {
            return Err(AugmentError::ShapeMismatch(format!(
                "expected {} parameter tensors, got {}",
                ParamId::ALL.len(),
                tensors.len()
            )));
        }
        for (p, t) in ParamId::ALL.iter().zip(&tensors) {
            if t.shape() != p.shape(cfg) {
                return Err(AugmentError::ShapeMismatch(format!(
                    "{} is {:?}, config needs {:?}",
                    p.name(),
                    t.shape(),
                    p.shape(cfg)
                )));
            }
        }
        Ok(ParamStore { tensors })
    }

    pub fn get(&self, p: ParamId) -> &Tensor<T> {
        &self.tensors[p.index()]
    }

    pub fn get_mut(&mut self, p: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[p.index()]
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.tensors.iter().map(Tensor::shape).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    /// Global L2 norm over every entry.
    pub fn norm(&self) -> T {
        self.tensors
            .iter()
            .flat_map(|t| t.data())
            .fold(T::zero(), |acc, &v| acc + v * v)
            .sqrt()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// `self -= lr * grads`, parameter by parameter.
    pub fn descend(&mut self, grads: &Gradients<T>, lr: impl Fn(ParamId) -> T) {
        for p in ParamId::ALL {
            let step = lr(p);
            let g = grads.get(p);
            for (w, &gv) in self.get_mut(p).data_mut().iter_mut().zip(g.data()) {
                *w = *w - step * gv;
            }
        }
    }

    fn slot(&self, g: &mut Graph<T>, p: ParamId) -> Var {
        g.param(p.index(), self.get(p))
    }
}

/// One question+context sequence with its gold span and answer type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyExample {
    pub tokens: Vec<usize>,
    /// First and last context position (inclusive).
    pub context: (usize, usize),
    pub answer_start: usize,
    /// Inclusive.
    pub answer_end: usize,
    pub label: usize,
}

impl ToyExample {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn validate(&self, cfg: &ToyModelConfig) -> Result<(), AugmentError> {
        let bad = |m: String| Err(AugmentError::ShapeMismatch(m));
        if self.tokens.is_empty() {
            return bad("empty sequence".into());
        }
        if let Some(&t) = self.tokens.iter().find(|&&t| t >= cfg.vocab_size) {
            return bad(format!("token id {t} outside vocabulary of {}", cfg.vocab_size));
        }
        let (c0, c1) = self.context;
        if c0 > c1 || c1 >= self.tokens.len() {
            return bad(format!(
                "context range {:?} outside sequence of {}",
                self.context,
                self.tokens.len()
            ));
        }
        if self.answer_start < c0 || self.answer_end > c1 || self.answer_start > self.answer_end {
            return bad(format!(
                "answer ({}, {}) not inside context {:?}",
                self.answer_start, self.answer_end, self.context
            ));
        }
        if self.label >= cfg.num_types {
            return bad(format!("label {} not below L = {}", self.label, cfg.num_types));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ToyBatch {
    pub examples: Vec<ToyExample>,
}

impl ToyBatch {
    pub fn new(examples: Vec<ToyExample>) -> Self {
        ToyBatch { examples }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn validate(&self, cfg: &ToyModelConfig) -> Result<(), AugmentError> {
        self.examples.iter().try_for_each(|e| e.validate(cfg))
    }

    /// One-hot label matrix y (N×L).
    pub fn labels_one_hot<T: Scalar>(&self, num_types: usize) -> Tensor<T> {
        Tensor::from_fn(self.len(), num_types, |i, l| {
            if self.examples[i].label == l {
                T::one()
            } else {
                T::zero()
            }
        })
    }
}

/// Standard-normal draws, one P×d tensor per example.
#[derive(Debug, Clone, PartialEq)]
pub struct Noise<T> {
    pub per_example: Vec<Tensor<T>>,
}

impl<T: Scalar> Noise<T> {
    pub fn sample<R: Rng>(batch: &ToyBatch, d: usize, rng: &mut R) -> Self {
        let per_example = batch
            .examples
            .iter()
            .map(|e| {
                Tensor::from_fn(e.len(), d, |_, _| {
                    let n: f64 = StandardNormal.sample(rng);
                    T::of(n)
                })
            })
            .collect();
        Noise { per_example }
    }

    pub fn zeros(batch: &ToyBatch, d: usize) -> Self {
        Noise {
            per_example: batch.examples.iter().map(|e| Tensor::zeros(e.len(), d)).collect(),
        }
    }

    fn check(&self, batch: &ToyBatch, d: usize) -> Result<(), AugmentError> {
        if self.per_example.len() != batch.len() {
            return Err(AugmentError::ShapeMismatch(format!(
                "noise for {} examples, batch has {}",
                self.per_example.len(),
                batch.len()
            )));
        }
        for (n, e) in self.per_example.iter().zip(&batch.examples) {
            if n.shape() != (e.len(), d) {
                return Err(AugmentError::ShapeMismatch(format!(
                    "noise is {:?}, expected {:?}",
                    n.shape(),
                    (e.len(), d)
                )));
            }
        }
        Ok(())
    }
}

/// Per-position Gaussian over the adjusting vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianField<T> {
    pub mu: Tensor<T>,
    pub sigma2: Tensor<T>,
}

/// Log class priors added to the discriminator logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPriors<T> {
    probs: Vec<T>,
    log_probs: Vec<T>,
}

impl<T: Scalar> ClassPriors<T> {
    pub fn uniform(num_types: usize) -> Self {
        let p = vec![1.0 / num_types as f64; num_types];
        Self::from_probs(&p).expect("uniform priors are positive")
    }

    /// Normalizes `probs`; every entry must be positive.
    pub fn from_probs(probs: &[f64]) -> Result<Self, AugmentError> {
        if let Some(i) = probs.iter().position(|&p| p.is_nan() || p <= 0.0 || p.is_infinite()) {
            return Err(AugmentError::ZeroPrior(i));
        }
        let total: f64 = probs.iter().sum();
        let probs: Vec<f64> = probs.iter().map(|p| p / total).collect();
        Ok(ClassPriors {
            log_probs: probs.iter().map(|p| T::of(p.ln())).collect(),
            probs: probs.into_iter().map(T::of).collect(),
        })
    }

    /// Uses add-one smoothed counts when `smooth` is set; otherwise any
    /// zero-count type is an error.
    pub fn from_answer_types(prior: &AnswerTypePrior, smooth: bool) -> Result<Self, AugmentError> {
        if smooth {
            Self::from_probs(&prior.add_one_smoothed())
        } else {
            Self::from_probs(&prior.frequency_vector())
        }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    pub fn log_probs(&self) -> &[T] {
        &self.log_probs
    }
}

/// Loss values of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub l_mle: f64,
    /// Adjusted NLL plus β·KL.
    pub l_adjust: f64,
    /// Mean KL per example (before β).
    pub kl: f64,
    pub l_disc: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.l_mle, self.l_adjust, self.kl, self.l_disc, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// What the discriminator sees.
#[derive(Debug, Clone, Copy)]
pub enum DiscInput<'a, T> {
    /// The sampled adjusting vector, detached.
    Sampled,
    /// Externally fixed vectors, one P×d tensor per example.
    Fixed(&'a [Tensor<T>]),
}

/// Node handles of a recorded loss.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub l_mle: Var,
    pub l_adjust: Var,
    pub kl: Var,
    pub l_disc: Var,
    pub total: Var,
}

struct Heads {
    feat: Var,
    log_start: Var,
    log_end: Var,
}

fn encode<T: Scalar>(g: &mut Graph<T>, params: &ParamStore<T>, x: Var) -> Heads {
    let w1 = params.slot(g, ParamId::EncW1);
    let b1 = params.slot(g, ParamId::EncB1);
    let w2 = params.slot(g, ParamId::EncW2);
    let b2 = params.slot(g, ParamId::EncB2);
    let ws = params.slot(g, ParamId::StartW);
    let we = params.slot(g, ParamId::EndW);
    let p = g.value(x).rows();

    let a1 = g.matmul(x, w1);
    let a1 = g.add_row(a1, b1);
    let h1 = g.tanh(a1);
    let a2 = g.matmul(h1, w2);
    let a2 = g.add_row(a2, b2);
    let h2 = g.tanh(a2);
    let pooled = g.mean_rows(h2);
    let pooled = g.broadcast_rows(pooled, p);
    let mixed = g.mul(h2, pooled);
    let feat = g.concat_cols(h2, mixed);

    let s = g.matmul(feat, ws);
    let s = g.transpose(s);
    let log_start = g.log_softmax_rows(s);
    let e = g.matmul(feat, we);
    let e = g.transpose(e);
    let log_end = g.log_softmax_rows(e);
    Heads {
        feat,
        log_start,
        log_end,
    }
}

fn embed<T: Scalar>(g: &mut Graph<T>, params: &ParamStore<T>, ex: &ToyExample) -> Var {
    let table = params.slot(g, ParamId::Embedding);
    g.gather(table, &ex.tokens)
}

struct FieldVars {
    mu: Var,
    logvar: Var,
}

fn adjustor<T: Scalar>(g: &mut Graph<T>, params: &ParamStore<T>, feat: Var) -> FieldVars {
    let mw = params.slot(g, ParamId::AdjMuW);
    let mb = params.slot(g, ParamId::AdjMuB);
    let lw = params.slot(g, ParamId::AdjLvW);
    let lb = params.slot(g, ParamId::AdjLvB);
    let mu = g.matmul(feat, mw);
    let mu = g.add_row(mu, mb);
    let lv = g.matmul(feat, lw);
    let lv = g.add_row(lv, lb);
    let logvar = g.clamp(lv, T::of(LOGVAR_MIN), T::of(LOGVAR_MAX));
    FieldVars { mu, logvar }
}

/// ½ Σ [σ²/γ + (μ−1)²/γ − 1 + ln γ − ln σ²]
fn kl_node<T: Scalar>(g: &mut Graph<T>, f: &FieldVars, gamma: T) -> Var {
    let inv = T::one() / gamma;
    let var = g.exp(f.logvar);
    let t1 = g.scale(var, inv);
    let dm = g.add_scalar(f.mu, -T::one());
    let dm2 = g.square(dm);
    let t2 = g.scale(dm2, inv);
    let s = g.add(t1, t2);
    let s = g.sub(s, f.logvar);
    let s = g.add_scalar(s, gamma.ln() - T::one());
    let total = g.sum(s);
    g.scale(total, T::of(0.5))
}

fn disc_log_probs<T: Scalar>(g: &mut Graph<T>, params: &ParamStore<T>, z: Var, priors: &ClassPriors<T>) -> Var {
    let w = params.slot(g, ParamId::DiscW);
    let b = params.slot(g, ParamId::DiscB);
    let logits = g.matmul(z, w);
    let logits = g.add_row(logits, b);
    let lp = g.constant(Tensor::from_vec(1, priors.len(), priors.log_probs().to_vec()));
    let adjusted = g.add_row(logits, lp);
    g.log_softmax_rows(adjusted)
}

fn span_nll<T: Scalar>(g: &mut Graph<T>, h: &Heads, ex: &ToyExample) -> Var {
    let a = g.pick(h.log_start, &[(0, ex.answer_start)]);
    let b = g.pick(h.log_end, &[(0, ex.answer_end)]);
    let s = g.add(a, b);
    g.scale(s, -T::one())
}

fn sum_vars<T: Scalar>(g: &mut Graph<T>, vars: &[Var]) -> Var {
    let mut acc = g.constant(Tensor::scalar(T::zero()));
    for &v in vars {
        acc = g.add(acc, v);
    }
    acc
}

fn check_model<T: Scalar>(cfg: &ToyModelConfig, params: &ParamStore<T>, batch: &ToyBatch) -> Result<(), AugmentError> {
    cfg.validate()?;
    for p in ParamId::ALL {
        if params.get(p).shape() != p.shape(cfg) {
            return Err(AugmentError::ShapeMismatch(format!(
                "parameter {} has the wrong shape",
                p.name()
            )));
        }
    }
    batch.validate(cfg)
}

/// Records the full objective on `g`.
///
/// With `noise = None` the adjusted branch uses z = μ.
pub fn record_losses<T: Scalar>(
    g: &mut Graph<T>,
    cfg: &ToyModelConfig,
    params: &ParamStore<T>,
    batch: &ToyBatch,
    noise: Option<&Noise<T>>,
    priors: &ClassPriors<T>,
    disc_input: DiscInput<'_, T>,
) -> Result<LossVars, AugmentError> {
    check_model(cfg, params, batch)?;
    if batch.is_empty() {
        return Err(AugmentError::ShapeMismatch("empty batch".into()));
    }
    if let Some(n) = noise {
        n.check(batch, cfg.d)?;
    }
    if priors.len() != cfg.num_types {
        return Err(AugmentError::ShapeMismatch(format!(
            "{} priors for L = {}",
            priors.len(),
            cfg.num_types
        )));
    }
    if let DiscInput::Fixed(zs) = disc_input {
        if zs.len() != batch.len()
            || zs
                .iter()
                .zip(&batch.examples)
                .any(|(z, e)| z.shape() != (e.len(), cfg.d))
        {
            return Err(AugmentError::ShapeMismatch(
                "fixed discriminator input has the wrong shape".into(),
            ));
        }
    }
    let gamma = T::of(cfg.gamma_prior);
    let (mut mle, mut adj, mut kls, mut disc) = (vec![], vec![], vec![], vec![]);
    for (i, ex) in batch.examples.iter().enumerate() {
        let x = embed(g, params, ex);
        let plain = encode(g, params, x);
        mle.push(span_nll(g, &plain, ex));

        let field = adjustor(g, params, plain.feat);
        let z = match noise {
            Some(n) => {
                let half = g.scale(field.logvar, T::of(0.5));
                let sd = g.exp(half);
                let eps = g.constant(n.per_example[i].clone());
                let spread = g.mul(sd, eps);
                g.add(field.mu, spread)
            }
            None => field.mu,
        };
        let xz = g.mul(x, z);
        let adjusted = encode(g, params, xz);
        let nll = span_nll(g, &adjusted, ex);
        let kl = kl_node(g, &field, gamma);
        let bkl = g.scale(kl, T::of(cfg.beta));
        adj.push(g.add(nll, bkl));
        kls.push(kl);

        let zin = match disc_input {
            DiscInput::Sampled => g.detach(z),
            DiscInput::Fixed(zs) => g.constant(zs[i].clone()),
        };
        let lp = disc_log_probs(g, params, zin, priors);
        let p = ex.len();
        let at: Vec<(usize, usize)> = (0..p).map(|j| (j, ex.label)).collect();
        let picked = g.pick(lp, &at);
        disc.push(g.scale(picked, -T::one() / T::from_usize(p).unwrap()));
    }
    let inv_n = T::one() / T::from_usize(batch.len()).unwrap();
    let mean = |g: &mut Graph<T>, vs: &[Var]| {
        let s = sum_vars(g, vs);
        g.scale(s, inv_n)
    };
    let l_mle = mean(g, &mle);
    let l_adjust = mean(g, &adj);
    let kl = mean(g, &kls);
    let l_disc = mean(g, &disc);
    let t = g.add(l_mle, l_adjust);
    let ad = g.scale(l_disc, T::of(cfg.alpha));
    let total = g.add(t, ad);
    Ok(LossVars {
        l_mle,
        l_adjust,
        kl,
        l_disc,
        total,
    })
}

fn read(g: &Graph<impl Scalar>, v: Var) -> f64 {
    g.value(v).get(0, 0).as_f64()
}

impl LossVars {
    pub fn breakdown<T: Scalar>(&self, g: &Graph<T>) -> LossBreakdown {
        LossBreakdown {
            l_mle: read(g, self.l_mle),
            l_adjust: read(g, self.l_adjust),
            kl: read(g, self.kl),
            l_disc: read(g, self.l_disc),
            total: read(g, self.total),
        }
    }
}

/// Start and end distributions over positions.
pub fn forward_plain<T: Scalar>(
    cfg: &ToyModelConfig,
    params: &ParamStore<T>,
    ex: &ToyExample,
) -> Result<(Vec<T>, Vec<T>), AugmentError> {
    check_model(cfg, params, &ToyBatch::new(vec![ex.clone()]))?;
    let mut g = Graph::new();
    let x = embed(&mut g, params, ex);
    let h = encode(&mut g, params, x);
    Ok(dists(&g, &h))
}

/// Encoder features (P×2·hidden) that feed the QA heads and the adjustor:
/// each position's hidden state next to its product with the mean over positions.
pub fn hiddens<T: Scalar>(
    cfg: &ToyModelConfig,
    params: &ParamStore<T>,
    ex: &ToyExample,
) -> Result<Tensor<T>, AugmentError> {
    check_model(cfg, params, &ToyBatch::new(vec![ex.clone()]))?;
    let mut g = Graph::new();
    let x = embed(&mut g, params, ex);
    let h = encode(&mut g, params, x);
    Ok(g.value(h.feat).clone())
}

fn dists<T: Scalar>(g: &Graph<T>, h: &Heads) -> (Vec<T>, Vec<T>) {
    let s = g.value(h.log_start).map(T::exp).into_vec();
    let e = g.value(h.log_end).map(T::exp).into_vec();
    (s, e)
}

pub fn adjustor_forward<T: Scalar>(
    params: &ParamStore<T>,
    hiddens: &Tensor<T>,
) -> Result<GaussianField<T>, AugmentError> {
    if hiddens.cols() != params.get(ParamId::AdjMuW).rows() {
        return Err(AugmentError::ShapeMismatch(format!(
            "hiddens have {} columns, adjustor expects {}",
            hiddens.cols(),
            params.get(ParamId::AdjMuW).rows()
        )));
    }
    let mut g = Graph::new();
    let feat = g.constant(hiddens.clone());
    let f = adjustor(&mut g, params, feat);
    Ok(GaussianField {
        mu: g.value(f.mu).clone(),
        sigma2: g.value(f.logvar).map(T::exp),
    })
}

/// z = μ + sqrt(σ²) ⊙ noise.
pub fn sample_adjusting_vector<T: Scalar>(
    field: &GaussianField<T>,
    noise: &Tensor<T>,
) -> Result<Tensor<T>, AugmentError> {
    if noise.shape() != field.mu.shape() || field.sigma2.shape() != field.mu.shape() {
        return Err(AugmentError::ShapeMismatch("noise does not match the field".into()));
    }
    let sd = field.sigma2.map(T::sqrt);
    Ok(field.mu.zip_map(&sd.zip_map(noise, |s, n| s * n), |m, v| m + v))
}

/// Same as [`forward_plain`] with the embeddings multiplied by `z`.
pub fn forward_adjusted<T: Scalar>(
    cfg: &ToyModelConfig,
    params: &ParamStore<T>,
    ex: &ToyExample,
    z: &Tensor<T>,
) -> Result<(Vec<T>, Vec<T>), AugmentError> {
    check_model(cfg, params, &ToyBatch::new(vec![ex.clone()]))?;
    if z.shape() != (ex.len(), cfg.d) {
        return Err(AugmentError::ShapeMismatch(format!(
            "z is {:?}, expected {:?}",
            z.shape(),
            (ex.len(), cfg.d)
        )));
    }
    let mut g = Graph::new();
    let x = embed(&mut g, params, ex);
    let zv = g.constant(z.clone());
    let xz = g.mul(x, zv);
    let h = encode(&mut g, params, xz);
    Ok(dists(&g, &h))
}

/// Closed-form KL(N(μ, σ²) || N(1, γ)) summed over all entries.
pub fn kl_to_prior<T: Scalar>(field: &GaussianField<T>, gamma_prior: T) -> T {
    let half = T::of(0.5);
    field
        .mu
        .data()
        .iter()
        .zip(field.sigma2.data())
        .fold(T::zero(), |acc, (&m, &s2)| {
            let dm = m - T::one();
            acc + half * (s2 / gamma_prior + dm * dm / gamma_prior - T::one() + (gamma_prior / s2).ln())
        })
}

/// Per-position distribution over answer types (P×L): softmax(f(z_j) + log p).
pub fn discriminator_forward<T: Scalar>(
    params: &ParamStore<T>,
    z: &Tensor<T>,
    priors: &ClassPriors<T>,
) -> Result<Tensor<T>, AugmentError> {
    let w = params.get(ParamId::DiscW);
    if z.cols() != w.rows() || priors.len() != w.cols() {
        return Err(AugmentError::ShapeMismatch(
            "discriminator input or priors have the wrong width".into(),
        ));
    }
    let logits = discriminator_logits(params, z);
    Ok(adjusted_softmax(&logits, priors))
}

/// Raw discriminator scores f(z_j), P×L.
pub fn discriminator_logits<T: Scalar>(params: &ParamStore<T>, z: &Tensor<T>) -> Tensor<T> {
    let w = params.get(ParamId::DiscW);
    let b = params.get(ParamId::DiscB);
    let m = z.matmul(w);
    Tensor::from_fn(m.rows(), m.cols(), |r, c| m.get(r, c) + b.get(0, c))
}

/// Row-wise softmax of `logits + log p`.
pub fn adjusted_softmax<T: Scalar>(logits: &Tensor<T>, priors: &ClassPriors<T>) -> Tensor<T> {
    let lp = priors.log_probs();
    let shifted = Tensor::from_fn(logits.rows(), logits.cols(), |r, c| logits.get(r, c) + lp[c]);
    softmax_rows(&shifted)
}

fn eval<T: Scalar>(
    cfg: &ToyModelConfig,
    params: &ParamStore<T>,
    batch: &ToyBatch,
    noise: Option<&Noise<T>>,
    priors: &ClassPriors<T>,
    disc_input: DiscInput<'_, T>,
) -> Result<LossBreakdown, AugmentError> {
    let mut g = Graph::new();
    let vars = record_losses(&mut g, cfg, params, batch, noise, priors, disc_input)?;
    Ok(vars.breakdown(&g))
}

/// Mean over the batch of −ln p_start[a₁] − ln p_end[a₂].
pub fn loss_mle<T: Scalar>(
    cfg: &ToyModelConfig,
    params: &ParamStore<T>,
    batch: &ToyBatch,
) -> Result<f64, AugmentError> {
    let priors = ClassPriors::uniform(cfg.num_types);
    Ok(eval(cfg, params, batch, None, &priors, DiscInput::Sampled)?.l_mle)
}

/// Mean over the batch of the adjusted-input NLL plus β·KL.
pub fn loss_adjust<T: Scalar>(
    cfg: &ToyModelConfig,
    params: &ParamStore<T>,
    batch: &ToyBatch,
    noise: &Noise<T>,
) -> Result<f64, AugmentError> {
    let priors = ClassPriors::uniform(cfg.num_types);
    Ok(eval(cfg, params, batch, Some(noise), &priors, DiscInput::Sampled)?.l_adjust)
}

/// Cross-entropy of the logit-adjusted discriminator, averaged over all
/// positions of all examples.
pub fn loss_disc<T: Scalar>(
    cfg: &ToyModelConfig,
    params: &ParamStore<T>,
    z: &[Tensor<T>],
    batch: &ToyBatch,
    priors: &ClassPriors<T>,
) -> Result<f64, AugmentError> {
    Ok(eval(cfg, params, batch, None, priors, DiscInput::Fixed(z))?.l_disc)
}

/// L_MLE + L_Adjust + α·L_D.
pub fn loss_total<T: Scalar>(
    cfg: &ToyModelConfig,
    params: &ParamStore<T>,
    batch: &ToyBatch,
    noise: &Noise<T>,
    priors: &ClassPriors<T>,
) -> Result<LossBreakdown, AugmentError> {
    eval(cfg, params, batch, Some(noise), priors, DiscInput::Sampled)
}

/// Loss breakdown and gradients of the total in one pass.
pub fn loss_and_gradients<T: Scalar>(
    cfg: &ToyModelConfig,
    params: &ParamStore<T>,
    batch: &ToyBatch,
    noise: &Noise<T>,
    priors: &ClassPriors<T>,
    disc_input: DiscInput<'_, T>,
) -> Result<(LossBreakdown, Gradients<T>), AugmentError> {
    let mut g = Graph::new();
    let vars = record_losses(&mut g, cfg, params, batch, Some(noise), priors, disc_input)?;
    let breakdown = vars.breakdown(&g);
    let grads = g.backward(vars.total, &params.shapes())?;
    Ok((breakdown, ParamStore { tensors: grads }))
}

/// The sampled adjusting vectors for `noise`, one P×d tensor per example.
pub fn adjusting_vectors<T: Scalar>(
    cfg: &ToyModelConfig,
    params: &ParamStore<T>,
    batch: &ToyBatch,
    noise: Option<&Noise<T>>,
) -> Result<Vec<Tensor<T>>, AugmentError> {
    let mut out = Vec::with_capacity(batch.len());
    for (i, ex) in batch.examples.iter().enumerate() {
        let feat = hiddens(cfg, params, ex)?;
        let field = adjustor_forward(params, &feat)?;
        out.push(match noise {
            Some(n) => sample_adjusting_vector(&field, &n.per_example[i])?,
            None => field.mu,
        });
    }
    Ok(out)
}

/// Fraction of positions whose discriminator argmax equals the example label.
pub fn discriminator_accuracy<T: Scalar>(
    params: &ParamStore<T>,
    z: &[Tensor<T>],
    batch: &ToyBatch,
    priors: &ClassPriors<T>,
) -> Result<f64, AugmentError> {
    let (mut hit, mut total) = (0usize, 0usize);
    for (zi, ex) in z.iter().zip(&batch.examples) {
        let p = discriminator_forward(params, zi, priors)?;
        for r in 0..p.rows() {
            let best = (0..p.cols())
                .max_by(|&a, &b| p.get(r, a).partial_cmp(&p.get(r, b)).unwrap())
                .unwrap();
            hit += usize::from(best == ex.label);
            total += 1;
        }
    }
    Ok(if total == 0 { 0.0 } else { hit as f64 / total as f64 })
}
