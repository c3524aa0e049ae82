//! Central finite differences against the tape gradients.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::{
    adjusting_vectors, loss_and_gradients, record_losses, ClassPriors, DiscInput, Noise, ParamId, ParamStore, ToyBatch,
    ToyExample, ToyModelConfig,
};
use crate::tape::Graph;
use crate::AugmentError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradCheckConfig {
    pub model: ToyModelConfig,
    /// Sequence length P of every generated example.
    pub seq_len: usize,
    pub batch_size: usize,
    pub step: f64,
    pub tolerance: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            model: ToyModelConfig::default(),
            seq_len: 12,
            batch_size: 2,
            step: 1e-5,
            tolerance: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub entries: usize,
    pub max_rel_err: f64,
    pub max_abs_grad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
    pub tolerance: f64,
    pub passed: bool,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn into_result(self) -> Result<GradCheckReport, AugmentError> {
        if self.passed {
            Ok(self)
        } else {
            Err(AugmentError::ToleranceExceeded {
                max_rel_err: self.max_rel_err,
                tolerance: self.tolerance,
            })
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Seeded random sequences: r special tokens around a short question and a
/// context that holds the answer.
pub fn random_batch(cfg: &ToyModelConfig, seq_len: usize, n: usize, seed: u64) -> Result<ToyBatch, AugmentError> {
    if seq_len < cfg.r + 2 {
        return Err(AugmentError::InvalidConfig(format!(
            "sequence length {seq_len} leaves no room for question and context"
        )));
    }
    let mut rng = spanqa_core::rng::stream(seed, "gradcheck-batch");
    let body = seq_len - cfg.r;
    let q = (body / 3).max(1);
    let c0 = 2 + q;
    let c1 = c0 + (body - q) - 1;
    let examples = (0..n)
        .map(|_| {
            let tokens = (0..seq_len).map(|_| rng.gen_range(0..cfg.vocab_size)).collect();
            let a = rng.gen_range(c0..=c1);
            let b = rng.gen_range(a..=c1);
            ToyExample {
                tokens,
                context: (c0, c1),
                answer_start: a,
                answer_end: b,
                label: rng.gen_range(0..cfg.num_types),
            }
        })
        .collect();
    Ok(ToyBatch::new(examples))
}

/// Compares the tape gradient of the total loss with central differences for
/// every parameter entry of a seeded model. The discriminator input is held
/// at the sample drawn at the base point, which is what detaching means.
pub fn grad_check(cfg: &GradCheckConfig) -> Result<GradCheckReport, AugmentError> {
    let m = &cfg.model;
    m.validate()?;
    if m.d > 16 || cfg.seq_len > 24 {
        return Err(AugmentError::InvalidConfig(
            "grad check is limited to d <= 16 and P <= 24".into(),
        ));
    }
    let params = ParamStore::<f64>::init(m)?;
    let batch = random_batch(m, cfg.seq_len, cfg.batch_size, m.seed)?;
    let mut rng = spanqa_core::rng::stream(m.seed, "gradcheck-noise");
    let noise = Noise::sample(&batch, m.d, &mut rng);
    let priors = ClassPriors::uniform(m.num_types);
    let z_fixed = adjusting_vectors(m, &params, &batch, Some(&noise))?;
    let disc = DiscInput::Fixed(&z_fixed);
    let (_, grads) = loss_and_gradients(m, &params, &batch, &noise, &priors, disc)?;

    let total_at = |p: &ParamStore<f64>| -> Result<f64, AugmentError> {
        let mut g = Graph::new();
        let v = record_losses(&mut g, m, p, &batch, Some(&noise), &priors, disc)?;
        Ok(g.value(v.total).get(0, 0))
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
        tolerance: cfg.tolerance,
        passed: true,
        params: Vec::new(),
    };
    let mut work = params.clone();
    for p in ParamId::ALL {
        let mut pc = ParamCheck {
            name: p.name().to_string(),
            entries: params.get(p).len(),
            max_rel_err: 0.0,
            max_abs_grad: 0.0,
        };
        for i in 0..params.get(p).len() {
            let base = params.get(p).data()[i];
            work.get_mut(p).data_mut()[i] = base + cfg.step;
            let up = total_at(&work)?;
            work.get_mut(p).data_mut()[i] = base - cfg.step;
            let down = total_at(&work)?;
            work.get_mut(p).data_mut()[i] = base;
            let numeric = (up - down) / (2.0 * cfg.step);
            let analytic = grads.get(p).data()[i];
            let err = relative_error(analytic, numeric);
            pc.max_abs_grad = pc.max_abs_grad.max(analytic.abs());
            pc.max_rel_err = pc.max_rel_err.max(err);
            if err > report.max_rel_err || report.worst_param.is_empty() {
                report.max_rel_err = err;
                report.worst_param = p.name().to_string();
                report.worst_index = i;
            }
            report.checked += 1;
        }
        report.params.push(pc);
    }
    report.passed = report.max_rel_err < cfg.tolerance;
    Ok(report)
}
