//! Run configuration: built-in defaults, then a TOML file, then flags.
//!
//! ```toml
//! seed = 42
//!
//! [paths]
//! corpus = "corpus.jsonl"
//! dataset = "dataset.jsonl"
//! out_dir = "out"
//!
//! [extension]
//! omega_percent = 80.0
//! candidate_labels = ["NP", "ADJP", "VP", "S", "SBAR"]
//!
//! [build]
//! mode = "diverse"          # ne-only | diverse | random
//!
//! [split]
//! initial_size = 300000
//! filter_parts = 6
//! strategy = "uniform"      # uniform | stratified
//!
//! [filter]
//! k = 1
//! gamma_sub = 0.1
//! match_mode = "EXACT_OFFSETS"
//! relabel_substring = false
//!
//! [model]                   # toy QA core
//! vocab_size = 32
//! d = 8
//! hidden = 16
//! L = 5
//! r = 3
//! gamma_prior = 1.0
//! alpha = 1.0
//! beta = 1.0
//!
//! [adapter]                 # toy model inside `run`, `predict`, `fine-tune`
//! vocab_size = 512
//! steps = 40
//! # predict_command = "my-qa predict {dataset} {predictions} {checkpoint}"
//! # fine_tune_command = "my-qa train {dataset} {checkpoint}"
//!
//! [gradcheck]
//! seq_len = 12
//! tolerance = 1e-4
//!
//! [toy_train]
//! steps = 500
//! lr = 0.1
//! ```

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use spanqa_augment::adapter::AdapterConfig;
use spanqa_augment::gradcheck::GradCheckConfig;
use spanqa_augment::model::ToyModelConfig;
use spanqa_core::dataset::{BuildMode, BuildOptions, SplitPlan, SplitStrategy};
use spanqa_core::extension::ExtensionConfig;
use spanqa_core::filter::{FilterConfig, MatchMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: PathsSection,
    pub extension: ExtensionSection,
    pub build: BuildSection,
    pub split: SplitSection,
    pub filter: FilterSection,
    pub model: ModelSection,
    pub adapter: AdapterSection,
    pub gradcheck: GradcheckSection,
    pub toy_train: ToyTrainSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            paths: PathsSection::default(),
            extension: ExtensionSection::default(),
            build: BuildSection::default(),
            split: SplitSection::default(),
            filter: FilterSection::default(),
            model: ModelSection::default(),
            adapter: AdapterSection::default(),
            gradcheck: GradcheckSection::default(),
            toy_train: ToyTrainSection::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub corpus: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtensionSection {
    pub omega_percent: f64,
    pub candidate_labels: Vec<String>,
}

impl Default for ExtensionSection {
    fn default() -> Self {
        let d = ExtensionConfig::default();
        ExtensionSection {
            omega_percent: d.omega_percent(),
            candidate_labels: d.candidate_labels().iter().cloned().collect(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BuildSection {
    pub mode: BuildMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub initial_size: usize,
    pub filter_parts: usize,
    pub strategy: SplitStrategy,
}

impl Default for SplitSection {
    fn default() -> Self {
        let p = SplitPlan::default();
        SplitSection {
            initial_size: p.initial_size,
            filter_parts: p.filter_parts,
            strategy: p.strategy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterSection {
    pub k: usize,
    pub gamma_sub: f64,
    pub match_mode: MatchMode,
    pub relabel_substring: bool,
}

impl Default for FilterSection {
    fn default() -> Self {
        let f = FilterConfig::default();
        FilterSection {
            k: f.k,
            gamma_sub: f.gamma_sub,
            match_mode: f.match_mode,
            relabel_substring: f.relabel_substring,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub vocab_size: usize,
    pub d: usize,
    pub hidden: usize,
    #[serde(rename = "L")]
    pub num_types: usize,
    pub r: usize,
    pub gamma_prior: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ToyModelConfig::default();
        ModelSection {
            vocab_size: m.vocab_size,
            d: m.d,
            hidden: m.hidden,
            num_types: m.num_types,
            r: m.r,
            gamma_prior: m.gamma_prior,
            alpha: m.alpha,
            beta: m.beta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdapterSection {
    /// Replaces `[model].vocab_size` for the hashed vocabulary.
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub max_answer_len: usize,
    pub nbest: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub clip_norm: Option<f64>,
    pub smooth_priors: bool,
    /// External model hooks; both must be set to replace the toy model.
    pub predict_command: Option<String>,
    pub fine_tune_command: Option<String>,
}

impl Default for AdapterSection {
    fn default() -> Self {
        let a = AdapterConfig::default();
        AdapterSection {
            vocab_size: a.model.vocab_size,
            max_seq_len: a.max_seq_len,
            max_answer_len: a.max_answer_len,
            nbest: a.nbest,
            steps: a.steps,
            batch_size: a.batch_size,
            lr: a.lr,
            clip_norm: a.clip_norm,
            smooth_priors: a.smooth_priors,
            predict_command: None,
            fine_tune_command: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckSection {
    pub seq_len: usize,
    pub batch_size: usize,
    pub step: f64,
    pub tolerance: f64,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        let g = GradCheckConfig::default();
        GradcheckSection {
            seq_len: g.seq_len,
            batch_size: g.batch_size,
            step: g.step,
            tolerance: g.tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyTrainSection {
    pub examples: usize,
    pub steps: usize,
    pub lr: f64,
    /// Length of the per-type direction added to the type-specific embeddings.
    pub plant_strength: f64,
}

impl Default for ToyTrainSection {
    fn default() -> Self {
        ToyTrainSection {
            examples: 64,
            steps: 500,
            lr: 0.1,
            plant_strength: 2.0,
        }
    }
}

impl RunConfig {
    /// Defaults overlaid with `path`, if given.
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }

    pub fn extension(&self) -> Result<ExtensionConfig> {
        Ok(ExtensionConfig::new(
            self.extension.omega_percent,
            self.extension.candidate_labels.iter().cloned(),
        )?)
    }

    pub fn build_options(&self) -> BuildOptions {
        BuildOptions {
            mode: self.build.mode,
            seed: self.seed,
        }
    }

    pub fn split_plan(&self) -> SplitPlan {
        SplitPlan {
            initial_size: self.split.initial_size,
            filter_parts: self.split.filter_parts,
            seed: self.seed,
            strategy: self.split.strategy,
        }
    }

    pub fn filter_config(&self) -> FilterConfig {
        FilterConfig {
            k: self.filter.k,
            gamma_sub: self.filter.gamma_sub,
            match_mode: self.filter.match_mode,
            relabel_substring: self.filter.relabel_substring,
        }
    }

    pub fn model_config(&self) -> ToyModelConfig {
        let m = &self.model;
        ToyModelConfig {
            vocab_size: m.vocab_size,
            d: m.d,
            hidden: m.hidden,
            num_types: m.num_types,
            r: m.r,
            gamma_prior: m.gamma_prior,
            alpha: m.alpha,
            beta: m.beta,
            seed: self.seed,
        }
    }

    pub fn adapter_config(&self, checkpoint_dir: Option<PathBuf>) -> AdapterConfig {
        let a = &self.adapter;
        AdapterConfig {
            model: ToyModelConfig {
                vocab_size: a.vocab_size,
                ..self.model_config()
            },
            max_seq_len: a.max_seq_len,
            max_answer_len: a.max_answer_len,
            nbest: a.nbest,
            steps: a.steps,
            batch_size: a.batch_size,
            lr: a.lr,
            clip_norm: a.clip_norm,
            smooth_priors: a.smooth_priors,
            checkpoint_dir,
        }
    }

    pub fn gradcheck_config(&self) -> GradCheckConfig {
        let g = &self.gradcheck;
        GradCheckConfig {
            model: self.model_config(),
            seq_len: g.seq_len,
            batch_size: g.batch_size,
            step: g.step,
            tolerance: g.tolerance,
        }
    }

    /// Checks everything that can be checked without touching files.
    pub fn validate(&self) -> Result<()> {
        self.extension()?;
        self.model_config().validate()?;
        if self.split.filter_parts == 0 {
            anyhow::bail!("split.filter_parts must be at least 1");
        }
        if self.filter.k == 0 {
            anyhow::bail!("filter.k must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.filter.gamma_sub) {
            anyhow::bail!("filter.gamma_sub must lie in [0, 1]");
        }
        if self.adapter.predict_command.is_some() != self.adapter.fine_tune_command.is_some() {
            anyhow::bail!("adapter.predict_command and adapter.fine_tune_command must be set together");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_reference_settings() {
        let c = RunConfig::default();
        assert_eq!(c.extension.omega_percent, 80.0);
        assert_eq!(c.filter.k, 1);
        assert_eq!(c.filter.gamma_sub, 0.1);
        assert_eq!(c.split.filter_parts, 6);
        assert_eq!(c.split.initial_size, 300_000);
        let m = c.model_config();
        assert_eq!((m.num_types, m.alpha, m.beta), (5, 1.0, 1.0));
        c.validate().unwrap();
    }

    #[test]
    fn file_overrides_and_unknown_keys() {
        let c: RunConfig = toml::from_str("seed = 7\n[extension]\nomega_percent = 50.0\n[model]\nL = 4\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.extension.omega_percent, 50.0);
        assert_eq!(c.model.num_types, 4);
        assert_eq!(c.filter, FilterSection::default());
        assert!(toml::from_str::<RunConfig>("[filter]\nkk = 2\n").is_err());
        assert!(toml::from_str::<RunConfig>("colour = 1\n").is_err());
    }

    #[test]
    fn documented_example_parses() {
        let doc: String = include_str!("config.rs")
            .lines()
            .skip_while(|l| !l.starts_with("//! ```toml"))
            .skip(1)
            .take_while(|l| !l.starts_with("//! ```"))
            .map(|l| l.trim_start_matches("//!").trim_start_matches(' '))
            .collect::<Vec<_>>()
            .join("\n");
        let c: RunConfig = toml::from_str(&doc).unwrap();
        assert_eq!(
            c.split_plan(),
            SplitPlan {
                seed: 42,
                ..SplitPlan::default()
            }
        );
        assert_eq!(c.build.mode, BuildMode::Diverse);
        c.validate().unwrap();
    }
}
