use std::path::Path;

use lexsent_core::encoder::{TrainConfig, DEFAULT_EMBEDDING_DIM, REFERENCE_LEARNING_RATE};
use lexsent_core::filter::FilterConfig;
use lexsent_core::lexicon::{ClassMode, MergePolicy};
use lexsent_core::prompt::{Normalization, PromptEvalConfig, RetryPolicy};
use lexsent_core::train::{PretrainObjective, DEFAULT_SEEDS, LEXICON_MAX_LEN};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("invalid config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid setting: {0}")]
    Invalid(String),
}

/// Every tunable of the pipeline as one flat table.
///
/// Defaults follow the reference training setup; the encoder-specific
/// learning rate and embedding size belong to the built-in reference encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub task: ClassMode,
    pub objective: PretrainObjective,

    pub on_duplicate: MergePolicy,
    pub case_fold: bool,

    #[serde(with = "extended_float")]
    pub alpha: f64,
    pub beta: usize,
    pub split_ratio: f64,
    pub max_iterations: usize,
    pub cold_start: bool,

    pub embedding_dim: usize,
    pub learning_rate: f64,
    pub patience: usize,
    pub dropout: f64,
    pub batch_size: usize,
    pub pretrain_max_epochs: usize,
    pub finetune_max_epochs: usize,
    pub finetune_max_len: usize,

    pub fewshot_train: usize,
    pub fewshot_dev: usize,
    pub fewshot_stratified: bool,
    pub seeds: Vec<u64>,

    /// Empty means the task's canonical labels.
    pub verbalizers: Vec<String>,
    pub prompt_parallelism: usize,
    pub retry_max_attempts: u32,
    pub retry_base_delay_ms: u64,
    pub normalization: Normalization,
    pub scorer_timeout_secs: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let pre = TrainConfig::<f64>::lexicon_pretraining();
        let fine = TrainConfig::<f64>::sentence_finetuning();
        let filter = FilterConfig::<f64>::default();
        let retry = RetryPolicy::default();
        Self {
            seed: DEFAULT_SEEDS[0],
            task: ClassMode::Binary,
            objective: PretrainObjective::Regression,
            on_duplicate: MergePolicy::Mean,
            case_fold: false,
            alpha: filter.alpha,
            beta: filter.beta,
            split_ratio: filter.split_ratio,
            max_iterations: filter.max_iterations,
            cold_start: filter.cold_start,
            embedding_dim: DEFAULT_EMBEDDING_DIM,
            learning_rate: REFERENCE_LEARNING_RATE,
            patience: pre.patience,
            dropout: pre.dropout,
            batch_size: pre.batch_size,
            pretrain_max_epochs: pre.max_epochs,
            finetune_max_epochs: fine.max_epochs,
            finetune_max_len: fine.max_len,
            fewshot_train: 100,
            fewshot_dev: 50,
            fewshot_stratified: false,
            seeds: DEFAULT_SEEDS.to_vec(),
            verbalizers: Vec::new(),
            prompt_parallelism: 4,
            retry_max_attempts: retry.max_attempts,
            retry_base_delay_ms: retry.base_delay_ms,
            normalization: Normalization::LabelOnly,
            scorer_timeout_secs: 30,
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
    pub beta: Option<usize>,
    pub max_epochs: Option<usize>,
    pub objective: Option<PretrainObjective>,
    pub task: Option<ClassMode>,
}

/// Which training budget `--max-epochs` refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Pretrain,
    Finetune,
    Other,
}

impl PipelineConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse { path: origin.to_owned(), message: e.to_string() })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let origin = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: origin.clone(), source })?;
        Self::from_toml(&text, &origin)
    }

    pub fn apply(&mut self, o: &Overrides, stage: Stage) -> Result<(), ConfigError> {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.alpha {
            self.alpha = v;
        }
        if let Some(v) = o.beta {
            self.beta = v;
        }
        if let Some(v) = o.objective {
            self.objective = v;
        }
        if let Some(v) = o.task {
            self.task = v;
        }
        if let Some(v) = o.max_epochs {
            match stage {
                Stage::Pretrain => self.pretrain_max_epochs = v,
                Stage::Finetune => self.finetune_max_epochs = v,
                Stage::Other => {
                    return Err(ConfigError::Invalid("--max-epochs has no effect on this command".into()))
                }
            }
        }
        Ok(())
    }

    pub fn pretrain_config(&self) -> TrainConfig<f64> {
        TrainConfig {
            learning_rate: self.learning_rate,
            max_epochs: self.pretrain_max_epochs,
            patience: self.patience,
            dropout: self.dropout,
            max_len: LEXICON_MAX_LEN,
            batch_size: self.batch_size,
            seed: self.seed,
        }
    }

    pub fn finetune_config(&self) -> TrainConfig<f64> {
        TrainConfig { max_epochs: self.finetune_max_epochs, max_len: self.finetune_max_len, ..self.pretrain_config() }
    }

    pub fn filter_config(&self) -> FilterConfig<f64> {
        FilterConfig {
            alpha: self.alpha,
            beta: self.beta,
            split_ratio: self.split_ratio,
            max_iterations: self.max_iterations,
            cold_start: self.cold_start,
            train: self.pretrain_config(),
        }
    }

    pub fn prompt_config(&self) -> PromptEvalConfig {
        let mut config = PromptEvalConfig::for_task(self.task);
        if !self.verbalizers.is_empty() {
            config.verbalizers = self.verbalizers.clone();
        }
        config.parallelism = self.prompt_parallelism;
        config.retry = RetryPolicy { max_attempts: self.retry_max_attempts, base_delay_ms: self.retry_base_delay_ms };
        config.normalization = self.normalization;
        config
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.pretrain_config().validate().map_err(|e| invalid(&e))?;
        self.finetune_config().validate().map_err(|e| invalid(&e))?;
        self.filter_config().validate().map_err(|e| invalid(&e))?;
        self.prompt_config().validate().map_err(|e| invalid(&e))?;
        if self.embedding_dim == 0 {
            return Err(ConfigError::Invalid("embedding_dim must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(ConfigError::Invalid("seeds must not be empty".into()));
        }
        if self.fewshot_train == 0 || self.fewshot_dev == 0 {
            return Err(ConfigError::Invalid("fewshot_train and fewshot_dev must be positive".into()));
        }
        if self.prompt_parallelism == 0 || self.retry_max_attempts == 0 {
            return Err(ConfigError::Invalid("prompt_parallelism and retry_max_attempts must be positive".into()));
        }
        Ok(())
    }

    /// First 8 hex digits of the SHA-256 of the canonical JSON form.
    pub fn short_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))[..8].to_owned()
    }
}

/// Floats that may be infinite: numbers when finite, `"inf"` / `"-inf"`
/// otherwise, since JSON has no infinity literal.
mod extended_float {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&v.to_string())
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Int(i64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Int(v) => Ok(v as f64),
            Repr::Str(s) => s.parse().map_err(|_| serde::de::Error::custom(format!("not a number: {s:?}"))),
        }
    }
}
