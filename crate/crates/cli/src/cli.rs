use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use lexsent_core::lexicon::ClassMode;
use lexsent_core::train::PretrainObjective;
use serde::{Deserialize, Serialize};

use crate::config::{Overrides, Stage};

/// Lexicon-based multilingual sentiment pipeline.
///
/// Every invocation writes its artifacts and a manifest to a fresh
/// directory under `<workdir>/runs`.
#[derive(Debug, Parser)]
#[command(name = "lexsent", version, about, propagate_version = true)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Directory all input paths are resolved against; required.
    #[arg(long, global = true, value_name = "DIR")]
    pub workdir: Option<PathBuf>,

    /// Pipeline config (flat TOML), relative to the workdir.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Validate config and inputs, then stop without writing anything.
    #[arg(long, global = true)]
    pub dry_run: bool,

    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Filter acceptance threshold on |predicted - original| (`inf` accepts all).
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub alpha: Option<f64>,

    /// Minimum acceptances per filter iteration.
    #[arg(long, global = true)]
    pub beta: Option<usize>,

    /// Epoch budget of the invoked training stage.
    #[arg(long, global = true)]
    pub max_epochs: Option<usize>,

    /// regression, binary or three_way.
    #[arg(long, global = true)]
    pub objective: Option<PretrainObjective>,

    /// binary or three_way.
    #[arg(long, global = true)]
    pub task: Option<ClassMode>,
}

impl GlobalArgs {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            alpha: self.alpha,
            beta: self.beta,
            max_epochs: self.max_epochs,
            objective: self.objective,
            task: self.task,
        }
    }

    pub fn has_overrides(&self) -> bool {
        let o = self.overrides();
        self.config.is_some()
            || o.seed.is_some()
            || o.alpha.is_some()
            || o.beta.is_some()
            || o.max_epochs.is_some()
            || o.objective.is_some()
            || o.task.is_some()
    }
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "command")]
pub enum Command {
    /// Convert a lexicon to the canonical [-5, 5] TSV.
    LexiconNormalize(NormalizeArgs),
    /// Project English scores onto translations.
    LexiconExtend(ExtendArgs),
    /// Self-training filter of non-English candidates against an English base.
    LexiconFilter(FilterArgs),
    /// Word-level pretraining on a lexicon.
    Pretrain(PretrainArgs),
    /// Sentence-level fine-tuning on a train/dev(/test) directory.
    Finetune(FinetuneArgs),
    /// Few-shot fine-tuning repeated over seeds.
    Fewshot(FewshotArgs),
    /// Label sentences with a checkpoint.
    Predict(PredictArgs),
    /// Per-language F1 and group means from prediction files.
    Evaluate(EvaluateArgs),
    /// Prompt baseline scored by label log-likelihood.
    PromptEval(PromptEvalArgs),
    /// Merge evaluation reports from earlier runs.
    Report(ReportArgs),
    /// Replay a run from its manifest and check the artifact hashes.
    Rerun(RerunArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::LexiconNormalize(_) => "lexicon-normalize",
            Command::LexiconExtend(_) => "lexicon-extend",
            Command::LexiconFilter(_) => "lexicon-filter",
            Command::Pretrain(_) => "pretrain",
            Command::Finetune(_) => "finetune",
            Command::Fewshot(_) => "fewshot",
            Command::Predict(_) => "predict",
            Command::Evaluate(_) => "evaluate",
            Command::PromptEval(_) => "prompt-eval",
            Command::Report(_) => "report",
            Command::Rerun(_) => "rerun",
        }
    }

    pub fn stage(&self) -> Stage {
        match self {
            Command::LexiconFilter(_) | Command::Pretrain(_) => Stage::Pretrain,
            Command::Finetune(_) | Command::Fewshot(_) => Stage::Finetune,
            _ => Stage::Other,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct NormalizeArgs {
    #[arg(long = "in", value_name = "TSV")]
    pub input: PathBuf,
    /// Output name inside the run directory.
    #[arg(long, default_value = "lexicon.tsv")]
    pub out: PathBuf,
    /// Treat scores as raw [0, 1] values even without a `#scale=raw` line.
    #[arg(long)]
    pub raw: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ExtendArgs {
    #[arg(long, value_name = "TSV")]
    pub base: PathBuf,
    /// Translation edges (`src_word src_lang tgt_word tgt_lang`).
    #[arg(long, value_name = "TSV")]
    pub edges: PathBuf,
    /// Comma-separated target language codes.
    #[arg(long, value_delimiter = ',', required = true)]
    pub targets: Vec<String>,
    #[arg(long, default_value = "extended.tsv")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct FilterArgs {
    /// English lexicon the filter model is trained on.
    #[arg(long, value_name = "TSV")]
    pub base: PathBuf,
    #[arg(long, value_name = "TSV")]
    pub candidates: PathBuf,
    #[arg(long, default_value = "lexicon.tsv")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PretrainArgs {
    #[arg(long, value_name = "TSV")]
    pub lexicon: PathBuf,
    #[arg(long, default_value = "checkpoint.json")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct FinetuneArgs {
    /// Directory with train.tsv, dev.tsv and optionally test.tsv.
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Pretrained checkpoint to start from.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "checkpoint.json")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct FewshotArgs {
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    /// Comma-separated seeds; replaces the `seeds` config key.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PredictArgs {
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// `text` or `text<TAB>label` file with a header row.
    #[arg(long, value_name = "TSV")]
    pub input: PathBuf,
    #[arg(long)]
    pub model_id: Option<String>,
    #[arg(long, default_value = "predictions.jsonl")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvaluateArgs {
    /// `LANG=PATH` prediction files; repeat per language.
    #[arg(long = "predictions", value_name = "LANG=PATH", required = true)]
    pub predictions: Vec<String>,
    /// Language groups (TOML, or JSON by extension).
    #[arg(long, value_name = "FILE")]
    pub groups: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PromptEvalArgs {
    /// `text<TAB>label` evaluation file.
    #[arg(long, value_name = "TSV")]
    pub data: PathBuf,
    /// Directory of prompt_1.txt, prompt_2.txt, ...; built-in templates otherwise.
    #[arg(long, value_name = "DIR")]
    pub templates: Option<PathBuf>,
    /// Score table for the mock scorer; without it the remote scorer is used.
    #[arg(long, value_name = "JSON")]
    pub mock: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReportArgs {
    /// Run directories, run names under runs/, or report files.
    #[arg(long, num_args = 1.., required = true)]
    pub runs: Vec<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub groups: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct RerunArgs {
    /// Manifest of the run to replay, relative to the workdir.
    #[arg(value_name = "MANIFEST")]
    pub manifest: PathBuf,
}
