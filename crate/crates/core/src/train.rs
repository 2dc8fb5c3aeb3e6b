//! Lexicon-based pretraining, sentence-level fine-tuning, few-shot sampling
//! and multi-seed runs.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use num_traits::{FromPrimitive, Num};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::encoder::{fit, EncoderBackend, EncoderError, Example, FitReport, Objective, TrainConfig};
use crate::eval::ModelHead;
use crate::lexicon::{class_of, ClassMode, LexiconError, SentimentClass, Split, ValenceLexicon};
use crate::scalar::Scalar;

pub const CHECKPOINT_FORMAT: &str = "lexsent-checkpoint/1";
pub const LEXICON_MAX_LEN: usize = 10;
pub const DEFAULT_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("lexicon is empty")]
    EmptyLexicon,
    #[error("invalid job: {0}")]
    InvalidJob(String),
    #[error("training split contains only the label {0:?}")]
    SingleClass(String),
    #[error("{split} split uses label {label:?} outside the label vocabulary")]
    LabelMismatch { split: &'static str, label: String },
    #[error("{split} split has {available} rows, {required} required")]
    Insufficient { split: &'static str, required: usize, available: usize },
    #[error("no seeds given")]
    NoSeeds,
    #[error("seed {seed}: {source}")]
    Seed { seed: u64, source: Box<TrainError> },
    #[error("{path}: line {line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("unsupported checkpoint format {0:?}")]
    Format(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PretrainObjective {
    Regression,
    ClassificationBinary,
    ClassificationThreeWay,
}

impl PretrainObjective {
    pub fn class_mode(self) -> Option<ClassMode> {
        match self {
            PretrainObjective::Regression => None,
            PretrainObjective::ClassificationBinary => Some(ClassMode::Binary),
            PretrainObjective::ClassificationThreeWay => Some(ClassMode::ThreeWay),
        }
    }

    pub fn head(self) -> ModelHead {
        match self.class_mode() {
            None => ModelHead::Regression,
            Some(mode) => ModelHead::Classification { labels: mode.label_names() },
        }
    }
}

impl std::str::FromStr for PretrainObjective {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "regression" => Ok(Self::Regression),
            "binary" | "classification_binary" => Ok(Self::ClassificationBinary),
            "three_way" | "three-way" | "classification_3way" | "classification_three_way" => {
                Ok(Self::ClassificationThreeWay)
            }
            other => Err(format!("unknown objective {other:?}")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PretrainJob<T: Scalar> {
    pub lexicon: ValenceLexicon<T>,
    pub objective: PretrainObjective,
    pub config: TrainConfig<T>,
    pub seed: u64,
}

impl<T: Scalar> PretrainJob<T> {
    pub fn new(lexicon: ValenceLexicon<T>, objective: PretrainObjective, seed: u64) -> Self {
        Self { lexicon, objective, config: TrainConfig::lexicon_pretraining(), seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Pretrain,
    Finetune,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct CheckpointMeta<T: Scalar> {
    pub format: String,
    pub kind: JobKind,
    pub head: ModelHead,
    /// SHA-256 of the training data in canonical form.
    pub data_hash: String,
    pub config: TrainConfig<T>,
    pub seed: u64,
    pub fit: FitReport<T>,
    #[serde(default)]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_checkpoint: Option<String>,
}

/// A trained model with everything needed to reproduce it.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar, M: Serialize", deserialize = "T: Scalar, M: DeserializeOwned"))]
pub struct Checkpoint<T: Scalar, M> {
    pub meta: CheckpointMeta<T>,
    pub model: M,
}

impl<T: Scalar, M: Serialize + DeserializeOwned> Checkpoint<T, M> {
    pub fn to_bytes(&self) -> Result<Vec<u8>, TrainError> {
        Ok(serde_json::to_vec(self)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TrainError> {
        let ckpt: Self = serde_json::from_slice(bytes)?;
        if ckpt.meta.format != CHECKPOINT_FORMAT {
            return Err(TrainError::Format(ckpt.meta.format));
        }
        Ok(ckpt)
    }

    pub fn hash(&self) -> Result<String, TrainError> {
        Ok(hex::encode(Sha256::digest(self.to_bytes()?)))
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn ensure_head<T: Scalar, B: EncoderBackend<T>>(backend: &mut B, outputs: usize) {
    if backend.output_dim() != outputs {
        backend.reset_head(outputs);
    }
}

/// Word-level pretraining on a valence lexicon.
///
/// Regression fits valences with MSE; classification fits the classes
/// derived by [`class_of`] with cross-entropy. Entries without a split are
/// assigned 80:20 first. The backend ends up at its best validation epoch.
pub fn pretrain<T, B>(job: &PretrainJob<T>, mut backend: B) -> Result<Checkpoint<T, B>, TrainError>
where
    T: Scalar,
    B: EncoderBackend<T>,
{
    if job.lexicon.is_empty() {
        return Err(TrainError::EmptyLexicon);
    }
    if job.config.max_len != LEXICON_MAX_LEN {
        return Err(TrainError::InvalidJob(format!(
            "lexicon pretraining uses max token length {LEXICON_MAX_LEN}, got {}",
            job.config.max_len
        )));
    }
    let mut lexicon = job.lexicon.clone();
    lexicon.assign_splits(job.seed, 0.8)?;

    let mut warnings = Vec::new();
    let make = |split: Split| -> Result<Vec<Example<T>>, TrainError> {
        lexicon
            .split_entries(split)
            .map(|e| match job.objective.class_mode() {
                None => Ok(Example::score(e.word(), e.valence())),
                Some(mode) => Ok(Example::class(e.word(), class_of(e.valence(), mode)?.index(mode)?)),
            })
            .collect()
    };
    let train = make(Split::Train)?;
    let val = make(Split::Validation)?;

    if job.objective == PretrainObjective::ClassificationThreeWay {
        let any_neutral = lexicon
            .entries()
            .any(|e| class_of(e.valence(), ClassMode::ThreeWay).ok() == Some(SentimentClass::Neutral));
        if !any_neutral {
            warnings.push("lexicon has no neutral words for three-way pretraining".to_owned());
        }
    }

    let (objective, outputs) = match job.objective.class_mode() {
        None => (Objective::Mse, 1),
        Some(mode) => (Objective::CrossEntropy, mode.arity()),
    };
    ensure_head(&mut backend, outputs);
    let config = TrainConfig { seed: job.seed, ..job.config.clone() };
    let report = fit(&mut backend, &train, &val, objective, &config)?;

    Ok(Checkpoint {
        meta: CheckpointMeta {
            format: CHECKPOINT_FORMAT.to_owned(),
            kind: JobKind::Pretrain,
            head: job.objective.head(),
            data_hash: lexicon.content_hash(),
            config,
            seed: job.seed,
            fit: report,
            warnings,
            base_checkpoint: None,
        },
        model: backend,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceRecord {
    /// Row position in the source split.
    pub id: usize,
    pub text: String,
    pub label: String,
}

/// Labeled sentences with a declared label vocabulary and named splits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSentenceSet {
    labels: Vec<String>,
    train: Vec<SentenceRecord>,
    dev: Vec<SentenceRecord>,
    test: Vec<SentenceRecord>,
}

/// Canonical label order: sentiment order when every label is a sentiment
/// class, lexicographic otherwise.
pub fn canonical_labels<'a>(labels: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let set: BTreeSet<&str> = labels.into_iter().collect();
    let classes: Option<Vec<SentimentClass>> = set.iter().map(|l| l.parse().ok()).collect();
    match classes {
        Some(mut c) => {
            c.sort();
            c.into_iter().map(|c| c.as_str().to_owned()).collect()
        }
        None => set.into_iter().map(str::to_owned).collect(),
    }
}

impl LabeledSentenceSet {
    pub fn new(
        labels: Vec<String>,
        train: Vec<SentenceRecord>,
        dev: Vec<SentenceRecord>,
        test: Vec<SentenceRecord>,
    ) -> Result<Self, TrainError> {
        let distinct: BTreeSet<&String> = labels.iter().collect();
        if distinct.len() != labels.len() {
            return Err(TrainError::InvalidJob("label vocabulary has duplicates".into()));
        }
        for (name, split) in [("train", &train), ("dev", &dev), ("test", &test)] {
            if let Some(r) = split.iter().find(|r| !labels.contains(&r.label)) {
                return Err(TrainError::LabelMismatch { split: name, label: r.label.clone() });
            }
        }
        Ok(Self { labels, train, dev, test })
    }

    /// Infers the vocabulary from the training split; dev and test must not
    /// introduce new labels.
    pub fn from_splits(
        train: Vec<SentenceRecord>,
        dev: Vec<SentenceRecord>,
        test: Vec<SentenceRecord>,
    ) -> Result<Self, TrainError> {
        let labels = canonical_labels(train.iter().map(|r| r.label.as_str()));
        Self::new(labels, train, dev, test)
    }

    /// Reads `train.tsv`, `dev.tsv` and, when present, `test.tsv` from `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, TrainError> {
        let train = load_sentences(&dir.join("train.tsv"))?;
        let dev = load_sentences(&dir.join("dev.tsv"))?;
        let test_path = dir.join("test.tsv");
        let test = if test_path.exists() { load_sentences(&test_path)? } else { Vec::new() };
        Self::from_splits(train, dev, test)
    }

    pub fn save_dir(&self, dir: &Path) -> Result<(), TrainError> {
        std::fs::create_dir_all(dir)?;
        for (name, split) in [("train", &self.train), ("dev", &self.dev), ("test", &self.test)] {
            let mut f = File::create(dir.join(format!("{name}.tsv")))?;
            write_sentences(split, &mut f)?;
        }
        Ok(())
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn train(&self) -> &[SentenceRecord] {
        &self.train
    }

    pub fn dev(&self) -> &[SentenceRecord] {
        &self.dev
    }

    pub fn test(&self) -> &[SentenceRecord] {
        &self.test
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn hash(&self) -> String {
        let mut buf = Vec::new();
        for split in [&self.train, &self.dev, &self.test] {
            write_sentences(split, &mut buf).expect("in-memory write");
        }
        buf.extend(self.labels.join("\t").as_bytes());
        hex::encode(Sha256::digest(&buf))
    }

    fn examples<T: Scalar>(&self, split: &[SentenceRecord]) -> Vec<Example<T>> {
        split
            .iter()
            .map(|r| Example::class(r.text.clone(), self.label_index(&r.label).expect("validated label")))
            .collect()
    }
}

const SENTENCE_HEADER: &str = "text\tlabel";

/// Parses a `text<TAB>label` split. Rows with stray tabs are rejected.
pub fn read_sentences<R: BufRead>(reader: R, origin: &str) -> Result<Vec<SentenceRecord>, TrainError> {
    let mut out = Vec::new();
    let mut header = false;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        let perr = |message: String| TrainError::Parse { path: origin.to_owned(), line: line_no, message };
        if !header {
            if line != SENTENCE_HEADER {
                return Err(perr(format!("expected header {SENTENCE_HEADER:?}")));
            }
            header = true;
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            return Err(perr(format!("expected 2 tab-separated columns, found {}", fields.len())));
        }
        let (text, label) = (fields[0].trim(), fields[1].trim());
        if text.is_empty() || label.is_empty() {
            return Err(perr("empty text or label".into()));
        }
        out.push(SentenceRecord { id: out.len(), text: text.to_owned(), label: label.to_owned() });
    }
    if !header {
        return Err(TrainError::Parse { path: origin.to_owned(), line: 1, message: "missing header".into() });
    }
    Ok(out)
}

pub fn load_sentences(path: &Path) -> Result<Vec<SentenceRecord>, TrainError> {
    read_sentences(BufReader::new(File::open(path)?), &path.display().to_string())
}

pub fn write_sentences<W: Write>(records: &[SentenceRecord], mut out: W) -> Result<(), TrainError> {
    writeln!(out, "{SENTENCE_HEADER}")?;
    for r in records {
        if r.text.contains(['\t', '\n', '\r']) || r.label.contains(['\t', '\n', '\r']) {
            return Err(TrainError::InvalidJob(format!("record {} contains a tab or newline", r.id)));
        }
        writeln!(out, "{}\t{}", r.text, r.label)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct FinetuneJob<T: Scalar> {
    pub dataset: LabeledSentenceSet,
    pub config: TrainConfig<T>,
    pub seed: u64,
    /// Head of the checkpoint the backend was loaded from, if any.
    pub base_head: Option<ModelHead>,
    pub base_checkpoint: Option<String>,
}

impl<T: Scalar> FinetuneJob<T> {
    pub fn new(dataset: LabeledSentenceSet, seed: u64) -> Self {
        Self { dataset, config: TrainConfig::sentence_finetuning(), seed, base_head: None, base_checkpoint: None }
    }
}

/// Cross-entropy fine-tuning on sentence labels with early stopping on dev
/// loss. A base classification head is kept when its labels match the task;
/// any other head is replaced.
pub fn finetune<T, B>(job: &FinetuneJob<T>, mut backend: B) -> Result<Checkpoint<T, B>, TrainError>
where
    T: Scalar,
    B: EncoderBackend<T>,
{
    let ds = &job.dataset;
    if ds.labels.len() < 2 {
        return Err(TrainError::InvalidJob("fine-tuning needs at least two labels".into()));
    }
    if ds.train.is_empty() {
        return Err(TrainError::Insufficient { split: "train", required: 1, available: 0 });
    }
    if ds.dev.is_empty() {
        return Err(TrainError::Insufficient { split: "dev", required: 1, available: 0 });
    }
    let train_labels: BTreeSet<&str> = ds.train.iter().map(|r| r.label.as_str()).collect();
    if train_labels.len() == 1 {
        return Err(TrainError::SingleClass(ds.train[0].label.clone()));
    }

    let head = ModelHead::Classification { labels: ds.labels.clone() };
    if job.base_head.as_ref() != Some(&head) || backend.output_dim() != ds.labels.len() {
        backend.reset_head(ds.labels.len());
    }
    let train = ds.examples(&ds.train);
    let dev = ds.examples(&ds.dev);
    let config = TrainConfig { seed: job.seed, ..job.config.clone() };
    let report = fit(&mut backend, &train, &dev, Objective::CrossEntropy, &config)?;

    Ok(Checkpoint {
        meta: CheckpointMeta {
            format: CHECKPOINT_FORMAT.to_owned(),
            kind: JobKind::Finetune,
            head,
            data_hash: ds.hash(),
            config,
            seed: job.seed,
            fit: report,
            warnings: Vec::new(),
            base_checkpoint: job.base_checkpoint.clone(),
        },
        model: backend,
    })
}

fn draw(
    split: &[SentenceRecord],
    n: usize,
    name: &'static str,
    rng: &mut ChaCha8Rng,
    stratified: bool,
) -> Result<Vec<SentenceRecord>, TrainError> {
    if n > split.len() {
        return Err(TrainError::Insufficient { split: name, required: n, available: split.len() });
    }
    let mut picked: Vec<usize> = if stratified {
        let mut by_label: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, r) in split.iter().enumerate() {
            by_label.entry(&r.label).or_default().push(i);
        }
        // Largest-remainder allocation of n across labels.
        let total = split.len();
        let mut quotas: Vec<(&str, usize, usize)> = by_label
            .iter()
            .map(|(l, idx)| (*l, idx.len() * n / total, idx.len() * n % total))
            .collect();
        let mut left = n - quotas.iter().map(|q| q.1).sum::<usize>();
        let mut order: Vec<usize> = (0..quotas.len()).collect();
        order.sort_by(|&a, &b| quotas[b].2.cmp(&quotas[a].2).then(a.cmp(&b)));
        for i in order {
            if left == 0 {
                break;
            }
            quotas[i].1 += 1;
            left -= 1;
        }
        let mut out = Vec::with_capacity(n);
        for (label, quota, _) in quotas {
            let idx = &by_label[label];
            out.extend(sample(rng, idx.len(), quota).into_iter().map(|j| idx[j]));
        }
        out
    } else {
        sample(rng, split.len(), n).into_vec()
    };
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| split[i].clone()).collect())
}

/// Uniform sampling without replacement of `n_train` training and `n_dev`
/// development rows; the test split is passed through. Sampled rows keep
/// their original order.
pub fn fewshot_sample(
    dataset: &LabeledSentenceSet,
    n_train: usize,
    n_dev: usize,
    seed: u64,
    stratified: bool,
) -> Result<LabeledSentenceSet, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = draw(&dataset.train, n_train, "train", &mut rng, stratified)?;
    let dev = draw(&dataset.dev, n_dev, "dev", &mut rng, stratified)?;
    Ok(LabeledSentenceSet { labels: dataset.labels.clone(), train, dev, test: dataset.test.clone() })
}

#[derive(Debug, Clone)]
pub struct SeedRun<C, M> {
    pub seed: u64,
    pub output: C,
    pub metric: M,
}

#[derive(Debug, Clone)]
pub struct SeedRuns<C, M> {
    pub runs: Vec<SeedRun<C, M>>,
    /// Arithmetic mean of the per-seed metrics.
    pub mean: M,
}

/// Runs `job` once per seed and averages the returned metric.
pub fn run_seeds<C, M, F>(seeds: &[u64], mut job: F) -> Result<SeedRuns<C, M>, TrainError>
where
    M: Num + FromPrimitive + Copy,
    F: FnMut(u64) -> Result<(C, M), TrainError>,
{
    if seeds.is_empty() {
        return Err(TrainError::NoSeeds);
    }
    let mut runs = Vec::with_capacity(seeds.len());
    let mut sum = M::zero();
    for &seed in seeds {
        let (output, metric) = job(seed).map_err(|e| TrainError::Seed { seed, source: Box::new(e) })?;
        sum = sum + metric;
        runs.push(SeedRun { seed, output, metric });
    }
    let mean = sum / M::from_usize(seeds.len()).expect("seed count representable");
    Ok(SeedRuns { runs, mean })
}
