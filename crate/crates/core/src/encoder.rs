//! Text-scoring backends: tokenize, embed, mean-pool, linear head.
//!
//! [`EncoderBackend`] is the contract the training, filtering and inference
//! code is written against. [`ReferenceEncoder`] is a small self-contained
//! implementation (bag of word and character-trigram embeddings) so the whole
//! pipeline runs without external model weights. Adapters for pretrained
//! transformer checkpoints implement the same trait.

use std::collections::BTreeMap;

use rand::distributions::Uniform;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::lexicon::clamp_valence;
use crate::scalar::Scalar;

/// Learning rate used with pretrained transformer adapters.
pub const EXTERNAL_LEARNING_RATE: f64 = 2e-5;
pub const REFERENCE_LEARNING_RATE: f64 = 1e-2;
pub const DEFAULT_EMBEDDING_DIM: usize = 32;
pub const INIT_RANGE: f64 = 0.05;
const NGRAM: usize = 3;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("input {0:?} produced no tokens")]
    EmptyInput(String),
    #[error("training diverged: non-finite loss {0}")]
    Divergence(f64),
    #[error("batch is empty")]
    EmptyBatch,
    #[error("{0} set is empty")]
    EmptyDataset(&'static str),
    #[error("target does not match objective: {0}")]
    TargetMismatch(String),
    #[error("expected {expected} parameters, got {found}")]
    ParameterLength { expected: usize, found: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Mse,
    CrossEntropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", bound = "T: Scalar")]
pub enum Target<T: Scalar> {
    Score(T),
    Class(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Example<T: Scalar> {
    pub text: String,
    pub target: Target<T>,
}

impl<T: Scalar> Example<T> {
    pub fn score(text: impl Into<String>, score: T) -> Self {
        Self { text: text.into(), target: Target::Score(score) }
    }

    pub fn class(text: impl Into<String>, class: usize) -> Self {
        Self { text: text.into(), target: Target::Class(class) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TrainConfig<T: Scalar> {
    pub learning_rate: T,
    pub max_epochs: usize,
    pub patience: usize,
    pub dropout: T,
    pub max_len: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl<T: Scalar> TrainConfig<T> {
    /// Word-level pretraining: 100 epochs, max length 10.
    pub fn lexicon_pretraining() -> Self {
        Self {
            learning_rate: T::lit(REFERENCE_LEARNING_RATE),
            max_epochs: 100,
            patience: 5,
            dropout: T::lit(0.2),
            max_len: 10,
            batch_size: 32,
            seed: 0,
        }
    }

    /// Sentence-level fine-tuning: 20 epochs, max length 512, batch 32.
    pub fn sentence_finetuning() -> Self {
        Self { max_epochs: 20, max_len: 512, ..Self::lexicon_pretraining() }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        let bad = |m: &str| Err(EncoderError::InvalidConfig(m.to_owned()));
        if !(self.learning_rate > T::zero()) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be positive");
        }
        if self.max_epochs == 0 || self.patience == 0 || self.max_len == 0 || self.batch_size == 0 {
            return bad("max_epochs, patience, max_len and batch_size must be positive");
        }
        if self.patience > self.max_epochs {
            return bad("patience must not exceed max_epochs");
        }
        if !(self.dropout >= T::zero() && self.dropout < T::one()) {
            return bad("dropout must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Trainable text scorer: `forward(text) = head(mean of token embeddings)`.
///
/// One output means a regression head, `K ≥ 2` outputs are class logits.
pub trait EncoderBackend<T: Scalar> {
    fn output_dim(&self) -> usize;

    /// Applies sequence length, dropout and RNG seed from a training config.
    fn configure(&mut self, config: &TrainConfig<T>);

    /// Grows the vocabulary with tokens from training texts.
    fn prepare(&mut self, _texts: &[&str]) {}

    /// Replaces the head with a freshly initialized one of `outputs` outputs.
    fn reset_head(&mut self, outputs: usize);

    /// Re-draws every parameter from the initial distribution.
    fn reinitialize(&mut self);

    fn forward(&mut self, text: &str, mode: Mode) -> Result<Vec<T>, EncoderError>;

    /// Evaluation-mode forward pass. Regression outputs are clamped to `[-5, 5]`.
    fn predict(&self, text: &str) -> Result<Vec<T>, EncoderError>;

    /// Unclamped evaluation-mode batch loss; parameters are untouched.
    fn loss(&self, batch: &[Example<T>], objective: Objective) -> Result<T, EncoderError>;

    /// One gradient update on every trainable parameter. Returns the
    /// pre-update batch loss.
    fn train_step(
        &mut self,
        batch: &[Example<T>],
        objective: Objective,
        config: &TrainConfig<T>,
    ) -> Result<T, EncoderError>;

    fn parameters(&self) -> Vec<T>;

    fn set_parameters(&mut self, params: &[T]) -> Result<(), EncoderError>;
}

fn hash_seed(seed: u64, tag: &str, token: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(tag.as_bytes());
    h.update([0u8]);
    h.update(token.as_bytes());
    let d = h.finalize();
    let mut b = [0u8; 8];
    b.copy_from_slice(&d[..8]);
    u64::from_le_bytes(b)
}

fn uniform_row<T: Scalar>(seed: u64, tag: &str, token: &str, len: usize) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(hash_seed(seed, tag, token));
    let dist = Uniform::new_inclusive(T::lit(-INIT_RANGE), T::lit(INIT_RANGE));
    (0..len).map(|_| dist.sample(&mut rng)).collect()
}

fn char_ngrams(token: &str) -> Vec<String> {
    let chars: Vec<char> = std::iter::once('<').chain(token.chars()).chain(std::iter::once('>')).collect();
    chars.windows(NGRAM).map(|w| w.iter().collect()).collect()
}

fn dropout_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(hash_seed(seed, "dropout", ""))
}

fn default_rng() -> ChaCha8Rng {
    dropout_rng(0)
}

/// Token feature rows for one text, plus the pooled vector.
struct Pooled<T> {
    rows: Vec<Vec<usize>>,
    vector: Vec<T>,
}

/// Sparse gradient: touched embedding rows and the dense head.
struct Gradient<T> {
    rows: BTreeMap<usize, Vec<T>>,
    weight: Vec<T>,
    bias: Vec<T>,
}

/// Bag-of-embeddings encoder over whitespace tokens and character trigrams.
///
/// A token's vector is the mean of its word row (when the word is in the
/// vocabulary) and the rows of its known boundary-marked trigrams; a token
/// with neither falls back to the shared unknown row. Parameters are drawn
/// from `U[-0.05, 0.05]` with a generator seeded per token, so initial
/// values depend only on the seed and the token.
///
/// Mean pooling makes the output invariant to token order. That is a
/// property of this encoder, not of attention-based backends.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ReferenceEncoder<T: Scalar> {
    dim: usize,
    outputs: usize,
    max_len: usize,
    dropout: T,
    seed: u64,
    words: BTreeMap<String, usize>,
    ngrams: BTreeMap<String, usize>,
    /// Row-major `rows × dim`; row 0 is the unknown-token row.
    embeddings: Vec<T>,
    /// Row-major `outputs × dim`.
    head_weight: Vec<T>,
    head_bias: Vec<T>,
    #[serde(skip, default = "default_rng")]
    rng: ChaCha8Rng,
}

impl<T: Scalar> ReferenceEncoder<T> {
    pub fn new(dim: usize, outputs: usize, seed: u64) -> Self {
        assert!(dim > 0 && outputs > 0, "dimension and output count must be positive");
        let mut enc = Self {
            dim,
            outputs,
            max_len: 10,
            dropout: T::lit(0.2),
            seed,
            words: BTreeMap::new(),
            ngrams: BTreeMap::new(),
            embeddings: uniform_row(seed, "unk", "", dim),
            head_weight: Vec::new(),
            head_bias: Vec::new(),
            rng: dropout_rng(seed),
        };
        enc.init_head();
        enc
    }

    /// Builds an encoder whose vocabulary covers `texts`.
    pub fn with_vocabulary(texts: &[&str], dim: usize, outputs: usize, seed: u64) -> Self {
        let mut enc = Self::new(dim, outputs, seed);
        enc.prepare(texts);
        enc
    }

    fn init_head(&mut self) {
        let key = self.outputs.to_string();
        self.head_weight = uniform_row(self.seed, "head_weight", &key, self.outputs * self.dim);
        self.head_bias = uniform_row(self.seed, "head_bias", &key, self.outputs);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn set_max_len(&mut self, max_len: usize) {
        self.max_len = max_len.max(1);
    }

    pub fn n_rows(&self) -> usize {
        self.embeddings.len() / self.dim
    }

    pub fn word_count(&self) -> usize {
        self.words.len()
    }

    pub fn contains_word(&self, word: &str) -> bool {
        self.words.contains_key(word)
    }

    /// Whitespace tokens truncated to the configured maximum length.
    pub fn tokenize<'a>(&self, text: &'a str) -> Vec<&'a str> {
        text.split_whitespace().take(self.max_len).collect()
    }

    fn push_row(&mut self, tag: &str, token: &str) -> usize {
        let row = self.n_rows();
        self.embeddings.extend(uniform_row::<T>(self.seed, tag, token, self.dim));
        row
    }

    fn token_rows(&self, token: &str) -> Vec<usize> {
        let mut rows: Vec<usize> = self.words.get(token).copied().into_iter().collect();
        rows.extend(char_ngrams(token).iter().filter_map(|g| self.ngrams.get(g).copied()));
        if rows.is_empty() {
            rows.push(0);
        }
        rows
    }

    fn row(&self, r: usize) -> &[T] {
        &self.embeddings[r * self.dim..(r + 1) * self.dim]
    }

    fn pool(&self, text: &str) -> Result<Pooled<T>, EncoderError> {
        let tokens = self.tokenize(text);
        if tokens.is_empty() {
            return Err(EncoderError::EmptyInput(text.to_owned()));
        }
        let mut vector = vec![T::zero(); self.dim];
        let mut all_rows = Vec::with_capacity(tokens.len());
        let n_tokens = T::from_count(tokens.len());
        for token in tokens {
            let rows = self.token_rows(token);
            let scale = T::one() / (n_tokens * T::from_count(rows.len()));
            for &r in &rows {
                for (v, &e) in vector.iter_mut().zip(self.row(r)) {
                    *v += e * scale;
                }
            }
            all_rows.push(rows);
        }
        Ok(Pooled { rows: all_rows, vector })
    }

    fn head(&self, h: &[T]) -> Vec<T> {
        (0..self.outputs)
            .map(|k| {
                let w = &self.head_weight[k * self.dim..(k + 1) * self.dim];
                w.iter().zip(h).map(|(&a, &b)| a * b).sum::<T>() + self.head_bias[k]
            })
            .collect()
    }

    fn draw_mask(&mut self) -> Option<Vec<T>> {
        if self.dropout <= T::zero() {
            return None;
        }
        let keep = T::one() - self.dropout;
        let p_drop = self.dropout.to_f64().unwrap_or(0.0);
        Some(
            (0..self.dim)
                .map(|_| if self.rng.gen::<f64>() < p_drop { T::zero() } else { T::one() / keep })
                .collect(),
        )
    }

    fn check_target(&self, target: &Target<T>, objective: Objective) -> Result<(), EncoderError> {
        match (objective, target) {
            (Objective::Mse, Target::Score(_)) if self.outputs == 1 => Ok(()),
            (Objective::CrossEntropy, Target::Class(c)) if self.outputs >= 2 && *c < self.outputs => Ok(()),
            _ => Err(EncoderError::TargetMismatch(format!(
                "{objective:?} with {target:?} on a head with {} outputs",
                self.outputs
            ))),
        }
    }

    /// Loss and gradient over a batch. `masks` supplies per-example dropout
    /// masks; `None` means evaluation mode.
    fn loss_and_gradient(
        &self,
        batch: &[Example<T>],
        objective: Objective,
        masks: Option<&[Option<Vec<T>>]>,
    ) -> Result<(T, Gradient<T>), EncoderError> {
        if batch.is_empty() {
            return Err(EncoderError::EmptyBatch);
        }
        let n = T::from_count(batch.len());
        let mut grad = Gradient {
            rows: BTreeMap::new(),
            weight: vec![T::zero(); self.head_weight.len()],
            bias: vec![T::zero(); self.outputs],
        };
        let mut total = T::zero();
        for (i, ex) in batch.iter().enumerate() {
            self.check_target(&ex.target, objective)?;
            let pooled = self.pool(&ex.text)?;
            let mask = masks.and_then(|m| m[i].as_ref());
            let h: Vec<T> = match mask {
                Some(m) => pooled.vector.iter().zip(m).map(|(&p, &k)| p * k).collect(),
                None => pooled.vector.clone(),
            };
            let z = self.head(&h);
            // d(loss)/d(logits) for this example, already divided by batch size.
            let dz: Vec<T> = match (&ex.target, objective) {
                (Target::Score(y), Objective::Mse) => {
                    let diff = z[0] - *y;
                    total += diff * diff;
                    vec![T::lit(2.0) * diff / n]
                }
                (Target::Class(c), Objective::CrossEntropy) => {
                    let m = z.iter().copied().fold(T::neg_infinity(), T::max);
                    let exps: Vec<T> = z.iter().map(|&v| (v - m).exp()).collect();
                    let sum: T = exps.iter().copied().sum();
                    total += m + sum.ln() - z[*c];
                    exps.iter()
                        .enumerate()
                        .map(|(k, &e)| (e / sum - if k == *c { T::one() } else { T::zero() }) / n)
                        .collect()
                }
                _ => unreachable!("target checked above"),
            };
            let mut dh = vec![T::zero(); self.dim];
            for (k, &g) in dz.iter().enumerate() {
                grad.bias[k] += g;
                let w = &self.head_weight[k * self.dim..(k + 1) * self.dim];
                let gw = &mut grad.weight[k * self.dim..(k + 1) * self.dim];
                for j in 0..self.dim {
                    gw[j] += g * h[j];
                    dh[j] += g * w[j];
                }
            }
            if let Some(m) = mask {
                for (d, &k) in dh.iter_mut().zip(m) {
                    *d *= k;
                }
            }
            let n_tokens = T::from_count(pooled.rows.len());
            for rows in &pooled.rows {
                let scale = T::one() / (n_tokens * T::from_count(rows.len()));
                for &r in rows {
                    let g = grad.rows.entry(r).or_insert_with(|| vec![T::zero(); self.dim]);
                    for (gj, &dj) in g.iter_mut().zip(&dh) {
                        *gj += dj * scale;
                    }
                }
            }
        }
        let loss = total / n;
        if !loss.is_finite() {
            return Err(EncoderError::Divergence(loss.to_f64().unwrap_or(f64::NAN)));
        }
        Ok((loss, grad))
    }

    /// Evaluation-mode loss and dense gradient in [`EncoderBackend::parameters`]
    /// layout (embeddings, head weight, head bias).
    pub fn gradient(&self, batch: &[Example<T>], objective: Objective) -> Result<(T, Vec<T>), EncoderError> {
        let (loss, g) = self.loss_and_gradient(batch, objective, None)?;
        let mut dense = vec![T::zero(); self.embeddings.len()];
        for (r, row) in g.rows {
            dense[r * self.dim..(r + 1) * self.dim].copy_from_slice(&row);
        }
        dense.extend(g.weight);
        dense.extend(g.bias);
        Ok((loss, dense))
    }

    /// Sizes of the parameter groups in [`EncoderBackend::parameters`] order.
    pub fn parameter_groups(&self) -> [(&'static str, usize); 3] {
        [
            ("embedding", self.embeddings.len()),
            ("head_weight", self.head_weight.len()),
            ("head_bias", self.head_bias.len()),
        ]
    }
}

impl<T: Scalar> EncoderBackend<T> for ReferenceEncoder<T> {
    fn output_dim(&self) -> usize {
        self.outputs
    }

    fn configure(&mut self, config: &TrainConfig<T>) {
        self.max_len = config.max_len.max(1);
        self.dropout = config.dropout;
        self.rng = dropout_rng(config.seed);
    }

    fn prepare(&mut self, texts: &[&str]) {
        for text in texts {
            for token in text.split_whitespace().take(self.max_len) {
                if !self.words.contains_key(token) {
                    let row = self.push_row("word", token);
                    self.words.insert(token.to_owned(), row);
                }
                for gram in char_ngrams(token) {
                    if !self.ngrams.contains_key(&gram) {
                        let row = self.push_row("ngram", &gram);
                        self.ngrams.insert(gram, row);
                    }
                }
            }
        }
    }

    fn reset_head(&mut self, outputs: usize) {
        assert!(outputs > 0, "head needs at least one output");
        self.outputs = outputs;
        self.init_head();
    }

    fn reinitialize(&mut self) {
        let mut fresh = uniform_row(self.seed, "unk", "", self.dim);
        let mut rows: Vec<(usize, &str, &str)> = self
            .words
            .iter()
            .map(|(w, &r)| (r, "word", w.as_str()))
            .chain(self.ngrams.iter().map(|(g, &r)| (r, "ngram", g.as_str())))
            .collect();
        rows.sort_unstable_by_key(|r| r.0);
        for (_, tag, token) in rows {
            fresh.extend(uniform_row::<T>(self.seed, tag, token, self.dim));
        }
        self.embeddings = fresh;
        self.init_head();
    }

    fn forward(&mut self, text: &str, mode: Mode) -> Result<Vec<T>, EncoderError> {
        match mode {
            Mode::Eval => self.predict(text),
            Mode::Train => {
                let pooled = self.pool(text)?;
                let h = match self.draw_mask() {
                    Some(m) => pooled.vector.iter().zip(&m).map(|(&p, &k)| p * k).collect(),
                    None => pooled.vector,
                };
                Ok(self.head(&h))
            }
        }
    }

    fn predict(&self, text: &str) -> Result<Vec<T>, EncoderError> {
        let pooled = self.pool(text)?;
        let mut out = self.head(&pooled.vector);
        if self.outputs == 1 {
            out[0] = clamp_valence(out[0]);
        }
        Ok(out)
    }

    fn loss(&self, batch: &[Example<T>], objective: Objective) -> Result<T, EncoderError> {
        self.loss_and_gradient(batch, objective, None).map(|(l, _)| l)
    }

    fn train_step(
        &mut self,
        batch: &[Example<T>],
        objective: Objective,
        config: &TrainConfig<T>,
    ) -> Result<T, EncoderError> {
        let masks: Vec<Option<Vec<T>>> = batch.iter().map(|_| self.draw_mask()).collect();
        let (loss, grad) = self.loss_and_gradient(batch, objective, Some(&masks))?;
        let lr = config.learning_rate;
        for (r, g) in grad.rows {
            let row = &mut self.embeddings[r * self.dim..(r + 1) * self.dim];
            for (p, gj) in row.iter_mut().zip(g) {
                *p -= lr * gj;
            }
        }
        for (p, &g) in self.head_weight.iter_mut().zip(&grad.weight) {
            *p -= lr * g;
        }
        for (p, &g) in self.head_bias.iter_mut().zip(&grad.bias) {
            *p -= lr * g;
        }
        Ok(loss)
    }

    fn parameters(&self) -> Vec<T> {
        let mut p = self.embeddings.clone();
        p.extend_from_slice(&self.head_weight);
        p.extend_from_slice(&self.head_bias);
        p
    }

    fn set_parameters(&mut self, params: &[T]) -> Result<(), EncoderError> {
        let (ne, nw, nb) = (self.embeddings.len(), self.head_weight.len(), self.head_bias.len());
        if params.len() != ne + nw + nb {
            return Err(EncoderError::ParameterLength { expected: ne + nw + nb, found: params.len() });
        }
        self.embeddings.copy_from_slice(&params[..ne]);
        self.head_weight.copy_from_slice(&params[ne..ne + nw]);
        self.head_bias.copy_from_slice(&params[ne + nw..]);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct EpochRecord<T: Scalar> {
    pub epoch: usize,
    pub train_loss: T,
    pub val_loss: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FitReport<T: Scalar> {
    pub curve: Vec<EpochRecord<T>>,
    pub best_epoch: usize,
    pub best_val_loss: T,
    pub stopped_early: bool,
}

/// Mini-batch gradient descent with early stopping on validation loss.
///
/// Training stops once validation loss has not strictly improved for
/// `patience` consecutive epochs; the backend is left holding the
/// parameters of the best validation epoch.
pub fn fit<T: Scalar, B: EncoderBackend<T> + ?Sized>(
    backend: &mut B,
    train: &[Example<T>],
    val: &[Example<T>],
    objective: Objective,
    config: &TrainConfig<T>,
) -> Result<FitReport<T>, EncoderError> {
    config.validate()?;
    if train.is_empty() {
        return Err(EncoderError::EmptyDataset("training"));
    }
    if val.is_empty() {
        return Err(EncoderError::EmptyDataset("validation"));
    }
    backend.configure(config);
    let texts: Vec<&str> = train.iter().map(|e| e.text.as_str()).collect();
    backend.prepare(&texts);

    let mut rng = ChaCha8Rng::seed_from_u64(hash_seed(config.seed, "shuffle", ""));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut curve = Vec::new();
    let mut best: Option<(usize, T, Vec<T>)> = None;
    let mut since_best = 0;
    let mut stopped_early = false;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut weighted = T::zero();
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<Example<T>> = chunk.iter().map(|&i| train[i].clone()).collect();
            let loss = backend.train_step(&batch, objective, config)?;
            weighted += loss * T::from_count(batch.len());
        }
        let train_loss = weighted / T::from_count(train.len());
        let val_loss = backend.loss(val, objective)?;
        curve.push(EpochRecord { epoch, train_loss, val_loss });

        match &best {
            Some((_, best_loss, _)) if !(val_loss < *best_loss) => since_best += 1,
            _ => {
                best = Some((epoch, val_loss, backend.parameters()));
                since_best = 0;
            }
        }
        if since_best >= config.patience {
            stopped_early = true;
            break;
        }
    }

    let (best_epoch, best_val_loss, params) = best.expect("at least one epoch ran");
    backend.set_parameters(&params)?;
    Ok(FitReport { curve, best_epoch, best_val_loss, stopped_early })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ReferenceEncoder<f64> {
        ReferenceEncoder::with_vocabulary(&["good bad", "fine"], 4, 1, 11)
    }

    #[test]
    fn empty_input_is_error() {
        let enc = tiny();
        assert!(matches!(enc.predict("   "), Err(EncoderError::EmptyInput(_))));
    }

    #[test]
    fn repeated_token_matches_single() {
        let enc = tiny();
        assert_eq!(enc.predict("good good good").unwrap(), enc.predict("good").unwrap());
    }

    #[test]
    fn unknown_tokens_back_off() {
        let enc = tiny();
        // shares trigrams with "good"
        let goods = enc.predict("goods").unwrap();
        assert!(goods[0].is_finite());
        // no known trigram at all
        assert!(enc.predict("zzzz").unwrap()[0].is_finite());
        assert_ne!(goods, enc.predict("zzzz").unwrap());
    }

    #[test]
    fn truncation_uses_first_tokens() {
        let mut enc = tiny();
        enc.set_max_len(2);
        assert_eq!(enc.predict("good bad fine fine").unwrap(), enc.predict("good bad").unwrap());
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let mut enc = tiny();
        let a = enc.forward("good bad", Mode::Eval).unwrap();
        let b = enc.forward("good bad", Mode::Eval).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn init_within_range() {
        let enc = tiny();
        assert!(enc.parameters().iter().all(|p| p.abs() <= INIT_RANGE));
    }

    #[test]
    fn reinitialize_restores_initial_state() {
        let mut enc = tiny();
        let initial = enc.parameters();
        let batch = vec![Example::score("good", 4.0)];
        enc.train_step(&batch, Objective::Mse, &TrainConfig::lexicon_pretraining()).unwrap();
        assert_ne!(enc.parameters(), initial);
        enc.reinitialize();
        assert_eq!(enc.parameters(), initial);
    }

    #[test]
    fn target_mismatch() {
        let mut enc = tiny();
        let cfg = TrainConfig::lexicon_pretraining();
        assert!(enc.train_step(&[Example::class("good", 0)], Objective::CrossEntropy, &cfg).is_err());
        assert!(enc.train_step(&[], Objective::Mse, &cfg).is_err());
        enc.reset_head(3);
        assert!(enc.train_step(&[Example::class("good", 3)], Objective::CrossEntropy, &cfg).is_err());
        assert!(enc.train_step(&[Example::class("good", 2)], Objective::CrossEntropy, &cfg).is_ok());
    }

    #[test]
    fn config_validation() {
        let mut cfg = TrainConfig::<f64>::lexicon_pretraining();
        assert!(cfg.validate().is_ok());
        cfg.patience = 200;
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig::<f64> { learning_rate: 0.0, ..TrainConfig::sentence_finetuning() };
        assert!(cfg.validate().is_err());
    }
}
