//! Iterative self-training filter for translated lexicon entries.
//!
//! A regressor trained on the English lexicon scores every candidate; a
//! candidate is accepted when its predicted valence lies strictly within
//! `alpha` of the valence it inherited from English. Accepted entries join
//! the training data and the model is retrained, until an iteration accepts
//! fewer than `beta` entries, the pool runs dry, or the iteration cap hits.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{fit, EncoderBackend, EncoderError, Example, Objective, TrainConfig};
use crate::lexicon::{
    clamp_valence, split_batch, EntryKey, LexiconEntry, LexiconError, Source, Split, ValenceLexicon,
};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("English base lexicon is empty")]
    EmptyBase,
    #[error("base lexicon entry {0} is not English")]
    NonEnglishBase(EntryKey),
    #[error("{} candidate keys also appear in the base lexicon, first {}", .0.len(), .0[0])]
    Overlap(Vec<EntryKey>),
    #[error("invalid filter config: {0}")]
    InvalidConfig(String),
    #[error("iteration {iteration}: {source}")]
    Training { iteration: usize, source: EncoderError },
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FilterConfig<T: Scalar> {
    /// Acceptance threshold on `|predicted − original|`; `+inf` accepts everything.
    pub alpha: T,
    /// Minimum acceptances per iteration for the loop to continue.
    pub beta: usize,
    pub split_ratio: f64,
    pub max_iterations: usize,
    /// Retrain from fresh parameters instead of the previous iteration's.
    pub cold_start: bool,
    pub train: TrainConfig<T>,
}

impl<T: Scalar> Default for FilterConfig<T> {
    fn default() -> Self {
        Self {
            alpha: T::lit(2.5),
            beta: 1000,
            split_ratio: 0.8,
            max_iterations: 50,
            cold_start: false,
            train: TrainConfig::lexicon_pretraining(),
        }
    }
}

impl<T: Scalar> FilterConfig<T> {
    pub fn validate(&self) -> Result<(), FilterError> {
        let bad = |m: &str| Err(FilterError::InvalidConfig(m.to_owned()));
        if self.alpha.is_nan() || self.alpha < T::zero() {
            return bad("alpha must be non-negative");
        }
        if self.beta == 0 {
            return bad("beta must be positive");
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return bad("split_ratio must lie strictly between 0 and 1");
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be positive");
        }
        self.train.validate().map_err(|e| FilterError::InvalidConfig(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FilterCandidate<T: Scalar> {
    pub entry: LexiconEntry<T>,
    pub original_valence: T,
    /// Latest clamped prediction.
    pub predicted_valence: Option<T>,
    pub accepted_at_iteration: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    BelowBeta,
    PoolEmpty,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct IterationRecord<T: Scalar> {
    pub iteration: usize,
    pub accepted: usize,
    pub pool_before: usize,
    pub pool_after: usize,
    pub train_size: usize,
    pub validation_size: usize,
    /// Best validation MSE of the model that scored this iteration.
    pub validation_loss: T,
    pub best_epoch: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub termination: Option<Termination>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FilterTrace<T: Scalar> {
    pub iterations: Vec<IterationRecord<T>>,
    pub termination: Termination,
}

impl<T: Scalar> FilterTrace<T> {
    /// One JSON object per iteration; the last carries the termination reason.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), FilterError> {
        for record in &self.iterations {
            serde_json::to_writer(&mut out, record)?;
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn total_accepted(&self) -> usize {
        self.iterations.iter().map(|r| r.accepted).sum()
    }
}

#[derive(Debug, Clone)]
pub struct FilterOutcome<T: Scalar> {
    /// Base entries plus accepted candidates, with split assignments.
    pub lexicon: ValenceLexicon<T>,
    pub trace: FilterTrace<T>,
    pub candidates: Vec<FilterCandidate<T>>,
}

impl<T: Scalar> FilterOutcome<T> {
    pub fn accepted(&self) -> Result<ValenceLexicon<T>, LexiconError> {
        ValenceLexicon::from_entries(
            self.candidates.iter().filter(|c| c.accepted_at_iteration.is_some()).map(|c| c.entry.clone()),
        )
    }

    pub fn rejected(&self) -> Result<ValenceLexicon<T>, LexiconError> {
        ValenceLexicon::from_entries(
            self.candidates.iter().filter(|c| c.accepted_at_iteration.is_none()).map(|c| c.entry.clone()),
        )
    }
}

fn examples<T: Scalar>(lexicon: &ValenceLexicon<T>, split: Split) -> Vec<Example<T>> {
    lexicon.split_entries(split).map(|e| Example::score(e.word(), e.valence())).collect()
}

pub fn run_filter<T, B>(
    base_en: &ValenceLexicon<T>,
    candidates: &ValenceLexicon<T>,
    config: &FilterConfig<T>,
    backend: &mut B,
) -> Result<FilterOutcome<T>, FilterError>
where
    T: Scalar,
    B: EncoderBackend<T> + Sync,
{
    config.validate()?;
    if base_en.is_empty() {
        return Err(FilterError::EmptyBase);
    }
    if let Some(key) = base_en.keys().find(|k| !k.lang.is_english()) {
        return Err(FilterError::NonEnglishBase(key.clone()));
    }
    let overlap: Vec<EntryKey> = candidates.keys().filter(|k| base_en.contains(k)).cloned().collect();
    if !overlap.is_empty() {
        return Err(FilterError::Overlap(overlap));
    }

    let seed = config.train.seed;
    let mut lexicon = base_en.clone();
    lexicon.assign_splits(seed, config.split_ratio)?;
    if backend.output_dim() != 1 {
        backend.reset_head(1);
    }

    let mut pool: Vec<FilterCandidate<T>> = candidates
        .entries()
        .map(|e| FilterCandidate {
            entry: e.clone(),
            original_valence: e.valence(),
            predicted_valence: None,
            accepted_at_iteration: None,
        })
        .collect();
    let mut accepted_all: Vec<FilterCandidate<T>> = Vec::new();
    let mut records = Vec::new();

    let termination = loop {
        let iteration = records.len() + 1;
        let train = examples(&lexicon, Split::Train);
        let val = examples(&lexicon, Split::Validation);
        if iteration > 1 && config.cold_start {
            backend.reinitialize();
        }
        let train_config = TrainConfig { seed: seed.wrapping_add(iteration as u64 - 1), ..config.train.clone() };
        let report = fit(backend, &train, &val, Objective::Mse, &train_config)
            .map_err(|source| FilterError::Training { iteration, source })?;

        let scorer: &B = backend;
        let predictions: Vec<T> = pool
            .par_iter()
            .map(|c| scorer.predict(c.entry.word()).map(|out| clamp_valence(out[0])))
            .collect::<Result<_, _>>()
            .map_err(|source| FilterError::Training { iteration, source })?;

        let pool_before = pool.len();
        let mut remaining = Vec::with_capacity(pool_before);
        let mut batch = Vec::new();
        for (mut cand, predicted) in pool.into_iter().zip(predictions) {
            cand.predicted_valence = Some(predicted);
            if (predicted - cand.original_valence).abs() < config.alpha {
                cand.accepted_at_iteration = Some(iteration);
                batch.push(cand);
            } else {
                remaining.push(cand);
            }
        }
        pool = remaining;

        let keys: Vec<EntryKey> = batch.iter().map(|c| c.entry.key()).collect();
        for cand in &mut batch {
            cand.entry = cand.entry.clone().with_source(Source::AcceptedByFilter);
            lexicon.insert(cand.entry.clone())?;
        }
        for (key, split) in split_batch(&keys, seed, config.split_ratio)? {
            lexicon.set_split(&key, split);
        }
        let accepted = batch.len();
        accepted_all.extend(batch);

        let stop = if pool.is_empty() {
            Some(Termination::PoolEmpty)
        } else if accepted < config.beta {
            Some(Termination::BelowBeta)
        } else if iteration >= config.max_iterations {
            Some(Termination::MaxIterations)
        } else {
            None
        };
        records.push(IterationRecord {
            iteration,
            accepted,
            pool_before,
            pool_after: pool.len(),
            train_size: train.len(),
            validation_size: val.len(),
            validation_loss: report.best_val_loss,
            best_epoch: report.best_epoch,
            termination: stop,
        });
        if let Some(reason) = stop {
            break reason;
        }
    };

    let mut all = accepted_all;
    all.extend(pool);
    all.sort_by_key(|c| c.entry.key());
    Ok(FilterOutcome { lexicon, trace: FilterTrace { iterations: records, termination }, candidates: all })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::ReferenceEncoder;
    use crate::lexicon::Lang;

    fn lex(rows: &[(&str, &str, f64)]) -> ValenceLexicon<f64> {
        ValenceLexicon::from_entries(rows.iter().map(|(w, l, v)| LexiconEntry::new(w, Lang::new(l).unwrap(), *v).unwrap()))
            .unwrap()
    }

    fn quick() -> FilterConfig<f64> {
        let mut c = FilterConfig::default();
        c.train.max_epochs = 3;
        c.train.patience = 1;
        c
    }

    fn base() -> ValenceLexicon<f64> {
        lex(&[("good", "en", 4.0), ("bad", "en", -4.0), ("ok", "en", 0.5), ("nice", "en", 3.0), ("awful", "en", -4.5)])
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut enc = ReferenceEncoder::new(4, 1, 0);
        let cands = lex(&[("bagus", "id", 4.0)]);
        assert!(matches!(run_filter(&lex(&[]), &cands, &quick(), &mut enc), Err(FilterError::EmptyBase)));
        let mixed = lex(&[("good", "en", 4.0), ("bagus", "id", 4.0)]);
        assert!(matches!(run_filter(&mixed, &cands, &quick(), &mut enc), Err(FilterError::NonEnglishBase(_))));
        let overlapping = lex(&[("good", "en", 4.0)]);
        assert!(matches!(run_filter(&base(), &overlapping, &quick(), &mut enc), Err(FilterError::Overlap(_))));
        let cfg = FilterConfig { alpha: -1.0, ..quick() };
        assert!(matches!(run_filter(&base(), &cands, &cfg, &mut enc), Err(FilterError::InvalidConfig(_))));
    }

    #[test]
    fn boundary_difference_is_rejected() {
        // An untrained-enough model predicts near zero; a candidate whose
        // original valence sits exactly alpha away must not pass.
        let mut enc = ReferenceEncoder::new(4, 1, 0);
        let mut cfg = quick();
        cfg.beta = 1;
        let cands = lex(&[("zz", "id", 5.0)]);
        let out = run_filter(&base(), &cands, &cfg, &mut enc).unwrap();
        let c = &out.candidates[0];
        let diff = (c.predicted_valence.unwrap() - c.original_valence).abs();
        cfg.alpha = diff;
        let mut enc = ReferenceEncoder::new(4, 1, 0);
        let out = run_filter(&base(), &cands, &cfg, &mut enc).unwrap();
        assert_eq!(out.trace.total_accepted(), 0);
        assert_eq!(out.trace.termination, Termination::BelowBeta);
    }

    #[test]
    fn empty_pool_terminates_immediately() {
        let mut enc = ReferenceEncoder::new(4, 1, 0);
        let out = run_filter(&base(), &lex(&[]), &quick(), &mut enc).unwrap();
        assert_eq!(out.trace.termination, Termination::PoolEmpty);
        assert_eq!(out.trace.iterations.len(), 1);
        assert_eq!(out.lexicon.len(), base().len());
    }

    /// Candidate `w{i}` (valence 5) is predicted correctly only from the
    /// `k`-th fit onwards, where `k` comes from the schedule.
    struct Scripted {
        fits: usize,
        schedule: Vec<usize>,
    }

    impl EncoderBackend<f64> for Scripted {
        fn output_dim(&self) -> usize {
            1
        }
        fn configure(&mut self, _: &TrainConfig<f64>) {
            self.fits += 1;
        }
        fn reset_head(&mut self, _: usize) {}
        fn reinitialize(&mut self) {}
        fn forward(&mut self, text: &str, _: crate::encoder::Mode) -> Result<Vec<f64>, EncoderError> {
            self.predict(text)
        }
        fn predict(&self, text: &str) -> Result<Vec<f64>, EncoderError> {
            let k = text.strip_prefix('w').and_then(|i| i.parse::<usize>().ok()).map(|i| self.schedule[i]);
            Ok(vec![if k.is_some_and(|k| self.fits >= k) { 5.0 } else { -5.0 }])
        }
        fn loss(&self, _: &[Example<f64>], _: Objective) -> Result<f64, EncoderError> {
            Ok(1.0)
        }
        fn train_step(&mut self, _: &[Example<f64>], _: Objective, _: &TrainConfig<f64>) -> Result<f64, EncoderError> {
            Ok(1.0)
        }
        fn parameters(&self) -> Vec<f64> {
            Vec::new()
        }
        fn set_parameters(&mut self, _: &[f64]) -> Result<(), EncoderError> {
            Ok(())
        }
    }

    fn scheduled_pool() -> ValenceLexicon<f64> {
        let words: Vec<String> = (0..6).map(|i| format!("w{i}")).collect();
        lex(&words.iter().map(|w| (w.as_str(), "id", 5.0)).collect::<Vec<_>>())
    }

    fn run_scripted(beta: usize, max_iterations: usize) -> FilterOutcome<f64> {
        let mut backend = Scripted { fits: 0, schedule: vec![1, 1, 2, 2, 3, 3] };
        let cfg = FilterConfig { beta, max_iterations, ..quick() };
        run_filter(&base(), &scheduled_pool(), &cfg, &mut backend).unwrap()
    }

    #[test]
    fn termination_reasons() {
        let out = run_scripted(2, 50);
        assert_eq!(out.trace.termination, Termination::PoolEmpty);
        assert_eq!(out.trace.iterations.iter().map(|r| r.accepted).collect::<Vec<_>>(), [2, 2, 2]);

        let out = run_scripted(2, 2);
        assert_eq!(out.trace.termination, Termination::MaxIterations);
        assert_eq!(out.trace.iterations.len(), 2);
        assert_eq!(out.rejected().unwrap().len(), 2);

        let out = run_scripted(3, 50);
        assert_eq!(out.trace.termination, Termination::BelowBeta);
        assert_eq!(out.trace.iterations.len(), 1);
    }

    #[test]
    fn pool_and_training_grow_consistently() {
        let out = run_scripted(2, 50);
        let base_len = base().len();
        for pair in out.trace.iterations.windows(2) {
            assert_eq!(pair[1].pool_before, pair[0].pool_after);
            assert_eq!(pair[0].pool_before - pair[0].pool_after, pair[0].accepted);
            assert_eq!(
                pair[1].train_size + pair[1].validation_size,
                pair[0].train_size + pair[0].validation_size + pair[0].accepted
            );
        }
        assert_eq!(out.lexicon.len(), base_len + 6);
        let accepted_at: Vec<Option<usize>> = out.candidates.iter().map(|c| c.accepted_at_iteration).collect();
        assert_eq!(accepted_at, [Some(1), Some(1), Some(2), Some(2), Some(3), Some(3)]);
        assert!(out.lexicon.entries().filter(|e| !e.lang().is_english()).all(|e| e.source() == Source::AcceptedByFilter));
    }

    #[test]
    fn trace_jsonl_one_line_per_iteration() {
        let mut enc = ReferenceEncoder::new(4, 1, 0);
        let cfg = FilterConfig { alpha: f64::INFINITY, ..quick() };
        let out = run_filter(&base(), &lex(&[("bagus", "id", 4.0)]), &cfg, &mut enc).unwrap();
        let mut buf = Vec::new();
        out.trace.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), out.trace.iterations.len());
        assert!(text.contains("\"termination\":\"pool_empty\""));
    }
}
