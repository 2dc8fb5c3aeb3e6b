//! Prompting baseline: label scoring by length-normalized log-likelihood.
//!
//! Each label is scored by rendering the prompt up to the label slot as the
//! context and asking a [`CompletionScorer`] for the per-token
//! log-probabilities of the label verbalizer. The label score is the mean of
//! those log-probabilities (label tokens only, not the whole prompt, unless
//! [`Normalization::FullPrompt`] is selected). The highest score wins; ties go
//! to the label that comes first in canonical order.

use std::collections::HashMap;
use std::path::Path;
use std::sync::RwLock;
use std::thread;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::eval::weighted_macro_f1;
use crate::lexicon::ClassMode;

const INPUT: &str = "[INPUT]";
const OPTIONS: &str = "[OPTIONS]";
const LABELS: &str = "[LABELS]";

/// Environment variable naming the remote scorer endpoint.
pub const SCORER_URL_ENV: &str = "LEXSENT_SCORER_URL";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("template {id}: {message}")]
    Template { id: u8, message: String },
    #[error("template {id}: unresolved placeholder {placeholder}")]
    Unresolved { id: u8, placeholder: &'static str },
    #[error("template {template}, label {label:?}: {message}")]
    Scorer { template: u8, label: String, message: String },
    #[error("need at least two labels, got {0}")]
    TooFewLabels(usize),
    #[error("verbalizer {0:?} appears twice")]
    DuplicateVerbalizer(String),
    #[error("no templates given")]
    NoTemplates,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Text(String),
    Input,
    Options,
    Labels,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    id: u8,
    source: String,
    segments: Vec<Segment>,
}

impl PromptTemplate {
    /// Parses `[INPUT]`, `[OPTIONS]` and `[LABELS]` placeholders. `[INPUT]`
    /// and `[LABELS]` must occur exactly once, `[OPTIONS]` at most once.
    pub fn parse(id: u8, source: &str) -> Result<Self, PromptError> {
        let mut segments = Vec::new();
        let mut rest = source;
        while !rest.is_empty() {
            let next = [(INPUT, Segment::Input), (OPTIONS, Segment::Options), (LABELS, Segment::Labels)]
                .into_iter()
                .filter_map(|(tag, seg)| rest.find(tag).map(|i| (i, tag, seg)))
                .min_by_key(|(i, _, _)| *i);
            match next {
                Some((i, tag, seg)) => {
                    if i > 0 {
                        segments.push(Segment::Text(rest[..i].to_owned()));
                    }
                    segments.push(seg);
                    rest = &rest[i + tag.len()..];
                }
                None => {
                    segments.push(Segment::Text(rest.to_owned()));
                    rest = "";
                }
            }
        }
        let count = |s: &Segment| segments.iter().filter(|x| *x == s).count();
        let err = |message: &str| Err(PromptError::Template { id, message: message.to_owned() });
        if count(&Segment::Input) != 1 {
            return err("[INPUT] must appear exactly once");
        }
        if count(&Segment::Labels) != 1 {
            return err("[LABELS] must appear exactly once");
        }
        if count(&Segment::Options) > 1 {
            return err("[OPTIONS] may appear at most once");
        }
        Ok(Self { id, source: source.to_owned(), segments })
    }

    pub fn load(path: &Path, id: u8) -> Result<Self, PromptError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(id, text.strip_suffix('\n').unwrap_or(&text))
    }

    pub fn id(&self) -> u8 {
        self.id
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn has_options(&self) -> bool {
        self.segments.contains(&Segment::Options)
    }

    fn render_segments(&self, segments: &[Segment], input: &str, options: &[String], label: &str) -> Result<String, PromptError> {
        let mut out = String::new();
        for seg in segments {
            match seg {
                Segment::Text(t) => out.push_str(t),
                Segment::Input => out.push_str(input),
                Segment::Labels => out.push_str(label),
                Segment::Options if options.is_empty() => {
                    return Err(PromptError::Unresolved { id: self.id, placeholder: OPTIONS })
                }
                Segment::Options => out.push_str(&options.join(", ")),
            }
        }
        Ok(out)
    }

    /// Literal substitution. `options` are joined with `", "` in the order
    /// given; they are ignored by templates without `[OPTIONS]`.
    pub fn render(&self, input: &str, options: &[String], label: &str) -> Result<String, PromptError> {
        self.render_segments(&self.segments, input, options, label)
    }

    /// Splits the rendered prompt at the label slot into (context, suffix).
    fn context(&self, input: &str, options: &[String]) -> Result<(String, String), PromptError> {
        let at = self.segments.iter().position(|s| *s == Segment::Labels).expect("validated");
        let before = self.render_segments(&self.segments[..at], input, options, "")?;
        let after = self.render_segments(&self.segments[at + 1..], input, options, "")?;
        Ok((before, after))
    }
}

/// The six built-in English templates, ids 1 to 6.
pub fn builtin_templates() -> Vec<PromptTemplate> {
    const SOURCES: [&str; 6] = [
        include_str!("../templates/prompt_1.txt"),
        include_str!("../templates/prompt_2.txt"),
        include_str!("../templates/prompt_3.txt"),
        include_str!("../templates/prompt_4.txt"),
        include_str!("../templates/prompt_5.txt"),
        include_str!("../templates/prompt_6.txt"),
    ];
    SOURCES
        .iter()
        .enumerate()
        .map(|(i, s)| PromptTemplate::parse(i as u8 + 1, s).expect("built-in template parses"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{message}")]
pub struct ScorerError {
    pub message: String,
    /// Transient failures (timeouts, 5xx) are retried.
    pub retryable: bool,
}

impl ScorerError {
    pub fn fatal(message: impl Into<String>) -> Self {
        Self { message: message.into(), retryable: false }
    }

    pub fn transient(message: impl Into<String>) -> Self {
        Self { message: message.into(), retryable: true }
    }
}

/// Per-token log-probabilities of `completion` given `context`.
pub trait CompletionScorer: Sync {
    fn score(&self, context: &str, completion: &str) -> Result<Vec<f64>, ScorerError>;
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub context: String,
    pub completion: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub token_logprobs: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MockEntry {
    context: String,
    completion: String,
    token_logprobs: Vec<f64>,
}

/// Table-driven scorer: exact `(context, completion)` entries take
/// precedence over per-completion defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MockScorer {
    #[serde(default)]
    completions: HashMap<String, Vec<f64>>,
    #[serde(default)]
    entries: Vec<MockEntry>,
    #[serde(skip)]
    index: HashMap<(String, String), usize>,
}

impl MockScorer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_completion(mut self, completion: &str, logprobs: Vec<f64>) -> Self {
        self.completions.insert(completion.to_owned(), logprobs);
        self
    }

    pub fn with_entry(mut self, context: &str, completion: &str, logprobs: Vec<f64>) -> Self {
        self.insert(context, completion, logprobs);
        self
    }

    pub fn insert(&mut self, context: &str, completion: &str, logprobs: Vec<f64>) {
        let key = (context.to_owned(), completion.to_owned());
        match self.index.get(&key) {
            Some(&i) => self.entries[i].token_logprobs = logprobs,
            None => {
                self.index.insert(key, self.entries.len());
                self.entries.push(MockEntry {
                    context: context.to_owned(),
                    completion: completion.to_owned(),
                    token_logprobs: logprobs,
                });
            }
        }
    }

    /// Reads `{"completions": {label: [..]}, "entries": [{context, completion, token_logprobs}]}`.
    pub fn from_json(text: &str) -> Result<Self, PromptError> {
        let mut scorer: MockScorer = serde_json::from_str(text)?;
        scorer.index = scorer
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| ((e.context.clone(), e.completion.clone()), i))
            .collect();
        Ok(scorer)
    }
}

impl CompletionScorer for MockScorer {
    fn score(&self, context: &str, completion: &str) -> Result<Vec<f64>, ScorerError> {
        if let Some(&i) = self.index.get(&(context.to_owned(), completion.to_owned())) {
            return Ok(self.entries[i].token_logprobs.clone());
        }
        self.completions
            .get(completion)
            .cloned()
            .ok_or_else(|| ScorerError::fatal(format!("no table entry for completion {completion:?}")))
    }
}

/// Scorer behind an HTTP endpoint speaking the `ScoreRequest` /
/// `ScoreResponse` JSON contract.
pub struct HttpScorer {
    endpoint: String,
    agent: ureq::Agent,
}

impl HttpScorer {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder().timeout_global(Some(timeout)).build();
        Self { endpoint: endpoint.into(), agent: config.into() }
    }

    pub fn from_env(timeout: Duration) -> Option<Self> {
        std::env::var(SCORER_URL_ENV).ok().filter(|u| !u.is_empty()).map(|u| Self::new(u, timeout))
    }
}

impl CompletionScorer for HttpScorer {
    fn score(&self, context: &str, completion: &str) -> Result<Vec<f64>, ScorerError> {
        let request = ScoreRequest { context: context.to_owned(), completion: completion.to_owned() };
        let mut response = self.agent.post(&self.endpoint).send_json(&request).map_err(|e| match e {
            ureq::Error::StatusCode(code) if code < 500 && code != 429 => {
                ScorerError::fatal(format!("scorer returned HTTP {code}"))
            }
            other => ScorerError::transient(other.to_string()),
        })?;
        let body: ScoreResponse = response
            .body_mut()
            .read_json()
            .map_err(|e| ScorerError::fatal(format!("malformed scorer response: {e}")))?;
        Ok(body.token_logprobs)
    }
}

/// Memoizes another scorer by a hash of `(context, completion)`.
pub struct CachedScorer<S> {
    inner: S,
    cache: RwLock<HashMap<[u8; 32], Vec<f64>>>,
}

impl<S: CompletionScorer> CachedScorer<S> {
    pub fn new(inner: S) -> Self {
        Self { inner, cache: RwLock::new(HashMap::new()) }
    }

    pub fn len(&self) -> usize {
        self.cache.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn key(context: &str, completion: &str) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((context.len() as u64).to_le_bytes());
        h.update(context.as_bytes());
        h.update(completion.as_bytes());
        h.finalize().into()
    }
}

impl<S: CompletionScorer> CompletionScorer for CachedScorer<S> {
    fn score(&self, context: &str, completion: &str) -> Result<Vec<f64>, ScorerError> {
        let key = Self::key(context, completion);
        if let Some(hit) = self.cache.read().expect("cache lock").get(&key) {
            return Ok(hit.clone());
        }
        let value = self.inner.score(context, completion)?;
        self.cache.write().expect("cache lock").insert(key, value.clone());
        Ok(value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Mean log-probability of the label tokens.
    #[default]
    LabelOnly,
    /// Mean log-probability over the whole rendered prompt.
    FullPrompt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 4, base_delay_ms: 250 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptEvalConfig {
    /// Label verbalizers in canonical (tie-breaking) order.
    pub verbalizers: Vec<String>,
    pub parallelism: usize,
    pub retry: RetryPolicy,
    pub normalization: Normalization,
}

impl PromptEvalConfig {
    pub fn for_task(task: ClassMode) -> Self {
        Self {
            verbalizers: task.label_names(),
            parallelism: 4,
            retry: RetryPolicy::default(),
            normalization: Normalization::LabelOnly,
        }
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        if self.verbalizers.len() < 2 {
            return Err(PromptError::TooFewLabels(self.verbalizers.len()));
        }
        for (i, v) in self.verbalizers.iter().enumerate() {
            if self.verbalizers[..i].contains(v) {
                return Err(PromptError::DuplicateVerbalizer(v.clone()));
            }
        }
        Ok(())
    }
}

fn score_with_retry<S: CompletionScorer + ?Sized>(
    scorer: &S,
    context: &str,
    completion: &str,
    retry: RetryPolicy,
) -> Result<Vec<f64>, ScorerError> {
    let mut attempt = 1;
    loop {
        match scorer.score(context, completion) {
            Err(e) if e.retryable && attempt < retry.max_attempts => {
                thread::sleep(Duration::from_millis(retry.base_delay_ms << (attempt - 1).min(16)));
                attempt += 1;
            }
            other => return other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub label: String,
    /// `(label, normalized log-likelihood)` in canonical label order.
    pub scores: Vec<(String, f64)>,
    /// Whether the winning score was shared with another label.
    pub tie: bool,
}

/// Scores every label for one text and returns the arg-max label.
pub fn classify<S: CompletionScorer + ?Sized>(
    scorer: &S,
    template: &PromptTemplate,
    text: &str,
    config: &PromptEvalConfig,
) -> Result<Classification, PromptError> {
    config.validate()?;
    let labels = &config.verbalizers;
    let (context, suffix) = template.context(text, labels)?;
    if !suffix.is_empty() {
        return Err(PromptError::Template {
            id: template.id,
            message: "text after [LABELS] is not supported for scoring".into(),
        });
    }
    let mut scores = Vec::with_capacity(labels.len());
    for label in labels {
        let scorer_err = |message: String| PromptError::Scorer { template: template.id, label: label.clone(), message };
        let logprobs = match config.normalization {
            Normalization::LabelOnly => score_with_retry(scorer, &context, label, config.retry),
            Normalization::FullPrompt => score_with_retry(scorer, "", &format!("{context}{label}"), config.retry),
        }
        .map_err(|e| scorer_err(e.message))?;
        if logprobs.is_empty() {
            return Err(scorer_err("scorer returned no tokens".into()));
        }
        if let Some(bad) = logprobs.iter().find(|v| !v.is_finite()) {
            return Err(scorer_err(format!("non-finite log-probability {bad}")));
        }
        scores.push((label.clone(), logprobs.iter().sum::<f64>() / logprobs.len() as f64));
    }
    let mut best = 0;
    for (i, (_, s)) in scores.iter().enumerate() {
        if *s > scores[best].1 {
            best = i;
        }
    }
    let tie = scores.iter().enumerate().any(|(i, (_, s))| i != best && *s == scores[best].1);
    Ok(Classification { label: scores[best].0.clone(), scores, tie })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateReport {
    pub template: u8,
    pub f1: Option<f64>,
    pub ties: usize,
    pub examples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptEvalReport {
    pub templates: Vec<TemplateReport>,
    /// Mean F1 over templates; withheld unless every template succeeded.
    pub average: Option<f64>,
    pub complete: bool,
}

/// Classifies `dataset` (text, gold label) with every template and averages
/// the per-template weighted macro-F1.
pub fn evaluate_prompts<S: CompletionScorer + ?Sized>(
    scorer: &S,
    templates: &[PromptTemplate],
    dataset: &[(String, String)],
    config: &PromptEvalConfig,
) -> Result<PromptEvalReport, PromptError> {
    config.validate()?;
    if templates.is_empty() {
        return Err(PromptError::NoTemplates);
    }
    if dataset.is_empty() {
        return Err(PromptError::EmptyDataset);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism.max(1))
        .build()
        .map_err(|e| PromptError::Io(std::io::Error::other(e)))?;

    let mut reports = Vec::with_capacity(templates.len());
    for template in templates {
        let outcome: Result<Vec<Classification>, PromptError> =
            pool.install(|| dataset.par_iter().map(|(text, _)| classify(scorer, template, text, config)).collect());
        let report = match outcome {
            Ok(preds) => {
                let gold: Vec<&str> = dataset.iter().map(|(_, g)| g.as_str()).collect();
                let pred: Vec<&str> = preds.iter().map(|c| c.label.as_str()).collect();
                TemplateReport {
                    template: template.id,
                    f1: Some(weighted_macro_f1(&gold, &pred).expect("non-empty, equal lengths")),
                    ties: preds.iter().filter(|c| c.tie).count(),
                    examples: dataset.len(),
                    error: None,
                }
            }
            Err(e) => TemplateReport {
                template: template.id,
                f1: None,
                ties: 0,
                examples: dataset.len(),
                error: Some(e.to_string()),
            },
        };
        reports.push(report);
    }
    let complete = reports.iter().all(|r| r.f1.is_some());
    let average = complete.then(|| reports.iter().filter_map(|r| r.f1).sum::<f64>() / reports.len() as f64);
    Ok(PromptEvalReport { templates: reports, average, complete })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary() -> PromptEvalConfig {
        PromptEvalConfig::for_task(ClassMode::Binary)
    }

    #[test]
    fn builtin_templates_parse() {
        let t = builtin_templates();
        assert_eq!(t.len(), 6);
        assert_eq!(t.iter().filter(|t| t.has_options()).count(), 3);
    }

    #[test]
    fn placeholder_validation() {
        assert!(PromptTemplate::parse(9, "no placeholders").is_err());
        assert!(PromptTemplate::parse(9, "[INPUT] [INPUT] [LABELS]").is_err());
        assert!(PromptTemplate::parse(9, "[INPUT] [OPTIONS] [OPTIONS] [LABELS]").is_err());
        assert!(PromptTemplate::parse(9, "[INPUT] [LABELS]").is_ok());
    }

    #[test]
    fn substitution_is_literal() {
        let t = PromptTemplate::parse(1, "[INPUT] -> [LABELS]").unwrap();
        assert_eq!(t.render("say [LABELS]", &[], "x").unwrap(), "say [LABELS] -> x");
    }

    #[test]
    fn options_rendering() {
        let t = &builtin_templates()[3];
        let opts = binary().verbalizers;
        assert_eq!(
            t.render("ok", &opts, "positive").unwrap(),
            "ok\nWhat would be the sentiment of the text above? negative, positive? positive"
        );
        assert!(matches!(t.render("ok", &[], "positive"), Err(PromptError::Unresolved { .. })));
    }

    #[test]
    fn ties_and_failures() {
        let t = &builtin_templates()[0];
        let tied = MockScorer::new().with_completion("positive", vec![-1.0]).with_completion("negative", vec![-1.0]);
        let c = classify(&tied, t, "x", &binary()).unwrap();
        assert_eq!(c.label, "negative");
        assert!(c.tie);
        let bad = MockScorer::new().with_completion("positive", vec![f64::NAN]).with_completion("negative", vec![-1.0]);
        assert!(matches!(classify(&bad, t, "x", &binary()), Err(PromptError::Scorer { .. })));
        let missing = MockScorer::new().with_completion("positive", vec![-1.0]);
        assert!(matches!(classify(&missing, t, "x", &binary()), Err(PromptError::Scorer { .. })));
    }

    #[test]
    fn suffix_after_label_is_rejected_for_scoring() {
        let t = PromptTemplate::parse(7, "[INPUT] is [LABELS].").unwrap();
        let s = MockScorer::new().with_completion("positive", vec![-1.0]).with_completion("negative", vec![-1.0]);
        assert!(matches!(classify(&s, &t, "x", &binary()), Err(PromptError::Template { .. })));
    }

    struct Flaky {
        failures: std::sync::atomic::AtomicU32,
    }

    impl CompletionScorer for Flaky {
        fn score(&self, _: &str, _: &str) -> Result<Vec<f64>, ScorerError> {
            use std::sync::atomic::Ordering;
            if self.failures.load(Ordering::SeqCst) > 0 {
                self.failures.fetch_sub(1, Ordering::SeqCst);
                return Err(ScorerError::transient("busy"));
            }
            Ok(vec![-1.0])
        }
    }

    #[test]
    fn retries_transient_errors() {
        let mut cfg = binary();
        cfg.retry = RetryPolicy { max_attempts: 3, base_delay_ms: 1 };
        let t = &builtin_templates()[0];
        let ok = Flaky { failures: 2.into() };
        assert!(classify(&ok, t, "x", &cfg).is_ok());
        let exhausted = Flaky { failures: 3.into() };
        assert!(classify(&exhausted, t, "x", &cfg).is_err());
    }

    #[test]
    fn cache_serves_repeats() {
        let cached = CachedScorer::new(MockScorer::new().with_completion("a", vec![-0.5]));
        assert_eq!(cached.score("c", "a").unwrap(), vec![-0.5]);
        assert_eq!(cached.score("c", "a").unwrap(), vec![-0.5]);
        assert_eq!(cached.len(), 1);
        assert!(cached.score("c", "b").is_err());
        assert_eq!(cached.len(), 1);
    }

    #[test]
    fn mock_from_json() {
        let json = r#"{"completions": {"positive": [-1.0]},
                       "entries": [{"context": "c", "completion": "positive", "token_logprobs": [-3.0, -1.0]}]}"#;
        let s = MockScorer::from_json(json).unwrap();
        assert_eq!(s.score("c", "positive").unwrap(), vec![-3.0, -1.0]);
        assert_eq!(s.score("other", "positive").unwrap(), vec![-1.0]);
    }

    #[test]
    fn full_prompt_normalization() {
        let t = &builtin_templates()[0];
        let mut cfg = binary();
        cfg.normalization = Normalization::FullPrompt;
        let full = |l: &str| format!("x\nWhat would be the sentiment of the text above? {l}");
        let s = MockScorer::new()
            .with_entry("", &full("positive"), vec![-2.0, -2.0])
            .with_entry("", &full("negative"), vec![-1.0, -3.0, -1.0]);
        let c = classify(&s, t, "x", &cfg).unwrap();
        assert_eq!(c.label, "negative");
    }

    #[test]
    fn verbalizers_must_be_distinct() {
        let mut cfg = binary();
        cfg.verbalizers = vec!["a".into(), "a".into()];
        assert!(matches!(cfg.validate(), Err(PromptError::DuplicateVerbalizer(_))));
    }
}
