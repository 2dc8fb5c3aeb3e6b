//! Zero-shot sentence prediction, weighted macro-F1 and per-group reporting.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use num_traits::{FromPrimitive, Num};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{EncoderBackend, EncoderError};
use crate::lexicon::{clamp_valence, class_of, ClassMode, LexiconError};
use crate::scalar::Scalar;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("gold and predicted sequences differ in length ({gold} vs {pred})")]
    LengthMismatch { gold: usize, pred: usize },
    #[error("cannot score an empty sequence")]
    Empty,
    #[error("{head} model cannot serve a {task} task")]
    ArityMismatch { head: String, task: ClassMode },
    #[error("language {lang:?} is in groups {first:?} and {second:?}")]
    LanguageInTwoGroups { lang: String, first: String, second: String },
    #[error("language {0:?} is neither in a group nor declared ungrouped")]
    Unassigned(String),
    #[error("language {0:?} scored twice with different values")]
    ConflictingScore(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Support-weighted mean of per-class F1 over the classes seen in either
/// sequence. Per-class `F1 = 2PR / (P + R)`, evaluated as
/// `2·tp / (2·tp + fp + fn)`; a class with no true positives scores 0.
///
/// Generic over the numeric type so it can be evaluated exactly, e.g. with
/// rationals.
pub fn weighted_macro_f1<L, T>(gold: &[L], pred: &[L]) -> Result<T, EvalError>
where
    L: Ord,
    T: Num + FromPrimitive + Copy,
{
    if gold.len() != pred.len() {
        return Err(EvalError::LengthMismatch { gold: gold.len(), pred: pred.len() });
    }
    if gold.is_empty() {
        return Err(EvalError::Empty);
    }
    // (tp, fp, fn, support)
    let mut counts: BTreeMap<&L, [usize; 4]> = BTreeMap::new();
    for (g, p) in gold.iter().zip(pred) {
        counts.entry(g).or_default()[3] += 1;
        if g == p {
            counts.entry(g).or_default()[0] += 1;
        } else {
            counts.entry(p).or_default()[1] += 1;
            counts.entry(g).or_default()[2] += 1;
        }
    }
    let int = |n: usize| T::from_usize(n).expect("count representable");
    let mut total = T::zero();
    for [tp, fp, fn_, support] in counts.into_values() {
        if tp > 0 && support > 0 {
            total = total + int(support) * int(2 * tp) / int(2 * tp + fp + fn_);
        }
    }
    Ok(total / int(gold.len()))
}

/// What a model's head produces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelHead {
    Regression,
    /// Class logits, in the given label order.
    Classification { labels: Vec<String> },
}

impl ModelHead {
    pub fn describe(&self) -> String {
        match self {
            ModelHead::Regression => "regression".into(),
            ModelHead::Classification { labels } => format!("{}-way classification", labels.len()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, bound = "T: Scalar")]
pub enum Score<T: Scalar> {
    Value(T),
    Logits(Vec<T>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PredictionRecord<T: Scalar> {
    pub text: String,
    pub gold: Option<String>,
    pub pred: String,
    pub score: Score<T>,
    #[serde(default)]
    pub model: String,
}

/// Index of the largest value; ties go to the earliest index.
pub fn argmax<T: PartialOrd>(values: &[T]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if best.is_none_or(|b| *v > values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Maps a regression score to a label: clamp to `[-5, 5]`, then apply the
/// lexicon class boundaries (0 for binary, -1 and +1 for three-way).
pub fn label_for_score<T: Scalar>(score: T, task: ClassMode) -> Result<&'static str, EvalError> {
    Ok(class_of(clamp_valence(score), task)?.as_str())
}

/// Labels sentences with a word-level model, without sentence supervision.
pub fn predict_zero_shot<T, B>(
    backend: &B,
    head: &ModelHead,
    inputs: &[(String, Option<String>)],
    task: ClassMode,
    model_id: &str,
) -> Result<Vec<PredictionRecord<T>>, EvalError>
where
    T: Scalar,
    B: EncoderBackend<T> + Sync + ?Sized,
{
    if let ModelHead::Classification { labels } = head {
        if *labels != task.label_names() {
            return Err(EvalError::ArityMismatch { head: head.describe(), task });
        }
    }
    inputs
        .par_iter()
        .map(|(text, gold)| {
            let out = backend.predict(text)?;
            let (pred, score) = match head {
                ModelHead::Regression => {
                    let s = clamp_valence(out[0]);
                    (label_for_score(s, task)?.to_owned(), Score::Value(s))
                }
                ModelHead::Classification { labels } => {
                    let i = argmax(&out).expect("non-empty logits");
                    (labels[i].clone(), Score::Logits(out))
                }
            };
            Ok(PredictionRecord { text: text.clone(), gold: gold.clone(), pred, score, model: model_id.to_owned() })
        })
        .collect()
}

pub fn write_predictions<T: Scalar, W: Write>(records: &[PredictionRecord<T>], mut out: W) -> Result<(), EvalError> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        writeln!(out)?;
    }
    Ok(())
}

pub fn read_predictions<T: Scalar, R: BufRead>(reader: R) -> Result<Vec<PredictionRecord<T>>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| EvalError::Parse { line: i + 1, message: e.to_string() })?,
        );
    }
    Ok(out)
}

/// Weighted macro-F1 over records that carry a gold label.
pub fn score_predictions<T: Scalar>(records: &[PredictionRecord<T>]) -> Result<T, EvalError> {
    let (gold, pred): (Vec<&str>, Vec<&str>) =
        records.iter().filter_map(|r| r.gold.as_deref().map(|g| (g, r.pred.as_str()))).unzip();
    weighted_macro_f1(&gold, &pred)
}

/// Named language groups with optional per-group exclusions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSpec {
    #[serde(default)]
    pub groups: BTreeMap<String, BTreeSet<String>>,
    /// Members left out of a group's mean (e.g. English in a transfer comparison).
    #[serde(default)]
    pub exclusions: BTreeMap<String, BTreeSet<String>>,
    /// Languages reported individually without a group.
    #[serde(default)]
    pub ungrouped: BTreeSet<String>,
}

impl GroupSpec {
    pub fn validate(&self) -> Result<(), EvalError> {
        let mut owner: BTreeMap<&str, &str> = BTreeMap::new();
        for (group, langs) in &self.groups {
            for lang in langs {
                if let Some(first) = owner.insert(lang, group) {
                    return Err(EvalError::LanguageInTwoGroups {
                        lang: lang.clone(),
                        first: first.to_owned(),
                        second: group.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn group_of(&self, lang: &str) -> Option<&str> {
        self.groups.iter().find(|(_, l)| l.contains(lang)).map(|(g, _)| g.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct GroupSummary<T: Scalar> {
    pub mean: Option<T>,
    pub members: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub excluded: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SeedScore<T: Scalar> {
    pub seed: u64,
    pub score: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct EvalReport<T: Scalar> {
    pub schema_version: u32,
    pub per_language: BTreeMap<String, T>,
    pub groups: BTreeMap<String, GroupSummary<T>>,
    /// Unweighted mean of the group means.
    pub average: Option<T>,
    pub ungrouped: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub seeds: BTreeMap<String, Vec<SeedScore<T>>>,
    pub group_spec: GroupSpec,
}

fn mean<T: Scalar>(values: &[T]) -> Option<T> {
    (!values.is_empty()).then(|| values.iter().copied().sum::<T>() / T::from_count(values.len()))
}

pub fn aggregate_report<T: Scalar>(
    per_language: &BTreeMap<String, T>,
    spec: &GroupSpec,
) -> Result<EvalReport<T>, EvalError> {
    spec.validate()?;
    let mut ungrouped = Vec::new();
    for lang in per_language.keys() {
        if spec.group_of(lang).is_none() {
            if spec.ungrouped.contains(lang) {
                ungrouped.push(lang.clone());
            } else {
                return Err(EvalError::Unassigned(lang.clone()));
            }
        }
    }

    let mut groups = BTreeMap::new();
    for (name, langs) in &spec.groups {
        let excluded_set = spec.exclusions.get(name);
        let mut members = Vec::new();
        let mut excluded = Vec::new();
        let mut scores = Vec::new();
        for lang in langs.iter().filter(|l| per_language.contains_key(*l)) {
            if excluded_set.is_some_and(|e| e.contains(lang)) {
                excluded.push(lang.clone());
            } else {
                members.push(lang.clone());
                scores.push(per_language[lang]);
            }
        }
        groups.insert(name.clone(), GroupSummary { mean: mean(&scores), members, excluded });
    }
    let group_means: Vec<T> = groups.values().filter_map(|g| g.mean).collect();

    Ok(EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        per_language: per_language.clone(),
        average: mean(&group_means),
        groups,
        ungrouped,
        seeds: BTreeMap::new(),
        group_spec: spec.clone(),
    })
}

/// Concatenates several reports' per-language scores and re-aggregates.
pub fn merge_reports<T: Scalar>(reports: &[EvalReport<T>], spec: Option<&GroupSpec>) -> Result<EvalReport<T>, EvalError> {
    let mut per_language = BTreeMap::new();
    let mut seeds = BTreeMap::new();
    let mut merged_spec = GroupSpec::default();
    for report in reports {
        for (lang, &score) in &report.per_language {
            if let Some(prev) = per_language.insert(lang.clone(), score) {
                if prev != score {
                    return Err(EvalError::ConflictingScore(lang.clone()));
                }
            }
        }
        seeds.extend(report.seeds.clone());
        for (g, langs) in &report.group_spec.groups {
            merged_spec.groups.entry(g.clone()).or_default().extend(langs.iter().cloned());
        }
        for (g, langs) in &report.group_spec.exclusions {
            merged_spec.exclusions.entry(g.clone()).or_default().extend(langs.iter().cloned());
        }
        merged_spec.ungrouped.extend(report.group_spec.ungrouped.iter().cloned());
    }
    let mut out = aggregate_report(&per_language, spec.unwrap_or(&merged_spec))?;
    out.seeds = seeds;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f1_perfect() {
        let g = ["a", "b", "a"];
        assert_eq!(weighted_macro_f1::<_, f64>(&g, &g).unwrap(), 1.0);
    }

    #[test]
    fn f1_errors() {
        assert!(matches!(weighted_macro_f1::<&str, f64>(&[], &[]), Err(EvalError::Empty)));
        assert!(matches!(
            weighted_macro_f1::<_, f64>(&["a"], &["a", "b"]),
            Err(EvalError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn argmax_ties_go_first() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), Some(1));
        assert_eq!(argmax::<f64>(&[]), None);
    }

    #[test]
    fn regression_labels() {
        assert_eq!(label_for_score(-0.5f64, ClassMode::ThreeWay).unwrap(), "neutral");
        assert_eq!(label_for_score(-0.5f64, ClassMode::Binary).unwrap(), "negative");
        assert_eq!(label_for_score(9.0f64, ClassMode::ThreeWay).unwrap(), "positive");
        assert_eq!(label_for_score(-7.0f64, ClassMode::Binary).unwrap(), "negative");
    }

    fn spec(groups: &[(&str, &[&str])]) -> GroupSpec {
        GroupSpec {
            groups: groups
                .iter()
                .map(|(g, ls)| (g.to_string(), ls.iter().map(|l| l.to_string()).collect()))
                .collect(),
            ..Default::default()
        }
    }

    fn scores(rows: &[(&str, f64)]) -> BTreeMap<String, f64> {
        rows.iter().map(|(l, s)| (l.to_string(), *s)).collect()
    }

    #[test]
    fn language_in_two_groups() {
        let s = spec(&[("a", &["en", "de"]), ("b", &["de"])]);
        assert!(matches!(aggregate_report(&scores(&[]), &s), Err(EvalError::LanguageInTwoGroups { .. })));
    }

    #[test]
    fn unassigned_language() {
        let s = spec(&[("a", &["en"])]);
        assert!(matches!(aggregate_report(&scores(&[("xx", 0.5)]), &s), Err(EvalError::Unassigned(_))));
        let mut s = s;
        s.ungrouped.insert("xx".into());
        let r = aggregate_report(&scores(&[("xx", 0.5)]), &s).unwrap();
        assert_eq!(r.ungrouped, ["xx"]);
        assert_eq!(r.average, None);
    }

    #[test]
    fn report_json_roundtrip() {
        let s = spec(&[("g", &["en", "de"])]);
        let r = aggregate_report(&scores(&[("en", 0.6), ("de", 0.8)]), &s).unwrap();
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"schema_version\":1"));
        let back: EvalReport<f64> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn merge_concatenates() {
        let s1 = spec(&[("g", &["en"])]);
        let s2 = spec(&[("g", &["de"]), ("h", &["sw"])]);
        let a = aggregate_report(&scores(&[("en", 0.6)]), &s1).unwrap();
        let b = aggregate_report(&scores(&[("de", 0.8), ("sw", 0.5)]), &s2).unwrap();
        let m = merge_reports(&[a.clone(), b], None).unwrap();
        assert_eq!(m.groups["g"].mean, Some(0.7));
        assert_eq!(m.average, Some((0.7 + 0.5) / 2.0));
        let conflicting = aggregate_report(&scores(&[("en", 0.1)]), &s1).unwrap();
        assert!(merge_reports(&[a, conflicting], None).is_err());
    }

    #[test]
    fn predictions_jsonl_fields() {
        let rec = PredictionRecord::<f64> {
            text: "hi".into(),
            gold: Some("positive".into()),
            pred: "positive".into(),
            score: Score::Value(1.5),
            model: "m".into(),
        };
        let mut buf = Vec::new();
        write_predictions(std::slice::from_ref(&rec), &mut buf).unwrap();
        let line = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(line, "{\"text\":\"hi\",\"gold\":\"positive\",\"pred\":\"positive\",\"score\":1.5,\"model\":\"m\"}\n");
        assert_eq!(read_predictions::<f64, _>(buf.as_slice()).unwrap(), vec![rec]);
    }
}
