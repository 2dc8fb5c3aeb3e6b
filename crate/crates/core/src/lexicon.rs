//! Multilingual valence lexicons: entries, score normalization, sentiment
//! classes, merging and the TSV file format.
//!
//! Scores are always held on the normalized `[-5, 5]` scale. Files on the raw
//! `[0, 1]` scale announce it with a `#scale=raw` pragma and are normalized on
//! load.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::scalar::Scalar;

pub const VALENCE_MIN: f64 = -5.0;
pub const VALENCE_MAX: f64 = 5.0;

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("raw score {0} is outside [0, 1]")]
    RawOutOfRange(f64),
    #[error("score {0} is outside [-5, 5]")]
    ValenceOutOfRange(f64),
    #[error("invalid word {word:?}: {reason}")]
    InvalidWord { word: String, reason: &'static str },
    #[error("invalid language code {0:?}")]
    InvalidLang(String),
    #[error("class {class} is not valid in {mode} mode")]
    InvalidClass { class: SentimentClass, mode: ClassMode },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("colliding keys: {}", format_keys(.0))]
    DuplicateKeys(Vec<EntryKey>),
    #[error("split ratio {0} must lie strictly between 0 and 1")]
    InvalidRatio(f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn format_keys(keys: &[EntryKey]) -> String {
    keys.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(", ")
}

/// Maps a raw `[0, 1]` score onto the `[-5, 5]` scale via `10·raw − 5`.
pub fn normalize_raw<T: Scalar>(raw: T) -> Result<T, LexiconError> {
    if !(raw >= T::zero() && raw <= T::one()) {
        return Err(LexiconError::RawOutOfRange(raw.to_f64().unwrap_or(f64::NAN)));
    }
    Ok(T::lit(10.0) * raw - T::lit(5.0))
}

pub(crate) fn check_valence<T: Scalar>(value: T) -> Result<T, LexiconError> {
    if value >= T::lit(VALENCE_MIN) && value <= T::lit(VALENCE_MAX) {
        Ok(value)
    } else {
        Err(LexiconError::ValenceOutOfRange(value.to_f64().unwrap_or(f64::NAN)))
    }
}

/// Clamps a model score into `[-5, 5]`. NaN passes through unchanged.
pub fn clamp_valence<T: Scalar>(value: T) -> T {
    if value < T::lit(VALENCE_MIN) {
        T::lit(VALENCE_MIN)
    } else if value > T::lit(VALENCE_MAX) {
        T::lit(VALENCE_MAX)
    } else {
        value
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassMode {
    Binary,
    ThreeWay,
}

impl ClassMode {
    /// Labels in canonical order (negative first).
    pub fn labels(self) -> &'static [SentimentClass] {
        match self {
            ClassMode::Binary => &[SentimentClass::Negative, SentimentClass::Positive],
            ClassMode::ThreeWay => &[
                SentimentClass::Negative,
                SentimentClass::Neutral,
                SentimentClass::Positive,
            ],
        }
    }

    pub fn arity(self) -> usize {
        self.labels().len()
    }

    pub fn label_names(self) -> Vec<String> {
        self.labels().iter().map(|c| c.as_str().to_owned()).collect()
    }
}

impl fmt::Display for ClassMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClassMode::Binary => "binary",
            ClassMode::ThreeWay => "three_way",
        })
    }
}

impl FromStr for ClassMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "binary" => Ok(ClassMode::Binary),
            "three_way" | "three-way" | "3way" => Ok(ClassMode::ThreeWay),
            other => Err(format!("unknown class mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SentimentClass {
    Negative,
    Neutral,
    Positive,
}

impl SentimentClass {
    pub fn as_str(self) -> &'static str {
        match self {
            SentimentClass::Negative => "negative",
            SentimentClass::Neutral => "neutral",
            SentimentClass::Positive => "positive",
        }
    }

    /// Position of this class in `mode`'s canonical label order.
    pub fn index(self, mode: ClassMode) -> Result<usize, LexiconError> {
        mode.labels()
            .iter()
            .position(|&c| c == self)
            .ok_or(LexiconError::InvalidClass { class: self, mode })
    }

    pub fn from_index(index: usize, mode: ClassMode) -> Option<Self> {
        mode.labels().get(index).copied()
    }
}

impl fmt::Display for SentimentClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SentimentClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "negative" => Ok(SentimentClass::Negative),
            "neutral" => Ok(SentimentClass::Neutral),
            "positive" => Ok(SentimentClass::Positive),
            other => Err(format!("unknown sentiment class {other:?}")),
        }
    }
}

/// Derives the sentiment class of a normalized valence.
///
/// Three-way: `[-5, -1)` negative, `[-1, 1)` neutral, `[1, 5]` positive.
/// Binary: `[-5, 0)` negative, `[0, 5]` positive.
pub fn class_of<T: Scalar>(valence: T, mode: ClassMode) -> Result<SentimentClass, LexiconError> {
    let v = check_valence(valence)?;
    Ok(match mode {
        ClassMode::Binary if v < T::zero() => SentimentClass::Negative,
        ClassMode::Binary => SentimentClass::Positive,
        ClassMode::ThreeWay if v < -T::one() => SentimentClass::Negative,
        ClassMode::ThreeWay if v < T::one() => SentimentClass::Neutral,
        ClassMode::ThreeWay => SentimentClass::Positive,
    })
}

/// Lowercase ISO-639 code with an optional region suffix (`en`, `pcm`, `pt-br`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Lang(String);

impl Lang {
    pub fn new(code: &str) -> Result<Self, LexiconError> {
        let (base, region) = match code.find(['-', '_']) {
            Some(i) => (&code[..i], Some(&code[i + 1..])),
            None => (code, None),
        };
        let base_ok = (2..=3).contains(&base.len()) && base.bytes().all(|b| b.is_ascii_lowercase());
        let region_ok = region.is_none_or(|r| {
            !r.is_empty()
                && r.len() <= 8
                && r.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit())
        });
        if base_ok && region_ok {
            Ok(Lang(code.to_owned()))
        } else {
            Err(LexiconError::InvalidLang(code.to_owned()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_english(&self) -> bool {
        self.0 == "en"
    }
}

impl TryFrom<String> for Lang {
    type Error = LexiconError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Lang::new(&value)
    }
}

impl From<Lang> for String {
    fn from(lang: Lang) -> Self {
        lang.0
    }
}

impl FromStr for Lang {
    type Err = LexiconError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Lang::new(s)
    }
}

impl fmt::Display for Lang {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Trims `word` and checks it is usable as a lexicon or edge field.
pub(crate) fn clean_word(word: &str) -> Result<String, LexiconError> {
    let trimmed = word.trim();
    if trimmed.is_empty() {
        return Err(LexiconError::InvalidWord { word: word.to_owned(), reason: "empty" });
    }
    if trimmed.contains(['\t', '\n', '\r']) {
        return Err(LexiconError::InvalidWord {
            word: word.to_owned(),
            reason: "contains tab or newline",
        });
    }
    Ok(trimmed.to_owned())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    #[default]
    Original,
    Translated,
    Projected,
    AcceptedByFilter,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntryKey {
    pub lang: Lang,
    pub word: String,
}

impl fmt::Display for EntryKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.word, self.lang)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct LexiconEntry<T: Scalar> {
    word: String,
    lang: Lang,
    valence: T,
    arousal: Option<T>,
    dominance: Option<T>,
    source: Source,
}

impl<T: Scalar> LexiconEntry<T> {
    pub fn new(word: &str, lang: Lang, valence: T) -> Result<Self, LexiconError> {
        Ok(Self {
            word: clean_word(word)?,
            lang,
            valence: check_valence(valence)?,
            arousal: None,
            dominance: None,
            source: Source::Original,
        })
    }

    pub fn with_source(mut self, source: Source) -> Self {
        self.source = source;
        self
    }

    pub fn with_affect(mut self, arousal: Option<T>, dominance: Option<T>) -> Result<Self, LexiconError> {
        self.arousal = arousal.map(check_valence).transpose()?;
        self.dominance = dominance.map(check_valence).transpose()?;
        Ok(self)
    }

    pub fn word(&self) -> &str {
        &self.word
    }

    pub fn lang(&self) -> &Lang {
        &self.lang
    }

    pub fn valence(&self) -> T {
        self.valence
    }

    pub fn arousal(&self) -> Option<T> {
        self.arousal
    }

    pub fn dominance(&self) -> Option<T> {
        self.dominance
    }

    pub fn source(&self) -> Source {
        self.source
    }

    pub fn key(&self) -> EntryKey {
        EntryKey { lang: self.lang.clone(), word: self.word.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MergePolicy {
    #[default]
    Mean,
    KeepFirst,
    Error,
}

impl FromStr for MergePolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(MergePolicy::Mean),
            "keep_first" | "keep-first" => Ok(MergePolicy::KeepFirst),
            "error" => Ok(MergePolicy::Error),
            other => Err(format!("unknown merge policy {other:?}")),
        }
    }
}

/// Keyed collection of entries in canonical `(lang, word)` order, with an
/// optional train/validation split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ValenceLexicon<T: Scalar> {
    entries: BTreeMap<EntryKey, LexiconEntry<T>>,
    splits: BTreeMap<EntryKey, Split>,
}

impl<T: Scalar> Default for ValenceLexicon<T> {
    fn default() -> Self {
        Self { entries: BTreeMap::new(), splits: BTreeMap::new() }
    }
}

impl<T: Scalar> ValenceLexicon<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries<I>(entries: I) -> Result<Self, LexiconError>
    where
        I: IntoIterator<Item = LexiconEntry<T>>,
    {
        let mut lexicon = Self::new();
        let mut collisions = Vec::new();
        for entry in entries {
            let key = entry.key();
            if lexicon.entries.insert(key.clone(), entry).is_some() {
                collisions.push(key);
            }
        }
        if collisions.is_empty() {
            Ok(lexicon)
        } else {
            Err(LexiconError::DuplicateKeys(collisions))
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &EntryKey) -> Option<&LexiconEntry<T>> {
        self.entries.get(key)
    }

    pub fn contains(&self, key: &EntryKey) -> bool {
        self.entries.contains_key(key)
    }

    /// Inserts an entry, failing if its key is already present.
    pub fn insert(&mut self, entry: LexiconEntry<T>) -> Result<(), LexiconError> {
        let key = entry.key();
        if self.entries.contains_key(&key) {
            return Err(LexiconError::DuplicateKeys(vec![key]));
        }
        self.entries.insert(key, entry);
        Ok(())
    }

    pub fn remove(&mut self, key: &EntryKey) -> Option<LexiconEntry<T>> {
        self.splits.remove(key);
        self.entries.remove(key)
    }

    /// Entries in canonical order.
    pub fn entries(&self) -> impl Iterator<Item = &LexiconEntry<T>> {
        self.entries.values()
    }

    pub fn keys(&self) -> impl Iterator<Item = &EntryKey> {
        self.entries.keys()
    }

    pub fn languages(&self) -> Vec<Lang> {
        let mut langs: Vec<Lang> = self.entries.keys().map(|k| k.lang.clone()).collect();
        langs.dedup();
        langs
    }

    pub fn split_of(&self, key: &EntryKey) -> Option<Split> {
        self.splits.get(key).copied()
    }

    pub fn has_split(&self) -> bool {
        !self.splits.is_empty()
    }

    pub fn set_split(&mut self, key: &EntryKey, split: Split) {
        if self.entries.contains_key(key) {
            self.splits.insert(key.clone(), split);
        }
    }

    pub fn clear_splits(&mut self) {
        self.splits.clear();
    }

    /// Assigns every entry without a split to train/validation as one batch.
    pub fn assign_splits(&mut self, seed: u64, train_ratio: f64) -> Result<(), LexiconError> {
        let pending: Vec<EntryKey> =
            self.entries.keys().filter(|k| !self.splits.contains_key(k)).cloned().collect();
        for (key, split) in split_batch(&pending, seed, train_ratio)? {
            self.splits.insert(key, split);
        }
        Ok(())
    }

    pub fn split_entries(&self, split: Split) -> impl Iterator<Item = &LexiconEntry<T>> {
        self.entries
            .iter()
            .filter(move |(k, _)| self.splits.get(k) == Some(&split))
            .map(|(_, e)| e)
    }

    /// SHA-256 of the canonical TSV serialization.
    pub fn content_hash(&self) -> String {
        let mut buf = Vec::new();
        write_lexicon(self, &mut buf).expect("writing to a Vec cannot fail");
        hex::encode(Sha256::digest(&buf))
    }
}

/// Stable per-key hash used for reproducible split assignment.
pub(crate) fn seeded_key_hash(seed: u64, key: &EntryKey) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(key.lang.as_str().as_bytes());
    hasher.update([0u8]);
    hasher.update(key.word.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Splits one batch of keys into train/validation.
///
/// Keys are ordered by a seeded hash and the first `round(n · ratio)` go to
/// train, so each batch is within one entry of the exact ratio and the
/// assignment depends only on the seed and the key set.
pub fn split_batch(
    keys: &[EntryKey],
    seed: u64,
    train_ratio: f64,
) -> Result<Vec<(EntryKey, Split)>, LexiconError> {
    if !(train_ratio > 0.0 && train_ratio < 1.0) {
        return Err(LexiconError::InvalidRatio(train_ratio));
    }
    let mut ordered: Vec<(u64, &EntryKey)> =
        keys.iter().map(|k| (seeded_key_hash(seed, k), k)).collect();
    ordered.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    let n_train = (keys.len() as f64 * train_ratio).round() as usize;
    Ok(ordered
        .into_iter()
        .enumerate()
        .map(|(i, (_, k))| (k.clone(), if i < n_train { Split::Train } else { Split::Validation }))
        .collect())
}

fn mean_opt<T: Scalar>(a: Option<T>, b: Option<T>) -> Option<T> {
    match (a, b) {
        (Some(x), Some(y)) => Some((x + y) / T::lit(2.0)),
        (x, None) => x,
        (None, y) => y,
    }
}

/// Unions two lexicons, resolving shared keys according to `policy`.
pub fn merge_lexicons<T: Scalar>(
    a: &ValenceLexicon<T>,
    b: &ValenceLexicon<T>,
    policy: MergePolicy,
) -> Result<ValenceLexicon<T>, LexiconError> {
    if policy == MergePolicy::Error {
        let colliding: Vec<EntryKey> = b.keys().filter(|k| a.contains(k)).cloned().collect();
        if !colliding.is_empty() {
            return Err(LexiconError::DuplicateKeys(colliding));
        }
    }
    let mut out = a.clone();
    for (key, entry) in &b.entries {
        match out.entries.get_mut(key) {
            Some(existing) => {
                if policy == MergePolicy::Mean {
                    existing.valence = (existing.valence + entry.valence) / T::lit(2.0);
                    existing.arousal = mean_opt(existing.arousal, entry.arousal);
                    existing.dominance = mean_opt(existing.dominance, entry.dominance);
                }
            }
            None => {
                out.entries.insert(key.clone(), entry.clone());
            }
        }
        if let Some(split) = b.splits.get(key) {
            out.splits.entry(key.clone()).or_insert(*split);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Raw,
    #[default]
    Normalized,
}

#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    /// How repeated `(word, lang)` rows are combined.
    pub on_duplicate: MergePolicy,
    pub source: Source,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self { on_duplicate: MergePolicy::Error, source: Source::Original }
    }
}

const HEADER_SHORT: &str = "word\tlang\tvalence";
const HEADER_LONG: &str = "word\tlang\tvalence\tarousal\tdominance";

struct Accumulator<T> {
    entry_line: usize,
    valence: Vec<T>,
    arousal: Vec<T>,
    dominance: Vec<T>,
}

fn mean_of<T: Scalar>(values: &[T]) -> Option<T> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().copied().sum::<T>() / T::from_count(values.len()))
    }
}

fn parse_score<T: Scalar>(field: &str, scale: Scale, line: usize, column: &str) -> Result<T, LexiconError> {
    let parse_err = |message: String| LexiconError::Parse { line, message };
    let value: T = field
        .parse()
        .map_err(|_| parse_err(format!("{column}: cannot parse {field:?} as a number")))?;
    let value = match scale {
        Scale::Raw => normalize_raw(value),
        Scale::Normalized => check_valence(value),
    };
    value.map_err(|e| parse_err(format!("{column}: {e}")))
}

/// Parses a lexicon TSV stream.
pub fn read_lexicon<T: Scalar, R: BufRead>(
    reader: R,
    options: LoadOptions,
) -> Result<ValenceLexicon<T>, LexiconError> {
    let mut scale = Scale::Normalized;
    let mut columns = None;
    let mut acc: BTreeMap<EntryKey, Accumulator<T>> = BTreeMap::new();

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        let perr = |message: String| LexiconError::Parse { line: line_no, message };

        let Some(n_columns) = columns else {
            if let Some(pragma) = line.strip_prefix('#') {
                scale = match pragma.trim() {
                    "scale=raw" => Scale::Raw,
                    "scale=normalized" => Scale::Normalized,
                    other => return Err(perr(format!("unknown pragma #{other}"))),
                };
            } else if line == HEADER_SHORT {
                columns = Some(3);
            } else if line == HEADER_LONG {
                columns = Some(5);
            } else {
                return Err(perr(format!("expected header {HEADER_SHORT:?}, found {line:?}")));
            }
            continue;
        };

        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != n_columns {
            return Err(perr(format!("expected {n_columns} columns, found {}", fields.len())));
        }
        let word = clean_word(fields[0]).map_err(|e| perr(e.to_string()))?;
        let lang = Lang::new(fields[1].trim()).map_err(|e| perr(e.to_string()))?;
        let valence = parse_score(fields[2], scale, line_no, "valence")?;
        let optional = |i: usize, name: &str| -> Result<Option<T>, LexiconError> {
            match fields.get(i).map(|f| f.trim()) {
                None | Some("") => Ok(None),
                Some(f) => parse_score(f, scale, line_no, name).map(Some),
            }
        };
        let arousal = optional(3, "arousal")?;
        let dominance = optional(4, "dominance")?;

        let key = EntryKey { lang, word };
        match acc.get_mut(&key) {
            Some(existing) => match options.on_duplicate {
                MergePolicy::Error => {
                    return Err(perr(format!(
                        "duplicate key {key}, first seen on line {}",
                        existing.entry_line
                    )))
                }
                MergePolicy::KeepFirst => {}
                MergePolicy::Mean => {
                    existing.valence.push(valence);
                    existing.arousal.extend(arousal);
                    existing.dominance.extend(dominance);
                }
            },
            None => {
                acc.insert(
                    key,
                    Accumulator {
                        entry_line: line_no,
                        valence: vec![valence],
                        arousal: arousal.into_iter().collect(),
                        dominance: dominance.into_iter().collect(),
                    },
                );
            }
        }
    }

    if columns.is_none() {
        return Err(LexiconError::Parse { line: 1, message: "missing header".into() });
    }

    let mut lexicon = ValenceLexicon::new();
    for (key, a) in acc {
        let entry = LexiconEntry {
            word: key.word.clone(),
            lang: key.lang.clone(),
            valence: mean_of(&a.valence).expect("at least one valence per key"),
            arousal: mean_of(&a.arousal),
            dominance: mean_of(&a.dominance),
            source: options.source,
        };
        lexicon.entries.insert(key, entry);
    }
    Ok(lexicon)
}

pub fn load_lexicon<T: Scalar>(path: &Path, options: LoadOptions) -> Result<ValenceLexicon<T>, LexiconError> {
    read_lexicon(BufReader::new(File::open(path)?), options)
}

/// Writes the canonical TSV form: normalized scale, rows sorted by language
/// then word, affect columns only when some entry carries them.
pub fn write_lexicon<T: Scalar, W: Write>(lexicon: &ValenceLexicon<T>, mut out: W) -> Result<(), LexiconError> {
    let affect = lexicon.entries().any(|e| e.arousal.is_some() || e.dominance.is_some());
    writeln!(out, "{}", if affect { HEADER_LONG } else { HEADER_SHORT })?;
    for e in lexicon.entries() {
        write!(out, "{}\t{}\t{}", e.word, e.lang, e.valence)?;
        if affect {
            let fmt_opt = |v: Option<T>| v.map(|x| x.to_string()).unwrap_or_default();
            write!(out, "\t{}\t{}", fmt_opt(e.arousal), fmt_opt(e.dominance))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn save_lexicon<T: Scalar>(lexicon: &ValenceLexicon<T>, path: &Path) -> Result<(), LexiconError> {
    let mut out = BufWriter::new(File::create(path)?);
    write_lexicon(lexicon, &mut out)?;
    out.flush()?;
    Ok(())
}
