//! Projection of English valence scores onto other languages through
//! word-level translation edges.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexicon::{clean_word, EntryKey, Lang, LexiconEntry, LexiconError, Source, ValenceLexicon};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum ExtendError {
    #[error("no target languages given")]
    NoTargets,
    #[error("edge source and target language are both {0}")]
    SameLanguage(Lang),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TranslationEdge {
    src_word: String,
    src_lang: Lang,
    tgt_word: String,
    tgt_lang: Lang,
}

impl TranslationEdge {
    pub fn new(src_word: &str, src_lang: Lang, tgt_word: &str, tgt_lang: Lang) -> Result<Self, ExtendError> {
        if src_lang == tgt_lang {
            return Err(ExtendError::SameLanguage(src_lang));
        }
        Ok(Self { src_word: clean_word(src_word)?, src_lang, tgt_word: clean_word(tgt_word)?, tgt_lang })
    }

    pub fn src_word(&self) -> &str {
        &self.src_word
    }

    pub fn src_lang(&self) -> &Lang {
        &self.src_lang
    }

    pub fn tgt_word(&self) -> &str {
        &self.tgt_word
    }

    pub fn tgt_lang(&self) -> &Lang {
        &self.tgt_lang
    }
}

const EDGE_HEADER: &str = "src_word\tsrc_lang\ttgt_word\ttgt_lang";

pub fn read_edges<R: BufRead>(reader: R) -> Result<Vec<TranslationEdge>, ExtendError> {
    let mut edges = Vec::new();
    let mut seen_header = false;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        let perr = |message: String| ExtendError::Parse { line: line_no, message };
        if !seen_header {
            if line != EDGE_HEADER {
                return Err(perr(format!("expected header {EDGE_HEADER:?}")));
            }
            seen_header = true;
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(perr(format!("expected 4 columns, found {}", f.len())));
        }
        let src_lang = Lang::new(f[1].trim()).map_err(|e| perr(e.to_string()))?;
        let tgt_lang = Lang::new(f[3].trim()).map_err(|e| perr(e.to_string()))?;
        let edge = TranslationEdge::new(f[0], src_lang, f[2], tgt_lang).map_err(|e| perr(e.to_string()))?;
        edges.push(edge);
    }
    if !seen_header {
        return Err(ExtendError::Parse { line: 1, message: "missing header".into() });
    }
    Ok(edges)
}

pub fn load_edges(path: &Path) -> Result<Vec<TranslationEdge>, ExtendError> {
    read_edges(BufReader::new(File::open(path)?))
}

/// Bookkeeping for one projection run.
///
/// `sum(added) + duplicates_merged == usable_edges`, where an edge is usable
/// when it starts in English, ends in a target language, is not an exact
/// repeat of an earlier edge, and its source word is in the base lexicon.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectionReport {
    pub added: BTreeMap<String, usize>,
    pub usable_edges: usize,
    /// Usable edges whose source word is missing from the base lexicon.
    pub skipped_edges: usize,
    /// Usable edges that landed on an already projected target key.
    pub duplicates_merged: usize,
    /// Edges not starting in English (multi-hop chains are not followed).
    pub non_english_edges: usize,
    pub off_target_edges: usize,
    pub repeated_edges: usize,
}

impl ProjectionReport {
    pub fn total_added(&self) -> usize {
        self.added.values().sum()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ProjectionOptions {
    /// Match English source words case-insensitively.
    pub case_fold: bool,
}

/// Copies each English source score onto its translations in `target_langs`.
///
/// Returns only the projected entries; translations reached from several
/// English words receive the mean of their sources' valences.
pub fn project_scores<T: Scalar>(
    base: &ValenceLexicon<T>,
    edges: &[TranslationEdge],
    target_langs: &BTreeSet<Lang>,
    options: ProjectionOptions,
) -> Result<(ValenceLexicon<T>, ProjectionReport), ExtendError> {
    if target_langs.is_empty() {
        return Err(ExtendError::NoTargets);
    }
    let fold = |w: &str| if options.case_fold { w.to_lowercase() } else { w.to_owned() };

    // English source score per (possibly folded) word; folded collisions average.
    let mut sources: HashMap<String, (T, usize)> = HashMap::new();
    for e in base.entries().filter(|e| e.lang().is_english()) {
        let slot = sources.entry(fold(e.word())).or_insert((T::zero(), 0));
        slot.0 += e.valence();
        slot.1 += 1;
    }

    let mut report = ProjectionReport::default();
    let mut seen = BTreeSet::new();
    let mut projected: BTreeMap<EntryKey, Vec<T>> = BTreeMap::new();
    for edge in edges {
        if !edge.src_lang.is_english() {
            report.non_english_edges += 1;
            continue;
        }
        if !target_langs.contains(&edge.tgt_lang) {
            report.off_target_edges += 1;
            continue;
        }
        if !seen.insert((fold(&edge.src_word), &edge.tgt_word, &edge.tgt_lang)) {
            report.repeated_edges += 1;
            continue;
        }
        let Some(&(sum, count)) = sources.get(&fold(&edge.src_word)) else {
            report.skipped_edges += 1;
            continue;
        };
        report.usable_edges += 1;
        let key = EntryKey { lang: edge.tgt_lang.clone(), word: edge.tgt_word.clone() };
        let slot = projected.entry(key).or_default();
        if !slot.is_empty() {
            report.duplicates_merged += 1;
        }
        slot.push(sum / T::from_count(count));
    }

    let mut out = ValenceLexicon::new();
    for (key, values) in projected {
        let mean = values.iter().copied().sum::<T>() / T::from_count(values.len());
        *report.added.entry(key.lang.to_string()).or_default() += 1;
        out.insert(LexiconEntry::new(&key.word, key.lang, mean)?.with_source(Source::Projected))?;
    }
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lang(s: &str) -> Lang {
        Lang::new(s).unwrap()
    }

    fn edge(s: &str, sl: &str, t: &str, tl: &str) -> TranslationEdge {
        TranslationEdge::new(s, lang(sl), t, lang(tl)).unwrap()
    }

    fn base(rows: &[(&str, f64)]) -> ValenceLexicon<f64> {
        ValenceLexicon::from_entries(rows.iter().map(|(w, v)| LexiconEntry::new(w, lang("en"), *v).unwrap()))
            .unwrap()
    }

    fn targets(ls: &[&str]) -> BTreeSet<Lang> {
        ls.iter().map(|l| lang(l)).collect()
    }

    #[test]
    fn direct_copy() {
        let (out, report) = project_scores(
            &base(&[("good", 3.2)]),
            &[edge("good", "en", "bagus", "id"), edge("good", "en", "bien", "es")],
            &targets(&["id", "es"]),
            ProjectionOptions::default(),
        )
        .unwrap();
        assert_eq!(out.len(), 2);
        assert!(out.entries().all(|e| e.valence() == 3.2 && e.source() == Source::Projected));
        assert_eq!(report.total_added() + report.duplicates_merged, report.usable_edges);
    }

    #[test]
    fn shared_target_is_mean() {
        let (out, report) = project_scores(
            &base(&[("good", 2.0), ("great", 4.0)]),
            &[edge("good", "en", "bagus", "id"), edge("great", "en", "bagus", "id")],
            &targets(&["id"]),
            ProjectionOptions::default(),
        )
        .unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out.entries().next().unwrap().valence(), 3.0);
        assert_eq!(report.duplicates_merged, 1);
    }

    #[test]
    fn skips_and_filters() {
        let edges = [
            edge("good", "en", "bagus", "id"),
            edge("good", "en", "bagus", "id"),
            edge("missing", "en", "hilang", "id"),
            edge("bagus", "id", "bueno", "es"),
            edge("good", "en", "gut", "de"),
        ];
        let (out, r) =
            project_scores(&base(&[("good", 1.0)]), &edges, &targets(&["id", "es"]), ProjectionOptions::default())
                .unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(
            (r.usable_edges, r.skipped_edges, r.repeated_edges, r.non_english_edges, r.off_target_edges),
            (1, 1, 1, 1, 1)
        );
    }

    #[test]
    fn case_folding() {
        let edges = [edge("Good", "en", "bagus", "id")];
        let b = base(&[("good", 2.0)]);
        let (strict, _) = project_scores(&b, &edges, &targets(&["id"]), ProjectionOptions::default()).unwrap();
        assert!(strict.is_empty());
        let (folded, _) = project_scores(&b, &edges, &targets(&["id"]), ProjectionOptions { case_fold: true }).unwrap();
        assert_eq!(folded.len(), 1);
    }

    #[test]
    fn empty_targets_is_error() {
        assert!(matches!(
            project_scores(&base(&[]), &[], &BTreeSet::new(), ProjectionOptions::default()),
            Err(ExtendError::NoTargets)
        ));
    }

    #[test]
    fn edge_validation_and_parsing() {
        assert!(TranslationEdge::new("good", lang("en"), "good", lang("en")).is_err());
        assert!(TranslationEdge::new("", lang("en"), "x", lang("id")).is_err());
        let text = "src_word\tsrc_lang\ttgt_word\ttgt_lang\ngood\ten\tselamat pagi\tid\n";
        let edges = read_edges(text.as_bytes()).unwrap();
        assert_eq!(edges[0].tgt_word(), "selamat pagi");
        let err = read_edges("src_word\tsrc_lang\ttgt_word\ttgt_lang\ngood\ten\tid\n".as_bytes()).unwrap_err();
        assert!(matches!(err, ExtendError::Parse { line: 2, .. }));
    }
}
