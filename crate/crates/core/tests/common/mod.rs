//! Synthetic data shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use lexsent_core::lexicon::{class_of, ClassMode, EntryKey, Lang, LexiconEntry, Split, ValenceLexicon};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn lang(code: &str) -> Lang {
    Lang::new(code).unwrap()
}

const CONSONANTS: &[u8] = b"bdfgkprstvz";
const VOWELS: &[u8] = b"aeiou";

fn syllable(rng: &mut ChaCha8Rng) -> String {
    let c = CONSONANTS[rng.gen_range(0..CONSONANTS.len())] as char;
    let v = VOWELS[rng.gen_range(0..VOWELS.len())] as char;
    format!("{c}{v}")
}

/// Word classes of the toy lexicon: (root, count per language, valence range).
const CLASSES: [(&str, usize, f64, f64); 4] = [
    ("bonum", 10, 3.0, 5.0),
    ("malus", 10, -5.0, -3.0),
    ("serin", 3, 0.3, 0.7),
    ("tacet", 2, -0.7, -0.3),
];

/// Two-language lexicon of 40 polar words (|v| >= 3) and 10 neutral words.
/// Each word carries a sentiment root so held-out words share character
/// trigrams with training words.
pub fn toy_bilingual_lexicon(seed: u64) -> ValenceLexicon<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = BTreeSet::new();
    let mut entries = Vec::new();
    for code in ["en", "es"] {
        for (root, count, lo, hi) in CLASSES {
            let mut made = 0;
            while made < count {
                let word = match code {
                    "en" => format!("{root}{}", syllable(&mut rng)),
                    _ => format!("{}{root}", syllable(&mut rng)),
                };
                if !seen.insert(word.clone()) {
                    continue;
                }
                let v = (rng.gen_range(lo..=hi) * 100.0_f64).round() / 100.0;
                entries.push(LexiconEntry::new(&word, lang(code), v).unwrap());
                made += 1;
            }
        }
    }
    ValenceLexicon::from_entries(entries).unwrap()
}

#[derive(Debug, Clone)]
pub struct ToySentence {
    pub text: String,
    pub mean_valence: f64,
}

impl ToySentence {
    pub fn gold(&self, mode: ClassMode) -> String {
        class_of(self.mean_valence, mode).unwrap().as_str().to_owned()
    }
}

/// Monolingual sentences of 2 to 4 lexicon words drawn from one of three
/// pools: words with positive valence, words with negative valence, or
/// neutral words only. Opposite polar words never share a sentence.
/// Sentences whose mean valence lies within `margin` of a class boundary
/// (-1, 0, +1) are rejected, so the gold label is stable under small
/// score errors.
pub fn toy_sentences(lexicon: &ValenceLexicon<f64>, n: usize, margin: f64, seed: u64) -> Vec<ToySentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pools: [fn(f64) -> bool; 3] = [|v| v > 0.0, |v| v < 0.0, |v| v.abs() < 1.0];
    let mut by_lang: Vec<[Vec<(&str, f64)>; 3]> = Vec::new();
    for l in lexicon.languages() {
        let words: Vec<(&str, f64)> =
            lexicon.entries().filter(|e| *e.lang() == l).map(|e| (e.word(), e.valence())).collect();
        by_lang.push(pools.map(|keep| words.iter().copied().filter(|w| keep(w.1)).collect()));
    }
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let words = &by_lang[rng.gen_range(0..by_lang.len())][rng.gen_range(0..pools.len())];
        let len = rng.gen_range(2..=4);
        let picked: Vec<(&str, f64)> = (0..len).map(|_| words[rng.gen_range(0..words.len())]).collect();
        let mean = picked.iter().map(|p| p.1).sum::<f64>() / len as f64;
        if [-1.0, 0.0, 1.0].iter().any(|b| (mean - b).abs() < margin) {
            continue;
        }
        let text = picked.iter().map(|p| p.0).collect::<Vec<_>>().join(" ");
        out.push(ToySentence { text, mean_valence: mean });
    }
    out
}

fn trigrams(word: &str) -> Vec<String> {
    let chars: Vec<char> = format!("<{word}>").chars().collect();
    chars.windows(3).map(|w| w.iter().collect()).collect()
}

/// Ridge least squares on pooled bag-of-token features, mirroring the
/// reference encoder's composition: a token is the mean of its word
/// indicator (if seen in training) and its seen trigram indicators, a
/// sentence is the mean of its tokens.
pub struct BagOfTokensOracle {
    features: BTreeMap<String, usize>,
    words: BTreeSet<String>,
    weights: DVector<f64>,
}

impl BagOfTokensOracle {
    pub fn fit(train: &[(&str, f64)], ridge: f64) -> Self {
        let mut features = BTreeMap::new();
        let mut words = BTreeSet::new();
        features.insert("<unk>".to_owned(), 0);
        for (w, _) in train {
            words.insert(w.to_string());
            let n = features.len();
            features.entry(format!("w:{w}")).or_insert(n);
            for g in trigrams(w) {
                let n = features.len();
                features.entry(format!("g:{g}")).or_insert(n);
            }
        }
        let mut oracle = Self { features, words, weights: DVector::zeros(0) };
        let dim = oracle.features.len() + 1;
        let x = DMatrix::from_fn(train.len(), dim, |i, j| oracle.pooled(train[i].0)[j]);
        let y = DVector::from_iterator(train.len(), train.iter().map(|t| t.1));
        let gram = &x * x.transpose() + DMatrix::identity(train.len(), train.len()) * ridge;
        let alpha = gram.lu().solve(&y).expect("ridge system is non-singular");
        oracle.weights = x.transpose() * alpha;
        oracle
    }

    fn token(&self, token: &str) -> Vec<usize> {
        let mut rows = Vec::new();
        if self.words.contains(token) {
            rows.push(self.features[&format!("w:{token}")]);
        }
        rows.extend(trigrams(token).iter().filter_map(|g| self.features.get(&format!("g:{g}")).copied()));
        if rows.is_empty() {
            rows.push(0);
        }
        rows
    }

    /// Feature vector of a text, with a trailing constant for the bias.
    fn pooled(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.features.len() + 1];
        let tokens: Vec<&str> = text.split_whitespace().collect();
        for t in &tokens {
            let rows = self.token(t);
            for r in &rows {
                v[*r] += 1.0 / (rows.len() * tokens.len()) as f64;
            }
        }
        v[self.features.len()] = 1.0;
        v
    }

    pub fn predict(&self, text: &str) -> f64 {
        self.pooled(text).iter().zip(self.weights.iter()).map(|(a, b)| a * b).sum()
    }
}

/// Training rows of `lexicon` after the same 80:20 split pretraining uses.
pub fn train_rows(lexicon: &ValenceLexicon<f64>, seed: u64) -> Vec<(String, f64)> {
    let mut lex = lexicon.clone();
    lex.assign_splits(seed, 0.8).unwrap();
    lex.entries()
        .filter(|e| lex.split_of(&EntryKey { lang: e.lang().clone(), word: e.word().to_owned() }) == Some(Split::Train))
        .map(|e| (e.word().to_owned(), e.valence()))
        .collect()
}
