//! Weakly supervised pairing of sentences with paths.
//!
//! Strings are compared with tf-idf weighted character n-grams and cosine
//! similarity. Each sentence keeps its single best path when the score
//! clears the match threshold.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::Execution;

pub use crate::corpus::PairedExample;

pub const DEFAULT_NGRAM: usize = 3;
pub const DEFAULT_MATCH_THRESHOLD: f64 = 0.6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchError {
    #[error("cannot fit tf-idf on an empty corpus")]
    EmptyCorpus,
    #[error("n-gram size must be at least 1")]
    InvalidNgram,
    #[error("supervision ratio {0} outside [0, 1]")]
    InvalidRatio(f64),
}

/// Character n-grams of the lowercased string, spaces kept. Strings shorter
/// than `n` yield themselves as a single gram.
pub fn char_ngrams(s: &str, n: usize) -> Vec<String> {
    let chars: Vec<char> = s.chars().flat_map(char::to_lowercase).collect();
    if chars.is_empty() {
        return Vec::new();
    }
    if chars.len() < n {
        return vec![chars.into_iter().collect()];
    }
    chars.windows(n).map(|w| w.iter().collect()).collect()
}

/// Sparse vector over gram indices, sorted by index.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseVec {
    entries: Vec<(u32, f64)>,
}

impl SparseVec {
    pub fn from_sorted(entries: Vec<(u32, f64)>) -> Self {
        debug_assert!(entries.windows(2).all(|w| w[0].0 < w[1].0));
        SparseVec { entries }
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|(_, w)| w * w).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &SparseVec) -> f64 {
        let (a, b) = (&self.entries, &other.entries);
        let (mut i, mut j, mut acc) = (0, 0, 0.0);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += a[i].1 * b[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }

    /// Euclidean distance between two vectors.
    pub fn distance(&self, other: &SparseVec) -> f64 {
        let d2 = self.dot(self) + other.dot(other) - 2.0 * self.dot(other);
        d2.max(0.0).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfIdfModel {
    pub ngram_size: usize,
    pub gram_to_index: HashMap<String, u32>,
    pub idf: Vec<f64>,
    pub corpus_size: usize,
}

/// Fits document frequencies over `strings`:
/// `idf(g) = ln((1 + N) / (1 + df(g))) + 1`.
pub fn fit_tfidf<S: AsRef<str>>(strings: &[S], n: usize) -> Result<TfIdfModel, MatchError> {
    if strings.is_empty() {
        return Err(MatchError::EmptyCorpus);
    }
    if n == 0 {
        return Err(MatchError::InvalidNgram);
    }
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for s in strings {
        let grams: BTreeSet<String> = char_ngrams(s.as_ref(), n).into_iter().collect();
        for g in grams {
            *df.entry(g).or_default() += 1;
        }
    }
    let total = strings.len() as f64;
    let mut gram_to_index = HashMap::with_capacity(df.len());
    let mut idf = Vec::with_capacity(df.len());
    for (i, (g, d)) in df.into_iter().enumerate() {
        gram_to_index.insert(g, i as u32);
        idf.push(((1.0 + total) / (1.0 + d as f64)).ln() + 1.0);
    }
    Ok(TfIdfModel {
        ngram_size: n,
        gram_to_index,
        idf,
        corpus_size: strings.len(),
    })
}

impl TfIdfModel {
    /// L2-normalized tf-idf vector of `s`; grams unseen at fit time carry no
    /// weight. Returns the zero vector when nothing is known.
    pub fn vectorize(&self, s: &str) -> SparseVec {
        let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
        for g in char_ngrams(s, self.ngram_size) {
            if let Some(&i) = self.gram_to_index.get(&g) {
                *counts.entry(i).or_default() += 1.0;
            }
        }
        let mut entries: Vec<(u32, f64)> = counts
            .into_iter()
            .map(|(i, tf)| (i, tf * self.idf[i as usize]))
            .collect();
        let norm = entries.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        if norm == 0.0 {
            return SparseVec::default();
        }
        for e in &mut entries {
            e.1 /= norm;
        }
        SparseVec::from_sorted(entries)
    }
}

/// Cosine similarity of two normalized vectors; 0 when either is zero.
pub fn cosine(u: &SparseVec, v: &SparseVec) -> f64 {
    if u.is_zero() || v.is_zero() {
        return 0.0;
    }
    u.dot(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub sentence: usize,
    pub path: usize,
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub matches: Vec<Match>,
    pub unmatched_sentences: Vec<usize>,
    pub unmatched_paths: Vec<usize>,
}

/// Tf-idf index over path strings with an inverted gram index for scoring.
pub struct Matcher {
    model: TfIdfModel,
    postings: Vec<Vec<(u32, f64)>>,
    n_paths: usize,
}

impl Matcher {
    /// Fits tf-idf over the union of sentences and paths, then indexes paths.
    pub fn new<S: AsRef<str> + Sync>(sentences: &[S], paths: &[S], ngram: usize) -> Result<Self, MatchError> {
        let corpus: Vec<&str> = sentences
            .iter()
            .chain(paths.iter())
            .map(AsRef::as_ref)
            .collect();
        let model = fit_tfidf(&corpus, ngram)?;
        let mut postings = vec![Vec::new(); model.idf.len()];
        for (p, s) in paths.iter().enumerate() {
            for &(g, w) in model.vectorize(s.as_ref()).entries() {
                postings[g as usize].push((p as u32, w));
            }
        }
        Ok(Matcher {
            model,
            postings,
            n_paths: paths.len(),
        })
    }

    pub fn model(&self) -> &TfIdfModel {
        &self.model
    }

    /// Scores every path sharing at least one gram with `sentence`.
    fn scores(&self, sentence: &str) -> Vec<(usize, f64)> {
        let v = self.model.vectorize(sentence);
        let mut acc = vec![0.0f64; self.n_paths];
        let mut touched = Vec::new();
        for &(g, w) in v.entries() {
            for &(p, pw) in &self.postings[g as usize] {
                if acc[p as usize] == 0.0 {
                    touched.push(p as usize);
                }
                acc[p as usize] += w * pw;
            }
        }
        touched.sort_unstable();
        touched.dedup();
        touched.into_iter().map(|p| (p, acc[p])).collect()
    }

    /// Best path for a sentence, ties resolved towards the lower index.
    pub fn best(&self, sentence: &str) -> Option<(usize, f64)> {
        self.scores(sentence)
            .into_iter()
            .fold(None, |best: Option<(usize, f64)>, (p, s)| match best {
                Some((_, bs)) if bs >= s => best,
                _ => Some((p, s)),
            })
    }

    /// Full candidate list for debugging reports, best first.
    pub fn top_candidates(&self, sentence: &str, k: usize) -> Vec<(usize, f64)> {
        let mut s = self.scores(sentence);
        s.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        s.truncate(k);
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchConfig {
    pub threshold: f64,
    pub ngram: usize,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            threshold: DEFAULT_MATCH_THRESHOLD,
            ngram: DEFAULT_NGRAM,
        }
    }
}

/// Pairs each sentence with its top path when the score exceeds the threshold.
/// `paths` are flattened `head relation tail` strings.
pub fn match_pairs<S: AsRef<str> + Sync>(
    sentences: &[S],
    paths: &[S],
    cfg: MatchConfig,
    exec: Execution,
) -> Result<MatchResult, MatchError> {
    let matcher = Matcher::new(sentences, paths, cfg.ngram)?;
    let best = exec.map(sentences, |s| matcher.best(s.as_ref()));
    let mut result = MatchResult::default();
    let mut path_used = vec![false; paths.len()];
    for (i, b) in best.into_iter().enumerate() {
        match b {
            Some((p, score)) if score > cfg.threshold => {
                path_used[p] = true;
                result.matches.push(Match {
                    sentence: i,
                    path: p,
                    score,
                });
            }
            _ => result.unmatched_sentences.push(i),
        }
    }
    result.unmatched_paths = path_used
        .iter()
        .enumerate()
        .filter(|(_, &u)| !u)
        .map(|(i, _)| i)
        .collect();
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisionPlan {
    pub rho: f64,
    pub supervised_ids: BTreeSet<usize>,
}

impl SupervisionPlan {
    pub fn is_supervised(&self, id: usize) -> bool {
        self.supervised_ids.contains(&id)
    }
}

/// Samples `round(rho * n_pairs)` pair ids uniformly without replacement.
pub fn plan_supervision(n_pairs: usize, rho: f64, seed: u64) -> Result<SupervisionPlan, MatchError> {
    if !(0.0..=1.0).contains(&rho) || rho.is_nan() {
        return Err(MatchError::InvalidRatio(rho));
    }
    let k = (rho * n_pairs as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let supervised_ids = rand::seq::index::sample(&mut rng, n_pairs, k.min(n_pairs))
        .into_iter()
        .collect();
    Ok(SupervisionPlan {
        rho,
        supervised_ids,
    })
}
