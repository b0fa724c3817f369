//! Generative KB-completion ranking and text-generation metrics.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::hash::Hash;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Scalar;
use crate::corpus::{is_special, mask_path_side, parse_path, serialize_path, MaskedItem, PathTriple, Side, Vocabulary};
use crate::model::{strip_generated, DualModel, TransferDirection};
use crate::par::Execution;
use crate::training::{DevEvaluator, DevMetrics};
use crate::weak_supervision::{cosine, fit_tfidf, DEFAULT_NGRAM};

/// Scores closer than this are treated as tied.
pub const TIE_EPS: f64 = 1e-12;

/// Smoothing value for zero n-gram precisions.
pub const BLEU_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("candidate pool is empty")]
    EmptyPool,
    #[error("no ranking outcomes")]
    NoQueries,
    #[error("no paired examples to score against")]
    NoPairs,
    #[error("direction {0} is not a text direction")]
    BadDirection(TransferDirection),
}

/// All entity strings seen in the data plus every known tuple, for
/// filtering corrupted candidates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CandidatePool {
    pub nodes: Vec<Vec<u32>>,
    pub known_tuples: HashSet<Vec<u32>>,
}

impl CandidatePool {
    /// Builds the pool from tuples of every split.
    pub fn build<'a>(paths: impl IntoIterator<Item = &'a PathTriple>) -> Self {
        let mut nodes = BTreeSet::new();
        let mut known = HashSet::new();
        for p in paths {
            nodes.insert(p.head.clone());
            nodes.insert(p.tail.clone());
            if let Ok(s) = serialize_path(p) {
                known.insert(s);
            }
        }
        CandidatePool {
            nodes: nodes.into_iter().collect(),
            known_tuples: known,
        }
    }

    pub fn is_known(&self, p: &PathTriple) -> bool {
        serialize_path(p).map(|s| self.known_tuples.contains(&s)).unwrap_or(false)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompletionQuery {
    pub id: usize,
    pub masked: MaskedItem,
    pub truth: PathTriple,
    pub side: Side,
}

impl CompletionQuery {
    pub fn new(id: usize, truth: PathTriple, side: Side) -> Self {
        let masked = mask_path_side(&truth, side).expect("valid tuple serializes");
        CompletionQuery {
            id,
            masked,
            truth,
            side,
        }
    }
}

/// One head query and one tail query per tuple, ids in order.
pub fn build_queries(tuples: &[PathTriple]) -> Vec<CompletionQuery> {
    let mut out = Vec::with_capacity(tuples.len() * 2);
    for t in tuples {
        for side in [Side::Head, Side::Tail] {
            out.push(CompletionQuery::new(out.len(), t.clone(), side));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankingOutcome {
    pub query_id: usize,
    pub side: Side,
    pub rank: usize,
    pub candidates_after_filter: usize,
    pub malformed: bool,
}

/// Candidate tuples for `q`: every pool node substituted into the masked
/// slot of the truth, minus corrupted tuples already known. The truth is
/// always first.
pub fn candidates(q: &CompletionQuery, pool: &CandidatePool) -> Vec<PathTriple> {
    let mut out = vec![q.truth.clone()];
    let truth_entity = q.truth.entity(q.side);
    for node in &pool.nodes {
        if node.as_slice() == truth_entity {
            continue;
        }
        let c = q.truth.with_entity(q.side, node.clone());
        if !pool.is_known(&c) {
            out.push(c);
        }
    }
    out
}

/// Ranks the truth among the filtered candidates by fuzzy similarity to
/// `generated`. `None` means the generation did not parse, which earns the
/// worst rank. Ties count against the truth.
pub fn rank_generated(
    generated: Option<&PathTriple>,
    q: &CompletionQuery,
    pool: &CandidatePool,
    vocab: &Vocabulary,
) -> Result<RankingOutcome, EvalError> {
    if pool.nodes.is_empty() {
        return Err(EvalError::EmptyPool);
    }
    let cands = candidates(q, pool);
    let n = cands.len();
    let outcome = |rank, malformed| RankingOutcome {
        query_id: q.id,
        side: q.side,
        rank,
        candidates_after_filter: n,
        malformed,
    };
    let Some(generated) = generated else {
        return Ok(outcome(n, true));
    };
    let mut texts: Vec<String> = cands.iter().map(|c| c.flat_text(vocab)).collect();
    let probe = generated.flat_text(vocab);
    texts.push(probe.clone());
    let model = fit_tfidf(&texts, DEFAULT_NGRAM).expect("non-empty corpus");
    let g = model.vectorize(&probe);
    let scores: Vec<f64> = texts[..n].iter().map(|t| cosine(&model.vectorize(t), &g)).collect();
    let truth = scores[0];
    let ahead = scores[1..].iter().filter(|&&s| s > truth || (s - truth).abs() <= TIE_EPS).count();
    Ok(outcome(1 + ahead, false))
}

/// Parses a generated token sequence into a tuple, if well formed.
pub fn parse_generated(tokens: &[u32]) -> Option<PathTriple> {
    parse_path(&strip_generated(tokens)).ok()
}

/// Generates a completion for `q` with the masked-path direction and ranks
/// it.
pub fn rank_query<T: Scalar>(
    m: &DualModel<T>,
    q: &CompletionQuery,
    pool: &CandidatePool,
    vocab: &Vocabulary,
) -> Result<RankingOutcome, EvalError> {
    let generated = m
        .generate(&q.masked.masked_tokens, TransferDirection::BmB)
        .ok()
        .and_then(|r| parse_generated(&r.output_tokens));
    rank_generated(generated.as_ref(), q, pool, vocab)
}

const RANK_CHUNK: usize = 32;

/// Ranks many queries. Generation is batched per chunk and chunks run
/// data-parallel; the result equals calling [`rank_query`] per query.
pub fn rank_queries<T: Scalar>(
    m: &DualModel<T>,
    queries: &[CompletionQuery],
    pool: &CandidatePool,
    vocab: &Vocabulary,
    exec: Execution,
) -> Result<Vec<RankingOutcome>, EvalError> {
    if pool.nodes.is_empty() {
        return Err(EvalError::EmptyPool);
    }
    let chunks: Vec<&[CompletionQuery]> = queries.chunks(RANK_CHUNK).collect();
    let per_chunk = exec.map(&chunks, |chunk| {
        let inputs: Vec<Vec<u32>> = chunk.iter().map(|q| q.masked.masked_tokens.clone()).collect();
        let gens = m.generate_batch(&inputs, TransferDirection::BmB);
        chunk
            .iter()
            .zip(gens)
            .map(|(q, g)| {
                let parsed = g.ok().and_then(|r| parse_generated(&r.output_tokens));
                rank_generated(parsed.as_ref(), q, pool, vocab)
            })
            .collect::<Result<Vec<_>, _>>()
    });
    let mut out = Vec::with_capacity(queries.len());
    for c in per_chunk {
        out.extend(c?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankMetrics {
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    pub n_queries: usize,
    pub n_malformed: usize,
}

/// Filtered MRR and HITS@{1,3,10}, all scaled to 0..100, pooled over
/// head and tail queries.
pub fn mrr_hits(outcomes: &[RankingOutcome]) -> Result<RankMetrics, EvalError> {
    if outcomes.is_empty() {
        return Err(EvalError::NoQueries);
    }
    let n = outcomes.len() as f64;
    let hits = |k: usize| 100.0 * outcomes.iter().filter(|o| o.rank <= k).count() as f64 / n;
    Ok(RankMetrics {
        mrr: 100.0 * outcomes.iter().map(|o| 1.0 / o.rank as f64).sum::<f64>() / n,
        hits1: hits(1),
        hits3: hits(3),
        hits10: hits(10),
        n_queries: outcomes.len(),
        n_malformed: outcomes.iter().filter(|o| o.malformed).count(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub all: RankMetrics,
    pub head: Option<RankMetrics>,
    pub tail: Option<RankMetrics>,
}

pub fn rank_report(outcomes: &[RankingOutcome]) -> Result<RankReport, EvalError> {
    let side = |s: Side| {
        let v: Vec<RankingOutcome> = outcomes.iter().filter(|o| o.side == s).copied().collect();
        mrr_hits(&v).ok()
    };
    Ok(RankReport {
        all: mrr_hits(outcomes)?,
        head: side(Side::Head),
        tail: side(Side::Tail),
    })
}

fn ngram_counts<S: Eq + Hash>(tokens: &[S], n: usize) -> HashMap<&[S], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Sentence BLEU with uniform weights over 1..=n-gram precisions and the
/// brevity penalty. Zero precisions are replaced by [`BLEU_EPS`].
pub fn bleu_n<S: Eq + Hash>(candidate: &[S], reference: &[S], n: usize) -> f64 {
    assert!(n >= 1, "BLEU order must be at least 1");
    if candidate.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for k in 1..=n {
        let cand = ngram_counts(candidate, k);
        let refc = ngram_counts(reference, k);
        let total: usize = cand.values().sum();
        let clipped: usize = cand
            .iter()
            .map(|(g, &c)| c.min(refc.get(g).copied().unwrap_or(0)))
            .sum();
        let p = if clipped == 0 || total == 0 {
            BLEU_EPS
        } else {
            clipped as f64 / total as f64
        };
        log_sum += p.ln();
    }
    let (c, r) = (candidate.len() as f64, reference.len() as f64);
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    bp * (log_sum / n as f64).exp()
}

fn lcs_len<S: Eq>(a: &[S], b: &[S]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F-measure from the longest common subsequence.
pub fn rouge_l<S: Eq>(candidate: &[S], reference: &[S]) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let l = lcs_len(candidate, reference) as f64;
    if l == 0.0 {
        return 0.0;
    }
    let p = l / candidate.len() as f64;
    let r = l / reference.len() as f64;
    2.0 * p * r / (p + r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextMetrics {
    pub direction: TransferDirection,
    pub bleu2: f64,
    pub bleu3: f64,
    pub rouge_l: f64,
    pub n: usize,
}

fn content(tokens: &[u32]) -> Vec<u32> {
    strip_generated(tokens).into_iter().filter(|&t| !is_special(t)).collect()
}

/// Corpus means of BLEU2/3 and ROUGE-L for a sentence-producing
/// direction. `pairs` holds `(sentence, serialized path)`; AA and ABA read
/// the sentence, BA reads the path, and the sentence is always the
/// reference. Rows whose generation fails score 0.
pub fn evaluate_text<T: Scalar>(
    m: &DualModel<T>,
    pairs: &[(Vec<u32>, Vec<u32>)],
    direction: TransferDirection,
    exec: Execution,
) -> Result<TextMetrics, EvalError> {
    if !matches!(direction, TransferDirection::AA | TransferDirection::ABA | TransferDirection::BA) {
        return Err(EvalError::BadDirection(direction));
    }
    if pairs.is_empty() {
        return Err(EvalError::NoPairs);
    }
    let chunks: Vec<&[(Vec<u32>, Vec<u32>)]> = pairs.chunks(RANK_CHUNK).collect();
    let scores = exec.map(&chunks, |chunk| {
        let inputs: Vec<Vec<u32>> = chunk
            .iter()
            .map(|(s, p)| if direction == TransferDirection::BA { p.clone() } else { s.clone() })
            .collect();
        let gens = m.generate_batch(&inputs, direction);
        chunk
            .iter()
            .zip(gens)
            .map(|((s, _), g)| {
                let cand = g.map(|r| content(&r.output_tokens)).unwrap_or_default();
                let reference = content(s);
                [bleu_n(&cand, &reference, 2), bleu_n(&cand, &reference, 3), rouge_l(&cand, &reference)]
            })
            .collect::<Vec<_>>()
    });
    let mut sums = [0.0; 3];
    let mut n = 0;
    for row in scores.iter().flatten() {
        for k in 0..3 {
            sums[k] += row[k];
        }
        n += 1;
    }
    Ok(TextMetrics {
        direction,
        bleu2: sums[0] / n as f64,
        bleu3: sums[1] / n as f64,
        rouge_l: sums[2] / n as f64,
        n,
    })
}

/// Dev evaluation used for model selection: ranking MRR/HITS over the
/// queries and BA text metrics over the pairs.
pub struct DevSet {
    pub queries: Vec<CompletionQuery>,
    pub pool: CandidatePool,
    pub pairs: Vec<(Vec<u32>, Vec<u32>)>,
    pub vocab: Vocabulary,
    pub exec: Execution,
}

impl<T: Scalar> DevEvaluator<T> for DevSet {
    fn evaluate(&self, model: &DualModel<T>) -> DevMetrics {
        let mut d = DevMetrics::default();
        if let Ok(r) = rank_queries(model, &self.queries, &self.pool, &self.vocab, self.exec)
            .and_then(|o| mrr_hits(&o))
        {
            d.mrr = r.mrr;
            d.hits1 = r.hits1;
            d.hits3 = r.hits3;
            d.hits10 = r.hits10;
        }
        if let Ok(t) = evaluate_text(model, &self.pairs, TransferDirection::BA, self.exec) {
            d.bleu2 = t.bleu2;
            d.bleu3 = t.bleu3;
            d.rouge_l = t.rouge_l;
        }
        d
    }
}
