//! Tokenization, path serialization, masking and split management.
//!
//! Paths are single knowledge-base edges `(head, relation, tail)` whose
//! components are token sequences. On the wire a path is rendered as
//! `[SEP] head [SEP] relation [SEP] tail [SEP]`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const BOS: &str = "[BOS]";
pub const EOS: &str = "[EOS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const BOS_ID: u32 = 2;
pub const EOS_ID: u32 = 3;
pub const SEP_ID: u32 = 4;
pub const MASK_ID: u32 = 5;

const SPECIALS: [&str; 6] = [PAD, UNK, BOS, EOS, SEP, MASK];

/// Maximum length (in tokens) of sentences and serialized paths.
pub const MAX_LEN: usize = 64;

/// Confidence threshold applied to knowledge-base edges at ingestion.
pub const MIN_PATH_WEIGHT: f64 = 1.6;

pub fn is_special(id: u32) -> bool {
    id <= MASK_ID
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorpusError {
    #[error("invalid triple: {0} component is empty")]
    InvalidTriple(Component),
    #[error("invalid sentence: {0}")]
    InvalidSentence(&'static str),
    #[error("malformed tuple: {0}")]
    MalformedTuple(MalformedReason),
    #[error("{path}:{line}: {message}")]
    BadRecord {
        path: String,
        line: usize,
        message: String,
    },
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Head,
    Relation,
    Tail,
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Component::Head => "head",
            Component::Relation => "relation",
            Component::Tail => "tail",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MalformedReason {
    WrongSepCount(usize),
    EmptySpan(Component),
    LeadingJunk,
    TrailingJunk,
    UnexpectedSpecial(u32),
}

impl fmt::Display for MalformedReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MalformedReason::WrongSepCount(n) => write!(f, "expected 4 [SEP] tokens, found {n}"),
            MalformedReason::EmptySpan(c) => write!(f, "empty {c} span"),
            MalformedReason::LeadingJunk => f.write_str("tokens before the first [SEP]"),
            MalformedReason::TrailingJunk => f.write_str("tokens after the last [SEP]"),
            MalformedReason::UnexpectedSpecial(id) => {
                write!(f, "unexpected special token id {id} inside a span")
            }
        }
    }
}

/// Bidirectional token/id map. The six special tokens always occupy ids 0..6.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    tokens: Vec<String>,
}

impl From<VocabularyRepr> for Vocabulary {
    fn from(r: VocabularyRepr) -> Self {
        let mut v = Vocabulary::new();
        for t in r.tokens.into_iter().skip(SPECIALS.len()) {
            v.insert(t);
        }
        v
    }
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        VocabularyRepr {
            tokens: v.id_to_token,
        }
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    /// A vocabulary holding only the special tokens.
    pub fn new() -> Self {
        let mut v = Vocabulary {
            token_to_id: HashMap::new(),
            id_to_token: Vec::new(),
        };
        for s in SPECIALS {
            v.insert(s.to_string());
        }
        v
    }

    /// Builds a vocabulary from raw texts, keeping the `max_size` most frequent
    /// words (specials included in the count). Ties break lexicographically.
    pub fn build<'a, I>(texts: I, max_size: usize) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for w in split_words(text) {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut words: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(w, _)| !SPECIALS.contains(&w.as_str()))
            .collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut v = Vocabulary::new();
        let room = max_size.saturating_sub(SPECIALS.len());
        for (w, _) in words.into_iter().take(room) {
            v.insert(w);
        }
        v
    }

    fn insert(&mut self, token: String) -> u32 {
        if let Some(&id) = self.token_to_id.get(&token) {
            return id;
        }
        let id = self.id_to_token.len() as u32;
        self.token_to_id.insert(token.clone(), id);
        self.id_to_token.push(token);
        id
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.token_to_id.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        tokenize(text, self)
    }

    /// Joins tokens with single spaces. Unknown ids render as `[UNK]`.
    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .map(|&id| self.token(id).unwrap_or(UNK))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Decodes ids while dropping every special token.
    pub fn decode_plain(&self, ids: &[u32]) -> String {
        let plain: Vec<u32> = ids.iter().copied().filter(|&i| !is_special(i)).collect();
        self.decode(&plain)
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }
}

/// Lowercases, splits on whitespace and separates punctuation into its own
/// tokens. Bracketed special tokens such as `[SEP]` survive intact.
pub fn split_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for raw in text.split_whitespace() {
        if SPECIALS.contains(&raw) {
            out.push(raw.to_string());
            continue;
        }
        let mut cur = String::new();
        for c in raw.chars() {
            if c.is_alphanumeric() {
                cur.extend(c.to_lowercase());
            } else {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(c.to_lowercase().collect());
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

pub fn tokenize(text: &str, vocab: &Vocabulary) -> Vec<u32> {
    split_words(text).iter().map(|w| vocab.id(w)).collect()
}

/// A free-text sentence (modality A).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SentenceExample {
    pub tokens: Vec<u32>,
}

impl SentenceExample {
    pub fn new(tokens: Vec<u32>) -> Result<Self, CorpusError> {
        if tokens.is_empty() {
            return Err(CorpusError::InvalidSentence("empty sentence"));
        }
        if tokens.contains(&SEP_ID) {
            return Err(CorpusError::InvalidSentence("sentence contains [SEP]"));
        }
        Ok(SentenceExample { tokens })
    }
}

/// A knowledge-base edge (modality B).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PathTriple {
    pub head: Vec<u32>,
    pub relation: Vec<u32>,
    pub tail: Vec<u32>,
}

impl PathTriple {
    pub fn new(head: Vec<u32>, relation: Vec<u32>, tail: Vec<u32>) -> Result<Self, CorpusError> {
        let p = PathTriple {
            head,
            relation,
            tail,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn from_text(head: &str, relation: &str, tail: &str, vocab: &Vocabulary) -> Result<Self, CorpusError> {
        Self::new(vocab.encode(head), vocab.encode(relation), vocab.encode(tail))
    }

    fn validate(&self) -> Result<(), CorpusError> {
        for (c, toks) in self.components() {
            if toks.is_empty() {
                return Err(CorpusError::InvalidTriple(c));
            }
        }
        Ok(())
    }

    pub fn components(&self) -> [(Component, &[u32]); 3] {
        [
            (Component::Head, &self.head),
            (Component::Relation, &self.relation),
            (Component::Tail, &self.tail),
        ]
    }

    pub fn entity(&self, side: Side) -> &[u32] {
        match side {
            Side::Head => &self.head,
            Side::Tail => &self.tail,
        }
    }

    /// Copy of this triple with the `side` entity replaced.
    pub fn with_entity(&self, side: Side, entity: Vec<u32>) -> PathTriple {
        let mut p = self.clone();
        match side {
            Side::Head => p.head = entity,
            Side::Tail => p.tail = entity,
        }
        p
    }

    /// Renders the triple as `head relation tail`, specials removed.
    pub fn flat_text(&self, vocab: &Vocabulary) -> String {
        format!(
            "{} {} {}",
            vocab.decode_plain(&self.head),
            vocab.decode_plain(&self.relation),
            vocab.decode_plain(&self.tail)
        )
    }
}

pub fn serialize_path(p: &PathTriple) -> Result<Vec<u32>, CorpusError> {
    p.validate()?;
    let mut out = Vec::with_capacity(p.head.len() + p.relation.len() + p.tail.len() + 4);
    out.push(SEP_ID);
    out.extend_from_slice(&p.head);
    out.push(SEP_ID);
    out.extend_from_slice(&p.relation);
    out.push(SEP_ID);
    out.extend_from_slice(&p.tail);
    out.push(SEP_ID);
    Ok(out)
}

/// Parses arbitrary token output into a triple. Never panics.
pub fn parse_path(tokens: &[u32]) -> Result<PathTriple, CorpusError> {
    let malformed = |r| Err(CorpusError::MalformedTuple(r));
    let seps: Vec<usize> = tokens
        .iter()
        .enumerate()
        .filter(|(_, &t)| t == SEP_ID)
        .map(|(i, _)| i)
        .collect();
    if seps.len() != 4 {
        return malformed(MalformedReason::WrongSepCount(seps.len()));
    }
    if seps[0] != 0 {
        return malformed(MalformedReason::LeadingJunk);
    }
    if seps[3] != tokens.len() - 1 {
        return malformed(MalformedReason::TrailingJunk);
    }
    let comps = [Component::Head, Component::Relation, Component::Tail];
    let mut spans: Vec<Vec<u32>> = Vec::with_capacity(3);
    for (k, c) in comps.into_iter().enumerate() {
        let span = &tokens[seps[k] + 1..seps[k + 1]];
        if span.is_empty() {
            return malformed(MalformedReason::EmptySpan(c));
        }
        if let Some(&bad) = span
            .iter()
            .find(|&&t| matches!(t, PAD_ID | BOS_ID | EOS_ID))
        {
            return malformed(MalformedReason::UnexpectedSpecial(bad));
        }
        spans.push(span.to_vec());
    }
    let tail = spans.pop().unwrap();
    let relation = spans.pop().unwrap();
    let head = spans.pop().unwrap();
    Ok(PathTriple {
        head,
        relation,
        tail,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Head,
    Tail,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MaskSource {
    Sentence(SentenceExample),
    Path(PathTriple),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MaskSpec {
    /// Token positions replaced by `[MASK]`.
    Positions(Vec<usize>),
    /// A whole path entity collapsed into a single `[MASK]`.
    Entity(Side),
    Unmasked,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedItem {
    pub original: MaskSource,
    pub masked_tokens: Vec<u32>,
    pub mask_spec: MaskSpec,
}

/// Replaces each token independently by `[MASK]` with probability `p_tok`.
/// Exactly one uniform draw is consumed per token.
pub fn mask_sentence<R: Rng + ?Sized>(s: &SentenceExample, rng: &mut R, p_tok: f64) -> MaskedItem {
    let mut masked = s.tokens.clone();
    let mut positions = Vec::new();
    for (i, t) in masked.iter_mut().enumerate() {
        if rng.gen::<f64>() < p_tok {
            *t = MASK_ID;
            positions.push(i);
        }
    }
    let mask_spec = if positions.is_empty() {
        MaskSpec::Unmasked
    } else {
        MaskSpec::Positions(positions)
    };
    MaskedItem {
        original: MaskSource::Sentence(s.clone()),
        masked_tokens: masked,
        mask_spec,
    }
}

/// With probability `p_mask` replaces the head or the tail (fair coin) by a
/// single `[MASK]` token. `p_mask = 1` always masks one entity.
pub fn mask_path<R: Rng + ?Sized>(p: &PathTriple, rng: &mut R, p_mask: f64) -> Result<MaskedItem, CorpusError> {
    if rng.gen::<f64>() < p_mask {
        let side = if rng.gen::<bool>() { Side::Head } else { Side::Tail };
        mask_path_side(p, side)
    } else {
        Ok(MaskedItem {
            original: MaskSource::Path(p.clone()),
            masked_tokens: serialize_path(p)?,
            mask_spec: MaskSpec::Unmasked,
        })
    }
}

pub fn mask_path_side(p: &PathTriple, side: Side) -> Result<MaskedItem, CorpusError> {
    let masked = p.with_entity(side, vec![MASK_ID]);
    Ok(MaskedItem {
        original: MaskSource::Path(p.clone()),
        masked_tokens: serialize_path(&masked)?,
        mask_spec: MaskSpec::Entity(side),
    })
}

/// A sentence aligned with a path by fuzzy matching.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedExample {
    pub sentence: SentenceExample,
    pub path: PathTriple,
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SplitPart {
    pub sentences: Vec<SentenceExample>,
    pub paths: Vec<PathTriple>,
    pub pairs: Vec<PairedExample>,
}

impl SplitPart {
    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty() && self.paths.is_empty() && self.pairs.is_empty()
    }

    pub fn all_paths(&self) -> impl Iterator<Item = &PathTriple> {
        self.paths.iter().chain(self.pairs.iter().map(|p| &p.path))
    }

    pub fn all_sentences(&self) -> impl Iterator<Item = &SentenceExample> {
        self.sentences
            .iter()
            .chain(self.pairs.iter().map(|p| &p.sentence))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetSplit {
    pub train: SplitPart,
    pub dev: SplitPart,
    pub test: SplitPart,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RemovalReport {
    pub dev: PartRemovals,
    pub test: PartRemovals,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PartRemovals {
    pub sentences: Vec<String>,
    pub paths: Vec<String>,
    pub pairs: usize,
}

impl PartRemovals {
    pub fn total(&self) -> usize {
        self.sentences.len() + self.paths.len() + self.pairs
    }
}

fn key_of(tokens: &[u32]) -> String {
    tokens
        .iter()
        .map(u32::to_string)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Removes dev/test items whose serialized form also occurs in train.
pub fn enforce_split(train: SplitPart, dev: SplitPart, test: SplitPart) -> (DatasetSplit, RemovalReport) {
    let train_sentences: HashSet<&[u32]> = train.all_sentences().map(|s| s.tokens.as_slice()).collect();
    let train_paths: HashSet<Vec<u32>> = train
        .all_paths()
        .filter_map(|p| serialize_path(p).ok())
        .collect();

    let filter = |part: SplitPart| -> (SplitPart, PartRemovals) {
        let mut rem = PartRemovals::default();
        let mut out = SplitPart::default();
        for s in part.sentences {
            if train_sentences.contains(s.tokens.as_slice()) {
                rem.sentences.push(key_of(&s.tokens));
            } else {
                out.sentences.push(s);
            }
        }
        for p in part.paths {
            let ser = serialize_path(&p).unwrap_or_default();
            if train_paths.contains(&ser) {
                rem.paths.push(key_of(&ser));
            } else {
                out.paths.push(p);
            }
        }
        for pair in part.pairs {
            let ser = serialize_path(&pair.path).unwrap_or_default();
            if train_sentences.contains(pair.sentence.tokens.as_slice()) || train_paths.contains(&ser) {
                rem.pairs += 1;
            } else {
                out.pairs.push(pair);
            }
        }
        (out, rem)
    };
    let (dev, dev_rem) = filter(dev);
    let (test, test_rem) = filter(test);
    (
        DatasetSplit { train, dev, test },
        RemovalReport {
            dev: dev_rem,
            test: test_rem,
        },
    )
}

/// One line of a data file. Field presence decides the record kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DataRecord {
    Pair {
        text: String,
        head: String,
        rel: String,
        tail: String,
        score: f64,
    },
    Path {
        head: String,
        rel: String,
        tail: String,
        weight: f64,
    },
    Sentence {
        text: String,
    },
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CorpusError> {
    let io_err = |e: std::io::Error| CorpusError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let file = File::open(path).map_err(io_err)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| CorpusError::BadRecord {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<(), CorpusError> {
    let io_err = |e: std::io::Error| CorpusError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    for item in items {
        let line = serde_json::to_string(&item).map_err(|e| CorpusError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        writeln!(w, "{line}").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Text-level path record, prior to tokenization.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TextPath {
    pub head: String,
    pub rel: String,
    pub tail: String,
}

impl TextPath {
    pub fn flat(&self) -> String {
        format!("{} {} {}", self.head, self.rel, self.tail)
    }
}

/// Keeps path records whose confidence weight is strictly above `min_weight`.
pub fn filter_by_weight(records: &[DataRecord], min_weight: f64) -> Vec<TextPath> {
    records
        .iter()
        .filter_map(|r| match r {
            DataRecord::Path {
                head,
                rel,
                tail,
                weight,
            } if *weight > min_weight => Some(TextPath {
                head: head.clone(),
                rel: rel.clone(),
                tail: tail.clone(),
            }),
            _ => None,
        })
        .collect()
}

/// Tokenizes a sentence, truncating to `max_len` tokens.
pub fn ingest_sentence(text: &str, vocab: &Vocabulary, max_len: usize) -> Option<SentenceExample> {
    let mut tokens = vocab.encode(text);
    tokens.retain(|&t| t != SEP_ID);
    if tokens.len() > max_len {
        log::warn!("truncating sentence of {} tokens: {text:?}", tokens.len());
        tokens.truncate(max_len);
    }
    SentenceExample::new(tokens).ok()
}

/// Tokenizes a path, shortening its longest component until the serialized
/// form fits in `max_len` tokens.
pub fn ingest_path(p: &TextPath, vocab: &Vocabulary, max_len: usize) -> Option<PathTriple> {
    let mut triple = PathTriple::from_text(&p.head, &p.rel, &p.tail, vocab).ok()?;
    let len = |t: &PathTriple| t.head.len() + t.relation.len() + t.tail.len() + 4;
    if len(&triple) > max_len {
        log::warn!("truncating path of {} tokens: {:?}", len(&triple), p.flat());
        while len(&triple) > max_len {
            let longest = [&mut triple.head, &mut triple.relation, &mut triple.tail]
                .into_iter()
                .max_by_key(|c| c.len())
                .unwrap();
            if longest.len() <= 1 {
                return None;
            }
            longest.pop();
        }
    }
    Some(triple)
}

/// Counts of the items in each split, for logging and manifests.
pub fn split_sizes(split: &DatasetSplit) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for (name, part) in [("train", &split.train), ("dev", &split.dev), ("test", &split.test)] {
        m.insert(format!("{name}_sentences"), part.sentences.len());
        m.insert(format!("{name}_paths"), part.paths.len());
        m.insert(format!("{name}_pairs"), part.pairs.len());
    }
    m
}
