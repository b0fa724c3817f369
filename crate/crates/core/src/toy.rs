//! Synthetic corpora for smoke tests and directional experiments.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::{
    ingest_path, ingest_sentence, PairedExample, PathTriple, SentenceExample, SplitPart, TextPath, Vocabulary, MAX_LEN,
};
use crate::par::Execution;
use crate::weak_supervision::{match_pairs, MatchConfig, DEFAULT_NGRAM};

/// A sentence with the tuple it states.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyFact {
    pub sentence: String,
    pub path: TextPath,
}

fn fact(sentence: String, head: &str, rel: &str, tail: &str) -> ToyFact {
    ToyFact {
        sentence,
        path: TextPath {
            head: head.into(),
            rel: rel.into(),
            tail: tail.into(),
        },
    }
}

const CAPABLE: [(&str, &str); 10] = [
    ("person", "sleep"),
    ("dog", "bark"),
    ("bird", "fly"),
    ("fish", "swim"),
    ("cat", "climb"),
    ("horse", "run"),
    ("cow", "graze"),
    ("frog", "jump"),
    ("bee", "sting"),
    ("snake", "hiss"),
];
const LOCATION: [(&str, &str); 10] = [
    ("book", "library"),
    ("car", "garage"),
    ("plate", "kitchen"),
    ("bed", "bedroom"),
    ("tree", "forest"),
    ("shell", "beach"),
    ("desk", "office"),
    ("boat", "harbor"),
    ("tent", "campsite"),
    ("cart", "supermarket"),
];
const USED_FOR: [(&str, &str); 10] = [
    ("knife", "cutting"),
    ("pen", "writing"),
    ("broom", "sweeping"),
    ("spoon", "eating"),
    ("key", "locking"),
    ("ladder", "reaching"),
    ("shovel", "digging"),
    ("needle", "sewing"),
    ("towel", "drying"),
    ("camera", "photography"),
];
const IS_A: [(&str, &str); 10] = [
    ("rose", "flower"),
    ("violin", "instrument"),
    ("hammer", "tool"),
    ("apple", "fruit"),
    ("carrot", "vegetable"),
    ("sparrow", "songbird"),
    ("diamond", "gem"),
    ("chess", "game"),
    ("soccer", "sport"),
    ("oxygen", "element"),
];
const PROPERTY: [(&str, &str); 10] = [
    ("lemon", "sour"),
    ("ice", "cold"),
    ("fire", "hot"),
    ("feather", "light"),
    ("rock", "heavy"),
    ("sugar", "sweet"),
    ("glass", "fragile"),
    ("snow", "white"),
    ("coal", "black"),
    ("grass", "green"),
];

/// 50 one-to-one sentence/tuple pairs. Every head and tail occurs once, so
/// a tuple is recoverable from either entity plus the relation.
pub fn bijective_facts() -> Vec<ToyFact> {
    let mut out = Vec::with_capacity(50);
    for (h, t) in CAPABLE {
        out.push(fact(format!("a {h} can {t}"), h, "capable of", t));
    }
    for (h, t) in LOCATION {
        out.push(fact(format!("you find a {h} in the {t}"), h, "at location", t));
    }
    for (h, t) in USED_FOR {
        out.push(fact(format!("a {h} is used for {t}"), h, "used for", t));
    }
    for (h, t) in IS_A {
        out.push(fact(format!("a {h} is a kind of {t}"), h, "is a", t));
    }
    for (h, t) in PROPERTY {
        out.push(fact(format!("a {h} is {t}"), h, "has property", t));
    }
    out
}

/// Tokenized corpus with its vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyCorpus {
    pub vocab: Vocabulary,
    pub sentences: Vec<SentenceExample>,
    pub paths: Vec<PathTriple>,
}

impl ToyCorpus {
    /// Builds a vocabulary over all given facts and tokenizes them.
    pub fn from_facts(facts: &[ToyFact]) -> Self {
        let texts: Vec<String> = facts
            .iter()
            .flat_map(|f| [f.sentence.clone(), f.path.flat()])
            .collect();
        let vocab = Vocabulary::build(texts.iter().map(String::as_str), usize::MAX);
        let sentences = facts
            .iter()
            .map(|f| ingest_sentence(&f.sentence, &vocab, MAX_LEN).expect("toy sentence"))
            .collect();
        let paths = facts
            .iter()
            .map(|f| ingest_path(&f.path, &vocab, MAX_LEN).expect("toy path"))
            .collect();
        ToyCorpus { vocab, sentences, paths }
    }

    /// Every fact as an aligned pair.
    pub fn paired_part(&self) -> SplitPart {
        SplitPart {
            pairs: self
                .sentences
                .iter()
                .zip(&self.paths)
                .map(|(s, p)| PairedExample {
                    sentence: s.clone(),
                    path: p.clone(),
                    score: 1.0,
                })
                .collect(),
            ..SplitPart::default()
        }
    }
}

pub fn bijective() -> ToyCorpus {
    ToyCorpus::from_facts(&bijective_facts())
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoisyConfig {
    pub pairs: usize,
    pub dev: usize,
    /// Fraction of text sentences whose fact is missing from the KB. The
    /// matcher pairs each of them with the closest KB path instead.
    pub noise: f64,
    pub seed: u64,
}

impl Default for NoisyConfig {
    fn default() -> Self {
        NoisyConfig {
            pairs: 500,
            dev: 50,
            noise: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ToyError {
    #[error("noise must be in [0, 1], got {0}")]
    BadNoise(f64),
    #[error("the toy world has {available} facts but {needed} are needed")]
    WorldTooSmall { needed: usize, available: usize },
}

/// Fuzzy-matched training pairs, KB tuples without text, and held-out dev
/// tuples, sharing one vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyToy {
    pub vocab: Vocabulary,
    pub train: SplitPart,
    pub dev_paths: Vec<PathTriple>,
    pub dev_sentences: Vec<SentenceExample>,
    /// Indices into `train.pairs` whose sentence states a different fact
    /// than the paired tuple.
    pub noisy_pairs: Vec<usize>,
}

const NOUNS: [&str; 40] = [
    "dog", "cat", "horse", "cow", "sheep", "goat", "pig", "wolf", "fox", "bear", "deer", "rabbit", "mouse", "rat",
    "lion", "tiger", "zebra", "monkey", "camel", "whale", "seal", "otter", "beaver", "badger", "duck", "goose", "owl",
    "eagle", "crow", "shark", "snake", "lizard", "turtle", "frog", "toad", "ant", "bee", "wasp", "moth", "beetle",
];
const MODIFIERS: [&str; 5] = ["young", "old", "small", "big", "tall"];
const ABILITIES: [&str; 8] = ["swim", "fly", "run", "climb", "dig", "hunt", "sing", "hide"];
const PLACES: [&str; 8] = ["forest", "river", "farm", "desert", "ocean", "mountain", "cave", "meadow"];
const PROPERTIES: [&str; 8] = ["fast", "slow", "loud", "quiet", "furry", "wild", "gentle", "clever"];

/// All facts of the modifier/noun world, three per head. Tails depend on
/// the noun only, so a held-out fact about "young wolf" follows from facts
/// about "old wolf".
pub fn world_facts(world_seed: u64) -> Vec<ToyFact> {
    let mut rng = ChaCha8Rng::seed_from_u64(world_seed);
    let attrs: Vec<(&str, &str, &str)> = NOUNS
        .iter()
        .map(|_| {
            (
                *ABILITIES.choose(&mut rng).expect("non-empty"),
                *PLACES.choose(&mut rng).expect("non-empty"),
                *PROPERTIES.choose(&mut rng).expect("non-empty"),
            )
        })
        .collect();
    let mut out = Vec::new();
    for (i, noun) in NOUNS.iter().enumerate() {
        let (ability, place, property) = attrs[i];
        for (j, m) in MODIFIERS.iter().enumerate() {
            let h = format!("{m} {noun}");
            let alt = j % 2 == 1;
            let s = |a: String, b: String| if alt { b } else { a };
            out.push(fact(
                s(format!("the {h} can {ability}"), format!("a {h} is able to {ability}")),
                &h,
                "capable of",
                ability,
            ));
            out.push(fact(
                s(format!("you can find the {h} in the {place}"), format!("the {h} lives in the {place}")),
                &h,
                "at location",
                place,
            ));
            out.push(fact(
                s(format!("the {h} is {property}"), format!("every {h} is {property}")),
                &h,
                "has property",
                property,
            ));
        }
    }
    out
}

/// Builds a weakly supervised corpus the way real data is built. Facts are
/// shuffled and split into KB facts, dev facts and text-only facts. The
/// text corpus holds the sentences of most KB facts plus `noise * pairs`
/// text-only sentences, and every sentence is paired with its best tf-idf
/// match among the KB tuples. Text-only sentences therefore land on a
/// related but wrong tuple, usually the same noun with another modifier.
pub fn noisy(cfg: &NoisyConfig) -> Result<NoisyToy, ToyError> {
    if !(0.0..=1.0).contains(&cfg.noise) {
        return Err(ToyError::BadNoise(cfg.noise));
    }
    let mut facts = world_facts(7);
    let n = cfg.pairs;
    let missing = (cfg.noise * n as f64).round() as usize;
    let needed = n + cfg.dev + missing;
    if needed > facts.len() {
        return Err(ToyError::WorldTooSmall {
            needed,
            available: facts.len(),
        });
    }
    facts.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    facts.truncate(needed);
    let corpus = ToyCorpus::from_facts(&facts);
    let dev = n..n + cfg.dev;
    // Sentence ids into `facts`: KB facts that have text, then text-only facts.
    let text_ids: Vec<usize> = (0..n - missing).chain(n + cfg.dev..needed).collect();
    let sentences: Vec<&str> = text_ids.iter().map(|&i| facts[i].sentence.as_str()).collect();
    let kb: Vec<String> = facts[..n].iter().map(|f| f.path.flat()).collect();
    let kb: Vec<&str> = kb.iter().map(String::as_str).collect();
    let matched = match_pairs(
        &sentences,
        &kb,
        MatchConfig {
            threshold: 0.0,
            ngram: DEFAULT_NGRAM,
        },
        Execution::Sequential,
    )
    .expect("toy corpus is non-empty");
    let mut pairs = Vec::with_capacity(matched.matches.len());
    let mut noisy_pairs = Vec::new();
    for m in &matched.matches {
        let fact = text_ids[m.sentence];
        if fact != m.path {
            noisy_pairs.push(pairs.len());
        }
        pairs.push(PairedExample {
            sentence: corpus.sentences[fact].clone(),
            path: corpus.paths[m.path].clone(),
            score: m.score,
        });
    }
    let sentences = matched
        .unmatched_sentences
        .iter()
        .map(|&s| corpus.sentences[text_ids[s]].clone())
        .collect();
    let paths = matched.unmatched_paths.iter().map(|&p| corpus.paths[p].clone()).collect();
    Ok(NoisyToy {
        vocab: corpus.vocab,
        train: SplitPart { sentences, paths, pairs },
        dev_paths: corpus.paths[dev.clone()].to_vec(),
        dev_sentences: corpus.sentences[dev].to_vec(),
        noisy_pairs,
    })
}
