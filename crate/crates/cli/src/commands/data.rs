//! build-dataset, match and toy-corpus.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use textkb::corpus::{
    enforce_split, filter_by_weight, ingest_path, ingest_sentence, read_jsonl, split_sizes, DataRecord, PairedExample,
    SplitPart, TextPath, Vocabulary, MAX_LEN,
};
use textkb::par::Execution;
use textkb::toy::{self, NoisyConfig};
use textkb::weak_supervision::{match_pairs, MatchConfig};

use crate::config::RunConfig;
use crate::dataset::Dataset;
use crate::error::{data, CliError, Result};
use crate::output::RunDir;

fn read_records(cfg: &RunConfig, key: &str) -> Result<Vec<DataRecord>> {
    read_jsonl(Path::new(cfg.str(key))).map_err(data)
}

fn sentences_of(records: &[DataRecord], file: &str) -> Result<Vec<String>> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| match r {
            DataRecord::Sentence { text } => Ok(text.clone()),
            _ => Err(CliError::Data(format!("{file}: record {} is not a sentence", i + 1))),
        })
        .collect()
}

struct RawPair {
    text: String,
    path: TextPath,
    score: f64,
}

/// Sizes of the dev and test slices of `n` items.
fn slice_sizes(n: usize, dev: f64, test: f64) -> (usize, usize) {
    let d = ((n as f64) * dev).round() as usize;
    let t = (((n as f64) * test).round() as usize).min(n - d.min(n));
    (d.min(n), t)
}

fn three_way<T>(mut items: Vec<T>, dev: f64, test: f64, rng: &mut ChaCha8Rng) -> [Vec<T>; 3] {
    items.shuffle(rng);
    let (d, t) = slice_sizes(items.len(), dev, test);
    let train = items.split_off(d + t);
    let test_part = items.split_off(d);
    [train, items, test_part]
}

pub fn build_dataset(cfg: &RunConfig) -> Result<()> {
    let dev_fraction: f64 = cfg.get("dev_fraction")?;
    let test_fraction: f64 = cfg.get("test_fraction")?;
    if !(0.0..=1.0).contains(&dev_fraction) || !(0.0..=1.0).contains(&test_fraction) || dev_fraction + test_fraction > 1.0 {
        return Err(CliError::Config("dev_fraction and test_fraction must be in [0, 1] and sum to at most 1".into()));
    }
    let min_weight: f64 = cfg.get("min_weight")?;
    let max_vocab: usize = cfg.get("max_vocab")?;
    let seed: u64 = cfg.get("seed")?;

    let kb = read_records(cfg, "kb")?;
    if let Some(i) = kb.iter().position(|r| !matches!(r, DataRecord::Path { .. })) {
        return Err(CliError::Data(format!("{}: record {} is not a path", cfg.str("kb"), i + 1)));
    }
    let paths = filter_by_weight(&kb, min_weight);
    let dropped_by_weight = kb.len() - paths.len();
    let sentences = sentences_of(&read_records(cfg, "sentences")?, cfg.str("sentences"))?;
    let mut pairs = Vec::new();
    if !cfg.str("pairs").is_empty() {
        for (i, r) in read_records(cfg, "pairs")?.into_iter().enumerate() {
            let DataRecord::Pair {
                text,
                head,
                rel,
                tail,
                score,
            } = r
            else {
                return Err(CliError::Data(format!("{}: record {} is not a pair", cfg.str("pairs"), i + 1)));
            };
            pairs.push(RawPair {
                text,
                path: TextPath { head, rel, tail },
                score,
            });
        }
    }
    log::info!(
        "read {} paths ({dropped_by_weight} at or below weight {min_weight}), {} sentences, {} pairs",
        kb.len(),
        sentences.len(),
        pairs.len()
    );

    let texts: Vec<String> = sentences
        .iter()
        .cloned()
        .chain(paths.iter().map(TextPath::flat))
        .chain(pairs.iter().flat_map(|p| [p.text.clone(), p.path.flat()]))
        .collect();
    let vocab = Vocabulary::build(texts.iter().map(String::as_str), if max_vocab == 0 { usize::MAX } else { max_vocab });

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let path_parts = three_way(paths, dev_fraction, test_fraction, &mut rng);
    let sentence_parts = three_way(sentences, dev_fraction, test_fraction, &mut rng);
    let pair_parts = three_way(pairs, dev_fraction, test_fraction, &mut rng);
    let mut dropped_untokenizable = 0;
    let mut parts: Vec<SplitPart> = Vec::new();
    for ((ps, ss), prs) in path_parts.into_iter().zip(sentence_parts).zip(pair_parts) {
        let mut part = SplitPart::default();
        for p in ps {
            match ingest_path(&p, &vocab, MAX_LEN) {
                Some(t) => part.paths.push(t),
                None => dropped_untokenizable += 1,
            }
        }
        for s in ss {
            match ingest_sentence(&s, &vocab, MAX_LEN) {
                Some(t) => part.sentences.push(t),
                None => dropped_untokenizable += 1,
            }
        }
        for p in prs {
            match (ingest_sentence(&p.text, &vocab, MAX_LEN), ingest_path(&p.path, &vocab, MAX_LEN)) {
                (Some(sentence), Some(path)) => part.pairs.push(PairedExample {
                    sentence,
                    path,
                    score: p.score,
                }),
                _ => dropped_untokenizable += 1,
            }
        }
        parts.push(part);
    }
    let test = parts.pop().expect("three parts");
    let dev = parts.pop().expect("three parts");
    let train = parts.pop().expect("three parts");
    let (split, removed) = enforce_split(train, dev, test);
    let sizes = split_sizes(&split);
    log::info!("split sizes {sizes:?}");
    let ds = Dataset {
        vocab,
        train: split.train,
        dev: split.dev,
        test: split.test,
    };
    let out = RunDir::create(Path::new(cfg.str("out")), cfg)?;
    ds.save(out.path())?;
    out.json(
        "manifest.json",
        &json!({
            "sizes": sizes,
            "vocab_size": ds.vocab.len(),
            "kb_records": kb.len(),
            "dropped_by_weight": dropped_by_weight,
            "dropped_untokenizable": dropped_untokenizable,
            "removed_from_dev": removed.dev.total(),
            "removed_from_test": removed.test.total(),
        }),
    )
}

pub fn match_cmd(cfg: &RunConfig) -> Result<()> {
    let threshold: f64 = cfg.get("threshold")?;
    let ngram: usize = cfg.get("ngram")?;
    let sentences = sentences_of(&read_records(cfg, "sentences")?, cfg.str("sentences"))?;
    let paths: Vec<TextPath> = read_jsonl(Path::new(cfg.str("paths"))).map_err(data)?;
    let flat: Vec<String> = paths.iter().map(TextPath::flat).collect();
    let result = match_pairs(&sentences, &flat, MatchConfig { threshold, ngram }, Execution::default())
        .map_err(|e| CliError::Config(e.to_string()))?;
    log::info!("matched {} of {} sentences", result.matches.len(), sentences.len());
    let out = RunDir::create(Path::new(cfg.str("out")), cfg)?;
    out.jsonl(
        "pairs.jsonl",
        result.matches.iter().map(|m| {
            let p = &paths[m.path];
            DataRecord::Pair {
                text: sentences[m.sentence].clone(),
                head: p.head.clone(),
                rel: p.rel.clone(),
                tail: p.tail.clone(),
                score: m.score,
            }
        }),
    )?;
    out.json(
        "summary.json",
        &json!({
            "sentences": sentences.len(),
            "paths": paths.len(),
            "matched": result.matches.len(),
            "unmatched_sentences": result.unmatched_sentences.len(),
            "unmatched_paths": result.unmatched_paths.len(),
            "threshold": threshold,
            "ngram": ngram,
        }),
    )
}

pub fn toy_corpus(cfg: &RunConfig) -> Result<()> {
    let ds = match cfg.str("kind") {
        // Dev repeats the training pairs: this corpus is for memorization checks.
        "bijective" => {
            let c = toy::bijective();
            let part = c.paired_part();
            Dataset {
                vocab: c.vocab,
                train: part.clone(),
                dev: part,
                test: SplitPart::default(),
            }
        }
        "noisy" => {
            let t = toy::noisy(&NoisyConfig {
                pairs: cfg.get("pairs")?,
                dev: cfg.get("dev")?,
                noise: cfg.get("noise")?,
                seed: cfg.get("seed")?,
            })
            .map_err(|e| CliError::Config(e.to_string()))?;
            let dev = SplitPart {
                pairs: t
                    .dev_sentences
                    .into_iter()
                    .zip(t.dev_paths)
                    .map(|(sentence, path)| PairedExample {
                        sentence,
                        path,
                        score: 1.0,
                    })
                    .collect(),
                ..SplitPart::default()
            };
            Dataset {
                vocab: t.vocab,
                train: t.train,
                dev,
                test: SplitPart::default(),
            }
        }
        other => return Err(CliError::Config(format!("unknown toy corpus {other:?}; expected bijective or noisy"))),
    };
    let out = RunDir::create(Path::new(cfg.str("out")), cfg)?;
    ds.save(out.path())?;
    out.json("manifest.json", &json!({ "vocab_size": ds.vocab.len() }))
}
