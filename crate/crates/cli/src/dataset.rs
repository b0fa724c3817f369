//! Dataset directories.
//!
//! Layout: `vocab.json` plus `{train,dev,test}.{sentences,paths,pairs}.jsonl`.
//! Records hold text; loading re-tokenizes with the stored vocabulary,
//! which reproduces the original ids.

use std::path::Path;

use textkb::corpus::{
    read_jsonl, serialize_path, write_jsonl, DataRecord, PairedExample, PathTriple, SentenceExample, SplitPart,
    TextPath, Vocabulary,
};

use crate::error::{data, runtime, CliError, Result};

pub const SPLITS: [&str; 3] = ["train", "dev", "test"];

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub vocab: Vocabulary,
    pub train: SplitPart,
    pub dev: SplitPart,
    pub test: SplitPart,
}

pub fn path_text(p: &PathTriple, vocab: &Vocabulary) -> TextPath {
    TextPath {
        head: vocab.decode(&p.head),
        rel: vocab.decode(&p.relation),
        tail: vocab.decode(&p.tail),
    }
}

impl Dataset {
    pub fn split(&self, name: &str) -> Result<&SplitPart> {
        match name {
            "train" => Ok(&self.train),
            "dev" => Ok(&self.dev),
            "test" => Ok(&self.test),
            other => Err(CliError::Config(format!("unknown split {other:?}; expected train, dev or test"))),
        }
    }

    /// Every tuple of every split, for candidate pools.
    pub fn all_paths(&self) -> Vec<PathTriple> {
        [&self.train, &self.dev, &self.test]
            .into_iter()
            .flat_map(|p| p.all_paths().cloned())
            .collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(runtime)?;
        let vocab = serde_json::to_string(&self.vocab).map_err(runtime)?;
        std::fs::write(dir.join("vocab.json"), vocab).map_err(runtime)?;
        for name in SPLITS {
            let part = self.split(name)?;
            let v = &self.vocab;
            let sentences = part.sentences.iter().map(|s| DataRecord::Sentence {
                text: v.decode(&s.tokens),
            });
            write_jsonl(&dir.join(format!("{name}.sentences.jsonl")), sentences).map_err(runtime)?;
            write_jsonl(&dir.join(format!("{name}.paths.jsonl")), part.paths.iter().map(|p| path_text(p, v)))
                .map_err(runtime)?;
            let pairs = part.pairs.iter().map(|p| {
                let t = path_text(&p.path, v);
                DataRecord::Pair {
                    text: v.decode(&p.sentence.tokens),
                    head: t.head,
                    rel: t.rel,
                    tail: t.tail,
                    score: p.score,
                }
            });
            write_jsonl(&dir.join(format!("{name}.pairs.jsonl")), pairs).map_err(runtime)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let vocab_path = dir.join("vocab.json");
        let text = std::fs::read_to_string(&vocab_path)
            .map_err(|e| CliError::Data(format!("cannot read {}: {e}", vocab_path.display())))?;
        let vocab: Vocabulary =
            serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", vocab_path.display())))?;
        let mut parts = Vec::new();
        for name in SPLITS {
            parts.push(load_part(dir, name, &vocab)?);
        }
        let test = parts.pop().expect("three splits");
        let dev = parts.pop().expect("three splits");
        let train = parts.pop().expect("three splits");
        Ok(Dataset { vocab, train, dev, test })
    }
}

fn read_optional<T: for<'de> serde::Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    if path.exists() {
        read_jsonl(path).map_err(data)
    } else {
        Ok(Vec::new())
    }
}

fn load_part(dir: &Path, name: &str, vocab: &Vocabulary) -> Result<SplitPart> {
    let mut part = SplitPart::default();
    let file = dir.join(format!("{name}.sentences.jsonl"));
    for (i, rec) in read_optional::<DataRecord>(&file)?.into_iter().enumerate() {
        let DataRecord::Sentence { text } = rec else {
            return Err(CliError::Data(format!("{}: record {} is not a sentence", file.display(), i + 1)));
        };
        part.sentences.push(sentence(&text, vocab).map_err(|m| CliError::Data(format!("{}: record {}: {m}", file.display(), i + 1)))?);
    }
    let file = dir.join(format!("{name}.paths.jsonl"));
    for (i, p) in read_optional::<TextPath>(&file)?.into_iter().enumerate() {
        part.paths.push(
            PathTriple::from_text(&p.head, &p.rel, &p.tail, vocab)
                .map_err(|e| CliError::Data(format!("{}: record {}: {e}", file.display(), i + 1)))?,
        );
    }
    let file = dir.join(format!("{name}.pairs.jsonl"));
    for (i, rec) in read_optional::<DataRecord>(&file)?.into_iter().enumerate() {
        let DataRecord::Pair {
            text,
            head,
            rel,
            tail,
            score,
        } = rec
        else {
            return Err(CliError::Data(format!("{}: record {} is not a pair", file.display(), i + 1)));
        };
        let bad = |m: String| CliError::Data(format!("{}: record {}: {m}", file.display(), i + 1));
        part.pairs.push(PairedExample {
            sentence: sentence(&text, vocab).map_err(bad)?,
            path: PathTriple::from_text(&head, &rel, &tail, vocab).map_err(|e| bad(e.to_string()))?,
            score,
        });
    }
    Ok(part)
}

fn sentence(text: &str, vocab: &Vocabulary) -> std::result::Result<SentenceExample, String> {
    SentenceExample::new(vocab.encode(text)).map_err(|e| e.to_string())
}

/// `(sentence, serialized path)` rows for text metrics.
pub fn text_pairs(part: &SplitPart) -> Vec<(Vec<u32>, Vec<u32>)> {
    part.pairs
        .iter()
        .filter_map(|p| Some((p.sentence.tokens.clone(), serialize_path(&p.path).ok()?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use textkb::toy;

    #[test]
    fn save_load_round_trip() {
        let corpus = toy::bijective();
        let mut train = corpus.paired_part();
        train.sentences = corpus.sentences[..3].to_vec();
        train.paths = corpus.paths[..2].to_vec();
        let ds = Dataset {
            vocab: corpus.vocab.clone(),
            train,
            dev: SplitPart {
                paths: corpus.paths[5..7].to_vec(),
                ..SplitPart::default()
            },
            test: SplitPart::default(),
        };
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        assert_eq!(Dataset::load(dir.path()).unwrap(), ds);
    }

    #[test]
    fn wrong_record_kind_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset {
            vocab: Vocabulary::new(),
            train: SplitPart::default(),
            dev: SplitPart::default(),
            test: SplitPart::default(),
        };
        ds.save(dir.path()).unwrap();
        std::fs::write(dir.path().join("train.pairs.jsonl"), "{\"text\": \"a b\"}\n").unwrap();
        let e = Dataset::load(dir.path()).unwrap_err();
        assert_eq!(e.exit_code(), 3);
        assert!(e.to_string().contains("record 1"), "{e}");
    }
}
