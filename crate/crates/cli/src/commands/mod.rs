mod data;
mod eval;
mod run;

use crate::config::{key, required, Key, RunConfig, DATA, MODEL, MODEL_KEYS, OUT, PRECISION, TRAIN_KEYS};
use crate::error::Result;

pub struct CommandSpec {
    pub name: &'static str,
    pub about: &'static str,
    pub keys: Vec<Key>,
    pub run: fn(&RunConfig) -> Result<()>,
}

fn with(base: &[Key], extra: &[&[Key]]) -> Vec<Key> {
    let mut v = base.to_vec();
    for e in extra {
        v.extend_from_slice(e);
    }
    v
}

pub fn all() -> Vec<CommandSpec> {
    vec![
        CommandSpec {
            name: "build-dataset",
            about: "Filter, tokenize and split raw KB paths, sentences and pairs into a dataset directory",
            keys: vec![
                required("kb", "KB paths JSONL ({head, rel, tail, weight} per line)"),
                required("sentences", "sentences JSONL ({text} per line)"),
                key("pairs", "", "optional aligned pairs JSONL from `match`"),
                OUT,
                key("min_weight", "1.6", "keep paths whose weight is strictly above this"),
                key("dev_fraction", "0.04", "fraction of each input held out for dev"),
                key("test_fraction", "0.04", "fraction of each input held out for test"),
                key("max_vocab", "0", "vocabulary size cap including special tokens (0 = no cap)"),
                key("seed", "0", "shuffle seed"),
            ],
            run: data::build_dataset,
        },
        CommandSpec {
            name: "match",
            about: "Pair sentences with KB paths by tf-idf fuzzy matching",
            keys: vec![
                required("sentences", "sentences JSONL"),
                required("paths", "KB paths JSONL"),
                OUT,
                key("threshold", "0.6", "minimum cosine similarity"),
                key("ngram", "3", "character n-gram size"),
            ],
            run: data::match_cmd,
        },
        CommandSpec {
            name: "train",
            about: "Train a model on a dataset directory",
            keys: with(&[DATA, OUT, key("resume", "", "state.json of an earlier run to continue")], &[MODEL_KEYS, TRAIN_KEYS]),
            run: run::train,
        },
        CommandSpec {
            name: "eval-kbc",
            about: "Generative KB completion: filtered MRR and HITS@k",
            keys: vec![
                DATA,
                MODEL,
                OUT,
                PRECISION,
                key("split", "test", "split to evaluate"),
                key("limit", "0", "evaluate at most this many tuples (0 = all)"),
            ],
            run: eval::eval_kbc,
        },
        CommandSpec {
            name: "eval-text",
            about: "BLEU and ROUGE-L of sentence-producing transfers on aligned pairs",
            keys: vec![
                DATA,
                MODEL,
                OUT,
                PRECISION,
                key("split", "test", "split to evaluate"),
                key("directions", "BA", "comma-separated directions among AA, BA, ABA"),
            ],
            run: eval::eval_text,
        },
        CommandSpec {
            name: "transfer",
            about: "Run a transfer direction over a JSONL file of sentences or paths",
            keys: vec![
                MODEL,
                required("input", "JSONL of {text} or {head, rel, tail} records"),
                OUT,
                PRECISION,
                key("direction", "AB", "AA, AB, BA, BB, ABA, BAB or BmB"),
                key("mask_side", "tail", "entity masked for BmB: head or tail"),
                key("dot", "false", "also write the generated triples as a DOT graph"),
            ],
            run: eval::transfer,
        },
        CommandSpec {
            name: "ged",
            about: "Chunked graph edit distance between reference and generated triples",
            keys: vec![
                required("reference", "reference triples JSONL"),
                required("generated", "generated triples JSONL, aligned with the reference"),
                OUT,
                key("chunk_size", "10", "triples per local graph"),
                key("node_matching", "features", "exact or features"),
                key("relation_matching", "exact", "exact or features"),
                key("node_threshold", "0.6", "feature distance at or below which labels match"),
                key("max_nodes", "48", "refuse chunk pairs with more nodes than this"),
                key("max_expansions", "2000000", "search budget per chunk before falling back to a bound"),
            ],
            run: eval::ged,
        },
        CommandSpec {
            name: "sweep-rho",
            about: "Train and evaluate once per supervision ratio",
            keys: with(&[DATA, OUT, key("rhos", "0,0.2,0.8,1.0", "comma-separated supervision ratios")], &[MODEL_KEYS, TRAIN_KEYS]),
            run: run::sweep_rho,
        },
        CommandSpec {
            name: "ablate",
            about: "Train and evaluate once per loss subset",
            keys: with(
                &[DATA, OUT, key("subsets", "rec+bt+sup,bt+sup,bt+rec,rec+sup", "comma-separated loss subsets")],
                &[MODEL_KEYS, TRAIN_KEYS],
            ),
            run: run::ablate,
        },
        CommandSpec {
            name: "toy-corpus",
            about: "Write a synthetic dataset directory",
            keys: vec![
                OUT,
                key("kind", "noisy", "bijective or noisy"),
                key("pairs", "500", "noisy: training pairs"),
                key("dev", "50", "noisy: dev tuples"),
                key("noise", "0.1", "noisy: fraction of text sentences whose fact is missing from the KB"),
                key("seed", "0", "noisy: sampling seed"),
            ],
            run: data::toy_corpus,
        },
    ]
}
