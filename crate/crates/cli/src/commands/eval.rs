//! eval-kbc, eval-text, transfer and ged.

use std::path::Path;

use serde::Serialize;
use serde_json::json;
use textkb::autodiff::Scalar;
use textkb::corpus::{mask_path_side, read_jsonl, serialize_path, DataRecord, Side, TextPath, Vocabulary, MAX_LEN};
use textkb::evaluation::{
    build_queries, evaluate_text, parse_generated, rank_queries, rank_report, CandidatePool, RankMetrics,
};
use textkb::graph::{approx_ged, GedConfig, GraphError, KnowledgeGraph, Matcher};
use textkb::model::{DualModel, Modality, TransferDirection};
use textkb::par::Execution;

use crate::config::RunConfig;
use crate::dataset::{path_text, text_pairs, Dataset};
use crate::error::{data, runtime, CliError, Result};
use crate::output::{fmt2, fmt4, markdown_table, RunDir};

fn load_model<T: Scalar>(cfg: &RunConfig) -> Result<(DualModel<T>, Option<Vocabulary>)> {
    let path = cfg.str("model");
    DualModel::load(Path::new(path)).map_err(|e| CliError::Data(format!("{path}: {e}")))
}

fn check_vocab(model_vocab: Option<&Vocabulary>, ds: &Dataset) -> Result<()> {
    match model_vocab {
        Some(v) if v != &ds.vocab => Err(CliError::Data("model and dataset vocabularies differ".into())),
        _ => Ok(()),
    }
}

macro_rules! by_precision {
    ($cfg:expr, $f:ident) => {
        match $cfg.str("precision") {
            "f32" => $f::<f32>($cfg),
            "f64" => $f::<f64>($cfg),
            other => Err(CliError::Config(format!("unknown precision {other:?}; expected f32 or f64"))),
        }
    };
}

pub fn eval_kbc(cfg: &RunConfig) -> Result<()> {
    by_precision!(cfg, eval_kbc_typed)
}

fn metric_row(name: &str, m: &RankMetrics) -> Vec<String> {
    vec![
        name.to_string(),
        fmt2(m.mrr),
        fmt2(m.hits1),
        fmt2(m.hits3),
        fmt2(m.hits10),
        m.n_queries.to_string(),
        m.n_malformed.to_string(),
    ]
}

fn eval_kbc_typed<T: Scalar>(cfg: &RunConfig) -> Result<()> {
    let ds = Dataset::load(Path::new(cfg.str("data")))?;
    let (model, vocab) = load_model::<T>(cfg)?;
    check_vocab(vocab.as_ref(), &ds)?;
    let split_name = cfg.str("split");
    let mut tuples: Vec<_> = ds.split(split_name)?.all_paths().cloned().collect();
    let limit: usize = cfg.get("limit")?;
    if limit > 0 {
        tuples.truncate(limit);
    }
    if tuples.is_empty() {
        return Err(CliError::Data(format!("split {split_name} has no tuples")));
    }
    let queries = build_queries(&tuples);
    let pool = CandidatePool::build(&ds.all_paths());
    let outcomes = rank_queries(&model, &queries, &pool, &ds.vocab, Execution::default()).map_err(runtime)?;
    let report = rank_report(&outcomes).map_err(runtime)?;
    log::info!("{split_name}: MRR {:.2} over {} queries", report.all.mrr, report.all.n_queries);
    let out = RunDir::create(Path::new(cfg.str("out")), cfg)?;
    out.jsonl("outcomes.jsonl", &outcomes)?;
    out.json("kbc.json", &json!({ "split": split_name, "pool_nodes": pool.nodes.len(), "report": report }))?;
    let mut rows = vec![metric_row("all", &report.all)];
    for (name, m) in [("head", report.head), ("tail", report.tail)] {
        if let Some(m) = m {
            rows.push(metric_row(name, &m));
        }
    }
    out.write(
        "kbc.md",
        &markdown_table(&["queries", "MRR", "HITS@1", "HITS@3", "HITS@10", "n", "malformed"], &rows),
    )
}

pub fn eval_text(cfg: &RunConfig) -> Result<()> {
    by_precision!(cfg, eval_text_typed)
}

fn eval_text_typed<T: Scalar>(cfg: &RunConfig) -> Result<()> {
    let ds = Dataset::load(Path::new(cfg.str("data")))?;
    let (model, vocab) = load_model::<T>(cfg)?;
    check_vocab(vocab.as_ref(), &ds)?;
    let directions: Vec<TransferDirection> = cfg.list("directions")?;
    let split_name = cfg.str("split");
    let pairs = text_pairs(ds.split(split_name)?);
    if pairs.is_empty() {
        return Err(CliError::Data(format!("split {split_name} has no aligned pairs")));
    }
    let mut results = Vec::new();
    for d in directions {
        let m = evaluate_text(&model, &pairs, d, Execution::default()).map_err(|e| CliError::Config(e.to_string()))?;
        log::info!("{d}: BLEU2 {:.4} ROUGE-L {:.4}", m.bleu2, m.rouge_l);
        results.push(m);
    }
    let out = RunDir::create(Path::new(cfg.str("out")), cfg)?;
    out.json("text.json", &json!({ "split": split_name, "metrics": results }))?;
    let rows: Vec<Vec<String>> = results
        .iter()
        .map(|m| vec![m.direction.to_string(), fmt4(m.bleu2), fmt4(m.bleu3), fmt4(m.rouge_l), m.n.to_string()])
        .collect();
    out.write("text.md", &markdown_table(&["direction", "BLEU2", "BLEU3", "ROUGE-L", "n"], &rows))
}

#[derive(Debug, Serialize)]
struct TransferRecord {
    line: usize,
    input: String,
    direction: TransferDirection,
    output: Option<String>,
    intermediate: Option<String>,
    truncated: bool,
    triple: Option<TextPath>,
    error: Option<String>,
}

pub fn transfer(cfg: &RunConfig) -> Result<()> {
    by_precision!(cfg, transfer_typed)
}

fn transfer_typed<T: Scalar>(cfg: &RunConfig) -> Result<()> {
    let (model, vocab) = load_model::<T>(cfg)?;
    let vocab = vocab.ok_or_else(|| CliError::Data(format!("{}: checkpoint has no vocabulary", cfg.str("model"))))?;
    let direction: TransferDirection = cfg.get("direction")?;
    let side = match cfg.str("mask_side") {
        "head" => Side::Head,
        "tail" => Side::Tail,
        other => return Err(CliError::Config(format!("mask_side must be head or tail, not {other:?}"))),
    };
    let input = cfg.str("input");
    let records: Vec<DataRecord> = read_jsonl(Path::new(input)).map_err(data)?;
    let mut inputs = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let bad = |m: String| CliError::Data(format!("{input}: record {}: {m}", i + 1));
        let (text, tokens) = match (direction.input_modality(), r) {
            (Modality::Sentence, DataRecord::Sentence { text } | DataRecord::Pair { text, .. }) => {
                let mut t = vocab.encode(text);
                t.truncate(MAX_LEN);
                (text.clone(), t)
            }
            (Modality::Path, DataRecord::Path { head, rel, tail, .. } | DataRecord::Pair { head, rel, tail, .. }) => {
                let p = textkb::corpus::PathTriple::from_text(head, rel, tail, &vocab).map_err(|e| bad(e.to_string()))?;
                let tokens = if direction == TransferDirection::BmB {
                    mask_path_side(&p, side).map_err(|e| bad(e.to_string()))?.masked_tokens
                } else {
                    serialize_path(&p).map_err(|e| bad(e.to_string()))?
                };
                (format!("{head} {rel} {tail}"), tokens)
            }
            (m, _) => return Err(bad(format!("direction {direction} needs {m} records"))),
        };
        inputs.push((text, tokens));
    }
    let token_rows: Vec<Vec<u32>> = inputs.iter().map(|(_, t)| t.clone()).collect();
    let results = model.generate_batch(&token_rows, direction);
    let produces_path = matches!(direction.legs().last(), Some(textkb::model::DecoderId::B));
    let mut out_records = Vec::with_capacity(results.len());
    let mut triples = Vec::new();
    for (i, ((text, _), res)) in inputs.into_iter().zip(results).enumerate() {
        let rec = match res {
            Ok(g) => {
                let triple = produces_path
                    .then(|| parse_generated(&g.output_tokens))
                    .flatten()
                    .map(|p| path_text(&p, &vocab));
                if let Some(t) = &triple {
                    triples.push(t.clone());
                }
                TransferRecord {
                    line: i + 1,
                    input: text,
                    direction,
                    output: Some(vocab.decode(&textkb::model::strip_generated(&g.output_tokens))),
                    intermediate: g.intermediate.as_ref().map(|t| vocab.decode(&textkb::model::strip_generated(t))),
                    truncated: g.truncated,
                    triple,
                    error: None,
                }
            }
            Err(e) => TransferRecord {
                line: i + 1,
                input: text,
                direction,
                output: None,
                intermediate: None,
                truncated: false,
                triple: None,
                error: Some(e.to_string()),
            },
        };
        out_records.push(rec);
    }
    let out = RunDir::create(Path::new(cfg.str("out")), cfg)?;
    out.jsonl("transfer.jsonl", &out_records)?;
    if produces_path {
        out.jsonl("triples.jsonl", &triples)?;
        if cfg.get::<bool>("dot")? {
            out.write("graph.dot", &KnowledgeGraph::assemble(&triples).to_dot("transfer"))?;
        }
    }
    log::info!("{} inputs, {} well-formed triples", out_records.len(), triples.len());
    Ok(())
}

fn matcher(cfg: &RunConfig, key: &str) -> Result<Matcher> {
    match cfg.str(key) {
        "exact" => Ok(Matcher::Exact),
        "features" => Ok(Matcher::Features {
            threshold: cfg.get("node_threshold")?,
        }),
        other => Err(CliError::Config(format!("{key} must be exact or features, not {other:?}"))),
    }
}

pub fn ged(cfg: &RunConfig) -> Result<()> {
    let ged_cfg = GedConfig {
        nodes: matcher(cfg, "node_matching")?,
        relations: matcher(cfg, "relation_matching")?,
        max_total_nodes: cfg.get("max_nodes")?,
        max_expansions: cfg.get("max_expansions")?,
    };
    let read = |key: &str| -> Result<Vec<TextPath>> { read_jsonl(Path::new(cfg.str(key))).map_err(data) };
    let reference = read("reference")?;
    let generated = read("generated")?;
    let report = approx_ged(&reference, &generated, cfg.get("chunk_size")?, &ged_cfg, Execution::default()).map_err(
        |e| match e {
            GraphError::LengthMismatch { .. } => CliError::Data(e.to_string()),
            GraphError::ZeroChunk => CliError::Config(e.to_string()),
            GraphError::TooLarge { .. } => CliError::Runtime(format!("{e}; raise max_nodes or lower chunk_size")),
        },
    )?;
    let inexact = report.chunk_exact.iter().filter(|&&x| !x).count();
    log::info!("GED {:.3} over {} chunks ({inexact} bounded)", report.mean, report.chunk_values.len());
    let out = RunDir::create(Path::new(cfg.str("out")), cfg)?;
    out.json("ged.json", &report)
}
