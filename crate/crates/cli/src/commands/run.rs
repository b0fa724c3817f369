//! train, sweep-rho and ablate.

use std::path::Path;

use serde::Serialize;
use textkb::autodiff::{LrSchedule, OptimizerKind, Scalar};
use textkb::evaluation::{build_queries, CandidatePool, DevSet};
use textkb::model::{Architecture, DualModel, ModelCheckpoint, ModelConfig, CHECKPOINT_VERSION};
use textkb::par::Execution;
use textkb::training::{
    BestCheckpoint, DevEvaluator, DevMetrics, LossSwitches, LossWeights, TrainConfig, TrainData, Trainer,
    TrainingCheckpoint,
};

use crate::config::RunConfig;
use crate::dataset::{text_pairs, Dataset};
use crate::error::{runtime, CliError, Result};
use crate::output::{fmt2, fmt4, markdown_table, RunDir};

pub fn model_config(cfg: &RunConfig, vocab_size: usize) -> Result<ModelConfig> {
    let arch: Architecture = cfg.get("arch")?;
    Ok(ModelConfig {
        arch,
        vocab_size,
        embed_dim: cfg.get("embed_dim")?,
        hidden: cfg.get("hidden")?,
        gru_attention: cfg.get("gru_attention")?,
        d_model: cfg.get("d_model")?,
        heads: cfg.get("heads")?,
        layers: cfg.get("layers")?,
        ff_dim: cfg.get("ff_dim")?,
        init_seed: cfg.get("init_seed")?,
        ..ModelConfig::gru(vocab_size)
    })
}

pub fn train_config(cfg: &RunConfig) -> Result<TrainConfig> {
    let arch: Architecture = cfg.get("arch")?;
    let switches = LossSwitches::parse(cfg.str("losses"))
        .ok_or_else(|| CliError::Config(format!("bad losses {:?}; use names rec, bt, sup joined by '+'", cfg.str("losses"))))?;
    let optimizer = match cfg.str("optimizer") {
        "adam" => OptimizerKind::Adam,
        "sgd" => OptimizerKind::Sgd,
        other => return Err(CliError::Config(format!("unknown optimizer {other:?}"))),
    };
    let noam = LrSchedule::Noam {
        d_model: cfg.get("d_model")?,
        warmup: cfg.get("warmup")?,
        factor: cfg.get("noam_factor")?,
    };
    let constant = LrSchedule::Constant { lr: cfg.get("lr")? };
    let schedule = match cfg.str("schedule") {
        "constant" => constant,
        "noam" => noam,
        "auto" if arch == Architecture::TransTrans => noam,
        "auto" => constant,
        other => return Err(CliError::Config(format!("unknown schedule {other:?}"))),
    };
    let tc = TrainConfig {
        batch_size: cfg.get("batch_size")?,
        rho: cfg.get("rho")?,
        tf_ratio: cfg.get("tf_ratio")?,
        switches,
        weights: LossWeights {
            rec: cfg.get("w_rec")?,
            bt: cfg.get("w_bt")?,
            sup: cfg.get("w_sup")?,
        },
        epochs: cfg.get("epochs")?,
        seed: cfg.get("seed")?,
        optimizer,
        schedule,
        clip_norm: cfg.get("clip_norm")?,
        p_mask_path: cfg.get("p_mask_path")?,
        p_mask_token: cfg.get("p_mask_token")?,
        eval_every: cfg.get("eval_every")?,
    };
    tc.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(tc)
}

/// Dev evaluation over the dev split, or `None` when it is empty.
pub fn dev_set(ds: &Dataset, limit: usize) -> Option<DevSet> {
    let take = |n: usize| if limit == 0 { n } else { n.min(limit) };
    let tuples: Vec<_> = ds.dev.all_paths().cloned().collect();
    let tuples = &tuples[..take(tuples.len())];
    let mut pairs = text_pairs(&ds.dev);
    pairs.truncate(take(pairs.len()));
    if tuples.is_empty() && pairs.is_empty() {
        return None;
    }
    Some(DevSet {
        queries: build_queries(tuples),
        pool: CandidatePool::build(&ds.all_paths()),
        pairs,
        vocab: ds.vocab.clone(),
        exec: Execution::default(),
    })
}

/// One line of sweep and ablation tables.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub label: String,
    pub epochs: usize,
    pub final_loss: f64,
    pub final_dev: Option<DevMetrics>,
    pub best_mrr: Option<(usize, f64)>,
    pub best_bleu2: Option<(usize, f64)>,
}

fn best_model<T: Scalar>(model: &DualModel<T>, best: &BestCheckpoint<T>, ds: &Dataset) -> ModelCheckpoint<T> {
    ModelCheckpoint {
        version: CHECKPOINT_VERSION,
        config: model.config().clone(),
        vocab: Some(ds.vocab.clone()),
        params: best.params.clone(),
    }
}

fn train_typed<T: Scalar>(cfg: &RunConfig, ds: &Dataset, out: &RunDir, tc: TrainConfig, label: &str) -> Result<RunSummary> {
    let data = TrainData::from_part(&ds.train);
    let (mut trainer, mut model) = match cfg.str("resume") {
        "" => {
            let model: DualModel<T> = DualModel::new(model_config(cfg, ds.vocab.len())?).map_err(|e| CliError::Config(e.to_string()))?;
            (Trainer::new(&model, &data, tc).map_err(|e| CliError::Config(e.to_string()))?, model)
        }
        path => {
            let ck = TrainingCheckpoint::<T>::load(Path::new(path)).map_err(|e| CliError::Data(format!("{path}: {e}")))?;
            let (mut t, m) = Trainer::resume(ck, &data).map_err(|e| CliError::Data(e.to_string()))?;
            t.cfg.epochs = tc.epochs;
            (t, m)
        }
    };
    let dev = dev_set(ds, cfg.get("dev_limit")?);
    let dev_ref = dev.as_ref().map(|d| d as &dyn DevEvaluator<T>);
    while trainer.epochs_done() < trainer.cfg.epochs {
        let r = trainer.run_epoch(&mut model, &data, dev_ref).map_err(runtime)?;
        if let Some(d) = r.dev {
            log::info!("{label} epoch {}: dev MRR {:.2} BLEU2 {:.4}", r.epoch, d.mrr, d.bleu2);
        }
    }
    let reports = trainer.reports().to_vec();
    out.jsonl("metrics.jsonl", &reports)?;
    model.save(&out.file("model.json"), Some(&ds.vocab)).map_err(runtime)?;
    trainer.checkpoint(&model).save(&out.file("state.json")).map_err(runtime)?;
    let (best_mrr, best_bleu2) = {
        use textkb::training::SelectionMetric::{Bleu2, Mrr};
        let mut found = [None, None];
        for (slot, (metric, file)) in found.iter_mut().zip([(Mrr, "best-mrr.json"), (Bleu2, "best-bleu2.json")]) {
            if let Some(b) = trainer.best(metric) {
                out.json(file, &best_model(&model, b, ds))?;
                *slot = Some((b.epoch, b.value));
            }
        }
        (found[0], found[1])
    };
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            let opt = |x: Option<f64>| x.map(fmt4).unwrap_or_else(|| "-".into());
            let d = r.dev;
            vec![
                r.epoch.to_string(),
                fmt4(r.loss_total),
                opt(r.loss_rec),
                opt(r.loss_bt),
                opt(r.loss_sup),
                opt(d.map(|d| d.mrr)),
                opt(d.map(|d| d.hits1)),
                opt(d.map(|d| d.bleu2)),
            ]
        })
        .collect();
    out.write(
        "summary.md",
        &markdown_table(&["epoch", "loss", "rec", "bt", "sup", "dev MRR", "dev HITS@1", "dev BLEU2"], &rows),
    )?;
    let last = reports.last();
    Ok(RunSummary {
        label: label.to_string(),
        epochs: reports.len(),
        final_loss: last.map_or(f64::NAN, |r| r.loss_total),
        final_dev: last.and_then(|r| r.dev),
        best_mrr,
        best_bleu2,
    })
}

fn train_one(cfg: &RunConfig, ds: &Dataset, out: &RunDir, tc: TrainConfig, label: &str) -> Result<RunSummary> {
    match cfg.str("precision") {
        "f32" => train_typed::<f32>(cfg, ds, out, tc, label),
        "f64" => train_typed::<f64>(cfg, ds, out, tc, label),
        other => Err(CliError::Config(format!("unknown precision {other:?}; expected f32 or f64"))),
    }
}

fn load_data(cfg: &RunConfig) -> Result<Dataset> {
    let ds = Dataset::load(Path::new(cfg.str("data")))?;
    if ds.train.is_empty() {
        return Err(CliError::Data(format!("{}: training split is empty", cfg.str("data"))));
    }
    Ok(ds)
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let tc = train_config(cfg)?;
    let ds = load_data(cfg)?;
    let out = RunDir::create(Path::new(cfg.str("out")), cfg)?;
    let s = train_one(cfg, &ds, &out, tc, "train")?;
    log::info!("finished {} epochs, final loss {:.4}", s.epochs, s.final_loss);
    Ok(())
}

fn summary_table(first: &str, rows: &[RunSummary]) -> String {
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|s| {
            let d = s.final_dev.unwrap_or_default();
            vec![
                s.label.clone(),
                fmt4(s.final_loss),
                fmt2(d.mrr),
                fmt2(d.hits1),
                fmt2(d.hits3),
                fmt2(d.hits10),
                fmt4(d.bleu2),
                s.best_mrr.map(|(e, v)| format!("{} (epoch {e})", fmt2(v))).unwrap_or_else(|| "-".into()),
            ]
        })
        .collect();
    markdown_table(
        &[first, "final loss", "MRR", "HITS@1", "HITS@3", "HITS@10", "BLEU2", "best MRR"],
        &rows,
    )
}

/// Trains one run per variant into `<out>/<name>` and writes summary tables.
fn multi_run(cfg: &RunConfig, first: &str, variants: Vec<(String, RunConfig)>) -> Result<()> {
    let ds = load_data(cfg)?;
    let out = RunDir::create(Path::new(cfg.str("out")), cfg)?;
    let mut rows = Vec::new();
    for (name, vcfg) in variants {
        let tc = train_config(&vcfg)?;
        let dir = RunDir::create(&out.file(&name), &vcfg)?;
        log::info!("run {name}");
        rows.push(train_one(&vcfg, &ds, &dir, tc, &name)?);
    }
    out.jsonl("summary.jsonl", &rows)?;
    out.write("summary.md", &summary_table(first, &rows))
}

pub fn sweep_rho(cfg: &RunConfig) -> Result<()> {
    let rhos: Vec<f64> = cfg.list("rhos")?;
    if rhos.is_empty() {
        return Err(CliError::Config("rhos is empty".into()));
    }
    let variants = rhos
        .into_iter()
        .map(|rho| {
            let mut c = cfg.clone();
            c.set("rho", rho);
            (format!("rho-{rho}"), c)
        })
        .collect();
    multi_run(cfg, "rho", variants)
}

pub fn ablate(cfg: &RunConfig) -> Result<()> {
    let subsets: Vec<String> = cfg.list("subsets")?;
    if subsets.is_empty() {
        return Err(CliError::Config("subsets is empty".into()));
    }
    let variants = subsets
        .into_iter()
        .map(|s| {
            let mut c = cfg.clone();
            c.set("losses", &s);
            (s.replace('+', "-"), c)
        })
        .collect();
    multi_run(cfg, "losses", variants)
}
