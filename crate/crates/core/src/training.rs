//! Losses and the training loop.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{
    clip_global_norm, AutodiffError, Gradients, LrSchedule, OptimizerKind, OptimizerState, ParamEntry, Scalar, Tape, Var,
};
use crate::corpus::{mask_path, mask_sentence, serialize_path, PathTriple, SentenceExample, SplitPart, PAD_ID};
use crate::model::{is_degenerate, strip_generated, Architecture, DecoderId, DualModel, ModelCheckpoint, ModelError};
use crate::weak_supervision::{plan_supervision, SupervisionPlan};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite loss in epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("no training data")]
    EmptyData,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;

impl From<AutodiffError> for TrainError {
    fn from(e: AutodiffError) -> Self {
        TrainError::Model(ModelError::Autodiff(e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossSwitches {
    pub use_rec: bool,
    pub use_bt: bool,
    pub use_sup: bool,
}

impl LossSwitches {
    pub const ALL: LossSwitches = LossSwitches {
        use_rec: true,
        use_bt: true,
        use_sup: true,
    };

    /// Parses `rec+bt+sup`-style names.
    pub fn parse(s: &str) -> Option<Self> {
        let mut sw = LossSwitches {
            use_rec: false,
            use_bt: false,
            use_sup: false,
        };
        for part in s.split('+') {
            match part.trim() {
                "rec" => sw.use_rec = true,
                "bt" => sw.use_bt = true,
                "sup" => sw.use_sup = true,
                _ => return None,
            }
        }
        sw.any().then_some(sw)
    }

    pub fn name(&self) -> String {
        let mut parts = Vec::new();
        if self.use_rec {
            parts.push("rec");
        }
        if self.use_bt {
            parts.push("bt");
        }
        if self.use_sup {
            parts.push("sup");
        }
        parts.join("+")
    }

    pub fn any(&self) -> bool {
        self.use_rec || self.use_bt || self.use_sup
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub rec: f64,
    pub bt: f64,
    pub sup: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            rec: 1.0,
            bt: 1.0,
            sup: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMetric {
    Mrr,
    Bleu2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub rho: f64,
    pub tf_ratio: f64,
    pub switches: LossSwitches,
    pub weights: LossWeights,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub schedule: LrSchedule,
    pub clip_norm: f64,
    /// Probability of masking one entity of a path.
    pub p_mask_path: f64,
    /// Per-token masking probability for sentences.
    pub p_mask_token: f64,
    /// Dev evaluation every this many epochs; the last epoch is always
    /// evaluated.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            rho: 0.5,
            tf_ratio: 0.2,
            switches: LossSwitches::ALL,
            weights: LossWeights::default(),
            epochs: 40,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            schedule: LrSchedule::Constant { lr: 1e-3 },
            clip_norm: 5.0,
            p_mask_path: 0.5,
            p_mask_token: 0.1,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    /// Defaults per architecture: Adam at 1e-3 for GRU models, the Noam
    /// schedule for Transformers.
    pub fn for_arch(arch: Architecture, d_model: usize) -> Self {
        let mut cfg = TrainConfig::default();
        if arch == Architecture::TransTrans {
            cfg.schedule = LrSchedule::Noam {
                d_model,
                warmup: 20_000,
                factor: 1.0,
            };
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.rho) {
            return err("rho must be in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.tf_ratio) {
            return err("tf_ratio must be in [0, 1]");
        }
        if !self.switches.any() {
            return err("at least one loss must be enabled");
        }
        if self.batch_size == 0 {
            return err("batch_size must be positive");
        }
        if self.eval_every == 0 {
            return err("eval_every must be positive");
        }
        Ok(())
    }
}

/// Training material: sentences and paths, plus aligned pairs indexing
/// into both lists.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainData {
    pub sentences: Vec<SentenceExample>,
    pub paths: Vec<PathTriple>,
    pub pairs: Vec<(usize, usize)>,
}

impl TrainData {
    /// Pairs come first, then the unpaired sentences and paths of the part.
    pub fn from_part(part: &SplitPart) -> Self {
        let mut data = TrainData::default();
        for p in &part.pairs {
            data.pairs.push((data.sentences.len(), data.paths.len()));
            data.sentences.push(p.sentence.clone());
            data.paths.push(p.path.clone());
        }
        data.sentences.extend(part.sentences.iter().cloned());
        data.paths.extend(part.paths.iter().cloned());
        data
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty() && self.paths.is_empty()
    }
}

/// One minibatch. `pairs` holds `(sentence row, path row)` of supervised,
/// aligned examples.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Batch {
    pub sentences: Vec<Vec<u32>>,
    pub masked_sentences: Vec<Vec<u32>>,
    pub paths: Vec<Vec<u32>>,
    pub masked_paths: Vec<Vec<u32>>,
    pub pairs: Vec<(usize, usize)>,
}

impl Batch {
    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty() && self.paths.is_empty()
    }

    /// Rows padded to a rectangle with `[PAD]`.
    pub fn padded(rows: &[Vec<u32>]) -> Vec<Vec<u32>> {
        let w = rows.iter().map(Vec::len).max().unwrap_or(0);
        rows.iter()
            .map(|r| {
                let mut r = r.clone();
                r.resize(w, PAD_ID);
                r
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Unit {
    Pair(usize),
    Sentence(usize),
    Path(usize),
}

fn units(data: &TrainData) -> Vec<Unit> {
    let mut paired_s = vec![false; data.sentences.len()];
    let mut paired_p = vec![false; data.paths.len()];
    let mut out = Vec::new();
    for (k, &(s, p)) in data.pairs.iter().enumerate() {
        paired_s[s] = true;
        paired_p[p] = true;
        out.push(Unit::Pair(k));
    }
    out.extend((0..data.sentences.len()).filter(|&i| !paired_s[i]).map(Unit::Sentence));
    out.extend((0..data.paths.len()).filter(|&i| !paired_p[i]).map(Unit::Path));
    out
}

fn build_batch<R: Rng + ?Sized>(
    data: &TrainData,
    chunk: &[Unit],
    plan: &SupervisionPlan,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<Batch> {
    let mut b = Batch::default();
    let push_s = |b: &mut Batch, s: &SentenceExample, rng: &mut R| {
        b.masked_sentences.push(mask_sentence(s, rng, cfg.p_mask_token).masked_tokens);
        b.sentences.push(s.tokens.clone());
        b.sentences.len() - 1
    };
    let push_p = |b: &mut Batch, p: &PathTriple, rng: &mut R| -> Result<usize> {
        let m = mask_path(p, rng, cfg.p_mask_path).map_err(|e| TrainError::Config(e.to_string()))?;
        b.masked_paths.push(m.masked_tokens);
        b.paths.push(serialize_path(p).map_err(|e| TrainError::Config(e.to_string()))?);
        Ok(b.paths.len() - 1)
    };
    for &u in chunk {
        match u {
            Unit::Pair(k) => {
                let (si, pi) = data.pairs[k];
                let s = push_s(&mut b, &data.sentences[si], rng);
                let p = push_p(&mut b, &data.paths[pi], rng)?;
                if plan.is_supervised(k) {
                    b.pairs.push((s, p));
                }
            }
            Unit::Sentence(i) => {
                push_s(&mut b, &data.sentences[i], rng);
            }
            Unit::Path(i) => {
                push_p(&mut b, &data.paths[i], rng)?;
            }
        }
    }
    Ok(b)
}

/// Reconstruction: decoder A rebuilds sentences and decoder B rebuilds
/// paths from their masked encodings. Each term is a mean over target
/// tokens; a side with no rows contributes 0.
pub fn loss_rec<T: Scalar, R: Rng + ?Sized>(
    m: &DualModel<T>,
    tape: &mut Tape<'_, T>,
    batch: &Batch,
    tf_ratio: f64,
    rng: &mut R,
) -> Result<Var> {
    let mut terms = Vec::new();
    if !batch.sentences.is_empty() {
        terms.push(m.nll(tape, &batch.masked_sentences, DecoderId::A, &batch.sentences, tf_ratio, rng)?);
    }
    if !batch.paths.is_empty() {
        terms.push(m.nll(tape, &batch.masked_paths, DecoderId::B, &batch.paths, tf_ratio, rng)?);
    }
    Ok(sum_terms(tape, &terms))
}

fn sum_terms<T: Scalar>(tape: &mut Tape<'_, T>, terms: &[Var]) -> Var {
    let mut it = terms.iter().copied();
    match it.next() {
        None => tape.scalar(T::zero()),
        Some(first) => it.fold(first, |acc, t| tape.add(acc, t).expect("scalar add")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BtCycle {
    /// Sentence → path → sentence.
    Aba,
    /// Path → sentence → path.
    Bab,
}

/// Loss value plus the number of rows skipped because the first pass
/// produced nothing usable.
pub struct BtLoss {
    pub value: Var,
    pub skipped: usize,
}

/// One back-translation cycle. The first pass is a greedy generation on a
/// separate inference tape, so its tokens reach the second pass as plain
/// ids with no gradient path.
pub fn loss_bt_cycle<T: Scalar, R: Rng + ?Sized>(
    m: &DualModel<T>,
    tape: &mut Tape<'_, T>,
    batch: &Batch,
    cycle: BtCycle,
    tf_ratio: f64,
    rng: &mut R,
) -> Result<BtLoss> {
    let (originals, first, second) = match cycle {
        BtCycle::Aba => (&batch.sentences, DecoderId::B, DecoderId::A),
        BtCycle::Bab => (&batch.paths, DecoderId::A, DecoderId::B),
    };
    if originals.is_empty() {
        return Ok(BtLoss {
            value: tape.scalar(T::zero()),
            skipped: 0,
        });
    }
    let generated = m.greedy_batch(originals, first)?;
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    let mut skipped = 0;
    for (g, orig) in generated.iter().zip(originals) {
        let x = strip_generated(&g.tokens);
        if is_degenerate(&x) {
            skipped += 1;
        } else {
            inputs.push(x);
            targets.push(orig.clone());
        }
    }
    let value = if inputs.is_empty() {
        tape.scalar(T::zero())
    } else {
        m.nll(tape, &inputs, second, &targets, tf_ratio, rng)?
    };
    Ok(BtLoss { value, skipped })
}

/// Back-translation loss: both cycles summed.
pub fn loss_bt<T: Scalar, R: Rng + ?Sized>(
    m: &DualModel<T>,
    tape: &mut Tape<'_, T>,
    batch: &Batch,
    tf_ratio: f64,
    rng: &mut R,
) -> Result<BtLoss> {
    let a = loss_bt_cycle(m, tape, batch, BtCycle::Aba, tf_ratio, rng)?;
    let b = loss_bt_cycle(m, tape, batch, BtCycle::Bab, tf_ratio, rng)?;
    Ok(BtLoss {
        value: tape.add(a.value, b.value)?,
        skipped: a.skipped + b.skipped,
    })
}

/// Supervision over the flagged pairs only: path from sentence plus
/// sentence from path. Zero when the batch has no flagged pair.
pub fn loss_sup<T: Scalar, R: Rng + ?Sized>(
    m: &DualModel<T>,
    tape: &mut Tape<'_, T>,
    batch: &Batch,
    tf_ratio: f64,
    rng: &mut R,
) -> Result<Var> {
    if batch.pairs.is_empty() {
        return Ok(tape.scalar(T::zero()));
    }
    let sents: Vec<Vec<u32>> = batch.pairs.iter().map(|&(s, _)| batch.sentences[s].clone()).collect();
    let paths: Vec<Vec<u32>> = batch.pairs.iter().map(|&(_, p)| batch.paths[p].clone()).collect();
    let ab = m.nll(tape, &sents, DecoderId::B, &paths, tf_ratio, rng)?;
    let ba = m.nll(tape, &paths, DecoderId::A, &sents, tf_ratio, rng)?;
    Ok(tape.add(ab, ba)?)
}

/// Per-loss values of one batch. Disabled losses are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepLosses {
    pub rec: Option<f64>,
    pub bt: Option<f64>,
    pub sup: Option<f64>,
    pub total: f64,
    pub bt_skipped: usize,
}

/// Each loss draws its teacher-forcing coins from its own stream so that
/// switching one loss off does not change the others.
fn loss_rng(batch_seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(batch_seed);
    r.set_stream(stream);
    r
}

/// Builds the weighted total of the enabled losses on `tape`.
pub fn total_loss<T: Scalar>(
    m: &DualModel<T>,
    tape: &mut Tape<'_, T>,
    batch: &Batch,
    cfg: &TrainConfig,
    batch_seed: u64,
) -> Result<(Var, StepLosses)> {
    let mut out = StepLosses::default();
    let mut terms = Vec::new();
    let sw = cfg.switches;
    if sw.use_rec {
        let v = loss_rec(m, tape, batch, cfg.tf_ratio, &mut loss_rng(batch_seed, 1))?;
        out.rec = Some(tape.value(v).data[0].f64());
        terms.push(tape.scale(v, cfg.weights.rec));
    }
    if sw.use_bt {
        let v = loss_bt(m, tape, batch, cfg.tf_ratio, &mut loss_rng(batch_seed, 2))?;
        out.bt = Some(tape.value(v.value).data[0].f64());
        out.bt_skipped = v.skipped;
        terms.push(tape.scale(v.value, cfg.weights.bt));
    }
    if sw.use_sup {
        let v = loss_sup(m, tape, batch, cfg.tf_ratio, &mut loss_rng(batch_seed, 3))?;
        out.sup = Some(tape.value(v).data[0].f64());
        terms.push(tape.scale(v, cfg.weights.sup));
    }
    let total = sum_terms(tape, &terms);
    out.total = tape.value(total).data[0].f64();
    Ok((total, out))
}

/// Dev-set numbers reported after an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DevMetrics {
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub rouge_l: f64,
}

/// Anything that can score a model on held-out data.
pub trait DevEvaluator<T: Scalar> {
    fn evaluate(&self, model: &DualModel<T>) -> DevMetrics;
}

impl<T: Scalar, F: Fn(&DualModel<T>) -> DevMetrics> DevEvaluator<T> for F {
    fn evaluate(&self, model: &DualModel<T>) -> DevMetrics {
        self(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub loss_rec: Option<f64>,
    pub loss_bt: Option<f64>,
    pub loss_sup: Option<f64>,
    pub loss_total: f64,
    pub bt_skipped: usize,
    pub batches: usize,
    pub lr: f64,
    pub dev: Option<DevMetrics>,
    pub best_mrr: bool,
    pub best_bleu2: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct BestCheckpoint<T> {
    pub metric: SelectionMetric,
    pub epoch: usize,
    pub value: f64,
    pub params: Vec<ParamEntry<T>>,
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TrainingCheckpoint<T> {
    pub config: TrainConfig,
    pub model: ModelCheckpoint<T>,
    pub optimizer: OptimizerState<T>,
    pub epochs_done: usize,
    pub reports: Vec<EpochReport>,
    pub best_mrr: Option<BestCheckpoint<T>>,
    pub best_bleu2: Option<BestCheckpoint<T>>,
}

impl<T: Scalar> TrainingCheckpoint<T> {
    pub fn save(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string(self).map_err(|e| TrainError::Checkpoint(e.to_string()))?;
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)?;
        serde_json::from_str(&s).map_err(|e| TrainError::Checkpoint(e.to_string()))
    }
}

/// Owns the optimizer and the selection state of one training run.
pub struct Trainer<T: Scalar> {
    pub cfg: TrainConfig,
    plan: SupervisionPlan,
    optimizer: OptimizerState<T>,
    epochs_done: usize,
    reports: Vec<EpochReport>,
    best_mrr: Option<BestCheckpoint<T>>,
    best_bleu2: Option<BestCheckpoint<T>>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: &DualModel<T>, data: &TrainData, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(TrainError::EmptyData);
        }
        let plan = plan_supervision(data.pairs.len(), cfg.rho, cfg.seed).map_err(|e| TrainError::Config(e.to_string()))?;
        Ok(Trainer {
            optimizer: OptimizerState::new(cfg.optimizer, model.params()),
            cfg,
            plan,
            epochs_done: 0,
            reports: Vec::new(),
            best_mrr: None,
            best_bleu2: None,
        })
    }

    /// Restores a trainer and its model from a checkpoint.
    pub fn resume(ck: TrainingCheckpoint<T>, data: &TrainData) -> Result<(Self, DualModel<T>)> {
        let model = DualModel::from_checkpoint(ck.model)?;
        let mut t = Trainer::new(&model, data, ck.config)?;
        t.optimizer = ck.optimizer;
        t.epochs_done = ck.epochs_done;
        t.reports = ck.reports;
        t.best_mrr = ck.best_mrr;
        t.best_bleu2 = ck.best_bleu2;
        Ok((t, model))
    }

    pub fn checkpoint(&self, model: &DualModel<T>) -> TrainingCheckpoint<T> {
        TrainingCheckpoint {
            config: self.cfg.clone(),
            model: model.to_checkpoint(None),
            optimizer: self.optimizer.clone(),
            epochs_done: self.epochs_done,
            reports: self.reports.clone(),
            best_mrr: self.best_mrr.clone(),
            best_bleu2: self.best_bleu2.clone(),
        }
    }

    pub fn plan(&self) -> &SupervisionPlan {
        &self.plan
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    pub fn reports(&self) -> &[EpochReport] {
        &self.reports
    }

    pub fn best(&self, metric: SelectionMetric) -> Option<&BestCheckpoint<T>> {
        match metric {
            SelectionMetric::Mrr => self.best_mrr.as_ref(),
            SelectionMetric::Bleu2 => self.best_bleu2.as_ref(),
        }
    }

    /// One optimizer step on `batch`.
    pub fn step(&mut self, model: &mut DualModel<T>, batch: &Batch, batch_seed: u64) -> Result<StepLosses> {
        let mut grads = Gradients::zeros_like(model.params());
        let losses = {
            let mut tape = Tape::new(model.params());
            let (loss, losses) = total_loss(model, &mut tape, batch, &self.cfg, batch_seed)?;
            if !losses.total.is_finite() {
                return Ok(losses);
            }
            tape.backward(loss)?;
            tape.accumulate_param_grads(&mut grads);
            losses
        };
        clip_global_norm(&mut grads, self.cfg.clip_norm);
        let lr = self.cfg.schedule.lr(self.optimizer.step + 1);
        self.optimizer
            .step(model.params_mut(), &grads, lr)?;
        Ok(losses)
    }

    /// Trains one epoch and evaluates on dev when due.
    pub fn run_epoch(&mut self, model: &mut DualModel<T>, data: &TrainData, dev: Option<&dyn DevEvaluator<T>>) -> Result<EpochReport> {
        let epoch = self.epochs_done + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(epoch as u64);
        let mut order = units(data);
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 4];
        let mut seen = [0usize; 3];
        let mut skipped = 0;
        let mut batches = 0;
        let lr = self.cfg.schedule.lr(self.optimizer.step + 1);
        for (bi, chunk) in order.chunks(self.cfg.batch_size).enumerate() {
            let batch = build_batch(data, chunk, &self.plan, &self.cfg, &mut rng)?;
            let batch_seed: u64 = rng.gen();
            let l = self.step(model, &batch, batch_seed)?;
            if !l.total.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch: bi });
            }
            for (k, v) in [l.rec, l.bt, l.sup].into_iter().enumerate() {
                if let Some(v) = v {
                    sums[k] += v;
                    seen[k] += 1;
                }
            }
            sums[3] += l.total;
            skipped += l.bt_skipped;
            batches += 1;
        }
        let mean = |k: usize| (seen[k] > 0).then(|| sums[k] / seen[k] as f64);
        let mut report = EpochReport {
            epoch,
            loss_rec: mean(0),
            loss_bt: mean(1),
            loss_sup: mean(2),
            loss_total: sums[3] / batches.max(1) as f64,
            bt_skipped: skipped,
            batches,
            lr,
            dev: None,
            best_mrr: false,
            best_bleu2: false,
        };
        let due = epoch.is_multiple_of(self.cfg.eval_every) || epoch == self.cfg.epochs;
        if let (Some(ev), true) = (dev, due) {
            let d = ev.evaluate(model);
            report.dev = Some(d);
            report.best_mrr = update_best(&mut self.best_mrr, SelectionMetric::Mrr, epoch, d.mrr, model);
            report.best_bleu2 = update_best(&mut self.best_bleu2, SelectionMetric::Bleu2, epoch, d.bleu2, model);
        }
        log::info!(
            "epoch {epoch}: total {:.4} rec {:?} bt {:?} sup {:?}",
            report.loss_total,
            report.loss_rec,
            report.loss_bt,
            report.loss_sup
        );
        self.epochs_done = epoch;
        self.reports.push(report.clone());
        Ok(report)
    }

    /// Runs epochs until `cfg.epochs` have been completed.
    pub fn run(&mut self, model: &mut DualModel<T>, data: &TrainData, dev: Option<&dyn DevEvaluator<T>>) -> Result<Vec<EpochReport>> {
        self.run_until(model, data, dev, self.cfg.epochs)
    }

    /// Runs epochs until `target` have been completed in total.
    pub fn run_until(
        &mut self,
        model: &mut DualModel<T>,
        data: &TrainData,
        dev: Option<&dyn DevEvaluator<T>>,
        target: usize,
    ) -> Result<Vec<EpochReport>> {
        let mut out = Vec::new();
        while self.epochs_done < target {
            out.push(self.run_epoch(model, data, dev)?);
        }
        Ok(out)
    }
}

fn update_best<T: Scalar>(
    slot: &mut Option<BestCheckpoint<T>>,
    metric: SelectionMetric,
    epoch: usize,
    value: f64,
    model: &DualModel<T>,
) -> bool {
    let better = slot.as_ref().is_none_or(|b| value > b.value);
    if better {
        *slot = Some(BestCheckpoint {
            metric,
            epoch,
            value,
            params: model.params().to_entries(),
        });
    }
    better
}

/// Trains a fresh run to completion. Returns the reports and the best
/// checkpoint per selection metric.
pub fn train<T: Scalar>(
    model: &mut DualModel<T>,
    data: &TrainData,
    cfg: &TrainConfig,
    dev: Option<&dyn DevEvaluator<T>>,
) -> Result<TrainOutcome<T>> {
    let mut trainer = Trainer::new(model, data, cfg.clone())?;
    let reports = trainer.run(model, data, dev)?;
    Ok(TrainOutcome {
        reports,
        best_mrr: trainer.best_mrr,
        best_bleu2: trainer.best_bleu2,
    })
}

pub struct TrainOutcome<T> {
    pub reports: Vec<EpochReport>,
    pub best_mrr: Option<BestCheckpoint<T>>,
    pub best_bleu2: Option<BestCheckpoint<T>>,
}
