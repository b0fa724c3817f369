//! Shared-encoder, dual-decoder sequence models.
//!
//! One encoder reads both sentences and serialized paths. Decoder A writes
//! sentences, decoder B writes paths. Both decoders have the same shape but
//! their own parameters; the token embedding is shared by all three parts.

pub mod gru;
pub mod transformer;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, ParamEntry, ParamId, ParamStore, Scalar, Tape, Tensor, Var};
use crate::corpus::{is_special, Vocabulary, BOS_ID, EOS_ID, MAX_LEN, PAD_ID, SEP_ID};

use gru::{GruCellParams, GruDecoderParams, GruEncoding};
use transformer::{Linear, TransformerStack};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("empty input sequence")]
    EmptyInput,
    #[error("input of {len} tokens exceeds the maximum of {max}")]
    TooLong { len: usize, max: usize },
    #[error("empty target sequence")]
    EmptyTarget,
    #[error("direction {direction} expects {expected} input")]
    ModalityMismatch {
        direction: TransferDirection,
        expected: Modality,
    },
    #[error("first-pass output is empty after removing special tokens")]
    DegenerateIntermediate,
    #[error("unknown decoder {0:?}")]
    UnknownDecoder(String),
    #[error("unknown transfer direction {0:?}")]
    UnknownDirection(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modality {
    Sentence,
    Path,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Sentence => "sentence",
            Modality::Path => "path",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DecoderId {
    A,
    B,
}

impl DecoderId {
    pub fn modality(self) -> Modality {
        match self {
            DecoderId::A => Modality::Sentence,
            DecoderId::B => Modality::Path,
        }
    }

    fn index(self) -> usize {
        match self {
            DecoderId::A => 0,
            DecoderId::B => 1,
        }
    }
}

impl FromStr for DecoderId {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(DecoderId::A),
            "B" | "b" => Ok(DecoderId::B),
            other => Err(ModelError::UnknownDecoder(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TransferDirection {
    AA,
    AB,
    BA,
    BB,
    ABA,
    BAB,
    BmB,
}

impl TransferDirection {
    pub const ALL: [TransferDirection; 7] = [
        TransferDirection::AA,
        TransferDirection::AB,
        TransferDirection::BA,
        TransferDirection::BB,
        TransferDirection::ABA,
        TransferDirection::BAB,
        TransferDirection::BmB,
    ];

    /// Decoders applied in order; each leg re-encodes the previous output.
    pub fn legs(self) -> &'static [DecoderId] {
        use DecoderId::*;
        match self {
            TransferDirection::AA => &[A],
            TransferDirection::AB => &[B],
            TransferDirection::BA => &[A],
            TransferDirection::BB | TransferDirection::BmB => &[B],
            TransferDirection::ABA => &[B, A],
            TransferDirection::BAB => &[A, B],
        }
    }

    pub fn input_modality(self) -> Modality {
        match self {
            TransferDirection::AA | TransferDirection::AB | TransferDirection::ABA => Modality::Sentence,
            _ => Modality::Path,
        }
    }

    pub fn is_composite(self) -> bool {
        self.legs().len() > 1
    }
}

impl fmt::Display for TransferDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for TransferDirection {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        TransferDirection::ALL
            .into_iter()
            .find(|d| d.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| ModelError::UnknownDirection(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    GruGru,
    TransTrans,
}

impl FromStr for Architecture {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "gru-gru" | "gru" => Ok(Architecture::GruGru),
            "trans-trans" | "transformer" => Ok(Architecture::TransTrans),
            other => Err(format!("unknown architecture {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Architecture,
    pub vocab_size: usize,
    /// Embedding width for the GRU variant (the Transformer uses `d_model`).
    pub embed_dim: usize,
    pub hidden: usize,
    pub gru_attention: bool,
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff_dim: usize,
    pub max_len: usize,
    pub init_seed: u64,
}

impl ModelConfig {
    pub fn gru(vocab_size: usize) -> Self {
        ModelConfig {
            arch: Architecture::GruGru,
            vocab_size,
            embed_dim: 100,
            hidden: 100,
            gru_attention: false,
            d_model: 96,
            heads: 3,
            layers: 3,
            ff_dim: 384,
            max_len: MAX_LEN,
            init_seed: 0,
        }
    }

    pub fn transformer(vocab_size: usize) -> Self {
        ModelConfig {
            arch: Architecture::TransTrans,
            ..Self::gru(vocab_size)
        }
    }

    /// Width of encoder states.
    pub fn state_dim(&self) -> usize {
        match self.arch {
            Architecture::GruGru => self.hidden,
            Architecture::TransTrans => self.d_model,
        }
    }

    fn embedding_dim(&self) -> usize {
        match self.arch {
            Architecture::GruGru => self.embed_dim,
            Architecture::TransTrans => self.d_model,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ModelError::Checkpoint(m.to_string()));
        if self.vocab_size == 0 || self.max_len == 0 {
            return bad("vocab_size and max_len must be positive");
        }
        match self.arch {
            Architecture::GruGru if self.hidden == 0 || self.embed_dim == 0 => bad("zero GRU width"),
            Architecture::TransTrans if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) => {
                bad("d_model must be divisible by heads")
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
enum Encoder {
    Gru(GruCellParams),
    Transformer(TransformerStack),
}

#[derive(Debug, Clone)]
enum Decoder {
    Gru(GruDecoderParams),
    Transformer { stack: TransformerStack, out: Linear },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelPart {
    Embedding,
    Encoder,
    DecoderA,
    DecoderB,
}

/// Encoder output for a batch.
pub struct EncoderState {
    /// `[batch, state_dim]` sentence-level vector.
    pub summary: Var,
    pub lengths: Vec<usize>,
    memory: Memory,
}

enum Memory {
    Gru(GruEncoding),
    Rows(Vec<Var>),
}

impl EncoderState {
    /// Per-position states of one row as a `[len, state_dim]` tensor.
    pub fn context<T: Scalar>(&self, tape: &Tape<'_, T>, row: usize) -> Tensor<T> {
        match &self.memory {
            Memory::Rows(rows) => tape.value(rows[row]).clone(),
            Memory::Gru(enc) => {
                let len = self.lengths[row];
                let mut data = Vec::new();
                let mut width = 0;
                for &s in &enc.steps[..len] {
                    let t = tape.value(s);
                    width = t.cols();
                    data.extend_from_slice(&t.data[row * width..(row + 1) * width]);
                }
                Tensor {
                    shape: vec![len, width],
                    data,
                }
            }
        }
    }
}

/// Logits of a decoding pass, flattened with matching targets.
pub struct TeacherOutput {
    /// `[rows, vocab]`.
    pub logits: Var,
    /// One target per logits row; `[PAD]` rows are ignored by the loss.
    pub targets: Vec<u32>,
    /// Whether the ground-truth token was fed at steps `1..`.
    pub fed_truth: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decoded {
    pub tokens: Vec<u32>,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub direction: TransferDirection,
    pub output_tokens: Vec<u32>,
    pub truncated: bool,
    /// First-leg output of composite directions.
    pub intermediate: Option<Vec<u32>>,
    pub per_step_logits: Option<Vec<Vec<f64>>>,
}

/// Drops `[BOS]`, `[PAD]` and everything from the first `[EOS]` on.
pub fn strip_generated(tokens: &[u32]) -> Vec<u32> {
    tokens
        .iter()
        .copied()
        .take_while(|&t| t != EOS_ID)
        .filter(|&t| t != BOS_ID && t != PAD_ID)
        .collect()
}

/// True when nothing but special tokens remains.
pub fn is_degenerate(tokens: &[u32]) -> bool {
    tokens.iter().all(|&t| is_special(t))
}

/// Serializable model snapshot with enough metadata to rebuild the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ModelCheckpoint<T> {
    pub version: u32,
    pub config: ModelConfig,
    pub vocab: Option<Vocabulary>,
    pub params: Vec<ParamEntry<T>>,
}

/// One shared encoder plus two decoders.
#[derive(Debug, Clone)]
pub struct DualModel<T: Scalar> {
    config: ModelConfig,
    params: ParamStore<T>,
    embedding: ParamId,
    encoder: Encoder,
    decoders: [Decoder; 2],
}

impl<T: Scalar> DualModel<T> {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut params = ParamStore::new();
        let e = config.embedding_dim();
        let v = config.vocab_size;
        let embedding = params.add_uniform("embedding", &[v, e], (3.0 / e as f64).sqrt(), &mut rng);
        let (encoder, decoders) = match config.arch {
            Architecture::GruGru => {
                let h = config.hidden;
                let enc = GruCellParams::init(&mut params, "encoder.gru", e, h, &mut rng);
                let mut dec = |name: &str, params: &mut ParamStore<T>| {
                    let cell = GruCellParams::init(params, &format!("{name}.gru"), e + h, h, &mut rng);
                    let out = Linear::init(params, &format!("{name}.out"), h, v, &mut rng);
                    Decoder::Gru(GruDecoderParams {
                        cell,
                        w_out: out.w,
                        b_out: out.b,
                        attention: config.gru_attention,
                    })
                };
                let a = dec("decoder_a", &mut params);
                let b = dec("decoder_b", &mut params);
                (Encoder::Gru(enc), [a, b])
            }
            Architecture::TransTrans => {
                let (d, nh, ff, nl) = (config.d_model, config.heads, config.ff_dim, config.layers);
                let enc = TransformerStack::init(&mut params, "encoder", d, nh, ff, nl, false, &mut rng);
                let mut dec = |name: &str, params: &mut ParamStore<T>| Decoder::Transformer {
                    stack: TransformerStack::init(params, name, d, nh, ff, nl, true, &mut rng),
                    out: Linear::init(params, &format!("{name}.out"), d, v, &mut rng),
                };
                let a = dec("decoder_a", &mut params);
                let b = dec("decoder_b", &mut params);
                (Encoder::Transformer(enc), [a, b])
            }
        };
        Ok(DualModel {
            config,
            params,
            embedding,
            encoder,
            decoders,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Parameter ids belonging to one part of the model.
    pub fn part_params(&self, part: ModelPart) -> Vec<ParamId> {
        let dec_ids = |d: &Decoder| match d {
            Decoder::Gru(g) => g.ids(),
            Decoder::Transformer { stack, out } => {
                let mut v = stack.ids();
                v.extend([out.w, out.b]);
                v
            }
        };
        match part {
            ModelPart::Embedding => vec![self.embedding],
            ModelPart::Encoder => match &self.encoder {
                Encoder::Gru(c) => c.ids(),
                Encoder::Transformer(s) => s.ids(),
            },
            ModelPart::DecoderA => dec_ids(&self.decoders[0]),
            ModelPart::DecoderB => dec_ids(&self.decoders[1]),
        }
    }

    /// Encodes a batch of token rows. Rows must be non-empty and at most
    /// `max_len` long.
    pub fn encode(&self, tape: &mut Tape<'_, T>, inputs: &[Vec<u32>]) -> Result<EncoderState> {
        for row in inputs {
            self.check_len(row)?;
        }
        if inputs.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        let lengths: Vec<usize> = inputs.iter().map(Vec::len).collect();
        match &self.encoder {
            Encoder::Gru(cell) => {
                let enc = gru::encode(tape, self.embedding, cell, inputs)?;
                Ok(EncoderState {
                    summary: enc.summary,
                    lengths,
                    memory: Memory::Gru(enc),
                })
            }
            Encoder::Transformer(stack) => {
                let mut rows = Vec::with_capacity(inputs.len());
                let mut sums = Vec::with_capacity(inputs.len());
                for ids in inputs {
                    let h = stack.run(tape, self.embedding, ids, None)?;
                    sums.push(transformer::mean_rows(tape, h)?);
                    rows.push(h);
                }
                let summary = tape.concat(&sums, 0)?;
                Ok(EncoderState {
                    summary,
                    lengths,
                    memory: Memory::Rows(rows),
                })
            }
        }
    }

    fn check_len(&self, row: &[u32]) -> Result<()> {
        if row.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        if row.len() > self.config.max_len {
            return Err(ModelError::TooLong {
                len: row.len(),
                max: self.config.max_len,
            });
        }
        Ok(())
    }

    /// Runs decoder `dec` against `targets` (an `[EOS]` is appended to each
    /// row). At step `t ≥ 1` the previous-token input is the ground truth
    /// with probability `tf_ratio` and the argmax of step `t − 1` otherwise;
    /// one draw per step is shared by the whole batch.
    pub fn decode_teacher<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'_, T>,
        state: &EncoderState,
        dec: DecoderId,
        targets: &[Vec<u32>],
        tf_ratio: f64,
        rng: &mut R,
    ) -> Result<TeacherOutput> {
        if targets.iter().any(Vec::is_empty) || targets.is_empty() {
            return Err(ModelError::EmptyTarget);
        }
        let gold: Vec<Vec<u32>> = targets
            .iter()
            .map(|t| t.iter().copied().chain([EOS_ID]).collect())
            .collect();
        let steps = gold.iter().map(Vec::len).max().unwrap_or(0);
        let fed_truth: Vec<bool> = (1..steps).map(|_| rng.gen::<f64>() < tf_ratio).collect();
        match &self.decoders[dec.index()] {
            Decoder::Gru(d) => self.gru_teacher(tape, state, d, &gold, fed_truth),
            Decoder::Transformer { stack, out } => {
                self.transformer_teacher(tape, state, stack, out, &gold, fed_truth)
            }
        }
    }

    fn gru_teacher(
        &self,
        tape: &mut Tape<'_, T>,
        state: &EncoderState,
        d: &GruDecoderParams,
        gold: &[Vec<u32>],
        fed_truth: Vec<bool>,
    ) -> Result<TeacherOutput> {
        let Memory::Gru(enc) = &state.memory else {
            unreachable!("architecture mismatch")
        };
        let b = gold.len();
        let steps = fed_truth.len() + 1;
        let mut h = enc.summary;
        let mut prev = vec![BOS_ID; b];
        let mut all_logits = Vec::with_capacity(steps);
        let mut flat_targets = Vec::with_capacity(steps * b);
        for t in 0..steps {
            if t > 0 {
                prev = if fed_truth[t - 1] {
                    gold.iter().map(|g| g.get(t - 1).copied().unwrap_or(PAD_ID)).collect()
                } else {
                    tape.argmax_rows(*all_logits.last().expect("previous step"))
                };
            }
            let (logits, h_new) = gru::decoder_step(tape, self.embedding, d, &prev, h, enc, &state.lengths)?;
            h = h_new;
            all_logits.push(logits);
            flat_targets.extend(gold.iter().map(|g| g.get(t).copied().unwrap_or(PAD_ID)));
        }
        let logits = tape.concat(&all_logits, 0)?;
        Ok(TeacherOutput {
            logits,
            targets: flat_targets,
            fed_truth,
        })
    }

    fn transformer_teacher(
        &self,
        tape: &mut Tape<'_, T>,
        state: &EncoderState,
        stack: &TransformerStack,
        out: &Linear,
        gold: &[Vec<u32>],
        fed_truth: Vec<bool>,
    ) -> Result<TeacherOutput> {
        let Memory::Rows(rows) = &state.memory else {
            unreachable!("architecture mismatch")
        };
        let mut all_logits = Vec::with_capacity(gold.len());
        let mut flat_targets = Vec::new();
        for (i, g) in gold.iter().enumerate() {
            // Inputs that depend on the model's own predictions are found by
            // stepwise decoding on a side tape; the causal mask makes the
            // final full pass produce the same logits at every position.
            let mut inputs = vec![BOS_ID];
            for t in 1..g.len() {
                if fed_truth[t - 1] {
                    inputs.push(g[t - 1]);
                } else {
                    let memory = tape.value(rows[i]).clone();
                    let mut side = Tape::inference(&self.params);
                    let mem = side.constant(memory);
                    let h = stack.run(&mut side, self.embedding, &inputs, Some(mem))?;
                    let last = side.slice_rows(h, t - 1, t)?;
                    let logits = out.apply(&mut side, last)?;
                    inputs.push(side.argmax_rows(logits)[0]);
                }
            }
            let h = stack.run(tape, self.embedding, &inputs, Some(rows[i]))?;
            all_logits.push(out.apply(tape, h)?);
            flat_targets.extend_from_slice(g);
        }
        let logits = tape.concat(&all_logits, 0)?;
        Ok(TeacherOutput {
            logits,
            targets: flat_targets,
            fed_truth,
        })
    }

    /// Mean token negative log-likelihood of `targets` given `inputs`.
    #[allow(clippy::too_many_arguments)]
    pub fn nll<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'_, T>,
        inputs: &[Vec<u32>],
        dec: DecoderId,
        targets: &[Vec<u32>],
        tf_ratio: f64,
        rng: &mut R,
    ) -> Result<Var> {
        let state = self.encode(tape, inputs)?;
        let out = self.decode_teacher(tape, &state, dec, targets, tf_ratio, rng)?;
        Ok(tape.cross_entropy(out.logits, &out.targets, Some(PAD_ID))?)
    }

    /// Greedy decoding from an encoder state until `[EOS]` or `max_len`
    /// tokens.
    pub fn greedy(&self, tape: &mut Tape<'_, T>, state: &EncoderState, dec: DecoderId) -> Result<Vec<Decoded>> {
        let max_len = self.config.max_len;
        match (&self.decoders[dec.index()], &state.memory) {
            (Decoder::Gru(d), Memory::Gru(enc)) => {
                let b = state.lengths.len();
                let mut h = enc.summary;
                let mut prev = vec![BOS_ID; b];
                let mut out: Vec<Decoded> = vec![
                    Decoded {
                        tokens: Vec::new(),
                        truncated: true,
                    };
                    b
                ];
                let mut done = vec![false; b];
                for _ in 0..max_len {
                    let (logits, h_new) = gru::decoder_step(tape, self.embedding, d, &prev, h, enc, &state.lengths)?;
                    h = h_new;
                    prev = tape.argmax_rows(logits);
                    for i in 0..b {
                        if !done[i] {
                            out[i].tokens.push(prev[i]);
                            if prev[i] == EOS_ID {
                                done[i] = true;
                                out[i].truncated = false;
                            }
                        }
                    }
                    if done.iter().all(|&x| x) {
                        break;
                    }
                }
                Ok(out)
            }
            (Decoder::Transformer { stack, out }, Memory::Rows(rows)) => {
                let mut results = Vec::with_capacity(rows.len());
                for &mem in rows {
                    let mut inputs = vec![BOS_ID];
                    let mut decoded = Decoded {
                        tokens: Vec::new(),
                        truncated: true,
                    };
                    for t in 0..max_len {
                        let h = stack.run(tape, self.embedding, &inputs, Some(mem))?;
                        let last = tape.slice_rows(h, t, t + 1)?;
                        let logits = out.apply(tape, last)?;
                        let next = tape.argmax_rows(logits)[0];
                        decoded.tokens.push(next);
                        if next == EOS_ID {
                            decoded.truncated = false;
                            break;
                        }
                        inputs.push(next);
                    }
                    results.push(decoded);
                }
                Ok(results)
            }
            _ => unreachable!("architecture mismatch"),
        }
    }

    /// Evaluation-mode encode + greedy decode of a batch.
    pub fn greedy_batch(&self, inputs: &[Vec<u32>], dec: DecoderId) -> Result<Vec<Decoded>> {
        let mut tape = Tape::inference(&self.params);
        let state = self.encode(&mut tape, inputs)?;
        self.greedy(&mut tape, &state, dec)
    }

    fn prepare(&self, tokens: &[u32], direction: TransferDirection, expected: Modality) -> Result<Vec<u32>> {
        // Generated sequences may carry [BOS]/[EOS]/[PAD]; drop them.
        let row = strip_generated(tokens);
        self.check_len(&row)?;
        let is_path = row.first() == Some(&SEP_ID);
        let ok = match expected {
            Modality::Path => is_path,
            Modality::Sentence => !row.contains(&SEP_ID),
        };
        if !ok {
            return Err(ModelError::ModalityMismatch { direction, expected });
        }
        Ok(row)
    }

    /// Greedy transfer of one input.
    pub fn generate(&self, input: &[u32], direction: TransferDirection) -> Result<GenerationResult> {
        self.generate_batch(&[input.to_vec()], direction)
            .pop()
            .expect("one result per input")
    }

    /// Greedy transfer of many inputs; failures are reported per row.
    /// Results equal calling [`DualModel::generate`] row by row.
    pub fn generate_batch(&self, inputs: &[Vec<u32>], direction: TransferDirection) -> Vec<Result<GenerationResult>> {
        let mut results: Vec<Option<Result<GenerationResult>>> = (0..inputs.len()).map(|_| None).collect();
        let mut current: Vec<(usize, Vec<u32>)> = Vec::new();
        for (i, row) in inputs.iter().enumerate() {
            match self.prepare(row, direction, direction.input_modality()) {
                Ok(r) => current.push((i, r)),
                Err(e) => results[i] = Some(Err(e)),
            }
        }
        let legs = direction.legs();
        let mut intermediates: Vec<Option<Vec<u32>>> = vec![None; inputs.len()];
        for (leg, &dec) in legs.iter().enumerate() {
            if current.is_empty() {
                break;
            }
            let rows: Vec<Vec<u32>> = current.iter().map(|(_, r)| r.clone()).collect();
            let decoded = match self.greedy_batch(&rows, dec) {
                Ok(d) => d,
                Err(e) => {
                    for (i, _) in &current {
                        results[*i] = Some(Err(duplicate_error(&e)));
                    }
                    break;
                }
            };
            let last = leg + 1 == legs.len();
            let mut next = Vec::new();
            for ((i, _), d) in current.iter().zip(decoded) {
                if last {
                    results[*i] = Some(Ok(GenerationResult {
                        direction,
                        output_tokens: d.tokens,
                        truncated: d.truncated,
                        intermediate: intermediates[*i].take(),
                        per_step_logits: None,
                    }));
                    continue;
                }
                let stripped = strip_generated(&d.tokens);
                if is_degenerate(&stripped) {
                    results[*i] = Some(Err(ModelError::DegenerateIntermediate));
                    continue;
                }
                match self.prepare(&stripped, direction, dec.modality()) {
                    Ok(r) => {
                        intermediates[*i] = Some(d.tokens);
                        next.push((*i, r));
                    }
                    Err(e) => results[*i] = Some(Err(e)),
                }
            }
            current = next;
        }
        results
            .into_iter()
            .map(|r| r.expect("every row resolved"))
            .collect()
    }

    /// Parameters read while transferring `input` along `direction`.
    pub fn params_read_by(&self, input: &[u32], direction: TransferDirection) -> Result<Vec<ParamId>> {
        let mut seen = std::collections::BTreeSet::new();
        let mut row = self.prepare(input, direction, direction.input_modality())?;
        for &dec in direction.legs() {
            let mut tape = Tape::inference(&self.params);
            let state = self.encode(&mut tape, std::slice::from_ref(&row))?;
            let d = self.greedy(&mut tape, &state, dec)?;
            seen.extend(tape.touched_params());
            row = strip_generated(&d[0].tokens);
            if is_degenerate(&row) {
                break;
            }
        }
        Ok(seen.into_iter().collect())
    }

    pub fn to_checkpoint(&self, vocab: Option<&Vocabulary>) -> ModelCheckpoint<T> {
        ModelCheckpoint {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            vocab: vocab.cloned(),
            params: self.params.to_entries(),
        }
    }

    pub fn from_checkpoint(ck: ModelCheckpoint<T>) -> Result<Self> {
        if ck.version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!("unsupported version {}", ck.version)));
        }
        let mut model = DualModel::new(ck.config)?;
        model.params.load_entries(ck.params)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path, vocab: Option<&Vocabulary>) -> Result<()> {
        let json = serde_json::to_string(&self.to_checkpoint(vocab)).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, Option<Vocabulary>)> {
        let text = std::fs::read_to_string(path)?;
        let mut ck: ModelCheckpoint<T> =
            serde_json::from_str(&text).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        let vocab = ck.vocab.take();
        Ok((Self::from_checkpoint(ck)?, vocab))
    }

    /// Same model in another precision.
    pub fn cast<U: Scalar>(&self) -> DualModel<U> {
        let mut model = DualModel::<U>::new(self.config.clone()).expect("config already validated");
        for id in self.params.ids() {
            *model.params.get_mut(id) = self.params.get(id).cast();
        }
        model
    }
}

fn duplicate_error(e: &ModelError) -> ModelError {
    match e {
        ModelError::Autodiff(a) => ModelError::Autodiff(a.clone()),
        ModelError::TooLong { len, max } => ModelError::TooLong { len: *len, max: *max },
        ModelError::EmptyInput => ModelError::EmptyInput,
        other => ModelError::Checkpoint(other.to_string()),
    }
}
