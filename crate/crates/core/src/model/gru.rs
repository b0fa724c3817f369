//! GRU encoder and decoder.

use rand::Rng;

use crate::autodiff::{ParamId, ParamStore, Result, Scalar, Tape, Tensor, Var};
use crate::corpus::PAD_ID;

/// Weights of one GRU cell. Gates are laid out as `[z | r | candidate]`.
#[derive(Debug, Clone)]
pub struct GruCellParams {
    pub w_x: ParamId,
    pub w_hzr: ParamId,
    pub w_hc: ParamId,
    pub bias: ParamId,
    pub hidden: usize,
}

impl GruCellParams {
    pub fn init<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let b = 1.0 / (hidden as f64).sqrt();
        GruCellParams {
            w_x: store.add_uniform(format!("{prefix}.w_x"), &[input, 3 * hidden], b, rng),
            w_hzr: store.add_uniform(format!("{prefix}.w_hzr"), &[hidden, 2 * hidden], b, rng),
            w_hc: store.add_uniform(format!("{prefix}.w_hc"), &[hidden, hidden], b, rng),
            bias: store.add_zeros(format!("{prefix}.bias"), &[3 * hidden]),
            hidden,
        }
    }

    pub fn ids(&self) -> Vec<ParamId> {
        vec![self.w_x, self.w_hzr, self.w_hc, self.bias]
    }
}

/// One GRU step:
/// `z = σ(W_z[x,h])`, `r = σ(W_r[x,h])`, `c = tanh(W_c[x, r⊙h])`,
/// `h' = (1 − z)⊙h + z⊙c`.
pub fn gru_cell<T: Scalar>(tape: &mut Tape<'_, T>, p: &GruCellParams, x: Var, h: Var) -> Result<Var> {
    let hsz = p.hidden;
    let w_x = tape.param(p.w_x);
    let w_hzr = tape.param(p.w_hzr);
    let w_hc = tape.param(p.w_hc);
    let bias = tape.param(p.bias);
    let gx = tape.matmul(x, w_x)?;
    let gx = tape.add(gx, bias)?;
    let hzr = tape.matmul(h, w_hzr)?;
    let gx_zr = tape.slice_cols(gx, 0, 2 * hsz)?;
    let zr = tape.add(gx_zr, hzr)?;
    let zr = tape.sigmoid(zr);
    let z = tape.slice_cols(zr, 0, hsz)?;
    let r = tape.slice_cols(zr, hsz, 2 * hsz)?;
    let rh = tape.mul(r, h)?;
    let hc = tape.matmul(rh, w_hc)?;
    let gx_c = tape.slice_cols(gx, 2 * hsz, 3 * hsz)?;
    let c = tape.add(gx_c, hc)?;
    let c = tape.tanh(c);
    let delta = tape.sub(c, h)?;
    let step = tape.mul(z, delta)?;
    tape.add(h, step)
}

#[derive(Debug, Clone)]
pub struct GruDecoderParams {
    pub cell: GruCellParams,
    pub w_out: ParamId,
    pub b_out: ParamId,
    pub attention: bool,
}

impl GruDecoderParams {
    pub fn ids(&self) -> Vec<ParamId> {
        let mut v = self.cell.ids();
        v.extend([self.w_out, self.b_out]);
        v
    }
}

/// Time-major encoder outputs: `steps[t]` is `[batch, hidden]`.
pub struct GruEncoding {
    pub steps: Vec<Var>,
    pub summary: Var,
}

/// Runs the cell over a padded batch. Rows shorter than the batch carry
/// their last valid state forward.
pub fn encode<T: Scalar>(
    tape: &mut Tape<'_, T>,
    embedding: ParamId,
    cell: &GruCellParams,
    inputs: &[Vec<u32>],
) -> Result<GruEncoding> {
    let b = inputs.len();
    let max_len = inputs.iter().map(Vec::len).max().unwrap_or(0);
    let emb = tape.param(embedding);
    let mut h = tape.constant(Tensor::zeros(&[b, cell.hidden]));
    let mut steps = Vec::with_capacity(max_len);
    for t in 0..max_len {
        let ids: Vec<u32> = inputs.iter().map(|r| r.get(t).copied().unwrap_or(PAD_ID)).collect();
        let x = tape.gather(emb, &ids)?;
        let h_new = gru_cell(tape, cell, x, h)?;
        h = if inputs.iter().all(|r| t < r.len()) {
            h_new
        } else {
            // m·h' + (1 − m)·h selects exactly, so a row's state does not
            // depend on what else is in the batch.
            let keep: Vec<bool> = inputs.iter().map(|r| t < r.len()).collect();
            let col = |on: bool| -> Vec<T> {
                keep.iter().map(|&k| if k == on { T::one() } else { T::zero() }).collect()
            };
            let m = tape.constant(Tensor {
                shape: vec![b, 1],
                data: col(true),
            });
            let not_m = tape.constant(Tensor {
                shape: vec![b, 1],
                data: col(false),
            });
            let fresh = tape.mul_col(h_new, m)?;
            let stale = tape.mul_col(h, not_m)?;
            tape.add(fresh, stale)?
        };
        steps.push(h);
    }
    Ok(GruEncoding { steps, summary: h })
}

/// Dot-product attention of `query` (`[batch, hidden]`) over encoder steps,
/// ignoring positions past each row's length.
pub fn attend<T: Scalar>(
    tape: &mut Tape<'_, T>,
    query: Var,
    steps: &[Var],
    lengths: &[usize],
) -> Result<Var> {
    let mut scores = Vec::with_capacity(steps.len());
    for &s in steps {
        scores.push(tape.row_dot(query, s)?);
    }
    let scores = tape.concat(&scores, 1)?;
    let t = steps.len();
    let mut bias = vec![T::zero(); lengths.len() * t];
    for (i, &len) in lengths.iter().enumerate() {
        for j in len..t {
            bias[i * t + j] = T::of(-1e9);
        }
    }
    let bias = tape.constant(Tensor {
        shape: vec![lengths.len(), t],
        data: bias,
    });
    let scores = tape.add(scores, bias)?;
    let weights = tape.softmax(scores);
    let mut ctx: Option<Var> = None;
    for (j, &s) in steps.iter().enumerate() {
        let w = tape.slice_cols(weights, j, j + 1)?;
        let term = tape.mul_col(s, w)?;
        ctx = Some(match ctx {
            None => term,
            Some(c) => tape.add(c, term)?,
        });
    }
    Ok(ctx.expect("attention over empty encoding"))
}

/// One decoder step: embeds `prev`, conditions on the encoder (summary or
/// attention context) and returns `(logits, new hidden)`.
#[allow(clippy::too_many_arguments)]
pub fn decoder_step<T: Scalar>(
    tape: &mut Tape<'_, T>,
    embedding: ParamId,
    dec: &GruDecoderParams,
    prev: &[u32],
    h: Var,
    enc: &GruEncoding,
    lengths: &[usize],
) -> Result<(Var, Var)> {
    let emb = tape.param(embedding);
    let x = tape.gather(emb, prev)?;
    let ctx = if dec.attention {
        attend(tape, h, &enc.steps, lengths)?
    } else {
        enc.summary
    };
    let inp = tape.concat(&[x, ctx], 1)?;
    let h_new = gru_cell(tape, &dec.cell, inp, h)?;
    let w_out = tape.param(dec.w_out);
    let b_out = tape.param(dec.b_out);
    let logits = tape.matmul(h_new, w_out)?;
    let logits = tape.add(logits, b_out)?;
    Ok((logits, h_new))
}
