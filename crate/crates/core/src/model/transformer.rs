//! Small pre-norm Transformer. Sequences are processed one example at a
//! time as `[len, d_model]` matrices.

use rand::Rng;

use crate::autodiff::{ParamId, ParamStore, Result, Scalar, Tape, Tensor, Var};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct LayerNormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNormParams {
    fn init<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, d: usize) -> Self {
        LayerNormParams {
            gamma: store.add_ones(format!("{prefix}.gamma"), &[d]),
            beta: store.add_zeros(format!("{prefix}.beta"), &[d]),
        }
    }

    fn apply<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let g = tape.param(self.gamma);
        let b = tape.param(self.beta);
        tape.layer_norm(x, g, b, LN_EPS)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn init<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        input: usize,
        output: usize,
        rng: &mut R,
    ) -> Self {
        let bound = (6.0 / (input + output) as f64).sqrt();
        Linear {
            w: store.add_uniform(format!("{prefix}.w"), &[input, output], bound, rng),
            b: store.add_zeros(format!("{prefix}.b"), &[output]),
        }
    }

    pub fn apply<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let w = tape.param(self.w);
        let b = tape.param(self.b);
        let y = tape.matmul(x, w)?;
        tape.add(y, b)
    }
}

#[derive(Debug, Clone)]
pub struct AttentionParams {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl AttentionParams {
    fn init<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        d: usize,
        heads: usize,
        rng: &mut R,
    ) -> Self {
        AttentionParams {
            q: Linear::init(store, &format!("{prefix}.q"), d, d, rng),
            k: Linear::init(store, &format!("{prefix}.k"), d, d, rng),
            v: Linear::init(store, &format!("{prefix}.v"), d, d, rng),
            o: Linear::init(store, &format!("{prefix}.o"), d, d, rng),
            heads,
        }
    }
}

/// One Transformer layer. Encoder layers have no cross-attention and are
/// not causal; decoder layers have both.
#[derive(Debug, Clone)]
pub struct BlockParams {
    pub ln_self: LayerNormParams,
    pub self_attn: AttentionParams,
    pub cross: Option<(LayerNormParams, AttentionParams)>,
    pub ln_ff: LayerNormParams,
    pub ff_in: Linear,
    pub ff_out: Linear,
    pub causal: bool,
}

impl BlockParams {
    #[allow(clippy::too_many_arguments)]
    pub fn init<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        d: usize,
        heads: usize,
        ff: usize,
        decoder: bool,
        rng: &mut R,
    ) -> Self {
        let ln_self = LayerNormParams::init(store, &format!("{prefix}.ln_self"), d);
        let self_attn = AttentionParams::init(store, &format!("{prefix}.self_attn"), d, heads, rng);
        let cross = decoder.then(|| {
            (
                LayerNormParams::init(store, &format!("{prefix}.ln_cross"), d),
                AttentionParams::init(store, &format!("{prefix}.cross_attn"), d, heads, rng),
            )
        });
        BlockParams {
            ln_self,
            self_attn,
            cross,
            ln_ff: LayerNormParams::init(store, &format!("{prefix}.ln_ff"), d),
            ff_in: Linear::init(store, &format!("{prefix}.ff_in"), d, ff, rng),
            ff_out: Linear::init(store, &format!("{prefix}.ff_out"), ff, d, rng),
            causal: decoder,
        }
    }
}

/// Sinusoidal position table of shape `[len, d]`.
pub fn positional_encoding<T: Scalar>(len: usize, d: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(len * d);
    for pos in 0..len {
        for i in 0..d {
            let k = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * k / d as f64);
            data.push(T::of(if i % 2 == 0 { angle.sin() } else { angle.cos() }));
        }
    }
    Tensor {
        shape: vec![len, d],
        data,
    }
}

/// Multi-head scaled dot-product attention from `x` (`[lq, d]`) over
/// `memory` (`[lk, d]`). Returns the projected output and the per-head
/// attention matrices.
pub fn multi_head_attention<T: Scalar>(
    tape: &mut Tape<'_, T>,
    p: &AttentionParams,
    x: Var,
    memory: Var,
    causal: bool,
) -> Result<(Var, Vec<Var>)> {
    let q = p.q.apply(tape, x)?;
    let k = p.k.apply(tape, memory)?;
    let v = p.v.apply(tape, memory)?;
    let d = tape.value(q).cols();
    let (lq, lk) = (tape.value(q).rows(), tape.value(k).rows());
    let dh = d / p.heads;
    let mask = causal.then(|| {
        let mut m = vec![T::zero(); lq * lk];
        for i in 0..lq {
            for j in (i + 1)..lk {
                m[i * lk + j] = T::of(-1e9);
            }
        }
        tape.constant(Tensor {
            shape: vec![lq, lk],
            data: m,
        })
    });
    let mut outs = Vec::with_capacity(p.heads);
    let mut weights = Vec::with_capacity(p.heads);
    for h in 0..p.heads {
        let qh = tape.slice_cols(q, h * dh, (h + 1) * dh)?;
        let kh = tape.slice_cols(k, h * dh, (h + 1) * dh)?;
        let vh = tape.slice_cols(v, h * dh, (h + 1) * dh)?;
        let s = tape.matmul_t(qh, kh)?;
        let mut s = tape.scale(s, 1.0 / (dh as f64).sqrt());
        if let Some(m) = mask {
            s = tape.add(s, m)?;
        }
        let a = tape.softmax(s);
        outs.push(tape.matmul(a, vh)?);
        weights.push(a);
    }
    let cat = tape.concat(&outs, 1)?;
    Ok((p.o.apply(tape, cat)?, weights))
}

/// Pre-norm block: `x + Attn(LN(x))`, optional `+ Cross(LN(·), memory)`,
/// then `+ FF(LN(·))`.
pub fn transformer_block<T: Scalar>(
    tape: &mut Tape<'_, T>,
    p: &BlockParams,
    x: Var,
    memory: Option<Var>,
) -> Result<Var> {
    let n = p.ln_self.apply(tape, x)?;
    let (a, _) = multi_head_attention(tape, &p.self_attn, n, n, p.causal)?;
    let mut h = tape.add(x, a)?;
    if let (Some((ln, attn)), Some(mem)) = (&p.cross, memory) {
        let n = ln.apply(tape, h)?;
        let (c, _) = multi_head_attention(tape, attn, n, mem, false)?;
        h = tape.add(h, c)?;
    }
    let n = p.ln_ff.apply(tape, h)?;
    let f = p.ff_in.apply(tape, n)?;
    let f = tape.relu(f);
    let f = p.ff_out.apply(tape, f)?;
    tape.add(h, f)
}

#[derive(Debug, Clone)]
pub struct TransformerStack {
    pub layers: Vec<BlockParams>,
    pub ln_final: LayerNormParams,
}

impl TransformerStack {
    #[allow(clippy::too_many_arguments)]
    pub fn init<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        d: usize,
        heads: usize,
        ff: usize,
        layers: usize,
        decoder: bool,
        rng: &mut R,
    ) -> Self {
        let layers = (0..layers)
            .map(|i| BlockParams::init(store, &format!("{prefix}.layer{i}"), d, heads, ff, decoder, rng))
            .collect();
        TransformerStack {
            layers,
            ln_final: LayerNormParams::init(store, &format!("{prefix}.ln_final"), d),
        }
    }

    pub fn ids(&self) -> Vec<ParamId> {
        let mut v = Vec::new();
        let lin = |l: &Linear, v: &mut Vec<ParamId>| v.extend([l.w, l.b]);
        let att = |a: &AttentionParams, v: &mut Vec<ParamId>| {
            for l in [&a.q, &a.k, &a.v, &a.o] {
                lin(l, v);
            }
        };
        for b in &self.layers {
            v.extend([b.ln_self.gamma, b.ln_self.beta]);
            att(&b.self_attn, &mut v);
            if let Some((ln, a)) = &b.cross {
                v.extend([ln.gamma, ln.beta]);
                att(a, &mut v);
            }
            v.extend([b.ln_ff.gamma, b.ln_ff.beta]);
            lin(&b.ff_in, &mut v);
            lin(&b.ff_out, &mut v);
        }
        v.extend([self.ln_final.gamma, self.ln_final.beta]);
        v
    }

    /// Embeds `ids`, adds positions and runs every layer.
    pub fn run<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        embedding: ParamId,
        ids: &[u32],
        memory: Option<Var>,
    ) -> Result<Var> {
        let emb = tape.param(embedding);
        let x = tape.gather(emb, ids)?;
        let d = tape.value(x).cols();
        let pos = tape.constant(positional_encoding(ids.len(), d));
        let mut h = tape.add(x, pos)?;
        for layer in &self.layers {
            h = transformer_block(tape, layer, h, memory)?;
        }
        self.ln_final.apply(tape, h)
    }
}

/// Mean over rows: `[len, d] -> [1, d]`.
pub fn mean_rows<T: Scalar>(tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
    let len = tape.value(x).rows();
    let w = tape.constant(Tensor::full(&[1, len], T::of(1.0 / len as f64)));
    tape.matmul(w, x)
}
