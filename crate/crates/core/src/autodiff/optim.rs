use serde::{Deserialize, Serialize};

use super::{AutodiffError, Gradients, ParamStore, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Optimizer moments and step counter. Serializable so training can resume
/// exactly where it stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct OptimizerState<T> {
    pub kind: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub first_moment: Vec<Vec<T>>,
    pub second_moment: Vec<Vec<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn sgd() -> Self {
        OptimizerState {
            kind: OptimizerKind::Sgd,
            beta1: 0.0,
            beta2: 0.0,
            eps: 0.0,
            step: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    pub fn adam(params: &ParamStore<T>) -> Self {
        let zeros: Vec<Vec<T>> = params
            .ids()
            .map(|id| vec![T::zero(); params.get(id).numel()])
            .collect();
        OptimizerState {
            kind: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    pub fn new(kind: OptimizerKind, params: &ParamStore<T>) -> Self {
        match kind {
            OptimizerKind::Sgd => Self::sgd(),
            OptimizerKind::Adam => Self::adam(params),
        }
    }

    /// Applies one update with learning rate `lr`.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &Gradients<T>, lr: f64) -> Result<()> {
        if grads.len() != params.len() {
            let missing = params
                .ids()
                .nth(grads.len())
                .map(|id| params.name(id).to_string())
                .unwrap_or_default();
            return Err(AutodiffError::MissingGrad(missing));
        }
        for id in params.ids() {
            if grads.get(id).shape != params.get(id).shape {
                return Err(AutodiffError::MissingGrad(params.name(id).to_string()));
            }
        }
        self.step += 1;
        let lr_t = T::of(lr);
        match self.kind {
            OptimizerKind::Sgd => {
                for id in params.ids() {
                    let g = &grads.get(id).data;
                    for (p, &gv) in params.get_mut(id).data.iter_mut().zip(g) {
                        *p = *p - lr_t * gv;
                    }
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
                let one = T::one();
                let t = self.step as i32;
                let bc1 = T::of(1.0 - self.beta1.powi(t));
                let bc2 = T::of(1.0 - self.beta2.powi(t));
                let eps = T::of(self.eps);
                for id in params.ids() {
                    let g = &grads.get(id).data;
                    let m = &mut self.first_moment[id.0];
                    let v = &mut self.second_moment[id.0];
                    let p = &mut params.get_mut(id).data;
                    for i in 0..g.len() {
                        m[i] = b1 * m[i] + (one - b1) * g[i];
                        v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                        let mhat = m[i] / bc1;
                        let vhat = v[i] / bc2;
                        p[i] = p[i] - lr_t * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Rescales gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut Gradients<T>, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(T::of(max_norm / norm));
    }
    norm
}

/// Inverse-square-root schedule with linear warm-up:
/// `factor * d_model^-0.5 * min(step^-0.5, step * warmup^-1.5)`.
pub fn noam_lr(step: u64, d_model: usize, warmup: u64, factor: f64) -> Result<f64> {
    if step == 0 {
        return Err(AutodiffError::InvalidStep);
    }
    let s = step as f64;
    let w = warmup as f64;
    Ok(factor * (d_model as f64).powf(-0.5) * s.powf(-0.5).min(s * w.powf(-1.5)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LrSchedule {
    Constant { lr: f64 },
    Noam { d_model: usize, warmup: u64, factor: f64 },
}

impl LrSchedule {
    /// Learning rate for the optimizer step about to be taken (1-based).
    pub fn lr(&self, step: u64) -> f64 {
        match *self {
            LrSchedule::Constant { lr } => lr,
            LrSchedule::Noam {
                d_model,
                warmup,
                factor,
            } => noam_lr(step.max(1), d_model, warmup, factor).unwrap_or(0.0),
        }
    }
}
