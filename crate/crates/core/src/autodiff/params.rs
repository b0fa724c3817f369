use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AutodiffError, Result, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ParamEntry<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<T>,
}

/// Named trainable tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    tensors: Vec<Tensor<T>>,
    names: Vec<String>,
    index: HashMap<String, ParamId>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            tensors: Vec::new(),
            names: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = ParamId(self.tensors.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor);
        id
    }

    /// Uniform init in `[-bound, bound]`, drawn in f64 so both precisions
    /// start from the same values.
    pub fn add_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        bound: f64,
        rng: &mut R,
    ) -> ParamId {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| T::of(rng.gen_range(-bound..=bound)))
            .collect();
        self.add(name, Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn add_ones(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::full(shape, T::one()))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn to_entries(&self) -> Vec<ParamEntry<T>> {
        self.names
            .iter()
            .zip(&self.tensors)
            .map(|(n, t)| ParamEntry {
                name: n.clone(),
                shape: t.shape.clone(),
                values: t.data.clone(),
            })
            .collect()
    }

    /// Overwrites parameters by name; every stored parameter must be present
    /// with a matching shape.
    pub fn load_entries(&mut self, entries: Vec<ParamEntry<T>>) -> Result<()> {
        let mut by_name: HashMap<String, ParamEntry<T>> =
            entries.into_iter().map(|e| (e.name.clone(), e)).collect();
        for (i, name) in self.names.iter().enumerate() {
            let e = by_name
                .remove(name)
                .ok_or_else(|| AutodiffError::UnknownParam(name.clone()))?;
            let t = Tensor::new(e.shape, e.values)?;
            if t.shape != self.tensors[i].shape {
                return Err(AutodiffError::ShapeMismatch {
                    op: "load",
                    left: self.tensors[i].shape.clone(),
                    right: t.shape,
                });
            }
            self.tensors[i] = t;
        }
        if let Some(extra) = by_name.into_keys().next() {
            return Err(AutodiffError::UnknownParam(extra));
        }
        Ok(())
    }
}

/// Gradient buffers, one per parameter, shape-matched to a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub(crate) grads: Vec<Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(params: &ParamStore<T>) -> Self {
        Gradients {
            grads: params
                .tensors
                .iter()
                .map(|t| Tensor::zeros(&t.shape))
                .collect(),
        }
    }

    pub fn zero(&mut self) {
        for g in &mut self.grads {
            g.data.iter_mut().for_each(|x| *x = T::zero());
        }
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.grads[id.0]
    }

    pub(crate) fn add_into(&mut self, id: ParamId, data: &[T]) {
        for (g, &d) in self.grads[id.0].data.iter_mut().zip(data) {
            *g = *g + d;
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flat_map(|g| g.data.iter())
            .map(|x| {
                let v = x.f64();
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: T) {
        for g in &mut self.grads {
            g.data.iter_mut().for_each(|x| *x = *x * factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.grads
            .iter()
            .all(|g| g.data.iter().all(|x| x.is_finite()))
    }
}
