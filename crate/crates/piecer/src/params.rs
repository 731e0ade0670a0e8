//! Named trainable parameters shared by the optimizer, EMA, checkpointing,
//! and forward passes.
//!
//! A model registers its tensors once into a [`ParamStore`] and keeps the
//! returned [`ParamId`]s. Each forward pass binds the whole store into a
//! fresh [`ComputeGraph`]; after `backward`, [`ParamStore::absorb_grads`]
//! pulls the leaf gradients back (summing over repeated passes, which is how
//! mini-batches accumulate).

use crate::autodiff::{ComputeGraph, NodeId};
use crate::rng::Rng;
use crate::tensor::{contract_error, Tensor, TensorError};

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct ParamId(usize);

impl ParamId {
    /// Index into the store's registration order; used when restoring
    /// checkpoints whose record order mirrors construction order.
    pub fn from_index(index: usize) -> ParamId {
        ParamId(index)
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

/// Graph leaves for one bound forward pass, parallel to the store order.
pub struct BoundParams(Vec<NodeId>);

impl BoundParams {
    pub fn node(&self, id: ParamId) -> NodeId {
        self.0[id.0]
    }

    /// Rebinds from raw graph leaves in store order, for gradient checking.
    pub fn from_nodes(nodes: Vec<NodeId>) -> BoundParams {
        BoundParams(nodes)
    }
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.tensors.push(tensor.with_grad());
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|n| n.as_str()).zip(self.tensors.iter())
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    /// Registers every parameter as a gradient-carrying leaf of `graph`.
    pub fn bind(&self, graph: &mut ComputeGraph) -> BoundParams {
        BoundParams(self.tensors.iter().map(|t| graph.input(t.clone())).collect())
    }

    /// Adds the gradients deposited in `graph` back into the store, summing
    /// with whatever is already accumulated.
    pub fn absorb_grads(&mut self, graph: &ComputeGraph, bound: &BoundParams) {
        for (tensor, node) in self.tensors.iter_mut().zip(&bound.0) {
            if let Some(g) = graph.grad(*node) {
                match tensor.grad() {
                    None => tensor.set_grad(Some(g.to_vec())),
                    Some(prev) => {
                        let sum: Vec<f64> = prev.iter().zip(g).map(|(a, b)| a + b).collect();
                        tensor.set_grad(Some(sum));
                    }
                }
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for t in &mut self.tensors {
            t.clear_grad();
        }
    }

    /// Gives a zero gradient to any parameter that received none, e.g. a
    /// submodule disabled by configuration.
    pub fn fill_missing_grads(&mut self) {
        for t in &mut self.tensors {
            if t.grad().is_none() {
                let len = t.len();
                t.set_grad(Some(vec![0.0; len]));
            }
        }
    }

    /// Scales every accumulated gradient, e.g. by `1/batch`.
    pub fn scale_grads(&mut self, factor: f64) {
        for t in &mut self.tensors {
            if let Some(g) = t.grad() {
                let scaled: Vec<f64> = g.iter().map(|v| v * factor).collect();
                t.set_grad(Some(scaled));
            }
        }
    }

    /// A copy of the store with the same names but different values, used to
    /// evaluate with EMA shadow weights.
    pub fn with_values(&self, values: &[Vec<f64>]) -> Result<ParamStore, TensorError> {
        if values.len() != self.tensors.len() {
            return Err(contract_error("value count does not match parameter count"));
        }
        let mut out = self.clone();
        for (t, v) in out.tensors.iter_mut().zip(values) {
            if v.len() != t.len() {
                return Err(contract_error(format!(
                    "shadow length {} does not match parameter length {}",
                    v.len(),
                    t.len()
                )));
            }
            t.values_mut().copy_from_slice(v);
            t.clear_grad();
        }
        Ok(out)
    }
}

/// Glorot/Xavier uniform initialization for a weight matrix.
pub fn xavier(rng: &mut Rng, rows: usize, cols: usize) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let values = (0..rows * cols).map(|_| rng.uniform_in(-bound, bound)).collect();
    Tensor::matrix(rows, cols, values).expect("xavier init is well formed")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bind_and_absorb_roundtrip() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::row(vec![2.0, 3.0]).unwrap());
        let mut g = ComputeGraph::new();
        let bound = store.bind(&mut g);
        let sq = g.hadamard(bound.node(w), bound.node(w)).unwrap();
        let loss = g.sum_all(sq).unwrap();
        g.backward(loss).unwrap();
        store.absorb_grads(&g, &bound);
        assert_eq!(store.get(w).grad().unwrap(), &[4.0, 6.0]);

        // Accumulation over a second pass.
        let mut g2 = ComputeGraph::new();
        let bound2 = store.bind(&mut g2);
        let sq2 = g2.hadamard(bound2.node(w), bound2.node(w)).unwrap();
        let loss2 = g2.sum_all(sq2).unwrap();
        g2.backward(loss2).unwrap();
        store.absorb_grads(&g2, &bound2);
        assert_eq!(store.get(w).grad().unwrap(), &[8.0, 12.0]);

        store.zero_grads();
        assert!(store.get(w).grad().is_none());
    }

    #[test]
    fn xavier_respects_bound() {
        let mut rng = Rng::new(4);
        let t = xavier(&mut rng, 10, 10);
        let bound = (6.0f64 / 20.0).sqrt();
        assert!(t.values().iter().all(|v| v.abs() <= bound));
    }
}
