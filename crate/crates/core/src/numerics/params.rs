use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Gradients, Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Ordered collection of named trainable tensors.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter; names must be unique. Returns its slot index.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.tensors.push(value);
        self.tensors.len() - 1
    }

    /// Glorot-uniform weight matrix plus zero bias row, registered as
    /// `{prefix}.w` and `{prefix}.b`.
    pub fn insert_linear<R: Rng + ?Sized>(
        &mut self,
        prefix: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Linear {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.gen_range(-limit..limit))
            .collect();
        let w = self.insert(
            format!("{prefix}.w"),
            Tensor::matrix(fan_in, fan_out, data).expect("positive dims"),
        );
        let b = bias.then(|| self.insert(format!("{prefix}.b"), Tensor::zeros(1, fan_out)));
        Linear { weight: w, bias: b }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn get(&self, idx: usize) -> &Tensor {
        &self.tensors[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.tensors[idx]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Places every parameter on the graph as a named leaf.
    pub fn bind(&self, graph: &mut Graph) -> Vec<Var> {
        self.names
            .iter()
            .zip(&self.tensors)
            .map(|(n, t)| graph.leaf(n.clone(), t.clone()))
            .collect()
    }

    /// Gradients for every bound parameter, zero where unreached.
    pub fn collect_grads(&self, grads: &Gradients, vars: &[Var]) -> Vec<Tensor> {
        vars.iter()
            .zip(&self.tensors)
            .map(|(&v, t)| grads.get_or_zeros(v, t))
            .collect()
    }

    /// Replaces values from a flat list in registration order.
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_values() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter values, got {}",
                self.num_values(),
                flat.len()
            )));
        }
        let mut offset = 0;
        for t in &mut self.tensors {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }
}

/// Slot indices of an affine layer inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: usize,
    pub bias: Option<usize>,
}

impl Linear {
    /// `x · W (+ b)` using the parameter leaves in `vars`.
    pub fn forward(&self, graph: &mut Graph, vars: &[Var], x: Var) -> Result<Var> {
        let y = graph.matmul(x, vars[self.weight])?;
        match self.bias {
            Some(b) => graph.add_row(y, vars[b]),
            None => Ok(y),
        }
    }

    /// Same map applied outside a graph.
    pub fn apply(&self, params: &ParamSet, x: &Tensor) -> Tensor {
        let mut y = x.matmul(params.get(self.weight));
        if let Some(b) = self.bias {
            let bias = params.get(b).data();
            let c = y.cols();
            for row in y.data_mut().chunks_mut(c) {
                for (v, &bb) in row.iter_mut().zip(bias) {
                    *v += bb;
                }
            }
        }
        y
    }
}
