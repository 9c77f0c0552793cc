use std::collections::HashMap;

use rand::Rng;

use super::{NumericsError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
}

/// Named trainable tensors, each with a gradient accumulator of the same shape.
///
/// Iteration follows insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    kinds: Vec<ParamKind>,
    values: Vec<Tensor>,
    grads: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            kinds: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: &str, kind: ParamKind, value: Tensor) -> Result<ParamId, NumericsError> {
        if self.index.contains_key(name) {
            return Err(NumericsError::InvalidArgument(format!("duplicate parameter `{name}`")));
        }
        let id = self.values.len();
        self.names.push(name.to_string());
        self.kinds.push(kind);
        self.grads.push(Tensor::zeros(value.rows(), value.cols()));
        self.values.push(value);
        self.index.insert(name.to_string(), id);
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Result<ParamId, NumericsError> {
        self.index
            .get(name)
            .map(|&i| ParamId(i))
            .ok_or_else(|| NumericsError::UnknownParam(name.to_string()))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn kind(&self, id: ParamId) -> ParamKind {
        self.kinds[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.grads[id.0]
    }

    /// Values and gradients borrowed at once (read values while accumulating gradients).
    pub fn split_mut(&mut self) -> (ParamView<'_>, GradView<'_>) {
        (ParamView(&self.values), GradView(&mut self.grads))
    }

    pub fn num_values(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.fill(0.0);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.grads
            .iter()
            .map(|g| g.data().iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales all gradients so their global L2 norm is at most `max_norm`.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm.is_finite() {
            let scale = max_norm / norm;
            for g in &mut self.grads {
                g.data_mut().iter_mut().for_each(|x| *x *= scale);
            }
        }
        norm
    }

    /// Plain SGD step: `value -= lr * grad`, then gradients are zeroed.
    ///
    /// Leaves the values untouched if any gradient entry is non-finite.
    pub fn sgd_update(&mut self, learning_rate: f64) -> Result<(), NumericsError> {
        for (name, g) in self.names.iter().zip(&self.grads) {
            // A NaN or infinity poisons the sum; the exact check only runs
            // when the fast one trips (a finite sum can still overflow).
            if !lane_sum(g.data()).is_finite() && !g.all_finite() {
                return Err(NumericsError::NonFinite(format!("gradient of `{name}`")));
            }
        }
        for (v, g) in self.values.iter_mut().zip(&mut self.grads) {
            for (vi, gi) in v.data_mut().iter_mut().zip(g.data_mut()) {
                *vi -= learning_rate * *gi;
                *gi = 0.0;
            }
        }
        Ok(())
    }

    /// Glorot-uniform weights (`r = sqrt(6 / (fan_in + fan_out))`, with
    /// `fan_in = cols`, `fan_out = rows`) and zero biases.
    pub fn init_glorot<R: Rng>(&mut self, rng: &mut R) {
        for (v, kind) in self.values.iter_mut().zip(&self.kinds) {
            match kind {
                ParamKind::Bias => v.fill(0.0),
                ParamKind::Weight => {
                    let r = (6.0 / (v.rows() + v.cols()) as f64).sqrt();
                    for x in v.data_mut() {
                        *x = rng.gen_range(-r..=r);
                    }
                }
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(Tensor::all_finite)
    }
}

fn lane_sum(v: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    for c in v.chunks_exact(8) {
        for k in 0..8 {
            acc[k] += c[k];
        }
    }
    acc.iter().sum::<f64>() + v[v.len() / 8 * 8..].iter().sum::<f64>()
}

/// Read-only view of parameter values.
#[derive(Clone, Copy)]
pub struct ParamView<'a>(&'a [Tensor]);

impl<'a> ParamView<'a> {
    pub fn get(&self, id: ParamId) -> &'a [f64] {
        self.0[id.0].data()
    }
}

/// Mutable view of gradient accumulators.
pub struct GradView<'a>(&'a mut [Tensor]);

impl GradView<'_> {
    pub fn get(&mut self, id: ParamId) -> &mut [f64] {
        self.0[id.0].data_mut()
    }

    /// Several distinct gradients at once.
    pub fn disjoint<const N: usize>(&mut self, ids: [ParamId; N]) -> [&mut [f64]; N] {
        self.0
            .get_disjoint_mut(ids.map(|id| id.0))
            .expect("parameter ids are distinct")
            .map(|t| t.data_mut())
    }
}
