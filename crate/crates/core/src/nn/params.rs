use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Amsgrad constants.
pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    trainable: bool,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    max_second_moment: Vec<f64>,
}

/// Named trainable tensors with gradients and Amsgrad state.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Panics on duplicate names.
    pub fn add(&mut self, name: &str, value: Tensor) -> ParamId {
        assert!(
            !self.index.contains_key(name),
            "parameter `{name}` registered twice"
        );
        let n = value.len();
        let grad = Tensor::zeros(value.rows, value.cols);
        self.index.insert(name.to_string(), self.params.len());
        self.params.push(Param {
            name: name.to_string(),
            value,
            grad,
            trainable: true,
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
            max_second_moment: vec![0.0; n],
        });
        ParamId(self.params.len() - 1)
    }

    /// Uniform in `±1/sqrt(fan_in)` where `fan_in = cols`.
    pub fn add_uniform<R: Rng>(&mut self, name: &str, rows: usize, cols: usize, rng: &mut R) -> ParamId {
        let bound = 1.0 / (cols.max(1) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
        self.add(name, Tensor::new(rows, cols, data))
    }

    pub fn add_normal<R: Rng>(&mut self, name: &str, rows: usize, cols: usize, rng: &mut R) -> ParamId {
        let data = (0..rows * cols)
            .map(|_| StandardNormal.sample(rng))
            .collect();
        self.add(name, Tensor::new(rows, cols, data))
    }

    pub fn add_zeros(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        self.add(name, Tensor::zeros(rows, cols))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    /// Frozen parameters keep their values and optimizer state through
    /// [`ParamStore::optimizer_step`].
    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.params[id.0].trainable = trainable;
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.params[id.0].trainable
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    /// Number of optimizer steps taken.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, g: &[f64]) {
        let grad = &mut self.params[id.0].grad.data;
        grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for p in &mut self.params {
            p.grad.data.iter_mut().for_each(|g| *g *= factor);
        }
    }

    /// 2-norm over the gradients of trainable parameters.
    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .flat_map(|p| p.grad.data.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Clips the global gradient 2-norm to `max_grad_norm`, applies one
    /// Amsgrad update and zeroes the gradients. Returns the norm before
    /// clipping.
    pub fn optimizer_step(&mut self, lr: f64, max_grad_norm: f64) -> Result<f64> {
        for p in &mut self.params {
            if !p.trainable {
                p.grad.data.iter_mut().for_each(|g| *g = 0.0);
            }
        }
        for p in &self.params {
            if !p.grad.is_finite() {
                return Err(Error::NonFiniteGrad(p.name.clone()));
            }
        }
        let norm = self.grad_norm();
        if norm > max_grad_norm {
            self.scale_grads(max_grad_norm / norm);
        }
        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - BETA1.powi(t);
        let bias2_sqrt = (1.0 - BETA2.powi(t)).sqrt();
        for p in self.params.iter_mut().filter(|p| p.trainable) {
            for j in 0..p.value.data.len() {
                let g = p.grad.data[j];
                let m = BETA1 * p.first_moment[j] + (1.0 - BETA1) * g;
                let v = BETA2 * p.second_moment[j] + (1.0 - BETA2) * g * g;
                let vmax = p.max_second_moment[j].max(v);
                p.first_moment[j] = m;
                p.second_moment[j] = v;
                p.max_second_moment[j] = vmax;
                let denom = vmax.sqrt() / bias2_sqrt + EPSILON;
                p.value.data[j] -= lr / bias1 * m / denom;
            }
            p.grad.data.iter_mut().for_each(|g| *g = 0.0);
        }
        Ok(norm)
    }
}
