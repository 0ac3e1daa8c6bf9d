//! Layers with hand-written backward passes, and the two regression models.
//!
//! Every layer caches what its backward pass needs during `forward`;
//! calling `backward` first is an error. Gradients accumulate into
//! [`Parameter::grad`] until [`Model::zero_grad`].

mod batchnorm;
mod checkpoint;
mod cnn;
mod conv;
mod gnn;
pub mod gradcheck;
mod linear;
mod pool;
mod sage;

pub use batchnorm::BatchNorm1d;
pub use checkpoint::{load_checkpoint, save_checkpoint, Architecture, CheckpointMeta};
pub use cnn::{CnnConfig, CnnModel};
pub use conv::Conv2d;
pub use gnn::{GnnConfig, GnnModel};
pub use linear::{Linear, Mlp, Relu};
pub use pool::GlobalMaxPool;
pub use sage::{aggregate_mean, Activation, SageLayer};

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub value: Array2<f64>,
    pub grad: Array2<f64>,
}

impl Parameter {
    pub fn new(value: Array2<f64>) -> Self {
        let grad = Array2::zeros(value.raw_dim());
        Parameter { value, grad }
    }

    /// Entries drawn from U(-bound, bound).
    pub fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut impl Rng) -> Self {
        Self::new(Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..=bound)))
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// A trainable network mapping a batch to B×2 predictions.
pub trait Model {
    type Input: ?Sized;

    fn forward(&mut self, input: &Self::Input) -> Result<Array2<f64>>;

    /// Backpropagate `dL/d(output)` from the last `forward`.
    fn backward(&mut self, grad_out: &Array2<f64>) -> Result<()>;

    fn set_training(&mut self, training: bool);

    /// Parameters in declaration order.
    fn params(&self) -> Vec<&Parameter>;

    fn params_mut(&mut self) -> Vec<&mut Parameter>;

    /// Non-trainable state (batch-norm running statistics).
    fn buffers(&self) -> Vec<&Array1<f64>>;

    fn buffers_mut(&mut self) -> Vec<&mut Array1<f64>>;

    fn architecture(&self) -> Architecture;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    /// Parameters then buffers, flattened row-major.
    fn state(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for p in self.params() {
            out.extend(p.value.iter());
        }
        for b in self.buffers() {
            out.extend(b.iter());
        }
        out
    }

    fn load_state(&mut self, state: &[f64]) -> Result<()> {
        let want = self.num_params() + self.buffers().iter().map(|b| b.len()).sum::<usize>();
        if state.len() != want {
            return Err(Error::Format(format!("state has {} values, model needs {want}", state.len())));
        }
        let mut it = state.iter();
        for p in self.params_mut() {
            p.value.iter_mut().for_each(|v| *v = *it.next().unwrap());
        }
        for b in self.buffers_mut() {
            b.iter_mut().for_each(|v| *v = *it.next().unwrap());
        }
        Ok(())
    }
}

fn shape_err(layer: &'static str, expected: impl Into<String>, got: impl Into<String>) -> Error {
    Error::ShapeMismatch {
        layer,
        expected: expected.into(),
        got: got.into(),
    }
}
