//! Small dense/LSTM networks with hand-written backpropagation.
//!
//! Parameters of every model are exposed as an ordered list of flat tensors
//! (weights row-major, then bias, layer by layer). Gradients use the same
//! order, so [`Adam`] and the checkpoint writer work on any model.

mod adam;
mod checkpoint;
mod dense;
mod loss;
mod lstm;

pub use adam::Adam;
pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, LayerRecord, MAGIC};
pub use dense::{DenseLayer, DenseTrace, Mlp, MlpTrace};
pub use loss::Loss;
pub use lstm::{LstmCell, LstmRegressor, LstmStepCache, SequenceTrace};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `y`.
    pub fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }

    fn code(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Activation::Identity),
            1 => Ok(Activation::Relu),
            2 => Ok(Activation::Tanh),
            other => Err(Error::Checkpoint(format!("unknown activation code {other}"))),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Gradients laid out like a model's parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads(pub Vec<Vec<f64>>);

impl Grads {
    pub fn zeros_like(tensors: &[&[f64]]) -> Self {
        Grads(tensors.iter().map(|t| vec![0.0; t.len()]).collect())
    }

    pub fn scale(&mut self, k: f64) {
        for t in &mut self.0 {
            for g in t.iter_mut() {
                *g *= k;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().flatten().fold(0.0f64, |m, g| m.max(g.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().flatten().all(|g| *g == 0.0)
    }
}

/// Anything with trainable parameters.
pub trait Parameters {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn zero_grads(&self) -> Grads {
        Grads::zeros_like(&self.tensors())
    }

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// Copies every parameter from `other`, which must share the architecture.
    fn copy_from(&mut self, other: &Self) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            dst.copy_from_slice(src);
        }
    }
}

pub(crate) fn xavier(rng: &mut RngStream, fan_in: usize, fan_out: usize, len: usize) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..len).map(|_| (2.0 * rng.next_f64() - 1.0) * limit).collect()
}

pub(crate) fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::ShapeMismatch { expected, actual });
    }
    Ok(())
}
