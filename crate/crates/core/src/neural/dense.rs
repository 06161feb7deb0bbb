use crate::error::Result;
use crate::rng::RngStream;

use super::{check_len, xavier, Activation, Grads, Loss, Parameters};

/// Fully connected layer, `y = act(W x + b)` with `W` stored row-major (out x in).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
    in_dim: usize,
    out_dim: usize,
}

/// Values kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct DenseTrace {
    pub input: Vec<f64>,
    pub pre: Vec<f64>,
    pub output: Vec<f64>,
}

impl DenseLayer {
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut RngStream) -> Self {
        Self {
            weights: xavier(rng, in_dim, out_dim, in_dim * out_dim),
            bias: vec![0.0; out_dim],
            activation,
            in_dim,
            out_dim,
        }
    }

    pub fn from_parts(in_dim: usize, out_dim: usize, weights: Vec<f64>, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        check_len(in_dim * out_dim, weights.len())?;
        check_len(out_dim, bias.len())?;
        Ok(Self { weights, bias, activation, in_dim, out_dim })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    fn pre_activation(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.in_dim, x.len())?;
        Ok(self.pre_activation(x).into_iter().map(|z| self.activation.apply(z)).collect())
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<DenseTrace> {
        check_len(self.in_dim, x.len())?;
        let pre = self.pre_activation(x);
        let output = pre.iter().map(|&z| self.activation.apply(z)).collect();
        Ok(DenseTrace { input: x.to_vec(), pre, output })
    }

    /// Accumulates parameter gradients into `(gw, gb)` and returns dL/dx.
    pub fn backward(&self, trace: &DenseTrace, grad_out: &[f64], gw: &mut [f64], gb: &mut [f64]) -> Vec<f64> {
        let mut grad_in = vec![0.0; self.in_dim];
        for o in 0..self.out_dim {
            let dz = grad_out[o] * self.activation.derivative(trace.pre[o], trace.output[o]);
            if dz == 0.0 {
                continue;
            }
            gb[o] += dz;
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let grow = &mut gw[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                grow[i] += dz * trace.input[i];
                grad_in[i] += dz * row[i];
            }
        }
        grad_in
    }
}

impl Parameters for DenseLayer {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![&self.weights, &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.weights, &mut self.bias]
    }
}

/// Stack of dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

#[derive(Debug, Clone)]
pub struct MlpTrace {
    pub layers: Vec<DenseTrace>,
}

impl MlpTrace {
    pub fn output(&self) -> &[f64] {
        &self.layers.last().expect("non-empty network").output
    }
}

impl Mlp {
    /// `sizes = [in, h1, ..., out]`; hidden layers use `hidden`, the last layer `output`.
    pub fn new(sizes: &[usize], hidden: Activation, output: Activation, rng: &mut RngStream) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let act = if k + 2 == sizes.len() { output } else { hidden };
                DenseLayer::new(w[0], w[1], act, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map(|l| l.out_dim()).unwrap_or(0)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut h = x.to_vec();
        for layer in &self.layers {
            h = layer.forward(&h)?;
        }
        Ok(h)
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<MlpTrace> {
        let mut traces: Vec<DenseTrace> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let input = traces.last().map(|t| t.output.as_slice()).unwrap_or(x);
            let t = layer.forward_trace(input)?;
            traces.push(t);
        }
        Ok(MlpTrace { layers: traces })
    }

    /// Backpropagates `grad_out` (dL/dy) through a stored trace, accumulating
    /// into `grads`, and returns dL/dx.
    pub fn backward(&self, trace: &MlpTrace, grad_out: &[f64], grads: &mut Grads) -> Vec<f64> {
        let mut g = grad_out.to_vec();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let (gw, rest) = grads.0[2 * k..].split_at_mut(1);
            g = layer.backward(&trace.layers[k], &g, &mut gw[0], &mut rest[0]);
        }
        g
    }

    /// Mean loss over `batch` and its gradient with respect to every parameter.
    pub fn loss_and_grads(&self, batch: &[(Vec<f64>, Vec<f64>)], loss: Loss) -> Result<(f64, Grads)> {
        let mut grads = self.zero_grads();
        let mut total = 0.0;
        let n = batch.len().max(1) as f64;
        for (x, target) in batch {
            let trace = self.forward_trace(x)?;
            let y = trace.output();
            check_len(y.len(), target.len())?;
            let mut dy = vec![0.0; y.len()];
            for i in 0..y.len() {
                total += loss.value(y[i], target[i]);
                dy[i] = loss.gradient(y[i], target[i]) / n;
            }
            self.backward(&trace, &dy, &mut grads);
        }
        Ok((total / n, grads))
    }
}

impl Parameters for Mlp {
    fn tensors(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| l.tensors()).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(|l| l.tensors_mut()).collect()
    }
}
