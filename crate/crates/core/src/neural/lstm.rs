use crate::error::Result;
use crate::rng::RngStream;

use super::{check_len, sigmoid, xavier, Activation, DenseLayer, DenseTrace, Grads, Loss, Parameters};

/// LSTM cell with the four gate blocks stacked in the order input, forget,
/// candidate, output. Weights are `4H x (D + H)` row-major acting on `[x; h]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    input: usize,
    hidden: usize,
}

/// Gate activations of one step, kept for backpropagation through time.
#[derive(Debug, Clone)]
pub struct LstmStepCache {
    concat: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
}

impl LstmCell {
    /// Xavier-uniform gate weights, zero bias except a forget-gate bias of 1.
    pub fn new(input: usize, hidden: usize, rng: &mut RngStream) -> Self {
        let cols = input + hidden;
        let mut weights = Vec::with_capacity(4 * hidden * cols);
        for _ in 0..4 {
            weights.extend(xavier(rng, cols, hidden, hidden * cols));
        }
        let mut bias = vec![0.0; 4 * hidden];
        bias[hidden..2 * hidden].iter_mut().for_each(|b| *b = 1.0);
        Self { weights, bias, input, hidden }
    }

    pub fn from_parts(input: usize, hidden: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        check_len(4 * hidden * (input + hidden), weights.len())?;
        check_len(4 * hidden, bias.len())?;
        Ok(Self { weights, bias, input, hidden })
    }

    pub fn input_size(&self) -> usize {
        self.input
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden
    }

    fn gates(&self, concat: &[f64]) -> Vec<f64> {
        let cols = self.input + self.hidden;
        self.weights
            .chunks_exact(cols)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(concat).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }

    fn step_cached(&self, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, LstmStepCache) {
        let hs = self.hidden;
        let mut concat = Vec::with_capacity(self.input + hs);
        concat.extend_from_slice(x);
        concat.extend_from_slice(h);
        let z = self.gates(&concat);
        let i: Vec<f64> = z[..hs].iter().map(|&v| sigmoid(v)).collect();
        let f: Vec<f64> = z[hs..2 * hs].iter().map(|&v| sigmoid(v)).collect();
        let g: Vec<f64> = z[2 * hs..3 * hs].iter().map(|&v| v.tanh()).collect();
        let o: Vec<f64> = z[3 * hs..].iter().map(|&v| sigmoid(v)).collect();
        let c_new: Vec<f64> = (0..hs).map(|k| f[k] * c[k] + i[k] * g[k]).collect();
        let tanh_c: Vec<f64> = c_new.iter().map(|v| v.tanh()).collect();
        let h_new = (0..hs).map(|k| o[k] * tanh_c[k]).collect();
        (h_new, LstmStepCache { concat, c_prev: c.to_vec(), i, f, g, o, c: c_new, tanh_c })
    }

    /// One step: returns `(h', c')`.
    pub fn step(&self, x: &[f64], h: &[f64], c: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_len(self.input, x.len())?;
        check_len(self.hidden, h.len())?;
        check_len(self.hidden, c.len())?;
        let (h_new, cache) = self.step_cached(x, h, c);
        Ok((h_new, cache.c))
    }

    /// Backward through one step. Accumulates into `(gw, gb)` and returns
    /// `(dL/dx, dL/dh_prev, dL/dc_prev)`.
    fn step_backward(
        &self,
        cache: &LstmStepCache,
        dh: &[f64],
        dc_next: &[f64],
        gw: &mut [f64],
        gb: &mut [f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let hs = self.hidden;
        let cols = self.input + hs;
        let mut dz = vec![0.0; 4 * hs];
        let mut dc_prev = vec![0.0; hs];
        for k in 0..hs {
            let dc = dc_next[k] + dh[k] * cache.o[k] * (1.0 - cache.tanh_c[k] * cache.tanh_c[k]);
            let d_o = dh[k] * cache.tanh_c[k];
            let d_i = dc * cache.g[k];
            let d_g = dc * cache.i[k];
            let d_f = dc * cache.c_prev[k];
            dc_prev[k] = dc * cache.f[k];
            dz[k] = d_i * cache.i[k] * (1.0 - cache.i[k]);
            dz[hs + k] = d_f * cache.f[k] * (1.0 - cache.f[k]);
            dz[2 * hs + k] = d_g * (1.0 - cache.g[k] * cache.g[k]);
            dz[3 * hs + k] = d_o * cache.o[k] * (1.0 - cache.o[k]);
        }
        let mut dconcat = vec![0.0; cols];
        for (row_idx, &d) in dz.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            gb[row_idx] += d;
            let row = &self.weights[row_idx * cols..(row_idx + 1) * cols];
            let grow = &mut gw[row_idx * cols..(row_idx + 1) * cols];
            for j in 0..cols {
                grow[j] += d * cache.concat[j];
                dconcat[j] += d * row[j];
            }
        }
        let dh_prev = dconcat.split_off(self.input);
        (dconcat, dh_prev, dc_prev)
    }
}

impl Parameters for LstmCell {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![&self.weights, &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.weights, &mut self.bias]
    }
}

/// An LSTM run over a fixed window from a zero state, followed by a linear
/// head on the last hidden state.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmRegressor {
    pub cell: LstmCell,
    pub head: DenseLayer,
}

#[derive(Debug, Clone)]
pub struct SequenceTrace {
    steps: Vec<LstmStepCache>,
    head: DenseTrace,
}

impl SequenceTrace {
    pub fn output(&self) -> &[f64] {
        &self.head.output
    }
}

impl LstmRegressor {
    pub fn new(input: usize, hidden: usize, outputs: usize, rng: &mut RngStream) -> Self {
        let cell = LstmCell::new(input, hidden, rng);
        let head = DenseLayer::new(hidden, outputs, Activation::Identity, rng);
        Self { cell, head }
    }

    pub fn forward_trace(&self, window: &[Vec<f64>]) -> Result<SequenceTrace> {
        let hs = self.cell.hidden_size();
        let mut h = vec![0.0; hs];
        let mut c = vec![0.0; hs];
        let mut steps = Vec::with_capacity(window.len());
        for x in window {
            check_len(self.cell.input_size(), x.len())?;
            let (h_new, cache) = self.cell.step_cached(x, &h, &c);
            c = cache.c.clone();
            h = h_new;
            steps.push(cache);
        }
        let head = self.head.forward_trace(&h)?;
        Ok(SequenceTrace { steps, head })
    }

    pub fn forward(&self, window: &[Vec<f64>]) -> Result<Vec<f64>> {
        Ok(self.forward_trace(window)?.head.output)
    }

    /// Backpropagation through the whole window.
    pub fn backward(&self, trace: &SequenceTrace, grad_out: &[f64], grads: &mut Grads) {
        let (cell_grads, head_grads) = grads.0.split_at_mut(2);
        let (hw, hb) = head_grads.split_at_mut(1);
        let mut dh = self.head.backward(&trace.head, grad_out, &mut hw[0], &mut hb[0]);
        let mut dc = vec![0.0; self.cell.hidden_size()];
        let (cw, cb) = cell_grads.split_at_mut(1);
        for cache in trace.steps.iter().rev() {
            let (_, dh_prev, dc_prev) = self.cell.step_backward(cache, &dh, &dc, &mut cw[0], &mut cb[0]);
            dh = dh_prev;
            dc = dc_prev;
        }
    }

    pub fn loss_and_grads(&self, batch: &[(Vec<Vec<f64>>, Vec<f64>)], loss: Loss) -> Result<(f64, Grads)> {
        let mut grads = self.zero_grads();
        let mut total = 0.0;
        let n = batch.len().max(1) as f64;
        for (window, target) in batch {
            let trace = self.forward_trace(window)?;
            let y = trace.output();
            check_len(y.len(), target.len())?;
            let dy: Vec<f64> = y
                .iter()
                .zip(target)
                .map(|(&p, &t)| {
                    total += loss.value(p, t);
                    loss.gradient(p, t) / n
                })
                .collect();
            self.backward(&trace, &dy, &mut grads);
        }
        Ok((total / n, grads))
    }
}

impl Parameters for LstmRegressor {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![&self.cell.weights, &self.cell.bias, &self.head.weights, &self.head.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.cell.weights, &mut self.cell.bias, &mut self.head.weights, &mut self.head.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_cell_outputs_zero() {
        let cell = LstmCell::from_parts(2, 3, vec![0.0; 4 * 3 * 5], vec![0.0; 12]).unwrap();
        let (h, c) = cell.step(&[0.0, 0.0], &[0.0; 3], &[0.0; 3]).unwrap();
        assert_eq!(h, vec![0.0; 3]);
        assert_eq!(c, vec![0.0; 3]);
    }

    #[test]
    fn saturated_forget_gate_keeps_memory() {
        // One unit, one input. Input weight 1 on the input gate and candidate.
        // Row layout: [w_x, w_h] for gates i, f, g, o.
        let weights = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        let bias = vec![0.0, 50.0, 0.0, 0.0];
        let cell = LstmCell::from_parts(1, 1, weights, bias).unwrap();
        let x = 0.7;
        let (_, c) = cell.step(&[x], &[0.2], &[1.5]).unwrap();
        let input_contrib = sigmoid(x) * x.tanh();
        assert!((c[0] - (1.5 + input_contrib)).abs() < 1e-12);
    }

    #[test]
    fn hand_evaluated_single_unit() {
        let weights = vec![0.5, -0.3, 0.8, 0.1, -0.6, 0.4, 0.2, 0.9];
        let bias = vec![0.1, 0.2, -0.1, 0.05];
        let cell = LstmCell::from_parts(1, 1, weights, bias).unwrap();
        let (x, h, c) = (0.3f64, -0.2f64, 0.4f64);
        let s = |v: f64| 1.0 / (1.0 + (-v).exp());
        let i = s(0.5 * x - 0.3 * h + 0.1);
        let f = s(0.8 * x + 0.1 * h + 0.2);
        let g = (-0.6 * x + 0.4 * h - 0.1).tanh();
        let o = s(0.2 * x + 0.9 * h + 0.05);
        let c2 = f * c + i * g;
        let h2 = o * c2.tanh();
        let (hh, cc) = cell.step(&[x], &[h], &[c]).unwrap();
        assert!((hh[0] - h2).abs() < 1e-12);
        assert!((cc[0] - c2).abs() < 1e-12);
    }

    #[test]
    fn hidden_state_bounded() {
        let mut rng = RngStream::new(9, 0);
        let cell = LstmCell::new(3, 4, &mut rng);
        let mut h = vec![0.0; 4];
        let mut c = vec![0.0; 4];
        for t in 0..50 {
            let x = vec![t as f64, -2.0 * t as f64, 5.0];
            let (h2, c2) = cell.step(&x, &h, &c).unwrap();
            assert!(h2.iter().all(|v| v.abs() <= 1.0 && v.is_finite()));
            h = h2;
            c = c2;
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut rng = RngStream::new(9, 1);
        let cell = LstmCell::new(3, 4, &mut rng);
        assert!(cell.step(&[1.0], &[0.0; 4], &[0.0; 4]).is_err());
    }
}
