//! Layer kernels with hand-written backward passes.
//!
//! Every layer works on a whole minibatch stored row-major. Backward functions
//! accumulate parameter gradients into caller-provided buffers and return the
//! gradient with respect to the layer input.

use rand::Rng;

use super::tensor::{gemm, matmul, matmul_a_bt, matmul_at_b, sigmoid, tanh, View};

/// Single-input-channel 1-D convolution with zero "same" padding.
/// Input `[batch, length]`, output `[batch, length, filters]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv1d {
    pub length: usize,
    pub filters: usize,
    pub kernel: usize,
}

impl Conv1d {
    fn pad(&self) -> usize {
        self.kernel / 2
    }

    pub fn forward(&self, weight: &[f64], bias: &[f64], x: &[f64], batch: usize) -> Vec<f64> {
        let (len, nf, nk, pad) = (self.length, self.filters, self.kernel, self.pad());
        let mut y = vec![0.0; batch * len * nf];
        for b in 0..batch {
            let xb = &x[b * len..(b + 1) * len];
            for t in 0..len {
                let out = &mut y[(b * len + t) * nf..(b * len + t + 1) * nf];
                out.copy_from_slice(bias);
                for k in 0..nk {
                    let s = t + k;
                    if s < pad || s - pad >= len {
                        continue;
                    }
                    let xv = xb[s - pad];
                    for (f, o) in out.iter_mut().enumerate() {
                        *o += weight[f * nk + k] * xv;
                    }
                }
            }
        }
        y
    }

    pub fn backward(
        &self,
        weight: &[f64],
        x: &[f64],
        dy: &[f64],
        batch: usize,
        dweight: &mut [f64],
        dbias: &mut [f64],
    ) -> Vec<f64> {
        let (len, nf, nk, pad) = (self.length, self.filters, self.kernel, self.pad());
        let mut dx = vec![0.0; batch * len];
        for b in 0..batch {
            for t in 0..len {
                let g = &dy[(b * len + t) * nf..(b * len + t + 1) * nf];
                for (db, gv) in dbias.iter_mut().zip(g) {
                    *db += gv;
                }
                for k in 0..nk {
                    let s = t + k;
                    if s < pad || s - pad >= len {
                        continue;
                    }
                    let xi = b * len + s - pad;
                    let xv = x[xi];
                    let mut acc = 0.0;
                    for (f, &gv) in g.iter().enumerate() {
                        dweight[f * nk + k] += gv * xv;
                        acc += gv * weight[f * nk + k];
                    }
                    dx[xi] += acc;
                }
            }
        }
        dx
    }
}

/// Per-row normalization to zero mean and unit variance, then a learnable affine.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LayerNorm {
    pub width: usize,
    pub eps: f64,
}

#[derive(Clone, Debug, Default)]
pub struct NormCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(width: usize) -> Self {
        LayerNorm { width, eps: 1e-5 }
    }

    pub fn forward(&self, gain: &[f64], bias: &[f64], x: &[f64]) -> (Vec<f64>, NormCache) {
        let w = self.width;
        let rows = x.len() / w;
        let mut y = vec![0.0; x.len()];
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = &x[r * w..(r + 1) * w];
            let mean = row.iter().sum::<f64>() / w as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / w as f64;
            let inv = 1.0 / (var + self.eps).sqrt();
            inv_std[r] = inv;
            for j in 0..w {
                let h = (row[j] - mean) * inv;
                xhat[r * w + j] = h;
                y[r * w + j] = gain[j] * h + bias[j];
            }
        }
        (y, NormCache { xhat, inv_std })
    }

    pub fn backward(
        &self,
        gain: &[f64],
        cache: &NormCache,
        dy: &[f64],
        dgain: &mut [f64],
        dbias: &mut [f64],
    ) -> Vec<f64> {
        let w = self.width;
        let n = w as f64;
        let mut dx = vec![0.0; dy.len()];
        let mut dxhat = vec![0.0; w];
        for (r, &inv) in cache.inv_std.iter().enumerate() {
            let g = &dy[r * w..(r + 1) * w];
            let h = &cache.xhat[r * w..(r + 1) * w];
            let mut sum = 0.0;
            let mut sum_h = 0.0;
            for j in 0..w {
                dgain[j] += g[j] * h[j];
                dbias[j] += g[j];
                dxhat[j] = g[j] * gain[j];
                sum += dxhat[j];
                sum_h += dxhat[j] * h[j];
            }
            for j in 0..w {
                dx[r * w + j] = inv * (dxhat[j] - sum / n - h[j] * sum_h / n);
            }
        }
        dx
    }
}

/// LSTM over a fixed-length sequence, returning the last hidden state.
///
/// Input `[batch, steps, input]`. Gate columns are ordered input, forget, cell, output.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Lstm {
    pub input: usize,
    pub hidden: usize,
    pub steps: usize,
}

#[derive(Clone, Debug, Default)]
pub struct LstmCache {
    /// Activated gates `[batch, steps, 4 * hidden]`.
    pub gates: Vec<f64>,
    pub cells: Vec<f64>,
    pub tanh_cells: Vec<f64>,
    pub hiddens: Vec<f64>,
}

impl Lstm {
    pub fn forward(
        &self,
        w_input: &[f64],
        w_hidden: &[f64],
        bias: &[f64],
        x: &[f64],
        batch: usize,
    ) -> (Vec<f64>, LstmCache) {
        let (steps, nin, nh) = (self.steps, self.input, self.hidden);
        let ng = 4 * nh;
        let mut gates = vec![0.0; batch * steps * ng];
        matmul(x, w_input, &mut gates, batch * steps, nin, ng, false);
        let mut cells = vec![0.0; batch * steps * nh];
        let mut tanh_cells = vec![0.0; batch * steps * nh];
        let mut hiddens = vec![0.0; batch * steps * nh];
        let gate_step = View::row_major(batch, ng).with_row_stride(steps * ng);
        let hidden_step = View::row_major(batch, nh).with_row_stride(steps * nh);
        for t in 0..steps {
            if t > 0 {
                gemm(
                    1.0,
                    &hiddens,
                    hidden_step.at((t - 1) * nh),
                    w_hidden,
                    View::row_major(nh, ng),
                    1.0,
                    &mut gates,
                    gate_step.at(t * ng),
                );
            }
            for b in 0..batch {
                let zo = (b * steps + t) * ng;
                let ho = (b * steps + t) * nh;
                for u in 0..nh {
                    let i = sigmoid(gates[zo + u] + bias[u]);
                    let f = sigmoid(gates[zo + nh + u] + bias[nh + u]);
                    let g = tanh(gates[zo + 2 * nh + u] + bias[2 * nh + u]);
                    let o = sigmoid(gates[zo + 3 * nh + u] + bias[3 * nh + u]);
                    gates[zo + u] = i;
                    gates[zo + nh + u] = f;
                    gates[zo + 2 * nh + u] = g;
                    gates[zo + 3 * nh + u] = o;
                    let c_prev = if t > 0 { cells[ho - nh + u] } else { 0.0 };
                    let c = f * c_prev + i * g;
                    let tc = tanh(c);
                    cells[ho + u] = c;
                    tanh_cells[ho + u] = tc;
                    hiddens[ho + u] = o * tc;
                }
            }
        }
        let mut last = vec![0.0; batch * nh];
        for b in 0..batch {
            let ho = (b * steps + steps - 1) * nh;
            last[b * nh..(b + 1) * nh].copy_from_slice(&hiddens[ho..ho + nh]);
        }
        (
            last,
            LstmCache {
                gates,
                cells,
                tanh_cells,
                hiddens,
            },
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        w_input: &[f64],
        w_hidden: &[f64],
        cache: &LstmCache,
        x: &[f64],
        dh_last: &[f64],
        batch: usize,
        dw_input: &mut [f64],
        dw_hidden: &mut [f64],
        dbias: &mut [f64],
    ) -> Vec<f64> {
        let (steps, nin, nh) = (self.steps, self.input, self.hidden);
        let ng = 4 * nh;
        let mut dz = vec![0.0; batch * steps * ng];
        let mut dh = dh_last.to_vec();
        let mut dc = vec![0.0; batch * nh];
        let gate_step = View::row_major(batch, ng).with_row_stride(steps * ng);
        let hidden_step = View::row_major(batch, nh).with_row_stride(steps * nh);
        for t in (0..steps).rev() {
            for b in 0..batch {
                let zo = (b * steps + t) * ng;
                let ho = (b * steps + t) * nh;
                for u in 0..nh {
                    let i = cache.gates[zo + u];
                    let f = cache.gates[zo + nh + u];
                    let g = cache.gates[zo + 2 * nh + u];
                    let o = cache.gates[zo + 3 * nh + u];
                    let tc = cache.tanh_cells[ho + u];
                    let dhv = dh[b * nh + u];
                    let dcv = dc[b * nh + u] + dhv * o * (1.0 - tc * tc);
                    let c_prev = if t > 0 { cache.cells[ho - nh + u] } else { 0.0 };
                    dz[zo + u] = dcv * g * i * (1.0 - i);
                    dz[zo + nh + u] = dcv * c_prev * f * (1.0 - f);
                    dz[zo + 2 * nh + u] = dcv * i * (1.0 - g * g);
                    dz[zo + 3 * nh + u] = dhv * tc * o * (1.0 - o);
                    dc[b * nh + u] = dcv * f;
                }
            }
            if t > 0 {
                gemm(
                    1.0,
                    &dz,
                    gate_step.at(t * ng),
                    w_hidden,
                    View::row_major(nh, ng).t(),
                    0.0,
                    &mut dh,
                    View::row_major(batch, nh),
                );
                gemm(
                    1.0,
                    &cache.hiddens,
                    hidden_step.at((t - 1) * nh).t(),
                    &dz,
                    gate_step.at(t * ng),
                    1.0,
                    dw_hidden,
                    View::row_major(nh, ng),
                );
            }
        }
        matmul_at_b(x, &dz, dw_input, nin, batch * steps, ng, true);
        for row in dz.chunks_exact(ng) {
            for (d, v) in dbias.iter_mut().zip(row) {
                *d += v;
            }
        }
        let mut dx = vec![0.0; batch * steps * nin];
        matmul_a_bt(&dz, w_input, &mut dx, batch * steps, ng, nin, false);
        dx
    }
}

/// Fully connected layer, `y = x W + b` with `W` stored `[input, output]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dense {
    pub input: usize,
    pub output: usize,
}

impl Dense {
    pub fn forward(&self, weight: &[f64], bias: &[f64], x: &[f64], batch: usize) -> Vec<f64> {
        let mut y = vec![0.0; batch * self.output];
        matmul(x, weight, &mut y, batch, self.input, self.output, false);
        for row in y.chunks_exact_mut(self.output) {
            for (v, b) in row.iter_mut().zip(bias) {
                *v += b;
            }
        }
        y
    }

    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        weight: &[f64],
        x: &[f64],
        dy: &[f64],
        batch: usize,
        dweight: &mut [f64],
        dbias: &mut [f64],
    ) -> Vec<f64> {
        matmul_at_b(x, dy, dweight, self.input, batch, self.output, true);
        for row in dy.chunks_exact(self.output) {
            for (d, v) in dbias.iter_mut().zip(row) {
                *d += v;
            }
        }
        let mut dx = vec![0.0; batch * self.input];
        matmul_a_bt(dy, weight, &mut dx, batch, self.output, self.input, false);
        dx
    }
}

/// Inverted-dropout mask: each entry is 0 with probability `p`, else `1 / (1 - p)`.
pub fn dropout_mask<R: Rng + ?Sized>(len: usize, p: f64, rng: &mut R) -> Vec<f64> {
    let keep = 1.0 / (1.0 - p);
    (0..len)
        .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
        .collect()
}

pub fn relu_inplace(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

pub fn tanh_inplace(x: &mut [f64]) {
    for v in x {
        *v = tanh(*v);
    }
}
