//! Conv -> LSTM -> dense position regressor.
//!
//! The power vector is treated as a length-`n_inputs` sequence (one step per
//! LED). Stack: conv (same padding) -> ReLU -> dropout -> layer norm -> LSTM
//! (last hidden state) -> tanh -> dropout -> layer norm -> dense.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    dropout_mask, relu_inplace, Conv1d, Dense, LayerNorm, Lstm, LstmCache, NormCache,
};
use super::weights::{ModelWeights, ParamBlock};
use crate::error::{Error, Result};
use crate::rng::SimRng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CvposnetConfig {
    pub n_inputs: usize,
    pub conv_filters: usize,
    pub conv_kernel: usize,
    pub dropout_p: f64,
    pub lstm_units: usize,
    pub output_dim: usize,
}

impl Default for CvposnetConfig {
    fn default() -> Self {
        CvposnetConfig {
            n_inputs: 16,
            conv_filters: 16,
            conv_kernel: 15,
            dropout_p: 0.0,
            lstm_units: 16,
            output_dim: 3,
        }
    }
}

impl CvposnetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_inputs == 0
            || self.conv_filters == 0
            || self.lstm_units == 0
            || self.output_dim == 0
        {
            return Err(Error::Config("network sizes must be at least 1".into()));
        }
        if self.conv_kernel.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "network.conv_kernel must be odd, got {}",
                self.conv_kernel
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!(
                "network.dropout_p must be in [0, 1), got {}",
                self.dropout_p
            )));
        }
        Ok(())
    }
}

/// Block order inside [`ModelWeights`].
const BLOCKS: [&str; 11] = [
    "conv.weight",
    "conv.bias",
    "norm1.gain",
    "norm1.bias",
    "lstm.w_input",
    "lstm.w_hidden",
    "lstm.bias",
    "norm2.gain",
    "norm2.bias",
    "head.weight",
    "head.bias",
];

#[derive(Clone, Debug, PartialEq)]
pub struct Cvposnet {
    pub config: CvposnetConfig,
    conv: Conv1d,
    norm1: LayerNorm,
    lstm: Lstm,
    norm2: LayerNorm,
    head: Dense,
    offsets: [usize; 12],
}

pub(crate) struct Trace {
    x: Vec<f64>,
    conv_pre: Vec<f64>,
    mask1: Option<Vec<f64>>,
    norm1: NormCache,
    lstm_in: Vec<f64>,
    lstm: LstmCache,
    tanh_out: Vec<f64>,
    mask2: Option<Vec<f64>>,
    norm2: NormCache,
    head_in: Vec<f64>,
    pub(crate) out: Vec<f64>,
}

fn check_finite(v: &[f64], layer: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            layer: layer.to_string(),
        })
    }
}

impl Cvposnet {
    pub fn new(config: CvposnetConfig) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let conv = Conv1d {
            length: c.n_inputs,
            filters: c.conv_filters,
            kernel: c.conv_kernel,
        };
        let lstm = Lstm {
            input: c.conv_filters,
            hidden: c.lstm_units,
            steps: c.n_inputs,
        };
        let head = Dense {
            input: c.lstm_units,
            output: c.output_dim,
        };
        let mut net = Cvposnet {
            norm1: LayerNorm::new(c.conv_filters),
            norm2: LayerNorm::new(c.lstm_units),
            conv,
            lstm,
            head,
            offsets: [0; 12],
            config,
        };
        let mut off = 0;
        for (i, b) in net.layout().iter().enumerate() {
            net.offsets[i] = off;
            off += b.len();
        }
        net.offsets[11] = off;
        Ok(net)
    }

    pub fn layout(&self) -> Vec<ParamBlock> {
        let c = &self.config;
        let (f, u) = (c.conv_filters, c.lstm_units);
        let shapes: [Vec<usize>; 11] = [
            vec![f, c.conv_kernel],
            vec![f],
            vec![f],
            vec![f],
            vec![f, 4 * u],
            vec![u, 4 * u],
            vec![4 * u],
            vec![u],
            vec![u],
            vec![u, c.output_dim],
            vec![c.output_dim],
        ];
        BLOCKS
            .iter()
            .zip(shapes)
            .map(|(n, s)| ParamBlock::new(n, &s))
            .collect()
    }

    fn block<'a>(&self, w: &'a [f64], i: usize) -> &'a [f64] {
        &w[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Glorot-uniform weights, unit norm gains, zero biases except forget gates at 1.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> ModelWeights {
        let c = &self.config;
        let (f, u, k) = (c.conv_filters, c.lstm_units, c.conv_kernel);
        let mut w = ModelWeights::zeros(self.layout());
        let mut glorot = |name: &str, fan_in: usize, fan_out: usize, w: &mut ModelWeights| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in w.block_mut(name).unwrap() {
                *v = rng.gen_range(-a..a);
            }
        };
        glorot("conv.weight", k, k * f, &mut w);
        glorot("lstm.w_input", f, 4 * u, &mut w);
        glorot("lstm.w_hidden", u, 4 * u, &mut w);
        glorot("head.weight", u, c.output_dim, &mut w);
        w.block_mut("norm1.gain").unwrap().fill(1.0);
        w.block_mut("norm2.gain").unwrap().fill(1.0);
        w.block_mut("lstm.bias").unwrap()[u..2 * u].fill(1.0);
        w
    }

    pub(crate) fn forward_trace(
        &self,
        w: &ModelWeights,
        x: &[f64],
        batch: usize,
        rng: Option<&mut SimRng>,
    ) -> Result<Trace> {
        w.check_layout(&self.layout())?;
        let c = &self.config;
        if x.len() != batch * c.n_inputs {
            return Err(Error::LengthMismatch {
                expected: batch * c.n_inputs,
                got: x.len(),
            });
        }
        check_finite(x, "input")?;
        let wv = w.values();
        let p = |i| self.block(wv, i);

        let conv_pre = self.conv.forward(p(0), p(1), x, batch);
        check_finite(&conv_pre, "conv")?;
        let mut a = conv_pre.clone();
        relu_inplace(&mut a);

        let (mask1, mask2) = match rng {
            Some(rng) if c.dropout_p > 0.0 => {
                let m1 = dropout_mask(a.len(), c.dropout_p, rng);
                let m2 = dropout_mask(batch * c.lstm_units, c.dropout_p, rng);
                (Some(m1), Some(m2))
            }
            _ => (None, None),
        };
        if let Some(m) = &mask1 {
            a.iter_mut().zip(m).for_each(|(v, m)| *v *= m);
        }
        let (lstm_in, norm1) = self.norm1.forward(p(2), p(3), &a);
        let (h_last, lstm) = self.lstm.forward(p(4), p(5), p(6), &lstm_in, batch);
        check_finite(&h_last, "lstm")?;
        let tanh_out: Vec<f64> = h_last.iter().map(|&v| super::tensor::tanh(v)).collect();
        let mut b = tanh_out.clone();
        if let Some(m) = &mask2 {
            b.iter_mut().zip(m).for_each(|(v, m)| *v *= m);
        }
        let (head_in, norm2) = self.norm2.forward(p(7), p(8), &b);
        let out = self.head.forward(p(9), p(10), &head_in, batch);
        check_finite(&out, "head")?;
        Ok(Trace {
            x: x.to_vec(),
            conv_pre,
            mask1,
            norm1,
            lstm_in,
            lstm,
            tanh_out,
            mask2,
            norm2,
            head_in,
            out,
        })
    }

    /// Gradient of the loss given `dout = dL/d(output)`.
    pub(crate) fn backward(
        &self,
        w: &ModelWeights,
        t: &Trace,
        dout: &[f64],
        batch: usize,
    ) -> Result<Vec<f64>> {
        let wv = w.values();
        let mut grad = vec![0.0; wv.len()];
        let o = self.offsets;
        let p = |i| self.block(wv, i);

        let (g_lo, g_hi) = grad.split_at_mut(o[9]);
        let (g_head_w, g_head_b) = g_hi.split_at_mut(o[10] - o[9]);
        let d_head_in = self
            .head
            .backward(p(9), &t.head_in, dout, batch, g_head_w, g_head_b);

        let (g_mid, g_norm2) = g_lo.split_at_mut(o[7]);
        let (g_n2_gain, g_n2_bias) = g_norm2.split_at_mut(o[8] - o[7]);
        let mut d = self
            .norm2
            .backward(p(7), &t.norm2, &d_head_in, g_n2_gain, g_n2_bias);
        if let Some(m) = &t.mask2 {
            d.iter_mut().zip(m).for_each(|(v, m)| *v *= m);
        }
        for (v, &th) in d.iter_mut().zip(&t.tanh_out) {
            *v *= 1.0 - th * th;
        }

        let (g_front, g_lstm) = g_mid.split_at_mut(o[4]);
        let (g_wx, rest) = g_lstm.split_at_mut(o[5] - o[4]);
        let (g_wh, g_lb) = rest.split_at_mut(o[6] - o[5]);
        let d_lstm_in =
            self.lstm
                .backward(p(4), p(5), &t.lstm, &t.lstm_in, &d, batch, g_wx, g_wh, g_lb);

        let (g_conv, g_norm1) = g_front.split_at_mut(o[2]);
        let (g_n1_gain, g_n1_bias) = g_norm1.split_at_mut(o[3] - o[2]);
        let mut d = self
            .norm1
            .backward(p(2), &t.norm1, &d_lstm_in, g_n1_gain, g_n1_bias);
        if let Some(m) = &t.mask1 {
            d.iter_mut().zip(m).for_each(|(v, m)| *v *= m);
        }
        for (v, &pre) in d.iter_mut().zip(&t.conv_pre) {
            if pre <= 0.0 {
                *v = 0.0;
            }
        }
        let (g_cw, g_cb) = g_conv.split_at_mut(o[1]);
        self.conv.backward(p(0), &t.x, &d, batch, g_cw, g_cb);
        check_finite(&grad, "gradient")?;
        Ok(grad)
    }

    /// Hash of the ReLU on/off pattern; used to spot finite-difference kinks.
    pub(crate) fn activation_pattern(t: &Trace) -> u64 {
        pattern_hash(&t.conv_pre)
    }
}

pub(crate) fn pattern_hash(pre: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &v in pre {
        h ^= (v > 0.0) as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
