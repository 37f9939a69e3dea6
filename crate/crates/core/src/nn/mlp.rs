//! Plain multilayer perceptron baseline: dense layers with ReLU between them.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::cvposnet::pattern_hash;
use super::layers::{relu_inplace, Dense};
use super::weights::{ModelWeights, ParamBlock};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlpConfig {
    pub n_inputs: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            n_inputs: 16,
            hidden: vec![64, 64],
            output_dim: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub config: MlpConfig,
    layers: Vec<Dense>,
}

pub(crate) struct MlpTrace {
    /// Input to each dense layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Vec<f64>>,
    pub(crate) out: Vec<f64>,
}

impl Mlp {
    pub fn new(config: MlpConfig) -> Result<Self> {
        if config.n_inputs == 0 || config.output_dim == 0 || config.hidden.contains(&0) {
            return Err(Error::Config("mlp layer sizes must be at least 1".into()));
        }
        let mut sizes = vec![config.n_inputs];
        sizes.extend(&config.hidden);
        sizes.push(config.output_dim);
        let layers = sizes
            .windows(2)
            .map(|w| Dense {
                input: w[0],
                output: w[1],
            })
            .collect();
        Ok(Mlp { config, layers })
    }

    pub fn layout(&self) -> Vec<ParamBlock> {
        let n = self.layers.len();
        let mut out = Vec::with_capacity(2 * n);
        for (i, l) in self.layers.iter().enumerate() {
            let name = if i + 1 == n {
                "out".to_string()
            } else {
                format!("dense{}", i + 1)
            };
            out.push(ParamBlock::new(
                &format!("{name}.weight"),
                &[l.input, l.output],
            ));
            out.push(ParamBlock::new(&format!("{name}.bias"), &[l.output]));
        }
        out
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> ModelWeights {
        let mut w = ModelWeights::zeros(self.layout());
        let mut off = 0;
        let vals = w.values_mut();
        for l in &self.layers {
            let a = (6.0 / (l.input + l.output) as f64).sqrt();
            for v in &mut vals[off..off + l.input * l.output] {
                *v = rng.gen_range(-a..a);
            }
            off += l.input * l.output + l.output;
        }
        w
    }

    pub(crate) fn forward_trace(
        &self,
        w: &ModelWeights,
        x: &[f64],
        batch: usize,
    ) -> Result<MlpTrace> {
        w.check_layout(&self.layout())?;
        if x.len() != batch * self.config.n_inputs {
            return Err(Error::LengthMismatch {
                expected: batch * self.config.n_inputs,
                got: x.len(),
            });
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                layer: "input".into(),
            });
        }
        let wv = w.values();
        let mut off = 0;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len() - 1);
        let mut a = x.to_vec();
        for (i, l) in self.layers.iter().enumerate() {
            let nw = l.input * l.output;
            let y = l.forward(
                &wv[off..off + nw],
                &wv[off + nw..off + nw + l.output],
                &a,
                batch,
            );
            off += nw + l.output;
            inputs.push(std::mem::take(&mut a));
            if i + 1 < self.layers.len() {
                pre.push(y.clone());
                a = y;
                relu_inplace(&mut a);
            } else {
                a = y;
            }
        }
        if !a.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                layer: "out".into(),
            });
        }
        Ok(MlpTrace {
            inputs,
            pre,
            out: a,
        })
    }

    pub(crate) fn backward(
        &self,
        w: &ModelWeights,
        t: &MlpTrace,
        dout: &[f64],
        batch: usize,
    ) -> Result<Vec<f64>> {
        let wv = w.values();
        let mut grad = vec![0.0; wv.len()];
        let mut offs = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for l in &self.layers {
            offs.push(off);
            off += l.input * l.output + l.output;
        }
        let mut d = dout.to_vec();
        for i in (0..self.layers.len()).rev() {
            let l = &self.layers[i];
            let nw = l.input * l.output;
            let (gw, gb) = grad[offs[i]..offs[i] + nw + l.output].split_at_mut(nw);
            d = l.backward(&wv[offs[i]..offs[i] + nw], &t.inputs[i], &d, batch, gw, gb);
            if i > 0 {
                for (v, &p) in d.iter_mut().zip(&t.pre[i - 1]) {
                    if p <= 0.0 {
                        *v = 0.0;
                    }
                }
            }
        }
        if !grad.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                layer: "gradient".into(),
            });
        }
        Ok(grad)
    }

    pub(crate) fn activation_pattern(t: &MlpTrace) -> u64 {
        t.pre
            .iter()
            .fold(0u64, |h, p| h.rotate_left(7) ^ pattern_hash(p))
    }
}
