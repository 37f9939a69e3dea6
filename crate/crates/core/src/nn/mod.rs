//! Minimal neural-network engine: layers with manual backprop, the CVPosNet
//! and MLP regressors, MSE loss, plain SGD and a finite-difference checker.

pub mod cvposnet;
pub mod gradcheck;
pub mod layers;
pub mod mlp;
pub mod tensor;
pub mod weights;

use serde::{Deserialize, Serialize};

pub use cvposnet::{Cvposnet, CvposnetConfig};
pub use mlp::{Mlp, MlpConfig};
pub use weights::{ModelWeights, ParamBlock};

use crate::error::{Error, Result};
use crate::optics::Vec3;
use crate::rng::{substream, SimRng, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Which network to build.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    Cvposnet(CvposnetConfig),
    Mlp(MlpConfig),
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture::Cvposnet(CvposnetConfig::default())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Network {
    Cvposnet(Cvposnet),
    Mlp(Mlp),
}

impl Network {
    pub fn new(arch: &Architecture) -> Result<Self> {
        Ok(match arch {
            Architecture::Cvposnet(c) => Network::Cvposnet(Cvposnet::new(c.clone())?),
            Architecture::Mlp(c) => Network::Mlp(Mlp::new(c.clone())?),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Network::Cvposnet(_) => "cvposnet",
            Network::Mlp(_) => "mlp",
        }
    }

    pub fn layout(&self) -> Vec<ParamBlock> {
        match self {
            Network::Cvposnet(n) => n.layout(),
            Network::Mlp(n) => n.layout(),
        }
    }

    pub fn n_inputs(&self) -> usize {
        match self {
            Network::Cvposnet(n) => n.config.n_inputs,
            Network::Mlp(n) => n.config.n_inputs,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Network::Cvposnet(n) => n.config.output_dim,
            Network::Mlp(n) => n.config.output_dim,
        }
    }

    /// Initial weights drawn from the `Init` stream of `seed`.
    pub fn init(&self, seed: u64) -> ModelWeights {
        let mut rng = substream(seed, Stream::Init, &[]);
        match self {
            Network::Cvposnet(n) => n.init(&mut rng),
            Network::Mlp(n) => n.init(&mut rng),
        }
    }

    /// Batched forward pass. `inputs` is `[batch, n_inputs]` row-major; the
    /// result is `[batch, output_dim]`. Dropout masks come from `rng` in train mode.
    pub fn forward(
        &self,
        w: &ModelWeights,
        inputs: &[f64],
        batch: usize,
        mode: Mode,
        rng: &mut SimRng,
    ) -> Result<Vec<f64>> {
        match self {
            Network::Cvposnet(n) => {
                let rng = (mode == Mode::Train).then_some(rng);
                Ok(n.forward_trace(w, inputs, batch, rng)?.out)
            }
            Network::Mlp(n) => Ok(n.forward_trace(w, inputs, batch)?.out),
        }
    }

    /// Inference-mode forward pass.
    pub fn predict(&self, w: &ModelWeights, inputs: &[f64], batch: usize) -> Result<Vec<f64>> {
        let mut unused = substream(0, Stream::Dropout, &[]);
        self.forward(w, inputs, batch, Mode::Infer, &mut unused)
    }

    /// Single-sample forward pass returning the scaled coordinate.
    pub fn forward_one(
        &self,
        w: &ModelWeights,
        input: &[f64],
        mode: Mode,
        rng: &mut SimRng,
    ) -> Result<Vec<f64>> {
        self.forward(w, input, 1, mode, rng)
    }

    /// MSE loss over the batch and its exact gradient, in train mode.
    pub fn loss_and_gradient(
        &self,
        w: &ModelWeights,
        inputs: &[f64],
        targets: &[f64],
        batch: usize,
        rng: &mut SimRng,
    ) -> Result<(f64, Vec<f64>)> {
        self.loss_and_gradient_mode(w, inputs, targets, batch, Mode::Train, rng)
    }

    pub fn loss_and_gradient_mode(
        &self,
        w: &ModelWeights,
        inputs: &[f64],
        targets: &[f64],
        batch: usize,
        mode: Mode,
        rng: &mut SimRng,
    ) -> Result<(f64, Vec<f64>)> {
        if batch == 0 {
            return Err(Error::Empty("training batch"));
        }
        let dim = self.output_dim();
        match self {
            Network::Cvposnet(n) => {
                let rng = (mode == Mode::Train).then_some(rng);
                let trace = n.forward_trace(w, inputs, batch, rng)?;
                let loss = mse_loss(&trace.out, targets, dim)?;
                let dout = mse_gradient(&trace.out, targets, batch);
                Ok((loss, n.backward(w, &trace, &dout, batch)?))
            }
            Network::Mlp(n) => {
                let trace = n.forward_trace(w, inputs, batch)?;
                let loss = mse_loss(&trace.out, targets, dim)?;
                let dout = mse_gradient(&trace.out, targets, batch);
                Ok((loss, n.backward(w, &trace, &dout, batch)?))
            }
        }
    }

    /// Loss plus a hash of the ReLU pattern (for finite-difference checks).
    pub(crate) fn loss_with_pattern(
        &self,
        w: &ModelWeights,
        inputs: &[f64],
        targets: &[f64],
        batch: usize,
        mode: Mode,
        rng: &mut SimRng,
    ) -> Result<(f64, u64)> {
        let dim = self.output_dim();
        match self {
            Network::Cvposnet(n) => {
                let rng = (mode == Mode::Train).then_some(rng);
                let t = n.forward_trace(w, inputs, batch, rng)?;
                Ok((
                    mse_loss(&t.out, targets, dim)?,
                    Cvposnet::activation_pattern(&t),
                ))
            }
            Network::Mlp(n) => {
                let t = n.forward_trace(w, inputs, batch)?;
                Ok((mse_loss(&t.out, targets, dim)?, Mlp::activation_pattern(&t)))
            }
        }
    }
}

/// Mean over samples of the squared Euclidean residual; rows of width `dim`.
pub fn mse_loss(predictions: &[f64], targets: &[f64], dim: usize) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::LengthMismatch {
            expected: targets.len(),
            got: predictions.len(),
        });
    }
    if predictions.is_empty() || dim == 0 || !predictions.len().is_multiple_of(dim) {
        return Err(Error::Empty("loss inputs"));
    }
    let n = (predictions.len() / dim) as f64;
    let sum: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sum / n)
}

/// [`mse_loss`] over coordinates.
pub fn mse_loss_points(predictions: &[Vec3], targets: &[Vec3]) -> Result<f64> {
    let flat = |v: &[Vec3]| v.iter().flat_map(|c| c.to_array()).collect::<Vec<_>>();
    mse_loss(&flat(predictions), &flat(targets), 3)
}

fn mse_gradient(predictions: &[f64], targets: &[f64], batch: usize) -> Vec<f64> {
    let scale = 2.0 / batch as f64;
    predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| scale * (p - t))
        .collect()
}

/// `w - lr * g`.
pub fn sgd_step(
    weights: &ModelWeights,
    gradient: &[f64],
    learning_rate: f64,
) -> Result<ModelWeights> {
    let mut w = weights.clone();
    sgd_update(&mut w, gradient, learning_rate)?;
    Ok(w)
}

pub fn sgd_update(weights: &mut ModelWeights, gradient: &[f64], learning_rate: f64) -> Result<()> {
    if gradient.len() != weights.len() {
        return Err(Error::LengthMismatch {
            expected: weights.len(),
            got: gradient.len(),
        });
    }
    if !(learning_rate >= 0.0) || !learning_rate.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "learning rate {learning_rate}"
        )));
    }
    for (w, g) in weights.values_mut().iter_mut().zip(gradient) {
        *w -= learning_rate * g;
    }
    Ok(())
}
