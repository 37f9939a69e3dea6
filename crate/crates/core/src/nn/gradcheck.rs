//! Central finite-difference gradient checks for each layer in isolation and
//! for whole networks.
//!
//! Isolated layers are checked through the scalar `L = sum_i r_i * y_i` with a
//! random projection `r`, so every output element contributes. Whole networks
//! are checked through the MSE loss on a small random batch with a fixed dropout
//! mask. Perturbations that flip a ReLU are skipped since the loss is not
//! differentiable there.

use rand::Rng;
use serde::Serialize;

use super::cvposnet::{pattern_hash, CvposnetConfig};
use super::layers::{dropout_mask, Conv1d, Dense, LayerNorm, Lstm};
use super::mlp::MlpConfig;
use super::{Architecture, Mode, ModelWeights, Network};
use crate::rng::{substream, SimRng, Stream};

/// Central-difference step.
pub const EPSILON: f64 = 1e-5;
/// Gradient magnitudes below this are compared in absolute rather than relative terms.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Dense,
    Conv,
    Norm,
    Lstm,
    Relu,
    Tanh,
    Dropout,
    Cvposnet,
    Mlp,
}

impl LayerKind {
    pub const ALL: [LayerKind; 9] = [
        LayerKind::Dense,
        LayerKind::Conv,
        LayerKind::Norm,
        LayerKind::Lstm,
        LayerKind::Relu,
        LayerKind::Tanh,
        LayerKind::Dropout,
        LayerKind::Cvposnet,
        LayerKind::Mlp,
    ];

    pub fn label(self) -> &'static str {
        match self {
            LayerKind::Dense => "dense",
            LayerKind::Conv => "conv1d",
            LayerKind::Norm => "layer_norm",
            LayerKind::Lstm => "lstm",
            LayerKind::Relu => "relu",
            LayerKind::Tanh => "tanh",
            LayerKind::Dropout => "dropout",
            LayerKind::Cvposnet => "cvposnet",
            LayerKind::Mlp => "mlp",
        }
    }
}

/// Result for one parameter block (or the layer input) of one check.
#[derive(Clone, Debug, Serialize)]
pub struct GradCheckEntry {
    pub check: String,
    pub instance: usize,
    pub block: String,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &GradCheckEntry> {
        self.entries.iter().filter(|e| !e.passed)
    }

    /// Largest error among entries of one check label.
    pub fn max_for(&self, check: &str) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.check == check)
            .map(|e| e.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn instances(&self, check: &str) -> usize {
        let mut ids: Vec<usize> = self
            .entries
            .iter()
            .filter(|e| e.check == check)
            .map(|e| e.instance)
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }

    fn extend(&mut self, other: GradCheckReport) {
        self.entries.extend(other.entries);
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
    (analytic - numeric).abs() / scale
}

/// Named contiguous ranges of a flat parameter vector.
type Blocks = Vec<(String, usize, usize)>;

/// Compares `analytic` with central differences of `loss` over `theta`.
/// `loss` returns the scalar and a pattern hash; a pattern change marks a kink.
fn compare(
    check: &str,
    instance: usize,
    theta: &[f64],
    analytic: &[f64],
    blocks: &Blocks,
    tolerance: f64,
    mut loss: impl FnMut(&[f64]) -> (f64, u64),
) -> GradCheckReport {
    let (_, base_pattern) = loss(theta);
    let mut work = theta.to_vec();
    let mut report = GradCheckReport::default();
    for (name, start, end) in blocks {
        let (mut checked, mut skipped, mut worst) = (0, 0, 0.0f64);
        for i in *start..*end {
            let orig = work[i];
            let mut central = |h: f64| {
                work[i] = orig + h;
                let (plus, pp) = loss(&work);
                work[i] = orig - h;
                let (minus, pm) = loss(&work);
                work[i] = orig;
                (
                    (plus - minus) / (2.0 * h),
                    pp == base_pattern && pm == base_pattern,
                )
            };
            let (numeric, same) = central(EPSILON);
            let (coarse, same_coarse) = central(2.0 * EPSILON);
            // A kink inside the stencil, or truncation error the oracle itself
            // cannot resolve at this tolerance: the comparison would be meaningless.
            let truncation = (coarse - numeric).abs() / 3.0;
            if !same
                || !same_coarse
                || truncation > 0.1 * tolerance * numeric.abs().max(RELATIVE_FLOOR)
            {
                skipped += 1;
                continue;
            }
            worst = worst.max(relative_error(analytic[i], numeric));
            checked += 1;
        }
        report.entries.push(GradCheckEntry {
            check: check.to_string(),
            instance,
            block: name.clone(),
            checked,
            skipped,
            max_rel_error: worst,
            tolerance,
            passed: worst < tolerance && checked > 0,
        });
    }
    report
}

fn uniform(rng: &mut SimRng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn blocks(parts: &[(&str, usize)]) -> Blocks {
    let mut off = 0;
    parts
        .iter()
        .map(|(n, len)| {
            let b = (n.to_string(), off, off + len);
            off += len;
            b
        })
        .collect()
}

fn check_dense(rng: &mut SimRng, instance: usize, tol: f64) -> GradCheckReport {
    let (nin, nout, batch) = (
        rng.gen_range(1..7),
        rng.gen_range(1..6),
        rng.gen_range(1..5),
    );
    let layer = Dense {
        input: nin,
        output: nout,
    };
    let theta = uniform(rng, nin * nout + nout + batch * nin, -1.0, 1.0);
    let r = uniform(rng, batch * nout, -1.0, 1.0);
    let split = |t: &[f64]| -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (w, rest) = t.split_at(nin * nout);
        let (b, x) = rest.split_at(nout);
        (w.to_vec(), b.to_vec(), x.to_vec())
    };
    let (w, _, x) = split(&theta);
    let mut grad = vec![0.0; theta.len()];
    let (gw, rest) = grad.split_at_mut(nin * nout);
    let (gb, gx) = rest.split_at_mut(nout);
    let dx = layer.backward(&w, &x, &r, batch, gw, gb);
    gx.copy_from_slice(&dx);
    let bl = blocks(&[
        ("weight", nin * nout),
        ("bias", nout),
        ("input", batch * nin),
    ]);
    compare("dense", instance, &theta, &grad, &bl, tol, |t| {
        let (w, b, x) = split(t);
        (dot(&layer.forward(&w, &b, &x, batch), &r), 0)
    })
}

fn check_conv(rng: &mut SimRng, instance: usize, tol: f64) -> GradCheckReport {
    let length = rng.gen_range(3..10);
    let filters = rng.gen_range(1..5);
    let kernel = [1, 3, 5][rng.gen_range(0..3)];
    let batch = rng.gen_range(1..4);
    let layer = Conv1d {
        length,
        filters,
        kernel,
    };
    let nw = filters * kernel;
    let theta = uniform(rng, nw + filters + batch * length, -1.0, 1.0);
    let r = uniform(rng, batch * length * filters, -1.0, 1.0);
    let split = |t: &[f64]| {
        (
            t[..nw].to_vec(),
            t[nw..nw + filters].to_vec(),
            t[nw + filters..].to_vec(),
        )
    };
    let (w, _, x) = split(&theta);
    let mut grad = vec![0.0; theta.len()];
    let (gw, rest) = grad.split_at_mut(nw);
    let (gb, gx) = rest.split_at_mut(filters);
    let dx = layer.backward(&w, &x, &r, batch, gw, gb);
    gx.copy_from_slice(&dx);
    let bl = blocks(&[("weight", nw), ("bias", filters), ("input", batch * length)]);
    compare("conv1d", instance, &theta, &grad, &bl, tol, |t| {
        let (w, b, x) = split(t);
        (dot(&layer.forward(&w, &b, &x, batch), &r), 0)
    })
}

fn check_norm(rng: &mut SimRng, instance: usize, tol: f64) -> GradCheckReport {
    let width = rng.gen_range(2..9);
    let rows = rng.gen_range(1..5);
    let layer = LayerNorm::new(width);
    let mut theta = uniform(rng, 2 * width, -1.5, 1.5);
    theta.extend(uniform(rng, rows * width, -2.0, 2.0));
    let r = uniform(rng, rows * width, -1.0, 1.0);
    let split = |t: &[f64]| {
        (
            t[..width].to_vec(),
            t[width..2 * width].to_vec(),
            t[2 * width..].to_vec(),
        )
    };
    let (g, b, x) = split(&theta);
    let (_, cache) = layer.forward(&g, &b, &x);
    let mut grad = vec![0.0; theta.len()];
    let (gg, rest) = grad.split_at_mut(width);
    let (gb, gx) = rest.split_at_mut(width);
    let dx = layer.backward(&g, &cache, &r, gg, gb);
    gx.copy_from_slice(&dx);
    let bl = blocks(&[("gain", width), ("bias", width), ("input", rows * width)]);
    compare("layer_norm", instance, &theta, &grad, &bl, tol, |t| {
        let (g, b, x) = split(t);
        (dot(&layer.forward(&g, &b, &x).0, &r), 0)
    })
}

fn check_lstm(rng: &mut SimRng, instance: usize, tol: f64) -> GradCheckReport {
    let input = rng.gen_range(1..5);
    let hidden = rng.gen_range(1..6);
    let steps = rng.gen_range(1..7);
    let batch = rng.gen_range(1..4);
    let layer = Lstm {
        input,
        hidden,
        steps,
    };
    let (nx, nh, nb) = (input * 4 * hidden, hidden * 4 * hidden, 4 * hidden);
    let theta = uniform(rng, nx + nh + nb + batch * steps * input, -0.8, 0.8);
    let r = uniform(rng, batch * hidden, -1.0, 1.0);
    let split = |t: &[f64]| {
        (
            t[..nx].to_vec(),
            t[nx..nx + nh].to_vec(),
            t[nx + nh..nx + nh + nb].to_vec(),
            t[nx + nh + nb..].to_vec(),
        )
    };
    let (wx, wh, b, x) = split(&theta);
    let (_, cache) = layer.forward(&wx, &wh, &b, &x, batch);
    let mut grad = vec![0.0; theta.len()];
    let (gwx, rest) = grad.split_at_mut(nx);
    let (gwh, rest) = rest.split_at_mut(nh);
    let (gb, gx) = rest.split_at_mut(nb);
    let dx = layer.backward(&wx, &wh, &cache, &x, &r, batch, gwx, gwh, gb);
    gx.copy_from_slice(&dx);
    let bl = blocks(&[
        ("w_input", nx),
        ("w_hidden", nh),
        ("bias", nb),
        ("input", batch * steps * input),
    ]);
    compare("lstm", instance, &theta, &grad, &bl, tol, |t| {
        let (wx, wh, b, x) = split(t);
        (dot(&layer.forward(&wx, &wh, &b, &x, batch).0, &r), 0)
    })
}

/// Elementwise activations: derivative against the input only.
fn check_pointwise(
    kind: LayerKind,
    rng: &mut SimRng,
    instance: usize,
    tol: f64,
) -> GradCheckReport {
    let n = rng.gen_range(2..16);
    let x = uniform(rng, n, -3.0, 3.0);
    let r = uniform(rng, n, -1.0, 1.0);
    let mask = dropout_mask(n, 0.3, rng);
    let f = |t: &[f64]| -> (Vec<f64>, u64) {
        match kind {
            LayerKind::Relu => (t.iter().map(|v| v.max(0.0)).collect(), pattern_hash(t)),
            LayerKind::Tanh => (t.iter().map(|&v| super::tensor::tanh(v)).collect(), 0),
            _ => (t.iter().zip(&mask).map(|(v, m)| v * m).collect(), 0),
        }
    };
    let grad: Vec<f64> = x
        .iter()
        .zip(&r)
        .zip(&mask)
        .map(|((&v, &rv), &m)| match kind {
            LayerKind::Relu => {
                if v > 0.0 {
                    rv
                } else {
                    0.0
                }
            }
            LayerKind::Tanh => {
                let t = super::tensor::tanh(v);
                rv * (1.0 - t * t)
            }
            _ => rv * m,
        })
        .collect();
    let bl = blocks(&[("input", n)]);
    compare(kind.label(), instance, &x, &grad, &bl, tol, |t| {
        let (y, p) = f(t);
        (dot(&y, &r), p)
    })
}

/// Whole-network check through the MSE loss with a fixed dropout mask.
pub fn check_network(
    arch: &Architecture,
    weights: &ModelWeights,
    batch: usize,
    seed: u64,
    instance: usize,
    tolerance: f64,
) -> GradCheckReport {
    let label = match arch {
        Architecture::Cvposnet(_) => "cvposnet",
        Architecture::Mlp(_) => "mlp",
    };
    let net = match Network::new(arch) {
        Ok(n) => n,
        Err(e) => {
            return GradCheckReport {
                entries: vec![GradCheckEntry {
                    check: label.into(),
                    instance,
                    block: format!("config: {e}"),
                    checked: 0,
                    skipped: 0,
                    max_rel_error: f64::INFINITY,
                    tolerance,
                    passed: false,
                }],
            }
        }
    };
    let mut rng = substream(seed, Stream::GradCheck, &[instance as u64, 1]);
    let x = uniform(&mut rng, batch * net.n_inputs(), -2.0, 2.0);
    let y = uniform(&mut rng, batch * net.output_dim(), 0.0, 1.0);
    let mask_seed = rng.gen::<u64>();
    let layout = weights.layout().to_vec();
    let eval = |t: &[f64], grad: bool| {
        let w = ModelWeights::from_parts(layout.clone(), t.to_vec()).expect("layout");
        let mut drop = substream(mask_seed, Stream::Dropout, &[]);
        if grad {
            net.loss_and_gradient_mode(&w, &x, &y, batch, Mode::Train, &mut drop)
                .map(|(_, g)| (0.0, 0, g))
        } else {
            net.loss_with_pattern(&w, &x, &y, batch, Mode::Train, &mut drop)
                .map(|(l, p)| (l, p, Vec::new()))
        }
    };
    let theta = weights.values().to_vec();
    let analytic = match eval(&theta, true) {
        Ok((_, _, g)) => g,
        Err(e) => {
            return GradCheckReport {
                entries: vec![GradCheckEntry {
                    check: label.into(),
                    instance,
                    block: format!("forward: {e}"),
                    checked: 0,
                    skipped: 0,
                    max_rel_error: f64::INFINITY,
                    tolerance,
                    passed: false,
                }],
            }
        }
    };
    let offsets = weights.offsets();
    let bl: Blocks = layout
        .iter()
        .zip(&offsets)
        .map(|(b, &o)| (b.name.clone(), o, o + b.len()))
        .collect();
    compare(label, instance, &theta, &analytic, &bl, tolerance, |t| {
        eval(t, false)
            .map(|(l, p, _)| (l, p))
            .unwrap_or((f64::NAN, u64::MAX))
    })
}

/// Initial weights plus a random perturbation so gains, biases and the
/// forget-gate offset are all away from their special initial values.
fn randomized_weights(net: &Network, rng: &mut SimRng) -> ModelWeights {
    let mut w = net.init(rng.gen());
    for v in w.values_mut() {
        *v += rng.gen_range(-0.3..0.3);
    }
    w
}

fn small_cvposnet(rng: &mut SimRng) -> CvposnetConfig {
    CvposnetConfig {
        n_inputs: rng.gen_range(3..9),
        conv_filters: rng.gen_range(2..5),
        conv_kernel: [1, 3][rng.gen_range(0..2)],
        dropout_p: 0.2,
        lstm_units: rng.gen_range(2..6),
        output_dim: 3,
    }
}

fn small_mlp(rng: &mut SimRng) -> MlpConfig {
    MlpConfig {
        n_inputs: rng.gen_range(2..9),
        hidden: (0..rng.gen_range(1..3))
            .map(|_| rng.gen_range(2..7))
            .collect(),
        output_dim: 3,
    }
}

/// Runs `instances` randomized checks of one layer kind.
pub fn check_layer(
    kind: LayerKind,
    instances: usize,
    tolerance: f64,
    seed: u64,
) -> GradCheckReport {
    let mut report = GradCheckReport::default();
    for i in 0..instances {
        let mut rng = substream(seed, Stream::GradCheck, &[kind as u64, i as u64]);
        let r = match kind {
            LayerKind::Dense => check_dense(&mut rng, i, tolerance),
            LayerKind::Conv => check_conv(&mut rng, i, tolerance),
            LayerKind::Norm => check_norm(&mut rng, i, tolerance),
            LayerKind::Lstm => check_lstm(&mut rng, i, tolerance),
            LayerKind::Relu | LayerKind::Tanh | LayerKind::Dropout => {
                check_pointwise(kind, &mut rng, i, tolerance)
            }
            LayerKind::Cvposnet | LayerKind::Mlp => {
                let arch = if kind == LayerKind::Cvposnet {
                    Architecture::Cvposnet(small_cvposnet(&mut rng))
                } else {
                    Architecture::Mlp(small_mlp(&mut rng))
                };
                let net = Network::new(&arch).expect("valid small config");
                let w = randomized_weights(&net, &mut rng);
                check_network(&arch, &w, 5, seed ^ kind as u64, i, tolerance)
            }
        };
        report.extend(r);
    }
    report
}

/// Every layer kind in isolation on `instances` random small cases, the small
/// whole networks, and one full-size network built from `config`.
pub fn check_all(
    config: &CvposnetConfig,
    tolerance: f64,
    instances: usize,
    seed: u64,
) -> GradCheckReport {
    let mut report = GradCheckReport::default();
    for kind in LayerKind::ALL {
        report.extend(check_layer(kind, instances, tolerance, seed));
    }
    let arch = Architecture::Cvposnet(config.clone());
    match Network::new(&arch) {
        Ok(net) => {
            let mut rng = substream(seed, Stream::GradCheck, &[u64::MAX]);
            let w = randomized_weights(&net, &mut rng);
            let mut full = check_network(&arch, &w, 5, seed, instances, tolerance);
            for e in &mut full.entries {
                e.check = "cvposnet_full".into();
            }
            report.extend(full);
        }
        Err(e) => report.entries.push(GradCheckEntry {
            check: "cvposnet_full".into(),
            instance: 0,
            block: format!("config: {e}"),
            checked: 0,
            skipped: 0,
            max_rel_error: f64::INFINITY,
            tolerance,
            passed: false,
        }),
    }
    report
}

/// [`check_all`] with 20 instances per layer kind and a fixed seed.
pub fn check_gradients(config: &CvposnetConfig, tolerance: f64) -> GradCheckReport {
    check_all(config, tolerance, 20, 0x6772_6164)
}
