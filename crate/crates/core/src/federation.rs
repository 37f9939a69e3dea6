//! Federated averaging over simulated UEs: local SGD on each UE's rolling
//! dataset, weighted aggregation on the server, broadcast, repeat.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::environment::{advance, RoomEnvironment, ScenarioSpec};
use crate::error::{Error, Result};
use crate::exec::{collect_results, Executor};
use crate::metrics::EvalReport;
use crate::nn::{sgd_update, ModelWeights, Network};
use crate::optics::Vec3;
use crate::rng::{substream, Stream};
use crate::sensing::{
    collect, trajectories, FeatureScaling, LocalDataset, ScaledSet, SensingConfig, UeTrajectory,
};

pub use server::{aggregate, Upload};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FederationConfig {
    pub n_ues: usize,
    pub local_epochs: usize,
    pub minibatch_size: usize,
    pub rounds: u32,
    pub learning_rate: f64,
    /// Datasets are refreshed at every round divisible by this.
    pub refresh_interval: u32,
    /// Taken from the run-level seed, never from the federation section.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for FederationConfig {
    fn default() -> Self {
        FederationConfig {
            n_ues: 10,
            local_epochs: 5,
            minibatch_size: 128,
            rounds: 200,
            learning_rate: 0.01,
            refresh_interval: 10,
            seed: 2024,
        }
    }
}

impl FederationConfig {
    pub fn validate(&self, capacity: usize) -> Result<()> {
        if self.n_ues == 0 {
            return Err(Error::Config("federation.n_ues must be at least 1".into()));
        }
        if self.minibatch_size == 0 {
            return Err(Error::Config(
                "federation.minibatch_size must be at least 1".into(),
            ));
        }
        if self.minibatch_size > capacity {
            return Err(Error::Config(format!(
                "federation.minibatch_size {} exceeds the dataset capacity {capacity}",
                self.minibatch_size
            )));
        }
        if self.refresh_interval == 0 {
            return Err(Error::Config(
                "federation.refresh_interval must be at least 1".into(),
            ));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "federation.learning_rate must be a non-negative number, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Result of one UE's local training.
#[derive(Clone, Debug)]
pub struct LocalUpdate {
    pub upload: Upload,
    /// Mean minibatch loss over the last local epoch (NaN if no steps ran).
    pub last_epoch_loss: f64,
}

/// Runs `cfg.local_epochs` passes of minibatch SGD from `global` over `data`.
///
/// Each epoch visits every sample once in an order drawn from the
/// `(seed, ue_id, round, epoch)` shuffle stream; the last batch may be short.
pub fn local_train(
    network: &Network,
    global: &ModelWeights,
    data: &ScaledSet,
    cfg: &FederationConfig,
    round: u32,
    ue_id: u32,
) -> Result<LocalUpdate> {
    if data.is_empty() {
        return Err(Error::Empty("local dataset"));
    }
    let mut w = global.clone();
    let n = data.len();
    let bs = cfg.minibatch_size.max(1);
    let (nin, nout) = (data.n_inputs, data.n_outputs);
    let mut x = Vec::with_capacity(bs * nin);
    let mut y = Vec::with_capacity(bs * nout);
    let mut last_epoch_loss = f64::NAN;
    for epoch in 0..cfg.local_epochs {
        let path = [ue_id as u64, round as u64, epoch as u64];
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut substream(cfg.seed, Stream::Shuffle, &path));
        let mut dropout = substream(cfg.seed, Stream::Dropout, &path);
        let (mut sum, mut steps) = (0.0, 0usize);
        for batch in order.chunks(bs) {
            x.clear();
            y.clear();
            for &i in batch {
                x.extend_from_slice(data.input(i));
                y.extend_from_slice(data.target(i));
            }
            let (loss, grad) = network.loss_and_gradient(&w, &x, &y, batch.len(), &mut dropout)?;
            sgd_update(&mut w, &grad, cfg.learning_rate)?;
            sum += loss;
            steps += 1;
        }
        last_epoch_loss = sum / steps as f64;
    }
    Ok(LocalUpdate {
        upload: Upload {
            ue_id,
            weights: w,
            dataset_size: n,
        },
        last_epoch_loss,
    })
}

/// Server side of the protocol. Its interface only ever sees weight vectors
/// and dataset sizes.
pub mod server {
    use crate::error::{Error, Result};
    use crate::nn::ModelWeights;

    /// What a UE sends to the server after local training.
    #[derive(Clone, Debug, PartialEq)]
    pub struct Upload {
        pub ue_id: u32,
        pub weights: ModelWeights,
        pub dataset_size: usize,
    }

    /// Dataset-size-weighted elementwise mean, accumulated in ascending
    /// `ue_id` order and clamped to the per-element range of the inputs so
    /// identical inputs pass through unchanged.
    pub fn aggregate(uploads: &[Upload]) -> Result<ModelWeights> {
        let first = uploads.first().ok_or(Error::Empty("aggregation input"))?;
        let mut order: Vec<&Upload> = uploads.iter().collect();
        order.sort_by_key(|u| u.ue_id);
        if order.windows(2).any(|w| w[0].ue_id == w[1].ue_id) {
            return Err(Error::InvalidArgument(
                "duplicate ue_id in aggregation".into(),
            ));
        }
        for u in &order {
            if let Some(msg) = u.weights.layout_mismatch(first.weights.layout()) {
                return Err(Error::LayoutMismatch { layer: msg });
            }
        }
        let total: usize = order.iter().map(|u| u.dataset_size).sum();
        if total == 0 {
            return Err(Error::InvalidArgument("total dataset size is zero".into()));
        }
        let total = total as f64;
        let fractions: Vec<f64> = order
            .iter()
            .map(|u| u.dataset_size as f64 / total)
            .collect();
        let mut out = order[0].weights.clone();
        let vals: Vec<&[f64]> = order.iter().map(|u| u.weights.values()).collect();
        for (i, o) in out.values_mut().iter_mut().enumerate() {
            let mut acc = fractions[0] * vals[0][i];
            let (mut lo, mut hi) = (vals[0][i], vals[0][i]);
            for (f, v) in fractions.iter().zip(&vals).skip(1) {
                acc += f * v[i];
                lo = lo.min(v[i]);
                hi = hi.max(v[i]);
            }
            *o = if acc < lo {
                lo
            } else if acc > hi {
                hi
            } else {
                acc
            };
        }
        Ok(out)
    }
}

/// Per-UE part of the round log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UploadSummary {
    pub ue_id: u32,
    pub dataset_size: usize,
    pub weights_checksum: u64,
    pub last_epoch_loss: f64,
}

/// Scores the global model after a round; `None` skips evaluation.
pub type EvalHook<'a> =
    dyn FnMut(u32, &RoomEnvironment, &ModelWeights) -> Result<Option<EvalReport>> + 'a;

/// Log entry for one communication round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FederationRound {
    pub t: u32,
    pub uploads: Vec<UploadSummary>,
    pub global_checksum: u64,
    /// Dataset-size-weighted mean of the UEs' last-epoch losses.
    pub train_loss: f64,
    pub eval: Option<EvalReport>,
    pub led_power_w: Vec<f64>,
    pub active_leds: Vec<bool>,
    pub background_current_a: f64,
}

/// What the federation needs from the rest of the system.
#[derive(Clone, Copy)]
pub struct FederationInputs<'a> {
    pub base_env: &'a RoomEnvironment,
    pub scenario: &'a ScenarioSpec,
    pub sensing: &'a SensingConfig,
    pub network: &'a Network,
    pub scaling: &'a FeatureScaling,
}

struct UeState {
    traj: UeTrajectory,
    dataset: LocalDataset,
    scaled: ScaledSet,
}

/// A federation in progress. Rounds run one at a time via [`Federation::step`].
pub struct Federation<'a> {
    inputs: FederationInputs<'a>,
    cfg: FederationConfig,
    ues: Vec<UeState>,
    global: ModelWeights,
    next_round: u32,
    exec: Executor,
}

impl<'a> Federation<'a> {
    pub fn new(
        inputs: FederationInputs<'a>,
        cfg: FederationConfig,
        initial: ModelWeights,
        exec: Executor,
    ) -> Result<Self> {
        cfg.validate(inputs.sensing.dataset_size)?;
        inputs.sensing.validate(inputs.base_env.dims)?;
        inputs.scenario.validate(inputs.base_env.n_leds())?;
        initial.check_layout(&inputs.network.layout())?;
        if inputs.scaling.n_inputs() != inputs.base_env.n_leds()
            || inputs.network.n_inputs() != inputs.base_env.n_leds()
        {
            return Err(Error::Config(format!(
                "network and scaling must take {} inputs (one per LED)",
                inputs.base_env.n_leds()
            )));
        }
        let ues = trajectories(inputs.base_env.dims, cfg.n_ues, inputs.sensing.partition)
            .into_iter()
            .map(|traj| UeState {
                dataset: LocalDataset::new(traj.ue_id, inputs.sensing.dataset_size),
                traj,
                scaled: ScaledSet::default(),
            })
            .collect();
        Ok(Federation {
            inputs,
            cfg,
            ues,
            global: initial,
            next_round: 0,
            exec,
        })
    }

    /// Continues a run whose global weights after `completed_rounds` rounds
    /// are `weights`. Local datasets are rebuilt by replaying every collection
    /// event before that round, so later rounds match an uninterrupted run.
    pub fn resume(
        inputs: FederationInputs<'a>,
        cfg: FederationConfig,
        weights: ModelWeights,
        completed_rounds: u32,
        exec: Executor,
    ) -> Result<Self> {
        let mut fed = Federation::new(inputs, cfg, weights, exec)?;
        for t in 0..completed_rounds {
            fed.collect_round(t)?;
        }
        fed.next_round = completed_rounds;
        Ok(fed)
    }

    pub fn global(&self) -> &ModelWeights {
        &self.global
    }

    pub fn next_round(&self) -> u32 {
        self.next_round
    }

    pub fn environment(&self, t: u32) -> RoomEnvironment {
        advance(self.inputs.base_env, self.inputs.scenario, t)
    }

    /// Pooled copy of every UE's current samples, in ue_id order.
    pub fn pooled_samples(&self) -> Vec<crate::sensing::Sample> {
        self.ues
            .iter()
            .flat_map(|u| u.dataset.samples.iter().cloned())
            .collect()
    }

    /// A full-capacity collection per UE (in ue_id order) under the
    /// environment of the next round, leaving the federation untouched. At
    /// round 0 this is exactly the data the UEs start training on.
    pub fn survey(&self) -> Result<Vec<Vec<crate::sensing::Sample>>> {
        let t = self.next_round;
        let env = self.environment(t);
        let channel = env.channel_model()?;
        let (sensing, seed) = (self.inputs.sensing, self.cfg.seed);
        collect_results(self.exec.map(&self.ues, |ue| {
            collect(
                &env,
                &channel,
                &ue.traj,
                sensing.dataset_size,
                t,
                &sensing.plane,
                seed,
            )
        }))
    }

    fn collect_round(&mut self, t: u32) -> Result<()> {
        let first = self.ues.iter().all(|u| u.dataset.is_empty());
        let refresh = !first
            && t.is_multiple_of(self.cfg.refresh_interval)
            && self.inputs.sensing.refresh_count() > 0;
        if !first && !refresh {
            return Ok(());
        }
        let env = self.environment(t);
        let channel = env.channel_model()?;
        let sensing = self.inputs.sensing;
        let count = if first {
            sensing.dataset_size
        } else {
            sensing.refresh_count()
        };
        let seed = self.cfg.seed;
        let scaling = self.inputs.scaling;
        let results = self.exec.map(&self.ues, |ue| {
            let fresh = collect(&env, &channel, &ue.traj, count, t, &sensing.plane, seed)?;
            let mut ds = ue.dataset.clone();
            if first {
                ds.fill(fresh)?;
            } else {
                ds.refresh(fresh, sensing.refresh_fraction)?;
            }
            let scaled = scaling.scale_samples(&ds.samples)?;
            Ok::<_, Error>((ds, scaled))
        });
        for (ue, r) in self.ues.iter_mut().zip(collect_results(results)?) {
            ue.dataset = r.0;
            ue.scaled = r.1;
        }
        Ok(())
    }

    /// Runs the next round: advance the environment, refresh datasets, train
    /// every UE from the current global weights, aggregate, evaluate.
    pub fn step(&mut self, eval_hook: &mut EvalHook<'_>) -> Result<FederationRound> {
        let t = self.next_round;
        self.collect_round(t)?;
        let env = self.environment(t);
        let (net, cfg, global) = (self.inputs.network, &self.cfg, &self.global);
        let results = self.exec.map(&self.ues, |ue| {
            local_train(net, global, &ue.scaled, cfg, t, ue.traj.ue_id)
        });
        let mut updates = Vec::with_capacity(results.len());
        for (ue, r) in self.ues.iter().zip(results) {
            updates.push(r.map_err(|e| Error::Ue {
                round: t,
                ue_id: ue.traj.ue_id,
                source: Box::new(e),
            })?);
        }
        let uploads: Vec<Upload> = updates.iter().map(|u| u.upload.clone()).collect();
        let new_global = aggregate(&uploads)?;
        let eval = eval_hook(t, &env, &new_global)?;
        let total: usize = updates.iter().map(|u| u.upload.dataset_size).sum();
        let train_loss = updates
            .iter()
            .map(|u| u.last_epoch_loss * u.upload.dataset_size as f64)
            .sum::<f64>()
            / total as f64;
        let record = FederationRound {
            t,
            uploads: updates
                .iter()
                .map(|u| UploadSummary {
                    ue_id: u.upload.ue_id,
                    dataset_size: u.upload.dataset_size,
                    weights_checksum: u.upload.weights.checksum(),
                    last_epoch_loss: u.last_epoch_loss,
                })
                .collect(),
            global_checksum: new_global.checksum(),
            train_loss,
            eval,
            led_power_w: env.leds.iter().map(|l| l.emit_power_w).collect(),
            active_leds: env.leds.iter().map(|l| l.active).collect(),
            background_current_a: env.noise.background_current_a,
        };
        self.global = new_global;
        self.next_round += 1;
        Ok(record)
    }
}

/// Runs `cfg.rounds` rounds from `initial`, calling `observer` after each.
pub fn run_federation(
    inputs: FederationInputs<'_>,
    cfg: &FederationConfig,
    initial: ModelWeights,
    exec: Executor,
    eval_hook: &mut EvalHook<'_>,
    observer: &mut dyn FnMut(&FederationRound, &ModelWeights) -> Result<()>,
) -> Result<(Vec<FederationRound>, ModelWeights)> {
    let mut fed = Federation::new(inputs, cfg.clone(), initial, exec)?;
    let mut log = Vec::with_capacity(cfg.rounds as usize);
    for _ in 0..cfg.rounds {
        let rec = fed.step(eval_hook)?;
        observer(&rec, fed.global())?;
        log.push(rec);
    }
    Ok((log, fed.global))
}

/// Coordinate estimate in meters for one raw power vector.
pub fn infer(
    network: &Network,
    global: &ModelWeights,
    powers: &[f64],
    scaling: Option<&FeatureScaling>,
) -> Result<Vec3> {
    let scaling =
        scaling.ok_or_else(|| Error::Config("feature scaling manifest is missing".into()))?;
    let x = scaling.scale_input(powers)?;
    let y = network.predict(global, &x, 1)?;
    Ok(scaling.unscale_label(&y))
}
