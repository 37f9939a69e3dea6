//! Multi-user fingerprint collection and rolling local datasets.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::environment::RoomEnvironment;
use crate::error::{Error, Result};
use crate::optics::{power_from_gain, ChannelModel, NoiseMode, Vec3};
use crate::rng::{substream, Stream};

/// One labeled fingerprint.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// Received electrical power per LED, watts.
    pub powers: Vec<f64>,
    pub coordinate: Vec3,
    pub round_collected: u32,
}

/// Axis-aligned rectangle on the floor plan.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Region {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionMode {
    /// Each UE roams its own rectangle of the floor plan.
    #[default]
    RegionNonIid,
    /// Every UE samples the whole floor plan.
    UniformIid,
}

/// Receiver heights at which fingerprints are taken.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum SamplingPlane {
    Fixed { z_m: f64 },
    Volume { z_min_m: f64, z_max_m: f64 },
}

impl Default for SamplingPlane {
    fn default() -> Self {
        SamplingPlane::Fixed { z_m: 0.85 }
    }
}

impl SamplingPlane {
    fn draw_z<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            SamplingPlane::Fixed { z_m } => z_m,
            SamplingPlane::Volume { z_min_m, z_max_m } => rng.gen_range(z_min_m..=z_max_m),
        }
    }

    /// Height used for grids (pilot and test).
    pub fn grid_z(&self) -> f64 {
        match *self {
            SamplingPlane::Fixed { z_m } => z_m,
            SamplingPlane::Volume { z_min_m, z_max_m } => 0.5 * (z_min_m + z_max_m),
        }
    }
}

/// Data-collection settings shared by every UE.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensingConfig {
    /// Local dataset capacity per UE.
    pub dataset_size: usize,
    /// Share of the capacity replaced at each refresh event.
    pub refresh_fraction: f64,
    pub partition: PartitionMode,
    pub plane: SamplingPlane,
    /// Points per side of the pilot grid that fixes the feature scaling.
    pub pilot_grid: usize,
}

impl Default for SensingConfig {
    fn default() -> Self {
        SensingConfig {
            dataset_size: 900,
            refresh_fraction: 0.1,
            partition: PartitionMode::RegionNonIid,
            plane: SamplingPlane::default(),
            pilot_grid: 41,
        }
    }
}

impl SensingConfig {
    pub fn validate(&self, dims: Vec3) -> Result<()> {
        if self.dataset_size == 0 {
            return Err(Error::Config(
                "sensing.dataset_size must be at least 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.refresh_fraction) {
            return Err(Error::Config(format!(
                "sensing.refresh_fraction must lie in [0, 1], got {}",
                self.refresh_fraction
            )));
        }
        if self.pilot_grid < 2 {
            return Err(Error::Config(
                "sensing.pilot_grid must be at least 2".into(),
            ));
        }
        let ok = match self.plane {
            SamplingPlane::Fixed { z_m } => (0.0..dims.z).contains(&z_m),
            SamplingPlane::Volume { z_min_m, z_max_m } => {
                0.0 <= z_min_m && z_min_m <= z_max_m && z_max_m < dims.z
            }
        };
        if !ok {
            return Err(Error::Config(
                "sensing.plane heights must lie inside the room".into(),
            ));
        }
        Ok(())
    }

    /// Samples collected per UE at each refresh event.
    pub fn refresh_count(&self) -> usize {
        (self.refresh_fraction * self.dataset_size as f64).round() as usize
    }

    /// Scaling statistics from a regular pilot grid under `env`.
    pub fn pilot_scaling(
        &self,
        env: &RoomEnvironment,
        output_dim: usize,
    ) -> Result<FeatureScaling> {
        let table = GainTable::new(
            env,
            grid_positions(env.dims, self.pilot_grid, self.plane.grid_z()),
        )?;
        let powers: Vec<Vec<f64>> = table
            .samples(env, 0, u64::MAX)
            .into_iter()
            .map(|s| s.powers)
            .collect();
        FeatureScaling::from_samples(&powers, env.dims, output_dim)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UeTrajectory {
    pub ue_id: u32,
    pub mode: PartitionMode,
    /// Only used in [`PartitionMode::RegionNonIid`].
    pub region: Region,
    pub rng_stream_id: u64,
}

/// Splits the floor plan into `n` near-equal rectangles, `rows x cols` with
/// `rows <= cols` as close to square as the divisors of `n` allow.
pub fn partition_regions(dims: Vec3, n: usize) -> Vec<Region> {
    assert!(n > 0, "need at least one region");
    let rows = (1..=n)
        .filter(|r| n.is_multiple_of(*r) && r * r <= n)
        .max()
        .unwrap_or(1);
    let cols = n / rows;
    (0..n)
        .map(|j| {
            let (row, col) = (j / cols, j % cols);
            Region {
                x_min: dims.x * col as f64 / cols as f64,
                x_max: dims.x * (col + 1) as f64 / cols as f64,
                y_min: dims.y * row as f64 / rows as f64,
                y_max: dims.y * (row + 1) as f64 / rows as f64,
            }
        })
        .collect()
}

/// One trajectory per UE.
pub fn trajectories(dims: Vec3, n: usize, mode: PartitionMode) -> Vec<UeTrajectory> {
    let whole = Region {
        x_min: 0.0,
        x_max: dims.x,
        y_min: 0.0,
        y_max: dims.y,
    };
    partition_regions(dims, n)
        .into_iter()
        .enumerate()
        .map(|(j, region)| UeTrajectory {
            ue_id: j as u32,
            mode,
            region: match mode {
                PartitionMode::RegionNonIid => region,
                PartitionMode::UniformIid => whole,
            },
            rng_stream_id: j as u64,
        })
        .collect()
}

/// Powers for each position under `env`, given precomputed channel gains.
///
/// `noise_key` seeds the per-position noise streams in stochastic mode.
pub fn powers_at(
    env: &RoomEnvironment,
    channel: &ChannelModel,
    position: Vec3,
    seed: u64,
    noise_key: &[u64],
) -> Result<Vec<f64>> {
    let gains = channel.gains(position)?;
    let mut rng = substream(seed, Stream::Noise, noise_key);
    Ok(env
        .leds
        .iter()
        .zip(&gains)
        .map(|(led, g)| {
            power_from_gain(
                led,
                g.total(),
                &env.pd,
                &env.noise,
                env.noise_mode,
                &mut rng,
            )
        })
        .collect())
}

/// Collects `count` fingerprints along `traj` under the round-`round` environment.
/// Deterministic in `(seed, traj.rng_stream_id, round)`.
pub fn collect(
    env: &RoomEnvironment,
    channel: &ChannelModel,
    traj: &UeTrajectory,
    count: usize,
    round: u32,
    plane: &SamplingPlane,
    seed: u64,
) -> Result<Vec<Sample>> {
    if count == 0 {
        return Err(Error::InvalidArgument(
            "collect count must be at least 1".into(),
        ));
    }
    let mut rng = substream(seed, Stream::Collect, &[traj.rng_stream_id, round as u64]);
    let region = match traj.mode {
        PartitionMode::RegionNonIid => traj.region,
        PartitionMode::UniformIid => Region {
            x_min: 0.0,
            x_max: env.dims.x,
            y_min: 0.0,
            y_max: env.dims.y,
        },
    };
    (0..count)
        .map(|i| {
            let x = rng.gen_range(region.x_min..region.x_max);
            let y = rng.gen_range(region.y_min..region.y_max);
            let z = plane.draw_z(&mut rng);
            let coordinate = Vec3::new(x, y, z);
            let powers = powers_at(
                env,
                channel,
                coordinate,
                seed,
                &[traj.rng_stream_id, round as u64, i as u64],
            )?;
            Ok(Sample {
                powers,
                coordinate,
                round_collected: round,
            })
        })
        .collect()
}

/// Recomputes a sample's power vector from its coordinate (deterministic mode).
pub fn recompute_powers(env: &RoomEnvironment, sample: &Sample) -> Result<Vec<f64>> {
    if env.noise_mode != NoiseMode::Deterministic {
        return Err(Error::InvalidArgument(
            "samples are only reproducible in deterministic noise mode".into(),
        ));
    }
    powers_at(env, &env.channel_model()?, sample.coordinate, 0, &[])
}

/// A UE's rolling fingerprint store.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalDataset {
    pub ue_id: u32,
    pub samples: Vec<Sample>,
    pub capacity: usize,
}

impl LocalDataset {
    pub fn new(ue_id: u32, capacity: usize) -> Self {
        LocalDataset {
            ue_id,
            samples: Vec::with_capacity(capacity),
            capacity,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Adds up to `round(replace_fraction * capacity)` fresh samples and evicts
    /// the oldest (by collection round, then insertion order) beyond capacity.
    pub fn refresh(&mut self, fresh: Vec<Sample>, replace_fraction: f64) -> Result<()> {
        if fresh.len() > self.capacity {
            return Err(Error::InvalidArgument(format!(
                "{} fresh samples exceed dataset capacity {}",
                fresh.len(),
                self.capacity
            )));
        }
        if !(0.0..=1.0).contains(&replace_fraction) {
            return Err(Error::InvalidArgument(format!(
                "replace fraction {replace_fraction} outside [0, 1]"
            )));
        }
        let quota = (replace_fraction * self.capacity as f64).round() as usize;
        let take = quota.min(fresh.len());
        // stable: ties keep insertion order
        self.samples.sort_by_key(|s| s.round_collected);
        self.samples.extend(fresh.into_iter().take(take));
        let excess = self.samples.len().saturating_sub(self.capacity);
        self.samples.drain(..excess);
        Ok(())
    }

    /// Fills an empty dataset up to capacity.
    pub fn fill(&mut self, samples: Vec<Sample>) -> Result<()> {
        if self.samples.len() + samples.len() > self.capacity {
            return Err(Error::InvalidArgument(format!(
                "filling with {} samples would exceed capacity {}",
                samples.len(),
                self.capacity
            )));
        }
        self.samples.extend(samples);
        Ok(())
    }
}

/// `sqrt(12)`: the inverse standard deviation of a unit-width uniform variable.
pub const LABEL_SPREAD: f64 = 3.464_101_615_137_754_6;

/// Input and label normalization shared by every learner.
///
/// Inputs are `log10` powers standardized per LED with statistics frozen from a
/// pilot grid. Each label axis is standardized as if uniform over the room:
/// `(c / L - 0.5) * sqrt(12)`, so the room center maps to 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaling {
    pub log_mean: Vec<f64>,
    pub log_std: Vec<f64>,
    /// Room extent per label axis (2 or 3 axes).
    pub label_extent: Vec<f64>,
}

impl FeatureScaling {
    pub fn from_samples(power_vectors: &[Vec<f64>], dims: Vec3, output_dim: usize) -> Result<Self> {
        let n_in = power_vectors
            .first()
            .map(Vec::len)
            .ok_or(Error::Empty("pilot grid"))?;
        if !(2..=3).contains(&output_dim) {
            return Err(Error::InvalidArgument(format!(
                "output_dim must be 2 or 3, got {output_dim}"
            )));
        }
        let n = power_vectors.len() as f64;
        let mut mean = vec![0.0; n_in];
        for p in power_vectors {
            if p.len() != n_in {
                return Err(Error::LengthMismatch {
                    expected: n_in,
                    got: p.len(),
                });
            }
            for (m, &v) in mean.iter_mut().zip(p) {
                *m += log_power(v);
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; n_in];
        for p in power_vectors {
            for ((s, &v), m) in var.iter_mut().zip(p).zip(&mean) {
                let d = log_power(v) - m;
                *s += d * d;
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(FeatureScaling {
            log_mean: mean,
            log_std: std,
            label_extent: dims.to_array()[..output_dim].to_vec(),
        })
    }

    pub fn n_inputs(&self) -> usize {
        self.log_mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.label_extent.len()
    }

    pub fn scale_input_into(&self, powers: &[f64], out: &mut [f64]) -> Result<()> {
        if powers.len() != self.n_inputs() {
            return Err(Error::LengthMismatch {
                expected: self.n_inputs(),
                got: powers.len(),
            });
        }
        for (((o, &p), m), s) in out
            .iter_mut()
            .zip(powers)
            .zip(&self.log_mean)
            .zip(&self.log_std)
        {
            *o = (log_power(p) - m) / s;
        }
        Ok(())
    }

    pub fn scale_input(&self, powers: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.n_inputs()];
        self.scale_input_into(powers, &mut out)?;
        Ok(out)
    }

    pub fn scale_label_into(&self, c: Vec3, out: &mut [f64]) {
        let c = c.to_array();
        for (k, o) in out.iter_mut().enumerate().take(self.output_dim()) {
            *o = (c[k] / self.label_extent[k] - 0.5) * LABEL_SPREAD;
        }
    }

    /// Maps a network output back to meters. A missing z is reported as 0.
    pub fn unscale_label(&self, y: &[f64]) -> Vec3 {
        let mut c = [0.0; 3];
        for k in 0..self.output_dim() {
            c[k] = (y[k] / LABEL_SPREAD + 0.5) * self.label_extent[k];
        }
        Vec3::new(c[0], c[1], c[2])
    }

    /// Scales a list of samples into flat row-major input/target matrices.
    pub fn scale_samples(&self, samples: &[Sample]) -> Result<ScaledSet> {
        let (n_in, n_out) = (self.n_inputs(), self.output_dim());
        let mut inputs = vec![0.0; samples.len() * n_in];
        let mut targets = vec![0.0; samples.len() * n_out];
        for (i, s) in samples.iter().enumerate() {
            self.scale_input_into(&s.powers, &mut inputs[i * n_in..(i + 1) * n_in])?;
            self.scale_label_into(s.coordinate, &mut targets[i * n_out..(i + 1) * n_out]);
        }
        Ok(ScaledSet {
            inputs,
            targets,
            n_inputs: n_in,
            n_outputs: n_out,
        })
    }
}

fn log_power(p: f64) -> f64 {
    p.max(f64::MIN_POSITIVE).log10()
}

/// Row-major scaled inputs and targets.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScaledSet {
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    pub n_inputs: usize,
    pub n_outputs: usize,
}

impl ScaledSet {
    pub fn len(&self) -> usize {
        self.inputs.len().checked_div(self.n_inputs).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.n_inputs..(i + 1) * self.n_inputs]
    }

    pub fn target(&self, i: usize) -> &[f64] {
        &self.targets[i * self.n_outputs..(i + 1) * self.n_outputs]
    }
}

/// Regular `n x n` grid over the floor plan (edges included) at height `z`.
pub fn grid_positions(dims: Vec3, n: usize, z: f64) -> Vec<Vec3> {
    let step = |len: f64, i: usize| {
        if n > 1 {
            len * i as f64 / (n - 1) as f64
        } else {
            len / 2.0
        }
    };
    let mut out = Vec::with_capacity(n * n);
    for iy in 0..n {
        for ix in 0..n {
            out.push(Vec3::new(step(dims.x, ix), step(dims.y, iy), z));
        }
    }
    out
}

/// Fixed positions with their channel gains cached; the gains only depend on
/// geometry so any round's powers come from one table.
#[derive(Clone, Debug)]
pub struct GainTable {
    pub positions: Vec<Vec3>,
    gains: Vec<f64>,
    n_leds: usize,
}

impl GainTable {
    pub fn new(env: &RoomEnvironment, positions: Vec<Vec3>) -> Result<Self> {
        let channel = env.channel_model()?;
        let mut gains = Vec::with_capacity(positions.len() * env.n_leds());
        for &p in &positions {
            gains.extend(channel.gains(p)?.iter().map(|g| g.total()));
        }
        Ok(GainTable {
            positions,
            gains,
            n_leds: env.n_leds(),
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Fingerprints at every position under `env`.
    pub fn samples(&self, env: &RoomEnvironment, seed: u64, stream: u64) -> Vec<Sample> {
        self.positions
            .iter()
            .enumerate()
            .map(|(i, &coordinate)| {
                let mut rng = substream(
                    seed,
                    Stream::Eval,
                    &[stream, env.round_index as u64, i as u64],
                );
                let g = &self.gains[i * self.n_leds..(i + 1) * self.n_leds];
                let powers = env
                    .leds
                    .iter()
                    .zip(g)
                    .map(|(led, &h)| {
                        power_from_gain(led, h, &env.pd, &env.noise, env.noise_mode, &mut rng)
                    })
                    .collect();
                Sample {
                    powers,
                    coordinate,
                    round_collected: env.round_index,
                }
            })
            .collect()
    }
}

/// Writes `round,x,y,z,p_1,...,p_N` with shortest round-trip floats.
pub fn write_dataset_csv(path: &Path, samples: &[Sample]) -> Result<()> {
    let n = samples.first().map_or(0, |s| s.powers.len());
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["round".to_string(), "x".into(), "y".into(), "z".into()];
    header.extend((1..=n).map(|i| format!("p_{i}")));
    w.write_record(&header)?;
    for s in samples {
        let mut rec = vec![
            s.round_collected.to_string(),
            format!("{:?}", s.coordinate.x),
            format!("{:?}", s.coordinate.y),
            format!("{:?}", s.coordinate.z),
        ];
        rec.extend(s.powers.iter().map(|p| format!("{p:?}")));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_dataset_csv(path: &Path) -> Result<Vec<Sample>> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.len() < 5 || &header[0] != "round" || &header[1] != "x" {
        return Err(Error::InvalidArgument(format!(
            "{}: expected header round,x,y,z,p_1,...",
            path.display()
        )));
    }
    let parse = |s: &str, line: u64| -> Result<f64> {
        s.parse::<f64>().map_err(|_| {
            Error::InvalidArgument(format!("{}: line {line}: bad number `{s}`", path.display()))
        })
    };
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let round = rec[0].parse::<u32>().map_err(|_| {
            Error::InvalidArgument(format!("{}: line {line}: bad round", path.display()))
        })?;
        let coordinate = Vec3::new(
            parse(&rec[1], line)?,
            parse(&rec[2], line)?,
            parse(&rec[3], line)?,
        );
        let powers = (4..rec.len())
            .map(|i| parse(&rec[i], line))
            .collect::<Result<_>>()?;
        out.push(Sample {
            powers,
            coordinate,
            round_collected: round,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::default_environment;

    fn setup() -> (RoomEnvironment, ChannelModel) {
        let env = default_environment();
        let ch = env.channel_model().unwrap();
        (env, ch)
    }

    fn sample(round: u32, tag: f64) -> Sample {
        Sample {
            powers: vec![tag],
            coordinate: Vec3::new(tag, 0.0, 0.0),
            round_collected: round,
        }
    }

    #[test]
    fn regions_tile_the_floor() {
        let dims = Vec3::new(5.0, 5.0, 3.0);
        let regions = partition_regions(dims, 10);
        assert_eq!(regions.len(), 10);
        let area: f64 = regions
            .iter()
            .map(|r| (r.x_max - r.x_min) * (r.y_max - r.y_min))
            .sum();
        assert!((area - 25.0).abs() < 1e-12);
        assert!(regions
            .iter()
            .all(|r| (r.x_max - r.x_min - 1.0).abs() < 1e-12));
        assert_eq!(partition_regions(dims, 7).len(), 7);
    }

    #[test]
    fn region_constraint_respected() {
        let (env, ch) = setup();
        let traj = UeTrajectory {
            ue_id: 0,
            mode: PartitionMode::RegionNonIid,
            region: Region {
                x_min: 0.0,
                x_max: 2.5,
                y_min: 0.0,
                y_max: 5.0,
            },
            rng_stream_id: 0,
        };
        let s = collect(&env, &ch, &traj, 200, 0, &SamplingPlane::default(), 1).unwrap();
        assert!(s
            .iter()
            .all(|s| s.coordinate.x < 2.5 && s.coordinate.z == 0.85));
        assert!(s
            .iter()
            .all(|s| s.powers.len() == 16 && s.powers.iter().all(|&p| p > 0.0)));
    }

    #[test]
    fn collection_is_deterministic() {
        let (env, ch) = setup();
        let traj = &trajectories(env.dims, 10, PartitionMode::UniformIid)[3];
        let a = collect(&env, &ch, traj, 50, 4, &SamplingPlane::default(), 9).unwrap();
        let b = collect(&env, &ch, traj, 50, 4, &SamplingPlane::default(), 9).unwrap();
        assert_eq!(a, b);
        let c = collect(&env, &ch, traj, 50, 5, &SamplingPlane::default(), 9).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn uniform_collection_fills_capacity() {
        let (env, ch) = setup();
        let traj = &trajectories(env.dims, 10, PartitionMode::UniformIid)[0];
        let s = collect(&env, &ch, traj, 900, 0, &SamplingPlane::default(), 1).unwrap();
        assert_eq!(s.len(), 900);
        let left = s.iter().filter(|s| s.coordinate.x < 2.5).count();
        assert!((350..550).contains(&left), "{left}");
    }

    #[test]
    fn volume_mode_draws_heights() {
        let (env, ch) = setup();
        let traj = &trajectories(env.dims, 1, PartitionMode::UniformIid)[0];
        let plane = SamplingPlane::Volume {
            z_min_m: 0.5,
            z_max_m: 1.5,
        };
        let s = collect(&env, &ch, traj, 100, 0, &plane, 1).unwrap();
        assert!(s.iter().all(|s| (0.5..=1.5).contains(&s.coordinate.z)));
    }

    #[test]
    fn refresh_fraction_semantics() {
        let mut ds = LocalDataset::new(0, 900);
        ds.fill((0..900).map(|i| sample(0, i as f64)).collect())
            .unwrap();
        let before = ds.clone();
        ds.refresh(
            (0..90).map(|i| sample(10, 1000.0 + i as f64)).collect(),
            0.0,
        )
        .unwrap();
        assert_eq!(ds, before);

        ds.refresh(
            (0..90).map(|i| sample(10, 1000.0 + i as f64)).collect(),
            0.1,
        )
        .unwrap();
        assert_eq!(ds.len(), 900);
        assert_eq!(ds.samples[0].powers[0], 90.0);
        assert_eq!(ds.samples[809].powers[0], 899.0);
        assert_eq!(ds.samples[810].powers[0], 1000.0);

        ds.refresh(
            (0..900).map(|i| sample(20, 5000.0 + i as f64)).collect(),
            1.0,
        )
        .unwrap();
        assert!(ds.samples.iter().all(|s| s.round_collected == 20));
        assert!(ds
            .refresh((0..901).map(|i| sample(30, i as f64)).collect(), 0.5)
            .is_err());
    }

    #[test]
    fn eviction_uses_round_then_insertion_order() {
        let mut ds = LocalDataset::new(0, 3);
        ds.fill(vec![sample(5, 1.0), sample(2, 2.0), sample(2, 3.0)])
            .unwrap();
        ds.refresh(vec![sample(6, 4.0)], 0.34).unwrap();
        let tags: Vec<f64> = ds.samples.iter().map(|s| s.powers[0]).collect();
        assert_eq!(tags, vec![3.0, 1.0, 4.0]);
    }

    #[test]
    fn samples_are_auditable() {
        let (env, ch) = setup();
        let traj = &trajectories(env.dims, 10, PartitionMode::RegionNonIid)[7];
        for s in collect(&env, &ch, traj, 20, 0, &SamplingPlane::default(), 3).unwrap() {
            assert_eq!(recompute_powers(&env, &s).unwrap(), s.powers);
        }
    }

    #[test]
    fn scaling_standardizes_pilot_grid() {
        let env = default_environment();
        let table = GainTable::new(&env, grid_positions(env.dims, 11, 0.85)).unwrap();
        let samples = table.samples(&env, 0, 0);
        let powers: Vec<Vec<f64>> = samples.iter().map(|s| s.powers.clone()).collect();
        let sc = FeatureScaling::from_samples(&powers, env.dims, 3).unwrap();
        let set = sc.scale_samples(&samples).unwrap();
        for k in 0..16 {
            let col: Vec<f64> = (0..set.len()).map(|i| set.input(i)[k]).collect();
            let m = col.iter().sum::<f64>() / col.len() as f64;
            let v = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / col.len() as f64;
            assert!(m.abs() < 1e-9 && (v - 1.0).abs() < 1e-9);
        }
        let mut y = [0.0; 3];
        sc.scale_label_into(Vec3::new(2.5, 2.5, 1.5), &mut y);
        assert_eq!(y, [0.0; 3]);
        let c = Vec3::new(5.0, 0.0, 3.0);
        sc.scale_label_into(c, &mut y);
        let r3 = 3f64.sqrt();
        assert!(
            (y[0] - r3).abs() < 1e-15 && (y[1] + r3).abs() < 1e-15 && (y[2] - r3).abs() < 1e-15
        );
        let back = sc.unscale_label(&y);
        assert!((back - c).norm() < 1e-15);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let (env, ch) = setup();
        let traj = &trajectories(env.dims, 10, PartitionMode::RegionNonIid)[2];
        let s = collect(&env, &ch, traj, 30, 0, &SamplingPlane::default(), 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ue_2.csv");
        write_dataset_csv(&path, &s).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("round,x,y,z,p_1,p_2,"));
        assert!(text.lines().next().unwrap().ends_with(",p_16"));
        assert_eq!(read_dataset_csv(&path).unwrap(), s);
    }
}
