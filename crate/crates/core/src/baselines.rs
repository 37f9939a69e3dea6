//! Comparison learners: centralized weighted k-NN, the MLP under the same
//! federation driver, and a centrally trained model frozen after a one-shot
//! site survey.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federation::{local_train, FederationConfig};
use crate::metrics::Locator;
use crate::nn::{Architecture, MlpConfig, ModelWeights, Network};
use crate::optics::Vec3;
use crate::sensing::{FeatureScaling, Sample};

/// Distance offset in inverse-distance weights.
pub const KNN_EPSILON: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnnWeighting {
    #[default]
    InverseDistance,
    Uniform,
}

/// Fingerprint database queried in the scaled feature space.
#[derive(Clone, Debug)]
pub struct KnnModel {
    pub k: usize,
    pub weighting: KnnWeighting,
    scaling: FeatureScaling,
    features: Vec<f64>,
    coordinates: Vec<Vec3>,
}

impl KnnModel {
    pub fn new(
        k: usize,
        weighting: KnnWeighting,
        fingerprints: &[Sample],
        scaling: FeatureScaling,
    ) -> Result<Self> {
        if fingerprints.is_empty() {
            return Err(Error::Empty("k-NN fingerprints"));
        }
        if k == 0 || k > fingerprints.len() {
            return Err(Error::InvalidArgument(format!(
                "k = {k} must lie in 1..={}",
                fingerprints.len()
            )));
        }
        let set = scaling.scale_samples(fingerprints)?;
        Ok(KnnModel {
            k,
            weighting,
            scaling,
            features: set.inputs,
            coordinates: fingerprints.iter().map(|s| s.coordinate).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.coordinates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coordinates.is_empty()
    }

    /// Indices and distances of the `k` nearest fingerprints, nearest first;
    /// equal distances keep insertion order.
    pub fn neighbors(&self, query: &[f64]) -> Vec<(usize, f64)> {
        let n_in = self.scaling.n_inputs();
        let mut best: Vec<(usize, f64)> = Vec::with_capacity(self.k + 1);
        for (i, f) in self.features.chunks_exact(n_in).enumerate() {
            let d2: f64 = f.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum();
            if best.len() == self.k && d2 >= best[self.k - 1].1 {
                continue;
            }
            let pos = best.partition_point(|&(_, b)| b <= d2);
            best.insert(pos, (i, d2));
            best.truncate(self.k);
        }
        best.into_iter().map(|(i, d2)| (i, d2.sqrt())).collect()
    }

    pub fn predict(&self, powers: &[f64]) -> Result<Vec3> {
        let q = self.scaling.scale_input(powers)?;
        let nb = self.neighbors(&q);
        let weights: Vec<f64> = nb
            .iter()
            .map(|&(_, d)| match self.weighting {
                KnnWeighting::InverseDistance => 1.0 / (d + KNN_EPSILON),
                KnnWeighting::Uniform => 1.0,
            })
            .collect();
        let total: f64 = weights.iter().sum();
        let mut c = Vec3::new(0.0, 0.0, 0.0);
        for (&(i, _), w) in nb.iter().zip(&weights) {
            c = c + self.coordinates[i] * (w / total);
        }
        Ok(c)
    }
}

pub fn knn_predict(model: &KnnModel, powers: &[f64]) -> Result<Vec3> {
    model.predict(powers)
}

impl Locator for KnnModel {
    fn locate_batch(&self, samples: &[Sample]) -> Result<Vec<Vec3>> {
        samples.iter().map(|s| self.predict(&s.powers)).collect()
    }
}

/// The MLP baseline and its initial weights from the `seed` init stream.
pub fn build_mlp(config: &MlpConfig, seed: u64) -> Result<(Network, ModelWeights)> {
    let net = Network::new(&Architecture::Mlp(config.clone()))?;
    let w = net.init(seed);
    Ok((net, w))
}

/// Settings for central training on pooled data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CentralConfig {
    pub epochs: usize,
    pub minibatch_size: usize,
    pub learning_rate: f64,
}

impl Default for CentralConfig {
    fn default() -> Self {
        CentralConfig {
            epochs: 20,
            minibatch_size: 128,
            learning_rate: 0.01,
        }
    }
}

/// Trains `start` on the pooled one-shot survey and returns the weights that
/// the frozen arm then uses unchanged.
pub fn frozen_centralized(
    network: &Network,
    start: &ModelWeights,
    survey: &[Sample],
    scaling: &FeatureScaling,
    cfg: &CentralConfig,
    seed: u64,
) -> Result<ModelWeights> {
    let data = scaling.scale_samples(survey)?;
    let fed = FederationConfig {
        n_ues: 1,
        local_epochs: cfg.epochs,
        minibatch_size: cfg.minibatch_size,
        learning_rate: cfg.learning_rate,
        seed,
        ..Default::default()
    };
    Ok(local_train(network, start, &data, &fed, 0, u32::MAX)?
        .upload
        .weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scaling(n: usize) -> FeatureScaling {
        FeatureScaling {
            log_mean: vec![0.0; n],
            log_std: vec![1.0; n],
            label_extent: vec![5.0, 5.0, 3.0],
        }
    }

    fn fp(p: &[f64], c: Vec3) -> Sample {
        Sample {
            powers: p.to_vec(),
            coordinate: c,
            round_collected: 0,
        }
    }

    #[test]
    fn exact_match_with_k1() {
        let fps = [
            fp(&[1.0, 10.0], Vec3::new(1.0, 2.0, 0.85)),
            fp(&[10.0, 1.0], Vec3::new(4.0, 3.0, 0.85)),
        ];
        let m = KnnModel::new(1, KnnWeighting::InverseDistance, &fps, scaling(2)).unwrap();
        assert_eq!(m.predict(&[10.0, 1.0]).unwrap(), Vec3::new(4.0, 3.0, 0.85));
    }

    #[test]
    fn equidistant_uniform_is_midpoint() {
        let fps = [
            fp(&[1.0, 100.0], Vec3::new(1.0, 1.0, 1.0)),
            fp(&[100.0, 1.0], Vec3::new(3.0, 5.0, 1.0)),
            fp(&[1e6, 1e6], Vec3::new(0.0, 0.0, 0.0)),
        ];
        let m = KnnModel::new(2, KnnWeighting::Uniform, &fps, scaling(2)).unwrap();
        assert_eq!(m.predict(&[10.0, 10.0]).unwrap(), Vec3::new(2.0, 3.0, 1.0));
    }

    #[test]
    fn ties_keep_insertion_order_and_k_is_checked() {
        let fps = [
            fp(&[10.0], Vec3::new(1.0, 0.0, 0.0)),
            fp(&[10.0], Vec3::new(2.0, 0.0, 0.0)),
            fp(&[10.0], Vec3::new(3.0, 0.0, 0.0)),
        ];
        let m = KnnModel::new(2, KnnWeighting::Uniform, &fps, scaling(1)).unwrap();
        let idx: Vec<usize> = m.neighbors(&[0.0]).iter().map(|n| n.0).collect();
        assert_eq!(idx, vec![0, 1]);
        assert!(KnnModel::new(4, KnnWeighting::Uniform, &fps, scaling(1)).is_err());
        assert!(KnnModel::new(1, KnnWeighting::Uniform, &[], scaling(1)).is_err());
    }

    #[test]
    fn mlp_zero_weights_predict_zero() {
        let (net, w) = build_mlp(&MlpConfig::default(), 1).unwrap();
        assert_eq!(w.layout(), &net.layout()[..]);
        let z = ModelWeights::zeros(net.layout());
        assert!(net
            .predict(&z, &[0.3; 16], 1)
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
    }

    proptest! {
        #[test]
        fn prediction_inside_neighbor_box(
            pts in prop::collection::vec((0.0f64..5.0, 0.0f64..5.0, 1e-9f64..1e-3, 1e-9f64..1e-3), 5..30),
            q in (1e-9f64..1e-3, 1e-9f64..1e-3),
            k in 1usize..5,
        ) {
            let fps: Vec<Sample> = pts.iter().map(|&(x, y, a, b)| fp(&[a, b], Vec3::new(x, y, 0.85))).collect();
            let m = KnnModel::new(k, KnnWeighting::InverseDistance, &fps, scaling(2)).unwrap();
            let c = m.predict(&[q.0, q.1]).unwrap();
            let qs = [q.0.log10(), q.1.log10()];
            let nb = m.neighbors(&qs);
            let xs: Vec<f64> = nb.iter().map(|n| fps[n.0].coordinate.x).collect();
            let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(c.x >= lo - 1e-9 && c.x <= hi + 1e-9);
        }
    }
}
