//! Gaussian blobs with a controllable spurious group signal.
//!
//! Class `y` is centred at `(s / sqrt 2) * e_y`, so any two class centres are
//! `s = class_center_separation` apart. Each sample's group is drawn
//! independently: the class's dominant group with probability `rho`, otherwise
//! uniformly among the remaining groups. Group `b` adds
//! `group_shift_magnitude * e_{C+b}` to the features, which is the shortcut a
//! model can learn instead of the class signal. Remaining coordinates are pure
//! noise.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{GroupedDataset, Sample};
use crate::error::{Error, Result};
use crate::rng::{stream, stream_rng};

/// A value given once for all classes or once per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerClass<T> {
    All(T),
    Each(Vec<T>),
}

impl<T: Copy> PerClass<T> {
    pub fn get(&self, class: usize) -> Option<T> {
        match self {
            PerClass::All(v) => Some(*v),
            PerClass::Each(v) => v.get(class).copied(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub num_groups: usize,
    pub samples_per_class: usize,
    /// Probability mass of each class's dominant group, in `[1/G, 1]`.
    pub bias_strength: PerClass<f64>,
    /// Dominant group per class. Defaults to `y mod G`.
    #[serde(default)]
    pub dominant_group: Option<Vec<usize>>,
    pub class_center_separation: f64,
    pub group_shift_magnitude: f64,
    pub feature_dim: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn dominant(&self, class: usize) -> usize {
        self.dominant_group
            .as_ref()
            .and_then(|d| d.get(class).copied())
            .unwrap_or(class % self.num_groups.max(1))
    }

    pub fn rho(&self, class: usize) -> f64 {
        self.bias_strength.get(class).unwrap_or(f64::NAN)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.num_groups == 0 || self.samples_per_class == 0 {
            return Err(Error::Config("class count, group count and samples per class must be positive".into()));
        }
        if self.feature_dim < self.num_classes + self.num_groups {
            return Err(Error::Config(format!(
                "feature_dim {} is too small: need at least C + G = {}",
                self.feature_dim,
                self.num_classes + self.num_groups
            )));
        }
        if let PerClass::Each(v) = &self.bias_strength {
            if v.len() != self.num_classes {
                return Err(Error::Config(format!(
                    "bias_strength has {} entries for {} classes",
                    v.len(),
                    self.num_classes
                )));
            }
        }
        let floor = 1.0 / self.num_groups as f64;
        for y in 0..self.num_classes {
            let rho = self.rho(y);
            if !(rho >= floor - 1e-12 && rho <= 1.0) {
                return Err(Error::Config(format!(
                    "bias_strength {rho} for class {y} outside [1/G, 1] = [{floor}, 1]"
                )));
            }
        }
        if let Some(d) = &self.dominant_group {
            if d.len() != self.num_classes || d.iter().any(|&b| b >= self.num_groups) {
                return Err(Error::Config("dominant_group needs one valid group per class".into()));
            }
        }
        for (name, v) in [
            ("class_center_separation", self.class_center_separation),
            ("group_shift_magnitude", self.group_shift_magnitude),
            ("noise_sigma", self.noise_sigma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

/// Draws `samples_per_class` samples for each class, class by class. Ids are
/// the row index. Output depends only on the spec (including its seed).
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<GroupedDataset> {
    spec.validate()?;
    let c = spec.num_classes;
    let g = spec.num_groups;
    let center = spec.class_center_separation / std::f64::consts::SQRT_2;
    let mut rng = stream_rng(spec.seed, stream::GENERATE);
    let mut samples = Vec::with_capacity(c * spec.samples_per_class);
    for y in 0..c {
        let dom = spec.dominant(y);
        let rho = spec.rho(y);
        for _ in 0..spec.samples_per_class {
            let group = if g == 1 || rng.random::<f64>() < rho {
                dom
            } else {
                let k = rng.random_range(0..g - 1);
                if k >= dom {
                    k + 1
                } else {
                    k
                }
            };
            let mut features: Vec<f64> = (0..spec.feature_dim)
                .map(|_| spec.noise_sigma * rng.sample::<f64, _>(StandardNormal))
                .collect();
            features[y] += center;
            features[c + group] += spec.group_shift_magnitude;
            samples.push(Sample {
                id: samples.len() as u64,
                features,
                target: y,
                group,
            });
        }
    }
    GroupedDataset::with_feature_dim(samples, c, g, spec.feature_dim)
}
