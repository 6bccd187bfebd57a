//! Grouped datasets: samples carrying a target class and a sensitive group,
//! indexed by subgroup `(y, b)`.

mod csv;
pub(crate) mod split;
mod synthetic;
mod table;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub use self::csv::{export_csv, load_csv, CsvSchema};
pub use self::split::{balance_subgroups, split};
pub use self::synthetic::{generate_synthetic, PerClass, SyntheticSpec};
pub use self::table::SubgroupTable;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: u64,
    pub features: Vec<f64>,
    pub target: usize,
    pub group: usize,
}

/// An immutable list of samples with a subgroup index.
///
/// Construction validates that every target and group is in range, that
/// feature vectors share one dimensionality and that ids are unique. Every id
/// then appears in exactly one subgroup list.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedDataset {
    samples: Vec<Sample>,
    num_classes: usize,
    num_groups: usize,
    feature_dim: usize,
    subgroups: Vec<Vec<u64>>,
    positions: HashMap<u64, usize>,
}

impl GroupedDataset {
    pub fn new(samples: Vec<Sample>, num_classes: usize, num_groups: usize) -> Result<Self> {
        let feature_dim = samples.first().map_or(0, |s| s.features.len());
        Self::with_feature_dim(samples, num_classes, num_groups, feature_dim)
    }

    pub fn with_feature_dim(
        samples: Vec<Sample>,
        num_classes: usize,
        num_groups: usize,
        feature_dim: usize,
    ) -> Result<Self> {
        if num_classes == 0 || num_groups == 0 {
            return Err(Error::Data("number of classes and groups must be positive".into()));
        }
        let mut subgroups = vec![Vec::new(); num_classes * num_groups];
        let mut positions = HashMap::with_capacity(samples.len());
        for (pos, s) in samples.iter().enumerate() {
            if s.target >= num_classes {
                return Err(Error::Data(format!(
                    "sample {}: class {} out of range (C = {num_classes})",
                    s.id, s.target
                )));
            }
            if s.group >= num_groups {
                return Err(Error::Data(format!(
                    "sample {}: group {} out of range (G = {num_groups})",
                    s.id, s.group
                )));
            }
            if s.features.len() != feature_dim {
                return Err(Error::Dimension {
                    expected: feature_dim,
                    actual: s.features.len(),
                });
            }
            if positions.insert(s.id, pos).is_some() {
                return Err(Error::Data(format!("duplicate sample id {}", s.id)));
            }
            subgroups[s.target * num_groups + s.group].push(s.id);
        }
        Ok(Self {
            samples,
            num_classes,
            num_groups,
            feature_dim,
            subgroups,
            positions,
        })
    }

    /// A featureless dataset realizing `table`, with ids assigned row-major.
    /// Useful for exercising samplers on count tables alone.
    pub fn from_table(table: &SubgroupTable) -> Self {
        let mut samples = Vec::with_capacity(table.total() as usize);
        for y in 0..table.num_classes() {
            for b in 0..table.num_groups() {
                for _ in 0..table.get(y, b) {
                    samples.push(Sample {
                        id: samples.len() as u64,
                        features: Vec::new(),
                        target: y,
                        group: b,
                    });
                }
            }
        }
        Self::with_feature_dim(samples, table.num_classes(), table.num_groups(), 0)
            .expect("table-derived samples are valid")
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_groups(&self) -> usize {
        self.num_groups
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Ids of subgroup `(class, group)` in dataset order.
    pub fn subgroup(&self, class: usize, group: usize) -> &[u64] {
        &self.subgroups[class * self.num_groups + group]
    }

    pub fn position(&self, id: u64) -> Option<usize> {
        self.positions.get(&id).copied()
    }

    pub fn get(&self, id: u64) -> Option<&Sample> {
        self.position(id).map(|p| &self.samples[p])
    }

    pub fn ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.samples.iter().map(|s| s.id)
    }

    pub fn subgroup_table(&self) -> SubgroupTable {
        subgroup_table(self)
    }

    /// New dataset holding the samples with the given ids, in the given order.
    pub fn subset(&self, ids: &[u64]) -> Result<Self> {
        let samples = ids
            .iter()
            .map(|&id| {
                self.get(id)
                    .cloned()
                    .ok_or_else(|| Error::Data(format!("unknown sample id {id}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::with_feature_dim(samples, self.num_classes, self.num_groups, self.feature_dim)
    }
}

/// Counts of every subgroup list.
pub fn subgroup_table(d: &GroupedDataset) -> SubgroupTable {
    let mut t = SubgroupTable::zeros(d.num_classes, d.num_groups);
    for s in &d.samples {
        t.increment(s.target, s.group);
    }
    t
}
