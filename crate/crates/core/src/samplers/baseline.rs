use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Method;
use crate::dataset::split::choose_ordered;
use crate::dataset::{GroupedDataset, SubgroupTable};
use crate::error::{Error, Result};
use crate::rng::{stream, stream_rng};

/// A resampled (or reweighted) training stream.
///
/// `ids` lists the sample ids fed to training in dataset order; oversampled
/// ids repeat. `counts` holds the kept or replicated count per subgroup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResamplePlan {
    pub method: Method,
    pub seed: u64,
    pub counts: SubgroupTable,
    pub ids: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<SampleWeights>,
}

/// Per-sample loss weights `N / |g_{y,b}|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleWeights {
    /// Weight of each subgroup, row-major `[y][b]`.
    pub subgroup: Vec<Vec<f64>>,
    pub weight: BTreeMap<u64, f64>,
}

impl SampleWeights {
    pub fn get(&self, id: u64) -> Option<f64> {
        self.weight.get(&id).copied()
    }
}

fn require_nonempty(t: &SubgroupTable) -> Result<()> {
    match t.first_empty() {
        Some((class, group)) => Err(Error::EmptySubgroup { class, group }),
        None => Ok(()),
    }
}

/// Every subgroup reduced to the smallest subgroup size.
pub fn undersample_counts(t: &SubgroupTable) -> Result<SubgroupTable> {
    require_nonempty(t)?;
    let m = t.min_count();
    Ok(SubgroupTable::from_rows(&vec![vec![m; t.num_groups()]; t.num_classes()])?)
}

/// Every subgroup raised to the largest subgroup size.
pub fn oversample_counts(t: &SubgroupTable) -> Result<SubgroupTable> {
    require_nonempty(t)?;
    let m = t.max_count();
    Ok(SubgroupTable::from_rows(&vec![vec![m; t.num_groups()]; t.num_classes()])?)
}

fn in_dataset_order(d: &GroupedDataset, mut ids: Vec<u64>) -> Vec<u64> {
    ids.sort_by_key(|&id| d.position(id));
    ids
}

/// Keeps a uniform random subset of `min |g|` ids from every subgroup.
pub fn undersample(d: &GroupedDataset, seed: u64) -> Result<ResamplePlan> {
    let counts = undersample_counts(&d.subgroup_table())?;
    let mut rng = stream_rng(seed, stream::UNDERSAMPLE);
    let mut ids = Vec::new();
    for y in 0..d.num_classes() {
        for b in 0..d.num_groups() {
            ids.extend(choose_ordered(d.subgroup(y, b), counts.get(y, b) as usize, &mut rng));
        }
    }
    Ok(ResamplePlan {
        method: Method::Undersample,
        seed,
        counts,
        ids: in_dataset_order(d, ids),
        weights: None,
    })
}

/// Replicates every subgroup up to `max |g|`: each id appears
/// `max / |g|` times, plus once more for a seeded random `max mod |g|` of them.
pub fn oversample(d: &GroupedDataset, seed: u64) -> Result<ResamplePlan> {
    let counts = oversample_counts(&d.subgroup_table())?;
    let mut rng = stream_rng(seed, stream::OVERSAMPLE);
    let mut ids = Vec::new();
    for y in 0..d.num_classes() {
        for b in 0..d.num_groups() {
            let members = d.subgroup(y, b);
            let target = counts.get(y, b) as usize;
            let copies = target / members.len();
            for _ in 0..copies {
                ids.extend_from_slice(members);
            }
            ids.extend(choose_ordered(members, target % members.len(), &mut rng));
        }
    }
    Ok(ResamplePlan {
        method: Method::Oversample,
        seed,
        counts,
        ids: in_dataset_order(d, ids),
        weights: None,
    })
}

/// Inverse subgroup frequency weights. Each subgroup's weights sum to the
/// dataset size.
pub fn upweight(d: &GroupedDataset) -> Result<ResamplePlan> {
    let t = d.subgroup_table();
    require_nonempty(&t)?;
    let total = t.total() as f64;
    let subgroup: Vec<Vec<f64>> = (0..t.num_classes())
        .map(|y| (0..t.num_groups()).map(|b| total / t.get(y, b) as f64).collect())
        .collect();
    let weight = d
        .samples()
        .iter()
        .map(|s| (s.id, subgroup[s.target][s.group]))
        .collect();
    Ok(ResamplePlan {
        method: Method::Upweight,
        seed: 0,
        counts: t,
        ids: d.ids().collect(),
        weights: Some(SampleWeights { subgroup, weight }),
    })
}
