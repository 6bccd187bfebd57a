use rand::seq::{index, SliceRandom};

use super::GroupedDataset;
use crate::error::{Error, Result};
use crate::rng::{stream, stream_rng};

/// Uniformly picks `k` of `ids` without replacement; the result keeps the
/// input order.
pub(crate) fn choose_ordered(ids: &[u64], k: usize, rng: &mut crate::rng::Rng) -> Vec<u64> {
    let mut picked = index::sample(rng, ids.len(), k).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| ids[i]).collect()
}

/// Stratified train/test split.
///
/// Each subgroup is shuffled and cut at `round(train_frac * n)`, clamped so
/// both sides get at least one sample. With `balanced_test`, every test
/// subgroup is then subsampled down to the smallest test subgroup. Both
/// outputs keep the original sample order.
pub fn split(
    d: &GroupedDataset,
    train_frac: f64,
    balanced_test: bool,
    seed: u64,
) -> Result<(GroupedDataset, GroupedDataset)> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::Config(format!("train_frac {train_frac} must lie in (0, 1)")));
    }
    let mut rng = stream_rng(seed, stream::SPLIT);
    let mut in_train = vec![false; d.len()];
    for y in 0..d.num_classes() {
        for b in 0..d.num_groups() {
            let ids = d.subgroup(y, b);
            if ids.len() < 2 {
                return Err(Error::Data(format!(
                    "subgroup (y={y}, b={b}) has {} samples; need at least 2 to split",
                    ids.len()
                )));
            }
            let n_train = ((train_frac * ids.len() as f64).round() as usize).clamp(1, ids.len() - 1);
            let mut shuffled = ids.to_vec();
            shuffled.shuffle(&mut rng);
            for &id in &shuffled[..n_train] {
                in_train[d.position(id).expect("indexed id")] = true;
            }
        }
    }
    let (train_ids, test_ids): (Vec<u64>, Vec<u64>) = d.ids().partition(|&id| in_train[d.position(id).unwrap()]);
    let train = d.subset(&train_ids)?;
    let test = d.subset(&test_ids)?;
    let test = if balanced_test { balance_subgroups(&test, seed)? } else { test };
    Ok((train, test))
}

/// Subsamples every subgroup to the size of the smallest one.
pub fn balance_subgroups(d: &GroupedDataset, seed: u64) -> Result<GroupedDataset> {
    let m = d.subgroup_table().min_count() as usize;
    let mut rng = stream_rng(seed, stream::BALANCE);
    let mut keep = vec![false; d.len()];
    for y in 0..d.num_classes() {
        for b in 0..d.num_groups() {
            for id in choose_ordered(d.subgroup(y, b), m, &mut rng) {
                keep[d.position(id).unwrap()] = true;
            }
        }
    }
    let ids: Vec<u64> = d.ids().filter(|&id| keep[d.position(id).unwrap()]).collect();
    d.subset(&ids)
}
