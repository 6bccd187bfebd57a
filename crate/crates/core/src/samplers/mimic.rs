//! Bias Mimicking: one binary label view per class.
//!
//! The view `d_y` keeps every sample of class `y` as a positive and
//! undersamples each other class `y'` so that `P(B | Y = y')` matches
//! `P(B | Y = y)`. Within the view the target is then independent of the
//! group.
//!
//! Integer counts can only approximate a real-valued group distribution. For
//! class `y'` with group capacities `cap_b` and reference proportions
//! `p_b = c_b / D`, a count vector `n` is admissible when `n_b <= cap_b`,
//! `n_b = 0` wherever `p_b = 0`, and every entry is within one sample of its
//! exact share: `|n_b - p_b * T| <= 1` with `T = sum n`. Equivalently the
//! mimicking residual `|n_b / T - p_b|` is at most `1 / T`. [`mimic_row`]
//! returns the admissible vector with the largest total and, among those, the
//! one closest to exact proportions. All arithmetic is on integers.

use serde::{Deserialize, Serialize};

use super::Method;
use crate::dataset::split::choose_ordered;
use crate::dataset::{GroupedDataset, SubgroupTable};
use crate::error::{Error, Result};
use crate::rng::{stream, stream_rng};

/// Largest admissible count vector for `capacity` mimicking `reference`.
///
/// Returns all zeros if `reference` is empty.
pub fn mimic_row(reference: &[u64], capacity: &[u64]) -> Vec<u64> {
    assert_eq!(reference.len(), capacity.len(), "group count mismatch");
    let denom: u128 = reference.iter().map(|&c| c as u128).sum();
    let groups = reference.len();
    let mut kept = vec![0u64; groups];
    if denom == 0 {
        return kept;
    }
    let support: Vec<usize> = (0..groups).filter(|&b| reference[b] > 0).collect();

    // lo_b <= cap_b requires c_b T / D <= cap_b + 1.
    let mut upper: u128 = support.iter().map(|&b| capacity[b] as u128).sum();
    for &b in &support {
        upper = upper.min((capacity[b] as u128 + 1) * denom / reference[b] as u128);
    }

    let bounds = |total: u128, b: usize| {
        let num = reference[b] as u128 * total;
        let lo = num.div_ceil(denom).saturating_sub(1);
        let hi = (capacity[b] as u128).min(num / denom + 1);
        (lo, hi)
    };

    let best = (1..=upper).rev().find(|&total| {
        let mut hi_sum = 0u128;
        for &b in &support {
            let (lo, hi) = bounds(total, b);
            if lo > hi {
                return false;
            }
            hi_sum += hi;
        }
        hi_sum >= total
    });
    let Some(total) = best else {
        return kept;
    };

    let mut assigned = 0u128;
    let mut n = vec![0u128; groups];
    for &b in &support {
        let (_, hi) = bounds(total, b);
        n[b] = (reference[b] as u128 * total / denom).min(hi);
        assigned += n[b];
    }
    // Hand out the remainder one sample at a time to the group furthest below
    // its exact share. Deficits compare as `c_b T - n_b D` over the common D.
    while assigned < total {
        let b = support
            .iter()
            .copied()
            .filter(|&b| n[b] < bounds(total, b).1)
            .max_by(|&i, &j| {
                let di = (reference[i] as u128 * total) as i128 - (n[i] * denom) as i128;
                let dj = (reference[j] as u128 * total) as i128 - (n[j] * denom) as i128;
                di.cmp(&dj).then(j.cmp(&i))
            })
            .expect("feasible total leaves room");
        n[b] += 1;
        assigned += 1;
    }
    for b in 0..groups {
        kept[b] = n[b] as u64;
    }
    kept
}

/// Kept counts of the view for `class`: that class's row in full, every other
/// row mimicking its group distribution.
pub fn mimic_counts(t: &SubgroupTable, class: usize) -> Result<SubgroupTable> {
    if class >= t.num_classes() {
        return Err(Error::Config(format!("class {class} out of range (C = {})", t.num_classes())));
    }
    if t.class_total(class) == 0 {
        return Err(Error::EmptyClass(class));
    }
    let mut kept = t.clone();
    for other in (0..t.num_classes()).filter(|&c| c != class) {
        for (b, n) in mimic_row(t.row(class), t.row(other)).into_iter().enumerate() {
            kept.set(other, b, n);
        }
    }
    Ok(kept)
}

/// Interpolates between the original counts (`percent = 0`) and the fully
/// mimicked counts (`percent = 100`), rounding half up.
pub fn partial_mimic(t: &SubgroupTable, class: usize, percent: f64) -> Result<SubgroupTable> {
    if !(0.0..=100.0).contains(&percent) {
        return Err(Error::Config(format!("mimicking percentage {percent} outside [0, 100]")));
    }
    let full = mimic_counts(t, class)?;
    let frac = percent / 100.0;
    let mut kept = t.clone();
    for other in (0..t.num_classes()).filter(|&c| c != class) {
        for b in 0..t.num_groups() {
            let orig = t.get(other, b) as f64;
            let target = full.get(other, b) as f64;
            kept.set(other, b, (orig + frac * (target - orig) + 0.5).floor() as u64);
        }
    }
    Ok(kept)
}

/// Binary relabeling of a subsample of the dataset for one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelView {
    pub positive_class: usize,
    /// Every sample of `positive_class`, in dataset order.
    pub positive_ids: Vec<u64>,
    /// Retained samples of the other classes, in dataset order.
    pub negative_ids: Vec<u64>,
    /// Subgroup counts over the included ids.
    pub kept: SubgroupTable,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl LabelView {
    pub fn len(&self) -> usize {
        self.positive_ids.len() + self.negative_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn included_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.positive_ids.iter().chain(&self.negative_ids).copied()
    }

    /// Binary label per dataset position: `Some(true)` positive,
    /// `Some(false)` negative, `None` excluded.
    pub fn labels_by_position(&self, d: &GroupedDataset) -> Result<Vec<Option<bool>>> {
        let mut labels = vec![None; d.len()];
        for (ids, label) in [(&self.positive_ids, true), (&self.negative_ids, false)] {
            for &id in ids {
                let pos = d
                    .position(id)
                    .ok_or_else(|| Error::Data(format!("view for class {} names unknown id {id}", self.positive_class)))?;
                labels[pos] = Some(label);
            }
        }
        Ok(labels)
    }

    /// Label of `id` in this view, `None` if excluded.
    pub fn binary_label(&self, d: &GroupedDataset, id: u64) -> Option<bool> {
        let s = d.get(id)?;
        let list = if s.target == self.positive_class {
            &self.positive_ids
        } else {
            &self.negative_ids
        };
        list.binary_search_by_key(&d.position(id), |&i| d.position(i))
            .ok()
            .map(|_| s.target == self.positive_class)
    }
}

/// Serialized form of a set of views.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewSet {
    pub method: Method,
    pub seed: u64,
    /// Mimicking percentage (100 for full Bias Mimicking).
    pub percent: f64,
    pub views: Vec<LabelView>,
}

fn check_classes(d: &GroupedDataset) -> Result<SubgroupTable> {
    if d.is_empty() {
        return Err(Error::Data("cannot build label views of an empty dataset".into()));
    }
    let t = d.subgroup_table();
    match (0..t.num_classes()).find(|&y| t.class_total(y) == 0) {
        Some(y) => Err(Error::EmptyClass(y)),
        None => Ok(t),
    }
}

/// One fully mimicked view per class.
pub fn build_label_views(d: &GroupedDataset, seed: u64) -> Result<Vec<LabelView>> {
    build_partial_views(d, 100.0, seed)
}

/// One view per class with mimicking applied at `percent`.
pub fn build_partial_views(d: &GroupedDataset, percent: f64, seed: u64) -> Result<Vec<LabelView>> {
    let t = check_classes(d)?;
    let counts = (0..t.num_classes())
        .map(|y| partial_mimic(&t, y, percent))
        .collect::<Result<Vec<_>>>()?;
    build_views_from_counts(d, &counts, seed)
}

/// Realizes per-view count tables by seeded uniform subsampling. `counts[y]`
/// must keep row `y` whole and stay within every subgroup's capacity.
pub fn build_views_from_counts(d: &GroupedDataset, counts: &[SubgroupTable], seed: u64) -> Result<Vec<LabelView>> {
    let t = check_classes(d)?;
    if counts.len() != t.num_classes() {
        return Err(Error::Data(format!("{} count tables for {} classes", counts.len(), t.num_classes())));
    }
    counts
        .iter()
        .enumerate()
        .map(|(y, kept)| realize(d, &t, y, kept, seed))
        .collect()
}

/// Redraws the negatives of `view` with a new seed, keeping its counts.
pub fn resample_view(d: &GroupedDataset, view: &LabelView, seed: u64) -> Result<LabelView> {
    let t = check_classes(d)?;
    realize(d, &t, view.positive_class, &view.kept, seed)
}

fn realize(d: &GroupedDataset, t: &SubgroupTable, class: usize, kept: &SubgroupTable, seed: u64) -> Result<LabelView> {
    if kept.row(class) != t.row(class) {
        return Err(Error::Data(format!("view for class {class} must keep the class whole")));
    }
    let mut rng = stream_rng(seed, stream::LABEL_VIEW + class as u64);
    let mut warnings = Vec::new();
    let mut negative_ids = Vec::new();
    for other in (0..t.num_classes()).filter(|&c| c != class) {
        for b in 0..t.num_groups() {
            let n = kept.get(other, b);
            if n > t.get(other, b) {
                return Err(Error::Data(format!(
                    "view {class}: {n} samples requested from subgroup (y={other}, b={b}) of size {}",
                    t.get(other, b)
                )));
            }
            if t.get(class, b) > 0 && t.get(other, b) == 0 {
                warnings.push(format!(
                    "group {b} is present in class {class} but absent from class {other}; class {other} retains {} samples",
                    kept.class_total(other)
                ));
            }
            negative_ids.extend(choose_ordered(d.subgroup(other, b), n as usize, &mut rng));
        }
    }
    negative_ids.sort_by_key(|&id| d.position(id));
    let positive_ids: Vec<u64> = d.ids().filter(|&id| d.get(id).unwrap().target == class).collect();
    Ok(LabelView {
        positive_class: class,
        positive_ids,
        negative_ids,
        kept: kept.clone(),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn table(rows: &[Vec<u64>]) -> SubgroupTable {
        SubgroupTable::from_rows(rows).unwrap()
    }

    /// Brute force: every vector below capacity (zero off the reference
    /// support), keeping the largest total whose residual is within 1 / total.
    fn exhaustive_best(reference: &[u64], capacity: &[u64]) -> u64 {
        let d: u64 = reference.iter().sum();
        let mut best = 0;
        let mut n = vec![0u64; reference.len()];
        loop {
            let total: u64 = n.iter().sum();
            if total > best && (0..n.len()).all(|b| (n[b] * d).abs_diff(reference[b] * total) <= d) {
                best = total;
            }
            let mut b = 0;
            loop {
                if b == n.len() {
                    return best;
                }
                let cap = if reference[b] == 0 { 0 } else { capacity[b] };
                if n[b] < cap {
                    n[b] += 1;
                    break;
                }
                n[b] = 0;
                b += 1;
            }
        }
    }

    fn residual(reference: &[u64], kept: &[u64]) -> f64 {
        let d: u64 = reference.iter().sum();
        let total: u64 = kept.iter().sum();
        (0..kept.len())
            .map(|b| (kept[b] as f64 / total as f64 - reference[b] as f64 / d as f64).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn skewed_table_matches_exhaustive_oracle() {
        let t = table(&[vec![90, 10], vec![50, 50]]);
        assert_eq!(exhaustive_best(&[90, 10], &[50, 50]), 56);
        assert_eq!(exhaustive_best(&[50, 50], &[90, 10]), 22);
        assert_eq!(mimic_counts(&t, 0).unwrap().rows(), vec![vec![90, 10], vec![50, 6]]);
        assert_eq!(mimic_counts(&t, 1).unwrap().rows(), vec![vec![12, 10], vec![50, 50]]);
    }

    #[test]
    fn proportional_rows_are_kept_whole() {
        let t = table(&[vec![60, 20, 20], vec![30, 10, 10], vec![9, 3, 3]]);
        for y in 0..3 {
            assert_eq!(mimic_counts(&t, y).unwrap(), t);
        }
    }

    #[test]
    fn zero_probability_groups_are_dropped() {
        let kept = mimic_row(&[10, 0, 30], &[40, 40, 40]);
        assert_eq!(kept[1], 0);
        assert_eq!(kept, vec![14, 0, 40]);
        assert_eq!(exhaustive_best(&[10, 0, 30], &[40, 40, 40]), 54);
    }

    #[test]
    fn missing_group_keeps_a_small_admissible_sample() {
        // p = (0.9, 0.1) with no samples in group 1: totals up to 10 stay
        // within one sample of the exact share.
        assert_eq!(mimic_row(&[90, 10], &[50, 0]), vec![10, 0]);
        assert_eq!(exhaustive_best(&[90, 10], &[50, 0]), 10);
    }

    #[test]
    fn empty_class_is_an_error() {
        let t = table(&[vec![0, 0], vec![5, 5]]);
        assert!(matches!(mimic_counts(&t, 0), Err(Error::EmptyClass(0))));
        assert!(mimic_counts(&t, 4).is_err());
    }

    #[test]
    fn partial_endpoints_and_midpoint() {
        let t = table(&[vec![90, 10], vec![50, 50]]);
        assert_eq!(partial_mimic(&t, 0, 0.0).unwrap(), t);
        assert_eq!(partial_mimic(&t, 0, 100.0).unwrap(), mimic_counts(&t, 0).unwrap());
        // round(50 + 0.5 * (6 - 50)) = 28
        assert_eq!(partial_mimic(&t, 0, 50.0).unwrap().row(1), &[50, 28]);
        assert!(partial_mimic(&t, 0, 100.5).is_err());
        assert!(partial_mimic(&t, 0, -1.0).is_err());
    }

    #[test]
    fn views_on_skewed_dataset() {
        let t = table(&[vec![90, 10], vec![50, 50]]);
        let d = GroupedDataset::from_table(&t);
        let views = build_label_views(&d, 3).unwrap();
        assert_eq!((views[0].positive_ids.len(), views[0].negative_ids.len()), (100, 56));
        assert_eq!((views[1].positive_ids.len(), views[1].negative_ids.len()), (100, 22));
        let mut positives: Vec<u64> = views.iter().flat_map(|v| v.positive_ids.clone()).collect();
        positives.sort_unstable();
        assert_eq!(positives, (0..200).collect::<Vec<_>>());
        for v in &views {
            assert_eq!(GroupedDataset::subset(&d, &v.included_ids().collect::<Vec<_>>()).unwrap().subgroup_table(), v.kept);
            assert_eq!(v.binary_label(&d, v.negative_ids[0]), Some(false));
            assert_eq!(v.binary_label(&d, v.positive_ids[0]), Some(true));
        }
        assert_eq!(views, build_label_views(&d, 3).unwrap());
        assert_ne!(views[0].negative_ids, build_label_views(&d, 4).unwrap()[0].negative_ids);
    }

    #[test]
    fn balanced_views_include_everything() {
        let d = GroupedDataset::from_table(&table(&[vec![8, 8], vec![8, 8]]));
        for v in build_label_views(&d, 0).unwrap() {
            assert_eq!(v.len(), 32);
        }
    }

    proptest! {
        #[test]
        fn row_is_maximal_and_within_bound(
            reference in prop::collection::vec(0u64..12, 2..4),
            capacity in prop::collection::vec(0u64..12, 4),
        ) {
            prop_assume!(reference.iter().sum::<u64>() > 0);
            let capacity = &capacity[..reference.len()];
            let kept = mimic_row(&reference, capacity);
            let total: u64 = kept.iter().sum();
            prop_assert_eq!(total, exhaustive_best(&reference, capacity));
            prop_assert!(kept.iter().zip(capacity).all(|(n, c)| n <= c));
            if total > 0 {
                prop_assert!(residual(&reference, &kept) <= 1.0 / total as f64 + 1e-12);
            }
        }

        #[test]
        fn partial_is_monotone(
            rows in prop::collection::vec(prop::collection::vec(1u64..60, 3), 2..4),
            steps in prop::collection::vec(0.0f64..100.0, 1..6),
        ) {
            let t = SubgroupTable::from_rows(&rows).unwrap();
            let mut xs = steps.clone();
            xs.push(0.0);
            xs.push(100.0);
            xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let full = mimic_counts(&t, 0).unwrap();
            let tables: Vec<_> = xs.iter().map(|&x| partial_mimic(&t, 0, x).unwrap()).collect();
            for w in tables.windows(2) {
                for y in 1..t.num_classes() {
                    for b in 0..3 {
                        let (o, f) = (t.get(y, b), full.get(y, b));
                        let (a, c) = (w[0].get(y, b), w[1].get(y, b));
                        if f <= o { prop_assert!(c <= a) } else { prop_assert!(c >= a) }
                    }
                }
            }
        }
    }
}
