use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Subgroup counts `counts[y][b]` over a `C x G` grid.
///
/// This is the object every sampler transforms. Probabilities derived from it
/// (`P(Y,B)`, `P(B|Y)`, `P(Y|B)`, marginals) are returned as `None` when the
/// conditioning row or column has no mass.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubgroupTable {
    num_classes: usize,
    num_groups: usize,
    counts: Vec<u64>,
}

impl SubgroupTable {
    pub fn zeros(num_classes: usize, num_groups: usize) -> Self {
        Self {
            num_classes,
            num_groups,
            counts: vec![0; num_classes * num_groups],
        }
    }

    /// Builds a table from one row per class. All rows must have the same length.
    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let num_groups = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || num_groups == 0 {
            return Err(Error::Data("subgroup table needs at least one class and one group".into()));
        }
        if let Some(bad) = rows.iter().position(|r| r.len() != num_groups) {
            return Err(Error::Data(format!(
                "row {bad} has {} groups, expected {num_groups}",
                rows[bad].len()
            )));
        }
        Ok(Self {
            num_classes: rows.len(),
            num_groups,
            counts: rows.concat(),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_groups(&self) -> usize {
        self.num_groups
    }

    pub fn get(&self, class: usize, group: usize) -> u64 {
        self.counts[class * self.num_groups + group]
    }

    pub fn set(&mut self, class: usize, group: usize, count: u64) {
        self.counts[class * self.num_groups + group] = count;
    }

    pub(crate) fn increment(&mut self, class: usize, group: usize) {
        self.counts[class * self.num_groups + group] += 1;
    }

    pub fn row(&self, class: usize) -> &[u64] {
        &self.counts[class * self.num_groups..(class + 1) * self.num_groups]
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        (0..self.num_classes).map(|y| self.row(y).to_vec()).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn class_total(&self, class: usize) -> u64 {
        self.row(class).iter().sum()
    }

    pub fn group_total(&self, group: usize) -> u64 {
        (0..self.num_classes).map(|y| self.get(y, group)).sum()
    }

    pub fn min_count(&self) -> u64 {
        self.counts.iter().copied().min().unwrap_or(0)
    }

    pub fn max_count(&self) -> u64 {
        self.counts.iter().copied().max().unwrap_or(0)
    }

    /// First empty subgroup in row-major order, if any.
    pub fn first_empty(&self) -> Option<(usize, usize)> {
        self.counts
            .iter()
            .position(|&c| c == 0)
            .map(|i| (i / self.num_groups, i % self.num_groups))
    }

    /// Group with the largest count in `class`; ties go to the lowest index.
    /// The flag is true when the maximum is shared.
    pub fn dominant_group(&self, class: usize) -> (usize, bool) {
        let row = self.row(class);
        let max = row.iter().copied().max().unwrap_or(0);
        let dom = row.iter().position(|&c| c == max).unwrap_or(0);
        let tied = row.iter().filter(|&&c| c == max).count() > 1;
        (dom, tied)
    }

    pub fn p_joint(&self, class: usize, group: usize) -> Option<f64> {
        let total = self.total();
        (total > 0).then(|| self.get(class, group) as f64 / total as f64)
    }

    pub fn p_class(&self, class: usize) -> Option<f64> {
        let total = self.total();
        (total > 0).then(|| self.class_total(class) as f64 / total as f64)
    }

    pub fn p_group(&self, group: usize) -> Option<f64> {
        let total = self.total();
        (total > 0).then(|| self.group_total(group) as f64 / total as f64)
    }

    /// `P(B = group | Y = class)`.
    pub fn p_group_given_class(&self, group: usize, class: usize) -> Option<f64> {
        let n = self.class_total(class);
        (n > 0).then(|| self.get(class, group) as f64 / n as f64)
    }

    /// `P(Y = class | B = group)`.
    pub fn p_class_given_group(&self, class: usize, group: usize) -> Option<f64> {
        let n = self.group_total(group);
        (n > 0).then(|| self.get(class, group) as f64 / n as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_distributions_sum_to_one() {
        let t = SubgroupTable::from_rows(&[vec![90, 10, 3], vec![50, 50, 0], vec![1, 2, 7]]).unwrap();
        assert_eq!(t.total(), 213);
        let joint: f64 = (0..3).flat_map(|y| (0..3).map(move |b| (y, b))).map(|(y, b)| t.p_joint(y, b).unwrap()).sum();
        assert!((joint - 1.0).abs() < 1e-12);
        for y in 0..3 {
            let s: f64 = (0..3).map(|b| t.p_group_given_class(b, y).unwrap()).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        for b in 0..3 {
            let s: f64 = (0..3).map(|y| t.p_class_given_group(y, b).unwrap()).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        let py: f64 = (0..3).map(|y| t.p_class(y).unwrap()).sum();
        let pb: f64 = (0..3).map(|b| t.p_group(b).unwrap()).sum();
        assert!((py - 1.0).abs() < 1e-12 && (pb - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_rows_have_no_conditional() {
        let t = SubgroupTable::from_rows(&[vec![0, 0], vec![3, 1]]).unwrap();
        assert_eq!(t.p_group_given_class(0, 0), None);
        assert_eq!(t.first_empty(), Some((0, 0)));
        assert_eq!(SubgroupTable::zeros(2, 2).p_class(0), None);
    }

    #[test]
    fn dominant_group_ties_go_low() {
        let t = SubgroupTable::from_rows(&[vec![90, 10], vec![50, 50]]).unwrap();
        assert_eq!(t.dominant_group(0), (0, false));
        assert_eq!(t.dominant_group(1), (0, true));
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(SubgroupTable::from_rows(&[vec![1, 2], vec![3]]).is_err());
        assert!(SubgroupTable::from_rows(&[]).is_err());
    }
}
