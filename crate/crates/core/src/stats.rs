//! Exact residual checks on finite subgroup tables.
//!
//! [`check_mimicking`] measures how far every class's group distribution is
//! from a reference class's (`max |P(b|y') - P(b|y)|`). [`verify_proposition1`]
//! measures the dependence of target on group (`max |P(y|b) - P(y)|`) and
//! checks it against the bound implied by the spread of the conditional group
//! distributions:
//!
//! ```text
//! |P(y|b) - P(y)| = P(y) |P(b|y) - P(b)| / P(b)
//!                <= P(y) (1 - P(y)) spread_b / P(b)
//! spread_b        = max_{i,j} |P(b|i) - P(b|j)|
//! ```
//!
//! which follows from `P(b) = sum_y' P(b|y') P(y')`. With equal conditionals
//! the spread is zero and so is the dependence. Residual numerators are
//! computed in integers, so exactly proportional tables give exactly zero.

use serde::{Deserialize, Serialize};

use crate::dataset::SubgroupTable;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    Mimicking,
    Proposition1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndependenceReport {
    pub check: Check,
    pub reference_class: Option<usize>,
    /// `max_{y',b} |P(b|y') - P(b|reference)|`, or the largest pairwise spread
    /// when there is no reference class.
    pub max_residual_eq1: f64,
    /// `max_{y,b} |P(y|b) - P(y)|` over groups with mass.
    pub max_residual_prop1: f64,
    /// Residual per class and group of the check that was run.
    pub residuals: Vec<Vec<f64>>,
    /// Bound on `max_residual_prop1` implied by the conditional spread.
    pub consequence_bound: f64,
    pub bound_holds: bool,
    pub tolerance: f64,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl IndependenceReport {
    pub fn max_residual(&self) -> f64 {
        match self.check {
            Check::Mimicking => self.max_residual_eq1,
            Check::Proposition1 => self.max_residual_prop1,
        }
    }
}

fn require_rows(t: &SubgroupTable) -> Result<()> {
    match (0..t.num_classes()).find(|&y| t.class_total(y) == 0) {
        Some(y) => Err(Error::EmptyClass(y)),
        None => Ok(()),
    }
}

/// `|P(b|i) - P(b|j)|` from integer cross products.
fn conditional_gap(t: &SubgroupTable, b: usize, i: usize, j: usize) -> f64 {
    let (ni, nj) = (t.class_total(i) as i128, t.class_total(j) as i128);
    let num = (t.get(i, b) as i128 * nj - t.get(j, b) as i128 * ni).abs();
    num as f64 / (ni * nj) as f64
}

fn spread(t: &SubgroupTable, b: usize) -> f64 {
    let c = t.num_classes();
    (0..c)
        .flat_map(|i| (i + 1..c).map(move |j| (i, j)))
        .map(|(i, j)| conditional_gap(t, b, i, j))
        .fold(0.0, f64::max)
}

struct Dependence {
    residuals: Vec<Vec<f64>>,
    max: f64,
    bound: f64,
    holds: bool,
    notes: Vec<String>,
}

fn dependence(t: &SubgroupTable) -> Dependence {
    let total = t.total() as i128;
    let mut residuals = vec![vec![0.0; t.num_groups()]; t.num_classes()];
    let (mut max, mut bound, mut holds) = (0.0f64, 0.0f64, true);
    let mut notes = Vec::new();
    for b in 0..t.num_groups() {
        let nb = t.group_total(b) as i128;
        if nb == 0 {
            notes.push(format!("group {b} has no mass; skipped"));
            continue;
        }
        let s = spread(t, b);
        let pb = nb as f64 / total as f64;
        for (y, row) in residuals.iter_mut().enumerate() {
            let ny = t.class_total(y) as i128;
            let num = (t.get(y, b) as i128 * total - ny * nb).abs();
            let r = num as f64 / (nb * total) as f64;
            let py = ny as f64 / total as f64;
            let cell_bound = py * (1.0 - py) * s / pb;
            row[b] = r;
            max = max.max(r);
            bound = bound.max(cell_bound);
            holds &= r <= cell_bound + 1e-12;
        }
    }
    Dependence {
        residuals,
        max,
        bound,
        holds,
        notes,
    }
}

/// Residual of the mimicking condition against `reference`.
pub fn check_mimicking(t: &SubgroupTable, reference: usize, tolerance: f64) -> Result<IndependenceReport> {
    if reference >= t.num_classes() {
        return Err(Error::Config(format!("reference class {reference} out of range")));
    }
    require_rows(t)?;
    let residuals: Vec<Vec<f64>> = (0..t.num_classes())
        .map(|y| (0..t.num_groups()).map(|b| conditional_gap(t, b, y, reference)).collect())
        .collect();
    let max_eq1 = residuals.iter().flatten().copied().fold(0.0, f64::max);
    let dep = dependence(t);
    Ok(IndependenceReport {
        check: Check::Mimicking,
        reference_class: Some(reference),
        max_residual_eq1: max_eq1,
        max_residual_prop1: dep.max,
        residuals,
        consequence_bound: dep.bound,
        bound_holds: dep.holds,
        tolerance,
        pass: max_eq1 <= tolerance,
        notes: dep.notes,
    })
}

/// Dependence of target on group, with the spread-implied bound.
pub fn verify_proposition1(t: &SubgroupTable, tolerance: f64) -> Result<IndependenceReport> {
    require_rows(t)?;
    let dep = dependence(t);
    let max_spread = (0..t.num_groups()).map(|b| spread(t, b)).fold(0.0, f64::max);
    Ok(IndependenceReport {
        check: Check::Proposition1,
        reference_class: None,
        max_residual_eq1: max_spread,
        max_residual_prop1: dep.max,
        residuals: dep.residuals,
        consequence_bound: dep.bound,
        bound_holds: dep.holds,
        tolerance,
        pass: dep.max <= tolerance,
        notes: dep.notes,
    })
}

/// `2 / min_y n_y`: the largest pairwise conditional spread a mimicked view
/// can show, since each class is within `1 / n_y` of the reference.
pub fn default_tolerance(t: &SubgroupTable) -> f64 {
    let min = (0..t.num_classes()).map(|y| t.class_total(y)).min().unwrap_or(0);
    if min == 0 {
        0.0
    } else {
        2.0 / min as f64
    }
}

/// Bound on `max |P(y|b) - P(y)|` for a view whose conditional spread is at
/// most [`default_tolerance`]:
/// `default_tolerance * max_y P(y)(1 - P(y)) / min_b P(b)`.
pub fn proposition1_rounding_bound(t: &SubgroupTable) -> f64 {
    let py = (0..t.num_classes())
        .filter_map(|y| t.p_class(y))
        .map(|p| p * (1.0 - p))
        .fold(0.0, f64::max);
    let pb = (0..t.num_groups())
        .filter_map(|b| t.p_group(b))
        .filter(|&p| p > 0.0)
        .fold(f64::INFINITY, f64::min);
    if pb.is_finite() {
        default_tolerance(t) * py / pb
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn table(rows: &[Vec<u64>]) -> SubgroupTable {
        SubgroupTable::from_rows(rows).unwrap()
    }

    #[test]
    fn uniform_table_has_zero_residual() {
        let r = check_mimicking(&table(&[vec![5, 5], vec![7, 7]]), 0, 0.0).unwrap();
        assert_eq!(r.max_residual_eq1, 0.0);
        assert!(r.pass);
    }

    #[test]
    fn near_mimicked_table() {
        let r = check_mimicking(&table(&[vec![90, 10], vec![50, 5]]), 0, 0.01).unwrap();
        assert!((r.max_residual_eq1 - (50.0 / 55.0 - 0.9f64).abs()).abs() < 1e-15);
        assert!((r.max_residual_eq1 - 0.00909).abs() < 1e-5);
        assert!(r.pass);
    }

    #[test]
    fn unmimicked_table() {
        let r = check_mimicking(&table(&[vec![90, 10], vec![50, 50]]), 0, 0.1).unwrap();
        assert!((r.max_residual_eq1 - 0.4).abs() < 1e-15);
        assert!(!r.pass);
    }

    #[test]
    fn proposition1_on_skewed_table() {
        let r = verify_proposition1(&table(&[vec![90, 10], vec![50, 50]]), 1e-12).unwrap();
        // P(y=0|b=0) = 90/140 = 9/14, P(y=0) = 1/2
        assert!((r.residuals[0][0] - (9.0 / 14.0 - 0.5)).abs() < 1e-15);
        assert!(r.max_residual_prop1 > 0.0);
        assert!(!r.pass);
        assert!(r.bound_holds);
    }

    #[test]
    fn identical_conditionals_give_exact_zero() {
        let r = verify_proposition1(&table(&[vec![6, 3, 3], vec![2, 1, 1], vec![40, 20, 20]]), 0.0).unwrap();
        assert_eq!(r.max_residual_prop1, 0.0);
        assert_eq!(r.consequence_bound, 0.0);
        assert!(r.pass);
    }

    #[test]
    fn empty_group_is_skipped_and_empty_class_rejected() {
        let r = verify_proposition1(&table(&[vec![3, 0], vec![4, 0]]), 0.0).unwrap();
        assert_eq!(r.notes.len(), 1);
        assert!(r.pass);
        assert!(matches!(verify_proposition1(&table(&[vec![0, 0], vec![4, 1]]), 0.0), Err(Error::EmptyClass(0))));
        assert!(check_mimicking(&table(&[vec![0, 0], vec![4, 1]]), 1, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn spread_bound_always_holds(rows in prop::collection::vec(prop::collection::vec(0u64..300, 2..5), 2..5)) {
            let g = rows[0].len();
            let rows: Vec<Vec<u64>> = rows.into_iter().map(|mut r| { r.resize(g, 1); r[0] += 1; r }).collect();
            let t = SubgroupTable::from_rows(&rows).unwrap();
            let r = verify_proposition1(&t, 0.0).unwrap();
            prop_assert!(r.bound_holds);
            prop_assert!(r.max_residual_prop1 <= r.consequence_bound + 1e-12);
        }

        #[test]
        fn all_classes_mimicked_implies_independence(
            profile in prop::collection::vec(0u64..20, 2..5),
            scales in prop::collection::vec(1u64..9, 2..5),
        ) {
            prop_assume!(profile.iter().sum::<u64>() > 0);
            let rows: Vec<Vec<u64>> = scales.iter().map(|&s| profile.iter().map(|&p| p * s).collect()).collect();
            let t = SubgroupTable::from_rows(&rows).unwrap();
            for y in 0..t.num_classes() {
                prop_assert_eq!(check_mimicking(&t, y, 0.0).unwrap().max_residual_eq1, 0.0);
            }
            prop_assert_eq!(verify_proposition1(&t, 0.0).unwrap().max_residual_prop1, 0.0);
        }
    }
}
