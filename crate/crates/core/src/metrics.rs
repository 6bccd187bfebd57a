//! Unbiased accuracy, bias-conflict accuracy and bias amplification.

use serde::{Deserialize, Serialize};

use crate::dataset::{GroupedDataset, SubgroupTable};
use crate::error::{Error, Result};
use crate::model::Model;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Accuracy within each test subgroup `[y][b]`.
    pub subgroup_accuracy: Vec<Vec<f64>>,
    pub subgroup_counts: Vec<Vec<u64>>,
    /// Mean of the subgroup accuracies of each class.
    pub class_accuracy: Vec<f64>,
    pub unbiased_accuracy: f64,
    pub bias_conflict: f64,
    /// `NaN` when the test set is not subgroup-balanced.
    pub bias_amplification: f64,
    /// Subgroups scored by bias-conflict accuracy, chosen from the training table.
    pub minority: Vec<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

pub fn predict_all(m: &Model, d: &GroupedDataset) -> Result<Vec<usize>> {
    d.samples().iter().map(|s| m.predict(&s.features)).collect()
}

/// Per-subgroup accuracy and counts. Empty subgroups get `NaN`.
pub fn subgroup_accuracy(preds: &[usize], d: &GroupedDataset) -> Result<(Vec<Vec<f64>>, Vec<Vec<u64>>)> {
    if preds.len() != d.len() {
        return Err(Error::Dimension {
            expected: d.len(),
            actual: preds.len(),
        });
    }
    let (c, g) = (d.num_classes(), d.num_groups());
    let mut correct = vec![vec![0u64; g]; c];
    let mut counts = vec![vec![0u64; g]; c];
    for (s, &p) in d.samples().iter().zip(preds) {
        counts[s.target][s.group] += 1;
        if p == s.target {
            correct[s.target][s.group] += 1;
        }
    }
    let acc = correct
        .iter()
        .zip(&counts)
        .map(|(k, n)| k.iter().zip(n).map(|(&k, &n)| if n == 0 { f64::NAN } else { k as f64 / n as f64 }).collect())
        .collect();
    Ok((acc, counts))
}

fn require_all_subgroups(counts: &[Vec<u64>]) -> Result<()> {
    for (y, row) in counts.iter().enumerate() {
        if let Some(b) = row.iter().position(|&n| n == 0) {
            return Err(Error::EmptySubgroup { class: y, group: b });
        }
    }
    Ok(())
}

/// Mean over all subgroups of the accuracy within the subgroup.
pub fn unbiased_accuracy(preds: &[usize], d: &GroupedDataset) -> Result<f64> {
    let (acc, counts) = subgroup_accuracy(preds, d)?;
    require_all_subgroups(&counts)?;
    Ok(mean(acc.iter().flatten().copied()))
}

/// Every non-dominant group of each class in the training table. Ties for the
/// dominant group go to the lowest index and are reported in the flags.
pub fn minority_subgroups(train: &SubgroupTable) -> (Vec<(usize, usize)>, Vec<String>) {
    let mut minority = Vec::new();
    let mut flags = Vec::new();
    for y in 0..train.num_classes() {
        let (dom, tied) = train.dominant_group(y);
        if tied {
            flags.push(format!("class {y}: tied dominant group, using group {dom}"));
        }
        minority.extend((0..train.num_groups()).filter(|&b| b != dom).map(|b| (y, b)));
    }
    (minority, flags)
}

/// Mean accuracy over the minority subgroups of the training table.
pub fn bias_conflict(preds: &[usize], d: &GroupedDataset, train: &SubgroupTable) -> Result<f64> {
    check_shape(d, train)?;
    let (acc, counts) = subgroup_accuracy(preds, d)?;
    let (minority, _) = minority_subgroups(train);
    conflict_from(&acc, &counts, &minority)
}

fn conflict_from(acc: &[Vec<f64>], counts: &[Vec<u64>], minority: &[(usize, usize)]) -> Result<f64> {
    if let Some(&(y, b)) = minority.iter().find(|&&(y, b)| counts[y][b] == 0) {
        return Err(Error::EmptySubgroup { class: y, group: b });
    }
    if minority.is_empty() {
        return Ok(f64::NAN);
    }
    Ok(mean(minority.iter().map(|&(y, b)| acc[y][b])))
}

fn check_shape(d: &GroupedDataset, train: &SubgroupTable) -> Result<()> {
    if train.num_classes() != d.num_classes() || train.num_groups() != d.num_groups() {
        return Err(Error::Data("training table shape differs from the test set".into()));
    }
    Ok(())
}

/// Over-prediction of each class for its training-dominant group on a
/// subgroup-balanced test set:
/// `mean_y [ N(pred = y, b = dom(y)) / N(pred = y) - 1/G ]`.
/// Classes that are never predicted are left out of the mean.
pub fn bias_amplification(preds: &[usize], d: &GroupedDataset, train: &SubgroupTable) -> Result<f64> {
    Ok(amplification(preds, d, train)?.0)
}

fn amplification(preds: &[usize], d: &GroupedDataset, train: &SubgroupTable) -> Result<(f64, Vec<String>)> {
    check_shape(d, train)?;
    if preds.len() != d.len() {
        return Err(Error::Dimension {
            expected: d.len(),
            actual: preds.len(),
        });
    }
    let t = d.subgroup_table();
    if t.min_count() != t.max_count() {
        return Err(Error::Data("bias amplification needs a subgroup-balanced test set".into()));
    }
    let (c, g) = (d.num_classes(), d.num_groups());
    let mut predicted = vec![0u64; c];
    let mut predicted_dominant = vec![0u64; c];
    let dominant: Vec<usize> = (0..c).map(|y| train.dominant_group(y).0).collect();
    for (s, &p) in d.samples().iter().zip(preds) {
        if p >= c {
            return Err(Error::Data(format!("prediction {p} out of range")));
        }
        predicted[p] += 1;
        if s.group == dominant[p] {
            predicted_dominant[p] += 1;
        }
    }
    let mut flags = Vec::new();
    let mut terms = Vec::new();
    for y in 0..c {
        if predicted[y] == 0 {
            flags.push(format!("class {y} never predicted; left out of bias amplification"));
        } else {
            terms.push(predicted_dominant[y] as f64 / predicted[y] as f64 - 1.0 / g as f64);
        }
    }
    let value = if terms.is_empty() { f64::NAN } else { mean(terms.into_iter()) };
    Ok((value, flags))
}

/// All metrics for `preds` on `d`, with the minority set and the dominant
/// groups taken from `train`.
pub fn evaluate(preds: &[usize], d: &GroupedDataset, train: &SubgroupTable) -> Result<MetricsReport> {
    check_shape(d, train)?;
    let (acc, counts) = subgroup_accuracy(preds, d)?;
    require_all_subgroups(&counts)?;
    let (minority, mut flags) = minority_subgroups(train);
    let bias_conflict = conflict_from(&acc, &counts, &minority)?;
    let bias_amplification = match amplification(preds, d, train) {
        Ok((v, f)) => {
            flags.extend(f);
            v
        }
        Err(Error::Data(msg)) => {
            flags.push(msg);
            f64::NAN
        }
        Err(e) => return Err(e),
    };
    Ok(MetricsReport {
        class_accuracy: acc.iter().map(|row| mean(row.iter().copied())).collect(),
        unbiased_accuracy: mean(acc.iter().flatten().copied()),
        subgroup_accuracy: acc,
        subgroup_counts: counts,
        bias_conflict,
        bias_amplification,
        minority,
        flags,
    })
}

pub fn evaluate_model(m: &Model, d: &GroupedDataset, train: &SubgroupTable) -> Result<MetricsReport> {
    evaluate(&predict_all(m, d)?, d, train)
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset(rows: &[Vec<u64>]) -> GroupedDataset {
        GroupedDataset::from_table(&SubgroupTable::from_rows(rows).unwrap())
    }

    fn train_table() -> SubgroupTable {
        SubgroupTable::from_rows(&[vec![90, 10], vec![10, 90]]).unwrap()
    }

    #[test]
    fn perfect_and_constant_predictors() {
        let d = dataset(&[vec![10, 10], vec![10, 10]]);
        let truth: Vec<usize> = d.samples().iter().map(|s| s.target).collect();
        assert_eq!(unbiased_accuracy(&truth, &d).unwrap(), 1.0);
        assert_eq!(bias_conflict(&truth, &d, &train_table()).unwrap(), 1.0);
        assert_eq!(unbiased_accuracy(&vec![0; 40], &d).unwrap(), 0.5);
    }

    #[test]
    fn unbiased_accuracy_is_mean_of_subgroups() {
        // subgroup accuracies 0.9, 0.8, 0.7, 0.6 with unequal sizes
        let d = dataset(&[vec![10, 5], vec![10, 20]]);
        let mut preds = Vec::new();
        for (y, n, correct) in [(0, 10, 9), (0, 5, 4), (1, 10, 7), (1, 20, 12)] {
            preds.extend((0..n).map(|i| if i < correct { y } else { 1 - y }));
        }
        assert!((unbiased_accuracy(&preds, &d).unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn minority_set_from_training_table() {
        let t = SubgroupTable::from_rows(&[vec![90, 10], vec![50, 50]]).unwrap();
        let (minority, flags) = minority_subgroups(&t);
        assert_eq!(minority, vec![(0, 1), (1, 1)]);
        assert_eq!(flags.len(), 1);
    }

    #[test]
    fn shortcut_predictor() {
        // predicts the class whose dominant group matches the sample's group
        let d = dataset(&[vec![25, 25], vec![25, 25]]);
        let preds: Vec<usize> = d.samples().iter().map(|s| s.group).collect();
        let r = evaluate(&preds, &d, &train_table()).unwrap();
        assert_eq!(r.bias_amplification, 0.5);
        assert_eq!(r.bias_conflict, 0.0);
        assert_eq!(r.unbiased_accuracy, 0.5);
    }

    #[test]
    fn group_blind_predictor_has_zero_amplification() {
        let d = dataset(&[vec![20, 20], vec![20, 20]]);
        // same confusion in each group: every 4th sample flipped
        let preds: Vec<usize> = d
            .samples()
            .iter()
            .map(|s| if s.id % 4 == 0 { 1 - s.target } else { s.target })
            .collect();
        assert_eq!(bias_amplification(&preds, &d, &train_table()).unwrap(), 0.0);
    }

    #[test]
    fn never_predicted_class_is_flagged() {
        let d = dataset(&[vec![5, 5], vec![5, 5]]);
        let r = evaluate(&vec![0; 20], &d, &train_table()).unwrap();
        assert_eq!(r.bias_amplification, 0.0);
        assert!(r.flags.iter().any(|f| f.contains("never predicted")));
    }

    #[test]
    fn errors() {
        let d = dataset(&[vec![5, 0], vec![5, 5]]);
        assert!(matches!(unbiased_accuracy(&vec![0; 15], &d), Err(Error::EmptySubgroup { class: 0, group: 1 })));
        assert!(unbiased_accuracy(&[0], &d).is_err());
        let unbalanced = dataset(&[vec![5, 3], vec![5, 5]]);
        assert!(bias_amplification(&vec![0; 18], &unbalanced, &train_table()).is_err());
        let r = evaluate(&vec![0; 18], &unbalanced, &train_table()).unwrap();
        assert!(r.bias_amplification.is_nan());
    }
}
