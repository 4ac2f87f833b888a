//! Ranking metrics for binary scorers.
//!
//! Both metrics need at least one positive and one negative label and return
//! [`Error::UndefinedMetric`] otherwise.

use std::cmp::Ordering;

use crate::{Error, Result};

/// Positive/negative counts per distinct score (ascending), and the totals.
type Groups = (Vec<(u64, u64)>, u64, u64);

fn score_groups(labels: &[u8], scores: &[f64]) -> Result<Groups> {
    assert_eq!(
        labels.len(),
        scores.len(),
        "labels and scores differ in length"
    );
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));

    let mut groups: Vec<(u64, u64)> = Vec::new();
    let mut last: Option<f64> = None;
    let (mut total_pos, mut total_neg) = (0u64, 0u64);
    for &i in &order {
        if last != Some(scores[i]) {
            groups.push((0, 0));
            last = Some(scores[i]);
        }
        let group = groups.last_mut().expect("group pushed above");
        if labels[i] == 1 {
            group.0 += 1;
            total_pos += 1;
        } else {
            group.1 += 1;
            total_neg += 1;
        }
    }
    if total_pos == 0 || total_neg == 0 {
        return Err(Error::UndefinedMetric("both classes must be present"));
    }
    Ok((groups, total_pos, total_neg))
}

/// Area under the ROC curve (Mann-Whitney statistic, ties credited one half).
///
/// Runs in `O(K log K)`. Credits are accumulated in integer half-units so the
/// result is exact up to the final division.
pub fn auc(labels: &[u8], scores: &[f64]) -> Result<f64> {
    let (groups, pos, neg) = score_groups(labels, scores)?;
    let mut negatives_below: u128 = 0;
    // twice the number of (pos, neg) pairs ranked correctly, ties count 1
    let mut doubled: u128 = 0;
    for (p, n) in groups {
        let (p, n) = (p as u128, n as u128);
        doubled += 2 * p * negatives_below + p * n;
        negatives_below += n;
    }
    Ok(doubled as f64 / (2.0 * pos as f64 * neg as f64))
}

/// Kolmogorov-Smirnov statistic: `max_t |TPR(t) - FPR(t)|` over thresholds
/// `score >= t`, sweeping the distinct score values.
pub fn ks(labels: &[u8], scores: &[f64]) -> Result<f64> {
    let (groups, pos, neg) = score_groups(labels, scores)?;
    let (mut tp, mut fp) = (0i128, 0i128);
    let mut best: i128 = 0;
    for &(p, n) in groups.iter().rev() {
        tp += p as i128;
        fp += n as i128;
        best = best.max((tp * neg as i128 - fp * pos as i128).abs());
    }
    Ok(best as f64 / (pos as f64 * neg as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pairwise_auc(labels: &[u8], scores: &[f64]) -> f64 {
        let mut credit = 0.0;
        let mut pairs = 0.0;
        for i in 0..labels.len() {
            for j in 0..labels.len() {
                if labels[i] == 1 && labels[j] == 0 {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        credit += 1.0;
                    } else if scores[i] == scores[j] {
                        credit += 0.5;
                    }
                }
            }
        }
        credit / pairs
    }

    fn threshold_ks(labels: &[u8], scores: &[f64]) -> f64 {
        let pos = labels.iter().filter(|&&l| l == 1).count() as f64;
        let neg = labels.len() as f64 - pos;
        let mut best: f64 = 0.0;
        for &t in scores {
            let tp = (0..labels.len())
                .filter(|&i| labels[i] == 1 && scores[i] >= t)
                .count();
            let fp = (0..labels.len())
                .filter(|&i| labels[i] == 0 && scores[i] >= t)
                .count();
            best = best.max((tp as f64 / pos - fp as f64 / neg).abs());
        }
        best
    }

    #[test]
    fn worked_example() {
        let labels = [1, 0, 1, 0];
        let scores = [0.9, 0.8, 0.7, 0.1];
        assert_eq!(auc(&labels, &scores).unwrap(), 0.75);
        assert_eq!(ks(&labels, &scores).unwrap(), 0.5);
    }

    #[test]
    fn perfect_and_tied() {
        let labels = [0, 0, 1, 1];
        assert_eq!(auc(&labels, &[0.1, 0.2, 0.3, 0.4]).unwrap(), 1.0);
        assert_eq!(ks(&labels, &[0.1, 0.2, 0.3, 0.4]).unwrap(), 1.0);
        assert_eq!(auc(&labels, &[0.5; 4]).unwrap(), 0.5);
        assert_eq!(ks(&labels, &[0.5; 4]).unwrap(), 0.0);
    }

    #[test]
    fn single_class_is_undefined() {
        assert!(matches!(
            auc(&[1, 1], &[0.1, 0.2]),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(matches!(
            ks(&[0, 0], &[0.1, 0.2]),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(auc(&[], &[]).is_err());
    }

    fn scored() -> impl Strategy<Value = (Vec<u8>, Vec<f64>)> {
        (2usize..60)
            .prop_flat_map(|k| {
                (
                    prop::collection::vec(0u8..2, k),
                    prop::collection::vec((0u32..12).prop_map(|v| v as f64 / 4.0), k),
                )
            })
            .prop_filter("both classes", |(l, _)| l.contains(&0) && l.contains(&1))
    }

    proptest! {
        #[test]
        fn matches_brute_force((labels, scores) in scored()) {
            prop_assert!((auc(&labels, &scores).unwrap() - pairwise_auc(&labels, &scores)).abs() < 1e-12);
            prop_assert!((ks(&labels, &scores).unwrap() - threshold_ks(&labels, &scores)).abs() < 1e-12);
        }

        #[test]
        fn monotone_transform_invariance((labels, scores) in scored()) {
            let transformed: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
            prop_assert_eq!(auc(&labels, &scores).unwrap(), auc(&labels, &transformed).unwrap());
        }

        #[test]
        fn label_flip((labels, scores) in scored()) {
            let flipped: Vec<u8> = labels.iter().map(|l| 1 - l).collect();
            let a = auc(&labels, &scores).unwrap();
            prop_assert!((auc(&flipped, &scores).unwrap() - (1.0 - a)).abs() < 1e-12);
            prop_assert!((ks(&flipped, &scores).unwrap() - ks(&labels, &scores).unwrap()).abs() < 1e-12);
        }
    }
}
