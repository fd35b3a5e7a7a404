use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Confusion counts with rates in percent. Sensitivity and specificity are
/// `None` when the actual labels lack the class they are conditioned on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
    pub accuracy: f64,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
}

pub fn confusion_metrics(predicted: &[u8], actual: &[u8]) -> Result<Confusion> {
    if predicted.len() != actual.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} labels",
            predicted.len(),
            actual.len()
        )));
    }
    if actual.is_empty() {
        return Err(Error::InvalidArgument("no labels to score".into()));
    }
    let (mut tp, mut tn, mut fp, mut fn_) = (0, 0, 0, 0);
    for (&p, &a) in predicted.iter().zip(actual) {
        match (p, a) {
            (1, 1) => tp += 1,
            (0, 0) => tn += 1,
            (1, 0) => fp += 1,
            (0, 1) => fn_ += 1,
            _ => return Err(Error::InvalidArgument(format!("label pair ({p}, {a}) not in {{0, 1}}"))),
        }
    }
    let pct = |num: usize, den: usize| (den > 0).then(|| 100.0 * num as f64 / den as f64);
    Ok(Confusion {
        tp,
        tn,
        fp,
        fn_,
        accuracy: 100.0 * (tp + tn) as f64 / actual.len() as f64,
        sensitivity: pct(tp, tp + fn_),
        specificity: pct(tn, tn + fp),
    })
}

/// Dice overlap `2 |A n B| / (|A| + |B|)`; 1 when both sets are empty.
pub fn dice(a: &[bool], b: &[bool]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("dice of {} vs {} voxels", a.len(), b.len())));
    }
    let both = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let total = a.iter().filter(|x| **x).count() + b.iter().filter(|x| **x).count();
    Ok(if total == 0 { 1.0 } else { 2.0 * both as f64 / total as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_inverted() {
        let actual = [1, 0, 1, 0, 0];
        let c = confusion_metrics(&actual, &actual).unwrap();
        assert_eq!((c.accuracy, c.sensitivity, c.specificity), (100.0, Some(100.0), Some(100.0)));
        let inverted: Vec<u8> = actual.iter().map(|v| 1 - v).collect();
        let c = confusion_metrics(&inverted, &actual).unwrap();
        assert_eq!((c.accuracy, c.sensitivity, c.specificity), (0.0, Some(0.0), Some(0.0)));
    }

    #[test]
    fn hand_case() {
        // TP=2, TN=2, FP=1, FN=1
        let predicted = [1, 1, 0, 0, 1, 0];
        let actual = [1, 1, 0, 0, 0, 1];
        let c = confusion_metrics(&predicted, &actual).unwrap();
        assert_eq!((c.tp, c.tn, c.fp, c.fn_), (2, 2, 1, 1));
        assert!((c.accuracy - 66.666_666_666_666_67).abs() < 1e-9);
    }

    #[test]
    fn errors_and_missing_class() {
        assert!(confusion_metrics(&[], &[]).is_err());
        assert!(confusion_metrics(&[1], &[1, 0]).is_err());
        assert!(confusion_metrics(&[2], &[1]).is_err());
        let c = confusion_metrics(&[0, 0], &[0, 0]).unwrap();
        assert_eq!(c.sensitivity, None);
    }

    #[test]
    fn dice_values() {
        assert_eq!(dice(&[true, true, false], &[true, false, false]).unwrap(), 2.0 / 3.0);
        assert_eq!(dice(&[false], &[false]).unwrap(), 1.0);
    }
}
