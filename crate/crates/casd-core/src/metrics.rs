//! Classification metrics: per-class F1, macro/weighted F1, accuracy.

use crate::error::{CasdError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub per_class_f1: Vec<f64>,
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub accuracy: f64,
}

/// Compute metrics from aligned label/prediction slices. Classes with no
/// true or predicted members get F1 = 0.
pub fn classification_metrics(
    labels: &[usize],
    predictions: &[usize],
    n_classes: usize,
) -> Result<Metrics> {
    if labels.is_empty() {
        return Err(CasdError::Data("metrics over an empty set".into()));
    }
    if labels.len() != predictions.len() {
        return Err(CasdError::Dimension(format!(
            "{} labels vs {} predictions",
            labels.len(),
            predictions.len()
        )));
    }
    let mut tp = vec![0usize; n_classes];
    let mut fp = vec![0usize; n_classes];
    let mut fn_ = vec![0usize; n_classes];
    let mut support = vec![0usize; n_classes];
    let mut correct = 0usize;
    for (&y, &p) in labels.iter().zip(predictions) {
        if y >= n_classes || p >= n_classes {
            return Err(CasdError::Data(format!(
                "class index out of range: label {y}, prediction {p}"
            )));
        }
        support[y] += 1;
        if y == p {
            tp[y] += 1;
            correct += 1;
        } else {
            fp[p] += 1;
            fn_[y] += 1;
        }
    }
    let per_class_f1: Vec<f64> = (0..n_classes)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fn_[c];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .collect();
    let n = labels.len() as f64;
    let macro_f1 = per_class_f1.iter().sum::<f64>() / n_classes as f64;
    let weighted_f1 = per_class_f1
        .iter()
        .zip(&support)
        .map(|(f1, &s)| f1 * s as f64 / n)
        .sum();
    Ok(Metrics {
        per_class_f1,
        macro_f1,
        weighted_f1,
        accuracy: correct as f64 / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let y = vec![0, 1, 0, 1, 1];
        let m = classification_metrics(&y, &y, 2).unwrap();
        assert_eq!(m.per_class_f1, vec![1.0, 1.0]);
        assert_eq!(m.macro_f1, 1.0);
        assert_eq!(m.weighted_f1, 1.0);
        assert_eq!(m.accuracy, 1.0);
    }

    #[test]
    fn hand_computed_confusion() {
        // labels:      0 0 1 1 1
        // predictions: 0 1 1 1 0
        // class 0: tp=1 fp=1 fn=1 -> f1 = 2/4 = 0.5
        // class 1: tp=2 fp=1 fn=1 -> f1 = 4/6 = 0.6667
        let m = classification_metrics(&[0, 0, 1, 1, 1], &[0, 1, 1, 1, 0], 2).unwrap();
        assert!((m.per_class_f1[0] - 0.5).abs() < 1e-12);
        assert!((m.per_class_f1[1] - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.macro_f1 - (0.5 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert!((m.weighted_f1 - (0.5 * 2.0 + 2.0 / 3.0 * 3.0) / 5.0).abs() < 1e-12);
        assert!((m.accuracy - 0.6).abs() < 1e-12);
    }

    #[test]
    fn absent_class_gets_zero_f1() {
        let m = classification_metrics(&[0, 0], &[0, 0], 3).unwrap();
        assert_eq!(m.per_class_f1, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn empty_and_mismatched_inputs() {
        assert!(classification_metrics(&[], &[], 2).is_err());
        assert!(classification_metrics(&[0], &[], 2).is_err());
        assert!(classification_metrics(&[5], &[0], 2).is_err());
    }
}
