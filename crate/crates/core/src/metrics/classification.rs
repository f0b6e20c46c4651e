use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary confusion counts; the positive class is "sarcastic".
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn from_pairs(pairs: &[(u8, u8)]) -> Self {
        let mut c = ConfusionCounts::default();
        for &(pred, gold) in pairs {
            match (pred == 1, gold == 1) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn report(&self) -> Result<ClassificationReport> {
        let total = self.total();
        if total == 0 {
            return Err(Error::EmptyInput("classification pairs"));
        }
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        let f1_positive = harmonic(precision, recall);
        let neg_precision = ratio(self.tn, self.tn + self.fn_);
        let neg_recall = ratio(self.tn, self.tn + self.fp);
        let f1_negative = harmonic(neg_precision, neg_recall);
        Ok(ClassificationReport {
            accuracy: ratio(self.tp + self.tn, total),
            precision,
            recall,
            f1_positive,
            f1_macro: (f1_positive + f1_negative) / 2.0,
            counts: *self,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1_positive: f64,
    pub f1_macro: f64,
    pub counts: ConfusionCounts,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// `2PR / (P + R)`, zero when both are zero.
pub fn harmonic(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// Accuracy, precision, recall and F1 over `(predicted, gold)` labels.
pub fn classification_metrics(pairs: &[(u8, u8)]) -> Result<ClassificationReport> {
    ConfusionCounts::from_pairs(pairs).report()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let r = classification_metrics(&[(1, 1), (0, 0), (1, 1)]).unwrap();
        for v in [r.accuracy, r.precision, r.recall, r.f1_positive, r.f1_macro] {
            assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn no_positive_predictions() {
        let r = classification_metrics(&[(0, 1), (0, 1), (0, 0)]).unwrap();
        assert_eq!(r.precision, 0.0);
        assert_eq!(r.recall, 0.0);
        assert_eq!(r.f1_positive, 0.0);
        assert!((r.accuracy - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_is_error() {
        assert!(classification_metrics(&[]).is_err());
    }

    #[test]
    fn macro_f1_by_hand() {
        // tp 3, fp 1, tn 4, fn 2
        let mut pairs = vec![(1, 1); 3];
        pairs.extend([(1, 0)]);
        pairs.extend(vec![(0, 0); 4]);
        pairs.extend(vec![(0, 1); 2]);
        let r = classification_metrics(&pairs).unwrap();
        let f1_pos = 2.0 * 0.75 * 0.6 / 1.35;
        let f1_neg = 2.0 * (4.0 / 6.0) * 0.8 / (4.0 / 6.0 + 0.8);
        assert!((r.f1_positive - f1_pos).abs() < 1e-12);
        assert!((r.f1_macro - (f1_pos + f1_neg) / 2.0).abs() < 1e-12);
        assert_eq!(r.counts.total(), 10);
    }
}
