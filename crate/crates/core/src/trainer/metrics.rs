//! Binary classification metrics.

use super::TrainError;
use crate::Real;

/// Confusion matrix and the precision/recall/F1 family derived from it.
/// `confusion[a][p]` counts samples with actual class `a` predicted as `p`.
/// Division-by-zero convention: a metric whose denominator is zero is 0.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub confusion: [[usize; 2]; 2],
    pub precision: [Real; 2],
    pub recall: [Real; 2],
    pub f1: [Real; 2],
    pub f1_weighted: Real,
    pub f1_macro: Real,
    pub support: [usize; 2],
}

fn ratio(num: usize, den: usize) -> Real {
    if den == 0 {
        0.0
    } else {
        num as Real / den as Real
    }
}

impl MetricsReport {
    /// Builds the report from `(actual, predicted)` label pairs.
    pub fn from_pairs(pairs: &[(u8, u8)]) -> Result<Self, TrainError> {
        if pairs.is_empty() {
            return Err(TrainError::EmptyEvalSet);
        }
        let mut confusion = [[0usize; 2]; 2];
        for &(a, p) in pairs {
            if a > 1 || p > 1 {
                return Err(TrainError::BadClass(a.max(p)));
            }
            confusion[a as usize][p as usize] += 1;
        }
        let mut precision = [0.0; 2];
        let mut recall = [0.0; 2];
        let mut f1 = [0.0; 2];
        let mut support = [0usize; 2];
        for c in 0..2 {
            let tp = confusion[c][c];
            let fp = confusion[1 - c][c];
            let fng = confusion[c][1 - c];
            support[c] = tp + fng;
            precision[c] = ratio(tp, tp + fp);
            recall[c] = ratio(tp, tp + fng);
            let denom = precision[c] + recall[c];
            f1[c] = if denom == 0.0 {
                0.0
            } else {
                2.0 * precision[c] * recall[c] / denom
            };
        }
        let total = (support[0] + support[1]) as Real;
        let f1_weighted = (support[0] as Real * f1[0] + support[1] as Real * f1[1]) / total;
        let f1_macro = (f1[0] + f1[1]) / 2.0;
        Ok(MetricsReport {
            confusion,
            precision,
            recall,
            f1,
            f1_weighted,
            f1_macro,
            support,
        })
    }

    /// Aligned human-readable table.
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str("class  precision  recall   f1       support\n");
        for c in 0..2 {
            out.push_str(&format!(
                "{c}      {:<9.4}  {:<7.4}  {:<7.4}  {}\n",
                self.precision[c], self.recall[c], self.f1[c], self.support[c]
            ));
        }
        out.push_str(&format!("weighted f1  {:.4}\n", self.f1_weighted));
        out.push_str(&format!("macro f1     {:.4}\n", self.f1_macro));
        out.push_str(&format!(
            "confusion    [[{}, {}], [{}, {}]] (rows actual, cols predicted)\n",
            self.confusion[0][0], self.confusion[0][1], self.confusion[1][0], self.confusion[1][1]
        ));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(tp: usize, fp: usize, fng: usize, tn: usize) -> Vec<(u8, u8)> {
        let mut v = Vec::new();
        v.extend(std::iter::repeat((1, 1)).take(tp));
        v.extend(std::iter::repeat((0, 1)).take(fp));
        v.extend(std::iter::repeat((1, 0)).take(fng));
        v.extend(std::iter::repeat((0, 0)).take(tn));
        v
    }

    #[test]
    fn small_confusion_matrix_reference() {
        // TP=2, FP=1, FN=1, TN=6 for class 1: precision = recall = f1 = 2/3
        let r = MetricsReport::from_pairs(&pairs(2, 1, 1, 6)).unwrap();
        assert!((r.precision[1] - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.recall[1] - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.f1[1] - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.support, [7, 3]);
        assert_eq!(r.confusion, [[6, 1], [1, 2]]);
        // weighted f1 identity
        let expected = (7.0 * r.f1[0] + 3.0 * r.f1[1]) / 10.0;
        assert!((r.f1_weighted - expected).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictions_score_one() {
        let r = MetricsReport::from_pairs(&pairs(4, 0, 0, 5)).unwrap();
        assert_eq!(r.f1_weighted, 1.0);
        assert_eq!(r.f1_macro, 1.0);
        assert_eq!(r.precision, [1.0, 1.0]);
    }

    #[test]
    fn zero_denominators_score_zero() {
        // never predicts class 1, and class 1 never occurs: precision_1 and
        // recall_1 both have zero denominators
        let r = MetricsReport::from_pairs(&[(0, 0), (0, 0)]).unwrap();
        assert_eq!(r.precision[1], 0.0);
        assert_eq!(r.recall[1], 0.0);
        assert_eq!(r.f1[1], 0.0);
        assert_eq!(r.f1_weighted, 1.0); // class 0 carries all support
    }

    #[test]
    fn empty_and_out_of_range_inputs_error() {
        assert!(matches!(
            MetricsReport::from_pairs(&[]),
            Err(TrainError::EmptyEvalSet)
        ));
        assert!(matches!(
            MetricsReport::from_pairs(&[(0, 2)]),
            Err(TrainError::BadClass(2))
        ));
    }

    #[test]
    fn table_mentions_every_metric() {
        let r = MetricsReport::from_pairs(&pairs(2, 1, 1, 6)).unwrap();
        let t = r.table();
        assert!(t.contains("weighted f1"));
        assert!(t.contains("macro f1"));
        assert!(t.contains("confusion"));
        assert!(t.lines().count() >= 6);
    }
}
