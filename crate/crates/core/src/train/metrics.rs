//! Classification accuracy measures used in remote-sensing reporting.

use serde::Serialize;

/// Overall accuracy, confusion matrix and per-class producer's / user's
/// accuracy. Rows of the confusion matrix are truth, columns predictions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub n_samples: usize,
    pub overall_accuracy: f64,
    pub confusion: Vec<Vec<usize>>,
    /// Per-class recall; `None` when the class never occurs in the truth.
    pub producer_accuracy: Vec<Option<f64>>,
    /// Per-class precision; `None` when the class is never predicted.
    pub user_accuracy: Vec<Option<f64>>,
}

impl Metrics {
    pub fn from_predictions(truth: &[usize], predicted: &[usize], n_classes: usize) -> Self {
        assert_eq!(truth.len(), predicted.len(), "truth and predictions differ in length");
        let mut confusion = vec![vec![0usize; n_classes]; n_classes];
        for (&t, &p) in truth.iter().zip(predicted) {
            confusion[t][p] += 1;
        }
        let n = truth.len();
        let correct: usize = (0..n_classes).map(|k| confusion[k][k]).sum();
        let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
        let producer_accuracy = (0..n_classes)
            .map(|k| ratio(confusion[k][k], confusion[k].iter().sum()))
            .collect();
        let user_accuracy = (0..n_classes)
            .map(|k| ratio(confusion[k][k], confusion.iter().map(|row| row[k]).sum()))
            .collect();
        Self {
            n_samples: n,
            overall_accuracy: if n == 0 { 0.0 } else { correct as f64 / n as f64 },
            confusion,
            producer_accuracy,
            user_accuracy,
        }
    }

    /// Mean over classes where the producer's accuracy is defined.
    pub fn mean_producer_accuracy(&self) -> Option<f64> {
        mean_defined(&self.producer_accuracy)
    }

    pub fn mean_user_accuracy(&self) -> Option<f64> {
        mean_defined(&self.user_accuracy)
    }

    /// Class with the lowest defined producer's accuracy.
    pub fn worst_producer_class(&self) -> Option<usize> {
        self.producer_accuracy
            .iter()
            .enumerate()
            .filter_map(|(k, a)| a.map(|a| (k, a)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(k, _)| k)
    }
}

fn mean_defined(v: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = v.iter().flatten().copied().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}
