use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::attacker::Mlp;
use crate::error::{Error, Result};
use crate::features::{FeatureSet, MembershipFeature};

/// Attack metrics with members as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    /// No positive predictions, so precision was set to 0.
    pub precision_undefined: bool,
    /// No members in the evaluation set, so recall was set to 0.
    pub recall_undefined: bool,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

impl MetricsReport {
    pub fn from_counts(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        let total = tp + fp + tn + fn_;
        let (accuracy, _) = ratio(tp + tn, total);
        let (precision, precision_undefined) = ratio(tp, tp + fp);
        let (recall, recall_undefined) = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        MetricsReport {
            accuracy,
            precision,
            recall,
            f1,
            tp,
            fp,
            tn,
            fn_,
            precision_undefined,
            recall_undefined,
        }
    }

    /// Confusion counts of `predicted` against `actual`.
    pub fn from_predictions(predicted: &[bool], actual: &[bool]) -> Self {
        let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
        for (&p, &a) in predicted.iter().zip(actual) {
            match (p, a) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, false) => tn += 1,
                (false, true) => fn_ += 1,
            }
        }
        Self::from_counts(tp, fp, tn, fn_)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn predict_rows(attacker: &Mlp, rows: usize, dim: usize, row: impl Fn(usize) -> Vec<f32>, threshold: f64) -> Result<Vec<bool>> {
    let mut x = Array2::zeros((rows, dim));
    for i in 0..rows {
        let r = row(i);
        if r.len() != dim {
            return Err(Error::Dimension(format!("row {i} has {} values, expected {dim}", r.len())));
        }
        for (o, v) in x.row_mut(i).iter_mut().zip(r) {
            *o = f64::from(v);
        }
    }
    let p = attacker.predict(x.view())?;
    Ok(p.iter().map(|&p| p >= threshold).collect())
}

/// Scores every row of `set`; a row counts as a member prediction when the
/// attacker's output is at least `threshold`.
pub fn evaluate(attacker: &Mlp, set: &FeatureSet, threshold: f64) -> Result<MetricsReport> {
    if set.is_empty() {
        return Err(Error::Evaluation("evaluation set is empty".into()));
    }
    let pred = predict_rows(attacker, set.len(), set.dim(), |i| set.row(i).to_vec(), threshold)?;
    Ok(MetricsReport::from_predictions(&pred, &set.meta.labels))
}

/// Like `evaluate` for loose features, which must all carry labels.
pub fn evaluate_features(attacker: &Mlp, features: &[MembershipFeature], threshold: f64) -> Result<MetricsReport> {
    let Some(first) = features.first() else {
        return Err(Error::Evaluation("evaluation set is empty".into()));
    };
    let labels = features
        .iter()
        .enumerate()
        .map(|(i, f)| f.label.ok_or_else(|| Error::Evaluation(format!("feature {i} has no membership label"))))
        .collect::<Result<Vec<bool>>>()?;
    let pred = predict_rows(attacker, features.len(), first.vector.len(), |i| features[i].vector.clone(), threshold)?;
    Ok(MetricsReport::from_predictions(&pred, &labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacker::MlpSpec;
    use crate::features::{EnergySelection, FeatureKind, FeatureMeta};
    use proptest::prelude::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn worked_confusion_matrix() {
        let m = MetricsReport::from_counts(2, 1, 2, 1);
        assert!(close(m.accuracy, 4.0 / 6.0));
        assert!(close(m.precision, 2.0 / 3.0));
        assert!(close(m.recall, 2.0 / 3.0));
        assert!(close(m.f1, 2.0 / 3.0));
        assert!(!m.precision_undefined && !m.recall_undefined);
    }

    #[test]
    fn undefined_ratios_are_zero_and_flagged() {
        let m = MetricsReport::from_counts(0, 0, 5, 3);
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        assert!(m.precision_undefined);
        assert!(!m.recall_undefined);
        let m = MetricsReport::from_counts(0, 4, 6, 0);
        assert!(m.recall_undefined);
    }

    fn zero_attacker(dim: usize) -> Mlp {
        let mut mlp = Mlp::build(&MlpSpec::default().with_in_dim(dim), 0).unwrap();
        for (_, p) in mlp.params_mut() {
            p.fill(0.0);
        }
        mlp
    }

    fn set(labels: Vec<bool>, values: Vec<f32>, dim: usize) -> FeatureSet {
        let meta = FeatureMeta {
            kind: FeatureKind::Supervised,
            dim,
            m: None,
            n: None,
            energies: EnergySelection::Both,
            seed: 0,
            ids: (0..labels.len()).map(|i| format!("x{i}")).collect(),
            labels,
        };
        FeatureSet::new(meta, values).unwrap()
    }

    #[test]
    fn constant_half_predicts_all_members() {
        let s = set(vec![true, false, false, true, true], vec![0.3; 10], 2);
        let m = evaluate(&zero_attacker(2), &s, 0.5).unwrap();
        assert_eq!(m.recall, 1.0);
        assert!(close(m.accuracy, 3.0 / 5.0));
        assert_eq!((m.tp, m.fp), (3, 2));
    }

    #[test]
    fn perfect_attacker_scores_one() {
        // a relu chain passes x0 = +1 (members) and blocks x0 = -1; the output
        // bias pushes blocked rows below one half
        let mut mlp = Mlp::build(&MlpSpec { width: 4, ..MlpSpec::default() }.with_in_dim(1), 0).unwrap();
        for (_, p) in mlp.params_mut() {
            p.fill(0.0);
        }
        for l in 0..mlp.num_layers() {
            mlp.weight_mut(l)[[0, 0]] = 10.0;
        }
        let last = mlp.num_layers() - 1;
        mlp.bias_mut(last)[0] = -1.0;
        let s = set(vec![true, false, true, false], vec![1.0, -1.0, 1.0, -1.0], 1);
        let m = evaluate(&mlp, &s, 0.5).unwrap();
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn unlabeled_feature_is_rejected() {
        let f = vec![
            MembershipFeature {
                kind: FeatureKind::Supervised,
                vector: vec![0.0, 1.0],
                label: Some(true),
            },
            MembershipFeature {
                kind: FeatureKind::Supervised,
                vector: vec![0.0, 1.0],
                label: None,
            },
        ];
        let err = evaluate_features(&zero_attacker(2), &f, 0.5).unwrap_err();
        assert!(matches!(err, Error::Evaluation(_)), "{err}");
    }

    #[test]
    fn empty_set_is_rejected() {
        let s = set(vec![], vec![], 2);
        assert!(matches!(evaluate(&zero_attacker(2), &s, 0.5), Err(Error::Evaluation(_))));
    }

    proptest! {
        #[test]
        fn metric_identities(tp in 0u64..1000, fp in 0u64..1000, tn in 0u64..1000, fn_ in 0u64..1000) {
            prop_assume!(tp + fp + tn + fn_ > 0);
            let m = MetricsReport::from_counts(tp, fp, tn, fn_);
            let total = (tp + fp + tn + fn_) as f64;
            prop_assert_eq!(m.accuracy, (tp + tn) as f64 / total);
            if tp + fp > 0 {
                prop_assert_eq!(m.precision, tp as f64 / (tp + fp) as f64);
            } else {
                prop_assert!(m.precision == 0.0 && m.precision_undefined);
            }
            if tp + fn_ > 0 {
                prop_assert_eq!(m.recall, tp as f64 / (tp + fn_) as f64);
            } else {
                prop_assert!(m.recall == 0.0 && m.recall_undefined);
            }
            if m.precision + m.recall > 0.0 {
                let h = 2.0 * m.precision * m.recall / (m.precision + m.recall);
                prop_assert_eq!(m.f1, h);
            } else {
                prop_assert_eq!(m.f1, 0.0);
            }
            for v in [m.accuracy, m.precision, m.recall, m.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            prop_assert_eq!(m.total(), tp + fp + tn + fn_);
        }
    }
}
