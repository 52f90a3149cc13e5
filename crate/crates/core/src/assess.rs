//! Error matrices, accuracy metrics and their standard errors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::BinaryMask;
use crate::productmap::extract_values;
use crate::reference::ReferenceDataset;

/// Binary confusion counts with crop (1) as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ErrorMatrix {
    pub fn n(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn add(&mut self, predicted: u8, reference: u8) {
        match (predicted, reference) {
            (1, 1) => self.tp += 1,
            (1, _) => self.fp += 1,
            (_, 1) => self.fn_ += 1,
            _ => self.tn += 1,
        }
    }
}

impl std::ops::Add for ErrorMatrix {
    type Output = ErrorMatrix;

    fn add(self, o: ErrorMatrix) -> ErrorMatrix {
        ErrorMatrix {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub se_accuracy: f64,
    pub se_precision: f64,
    pub se_recall: f64,
    pub se_f1: f64,
    /// No predicted positives: precision and its error are reported as 0.
    pub degenerate_precision: bool,
    /// No reference positives: recall and its error are reported as 0.
    pub degenerate_recall: bool,
    /// precision + recall = 0: F1 and its error are reported as 0.
    pub degenerate_f1: bool,
}

impl MetricSet {
    /// `(name, value, stderr)` in the canonical output order.
    pub fn rows(&self) -> [(&'static str, f64, f64); 4] {
        [
            ("accuracy", self.accuracy, self.se_accuracy),
            ("f1", self.f1, self.se_f1),
            ("precision", self.precision, self.se_precision),
            ("recall", self.recall, self.se_recall),
        ]
    }

    pub fn get(&self, metric: &str) -> Option<(f64, f64)> {
        self.rows()
            .into_iter()
            .find(|(name, ..)| *name == metric)
            .map(|(_, v, se)| (v, se))
    }
}

pub const METRIC_NAMES: [&str; 4] = ["accuracy", "f1", "precision", "recall"];

/// Tally (predicted, reference) pairs. Both sequences must hold only 0/1.
pub fn error_matrix(predicted: &[u8], reference: &[u8]) -> Result<ErrorMatrix> {
    if predicted.len() != reference.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} reference labels",
            predicted.len(),
            reference.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::Empty("error matrix needs at least one pair"));
    }
    let mut m = ErrorMatrix::default();
    for (&p, &r) in predicted.iter().zip(reference) {
        if p > 1 || r > 1 {
            return Err(Error::invalid(format!("pair ({p}, {r}) is not binary")));
        }
        m.add(p, r);
    }
    Ok(m)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StandardErrors {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub degenerate_precision: bool,
    pub degenerate_recall: bool,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn binomial_se(p: f64, n: u64) -> f64 {
    (p * (1.0 - p) / n as f64).max(0.0).sqrt()
}

/// Simple-random-sampling binomial standard errors of accuracy, precision and recall.
pub fn standard_errors(m: &ErrorMatrix) -> StandardErrors {
    let n = m.n();
    let acc = ratio(m.tp + m.tn, n);
    let prec = ratio(m.tp, m.tp + m.fp);
    let rec = ratio(m.tp, m.tp + m.fn_);
    StandardErrors {
        accuracy: acc.map_or(0.0, |a| binomial_se(a, n)),
        precision: prec.map_or(0.0, |p| binomial_se(p, m.tp + m.fp)),
        recall: rec.map_or(0.0, |r| binomial_se(r, m.tp + m.fn_)),
        degenerate_precision: prec.is_none(),
        degenerate_recall: rec.is_none(),
    }
}

/// Propagated error of F1 = 2PR/(P+R) given errors on P and R, treating the
/// numerator and denominator errors as fully correlated:
/// `2(R dP + P dR)/(P+R) + 2PR(dP+dR)/(P+R)^2`. Returns 0 when P + R = 0.
pub fn f1_stderr(p: f64, dp: f64, r: f64, dr: f64) -> f64 {
    let y = p + r;
    if y <= 0.0 {
        return 0.0;
    }
    let x = 2.0 * p * r;
    let dx = 2.0 * (r * dp + p * dr);
    let dy = dp + dr;
    dx / y + x * dy / (y * y)
}

pub fn compute_metrics(m: &ErrorMatrix) -> MetricSet {
    let se = standard_errors(m);
    let accuracy = ratio(m.tp + m.tn, m.n()).unwrap_or(0.0);
    let precision = ratio(m.tp, m.tp + m.fp).unwrap_or(0.0);
    let recall = ratio(m.tp, m.tp + m.fn_).unwrap_or(0.0);
    let degenerate_f1 = precision + recall == 0.0;
    let (f1, se_f1) = if degenerate_f1 {
        (0.0, 0.0)
    } else {
        (
            2.0 * precision * recall / (precision + recall),
            f1_stderr(precision, se.precision, recall, se.recall),
        )
    };
    MetricSet {
        accuracy,
        precision,
        recall,
        f1,
        se_accuracy: se.accuracy,
        se_precision: se.precision,
        se_recall: se.recall,
        se_f1,
        degenerate_precision: se.degenerate_precision,
        degenerate_recall: se.degenerate_recall,
        degenerate_f1,
    }
}

/// Arithmetic mean of each metric; errors combine as sqrt(sum se^2) / k.
pub fn aggregate_mean(sets: &[MetricSet]) -> Result<MetricSet> {
    if sets.is_empty() {
        return Err(Error::Empty("aggregate_mean needs at least one metric set"));
    }
    let k = sets.len() as f64;
    let mean = |f: fn(&MetricSet) -> f64| sets.iter().map(f).sum::<f64>() / k;
    let pooled = |f: fn(&MetricSet) -> f64| sets.iter().map(|s| f(s).powi(2)).sum::<f64>().sqrt() / k;
    Ok(MetricSet {
        accuracy: mean(|s| s.accuracy),
        precision: mean(|s| s.precision),
        recall: mean(|s| s.recall),
        f1: mean(|s| s.f1),
        se_accuracy: pooled(|s| s.se_accuracy),
        se_precision: pooled(|s| s.se_precision),
        se_recall: pooled(|s| s.se_recall),
        se_f1: pooled(|s| s.se_f1),
        degenerate_precision: sets.iter().any(|s| s.degenerate_precision),
        degenerate_recall: sets.iter().any(|s| s.degenerate_recall),
        degenerate_f1: sets.iter().any(|s| s.degenerate_f1),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub metrics: MetricSet,
    pub matrix: ErrorMatrix,
    /// Reference points that fell on nodata or outside the mask.
    pub excluded: usize,
}

/// Score a mask at the reference locations, skipping points on nodata.
pub fn evaluate_map(mask: &BinaryMask, ds: &ReferenceDataset) -> Result<Evaluation> {
    let values = extract_values(mask, &ds.coords());
    let mut matrix = ErrorMatrix::default();
    let mut excluded = 0;
    for (v, p) in values.into_iter().zip(ds.points()) {
        match v {
            0 | 1 => matrix.add(v as u8, p.label),
            _ => excluded += 1,
        }
    }
    if matrix.n() == 0 {
        return Err(Error::AllPointsExcluded(excluded));
    }
    Ok(Evaluation {
        metrics: compute_metrics(&matrix),
        matrix,
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{GridSpec, MASK_NODATA};
    use crate::reference::ReferencePoint;
    use chrono::NaiveDate;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn em(tp: u64, fp: u64, fn_: u64, tn: u64) -> ErrorMatrix {
        ErrorMatrix { tp, fp, fn_, tn }
    }

    #[test]
    fn matrix_extremes() {
        assert_eq!(error_matrix(&[1, 0, 1], &[1, 0, 1]).unwrap(), em(2, 0, 0, 1));
        let r = [1, 0, 0, 1, 1];
        let p: Vec<u8> = r.iter().map(|v| 1 - v).collect();
        let m = error_matrix(&p, &r).unwrap();
        assert_eq!((m.tp, m.tn), (0, 0));
        assert!(error_matrix(&[1], &[1, 0]).is_err());
        assert!(error_matrix(&[], &[]).is_err());
        assert!(error_matrix(&[2], &[1]).is_err());
    }

    #[test]
    fn worked_metrics() {
        let m = compute_metrics(&em(3, 1, 2, 4));
        assert!((m.precision - 0.75).abs() < 1e-15);
        assert!((m.recall - 0.6).abs() < 1e-15);
        assert!((m.accuracy - 0.7).abs() < 1e-15);
        assert!((m.f1 - 0.9 / 1.35).abs() < 1e-15);
    }

    #[test]
    fn perfect_and_all_negative() {
        let m = compute_metrics(&em(9, 0, 0, 0));
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (1.0, 1.0, 1.0, 1.0));
        assert_eq!(m.se_accuracy, 0.0);

        let m = compute_metrics(&em(0, 0, 0, 50));
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (1.0, 0.0, 0.0, 0.0));
        assert!(m.degenerate_precision && m.degenerate_recall && m.degenerate_f1);
        assert_eq!((m.se_precision, m.se_recall, m.se_f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn accuracy_se_binomial() {
        // 550 of 573 correct ≈ 0.96
        let se = (0.96f64 * 0.04 / 573.0).sqrt();
        assert!((se - 0.0082).abs() < 1e-4);
        let m = compute_metrics(&em(0, 0, 0, 573));
        assert_eq!(m.se_accuracy, 0.0);
    }

    #[test]
    fn f1_stderr_cases() {
        assert_eq!(f1_stderr(0.6, 0.0, 0.3, 0.0), 0.0);
        let v = f1_stderr(0.68, 0.07, 0.78, 0.06);
        let direct = 0.1908 / 1.46 + 1.0608 * 0.13 / 2.1316;
        assert!((v - direct).abs() < 1e-12);
        assert!((v - 0.1954).abs() < 1e-4);
        // at p = r both terms collapse: 2(2p dp)/(2p) + 2p^2(2dp)/(2p)^2 = 2dp + dp
        assert!((f1_stderr(0.4, 0.05, 0.4, 0.05) - 0.15).abs() < 1e-12);
        assert_eq!(f1_stderr(0.0, 0.1, 0.0, 0.1), 0.0);
    }

    #[test]
    fn mean_of_two_and_identity() {
        let a = MetricSet { accuracy: 0.8, se_accuracy: 0.03, ..Default::default() };
        let b = MetricSet { accuracy: 0.9, se_accuracy: 0.04, ..Default::default() };
        let m = aggregate_mean(&[a, b]).unwrap();
        assert!((m.accuracy - 0.85).abs() < 1e-15);
        assert!((m.se_accuracy - 0.025).abs() < 1e-15);
        assert_eq!(aggregate_mean(&[a]).unwrap(), a);
        assert!(aggregate_mean(&[]).is_err());
    }

    fn dataset(points: Vec<ReferencePoint>) -> ReferenceDataset {
        let d = NaiveDate::from_ymd_opt(2019, 1, 1).unwrap();
        ReferenceDataset::new("T", d, d, points).unwrap()
    }

    #[test]
    fn evaluate_against_hand_tally() {
        // 5x4 grid of 1-unit pixels; one reference point per pixel center
        let g = GridSpec::new(0.0, 4.0, 1.0, 1.0, 5, 4, "").unwrap();
        #[rustfmt::skip]
        let mask = vec![
            1, 1, 0, 0, MASK_NODATA,
            1, 0, 0, 1, 0,
            0, 0, 1, 1, 1,
            0, 1, 0, 0, 0,
        ];
        #[rustfmt::skip]
        let truth: [u8; 20] = [
            1, 0, 0, 1, 1,
            1, 0, 0, 0, 0,
            0, 1, 1, 1, 0,
            0, 1, 0, 0, 1,
        ];
        let pts = (0..20)
            .map(|i| {
                let (x, y) = g.pixel_center(i % 5, i / 5);
                ReferencePoint { x, y, label: truth[i] }
            })
            .collect();
        let m = BinaryMask::new(g, mask, MASK_NODATA).unwrap();
        let ev = evaluate_map(&m, &dataset(pts)).unwrap();
        // hand tally over the 19 valid pixels
        assert_eq!(ev.matrix, em(5, 3, 3, 8));
        assert_eq!(ev.excluded, 1);
        assert!((ev.metrics.accuracy - 13.0 / 19.0).abs() < 1e-15);
    }

    #[test]
    fn evaluate_truth_mask_and_all_nodata() {
        let g = GridSpec::new(0.0, 3.0, 1.0, 1.0, 3, 3, "").unwrap();
        let truth: Vec<u8> = vec![1, 0, 1, 0, 0, 1, 1, 1, 0];
        let pts: Vec<_> = (0..9)
            .map(|i| {
                let (x, y) = g.pixel_center(i % 3, i / 3);
                ReferencePoint { x, y, label: truth[i] }
            })
            .collect();
        let ds = dataset(pts);
        let m = BinaryMask::new(g.clone(), truth.iter().map(|&v| v as i32).collect(), MASK_NODATA)
            .unwrap();
        let ev = evaluate_map(&m, &ds).unwrap();
        assert_eq!((ev.metrics.accuracy, ev.metrics.f1), (1.0, 1.0));
        let empty = BinaryMask::new(g, vec![MASK_NODATA; 9], MASK_NODATA).unwrap();
        assert!(matches!(evaluate_map(&empty, &ds), Err(Error::AllPointsExcluded(9))));
    }

    #[test]
    fn bootstrap_sd_matches_binomial_se() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(500);
        let correct: Vec<bool> = (0..500).map(|_| rng.random_bool(0.85)).collect();
        let acc = correct.iter().filter(|&&c| c).count() as f64 / 500.0;
        let formula = (acc * (1.0 - acc) / 500.0).sqrt();
        let reps: Vec<f64> = (0..10_000)
            .map(|_| (0..500).filter(|_| correct[rng.random_range(0..500)]).count() as f64 / 500.0)
            .collect();
        let mean = reps.iter().sum::<f64>() / reps.len() as f64;
        let sd = (reps.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (reps.len() - 1) as f64).sqrt();
        assert!((sd - formula).abs() / formula < 0.15, "sd {sd} vs {formula}");
    }

    fn recount(p: &[u8], r: &[u8]) -> (f64, f64, f64) {
        let both = |a, b| p.iter().zip(r).filter(|(x, y)| **x == a && **y == b).count() as f64;
        let (tp, fp, fn_, tn) = (both(1, 1), both(1, 0), both(0, 1), both(0, 0));
        let prec = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let rec = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
        ((tp + tn) / p.len() as f64, prec, rec)
    }

    proptest! {
        #[test]
        fn metrics_match_recount(pairs in proptest::collection::vec((0u8..2, 0u8..2), 1..1000)) {
            let (p, r): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
            let m = compute_metrics(&error_matrix(&p, &r).unwrap());
            let (acc, prec, rec) = recount(&p, &r);
            prop_assert!((m.accuracy - acc).abs() < 1e-12);
            prop_assert!((m.precision - prec).abs() < 1e-12);
            prop_assert!((m.recall - rec).abs() < 1e-12);
            for v in [m.accuracy, m.precision, m.recall, m.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            if m.precision > 0.0 && m.recall > 0.0 {
                prop_assert!(m.f1 <= m.precision.max(m.recall) + 1e-15);
                prop_assert!(m.f1 >= m.precision.min(m.recall) - 1e-15);
            }
        }

        #[test]
        fn f1_stderr_symmetric_and_monotone(p in 0.01f64..1.0, r in 0.01f64..1.0,
                                            dp in 0.0f64..0.3, dr in 0.0f64..0.3, bump in 0.0f64..0.2) {
            let v = f1_stderr(p, dp, r, dr);
            prop_assert!((v - f1_stderr(r, dr, p, dp)).abs() <= 1e-12 * v.max(1.0));
            prop_assert!(f1_stderr(p, dp + bump, r, dr) >= v);
            prop_assert!(f1_stderr(p, dp, r, dr + bump) >= v);
        }

        #[test]
        fn mean_of_copies_scales_se(acc in 0.0f64..1.0, se in 0.0f64..0.2, k in 1usize..20) {
            let s = MetricSet { accuracy: acc, se_accuracy: se, ..Default::default() };
            let m = aggregate_mean(&vec![s; k]).unwrap();
            prop_assert!((m.accuracy - acc).abs() < 1e-12);
            prop_assert!((m.se_accuracy - se / (k as f64).sqrt()).abs() < 1e-12);
        }
    }
}
