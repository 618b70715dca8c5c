//! Top-n accuracy, confusion matrices and fold-aggregated accuracy reports.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::Variant;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("n = {n} outside 1..={c}")]
    BadN { n: usize, c: usize },
    #[error("{predictions} predictions for {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("label {label} outside 0..{c}")]
    BadLabel { label: usize, c: usize },
}

/// Rank of `label` in `probs` (0 = most probable); equal probabilities
/// rank the lower label index first.
pub fn rank_of(probs: &[f64], label: usize) -> usize {
    let p = probs[label];
    probs
        .iter()
        .enumerate()
        .filter(|&(j, &q)| q > p || (q == p && j < label))
        .count()
}

/// Indices of the top `n` labels, most probable first.
pub fn top_labels(probs: &[f64], n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    idx.truncate(n);
    idx
}

/// Fraction of samples whose label is among the `n` most probable labels.
pub fn topn_accuracy(probs: &[Vec<f64>], labels: &[usize], n: usize) -> Result<f64, EvalError> {
    if probs.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            predictions: probs.len(),
            labels: labels.len(),
        });
    }
    let c = probs.first().map_or(n, Vec::len);
    if n == 0 || n > c {
        return Err(EvalError::BadN { n, c });
    }
    if probs.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for (p, &l) in probs.iter().zip(labels) {
        if l >= p.len() {
            return Err(EvalError::BadLabel { label: l, c: p.len() });
        }
        if rank_of(p, l) < n {
            hits += 1;
        }
    }
    Ok(hits as f64 / probs.len() as f64)
}

/// `c x c` counts; rows are true labels, columns predictions.
pub fn confusion(predictions: &[usize], labels: &[usize], c: usize) -> Result<Vec<Vec<usize>>, EvalError> {
    if predictions.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    let mut m = vec![vec![0; c]; c];
    for (&p, &l) in predictions.iter().zip(labels) {
        for x in [p, l] {
            if x >= c {
                return Err(EvalError::BadLabel { label: x, c });
            }
        }
        m[l][p] += 1;
    }
    Ok(m)
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    if values.iter().all(|&v| v == values[0]) {
        return (values[0], 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Detection attempts reported per model.
pub const ATTEMPTS: [usize; 3] = [1, 2, 3];

/// Per-fold top-1/2/3 accuracies of one cross-validated model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KFoldOutput {
    pub arch: String,
    pub variant: Variant,
    pub m: usize,
    pub train: Vec<[f64; 3]>,
    pub test: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub arch: String,
    pub variant: Variant,
    pub m: usize,
    pub split: String,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub folds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub rows: Vec<ReportRow>,
}

pub fn build_report(outputs: &[KFoldOutput]) -> AccuracyReport {
    let mut rows = Vec::new();
    for out in outputs {
        for (split, folds) in [("train", &out.train), ("test", &out.test)] {
            if folds.is_empty() {
                continue;
            }
            for (k, &n) in ATTEMPTS.iter().enumerate() {
                let values: Vec<f64> = folds.iter().map(|f| f[k]).collect();
                let (mean, std) = mean_std(&values);
                rows.push(ReportRow {
                    arch: out.arch.clone(),
                    variant: out.variant,
                    m: out.m,
                    split: split.into(),
                    n,
                    mean,
                    std,
                    folds: folds.len(),
                });
            }
        }
    }
    AccuracyReport { rows }
}

/// One accuracy-vs-attempts series with error bars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSeries {
    pub label: String,
    pub x: Vec<usize>,
    pub y: Vec<f64>,
    pub err: Vec<f64>,
}

impl AccuracyReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("arch,variant,m,split,n,mean,std,folds\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{:.6},{:.6},{}",
                r.arch, r.variant, r.m, r.split, r.n, r.mean, r.std, r.folds
            );
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.rows).expect("report rows serialize")
    }

    pub fn plot_series(&self) -> Vec<PlotSeries> {
        let mut series: Vec<PlotSeries> = Vec::new();
        for r in &self.rows {
            let label = format!("{} {} m={} {}", r.arch, r.variant, r.m, r.split);
            match series.iter_mut().find(|s| s.label == label) {
                Some(s) => {
                    s.x.push(r.n);
                    s.y.push(r.mean);
                    s.err.push(r.std);
                }
                None => series.push(PlotSeries {
                    label,
                    x: vec![r.n],
                    y: vec![r.mean],
                    err: vec![r.std],
                }),
            }
        }
        series
    }

    pub fn get(&self, arch: &str, m: usize, split: &str, n: usize) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.arch == arch && r.m == m && r.split == split && r.n == n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rank_boundaries() {
        let probs = vec![vec![0.5, 0.3, 0.2]];
        assert_eq!(topn_accuracy(&probs, &[1], 1).unwrap(), 0.0);
        assert_eq!(topn_accuracy(&probs, &[1], 2).unwrap(), 1.0);
        assert_eq!(topn_accuracy(&probs, &[2], 3).unwrap(), 1.0);
        assert_eq!(topn_accuracy(&probs, &[2], 4), Err(EvalError::BadN { n: 4, c: 3 }));
        assert_eq!(topn_accuracy(&probs, &[2], 0), Err(EvalError::BadN { n: 0, c: 3 }));
    }

    #[test]
    fn ties_favour_lower_index() {
        let probs = vec![vec![0.25; 4]];
        assert_eq!(topn_accuracy(&probs, &[0], 1).unwrap(), 1.0);
        assert_eq!(topn_accuracy(&probs, &[1], 1).unwrap(), 0.0);
        assert_eq!(top_labels(&probs[0], 2), vec![0, 1]);
    }

    #[test]
    fn confusion_cases() {
        let labels = [0, 1, 2, 2, 1, 0];
        let perfect = confusion(&labels, &labels, 3).unwrap();
        assert_eq!(perfect, vec![vec![2, 0, 0], vec![0, 2, 0], vec![0, 0, 2]]);
        let constant = confusion(&[1; 6], &labels, 3).unwrap();
        assert!(constant.iter().all(|r| r[0] == 0 && r[2] == 0));
        let preds = [0, 2, 2, 1, 1, 1];
        // tally by hand: (0,0) (1,2) (2,2) (2,1) (1,1) (0,1)
        let manual = vec![vec![1, 1, 0], vec![0, 1, 1], vec![0, 1, 1]];
        assert_eq!(confusion(&preds, &labels, 3).unwrap(), manual);
        assert!(confusion(&preds[..5], &labels, 3).is_err());
    }

    #[test]
    fn mean_std_arithmetic() {
        assert_eq!(mean_std(&[0.7; 10]), (0.7, 0.0));
        let (m, s) = mean_std(&[0.6, 0.62]);
        assert!((m - 0.61).abs() < 1e-12);
        assert!((s - 0.02 / 2f64.sqrt()).abs() < 1e-12);
        assert!((s - 0.01414).abs() < 1e-5);
    }

    #[test]
    fn report_rows_and_csv() {
        let out = KFoldOutput {
            arch: "lstm".into(),
            variant: Variant::TwoD,
            m: 24,
            train: vec![[0.9, 0.95, 0.99]; 2],
            test: vec![[0.6, 0.8, 0.9], [0.62, 0.82, 0.92]],
        };
        let report = build_report(std::slice::from_ref(&out));
        assert_eq!(report.rows.len(), 6);
        let row = report.get("lstm", 24, "test", 1).unwrap();
        assert!((row.mean - 0.61).abs() < 1e-12);
        let csv = report.to_csv();
        assert!(csv.starts_with("arch,variant,m,split,n,mean,std,folds\n"));
        assert_eq!(csv, build_report(&[out]).to_csv());
        assert_eq!(report.plot_series().len(), 2);
    }

    proptest! {
        #[test]
        fn monotone_in_n(rows in proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, 5), 1..50),
                         seed in 0usize..5) {
            let labels: Vec<usize> = (0..rows.len()).map(|i| (i + seed) % 5).collect();
            let mut prev = 0.0;
            for n in 1..=5 {
                let acc = topn_accuracy(&rows, &labels, n).unwrap();
                prop_assert!(acc >= prev);
                prev = acc;
            }
            prop_assert_eq!(prev, 1.0);
        }
    }
}
