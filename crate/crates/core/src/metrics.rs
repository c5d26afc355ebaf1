//! Multi-label evaluation: class-wise average precision, AUROC with ties
//! counted as half, and top-1 accuracy. Classes without both positives and
//! negatives (as each metric requires) are skipped and excluded from the
//! macro means, never silently scored as zero.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// N×C sigmoid scores with aligned binary labels, row-major.
#[derive(Debug, Clone)]
pub struct ScoreMatrix {
    pub n: usize,
    pub c: usize,
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

impl ScoreMatrix {
    pub fn new(n: usize, c: usize, scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if scores.len() != n * c || labels.len() != n * c {
            return Err(Error::InvalidArgument(format!(
                "score matrix needs {} entries, got {} scores / {} labels",
                n * c,
                scores.len(),
                labels.len()
            )));
        }
        if !scores.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("scores must be finite".to_string()));
        }
        if !labels.iter().all(|&l| l <= 1) {
            return Err(Error::InvalidArgument("labels must be 0 or 1".to_string()));
        }
        Ok(Self { n, c, scores, labels })
    }

    fn column(&self, class: usize) -> (Vec<f64>, Vec<u8>) {
        let s = (0..self.n).map(|i| self.scores[i * self.c + class]).collect();
        let l = (0..self.n).map(|i| self.labels[i * self.c + class]).collect();
        (s, l)
    }
}

/// Average precision: mean of precision-at-rank over the positive ranks,
/// ranked by descending score with ties kept in input order. `None` when
/// the class has no positives (skipped, not zero).
pub fn average_precision(scores: &[f64], labels: &[u8]) -> Option<f64> {
    debug_assert_eq!(scores.len(), labels.len());
    let positives = labels.iter().filter(|&&l| l == 1).count();
    if positives == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank0, &i) in order.iter().enumerate() {
        if labels[i] == 1 {
            hits += 1;
            sum += hits as f64 / (rank0 + 1) as f64;
        }
    }
    Some(sum / positives as f64)
}

/// AUROC: probability a positive outranks a negative, ties worth 0.5,
/// computed via midranks in O(N log N). `None` without both a positive and
/// a negative.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    debug_assert_eq!(scores.len(), labels.len());
    let n = scores.len();
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = n - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));
    // midranks: tied scores all get the average of their 1-based ranks
    let mut rank_sum_pos = 0.0;
    let mut start = 0usize;
    while start < n {
        let mut end = start + 1;
        while end < n && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let midrank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            if labels[i] == 1 {
                rank_sum_pos += midrank;
            }
        }
        start = end;
    }
    let u = rank_sum_pos - (pos * (pos + 1)) as f64 / 2.0;
    Some(u / (pos as f64 * neg as f64))
}

/// Fraction of labeled rows whose highest-scoring class (lowest index on
/// ties) is among the true labels. Rows without any true label are left
/// out of the mean.
pub fn top1_acc(matrix: &ScoreMatrix) -> f64 {
    let mut counted = 0usize;
    let mut hits = 0usize;
    for i in 0..matrix.n {
        let row_labels = &matrix.labels[i * matrix.c..(i + 1) * matrix.c];
        if !row_labels.contains(&1) {
            continue;
        }
        counted += 1;
        let row = &matrix.scores[i * matrix.c..(i + 1) * matrix.c];
        let mut best = 0usize;
        for (c, &s) in row.iter().enumerate() {
            if s > row[best] {
                best = c;
            }
        }
        if row_labels[best] == 1 {
            hits += 1;
        }
    }
    if counted == 0 {
        0.0
    } else {
        hits as f64 / counted as f64
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_class_ap: Vec<Option<f64>>,
    pub per_class_auroc: Vec<Option<f64>>,
    /// Macro mean AP over classes with at least one positive.
    pub map: f64,
    /// Macro mean AUROC over classes with both positives and negatives.
    pub macro_auroc: f64,
    pub t1_acc: f64,
    /// Classes excluded from at least one macro mean.
    pub skipped: Vec<usize>,
    /// Rows with no true label, excluded from top-1.
    pub unlabeled_rows: usize,
}

impl EvalReport {
    /// Plain-text summary table.
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str("class      AP     AUROC\n");
        for (c, (ap, au)) in self.per_class_ap.iter().zip(&self.per_class_auroc).enumerate() {
            let fmt = |v: &Option<f64>| match v {
                Some(x) => format!("{x:.4}"),
                None => "  --  ".to_string(),
            };
            out.push_str(&format!("{c:<8} {:>6}  {:>6}\n", fmt(ap), fmt(au)));
        }
        out.push_str(&format!(
            "macro    mAP {:.4}  AUROC {:.4}  T1 {:.4}  skipped {:?}\n",
            self.map, self.macro_auroc, self.t1_acc, self.skipped
        ));
        out
    }
}

pub fn evaluate_all(matrix: &ScoreMatrix) -> EvalReport {
    let mut per_class_ap = Vec::with_capacity(matrix.c);
    let mut per_class_auroc = Vec::with_capacity(matrix.c);
    let mut skipped = Vec::new();
    for c in 0..matrix.c {
        let (s, l) = matrix.column(c);
        let ap = average_precision(&s, &l);
        let au = auroc(&s, &l);
        if ap.is_none() || au.is_none() {
            skipped.push(c);
        }
        per_class_ap.push(ap);
        per_class_auroc.push(au);
    }
    let mean = |vals: &[Option<f64>]| {
        let kept: Vec<f64> = vals.iter().filter_map(|&v| v).collect();
        if kept.is_empty() {
            0.0
        } else {
            kept.iter().sum::<f64>() / kept.len() as f64
        }
    };
    let unlabeled_rows = (0..matrix.n)
        .filter(|&i| !matrix.labels[i * matrix.c..(i + 1) * matrix.c].contains(&1))
        .count();
    EvalReport {
        map: mean(&per_class_ap),
        macro_auroc: mean(&per_class_auroc),
        t1_acc: top1_acc(matrix),
        per_class_ap,
        per_class_auroc,
        skipped,
        unlabeled_rows,
    }
}

/// Quadratic reference implementations used to cross-check the fast paths.
pub mod oracle {
    /// AP by explicit precision-at-k over a stable descending ranking.
    pub fn average_precision(scores: &[f64], labels: &[u8]) -> Option<f64> {
        let positives = labels.iter().filter(|&&l| l == 1).count();
        if positives == 0 {
            return None;
        }
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
        let mut sum = 0.0;
        for k in 1..=order.len() {
            if labels[order[k - 1]] == 0 {
                continue;
            }
            let tp = order[..k].iter().filter(|&&i| labels[i] == 1).count();
            sum += tp as f64 / k as f64;
        }
        Some(sum / positives as f64)
    }

    /// AUROC by the O(N^2) pairwise indicator with ties at 0.5.
    pub fn auroc(scores: &[f64], labels: &[u8]) -> Option<f64> {
        let pos: Vec<f64> = scores
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l == 1)
            .map(|(&s, _)| s)
            .collect();
        let neg: Vec<f64> = scores
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l == 0)
            .map(|(&s, _)| s)
            .collect();
        if pos.is_empty() || neg.is_empty() {
            return None;
        }
        let mut sum = 0.0;
        for &p in &pos {
            for &q in &neg {
                sum += if p > q {
                    1.0
                } else if p == q {
                    0.5
                } else {
                    0.0
                };
            }
        }
        Some(sum / (pos.len() * neg.len()) as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn ap_worked_examples() {
        assert_eq!(average_precision(&[0.9, 0.1, 0.8], &[1, 0, 1]), Some(1.0));
        assert_eq!(average_precision(&[0.1, 0.9], &[1, 0]), Some(0.5));
        assert_eq!(average_precision(&[0.3, 0.7, 0.5], &[1, 1, 1]), Some(1.0));
        assert_eq!(average_precision(&[0.3, 0.7], &[0, 0]), None);
    }

    #[test]
    fn auroc_worked_examples() {
        assert_eq!(auroc(&[0.9, 0.8, 0.1], &[1, 1, 0]), Some(1.0));
        assert_eq!(auroc(&[0.4, 0.4, 0.4], &[1, 0, 1]), Some(0.5));
        assert_eq!(auroc(&[0.1, 0.9], &[1, 0]), Some(0.0));
        assert_eq!(auroc(&[0.1, 0.9], &[1, 1]), None);
    }

    #[test]
    fn top1_examples() {
        let m = ScoreMatrix::new(1, 3, vec![0.1, 0.9, 0.3], vec![0, 1, 0]).unwrap();
        assert_eq!(top1_acc(&m), 1.0);
        let m = ScoreMatrix::new(1, 3, vec![0.1, 0.9, 0.3], vec![1, 0, 0]).unwrap();
        assert_eq!(top1_acc(&m), 0.0);
        let m = ScoreMatrix::new(
            2,
            2,
            vec![0.9, 0.1, 0.2, 0.8],
            vec![1, 0, 1, 0],
        )
        .unwrap();
        assert_eq!(top1_acc(&m), 0.5);
        // argmax ties go to the lowest class index
        let m = ScoreMatrix::new(1, 2, vec![0.5, 0.5], vec![1, 0]).unwrap();
        assert_eq!(top1_acc(&m), 1.0);
    }

    #[test]
    fn fast_paths_match_oracles() {
        for trial in 0..1000u64 {
            let mut rng = crate::augment::sample_rng(77, trial);
            let n = rng.random_range(2..=50);
            // coarse scores force plenty of ties
            let scores: Vec<f64> =
                (0..n).map(|_| (rng.random_range(0..10) as f64) / 10.0).collect();
            let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2) as u8).collect();
            match (average_precision(&scores, &labels), oracle::average_precision(&scores, &labels)) {
                (Some(a), Some(b)) => assert!((a - b).abs() < 1e-12, "AP {a} vs {b}"),
                (a, b) => assert_eq!(a, b),
            }
            match (auroc(&scores, &labels), oracle::auroc(&scores, &labels)) {
                (Some(a), Some(b)) => assert!((a - b).abs() < 1e-12, "AUROC {a} vs {b}"),
                (a, b) => assert_eq!(a, b),
            }
        }
    }

    #[test]
    fn metrics_are_monotone_invariant() {
        for trial in 0..100u64 {
            let mut rng = crate::augment::sample_rng(78, trial);
            let n = rng.random_range(3..=40);
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2) as u8).collect();
            // strictly monotone transform: scaled sigmoid
            let mapped: Vec<f64> = scores.iter().map(|&s| 5.0 / (1.0 + (-s).exp())).collect();
            assert_eq!(average_precision(&scores, &labels), average_precision(&mapped, &labels));
            assert_eq!(auroc(&scores, &labels), auroc(&mapped, &labels));
        }
    }

    #[test]
    fn random_scores_baseline() {
        let n = 10_000;
        let mut rng = crate::augment::sample_rng(79, 0);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2) as u8).collect();
        let au = auroc(&scores, &labels).unwrap();
        assert!((au - 0.5).abs() < 0.02, "AUROC {au}");
    }

    #[test]
    fn perfect_predictions_score_one() {
        let labels = vec![1, 0, 0, 1, 0, 1];
        let scores: Vec<f64> = labels.iter().map(|&l| l as f64 * 0.8 + 0.1).collect();
        let m = ScoreMatrix::new(3, 2, scores, labels).unwrap();
        let report = evaluate_all(&m);
        assert_eq!(report.map, 1.0);
        assert_eq!(report.macro_auroc, 1.0);
        assert_eq!(report.t1_acc, 1.0);
        assert!(report.skipped.is_empty());
    }

    #[test]
    fn macro_map_is_class_permutation_invariant() {
        let mut rng = crate::augment::sample_rng(80, 0);
        let (n, c) = (30, 4);
        let scores: Vec<f64> = (0..n * c).map(|_| rng.random_range(0.0..1.0)).collect();
        let labels: Vec<u8> = (0..n * c).map(|_| rng.random_range(0..2) as u8).collect();
        let base = evaluate_all(&ScoreMatrix::new(n, c, scores.clone(), labels.clone()).unwrap());
        // reverse the class order
        let perm = |v: &[f64]| -> Vec<f64> {
            (0..n * c).map(|i| v[(i / c) * c + (c - 1 - i % c)]).collect()
        };
        let perm_l: Vec<u8> = (0..n * c).map(|i| labels[(i / c) * c + (c - 1 - i % c)]).collect();
        let permuted = evaluate_all(&ScoreMatrix::new(n, c, perm(&scores), perm_l).unwrap());
        assert!((base.map - permuted.map).abs() < 1e-12);
        assert!((base.macro_auroc - permuted.macro_auroc).abs() < 1e-12);
    }

    #[test]
    fn empty_class_is_skipped_and_reported() {
        let m = ScoreMatrix::new(
            2,
            2,
            vec![0.9, 0.4, 0.2, 0.6],
            vec![1, 0, 0, 0],
        )
        .unwrap();
        let report = evaluate_all(&m);
        assert_eq!(report.skipped, vec![1]);
        assert_eq!(report.per_class_ap[1], None);
        assert_eq!(report.map, 1.0);
    }
}
