//! Ranking and classification metrics over scored pairs.
//!
//! AUC uses the Mann-Whitney rank statistic, so tied positive/negative
//! scores earn half credit. Average precision walks the ranking in
//! descending score order; equal scores keep their input order.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{DatasetKind, PairDataset, PairLabel};
use crate::error::{Error, Result};
use crate::numfmt::sig9;
use crate::simfuncs::{MeasureSpec, ScoredPair};

pub const DEFAULT_HISTOGRAM_BINS: usize = 50;

fn check_lengths(scores: &[f64], positives: &[bool]) -> Result<()> {
    if scores.len() != positives.len() {
        return Err(Error::Parameter(format!(
            "{} scores but {} labels",
            scores.len(),
            positives.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::Numeric(format!("score {s} cannot be ranked")));
    }
    Ok(())
}

fn class_sizes(positives: &[bool]) -> Result<(usize, usize)> {
    let n_pos = positives.iter().filter(|&&p| p).count();
    let n_neg = positives.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Validation(format!(
            "need both classes, got {n_pos} positives and {n_neg} negatives"
        )));
    }
    Ok((n_pos, n_neg))
}

/// 1-based ranks in ascending order, ties sharing their average rank.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
pub fn auc(scores: &[f64], positives: &[bool]) -> Result<f64> {
    check_lengths(scores, positives)?;
    let (n_pos, n_neg) = class_sizes(positives)?;
    let ranks = average_ranks(scores);
    let pos_rank_sum: f64 = ranks
        .iter()
        .zip(positives)
        .filter(|(_, &p)| p)
        .map(|(r, _)| r)
        .sum();
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// ROC points `(fpr, tpr)` from (0,0) to (1,1), one per distinct score.
pub fn roc_curve(scores: &[f64], positives: &[bool]) -> Result<Vec<(f64, f64)>> {
    check_lengths(scores, positives)?;
    let (n_pos, n_neg) = class_sizes(positives)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        while k < order.len() && scores[order[k]] == s {
            if positives[order[k]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
    }
    Ok(points)
}

/// Trapezoidal area under a polyline of `(x, y)` points.
pub fn trapezoid_area(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

/// Σ (R_n − R_{n−1}) P_n over the descending-score ranking.
pub fn average_precision(scores: &[f64], positives: &[bool]) -> Result<f64> {
    check_lengths(scores, positives)?;
    let n_pos = positives.iter().filter(|&&p| p).count();
    if n_pos == 0 {
        return Err(Error::Validation(
            "average precision needs at least one positive".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    let mut tp = 0usize;
    for (n, &i) in order.iter().enumerate() {
        if positives[i] {
            tp += 1;
        }
        let recall = tp as f64 / n_pos as f64;
        let precision = tp as f64 / (n + 1) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

/// Derived rates; `None` where the denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMetrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub fpr: Option<f64>,
    pub fnr: Option<f64>,
}

impl ConfusionMatrix {
    /// Tally predictions against ground truth.
    pub fn from_predictions(predicted: &[bool], actual: &[bool]) -> Result<Self> {
        if predicted.len() != actual.len() {
            return Err(Error::Parameter(
                "predicted and actual differ in length".into(),
            ));
        }
        let mut cm = ConfusionMatrix::default();
        for (&p, &a) in predicted.iter().zip(actual) {
            match (p, a) {
                (true, true) => cm.tp += 1,
                (true, false) => cm.fp += 1,
                (false, true) => cm.fn_ += 1,
                (false, false) => cm.tn += 1,
            }
        }
        Ok(cm)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

pub fn confusion_metrics(cm: &ConfusionMatrix) -> ConfusionMetrics {
    let rate = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
    ConfusionMetrics {
        precision: rate(cm.tp, cm.tp + cm.fp),
        recall: rate(cm.tp, cm.tp + cm.fn_),
        fpr: rate(cm.fp, cm.fp + cm.tn),
        fnr: rate(cm.fn_, cm.tp + cm.fn_),
    }
}

/// Tie-corrected Spearman correlation. `Ok(None)` when either side is constant.
pub fn spearman_rho(a: &[f64], b: &[f64]) -> Result<Option<f64>> {
    if a.len() != b.len() {
        return Err(Error::Parameter(format!(
            "length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::Parameter(
            "spearman needs at least two observations".into(),
        ));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::Numeric("NaN in spearman input".into()));
    }
    Ok(pearson(&average_ranks(a), &average_ranks(b)))
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx.sqrt() * syy.sqrt()))
}

/// Equal-width histogram of scores per label over the joint score range.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramTable {
    pub edges: Vec<f64>,
    pub counts: BTreeMap<String, Vec<usize>>,
}

pub fn score_histograms<'a>(
    scored: impl IntoIterator<Item = (&'a str, f64)>,
    bins: usize,
) -> Result<HistogramTable> {
    if bins < 1 {
        return Err(Error::Parameter("histogram needs at least one bin".into()));
    }
    let items: Vec<(&str, f64)> = scored.into_iter().collect();
    let lo = items.iter().map(|i| i.1).fold(f64::INFINITY, f64::min);
    let hi = items.iter().map(|i| i.1).fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if items.is_empty() {
        (0.0, 1.0)
    } else {
        (lo, hi)
    };
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins)
        .map(|k| if k == bins { hi } else { lo + k as f64 * width })
        .collect();
    let mut counts: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (label, s) in items {
        let bin = if hi > lo {
            (((s - lo) / (hi - lo)) * bins as f64) as usize
        } else {
            0
        };
        counts
            .entry(label.to_owned())
            .or_insert_with(|| vec![0; bins])[bin.min(bins - 1)] += 1;
    }
    Ok(HistogramTable { edges, counts })
}

impl HistogramTable {
    /// CSV with columns `bin_lo,bin_hi,<label>...`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi");
        for label in self.counts.keys() {
            out.push(',');
            out.push_str(label);
        }
        out.push('\n');
        for k in 0..self.edges.len().saturating_sub(1) {
            let _ = write!(out, "{},{}", sig9(self.edges[k]), sig9(self.edges[k + 1]));
            for c in self.counts.values() {
                let _ = write!(out, ",{}", c[k]);
            }
            out.push('\n');
        }
        out
    }
}

pub fn roc_to_csv(points: &[(f64, f64)]) -> String {
    let mut out = String::from("fpr,tpr\n");
    for &(x, y) in points {
        let _ = writeln!(out, "{},{}", sig9(x), sig9(y));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionReport {
    #[serde(flatten)]
    pub matrix: ConfusionMatrix,
    #[serde(flatten)]
    pub metrics: ConfusionMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub measure: MeasureSpec,
    pub dataset: DatasetKind,
    pub auc: f64,
    pub ap: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    /// Cited (predicted) against relevant (actual), when both labelings exist.
    pub confusion: Option<ConfusionReport>,
    pub spearman: BTreeMap<String, Option<f64>>,
    #[serde(skip)]
    pub roc_points: Vec<(f64, f64)>,
}

impl EvalReport {
    /// Evaluate scores of `dataset`'s pairs (in dataset order). Pairs
    /// without a binary class (duplicates) are left out of AUC and AP.
    pub fn evaluate(
        dataset: &PairDataset,
        scored: &[ScoredPair],
        measure: MeasureSpec,
    ) -> Result<Self> {
        if scored.len() != dataset.len() {
            return Err(Error::Parameter(format!(
                "{} scores for {} pairs",
                scored.len(),
                dataset.len()
            )));
        }
        let (mut scores, mut positives) = (Vec::new(), Vec::new());
        for sp in scored {
            if let Some(pos) = dataset.positive(&sp.pair) {
                scores.push(sp.score);
                positives.push(pos);
            }
        }
        let (n_pos, n_neg) = class_sizes(&positives)?;
        let cited_flag = |sp: &ScoredPair| {
            sp.pair
                .label
                .map(|l| if l == PairLabel::Cited { 1.0 } else { 0.0 })
        };

        let mut spearman = BTreeMap::new();
        let mut confusion = None;
        match dataset.kind {
            DatasetKind::CitedRandom => {
                let flags: Vec<f64> = positives
                    .iter()
                    .map(|&p| if p { 1.0 } else { 0.0 })
                    .collect();
                spearman.insert("score_vs_cited".to_owned(), spearman_rho(&scores, &flags)?);
            }
            DatasetKind::RelevanceLabeled => {
                let rel: Vec<f64> = scored
                    .iter()
                    .map(|sp| sp.pair.relevance.unwrap_or(0) as f64)
                    .collect();
                let all_scores: Vec<f64> = scored.iter().map(|sp| sp.score).collect();
                if all_scores.len() >= 2 {
                    spearman.insert(
                        "score_vs_relevance".to_owned(),
                        spearman_rho(&all_scores, &rel)?,
                    );
                }
                let labeled: Vec<(&ScoredPair, f64)> = scored
                    .iter()
                    .filter_map(|sp| cited_flag(sp).map(|f| (sp, f)))
                    .collect();
                if labeled.len() >= 2 {
                    let flags: Vec<f64> = labeled.iter().map(|x| x.1).collect();
                    let s: Vec<f64> = labeled.iter().map(|x| x.0.score).collect();
                    let r: Vec<f64> = labeled
                        .iter()
                        .map(|x| x.0.pair.relevance.unwrap_or(0) as f64)
                        .collect();
                    spearman.insert("score_vs_cited".to_owned(), spearman_rho(&s, &flags)?);
                    spearman.insert("relevance_vs_cited".to_owned(), spearman_rho(&r, &flags)?);
                    let predicted: Vec<bool> = flags.iter().map(|&f| f == 1.0).collect();
                    let actual: Vec<bool> = labeled
                        .iter()
                        .map(|x| dataset.is_relevant(&x.0.pair))
                        .collect();
                    let matrix = ConfusionMatrix::from_predictions(&predicted, &actual)?;
                    confusion = Some(ConfusionReport {
                        matrix,
                        metrics: confusion_metrics(&matrix),
                    });
                }
            }
        }

        Ok(EvalReport {
            measure,
            dataset: dataset.kind,
            auc: auc(&scores, &positives)?,
            ap: average_precision(&scores, &positives)?,
            n_pos,
            n_neg,
            confusion,
            spearman,
            roc_points: roc_curve(&scores, &positives)?,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn auc_examples() {
        let s = [0.9, 0.8, 0.2, 0.1];
        let p = [true, true, false, false];
        assert_eq!(auc(&s, &p).unwrap(), 1.0);
        assert_eq!(auc(&[0.5, 0.5], &[true, false]).unwrap(), 0.5);
        assert_eq!(
            auc(&[0.8, 0.4, 0.6, 0.2], &[true, true, false, false]).unwrap(),
            0.75
        );
        assert!(auc(&[0.1, 0.2], &[true, true]).is_err());
        assert!(auc(&[0.1], &[true, false]).is_err());
    }

    #[test]
    fn roc_examples() {
        let perfect = roc_curve(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap();
        assert_eq!(
            perfect,
            vec![(0.0, 0.0), (0.0, 0.5), (0.0, 1.0), (0.5, 1.0), (1.0, 1.0)]
        );
        let flat = roc_curve(&[0.3; 4], &[true, false, true, false]).unwrap();
        assert_eq!(flat, vec![(0.0, 0.0), (1.0, 1.0)]);
        let mixed = roc_curve(&[0.8, 0.4, 0.6, 0.2], &[true, true, false, false]).unwrap();
        assert_eq!(trapezoid_area(&mixed), 0.75);
    }

    #[test]
    fn ap_examples() {
        let ap = average_precision(&[4.0, 3.0, 2.0, 1.0], &[true, false, true, false]).unwrap();
        assert_abs_diff_eq!(ap, 0.5 + 0.5 * 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(ap, 0.8333, epsilon = 1e-4);
        assert_eq!(
            average_precision(&[3.0, 2.0, 1.0], &[true, true, false]).unwrap(),
            1.0
        );
        for k in 1..8 {
            let scores: Vec<f64> = (0..k).rev().map(f64::from).collect();
            let mut pos = vec![false; k as usize];
            pos[k as usize - 1] = true;
            assert_abs_diff_eq!(
                average_precision(&scores, &pos).unwrap(),
                1.0 / k as f64,
                epsilon = 1e-15
            );
        }
        assert!(average_precision(&[1.0], &[false]).is_err());
    }

    #[test]
    fn ap_ties_follow_input_order() {
        assert_eq!(average_precision(&[1.0, 1.0], &[true, false]).unwrap(), 1.0);
        assert_eq!(average_precision(&[1.0, 1.0], &[false, true]).unwrap(), 0.5);
    }

    #[test]
    fn confusion_examples() {
        let m = confusion_metrics(&ConfusionMatrix {
            tp: 65,
            fn_: 18,
            fp: 86,
            tn: 281,
        });
        assert_abs_diff_eq!(m.recall.unwrap(), 0.7831, epsilon = 5e-4);
        assert_abs_diff_eq!(m.precision.unwrap(), 0.4305, epsilon = 5e-4);
        let m = confusion_metrics(&ConfusionMatrix {
            tp: 0,
            fp: 0,
            fn_: 3,
            tn: 2,
        });
        assert_eq!(m.precision, None);
        assert_eq!(m.fpr, Some(0.0));
        assert_eq!(m.fnr, Some(1.0));
    }

    #[test]
    fn spearman_examples() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert_abs_diff_eq!(spearman_rho(&a, &a).unwrap().unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            spearman_rho(&a, &[4.0, 3.0, 2.0, 1.0]).unwrap().unwrap(),
            -1.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            spearman_rho(&a, &[1.0, 3.0, 2.0, 4.0]).unwrap().unwrap(),
            0.8,
            epsilon = 1e-15
        );
        assert_eq!(spearman_rho(&a, &[1.0; 4]).unwrap(), None);
        assert!(spearman_rho(&a, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn histograms() {
        let t = score_histograms([("a", 0.5), ("b", 0.5), ("a", 0.5)], 10).unwrap();
        let occupied: usize = t
            .counts
            .values()
            .map(|c| c.iter().filter(|&&n| n > 0).count())
            .max()
            .unwrap();
        assert_eq!(occupied, 1);
        let items = [
            ("cited", 0.1),
            ("random", 0.0),
            ("random", 0.35),
            ("cited", 1.0),
            ("duplicate", 1.0),
        ];
        let t = score_histograms(items, 4).unwrap();
        assert_eq!(t.counts["random"].iter().sum::<usize>(), 2);
        assert_eq!(t.counts["cited"], vec![1, 0, 0, 1]);
        assert_eq!(t.counts["duplicate"], vec![0, 0, 0, 1]);
        assert_eq!(t.edges.len(), 5);
        let csv = t.to_csv();
        assert!(
            csv.starts_with("bin_lo,bin_hi,cited,duplicate,random\n0,0.25,1,0,1\n"),
            "{csv}"
        );
        assert!(score_histograms([("a", 1.0)], 0).is_err());
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        fn labeled_scores() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
            (2usize..60).prop_flat_map(|n| {
                (
                    prop::collection::vec((0u8..12).prop_map(|k| k as f64 / 4.0), n),
                    prop::collection::vec(any::<bool>(), n),
                )
                    .prop_filter("both classes", |(_, p)| {
                        p.iter().any(|&b| b) && p.iter().any(|&b| !b)
                    })
            })
        }

        fn brute_auc(scores: &[f64], pos: &[bool]) -> f64 {
            let mut credit = 0.0;
            let mut pairs = 0.0;
            for i in 0..scores.len() {
                for j in 0..scores.len() {
                    if pos[i] && !pos[j] {
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

        proptest! {
            #[test]
            fn auc_matches_pair_count((s, p) in labeled_scores()) {
                prop_assert!((auc(&s, &p).unwrap() - brute_auc(&s, &p)).abs() < 1e-12);
            }

            #[test]
            fn auc_in_unit_interval_and_flips((s, p) in labeled_scores()) {
                let a = auc(&s, &p).unwrap();
                prop_assert!((0.0..=1.0).contains(&a));
                let neg: Vec<f64> = s.iter().map(|x| -x).collect();
                prop_assert!((auc(&neg, &p).unwrap() - (1.0 - a)).abs() < 1e-12);
            }

            #[test]
            fn auc_invariant_under_monotone_maps((s, p) in labeled_scores()) {
                let a = auc(&s, &p).unwrap();
                let affine: Vec<f64> = s.iter().map(|x| 2.0 * x + 1.0).collect();
                let cube: Vec<f64> = s.iter().map(|x| x * x * x).collect();
                prop_assert_eq!(auc(&affine, &p).unwrap(), a);
                prop_assert_eq!(auc(&cube, &p).unwrap(), a);
            }

            #[test]
            fn roc_area_is_auc((s, p) in labeled_scores()) {
                let roc = roc_curve(&s, &p).unwrap();
                prop_assert_eq!(roc[0], (0.0, 0.0));
                prop_assert_eq!(*roc.last().unwrap(), (1.0, 1.0));
                prop_assert!(roc.windows(2).all(|w| w[1].0 >= w[0].0 && w[1].1 >= w[0].1));
                prop_assert!((trapezoid_area(&roc) - auc(&s, &p).unwrap()).abs() < 1e-12);
            }

            #[test]
            fn ap_in_unit_interval((s, p) in labeled_scores()) {
                let ap = average_precision(&s, &p).unwrap();
                prop_assert!(ap > 0.0 && ap <= 1.0 + 1e-15);
            }

            #[test]
            fn spearman_symmetric_and_bounded(
                a in prop::collection::vec(-5i32..5, 3..40),
                seed in any::<u64>(),
            ) {
                let a: Vec<f64> = a.into_iter().map(f64::from).collect();
                let b: Vec<f64> = a.iter().enumerate().map(|(i, x)| x + ((seed >> (i % 60)) & 3) as f64).collect();
                let ab = spearman_rho(&a, &b).unwrap();
                prop_assert_eq!(ab, spearman_rho(&b, &a).unwrap());
                if let Some(r) = ab {
                    prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
                }
            }
        }
    }
}
