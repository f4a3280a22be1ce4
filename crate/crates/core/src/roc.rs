//! ROC construction, operating-point selection and the ranking metrics.
//!
//! Decision rule everywhere: a sample is flagged malicious iff
//! `score >= threshold`. `f64::INFINITY` is the all-negative sentinel
//! threshold.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    #[serde(with = "threshold_serde")]
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
}

impl OperatingPoint {
    pub fn is_sentinel(&self) -> bool {
        self.threshold == f64::INFINITY
    }
}

/// Points sorted by descending threshold. The first point is the `+inf`
/// sentinel at (0, 0); every following point corresponds to one distinct
/// score value, the last (the minimum score) sitting at (1, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<OperatingPoint>,
    pub n_pos: usize,
    pub n_neg: usize,
}

fn check_scores(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::arg(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::arg(format!("score {s} is not a number")));
    }
    Ok(())
}

fn rate(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        count as f64 / total as f64
    }
}

pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    check_scores(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidData(
            "ROC curve needs at least one positive and one negative sample".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = Vec::with_capacity(scores.len() + 1);
    points.push(OperatingPoint {
        threshold: f64::INFINITY,
        tpr: 0.0,
        fpr: 0.0,
    });
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(OperatingPoint {
            threshold: s,
            tpr: rate(tp, n_pos),
            fpr: rate(fp, n_neg),
        });
    }
    Ok(RocCurve {
        points,
        n_pos,
        n_neg,
    })
}

/// Trapezoidal area under the curve; tied scores contribute one half.
pub fn auc(curve: &RocCurve) -> f64 {
    curve
        .points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) * 0.5)
        .sum()
}

/// Unnormalized area under the curve for FPR in `[0, fpr_max]`, linearly
/// interpolating the segment that crosses `fpr_max`.
pub fn partial_auc(curve: &RocCurve, fpr_max: f64) -> Result<f64> {
    if !(fpr_max > 0.0 && fpr_max <= 1.0) {
        return Err(Error::arg(format!("fpr_max {fpr_max} outside (0, 1]")));
    }
    let mut area = 0.0;
    for w in curve.points.windows(2) {
        let (a, b) = (w[0], w[1]);
        if a.fpr >= fpr_max {
            break;
        }
        if b.fpr <= fpr_max {
            area += (b.fpr - a.fpr) * (a.tpr + b.tpr) * 0.5;
        } else {
            let t = (fpr_max - a.fpr) / (b.fpr - a.fpr);
            let tpr_cut = a.tpr + t * (b.tpr - a.tpr);
            area += (fpr_max - a.fpr) * (a.tpr + tpr_cut) * 0.5;
            break;
        }
    }
    Ok(area)
}

/// Largest false-positive count `k` with `k / n_neg <= target`, evaluated in
/// the same floating-point arithmetic used to report FPR.
pub fn max_false_positives(n_neg: usize, target: f64) -> usize {
    if n_neg == 0 {
        return 0;
    }
    let n = n_neg as f64;
    let mut k = ((target * n).floor().max(0.0) as usize).min(n_neg);
    while k > 0 && k as f64 / n > target {
        k -= 1;
    }
    while k < n_neg && (k + 1) as f64 / n <= target {
        k += 1;
    }
    k
}

fn check_target(target_fpr: f64) -> Result<()> {
    if !(target_fpr > 0.0 && target_fpr < 1.0) {
        return Err(Error::arg(format!("target FPR {target_fpr} outside (0, 1)")));
    }
    Ok(())
}

/// Threshold maximizing TPR subject to FPR <= `target_fpr`, ties broken
/// toward the larger threshold.
///
/// Candidates are the observed score values plus `+inf`. Runs in linear
/// time: the cap admits at most `k` false positives, so the threshold has to
/// exceed the `(k+1)`-th largest negative score, and the most conservative
/// threshold reaching the best TPR is the smallest positive score above it.
pub fn select_threshold(scores: &[f64], labels: &[bool], target_fpr: f64) -> Result<OperatingPoint> {
    check_scores(scores, labels)?;
    check_target(target_fpr)?;
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (&s, &l) in scores.iter().zip(labels) {
        if l {
            pos.push(s);
        } else {
            neg.push(s);
        }
    }
    if neg.is_empty() {
        return Err(Error::InvalidData("threshold selection needs at least one negative sample".into()));
    }
    Ok(select_threshold_split(&pos, &mut neg, target_fpr))
}

/// Same as [`select_threshold`] on class-separated scores. `neg` is used as
/// scratch space and left permuted.
pub(crate) fn select_threshold_split(pos: &[f64], neg: &mut [f64], target_fpr: f64) -> OperatingPoint {
    let k = max_false_positives(neg.len(), target_fpr);
    let threshold = if k >= neg.len() {
        pos.iter().copied().fold(f64::INFINITY, f64::min)
    } else {
        let (_, cutoff, _) = neg.select_nth_unstable_by(k, |a, b| b.total_cmp(a));
        let cutoff = *cutoff;
        pos.iter()
            .copied()
            .filter(|&p| p > cutoff)
            .fold(f64::INFINITY, f64::min)
    };
    point_split(pos, neg, threshold)
}

fn point_split(pos: &[f64], neg: &[f64], threshold: f64) -> OperatingPoint {
    if threshold == f64::INFINITY {
        return OperatingPoint {
            threshold,
            tpr: 0.0,
            fpr: 0.0,
        };
    }
    let tp = pos.iter().filter(|&&s| s >= threshold).count();
    let fp = neg.iter().filter(|&&s| s >= threshold).count();
    OperatingPoint {
        threshold,
        tpr: rate(tp, pos.len()),
        fpr: rate(fp, neg.len()),
    }
}

/// TPR and FPR of the rule `score >= threshold`. A class absent from
/// `labels` reports a rate of 0.
pub fn evaluate_at_threshold(scores: &[f64], labels: &[bool], threshold: f64) -> OperatingPoint {
    if threshold == f64::INFINITY {
        return OperatingPoint {
            threshold,
            tpr: 0.0,
            fpr: 0.0,
        };
    }
    let (mut tp, mut fp, mut n_pos) = (0usize, 0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        let flagged = s >= threshold;
        if l {
            n_pos += 1;
            tp += flagged as usize;
        } else {
            fp += flagged as usize;
        }
    }
    OperatingPoint {
        threshold,
        tpr: rate(tp, n_pos),
        fpr: rate(fp, labels.len() - n_pos),
    }
}

/// TPR penalized by the relative overrun of the target FPR:
/// `tpr - max(actualized_fpr - target_fpr, 0) / target_fpr`.
pub fn combined_metric(tpr: f64, actualized_fpr: f64, target_fpr: f64) -> Result<f64> {
    if !(target_fpr > 0.0) {
        return Err(Error::arg(format!("target FPR {target_fpr} must be positive")));
    }
    Ok(tpr - (actualized_fpr - target_fpr).max(0.0) / target_fpr)
}

pub fn accuracy(scores: &[f64], labels: &[bool], threshold: f64) -> Result<f64> {
    check_scores(scores, labels)?;
    if scores.is_empty() {
        return Err(Error::arg("accuracy of an empty sample"));
    }
    let correct = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &l)| (s >= threshold) == l)
        .count();
    Ok(correct as f64 / scores.len() as f64)
}

/// Writes `threshold,tpr,fpr`, with the sentinel as the literal `inf`.
pub fn write_curve_csv<W: Write>(curve: &RocCurve, writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    w.write_record(["threshold", "tpr", "fpr"])?;
    for p in &curve.points {
        w.write_record([format_threshold(p.threshold), format!("{:?}", p.tpr), format!("{:?}", p.fpr)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn format_threshold(t: f64) -> String {
    if t == f64::INFINITY {
        "inf".to_string()
    } else {
        format!("{t:?}")
    }
}

pub fn parse_threshold(s: &str) -> Option<f64> {
    match s.trim() {
        "inf" | "+inf" => Some(f64::INFINITY),
        other => other.parse().ok().filter(|v: &f64| v.is_finite()),
    }
}

/// Serializes a threshold as a JSON number, or the string `"inf"` for the
/// sentinel.
pub mod threshold_serde {
    use serde::de::{self, Deserializer, Visitor};
    use serde::Serializer;

    pub fn serialize<S: Serializer>(t: &f64, s: S) -> Result<S::Ok, S::Error> {
        if *t == f64::INFINITY {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*t)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = f64;
            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a finite number or \"inf\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
                Ok(v)
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
                Ok(v as f64)
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
                Ok(v as f64)
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
                super::parse_threshold(v).ok_or_else(|| E::custom(format!("bad threshold `{v}`")))
            }
        }
        d.deserialize_any(V)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(c: &RocCurve) -> Vec<(f64, f64)> {
        c.points.iter().map(|p| (p.tpr, p.fpr)).collect()
    }

    #[test]
    fn roc_examples() {
        let c = roc_curve(&[0.9, 0.1], &[true, false]).unwrap();
        assert!(pts(&c).contains(&(1.0, 0.0)));
        assert_eq!(auc(&c), 1.0);

        let c = roc_curve(&[0.1, 0.9], &[true, false]).unwrap();
        assert!(pts(&c).contains(&(0.0, 1.0)));
        assert_eq!(auc(&c), 0.0);

        let c = roc_curve(&[0.8, 0.8, 0.3, 0.3], &[true, false, true, false]).unwrap();
        assert_eq!(pts(&c), vec![(0.0, 0.0), (0.5, 0.5), (1.0, 1.0)]);
        assert_eq!(auc(&c), 0.5);

        assert!(roc_curve(&[0.1, 0.2], &[true, true]).is_err());
        assert!(roc_curve(&[0.1], &[true, false]).is_err());
    }

    #[test]
    fn auc_examples() {
        let c = roc_curve(&[0.1, 0.2, 0.3, 0.4], &[false, true, false, true]).unwrap();
        assert!((auc(&c) - 0.75).abs() < 1e-15);
        let c = roc_curve(&[0.4; 6], &[false, true, false, true, true, false]).unwrap();
        assert_eq!(auc(&c), 0.5);
    }

    #[test]
    fn partial_auc_examples() {
        let c = roc_curve(&[0.9, 0.1], &[true, false]).unwrap();
        assert!((partial_auc(&c, 0.001).unwrap() - 0.001).abs() < 1e-18);
        let c = roc_curve(&[0.1, 0.9], &[true, false]).unwrap();
        assert_eq!(partial_auc(&c, 0.001).unwrap(), 0.0);

        // one negative above every positive out of 2000 negatives:
        // TPR 0 up to FPR 0.0005, then 1
        let mut scores = vec![0.99];
        let mut labels = vec![false];
        scores.extend(std::iter::repeat_n(0.9, 10));
        labels.extend(std::iter::repeat_n(true, 10));
        scores.extend((0..1999).map(|i| 0.5 * i as f64 / 1999.0));
        labels.extend(std::iter::repeat_n(false, 1999));
        let c = roc_curve(&scores, &labels).unwrap();
        assert!((partial_auc(&c, 0.001).unwrap() - 0.0005).abs() < 1e-15);

        assert!(partial_auc(&c, 0.0).is_err());
        assert!(partial_auc(&c, 1.5).is_err());
        assert!((partial_auc(&c, 1.0).unwrap() - auc(&c)).abs() < 1e-12);
    }

    #[test]
    fn select_threshold_examples() {
        let scores = [0.1, 0.2, 0.3, 0.9, 0.15, 0.8, 0.85, 0.95];
        let labels = [false, false, false, false, true, true, true, true];
        let p = select_threshold(&scores, &labels, 0.25).unwrap();
        assert_eq!((p.threshold, p.tpr, p.fpr), (0.8, 0.75, 0.25));

        let p = select_threshold(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true], 0.01).unwrap();
        assert!(p.threshold > 0.2 && p.threshold <= 0.8);
        assert_eq!((p.tpr, p.fpr), (1.0, 0.0));

        let p = select_threshold(&[0.99, 0.5, 0.4], &[false, true, true], 1e-5).unwrap();
        assert!(p.is_sentinel());
        assert_eq!((p.tpr, p.fpr), (0.0, 0.0));

        assert!(select_threshold(&scores, &labels, 0.0).is_err());
        assert!(select_threshold(&scores, &labels, 1.0).is_err());
        assert!(select_threshold(&[0.5], &[true], 0.1).is_err());
    }

    #[test]
    fn evaluate_examples() {
        let s = [0.85, 0.1, 0.9, 0.5];
        let l = [false, false, true, true];
        let p = evaluate_at_threshold(&s, &l, 0.0);
        assert_eq!((p.tpr, p.fpr), (1.0, 1.0));
        let p = evaluate_at_threshold(&s, &l, f64::INFINITY);
        assert_eq!((p.tpr, p.fpr), (0.0, 0.0));
        let p = evaluate_at_threshold(&s, &l, 0.8);
        assert_eq!((p.tpr, p.fpr), (0.5, 0.5));
    }

    #[test]
    fn combined_metric_examples() {
        assert!((combined_metric(0.9, 0.0011, 0.001).unwrap() - 0.8).abs() < 1e-9);
        assert!((combined_metric(0.9, 0.0011, 0.0001).unwrap() + 9.1).abs() < 1e-9);
        assert_eq!(combined_metric(0.75, 0.0005, 0.001).unwrap(), 0.75);
        assert!(combined_metric(0.75, 0.0005, 0.0).is_err());
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[0.9, 0.1], &[true, false], 0.5).unwrap(), 1.0);
        assert_eq!(accuracy(&[0.4, 0.6], &[true, false], 0.5).unwrap(), 0.0);
        assert_eq!(
            accuracy(&[0.9, 0.2, 0.8, 0.1], &[true, true, false, false], 0.5).unwrap(),
            0.5
        );
        assert!(accuracy(&[], &[], 0.5).is_err());
    }

    #[test]
    fn max_false_positives_is_exact() {
        for n in [1usize, 3, 7, 10, 1000, 99_999, 1_000_003] {
            for t in [1e-5, 1e-4, 9e-4, 1e-3, 0.01, 0.1, 0.25, 0.3, 0.7] {
                let k = max_false_positives(n, t);
                assert!(k as f64 / n as f64 <= t);
                assert!(k == n || (k + 1) as f64 / n as f64 > t);
            }
        }
    }

    #[test]
    fn threshold_format_round_trip() {
        for t in [f64::INFINITY, 0.5, 1e-300, 0.1 + 0.2] {
            assert_eq!(parse_threshold(&format_threshold(t)), Some(t));
        }
    }
}
