//! Valid versus invalid threshold-selection protocols.
//!
//! The invalid protocol picks each threshold on the test set itself, which
//! is never possible in deployment. The valid protocol picks it on a
//! validation set and reports what that threshold actually achieves on test
//! data. Comparing the two, optionally after shrinking the validation set,
//! shows how unreliable low-FPR claims become when the data cannot support
//! them.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{subsample_indices, PredictionDataset};
use crate::error::{Error, Result};
use crate::roc::{self, OperatingPoint};
use crate::uncertainty::ensemble_scores;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolCurvePoint {
    pub target_fpr: f64,
    pub valid_tpr: f64,
    pub valid_actualized_fpr: f64,
    pub invalid_tpr: f64,
    /// `|invalid - valid| / valid`; `None` when the valid TPR is zero.
    pub rel_error: Option<f64>,
    /// False when the validation data cannot support the target (too few
    /// negatives, or only the all-negative threshold qualifies).
    pub attainable: bool,
}

/// Ensemble-mean scores and labels of a dataset.
#[derive(Debug, Clone)]
struct Scored {
    scores: Vec<f64>,
    labels: Vec<bool>,
}

impl Scored {
    fn new(ds: &PredictionDataset, what: &str) -> Result<Self> {
        let labels = ds.labels();
        let n_pos = labels.iter().filter(|&&l| l).count();
        if n_pos == 0 || n_pos == labels.len() {
            return Err(Error::InvalidData(format!(
                "{what} set needs both benign and malicious samples"
            )));
        }
        Ok(Self {
            scores: ensemble_scores(ds),
            labels,
        })
    }

    fn n_neg(&self) -> usize {
        self.labels.iter().filter(|&&l| !l).count()
    }
}

/// Thresholds chosen on the test set and evaluated on the same test set.
pub fn invalid_protocol_eval(test: &PredictionDataset, target_fprs: &[f64]) -> Result<Vec<OperatingPoint>> {
    let test = Scored::new(test, "test")?;
    target_fprs
        .iter()
        .map(|&t| roc::select_threshold(&test.scores, &test.labels, t))
        .collect()
}

/// Thresholds chosen on validation data, reported as test operating points.
pub fn valid_protocol_eval(
    val: &PredictionDataset,
    test: &PredictionDataset,
    target_fprs: &[f64],
) -> Result<Vec<OperatingPoint>> {
    let val = Scored::new(val, "validation")?;
    let test = Scored::new(test, "test")?;
    target_fprs
        .iter()
        .map(|&t| {
            let chosen = roc::select_threshold(&val.scores, &val.labels, t)?;
            Ok(roc::evaluate_at_threshold(&test.scores, &test.labels, chosen.threshold))
        })
        .collect()
}

/// `min_fp_count / n_negatives`: the smallest FPR a set with that many
/// negatives can estimate while expecting `min_fp_count` false positives.
pub fn min_estimable_fpr(n_negatives: usize, min_fp_count: usize) -> Result<f64> {
    if n_negatives == 0 {
        return Err(Error::arg("min_estimable_fpr needs at least one negative"));
    }
    Ok(min_fp_count as f64 / n_negatives as f64)
}

fn curve_points(
    val: &Scored,
    test: &Scored,
    invalid: &[OperatingPoint],
    target_fprs: &[f64],
    min_fp_count: usize,
) -> Result<Vec<ProtocolCurvePoint>> {
    let n_neg = val.n_neg();
    target_fprs
        .iter()
        .zip(invalid)
        .map(|(&t, inv)| {
            let chosen = roc::select_threshold(&val.scores, &val.labels, t)?;
            let on_test = roc::evaluate_at_threshold(&test.scores, &test.labels, chosen.threshold);
            let rel_error = (on_test.tpr > 0.0).then(|| (inv.tpr - on_test.tpr).abs() / on_test.tpr);
            let estimable = n_neg > 0 && min_fp_count as f64 / n_neg as f64 <= t;
            Ok(ProtocolCurvePoint {
                target_fpr: t,
                valid_tpr: on_test.tpr,
                valid_actualized_fpr: on_test.fpr,
                invalid_tpr: inv.tpr,
                rel_error,
                attainable: estimable && !chosen.is_sentinel(),
            })
        })
        .collect()
}

/// Valid and invalid protocol side by side, one point per target. A target
/// is attainable when the validation set has at least `1 / target`
/// negatives.
pub fn relative_error_curve(
    val: &PredictionDataset,
    test: &PredictionDataset,
    target_fprs: &[f64],
) -> Result<Vec<ProtocolCurvePoint>> {
    relative_error_curve_with(val, test, target_fprs, 1)
}

/// [`relative_error_curve`] with a configurable false-positive count behind
/// the attainability flag.
pub fn relative_error_curve_with(
    val: &PredictionDataset,
    test: &PredictionDataset,
    target_fprs: &[f64],
    min_fp_count: usize,
) -> Result<Vec<ProtocolCurvePoint>> {
    let val = Scored::new(val, "validation")?;
    let test = Scored::new(test, "test")?;
    let invalid = invalid_points(&test, target_fprs)?;
    curve_points(&val, &test, &invalid, target_fprs, min_fp_count)
}

fn invalid_points(test: &Scored, target_fprs: &[f64]) -> Result<Vec<OperatingPoint>> {
    target_fprs
        .iter()
        .map(|&t| roc::select_threshold(&test.scores, &test.labels, t))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsampleRow {
    pub fraction: f64,
    pub seed: u64,
    pub point: ProtocolCurvePoint,
}

/// Subsampling cell seed: a stable mix of the study seed and the fraction's
/// position, independent of scheduling.
pub fn cell_seed(seed: u64, fraction_index: usize) -> u64 {
    crate::mix_seed(seed, fraction_index as u64)
}

/// For every (fraction, seed) pair, shrinks only the validation set and
/// reruns the relative-error comparison. Rows come out ordered by fraction,
/// then seed, then target.
pub fn subsampling_study(
    val: &PredictionDataset,
    test: &PredictionDataset,
    fractions: &[f64],
    target_fprs: &[f64],
    seeds: &[u64],
    min_fp_count: usize,
) -> Result<Vec<SubsampleRow>> {
    for &f in fractions {
        crate::data::subsample_size(val.len(), f)?;
    }
    let val_scores = ensemble_scores(val);
    let val_labels = val.labels();
    let test = Scored::new(test, "test")?;
    let invalid = invalid_points(&test, target_fprs)?;

    let cells: Vec<(usize, usize)> = (0..fractions.len())
        .flat_map(|fi| (0..seeds.len()).map(move |si| (fi, si)))
        .collect();
    let per_cell: Vec<Result<Vec<SubsampleRow>>> = cells
        .par_iter()
        .map(|&(fi, si)| {
            let fraction = fractions[fi];
            let seed = seeds[si];
            let idx = subsample_indices(val_scores.len(), fraction, cell_seed(seed, fi))?;
            let reduced = Scored {
                scores: idx.iter().map(|&i| val_scores[i]).collect(),
                labels: idx.iter().map(|&i| val_labels[i]).collect(),
            };
            let points = if reduced.n_neg() == 0 {
                // nothing to select a threshold on: every target is out of reach
                target_fprs
                    .iter()
                    .zip(&invalid)
                    .map(|(&t, inv)| ProtocolCurvePoint {
                        target_fpr: t,
                        valid_tpr: 0.0,
                        valid_actualized_fpr: 0.0,
                        invalid_tpr: inv.tpr,
                        rel_error: None,
                        attainable: false,
                    })
                    .collect()
            } else {
                curve_points(&reduced, &test, &invalid, target_fprs, min_fp_count)?
            };
            Ok(points
                .into_iter()
                .map(|point| SubsampleRow { fraction, seed, point })
                .collect())
        })
        .collect();
    let mut rows = Vec::with_capacity(cells.len() * target_fprs.len());
    for cell in per_cell {
        rows.extend(cell?);
    }
    Ok(rows)
}

fn point_fields(p: &ProtocolCurvePoint) -> [String; 6] {
    [
        format!("{:?}", p.target_fpr),
        format!("{:?}", p.valid_tpr),
        format!("{:?}", p.valid_actualized_fpr),
        format!("{:?}", p.invalid_tpr),
        p.rel_error.map(|e| format!("{e:?}")).unwrap_or_default(),
        p.attainable.to_string(),
    ]
}

const POINT_HEADER: [&str; 6] = [
    "target_fpr",
    "valid_tpr",
    "valid_fpr",
    "invalid_tpr",
    "rel_error",
    "attainable",
];

fn csv_writer<W: Write>(writer: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer)
}

/// Writes `target_fpr,valid_tpr,valid_fpr,invalid_tpr,rel_error,attainable`,
/// one row per target.
pub fn write_curve_csv<W: Write>(points: &[ProtocolCurvePoint], writer: W) -> Result<()> {
    let mut w = csv_writer(writer);
    w.write_record(POINT_HEADER)?;
    for p in points {
        w.write_record(point_fields(p))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `fraction,seed,target_fpr,valid_tpr,valid_fpr,invalid_tpr,rel_error,attainable`,
/// leaving `rel_error` blank where it is undefined.
pub fn write_study_csv<W: Write>(rows: &[SubsampleRow], writer: W) -> Result<()> {
    let mut w = csv_writer(writer);
    w.write_record(["fraction", "seed"].into_iter().chain(POINT_HEADER))?;
    for r in rows {
        w.write_record([format!("{:?}", r.fraction), r.seed.to_string()].into_iter().chain(point_fields(&r.point)))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Label, SampleRecord, Split};

    fn ds(scores: &[(f64, bool)], split: Split) -> PredictionDataset {
        let records = scores
            .iter()
            .enumerate()
            .map(|(i, &(s, pos))| SampleRecord {
                sample_id: format!("{split}-{i}"),
                label: if pos { Label::Malicious } else { Label::Benign },
                split,
                family: None,
                member_scores: vec![s],
            })
            .collect();
        PredictionDataset::new(records, 1, "unit").unwrap()
    }

    fn eight() -> PredictionDataset {
        ds(
            &[
                (0.1, false),
                (0.2, false),
                (0.3, false),
                (0.9, false),
                (0.15, true),
                (0.8, true),
                (0.85, true),
                (0.95, true),
            ],
            Split::Test,
        )
    }

    #[test]
    fn invalid_protocol_examples() {
        let pts = invalid_protocol_eval(&eight(), &[0.25]).unwrap();
        assert_eq!(pts[0].tpr, 0.75);

        let targets = [0.01, 0.1, 0.25, 0.5, 0.75, 0.99];
        let pts = invalid_protocol_eval(&eight(), &targets).unwrap();
        assert!(pts.windows(2).all(|w| w[0].tpr <= w[1].tpr));
        assert_eq!(pts.last().unwrap().tpr, 1.0);
    }

    #[test]
    fn valid_equals_invalid_when_val_is_test() {
        let t = eight();
        let targets = [0.01, 0.25, 0.5, 0.8];
        assert_eq!(
            valid_protocol_eval(&t, &t, &targets).unwrap(),
            invalid_protocol_eval(&t, &targets).unwrap()
        );
        let curve = relative_error_curve(&t, &t, &targets).unwrap();
        assert!(curve.iter().all(|p| p.rel_error.is_none_or(|e| e == 0.0)));
    }

    #[test]
    fn separable_sets() {
        let val = ds(&[(0.1, false), (0.2, false), (0.7, true), (0.9, true)], Split::Validation);
        let test = ds(&[(0.15, false), (0.05, false), (0.8, true), (0.75, true)], Split::Test);
        for p in valid_protocol_eval(&val, &test, &[0.01, 0.1, 0.5]).unwrap() {
            assert_eq!((p.tpr, p.fpr), (1.0, 0.0));
        }
        for p in relative_error_curve(&val, &test, &[0.01, 0.1, 0.5]).unwrap() {
            assert_eq!(p.rel_error, Some(0.0));
        }
    }

    #[test]
    fn zero_valid_tpr_is_undefined() {
        let val = ds(&[(0.99, false), (0.2, true)], Split::Validation);
        let test = eight();
        let c = relative_error_curve(&val, &test, &[0.1]).unwrap();
        assert_eq!(c[0].valid_tpr, 0.0);
        assert_eq!(c[0].rel_error, None);
        assert!(!c[0].attainable);
    }

    #[test]
    fn min_estimable() {
        assert!((min_estimable_fpr(10_000_000, 100).unwrap() - 1e-5).abs() < 1e-20);
        assert!((min_estimable_fpr(100_000, 100).unwrap() - 1e-3).abs() < 1e-18);
        assert_eq!(min_estimable_fpr(250, 250).unwrap(), 1.0);
        assert!(min_estimable_fpr(0, 100).is_err());
    }

    #[test]
    fn subsampling_full_fraction_matches_curve() {
        let val: Vec<(f64, bool)> = (0..300).map(|i| ((i as f64 * 0.377).fract(), i % 4 == 0)).collect();
        let test: Vec<(f64, bool)> = (0..300).map(|i| ((i as f64 * 0.611).fract(), i % 3 == 0)).collect();
        let val = ds(&val, Split::Validation);
        let test = ds(&test, Split::Test);
        let targets = [0.2, 0.05, 0.01, 0.001];
        let curve = relative_error_curve(&val, &test, &targets).unwrap();
        let rows = subsampling_study(&val, &test, &[1.0], &targets, &[4, 9], 1).unwrap();
        assert_eq!(rows.len(), 8);
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.point, curve[i % 4]);
        }
        // 225 negatives: 1e-3 needs 1000
        assert!(!curve[3].attainable);

        let rows = subsampling_study(&val, &test, &[1.0, 0.1, 0.01], &targets, &[1, 2], 1).unwrap();
        assert_eq!(rows.len(), 3 * 2 * 4);
        for r in &rows {
            let n = subsample_indices(300, r.fraction, 0).unwrap().len();
            if (n as f64) * r.point.target_fpr < 1.0 {
                assert!(!r.point.attainable, "{r:?}");
            }
        }
        assert!(subsampling_study(&val, &test, &[0.0], &targets, &[1], 1).is_err());
    }
}
