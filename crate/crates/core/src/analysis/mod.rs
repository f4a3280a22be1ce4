//! Ensemble-versus-member comparison, uncertainty group splits and the
//! supporting statistics.

pub mod histogram;
pub mod wilcoxon;

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::PredictionDataset;
use crate::error::{Error, Result};
use crate::roc;
use crate::uncertainty::{ensemble_scores, uncertainty_triple, Measure};

pub use histogram::{histogram, Histogram, HistogramSpec, Normalization};
pub use wilcoxon::{wilcoxon_signed_rank, WilcoxonResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model_name: String,
    pub accuracy: f64,
    pub auc: f64,
    pub partial_auc: f64,
    pub is_ensemble: bool,
}

fn metrics(scores: &[f64], labels: &[bool], fpr_max: f64, threshold: f64) -> Result<(f64, f64, f64)> {
    let curve = roc::roc_curve(scores, labels)?;
    Ok((
        roc::accuracy(scores, labels, threshold)?,
        roc::auc(&curve),
        roc::partial_auc(&curve, fpr_max)?,
    ))
}

/// Metrics of the ensemble mean against the average of each member's own
/// metrics. Returns `(ensemble, members)`.
pub fn ensemble_vs_members(
    ds: &PredictionDataset,
    fpr_max: f64,
    accuracy_threshold: f64,
) -> Result<(ComparisonRow, ComparisonRow)> {
    let t = ds.member_count();
    if t < 2 {
        return Err(Error::InvalidData(format!(
            "ensemble comparison needs at least 2 members, dataset has {t}"
        )));
    }
    let labels = ds.labels();
    let (acc, auc, pauc) = metrics(&ensemble_scores(ds), &labels, fpr_max, accuracy_threshold)?;
    let ensemble = ComparisonRow {
        model_name: format!("ensemble (T={t})"),
        accuracy: acc,
        auc,
        partial_auc: pauc,
        is_ensemble: true,
    };
    let per_member = (0..t)
        .map(|m| metrics(&ds.member_column(m), &labels, fpr_max, accuracy_threshold))
        .collect::<Result<Vec<_>>>()?;
    let members = ComparisonRow {
        model_name: "member mean".into(),
        accuracy: bounded_mean(per_member.iter().map(|m| m.0)),
        auc: bounded_mean(per_member.iter().map(|m| m.1)),
        partial_auc: bounded_mean(per_member.iter().map(|m| m.2)),
        is_ensemble: false,
    };
    Ok((ensemble, members))
}

/// Mean clamped to the observed range, exact when all values agree.
fn bounded_mean(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut lo, mut hi, mut n) = (0.0, f64::INFINITY, f64::NEG_INFINITY, 0usize);
    for v in values {
        sum += v;
        lo = lo.min(v);
        hi = hi.max(v);
        n += 1;
    }
    (sum / n as f64).clamp(lo, hi)
}

/// Writes rows as `model,accuracy,auc,partial_auc,is_ensemble`.
pub fn write_comparison_csv<W: Write>(rows: &[ComparisonRow], writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    w.write_record(["model", "accuracy", "auc", "partial_auc", "is_ensemble"])?;
    for r in rows {
        w.write_record([
            r.model_name.clone(),
            format!("{:?}", r.accuracy),
            format!("{:?}", r.auc),
            format!("{:?}", r.partial_auc),
            r.is_ensemble.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Two labelled groups of `(sample_id, value)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroupSplit {
    pub names: [String; 2],
    pub groups: [Vec<(String, f64)>; 2],
}

impl GroupSplit {
    fn new(a: &str, b: &str) -> Self {
        Self {
            names: [a.to_string(), b.to_string()],
            groups: Default::default(),
        }
    }

    /// True when either group is empty, so downstream comparisons between
    /// the two are meaningless.
    pub fn has_empty_group(&self) -> bool {
        self.groups.iter().any(Vec::is_empty)
    }

    pub fn values(&self, group: usize) -> Vec<f64> {
        self.groups[group].iter().map(|(_, v)| *v).collect()
    }

    pub fn mean(&self, group: usize) -> Option<f64> {
        let g = &self.groups[group];
        (!g.is_empty()).then(|| g.iter().map(|(_, v)| v).sum::<f64>() / g.len() as f64)
    }

    /// Writes `sample_id,group,value`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        w.write_record(["sample_id", "group", "value"])?;
        for (name, group) in self.names.iter().zip(&self.groups) {
            for (id, v) in group {
                w.write_record([id.clone(), name.clone(), format!("{v:?}")])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn measure_of(scores: &[f64], measure: Measure) -> Result<f64> {
    Ok(uncertainty_triple(scores)?.get(measure))
}

/// Splits samples into `correct` / `incorrect` by the thresholded ensemble
/// mean, carrying each sample's chosen uncertainty.
pub fn uncertainty_by_correctness(ds: &PredictionDataset, threshold: f64, measure: Measure) -> Result<GroupSplit> {
    if ds.is_empty() {
        return Err(Error::InvalidData("correctness split of an empty dataset".into()));
    }
    let mut split = GroupSplit::new("correct", "incorrect");
    for (r, y) in ds.records().iter().zip(ensemble_scores(ds)) {
        let correct = (y >= threshold) == r.is_positive();
        let v = measure_of(&r.member_scores, measure)?;
        split.groups[usize::from(!correct)].push((r.sample_id.clone(), v));
    }
    Ok(split)
}

/// Splits family-tagged malicious samples into `seen` / `unseen` by
/// membership of their family in `known_families`.
pub fn uncertainty_by_novelty(
    ds: &PredictionDataset,
    known_families: &BTreeSet<String>,
    measure: Measure,
) -> Result<GroupSplit> {
    let mut split = GroupSplit::new("seen", "unseen");
    let mut any = false;
    for r in ds.records().iter().filter(|r| r.is_positive()) {
        let Some(family) = &r.family else { continue };
        any = true;
        let v = measure_of(&r.member_scores, measure)?;
        let g = usize::from(!known_families.contains(family));
        split.groups[g].push((r.sample_id.clone(), v));
    }
    if !any {
        return Err(Error::InvalidData("no family-tagged malicious samples".into()));
    }
    Ok(split)
}

/// Families tagged on any record of `ds`.
pub fn observed_families(ds: &PredictionDataset) -> BTreeSet<String> {
    ds.records().iter().filter_map(|r| r.family.clone()).collect()
}
