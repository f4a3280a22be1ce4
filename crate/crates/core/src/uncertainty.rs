//! Ensemble-mean prediction and entropy-based uncertainty decomposition.
//!
//! All entropies are in nats. For a binary task with member probabilities
//! `p_1..p_T` of the malicious class:
//!
//! * predictive entropy: `H(mean(p))`
//! * aleatoric (expected entropy): `mean(H(p_i))`
//! * epistemic (mutual information): predictive − aleatoric

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::PredictionDataset;
use crate::error::{Error, Result};

/// Cancellation residue tolerated before a negative mutual information is
/// treated as a bug.
const EPISTEMIC_ABORT: f64 = -1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UncertaintyTriple {
    pub predictive_entropy: f64,
    pub aleatoric: f64,
    pub epistemic: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Measure {
    Epistemic,
    Aleatoric,
    Predictive,
}

impl UncertaintyTriple {
    pub fn get(&self, measure: Measure) -> f64 {
        match measure {
            Measure::Epistemic => self.epistemic,
            Measure::Aleatoric => self.aleatoric,
            Measure::Predictive => self.predictive_entropy,
        }
    }
}

impl std::str::FromStr for Measure {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "epistemic" => Ok(Measure::Epistemic),
            "aleatoric" => Ok(Measure::Aleatoric),
            "predictive" => Ok(Measure::Predictive),
            other => Err(format!("unknown uncertainty measure `{other}`")),
        }
    }
}

/// Binary entropy in nats, with `0 ln 0 = 0`.
pub fn binary_entropy(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::arg(format!("probability {p} outside [0, 1]")));
    }
    Ok(entropy_unchecked(p))
}

#[inline]
fn entropy_unchecked(p: f64) -> f64 {
    let q = 1.0 - p;
    let a = if p > 0.0 { -p * p.ln() } else { 0.0 };
    let b = if q > 0.0 { -q * q.ln() } else { 0.0 };
    a + b
}

/// Arithmetic mean, clamped to the sample range so constant inputs return
/// their value exactly.
fn bounded_mean(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let (mut sum, mut lo, mut hi, mut n) = (0.0, f64::INFINITY, f64::NEG_INFINITY, 0usize);
    for v in values {
        sum += v;
        lo = lo.min(v);
        hi = hi.max(v);
        n += 1;
    }
    (sum / n as f64).clamp(lo, hi)
}

pub fn ensemble_mean(member_scores: &[f64]) -> Result<f64> {
    if member_scores.is_empty() {
        return Err(Error::arg("ensemble mean of an empty score sequence"));
    }
    Ok(bounded_mean(member_scores.iter().copied()))
}

pub fn uncertainty_triple(member_scores: &[f64]) -> Result<UncertaintyTriple> {
    let y_hat = ensemble_mean(member_scores)?;
    let predictive_entropy = binary_entropy(y_hat)?;
    for &s in member_scores {
        binary_entropy(s)?;
    }
    let aleatoric = bounded_mean(member_scores.iter().map(|&s| entropy_unchecked(s)));
    let diff = predictive_entropy - aleatoric;
    if diff < EPISTEMIC_ABORT {
        return Err(Error::Internal(format!(
            "negative mutual information {diff:e} (predictive {predictive_entropy}, aleatoric {aleatoric})"
        )));
    }
    Ok(UncertaintyTriple {
        predictive_entropy,
        aleatoric,
        epistemic: diff.max(0.0),
    })
}

/// Ensemble prediction and uncertainties for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyRow {
    pub sample_id: String,
    pub y_hat: f64,
    pub triple: UncertaintyTriple,
}

/// One row per record, in dataset order.
pub fn compute_uncertainties(ds: &PredictionDataset) -> Result<Vec<UncertaintyRow>> {
    if ds.is_empty() {
        return Err(Error::InvalidData("cannot compute uncertainties of an empty dataset".into()));
    }
    ds.records()
        .par_iter()
        .map(|r| {
            let wrap = |e: Error| Error::Sample {
                sample_id: r.sample_id.clone(),
                source: Box::new(e),
            };
            Ok(UncertaintyRow {
                sample_id: r.sample_id.clone(),
                y_hat: ensemble_mean(&r.member_scores).map_err(wrap)?,
                triple: uncertainty_triple(&r.member_scores).map_err(wrap)?,
            })
        })
        .collect()
}

/// Ensemble means only, in dataset order.
pub fn ensemble_scores(ds: &PredictionDataset) -> Vec<f64> {
    ds.records()
        .iter()
        .map(|r| bounded_mean(r.member_scores.iter().copied()))
        .collect()
}

/// Writes `sample_id,yhat,pred_entropy,aleatoric,epistemic`.
pub fn write_uncertainties_csv<W: Write>(rows: &[UncertaintyRow], writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    w.write_record(["sample_id", "yhat", "pred_entropy", "aleatoric", "epistemic"])?;
    for r in rows {
        w.write_record([
            r.sample_id.clone(),
            format!("{:?}", r.y_hat),
            format!("{:?}", r.triple.predictive_entropy),
            format!("{:?}", r.triple.aleatoric),
            format!("{:?}", r.triple.epistemic),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    #[test]
    fn entropy_values() {
        assert!((binary_entropy(0.5).unwrap() - LN_2).abs() < 1e-15);
        assert_eq!(binary_entropy(0.0).unwrap(), 0.0);
        assert_eq!(binary_entropy(1.0).unwrap(), 0.0);
        // -0.25 ln 0.25 - 0.75 ln 0.75 = 0.5623351446188083
        assert!((binary_entropy(0.25).unwrap() - 0.562_335_144_618_808_3).abs() < 1e-15);
        assert!(binary_entropy(-0.1).is_err());
        assert!(binary_entropy(1.0001).is_err());
        assert!(binary_entropy(f64::NAN).is_err());
    }

    #[test]
    fn ensemble_mean_examples() {
        assert_eq!(ensemble_mean(&[0.2, 0.4, 0.6, 0.8]).unwrap(), 0.5);
        assert_eq!(ensemble_mean(&[0.3]).unwrap(), 0.3);
        assert_eq!(ensemble_mean(&[1.0, 0.0]).unwrap(), 0.5);
        assert_eq!(ensemble_mean(&[0.1, 0.1, 0.1]).unwrap(), 0.1);
        assert!(ensemble_mean(&[]).is_err());
    }

    #[test]
    fn triple_examples() {
        let t = uncertainty_triple(&[0.3, 0.3, 0.3]).unwrap();
        // -0.3 ln 0.3 - 0.7 ln 0.7 = 0.6108643020548935
        assert!((t.predictive_entropy - 0.610_864_302_054_893_5).abs() < 1e-12);
        assert_eq!(t.aleatoric, t.predictive_entropy);
        assert_eq!(t.epistemic, 0.0);

        let t = uncertainty_triple(&[1.0, 0.0]).unwrap();
        assert!((t.predictive_entropy - LN_2).abs() < 1e-15);
        assert_eq!(t.aleatoric, 0.0);
        assert!((t.epistemic - LN_2).abs() < 1e-15);

        let t = uncertainty_triple(&[0.5, 0.5]).unwrap();
        assert!((t.aleatoric - LN_2).abs() < 1e-15);
        assert_eq!(t.epistemic, 0.0);

        assert!(uncertainty_triple(&[]).is_err());
        assert!(uncertainty_triple(&[0.2, 1.5]).is_err());
    }

    proptest! {
        #[test]
        fn permutation_invariant(mut v in prop::collection::vec(0.0f64..=1.0, 1..9), rot in 0usize..8) {
            let a = uncertainty_triple(&v).unwrap();
            let k = rot % v.len();
            v.rotate_left(k);
            v.reverse();
            let b = uncertainty_triple(&v).unwrap();
            prop_assert!((a.predictive_entropy - b.predictive_entropy).abs() < 1e-12);
            prop_assert!((a.aleatoric - b.aleatoric).abs() < 1e-12);
            prop_assert!((a.epistemic - b.epistemic).abs() < 1e-12);
        }

        #[test]
        fn swap_symmetric(v in prop::collection::vec(0.0f64..=1.0, 1..9)) {
            let a = uncertainty_triple(&v).unwrap();
            let flipped: Vec<f64> = v.iter().map(|s| 1.0 - s).collect();
            let b = uncertainty_triple(&flipped).unwrap();
            prop_assert!((a.predictive_entropy - b.predictive_entropy).abs() < 1e-12);
            prop_assert!((a.aleatoric - b.aleatoric).abs() < 1e-12);
            prop_assert!((a.epistemic - b.epistemic).abs() < 1e-12);
        }

        #[test]
        fn jensen_bounds(v in prop::collection::vec(0.0f64..=1.0, 1..9)) {
            let t = uncertainty_triple(&v).unwrap();
            prop_assert!(t.aleatoric >= 0.0);
            prop_assert!(t.aleatoric <= t.predictive_entropy + 1e-12);
            prop_assert!(t.predictive_entropy <= LN_2 + 1e-12);
            prop_assert!(t.epistemic >= 0.0);
        }
    }
}
