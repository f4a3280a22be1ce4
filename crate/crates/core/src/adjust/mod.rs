//! Uncertainty-aware local threshold adjustments and their fitting.
//!
//! Each variant shifts the ensemble prediction `y` of a sample by a function
//! of its epistemic (`ue`) and aleatoric (`ua`) uncertainty before a single
//! global threshold is applied:
//!
//! | variant | adjusted score | coefficients |
//! |---------|----------------|--------------|
//! | `lv1` | `y + a1*ue + a2*ua` | `[a1, a2]` in [-100, 100] |
//! | `lv2` | `y + a1*exp(a3*ue) + a2*exp(a4*ua)` | `[a1, a2, a3, a4]` in [-10, 10] |
//! | `lv3` | `y + [y > a0](a1*ue + a2*ua) + [y <= a0](a3*ue + a4*ua)` | `[a0, a1, a2, a3, a4]`, `a0` in [-0.1, 0.1], rest in [0, 1] |
//!
//! Coefficients are fit one at a time with Brent's method, re-selecting the
//! global threshold on every objective evaluation, until a full sweep stops
//! improving validation TPR.

pub mod brent;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::PredictionDataset;
use crate::error::{Error, Result};
use crate::roc::{self, OperatingPoint};
use crate::uncertainty::uncertainty_triple;

pub use brent::{brent_minimize, BrentResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    GlobalOnly,
    Lv1,
    Lv2,
    Lv3,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::GlobalOnly, Variant::Lv1, Variant::Lv2, Variant::Lv3];

    pub fn arity(self) -> usize {
        match self {
            Variant::GlobalOnly => 0,
            Variant::Lv1 => 2,
            Variant::Lv2 => 4,
            Variant::Lv3 => 5,
        }
    }

    /// Search interval of coefficient `i`.
    pub fn bracket(self, i: usize) -> (f64, f64) {
        match (self, i) {
            (Variant::Lv1, _) => (-100.0, 100.0),
            (Variant::Lv2, _) => (-10.0, 10.0),
            (Variant::Lv3, 0) => (-0.1, 0.1),
            (Variant::Lv3, _) => (0.0, 1.0),
            (Variant::GlobalOnly, _) => (0.0, 0.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::GlobalOnly => "global_only",
            Variant::Lv1 => "lv1",
            Variant::Lv2 => "lv2",
            Variant::Lv3 => "lv3",
        }
    }

    /// Short method label: `g`, `g+l`, `g+lv2`, `g+lv3`.
    pub fn label(self) -> &'static str {
        match self {
            Variant::GlobalOnly => "g",
            Variant::Lv1 => "g+l",
            Variant::Lv2 => "g+lv2",
            Variant::Lv3 => "g+lv3",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.label() == s || v.name() == s)
            .ok_or_else(|| format!("unknown variant `{s}` (expected g, g+l, g+lv2 or g+lv3)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjustmentParams {
    pub variant: Variant,
    pub alpha: Vec<f64>,
}

impl AdjustmentParams {
    /// Checks arity and that every coefficient lies in its bracket.
    pub fn new(variant: Variant, alpha: Vec<f64>) -> Result<Self> {
        let p = Self { variant, alpha };
        p.check_arity()?;
        for (i, &a) in p.alpha.iter().enumerate() {
            let (lo, hi) = variant.bracket(i);
            if !(lo..=hi).contains(&a) {
                return Err(Error::InvalidData(format!(
                    "{} coefficient {i} = {a} outside [{lo}, {hi}]",
                    variant.name()
                )));
            }
        }
        Ok(p)
    }

    pub fn identity(variant: Variant) -> Self {
        Self {
            variant,
            alpha: vec![0.0; variant.arity()],
        }
    }

    fn check_arity(&self) -> Result<()> {
        if self.alpha.len() != self.variant.arity() {
            return Err(Error::ArityMismatch {
                variant: self.variant.name(),
                expected: self.variant.arity(),
                found: self.alpha.len(),
            });
        }
        Ok(())
    }
}

/// Adjusted ranking score of one sample. The result is not clamped to [0, 1].
pub fn apply_adjustment(y_hat: f64, u_epis: f64, u_alea: f64, params: &AdjustmentParams) -> Result<f64> {
    params.check_arity()?;
    Ok(adjust(params.variant, &params.alpha, y_hat, u_epis, u_alea))
}

#[inline]
fn adjust(variant: Variant, a: &[f64], y: f64, ue: f64, ua: f64) -> f64 {
    match variant {
        Variant::GlobalOnly => y,
        Variant::Lv1 => y + a[0] * ue + a[1] * ua,
        Variant::Lv2 => y + a[0] * (a[2] * ue).exp() + a[1] * (a[3] * ua).exp(),
        Variant::Lv3 => {
            if y > a[0] {
                y + (a[1] * ue + a[2] * ua)
            } else {
                y + (a[3] * ue + a[4] * ua)
            }
        }
    }
}

/// Per-sample inputs to the adjustment: ensemble mean, epistemic and
/// aleatoric uncertainty, label.
#[derive(Debug, Clone, Default)]
pub struct Features {
    pub y_hat: Vec<f64>,
    pub epistemic: Vec<f64>,
    pub aleatoric: Vec<f64>,
    pub labels: Vec<bool>,
}

impl Features {
    pub fn from_dataset(ds: &PredictionDataset) -> Result<Self> {
        let mut f = Features::default();
        for r in ds.records() {
            let t = uncertainty_triple(&r.member_scores).map_err(|e| Error::Sample {
                sample_id: r.sample_id.clone(),
                source: Box::new(e),
            })?;
            f.y_hat.push(crate::uncertainty::ensemble_mean(&r.member_scores)?);
            f.epistemic.push(t.epistemic);
            f.aleatoric.push(t.aleatoric);
            f.labels.push(r.is_positive());
        }
        Ok(f)
    }

    pub fn len(&self) -> usize {
        self.y_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_hat.is_empty()
    }

    pub fn adjusted_scores(&self, params: &AdjustmentParams) -> Result<Vec<f64>> {
        params.check_arity()?;
        Ok((0..self.len())
            .map(|i| adjust(params.variant, &params.alpha, self.y_hat[i], self.epistemic[i], self.aleatoric[i]))
            .collect())
    }

    fn require_both_classes(&self, what: &str) -> Result<()> {
        let n_pos = self.labels.iter().filter(|&&l| l).count();
        if n_pos == 0 || n_pos == self.labels.len() {
            return Err(Error::InvalidData(format!(
                "{what} set needs both benign and malicious samples"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub params: AdjustmentParams,
    /// In adjusted-score space; `+inf` is the all-negative sentinel.
    pub global_threshold: f64,
    pub target_fpr: f64,
    pub fit_fpr_multiplier: f64,
    pub achieved_val: OperatingPoint,
    pub sweeps_used: usize,
    pub seed: u64,
    pub member_count: usize,
}

/// On-disk JSON layout of a [`CalibrationResult`].
#[derive(Debug, Serialize, Deserialize)]
struct CalibrationFile {
    variant: Variant,
    alpha: Vec<f64>,
    #[serde(with = "roc::threshold_serde")]
    threshold: f64,
    target_fpr: f64,
    multiplier: f64,
    seed: u64,
    sweeps_used: usize,
    member_count: usize,
    val_tpr: f64,
    val_fpr: f64,
}

impl CalibrationResult {
    pub fn to_json(&self) -> Result<String> {
        let file = CalibrationFile {
            variant: self.params.variant,
            alpha: self.params.alpha.clone(),
            threshold: self.global_threshold,
            target_fpr: self.target_fpr,
            multiplier: self.fit_fpr_multiplier,
            seed: self.seed,
            sweeps_used: self.sweeps_used,
            member_count: self.member_count,
            val_tpr: self.achieved_val.tpr,
            val_fpr: self.achieved_val.fpr,
        };
        let mut s = serde_json::to_string_pretty(&file)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: CalibrationFile = serde_json::from_str(text)?;
        Ok(Self {
            params: AdjustmentParams::new(f.variant, f.alpha)?,
            global_threshold: f.threshold,
            target_fpr: f.target_fpr,
            fit_fpr_multiplier: f.multiplier,
            achieved_val: OperatingPoint {
                threshold: f.threshold,
                tpr: f.val_tpr,
                fpr: f.val_fpr,
            },
            sweeps_used: f.sweeps_used,
            seed: f.seed,
            member_count: f.member_count,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    /// Fitting uses `multiplier * target_fpr` as the FPR cap.
    pub multiplier: f64,
    /// A sweep improving validation TPR by less than this ends the fit.
    pub sweep_tol: f64,
    pub max_sweeps: usize,
    pub brent_tol: f64,
    pub brent_max_iters: usize,
    /// Starting value of the lv2 exponents. With both exponents at zero
    /// every single-coordinate move of lv2 is a constant shift, so
    /// coordinate descent could never leave the start; any nonzero value
    /// keeps the starting scores equal to `y_hat`.
    pub lv2_exponent_init: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            multiplier: 0.9,
            sweep_tol: 1e-6,
            max_sweeps: 50,
            brent_tol: 1e-8,
            brent_max_iters: 200,
            lv2_exponent_init: 1.0,
        }
    }
}

fn fit_target(target_fpr: f64, multiplier: f64) -> Result<f64> {
    let eff = multiplier * target_fpr;
    if !(target_fpr > 0.0 && target_fpr < 1.0) || !(multiplier > 0.0) || !(eff < 1.0) {
        return Err(Error::arg(format!(
            "target FPR {target_fpr} with multiplier {multiplier} does not give a cap in (0, 1)"
        )));
    }
    Ok(eff)
}

/// Fitting workspace: class-separated features plus reusable score buffers.
struct Objective<'a> {
    feats: &'a Features,
    pos_idx: Vec<usize>,
    neg_idx: Vec<usize>,
    pos_buf: Vec<f64>,
    neg_buf: Vec<f64>,
    cap: f64,
}

impl<'a> Objective<'a> {
    fn new(feats: &'a Features, cap: f64) -> Self {
        let (pos_idx, neg_idx): (Vec<usize>, Vec<usize>) = (0..feats.len()).partition(|&i| feats.labels[i]);
        Self {
            pos_buf: Vec::with_capacity(pos_idx.len()),
            neg_buf: Vec::with_capacity(neg_idx.len()),
            feats,
            pos_idx,
            neg_idx,
            cap,
        }
    }

    fn operating_point(&mut self, variant: Variant, alpha: &[f64]) -> OperatingPoint {
        let f = self.feats;
        let score = |i: usize| adjust(variant, alpha, f.y_hat[i], f.epistemic[i], f.aleatoric[i]);
        self.pos_buf.clear();
        self.pos_buf.extend(self.pos_idx.iter().map(|&i| score(i)));
        self.neg_buf.clear();
        self.neg_buf.extend(self.neg_idx.iter().map(|&i| score(i)));
        roc::select_threshold_split(&self.pos_buf, &mut self.neg_buf, self.cap)
    }
}

/// Global threshold only, selected on ensemble means at
/// `multiplier * target_fpr`.
pub fn fit_global(val: &PredictionDataset, target_fpr: f64, multiplier: f64) -> Result<CalibrationResult> {
    let feats = Features::from_dataset(val)?;
    fit_global_features(&feats, val.member_count(), target_fpr, multiplier)
}

pub fn fit_global_features(
    feats: &Features,
    member_count: usize,
    target_fpr: f64,
    multiplier: f64,
) -> Result<CalibrationResult> {
    feats.require_both_classes("validation")?;
    let cap = fit_target(target_fpr, multiplier)?;
    let params = AdjustmentParams::identity(Variant::GlobalOnly);
    let point = Objective::new(feats, cap).operating_point(Variant::GlobalOnly, &[]);
    Ok(CalibrationResult {
        params,
        global_threshold: point.threshold,
        target_fpr,
        fit_fpr_multiplier: multiplier,
        achieved_val: point,
        sweeps_used: 0,
        seed: 0,
        member_count,
    })
}

/// Coordinate-wise fit of a local adjustment.
///
/// Coefficients start at zero (the lv2 exponents at
/// [`FitConfig::lv2_exponent_init`]), so the global-only fit is the starting
/// incumbent. `lv1` alternates its two coefficients in fixed order; `lv2` and
/// `lv3` visit theirs in a fresh seeded permutation each sweep. A coordinate
/// only moves when Brent finds a strictly better validation TPR than the
/// incumbent; the best point seen during the search is kept.
pub fn fit_local(
    val: &PredictionDataset,
    target_fpr: f64,
    variant: Variant,
    seed: u64,
    config: &FitConfig,
) -> Result<CalibrationResult> {
    let feats = Features::from_dataset(val)?;
    fit_local_features(&feats, val.member_count(), target_fpr, variant, seed, config)
}

pub fn fit_local_features(
    feats: &Features,
    member_count: usize,
    target_fpr: f64,
    variant: Variant,
    seed: u64,
    config: &FitConfig,
) -> Result<CalibrationResult> {
    feats.require_both_classes("validation")?;
    let cap = fit_target(target_fpr, config.multiplier)?;
    let mut objective = Objective::new(feats, cap);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut alpha = vec![0.0; variant.arity()];
    if variant == Variant::Lv2 {
        let (lo, hi) = variant.bracket(2);
        if !(lo..=hi).contains(&config.lv2_exponent_init) {
            return Err(Error::arg(format!(
                "lv2 exponent start {} outside [{lo}, {hi}]",
                config.lv2_exponent_init
            )));
        }
        alpha[2] = config.lv2_exponent_init;
        alpha[3] = config.lv2_exponent_init;
    }
    let mut best_tpr = objective.operating_point(variant, &alpha).tpr;
    let mut order: Vec<usize> = (0..alpha.len()).collect();
    let mut sweeps_used = 0;

    while sweeps_used < config.max_sweeps && !alpha.is_empty() {
        if variant != Variant::Lv1 {
            order.shuffle(&mut rng);
        }
        let sweep_start = best_tpr;
        for &i in &order {
            let (lo, hi) = variant.bracket(i);
            let mut trial = alpha.clone();
            let mut coord_best = (alpha[i], best_tpr);
            brent_minimize(
                |x| {
                    trial[i] = x;
                    let tpr = objective.operating_point(variant, &trial).tpr;
                    if tpr > coord_best.1 {
                        coord_best = (x, tpr);
                    }
                    Ok(-tpr)
                },
                lo,
                hi,
                config.brent_tol,
                config.brent_max_iters,
            )?;
            if coord_best.1 > best_tpr {
                alpha[i] = coord_best.0;
                best_tpr = coord_best.1;
            }
        }
        sweeps_used += 1;
        if best_tpr - sweep_start < config.sweep_tol {
            break;
        }
    }

    let point = objective.operating_point(variant, &alpha);
    if point.fpr > cap {
        return Err(Error::Internal(format!(
            "fitted validation FPR {} exceeds cap {cap}",
            point.fpr
        )));
    }
    Ok(CalibrationResult {
        params: AdjustmentParams { variant, alpha },
        global_threshold: point.threshold,
        target_fpr,
        fit_fpr_multiplier: config.multiplier,
        achieved_val: point,
        sweeps_used,
        seed,
        member_count,
    })
}

/// Dispatches to [`fit_global`] or [`fit_local`].
pub fn fit(
    val: &PredictionDataset,
    target_fpr: f64,
    variant: Variant,
    seed: u64,
    config: &FitConfig,
) -> Result<CalibrationResult> {
    let feats = Features::from_dataset(val)?;
    fit_features(&feats, val.member_count(), target_fpr, variant, seed, config)
}

pub fn fit_features(
    feats: &Features,
    member_count: usize,
    target_fpr: f64,
    variant: Variant,
    seed: u64,
    config: &FitConfig,
) -> Result<CalibrationResult> {
    match variant {
        Variant::GlobalOnly => {
            let mut r = fit_global_features(feats, member_count, target_fpr, config.multiplier)?;
            r.seed = seed;
            Ok(r)
        }
        v => fit_local_features(feats, member_count, target_fpr, v, seed, config),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub tpr: f64,
    pub fpr: f64,
    pub combined: f64,
}

/// Applies a calibration to held-out data and scores it against the real
/// target FPR (not the fitting cap).
pub fn evaluate_calibration(
    test: &PredictionDataset,
    result: &CalibrationResult,
    target_fpr: f64,
) -> Result<Evaluation> {
    if test.member_count() != result.member_count {
        return Err(Error::MemberCountMismatch {
            fit: result.member_count,
            data: test.member_count(),
        });
    }
    let feats = Features::from_dataset(test)?;
    evaluate_features(&feats, result, target_fpr)
}

pub fn evaluate_features(feats: &Features, result: &CalibrationResult, target_fpr: f64) -> Result<Evaluation> {
    feats.require_both_classes("test")?;
    let scores = feats.adjusted_scores(&result.params)?;
    let p = roc::evaluate_at_threshold(&scores, &feats.labels, result.global_threshold);
    Ok(Evaluation {
        tpr: p.tpr,
        fpr: p.fpr,
        combined: roc::combined_metric(p.tpr, p.fpr, target_fpr)?,
    })
}
