//! Python bindings for the `lowfpr` toolkit.
//!
//! Build with `cargo build -p lowfpr-py --release --features extension-module`
//! and import the resulting shared library as `lowfpr_py`.

use std::collections::HashMap;

use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;

use lowfpr::adjust::{self, CalibrationResult, FitConfig, Variant};
use lowfpr::analysis;
use lowfpr::data::{self, Format, PredictionDataset, Split};
use lowfpr::error::ErrorKind;
use lowfpr::protocol;
use lowfpr::roc;
use lowfpr::synth::{self, SynthConfig};
use lowfpr::uncertainty;

fn py_err(e: lowfpr::Error) -> PyErr {
    match e.kind() {
        ErrorKind::Numeric => PyArithmeticError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = String>>(s: &str) -> PyResult<T> {
    s.parse().map_err(PyValueError::new_err)
}

/// A validated prediction dataset.
#[pyclass(name = "Dataset", module = "lowfpr_py")]
struct PyDataset {
    inner: PredictionDataset,
}

#[pymethods]
impl PyDataset {
    /// Loads CSV or JSONL; the format follows the extension unless given.
    #[staticmethod]
    #[pyo3(signature = (path, format=None))]
    fn load(path: &str, format: Option<&str>) -> PyResult<Self> {
        let format = match format {
            Some(f) => parse::<Format>(f)?,
            None => Format::from_path(path.as_ref()),
        };
        Ok(Self {
            inner: data::load_dataset(path, format).map_err(py_err)?,
        })
    }

    #[pyo3(signature = (path, format=None))]
    fn save(&self, path: &str, format: Option<&str>) -> PyResult<()> {
        let format = match format {
            Some(f) => parse::<Format>(f)?,
            None => Format::from_path(path.as_ref()),
        };
        data::save_dataset(&self.inner, path, format).map_err(py_err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Dataset(rows={}, members={})", self.inner.len(), self.inner.member_count())
    }

    #[getter]
    fn member_count(&self) -> usize {
        self.inner.member_count()
    }

    fn split(&self, name: &str) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.filter_split(parse::<Split>(name)?),
        })
    }

    fn subsample(&self, fraction: f64, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.subsample(fraction, seed).map_err(py_err)?,
        })
    }

    fn labels(&self) -> Vec<bool> {
        self.inner.labels()
    }

    fn sample_ids(&self) -> Vec<String> {
        self.inner.records().iter().map(|r| r.sample_id.clone()).collect()
    }

    fn ensemble_scores(&self) -> Vec<f64> {
        uncertainty::ensemble_scores(&self.inner)
    }

    /// `(yhat, predictive, aleatoric, epistemic)` per sample.
    fn uncertainties(&self) -> PyResult<Vec<(f64, f64, f64, f64)>> {
        Ok(uncertainty::compute_uncertainties(&self.inner)
            .map_err(py_err)?
            .into_iter()
            .map(|r| (r.y_hat, r.triple.predictive_entropy, r.triple.aleatoric, r.triple.epistemic))
            .collect())
    }

    /// `{split: (benign, malicious)}`.
    fn counts(&self) -> HashMap<String, (usize, usize)> {
        let c = self.inner.counts();
        Split::ALL
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str().to_string(), (c.benign[i], c.malicious[i])))
            .collect()
    }
}

/// A fitted threshold calibration.
#[pyclass(name = "Calibration", module = "lowfpr_py")]
struct PyCalibration {
    inner: CalibrationResult,
}

#[pymethods]
impl PyCalibration {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: CalibrationResult::from_json(text).map_err(py_err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(py_err)
    }

    #[getter]
    fn variant(&self) -> &'static str {
        self.inner.params.variant.label()
    }

    #[getter]
    fn alpha(&self) -> Vec<f64> {
        self.inner.params.alpha.clone()
    }

    #[getter]
    fn threshold(&self) -> f64 {
        self.inner.global_threshold
    }

    #[getter]
    fn target_fpr(&self) -> f64 {
        self.inner.target_fpr
    }

    /// Validation `(tpr, fpr)` at the fitted threshold.
    #[getter]
    fn validation(&self) -> (f64, f64) {
        (self.inner.achieved_val.tpr, self.inner.achieved_val.fpr)
    }

    /// `(tpr, fpr, combined)` on `dataset` against `target_fpr` (defaults to
    /// the fitting target).
    #[pyo3(signature = (dataset, target_fpr=None))]
    fn evaluate(&self, dataset: &PyDataset, target_fpr: Option<f64>) -> PyResult<(f64, f64, f64)> {
        let target = target_fpr.unwrap_or(self.inner.target_fpr);
        let e = adjust::evaluate_calibration(&dataset.inner, &self.inner, target).map_err(py_err)?;
        Ok((e.tpr, e.fpr, e.combined))
    }

    fn __repr__(&self) -> String {
        format!(
            "Calibration(variant={}, alpha={:?}, threshold={})",
            self.variant(),
            self.inner.params.alpha,
            roc::format_threshold(self.inner.global_threshold)
        )
    }
}

/// Fits `variant` (g, g+l, g+lv2, g+lv3) on the validation dataset.
#[pyfunction]
#[pyo3(signature = (validation, target_fpr, variant="g", seed=0, multiplier=0.9))]
fn fit(
    py: Python<'_>,
    validation: &PyDataset,
    target_fpr: f64,
    variant: &str,
    seed: u64,
    multiplier: f64,
) -> PyResult<PyCalibration> {
    let variant = parse::<Variant>(variant)?;
    let config = FitConfig {
        multiplier,
        ..FitConfig::default()
    };
    let ds = &validation.inner;
    let inner = py
        .detach(|| adjust::fit(ds, target_fpr, variant, seed, &config))
        .map_err(py_err)?;
    Ok(PyCalibration { inner })
}

/// Generates a synthetic dataset from a JSON config or a named scenario.
#[pyfunction]
#[pyo3(signature = (config_json=None, scenario=None, seed=None))]
fn synth_generate(
    py: Python<'_>,
    config_json: Option<&str>,
    scenario: Option<&str>,
    seed: Option<u64>,
) -> PyResult<PyDataset> {
    let mut cfg = match (config_json, scenario) {
        (Some(_), Some(_)) => return Err(PyValueError::new_err("pass either config_json or scenario, not both")),
        (Some(json), None) => SynthConfig::from_json(json).map_err(py_err)?,
        (None, name) => SynthConfig::scenario(name.unwrap_or("default"), 0).map_err(py_err)?,
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let inner = py.detach(|| synth::generate(&cfg)).map_err(py_err)?;
    Ok(PyDataset { inner })
}

/// `(predictive, aleatoric, epistemic)` of one member-score vector, in nats.
#[pyfunction]
fn uncertainty_triple(member_scores: Vec<f64>) -> PyResult<(f64, f64, f64)> {
    let t = uncertainty::uncertainty_triple(&member_scores).map_err(py_err)?;
    Ok((t.predictive_entropy, t.aleatoric, t.epistemic))
}

/// `(threshold, tpr, fpr)` points, starting at the `inf` sentinel.
#[pyfunction]
fn roc_curve(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<Vec<(f64, f64, f64)>> {
    let c = roc::roc_curve(&scores, &labels).map_err(py_err)?;
    Ok(c.points.iter().map(|p| (p.threshold, p.tpr, p.fpr)).collect())
}

#[pyfunction]
#[pyo3(signature = (scores, labels, fpr_max=None))]
fn auc(scores: Vec<f64>, labels: Vec<bool>, fpr_max: Option<f64>) -> PyResult<f64> {
    let c = roc::roc_curve(&scores, &labels).map_err(py_err)?;
    match fpr_max {
        Some(m) => roc::partial_auc(&c, m).map_err(py_err),
        None => Ok(roc::auc(&c)),
    }
}

/// `(threshold, tpr, fpr)` maximizing TPR subject to FPR <= target.
#[pyfunction]
fn select_threshold(scores: Vec<f64>, labels: Vec<bool>, target_fpr: f64) -> PyResult<(f64, f64, f64)> {
    let p = roc::select_threshold(&scores, &labels, target_fpr).map_err(py_err)?;
    Ok((p.threshold, p.tpr, p.fpr))
}

#[pyfunction]
fn evaluate_at_threshold(scores: Vec<f64>, labels: Vec<bool>, threshold: f64) -> (f64, f64) {
    let p = roc::evaluate_at_threshold(&scores, &labels, threshold);
    (p.tpr, p.fpr)
}

#[pyfunction]
fn combined_metric(tpr: f64, actualized_fpr: f64, target_fpr: f64) -> PyResult<f64> {
    roc::combined_metric(tpr, actualized_fpr, target_fpr).map_err(py_err)
}

/// Valid-versus-invalid protocol rows as dicts.
#[pyfunction]
#[pyo3(signature = (validation, test, target_fprs, min_fp_count=1))]
fn relative_error_curve(
    validation: &PyDataset,
    test: &PyDataset,
    target_fprs: Vec<f64>,
    min_fp_count: usize,
) -> PyResult<Vec<HashMap<&'static str, Option<f64>>>> {
    let points = protocol::relative_error_curve_with(&validation.inner, &test.inner, &target_fprs, min_fp_count)
        .map_err(py_err)?;
    Ok(points
        .into_iter()
        .map(|p| {
            HashMap::from([
                ("target_fpr", Some(p.target_fpr)),
                ("valid_tpr", Some(p.valid_tpr)),
                ("valid_fpr", Some(p.valid_actualized_fpr)),
                ("invalid_tpr", Some(p.invalid_tpr)),
                ("rel_error", p.rel_error),
                ("attainable", Some(if p.attainable { 1.0 } else { 0.0 })),
            ])
        })
        .collect())
}

/// `(accuracy, auc, partial_auc)`.
type Metrics = (f64, f64, f64);

/// `((accuracy, auc, partial_auc) of the ensemble, same for the member mean)`.
#[pyfunction]
#[pyo3(signature = (dataset, fpr_max=1e-3, accuracy_threshold=0.5))]
fn ensemble_vs_members(
    dataset: &PyDataset,
    fpr_max: f64,
    accuracy_threshold: f64,
) -> PyResult<(Metrics, Metrics)> {
    let (e, m) = analysis::ensemble_vs_members(&dataset.inner, fpr_max, accuracy_threshold).map_err(py_err)?;
    Ok(((e.accuracy, e.auc, e.partial_auc), (m.accuracy, m.auc, m.partial_auc)))
}

/// `(W+, two-sided p)`.
#[pyfunction]
fn wilcoxon(paired_diffs: Vec<f64>) -> (f64, f64) {
    let r = analysis::wilcoxon_signed_rank(&paired_diffs);
    (r.statistic, r.p_value)
}

#[pymodule]
fn lowfpr_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyCalibration>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(synth_generate, m)?)?;
    m.add_function(wrap_pyfunction!(uncertainty_triple, m)?)?;
    m.add_function(wrap_pyfunction!(roc_curve, m)?)?;
    m.add_function(wrap_pyfunction!(auc, m)?)?;
    m.add_function(wrap_pyfunction!(select_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_at_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(combined_metric, m)?)?;
    m.add_function(wrap_pyfunction!(relative_error_curve, m)?)?;
    m.add_function(wrap_pyfunction!(ensemble_vs_members, m)?)?;
    m.add_function(wrap_pyfunction!(wilcoxon, m)?)?;
    Ok(())
}
