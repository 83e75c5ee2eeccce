//! Python bindings for the core scoring and reliability primitives:
//! scale normalization, rubric fingerprints, cosine/clustering helpers,
//! and the statistics suite over items × raters grids.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use ger_core::analysis;
use ger_core::domain::{self, Rubric, RubricOrigin, Scale};
use ger_core::gateway::{self, EmbeddingVector};
use ger_core::stats::{self, AlphaMetric, ScoreMatrix};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn build_scale(min: f64, max: f64, labels: Option<Vec<String>>) -> PyResult<Scale> {
    match labels {
        Some(labels) => Scale::categorical(labels, min, max).map_err(value_err),
        None => Scale::numeric(min, max).map_err(value_err),
    }
}

/// Map a raw score token (numeral or category label) onto the scale.
/// Returns (value, clamped). Raises ValueError for unparseable tokens.
#[pyfunction]
#[pyo3(signature = (raw, min=1.0, max=5.0, labels=None))]
fn normalize_score(raw: &str, min: f64, max: f64, labels: Option<Vec<String>>) -> PyResult<(f64, bool)> {
    let scale = build_scale(min, max, labels)?;
    let n = domain::normalize_score(raw, &scale).map_err(value_err)?;
    Ok((n.value, n.clamped))
}

/// Deterministic content hash of a rubric's (name, description, scale),
/// stable under whitespace and case changes.
#[pyfunction]
#[pyo3(signature = (name, description, min=1.0, max=5.0, labels=None))]
fn rubric_fingerprint(
    name: &str,
    description: &str,
    min: f64,
    max: f64,
    labels: Option<Vec<String>>,
) -> PyResult<String> {
    let scale = build_scale(min, max, labels)?;
    let rubric = Rubric::new(name, description, scale, RubricOrigin::Model("python".into()))
        .map_err(value_err)?;
    Ok(rubric.rubric_id)
}

/// Cosine similarity of two equal-length vectors.
#[pyfunction]
fn cosine(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    let va = EmbeddingVector { values: a, model_id: String::new() };
    let vb = EmbeddingVector { values: b, model_id: String::new() };
    gateway::cosine(&va, &vb).map_err(value_err)
}

/// Single-linkage clustering at cosine > tau. Returns, for each vector,
/// the index of its cluster's earliest member.
#[pyfunction]
fn cluster_by_cosine(vectors: Vec<Vec<f64>>, tau: f64) -> Vec<usize> {
    let wrapped: Vec<Option<Vec<f64>>> = vectors.into_iter().map(Some).collect();
    analysis::cluster_by_cosine(&wrapped, tau)
}

/// Align% = 100 * (1 - unseen / unique).
#[pyfunction]
fn align_pct(unique: usize, unseen: usize) -> PyResult<f64> {
    if unique == 0 || unseen > unique {
        return Err(PyValueError::new_err("need 0 <= unseen <= unique and unique > 0"));
    }
    Ok(analysis::align_pct(unique, unseen))
}

/// Exact-match agreement after rounding both vectors to the scale step.
/// Returns (percentage, ci_low, ci_high, n). None entries are deleted
/// pairwise.
#[pyfunction]
#[pyo3(signature = (a, b, granularity=1.0))]
fn agreement_pct(
    a: Vec<Option<f64>>,
    b: Vec<Option<f64>>,
    granularity: f64,
) -> PyResult<(f64, f64, f64, usize)> {
    let r = stats::agreement_pct(&a, &b, granularity).map_err(value_err)?;
    let (lo, hi) = r.ci95.unwrap_or((r.value, r.value));
    Ok((r.value, lo, hi, r.n_effective))
}

/// Spearman rank correlation with average ranks for ties.
#[pyfunction]
fn spearman(a: Vec<Option<f64>>, b: Vec<Option<f64>>) -> PyResult<f64> {
    Ok(stats::spearman(&a, &b).map_err(value_err)?.value)
}

/// Pearson product-moment correlation.
#[pyfunction]
fn pearson(a: Vec<Option<f64>>, b: Vec<Option<f64>>) -> PyResult<f64> {
    Ok(stats::pearson(&a, &b).map_err(value_err)?.value)
}

fn matrix_from(values: Vec<Vec<Option<f64>>>, granularity: f64) -> PyResult<ScoreMatrix> {
    let items = (0..values.len()).map(|i| format!("item{i}")).collect();
    let width = values.first().map(|r| r.len()).unwrap_or(0);
    let raters = (0..width).map(|j| format!("rater{j}")).collect();
    ScoreMatrix::new(items, raters, values, granularity).map_err(value_err)
}

/// Fleiss' kappa over an items x raters grid (rows with missing cells
/// are dropped).
#[pyfunction]
#[pyo3(signature = (values, granularity=1.0))]
fn fleiss_kappa(values: Vec<Vec<Option<f64>>>, granularity: f64) -> PyResult<f64> {
    Ok(stats::fleiss_kappa(&matrix_from(values, granularity)?).map_err(value_err)?.value)
}

/// Krippendorff's alpha; metric is "nominal", "ordinal", or "interval".
/// Missing cells are handled natively.
#[pyfunction]
#[pyo3(signature = (values, metric="ordinal", granularity=1.0))]
fn krippendorff_alpha(values: Vec<Vec<Option<f64>>>, metric: &str, granularity: f64) -> PyResult<f64> {
    let metric = match metric {
        "nominal" => AlphaMetric::Nominal,
        "ordinal" => AlphaMetric::Ordinal,
        "interval" => AlphaMetric::Interval,
        other => return Err(PyValueError::new_err(format!("unknown metric {other:?}"))),
    };
    Ok(stats::krippendorff_alpha(&matrix_from(values, granularity)?, metric)
        .map_err(value_err)?
        .value)
}

/// ICC(2,1): two-way random effects, absolute agreement, single rater.
#[pyfunction]
#[pyo3(signature = (values, granularity=1.0))]
fn icc2(values: Vec<Vec<Option<f64>>>, granularity: f64) -> PyResult<f64> {
    Ok(stats::icc2(&matrix_from(values, granularity)?).map_err(value_err)?.value)
}

/// ICC(2,k): reliability of the k-rater average under the same model.
#[pyfunction]
#[pyo3(signature = (values, granularity=1.0))]
fn icc2k(values: Vec<Vec<Option<f64>>>, granularity: f64) -> PyResult<f64> {
    Ok(stats::icc2k(&matrix_from(values, granularity)?).map_err(value_err)?.value)
}

#[pymodule]
fn ger_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(normalize_score, m)?)?;
    m.add_function(wrap_pyfunction!(rubric_fingerprint, m)?)?;
    m.add_function(wrap_pyfunction!(cosine, m)?)?;
    m.add_function(wrap_pyfunction!(cluster_by_cosine, m)?)?;
    m.add_function(wrap_pyfunction!(align_pct, m)?)?;
    m.add_function(wrap_pyfunction!(agreement_pct, m)?)?;
    m.add_function(wrap_pyfunction!(spearman, m)?)?;
    m.add_function(wrap_pyfunction!(pearson, m)?)?;
    m.add_function(wrap_pyfunction!(fleiss_kappa, m)?)?;
    m.add_function(wrap_pyfunction!(krippendorff_alpha, m)?)?;
    m.add_function(wrap_pyfunction!(icc2, m)?)?;
    m.add_function(wrap_pyfunction!(icc2k, m)?)?;
    Ok(())
}
