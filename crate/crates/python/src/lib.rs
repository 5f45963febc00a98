//! Python bindings: numeric kernels, attention weights, the synthetic benchmark and
//! the gradient check.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use bagattn_core::attention::{superbag_feature, Mode, Scoring};
use bagattn_core::config::Config;
use bagattn_core::corpus::{write_corpus, PairKey};
use bagattn_core::eval::{pr_curve as core_pr_curve, GoldFacts, Prediction};
use bagattn_core::numeric::{self, Matrix};
use bagattn_core::pipeline::{check_full_loss, run_synthetic, GradCheckInstance};
use bagattn_core::synthetic::generate_synthetic;
use bagattn_core::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyIOError::new_err(io.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn parse_config(config_json: Option<&str>) -> PyResult<Config> {
    Config::from_json(config_json.unwrap_or("")).map_err(py_err)
}

fn parse_mode(mode: &str) -> PyResult<Mode> {
    mode.parse().map_err(py_err)
}

fn parse_scoring(scoring: &str) -> PyResult<Scoring> {
    scoring.parse().map_err(py_err)
}

#[pyfunction]
fn softmax(values: Vec<f64>) -> PyResult<Vec<f64>> {
    numeric::softmax(&values).map_err(py_err)
}

#[pyfunction]
fn cosine(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    if a.len() != b.len() {
        return Err(PyValueError::new_err(format!(
            "lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(numeric::cosine(&a, &b))
}

/// Attention weights for one superbag.
///
/// `features[i][j]` is sentence `j` of bag `i`; `relations` holds one row per
/// relation. Returns a dict with `alpha` (per bag, `None` under ATT), `beta`
/// (per bag), `gamma` and `feature`.
#[pyfunction]
#[pyo3(signature = (features, relations, relation, mode = "C2SA", scoring = "cosine"))]
fn attention<'py>(
    py: Python<'py>,
    features: Vec<Vec<Vec<f64>>>,
    relations: Vec<Vec<f64>>,
    relation: usize,
    mode: &str,
    scoring: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let r = Matrix::from_rows(&relations).map_err(py_err)?;
    if relation >= r.rows() {
        return Err(PyValueError::new_err(format!("relation {relation} out of range")));
    }
    let trace = superbag_feature(
        &features,
        &r,
        relation,
        parse_mode(mode)?,
        parse_scoring(scoring)?,
    )
    .map_err(py_err)?;
    let alpha: Vec<Option<Vec<Vec<f64>>>> = trace
        .bags
        .iter()
        .map(|b| {
            b.alpha
                .as_ref()
                .map(|a| a.row_iter().map(<[f64]>::to_vec).collect())
        })
        .collect();
    let beta: Vec<Vec<f64>> = trace.bags.iter().map(|b| b.beta.clone()).collect();
    let out = PyDict::new(py);
    out.set_item("alpha", alpha)?;
    out.set_item("beta", beta)?;
    out.set_item("gamma", trace.gamma)?;
    out.set_item("feature", trace.superbag_feature)?;
    Ok(out)
}

/// Precision/recall points of a held-out PR curve.
///
/// `predictions` are `(e1, e2, relation, score)` tuples and `gold` holds
/// `(e1, e2, relation)` facts.
#[pyfunction]
fn pr_curve(
    predictions: Vec<(String, String, usize, f64)>,
    gold: Vec<(String, String, usize)>,
) -> PyResult<Vec<(f64, f64)>> {
    let preds: Vec<Prediction> = predictions
        .into_iter()
        .map(|(e1, e2, relation, score)| Prediction {
            pair: PairKey::new(e1, e2),
            relation,
            score,
        })
        .collect();
    let gold: GoldFacts = gold
        .into_iter()
        .map(|(e1, e2, r)| (PairKey::new(e1, e2), r))
        .collect();
    let curve = core_pr_curve(&preds, &gold).map_err(py_err)?;
    Ok(curve.points.iter().map(|p| (p.precision, p.recall)).collect())
}

/// Writes the synthetic benchmark (`train.txt`, `test.txt`, `relations.txt`,
/// `vocab.txt`) to `out_dir` and returns its sizes.
#[pyfunction]
#[pyo3(signature = (out_dir, config_json = None))]
fn synth<'py>(py: Python<'py>, out_dir: PathBuf, config_json: Option<&str>) -> PyResult<Bound<'py, PyDict>> {
    let config = parse_config(config_json)?;
    let corpus = generate_synthetic(&config.synthetic_spec()).map_err(py_err)?;
    std::fs::create_dir_all(&out_dir).map_err(|e| PyIOError::new_err(e.to_string()))?;
    write_corpus(
        &out_dir.join("train.txt"),
        &corpus.train,
        &corpus.vocab,
        &corpus.schema,
    )
    .map_err(py_err)?;
    write_corpus(
        &out_dir.join("test.txt"),
        &corpus.test,
        &corpus.vocab,
        &corpus.schema,
    )
    .map_err(py_err)?;
    corpus
        .schema
        .write(&out_dir.join("relations.txt"))
        .map_err(py_err)?;
    corpus.vocab.write(&out_dir.join("vocab.txt")).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("train_sentences", corpus.train.len())?;
    out.set_item("test_sentences", corpus.test.len())?;
    out.set_item("noisy_bags", corpus.noisy_pairs.len())?;
    out.set_item("relations", corpus.schema.len())?;
    Ok(out)
}

/// Trains on the synthetic benchmark and evaluates on its clean test split.
#[pyfunction]
#[pyo3(signature = (config_json = None))]
fn train_synthetic<'py>(py: Python<'py>, config_json: Option<&str>) -> PyResult<Bound<'py, PyDict>> {
    let config = parse_config(config_json)?;
    let run = py.detach(|| run_synthetic(&config)).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item(
        "losses",
        run.metrics.iter().map(|m| m.mean_loss).collect::<Vec<_>>(),
    )?;
    out.set_item("precision", run.sentence.precision)?;
    out.set_item("recall", run.sentence.recall)?;
    out.set_item("f1", run.sentence.f1)?;
    out.set_item("auc", run.curve.auc())?;
    Ok(out)
}

/// Full-loss finite-difference check on the small default instance. Returns
/// `(passed, max_relative_error)`.
#[pyfunction]
#[pyo3(signature = (mode = "C2SA", scoring = "cosine", seed = 1))]
fn gradcheck(mode: &str, scoring: &str, seed: u64) -> PyResult<(bool, f64)> {
    let report = check_full_loss(
        GradCheckInstance::default(),
        parse_mode(mode)?,
        parse_scoring(scoring)?,
        seed,
    )
    .map_err(py_err)?;
    Ok((report.passed(), report.max_rel_error()))
}

#[pymodule]
fn bagattn(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(softmax, m)?)?;
    m.add_function(wrap_pyfunction!(cosine, m)?)?;
    m.add_function(wrap_pyfunction!(attention, m)?)?;
    m.add_function(wrap_pyfunction!(pr_curve, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(train_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
