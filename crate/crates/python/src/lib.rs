use ncergodic::bau::{self, BauOptions};
use ncergodic::brunel;
use ncergodic::maximal::Family;
use ncergodic::runner::{self, ExperimentConfig};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(err: ncergodic::Error) -> PyErr {
    match err {
        ncergodic::Error::Config(msg) => PyValueError::new_err(msg),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// `α(n, p)` as an exact `(numerator, denominator)` pair of decimal strings.
#[pyfunction]
fn alpha(n: u64, p: u64) -> (String, String) {
    let a = brunel::alpha(n, p);
    (a.numer().to_string(), a.denom().to_string())
}

/// Runs one experiment from flat TOML text and returns its JSON artifact.
#[pyfunction]
fn run_config(toml: &str) -> PyResult<String> {
    let cfg = ExperimentConfig::from_toml(toml).map_err(to_py)?;
    let outcome = runner::run(&cfg).map_err(to_py)?;
    runner::to_json(&outcome.artifact()).map_err(to_py)
}

/// End-to-end b.a.u. experiment; returns the report as JSON.
#[pyfunction]
#[pyo3(signature = (kind, seed, epsilon = 0.1, tail_tol = 1e-3, max_log2 = 20))]
fn run_bau(kind: &str, seed: u64, epsilon: f64, tail_tol: f64, max_log2: u32) -> PyResult<String> {
    let kind = Family::parse(kind).map_err(to_py)?;
    let opts = BauOptions {
        epsilon,
        tail_tol,
        max_log2,
        ..BauOptions::default()
    };
    let report = bau::run_bau_experiment(kind, seed, &opts).map_err(to_py)?;
    runner::to_json(&report).map_err(to_py)
}

#[pymodule]
fn ncergodic_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(alpha, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_bau, m)?)?;
    Ok(())
}
