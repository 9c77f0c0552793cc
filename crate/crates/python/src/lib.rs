//! Python bindings: dataset generation, splits, reporting helpers,
//! gradient checks and greedy decoding with a saved checkpoint.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use anaphora::experiment::{Corpus, GradCheckSuite};
use anaphora::grammar::interpret as interpret_tokens;
use anaphora::holdout::make_split;
use anaphora::report::learning_delta as delta;
use anaphora::trainer::{EpochRecord, RunHistory, StopReason};
use anaphora::{Checkpoint, ExperimentId};

fn value_err(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn tokens(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

/// All sentences as `(source, target, form)` triples, in canonical order.
#[pyfunction]
fn generate() -> Vec<(String, String, String)> {
    Corpus::standard()
        .dataset
        .examples
        .iter()
        .map(|e| (e.source_text(), e.target_text(), e.form.as_str().to_string()))
        .collect()
}

/// Logical form of a sentence, e.g. `"Alice sees herself"` -> `"see ( alice , alice )"`.
#[pyfunction]
fn interpret(sentence: &str) -> PyResult<String> {
    let corpus = Corpus::standard();
    interpret_tokens(&tokens(sentence), &corpus.dataset.lexicon).map(|t| t.join(" ")).map_err(value_err)
}

/// `(source tokens, target tokens)`.
#[pyfunction]
fn vocabularies() -> (Vec<String>, Vec<String>) {
    let c = Corpus::standard();
    (c.source_vocab.tokens().to_vec(), c.target_vocab.tokens().to_vec())
}

/// Split manifest as a JSON string.
#[pyfunction]
#[pyo3(signature = (experiment, seed=0, k=None))]
fn split(experiment: &str, seed: u64, k: Option<usize>) -> PyResult<String> {
    let exp: ExperimentId = experiment.parse().map_err(value_err)?;
    let corpus = Corpus::standard();
    let spec = corpus.holdout(exp, k).map_err(value_err)?;
    let s = make_split(&spec, &corpus.dataset, seed).map_err(value_err)?;
    serde_json::to_string(&s.manifest()).map_err(value_err)
}

/// Epochs between the first context reaching `threshold` and all of them
/// exceeding it; `None` if some context never does.
#[pyfunction]
#[pyo3(signature = (curves, contexts, threshold=0.95))]
fn learning_delta(curves: BTreeMap<String, Vec<f64>>, contexts: Vec<String>, threshold: f64) -> PyResult<Option<usize>> {
    let n = curves.values().map(Vec::len).max().unwrap_or(0);
    if curves.values().any(|v| v.len() != n) {
        return Err(value_err("all curves must have the same length"));
    }
    let epochs: Vec<EpochRecord> = (0..n)
        .map(|i| EpochRecord {
            epoch: i + 1,
            train_loss: 0.0,
            val_loss: 0.0,
            accuracy: curves.iter().map(|(k, v)| (k.clone(), v[i])).collect(),
        })
        .collect();
    let h = RunHistory { epochs, stop_reason: StopReason::MaxEpochs, final_epoch: n };
    delta(&h, &contexts, threshold).map_err(value_err)
}

/// `(architecture, max relative error, passed)` for all six architectures.
#[pyfunction]
#[pyo3(signature = (examples=10, seed=0))]
fn gradcheck(examples: usize, seed: u64) -> PyResult<Vec<(String, f64, bool)>> {
    let suite = GradCheckSuite { examples, seed, ..GradCheckSuite::default() };
    let results = suite.run(&Corpus::standard()).map_err(value_err)?;
    Ok(results.iter().map(|r| (r.arch.label(), r.report.max_rel_error(), r.passed())).collect())
}

/// A trained checkpoint.
#[pyclass]
struct Model {
    inner: Checkpoint,
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Checkpoint::load(&path).map(|inner| Model { inner }).map_err(|e| PyIOError::new_err(e.to_string()))
    }

    /// Greedy decoding of a sentence into its predicted logical form.
    fn parse(&self, sentence: &str) -> PyResult<String> {
        let ids = self.inner.source_vocab().encode(&tokens(sentence), false).map_err(value_err)?;
        let m = &self.inner.model;
        let out = m.greedy_decode(&ids, m.config().max_decode_len).map_err(value_err)?;
        Ok(self.inner.target_vocab().decode(&out).map_err(value_err)?.join(" "))
    }

    #[getter]
    fn architecture(&self) -> String {
        self.inner.model.config().label()
    }
}

#[pymodule]
fn anaphora_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(interpret, m)?)?;
    m.add_function(wrap_pyfunction!(vocabularies, m)?)?;
    m.add_function(wrap_pyfunction!(split, m)?)?;
    m.add_function(wrap_pyfunction!(learning_delta, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_class::<Model>()?;
    Ok(())
}
