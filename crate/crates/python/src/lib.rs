//! Python bindings. Reports and traces come back as plain dicts; datasets,
//! prediction sets and weight tables are opaque handles.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyFileNotFoundError, PyValueError};
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

use qa_ensemble as core;
use qa_ensemble::synth::{AccuracyProfile, CorpusSpec};
use qa_ensemble::taxonomy::LengthBuckets;
use qa_ensemble::voting::NoDuplicateFallback;
use qa_ensemble::{Category, ClassRuleSet, Classifier, QuestionClass, VoteConfig};

fn to_py(err: core::Error) -> PyErr {
    if err.is_missing_input() {
        PyFileNotFoundError::new_err(err.to_string())
    } else {
        PyValueError::new_err(err.to_string())
    }
}

/// Parses a snake_case option name into one of the core config enums.
fn option<T: DeserializeOwned>(what: &str, value: &str) -> PyResult<T> {
    serde_json::from_value(serde_json::Value::String(value.to_string()))
        .map_err(|_| PyValueError::new_err(format!("unknown {what} `{value}`")))
}

fn to_dict<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn rule_set(rules: Option<PathBuf>) -> PyResult<ClassRuleSet> {
    match rules {
        Some(path) => ClassRuleSet::load(&path).map_err(to_py),
        None => Ok(ClassRuleSet::default()),
    }
}

/// `"phrase"` or `"length:5,10,..."`.
fn classifier(spec: &str, rules: Option<PathBuf>) -> PyResult<Classifier> {
    if spec == "phrase" {
        return Ok(Classifier::Phrase(rule_set(rules)?));
    }
    let edges = spec
        .strip_prefix("length:")
        .ok_or_else(|| PyValueError::new_err(format!("unknown classifier `{spec}`")))?
        .split(',')
        .map(|e| e.trim().parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| PyValueError::new_err(format!("bad length edges in `{spec}`: {e}")))?;
    Ok(Classifier::Length(LengthBuckets::new(edges).map_err(to_py)?))
}

#[pyclass(module = "qa_ensemble_py", frozen)]
pub struct Dataset(core::Dataset);

#[pymethods]
impl Dataset {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        core::Dataset::load(&path).map(Self).map_err(to_py)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let file = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        core::Dataset::from_squad(file, "<python>").map(Self).map_err(to_py)
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.0.to_squad()).expect("dataset serializes")
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(&path).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn ids(&self) -> Vec<String> {
        self.0.ids().map(str::to_string).collect()
    }

    fn question(&self, id: &str) -> Option<String> {
        self.0.get(id).map(|i| i.question.clone())
    }

    fn gold_answers(&self, id: &str) -> Option<Vec<String>> {
        self.0.get(id).map(|i| i.gold_answers.clone())
    }

    #[pyo3(signature = (rules=None))]
    fn class_distribution<'py>(&self, py: Python<'py>, rules: Option<PathBuf>) -> PyResult<Bound<'py, PyAny>> {
        to_dict(py, &core::class_distribution(&self.0, &rule_set(rules)?))
    }
}

#[pyclass(module = "qa_ensemble_py", frozen)]
pub struct PredictionSet(core::PredictionSet);

#[pymethods]
impl PredictionSet {
    #[new]
    fn new(name: String, answers: BTreeMap<String, String>) -> Self {
        Self(core::PredictionSet::new(name, answers))
    }

    #[staticmethod]
    fn load(path: PathBuf, name: &str) -> PyResult<Self> {
        core::load_predictions(&path, name).map(Self).map_err(to_py)
    }

    #[getter]
    fn name(&self) -> String {
        self.0.model_name.clone()
    }

    fn answers(&self) -> BTreeMap<String, String> {
        self.0.answers.clone()
    }

    fn get(&self, id: &str) -> Option<String> {
        self.0.get(id).map(str::to_string)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(&path).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

#[pyclass(module = "qa_ensemble_py", frozen)]
pub struct WeightTable(core::WeightTable);

#[pymethods]
impl WeightTable {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        core::WeightTable::from_json(text).map(Self).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        core::WeightTable::load(&path).map(Self).map_err(to_py)
    }

    fn to_json(&self) -> String {
        self.0.to_json()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(&path).map_err(to_py)
    }

    #[getter]
    fn models(&self) -> Vec<String> {
        self.0.models.clone()
    }

    #[getter]
    fn best_overall(&self) -> String {
        self.0.best_overall.clone()
    }

    fn global_weight(&self, model: &str) -> PyResult<f64> {
        self.0.global_weight(model).map_err(to_py)
    }

    fn class_weight(&self, model: &str, category: &str) -> PyResult<f64> {
        let category: Category = category.parse().map_err(to_py)?;
        self.0.class_weight(model, category).map_err(to_py)
    }
}

#[pyfunction]
fn normalize_answer(text: &str) -> Vec<String> {
    core::normalize_answer(text)
}

#[pyfunction]
fn em(prediction: &str, golds: Vec<String>) -> PyResult<bool> {
    core::em(prediction, &golds).map_err(to_py)
}

#[pyfunction]
fn token_f1(prediction: &str, golds: Vec<String>) -> PyResult<f64> {
    core::token_f1(prediction, &golds).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (question, rules=None))]
fn classify(question: &str, rules: Option<PathBuf>) -> PyResult<String> {
    Ok(rule_set(rules)?.classify(question).key().to_string())
}

#[pyfunction]
fn classify_by_length(question: &str, edges: Vec<usize>) -> PyResult<usize> {
    core::classify_by_length(question, &edges).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (predictions, dataset, classifier="phrase", missing="score_as_empty", rules=None))]
fn evaluate<'py>(
    py: Python<'py>,
    predictions: &PredictionSet,
    dataset: &Dataset,
    classifier: &str,
    missing: &str,
    rules: Option<PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    let c = self::classifier(classifier, rules)?;
    let report = core::evaluate(&predictions.0, &dataset.0, &c, option("missing policy", missing)?);
    to_dict(py, &report)
}

/// Evaluates every prediction set on `pre_eval` and derives voting weights.
#[pyfunction]
#[pyo3(signature = (pre_eval, predictions, basis="mean_f1", per_class=true, classifier="phrase", missing="score_as_empty", rules=None))]
fn compute_weights(
    pre_eval: &Dataset,
    predictions: Vec<PyRef<'_, PredictionSet>>,
    basis: &str,
    per_class: bool,
    classifier: &str,
    missing: &str,
    rules: Option<PathBuf>,
) -> PyResult<WeightTable> {
    let c = self::classifier(classifier, rules)?;
    let missing = option("missing policy", missing)?;
    let reports: Vec<_> = predictions
        .iter()
        .map(|p| core::evaluate(&p.0, &pre_eval.0, &c, missing))
        .collect();
    let basis = option("metric basis", basis)?;
    let table = if per_class {
        core::compute_class_weights(&reports, basis)
    } else {
        core::compute_global_weights(&reports, basis)
    };
    table.map(WeightTable).map_err(to_py)
}

fn vote_config(
    mode: &str,
    combine: &str,
    undefined_special_case: bool,
    duplicate_equality: &str,
    no_duplicate_fallback: &str,
) -> PyResult<VoteConfig> {
    Ok(VoteConfig {
        mode: option("vote mode", mode)?,
        combine: option("combine rule", combine)?,
        undefined_special_case,
        duplicate_equality: option("duplicate equality", duplicate_equality)?,
        no_duplicate_fallback: option::<NoDuplicateFallback>("fallback", no_duplicate_fallback)?,
    })
}

/// Votes on one question. `candidates` is a list of `(model, answer)` pairs.
#[pyfunction]
#[pyo3(signature = (
    candidates, category, table, mode="class_aware", combine="sum", undefined_special_case=true,
    duplicate_equality="normalized", no_duplicate_fallback="class_best"
))]
#[allow(clippy::too_many_arguments)]
fn vote<'py>(
    py: Python<'py>,
    candidates: Vec<(String, String)>,
    category: &str,
    table: &WeightTable,
    mode: &str,
    combine: &str,
    undefined_special_case: bool,
    duplicate_equality: &str,
    no_duplicate_fallback: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let config = vote_config(mode, combine, undefined_special_case, duplicate_equality, no_duplicate_fallback)?;
    let category: Category = category.parse().map_err(to_py)?;
    let weighted = candidates
        .into_iter()
        .map(|(model, answer)| core::Candidate::weighted(model, answer, category, &table.0, config.mode))
        .collect::<core::Result<Vec<_>>>()
        .map_err(to_py)?;
    let trace = core::vote(&weighted, category, &table.0, &config).map_err(to_py)?;
    to_dict(py, &trace)
}

/// Returns the ensemble prediction set and the per-question vote traces.
#[pyfunction]
#[pyo3(signature = (
    dataset, predictions, table, classifier="phrase", mode="class_aware", combine="sum",
    undefined_special_case=true, duplicate_equality="normalized", no_duplicate_fallback="class_best", rules=None
))]
#[allow(clippy::too_many_arguments)]
fn run_ensemble<'py>(
    py: Python<'py>,
    dataset: &Dataset,
    predictions: Vec<PyRef<'_, PredictionSet>>,
    table: &WeightTable,
    classifier: &str,
    mode: &str,
    combine: &str,
    undefined_special_case: bool,
    duplicate_equality: &str,
    no_duplicate_fallback: &str,
    rules: Option<PathBuf>,
) -> PyResult<(PredictionSet, Bound<'py, PyAny>)> {
    let config = vote_config(mode, combine, undefined_special_case, duplicate_equality, no_duplicate_fallback)?;
    let c = self::classifier(classifier, rules)?;
    let sets: Vec<core::PredictionSet> = predictions.iter().map(|p| p.0.clone()).collect();
    let (ensemble, traces) = core::run_ensemble(&dataset.0, &sets, &table.0, &c, &config).map_err(to_py)?;
    Ok((PredictionSet(ensemble), to_dict(py, &traces)?))
}

#[pyfunction]
#[pyo3(signature = (a, b, dataset, classifier="phrase", missing="score_as_empty", rules=None))]
fn pairwise_similarity<'py>(
    py: Python<'py>,
    a: &PredictionSet,
    b: &PredictionSet,
    dataset: &Dataset,
    classifier: &str,
    missing: &str,
    rules: Option<PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    let c = self::classifier(classifier, rules)?;
    let report = core::pairwise_similarity(&a.0, &b.0, &dataset.0, &c, option("missing policy", missing)?);
    to_dict(py, &report)
}

/// Returns `(train, pre_eval)`.
#[pyfunction]
#[pyo3(signature = (dataset, fraction, seed, granularity="question"))]
fn split(dataset: &Dataset, fraction: f64, seed: u64, granularity: &str) -> PyResult<(Dataset, Dataset)> {
    let result = core::split_pre_eval(&dataset.0, fraction, seed, option("granularity", granularity)?).map_err(to_py)?;
    Ok((Dataset(result.train), Dataset(result.pre_eval)))
}

/// Template corpus with `per_class` questions of every class.
#[pyfunction]
fn synth_corpus(per_class: usize, seed: u64) -> Dataset {
    let spec = CorpusSpec::new(QuestionClass::ALL.map(|c| (c, per_class)), seed);
    Dataset(core::synth::generate_dataset(&spec))
}

/// `profile` uses the same JSON layout as the CLI's profile files.
#[pyfunction]
#[pyo3(signature = (dataset, profile, name, rules=None))]
fn synth_predictions(dataset: &Dataset, profile: &str, name: &str, rules: Option<PathBuf>) -> PyResult<PredictionSet> {
    let profile: AccuracyProfile = serde_json::from_str(profile).map_err(|e| PyValueError::new_err(e.to_string()))?;
    profile.validate().map_err(to_py)?;
    let out = core::synth::generate_predictions(&dataset.0, &profile, name, &rule_set(rules)?).map_err(to_py)?;
    Ok(PredictionSet(out.predictions))
}

#[pymodule]
pub fn qa_ensemble_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_class::<PredictionSet>()?;
    m.add_class::<WeightTable>()?;
    m.add_function(wrap_pyfunction!(normalize_answer, m)?)?;
    m.add_function(wrap_pyfunction!(em, m)?)?;
    m.add_function(wrap_pyfunction!(token_f1, m)?)?;
    m.add_function(wrap_pyfunction!(classify, m)?)?;
    m.add_function(wrap_pyfunction!(classify_by_length, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(compute_weights, m)?)?;
    m.add_function(wrap_pyfunction!(vote, m)?)?;
    m.add_function(wrap_pyfunction!(run_ensemble, m)?)?;
    m.add_function(wrap_pyfunction!(pairwise_similarity, m)?)?;
    m.add_function(wrap_pyfunction!(split, m)?)?;
    m.add_function(wrap_pyfunction!(synth_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(synth_predictions, m)?)?;
    Ok(())
}
