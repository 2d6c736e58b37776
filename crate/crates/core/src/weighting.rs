//! Voting weights learned from pre-evaluation reports.
//!
//! A model's weight for a class is its mean F1 (or EM rate) over the
//! pre-evaluation questions of that class; its global weight is the same
//! statistic over all questions. A class a model never saw during
//! pre-evaluation inherits the model's global weight.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{read_json, write_file, Error, Result};
use crate::metrics::{ClassStats, EvalReport};
use crate::taxonomy::{Category, QuestionClass};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricBasis {
    #[default]
    MeanF1,
    EmRate,
}

impl MetricBasis {
    fn pick(self, stats: &ClassStats) -> f64 {
        match self {
            MetricBasis::MeanF1 => stats.mean_f1,
            MetricBasis::EmRate => stats.em_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightTable {
    /// Model order; every tie is broken in favour of the earlier model.
    pub models: Vec<String>,
    pub metric_basis: MetricBasis,
    #[serde(rename = "global")]
    pub global_weights: BTreeMap<String, f64>,
    #[serde(rename = "classes")]
    pub class_weights: BTreeMap<Category, BTreeMap<String, f64>>,
    pub best_overall: String,
}

impl WeightTable {
    pub fn model_index(&self, model: &str) -> Option<usize> {
        self.models.iter().position(|m| m == model)
    }

    pub fn global_weight(&self, model: &str) -> Result<f64> {
        self.global_weights
            .get(model)
            .copied()
            .ok_or_else(|| Error::UnknownModel(model.to_string()))
    }

    /// Weight of `model` for `category`; categories absent from the table
    /// fall back to the global weight.
    pub fn class_weight(&self, model: &str, category: Category) -> Result<f64> {
        match self.class_weights.get(&category).and_then(|row| row.get(model)) {
            Some(&w) => Ok(w),
            None => self.global_weight(model),
        }
    }

    /// The model with the largest weight for `category` (first on ties).
    pub fn class_best(&self, category: Category) -> Result<&str> {
        let mut best: Option<(&str, f64)> = None;
        for model in &self.models {
            let w = self.class_weight(model, category)?;
            if best.is_none_or(|(_, bw)| w > bw) {
                best = Some((model, w));
            }
        }
        best.map(|(m, _)| m).ok_or(Error::NoModels)
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::NoModels);
        }
        let names: BTreeSet<&String> = self.models.iter().collect();
        if names.len() != self.models.len() {
            return Err(Error::Invalid("duplicate model name in weight table".into()));
        }
        if !names.contains(&self.best_overall) {
            return Err(Error::UnknownModel(self.best_overall.clone()));
        }
        let in_range = |w: f64| (0.0..=1.0).contains(&w);
        for model in &self.models {
            let w = self.global_weight(model)?;
            if !in_range(w) {
                return Err(Error::Invalid(format!("global weight {w} of `{model}` is outside [0, 1]")));
            }
        }
        for (category, row) in &self.class_weights {
            for (model, &w) in row {
                if !names.contains(model) {
                    return Err(Error::UnknownModel(model.clone()));
                }
                if !in_range(w) {
                    return Err(Error::Invalid(format!(
                        "weight {w} of `{model}` for `{category}` is outside [0, 1]"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("weight table serializes")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let table: WeightTable = serde_json::from_str(json).map_err(|e| Error::Schema {
            path: "<string>".into(),
            location: String::new(),
            message: e.to_string(),
        })?;
        table.validate()?;
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let table: WeightTable = read_json(path)?;
        table.validate()?;
        Ok(table)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_json())
    }
}

fn check_reports(reports: &[EvalReport]) -> Result<()> {
    let first = reports.first().ok_or(Error::NoModels)?;
    let mut names = BTreeSet::new();
    for report in reports {
        if !names.insert(report.model.as_str()) {
            return Err(Error::Invalid(format!("model `{}` given twice", report.model)));
        }
        if !report.per_question.keys().eq(first.per_question.keys()) {
            return Err(Error::IdSetMismatch {
                model: report.model.clone(),
                reference: first.model.clone(),
            });
        }
    }
    Ok(())
}

/// Categories every table row should carry: whatever the reports saw, plus
/// the full phrase taxonomy when they use phrase classes.
fn category_universe(reports: &[EvalReport]) -> BTreeSet<Category> {
    let mut universe: BTreeSet<Category> = reports
        .iter()
        .flat_map(|r| r.per_class.keys().copied())
        .collect();
    let phrase_based = universe.is_empty() || universe.iter().any(|c| matches!(c, Category::Phrase(_)));
    if phrase_based {
        universe.extend(QuestionClass::ALL.map(Category::Phrase));
    }
    universe
}

fn global_table(reports: &[EvalReport], basis: MetricBasis) -> Result<WeightTable> {
    check_reports(reports)?;
    let models: Vec<String> = reports.iter().map(|r| r.model.clone()).collect();
    let global_weights: BTreeMap<String, f64> = reports
        .iter()
        .map(|r| (r.model.clone(), basis.pick(&r.overall)))
        .collect();
    let mut best = &models[0];
    for model in &models[1..] {
        if global_weights[model] > global_weights[best] {
            best = model;
        }
    }
    Ok(WeightTable {
        best_overall: best.clone(),
        models,
        metric_basis: basis,
        global_weights,
        class_weights: BTreeMap::new(),
    })
}

/// Per-class weights (class-aware voting).
pub fn compute_class_weights(reports: &[EvalReport], basis: MetricBasis) -> Result<WeightTable> {
    let mut table = global_table(reports, basis)?;
    for category in category_universe(reports) {
        let row = reports
            .iter()
            .map(|r| {
                let w = match r.per_class.get(&category) {
                    Some(stats) if stats.count > 0 => basis.pick(stats),
                    _ => table.global_weights[&r.model],
                };
                (r.model.clone(), w)
            })
            .collect();
        table.class_weights.insert(category, row);
    }
    Ok(table)
}

/// One weight per model, replicated into every class slot (class-blind voting).
pub fn compute_global_weights(reports: &[EvalReport], basis: MetricBasis) -> Result<WeightTable> {
    let mut table = global_table(reports, basis)?;
    for category in category_universe(reports) {
        table.class_weights.insert(category, table.global_weights.clone());
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::QuestionScore;
    use proptest::prelude::*;

    fn report(model: &str, scores: &[(&str, QuestionClass, f64, bool)]) -> EvalReport {
        EvalReport::from_scores(
            model,
            scores.iter().map(|&(id, class, f1, em)| QuestionScore {
                id: id.into(),
                category: class.into(),
                f1,
                em,
            }),
        )
    }

    const WHAT: QuestionClass = QuestionClass::What;
    const WHO: QuestionClass = QuestionClass::Who;

    #[test]
    fn class_weight_is_class_mean() {
        let r = report("m", &[("a", WHAT, 0.5, false), ("b", WHAT, 1.0, true), ("c", WHO, 0.0, false)]);
        let t = compute_class_weights(&[r], MetricBasis::MeanF1).unwrap();
        assert_eq!(t.class_weight("m", WHAT.into()).unwrap(), 0.75);
        assert_eq!(t.class_weight("m", WHO.into()).unwrap(), 0.0);
        assert_eq!(t.global_weight("m").unwrap(), 0.5);
        // empty class inherits the global weight
        assert_eq!(t.class_weight("m", QuestionClass::Why.into()).unwrap(), 0.5);
        assert_eq!(t.class_weights.len(), 14);
        assert!(t.class_weights.values().all(|row| row.len() == 1));
    }

    #[test]
    fn em_basis_uses_rate_of_trues() {
        let r = report(
            "m",
            &[("a", WHO, 1.0, true), ("b", WHO, 0.2, false), ("c", WHO, 0.4, false), ("d", WHO, 1.0, true)],
        );
        let t = compute_class_weights(&[r], MetricBasis::EmRate).unwrap();
        assert_eq!(t.class_weight("m", WHO.into()).unwrap(), 0.5);
        assert_eq!(t.metric_basis, MetricBasis::EmRate);
    }

    #[test]
    fn class_specialist_gets_the_class_vote() {
        let a = report("a", &[("1", QuestionClass::Date, 0.2, false), ("2", WHAT, 1.0, true)]);
        let b = report("b", &[("1", QuestionClass::Date, 0.9, false), ("2", WHAT, 0.1, false)]);
        let t = compute_class_weights(&[a, b], MetricBasis::MeanF1).unwrap();
        assert_eq!(t.class_best(QuestionClass::Date.into()).unwrap(), "b");
        assert_eq!(t.class_best(WHAT.into()).unwrap(), "a");
        assert_eq!(t.best_overall, "a");
    }

    #[test]
    fn global_weights_fill_every_class() {
        let r = report("m", &[("a", WHAT, 1.0, true), ("b", WHO, 0.0, false)]);
        let t = compute_global_weights(&[r], MetricBasis::MeanF1).unwrap();
        for row in t.class_weights.values() {
            assert_eq!(row["m"], 0.5);
        }
    }

    #[test]
    fn best_overall_is_argmax_with_first_on_ties() {
        let hi = report("hi", &[("a", WHAT, 0.8, false)]);
        let lo = report("lo", &[("a", WHAT, 0.7, false)]);
        assert_eq!(compute_global_weights(&[hi.clone(), lo.clone()], MetricBasis::MeanF1).unwrap().best_overall, "hi");
        assert_eq!(compute_global_weights(&[lo, hi], MetricBasis::MeanF1).unwrap().best_overall, "hi");

        let x = report("x", &[("a", WHAT, 0.5, false)]);
        let y = report("y", &[("a", WHAT, 0.5, false)]);
        assert_eq!(compute_global_weights(&[x.clone(), y.clone()], MetricBasis::MeanF1).unwrap().best_overall, "x");
        assert_eq!(compute_global_weights(&[y, x], MetricBasis::MeanF1).unwrap().best_overall, "y");
    }

    #[test]
    fn errors() {
        assert!(matches!(compute_class_weights(&[], MetricBasis::MeanF1), Err(Error::NoModels)));
        let a = report("a", &[("1", WHAT, 1.0, true)]);
        let b = report("b", &[("2", WHAT, 1.0, true)]);
        assert!(matches!(
            compute_class_weights(&[a.clone(), b], MetricBasis::MeanF1),
            Err(Error::IdSetMismatch { .. })
        ));
        assert!(compute_class_weights(&[a.clone(), a], MetricBasis::MeanF1).is_err());
    }

    #[test]
    fn validation_rejects_out_of_range_weights() {
        let r = report("m", &[("a", WHAT, 1.0, true)]);
        let mut t = compute_class_weights(&[r], MetricBasis::MeanF1).unwrap();
        t.global_weights.insert("m".into(), 1.5);
        assert!(WeightTable::from_json(&t.to_json()).is_err());
    }

    fn arb_reports() -> impl Strategy<Value = Vec<EvalReport>> {
        (1usize..4, 1usize..12).prop_flat_map(|(models, questions)| {
            proptest::collection::vec(
                proptest::collection::vec((0usize..14, 0u32..=8), questions),
                models,
            )
            .prop_map(move |per_model| {
                per_model
                    .into_iter()
                    .enumerate()
                    .map(|(m, qs)| {
                        EvalReport::from_scores(
                            format!("m{m}"),
                            qs.into_iter().enumerate().map(|(i, (c, f))| QuestionScore {
                                id: format!("q{i}"),
                                category: QuestionClass::ALL[(c + i) % 14].into(),
                                f1: f as f64 / 8.0,
                                em: f == 8,
                            }),
                        )
                    })
                    .collect()
            })
        })
    }

    proptest! {
        #[test]
        fn weights_are_bounded_and_round_trip(reports in arb_reports(), em_basis in any::<bool>()) {
            let basis = if em_basis { MetricBasis::EmRate } else { MetricBasis::MeanF1 };
            for table in [compute_class_weights(&reports, basis).unwrap(), compute_global_weights(&reports, basis).unwrap()] {
                for row in table.class_weights.values() {
                    prop_assert_eq!(row.len(), reports.len());
                    prop_assert!(row.values().all(|w| (0.0..=1.0).contains(w)));
                }
                let back = WeightTable::from_json(&table.to_json()).unwrap();
                prop_assert_eq!(back, table);
            }
        }

        #[test]
        fn permuting_report_entries_keeps_weights(reports in arb_reports(), rot in 0usize..12) {
            let rotated: Vec<EvalReport> = reports
                .iter()
                .map(|r| {
                    let mut scores: Vec<QuestionScore> = r.per_question.values().cloned().collect();
                    let k = rot % scores.len();
                    scores.rotate_left(k);
                    scores.reverse();
                    EvalReport::from_scores(r.model.clone(), scores)
                })
                .collect();
            prop_assert_eq!(
                compute_class_weights(&reports, MetricBasis::MeanF1).unwrap(),
                compute_class_weights(&rotated, MetricBasis::MeanF1).unwrap()
            );
        }
    }
}
