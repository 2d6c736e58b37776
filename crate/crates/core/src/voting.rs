//! Weighted answer voting.
//!
//! Every model contributes one candidate answer carrying its weight for the
//! question's class. Candidates with the same answer form a group whose
//! weight is the sum (or max) of its members' weights and the heaviest group
//! wins. When no two candidates agree, the candidate of the class's
//! highest-weighted model is returned. Questions of the `undefined` class are
//! answered by the overall best model unless that special case is disabled.
//!
//! All ties go to the model listed first in the weight table.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, PredictionSet};
use crate::error::{Error, Result};
use crate::metrics::normalize_answer;
use crate::taxonomy::{Category, Classifier};
use crate::weighting::WeightTable;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteMode {
    #[default]
    ClassAware,
    Global,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combine {
    #[default]
    Sum,
    Max,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DuplicateEquality {
    Raw,
    #[default]
    Normalized,
}

/// Who answers when no two candidates agree.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoDuplicateFallback {
    /// The highest-weighted model for the question's class.
    #[default]
    ClassBest,
    /// The overall best model, regardless of class.
    OverallBest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteConfig {
    pub mode: VoteMode,
    pub combine: Combine,
    pub undefined_special_case: bool,
    pub duplicate_equality: DuplicateEquality,
    #[serde(default)]
    pub no_duplicate_fallback: NoDuplicateFallback,
}

impl Default for VoteConfig {
    fn default() -> Self {
        Self {
            mode: VoteMode::ClassAware,
            combine: Combine::Sum,
            undefined_special_case: true,
            duplicate_equality: DuplicateEquality::Normalized,
            no_duplicate_fallback: NoDuplicateFallback::ClassBest,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub model: String,
    pub answer: String,
    pub weight: f64,
}

impl Candidate {
    /// A candidate weighted by the table entry `mode` selects.
    pub fn weighted(
        model: impl Into<String>,
        answer: impl Into<String>,
        category: Category,
        table: &WeightTable,
        mode: VoteMode,
    ) -> Result<Self> {
        let model = model.into();
        let weight = match mode {
            VoteMode::ClassAware => table.class_weight(&model, category)?,
            VoteMode::Global => table.global_weight(&model)?,
        };
        Ok(Self {
            model,
            answer: answer.into(),
            weight,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteReason {
    MergedDuplicates,
    HighestWeightNoDuplicates,
    UndefinedFallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerGroup {
    /// Answer text of the group's first member.
    pub answer: String,
    pub members: Vec<String>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteTrace {
    /// Question id; empty when produced by a bare [`vote`] call.
    pub id: String,
    pub category: Category,
    pub candidates: Vec<Candidate>,
    pub groups: Vec<AnswerGroup>,
    pub winner: String,
    pub winner_model: String,
    pub reason: VoteReason,
}

fn answer_key(answer: &str, equality: DuplicateEquality) -> String {
    match equality {
        DuplicateEquality::Raw => answer.to_string(),
        DuplicateEquality::Normalized => normalize_answer(answer).join(" "),
    }
}

/// Groups candidates (already in table order) by answer, in order of first
/// appearance.
fn group_candidates(candidates: &[Candidate], config: &VoteConfig) -> Vec<AnswerGroup> {
    let mut keys: Vec<String> = Vec::new();
    let mut groups: Vec<AnswerGroup> = Vec::new();
    for c in candidates {
        let key = answer_key(&c.answer, config.duplicate_equality);
        match keys.iter().position(|k| *k == key) {
            Some(g) => {
                let group = &mut groups[g];
                group.members.push(c.model.clone());
                group.weight = match config.combine {
                    Combine::Sum => group.weight + c.weight,
                    Combine::Max => group.weight.max(c.weight),
                };
            }
            None => {
                keys.push(key);
                groups.push(AnswerGroup {
                    answer: c.answer.clone(),
                    members: vec![c.model.clone()],
                    weight: c.weight,
                });
            }
        }
    }
    groups
}

/// First index holding the strictly largest value.
fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.into_iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

pub fn vote(
    candidates: &[Candidate],
    category: Category,
    table: &WeightTable,
    config: &VoteConfig,
) -> Result<VoteTrace> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let mut ordered = Vec::with_capacity(candidates.len());
    for c in candidates {
        let idx = table
            .model_index(&c.model)
            .ok_or_else(|| Error::UnknownModel(c.model.clone()))?;
        ordered.push((idx, c.clone()));
    }
    ordered.sort_by_key(|(idx, _)| *idx);
    let candidates: Vec<Candidate> = ordered.into_iter().map(|(_, c)| c).collect();

    let groups = group_candidates(&candidates, config);
    let pick_model = |model: &str| {
        candidates
            .iter()
            .find(|c| c.model == model)
            .ok_or_else(|| Error::Invalid(format!("no candidate from `{model}`")))
    };

    let (winner, reason) = if config.mode == VoteMode::ClassAware
        && config.undefined_special_case
        && category.is_undefined()
    {
        (pick_model(&table.best_overall)?, VoteReason::UndefinedFallback)
    } else if groups.iter().any(|g| g.members.len() >= 2) {
        let g = argmax(groups.iter().map(|g| g.weight));
        (pick_model(&groups[g].members[0])?, VoteReason::MergedDuplicates)
    } else {
        let winner = match config.no_duplicate_fallback {
            NoDuplicateFallback::ClassBest => &candidates[argmax(candidates.iter().map(|c| c.weight))],
            NoDuplicateFallback::OverallBest => pick_model(&table.best_overall)?,
        };
        (winner, VoteReason::HighestWeightNoDuplicates)
    };

    Ok(VoteTrace {
        id: String::new(),
        category,
        winner: winner.answer.clone(),
        winner_model: winner.model.clone(),
        reason,
        groups,
        candidates,
    })
}

/// Class-blind voting: each model votes with its global weight and there is
/// no special handling of any class.
pub fn vote_unclassed(
    answers: &[(&str, &str)],
    table: &WeightTable,
    combine: Combine,
    duplicate_equality: DuplicateEquality,
) -> Result<VoteTrace> {
    let candidates = answers
        .iter()
        .map(|&(model, answer)| {
            Ok(Candidate {
                model: model.to_string(),
                answer: answer.to_string(),
                weight: table.global_weight(model)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let config = VoteConfig {
        mode: VoteMode::Global,
        combine,
        undefined_special_case: false,
        duplicate_equality,
        no_duplicate_fallback: NoDuplicateFallback::ClassBest,
    };
    vote(&candidates, Category::Phrase(crate::taxonomy::QuestionClass::Undefined), table, &config)
}

/// Runs the vote over every dataset question. A model without an answer for
/// a question contributes an empty-string candidate.
pub fn run_ensemble(
    dataset: &Dataset,
    predictions: &[PredictionSet],
    table: &WeightTable,
    classifier: &Classifier,
    config: &VoteConfig,
) -> Result<(PredictionSet, Vec<VoteTrace>)> {
    let given: BTreeSet<&str> = predictions.iter().map(|p| p.model_name.as_str()).collect();
    let expected: BTreeSet<&str> = table.models.iter().map(String::as_str).collect();
    if given != expected || given.len() != predictions.len() {
        return Err(Error::ModelSetMismatch(format!(
            "predictions for {:?}, weights for {:?}",
            predictions.iter().map(|p| &p.model_name).collect::<Vec<_>>(),
            table.models
        )));
    }
    let ordered: Vec<&PredictionSet> = table
        .models
        .iter()
        .map(|m| predictions.iter().find(|p| &p.model_name == m).expect("checked above"))
        .collect();

    let traces = dataset
        .items()
        .par_iter()
        .map(|item| {
            let category = classifier.categorize(&item.question);
            let candidates = ordered
                .iter()
                .map(|p| {
                    Candidate::weighted(
                        p.model_name.as_str(),
                        p.get(&item.id).unwrap_or(""),
                        category,
                        table,
                        config.mode,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            let mut trace = vote(&candidates, category, table, config)?;
            trace.id = item.id.clone();
            Ok(trace)
        })
        .collect::<Result<Vec<_>>>()?;

    let answers = traces.iter().map(|t| (t.id.clone(), t.winner.clone())).collect();
    Ok((PredictionSet::new("ensemble", answers), traces))
}

pub fn traces_to_jsonl(traces: &[VoteTrace]) -> String {
    let mut out = String::new();
    for trace in traces {
        out.push_str(&serde_json::to_string(trace).expect("trace serializes"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::QuestionClass;
    use crate::weighting::MetricBasis;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn table(weights: &[(&str, f64)], best: &str) -> WeightTable {
        let global: BTreeMap<String, f64> = weights.iter().map(|&(m, w)| (m.to_string(), w)).collect();
        WeightTable {
            models: weights.iter().map(|(m, _)| m.to_string()).collect(),
            metric_basis: MetricBasis::MeanF1,
            class_weights: QuestionClass::ALL
                .into_iter()
                .map(|c| (Category::Phrase(c), global.clone()))
                .collect(),
            global_weights: global,
            best_overall: best.to_string(),
        }
    }

    fn cands(t: &WeightTable, answers: &[(&str, &str)], cat: QuestionClass) -> Vec<Candidate> {
        answers
            .iter()
            .map(|&(m, a)| Candidate::weighted(m, a, cat.into(), t, VoteMode::ClassAware).unwrap())
            .collect()
    }

    const W: QuestionClass = QuestionClass::What;

    #[test]
    fn distinct_answers_pick_heaviest_model() {
        let t = table(&[("A", 0.8), ("B", 0.7), ("C", 0.6)], "A");
        let c = cands(&t, &[("A", "x"), ("B", "y"), ("C", "z")], W);
        let trace = vote(&c, W.into(), &t, &VoteConfig::default()).unwrap();
        assert_eq!(trace.winner, "x");
        assert_eq!(trace.reason, VoteReason::HighestWeightNoDuplicates);
    }

    #[test]
    fn sum_lets_two_weaker_models_outvote_one() {
        let t = table(&[("A", 0.8), ("B", 0.7), ("C", 0.6)], "A");
        let c = cands(&t, &[("A", "x"), ("B", "y"), ("C", "y")], W);
        let sum = vote(&c, W.into(), &t, &VoteConfig::default()).unwrap();
        assert_eq!(sum.winner, "y");
        assert_eq!(sum.reason, VoteReason::MergedDuplicates);
        assert!((sum.groups[1].weight - 1.3).abs() < 1e-12);

        let max = VoteConfig { combine: Combine::Max, ..VoteConfig::default() };
        assert_eq!(vote(&c, W.into(), &t, &max).unwrap().winner, "x");
    }

    #[test]
    fn undefined_goes_to_best_overall() {
        let t = table(&[("A", 0.8), ("B", 0.7), ("C", 0.6)], "A");
        let u = QuestionClass::Undefined;
        let c = cands(&t, &[("A", "x"), ("B", "y"), ("C", "y")], u);
        let trace = vote(&c, u.into(), &t, &VoteConfig::default()).unwrap();
        assert_eq!(trace.winner, "x");
        assert_eq!(trace.reason, VoteReason::UndefinedFallback);

        let off = VoteConfig { undefined_special_case: false, ..VoteConfig::default() };
        assert_eq!(vote(&c, u.into(), &t, &off).unwrap().winner, "y");
    }

    #[test]
    fn normalized_equality_merges_surface_variants() {
        let t = table(&[("A", 0.8), ("B", 0.5), ("C", 0.4)], "A");
        let c = cands(&t, &[("A", "x"), ("B", "The Broncos"), ("C", "broncos.")], W);
        assert_eq!(vote(&c, W.into(), &t, &VoteConfig::default()).unwrap().winner, "The Broncos");
        let raw = VoteConfig { duplicate_equality: DuplicateEquality::Raw, ..VoteConfig::default() };
        assert_eq!(vote(&c, W.into(), &t, &raw).unwrap().winner, "x");
    }

    #[test]
    fn ties_go_to_earlier_model() {
        let t = table(&[("A", 0.5), ("B", 0.5)], "A");
        let c = cands(&t, &[("B", "b"), ("A", "a")], W);
        assert_eq!(vote(&c, W.into(), &t, &VoteConfig::default()).unwrap().winner, "a");
    }

    #[test]
    fn overall_best_fallback_variant() {
        let mut t = table(&[("A", 0.8), ("B", 0.7)], "A");
        t.class_weights.get_mut(&Category::Phrase(W)).unwrap().insert("B".into(), 0.9);
        let c = cands(&t, &[("A", "a"), ("B", "b")], W);
        assert_eq!(vote(&c, W.into(), &t, &VoteConfig::default()).unwrap().winner, "b");
        let alt = VoteConfig { no_duplicate_fallback: NoDuplicateFallback::OverallBest, ..VoteConfig::default() };
        assert_eq!(vote(&c, W.into(), &t, &alt).unwrap().winner, "a");
    }

    #[test]
    fn errors() {
        let t = table(&[("A", 0.5)], "A");
        assert!(matches!(vote(&[], W.into(), &t, &VoteConfig::default()), Err(Error::EmptyCandidates)));
        let stranger = Candidate { model: "Z".into(), answer: "z".into(), weight: 1.0 };
        assert!(matches!(vote(&[stranger], W.into(), &t, &VoteConfig::default()), Err(Error::UnknownModel(_))));
        assert!(Candidate::weighted("Z", "z", W.into(), &t, VoteMode::ClassAware).is_err());
    }

    fn configs() -> Vec<VoteConfig> {
        let mut out = Vec::new();
        for mode in [VoteMode::ClassAware, VoteMode::Global] {
            for combine in [Combine::Sum, Combine::Max] {
                for undefined_special_case in [true, false] {
                    for duplicate_equality in [DuplicateEquality::Raw, DuplicateEquality::Normalized] {
                        out.push(VoteConfig {
                            mode,
                            combine,
                            undefined_special_case,
                            duplicate_equality,
                            no_duplicate_fallback: NoDuplicateFallback::ClassBest,
                        });
                    }
                }
            }
        }
        out
    }

    proptest! {
        #[test]
        fn winner_is_a_candidate_and_scaling_is_harmless(
            answers in proptest::collection::vec(0usize..4, 1..5),
            weights in proptest::collection::vec(1u32..64, 4),
            scale in 1u32..9,
            class in 0usize..14,
        ) {
            let alphabet = ["alpha", "beta", "The alpha", "gamma"];
            let names = ["m0", "m1", "m2", "m3"];
            let base: Vec<(&str, f64)> = (0..answers.len()).map(|i| (names[i], weights[i] as f64 / 64.0)).collect();
            let scaled: Vec<(&str, f64)> = base.iter().map(|&(m, w)| (m, w * scale as f64 / 8.0)).collect();
            let cat = QuestionClass::ALL[class];
            let t1 = table(&base, "m0");
            let t2 = table(&scaled, "m0");
            let pairs: Vec<(&str, &str)> = answers.iter().enumerate().map(|(i, &a)| (names[i], alphabet[a])).collect();
            for config in configs() {
                let a = vote(&cands(&t1, &pairs, cat), cat.into(), &t1, &config).unwrap();
                let b = vote(&cands(&t2, &pairs, cat), cat.into(), &t2, &config).unwrap();
                prop_assert!(pairs.iter().any(|(_, ans)| *ans == a.winner));
                prop_assert_eq!(&a.winner_model, &b.winner_model);
            }
        }

        #[test]
        fn unanimous_votes_return_the_shared_answer(n in 1usize..5, class in 0usize..14) {
            let names = ["m0", "m1", "m2", "m3"];
            let weights: Vec<(&str, f64)> = (0..n).map(|i| (names[i], 0.1 * (i + 1) as f64)).collect();
            let t = table(&weights, names[n - 1]);
            let cat = QuestionClass::ALL[class];
            let pairs: Vec<(&str, &str)> = (0..n).map(|i| (names[i], "same")).collect();
            for config in configs() {
                prop_assert_eq!(vote(&cands(&t, &pairs, cat), cat.into(), &t, &config).unwrap().winner, "same");
            }
        }
    }
}
