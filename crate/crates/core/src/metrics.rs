//! SQuAD-style answer scoring.
//!
//! Normalization lowercases, deletes punctuation, blanks out the articles
//! `a`/`an`/`the` and splits on whitespace. The punctuation set is every
//! Unicode `P*` code point plus the ASCII punctuation table of the reference
//! scorer (which also contains symbols such as `$`, `+`, `<`, `|`), so ASCII
//! input behaves exactly like the reference scorer.
//!
//! Token F1 of two empty token lists is 1.

use std::collections::{BTreeMap, HashMap};
use std::sync::LazyLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, PredictionSet, QaItem};
use crate::error::{Error, Result};
use crate::taxonomy::{Category, Classifier};

static PUNCTUATION: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r##"[\p{P}!"#$%&'()*+,\-./:;<=>?@\[\\\]^_`{|}~]"##).expect("valid regex")
});

static ARTICLES: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\b(a|an|the)\b").expect("valid regex"));

pub fn normalize_answer(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let no_punct = PUNCTUATION.replace_all(&lower, "");
    let no_articles = ARTICLES.replace_all(&no_punct, " ");
    no_articles.split_whitespace().map(str::to_owned).collect()
}

fn f1_tokens(pred: &[String], gold: &[String]) -> f64 {
    if pred.is_empty() && gold.is_empty() {
        return 1.0;
    }
    let mut gold_counts: HashMap<&str, usize> = HashMap::new();
    for tok in gold {
        *gold_counts.entry(tok).or_default() += 1;
    }
    let mut num_same = 0usize;
    for tok in pred {
        if let Some(n) = gold_counts.get_mut(tok.as_str()) {
            if *n > 0 {
                *n -= 1;
                num_same += 1;
            }
        }
    }
    if num_same == 0 {
        return 0.0;
    }
    let precision = num_same as f64 / pred.len() as f64;
    let recall = num_same as f64 / gold.len() as f64;
    (2.0 * precision * recall) / (precision + recall)
}

/// F1 and EM of one prediction, each maximized over the golds.
fn score_normalized(pred: &[String], golds: &[String]) -> (f64, bool) {
    golds.iter().fold((0.0f64, false), |(f1, em), gold| {
        let gold = normalize_answer(gold);
        (f1.max(f1_tokens(pred, &gold)), em || pred == gold.as_slice())
    })
}

pub fn score(prediction: &str, golds: &[String]) -> Result<(f64, bool)> {
    if golds.is_empty() {
        return Err(Error::EmptyGolds);
    }
    Ok(score_normalized(&normalize_answer(prediction), golds))
}

pub fn em(prediction: &str, golds: &[String]) -> Result<bool> {
    score(prediction, golds).map(|(_, em)| em)
}

pub fn token_f1(prediction: &str, golds: &[String]) -> Result<f64> {
    score(prediction, golds).map(|(f1, _)| f1)
}

/// How questions without a prediction are treated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    /// Score as an empty answer (F1 0, EM false against non-empty golds).
    #[default]
    ScoreAsEmpty,
    /// Leave the question out of every aggregate.
    Exclude,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionScore {
    pub id: String,
    pub category: Category,
    pub f1: f64,
    pub em: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub count: usize,
    pub mean_f1: f64,
    pub em_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub per_question: BTreeMap<String, QuestionScore>,
    /// Only categories with at least one scored question.
    pub per_class: BTreeMap<Category, ClassStats>,
    pub overall: ClassStats,
}

impl EvalReport {
    /// Aggregates per-question scores, summing in id order.
    pub fn from_scores(model: impl Into<String>, scores: impl IntoIterator<Item = QuestionScore>) -> Self {
        let per_question: BTreeMap<String, QuestionScore> =
            scores.into_iter().map(|s| (s.id.clone(), s)).collect();

        let mut sums: BTreeMap<Category, (usize, f64, usize)> = BTreeMap::new();
        let (mut f1_sum, mut em_sum) = (0.0, 0usize);
        for s in per_question.values() {
            let entry = sums.entry(s.category).or_default();
            entry.0 += 1;
            entry.1 += s.f1;
            entry.2 += usize::from(s.em);
            f1_sum += s.f1;
            em_sum += usize::from(s.em);
        }
        let stats = |count: usize, f1: f64, em: usize| ClassStats {
            count,
            mean_f1: if count == 0 { 0.0 } else { f1 / count as f64 },
            em_rate: if count == 0 { 0.0 } else { em as f64 / count as f64 },
        };
        let per_class = sums
            .into_iter()
            .map(|(c, (n, f1, em))| (c, stats(n, f1, em)))
            .collect();
        let overall = stats(per_question.len(), f1_sum, em_sum);
        Self {
            model: model.into(),
            per_question,
            per_class,
            overall,
        }
    }

    pub fn class_stats(&self, category: Category) -> ClassStats {
        self.per_class.get(&category).copied().unwrap_or_default()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_csv(&self) -> String {
        crate::analysis::export_breakdown(crate::analysis::Breakdown::Eval(std::slice::from_ref(self)))
    }
}

/// Scores one dataset item; `None` when the prediction is missing and the
/// policy excludes it.
pub(crate) fn score_item(
    item: &QaItem,
    prediction: Option<&str>,
    policy: MissingPolicy,
) -> Option<(f64, bool)> {
    let answer = match (prediction, policy) {
        (Some(p), _) => p,
        (None, MissingPolicy::ScoreAsEmpty) => "",
        (None, MissingPolicy::Exclude) => return None,
    };
    Some(score_normalized(&normalize_answer(answer), &item.gold_answers))
}

pub fn evaluate(
    predictions: &PredictionSet,
    dataset: &Dataset,
    classifier: &Classifier,
    missing_policy: MissingPolicy,
) -> EvalReport {
    let scores: Vec<QuestionScore> = dataset
        .items()
        .par_iter()
        .filter_map(|item| {
            let (f1, em) = score_item(item, predictions.get(&item.id), missing_policy)?;
            Some(QuestionScore {
                id: item.id.clone(),
                category: classifier.categorize(&item.question),
                f1,
                em,
            })
        })
        .collect();
    EvalReport::from_scores(&predictions.model_name, scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tests::toy;
    use proptest::prelude::*;

    fn golds(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_answer("The Cat!"), vec!["cat"]);
        assert!(normalize_answer("").is_empty());
        assert!(normalize_answer("a an the").is_empty());
        assert_eq!(normalize_answer("U.S. Army"), vec!["us", "army"]);
        assert_eq!(normalize_answer("«Ça va»"), vec!["ça", "va"]);
        assert_eq!(normalize_answer("theater an-apple"), vec!["theater", "anapple"]);
    }

    #[test]
    fn exact_match_examples() {
        assert!(em("Denver Broncos", &golds(&["Denver Broncos"])).unwrap());
        assert!(em("the Denver Broncos", &golds(&["Denver Broncos"])).unwrap());
        assert!(!em("Broncos", &golds(&["Denver Broncos"])).unwrap());
        assert!(matches!(em("x", &[]), Err(Error::EmptyGolds)));
    }

    #[test]
    fn f1_examples() {
        assert_eq!(token_f1("cat sat", &golds(&["cat"])).unwrap(), 2.0 / 3.0);
        assert_eq!(token_f1("Denver Broncos", &golds(&["Denver Broncos"])).unwrap(), 1.0);
        assert_eq!(token_f1("dog", &golds(&["cat"])).unwrap(), 0.0);
        assert_eq!(token_f1("", &golds(&[""])).unwrap(), 1.0);
        assert_eq!(token_f1("", &golds(&["cat"])).unwrap(), 0.0);
        assert!(matches!(token_f1("x", &[]), Err(Error::EmptyGolds)));
    }

    #[test]
    fn evaluate_examples() {
        let ds = toy(1, 2);
        let classifier = Classifier::default();
        let perfect: BTreeMap<_, _> = ds
            .items()
            .iter()
            .map(|i| (i.id.clone(), i.gold_answers[0].clone()))
            .collect();
        let report = evaluate(&PredictionSet::new("p", perfect), &ds, &classifier, MissingPolicy::default());
        assert_eq!(report.overall, ClassStats { count: 2, mean_f1: 1.0, em_rate: 1.0 });

        let empty = evaluate(&PredictionSet::new("e", BTreeMap::new()), &ds, &classifier, MissingPolicy::default());
        assert_eq!(empty.overall, ClassStats { count: 2, mean_f1: 0.0, em_rate: 0.0 });
        let excluded = evaluate(&PredictionSet::new("e", BTreeMap::new()), &ds, &classifier, MissingPolicy::Exclude);
        assert_eq!(excluded.overall.count, 0);
        assert!(excluded.per_class.is_empty());

        // one exact hit, one disjoint miss
        let mut half = BTreeMap::new();
        half.insert("p0q0".to_string(), "answer 0 0".to_string());
        half.insert("p0q1".to_string(), "zebra".to_string());
        let report = evaluate(&PredictionSet::new("h", half), &ds, &classifier, MissingPolicy::default());
        assert_eq!(report.overall.mean_f1, 0.5);
        assert_eq!(report.overall.em_rate, 0.5);
    }

    fn token_text() -> impl Strategy<Value = String> {
        proptest::collection::vec(
            prop_oneof![
                Just("the".to_string()),
                Just("a".to_string()),
                Just("Cat".to_string()),
                Just("cat,".to_string()),
                Just("dog".to_string()),
                Just("U.S.".to_string()),
                Just("-".to_string()),
                "[a-zA-Z]{1,5}",
            ],
            0..6,
        )
        .prop_map(|ws| ws.join(" "))
    }

    proptest! {
        #[test]
        fn f1_range_and_em_implies_full_f1(pred in token_text(), gs in proptest::collection::vec(token_text(), 1..4)) {
            let (f1, em) = score(&pred, &gs).unwrap();
            prop_assert!((0.0..=1.0).contains(&f1));
            if em { prop_assert_eq!(f1, 1.0); }
        }

        #[test]
        fn extra_golds_never_hurt(pred in token_text(), gs in proptest::collection::vec(token_text(), 1..4), extra in token_text()) {
            let (f1, em) = score(&pred, &gs).unwrap();
            let mut more = gs.clone();
            more.push(extra);
            let (f1b, emb) = score(&pred, &more).unwrap();
            prop_assert!(f1b >= f1);
            prop_assert!(emb || !em);
        }

        #[test]
        fn normalization_is_idempotent(text in "\\PC{0,40}") {
            let once = normalize_answer(&text);
            prop_assert_eq!(normalize_answer(&once.join(" ")), once);
        }

        #[test]
        fn overall_mean_matches_per_question_mean(n in 1usize..6, per in 1usize..5, mask in any::<u64>()) {
            let ds = toy(n, per);
            let answers = ds.items().iter().enumerate().filter(|(i, _)| mask >> (i % 64) & 1 == 1)
                .map(|(i, item)| (item.id.clone(), if i % 3 == 0 { "answer".to_string() } else { item.gold_answers[0].clone() }))
                .collect();
            let report = evaluate(&PredictionSet::new("m", answers), &ds, &Classifier::default(), MissingPolicy::default());
            let mean = report.per_question.values().map(|s| s.f1).sum::<f64>() / report.per_question.len() as f64;
            prop_assert!((report.overall.mean_f1 - mean).abs() < 1e-12);
            let weighted: f64 = report.per_class.values().map(|s| s.mean_f1 * s.count as f64).sum::<f64>()
                / report.overall.count as f64;
            prop_assert!((report.overall.mean_f1 - weighted).abs() < 1e-12);
            prop_assert_eq!(report.per_class.values().map(|s| s.count).sum::<usize>(), report.overall.count);
        }
    }
}
