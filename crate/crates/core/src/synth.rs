//! Synthetic predictions and corpora.
//!
//! [`generate_predictions`] stands in for a trained model: per class it emits
//! the gold answer with a configured probability and a corrupted answer
//! otherwise. The random draw for a question depends only on the profile seed
//! and the question id, so a question gets the same answer in any subset of
//! the dataset.
//!
//! [`generate_dataset`] builds a SQuAD-shaped corpus from templates with a
//! prescribed number of questions per class.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Dataset, PredictionSet, QaItem, SquadAnswer, SquadArticle, SquadFile, SquadParagraph, SquadQa};
use crate::error::{read_json, Error, Result};
use crate::metrics::normalize_answer;
use crate::taxonomy::{ClassRuleSet, QuestionClass};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corruption {
    /// A context span sharing no normalized token with any gold answer.
    #[default]
    DisjointToken,
    /// The first gold answer without its last word.
    TruncateGold,
    /// A uniformly chosen context span.
    RandomSpan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyProfile {
    /// Probability of answering with the gold; classes not listed get 0.
    pub per_class: BTreeMap<QuestionClass, f64>,
    #[serde(default)]
    pub corruption: Corruption,
    pub seed: u64,
}

impl AccuracyProfile {
    pub fn uniform(p: f64, corruption: Corruption, seed: u64) -> Self {
        Self {
            per_class: QuestionClass::ALL.into_iter().map(|c| (c, p)).collect(),
            corruption,
            seed,
        }
    }

    /// Perfect on `classes`, never correct elsewhere.
    pub fn specialist(classes: &[QuestionClass], corruption: Corruption, seed: u64) -> Self {
        Self {
            per_class: QuestionClass::ALL
                .into_iter()
                .map(|c| (c, if classes.contains(&c) { 1.0 } else { 0.0 }))
                .collect(),
            corruption,
            seed,
        }
    }

    pub fn probability(&self, class: QuestionClass) -> f64 {
        self.per_class.get(&class).copied().unwrap_or(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        for (class, &p) in &self.per_class {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidProbability {
                    class: class.to_string(),
                    value: p,
                });
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let profile: Self = read_json(path)?;
        profile.validate()?;
        Ok(profile)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub predictions: PredictionSet,
    /// Questions whose context had no usable span, answered with a sentinel.
    pub sentinel_ids: Vec<String>,
}

fn question_rng(seed: u64, id: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(id.as_bytes());
    let digest: [u8; 32] = hasher.finalize().into();
    ChaCha8Rng::from_seed(digest)
}

fn gold_tokens(item: &QaItem) -> HashSet<String> {
    item.gold_answers.iter().flat_map(|g| normalize_answer(g)).collect()
}

/// A span of context words with no normalized token in common with any gold,
/// or `None` when the context has no such word.
fn disjoint_span(item: &QaItem, rng: &mut ChaCha8Rng) -> Option<String> {
    let banned = gold_tokens(item);
    let words: Vec<&str> = item.context.split_whitespace().collect();
    let usable: Vec<bool> = words
        .iter()
        .map(|w| {
            let toks = normalize_answer(w);
            !toks.is_empty() && toks.iter().all(|t| !banned.contains(t))
        })
        .collect();
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut start = None;
    for (i, &ok) in usable.iter().chain(std::iter::once(&false)).enumerate() {
        match (ok, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                runs.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    let &(s, e) = runs.choose(rng)?;
    let len = rng.random_range(1..=(e - s).min(3));
    let from = rng.random_range(s..=e - len);
    Some(words[from..from + len].join(" "))
}

fn sentinel(item: &QaItem) -> String {
    let banned = gold_tokens(item);
    (0..)
        .map(|k| format!("synthfill{k}"))
        .find(|s| !banned.contains(s))
        .expect("unbounded search")
}

fn truncate_gold(gold: &str) -> String {
    let mut words: Vec<&str> = gold.split_whitespace().collect();
    // drop trailing words until one that carries a normalized token is gone
    while let Some(last) = words.pop() {
        if !normalize_answer(last).is_empty() {
            break;
        }
    }
    words.join(" ")
}

fn random_span(item: &QaItem, rng: &mut ChaCha8Rng) -> String {
    let words: Vec<&str> = item.context.split_whitespace().collect();
    if words.is_empty() {
        return String::new();
    }
    let len = rng.random_range(1..=words.len().min(5));
    let from = rng.random_range(0..=words.len() - len);
    words[from..from + len].join(" ")
}

pub fn generate_predictions(
    dataset: &Dataset,
    profile: &AccuracyProfile,
    model_name: &str,
    rules: &ClassRuleSet,
) -> Result<SynthOutput> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    profile.validate()?;
    let mut answers = BTreeMap::new();
    let mut sentinel_ids = Vec::new();
    for item in dataset.items() {
        let mut rng = question_rng(profile.seed, &item.id);
        let p = profile.probability(rules.classify(&item.question));
        let answer = if rng.random::<f64>() < p {
            item.gold_answers[0].clone()
        } else {
            match profile.corruption {
                Corruption::DisjointToken => disjoint_span(item, &mut rng).unwrap_or_else(|| {
                    sentinel_ids.push(item.id.clone());
                    sentinel(item)
                }),
                Corruption::TruncateGold => truncate_gold(&item.gold_answers[0]),
                Corruption::RandomSpan => random_span(item, &mut rng),
            }
        };
        answers.insert(item.id.clone(), answer);
    }
    Ok(SynthOutput {
        predictions: PredictionSet::new(model_name, answers),
        sentinel_ids,
    })
}

/// Shape of a synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub class_counts: BTreeMap<QuestionClass, usize>,
    pub questions_per_paragraph: usize,
    pub words_per_context: usize,
    pub seed: u64,
}

impl CorpusSpec {
    pub fn new(class_counts: impl IntoIterator<Item = (QuestionClass, usize)>, seed: u64) -> Self {
        Self {
            class_counts: class_counts.into_iter().collect(),
            questions_per_paragraph: 5,
            words_per_context: 40,
            seed,
        }
    }
}

const SYLLABLES: [&str; 12] = ["ba", "ke", "lo", "mu", "ri", "sa", "to", "vi", "ne", "du", "pa", "zo"];

fn pseudo_word(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(2..=3);
    (0..n).map(|_| *SYLLABLES.choose(rng).expect("non-empty")).collect()
}

fn question_text(class: QuestionClass, subject: &str, rng: &mut ChaCha8Rng) -> String {
    let verb = pseudo_word(rng);
    let noun = pseudo_word(rng);
    match class {
        QuestionClass::Date => format!("On what date did {subject} {verb}?"),
        QuestionClass::During => format!("During what period did {subject} {verb}?"),
        QuestionClass::HowAre => format!("How are {subject} and the {noun} {verb}?"),
        QuestionClass::HowBigSize => format!("How big is the {noun} of {subject}?"),
        QuestionClass::HowMuchMany => format!("How many {noun} did {subject} {verb}?"),
        QuestionClass::HowOld => format!("How old was {subject} at the {noun}?"),
        QuestionClass::Undefined => format!("Did {subject} {verb} the {noun}?"),
        QuestionClass::What if rng.random_bool(0.1) => format!("Which {noun} did {subject} {verb}?"),
        QuestionClass::What => format!("What {noun} did {subject} {verb}?"),
        QuestionClass::WhatTime => format!("What time did {subject} {verb}?"),
        QuestionClass::When => format!("When did {subject} {verb}?"),
        QuestionClass::Where => format!("Where did {subject} {verb}?"),
        QuestionClass::Who => format!("Who {verb} {subject}?"),
        QuestionClass::Whom => format!("By whom was {subject} {verb}?"),
        QuestionClass::Why => format!("Why did {subject} {verb}?"),
    }
}

/// A template corpus whose questions classify (under the default rules) into
/// exactly the requested class counts. Each gold answer is a 1-3 word span of
/// its context.
pub fn generate_dataset(spec: &CorpusSpec) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut classes: Vec<QuestionClass> = spec
        .class_counts
        .iter()
        .flat_map(|(&c, &n)| std::iter::repeat_n(c, n))
        .collect();
    classes.shuffle(&mut rng);

    let per = spec.questions_per_paragraph.max(1);
    let mut paragraphs = Vec::new();
    for (p, chunk) in classes.chunks(per).enumerate() {
        let words: Vec<String> = (0..spec.words_per_context.max(4)).map(|_| pseudo_word(&mut rng)).collect();
        let context = words.join(" ");
        let qas = chunk
            .iter()
            .enumerate()
            .map(|(q, &class)| {
                let len = rng.random_range(1..=3);
                let from = rng.random_range(0..=words.len() - len);
                let text = words[from..from + len].join(" ");
                let answer_start = words[..from].iter().map(|w| w.chars().count() + 1).sum();
                let subject = pseudo_word(&mut rng);
                SquadQa {
                    id: format!("s{p:06}q{q}"),
                    question: question_text(class, &subject, &mut rng),
                    answers: vec![SquadAnswer { text, answer_start }],
                }
            })
            .collect();
        paragraphs.push(SquadParagraph { context, qas });
    }
    let data = paragraphs
        .chunks(20)
        .enumerate()
        .map(|(a, ps)| SquadArticle {
            title: format!("synthetic_{a}"),
            paragraphs: ps.to_vec(),
        })
        .collect();
    Dataset::from_squad(SquadFile { version: "1.1".into(), data }, format!("synthetic(seed={})", spec.seed))
        .expect("generated ids are unique")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{evaluate, score, MissingPolicy};
    use crate::taxonomy::{class_distribution, Classifier};

    fn corpus(n_per_class: usize, seed: u64) -> Dataset {
        generate_dataset(&CorpusSpec::new(QuestionClass::ALL.map(|c| (c, n_per_class)), seed))
    }

    #[test]
    fn generated_corpus_has_requested_class_counts() {
        let spec = CorpusSpec::new(QuestionClass::ALL.into_iter().enumerate().map(|(i, c)| (c, i + 1)), 5);
        let ds = generate_dataset(&spec);
        let hist = class_distribution(&ds, &ClassRuleSet::default());
        for (i, c) in QuestionClass::ALL.into_iter().enumerate() {
            assert_eq!(hist.count(c), i + 1, "{c}");
        }
        for item in ds.items() {
            let start = item.answer_starts[0];
            let span: String = item.context.chars().skip(start).take(item.gold_answers[0].chars().count()).collect();
            assert_eq!(span, item.gold_answers[0]);
        }
    }

    #[test]
    fn always_gold_is_perfect() {
        let ds = corpus(5, 1);
        let out = generate_predictions(&ds, &AccuracyProfile::uniform(1.0, Corruption::DisjointToken, 3), "m", &ClassRuleSet::default()).unwrap();
        let report = evaluate(&out.predictions, &ds, &Classifier::default(), MissingPolicy::default());
        assert_eq!(report.overall.em_rate, 1.0);
        assert_eq!(report.overall.mean_f1, 1.0);
    }

    #[test]
    fn never_gold_with_disjoint_tokens_scores_zero() {
        let ds = corpus(5, 2);
        let out = generate_predictions(&ds, &AccuracyProfile::uniform(0.0, Corruption::DisjointToken, 3), "m", &ClassRuleSet::default()).unwrap();
        let report = evaluate(&out.predictions, &ds, &Classifier::default(), MissingPolicy::default());
        assert_eq!(report.overall.mean_f1, 0.0);
        assert!(out.sentinel_ids.is_empty());
    }

    #[test]
    fn sentinel_when_context_is_all_gold() {
        let file = SquadFile {
            version: "1.1".into(),
            data: vec![SquadArticle {
                title: "t".into(),
                paragraphs: vec![SquadParagraph {
                    context: "Denver Broncos".into(),
                    qas: vec![SquadQa {
                        id: "q".into(),
                        question: "Who won?".into(),
                        answers: vec![SquadAnswer { text: "Denver Broncos".into(), answer_start: 0 }],
                    }],
                }],
            }],
        };
        let ds = Dataset::from_squad(file, "t").unwrap();
        let out = generate_predictions(&ds, &AccuracyProfile::uniform(0.0, Corruption::DisjointToken, 0), "m", &ClassRuleSet::default()).unwrap();
        assert_eq!(out.sentinel_ids, vec!["q".to_string()]);
        assert_eq!(score(out.predictions.get("q").unwrap(), &ds.items()[0].gold_answers).unwrap().0, 0.0);
    }

    #[test]
    fn em_rate_tracks_class_probability() {
        let ds = corpus(400, 7);
        let mut profile = AccuracyProfile::uniform(0.0, Corruption::DisjointToken, 11);
        profile.per_class.insert(QuestionClass::When, 0.6);
        let out = generate_predictions(&ds, &profile, "m", &ClassRuleSet::default()).unwrap();
        let report = evaluate(&out.predictions, &ds, &Classifier::default(), MissingPolicy::default());
        let stats = report.class_stats(QuestionClass::When.into());
        let n = stats.count as f64;
        // 99% normal-approximation binomial interval
        let half_width = 2.576 * (0.6 * 0.4 / n).sqrt();
        assert!((stats.em_rate - 0.6).abs() <= half_width, "{} vs 0.6 ± {half_width}", stats.em_rate);
        assert_eq!(report.class_stats(QuestionClass::Who.into()).em_rate, 0.0);
    }

    #[test]
    fn truncation_gives_partial_credit() {
        let ds = corpus(10, 4);
        let out = generate_predictions(&ds, &AccuracyProfile::uniform(0.0, Corruption::TruncateGold, 1), "m", &ClassRuleSet::default()).unwrap();
        let mut checked = 0;
        for item in ds.items() {
            if normalize_answer(&item.gold_answers[0]).len() >= 2 {
                let f1 = score(out.predictions.get(&item.id).unwrap(), &item.gold_answers).unwrap().0;
                assert!(f1 > 0.0 && f1 < 1.0, "{}: {f1}", item.id);
                checked += 1;
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn deterministic_and_subset_stable() {
        let ds = corpus(8, 9);
        let profile = AccuracyProfile::uniform(0.5, Corruption::RandomSpan, 21);
        let rules = ClassRuleSet::default();
        let a = generate_predictions(&ds, &profile, "m", &rules).unwrap();
        let b = generate_predictions(&ds, &profile, "m", &rules).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.predictions.answers.keys().map(String::as_str).collect::<Vec<_>>(), {
            let mut ids: Vec<&str> = ds.ids().collect();
            ids.sort();
            ids
        });
        let half = ds.filter("half", |item| item.id.ends_with('0') || item.id.ends_with('2'));
        let sub = generate_predictions(&half, &profile, "m", &rules).unwrap();
        for (id, answer) in &sub.predictions.answers {
            assert_eq!(a.predictions.get(id), Some(answer.as_str()));
        }
    }

    #[test]
    fn errors() {
        let rules = ClassRuleSet::default();
        let empty = Dataset::default();
        let p = AccuracyProfile::uniform(0.5, Corruption::RandomSpan, 0);
        assert!(matches!(generate_predictions(&empty, &p, "m", &rules), Err(Error::EmptyDataset)));
        let bad = AccuracyProfile::uniform(1.5, Corruption::RandomSpan, 0);
        assert!(generate_predictions(&corpus(1, 0), &bad, "m", &rules).is_err());
    }
}
