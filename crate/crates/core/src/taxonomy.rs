//! Question taxonomy.
//!
//! Questions fall into fourteen classes: thirteen keyed by a question phrase
//! ("what time", "how many", "whom", ...) plus `undefined` for questions that
//! match none of them. Matching is driven by an ordered, editable rule set;
//! the shipped default lives in `data/default_rules.json`.
//!
//! A second, length-based bucketing is available through [`Classifier`] so
//! the rest of the pipeline can run with either scheme.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::error::{read_json, Error, Result};

const DEFAULT_RULES_JSON: &str = include_str!("../data/default_rules.json");

/// The fourteen question classes, in the order the breakdown tables list them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionClass {
    Date,
    During,
    HowAre,
    HowBigSize,
    HowMuchMany,
    HowOld,
    Undefined,
    What,
    WhatTime,
    When,
    Where,
    Who,
    Whom,
    Why,
}

impl QuestionClass {
    pub const ALL: [QuestionClass; 14] = [
        QuestionClass::Date,
        QuestionClass::During,
        QuestionClass::HowAre,
        QuestionClass::HowBigSize,
        QuestionClass::HowMuchMany,
        QuestionClass::HowOld,
        QuestionClass::Undefined,
        QuestionClass::What,
        QuestionClass::WhatTime,
        QuestionClass::When,
        QuestionClass::Where,
        QuestionClass::Who,
        QuestionClass::Whom,
        QuestionClass::Why,
    ];

    /// Identifier used in JSON files.
    pub fn key(self) -> &'static str {
        match self {
            QuestionClass::Date => "date",
            QuestionClass::During => "during",
            QuestionClass::HowAre => "how_are",
            QuestionClass::HowBigSize => "how_big_size",
            QuestionClass::HowMuchMany => "how_much_many",
            QuestionClass::HowOld => "how_old",
            QuestionClass::Undefined => "undefined",
            QuestionClass::What => "what",
            QuestionClass::WhatTime => "what_time",
            QuestionClass::When => "when",
            QuestionClass::Where => "where",
            QuestionClass::Who => "who",
            QuestionClass::Whom => "whom",
            QuestionClass::Why => "why",
        }
    }

    /// Human-readable row label for breakdown tables.
    pub fn label(self) -> &'static str {
        match self {
            QuestionClass::HowAre => "how are",
            QuestionClass::HowBigSize => "how big/size",
            QuestionClass::HowMuchMany => "how m/m",
            QuestionClass::HowOld => "how old",
            QuestionClass::WhatTime => "what time",
            other => other.key(),
        }
    }
}

impl fmt::Display for QuestionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for QuestionClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        QuestionClass::ALL
            .into_iter()
            .find(|c| c.key() == s || c.label() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown question class `{s}`")))
    }
}

/// The bucket a question is assigned to for per-class weighting: either a
/// phrase class or a length bucket index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Category {
    Phrase(QuestionClass),
    Length(usize),
}

impl Category {
    pub fn is_undefined(self) -> bool {
        self == Category::Phrase(QuestionClass::Undefined)
    }

    pub fn label(self) -> String {
        match self {
            Category::Phrase(c) => c.label().to_string(),
            Category::Length(i) => format!("len:{i}"),
        }
    }
}

impl From<QuestionClass> for Category {
    fn from(c: QuestionClass) -> Self {
        Category::Phrase(c)
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Category::Phrase(c) => f.write_str(c.key()),
            Category::Length(i) => write!(f, "len:{i}"),
        }
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(idx) = s.strip_prefix("len:") {
            return idx
                .parse()
                .map(Category::Length)
                .map_err(|_| Error::Invalid(format!("bad length bucket `{s}`")));
        }
        s.parse().map(Category::Phrase)
    }
}

impl Serialize for Category {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Category {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One line of a rule file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRule {
    pub pattern: String,
    pub class: QuestionClass,
    pub priority: i64,
}

/// Ordered phrase rules. The highest-priority rule whose pattern matches
/// anywhere in the question (case-insensitively) decides the class; nothing
/// matching means `undefined`.
#[derive(Debug, Clone)]
pub struct ClassRuleSet {
    rules: Vec<ClassRule>,
    compiled: Vec<(Regex, QuestionClass)>,
}

impl ClassRuleSet {
    pub fn new(mut rules: Vec<ClassRule>) -> Result<Self> {
        let mut seen = HashSet::new();
        for rule in &rules {
            if rule.class == QuestionClass::Undefined {
                return Err(Error::InvalidRule(format!(
                    "`{}` maps to undefined, which is only the fallback",
                    rule.pattern
                )));
            }
            if !seen.insert(rule.priority) {
                return Err(Error::InvalidRule(format!(
                    "priority {} used more than once",
                    rule.priority
                )));
            }
        }
        rules.sort_by_key(|r| std::cmp::Reverse(r.priority));
        let compiled = rules
            .iter()
            .map(|rule| {
                RegexBuilder::new(&rule.pattern)
                    .case_insensitive(true)
                    .build()
                    .map(|re| (re, rule.class))
                    .map_err(|e| Error::InvalidRule(format!("`{}`: {e}", rule.pattern)))
            })
            .collect::<Result<_>>()?;
        Ok(Self { rules, compiled })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::new(read_json(path)?)
    }

    /// Rules in evaluation order (highest priority first).
    pub fn rules(&self) -> &[ClassRule] {
        &self.rules
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.rules).expect("rules serialize")
    }

    pub fn classify(&self, question: &str) -> QuestionClass {
        self.compiled
            .iter()
            .find(|(re, _)| re.is_match(question))
            .map_or(QuestionClass::Undefined, |(_, class)| *class)
    }
}

impl Default for ClassRuleSet {
    fn default() -> Self {
        let rules: Vec<ClassRule> =
            serde_json::from_str(DEFAULT_RULES_JSON).expect("bundled rule file parses");
        Self::new(rules).expect("bundled rule file is valid")
    }
}

pub fn classify(question: &str, rules: &ClassRuleSet) -> QuestionClass {
    rules.classify(question)
}

/// Word-count bucket edges, e.g. `[5, 10]` gives buckets `<5`, `5..10`, `>=10`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthBuckets(Vec<usize>);

impl LengthBuckets {
    pub fn new(edges: Vec<usize>) -> Result<Self> {
        if edges.is_empty() || edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidBuckets);
        }
        Ok(Self(edges))
    }

    pub fn edges(&self) -> &[usize] {
        &self.0
    }

    pub fn bucket_count(&self) -> usize {
        self.0.len() + 1
    }

    pub fn bucket(&self, question: &str) -> usize {
        let words = question.split_whitespace().count();
        self.0
            .iter()
            .position(|&edge| edge > words)
            .unwrap_or(self.0.len())
    }
}

/// Index of the first edge strictly greater than the question's word count,
/// or `edges.len()` when there is none.
pub fn classify_by_length(question: &str, bucket_edges: &[usize]) -> Result<usize> {
    Ok(LengthBuckets::new(bucket_edges.to_vec())?.bucket(question))
}

/// The question-bucketing scheme used by evaluation, weighting and voting.
#[derive(Debug, Clone)]
pub enum Classifier {
    Phrase(ClassRuleSet),
    Length(LengthBuckets),
}

impl Classifier {
    pub fn categorize(&self, question: &str) -> Category {
        match self {
            Classifier::Phrase(rules) => Category::Phrase(rules.classify(question)),
            Classifier::Length(buckets) => Category::Length(buckets.bucket(question)),
        }
    }

    /// Every category this classifier can emit.
    pub fn categories(&self) -> Vec<Category> {
        match self {
            Classifier::Phrase(_) => QuestionClass::ALL.into_iter().map(Category::Phrase).collect(),
            Classifier::Length(b) => (0..b.bucket_count()).map(Category::Length).collect(),
        }
    }
}

impl Default for Classifier {
    fn default() -> Self {
        Classifier::Phrase(ClassRuleSet::default())
    }
}

impl From<ClassRuleSet> for Classifier {
    fn from(rules: ClassRuleSet) -> Self {
        Classifier::Phrase(rules)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassHistogram {
    pub counts: BTreeMap<QuestionClass, usize>,
    pub total: usize,
}

impl ClassHistogram {
    pub fn count(&self, class: QuestionClass) -> usize {
        self.counts.get(&class).copied().unwrap_or(0)
    }

    /// Share of `class` in percent; 0 for an empty histogram.
    pub fn percent(&self, class: QuestionClass) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            100.0 * self.count(class) as f64 / self.total as f64
        }
    }

    /// Table layout: `type,count,percentage` plus a SUM row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("type,count,percentage\n");
        for class in QuestionClass::ALL {
            out.push_str(&format!(
                "{},{},{:.1}%\n",
                class.label(),
                self.count(class),
                self.percent(class)
            ));
        }
        let sum_pct = if self.total == 0 { 0.0 } else { 100.0 };
        out.push_str(&format!("SUM,{},{:.1}%\n", self.total, sum_pct));
        out
    }
}

pub fn class_distribution(dataset: &Dataset, rules: &ClassRuleSet) -> ClassHistogram {
    let mut counts: BTreeMap<QuestionClass, usize> =
        QuestionClass::ALL.into_iter().map(|c| (c, 0)).collect();
    for item in dataset.items() {
        *counts.entry(rules.classify(&item.question)).or_default() += 1;
    }
    ClassHistogram {
        counts,
        total: dataset.len(),
    }
}
