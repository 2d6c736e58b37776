//! Pairwise agreement between models and tabular breakdown exports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, PredictionSet};
use crate::metrics::{score_item, EvalReport, MissingPolicy};
use crate::taxonomy::{Category, Classifier};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgreementCounts {
    pub equal_f1: usize,
    pub equal_em: usize,
    pub total: usize,
}

impl std::ops::AddAssign for AgreementCounts {
    fn add_assign(&mut self, rhs: Self) {
        self.equal_f1 += rhs.equal_f1;
        self.equal_em += rhs.equal_em;
        self.total += rhs.total;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub model_a: String,
    pub model_b: String,
    pub per_class: BTreeMap<Category, AgreementCounts>,
    pub overall: AgreementCounts,
    /// Mean F1 over the questions where both models scored the same F1.
    pub mean_of_equal_f1s: f64,
    /// Questions with equal EM where both were exact matches.
    pub trues_in_equal_ems: usize,
    pub trues_in_equal_ems_rate: f64,
}

impl SimilarityReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_csv(&self) -> String {
        export_breakdown(Breakdown::Similarity(self))
    }
}

/// Counts, per class, the questions on which two models obtain exactly the
/// same F1 and the same EM against the gold answers.
pub fn pairwise_similarity(
    preds_a: &PredictionSet,
    preds_b: &PredictionSet,
    dataset: &Dataset,
    classifier: &Classifier,
    missing_policy: MissingPolicy,
) -> SimilarityReport {
    let rows: Vec<(Category, f64, f64, bool, bool)> = dataset
        .items()
        .par_iter()
        .filter_map(|item| {
            let (f1_a, em_a) = score_item(item, preds_a.get(&item.id), missing_policy)?;
            let (f1_b, em_b) = score_item(item, preds_b.get(&item.id), missing_policy)?;
            Some((classifier.categorize(&item.question), f1_a, f1_b, em_a, em_b))
        })
        .collect();

    let mut per_class: BTreeMap<Category, AgreementCounts> = BTreeMap::new();
    let mut overall = AgreementCounts::default();
    let (mut equal_f1_sum, mut trues) = (0.0, 0usize);
    for (category, f1_a, f1_b, em_a, em_b) in rows {
        let same_f1 = f1_a == f1_b;
        let same_em = em_a == em_b;
        let counts = AgreementCounts {
            equal_f1: usize::from(same_f1),
            equal_em: usize::from(same_em),
            total: 1,
        };
        *per_class.entry(category).or_default() += counts;
        overall += counts;
        if same_f1 {
            equal_f1_sum += f1_a;
        }
        if same_em && em_a {
            trues += 1;
        }
    }
    let ratio = |num: f64, den: usize| if den == 0 { 0.0 } else { num / den as f64 };
    SimilarityReport {
        model_a: preds_a.model_name.clone(),
        model_b: preds_b.model_name.clone(),
        mean_of_equal_f1s: ratio(equal_f1_sum, overall.equal_f1),
        trues_in_equal_ems: trues,
        trues_in_equal_ems_rate: ratio(trues as f64, overall.equal_em),
        per_class,
        overall,
    }
}

pub enum Breakdown<'a> {
    Eval(&'a [EvalReport]),
    Similarity(&'a SimilarityReport),
}

fn pct(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

/// CSV text with one row per class and a closing SUM row. Shares are
/// percentages at one decimal; F1/EM are percentages at two decimals.
pub fn export_breakdown(breakdown: Breakdown<'_>) -> String {
    let mut out = String::new();
    match breakdown {
        Breakdown::Eval(reports) => {
            out.push_str("model,class,count,share,f1,em\n");
            for r in reports {
                let total = r.overall.count;
                for (category, s) in &r.per_class {
                    let _ = writeln!(
                        out,
                        "{},{},{},{:.1}%,{:.2},{:.2}",
                        r.model,
                        category.label(),
                        s.count,
                        pct(s.count, total),
                        100.0 * s.mean_f1,
                        100.0 * s.em_rate
                    );
                }
                let _ = writeln!(
                    out,
                    "{},SUM,{},{:.1}%,{:.2},{:.2}",
                    r.model,
                    total,
                    pct(total, total),
                    100.0 * r.overall.mean_f1,
                    100.0 * r.overall.em_rate
                );
            }
        }
        Breakdown::Similarity(s) => {
            out.push_str("type,equal_f1,equal_em,total\n");
            let row = |out: &mut String, label: &str, c: &AgreementCounts| {
                let _ = writeln!(
                    out,
                    "{label},{} ({:.1}%),{} ({:.1}%),{}",
                    c.equal_f1,
                    pct(c.equal_f1, c.total),
                    c.equal_em,
                    pct(c.equal_em, c.total),
                    c.total
                );
            };
            for (category, c) in &s.per_class {
                row(&mut out, &category.label(), c);
            }
            row(&mut out, "SUM", &s.overall);
        }
    }
    out
}
