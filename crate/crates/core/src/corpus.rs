//! SQuAD v1.1 datasets, prediction files and the pre-evaluation split.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{read_json, write_file, Error, Result};

/// On-disk SQuAD v1.1 layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquadFile {
    #[serde(default = "default_version")]
    pub version: String,
    pub data: Vec<SquadArticle>,
}

fn default_version() -> String {
    "1.1".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquadArticle {
    #[serde(default)]
    pub title: String,
    pub paragraphs: Vec<SquadParagraph>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquadParagraph {
    pub context: String,
    pub qas: Vec<SquadQa>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquadQa {
    pub id: String,
    pub question: String,
    pub answers: Vec<SquadAnswer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquadAnswer {
    pub text: String,
    pub answer_start: usize,
}

/// One question with its paragraph and gold answers.
#[derive(Debug, Clone, PartialEq)]
pub struct QaItem {
    pub id: String,
    pub question: String,
    pub context: Arc<str>,
    pub gold_answers: Vec<String>,
    pub answer_starts: Vec<usize>,
    /// Index of the owning paragraph group in [`Dataset::units`].
    pub unit: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParagraphGroup {
    pub article: usize,
    pub context: Arc<str>,
    /// Indices into [`Dataset::items`].
    pub items: Vec<usize>,
}

/// A flattened SQuAD corpus that remembers its article/paragraph grouping.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    version: String,
    provenance: String,
    titles: Vec<String>,
    units: Vec<ParagraphGroup>,
    items: Vec<QaItem>,
    by_id: HashMap<String, usize>,
}

impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.version == other.version
            && self.titles == other.titles
            && self.units == other.units
            && self.items == other.items
    }
}

impl Dataset {
    pub fn from_squad(file: SquadFile, provenance: impl Into<String>) -> Result<Self> {
        let mut ds = Dataset {
            version: file.version,
            provenance: provenance.into(),
            ..Dataset::default()
        };
        for article in file.data {
            let article_idx = ds.titles.len();
            ds.titles.push(article.title);
            for paragraph in article.paragraphs {
                let context: Arc<str> = Arc::from(paragraph.context);
                let unit = ds.units.len();
                let mut members = Vec::with_capacity(paragraph.qas.len());
                for qa in paragraph.qas {
                    if qa.answers.is_empty() {
                        return Err(Error::NoGoldAnswers(qa.id));
                    }
                    if ds.by_id.contains_key(&qa.id) {
                        return Err(Error::DuplicateId(qa.id));
                    }
                    let idx = ds.items.len();
                    ds.by_id.insert(qa.id.clone(), idx);
                    let (gold_answers, answer_starts) = qa
                        .answers
                        .into_iter()
                        .map(|a| (a.text, a.answer_start))
                        .unzip();
                    ds.items.push(QaItem {
                        id: qa.id,
                        question: qa.question,
                        context: Arc::clone(&context),
                        gold_answers,
                        answer_starts,
                        unit,
                    });
                    members.push(idx);
                }
                ds.units.push(ParagraphGroup {
                    article: article_idx,
                    context,
                    items: members,
                });
            }
        }
        Ok(ds)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: SquadFile = read_json(path)?;
        Self::from_squad(file, path.display().to_string())
    }

    pub fn to_squad(&self) -> SquadFile {
        let mut data: Vec<SquadArticle> = self
            .titles
            .iter()
            .map(|t| SquadArticle {
                title: t.clone(),
                paragraphs: Vec::new(),
            })
            .collect();
        for unit in &self.units {
            let qas = unit
                .items
                .iter()
                .map(|&i| {
                    let item = &self.items[i];
                    SquadQa {
                        id: item.id.clone(),
                        question: item.question.clone(),
                        answers: item
                            .gold_answers
                            .iter()
                            .zip(&item.answer_starts)
                            .map(|(text, &answer_start)| SquadAnswer {
                                text: text.clone(),
                                answer_start,
                            })
                            .collect(),
                    }
                })
                .collect();
            data[unit.article].paragraphs.push(SquadParagraph {
                context: unit.context.to_string(),
                qas,
            });
        }
        SquadFile {
            version: self.version.clone(),
            data,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(&self.to_squad()).expect("dataset serializes");
        write_file(path, json)
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn items(&self) -> &[QaItem] {
        &self.items
    }

    pub fn units(&self) -> &[ParagraphGroup] {
        &self.units
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&QaItem> {
        self.by_id.get(id).map(|&i| &self.items[i])
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(|item| item.id.as_str())
    }

    /// Keeps the items accepted by `keep`, preserving order and grouping.
    /// Paragraphs and articles left without questions are dropped.
    pub fn filter(&self, provenance: impl Into<String>, keep: impl Fn(&QaItem) -> bool) -> Dataset {
        let mut file = self.to_squad();
        for article in &mut file.data {
            for paragraph in &mut article.paragraphs {
                paragraph.qas.retain(|qa| keep(&self.items[self.by_id[&qa.id]]));
            }
            article.paragraphs.retain(|p| !p.qas.is_empty());
        }
        file.data.retain(|a| !a.paragraphs.is_empty());
        Dataset::from_squad(file, provenance).expect("subset of a valid dataset is valid")
    }
}

/// A model's answers, keyed by question id.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PredictionSet {
    pub model_name: String,
    pub answers: BTreeMap<String, String>,
}

impl PredictionSet {
    pub fn new(model_name: impl Into<String>, answers: BTreeMap<String, String>) -> Self {
        Self {
            model_name: model_name.into(),
            answers,
        }
    }

    pub fn load(path: &Path, model_name: impl Into<String>) -> Result<Self> {
        let raw: BTreeMap<String, serde_json::Value> = read_json(path)?;
        let answers = raw
            .into_iter()
            .map(|(id, value)| match value {
                serde_json::Value::String(s) => Ok((id, s)),
                other => Err(Error::Schema {
                    path: path.to_path_buf(),
                    location: id,
                    message: format!("expected a string answer, found {other}"),
                }),
            })
            .collect::<Result<_>>()?;
        Ok(Self::new(model_name, answers))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.answers).expect("predictions serialize")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_json())
    }

    pub fn get(&self, id: &str) -> Option<&str> {
        self.answers.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    Dataset::load(path)
}

pub fn load_predictions(path: &Path, model_name: &str) -> Result<PredictionSet> {
    PredictionSet::load(path, model_name)
}

/// The unit moved as a whole when splitting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    #[default]
    Question,
    Paragraph,
}

#[derive(Debug, Clone)]
pub struct SplitResult {
    pub train: Dataset,
    pub pre_eval: Dataset,
    pub fraction: f64,
    pub seed: u64,
    pub granularity: Granularity,
}

/// Enough to re-materialize a split from its source dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub fraction: f64,
    pub seed: u64,
    pub granularity: Granularity,
    pub pre_eval_ids: Vec<String>,
}

impl SplitResult {
    pub fn manifest(&self) -> SplitManifest {
        SplitManifest {
            fraction: self.fraction,
            seed: self.seed,
            granularity: self.granularity,
            pre_eval_ids: self.pre_eval.ids().map(str::to_owned).collect(),
        }
    }
}

impl SplitManifest {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    /// Rebuilds the split this manifest describes from its source dataset.
    pub fn apply(&self, dataset: &Dataset) -> Result<SplitResult> {
        let selected: HashSet<&str> = self.pre_eval_ids.iter().map(String::as_str).collect();
        if let Some(missing) = selected.iter().find(|id| dataset.get(id).is_none()) {
            return Err(Error::Invalid(format!(
                "split manifest names `{missing}`, which is not in the dataset"
            )));
        }
        Ok(partition(dataset, &selected, self.fraction, self.seed, self.granularity))
    }
}

fn partition(
    dataset: &Dataset,
    selected: &HashSet<&str>,
    fraction: f64,
    seed: u64,
    granularity: Granularity,
) -> SplitResult {
    let base = dataset.provenance();
    SplitResult {
        train: dataset.filter(format!("{base}#train"), |item| !selected.contains(item.id.as_str())),
        pre_eval: dataset.filter(format!("{base}#pre_eval"), |item| {
            selected.contains(item.id.as_str())
        }),
        fraction,
        seed,
        granularity,
    }
}

/// Moves shuffled units into the pre-evaluation part until it holds at least
/// `fraction` of all questions; the rest stays in `train`.
pub fn split_pre_eval(
    dataset: &Dataset,
    fraction: f64,
    seed: u64,
    granularity: Granularity,
) -> Result<SplitResult> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidFraction(fraction));
    }
    let units: Vec<Vec<usize>> = match granularity {
        Granularity::Question => (0..dataset.len()).map(|i| vec![i]).collect(),
        Granularity::Paragraph => dataset.units().iter().map(|u| u.items.clone()).collect(),
    };
    let mut order: Vec<usize> = (0..units.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let target = fraction * dataset.len() as f64;
    let mut selected = HashSet::new();
    for unit in order {
        if selected.len() as f64 >= target {
            break;
        }
        selected.extend(units[unit].iter().map(|&i| dataset.items()[i].id.as_str()));
    }
    Ok(partition(dataset, &selected, fraction, seed, granularity))
}
