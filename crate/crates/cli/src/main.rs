mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use qa_ensemble::corpus::Granularity;
use qa_ensemble::synth::{generate_dataset, generate_predictions, AccuracyProfile, CorpusSpec};
use qa_ensemble::taxonomy::LengthBuckets;
use qa_ensemble::voting::{traces_to_jsonl, NoDuplicateFallback};
use qa_ensemble::{
    class_distribution, compute_class_weights, compute_global_weights, evaluate, export_breakdown,
    pairwise_similarity, run_ensemble, split_pre_eval, Breakdown, ClassRuleSet, Classifier, Combine,
    Dataset, DuplicateEquality, EvalReport, MetricBasis, MissingPolicy, PredictionSet, QuestionClass,
    VoteConfig, VoteMode, WeightTable,
};

use crate::manifest::ManifestBuilder;

const EXIT_FAILURE: u8 = 1;
const EXIT_MISSING_INPUT: u8 = 3;
const EXIT_SCHEMA: u8 = 4;

#[derive(Parser)]
#[command(name = "qa-ensemble", version, about = "Class-aware weighted voting over QA prediction files")]
struct Cli {
    /// Worker threads for scoring and voting (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Question-class rule file (JSON list of {pattern, class, priority}).
    #[arg(long, global = true, env = "QA_ENSEMBLE_RULES")]
    rules: Option<PathBuf>,

    /// `phrase` for the question-phrase taxonomy or `length:E1,E2,...` for
    /// word-count buckets.
    #[arg(long, global = true, default_value = "phrase")]
    classifier: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Inspect the question-class rules.
    Rules {
        #[command(subcommand)]
        action: RulesAction,
    },
    /// Question-class breakdown of a dataset.
    ClassifyStats {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Split a training set into train and pre-evaluation parts.
    Split {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        fraction: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = GranularityArg::Question)]
        granularity: GranularityArg,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Score prediction files (EM / F1 per class).
    Evaluate {
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        preds: PredsArgs,
        #[arg(long, value_enum, default_value_t = MissingArg::ScoreAsEmpty)]
        missing: MissingArg,
        #[arg(long)]
        json: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Learn voting weights from predictions on a pre-evaluation set.
    Weights {
        #[arg(long)]
        pre_eval: PathBuf,
        #[command(flatten)]
        preds: PredsArgs,
        #[arg(long, value_enum, default_value_t = BasisArg::F1)]
        basis: BasisArg,
        /// One weight per model, copied into every class.
        #[arg(long)]
        no_classes: bool,
        #[arg(long, value_enum, default_value_t = MissingArg::ScoreAsEmpty)]
        missing: MissingArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Combine prediction files by weighted voting.
    Ensemble {
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        preds: PredsArgs,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::ClassAware)]
        mode: ModeArg,
        #[arg(long, value_enum, default_value_t = CombineArg::Sum)]
        combine: CombineArg,
        /// Vote on undefined-class questions like any other class.
        #[arg(long)]
        no_undefined_fallback: bool,
        #[arg(long, value_enum, default_value_t = EqualityArg::Normalized)]
        equality: EqualityArg,
        #[arg(long, value_enum, default_value_t = FallbackArg::ClassBest, hide = true)]
        no_dup_fallback: FallbackArg,
        #[arg(long)]
        out: PathBuf,
        /// One JSON vote trace per line.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Pairwise agreement between models.
    Compare {
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        preds: PredsArgs,
        #[arg(long, value_enum, default_value_t = MissingArg::ScoreAsEmpty)]
        missing: MissingArg,
        #[arg(long)]
        json: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Generate a synthetic prediction file from an accuracy profile.
    Synth {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        profile: PathBuf,
        #[arg(long)]
        name: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a template SQuAD-format corpus with `--per-class` questions per class.
    SynthCorpus {
        #[arg(long)]
        per_class: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum RulesAction {
    /// Print the effective rules in evaluation order.
    Show,
}

#[derive(Args)]
struct PredsArgs {
    /// `name=path` binding of a model to its prediction file; repeatable.
    #[arg(long = "preds", value_parser = parse_binding, required = true)]
    preds: Vec<(String, PathBuf)>,
}

fn parse_binding(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name.to_string(), path.into())),
        _ => Err(format!("expected name=path, got `{s}`")),
    }
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum GranularityArg {
    Question,
    Paragraph,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum MissingArg {
    ScoreAsEmpty,
    Exclude,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum BasisArg {
    F1,
    Em,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    ClassAware,
    Global,
}

#[derive(Clone, Copy, ValueEnum)]
enum CombineArg {
    Sum,
    Max,
}

#[derive(Clone, Copy, ValueEnum)]
enum EqualityArg {
    Raw,
    Normalized,
}

#[derive(Clone, Copy, ValueEnum)]
enum FallbackArg {
    ClassBest,
    OverallBest,
}

impl From<GranularityArg> for Granularity {
    fn from(g: GranularityArg) -> Self {
        match g {
            GranularityArg::Question => Granularity::Question,
            GranularityArg::Paragraph => Granularity::Paragraph,
        }
    }
}

impl From<MissingArg> for MissingPolicy {
    fn from(m: MissingArg) -> Self {
        match m {
            MissingArg::ScoreAsEmpty => MissingPolicy::ScoreAsEmpty,
            MissingArg::Exclude => MissingPolicy::Exclude,
        }
    }
}

impl From<BasisArg> for MetricBasis {
    fn from(b: BasisArg) -> Self {
        match b {
            BasisArg::F1 => MetricBasis::MeanF1,
            BasisArg::Em => MetricBasis::EmRate,
        }
    }
}

struct Setup {
    rules: ClassRuleSet,
    classifier: Classifier,
}

fn load_context(cli: &Cli) -> Result<Setup> {
    let rules = match &cli.rules {
        Some(path) => ClassRuleSet::load(path)?,
        None => ClassRuleSet::default(),
    };
    let classifier = match cli.classifier.as_str() {
        "phrase" => Classifier::Phrase(rules.clone()),
        other => match other.strip_prefix("length:") {
            Some(edges) => {
                let edges = edges
                    .split(',')
                    .map(|e| e.trim().parse::<usize>())
                    .collect::<Result<Vec<_>, _>>()
                    .with_context(|| format!("bad length edges `{edges}`"))?;
                Classifier::Length(LengthBuckets::new(edges)?)
            }
            None => bail!("unknown classifier `{other}` (expected `phrase` or `length:E1,E2,...`)"),
        },
    };
    Ok(Setup { rules, classifier })
}

fn load_preds(bindings: &[(String, PathBuf)], manifest: &mut ManifestBuilder) -> Result<Vec<PredictionSet>> {
    let mut seen = std::collections::HashSet::new();
    bindings
        .iter()
        .map(|(name, path)| {
            if !seen.insert(name) {
                bail!("model `{name}` bound twice");
            }
            manifest.input(format!("preds:{name}"), path);
            Ok(PredictionSet::load(path, name)?)
        })
        .collect()
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn print_report_summary(report: &EvalReport) {
    println!(
        "{}: f1={:.2} em={:.2} n={}",
        report.model,
        100.0 * report.overall.mean_f1,
        100.0 * report.overall.em_rate,
        report.overall.count
    );
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let ctx = load_context(&cli)?;

    match cli.command {
        Command::Rules { action: RulesAction::Show } => {
            println!("{}", ctx.rules.to_json());
        }

        Command::ClassifyStats { dataset, csv } => {
            let mut m = ManifestBuilder::new("classify-stats");
            m.input("dataset", &dataset);
            let ds = Dataset::load(&dataset)?;
            let table = class_distribution(&ds, &ctx.rules).to_csv();
            print!("{table}");
            if let Some(out) = csv {
                write(&out, &table)?;
                m.output(&out).write_beside(&out)?;
            }
        }

        Command::Split { dataset, fraction, seed, granularity, out_dir } => {
            let mut m = ManifestBuilder::new("split");
            m.input("dataset", &dataset).seed(seed).config(serde_json::json!({
                "fraction": fraction,
                "granularity": granularity,
            }));
            let ds = Dataset::load(&dataset)?;
            let split = split_pre_eval(&ds, fraction, seed, granularity.into())?;
            std::fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
            let train = out_dir.join("train.json");
            let pre_eval = out_dir.join("pre_eval.json");
            let manifest = out_dir.join("split.json");
            split.train.save(&train)?;
            split.pre_eval.save(&pre_eval)?;
            write(&manifest, split.manifest().to_json())?;
            println!(
                "train: {} questions, pre_eval: {} questions",
                split.train.len(),
                split.pre_eval.len()
            );
            m.output(&train).output(&pre_eval).output(&manifest).write_beside(&manifest)?;
        }

        Command::Evaluate { dataset, preds, missing, json, csv } => {
            let mut m = ManifestBuilder::new("evaluate");
            m.input("dataset", &dataset).config(serde_json::json!({
                "missing": missing,
                "classifier": cli.classifier,
            }));
            let ds = Dataset::load(&dataset)?;
            let sets = load_preds(&preds.preds, &mut m)?;
            let reports: Vec<EvalReport> = sets
                .iter()
                .map(|p| evaluate(p, &ds, &ctx.classifier, missing.into()))
                .collect();
            reports.iter().for_each(print_report_summary);
            if let Some(out) = &json {
                write(out, serde_json::to_string_pretty(&reports)?)?;
                m.output(out);
            }
            if let Some(out) = &csv {
                write(out, export_breakdown(Breakdown::Eval(&reports)))?;
                m.output(out);
            }
            if let Some(primary) = json.as_ref().or(csv.as_ref()) {
                m.write_beside(primary)?;
            }
        }

        Command::Weights { pre_eval, preds, basis, no_classes, missing, out } => {
            let mut m = ManifestBuilder::new("weights");
            m.input("pre_eval", &pre_eval).config(serde_json::json!({
                "basis": basis,
                "no_classes": no_classes,
                "missing": missing,
                "classifier": cli.classifier,
            }));
            let ds = Dataset::load(&pre_eval)?;
            let sets = load_preds(&preds.preds, &mut m)?;
            let reports: Vec<EvalReport> = sets
                .iter()
                .map(|p| evaluate(p, &ds, &ctx.classifier, missing.into()))
                .collect();
            let table = if no_classes {
                compute_global_weights(&reports, basis.into())?
            } else {
                compute_class_weights(&reports, basis.into())?
            };
            table.save(&out)?;
            for model in &table.models {
                println!("{model}: global weight {:.4}", table.global_weights[model]);
            }
            println!("best overall: {}", table.best_overall);
            m.output(&out).write_beside(&out)?;
        }

        Command::Ensemble {
            dataset,
            preds,
            weights,
            mode,
            combine,
            no_undefined_fallback,
            equality,
            no_dup_fallback,
            out,
            trace,
        } => {
            let config = VoteConfig {
                mode: match mode {
                    ModeArg::ClassAware => VoteMode::ClassAware,
                    ModeArg::Global => VoteMode::Global,
                },
                combine: match combine {
                    CombineArg::Sum => Combine::Sum,
                    CombineArg::Max => Combine::Max,
                },
                undefined_special_case: !no_undefined_fallback,
                duplicate_equality: match equality {
                    EqualityArg::Raw => DuplicateEquality::Raw,
                    EqualityArg::Normalized => DuplicateEquality::Normalized,
                },
                no_duplicate_fallback: match no_dup_fallback {
                    FallbackArg::ClassBest => NoDuplicateFallback::ClassBest,
                    FallbackArg::OverallBest => NoDuplicateFallback::OverallBest,
                },
            };
            let mut m = ManifestBuilder::new("ensemble");
            m.input("dataset", &dataset)
                .input("weights", &weights)
                .config(serde_json::json!({ "vote": config, "classifier": cli.classifier }));
            let ds = Dataset::load(&dataset)?;
            let sets = load_preds(&preds.preds, &mut m)?;
            let table = WeightTable::load(&weights)?;
            let (ensemble, traces) = run_ensemble(&ds, &sets, &table, &ctx.classifier, &config)?;
            ensemble.save(&out)?;
            m.output(&out);
            if let Some(path) = &trace {
                write(path, traces_to_jsonl(&traces))?;
                m.output(path);
            }
            println!("ensemble answers for {} questions", ensemble.len());
            m.write_beside(&out)?;
        }

        Command::Compare { dataset, preds, missing, json, csv } => {
            if preds.preds.len() < 2 {
                bail!("compare needs at least two --preds bindings");
            }
            let mut m = ManifestBuilder::new("compare");
            m.input("dataset", &dataset).config(serde_json::json!({
                "missing": missing,
                "classifier": cli.classifier,
            }));
            let ds = Dataset::load(&dataset)?;
            let sets = load_preds(&preds.preds, &mut m)?;
            let mut reports = Vec::new();
            for (i, a) in sets.iter().enumerate() {
                for b in &sets[i + 1..] {
                    reports.push(pairwise_similarity(a, b, &ds, &ctx.classifier, missing.into()));
                }
            }
            let mut csv_text = String::new();
            for r in &reports {
                let block = format!(
                    "# {} ({}) vs. {} ({})\n{}# mean of equal F1s: {:.1}%, trues in equal EMs: {} ({:.1}%)\n",
                    r.model_a,
                    sets.iter().find(|s| s.model_name == r.model_a).map_or(0, PredictionSet::len),
                    r.model_b,
                    sets.iter().find(|s| s.model_name == r.model_b).map_or(0, PredictionSet::len),
                    r.to_csv(),
                    100.0 * r.mean_of_equal_f1s,
                    r.trues_in_equal_ems,
                    100.0 * r.trues_in_equal_ems_rate,
                );
                print!("{block}");
                csv_text.push_str(&block);
            }
            if let Some(out) = &json {
                write(out, serde_json::to_string_pretty(&reports)?)?;
                m.output(out);
            }
            if let Some(out) = &csv {
                write(out, &csv_text)?;
                m.output(out);
            }
            if let Some(primary) = json.as_ref().or(csv.as_ref()) {
                m.write_beside(primary)?;
            }
        }

        Command::Synth { dataset, profile, name, out } => {
            let mut m = ManifestBuilder::new("synth");
            m.input("dataset", &dataset).input("profile", &profile);
            let ds = Dataset::load(&dataset)?;
            let profile = AccuracyProfile::load(&profile)?;
            m.seed(profile.seed).config(&profile);
            let generated = generate_predictions(&ds, &profile, &name, &ctx.rules)?;
            generated.predictions.save(&out)?;
            if !generated.sentinel_ids.is_empty() {
                eprintln!(
                    "{} question(s) had no usable context span and got a sentinel answer",
                    generated.sentinel_ids.len()
                );
            }
            m.config(serde_json::json!({
                "profile": profile,
                "name": name,
                "sentinel_ids": generated.sentinel_ids,
            }));
            m.output(&out).write_beside(&out)?;
        }

        Command::SynthCorpus { per_class, seed, out } => {
            let mut m = ManifestBuilder::new("synth-corpus");
            let spec = CorpusSpec::new(QuestionClass::ALL.map(|c| (c, per_class)), seed);
            m.seed(seed).config(&spec);
            generate_dataset(&spec).save(&out)?;
            m.output(&out).write_beside(&out)?;
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<qa_ensemble::Error>() {
        Some(e) if e.is_missing_input() => EXIT_MISSING_INPUT,
        Some(e) if e.is_schema_violation() => EXIT_SCHEMA,
        _ => EXIT_FAILURE,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            // Core errors already embed their cause in the message.
            if err.downcast_ref::<qa_ensemble::Error>().is_some() {
                eprintln!("error: {err}");
            } else {
                eprintln!("error: {err:#}");
            }
            ExitCode::from(exit_code(&err))
        }
    }
}
