//! The `pat-snd` command line.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use patsnd_core::dsbuild::{align, split};
use patsnd_core::evaluation::{evaluate_with_reports, ncs, random_ncs_baseline, roc_points, Evaluator};
use patsnd_core::relclf::{macro_f1, train_relation_classifier, ClassifierConfig};
use patsnd_core::synthetic::{generate, SyntheticConfig};
use patsnd_core::training::train_with_clock;
use patsnd_core::{
    seeded_rng, FactInstance, InstanceLabel, KnowledgeBase, RelationSource, TextEncoder,
};

use crate::checkpoint::{Checkpoint, ClassifierCheckpoint};
use crate::encoders::{EncoderKind, EncoderSpec, LoadedEncoder};
use crate::formats::{
    read_annotations, read_corpus, read_instances, read_kb, read_kr_triples, read_relations,
    read_train_config, write_instances, write_json, write_jsonl, write_kb, write_relations,
    write_roc_csv, write_train_config, write_train_log, EvalSummary, ReportLine, ScoreLine,
};
use crate::xml::import_file;

#[derive(Debug, Parser)]
#[command(name = "pat-snd", version, about = "Knowledge-grounded semantic novelty detection")]
pub struct Cli {
    /// Seed for every randomized step of the invocation.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a knowledge base and print an index summary.
    BuildKb(BuildKbArgs),
    /// Align a corpus with known triples and split it, or import annotated XML.
    BuildDataset(BuildDatasetArgs),
    /// Train the relation classifier.
    TrainRelclf(TrainRelclfArgs),
    /// Train the novelty scorer.
    Train(TrainArgs),
    /// Write one novelty score per instance as JSON Lines.
    Score(ScoreArgs),
    /// Write one attention report per instance as JSON Lines.
    Explain(ScoreArgs),
    /// Compute AUC and NCS on a labelled test set.
    Evaluate(EvaluateArgs),
    /// Write the seeded synthetic benchmark.
    GenSynthetic(GenSyntheticArgs),
}

#[derive(Debug, Args)]
pub struct KbArgs {
    /// Knowledge base, JSON Lines.
    #[arg(long)]
    pub kb: PathBuf,
    /// Relation catalog, JSON Lines.
    #[arg(long)]
    pub relations: Option<PathBuf>,
}

impl KbArgs {
    fn load(&self) -> Result<KnowledgeBase> {
        Ok(read_kb(&self.kb, self.relations.as_deref())?)
    }
}

#[derive(Debug, Args)]
pub struct BuildKbArgs {
    #[command(flatten)]
    pub kb: KbArgs,
    /// Summary output (JSON); stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["corpus", "xml"])))]
pub struct BuildDatasetArgs {
    /// Corpus sentences with entity mentions, JSON Lines.
    #[arg(long, requires = "kr")]
    pub corpus: Option<PathBuf>,
    /// Known triples `{"e1","relation","e2"}`, JSON Lines.
    #[arg(long)]
    pub kr: Option<PathBuf>,
    /// Annotated instances in XML.
    #[arg(long)]
    pub xml: Option<PathBuf>,
    /// Relation for XML instances that do not name one.
    #[arg(long)]
    pub relation: Option<String>,
    /// Label for XML instances that do not carry one.
    #[arg(long, value_enum, default_value = "novel")]
    pub label: LabelArg,
    /// Share of instances reserved for the test pool.
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum LabelArg {
    Normal,
    Novel,
}

impl From<LabelArg> for InstanceLabel {
    fn from(l: LabelArg) -> Self {
        match l {
            LabelArg::Normal => InstanceLabel::Normal,
            LabelArg::Novel => InstanceLabel::Novel,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainRelclfArgs {
    /// Training instances, JSON Lines.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Relation catalog; defaults to the relations seen in the dataset.
    #[arg(long)]
    pub relations: Option<PathBuf>,
    /// Flat `key = value` classifier config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Where to write the classifier.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Held-out instances; prints macro F1 when given.
    #[arg(long)]
    pub eval_dataset: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "fallback")]
    pub encoder: EncoderKind,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub kb: KbArgs,
    /// Training instances; only NORMAL ones are used.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Flat `key = value` training config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Where to write the model.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Training log, JSON Lines.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "fallback")]
    pub encoder: EncoderKind,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("relsource").required(true).args(["oracle_relations", "relclf"])))]
pub struct RelationArgs {
    /// Use each instance's gold relation.
    #[arg(long)]
    pub oracle_relations: bool,
    /// Relation classifier checkpoint.
    #[arg(long)]
    pub relclf: Option<PathBuf>,
}

impl RelationArgs {
    fn load(&self) -> Result<(RelationSource, Option<LoadedEncoder>)> {
        match &self.relclf {
            Some(path) if !self.oracle_relations => {
                let ck = ClassifierCheckpoint::load(path)?;
                let enc = ck.encoder.load()?;
                Ok((RelationSource::Classifier(ck.model), Some(enc)))
            }
            _ => Ok((RelationSource::Oracle, None)),
        }
    }
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub kb: KbArgs,
    /// Instances, JSON Lines.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Trained model.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub relations: RelationArgs,
    /// Output, JSON Lines; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub score: ScoreArgs,
    /// Key-property annotations, JSON Lines.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Top-N cut-offs for NCS.
    #[arg(long = "top-n", default_values_t = [1usize, 2, 3])]
    pub top_n: Vec<usize>,
    /// Shuffles for the random NCS baseline; 0 skips it.
    #[arg(long, default_value_t = 1000)]
    pub baseline_trials: usize,
    /// ROC curve output, CSV.
    #[arg(long)]
    pub roc: Option<PathBuf>,
    /// Attention reports of the annotated instances, JSON Lines.
    #[arg(long)]
    pub reports: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenSyntheticArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 30)]
    pub entities_per_type: usize,
    #[arg(long, default_value_t = 2000)]
    pub train: usize,
    #[arg(long, default_value_t = 200)]
    pub test_normal: usize,
    #[arg(long, default_value_t = 200)]
    pub test_novel: usize,
}

/// Parses `std::env::args` and runs; usage errors exit 2, failures exit 1.
pub fn main() -> ExitCode {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_target(false)
        .try_init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::BuildKb(a) => build_kb(a),
        Command::BuildDataset(a) => build_dataset(a, seed.unwrap_or(0)),
        Command::TrainRelclf(a) => train_relclf(a, seed),
        Command::Train(a) => train(a, seed),
        Command::Score(a) => score(a, false),
        Command::Explain(a) => score(a, true),
        Command::Evaluate(a) => evaluate(a, seed.unwrap_or(0)),
        Command::GenSynthetic(a) => gen_synthetic(a, seed.unwrap_or(0)),
    }
}

fn emit_jsonl<T: Serialize>(out: Option<&Path>, items: &[T]) -> Result<()> {
    match out {
        Some(path) => Ok(write_jsonl(path, items)?),
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            for item in items {
                serde_json::to_writer(&mut lock, item)?;
                lock.write_all(b"\n")?;
            }
            Ok(())
        }
    }
}

fn emit_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    match out {
        Some(path) => Ok(write_json(path, value)?),
        None => {
            println!("{}", serde_json::to_string_pretty(value)?);
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct KbSummary {
    entities: usize,
    relations: usize,
    pairs: usize,
    distinct_properties: usize,
    truncated_entities: usize,
}

fn build_kb(a: BuildKbArgs) -> Result<()> {
    let kb = a.kb.load()?;
    let mut pairs = 0;
    let mut truncated = 0;
    for record in kb.entities() {
        pairs += record.pairs.len();
        if kb.background(&record.entity_id)?.len() < record.pairs.len() {
            truncated += 1;
        }
    }
    let summary = KbSummary {
        entities: kb.len(),
        relations: kb.relations().len(),
        pairs,
        distinct_properties: kb.property_universe().len(),
        truncated_entities: truncated,
    };
    emit_json(a.out.as_deref(), &summary)
}

#[derive(Serialize)]
struct SplitSummary {
    aligned: usize,
    train: usize,
    test_pool: usize,
    achieved_fraction: f64,
    warning: Option<String>,
    seed: u64,
}

fn build_dataset(a: BuildDatasetArgs, seed: u64) -> Result<()> {
    if let Some(xml) = &a.xml {
        let imported = import_file(xml, a.relation.as_deref(), a.label.into())?;
        let mut kb = KnowledgeBase::new();
        for record in imported.entities {
            kb.insert_entity(record)?;
        }
        write_instances(&a.out.join("instances.jsonl"), &imported.instances)?;
        write_kb(&a.out.join("kb.jsonl"), &kb)?;
        log::info!("imported {} instances, {} entities", imported.instances.len(), kb.len());
        return Ok(());
    }
    let corpus_path = a.corpus.as_deref().expect("clap enforces a source");
    let kr_path = a.kr.as_deref().expect("clap enforces --kr with --corpus");
    let corpus = read_corpus(corpus_path)?;
    let kr = read_kr_triples(kr_path)?;
    let instances = align(&corpus, &kr).with_context(|| corpus_path.display().to_string())?;
    let aligned = instances.len();
    let outcome = split(&instances, &mut seeded_rng(seed), a.test_fraction)?;
    if let Some(w) = &outcome.warning {
        log::warn!("{w}");
    }
    write_instances(&a.out.join("train.jsonl"), &outcome.train)?;
    write_instances(&a.out.join("test_pool.jsonl"), &outcome.test_pool)?;
    write_json(
        &a.out.join("split.json"),
        &SplitSummary {
            aligned,
            train: outcome.train.len(),
            test_pool: outcome.test_pool.len(),
            achieved_fraction: outcome.achieved_fraction,
            warning: outcome.warning.clone(),
            seed,
        },
    )?;
    Ok(())
}

fn catalog_of(instances: &[FactInstance]) -> Vec<String> {
    instances
        .iter()
        .map(|i| i.relation_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

fn train_relclf(a: TrainRelclfArgs, seed: Option<u64>) -> Result<()> {
    let train = read_instances(&a.dataset)?;
    let catalog = match &a.relations {
        Some(p) => read_relations(p)?.into_iter().map(|r| r.relation_id).collect(),
        None => catalog_of(&train),
    };
    let mut config = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| p.display().to_string())?;
            toml::from_str::<ClassifierConfig>(&text).with_context(|| p.display().to_string())?
        }
        None => ClassifierConfig::default(),
    };
    if let Some(s) = seed {
        config.seed = s;
    }
    let spec = EncoderSpec::for_kind(a.encoder)?;
    let loaded = spec.load()?;
    let encoder = loaded.as_encoder();
    let model = train_relation_classifier(&train, &catalog, encoder, &config)
        .with_context(|| a.dataset.display().to_string())?;
    if let Some(eval) = &a.eval_dataset {
        let held_out = read_instances(eval)?;
        let f1 = classifier_f1(&RelationSource::Classifier(model.clone()), &held_out, encoder)?;
        println!("{}", serde_json::json!({ "macro_f1": f1, "instances": held_out.len() }));
    }
    ClassifierCheckpoint {
        model,
        encoder: spec,
    }
    .save(&a.checkpoint)?;
    loaded.persist()?;
    Ok(())
}

/// Macro F1 of `source` against the gold relations of `instances`.
pub fn classifier_f1(
    source: &RelationSource,
    instances: &[FactInstance],
    encoder: &dyn TextEncoder,
) -> Result<f64> {
    let predicted = instances
        .iter()
        .map(|i| Ok(source.predict(i, encoder)?.relation_id))
        .collect::<Result<Vec<_>>>()?;
    let gold: Vec<&str> = instances.iter().map(|i| i.relation_id.as_str()).collect();
    let pred: Vec<&str> = predicted.iter().map(String::as_str).collect();
    Ok(macro_f1(&gold, &pred)?)
}

fn train(a: TrainArgs, seed: Option<u64>) -> Result<()> {
    let mut config = match &a.config {
        Some(p) => read_train_config(p)?,
        None => Default::default(),
    };
    if let Some(s) = seed {
        config.seed = s;
    }
    let kb = a.kb.load()?;
    let instances = read_instances(&a.dataset)?;
    let triples: Vec<_> = instances
        .iter()
        .filter(|i| i.label == InstanceLabel::Normal)
        .map(FactInstance::triple)
        .collect();
    if triples.len() < instances.len() {
        log::warn!(
            "{}: skipped {} non-NORMAL instances",
            a.dataset.display(),
            instances.len() - triples.len()
        );
    }
    let spec = EncoderSpec::for_kind(a.encoder)?;
    let loaded = spec.load()?;
    let start = Instant::now();
    let clock = || start.elapsed().as_secs_f64();
    let (model, log) = train_with_clock(&triples, &kb, loaded.as_encoder(), &config, &clock)
        .with_context(|| a.dataset.display().to_string())?;
    for r in &log {
        log::info!("epoch {} loss {:.6} ({:.1}s)", r.epoch, r.mean_loss, r.wall_seconds);
    }
    Checkpoint {
        model,
        encoder: spec,
        config,
    }
    .save(&a.checkpoint)?;
    if let Some(out) = &a.out {
        write_train_log(out, &log)?;
    }
    loaded.persist()?;
    Ok(())
}

struct Scoring {
    kb: KnowledgeBase,
    instances: Vec<FactInstance>,
    checkpoint: Checkpoint,
    encoder: LoadedEncoder,
    source: RelationSource,
    source_encoder: Option<LoadedEncoder>,
}

impl Scoring {
    fn load(a: &ScoreArgs) -> Result<Self> {
        let kb = a.kb.load()?;
        let instances = read_instances(&a.dataset)?;
        let checkpoint = Checkpoint::load(&a.checkpoint)?;
        let encoder = checkpoint.encoder.load()?;
        let (source, source_encoder) = a.relations.load()?;
        Ok(Self {
            kb,
            instances,
            checkpoint,
            encoder,
            source,
            source_encoder,
        })
    }

    fn relation_encoder(&self) -> &dyn TextEncoder {
        self.source_encoder.as_ref().unwrap_or(&self.encoder).as_encoder()
    }

    fn relations(&self) -> Result<Vec<String>> {
        self.instances
            .iter()
            .map(|i| {
                let p = self
                    .source
                    .predict(i, self.relation_encoder())
                    .with_context(|| format!("instance {}", i.id.as_deref().unwrap_or("?")))?;
                Ok(p.relation_id)
            })
            .collect()
    }
}

fn score(a: ScoreArgs, explain: bool) -> Result<()> {
    let s = Scoring::load(&a)?;
    let relations = s.relations()?;
    let mut ev = Evaluator::new(&s.checkpoint.model, &s.kb, s.encoder.as_encoder());
    if explain {
        let mut lines = Vec::with_capacity(s.instances.len());
        for (inst, rel) in s.instances.iter().zip(&relations) {
            let report = ev.explain(&inst.e1.entity_id, rel, &inst.e2.entity_id)?;
            lines.push(ReportLine::new(inst.id.clone(), &report));
        }
        emit_jsonl(a.out.as_deref(), &lines)
    } else {
        let mut lines = Vec::with_capacity(s.instances.len());
        for (inst, rel) in s.instances.iter().zip(&relations) {
            lines.push(ScoreLine {
                id: inst.id.clone(),
                e1: inst.e1.entity_id.clone(),
                relation: rel.clone(),
                e2: inst.e2.entity_id.clone(),
                novelty_score: ev.novelty(&inst.e1.entity_id, rel, &inst.e2.entity_id)?,
                label: inst.label,
            });
        }
        emit_jsonl(a.out.as_deref(), &lines)
    }
}

fn evaluate(a: EvaluateArgs, seed: u64) -> Result<()> {
    let s = Scoring::load(&a.score)?;
    if a.top_n.contains(&0) {
        bail!("--top-n values must be positive");
    }
    let annotations = match &a.annotations {
        Some(p) => read_annotations(p)?,
        None => Vec::new(),
    };
    // Relations are predicted with the classifier's own encoder; the scorer
    // uses the checkpoint's.
    let gold_or_predicted: Vec<FactInstance> = s
        .instances
        .iter()
        .zip(s.relations()?)
        .map(|(i, r)| FactInstance {
            relation_id: r,
            ..i.clone()
        })
        .collect();
    let (mut result, reports) = evaluate_with_reports(
        &s.checkpoint.model,
        &s.kb,
        s.encoder.as_encoder(),
        &gold_or_predicted,
        &RelationSource::Oracle,
        &annotations,
    )?;
    let mut random = BTreeMap::new();
    result.ncs.clear();
    if !reports.is_empty() {
        let mut rng = seeded_rng(seed);
        for &n in &a.top_n {
            result.ncs.insert(n, ncs(&reports, &annotations, n)?);
            if a.baseline_trials > 0 {
                random.insert(
                    n,
                    random_ncs_baseline(&reports, &annotations, n, &mut rng, a.baseline_trials)?,
                );
            }
        }
    }
    if let Some(roc) = &a.roc {
        let labels: Vec<InstanceLabel> = s.instances.iter().map(|i| i.label).collect();
        write_roc_csv(roc, &roc_points(&result.scores, &labels)?)?;
    }
    if let Some(path) = &a.reports {
        let lines: Vec<ReportLine> = reports
            .iter()
            .map(|(id, r)| ReportLine::new(Some(id.clone()), r))
            .collect();
        write_jsonl(path, &lines)?;
    }
    emit_json(a.score.out.as_deref(), &EvalSummary::new(&result, &random, seed))
}

fn gen_synthetic(a: GenSyntheticArgs, seed: u64) -> Result<()> {
    let config = SyntheticConfig {
        seed,
        entities_per_type: a.entities_per_type,
        train_normal: a.train,
        test_normal: a.test_normal,
        test_novel: a.test_novel,
        ..SyntheticConfig::default()
    };
    let bench = generate(&config)?;
    let out = &a.out;
    write_kb(&out.join("kb.jsonl"), &bench.kb)?;
    write_relations(&out.join("relations.jsonl"), bench.kb.relations())?;
    write_instances(&out.join("train.jsonl"), &bench.train)?;
    write_instances(&out.join("test.jsonl"), &bench.test)?;
    write_jsonl(&out.join("annotations.jsonl"), &bench.annotations)?;
    write_train_config(
        &out.join("train.cfg"),
        &patsnd_core::TrainConfig {
            seed,
            ..Default::default()
        },
    )?;
    log::info!(
        "wrote {} entities, {} train and {} test instances to {}",
        bench.kb.len(),
        bench.train.len(),
        bench.test.len(),
        out.display()
    );
    Ok(())
}
