//! Batch workflows behind the `hoigen` binary. One TOML run configuration
//! drives every command; `--seed` and `--out` override it.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::augment::{augment_with_summary, AugmentSummary, AugmentationConfig};
use crate::datamodel::{
    load_dataset, load_detections, load_embeddings, load_visual_prototypes, save_dataset, write_detections,
    write_embeddings, write_visual_prototypes, DetectionSet, ImageInfo, LoadOptions,
};
use crate::error::{HoiError, Result};
use crate::eval::{
    self, bias, dataset_classes, eval_report, make_bias_scenario, make_rare_split, make_seen_object_split,
    make_unseen_object_split, BiasCounts, BiasEntry, BiasReport, BiasScenario, HoiClass, SplitKind, SplitSpec,
    DEFAULT_MAX_SPLIT_TRIES, DEFAULT_RARE_THRESHOLD,
};
use crate::funcsim::{cluster_vocabulary, load_clusters, save_clusters, FuncsimConfig};
use crate::jsonl;
use crate::nn::{load_checkpoint, save_checkpoint, train, Checkpoint, TrainConfig, CHECKPOINT_VERSION};
use crate::pipeline::{detect_all, load_hoi_detections, save_hoi_detections, InferenceConfig};
use crate::provenance::Provenance;
use crate::synth::{generate_synthetic, SynthConfig};

pub const DEFAULT_OUT_DIR: &str = "out";

#[derive(Debug, Parser)]
#[command(name = "hoigen", version, about = "Functional-generalization HOI detection head")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Cluster the object vocabulary into functionally similar groups.
    Cluster,
    /// Replicate training triplets onto cluster mates.
    Augment,
    /// Fit the predicate head.
    Train,
    /// Detect interactions from object detections.
    Infer,
    /// Score detections against ground truth.
    Eval,
    /// Build a rare or zero-shot class split.
    Split,
    /// Measure verb-object bias, optionally after skewing the training set.
    Bias,
    /// Write a synthetic toy corpus.
    Synth,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Cluster => "cluster",
            Command::Augment => "augment",
            Command::Train => "train",
            Command::Infer => "infer",
            Command::Eval => "eval",
            Command::Split => "split",
            Command::Bias => "bias",
            Command::Synth => "synth",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Training annotations (possibly augmented).
    pub annotations: Option<PathBuf>,
    pub test_annotations: Option<PathBuf>,
    pub detections: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub visual_prototypes: Option<PathBuf>,
    pub clusters: Option<PathBuf>,
    pub model: Option<PathBuf>,
    /// HOI detections to evaluate or measure.
    pub predictions: Option<PathBuf>,
    pub split: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub kind: SplitKind,
    pub rare_threshold: usize,
    pub n_unseen: usize,
    pub n_unseen_objects: usize,
    pub max_tries: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            kind: SplitKind::Rare,
            rare_threshold: DEFAULT_RARE_THRESHOLD,
            n_unseen: 120,
            n_unseen_objects: 12,
            max_tries: DEFAULT_MAX_SPLIT_TRIES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasPair {
    pub predicate: String,
    pub object: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BiasConfig {
    /// Pairs to report; empty means every pair of the training set.
    pub pairs: Vec<BiasPair>,
    /// Skew the training set for the single configured pair.
    pub scenario: Option<BiasScenario>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub paths: PathsConfig,
    pub data: LoadOptions,
    pub funcsim: FuncsimConfig,
    pub augment: AugmentationConfig,
    pub train: TrainConfig,
    pub inference: InferenceConfig,
    pub split: SplitConfig,
    pub bias: BiasConfig,
    pub synth: SynthConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HoiError::io(path, e))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| HoiError::Config(format!("{}: {e}", path.display())))?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new("")));
        Ok(cfg)
    }

    /// Makes relative paths relative to `base` (the config file's directory).
    fn resolve_paths(&mut self, base: &Path) {
        let p = &mut self.paths;
        for path in [
            &mut p.annotations,
            &mut p.test_annotations,
            &mut p.detections,
            &mut p.embeddings,
            &mut p.visual_prototypes,
            &mut p.clusters,
            &mut p.model,
            &mut p.predictions,
            &mut p.split,
            &mut self.out,
        ]
        .into_iter()
        .flatten()
        {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
    }

    /// Applies command-line overrides; a seed replaces every section seed.
    pub fn apply_overrides(&mut self, seed: Option<u64>, out: Option<PathBuf>) {
        if let Some(s) = seed.or(self.seed) {
            self.seed = Some(s);
            self.funcsim.seed = s;
            self.train.seed = s;
        }
        if out.is_some() {
            self.out = out;
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
    }
}

pub fn run(cli: &Cli) -> Result<Vec<PathBuf>> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(cli.seed, cli.out.clone());
    run_command(cli.command, &cfg)
}

/// Runs one command and returns the files it wrote.
pub fn run_command(command: Command, cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let ctx = Context { cfg, command, out: cfg.out_dir() };
    match command {
        Command::Cluster => cmd_cluster(&ctx),
        Command::Augment => cmd_augment(&ctx),
        Command::Train => cmd_train(&ctx),
        Command::Infer => cmd_infer(&ctx),
        Command::Eval => cmd_eval(&ctx),
        Command::Split => cmd_split(&ctx),
        Command::Bias => cmd_bias(&ctx),
        Command::Synth => cmd_synth(&ctx),
    }
}

/// Parses arguments, runs, reports and returns the process exit code.
pub fn main_exit() -> i32 {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(written) => {
            for path in written {
                eprintln!("wrote {}", path.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

struct Context<'a> {
    cfg: &'a RunConfig,
    command: Command,
    out: PathBuf,
}

impl Context<'_> {
    /// The output directory is left out of the hash so that identical runs
    /// into different directories carry identical headers.
    fn provenance(&self, seed: Option<u64>) -> Provenance {
        let hashed = RunConfig { out: None, ..self.cfg.clone() };
        Provenance::new(self.command.name(), &hashed, seed)
    }

    fn output(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Configured input path, or `fallback` inside the output directory.
    /// Fails with a configuration error when the file does not exist.
    fn input(&self, key: &str, configured: &Option<PathBuf>, fallback: Option<&str>) -> Result<PathBuf> {
        let path = match (configured, fallback) {
            (Some(p), _) => p.clone(),
            (None, Some(name)) => self.output(name),
            (None, None) => {
                return Err(HoiError::Config(format!("paths.{key} is required by `{}`", self.command.name())))
            }
        };
        if !path.is_file() {
            return Err(HoiError::Config(format!("paths.{key}: {} does not exist", path.display())));
        }
        Ok(path)
    }

    fn optional_input(&self, key: &str, configured: &Option<PathBuf>) -> Result<Option<PathBuf>> {
        configured.as_ref().map(|_| self.input(key, configured, None)).transpose()
    }
}

#[derive(Serialize)]
struct Summary<'a, T: Serialize> {
    provenance: Provenance,
    #[serde(flatten)]
    body: &'a T,
}

fn cmd_cluster(ctx: &Context) -> Result<Vec<PathBuf>> {
    let p = &ctx.cfg.paths;
    let prototypes = load_visual_prototypes(&ctx.input("visual_prototypes", &p.visual_prototypes, None)?, None)?;
    let embeddings = load_embeddings(&ctx.input("embeddings", &p.embeddings, None)?, Some(ctx.cfg.data.embedding_dim))?;
    let assignment = cluster_vocabulary(prototypes.keys(), &prototypes, &embeddings, &ctx.cfg.funcsim)?;
    let out = ctx.output("clusters.json");
    save_clusters(&out, &assignment, Some(ctx.provenance(Some(ctx.cfg.funcsim.seed))))?;
    Ok(vec![out])
}

fn cmd_augment(ctx: &Context) -> Result<Vec<PathBuf>> {
    let p = &ctx.cfg.paths;
    let annotations = ctx.input("annotations", &p.annotations, None)?;
    let clusters = load_clusters(&ctx.input("clusters", &p.clusters, Some("clusters.json"))?)?;
    let dataset = load_dataset(&annotations, &ctx.cfg.data)?;
    let (augmented, summary) = augment_with_summary(&dataset, &clusters, &ctx.cfg.augment)?;
    let provenance = ctx.provenance(ctx.cfg.seed);
    let data_out = ctx.output("augmented.jsonl");
    save_dataset(&data_out, &augmented, Some(&provenance))?;
    let summary_out = ctx.output("augment-summary.json");
    eval::write_json(&summary_out, &Summary::<AugmentSummary> { provenance, body: &summary })?;
    Ok(vec![data_out, summary_out])
}

#[derive(Serialize)]
struct EpochLog {
    epoch: usize,
    learning_rate: f64,
    loss: f64,
}

fn cmd_train(ctx: &Context) -> Result<Vec<PathBuf>> {
    let p = &ctx.cfg.paths;
    let dataset = load_dataset(&ctx.input("annotations", &p.annotations, None)?, &ctx.cfg.data)?;
    let embeddings = load_embeddings(&ctx.input("embeddings", &p.embeddings, None)?, Some(ctx.cfg.data.embedding_dim))?;
    let outcome = train(&dataset, &embeddings, &ctx.cfg.train)?;
    let provenance = ctx.provenance(Some(ctx.cfg.train.seed));
    let log_out = ctx.output("train-log.jsonl");
    let log = outcome.epoch_loss.iter().enumerate().map(|(epoch, &loss)| EpochLog {
        epoch,
        learning_rate: ctx.cfg.train.learning_rate(epoch),
        loss,
    });
    jsonl::write_records(jsonl::create(&log_out)?, Some(&provenance), log)?;
    let model_out = ctx.output("model.json");
    save_checkpoint(
        &model_out,
        &Checkpoint {
            format_version: CHECKPOINT_VERSION,
            provenance: Some(provenance),
            train_config: ctx.cfg.train.clone(),
            epoch_loss: outcome.epoch_loss,
            model: outcome.model,
        },
    )?;
    Ok(vec![model_out, log_out])
}

fn cmd_infer(ctx: &Context) -> Result<Vec<PathBuf>> {
    let p = &ctx.cfg.paths;
    let detections: DetectionSet = load_detections(&ctx.input("detections", &p.detections, None)?, &ctx.cfg.data)?;
    let checkpoint = load_checkpoint(&ctx.input("model", &p.model, Some("model.json"))?)?;
    let embeddings = load_embeddings(&ctx.input("embeddings", &p.embeddings, None)?, Some(ctx.cfg.data.embedding_dim))?;
    let mut images: HashMap<String, ImageInfo> = HashMap::new();
    if let Some(path) = ctx.optional_input("test_annotations", &p.test_annotations)? {
        for img in load_dataset(&path, &ctx.cfg.data)?.images {
            images.insert(img.image_id.clone(), img);
        }
    }
    let dets = detect_all(&detections, &images, &checkpoint.model, &embeddings, &ctx.cfg.inference)?;
    let out = ctx.output("hoi_detections.jsonl");
    save_hoi_detections(&out, &dets, Some(&ctx.provenance(ctx.cfg.seed)))?;
    Ok(vec![out])
}

fn cmd_eval(ctx: &Context) -> Result<Vec<PathBuf>> {
    let p = &ctx.cfg.paths;
    let dets = load_hoi_detections(&ctx.input("predictions", &p.predictions, Some("hoi_detections.jsonl"))?)?;
    let gt = load_dataset(&ctx.input("test_annotations", &p.test_annotations, None)?, &ctx.cfg.data)?;
    let split = match ctx.optional_input("split", &p.split)? {
        Some(path) => eval::load_split(&path)?,
        None => SplitSpec::full_only(dataset_classes(&gt)),
    };
    let mut report = eval_report(&dets, &gt, &split)?;
    report.provenance = Some(ctx.provenance(ctx.cfg.seed));
    let out = ctx.output("report.json");
    eval::write_json(&out, &report)?;
    Ok(vec![out])
}

fn cmd_split(ctx: &Context) -> Result<Vec<PathBuf>> {
    let p = &ctx.cfg.paths;
    let s = &ctx.cfg.split;
    let train = load_dataset(&ctx.input("annotations", &p.annotations, None)?, &ctx.cfg.data)?;
    let test = ctx
        .optional_input("test_annotations", &p.test_annotations)?
        .map(|path| load_dataset(&path, &ctx.cfg.data))
        .transpose()?;
    let mut classes: BTreeSet<HoiClass> = dataset_classes(&train);
    if let Some(test) = &test {
        classes.extend(dataset_classes(test));
    }
    let classes: Vec<HoiClass> = classes.into_iter().collect();
    let seed = ctx.cfg.seed.unwrap_or(0);
    let (mut split, recorded_seed) = match s.kind {
        SplitKind::Rare => (make_rare_split(&train, &classes, s.rare_threshold), None),
        SplitKind::SeenObject => (make_seen_object_split(&classes, s.n_unseen, seed, s.max_tries)?, Some(seed)),
        SplitKind::UnseenObject => {
            let objects: Vec<String> = classes.iter().map(|c| c.object_class.clone()).collect();
            (make_unseen_object_split(&classes, &objects, s.n_unseen_objects, seed)?, Some(seed))
        }
        SplitKind::Custom => return Err(HoiError::Config("split.kind = \"custom\" cannot be generated".into())),
    };
    split.provenance = Some(ctx.provenance(recorded_seed));
    let out = ctx.output("split.json");
    eval::save_split(&out, &split)?;
    Ok(vec![out])
}

fn cmd_bias(ctx: &Context) -> Result<Vec<PathBuf>> {
    let p = &ctx.cfg.paths;
    let b = &ctx.cfg.bias;
    let train = load_dataset(&ctx.input("annotations", &p.annotations, None)?, &ctx.cfg.data)?;
    let pairs: Vec<BiasPair> = if b.pairs.is_empty() {
        let mut all = BTreeSet::new();
        for t in &train.triplets {
            for predicate in &t.predicates {
                all.insert(BiasPair { predicate: predicate.clone(), object: t.object_class.clone() });
            }
        }
        all.into_iter().collect()
    } else {
        b.pairs.clone()
    };

    let provenance = ctx.provenance(ctx.cfg.seed);
    let mut written = Vec::new();
    let mut sets: Vec<(&str, BiasCounts)> = vec![("train", BiasCounts::from_dataset(&train))];
    if let Some(scenario) = b.scenario {
        let [pair] = pairs.as_slice() else {
            return Err(HoiError::Config("bias.scenario needs exactly one entry in bias.pairs".into()));
        };
        let skewed = make_bias_scenario(&train, &pair.predicate, &pair.object, scenario)?;
        let out = ctx.output("bias-train.jsonl");
        save_dataset(&out, &skewed, Some(&provenance))?;
        written.push(out);
        sets.push(("scenario", BiasCounts::from_dataset(&skewed)));
    }
    if let Some(path) = ctx.optional_input("test_annotations", &p.test_annotations)? {
        sets.push(("test", BiasCounts::from_dataset(&load_dataset(&path, &ctx.cfg.data)?)));
    }
    if let Some(path) = ctx.optional_input("predictions", &p.predictions)? {
        sets.push(("predictions", BiasCounts::from_detections(&load_hoi_detections(&path)?)));
    }

    let entries = pairs
        .iter()
        .map(|pair| BiasEntry {
            predicate: pair.predicate.clone(),
            object: pair.object.clone(),
            bias: sets
                .iter()
                .map(|(name, counts)| (name.to_string(), bias(counts, &pair.predicate, &pair.object).ok()))
                .collect::<BTreeMap<_, _>>(),
        })
        .collect();
    let report = BiasReport { provenance: Some(provenance), scenario: b.scenario, pairs: entries };
    let out = ctx.output("bias-report.json");
    eval::write_json(&out, &report)?;
    written.push(out);
    Ok(written)
}

#[derive(Serialize)]
struct SynthInfo<'a> {
    config: &'a SynthConfig,
    seed: u64,
    planted: &'a BTreeMap<String, usize>,
    held_out: &'a [HoiClass],
    train_triplets: usize,
    test_triplets: usize,
}

fn cmd_synth(ctx: &Context) -> Result<Vec<PathBuf>> {
    let seed = ctx.cfg.seed.unwrap_or(0);
    let corpus = generate_synthetic(&ctx.cfg.synth, seed)?;
    let provenance = ctx.provenance(Some(seed));
    let prov = Some(&provenance);

    let train = ctx.output("train.jsonl");
    save_dataset(&train, &corpus.train, prov)?;
    let test = ctx.output("test.jsonl");
    save_dataset(&test, &corpus.test, prov)?;
    let detections = ctx.output("detections.jsonl");
    write_detections(jsonl::create(&detections)?, &corpus.detections, prov)?;
    let embeddings = ctx.output("embeddings.jsonl");
    write_embeddings(jsonl::create(&embeddings)?, &corpus.embeddings, prov)?;
    let prototypes = ctx.output("prototypes.jsonl");
    write_visual_prototypes(jsonl::create(&prototypes)?, &corpus.prototypes, prov)?;

    let all = corpus.classes();
    let unseen: BTreeSet<HoiClass> = corpus.held_out.iter().cloned().collect();
    let mut split = SplitSpec::full_only(all.iter().cloned());
    split.name = "held_out".into();
    split.seed = Some(seed);
    split.buckets.insert("unseen".into(), unseen.iter().cloned().collect());
    split.buckets.insert("seen".into(), all.difference(&unseen).cloned().collect());
    split.provenance = Some(provenance.clone());
    let split_out = ctx.output("split.json");
    eval::save_split(&split_out, &split)?;

    let info = ctx.output("synth.json");
    eval::write_json(
        &info,
        &Summary {
            provenance,
            body: &SynthInfo {
                config: &corpus.config,
                seed,
                planted: &corpus.planted,
                held_out: &corpus.held_out,
                train_triplets: corpus.train.triplets.len(),
                test_triplets: corpus.test.triplets.len(),
            },
        },
    )?;
    Ok(vec![train, test, detections, embeddings, prototypes, split_out, info])
}
