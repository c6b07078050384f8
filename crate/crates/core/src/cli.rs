//! Batch command-line front end.
//!
//! Every command reads one JSON experiment config, so a run is reproduced
//! from the config alone. Outputs land in the config's `out_dir`:
//!
//! | command        | files                                                        |
//! |----------------|--------------------------------------------------------------|
//! | `gen-data`     | `data/{train,val,test}.csv`, `data/profile.json`             |
//! | `stage`        | `partition.json`                                             |
//! | `train`        | `checkpoint.json`, `stage_params.json`, `history.{csv,json}` |
//! | `eval`         | `metrics.{json,csv}`, `predictions.csv`                      |
//! | `analyze`      | `curve_anchor_{a}.csv` per anchor                            |
//! | `run-ablation` | `ablation.csv`, `ablation_summary.csv`                       |
//!
//! Each command also writes `{command}.meta.json` with the config hash, the
//! code version, wall time and whether every output was written.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{generate_synthetic, load_csv, save_csv, split, AmbiguityProfile, Dataset};
use crate::error::Error;
use crate::eval::{anchor_similarity_curve_with, mae, Aggregation, MetricsReport};
use crate::ldl::{LabelSupport, SIGMA_MIN};
use crate::model::{forward, init_model, Activation, ModelCheckpoint};
use crate::staging::{decade_partition, kmeans_1d, StagePartition};
use crate::trainer::{
    predict, train_sav, LossMode, PredictionRule, StageParams, TrainConfig, TrainHistory,
    TrainOutcome,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub out_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub support: LabelSupport,
    pub data: DataSource,
    pub partition: PartitionChoice,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub ablation: AblationConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(SyntheticData),
    Csv(CsvData),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticData {
    pub profile: AmbiguityProfile,
    pub n_per_label: usize,
    #[serde(default = "default_fractions")]
    pub fractions: [f64; 3],
}

fn default_fractions() -> [f64; 3] {
    [0.6, 0.2, 0.2]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvData {
    pub train: PathBuf,
    pub val: PathBuf,
    pub test: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionChoice {
    Kmeans { k: usize },
    Decade,
    Manual { boundaries: Vec<i64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: vec![64, 32],
            activation: Activation::Relu,
        }
    }
}

/// Which outer-loop pieces are switched on.
///
/// `sav` adapts σ starting from the initial stage parameters; with it off σ
/// stays at `fixed_sigma` in every stage. `saw` selects the composite loss
/// with α adaptation; with it off the loss is `train.loss`, or plain KL when
/// that is the composite loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub sav: bool,
    pub saw: bool,
    pub fixed_sigma: f64,
    /// Seeds swept by `run-ablation`.
    pub seeds: Vec<u64>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            sav: true,
            saw: true,
            fixed_sigma: 2.0,
            seeds: (0..5).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub cs_thresholds: Vec<f64>,
    pub anchors: Vec<i64>,
    /// Defaults to `{out_dir}/checkpoint.json`.
    pub checkpoint: Option<PathBuf>,
    pub aggregation: Aggregation,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            cs_thresholds: (0..=10).map(f64::from).collect(),
            anchors: Vec::new(),
            checkpoint: None,
            aggregation: Aggregation::PairMean,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .with_context(|| format!("invalid config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.train.validate()?;
        match &self.data {
            DataSource::Synthetic(s) => {
                s.profile.validate().context("invalid synthetic profile")?;
                if s.profile.support != self.support {
                    bail!("synthetic profile support differs from the config support");
                }
                if s.n_per_label == 0 {
                    bail!("n_per_label must be positive");
                }
                if s.fractions.iter().any(|f| !(*f >= 0.0 && f.is_finite())) {
                    bail!("split fractions must be non-negative");
                }
            }
            DataSource::Csv(_) => {}
        }
        match &self.partition {
            PartitionChoice::Kmeans { k } if *k == 0 => bail!("kmeans k must be positive"),
            PartitionChoice::Manual { boundaries } => {
                StagePartition::manual(boundaries.clone(), self.support)?;
            }
            _ => {}
        }
        if self.model.hidden.contains(&0) {
            bail!("hidden layer widths must be positive");
        }
        if !(self.ablation.fixed_sigma > SIGMA_MIN && self.ablation.fixed_sigma.is_finite()) {
            bail!("fixed_sigma must exceed {SIGMA_MIN}");
        }
        if self.ablation.seeds.is_empty() {
            bail!("ablation needs at least one seed");
        }
        if self.eval.cs_thresholds.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
            bail!("cs thresholds must be non-negative");
        }
        for a in &self.eval.anchors {
            self.support.index_of(*a)?;
        }
        Ok(())
    }

    /// SHA-256 of the effective config as canonical JSON.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    fn data_dir(&self) -> PathBuf {
        self.out_dir.join("data")
    }

    fn checkpoint_path(&self) -> PathBuf {
        self.eval
            .checkpoint
            .clone()
            .unwrap_or_else(|| self.out_dir.join("checkpoint.json"))
    }

    fn with_seed(&self, seed: u64) -> Self {
        let mut cfg = self.clone();
        cfg.seed = seed;
        cfg
    }
}

pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Builds the three splits: synthetic data is regenerated from the seed, CSV
/// data is read from the configured paths.
pub fn load_splits(cfg: &ExperimentConfig) -> anyhow::Result<Splits> {
    match &cfg.data {
        DataSource::Synthetic(s) => {
            let data = generate_synthetic(&s.profile, s.n_per_label, cfg.seed)?;
            let (train, val, test) = split(&data, s.fractions, cfg.seed)?;
            Ok(Splits { train, val, test })
        }
        DataSource::Csv(c) => Ok(Splits {
            train: load_csv(&c.train, cfg.support)?,
            val: load_csv(&c.val, cfg.support)?,
            test: load_csv(&c.test, cfg.support)?,
        }),
    }
}

pub fn build_partition(cfg: &ExperimentConfig, train: &Dataset) -> anyhow::Result<StagePartition> {
    Ok(match &cfg.partition {
        PartitionChoice::Kmeans { k } => kmeans_1d(&train.labels(), *k, cfg.support)?,
        PartitionChoice::Decade => decade_partition(cfg.support),
        PartitionChoice::Manual { boundaries } => {
            StagePartition::manual(boundaries.clone(), cfg.support)?
        }
    })
}

/// Ablation arm: σ adaptation and composite loss on or off.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Arm {
    pub sav: bool,
    pub saw: bool,
}

impl Arm {
    pub const ALL: [Arm; 4] = [
        Arm { sav: false, saw: false },
        Arm { sav: true, saw: false },
        Arm { sav: false, saw: true },
        Arm { sav: true, saw: true },
    ];
}

/// Training config and starting stage parameters for one arm.
pub fn arm_setup(cfg: &ExperimentConfig, arm: Arm, k: usize) -> anyhow::Result<(TrainConfig, StageParams)> {
    let mut tc = cfg.train.clone();
    tc.seed = cfg.seed;
    tc.adapt_sigma = arm.sav;
    if arm.saw {
        tc.loss = LossMode::Saw;
    } else {
        if tc.loss == LossMode::Saw {
            tc.loss = LossMode::Kl;
        }
        tc.adapt_alpha = false;
    }
    let params = if arm.sav {
        StageParams::initial(k)
    } else {
        StageParams::uniform(k, cfg.ablation.fixed_sigma, 0.5)?
    };
    Ok((tc, params))
}

pub fn train_arm(
    cfg: &ExperimentConfig,
    splits: &Splits,
    partition: &StagePartition,
    arm: Arm,
) -> crate::Result<TrainOutcome> {
    let (tc, params) = arm_setup(cfg, arm, partition.num_stages())
        .map_err(|e| Error::param(e.to_string()))?;
    let mut dims = vec![splits.train.feature_dim()];
    dims.extend(&cfg.model.hidden);
    dims.push(cfg.support.size());
    let model = init_model(&dims, cfg.model.activation, cfg.support.size(), cfg.seed)?;
    train_sav(&splits.train, &splits.val, partition, &model, &params, &tc)
}

/// Everything needed to reuse a trained model.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunCheckpoint {
    pub format: String,
    pub version: u32,
    pub model: ModelCheckpoint,
    pub stage_params: StageParams,
    pub partition: StagePartition,
    pub prediction_rule: PredictionRule,
}

impl RunCheckpoint {
    pub const FORMAT: &'static str = "sa-ldl-run";
    pub const VERSION: u32 = 1;

    pub fn new(outcome: &TrainOutcome, partition: &StagePartition, rule: PredictionRule) -> Self {
        RunCheckpoint {
            format: Self::FORMAT.into(),
            version: Self::VERSION,
            model: ModelCheckpoint::from_model(&outcome.model),
            stage_params: outcome.params.clone(),
            partition: partition.clone(),
            prediction_rule: rule,
        }
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read checkpoint {}", path.display()))?;
        let ck: RunCheckpoint = serde_json::from_str(&text)
            .with_context(|| format!("invalid checkpoint {}", path.display()))?;
        if ck.format != Self::FORMAT || ck.version != Self::VERSION {
            bail!(
                "checkpoint {} has format {} v{}, expected {} v{}",
                path.display(),
                ck.format,
                ck.version,
                Self::FORMAT,
                Self::VERSION
            );
        }
        Ok(ck)
    }
}

fn write(path: &Path, contents: &str, outputs: &mut Vec<PathBuf>) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))?;
    outputs.push(path.to_path_buf());
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("output serializes");
    s.push('\n');
    s
}

pub fn cmd_gen_data(cfg: &ExperimentConfig, outputs: &mut Vec<PathBuf>) -> anyhow::Result<()> {
    let DataSource::Synthetic(s) = &cfg.data else {
        bail!("gen-data needs a synthetic data source");
    };
    let splits = load_splits(cfg)?;
    let dir = cfg.data_dir();
    fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    for (name, d) in [("train", &splits.train), ("val", &splits.val), ("test", &splits.test)] {
        let path = dir.join(format!("{name}.csv"));
        save_csv(d, &path)?;
        outputs.push(path);
    }
    write(&dir.join("profile.json"), &to_json(&s.profile), outputs)
}

pub fn cmd_stage(cfg: &ExperimentConfig, outputs: &mut Vec<PathBuf>) -> anyhow::Result<()> {
    let splits = load_splits(cfg)?;
    let partition = build_partition(cfg, &splits.train)?;
    write(&cfg.out_dir.join("partition.json"), &to_json(&partition), outputs)
}

fn write_history(dir: &Path, history: &TrainHistory, outputs: &mut Vec<PathBuf>) -> anyhow::Result<()> {
    write(&dir.join("history.csv"), &history.to_csv(), outputs)?;
    write(&dir.join("history.json"), &to_json(history), outputs)
}

pub fn cmd_train(cfg: &ExperimentConfig, outputs: &mut Vec<PathBuf>) -> anyhow::Result<()> {
    let splits = load_splits(cfg)?;
    let partition = build_partition(cfg, &splits.train)?;
    let arm = Arm {
        sav: cfg.ablation.sav,
        saw: cfg.ablation.saw,
    };
    let outcome = match train_arm(cfg, &splits, &partition, arm) {
        Ok(o) => o,
        Err(Error::TrainingDiverged { epoch, history }) => {
            write_history(&cfg.out_dir, &history, outputs)?;
            bail!("training diverged at epoch {epoch}; history written");
        }
        Err(e) => return Err(e.into()),
    };
    let ck = RunCheckpoint::new(&outcome, &partition, cfg.train.prediction_rule);
    write(&cfg.out_dir.join("checkpoint.json"), &to_json(&ck), outputs)?;
    write(&cfg.out_dir.join("stage_params.json"), &to_json(&outcome.params), outputs)?;
    write_history(&cfg.out_dir, &outcome.history, outputs)
}

fn load_checkpoint(cfg: &ExperimentConfig) -> anyhow::Result<RunCheckpoint> {
    let path = cfg.checkpoint_path();
    if !path.exists() {
        bail!("checkpoint {} does not exist", path.display());
    }
    RunCheckpoint::load(&path)
}

pub fn cmd_eval(cfg: &ExperimentConfig, outputs: &mut Vec<PathBuf>) -> anyhow::Result<()> {
    let ck = load_checkpoint(cfg)?;
    let model = ck.model.to_model()?;
    let test = load_splits(cfg)?.test;
    let preds = predict(&model, &test, ck.prediction_rule)?;
    let labels = test.labels();
    let report = MetricsReport::compute(&preds, &labels, &cfg.eval.cs_thresholds, &ck.partition)?;
    write(&cfg.out_dir.join("metrics.json"), &to_json(&report), outputs)?;
    write(&cfg.out_dir.join("metrics.csv"), &report.to_csv(), outputs)?;
    let mut rows = String::from("id,label,prediction\n");
    for (s, p) in test.samples().iter().zip(&preds) {
        rows.push_str(&format!("{},{},{}\n", s.id, s.label, p));
    }
    write(&cfg.out_dir.join("predictions.csv"), &rows, outputs)
}

pub fn cmd_analyze(cfg: &ExperimentConfig, outputs: &mut Vec<PathBuf>) -> anyhow::Result<()> {
    if cfg.eval.anchors.is_empty() {
        bail!("no anchors configured under eval.anchors");
    }
    let ck = load_checkpoint(cfg)?;
    let model = ck.model.to_model()?;
    let test = load_splits(cfg)?.test;
    let embeddings = test
        .samples()
        .iter()
        .map(|s| forward(&model, &s.features).map(|t| t.embedding))
        .collect::<crate::Result<Vec<_>>>()?;
    let labels = test.labels();
    for a in &cfg.eval.anchors {
        let curve =
            anchor_similarity_curve_with(&embeddings, &labels, *a, cfg.support, cfg.eval.aggregation)?;
        write(&cfg.out_dir.join(format!("curve_anchor_{a}.csv")), &curve.to_csv(), outputs)?;
    }
    Ok(())
}

/// One row of the ablation sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub seed: u64,
    pub arm: Arm,
    pub test_mae: f64,
    pub best_val_l1: f64,
    pub sigmas: Vec<f64>,
    pub alphas: Vec<f64>,
}

/// Trains all four arms for every configured seed.
pub fn run_ablation(cfg: &ExperimentConfig) -> anyhow::Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for seed in &cfg.ablation.seeds {
        let cfg = cfg.with_seed(*seed);
        let splits = load_splits(&cfg)?;
        let partition = build_partition(&cfg, &splits.train)?;
        for arm in Arm::ALL {
            let out = train_arm(&cfg, &splits, &partition, arm)
                .with_context(|| format!("arm sav={} saw={} seed {seed}", arm.sav, arm.saw))?;
            let preds = predict(&out.model, &splits.test, cfg.train.prediction_rule)?;
            rows.push(AblationRow {
                seed: *seed,
                arm,
                test_mae: mae(&preds, &splits.test.labels())?,
                best_val_l1: out.history.best_val_l1().unwrap_or(f64::NAN),
                sigmas: out.params.sigmas(),
                alphas: out.params.alphas(),
            });
        }
    }
    Ok(rows)
}

/// Mean test MAE per arm, in [`Arm::ALL`] order.
pub fn ablation_means(rows: &[AblationRow]) -> Vec<(Arm, f64, usize)> {
    Arm::ALL
        .iter()
        .map(|arm| {
            let v: Vec<f64> = rows.iter().filter(|r| r.arm == *arm).map(|r| r.test_mae).collect();
            (*arm, v.iter().sum::<f64>() / v.len() as f64, v.len())
        })
        .collect()
}

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(";")
}

pub fn cmd_run_ablation(cfg: &ExperimentConfig, outputs: &mut Vec<PathBuf>) -> anyhow::Result<()> {
    let rows = run_ablation(cfg)?;
    let mut csv = String::from("seed,sav,saw,test_mae,best_val_l1,sigmas,alphas\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.seed,
            r.arm.sav,
            r.arm.saw,
            r.test_mae,
            r.best_val_l1,
            join(&r.sigmas),
            join(&r.alphas)
        ));
    }
    write(&cfg.out_dir.join("ablation.csv"), &csv, outputs)?;
    let mut summary = String::from("sav,saw,mean_test_mae,runs\n");
    for (arm, m, n) in ablation_means(&rows) {
        summary.push_str(&format!("{},{},{},{}\n", arm.sav, arm.saw, m, n));
    }
    write(&cfg.out_dir.join("ablation_summary.csv"), &summary, outputs)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum CommandKind {
    /// Generate synthetic train/val/test CSVs.
    GenData,
    /// Partition the label range into stages.
    Stage,
    /// Train one model with the configured ablation switches.
    Train,
    /// Score a checkpoint on the test split.
    Eval,
    /// Write anchor similarity curves from a checkpoint.
    Analyze,
    /// Train all four ablation arms over the configured seeds.
    RunAblation,
}

impl CommandKind {
    pub fn name(self) -> &'static str {
        match self {
            CommandKind::GenData => "gen-data",
            CommandKind::Stage => "stage",
            CommandKind::Train => "train",
            CommandKind::Eval => "eval",
            CommandKind::Analyze => "analyze",
            CommandKind::RunAblation => "run-ablation",
        }
    }
}

#[derive(Clone, Debug, Default, Args)]
pub struct Overrides {
    /// Experiment config JSON.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Replace the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Replace the output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Comma-separated CS thresholds (eval only).
    #[arg(long, global = true, value_delimiter = ',')]
    pub cs_thresholds: Option<Vec<f64>>,
}

#[derive(Debug, Parser)]
#[command(name = "sa-ldl", version, about = "Stage-wise adaptive label distribution learning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: CommandKind,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Serialize)]
struct RunMeta<'a> {
    meta_version: u32,
    command: &'a str,
    code_version: &'a str,
    config_sha256: String,
    seed: u64,
    started_unix_secs: u64,
    wall_time_secs: f64,
    complete: bool,
    error: Option<String>,
    outputs: Vec<String>,
}

/// Loads the config, applies overrides and validates it.
pub fn resolve_config(overrides: &Overrides) -> anyhow::Result<ExperimentConfig> {
    let Some(path) = &overrides.config else {
        bail!("--config <path> is required");
    };
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &overrides.out {
        cfg.out_dir = out.clone();
    }
    if let Some(t) = &overrides.cs_thresholds {
        cfg.eval.cs_thresholds = t.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs one command and writes its metadata file. Returns the outputs.
pub fn execute(command: CommandKind, cfg: &ExperimentConfig) -> anyhow::Result<Vec<PathBuf>> {
    let start = Instant::now();
    let started_unix_secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    let mut outputs = Vec::new();
    let result = match command {
        CommandKind::GenData => cmd_gen_data(cfg, &mut outputs),
        CommandKind::Stage => cmd_stage(cfg, &mut outputs),
        CommandKind::Train => cmd_train(cfg, &mut outputs),
        CommandKind::Eval => cmd_eval(cfg, &mut outputs),
        CommandKind::Analyze => cmd_analyze(cfg, &mut outputs),
        CommandKind::RunAblation => cmd_run_ablation(cfg, &mut outputs),
    };
    let meta = RunMeta {
        meta_version: 1,
        command: command.name(),
        code_version: env!("CARGO_PKG_VERSION"),
        config_sha256: cfg.hash(),
        seed: cfg.seed,
        started_unix_secs,
        wall_time_secs: start.elapsed().as_secs_f64(),
        complete: result.is_ok(),
        error: result.as_ref().err().map(|e| format!("{e:#}")),
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
    };
    let meta_path = cfg.out_dir.join(format!("{}.meta.json", command.name()));
    let mut ignored = Vec::new();
    let meta_written = write(&meta_path, &to_json(&meta), &mut ignored);
    result?;
    meta_written?;
    Ok(outputs)
}

pub fn run(cli: &Cli) -> anyhow::Result<Vec<PathBuf>> {
    let cfg = resolve_config(&cli.overrides)?;
    execute(cli.command, &cfg)
}
