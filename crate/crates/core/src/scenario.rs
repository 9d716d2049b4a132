//! Scenario configuration, multi-seed runs and CSV export.
//!
//! A scenario fixes two switches: whether parameters are noised and which
//! client-selection policy runs.
//!
//! | scenario | noise | policy |
//! |----------|-------|--------|
//! | baseline | σ = 0 | random |
//! | dp       | σ > 0 | random |
//! | ea       | σ = 0 | energy-aware |
//! | dp_ea    | σ > 0 | energy-aware |
//!
//! Configs are TOML. Unknown keys are rejected; omitted keys take the
//! defaults documented on [`ScenarioConfig`]. Every CSV starts with a comment
//! line carrying the schema version, a hash of the resolved config and the
//! seed list, so a run can be replayed exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{self, Dataset};
use crate::error::{Error, Result};
use crate::fed::{self, FedConfig, FedData, TrainingOutcome};
use crate::fewshot;
use crate::metrics;
use crate::model::{Activation, ModelKind};
use crate::rng::{derive_seed, Purpose};
use crate::sched::{CostModel, FleetConfig, Policy, SchedulerConfig, Scheduler};
use crate::secure_agg;
use crate::train::{ModelSpec, TrainConfig};

pub const SCHEMA_VERSION: u32 = 1;
/// Noise used by dp scenarios when the config leaves `noise_std` out.
pub const DEFAULT_DP_NOISE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Baseline,
    Dp,
    Ea,
    DpEa,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::Baseline, Scenario::Dp, Scenario::Ea, Scenario::DpEa];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Baseline => "baseline",
            Scenario::Dp => "dp",
            Scenario::Ea => "ea",
            Scenario::DpEa => "dp_ea",
        }
    }

    pub fn noisy(self) -> bool {
        matches!(self, Scenario::Dp | Scenario::DpEa)
    }

    pub fn policy(self) -> Policy {
        match self {
            Scenario::Baseline | Scenario::Dp => Policy::Random,
            Scenario::Ea | Scenario::DpEa => Policy::EnergyAware,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSpec {
    Blobs {
        #[serde(default = "defaults::num_classes")]
        num_classes: usize,
        #[serde(default = "defaults::feature_dim")]
        feature_dim: usize,
        #[serde(default = "defaults::samples_per_class")]
        samples_per_class: usize,
        #[serde(default = "defaults::class_separation")]
        class_separation: f64,
    },
    Csv {
        path: PathBuf,
        #[serde(default = "defaults::label_column")]
        label_column: String,
    },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Blobs {
            num_classes: defaults::num_classes(),
            feature_dim: defaults::feature_dim(),
            samples_per_class: defaults::samples_per_class(),
            class_separation: defaults::class_separation(),
        }
    }
}

mod defaults {
    pub fn num_classes() -> usize {
        5
    }
    pub fn feature_dim() -> usize {
        16
    }
    pub fn samples_per_class() -> usize {
        100
    }
    pub fn class_separation() -> f64 {
        1.0
    }
    pub fn label_column() -> String {
        "label".into()
    }
}

/// File representation; every field optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    scenario: Option<Scenario>,
    model: Option<ModelKind>,
    compare_models: Option<Vec<ModelKind>>,
    dataset: Option<DatasetSpec>,
    num_clients: Option<usize>,
    clients_per_round: Option<usize>,
    shots_per_class: Option<usize>,
    local_epochs: Option<usize>,
    rounds: Option<usize>,
    noise_std: Option<f64>,
    clip_norm: Option<f64>,
    delta: Option<f64>,
    learning_rate: Option<f64>,
    l2_lambda: Option<f64>,
    max_inner_iters: Option<usize>,
    grad_tolerance: Option<f64>,
    hidden: Option<Vec<usize>>,
    activation: Option<Activation>,
    meta_eta: Option<f64>,
    meta_support_fraction: Option<f64>,
    standardize: Option<bool>,
    secure_agg: Option<bool>,
    fraction_bits: Option<u32>,
    test_fraction: Option<f64>,
    seeds: Option<Vec<u64>>,
    scheduler: Option<SchedulerConfig>,
    cost: Option<CostModel>,
    fleet: Option<FleetConfig>,
}

/// Fully resolved scenario configuration.
///
/// Defaults: 12 clients, 9 per round, 5 shots per class, 30 rounds, 2 local
/// epochs, σ = 0.1 for dp scenarios (0 otherwise), no clipping, δ = 1e-5,
/// 24 fraction bits, seeds 1..=5, blobs with C = 5, d = 16, 100 samples per
/// class, separation 1.0, a 30% test split, standardization on, MLP hidden
/// layer of 32 relu units.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioConfig {
    /// Absent for comparison-only configs.
    pub scenario: Option<Scenario>,
    pub model: ModelKind,
    pub compare_models: Vec<ModelKind>,
    pub dataset: DatasetSpec,
    pub num_clients: usize,
    pub clients_per_round: usize,
    pub shots_per_class: usize,
    pub rounds: usize,
    /// Noise for this scenario (0 unless noisy).
    pub noise_std: f64,
    /// Noise the dp scenarios use in a comparison.
    pub dp_noise_std: f64,
    pub clip_norm: Option<f64>,
    pub delta: f64,
    pub train: TrainConfig,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub meta_eta: f64,
    pub meta_support_fraction: f64,
    pub standardize: bool,
    pub secure_agg: bool,
    pub fraction_bits: u32,
    pub test_fraction: f64,
    pub seeds: Vec<u64>,
    pub scheduler: SchedulerConfig,
    pub cost: CostModel,
    pub fleet: FleetConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        resolve(RawConfig::default()).expect("defaults are valid")
    }
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn resolve(raw: RawConfig) -> Result<ScenarioConfig> {
    let train_defaults = TrainConfig::default();
    let dp_noise = match raw.scenario {
        Some(s) if !s.noisy() => DEFAULT_DP_NOISE,
        _ => raw.noise_std.unwrap_or(DEFAULT_DP_NOISE),
    };
    let noise_std = match raw.scenario {
        Some(s) if s.noisy() => {
            if !(dp_noise > 0.0) {
                return Err(cfg_err(format!(
                    "noise_std: scenario {} requires noise_std > 0, got {dp_noise}",
                    s.name()
                )));
            }
            dp_noise
        }
        Some(s) => {
            let n = raw.noise_std.unwrap_or(0.0);
            if n != 0.0 {
                return Err(cfg_err(format!(
                    "noise_std: scenario {} runs without noise, got {n}",
                    s.name()
                )));
            }
            0.0
        }
        None => 0.0,
    };
    let cfg = ScenarioConfig {
        scenario: raw.scenario,
        model: raw.model.unwrap_or(ModelKind::Lr),
        compare_models: raw.compare_models.unwrap_or_else(|| vec![ModelKind::Lr, ModelKind::Mlp]),
        dataset: raw.dataset.unwrap_or_default(),
        num_clients: raw.num_clients.unwrap_or(12),
        clients_per_round: raw.clients_per_round.unwrap_or(9),
        shots_per_class: raw.shots_per_class.unwrap_or(5),
        rounds: raw.rounds.unwrap_or(30),
        noise_std,
        dp_noise_std: dp_noise,
        clip_norm: raw.clip_norm,
        delta: raw.delta.unwrap_or(1e-5),
        train: TrainConfig {
            local_epochs: raw.local_epochs.unwrap_or(train_defaults.local_epochs),
            learning_rate: raw.learning_rate.unwrap_or(train_defaults.learning_rate),
            l2_lambda: raw.l2_lambda.unwrap_or(train_defaults.l2_lambda),
            max_inner_iters: raw.max_inner_iters.unwrap_or(train_defaults.max_inner_iters),
            grad_tolerance: raw.grad_tolerance.unwrap_or(train_defaults.grad_tolerance),
        },
        hidden: raw.hidden.unwrap_or_else(|| vec![32]),
        activation: raw.activation.unwrap_or(Activation::Relu),
        meta_eta: raw.meta_eta.unwrap_or(0.0),
        meta_support_fraction: raw.meta_support_fraction.unwrap_or(0.0),
        standardize: raw.standardize.unwrap_or(true),
        secure_agg: raw.secure_agg.unwrap_or(false),
        fraction_bits: raw.fraction_bits.unwrap_or(secure_agg::DEFAULT_FRACTION_BITS),
        test_fraction: raw.test_fraction.unwrap_or(0.3),
        seeds: raw.seeds.unwrap_or_else(|| (1..=5).collect()),
        scheduler: raw.scheduler.unwrap_or_default(),
        cost: raw.cost.unwrap_or_default(),
        fleet: raw.fleet.unwrap_or_default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_clients", self.num_clients),
            ("clients_per_round", self.clients_per_round),
            ("shots_per_class", self.shots_per_class),
            ("rounds", self.rounds),
            ("local_epochs", self.train.local_epochs),
            ("max_inner_iters", self.train.max_inner_iters),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(cfg_err(format!("{key}: must be >= 1")));
            }
        }
        if self.clients_per_round > self.num_clients {
            return Err(cfg_err(format!(
                "clients_per_round: {} exceeds num_clients {}",
                self.clients_per_round, self.num_clients
            )));
        }
        if self.seeds.is_empty() {
            return Err(cfg_err("seeds: at least one seed is required"));
        }
        if self.compare_models.is_empty() {
            return Err(cfg_err("compare_models: at least one model is required"));
        }
        if self.hidden.contains(&0) {
            return Err(cfg_err("hidden: layer widths must be >= 1"));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(cfg_err(format!("test_fraction: must be in (0, 1), got {}", self.test_fraction)));
        }
        if !(0.0..1.0).contains(&self.meta_support_fraction) {
            return Err(cfg_err(format!(
                "meta_support_fraction: must be in [0, 1), got {}",
                self.meta_support_fraction
            )));
        }
        if !(self.meta_eta >= 0.0 && self.meta_eta.is_finite()) {
            return Err(cfg_err("meta_eta: must be non-negative"));
        }
        if !(self.dp_noise_std > 0.0 && self.dp_noise_std.is_finite()) {
            return Err(cfg_err("noise_std: must be positive for dp scenarios"));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(cfg_err(format!("clip_norm: must be positive, got {c}")));
            }
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(cfg_err(format!("delta: must be in (0, 1), got {}", self.delta)));
        }
        if !(secure_agg::MIN_FRACTION_BITS..=secure_agg::MAX_FRACTION_BITS).contains(&self.fraction_bits) {
            return Err(cfg_err(format!("fraction_bits: must be in [8, 30], got {}", self.fraction_bits)));
        }
        if let DatasetSpec::Blobs { num_classes, feature_dim, samples_per_class, class_separation } = &self.dataset {
            if *num_classes < 2 || *feature_dim == 0 || *samples_per_class < 2 || !(*class_separation >= 0.0) {
                return Err(cfg_err(
                    "dataset: blobs need num_classes >= 2, feature_dim >= 1, samples_per_class >= 2, class_separation >= 0",
                ));
            }
        }
        let wrap = |e: Error| cfg_err(e.to_string());
        self.train.validate().map_err(wrap)?;
        self.scheduler.validate().map_err(wrap)?;
        self.cost.validate().map_err(wrap)?;
        self.fleet.validate().map_err(wrap)?;
        Ok(())
    }

    /// Copy configured for one scenario of a comparison.
    pub fn for_scenario(&self, scenario: Scenario, model: ModelKind) -> Self {
        let mut c = self.clone();
        c.scenario = Some(scenario);
        c.model = model;
        c.noise_std = if scenario.noisy() { self.dp_noise_std } else { 0.0 };
        c
    }

    /// First 16 hex digits of SHA-256 over the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        hex::encode(&digest[..8])
    }

    fn seed_list(&self) -> String {
        self.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(";")
    }

    fn header(&self, kind: &str) -> String {
        format!(
            "# affr {kind} v{SCHEMA_VERSION} config={} seeds={}\n",
            self.hash(),
            self.seed_list()
        )
    }
}

/// Parses TOML text, applying `key=value` overrides first. Override values
/// are TOML literals; anything that does not parse as one is taken as a string.
pub fn parse_config_str(text: &str, overrides: &[String]) -> Result<ScenarioConfig> {
    let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| cfg_err(e.to_string()))?;
    for item in overrides {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| cfg_err(format!("override {item:?} is not key=value")))?;
        let (key, value) = (key.trim(), value.trim());
        let patch: toml::Table = format!("{key} = {value}")
            .parse()
            .or_else(|_| format!("{key} = {}", toml::Value::String(value.to_string())).parse())
            .map_err(|e: toml::de::Error| cfg_err(format!("override {item:?}: {e}")))?;
        merge(&mut table, patch);
    }
    let raw: RawConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| cfg_err(e.to_string()))?;
    resolve(raw)
}

fn merge(into: &mut toml::Table, patch: toml::Table) {
    for (k, v) in patch {
        match (into.get_mut(&k), v) {
            (Some(toml::Value::Table(dst)), toml::Value::Table(src)) => merge(dst, src),
            (_, v) => {
                into.insert(k, v);
            }
        }
    }
}

pub fn parse_config(path: impl AsRef<Path>, overrides: &[String]) -> Result<ScenarioConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| cfg_err(format!("{}: {e}", path.display())))?;
    parse_config_str(&text, overrides)
}

/// Outcome of one seed.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub outcome: TrainingOutcome,
}

impl SeedRun {
    pub fn final_accuracy(&self) -> f64 {
        self.outcome.logs.last().map_or(0.0, |l| l.global_accuracy)
    }

    /// Dropped / selected, pooled over rounds.
    pub fn dropout_rate(&self) -> f64 {
        let selected: usize = self.outcome.logs.iter().map(|l| l.selected_clients.len()).sum();
        let dropped: usize = self.outcome.logs.iter().map(|l| l.dropped_clients.len()).sum();
        if selected == 0 {
            0.0
        } else {
            dropped as f64 / selected as f64
        }
    }

    pub fn mean_participants(&self) -> f64 {
        let n = self.outcome.logs.len().max(1) as f64;
        self.outcome.logs.iter().map(|l| l.completed_clients.len() as f64).sum::<f64>() / n
    }

    pub fn epsilon(&self) -> f64 {
        self.outcome.logs.last().map_or(0.0, |l| l.epsilon_spent)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub scenario: Scenario,
    pub model: ModelKind,
    pub seeds: Vec<u64>,
    pub final_accuracy: Vec<f64>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub dropout_rate: Vec<f64>,
    pub mean_dropout_rate: f64,
    pub std_dropout_rate: f64,
    pub mean_participants: f64,
    pub epsilon_spent: f64,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl RunSummary {
    pub fn from_runs(scenario: Scenario, model: ModelKind, runs: &[SeedRun]) -> Self {
        let final_accuracy: Vec<f64> = runs.iter().map(SeedRun::final_accuracy).collect();
        let dropout_rate: Vec<f64> = runs.iter().map(SeedRun::dropout_rate).collect();
        let (mean_accuracy, std_accuracy) = mean_std(&final_accuracy);
        let (mean_dropout_rate, std_dropout_rate) = mean_std(&dropout_rate);
        let participants: Vec<f64> = runs.iter().map(SeedRun::mean_participants).collect();
        Self {
            scenario,
            model,
            seeds: runs.iter().map(|r| r.seed).collect(),
            final_accuracy,
            mean_accuracy,
            std_accuracy,
            dropout_rate,
            mean_dropout_rate,
            std_dropout_rate,
            mean_participants: mean_std(&participants).0,
            epsilon_spent: runs.first().map_or(0.0, SeedRun::epsilon),
        }
    }
}

fn load_dataset(cfg: &ScenarioConfig, seed: u64) -> Result<Dataset> {
    match &cfg.dataset {
        DatasetSpec::Blobs { num_classes, feature_dim, samples_per_class, class_separation } => data::generate_blobs(
            *num_classes,
            *feature_dim,
            *samples_per_class,
            *class_separation,
            derive_seed(seed, Purpose::Data, 0, 0),
        ),
        DatasetSpec::Csv { path, label_column } => data::load_csv(path, label_column),
    }
}

/// Runs one seed of a fully specified scenario.
pub fn run_seed(cfg: &ScenarioConfig, seed: u64) -> Result<SeedRun> {
    let scenario = cfg
        .scenario
        .ok_or_else(|| cfg_err("scenario: required for a single run"))?;
    let full = load_dataset(cfg, seed)?;
    let (mut train, mut test) = data::train_test_split(&full, cfg.test_fraction, derive_seed(seed, Purpose::Split, 0, 0))?;
    if cfg.standardize {
        let scaler = data::fit_standardizer(&train);
        train = scaler.transform(&train)?;
        test = scaler.transform(&test)?;
    }
    let (pool, support) = fed::carve_support(&train, cfg.meta_support_fraction, seed)?;
    let shards = fewshot::partition(
        &pool,
        cfg.num_clients,
        cfg.shots_per_class,
        derive_seed(seed, Purpose::Partition, 0, 0),
    )?;
    let fleet = cfg.fleet.build(cfg.num_clients, seed);
    let mut scheduler = Scheduler::new(fleet, scenario.policy(), cfg.clients_per_round, cfg.scheduler, cfg.cost, seed)?;
    let fed_cfg = FedConfig {
        rounds: cfg.rounds,
        model: ModelSpec {
            kind: cfg.model,
            feature_dim: pool.feature_dim(),
            num_classes: pool.num_classes(),
            hidden: cfg.hidden.clone(),
            activation: cfg.activation,
        },
        noise_std: cfg.noise_std,
        clip_norm: cfg.clip_norm,
        delta: cfg.delta,
        meta_eta: cfg.meta_eta,
        train: cfg.train.clone(),
        fraction_bits: cfg.fraction_bits,
        master_seed: seed,
    };
    let data = FedData {
        train: &pool,
        shards: &shards,
        test: &test,
        support: support.as_ref(),
    };
    let outcome = fed::run_training(&fed_cfg, &data, &mut scheduler, cfg.secure_agg)?;
    Ok(SeedRun { seed, outcome })
}

/// Runs every configured seed (in parallel; results stay in seed order).
pub fn run_seeds(cfg: &ScenarioConfig) -> Result<Vec<SeedRun>> {
    cfg.seeds.par_iter().map(|&s| run_seed(cfg, s)).collect()
}

fn num(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v}")
    }
}

fn write_table(path: &Path, header_line: &str, columns: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    let mut buf = header_line.as_bytes().to_vec();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(columns)?;
        for row in rows {
            w.write_record(&row)?;
        }
        w.flush()?;
    }
    fs::write(path, buf)?;
    Ok(())
}

pub const ROUND_COLUMNS: [&str; 9] = [
    "round",
    "scenario",
    "model",
    "seed",
    "accuracy",
    "selected",
    "completed",
    "dropped",
    "epsilon_spent",
];

fn round_rows(scenario: Scenario, model: ModelKind, run: &SeedRun) -> Vec<Vec<String>> {
    run.outcome
        .logs
        .iter()
        .map(|l| {
            vec![
                l.round.to_string(),
                scenario.name().into(),
                model.name().into(),
                run.seed.to_string(),
                num(l.global_accuracy),
                l.selected_clients.len().to_string(),
                l.completed_clients.len().to_string(),
                l.dropped_clients.len().to_string(),
                num(l.epsilon_spent),
            ]
        })
        .collect()
}

fn write_report(path: &Path, header_line: &str, run: &SeedRun) -> Result<()> {
    let cm = &run.outcome.final_confusion;
    let scores = metrics::per_class_prf(cm);
    let avg = metrics::macro_average(&scores);
    let mut out = String::from(header_line);
    out.push_str("class,precision,recall,f1,support\n");
    for (c, s) in scores.iter().enumerate() {
        let _ = writeln!(out, "{c},{},{},{},{}", num(s.precision), num(s.recall), num(s.f1), cm.row_sum(c));
    }
    let _ = writeln!(out, "macro,{},{},{},{}", num(avg.precision), num(avg.recall), num(avg.f1), cm.total());
    out.push('\n');
    let cols: Vec<String> = (0..cm.num_classes()).map(|c| format!("pred_{c}")).collect();
    let _ = writeln!(out, "true,{}", cols.join(","));
    for (t, row) in cm.counts.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(u64::to_string).collect();
        let _ = writeln!(out, "{t},{}", cells.join(","));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Files written by [`run_scenario`].
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub summary: RunSummary,
    pub files: Vec<PathBuf>,
    pub runs: Vec<SeedRun>,
}

/// Runs all seeds of `cfg.scenario` and writes, per seed, the round log,
/// scheduler trace and final report, plus one summary CSV.
pub fn run_scenario(cfg: &ScenarioConfig, out_dir: &Path) -> Result<RunArtifacts> {
    let scenario = cfg
        .scenario
        .ok_or_else(|| cfg_err("scenario: required for `run`"))?;
    fs::create_dir_all(out_dir)?;
    let runs = run_seeds(cfg)?;
    let prefix = format!("{}_{}", scenario.name(), cfg.model.name());
    let mut files = Vec::new();
    for run in &runs {
        let path = out_dir.join(format!("{prefix}_seed{}_rounds.csv", run.seed));
        write_table(&path, &cfg.header("round-log"), &ROUND_COLUMNS, round_rows(scenario, cfg.model, run))?;
        files.push(path);

        let path = out_dir.join(format!("{prefix}_seed{}_sched.csv", run.seed));
        let rows = run
            .outcome
            .trace
            .iter()
            .map(|t| {
                vec![
                    t.round.to_string(),
                    t.client_id.to_string(),
                    t.eligible.to_string(),
                    num(t.priority),
                    t.selected.to_string(),
                    t.completed.to_string(),
                    num(t.energy_before),
                    num(t.energy_after),
                ]
            })
            .collect();
        write_table(
            &path,
            &cfg.header("scheduler-trace"),
            &["round", "client_id", "eligible", "priority", "selected", "completed", "energy_before", "energy_after"],
            rows,
        )?;
        files.push(path);

        let path = out_dir.join(format!("{prefix}_seed{}_report.csv", run.seed));
        write_report(&path, &cfg.header("final-report"), run)?;
        files.push(path);
    }
    let summary = RunSummary::from_runs(scenario, cfg.model, &runs);
    let path = out_dir.join(format!("{prefix}_summary.csv"));
    write_table(&path, &cfg.header("summary"), &SUMMARY_COLUMNS, summary_rows(&summary, &runs))?;
    files.push(path);
    Ok(RunArtifacts { summary, files, runs })
}

const SUMMARY_COLUMNS: [&str; 5] = ["seed", "final_accuracy", "dropout_rate", "mean_participants", "epsilon_spent"];

fn summary_rows(summary: &RunSummary, runs: &[SeedRun]) -> Vec<Vec<String>> {
    let mut rows: Vec<Vec<String>> = runs
        .iter()
        .map(|r| {
            vec![
                r.seed.to_string(),
                num(r.final_accuracy()),
                num(r.dropout_rate()),
                num(r.mean_participants()),
                num(r.epsilon()),
            ]
        })
        .collect();
    rows.push(vec![
        "mean".into(),
        num(summary.mean_accuracy),
        num(summary.mean_dropout_rate),
        num(summary.mean_participants),
        num(summary.epsilon_spent),
    ]);
    rows.push(vec![
        "std".into(),
        num(summary.std_accuracy),
        num(summary.std_dropout_rate),
        String::new(),
        String::new(),
    ]);
    rows
}

/// Result of [`compare_scenarios`].
#[derive(Debug, Clone)]
pub struct Comparison {
    pub summaries: Vec<RunSummary>,
    pub files: Vec<PathBuf>,
}

impl Comparison {
    pub fn get(&self, scenario: Scenario, model: ModelKind) -> Option<&RunSummary> {
        self.summaries.iter().find(|s| s.scenario == scenario && s.model == model)
    }
}

/// Runs all four scenarios for every model in `compare_models` and writes the
/// plot tables: accuracy by round, participants by round, dropout by scenario,
/// final accuracy, and an overall comparison.
pub fn compare_scenarios(cfg: &ScenarioConfig, out_dir: &Path) -> Result<Comparison> {
    fs::create_dir_all(out_dir)?;
    let mut acc_rows = Vec::new();
    let mut part_rows = Vec::new();
    let mut summaries = Vec::new();
    for &model in &cfg.compare_models {
        for scenario in Scenario::ALL {
            let sc = cfg.for_scenario(scenario, model);
            let runs = run_seeds(&sc)?;
            for run in &runs {
                for l in &run.outcome.logs {
                    let key = vec![
                        scenario.name().to_string(),
                        model.name().to_string(),
                        run.seed.to_string(),
                        l.round.to_string(),
                    ];
                    let mut a = key.clone();
                    a.push(num(l.global_accuracy));
                    acc_rows.push(a);
                    let mut p = key;
                    p.extend([
                        l.selected_clients.len().to_string(),
                        l.completed_clients.len().to_string(),
                        l.dropped_clients.len().to_string(),
                    ]);
                    part_rows.push(p);
                }
            }
            summaries.push(RunSummary::from_runs(scenario, model, &runs));
        }
    }
    let header = cfg.header("comparison");
    let mut files = Vec::new();
    let mut emit = |name: &str, columns: &[&str], rows: Vec<Vec<String>>| -> Result<()> {
        let path = out_dir.join(name);
        write_table(&path, &header, columns, rows)?;
        files.push(path);
        Ok(())
    };
    emit("accuracy_by_round.csv", &["scenario", "model", "seed", "round", "accuracy"], acc_rows)?;
    emit(
        "participants_by_round.csv",
        &["scenario", "model", "seed", "round", "selected", "completed", "dropped"],
        part_rows,
    )?;
    emit(
        "dropout_by_scenario.csv",
        &["scenario", "model", "mean_dropout_rate", "std_dropout_rate"],
        summaries
            .iter()
            .map(|s| vec![s.scenario.name().into(), s.model.name().into(), num(s.mean_dropout_rate), num(s.std_dropout_rate)])
            .collect(),
    )?;
    emit(
        "final_accuracy.csv",
        &["scenario", "model", "mean_accuracy", "std_accuracy", "seeds"],
        summaries
            .iter()
            .map(|s| {
                vec![
                    s.scenario.name().into(),
                    s.model.name().into(),
                    num(s.mean_accuracy),
                    num(s.std_accuracy),
                    s.seeds.len().to_string(),
                ]
            })
            .collect(),
    )?;
    emit(
        "comparison.csv",
        &[
            "scenario",
            "model",
            "mean_accuracy",
            "std_accuracy",
            "mean_dropout_rate",
            "mean_participants",
            "epsilon_spent",
        ],
        summaries
            .iter()
            .map(|s| {
                vec![
                    s.scenario.name().into(),
                    s.model.name().into(),
                    num(s.mean_accuracy),
                    num(s.std_accuracy),
                    num(s.mean_dropout_rate),
                    num(s.mean_participants),
                    num(s.epsilon_spent),
                ]
            })
            .collect(),
    )?;
    Ok(Comparison { summaries, files })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_defaults() {
        let c = parse_config_str("scenario = \"dp\"\n[dataset]\nkind = \"blobs\"\n", &[]).unwrap();
        assert_eq!(c.num_clients, 12);
        assert_eq!(c.clients_per_round, 9);
        assert_eq!(c.shots_per_class, 5);
        assert_eq!(c.rounds, 30);
        assert_eq!(c.train.local_epochs, 2);
        assert_eq!(c.noise_std, 0.1);
        assert_eq!(c.fraction_bits, 24);
        assert_eq!(c.seeds, vec![1, 2, 3, 4, 5]);
        let b = parse_config_str("scenario = \"baseline\"", &[]).unwrap();
        assert_eq!(b.noise_std, 0.0);
        let b = parse_config_str("scenario = \"ea\"\nnoise_std = 0.0", &[]).unwrap();
        assert_eq!(b.noise_std, 0.0);
    }

    #[test]
    fn scenario_invariants() {
        let e = parse_config_str("scenario = \"dp\"\nnoise_std = 0.0", &[]).unwrap_err();
        assert!(matches!(&e, Error::Config(m) if m.contains("noise_std")));
        let e = parse_config_str("scenario = \"ea\"\nnoise_std = 0.3", &[]).unwrap_err();
        assert!(matches!(&e, Error::Config(m) if m.contains("noise_std")));
        let e = parse_config_str("scenario = \"ea\"\nclients_per_round = 13", &[]).unwrap_err();
        assert!(matches!(&e, Error::Config(m) if m.contains("clients_per_round")));
    }

    #[test]
    fn unknown_keys_are_named() {
        let e = parse_config_str("scenario = \"dp\"\nfoo = 1", &[]).unwrap_err();
        assert!(matches!(&e, Error::Config(m) if m.contains("foo")), "{e}");
        let e = parse_config_str("[scheduler]\nbar = 2", &[]).unwrap_err();
        assert!(matches!(&e, Error::Config(m) if m.contains("bar")), "{e}");
        let e = parse_config_str("rounds = \"many\"", &[]).unwrap_err();
        assert!(matches!(&e, Error::Config(m) if m.contains("rounds")), "{e}");
    }

    #[test]
    fn overrides_apply() {
        let c = parse_config_str(
            "scenario = \"ea\"\n[scheduler]\nmargin = 1.2\n",
            &["rounds=3".into(), "model=mlp".into(), "scheduler.staleness_cap=7".into(), "seeds=[9]".into()],
        )
        .unwrap();
        assert_eq!(c.rounds, 3);
        assert_eq!(c.model, ModelKind::Mlp);
        assert_eq!(c.scheduler.staleness_cap, 7);
        assert_eq!(c.scheduler.margin, 1.2);
        assert_eq!(c.seeds, vec![9]);
        assert!(parse_config_str("", &["nonsense".into()]).is_err());
    }

    #[test]
    fn csv_dataset_spec() {
        let c = parse_config_str("[dataset]\nkind = \"csv\"\npath = \"x.csv\"\n", &[]).unwrap();
        assert_eq!(
            c.dataset,
            DatasetSpec::Csv { path: "x.csv".into(), label_column: "label".into() }
        );
        assert!(parse_config_str("[dataset]\nkind = \"csv\"\n", &[]).is_err());
    }

    #[test]
    fn hash_tracks_config() {
        let a = ScenarioConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.rounds = 31;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn mean_std_values() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }
}
