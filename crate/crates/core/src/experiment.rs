//! Experiment orchestration: single runs, sweeps and the ablation grid, all
//! reported as versioned JSON.
//!
//! Every (setting, seed) pair is an isolated deterministic job. Jobs run on
//! the worker pool and are merged back in plan order, so a report never
//! depends on scheduling. Wall-clock numbers live only under `timings`.

use std::borrow::Cow;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::classifier::DistanceMode;
use crate::data::{gen_synthetic, sample_few_shot, EmbeddingSet, SyntheticSpec};
use crate::error::{Error, Result};
use crate::gaussian::ShrinkageConvention;
use crate::losses::{LossBreakdown, LossWeights};
use crate::par;
use crate::presets;
use crate::trainer::{evaluate, train, TrainConfig};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
/// A sweep cell is flagged when its mean trails the best setting for the same
/// shots and mode by more than this.
pub const DEGRADATION_MARGIN: f64 = 0.02;

/// Where a run's embeddings come from.
#[derive(Debug, Clone)]
pub enum DataSource {
    /// A fixed set; seeds only change the split and initialization.
    Embeddings {
        set: EmbeddingSet,
        path: Option<String>,
    },
    /// A fresh synthetic set per seed (the spec's own seed is replaced).
    Synthetic {
        spec: SyntheticSpec,
        normalize: bool,
    },
}

impl DataSource {
    pub fn synthetic(spec: SyntheticSpec) -> Self {
        DataSource::Synthetic {
            spec,
            normalize: true,
        }
    }

    fn for_seed(&self, seed: u64) -> Result<Cow<'_, EmbeddingSet>> {
        match self {
            DataSource::Embeddings { set, .. } => Ok(Cow::Borrowed(set)),
            DataSource::Synthetic { spec, normalize } => {
                let (set, _) = gen_synthetic(&SyntheticSpec {
                    seed,
                    ..spec.clone()
                })?;
                Ok(Cow::Owned(if *normalize { set.normalized() } else { set }))
            }
        }
    }

    pub fn info(&self) -> DatasetInfo {
        match self {
            DataSource::Embeddings { set, path } => DatasetInfo {
                source: "file".into(),
                path: path.clone(),
                synthetic: None,
                classes: set.class_count(),
                dim: set.dim(),
                samples: set.len(),
                normalized: set.is_normalized(),
            },
            DataSource::Synthetic { spec, normalize } => DatasetInfo {
                source: "synthetic".into(),
                path: None,
                synthetic: Some(spec.clone()),
                classes: spec.classes,
                dim: spec.dim,
                samples: spec.classes * spec.per_class,
                normalized: *normalize,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetInfo {
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
    pub classes: usize,
    pub dim: usize,
    pub samples: usize,
    pub normalized: bool,
}

/// User-facing configuration. Every field is optional; unset fields fall
/// back to the preset (if any) and then to the per-shot defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    /// A dataset name from the preset table, or `"synthetic"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shots: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup_epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup_lr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_lr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convention: Option<ShrinkageConvention>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unified_cov_threshold: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adapter_enabled: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub momentum: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_grid: Option<Vec<f64>>,
}

impl ConfigFile {
    /// The synthetic benchmark settings.
    pub fn synthetic() -> Self {
        ConfigFile {
            preset: Some("synthetic".into()),
            ..ConfigFile::default()
        }
    }

    /// Full training configuration for `shots`.
    pub fn resolve(&self, shots: usize) -> Result<TrainConfig> {
        let mut cfg = match self.preset.as_deref() {
            None => TrainConfig::for_shots(shots),
            Some("synthetic") => TrainConfig::synthetic_benchmark(shots),
            Some(name) => {
                let p = presets::dataset_preset(name)
                    .ok_or_else(|| Error::InvalidConfig(format!("unknown preset `{name}`")))?;
                TrainConfig {
                    weights: p.weights,
                    base_lr: p.learning_rate,
                    ..TrainConfig::for_shots(shots)
                }
            }
        };
        macro_rules! set {
            ($($src:ident => $($dst:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$src.clone() { cfg.$($dst).+ = v; })*
            };
        }
        set!(
            epochs => epochs,
            warmup_epochs => warmup_epochs,
            warmup_lr => warmup_lr,
            base_lr => base_lr,
            batch_size => batch_size,
            alpha => weights.alpha,
            beta => weights.beta,
            gamma1 => shrinkage.gamma1,
            gamma2 => shrinkage.gamma2,
            convention => shrinkage.convention,
            tau => tau,
            epsilon => epsilon,
            heads => heads,
            unified_cov_threshold => unified_cov_threshold,
            adapter_enabled => adapter_enabled,
            init_scale => init_scale,
            momentum => momentum,
        );
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn shots_or_default(&self) -> usize {
        self.shots.unwrap_or(4)
    }

    pub fn seeds_or_default(&self) -> Vec<u64> {
        self.seeds.clone().unwrap_or_else(|| vec![1, 2, 3])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Train,
    Sweep,
    Ablate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedOutcome {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Accuracies of one configuration in one distance mode across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellReport {
    pub label: String,
    pub shots: usize,
    pub mode: DistanceMode,
    pub heads: usize,
    pub alpha: f64,
    pub beta: f64,
    /// Exact training configuration; `seed` is replaced by each entry of
    /// `per_seed`.
    pub config: TrainConfig,
    pub per_seed: Vec<SeedOutcome>,
    /// Over successful seeds only.
    pub mean: Option<f64>,
    /// Sample standard deviation (n − 1); zero for a single seed.
    pub std: Option<f64>,
    pub failures: usize,
    #[serde(default)]
    pub degraded: bool,
}

impl CellReport {
    pub fn accuracies(&self) -> Vec<f64> {
        self.per_seed.iter().filter_map(|s| s.accuracy).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunTrace {
    pub label: String,
    pub shots: usize,
    pub seed: u64,
    pub loss_trace: Vec<LossBreakdown>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunTiming {
    pub label: String,
    pub shots: usize,
    pub seed: u64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Timings {
    pub total_seconds: f64,
    pub runs: Vec<RunTiming>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub command: Command,
    pub dataset: DatasetInfo,
    /// Configuration as supplied, before preset resolution.
    pub config: ConfigFile,
    pub seeds: Vec<u64>,
    pub cells: Vec<CellReport>,
    pub traces: Vec<RunTrace>,
    pub timings: Timings,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: ExperimentReport =
            serde_json::from_str(text).map_err(|e| Error::InvalidConfig(format!("report: {e}")))?;
        if report.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::InvalidConfig(format!(
                "report schema version {} is not supported (expected {})",
                report.schema_version, REPORT_SCHEMA_VERSION
            )));
        }
        Ok(report)
    }

    /// Copy with all wall-clock data zeroed.
    pub fn without_timings(&self) -> Self {
        ExperimentReport {
            timings: Timings::default(),
            ..self.clone()
        }
    }

    pub fn cell(&self, label: &str, mode: DistanceMode) -> Option<&CellReport> {
        self.cells
            .iter()
            .find(|c| c.label == label && c.mode == mode)
    }
}

/// Mean and sample standard deviation, summed in order.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Some((mean, 0.0));
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    Some((mean, (ss / (n - 1.0)).sqrt()))
}

struct Setting {
    label: String,
    config: TrainConfig,
    modes: Vec<DistanceMode>,
}

struct RunOutcome {
    accuracies: Result<Vec<f64>>,
    trace: Vec<LossBreakdown>,
    seconds: f64,
}

fn run_one(source: &DataSource, setting: &Setting, seed: u64) -> RunOutcome {
    let start = Instant::now();
    let mut trace = Vec::new();
    let accuracies = (|| {
        let set = source.for_seed(seed)?;
        let task = sample_few_shot(&set, setting.config.shots, seed)?;
        let cfg = TrainConfig {
            seed,
            ..setting.config.clone()
        };
        let model = train(&task, &cfg)?;
        trace = model.loss_trace.clone();
        setting
            .modes
            .iter()
            .map(|&m| evaluate(&model, &task.test, m).map(|e| e.accuracy))
            .collect::<Result<Vec<_>>>()
    })();
    RunOutcome {
        accuracies,
        trace,
        seconds: start.elapsed().as_secs_f64(),
    }
}

struct GridResult {
    cells: Vec<CellReport>,
    traces: Vec<RunTrace>,
    timings: Vec<RunTiming>,
    first_error: Option<Error>,
}

fn run_settings(source: &DataSource, settings: &[Setting], seeds: &[u64]) -> GridResult {
    let jobs: Vec<(usize, u64)> = (0..settings.len())
        .flat_map(|s| seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    let outcomes = par::map_slice(&jobs, |&(s, seed)| run_one(source, &settings[s], seed));

    let mut result = GridResult {
        cells: Vec::new(),
        traces: Vec::new(),
        timings: Vec::new(),
        first_error: None,
    };
    for (si, setting) in settings.iter().enumerate() {
        let runs = &outcomes[si * seeds.len()..(si + 1) * seeds.len()];
        let snapshot = TrainConfig {
            seed: 0,
            ..setting.config.clone()
        };
        for (mi, &mode) in setting.modes.iter().enumerate() {
            let per_seed: Vec<SeedOutcome> = runs
                .iter()
                .zip(seeds)
                .map(|(run, &seed)| match &run.accuracies {
                    Ok(acc) => SeedOutcome {
                        seed,
                        accuracy: Some(acc[mi]),
                        error: None,
                    },
                    Err(e) => SeedOutcome {
                        seed,
                        accuracy: None,
                        error: Some(e.to_string()),
                    },
                })
                .collect();
            let ok: Vec<f64> = per_seed.iter().filter_map(|s| s.accuracy).collect();
            let stats = mean_std(&ok);
            result.cells.push(CellReport {
                label: setting.label.clone(),
                shots: setting.config.shots,
                mode,
                heads: setting.config.heads,
                alpha: setting.config.weights.alpha,
                beta: setting.config.weights.beta,
                config: snapshot.clone(),
                failures: per_seed.len() - ok.len(),
                per_seed,
                mean: stats.map(|s| s.0),
                std: stats.map(|s| s.1),
                degraded: false,
            });
        }
        for (run, &seed) in runs.iter().zip(seeds) {
            if let Err(e) = &run.accuracies {
                result.first_error.get_or_insert_with(|| e.clone());
            } else {
                result.traces.push(RunTrace {
                    label: setting.label.clone(),
                    shots: setting.config.shots,
                    seed,
                    loss_trace: run.trace.clone(),
                });
            }
            result.timings.push(RunTiming {
                label: setting.label.clone(),
                shots: setting.config.shots,
                seed,
                seconds: run.seconds,
            });
        }
    }
    result
}

fn check_seeds(seeds: &[u64]) -> Result<()> {
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("no seeds given".into()));
    }
    Ok(())
}

fn report(
    command: Command,
    source: &DataSource,
    config: &ConfigFile,
    seeds: &[u64],
    grid: GridResult,
    start: Instant,
) -> ExperimentReport {
    ExperimentReport {
        schema_version: REPORT_SCHEMA_VERSION,
        command,
        dataset: source.info(),
        config: config.clone(),
        seeds: seeds.to_vec(),
        cells: grid.cells,
        traces: grid.traces,
        timings: Timings {
            total_seconds: start.elapsed().as_secs_f64(),
            runs: grid.timings,
        },
    }
}

/// Trains once per seed and evaluates in each of `modes`. Any failed run
/// aborts with its error.
pub fn run_train(
    source: &DataSource,
    config: &ConfigFile,
    shots: usize,
    seeds: &[u64],
    modes: &[DistanceMode],
) -> Result<ExperimentReport> {
    let start = Instant::now();
    check_seeds(seeds)?;
    if modes.is_empty() {
        return Err(Error::InvalidConfig("no distance modes given".into()));
    }
    let settings = [Setting {
        label: "train".into(),
        config: config.resolve(shots)?,
        modes: modes.to_vec(),
    }];
    let grid = run_settings(source, &settings, seeds);
    if let Some(e) = grid.first_error {
        return Err(e);
    }
    Ok(report(Command::Train, source, config, seeds, grid, start))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPlan {
    pub shots: Vec<usize>,
    pub seeds: Vec<u64>,
    pub modes: Vec<DistanceMode>,
    /// `None` keeps the configured α.
    pub alpha_grid: Option<Vec<f64>>,
    pub beta_grid: Option<Vec<f64>>,
}

/// Cartesian sweep over shots × (α, β) × seeds × modes. Failed runs are
/// recorded in their cells and the sweep continues.
pub fn run_sweep(
    source: &DataSource,
    config: &ConfigFile,
    plan: &SweepPlan,
) -> Result<ExperimentReport> {
    let start = Instant::now();
    check_seeds(&plan.seeds)?;
    let empty = |what: &str| Err(Error::InvalidConfig(format!("sweep grid has no {what}")));
    if plan.shots.is_empty() {
        return empty("shot counts");
    }
    if plan.modes.is_empty() {
        return empty("distance modes");
    }
    if plan.alpha_grid.as_ref().is_some_and(Vec::is_empty) {
        return empty("alpha values");
    }
    if plan.beta_grid.as_ref().is_some_and(Vec::is_empty) {
        return empty("beta values");
    }

    let mut settings = Vec::new();
    for &shots in &plan.shots {
        let base = config.resolve(shots)?;
        let alphas = plan
            .alpha_grid
            .clone()
            .unwrap_or_else(|| vec![base.weights.alpha]);
        let betas = plan
            .beta_grid
            .clone()
            .unwrap_or_else(|| vec![base.weights.beta]);
        for &alpha in &alphas {
            for &beta in &betas {
                let cfg = TrainConfig {
                    weights: LossWeights { alpha, beta },
                    ..base.clone()
                };
                cfg.validate()?;
                settings.push(Setting {
                    label: format!("shots={shots} alpha={alpha} beta={beta}"),
                    config: cfg,
                    modes: plan.modes.clone(),
                });
            }
        }
    }
    let mut grid = run_settings(source, &settings, &plan.seeds);
    flag_degradation(&mut grid.cells);
    Ok(report(
        Command::Sweep,
        source,
        config,
        &plan.seeds,
        grid,
        start,
    ))
}

fn flag_degradation(cells: &mut [CellReport]) {
    let keys: Vec<(usize, DistanceMode)> = cells.iter().map(|c| (c.shots, c.mode)).collect();
    for (i, key) in keys.iter().enumerate() {
        let best = cells
            .iter()
            .zip(&keys)
            .filter(|(_, k)| *k == key)
            .filter_map(|(c, _)| c.mean)
            .fold(f64::NEG_INFINITY, f64::max);
        if let Some(m) = cells[i].mean {
            cells[i].degraded = m < best - DEGRADATION_MARGIN;
        }
    }
}

/// Ablation rows in table order: label, mode, multi-head, intra-class loss,
/// separation loss.
pub const ABLATION_ROWS: [(&str, DistanceMode, bool, bool, bool); 6] = [
    ("baseline", DistanceMode::Euclidean, false, false, false),
    ("ca", DistanceMode::Mahalanobis, false, false, false),
    ("ca+intra", DistanceMode::Mahalanobis, false, true, false),
    ("ca+da", DistanceMode::Mahalanobis, true, false, false),
    ("ca+intra+da", DistanceMode::Mahalanobis, true, true, false),
    ("full", DistanceMode::Mahalanobis, true, true, true),
];

/// The six ablation configurations. Toggled-on components take the
/// configured head count and weights; toggled-off ones use one head or a
/// zero weight.
pub fn run_ablation(
    source: &DataSource,
    config: &ConfigFile,
    shots: usize,
    seeds: &[u64],
) -> Result<ExperimentReport> {
    let start = Instant::now();
    check_seeds(seeds)?;
    let base = config.resolve(shots)?;
    let settings: Vec<Setting> = ABLATION_ROWS
        .iter()
        .map(|&(label, mode, da, intra, sep)| Setting {
            label: label.into(),
            config: TrainConfig {
                heads: if da { base.heads } else { 1 },
                weights: LossWeights {
                    alpha: if intra { base.weights.alpha } else { 0.0 },
                    beta: if sep { base.weights.beta } else { 0.0 },
                },
                ..base.clone()
            },
            modes: vec![mode],
        })
        .collect();
    let grid = run_settings(source, &settings, seeds);
    if let Some(e) = grid.first_error {
        return Err(e);
    }
    Ok(report(Command::Ablate, source, config, seeds, grid, start))
}
