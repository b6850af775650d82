//! Dataset profiles, run configuration and the end-to-end
//! gen -> train -> sweep -> report pipeline.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::digest::mix64;
use crate::error::{Error, Result};
use crate::eval::{
    breakdown_logs, compute_trajectories, evaluate_trajectories, select_best, sweep_trajectories, write_breakdown_csv,
    write_records_csv, Axis, BreakdownReport, ExampleLog, ReportSummary, SweepGrid, SweepReport,
};
use crate::policies::PolicyConfig;
use crate::rnn::{load_weights, save_weights, train, train_from, EpochStats, ModelSpec, ModelWeights, Supervision, TrainConfig};
use crate::signal_gen::{generate_dataset, Dataset, DatasetSpec, PulseShapeConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Full-size datasets: length 1024, 8000 train / 100 test per SNR per class.
    Paper,
    /// Reduced datasets: length 512, 100 train / 30 test per SNR per class.
    Desk,
}

impl Profile {
    pub fn signal_length(self) -> usize {
        match self {
            Profile::Paper => 1024,
            Profile::Desk => 512,
        }
    }

    /// Examples per SNR per class for the train, validation and test splits.
    pub fn split_sizes(self) -> [usize; 3] {
        match self {
            Profile::Paper => [8000, 800, 100],
            Profile::Desk => [100, 20, 30],
        }
    }

    pub fn train_config(self, seed: u64) -> TrainConfig {
        match self {
            Profile::Paper => TrainConfig { seed, ..TrainConfig::default() },
            Profile::Desk => TrainConfig {
                seed,
                max_epochs: 10,
                learning_rate: 1e-4,
                supervision: Supervision::EveryStep,
                ..TrainConfig::default()
            },
        }
    }

    /// Warm-up stage run before `train_config`. With only 100 signals per
    /// SNR per class, whole-signal training alone stalls at chance level on
    /// everything but BPSK; short windows with a loss at every symbol give
    /// enough updates to escape it.
    pub fn pretrain_config(self, seed: u64) -> Option<TrainConfig> {
        match self {
            Profile::Paper => None,
            Profile::Desk => Some(TrainConfig {
                seed,
                max_epochs: 45,
                // validation loss barely moves before the escape
                patience: 45,
                supervision: Supervision::EveryStep,
                window: Some(128),
                ..TrainConfig::default()
            }),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Paper => "paper",
            Profile::Desk => "desk",
        })
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            other => Err(Error::Config(format!("unknown profile {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

/// Everything that determines a run's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub profile: Profile,
    pub seed: u64,
    pub model: usize,
    pub snr_min_db: i32,
    pub snr_max_db: i32,
    pub pulse: PulseShapeConfig,
    /// Overrides of the profile's split sizes.
    pub split_sizes: Option<[usize; 3]>,
    /// Optional first training stage; `train` continues from its weights.
    pub pretrain: Option<TrainConfig>,
    pub train: TrainConfig,
    pub grid: SweepGrid,
    pub tolerance: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::for_profile(Profile::Desk, 0)
    }
}

impl RunConfig {
    pub fn for_profile(profile: Profile, seed: u64) -> Self {
        Self {
            profile,
            seed,
            model: 1,
            snr_min_db: 0,
            snr_max_db: 10,
            pulse: PulseShapeConfig::default(),
            split_sizes: None,
            pretrain: profile.pretrain_config(seed),
            train: profile.train_config(seed),
            grid: SweepGrid::default_for_length(profile.signal_length()),
            tolerance: 0.005,
        }
    }

    /// Changes the master seed and the training seed derived from it.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.train.seed = seed;
        if let Some(p) = &mut self.pretrain {
            p.seed = seed;
        }
        self
    }

    pub fn signal_length(&self) -> usize {
        self.profile.signal_length()
    }

    pub fn dataset_spec(&self, split: Split) -> DatasetSpec {
        let sizes = self.split_sizes.unwrap_or_else(|| self.profile.split_sizes());
        let (per, tag) = match split {
            Split::Train => (sizes[0], 1),
            Split::Valid => (sizes[1], 2),
            Split::Test => (sizes[2], 3),
        };
        DatasetSpec {
            examples_per_snr_per_class: per,
            snr_min_db: self.snr_min_db,
            snr_max_db: self.snr_max_db,
            signal_length: self.signal_length(),
            pulse: self.pulse.clone(),
            master_seed: mix64(self.seed.wrapping_mul(4).wrapping_add(tag)),
        }
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        ModelSpec::reference(self.model)
    }

    pub fn validate(&self) -> Result<()> {
        for split in Split::ALL {
            self.dataset_spec(split).validate()?;
        }
        self.model_spec()?;
        self.train.validate()?;
        if let Some(p) = &self.pretrain {
            p.validate()?;
        }
        if !(self.tolerance >= 0.0 && self.tolerance.is_finite()) {
            return Err(Error::Config(format!("invalid tolerance {}", self.tolerance)));
        }
        for cfg in self.grid.configs() {
            cfg.validate()?;
        }
        Ok(())
    }
}

/// File layout of a run directory.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn dataset(&self, split: Split) -> PathBuf {
        self.root.join(format!("{}.jeamc", split.name()))
    }

    pub fn weights(&self, model: usize) -> PathBuf {
        self.root.join(format!("model{model}.jeamcw"))
    }

    pub fn sweep_csv(&self, model: usize) -> PathBuf {
        self.root.join(format!("model{model}_sweep.csv"))
    }

    pub fn breakdown_csv(&self, model: usize) -> PathBuf {
        self.root.join(format!("model{model}_breakdown.csv"))
    }

    pub fn report(&self, model: usize) -> PathBuf {
        self.root.join(format!("model{model}_report.json"))
    }
}

/// Generates a dataset split, or reuses an existing file with the same spec.
/// A file with a different spec is replaced only when `overwrite` is set.
pub fn ensure_dataset(cfg: &RunConfig, split: Split, path: &Path, overwrite: bool) -> Result<Dataset> {
    let spec = cfg.dataset_spec(split);
    if path.exists() && !overwrite {
        let ds = Dataset::read(path)?;
        if ds.header.master_seed == spec.master_seed
            && ds.signal_length() == spec.signal_length
            && ds.len() == spec.total_examples()
            && ds.header.snrs == spec.snrs()
        {
            return Ok(ds);
        }
        return Err(Error::Config(format!(
            "{} holds a dataset with a different spec (pass --overwrite or choose another output directory)",
            path.display()
        )));
    }
    let ds = generate_dataset(&spec)?;
    ds.write(path, Some(&spec), overwrite)?;
    Ok(ds)
}

pub fn train_model(
    cfg: &RunConfig,
    train_set: &Dataset,
    valid_set: &Dataset,
    mut progress: impl FnMut(&EpochStats),
) -> Result<ModelWeights> {
    let spec = cfg.model_spec()?;
    match &cfg.pretrain {
        Some(pre) if cfg.train.max_epochs > 0 => {
            let warm = train(&spec, train_set, valid_set, pre, &mut progress)?;
            train_from(warm, train_set, valid_set, &cfg.train, progress)
        }
        _ => train(&spec, train_set, valid_set, &cfg.train, progress),
    }
}

/// Sweep results, best rows and breakdowns for one trained model.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub sweep: SweepReport,
    pub summary: ReportSummary,
    /// Per-example outcomes of the full-length baseline.
    pub baseline_logs: Vec<ExampleLog>,
}

/// Sweeps the grid, selects the best row per technique and breaks the
/// baseline and the selected SAT/DEL configurations down by class and SNR.
pub fn evaluate_model(cfg: &RunConfig, weights: &ModelWeights, test_set: &Dataset) -> Result<Evaluation> {
    let model = cfg.model.to_string();
    let trajectories = compute_trajectories(weights, test_set)?;
    let sweep = sweep_trajectories(&model, &trajectories, test_set, &cfg.grid)?;
    let baseline_pcc = sweep.baseline.avg_pcc;
    let selection = select_best(&sweep.records, baseline_pcc, cfg.tolerance);

    let mut focus = vec![PolicyConfig::Non];
    focus.extend(selection.iter().filter_map(|s| s.best.as_ref()).map(|b| b.policy));
    let mut breakdowns: Vec<BreakdownReport> = Vec::new();
    let mut baseline_logs = Vec::new();
    for policy in focus {
        let (_, logs) = evaluate_trajectories(&model, &trajectories, test_set, &policy)?;
        if policy == PolicyConfig::Non {
            baseline_logs = logs.clone();
        }
        for axis in [Axis::Class, Axis::Snr] {
            breakdowns.push(breakdown_logs(&model, policy, &logs, axis, &test_set.header.snrs));
        }
    }

    let summary = ReportSummary {
        model,
        baseline_pcc,
        tolerance: cfg.tolerance,
        best: selection.iter().map(|s| (s.technique.to_string(), s.best.clone())).collect(),
        table: selection.iter().filter_map(|s| s.best.as_ref()).map(|b| b.to_string()).collect(),
        grid: cfg.grid.clone(),
        dataset_digest: test_set.digest(),
        weights_digest: weights.digest(),
        breakdowns,
        config: serde_json::to_value(cfg)?,
    };
    Ok(Evaluation { sweep, summary, baseline_logs })
}

/// Writes the sweep CSV, breakdown CSV and report JSON for an evaluation.
pub fn write_evaluation(paths: &RunPaths, model: usize, eval: &Evaluation) -> Result<()> {
    write_records_csv(&eval.sweep.all_records(), fs::File::create(paths.sweep_csv(model))?)?;
    write_breakdown_csv(&eval.summary.breakdowns, fs::File::create(paths.breakdown_csv(model))?)?;
    fs::write(paths.report(model), eval.summary.to_json()?)?;
    Ok(())
}

/// Outputs of a full pipeline run.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub weights: ModelWeights,
    pub evaluation: Evaluation,
    pub report_json: Vec<u8>,
}

/// gen -> train -> sweep -> report inside `out_dir`. Existing datasets with
/// matching specs are reused; weights are retrained unless already present.
pub fn run_pipeline(cfg: &RunConfig, out_dir: &Path, progress: impl FnMut(&EpochStats)) -> Result<PipelineRun> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let paths = RunPaths::new(out_dir);
    let train_set = ensure_dataset(cfg, Split::Train, &paths.dataset(Split::Train), false)?;
    let valid_set = ensure_dataset(cfg, Split::Valid, &paths.dataset(Split::Valid), false)?;
    let test_set = ensure_dataset(cfg, Split::Test, &paths.dataset(Split::Test), false)?;
    let wpath = paths.weights(cfg.model);
    let weights = if wpath.exists() {
        load_weights(&wpath)?
    } else {
        let w = train_model(cfg, &train_set, &valid_set, progress)?;
        save_weights(&w, &wpath)?;
        w
    };
    let evaluation = evaluate_model(cfg, &weights, &test_set)?;
    write_evaluation(&paths, cfg.model, &evaluation)?;
    let report_json = fs::read(paths.report(cfg.model))?;
    Ok(PipelineRun { weights, evaluation, report_json })
}
