//! `jeamc` command-line driver.
//!
//! Settings are layered: a JSON `--config` file, then `JEAMC_*` environment
//! variables, then flags.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use jeamc::eval::{breakdown_logs, compute_trajectories, evaluate, write_records_csv, Axis, SweepGrid};
use jeamc::pipeline::{ensure_dataset, evaluate_model, train_model, write_evaluation, Profile, RunConfig, RunPaths, Split};
use jeamc::policies::PolicyConfig;
use jeamc::rnn::{forward_trajectory, load_weights, save_weights, ModelWeights};
use jeamc::signal_gen::{Dataset, ModulationClass};
use serde_json::json;

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_NO_QUALIFYING: u8 = 4;

#[derive(Parser)]
#[command(name = "jeamc", version, about = "Early-stopping modulation classification with recurrent networks")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; environment variables and flags override it.
    #[arg(long, global = true, env = "JEAMC_CONFIG")]
    config: Option<PathBuf>,
    /// Dataset profile: desk or paper.
    #[arg(long, global = true, env = "JEAMC_PROFILE")]
    profile: Option<Profile>,
    /// Master seed for data generation and training.
    #[arg(long, global = true, env = "JEAMC_SEED")]
    seed: Option<u64>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true, env = "JEAMC_WORKERS")]
    workers: Option<usize>,
    /// Run directory holding datasets, weights and reports.
    #[arg(long, global = true, env = "JEAMC_DATA_DIR")]
    out: Option<PathBuf>,
    /// Reference model id (0-4).
    #[arg(long, global = true, env = "JEAMC_MODEL")]
    model: Option<usize>,
    /// Accuracy tolerance below baseline when selecting best rows.
    #[arg(long, global = true, env = "JEAMC_TOLERANCE")]
    tolerance: Option<f64>,
    /// Sweep grid: `default` or a JSON file.
    #[arg(long, global = true, env = "JEAMC_GRID")]
    grid: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train, validation and test datasets.
    Gen {
        /// Print the dataset specs without generating.
        #[arg(long)]
        dry_run: bool,
        /// Replace existing dataset files with a different spec.
        #[arg(long)]
        overwrite: bool,
    },
    /// Train a reference model and save its weights.
    Train {
        /// Maximum number of epochs (0 saves the initial weights).
        #[arg(long)]
        epochs: Option<usize>,
        /// Maximum number of warm-up epochs (0 skips the warm-up stage).
        #[arg(long)]
        pretrain_epochs: Option<usize>,
    },
    /// Evaluate one policy on the test set.
    Eval {
        #[arg(long, default_value = "NON")]
        policy: PolicyConfig,
    },
    /// Evaluate every grid configuration and write a records CSV.
    Sweep,
    /// Sweep, select the best configuration per technique and write a report.
    Report,
    /// Write the softmax trajectory of one test example as CSV.
    Traj {
        #[arg(long, default_value = "BPSK")]
        class: ModulationClass,
        #[arg(long, default_value_t = 0, allow_negative_numbers = true)]
        snr: i32,
        /// Index among test examples of that class and SNR.
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
}

#[derive(Debug)]
enum Failure {
    Lib(jeamc::Error),
    Usage(String),
    NoQualifying(Vec<String>),
}

impl From<jeamc::Error> for Failure {
    fn from(e: jeamc::Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Lib(e.into())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Lib(e.into())
    }
}

type CliResult<T> = Result<T, Failure>;

struct Context {
    cfg: RunConfig,
    paths: RunPaths,
}

fn load_config(common: &Common) -> CliResult<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => serde_json::from_slice::<RunConfig>(&fs::read(path)?)?,
        None => RunConfig::for_profile(common.profile.unwrap_or(Profile::Desk), 0),
    };
    if let Some(p) = common.profile {
        if p != cfg.profile {
            let seed = cfg.seed;
            cfg = RunConfig { model: cfg.model, tolerance: cfg.tolerance, ..RunConfig::for_profile(p, seed) };
        }
    }
    if let Some(seed) = common.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(m) = common.model {
        cfg.model = m;
    }
    if let Some(t) = common.tolerance {
        cfg.tolerance = t;
    }
    match common.grid.as_deref() {
        None => {}
        Some("default") => cfg.grid = SweepGrid::default_for_length(cfg.signal_length()),
        Some(path) => cfg.grid = serde_json::from_slice(&fs::read(path)?)?,
    }
    Ok(cfg)
}

fn context(common: &Common) -> CliResult<Context> {
    let cfg = load_config(common)?;
    if let Some(n) = common.workers {
        if n == 0 {
            return Err(Failure::Usage("--workers must be positive".into()));
        }
        // Fails only if the pool was already built, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let root = common.out.clone().unwrap_or_else(|| PathBuf::from("jeamc-data"));
    fs::create_dir_all(&root)?;
    Ok(Context { cfg, paths: RunPaths::new(root) })
}

fn test_set(ctx: &Context) -> CliResult<Dataset> {
    Ok(ensure_dataset(&ctx.cfg, Split::Test, &ctx.paths.dataset(Split::Test), false)?)
}

fn weights(ctx: &Context) -> CliResult<ModelWeights> {
    let path = ctx.paths.weights(ctx.cfg.model);
    if !path.exists() {
        return Err(Failure::Usage(format!("{} not found; run `jeamc train` first", path.display())));
    }
    let w = load_weights(&path)?;
    if w.spec != ctx.cfg.model_spec()? {
        return Err(Failure::Usage(format!("{} does not hold model {}", path.display(), ctx.cfg.model)));
    }
    Ok(w)
}

fn print_json(value: &serde_json::Value) -> CliResult<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn cmd_gen(ctx: &Context, dry_run: bool, overwrite: bool) -> CliResult<()> {
    ctx.cfg.validate()?;
    let mut out = serde_json::Map::new();
    for split in Split::ALL {
        let spec = ctx.cfg.dataset_spec(split);
        let path = ctx.paths.dataset(split);
        let entry = if dry_run {
            json!({ "spec": spec, "examples": spec.total_examples() })
        } else {
            let ds = ensure_dataset(&ctx.cfg, split, &path, overwrite)?;
            json!({ "path": path, "spec": spec, "examples": ds.len(), "sha256": ds.digest() })
        };
        out.insert(split.name().to_string(), entry);
    }
    print_json(&json!({ "profile": ctx.cfg.profile, "datasets": out, "config": ctx.cfg }))
}

fn cmd_train(ctx: &mut Context, epochs: Option<usize>, pretrain_epochs: Option<usize>) -> CliResult<()> {
    if let Some(e) = epochs {
        ctx.cfg.train.max_epochs = e;
    }
    match pretrain_epochs {
        Some(0) => ctx.cfg.pretrain = None,
        Some(e) => ctx.cfg.pretrain.get_or_insert_with(|| ctx.cfg.train.clone()).max_epochs = e,
        None => {}
    }
    ctx.cfg.validate()?;
    let train_set = ensure_dataset(&ctx.cfg, Split::Train, &ctx.paths.dataset(Split::Train), false)?;
    let valid_set = ensure_dataset(&ctx.cfg, Split::Valid, &ctx.paths.dataset(Split::Valid), false)?;
    let w = train_model(&ctx.cfg, &train_set, &valid_set, |s| {
        eprintln!(
            "epoch {:>3}  train loss {:.4} acc {:.4}  valid loss {:.4} acc {:.4}",
            s.epoch, s.train_loss, s.train_accuracy, s.valid_loss, s.valid_accuracy
        )
    })?;
    let path = ctx.paths.weights(ctx.cfg.model);
    let manifest = save_weights(&w, &path)?;
    print_json(&json!({
        "path": path,
        "sha256": manifest.sha256,
        "num_params": manifest.num_params,
        "provenance": w.provenance,
        "config": ctx.cfg,
    }))
}

fn cmd_eval(ctx: &Context, policy: &PolicyConfig) -> CliResult<()> {
    ctx.cfg.validate()?;
    let (w, test) = (weights(ctx)?, test_set(ctx)?);
    let model = ctx.cfg.model.to_string();
    let (record, logs) = evaluate(&model, &w, &test, policy)?;
    let by_class = breakdown_logs(&model, *policy, &logs, Axis::Class, &test.header.snrs);
    let by_snr = breakdown_logs(&model, *policy, &logs, Axis::Snr, &test.header.snrs);
    print_json(&json!({
        "record": record,
        "by_class": by_class.cells,
        "by_snr": by_snr.cells,
        "dataset_digest": test.digest(),
        "weights_digest": w.digest(),
        "config": ctx.cfg,
    }))
}

fn cmd_sweep(ctx: &Context) -> CliResult<()> {
    ctx.cfg.validate()?;
    let (w, test) = (weights(ctx)?, test_set(ctx)?);
    let model = ctx.cfg.model.to_string();
    let trajectories = compute_trajectories(&w, &test)?;
    let report = jeamc::eval::sweep_trajectories(&model, &trajectories, &test, &ctx.cfg.grid)?;
    let path = ctx.paths.sweep_csv(ctx.cfg.model);
    write_records_csv(&report.all_records(), fs::File::create(&path)?)?;
    let meta = path.with_extension("json");
    let info = json!({
        "records": report.records.len(),
        "baseline_pcc": report.baseline.avg_pcc,
        "csv": path,
        "dataset_digest": test.digest(),
        "weights_digest": w.digest(),
        "config": ctx.cfg,
    });
    fs::write(&meta, serde_json::to_vec_pretty(&info)?)?;
    print_json(&info)
}

fn cmd_report(ctx: &Context) -> CliResult<()> {
    ctx.cfg.validate()?;
    let (w, test) = (weights(ctx)?, test_set(ctx)?);
    let eval = evaluate_model(&ctx.cfg, &w, &test)?;
    write_evaluation(&ctx.paths, ctx.cfg.model, &eval)?;
    println!("model technique pcc psp duration threshold");
    for row in &eval.summary.table {
        println!("{row}");
    }
    println!("baseline pcc {:.4}", eval.summary.baseline_pcc);
    println!("report: {}", ctx.paths.report(ctx.cfg.model).display());
    let missing = eval.summary.missing_techniques();
    if !missing.is_empty() {
        return Err(Failure::NoQualifying(missing));
    }
    Ok(())
}

fn cmd_traj(ctx: &Context, class: ModulationClass, snr: i32, index: usize) -> CliResult<()> {
    let (w, test) = (weights(ctx)?, test_set(ctx)?);
    let example = test
        .filter(|e| e.label == class && e.snr_db == snr)
        .into_iter()
        .nth(index)
        .ok_or_else(|| Failure::Usage(format!("no test example {index} for {class} at {snr} dB")))?;
    let traj = forward_trajectory(&w, example)?;
    let path = ctx.paths.root.join(format!("model{}_traj_{}_{}dB_{}.csv", ctx.cfg.model, class, snr, index));
    traj.write_csv(fs::File::create(&path)?)?;
    let meta = json!({
        "csv": path,
        "class": class.name(),
        "snr_db": snr,
        "seed": example.seed,
        "dataset_digest": test.digest(),
        "weights_digest": w.digest(),
        "config": ctx.cfg,
    });
    fs::write(path.with_extension("json"), serde_json::to_vec_pretty(&meta)?)?;
    print_json(&meta)
}

fn run(cli: Cli) -> CliResult<()> {
    let mut ctx = context(&cli.common)?;
    match &cli.command {
        Command::Gen { dry_run, overwrite } => cmd_gen(&ctx, *dry_run, *overwrite),
        Command::Train { epochs, pretrain_epochs } => cmd_train(&mut ctx, *epochs, *pretrain_epochs),
        Command::Eval { policy } => cmd_eval(&ctx, policy),
        Command::Sweep => cmd_sweep(&ctx),
        Command::Report => cmd_report(&ctx),
        Command::Traj { class, snr, index } => cmd_traj(&ctx, *class, *snr, *index),
    }
}

fn exit_code(f: &Failure) -> u8 {
    match f {
        Failure::Lib(e) if e.is_numeric() => EXIT_NUMERIC,
        Failure::NoQualifying(_) => EXIT_NO_QUALIFYING,
        _ => EXIT_CONFIG,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_CONFIG) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Lib(e) => eprintln!("error: {e}"),
                Failure::Usage(msg) => eprintln!("error: {msg}"),
                Failure::NoQualifying(t) => eprintln!("error: no configuration qualifies for {}", t.join(", ")),
            }
            ExitCode::from(exit_code(&f))
        }
    }
}
