//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 numerical
//! divergence (including a failed gradient check), 3 I/O error.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::align::{monotonicity_report, AlignConfig, AlignError, AlignmentMatrix, DEFAULT_DELTA, DEFAULT_LAMBDA};
use crate::autodiff::OpKind;
use crate::data::{DataError, Dataset, DatasetConfig};
use crate::gradcheck::{check_model, check_ops, CheckLine};
use crate::model::{ModelConfig, ModelError};
use crate::numfmt::fmt_f64;
use crate::train::{
    records_to_csv, sweep_lambda, train_with_progress, TrainConfig, TrainError, ANNEAL_FACTOR,
    DEFAULT_EPOCHS, DEFAULT_LAMBDA_GRID, DEFAULT_LEARNING_RATE,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DIVERGED: i32 = 2;
pub const EXIT_IO: i32 = 3;

pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const SWEEP_REPORT_FILE: &str = "sweep_report.csv";

/// Parsed command line.
#[derive(Debug, Clone, PartialEq, Parser)]
#[command(name = "monoalign", version, about = "Monotonic alignment regularizer toolkit")]
pub struct CommandConfig {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand)]
pub enum Command {
    /// Generate a synthetic monotonic transduction corpus.
    GenData(GenDataArgs),
    /// Train the toy model once.
    Train(TrainArgs),
    /// Train once per (λ, seed) and summarize.
    Sweep(SweepArgs),
    /// Monotonicity diagnostics for an alignment CSV.
    Analyze(AnalyzeArgs),
    /// Finite-difference checks of every op and the model loss.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, PartialEq, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 12)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 16)]
    pub frame_dim: usize,
    #[arg(long, default_value_t = 4)]
    pub max_duration: usize,
    #[arg(long, default_value_t = 0.05)]
    pub noise_std: f64,
    #[arg(long, default_value_t = 5)]
    pub min_len: usize,
    #[arg(long, default_value_t = 20)]
    pub max_len: usize,
    #[arg(long, default_value_t = 2000)]
    pub train_size: usize,
    #[arg(long, default_value_t = 200)]
    pub val_size: usize,
    #[arg(long, default_value_t = 200)]
    pub test_size: usize,
}

impl GenDataArgs {
    pub fn dataset_config(&self) -> DatasetConfig {
        DatasetConfig {
            vocab_size: self.vocab_size,
            frame_dim: self.frame_dim,
            max_duration: self.max_duration,
            noise_std: self.noise_std,
            min_len: self.min_len,
            max_len: self.max_len,
            train: self.train_size,
            val: self.val_size,
            test: self.test_size,
            seed: self.seed,
        }
    }
}

/// Optimizer flags shared by `train` and `sweep`.
#[derive(Debug, Clone, PartialEq, Args)]
pub struct OptimArgs {
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    pub delta: f64,
    #[arg(long, default_value_t = DEFAULT_EPOCHS)]
    pub epochs: usize,
    #[arg(long, default_value_t = DEFAULT_LEARNING_RATE)]
    pub lr: f64,
    #[arg(long, default_value_t = ANNEAL_FACTOR)]
    pub anneal_factor: f64,
}

impl OptimArgs {
    fn train_config(&self, lambda: f64, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.lr,
            anneal_factor: self.anneal_factor,
            align: AlignConfig {
                delta: self.delta,
                lambda,
            },
            seed,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub optim: OptimArgs,
}

#[derive(Debug, Clone, PartialEq, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_LAMBDA_GRID.to_vec())]
    pub lambdas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0u64])]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub optim: OptimArgs,
}

#[derive(Debug, Clone, PartialEq, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub alignment: PathBuf,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Test fixture: corrupt the backward rule of the named op.
    #[arg(long, hide = true)]
    pub corrupt_op: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Diverged(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Diverged(_) => EXIT_DIVERGED,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io { .. } | DataError::Align(AlignError::Io { .. }) => CliError::Io(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<AlignError> for CliError {
    fn from(e: AlignError) -> Self {
        match e {
            AlignError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Autodiff(crate::autodiff::AutodiffError::NonFinite { .. }) => {
                CliError::Diverged(e.to_string())
            }
            ModelError::Checkpoint { .. } => CliError::Io(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Diverged { .. } => CliError::Diverged(e.to_string()),
            TrainError::Config(_) => CliError::Usage(e.to_string()),
            TrainError::Model(m) => m.into(),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn require_file(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Io(format!("{}: no such file", path.display())))
    }
}

fn require_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() && !p.is_dir() => Err(CliError::Io(format!(
            "{}: parent directory {} does not exist",
            path.display(),
            p.display()
        ))),
        _ => Ok(()),
    }
}

/// Output directory: its parent must exist; the directory itself is created.
fn prepare_out_dir(dir: &Path) -> Result<(), CliError> {
    require_parent(dir)?;
    if dir.exists() && !dir.is_dir() {
        return Err(CliError::Io(format!("{}: not a directory", dir.display())));
    }
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn model_config_for(dataset: &Dataset) -> ModelConfig {
    ModelConfig::new(dataset.table.vocab_size(), dataset.table.frame_dim())
}

/// Runs one parsed command. Regular output goes to `out`, progress to `err`.
pub fn run(config: CommandConfig, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    match config.command {
        Command::GenData(args) => gen_data(&args, out),
        Command::Train(args) => train_cmd(&args, out, err),
        Command::Sweep(args) => sweep_cmd(&args, out, err),
        Command::Analyze(args) => analyze(&args, out),
        Command::Gradcheck(args) => gradcheck(&args, out),
    }
}

fn gen_data(args: &GenDataArgs, out: &mut dyn Write) -> Result<(), CliError> {
    require_parent(&args.out)?;
    let config = args.dataset_config();
    config.validate()?;
    let dataset = Dataset::generate(&config)?;
    dataset.save(&args.out)?;
    let _ = writeln!(
        out,
        "wrote {} ({} train, {} val, {} test)",
        args.out.display(),
        dataset.train.len(),
        dataset.val.len(),
        dataset.test.len()
    );
    Ok(())
}

fn train_cmd(args: &TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    require_file(&args.data)?;
    prepare_out_dir(&args.out)?;
    let config = args.optim.train_config(args.lambda, args.seed);
    config.validate()?;
    let dataset = Dataset::load(&args.data)?;
    let log_path = args.out.join(TRAIN_LOG_FILE);
    let result = train_with_progress(&dataset, model_config_for(&dataset), &config, |r| {
        let _ = writeln!(
            err,
            "epoch {:>4}  train_lt {:.5}  val_lt {:.5}  val_la {:.5}  violations {:.3}",
            r.epoch, r.train_lt, r.val_lt, r.val_la, r.val_violation_rate
        );
    });
    match result {
        Ok(log) => {
            write_file(&log_path, &log.to_csv())?;
            let ckpt = args.out.join(CHECKPOINT_FILE);
            log.final_params.save(&ckpt)?;
            let _ = writeln!(out, "wrote {} and {}", log_path.display(), ckpt.display());
            Ok(())
        }
        Err(TrainError::Diverged { epoch, partial }) => {
            write_file(&log_path, &records_to_csv(&partial))?;
            Err(CliError::Diverged(format!("training diverged at epoch {epoch}")))
        }
        Err(e) => Err(e.into()),
    }
}

fn sweep_cmd(args: &SweepArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    require_file(&args.data)?;
    if args.lambdas.is_empty() || args.seeds.is_empty() {
        return Err(CliError::Usage("--lambdas and --seeds must be nonempty".into()));
    }
    for &lambda in &args.lambdas {
        args.optim.train_config(lambda, 0).validate()?;
    }
    prepare_out_dir(&args.out)?;
    let runs_dir = args.out.join("runs");
    std::fs::create_dir_all(&runs_dir).map_err(|e| io_err(&runs_dir, e))?;
    let dataset = Dataset::load(&args.data)?;
    let base = args.optim.train_config(DEFAULT_LAMBDA, 0);
    let mut write_error = None;
    let report = sweep_lambda(&dataset, model_config_for(&dataset), &base, &args.lambdas, &args.seeds, |run| {
        let status = match run.diverged_epoch {
            Some(e) => format!("diverged at epoch {e}"),
            None => "done".to_string(),
        };
        let _ = writeln!(err, "lambda {} seed {}: {status}", fmt_f64(run.lambda), run.seed);
        if let Some(log) = &run.log {
            let path = runs_dir.join(format!("lambda_{}_seed_{}.csv", fmt_f64(run.lambda), run.seed));
            if let Err(e) = std::fs::write(&path, log.to_csv()) {
                write_error.get_or_insert(io_err(&path, e));
            }
        }
    })?;
    if let Some(e) = write_error {
        return Err(e);
    }
    let path = args.out.join(SWEEP_REPORT_FILE);
    write_file(&path, &report.to_csv())?;
    let _ = writeln!(out, "wrote {}", path.display());
    Ok(())
}

fn analyze(args: &AnalyzeArgs, out: &mut dyn Write) -> Result<(), CliError> {
    require_file(&args.alignment)?;
    let matrix = AlignmentMatrix::read_csv(&args.alignment)?;
    let report = monotonicity_report(&matrix, args.delta)?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Usage(e.to_string()))?;
    writeln!(out, "{json}").map_err(|e| CliError::Io(e.to_string()))
}

fn gradcheck(args: &GradcheckArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let fault = match &args.corrupt_op {
        None => None,
        Some(name) => Some(
            OpKind::from_name(name).ok_or_else(|| CliError::Usage(format!("unknown op '{name}'")))?,
        ),
    };
    let mut lines: Vec<CheckLine> = check_ops(args.seed, fault).map_err(|e| CliError::Usage(e.to_string()))?;
    lines.extend(check_model(args.seed, fault)?);
    let mut failed = Vec::new();
    for line in &lines {
        let verdict = if line.passed() { "PASS" } else { "FAIL" };
        let _ = writeln!(
            out,
            "{verdict} {:<20} max_rel_error {:.3e} (tolerance {:.0e})",
            line.name, line.max_rel_error, line.tolerance
        );
        if !line.passed() {
            failed.push(line.name.clone());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Diverged(format!("gradient check failed: {}", failed.join(", "))))
    }
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let config = match CommandConfig::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = write!(err, "{e}");
            return code;
        }
    };
    match run(config, out, err) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
