//! `covproto`: generate embedding sets, train, sweep and ablate.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numerical failure.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use covproto_core::data::{
    gen_synthetic, load_embeddings, save_camf, save_csv, LoadOptions, Spectrum,
};
use covproto_core::experiment::{
    run_ablation, run_sweep, run_train, ConfigFile, DataSource, ExperimentReport, SweepPlan,
};
use covproto_core::{DistanceMode, Error, ShrinkageConvention, SyntheticSpec};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "covproto",
    version,
    about = "Few-shot prototype classification with class covariances"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Write a synthetic anisotropic Gaussian set (CAMF, or CSV for a .csv path).
    Gen(GenArgs),
    /// Train per seed and evaluate in every distance mode.
    Train(RunArgs),
    /// Sweep shots × seeds × modes, optionally over α/β grids.
    Sweep(SweepArgs),
    /// Run the six-row ablation grid.
    Ablate(RunArgs),
}

#[derive(Args, Debug, Clone)]
struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long = "per-class", default_value_t = 100)]
    per_class: usize,
    #[arg(long = "mean-scale", default_value_t = 3.0)]
    mean_scale: f64,
    /// Condition-number range of the class covariances.
    #[arg(long = "cond-range", num_args = 2, value_names = ["MIN", "MAX"], default_values_t = [5.0, 50.0])]
    cond_range: Vec<f64>,
    /// Number of leading eigen-directions with inflated variance; 0 selects
    /// a geometric spectrum instead.
    #[arg(long = "spike-rank", default_value_t = 4)]
    spike_rank: usize,
}

impl SynthArgs {
    fn spec(&self, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            classes: self.classes,
            dim: self.dim,
            mean_scale: self.mean_scale,
            cond_min: self.cond_range[0],
            cond_max: self.cond_range[1],
            per_class: self.per_class,
            spectrum: match self.spike_rank {
                0 => Spectrum::Geometric,
                rank => Spectrum::Spiked { rank },
            },
            seed,
        }
    }
}

#[derive(Args, Debug)]
struct GenArgs {
    #[command(flatten)]
    synth: SynthArgs,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Convention {
    Matched,
    Swapped,
}

impl From<Convention> for ShrinkageConvention {
    fn from(c: Convention) -> Self {
        match c {
            Convention::Matched => ShrinkageConvention::Matched,
            Convention::Swapped => ShrinkageConvention::Swapped,
        }
    }
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Embedding file (CAMF or CSV).
    #[arg(
        long,
        conflicts_with = "synthetic",
        required_unless_present = "synthetic"
    )]
    data: Option<PathBuf>,
    /// Generate a fresh synthetic set per seed instead of reading a file.
    #[arg(long)]
    synthetic: bool,
    #[command(flatten)]
    synth: SynthArgs,
    /// Keep features as stored instead of L2-normalizing them.
    #[arg(long = "no-normalize")]
    no_normalize: bool,
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named preset: a dataset from the preset table or `synthetic`.
    #[arg(long)]
    preset: Option<String>,
    /// Shot count (comma-separated list for `sweep`).
    #[arg(long, value_delimiter = ',')]
    shots: Vec<usize>,
    /// Seeds as a comma-separated list; `a-b` ranges are allowed.
    #[arg(long)]
    seeds: Option<String>,
    /// Restrict reported modes (comma-separated).
    #[arg(long, value_delimiter = ',')]
    mode: Vec<DistanceMode>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma1: Option<f64>,
    #[arg(long)]
    gamma2: Option<f64>,
    #[arg(long, value_enum)]
    convention: Option<Convention>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Train the linear feature adapter as well.
    #[arg(long)]
    adapter: bool,
    /// Report path; the JSON goes to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long = "alpha-grid", value_delimiter = ',', num_args = 0..)]
    alpha_grid: Option<Vec<f64>>,
    #[arg(long = "beta-grid", value_delimiter = ',', num_args = 0..)]
    beta_grid: Option<Vec<f64>>,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_numerical() {
            EXIT_NUMERICAL
        } else if matches!(e, Error::InvalidConfig(_)) {
            EXIT_USAGE
        } else {
            EXIT_DATA
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn parse_seeds(text: &str) -> Result<Vec<u64>, Failure> {
    let bad = || Failure::usage(format!("invalid seed list `{text}`"));
    let mut seeds = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let a: u64 = a.trim().parse().map_err(|_| bad())?;
                let b: u64 = b.trim().parse().map_err(|_| bad())?;
                if a > b {
                    return Err(bad());
                }
                seeds.extend(a..=b);
            }
            None => seeds.push(part.parse().map_err(|_| bad())?),
        }
    }
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

fn read_config(path: &Path) -> Result<ConfigFile, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure {
        code: EXIT_USAGE,
        message: format!("cannot read config {}: {e}", path.display()),
    })?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let at = e.path().to_string();
        Failure::usage(format!(
            "config {}: at `{at}`: {}",
            path.display(),
            e.inner()
        ))
    })
}

/// Config file first, then command-line overrides on top.
fn build_config(args: &RunArgs) -> Result<ConfigFile, Failure> {
    let mut cfg = match &args.config {
        Some(p) => read_config(p)?,
        None => ConfigFile::default(),
    };
    if args.preset.is_some() {
        cfg.preset = args.preset.clone();
    } else if cfg.preset.is_none() && args.synthetic {
        cfg.preset = Some("synthetic".into());
    }
    if let Some(s) = &args.seeds {
        cfg.seeds = Some(parse_seeds(s)?);
    }
    let overrides = [
        (&mut cfg.alpha, args.alpha),
        (&mut cfg.beta, args.beta),
        (&mut cfg.gamma1, args.gamma1),
        (&mut cfg.gamma2, args.gamma2),
        (&mut cfg.base_lr, args.lr),
    ];
    for (slot, v) in overrides {
        if v.is_some() {
            *slot = v;
        }
    }
    if args.heads.is_some() {
        cfg.heads = args.heads;
    }
    if args.epochs.is_some() {
        cfg.epochs = args.epochs;
    }
    if let Some(c) = args.convention {
        cfg.convention = Some(c.into());
    }
    if args.adapter {
        cfg.adapter_enabled = Some(true);
    }
    Ok(cfg)
}

fn data_source(args: &RunArgs) -> Result<DataSource, Failure> {
    if args.synthetic {
        let spec = args.synth.spec(0);
        spec.validate()?;
        return Ok(DataSource::Synthetic {
            spec,
            normalize: !args.no_normalize,
        });
    }
    let path = args
        .data
        .as_ref()
        .ok_or_else(|| Failure::usage("--data or --synthetic is required"))?;
    let set = load_embeddings(
        path,
        LoadOptions {
            normalize: !args.no_normalize,
        },
    )
    .map_err(|e| Failure {
        code: EXIT_DATA,
        message: format!("{}: {e}", path.display()),
    })?;
    Ok(DataSource::Embeddings {
        set,
        path: Some(path.display().to_string()),
    })
}

fn modes(args: &RunArgs) -> Vec<DistanceMode> {
    if args.mode.is_empty() {
        DistanceMode::ALL.to_vec()
    } else {
        args.mode.clone()
    }
}

fn single_shots(args: &RunArgs, cfg: &ConfigFile) -> Result<usize, Failure> {
    match args.shots.as_slice() {
        [] => Ok(cfg.shots_or_default()),
        [k] => Ok(*k),
        _ => Err(Failure::usage("this command takes a single --shots value")),
    }
}

fn table(report: &ExperimentReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<34} {:<12} {:>5} {:>5} {:>8} {:>8} {:>16} {:>5}",
        "setting", "mode", "shots", "heads", "alpha", "beta", "accuracy", "fail"
    );
    for c in &report.cells {
        let acc = match (c.mean, c.std) {
            (Some(m), Some(s)) => format!("{:.2} ± {:.2}", 100.0 * m, 100.0 * s),
            _ => "n/a".to_string(),
        };
        let flag = if c.degraded { "  degraded" } else { "" };
        let _ = writeln!(
            out,
            "{:<34} {:<12} {:>5} {:>5} {:>8} {:>8} {:>16} {:>5}{flag}",
            c.label,
            c.mode.as_str(),
            c.shots,
            c.heads,
            c.alpha,
            c.beta,
            acc,
            c.failures
        );
    }
    out
}

fn emit(report: &ExperimentReport, out: Option<&Path>) -> Result<(), Failure> {
    let json = report.to_json();
    match out {
        Some(path) => {
            std::fs::write(path, json + "\n").map_err(|e| Failure {
                code: EXIT_DATA,
                message: format!("cannot write {}: {e}", path.display()),
            })?;
            print!("{}", table(report));
        }
        None => {
            eprint!("{}", table(report));
            println!("{json}");
        }
    }
    Ok(())
}

fn cmd_gen(args: &GenArgs) -> Result<(), Failure> {
    let (set, _) = gen_synthetic(&args.synth.spec(args.seed))?;
    let is_csv = args
        .out
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        save_csv(&set, &args.out)?;
    } else {
        save_camf(&set, &args.out)?;
    }
    eprintln!(
        "wrote {} samples ({} classes, dim {}) to {}",
        set.len(),
        set.class_count(),
        set.dim(),
        args.out.display()
    );
    Ok(())
}

fn cmd_train(args: &RunArgs) -> Result<(), Failure> {
    let cfg = build_config(args)?;
    let source = data_source(args)?;
    let shots = single_shots(args, &cfg)?;
    let report = run_train(&source, &cfg, shots, &cfg.seeds_or_default(), &modes(args))?;
    emit(&report, args.out.as_deref())
}

fn cmd_sweep(args: &SweepArgs) -> Result<(), Failure> {
    let run = &args.run;
    let mut cfg = build_config(run)?;
    if args.alpha_grid.is_some() {
        cfg.alpha_grid = args.alpha_grid.clone();
    }
    if args.beta_grid.is_some() {
        cfg.beta_grid = args.beta_grid.clone();
    }
    let source = data_source(run)?;
    let shots = if !run.shots.is_empty() {
        run.shots.clone()
    } else if let Some(k) = cfg.shots {
        vec![k]
    } else {
        covproto_core::presets::SHOT_SETTINGS.to_vec()
    };
    let plan = SweepPlan {
        shots,
        seeds: cfg.seeds_or_default(),
        modes: modes(run),
        alpha_grid: cfg.alpha_grid.clone(),
        beta_grid: cfg.beta_grid.clone(),
    };
    let report = run_sweep(&source, &cfg, &plan)?;
    emit(&report, run.out.as_deref())
}

fn cmd_ablate(args: &RunArgs) -> Result<(), Failure> {
    let cfg = build_config(args)?;
    let source = data_source(args)?;
    let shots = single_shots(args, &cfg)?;
    let report = run_ablation(&source, &cfg, shots, &cfg.seeds_or_default())?;
    emit(&report, args.out.as_deref())
}

#[cfg(feature = "parallel")]
fn init_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var("CAM_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| {
            Failure::usage(format!(
                "CAM_THREADS must be a positive integer, got `{value}`"
            ))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::usage(format!("cannot start worker pool: {e}")))
}

#[cfg(not(feature = "parallel"))]
fn init_threads() -> Result<(), Failure> {
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    init_threads()?;
    match &cli.command {
        Cmd::Gen(a) => cmd_gen(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Sweep(a) => cmd_sweep(a),
        Cmd::Ablate(a) => cmd_ablate(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
