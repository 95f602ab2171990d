mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use gun_core::GunError;

use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] GunError),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(GunError::Io(e))
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(GunError::NonFinite { .. }) => 3,
            CliError::Core(_) => 2,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "gun", version, about = "Step-wise super-resolution of PNG images with a small convolutional network")]
struct Cli {
    #[command(flatten)]
    shared: Shared,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Shared {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Magnification factor (2, 3 or 4).
    #[arg(long, global = true, value_parser = clap::value_parser!(u32).range(2..=4))]
    scale: Option<u32>,
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Output file; the command's primary output goes to stdout without it.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Write the effective configuration to this path.
    #[arg(long, global = true)]
    dump_config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model on a directory of PNG images with the staged curriculum.
    Train {
        #[arg(long)]
        train_dir: Option<PathBuf>,
        #[arg(long)]
        val_dir: Option<PathBuf>,
        /// Comma-separated stage thresholds, e.g. `1.2,1,0.8,0.5,0`.
        #[arg(long)]
        lambdas: Option<String>,
        /// Per-epoch loss log (CSV).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Super-resolve one PNG image.
    Sr {
        #[arg(long)]
        input: PathBuf,
    },
    /// Score bicubic (and a checkpoint, when given) on a directory of HR images.
    Eval {
        #[arg(long)]
        test_dir: Option<PathBuf>,
        /// Also score each HR image against itself.
        #[arg(long)]
        reference_rows: bool,
    },
    /// Print the per-step resolution schedule.
    Schedule {
        #[arg(long)]
        lr_size: String,
        #[arg(long)]
        hr_size: String,
        #[arg(long)]
        steps: usize,
    },
    /// Print the multiply-accumulate estimate against a direct HR network.
    Flops {
        #[arg(long, default_value = "32x32")]
        lr_size: String,
    },
    /// Print the per-stage sizes of the curriculum for a training directory.
    CurriculumStats {
        #[arg(long)]
        train_dir: Option<PathBuf>,
    },
}

fn effective_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.shared.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::for_scale(2),
    };
    if let Some(s) = cli.shared.scale {
        cfg = cfg.with_scale(s);
    }
    if let Some(seed) = cli.shared.seed {
        cfg.seed = seed;
    }
    if let Some(c) = &cli.shared.checkpoint {
        cfg.checkpoint = c.clone();
    }
    match &cli.command {
        Command::Train {
            train_dir,
            val_dir,
            lambdas,
            log,
        } => {
            if let Some(d) = train_dir {
                cfg.train_dir = Some(d.clone());
            }
            if let Some(d) = val_dir {
                cfg.val_dir = Some(d.clone());
            }
            if let Some(l) = lambdas {
                cfg = RunConfig::parse(&format!("{}lambdas = {l}\n", cfg.dump()))?;
            }
            if let Some(l) = log {
                cfg.log_path = l.clone();
            }
            if let Some(o) = &cli.shared.out {
                cfg.checkpoint = o.clone();
            }
        }
        Command::Eval { test_dir: Some(d), .. } => cfg.test_dir = Some(d.clone()),
        Command::CurriculumStats { train_dir: Some(d) } => cfg.train_dir = Some(d.clone()),
        _ => {}
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = effective_config(cli)?;
    info!("effective config:\n{}", cfg.dump());
    if let Some(p) = &cli.shared.dump_config {
        std::fs::write(p, cfg.dump())?;
    }
    let out = cli.shared.out.as_deref();
    match &cli.command {
        Command::Train { .. } => commands::train(&cfg),
        Command::Sr { input } => {
            let out = out.ok_or_else(|| CliError::Usage("sr needs --out".into()))?;
            commands::sr(&cfg, cli.shared.scale, input, out)
        }
        Command::Eval { reference_rows, .. } => {
            let report = commands::eval(&cfg, cli.shared.checkpoint.is_some(), *reference_rows)?;
            commands::emit(out, &report.to_csv())
        }
        Command::Schedule { lr_size, hr_size, steps } => commands::emit(out, &commands::schedule(lr_size, hr_size, *steps)?),
        Command::Flops { lr_size } => commands::emit(out, &commands::flops(&cfg, lr_size)?),
        Command::CurriculumStats { .. } => commands::emit(out, &commands::curriculum_stats(&cfg)?),
    }
}

fn init_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("GUN_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| CliError::Usage(format!("GUN_THREADS must be a positive integer, got `{v}`")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match init_threads().and_then(|_| run(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
