use std::path::PathBuf;
use std::process::ExitCode;

use adc_core::experiment::{
    format_sweep, run_experiment, sweep, write_sweep_csv, DatasetConfig, ExperimentConfig,
    FileFormat, MethodConfig, SweepAxis,
};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "adc",
    version,
    about = "Exemplar-free class-incremental learning experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured method for every seed and write CSV reports.
    Run(RunArgs),
    /// Repeat a run over values of one attack hyperparameter.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Hyperparameter to vary: alpha, iterations or m.
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Gradient and oracle self-tests; exits nonzero on any failure.
    Check {
        #[arg(long, default_value_t = 1993)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Idx,
    Csv,
    RawU8,
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration; defaults apply to anything it leaves out.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed(s) to run, replacing the configured list. Repeatable.
    #[arg(long)]
    seed: Vec<u64>,
    /// Method with default parameters: finetune, lwf, ncm, sdc, adc or nme.
    #[arg(long)]
    method: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Image dataset file, replacing the configured dataset.
    #[arg(long, requires = "format")]
    data: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Label file for IDX images.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Number of tasks for a file dataset.
    #[arg(long, default_value_t = 5)]
    tasks: usize,
    /// Retain old data for evaluation-only drift and oracle accuracy.
    #[arg(long)]
    oracle: bool,
}

impl RunArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?
            }
            None => ExperimentConfig::default(),
        };
        if !self.seed.is_empty() {
            cfg.seeds = self.seed.clone();
        }
        if let Some(m) = &self.method {
            cfg.method = m.parse::<MethodConfig>()?;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        if let (Some(path), Some(format)) = (&self.data, self.format) {
            cfg.dataset = DatasetConfig::File {
                path: path.clone(),
                format: match format {
                    Format::Idx => FileFormat::Idx,
                    Format::Csv => FileFormat::Csv,
                    Format::RawU8 => FileFormat::RawU8,
                },
                labels: self.labels.clone(),
                test_path: None,
                test_labels: None,
                test_fraction: 0.2,
                tasks: self.tasks,
            };
        }
        cfg.oracle_eval |= self.oracle;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(args: RunArgs) -> Result<ExitCode> {
    let cfg = args.config()?;
    let outcomes = run_experiment(&cfg)?;
    println!(
        "{:<10} {:>8} {:>8} {:>8} {:>8}",
        "method", "seed", "a_last", "a_inc", "passes"
    );
    let mut failed = false;
    for o in outcomes {
        match o.report {
            Ok(r) => println!(
                "{:<10} {:>8} {:>8.4} {:>8.4} {:>8}",
                r.method, r.seed, r.a_last, r.a_inc, r.backward_passes
            ),
            Err(e) => {
                failed = true;
                eprintln!("seed {} failed: {e}", o.seed);
            }
        }
    }
    println!("reports written to {}", cfg.out_dir.display());
    Ok(if failed {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    })
}

fn main() -> Result<ExitCode> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run(args) => run(args),
        Command::Sweep { run, axis, values } => {
            let cfg = run.config()?;
            let axis: SweepAxis = axis.parse()?;
            let rows = sweep(&cfg, axis, &values)?;
            print!("{}", format_sweep(&rows));
            let path = cfg.out_dir.join(format!("sweep_{axis}.csv"));
            write_sweep_csv(&rows, &path)?;
            println!("table written to {}", path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Check { seed } => {
            let results = adc_core::check::run_checks(seed)?;
            let mut ok = true;
            for r in &results {
                println!(
                    "[{}] {}: {}",
                    if r.passed { "PASS" } else { "FAIL" },
                    r.name,
                    r.detail
                );
                ok &= r.passed;
            }
            if !ok {
                bail!("self-check failed");
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
