use std::path::{Path, PathBuf};
use std::process::ExitCode;

use asc::commands;
use asc::error::{CliError, Result};
use asc::selftest;
use asc::Config;
use clap::{Parser, Subcommand};

/// Appearance and structure consistency training on 3D volumes.
#[derive(Parser)]
#[command(name = "asc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic benchmark as RVOL files plus a manifest.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory; defaults to `data_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Give one volume the low-frequency amplitude of another.
    FdaTransform {
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        tgt: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        beta: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one configuration.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory; defaults to `out_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a checkpoint on the target-test entries of a manifest.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        /// Report CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train M1..M5 over several seeds and tabulate target DSC.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Defaults to the config seed and the two following it.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the configured mode for several consistency weights.
    SweepGamma {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "10,100,200,500,1000")]
        values: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the built-in numerical checks.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

fn seeds_or_default(seeds: Vec<u64>, cfg: &Config) -> Vec<u64> {
    if seeds.is_empty() {
        (0..3).map(|k| cfg.seed + k).collect()
    } else {
        seeds
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData { config, out } => {
            let cfg = load_config(config.as_deref())?;
            let out = out.unwrap_or_else(|| cfg.data_dir.clone());
            let manifest = commands::gen_data(&cfg, &out)?;
            println!("wrote {}", manifest.display());
        }
        Command::FdaTransform { src, tgt, beta, out } => {
            commands::fda_transform(&src, &tgt, beta, &out)?;
            println!("wrote {}", out.display());
        }
        Command::Train { config, out } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(out) = out {
                cfg.out_dir = out;
            }
            let (data, origin) = commands::load_data(&cfg)?;
            let (trained, report) = commands::train_run(&cfg, &data, origin, &cfg.out_dir)?;
            println!("trained {} steps into {}", trained.log.records.len(), cfg.out_dir.display());
            if let Some(r) = report {
                println!("target-test mean foreground DSC {:.4}", r.avg);
            }
        }
        Command::Eval {
            ckpt,
            manifest,
            classes,
            out,
        } => {
            let report = commands::eval_run(&ckpt, &manifest, classes, &out)?;
            println!("mean foreground DSC {:.4} over {} volumes", report.avg, report.volumes.len());
        }
        Command::Ablate { config, seeds, out } => {
            let cfg = load_config(config.as_deref())?;
            let seeds = seeds_or_default(seeds, &cfg);
            let out = out.unwrap_or_else(|| cfg.out_dir.clone());
            let rows = commands::ablate(&cfg, &seeds, &out)?;
            for (mode, m) in &rows {
                println!("{mode} avg {:.4} over {} seeds", m.avg, m.seeds);
            }
            let monotone = rows.windows(2).all(|w| w[1].1.avg >= w[0].1.avg);
            println!("M1..M5 non-decreasing: {}", if monotone { "yes" } else { "no" });
        }
        Command::SweepGamma {
            config,
            values,
            seeds,
            out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let seeds = seeds_or_default(seeds, &cfg);
            let out = out.unwrap_or_else(|| cfg.out_dir.clone());
            for (gamma, m) in commands::sweep_gamma(&cfg, &values, &seeds, &out)? {
                println!("gamma {gamma} avg {:.4} over {} seeds", m.avg, m.seeds);
            }
        }
        Command::Selftest { seed } => {
            let suites = selftest::run_all(seed);
            for s in &suites {
                println!("{} {}: {}", if s.passed { "PASS" } else { "FAIL" }, s.name, s.detail);
            }
            let failed = suites.iter().filter(|s| !s.passed).count();
            if failed > 0 {
                return Err(CliError::SelfTest(failed));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
