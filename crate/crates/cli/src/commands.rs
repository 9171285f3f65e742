//! Subcommand implementations. Ablation and sweeps are loops over
//! [`train_run`] and [`asc_core::trainer::evaluate`].

use std::fs;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use asc_core::fourier::amplitude_swap;
use asc_core::metrics::DscReport;
use asc_core::model::{Layout, ParamVector};
use asc_core::synthdata::{gen_benchmark, BenchmarkSizes, PhantomSpec};
use asc_core::trainer::{evaluate, train_with, Ablation, Trained};
use serde::Serialize;

use crate::config::{Config, HIDDEN};
use crate::data::{write_benchmark, Dataset, MANIFEST};
use crate::error::{CliError, Result};
use crate::tables::{self, SeedMean};
use crate::{ckpt, rvol};

pub const RUN_META: &str = "run.json";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const REPORT: &str = "report.csv";
pub const STUDENT: &str = "student.ascp";
pub const TEACHER: &str = "teacher.ascp";

#[derive(Serialize)]
struct RunMeta<'a> {
    command: &'a str,
    version: &'a str,
    config: &'a Config,
    seeds: &'a [u64],
    /// Manifest the data came from, or `generated` for the in-memory benchmark.
    data: String,
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(CliError::io(dir))
}

fn write_meta(dir: &Path, command: &str, cfg: &Config, seeds: &[u64], data: String) -> Result<()> {
    let meta = RunMeta {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        seeds,
        data,
    };
    let path = dir.join(RUN_META);
    let text = serde_json::to_string_pretty(&meta).expect("plain struct serializes");
    fs::write(&path, text + "\n").map_err(CliError::io(path))
}

/// Phantom generator settings for a configuration.
pub fn phantom_spec(cfg: &Config) -> Result<PhantomSpec> {
    let spec = PhantomSpec {
        dims: cfg.dims,
        seed: cfg.seed,
        ..PhantomSpec::default()
    };
    if spec.classes() != cfg.classes {
        return Err(CliError::Usage(format!(
            "the phantom generator produces {} classes, config asks for {}",
            spec.classes(),
            cfg.classes
        )));
    }
    spec.validate()?;
    Ok(spec)
}

/// Writes the default-size benchmark under `out` and returns the manifest.
pub fn gen_data(cfg: &Config, out: &Path) -> Result<PathBuf> {
    let spec = phantom_spec(cfg)?;
    let bench = gen_benchmark(&spec, BenchmarkSizes::default())?;
    create_dir(out)?;
    let manifest = write_benchmark(out, &bench)?;
    write_meta(out, "gen-data", cfg, &[cfg.seed], manifest.display().to_string())?;
    Ok(manifest)
}

/// Source content with the low-frequency amplitude of `tgt`.
pub fn fda_transform(src: &Path, tgt: &Path, beta: f64, out: &Path) -> Result<()> {
    let a = rvol::read_volume(src)?;
    let b = rvol::read_volume(tgt)?;
    let swapped = amplitude_swap(&a, &b, beta)?;
    rvol::write_volume(out, &swapped)
}

/// Data for a configuration: `data_dir/manifest.csv` when present, otherwise
/// the default benchmark generated in memory from the config seed.
pub fn load_data(cfg: &Config) -> Result<(Dataset, String)> {
    let manifest = cfg.data_dir.join(MANIFEST);
    if manifest.is_file() {
        let data = Dataset::load(&manifest)?;
        return Ok((data, manifest.display().to_string()));
    }
    let bench = gen_benchmark(&phantom_spec(cfg)?, BenchmarkSizes::default())?;
    Ok((Dataset::from_benchmark(bench), "generated".into()))
}

/// Trains one configuration, writing checkpoints, the log and `run.json`
/// under `out`, plus the student's target-test report when the data has one.
pub fn train_run(cfg: &Config, data: &Dataset, data_origin: String, out: &Path) -> Result<(Trained, Option<DscReport>)> {
    create_dir(out)?;
    write_meta(out, "train", cfg, &[cfg.seed], data_origin)?;
    let ckpt_dir = out.join("ckpt");
    let mut io_error = None;
    let trained = train_with(cfg.train_config(), &data.source, &data.target_train, None, |e| {
        let done = e.epoch + 1;
        if cfg.ckpt_every > 0 && done % cfg.ckpt_every == 0 {
            let saved = create_dir(&ckpt_dir)
                .and_then(|_| ckpt::write(&ckpt_dir.join(format!("student_e{done:03}.ascp")), e.student))
                .and_then(|_| ckpt::write(&ckpt_dir.join(format!("teacher_e{done:03}.ascp")), e.teacher));
            if let Err(err) = saved {
                io_error = Some(err);
                return ControlFlow::Break(());
            }
        }
        ControlFlow::Continue(())
    });
    if let Some(err) = io_error {
        return Err(err);
    }
    let trained = trained?;
    tables::write_train_log(&out.join(TRAIN_LOG), &trained.log)?;
    ckpt::write(&out.join(STUDENT), &trained.student)?;
    ckpt::write(&out.join(TEACHER), &trained.teacher)?;
    let report = if data.target_test.is_empty() {
        None
    } else {
        let r = evaluate(&trained.student, &data.target_test)?;
        tables::write_report(&out.join(REPORT), &r)?;
        Some(r)
    };
    Ok((trained, report))
}

/// Scores a checkpoint on the target-test entries of a manifest.
pub fn eval_run(ckpt_path: &Path, manifest: &Path, classes: usize, out: &Path) -> Result<DscReport> {
    let params: ParamVector = ckpt::read(ckpt_path, Layout::new(HIDDEN, classes))?;
    let data = Dataset::load(manifest)?;
    if data.target_test.is_empty() {
        return Err(CliError::Data(format!("{}: no target-test entries", manifest.display())));
    }
    let report = evaluate(&params, &data.target_test)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    tables::write_report(out, &report)?;
    Ok(report)
}

fn need_test_split(data: &Dataset) -> Result<()> {
    if data.target_test.is_empty() {
        return Err(CliError::Data("no target-test data to score runs on".into()));
    }
    Ok(())
}

/// Trains `cfg` once per seed under `out/<tag>_s<seed>` and averages scores.
fn seeded_runs(cfg: &Config, seeds: &[u64], data: &Dataset, origin: &str, out: &Path, tag: &str) -> Result<SeedMean> {
    let mut reports = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let run = Config { seed, ..cfg.clone() };
        let (_, report) = train_run(&run, data, origin.to_string(), &out.join(format!("{tag}_s{seed}")))?;
        reports.push(report.expect("test split checked"));
    }
    Ok(SeedMean::of(&reports).expect("at least one seed"))
}

fn check_seeds(seeds: &[u64]) -> Result<()> {
    if seeds.is_empty() {
        return Err(CliError::Usage("at least one seed is required".into()));
    }
    Ok(())
}

/// Trains M1..M5 for every seed and writes `ablation.csv`.
pub fn ablate(cfg: &Config, seeds: &[u64], out: &Path) -> Result<Vec<(Ablation, SeedMean)>> {
    check_seeds(seeds)?;
    let (data, origin) = load_data(cfg)?;
    need_test_split(&data)?;
    create_dir(out)?;
    write_meta(out, "ablate", cfg, seeds, origin.clone())?;
    let mut rows = Vec::new();
    for mode in Ablation::ALL {
        let run = Config { ablation: mode, ..cfg.clone() };
        rows.push((mode, seeded_runs(&run, seeds, &data, &origin, out, mode.as_str())?));
    }
    tables::write_ablation(&out.join("ablation.csv"), &rows)?;
    Ok(rows)
}

/// Trains the configured mode for every gamma and seed and writes `sweep.csv`.
pub fn sweep_gamma(cfg: &Config, gammas: &[f64], seeds: &[u64], out: &Path) -> Result<Vec<(f64, SeedMean)>> {
    check_seeds(seeds)?;
    if gammas.is_empty() {
        return Err(CliError::Usage("at least one gamma value is required".into()));
    }
    let runs: Vec<Config> = gammas.iter().map(|&gamma| Config { gamma, ..cfg.clone() }).collect();
    for run in &runs {
        run.validate()?;
    }
    let (data, origin) = load_data(cfg)?;
    need_test_split(&data)?;
    create_dir(out)?;
    write_meta(out, "sweep-gamma", cfg, seeds, origin.clone())?;
    let mut rows = Vec::new();
    for run in &runs {
        let tag = format!("gamma{}", run.gamma);
        rows.push((run.gamma, seeded_runs(run, seeds, &data, &origin, out, &tag)?));
    }
    tables::write_sweep(&out.join("sweep.csv"), &rows)?;
    Ok(rows)
}
