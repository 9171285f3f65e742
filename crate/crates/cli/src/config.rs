//! Flat `key = value` run configuration. Blank lines and `#` comments are
//! ignored; unknown or repeated keys are errors.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use asc_core::model::NetConfig;
use asc_core::sched::ScheduleConfig;
use asc_core::trainer::{Ablation, TrainConfig, SOURCE_PER_BATCH, TARGET_PER_BATCH};
use asc_core::Dims;
use serde::Serialize;

use crate::error::{CliError, Result};

/// Hidden channels of the network; not configurable from files.
pub const HIDDEN: usize = 8;

pub const KEYS: [&str; 14] = [
    "dims",
    "classes",
    "beta",
    "alpha",
    "gamma",
    "lr",
    "epochs",
    "batch",
    "seed",
    "ablation",
    "deterministic",
    "ckpt_every",
    "data_dir",
    "out_dir",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Config {
    #[serde(serialize_with = "dims_as_string")]
    pub dims: Dims,
    pub classes: usize,
    pub beta: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    #[serde(serialize_with = "display")]
    pub ablation: Ablation,
    pub deterministic: bool,
    /// Checkpoint every this many epochs; 0 keeps only the final one.
    pub ckpt_every: usize,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
}

fn dims_as_string<S: serde::Serializer>(d: &Dims, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&format!("{}x{}x{}", d.d, d.h, d.w))
}

fn display<S: serde::Serializer, T: std::fmt::Display>(v: &T, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(v)
}

impl Default for Config {
    fn default() -> Self {
        Self {
            dims: Dims::cube(24),
            classes: 4,
            beta: 0.1,
            alpha: 0.99,
            gamma: 200.0,
            lr: 1e-4,
            epochs: 100,
            batch: SOURCE_PER_BATCH + TARGET_PER_BATCH,
            seed: 0,
            ablation: Ablation::M5,
            deterministic: true,
            ckpt_every: 10,
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
        }
    }
}

fn parse_dims(s: &str) -> Option<Dims> {
    let parts: Vec<usize> = s.split('x').map(|p| p.trim().parse().ok()).collect::<Option<_>>()?;
    let dims = match parts[..] {
        [n] => Dims::cube(n),
        [d, h, w] => Dims::new(d, h, w),
        _ => return None,
    };
    (dims.d > 0 && dims.h > 0 && dims.w > 0).then_some(dims)
}

fn parse_value<T: FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| CliError::Usage(format!("config key {key}: cannot parse {raw:?}")))
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        let mut seen = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, raw) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("config line {}: expected key = value", n + 1)))?;
            let (key, raw) = (key.trim(), raw.trim());
            if !KEYS.contains(&key) {
                return Err(CliError::Usage(format!("config line {}: unknown key {key:?}", n + 1)));
            }
            if seen.contains(&key) {
                return Err(CliError::Usage(format!("config line {}: repeated key {key:?}", n + 1)));
            }
            seen.push(key);
            cfg.set(key, raw)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(CliError::io(path))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Usage(msg) => CliError::Usage(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        match key {
            "dims" => {
                self.dims = parse_dims(raw)
                    .ok_or_else(|| CliError::Usage(format!("config key dims: expected N or DxHxW, got {raw:?}")))?
            }
            "classes" => self.classes = parse_value(key, raw)?,
            "beta" => self.beta = parse_value(key, raw)?,
            "alpha" => self.alpha = parse_value(key, raw)?,
            "gamma" => self.gamma = parse_value(key, raw)?,
            "lr" => self.lr = parse_value(key, raw)?,
            "epochs" => self.epochs = parse_value(key, raw)?,
            "batch" => self.batch = parse_value(key, raw)?,
            "seed" => self.seed = parse_value(key, raw)?,
            "ablation" => self.ablation = parse_value(key, raw)?,
            "deterministic" => self.deterministic = parse_value(key, raw)?,
            "ckpt_every" => self.ckpt_every = parse_value(key, raw)?,
            "data_dir" => self.data_dir = PathBuf::from(raw),
            "out_dir" => self.out_dir = PathBuf::from(raw),
            _ => unreachable!("keys checked by caller"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch != SOURCE_PER_BATCH + TARGET_PER_BATCH {
            return Err(CliError::Usage(format!(
                "batch must be {} ({SOURCE_PER_BATCH} source + {TARGET_PER_BATCH} target)",
                SOURCE_PER_BATCH + TARGET_PER_BATCH
            )));
        }
        if !(2..=256).contains(&self.classes) {
            return Err(CliError::Usage("classes must lie in 2..=256".into()));
        }
        self.train_config().validate()?;
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            beta: self.beta,
            epochs: self.epochs,
            seed: self.seed,
            ablation: self.ablation,
            schedule: ScheduleConfig {
                lr_init: self.lr,
                gamma: self.gamma,
                ema_alpha: self.alpha,
                epochs_total: self.epochs,
                ..ScheduleConfig::default()
            },
            net: self.net_config(),
            deterministic: self.deterministic,
        }
    }

    pub fn net_config(&self) -> NetConfig {
        NetConfig {
            hidden: HIDDEN,
            classes: self.classes,
            seed: self.seed,
        }
    }

    /// Renders the configuration back to parseable text.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let d = self.dims;
        let _ = writeln!(out, "dims = {}x{}x{}", d.d, d.h, d.w);
        let _ = writeln!(out, "classes = {}", self.classes);
        let _ = writeln!(out, "beta = {}", self.beta);
        let _ = writeln!(out, "alpha = {}", self.alpha);
        let _ = writeln!(out, "gamma = {}", self.gamma);
        let _ = writeln!(out, "lr = {}", self.lr);
        let _ = writeln!(out, "epochs = {}", self.epochs);
        let _ = writeln!(out, "batch = {}", self.batch);
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "ablation = {}", self.ablation);
        let _ = writeln!(out, "deterministic = {}", self.deterministic);
        let _ = writeln!(out, "ckpt_every = {}", self.ckpt_every);
        let _ = writeln!(out, "data_dir = {}", self.data_dir.display());
        let _ = writeln!(out, "out_dir = {}", self.out_dir.display());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        let cfg = Config::parse("").unwrap();
        assert_eq!(cfg, Config::default());
        assert_eq!((cfg.beta, cfg.alpha, cfg.gamma, cfg.lr, cfg.batch, cfg.epochs), (0.1, 0.99, 200.0, 1e-4, 4, 100));
    }

    #[test]
    fn parses_all_keys() {
        let text = "# run\n dims = 8x8x6\nclasses=3\nbeta = 0.05 # small\nalpha=0.9\ngamma=10\nlr=0.01\n\
                    epochs=3\nbatch=4\nseed=7\nablation=m3\ndeterministic=false\nckpt_every=1\n\
                    data_dir=d\nout_dir = o\n";
        let cfg = Config::parse(text).unwrap();
        assert_eq!(cfg.dims, Dims::new(8, 8, 6));
        assert_eq!(cfg.ablation, Ablation::M3);
        assert_eq!(cfg.seed, 7);
        assert!(!cfg.deterministic);
        assert_eq!(cfg.out_dir, PathBuf::from("o"));
        assert_eq!(Config::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "colour = red",
            "beta = 0.1\nbeta = 0.2",
            "batch = 8",
            "beta = 1.5",
            "dims = 0",
            "dims = 4x4",
            "lr = fast",
            "ablation = M9",
            "just words",
        ] {
            let err = Config::parse(text).unwrap_err();
            assert_eq!(err.exit_code(), 1, "{text}: {err}");
        }
    }

    #[test]
    fn train_config_carries_schedule() {
        let cfg = Config::parse("gamma = 500\nalpha = 0.9\nlr = 0.003\nepochs = 7").unwrap();
        let t = cfg.train_config();
        assert_eq!(t.schedule.gamma, 500.0);
        assert_eq!(t.schedule.ema_alpha, 0.9);
        assert_eq!(t.schedule.lr_init, 0.003);
        assert_eq!(t.epochs, 7);
        assert_eq!(t.net.hidden, HIDDEN);
    }
}
