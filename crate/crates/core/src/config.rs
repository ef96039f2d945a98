//! Plain-text `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Unknown or repeated keys are
//! errors. Every key is optional and falls back to [`RunConfig::default`].

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{format_scales, parse_scales, DegradeSpec};
use crate::error::{Error, Result};
use crate::losses::GanLoss;
use crate::model::SgenConfig;

/// Everything a run needs: model, degradation, schedule and paths.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: SgenConfig,
    pub degrade: DegradeSpec,
    /// Dataset root with `train/`, `val/` and `test/`; `None` uses the synthetic corpus.
    pub data_root: Option<PathBuf>,
    /// Images per split when the synthetic corpus is used.
    pub synthetic_count: usize,
    pub checkpoint_out: Option<PathBuf>,
    pub report_out: Option<PathBuf>,
    pub log_out: Option<PathBuf>,
    pub steps: usize,
    /// Checkpoint (and validation, when a validation split exists) period; 0 disables.
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: SgenConfig::default(),
            degrade: DegradeSpec::default(),
            data_root: None,
            synthetic_count: 16,
            checkpoint_out: None,
            report_out: None,
            log_out: None,
            steps: 1000,
            eval_every: 0,
            seed: 0,
        }
    }
}

const KEYS: &[&str] = &[
    "n_levels",
    "base_channels",
    "bottleneck_channels",
    "disc_channels",
    "merge_mode",
    "lrelu_slope",
    "gan_loss",
    "lambda_mse",
    "learning_rate",
    "batch_size",
    "scales",
    "down_factor",
    "noise_sigma",
    "up_method",
    "degrade_seed",
    "data_root",
    "synthetic_count",
    "checkpoint_out",
    "report_out",
    "log_out",
    "steps",
    "eval_every",
    "seed",
];

fn parse_value<V: FromStr>(key: &str, value: &str, line: usize) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("line {line}: invalid value `{value}` for `{key}`")))
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn path_str(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {line}: expected key = value, got `{content}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(Error::Config(format!("line {line}: unknown key `{key}`")));
            }
            if seen.contains(&key) {
                return Err(Error::Config(format!("line {line}: duplicate key `{key}`")));
            }
            seen.push(key);
            cfg.set(key, value, line)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        let m = &mut self.model;
        let d = &mut self.degrade;
        match key {
            "n_levels" => m.n_levels = parse_value(key, value, line)?,
            "base_channels" => m.base_channels = parse_value(key, value, line)?,
            "bottleneck_channels" => m.bottleneck_channels = parse_value(key, value, line)?,
            "disc_channels" => m.disc_channels = parse_value(key, value, line)?,
            "merge_mode" => m.merge_mode = parse_value(key, value, line)?,
            "lrelu_slope" => m.lrelu_slope = parse_value(key, value, line)?,
            "gan_loss" => {
                m.gan_loss = match value {
                    "none" => None,
                    v => Some(parse_value::<GanLoss>(key, v, line)?),
                }
            }
            "lambda_mse" => m.lambda_mse = parse_value(key, value, line)?,
            "learning_rate" => m.learning_rate = parse_value(key, value, line)?,
            "batch_size" => m.batch_size = parse_value(key, value, line)?,
            "scales" => {
                d.scales = parse_scales(value)
                    .map_err(|e| Error::Config(format!("line {line}: {e}")))?
            }
            "down_factor" => d.down_factor = parse_value(key, value, line)?,
            "noise_sigma" => d.noise_sigma = parse_value(key, value, line)?,
            "up_method" => d.up_method = parse_value(key, value, line)?,
            "degrade_seed" => d.seed = parse_value(key, value, line)?,
            "data_root" => self.data_root = opt_path(value),
            "synthetic_count" => self.synthetic_count = parse_value(key, value, line)?,
            "checkpoint_out" => self.checkpoint_out = opt_path(value),
            "report_out" => self.report_out = opt_path(value),
            "log_out" => self.log_out = opt_path(value),
            "steps" => self.steps = parse_value(key, value, line)?,
            "eval_every" => self.eval_every = parse_value(key, value, line)?,
            "seed" => self.seed = parse_value(key, value, line)?,
            _ => unreachable!("key list and setter disagree on `{key}`"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.degrade.validate()?;
        if self.synthetic_count == 0 {
            return Err(Error::Config("synthetic_count must be >= 1".into()));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Every key, one per line, in a fixed order.
    pub fn serialize(&self) -> String {
        let m = &self.model;
        let d = &self.degrade;
        let gan = m.gan_loss.map_or("none", |g| g.as_str());
        let values: Vec<String> = vec![
            m.n_levels.to_string(),
            m.base_channels.to_string(),
            m.bottleneck_channels.to_string(),
            m.disc_channels.to_string(),
            m.merge_mode.to_string(),
            m.lrelu_slope.to_string(),
            gan.to_string(),
            m.lambda_mse.to_string(),
            m.learning_rate.to_string(),
            m.batch_size.to_string(),
            format_scales(&d.scales),
            d.down_factor.to_string(),
            d.noise_sigma.to_string(),
            d.up_method.to_string(),
            d.seed.to_string(),
            path_str(&self.data_root),
            self.synthetic_count.to_string(),
            path_str(&self.checkpoint_out),
            path_str(&self.report_out),
            path_str(&self.log_out),
            self.steps.to_string(),
            self.eval_every.to_string(),
            self.seed.to_string(),
        ];
        let mut out = String::new();
        for (k, v) in KEYS.iter().zip(values) {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}
