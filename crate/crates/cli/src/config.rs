//! Flat `key=value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are case-sensitive
//! and unknown keys are rejected. [`RunConfig::render`] writes every key in a
//! fixed order, and its output parses back to the same configuration.

use std::fmt::Write as _;
use std::path::Path;

use pubc_core::bc::{BcConfig, BcObjective};
use pubc_core::classifier::LossKind;
use pubc_core::filter::{DecisionVariant, FilterConfig};
use pubc_core::synth::{PointMassEnv, TARGET_LABEL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Method {
    Pubc,
    Unbiased,
    Nonneg,
    Naive,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Pubc => "pubc",
            Method::Unbiased => "unbiased",
            Method::Nonneg => "nonneg",
            Method::Naive => "naive",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [Method::Pubc, Method::Unbiased, Method::Nonneg, Method::Naive]
            .into_iter()
            .find(|m| m.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub method: Method,
    pub filter: FilterConfig,
    /// Fraction kept by the naive return filter.
    pub naive_fraction: f64,
    pub bc: BcConfig,
    pub env: PointMassEnv,
    pub episodes: usize,
    /// Normalization bounds; the reference bounds are used when unset.
    pub score_min: Option<f64>,
    pub score_max: Option<f64>,
    pub expert_label: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            method: Method::Pubc,
            filter: FilterConfig::default(),
            naive_fraction: 0.10,
            bc: BcConfig::default(),
            env: PointMassEnv::default(),
            episodes: 100,
            score_min: None,
            score_max: None,
            expert_label: TARGET_LABEL.to_string(),
        }
    }
}

#[derive(Debug, PartialEq)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value
        .parse()
        .map_err(|_| ConfigError(format!("invalid value {value:?} for {key}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>, ConfigError> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse_num(key, v.trim())).collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(ConfigError(format!("invalid value {value:?} for {key}"))),
    }
}

fn parse_opt(key: &str, value: &str) -> Result<Option<f64>, ConfigError> {
    if value.is_empty() || value == "auto" {
        Ok(None)
    } else {
        parse_num(key, value).map(Some)
    }
}

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let f = &mut self.filter;
        match key {
            "seed" => self.seed = parse_num(key, value)?,
            "method" => {
                self.method = Method::parse(value).ok_or_else(|| ConfigError(format!("unknown method {value:?}")))?
            }
            "k" => f.ensemble_size = parse_num(key, value)?,
            "poly_order" => f.poly_order = parse_num(key, value)?,
            "histogram_bins" => f.histogram_bins = parse_num(key, value)?,
            "tolerance" => f.tolerance = parse_num(key, value)?,
            "max_iters" => f.max_iterations = parse_num(key, value)?,
            "top_fraction" => f.seed_fraction = parse_num(key, value)?,
            "seed_floor" => f.seed_floor = parse_num(key, value)?,
            "negative_ratio" => f.negative_ratio = parse_num(key, value)?,
            "decision" => {
                f.decision = match value {
                    "mean" => DecisionVariant::Mean,
                    "logsum" => DecisionVariant::LogSum,
                    _ => return Err(ConfigError(format!("unknown decision variant {value:?}"))),
                }
            }
            "pin_seeds" => f.pin_seeds = parse_bool(key, value)?,
            "epochs" => f.train.epochs = parse_num(key, value)?,
            "batch_size" => f.train.batch_size = parse_num(key, value)?,
            "learning_rate" => f.train.learning_rate = parse_num(key, value)?,
            "class_prior" => f.train.class_prior = parse_num(key, value)?,
            "min_batches_per_epoch" => f.train.min_batches_per_epoch = parse_num(key, value)?,
            "encoder_hidden" => f.arch.encoder_hidden = parse_list(key, value)?,
            "latent" => f.arch.latent = parse_num(key, value)?,
            "head_hidden" => f.arch.head_hidden = parse_list(key, value)?,
            "naive_fraction" => self.naive_fraction = parse_num(key, value)?,
            "bc_epochs" => self.bc.epochs = parse_num(key, value)?,
            "bc_batch_size" => self.bc.batch_size = parse_num(key, value)?,
            "bc_learning_rate" => self.bc.learning_rate = parse_num(key, value)?,
            "bc_hidden" => self.bc.hidden = parse_list(key, value)?,
            "bc_sigma" => self.bc.sigma = parse_num(key, value)?,
            "bc_objective" => {
                self.bc.objective = match value {
                    "nll" => BcObjective::Nll,
                    "mse" => BcObjective::Mse,
                    _ => return Err(ConfigError(format!("unknown objective {value:?}"))),
                }
            }
            "dt" => self.env.dt = parse_num(key, value)?,
            "drag" => self.env.drag = parse_num(key, value)?,
            "horizon" => self.env.horizon = parse_num(key, value)?,
            "goal_range" => self.env.goal_range = parse_num(key, value)?,
            "start_distance" => self.env.start_distance = parse_num(key, value)?,
            "episodes" => self.episodes = parse_num(key, value)?,
            "score_min" => self.score_min = parse_opt(key, value)?,
            "score_max" => self.score_max = parse_opt(key, value)?,
            "expert_label" => self.expert_label = value.to_string(),
            _ => return Err(ConfigError(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Applies every setting of a config file body, in order.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError(format!("config line {}: expected key=value", n + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| ConfigError(format!("config line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    /// Rejects values the pipeline cannot run with.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.filter.validate().map_err(|e| ConfigError(e.to_string()))?;
        self.bc.validate().map_err(|e| ConfigError(e.to_string()))?;
        if !(self.naive_fraction > 0.0 && self.naive_fraction <= 1.0) {
            return Err(ConfigError("naive_fraction must lie in (0, 1]".into()));
        }
        if self.episodes == 0 {
            return Err(ConfigError("episodes must be >= 1".into()));
        }
        if self.env.horizon == 0 || !(self.env.dt > 0.0) {
            return Err(ConfigError("horizon and dt must be positive".into()));
        }
        if !(self.env.goal_range >= 0.0 && self.env.start_distance >= 0.0) {
            return Err(ConfigError("goal_range and start_distance must be non-negative".into()));
        }
        Ok(())
    }

    pub fn render(&self) -> String {
        let f = &self.filter;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_else(|| "auto".into());
        let decision = match f.decision {
            DecisionVariant::Mean => "mean",
            DecisionVariant::LogSum => "logsum",
        };
        let objective = match self.bc.objective {
            BcObjective::Nll => "nll",
            BcObjective::Mse => "mse",
        };
        let rows: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("method", self.method.name().into()),
            ("k", f.ensemble_size.to_string()),
            ("poly_order", f.poly_order.to_string()),
            ("histogram_bins", f.histogram_bins.to_string()),
            ("tolerance", f.tolerance.to_string()),
            ("max_iters", f.max_iterations.to_string()),
            ("top_fraction", f.seed_fraction.to_string()),
            ("seed_floor", f.seed_floor.to_string()),
            ("negative_ratio", f.negative_ratio.to_string()),
            ("decision", decision.into()),
            ("pin_seeds", f.pin_seeds.to_string()),
            ("epochs", f.train.epochs.to_string()),
            ("batch_size", f.train.batch_size.to_string()),
            ("learning_rate", f.train.learning_rate.to_string()),
            ("class_prior", f.train.class_prior.to_string()),
            ("min_batches_per_epoch", f.train.min_batches_per_epoch.to_string()),
            ("encoder_hidden", join(&f.arch.encoder_hidden)),
            ("latent", f.arch.latent.to_string()),
            ("head_hidden", join(&f.arch.head_hidden)),
            ("naive_fraction", self.naive_fraction.to_string()),
            ("bc_epochs", self.bc.epochs.to_string()),
            ("bc_batch_size", self.bc.batch_size.to_string()),
            ("bc_learning_rate", self.bc.learning_rate.to_string()),
            ("bc_hidden", join(&self.bc.hidden)),
            ("bc_sigma", self.bc.sigma.to_string()),
            ("bc_objective", objective.into()),
            ("dt", self.env.dt.to_string()),
            ("drag", self.env.drag.to_string()),
            ("horizon", self.env.horizon.to_string()),
            ("goal_range", self.env.goal_range.to_string()),
            ("start_distance", self.env.start_distance.to_string()),
            ("episodes", self.episodes.to_string()),
            ("score_min", opt(self.score_min)),
            ("score_max", opt(self.score_max)),
            ("expert_label", self.expert_label.clone()),
        ];
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    /// Loss used by the classifier for the configured method.
    pub fn loss(&self) -> LossKind {
        match self.method {
            Method::Unbiased => LossKind::Unbiased,
            Method::Nonneg => LossKind::NonNegative,
            Method::Pubc | Method::Naive => LossKind::Bce,
        }
    }
}

pub fn read_config_file(path: &Path, config: &mut RunConfig) -> Result<(), String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    config.apply_text(&text).map_err(|e| format!("{}: {e}", path.display()))
}
