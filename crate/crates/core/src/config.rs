//! Run configuration and its flat `key = value` text format.
//!
//! One key per line, `#` starts a comment, blank lines are ignored. Keys not
//! present in a file take their default value. Unknown keys are rejected.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which adaptation loss aligns the source-like and target-like sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UdaMethod {
    Mmd,
    Dann,
    None,
}

/// Training-time image augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Augmentation {
    None,
    Has,
    Cutmix,
}

impl FromStr for UdaMethod {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mmd" => Ok(UdaMethod::Mmd),
            "dann" => Ok(UdaMethod::Dann),
            "none" => Ok(UdaMethod::None),
            other => Err(format!("expected one of mmd, dann, none; got `{other}`")),
        }
    }
}

impl fmt::Display for UdaMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UdaMethod::Mmd => "mmd",
            UdaMethod::Dann => "dann",
            UdaMethod::None => "none",
        })
    }
}

impl FromStr for Augmentation {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "none" => Ok(Augmentation::None),
            "has" => Ok(Augmentation::Has),
            "cutmix" => Ok(Augmentation::Cutmix),
            other => Err(format!("expected one of none, has, cutmix; got `{other}`")),
        }
    }
}

impl fmt::Display for Augmentation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Augmentation::None => "none",
            Augmentation::Has => "has",
            Augmentation::Cutmix => "cutmix",
        })
    }
}

/// Everything needed to reproduce a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub num_classes: usize,
    pub feature_dim: usize,
    /// Samples drawn per target subset (`n`).
    pub samples_per_subset: usize,
    /// Weight of the domain adaptation term.
    pub lambda1: f64,
    /// Weight of the Universum term.
    pub lambda2: f64,
    pub uda_method: UdaMethod,
    /// Use the target sample assigner. Without it the adaptation loss sees
    /// the image features against uniformly drawn pixel features.
    pub tsa: bool,
    pub augmentation: Augmentation,
    pub seed: u64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Epochs of classification-only training before the assigner and the
    /// adaptation and Universum terms switch on.
    pub warmup_epochs: usize,
    pub batch_size: usize,
    /// Divide the learning rate by `1/lr_decay_factor` every this many epochs; 0 disables.
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    pub image_size: usize,
    /// Channel width of the first backbone stage.
    pub base_width: usize,
    /// Anchor update with old weight `1/count` instead of the running mean.
    pub eq7_literal: bool,
    /// Universum term as a raw L1 sum instead of the per-sample, per-channel mean.
    pub eq4_literal: bool,
    /// Fixed MMD bandwidth; `None` uses the median pairwise distance.
    pub mmd_sigma: Option<f64>,
    pub mmd_unbiased: bool,
    pub epsilon_scale: f64,
    pub kmeans_max_iters: usize,
    pub kmeans_tol: f64,
    pub has_grid: usize,
    pub has_prob: f64,
    pub cutmix_alpha: f64,
    /// Number of evenly spaced thresholds in [0, 1] used by the metrics.
    pub thresholds: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            num_classes: 3,
            feature_dim: 64,
            samples_per_subset: 32,
            lambda1: 0.3,
            lambda2: 2.0,
            uda_method: UdaMethod::Mmd,
            tsa: true,
            augmentation: Augmentation::None,
            seed: 0,
            learning_rate: 0.02,
            momentum: 0.9,
            weight_decay: 1e-4,
            epochs: 10,
            batch_size: 32,
            lr_decay_every: 0,
            warmup_epochs: 0,
            lr_decay_factor: 0.1,
            image_size: 224,
            base_width: 16,
            eq7_literal: false,
            eq4_literal: false,
            mmd_sigma: None,
            mmd_unbiased: false,
            epsilon_scale: 1e-3,
            kmeans_max_iters: 50,
            kmeans_tol: 1e-4,
            has_grid: 4,
            has_prob: 0.5,
            cutmix_alpha: 1.0,
            thresholds: 101,
        }
    }
}

/// Every key accepted in a config file or as a CLI override.
pub const CONFIG_KEYS: &[&str] = &[
    "num_classes",
    "feature_dim",
    "samples_per_subset",
    "lambda1",
    "lambda2",
    "uda_method",
    "tsa",
    "augmentation",
    "seed",
    "learning_rate",
    "momentum",
    "weight_decay",
    "epochs",
    "batch_size",
    "lr_decay_every",
    "warmup_epochs",
    "lr_decay_factor",
    "image_size",
    "base_width",
    "eq7_literal",
    "eq4_literal",
    "mmd_sigma",
    "mmd_unbiased",
    "epsilon_scale",
    "kmeans_max_iters",
    "kmeans_tol",
    "has_grid",
    "has_prob",
    "cutmix_alpha",
    "thresholds",
];

fn parse<T: FromStr>(value: &str) -> std::result::Result<T, String>
where
    T::Err: fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| format!("cannot parse `{value}`: {e}"))
}

impl RunConfig {
    /// Assign one key from its textual value. Errors carry a bare message;
    /// callers attach line numbers or field names.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let v = value.trim();
        match key {
            "num_classes" => self.num_classes = parse(v)?,
            "feature_dim" => self.feature_dim = parse(v)?,
            "samples_per_subset" => self.samples_per_subset = parse(v)?,
            "lambda1" => self.lambda1 = parse(v)?,
            "lambda2" => self.lambda2 = parse(v)?,
            "uda_method" => self.uda_method = v.parse()?,
            "tsa" => self.tsa = parse(v)?,
            "augmentation" => self.augmentation = v.parse()?,
            "seed" => self.seed = parse(v)?,
            "learning_rate" => self.learning_rate = parse(v)?,
            "momentum" => self.momentum = parse(v)?,
            "weight_decay" => self.weight_decay = parse(v)?,
            "epochs" => self.epochs = parse(v)?,
            "batch_size" => self.batch_size = parse(v)?,
            "lr_decay_every" => self.lr_decay_every = parse(v)?,
            "warmup_epochs" => self.warmup_epochs = parse(v)?,
            "lr_decay_factor" => self.lr_decay_factor = parse(v)?,
            "image_size" => self.image_size = parse(v)?,
            "base_width" => self.base_width = parse(v)?,
            "eq7_literal" => self.eq7_literal = parse(v)?,
            "eq4_literal" => self.eq4_literal = parse(v)?,
            "mmd_sigma" => {
                self.mmd_sigma = match v {
                    "median" => None,
                    _ => Some(parse(v)?),
                }
            }
            "mmd_unbiased" => self.mmd_unbiased = parse(v)?,
            "epsilon_scale" => self.epsilon_scale = parse(v)?,
            "kmeans_max_iters" => self.kmeans_max_iters = parse(v)?,
            "kmeans_tol" => self.kmeans_tol = parse(v)?,
            "has_grid" => self.has_grid = parse(v)?,
            "has_prob" => self.has_prob = parse(v)?,
            "cutmix_alpha" => self.cutmix_alpha = parse(v)?,
            "thresholds" => self.thresholds = parse(v)?,
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("num_classes", self.num_classes.to_string()),
            ("feature_dim", self.feature_dim.to_string()),
            ("samples_per_subset", self.samples_per_subset.to_string()),
            ("lambda1", self.lambda1.to_string()),
            ("lambda2", self.lambda2.to_string()),
            ("uda_method", self.uda_method.to_string()),
            ("tsa", self.tsa.to_string()),
            ("augmentation", self.augmentation.to_string()),
            ("seed", self.seed.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("momentum", self.momentum.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr_decay_every", self.lr_decay_every.to_string()),
            ("warmup_epochs", self.warmup_epochs.to_string()),
            ("lr_decay_factor", self.lr_decay_factor.to_string()),
            ("image_size", self.image_size.to_string()),
            ("base_width", self.base_width.to_string()),
            ("eq7_literal", self.eq7_literal.to_string()),
            ("eq4_literal", self.eq4_literal.to_string()),
            (
                "mmd_sigma",
                self.mmd_sigma
                    .map_or_else(|| "median".to_string(), |s| s.to_string()),
            ),
            ("mmd_unbiased", self.mmd_unbiased.to_string()),
            ("epsilon_scale", self.epsilon_scale.to_string()),
            ("kmeans_max_iters", self.kmeans_max_iters.to_string()),
            ("kmeans_tol", self.kmeans_tol.to_string()),
            ("has_grid", self.has_grid.to_string()),
            ("has_prob", self.has_prob.to_string()),
            ("cutmix_alpha", self.cutmix_alpha.to_string()),
            ("thresholds", self.thresholds.to_string()),
        ]
    }

    /// Parse config text; missing keys keep their defaults.
    pub fn parse_str(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::ConfigParse {
                line: line_no,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            cfg.set(key.trim(), value)
                .map_err(|message| Error::ConfigParse {
                    line: line_no,
                    message,
                })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Apply `key=value` overrides, as given on the command line.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for item in overrides {
            let item = item.as_ref();
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| Error::validation(item, "override must be `key=value`"))?;
            let key = key.trim();
            if !CONFIG_KEYS.contains(&key) {
                return Err(Error::validation(key, "unknown config key"));
            }
            self.set(key, value)
                .map_err(|message| Error::validation(key, message))?;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::validation("num_classes", "must be at least 1"));
        }
        if self.feature_dim == 0 {
            return Err(Error::validation("feature_dim", "must be at least 1"));
        }
        if self.samples_per_subset == 0 {
            return Err(Error::validation("samples_per_subset", "must be at least 1"));
        }
        for (field, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::validation(field, "must be a finite non-negative number"));
            }
        }
        if self.uda_method == UdaMethod::None && self.lambda1 > 0.0 {
            return Err(Error::validation(
                "lambda1",
                "must be 0 when uda_method = none",
            ));
        }
        if !self.tsa && self.lambda2 > 0.0 {
            return Err(Error::validation(
                "lambda2",
                "the Universum term needs tsa = true",
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("batch_size", "must be at least 1"));
        }
        if self.image_size < 16 || self.image_size % 16 != 0 {
            return Err(Error::validation("image_size", "must be a positive multiple of 16"));
        }
        if self.base_width == 0 {
            return Err(Error::validation("base_width", "must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::validation("learning_rate", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::validation("momentum", "must be in [0, 1)"));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::validation("weight_decay", "must be non-negative"));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return Err(Error::validation("lr_decay_factor", "must be in (0, 1]"));
        }
        if let Some(s) = self.mmd_sigma {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::validation("mmd_sigma", "must be positive or `median`"));
            }
        }
        if !(self.epsilon_scale > 0.0) {
            return Err(Error::validation("epsilon_scale", "must be positive"));
        }
        if self.kmeans_max_iters == 0 {
            return Err(Error::validation("kmeans_max_iters", "must be at least 1"));
        }
        if self.kmeans_tol < 0.0 {
            return Err(Error::validation("kmeans_tol", "must be non-negative"));
        }
        if self.has_grid == 0 || self.image_size % self.has_grid != 0 {
            return Err(Error::validation("has_grid", "must divide image_size"));
        }
        if !(0.0..=1.0).contains(&self.has_prob) {
            return Err(Error::validation("has_prob", "must be in [0, 1]"));
        }
        if !(self.cutmix_alpha > 0.0) {
            return Err(Error::validation("cutmix_alpha", "must be positive"));
        }
        if self.thresholds < 2 {
            return Err(Error::validation("thresholds", "need at least 2 thresholds"));
        }
        Ok(())
    }

    /// Serialize in the same format `parse_str` reads.
    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_config_string()).map_err(|e| Error::io(path, e))
    }
}

/// Read and validate a config file.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RunConfig::parse_str(&text)
}
