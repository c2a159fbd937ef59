use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::EvalSplit;
use crate::environments::{validate_bias, validate_temperature, Activation};
use crate::error::{Error, Result};

/// Per-environment recommendation loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecLoss {
    /// In-batch sampled softmax over scaled cosine scores.
    Softmax,
    Bpr,
    /// Point-wise log loss; ablation only.
    Pointwise,
}

/// Which user embeddings the environment generators read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorInput {
    Layer0,
    /// Readout of a propagation over the observed graph (all social weights 1).
    Propagated,
}

/// What the descent step minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// `mean + β · Var` over the environment losses.
    Invariance,
    /// The single environment's loss directly; requires one environment.
    Erm,
}

/// Training hyperparameters. Serialized as flat `key = value` text.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub dim: usize,
    pub layers: usize,
    /// Softmax temperature `τ`.
    pub tau: f64,
    /// Relaxation temperature `t`.
    pub temperature: f64,
    /// Observation bias `ε`.
    pub bias: f64,
    pub k: usize,
    pub beta: f64,
    pub lr: f64,
    /// Step size of the generator ascent; `None` uses `lr`.
    pub ascent_lr: Option<f64>,
    pub batch_size: usize,
    /// Ascent every `T` batches.
    pub adversarial_period: u64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Generator hidden width; 0 means `dim`.
    pub hidden: usize,
    pub activation: Activation,
    pub rec_loss: RecLoss,
    /// L2 weight on the layer-0 tables; `None` picks 1e-4 for BPR and 0 otherwise.
    pub reg_lambda: Option<f64>,
    pub generator_input: GeneratorInput,
    pub mask_in_batch: bool,
    pub objective: Objective,
    pub monitor_split: EvalSplit,
    pub monitor_cutoff: usize,
    pub cutoffs: Vec<usize>,
    pub no_env_gen: bool,
    pub no_invariance: bool,
    pub no_exploration: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            layers: 3,
            tau: 0.2,
            temperature: 0.2,
            bias: 0.5,
            k: 4,
            beta: 0.15,
            lr: 1e-3,
            ascent_lr: None,
            batch_size: 2048,
            adversarial_period: 20,
            max_epochs: 500,
            patience: 20,
            seed: 0,
            hidden: 0,
            activation: Activation::Relu,
            rec_loss: RecLoss::Softmax,
            reg_lambda: None,
            generator_input: GeneratorInput::Layer0,
            mask_in_batch: false,
            objective: Objective::Invariance,
            monitor_split: EvalSplit::Test,
            monitor_cutoff: 20,
            cutoffs: vec![10, 20],
            no_env_gen: false,
            no_invariance: false,
            no_exploration: false,
        }
    }
}

/// Named ablations that map onto the flag keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    /// One environment with every observed relation at weight 1 and no generator.
    NoEnvGen,
    /// `β = 0`, environments still averaged.
    NoInvariance,
    /// Never ascend on the generators.
    NoExploration,
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('_', "-").as_str() {
            "no-env-gen" | "w/o-eg" => Ok(Ablation::NoEnvGen),
            "no-invariance" | "w/o-il" => Ok(Ablation::NoInvariance),
            "no-exploration" | "w/o-ee" => Ok(Ablation::NoExploration),
            other => Err(Error::Config(format!(
                "unknown ablation `{other}` (expected no-env-gen, no-invariance or no-exploration)"
            ))),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!(
            "invalid value `{value}` for `{key}`"
        ))),
    }
}

fn parse_enum<T: for<'de> Deserialize<'de>>(key: &str, value: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(value.to_string()))
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn enum_name<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        _ => unreachable!("unit enums serialize to strings"),
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 28] = [
        "activation",
        "adversarial_period",
        "ascent_lr",
        "batch_size",
        "beta",
        "bias",
        "cutoffs",
        "dim",
        "generator_input",
        "hidden",
        "k",
        "layers",
        "lr",
        "mask_in_batch",
        "max_epochs",
        "monitor_cutoff",
        "monitor_split",
        "no_env_gen",
        "no_exploration",
        "no_invariance",
        "objective",
        "patience",
        "rec_loss",
        "reg_lambda",
        "seed",
        "tau",
        "temperature",
        "ablation",
    ];

    /// Sets one key. `ablation` is write-only and toggles the matching flag.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "dim" => self.dim = parse(key, value)?,
            "layers" => self.layers = parse(key, value)?,
            "tau" => self.tau = parse(key, value)?,
            "temperature" => self.temperature = parse(key, value)?,
            "bias" => self.bias = parse(key, value)?,
            "k" => self.k = parse(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "ascent_lr" => {
                self.ascent_lr = if value == "auto" {
                    None
                } else {
                    Some(parse(key, value)?)
                }
            }
            "batch_size" => self.batch_size = parse(key, value)?,
            "adversarial_period" => self.adversarial_period = parse(key, value)?,
            "max_epochs" => self.max_epochs = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "activation" => self.activation = parse_enum(key, value)?,
            "rec_loss" => self.rec_loss = parse_enum(key, value)?,
            "reg_lambda" => {
                self.reg_lambda = if value == "auto" {
                    None
                } else {
                    Some(parse(key, value)?)
                }
            }
            "generator_input" => self.generator_input = parse_enum(key, value)?,
            "mask_in_batch" => self.mask_in_batch = parse_bool(key, value)?,
            "objective" => self.objective = parse_enum(key, value)?,
            "monitor_split" => self.monitor_split = parse_enum(key, value)?,
            "monitor_cutoff" => self.monitor_cutoff = parse(key, value)?,
            "cutoffs" => {
                self.cutoffs = value
                    .split(',')
                    .map(|c| parse(key, c.trim()))
                    .collect::<Result<Vec<usize>>>()?;
            }
            "no_env_gen" => self.no_env_gen = parse_bool(key, value)?,
            "no_invariance" => self.no_invariance = parse_bool(key, value)?,
            "no_exploration" => self.no_exploration = parse_bool(key, value)?,
            "ablation" => {
                for name in value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty() && *s != "none")
                {
                    self.apply_ablation(name.parse()?);
                }
            }
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub fn apply_ablation(&mut self, ablation: Ablation) {
        match ablation {
            Ablation::NoEnvGen => self.no_env_gen = true,
            Ablation::NoInvariance => self.no_invariance = true,
            Ablation::NoExploration => self.no_exploration = true,
        }
    }

    /// Parses `key = value` lines on top of the defaults. `#` starts a comment.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {}: expected `key = value`, got `{line}`",
                    n + 1
                ))
            })?;
            self.set(key, value).map_err(|e| {
                Error::Config(format!(
                    "line {}: {}",
                    n + 1,
                    e.to_string().trim_start_matches("invalid configuration: ")
                ))
            })?;
        }
        Ok(())
    }

    /// Every key with its current value, sorted by key.
    pub fn to_map(&self) -> BTreeMap<String, String> {
        let opt = |v: Option<f64>| v.map_or_else(|| "auto".to_string(), |x| x.to_string());
        let entries: [(&str, String); 27] = [
            ("dim", self.dim.to_string()),
            ("layers", self.layers.to_string()),
            ("tau", self.tau.to_string()),
            ("temperature", self.temperature.to_string()),
            ("bias", self.bias.to_string()),
            ("k", self.k.to_string()),
            ("beta", self.beta.to_string()),
            ("lr", self.lr.to_string()),
            ("ascent_lr", opt(self.ascent_lr)),
            ("batch_size", self.batch_size.to_string()),
            ("adversarial_period", self.adversarial_period.to_string()),
            ("max_epochs", self.max_epochs.to_string()),
            ("patience", self.patience.to_string()),
            ("seed", self.seed.to_string()),
            ("hidden", self.hidden.to_string()),
            ("activation", enum_name(&self.activation)),
            ("rec_loss", enum_name(&self.rec_loss)),
            ("reg_lambda", opt(self.reg_lambda)),
            ("generator_input", enum_name(&self.generator_input)),
            ("mask_in_batch", self.mask_in_batch.to_string()),
            ("objective", enum_name(&self.objective)),
            ("monitor_split", enum_name(&self.monitor_split)),
            ("monitor_cutoff", self.monitor_cutoff.to_string()),
            (
                "cutoffs",
                self.cutoffs
                    .iter()
                    .map(ToString::to_string)
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("no_env_gen", self.no_env_gen.to_string()),
            ("no_invariance", self.no_invariance.to_string()),
            ("no_exploration", self.no_exploration.to_string()),
        ];
        entries
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect()
    }

    /// Sorted `key = value` lines; identical for equal configs whatever the
    /// order keys were given in.
    pub fn canonical_text(&self) -> String {
        self.to_map()
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Number of environments actually simulated.
    pub fn effective_k(&self) -> usize {
        if self.no_env_gen {
            1
        } else {
            self.k
        }
    }

    pub fn effective_beta(&self) -> f64 {
        if self.no_env_gen || self.no_invariance {
            0.0
        } else {
            self.beta
        }
    }

    pub fn explores(&self) -> bool {
        !self.no_env_gen && !self.no_exploration
    }

    pub fn effective_hidden(&self) -> usize {
        if self.hidden == 0 {
            self.dim
        } else {
            self.hidden
        }
    }

    pub fn effective_reg_lambda(&self) -> f64 {
        self.reg_lambda.unwrap_or(match self.rec_loss {
            RecLoss::Bpr => 1e-4,
            RecLoss::Softmax | RecLoss::Pointwise => 0.0,
        })
    }

    pub fn effective_ascent_lr(&self) -> f64 {
        self.ascent_lr.unwrap_or(self.lr)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.dim == 0 {
            return bad("dim must be >= 1".into());
        }
        if self.k == 0 {
            return bad("k must be >= 1".into());
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(format!("beta {} must be >= 0", self.beta));
        }
        if self.adversarial_period == 0 {
            return bad("adversarial_period must be >= 1".into());
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau {} must be > 0", self.tau));
        }
        validate_temperature(self.temperature)?;
        validate_bias(self.bias)?;
        for (name, lr) in [("lr", self.lr), ("ascent_lr", self.effective_ascent_lr())] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("{name} {lr} must be > 0"));
            }
        }
        if !(self.effective_reg_lambda() >= 0.0) {
            return bad("reg_lambda must be >= 0".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.cutoffs.is_empty() || self.cutoffs.contains(&0) {
            return bad("cutoffs must be a nonempty list of positive integers".into());
        }
        if !self.cutoffs.contains(&self.monitor_cutoff) {
            return bad(format!(
                "monitor_cutoff {} is not among cutoffs {:?}",
                self.monitor_cutoff, self.cutoffs
            ));
        }
        if self.objective == Objective::Erm && self.effective_k() != 1 {
            return bad(
                "objective = erm needs exactly one environment (k = 1 or no_env_gen)".into(),
            );
        }
        Ok(())
    }
}

impl fmt::Display for TrainConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical_text())
    }
}
