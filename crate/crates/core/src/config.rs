//! Flat `key = value` experiment configuration.
//!
//! Blank lines and `#` comments are ignored. Every key has a default; see
//! [`ExperimentConfig::to_text`] for the full list.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::codec::{DEFAULT_P_CONV, DEFAULT_P_FC};
use crate::error::{Error, Result};
use crate::postprocess::MergeConfig;
use crate::prior::{BetaPrior, GammaPrior, HyperPriorConfig};
use crate::trainer::{ComplexityScale, PretrainConfig, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data_dir: PathBuf,
    pub output_dir: PathBuf,
    /// Layer widths, input first.
    pub layers: Vec<usize>,
    pub seed: u64,
    /// Use only the first `n` training examples; 0 keeps all.
    pub train_subset: usize,
    /// Start from this checkpoint instead of pre-training.
    pub pretrained: Option<PathBuf>,
    pub pretrain: PretrainConfig,
    /// Number of non-zero components `J`.
    pub components: usize,
    pub pi0: f64,
    pub pi0_trainable: bool,
    pub train: TrainConfig,
    pub hyper: HyperPriorConfig,
    pub merge: MergeConfig,
    pub p_fc: u8,
    pub p_conv: u8,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data_dir: PathBuf::from("data/mnist"),
            output_dir: PathBuf::from("runs/default"),
            layers: vec![784, 300, 100, 10],
            seed: 1,
            train_subset: 0,
            pretrained: None,
            pretrain: PretrainConfig::default(),
            components: 16,
            pi0: 0.99,
            pi0_trainable: false,
            train: TrainConfig {
                tau: 0.05,
                ..TrainConfig::default()
            },
            // Precision modes ~2500 (sigma ~0.02) for the zero component, 400
            // (sigma 0.05) for the rest.
            hyper: HyperPriorConfig {
                gamma_zero: Some(GammaPrior { alpha: 5000.0, beta: 2.0 }),
                gamma_rest: Some(GammaPrior { alpha: 250.0, beta: 0.6225 }),
                beta_pi0: None,
            },
            merge: MergeConfig::default(),
            p_fc: DEFAULT_P_FC,
            p_conv: DEFAULT_P_CONV,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("invalid value {value:?} for {key}"))),
    }
}

/// `none` or `alpha,beta`.
fn parse_pair(key: &str, value: &str) -> Result<Option<(f64, f64)>> {
    if value == "none" {
        return Ok(None);
    }
    match value.split_once(',') {
        Some((a, b)) => Ok(Some((parse(key, a.trim())?, parse(key, b.trim())?))),
        None => Err(Error::Config(format!("{key} expects \"alpha,beta\" or \"none\""))),
    }
}

fn pair_text(p: Option<(f64, f64)>) -> String {
    p.map_or("none".into(), |(a, b)| format!("{a},{b}"))
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(key.trim(), value.trim()).map_err(|e| {
                let detail = match e {
                    Error::Config(m) => m,
                    other => other.to_string(),
                };
                Error::Config(format!("line {}: {detail}", n + 1))
            })?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Applies a single `key = value` override.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "data_dir" => self.data_dir = v.into(),
            "output_dir" => self.output_dir = v.into(),
            "layers" => {
                self.layers = v
                    .split(',')
                    .map(|s| parse(key, s.trim()))
                    .collect::<Result<_>>()?
            }
            "seed" => self.seed = parse(key, v)?,
            "train_subset" => self.train_subset = parse(key, v)?,
            "pretrained" => self.pretrained = (v != "none" && !v.is_empty()).then(|| v.into()),
            "pretrain.epochs" => self.pretrain.epochs = parse(key, v)?,
            "pretrain.batch_size" => self.pretrain.batch_size = parse(key, v)?,
            "pretrain.lr" => self.pretrain.lr = parse(key, v)?,
            "pretrain.weight_decay" => self.pretrain.weight_decay = parse(key, v)?,
            "mixture.components" => self.components = parse(key, v)?,
            "mixture.pi0" => self.pi0 = parse(key, v)?,
            "mixture.pi0_trainable" => self.pi0_trainable = parse_bool(key, v)?,
            "train.tau" => self.train.tau = parse(key, v)?,
            "train.epochs" => self.train.epochs = parse(key, v)?,
            "train.batch_size" => self.train.batch_size = parse(key, v)?,
            "train.lr_weights" => self.train.lr_weights = parse(key, v)?,
            "train.lr_means" => self.train.lr_means = parse(key, v)?,
            "train.lr_log_vars" => self.train.lr_log_vars = parse(key, v)?,
            "train.lr_logits" => self.train.lr_logits = parse(key, v)?,
            "train.subsample" => {
                let k: usize = parse(key, v)?;
                self.train.subsample = (k > 0).then_some(k);
            }
            "train.variance_floor" => self.train.variance_floor = parse(key, v)?,
            "train.complexity_scale" => {
                self.train.complexity_scale = match v {
                    "per_example" => ComplexityScale::PerExample,
                    "flat" => ComplexityScale::Flat,
                    _ => return Err(Error::Config(format!("{key} must be per_example or flat"))),
                }
            }
            "train.tau_on_hyper" => self.train.tau_on_hyper = parse_bool(key, v)?,
            "adam.beta1" => {
                self.train.adam.beta1 = parse(key, v)?;
                self.pretrain.adam.beta1 = self.train.adam.beta1;
            }
            "adam.beta2" => {
                self.train.adam.beta2 = parse(key, v)?;
                self.pretrain.adam.beta2 = self.train.adam.beta2;
            }
            "adam.eps" => {
                self.train.adam.eps = parse(key, v)?;
                self.pretrain.adam.eps = self.train.adam.eps;
            }
            "hyper.gamma_zero" => {
                self.hyper.gamma_zero =
                    parse_pair(key, v)?.map(|(a, b)| GammaPrior::new(a, b)).transpose()?
            }
            "hyper.gamma_rest" => {
                self.hyper.gamma_rest =
                    parse_pair(key, v)?.map(|(a, b)| GammaPrior::new(a, b)).transpose()?
            }
            "hyper.beta_pi0" => {
                self.hyper.beta_pi0 =
                    parse_pair(key, v)?.map(|(a, b)| BetaPrior::new(a, b)).transpose()?
            }
            "merge.kl_threshold" => self.merge.kl_threshold = parse(key, v)?,
            "merge.max_passes" => self.merge.max_passes = parse(key, v)?,
            "codec.p_fc" => self.p_fc = parse(key, v)?,
            "codec.p_conv" => self.p_conv = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Checks cross-field constraints that single assignments cannot.
    pub fn validate(&self) -> Result<()> {
        if self.layers.len() < 2 || self.layers.contains(&0) {
            return Err(Error::Config(format!("bad layer sizes {:?}", self.layers)));
        }
        if self.components == 0 {
            return Err(Error::Config("mixture.components must be at least 1".into()));
        }
        if !(self.pi0 > 0.0 && self.pi0 < 1.0) {
            return Err(Error::Config(format!("mixture.pi0 must lie in (0, 1), got {}", self.pi0)));
        }
        if !(self.merge.kl_threshold >= 0.0) {
            return Err(Error::Config("merge.kl_threshold must be non-negative".into()));
        }
        for p in [self.p_fc, self.p_conv] {
            if !(1..=16).contains(&p) {
                return Err(Error::Config(format!("codec bit widths must be in 1..=16, got {p}")));
            }
        }
        self.train.validate()
    }

    /// Every key with its current value, in a form [`ExperimentConfig::parse`]
    /// reads back to an equal config.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let g = |p: Option<GammaPrior>| pair_text(p.map(|g| (g.alpha, g.beta)));
        let layers: Vec<String> = self.layers.iter().map(|l| l.to_string()).collect();
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("data_dir", self.data_dir.display().to_string());
        kv("output_dir", self.output_dir.display().to_string());
        kv("layers", layers.join(","));
        kv("seed", self.seed.to_string());
        kv("train_subset", self.train_subset.to_string());
        kv(
            "pretrained",
            self.pretrained.as_ref().map_or("none".into(), |p| p.display().to_string()),
        );
        kv("pretrain.epochs", self.pretrain.epochs.to_string());
        kv("pretrain.batch_size", self.pretrain.batch_size.to_string());
        kv("pretrain.lr", format!("{:?}", self.pretrain.lr));
        kv("pretrain.weight_decay", format!("{:?}", self.pretrain.weight_decay));
        kv("mixture.components", self.components.to_string());
        kv("mixture.pi0", format!("{:?}", self.pi0));
        kv("mixture.pi0_trainable", self.pi0_trainable.to_string());
        kv("train.tau", format!("{:?}", t.tau));
        kv("train.epochs", t.epochs.to_string());
        kv("train.batch_size", t.batch_size.to_string());
        kv("train.lr_weights", format!("{:?}", t.lr_weights));
        kv("train.lr_means", format!("{:?}", t.lr_means));
        kv("train.lr_log_vars", format!("{:?}", t.lr_log_vars));
        kv("train.lr_logits", format!("{:?}", t.lr_logits));
        kv("train.subsample", t.subsample.unwrap_or(0).to_string());
        kv("train.variance_floor", format!("{:?}", t.variance_floor));
        kv(
            "train.complexity_scale",
            match t.complexity_scale {
                ComplexityScale::PerExample => "per_example".into(),
                ComplexityScale::Flat => "flat".into(),
            },
        );
        kv("train.tau_on_hyper", t.tau_on_hyper.to_string());
        kv("adam.beta1", format!("{:?}", t.adam.beta1));
        kv("adam.beta2", format!("{:?}", t.adam.beta2));
        kv("adam.eps", format!("{:?}", t.adam.eps));
        kv("hyper.gamma_zero", g(self.hyper.gamma_zero));
        kv("hyper.gamma_rest", g(self.hyper.gamma_rest));
        kv(
            "hyper.beta_pi0",
            pair_text(self.hyper.beta_pi0.map(|b| (b.alpha, b.beta))),
        );
        kv("merge.kl_threshold", format!("{:?}", self.merge.kl_threshold));
        kv("merge.max_passes", self.merge.max_passes.to_string());
        kv("codec.p_fc", self.p_fc.to_string());
        kv("codec.p_conv", self.p_conv.to_string());
        s
    }

    /// Training and pre-training seeds follow the experiment seed.
    pub fn seeded(mut self) -> Self {
        self.pretrain.seed = self.seed;
        self.train.seed = self.seed;
        self
    }
}
