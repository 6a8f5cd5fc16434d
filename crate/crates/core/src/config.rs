//! Plain-text `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key has a
//! default, unknown keys are errors, and [`ExperimentConfig::resolved`]
//! writes back every key in a fixed order.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::activation::ActivationKind;
use crate::data::split_counts;
use crate::ensemble::{EnsembleSpec, DEFAULT_SIZE};
use crate::error::{Error, Result};
use crate::model::{NetworkConfig, SelectionMode, Widths};
use crate::rng::derive_seed;
use crate::train::TrainConfig;

/// Where the samples come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synth { count: usize, size: usize },
    Dir { images: PathBuf, masks: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub source: DataSource,
    /// Used when `train_count`/`test_count` are not both given.
    pub train_fraction: f64,
    pub train_count: Option<usize>,
    pub test_count: Option<usize>,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    /// Activation of the single model built by `train`.
    pub activation: ActivationKind,
    pub mode: SelectionMode,
    pub ensemble_size: usize,
    pub pool: Vec<ActivationKind>,
    pub checkpoint: Option<PathBuf>,
    pub gradcheck_seeds: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            source: DataSource::Synth { count: 240, size: 64 },
            train_fraction: 0.88,
            train_count: None,
            test_count: None,
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            activation: ActivationKind::Relu,
            mode: SelectionMode::Sto,
            ensemble_size: DEFAULT_SIZE,
            pool: crate::activation::default_pool(),
            checkpoint: None,
            gradcheck_seeds: crate::gradsuite::DEFAULT_SEEDS,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut images = None;
        let mut masks = None;
        let mut synth = (240, 64);
        let mut dir_source = false;
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", no + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "data.source" => {
                    dir_source = match value {
                        "synth" => false,
                        "dir" => true,
                        _ => return Err(Error::Config(format!("data.source: expected synth or dir, got {value:?}"))),
                    }
                }
                "data.images_dir" => images = Some(PathBuf::from(value)),
                "data.masks_dir" => masks = Some(PathBuf::from(value)),
                "data.synth_count" => synth.0 = parse(key, value)?,
                "data.synth_size" => synth.1 = parse(key, value)?,
                other => cfg.set(other, value)?,
            }
        }
        cfg.source = if dir_source {
            DataSource::Dir {
                images: images.ok_or_else(|| Error::Config("data.images_dir is required for data.source = dir".into()))?,
                masks: masks.ok_or_else(|| Error::Config("data.masks_dir is required for data.source = dir".into()))?,
            }
        } else {
            DataSource::Synth {
                count: synth.0,
                size: synth.1,
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "split.train_fraction" => self.train_fraction = parse(key, value)?,
            "split.train_count" => self.train_count = Some(parse(key, value)?),
            "split.test_count" => self.test_count = Some(parse(key, value)?),
            "net.input_size" => self.network.input_size = parse(key, value)?,
            "net.widths" => {
                let w: Vec<usize> = parse_list(key, value)?;
                let [stem, down1, down2, aspp, fuse] = w[..] else {
                    return Err(Error::Config(format!("{key}: expected 5 widths, got {}", w.len())));
                };
                self.network.widths = Widths {
                    stem,
                    down1,
                    down2,
                    aspp,
                    fuse,
                };
            }
            "net.aspp_dilations" => self.network.aspp_dilations = parse_list(key, value)?,
            "train.epochs" => self.train.epochs = parse(key, value)?,
            "train.lr" => self.train.lr = parse(key, value)?,
            "train.momentum" => self.train.momentum = parse(key, value)?,
            "train.batch_size" => self.train.batch_size = parse(key, value)?,
            "train.loss" => self.train.loss = parse(key, value)?,
            "train.class_weights" => {
                let w: Vec<f64> = parse_list(key, value)?;
                let [bg, fg] = w[..] else {
                    return Err(Error::Config(format!("{key}: expected 2 weights, got {}", w.len())));
                };
                self.train.class_weights = [bg, fg];
            }
            "train.augment" => self.train.augment = parse_bool(key, value)?,
            "train.activation" => self.activation = parse(key, value)?,
            "ensemble.mode" => self.mode = parse(key, value)?,
            "ensemble.size" => self.ensemble_size = parse(key, value)?,
            "ensemble.pool" => self.pool = parse_list(key, value)?,
            "eval.checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
            "gradcheck.seeds" => self.gradcheck_seeds = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if let DataSource::Synth { count, .. } = self.source {
            if count == 0 {
                return Err(Error::Config("data.synth_count must be >= 1".into()));
            }
        }
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return Err(Error::Config("split.train_fraction must be in [0, 1]".into()));
        }
        if self.train_count.is_some() != self.test_count.is_some() {
            return Err(Error::Config("split.train_count and split.test_count go together".into()));
        }
        if self.gradcheck_seeds == 0 {
            return Err(Error::Config("gradcheck.seeds must be >= 1".into()));
        }
        self.network.validate()?;
        self.train.validate()?;
        self.ensemble_spec().validate()
    }

    /// `(train, test)` counts for a dataset of `n` samples.
    pub fn split_for(&self, n: usize) -> (usize, usize) {
        match (self.train_count, self.test_count) {
            (Some(tr), Some(te)) => (tr, te),
            _ => split_counts(n, self.train_fraction),
        }
    }

    pub fn synth_seed(&self) -> u64 {
        derive_seed(self.seed, 1)
    }

    pub fn split_seed(&self) -> u64 {
        derive_seed(self.seed, 2)
    }

    pub fn init_seed(&self) -> u64 {
        derive_seed(self.seed, 3)
    }

    /// Training config with its shuffle seed derived from the master seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            shuffle_seed: derive_seed(self.seed, 4),
            ..self.train.clone()
        }
    }

    pub fn ensemble_spec(&self) -> EnsembleSpec {
        EnsembleSpec {
            mode: self.mode,
            size: self.ensemble_size,
            master_seed: derive_seed(self.seed, 5),
            pool: self.pool.clone(),
            network: self.network.clone(),
            train: self.train_config(),
        }
    }

    /// Every key with its effective value, one per line; parses back to an
    /// equal config.
    pub fn resolved(&self) -> String {
        let mut lines: Vec<(String, String)> = vec![("seed".into(), self.seed.to_string())];
        lines.push(("out".into(), self.out.display().to_string()));
        match &self.source {
            DataSource::Synth { count, size } => {
                lines.push(("data.source".into(), "synth".into()));
                lines.push(("data.synth_count".into(), count.to_string()));
                lines.push(("data.synth_size".into(), size.to_string()));
            }
            DataSource::Dir { images, masks } => {
                lines.push(("data.source".into(), "dir".into()));
                lines.push(("data.images_dir".into(), images.display().to_string()));
                lines.push(("data.masks_dir".into(), masks.display().to_string()));
            }
        }
        lines.push(("split.train_fraction".into(), self.train_fraction.to_string()));
        if let (Some(tr), Some(te)) = (self.train_count, self.test_count) {
            lines.push(("split.train_count".into(), tr.to_string()));
            lines.push(("split.test_count".into(), te.to_string()));
        }
        let w = &self.network.widths;
        lines.push(("net.input_size".into(), self.network.input_size.to_string()));
        lines.push(("net.widths".into(), join(&[w.stem, w.down1, w.down2, w.aspp, w.fuse])));
        lines.push(("net.aspp_dilations".into(), join(&self.network.aspp_dilations)));
        let t = &self.train;
        lines.push(("train.epochs".into(), t.epochs.to_string()));
        lines.push(("train.lr".into(), t.lr.to_string()));
        lines.push(("train.momentum".into(), t.momentum.to_string()));
        lines.push(("train.batch_size".into(), t.batch_size.to_string()));
        lines.push(("train.loss".into(), t.loss.to_string()));
        lines.push(("train.class_weights".into(), join(&t.class_weights)));
        lines.push(("train.augment".into(), t.augment.to_string()));
        lines.push(("train.activation".into(), self.activation.to_string()));
        lines.push(("ensemble.mode".into(), self.mode.to_string()));
        lines.push(("ensemble.size".into(), self.ensemble_size.to_string()));
        lines.push(("ensemble.pool".into(), join(&self.pool)));
        if let Some(c) = &self.checkpoint {
            lines.push(("eval.checkpoint".into(), c.display().to_string()));
        }
        lines.push(("gradcheck.seeds".into(), self.gradcheck_seeds.to_string()));
        lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::parse(&cfg.resolved()).unwrap(), cfg);
    }

    #[test]
    fn parses_and_round_trips() {
        let text = "# demo\nseed = 7\n\ndata.source = dir\ndata.images_dir = a/img\ndata.masks_dir = a/msk\n\
                    net.widths = 2,4,4,2,4\nnet.input_size = 8\nnet.aspp_dilations = 1,2\n\
                    train.loss = weighted_ce\ntrain.class_weights = 0.5,2\ntrain.augment = false\n\
                    ensemble.mode = act\nensemble.size = 3\nensemble.pool = ReLU,SwishFixed,GaLU4\n\
                    split.train_count = 5\nsplit.test_count = 2\n";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.network.widths.aspp, 2);
        assert_eq!(cfg.train.class_weights, [0.5, 2.0]);
        assert!(!cfg.train.augment);
        assert_eq!(cfg.pool.len(), 3);
        assert_eq!(cfg.split_for(100), (5, 2));
        assert_eq!(ExperimentConfig::parse(&cfg.resolved()).unwrap(), cfg);
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        let e = ExperimentConfig::parse("sed = 3\n").unwrap_err();
        assert!(e.to_string().contains("unknown key \"sed\""), "{e}");
        assert!(ExperimentConfig::parse("seed 3\n").is_err());
        assert!(ExperimentConfig::parse("train.epochs = many\n").is_err());
        assert!(ExperimentConfig::parse("net.widths = 1,2\n").is_err());
        assert!(ExperimentConfig::parse("data.source = dir\n").is_err());
        assert!(ExperimentConfig::parse("split.train_count = 4\n").is_err());
        assert!(ExperimentConfig::parse("ensemble.mode = act\nensemble.size = 20\n").is_err());
    }

    #[test]
    fn default_split_is_the_protocol_share() {
        assert_eq!(ExperimentConfig::default().split_for(1000), (880, 120));
    }

    #[test]
    fn seeds_derive_from_master() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig { seed: 1, ..a.clone() };
        assert_ne!(a.init_seed(), b.init_seed());
        assert_ne!(a.synth_seed(), a.split_seed());
        assert_eq!(a.ensemble_spec().train.shuffle_seed, a.train_config().shuffle_seed);
    }
}
