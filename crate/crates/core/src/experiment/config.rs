use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::SyntheticKind;
use crate::error::{Error, Result};
use crate::network::{LayerSpec, PrunePolicy};
use crate::optim::{ExtrusionConfig, LambdaParams, LrSchedule, SgdConfig, Warmup};
use crate::strategies::{FinetuneConfig, PretrainConfig, RstConfig, StrategyKind};

/// Budget profile. Profiles only change epoch and iteration counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    #[default]
    Desk,
    Paper,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            _ => Err(Error::Config(format!("unknown profile {s:?} (expected desk or paper)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    #[serde(default)]
    pub prune: PrunePolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Synthetic {
        kind: SyntheticKind,
        n_per_class: usize,
        classes: usize,
        #[serde(default)]
        noise: f64,
        #[serde(default = "two")]
        dim: usize,
        #[serde(default)]
        seed: u64,
    },
    /// IDX image/label file pairs. Relative paths are resolved against the
    /// config file's directory.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        train_limit: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_limit: Option<usize>,
    },
    /// Procedurally rendered digit images.
    Digits {
        n_train: usize,
        n_test: usize,
        #[serde(default = "sixteen")]
        side: usize,
        #[serde(default)]
        seed: u64,
    },
}

fn two() -> usize {
    2
}

fn sixteen() -> usize {
    16
}

/// SGD settings as written in a config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SgdSection {
    epochs: Option<usize>,
    /// `[[start_epoch, lr], ...]`
    lr: Option<Vec<(usize, f64)>>,
    momentum: Option<f64>,
    weight_decay: Option<f64>,
    batch_size: Option<usize>,
    warmup_epochs: Option<usize>,
    warmup_lr: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LthIterSection {
    cycles: Option<usize>,
    epochs: Option<usize>,
    lr: Option<Vec<(usize, f64)>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EbSection {
    stop_fraction: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RstSection {
    cycles: Option<usize>,
    lambda0: Option<f64>,
    eta: Option<f64>,
    lambda_b: Option<f64>,
    v_eta: Option<u64>,
    v_s: Option<u64>,
    lr: Option<f64>,
    batch_size: Option<usize>,
    momentum: Option<f64>,
    trace_every: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    profile: Option<Profile>,
    out_dir: Option<PathBuf>,
    workers: Option<usize>,
    ratios: Option<Vec<f64>>,
    seeds: Option<Vec<u64>>,
    strategies: Option<Vec<StrategyKind>>,
    network: NetworkConfig,
    dataset: DatasetConfig,
    #[serde(default)]
    finetune: SgdSection,
    #[serde(default)]
    lth_iter: LthIterSection,
    #[serde(default)]
    eb: EbSection,
    #[serde(default)]
    rst: RstSection,
    #[serde(default)]
    rst_iter: RstSection,
}

/// Fully resolved experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub out_dir: PathBuf,
    pub workers: usize,
    pub ratios: Vec<f64>,
    pub seeds: Vec<u64>,
    pub strategies: Vec<StrategyKind>,
    pub network: NetworkConfig,
    pub dataset: DatasetConfig,
    /// Shared by every strategy; also the dense pretraining schedule.
    pub finetune: FinetuneConfig,
    pub lth_iter_cycles: usize,
    pub lth_iter: PretrainConfig,
    pub eb_stop_fraction: f64,
    pub rst: RstConfig,
    pub rst_iter_cycles: usize,
    pub rst_iter: RstConfig,
}

struct Defaults {
    finetune_epochs: usize,
    finetune_lr: Vec<(usize, f64)>,
    batch_size: usize,
    warmup: Warmup,
    lth_iter_epochs: usize,
    lth_iter_lr: Vec<(usize, f64)>,
    rst: LambdaParams,
    rst_iter: LambdaParams,
    extrusion_batch: usize,
}

impl Profile {
    fn defaults(self) -> Defaults {
        match self {
            Profile::Paper => Defaults {
                finetune_epochs: 200,
                finetune_lr: vec![(0, 0.1), (100, 0.01), (150, 0.001)],
                batch_size: 128,
                warmup: Warmup { epochs: 10, lr: 0.01 },
                lth_iter_epochs: 50,
                lth_iter_lr: vec![(0, 0.1), (25, 0.01), (37, 0.001)],
                rst: LambdaParams {
                    lambda0: 0.0,
                    eta: 1e-4,
                    lambda_b: 1.0,
                    v_eta: 5,
                    v_s: 40_000,
                },
                rst_iter: LambdaParams {
                    lambda0: 0.0,
                    eta: 1e-4,
                    lambda_b: 1.0,
                    v_eta: 1,
                    v_s: 10_000,
                },
                extrusion_batch: 64,
            },
            Profile::Desk => Defaults {
                finetune_epochs: 8,
                finetune_lr: vec![(0, 0.1), (4, 0.01), (6, 0.001)],
                batch_size: 128,
                warmup: Warmup { epochs: 1, lr: 0.01 },
                lth_iter_epochs: 2,
                lth_iter_lr: vec![(0, 0.1), (1, 0.01)],
                rst: LambdaParams {
                    lambda0: 0.0,
                    eta: 2.5e-3,
                    lambda_b: 1.0,
                    v_eta: 5,
                    v_s: 8000,
                },
                rst_iter: LambdaParams {
                    lambda0: 0.0,
                    eta: 2.5e-3,
                    lambda_b: 1.0,
                    v_eta: 1,
                    v_s: 2000,
                },
                extrusion_batch: 64,
            },
        }
    }
}

const DEFAULT_RATIOS: [f64; 5] = [0.5, 0.7, 0.9, 0.95, 0.98];

fn resolve_rst(s: &RstSection, lambda: LambdaParams, batch: usize) -> RstConfig {
    RstConfig {
        lambda: LambdaParams {
            lambda0: s.lambda0.unwrap_or(lambda.lambda0),
            eta: s.eta.unwrap_or(lambda.eta),
            lambda_b: s.lambda_b.unwrap_or(lambda.lambda_b),
            v_eta: s.v_eta.unwrap_or(lambda.v_eta),
            v_s: s.v_s.unwrap_or(lambda.v_s),
        },
        extrusion: ExtrusionConfig {
            lr: s.lr.unwrap_or(1e-3),
            batch_size: s.batch_size.unwrap_or(batch),
            momentum: s.momentum.unwrap_or(0.9),
            trace_every: s.trace_every.unwrap_or(100),
        },
    }
}

fn rst_section(c: &RstConfig, cycles: Option<usize>) -> RstSection {
    RstSection {
        cycles,
        lambda0: Some(c.lambda.lambda0),
        eta: Some(c.lambda.eta),
        lambda_b: Some(c.lambda.lambda_b),
        v_eta: Some(c.lambda.v_eta),
        v_s: Some(c.lambda.v_s),
        lr: Some(c.extrusion.lr),
        batch_size: Some(c.extrusion.batch_size),
        momentum: Some(c.extrusion.momentum),
        trace_every: Some(c.extrusion.trace_every),
    }
}

impl RawConfig {
    fn resolve(self, profile_override: Option<Profile>, base: &Path) -> Result<ExperimentConfig> {
        let profile = profile_override.or(self.profile).unwrap_or_default();
        let d = profile.defaults();
        let f = &self.finetune;
        let warmup = match (f.warmup_epochs, f.warmup_lr) {
            (Some(0), _) => None,
            (e, lr) => Some(Warmup {
                epochs: e.unwrap_or(d.warmup.epochs),
                lr: lr.unwrap_or(d.warmup.lr),
            }),
        };
        let sgd = SgdConfig {
            momentum: f.momentum.unwrap_or(0.9),
            weight_decay: f.weight_decay.unwrap_or(5e-4),
            batch_size: f.batch_size.unwrap_or(d.batch_size),
            schedule: LrSchedule {
                breakpoints: f.lr.clone().unwrap_or(d.finetune_lr),
                warmup: None,
            },
        };
        let lth_iter = PretrainConfig {
            sgd: SgdConfig {
                schedule: LrSchedule {
                    breakpoints: self.lth_iter.lr.clone().unwrap_or(d.lth_iter_lr),
                    warmup: None,
                },
                ..sgd.clone()
            },
            epochs: self.lth_iter.epochs.unwrap_or(d.lth_iter_epochs),
        };
        let dataset = match self.dataset {
            DatasetConfig::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                train_limit,
                test_limit,
            } => DatasetConfig::Idx {
                train_images: base.join(train_images),
                train_labels: base.join(train_labels),
                test_images: base.join(test_images),
                test_labels: base.join(test_labels),
                train_limit,
                test_limit,
            },
            other => other,
        };
        let config = ExperimentConfig {
            profile,
            out_dir: self.out_dir.unwrap_or_else(|| PathBuf::from("results")),
            workers: self.workers.unwrap_or(1),
            ratios: self.ratios.unwrap_or_else(|| DEFAULT_RATIOS.to_vec()),
            seeds: self.seeds.unwrap_or_else(|| vec![0, 1, 2]),
            strategies: self.strategies.unwrap_or_else(|| StrategyKind::ALL.to_vec()),
            network: self.network,
            dataset,
            finetune: FinetuneConfig {
                sgd,
                epochs: f.epochs.unwrap_or(d.finetune_epochs),
                warmup,
            },
            lth_iter_cycles: self.lth_iter.cycles.unwrap_or(5),
            lth_iter,
            eb_stop_fraction: self.eb.stop_fraction.unwrap_or(0.125),
            rst: resolve_rst(&self.rst, d.rst, d.extrusion_batch),
            rst_iter_cycles: self.rst_iter.cycles.unwrap_or(5),
            rst_iter: resolve_rst(&self.rst_iter, d.rst_iter, d.extrusion_batch),
        };
        if self.rst.cycles.is_some() {
            return Err(Error::Validation("rst.cycles is not a setting; use rst_iter.cycles".into()));
        }
        config.validate()?;
        Ok(config)
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ratios.is_empty() {
            return Err(Error::Validation("ratios must not be empty".into()));
        }
        for &r in &self.ratios {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::Validation(format!(
                    "sparsity ratio {r} outside [0, 1)"
                )));
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::Validation("seeds must not be empty".into()));
        }
        if self.strategies.is_empty() {
            return Err(Error::Validation("strategies must not be empty".into()));
        }
        if self.workers == 0 {
            return Err(Error::Validation("workers must be at least 1".into()));
        }
        if self.lth_iter_cycles == 0 || self.rst_iter_cycles == 0 {
            return Err(Error::Validation("cycle counts must be at least 1".into()));
        }
        if !(self.eb_stop_fraction > 0.0 && self.eb_stop_fraction <= 1.0) {
            return Err(Error::Validation(format!(
                "eb.stop_fraction must lie in (0, 1], got {}",
                self.eb_stop_fraction
            )));
        }
        self.finetune.sgd.validate()?;
        if let Some(w) = self.finetune.warmup {
            self.finetune.sgd.schedule.clone().with_warmup(w).validate()?;
        }
        self.lth_iter.sgd.validate()?;
        for rst in [&self.rst, &self.rst_iter] {
            rst.lambda.validate()?;
            let e = &rst.extrusion;
            if e.batch_size == 0 || !(e.lr > 0.0 && e.lr.is_finite()) || !(0.0..1.0).contains(&e.momentum) {
                return Err(Error::Validation("bad extrusion optimizer settings".into()));
            }
        }
        Ok(())
    }

    /// Resolved config as TOML; parsing it back gives an equal config.
    pub fn to_toml(&self) -> Result<String> {
        let f = &self.finetune;
        let raw = RawConfig {
            profile: Some(self.profile),
            out_dir: Some(self.out_dir.clone()),
            workers: Some(self.workers),
            ratios: Some(self.ratios.clone()),
            seeds: Some(self.seeds.clone()),
            strategies: Some(self.strategies.clone()),
            network: self.network.clone(),
            dataset: self.dataset.clone(),
            finetune: SgdSection {
                epochs: Some(f.epochs),
                lr: Some(f.sgd.schedule.breakpoints.clone()),
                momentum: Some(f.sgd.momentum),
                weight_decay: Some(f.sgd.weight_decay),
                batch_size: Some(f.sgd.batch_size),
                warmup_epochs: Some(f.warmup.map_or(0, |w| w.epochs)),
                warmup_lr: f.warmup.map(|w| w.lr),
            },
            lth_iter: LthIterSection {
                cycles: Some(self.lth_iter_cycles),
                epochs: Some(self.lth_iter.epochs),
                lr: Some(self.lth_iter.sgd.schedule.breakpoints.clone()),
            },
            eb: EbSection {
                stop_fraction: Some(self.eb_stop_fraction),
            },
            rst: rst_section(&self.rst, None),
            rst_iter: rst_section(&self.rst_iter, Some(self.rst_iter_cycles)),
        };
        toml::to_string(&raw).map_err(|e| Error::Format(format!("config: {e}")))
    }

    /// Stable digest of the resolved config, used to guard resumed runs.
    pub fn digest(&self) -> Result<String> {
        use sha2::{Digest, Sha256};
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        c.workers = 1;
        Ok(hex::encode(Sha256::digest(c.to_toml()?.as_bytes())))
    }
}

/// Parses and resolves a config file.
pub fn parse_config(path: &Path, profile: Option<Profile>) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    parse_config_str(&text, path, base, profile)
}

/// Parses config text; `path` only labels errors and `base` anchors
/// relative data paths.
pub fn parse_config_str(
    text: &str,
    path: &Path,
    base: &Path,
    profile: Option<Profile>,
) -> Result<ExperimentConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let line = e
            .span()
            .map_or(0, |s| text[..s.start.min(text.len())].lines().count().max(1));
        Error::Parse {
            path: path.to_path_buf(),
            line,
            message: e.message().to_string(),
        }
    })?;
    raw.resolve(profile, base).map_err(|e| match e {
        Error::Validation(m) | Error::Config(m) => {
            Error::Validation(format!("{}: {m}", path.display()))
        }
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[network]
input_shape = [2]
layers = [
  { kind = "dense", inputs = 2, outputs = 8 },
  { kind = "relu" },
  { kind = "dense", inputs = 8, outputs = 3 },
]

[dataset]
source = "synthetic"
kind = "blobs"
n_per_class = 10
classes = 3
"#;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        parse_config_str(text, Path::new("t.toml"), Path::new("/data"), None)
    }

    #[test]
    fn minimal_config_gets_desk_defaults() {
        let c = parse(MINIMAL).unwrap();
        assert_eq!(c.profile, Profile::Desk);
        assert_eq!(c.finetune.epochs, 8);
        assert_eq!(c.ratios, DEFAULT_RATIOS.to_vec());
        assert_eq!(c.seeds, vec![0, 1, 2]);
        assert_eq!(c.strategies, StrategyKind::ALL.to_vec());
        assert_eq!(c.rst.lambda.total_iterations(), 10000);
        assert_eq!(c.rst_iter_cycles, 5);
    }

    #[test]
    fn paper_profile_constants() {
        let c = parse_config_str(MINIMAL, Path::new("t"), Path::new(""), Some(Profile::Paper)).unwrap();
        assert_eq!(c.finetune.epochs, 200);
        assert_eq!(c.rst.cost_epochs(50_000).unwrap(), 115.2);
        assert_eq!(c.rst_iter.cost_epochs(50_000).unwrap(), 25.6);
        assert_eq!(c.finetune.warmup, Some(Warmup { epochs: 10, lr: 0.01 }));
    }

    #[test]
    fn full_ratio_is_rejected() {
        let text = format!("ratios = [0.5, 1.0]\n{MINIMAL}");
        assert!(matches!(parse(&text), Err(Error::Validation(_))));
    }

    #[test]
    fn unknown_keys_are_rejected_with_line() {
        let text = format!("{MINIMAL}\n[finetune]\nepochs = 3\nlearning_rate = 0.1\n");
        match parse(&text) {
            Err(Error::Parse { line, .. }) => assert!(line >= 15, "line {line}"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn resolved_config_round_trips() {
        let text = format!(
            "profile = \"paper\"\nseeds = [4]\nstrategies = [\"rst\", \"scratch\"]\n{MINIMAL}\n[rst_iter]\ncycles = 3\n"
        );
        let c = parse(&text).unwrap();
        let emitted = c.to_toml().unwrap();
        let back = parse(&emitted).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.digest().unwrap(), c.digest().unwrap());
    }

    #[test]
    fn idx_paths_resolve_against_config_dir() {
        let text = MINIMAL.replace(
            "source = \"synthetic\"\nkind = \"blobs\"\nn_per_class = 10\nclasses = 3",
            "source = \"idx\"\ntrain_images = \"a\"\ntrain_labels = \"b\"\ntest_images = \"c\"\ntest_labels = \"d\"",
        );
        let c = parse(&text).unwrap();
        match c.dataset {
            DatasetConfig::Idx { train_images, .. } => assert_eq!(train_images, Path::new("/data/a")),
            other => panic!("{other:?}"),
        }
    }
}
