//! Experiment runner: config files, the strategy × ratio × seed matrix,
//! per-cell persistence with resume, aggregation and report files.

mod config;
mod report;

pub use config::{parse_config, parse_config_str, DatasetConfig, ExperimentConfig, NetworkConfig, Profile};
pub use report::{
    aggregate, emit_report, format_mean_std, load_results, render_svg, results_csv, AggregateRow,
};

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{gen_synthetic, load_idx, render_digits, Dataset, Split, SyntheticSpec};
use crate::error::{Error, Result};
use crate::mask::{audit_sparsity, SparsityPlan};
use crate::network::{build_network, init_params, Network, ParamStore};
use crate::optim::TracePoint;
use crate::rng::derive_seed;
use crate::strategies::{
    eb_from_checkpoint, eb_stop_epoch, finetune, l1_from_checkpoint, lth_from_checkpoint, pretrain,
    strategy_lth_iter, strategy_rst, strategy_rst_iter, strategy_scratch, CellSeeds, EpochRecord,
    PretrainConfig, Provenance, StrategyKind, SubnetworkCandidate,
};

/// One (strategy, ratio, seed) cell of the matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellKey {
    pub strategy: StrategyKind,
    pub ratio: f64,
    pub seed: u64,
}

impl CellKey {
    /// File stem, e.g. `rst-iter_r0.9500_s2`.
    pub fn stem(&self) -> String {
        format!("{}_r{:.4}_s{}", self.strategy.key(), self.ratio, self.seed)
    }

    fn order(&self) -> (usize, u64, u64) {
        let s = StrategyKind::ALL.iter().position(|k| *k == self.strategy).unwrap_or(0);
        (s, self.ratio.to_bits(), self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub key: CellKey,
    pub history: Vec<EpochRecord>,
    pub final_accuracy: f64,
    pub trace: Vec<TracePoint>,
    pub cost_epochs: f64,
    /// Seconds spent on the cell; never part of results.csv.
    pub wall_time: f64,
    pub mask_checksum: String,
    pub kept: usize,
    pub prunable: usize,
    pub provenance: Provenance,
}

impl RunResult {
    /// Checks the record invariants: contiguous epochs from 0, a
    /// non-decreasing λ trace and a non-negative cost.
    pub fn check(&self) -> Result<()> {
        if self.history.iter().enumerate().any(|(i, r)| r.epoch != i) {
            return Err(Error::Consistency(format!(
                "{}: epochs are not contiguous from 0",
                self.key.stem()
            )));
        }
        let cycles = self.provenance.cycles.max(1);
        let drops = self.trace.windows(2).filter(|w| w[1].lambda < w[0].lambda).count();
        if drops >= cycles {
            return Err(Error::Consistency(format!("{}: lambda trace decreases", self.key.stem())));
        }
        if self.cost_epochs.is_nan() || self.cost_epochs < 0.0 {
            return Err(Error::Consistency(format!("{}: negative cost", self.key.stem())));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStatus {
    pub key: CellKey,
    pub file: String,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_digest: String,
    pub cells: Vec<CellStatus>,
}

#[derive(Debug, Clone)]
pub struct MatrixOutcome {
    /// Completed cells in report order.
    pub results: Vec<RunResult>,
    pub failures: Vec<(CellKey, String)>,
    /// Cells loaded from a previous run instead of recomputed.
    pub resumed: usize,
}

/// Loads or generates the train/test pair described by the config.
pub fn load_datasets(config: &DatasetConfig) -> Result<(Dataset, Dataset)> {
    match config {
        DatasetConfig::Synthetic {
            kind,
            n_per_class,
            classes,
            noise,
            dim,
            seed,
        } => gen_synthetic(&SyntheticSpec {
            kind: *kind,
            n_per_class: *n_per_class,
            classes: *classes,
            noise: *noise,
            dim: *dim,
            seed: *seed,
        }),
        DatasetConfig::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            train_limit,
            test_limit,
        } => {
            let train = load_idx(train_images, train_labels)?;
            let test = load_idx(test_images, test_labels)?;
            let classes = train.num_classes().max(test.num_classes());
            let train = match train_limit {
                Some(n) => train.head(*n)?,
                None => train,
            };
            let test = match test_limit {
                Some(n) => test.head(*n)?,
                None => test,
            };
            Ok((
                train.with_meta(classes, Split::Train)?,
                test.with_meta(classes, Split::Test)?,
            ))
        }
        DatasetConfig::Digits {
            n_train,
            n_test,
            side,
            seed,
        } => Ok((
            render_digits(*n_train, *side, *seed, Split::Train)?,
            render_digits(*n_test, *side, derive_seed(*seed, &[1]), Split::Test)?,
        )),
    }
}

/// Builds the network and checks it against the data.
pub fn build_checked(config: &NetworkConfig, train: &Dataset) -> Result<Network> {
    let net = build_network(&config.input_shape, &config.layers, config.prune)?;
    if train.sample_shape() != net.input_shape() {
        return Err(Error::Config(format!(
            "network expects inputs of shape {:?}, data has {:?}",
            net.input_shape(),
            train.sample_shape()
        )));
    }
    if train.num_classes() > net.num_classes() {
        return Err(Error::Config(format!(
            "data has {} classes, network outputs {}",
            train.num_classes(),
            net.num_classes()
        )));
    }
    Ok(net)
}

type Checkpoints = std::result::Result<Arc<BTreeMap<usize, ParamStore>>, String>;

/// Everything a cell needs, shared read-only across workers.
pub struct MatrixContext<'a> {
    pub config: &'a ExperimentConfig,
    pub network: Network,
    pub train: Dataset,
    pub test: Dataset,
    pretrained: BTreeMap<u64, OnceLock<Checkpoints>>,
}

impl<'a> MatrixContext<'a> {
    pub fn new(config: &'a ExperimentConfig) -> Result<Self> {
        let (train, test) = load_datasets(&config.dataset)?;
        let network = build_checked(&config.network, &train)?;
        Ok(Self::with_data(config, network, train, test))
    }

    pub fn with_data(config: &'a ExperimentConfig, network: Network, train: Dataset, test: Dataset) -> Self {
        let pretrained = config.seeds.iter().map(|&s| (s, OnceLock::new())).collect();
        Self {
            config,
            network,
            train,
            test,
            pretrained,
        }
    }

    fn pretrain_config(&self) -> PretrainConfig {
        PretrainConfig {
            sgd: self.config.finetune.sgd.clone(),
            epochs: self.config.finetune.epochs,
        }
    }

    /// Dense pretraining for a seed, run once and shared by every cell.
    fn checkpoints(&self, seed: u64, init: &ParamStore) -> Result<Arc<BTreeMap<usize, ParamStore>>> {
        let cell = self
            .pretrained
            .get(&seed)
            .ok_or_else(|| Error::Input(format!("seed {seed} is not part of the matrix")))?;
        let cfg = self.pretrain_config();
        let res = cell.get_or_init(|| {
            let stop = eb_stop_epoch(self.config.eb_stop_fraction, cfg.epochs).map_err(|e| e.to_string())?;
            let seeds = CellSeeds::new(seed);
            pretrain(&self.network, init, &cfg, &self.train, seeds.pretrain_data, &[stop, cfg.epochs])
                .map(Arc::new)
                .map_err(|e| e.to_string())
        });
        res.clone()
            .map_err(|m| Error::Invariant(format!("pretraining for seed {seed} failed: {m}")))
    }

    /// Builds the candidate for a cell.
    pub fn candidate(&self, key: &CellKey) -> Result<SubnetworkCandidate> {
        let cfg = self.config;
        let net = &self.network;
        let seeds = CellSeeds::new(key.seed);
        let init = init_params(net, seeds.init);
        let plan = SparsityPlan::global(key.ratio)?;
        let epochs = cfg.finetune.epochs;
        match key.strategy {
            StrategyKind::Scratch => strategy_scratch(net, &init, &plan, seeds.mask),
            StrategyKind::Rst => {
                strategy_rst(net, &init, &plan, seeds.mask, &cfg.rst, &self.train, seeds.extrusion)
            }
            StrategyKind::RstIter => strategy_rst_iter(
                net,
                &init,
                &plan,
                seeds.mask,
                cfg.rst_iter_cycles,
                &cfg.rst_iter,
                &self.train,
                seeds.extrusion,
            ),
            StrategyKind::LthIter => strategy_lth_iter(
                net,
                &init,
                &plan,
                cfg.lth_iter_cycles,
                &cfg.lth_iter,
                &self.train,
                seeds.pretrain_data,
            ),
            StrategyKind::L1 => {
                let ck = self.checkpoints(key.seed, &init)?;
                l1_from_checkpoint(net, &init, &plan, &ck[&epochs], epochs, seeds.pretrain_data)
            }
            StrategyKind::Lth => {
                let ck = self.checkpoints(key.seed, &init)?;
                lth_from_checkpoint(net, &init, &plan, &ck[&epochs], epochs, seeds.pretrain_data)
            }
            StrategyKind::Eb => {
                let ck = self.checkpoints(key.seed, &init)?;
                let stop = eb_stop_epoch(cfg.eb_stop_fraction, epochs)?;
                eb_from_checkpoint(net, &init, &plan, &ck[&stop], stop, seeds.pretrain_data)
            }
        }
    }

    /// Candidate selection followed by the shared finetuning.
    pub fn run_cell(&self, key: &CellKey) -> Result<RunResult> {
        let start = Instant::now();
        let candidate = self.candidate(key)?;
        let seeds = CellSeeds::new(key.seed);
        let out = finetune(
            &self.network,
            &candidate,
            &self.config.finetune,
            &self.train,
            &self.test,
            seeds.finetune_data,
        )?;
        let audit = audit_sparsity(&candidate.mask);
        let result = RunResult {
            key: *key,
            history: out.history,
            final_accuracy: out.final_accuracy,
            trace: candidate.trace,
            cost_epochs: candidate.provenance.cost_epochs,
            wall_time: start.elapsed().as_secs_f64(),
            mask_checksum: out.mask_checksum,
            kept: audit.kept,
            prunable: audit.total,
            provenance: candidate.provenance,
        };
        result.check()?;
        Ok(result)
    }
}

/// Every cell of the config, ordered seed-major so pretraining is shared early.
pub fn matrix_cells(config: &ExperimentConfig) -> Vec<CellKey> {
    let mut cells = Vec::new();
    for &seed in &config.seeds {
        for &ratio in &config.ratios {
            for &strategy in &config.strategies {
                cells.push(CellKey { strategy, ratio, seed });
            }
        }
    }
    cells
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub resume: bool,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    serde_json::to_vec_pretty(value).map_err(|e| Error::Format(e.to_string()))
}

fn read_cell(path: &Path) -> Result<RunResult> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn cells_dir(out_dir: &Path) -> PathBuf {
    out_dir.join("cells")
}

/// Runs every cell, persisting each as it completes. With `resume`, cells
/// already recorded under the same config digest are loaded instead of
/// recomputed. Failed cells are recorded and skipped.
pub fn run_matrix(config: &ExperimentConfig, options: RunOptions) -> Result<MatrixOutcome> {
    config.validate()?;
    let ctx = MatrixContext::new(config)?;
    run_matrix_with(&ctx, options)
}

pub fn run_matrix_with(ctx: &MatrixContext<'_>, options: RunOptions) -> Result<MatrixOutcome> {
    let config = ctx.config;
    let out = &config.out_dir;
    let cells = cells_dir(out);
    let manifest_path = out.join("manifest.json");
    let digest = config.digest()?;

    let mut done: BTreeMap<String, RunResult> = BTreeMap::new();
    if options.resume && manifest_path.exists() {
        let bytes = fs::read(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let old: Manifest = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Format(format!("{}: {e}", manifest_path.display())))?;
        if old.config_digest != digest {
            return Err(Error::Config(format!(
                "{} was produced by a different config; rerun without --resume",
                out.display()
            )));
        }
        for c in old.cells.iter().filter(|c| c.ok) {
            if let Ok(r) = read_cell(&cells.join(&c.file)) {
                if r.key == c.key {
                    done.insert(c.key.stem(), r);
                }
            }
        }
    } else if cells.exists() {
        fs::remove_dir_all(&cells).map_err(|e| Error::io(&cells, e))?;
    }
    fs::create_dir_all(&cells).map_err(|e| Error::io(&cells, e))?;
    write_atomic(&out.join("config.toml"), config.to_toml()?.as_bytes())?;

    let keys = matrix_cells(config);
    let resumed = keys.iter().filter(|k| done.contains_key(&k.stem())).count();
    let manifest = Mutex::new(Manifest {
        config_digest: digest,
        cells: keys
            .iter()
            .filter(|k| done.contains_key(&k.stem()))
            .map(|k| CellStatus {
                key: *k,
                file: format!("{}.json", k.stem()),
                ok: true,
                error: None,
            })
            .collect(),
    });
    write_atomic(&manifest_path, &to_json(&*manifest.lock().expect("manifest lock"))?)?;

    let todo: Vec<CellKey> = keys
        .iter()
        .filter(|k| !done.contains_key(&k.stem()))
        .copied()
        .collect();
    let record = |key: &CellKey, res: &Result<RunResult>| -> Result<()> {
        let file = format!("{}.json", key.stem());
        if let Ok(r) = res {
            write_atomic(&cells.join(&file), &to_json(r)?)?;
        }
        let mut m = manifest.lock().expect("manifest lock");
        m.cells.retain(|c| c.key.stem() != key.stem());
        m.cells.push(CellStatus {
            key: *key,
            file,
            ok: res.is_ok(),
            error: res.as_ref().err().map(|e| e.to_string()),
        });
        write_atomic(&manifest_path, &to_json(&*m)?)
    };
    let run_one = |key: &CellKey| -> Result<(CellKey, Result<RunResult>)> {
        log::info!("cell {} started", key.stem());
        let res = ctx.run_cell(key);
        match &res {
            Ok(r) => log::info!("cell {} done: {:.2}% in {:.1}s", key.stem(), r.final_accuracy, r.wall_time),
            Err(e) => log::warn!("cell {} failed: {e}", key.stem()),
        }
        record(key, &res)?;
        Ok((*key, res))
    };
    let computed: Vec<Result<(CellKey, Result<RunResult>)>> = if config.workers <= 1 {
        todo.iter().map(run_one).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        pool.install(|| todo.par_iter().map(run_one).collect())
    };

    let mut failures = Vec::new();
    for item in computed {
        let (key, res) = item?;
        match res {
            Ok(r) => {
                done.insert(key.stem(), r);
            }
            Err(e) => failures.push((key, e.to_string())),
        }
    }
    let mut results: Vec<RunResult> = done.into_values().collect();
    results.sort_by_key(|r| r.key.order());
    failures.sort_by_key(|(k, _)| k.order());
    Ok(MatrixOutcome {
        results,
        failures,
        resumed,
    })
}
