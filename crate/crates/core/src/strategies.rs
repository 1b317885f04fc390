//! Subnetwork selection strategies and the shared finetuning procedure.
//!
//! A strategy produces a [`SubnetworkCandidate`]: a mask from some checkpoint
//! of the network and the weights the subnetwork starts finetuning from.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mask::{kept_count, magnitude_mask, magnitude_submask, random_mask, random_submask};
use crate::mask::{Mask, SparsityPlan};
use crate::network::{Network, ParamId, ParamStore};
use crate::optim::{
    evaluate, extra_cost, extrusion_run_within, train, train_epoch, ExtrusionConfig, LambdaParams,
    SgdConfig, SgdState, TracePoint, Warmup,
};
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    L1,
    Lth,
    LthIter,
    Eb,
    Scratch,
    Rst,
    RstIter,
}

impl StrategyKind {
    /// Report order: pretrain-based first, then the LTH family, scratch, RST.
    pub const ALL: [StrategyKind; 7] = [
        StrategyKind::L1,
        StrategyKind::Lth,
        StrategyKind::LthIter,
        StrategyKind::Eb,
        StrategyKind::Scratch,
        StrategyKind::Rst,
        StrategyKind::RstIter,
    ];

    pub fn label(self) -> &'static str {
        match self {
            StrategyKind::L1 => "L1",
            StrategyKind::Lth => "LTH",
            StrategyKind::LthIter => "LTH-Iter",
            StrategyKind::Eb => "EB",
            StrategyKind::Scratch => "Scratch",
            StrategyKind::Rst => "RST",
            StrategyKind::RstIter => "RST-Iter",
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            StrategyKind::L1 => "l1",
            StrategyKind::Lth => "lth",
            StrategyKind::LthIter => "lth-iter",
            StrategyKind::Eb => "eb",
            StrategyKind::Scratch => "scratch",
            StrategyKind::Rst => "rst",
            StrategyKind::RstIter => "rst-iter",
        }
    }

    /// Strategies whose finetuning starts with the warm-up prefix.
    pub fn uses_warmup(self) -> bool {
        matches!(self, StrategyKind::Rst | StrategyKind::RstIter)
    }

    /// Strategies that need the dense pretraining run.
    pub fn needs_pretrain(self) -> bool {
        matches!(self, StrategyKind::L1 | StrategyKind::Lth | StrategyKind::Eb)
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.key() == norm || k.label().eq_ignore_ascii_case(&norm))
            .ok_or_else(|| Error::Config(format!("unknown strategy {s:?}")))
    }
}

/// Seeds for one experiment cell, all derived from the run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellSeeds {
    pub init: u64,
    pub mask: u64,
    pub pretrain_data: u64,
    pub extrusion: u64,
    pub finetune_data: u64,
}

impl CellSeeds {
    pub fn new(seed: u64) -> Self {
        Self {
            init: derive_seed(seed, &[0x1a17]),
            mask: derive_seed(seed, &[0x3a5c]),
            pretrain_data: derive_seed(seed, &[0x7e7a]),
            extrusion: derive_seed(seed, &[0xe87d]),
            finetune_data: derive_seed(seed, &[0xf17e]),
        }
    }
}

/// Where a candidate came from: the mask function and checkpoint, the weight
/// function and checkpoint, and everything random that went into it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub strategy: StrategyKind,
    pub f_m: String,
    pub k_m: String,
    pub f_w: String,
    pub k_w: String,
    pub cycles: usize,
    pub mask_seed: Option<u64>,
    pub data_seed: Option<u64>,
    pub init_checksum: String,
    /// Training spent before finetuning, in equivalent epochs.
    pub cost_epochs: f64,
}

#[derive(Debug, Clone)]
pub struct SubnetworkCandidate {
    pub mask: Mask,
    pub weights: ParamStore,
    pub provenance: Provenance,
    /// Extrusion trace (RST family only, cycles concatenated).
    pub trace: Vec<TracePoint>,
    /// Kept set after each cycle (iterative strategies only).
    pub cycle_masks: Vec<Mask>,
}

impl SubnetworkCandidate {
    /// Layout: `CANDIDATE 1`, one line of JSON provenance, then a mask file
    /// and a parameter file back to back.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = b"CANDIDATE 1\n".to_vec();
        let prov = serde_json::to_string(&self.provenance)
            .map_err(|e| Error::Format(format!("provenance: {e}")))?;
        out.extend_from_slice(prov.as_bytes());
        out.push(b'\n');
        out.extend_from_slice(&self.mask.to_bytes());
        self.weights.write_to(&mut out);
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Loads a saved candidate. Traces and cycle masks are not stored.
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = BufReader::new(file);
        let mut line = String::new();
        let mut read = |r: &mut BufReader<std::fs::File>| -> Result<String> {
            line.clear();
            r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
            Ok(line.trim_end().to_string())
        };
        if read(&mut reader)? != "CANDIDATE 1" {
            return Err(Error::Format(format!("{}: missing CANDIDATE header", path.display())));
        }
        let provenance: Provenance = serde_json::from_str(&read(&mut reader)?)
            .map_err(|e| Error::Format(format!("{}: provenance: {e}", path.display())))?;
        let mask = Mask::read_from(&mut reader)?;
        let weights = ParamStore::read_from(&mut reader)?;
        Ok(Self {
            mask,
            weights,
            provenance,
            trace: Vec::new(),
            cycle_masks: Vec::new(),
        })
    }
}

/// Dense training used by the pretrain-based strategies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub sgd: SgdConfig,
    pub epochs: usize,
}

/// Trains a dense copy of `init` from its snapshot and returns the
/// parameters after each epoch listed in `capture` (0 = the initialization).
pub fn pretrain(
    network: &Network,
    init: &ParamStore,
    config: &PretrainConfig,
    data: &Dataset,
    seed: u64,
    capture: &[usize],
) -> Result<BTreeMap<usize, ParamStore>> {
    if let Some(&e) = capture.iter().find(|&&e| e > config.epochs) {
        return Err(Error::Input(format!(
            "checkpoint epoch {e} is past the {}-epoch budget",
            config.epochs
        )));
    }
    let mut params = init.rewound();
    let mut out = BTreeMap::new();
    if capture.contains(&0) {
        out.insert(0, params.clone());
    }
    train(network, &mut params, None, &config.sgd, config.epochs, data, seed, |e, p| {
        if capture.contains(&e) {
            out.insert(e, p.clone());
        }
    })?;
    Ok(out)
}

fn rewound_masked(init: &ParamStore, mask: &Mask) -> Result<ParamStore> {
    let mut w = init.rewound();
    mask.apply(&mut w)?;
    Ok(w)
}

/// A random subnetwork trained from scratch.
pub fn strategy_scratch(
    network: &Network,
    init: &ParamStore,
    plan: &SparsityPlan,
    mask_seed: u64,
) -> Result<SubnetworkCandidate> {
    let mask = random_mask(network, plan, mask_seed)?;
    let weights = rewound_masked(init, &mask)?;
    Ok(SubnetworkCandidate {
        mask,
        weights,
        provenance: Provenance {
            strategy: StrategyKind::Scratch,
            f_m: "random".into(),
            k_m: "0".into(),
            f_w: "identity".into(),
            k_w: "0".into(),
            cycles: 1,
            mask_seed: Some(mask_seed),
            data_seed: None,
            init_checksum: init.init_checksum(),
            cost_epochs: 0.0,
        },
        trace: Vec::new(),
        cycle_masks: Vec::new(),
    })
}

/// Magnitude mask from a pretrained checkpoint, weights rewound to init.
pub fn lth_from_checkpoint(
    network: &Network,
    init: &ParamStore,
    plan: &SparsityPlan,
    checkpoint: &ParamStore,
    checkpoint_epoch: usize,
    data_seed: u64,
) -> Result<SubnetworkCandidate> {
    let mask = magnitude_mask(network, checkpoint, plan)?;
    let weights = rewound_masked(init, &mask)?;
    Ok(SubnetworkCandidate {
        mask,
        weights,
        provenance: Provenance {
            strategy: StrategyKind::Lth,
            f_m: "magnitude".into(),
            k_m: checkpoint_epoch.to_string(),
            f_w: "identity".into(),
            k_w: "0".into(),
            cycles: 1,
            mask_seed: None,
            data_seed: Some(data_seed),
            init_checksum: init.init_checksum(),
            cost_epochs: checkpoint_epoch as f64,
        },
        trace: Vec::new(),
        cycle_masks: Vec::new(),
    })
}

pub fn strategy_lth(
    network: &Network,
    init: &ParamStore,
    plan: &SparsityPlan,
    config: &PretrainConfig,
    data: &Dataset,
    data_seed: u64,
) -> Result<SubnetworkCandidate> {
    let ckpt = pretrain(network, init, config, data, data_seed, &[config.epochs])?;
    lth_from_checkpoint(network, init, plan, &ckpt[&config.epochs], config.epochs, data_seed)
}

/// Early-stop epoch for a fraction of the pretraining budget.
pub fn eb_stop_epoch(stop_fraction: f64, epochs: usize) -> Result<usize> {
    if !(stop_fraction > 0.0 && stop_fraction <= 1.0) {
        return Err(Error::Config(format!(
            "stop fraction must lie in (0, 1], got {stop_fraction}"
        )));
    }
    Ok((stop_fraction * epochs as f64).round() as usize)
}

/// LTH with the mask drawn from an early checkpoint of the same pretraining run.
pub fn eb_from_checkpoint(
    network: &Network,
    init: &ParamStore,
    plan: &SparsityPlan,
    checkpoint: &ParamStore,
    stop_epoch: usize,
    data_seed: u64,
) -> Result<SubnetworkCandidate> {
    let mut c = lth_from_checkpoint(network, init, plan, checkpoint, stop_epoch, data_seed)?;
    c.provenance.strategy = StrategyKind::Eb;
    Ok(c)
}

pub fn strategy_eb(
    network: &Network,
    init: &ParamStore,
    plan: &SparsityPlan,
    config: &PretrainConfig,
    stop_fraction: f64,
    data: &Dataset,
    data_seed: u64,
) -> Result<SubnetworkCandidate> {
    let stop = eb_stop_epoch(stop_fraction, config.epochs)?;
    let ckpt = pretrain(network, init, config, data, data_seed, &[stop])?;
    eb_from_checkpoint(network, init, plan, &ckpt[&stop], stop, data_seed)
}

/// Conventional pruning: magnitude mask and weights from the same
/// pretrained checkpoint.
pub fn l1_from_checkpoint(
    network: &Network,
    init: &ParamStore,
    plan: &SparsityPlan,
    pretrained: &ParamStore,
    pretrain_epochs: usize,
    data_seed: u64,
) -> Result<SubnetworkCandidate> {
    let mask = magnitude_mask(network, pretrained, plan)?;
    let mut weights = pretrained.clone();
    mask.apply(&mut weights)?;
    Ok(SubnetworkCandidate {
        mask,
        weights,
        provenance: Provenance {
            strategy: StrategyKind::L1,
            f_m: "magnitude".into(),
            k_m: pretrain_epochs.to_string(),
            f_w: "identity".into(),
            k_w: pretrain_epochs.to_string(),
            cycles: 1,
            mask_seed: None,
            data_seed: Some(data_seed),
            init_checksum: init.init_checksum(),
            cost_epochs: pretrain_epochs as f64,
        },
        trace: Vec::new(),
        cycle_masks: Vec::new(),
    })
}

pub fn strategy_l1(
    network: &Network,
    init: &ParamStore,
    plan: &SparsityPlan,
    config: &PretrainConfig,
    data: &Dataset,
    data_seed: u64,
) -> Result<SubnetworkCandidate> {
    let ckpt = pretrain(network, init, config, data, data_seed, &[config.epochs])?;
    l1_from_checkpoint(network, init, plan, &ckpt[&config.epochs], config.epochs, data_seed)
}

/// Per-layer kept counts after cycle `c` of `cycles` (1-based): the keep
/// fraction compounds geometrically, and the last cycle lands exactly on the
/// plan.
pub fn cycle_targets(
    network: &Network,
    plan: &SparsityPlan,
    cycle: usize,
    cycles: usize,
) -> Result<BTreeMap<ParamId, usize>> {
    if cycles == 0 || cycle == 0 || cycle > cycles {
        return Err(Error::Config(format!(
            "cycle {cycle} out of range for {cycles} cycles"
        )));
    }
    let mut out = BTreeMap::new();
    for (id, shape) in network.prunable_shapes() {
        let n: usize = shape.iter().product();
        let final_count = plan.kept_count(id.layer, n);
        let count = if cycle == cycles {
            final_count
        } else {
            let keep = plan.keep_ratio(id.layer).powf(cycle as f64 / cycles as f64);
            kept_count(n, keep).max(final_count)
        };
        out.insert(id, count);
    }
    Ok(out)
}

/// Iterative magnitude pruning. Every cycle rewinds the survivors to init,
/// trains them for the mini budget with the rest frozen at zero, and keeps
/// the largest survivors.
pub fn strategy_lth_iter(
    network: &Network,
    init: &ParamStore,
    plan: &SparsityPlan,
    cycles: usize,
    mini: &PretrainConfig,
    data: &Dataset,
    data_seed: u64,
) -> Result<SubnetworkCandidate> {
    plan.validate()?;
    if cycles == 0 {
        return Err(Error::Config("need at least one cycle".into()));
    }
    let mut current = Mask::dense(network);
    let mut cycle_masks = Vec::with_capacity(cycles);
    for c in 1..=cycles {
        let mut params = rewound_masked(init, &current)?;
        train(network, &mut params, Some(&current), &mini.sgd, mini.epochs, data, data_seed, |_, _| {})?;
        current = magnitude_submask(&params, &current, &cycle_targets(network, plan, c, cycles)?)?;
        cycle_masks.push(current.clone());
    }
    let weights = rewound_masked(init, &current)?;
    Ok(SubnetworkCandidate {
        mask: current,
        weights,
        provenance: Provenance {
            strategy: StrategyKind::LthIter,
            f_m: "magnitude".into(),
            k_m: format!("{}x{}", cycles, mini.epochs),
            f_w: "identity".into(),
            k_w: "0".into(),
            cycles,
            mask_seed: None,
            data_seed: Some(data_seed),
            init_checksum: init.init_checksum(),
            cost_epochs: (cycles * mini.epochs) as f64,
        },
        trace: Vec::new(),
        cycle_masks,
    })
}

/// Penalty schedule and optimizer for one extrusion phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RstConfig {
    pub lambda: LambdaParams,
    pub extrusion: ExtrusionConfig,
}

impl RstConfig {
    pub fn cost_epochs(&self, dataset_size: usize) -> Result<f64> {
        extra_cost(&self.lambda, self.extrusion.batch_size, dataset_size)
    }
}

/// Random subnetwork transformed by extrusion: the dense network trains
/// while the weights outside the random mask are driven to zero, then
/// removed.
pub fn strategy_rst(
    network: &Network,
    init: &ParamStore,
    plan: &SparsityPlan,
    mask_seed: u64,
    config: &RstConfig,
    data: &Dataset,
    extrusion_seed: u64,
) -> Result<SubnetworkCandidate> {
    let mask = random_mask(network, plan, mask_seed)?;
    let out = extrusion_run_within(
        network,
        &init.rewound(),
        None,
        &mask,
        &config.lambda,
        data,
        &config.extrusion,
        derive_seed(extrusion_seed, &[0]),
    )?;
    Ok(SubnetworkCandidate {
        mask,
        weights: out.pruned,
        provenance: Provenance {
            strategy: StrategyKind::Rst,
            f_m: "random".into(),
            k_m: "0".into(),
            f_w: "extrusion".into(),
            k_w: "0".into(),
            cycles: 1,
            mask_seed: Some(mask_seed),
            data_seed: Some(extrusion_seed),
            init_checksum: init.init_checksum(),
            cost_epochs: config.cost_epochs(data.len())?,
        },
        trace: out.trace,
        cycle_masks: Vec::new(),
    })
}

/// Iterative RST: each cycle draws the next kept set at random from the
/// survivors, extrudes the rest with a fresh penalty ramp and removes it.
/// Weights carry over between cycles.
#[allow(clippy::too_many_arguments)]
pub fn strategy_rst_iter(
    network: &Network,
    init: &ParamStore,
    plan: &SparsityPlan,
    mask_seed: u64,
    cycles: usize,
    config: &RstConfig,
    data: &Dataset,
    extrusion_seed: u64,
) -> Result<SubnetworkCandidate> {
    plan.validate()?;
    if cycles == 0 {
        return Err(Error::Config("need at least one cycle".into()));
    }
    let mut current = Mask::dense(network);
    let mut weights = init.rewound();
    let mut trace = Vec::new();
    let mut cycle_masks = Vec::with_capacity(cycles);
    for c in 1..=cycles {
        let targets = cycle_targets(network, plan, c, cycles)?;
        let next = random_submask(&current, &targets, mask_seed, (c - 1) as u64)?;
        let survivors = (c > 1).then_some(&current);
        let out = extrusion_run_within(
            network,
            &weights,
            survivors,
            &next,
            &config.lambda,
            data,
            &config.extrusion,
            derive_seed(extrusion_seed, &[(c - 1) as u64]),
        )?;
        let offset = trace.last().map_or(0, |t: &TracePoint| t.iteration);
        trace.extend(out.trace.iter().map(|t| TracePoint {
            iteration: t.iteration + offset,
            ..*t
        }));
        weights = out.pruned;
        current = next;
        cycle_masks.push(current.clone());
    }
    Ok(SubnetworkCandidate {
        mask: current,
        weights,
        provenance: Provenance {
            strategy: StrategyKind::RstIter,
            f_m: "random".into(),
            k_m: "0".into(),
            f_w: "extrusion".into(),
            k_w: "0".into(),
            cycles,
            mask_seed: Some(mask_seed),
            data_seed: Some(extrusion_seed),
            init_checksum: init.init_checksum(),
            cost_epochs: cycles as f64 * config.cost_epochs(data.len())?,
        },
        trace,
        cycle_masks,
    })
}

/// The finetuning schedule shared by every strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub sgd: SgdConfig,
    pub epochs: usize,
    /// Prefix applied only to the RST family.
    pub warmup: Option<Warmup>,
}

impl FinetuneConfig {
    pub fn sgd_for(&self, strategy: StrategyKind) -> SgdConfig {
        let mut sgd = self.sgd.clone();
        if strategy.uses_warmup() {
            if let Some(w) = self.warmup {
                sgd.schedule = sgd.schedule.with_warmup(w);
            }
        }
        sgd
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Learning rate used during this epoch; none for the initial evaluation.
    pub lr: Option<f64>,
    pub train_loss: Option<f64>,
    pub test_loss: f64,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub history: Vec<EpochRecord>,
    /// Test accuracy after the last epoch.
    pub final_accuracy: f64,
    pub weights: ParamStore,
    pub mask_checksum: String,
}

/// Trains the kept weights of a candidate with every masked weight frozen at
/// zero. Epoch 0 of the history is the evaluation before any training.
pub fn finetune(
    network: &Network,
    candidate: &SubnetworkCandidate,
    config: &FinetuneConfig,
    train_data: &Dataset,
    test_data: &Dataset,
    data_seed: u64,
) -> Result<FinetuneOutcome> {
    finetune_with(network, candidate, config, train_data, test_data, data_seed, |_, _| {})
}

/// [`finetune`] with a hook that sees the weights at every logged epoch.
#[allow(clippy::too_many_arguments)]
pub fn finetune_with(
    network: &Network,
    candidate: &SubnetworkCandidate,
    config: &FinetuneConfig,
    train_data: &Dataset,
    test_data: &Dataset,
    data_seed: u64,
    mut on_epoch: impl FnMut(usize, &ParamStore),
) -> Result<FinetuneOutcome> {
    let mask = &candidate.mask;
    mask.check_covers(network)?;
    if !mask.zeros_hold(&candidate.weights) {
        return Err(Error::Input(
            "candidate has nonzero weights outside its mask".into(),
        ));
    }
    let sgd = config.sgd_for(candidate.provenance.strategy);
    sgd.validate()?;
    let checksum = mask.checksum();
    let mut weights = candidate.weights.clone();
    let first = evaluate(network, &weights, Some(mask), test_data)?;
    on_epoch(0, &weights);
    let mut history = vec![EpochRecord {
        epoch: 0,
        lr: None,
        train_loss: None,
        test_loss: first.loss,
        test_accuracy: first.accuracy,
    }];
    let mut state = SgdState::new();
    for e in 0..config.epochs {
        let lr = sgd.schedule.lr_at(e);
        let loss = train_epoch(
            network,
            &mut weights,
            Some(mask),
            &mut state,
            &sgd,
            lr,
            train_data,
            data_seed,
            e as u64,
        )?;
        if !mask.zeros_hold(&weights) {
            return Err(Error::Invariant(format!(
                "masked weights left zero during finetuning epoch {}",
                e + 1
            )));
        }
        let ev = evaluate(network, &weights, Some(mask), test_data)?;
        on_epoch(e + 1, &weights);
        history.push(EpochRecord {
            epoch: e + 1,
            lr: Some(lr),
            train_loss: Some(loss),
            test_loss: ev.loss,
            test_accuracy: ev.accuracy,
        });
    }
    if mask.checksum() != checksum {
        return Err(Error::Invariant("mask changed during finetuning".into()));
    }
    let final_accuracy = history.last().map_or(0.0, |r| r.test_accuracy);
    Ok(FinetuneOutcome {
        history,
        final_accuracy,
        weights,
        mask_checksum: checksum,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, SyntheticKind, SyntheticSpec};
    use crate::mask::audit_sparsity;
    use crate::network::{build_network, init_params, LayerSpec, PrunePolicy};
    use crate::optim::LrSchedule;

    fn setup() -> (Network, ParamStore, Dataset, Dataset) {
        let net = build_network(
            &[4],
            &[
                LayerSpec::Dense { inputs: 4, outputs: 24 },
                LayerSpec::Relu,
                LayerSpec::Dense { inputs: 24, outputs: 24 },
                LayerSpec::Relu,
                LayerSpec::Dense { inputs: 24, outputs: 3 },
            ],
            PrunePolicy::All,
        )
        .unwrap();
        let init = init_params(&net, 11);
        let (tr, te) = gen_synthetic(&SyntheticSpec {
            kind: SyntheticKind::Blobs,
            n_per_class: 40,
            classes: 3,
            noise: 0.5,
            dim: 4,
            seed: 5,
        })
        .unwrap();
        (net, init, tr, te)
    }

    fn sgd() -> SgdConfig {
        SgdConfig {
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 16,
            schedule: LrSchedule::constant(0.05),
        }
    }

    fn rst_config(v_s: u64) -> RstConfig {
        RstConfig {
            lambda: LambdaParams {
                lambda0: 0.0,
                eta: 0.1,
                lambda_b: 1.0,
                v_eta: 2,
                v_s,
            },
            extrusion: ExtrusionConfig {
                lr: 0.05,
                batch_size: 16,
                momentum: 0.9,
                trace_every: 5,
            },
        }
    }

    fn kept_equal_init(c: &SubnetworkCandidate, init: &ParamStore) -> bool {
        c.mask.layers().iter().all(|(id, l)| {
            let w = c.weights.get(*id).unwrap().data();
            let i = init.init_snapshot()[id].data();
            l.kept_indices().all(|j| w[j].to_bits() == i[j].to_bits())
        })
    }

    #[test]
    fn strategy_names_parse() {
        for k in StrategyKind::ALL {
            assert_eq!(k.key().parse::<StrategyKind>().unwrap(), k);
            assert_eq!(k.label().parse::<StrategyKind>().unwrap(), k);
        }
        assert!("imp".parse::<StrategyKind>().is_err());
    }

    #[test]
    fn scratch_matches_plan_and_init() {
        let (net, init, _, _) = setup();
        let plan = SparsityPlan::global(0.75).unwrap();
        let c = strategy_scratch(&net, &init, &plan, 3).unwrap();
        for l in audit_sparsity(&c.mask).layers {
            assert_eq!(l.kept, kept_count(l.total, 0.25));
        }
        assert!(kept_equal_init(&c, &init));
        let d = strategy_scratch(&net, &init, &plan, 4).unwrap();
        assert_ne!(c.mask, d.mask);
        assert_eq!(c.mask.popcount(), d.mask.popcount());
    }

    #[test]
    fn lth_with_no_pretraining_uses_init_magnitudes() {
        let (net, init, tr, _) = setup();
        let plan = SparsityPlan::global(0.5).unwrap();
        let cfg = PretrainConfig { sgd: sgd(), epochs: 0 };
        let c = strategy_lth(&net, &init, &plan, &cfg, &tr, 1).unwrap();
        assert_eq!(c.mask, magnitude_mask(&net, &init, &plan).unwrap());
    }

    #[test]
    fn lth_rewinds_and_l1_keeps_pretrained() {
        let (net, init, tr, _) = setup();
        let plan = SparsityPlan::global(0.5).unwrap();
        let cfg = PretrainConfig { sgd: sgd(), epochs: 2 };
        let lth = strategy_lth(&net, &init, &plan, &cfg, &tr, 1).unwrap();
        assert!(kept_equal_init(&lth, &init));
        let l1 = strategy_l1(&net, &init, &plan, &cfg, &tr, 1).unwrap();
        assert_eq!(l1.mask, lth.mask);
        let pre = pretrain(&net, &init, &cfg, &tr, 1, &[2]).unwrap();
        let mut expect = pre[&2].clone();
        l1.mask.apply(&mut expect).unwrap();
        assert_eq!(l1.weights.checksum(), expect.checksum());
        assert_eq!(l1.provenance.cost_epochs, 2.0);
    }

    #[test]
    fn eb_full_fraction_is_lth() {
        let (net, init, tr, _) = setup();
        let plan = SparsityPlan::global(0.5).unwrap();
        let cfg = PretrainConfig { sgd: sgd(), epochs: 2 };
        let eb = strategy_eb(&net, &init, &plan, &cfg, 1.0, &tr, 1).unwrap();
        let lth = strategy_lth(&net, &init, &plan, &cfg, &tr, 1).unwrap();
        assert_eq!(eb.mask, lth.mask);
        assert_eq!(eb_stop_epoch(0.125, 8).unwrap(), 1);
        assert!(eb_stop_epoch(0.0, 8).is_err());
    }

    #[test]
    fn lth_iter_single_cycle_is_lth() {
        let (net, init, tr, _) = setup();
        let plan = SparsityPlan::global(0.8).unwrap();
        let cfg = PretrainConfig { sgd: sgd(), epochs: 2 };
        let it = strategy_lth_iter(&net, &init, &plan, 1, &cfg, &tr, 9).unwrap();
        let lth = strategy_lth(&net, &init, &plan, &cfg, &tr, 9).unwrap();
        assert_eq!(it.mask, lth.mask);
    }

    #[test]
    fn iterative_masks_nest_and_land_on_plan() {
        let (net, init, tr, _) = setup();
        let plan = SparsityPlan::global(0.9).unwrap();
        let cfg = PretrainConfig { sgd: sgd(), epochs: 1 };
        let a = strategy_lth_iter(&net, &init, &plan, 3, &cfg, &tr, 2).unwrap();
        let b = strategy_rst_iter(&net, &init, &plan, 4, 3, &rst_config(4), &tr, 2).unwrap();
        for c in [&a, &b] {
            assert_eq!(c.cycle_masks.len(), 3);
            for w in c.cycle_masks.windows(2) {
                assert!(w[1].is_subset_of(&w[0]));
                assert!(w[1].popcount() < w[0].popcount());
            }
            for l in audit_sparsity(&c.mask).layers {
                assert_eq!(l.kept, kept_count(l.total, 0.1));
            }
            assert!(c.mask.zeros_hold(&c.weights));
        }
    }

    #[test]
    fn rst_without_iterations_is_scratch() {
        let (net, init, tr, _) = setup();
        let plan = SparsityPlan::global(0.7).unwrap();
        let mut cfg = rst_config(0);
        cfg.lambda.lambda_b = 0.0;
        let rst = strategy_rst(&net, &init, &plan, 8, &cfg, &tr, 1).unwrap();
        let scratch = strategy_scratch(&net, &init, &plan, 8).unwrap();
        assert_eq!(rst.mask, scratch.mask);
        assert_eq!(rst.weights.checksum(), scratch.weights.checksum());
    }

    #[test]
    fn rst_iter_single_cycle_is_rst() {
        let (net, init, tr, _) = setup();
        let plan = SparsityPlan::global(0.7).unwrap();
        let cfg = rst_config(6);
        let a = strategy_rst(&net, &init, &plan, 8, &cfg, &tr, 1).unwrap();
        let b = strategy_rst_iter(&net, &init, &plan, 8, 1, &cfg, &tr, 1).unwrap();
        assert_eq!(a.mask, b.mask);
        assert_eq!(a.weights.checksum(), b.weights.checksum());
        assert!(a.mask.zeros_hold(&a.weights));
        assert_eq!(b.provenance.cost_epochs, a.provenance.cost_epochs);
    }

    #[test]
    fn finetune_zero_epochs_and_determinism() {
        let (net, init, tr, te) = setup();
        let plan = SparsityPlan::global(0.5).unwrap();
        let c = strategy_scratch(&net, &init, &plan, 3).unwrap();
        let mut cfg = FinetuneConfig { sgd: sgd(), epochs: 0, warmup: None };
        let r = finetune(&net, &c, &cfg, &tr, &te, 1).unwrap();
        assert_eq!(r.history.len(), 1);
        cfg.epochs = 3;
        let a = finetune(&net, &c, &cfg, &tr, &te, 1).unwrap();
        let b = finetune(&net, &c, &cfg, &tr, &te, 1).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.mask_checksum, c.mask.checksum());
        assert!(c.mask.zeros_hold(&a.weights));
        assert_eq!(a.final_accuracy, a.history[3].test_accuracy);
    }

    #[test]
    fn warmup_only_for_rst_family() {
        let cfg = FinetuneConfig {
            sgd: sgd(),
            epochs: 4,
            warmup: Some(Warmup { epochs: 1, lr: 0.001 }),
        };
        assert_eq!(cfg.sgd_for(StrategyKind::Rst).schedule.lr_at(0), 0.001);
        assert_eq!(cfg.sgd_for(StrategyKind::Lth).schedule.lr_at(0), 0.05);
    }

    #[test]
    fn finetune_rejects_dirty_candidate() {
        let (net, init, tr, te) = setup();
        let plan = SparsityPlan::global(0.5).unwrap();
        let mut c = strategy_scratch(&net, &init, &plan, 3).unwrap();
        c.weights = init.rewound();
        let cfg = FinetuneConfig { sgd: sgd(), epochs: 1, warmup: None };
        assert!(finetune(&net, &c, &cfg, &tr, &te, 1).is_err());
    }

    #[test]
    fn candidate_file_round_trip() {
        let (net, init, _, _) = setup();
        let plan = SparsityPlan::global(0.5).unwrap();
        let c = strategy_scratch(&net, &init, &plan, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cand.bin");
        c.save(&p).unwrap();
        let back = SubnetworkCandidate::load(&p).unwrap();
        assert_eq!(back.mask, c.mask);
        assert_eq!(back.weights, c.weights);
        assert_eq!(back.provenance, c.provenance);
    }
}
