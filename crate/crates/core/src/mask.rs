//! Binary weight masks: random and magnitude selection, complements, audits,
//! per-layer ratio files and the packed mask file format.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::index;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::network::params::{format_shape, parse_shape};
use crate::network::{Network, ParamId, ParamStore};
use crate::rng;

/// Number of weights kept from `n` at keep fraction `keep`:
/// `max(1, floor(n · keep))`.
///
/// The product is snapped to the nearest integer when it lies within 1e-9 of
/// it, so ratios such as 0.9 or 0.95 (not exact in binary) count exactly as
/// their decimal value says.
pub fn kept_count(n: usize, keep: f64) -> usize {
    if n == 0 {
        return 0;
    }
    let x = n as f64 * keep;
    let r = x.round();
    let k = if (x - r).abs() <= 1e-9 * r.max(1.0) {
        r
    } else {
        x.floor()
    };
    (k as usize).clamp(1, n)
}

/// Mask bits for one weight tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerMask {
    shape: Vec<usize>,
    bits: Vec<bool>,
}

impl LayerMask {
    pub fn new(shape: Vec<usize>, bits: Vec<bool>) -> Result<Self> {
        if shape.iter().product::<usize>() != bits.len() {
            return Err(Error::Input(format!(
                "mask shape {shape:?} does not match {} bits",
                bits.len()
            )));
        }
        Ok(Self { shape, bits })
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            bits: vec![true; shape.iter().product()],
        }
    }

    pub fn from_kept(shape: &[usize], kept: impl IntoIterator<Item = usize>) -> Self {
        let mut bits = vec![false; shape.iter().product()];
        for i in kept {
            bits[i] = true;
        }
        Self {
            shape: shape.to_vec(),
            bits,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn kept_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| i)
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    pub fn complement(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    /// True when every kept position of `self` is also kept in `other`.
    pub fn is_subset_of(&self, other: &LayerMask) -> bool {
        self.bits.len() == other.bits.len()
            && self.bits.iter().zip(&other.bits).all(|(a, b)| !a || *b)
    }
}

/// Map from prunable weight id to its mask bits.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Mask {
    layers: BTreeMap<ParamId, LayerMask>,
}

impl Mask {
    pub fn new(layers: BTreeMap<ParamId, LayerMask>) -> Self {
        Self { layers }
    }

    /// All-ones mask over the network's prunable weights.
    pub fn dense(network: &Network) -> Self {
        Self::new(
            network
                .prunable_shapes()
                .into_iter()
                .map(|(id, s)| (id, LayerMask::ones(&s)))
                .collect(),
        )
    }

    pub fn layer(&self, id: ParamId) -> Option<&LayerMask> {
        self.layers.get(&id)
    }

    pub fn layers(&self) -> &BTreeMap<ParamId, LayerMask> {
        &self.layers
    }

    pub fn ids(&self) -> BTreeSet<ParamId> {
        self.layers.keys().copied().collect()
    }

    pub fn popcount(&self) -> usize {
        self.layers.values().map(LayerMask::popcount).sum()
    }

    pub fn len(&self) -> usize {
        self.layers.values().map(LayerMask::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// Bitwise `1 − m` on every layer. The complement of a subnetwork mask
    /// selects the weights that are penalized and later removed.
    pub fn complement(&self) -> Self {
        Self::new(
            self.layers
                .iter()
                .map(|(id, l)| (*id, l.complement()))
                .collect(),
        )
    }

    /// Entries kept here but not in `other` (`self ∧ ¬other`), layer by layer.
    pub fn and_not(&self, other: &Mask) -> Result<Mask> {
        let mut layers = BTreeMap::new();
        for (id, l) in &self.layers {
            let o = other
                .layer(*id)
                .filter(|o| o.len() == l.len())
                .ok_or_else(|| Error::Input(format!("masks disagree on {id}")))?;
            let bits = l.bits.iter().zip(&o.bits).map(|(a, b)| *a && !b).collect();
            layers.insert(*id, LayerMask::new(l.shape.clone(), bits)?);
        }
        Ok(Mask::new(layers))
    }

    /// True when every layer's kept set is contained in `other`'s.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .all(|(id, l)| other.layer(*id).is_some_and(|o| l.is_subset_of(o)))
    }

    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (id, l) in &self.layers {
            h.update(id.to_string().as_bytes());
            h.update(format_shape(&l.shape).as_bytes());
            h.update(pack_bits(&l.bits));
        }
        hex::encode(h.finalize())
    }

    /// Checks the mask covers exactly the network's prunable ids with
    /// matching shapes.
    pub fn check_covers(&self, network: &Network) -> Result<()> {
        let shapes = network.prunable_shapes();
        if self.layers.len() != shapes.len() || !self.layers.keys().eq(shapes.keys()) {
            return Err(Error::Input(format!(
                "mask covers {:?} but the prunable set is {:?}",
                self.layers.keys().map(|k| k.to_string()).collect::<Vec<_>>(),
                shapes.keys().map(|k| k.to_string()).collect::<Vec<_>>()
            )));
        }
        for (id, l) in &self.layers {
            if shapes[id] != l.shape {
                return Err(Error::Input(format!(
                    "mask for {id} has shape {:?}, parameter has {:?}",
                    l.shape, shapes[id]
                )));
            }
        }
        Ok(())
    }

    /// Zeroes every masked-out weight of `params` in place.
    pub fn apply(&self, params: &mut ParamStore) -> Result<()> {
        for (id, l) in &self.layers {
            let t = params
                .get_mut(*id)
                .ok_or_else(|| Error::Input(format!("mask names missing parameter {id}")))?;
            if t.len() != l.len() {
                return Err(Error::Input(format!(
                    "mask for {id} has {} bits, parameter has {} values",
                    l.len(),
                    t.len()
                )));
            }
            for (v, &keep) in t.data_mut().iter_mut().zip(&l.bits) {
                if !keep {
                    *v = 0.0;
                }
            }
        }
        Ok(())
    }

    /// True when every masked-out weight in `params` is exactly zero.
    pub fn zeros_hold(&self, params: &ParamStore) -> bool {
        self.layers.iter().all(|(id, l)| {
            params.get(*id).is_some_and(|t| {
                t.data()
                    .iter()
                    .zip(&l.bits)
                    .all(|(v, &keep)| keep || *v == 0.0)
            })
        })
    }

    /// Writes the mask. Layout: text header
    ///
    /// ```text
    /// MASK 1
    /// <id> <shape> <popcount>     (one line per layer, id order)
    /// end
    /// ```
    ///
    /// then each layer's bits packed LSB-first into bytes, every layer
    /// starting on a byte boundary.
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = b"MASK 1\n".to_vec();
        for (id, l) in &self.layers {
            out.extend_from_slice(
                format!("{id} {} {}\n", format_shape(&l.shape), l.popcount()).as_bytes(),
            );
        }
        out.extend_from_slice(b"end\n");
        for l in self.layers.values() {
            out.extend_from_slice(&pack_bits(&l.bits));
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file)).map_err(|e| match e {
            Error::Io { source, .. } => Error::io(path, source),
            other => other,
        })
    }

    pub fn read_from<R: BufRead>(mut reader: R) -> Result<Self> {
        let mut line = String::new();
        let mut read_line = |r: &mut R| -> Result<String> {
            line.clear();
            r.read_line(&mut line).map_err(|e| Error::io("<mask>", e))?;
            Ok(line.trim_end().to_string())
        };
        if read_line(&mut reader)? != "MASK 1" {
            return Err(Error::Format("missing MASK header".into()));
        }
        let mut header = Vec::new();
        loop {
            let l = read_line(&mut reader)?;
            if l == "end" {
                break;
            }
            let parts: Vec<&str> = l.split_whitespace().collect();
            let [id, shape, pop] = parts.as_slice() else {
                return Err(Error::Format(format!("bad mask header line {l:?}")));
            };
            let pop: usize = pop
                .parse()
                .map_err(|_| Error::Format(format!("bad popcount in {l:?}")))?;
            header.push((id.parse::<ParamId>()?, parse_shape(shape)?, pop));
        }
        let mut layers = BTreeMap::new();
        for (id, shape, pop) in header {
            let n: usize = shape.iter().product();
            let mut packed = vec![0u8; n.div_ceil(8)];
            reader
                .read_exact(&mut packed)
                .map_err(|e| Error::io("<mask>", e))?;
            let bits = unpack_bits(&packed, n);
            let l = LayerMask { shape, bits };
            if l.popcount() != pop {
                return Err(Error::Consistency(format!(
                    "mask {id}: header popcount {pop}, payload has {}",
                    l.popcount()
                )));
            }
            layers.insert(id, l);
        }
        Ok(Self { layers })
    }
}

fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, _) in bits.iter().enumerate().filter(|(_, &b)| b) {
        out[i / 8] |= 1 << (i % 8);
    }
    out
}

fn unpack_bits(packed: &[u8], n: usize) -> Vec<bool> {
    (0..n).map(|i| packed[i / 8] >> (i % 8) & 1 == 1).collect()
}

/// How many weights to remove, globally or per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsityPlan {
    /// Fraction of prunable weights to remove, in `[0, 1)`.
    pub global_ratio: f64,
    /// Layer index → keep ratio, overriding `global_ratio` for that layer.
    pub per_layer: BTreeMap<usize, f64>,
}

impl SparsityPlan {
    pub fn global(ratio: f64) -> Result<Self> {
        let plan = Self {
            global_ratio: ratio,
            per_layer: BTreeMap::new(),
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.global_ratio) {
            return Err(Error::Config(format!(
                "sparsity ratio must lie in [0, 1), got {}",
                self.global_ratio
            )));
        }
        for (layer, keep) in &self.per_layer {
            if !(0.0..=1.0).contains(keep) {
                return Err(Error::Validation(format!(
                    "keep ratio for layer {layer} must lie in [0, 1], got {keep}"
                )));
            }
        }
        Ok(())
    }

    pub fn keep_ratio(&self, layer: usize) -> f64 {
        self.per_layer
            .get(&layer)
            .copied()
            .unwrap_or(1.0 - self.global_ratio)
    }

    pub fn kept_count(&self, layer: usize, n: usize) -> usize {
        kept_count(n, self.keep_ratio(layer))
    }

    /// Writes the per-layer section in the ratio-file format.
    pub fn to_ratio_file(&self) -> String {
        let mut s = String::from("# layer_index,keep_ratio\n");
        for (layer, keep) in &self.per_layer {
            s.push_str(&format!("{layer},{keep}\n"));
        }
        s
    }
}

/// Reads a per-layer keep-ratio file (`layer_index,keep_ratio` per line,
/// `#` comments, blank lines ignored). Layers not listed fall back to
/// `global_ratio`.
pub fn load_layerwise_ratios(path: &Path, global_ratio: f64) -> Result<SparsityPlan> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_layerwise_ratios(&text, global_ratio, path)
}

pub fn parse_layerwise_ratios(text: &str, global_ratio: f64, path: &Path) -> Result<SparsityPlan> {
    let mut per_layer = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let (layer, keep) = line
            .split_once(',')
            .ok_or_else(|| parse_err(format!("expected `layer_index,keep_ratio`, got {line:?}")))?;
        let layer: usize = layer
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("bad layer index {:?}", layer.trim())))?;
        let keep: f64 = keep
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("bad keep ratio {:?}", keep.trim())))?;
        if !(0.0..=1.0).contains(&keep) {
            return Err(Error::Validation(format!(
                "{}:{}: keep ratio {keep} outside [0, 1]",
                path.display(),
                i + 1
            )));
        }
        per_layer.insert(layer, keep);
    }
    let plan = SparsityPlan {
        global_ratio,
        per_layer,
    };
    plan.validate()?;
    Ok(plan)
}

/// Uniform random subnetwork: for every prunable layer, exactly the planned
/// number of positions drawn without replacement from a stream seeded by
/// `(seed, layer)`.
pub fn random_mask(network: &Network, plan: &SparsityPlan, seed: u64) -> Result<Mask> {
    plan.validate()?;
    let dense = Mask::dense(network);
    let targets = dense
        .layers()
        .iter()
        .map(|(id, l)| (*id, plan.kept_count(id.layer, l.len())))
        .collect();
    random_submask(&dense, &targets, seed, 0)
}

/// Random selection restricted to the survivors of `current`: each layer keeps
/// `targets[id]` of its currently kept positions, drawn uniformly from a
/// stream seeded by `(seed, layer, round)`. Round 0 over a dense mask is
/// exactly [`random_mask`].
pub fn random_submask(
    current: &Mask,
    targets: &BTreeMap<ParamId, usize>,
    seed: u64,
    round: u64,
) -> Result<Mask> {
    let mut layers = BTreeMap::new();
    for (id, l) in current.layers() {
        let survivors: Vec<usize> = l.kept_indices().collect();
        let k = *targets
            .get(id)
            .ok_or_else(|| Error::Input(format!("no target count for {id}")))?;
        if k > survivors.len() {
            return Err(Error::Input(format!(
                "cannot keep {k} of {} survivors in {id}",
                survivors.len()
            )));
        }
        let mut rng = rng::stream(seed, &[0x3a5c, id.layer as u64, round]);
        let picked = index::sample(&mut rng, survivors.len(), k);
        layers.insert(
            *id,
            LayerMask::from_kept(l.shape(), picked.into_iter().map(|j| survivors[j])),
        );
    }
    Ok(Mask::new(layers))
}

/// Per-layer magnitude ranking: keeps the planned count of largest `|w|`
/// entries. Ties keep the lower flat index first.
pub fn magnitude_mask(network: &Network, params: &ParamStore, plan: &SparsityPlan) -> Result<Mask> {
    plan.validate()?;
    let mut layers = BTreeMap::new();
    for (id, shape) in network.prunable_shapes() {
        let w = params.require(id)?;
        let k = plan.kept_count(id.layer, w.len());
        let candidates: Vec<usize> = (0..w.len()).collect();
        layers.insert(id, LayerMask::from_kept(&shape, top_k_by_magnitude(w.data(), &candidates, k)));
    }
    Ok(Mask::new(layers))
}

/// Magnitude ranking restricted to the survivors of `current`.
pub fn magnitude_submask(
    params: &ParamStore,
    current: &Mask,
    targets: &BTreeMap<ParamId, usize>,
) -> Result<Mask> {
    let mut layers = BTreeMap::new();
    for (id, l) in current.layers() {
        let w = params.require(*id)?;
        let survivors: Vec<usize> = l.kept_indices().collect();
        let k = *targets
            .get(id)
            .ok_or_else(|| Error::Input(format!("no target count for {id}")))?;
        let k = k.min(survivors.len());
        layers.insert(
            *id,
            LayerMask::from_kept(l.shape(), top_k_by_magnitude(w.data(), &survivors, k)),
        );
    }
    Ok(Mask::new(layers))
}

fn top_k_by_magnitude(values: &[f64], candidates: &[usize], k: usize) -> Vec<usize> {
    let mut order = candidates.to_vec();
    order.sort_by(|&a, &b| values[b].abs().total_cmp(&values[a].abs()).then(a.cmp(&b)));
    order.truncate(k);
    order
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerAudit {
    pub id: ParamId,
    pub total: usize,
    pub kept: usize,
}

impl LayerAudit {
    pub fn removed(&self) -> usize {
        self.total - self.kept
    }

    pub fn removal_ratio(&self) -> f64 {
        ratio(self.removed(), self.total)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-layer and overall removal counts of a mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsityReport {
    pub layers: Vec<LayerAudit>,
    pub total: usize,
    pub kept: usize,
}

impl SparsityReport {
    pub fn removed(&self) -> usize {
        self.total - self.kept
    }

    /// Overall removal ratio over prunable weights only.
    pub fn overall_removal(&self) -> f64 {
        ratio(self.removed(), self.total)
    }

    pub fn render(&self) -> String {
        let mut s = String::from("param,total,kept,removed,removal_ratio\n");
        for l in &self.layers {
            s.push_str(&format!(
                "{},{},{},{},{:.6}\n",
                l.id,
                l.total,
                l.kept,
                l.removed(),
                l.removal_ratio()
            ));
        }
        s.push_str(&format!(
            "overall,{},{},{},{:.6}\n",
            self.total,
            self.kept,
            self.removed(),
            self.overall_removal()
        ));
        s
    }
}

pub fn audit_sparsity(mask: &Mask) -> SparsityReport {
    let layers: Vec<LayerAudit> = mask
        .layers()
        .iter()
        .map(|(id, l)| LayerAudit {
            id: *id,
            total: l.len(),
            kept: l.popcount(),
        })
        .collect();
    SparsityReport {
        total: layers.iter().map(|l| l.total).sum(),
        kept: layers.iter().map(|l| l.kept).sum(),
        layers,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_network, init_params, LayerSpec, PrunePolicy};
    use crate::tensor::Tensor;

    fn net(n_hidden: usize) -> Network {
        build_network(
            &[4],
            &[
                LayerSpec::Dense {
                    inputs: 4,
                    outputs: n_hidden,
                },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    inputs: n_hidden,
                    outputs: n_hidden,
                },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    inputs: n_hidden,
                    outputs: 3,
                },
            ],
            PrunePolicy::Default,
        )
        .unwrap()
    }

    fn single_layer_store(values: &[f64]) -> (Network, ParamStore) {
        // prunable layer 2 is n×n; use n = 2 so it has 4 weights.
        let network = net(2);
        let mut p = init_params(&network, 0);
        *p.get_mut(ParamId::weight(2)).unwrap() = Tensor::new(vec![2, 2], values.to_vec()).unwrap();
        (network, ParamStore::from_values(p.values().clone()))
    }

    #[test]
    fn kept_count_rule() {
        assert_eq!(kept_count(100, 1.0 - 0.9), 10);
        assert_eq!(kept_count(100, 1.0 - 0.95), 5);
        assert_eq!(kept_count(100, 1.0 - 0.98), 2);
        assert_eq!(kept_count(10, 1.0 - 0.98), 1);
        assert_eq!(kept_count(7, 0.5), 3);
        assert_eq!(kept_count(5, 0.0), 1);
    }

    #[test]
    fn random_mask_counts_and_exemptions() {
        let network = net(10);
        let plan = SparsityPlan::global(0.9).unwrap();
        let m = random_mask(&network, &plan, 5).unwrap();
        assert_eq!(m.ids(), [ParamId::weight(2)].into_iter().collect());
        assert_eq!(m.layer(ParamId::weight(2)).unwrap().popcount(), 10);
        assert!(m.layer(ParamId::weight(0)).is_none());
        assert_eq!(m, random_mask(&network, &plan, 5).unwrap());
        let distinct = (0..10)
            .filter(|s| random_mask(&network, &plan, 100 + s).unwrap() != m)
            .count();
        assert_eq!(distinct, 10);
    }

    #[test]
    fn random_mask_rejects_full_removal() {
        let network = net(10);
        let plan = SparsityPlan {
            global_ratio: 1.0,
            per_layer: BTreeMap::new(),
        };
        assert!(matches!(random_mask(&network, &plan, 0), Err(Error::Config(_))));
    }

    #[test]
    fn magnitude_mask_examples() {
        let plan = SparsityPlan::global(0.5).unwrap();
        let (network, p) = single_layer_store(&[0.5, -0.1, 0.3, -0.9]);
        let m = magnitude_mask(&network, &p, &plan).unwrap();
        assert_eq!(m.layer(ParamId::weight(2)).unwrap().bits(), &[true, false, false, true]);

        let (network, p) = single_layer_store(&[0.2, 0.2, 0.1, 0.3]);
        let m = magnitude_mask(&network, &p, &plan).unwrap();
        assert_eq!(m.layer(ParamId::weight(2)).unwrap().bits(), &[true, false, false, true]);
    }

    #[test]
    fn complement_partitions() {
        let network = net(10);
        let m = random_mask(&network, &SparsityPlan::global(0.7).unwrap(), 1).unwrap();
        let c = m.complement();
        assert_eq!(c.complement(), m);
        for (id, l) in m.layers() {
            assert_eq!(l.popcount() + c.layer(*id).unwrap().popcount(), l.len());
        }
        let ones = Mask::dense(&network);
        assert_eq!(ones.complement().popcount(), 0);
    }

    #[test]
    fn audit_examples() {
        let network = net(10);
        let a = audit_sparsity(&Mask::dense(&network));
        assert_eq!(a.overall_removal(), 0.0);
        let m = random_mask(&network, &SparsityPlan::global(0.9).unwrap(), 3).unwrap();
        let a = audit_sparsity(&m);
        assert_eq!(a.layers[0].total, 100);
        assert_eq!(a.layers[0].kept, 10);
        assert_eq!(a.layers[0].removal_ratio(), 0.9);
    }

    #[test]
    fn ratio_file_parsing() {
        let p = Path::new("ratios.txt");
        let plan = parse_layerwise_ratios("0,0.5\n1,0.5", 0.9, p).unwrap();
        assert_eq!(plan.per_layer, BTreeMap::from([(0, 0.5), (1, 0.5)]));
        let empty = parse_layerwise_ratios("", 0.9, p).unwrap();
        assert_eq!(empty, SparsityPlan::global(0.9).unwrap());
        let commented = parse_layerwise_ratios("# header\n\n2, 0.25 # mid\n", 0.5, p).unwrap();
        assert_eq!(commented.per_layer, BTreeMap::from([(2, 0.25)]));

        match parse_layerwise_ratios("0,0.5\nbogus\n", 0.5, p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(matches!(
            parse_layerwise_ratios("0,1.5\n", 0.5, p),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn mask_file_round_trip_and_popcount_check() {
        let network = net(10);
        let m = random_mask(&network, &SparsityPlan::global(0.5).unwrap(), 9).unwrap();
        let bytes = m.to_bytes();
        assert_eq!(Mask::read_from(&bytes[..]).unwrap(), m);

        let text = String::from_utf8_lossy(&bytes).replace(" 50\n", " 49\n");
        let header_end = text.find("end\n").unwrap() + 4;
        let mut corrupted = text.as_bytes()[..header_end].to_vec();
        corrupted.extend_from_slice(&bytes[header_end..]);
        assert!(matches!(
            Mask::read_from(&corrupted[..]),
            Err(Error::Consistency(_))
        ));
    }
}
