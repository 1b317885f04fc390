use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use super::Network;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamRole {
    Weight,
    Bias,
}

/// Parameter identity: the layer index in the network spec plus its role.
/// Printed as `3.weight` / `3.bias`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId {
    pub layer: usize,
    pub role: ParamRole,
}

impl ParamId {
    pub fn weight(layer: usize) -> Self {
        Self {
            layer,
            role: ParamRole::Weight,
        }
    }

    pub fn bias(layer: usize) -> Self {
        Self {
            layer,
            role: ParamRole::Bias,
        }
    }
}

impl fmt::Display for ParamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let role = match self.role {
            ParamRole::Weight => "weight",
            ParamRole::Bias => "bias",
        };
        write!(f, "{}.{}", self.layer, role)
    }
}

impl FromStr for ParamId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (layer, role) = s
            .split_once('.')
            .ok_or_else(|| Error::Format(format!("bad parameter id {s:?}")))?;
        let layer = layer
            .parse()
            .map_err(|_| Error::Format(format!("bad layer index in {s:?}")))?;
        let role = match role {
            "weight" => ParamRole::Weight,
            "bias" => ParamRole::Bias,
            _ => return Err(Error::Format(format!("bad parameter role in {s:?}"))),
        };
        Ok(Self { layer, role })
    }
}

pub(crate) fn format_shape(shape: &[usize]) -> String {
    shape
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("x")
}

pub(crate) fn parse_shape(s: &str) -> Result<Vec<usize>> {
    s.split('x')
        .map(|d| match d.parse::<usize>() {
            Ok(v) if v > 0 => Ok(v),
            _ => Err(Error::Format(format!("bad shape {s:?}"))),
        })
        .collect()
}

type ParamMap = BTreeMap<ParamId, Tensor>;

/// Current parameter values plus a frozen copy of the values they were
/// created with (the rewind target).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    values: ParamMap,
    init: Arc<ParamMap>,
}

/// Fan-in scaled normal weights (std = sqrt(2 / fan_in)), zero biases.
/// Each weight tensor draws from its own stream derived from `(seed, layer)`.
pub fn init_params(network: &Network, seed: u64) -> ParamStore {
    let mut values = ParamMap::new();
    for (i, spec) in network.layers().iter().enumerate() {
        let (Some(shape), Some(fan_in), Some(nb)) =
            (spec.weight_shape(), spec.fan_in(), spec.bias_len())
        else {
            continue;
        };
        let std = (2.0 / fan_in as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        let mut rng = rng::stream(seed, &[0x1417, i as u64]);
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
        values.insert(ParamId::weight(i), Tensor::from_parts(shape, data));
        values.insert(ParamId::bias(i), Tensor::zeros(&[nb]));
    }
    ParamStore::from_values(values)
}

impl ParamStore {
    /// Wraps values and snapshots them as the initialization.
    pub fn from_values(values: BTreeMap<ParamId, Tensor>) -> Self {
        let init = Arc::new(values.clone());
        Self { values, init }
    }

    /// Same snapshot, different current values.
    pub fn with_values(&self, values: BTreeMap<ParamId, Tensor>) -> Result<Self> {
        for (id, t) in &values {
            match self.init.get(id) {
                Some(i) if i.shape() == t.shape() => {}
                _ => {
                    return Err(Error::Input(format!(
                        "parameter {id} does not match the store layout"
                    )))
                }
            }
        }
        if values.len() != self.init.len() {
            return Err(Error::Input("parameter set does not match the store".into()));
        }
        Ok(Self {
            values,
            init: Arc::clone(&self.init),
        })
    }

    /// Current values reset to the initialization snapshot.
    pub fn rewound(&self) -> Self {
        Self {
            values: (*self.init).clone(),
            init: Arc::clone(&self.init),
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.values.get(&id)
    }

    pub fn get_mut(&mut self, id: ParamId) -> Option<&mut Tensor> {
        self.values.get_mut(&id)
    }

    pub(crate) fn require(&self, id: ParamId) -> Result<&Tensor> {
        self.values
            .get(&id)
            .ok_or_else(|| Error::Input(format!("missing parameter {id}")))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.values.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.values.iter().map(|(k, v)| (*k, v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Tensor)> {
        self.values.iter_mut().map(|(k, v)| (*k, v))
    }

    pub fn values(&self) -> &BTreeMap<ParamId, Tensor> {
        &self.values
    }

    pub fn init_snapshot(&self) -> &BTreeMap<ParamId, Tensor> {
        &self.init
    }

    pub fn num_values(&self) -> usize {
        self.values.values().map(Tensor::len).sum()
    }

    pub fn checksum(&self) -> String {
        checksum_map(&self.values)
    }

    pub fn init_checksum(&self) -> String {
        checksum_map(&self.init)
    }

    /// Writes the store. Layout: a text header
    ///
    /// ```text
    /// PARAMSTORE 1
    /// value <id> <shape>      (one line per parameter, id order)
    /// init <id> <shape>       (one line per snapshot entry, id order)
    /// end
    /// ```
    ///
    /// followed by the little-endian f64 payload of every `value` tensor and
    /// then every `init` tensor, in header order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf);
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(b"PARAMSTORE 1\n");
        for (tag, map) in [("value", &self.values), ("init", &*self.init)] {
            for (id, t) in map.iter() {
                out.extend_from_slice(format!("{tag} {id} {}\n", format_shape(t.shape())).as_bytes());
            }
        }
        out.extend_from_slice(b"end\n");
        for map in [&self.values, &*self.init] {
            for t in map.values() {
                for v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
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
        let mut next_line = |reader: &mut R| -> Result<String> {
            line.clear();
            reader
                .read_line(&mut line)
                .map_err(|e| Error::io("<paramstore>", e))?;
            Ok(line.trim_end().to_string())
        };
        if next_line(&mut reader)? != "PARAMSTORE 1" {
            return Err(Error::Format("missing PARAMSTORE header".into()));
        }
        let mut entries: Vec<(bool, ParamId, Vec<usize>)> = Vec::new();
        loop {
            let l = next_line(&mut reader)?;
            if l == "end" {
                break;
            }
            let parts: Vec<&str> = l.split_whitespace().collect();
            let [tag, id, shape] = parts.as_slice() else {
                return Err(Error::Format(format!("bad header line {l:?}")));
            };
            let is_value = match *tag {
                "value" => true,
                "init" => false,
                _ => return Err(Error::Format(format!("bad header tag {tag:?}"))),
            };
            entries.push((is_value, id.parse()?, parse_shape(shape)?));
        }
        let mut values = ParamMap::new();
        let mut init = ParamMap::new();
        let mut bytes = [0u8; 8];
        for (is_value, id, shape) in entries {
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                reader
                    .read_exact(&mut bytes)
                    .map_err(|e| Error::io("<paramstore>", e))?;
                data.push(f64::from_le_bytes(bytes));
            }
            let t = Tensor::new(shape, data)?;
            if is_value { &mut values } else { &mut init }.insert(id, t);
        }
        if values.keys().ne(init.keys()) {
            return Err(Error::Consistency(
                "value and init sections list different parameters".into(),
            ));
        }
        Ok(Self {
            values,
            init: Arc::new(init),
        })
    }
}

pub(crate) fn checksum_map(map: &ParamMap) -> String {
    let mut h = Sha256::new();
    for (id, t) in map {
        h.update(id.to_string().as_bytes());
        h.update(format_shape(t.shape()).as_bytes());
        for v in t.data() {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_network, LayerSpec, PrunePolicy};

    fn net() -> Network {
        build_network(
            &[784],
            &[
                LayerSpec::Dense {
                    inputs: 784,
                    outputs: 300,
                },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    inputs: 300,
                    outputs: 10,
                },
            ],
            PrunePolicy::Default,
        )
        .unwrap()
    }

    #[test]
    fn init_is_seed_deterministic_with_zero_bias() {
        let n = net();
        let a = init_params(&n, 11);
        let b = init_params(&n, 11);
        assert_eq!(a, b);
        assert_eq!(a.checksum(), b.checksum());
        assert_ne!(a.checksum(), init_params(&n, 12).checksum());
        for id in [ParamId::bias(0), ParamId::bias(2)] {
            assert!(a.get(id).unwrap().data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn init_std_matches_fan_in_rule() {
        let n = net();
        let target = (2.0f64 / 784.0).sqrt();
        let mut all = Vec::new();
        for seed in 0..3 {
            all.extend_from_slice(init_params(&n, seed).get(ParamId::weight(0)).unwrap().data());
        }
        let mean = all.iter().sum::<f64>() / all.len() as f64;
        let var = all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (all.len() - 1) as f64;
        let rel = (var.sqrt() - target).abs() / target;
        assert!(rel < 0.05, "relative std error {rel}");
    }

    #[test]
    fn param_id_text_round_trip() {
        for id in [ParamId::weight(0), ParamId::bias(12)] {
            assert_eq!(id.to_string().parse::<ParamId>().unwrap(), id);
        }
        assert!("3.gamma".parse::<ParamId>().is_err());
    }

    #[test]
    fn save_load_round_trip_keeps_snapshot() {
        let n = net();
        let mut p = init_params(&n, 3);
        p.get_mut(ParamId::weight(2)).unwrap().data_mut()[0] = 42.0;
        let mut buf = Vec::new();
        p.write_to(&mut buf);
        let q = ParamStore::read_from(&buf[..]).unwrap();
        assert_eq!(p, q);
        assert_eq!(q.init_checksum(), init_params(&n, 3).checksum());
    }

    #[test]
    fn truncated_file_is_an_io_error() {
        let p = init_params(&net(), 1);
        let mut buf = Vec::new();
        p.write_to(&mut buf);
        buf.truncate(buf.len() - 5);
        assert!(matches!(ParamStore::read_from(&buf[..]), Err(Error::Io { .. })));
    }
}
