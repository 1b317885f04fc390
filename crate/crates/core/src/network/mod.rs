//! Declarative networks, parameter stores and (optionally masked) forward passes.

pub(crate) mod params;

pub use params::{init_params, ParamId, ParamRole, ParamStore};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::tensor::graph::conv_geometry;
use crate::tensor::{Graph, NodeId, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    Relu,
    Flatten,
}

fn one() -> usize {
    1
}

impl LayerSpec {
    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. })
    }

    pub fn weight_shape(&self) -> Option<Vec<usize>> {
        match *self {
            LayerSpec::Dense { inputs, outputs } => Some(vec![inputs, outputs]),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some(vec![out_channels, in_channels, kernel, kernel]),
            _ => None,
        }
    }

    pub fn bias_len(&self) -> Option<usize> {
        match *self {
            LayerSpec::Dense { outputs, .. } => Some(outputs),
            LayerSpec::Conv2d { out_channels, .. } => Some(out_channels),
            _ => None,
        }
    }

    pub fn fan_in(&self) -> Option<usize> {
        match *self {
            LayerSpec::Dense { inputs, .. } => Some(inputs),
            LayerSpec::Conv2d {
                in_channels,
                kernel,
                ..
            } => Some(in_channels * kernel * kernel),
            _ => None,
        }
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *self {
            LayerSpec::Dense { inputs, outputs } => match input {
                [n] if *n == inputs => Ok(vec![outputs]),
                _ => Err(Error::Config(format!(
                    "dense layer expects input [{inputs}], got {input:?}"
                ))),
            },
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => match input {
                [c, h, w] if *c == in_channels => {
                    let g = conv_geometry(*c, *h, *w, kernel, kernel, stride, padding)?;
                    Ok(vec![out_channels, g.out_h, g.out_w])
                }
                _ => Err(Error::Config(format!(
                    "conv2d layer expects input [{in_channels}, H, W], got {input:?}"
                ))),
            },
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }
}

/// Which weight tensors may be pruned.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrunePolicy {
    /// Every weight except the first parameter-bearing layer and the last dense layer.
    #[default]
    Default,
    /// Every weight tensor.
    All,
}

/// Immutable architecture description.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    /// Per-sample output shape of each layer.
    shapes: Vec<Vec<usize>>,
    prunable: BTreeSet<ParamId>,
    warnings: Vec<String>,
}

/// Validates that the layers compose and fixes the prunable weight set.
pub fn build_network(
    input_shape: &[usize],
    specs: &[LayerSpec],
    policy: PrunePolicy,
) -> Result<Network> {
    if specs.is_empty() {
        return Err(Error::Config("network has no layers".into()));
    }
    if input_shape.is_empty() || input_shape.contains(&0) {
        return Err(Error::Config(format!(
            "invalid network input shape {input_shape:?}"
        )));
    }
    let mut shapes = Vec::with_capacity(specs.len());
    let mut current = input_shape.to_vec();
    for (i, spec) in specs.iter().enumerate() {
        current = spec.output_shape(&current).map_err(|e| {
            let prev = if i == 0 {
                "input".to_string()
            } else {
                format!("layer {} ({:?})", i - 1, specs[i - 1])
            };
            Error::Config(format!("{prev} does not compose with layer {i} ({spec:?}): {e}"))
        })?;
        shapes.push(current.clone());
    }
    if current.len() != 1 {
        return Err(Error::Config(format!(
            "network must end in a flat logit vector, got {current:?}"
        )));
    }

    let weighted: Vec<usize> = specs
        .iter()
        .enumerate()
        .filter(|(_, s)| s.has_params())
        .map(|(i, _)| i)
        .collect();
    let prunable: BTreeSet<ParamId> = match policy {
        PrunePolicy::All => weighted.iter().map(|&l| ParamId::weight(l)).collect(),
        PrunePolicy::Default => {
            let first = weighted.first().copied();
            let last_dense = specs
                .iter()
                .rposition(|s| matches!(s, LayerSpec::Dense { .. }));
            weighted
                .iter()
                .copied()
                .filter(|&l| Some(l) != first && Some(l) != last_dense)
                .map(ParamId::weight)
                .collect()
        }
    };
    let mut warnings = Vec::new();
    if prunable.is_empty() {
        let msg = "network has no prunable weights under the exemption rule".to_string();
        log::warn!("{msg}");
        warnings.push(msg);
    }
    Ok(Network {
        input_shape: input_shape.to_vec(),
        layers: specs.to_vec(),
        shapes,
        prunable,
        warnings,
    })
}

impl Network {
    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn num_classes(&self) -> usize {
        self.shapes.last().map(|s| s[0]).unwrap_or(0)
    }

    pub fn prunable(&self) -> &BTreeSet<ParamId> {
        &self.prunable
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, s)| s.has_params())
            .flat_map(|(i, _)| [ParamId::weight(i), ParamId::bias(i)])
            .collect()
    }

    pub fn param_shape(&self, id: ParamId) -> Option<Vec<usize>> {
        let spec = self.layers.get(id.layer)?;
        match id.role {
            ParamRole::Weight => spec.weight_shape(),
            ParamRole::Bias => spec.bias_len().map(|n| vec![n]),
        }
    }

    /// Shapes of the prunable weights, keyed by id.
    pub fn prunable_shapes(&self) -> BTreeMap<ParamId, Vec<usize>> {
        self.prunable
            .iter()
            .map(|&id| (id, self.param_shape(id).expect("prunable id has a shape")))
            .collect()
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        let s = batch.shape();
        if s.len() != self.input_shape.len() + 1 || s[1..] != self.input_shape[..] {
            return Err(Error::Dimension {
                op: "forward",
                left: s.to_vec(),
                right: self.input_shape.clone(),
            });
        }
        Ok(())
    }
}

/// A recorded forward pass: the graph, its logits node and the leaf node of
/// every parameter.
#[derive(Debug)]
pub struct Forward {
    pub graph: Graph,
    pub logits: NodeId,
    pub params: BTreeMap<ParamId, NodeId>,
}

/// Runs the network on a batch (`B × input_shape`). With a mask, each
/// prunable weight enters the computation as `weight · mask`.
pub fn forward(
    network: &Network,
    params: &ParamStore,
    mask: Option<&Mask>,
    batch: Tensor,
) -> Result<Forward> {
    network.check_batch(&batch)?;
    if let Some(m) = mask {
        m.check_covers(network)?;
    }
    let mut graph = Graph::new();
    let mut nodes = BTreeMap::new();
    let mut x = graph.constant(batch);
    for (i, spec) in network.layers.iter().enumerate() {
        x = match *spec {
            LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. } => {
                let wid = ParamId::weight(i);
                let bid = ParamId::bias(i);
                let wt = params.require(wid)?;
                let bt = params.require(bid)?;
                if Some(wt.shape().to_vec()) != spec.weight_shape() {
                    return Err(Error::Input(format!(
                        "parameter {wid} has shape {:?}, layer expects {:?}",
                        wt.shape(),
                        spec.weight_shape().unwrap_or_default()
                    )));
                }
                let w = graph.param(wt.clone());
                let b = graph.param(bt.clone());
                nodes.insert(wid, w);
                nodes.insert(bid, b);
                let w_eff = match mask.and_then(|m| m.layer(wid)) {
                    Some(lm) => graph.mul_const(w, &lm.to_f64())?,
                    None => w,
                };
                match *spec {
                    LayerSpec::Dense { .. } => {
                        let y = graph.matmul(x, w_eff)?;
                        graph.add_row_bias(y, b)?
                    }
                    LayerSpec::Conv2d {
                        stride, padding, ..
                    } => {
                        let y = graph.conv2d(x, w_eff, stride, padding)?;
                        graph.add_channel_bias(y, b)?
                    }
                    _ => unreachable!(),
                }
            }
            LayerSpec::Relu => graph.relu(x),
            LayerSpec::Flatten => graph.flatten(x)?,
        };
    }
    Ok(Forward {
        graph,
        logits: x,
        params: nodes,
    })
}

/// Mean cross-entropy loss and its gradient for every parameter.
pub fn loss_and_grads(
    network: &Network,
    params: &ParamStore,
    mask: Option<&Mask>,
    inputs: Tensor,
    labels: &[usize],
) -> Result<(f64, BTreeMap<ParamId, Tensor>)> {
    let Forward {
        mut graph,
        logits,
        params: nodes,
    } = forward(network, params, mask, inputs)?;
    let loss = graph.softmax_cross_entropy(logits, labels)?;
    let value = graph.value(loss).data()[0];
    graph.backward(loss)?;
    let grads = nodes
        .into_iter()
        .map(|(id, node)| {
            let mut t = graph.take_value(node);
            let g = t.take_grad().unwrap_or_else(|| vec![0.0; t.len()]);
            (id, Tensor::from_parts(t.shape().to_vec(), g))
        })
        .collect();
    Ok((value, grads))
}

/// Logits without keeping the graph around.
pub fn predict(
    network: &Network,
    params: &ParamStore,
    mask: Option<&Mask>,
    batch: Tensor,
) -> Result<Tensor> {
    let mut f = forward(network, params, mask, batch)?;
    Ok(f.graph.take_value(f.logits))
}
