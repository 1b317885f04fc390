use super::kernels::{self, ConvGeometry};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    AddRowBias(NodeId, NodeId),
    AddChannelBias(NodeId, NodeId),
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        geometry: ConvGeometry,
        batch: usize,
        cols: Vec<f64>,
    },
    Relu(NodeId),
    Reshape(NodeId),
    MulConst(NodeId, Vec<f64>),
    Add(NodeId, NodeId),
    Sum(NodeId),
    SoftmaxCrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Records operations in construction order; `backward` replays them in
/// exact reverse order. Every input id precedes its consumer, so the graph is
/// acyclic by construction.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    consumed: bool,
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|&id| self.node(id).requires_grad)
    }

    /// Trainable leaf: receives a gradient on `backward`.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value, true)
    }

    /// Constant leaf: no gradient is computed for it.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.node(id).value
    }

    /// Gradient of a trainable leaf after `backward`.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.node(id).value.grad()
    }

    /// Moves the leaf tensor (with its gradient buffer) out of the graph.
    pub fn take_value(&mut self, id: NodeId) -> Tensor {
        std::mem::replace(&mut self.nodes[id.0].value, Tensor::scalar(0.0))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Dimension {
                op: "matmul",
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        kernels::gemm_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        check_finite("matmul", &out)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(Op::MatMul(a, b), Tensor::from_parts(vec![m, n], out), rg))
    }

    /// `x[B×N] + bias[N]` broadcast over rows.
    pub fn add_row_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (sx, sb) = (self.value(x).shape(), self.value(bias).shape());
        if sx.len() != 2 || sb.len() != 1 || sx[1] != sb[0] {
            return Err(Error::Dimension {
                op: "add_row_bias",
                left: sx.to_vec(),
                right: sb.to_vec(),
            });
        }
        let n = sb[0];
        let b = self.value(bias).data();
        let out: Vec<f64> = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + b[i % n])
            .collect();
        check_finite("add_row_bias", &out)?;
        let shape = sx.to_vec();
        let rg = self.needs(&[x, bias]);
        Ok(self.push(Op::AddRowBias(x, bias), Tensor::from_parts(shape, out), rg))
    }

    /// `x[B×C×H×W] + bias[C]` broadcast over batch and spatial positions.
    pub fn add_channel_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (sx, sb) = (self.value(x).shape(), self.value(bias).shape());
        if sx.len() != 4 || sb.len() != 1 || sx[1] != sb[0] {
            return Err(Error::Dimension {
                op: "add_channel_bias",
                left: sx.to_vec(),
                right: sb.to_vec(),
            });
        }
        let (c, hw) = (sx[1], sx[2] * sx[3]);
        let b = self.value(bias).data();
        let out: Vec<f64> = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + b[(i / hw) % c])
            .collect();
        check_finite("add_channel_bias", &out)?;
        let shape = sx.to_vec();
        let rg = self.needs(&[x, bias]);
        Ok(self.push(Op::AddChannelBias(x, bias), Tensor::from_parts(shape, out), rg))
    }

    /// Zero-padded cross-correlation. `input` is `C×H×W` or `B×C×H×W`,
    /// `kernel` is `C_out×C_in×kh×kw`. Each sample is computed independently,
    /// so outputs do not depend on the batch composition.
    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        let si = self.value(input).shape().to_vec();
        let sk = self.value(kernel).shape().to_vec();
        let (batch, c, h, w, batched) = match *si.as_slice() {
            [c, h, w] => (1, c, h, w, false),
            [b, c, h, w] => (b, c, h, w, true),
            _ => {
                return Err(Error::Dimension {
                    op: "conv2d",
                    left: si,
                    right: sk,
                })
            }
        };
        if sk.len() != 4 || sk[1] != c {
            return Err(Error::Dimension {
                op: "conv2d",
                left: si,
                right: sk,
            });
        }
        let (c_out, kh, kw) = (sk[0], sk[2], sk[3]);
        let geometry = conv_geometry(c, h, w, kh, kw, stride, padding)?;
        let rows = geometry.col_rows();
        let ncols = geometry.col_cols();
        let img = c * h * w;
        let mut cols = vec![0.0; batch * rows * ncols];
        let mut out = vec![0.0; batch * c_out * ncols];
        let x = self.value(input).data();
        let k = self.value(kernel).data();
        for b in 0..batch {
            let col = &mut cols[b * rows * ncols..(b + 1) * rows * ncols];
            kernels::im2col(&x[b * img..(b + 1) * img], &geometry, col);
            kernels::gemm_acc(
                k,
                col,
                &mut out[b * c_out * ncols..(b + 1) * c_out * ncols],
                c_out,
                rows,
                ncols,
            );
        }
        check_finite("conv2d", &out)?;
        let shape = if batched {
            vec![batch, c_out, geometry.out_h, geometry.out_w]
        } else {
            vec![c_out, geometry.out_h, geometry.out_w]
        };
        let rg = self.needs(&[input, kernel]);
        Ok(self.push(
            Op::Conv2d {
                input,
                kernel,
                geometry,
                batch,
                cols,
            },
            Tensor::from_parts(shape, out),
            rg,
        ))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let out = v.data().iter().map(|&a| if a > 0.0 { a } else { 0.0 }).collect();
        let t = Tensor::from_parts(v.shape().to_vec(), out);
        let rg = self.needs(&[x]);
        self.push(Op::Relu(x), t, rg)
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let t = self.value(x).reshape(shape)?;
        let rg = self.needs(&[x]);
        Ok(self.push(Op::Reshape(x), t, rg))
    }

    /// Flattens everything after the leading (batch) dimension.
    pub fn flatten(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.value(x).shape();
        let b = s[0];
        let rest = s[1..].iter().product::<usize>().max(1);
        self.reshape(x, vec![b, rest])
    }

    /// Elementwise product with a constant of identical length (e.g. a 0/1 mask).
    pub fn mul_const(&mut self, x: NodeId, factor: &[f64]) -> Result<NodeId> {
        let v = self.value(x);
        if v.len() != factor.len() {
            return Err(Error::Dimension {
                op: "mul_const",
                left: v.shape().to_vec(),
                right: vec![factor.len()],
            });
        }
        let out: Vec<f64> = v.data().iter().zip(factor).map(|(a, m)| a * m).collect();
        check_finite("mul_const", &out)?;
        let t = Tensor::from_parts(v.shape().to_vec(), out);
        let rg = self.needs(&[x]);
        Ok(self.push(Op::MulConst(x, factor.to_vec()), t, rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::Dimension {
                op: "add",
                left: va.shape().to_vec(),
                right: vb.shape().to_vec(),
            });
        }
        let out: Vec<f64> = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        check_finite("add", &out)?;
        let t = Tensor::from_parts(va.shape().to_vec(), out);
        let rg = self.needs(&[a, b]);
        Ok(self.push(Op::Add(a, b), t, rg))
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.value(x).sum();
        check_finite("sum", &[s])?;
        let rg = self.needs(&[x]);
        Ok(self.push(Op::Sum(x), Tensor::scalar(s), rg))
    }

    /// Mean over the batch of `-log softmax(logits)[label]`, stabilized by
    /// subtracting the row maximum.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let v = self.value(logits);
        let s = v.shape();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(Error::Dimension {
                op: "softmax_cross_entropy",
                left: s.to_vec(),
                right: vec![labels.len()],
            });
        }
        let (b, c) = (s[0], s[1]);
        if let Some(bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Input(format!(
                "label {bad} out of range for {c} classes"
            )));
        }
        let x = v.data();
        let mut probs = vec![0.0; b * c];
        let mut total = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            let row = &x[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (p, &r) in probs[i * c..(i + 1) * c].iter_mut().zip(row) {
                *p = (r - max).exp();
                z += *p;
            }
            probs[i * c..(i + 1) * c].iter_mut().for_each(|p| *p /= z);
            total += max + z.ln() - row[label];
        }
        let loss = total / b as f64;
        check_finite("softmax_cross_entropy", &[loss])?;
        let rg = self.needs(&[logits]);
        Ok(self.push(
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            Tensor::scalar(loss),
            rg,
        ))
    }

    /// Propagates `d loss / d node` back to every trainable leaf. Gradients
    /// accumulate when a leaf is used more than once. The graph can only be
    /// differentiated once.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.consumed {
            return Err(Error::Usage("graph already consumed by backward".into()));
        }
        if !self.value(loss).is_scalar() {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            if matches!(self.nodes[idx].op, Op::Leaf) {
                self.nodes[idx].value.accumulate_grad(&g)?;
                continue;
            }
            self.propagate(idx, &g, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                if self.node(*a).requires_grad {
                    let ga = slot(grads, *a, m * k);
                    kernels::gemm_a_bt_acc(g, vb.data(), ga, m, n, k);
                }
                if self.node(*b).requires_grad {
                    let gb = slot(grads, *b, k * n);
                    kernels::gemm_at_b_acc(va.data(), g, gb, m, k, n);
                }
            }
            Op::AddRowBias(x, bias) => {
                if self.node(*x).requires_grad {
                    add_into(slot(grads, *x, g.len()), g);
                }
                if self.node(*bias).requires_grad {
                    let n = self.value(*bias).len();
                    let gb = slot(grads, *bias, n);
                    for (i, v) in g.iter().enumerate() {
                        gb[i % n] += v;
                    }
                }
            }
            Op::AddChannelBias(x, bias) => {
                if self.node(*x).requires_grad {
                    add_into(slot(grads, *x, g.len()), g);
                }
                if self.node(*bias).requires_grad {
                    let s = self.value(*x).shape();
                    let (c, hw) = (s[1], s[2] * s[3]);
                    let gb = slot(grads, *bias, c);
                    for (i, v) in g.iter().enumerate() {
                        gb[(i / hw) % c] += v;
                    }
                }
            }
            Op::Conv2d {
                input,
                kernel,
                geometry,
                batch,
                cols,
            } => {
                let kv = self.value(*kernel);
                let c_out = kv.shape()[0];
                let rows = geometry.col_rows();
                let ncols = geometry.col_cols();
                let img = geometry.channels * geometry.height * geometry.width;
                if self.node(*kernel).requires_grad {
                    let gk = slot(grads, *kernel, kv.len());
                    for b in 0..*batch {
                        kernels::gemm_a_bt_acc(
                            &g[b * c_out * ncols..(b + 1) * c_out * ncols],
                            &cols[b * rows * ncols..(b + 1) * rows * ncols],
                            gk,
                            c_out,
                            ncols,
                            rows,
                        );
                    }
                }
                if self.node(*input).requires_grad {
                    let mut gcol = vec![0.0; rows * ncols];
                    let gi = slot(grads, *input, batch * img);
                    for b in 0..*batch {
                        gcol.iter_mut().for_each(|v| *v = 0.0);
                        kernels::gemm_at_b_acc(
                            kv.data(),
                            &g[b * c_out * ncols..(b + 1) * c_out * ncols],
                            &mut gcol,
                            c_out,
                            rows,
                            ncols,
                        );
                        kernels::col2im_acc(&gcol, geometry, &mut gi[b * img..(b + 1) * img]);
                    }
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                let gx = slot(grads, *x, g.len());
                for ((o, gv), xv) in gx.iter_mut().zip(g).zip(xv) {
                    if *xv > 0.0 {
                        *o += gv;
                    }
                }
            }
            Op::Reshape(x) => add_into(slot(grads, *x, g.len()), g),
            Op::MulConst(x, factor) => {
                let gx = slot(grads, *x, g.len());
                for ((o, gv), m) in gx.iter_mut().zip(g).zip(factor) {
                    *o += gv * m;
                }
            }
            Op::Add(a, b) => {
                for id in [a, b] {
                    if self.node(*id).requires_grad {
                        add_into(slot(grads, *id, g.len()), g);
                    }
                }
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                slot(grads, *x, n).iter_mut().for_each(|v| *v += g[0]);
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let c = self.value(*logits).shape()[1];
                let scale = g[0] / labels.len() as f64;
                let gl = slot(grads, *logits, probs.len());
                for (i, &label) in labels.iter().enumerate() {
                    for j in 0..c {
                        let onehot = if j == label { 1.0 } else { 0.0 };
                        gl[i * c + j] += (probs[i * c + j] - onehot) * scale;
                    }
                }
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], id: NodeId, len: usize) -> &mut [f64] {
    grads[id.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

pub(crate) fn conv_geometry(
    channels: usize,
    height: usize,
    width: usize,
    kernel_h: usize,
    kernel_w: usize,
    stride: usize,
    padding: usize,
) -> Result<ConvGeometry> {
    if stride == 0 {
        return Err(Error::Config("conv2d stride must be at least 1".into()));
    }
    let (ph, pw) = (height + 2 * padding, width + 2 * padding);
    if kernel_h > ph || kernel_w > pw {
        return Err(Error::Config(format!(
            "conv2d kernel {kernel_h}x{kernel_w} larger than padded input {ph}x{pw}"
        )));
    }
    if !(ph - kernel_h).is_multiple_of(stride) || !(pw - kernel_w).is_multiple_of(stride) {
        return Err(Error::Config(format!(
            "conv2d output size is not integral: padded {ph}x{pw}, kernel {kernel_h}x{kernel_w}, stride {stride}"
        )));
    }
    Ok(ConvGeometry {
        channels,
        height,
        width,
        kernel_h,
        kernel_w,
        stride,
        padding,
        out_h: (ph - kernel_h) / stride + 1,
        out_w: (pw - kernel_w) / stride + 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_dot() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let b = g.constant(t(&[2, 2], &[3.0, 4.0, 5.0, 6.0]));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[3.0, 4.0, 5.0, 6.0]);

        let a = g.constant(t(&[1, 2], &[1.0, 2.0]));
        let b = g.constant(t(&[2, 1], &[3.0, 4.0]));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn conv_identity_and_sum() {
        let mut g = Graph::new();
        let data: Vec<f64> = (1..=9).map(f64::from).collect();
        let x = g.constant(t(&[1, 3, 3], &data));
        let k = g.constant(t(&[1, 1, 1, 1], &[1.0]));
        let y = g.conv2d(x, k, 1, 0).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 3, 3]);
        assert_eq!(g.value(y).data(), data.as_slice());

        let x = g.constant(Tensor::ones(&[1, 2, 2]));
        let k = g.constant(Tensor::ones(&[1, 1, 2, 2]));
        let y = g.conv2d(x, k, 1, 0).unwrap();
        assert_eq!(g.value(y).data(), &[4.0]);
    }

    #[test]
    fn conv_rejects_fractional_output() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::ones(&[1, 4, 4]));
        let k = g.constant(Tensor::ones(&[1, 1, 3, 3]));
        assert!(matches!(g.conv2d(x, k, 2, 0), Err(Error::Config(_))));
        assert!(matches!(g.conv2d(x, k, 0, 0), Err(Error::Config(_))));
    }

    #[test]
    fn relu_values() {
        let mut g = Graph::new();
        let x = g.constant(t(&[3], &[-1.0, 0.0, 2.0]));
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
        let x = g.constant(t(&[3], &[0.5, 1.0, 2.0]));
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0.5, 1.0, 2.0]);
    }

    #[test]
    fn cross_entropy_uniform_and_stable() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 10]));
        let l = g.softmax_cross_entropy(x, &[3]).unwrap();
        assert!((g.value(l).data()[0] - 10f64.ln()).abs() < 1e-12);

        let x = g.constant(t(&[1, 2], &[1000.0, 0.0]));
        let l = g.softmax_cross_entropy(x, &[0]).unwrap();
        let v = g.value(l).data()[0];
        assert!(v.is_finite() && v.abs() < 1e-12);

        let x = g.constant(t(&[2, 2], &[1e6, -1e6, -1e6, 1e6]));
        let l = g.softmax_cross_entropy(x, &[1, 0]).unwrap();
        assert!(g.value(l).data()[0].is_finite());
    }

    #[test]
    fn cross_entropy_label_out_of_range() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 3]));
        assert!(matches!(
            g.softmax_cross_entropy(x, &[3]),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn backward_sum_gives_ones_and_accumulates() {
        let mut g = Graph::new();
        let x = g.param(t(&[3], &[0.3, -2.0, 7.0]));
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0, 1.0]);

        let mut g = Graph::new();
        let x = g.param(t(&[2], &[1.0, 2.0]));
        let y = g.add(x, x).unwrap();
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 2.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_reuse() {
        let mut g = Graph::new();
        let x = g.param(Tensor::ones(&[2]));
        assert!(matches!(g.backward(x), Err(Error::Usage(_))));
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert!(matches!(g.backward(s), Err(Error::Usage(_))));
    }

    #[test]
    fn relu_gradient_is_indicator() {
        let mut g = Graph::new();
        let vals = [-1.5, 0.0, 0.2, 3.0, -0.1];
        let x = g.param(t(&[5], &vals));
        let y = g.relu(x);
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        let expect: Vec<f64> = vals.iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect();
        assert_eq!(g.grad(x).unwrap(), expect.as_slice());
    }
}
