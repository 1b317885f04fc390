//! Datasets: synthetic generators, IDX files and seeded batch streams.

mod digits;
mod idx;

pub use digits::render_digits;
pub use idx::{load_idx, write_idx};

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Inputs `N × sample_shape` with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
    split: Split,
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>, num_classes: usize, split: Split) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Input("dataset must hold at least one sample".into()));
        }
        if inputs.shape().len() < 2 || inputs.shape()[0] != labels.len() {
            return Err(Error::Input(format!(
                "inputs {:?} do not match {} labels",
                inputs.shape(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Input(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        if !inputs.all_finite() {
            return Err(Error::Input("dataset inputs must be finite".into()));
        }
        Ok(Self {
            inputs,
            labels,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    fn sample_len(&self) -> usize {
        self.sample_shape().iter().product()
    }

    /// Copies the listed samples into a batch tensor.
    pub fn gather(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let d = self.sample_len();
        let src = self.inputs.data();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(self.sample_shape());
        (
            Tensor::from_parts(shape, data),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    /// The first `n` samples.
    pub fn head(&self, n: usize) -> Result<Self> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        let (inputs, labels) = self.gather(&idx);
        Self::new(inputs, labels, self.num_classes, self.split)
    }

    pub fn label_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }

    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for d in self.inputs.shape() {
            h.update((*d as u64).to_le_bytes());
        }
        for v in self.inputs.data() {
            h.update(v.to_le_bytes());
        }
        for l in &self.labels {
            h.update((*l as u64).to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    /// Gaussian clusters around random well-separated centers.
    Blobs,
    /// Interleaved 2-d spiral arms.
    Spirals,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub n_per_class: usize,
    pub classes: usize,
    pub noise: f64,
    /// Feature dimension (spirals are always 2-d).
    pub dim: usize,
    pub seed: u64,
}

/// Deterministic synthetic train/test pair. Within each class, every fifth
/// sample goes to the test split; classes are interleaved sample by sample,
/// so both splits are stratified.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, Dataset)> {
    if spec.classes < 2 || spec.n_per_class < 2 {
        return Err(Error::Config(
            "synthetic data needs at least 2 classes and 2 samples per class".into(),
        ));
    }
    if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
        return Err(Error::Config(format!("bad noise level {}", spec.noise)));
    }
    let dim = match spec.kind {
        SyntheticKind::Blobs => spec.dim.max(1),
        SyntheticKind::Spirals => 2,
    };
    let mut rng = rng::stream(spec.seed, &[0xda7a]);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");

    let centers: Vec<Vec<f64>> = match spec.kind {
        SyntheticKind::Blobs => sample_centers(&mut rng, spec.classes, dim),
        SyntheticKind::Spirals => Vec::new(),
    };

    // samples[class][j]
    let mut samples: Vec<Vec<Vec<f64>>> = Vec::with_capacity(spec.classes);
    #[allow(clippy::needless_range_loop)]
    for c in 0..spec.classes {
        let mut class_samples = Vec::with_capacity(spec.n_per_class);
        for j in 0..spec.n_per_class {
            let mut x = match spec.kind {
                SyntheticKind::Blobs => centers[c].clone(),
                SyntheticKind::Spirals => {
                    let r = (j as f64 + 0.5) / spec.n_per_class as f64;
                    let theta = 1.75 * 2.0 * PI * r + 2.0 * PI * c as f64 / spec.classes as f64;
                    vec![r * theta.cos(), r * theta.sin()]
                }
            };
            for v in &mut x {
                *v += spec.noise * noise.sample(&mut rng);
            }
            class_samples.push(x);
        }
        samples.push(class_samples);
    }

    let mut train = (Vec::new(), Vec::new());
    let mut test = (Vec::new(), Vec::new());
    for j in 0..spec.n_per_class {
        for (c, class_samples) in samples.iter().enumerate() {
            let dst = if j % 5 == 4 { &mut test } else { &mut train };
            dst.0.extend_from_slice(&class_samples[j]);
            dst.1.push(c);
        }
    }
    let build = |(data, labels): (Vec<f64>, Vec<usize>), split| {
        let n = labels.len();
        Dataset::new(Tensor::new(vec![n, dim], data)?, labels, spec.classes, split)
    };
    Ok((build(train, Split::Train)?, build(test, Split::Test)?))
}

/// Centers at distance 4 from the origin with pairwise distance ≥ 2.
fn sample_centers(rng: &mut impl Rng, classes: usize, dim: usize) -> Vec<Vec<f64>> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(classes);
    let mut attempts = 0;
    while centers.len() < classes {
        let mut v: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        v.iter_mut().for_each(|x| *x *= 4.0 / norm);
        attempts += 1;
        let far = centers
            .iter()
            .all(|c| c.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>() >= 4.0);
        if far || attempts > 10_000 {
            centers.push(v);
        }
    }
    centers
}

/// Batch index lists for one epoch. With `shuffle`, the permutation is a
/// pure function of `(seed, epoch)`; the last partial batch is kept.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: u64, shuffle: bool) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        order.shuffle(&mut rng::stream(seed, &[0xba7c, epoch]));
    }
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// `(inputs, labels)` batches for one epoch.
pub fn batches(
    dataset: &Dataset,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    shuffle: bool,
) -> Result<impl Iterator<Item = (Tensor, Vec<usize>)> + '_> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    Ok(epoch_batches(dataset.len(), batch_size, seed, epoch, shuffle)
        .into_iter()
        .map(move |idx| dataset.gather(&idx)))
}

/// Endless shuffled stream that walks epoch after epoch, for
/// iteration-counted training.
#[derive(Debug)]
pub struct BatchStream<'a> {
    dataset: &'a Dataset,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    pending: std::vec::IntoIter<Vec<usize>>,
}

impl<'a> BatchStream<'a> {
    pub fn new(dataset: &'a Dataset, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(Self {
            dataset,
            batch_size,
            seed,
            epoch: 0,
            pending: epoch_batches(dataset.len(), batch_size, seed, 0, true).into_iter(),
        })
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }
}

impl Iterator for BatchStream<'_> {
    type Item = (Tensor, Vec<usize>);

    fn next(&mut self) -> Option<Self::Item> {
        let idx = match self.pending.next() {
            Some(idx) => idx,
            None => {
                self.epoch += 1;
                self.pending =
                    epoch_batches(self.dataset.len(), self.batch_size, self.seed, self.epoch, true)
                        .into_iter();
                self.pending.next()?
            }
        };
        Some(self.dataset.gather(&idx))
    }
}
