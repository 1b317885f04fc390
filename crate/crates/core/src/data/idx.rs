//! IDX container files (the MNIST distribution format): big-endian header
//! `magic, count, dims...` followed by unsigned bytes.

use std::io::{Read, Write};
use std::path::Path;

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32(r: &mut impl Read, path: &Path) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| Error::io(path, e))?;
    Ok(u32::from_be_bytes(b))
}

fn open(path: &Path) -> Result<std::io::BufReader<std::fs::File>> {
    std::fs::File::open(path)
        .map(std::io::BufReader::new)
        .map_err(|e| Error::io(path, e))
}

/// Loads an image/label file pair. Pixels are scaled by 1/255 into `[0, 1]`;
/// inputs have shape `N × 1 × rows × cols`. The class count is the largest
/// label plus one.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let mut img = open(images_path)?;
    let magic = read_u32(&mut img, images_path)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "{}: image magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}",
            images_path.display()
        )));
    }
    let n = read_u32(&mut img, images_path)? as usize;
    let rows = read_u32(&mut img, images_path)? as usize;
    let cols = read_u32(&mut img, images_path)? as usize;

    let mut lab = open(labels_path)?;
    let magic = read_u32(&mut lab, labels_path)?;
    if magic != LABELS_MAGIC {
        return Err(Error::Format(format!(
            "{}: label magic {magic:#010x}, expected {LABELS_MAGIC:#010x}",
            labels_path.display()
        )));
    }
    let n_labels = read_u32(&mut lab, labels_path)? as usize;
    if n_labels != n {
        return Err(Error::Consistency(format!(
            "{} images but {n_labels} labels",
            n
        )));
    }
    if n == 0 || rows == 0 || cols == 0 {
        return Err(Error::Format("IDX file with an empty dimension".into()));
    }

    let mut pixels = vec![0u8; n * rows * cols];
    img.read_exact(&mut pixels)
        .map_err(|e| Error::io(images_path, e))?;
    let mut labels = vec![0u8; n];
    lab.read_exact(&mut labels)
        .map_err(|e| Error::io(labels_path, e))?;

    let data = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    let labels: Vec<usize> = labels.into_iter().map(usize::from).collect();
    let classes = labels.iter().max().map_or(1, |m| m + 1);
    Dataset::new(
        Tensor::from_parts(vec![n, 1, rows, cols], data),
        labels,
        classes,
        Split::Train,
    )
}

/// Writes a dataset as an IDX pair. Inputs must be `N×1×H×W`, `N×H×W` or
/// `N×D` (written as `N×1×D`) with values in `[0, 1]`; each value is stored
/// as `round(v · 255)`. Labels must fit in a byte.
pub fn write_idx(dataset: &Dataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    let s = dataset.inputs().shape();
    let (rows, cols) = match s {
        [_, 1, h, w] | [_, h, w] => (*h, *w),
        [_, d] => (1, *d),
        _ => {
            return Err(Error::Input(format!(
                "cannot write inputs of shape {s:?} as IDX images"
            )))
        }
    };
    if dataset
        .inputs()
        .data()
        .iter()
        .any(|v| !(0.0..=1.0).contains(v))
    {
        return Err(Error::Input(
            "IDX export needs inputs scaled to [0, 1]; use Dataset::min_max_scaled".into(),
        ));
    }
    if dataset.labels().iter().any(|&l| l > 255) {
        return Err(Error::Input("IDX labels must fit in one byte".into()));
    }
    let n = dataset.len() as u32;

    let mut img = Vec::with_capacity(16 + dataset.inputs().len());
    for v in [IMAGES_MAGIC, n, rows as u32, cols as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend(dataset.inputs().data().iter().map(|v| (v * 255.0).round() as u8));

    let mut lab = Vec::with_capacity(8 + dataset.len());
    for v in [LABELS_MAGIC, n] {
        lab.extend_from_slice(&v.to_be_bytes());
    }
    lab.extend(dataset.labels().iter().map(|&l| l as u8));

    write_file(images_path, &img)?;
    write_file(labels_path, &lab)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

impl Dataset {
    /// Copy with inputs affinely mapped onto `[0, 1]` using the global min and max.
    pub fn min_max_scaled(&self) -> Result<Self> {
        let d = self.inputs().data();
        let lo = d.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let data = d.iter().map(|v| (v - lo) / span).collect();
        Dataset::new(
            Tensor::from_parts(self.inputs().shape().to_vec(), data),
            self.labels().to_vec(),
            self.num_classes(),
            self.split(),
        )
    }

    /// Same samples, relabelled split and class count.
    pub fn with_meta(self, num_classes: usize, split: Split) -> Result<Self> {
        Dataset::new(self.inputs, self.labels, num_classes, split)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
        let images = dir.join("img.idx");
        let labels = dir.join("lab.idx");
        // Two 2×3 images written by hand.
        let mut img = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 3];
        img.extend_from_slice(&[0, 255, 128, 1, 2, 3, 10, 20, 30, 40, 50, 255]);
        std::fs::write(&images, img).unwrap();
        std::fs::write(&labels, [0, 0, 8, 1, 0, 0, 0, 2, 7, 3]).unwrap();
        (images, labels)
    }

    #[test]
    fn hand_written_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let (images, labels) = fixture(dir.path());
        let ds = load_idx(&images, &labels).unwrap();
        assert_eq!(ds.inputs().shape(), &[2, 1, 2, 3]);
        assert_eq!(ds.labels(), &[7, 3]);
        assert_eq!(ds.inputs().data()[1], 1.0);
        assert_eq!(ds.inputs().data()[11], 1.0);
        assert_eq!(ds.inputs().data()[0], 0.0);
    }

    #[test]
    fn bad_magic_count_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let (images, labels) = fixture(dir.path());

        let mut bytes = std::fs::read(&images).unwrap();
        bytes[3] = 0x02;
        let bad = dir.path().join("bad.idx");
        std::fs::write(&bad, &bytes).unwrap();
        assert!(matches!(load_idx(&bad, &labels), Err(Error::Format(_))));

        std::fs::write(&bad, [0, 0, 8, 1, 0, 0, 0, 3, 1, 2, 3]).unwrap();
        assert!(matches!(load_idx(&images, &bad), Err(Error::Consistency(_))));

        let mut bytes = std::fs::read(&images).unwrap();
        bytes.truncate(bytes.len() - 1);
        std::fs::write(&bad, &bytes).unwrap();
        assert!(matches!(load_idx(&bad, &labels), Err(Error::Io { .. })));
    }

    #[test]
    fn export_requires_unit_range() {
        let ds = Dataset::new(
            Tensor::new(vec![2, 2], vec![-1.0, 0.0, 2.0, 1.0]).unwrap(),
            vec![0, 1],
            2,
            Split::Train,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        assert!(write_idx(&ds, &a, &b).is_err());
        let scaled = ds.min_max_scaled().unwrap();
        assert_eq!(scaled.inputs().data(), &[0.0, 1.0 / 3.0, 1.0, 2.0 / 3.0]);
        write_idx(&scaled, &a, &b).unwrap();
        let back = load_idx(&a, &b).unwrap();
        assert_eq!(back.inputs().shape(), &[2, 1, 1, 2]);
    }
}
