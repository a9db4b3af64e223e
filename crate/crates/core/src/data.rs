//! Image classification datasets: MNIST IDX files, stratified subsets, and a
//! synthetic blob dataset for offline runs.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::rng;
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: bad magic {found:#010x}, expected {expected:#010x}")]
    BadMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },
    #[error("{path}: truncated ({detail})")]
    Truncated { path: PathBuf, detail: String },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("class {class} has {available} samples, {needed} needed")]
    InsufficientSamples {
        class: usize,
        needed: usize,
        available: usize,
    },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// Grayscale images `[N, H, W]` in `[0, 1]` with class ids in `[0, num_classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
    pub name: String,
}

impl Dataset {
    pub fn new(
        images: Tensor,
        labels: Vec<usize>,
        num_classes: usize,
        name: impl Into<String>,
    ) -> Result<Self, DataError> {
        if images.rank() != 3 {
            return Err(DataError::Invalid(format!(
                "images must be [N, H, W], got {:?}",
                images.shape()
            )));
        }
        if images.shape()[0] != labels.len() {
            return Err(DataError::CountMismatch {
                images: images.shape()[0],
                labels: labels.len(),
            });
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(DataError::Invalid(format!(
                "label {l} outside 0..{num_classes}"
            )));
        }
        if images.data().iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(DataError::Invalid("pixel outside [0, 1]".into()));
        }
        Ok(Dataset {
            images,
            labels,
            num_classes,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// `(height, width)`
    pub fn image_shape(&self) -> (usize, usize) {
        (self.images.shape()[1], self.images.shape()[2])
    }

    /// Images `[B, H, W]` and labels for the given sample indices, in order.
    pub fn gather(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let (h, w) = self.image_shape();
        let plane = h * w;
        let mut data = Vec::with_capacity(indices.len() * plane);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(&self.images.data()[i * plane..(i + 1) * plane]);
            labels.push(self.labels[i]);
        }
        (
            Tensor::from_vec(vec![indices.len(), h, w], data).expect("gather shape"),
            labels,
        )
    }

    pub fn subset(&self, indices: &[usize], name: impl Into<String>) -> Dataset {
        let (images, labels) = self.gather(indices);
        Dataset {
            images,
            labels,
            num_classes: self.num_classes,
            name: name.into(),
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

fn read_be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32, DataError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| DataError::Truncated {
            path: path.to_path_buf(),
            detail: format!("header ends before byte {}", at + 4),
        })
}

fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Parses an IDX image file and label file pair. Pixels are scaled by 1/255;
/// the class count is 10 or `max(label) + 1`, whichever is larger.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset, DataError> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let ib = read_file(ip)?;
    let lb = read_file(lp)?;

    let magic = read_be_u32(&ib, 0, ip)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(DataError::BadMagic {
            path: ip.to_path_buf(),
            expected: IDX_IMAGES_MAGIC,
            found: magic,
        });
    }
    let magic = read_be_u32(&lb, 0, lp)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(DataError::BadMagic {
            path: lp.to_path_buf(),
            expected: IDX_LABELS_MAGIC,
            found: magic,
        });
    }

    let n = read_be_u32(&ib, 4, ip)? as usize;
    let h = read_be_u32(&ib, 8, ip)? as usize;
    let w = read_be_u32(&ib, 12, ip)? as usize;
    let pixels = &ib[16..];
    if pixels.len() < n * h * w {
        return Err(DataError::Truncated {
            path: ip.to_path_buf(),
            detail: format!("{} pixel bytes for {n}x{h}x{w}", pixels.len()),
        });
    }
    let nl = read_be_u32(&lb, 4, lp)? as usize;
    let label_bytes = &lb[8..];
    if label_bytes.len() < nl {
        return Err(DataError::Truncated {
            path: lp.to_path_buf(),
            detail: format!("{} label bytes for {nl} labels", label_bytes.len()),
        });
    }
    if n != nl {
        return Err(DataError::CountMismatch { images: n, labels: nl });
    }

    let data = pixels[..n * h * w].iter().map(|&p| p as f64 / 255.0).collect();
    let labels: Vec<usize> = label_bytes[..nl].iter().map(|&l| l as usize).collect();
    let num_classes = labels.iter().map(|&l| l + 1).max().unwrap_or(0).max(10);
    let images = Tensor::from_vec(vec![n, h, w], data).expect("idx shape");
    let name = ip
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "idx".into());
    Dataset::new(images, labels, num_classes, name)
}

/// Loads the standard MNIST file names from `dir` and draws stratified
/// subsets: `train_n` from the training files and `test_n` from the t10k files.
pub fn load_mnist_subset(
    dir: impl AsRef<Path>,
    train_n: usize,
    test_n: usize,
    seed: u64,
) -> Result<(Dataset, Dataset), DataError> {
    let dir = dir.as_ref();
    let train = load_idx(
        dir.join("train-images-idx3-ubyte"),
        dir.join("train-labels-idx1-ubyte"),
    )?;
    let test = load_idx(
        dir.join("t10k-images-idx3-ubyte"),
        dir.join("t10k-labels-idx1-ubyte"),
    )?;
    let (train, _) = subset_split(&train, train_n, 0, seed)?;
    let (_, test) = subset_split(&test, 0, test_n, seed)?;
    Ok((
        Dataset { name: format!("mnist-train-{train_n}"), ..train },
        Dataset { name: format!("mnist-test-{test_n}"), ..test },
    ))
}

/// True when `dir` holds the four MNIST IDX files.
pub fn has_mnist(dir: impl AsRef<Path>) -> bool {
    let dir = dir.as_ref();
    [
        "train-images-idx3-ubyte",
        "train-labels-idx1-ubyte",
        "t10k-images-idx3-ubyte",
        "t10k-labels-idx1-ubyte",
    ]
    .iter()
    .all(|f| dir.join(f).is_file())
}

/// Class-stratified disjoint split: `train_n / K` and `test_n / K` samples per
/// class (remainders dropped), chosen by a seeded shuffle. Both outputs keep
/// the shuffled order.
pub fn subset_split(
    ds: &Dataset,
    train_n: usize,
    test_n: usize,
    seed: u64,
) -> Result<(Dataset, Dataset), DataError> {
    if train_n + test_n > ds.len() {
        return Err(DataError::Invalid(format!(
            "requested {} samples from {}",
            train_n + test_n,
            ds.len()
        )));
    }
    let k = ds.num_classes();
    let (per_train, per_test) = (train_n / k, test_n / k);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut rng::seeded(seed, rng::STREAM_SPLIT));

    let mut taken = vec![0usize; k];
    let mut train_idx = Vec::with_capacity(per_train * k);
    let mut test_idx = Vec::with_capacity(per_test * k);
    for &i in &order {
        let c = ds.labels()[i];
        if taken[c] < per_train {
            train_idx.push(i);
        } else if taken[c] < per_train + per_test {
            test_idx.push(i);
        } else {
            continue;
        }
        taken[c] += 1;
    }
    if let Some((class, &available)) = taken
        .iter()
        .enumerate()
        .find(|(_, &t)| t < per_train + per_test)
    {
        return Err(DataError::InsufficientSamples {
            class,
            needed: per_train + per_test,
            available,
        });
    }
    Ok((
        ds.subset(&train_idx, format!("{}-train", ds.name)),
        ds.subset(&test_idx, format!("{}-test", ds.name)),
    ))
}

/// Ten-class 28x28 blobs split like the MNIST subsets: `train_n` and `test_n`
/// samples, stratified.
pub fn synthetic_subset(train_n: usize, test_n: usize, seed: u64) -> Result<(Dataset, Dataset), DataError> {
    let per_class = (train_n.div_ceil(10) + test_n.div_ceil(10)).max(1);
    let all = synthetic_blobs(10, per_class, 28, seed);
    let (train, test) = subset_split(&all, train_n, test_n, seed)?;
    Ok((
        Dataset { name: format!("blobs-train-{train_n}"), ..train },
        Dataset { name: format!("blobs-test-{test_n}"), ..test },
    ))
}

/// Per-class Gaussian intensity blobs on a ring around the image centre, with
/// positional jitter, amplitude variation and pixel noise, clipped to [0, 1].
/// Samples cycle through the classes: sample `i` has class `i % num_classes`.
pub fn synthetic_blobs(num_classes: usize, n_per_class: usize, image_size: usize, seed: u64) -> Dataset {
    assert!(num_classes >= 1 && n_per_class >= 1 && image_size >= 1);
    let mut rng = rng::seeded(seed, rng::STREAM_DATA);
    let s = image_size as f64;
    let radius = 0.3 * s;
    let sigma = (s / 10.0).max(0.5);
    let jitter = Normal::new(0.0, 0.04 * s).unwrap();
    let noise = Normal::new(0.0, 0.1).unwrap();
    let centre = (s - 1.0) / 2.0;

    let n = num_classes * n_per_class;
    let mut data = Vec::with_capacity(n * image_size * image_size);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % num_classes;
        let angle = std::f64::consts::TAU * class as f64 / num_classes as f64;
        let cy = centre + radius * angle.sin() + jitter.sample(&mut rng);
        let cx = centre + radius * angle.cos() + jitter.sample(&mut rng);
        let amp = rng.random_range(0.7..1.0);
        for y in 0..image_size {
            for x in 0..image_size {
                let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                let v = amp * (-d2 / (2.0 * sigma * sigma)).exp() + noise.sample(&mut rng);
                data.push(v.clamp(0.0, 1.0));
            }
        }
        labels.push(class);
    }
    let images = Tensor::from_vec(vec![n, image_size, image_size], data).expect("blob shape");
    Dataset::new(images, labels, num_classes, format!("blobs-{num_classes}x{n_per_class}"))
        .expect("synthetic data is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_is_deterministic() {
        let a = synthetic_blobs(10, 3, 12, 5);
        let b = synthetic_blobs(10, 3, 12, 5);
        assert_eq!(a, b);
        assert_ne!(a, synthetic_blobs(10, 3, 12, 6));
        assert_eq!(synthetic_blobs(10, 1, 8, 0).len(), 10);
    }

    #[test]
    fn stratified_counts() {
        let ds = synthetic_blobs(10, 200, 6, 1);
        let (train, test) = subset_split(&ds, 1000, 500, 3).unwrap();
        assert_eq!(train.len(), 1000);
        assert!(train.class_counts().iter().all(|&c| c == 100));
        assert!(test.class_counts().iter().all(|&c| c == 50));
        let (again, _) = subset_split(&ds, 1000, 500, 3).unwrap();
        assert_eq!(train, again);
    }

    #[test]
    fn remainder_and_empty() {
        let ds = synthetic_blobs(10, 20, 4, 1);
        let (train, test) = subset_split(&ds, 0, 57, 0).unwrap();
        assert!(train.is_empty());
        assert_eq!(test.len(), 50);
    }

    #[test]
    fn insufficient_class() {
        let ds = synthetic_blobs(4, 5, 4, 1);
        let keep: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels()[i] != 2 || i < 10).collect();
        let skewed = ds.subset(&keep, "skewed");
        assert!(matches!(
            subset_split(&skewed, 16, 0, 0),
            Err(DataError::InsufficientSamples { class: 2, .. })
        ));
        assert!(subset_split(&ds, 15, 10, 0).is_err());
    }

    #[test]
    fn dataset_validation() {
        let t = Tensor::zeros(vec![2, 2, 2]);
        assert!(matches!(
            Dataset::new(t.clone(), vec![0], 2, "x"),
            Err(DataError::CountMismatch { .. })
        ));
        assert!(Dataset::new(t.clone(), vec![0, 2], 2, "x").is_err());
        assert!(Dataset::new(t.map(|_| 1.5), vec![0, 1], 2, "x").is_err());
    }
}
