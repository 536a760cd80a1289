//! Datasets: IDX image/label files, labeled CSV, and synthetic Gaussian
//! blobs. Also the per-epoch shuffle-and-partition batch sampler.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Per-example shape.
    pub shape: Vec<usize>,
    /// Row-major features, `len() * product(shape)` values.
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub split: Split,
    pub provenance: String,
}

impl Dataset {
    pub fn new(
        shape: Vec<usize>,
        features: Vec<f64>,
        labels: Vec<usize>,
        num_classes: usize,
        split: Split,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        let per: usize = shape.iter().product();
        if labels.is_empty() {
            return Err(Error::Input("dataset has no examples".into()));
        }
        if shape.is_empty() || per == 0 || features.len() != per * labels.len() {
            return Err(Error::Input(format!(
                "{} feature values do not fit {} examples of shape {shape:?}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Input(format!("label {bad} outside [0, {num_classes})")));
        }
        Ok(Self {
            shape,
            features,
            labels,
            num_classes,
            split,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn example_len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn features_of(&self, i: usize) -> &[f64] {
        let n = self.example_len();
        &self.features[i * n..(i + 1) * n]
    }

    pub fn example<T: Scalar>(&self, i: usize) -> Tensor<T> {
        let data = self.features_of(i).iter().map(|&v| T::of(v)).collect();
        Tensor::new(self.shape.clone(), data).expect("dataset shape validated at construction")
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }
}

fn read_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            offset: offset as u64,
            reason: "truncated header".into(),
        })
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let actual = read_u32(bytes, 0, path)?;
    if actual != expected {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            reason: format!("bad magic: expected {expected:#010x}, found {actual:#010x}"),
        });
    }
    Ok(())
}

fn check_len(bytes: &[u8], expected: usize, path: &Path) -> Result<()> {
    if bytes.len() != expected {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: bytes.len().min(expected) as u64,
            reason: format!("expected {expected} bytes, file has {}", bytes.len()),
        });
    }
    Ok(())
}

/// Loads an IDX image file (`u8` pixels, scaled to [0, 1]) and its label
/// file. Images come out as `1 × rows × cols`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = std::fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let labels = std::fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    check_magic(&images, IDX_IMAGES_MAGIC, images_path)?;
    check_magic(&labels, IDX_LABELS_MAGIC, labels_path)?;
    let n = read_u32(&images, 4, images_path)? as usize;
    let rows = read_u32(&images, 8, images_path)? as usize;
    let cols = read_u32(&images, 12, images_path)? as usize;
    let n_labels = read_u32(&labels, 4, labels_path)? as usize;
    check_len(&images, 16 + n * rows * cols, images_path)?;
    check_len(&labels, 8 + n_labels, labels_path)?;
    if n != n_labels {
        return Err(Error::Format {
            path: labels_path.to_path_buf(),
            offset: 4,
            reason: format!("{n_labels} labels for {n} images"),
        });
    }
    let features = images[16..].iter().map(|&p| p as f64 / 255.0).collect();
    let labels: Vec<usize> = labels[8..].iter().map(|&l| l as usize).collect();
    let num_classes = labels.iter().max().map_or(0, |&m| m + 1).max(2);
    Dataset::new(
        vec![1, rows, cols],
        features,
        labels,
        num_classes,
        Split::Train,
        format!("idx:{}", images_path.display()),
    )
}

/// Writes images (`1 × rows × cols` or `rows × cols`, values in [0, 1]) and
/// labels in IDX format.
pub fn write_idx(dataset: &Dataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    let (rows, cols) = match dataset.shape.as_slice() {
        [1, r, c] | [r, c] => (*r, *c),
        other => return Err(Error::Input(format!("cannot write shape {other:?} as IDX images"))),
    };
    let n = dataset.len() as u32;
    let mut img = Vec::with_capacity(16 + dataset.features.len());
    for v in [IDX_IMAGES_MAGIC, n, rows as u32, cols as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend(dataset.features.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    let mut lab = Vec::with_capacity(8 + dataset.len());
    lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&n.to_be_bytes());
    lab.extend(dataset.labels.iter().map(|&l| l as u8));
    std::fs::write(images_path, img).map_err(|e| Error::io(images_path, e))?;
    std::fs::write(labels_path, lab).map_err(|e| Error::io(labels_path, e))
}

/// Loads `label,f0,f1,...` rows.
pub fn load_csv(path: &Path, num_classes: Option<usize>) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if headers.get(0) != Some("label") || headers.len() < 2 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            reason: "header must be `label,f0,f1,...`".into(),
        });
    }
    let width = headers.len() - 1;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let offset = record.position().map_or(0, |p| p.byte());
        let bad = |what: &str| Error::Format {
            path: path.to_path_buf(),
            offset,
            reason: what.to_string(),
        };
        labels.push(record[0].trim().parse::<usize>().map_err(|_| bad("label is not a non-negative integer"))?);
        for field in record.iter().skip(1) {
            features.push(field.trim().parse::<f64>().map_err(|_| bad("feature is not a number"))?);
        }
        if features.len() != labels.len() * width {
            return Err(bad("row width differs from header"));
        }
    }
    let num_classes = num_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |&m| m + 1).max(2));
    Dataset::new(
        vec![width],
        features,
        labels,
        num_classes,
        Split::Train,
        format!("csv:{}", path.display()),
    )
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let offset = e.position().map_or(0, |p| p.byte());
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        kind => Error::Format {
            path: path.to_path_buf(),
            offset,
            reason: format!("{kind:?}"),
        },
    }
}

/// Gaussian clusters around class means. Class `c` has its mean at
/// coordinate `c mod dim` with value `1 + c / dim`, so distinct means are at
/// least one unit apart. Examples cycle through the classes in order.
pub fn synth_blobs(num_classes: usize, per_class: usize, shape: &[usize], spread: f64, seed: u64) -> Result<Dataset> {
    if per_class == 0 {
        return Err(Error::config("data.per_class", "must be >= 1"));
    }
    if num_classes < 2 {
        return Err(Error::config("data.classes", "must be >= 2"));
    }
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::config("data.shape", "extents must be >= 1"));
    }
    if !(spread >= 0.0) {
        return Err(Error::config("data.spread", "must be >= 0"));
    }
    let dim: usize = shape.iter().product();
    let n = num_classes * per_class;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % num_classes;
        let hot = class % dim;
        let level = 1.0 + (class / dim) as f64;
        for j in 0..dim {
            let mean = if j == hot { level } else { 0.0 };
            let z: f64 = StandardNormal.sample(&mut rng);
            features.push(mean + spread * z);
        }
        labels.push(class);
    }
    Dataset::new(
        shape.to_vec(),
        features,
        labels,
        num_classes,
        Split::Train,
        format!("synth_blobs(classes={num_classes}, per_class={per_class}, spread={spread}, seed={seed})"),
    )
}

const SHUFFLE_DOMAIN: u64 = 0x7368_7566_666c_6500;

/// Per-epoch shuffle of `0..n`, cut into `⌊n / batch⌋` batches of exactly
/// `batch` indices; the remainder is dropped.
pub fn sample_batches(n: usize, batch: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if batch == 0 || batch > n {
        return Err(Error::config(
            "dp.grad_acc",
            format!("effective batch {batch} must lie in 1..={n}"),
        ));
    }
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&epoch.to_le_bytes());
    key[16..24].copy_from_slice(&SHUFFLE_DOMAIN.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    Ok(perm.chunks_exact(batch).map(<[usize]>::to_vec).collect())
}
