//! Training corpora and their division across users.
//!
//! Shards refer to samples by index into a shared [`Dataset`]; nothing is
//! copied per user.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Fixed seed for blob centers, so train and test sets drawn with different
/// seeds share the same class geometry.
const BLOB_CENTER_SEED: u64 = 0x0b10_b5ee_d000_0001;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f32>,
    labels: Vec<usize>,
    input_dim: usize,
    num_classes: usize,
    bits_per_sample: u64,
}

impl Dataset {
    /// Builds a dataset from row-major features in `[0, 1]`.
    /// `bits_per_sample` defaults to one byte per feature plus the label byte.
    pub fn new(features: Vec<f32>, labels: Vec<usize>, input_dim: usize, num_classes: usize) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::invalid("input_dim must be at least 1"));
        }
        if num_classes < 2 {
            return Err(Error::invalid("num_classes must be at least 2"));
        }
        if features.len() != labels.len() * input_dim {
            return Err(Error::invalid(format!(
                "{} feature values do not form {} rows of {}",
                features.len(),
                labels.len(),
                input_dim
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::invalid(format!("label {bad} outside 0..{num_classes}")));
        }
        if let Some(bad) = features.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("feature value {bad} outside [0, 1]")));
        }
        Ok(Dataset {
            features,
            labels,
            input_dim,
            num_classes,
            bits_per_sample: (input_dim as u64 + 1) * 8,
        })
    }

    pub fn with_bits_per_sample(mut self, bits: u64) -> Result<Self> {
        if bits == 0 {
            return Err(Error::invalid("bits_per_sample must be positive"));
        }
        self.bits_per_sample = bits;
        Ok(self)
    }

    /// Raises the declared class count (e.g. to match a test set).
    pub fn with_num_classes(mut self, num_classes: usize) -> Result<Self> {
        if num_classes < self.num_classes {
            return Err(Error::invalid(format!(
                "cannot shrink class count from {} to {num_classes}",
                self.num_classes
            )));
        }
        self.num_classes = num_classes;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn bits_per_sample(&self) -> u64 {
        self.bits_per_sample
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self, i: usize) -> &[f32] {
        &self.features[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn sample(&self, i: usize) -> (&[f32], usize) {
        (self.features(i), self.labels[i])
    }

    /// The first `n` samples (all of them if `n` exceeds the length).
    pub fn truncated(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            features: self.features[..n * self.input_dim].to_vec(),
            labels: self.labels[..n].to_vec(),
            ..*self
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataShard {
    owner: usize,
    indices: Vec<usize>,
}

impl DataShard {
    pub fn new(owner: usize, indices: Vec<usize>) -> Self {
        DataShard { owner, indices }
    }

    /// A shard covering every sample of `data`.
    pub fn whole(owner: usize, data: &Dataset) -> Self {
        DataShard::new(owner, (0..data.len()).collect())
    }

    pub fn owner(&self) -> usize {
        self.owner
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

fn read_be_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn header(path: &Path, bytes: &[u8], magic: u32, dims: usize) -> Result<Vec<usize>> {
    let truncated = |detail: &str| Error::Truncated {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    };
    let found = read_be_u32(bytes, 0).ok_or_else(|| truncated("missing magic"))?;
    if found != magic {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: magic,
            found,
        });
    }
    (0..dims)
        .map(|d| {
            read_be_u32(bytes, 4 + 4 * d)
                .map(|v| v as usize)
                .ok_or_else(|| truncated("missing dimension sizes"))
        })
        .collect()
}

/// Loads an IDX image/label file pair (the MNIST distribution format).
///
/// Pixels are scaled to `[0, 1]` by `/255`. The class count is one more than
/// the largest label, and at least 2.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let images = read_file(images_path)?;
    let labels = read_file(labels_path)?;

    let dims = header(images_path, &images, IDX_IMAGES_MAGIC, 3)?;
    let (count, rows, cols) = (dims[0], dims[1], dims[2]);
    let label_dims = header(labels_path, &labels, IDX_LABELS_MAGIC, 1)?;
    let label_count = label_dims[0];
    if count != label_count {
        return Err(Error::CountMismatch {
            images: count,
            labels: label_count,
        });
    }

    let input_dim = rows * cols;
    let pixels = &images[16..];
    if pixels.len() < count * input_dim {
        return Err(Error::Truncated {
            path: images_path.to_path_buf(),
            detail: format!("{} pixel bytes, expected {}", pixels.len(), count * input_dim),
        });
    }
    let label_bytes = &labels[8..];
    if label_bytes.len() < count {
        return Err(Error::Truncated {
            path: labels_path.to_path_buf(),
            detail: format!("{} label bytes, expected {count}", label_bytes.len()),
        });
    }

    let features = pixels[..count * input_dim].iter().map(|&p| p as f32 / 255.0).collect();
    let labels: Vec<usize> = label_bytes[..count].iter().map(|&l| l as usize).collect();
    let num_classes = labels.iter().max().map_or(2, |&m| (m + 1).max(2));
    Dataset::new(features, labels, input_dim, num_classes)
}

/// Encodes an IDX3 image file.
pub fn encode_idx_images(pixels: &[u8], count: usize, rows: usize, cols: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGES_MAGIC, count as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

/// Encodes an IDX1 label file.
pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Isotropic Gaussian blobs, one per class, clipped to `[0, 1]`.
///
/// Class centers are fixed (independent of `seed`) and drawn from
/// `[0.2, 0.8]^input_dim`; `spread` is the per-coordinate standard deviation.
/// Samples are laid out class by class.
pub fn synth_blobs(
    num_classes: usize,
    samples_per_class: usize,
    input_dim: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if num_classes < 2 || samples_per_class == 0 || input_dim == 0 {
        return Err(Error::invalid(
            "synthetic blobs need at least 2 classes, 1 sample per class and 1 dimension",
        ));
    }
    if !(spread > 0.0 && spread.is_finite()) {
        return Err(Error::invalid(format!("spread must be positive, got {spread}")));
    }
    let mut center_rng = seed::rng(seed::mix(&[BLOB_CENTER_SEED, input_dim as u64]));
    let centers: Vec<f64> = (0..num_classes * input_dim)
        .map(|_| center_rng.random_range(0.2..0.8))
        .collect();

    let noise = Normal::new(0.0, spread).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = seed::rng(seed);
    let mut features = Vec::with_capacity(num_classes * samples_per_class * input_dim);
    let mut labels = Vec::with_capacity(num_classes * samples_per_class);
    for class in 0..num_classes {
        let center = &centers[class * input_dim..(class + 1) * input_dim];
        for _ in 0..samples_per_class {
            features.extend(
                center
                    .iter()
                    .map(|&c| (c + noise.sample(&mut rng)).clamp(0.0, 1.0) as f32),
            );
            labels.push(class);
        }
    }
    Dataset::new(features, labels, input_dim, num_classes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionScheme {
    Iid,
    Sharded { shards_per_user: usize },
}

/// Splits the dataset's indices across `num_users` owners.
///
/// - IID: a random permutation cut into near-equal runs; the first
///   `N mod U` users get one extra sample.
/// - Sharded: indices sorted by label (stable), cut into
///   `U · shards_per_user` contiguous shards (the last one absorbing any
///   remainder), and dealt out at random, `shards_per_user` per user.
pub fn partition(data: &Dataset, num_users: usize, scheme: PartitionScheme, seed: u64) -> Result<Vec<DataShard>> {
    let n = data.len();
    if num_users == 0 {
        return Err(Error::invalid("num_users must be at least 1"));
    }
    if num_users > n {
        return Err(Error::invalid(format!(
            "cannot split {n} samples across {num_users} users"
        )));
    }
    let mut rng = seed::rng(seed);
    match scheme {
        PartitionScheme::Iid => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let base = n / num_users;
            let extra = n % num_users;
            let mut start = 0;
            Ok((0..num_users)
                .map(|u| {
                    let size = base + usize::from(u < extra);
                    let shard = DataShard::new(u, order[start..start + size].to_vec());
                    start += size;
                    shard
                })
                .collect())
        }
        PartitionScheme::Sharded { shards_per_user } => {
            if shards_per_user == 0 {
                return Err(Error::invalid("shards_per_user must be at least 1"));
            }
            let num_shards = num_users * shards_per_user;
            if num_shards > n {
                return Err(Error::invalid(format!(
                    "cannot cut {n} samples into {num_shards} shards"
                )));
            }
            let mut sorted: Vec<usize> = (0..n).collect();
            sorted.sort_by_key(|&i| data.labels()[i]);
            let shard_size = n / num_shards;
            let bounds = |s: usize| {
                let end = if s + 1 == num_shards { n } else { (s + 1) * shard_size };
                s * shard_size..end
            };
            let mut deal: Vec<usize> = (0..num_shards).collect();
            deal.shuffle(&mut rng);
            Ok(deal
                .chunks(shards_per_user)
                .enumerate()
                .map(|(u, shards)| {
                    let indices = shards.iter().flat_map(|&s| sorted[bounds(s)].iter().copied()).collect();
                    DataShard::new(u, indices)
                })
                .collect())
        }
    }
}
