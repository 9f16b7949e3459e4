//! Dataset ingestion, batching, configuration and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod events;
pub mod idx;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TandemError};
use crate::net::InputShape;
use crate::tensor::DenseTensor;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::TrainConfig;
pub use events::{bin_events, Event, EventStream};
pub use idx::{load_idx, IdxFile};

/// `(x − mean) / std`, elementwise.
pub fn normalize(images: &DenseTensor, mean: f64, std: f64) -> Result<DenseTensor> {
    if !(std.is_finite() && std > 0.0) || !mean.is_finite() {
        return Err(TandemError::Parameter(format!(
            "normalization needs finite mean and std > 0, got mean={mean} std={std}"
        )));
    }
    images.map(|v| (v - mean) / std)
}

/// A seeded permutation of `0..n` cut into batches; the last may be short.
pub fn shuffle_batches(n: usize, batch_size: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(TandemError::Parameter("batch size must be ≥ 1".into()));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(idx.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Flattened samples with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub pixels: Vec<f64>,
    pub labels: Vec<u8>,
    pub features: usize,
}

impl Split {
    pub fn from_tensor(images: &DenseTensor, labels: Vec<u8>) -> Result<Self> {
        let n = images.shape().first().copied().unwrap_or(0);
        if n != labels.len() {
            return Err(TandemError::Data(format!(
                "{n} samples but {} labels",
                labels.len()
            )));
        }
        Ok(Self {
            features: images.len().checked_div(n).unwrap_or(0),
            pixels: images.data().to_vec(),
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn truncate(&mut self, n: usize) {
        if n < self.len() {
            self.labels.truncate(n);
            self.pixels.truncate(n * self.features);
        }
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.pixels[i * self.features..(i + 1) * self.features]
    }

    /// Gathers `indices` into a `[batch × features]` tensor and its labels.
    pub fn gather(&self, indices: &[usize]) -> (DenseTensor, Vec<usize>) {
        let mut data = Vec::with_capacity(indices.len() * self.features);
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        let labels = indices.iter().map(|&i| self.labels[i] as usize).collect();
        (
            DenseTensor::from_parts_unchecked(vec![indices.len(), self.features], data),
            labels,
        )
    }

    /// The first `n` samples, in order.
    pub fn head(&self, n: usize) -> (DenseTensor, Vec<usize>) {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.gather(&idx)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub shape: InputShape,
    pub train: Split,
    pub test: Split,
}

fn find(dir: &Path, stems: &[&str]) -> Result<std::path::PathBuf> {
    for stem in stems {
        for name in [stem.to_string(), stem.replace("-idx", ".idx")] {
            let p = dir.join(&name);
            if p.is_file() {
                return Ok(p);
            }
        }
    }
    Err(TandemError::Data(format!(
        "{} not found in {}",
        stems[0],
        dir.display()
    )))
}

/// Loads the four MNIST IDX files from `dir`.
pub fn load_mnist(dir: &Path) -> Result<Dataset> {
    let load = |img: &str, lab: &str| -> Result<(Split, InputShape)> {
        let (images, labels) = load_idx(&find(dir, &[img])?, &find(dir, &[lab])?)?;
        let shape = InputShape::new(1, images.shape()[1], images.shape()[2]);
        Ok((Split::from_tensor(&images, labels)?, shape))
    };
    let (train, shape) = load("train-images-idx3-ubyte", "train-labels-idx1-ubyte")?;
    let (test, test_shape) = load("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")?;
    if shape != test_shape {
        return Err(TandemError::Data("train and test images differ in size".into()));
    }
    Ok(Dataset { shape, train, test })
}
