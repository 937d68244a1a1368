//! CIFAR-10 binary records, augmentation and a synthetic stand-in dataset.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

pub const IMAGE_SIZE: usize = 32;
pub const CHANNELS: usize = 3;
pub const RECORD_BYTES: usize = 1 + CHANNELS * IMAGE_SIZE * IMAGE_SIZE;
pub const NUM_CLASSES: usize = 10;
pub const CIFAR_MEAN: [f64; 3] = [0.4914, 0.4822, 0.4465];
pub const CIFAR_STD: [f64; 3] = [0.2470, 0.2435, 0.2616];
pub const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const TEST_FILE: &str = "test_batch.bin";

/// Pixels padded on each side before a random crop.
pub const AUGMENT_PAD: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    /// `(n, 3, h, w)`, normalized.
    pub images: Tensor4,
    pub labels: Vec<usize>,
}

impl LabeledBatch {
    pub fn new(images: Tensor4, labels: Vec<usize>) -> Result<Self> {
        crate::error::check_dim("LabeledBatch", "label count", images.batch(), labels.len())?;
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= NUM_CLASSES) {
            return Err(Error::LabelOutOfRange { index, label });
        }
        Ok(Self { images, labels })
    }

    pub fn empty() -> Self {
        Self {
            images: Tensor4::zeros([0, CHANNELS, IMAGE_SIZE, IMAGE_SIZE]),
            labels: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Images at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let [_, c, h, w] = self.images.dims();
        let item = self.images.item_len();
        let mut data = Vec::with_capacity(indices.len() * item);
        for &i in indices {
            data.extend_from_slice(self.images.item(i));
        }
        Self {
            images: Tensor4::from_vec([indices.len(), c, h, w], data).expect("item layout"),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// The first `n` images (all of them if fewer).
    pub fn take(&self, n: usize) -> Self {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx)
    }

    pub fn concat(parts: &[LabeledBatch]) -> Result<Self> {
        let Some(first) = parts.first() else {
            return Ok(Self::empty());
        };
        let [_, c, h, w] = first.images.dims();
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for p in parts {
            let [_, pc, ph, pw] = p.images.dims();
            if (pc, ph, pw) != (c, h, w) {
                return Err(Error::InvalidArgument(format!(
                    "cannot concatenate {pc}x{ph}x{pw} images onto {c}x{h}x{w}"
                )));
            }
            data.extend_from_slice(p.images.data());
            labels.extend_from_slice(&p.labels);
        }
        Self::new(Tensor4::from_vec([labels.len(), c, h, w], data)?, labels)
    }
}

/// Parse concatenated CIFAR-10 binary records.
pub fn decode_cifar10(bytes: &[u8]) -> Result<LabeledBatch> {
    if !bytes.len().is_multiple_of(RECORD_BYTES) {
        return Err(Error::Format {
            offset: (bytes.len() - bytes.len() % RECORD_BYTES) as u64,
            message: format!("file size {} is not a multiple of {RECORD_BYTES}", bytes.len()),
        });
    }
    let n = bytes.len() / RECORD_BYTES;
    let plane = IMAGE_SIZE * IMAGE_SIZE;
    let mut data = Vec::with_capacity(n * CHANNELS * plane);
    let mut labels = Vec::with_capacity(n);
    for (index, record) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        let label = record[0] as usize;
        if label >= NUM_CLASSES {
            return Err(Error::LabelOutOfRange { index, label });
        }
        labels.push(label);
        for (c, pixels) in record[1..].chunks_exact(plane).enumerate() {
            data.extend(
                pixels
                    .iter()
                    .map(|&p| (p as f64 / 255.0 - CIFAR_MEAN[c]) / CIFAR_STD[c]),
            );
        }
    }
    LabeledBatch::new(Tensor4::from_vec([n, CHANNELS, IMAGE_SIZE, IMAGE_SIZE], data)?, labels)
}

/// Inverse of [`decode_cifar10`]: undo the normalization and quantize to bytes.
pub fn encode_cifar10(batch: &LabeledBatch) -> Result<Vec<u8>> {
    let [n, c, h, w] = batch.images.dims();
    if (c, h, w) != (CHANNELS, IMAGE_SIZE, IMAGE_SIZE) {
        return Err(Error::InvalidArgument(format!(
            "CIFAR records hold 3x32x32 images, not {c}x{h}x{w}"
        )));
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(n * RECORD_BYTES);
    for i in 0..n {
        out.push(batch.labels[i] as u8);
        for (j, &v) in batch.images.item(i).iter().enumerate() {
            let ch = j / plane;
            let p = ((v * CIFAR_STD[ch] + CIFAR_MEAN[ch]) * 255.0).round().clamp(0.0, 255.0);
            out.push(p as u8);
        }
    }
    Ok(out)
}

pub fn load_cifar10(path: impl AsRef<Path>) -> Result<LabeledBatch> {
    decode_cifar10(&fs::read(path)?)
}

/// Training (all five batches) or test split from a CIFAR-10 binary directory.
pub fn load_cifar10_split(dir: impl AsRef<Path>, train: bool) -> Result<LabeledBatch> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("CIFAR-10 directory {} not found", dir.display()),
        )));
    }
    if train {
        let parts = TRAIN_FILES
            .iter()
            .map(|f| load_cifar10(dir.join(f)))
            .collect::<Result<Vec<_>>>()?;
        LabeledBatch::concat(&parts)
    } else {
        load_cifar10(dir.join(TEST_FILE))
    }
}

/// Crop offsets `(dy, dx)` in `0..=2 * AUGMENT_PAD` and the flip decision for one image.
pub fn augment_draw(seed: u64, image_index: u64) -> (usize, usize, bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(image_index);
    let dy = rng.random_range(0..=2 * AUGMENT_PAD);
    let dx = rng.random_range(0..=2 * AUGMENT_PAD);
    (dy, dx, rng.random_bool(0.5))
}

/// Reflect-pad by 4, crop back to the original size at a random offset, flip horizontally
/// with probability one half. Image `i` draws from stream `i` of a generator keyed by `seed`.
pub fn augment(batch: &LabeledBatch, seed: u64, enabled: bool) -> LabeledBatch {
    if !enabled {
        return batch.clone();
    }
    let [n, c, h, w] = batch.images.dims();
    let mut out = Tensor4::zeros([n, c, h, w]);
    let reflect = |i: isize, len: usize| -> usize {
        let len = len as isize;
        let r = if i < 0 {
            -i
        } else if i >= len {
            2 * (len - 1) - i
        } else {
            i
        };
        r.clamp(0, len - 1) as usize
    };
    for i in 0..n {
        let (dy, dx, flip) = augment_draw(seed, i as u64);
        let src = batch.images.item(i);
        let dst_start = i * c * h * w;
        let dst = &mut out.data_mut()[dst_start..dst_start + c * h * w];
        for ch in 0..c {
            for y in 0..h {
                let sy = reflect(y as isize + dy as isize - AUGMENT_PAD as isize, h);
                for x in 0..w {
                    let xx = if flip { w - 1 - x } else { x };
                    let sx = reflect(xx as isize + dx as isize - AUGMENT_PAD as isize, w);
                    dst[(ch * h + y) * w + x] = src[(ch * h + sy) * w + sx];
                }
            }
        }
    }
    LabeledBatch {
        images: out,
        labels: batch.labels.clone(),
    }
}

/// Class prototypes shared by every call of [`synthetic_blobs`].
const PROTOTYPE_SEED: u64 = 0x5EED_B10B;
const PROTOTYPE_GRID: usize = 4;
const BLOB_NOISE: f64 = 1.0;

/// `n` images of side `size`, label `i % 10` for image `i`. Each class is a smooth random
/// pattern (a 4x4 grid per channel, upsampled) plus unit Gaussian pixel noise drawn from
/// `seed`. Prototypes do not depend on `seed`, so train and test sets share classes.
pub fn synthetic_blobs_sized(n: usize, size: usize, seed: u64) -> LabeledBatch {
    let mut proto_rng = ChaCha8Rng::seed_from_u64(PROTOTYPE_SEED);
    let coarse: Vec<f64> = (0..NUM_CLASSES * CHANNELS * PROTOTYPE_GRID * PROTOTYPE_GRID)
        .map(|_| StandardNormal.sample(&mut proto_rng))
        .collect();
    let cell = size.div_ceil(PROTOTYPE_GRID).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let item = CHANNELS * size * size;
    let mut data = Vec::with_capacity(n * item);
    let labels: Vec<usize> = (0..n).map(|i| i % NUM_CLASSES).collect();
    for &label in &labels {
        for ch in 0..CHANNELS {
            for y in 0..size {
                for x in 0..size {
                    let g = ((label * CHANNELS + ch) * PROTOTYPE_GRID + (y / cell).min(PROTOTYPE_GRID - 1))
                        * PROTOTYPE_GRID
                        + (x / cell).min(PROTOTYPE_GRID - 1);
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    data.push(coarse[g] + BLOB_NOISE * noise);
                }
            }
        }
    }
    LabeledBatch {
        images: Tensor4::from_vec([n, CHANNELS, size, size], data).expect("sizes agree"),
        labels,
    }
}

/// 32x32 synthetic classification data.
pub fn synthetic_blobs(n: usize, seed: u64) -> LabeledBatch {
    synthetic_blobs_sized(n, IMAGE_SIZE, seed)
}

/// Deterministic permutation of `0..n`.
pub fn shuffled_indices(n: usize, seed: u64, stream: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx
}
