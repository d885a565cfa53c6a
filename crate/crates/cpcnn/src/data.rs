//! Dataset handling: CIFAR-10 binary batches, a synthetic frequency-pattern
//! benchmark, and batch assembly with optional horizontal flips.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::Seed;
use crate::tensor::Tensor;

/// Environment variable naming the dataset root directory.
pub const DATA_DIR_ENV: &str = "CPCNN_DATA_DIR";

/// Per-channel normalization constants for CIFAR-10 (mean and standard
/// deviation of the training split in [0,1] scale).
pub const CIFAR_MEAN: [f32; 3] = [0.4914, 0.4822, 0.4465];
pub const CIFAR_STD: [f32; 3] = [0.2470, 0.2435, 0.2616];

const CIFAR_SIZE: u32 = 32;
const CIFAR_CLASSES: u32 = 10;
const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;
const CIFAR_TRAIN_FILES: [&str; 5] =
    ["data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin", "data_batch_5.bin"];
const CIFAR_TEST_FILE: &str = "test_batch.bin";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Image storage. Byte-backed images are normalized on batch assembly;
/// float-backed images (the synthetic benchmark) are used as stored.
#[derive(Debug, Clone)]
enum Pixels {
    Bytes { data: Vec<u8>, mean: [f32; 3], std: [f32; 3] },
    Floats(Vec<f32>),
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pixels: Pixels,
    labels: Vec<u32>,
    pub image_size: u32,
    pub num_classes: u32,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, i: usize) -> u32 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    fn pixels_per_image(&self) -> usize {
        3 * (self.image_size as usize) * (self.image_size as usize)
    }

    /// Gathers the given samples into an NCHW tensor, mirroring sample `b`
    /// horizontally where `flip[b]` is set. Byte-backed images are converted
    /// to [0,1] scale and normalized per channel here.
    pub fn batch(&self, indices: &[usize], flip: &[bool]) -> Result<Tensor<f32>> {
        if !flip.is_empty() && flip.len() != indices.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} flip flags for {} samples",
                flip.len(),
                indices.len()
            )));
        }
        let s = self.image_size as usize;
        let per = self.pixels_per_image();
        let mut out = vec![0.0f32; indices.len() * per];
        for (b, &i) in indices.iter().enumerate() {
            if i >= self.len() {
                return Err(Error::InvalidParameter(format!(
                    "sample index {i} out of range for dataset of {}",
                    self.len()
                )));
            }
            let mirrored = !flip.is_empty() && flip[b];
            let dst = &mut out[b * per..(b + 1) * per];
            for c in 0..3 {
                for h in 0..s {
                    for w in 0..s {
                        let src_w = if mirrored { s - 1 - w } else { w };
                        let src = i * per + c * s * s + h * s + src_w;
                        dst[c * s * s + h * s + w] = match &self.pixels {
                            Pixels::Bytes { data, mean, std } => {
                                (data[src] as f32 / 255.0 - mean[c]) / std[c]
                            }
                            Pixels::Floats(data) => data[src],
                        };
                    }
                }
            }
        }
        Tensor::new(vec![indices.len(), 3, s, s], out)
    }

    /// Like [`Dataset::batch`], but nearest-neighbor resamples each image to
    /// `target` pixels per side when that differs from the stored size.
    /// Flips mirror the source image before resampling.
    pub fn batch_resized(
        &self,
        indices: &[usize],
        flip: &[bool],
        target: u32,
    ) -> Result<Tensor<f32>> {
        if target == self.image_size {
            return self.batch(indices, flip);
        }
        if target == 0 {
            return Err(Error::InvalidParameter("target image size must be positive".into()));
        }
        if !flip.is_empty() && flip.len() != indices.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} flip flags for {} samples",
                flip.len(),
                indices.len()
            )));
        }
        let s = self.image_size as usize;
        let t = target as usize;
        let per_src = self.pixels_per_image();
        let per_dst = 3 * t * t;
        let mut out = vec![0.0f32; indices.len() * per_dst];
        for (b, &i) in indices.iter().enumerate() {
            if i >= self.len() {
                return Err(Error::InvalidParameter(format!(
                    "sample index {i} out of range for dataset of {}",
                    self.len()
                )));
            }
            let mirrored = !flip.is_empty() && flip[b];
            let dst = &mut out[b * per_dst..(b + 1) * per_dst];
            for c in 0..3 {
                for h in 0..t {
                    let src_h = h * s / t;
                    for w in 0..t {
                        let mut src_w = w * s / t;
                        if mirrored {
                            src_w = s - 1 - src_w;
                        }
                        let src = i * per_src + c * s * s + src_h * s + src_w;
                        dst[c * t * t + h * t + w] = match &self.pixels {
                            Pixels::Bytes { data, mean, std } => {
                                (data[src] as f32 / 255.0 - mean[c]) / std[c]
                            }
                            Pixels::Floats(data) => data[src],
                        };
                    }
                }
            }
        }
        Tensor::new(vec![indices.len(), 3, t, t], out)
    }

    /// New dataset containing the selected samples, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let per = self.pixels_per_image();
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::InvalidParameter(format!(
                    "sample index {i} out of range for dataset of {}",
                    self.len()
                )));
            }
            labels.push(self.labels[i]);
        }
        let pixels = match &self.pixels {
            Pixels::Bytes { data, mean, std } => {
                let mut sel = Vec::with_capacity(indices.len() * per);
                for &i in indices {
                    sel.extend_from_slice(&data[i * per..(i + 1) * per]);
                }
                Pixels::Bytes { data: sel, mean: *mean, std: *std }
            }
            Pixels::Floats(data) => {
                let mut sel = Vec::with_capacity(indices.len() * per);
                for &i in indices {
                    sel.extend_from_slice(&data[i * per..(i + 1) * per]);
                }
                Pixels::Floats(sel)
            }
        };
        Ok(Dataset {
            pixels,
            labels,
            image_size: self.image_size,
            num_classes: self.num_classes,
        })
    }
}

/// Dataset root resolution: an explicit path wins, then the environment
/// variable, then `data` under the working directory.
pub fn resolve_data_dir(explicit: Option<&Path>) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    if let Ok(v) = std::env::var(DATA_DIR_ENV) {
        if !v.is_empty() {
            return PathBuf::from(v);
        }
    }
    PathBuf::from("data")
}

/// Locates a directory holding the CIFAR-10 binary batches. The resolved
/// data root is checked first, both directly and with the conventional
/// `cifar-10-batches-bin` subdirectory; without an explicit path or
/// environment override, `data` in parent directories is also tried so tests
/// run from a crate subdirectory still find a workspace-level dataset.
pub fn find_cifar10(explicit: Option<&Path>) -> Option<PathBuf> {
    let mut bases = vec![resolve_data_dir(explicit)];
    if explicit.is_none() && std::env::var(DATA_DIR_ENV).map_or(true, |v| v.is_empty()) {
        bases.push(PathBuf::from("../data"));
        bases.push(PathBuf::from("../../data"));
    }
    for base in bases {
        for cand in [base.clone(), base.join("cifar-10-batches-bin")] {
            if cand.join(CIFAR_TEST_FILE).is_file() {
                return Some(cand);
            }
        }
    }
    None
}

fn ingest(file: &Path, offset: u64, message: impl Into<String>) -> Error {
    Error::Ingestion { file: file.to_path_buf(), offset, message: message.into() }
}

fn load_cifar_file(path: &Path, pixels: &mut Vec<u8>, labels: &mut Vec<u32>) -> Result<()> {
    let bytes = fs::read(path).map_err(|e| ingest(path, 0, format!("cannot read: {e}")))?;
    if bytes.len() % CIFAR_RECORD != 0 {
        return Err(ingest(
            path,
            bytes.len() as u64,
            format!("file length {} is not a multiple of the {CIFAR_RECORD}-byte record", bytes.len()),
        ));
    }
    for (r, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        let label = rec[0];
        if label as u32 >= CIFAR_CLASSES {
            return Err(ingest(
                path,
                (r * CIFAR_RECORD) as u64,
                format!("label byte {label} exceeds class count {CIFAR_CLASSES}"),
            ));
        }
        labels.push(label as u32);
        pixels.extend_from_slice(&rec[1..]);
    }
    Ok(())
}

/// Loads the CIFAR-10 binary batches found under `dir`, normalizing with the
/// standard per-channel constants at batch-assembly time.
pub fn load_cifar10(dir: &Path, split: Split) -> Result<Dataset> {
    let files: &[&str] = match split {
        Split::Train => &CIFAR_TRAIN_FILES,
        Split::Test => std::slice::from_ref(&CIFAR_TEST_FILE),
    };
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for name in files {
        let path = dir.join(name);
        if !path.exists() {
            return Err(ingest(
                &path,
                0,
                format!("missing dataset file (set {DATA_DIR_ENV} or pass a data directory)"),
            ));
        }
        load_cifar_file(&path, &mut pixels, &mut labels)?;
    }
    Ok(Dataset {
        pixels: Pixels::Bytes { data: pixels, mean: CIFAR_MEAN, std: CIFAR_STD },
        labels,
        image_size: CIFAR_SIZE,
        num_classes: CIFAR_CLASSES,
    })
}

/// Synthetic oriented-grating benchmark. Class `k` is a sinusoidal stripe
/// pattern with its own orientation and spatial frequency; each sample draws
/// a random phase and additive Gaussian noise, and channels carry the pattern
/// at different gains so the task needs spatial filters, not a pixel lookup.
/// Labels interleave `0, 1, ..., num_classes-1`, so the set is balanced.
pub fn synth_dataset(
    num_samples: usize,
    num_classes: u32,
    image_size: u32,
    noise: f64,
    seed: Seed,
) -> Result<Dataset> {
    if num_classes < 2 {
        return Err(Error::InvalidParameter("need at least two classes".into()));
    }
    if image_size < 4 {
        return Err(Error::InvalidParameter("image size must be at least 4".into()));
    }
    if noise < 0.0 || noise.is_nan() {
        return Err(Error::InvalidParameter(format!("noise {noise} must be non-negative")));
    }
    let s = image_size as usize;
    let per = 3 * s * s;
    let mut rng = seed.rng();
    let normal = Normal::new(0.0, noise.max(f64::MIN_POSITIVE)).unwrap();
    let gains = [1.0f64, 0.8, 0.6];
    let mut data = vec![0.0f32; num_samples * per];
    let mut labels = Vec::with_capacity(num_samples);
    for i in 0..num_samples {
        let class = (i as u32) % num_classes;
        labels.push(class);
        let theta = std::f64::consts::PI * class as f64 / num_classes as f64;
        let freq = 2.0 + class as f64;
        let (dir_w, dir_h) = (theta.cos(), theta.sin());
        let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let img = &mut data[i * per..(i + 1) * per];
        for h in 0..s {
            for w in 0..s {
                let t = (dir_w * w as f64 + dir_h * h as f64) / s as f64;
                let base = (std::f64::consts::TAU * freq * t + phase).sin();
                for c in 0..3 {
                    let v = gains[c] * base
                        + if noise > 0.0 { normal.sample(&mut rng) } else { 0.0 };
                    img[c * s * s + h * s + w] = v as f32;
                }
            }
        }
    }
    Ok(Dataset {
        pixels: Pixels::Floats(data),
        labels,
        image_size,
        num_classes,
    })
}
