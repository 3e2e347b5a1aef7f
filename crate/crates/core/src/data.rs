//! Synthetic three-class segmentation data, the binary tensor format and
//! dataset manifests.
//!
//! Every image is a smooth low-intensity background with two adjacent
//! elliptical structures: class 1 (larger, brighter) and class 2 (smaller,
//! dimmer), plus Gaussian pixel noise. Labels are the exact masks.
//!
//! Tensor files are `UQTB | ndim:u32 | dims:u32* | f32*` and label files
//! `UQLB | ndim:u32 | dims:u32* | u8*`, all little-endian.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{derived_rng, rng_from};
use crate::tensor::{LabelField, Tensor};

pub const TENSOR_MAGIC: [u8; 4] = *b"UQTB";
pub const LABEL_MAGIC: [u8; 4] = *b"UQLB";
pub const NUM_CLASSES: usize = 3;

/// One image `[1×H×W]` with its label field.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub image: Tensor,
    pub labels: LabelField,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub image_size: usize,
    pub num_images: usize,
    /// Semi-major axis of the class-1 ellipse as a fraction of the image size.
    pub shape_scale: (f64, f64),
    pub noise_level: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            num_images: 96,
            shape_scale: (0.18, 0.28),
            noise_level: 0.05,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 16 {
            return Err(Error::Validation(format!(
                "image_size must be >= 16, got {}",
                self.image_size
            )));
        }
        let (lo, hi) = self.shape_scale;
        if !(lo > 0.0 && lo <= hi && hi < 0.45) {
            return Err(Error::Validation(format!(
                "shape_scale must satisfy 0 < lo <= hi < 0.45, got ({lo}, {hi})"
            )));
        }
        if !(self.noise_level >= 0.0) {
            return Err(Error::Validation("noise_level must be >= 0".into()));
        }
        if self.num_images == 0 {
            return Err(Error::Validation("num_images must be >= 1".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(&json))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn quantize(v: f64) -> f64 {
    v as f32 as f64
}

fn generate_one(config: &SynthConfig, index: usize) -> Example {
    let size = config.image_size;
    let s = size as f64;
    let mut rng = derived_rng(config.seed, "synth", index as u64);
    let noise = Normal::new(0.0, config.noise_level.max(1e-12)).expect("finite std");
    loop {
        let fx = rng.random_range(0.5..2.0) * std::f64::consts::PI / s;
        let fy = rng.random_range(0.5..2.0) * std::f64::consts::PI / s;
        let (px, py) = (rng.random_range(0.0..6.3), rng.random_range(0.0..6.3));
        let bg_level = rng.random_range(0.12..0.22);

        let (lo, hi) = config.shape_scale;
        let a1 = rng.random_range(lo..=hi) * s;
        let b1 = a1 * rng.random_range(0.55..0.75);
        let a2 = a1 * rng.random_range(0.65..0.8);
        let b2 = b1 * rng.random_range(0.8..1.0);
        let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let (ux, uy) = (angle.cos(), angle.sin());
        let cx = s / 2.0 + rng.random_range(-0.12..0.12) * s;
        let cy = s / 2.0 + rng.random_range(-0.12..0.12) * s;
        // Centres placed so the ellipses touch along the major axis.
        let (c1x, c1y) = (cx - 0.45 * a1 * ux, cy - 0.45 * a1 * uy);
        let (c2x, c2y) = (cx + 0.9 * a2 * ux, cy + 0.9 * a2 * uy);
        let int1 = rng.random_range(0.8..0.9);
        let int2 = rng.random_range(0.5..0.6);

        let inside = |x: f64, y: f64, ccx: f64, ccy: f64, a: f64, b: f64| {
            let (dx, dy) = (x - ccx, y - ccy);
            let along = dx * ux + dy * uy;
            let across = -dx * uy + dy * ux;
            (along / a).powi(2) + (across / b).powi(2) <= 1.0
        };

        let mut pixels = Vec::with_capacity(size * size);
        let mut labels = Vec::with_capacity(size * size);
        for yi in 0..size {
            for xi in 0..size {
                let (x, y) = (xi as f64 + 0.5, yi as f64 + 0.5);
                let (label, base) = if inside(x, y, c2x, c2y, a2, b2) {
                    (2u8, int2)
                } else if inside(x, y, c1x, c1y, a1, b1) {
                    (1u8, int1)
                } else {
                    (0u8, bg_level + 0.08 * (fx * x + px).sin() * (fy * y + py).cos())
                };
                let v = if config.noise_level > 0.0 {
                    base + noise.sample(&mut rng)
                } else {
                    base
                };
                pixels.push(quantize(v));
                labels.push(label);
            }
        }
        if labels.contains(&1) && labels.contains(&2) {
            return Example {
                image: Tensor::new(vec![1, size, size], pixels).expect("image shape"),
                labels: LabelField::new(size, size, labels).expect("label shape"),
            };
        }
    }
}

/// Generates `config.num_images` examples; pixel values are already at f32
/// precision so saving and reloading is lossless.
pub fn generate(config: &SynthConfig) -> Result<Vec<Example>> {
    config.validate()?;
    Ok((0..config.num_images).map(|i| generate_one(config, i)).collect())
}

/// Per-image z-score: zero mean, unit (population) standard deviation.
/// A constant image maps to zeros.
pub fn standardize(image: &Tensor) -> Tensor {
    let n = image.len() as f64;
    let mean = image.data().iter().sum::<f64>() / n;
    let sd = (image.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if sd < 1e-12 {
        return image.map(|_| 0.0);
    }
    image.map(|v| (v - mean) / sd)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Val, SplitName::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        }
    }
}

impl std::str::FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SplitName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown split `{s}`; expected train, val or test")))
    }
}

/// Index sets of a seeded train/val/test split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitIndices {
    pub fn get(&self, name: SplitName) -> &[usize] {
        match name {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }
}

/// Seeded shuffle followed by a contiguous split.
pub fn split(n: usize, fractions: (f64, f64, f64), seed: u64) -> Result<SplitIndices> {
    let (a, b, c) = fractions;
    if [a, b, c].iter().any(|f| !(*f >= 0.0)) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::Validation(format!(
            "split fractions must be non-negative and sum to 1, got {fractions:?}"
        )));
    }
    let n_train = (a * n as f64).round() as usize;
    let n_val = ((b * n as f64).round() as usize).min(n - n_train.min(n));
    if n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return Err(Error::Validation(format!(
            "split {fractions:?} of {n} items leaves an empty part"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_from(seed));
    Ok(SplitIndices {
        train: idx[..n_train].to_vec(),
        val: idx[n_train..n_train + n_val].to_vec(),
        test: idx[n_train + n_val..].to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image: String,
    pub label: String,
}

/// Paths are relative to the dataset root directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub split: SplitName,
    pub entries: Vec<ManifestEntry>,
    pub config_hash: String,
}

pub fn manifest_path(root: &Path, split: SplitName) -> PathBuf {
    root.join(format!("manifest_{}.json", split.as_str()))
}

/// Writes images, labels and the three split manifests under `root`.
pub fn write_dataset(
    root: &Path,
    config: &SynthConfig,
    examples: &[Example],
    splits: &SplitIndices,
) -> Result<Vec<DatasetManifest>> {
    for sub in ["images", "labels"] {
        let dir = root.join(sub);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    for (i, ex) in examples.iter().enumerate() {
        save_tensor(&root.join(image_rel(i)), &ex.image)?;
        save_labels(&root.join(label_rel(i)), &ex.labels)?;
    }
    let hash = config.hash();
    let mut manifests = Vec::new();
    for name in SplitName::ALL {
        let manifest = DatasetManifest {
            split: name,
            entries: splits
                .get(name)
                .iter()
                .map(|&i| ManifestEntry {
                    image: image_rel(i),
                    label: label_rel(i),
                })
                .collect(),
            config_hash: hash.clone(),
        };
        write_json(&manifest_path(root, name), &manifest)?;
        manifests.push(manifest);
    }
    write_json(&root.join("synth_config.json"), config)?;
    Ok(manifests)
}

fn image_rel(i: usize) -> String {
    format!("images/img_{i:04}.bin")
}

fn label_rel(i: usize) -> String {
    format!("labels/img_{i:04}.bin")
}

/// Loads every example listed in the `split` manifest under `root`.
pub fn load_split(root: &Path, split: SplitName) -> Result<Vec<Example>> {
    let manifest: DatasetManifest = read_json(&manifest_path(root, split))?;
    manifest
        .entries
        .iter()
        .map(|e| {
            let image = load_tensor(&root.join(&e.image))?;
            let labels = load_labels(&root.join(&e.label))?;
            labels.check_classes(NUM_CLASSES)?;
            Ok(Example { image, labels })
        })
        .collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn encode_header(magic: [u8; 4], shape: &[usize], path: &Path) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + 4 * shape.len());
    out.extend_from_slice(&magic);
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        let d = u32::try_from(d).map_err(|_| Error::DimOverflow {
            path: path.to_path_buf(),
            message: format!("dimension {d} does not fit in u32"),
        })?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    Ok(out)
}

/// Parses a header and returns `(shape, payload)` with the payload length
/// already verified against `elem_size`.
fn decode<'a>(bytes: &'a [u8], magic: [u8; 4], elem_size: usize, path: &Path) -> Result<(Vec<usize>, &'a [u8])> {
    let truncated = |expected: u64| Error::Truncated {
        path: path.to_path_buf(),
        expected,
        actual: bytes.len() as u64,
    };
    if bytes.len() < 8 {
        return Err(truncated(8));
    }
    let found: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if found != magic {
        return Err(Error::MagicMismatch {
            path: path.to_path_buf(),
            expected: magic,
            found,
        });
    }
    let ndim = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    if ndim == 0 || ndim > 16 {
        return Err(Error::DimOverflow {
            path: path.to_path_buf(),
            message: format!("ndim {ndim} outside 1..=16"),
        });
    }
    let header = 8 + 4 * ndim;
    if bytes.len() < header {
        return Err(truncated(header as u64));
    }
    let shape: Vec<usize> = bytes[8..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect();
    let count = shape
        .iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(d as u64))
        .and_then(|c| c.checked_mul(elem_size as u64))
        .and_then(|c| c.checked_add(header as u64))
        .ok_or_else(|| Error::DimOverflow {
            path: path.to_path_buf(),
            message: format!("payload size of shape {shape:?} overflows"),
        })?;
    if shape.contains(&0) {
        return Err(Error::DimOverflow {
            path: path.to_path_buf(),
            message: format!("zero-sized dimension in {shape:?}"),
        });
    }
    if (bytes.len() as u64) < count {
        return Err(truncated(count));
    }
    if (bytes.len() as u64) > count {
        return Err(Error::Validation(format!(
            "{}: {} trailing bytes after payload",
            path.display(),
            bytes.len() as u64 - count
        )));
    }
    Ok((shape, &bytes[header..]))
}

pub fn encode_tensor(t: &Tensor, path: &Path) -> Result<Vec<u8>> {
    let mut out = encode_header(TENSOR_MAGIC, t.shape(), path)?;
    out.reserve(4 * t.len());
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_tensor(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let (shape, payload) = decode(bytes, TENSOR_MAGIC, 4, path)?;
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Tensor::new(shape, data)
}

/// Stores `t` as little-endian f32 (one rounding step).
pub fn save_tensor(path: &Path, t: &Tensor) -> Result<()> {
    let bytes = encode_tensor(t, path)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes, path)
}

pub fn save_labels(path: &Path, labels: &LabelField) -> Result<()> {
    let mut out = encode_header(LABEL_MAGIC, &[labels.height, labels.width], path)?;
    out.extend_from_slice(&labels.labels);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_labels(path: &Path) -> Result<LabelField> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (shape, payload) = decode(&bytes, LABEL_MAGIC, 1, path)?;
    match shape[..] {
        [h, w] => LabelField::new(h, w, payload.to_vec()),
        _ => Err(Error::Dimension(format!(
            "{}: label file must be 2-D, got {shape:?}",
            path.display()
        ))),
    }
}
