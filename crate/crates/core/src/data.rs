//! Labelled datasets: IDX files (optionally gzipped), synthetic Gaussian
//! blobs, and epoch-keyed deterministic batching.

use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset<T: Scalar> {
    /// `N × features`, row-major per sample.
    pub inputs: Array2<T>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub sample_shape: Vec<usize>,
    pub split: Split,
    /// How raw values were mapped to `inputs`.
    pub normalization: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub count: usize,
    pub sample_shape: Vec<usize>,
    pub num_classes: usize,
    /// FNV-1a over input bit patterns followed by labels.
    pub checksum: u64,
}

impl<T: Scalar> LabeledDataset<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Rows and labels at `indices`, in that order.
    pub fn gather(&self, indices: &[usize]) -> (Array2<T>, Vec<usize>) {
        let x = self.inputs.select(Axis(0), indices);
        let y = indices.iter().map(|&i| self.labels[i]).collect();
        (x, y)
    }

    /// First `n` samples (or all, if fewer).
    pub fn head(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            inputs: self.inputs.slice(ndarray::s![..n, ..]).to_owned(),
            labels: self.labels[..n].to_vec(),
            ..self.clone()
        }
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn summary(&self) -> DatasetSummary {
        let mut h = Fnv::new();
        for v in self.inputs.iter() {
            h.write(&v.as_f64().to_bits().to_le_bytes());
        }
        for &l in &self.labels {
            h.write(&(l as u64).to_le_bytes());
        }
        DatasetSummary {
            count: self.len(),
            sample_shape: self.sample_shape.clone(),
            num_classes: self.num_classes,
            checksum: h.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.nrows() != self.labels.len() {
            return Err(Error::contract("input rows and label count differ"));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.num_classes) {
            return Err(Error::contract(format!(
                "label {bad} outside {} classes",
                self.num_classes
            )));
        }
        if self.inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset inputs"));
        }
        Ok(())
    }
}

struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| format_err(path, "gzip stream", e.to_string()))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn format_err(path: &Path, field: &'static str, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        field,
        reason: reason.into(),
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &Path, field: &'static str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| format_err(path, field, "file truncated inside header"))
}

/// Reads an IDX image/label pair. Pixels are divided by 255.
pub fn load_idx<T: Scalar>(images: &Path, labels: &Path) -> Result<LabeledDataset<T>> {
    let img = read_maybe_gz(images)?;
    let lab = read_maybe_gz(labels)?;

    let magic = be_u32(&img, 0, images, "magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(format_err(images, "magic", format!("expected 0x{IDX_IMAGES_MAGIC:08x}, found 0x{magic:08x}")));
    }
    let n = be_u32(&img, 4, images, "image count")? as usize;
    let rows = be_u32(&img, 8, images, "rows")? as usize;
    let cols = be_u32(&img, 12, images, "cols")? as usize;
    let pixels = &img[16..];
    if pixels.len() != n * rows * cols {
        return Err(format_err(
            images,
            "payload",
            format!("expected {} pixel bytes, found {}", n * rows * cols, pixels.len()),
        ));
    }

    let magic = be_u32(&lab, 0, labels, "magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(format_err(labels, "magic", format!("expected 0x{IDX_LABELS_MAGIC:08x}, found 0x{magic:08x}")));
    }
    let m = be_u32(&lab, 4, labels, "label count")? as usize;
    let label_bytes = &lab[8..];
    if label_bytes.len() != m {
        return Err(format_err(
            labels,
            "payload",
            format!("expected {m} label bytes, found {}", label_bytes.len()),
        ));
    }
    if m != n {
        return Err(format_err(labels, "label count", format!("{m} labels for {n} images")));
    }
    if n == 0 {
        return Err(format_err(images, "image count", "file holds no samples"));
    }

    let inputs = Array2::from_shape_fn((n, rows * cols), |(i, j)| {
        T::of(pixels[i * rows * cols + j] as f64 / 255.0)
    });
    let labels: Vec<usize> = label_bytes.iter().map(|&b| b as usize).collect();
    let num_classes = labels.iter().max().map_or(0, |&m| m + 1);
    Ok(LabeledDataset {
        inputs,
        labels,
        num_classes,
        sample_shape: vec![1, rows, cols],
        split: Split::Train,
        normalization: "x/255".to_string(),
    })
}

/// Writes an IDX image/label pair (uncompressed) from byte pixels.
pub fn write_idx(images: &Path, labels: &Path, rows: usize, cols: usize, pixels: &[u8], label_bytes: &[u8]) -> Result<()> {
    let n = label_bytes.len();
    if pixels.len() != n * rows * cols {
        return Err(Error::contract("pixel count does not match labels × rows × cols"));
    }
    let mut img = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend_from_slice(pixels);
    let mut lab = Vec::with_capacity(8 + n);
    for v in [IDX_LABELS_MAGIC, n as u32] {
        lab.extend_from_slice(&v.to_be_bytes());
    }
    lab.extend_from_slice(label_bytes);
    fs::write(images, img).map_err(|e| Error::io(images, e))?;
    fs::write(labels, lab).map_err(|e| Error::io(labels, e))?;
    Ok(())
}

/// Distance of class means from the origin in [`synth_gaussian_blobs`].
pub const BLOB_SCALE: f64 = 5.0;

/// Class mean used by [`synth_gaussian_blobs`]: class `c` sits at
/// `BLOB_SCALE·(1 + c/dims)` along axis `c mod dims`.
pub fn blob_mean(class: usize, dims: usize) -> Vec<f64> {
    let mut m = vec![0.0; dims];
    m[class % dims] = BLOB_SCALE * (1.0 + (class / dims) as f64);
    m
}

/// Unit-variance isotropic Gaussian clusters, `per_class` samples each,
/// stored class by class.
pub fn synth_gaussian_blobs<T: Scalar>(num_classes: usize, dims: usize, per_class: usize, seed: u64) -> Result<LabeledDataset<T>> {
    if num_classes == 0 || dims == 0 || per_class == 0 {
        return Err(Error::invalid("counts", "classes, dims and per_class must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let n = num_classes * per_class;
    let mut inputs = Array2::zeros((n, dims));
    let mut labels = Vec::with_capacity(n);
    for c in 0..num_classes {
        let mean = blob_mean(c, dims);
        for k in 0..per_class {
            let row = c * per_class + k;
            for (j, m) in mean.iter().enumerate() {
                inputs[[row, j]] = T::of(m + noise.sample(&mut rng));
            }
            labels.push(c);
        }
    }
    Ok(LabeledDataset {
        inputs,
        labels,
        num_classes,
        sample_shape: vec![dims],
        split: Split::Train,
        normalization: "none".to_string(),
    })
}

/// Sample indices for one epoch, shuffled by `(seed, epoch)`. The last batch
/// keeps the remainder.
pub fn batches(len: usize, batch_size: usize, seed: u64, epoch: usize) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch_size", "must be at least 1"));
    }
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    order.shuffle(&mut rng);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}
