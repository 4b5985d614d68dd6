//! Dataset loading: IDX binaries (optionally gzipped) and synthetic blobs.

mod blobs;

pub use blobs::make_gaussian_blobs;

use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use thiserror::Error;

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;
pub const MNIST_CLASSES: usize = 10;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IngestError {
    #[error("bad magic number: expected {expected:#010x}, found {actual:#010x}")]
    Magic { expected: u32, actual: u32 },
    #[error("truncated input: needed {needed} bytes at offset {offset}, only {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("{extra} trailing bytes after payload ending at offset {offset}")]
    TrailingBytes { offset: usize, extra: usize },
    #[error("declared size {0} overflows")]
    Overflow(String),
    #[error("label {label} at index {index} is not below {classes}")]
    LabelRange {
        index: usize,
        label: u8,
        classes: usize,
    },
    #[error("gzip stream: {0}")]
    Gzip(String),
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

/// Immutable labelled dataset; features are row-major with entries in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetHandle {
    pub samples: usize,
    pub feature_dim: usize,
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl DatasetHandle {
    pub fn new(
        samples: usize,
        feature_dim: usize,
        features: Vec<f64>,
        labels: Vec<usize>,
        classes: usize,
    ) -> Result<Self, IngestError> {
        if features.len() != samples * feature_dim {
            return Err(IngestError::Invalid(format!(
                "{} feature entries for {samples}×{feature_dim}",
                features.len()
            )));
        }
        if labels.len() != samples {
            return Err(IngestError::Invalid(format!(
                "{} labels for {samples} samples",
                labels.len()
            )));
        }
        if let Some(v) = features.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(IngestError::Invalid(format!("feature {v} outside [0, 1]")));
        }
        if let Some(l) = labels.iter().find(|&&l| l >= classes) {
            return Err(IngestError::Invalid(format!("label {l} not below {classes}")));
        }
        Ok(DatasetHandle {
            samples,
            feature_dim,
            features,
            labels,
            classes,
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    /// First `k` samples (all of them if `k >= samples`).
    pub fn truncate(mut self, k: usize) -> Self {
        if k < self.samples {
            self.samples = k;
            self.features.truncate(k * self.feature_dim);
            self.labels.truncate(k);
        }
        self
    }
}

/// Parsed IDX image file. Pixels keep the raw bytes scaled by `1/255`.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<f64>,
}

impl IdxImages {
    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.rows * self.cols;
        &self.pixels[i * w..(i + 1) * w]
    }

    /// Serialize back to (uncompressed) IDX bytes.
    pub fn to_idx_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.pixels.len());
        for v in [IDX_IMAGE_MAGIC, self.count as u32, self.rows as u32, self.cols as u32] {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out.extend(self.pixels.iter().map(|p| (p * 255.0).round() as u8));
        out
    }
}

pub fn labels_to_idx_bytes(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, needed: usize) -> Result<&'a [u8], IngestError> {
        let available = self.bytes.len() - self.offset;
        if needed > available {
            return Err(IngestError::Truncated {
                offset: self.offset,
                needed,
                available,
            });
        }
        let slice = &self.bytes[self.offset..self.offset + needed];
        self.offset += needed;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32, IngestError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn finish(&self) -> Result<(), IngestError> {
        let extra = self.bytes.len() - self.offset;
        if extra > 0 {
            return Err(IngestError::TrailingBytes {
                offset: self.offset,
                extra,
            });
        }
        Ok(())
    }
}

fn expect_magic(cursor: &mut Cursor, expected: u32) -> Result<(), IngestError> {
    let actual = cursor.u32()?;
    if actual != expected {
        return Err(IngestError::Magic { expected, actual });
    }
    Ok(())
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages, IngestError> {
    let mut c = Cursor { bytes, offset: 0 };
    expect_magic(&mut c, IDX_IMAGE_MAGIC)?;
    let (count, rows, cols) = (c.u32()? as usize, c.u32()? as usize, c.u32()? as usize);
    let total = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| IngestError::Overflow(format!("{count}×{rows}×{cols}")))?;
    let payload = c.take(total)?;
    c.finish()?;
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: payload.iter().map(|&b| b as f64 / 255.0).collect(),
    })
}

/// Labels with the MNIST range check (`≤ 9`).
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>, IngestError> {
    parse_idx_labels_with_classes(bytes, MNIST_CLASSES)
}

pub fn parse_idx_labels_with_classes(bytes: &[u8], classes: usize) -> Result<Vec<u8>, IngestError> {
    let mut c = Cursor { bytes, offset: 0 };
    expect_magic(&mut c, IDX_LABEL_MAGIC)?;
    let count = c.u32()? as usize;
    let payload = c.take(count)?;
    c.finish()?;
    if let Some(index) = payload.iter().position(|&l| l as usize >= classes) {
        return Err(IngestError::LabelRange {
            index,
            label: payload[index],
            classes,
        });
    }
    Ok(payload.to_vec())
}

/// Inflate when the input carries the gzip signature, otherwise borrow it.
pub fn maybe_gunzip(bytes: &[u8]) -> Result<std::borrow::Cow<'_, [u8]>, IngestError> {
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(bytes)
            .read_to_end(&mut out)
            .map_err(|e| IngestError::Gzip(e.to_string()))?;
        Ok(out.into())
    } else {
        Ok(bytes.into())
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, IngestError> {
    std::fs::read(path).map_err(|e| IngestError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Load an image/label file pair, keeping at most `limit` samples.
pub fn load_idx_dataset(
    images: &Path,
    labels: &Path,
    limit: Option<usize>,
) -> Result<DatasetHandle, IngestError> {
    let image_bytes = read_file(images)?;
    let label_bytes = read_file(labels)?;
    let images = parse_idx_images(&maybe_gunzip(&image_bytes)?)?;
    let labels = parse_idx_labels(&maybe_gunzip(&label_bytes)?)?;
    if images.count != labels.len() {
        return Err(IngestError::Invalid(format!(
            "{} images but {} labels",
            images.count,
            labels.len()
        )));
    }
    let dataset = DatasetHandle::new(
        images.count,
        images.rows * images.cols,
        images.pixels,
        labels.into_iter().map(usize::from).collect(),
        MNIST_CLASSES,
    )?;
    Ok(match limit {
        Some(k) => dataset.truncate(k),
        None => dataset,
    })
}
