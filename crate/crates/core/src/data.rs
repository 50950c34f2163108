//! Datasets, IDX ingestion, checkpoints and metrics logs.
//!
//! # IDX
//!
//! Big-endian. Images: magic `0x00000803`, then `N`, rows, cols as `u32`,
//! then `N*rows*cols` unsigned bytes. Labels: magic `0x00000801`, `N`, then
//! `N` bytes. A file whose length disagrees with its header is rejected.
//!
//! # Checkpoints
//!
//! Pretty-printed JSON:
//!
//! ```text
//! {
//!   "format": "efnet-checkpoint",
//!   "version": 1,
//!   "arch": "mlp2" | null,
//!   "network": {
//!     "layers": [ { "kind": "additive_dense", "w": {"rows","cols","data"}, "a": [..],
//!                   "b": [..], "activation": "relu", "unit_scale_fast_path": false }, ... ],
//!     "loss": "cross_entropy" | "mse"
//!   },
//!   "config": { training settings } | null
//! }
//! ```
//!
//! Floats are written in shortest round-trip form, so parameters reload
//! bitwise and save → load → save reproduces the same bytes.
//!
//! # Metrics
//!
//! One JSON object per line per epoch: `epoch`, `train_loss`, `train_acc`,
//! `test_acc`, `mult_count`, `add_count`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::Network;
use crate::tensor::{Matrix, Rng, Vector};
use crate::training::{EpochMetrics, MetricsSink, SgdConfig};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const MNIST_CLASSES: usize = 10;

/// Samples as rows with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Matrix,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl Dataset {
    pub fn new(samples: Matrix, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if samples.rows() != labels.len() {
            return Err(Error::shape(format!(
                "{} samples but {} labels",
                samples.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::param(format!(
                "label {bad} outside [0, {n_classes})"
            )));
        }
        Ok(Dataset {
            samples,
            labels,
            n_classes,
        })
    }

    /// The four XOR points with labels 0/1.
    pub fn xor() -> Self {
        Dataset {
            samples: Matrix::from_rows(&[[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]]),
            labels: vec![0, 1, 1, 0],
            n_classes: 2,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.cols()
    }

    pub fn sample(&self, i: usize) -> Vector {
        self.samples.row(i).into()
    }

    /// Training target for sample `i`: the label itself for a single-output
    /// network, its one-hot code otherwise.
    pub fn target(&self, i: usize, outputs: usize) -> Result<Vector> {
        if outputs == 1 {
            Ok(Vector::from([self.labels[i] as f64]))
        } else {
            one_hot(self.labels[i], outputs.max(self.n_classes))
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let cols = self.dim();
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            data.extend_from_slice(self.samples.row(i));
        }
        Dataset {
            samples: Matrix::from_vec(indices.len(), cols, data).expect("consistent size"),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
        }
    }

    /// First `limit` samples after a seeded shuffle; the whole set when
    /// `limit` is `None` or not smaller than the set.
    pub fn limited(&self, limit: Option<usize>, seed: u64) -> Dataset {
        match limit {
            Some(k) if k < self.len() => {
                let mut idx: Vec<usize> = (0..self.len()).collect();
                Rng::new(seed).shuffle(&mut idx);
                idx.truncate(k);
                self.subset(&idx)
            }
            _ => self.clone(),
        }
    }
}

/// Unit basis vector `e_label` of length `n_classes`.
pub fn one_hot(label: usize, n_classes: usize) -> Result<Vector> {
    if label >= n_classes {
        return Err(Error::param(format!(
            "label {label} outside [0, {n_classes})"
        )));
    }
    let mut v = Vector::zeros(n_classes);
    v[label] = 1.0;
    Ok(v)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(offset as u64, "truncated header"))
}

/// Parses an IDX image file into an `N x (rows*cols)` matrix scaled to `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Matrix> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(0, format!("bad image magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let pixels = rows * cols;
    let expected = 16 + n * pixels;
    if bytes.len() < expected {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated: header declares {n} images of {rows}x{cols} ({expected} bytes), file has {}", bytes.len()),
        ));
    }
    if bytes.len() > expected {
        return Err(Error::format(
            expected as u64,
            format!(
                "{} trailing bytes after {n} declared images",
                bytes.len() - expected
            ),
        ));
    }
    let data = bytes[16..].iter().map(|&b| b as f64 / 255.0).collect();
    Matrix::from_vec(n, pixels, data)
}

/// Parses an IDX label file; every label must be below `n_classes`.
pub fn parse_idx_labels(bytes: &[u8], n_classes: usize) -> Result<Vec<usize>> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::format(0, format!("bad label magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4)? as usize;
    let expected = 8 + n;
    if bytes.len() != expected {
        let offset = bytes.len().min(expected) as u64;
        return Err(Error::format(
            offset,
            format!(
                "header declares {n} labels ({expected} bytes), file has {}",
                bytes.len()
            ),
        ));
    }
    bytes[8..]
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            if (b as usize) < n_classes {
                Ok(b as usize)
            } else {
                Err(Error::format(
                    (8 + i) as u64,
                    format!("label {b} outside [0, {n_classes})"),
                ))
            }
        })
        .collect()
}

pub fn load_idx_images(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    parse_idx_images(&read_file(path)?).map_err(|e| with_path(e, path))
}

pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    parse_idx_labels(&read_file(path)?, MNIST_CLASSES).map_err(|e| with_path(e, path))
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Format { offset, message } => Error::Format {
            offset,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Standard file names inside an MNIST directory.
pub fn mnist_paths(dir: &Path, split: Split) -> (PathBuf, PathBuf) {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    (
        dir.join(format!("{prefix}-images-idx3-ubyte")),
        dir.join(format!("{prefix}-labels-idx1-ubyte")),
    )
}

pub fn load_mnist(dir: impl AsRef<Path>, split: Split) -> Result<Dataset> {
    let (images, labels) = mnist_paths(dir.as_ref(), split);
    let samples = load_idx_images(&images)?;
    let labels = load_idx_labels(&labels)?;
    Dataset::new(samples, labels, MNIST_CLASSES)
}

pub const CHECKPOINT_FORMAT: &str = "efnet-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Training settings echoed into a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub arch: String,
    pub operator: String,
    pub activation: String,
    pub sgd: SgdConfig,
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
    pub data_seed: u64,
    pub final_test_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub network: Network,
    pub config: Option<RunRecord>,
}

impl Checkpoint {
    pub fn new(network: Network, config: Option<RunRecord>) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            network,
            config,
        }
    }

    pub fn to_text(&self) -> Result<String> {
        let mut s =
            serde_json::to_string_pretty(self).map_err(|e| Error::Checkpoint(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        match value.get("format").and_then(|f| f.as_str()) {
            Some(CHECKPOINT_FORMAT) => {}
            _ => {
                return Err(Error::Checkpoint(format!(
                    "missing `format: {CHECKPOINT_FORMAT}`"
                )))
            }
        }
        let version = value
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Checkpoint("missing version".into()))?;
        if version != CHECKPOINT_VERSION as u64 {
            return Err(Error::Version {
                found: version.min(u32::MAX as u64) as u32,
                expected: CHECKPOINT_VERSION,
            });
        }
        let ckpt: Checkpoint =
            serde_json::from_value(value).map_err(|e| Error::Checkpoint(e.to_string()))?;
        ckpt.network.validate()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_text(&text)
    }
}

pub fn save_checkpoint(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    Checkpoint::new(net.clone(), None).save(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Network> {
    Ok(Checkpoint::load(path)?.network)
}

/// Appends one JSON line per epoch to a file.
pub struct MetricsLog {
    path: PathBuf,
    out: BufWriter<File>,
}

impl MetricsLog {
    /// Creates (truncating) the log file.
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(MetricsLog {
            path,
            out: BufWriter::new(file),
        })
    }

    pub fn append(&mut self, m: &EpochMetrics) -> Result<()> {
        let line = serde_json::to_string(m).map_err(|e| Error::Checkpoint(e.to_string()))?;
        writeln!(self.out, "{line}")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

impl MetricsSink for MetricsLog {
    fn record(&mut self, m: &EpochMetrics) -> Result<()> {
        self.append(m)
    }
}

pub fn read_metrics_log(path: impl AsRef<Path>) -> Result<Vec<EpochMetrics>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::Checkpoint(e.to_string())))
        .collect()
}
