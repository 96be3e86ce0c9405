//! In-memory labelled datasets and the MNIST IDX reader.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::network::Batch;
use crate::tensor::Tensor;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

/// Row-major examples with pixel values in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct Dataset {
    width: usize,
    inputs: Vec<f64>,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(width: usize, inputs: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if width == 0 || inputs.len() != width * labels.len() {
            return Err(Error::Config(format!(
                "dataset with {} labels and width {width} needs {} inputs, got {}",
                labels.len(),
                width * labels.len(),
                inputs.len()
            )));
        }
        Ok(Dataset {
            width,
            inputs,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn example(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.width..(i + 1) * self.width]
    }

    /// First `n` examples (or all, if fewer).
    pub fn truncated(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            width: self.width,
            inputs: self.inputs[..n * self.width].to_vec(),
            labels: self.labels[..n].to_vec(),
        }
    }

    pub fn gather(&self, indices: &[usize]) -> Result<Batch> {
        let mut data = Vec::with_capacity(indices.len() * self.width);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.example(i));
            labels.push(self.labels[i]);
        }
        Batch::new(Tensor::new(vec![indices.len(), self.width], data)?, labels)
    }

    /// Consecutive batches in storage order; the last one may be short.
    pub fn batches(&self, size: usize) -> Result<Vec<Batch>> {
        let order: Vec<usize> = (0..self.len()).collect();
        order.chunks(size.max(1)).map(|c| self.gather(c)).collect()
    }

    /// Index order for one epoch of shuffled minibatches.
    pub fn shuffled_order<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(rng);
        order
    }
}

#[derive(Debug, Clone)]
pub struct MnistDataset {
    pub train: Dataset,
    pub test: Dataset,
}

const SPLITS: [(&str, &str, usize); 2] = [
    ("train-images-idx3-ubyte", "train-labels-idx1-ubyte", 60_000),
    ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte", 10_000),
];

/// Reads the four MNIST IDX files from `dir`, accepting `.gz` variants.
pub fn load_mnist(dir: &Path) -> Result<MnistDataset> {
    let mut parts = Vec::with_capacity(2);
    for (images, labels, count) in SPLITS {
        let image_path = locate(dir, images)?;
        let label_path = locate(dir, labels)?;
        let (n, rows, cols, pixels) = read_idx_images(&image_path)?;
        let lab = read_idx_labels(&label_path)?;
        if n != count || lab.len() != count {
            return Err(Error::Format {
                path: image_path,
                message: format!("expected {count} items, found {n} images and {} labels", lab.len()),
            });
        }
        let width = rows * cols;
        let inputs = pixels.into_iter().map(|p| p as f64 / 255.0).collect();
        parts.push(Dataset::new(width, inputs, lab.into_iter().map(usize::from).collect())?);
    }
    let test = parts.pop().expect("two splits");
    let train = parts.pop().expect("two splits");
    Ok(MnistDataset { train, test })
}

fn locate(dir: &Path, name: &str) -> Result<PathBuf> {
    let plain = dir.join(name);
    if plain.exists() {
        return Ok(plain);
    }
    let gz = dir.join(format!("{name}.gz"));
    if gz.exists() {
        return Ok(gz);
    }
    Err(Error::io(
        plain,
        std::io::Error::new(std::io::ErrorKind::NotFound, "MNIST file not found"),
    ))
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::Format {
                path: path.to_path_buf(),
                message: format!("gzip stream: {e}"),
            })?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> Option<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

/// Returns `(count, rows, cols, pixels)`.
pub fn read_idx_images(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let bytes = read_all(path)?;
    parse_idx_images(&bytes).map_err(|message| Error::Format {
        path: path.to_path_buf(),
        message,
    })
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read_all(path)?;
    parse_idx_labels(&bytes).map_err(|message| Error::Format {
        path: path.to_path_buf(),
        message,
    })
}

fn parse_idx_images(bytes: &[u8]) -> std::result::Result<(usize, usize, usize, Vec<u8>), String> {
    let header = |i| be_u32(bytes, i).ok_or_else(|| "truncated header".to_string());
    let magic = header(0)?;
    if magic != IMAGE_MAGIC {
        return Err(format!("bad image magic {magic:#010x}"));
    }
    let (n, rows, cols) = (header(4)? as usize, header(8)? as usize, header(12)? as usize);
    let need = n * rows * cols;
    let body = &bytes[16..];
    if body.len() != need {
        return Err(format!("expected {need} pixel bytes, found {}", body.len()));
    }
    Ok((n, rows, cols, body.to_vec()))
}

fn parse_idx_labels(bytes: &[u8]) -> std::result::Result<Vec<u8>, String> {
    let magic = be_u32(bytes, 0).ok_or("truncated header")?;
    if magic != LABEL_MAGIC {
        return Err(format!("bad label magic {magic:#010x}"));
    }
    let n = be_u32(bytes, 4).ok_or("truncated header")? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(format!("expected {n} labels, found {}", body.len()));
    }
    if let Some(l) = body.iter().find(|l| **l > 9) {
        return Err(format!("label {l} out of range"));
    }
    Ok(body.to_vec())
}
