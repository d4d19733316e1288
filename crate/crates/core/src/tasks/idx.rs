//! IDX container parsing (the MNIST distribution format), plain or gzipped.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;

use crate::error::{Error, Result};
use crate::nn::Matrix;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

/// Images scaled to `[0, 1]` (one row per image) and their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub images: Matrix<f32>,
    pub labels: Vec<u32>,
    pub rows: usize,
    pub cols: usize,
}

impl RawDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// MNIST train and test splits.
#[derive(Debug, Clone, PartialEq)]
pub struct MnistSplits {
    pub train: RawDataset,
    pub test: RawDataset,
}

fn gunzip_if_needed(raw: Vec<u8>, path: &Path) -> Result<Vec<u8>> {
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut out).map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    gunzip_if_needed(raw, path)
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::TruncatedIdx {
            path: path.to_path_buf(),
            need: at + 4,
            have: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], want: u32, expected: &'static str, path: &Path) -> Result<()> {
    let found = be_u32(bytes, 0, path)?;
    if found != want {
        return Err(Error::BadIdxMagic {
            expected,
            want,
            found,
            path: path.to_path_buf(),
        });
    }
    Ok(())
}

/// Parses an image file: `(count, rows, cols, pixels)`.
pub fn parse_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    check_magic(bytes, IMAGE_MAGIC, "image", path)?;
    let n = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    let need = 16 + n * rows * cols;
    if bytes.len() < need {
        return Err(Error::TruncatedIdx {
            path: path.to_path_buf(),
            need,
            have: bytes.len(),
        });
    }
    Ok((n, rows, cols, bytes[16..need].to_vec()))
}

pub fn parse_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    check_magic(bytes, LABEL_MAGIC, "label", path)?;
    let n = be_u32(bytes, 4, path)? as usize;
    let need = 8 + n;
    if bytes.len() < need {
        return Err(Error::TruncatedIdx {
            path: path.to_path_buf(),
            need,
            have: bytes.len(),
        });
    }
    Ok(bytes[8..need].to_vec())
}

/// Loads an image/label file pair; pixels become `byte / 255`.
pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<RawDataset> {
    assemble(
        parse_images(&read_bytes(images_path)?, images_path)?,
        parse_labels(&read_bytes(labels_path)?, labels_path)?,
    )
}

/// Like `load_mnist_idx` for in-memory file contents, plain or gzipped.
pub fn mnist_from_bytes(images: &[u8], labels: &[u8]) -> Result<RawDataset> {
    let path = Path::new("<memory>");
    assemble(
        parse_images(&gunzip_if_needed(images.to_vec(), path)?, path)?,
        parse_labels(&gunzip_if_needed(labels.to_vec(), path)?, path)?,
    )
}

fn assemble((n, rows, cols, pixels): (usize, usize, usize, Vec<u8>), labels: Vec<u8>) -> Result<RawDataset> {
    if labels.len() != n {
        return Err(Error::CountMismatch {
            images: n,
            labels: labels.len(),
        });
    }
    let data = pixels.iter().map(|&b| b as f32 / 255.0).collect();
    Ok(RawDataset {
        images: Matrix::from_vec(n, rows * cols, data),
        labels: labels.into_iter().map(u32::from).collect(),
        rows,
        cols,
    })
}

fn find(dir: &Path, stem: &str) -> Option<PathBuf> {
    [stem.to_string(), format!("{stem}.gz"), stem.replacen("-idx", ".idx", 1)]
        .into_iter()
        .map(|name| dir.join(name))
        .find(|p| p.is_file())
}

/// Loads the four standard MNIST files from `dir` (plain or `.gz`).
pub fn load_mnist_dir(dir: &Path) -> Result<MnistSplits> {
    let get = |stem: &str| {
        find(dir, stem).ok_or_else(|| {
            Error::MissingData(format!(
                "{stem}[.gz] not found in {}; point --mnist-dir (or ESPN_MNIST_DIR) at a directory holding the MNIST IDX files",
                dir.display()
            ))
        })
    };
    Ok(MnistSplits {
        train: load_mnist_idx(&get("train-images-idx3-ubyte")?, &get("train-labels-idx1-ubyte")?)?,
        test: load_mnist_idx(&get("t10k-images-idx3-ubyte")?, &get("t10k-labels-idx1-ubyte")?)?,
    })
}

/// The 10,000-digit MNIST subset shipped with the repository.
pub fn bundled_mnist_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-mini")
}
