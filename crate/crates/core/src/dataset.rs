//! Dataset ingestion: IDX files (optionally gzip-wrapped) and directories of
//! PNG/JPEG images. Pixels are scaled to `[0, 1]`.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use image::imageops::FilterType;

use crate::tensor::ImageTensor;
use crate::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Raw contents of an IDX image file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.pixels[i * n..(i + 1) * n]
    }

    /// The first `limit` images (all when `None`) as single-channel tensors.
    pub fn to_tensors(&self, limit: Option<usize>) -> Vec<ImageTensor> {
        let n = limit.map_or(self.count, |l| l.min(self.count));
        (0..n)
            .map(|i| {
                let data = self.image(i).iter().map(|&p| f64::from(p) / 255.0).collect();
                ImageTensor::new(self.rows, self.cols, 1, data).expect("IDX dimensions are consistent")
            })
            .collect()
    }
}

fn dataset_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Dataset { path: path.to_path_buf(), msg: msg.into() }
}

/// Reads a file, transparently gunzipping it when it starts with the gzip magic.
fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut out).map_err(|e| dataset_err(path, format!("gzip: {e}")))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes.get(at..at + 4).map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

pub fn parse_idx_images(bytes: &[u8]) -> std::result::Result<IdxImages, String> {
    let magic = be_u32(bytes, 0).ok_or("file too short for an IDX header")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(format!("bad IDX image magic {magic:#010x}"));
    }
    let dims: Vec<usize> = (0..3)
        .map(|i| be_u32(bytes, 4 + 4 * i).map(|v| v as usize))
        .collect::<Option<_>>()
        .ok_or("truncated IDX header")?;
    let (count, rows, cols) = (dims[0], dims[1], dims[2]);
    let body = &bytes[16..];
    if rows == 0 || cols == 0 || body.len() < count * rows * cols {
        return Err(format!("expected {} pixel bytes, found {}", count * rows * cols, body.len()));
    }
    Ok(IdxImages { count, rows, cols, pixels: body[..count * rows * cols].to_vec() })
}

pub fn parse_idx_labels(bytes: &[u8]) -> std::result::Result<Vec<u8>, String> {
    let magic = be_u32(bytes, 0).ok_or("file too short for an IDX header")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(format!("bad IDX label magic {magic:#010x}"));
    }
    let count = be_u32(bytes, 4).ok_or("truncated IDX header")? as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(format!("expected {count} labels, found {}", body.len()));
    }
    Ok(body[..count].to_vec())
}

pub fn read_idx_images(path: &Path) -> Result<IdxImages> {
    parse_idx_images(&read_maybe_gz(path)?).map_err(|m| dataset_err(path, m))
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    parse_idx_labels(&read_maybe_gz(path)?).map_err(|m| dataset_err(path, m))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    IdxGzip,
    ImageDirectory,
}

/// Where training images come from and the shape they are brought to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSource {
    pub kind: DatasetKind,
    pub path: PathBuf,
    /// Target `(height, width)`; image directories are center-cropped and
    /// resized to it, IDX files must already match.
    pub shape: (usize, usize),
    pub channels: usize,
}

const IDX_CANDIDATES: &[&str] = &["train-images-idx3-ubyte.gz", "train-images-idx3-ubyte", "train-images.idx3-ubyte"];

fn is_image_file(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
}

impl DatasetSource {
    /// Resolves `path`: an IDX file, a directory holding a standard
    /// `train-images-idx3-ubyte[.gz]`, or a directory of images.
    pub fn detect(path: &Path, shape: (usize, usize), channels: usize) -> Result<Self> {
        if !path.exists() {
            return Err(dataset_err(path, "no such file or directory"));
        }
        let make = |kind, path: PathBuf| Ok(Self { kind, path, shape, channels });
        if path.is_file() {
            return make(DatasetKind::IdxGzip, path.to_path_buf());
        }
        for name in IDX_CANDIDATES {
            let candidate = path.join(name);
            if candidate.is_file() {
                return make(DatasetKind::IdxGzip, candidate);
            }
        }
        make(DatasetKind::ImageDirectory, path.to_path_buf())
    }

    pub fn load(&self, limit: Option<usize>) -> Result<Vec<ImageTensor>> {
        let images = match self.kind {
            DatasetKind::IdxGzip => {
                let idx = read_idx_images(&self.path)?;
                if (idx.rows, idx.cols) != self.shape || self.channels != 1 {
                    return Err(dataset_err(
                        &self.path,
                        format!(
                            "IDX images are {}x{}x1 but {}x{}x{} was requested",
                            idx.rows, idx.cols, self.shape.0, self.shape.1, self.channels
                        ),
                    ));
                }
                idx.to_tensors(limit)
            }
            DatasetKind::ImageDirectory => load_image_dir(&self.path, self.shape, self.channels, limit)?,
        };
        if images.is_empty() {
            return Err(dataset_err(&self.path, "no images found"));
        }
        Ok(images)
    }
}

/// Loads up to `limit` PNG/JPEG files (sorted by name), center-cropped to a
/// square, resized bilinearly to `shape` and converted to `channels` (1 or 3).
pub fn load_image_dir(
    dir: &Path,
    shape: (usize, usize),
    channels: usize,
    limit: Option<usize>,
) -> Result<Vec<ImageTensor>> {
    if channels != 1 && channels != 3 {
        return Err(dataset_err(dir, format!("unsupported channel count {channels}")));
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image_file(p))
        .collect();
    files.sort();
    if let Some(l) = limit {
        files.truncate(l);
    }
    files
        .iter()
        .map(|f| {
            let img = image::open(f).map_err(|e| dataset_err(f, e.to_string()))?;
            let (w, h) = (img.width(), img.height());
            let side = w.min(h);
            let cropped = img.crop_imm((w - side) / 2, (h - side) / 2, side, side);
            let resized = cropped.resize_exact(shape.1 as u32, shape.0 as u32, FilterType::Triangle);
            let data: Vec<f64> = if channels == 1 {
                resized.to_luma8().into_raw().into_iter().map(|p| f64::from(p) / 255.0).collect()
            } else {
                resized.to_rgb8().into_raw().into_iter().map(|p| f64::from(p) / 255.0).collect()
            };
            ImageTensor::new(shape.0, shape.1, channels, data)
        })
        .collect()
}

/// 8-bit quantization used for image output: `round(clamp(v) * 255)`.
pub fn quantize(t: &ImageTensor) -> Vec<u8> {
    t.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
}
