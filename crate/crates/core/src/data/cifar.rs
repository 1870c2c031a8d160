//! CIFAR binary-format loaders.
//!
//! The standard distribution format: fixed-size records, one label byte
//! (two for CIFAR-100) followed by 3×1024 pixel bytes as full R, G, B
//! planes in row-major order. Pixels are scaled to [0, 1] and per-channel
//! mean-centered with the training split's means; no augmentation. Files
//! are supplied by the user — there is no download logic.

use std::path::{Path, PathBuf};

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const PLANE: usize = 1024;
const PIXELS: usize = 3 * PLANE;

struct RawSplit {
    data: Vec<f32>,
    labels: Vec<u32>,
}

/// Parse one file of fixed-size records. `label_bytes` is 1 for CIFAR-10 and
/// 2 for CIFAR-100 (coarse then fine; the fine label is kept).
fn read_batch_file(path: &Path, label_bytes: usize, classes: usize) -> Result<RawSplit> {
    let bytes = std::fs::read(path).map_err(|e| Error::DataFormat {
        path: path.to_path_buf(),
        offset: 0,
        message: format!("cannot read: {e}"),
    })?;
    let record = label_bytes + PIXELS;
    if bytes.is_empty() || bytes.len() % record != 0 {
        return Err(Error::DataFormat {
            path: path.to_path_buf(),
            offset: (bytes.len() - bytes.len() % record) as u64,
            message: format!(
                "file size {} is not a multiple of the {record}-byte record",
                bytes.len()
            ),
        });
    }
    let n = bytes.len() / record;
    let mut data = Vec::with_capacity(n * PIXELS);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let base = i * record;
        let label = bytes[base + label_bytes - 1] as u32;
        if label as usize >= classes {
            return Err(Error::DataFormat {
                path: path.to_path_buf(),
                offset: (base + label_bytes - 1) as u64,
                message: format!("label {label} out of range for {classes} classes"),
            });
        }
        labels.push(label);
        data.extend(
            bytes[base + label_bytes..base + record]
                .iter()
                .map(|b| *b as f32 / 255.0),
        );
    }
    Ok(RawSplit { data, labels })
}

fn assemble(
    parts: Vec<RawSplit>,
    classes: usize,
    split: Split,
) -> Result<(Dataset, [f64; 3])> {
    let n: usize = parts.iter().map(|p| p.labels.len()).sum();
    let mut data = Vec::with_capacity(n * PIXELS);
    let mut labels = Vec::with_capacity(n);
    for p in parts {
        data.extend_from_slice(&p.data);
        labels.extend_from_slice(&p.labels);
    }
    let mut means = [0.0f64; 3];
    for i in 0..n {
        for c in 0..3 {
            means[c] += crate::tensor::kernels::sum_f64(&data[(i * 3 + c) * PLANE..][..PLANE]);
        }
    }
    for m in &mut means {
        *m /= (n * PLANE) as f64;
    }
    let images = Tensor::new(vec![n, 3, 32, 32], data)?;
    Ok((Dataset::new(images, labels, classes, split)?, means))
}

fn center(ds: &mut Dataset, means: &[f64; 3]) {
    let n = ds.len();
    let data = ds.images.data_mut();
    for i in 0..n {
        for c in 0..3 {
            let m = means[c] as f32;
            for v in &mut data[(i * 3 + c) * PLANE..][..PLANE] {
                *v -= m;
            }
        }
    }
}

/// Load CIFAR-10 from `dir` holding `data_batch_1..5.bin` and
/// `test_batch.bin`. Both splits are centered with the training means.
pub fn load_cifar10(dir: &Path) -> Result<(Dataset, Dataset)> {
    let train_parts = (1..=5)
        .map(|i| read_batch_file(&dir.join(format!("data_batch_{i}.bin")), 1, 10))
        .collect::<Result<Vec<_>>>()?;
    let test_part = read_batch_file(&dir.join("test_batch.bin"), 1, 10)?;
    let (mut train, means) = assemble(train_parts, 10, Split::Train)?;
    let (mut test, _) = assemble(vec![test_part], 10, Split::Test)?;
    center(&mut train, &means);
    center(&mut test, &means);
    Ok((train, test))
}

/// Load CIFAR-100 (fine labels) from `dir` holding `train.bin`/`test.bin`.
pub fn load_cifar100(dir: &Path) -> Result<(Dataset, Dataset)> {
    let train_part = read_batch_file(&dir.join("train.bin"), 2, 100)?;
    let test_part = read_batch_file(&dir.join("test.bin"), 2, 100)?;
    let (mut train, means) = assemble(vec![train_part], 100, Split::Train)?;
    let (mut test, _) = assemble(vec![test_part], 100, Split::Test)?;
    center(&mut train, &means);
    center(&mut test, &means);
    Ok((train, test))
}

/// Convenience for error messages and CLI validation.
pub fn expected_cifar10_files(dir: &Path) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = (1..=5)
        .map(|i| dir.join(format!("data_batch_{i}.bin")))
        .collect();
    files.push(dir.join("test_batch.bin"));
    files
}
