//! Self-describing binary checkpoints.
//!
//! Layout: magic `"EFCN"`, format version (u32 little-endian), header length
//! (u64 little-endian), a UTF-8 JSON header, then the raw array payloads —
//! contiguous little-endian f32, in the header's index order. The header
//! alone describes every array's shape and extent, so shapes can be read
//! without touching the payload, and identical content always serializes to
//! identical bytes (the index is name-sorted, offsets assigned in that
//! order).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ModelSpec;
use crate::params::{ParamLayout, ParamVector};
use crate::rng::RngState;
use crate::train::{OptimizerKind, OptimizerState, Snapshot};

pub const MAGIC: [u8; 4] = *b"EFCN";
pub const VERSION: u32 = 1;

/// A named f32 array: the parameter vector, optimizer moments, and the like.
#[derive(Clone, Debug, PartialEq)]
pub struct Array {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Array {
    pub fn flat(data: Vec<f32>) -> Self {
        Array {
            shape: vec![data.len()],
            data,
        }
    }
}

/// Which optimizer the checkpointed state belongs to; `step` is Adam's
/// bias-correction counter (0 for SGD).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptimizerMeta {
    pub kind: OptimizerKind,
    pub step: u64,
}

/// Everything about a checkpoint except the raw arrays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub model: ModelSpec,
    pub epoch: usize,
    pub seed: u64,
    pub optimizer: OptimizerMeta,
    pub shuffle_rng: Option<RngState>,
    pub dropout_rng: Option<RngState>,
    /// For embedded models: the convolutional spec this dense model came
    /// from. The embedding map is rebuilt from it deterministically.
    pub source_cnn: Option<ModelSpec>,
    /// For embedded models: the relax time (source epoch) of the snapshot.
    pub t_w: Option<usize>,
    pub train_loss: Option<f64>,
    pub test_accuracy: Option<f64>,
}

/// One array's slot in the on-disk index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayIndexEntry {
    pub dtype: String,
    pub shape: Vec<usize>,
    /// Byte offset into the payload section.
    pub offset: u64,
    /// Byte length.
    pub len: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    meta: Meta,
    arrays: BTreeMap<String, ArrayIndexEntry>,
}

/// Parsed header of a checkpoint file: everything but the payload.
#[derive(Clone, Debug, PartialEq)]
pub struct HeaderInfo {
    pub version: u32,
    pub meta: Meta,
    pub arrays: BTreeMap<String, ArrayIndexEntry>,
}

/// A complete in-memory checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: Meta,
    pub arrays: BTreeMap<String, Array>,
}

fn ckpt_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: PathBuf::from(path),
        message: message.into(),
    }
}

impl Checkpoint {
    /// Package a training snapshot. `model` is the architecture the snapshot
    /// parameters belong to; `seed` is the run seed that produced it.
    pub fn from_snapshot(model: &ModelSpec, seed: u64, snap: &Snapshot) -> Checkpoint {
        let mut arrays = BTreeMap::new();
        arrays.insert(
            "theta".to_string(),
            Array::flat(snap.theta.values().to_vec()),
        );
        let optimizer = match &snap.opt_state {
            OptimizerState::Sgd { velocity } => {
                if let Some(v) = velocity {
                    arrays.insert("sgd_velocity".to_string(), Array::flat(v.clone()));
                }
                OptimizerMeta {
                    kind: OptimizerKind::Sgd,
                    step: 0,
                }
            }
            OptimizerState::Adam { m, v, step } => {
                arrays.insert("adam_m".to_string(), Array::flat(m.clone()));
                arrays.insert("adam_v".to_string(), Array::flat(v.clone()));
                OptimizerMeta {
                    kind: OptimizerKind::Adam,
                    step: *step,
                }
            }
        };
        Checkpoint {
            meta: Meta {
                model: model.clone(),
                epoch: snap.t_w,
                seed,
                optimizer,
                shuffle_rng: Some(snap.shuffle_rng.clone()),
                dropout_rng: Some(snap.dropout_rng.clone()),
                source_cnn: None,
                t_w: None,
                train_loss: Some(snap.train_loss),
                test_accuracy: Some(snap.test_accuracy),
            },
            arrays,
        }
    }

    /// Rebuild the training snapshot this checkpoint was made from.
    pub fn to_snapshot(&self) -> Result<Snapshot> {
        let theta = self.theta()?;
        let n = theta.len();
        let grab = |name: &str| -> Result<Vec<f32>> {
            let a = self
                .arrays
                .get(name)
                .ok_or_else(|| Error::InvalidArgument(format!("checkpoint has no {name:?} array")))?;
            if a.data.len() != n {
                return Err(Error::shape(
                    format!("checkpoint array {name:?}"),
                    format!("{n} values"),
                    format!("{}", a.data.len()),
                ));
            }
            Ok(a.data.clone())
        };
        let opt_state = match self.meta.optimizer.kind {
            OptimizerKind::Sgd => OptimizerState::Sgd {
                velocity: if self.arrays.contains_key("sgd_velocity") {
                    Some(grab("sgd_velocity")?)
                } else {
                    None
                },
            },
            OptimizerKind::Adam => OptimizerState::Adam {
                m: grab("adam_m")?,
                v: grab("adam_v")?,
                step: self.meta.optimizer.step,
            },
        };
        let missing = |what: &str| {
            Error::InvalidArgument(format!("checkpoint carries no {what}; not a snapshot"))
        };
        Ok(Snapshot {
            t_w: self.meta.epoch,
            theta,
            opt_state,
            shuffle_rng: self.meta.shuffle_rng.clone().ok_or_else(|| missing("shuffle rng state"))?,
            dropout_rng: self.meta.dropout_rng.clone().ok_or_else(|| missing("dropout rng state"))?,
            train_loss: self.meta.train_loss.ok_or_else(|| missing("train loss"))?,
            test_accuracy: self.meta.test_accuracy.ok_or_else(|| missing("test accuracy"))?,
        })
    }

    /// The parameter vector, laid out for `meta.model`.
    pub fn theta(&self) -> Result<ParamVector> {
        let a = self
            .arrays
            .get("theta")
            .ok_or_else(|| Error::InvalidArgument("checkpoint has no \"theta\" array".into()))?;
        let layout = Arc::new(ParamLayout::of(&self.meta.model));
        ParamVector::from_values(layout, a.data.clone())
    }
}

fn build_index(arrays: &BTreeMap<String, Array>) -> BTreeMap<String, ArrayIndexEntry> {
    let mut index = BTreeMap::new();
    let mut offset = 0u64;
    for (name, a) in arrays {
        let len = 4 * a.data.len() as u64;
        index.insert(
            name.clone(),
            ArrayIndexEntry {
                dtype: "f32".to_string(),
                shape: a.shape.clone(),
                offset,
                len,
            },
        );
        offset += len;
    }
    index
}

/// Write a checkpoint. Identical content produces identical bytes.
pub fn save(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    for (name, a) in &ckpt.arrays {
        let expect: usize = a.shape.iter().product();
        if expect != a.data.len() {
            return Err(Error::shape(
                format!("checkpoint array {name:?}"),
                format!("{expect} values for shape {:?}", a.shape),
                format!("{}", a.data.len()),
            ));
        }
    }
    let header = Header {
        version: VERSION,
        meta: ckpt.meta.clone(),
        arrays: build_index(&ckpt.arrays),
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + header_bytes.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    for a in ckpt.arrays.values() {
        for v in &a.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

/// Read and validate the fixed prefix and JSON header; the payload is not
/// touched. Returns the parsed header.
fn read_header_from(f: &mut File, path: &Path) -> Result<HeaderInfo> {
    let mut prefix = [0u8; 16];
    f.read_exact(&mut prefix)
        .map_err(|_| ckpt_err(path, "file shorter than the 16-byte prefix"))?;
    if prefix[..4] != MAGIC {
        return Err(ckpt_err(
            path,
            format!("bad magic {:?}, expected \"EFCN\"", &prefix[..4]),
        ));
    }
    let version = u32::from_le_bytes(prefix[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(ckpt_err(
            path,
            format!("unsupported format version {version}; this build reads {VERSION}"),
        ));
    }
    let header_len = u64::from_le_bytes(prefix[8..16].try_into().unwrap());
    let mut header_bytes = vec![0u8; header_len as usize];
    f.read_exact(&mut header_bytes)
        .map_err(|_| ckpt_err(path, format!("truncated header: expected {header_len} bytes")))?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| ckpt_err(path, format!("malformed header JSON: {e}")))?;
    if header.version != version {
        return Err(ckpt_err(
            path,
            format!(
                "header version {} disagrees with file version {version}",
                header.version
            ),
        ));
    }
    Ok(HeaderInfo {
        version,
        meta: header.meta,
        arrays: header.arrays,
    })
}

/// Header-only read: model spec, seeds, and array shapes without loading
/// any payload bytes.
pub fn read_header(path: impl AsRef<Path>) -> Result<HeaderInfo> {
    let path = path.as_ref();
    let mut f = File::open(path)?;
    read_header_from(&mut f, path)
}

/// Load a checkpoint, validating the index against the payload.
pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let mut f = File::open(path)?;
    let header = read_header_from(&mut f, path)?;

    let mut expected = 0u64;
    for (name, e) in &header.arrays {
        if e.dtype != "f32" {
            return Err(ckpt_err(
                path,
                format!("array {name:?} has dtype {:?}, only \"f32\" is supported", e.dtype),
            ));
        }
        let n: usize = e.shape.iter().product();
        if e.len != 4 * n as u64 {
            return Err(ckpt_err(
                path,
                format!(
                    "array {name:?}: shape {:?} needs {} bytes but the index says {}",
                    e.shape,
                    4 * n,
                    e.len
                ),
            ));
        }
        if e.offset != expected {
            return Err(ckpt_err(
                path,
                format!(
                    "array {name:?}: offset {} but the payload cursor is at {expected}",
                    e.offset
                ),
            ));
        }
        expected += e.len;
    }

    let mut payload = Vec::new();
    f.read_to_end(&mut payload)?;
    if payload.len() as u64 != expected {
        return Err(ckpt_err(
            path,
            format!(
                "payload length mismatch: index needs {expected} bytes, file has {}",
                payload.len()
            ),
        ));
    }

    let mut arrays = BTreeMap::new();
    for (name, e) in header.arrays {
        let bytes = &payload[e.offset as usize..(e.offset + e.len) as usize];
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        arrays.insert(
            name,
            Array {
                shape: e.shape,
                data,
            },
        );
    }
    Ok(Checkpoint {
        meta: header.meta,
        arrays,
    })
}
