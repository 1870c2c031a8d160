//! Datasets and batches.
//!
//! A [`Dataset`] owns its images as one (N, C, H, W) tensor plus integer
//! labels; [`Batch`] is the gathered slice of it that training and probes
//! consume. Loaders live in the submodules: [`cifar`] for the standard
//! binary format, [`synthetic`] for the seeded shifted-patterns task.

pub mod cifar;
pub mod synthetic;

pub use cifar::{load_cifar10, load_cifar100};
pub use synthetic::{gen_synthetic, SyntheticConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Test => write!(f, "test"),
        }
    }
}

/// Labeled image set with a split tag.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<u32>,
    pub classes: usize,
    pub split: Split,
}

/// A gathered subset: what one optimization or probe step sees.
#[derive(Clone, Debug)]
pub struct Batch {
    pub images: Tensor,
    pub labels: Vec<u32>,
}

impl Batch {
    pub fn new(images: Tensor, labels: Vec<u32>) -> Result<Self> {
        if images.shape().first().copied() != Some(labels.len()) || labels.is_empty() {
            return Err(Error::shape(
                "Batch::new",
                format!("{} images for {} labels", labels.len(), labels.len()),
                format!("shape {:?}", images.shape()),
            ));
        }
        Ok(Batch { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<u32>, classes: usize, split: Split) -> Result<Self> {
        let &[n, _, _, _] = images.shape() else {
            return Err(Error::shape(
                "Dataset::new",
                "(N, C, H, W) images",
                format!("{:?}", images.shape()),
            ));
        };
        if labels.len() != n || n == 0 {
            return Err(Error::shape(
                "Dataset::new",
                format!("{n} labels"),
                format!("{}", labels.len()),
            ));
        }
        if let Some(bad) = labels.iter().find(|l| **l as usize >= classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        Ok(Dataset {
            images,
            labels,
            classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        let s = self.images.shape();
        (s[1], s[2], s[3])
    }

    /// Copy the rows at `idx` (in the given order) into a batch.
    pub fn gather(&self, idx: &[usize]) -> Result<Batch> {
        if idx.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let (c, h, w) = self.input_shape();
        let vol = c * h * w;
        let src = self.images.data();
        let mut data = Vec::with_capacity(idx.len() * vol);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            if i >= self.len() {
                return Err(Error::InvalidArgument(format!(
                    "index {i} out of range for dataset of {}",
                    self.len()
                )));
            }
            data.extend_from_slice(&src[i * vol..][..vol]);
            labels.push(self.labels[i]);
        }
        Batch::new(Tensor::new(vec![idx.len(), c, h, w], data)?, labels)
    }

    /// The whole dataset as one batch.
    pub fn full_batch(&self) -> Batch {
        Batch {
            images: self.images.clone(),
            labels: self.labels.clone(),
        }
    }
}

/// Per-channel affine normalization parameters, computed on a training split
/// and applied to both splits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

/// Mean and standard deviation per channel (f64 accumulation). A degenerate
/// channel (std < 1e-6) gets scale 1 so normalization stays invertible.
pub fn channel_stats(images: &Tensor) -> ChannelStats {
    let &[n, c, h, w] = images.shape() else {
        return ChannelStats {
            mean: vec![],
            scale: vec![],
        };
    };
    let plane = h * w;
    let count = (n * plane) as f64;
    let data = images.data();
    let mut mean = vec![0.0f64; c];
    let mut scale = vec![0.0f64; c];
    for i in 0..n {
        for ch in 0..c {
            let s = &data[(i * c + ch) * plane..][..plane];
            mean[ch] += crate::tensor::kernels::sum_f64(s);
        }
    }
    for m in &mut mean {
        *m /= count;
    }
    for i in 0..n {
        for ch in 0..c {
            let s = &data[(i * c + ch) * plane..][..plane];
            for v in s {
                let d = *v as f64 - mean[ch];
                scale[ch] += d * d;
            }
        }
    }
    for s in &mut scale {
        *s = (*s / count).sqrt();
        if *s < 1e-6 {
            *s = 1.0;
        }
    }
    ChannelStats { mean, scale }
}

/// x ← (x − mean_c) / scale_c per channel, in place.
pub fn normalize_channels(images: &mut Tensor, stats: &ChannelStats) {
    let &[n, c, h, w] = images.shape() else { return };
    let plane = h * w;
    let data = images.data_mut();
    for i in 0..n {
        for ch in 0..c {
            let m = stats.mean[ch] as f32;
            let s = stats.scale[ch] as f32;
            for v in &mut data[(i * c + ch) * plane..][..plane] {
                *v = (*v - m) / s;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_dataset() -> Dataset {
        let images = Tensor::new(
            vec![4, 1, 2, 2],
            (0..16).map(|i| i as f32).collect(),
        )
        .unwrap();
        Dataset::new(images, vec![0, 1, 2, 0], 3, Split::Train).unwrap()
    }

    #[test]
    fn gather_copies_rows_in_order() {
        let d = toy_dataset();
        let b = d.gather(&[2, 0]).unwrap();
        assert_eq!(b.labels, vec![2, 0]);
        assert_eq!(b.images.shape(), &[2, 1, 2, 2]);
        assert_eq!(&b.images.data()[..4], &[8.0, 9.0, 10.0, 11.0]);
        assert_eq!(&b.images.data()[4..], &[0.0, 1.0, 2.0, 3.0]);
        assert!(d.gather(&[]).is_err());
        assert!(d.gather(&[4]).is_err());
    }

    #[test]
    fn dataset_validates_labels() {
        let images = Tensor::zeros(vec![2, 1, 2, 2]);
        assert!(Dataset::new(images.clone(), vec![0, 3], 3, Split::Test).is_err());
        assert!(Dataset::new(images, vec![0], 3, Split::Test).is_err());
    }

    #[test]
    fn normalization_centers_channels() {
        let mut images = Tensor::new(
            vec![2, 2, 1, 2],
            vec![1.0, 3.0, 10.0, 30.0, 5.0, 7.0, 50.0, 70.0],
        )
        .unwrap();
        let stats = channel_stats(&images);
        assert_eq!(stats.mean[0], 4.0); // channel 0: 1,3,5,7
        assert_eq!(stats.mean[1], 40.0); // channel 1: 10,30,50,70
        normalize_channels(&mut images, &stats);
        let after = channel_stats(&images);
        assert!(after.mean[0].abs() < 1e-6);
        assert!(after.mean[1].abs() < 1e-6);
        assert!((after.scale[0] - 1.0).abs() < 1e-5);
        assert!((after.scale[1] - 1.0).abs() < 1e-5);
    }
}
