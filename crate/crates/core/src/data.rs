//! Datasets: IDX files (the MNIST distribution format) and synthetic draws
//! from a ground-truth model.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ancestral_sample, FactorGraphModel};
use crate::rng::{seeded, SimRng};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Raw IDX tensor of unsigned bytes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxTensor {
    pub magic: u32,
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

/// Big-endian magic, one u32 per dimension, then the payload. Only the
/// unsigned-byte image (3-D) and label (1-D) layouts are accepted.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxTensor> {
    let word = |i: usize| -> Result<u32> {
        let b = bytes.get(4 * i..4 * i + 4).ok_or(Error::TruncatedFile {
            expected: 4 * i + 4,
            found: bytes.len(),
        })?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    };
    let magic = word(0)?;
    let ndims = match magic {
        IDX_IMAGES_MAGIC => 3,
        IDX_LABELS_MAGIC => 1,
        m => return Err(Error::BadMagic(m)),
    };
    let dims = (1..=ndims)
        .map(|i| word(i).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let header = 4 * (ndims + 1);
    let expected = header + dims.iter().product::<usize>();
    if bytes.len() < expected {
        return Err(Error::TruncatedFile {
            expected,
            found: bytes.len(),
        });
    }
    Ok(IdxTensor {
        magic,
        dims,
        data: bytes[header..expected].to_vec(),
    })
}

/// Rows of observations, each `rows × cols` values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHandle {
    pub images: Vec<Vec<f64>>,
    pub labels: Option<Vec<u8>>,
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    /// Seed of the stochastic binarization, if applied.
    pub binarize_seed: Option<u64>,
    /// Generating parameters of a synthetic dataset.
    pub theta_true: Option<Vec<f64>>,
}

impl DatasetHandle {
    /// Images from a 3-D IDX tensor, pixels scaled to `[0, 1]`.
    pub fn from_idx_images(t: &IdxTensor) -> Result<Self> {
        if t.magic != IDX_IMAGES_MAGIC {
            return Err(Error::BadMagic(t.magic));
        }
        let (count, rows, cols) = (t.dims[0], t.dims[1], t.dims[2]);
        let px = rows * cols;
        let images = (0..count)
            .map(|i| t.data[i * px..(i + 1) * px].iter().map(|&b| b as f64 / 255.0).collect())
            .collect();
        Ok(DatasetHandle {
            images,
            labels: None,
            count,
            rows,
            cols,
            binarize_seed: None,
            theta_true: None,
        })
    }

    /// Attach a 1-D IDX label tensor of matching length.
    pub fn with_labels(mut self, t: &IdxTensor) -> Result<Self> {
        if t.magic != IDX_LABELS_MAGIC {
            return Err(Error::BadMagic(t.magic));
        }
        if t.dims[0] != self.count {
            return Err(Error::Shape(format!("{} labels for {} images", t.dims[0], self.count)));
        }
        self.labels = Some(t.data.clone());
        Ok(self)
    }

    /// Replace each pixel `p` by a Bernoulli(`p`) draw.
    pub fn binarize(&mut self, seed: u64) {
        let mut rng = seeded(seed);
        for row in &mut self.images {
            for v in row.iter_mut() {
                *v = if rng.random::<f64>() < *v { 1.0 } else { 0.0 };
            }
        }
        self.binarize_seed = Some(seed);
    }

    /// First `n` rows and the remainder.
    pub fn split(&self, n: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let n = n.min(self.count);
        (self.images[..n].to_vec(), self.images[n..].to_vec())
    }
}

/// Image file, optionally with its label file.
pub fn load_idx(images: &Path, labels: Option<&Path>) -> Result<DatasetHandle> {
    let t = parse_idx(&std::fs::read(images)?)?;
    let d = DatasetHandle::from_idx_images(&t)?;
    match labels {
        Some(p) => d.with_labels(&parse_idx(&std::fs::read(p)?)?),
        None => Ok(d),
    }
}

/// `n` ancestral samples of the observed leaves of `model` under `theta_true`.
pub fn synthetic_dataset(
    model: &FactorGraphModel,
    theta_true: &[f64],
    n: usize,
    rng: &mut SimRng,
) -> Result<DatasetHandle> {
    let obs = model.observed_nodes();
    let images = (0..n)
        .map(|_| ancestral_sample(model, theta_true, rng)?.flatten(model, &obs))
        .collect::<Result<Vec<_>>>()?;
    Ok(DatasetHandle {
        images,
        labels: None,
        count: n,
        rows: 1,
        cols: model.dim_of(&obs),
        binarize_seed: None,
        theta_true: Some(theta_true.to_vec()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::build_generative_mlp;

    fn idx(magic: u32, dims: &[u32], payload: &[u8]) -> Vec<u8> {
        let mut b = magic.to_be_bytes().to_vec();
        for d in dims {
            b.extend(d.to_be_bytes());
        }
        b.extend(payload);
        b
    }

    #[test]
    fn minimal_image_file() {
        let b = idx(0x803, &[2, 2, 2], &[0, 255, 51, 102, 1, 2, 3, 4]);
        let d = DatasetHandle::from_idx_images(&parse_idx(&b).unwrap()).unwrap();
        assert_eq!((d.count, d.rows, d.cols), (2, 2, 2));
        assert_eq!(d.images[0], vec![0.0, 1.0, 0.2, 0.4]);
    }

    #[test]
    fn truncated_and_bad_magic() {
        let b = idx(0x803, &[2, 2, 2], &[0; 7]);
        assert_eq!(
            parse_idx(&b),
            Err(Error::TruncatedFile {
                expected: 24,
                found: 23
            })
        );
        assert_eq!(
            parse_idx(&[0, 0, 8]),
            Err(Error::TruncatedFile { expected: 4, found: 3 })
        );
        let b = idx(0x802, &[2, 2, 2], &[0; 8]);
        assert_eq!(parse_idx(&b), Err(Error::BadMagic(0x802)));
    }

    #[test]
    fn labels_and_binarization() {
        let imgs = parse_idx(&idx(0x803, &[3, 1, 2], &[0, 255, 128, 128, 255, 0])).unwrap();
        let labs = parse_idx(&idx(0x801, &[3], &[7, 1, 4])).unwrap();
        let mut d = DatasetHandle::from_idx_images(&imgs)
            .unwrap()
            .with_labels(&labs)
            .unwrap();
        assert_eq!(d.labels, Some(vec![7, 1, 4]));
        d.binarize(3);
        assert_eq!(d.images[0], vec![0.0, 1.0]);
        assert!(d.images.iter().flatten().all(|v| *v == 0.0 || *v == 1.0));
        assert_eq!(d.binarize_seed, Some(3));
        let short = parse_idx(&idx(0x801, &[2], &[1, 2])).unwrap();
        assert!(DatasetHandle::from_idx_images(&imgs)
            .unwrap()
            .with_labels(&short)
            .is_err());
    }

    #[test]
    fn synthetic_is_reproducible_and_in_range() {
        let m = build_generative_mlp(&[2, 2], 6, &[1.0, 0.5]).unwrap();
        let th: Vec<f64> = (0..m.num_params()).map(|i| (i as f64 * 0.37).sin()).collect();
        let a = synthetic_dataset(&m, &th, 50, &mut seeded(1)).unwrap();
        let b = synthetic_dataset(&m, &th, 50, &mut seeded(1)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.images.len(), 50);
        assert!(a
            .images
            .iter()
            .all(|r| r.len() == 6 && r.iter().all(|v| *v == 0.0 || *v == 1.0)));
        assert_eq!(a.theta_true.as_deref(), Some(&th[..]));
    }
}
