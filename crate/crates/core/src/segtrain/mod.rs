//! Datasets, losses, metrics and candidate training.

pub mod augment;
pub mod ingest;
pub mod loss;
pub mod metrics;
pub mod synth;
pub mod train;

use std::path::PathBuf;

use thiserror::Error;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("sample shapes disagree: {0}")]
    Shape(String),
    #[error("mask extends outside the field of view")]
    MaskOutsideFov,
    #[error("mask is not binary")]
    NonBinaryMask,
    #[error("image values fall outside [-0.5, 0.5]")]
    Range,
    #[error("synthetic size {size} below minimum {min}")]
    TooSmall { size: usize, min: usize },
    #[error("downsample factor must be >= 1")]
    BadFactor,
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot decode {path}: {detail}")]
    Decode { path: PathBuf, detail: String },
    #[error("file stem {stem:?} has no counterpart in {missing}/")]
    Unpaired { stem: String, missing: String },
    #[error("size mismatch for {stem:?}: {a:?} vs {b:?}")]
    SizeMismatch { stem: String, a: (usize, usize), b: (usize, usize) },
    #[error("no usable images found in {0}")]
    EmptyDir(PathBuf),
}

/// One segmentation sample: image in [-0.5, 0.5] (shape `[1, H, W]`),
/// binary mask (`[H, W]`) and optional binary field-of-view mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T> {
    pub image: Tensor<T>,
    pub mask: Tensor<T>,
    pub fov: Option<Tensor<T>>,
}

impl<T: Scalar> Sample<T> {
    /// Construct with full invariant checks: consistent shapes, binary
    /// mask/fov, image range, and mask contained in the fov.
    pub fn checked(
        image: Tensor<T>,
        mask: Tensor<T>,
        fov: Option<Tensor<T>>,
    ) -> Result<Self, DataError> {
        let ishape = image.shape().to_vec();
        if ishape.len() != 3 || ishape[0] != 1 {
            return Err(DataError::Shape(format!("image must be [1, H, W], got {:?}", ishape)));
        }
        let (h, w) = (ishape[1], ishape[2]);
        if mask.shape() != [h, w] {
            return Err(DataError::Shape(format!(
                "mask {:?} does not match image {}x{}",
                mask.shape(),
                h,
                w
            )));
        }
        if let Some(f) = &fov {
            if f.shape() != [h, w] {
                return Err(DataError::Shape(format!(
                    "fov {:?} does not match image {}x{}",
                    f.shape(),
                    h,
                    w
                )));
            }
        }
        let half = T::c(0.5);
        if !image.data().iter().all(|&v| v >= -half && v <= half) {
            return Err(DataError::Range);
        }
        let binary = |t: &Tensor<T>| t.data().iter().all(|&v| v == T::zero() || v == T::one());
        if !binary(&mask) || fov.as_ref().is_some_and(|f| !binary(f)) {
            return Err(DataError::NonBinaryMask);
        }
        if let Some(f) = &fov {
            let outside = mask
                .data()
                .iter()
                .zip(f.data())
                .any(|(&m, &fv)| m == T::one() && fv == T::zero());
            if outside {
                return Err(DataError::MaskOutsideFov);
            }
        }
        Ok(Sample { image, mask, fov })
    }

    pub fn h(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn w(&self) -> usize {
        self.image.shape()[2]
    }

    pub fn mask_bool(&self) -> Vec<bool> {
        self.mask.data().iter().map(|&v| v == T::one()).collect()
    }

    pub fn fov_bool(&self) -> Option<Vec<bool>> {
        self.fov.as_ref().map(|f| f.data().iter().map(|&v| v == T::one()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checked_rejects_mask_outside_fov() {
        let image = Tensor::<f64>::zeros(vec![1, 2, 2]);
        let mask = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let fov = Tensor::new(vec![2, 2], vec![0.0, 1.0, 1.0, 1.0]).unwrap();
        assert!(matches!(
            Sample::checked(image, mask, Some(fov)),
            Err(DataError::MaskOutsideFov)
        ));
    }

    #[test]
    fn checked_rejects_out_of_range_image() {
        let image = Tensor::new(vec![1, 1, 1], vec![0.7]).unwrap();
        let mask = Tensor::zeros(vec![1, 1]);
        assert!(matches!(Sample::checked(image, mask, None), Err(DataError::Range)));
    }
}
