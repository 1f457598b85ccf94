//! Pixel-wise PCA color decorrelation (RGB to P, Q) and LLE-based RGB recovery.

use nalgebra::{DMatrix, Matrix3, Vector3};

use crate::linalg::{sym_eig_desc, Moments};
use crate::lle::{RegionCodebooks, RegionSpec};
use crate::tensor::ImageTensor;
use crate::{Error, Result};

/// Number of decorrelated channels kept (P and Q).
pub const KEPT_CHANNELS: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct ColorModel {
    pub(crate) mean: Vector3<f64>,
    /// Rows are the P, Q, R axes, by descending eigenvalue.
    pub(crate) axes: Matrix3<f64>,
    pub(crate) eigenvalues: [f64; 3],
    /// Per-pixel codebooks mapping (P, Q) to RGB.
    pub(crate) rgb_codebook: RegionCodebooks,
}

impl ColorModel {
    /// Fits the pixel PCA on every pixel of `images` and the per-location
    /// (P, Q) to RGB codebooks.
    pub fn fit(images: &[ImageTensor], k_max: usize) -> Result<Self> {
        let (mean, axes, eigenvalues) = fit_pixel_pca(images)?;
        let pq = images.iter().map(|t| project(&mean, &axes, t)).collect::<Vec<_>>();
        let rgb_codebook = RegionCodebooks::build(&pq, images, RegionSpec::PerLocation, k_max)?;
        Ok(Self { mean, axes, eigenvalues, rgb_codebook })
    }

    pub(crate) fn from_parts(
        mean: Vector3<f64>,
        axes: Matrix3<f64>,
        eigenvalues: [f64; 3],
        rgb_codebook: RegionCodebooks,
    ) -> Result<Self> {
        let orthonormal = (axes * axes.transpose() - Matrix3::identity()).amax() < 1e-9;
        if !orthonormal || rgb_codebook.lf_channels() != KEPT_CHANNELS || rgb_codebook.hf_channels() != 3 {
            return Err(Error::Malformed("color model is inconsistent".into()));
        }
        Ok(Self { mean, axes, eigenvalues, rgb_codebook })
    }

    pub fn mean(&self) -> &Vector3<f64> {
        &self.mean
    }

    pub fn axes(&self) -> &Matrix3<f64> {
        &self.axes
    }

    pub fn eigenvalues(&self) -> [f64; 3] {
        self.eigenvalues
    }

    pub fn rgb_codebook(&self) -> &RegionCodebooks {
        &self.rgb_codebook
    }

    /// RGB image to its (P, Q) channels.
    pub fn to_pq(&self, rgb: &ImageTensor) -> Result<ImageTensor> {
        if rgb.channels() != 3 {
            return Err(Error::DimensionMismatch(format!("expected RGB input, got {} channels", rgb.channels())));
        }
        Ok(project(&self.mean, &self.axes, rgb))
    }

    /// (P, Q) channels to RGB via the per-pixel codebooks.
    pub fn to_rgb(&self, pq: &ImageTensor) -> Result<ImageTensor> {
        Ok(self.rgb_codebook.recover(pq)?.1)
    }
}

fn fit_pixel_pca(images: &[ImageTensor]) -> Result<(Vector3<f64>, Matrix3<f64>, [f64; 3])> {
    if images.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let mut m = Moments::new(3);
    for t in images {
        if t.channels() != 3 {
            return Err(Error::DimensionMismatch("color model needs RGB images".into()));
        }
        let n = t.height() * t.width();
        m.add_rows(&DMatrix::from_row_slice(n, 3, t.data()));
    }
    let eig = sym_eig_desc(&m.covariance());
    let mean = Vector3::from_iterator(m.mean().iter().copied());
    let axes = Matrix3::from_iterator(eig.vectors.iter().copied());
    Ok((mean, axes, [eig.values[0], eig.values[1], eig.values[2]]))
}

fn project(mean: &Vector3<f64>, axes: &Matrix3<f64>, rgb: &ImageTensor) -> ImageTensor {
    ImageTensor::from_fn(rgb.height(), rgb.width(), KEPT_CHANNELS, |y, x, c| {
        let px = Vector3::new(rgb.get(y, x, 0), rgb.get(y, x, 1), rgb.get(y, x, 2)) - mean;
        axes.row(c).dot(&px.transpose())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn images(n: usize) -> Vec<ImageTensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        (0..n)
            .map(|_| {
                let tint: f64 = rng.random();
                ImageTensor::from_fn(4, 4, 3, |y, x, c| {
                    let base = 0.2 + 0.1 * (y + x) as f64;
                    (base + 0.3 * tint * c as f64 + 0.01 * rng.random::<f64>()).clamp(0.0, 1.0)
                })
            })
            .collect()
    }

    #[test]
    fn axes_orthonormal_and_r_smallest() {
        let model = ColorModel::fit(&images(50), 3).unwrap();
        assert!((model.axes * model.axes.transpose() - Matrix3::identity()).amax() < 1e-12);
        let e = model.eigenvalues;
        assert!(e[0] >= e[1] && e[1] >= e[2]);
    }

    #[test]
    fn training_pixels_recover_exactly() {
        let imgs = images(30);
        let model = ColorModel::fit(&imgs, 3).unwrap();
        let pq = model.to_pq(&imgs[3]).unwrap();
        assert_eq!(pq.shape(), (4, 4, 2));
        let rgb = model.to_rgb(&pq).unwrap();
        for (a, b) in rgb.data().iter().zip(imgs[3].data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_grayscale() {
        assert!(ColorModel::fit(&[ImageTensor::zeros(2, 2, 1)], 3).is_err());
    }
}
