use nalgebra::{DMatrix, DVector};

use crate::linalg::{sym_eig_desc, Moments};
use crate::tensor::ImageTensor;
use crate::{Error, Result};

const VARIANCE_FLOOR: f64 = 1e-12;

/// PCA over the spatial positions of one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelPca {
    pub(crate) mean: DVector<f64>,
    /// `retained x positions`, orthonormal rows.
    pub(crate) components: DMatrix<f64>,
    /// Eigenvalues of the retained components.
    pub(crate) eigenvalues: Vec<f64>,
    /// Retained eigenvalues as fractions of the channel's total variance.
    pub(crate) shares: Vec<f64>,
}

impl ChannelPca {
    pub fn retained(&self) -> usize {
        self.components.nrows()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn components(&self) -> &DMatrix<f64> {
        &self.components
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn shares(&self) -> &[f64] {
        &self.shares
    }
}

/// Per-channel spatial PCA of seed-space tensors.
///
/// Scores keep their natural scale: they are decorrelated, not variance
/// normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialPca {
    pub(crate) height: usize,
    pub(crate) width: usize,
    pub(crate) gamma: f64,
    pub(crate) channels: Vec<ChannelPca>,
}

impl SpatialPca {
    /// Fits one PCA per channel, keeping components whose eigenvalue share of
    /// the channel total is at least `gamma`.
    pub fn fit(samples: &[ImageTensor], gamma: f64) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::InsufficientSamples { needed: 2, got: samples.len() });
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidConfig(format!("gamma must lie in (0, 1), got {gamma}")));
        }
        let (height, width, nc) = samples[0].shape();
        if samples.iter().any(|s| s.shape() != (height, width, nc)) {
            return Err(Error::DimensionMismatch("spatial PCA samples differ in shape".into()));
        }
        let positions = height * width;
        let mut moments = vec![Moments::new(positions); nc];
        for s in samples {
            let rows = channel_rows(s);
            for (c, m) in moments.iter_mut().enumerate() {
                m.add_rows(&DMatrix::from_row_slice(1, positions, &rows[c]));
            }
        }
        let channels = moments
            .iter()
            .map(|m| {
                let eig = sym_eig_desc(&m.covariance());
                let total: f64 = eig.values.iter().map(|v| v.max(0.0)).sum();
                // Variance at round-off level of the raw second moment is
                // treated as none at all.
                let keep: Vec<usize> = if total > VARIANCE_FLOOR * m.second_moment().trace() && total > 0.0 {
                    (0..positions).filter(|&i| eig.values[i].max(0.0) / total >= gamma).collect()
                } else {
                    Vec::new()
                };
                let mut components = DMatrix::zeros(keep.len(), positions);
                for (r, &i) in keep.iter().enumerate() {
                    components.row_mut(r).copy_from(&eig.vectors.row(i));
                }
                ChannelPca {
                    mean: m.mean(),
                    components,
                    eigenvalues: keep.iter().map(|&i| eig.values[i]).collect(),
                    shares: keep.iter().map(|&i| eig.values[i] / total).collect(),
                }
            })
            .collect();
        Ok(Self { height, width, gamma, channels })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels.len())
    }

    pub fn channels(&self) -> &[ChannelPca] {
        &self.channels
    }

    /// Dimension of the reduced space (the sum of retained components).
    pub fn dim(&self) -> usize {
        self.channels.iter().map(ChannelPca::retained).sum()
    }

    pub fn project(&self, t: &ImageTensor) -> Result<DVector<f64>> {
        if t.shape() != self.shape() {
            return Err(Error::DimensionMismatch(format!(
                "spatial PCA expects {:?}, got {:?}",
                self.shape(),
                t.shape()
            )));
        }
        let rows = channel_rows(t);
        let mut out = Vec::with_capacity(self.dim());
        for (pca, row) in self.channels.iter().zip(rows) {
            let centered = DVector::from_vec(row) - &pca.mean;
            out.extend((&pca.components * centered).iter());
        }
        Ok(DVector::from_vec(out))
    }

    pub fn unproject(&self, v: &DVector<f64>) -> Result<ImageTensor> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "spatial PCA vector must have {} entries, got {}",
                self.dim(),
                v.len()
            )));
        }
        let mut t = ImageTensor::zeros(self.height, self.width, self.channels.len());
        let mut offset = 0;
        for (c, pca) in self.channels.iter().enumerate() {
            let r = pca.retained();
            let scores = v.rows(offset, r);
            let map = pca.components.transpose() * scores + &pca.mean;
            offset += r;
            for (pos, &val) in map.iter().enumerate() {
                t.set(pos / self.width, pos % self.width, c, val);
            }
        }
        Ok(t)
    }
}

/// Splits a tensor into per-channel flattened spatial maps.
fn channel_rows(t: &ImageTensor) -> Vec<Vec<f64>> {
    let c = t.channels();
    let mut rows = vec![Vec::with_capacity(t.height() * t.width()); c];
    for chunk in t.data().chunks_exact(c.max(1)) {
        for (ch, &v) in chunk.iter().enumerate() {
            rows[ch].push(v);
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_tensors(n: usize, seed: u64) -> Vec<ImageTensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                ImageTensor::from_fn(3, 3, 2, |y, x, c| {
                    a * (y as f64 + 1.0) + b * (x as f64) * (c as f64 + 1.0) + 0.1 * rng.random::<f64>()
                })
            })
            .collect()
    }

    #[test]
    fn toy_two_dimensional_threshold() {
        // Independent coordinates with variances 0.95 and 0.05.
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let samples: Vec<_> = (0..20_000)
            .map(|_| {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                ImageTensor::new(1, 2, 1, vec![a * 0.95f64.sqrt(), b * 0.05f64.sqrt()]).unwrap()
            })
            .collect();
        let pca = SpatialPca::fit(&samples, 0.1).unwrap();
        assert_eq!(pca.dim(), 1);
        assert!((pca.channels[0].shares[0] - 0.95).abs() < 0.01);
        let pca = SpatialPca::fit(&samples, 0.01).unwrap();
        assert_eq!(pca.dim(), 2);
    }

    #[test]
    fn identical_tensors_retain_nothing() {
        let t = ImageTensor::from_fn(2, 2, 3, |y, x, c| (y + x + c) as f64);
        let pca = SpatialPca::fit(&vec![t.clone(); 5], 0.01).unwrap();
        assert_eq!(pca.dim(), 0);
        let back = pca.unproject(&DVector::zeros(0)).unwrap();
        assert!(back.data().iter().zip(t.data()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn round_trips() {
        let samples = random_tensors(200, 3);
        let pca = SpatialPca::fit(&samples, 0.001).unwrap();
        assert!(pca.dim() > 0);
        // Zero vector maps to the mean and back to zero.
        let mean_t = pca.unproject(&DVector::zeros(pca.dim())).unwrap();
        assert!(pca.project(&mean_t).unwrap().norm() < 1e-10);
        // Canonical basis vector gives the first component plus the mean.
        let mut e0 = DVector::zeros(pca.dim());
        e0[0] = 1.0;
        let t0 = pca.unproject(&e0).unwrap();
        for pos in 0..9 {
            let expected = pca.channels[0].components[(0, pos)] + pca.channels[0].mean[pos];
            assert!((t0.get(pos / 3, pos % 3, 0) - expected).abs() < 1e-12);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let v = DVector::from_fn(pca.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
            let back = pca.project(&pca.unproject(&v).unwrap()).unwrap();
            assert!((back - &v).amax() < 1e-10);
        }
        // unproject(project(x)) is the rank-limited reconstruction: projecting
        // it again changes nothing.
        let x = &samples[7];
        let rec = pca.unproject(&pca.project(x).unwrap()).unwrap();
        let again = pca.unproject(&pca.project(&rec).unwrap()).unwrap();
        assert!(rec.data().iter().zip(again.data()).all(|(a, b)| (a - b).abs() < 1e-10));
    }

    #[test]
    fn retained_shares_meet_threshold_and_rows_orthonormal() {
        let pca = SpatialPca::fit(&random_tensors(300, 5), 0.02).unwrap();
        for ch in &pca.channels {
            assert!(ch.shares.iter().all(|&s| s >= 0.02));
            let g = &ch.components * ch.components.transpose();
            assert!((g - DMatrix::identity(ch.retained(), ch.retained())).amax() < 1e-10);
        }
    }

    #[test]
    fn errors() {
        assert!(matches!(SpatialPca::fit(&[], 0.01), Err(Error::InsufficientSamples { .. })));
        let s = random_tensors(5, 1);
        assert!(matches!(SpatialPca::fit(&s, 0.0), Err(Error::InvalidConfig(_))));
        let pca = SpatialPca::fit(&s, 0.01).unwrap();
        assert!(pca.project(&ImageTensor::zeros(2, 2, 2)).is_err());
        assert!(pca.unproject(&DVector::zeros(pca.dim() + 1)).is_err());
    }
}
