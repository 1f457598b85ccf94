//! Seed-space density model.
//!
//! Training: spatial PCA of the seed tensors, k-means in the reduced space,
//! ICA per cluster, then cumulative histogram matching of every independent
//! component to N(0, 1). Sampling runs the chain backwards from white noise.

mod cdf;
mod ica;
mod kmeans;
mod spatial_pca;

pub use cdf::{normal_cdf, normal_quantile, CdfTable};
pub use ica::{fit_ica, IcaFit, IcaParams, UnmixingKind};
pub use kmeans::{kmeans, nearest, KMeansFit, KMeansParams};
pub use spatial_pca::{ChannelPca, SpatialPca};

use nalgebra::{DMatrix, DVector};
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::tensor::ImageTensor;
use crate::{Error, Result};

/// Density of one cluster: ICA plus one CDF table per independent component.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterDensity {
    pub ica: IcaFit,
    pub tables: Vec<CdfTable>,
}

impl ClusterDensity {
    /// Fits ICA and the per-component CDF tables on one cluster's members
    /// (one vector per row).
    pub fn fit(members: &DMatrix<f64>, params: IcaParams) -> Self {
        assert!(members.nrows() > 0, "cluster must have members");
        let ica = fit_ica(members, params);
        let comps: Vec<DVector<f64>> = members.row_iter().map(|r| ica.unmix(&r.transpose())).collect();
        let tables = (0..members.ncols()).map(|j| CdfTable::fit(comps.iter().map(|c| c[j]))).collect();
        Self { ica, tables }
    }

    /// Training direction: vector to standard-normal coordinates.
    pub fn to_gaussian(&self, v: &DVector<f64>) -> DVector<f64> {
        let s = self.ica.unmix(v);
        DVector::from_iterator(s.len(), s.iter().zip(&self.tables).map(|(&x, t)| t.gaussianize(x)))
    }

    /// Generation direction: inverse histogram matching, then inverse ICA.
    pub fn from_gaussian(&self, g: &DVector<f64>) -> DVector<f64> {
        let s = DVector::from_iterator(g.len(), g.iter().zip(&self.tables).map(|(&x, t)| t.degaussianize(x)));
        self.ica.mix(&s)
    }
}

/// Cluster centroids, priors and per-cluster densities in the reduced space.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub(crate) centroids: Vec<Vec<f64>>,
    pub(crate) priors: Vec<f64>,
    pub(crate) densities: Vec<ClusterDensity>,
}

impl ClusterModel {
    /// k-means (k-means++ seeding, 10 restarts) over `vectors` (one per row);
    /// priors are cluster sizes over the sample count. Densities are left
    /// empty; see [`ClusterModel::fit`].
    pub fn fit_clusters(vectors: &DMatrix<f64>, k: usize, seed: u64) -> Result<(Self, Vec<usize>)> {
        let m = vectors.nrows();
        if k == 0 || m < k {
            return Err(Error::InsufficientSamples { needed: k.max(1), got: m });
        }
        let points: Vec<Vec<f64>> = vectors.row_iter().map(|r| r.iter().copied().collect()).collect();
        let fit = kmeans(&points, KMeansParams::new(k, seed));
        let mut counts = vec![0usize; fit.centroids.len()];
        for &l in &fit.labels {
            counts[l] += 1;
        }
        let priors = counts.iter().map(|&c| c as f64 / m as f64).collect();
        Ok((Self { centroids: fit.centroids, priors, densities: Vec::new() }, fit.labels))
    }

    /// Clusters, then fits one density per cluster (in parallel; cluster `c`
    /// seeds its ICA with `seed + 1 + c`).
    pub fn fit(vectors: &DMatrix<f64>, k: usize, seed: u64) -> Result<(Self, Vec<usize>)> {
        let (mut model, labels) = Self::fit_clusters(vectors, k, seed)?;
        let dim = vectors.ncols();
        model.densities = (0..model.centroids.len())
            .into_par_iter()
            .map(|c| {
                let rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
                let members = DMatrix::from_fn(rows.len(), dim, |r, j| vectors[(rows[r], j)]);
                let params = IcaParams { seed: seed.wrapping_add(1 + c as u64), ..Default::default() };
                ClusterDensity::fit(&members, params)
            })
            .collect();
        Ok((model, labels))
    }

    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn dim(&self) -> usize {
        self.centroids.first().map_or(0, Vec::len)
    }

    pub fn centroids(&self) -> &[Vec<f64>] {
        &self.centroids
    }

    pub fn priors(&self) -> &[f64] {
        &self.priors
    }

    pub fn densities(&self) -> &[ClusterDensity] {
        &self.densities
    }

    /// Nearest centroid of `v`.
    pub fn assign(&self, v: &DVector<f64>) -> usize {
        nearest(v.as_slice(), &self.centroids).0
    }

    /// Draws a cluster index with probability equal to its prior.
    pub fn select_cluster<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        WeightedIndex::new(&self.priors).expect("priors are positive").sample(rng)
    }
}

/// The trained seed sampler: spatial PCA plus the cluster model.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedModel {
    pub(crate) pca: SpatialPca,
    pub(crate) clusters: ClusterModel,
}

/// Everything the training steps produce, kept for diagnostics and tests.
#[derive(Debug, Clone)]
pub struct SeedFit {
    pub model: SeedModel,
    /// Reduced vectors, one per row.
    pub vectors: DMatrix<f64>,
    pub labels: Vec<usize>,
}

impl SeedModel {
    pub fn fit(samples: &[ImageTensor], gamma: f64, k: usize, seed: u64) -> Result<SeedFit> {
        let pca = SpatialPca::fit(samples, gamma)?;
        let projected = samples.iter().map(|s| pca.project(s)).collect::<Result<Vec<_>>>()?;
        let dim = pca.dim();
        let vectors = DMatrix::from_fn(projected.len(), dim, |r, c| projected[r][c]);
        let (clusters, labels) = ClusterModel::fit(&vectors, k, seed)?;
        Ok(SeedFit { model: Self { pca, clusters }, vectors, labels })
    }

    pub(crate) fn from_parts(pca: SpatialPca, clusters: ClusterModel) -> Result<Self> {
        let d = pca.dim();
        let ok = !clusters.priors.is_empty()
            && clusters.priors.len() == clusters.centroids.len()
            && clusters.densities.len() == clusters.centroids.len()
            && clusters.centroids.iter().all(|c| c.len() == d)
            && clusters.densities.iter().all(|den| den.tables.len() == d && den.ica.mean.len() == d);
        if !ok {
            return Err(Error::Malformed("seed model dimensions are inconsistent".into()));
        }
        Ok(Self { pca, clusters })
    }

    pub fn pca(&self) -> &SpatialPca {
        &self.pca
    }

    pub fn clusters(&self) -> &ClusterModel {
        &self.clusters
    }

    /// Reduced dimension of the seed space.
    pub fn dim(&self) -> usize {
        self.pca.dim()
    }

    /// Draws one seed tensor: cluster by prior, white Gaussian noise, inverse
    /// histogram matching, inverse ICA, inverse spatial PCA.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ImageTensor {
        let c = self.clusters.select_cluster(rng);
        let g = DVector::from_iterator(self.dim(), (0..self.dim()).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let v = self.clusters.densities[c].from_gaussian(&g);
        self.pca.unproject(&v).expect("dimension fixed by the model")
    }
}
