//! Symmetric fixed-point ICA (log-cosh contrast).

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::{inv_sqrt_sym, sym_eig_desc};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcaParams {
    pub tol: f64,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for IcaParams {
    fn default() -> Self {
        Self { tol: 1e-4, max_iters: 500, seed: 0 }
    }
}

/// How a cluster's unmixing matrix was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnmixingKind {
    /// Converged ICA on top of per-cluster whitening.
    Ica = 0,
    /// ICA did not converge; whitening only.
    Whitening = 1,
    /// Too few members or a singular covariance; identity.
    Identity = 2,
}

impl UnmixingKind {
    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Self::Ica),
            1 => Some(Self::Whitening),
            2 => Some(Self::Identity),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcaFit {
    pub mean: DVector<f64>,
    pub unmixing: DMatrix<f64>,
    pub mixing: DMatrix<f64>,
    pub kind: UnmixingKind,
    pub iterations: usize,
}

impl IcaFit {
    pub fn identity(mean: DVector<f64>) -> Self {
        let d = mean.len();
        Self {
            mean,
            unmixing: DMatrix::identity(d, d),
            mixing: DMatrix::identity(d, d),
            kind: UnmixingKind::Identity,
            iterations: 0,
        }
    }

    /// Independent components of one sample.
    pub fn unmix(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.unmixing * (x - &self.mean)
    }

    pub fn mix(&self, s: &DVector<f64>) -> DVector<f64> {
        &self.mixing * s + &self.mean
    }
}

/// Smallest allowed covariance eigenvalue relative to the largest. Keeps the
/// unmixing condition number below 1e8.
const REL_EIG_FLOOR: f64 = 1e-14;

/// `(W W^T)^{-1/2} W`
fn sym_decorrelate(w: &DMatrix<f64>) -> DMatrix<f64> {
    let gram = w * w.transpose();
    match inv_sqrt_sym(&gram, 0.0) {
        Some(r) => r * w,
        None => w.clone(),
    }
}

/// Fits ICA on `x` (one sample per row). Falls back to identity unmixing when
/// there are fewer than `dim + 1` rows or the covariance is numerically
/// singular, and to whitening only when the iteration does not converge.
pub fn fit_ica(x: &DMatrix<f64>, params: IcaParams) -> IcaFit {
    let (n, d) = x.shape();
    let mean = if n > 0 { x.row_mean().transpose() } else { DVector::zeros(d) };
    if d == 0 || n < d + 1 {
        return IcaFit::identity(mean);
    }
    let mut xc = x.clone();
    for mut row in xc.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = xc.transpose() * &xc / n as f64;
    let eig = sym_eig_desc(&cov);
    let top = eig.values[0];
    if top.is_nan() || top <= 0.0 || eig.values[d - 1] <= top * REL_EIG_FLOOR {
        log::debug!("ICA: singular cluster covariance, using identity unmixing");
        return IcaFit::identity(mean);
    }
    let inv_sqrt = DVector::from_iterator(d, eig.values.iter().map(|v| 1.0 / v.sqrt()));
    let sqrt = DVector::from_iterator(d, eig.values.iter().map(|v| v.sqrt()));
    // whitening = diag(1/sqrt(l)) E^T, with E^T = eig.vectors
    let whitening = DMatrix::from_diagonal(&inv_sqrt) * &eig.vectors;
    let dewhitening = eig.vectors.transpose() * DMatrix::from_diagonal(&sqrt);
    let z = &xc * whitening.transpose();

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut w = sym_decorrelate(&DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(&mut rng)));
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..params.max_iters {
        iterations = it + 1;
        let y = &z * w.transpose();
        let g = y.map(f64::tanh);
        let g_prime_mean =
            DVector::from_iterator(d, g.column_iter().map(|c| c.iter().map(|t| 1.0 - t * t).sum::<f64>() / n as f64));
        let next = g.transpose() * &z / n as f64 - DMatrix::from_diagonal(&g_prime_mean) * &w;
        let next = sym_decorrelate(&next);
        let lim = (&next * w.transpose()).diagonal().iter().map(|v| (v.abs() - 1.0).abs()).fold(0.0, f64::max);
        w = next;
        if lim < params.tol {
            converged = true;
            break;
        }
    }
    if !converged || !w.iter().all(|v| v.is_finite()) {
        log::warn!("ICA did not converge in {} iterations; using whitening only", params.max_iters);
        return IcaFit { mean, unmixing: whitening, mixing: dewhitening, kind: UnmixingKind::Whitening, iterations };
    }
    IcaFit {
        mean,
        unmixing: &w * whitening,
        // W is orthogonal, so the inverse is dewhitening * W^T.
        mixing: dewhitening * w.transpose(),
        kind: UnmixingKind::Ica,
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn rotated_uniform_square_axes_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let theta = 30f64.to_radians();
        let (c, s) = (theta.cos(), theta.sin());
        let rot = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        let n = 5000;
        let src = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
        let x = &src * rot.transpose();
        let fit = fit_ica(&x, IcaParams { seed: 3, ..Default::default() });
        assert_eq!(fit.kind, UnmixingKind::Ica);
        // Estimated sources are unmixing * rot * true sources, so each row of
        // unmixing * rot must point along one axis.
        let m = &fit.unmixing * &rot;
        for row in m.row_iter() {
            let (a, b) = (row[0].abs(), row[1].abs());
            let angle = a.min(b).atan2(a.max(b)).to_degrees();
            assert!(angle < 5.0, "axis misaligned by {angle} degrees");
        }
        assert!((&fit.unmixing * &fit.mixing - DMatrix::identity(2, 2)).amax() < 1e-10);
    }

    #[test]
    fn gaussian_members_give_orthogonal_unmixing() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = DMatrix::from_fn(2000, 3, |_, _| StandardNormal.sample(&mut rng));
        let fit = fit_ica(&x, IcaParams { seed: 1, max_iters: 500, tol: 1e-4 });
        let g = &fit.unmixing * fit.unmixing.transpose();
        assert!((g - DMatrix::identity(3, 3)).amax() < 0.1);
    }

    #[test]
    fn small_cluster_falls_back_to_identity() {
        let x = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 2.0, 5.0]);
        let fit = fit_ica(&x, IcaParams::default());
        assert_eq!(fit.kind, UnmixingKind::Identity);
        assert_eq!(fit.unmixing, DMatrix::identity(3, 3));
        assert!((fit.mean[0] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn singular_covariance_falls_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = DMatrix::from_fn(100, 3, |r, c| if c == 2 { 0.0 } else { (r as f64) * rng.random::<f64>() });
        assert_eq!(fit_ica(&x, IcaParams::default()).kind, UnmixingKind::Identity);
    }

    #[test]
    fn mix_inverts_unmix() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = DMatrix::from_fn(400, 4, |_, c| rng.random::<f64>().powi(c as i32 + 1));
        let fit = fit_ica(&x, IcaParams::default());
        for r in 0..20 {
            let v = x.row(r).transpose();
            assert!((fit.mix(&fit.unmix(&v)) - &v).amax() < 1e-10);
        }
    }

    #[test]
    fn non_convergence_uses_whitening() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = DMatrix::from_fn(300, 3, |_, _| rng.random::<f64>());
        let fit = fit_ica(&x, IcaParams { tol: 0.0, max_iters: 2, seed: 0 });
        assert_eq!(fit.kind, UnmixingKind::Whitening);
        let cov = {
            let mut y = DMatrix::zeros(300, 3);
            for r in 0..300 {
                y.row_mut(r).copy_from(&fit.unmix(&x.row(r).transpose()).transpose());
            }
            y.transpose() * &y / 300.0
        };
        assert!((cov - DMatrix::identity(3, 3)).amax() < 1e-10);
    }
}
