//! Lloyd's k-means with k-means++ seeding and best-of-n restarts.

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KMeansParams {
    pub k: usize,
    pub restarts: usize,
    pub max_iters: usize,
    pub seed: u64,
}

impl KMeansParams {
    pub fn new(k: usize, seed: u64) -> Self {
        Self { k, restarts: 10, max_iters: 300, seed }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    /// Row-major `k x dim`.
    pub centroids: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index and squared distance of the nearest centroid (lowest index on ties).
pub fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let next = match WeightedIndex::new(&d2) {
            Ok(w) => w.sample(rng),
            // Every point coincides with a centroid already.
            Err(_) => rng.random_range(0..points.len()),
        };
        centroids.push(points[next].clone());
        let c = centroids.last().unwrap();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, c));
        }
    }
    centroids
}

fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>, max_iters: usize) -> KMeansFit {
    let k = centroids.len();
    let dim = points[0].len();
    let mut labels = vec![usize::MAX; points.len()];
    let mut iterations = 0;
    loop {
        let assigned: Vec<(usize, f64)> = points.par_iter().map(|p| nearest(p, &centroids)).collect();
        let changed = assigned.iter().zip(&labels).any(|(a, &l)| a.0 != l);
        for (l, a) in labels.iter_mut().zip(&assigned) {
            *l = a.0;
        }
        iterations += 1;

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut reseeded = false;
        for c in 0..k {
            if counts[c] == 0 {
                // Re-seed an empty cluster at the point farthest from its centroid.
                let (far, _) =
                    assigned.iter().enumerate().fold((0, -1.0), |b, (i, a)| if a.1 > b.1 { (i, a.1) } else { b });
                centroids[c] = points[far].clone();
                labels[far] = c;
                reseeded = true;
            } else {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        if (!changed && !reseeded) || iterations >= max_iters {
            break;
        }
    }
    let labels: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
    let inertia = points.iter().zip(&labels).map(|(p, &l)| sq_dist(p, &centroids[l])).sum();
    KMeansFit { centroids, labels, inertia, iterations }
}

/// Runs `restarts` seeded k-means fits and keeps the lowest inertia.
///
/// Restart `r` draws from the ChaCha stream `r` of `seed`, so the result is
/// independent of thread scheduling. Clusters left empty at the end are
/// removed, so the returned `k` can be smaller than requested.
pub fn kmeans(points: &[Vec<f64>], params: KMeansParams) -> KMeansFit {
    assert!(params.k >= 1 && points.len() >= params.k, "k-means needs 1 <= k <= points");
    let runs: Vec<KMeansFit> = (0..params.restarts.max(1))
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            rng.set_stream(r as u64);
            let init = plus_plus_init(points, params.k, &mut rng);
            lloyd(points, init, params.max_iters)
        })
        .collect();
    let mut best =
        runs.into_iter().reduce(|a, b| if b.inertia < a.inertia { b } else { a }).expect("at least one restart");

    let mut counts = vec![0usize; best.centroids.len()];
    for &l in &best.labels {
        counts[l] += 1;
    }
    if counts.contains(&0) {
        log::warn!("k-means finished with empty clusters; dropping them");
        let remap: Vec<Option<usize>> = counts
            .iter()
            .scan(0, |next, &c| {
                Some(if c > 0 {
                    *next += 1;
                    Some(*next - 1)
                } else {
                    None
                })
            })
            .collect();
        best.centroids = best.centroids.into_iter().zip(&counts).filter(|(_, &c)| c > 0).map(|(v, _)| v).collect();
        for l in &mut best.labels {
            *l = remap[*l].expect("labels only point at non-empty clusters");
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    fn blobs(n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let cx = if i % 2 == 0 { -5.0 } else { 5.0 };
                vec![cx + 0.5 * rng.sample::<f64, _>(StandardNormal), 2.0 + 0.5 * rng.sample::<f64, _>(StandardNormal)]
            })
            .collect()
    }

    #[test]
    fn two_separated_blobs() {
        let pts = blobs(1000, 1);
        let fit = kmeans(&pts, KMeansParams::new(2, 42));
        let mut cents = fit.centroids.clone();
        cents.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert!((cents[0][0] + 5.0).abs() < 0.1 && (cents[0][1] - 2.0).abs() < 0.1);
        assert!((cents[1][0] - 5.0).abs() < 0.1 && (cents[1][1] - 2.0).abs() < 0.1);
        let left = fit.labels.iter().filter(|&&l| l == fit.labels[0]).count();
        assert_eq!(left, 500);
    }

    #[test]
    fn single_cluster() {
        let pts = blobs(50, 2);
        let fit = kmeans(&pts, KMeansParams::new(1, 0));
        assert!(fit.labels.iter().all(|&l| l == 0));
        let mean_x = pts.iter().map(|p| p[0]).sum::<f64>() / 50.0;
        assert!((fit.centroids[0][0] - mean_x).abs() < 1e-12);
    }

    #[test]
    fn every_point_its_own_cluster() {
        let pts: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 * 3.0, (i * i) as f64]).collect();
        let fit = kmeans(&pts, KMeansParams::new(6, 5));
        assert!(fit.inertia.abs() < 1e-12);
        let mut labels = fit.labels.clone();
        labels.sort_unstable();
        assert_eq!(labels, vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn deterministic_given_seed() {
        let pts = blobs(300, 3);
        let a = kmeans(&pts, KMeansParams::new(4, 9));
        let b = kmeans(&pts, KMeansParams::new(4, 9));
        assert_eq!(a, b);
    }

    #[test]
    fn duplicate_points_drop_empty_clusters() {
        let pts = vec![vec![1.0, 1.0]; 5];
        let fit = kmeans(&pts, KMeansParams::new(3, 1));
        assert_eq!(fit.centroids.len(), 1);
        assert!(fit.labels.iter().all(|&l| l == 0));
    }
}
