//! Locally linear embedding over small spatial regions.
//!
//! A codebook pairs low-frequency region features of the training set with the
//! high-frequency features at the same place. A generated low-frequency query
//! is rebuilt as an affine combination of its nearest bank rows; the same
//! weights applied to the paired high-frequency rows estimate the missing
//! detail, and the rebuilt query replaces the original (projecting it onto the
//! training manifold).

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::sym_eig_desc;
use crate::tensor::ImageTensor;
use crate::{Error, Result};

/// Upper bound on the neighbor count.
pub const MAX_NEIGHBORS: usize = 3;

/// Neighbors farther than this multiple of the nearest distance are dropped.
pub const ADAPTIVE_RATIO: f64 = 3.0;

/// Eigenvalues of the local Gram matrix at or below this fraction of its trace
/// count as zero.
const GRAM_NULL_TOL: f64 = 1e-10;

/// Spatial window used to tile a feature grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionSpec {
    Window {
        h: usize,
        w: usize,
    },
    /// One codebook per grid location.
    PerLocation,
}

impl RegionSpec {
    pub const fn square(size: usize) -> Self {
        RegionSpec::Window { h: size, w: size }
    }

    /// Window size clipped to the grid.
    pub fn size_on(&self, grid_h: usize, grid_w: usize) -> (usize, usize) {
        match *self {
            RegionSpec::Window { h, w } => (h.clamp(1, grid_h), w.clamp(1, grid_w)),
            RegionSpec::PerLocation => (1, 1),
        }
    }

    fn code(&self) -> (usize, usize) {
        match *self {
            RegionSpec::Window { h, w } => (h, w),
            RegionSpec::PerLocation => (0, 0),
        }
    }

    pub(crate) fn from_code(h: usize, w: usize) -> Self {
        if h == 0 || w == 0 {
            RegionSpec::PerLocation
        } else {
            RegionSpec::Window { h, w }
        }
    }
}

/// Region start offsets along one axis: non-overlapping steps of `size`, plus a
/// final region flush with the far edge when `size` does not divide `len`.
pub fn region_starts(len: usize, size: usize) -> Vec<usize> {
    let size = size.clamp(1, len.max(1));
    let mut starts: Vec<usize> = (0..).map(|i| i * size).take_while(|s| s + size <= len).collect();
    if starts.last().is_none_or(|&s| s + size < len) {
        starts.push(len - size);
    }
    starts
}

/// Region anchors `(row, col)` in raster order; full non-overlapping regions
/// first along each axis, edge-flush regions last.
pub fn region_anchors(grid_h: usize, grid_w: usize, region: RegionSpec) -> Vec<(usize, usize)> {
    let (rh, rw) = region.size_on(grid_h, grid_w);
    let ys = region_starts(grid_h, rh);
    let xs = region_starts(grid_w, rw);
    ys.iter().flat_map(|&y| xs.iter().map(move |&x| (y, x))).collect()
}

fn gather(t: &ImageTensor, y: usize, x: usize, rh: usize, rw: usize, out: &mut Vec<f64>) {
    let c = t.channels();
    for dy in 0..rh {
        for dx in 0..rw {
            for ch in 0..c {
                out.push(t.get(y + dy, x + dx, ch));
            }
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Paired low/high-frequency training features of one region.
#[derive(Debug, Clone, PartialEq)]
pub struct LleCodebook {
    pub(crate) d_lf: usize,
    pub(crate) d_hf: usize,
    /// Row-major `entries x d_lf`.
    pub(crate) lf_bank: Vec<f64>,
    /// Row-major `entries x d_hf`.
    pub(crate) hf_bank: Vec<f64>,
    pub(crate) k_max: usize,
}

/// Result of [`LleCodebook::recover`].
#[derive(Debug, Clone, PartialEq)]
pub struct Recovery {
    pub neighbors: Vec<usize>,
    pub weights: Vec<f64>,
    pub adjusted_lf: Vec<f64>,
    pub estimated_hf: Vec<f64>,
}

impl LleCodebook {
    /// Builds a codebook from paired rows.
    pub fn new(lf: &DMatrix<f64>, hf: &DMatrix<f64>, k_max: usize) -> Result<Self> {
        check_k_max(k_max)?;
        if lf.nrows() == 0 {
            return Err(Error::InsufficientSamples { needed: 1, got: 0 });
        }
        if lf.nrows() != hf.nrows() {
            return Err(Error::DimensionMismatch(format!("{} LF rows but {} HF rows", lf.nrows(), hf.nrows())));
        }
        let row_major = |m: &DMatrix<f64>| m.transpose().as_slice().to_vec();
        Ok(Self { d_lf: lf.ncols(), d_hf: hf.ncols(), lf_bank: row_major(lf), hf_bank: row_major(hf), k_max })
    }

    pub(crate) fn from_flat(
        d_lf: usize,
        d_hf: usize,
        lf_bank: Vec<f64>,
        hf_bank: Vec<f64>,
        k_max: usize,
    ) -> Result<Self> {
        check_k_max(k_max).map_err(|e| Error::Malformed(e.to_string()))?;
        let entries = lf_bank.len().checked_div(d_lf).unwrap_or(0);
        if d_lf == 0 || entries == 0 || lf_bank.len() != entries * d_lf || hf_bank.len() != entries * d_hf {
            return Err(Error::Malformed("codebook banks are inconsistent".into()));
        }
        Ok(Self { d_lf, d_hf, lf_bank, hf_bank, k_max })
    }

    pub fn len(&self) -> usize {
        self.lf_bank.len() / self.d_lf
    }

    pub fn is_empty(&self) -> bool {
        self.lf_bank.is_empty()
    }

    pub fn d_lf(&self) -> usize {
        self.d_lf
    }

    pub fn d_hf(&self) -> usize {
        self.d_hf
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn lf_row(&self, i: usize) -> &[f64] {
        &self.lf_bank[i * self.d_lf..(i + 1) * self.d_lf]
    }

    pub fn hf_row(&self, i: usize) -> &[f64] {
        &self.hf_bank[i * self.d_hf..(i + 1) * self.d_hf]
    }

    /// The up-to-`k_max` nearest bank rows (exact scan, ties by index) after
    /// the adaptive cut: rows farther than 3x the nearest distance are dropped.
    /// Returns `(index, distance)` pairs, nearest first.
    pub fn neighbors(&self, query: &[f64]) -> Vec<(usize, f64)> {
        assert_eq!(query.len(), self.d_lf, "query dimension mismatch");
        let mut best: Vec<(usize, f64)> = Vec::with_capacity(self.k_max + 1);
        for i in 0..self.len() {
            let d = sq_dist(query, self.lf_row(i));
            if best.len() == self.k_max && d >= best[best.len() - 1].1 {
                continue;
            }
            let pos = best.partition_point(|&(_, bd)| bd <= d);
            best.insert(pos, (i, d));
            best.truncate(self.k_max);
        }
        let nearest = best[0].1.sqrt();
        best.into_iter().map(|(i, d2)| (i, d2.sqrt())).filter(|&(_, d)| d <= ADAPTIVE_RATIO * nearest).collect()
    }

    /// Rebuilds `query` from its nearest bank rows and transfers the weights to
    /// the paired high-frequency rows.
    pub fn recover(&self, query: &[f64]) -> Recovery {
        let nbrs = self.neighbors(query);
        let rows: Vec<&[f64]> = nbrs.iter().map(|&(i, _)| self.lf_row(i)).collect();
        let weights = lle_weights(query, &rows);
        let mut adjusted_lf = vec![0.0; self.d_lf];
        let mut estimated_hf = vec![0.0; self.d_hf];
        for (&(i, _), &w) in nbrs.iter().zip(&weights) {
            for (a, v) in adjusted_lf.iter_mut().zip(self.lf_row(i)) {
                *a += w * v;
            }
            for (a, v) in estimated_hf.iter_mut().zip(self.hf_row(i)) {
                *a += w * v;
            }
        }
        Recovery { neighbors: nbrs.into_iter().map(|(i, _)| i).collect(), weights, adjusted_lf, estimated_hf }
    }
}

fn check_k_max(k_max: usize) -> Result<()> {
    if k_max == 0 || k_max > MAX_NEIGHBORS {
        return Err(Error::InvalidConfig(format!("neighbor bound must be in 1..={MAX_NEIGHBORS}, got {k_max}")));
    }
    Ok(())
}

/// Affine reconstruction weights of `query` from `neighbors`.
///
/// Minimizes `|query - sum w_i n_i|^2` subject to `sum w_i = 1`. When the
/// minimizer is not unique (duplicate neighbors, more neighbors than
/// dimensions) the minimum-norm one is returned; this is the limit of the
/// usual ridge-regularized Gram solve as the ridge goes to zero.
pub fn lle_weights(query: &[f64], neighbors: &[&[f64]]) -> Vec<f64> {
    let k = neighbors.len();
    assert!(k >= 1, "need at least one neighbor");
    if k == 1 {
        return vec![1.0];
    }
    let diffs: Vec<Vec<f64>> = neighbors.iter().map(|n| query.iter().zip(*n).map(|(q, v)| q - v).collect()).collect();
    let gram = DMatrix::from_fn(k, k, |i, j| diffs[i].iter().zip(&diffs[j]).map(|(a, b)| a * b).sum());
    let uniform = vec![1.0 / k as f64; k];
    let trace: f64 = gram.trace();
    if trace.is_nan() || trace <= 0.0 {
        return uniform;
    }
    let eig = sym_eig_desc(&gram);
    let tol = GRAM_NULL_TOL * trace;
    let ones_proj: Vec<f64> = (0..k).map(|r| eig.vectors.row(r).sum()).collect();

    // Exact reconstruction exists iff some null direction has a nonzero sum.
    let null_mass: f64 = (0..k).filter(|&r| eig.values[r] <= tol).map(|r| ones_proj[r].powi(2)).sum();
    let mut w = vec![0.0; k];
    if null_mass > 1e-12 {
        for r in (0..k).filter(|&r| eig.values[r] <= tol) {
            for (j, wj) in w.iter_mut().enumerate() {
                *wj += ones_proj[r] * eig.vectors[(r, j)];
            }
        }
    } else {
        for r in (0..k).filter(|&r| eig.values[r] > tol) {
            let scale = ones_proj[r] / eig.values[r];
            for (j, wj) in w.iter_mut().enumerate() {
                *wj += scale * eig.vectors[(r, j)];
            }
        }
    }
    let sum: f64 = w.iter().sum();
    if !sum.is_finite() || sum.abs() < f64::EPSILON {
        return uniform;
    }
    w.iter().map(|v| v / sum).collect()
}

/// One codebook per region of a tiled feature grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionCodebooks {
    pub(crate) grid: (usize, usize),
    pub(crate) lf_channels: usize,
    pub(crate) hf_channels: usize,
    pub(crate) region: RegionSpec,
    pub(crate) books: Vec<LleCodebook>,
}

impl RegionCodebooks {
    /// Builds codebooks from paired LF/HF tensors (same grid). Entry `i` of
    /// every codebook comes from training pair `i`.
    pub fn build(lf: &[ImageTensor], hf: &[ImageTensor], region: RegionSpec, k_max: usize) -> Result<Self> {
        check_k_max(k_max)?;
        if lf.is_empty() {
            return Err(Error::InsufficientSamples { needed: 1, got: 0 });
        }
        if lf.len() != hf.len() {
            return Err(Error::DimensionMismatch(format!("{} LF tensors but {} HF tensors", lf.len(), hf.len())));
        }
        let (gh, gw, lc) = lf[0].shape();
        let hc = hf[0].channels();
        if lc == 0 {
            return Err(Error::DimensionMismatch("LF tensors have no channels".into()));
        }
        if lf.iter().any(|t| t.shape() != (gh, gw, lc)) || hf.iter().any(|t| t.shape() != (gh, gw, hc)) {
            return Err(Error::DimensionMismatch("codebook tensors differ in shape".into()));
        }
        let (rh, rw) = region.size_on(gh, gw);
        let books = region_anchors(gh, gw, region)
            .into_par_iter()
            .map(|(y, x)| {
                let mut lf_bank = Vec::with_capacity(lf.len() * rh * rw * lc);
                let mut hf_bank = Vec::with_capacity(lf.len() * rh * rw * hc);
                for (l, h) in lf.iter().zip(hf) {
                    gather(l, y, x, rh, rw, &mut lf_bank);
                    gather(h, y, x, rh, rw, &mut hf_bank);
                }
                LleCodebook { d_lf: rh * rw * lc, d_hf: rh * rw * hc, lf_bank, hf_bank, k_max }
            })
            .collect();
        Ok(Self { grid: (gh, gw), lf_channels: lc, hf_channels: hc, region, books })
    }

    pub(crate) fn from_parts(
        grid: (usize, usize),
        lf_channels: usize,
        hf_channels: usize,
        region: RegionSpec,
        books: Vec<LleCodebook>,
    ) -> Result<Self> {
        let (rh, rw) = region.size_on(grid.0, grid.1);
        let ok = grid.0 > 0
            && grid.1 > 0
            && books.len() == region_anchors(grid.0, grid.1, region).len()
            && books.iter().all(|b| b.d_lf == rh * rw * lf_channels && b.d_hf == rh * rw * hf_channels);
        if !ok {
            return Err(Error::Malformed("region codebooks do not match their grid".into()));
        }
        Ok(Self { grid, lf_channels, hf_channels, region, books })
    }

    pub fn region(&self) -> RegionSpec {
        self.region
    }

    pub(crate) fn region_code(&self) -> (usize, usize) {
        self.region.code()
    }

    pub fn books(&self) -> &[LleCodebook] {
        &self.books
    }

    pub fn grid(&self) -> (usize, usize) {
        self.grid
    }

    pub fn lf_channels(&self) -> usize {
        self.lf_channels
    }

    pub fn hf_channels(&self) -> usize {
        self.hf_channels
    }

    pub fn entries(&self) -> usize {
        self.books.first().map_or(0, LleCodebook::len)
    }

    /// Runs [`LleCodebook::recover`] on every region of `lf` and reassembles
    /// the adjusted LF and estimated HF grids, averaging where regions overlap.
    pub fn recover(&self, lf: &ImageTensor) -> Result<(ImageTensor, ImageTensor)> {
        let (gh, gw) = self.grid;
        if lf.shape() != (gh, gw, self.lf_channels) {
            return Err(Error::DimensionMismatch(format!(
                "LLE query must be {:?}, got {:?}",
                (gh, gw, self.lf_channels),
                lf.shape()
            )));
        }
        let (rh, rw) = self.region.size_on(gh, gw);
        let mut lf_sum = ImageTensor::zeros(gh, gw, self.lf_channels);
        let mut hf_sum = ImageTensor::zeros(gh, gw, self.hf_channels);
        let mut counts = vec![0u32; gh * gw];
        let mut query = Vec::with_capacity(rh * rw * self.lf_channels);
        for ((y, x), book) in region_anchors(gh, gw, self.region).into_iter().zip(&self.books) {
            query.clear();
            gather(lf, y, x, rh, rw, &mut query);
            let rec = book.recover(&query);
            let (mut li, mut hi) = (0, 0);
            for dy in 0..rh {
                for dx in 0..rw {
                    counts[(y + dy) * gw + x + dx] += 1;
                    for c in 0..self.lf_channels {
                        let v = lf_sum.get(y + dy, x + dx, c) + rec.adjusted_lf[li];
                        lf_sum.set(y + dy, x + dx, c, v);
                        li += 1;
                    }
                    for c in 0..self.hf_channels {
                        let v = hf_sum.get(y + dy, x + dx, c) + rec.estimated_hf[hi];
                        hf_sum.set(y + dy, x + dx, c, v);
                        hi += 1;
                    }
                }
            }
        }
        for (t, nc) in [(&mut lf_sum, self.lf_channels), (&mut hf_sum, self.hf_channels)] {
            for (pos, chunk) in t.data_mut().chunks_exact_mut(nc.max(1)).enumerate() {
                if nc == 0 {
                    break;
                }
                let n = f64::from(counts[pos]);
                for v in chunk {
                    *v /= n;
                }
            }
        }
        Ok((lf_sum, hf_sum))
    }
}
