//! Saab whitening units and the two-hop channel-wise cascade.
//!
//! A Saab unit splits each `N`-dimensional block into a DC coefficient (the
//! projection onto the unit constant vector) and `N - 1` AC coefficients given
//! by the eigenvectors of the DC-removed block second-moment matrix. The kernel
//! matrix is orthonormal, so the inverse (coloring) transform is its transpose.
//!
//! The cascade applies one Saab unit to the input blocks (hop 1), forwards the
//! `keep_low` highest-energy hop-1 channels, and applies a separate Saab unit to
//! each forwarded channel (hop 2, channel-wise). Hop-2 children are ranked
//! globally by `parent energy share x child energy share`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::{dc_complement, sign_pivot, sym_eig_desc, Moments};
use crate::tensor::{blocks_to_rows, rows_to_blocks, BlockSpec, ImageTensor, Shape};
use crate::{Error, Result};

/// Kernels and energies of one fitted Saab unit.
#[derive(Debug, Clone, PartialEq)]
pub struct SaabBasis {
    /// `N x N`, row 0 is the DC kernel, rows `1..` are AC kernels.
    pub(crate) kernels: DMatrix<f64>,
    /// DC energy followed by the AC eigenvalues (descending).
    pub(crate) energies: Vec<f64>,
}

impl SaabBasis {
    pub(crate) fn from_parts(kernels: DMatrix<f64>, energies: Vec<f64>) -> Result<Self> {
        if !kernels.is_square() || kernels.nrows() != energies.len() || energies.is_empty() {
            return Err(Error::Malformed("inconsistent Saab basis".into()));
        }
        Ok(Self { kernels, energies })
    }

    pub fn block_dim(&self) -> usize {
        self.energies.len()
    }

    pub fn kernels(&self) -> &DMatrix<f64> {
        &self.kernels
    }

    pub fn dc_kernel(&self) -> DVector<f64> {
        self.kernels.row(0).transpose()
    }

    /// `(N - 1) x N` AC kernel matrix.
    pub fn ac_kernels(&self) -> DMatrix<f64> {
        self.kernels.rows(1, self.block_dim() - 1).into_owned()
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    /// Energies divided by their total (all zero when the total is zero).
    pub fn energy_shares(&self) -> Vec<f64> {
        let total: f64 = self.energies.iter().sum();
        if total > 0.0 {
            self.energies.iter().map(|e| e / total).collect()
        } else {
            vec![0.0; self.energies.len()]
        }
    }
}

/// Fits a Saab unit on `blocks` (one block per row).
pub fn fit_saab(blocks: &DMatrix<f64>) -> Result<SaabBasis> {
    let mut m = Moments::new(blocks.ncols());
    m.add_rows(blocks);
    fit_saab_moments(&m)
}

/// Fits a Saab unit from accumulated block second moments.
pub fn fit_saab_moments(moments: &Moments) -> Result<SaabBasis> {
    let n = moments.dim();
    if n == 0 {
        return Err(Error::DimensionMismatch("Saab blocks must be non-empty".into()));
    }
    if moments.count < n {
        return Err(Error::InsufficientSamples { needed: n, got: moments.count });
    }
    let second = moments.second_moment();
    let dc = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let dc_energy = (dc.transpose() * &second * &dc)[(0, 0)].max(0.0);

    // PCA of the DC-removed blocks, expressed in an orthonormal basis of the DC
    // complement so AC kernels stay exactly orthogonal to DC. The AC mean is
    // taken to be zero.
    let q = dc_complement(n);
    let reduced = q.transpose() * &second * &q;
    let eig = sym_eig_desc(&reduced);
    let ac = &eig.vectors * q.transpose();

    let mut kernels = DMatrix::zeros(n, n);
    kernels.row_mut(0).copy_from(&dc.transpose());
    let mut energies = Vec::with_capacity(n);
    energies.push(dc_energy);
    for r in 0..n - 1 {
        let mut row = ac.row(r).into_owned();
        // Re-apply the sign convention in the original coordinates.
        let values: Vec<f64> = row.iter().copied().collect();
        if values[sign_pivot(&values)] < 0.0 {
            row = -row;
        }
        kernels.row_mut(r + 1).copy_from(&row);
        energies.push(eig.values[r].max(0.0));
    }
    Ok(SaabBasis { kernels, energies })
}

/// Forward Saab transform: each block becomes one spatial cell with `N`
/// channels ordered `[DC, AC_1, ...]`.
pub fn saab_forward(t: &ImageTensor, basis: &SaabBasis, spec: BlockSpec) -> Result<ImageTensor> {
    let n = spec.area() * t.channels();
    if n != basis.block_dim() {
        return Err(Error::DimensionMismatch(format!(
            "basis expects {}-dimensional blocks, input gives {n}",
            basis.block_dim()
        )));
    }
    let rows = blocks_to_rows(t, spec)?;
    let coeffs = rows * basis.kernels.transpose();
    let (oh, ow) = (t.height() / spec.block_h, t.width() / spec.block_w);
    rows_to_blocks(&coeffs, BlockSpec::square(1), oh, ow, n)
}

/// Inverse Saab transform (coloring). `t` must carry all `N` channels; zeroed
/// channels act as discarded ones.
pub fn saab_inverse(t: &ImageTensor, basis: &SaabBasis, spec: BlockSpec) -> Result<ImageTensor> {
    let n = basis.block_dim();
    if t.channels() != n {
        return Err(Error::DimensionMismatch(format!("inverse Saab expects {n} channels, got {}", t.channels())));
    }
    let area = spec.area();
    if area == 0 || !n.is_multiple_of(area) {
        return Err(Error::DimensionMismatch(format!(
            "{n}-dimensional basis does not match {}x{} blocks",
            spec.block_h, spec.block_w
        )));
    }
    let coeffs = blocks_to_rows(t, BlockSpec::square(1))?;
    let rows = coeffs * &basis.kernels;
    rows_to_blocks(&rows, spec, t.height() * spec.block_h, t.width() * spec.block_w, n / area)
}

/// Block layout and channel partition of one hop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HopConfig {
    pub block: BlockSpec,
    /// Channels forwarded to the next stage.
    pub keep_low: usize,
    /// Channels split off now and re-estimated during synthesis.
    pub keep_high: usize,
}

impl HopConfig {
    pub const fn new(block: usize, keep_low: usize, keep_high: usize) -> Self {
        Self { block: BlockSpec::square(block), keep_low, keep_high }
    }

    fn validate(&self, total: usize, hop: &str) -> Result<()> {
        if self.keep_low == 0 {
            return Err(Error::InvalidConfig(format!("{hop}: keep_low must be at least 1")));
        }
        if self.keep_low + self.keep_high > total {
            return Err(Error::InvalidConfig(format!(
                "{hop}: keep_low + keep_high = {} exceeds the {total} available channels",
                self.keep_low + self.keep_high
            )));
        }
        Ok(())
    }
}

/// The fitted two-hop cascade.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeModel {
    pub(crate) input_shape: (usize, usize, usize),
    pub(crate) cfg1: HopConfig,
    pub(crate) cfg2: HopConfig,
    pub(crate) hop1: SaabBasis,
    /// Hop-1 channel indices ranked by energy, highest first.
    pub(crate) hop1_order: Vec<usize>,
    /// One basis per forwarded hop-1 channel, in `hop1_order` order.
    pub(crate) hop2: Vec<SaabBasis>,
    /// Global ranking of hop-2 children as flat indices `slot * N2 + child`.
    pub(crate) channel_order: Vec<usize>,
}

/// Output of [`cascade_forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeOutput {
    /// Lowest-dimensional subspace: the `K_{2,l}` top-ranked hop-2 children.
    pub s4: ImageTensor,
    /// The `K_{1,h}` hop-1 channels ranked just below the forwarded ones.
    pub hf1: ImageTensor,
    /// The `K_{2,h}` hop-2 children ranked just below `s4`.
    pub hf2: ImageTensor,
}

impl CascadeModel {
    pub(crate) fn from_parts(
        input_shape: (usize, usize, usize),
        cfg1: HopConfig,
        cfg2: HopConfig,
        hop1: SaabBasis,
        hop1_order: Vec<usize>,
        hop2: Vec<SaabBasis>,
        channel_order: Vec<usize>,
    ) -> Result<Self> {
        let m = Self { input_shape, cfg1, cfg2, hop1, hop1_order, hop2, channel_order };
        m.check_layout().map_err(|e| Error::Malformed(e.to_string()))?;
        Ok(m)
    }

    fn check_layout(&self) -> Result<()> {
        let (h, w, c) = self.input_shape;
        cascade_shapes(h, w, c, &self.cfg1, &self.cfg2)?;
        let n1 = self.cfg1.block.area() * c;
        let n2 = self.cfg2.block.area();
        if self.hop1.block_dim() != n1 || !is_permutation(&self.hop1_order, n1) {
            return Err(Error::DimensionMismatch("hop-1 layout".into()));
        }
        if self.hop2.len() != self.cfg1.keep_low || self.hop2.iter().any(|b| b.block_dim() != n2) {
            return Err(Error::DimensionMismatch("hop-2 layout".into()));
        }
        if !is_permutation(&self.channel_order, self.cfg1.keep_low * n2) {
            return Err(Error::DimensionMismatch("hop-2 channel order".into()));
        }
        Ok(())
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.input_shape
    }

    pub fn hop1_config(&self) -> HopConfig {
        self.cfg1
    }

    pub fn hop2_config(&self) -> HopConfig {
        self.cfg2
    }

    pub fn hop1(&self) -> &SaabBasis {
        &self.hop1
    }

    pub fn hop1_order(&self) -> &[usize] {
        &self.hop1_order
    }

    pub fn hop2(&self) -> &[SaabBasis] {
        &self.hop2
    }

    pub fn channel_order(&self) -> &[usize] {
        &self.channel_order
    }

    /// Shape of the full hop-1 output (S_1).
    pub fn s1_shape(&self) -> (usize, usize, usize) {
        let (h, w, c) = self.input_shape;
        let b = self.cfg1.block;
        (h / b.block_h, w / b.block_w, b.area() * c)
    }

    /// Shape of the forwarded hop-1 channels.
    pub fn lf1_shape(&self) -> (usize, usize, usize) {
        let (h, w, _) = self.s1_shape();
        (h, w, self.cfg1.keep_low)
    }

    pub fn hf1_shape(&self) -> (usize, usize, usize) {
        let (h, w, _) = self.s1_shape();
        (h, w, self.cfg1.keep_high)
    }

    /// Shape of all hop-2 children before any are discarded.
    pub fn hop2_full_shape(&self) -> (usize, usize, usize) {
        let (h, w, _) = self.s1_shape();
        let b = self.cfg2.block;
        (h / b.block_h, w / b.block_w, b.area() * self.cfg1.keep_low)
    }

    pub fn s4_shape(&self) -> (usize, usize, usize) {
        let (h, w, _) = self.hop2_full_shape();
        (h, w, self.cfg2.keep_low)
    }

    pub fn hf2_shape(&self) -> (usize, usize, usize) {
        let (h, w, _) = self.hop2_full_shape();
        (h, w, self.cfg2.keep_high)
    }

    /// Energy share of every hop-2 child in `channel_order` order.
    pub fn ranked_child_energies(&self) -> Vec<f64> {
        let e = child_energies(&self.hop1, &self.hop1_order, &self.hop2);
        self.channel_order.iter().map(|&i| e[i]).collect()
    }

    /// Hop-1 analysis only.
    pub fn forward_hop1(&self, t: &ImageTensor) -> Result<ImageTensor> {
        if t.shape() != self.input_shape {
            return Err(Error::DimensionMismatch(format!(
                "model expects {:?} inputs, got {:?}",
                self.input_shape,
                t.shape()
            )));
        }
        saab_forward(t, &self.hop1, self.cfg1.block)
    }

    /// Reassembles the forwarded hop-1 channels from `s4` and `hf2`; hop-2
    /// children that were dropped are zero-filled.
    pub fn inverse_hop2(&self, s4: &ImageTensor, hf2: &ImageTensor) -> Result<ImageTensor> {
        expect_shape(s4, self.s4_shape(), "s4")?;
        expect_shape(hf2, self.hf2_shape(), "hf2")?;
        let (gh, gw, total) = self.hop2_full_shape();
        let n2 = self.cfg2.block.area();
        let mut children = ImageTensor::zeros(gh, gw, total);
        let kl = self.cfg2.keep_low;
        for y in 0..gh {
            for x in 0..gw {
                for (rank, &flat) in self.channel_order.iter().enumerate() {
                    let v = if rank < kl {
                        s4.get(y, x, rank)
                    } else if rank < kl + self.cfg2.keep_high {
                        hf2.get(y, x, rank - kl)
                    } else {
                        continue;
                    };
                    children.set(y, x, flat, v);
                }
            }
        }
        let parts = self
            .hop2
            .iter()
            .enumerate()
            .map(|(slot, basis)| {
                let idx: Vec<usize> = (slot * n2..(slot + 1) * n2).collect();
                saab_inverse(&children.select_channels(&idx)?, basis, self.cfg2.block)
            })
            .collect::<Result<Vec<_>>>()?;
        ImageTensor::stack_channels(&parts)
    }

    /// Inverse hop 1 from the forwarded channels and `hf1`; dropped hop-1
    /// channels are zero-filled.
    pub fn inverse_hop1(&self, lf1: &ImageTensor, hf1: &ImageTensor) -> Result<ImageTensor> {
        expect_shape(lf1, self.lf1_shape(), "lf1")?;
        expect_shape(hf1, self.hf1_shape(), "hf1")?;
        let (h, w, n1) = self.s1_shape();
        let kl = self.cfg1.keep_low;
        let mut s1 = ImageTensor::zeros(h, w, n1);
        for y in 0..h {
            for x in 0..w {
                for slot in 0..kl {
                    s1.set(y, x, self.hop1_order[slot], lf1.get(y, x, slot));
                }
                for j in 0..self.cfg1.keep_high {
                    s1.set(y, x, self.hop1_order[kl + j], hf1.get(y, x, j));
                }
            }
        }
        saab_inverse(&s1, &self.hop1, self.cfg1.block)
    }
}

fn expect_shape(t: &ImageTensor, shape: (usize, usize, usize), what: &str) -> Result<()> {
    if t.shape() != shape {
        return Err(Error::DimensionMismatch(format!("{what} must be {shape:?}, got {:?}", t.shape())));
    }
    Ok(())
}

fn is_permutation(v: &[usize], n: usize) -> bool {
    let mut seen = vec![false; n];
    v.len() == n && v.iter().all(|&i| i < n && !std::mem::replace(&mut seen[i], true))
}

fn rank_desc(energies: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..energies.len()).collect();
    order.sort_by(|&a, &b| energies[b].total_cmp(&energies[a]).then(a.cmp(&b)));
    order
}

fn child_energies(hop1: &SaabBasis, hop1_order: &[usize], hop2: &[SaabBasis]) -> Vec<f64> {
    let parent = hop1.energy_shares();
    hop2.iter()
        .enumerate()
        .flat_map(|(slot, basis)| {
            let p = parent[hop1_order[slot]];
            basis.energy_shares().into_iter().map(move |c| p * c)
        })
        .collect()
}

/// Validates the cascade geometry and returns `(S_1 shape, S_4 shape)`.
pub fn cascade_shapes(h: usize, w: usize, c: usize, cfg1: &HopConfig, cfg2: &HopConfig) -> Result<(Shape, Shape)> {
    let (b1, b2) = (cfg1.block, cfg2.block);
    if c == 0 || b1.area() == 0 || b2.area() == 0 {
        return Err(Error::InvalidConfig("empty blocks or channels".into()));
    }
    if !h.is_multiple_of(b1.block_h) || !w.is_multiple_of(b1.block_w) {
        return Err(Error::DimensionMismatch(format!("{h}x{w} input not divisible by hop-1 blocks")));
    }
    let (h1, w1) = (h / b1.block_h, w / b1.block_w);
    if h1 % b2.block_h != 0 || w1 % b2.block_w != 0 {
        return Err(Error::DimensionMismatch(format!("{h1}x{w1} S_1 grid not divisible by hop-2 blocks")));
    }
    let n1 = b1.area() * c;
    cfg1.validate(n1, "hop 1")?;
    cfg2.validate(cfg1.keep_low * b2.area(), "hop 2")?;
    Ok(((h1, w1, n1), (h1 / b2.block_h, w1 / b2.block_w, cfg2.keep_low)))
}

const FIT_CHUNK: usize = 64;

/// Fits both hops on `images`.
///
/// Block statistics are accumulated over fixed-size image chunks in parallel
/// and merged in order, so the result does not depend on the thread count.
pub fn fit_cascade(images: &[ImageTensor], cfg1: HopConfig, cfg2: HopConfig) -> Result<CascadeModel> {
    let first = images.first().ok_or(Error::InsufficientSamples { needed: 1, got: 0 })?;
    let shape = first.shape();
    if let Some(bad) = images.iter().find(|t| t.shape() != shape) {
        return Err(Error::DimensionMismatch(format!("all images must be {shape:?}, found {:?}", bad.shape())));
    }
    let (s1_shape, _) = cascade_shapes(shape.0, shape.1, shape.2, &cfg1, &cfg2)?;
    let n1 = s1_shape.2;

    let partial: Vec<Result<Moments>> = images
        .par_chunks(FIT_CHUNK)
        .map(|chunk| {
            let mut m = Moments::new(n1);
            for t in chunk {
                m.add_rows(&blocks_to_rows(t, cfg1.block)?);
            }
            Ok(m)
        })
        .collect();
    let mut moments = Moments::new(n1);
    for m in partial {
        moments.merge(&m?);
    }
    let hop1 = fit_saab_moments(&moments)?;
    let hop1_order = rank_desc(&hop1.energies);
    let forwarded = &hop1_order[..cfg1.keep_low];

    let n2 = cfg2.block.area();
    let partial: Vec<Result<Vec<Moments>>> = images
        .par_chunks(FIT_CHUNK)
        .map(|chunk| {
            let mut ms = vec![Moments::new(n2); forwarded.len()];
            for t in chunk {
                let s1 = saab_forward(t, &hop1, cfg1.block)?;
                for (slot, &ch) in forwarded.iter().enumerate() {
                    ms[slot].add_rows(&blocks_to_rows(&s1.channel(ch), cfg2.block)?);
                }
            }
            Ok(ms)
        })
        .collect();
    let mut per_slot = vec![Moments::new(n2); forwarded.len()];
    for ms in partial {
        for (acc, m) in per_slot.iter_mut().zip(ms?) {
            acc.merge(&m);
        }
    }
    let hop2 = per_slot.iter().map(fit_saab_moments).collect::<Result<Vec<_>>>()?;
    let channel_order = rank_desc(&child_energies(&hop1, &hop1_order, &hop2));

    Ok(CascadeModel { input_shape: shape, cfg1, cfg2, hop1, hop1_order, hop2, channel_order })
}

/// Splits an image into the seed subspace and the two high-frequency side
/// outputs. Channels ranked below `keep_low + keep_high` are dropped.
pub fn cascade_forward(t: &ImageTensor, m: &CascadeModel) -> Result<CascadeOutput> {
    let s1 = m.forward_hop1(t)?;
    let (kl1, kh1) = (m.cfg1.keep_low, m.cfg1.keep_high);
    let hf1 = s1.select_channels(&m.hop1_order[kl1..kl1 + kh1])?;
    let children = m
        .hop2
        .iter()
        .zip(&m.hop1_order[..kl1])
        .map(|(basis, &ch)| saab_forward(&s1.channel(ch), basis, m.cfg2.block))
        .collect::<Result<Vec<_>>>()?;
    let children = ImageTensor::stack_channels(&children)?;
    let (kl2, kh2) = (m.cfg2.keep_low, m.cfg2.keep_high);
    Ok(CascadeOutput {
        s4: children.select_channels(&m.channel_order[..kl2])?,
        hf2: children.select_channels(&m.channel_order[kl2..kl2 + kh2])?,
        hf1,
    })
}

/// Colors `s4` and the high-frequency side outputs back into an input-shaped
/// image: hop-2 inverse per parent channel, then hop-1 inverse.
pub fn cascade_inverse(
    s4: &ImageTensor,
    hf2: &ImageTensor,
    hf1: &ImageTensor,
    m: &CascadeModel,
) -> Result<ImageTensor> {
    let lf1 = m.inverse_hop2(s4, hf2)?;
    m.inverse_hop1(&lf1, hf1)
}
