//! Dense `(h, w, c)` image tensors and non-overlapping block gather/scatter.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// `(height, width, channels)`.
pub type Shape = (usize, usize, usize);

/// A dense grid of real-valued responses stored row-major in `(h, w, c)` order.
///
/// Every subspace of the model, from raw pixels down to the seed space, is held
/// in this type.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::DimensionMismatch(format!(
                "tensor spatial size must be positive, got {height}x{width}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::DimensionMismatch(format!(
                "{height}x{width}x{channels} tensor needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self { height, width, channels, data })
    }

    /// A zero-filled tensor. `channels` may be 0, which is how an empty
    /// high-frequency side output is represented.
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        assert!(height > 0 && width > 0, "tensor spatial size must be positive");
        Self { height, width, channels, data: vec![0.0; height * width * channels] }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut t = Self::zeros(height, width, channels);
        for h in 0..height {
            for w in 0..width {
                for c in 0..channels {
                    t.data[(h * width + w) * channels + c] = f(h, w, c);
                }
            }
        }
        t
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    fn index(&self, h: usize, w: usize, c: usize) -> usize {
        (h * self.width + w) * self.channels + c
    }

    #[inline]
    pub fn get(&self, h: usize, w: usize, c: usize) -> f64 {
        self.data[self.index(h, w, c)]
    }

    #[inline]
    pub fn set(&mut self, h: usize, w: usize, c: usize, v: f64) {
        let i = self.index(h, w, c);
        self.data[i] = v;
    }

    /// Copies one channel out as a single-channel tensor.
    pub fn channel(&self, c: usize) -> ImageTensor {
        assert!(c < self.channels);
        Self::from_fn(self.height, self.width, 1, |h, w, _| self.get(h, w, c))
    }

    /// Builds a tensor whose channel `i` is channel `indices[i]` of `self`.
    pub fn select_channels(&self, indices: &[usize]) -> Result<ImageTensor> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.channels) {
            return Err(Error::DimensionMismatch(format!("channel {bad} out of range for {} channels", self.channels)));
        }
        Ok(Self::from_fn(self.height, self.width, indices.len(), |h, w, c| self.get(h, w, indices[c])))
    }

    /// Stacks single- or multi-channel tensors of identical spatial size along
    /// the channel axis.
    pub fn stack_channels(parts: &[ImageTensor]) -> Result<ImageTensor> {
        let first = parts.first().ok_or_else(|| Error::DimensionMismatch("no tensors to stack".into()))?;
        let (h, w) = (first.height, first.width);
        if parts.iter().any(|p| p.height != h || p.width != w) {
            return Err(Error::DimensionMismatch("stacked tensors differ in spatial size".into()));
        }
        let channels: usize = parts.iter().map(|p| p.channels).sum();
        let mut data = Vec::with_capacity(h * w * channels);
        for pos in 0..h * w {
            for p in parts {
                data.extend_from_slice(&p.data[pos * p.channels..(pos + 1) * p.channels]);
            }
        }
        Ok(Self { height: h, width: w, channels, data })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, stage: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(stage))
        }
    }

    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }
}

/// Non-overlapping block layout: stride always equals the block size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub block_h: usize,
    pub block_w: usize,
}

impl BlockSpec {
    pub const fn new(block_h: usize, block_w: usize) -> Self {
        Self { block_h, block_w }
    }

    pub const fn square(size: usize) -> Self {
        Self::new(size, size)
    }

    pub fn stride_h(&self) -> usize {
        self.block_h
    }

    pub fn stride_w(&self) -> usize {
        self.block_w
    }

    pub fn area(&self) -> usize {
        self.block_h * self.block_w
    }

    fn check(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        if self.block_h == 0 || self.block_w == 0 {
            return Err(Error::DimensionMismatch("block size must be positive".into()));
        }
        if !height.is_multiple_of(self.block_h) || !width.is_multiple_of(self.block_w) {
            return Err(Error::DimensionMismatch(format!(
                "{height}x{width} grid is not divisible into {}x{} blocks",
                self.block_h, self.block_w
            )));
        }
        Ok((height / self.block_h, width / self.block_w))
    }
}

/// Gathers every block of `t` into one matrix row, blocks in raster order and
/// each row laid out `(dy, dx, c)`.
pub fn blocks_to_rows(t: &ImageTensor, spec: BlockSpec) -> Result<DMatrix<f64>> {
    let (gh, gw) = spec.check(t.height, t.width)?;
    let cols = spec.area() * t.channels;
    let mut m = DMatrix::zeros(gh * gw, cols);
    for by in 0..gh {
        for bx in 0..gw {
            let row = by * gw + bx;
            let mut col = 0;
            for dy in 0..spec.block_h {
                let start = t.index(by * spec.block_h + dy, bx * spec.block_w, 0);
                for &v in &t.data[start..start + spec.block_w * t.channels] {
                    m[(row, col)] = v;
                    col += 1;
                }
            }
        }
    }
    Ok(m)
}

/// Inverse of [`blocks_to_rows`]: scatters rows back into an
/// `out_h x out_w x out_c` tensor.
pub fn rows_to_blocks(
    m: &DMatrix<f64>,
    spec: BlockSpec,
    out_h: usize,
    out_w: usize,
    out_c: usize,
) -> Result<ImageTensor> {
    let (gh, gw) = spec.check(out_h, out_w)?;
    if m.nrows() != gh * gw || m.ncols() != spec.area() * out_c {
        return Err(Error::DimensionMismatch(format!(
            "expected a {}x{} block matrix, got {}x{}",
            gh * gw,
            spec.area() * out_c,
            m.nrows(),
            m.ncols()
        )));
    }
    let mut t = ImageTensor::zeros(out_h, out_w, out_c);
    for by in 0..gh {
        for bx in 0..gw {
            let row = by * gw + bx;
            let mut col = 0;
            for dy in 0..spec.block_h {
                let start = t.index(by * spec.block_h + dy, bx * spec.block_w, 0);
                for v in &mut t.data[start..start + spec.block_w * out_c] {
                    *v = m[(row, col)];
                    col += 1;
                }
            }
        }
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_block_is_identity_layout() {
        let t = ImageTensor::new(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let m = blocks_to_rows(&t, BlockSpec::square(2)).unwrap();
        assert_eq!(m.shape(), (1, 4));
        assert_eq!(m.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(rows_to_blocks(&m, BlockSpec::square(2), 2, 2, 1).unwrap(), t);
    }

    #[test]
    fn zero_tensor_gives_zero_rows() {
        let t = ImageTensor::zeros(4, 4, 1);
        let m = blocks_to_rows(&t, BlockSpec::square(2)).unwrap();
        assert_eq!(m.shape(), (4, 4));
        assert!(m.iter().all(|&v| v == 0.0));
        let back = rows_to_blocks(&DMatrix::zeros(4, 4), BlockSpec::square(2), 4, 4, 1).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn tall_tensor_raster_order() {
        // 4x2 grid holding 0..7 row-major: the top 2x2 block is 0,1,2,3.
        let t = ImageTensor::new(4, 2, 1, (0..8).map(f64::from).collect()).unwrap();
        let m = blocks_to_rows(&t, BlockSpec::square(2)).unwrap();
        let expected = DMatrix::from_row_slice(2, 4, &[0., 1., 2., 3., 4., 5., 6., 7.]);
        assert_eq!(m, expected);
        assert_eq!(rows_to_blocks(&m, BlockSpec::square(2), 4, 2, 1).unwrap(), t);
    }

    #[test]
    fn multichannel_block_layout() {
        let t = ImageTensor::from_fn(2, 4, 2, |h, w, c| (100 * h + 10 * w + c) as f64);
        let m = blocks_to_rows(&t, BlockSpec::square(2)).unwrap();
        assert_eq!(m.shape(), (2, 8));
        let second: Vec<f64> = m.row(1).iter().copied().collect();
        assert_eq!(second, vec![20., 21., 30., 31., 120., 121., 130., 131.]);
    }

    #[test]
    fn random_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t = ImageTensor::from_fn(14, 14, 4, |_, _, _| rng.random::<f64>() * 2.0 - 1.0);
        let m = blocks_to_rows(&t, BlockSpec::square(2)).unwrap();
        assert_eq!(m.shape(), (49, 16));
        let back = rows_to_blocks(&m, BlockSpec::square(2), 14, 14, 4).unwrap();
        assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn divisibility_errors() {
        let t = ImageTensor::zeros(5, 4, 1);
        assert!(matches!(blocks_to_rows(&t, BlockSpec::square(2)), Err(Error::DimensionMismatch(_))));
        let m = DMatrix::zeros(3, 4);
        assert!(rows_to_blocks(&m, BlockSpec::square(2), 4, 4, 1).is_err());
    }

    #[test]
    fn bad_construction() {
        assert!(ImageTensor::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(ImageTensor::new(0, 2, 1, vec![]).is_err());
        assert_eq!(ImageTensor::new(3, 3, 0, vec![]).unwrap().channels(), 0);
    }

    #[test]
    fn stack_and_select() {
        let a = ImageTensor::from_fn(2, 2, 1, |h, w, _| (h * 2 + w) as f64);
        let b = ImageTensor::from_fn(2, 2, 2, |h, w, c| 10.0 + (h * 2 + w) as f64 + 100.0 * c as f64);
        let s = ImageTensor::stack_channels(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(s.shape(), (2, 2, 3));
        assert_eq!(s.select_channels(&[0]).unwrap(), a);
        assert_eq!(s.select_channels(&[1, 2]).unwrap(), b);
        assert_eq!(s.channel(2), b.channel(1));
    }

    proptest::proptest! {
        #[test]
        fn round_trip_any_shape(gh in 1usize..5, gw in 1usize..5, bh in 1usize..4, bw in 1usize..4,
                                c in 1usize..4, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let spec = BlockSpec::new(bh, bw);
            let t = ImageTensor::from_fn(gh * bh, gw * bw, c, |_, _, _| rng.random::<f64>());
            let m = blocks_to_rows(&t, spec).unwrap();
            proptest::prop_assert_eq!(m.shape(), (gh * gw, bh * bw * c));
            proptest::prop_assert_eq!(rows_to_blocks(&m, spec, gh * bh, gw * bw, c).unwrap(), t);
        }
    }
}
