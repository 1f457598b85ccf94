//! Small dense linear-algebra helpers shared by the transforms.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Eigendecomposition of a symmetric matrix.
///
/// Eigenvalues come back in descending order and `vectors` holds the matching
/// eigenvectors as rows. Each vector's largest-magnitude entry is made positive
/// (first such entry on ties) so repeated fits serialize identically.
#[derive(Debug, Clone)]
pub struct SortedEig {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

pub fn sym_eig_desc(m: &DMatrix<f64>) -> SortedEig {
    assert!(m.is_square(), "eigendecomposition needs a square matrix");
    let n = m.nrows();
    if n == 0 {
        return SortedEig { values: vec![], vectors: DMatrix::zeros(0, 0) };
    }
    // Symmetrize against accumulated round-off.
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let mut vectors = DMatrix::zeros(n, n);
    let mut values = Vec::with_capacity(n);
    for (row, &idx) in order.iter().enumerate() {
        let col = eig.eigenvectors.column(idx);
        let sign = if col[sign_pivot(col.as_slice())] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            vectors[(row, j)] = sign * col[j];
        }
        values.push(eig.eigenvalues[idx]);
    }
    SortedEig { values, vectors }
}

/// Index of the entry that decides an eigenvector's sign: the first one whose
/// magnitude is within 1e-12 of the largest.
pub fn sign_pivot(v: &[f64]) -> usize {
    let top = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    v.iter().position(|x| x.abs() >= top - 1e-12).unwrap_or(0)
}

/// Orthonormal basis (as columns) of the complement of `(1/sqrt(n)) * 1`.
///
/// Built from the Householder reflection taking `e_1` to the unit constant
/// vector; its remaining columns are exactly orthogonal to it.
pub fn dc_complement(n: usize) -> DMatrix<f64> {
    assert!(n >= 1);
    let d = 1.0 / (n as f64).sqrt();
    let mut u = DVector::from_element(n, -d);
    u[0] += 1.0;
    let norm2 = u.norm_squared();
    let mut h = DMatrix::identity(n, n);
    if norm2 > 0.0 {
        h -= &u * u.transpose() * (2.0 / norm2);
    }
    h.columns(1, n - 1).into_owned()
}

/// `m^{-1/2}` for a symmetric positive-definite matrix, or `None` if any
/// eigenvalue is below `floor`.
pub fn inv_sqrt_sym(m: &DMatrix<f64>, floor: f64) -> Option<DMatrix<f64>> {
    let eig = sym_eig_desc(m);
    if eig.values.iter().any(|&v| v.is_nan() || v <= floor) {
        return None;
    }
    let scale =
        DMatrix::from_diagonal(&DVector::from_iterator(eig.values.len(), eig.values.iter().map(|v| 1.0 / v.sqrt())));
    Some(eig.vectors.transpose() * scale * &eig.vectors)
}

/// Running second-moment accumulator `sum(x x^T)` over row vectors; merges
/// are associative so partial sums can be built in parallel.
#[derive(Debug, Clone)]
pub struct Moments {
    pub count: usize,
    pub sum: DVector<f64>,
    pub outer: DMatrix<f64>,
}

impl Moments {
    pub fn new(dim: usize) -> Self {
        Self { count: 0, sum: DVector::zeros(dim), outer: DMatrix::zeros(dim, dim) }
    }

    pub fn dim(&self) -> usize {
        self.sum.len()
    }

    /// Adds every row of `rows`.
    pub fn add_rows(&mut self, rows: &DMatrix<f64>) {
        assert_eq!(rows.ncols(), self.dim());
        self.count += rows.nrows();
        for (j, col) in rows.column_iter().enumerate() {
            self.sum[j] += col.sum();
        }
        self.outer += rows.transpose() * rows;
    }

    pub fn merge(&mut self, other: &Moments) {
        self.count += other.count;
        self.sum += &other.sum;
        self.outer += &other.outer;
    }

    pub fn mean(&self) -> DVector<f64> {
        &self.sum / self.count.max(1) as f64
    }

    /// `E[x x^T]` without centering.
    pub fn second_moment(&self) -> DMatrix<f64> {
        &self.outer / self.count.max(1) as f64
    }

    /// Population covariance `E[x x^T] - mu mu^T`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let mu = self.mean();
        self.second_moment() - &mu * mu.transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eig_sorted_and_sign_fixed() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 5.0]);
        let e = sym_eig_desc(&m);
        assert!((e.values[0] - 5.0).abs() < 1e-12);
        assert!((e.values[1] - 3.0).abs() < 1e-12);
        assert!((e.values[2] - 1.0).abs() < 1e-12);
        for r in 0..3 {
            let row = e.vectors.row(r);
            let r_vec: Vec<f64> = row.iter().copied().collect();
            assert!(r_vec[sign_pivot(&r_vec)] > 0.0);
            let mv = &m * row.transpose();
            assert!((mv - row.transpose() * e.values[r]).norm() < 1e-10);
        }
        let gram = &e.vectors * e.vectors.transpose();
        assert!((gram - DMatrix::identity(3, 3)).abs().max() < 1e-12);
    }

    #[test]
    fn dc_complement_is_orthonormal() {
        for n in 1..=12 {
            let q = dc_complement(n);
            assert_eq!(q.shape(), (n, n - 1));
            let gram = q.transpose() * &q;
            assert!((gram - DMatrix::identity(n - 1, n - 1)).abs().max() < 1e-12);
            for col in q.column_iter() {
                assert!(col.sum().abs() < 1e-12);
            }
        }
    }

    #[test]
    fn inverse_square_root() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let r = inv_sqrt_sym(&m, 1e-12).unwrap();
        let check = &r * &m * &r;
        assert!((check - DMatrix::identity(2, 2)).abs().max() < 1e-12);
        assert!(inv_sqrt_sym(&DMatrix::zeros(2, 2), 1e-12).is_none());
    }

    #[test]
    fn moments_merge_matches_single_pass() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 5.0]);
        let b = DMatrix::from_row_slice(1, 2, &[-1.0, 4.0]);
        let mut whole = Moments::new(2);
        whole.add_rows(&DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 5.0, -1.0, 4.0]));
        let mut left = Moments::new(2);
        left.add_rows(&a);
        let mut right = Moments::new(2);
        right.add_rows(&b);
        left.merge(&right);
        assert_eq!(left.count, 3);
        assert!((left.covariance() - whole.covariance()).abs().max() < 1e-12);
    }
}
