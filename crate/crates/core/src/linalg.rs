//! Structured-matrix kernel: block-Toeplitz and Hankel construction, causal
//! sparsity masks, pseudoinverse, spectral norm and spectral-ball projection.
//!
//! Everything here is dense. Horizons in this crate are a few dozen blocks, so
//! the block metadata travels next to an ordinary `DMatrix` instead of a
//! structured storage format.

use nalgebra::{DMatrix, DVector};

use crate::error::{BiopError, Result};

/// Relative singular-value cutoff used for pseudoinverses and rank tests.
pub const DEFAULT_PINV_TOL: f64 = 1e-10;

/// An ordered stack of equally sized blocks `[M_1; M_2; ...; M_N]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockColumn {
    blocks: Vec<DMatrix<f64>>,
}

impl BlockColumn {
    pub fn new(blocks: Vec<DMatrix<f64>>) -> Result<Self> {
        let first = blocks
            .first()
            .ok_or_else(|| BiopError::InvalidArgument("block column needs at least one block".into()))?;
        let shape = first.shape();
        if let Some((k, b)) = blocks.iter().enumerate().find(|(_, b)| b.shape() != shape) {
            return Err(BiopError::DimensionMismatch(format!(
                "block {k} is {:?}, expected {:?}",
                b.shape(),
                shape
            )));
        }
        Ok(Self { blocks })
    }

    pub fn zeros(n_blocks: usize, rows: usize, cols: usize) -> Self {
        Self {
            blocks: vec![DMatrix::zeros(rows, cols); n_blocks.max(1)],
        }
    }

    /// Splits a `(n·rows) × cols` matrix into `n` row blocks.
    pub fn from_stacked(stacked: &DMatrix<f64>, rows: usize) -> Result<Self> {
        if rows == 0 || stacked.nrows() % rows != 0 {
            return Err(BiopError::DimensionMismatch(format!(
                "{} rows cannot be split into blocks of {rows}",
                stacked.nrows()
            )));
        }
        let n = stacked.nrows() / rows;
        Self::new(
            (0..n)
                .map(|k| stacked.rows(k * rows, rows).into_owned())
                .collect(),
        )
    }

    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.blocks
    }

    pub fn block_mut(&mut self, k: usize) -> &mut DMatrix<f64> {
        &mut self.blocks[k]
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn block_rows(&self) -> usize {
        self.blocks[0].nrows()
    }

    pub fn block_cols(&self) -> usize {
        self.blocks[0].ncols()
    }

    /// The blocks stacked vertically into one `(N·r) × c` matrix.
    pub fn stacked(&self) -> DMatrix<f64> {
        let (r, c) = (self.block_rows(), self.block_cols());
        let mut out = DMatrix::zeros(r * self.len(), c);
        for (k, b) in self.blocks.iter().enumerate() {
            out.view_mut((k * r, 0), (r, c)).copy_from(b);
        }
        out
    }
}

/// Block-lower-triangular Toeplitz matrix with `col` down its first block column.
pub fn build_toeplitz(col: &BlockColumn) -> DMatrix<f64> {
    let (r, c, n) = (col.block_rows(), col.block_cols(), col.len());
    let mut out = DMatrix::zeros(n * r, n * c);
    for j in 0..n {
        for i in j..n {
            out.view_mut((i * r, j * c), (r, c))
                .copy_from(&col.blocks[i - j]);
        }
    }
    out
}

/// A block-Toeplitz operator kept together with its generating column.
#[derive(Debug, Clone)]
pub struct BlockToeplitz {
    col: BlockColumn,
    dense: DMatrix<f64>,
}

impl BlockToeplitz {
    pub fn new(col: BlockColumn) -> Self {
        let dense = build_toeplitz(&col);
        Self { col, dense }
    }

    pub fn column(&self) -> &BlockColumn {
        &self.col
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.dense
    }

    pub fn n_blocks(&self) -> usize {
        self.col.len()
    }

    /// Rows per block (outputs `p` for an impulse-response matrix).
    pub fn block_rows(&self) -> usize {
        self.col.block_rows()
    }

    /// Columns per block (inputs `m` for an impulse-response matrix).
    pub fn block_cols(&self) -> usize {
        self.col.block_cols()
    }

    /// True when the leading block is exactly zero.
    pub fn is_strictly_causal(&self) -> bool {
        self.col.blocks[0].iter().all(|v| *v == 0.0)
    }

    pub fn sub(&self, other: &BlockToeplitz) -> Result<BlockToeplitz> {
        if self.dense.shape() != other.dense.shape() {
            return Err(BiopError::DimensionMismatch(format!(
                "toeplitz {:?} vs {:?}",
                self.dense.shape(),
                other.dense.shape()
            )));
        }
        let blocks = self
            .col
            .blocks
            .iter()
            .zip(&other.col.blocks)
            .map(|(a, b)| a - b)
            .collect();
        Ok(BlockToeplitz::new(BlockColumn::new(blocks)?))
    }
}

/// Depth-`L` Hankel matrix of a vector-valued trajectory.
#[derive(Debug, Clone)]
pub struct HankelMatrix {
    pub data: DMatrix<f64>,
    pub depth: usize,
    pub dim: usize,
    pub source_len: usize,
}

impl HankelMatrix {
    pub fn width(&self) -> usize {
        self.data.ncols()
    }
}

/// Builds `H_L(ω)` from a stacked trajectory `[ω(0); ω(1); ...; ω(T-1)]`.
pub fn build_hankel(samples: &DVector<f64>, dim: usize, depth: usize) -> Result<HankelMatrix> {
    if dim == 0 || samples.len() % dim != 0 {
        return Err(BiopError::DimensionMismatch(format!(
            "trajectory length {} is not a multiple of sample dimension {dim}",
            samples.len()
        )));
    }
    let t = samples.len() / dim;
    if depth == 0 || depth > t {
        return Err(BiopError::InvalidArgument(format!(
            "Hankel depth {depth} must lie in [1, {t}]"
        )));
    }
    let width = t - depth + 1;
    let data = DMatrix::from_fn(dim * depth, width, |row, j| {
        let (i, k) = (row / dim, row % dim);
        samples[(i + j) * dim + k]
    });
    Ok(HankelMatrix {
        data,
        depth,
        dim,
        source_len: t,
    })
}

/// Block lower-triangular sparsity pattern of an `n_blocks × n_blocks` grid of
/// `block_rows × block_cols` blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CausalMask {
    pub n_blocks: usize,
    pub block_rows: usize,
    pub block_cols: usize,
    pub strict: bool,
}

impl CausalMask {
    pub fn new(n_blocks: usize, block_rows: usize, block_cols: usize, strict: bool) -> Self {
        Self {
            n_blocks,
            block_rows,
            block_cols,
            strict,
        }
    }

    pub fn nrows(&self) -> usize {
        self.n_blocks * self.block_rows
    }

    pub fn ncols(&self) -> usize {
        self.n_blocks * self.block_cols
    }

    #[inline]
    pub fn allows(&self, row: usize, col: usize) -> bool {
        let (bi, bj) = (row / self.block_rows, col / self.block_cols);
        if self.strict {
            bi > bj
        } else {
            bi >= bj
        }
    }

    pub fn to_matrix(&self) -> DMatrix<bool> {
        DMatrix::from_fn(self.nrows(), self.ncols(), |i, j| self.allows(i, j))
    }

    pub fn allowed_blocks(&self) -> usize {
        let n = self.n_blocks;
        if self.strict {
            n * (n - 1) / 2
        } else {
            n * (n + 1) / 2
        }
    }

    /// Free entries in column-major order, the vectorization used by the
    /// synthesis programs.
    pub fn free_entries(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.allowed_blocks() * self.block_rows * self.block_cols);
        for j in 0..self.ncols() {
            for i in 0..self.nrows() {
                if self.allows(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Zeroes every entry outside the pattern.
    pub fn apply(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = m.clone();
        self.apply_mut(&mut out);
        out
    }

    pub fn apply_mut(&self, m: &mut DMatrix<f64>) {
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                if !self.allows(i, j) {
                    m[(i, j)] = 0.0;
                }
            }
        }
    }

    /// Frobenius norm of the entries outside the pattern.
    pub fn violation(&self, m: &DMatrix<f64>) -> f64 {
        let mut acc = 0.0;
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                if !self.allows(i, j) {
                    acc += m[(i, j)] * m[(i, j)];
                }
            }
        }
        acc.sqrt()
    }

    pub fn check_shape(&self, m: &DMatrix<f64>, what: &str) -> Result<()> {
        if m.shape() != (self.nrows(), self.ncols()) {
            return Err(BiopError::DimensionMismatch(format!(
                "{what} is {:?}, expected {:?}",
                m.shape(),
                (self.nrows(), self.ncols())
            )));
        }
        Ok(())
    }
}

/// Convenience wrapper returning the boolean pattern directly.
pub fn causal_mask(n_blocks: usize, block_rows: usize, block_cols: usize, strictly: bool) -> DMatrix<bool> {
    CausalMask::new(n_blocks, block_rows, block_cols, strictly).to_matrix()
}

fn ensure_finite(m: &DMatrix<f64>, what: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(BiopError::NonFinite(what))
    }
}

/// Thin SVD with a reconstruction guarantee. nalgebra's bidiagonal QR can
/// leave relative reconstruction errors near 1e-11 on small matrices with
/// clustered singular values; such results are recomputed with one-sided
/// Jacobi, which is accurate to working precision.
pub fn accurate_svd(m: &DMatrix<f64>) -> nalgebra::SVD<f64, nalgebra::Dyn, nalgebra::Dyn> {
    let svd = m.clone().svd(true, true);
    let scale = m.norm();
    if scale == 0.0 {
        return svd;
    }
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let rec = u * DMatrix::from_diagonal(&svd.singular_values) * vt;
    if (rec - m).norm() <= 1e-13 * scale {
        return svd;
    }
    jacobi_svd(m)
}

fn jacobi_svd(m: &DMatrix<f64>) -> nalgebra::SVD<f64, nalgebra::Dyn, nalgebra::Dyn> {
    let wide = m.nrows() < m.ncols();
    let mut a = if wide { m.transpose() } else { m.clone() };
    let (r, c) = a.shape();
    let mut v = DMatrix::<f64>::identity(c, c);
    for _sweep in 0..80 {
        let mut rotated = false;
        for i in 0..c {
            for j in i + 1..c {
                let alpha = a.column(i).norm_squared();
                let beta = a.column(j).norm_squared();
                let gamma = a.column(i).dot(&a.column(j));
                if gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                for k in 0..r {
                    let (x, y) = (a[(k, i)], a[(k, j)]);
                    a[(k, i)] = cs * x - sn * y;
                    a[(k, j)] = sn * x + cs * y;
                }
                for k in 0..c {
                    let (x, y) = (v[(k, i)], v[(k, j)]);
                    v[(k, i)] = cs * x - sn * y;
                    v[(k, j)] = sn * x + cs * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut order: Vec<usize> = (0..c).collect();
    let norms: Vec<f64> = (0..c).map(|k| a.column(k).norm()).collect();
    order.sort_by(|x, y| norms[*y].total_cmp(&norms[*x]));
    let k = r.min(c);
    let mut u = DMatrix::zeros(r, k);
    let mut vk = DMatrix::zeros(c, k);
    let mut s = nalgebra::DVector::zeros(k);
    for (dst, src) in order.iter().take(k).enumerate() {
        s[dst] = norms[*src];
        if norms[*src] > 0.0 {
            u.set_column(dst, &(a.column(*src) / norms[*src]));
        }
        vk.set_column(dst, &v.column(*src));
    }
    let (u, v_t) = if wide { (vk, u.transpose()) } else { (u, vk.transpose()) };
    nalgebra::SVD {
        u: Some(u),
        v_t: Some(v_t),
        singular_values: s,
    }
}

/// Moore-Penrose pseudoinverse; singular values below `tol·σ_max` are dropped.
pub fn pseudoinverse(m: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    ensure_finite(m, "pseudoinverse input")?;
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return Ok(DMatrix::zeros(c, r));
    }
    let svd = accurate_svd(m);
    let smax = svd.singular_values.max();
    if smax == 0.0 {
        return Ok(DMatrix::zeros(c, r));
    }
    let cut = tol * smax;
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let mut out = DMatrix::zeros(c, r);
    for (k, s) in svd.singular_values.iter().enumerate() {
        if *s > cut {
            // out += v_k u_kᵀ / s
            out.ger(1.0 / s, &vt.row(k).transpose(), &u.column(k), 1.0);
        }
    }
    Ok(out)
}

/// Number of singular values above `tol·σ_max`.
pub fn numerical_rank(m: &DMatrix<f64>, tol: f64) -> Result<usize> {
    ensure_finite(m, "rank input")?;
    if m.is_empty() {
        return Ok(0);
    }
    let sv = accurate_svd(m).singular_values;
    let smax = sv.max();
    if smax == 0.0 {
        return Ok(0);
    }
    Ok(sv.iter().filter(|s| **s > tol * smax).count())
}

/// Induced two-norm (largest singular value).
pub fn spectral_norm(m: &DMatrix<f64>) -> Result<f64> {
    ensure_finite(m, "spectral norm input")?;
    if m.is_empty() {
        return Ok(0.0);
    }
    if m.ncols() == 1 {
        return Ok(m.norm());
    }
    Ok(accurate_svd(m).singular_values.max())
}

/// Frobenius-nearest matrix with spectral norm at most `radius`: singular
/// values are clipped at the radius.
pub fn project_spectral_ball(m: &DMatrix<f64>, radius: f64) -> DMatrix<f64> {
    let radius = radius.max(0.0);
    if m.is_empty() {
        return m.clone();
    }
    let svd = accurate_svd(m);
    if svd.singular_values.max() <= radius {
        return m.clone();
    }
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for (k, s) in svd.singular_values.iter().enumerate() {
        let clipped = s.min(radius);
        if clipped > 0.0 {
            out.ger(clipped, &u.column(k), &vt.row(k).transpose(), 1.0);
        }
    }
    out
}

/// Symmetric square root of a symmetric PSD matrix.
pub fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    ensure_finite(m, "psd_sqrt input")?;
    if !m.is_square() {
        return Err(BiopError::DimensionMismatch(format!(
            "square root of non-square {:?}",
            m.shape()
        )));
    }
    let scale = m.amax().max(1.0);
    let eig = m.clone().symmetric_eigen();
    if let Some(neg) = eig.eigenvalues.iter().find(|l| **l < -1e-10 * scale) {
        return Err(BiopError::InvalidArgument(format!(
            "matrix is not positive semidefinite (eigenvalue {neg:.3e})"
        )));
    }
    let d = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose())
}

/// `blkdiag(blocks...)`.
pub fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), b.shape()).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// `I_n ⊗ block`.
pub fn repeat_diag(block: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    block_diag(&vec![block.clone(); n])
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.min()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(r: usize, c: usize, rng: &mut impl Rng) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    // independent oracle: power iteration on MᵀM
    fn power_iteration_norm(m: &DMatrix<f64>) -> f64 {
        let mtm = m.transpose() * m;
        let mut v = DVector::from_element(m.ncols(), 1.0);
        let mut lambda = 0.0;
        for _ in 0..20_000 {
            let w = &mtm * &v;
            let nw = w.norm();
            if nw == 0.0 {
                return 0.0;
            }
            v = w / nw;
            let next = v.dot(&(&mtm * &v));
            if (next - lambda).abs() < 1e-15 * next.max(1.0) {
                lambda = next;
                break;
            }
            lambda = next;
        }
        lambda.sqrt()
    }

    #[test]
    fn toeplitz_scalar_blocks() {
        let col = BlockColumn::new(vec![DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 2.0)]).unwrap();
        let t = build_toeplitz(&col);
        assert_eq!(t, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 2.0, 1.0]));
    }

    #[test]
    fn toeplitz_zero_blocks() {
        let t = build_toeplitz(&BlockColumn::zeros(3, 2, 3));
        assert_eq!(t.shape(), (6, 9));
        assert!(t.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn toeplitz_rejects_mismatched_blocks() {
        let err = BlockColumn::new(vec![DMatrix::zeros(1, 2), DMatrix::zeros(2, 1)]).unwrap_err();
        assert!(matches!(err, BiopError::DimensionMismatch(_)));
        assert!(BlockColumn::new(vec![]).is_err());
    }

    #[test]
    fn toeplitz_is_block_lower_triangular() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 1..5 {
            for (r, c) in [(1, 1), (2, 1), (1, 3), (2, 2)] {
                let col = BlockColumn::new((0..n).map(|_| random(r, c, &mut rng)).collect()).unwrap();
                let t = build_toeplitz(&col);
                let mask = CausalMask::new(n, r, c, false);
                assert_eq!(mask.violation(&t), 0.0);
                for i in 0..n {
                    for j in 0..=i {
                        assert_eq!(t.view((i * r, j * c), (r, c)), col.blocks()[i - j]);
                    }
                }
            }
        }
    }

    #[test]
    fn hankel_scalar() {
        let h = build_hankel(&DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]), 1, 2).unwrap();
        assert_eq!(h.data, DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 3.0, 4.0]));
    }

    #[test]
    fn hankel_full_depth_is_one_column() {
        let w = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let h = build_hankel(&w, 1, 3).unwrap();
        assert_eq!(h.width(), 1);
        assert_eq!(h.data.column(0), w);
    }

    #[test]
    fn hankel_vector_samples() {
        // samples (1,2), (3,4), (5,6)
        let w = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let h = build_hankel(&w, 2, 2).unwrap();
        let expected = DMatrix::from_row_slice(4, 2, &[1.0, 3.0, 2.0, 4.0, 3.0, 5.0, 4.0, 6.0]);
        assert_eq!(h.data, expected);
    }

    #[test]
    fn hankel_depth_errors() {
        let w = DVector::from_vec(vec![1.0, 2.0]);
        assert!(build_hankel(&w, 1, 3).is_err());
        assert!(build_hankel(&w, 1, 0).is_err());
        assert!(build_hankel(&w, 3, 1).is_err());
    }

    #[test]
    fn hankel_columns_are_windows() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for dim in 1..4 {
            for t in 1..8 {
                for depth in 1..=t {
                    let w = DVector::from_fn(dim * t, |_, _| rng.random_range(-1.0..1.0));
                    let h = build_hankel(&w, dim, depth).unwrap();
                    for j in 0..h.width() {
                        assert_eq!(h.data.column(j), w.rows(j * dim, depth * dim));
                    }
                }
            }
        }
    }

    #[test]
    fn mask_examples() {
        let m = causal_mask(2, 1, 1, false);
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[true, false, true, true]));
        let s = causal_mask(2, 1, 1, true);
        assert_eq!(s, DMatrix::from_row_slice(2, 2, &[false, false, true, false]));
        let big = CausalMask::new(11, 2, 2, false);
        assert_eq!(big.allowed_blocks(), 66);
        let trues = big.to_matrix().iter().filter(|b| **b).count();
        assert_eq!(trues, 66 * 4);
        assert_eq!(big.free_entries().len(), 66 * 4);
    }

    #[test]
    fn pinv_examples() {
        let i = DMatrix::<f64>::identity(3, 3);
        assert!((pseudoinverse(&i, DEFAULT_PINV_TOL).unwrap() - &i).norm() < 1e-15);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.0]));
        let pd = pseudoinverse(&d, DEFAULT_PINV_TOL).unwrap();
        assert!((pd - DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.0]))).norm() < 1e-15);
        let bad = DMatrix::from_element(2, 2, f64::NAN);
        assert!(pseudoinverse(&bad, DEFAULT_PINV_TOL).is_err());
    }

    #[test]
    fn pinv_penrose_conditions() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (r, c) in [(5, 8), (8, 5), (4, 4), (1, 6)] {
            let m = random(r, c, &mut rng);
            let p = pseudoinverse(&m, DEFAULT_PINV_TOL).unwrap();
            assert!((&m * &p * &m - &m).norm() < 1e-10);
            assert!((&p * &m * &p - &p).norm() < 1e-8);
            let mp = &m * &p;
            let pm = &p * &m;
            assert!((&mp - mp.transpose()).norm() < 1e-8);
            assert!((&pm - pm.transpose()).norm() < 1e-8);
        }
    }

    #[test]
    fn spectral_norm_examples() {
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0]));
        assert!((spectral_norm(&d).unwrap() - 3.0).abs() < 1e-14);
        assert_eq!(spectral_norm(&DMatrix::zeros(3, 2)).unwrap(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let m = random(6, 4, &mut rng);
            let oracle = power_iteration_norm(&m);
            assert!((spectral_norm(&m).unwrap() - oracle).abs() < 1e-10, "{oracle}");
        }
        assert!(spectral_norm(&DMatrix::from_element(1, 2, f64::INFINITY)).is_err());
    }

    #[test]
    fn projection_examples() {
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0]));
        let p = project_spectral_ball(&d, 2.0);
        assert!((p - DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0]))).norm() < 1e-14);
        let inside = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.1]));
        assert_eq!(project_spectral_ball(&inside, 1.0), inside);
    }

    #[test]
    fn projection_beats_random_feasible_candidates() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let m = random(4, 5, &mut rng) * 2.0;
        let p = project_spectral_ball(&m, 0.5);
        assert!(spectral_norm(&p).unwrap() <= 0.5 + 1e-12);
        let dist = (&p - &m).norm();
        for _ in 0..100 {
            let cand = random(4, 5, &mut rng);
            let cand = &cand * (0.5 * rng.random_range(0.0..1.0) / spectral_norm(&cand).unwrap());
            assert!((cand - &m).norm() >= dist - 1e-12);
        }
    }

    #[test]
    fn psd_sqrt_squares_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random(4, 4, &mut rng);
        let s = &a * a.transpose();
        let r = psd_sqrt(&s).unwrap();
        assert!((&r * &r - &s).norm() < 1e-10);
        let neg = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        assert!(psd_sqrt(&neg).is_err());
    }

    #[test]
    fn jacobi_svd_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for (r, c) in [(3, 4), (4, 3), (5, 5), (1, 3)] {
            let m = random(r, c, &mut rng);
            let svd = jacobi_svd(&m);
            let rec = svd.u.as_ref().unwrap() * DMatrix::from_diagonal(&svd.singular_values) * svd.v_t.as_ref().unwrap();
            assert!((rec - &m).norm() < 1e-14 * m.norm().max(1.0));
            let reference = m.singular_values();
            let mut sorted: Vec<f64> = reference.iter().copied().collect();
            sorted.sort_by(|a, b| b.total_cmp(a));
            for (a, b) in sorted.iter().zip(svd.singular_values.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn matrix(r: usize, c: usize) -> impl Strategy<Value = DMatrix<f64>> {
            proptest::collection::vec(-3.0f64..3.0, r * c).prop_map(move |v| DMatrix::from_vec(r, c, v))
        }

        proptest! {
            #[test]
            fn projection_idempotent_and_nonexpansive(a in matrix(3, 4), b in matrix(3, 4), radius in 0.0f64..3.0) {
                let pa = project_spectral_ball(&a, radius);
                let pb = project_spectral_ball(&b, radius);
                prop_assert!(spectral_norm(&pa).unwrap() <= radius + 1e-10);
                prop_assert!((project_spectral_ball(&pa, radius) - &pa).norm() < 1e-10);
                prop_assert!((&pa - &pb).norm() <= (&a - &b).norm() + 1e-10);
            }

            #[test]
            fn pinv_penrose(a in matrix(3, 5)) {
                prop_assume!(numerical_rank(&a, 1e-6).unwrap() == 3);
                let p = pseudoinverse(&a, DEFAULT_PINV_TOL).unwrap();
                prop_assert!((&a * &p * &a - &a).norm() < 1e-8);
                prop_assert!((&p * &a * &p - &p).norm() < 1e-8);
            }
        }
    }
}
