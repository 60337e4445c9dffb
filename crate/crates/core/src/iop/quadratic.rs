//! The synthesis objective after eliminating every closed-loop map except
//! `X = Φ_uy`:
//!
//! `f(X) = ‖W_y (B_y + G X B_y)‖_F² + ‖W_u (E + X B_u)‖_F²`
//!
//! over block lower-triangular `X`. Both the nominal program and the inner
//! robust program have this shape; only the factors differ.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{BiopError, Result};
use crate::linalg::{self, BlockToeplitz, CausalMask};
use crate::plant::{CostWeights, NoiseModel};

/// Number of free entries above which the nominal solve switches from a dense
/// Cholesky factorization to conjugate gradients.
pub const DEFAULT_CG_THRESHOLD: usize = 4000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticSolveOptions {
    pub cg_threshold: usize,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
}

impl Default for QuadraticSolveOptions {
    fn default() -> Self {
        Self {
            cg_threshold: DEFAULT_CG_THRESHOLD,
            cg_tol: 1e-13,
            cg_max_iter: 20_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReducedQuadratic {
    mask: CausalMask,
    free: Vec<(usize, usize)>,
    // direct-evaluation factors
    wy_by: DMatrix<f64>,
    wy_g: DMatrix<f64>,
    by: DMatrix<f64>,
    wu_e: DMatrix<f64>,
    wu: DMatrix<f64>,
    bu: DMatrix<f64>,
    // expanded form: f = c + 2⟨Lin, X⟩ + ⟨X, P X S_y + Q X S_u⟩
    p: DMatrix<f64>,
    q: DMatrix<f64>,
    s_y: DMatrix<f64>,
    s_u: DMatrix<f64>,
    lin: DMatrix<f64>,
    constant: f64,
}

impl ReducedQuadratic {
    /// General factors. `G` is `pN × mN`, `X` is `mN × pN`.
    pub fn from_factors(
        g: &DMatrix<f64>,
        w_y: &DMatrix<f64>,
        w_u: &DMatrix<f64>,
        b_y: DMatrix<f64>,
        b_u: DMatrix<f64>,
        e: &DMatrix<f64>,
        mask: CausalMask,
    ) -> Result<Self> {
        let (py, mu) = (mask.ncols(), mask.nrows());
        if g.shape() != (py, mu)
            || w_y.shape() != (py, py)
            || w_u.shape() != (mu, mu)
            || b_y.nrows() != py
            || b_u.nrows() != py
            || e.shape() != (mu, b_u.ncols())
        {
            return Err(BiopError::DimensionMismatch(format!(
                "quadratic factors: G {:?}, W_y {:?}, W_u {:?}, B_y {:?}, B_u {:?}, E {:?}",
                g.shape(),
                w_y.shape(),
                w_u.shape(),
                b_y.shape(),
                b_u.shape(),
                e.shape()
            )));
        }
        for (m, what) in [(g, "G"), (w_y, "W_y"), (w_u, "W_u"), (&b_y, "B_y"), (&b_u, "B_u"), (e, "E")] {
            if !m.iter().all(|v| v.is_finite()) {
                return Err(BiopError::NonFinite(what));
            }
        }
        let wy_by = w_y * &b_y;
        let wy_g = w_y * g;
        let wu_e = w_u * e;
        let p = wy_g.transpose() * &wy_g;
        let q = w_u.transpose() * w_u;
        let s_y = &b_y * b_y.transpose();
        let s_u = &b_u * b_u.transpose();
        let lin = wy_g.transpose() * &wy_by * b_y.transpose() + w_u.transpose() * &wu_e * b_u.transpose();
        let constant = wy_by.norm_squared() + wu_e.norm_squared();
        Ok(Self {
            free: mask.free_entries(),
            mask,
            wy_by,
            wy_g,
            by: b_y,
            wu_e,
            wu: w_u.clone(),
            bu: b_u,
            p,
            q,
            s_y,
            s_u,
            lin,
            constant,
        })
    }

    /// Expected LQG cost `J²` as a function of `Φ_uy`.
    pub fn nominal(g: &BlockToeplitz, y_free: &DVector<f64>, weights: &CostWeights, noise: &NoiseModel) -> Result<Self> {
        let (p, m, n) = (g.block_rows(), g.block_cols(), g.n_blocks());
        if weights.horizon() != n
            || weights.outputs() != p
            || weights.inputs() != m
            || noise.outputs() != p
            || noise.inputs() != m
            || y_free.len() != p * n
        {
            return Err(BiopError::DimensionMismatch(format!(
                "nominal program inconsistent with G ({p}x{m} blocks, N = {n})"
            )));
        }
        let sv = linalg::repeat_diag(noise.sqrt_v(), n);
        let sw = linalg::repeat_diag(noise.sqrt_w(), n);
        let gm = g.matrix();
        let gsw = gm * &sw;
        let b = hstack(&[&sv, &gsw, &DMatrix::from_column_slice(p * n, 1, y_free.as_slice())]);
        let e = hstack(&[&DMatrix::zeros(m * n, p * n), &sw, &DMatrix::zeros(m * n, 1)]);
        Self::from_factors(
            gm,
            weights.l_sqrt(),
            weights.r_sqrt(),
            b.clone(),
            b,
            &e,
            CausalMask::new(n, m, p, false),
        )
    }

    /// `J_inner²` with identity weights: rows `Φ_yy [a I, Ĝ, ŷ]` and
    /// `[b Φ_uy, Φ_uu, Φ_uy ŷ]`.
    pub fn robust(g_hat: &BlockToeplitz, y_hat: &DVector<f64>, a: f64, b: f64) -> Result<Self> {
        let (p, m, n) = (g_hat.block_rows(), g_hat.block_cols(), g_hat.n_blocks());
        if y_hat.len() != p * n {
            return Err(BiopError::DimensionMismatch(format!(
                "free response has {} entries, expected {}",
                y_hat.len(),
                p * n
            )));
        }
        let gm = g_hat.matrix();
        let y = DMatrix::from_column_slice(p * n, 1, y_hat.as_slice());
        let eye_p = DMatrix::identity(p * n, p * n);
        let b_y = hstack(&[&(&eye_p * a), gm, &y]);
        let b_u = hstack(&[&(&eye_p * b), gm, &y]);
        let e = hstack(&[
            &DMatrix::zeros(m * n, p * n),
            &DMatrix::identity(m * n, m * n),
            &DMatrix::zeros(m * n, 1),
        ]);
        Self::from_factors(
            gm,
            &eye_p,
            &DMatrix::identity(m * n, m * n),
            b_y,
            b_u,
            &e,
            CausalMask::new(n, m, p, false),
        )
    }

    pub fn mask(&self) -> &CausalMask {
        &self.mask
    }

    pub fn n_free(&self) -> usize {
        self.free.len()
    }

    pub fn free_entries(&self) -> &[(usize, usize)] {
        &self.free
    }

    pub fn zero_point(&self) -> DMatrix<f64> {
        DMatrix::zeros(self.mask.nrows(), self.mask.ncols())
    }

    /// `f(X)`, evaluated from the factored form. Entries of `X` outside the
    /// causal pattern are used as given.
    pub fn objective(&self, x: &DMatrix<f64>) -> f64 {
        let top = &self.wy_by + &self.wy_g * x * &self.by;
        let bottom = &self.wu_e + &self.wu * x * &self.bu;
        top.norm_squared() + bottom.norm_squared()
    }

    /// `f(0)`.
    pub fn constant(&self) -> f64 {
        self.constant
    }

    /// Gradient restricted to the causal pattern.
    pub fn gradient(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut g = (&self.p * x * &self.s_y + &self.q * x * &self.s_u + &self.lin) * 2.0;
        self.mask.apply_mut(&mut g);
        g
    }

    /// Hessian-vector product on the causal subspace.
    pub fn hessian_apply(&self, d: &DMatrix<f64>) -> DMatrix<f64> {
        let mut h = (&self.p * d * &self.s_y + &self.q * d * &self.s_u) * 2.0;
        self.mask.apply_mut(&mut h);
        h
    }

    /// Dense Hessian over the free entries (column-major order).
    pub fn free_hessian(&self) -> DMatrix<f64> {
        let f = self.free.len();
        DMatrix::from_fn(f, f, |a, b| {
            let (i, j) = self.free[a];
            let (k, l) = self.free[b];
            2.0 * (self.p[(i, k)] * self.s_y[(j, l)] + self.q[(i, k)] * self.s_u[(j, l)])
        })
    }

    /// `-∇f(0)` over the free entries, the right-hand side of the normal
    /// equations `H x = -∇f(0)`.
    pub fn free_rhs(&self) -> DVector<f64> {
        DVector::from_iterator(self.free.len(), self.free.iter().map(|(i, j)| -2.0 * self.lin[(*i, *j)]))
    }

    pub fn gather(&self, x: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_iterator(self.free.len(), self.free.iter().map(|(i, j)| x[(*i, *j)]))
    }

    pub fn scatter(&self, v: &DVector<f64>) -> DMatrix<f64> {
        let mut out = self.zero_point();
        for (k, (i, j)) in self.free.iter().enumerate() {
            out[(*i, *j)] = v[k];
        }
        out
    }

    /// Cheap upper bound on the largest Hessian eigenvalue.
    pub fn lipschitz_bound(&self) -> f64 {
        let lam = |m: &DMatrix<f64>| m.clone().symmetric_eigen().eigenvalues.max().max(0.0);
        2.0 * (lam(&self.p) * lam(&self.s_y) + lam(&self.q) * lam(&self.s_u))
    }

    /// Unconstrained minimizer over causal `X`.
    pub fn minimize(&self, opts: &QuadraticSolveOptions) -> Result<DMatrix<f64>> {
        if self.free.len() <= opts.cg_threshold {
            let chol = self.factor(0.0)?;
            Ok(self.scatter(&chol.solve(&self.free_rhs())))
        } else {
            self.minimize_cg(opts)
        }
    }

    /// Cholesky factor of `H + shift·I` over the free entries.
    pub fn factor(&self, shift: f64) -> Result<Cholesky<f64, Dyn>> {
        let mut h = self.free_hessian();
        for k in 0..h.nrows() {
            h[(k, k)] += shift;
        }
        Cholesky::new(h).ok_or_else(|| BiopError::Singular("reduced Hessian is not positive definite".into()))
    }

    fn minimize_cg(&self, opts: &QuadraticSolveOptions) -> Result<DMatrix<f64>> {
        let mut x = self.zero_point();
        let mut r = -self.gradient(&x);
        let mut d = r.clone();
        let mut rs = r.norm_squared();
        let stop = opts.cg_tol * opts.cg_tol * rs.max(f64::MIN_POSITIVE);
        for it in 0..opts.cg_max_iter {
            if rs <= stop {
                log::debug!("cg converged in {it} iterations");
                return Ok(x);
            }
            let hd = self.hessian_apply(&d);
            let alpha = rs / d.dot(&hd);
            x += &d * alpha;
            r -= &hd * alpha;
            let rs_new = r.norm_squared();
            d = &r + &d * (rs_new / rs);
            rs = rs_new;
        }
        Err(BiopError::NotConverged {
            iterations: opts.cg_max_iter,
            objective: self.objective(&x),
        })
    }
}

fn hstack(parts: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = parts[0].nrows();
    let cols = parts.iter().map(|p| p.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut c = 0;
    for p in parts {
        out.view_mut((0, c), (rows, p.ncols())).copy_from(*p);
        c += p.ncols();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::BlockColumn;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(seed: u64) -> ReducedQuadratic {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, m, n) = (2, 1, 4);
        let mut blocks = vec![DMatrix::zeros(p, m)];
        for _ in 1..n {
            blocks.push(DMatrix::from_fn(p, m, |_, _| rng.random_range(-1.0..1.0)));
        }
        let g = BlockToeplitz::new(BlockColumn::new(blocks).unwrap());
        let y = DVector::from_fn(p * n, |_, _| rng.random_range(-1.0..1.0));
        ReducedQuadratic::robust(&g, &y, 1.3, 1.1).unwrap()
    }

    fn random_causal(q: &ReducedQuadratic, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        q.mask().apply(&DMatrix::from_fn(q.mask().nrows(), q.mask().ncols(), |_, _| rng.random_range(-1.0..1.0)))
    }

    #[test]
    fn expanded_form_matches_direct_evaluation() {
        let q = random_problem(1);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let x = random_causal(&q, &mut rng);
            let expanded = q.constant + 2.0 * q.lin.dot(&x) + x.dot(&(&q.p * &x * &q.s_y + &q.q * &x * &q.s_u));
            assert!((expanded - q.objective(&x)).abs() < 1e-10 * expanded);
        }
        assert!((q.objective(&q.zero_point()) - q.constant()).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let q = random_problem(2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_causal(&q, &mut rng);
        let g = q.gradient(&x);
        let h = 1e-6;
        for (i, j) in q.free_entries().iter().copied() {
            let mut xp = x.clone();
            xp[(i, j)] += h;
            let mut xm = x.clone();
            xm[(i, j)] -= h;
            let fd = (q.objective(&xp) - q.objective(&xm)) / (2.0 * h);
            assert!((fd - g[(i, j)]).abs() < 1e-5 * (1.0 + fd.abs()), "{fd} vs {}", g[(i, j)]);
        }
    }

    #[test]
    fn dense_hessian_matches_operator() {
        let q = random_problem(4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = random_causal(&q, &mut rng);
        let dense = q.free_hessian() * q.gather(&d);
        assert!((dense - q.gather(&q.hessian_apply(&d))).amax() < 1e-10);
    }

    #[test]
    fn minimizer_is_stationary_and_cg_agrees() {
        let q = random_problem(6);
        let x = q.minimize(&QuadraticSolveOptions::default()).unwrap();
        assert!(q.gradient(&x).norm() < 1e-8);
        let opts = QuadraticSolveOptions {
            cg_threshold: 0,
            ..Default::default()
        };
        let xc = q.minimize(&opts).unwrap();
        assert!((x - xc).amax() < 1e-8);
    }

    #[test]
    fn lipschitz_bound_dominates_spectrum() {
        let q = random_problem(7);
        let eig = q.free_hessian().symmetric_eigen().eigenvalues;
        assert!(eig.max() <= q.lipschitz_bound() * (1.0 + 1e-12));
        // Q = I and S_u ⪰ b² I give strong convexity modulus 2b²
        assert!(eig.min() >= 2.0 * 1.1 * 1.1 - 1e-9);
    }
}
