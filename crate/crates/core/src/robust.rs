//! Robust synthesis from an estimated model `(Ĝ, ŷ, ε)`: the worst-case cost
//! identity, its tractable upper bound, golden search over `γ` around a
//! spectrally constrained inner program, the explicit feasible point built
//! from the true optimum, and the resulting suboptimality bound.
//!
//! Throughout, `Δ = G - Ĝ` and `δ₀ = y_free - ŷ`, so the true plant is the
//! model plus the mismatch. All weights and covariances are identities.

use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::Serialize;

use crate::behavior::BehavioralModel;
use crate::error::{BiopError, Result};
use crate::iop::{
    self, controller_from_maps, eliminate, ClosedLoopMaps, ControllerMatrix, QuadraticSolveOptions, ReducedQuadratic,
};
use crate::linalg::{self, BlockToeplitz, CausalMask};
use crate::plant::{CostWeights, NoiseModel};
use crate::registry;

/// Upper end of the `γ` interval as a fraction of `1/ε`.
pub const GAMMA_MARGIN: f64 = 0.999;

/// `h(a, b, Y) = a²(2 + b‖Y‖)² + 2a‖Y‖(2 + b‖Y‖)`, with `Y` given by its norm.
pub fn h_bound(a: f64, b: f64, y_norm: f64) -> f64 {
    let s = 2.0 + b * y_norm;
    a * a * s * s + 2.0 * a * y_norm * s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustConfig {
    pub epsilon: f64,
    pub alpha: f64,
    /// Width of the final `γ` bracket relative to the search interval.
    pub golden_tol: f64,
    /// Relative stopping tolerance of the inner solver.
    pub inner_tol: f64,
    pub max_iter: usize,
    /// Registered inner-solver name.
    pub inner_solver: String,
}

impl RobustConfig {
    pub fn new(epsilon: f64, alpha: f64) -> Self {
        Self {
            epsilon,
            alpha,
            golden_tol: 1e-3,
            inner_tol: 1e-9,
            max_iter: 20_000,
            inner_solver: registry::DEFAULT_INNER_SOLVER.to_string(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(BiopError::InvalidArgument(format!("ε = {} must be finite and >= 0", self.epsilon)));
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(BiopError::InvalidArgument(format!("α = {} must be positive", self.alpha)));
        }
        if self.epsilon > 0.0 && self.alpha * self.epsilon >= 1.0 {
            return Err(BiopError::InvalidArgument(format!(
                "α = {} must be below 1/ε = {}",
                self.alpha,
                1.0 / self.epsilon
            )));
        }
        if !(self.golden_tol > 0.0 && self.golden_tol < 1.0) || !(self.inner_tol > 0.0) || self.max_iter == 0 {
            return Err(BiopError::InvalidArgument("solver tolerances must be positive".into()));
        }
        Ok(())
    }

    /// Upper end of the golden-search interval, `min(α, 0.999/ε)`.
    pub fn gamma_max(&self) -> f64 {
        if self.epsilon > 0.0 {
            self.alpha.min(GAMMA_MARGIN / self.epsilon)
        } else {
            self.alpha
        }
    }

    pub fn inner_options(&self) -> InnerOptions {
        InnerOptions {
            tol: self.inner_tol,
            max_iter: self.max_iter,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for InnerOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 20_000,
        }
    }
}

/// The inner program for a fixed model, `ε` and `α`; only the radius
/// `min(γ, α)` changes during a golden search, so factorizations are cached.
pub struct InnerProblem {
    quad: ReducedQuadratic,
    g_hat: BlockToeplitz,
    y_hat: DVector<f64>,
    weight_yy: f64,
    weight_uy: f64,
    unconstrained: DMatrix<f64>,
    unconstrained_norm: f64,
    spectrum: OnceLock<(f64, f64)>,
    factors: Mutex<Vec<(f64, Arc<Cholesky<f64, Dyn>>)>>,
}

impl InnerProblem {
    pub fn new(g_hat: &BlockToeplitz, y_hat: &DVector<f64>, epsilon: f64, alpha: f64) -> Result<Self> {
        let g_norm = linalg::spectral_norm(g_hat.matrix())?;
        let y_norm = y_hat.norm();
        let hy = h_bound(epsilon, alpha, y_norm);
        let weight_yy = (1.0 + h_bound(epsilon, alpha, g_norm) + hy).sqrt();
        let weight_uy = (1.0 + hy).sqrt();
        let quad = ReducedQuadratic::robust(g_hat, y_hat, weight_yy, weight_uy)?;
        let unconstrained = quad.minimize(&QuadraticSolveOptions::default())?;
        let unconstrained_norm = linalg::spectral_norm(&unconstrained)?;
        Ok(Self {
            quad,
            g_hat: g_hat.clone(),
            y_hat: y_hat.clone(),
            weight_yy,
            weight_uy,
            unconstrained,
            unconstrained_norm,
            spectrum: OnceLock::new(),
            factors: Mutex::new(Vec::new()),
        })
    }

    pub fn from_model(model: &BehavioralModel, epsilon: f64, alpha: f64) -> Result<Self> {
        Self::new(model.g_hat(), model.y_free_hat(), epsilon, alpha)
    }

    pub fn quadratic(&self) -> &ReducedQuadratic {
        &self.quad
    }

    /// `(√(1 + h(ε,α,Ĝ) + h(ε,α,ŷ)), √(1 + h(ε,α,ŷ)))`.
    pub fn weights(&self) -> (f64, f64) {
        (self.weight_yy, self.weight_uy)
    }

    pub fn unconstrained(&self) -> (&DMatrix<f64>, f64) {
        (&self.unconstrained, self.unconstrained_norm)
    }

    /// `J_inner²` at `X = Φ_uy`.
    pub fn objective_sq(&self, x: &DMatrix<f64>) -> f64 {
        self.quad.objective(x)
    }

    /// `(λ_min, λ_max)` of the reduced Hessian.
    pub fn spectrum(&self) -> (f64, f64) {
        *self.spectrum.get_or_init(|| {
            if self.quad.n_free() <= 2500 {
                let eig = self.quad.free_hessian().symmetric_eigen().eigenvalues;
                (eig.min(), eig.max())
            } else {
                // Q = I and S_u ⪰ b² I bound the curvature from below
                (2.0 * self.weight_uy * self.weight_uy, self.quad.lipschitz_bound())
            }
        })
    }

    /// Geometric mean of the Hessian's extreme eigenvalues.
    pub fn admm_rho(&self) -> f64 {
        let (lo, hi) = self.spectrum();
        (lo.max(1e-12) * hi).sqrt()
    }

    /// Cholesky factor of `H + ρI`, cached per `ρ`.
    fn shifted_factor(&self, rho: f64) -> Result<Arc<Cholesky<f64, Dyn>>> {
        let mut cache = self.factors.lock().expect("factor cache poisoned");
        if let Some((_, f)) = cache.iter().find(|(r, _)| *r == rho) {
            return Ok(Arc::clone(f));
        }
        let f = Arc::new(self.quad.factor(rho)?);
        if cache.len() >= 16 {
            cache.remove(0);
        }
        cache.push((rho, Arc::clone(&f)));
        Ok(f)
    }

    pub fn maps(&self, x: &DMatrix<f64>) -> Result<ClosedLoopMaps> {
        eliminate(&self.g_hat, x)
    }

    pub fn y_hat(&self) -> &DVector<f64> {
        &self.y_hat
    }
}

/// Iterates carried between inner solves of one golden search.
#[derive(Debug, Clone, Default)]
pub struct WarmStart {
    pub x: Option<DMatrix<f64>>,
    pub z: Option<DMatrix<f64>>,
    /// Scaled dual, valid for the penalty `rho`.
    pub u: Option<DMatrix<f64>>,
    pub rho: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct InnerOutcome {
    pub x: DMatrix<f64>,
    pub objective_sq: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each iteration (empty when no iteration was needed).
    pub trace: Vec<f64>,
    pub warm: WarmStart,
}

impl InnerOutcome {
    pub fn j_inner(&self) -> f64 {
        self.objective_sq.sqrt()
    }
}

/// A method for `min J_inner² s.t. Φ_uy causal, ‖Φ_uy‖₂ ≤ radius`.
pub trait InnerSolver: Send + Sync {
    fn name(&self) -> &'static str;

    /// Solves assuming the constraint may be active; the caller handles the
    /// trivial cases (radius zero, unconstrained optimum feasible).
    fn solve_active(
        &self,
        problem: &InnerProblem,
        radius: f64,
        warm: &WarmStart,
        opts: &InnerOptions,
    ) -> Result<InnerOutcome>;

    fn solve(&self, problem: &InnerProblem, radius: f64, warm: &WarmStart, opts: &InnerOptions) -> Result<InnerOutcome> {
        if !(radius >= 0.0) {
            return Err(BiopError::InvalidArgument(format!("radius {radius} must be >= 0")));
        }
        let (x_unc, norm) = problem.unconstrained();
        if norm <= radius {
            return Ok(InnerOutcome {
                x: x_unc.clone(),
                objective_sq: problem.objective_sq(x_unc),
                iterations: 0,
                converged: true,
                trace: Vec::new(),
                warm: WarmStart {
                    x: Some(x_unc.clone()),
                    ..Default::default()
                },
            });
        }
        if radius == 0.0 {
            let x = problem.quad.zero_point();
            return Ok(InnerOutcome {
                objective_sq: problem.objective_sq(&x),
                x,
                iterations: 0,
                converged: true,
                trace: Vec::new(),
                warm: WarmStart::default(),
            });
        }
        self.solve_active(problem, radius, warm, opts)
    }
}

/// Scales a causal matrix into the ball; keeps causality exactly.
fn shrink_into_ball(x: &mut DMatrix<f64>, radius: f64) {
    let n = linalg::spectral_norm(x).unwrap_or(f64::INFINITY);
    if n > radius {
        *x *= radius / n;
    }
}

/// Euclidean projection onto `{causal} ∩ {‖·‖₂ ≤ radius}` by Dykstra's
/// alternating projections, finished by a scaling into the ball so the result
/// is always exactly feasible.
pub fn project_causal_ball(y: &DMatrix<f64>, mask: &CausalMask, radius: f64, tol: f64, max_iter: usize) -> DMatrix<f64> {
    let mut x = mask.apply(y);
    if linalg::spectral_norm(&x).unwrap_or(f64::INFINITY) <= radius {
        return x;
    }
    let mut p = DMatrix::zeros(y.nrows(), y.ncols());
    let mut q = DMatrix::zeros(y.nrows(), y.ncols());
    let mut cur = y.clone();
    let scale = y.norm().max(1e-300);
    for _ in 0..max_iter {
        let a = mask.apply(&(&cur + &p));
        p = &cur + &p - &a;
        let b = linalg::project_spectral_ball(&(&a + &q), radius);
        q = &a + &q - &b;
        let change = (&b - &cur).norm();
        cur = b;
        if change <= tol * scale && mask.violation(&cur) <= tol * scale {
            break;
        }
    }
    x = mask.apply(&cur);
    shrink_into_ball(&mut x, radius);
    x
}

/// Monotone FISTA with the causal-ball projection.
#[derive(Debug, Default, Clone, Copy)]
pub struct ProjectedGradient;

impl ProjectedGradient {
    fn project(problem: &InnerProblem, y: &DMatrix<f64>, radius: f64) -> DMatrix<f64> {
        project_causal_ball(y, problem.quad.mask(), radius, 1e-13, 2000)
    }

    /// `‖X - P(X - ∇f/L)‖·L`.
    fn gradient_mapping_norm(problem: &InnerProblem, x: &DMatrix<f64>, radius: f64, lip: f64) -> f64 {
        let step = x - problem.quad.gradient(x) / lip;
        (x - Self::project(problem, &step, radius)).norm() * lip
    }
}

impl InnerSolver for ProjectedGradient {
    fn name(&self) -> &'static str {
        "projected_gradient"
    }

    fn solve_active(
        &self,
        problem: &InnerProblem,
        radius: f64,
        warm: &WarmStart,
        opts: &InnerOptions,
    ) -> Result<InnerOutcome> {
        let (_, lip) = problem.spectrum();
        let lip = lip * (1.0 + 1e-9);
        let start = warm.x.clone().unwrap_or_else(|| problem.unconstrained.clone());
        let mut x = Self::project(problem, &start, radius);
        let mut fx = problem.objective_sq(&x);
        let mut y = x.clone();
        let mut t = 1.0f64;
        let mut trace = Vec::new();
        let mut converged = false;
        let mut iterations = 0;
        for k in 0..opts.max_iter {
            iterations = k + 1;
            let z = Self::project(problem, &(&y - problem.quad.gradient(&y) / lip), radius);
            let fz = problem.objective_sq(&z);
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let x_prev = x.clone();
            if fz <= fx {
                x = z.clone();
                fx = fz;
            }
            y = &x + (&z - &x) * (t / t_next) + (&x - &x_prev) * ((t - 1.0) / t_next);
            t = t_next;
            trace.push(fx);
            if k % 10 == 9 && Self::gradient_mapping_norm(problem, &x, radius, lip) <= opts.tol * (1.0 + fx) {
                converged = true;
                break;
            }
        }
        if !converged {
            log::debug!("projected gradient hit max_iter at radius {radius}");
        }
        Ok(InnerOutcome {
            warm: WarmStart {
                x: Some(x.clone()),
                ..Default::default()
            },
            x,
            objective_sq: fx,
            iterations,
            converged,
            trace,
        })
    }
}

/// ADMM splitting `X` (causal, quadratic) from `Z` (spectral ball).
#[derive(Debug, Default, Clone, Copy)]
pub struct Admm;

impl InnerSolver for Admm {
    fn name(&self) -> &'static str {
        "admm"
    }

    fn solve_active(
        &self,
        problem: &InnerProblem,
        radius: f64,
        warm: &WarmStart,
        opts: &InnerOptions,
    ) -> Result<InnerOutcome> {
        let quad = &problem.quad;
        let base_rhs = quad.free_rhs();
        let mut z = warm
            .z
            .clone()
            .unwrap_or_else(|| linalg::project_spectral_ball(&problem.unconstrained, radius));
        let (mut u, mut rho) = match (&warm.u, warm.rho) {
            (Some(u), Some(r)) => (u.clone(), r),
            _ => (quad.zero_point(), problem.admm_rho()),
        };
        let mut chol = problem.shifted_factor(rho)?;
        let chol0 = problem.shifted_factor(0.0)?;
        // dual function of the split X = Z at Λ = ρU: a lower bound on the optimum
        let lower_bound = |lam: &DMatrix<f64>| -> f64 {
            let xl = quad.scatter(&chol0.solve(&(&base_rhs - quad.gather(lam))));
            quad.objective(&xl) + lam.dot(&xl) - radius * lam.singular_values().sum()
        };
        let mut x = quad.zero_point();
        let mut best = x.clone();
        let mut best_upper = f64::INFINITY;
        let mut best_lower = f64::NEG_INFINITY;
        let mut converged = false;
        let mut iterations = 0;
        let mut trace = Vec::new();
        for k in 0..opts.max_iter {
            iterations = k + 1;
            let rhs = &base_rhs + quad.gather(&(&z - &u)) * rho;
            x = quad.scatter(&chol.solve(&rhs));
            let z_prev = z;
            z = linalg::project_spectral_ball(&(&x + &u), radius);
            u += &x - &z;
            if k % 10 != 9 {
                continue;
            }
            let mut feasible = x.clone();
            shrink_into_ball(&mut feasible, radius);
            let upper = quad.objective(&feasible);
            if upper < best_upper {
                best_upper = upper;
                best = feasible;
            }
            best_lower = best_lower.max(lower_bound(&(&u * rho)));
            trace.push(best_upper);
            if best_upper - best_lower <= opts.tol * best_upper.abs() {
                converged = true;
                break;
            }
            // residual balancing; the scaled dual follows the penalty
            let primal = (&x - &z).norm();
            let dual = rho * (&z - &z_prev).norm();
            let factor = if primal > 10.0 * dual {
                2.0
            } else if dual > 10.0 * primal {
                0.5
            } else {
                1.0
            };
            if factor != 1.0 {
                rho *= factor;
                u /= factor;
                chol = problem.shifted_factor(rho)?;
            }
        }
        if !converged {
            log::debug!("admm stopped at radius {radius} with gap {}", best_upper - best_lower);
        }
        if best_upper.is_infinite() {
            shrink_into_ball(&mut x, radius);
            best_upper = quad.objective(&x);
            best = x.clone();
        }
        Ok(InnerOutcome {
            x: best,
            objective_sq: best_upper,
            iterations,
            converged,
            trace,
            warm: WarmStart {
                x: Some(x),
                z: Some(z),
                u: Some(u),
                rho: Some(rho),
            },
        })
    }
}

/// Log-barrier interior point on `-log det(r²I - XᵀX)`, Newton steps over the
/// free entries. The barrier has parameter `q = min(rows, cols)`, so a
/// centered iterate at weight `t` is within `q/t` of the optimum.
#[derive(Debug, Default, Clone, Copy)]
pub struct Barrier;

impl Barrier {
    const GROWTH: f64 = 50.0;
    const MAX_NEWTON: usize = 60;

    /// `(ψ, ∇ψ, ∇²ψ)` of `t f + φ` at `x`, or `None` outside the ball.
    fn model(
        quad: &ReducedQuadratic,
        h: &DMatrix<f64>,
        rhs: &DVector<f64>,
        x: &DVector<f64>,
        radius: f64,
        t: f64,
    ) -> Option<(f64, DVector<f64>, DMatrix<f64>)> {
        let xm = quad.scatter(x);
        let q = xm.ncols();
        let mut m = xm.transpose() * &xm * -1.0;
        for k in 0..q {
            m[(k, k)] += radius * radius;
        }
        let chol = Cholesky::new(m)?;
        let logdet: f64 = chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        let w = chol.inverse();
        let p = &xm * &w;
        let s = &p * xm.transpose();
        let grad_phi = quad.gather(&(&p * 2.0));
        let free = quad.free_entries();
        let n = free.len();
        let mut hess = h * t;
        for (a, &(k, l)) in free.iter().enumerate() {
            for (b, &(i, j)) in free.iter().enumerate().skip(a) {
                let id = if k == i { 1.0 } else { 0.0 };
                let v = 2.0 * ((id + s[(k, i)]) * w[(j, l)] + p[(k, j)] * p[(i, l)]);
                hess[(a, b)] += v;
                if a != b {
                    hess[(b, a)] += v;
                }
            }
        }
        debug_assert_eq!(hess.nrows(), n);
        let grad = (h * x - rhs) * t + grad_phi;
        Some((t * quad.objective(&xm) - logdet, grad, hess))
    }

    fn value(quad: &ReducedQuadratic, x: &DVector<f64>, radius: f64, t: f64) -> Option<f64> {
        let xm = quad.scatter(x);
        let mut m = xm.transpose() * &xm * -1.0;
        for k in 0..m.nrows() {
            m[(k, k)] += radius * radius;
        }
        let chol = Cholesky::new(m)?;
        let logdet: f64 = chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        Some(t * quad.objective(&xm) - logdet)
    }
}

impl InnerSolver for Barrier {
    fn name(&self) -> &'static str {
        "barrier"
    }

    fn solve_active(
        &self,
        problem: &InnerProblem,
        radius: f64,
        _warm: &WarmStart,
        opts: &InnerOptions,
    ) -> Result<InnerOutcome> {
        let quad = &problem.quad;
        let h = quad.free_hessian();
        let rhs = quad.free_rhs();
        let q = quad.mask().nrows().min(quad.mask().ncols()) as f64;
        let (x_unc, norm_unc) = problem.unconstrained();
        let mut x = quad.gather(&(x_unc * (0.5 * radius / norm_unc)));
        let mut f = quad.objective(&quad.scatter(&x));
        let mut t = q / f.abs().max(1.0);
        let mut trace = vec![f];
        let mut iterations = 0;
        let mut converged = false;
        'outer: loop {
            for _ in 0..Self::MAX_NEWTON {
                if iterations >= opts.max_iter {
                    break 'outer;
                }
                iterations += 1;
                let (psi, grad, hess) =
                    Self::model(quad, &h, &rhs, &x, radius, t).ok_or_else(|| BiopError::NonFinite("barrier iterate"))?;
                let chol = Cholesky::new(hess).ok_or_else(|| BiopError::Singular("barrier Hessian".into()))?;
                let step = chol.solve(&(-&grad));
                let decrement = -grad.dot(&step);
                if decrement / 2.0 <= 1e-10 {
                    break;
                }
                // inside the quadratic region a full step stays feasible; the
                // Armijo test would only see rounding error in ψ ~ t·f
                if decrement < 0.25 && Self::value(quad, &(&x + &step), radius, t).is_some() {
                    x += &step;
                    continue;
                }
                let mut s = 1.0;
                while s >= 1e-14 {
                    let cand = &x + &step * s;
                    if Self::value(quad, &cand, radius, t).is_some_and(|v| v <= psi - 0.25 * s * decrement) {
                        x = cand;
                        break;
                    }
                    s *= 0.5;
                }
                if s < 1e-14 {
                    break;
                }
            }
            f = quad.objective(&quad.scatter(&x));
            trace.push(f);
            if q / t <= opts.tol * f.abs() {
                converged = true;
                break;
            }
            t *= Self::GROWTH;
        }
        let xm = quad.scatter(&x);
        Ok(InnerOutcome {
            warm: WarmStart {
                x: Some(xm.clone()),
                ..Default::default()
            },
            objective_sq: quad.objective(&xm),
            x: xm,
            iterations,
            converged,
            trace,
        })
    }
}

/// Solves the inner program on a model at one `γ`.
pub fn inner_solve(
    model: &BehavioralModel,
    gamma: f64,
    alpha: f64,
    solver: &dyn InnerSolver,
    opts: &InnerOptions,
) -> Result<(ClosedLoopMaps, f64)> {
    let eps = model.epsilon();
    if eps > 0.0 && gamma * eps >= 1.0 {
        return Err(BiopError::InvalidArgument(format!("γ = {gamma} must be below 1/ε")));
    }
    if !(alpha > 0.0) {
        return Err(BiopError::InvalidArgument(format!("α = {alpha} must be positive")));
    }
    let problem = InnerProblem::from_model(model, eps, alpha)?;
    let out = solver.solve(&problem, gamma.min(alpha), &WarmStart::default(), opts)?;
    Ok((problem.maps(&out.x)?, out.j_inner()))
}

#[derive(Debug, Clone, Serialize)]
pub struct InnerRunLog {
    pub gamma: f64,
    pub radius: f64,
    pub outer_objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RobustSolution {
    pub gamma_star: f64,
    pub maps: ClosedLoopMaps,
    pub controller: ControllerMatrix,
    /// `J_inner(γ*) / (1 - ε γ*)`.
    pub upper_bound: f64,
    pub j_inner: f64,
    /// `ε ‖Φ̂_uy‖₂`.
    pub eta: f64,
    pub phi_uy_norm: f64,
    pub epsilon: f64,
    pub alpha: f64,
    pub solver: &'static str,
    pub runs: Vec<InnerRunLog>,
}

impl RobustSolution {
    pub fn total_iterations(&self) -> usize {
        self.runs.iter().map(|r| r.iterations).sum()
    }
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section search over `γ ∈ [0, min(α, 0.999/ε)]` of
/// `J_inner(min(γ, α)) / (1 - εγ)`, warm-starting each inner solve.
pub fn golden_search(model: &BehavioralModel, config: &RobustConfig) -> Result<RobustSolution> {
    let solver = registry::inner_solver(&config.inner_solver)?;
    golden_search_with(model, config, &*solver)
}

pub fn golden_search_with(model: &BehavioralModel, config: &RobustConfig, solver: &dyn InnerSolver) -> Result<RobustSolution> {
    config.validate()?;
    let eps = config.epsilon;
    let problem = InnerProblem::from_model(model, eps, config.alpha)?;
    let opts = config.inner_options();
    let mut warm = WarmStart::default();
    let mut runs = Vec::new();
    let mut best: Option<(f64, f64, InnerOutcome)> = None;

    let mut eval = |gamma: f64, warm: &mut WarmStart, runs: &mut Vec<InnerRunLog>| -> Result<f64> {
        let radius = gamma.min(config.alpha);
        let out = solver.solve(&problem, radius, warm, &opts)?;
        let value = out.j_inner() / (1.0 - eps * gamma);
        runs.push(InnerRunLog {
            gamma,
            radius,
            outer_objective: value,
            iterations: out.iterations,
            converged: out.converged,
            trace: out.trace.clone(),
        });
        *warm = out.warm.clone();
        if best.as_ref().is_none_or(|(_, v, _)| value < *v) {
            best = Some((gamma, value, out));
        }
        Ok(value)
    };

    let (mut lo, mut hi) = (0.0, config.gamma_max());
    let width = config.golden_tol * hi;
    eval(lo, &mut warm, &mut runs)?;
    eval(hi, &mut warm, &mut runs)?;
    let mut c = hi - INV_PHI * (hi - lo);
    let mut d = lo + INV_PHI * (hi - lo);
    let mut fc = eval(c, &mut warm, &mut runs)?;
    let mut fd = eval(d, &mut warm, &mut runs)?;
    while hi - lo > width {
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - INV_PHI * (hi - lo);
            fc = eval(c, &mut warm, &mut runs)?;
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + INV_PHI * (hi - lo);
            fd = eval(d, &mut warm, &mut runs)?;
        }
    }
    let (gamma_star, upper_bound, out) = best.expect("at least one evaluation");
    let maps = problem.maps(&out.x)?;
    let controller = controller_from_maps(&maps)?;
    let phi_uy_norm = linalg::spectral_norm(&maps.uy)?;
    Ok(RobustSolution {
        gamma_star,
        j_inner: out.j_inner(),
        upper_bound,
        eta: eps * phi_uy_norm,
        phi_uy_norm,
        maps,
        controller,
        epsilon: eps,
        alpha: config.alpha,
        solver: solver.name(),
        runs,
    })
}

/// `α = multiple · ‖Φ_uy‖₂` of the nominal solution on `(Ĝ, ŷ)`, clipped
/// below `0.999/ε`.
pub fn default_alpha(model: &BehavioralModel, epsilon: f64, multiple: f64) -> Result<f64> {
    let (p, m, n) = (model.outputs(), model.inputs(), model.horizon());
    let nominal = iop::solve_nominal(
        model.g_hat(),
        model.y_free_hat(),
        &CostWeights::identity(p, m, n),
        &NoiseModel::identity(p, m),
        &QuadraticSolveOptions::default(),
    )?;
    let mut alpha = multiple * linalg::spectral_norm(&nominal.maps.uy)?;
    if epsilon > 0.0 {
        alpha = alpha.min(GAMMA_MARGIN / epsilon);
    }
    if !(alpha > 0.0) {
        return Err(BiopError::InvalidArgument(format!("derived α = {alpha} is not positive")));
    }
    Ok(alpha)
}

fn check_strictly_causal(t: &BlockToeplitz, what: &'static str) -> Result<()> {
    if !t.is_strictly_causal() {
        let magnitude = t.column().blocks()[0].norm();
        return Err(BiopError::NonCausal { what, magnitude });
    }
    Ok(())
}

/// Explicit feasible point of the robust program built from the true optimal
/// maps: `Φ̃_uy = Φ*_uy (I + ΔΦ*_uy)⁻¹` and so on, with
/// `γ̃ = √2 η / (ε (1 - η))`, `η = ε ‖Φ*_uy‖₂`. Requires `η < 1/5` and
/// `α ≥ γ̃`.
pub fn feasible_from_nominal(
    star_maps: &ClosedLoopMaps,
    delta: &BlockToeplitz,
    epsilon: f64,
    alpha: f64,
) -> Result<(ClosedLoopMaps, f64)> {
    check_strictly_causal(delta, "Δ")?;
    let (p, m, n) = (delta.block_rows(), delta.block_cols(), delta.n_blocks());
    star_maps.check_dims(p, m, n)?;
    let star_norm = linalg::spectral_norm(&star_maps.uy)?;
    let eta = epsilon * star_norm;
    if !(eta < 0.2) {
        return Err(BiopError::Hypothesis(format!("η = ε‖Φ*_uy‖ = {eta:.4} is not below 1/5")));
    }
    let gamma_tilde = if epsilon > 0.0 {
        2f64.sqrt() * eta / (epsilon * (1.0 - eta))
    } else {
        2f64.sqrt() * star_norm
    };
    if alpha < gamma_tilde {
        return Err(BiopError::Hypothesis(format!("α = {alpha} is below γ̃ = {gamma_tilde}")));
    }
    let dm = delta.matrix();
    let ip = DMatrix::identity(p * n, p * n);
    let im = DMatrix::identity(m * n, m * n);
    let inv_y = (&ip + dm * &star_maps.uy)
        .try_inverse()
        .ok_or_else(|| BiopError::Singular("I + ΔΦ*_uy".into()))?;
    let inv_u = (&im + &star_maps.uy * dm)
        .try_inverse()
        .ok_or_else(|| BiopError::Singular("I + Φ*_uy Δ".into()))?;
    // G = Φ*_yy⁻¹ Φ*_yu, so Ĝ = G - Δ
    let g = star_maps
        .yy
        .clone()
        .lu()
        .solve(&star_maps.yu)
        .ok_or_else(|| BiopError::Singular("Φ*_yy".into()))?;
    let yy = &star_maps.yy * &inv_y;
    let yu = &yy * (g - dm);
    let uy = &star_maps.uy * &inv_y;
    let uu = inv_u * &star_maps.uu;
    Ok((
        ClosedLoopMaps {
            yy,
            yu,
            uy,
            uu,
            outputs: p,
            inputs: m,
        },
        gamma_tilde,
    ))
}

/// Cost `J` (not squared) of `K̂ = Φ̂_uy Φ̂_yy⁻¹` on the true plant
/// `G = Ĝ + Δ` with free response `ŷ + δ₀`, written through the model maps
/// and `(I - ΔΦ̂_uy)⁻¹`.
pub fn true_cost_of_robust(
    model: &BehavioralModel,
    maps_hat: &ClosedLoopMaps,
    delta: &BlockToeplitz,
    delta_0: &DVector<f64>,
) -> Result<f64> {
    check_strictly_causal(delta, "Δ")?;
    let (p, m, n) = (model.outputs(), model.inputs(), model.horizon());
    maps_hat.check_dims(p, m, n)?;
    if delta.matrix().shape() != model.g_hat().matrix().shape() || delta_0.len() != p * n {
        return Err(BiopError::DimensionMismatch("Δ or δ₀ does not match the model".into()));
    }
    let dm = delta.matrix();
    let ip = DMatrix::identity(p * n, p * n);
    let im = DMatrix::identity(m * n, m * n);
    let inv_y = (&ip - dm * &maps_hat.uy)
        .try_inverse()
        .ok_or_else(|| BiopError::Singular("I - ΔΦ̂_uy".into()))?;
    let inv_u = (&im - &maps_hat.uy * dm)
        .try_inverse()
        .ok_or_else(|| BiopError::Singular("I - Φ̂_uy Δ".into()))?;
    let y = model.y_free_hat() + delta_0;
    let t11 = &maps_hat.yy * &inv_y;
    let t12 = &t11 * (model.g_hat().matrix() + dm);
    let t21 = &maps_hat.uy * &inv_y;
    let t22 = inv_u * &maps_hat.uu;
    let sq = t11.norm_squared()
        + t12.norm_squared()
        + (&t11 * &y).norm_squared()
        + t21.norm_squared()
        + t22.norm_squared()
        + (&t21 * &y).norm_squared();
    Ok(sq.sqrt())
}

/// `(1 - ε‖Φ̂_uy‖₂)⁻¹ ‖[a Φ̂_yy, Φ̂_yu, Φ̂_yy ŷ; b Φ̂_uy, Φ̂_uu, Φ̂_uy ŷ]‖_F`, an
/// upper bound on the true cost for every `‖Δ‖₂, ‖δ₀‖₂ ≤ ε`.
pub fn lemma2_upper_bound(maps_hat: &ClosedLoopMaps, model: &BehavioralModel, alpha: f64) -> Result<f64> {
    let (p, m, n) = (model.outputs(), model.inputs(), model.horizon());
    maps_hat.check_dims(p, m, n)?;
    let eps = model.epsilon();
    let norm = linalg::spectral_norm(&maps_hat.uy)?;
    if !(eps * norm < 1.0) {
        return Err(BiopError::Hypothesis(format!("ε‖Φ̂_uy‖ = {} is not below 1", eps * norm)));
    }
    if norm > alpha * (1.0 + 1e-8) + 1e-12 {
        return Err(BiopError::Hypothesis(format!("‖Φ̂_uy‖ = {norm} exceeds α = {alpha}")));
    }
    let g_norm = linalg::spectral_norm(model.g_hat().matrix())?;
    let y = model.y_free_hat();
    let hy = h_bound(eps, alpha, y.norm());
    let a2 = 1.0 + h_bound(eps, alpha, g_norm) + hy;
    let b2 = 1.0 + hy;
    let sq = a2 * maps_hat.yy.norm_squared()
        + maps_hat.yu.norm_squared()
        + (&maps_hat.yy * y).norm_squared()
        + b2 * maps_hat.uy.norm_squared()
        + maps_hat.uu.norm_squared()
        + (&maps_hat.uy * y).norm_squared();
    Ok(sq.sqrt() / (1.0 - eps * norm))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SuboptimalityBound {
    pub value: f64,
    pub eta: f64,
    /// Whether `ε < 1/(5‖Φ*_uy‖)` and `α ∈ [5√2/4, 5]·‖Φ*_uy‖` hold.
    pub hypotheses_hold: bool,
}

/// `20 ε‖Φ*_uy‖ + 4(M + V)` on the relative gap `(Ĵ² - J*²)/J*²`.
pub fn suboptimality_bound(
    star_maps: &ClosedLoopMaps,
    epsilon: f64,
    alpha: f64,
    g: &BlockToeplitz,
    y_free: &DVector<f64>,
    g_hat: &BlockToeplitz,
    y_free_hat: &DVector<f64>,
) -> Result<SuboptimalityBound> {
    let star = linalg::spectral_norm(&star_maps.uy)?;
    let g_norm = linalg::spectral_norm(g.matrix())?;
    let gh_norm = linalg::spectral_norm(g_hat.matrix())?;
    let (y_norm, yh_norm) = (y_free.norm(), y_free_hat.norm());
    let m = h_bound(epsilon, alpha, gh_norm)
        + h_bound(epsilon, alpha, yh_norm)
        + h_bound(epsilon, star, g_norm)
        + h_bound(epsilon, star, y_norm);
    let v = h_bound(epsilon, alpha, yh_norm) + h_bound(epsilon, star, y_norm);
    let eta = epsilon * star;
    let hypotheses_hold =
        eta < 0.2 && alpha >= 1.25 * 2f64.sqrt() * star * (1.0 - 1e-12) && alpha <= 5.0 * star * (1.0 + 1e-12);
    if !hypotheses_hold {
        log::debug!("suboptimality bound evaluated outside its hypotheses (η = {eta:.4}, α = {alpha:.4}, ‖Φ*‖ = {star:.4})");
    }
    Ok(SuboptimalityBound {
        value: 20.0 * eta + 4.0 * (m + v),
        eta,
        hypotheses_hold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::behavior::Provenance;
    use crate::iop::maps_from_controller;
    use crate::linalg::BlockColumn;
    use crate::plant::{benchmark_plant, cost_closed_form, free_response, impulse_toeplitz};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_strict(p: usize, m: usize, n: usize, scale: f64, rng: &mut ChaCha8Rng) -> BlockToeplitz {
        let mut blocks = vec![DMatrix::zeros(p, m)];
        for _ in 1..n {
            blocks.push(DMatrix::from_fn(p, m, |_, _| rng.random_range(-scale..scale)));
        }
        BlockToeplitz::new(BlockColumn::new(blocks).unwrap())
    }

    fn scaled_to(t: BlockToeplitz, norm: f64) -> BlockToeplitz {
        let s = linalg::spectral_norm(t.matrix()).unwrap();
        let col = t.column().blocks().iter().map(|b| b * (norm / s)).collect();
        BlockToeplitz::new(BlockColumn::new(col).unwrap())
    }

    fn benchmark_model(rho: f64, eps: f64) -> (BehavioralModel, BlockToeplitz, DVector<f64>) {
        let plant = benchmark_plant(rho);
        let g = impulse_toeplitz(&plant, 11);
        let y = free_response(&plant, 11);
        let model = BehavioralModel::new(g.column().clone(), y.clone(), eps, Provenance::Exact).unwrap();
        (model, g, y)
    }

    fn small_model(seed: u64, eps: f64) -> BehavioralModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_strict(2, 2, 4, 1.0, &mut rng);
        let y = DVector::from_fn(8, |_, _| rng.random_range(-1.0..1.0));
        BehavioralModel::new(g.column().clone(), y, eps, Provenance::LeastSquares).unwrap()
    }

    #[test]
    fn h_examples_and_monotonicity() {
        assert_eq!(h_bound(0.0, 3.0, 2.0), 0.0);
        assert!((h_bound(0.1, 1.0, 1.0) - 0.69).abs() < 1e-14);
        let grid = [0.0, 0.05, 0.3, 1.0, 4.0];
        for a in grid {
            for b in grid {
                for y in grid {
                    let h = h_bound(a, b, y);
                    assert!(h_bound(a + 0.1, b, y) >= h);
                    assert!(h_bound(a, b + 0.1, y) >= h);
                    assert!(h_bound(a, b, y + 0.1) >= h);
                }
            }
        }
    }

    #[test]
    fn causal_ball_projection_is_feasible_and_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mask = CausalMask::new(3, 2, 2, false);
        let y = DMatrix::from_fn(6, 6, |_, _| rng.random_range(-2.0..2.0));
        let radius = 0.8;
        let x = project_causal_ball(&y, &mask, radius, 1e-13, 5000);
        assert_eq!(mask.violation(&x), 0.0);
        assert!(linalg::spectral_norm(&x).unwrap() <= radius + 1e-12);
        let d = (&x - &y).norm();
        for _ in 0..200 {
            let mut cand = mask.apply(&(&x + DMatrix::from_fn(6, 6, |_, _| rng.random_range(-0.05..0.05))));
            shrink_into_ball(&mut cand, radius);
            assert!((&cand - &y).norm() >= d - 1e-9);
        }
    }

    #[test]
    fn zero_epsilon_reproduces_nominal() {
        let (model, g, y) = benchmark_model(0.99, 0.0);
        let nominal = iop::solve_nominal(
            &g,
            &y,
            &CostWeights::identity(2, 2, 11),
            &NoiseModel::identity(2, 2),
            &QuadraticSolveOptions::default(),
        )
        .unwrap();
        let star = linalg::spectral_norm(&nominal.maps.uy).unwrap();
        for solver in [&ProjectedGradient as &dyn InnerSolver, &Admm, &Barrier] {
            let (maps, j) = inner_solve(&model, 2.0 * star, 1.5 * star, solver, &InnerOptions::default()).unwrap();
            assert!((j - nominal.cost()).abs() < 1e-5 * nominal.cost());
            assert!((maps.uy - &nominal.maps.uy).amax() < 1e-5);
        }
        let cfg = RobustConfig::new(0.0, 1.5 * star);
        let sol = golden_search(&model, &cfg).unwrap();
        assert!((sol.j_inner - nominal.cost()).abs() < 1e-5 * nominal.cost());
        assert!((sol.upper_bound - sol.j_inner).abs() < 1e-12);
    }

    #[test]
    fn gamma_zero_forces_open_loop() {
        let model = small_model(1, 0.05);
        let (maps, j) = inner_solve(&model, 0.0, 1.0, &Admm, &InnerOptions::default()).unwrap();
        assert_eq!(maps.uy.amax(), 0.0);
        let problem = InnerProblem::from_model(&model, 0.05, 1.0).unwrap();
        let (a, _) = problem.weights();
        // J_inner² at Φ_uy = 0: a²‖I‖² + ‖Ĝ‖² + ‖ŷ‖² + ‖I‖²
        let expected = a * a * 8.0 + model.g_hat().matrix().norm_squared() + model.y_free_hat().norm_squared() + 8.0;
        assert!((j * j - expected).abs() < 1e-10 * expected);
    }

    fn check_active_solution(solver: &dyn InnerSolver, seed: u64) {
        let model = small_model(seed, 0.05);
        let problem = InnerProblem::from_model(&model, 0.05, 5.0).unwrap();
        let (_, unc) = problem.unconstrained();
        let radius = 0.5 * unc;
        let out = solver
            .solve(&problem, radius, &WarmStart::default(), &InnerOptions::default())
            .unwrap();
        let norm = linalg::spectral_norm(&out.x).unwrap();
        assert!((norm - radius).abs() < 1e-6, "{norm} vs {radius}");
        let mask = problem.quadratic().mask();
        assert_eq!(mask.violation(&out.x), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        for _ in 0..100 {
            let mut cand = mask.apply(&(&out.x + DMatrix::from_fn(8, 8, |_, _| rng.random_range(-0.02..0.02))));
            shrink_into_ball(&mut cand, radius);
            assert!(problem.objective_sq(&cand) >= out.objective_sq - 1e-9 * out.objective_sq);
        }
    }

    #[test]
    fn active_constraint_projected_gradient() {
        check_active_solution(&ProjectedGradient, 2);
    }

    #[test]
    fn active_constraint_admm() {
        check_active_solution(&Admm, 2);
    }

    #[test]
    fn active_constraint_barrier() {
        check_active_solution(&Barrier, 2);
    }

    #[test]
    fn solvers_agree() {
        let model = small_model(4, 0.02);
        let problem = InnerProblem::from_model(&model, 0.02, 3.0).unwrap();
        let radius = 0.3 * problem.unconstrained().1;
        let opts = InnerOptions::default();
        let a = ProjectedGradient.solve(&problem, radius, &WarmStart::default(), &opts).unwrap();
        let b = Admm.solve(&problem, radius, &WarmStart::default(), &opts).unwrap();
        let c = Barrier.solve(&problem, radius, &WarmStart::default(), &opts).unwrap();
        assert!((a.objective_sq - b.objective_sq).abs() < 1e-7 * a.objective_sq);
        assert!((a.objective_sq - c.objective_sq).abs() < 1e-7 * a.objective_sq);
        assert!(c.converged);
        assert!(a.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn projected_gradient_stationarity() {
        let model = small_model(5, 0.03);
        let problem = InnerProblem::from_model(&model, 0.03, 3.0).unwrap();
        let radius = 0.4 * problem.unconstrained().1;
        let out = ProjectedGradient
            .solve(&problem, radius, &WarmStart::default(), &InnerOptions::default())
            .unwrap();
        assert!(out.converged);
        let lip = problem.spectrum().1 * (1.0 + 1e-9);
        let gm = ProjectedGradient::gradient_mapping_norm(&problem, &out.x, radius, lip);
        assert!(gm < 1e-6 * (1.0 + out.objective_sq));
    }

    #[test]
    fn prop3_identity_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let (p, m, n) = (2, 1, 4);
            let g_hat = random_strict(p, m, n, 1.0, &mut rng);
            let y_hat = DVector::from_fn(p * n, |_, _| rng.random_range(-1.0..1.0));
            let model = BehavioralModel::new(g_hat.column().clone(), y_hat.clone(), 0.1, Provenance::LeastSquares).unwrap();
            let x = CausalMask::new(n, m, p, false).apply(&DMatrix::from_fn(m * n, p * n, |_, _| rng.random_range(-0.5..0.5)));
            let maps_hat = eliminate(&g_hat, &x).unwrap();
            let delta = scaled_to(random_strict(p, m, n, 1.0, &mut rng), 0.1);
            let d0 = DVector::from_fn(p * n, |_, _| rng.random_range(-0.05..0.05));
            let eq = true_cost_of_robust(&model, &maps_hat, &delta, &d0).unwrap();
            let g = BlockToeplitz::new(BlockColumn::new(
                g_hat.column().blocks().iter().zip(delta.column().blocks()).map(|(a, b)| a + b).collect(),
            ).unwrap());
            let k = controller_from_maps(&maps_hat).unwrap();
            let direct = cost_closed_form(
                &g,
                &(&y_hat + &d0),
                &maps_from_controller(&g, &k).unwrap(),
                &CostWeights::identity(p, m, n),
                &NoiseModel::identity(p, m),
            )
            .unwrap();
            assert!((eq * eq - direct).abs() < 1e-8 * direct.max(1.0));
        }
    }

    #[test]
    fn true_cost_without_mismatch_is_model_cost() {
        let model = small_model(6, 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = CausalMask::new(4, 2, 2, false).apply(&DMatrix::from_fn(8, 8, |_, _| rng.random_range(-0.5..0.5)));
        let maps = eliminate(model.g_hat(), &x).unwrap();
        let zero = BlockToeplitz::new(BlockColumn::zeros(4, 2, 2));
        let c = true_cost_of_robust(&model, &maps, &zero, &DVector::zeros(8)).unwrap();
        let direct = cost_closed_form(
            model.g_hat(),
            model.y_free_hat(),
            &maps,
            &CostWeights::identity(2, 2, 4),
            &NoiseModel::identity(2, 2),
        )
        .unwrap();
        assert!((c * c - direct).abs() < 1e-10 * direct);
        // ε = 0 collapses the bound to the model cost as well
        let m0 = model.clone().with_epsilon(0.0).unwrap();
        let b = lemma2_upper_bound(&maps, &m0, 10.0).unwrap();
        assert!((b * b - direct).abs() < 1e-10 * direct);
    }

    #[test]
    fn lemma2_bound_dominates_sampled_mismatch_and_grows_with_eps() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let model = small_model(7, 0.05);
        let x = CausalMask::new(4, 2, 2, false).apply(&DMatrix::from_fn(8, 8, |_, _| rng.random_range(-0.4..0.4)));
        let maps = eliminate(model.g_hat(), &x).unwrap();
        let alpha = linalg::spectral_norm(&x).unwrap() * 1.2;
        let bound = lemma2_upper_bound(&maps, &model, alpha).unwrap();
        for _ in 0..200 {
            let delta = scaled_to(random_strict(2, 2, 4, 1.0, &mut rng), 0.05 * rng.random_range(0.0..1.0f64).sqrt());
            let mut d0 = DVector::from_fn(8, |_, _| rng.random_range(-1.0..1.0));
            d0 *= 0.05 * rng.random_range(0.0..1.0) / d0.norm();
            assert!(true_cost_of_robust(&model, &maps, &delta, &d0).unwrap() <= bound);
        }
        let mut prev = 0.0;
        for eps in [0.0, 0.01, 0.02, 0.05, 0.1] {
            let b = lemma2_upper_bound(&maps, &model.clone().with_epsilon(eps).unwrap(), alpha).unwrap();
            assert!(b >= prev);
            prev = b;
        }
    }

    #[test]
    fn feasible_point_properties() {
        let (_, g, y) = benchmark_model(0.9, 0.0);
        let star = iop::solve_nominal(
            &g,
            &y,
            &CostWeights::identity(2, 2, 11),
            &NoiseModel::identity(2, 2),
            &QuadraticSolveOptions::default(),
        )
        .unwrap();
        let zero = BlockToeplitz::new(BlockColumn::zeros(11, 2, 2));
        let (same, _) = feasible_from_nominal(&star.maps, &zero, 0.01, 100.0).unwrap();
        assert!((same.yy - &star.maps.yy).amax() < 1e-12 && (same.uu - &star.maps.uu).amax() < 1e-12);
        let star_norm = linalg::spectral_norm(&star.maps.uy).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let eps = 0.1 / star_norm;
        let delta = scaled_to(random_strict(2, 2, 11, 1.0, &mut rng), eps);
        let (maps, gamma) = feasible_from_nominal(&star.maps, &delta, eps, 100.0).unwrap();
        let g_hat = BlockToeplitz::new(BlockColumn::new(
            g.column().blocks().iter().zip(delta.column().blocks()).map(|(a, b)| a - b).collect(),
        ).unwrap());
        assert!(iop::achievability_residual(&g_hat, &maps).unwrap() < 1e-8);
        assert!(linalg::spectral_norm(&maps.uy).unwrap() <= gamma);
        assert!(matches!(
            feasible_from_nominal(&star.maps, &delta, 0.3 / star_norm, 100.0),
            Err(BiopError::Hypothesis(_))
        ));
        // γ̃ → √2‖Φ*‖ as η → 0
        for eps in [1e-2, 1e-3, 1e-4] {
            let (_, gt) = feasible_from_nominal(&star.maps, &zero, eps / star_norm, 100.0).unwrap();
            assert!((gt - 2f64.sqrt() * star_norm).abs() <= 2.0 * 2f64.sqrt() * star_norm * eps);
        }
    }

    #[test]
    fn suboptimality_bound_vanishes_at_zero_eps() {
        let (model, g, y) = benchmark_model(0.9, 0.0);
        let star = iop::solve_nominal(
            &g,
            &y,
            &CostWeights::identity(2, 2, 11),
            &NoiseModel::identity(2, 2),
            &QuadraticSolveOptions::default(),
        )
        .unwrap();
        let b = suboptimality_bound(&star.maps, 0.0, 1.0, &g, &y, model.g_hat(), model.y_free_hat()).unwrap();
        assert_eq!(b.value, 0.0);
        // ratio to ε‖Φ*‖(‖G‖² + ‖y‖²) settles as ε → 0
        let s = linalg::spectral_norm(&star.maps.uy).unwrap();
        let scale = s * (linalg::spectral_norm(g.matrix()).unwrap().powi(2) + y.norm_squared());
        let ratios: Vec<f64> = [1e-3, 1e-4, 1e-5, 1e-6]
            .iter()
            .map(|e| suboptimality_bound(&star.maps, *e, 3.0 * s, &g, &y, &g, &y).unwrap().value / (e * scale))
            .collect();
        assert!(((ratios[3] - ratios[2]) / ratios[3]).abs() < 1e-3);
        assert!(((ratios[2] - ratios[1]) / ratios[2]).abs() < 1e-2);
    }

    #[test]
    fn outer_objective_is_unimodal_on_a_grid() {
        let (g_model, _, _) = benchmark_model(0.8, 0.0);
        let model = g_model.with_epsilon(0.02).unwrap();
        let alpha = default_alpha(&model, 0.02, 3.0).unwrap();
        let problem = InnerProblem::from_model(&model, 0.02, alpha).unwrap();
        let opts = InnerOptions::default();
        let hi = alpha.min(GAMMA_MARGIN / 0.02);
        let mut warm = WarmStart::default();
        let values: Vec<f64> = (0..50)
            .map(|k| {
                let gamma = hi * k as f64 / 49.0;
                let out = Barrier.solve(&problem, gamma.min(alpha), &warm, &opts).unwrap();
                warm = out.warm.clone();
                out.j_inner() / (1.0 - 0.02 * gamma)
            })
            .collect();
        let tol = 10.0 * opts.tol * values[0];
        for k in 1..49 {
            assert!(!(values[k] > values[k - 1] + tol && values[k] > values[k + 1] + tol), "interior max at {k}");
        }
    }

    #[test]
    fn config_validation() {
        assert!(RobustConfig::new(0.1, 20.0).validate().is_err());
        assert!(RobustConfig::new(-0.1, 1.0).validate().is_err());
        assert!(RobustConfig::new(0.1, 5.0).validate().is_ok());
        assert!((RobustConfig::new(0.5, 1.9).gamma_max() - 1.9).abs() < 1e-15);
    }
}
