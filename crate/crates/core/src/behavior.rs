//! Behavioral side: data libraries, Hankel splitting, the data equation for
//! the impulse and free responses, least-squares estimates and calibration of
//! the error level `ε`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{BiopError, Result};
use crate::linalg::{self, BlockColumn, BlockToeplitz, DEFAULT_PINV_TOL};
use crate::plant::{self, StateSpacePlant, Trajectory};
use crate::rng;

/// Relative residual above which data claimed noiseless are rejected.
pub const EXACT_RESIDUAL_TOL: f64 = 1e-8;

/// A historical trajectory of length `T` and a recent one of length `T_ini`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataLibrary {
    pub historical: Trajectory,
    pub recent: Trajectory,
}

impl DataLibrary {
    pub fn new(historical: Trajectory, recent: Trajectory) -> Result<Self> {
        if historical.inputs != recent.inputs || historical.outputs != recent.outputs {
            return Err(BiopError::DimensionMismatch(format!(
                "historical data is (m, p) = ({}, {}), recent is ({}, {})",
                historical.inputs, historical.outputs, recent.inputs, recent.outputs
            )));
        }
        if historical.start_index + historical.len() as i64 > recent.start_index {
            log::warn!("historical and recent windows overlap");
        }
        Ok(Self { historical, recent })
    }

    pub fn inputs(&self) -> usize {
        self.historical.inputs
    }

    pub fn outputs(&self) -> usize {
        self.historical.outputs
    }
}

/// Lengths of the synthetic data-collection experiment. One run starts from
/// rest at `t = -t_h`; the historical window is `[-t_h, -t_h + t_hist - 1]`,
/// the recent window is `[-t_ini, -1]` and the state at `t = 0` is steered to
/// the plant's `x0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataSpec {
    pub t_hist: usize,
    pub t_h: usize,
    pub t_ini: usize,
    pub horizon: usize,
    /// Standard deviation of the i.i.d. input and output measurement noise.
    pub noise_std: f64,
}

impl DataSpec {
    /// Depth of the Hankel matrices, `T_ini + N`.
    pub fn depth(&self) -> usize {
        self.t_ini + self.horizon
    }

    /// PE order needed for exactness: `n + T_ini + N`.
    pub fn pe_order(&self, states: usize) -> usize {
        states + self.depth()
    }

    /// Shortest `T` that can be persistently exciting of order `L`:
    /// `(m + 1) L - 1`.
    pub fn min_length(inputs: usize, order: usize) -> usize {
        (inputs + 1) * order - 1
    }

    pub fn validate(&self, plant: &StateSpacePlant) -> Result<()> {
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(BiopError::InvalidArgument(format!("noise level {} must be >= 0", self.noise_std)));
        }
        if self.horizon == 0 || self.t_ini == 0 {
            return Err(BiopError::InvalidArgument("T_ini and N must be positive".into()));
        }
        if self.t_hist < self.depth() {
            return Err(BiopError::InvalidArgument(format!(
                "T = {} is shorter than T_ini + N = {}",
                self.t_hist,
                self.depth()
            )));
        }
        if self.t_h < self.t_hist || self.t_h < self.t_ini {
            return Err(BiopError::InvalidArgument(format!(
                "T_h = {} must cover both T = {} and T_ini = {}",
                self.t_h, self.t_hist, self.t_ini
            )));
        }
        if self.t_ini < plant.states() {
            return Err(BiopError::InvalidArgument(format!(
                "T_ini = {} cannot steer an order-{} plant",
                self.t_ini,
                plant.states()
            )));
        }
        let need = Self::min_length(plant.inputs(), self.pe_order(plant.states()));
        if self.t_hist < need {
            log::warn!(
                "T = {} is below (m+1)(n+T_ini+N)-1 = {need}; the input cannot be persistently exciting",
                self.t_hist
            );
        }
        Ok(())
    }
}

/// Simulates one data-collection run. Inputs are i.i.d. standard normal, with
/// a minimum-norm correction over the last `T_ini` steps so that `x(0) = x0`.
/// Recorded signals carry i.i.d. `N(0, σ²)` noise; the noise stream is
/// independent of the input stream, so equal seeds share the excitation.
pub fn generate_data(plant: &StateSpacePlant, spec: &DataSpec, seed: u64) -> Result<DataLibrary> {
    spec.validate(plant)?;
    let (n, m, p) = (plant.states(), plant.inputs(), plant.outputs());
    let len = spec.t_h;
    let mut input_rng = rng::rng_from(rng::derive_seed(seed, &[0]));
    let mut u = rng::standard_normal(&mut input_rng, m * len);

    let mut x = DVector::zeros(n);
    for t in 0..len {
        x = &plant.a * x + &plant.b * u.rows(t * m, m);
    }
    // reach = [A^{T_ini-1} B, ..., A B, B]
    let mut reach = DMatrix::zeros(n, m * spec.t_ini);
    let mut blk = plant.b.clone();
    for k in (0..spec.t_ini).rev() {
        reach.view_mut((0, k * m), (n, m)).copy_from(&blk);
        blk = &plant.a * blk;
    }
    let correction = linalg::pseudoinverse(&reach, DEFAULT_PINV_TOL)? * (&plant.x0 - &x);
    let offset = m * (len - spec.t_ini);
    let mut tail = u.rows_mut(offset, m * spec.t_ini);
    tail += &correction;

    let mut y = DVector::zeros(p * len);
    let mut x = DVector::zeros(n);
    for t in 0..len {
        y.rows_mut(t * p, p).copy_from(&(&plant.c * &x));
        x = &plant.a * x + &plant.b * u.rows(t * m, m);
    }
    let miss = (&x - &plant.x0).norm();
    if miss > 1e-8 * (1.0 + plant.x0.norm()) {
        return Err(BiopError::Hypothesis(format!(
            "could not steer the plant to x0 within T_ini steps (miss {miss:.3e})"
        )));
    }

    if spec.noise_std > 0.0 {
        let mut noise_rng = rng::rng_from(rng::derive_seed(seed, &[1]));
        u += rng::standard_normal(&mut noise_rng, m * len) * spec.noise_std;
        y += rng::standard_normal(&mut noise_rng, p * len) * spec.noise_std;
    }
    let run = Trajectory::new(u, y, m, p, -(len as i64))?;
    DataLibrary::new(run.window(0, spec.t_hist)?, run.window(len - spec.t_ini, spec.t_ini)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PersistencyCheck {
    pub exciting: bool,
    pub rank: usize,
    pub required: usize,
}

/// Full row rank of the depth-`order` Hankel matrix of `u`.
pub fn is_persistently_exciting(u: &DVector<f64>, dim: usize, order: usize) -> PersistencyCheck {
    let required = dim * order;
    let rank = linalg::build_hankel(u, dim, order)
        .ok()
        .and_then(|h| linalg::numerical_rank(&h.data, DEFAULT_PINV_TOL).ok())
        .unwrap_or(0);
    PersistencyCheck {
        exciting: order > 0 && rank == required,
        rank,
        required,
    }
}

/// Past/future blocks of the depth-`(T_ini + N)` Hankel matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct HankelSplit {
    pub u_p: DMatrix<f64>,
    pub u_f: DMatrix<f64>,
    pub y_p: DMatrix<f64>,
    pub y_f: DMatrix<f64>,
    pub t_ini: usize,
    pub horizon: usize,
    pub inputs: usize,
    pub outputs: usize,
}

impl HankelSplit {
    pub fn width(&self) -> usize {
        self.u_p.ncols()
    }

    /// `[U_p; Y_p; U_f]`.
    pub fn data_matrix(&self) -> DMatrix<f64> {
        let w = self.width();
        let rows = self.u_p.nrows() + self.y_p.nrows() + self.u_f.nrows();
        let mut out = DMatrix::zeros(rows, w);
        let mut r = 0;
        for blk in [&self.u_p, &self.y_p, &self.u_f] {
            out.view_mut((r, 0), (blk.nrows(), w)).copy_from(blk);
            r += blk.nrows();
        }
        out
    }
}

pub fn split_hankels(data: &DataLibrary, t_ini: usize, horizon: usize) -> Result<HankelSplit> {
    let (m, p) = (data.inputs(), data.outputs());
    let depth = t_ini + horizon;
    if data.historical.len() < depth || horizon == 0 {
        return Err(BiopError::InvalidArgument(format!(
            "historical length {} is shorter than T_ini + N = {depth}",
            data.historical.len()
        )));
    }
    let hu = linalg::build_hankel(&data.historical.u, m, depth)?;
    let hy = linalg::build_hankel(&data.historical.y, p, depth)?;
    let w = hu.width();
    Ok(HankelSplit {
        u_p: hu.data.rows(0, m * t_ini).into_owned(),
        u_f: hu.data.rows(m * t_ini, m * horizon).into_owned(),
        y_p: hy.data.rows(0, p * t_ini).into_owned(),
        y_f: hy.data.rows(p * t_ini, p * horizon).into_owned(),
        t_ini,
        horizon,
        inputs: m,
        outputs: p,
    })
    .map(|s: HankelSplit| {
        debug_assert_eq!(s.width(), w);
        s
    })
}

/// Minimum-norm solutions of the data equation together with its residual.
#[derive(Debug, Clone)]
pub struct BehavioralSolution {
    /// `W × m`: combinations producing a unit impulse on each input.
    pub g_mat: DMatrix<f64>,
    /// `W`: combination matching the recent trajectory with zero future input.
    pub g_vec: DVector<f64>,
    /// Relative residual of the stacked system.
    pub residual: f64,
}

fn data_rhs(split: &HankelSplit, recent: &Trajectory) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let (m, p, t_ini, n) = (split.inputs, split.outputs, split.t_ini, split.horizon);
    if recent.len() != t_ini || recent.inputs != m || recent.outputs != p {
        return Err(BiopError::DimensionMismatch(format!(
            "recent trajectory has {} samples of (m, p) = ({}, {}), expected {t_ini} of ({m}, {p})",
            recent.len(),
            recent.inputs,
            recent.outputs
        )));
    }
    let rows = (m + p) * t_ini + m * n;
    let mut rhs_g = DMatrix::zeros(rows, m);
    rhs_g
        .view_mut(((m + p) * t_ini, 0), (m, m))
        .copy_from(&DMatrix::identity(m, m));
    let mut rhs_v = DVector::zeros(rows);
    rhs_v.rows_mut(0, m * t_ini).copy_from(&recent.u);
    rhs_v.rows_mut(m * t_ini, p * t_ini).copy_from(&recent.y);
    Ok((rhs_g, rhs_v))
}

/// Least-squares (minimum-norm) solution of the data equation.
pub fn least_squares_solution(split: &HankelSplit, recent: &Trajectory) -> Result<BehavioralSolution> {
    let (rhs_g, rhs_v) = data_rhs(split, recent)?;
    let lhs = split.data_matrix();
    if lhs.amax() == 0.0 {
        return Err(BiopError::InvalidArgument("Hankel data are identically zero".into()));
    }
    let pinv = linalg::pseudoinverse(&lhs, DEFAULT_PINV_TOL)?;
    let g_mat = &pinv * &rhs_g;
    let g_vec = &pinv * &rhs_v;
    let res_g = (&lhs * &g_mat - &rhs_g).norm() / rhs_g.norm().max(1.0);
    let res_v = (&lhs * &g_vec - &rhs_v).norm() / rhs_v.norm().max(1.0);
    Ok(BehavioralSolution {
        g_mat,
        g_vec,
        residual: res_g.max(res_v),
    })
}

/// The exact (noiseless) data equation; fails when it has no solution to
/// within [`EXACT_RESIDUAL_TOL`].
pub fn solve_behavioral_system(split: &HankelSplit, recent: &Trajectory) -> Result<BehavioralSolution> {
    let sol = least_squares_solution(split, recent)?;
    if sol.residual > EXACT_RESIDUAL_TOL {
        return Err(BiopError::Residual {
            residual: sol.residual,
            tol: EXACT_RESIDUAL_TOL,
        });
    }
    Ok(sol)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Exact,
    LeastSquares,
}

impl Provenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::Exact => "exact",
            Provenance::LeastSquares => "least_squares",
        }
    }
}

/// Estimated impulse response `Ĝ` (strictly causal) and free response `ŷ`.
#[derive(Debug, Clone)]
pub struct BehavioralModel {
    g_hat: BlockToeplitz,
    y_free_hat: DVector<f64>,
    epsilon: f64,
    provenance: Provenance,
}

impl BehavioralModel {
    /// The first block of `g_col` is zeroed to enforce strict causality.
    pub fn new(mut g_col: BlockColumn, y_free_hat: DVector<f64>, epsilon: f64, provenance: Provenance) -> Result<Self> {
        if !(epsilon >= 0.0) {
            return Err(BiopError::InvalidArgument(format!("ε = {epsilon} must be >= 0")));
        }
        if y_free_hat.len() != g_col.block_rows() * g_col.len() {
            return Err(BiopError::DimensionMismatch(format!(
                "free response has {} entries for {} blocks of {} rows",
                y_free_hat.len(),
                g_col.len(),
                g_col.block_rows()
            )));
        }
        g_col.block_mut(0).fill(0.0);
        Ok(Self {
            g_hat: BlockToeplitz::new(g_col),
            y_free_hat,
            epsilon,
            provenance,
        })
    }

    /// `Ĝ = Toep(Y_f G)`, `ŷ = Y_f g`.
    pub fn from_solution(split: &HankelSplit, sol: &BehavioralSolution, provenance: Provenance) -> Result<Self> {
        let col = BlockColumn::from_stacked(&(&split.y_f * &sol.g_mat), split.outputs)?;
        Self::new(col, &split.y_f * &sol.g_vec, 0.0, provenance)
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Result<Self> {
        if !(epsilon >= 0.0) {
            return Err(BiopError::InvalidArgument(format!("ε = {epsilon} must be >= 0")));
        }
        self.epsilon = epsilon;
        Ok(self)
    }

    pub fn g_hat(&self) -> &BlockToeplitz {
        &self.g_hat
    }

    pub fn g_hat_column(&self) -> &BlockColumn {
        self.g_hat.column()
    }

    pub fn y_free_hat(&self) -> &DVector<f64> {
        &self.y_free_hat
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn horizon(&self) -> usize {
        self.g_hat.n_blocks()
    }

    pub fn inputs(&self) -> usize {
        self.g_hat.block_cols()
    }

    pub fn outputs(&self) -> usize {
        self.g_hat.block_rows()
    }

    /// `max(‖Ĝ - G‖₂, ‖ŷ - y_free‖₂)` against a ground truth.
    pub fn error_against(&self, g: &BlockToeplitz, y_free: &DVector<f64>) -> Result<f64> {
        let dg = linalg::spectral_norm(self.g_hat.sub(g)?.matrix())?;
        if y_free.len() != self.y_free_hat.len() {
            return Err(BiopError::DimensionMismatch("free responses differ in length".into()));
        }
        Ok(dg.max((&self.y_free_hat - y_free).norm()))
    }
}

/// Eq.-free convenience: least-squares model straight from a data library.
pub fn least_squares_model(split: &HankelSplit, recent: &Trajectory) -> Result<BehavioralModel> {
    let sol = least_squares_solution(split, recent)?;
    BehavioralModel::from_solution(split, &sol, Provenance::LeastSquares)
}

/// Exact model from noiseless data.
pub fn exact_model(split: &HankelSplit, recent: &Trajectory) -> Result<BehavioralModel> {
    let sol = solve_behavioral_system(split, recent)?;
    BehavioralModel::from_solution(split, &sol, Provenance::Exact)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpsilonCalibration {
    pub epsilon: f64,
    pub percentile: f64,
    /// Per-realization `ε̃`, in realization order.
    pub samples: Vec<f64>,
}

/// Linear-interpolation percentile (`q ∈ [0, 100]`) of unsorted samples.
pub fn percentile(samples: &[f64], q: f64) -> Result<f64> {
    if samples.is_empty() || !(0.0..=100.0).contains(&q) {
        return Err(BiopError::InvalidArgument(format!(
            "percentile {q} of {} samples",
            samples.len()
        )));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = q / 100.0 * (s.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    Ok(s[lo] + (s[hi] - s[lo]) * (pos - lo as f64))
}

/// Draws `n_realizations` noisy data libraries, measures the least-squares
/// estimation error of each against the true plant, and returns the requested
/// percentile. Zero noise gives `ε = 0`.
pub fn calibrate_epsilon(
    plant: &StateSpacePlant,
    spec: &DataSpec,
    n_realizations: usize,
    pct: f64,
    seed: u64,
) -> Result<EpsilonCalibration> {
    if n_realizations == 0 || !(pct > 0.0 && pct <= 100.0) {
        return Err(BiopError::InvalidArgument(format!(
            "need n_realizations >= 1 and percentile in (0, 100], got {n_realizations} and {pct}"
        )));
    }
    spec.validate(plant)?;
    let g = plant::impulse_toeplitz(plant, spec.horizon);
    let y_free = plant::free_response(plant, spec.horizon);
    let samples = (0..n_realizations as u64)
        .into_par_iter()
        .map(|k| -> Result<f64> {
            let data = generate_data(plant, spec, rng::derive_seed(seed, &[k]))?;
            let split = split_hankels(&data, spec.t_ini, spec.horizon)?;
            least_squares_model(&split, &data.recent)?.error_against(&g, &y_free)
        })
        .collect::<Result<Vec<_>>>()?;
    let epsilon = if spec.noise_std == 0.0 {
        0.0
    } else {
        percentile(&samples, pct)?
    };
    Ok(EpsilonCalibration {
        epsilon,
        percentile: pct,
        samples,
    })
}
