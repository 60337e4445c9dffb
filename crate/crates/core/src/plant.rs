//! Ground-truth LTI plant: simulation, exact impulse and free responses, and
//! closed-form / Monte-Carlo evaluation of the finite-horizon LQG cost.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{BiopError, Result};
use crate::iop::{ClosedLoopMaps, ControllerMatrix};
use crate::linalg::{self, BlockColumn, BlockToeplitz, DEFAULT_PINV_TOL};
use crate::rng;

/// `x(t+1) = A x(t) + B u(t)`, `y(t) = C x(t) + v(t)`, `x(0) = x0`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpacePlant {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub x0: DVector<f64>,
}

impl StateSpacePlant {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, x0: DVector<f64>) -> Result<Self> {
        let n = a.nrows();
        if !a.is_square() || b.nrows() != n || c.ncols() != n || x0.len() != n {
            return Err(BiopError::DimensionMismatch(format!(
                "A {:?}, B {:?}, C {:?}, x0 {}",
                a.shape(),
                b.shape(),
                c.shape(),
                x0.len()
            )));
        }
        if b.ncols() == 0 || c.nrows() == 0 {
            return Err(BiopError::InvalidArgument("plant needs at least one input and one output".into()));
        }
        let plant = Self { a, b, c, x0 };
        if !plant.is_controllable() {
            log::warn!("(A, B) is not controllable; only the controllable part is identifiable from data");
        }
        if !plant.is_observable() {
            log::warn!("(A, C) is not observable");
        }
        Ok(plant)
    }

    pub fn states(&self) -> usize {
        self.a.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.c.nrows()
    }

    pub fn with_initial_state(&self, x0: DVector<f64>) -> Self {
        Self { x0, ..self.clone() }
    }

    pub fn controllability_matrix(&self) -> DMatrix<f64> {
        let (n, m) = (self.states(), self.inputs());
        let mut out = DMatrix::zeros(n, n * m);
        let mut blk = self.b.clone();
        for k in 0..n {
            out.view_mut((0, k * m), (n, m)).copy_from(&blk);
            blk = &self.a * blk;
        }
        out
    }

    /// `[C; CA; ...; CA^{depth-1}]`.
    pub fn observability_matrix(&self, depth: usize) -> DMatrix<f64> {
        let (n, p) = (self.states(), self.outputs());
        let mut out = DMatrix::zeros(p * depth, n);
        let mut blk = self.c.clone();
        for k in 0..depth {
            out.view_mut((k * p, 0), (p, n)).copy_from(&blk);
            blk = blk * &self.a;
        }
        out
    }

    pub fn is_controllable(&self) -> bool {
        linalg::numerical_rank(&self.controllability_matrix(), DEFAULT_PINV_TOL)
            .map(|r| r == self.states())
            .unwrap_or(false)
    }

    pub fn is_observable(&self) -> bool {
        linalg::numerical_rank(&self.observability_matrix(self.states()), DEFAULT_PINV_TOL)
            .map(|r| r == self.states())
            .unwrap_or(false)
    }

    /// Smallest depth whose observability matrix has full column rank, or
    /// `None` for an unobservable pair.
    pub fn observability_lag(&self) -> Option<usize> {
        (1..=self.states().max(1)).find(|l| {
            linalg::numerical_rank(&self.observability_matrix(*l), DEFAULT_PINV_TOL)
                .map(|r| r == self.states())
                .unwrap_or(false)
        })
    }
}

/// Zero-mean Gaussian measurement (`Σ_v`) and input (`Σ_w`) noise.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    sigma_v: DMatrix<f64>,
    sigma_w: DMatrix<f64>,
    sqrt_v: DMatrix<f64>,
    sqrt_w: DMatrix<f64>,
}

fn check_symmetric(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if !m.is_square() || (m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
        return Err(BiopError::InvalidArgument(format!("{what} must be symmetric")));
    }
    Ok(())
}

impl NoiseModel {
    /// Requires `Σ_v ≻ 0` and `Σ_w ⪰ 0`.
    pub fn new(sigma_v: DMatrix<f64>, sigma_w: DMatrix<f64>) -> Result<Self> {
        check_symmetric(&sigma_v, "Σ_v")?;
        if linalg::min_eigenvalue(&sigma_v) <= 0.0 {
            return Err(BiopError::InvalidArgument("Σ_v must be positive definite".into()));
        }
        Self::from_psd(sigma_v, sigma_w)
    }

    /// Accepts any PSD pair, including all-zero covariances.
    pub fn from_psd(sigma_v: DMatrix<f64>, sigma_w: DMatrix<f64>) -> Result<Self> {
        check_symmetric(&sigma_v, "Σ_v")?;
        check_symmetric(&sigma_w, "Σ_w")?;
        let sqrt_v = linalg::psd_sqrt(&sigma_v)?;
        let sqrt_w = linalg::psd_sqrt(&sigma_w)?;
        Ok(Self {
            sigma_v,
            sigma_w,
            sqrt_v,
            sqrt_w,
        })
    }

    pub fn identity(outputs: usize, inputs: usize) -> Self {
        Self::isotropic(outputs, inputs, 1.0)
    }

    /// `Σ_v = σ² I`, `Σ_w = σ² I` for a standard deviation `σ`.
    pub fn isotropic(outputs: usize, inputs: usize, std_dev: f64) -> Self {
        let var = std_dev * std_dev;
        Self {
            sigma_v: DMatrix::identity(outputs, outputs) * var,
            sigma_w: DMatrix::identity(inputs, inputs) * var,
            sqrt_v: DMatrix::identity(outputs, outputs) * std_dev.abs(),
            sqrt_w: DMatrix::identity(inputs, inputs) * std_dev.abs(),
        }
    }

    pub fn noiseless(outputs: usize, inputs: usize) -> Self {
        Self::isotropic(outputs, inputs, 0.0)
    }

    pub fn sigma_v(&self) -> &DMatrix<f64> {
        &self.sigma_v
    }

    pub fn sigma_w(&self) -> &DMatrix<f64> {
        &self.sigma_w
    }

    pub fn sqrt_v(&self) -> &DMatrix<f64> {
        &self.sqrt_v
    }

    pub fn sqrt_w(&self) -> &DMatrix<f64> {
        &self.sqrt_w
    }

    pub fn outputs(&self) -> usize {
        self.sigma_v.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.sigma_w.nrows()
    }

    pub fn is_identity(&self) -> bool {
        is_identity(&self.sigma_v) && is_identity(&self.sigma_w)
    }

    pub fn is_zero(&self) -> bool {
        self.sigma_v.iter().chain(self.sigma_w.iter()).all(|v| *v == 0.0)
    }

    fn draw(&self, rng: &mut rng::Rng, horizon: usize) -> (DVector<f64>, DVector<f64>) {
        let (p, m) = (self.outputs(), self.inputs());
        let mut v = DVector::zeros(p * horizon);
        let mut w = DVector::zeros(m * horizon);
        for t in 0..horizon {
            v.rows_mut(t * p, p).copy_from(&(&self.sqrt_v * rng::standard_normal(rng, p)));
            w.rows_mut(t * m, m).copy_from(&(&self.sqrt_w * rng::standard_normal(rng, m)));
        }
        (v, w)
    }
}

fn is_identity(m: &DMatrix<f64>) -> bool {
    m.is_square() && (m - DMatrix::identity(m.nrows(), m.ncols())).amax() == 0.0
}

/// Per-step weights `L_t ⪰ 0`, `R_t ≻ 0` with cached stacked square roots.
#[derive(Debug, Clone)]
pub struct CostWeights {
    l: Vec<DMatrix<f64>>,
    r: Vec<DMatrix<f64>>,
    l_sqrt: DMatrix<f64>,
    r_sqrt: DMatrix<f64>,
}

impl CostWeights {
    pub fn new(l: Vec<DMatrix<f64>>, r: Vec<DMatrix<f64>>) -> Result<Self> {
        if l.is_empty() || l.len() != r.len() {
            return Err(BiopError::DimensionMismatch(format!(
                "{} output weights vs {} input weights",
                l.len(),
                r.len()
            )));
        }
        let (p, m) = (l[0].nrows(), r[0].nrows());
        for (t, (lt, rt)) in l.iter().zip(&r).enumerate() {
            if lt.shape() != (p, p) || rt.shape() != (m, m) {
                return Err(BiopError::DimensionMismatch(format!("weights at step {t}")));
            }
            check_symmetric(lt, "L_t")?;
            check_symmetric(rt, "R_t")?;
            if linalg::min_eigenvalue(rt) <= 0.0 {
                return Err(BiopError::InvalidArgument(format!("R_{t} must be positive definite")));
            }
        }
        let l_sqrt = linalg::block_diag(&l.iter().map(linalg::psd_sqrt).collect::<Result<Vec<_>>>()?);
        let r_sqrt = linalg::block_diag(&r.iter().map(linalg::psd_sqrt).collect::<Result<Vec<_>>>()?);
        Ok(Self { l, r, l_sqrt, r_sqrt })
    }

    pub fn identity(outputs: usize, inputs: usize, horizon: usize) -> Self {
        Self {
            l: vec![DMatrix::identity(outputs, outputs); horizon],
            r: vec![DMatrix::identity(inputs, inputs); horizon],
            l_sqrt: DMatrix::identity(outputs * horizon, outputs * horizon),
            r_sqrt: DMatrix::identity(inputs * horizon, inputs * horizon),
        }
    }

    pub fn horizon(&self) -> usize {
        self.l.len()
    }

    pub fn outputs(&self) -> usize {
        self.l[0].nrows()
    }

    pub fn inputs(&self) -> usize {
        self.r[0].nrows()
    }

    pub fn output_weight(&self, t: usize) -> &DMatrix<f64> {
        &self.l[t]
    }

    pub fn input_weight(&self, t: usize) -> &DMatrix<f64> {
        &self.r[t]
    }

    /// `blkdiag(L_0, ..., L_{N-1})^{1/2}`.
    pub fn l_sqrt(&self) -> &DMatrix<f64> {
        &self.l_sqrt
    }

    /// `blkdiag(R_0, ..., R_{N-1})^{1/2}`.
    pub fn r_sqrt(&self) -> &DMatrix<f64> {
        &self.r_sqrt
    }

    pub fn is_identity(&self) -> bool {
        self.l.iter().chain(self.r.iter()).all(is_identity)
    }
}

/// Stacked input/output samples over `T` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub u: DVector<f64>,
    pub y: DVector<f64>,
    pub inputs: usize,
    pub outputs: usize,
    pub start_index: i64,
}

impl Trajectory {
    pub fn new(u: DVector<f64>, y: DVector<f64>, inputs: usize, outputs: usize, start_index: i64) -> Result<Self> {
        if inputs == 0 || outputs == 0 || u.len() % inputs != 0 || y.len() % outputs != 0 {
            return Err(BiopError::DimensionMismatch(format!(
                "u has {} entries for m = {inputs}, y has {} for p = {outputs}",
                u.len(),
                y.len()
            )));
        }
        if u.len() / inputs != y.len() / outputs {
            return Err(BiopError::DimensionMismatch(format!(
                "{} input samples vs {} output samples",
                u.len() / inputs,
                y.len() / outputs
            )));
        }
        Ok(Self {
            u,
            y,
            inputs,
            outputs,
            start_index,
        })
    }

    pub fn len(&self) -> usize {
        self.u.len() / self.inputs
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn input(&self, t: usize) -> DVector<f64> {
        self.u.rows(t * self.inputs, self.inputs).into_owned()
    }

    pub fn output(&self, t: usize) -> DVector<f64> {
        self.y.rows(t * self.outputs, self.outputs).into_owned()
    }

    /// Samples `[from, from + len)` keeping the absolute time index.
    pub fn window(&self, from: usize, len: usize) -> Result<Trajectory> {
        if from + len > self.len() {
            return Err(BiopError::InvalidArgument(format!(
                "window [{from}, {}) exceeds trajectory length {}",
                from + len,
                self.len()
            )));
        }
        Trajectory::new(
            self.u.rows(from * self.inputs, len * self.inputs).into_owned(),
            self.y.rows(from * self.outputs, len * self.outputs).into_owned(),
            self.inputs,
            self.outputs,
            self.start_index + from as i64,
        )
    }

    /// One row per sample: `t,u0,..,y0,..`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let mut header = vec!["t".to_string()];
        header.extend((0..self.inputs).map(|k| format!("u{k}")));
        header.extend((0..self.outputs).map(|k| format!("y{k}")));
        writeln!(out, "{}", header.join(","))?;
        for t in 0..self.len() {
            let mut row = vec![(self.start_index + t as i64).to_string()];
            row.extend(self.input(t).iter().map(|v| format!("{v:.17e}")));
            row.extend(self.output(t).iter().map(|v| format!("{v:.17e}")));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Trajectory> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| BiopError::Csv("empty trajectory file".into()))??;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.first() != Some(&"t") {
            return Err(BiopError::Csv("first column must be `t`".into()));
        }
        let inputs = cols.iter().filter(|c| c.starts_with('u')).count();
        let outputs = cols.iter().filter(|c| c.starts_with('y')).count();
        if inputs + outputs + 1 != cols.len() {
            return Err(BiopError::Csv(format!("unexpected columns in header `{header}`")));
        }
        let (mut u, mut y, mut start) = (Vec::new(), Vec::new(), None);
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != cols.len() {
                return Err(BiopError::Csv(format!("row {} has {} fields", lineno + 2, fields.len())));
            }
            let parse = |s: &str| -> Result<f64> {
                s.parse::<f64>()
                    .map_err(|e| BiopError::Csv(format!("row {}: `{s}`: {e}", lineno + 2)))
            };
            let t = fields[0]
                .parse::<i64>()
                .map_err(|e| BiopError::Csv(format!("row {}: time `{}`: {e}", lineno + 2, fields[0])))?;
            start.get_or_insert(t);
            for f in &fields[1..=inputs] {
                u.push(parse(f)?);
            }
            for f in &fields[inputs + 1..] {
                y.push(parse(f)?);
            }
        }
        Trajectory::new(
            DVector::from_vec(u),
            DVector::from_vec(y),
            inputs,
            outputs,
            start.unwrap_or(0),
        )
    }
}

/// How the plant input is generated during a simulation.
#[derive(Debug, Clone, Copy)]
pub enum Excitation<'a> {
    /// `u(t) = u_cmd(t) + w(t)`.
    OpenLoop(&'a DVector<f64>),
    /// `u(t) = Σ_k K_{t,k} y(k) + w(t)`.
    Feedback(&'a ControllerMatrix),
}

/// The noise sequences drawn by one simulation.
#[derive(Debug, Clone)]
pub struct NoiseDraw {
    pub v: DVector<f64>,
    pub w: DVector<f64>,
}

pub fn simulate(
    plant: &StateSpacePlant,
    noise: &NoiseModel,
    excitation: Excitation<'_>,
    horizon: usize,
    seed: u64,
) -> Result<Trajectory> {
    simulate_recorded(plant, noise, excitation, horizon, seed).map(|(traj, _)| traj)
}

/// Like [`simulate`] but also returns the noise realization.
pub fn simulate_recorded(
    plant: &StateSpacePlant,
    noise: &NoiseModel,
    excitation: Excitation<'_>,
    horizon: usize,
    seed: u64,
) -> Result<(Trajectory, NoiseDraw)> {
    let (p, m) = (plant.outputs(), plant.inputs());
    if noise.outputs() != p || noise.inputs() != m {
        return Err(BiopError::DimensionMismatch(format!(
            "noise model is for p = {}, m = {}; plant has p = {p}, m = {m}",
            noise.outputs(),
            noise.inputs()
        )));
    }
    match excitation {
        Excitation::OpenLoop(u) if u.len() != m * horizon => {
            return Err(BiopError::DimensionMismatch(format!(
                "open-loop input has {} entries, expected {}",
                u.len(),
                m * horizon
            )))
        }
        Excitation::Feedback(k) if k.matrix().shape() != (m * horizon, p * horizon) => {
            return Err(BiopError::DimensionMismatch(format!(
                "controller is {:?}, expected {:?}",
                k.matrix().shape(),
                (m * horizon, p * horizon)
            )))
        }
        _ => {}
    }
    let mut rng = rng::rng_from(seed);
    let (v, w) = noise.draw(&mut rng, horizon);
    let mut u = DVector::zeros(m * horizon);
    let mut y = DVector::zeros(p * horizon);
    let mut x = plant.x0.clone();
    for t in 0..horizon {
        let yt = &plant.c * &x + v.rows(t * p, p);
        y.rows_mut(t * p, p).copy_from(&yt);
        let mut ut = w.rows(t * m, m).into_owned();
        match excitation {
            Excitation::OpenLoop(cmd) => ut += cmd.rows(t * m, m),
            Excitation::Feedback(k) => {
                // causal: only y(0..=t) is available at time t
                ut += k.matrix().view((t * m, 0), (m, (t + 1) * p)) * y.rows(0, (t + 1) * p);
            }
        }
        u.rows_mut(t * m, m).copy_from(&ut);
        x = &plant.a * x + &plant.b * ut;
    }
    Ok((Trajectory::new(u, y, m, p, 0)?, NoiseDraw { v, w }))
}

/// Markov blocks `[0, CB, CAB, ..., CA^{N-2}B]`.
pub fn impulse_response(plant: &StateSpacePlant, horizon: usize) -> BlockColumn {
    let (p, m) = (plant.outputs(), plant.inputs());
    let mut blocks = Vec::with_capacity(horizon.max(1));
    blocks.push(DMatrix::zeros(p, m));
    let mut ak_b = plant.b.clone();
    for _ in 1..horizon {
        blocks.push(&plant.c * &ak_b);
        ak_b = &plant.a * ak_b;
    }
    BlockColumn::new(blocks).expect("blocks share one shape")
}

/// Strictly causal impulse-response Toeplitz matrix `G = C P_B`.
pub fn impulse_toeplitz(plant: &StateSpacePlant, horizon: usize) -> BlockToeplitz {
    BlockToeplitz::new(impulse_response(plant, horizon))
}

/// Zero-input output `[C x0; C A x0; ...; C A^{N-1} x0]`.
pub fn free_response(plant: &StateSpacePlant, horizon: usize) -> DVector<f64> {
    let p = plant.outputs();
    let mut out = DVector::zeros(p * horizon);
    let mut x = plant.x0.clone();
    for t in 0..horizon {
        out.rows_mut(t * p, p).copy_from(&(&plant.c * &x));
        x = &plant.a * x;
    }
    out
}

/// The 2×3 weighted block matrix whose squared Frobenius norm is the cost.
fn weighted_cost_blocks(
    maps: &ClosedLoopMaps,
    y_free: &DVector<f64>,
    weights: &CostWeights,
    noise: &NoiseModel,
) -> f64 {
    let n = weights.horizon();
    let sv = linalg::repeat_diag(noise.sqrt_v(), n);
    let sw = linalg::repeat_diag(noise.sqrt_w(), n);
    let (l, r) = (weights.l_sqrt(), weights.r_sqrt());
    (l * &maps.yy * &sv).norm_squared()
        + (l * &maps.yu * &sw).norm_squared()
        + (l * &maps.yy * y_free).norm_squared()
        + (r * &maps.uy * &sv).norm_squared()
        + (r * &maps.uu * &sw).norm_squared()
        + (r * &maps.uy * y_free).norm_squared()
}

/// Expected cost `J² = E[Σ yᵀL y + uᵀR u]` of the closed loop described by `maps`.
pub fn cost_closed_form(
    g: &BlockToeplitz,
    y_free: &DVector<f64>,
    maps: &ClosedLoopMaps,
    weights: &CostWeights,
    noise: &NoiseModel,
) -> Result<f64> {
    let (p, m, n) = (g.block_rows(), g.block_cols(), g.n_blocks());
    if weights.horizon() != n
        || weights.outputs() != p
        || weights.inputs() != m
        || noise.outputs() != p
        || noise.inputs() != m
        || y_free.len() != p * n
    {
        return Err(BiopError::DimensionMismatch(format!(
            "cost setup inconsistent with G ({p}x{m} blocks, N = {n})"
        )));
    }
    maps.check_dims(p, m, n)?;
    let residual = crate::iop::achievability_residual(g, maps)?;
    if residual > 1e-6 {
        log::warn!("closed-loop maps are not achievable for G (residual {residual:.3e})");
    }
    Ok(weighted_cost_blocks(maps, y_free, weights, noise))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub trials: usize,
}

/// Sample mean of the realized cost over independent closed-loop runs.
pub fn cost_monte_carlo(
    plant: &StateSpacePlant,
    k: &ControllerMatrix,
    weights: &CostWeights,
    noise: &NoiseModel,
    n_trials: usize,
    seed: u64,
) -> Result<MonteCarloEstimate> {
    if n_trials == 0 {
        return Err(BiopError::InvalidArgument("n_trials must be at least 1".into()));
    }
    let n = weights.horizon();
    let (p, m) = (plant.outputs(), plant.inputs());
    let costs: Vec<f64> = (0..n_trials as u64)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let traj = simulate(plant, noise, Excitation::Feedback(k), n, rng::derive_seed(seed, &[i]))?;
            Ok((0..n)
                .map(|t| {
                    let (yt, ut) = (traj.y.rows(t * p, p), traj.u.rows(t * m, m));
                    (yt.transpose() * weights.output_weight(t) * yt)[(0, 0)]
                        + (ut.transpose() * weights.input_weight(t) * ut)[(0, 0)]
                })
                .sum())
        })
        .collect::<Result<_>>()?;
    let mean = costs.iter().sum::<f64>() / n_trials as f64;
    let std_err = if n_trials > 1 {
        let var = costs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n_trials - 1) as f64;
        (var / n_trials as f64).sqrt()
    } else {
        0.0
    };
    Ok(MonteCarloEstimate {
        mean,
        std_err,
        trials: n_trials,
    })
}

/// The benchmark plant `A = ρ[0.8 0.4; 0.8 -0.6]`, `B = [1 0.2; 2 0.3]`,
/// `C = [1 1; 0.7 0.2]`, `x0 = [1, -1]`.
pub fn benchmark_plant(rho: f64) -> StateSpacePlant {
    StateSpacePlant::new(
        DMatrix::from_row_slice(2, 2, &[0.8, 0.4, 0.8, -0.6]) * rho,
        DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 2.0, 0.3]),
        DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.7, 0.2]),
        DVector::from_vec(vec![1.0, -1.0]),
    )
    .expect("benchmark plant dimensions are consistent")
}
