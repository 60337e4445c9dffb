//! Input-output parametrization: closed-loop maps, their achievability
//! constraints, elimination down to `Φ_uy`, and the nominal LQG program.

pub mod quadratic;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{BiopError, Result};
use crate::linalg::{BlockToeplitz, CausalMask};
use crate::plant::{CostWeights, NoiseModel};
pub use quadratic::{QuadraticSolveOptions, ReducedQuadratic};

/// Off-pattern magnitude (relative to the matrix scale) tolerated before a
/// matrix is declared non-causal.
pub const CAUSALITY_TOL: f64 = 1e-9;

/// The four closed-loop responses from `(v + y_free, w)` to `(y, u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopMaps {
    pub yy: DMatrix<f64>,
    pub yu: DMatrix<f64>,
    pub uy: DMatrix<f64>,
    pub uu: DMatrix<f64>,
    /// Block sizes `p` and `m`.
    pub outputs: usize,
    pub inputs: usize,
}

impl ClosedLoopMaps {
    pub fn horizon(&self) -> usize {
        self.yy.nrows() / self.outputs.max(1)
    }

    /// Responses under `K = 0`: `(I, G, 0, I)`.
    pub fn open_loop(g: &BlockToeplitz) -> Self {
        let (p, m, n) = (g.block_rows(), g.block_cols(), g.n_blocks());
        Self {
            yy: DMatrix::identity(p * n, p * n),
            yu: g.matrix().clone(),
            uy: DMatrix::zeros(m * n, p * n),
            uu: DMatrix::identity(m * n, m * n),
            outputs: p,
            inputs: m,
        }
    }

    pub fn check_dims(&self, p: usize, m: usize, n: usize) -> Result<()> {
        let ok = self.outputs == p
            && self.inputs == m
            && self.yy.shape() == (p * n, p * n)
            && self.yu.shape() == (p * n, m * n)
            && self.uy.shape() == (m * n, p * n)
            && self.uu.shape() == (m * n, m * n);
        if ok {
            Ok(())
        } else {
            Err(BiopError::DimensionMismatch(format!(
                "maps {:?} {:?} {:?} {:?} for p = {p}, m = {m}, N = {n}",
                self.yy.shape(),
                self.yu.shape(),
                self.uy.shape(),
                self.uu.shape()
            )))
        }
    }

    /// Largest off-pattern Frobenius norm among the four maps.
    pub fn causality_violation(&self, p: usize, m: usize, n: usize) -> f64 {
        [
            CausalMask::new(n, p, p, false).violation(&self.yy),
            CausalMask::new(n, p, m, false).violation(&self.yu),
            CausalMask::new(n, m, p, false).violation(&self.uy),
            CausalMask::new(n, m, m, false).violation(&self.uu),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// Block lower-triangular feedback `u = K y`, `mN × pN`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControllerMatrix {
    #[serde(serialize_with = "serialize_matrix")]
    k: DMatrix<f64>,
    inputs: usize,
    outputs: usize,
}

fn serialize_matrix<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
    serde::Serialize::serialize(&rows, s)
}

impl ControllerMatrix {
    /// Entries outside the causal pattern must be negligible; they are zeroed.
    pub fn new(k: DMatrix<f64>, inputs: usize, outputs: usize) -> Result<Self> {
        if inputs == 0 || outputs == 0 || k.nrows() % inputs != 0 || k.ncols() % outputs != 0 {
            return Err(BiopError::DimensionMismatch(format!(
                "controller {:?} for m = {inputs}, p = {outputs}",
                k.shape()
            )));
        }
        let n = k.nrows() / inputs;
        if k.ncols() / outputs != n {
            return Err(BiopError::DimensionMismatch(format!(
                "controller {:?} is not an {n}x{n} block grid",
                k.shape()
            )));
        }
        if !k.iter().all(|v| v.is_finite()) {
            return Err(BiopError::NonFinite("controller"));
        }
        let mask = CausalMask::new(n, inputs, outputs, false);
        let violation = mask.violation(&k);
        if violation > CAUSALITY_TOL * k.amax().max(1.0) {
            return Err(BiopError::NonCausal {
                what: "controller",
                magnitude: violation,
            });
        }
        Ok(Self {
            k: mask.apply(&k),
            inputs,
            outputs,
        })
    }

    pub fn zero(inputs: usize, outputs: usize, horizon: usize) -> Self {
        Self {
            k: DMatrix::zeros(inputs * horizon, outputs * horizon),
            inputs,
            outputs,
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn horizon(&self) -> usize {
        self.k.nrows() / self.inputs
    }
}

/// Where the plant description used for synthesis came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum ModelSource {
    /// The true `(G, y_free)`.
    Exact,
    /// A behavioral estimate built by the named estimator.
    Estimated(String),
}

#[derive(Debug, Clone)]
pub struct SynthesisResult {
    pub maps: ClosedLoopMaps,
    pub controller: ControllerMatrix,
    /// `J²` of the program that was solved (on the model it was solved for).
    pub cost_sq: f64,
    pub model_used: ModelSource,
}

impl SynthesisResult {
    pub fn cost(&self) -> f64 {
        self.cost_sq.sqrt()
    }
}

fn check_controller_fits(g: &BlockToeplitz, k: &ControllerMatrix) -> Result<()> {
    if k.inputs() != g.block_cols() || k.outputs() != g.block_rows() || k.horizon() != g.n_blocks() {
        return Err(BiopError::DimensionMismatch(format!(
            "controller {:?} does not match G {:?}",
            k.matrix().shape(),
            g.matrix().shape()
        )));
    }
    Ok(())
}

/// `Φ_yy = (I - GK)⁻¹`, `Φ_yu = Φ_yy G`, `Φ_uy = K Φ_yy`, `Φ_uu = (I - KG)⁻¹`.
pub fn maps_from_controller(g: &BlockToeplitz, k: &ControllerMatrix) -> Result<ClosedLoopMaps> {
    check_controller_fits(g, k)?;
    let gm = g.matrix();
    let (py, mu) = (gm.nrows(), gm.ncols());
    let i_gk = DMatrix::identity(py, py) - gm * k.matrix();
    let yy = i_gk
        .lu()
        .solve(&DMatrix::identity(py, py))
        .ok_or_else(|| BiopError::Singular("I - GK".into()))?;
    let uy = k.matrix() * &yy;
    let yu = &yy * gm;
    // (I - KG)⁻¹ = I + K (I - GK)⁻¹ G
    let uu = DMatrix::identity(mu, mu) + &uy * gm;
    Ok(ClosedLoopMaps {
        yy,
        yu,
        uy,
        uu,
        outputs: g.block_rows(),
        inputs: g.block_cols(),
    })
}

/// `K = Φ_uy Φ_yy⁻¹`.
pub fn controller_from_maps(maps: &ClosedLoopMaps) -> Result<ControllerMatrix> {
    let (p, m) = (maps.outputs, maps.inputs);
    if p == 0 || m == 0 || maps.yy.nrows() % p != 0 {
        return Err(BiopError::DimensionMismatch(format!("maps with p = {p}, m = {m}")));
    }
    let n = maps.horizon();
    maps.check_dims(p, m, n)?;
    for (mat, mask, what) in [
        (&maps.yy, CausalMask::new(n, p, p, false), "Φ_yy"),
        (&maps.uy, CausalMask::new(n, m, p, false), "Φ_uy"),
    ] {
        let v = mask.violation(mat);
        if v > CAUSALITY_TOL * mat.amax().max(1.0) {
            return Err(BiopError::NonCausal { what, magnitude: v });
        }
    }
    let kt = maps
        .yy
        .transpose()
        .lu()
        .solve(&maps.uy.transpose())
        .ok_or_else(|| BiopError::Singular("Φ_yy".into()))?;
    let k = kt.transpose();
    if !k.iter().all(|v| v.is_finite()) {
        return Err(BiopError::Singular("Φ_yy (non-finite controller)".into()));
    }
    ControllerMatrix::new(k, m, p)
}

/// The unique achievable quadruple with the given `Φ_uy`.
pub fn eliminate(g: &BlockToeplitz, phi_uy: &DMatrix<f64>) -> Result<ClosedLoopMaps> {
    let (p, m, n) = (g.block_rows(), g.block_cols(), g.n_blocks());
    let mask = CausalMask::new(n, m, p, false);
    mask.check_shape(phi_uy, "Φ_uy")?;
    let v = mask.violation(phi_uy);
    if v > CAUSALITY_TOL * phi_uy.amax().max(1.0) {
        return Err(BiopError::NonCausal {
            what: "Φ_uy",
            magnitude: v,
        });
    }
    let gm = g.matrix();
    let yy = DMatrix::identity(p * n, p * n) + gm * phi_uy;
    let yu = &yy * gm;
    let uu = DMatrix::identity(m * n, m * n) + phi_uy * gm;
    Ok(ClosedLoopMaps {
        yy,
        yu,
        uy: phi_uy.clone(),
        uu,
        outputs: p,
        inputs: m,
    })
}

/// Largest Frobenius residual of the two affine achievability equations and
/// of the causal patterns; zero iff the maps are achievable for `G`.
pub fn achievability_residual(g: &BlockToeplitz, maps: &ClosedLoopMaps) -> Result<f64> {
    let (p, m, n) = (g.block_rows(), g.block_cols(), g.n_blocks());
    maps.check_dims(p, m, n)?;
    let gm = g.matrix();
    let ip = DMatrix::identity(p * n, p * n);
    let im = DMatrix::identity(m * n, m * n);
    let residuals = [
        // [I  -G] Φ = [I  0]
        (&maps.yy - gm * &maps.uy - &ip).norm(),
        (&maps.yu - gm * &maps.uu).norm(),
        // Φ [-G; I] = [0; I]
        (&maps.yu - &maps.yy * gm).norm(),
        (&maps.uu - &maps.uy * gm - &im).norm(),
        maps.causality_violation(p, m, n),
    ];
    Ok(residuals.into_iter().fold(0.0, f64::max))
}

/// Globally optimal LQG maps for `(G, y_free)`.
pub fn solve_nominal(
    g: &BlockToeplitz,
    y_free: &DVector<f64>,
    weights: &CostWeights,
    noise: &NoiseModel,
    opts: &QuadraticSolveOptions,
) -> Result<SynthesisResult> {
    if !g.is_strictly_causal() {
        log::warn!("G has a nonzero diagonal block; the feedback loop is not strictly proper");
    }
    let quad = ReducedQuadratic::nominal(g, y_free, weights, noise)?;
    let x = quad.minimize(opts)?;
    let cost_sq = quad.objective(&x);
    let maps = eliminate(g, &x)?;
    let controller = controller_from_maps(&maps)?;
    Ok(SynthesisResult {
        maps,
        controller,
        cost_sq,
        model_used: ModelSource::Exact,
    })
}
