//! Experiment driver: TOML configuration, the noiseless equivalence demo, the
//! `(ρ, σ)` robustness sweep, `ε` calibration, and CSV/metadata emission.
//!
//! Every random draw is keyed on grid coordinates (not indices) through
//! [`derive_seed`], so adding grid points leaves existing cells intact.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::behavior::{self, calibrate_epsilon, generate_data, split_hankels, DataSpec, EpsilonCalibration};
use crate::error::{BiopError, Result};
use crate::iop::{self, maps_from_controller, QuadraticSolveOptions, SynthesisResult};
use crate::plant::{self, CostWeights, NoiseModel, StateSpacePlant};
use crate::registry;
use crate::rng::{derive_seed, float_key};
use crate::robust::{self, RobustConfig};

const DEMO_STREAM: u64 = 1;
const CALIBRATION_STREAM: u64 = 2;
const SWEEP_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "defaults::seed")]
    pub seed: u64,
    pub plant: PlantConfig,
    pub horizons: HorizonConfig,
    #[serde(default)]
    pub cost: CostConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// `A = ρ · a_template` for each `ρ` in the list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    pub a_template: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub x0: Vec<f64>,
    pub rho: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonConfig {
    /// Control horizon `N`.
    pub horizon: usize,
    /// Historical length `T`.
    pub t_hist: usize,
    pub t_h: usize,
    pub t_ini: usize,
}

/// Scalar multiples of the identity for `L_t`, `R_t`, `Σ_v`, `Σ_w`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    #[serde(default = "defaults::one")]
    pub output_weight: f64,
    #[serde(default = "defaults::one")]
    pub input_weight: f64,
    #[serde(default = "defaults::one")]
    pub output_noise_var: f64,
    #[serde(default = "defaults::one")]
    pub input_noise_var: f64,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self {
            output_weight: 1.0,
            input_weight: 1.0,
            output_noise_var: 1.0,
            input_noise_var: 1.0,
        }
    }
}

impl CostConfig {
    pub fn is_identity(&self) -> bool {
        [self.output_weight, self.input_weight, self.output_noise_var, self.input_noise_var]
            .iter()
            .all(|v| *v == 1.0)
    }

    pub fn weights(&self, p: usize, m: usize, n: usize) -> Result<CostWeights> {
        CostWeights::new(
            vec![DMatrix::identity(p, p) * self.output_weight; n],
            vec![DMatrix::identity(m, m) * self.input_weight; n],
        )
    }

    pub fn noise(&self, p: usize, m: usize) -> Result<NoiseModel> {
        NoiseModel::from_psd(
            DMatrix::identity(p, p) * self.output_noise_var,
            DMatrix::identity(m, m) * self.input_noise_var,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Standard deviations of the data noise.
    #[serde(default = "defaults::sigma")]
    pub sigma: Vec<f64>,
    #[serde(default = "defaults::calibration_realizations")]
    pub n_calibration_realizations: usize,
    #[serde(default = "defaults::percentile")]
    pub percentile: f64,
    #[serde(default = "defaults::sweep_seeds")]
    pub n_sweep_seeds: usize,
    /// `α = alpha_multiple · ‖Φ_uy‖₂` of the nominal solve on the estimate.
    #[serde(default = "defaults::alpha_multiple")]
    pub alpha_multiple: f64,
    /// Fixed `α`; overrides `alpha_multiple` when set.
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default = "defaults::estimator")]
    pub estimator: String,
    #[serde(default = "defaults::synthesizer")]
    pub synthesizer: String,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            sigma: defaults::sigma(),
            n_calibration_realizations: defaults::calibration_realizations(),
            percentile: defaults::percentile(),
            n_sweep_seeds: defaults::sweep_seeds(),
            alpha_multiple: defaults::alpha_multiple(),
            alpha: None,
            estimator: defaults::estimator(),
            synthesizer: defaults::synthesizer(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "defaults::inner_solver")]
    pub inner_solver: String,
    #[serde(default = "defaults::golden_tol")]
    pub golden_tol: f64,
    #[serde(default = "defaults::inner_tol")]
    pub inner_tol: f64,
    #[serde(default = "defaults::max_iter")]
    pub max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            inner_solver: defaults::inner_solver(),
            golden_tol: defaults::golden_tol(),
            inner_tol: defaults::inner_tol(),
            max_iter: defaults::max_iter(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// Wall-clock times make the CSV nondeterministic; off by default.
    #[serde(default)]
    pub record_timing: bool,
    #[serde(default)]
    pub workers: Option<usize>,
}

mod defaults {
    pub fn seed() -> u64 {
        2021
    }
    pub fn one() -> f64 {
        1.0
    }
    pub fn sigma() -> Vec<f64> {
        vec![0.0, 0.00025, 0.0005, 0.001, 0.0015, 0.002]
    }
    pub fn calibration_realizations() -> usize {
        100
    }
    pub fn percentile() -> f64 {
        90.0
    }
    pub fn sweep_seeds() -> usize {
        10
    }
    pub fn alpha_multiple() -> f64 {
        5.0
    }
    pub fn estimator() -> String {
        crate::registry::DEFAULT_ESTIMATOR.into()
    }
    pub fn synthesizer() -> String {
        crate::registry::DEFAULT_SYNTHESIZER.into()
    }
    pub fn inner_solver() -> String {
        crate::registry::DEFAULT_INNER_SOLVER.into()
    }
    pub fn golden_tol() -> f64 {
        1e-3
    }
    pub fn inner_tol() -> f64 {
        1e-9
    }
    pub fn max_iter() -> usize {
        20_000
    }
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(BiopError::Config(format!("{what} must be a non-empty rectangular array of rows")));
    }
    Ok(DMatrix::from_row_iterator(rows.len(), ncols, rows.iter().flatten().copied()))
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| BiopError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| BiopError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn plant(&self, rho: f64) -> Result<StateSpacePlant> {
        let a = matrix(&self.plant.a_template, "plant.a_template")? * rho;
        StateSpacePlant::new(
            a,
            matrix(&self.plant.b, "plant.b")?,
            matrix(&self.plant.c, "plant.c")?,
            DVector::from_column_slice(&self.plant.x0),
        )
        .map_err(|e| BiopError::Config(format!("plant: {e}")))
    }

    pub fn data_spec(&self, noise_std: f64) -> DataSpec {
        DataSpec {
            t_hist: self.horizons.t_hist,
            t_h: self.horizons.t_h,
            t_ini: self.horizons.t_ini,
            horizon: self.horizons.horizon,
            noise_std,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.plant.rho.is_empty() {
            return Err(BiopError::Config("plant.rho must list at least one value".into()));
        }
        if self.plant.rho.iter().any(|r| !r.is_finite()) {
            return Err(BiopError::Config("plant.rho must be finite".into()));
        }
        if self.sweep.sigma.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(BiopError::Config("sweep.sigma values must be finite and >= 0".into()));
        }
        let c = &self.cost;
        if [c.output_weight, c.input_weight, c.output_noise_var].iter().any(|v| !(*v > 0.0))
            || !(c.input_noise_var >= 0.0)
        {
            return Err(BiopError::Config("cost weights and output noise must be positive".into()));
        }
        if self.sweep.synthesizer == "robust" && !c.is_identity() {
            return Err(BiopError::Config(
                "the robust synthesizer assumes identity weights and covariances; pre-whiten the plant instead".into(),
            ));
        }
        if self.sweep.n_calibration_realizations == 0 || self.sweep.n_sweep_seeds == 0 {
            return Err(BiopError::Config("realization and seed counts must be positive".into()));
        }
        if !(self.sweep.percentile > 0.0 && self.sweep.percentile <= 100.0) {
            return Err(BiopError::Config("sweep.percentile must lie in (0, 100]".into()));
        }
        if !(self.sweep.alpha_multiple > 0.0) || self.sweep.alpha.is_some_and(|a| !(a > 0.0)) {
            return Err(BiopError::Config("α settings must be positive".into()));
        }
        if self.output.workers == Some(0) {
            return Err(BiopError::Config("output.workers must be positive".into()));
        }
        registry::estimator(&self.sweep.estimator)?;
        registry::synthesizer(&self.sweep.synthesizer)?;
        registry::inner_solver(&self.solver.inner_solver)?;
        for rho in &self.plant.rho {
            let plant = self.plant(*rho)?;
            self.data_spec(0.0)
                .validate(&plant)
                .map_err(|e| BiopError::Config(e.to_string()))?;
        }
        let plant = self.plant(self.plant.rho[0])?;
        let need = DataSpec::min_length(plant.inputs(), self.data_spec(0.0).pe_order(plant.states()));
        if self.horizons.t_hist < need {
            return Err(BiopError::Config(format!(
                "T = {} is below (m+1)(n+T_ini+N)-1 = {need}",
                self.horizons.t_hist
            )));
        }
        Ok(())
    }

    fn robust_config(&self, epsilon: f64, alpha: f64) -> RobustConfig {
        RobustConfig {
            epsilon,
            alpha,
            golden_tol: self.solver.golden_tol,
            inner_tol: self.solver.inner_tol,
            max_iter: self.solver.max_iter,
            inner_solver: self.solver.inner_solver.clone(),
        }
    }

    /// Runs `f` on a pool of `output.workers` threads, or the global pool.
    pub fn with_workers<T: Send>(&self, f: impl FnOnce() -> T + Send) -> Result<T> {
        match self.output.workers {
            Some(k) => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(k)
                    .build()
                    .map_err(|e| BiopError::Config(format!("thread pool: {e}")))?;
                Ok(pool.install(f))
            }
            None => Ok(f()),
        }
    }
}

fn nominal_on(plant: &StateSpacePlant, cfg: &ExperimentConfig) -> Result<SynthesisResult> {
    let (p, m, n) = (plant.outputs(), plant.inputs(), cfg.horizons.horizon);
    iop::solve_nominal(
        &plant::impulse_toeplitz(plant, n),
        &plant::free_response(plant, n),
        &cfg.cost.weights(p, m, n)?,
        &cfg.cost.noise(p, m)?,
        &QuadraticSolveOptions::default(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DemoReport {
    pub rho: f64,
    pub j_model: f64,
    pub j_data: f64,
    pub relative_difference: f64,
    pub controller_difference: f64,
    /// Cost of the data-driven controller on the true plant.
    pub j_data_on_plant: f64,
    pub pe_rank: usize,
    pub pe_required: usize,
    pub estimator: String,
}

/// Compares the model-based optimum with the one computed from noiseless
/// data, for every `ρ` in the config.
pub fn run_noiseless_demo(cfg: &ExperimentConfig) -> Result<Vec<DemoReport>> {
    cfg.validate()?;
    cfg.plant
        .rho
        .iter()
        .map(|&rho| {
            let plant = cfg.plant(rho)?;
            let (p, m, n) = (plant.outputs(), plant.inputs(), cfg.horizons.horizon);
            let spec = cfg.data_spec(0.0);
            let data = generate_data(&plant, &spec, demo_seed(cfg, rho))?;
            let pe = behavior::is_persistently_exciting(&data.historical.u, m, spec.pe_order(plant.states()));
            if !pe.exciting {
                return Err(BiopError::Hypothesis(format!(
                    "historical input is not persistently exciting: rank {} < {}",
                    pe.rank, pe.required
                )));
            }
            let split = split_hankels(&data, spec.t_ini, n)?;
            let model = registry::estimator("exact")?.estimate(&split, &data.recent)?;
            let weights = cfg.cost.weights(p, m, n)?;
            let noise = cfg.cost.noise(p, m)?;
            let reference = nominal_on(&plant, cfg)?;
            let from_data = iop::solve_nominal(
                model.g_hat(),
                model.y_free_hat(),
                &weights,
                &noise,
                &QuadraticSolveOptions::default(),
            )?;
            let g = plant::impulse_toeplitz(&plant, n);
            let on_plant = plant::cost_closed_form(
                &g,
                &plant::free_response(&plant, n),
                &maps_from_controller(&g, &from_data.controller)?,
                &weights,
                &noise,
            )?;
            let (j_model, j_data) = (reference.cost(), from_data.cost());
            Ok(DemoReport {
                rho,
                j_model,
                j_data,
                relative_difference: (j_data - j_model).abs() / j_model,
                controller_difference: (reference.controller.matrix() - from_data.controller.matrix()).norm(),
                j_data_on_plant: on_plant.sqrt(),
                pe_rank: pe.rank,
                pe_required: pe.required,
                estimator: model.provenance().as_str().to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationRecord {
    pub rho: f64,
    pub sigma: f64,
    pub epsilon: f64,
    pub percentile: f64,
    pub n_realizations: usize,
    pub seed: u64,
}

fn calibration_seed(cfg: &ExperimentConfig, rho: f64, sigma: f64) -> u64 {
    derive_seed(cfg.seed, &[CALIBRATION_STREAM, float_key(rho), float_key(sigma)])
}

fn calibrate_cell(cfg: &ExperimentConfig, rho: f64, sigma: f64) -> Result<(CalibrationRecord, EpsilonCalibration)> {
    let seed = calibration_seed(cfg, rho, sigma);
    let cal = calibrate_epsilon(
        &cfg.plant(rho)?,
        &cfg.data_spec(sigma),
        cfg.sweep.n_calibration_realizations,
        cfg.sweep.percentile,
        seed,
    )?;
    Ok((
        CalibrationRecord {
            rho,
            sigma,
            epsilon: cal.epsilon,
            percentile: cal.percentile,
            n_realizations: cal.samples.len(),
            seed,
        },
        cal,
    ))
}

/// `ε` for every `(ρ, σ)` of the grid, sorted by `(ρ, σ)`.
pub fn run_calibration(cfg: &ExperimentConfig) -> Result<Vec<CalibrationRecord>> {
    cfg.validate()?;
    let cells = grid(cfg);
    cfg.with_workers(|| {
        cells
            .par_iter()
            .map(|&(rho, sigma)| calibrate_cell(cfg, rho, sigma).map(|(r, _)| r))
            .collect::<Result<Vec<_>>>()
    })?
}

fn grid(cfg: &ExperimentConfig) -> Vec<(f64, f64)> {
    let mut rhos = cfg.plant.rho.clone();
    let mut sigmas = cfg.sweep.sigma.clone();
    rhos.sort_by(f64::total_cmp);
    rhos.dedup();
    sigmas.sort_by(f64::total_cmp);
    sigmas.dedup();
    rhos.iter()
        .flat_map(|&r| sigmas.iter().map(move |&s| (r, s)))
        .collect()
}

/// One row of the sweep output. The first ten fields form the stable CSV
/// schema; the rest are diagnostics appended after them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRecord {
    pub rho: f64,
    pub sigma: f64,
    pub epsilon: f64,
    #[serde(rename = "J_star")]
    pub j_star: f64,
    #[serde(rename = "J_hat")]
    pub j_hat: f64,
    /// `(Ĵ² - J*²) / J*²`.
    pub gap: f64,
    pub bound: f64,
    pub gamma_star: f64,
    pub runtime_ms: u64,
    pub seed: u64,
    pub alpha: f64,
    /// `ε ‖Φ*_uy‖₂`.
    pub eta_star: f64,
    pub hypotheses_hold: bool,
    /// `ok`, or `error:<kind>` for a failed cell.
    pub status: String,
}

pub const CSV_HEADER: &str =
    "rho,sigma,epsilon,J_star,J_hat,gap,bound,gamma_star,runtime_ms,seed,alpha,eta_star,hypotheses_hold,status";

impl SweepRecord {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    fn failed(rho: f64, sigma: f64, epsilon: f64, seed: u64, err: &BiopError) -> Self {
        log::warn!("sweep cell ρ={rho} σ={sigma} seed={seed} failed: {err}");
        Self {
            rho,
            sigma,
            epsilon,
            j_star: f64::NAN,
            j_hat: f64::NAN,
            gap: f64::NAN,
            bound: f64::NAN,
            gamma_star: f64::NAN,
            runtime_ms: 0,
            seed,
            alpha: f64::NAN,
            eta_star: f64::NAN,
            hypotheses_hold: false,
            status: format!("error:{}", err.kind()),
        }
    }

    /// The record as it reads back from CSV.
    pub fn rounded(&self) -> Self {
        let r = |x: f64| fmt_f64(x).parse::<f64>().unwrap_or(f64::NAN);
        Self {
            rho: r(self.rho),
            sigma: r(self.sigma),
            epsilon: r(self.epsilon),
            j_star: r(self.j_star),
            j_hat: r(self.j_hat),
            gap: r(self.gap),
            bound: r(self.bound),
            gamma_star: r(self.gamma_star),
            alpha: r(self.alpha),
            eta_star: r(self.eta_star),
            ..self.clone()
        }
    }
}

/// 12 significant digits, scientific notation.
fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else {
        format!("{x:.11e}")
    }
}

struct SweepCell<'a> {
    cfg: &'a ExperimentConfig,
    rho: f64,
    sigma: f64,
    epsilon: f64,
    seed: u64,
    reference: &'a SynthesisResult,
}

impl SweepCell<'_> {
    fn run(&self) -> Result<SweepRecord> {
        let started = Instant::now();
        let cfg = self.cfg;
        let plant = cfg.plant(self.rho)?;
        let (p, m, n) = (plant.outputs(), plant.inputs(), cfg.horizons.horizon);
        let g = plant::impulse_toeplitz(&plant, n);
        let y_free = plant::free_response(&plant, n);
        let spec = cfg.data_spec(self.sigma);
        let data = generate_data(&plant, &spec, self.seed)?;
        let split = split_hankels(&data, spec.t_ini, n)?;
        let model = registry::estimator(&cfg.sweep.estimator)?
            .estimate(&split, &data.recent)?
            .with_epsilon(self.epsilon)?;
        let alpha = match cfg.sweep.alpha {
            Some(a) if self.epsilon > 0.0 => a.min(robust::GAMMA_MARGIN / self.epsilon),
            Some(a) => a,
            None => robust::default_alpha(&model, self.epsilon, cfg.sweep.alpha_multiple)?,
        };
        let synth = registry::synthesizer(&cfg.sweep.synthesizer)?.synthesize(&model, &cfg.robust_config(self.epsilon, alpha))?;
        let weights = cfg.cost.weights(p, m, n)?;
        let noise = cfg.cost.noise(p, m)?;
        let j_hat_sq = plant::cost_closed_form(&g, &y_free, &maps_from_controller(&g, &synth.controller)?, &weights, &noise)?;
        let j_star_sq = self.reference.cost_sq;
        let bound = robust::suboptimality_bound(
            &self.reference.maps,
            self.epsilon,
            alpha,
            &g,
            &y_free,
            model.g_hat(),
            model.y_free_hat(),
        )?;
        let record = SweepRecord {
            rho: self.rho,
            sigma: self.sigma,
            epsilon: self.epsilon,
            j_star: j_star_sq.sqrt(),
            j_hat: j_hat_sq.sqrt(),
            gap: (j_hat_sq - j_star_sq) / j_star_sq,
            bound: bound.value,
            gamma_star: synth.robust.as_ref().map_or(f64::NAN, |r| r.gamma_star),
            runtime_ms: if cfg.output.record_timing {
                started.elapsed().as_millis() as u64
            } else {
                0
            },
            seed: self.seed,
            alpha,
            eta_star: bound.eta,
            hypotheses_hold: bound.hypotheses_hold,
            status: "ok".into(),
        };
        if !(record.j_hat.is_finite() && record.gap.is_finite() && record.bound.is_finite()) {
            return Err(BiopError::NonFinite("sweep record"));
        }
        if record.gap < -1e-6 {
            log::warn!("gap {} below the optimum at ρ={} σ={}", record.gap, self.rho, self.sigma);
        }
        Ok(record)
    }
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub records: Vec<SweepRecord>,
    pub calibrations: Vec<CalibrationRecord>,
}

/// The `(ρ, σ, seed)` grid: `ε` is calibrated once per `(ρ, σ)`, then each
/// seed draws a fresh data library, builds the configured estimate, runs the
/// configured synthesizer and scores the controller on the true plant.
/// Failed cells become rows with an `error:` status.
pub fn run_robust_sweep(cfg: &ExperimentConfig) -> Result<SweepOutput> {
    cfg.validate()?;
    let cells = grid(cfg);
    cfg.with_workers(|| -> Result<SweepOutput> {
        let mut rhos = cfg.plant.rho.clone();
        rhos.sort_by(f64::total_cmp);
        rhos.dedup();
        let references = rhos
            .par_iter()
            .map(|&rho| nominal_on(&cfg.plant(rho)?, cfg).map(|r| (float_key(rho), r)))
            .collect::<Result<Vec<_>>>()?;
        let calibrations = cells
            .par_iter()
            .map(|&(rho, sigma)| calibrate_cell(cfg, rho, sigma).map(|(r, _)| r))
            .collect::<Result<Vec<_>>>()?;
        let jobs: Vec<(usize, u64)> = (0..calibrations.len())
            .flat_map(|c| (0..cfg.sweep.n_sweep_seeds as u64).map(move |k| (c, k)))
            .collect();
        let mut records: Vec<(usize, u64, SweepRecord)> = jobs
            .par_iter()
            .map(|&(c, k)| {
                let cal = &calibrations[c];
                let seed = derive_seed(cfg.seed, &[SWEEP_STREAM, float_key(cal.rho), float_key(cal.sigma), k]);
                let reference = &references
                    .iter()
                    .find(|(key, _)| *key == float_key(cal.rho))
                    .expect("reference for every ρ")
                    .1;
                let cell = SweepCell {
                    cfg,
                    rho: cal.rho,
                    sigma: cal.sigma,
                    epsilon: cal.epsilon,
                    seed,
                    reference,
                };
                let rec = cell
                    .run()
                    .unwrap_or_else(|e| SweepRecord::failed(cal.rho, cal.sigma, cal.epsilon, seed, &e));
                (c, k, rec)
            })
            .collect();
        records.sort_by_key(|(c, k, _)| (*c, *k));
        Ok(SweepOutput {
            records: records.into_iter().map(|(_, _, r)| r).collect(),
            calibrations,
        })
    })?
}

pub fn csv_string(records: &[SweepRecord]) -> String {
    let mut out = String::with_capacity(160 * (records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            fmt_f64(r.rho),
            fmt_f64(r.sigma),
            fmt_f64(r.epsilon),
            fmt_f64(r.j_star),
            fmt_f64(r.j_hat),
            fmt_f64(r.gap),
            fmt_f64(r.bound),
            fmt_f64(r.gamma_star),
            r.runtime_ms,
            r.seed,
            fmt_f64(r.alpha),
            fmt_f64(r.eta_star),
            r.hypotheses_hold,
            r.status
        );
    }
    out
}

pub fn emit_csv(records: &[SweepRecord], path: &Path) -> Result<()> {
    fs::write(path, csv_string(records))
        .map_err(|e| BiopError::Csv(format!("cannot write {}: {e}", path.display())))
}

pub fn parse_csv(text: &str) -> Result<Vec<SweepRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(BiopError::Csv("missing or unexpected header".into()));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = |what: &str| BiopError::Csv(format!("line {}: bad {what}", i + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 14 {
                return Err(bad("field count"));
            }
            let num = |k: usize| f[k].parse::<f64>().map_err(|_| bad(CSV_HEADER.split(',').nth(k).unwrap_or("field")));
            Ok(SweepRecord {
                rho: num(0)?,
                sigma: num(1)?,
                epsilon: num(2)?,
                j_star: num(3)?,
                j_hat: num(4)?,
                gap: num(5)?,
                bound: num(6)?,
                gamma_star: num(7)?,
                runtime_ms: f[8].parse().map_err(|_| bad("runtime_ms"))?,
                seed: f[9].parse().map_err(|_| bad("seed"))?,
                alpha: num(10)?,
                eta_star: num(11)?,
                hypotheses_hold: f[12].parse().map_err(|_| bad("hypotheses_hold"))?,
                status: f[13].to_string(),
            })
        })
        .collect()
}

pub fn read_csv(path: &Path) -> Result<Vec<SweepRecord>> {
    parse_csv(&fs::read_to_string(path)?)
}

/// `<path>.meta.json`.
pub fn metadata_path(csv: &Path) -> PathBuf {
    let mut name = csv.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

#[derive(Debug, Serialize)]
struct SweepMetadata<'a> {
    generator: &'static str,
    version: &'static str,
    columns: Vec<&'static str>,
    rows: usize,
    failed_rows: usize,
    config: &'a ExperimentConfig,
    calibrations: &'a [CalibrationRecord],
}

pub fn write_metadata(csv: &Path, cfg: &ExperimentConfig, out: &SweepOutput) -> Result<PathBuf> {
    let meta = SweepMetadata {
        generator: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        columns: CSV_HEADER.split(',').collect(),
        rows: out.records.len(),
        failed_rows: out.records.iter().filter(|r| !r.is_ok()).count(),
        config: cfg,
        calibrations: &out.calibrations,
    };
    let path = metadata_path(csv);
    let text = serde_json::to_string_pretty(&meta).map_err(|e| BiopError::Csv(e.to_string()))?;
    fs::write(&path, text + "\n")?;
    Ok(path)
}

/// Seed used for the data of sweep cell `(ρ, σ, k)`.
pub fn sweep_seed(cfg: &ExperimentConfig, rho: f64, sigma: f64, k: u64) -> u64 {
    derive_seed(cfg.seed, &[SWEEP_STREAM, float_key(rho), float_key(sigma), k])
}

/// Seed used for the noiseless data of the demo at `ρ`.
pub fn demo_seed(cfg: &ExperimentConfig, rho: f64) -> u64 {
    derive_seed(cfg.seed, &[DEMO_STREAM, float_key(rho)])
}
