//! Named strategies selected at run time: behavioral estimators, inner
//! solvers for the robust program, and synthesizers. Built-ins are installed
//! by [`Strategies::builtin`]; callers may register more under new names.

use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};

use crate::behavior::{exact_model, least_squares_model, BehavioralModel, HankelSplit};
use crate::error::{BiopError, Result};
use crate::iop::{self, ClosedLoopMaps, ControllerMatrix, QuadraticSolveOptions};
use crate::plant::{CostWeights, NoiseModel, Trajectory};
use crate::robust::{self, Admm, Barrier, InnerSolver, ProjectedGradient, RobustConfig, RobustSolution};

pub const DEFAULT_INNER_SOLVER: &str = "barrier";
pub const DEFAULT_ESTIMATOR: &str = "least_squares";
pub const DEFAULT_SYNTHESIZER: &str = "robust";

/// Turns a Hankel split and the recent window into a model `(Ĝ, ŷ)`.
pub trait Estimator: Send + Sync {
    fn name(&self) -> &'static str;
    fn estimate(&self, split: &HankelSplit, recent: &Trajectory) -> Result<BehavioralModel>;
}

/// Designs a controller from a model; `config` carries `ε`, `α` and the
/// solver settings (ignored by synthesizers that do not need them).
pub trait Synthesizer: Send + Sync {
    fn name(&self) -> &'static str;
    fn synthesize(&self, model: &BehavioralModel, config: &RobustConfig) -> Result<Synthesis>;
}

#[derive(Debug, Clone)]
pub struct Synthesis {
    pub maps: ClosedLoopMaps,
    pub controller: ControllerMatrix,
    /// Model-side objective: the nominal cost, or the robust upper bound.
    pub objective: f64,
    pub robust: Option<RobustSolution>,
}

pub struct Registry<T: ?Sized> {
    kind: &'static str,
    entries: BTreeMap<String, Arc<T>>,
}

impl<T: ?Sized> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: BTreeMap::new(),
        }
    }

    /// Replaces any entry already registered under `name`.
    pub fn register(&mut self, name: &str, strategy: Arc<T>) {
        self.entries.insert(name.to_string(), strategy);
    }

    pub fn get(&self, name: &str) -> Result<Arc<T>> {
        self.entries.get(name).cloned().ok_or_else(|| BiopError::UnknownStrategy {
            kind: self.kind,
            name: name.to_string(),
            available: self.names().join(", "),
        })
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }
}

pub struct Strategies {
    pub estimators: Registry<dyn Estimator>,
    pub inner_solvers: Registry<dyn InnerSolver>,
    pub synthesizers: Registry<dyn Synthesizer>,
}

impl Strategies {
    pub fn builtin() -> Self {
        let mut estimators: Registry<dyn Estimator> = Registry::new("estimator");
        estimators.register("exact", Arc::new(ExactEstimator));
        estimators.register("least_squares", Arc::new(LeastSquaresEstimator));
        let mut inner_solvers: Registry<dyn InnerSolver> = Registry::new("inner solver");
        inner_solvers.register("admm", Arc::new(Admm));
        inner_solvers.register("barrier", Arc::new(Barrier));
        inner_solvers.register("projected_gradient", Arc::new(ProjectedGradient));
        let mut synthesizers: Registry<dyn Synthesizer> = Registry::new("synthesizer");
        synthesizers.register("nominal", Arc::new(NominalSynthesizer));
        synthesizers.register("robust", Arc::new(RobustSynthesizer));
        Self {
            estimators,
            inner_solvers,
            synthesizers,
        }
    }

    /// Shared instance of the built-in set.
    pub fn global() -> &'static Strategies {
        static BUILTIN: OnceLock<Strategies> = OnceLock::new();
        BUILTIN.get_or_init(Strategies::builtin)
    }
}

pub fn inner_solver(name: &str) -> Result<Arc<dyn InnerSolver>> {
    Strategies::global().inner_solvers.get(name)
}

pub fn estimator(name: &str) -> Result<Arc<dyn Estimator>> {
    Strategies::global().estimators.get(name)
}

pub fn synthesizer(name: &str) -> Result<Arc<dyn Synthesizer>> {
    Strategies::global().synthesizers.get(name)
}

/// Errors if the Hankel system has no exact solution.
pub struct ExactEstimator;

impl Estimator for ExactEstimator {
    fn name(&self) -> &'static str {
        "exact"
    }

    fn estimate(&self, split: &HankelSplit, recent: &Trajectory) -> Result<BehavioralModel> {
        exact_model(split, recent)
    }
}

pub struct LeastSquaresEstimator;

impl Estimator for LeastSquaresEstimator {
    fn name(&self) -> &'static str {
        "least_squares"
    }

    fn estimate(&self, split: &HankelSplit, recent: &Trajectory) -> Result<BehavioralModel> {
        least_squares_model(split, recent)
    }
}

/// Certainty equivalence: the nominal optimum on `(Ĝ, ŷ)`.
pub struct NominalSynthesizer;

impl Synthesizer for NominalSynthesizer {
    fn name(&self) -> &'static str {
        "nominal"
    }

    fn synthesize(&self, model: &BehavioralModel, _config: &RobustConfig) -> Result<Synthesis> {
        let (p, m, n) = (model.outputs(), model.inputs(), model.horizon());
        let res = iop::solve_nominal(
            model.g_hat(),
            model.y_free_hat(),
            &CostWeights::identity(p, m, n),
            &NoiseModel::identity(p, m),
            &QuadraticSolveOptions::default(),
        )?;
        Ok(Synthesis {
            objective: res.cost(),
            maps: res.maps,
            controller: res.controller,
            robust: None,
        })
    }
}

pub struct RobustSynthesizer;

impl Synthesizer for RobustSynthesizer {
    fn name(&self) -> &'static str {
        "robust"
    }

    fn synthesize(&self, model: &BehavioralModel, config: &RobustConfig) -> Result<Synthesis> {
        let sol = robust::golden_search(model, config)?;
        Ok(Synthesis {
            maps: sol.maps.clone(),
            controller: sol.controller.clone(),
            objective: sol.upper_bound,
            robust: Some(sol),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::behavior::{generate_data, split_hankels, DataSpec};
    use crate::plant::benchmark_plant;

    #[test]
    fn builtin_names() {
        let s = Strategies::builtin();
        assert_eq!(s.estimators.names(), ["exact", "least_squares"]);
        assert_eq!(s.inner_solvers.names(), ["admm", "barrier", "projected_gradient"]);
        assert_eq!(s.synthesizers.names(), ["nominal", "robust"]);
        for name in s.inner_solvers.names() {
            assert_eq!(s.inner_solvers.get(name).unwrap().name(), name);
        }
    }

    #[test]
    fn unknown_name_lists_alternatives() {
        match inner_solver("interior_point") {
            Err(BiopError::UnknownStrategy { kind, name, available }) => {
                assert_eq!(kind, "inner solver");
                assert_eq!(name, "interior_point");
                assert_eq!(available, "admm, barrier, projected_gradient");
            }
            other => panic!("unexpected {:?}", other.map(|s| s.name())),
        }
    }

    #[test]
    fn user_registration_overrides() {
        let mut s = Strategies::builtin();
        s.estimators.register("exact", Arc::new(LeastSquaresEstimator));
        assert_eq!(s.estimators.get("exact").unwrap().name(), "least_squares");
    }

    #[test]
    fn estimators_agree_on_noiseless_data() {
        let spec = DataSpec {
            t_hist: 200,
            t_h: 249,
            t_ini: 30,
            horizon: 11,
            noise_std: 0.0,
        };
        let data = generate_data(&benchmark_plant(0.9), &spec, 5).unwrap();
        let split = split_hankels(&data, 30, 11).unwrap();
        let a = estimator("exact").unwrap().estimate(&split, &data.recent).unwrap();
        let b = estimator("least_squares").unwrap().estimate(&split, &data.recent).unwrap();
        assert!((a.g_hat().matrix() - b.g_hat().matrix()).amax() < 1e-9);
        assert!((a.y_free_hat() - b.y_free_hat()).amax() < 1e-9);
    }
}
