//! Experiment configuration: a TOML file describing one seeded ensemble.
//!
//! ```toml
//! seeds = [0, 1, 2]
//! output_dir = "runs/recompile"
//! pool_locality = 2
//! constraint_ratio = 10.0
//!
//! [task]
//! kind = "recompilation"
//! qubits = 4
//! layers = 2
//! perturbation = 0.3
//!
//! [provider]
//! kind = "shot_noise"
//! shots = 100000
//!
//! [optimizer]
//! kind = "covar"
//! iterations = 30
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::CliError;

const MAX_QUBITS: usize = 16;
const MAX_RING_QUBITS: usize = 12;

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    #[serde(default = "defaults::pool_locality")]
    pub pool_locality: usize,
    /// Absolute constraint count; overrides `constraint_ratio`.
    #[serde(default)]
    pub n_constraints: Option<usize>,
    /// Constraints per circuit parameter.
    #[serde(default)]
    pub constraint_ratio: Option<f64>,
    #[serde(default)]
    pub record_wall_time: bool,
    /// Energy distance within which a state counts as an eigenstate.
    #[serde(default = "defaults::eigen_tolerance")]
    pub eigen_tolerance: f64,
    pub task: TaskConfig,
    #[serde(default)]
    pub provider: ProviderConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskConfig {
    Recompilation {
        qubits: usize,
        layers: usize,
        #[serde(default = "defaults::perturbation")]
        perturbation: f64,
    },
    SpinRing {
        qubits: usize,
        layers: usize,
        #[serde(default = "defaults::coupling")]
        coupling: f64,
        #[serde(default)]
        hamiltonian_seed: u64,
    },
    OverdeterminationDemo {
        qubits: usize,
        layers: usize,
        /// Index of the disturbed parameter; the middle one by default.
        #[serde(default)]
        parameter: Option<usize>,
        #[serde(default = "defaults::disturbance")]
        disturbance: f64,
    },
    NoiseFloorProbe {
        qubits: usize,
        layers: usize,
        #[serde(default = "defaults::floor_perturbation")]
        perturbation: f64,
        #[serde(default = "defaults::noise_seeds")]
        noise_seeds: usize,
        #[serde(default = "defaults::lambda0")]
        lambda: f64,
    },
    LocalTrapEscape {
        qubits: usize,
        layers: usize,
        #[serde(default = "defaults::coupling")]
        coupling: f64,
        #[serde(default)]
        hamiltonian_seed: u64,
        #[serde(default = "defaults::gd_learning_rate")]
        learning_rate: f64,
        #[serde(default = "defaults::stall_threshold")]
        stall_threshold: f64,
        #[serde(default = "defaults::max_descent_iterations")]
        max_descent_iterations: usize,
    },
    ConvergenceDistribution {
        qubits: usize,
        layers: usize,
        #[serde(default = "defaults::coupling")]
        coupling: f64,
        #[serde(default)]
        hamiltonian_seed: u64,
        /// Natural-gradient initialisation stops once `E - E0` drops below
        /// each of these gaps in turn.
        target_gaps: Vec<f64>,
        /// Upper edges of the ground-state overlap buckets.
        #[serde(default = "defaults::overlap_edges")]
        overlap_edges: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProviderConfig {
    #[default]
    Exact,
    ShotNoise {
        shots: u64,
    },
    CircuitNoise {
        fidelity: f64,
        #[serde(default = "defaults::circuit_sigma")]
        sigma: f64,
        /// Shot noise on top of the circuit-noise bias.
        #[serde(default)]
        shots: Option<u64>,
    },
    Shadows {
        epsilon: f64,
        delta: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Covar,
    Vqe,
    VarianceVqe,
    NatGrad,
    NatGradThenCovar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularizerKind {
    #[default]
    Identity,
    NormalDiagonal,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default)]
    pub kind: OptimizerKind,
    #[serde(default = "defaults::iterations")]
    pub iterations: usize,
    #[serde(default = "defaults::lambda0")]
    pub lambda0: f64,
    #[serde(default = "defaults::lambda_growth")]
    pub lambda_growth: f64,
    #[serde(default)]
    pub regularizer: RegularizerKind,
    #[serde(default = "defaults::max_component_step")]
    pub max_component_step: f64,
    #[serde(default = "defaults::convergence_tol")]
    pub convergence_tol: f64,
    #[serde(default = "defaults::yes")]
    pub resample_each_iteration: bool,
    #[serde(default)]
    pub linesearch: bool,
    #[serde(default)]
    pub fresh_acceptance_sample: bool,
    /// Gradient-descent step for `vqe` and `variance_vqe`.
    #[serde(default = "defaults::gd_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "defaults::ng_learning_rate")]
    pub nat_grad_learning_rate: f64,
    #[serde(default = "defaults::ng_iterations")]
    pub nat_grad_iterations: usize,
    /// `nat_grad_then_covar` hands over once `E - E0` is below this gap.
    #[serde(default = "defaults::target_gap")]
    pub target_gap: f64,
    /// Uniform jitter added to the natural-gradient result before CoVaR.
    #[serde(default = "defaults::floor_perturbation")]
    pub handover_perturbation: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        toml::from_str("").expect("all optimizer fields have defaults")
    }
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub constraint_ratios: Vec<f64>,
    #[serde(default)]
    pub shots: Vec<u64>,
}

mod defaults {
    pub fn pool_locality() -> usize {
        3
    }
    pub fn eigen_tolerance() -> f64 {
        1e-3
    }
    pub fn perturbation() -> f64 {
        0.3
    }
    pub fn floor_perturbation() -> f64 {
        0.05
    }
    pub fn coupling() -> f64 {
        0.1
    }
    pub fn disturbance() -> f64 {
        0.5
    }
    pub fn noise_seeds() -> usize {
        20
    }
    pub fn lambda0() -> f64 {
        1e-4
    }
    pub fn lambda_growth() -> f64 {
        2.0
    }
    pub fn max_component_step() -> f64 {
        1.0
    }
    pub fn convergence_tol() -> f64 {
        1e-12
    }
    pub fn iterations() -> usize {
        50
    }
    pub fn yes() -> bool {
        true
    }
    pub fn gd_learning_rate() -> f64 {
        0.1
    }
    pub fn ng_learning_rate() -> f64 {
        0.05
    }
    pub fn ng_iterations() -> usize {
        2000
    }
    pub fn target_gap() -> f64 {
        0.5
    }
    pub fn stall_threshold() -> f64 {
        2e-5
    }
    pub fn max_descent_iterations() -> usize {
        2000
    }
    pub fn circuit_sigma() -> f64 {
        0.01
    }
    pub fn overlap_edges() -> Vec<f64> {
        vec![0.2, 0.4, 0.6, 0.8, 1.0]
    }
}

impl TaskConfig {
    pub fn qubits(&self) -> usize {
        match self {
            TaskConfig::Recompilation { qubits, .. }
            | TaskConfig::SpinRing { qubits, .. }
            | TaskConfig::OverdeterminationDemo { qubits, .. }
            | TaskConfig::NoiseFloorProbe { qubits, .. }
            | TaskConfig::LocalTrapEscape { qubits, .. }
            | TaskConfig::ConvergenceDistribution { qubits, .. } => *qubits,
        }
    }

    pub fn layers(&self) -> usize {
        match self {
            TaskConfig::Recompilation { layers, .. }
            | TaskConfig::SpinRing { layers, .. }
            | TaskConfig::OverdeterminationDemo { layers, .. }
            | TaskConfig::NoiseFloorProbe { layers, .. }
            | TaskConfig::LocalTrapEscape { layers, .. }
            | TaskConfig::ConvergenceDistribution { layers, .. } => *layers,
        }
    }

    /// Number of ansatz parameters of the hardware-efficient layout.
    pub fn n_params(&self) -> usize {
        self.qubits() * (2 * self.layers() + 1)
    }

    fn is_ring(&self) -> bool {
        matches!(
            self,
            TaskConfig::SpinRing { .. }
                | TaskConfig::LocalTrapEscape { .. }
                | TaskConfig::ConvergenceDistribution { .. }
        )
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Invalid(msg.into())
}

fn positive(name: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

fn non_negative(name: &str, v: f64) -> Result<(), CliError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!(
            "{name} must be non-negative and finite, got {v}"
        )))
    }
}

/// Size of the pool of non-identity strings of weight `1..=q` on `n` qubits.
pub fn pool_size(n: usize, q: usize) -> u128 {
    let mut total: u128 = 0;
    let mut binom: u128 = 1;
    for w in 1..=q.min(n) {
        binom = binom * (n - w + 1) as u128 / w as u128;
        total += binom * 3u128.pow(w as u32);
    }
    total
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Parses and validates.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Constraint count for a given ratio, or the configured one. Without
    /// either, ten per parameter or the whole pool, whichever is smaller.
    pub fn constraints_for(&self, ratio: Option<f64>) -> usize {
        let nu = self.task.n_params() as f64;
        match (ratio, self.n_constraints, self.constraint_ratio) {
            (Some(r), _, _) => (r * nu).round() as usize,
            (None, Some(n), _) => n,
            (None, None, Some(r)) => (r * nu).round() as usize,
            (None, None, None) => {
                let pool = pool_size(self.task.qubits(), self.pool_locality);
                (10 * self.task.n_params()).min(pool.min(usize::MAX as u128) as usize)
            }
        }
    }

    pub fn is_sweep(&self) -> bool {
        self.sweep
            .as_ref()
            .is_some_and(|s| !s.constraint_ratios.is_empty() || !s.shots.is_empty())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.seeds.is_empty() {
            return Err(invalid("seeds must list at least one seed"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid("seeds must be distinct"));
        }
        if self.output_dir.as_os_str().is_empty() {
            return Err(invalid("output_dir must not be empty"));
        }
        let n = self.task.qubits();
        if n == 0 || n > MAX_QUBITS {
            return Err(invalid(format!(
                "qubits must lie in 1..={MAX_QUBITS}, got {n}"
            )));
        }
        if self.task.layers() == 0 {
            return Err(invalid("layers must be at least 1"));
        }
        if self.task.is_ring() && !(3..=MAX_RING_QUBITS).contains(&n) {
            return Err(invalid(format!(
                "spin-ring tasks need 3..={MAX_RING_QUBITS} qubits for the exact spectrum, got {n}"
            )));
        }
        if self.pool_locality == 0 {
            return Err(invalid("pool_locality must be at least 1"));
        }
        if self.pool_locality > n {
            return Err(invalid(format!(
                "pool_locality {} exceeds the {n} qubits",
                self.pool_locality
            )));
        }
        if self.n_constraints.is_some() && self.constraint_ratio.is_some() {
            return Err(invalid(
                "give either n_constraints or constraint_ratio, not both",
            ));
        }
        if let Some(r) = self.constraint_ratio {
            positive("constraint_ratio", r)?;
        }
        positive("eigen_tolerance", self.eigen_tolerance)?;
        let pool = pool_size(n, self.pool_locality);
        let mut counts = vec![self.constraints_for(None)];
        if let Some(sweep) = &self.sweep {
            for r in &sweep.constraint_ratios {
                positive("sweep.constraint_ratios entry", *r)?;
                counts.push(self.constraints_for(Some(*r)));
            }
            if sweep.shots.contains(&0) {
                return Err(invalid("sweep.shots entries must be positive"));
            }
        }
        for c in counts {
            if c == 0 {
                return Err(invalid("the constraint count rounds to zero"));
            }
            if c as u128 > pool {
                return Err(invalid(format!(
                    "{c} constraints requested but the {}-local pool on {n} qubits has {pool} members",
                    self.pool_locality
                )));
            }
        }
        self.validate_task()?;
        self.validate_provider()?;
        self.validate_optimizer()
    }

    fn validate_task(&self) -> Result<(), CliError> {
        match &self.task {
            TaskConfig::Recompilation { perturbation, .. } => {
                non_negative("perturbation", *perturbation)
            }
            TaskConfig::SpinRing { coupling, .. } => {
                if coupling.is_finite() {
                    Ok(())
                } else {
                    Err(invalid("coupling must be finite"))
                }
            }
            TaskConfig::OverdeterminationDemo {
                parameter,
                disturbance,
                ..
            } => {
                if let Some(p) = parameter {
                    if *p >= self.task.n_params() {
                        return Err(invalid(format!(
                            "parameter {p} out of range for {} parameters",
                            self.task.n_params()
                        )));
                    }
                }
                if disturbance.is_finite() {
                    Ok(())
                } else {
                    Err(invalid("disturbance must be finite"))
                }
            }
            TaskConfig::NoiseFloorProbe {
                perturbation,
                noise_seeds,
                lambda,
                ..
            } => {
                non_negative("perturbation", *perturbation)?;
                positive("lambda", *lambda)?;
                if *noise_seeds < 2 {
                    return Err(invalid("noise_seeds must be at least 2"));
                }
                if !matches!(self.provider, ProviderConfig::ShotNoise { .. }) && !self.is_sweep() {
                    return Err(invalid(
                        "noise_floor_probe needs a shot_noise provider or a sweep.shots list",
                    ));
                }
                Ok(())
            }
            TaskConfig::LocalTrapEscape {
                coupling,
                learning_rate,
                stall_threshold,
                max_descent_iterations,
                ..
            } => {
                if !coupling.is_finite() {
                    return Err(invalid("coupling must be finite"));
                }
                positive("learning_rate", *learning_rate)?;
                positive("stall_threshold", *stall_threshold)?;
                if *max_descent_iterations == 0 {
                    return Err(invalid("max_descent_iterations must be at least 1"));
                }
                Ok(())
            }
            TaskConfig::ConvergenceDistribution {
                coupling,
                target_gaps,
                overlap_edges,
                ..
            } => {
                if !coupling.is_finite() {
                    return Err(invalid("coupling must be finite"));
                }
                if target_gaps.is_empty() {
                    return Err(invalid("target_gaps must not be empty"));
                }
                for g in target_gaps {
                    positive("target_gaps entry", *g)?;
                }
                if overlap_edges.is_empty()
                    || overlap_edges.windows(2).any(|w| w[0] >= w[1])
                    || overlap_edges[0] <= 0.0
                    || *overlap_edges.last().unwrap() < 1.0
                {
                    return Err(invalid(
                        "overlap_edges must increase strictly from above 0 and end at 1 or more",
                    ));
                }
                if self.provider != ProviderConfig::Exact {
                    return Err(invalid(
                        "convergence_distribution runs on the exact provider only",
                    ));
                }
                Ok(())
            }
        }
    }

    fn validate_provider(&self) -> Result<(), CliError> {
        match &self.provider {
            ProviderConfig::Exact => Ok(()),
            ProviderConfig::ShotNoise { shots } => {
                if *shots == 0 {
                    Err(invalid("shots must be positive"))
                } else {
                    Ok(())
                }
            }
            ProviderConfig::CircuitNoise {
                fidelity,
                sigma,
                shots,
            } => {
                if !(*fidelity > 0.0 && *fidelity <= 1.0) {
                    return Err(invalid(format!(
                        "fidelity must lie in (0, 1], got {fidelity}"
                    )));
                }
                non_negative("sigma", *sigma)?;
                if *shots == Some(0) {
                    return Err(invalid("shots must be positive"));
                }
                Ok(())
            }
            ProviderConfig::Shadows { epsilon, delta } => {
                positive("epsilon", *epsilon)?;
                if !(*delta > 0.0 && *delta <= 1.0) {
                    return Err(invalid(format!("delta must lie in (0, 1], got {delta}")));
                }
                Ok(())
            }
        }
    }

    fn validate_optimizer(&self) -> Result<(), CliError> {
        let o = &self.optimizer;
        positive("lambda0", o.lambda0)?;
        if !(o.lambda_growth > 1.0 && o.lambda_growth.is_finite()) {
            return Err(invalid("lambda_growth must exceed 1"));
        }
        positive("max_component_step", o.max_component_step)?;
        non_negative("convergence_tol", o.convergence_tol)?;
        positive("learning_rate", o.learning_rate)?;
        positive("nat_grad_learning_rate", o.nat_grad_learning_rate)?;
        positive("target_gap", o.target_gap)?;
        non_negative("handover_perturbation", o.handover_perturbation)?;
        let needs_ring = matches!(o.kind, OptimizerKind::NatGradThenCovar);
        if needs_ring && !self.task.is_ring() {
            return Err(invalid("nat_grad_then_covar needs a spin-ring task"));
        }
        if let Some(sweep) = &self.sweep {
            if !sweep.shots.is_empty()
                && !matches!(
                    self.provider,
                    ProviderConfig::ShotNoise { .. }
                        | ProviderConfig::CircuitNoise { shots: Some(_), .. }
                )
                && !matches!(self.task, TaskConfig::NoiseFloorProbe { .. })
            {
                return Err(invalid("sweep.shots needs a provider with shot noise"));
            }
        }
        Ok(())
    }
}
