//! Levenberg-Marquardt root finding on sampled covariance constraints.

use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::seq::index;
use rayon::prelude::*;

use crate::circuit::Ansatz;
use crate::covariance::{stack, CovariancePlan, StackedSystem};
use crate::error::{Error, Result};
use crate::hamiltonians::recompilation_metrics;
use crate::noise::{ShotNoiseConfig, ShotNoiseProvider};
use crate::operator::HermitianOperator;
use crate::pauli::PauliString;
use crate::provider::{ExactProvider, ExpectationProvider};
use crate::rng;

/// Damping matrix `R` in `(A + lambda R)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Regularizer {
    #[default]
    Identity,
    /// `diag(J^T J)`, floored so the damped matrix stays definite.
    NormalDiagonal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmConfig {
    pub n_constraints: usize,
    pub lambda0: f64,
    pub lambda_growth: f64,
    pub regularizer: Regularizer,
    pub max_component_step: f64,
    pub max_iterations: usize,
    pub convergence_tol: f64,
    pub resample_each_iteration: bool,
    pub linesearch_enabled: bool,
    /// Judge candidate steps on a freshly drawn constraint set instead of the
    /// one that produced the step.
    pub fresh_acceptance_sample: bool,
    /// Number of times lambda may grow before the least-bad candidate is
    /// taken and the iteration flagged.
    pub max_lambda_increases: usize,
}

impl LmConfig {
    pub fn new(n_constraints: usize) -> Self {
        LmConfig {
            n_constraints,
            lambda0: 1e-4,
            lambda_growth: 2.0,
            regularizer: Regularizer::Identity,
            max_component_step: 1.0,
            max_iterations: 50,
            convergence_tol: 1e-12,
            resample_each_iteration: true,
            linesearch_enabled: false,
            fresh_acceptance_sample: false,
            max_lambda_increases: 30,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::InvalidArgument(what));
        if self.n_constraints == 0 {
            return bad("n_constraints must be at least 1".into());
        }
        if !(self.lambda0 > 0.0 && self.lambda0.is_finite()) {
            return bad(format!("lambda0 must be > 0, got {}", self.lambda0));
        }
        if !(self.lambda_growth > 1.0 && self.lambda_growth.is_finite()) {
            return bad(format!(
                "lambda_growth must be > 1, got {}",
                self.lambda_growth
            ));
        }
        if !(self.max_component_step > 0.0) {
            return bad(format!(
                "max_component_step must be > 0, got {}",
                self.max_component_step
            ));
        }
        if !(self.convergence_tol >= 0.0) {
            return bad("convergence_tol must be >= 0".into());
        }
        Ok(())
    }
}

/// Rows per block when forming `J^T J` in parallel.
const ROW_BLOCK: usize = 2048;

/// `A = J^T J` and `g = J^T f` for a stacked system, formed once and reused
/// for every damping trial.
#[derive(Debug, Clone)]
pub struct NormalEquations {
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
}

impl NormalEquations {
    pub fn new(stacked: &StackedSystem) -> Self {
        let j = &stacked.jacobian;
        let r = &stacked.residual;
        let n = j.ncols();
        let rows = j.nrows();
        let blocks: Vec<(usize, usize)> = (0..rows)
            .step_by(ROW_BLOCK)
            .map(|start| (start, ROW_BLOCK.min(rows - start)))
            .collect();
        // Blocks are summed in row order so the result does not depend on
        // how the work was split across threads.
        let parts: Vec<(DMatrix<f64>, DVector<f64>)> = blocks
            .into_par_iter()
            .map(|(start, len)| {
                let block = j.rows(start, len);
                (block.tr_mul(&block), block.tr_mul(&r.rows(start, len)))
            })
            .collect();
        let mut matrix = DMatrix::zeros(n, n);
        let mut rhs = DVector::zeros(n);
        for (a, g) in parts {
            matrix += a;
            rhs += g;
        }
        NormalEquations { matrix, rhs }
    }

    pub fn n_params(&self) -> usize {
        self.rhs.len()
    }

    /// `-(A + lambda R)^-1 g`, rescaled so no component exceeds
    /// `max_component_step` in magnitude.
    pub fn solve(
        &self,
        lambda: f64,
        regularizer: Regularizer,
        max_component_step: f64,
    ) -> Result<DVector<f64>> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lambda must be > 0, got {lambda}"
            )));
        }
        let mut damped = self.matrix.clone();
        match regularizer {
            Regularizer::Identity => {
                for i in 0..damped.nrows() {
                    damped[(i, i)] += lambda;
                }
            }
            Regularizer::NormalDiagonal => {
                let floor = self.matrix.diagonal().max().max(1.0) * 1e-12;
                for i in 0..damped.nrows() {
                    damped[(i, i)] += lambda * self.matrix[(i, i)].max(floor);
                }
            }
        }
        let chol = Cholesky::new(damped).ok_or(Error::Singular)?;
        let mut step = -chol.solve(&self.rhs);
        if step.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular);
        }
        let largest = step.amax();
        if largest > max_component_step {
            step *= max_component_step / largest;
        }
        Ok(step)
    }
}

/// One damped Gauss-Newton step for a stacked covariance system.
pub fn lm_step(
    stacked: &StackedSystem,
    lambda: f64,
    regularizer: Regularizer,
    max_component_step: f64,
) -> Result<DVector<f64>> {
    NormalEquations::new(stacked).solve(lambda, regularizer, max_component_step)
}

/// Newton's update for a single real constraint.
pub fn single_constraint_newton(f_k: f64, j_k: f64) -> Result<f64> {
    if j_k == 0.0 {
        return Err(Error::ZeroDerivative);
    }
    Ok(-f_k / j_k)
}

/// What to measure on the noiseless state after every iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Monitor {
    #[default]
    Energy,
    /// Also record the recompilation infidelities.
    Recompilation,
}

/// Everything an optimiser needs besides the provider and its own settings.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    pub ansatz: &'a Ansatz,
    pub hamiltonian: &'a HermitianOperator,
    pub pool: &'a [PauliString],
    pub monitor: Monitor,
    pub record_wall_time: bool,
}

impl<'a> Problem<'a> {
    pub fn new(
        ansatz: &'a Ansatz,
        hamiltonian: &'a HermitianOperator,
        pool: &'a [PauliString],
    ) -> Self {
        Problem {
            ansatz,
            hamiltonian,
            pool,
            monitor: Monitor::Energy,
            record_wall_time: true,
        }
    }

    pub fn with_monitor(mut self, monitor: Monitor) -> Self {
        self.monitor = monitor;
        self
    }

    pub fn with_wall_time(mut self, record: bool) -> Self {
        self.record_wall_time = record;
        self
    }

    /// Noiseless energy, variance and (optionally) infidelities at `theta`.
    pub fn state_metrics(&self, theta: &[f64]) -> Result<StateMetrics> {
        let state = self.ansatz.prepare(theta)?;
        let (infidelity, infidelity_max_basis) = match self.monitor {
            Monitor::Energy => (None, None),
            Monitor::Recompilation => {
                let (a, b) = recompilation_metrics(&state);
                (Some(a), Some(b))
            }
        };
        Ok(StateMetrics {
            energy: self.hamiltonian.expectation(&state)?,
            variance: self.hamiltonian.variance(&state)?,
            infidelity,
            infidelity_max_basis,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateMetrics {
    pub energy: f64,
    pub variance: f64,
    pub infidelity: Option<f64>,
    pub infidelity_max_basis: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    /// Residual norm after the step, on the constraints that judged it.
    pub f_norm: f64,
    pub lambda: f64,
    pub step_norm: f64,
    pub energy: f64,
    pub variance: f64,
    pub infidelity: Option<f64>,
    pub infidelity_max_basis: Option<f64>,
    pub flagged: bool,
    pub wall_ms: f64,
}

impl IterationRecord {
    pub const COLUMNS: [&'static str; 10] = [
        "iter",
        "f_norm",
        "lambda",
        "step_norm",
        "energy",
        "variance",
        "infidelity",
        "infidelity_max_basis",
        "flagged",
        "wall_ms",
    ];

    pub(crate) fn new(
        iter: usize,
        f_norm: f64,
        lambda: f64,
        step_norm: f64,
        metrics: StateMetrics,
        flagged: bool,
        wall_ms: f64,
    ) -> Self {
        IterationRecord {
            iter,
            f_norm,
            lambda,
            step_norm,
            energy: metrics.energy,
            variance: metrics.variance,
            infidelity: metrics.infidelity,
            infidelity_max_basis: metrics.infidelity_max_basis,
            flagged,
            wall_ms,
        }
    }
}

/// The starting state (iteration 0) followed by one record per completed
/// iteration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IterationTrace {
    pub records: Vec<IterationRecord>,
}

impl IterationTrace {
    pub fn iterations(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    pub fn flagged(&self) -> usize {
        self.records.iter().filter(|r| r.flagged).count()
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    /// First iteration whose state reaches `infidelity < threshold`.
    pub fn first_below(&self, threshold: f64) -> Option<usize> {
        self.records
            .iter()
            .find(|r| r.infidelity.is_some_and(|v| v < threshold))
            .map(|r| r.iter)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub theta: Vec<f64>,
    pub trace: IterationTrace,
    /// Residual norm below tolerance (CoVaR) or a stopping rule hit
    /// (baselines).
    pub converged: bool,
}

struct Clock {
    start: Instant,
    enabled: bool,
}

impl Clock {
    fn new(enabled: bool) -> Self {
        Clock {
            start: Instant::now(),
            enabled,
        }
    }

    fn ms(&self) -> f64 {
        if self.enabled {
            self.start.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        }
    }
}

pub(crate) fn initial_record(
    problem: &Problem<'_>,
    theta: &[f64],
    f_norm: f64,
) -> Result<IterationRecord> {
    Ok(IterationRecord::new(
        0,
        f_norm,
        0.0,
        0.0,
        problem.state_metrics(theta)?,
        false,
        0.0,
    ))
}

fn sample_constraints(
    pool: &[PauliString],
    n_c: usize,
    rng: &mut rng::Rng,
) -> Result<Vec<PauliString>> {
    if n_c > pool.len() {
        return Err(Error::PoolTooSmall {
            requested: n_c,
            available: pool.len(),
        });
    }
    Ok(index::sample(rng, pool.len(), n_c)
        .into_iter()
        .map(|i| pool[i])
        .collect())
}

fn add(theta: &[f64], step: &DVector<f64>, kappa: f64) -> Vec<f64> {
    theta
        .iter()
        .zip(step.iter())
        .map(|(t, d)| t + kappa * d)
        .collect()
}

const LINESEARCH: [f64; 5] = [1.0, 0.8, 0.6, 0.4, 0.2];

/// Runs CoVaR from `theta0`.
pub fn covar_iterate<P: ExpectationProvider + ?Sized>(
    provider: &P,
    problem: &Problem<'_>,
    theta0: &[f64],
    config: &LmConfig,
    seed: u64,
) -> Result<RunOutcome> {
    config.validate()?;
    let ansatz = problem.ansatz;
    if theta0.len() != ansatz.n_params() {
        return Err(Error::ParameterLength {
            expected: ansatz.n_params(),
            got: theta0.len(),
        });
    }
    let mut rng = rng::seeded(seed);
    let clock = Clock::new(problem.record_wall_time);
    let mut theta = theta0.to_vec();
    let mut constraints = sample_constraints(problem.pool, config.n_constraints, &mut rng)?;
    let mut trace = IterationTrace::default();
    let mut converged = false;

    for iter in 1..=config.max_iterations + 1 {
        if iter > 1 && config.resample_each_iteration {
            constraints = sample_constraints(problem.pool, config.n_constraints, &mut rng)?;
        }
        let plan = CovariancePlan::new(&constraints, problem.hamiltonian)?;
        let system = plan.system(provider, ansatz, &theta)?;
        let stacked = stack(&system);
        let f_norm = stacked.residual_norm();
        if iter == 1 {
            trace.records.push(initial_record(problem, &theta, f_norm)?);
        }
        if f_norm < config.convergence_tol {
            converged = true;
            break;
        }
        if iter > config.max_iterations {
            break;
        }

        let (judge, reference) = if config.fresh_acceptance_sample {
            let fresh = sample_constraints(problem.pool, config.n_constraints, &mut rng)?;
            let judge = CovariancePlan::new(&fresh, problem.hamiltonian)?;
            let reference = judge.evaluate(provider, ansatz, &theta)?.norm();
            (judge, reference)
        } else {
            (plan, f_norm)
        };
        let candidate_norm = |theta_c: &[f64]| -> Result<f64> {
            Ok(judge.evaluate(provider, ansatz, theta_c)?.norm())
        };

        let normal = NormalEquations::new(&stacked);
        let mut best: Option<(f64, f64, Vec<f64>, f64)> = None;
        let mut accepted = false;
        let mut lambda = config.lambda0;
        for _ in 0..=config.max_lambda_increases {
            let step = match normal.solve(lambda, config.regularizer, config.max_component_step) {
                Ok(step) => step,
                Err(Error::Singular) => {
                    lambda *= config.lambda_growth;
                    continue;
                }
                Err(e) => return Err(e),
            };
            if step.iter().all(|v| *v == 0.0) {
                best.get_or_insert((reference, lambda, theta.clone(), 0.0));
                break;
            }
            let kappas: &[f64] = if config.linesearch_enabled {
                &LINESEARCH
            } else {
                &LINESEARCH[..1]
            };
            for &kappa in kappas {
                let theta_c = add(&theta, &step, kappa);
                let norm_c = candidate_norm(&theta_c)?;
                if best.as_ref().is_none_or(|b| norm_c < b.0) {
                    best = Some((norm_c, lambda, theta_c, kappa * step.norm()));
                }
            }
            if best.as_ref().is_some_and(|b| b.0 < reference) {
                accepted = true;
                break;
            }
            lambda *= config.lambda_growth;
        }
        let (norm_after, lambda, theta_next, step_norm) = best.ok_or(Error::Singular)?;
        theta = theta_next;
        trace.records.push(IterationRecord::new(
            iter,
            norm_after,
            lambda,
            step_norm,
            problem.state_metrics(&theta)?,
            !accepted,
            clock.ms(),
        ));
    }
    Ok(RunOutcome {
        theta,
        trace,
        converged,
    })
}

/// Least-squares and per-constraint Newton estimates of where the root lies
/// along one disturbed parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct OverdeterminationEstimates {
    /// Offset from the root after the joint least-squares step.
    pub ls_estimate: f64,
    /// Offset after each single-constraint Newton step, for constraints with
    /// a usable derivative.
    pub newton_estimates: Vec<f64>,
    pub mean_newton: f64,
}

/// Disturbs `theta_star[index]` by `delta0` and compares the joint
/// least-squares root estimate with single-constraint Newton estimates, all
/// from exact covariances.
pub fn overdetermination_demo(
    ansatz: &Ansatz,
    theta_star: &[f64],
    index: usize,
    delta0: f64,
    constraints: &[PauliString],
    h: &HermitianOperator,
) -> Result<OverdeterminationEstimates> {
    if index >= ansatz.n_params() {
        return Err(Error::ParameterIndex {
            index,
            n_params: ansatz.n_params(),
        });
    }
    let mut theta = theta_star.to_vec();
    theta[index] += delta0;
    let system =
        CovariancePlan::new(constraints, h)?.system(&ExactProvider::new(), ansatz, &theta)?;
    let column = system.jacobian.column(index);
    let mut num = 0.0;
    let mut den = 0.0;
    let mut newton = Vec::new();
    for (f, j) in system.f.iter().zip(column.iter()) {
        let proj = (j.conj() * f).re;
        num += proj;
        den += j.norm_sqr();
        if j.norm() >= 1e-8 {
            newton.push(delta0 - proj / j.norm_sqr());
        }
    }
    if den == 0.0 || newton.is_empty() {
        if system.f.iter().all(|z| z.norm() < 1e-14) {
            return Ok(OverdeterminationEstimates {
                ls_estimate: delta0,
                newton_estimates: vec![delta0; constraints.len()],
                mean_newton: delta0,
            });
        }
        return Err(Error::Degenerate);
    }
    let mean_newton = newton.iter().sum::<f64>() / newton.len() as f64;
    Ok(OverdeterminationEstimates {
        ls_estimate: delta0 - num / den,
        newton_estimates: newton,
        mean_newton,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseFloorSettings {
    pub n_constraints: Vec<usize>,
    pub n_shots: Vec<u64>,
    pub n_noise_seeds: usize,
    pub lambda: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseFloorRow {
    pub n_constraints: usize,
    pub n_shots: u64,
    /// Root-mean-square over parameters of the per-parameter standard
    /// deviation of the noisy step around the exact step.
    pub step_error_std: f64,
    pub exact_step_norm: f64,
}

/// Spread of the first LM step under shot noise, for every combination of
/// constraint count and shot count. Steps are not clipped.
///
/// Directions along which the exact residual does not change at all (for
/// example two consecutive rotations about the same axis, where only the sum
/// of the angles matters) are projected out before measuring the error: the
/// state does not depend on them and their step components only reflect how
/// strongly `lambda` damps pure noise.
pub fn noise_floor_probe(
    problem: &Problem<'_>,
    theta: &[f64],
    settings: &NoiseFloorSettings,
) -> Result<Vec<NoiseFloorRow>> {
    if settings.n_noise_seeds < 2 {
        return Err(Error::InvalidArgument(
            "at least two noise seeds are needed".into(),
        ));
    }
    let mut rows = Vec::new();
    for (ci, &n_c) in settings.n_constraints.iter().enumerate() {
        let constraints = sample_constraints(
            problem.pool,
            n_c,
            &mut rng::stream(settings.seed, ci as u64),
        )?;
        let plan = CovariancePlan::new(&constraints, problem.hamiltonian)?;
        let step = |provider: &dyn ExpectationProvider| -> Result<DVector<f64>> {
            let system = plan.system(provider, problem.ansatz, theta)?;
            lm_step(
                &stack(&system),
                settings.lambda,
                Regularizer::Identity,
                f64::INFINITY,
            )
        };
        let exact_system = plan.system(&ExactProvider::new(), problem.ansatz, theta)?;
        let exact_normal = NormalEquations::new(&stack(&exact_system));
        let exact = exact_normal.solve(settings.lambda, Regularizer::Identity, f64::INFINITY)?;
        let projector = identifiable_projector(&exact_normal.matrix);
        for &n_shots in &settings.n_shots {
            let errors: Vec<DVector<f64>> = (0..settings.n_noise_seeds as u64)
                .map(|s| {
                    let config = ShotNoiseConfig::new(
                        n_shots,
                        rng::derive_seed(settings.seed, (ci as u64) << 32 | s),
                    )?;
                    let noisy = ShotNoiseProvider::new(ExactProvider::new(), config);
                    Ok(&projector * (step(&noisy)? - &exact))
                })
                .collect::<Result<_>>()?;
            let m = errors.len() as f64;
            let mean = errors
                .iter()
                .fold(DVector::zeros(exact.len()), |acc, e| acc + e)
                / m;
            let var = errors
                .iter()
                .map(|e| (e - &mean).map(|v| v * v))
                .fold(DVector::zeros(exact.len()), |acc, e| acc + e)
                / (m - 1.0);
            rows.push(NoiseFloorRow {
                n_constraints: n_c,
                n_shots,
                step_error_std: var.mean().sqrt(),
                exact_step_norm: exact.norm(),
            });
        }
    }
    Ok(rows)
}

/// Orthogonal projector onto eigenvectors of `J^T J` whose eigenvalue
/// exceeds `1e-9` of the largest.
fn identifiable_projector(normal: &DMatrix<f64>) -> DMatrix<f64> {
    let eigen = SymmetricEigen::new(normal.clone());
    let cutoff = eigen.eigenvalues.amax() * 1e-9;
    let n = normal.nrows();
    let mut projector = DMatrix::zeros(n, n);
    for (k, value) in eigen.eigenvalues.iter().enumerate() {
        if *value > cutoff {
            let v = eigen.eigenvectors.column(k);
            projector += v * v.transpose();
        }
    }
    projector
}
