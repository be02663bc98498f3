//! Reference optimisers: gradient descent on the energy or the variance, and
//! natural-gradient (imaginary-time) descent.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::circuit::Ansatz;
use crate::covariance::CovariancePlan;
use crate::error::{Error, Result};
use crate::operator::HermitianOperator;
use crate::pauli::PauliString;
use crate::provider::{ExactProvider, ExpectationProvider};
use crate::solver::{initial_record, IterationRecord, IterationTrace, Problem, RunOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GdTarget {
    #[default]
    Energy,
    Variance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GdConfig {
    pub learning_rate: f64,
    pub max_iterations: usize,
    pub target: GdTarget,
    /// Stop once an iteration lowers the energy by less than this.
    pub stall_threshold: Option<f64>,
    /// Stop once the recompilation infidelity drops below this.
    pub stop_infidelity: Option<f64>,
}

impl GdConfig {
    pub fn new(target: GdTarget, max_iterations: usize) -> Self {
        GdConfig {
            learning_rate: 0.1,
            max_iterations,
            target,
            stall_threshold: None,
            stop_infidelity: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NatGradConfig {
    pub learning_rate: f64,
    /// Eigenvalues of the metric below `tolerance * largest` are dropped from
    /// the pseudo-inverse.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub stop_energy: Option<f64>,
}

impl NatGradConfig {
    pub fn new(max_iterations: usize) -> Self {
        NatGradConfig {
            learning_rate: 0.05,
            tolerance: 1e-6,
            max_iterations,
            stop_energy: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tolerance must be > 0, got {}",
                self.tolerance
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Baseline {
    GradientDescent(GdConfig),
    NaturalGradient(NatGradConfig),
}

/// Non-identity strings of `h` with their coefficients, and the constant
/// offset carried by identity terms.
fn split_identity(h: &HermitianOperator) -> (Vec<PauliString>, Vec<f64>, f64) {
    let mut strings = Vec::new();
    let mut coeffs = Vec::new();
    let mut offset = 0.0;
    for (c, p) in h.terms() {
        if p.is_identity() {
            offset += c;
        } else {
            strings.push(*p);
            coeffs.push(*c);
        }
    }
    (strings, coeffs, offset)
}

/// `d<H>/d theta_n` from `2 nu` shifted circuits in one provider batch.
pub fn energy_gradient<P: ExpectationProvider + ?Sized>(
    provider: &P,
    ansatz: &Ansatz,
    theta: &[f64],
    h: &HermitianOperator,
) -> Result<Vec<f64>> {
    let (strings, coeffs, _) = split_identity(h);
    let n_params = ansatz.n_params();
    if strings.is_empty() {
        ansatz.bind(theta)?;
        return Ok(vec![0.0; n_params]);
    }
    let base = ansatz.bind(theta)?;
    let mut points = Vec::new();
    let mut owners = Vec::new();
    for n in 0..n_params {
        for &(gate, scale) in ansatz.occurrences(n)? {
            points.push(base.shifted(gate, FRAC_PI_2));
            points.push(base.shifted(gate, -FRAC_PI_2));
            owners.push((n, scale));
        }
    }
    let values = provider.estimate_batch(&points, &strings)?;
    let energy = |row: &[f64]| -> f64 { row.iter().zip(&coeffs).map(|(v, c)| v * c).sum() };
    let mut grad = vec![0.0; n_params];
    for (i, (n, scale)) in owners.into_iter().enumerate() {
        grad[n] += scale * 0.5 * (energy(&values[2 * i]) - energy(&values[2 * i + 1]));
    }
    Ok(grad)
}

/// `d Var[H] / d theta_n = Re sum_a h_a J_an` with the Hamiltonian's own
/// terms as constraints.
pub fn variance_gradient<P: ExpectationProvider + ?Sized>(
    provider: &P,
    ansatz: &Ansatz,
    theta: &[f64],
    h: &HermitianOperator,
) -> Result<Vec<f64>> {
    let (strings, coeffs, _) = split_identity(h);
    if strings.is_empty() {
        ansatz.bind(theta)?;
        return Ok(vec![0.0; ansatz.n_params()]);
    }
    let system = CovariancePlan::new(&strings, h)?.system(provider, ansatz, theta)?;
    let weights =
        DVector::from_iterator(coeffs.len(), coeffs.iter().map(|c| Complex64::new(*c, 0.0)));
    Ok(system
        .jacobian
        .tr_mul(&weights)
        .iter()
        .map(|z| z.re)
        .collect())
}

/// `F_ij = Re(<d_i psi|d_j psi> - <d_i psi|psi><psi|d_j psi>)`.
pub fn quantum_fisher(ansatz: &Ansatz, theta: &[f64]) -> Result<DMatrix<f64>> {
    let bound = ansatz.bind(theta)?;
    let psi = bound.prepare()?;
    let derivs = bound.state_derivatives()?;
    Ok(fisher_from(psi.amplitudes(), &derivs))
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn fisher_from(psi: &[Complex64], derivs: &[Vec<Complex64>]) -> DMatrix<f64> {
    let n = derivs.len();
    let overlaps: Vec<Complex64> = derivs.iter().map(|d| dot(d, psi)).collect();
    let mut f = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = (dot(&derivs[i], &derivs[j]) - overlaps[i] * overlaps[j].conj()).re;
            f[(i, j)] = v;
            f[(j, i)] = v;
        }
    }
    f
}

/// `theta - eta F^+ grad E` from exact state derivatives.
pub fn natural_gradient_step(
    ansatz: &Ansatz,
    theta: &[f64],
    h: &HermitianOperator,
    config: &NatGradConfig,
) -> Result<Vec<f64>> {
    config.validate()?;
    let bound = ansatz.bind(theta)?;
    let psi = bound.prepare()?;
    let derivs = bound.state_derivatives()?;
    let h_psi = h.apply(&psi)?;
    let grad = DVector::from_iterator(derivs.len(), derivs.iter().map(|d| 2.0 * dot(d, &h_psi).re));
    let fisher = fisher_from(psi.amplitudes(), &derivs);
    let eigen = SymmetricEigen::new(fisher);
    let largest = eigen.eigenvalues.max();
    if largest <= 0.0 {
        return Ok(theta.to_vec());
    }
    let cutoff = config.tolerance * largest;
    let projected = eigen.eigenvectors.tr_mul(&grad);
    let scaled = DVector::from_iterator(
        projected.len(),
        projected
            .iter()
            .zip(eigen.eigenvalues.iter())
            .map(|(g, l)| if *l > cutoff { g / l } else { 0.0 }),
    );
    let direction = &eigen.eigenvectors * scaled;
    Ok(theta
        .iter()
        .zip(direction.iter())
        .map(|(t, d)| t - config.learning_rate * d)
        .collect())
}

/// Residual norm of the covariances against the Hamiltonian's own terms,
/// from the noiseless state.
fn exact_residual(
    problem: &Problem<'_>,
    plan: Option<&CovariancePlan>,
    theta: &[f64],
) -> Result<f64> {
    match plan {
        Some(plan) => Ok(plan
            .evaluate(&ExactProvider::new(), problem.ansatz, theta)?
            .norm()),
        None => Ok(0.0),
    }
}

/// Iterates a baseline update from `theta0`. The provider supplies gradient
/// estimates; the recorded residual, energy and infidelities come from the
/// noiseless state.
pub fn run_baseline<P: ExpectationProvider + ?Sized>(
    baseline: &Baseline,
    provider: &P,
    problem: &Problem<'_>,
    theta0: &[f64],
) -> Result<RunOutcome> {
    let ansatz = problem.ansatz;
    let h = problem.hamiltonian;
    if theta0.len() != ansatz.n_params() {
        return Err(Error::ParameterLength {
            expected: ansatz.n_params(),
            got: theta0.len(),
        });
    }
    let (strings, _, _) = split_identity(h);
    let plan = if strings.is_empty() {
        None
    } else {
        Some(CovariancePlan::new(&strings, h)?)
    };
    let start = std::time::Instant::now();
    let ms = || {
        if problem.record_wall_time {
            start.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        }
    };
    let mut theta = theta0.to_vec();
    let mut trace = IterationTrace::default();
    trace.records.push(initial_record(
        problem,
        &theta,
        exact_residual(problem, plan.as_ref(), &theta)?,
    )?);
    let max_iterations = match baseline {
        Baseline::GradientDescent(c) => {
            c.validate()?;
            c.max_iterations
        }
        Baseline::NaturalGradient(c) => {
            c.validate()?;
            c.max_iterations
        }
    };
    let mut converged = stop_now(baseline, trace.records[0], None);
    let mut iter = 0;
    while !converged && iter < max_iterations {
        iter += 1;
        let next = match baseline {
            Baseline::GradientDescent(c) => {
                let grad = match c.target {
                    GdTarget::Energy => energy_gradient(provider, ansatz, &theta, h)?,
                    GdTarget::Variance => variance_gradient(provider, ansatz, &theta, h)?,
                };
                theta
                    .iter()
                    .zip(&grad)
                    .map(|(t, g)| t - c.learning_rate * g)
                    .collect::<Vec<_>>()
            }
            Baseline::NaturalGradient(c) => natural_gradient_step(ansatz, &theta, h, c)?,
        };
        let step_norm = next
            .iter()
            .zip(&theta)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        theta = next;
        let record = IterationRecord::new(
            iter,
            exact_residual(problem, plan.as_ref(), &theta)?,
            0.0,
            step_norm,
            problem.state_metrics(&theta)?,
            false,
            ms(),
        );
        let previous = *trace.records.last().expect("initial record");
        trace.records.push(record);
        converged = stop_now(baseline, record, Some(previous));
    }
    Ok(RunOutcome {
        theta,
        trace,
        converged,
    })
}

fn stop_now(
    baseline: &Baseline,
    record: IterationRecord,
    previous: Option<IterationRecord>,
) -> bool {
    match baseline {
        Baseline::GradientDescent(c) => {
            let stalled = match (c.stall_threshold, previous) {
                (Some(t), Some(p)) => p.energy - record.energy < t,
                _ => false,
            };
            let reached = match (c.stop_infidelity, record.infidelity) {
                (Some(t), Some(v)) => v < t,
                _ => false,
            };
            stalled || reached
        }
        Baseline::NaturalGradient(c) => c.stop_energy.is_some_and(|e| record.energy <= e),
    }
}
