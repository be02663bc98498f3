//! Benchmark problems: circuit recompilation and a Heisenberg ring with
//! random on-site fields.

use std::f64::consts::PI;

use rand::Rng;

use crate::circuit::{build_hea, Ansatz};
use crate::error::{Error, Result};
use crate::operator::HermitianOperator;
use crate::pauli::{Letter, PauliString};
use crate::rng;
use crate::statevector::Statevector;

/// Rediscovering hidden parameters `theta*` of a known circuit.
///
/// The circuit that is actually optimised is `U(theta)^dagger U(theta*)`:
/// the hidden circuit with frozen angles followed by the inverse ansatz.
/// It prepares `|0...0>`, the ground state of `-sum_j Z_j`, exactly at
/// `theta = theta*`; its fidelity to `|0...0>` equals
/// `|<psi(theta)|psi(theta*)>|^2`.
#[derive(Debug, Clone)]
pub struct RecompilationTask {
    pub ansatz: Ansatz,
    pub hidden_params: Vec<f64>,
    pub perturbation_scale: f64,
    pub hamiltonian: HermitianOperator,
    /// `{Z_j}` together with every `Z_j Z_k`.
    pub commuting_pool: Vec<PauliString>,
    circuit: Ansatz,
}

impl RecompilationTask {
    /// The composite circuit `U(theta)^dagger U(theta*)`.
    pub fn circuit(&self) -> &Ansatz {
        &self.circuit
    }

    pub fn n_qubits(&self) -> usize {
        self.ansatz.n_qubits()
    }

    pub fn target_state(&self) -> Result<Statevector> {
        self.ansatz.prepare(&self.hidden_params)
    }
}

/// Builds a recompilation task on a hardware-efficient ansatz and a start
/// point `theta* + delta` with `|delta_k| <= perturb`.
pub fn make_recompilation(
    n_qubits: usize,
    n_layers: usize,
    seed: u64,
    perturb: f64,
) -> Result<(RecompilationTask, Vec<f64>)> {
    if !(perturb >= 0.0 && perturb.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "perturbation must be >= 0, got {perturb}"
        )));
    }
    let ansatz = build_hea(n_qubits, n_layers)?;
    let mut rng = rng::seeded(seed);
    let hidden: Vec<f64> = (0..ansatz.n_params())
        .map(|_| rng.random_range(-2.0 * PI..=2.0 * PI))
        .collect();
    let theta_init: Vec<f64> = hidden
        .iter()
        .map(|t| {
            if perturb == 0.0 {
                *t
            } else {
                t + rng.random_range(-perturb..=perturb)
            }
        })
        .collect();
    let circuit = ansatz.frozen(&hidden)?.then(&ansatz.inverse())?;
    let hamiltonian = HermitianOperator::new(
        n_qubits,
        (0..n_qubits)
            .map(|j| Ok((-1.0, PauliString::single(n_qubits, j, Letter::Z)?)))
            .collect::<Result<_>>()?,
    )?;
    let mut commuting_pool = Vec::new();
    for j in 0..n_qubits {
        commuting_pool.push(PauliString::single(n_qubits, j, Letter::Z)?);
    }
    for j in 0..n_qubits {
        for k in j + 1..n_qubits {
            commuting_pool.push(PauliString::on(n_qubits, &[j, k], Letter::Z)?);
        }
    }
    Ok((
        RecompilationTask {
            ansatz,
            hidden_params: hidden,
            perturbation_scale: perturb,
            hamiltonian,
            commuting_pool,
            circuit,
        },
        theta_init,
    ))
}

/// `J sum_i (X_i X_{i+1} + Y_i Y_{i+1} + Z_i Z_{i+1}) + sum_i c_i Z_i` on a
/// periodic ring.
#[derive(Debug, Clone)]
pub struct SpinRingTask {
    pub n_qubits: usize,
    pub coupling: f64,
    pub onsite: Vec<f64>,
    pub hamiltonian: HermitianOperator,
}

pub fn make_spin_ring(n_qubits: usize, coupling: f64, seed: u64) -> Result<SpinRingTask> {
    if n_qubits < 3 {
        return Err(Error::InvalidArgument(format!(
            "a ring needs at least 3 qubits, got {n_qubits}"
        )));
    }
    if !coupling.is_finite() {
        return Err(Error::InvalidArgument("coupling must be finite".into()));
    }
    let mut rng = rng::seeded(seed);
    let onsite: Vec<f64> = (0..n_qubits)
        .map(|_| rng.random_range(-1.0..=1.0))
        .collect();
    let mut terms = Vec::with_capacity(4 * n_qubits);
    for i in 0..n_qubits {
        let j = (i + 1) % n_qubits;
        for letter in [Letter::X, Letter::Y, Letter::Z] {
            terms.push((coupling, PauliString::on(n_qubits, &[i, j], letter)?));
        }
    }
    for (i, c) in onsite.iter().enumerate() {
        terms.push((*c, PauliString::single(n_qubits, i, Letter::Z)?));
    }
    Ok(SpinRingTask {
        n_qubits,
        coupling,
        onsite,
        hamiltonian: HermitianOperator::new(n_qubits, terms)?,
    })
}

/// `(1 - |<0...0|psi>|^2, 1 - max_n |<n|psi>|^2)`, each summed over the
/// remaining basis populations so that tiny infidelities keep their
/// relative precision.
pub fn recompilation_metrics(state: &Statevector) -> (f64, f64) {
    let (_, best) = state.fidelity_max_basis();
    let total = state.norm().powi(2);
    let outside = |skip: usize| -> f64 {
        let rest: f64 = state
            .amplitudes()
            .iter()
            .enumerate()
            .filter(|(n, _)| *n != skip)
            .map(|(_, a)| a.norm_sqr())
            .sum();
        rest / total
    };
    (outside(0), outside(best))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{eigen_residuals, exact_eigensystem};
    use num_complex::Complex64;

    #[test]
    fn unperturbed_start_is_the_solution() {
        let (task, theta) = make_recompilation(4, 1, 3, 0.0).unwrap();
        assert_eq!(theta, task.hidden_params);
        let state = task.circuit().prepare(&theta).unwrap();
        let (inf, inf_max) = recompilation_metrics(&state);
        assert!(inf < 1e-12 && inf_max < 1e-12);
    }

    #[test]
    fn recompilation_is_deterministic_and_bounded() {
        let (a, ta) = make_recompilation(3, 2, 17, 0.3).unwrap();
        let (b, tb) = make_recompilation(3, 2, 17, 0.3).unwrap();
        assert_eq!(a.hidden_params, b.hidden_params);
        assert_eq!(ta, tb);
        assert!(a.hidden_params.iter().all(|t| t.abs() <= 2.0 * PI));
        assert!(ta
            .iter()
            .zip(&a.hidden_params)
            .all(|(x, y)| (x - y).abs() <= 0.3));
        assert!(a.hamiltonian.terms().iter().all(|(c, p)| *c == -1.0
            && p.weight() == 1
            && p.letter(p.support().trailing_zeros() as usize) == Letter::Z));
        assert_eq!(a.commuting_pool.len(), 3 + 3);
        assert!(make_recompilation(3, 1, 0, -0.1).is_err());
    }

    #[test]
    fn perturbed_fidelity_is_fractional() {
        let mut total = 0.0;
        for seed in 0..20 {
            let (task, theta) = make_recompilation(6, 2, seed, 0.3).unwrap();
            let state = task.circuit().prepare(&theta).unwrap();
            let direct = state.amplitudes()[0].norm_sqr();
            let overlap = task
                .ansatz
                .prepare(&theta)
                .unwrap()
                .fidelity(&task.target_state().unwrap())
                .unwrap();
            assert!((direct - overlap).abs() < 1e-12);
            total += direct;
        }
        let mean = total / 20.0;
        assert!(mean > 0.0 && mean < 1.0, "{mean}");
    }

    #[test]
    fn spin_ring_structure() {
        let ring = make_spin_ring(4, 0.1, 5).unwrap();
        let terms = ring.hamiltonian.terms();
        assert_eq!(terms.iter().filter(|(_, p)| p.weight() == 2).count(), 12);
        assert_eq!(terms.iter().filter(|(_, p)| p.weight() == 1).count(), 4);
        assert!(ring.onsite.iter().all(|c| c.abs() <= 1.0));
        assert!(make_spin_ring(2, 0.1, 0).is_err());
        let dense = ring.hamiltonian.to_dense();
        assert!(dense.trace().norm() < 1e-12);
        assert!((&dense - dense.adjoint()).iter().all(|z| z.norm() < 1e-15));
    }

    #[test]
    fn decoupled_ring_has_basis_ground_state() {
        let ring = make_spin_ring(4, 0.0, 9).unwrap();
        let eig = exact_eigensystem(&ring.hamiltonian).unwrap();
        let (pop, _) = eig.state(0).unwrap().fidelity_max_basis();
        assert!((pop - 1.0).abs() < 1e-12);
        let expected: f64 = ring.onsite.iter().map(|c| -c.abs()).sum();
        assert!((eig.ground_energy() - expected).abs() < 1e-12);
    }

    #[test]
    fn ring_spectrum_residuals() {
        let ring = make_spin_ring(4, 0.1, 5).unwrap();
        let eig = exact_eigensystem(&ring.hamiltonian).unwrap();
        assert!(eigen_residuals(&ring.hamiltonian, &eig)
            .iter()
            .all(|r| *r < 1e-9));
        // Ground energy via the Rayleigh quotient of the returned vector.
        let e = ring
            .hamiltonian
            .expectation(&eig.state(0).unwrap())
            .unwrap();
        assert!((e - eig.ground_energy()).abs() < 1e-10);
    }

    #[test]
    fn metrics_examples() {
        let zero = Statevector::zero(2).unwrap();
        assert_eq!(recompilation_metrics(&zero), (0.0, 0.0));
        let flipped = Statevector::basis(2, 1).unwrap();
        assert_eq!(recompilation_metrics(&flipped), (1.0, 0.0));
        let uniform = Statevector::from_amplitudes(vec![Complex64::new(1.0, 0.0); 4]).unwrap();
        let (a, b) = recompilation_metrics(&uniform);
        assert!((a - 0.75).abs() < 1e-15 && (b - 0.75).abs() < 1e-15);
    }
}
