//! Real linear combinations of Pauli strings and a dense diagonalisation oracle.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::pauli::PauliString;
use crate::statevector::Statevector;

/// Largest system handed to the dense eigensolver.
pub const MAX_EIGEN_QUBITS: usize = 12;

/// `H = sum_a h_a P_a` with real coefficients and distinct strings.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianOperator {
    n_qubits: usize,
    terms: Vec<(f64, PauliString)>,
}

impl HermitianOperator {
    pub fn new(n_qubits: usize, terms: Vec<(f64, PauliString)>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::Empty("operator terms"));
        }
        let mut seen = HashSet::with_capacity(terms.len());
        for (coeff, p) in &terms {
            if !coeff.is_finite() {
                return Err(Error::InvalidOperator(format!(
                    "coefficient {coeff} on {p}"
                )));
            }
            if p.n_qubits() != n_qubits {
                return Err(Error::QubitMismatch {
                    left: n_qubits,
                    right: p.n_qubits(),
                });
            }
            if !seen.insert(*p) {
                return Err(Error::InvalidOperator(format!("repeated term {p}")));
            }
        }
        Ok(HermitianOperator { n_qubits, terms })
    }

    /// Random `locality`-local operator with `n_terms` distinct strings and
    /// coefficients uniform in [-1, 1].
    pub fn random<R: rand::Rng + ?Sized>(
        n_qubits: usize,
        locality: usize,
        n_terms: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let pool = crate::pauli::OperatorPool::enumerate(n_qubits, locality)?;
        let strings = pool.sample(n_terms, rng)?;
        let terms = strings
            .into_iter()
            .map(|p| (rng.random_range(-1.0..=1.0), p))
            .collect();
        Self::new(n_qubits, terms)
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn terms(&self) -> &[(f64, PauliString)] {
        &self.terms
    }

    pub fn strings(&self) -> Vec<PauliString> {
        self.terms.iter().map(|(_, p)| *p).collect()
    }

    pub fn coefficients(&self) -> Vec<f64> {
        self.terms.iter().map(|(c, _)| *c).collect()
    }

    pub fn expectation(&self, state: &Statevector) -> Result<f64> {
        self.check_state(state)?;
        Ok(self
            .terms
            .iter()
            .map(|(c, p)| c * state.pauli_expectation(p))
            .sum())
    }

    /// `H|psi>` (unnormalised).
    pub fn apply(&self, state: &Statevector) -> Result<Vec<Complex64>> {
        self.check_state(state)?;
        let mut out = vec![Complex64::new(0.0, 0.0); state.dim()];
        for (c, p) in &self.terms {
            for (i, a) in state.amplitudes().iter().enumerate() {
                let (j, amp) = p.apply_to_basis(i);
                out[j] += amp * a * *c;
            }
        }
        Ok(out)
    }

    /// `<H^2> - <H>^2` from the dense action of `H`.
    pub fn variance(&self, state: &Statevector) -> Result<f64> {
        let h_psi = self.apply(state)?;
        let mean: Complex64 = state
            .amplitudes()
            .iter()
            .zip(&h_psi)
            .map(|(a, b)| a.conj() * b)
            .sum();
        let second: f64 = h_psi.iter().map(|b| b.norm_sqr()).sum();
        Ok(second - mean.re * mean.re)
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let dim = 1usize << self.n_qubits;
        let mut m = DMatrix::zeros(dim, dim);
        for (c, p) in &self.terms {
            for col in 0..dim {
                let (row, amp) = p.apply_to_basis(col);
                m[(row, col)] += amp * *c;
            }
        }
        m
    }

    fn check_state(&self, state: &Statevector) -> Result<()> {
        if state.n_qubits() != self.n_qubits {
            return Err(Error::QubitMismatch {
                left: self.n_qubits,
                right: state.n_qubits(),
            });
        }
        Ok(())
    }
}

/// Full spectrum of a Hermitian operator, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct Eigensystem {
    pub eigenvalues: Vec<f64>,
    /// Column `k` is the eigenvector of `eigenvalues[k]`.
    pub eigenvectors: DMatrix<Complex64>,
}

impl Eigensystem {
    pub fn ground_energy(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn state(&self, k: usize) -> Result<Statevector> {
        Statevector::from_amplitudes(self.eigenvectors.column(k).iter().copied().collect())
    }

    /// Index of the eigenvalue closest to `energy`.
    pub fn nearest(&self, energy: f64) -> (usize, f64) {
        self.eigenvalues
            .iter()
            .enumerate()
            .map(|(k, e)| (k, (e - energy).abs()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("non-empty spectrum")
    }
}

pub fn exact_eigensystem(op: &HermitianOperator) -> Result<Eigensystem> {
    if op.n_qubits() > MAX_EIGEN_QUBITS {
        return Err(Error::TooLarge {
            n_qubits: op.n_qubits(),
            limit: MAX_EIGEN_QUBITS,
        });
    }
    let dense = op.to_dense();
    let dim = dense.nrows();
    let (values, vectors) = if dense.iter().all(|z| z.im == 0.0) {
        let real = dense.map(|z| z.re);
        let eig = real.symmetric_eigen();
        (
            eig.eigenvalues,
            eig.eigenvectors.map(|v| Complex64::new(v, 0.0)),
        )
    } else {
        let eig = dense.symmetric_eigen();
        (eig.eigenvalues, eig.eigenvectors)
    };
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let eigenvalues = order.iter().map(|&k| values[k]).collect();
    let eigenvectors = DMatrix::from_fn(dim, dim, |i, j| vectors[(i, order[j])]);
    Ok(Eigensystem {
        eigenvalues,
        eigenvectors,
    })
}

/// `||H v_k - lambda_k v_k||` for every eigenpair.
pub fn eigen_residuals(op: &HermitianOperator, eig: &Eigensystem) -> Vec<f64> {
    let dense = op.to_dense();
    (0..eig.eigenvalues.len())
        .map(|k| {
            let v: DVector<Complex64> = eig.eigenvectors.column(k).into_owned();
            (&dense * &v - &v * Complex64::new(eig.eigenvalues[k], 0.0)).norm()
        })
        .collect()
}
