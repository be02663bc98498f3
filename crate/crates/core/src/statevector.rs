//! Dense statevectors. Basis index bit `q` holds the value of qubit `q`.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::pauli::{PauliString, Phase};

/// Dense simulation limit.
pub const MAX_DENSE_QUBITS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct Statevector {
    n_qubits: usize,
    amplitudes: Vec<Complex64>,
}

impl Statevector {
    /// `|0...0>`.
    pub fn zero(n_qubits: usize) -> Result<Self> {
        Self::basis(n_qubits, 0)
    }

    pub fn basis(n_qubits: usize, index: usize) -> Result<Self> {
        check_dense(n_qubits)?;
        let dim = 1usize << n_qubits;
        if index >= dim {
            return Err(Error::InvalidArgument(format!(
                "basis index {index} out of range for {n_qubits} qubits"
            )));
        }
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); dim];
        amplitudes[index] = Complex64::new(1.0, 0.0);
        Ok(Statevector {
            n_qubits,
            amplitudes,
        })
    }

    /// Normalises the given amplitudes.
    pub fn from_amplitudes(amplitudes: Vec<Complex64>) -> Result<Self> {
        let dim = amplitudes.len();
        if dim < 2 || !dim.is_power_of_two() {
            return Err(Error::LengthMismatch(format!(
                "amplitude count {dim} is not a power of two >= 2"
            )));
        }
        let n_qubits = dim.trailing_zeros() as usize;
        check_dense(n_qubits)?;
        let mut state = Statevector {
            n_qubits,
            amplitudes,
        };
        let norm = state.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::InvalidArgument("zero or non-finite state".into()));
        }
        state.amplitudes.iter_mut().for_each(|a| *a /= norm);
        Ok(state)
    }

    /// Wraps amplitudes without normalising (e.g. `H|psi>`).
    pub(crate) fn from_raw(n_qubits: usize, amplitudes: Vec<Complex64>) -> Self {
        debug_assert_eq!(amplitudes.len(), 1 << n_qubits);
        Statevector {
            n_qubits,
            amplitudes,
        }
    }

    /// Normalised vector of independent complex Gaussian amplitudes
    /// (Haar-distributed).
    pub fn random<R: rand::Rng + ?Sized>(n_qubits: usize, rng: &mut R) -> Result<Self> {
        check_dense(n_qubits)?;
        let normal = rand_distr::StandardNormal;
        let amplitudes = (0..1usize << n_qubits)
            .map(|_| Complex64::new(rng.sample(normal), rng.sample(normal)))
            .collect();
        Self::from_amplitudes(amplitudes)
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn amplitudes_mut(&mut self) -> &mut [Complex64] {
        &mut self.amplitudes
    }

    pub fn into_amplitudes(self) -> Vec<Complex64> {
        self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes
            .iter()
            .map(|a| a.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn inner(&self, other: &Statevector) -> Result<Complex64> {
        self.check_dim(other)?;
        Ok(self
            .amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    /// `exp(-i angle P / 2)`.
    pub fn apply_pauli_rotation(&mut self, p: &PauliString, angle: f64) {
        debug_assert_eq!(p.n_qubits(), self.n_qubits);
        let (s, c) = (angle / 2.0).sin_cos();
        let minus_i_s = Complex64::new(0.0, -s);
        let x = p.x_mask() as usize;
        let z = p.z_mask();
        let y_power = p.y_count();
        let phase = |i: usize| Phase::from_power(y_power + 2 * (i as u64 & z).count_ones());
        if x == 0 {
            for (i, a) in self.amplitudes.iter_mut().enumerate() {
                *a *= c + minus_i_s * phase(i).to_complex();
            }
            return;
        }
        let pivot = 1usize << (usize::BITS - 1 - x.leading_zeros());
        for i in 0..self.amplitudes.len() {
            if i & pivot != 0 {
                continue;
            }
            let j = i ^ x;
            let (a, b) = (self.amplitudes[i], self.amplitudes[j]);
            // P|i> = phase(i)|j>, P|j> = phase(j)|i>
            self.amplitudes[i] = a * c + minus_i_s * phase(j).to_complex() * b;
            self.amplitudes[j] = b * c + minus_i_s * phase(i).to_complex() * a;
        }
    }

    /// Multiplies by a Pauli string in place.
    pub fn apply_pauli(&mut self, p: &PauliString) {
        let x = p.x_mask() as usize;
        let mut out = vec![Complex64::new(0.0, 0.0); self.amplitudes.len()];
        for (i, a) in self.amplitudes.iter().enumerate() {
            let (j, amp) = p.apply_to_basis(i);
            debug_assert_eq!(j, i ^ x);
            out[j] = amp * a;
        }
        self.amplitudes = out;
    }

    pub fn apply_cz(&mut self, a: usize, b: usize) {
        let mask = (1usize << a) | (1usize << b);
        for (i, amp) in self.amplitudes.iter_mut().enumerate() {
            if i & mask == mask {
                *amp = -*amp;
            }
        }
    }

    pub fn apply_hadamard(&mut self, q: usize) {
        let bit = 1usize << q;
        let r = std::f64::consts::FRAC_1_SQRT_2;
        for i in 0..self.amplitudes.len() {
            if i & bit == 0 {
                let (a, b) = (self.amplitudes[i], self.amplitudes[i | bit]);
                self.amplitudes[i] = (a + b) * r;
                self.amplitudes[i | bit] = (a - b) * r;
            }
        }
    }

    /// `S^dagger = diag(1, -i)`.
    pub fn apply_sdg(&mut self, q: usize) {
        let bit = 1usize << q;
        for (i, amp) in self.amplitudes.iter_mut().enumerate() {
            if i & bit != 0 {
                *amp *= Complex64::new(0.0, -1.0);
            }
        }
    }

    pub fn apply_x(&mut self, q: usize) {
        let bit = 1usize << q;
        for i in 0..self.amplitudes.len() {
            if i & bit == 0 {
                self.amplitudes.swap(i, i | bit);
            }
        }
    }

    /// `<psi|P|psi>` (real for Hermitian strings).
    pub fn pauli_expectation(&self, p: &PauliString) -> f64 {
        debug_assert_eq!(p.n_qubits(), self.n_qubits);
        let x = p.x_mask() as usize;
        let z = p.z_mask();
        let y_power = p.y_count();
        let mut acc = Complex64::new(0.0, 0.0);
        for (i, a) in self.amplitudes.iter().enumerate() {
            let phase = Phase::from_power(y_power + 2 * (i as u64 & z).count_ones());
            acc += self.amplitudes[i ^ x].conj() * phase.to_complex() * a;
        }
        debug_assert!(acc.im.abs() < 1e-10, "imaginary residual {}", acc.im);
        acc.re
    }

    /// `|<reference|psi>|^2`.
    pub fn fidelity(&self, reference: &Statevector) -> Result<f64> {
        Ok(reference.inner(self)?.norm_sqr())
    }

    /// Largest basis-state population and its index (lowest index on ties).
    pub fn fidelity_max_basis(&self) -> (f64, usize) {
        let mut best = (f64::NEG_INFINITY, 0);
        for (i, a) in self.amplitudes.iter().enumerate() {
            let p = a.norm_sqr();
            if p > best.0 {
                best = (p, i);
            }
        }
        best
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }

    fn check_dim(&self, other: &Statevector) -> Result<()> {
        if self.n_qubits != other.n_qubits {
            return Err(Error::QubitMismatch {
                left: self.n_qubits,
                right: other.n_qubits,
            });
        }
        Ok(())
    }
}

fn check_dense(n_qubits: usize) -> Result<()> {
    if n_qubits == 0 {
        return Err(Error::QubitCount(0));
    }
    if n_qubits > MAX_DENSE_QUBITS {
        return Err(Error::TooLarge {
            n_qubits,
            limit: MAX_DENSE_QUBITS,
        });
    }
    Ok(())
}
