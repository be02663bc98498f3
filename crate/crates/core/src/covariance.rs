//! Covariance functions `f_k(theta) = <O_k H> - <O_k><H>` and their Jacobian.
//!
//! Each product `O_k H_a` splits into a Hermitian symmetric part `P_ka` and
//! antisymmetric part `Q_ka` with `O_k H_a = P_ka + i Q_ka`, exactly one of
//! which is non-zero. Hence
//!
//! ```text
//! f_k = sum_a h_a ( <P_ka> + i <Q_ka> - <H_a><O_k> )
//! ```
//!
//! needs only Pauli expectation values. A [`CovariancePlan`] collects the
//! distinct strings required by a constraint set once, so a provider is
//! queried a single time per circuit point no matter how many constraints
//! share a string. Derivatives use the two-term shift rule, one pair of
//! shifted points per rotation gate: `2 nu + 1` points for the full system
//! when every parameter drives a single gate.

use std::collections::HashMap;
use std::f64::consts::FRAC_PI_2;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::circuit::{Ansatz, BoundCircuit};
use crate::error::{Error, Result};
use crate::operator::{HermitianOperator, MAX_EIGEN_QUBITS};
use crate::pauli::PauliString;
use crate::provider::ExpectationProvider;
use crate::statevector::Statevector;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Slot {
    Identity,
    At(usize),
}

impl Slot {
    fn read(self, values: &[f64]) -> f64 {
        match self {
            Slot::Identity => 1.0,
            Slot::At(i) => values[i],
        }
    }

    fn read_derivative(self, derivs: &[f64]) -> f64 {
        match self {
            Slot::Identity => 0.0,
            Slot::At(i) => derivs[i],
        }
    }
}

#[derive(Debug, Clone)]
struct Term {
    /// `h_a` times the sign of `P_ka` or `Q_ka`.
    coeff: f64,
    slot: Slot,
    imaginary: bool,
}

#[derive(Debug, Clone)]
struct Row {
    constraint: Slot,
    terms: Vec<Term>,
}

/// Pauli strings needed for a fixed constraint set and Hamiltonian, and the
/// recipe that turns their expectations into covariances.
#[derive(Debug, Clone)]
pub struct CovariancePlan {
    constraints: Vec<PauliString>,
    coefficients: Vec<f64>,
    strings: Vec<PauliString>,
    hamiltonian_slots: Vec<Slot>,
    rows: Vec<Row>,
}

impl CovariancePlan {
    pub fn new(constraints: &[PauliString], h: &HermitianOperator) -> Result<Self> {
        if constraints.is_empty() {
            return Err(Error::Empty("constraints"));
        }
        let mut index: HashMap<PauliString, usize> = HashMap::new();
        let mut strings = Vec::new();
        let mut slot_of = |p: PauliString| {
            if p.is_identity() {
                return Slot::Identity;
            }
            Slot::At(*index.entry(p).or_insert_with(|| {
                strings.push(p);
                strings.len() - 1
            }))
        };
        let hamiltonian_slots: Vec<Slot> = h.terms().iter().map(|(_, p)| slot_of(*p)).collect();
        let mut rows = Vec::with_capacity(constraints.len());
        for o in constraints {
            if o.n_qubits() != h.n_qubits() {
                return Err(Error::QubitMismatch {
                    left: h.n_qubits(),
                    right: o.n_qubits(),
                });
            }
            if o.is_identity() {
                return Err(Error::IdentityString);
            }
            let constraint = slot_of(*o);
            let mut terms = Vec::with_capacity(h.terms().len());
            for (coeff, h_a) in h.terms() {
                let (sym, anti) = o.symmetrized_products(h_a)?;
                let (part, imaginary) = match (sym, anti) {
                    (Some(p), None) => (p, false),
                    (None, Some(q)) => (q, true),
                    _ => unreachable!("exactly one symmetrised part is present"),
                };
                let sign = part
                    .phase
                    .real_sign()
                    .expect("Hermitian parts carry real phases");
                terms.push(Term {
                    coeff: coeff * sign,
                    slot: slot_of(part.string),
                    imaginary,
                });
            }
            rows.push(Row { constraint, terms });
        }
        Ok(CovariancePlan {
            constraints: constraints.to_vec(),
            coefficients: h.coefficients(),
            strings,
            hamiltonian_slots,
            rows,
        })
    }

    pub fn constraints(&self) -> &[PauliString] {
        &self.constraints
    }

    /// Distinct non-identity strings whose expectations the plan consumes.
    pub fn strings(&self) -> &[PauliString] {
        &self.strings
    }

    /// `<H>` from expectations of [`Self::strings`].
    pub fn energy(&self, values: &[f64]) -> f64 {
        self.coefficients
            .iter()
            .zip(&self.hamiltonian_slots)
            .map(|(h, slot)| h * slot.read(values))
            .sum()
    }

    /// Covariances from expectations of [`Self::strings`].
    pub fn covariances(&self, values: &[f64]) -> DVector<Complex64> {
        let energy = self.energy(values);
        let f: Vec<Complex64> = self
            .rows
            .par_iter()
            .with_min_len(32)
            .map(|row| {
                let mut acc = Complex64::new(-row.constraint.read(values) * energy, 0.0);
                for term in &row.terms {
                    let v = term.coeff * term.slot.read(values);
                    if term.imaginary {
                        acc.im += v;
                    } else {
                        acc.re += v;
                    }
                }
                acc
            })
            .collect();
        DVector::from_vec(f)
    }

    /// Jacobian column from expectations at the base point and derivatives of
    /// every string along one parameter.
    fn jacobian_column(&self, values: &[f64], derivs: &[f64]) -> Vec<Complex64> {
        let energy = self.energy(values);
        let d_energy: f64 = self
            .coefficients
            .iter()
            .zip(&self.hamiltonian_slots)
            .map(|(h, slot)| h * slot.read_derivative(derivs))
            .sum();
        self.rows
            .par_iter()
            .with_min_len(32)
            .map(|row| {
                let mut acc = Complex64::new(
                    -row.constraint.read_derivative(derivs) * energy
                        - row.constraint.read(values) * d_energy,
                    0.0,
                );
                for term in &row.terms {
                    let v = term.coeff * term.slot.read_derivative(derivs);
                    if term.imaginary {
                        acc.im += v;
                    } else {
                        acc.re += v;
                    }
                }
                acc
            })
            .collect()
    }

    /// `f(theta)` with one provider point.
    pub fn evaluate<P: ExpectationProvider + ?Sized>(
        &self,
        provider: &P,
        ansatz: &Ansatz,
        theta: &[f64],
    ) -> Result<DVector<Complex64>> {
        let values = provider.estimate(&ansatz.bind(theta)?, &self.strings)?;
        Ok(self.covariances(&values))
    }

    /// `f` and `J` from one batch of shift-rule points.
    pub fn system<P: ExpectationProvider + ?Sized>(
        &self,
        provider: &P,
        ansatz: &Ansatz,
        theta: &[f64],
    ) -> Result<CovarianceSystem> {
        let shifts = ShiftPoints::new(ansatz, theta)?;
        let results = provider.estimate_batch(&shifts.points, &self.strings)?;
        let values = &results[0];
        let f = self.covariances(values);
        let n_params = ansatz.n_params();
        let mut jacobian = DMatrix::zeros(self.rows.len(), n_params);
        for n in 0..n_params {
            let derivs = shifts.derivative(n, &results);
            let column = self.jacobian_column(values, &derivs);
            jacobian.set_column(n, &DVector::from_vec(column));
        }
        Ok(CovarianceSystem {
            constraints: self.constraints.clone(),
            theta: theta.to_vec(),
            f,
            jacobian,
            energy: self.energy(values),
        })
    }
}

/// The base point followed by a `(+pi/2, -pi/2)` pair for every rotation.
struct ShiftPoints<'a> {
    points: Vec<BoundCircuit<'a>>,
    /// Per parameter: `(index of the + point, scale)` for each occurrence.
    pairs: Vec<Vec<(usize, f64)>>,
}

impl<'a> ShiftPoints<'a> {
    fn new(ansatz: &'a Ansatz, theta: &[f64]) -> Result<Self> {
        let base = ansatz.bind(theta)?;
        let mut points = vec![base.clone()];
        let mut pairs = Vec::with_capacity(ansatz.n_params());
        for n in 0..ansatz.n_params() {
            let mut list = Vec::new();
            for &(gate, scale) in ansatz.occurrences(n)? {
                list.push((points.len(), scale));
                points.push(base.shifted(gate, FRAC_PI_2));
                points.push(base.shifted(gate, -FRAC_PI_2));
            }
            pairs.push(list);
        }
        Ok(ShiftPoints { points, pairs })
    }

    fn derivative(&self, n: usize, results: &[Vec<f64>]) -> Vec<f64> {
        let len = results[0].len();
        let mut d = vec![0.0; len];
        for &(plus, scale) in &self.pairs[n] {
            for (j, dj) in d.iter_mut().enumerate() {
                *dj += scale * 0.5 * (results[plus][j] - results[plus + 1][j]);
            }
        }
        d
    }
}

/// Covariance vector and Jacobian at one parameter point.
#[derive(Debug, Clone)]
pub struct CovarianceSystem {
    pub constraints: Vec<PauliString>,
    pub theta: Vec<f64>,
    pub f: DVector<Complex64>,
    pub jacobian: DMatrix<Complex64>,
    /// `<H>` from the same estimates.
    pub energy: f64,
}

impl CovarianceSystem {
    /// Matrix Market `array complex general` dump of the `N_c x (nu + 1)`
    /// matrix `[f | J]`, with constraints and parameters as comments.
    pub fn write_matrix_market<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "%%MatrixMarket matrix array complex general")?;
        writeln!(
            w,
            "% column 1: covariance vector f; columns 2..: jacobian J"
        )?;
        let names: Vec<String> = self.constraints.iter().map(|p| p.to_string()).collect();
        writeln!(w, "% constraints: {}", names.join(" "))?;
        let theta: Vec<String> = self.theta.iter().map(|t| t.to_string()).collect();
        writeln!(w, "% theta: {}", theta.join(" "))?;
        writeln!(w, "{} {}", self.f.len(), self.jacobian.ncols() + 1)?;
        for z in &self.f {
            writeln!(w, "{:e} {:e}", z.re, z.im)?;
        }
        for col in self.jacobian.column_iter() {
            for z in col.iter() {
                writeln!(w, "{:e} {:e}", z.re, z.im)?;
            }
        }
        Ok(())
    }
}

/// Real parts of `(J, f)` stacked on top of the imaginary parts.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedSystem {
    pub jacobian: DMatrix<f64>,
    pub residual: DVector<f64>,
}

impl StackedSystem {
    pub fn residual_norm(&self) -> f64 {
        self.residual.norm()
    }

    /// Inverse of [`stack`].
    pub fn unstack(&self) -> (DVector<Complex64>, DMatrix<Complex64>) {
        let n_c = self.residual.len() / 2;
        let f = DVector::from_fn(n_c, |k, _| {
            Complex64::new(self.residual[k], self.residual[k + n_c])
        });
        let j = DMatrix::from_fn(n_c, self.jacobian.ncols(), |k, n| {
            Complex64::new(self.jacobian[(k, n)], self.jacobian[(k + n_c, n)])
        });
        (f, j)
    }
}

pub fn stack(system: &CovarianceSystem) -> StackedSystem {
    stack_parts(&system.f, &system.jacobian)
}

pub fn stack_parts(f: &DVector<Complex64>, jacobian: &DMatrix<Complex64>) -> StackedSystem {
    let n_c = f.len();
    let residual = DVector::from_fn(
        2 * n_c,
        |i, _| {
            if i < n_c {
                f[i].re
            } else {
                f[i - n_c].im
            }
        },
    );
    let jacobian = DMatrix::from_fn(2 * n_c, jacobian.ncols(), |i, n| {
        if i < n_c {
            jacobian[(i, n)].re
        } else {
            jacobian[(i - n_c, n)].im
        }
    });
    StackedSystem { jacobian, residual }
}

pub fn covariance<P: ExpectationProvider + ?Sized>(
    provider: &P,
    ansatz: &Ansatz,
    theta: &[f64],
    o_k: &PauliString,
    h: &HermitianOperator,
) -> Result<Complex64> {
    Ok(covariance_vector(provider, ansatz, theta, std::slice::from_ref(o_k), h)?[0])
}

pub fn covariance_vector<P: ExpectationProvider + ?Sized>(
    provider: &P,
    ansatz: &Ansatz,
    theta: &[f64],
    constraints: &[PauliString],
    h: &HermitianOperator,
) -> Result<DVector<Complex64>> {
    CovariancePlan::new(constraints, h)?.evaluate(provider, ansatz, theta)
}

pub fn jacobian<P: ExpectationProvider + ?Sized>(
    provider: &P,
    ansatz: &Ansatz,
    theta: &[f64],
    constraints: &[PauliString],
    h: &HermitianOperator,
) -> Result<DMatrix<Complex64>> {
    Ok(build_system(provider, ansatz, theta, constraints, h)?.jacobian)
}

pub fn build_system<P: ExpectationProvider + ?Sized>(
    provider: &P,
    ansatz: &Ansatz,
    theta: &[f64],
    constraints: &[PauliString],
    h: &HermitianOperator,
) -> Result<CovarianceSystem> {
    CovariancePlan::new(constraints, h)?.system(provider, ansatz, theta)
}

/// `Var[H] = sum_a h_a Cov(H_a, H)` for covariances taken over the
/// Hamiltonian's own terms.
pub fn variance_from_covariances(f: &[Complex64], coefficients: &[f64]) -> Result<f64> {
    if f.len() != coefficients.len() {
        return Err(Error::LengthMismatch(format!(
            "{} covariances for {} coefficients",
            f.len(),
            coefficients.len()
        )));
    }
    let total: Complex64 = f.iter().zip(coefficients).map(|(z, h)| z * h).sum();
    let scale = f
        .iter()
        .zip(coefficients)
        .map(|(z, h)| (z * h).norm())
        .sum::<f64>()
        .max(1.0);
    if total.im.abs() > 1e-9 * scale {
        return Err(Error::InvalidArgument(format!(
            "variance has imaginary residual {:e}",
            total.im
        )));
    }
    Ok(total.re)
}

/// Covariances against the rotated orthonormal pool, `f_k = <k|U^dag H U|0>`
/// for `k = 1 .. 2^N - 1`.
pub fn orthogonal_pool_covariances(
    ansatz: &Ansatz,
    theta: &[f64],
    h: &HermitianOperator,
) -> Result<Vec<Complex64>> {
    if ansatz.n_qubits() > MAX_EIGEN_QUBITS {
        return Err(Error::TooLarge {
            n_qubits: ansatz.n_qubits(),
            limit: MAX_EIGEN_QUBITS,
        });
    }
    let bound = ansatz.bind(theta)?;
    let psi = bound.prepare()?;
    let mut rotated = Statevector::from_raw(psi.n_qubits(), h.apply(&psi)?);
    bound.apply_inverse(&mut rotated);
    Ok(rotated.amplitudes()[1..].to_vec())
}

/// `p_k = |f_k|^2 / sum_j |f_j|^2`, or `None` when every covariance vanishes
/// (the state is already an eigenstate).
pub fn importance_weights(f: &[Complex64]) -> Option<Vec<f64>> {
    let total: f64 = f.iter().map(|z| z.norm_sqr()).sum();
    if total == 0.0 {
        return None;
    }
    Some(f.iter().map(|z| z.norm_sqr() / total).collect())
}
