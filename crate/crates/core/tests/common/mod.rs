//! Dense-matrix reference implementations built from 2x2 Pauli blocks.
#![allow(dead_code)]

use covar_core::{Ansatz, FixedGate, Gate, HermitianOperator, Letter, PauliString};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use proptest::prelude::*;

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn letter_matrix(l: Letter) -> CMatrix {
    let (o, z, i) = (c(1.0, 0.0), c(0.0, 0.0), c(0.0, 1.0));
    match l {
        Letter::I => CMatrix::from_row_slice(2, 2, &[o, z, z, o]),
        Letter::X => CMatrix::from_row_slice(2, 2, &[z, o, o, z]),
        Letter::Y => CMatrix::from_row_slice(2, 2, &[z, -i, i, z]),
        Letter::Z => CMatrix::from_row_slice(2, 2, &[o, z, z, -o]),
    }
}

/// `P_{n-1} (x) ... (x) P_0`, so that bit `q` of a basis index is qubit `q`.
pub fn dense(p: &PauliString) -> CMatrix {
    let letters = p.letters();
    let mut m = CMatrix::from_element(1, 1, c(1.0, 0.0));
    for l in letters.iter().rev() {
        m = m.kronecker(&letter_matrix(*l));
    }
    m
}

pub fn dense_operator(h: &HermitianOperator) -> CMatrix {
    let dim = 1 << h.n_qubits();
    h.terms()
        .iter()
        .fold(CMatrix::zeros(dim, dim), |acc, (coef, p)| {
            acc + dense(p) * c(*coef, 0.0)
        })
}

pub fn rotation(p: &PauliString, angle: f64) -> CMatrix {
    let dim = 1 << p.n_qubits();
    CMatrix::identity(dim, dim) * c((angle / 2.0).cos(), 0.0)
        - dense(p) * c(0.0, (angle / 2.0).sin())
}

fn fixed(n: usize, g: &FixedGate) -> CMatrix {
    let dim = 1 << n;
    match g {
        FixedGate::Cz(a, b) => CMatrix::from_diagonal(&CVector::from_fn(dim, |i, _| {
            if (i >> a) & 1 == 1 && (i >> b) & 1 == 1 {
                c(-1.0, 0.0)
            } else {
                c(1.0, 0.0)
            }
        })),
        FixedGate::Hadamard(q) => {
            let h = CMatrix::from_row_slice(
                2,
                2,
                &[c(1.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(-1.0, 0.0)],
            ) * c(std::f64::consts::FRAC_1_SQRT_2, 0.0);
            single(n, *q, &h)
        }
        FixedGate::X(q) => single(n, *q, &letter_matrix(Letter::X)),
        FixedGate::Rotation { generator, angle } => rotation(generator, *angle),
    }
}

fn single(n: usize, q: usize, m: &CMatrix) -> CMatrix {
    let mut out = CMatrix::from_element(1, 1, c(1.0, 0.0));
    for k in (0..n).rev() {
        out = if k == q {
            out.kronecker(m)
        } else {
            out.kronecker(&letter_matrix(Letter::I))
        };
    }
    out
}

/// The circuit unitary, gate by gate.
pub fn dense_unitary(ansatz: &Ansatz, theta: &[f64]) -> CMatrix {
    let n = ansatz.n_qubits();
    let dim = 1 << n;
    let mut u = CMatrix::identity(dim, dim);
    for gate in ansatz.gates() {
        let g = match gate {
            Gate::Rotation {
                generator,
                param,
                scale,
            } => rotation(generator, scale * theta[*param]),
            Gate::Fixed(f) => fixed(n, f),
        };
        u = g * u;
    }
    u
}

pub fn dense_state(ansatz: &Ansatz, theta: &[f64]) -> CVector {
    dense_unitary(ansatz, theta).column(0).into_owned()
}

pub fn expectation(m: &CMatrix, psi: &CVector) -> Complex64 {
    (psi.adjoint() * m * psi)[(0, 0)]
}

pub fn letter() -> impl Strategy<Value = Letter> {
    prop_oneof![
        Just(Letter::I),
        Just(Letter::X),
        Just(Letter::Y),
        Just(Letter::Z)
    ]
}

pub fn pauli(n: usize) -> impl Strategy<Value = PauliString> {
    proptest::collection::vec(letter(), n).prop_map(|l| PauliString::from_letters(&l).unwrap())
}

pub fn non_identity(n: usize) -> impl Strategy<Value = PauliString> {
    pauli(n).prop_filter("non-identity", |p| !p.is_identity())
}

pub fn angles(len: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-std::f64::consts::PI..std::f64::consts::PI, len)
}

pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}
