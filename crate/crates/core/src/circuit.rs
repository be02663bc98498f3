//! Parametrised circuits built from Pauli rotations `exp(-i angle P / 2)` and
//! a few fixed gates.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::io::{BufRead, Write};

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::operator::HermitianOperator;
use crate::pauli::{parse_header, Letter, PauliString};
use crate::statevector::Statevector;

#[derive(Debug, Clone, PartialEq)]
pub enum FixedGate {
    Cz(usize, usize),
    Hadamard(usize),
    X(usize),
    /// A Pauli rotation with a baked-in angle.
    Rotation {
        generator: PauliString,
        angle: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Gate {
    /// `exp(-i scale * theta[param] * generator / 2)`.
    Rotation {
        generator: PauliString,
        param: usize,
        scale: f64,
    },
    Fixed(FixedGate),
}

impl Gate {
    pub fn rotation(generator: PauliString, param: usize) -> Self {
        Gate::Rotation {
            generator,
            param,
            scale: 1.0,
        }
    }
}

/// Ordered gate list with `n_params` parameters, every one of them used.
#[derive(Debug, Clone, PartialEq)]
pub struct Ansatz {
    n_qubits: usize,
    gates: Vec<Gate>,
    n_params: usize,
    /// `(gate index, scale)` of every rotation driven by each parameter.
    occurrences: Vec<Vec<(usize, f64)>>,
}

impl Ansatz {
    pub fn new(n_qubits: usize, gates: Vec<Gate>) -> Result<Self> {
        if n_qubits == 0 || n_qubits > crate::statevector::MAX_DENSE_QUBITS {
            return Err(Error::QubitCount(n_qubits));
        }
        let check_qubit = |q: usize| {
            if q >= n_qubits {
                Err(Error::InvalidAnsatz(format!("qubit {q} out of range")))
            } else {
                Ok(())
            }
        };
        let check_generator = |g: &PauliString| {
            if g.n_qubits() != n_qubits {
                Err(Error::QubitMismatch {
                    left: n_qubits,
                    right: g.n_qubits(),
                })
            } else if g.is_identity() {
                Err(Error::InvalidAnsatz("identity rotation generator".into()))
            } else {
                Ok(())
            }
        };
        let mut occurrences: Vec<Vec<(usize, f64)>> = Vec::new();
        for (idx, gate) in gates.iter().enumerate() {
            match gate {
                Gate::Rotation {
                    generator,
                    param,
                    scale,
                } => {
                    check_generator(generator)?;
                    if !(scale.is_finite() && *scale != 0.0) {
                        return Err(Error::InvalidAnsatz(format!("bad rotation scale {scale}")));
                    }
                    if *param >= occurrences.len() {
                        occurrences.resize(param + 1, Vec::new());
                    }
                    occurrences[*param].push((idx, *scale));
                }
                Gate::Fixed(FixedGate::Cz(a, b)) => {
                    check_qubit(*a)?;
                    check_qubit(*b)?;
                    if a == b {
                        return Err(Error::InvalidAnsatz("CZ on a single qubit".into()));
                    }
                }
                Gate::Fixed(FixedGate::Hadamard(q)) | Gate::Fixed(FixedGate::X(q)) => {
                    check_qubit(*q)?
                }
                Gate::Fixed(FixedGate::Rotation { generator, angle }) => {
                    check_generator(generator)?;
                    if !angle.is_finite() {
                        return Err(Error::InvalidAnsatz("non-finite fixed angle".into()));
                    }
                }
            }
        }
        if let Some(unused) = occurrences.iter().position(|o| o.is_empty()) {
            return Err(Error::InvalidAnsatz(format!(
                "parameter {unused} drives no gate"
            )));
        }
        Ok(Ansatz {
            n_qubits,
            n_params: occurrences.len(),
            gates,
            occurrences,
        })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    /// Rotation gates driven by parameter `n`, with their scales.
    pub fn occurrences(&self, n: usize) -> Result<&[(usize, f64)]> {
        self.occurrences
            .get(n)
            .map(Vec::as_slice)
            .ok_or(Error::ParameterIndex {
                index: n,
                n_params: self.n_params,
            })
    }

    pub fn bind(&self, theta: &[f64]) -> Result<BoundCircuit<'_>> {
        if theta.len() != self.n_params {
            return Err(Error::ParameterLength {
                expected: self.n_params,
                got: theta.len(),
            });
        }
        let angles = self
            .gates
            .iter()
            .map(|g| match g {
                Gate::Rotation { param, scale, .. } => scale * theta[*param],
                Gate::Fixed(FixedGate::Rotation { angle, .. }) => *angle,
                Gate::Fixed(_) => 0.0,
            })
            .collect();
        Ok(BoundCircuit {
            ansatz: self,
            angles,
        })
    }

    pub fn prepare(&self, theta: &[f64]) -> Result<Statevector> {
        self.bind(theta)?.prepare()
    }

    /// The circuit with all parameters replaced by fixed angles.
    pub fn frozen(&self, theta: &[f64]) -> Result<Ansatz> {
        let bound = self.bind(theta)?;
        let gates = self
            .gates
            .iter()
            .zip(&bound.angles)
            .map(|(g, angle)| match g {
                Gate::Rotation { generator, .. } => Gate::Fixed(FixedGate::Rotation {
                    generator: *generator,
                    angle: *angle,
                }),
                other => other.clone(),
            })
            .collect();
        Ansatz::new(self.n_qubits, gates)
    }

    /// `U(theta)^dagger` with the same parameters.
    pub fn inverse(&self) -> Ansatz {
        let gates = self
            .gates
            .iter()
            .rev()
            .map(|g| match g {
                Gate::Rotation {
                    generator,
                    param,
                    scale,
                } => Gate::Rotation {
                    generator: *generator,
                    param: *param,
                    scale: -scale,
                },
                Gate::Fixed(FixedGate::Rotation { generator, angle }) => {
                    Gate::Fixed(FixedGate::Rotation {
                        generator: *generator,
                        angle: -angle,
                    })
                }
                other => other.clone(),
            })
            .collect();
        Ansatz::new(self.n_qubits, gates).expect("inverse of a valid ansatz is valid")
    }

    /// `self` followed by `other`; parameters are shared by index.
    pub fn then(&self, other: &Ansatz) -> Result<Ansatz> {
        if self.n_qubits != other.n_qubits {
            return Err(Error::QubitMismatch {
                left: self.n_qubits,
                right: other.n_qubits,
            });
        }
        let gates = self.gates.iter().chain(&other.gates).cloned().collect();
        Ansatz::new(self.n_qubits, gates)
    }

    /// Line-oriented description: a header, then one gate per line
    /// (`ROT <generator> <param> <scale>`, `CZ a b`, `H q`, `X q`,
    /// `FROT <generator> <angle>`).
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "ansatz n_qubits={} n_params={}",
            self.n_qubits, self.n_params
        )?;
        for g in &self.gates {
            writeln!(w, "{g}")?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("missing ansatz header".into()))??;
        let fields = parse_header(&header, "ansatz")?;
        let get = |key: &str| -> Result<usize> {
            fields
                .iter()
                .find(|(k, _)| k == key)
                .and_then(|(_, v)| v.parse().ok())
                .ok_or_else(|| Error::Format(format!("ansatz header lacks {key}")))
        };
        let (n_qubits, n_params) = (get("n_qubits")?, get("n_params")?);
        let mut gates = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            gates.push(parse_gate(&line)?);
        }
        let ansatz = Ansatz::new(n_qubits, gates)?;
        if ansatz.n_params != n_params {
            return Err(Error::Format(format!(
                "header declares {n_params} parameters, gates use {}",
                ansatz.n_params
            )));
        }
        Ok(ansatz)
    }
}

impl fmt::Display for Gate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Gate::Rotation {
                generator,
                param,
                scale,
            } => write!(f, "ROT {generator} {param} {scale}"),
            Gate::Fixed(FixedGate::Cz(a, b)) => write!(f, "CZ {a} {b}"),
            Gate::Fixed(FixedGate::Hadamard(q)) => write!(f, "H {q}"),
            Gate::Fixed(FixedGate::X(q)) => write!(f, "X {q}"),
            Gate::Fixed(FixedGate::Rotation { generator, angle }) => {
                write!(f, "FROT {generator} {angle}")
            }
        }
    }
}

fn parse_gate(line: &str) -> Result<Gate> {
    let bad = || Error::Format(format!("bad gate line {line:?}"));
    let parts: Vec<&str> = line.split_whitespace().collect();
    let num =
        |i: usize| -> Result<usize> { parts.get(i).ok_or_else(bad)?.parse().map_err(|_| bad()) };
    let real =
        |i: usize| -> Result<f64> { parts.get(i).ok_or_else(bad)?.parse().map_err(|_| bad()) };
    let pauli = |i: usize| -> Result<PauliString> { parts.get(i).ok_or_else(bad)?.parse() };
    let (gate, arity) = match parts.first().copied() {
        Some("ROT") => (
            Gate::Rotation {
                generator: pauli(1)?,
                param: num(2)?,
                scale: real(3)?,
            },
            4,
        ),
        Some("CZ") => (Gate::Fixed(FixedGate::Cz(num(1)?, num(2)?)), 3),
        Some("H") => (Gate::Fixed(FixedGate::Hadamard(num(1)?)), 2),
        Some("X") => (Gate::Fixed(FixedGate::X(num(1)?)), 2),
        Some("FROT") => (
            Gate::Fixed(FixedGate::Rotation {
                generator: pauli(1)?,
                angle: real(2)?,
            }),
            3,
        ),
        _ => return Err(bad()),
    };
    if parts.len() != arity {
        return Err(bad());
    }
    Ok(gate)
}

/// An ansatz with every gate angle resolved.
#[derive(Debug, Clone)]
pub struct BoundCircuit<'a> {
    ansatz: &'a Ansatz,
    angles: Vec<f64>,
}

impl<'a> BoundCircuit<'a> {
    pub fn ansatz(&self) -> &'a Ansatz {
        self.ansatz
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    /// Copy with the angle of rotation gate `gate` offset by `delta`.
    pub fn shifted(&self, gate: usize, delta: f64) -> BoundCircuit<'a> {
        let mut angles = self.angles.clone();
        angles[gate] += delta;
        BoundCircuit {
            ansatz: self.ansatz,
            angles,
        }
    }

    pub fn prepare(&self) -> Result<Statevector> {
        let mut state = Statevector::zero(self.ansatz.n_qubits)?;
        self.apply_range(&mut state, 0..self.angles.len());
        Ok(state)
    }

    fn apply_range(&self, state: &mut Statevector, range: std::ops::Range<usize>) {
        for idx in range {
            apply_gate(state, &self.ansatz.gates[idx], self.angles[idx]);
        }
    }

    /// Applies `U^dagger` to `state`.
    pub fn apply_inverse(&self, state: &mut Statevector) {
        for idx in (0..self.angles.len()).rev() {
            apply_gate(state, &self.ansatz.gates[idx], -self.angles[idx]);
        }
    }

    /// `d|psi>/d theta_n` for every parameter.
    pub fn state_derivatives(&self) -> Result<Vec<Vec<Complex64>>> {
        let ansatz = self.ansatz;
        let n_gates = self.angles.len();
        (0..ansatz.n_params)
            .into_par_iter()
            .map(|n| {
                let mut total = vec![Complex64::new(0.0, 0.0); 1 << ansatz.n_qubits];
                for &(gate, scale) in &ansatz.occurrences[n] {
                    let mut state = Statevector::zero(ansatz.n_qubits)?;
                    self.apply_range(&mut state, 0..gate + 1);
                    let Gate::Rotation { generator, .. } = &ansatz.gates[gate] else {
                        unreachable!("occurrences only index rotations")
                    };
                    state.apply_pauli(generator);
                    self.apply_range(&mut state, gate + 1..n_gates);
                    let factor = Complex64::new(0.0, -scale / 2.0);
                    for (t, a) in total.iter_mut().zip(state.amplitudes()) {
                        *t += factor * a;
                    }
                }
                Ok(total)
            })
            .collect()
    }
}

fn apply_gate(state: &mut Statevector, gate: &Gate, angle: f64) {
    match gate {
        Gate::Rotation { generator, .. } | Gate::Fixed(FixedGate::Rotation { generator, .. }) => {
            state.apply_pauli_rotation(generator, angle)
        }
        Gate::Fixed(FixedGate::Cz(a, b)) => state.apply_cz(*a, *b),
        Gate::Fixed(FixedGate::Hadamard(q)) => state.apply_hadamard(*q),
        Gate::Fixed(FixedGate::X(q)) => state.apply_x(*q),
    }
}

/// Hardware-efficient ansatz: an Ry layer, then per layer Ry and Rz on every
/// qubit followed by a ring of CZ gates (a single CZ for two qubits).
/// `n_params = n_qubits * (2 * n_layers + 1)`.
pub fn build_hea(n_qubits: usize, n_layers: usize) -> Result<Ansatz> {
    if n_layers == 0 {
        return Err(Error::InvalidArgument("n_layers must be at least 1".into()));
    }
    let single = |q: usize, letter: Letter| PauliString::single(n_qubits, q, letter);
    let mut gates = Vec::new();
    let mut param = 0;
    for q in 0..n_qubits {
        gates.push(Gate::rotation(single(q, Letter::Y)?, param));
        param += 1;
    }
    for _ in 0..n_layers {
        for letter in [Letter::Y, Letter::Z] {
            for q in 0..n_qubits {
                gates.push(Gate::rotation(single(q, letter)?, param));
                param += 1;
            }
        }
        match n_qubits {
            1 => {}
            2 => gates.push(Gate::Fixed(FixedGate::Cz(0, 1))),
            n => {
                for q in 0..n {
                    gates.push(Gate::Fixed(FixedGate::Cz(q, (q + 1) % n)));
                }
            }
        }
    }
    Ansatz::new(n_qubits, gates)
}

/// `d<O>/d theta_n` by the two-term shift rule, summed over every rotation
/// driven by `theta_n`.
pub fn shift_rule_derivative(
    ansatz: &Ansatz,
    theta: &[f64],
    n: usize,
    observable: &HermitianOperator,
) -> Result<f64> {
    let bound = ansatz.bind(theta)?;
    let mut total = 0.0;
    for &(gate, scale) in ansatz.occurrences(n)? {
        let plus = observable.expectation(&bound.shifted(gate, FRAC_PI_2).prepare()?)?;
        let minus = observable.expectation(&bound.shifted(gate, -FRAC_PI_2).prepare()?)?;
        total += scale * 0.5 * (plus - minus);
    }
    Ok(total)
}
