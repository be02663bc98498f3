//! Pauli strings in X/Z bit-mask form.
//!
//! A string on `n` qubits is stored as two masks: bit `q` of `x` is set when
//! qubit `q` carries X or Y, bit `q` of `z` when it carries Z or Y. Letters map
//! to matrices through `P = i^{|x & z|} X^x Z^z`, which makes every stored
//! string Hermitian and keeps products and commutation checks to a handful of
//! word operations.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::seq::index;

use crate::error::{Error, Result};

/// Strings are packed into a single machine word per mask.
pub const MAX_QUBITS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Letter {
    I,
    X,
    Y,
    Z,
}

impl Letter {
    fn bits(self) -> (bool, bool) {
        match self {
            Letter::I => (false, false),
            Letter::X => (true, false),
            Letter::Y => (true, true),
            Letter::Z => (false, true),
        }
    }

    fn from_bits(x: bool, z: bool) -> Self {
        match (x, z) {
            (false, false) => Letter::I,
            (true, false) => Letter::X,
            (true, true) => Letter::Y,
            (false, true) => Letter::Z,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Letter::I => 'I',
            Letter::X => 'X',
            Letter::Y => 'Y',
            Letter::Z => 'Z',
        }
    }
}

/// Element of {+1, +i, -1, -i}, stored as the power of `i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Phase(u8);

impl Phase {
    pub const ONE: Phase = Phase(0);
    pub const I: Phase = Phase(1);
    pub const MINUS_ONE: Phase = Phase(2);
    pub const MINUS_I: Phase = Phase(3);

    pub fn from_power(power: u32) -> Self {
        Phase((power % 4) as u8)
    }

    pub fn power(self) -> u8 {
        self.0
    }

    pub fn is_real(self) -> bool {
        self.0 % 2 == 0
    }

    /// +1 or -1 for real phases.
    pub fn real_sign(self) -> Option<f64> {
        match self.0 {
            0 => Some(1.0),
            2 => Some(-1.0),
            _ => None,
        }
    }

    pub fn to_complex(self) -> Complex64 {
        match self.0 {
            0 => Complex64::new(1.0, 0.0),
            1 => Complex64::new(0.0, 1.0),
            2 => Complex64::new(-1.0, 0.0),
            _ => Complex64::new(0.0, -1.0),
        }
    }
}

impl std::ops::Mul for Phase {
    type Output = Phase;

    fn mul(self, rhs: Phase) -> Phase {
        Phase((self.0 + rhs.0) % 4)
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self.0 {
            0 => "+1",
            1 => "+i",
            2 => "-1",
            _ => "-i",
        })
    }
}

/// An `n`-qubit tensor product of I, X, Y, Z without phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PauliString {
    n_qubits: u8,
    x: u64,
    z: u64,
}

impl PauliString {
    pub fn identity(n_qubits: usize) -> Result<Self> {
        check_qubits(n_qubits)?;
        Ok(PauliString {
            n_qubits: n_qubits as u8,
            x: 0,
            z: 0,
        })
    }

    pub fn from_masks(n_qubits: usize, x: u64, z: u64) -> Result<Self> {
        check_qubits(n_qubits)?;
        let mask = full_mask(n_qubits);
        if x & !mask != 0 || z & !mask != 0 {
            return Err(Error::InvalidArgument(format!(
                "masks exceed {n_qubits} qubits"
            )));
        }
        Ok(PauliString {
            n_qubits: n_qubits as u8,
            x,
            z,
        })
    }

    pub fn from_letters(letters: &[Letter]) -> Result<Self> {
        check_qubits(letters.len())?;
        let (mut x, mut z) = (0u64, 0u64);
        for (q, letter) in letters.iter().enumerate() {
            let (bx, bz) = letter.bits();
            x |= (bx as u64) << q;
            z |= (bz as u64) << q;
        }
        Ok(PauliString {
            n_qubits: letters.len() as u8,
            x,
            z,
        })
    }

    /// A single non-identity letter on qubit `q`.
    pub fn single(n_qubits: usize, q: usize, letter: Letter) -> Result<Self> {
        let mut letters = vec![Letter::I; n_qubits];
        *letters
            .get_mut(q)
            .ok_or_else(|| Error::InvalidArgument(format!("qubit {q} out of range")))? = letter;
        Self::from_letters(&letters)
    }

    /// `letter` on each listed qubit, identity elsewhere.
    pub fn on(n_qubits: usize, qubits: &[usize], letter: Letter) -> Result<Self> {
        let mut letters = vec![Letter::I; n_qubits];
        for &q in qubits {
            *letters
                .get_mut(q)
                .ok_or_else(|| Error::InvalidArgument(format!("qubit {q} out of range")))? = letter;
        }
        Self::from_letters(&letters)
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits as usize
    }

    pub fn x_mask(&self) -> u64 {
        self.x
    }

    pub fn z_mask(&self) -> u64 {
        self.z
    }

    pub fn support(&self) -> u64 {
        self.x | self.z
    }

    pub fn weight(&self) -> usize {
        self.support().count_ones() as usize
    }

    pub fn is_identity(&self) -> bool {
        self.support() == 0
    }

    /// Number of Y letters.
    pub fn y_count(&self) -> u32 {
        (self.x & self.z).count_ones()
    }

    pub fn letter(&self, q: usize) -> Letter {
        Letter::from_bits((self.x >> q) & 1 == 1, (self.z >> q) & 1 == 1)
    }

    pub fn letters(&self) -> Vec<Letter> {
        (0..self.n_qubits()).map(|q| self.letter(q)).collect()
    }

    /// Matrix product `self * other` as a phase times a string.
    pub fn multiply(&self, other: &PauliString) -> Result<PhasedPauli> {
        self.check_same(other)?;
        let x = self.x ^ other.x;
        let z = self.z ^ other.z;
        let string = PauliString {
            n_qubits: self.n_qubits,
            x,
            z,
        };
        // i^{y_a} X^{x_a} Z^{z_a} i^{y_b} X^{x_b} Z^{z_b}
        //   = i^{y_a + y_b + 2|z_a & x_b|} X^{x_c} Z^{z_c}
        //   = i^{y_a + y_b - y_c + 2|z_a & x_b|} P_c
        let power = self.y_count() + other.y_count() + 4 * MAX_QUBITS as u32 - string.y_count()
            + 2 * (self.z & other.x).count_ones();
        Ok(PhasedPauli {
            phase: Phase::from_power(power),
            string,
        })
    }

    pub fn commutes(&self, other: &PauliString) -> Result<bool> {
        self.check_same(other)?;
        Ok(self.commutes_unchecked(other))
    }

    pub(crate) fn commutes_unchecked(&self, other: &PauliString) -> bool {
        ((self.x & other.z) ^ (self.z & other.x)).count_ones() % 2 == 0
    }

    /// Splits `self * other` into its Hermitian symmetric and antisymmetric
    /// halves: `P = {self, other}/2` is present iff the two commute and
    /// `Q = -(i/2)[self, other]` iff they anticommute, so that
    /// `self * other = P + i Q`.
    pub fn symmetrized_products(
        &self,
        other: &PauliString,
    ) -> Result<(Option<PhasedPauli>, Option<PhasedPauli>)> {
        let product = self.multiply(other)?;
        if product.phase.is_real() {
            Ok((Some(product), None))
        } else {
            // [a, b] = 2ab when anticommuting, so Q = -i * ab.
            Ok((
                None,
                Some(PhasedPauli {
                    phase: Phase::MINUS_I * product.phase,
                    string: product.string,
                }),
            ))
        }
    }

    /// Dense `2^n x 2^n` matrix, basis index bit `q` = qubit `q`.
    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let dim = 1usize << self.n_qubits();
        let mut m = DMatrix::zeros(dim, dim);
        for col in 0..dim {
            let (row, amp) = self.apply_to_basis(col);
            m[(row, col)] = amp;
        }
        m
    }

    /// `P|b> = amp |b'>`.
    pub fn apply_to_basis(&self, basis: usize) -> (usize, Complex64) {
        let b = basis as u64;
        let power = self.y_count() + 2 * (b & self.z).count_ones();
        ((b ^ self.x) as usize, Phase::from_power(power).to_complex())
    }

    fn check_same(&self, other: &PauliString) -> Result<()> {
        if self.n_qubits != other.n_qubits {
            return Err(Error::QubitMismatch {
                left: self.n_qubits(),
                right: other.n_qubits(),
            });
        }
        Ok(())
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for q in 0..self.n_qubits() {
            write!(f, "{}", self.letter(q).as_char())?;
        }
        Ok(())
    }
}

impl FromStr for PauliString {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let letters = s
            .trim()
            .chars()
            .map(|c| match c {
                'I' => Ok(Letter::I),
                'X' => Ok(Letter::X),
                'Y' => Ok(Letter::Y),
                'Z' => Ok(Letter::Z),
                _ => Err(Error::ParsePauli(s.to_string())),
            })
            .collect::<Result<Vec<_>>>()?;
        if letters.is_empty() {
            return Err(Error::ParsePauli(s.to_string()));
        }
        PauliString::from_letters(&letters)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PhasedPauli {
    pub phase: Phase,
    pub string: PauliString,
}

impl PhasedPauli {
    pub fn to_dense(&self) -> DMatrix<Complex64> {
        self.string.to_dense() * self.phase.to_complex()
    }
}

impl fmt::Display for PhasedPauli {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}*{}", self.phase, self.string)
    }
}

fn full_mask(n_qubits: usize) -> u64 {
    if n_qubits == 64 {
        u64::MAX
    } else {
        (1u64 << n_qubits) - 1
    }
}

fn check_qubits(n_qubits: usize) -> Result<()> {
    if n_qubits == 0 || n_qubits > MAX_QUBITS {
        return Err(Error::QubitCount(n_qubits));
    }
    Ok(())
}

/// Distinct non-identity Pauli strings of bounded weight. Distinct Pauli
/// strings are orthonormal under `Tr[P Q] / 2^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorPool {
    n_qubits: usize,
    locality: usize,
    members: Vec<PauliString>,
}

impl OperatorPool {
    pub fn new(n_qubits: usize, locality: usize, members: Vec<PauliString>) -> Result<Self> {
        check_qubits(n_qubits)?;
        if locality == 0 || locality > n_qubits {
            return Err(Error::LocalityOutOfRange { locality, n_qubits });
        }
        let mut seen = HashSet::with_capacity(members.len());
        for p in &members {
            if p.n_qubits() != n_qubits {
                return Err(Error::QubitMismatch {
                    left: n_qubits,
                    right: p.n_qubits(),
                });
            }
            if p.is_identity() {
                return Err(Error::InvalidPool("identity member".into()));
            }
            if p.weight() > locality {
                return Err(Error::InvalidPool(format!(
                    "{p} has weight {} > {locality}",
                    p.weight()
                )));
            }
            if !seen.insert(*p) {
                return Err(Error::InvalidPool(format!("duplicate member {p}")));
            }
        }
        Ok(OperatorPool {
            n_qubits,
            locality,
            members,
        })
    }

    /// Every string of weight `1..=locality`, ordered by weight, then by
    /// support (lexicographic over qubit indices), then by letters with
    /// X < Y < Z and the lowest qubit most significant.
    pub fn enumerate(n_qubits: usize, locality: usize) -> Result<Self> {
        check_qubits(n_qubits)?;
        if locality == 0 || locality > n_qubits {
            return Err(Error::LocalityOutOfRange { locality, n_qubits });
        }
        let mut members = Vec::with_capacity(pool_size(n_qubits, locality) as usize);
        const LETTERS: [Letter; 3] = [Letter::X, Letter::Y, Letter::Z];
        for weight in 1..=locality {
            for support in Combinations::new(n_qubits, weight) {
                for code in 0..3usize.pow(weight as u32) {
                    let mut letters = vec![Letter::I; n_qubits];
                    let mut rest = code;
                    for &q in support.iter().rev() {
                        letters[q] = LETTERS[rest % 3];
                        rest /= 3;
                    }
                    members.push(PauliString::from_letters(&letters)?);
                }
            }
        }
        Ok(OperatorPool {
            n_qubits,
            locality,
            members,
        })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn locality(&self) -> usize {
        self.locality
    }

    pub fn members(&self) -> &[PauliString] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// `n_c` distinct members drawn uniformly without replacement.
    pub fn sample<R: rand::Rng + ?Sized>(
        &self,
        n_c: usize,
        rng: &mut R,
    ) -> Result<Vec<PauliString>> {
        if n_c > self.members.len() {
            return Err(Error::PoolTooSmall {
                requested: n_c,
                available: self.members.len(),
            });
        }
        Ok(index::sample(rng, self.members.len(), n_c)
            .into_iter()
            .map(|i| self.members[i])
            .collect())
    }

    pub fn sample_seeded(&self, n_c: usize, seed: u64) -> Result<Vec<PauliString>> {
        self.sample(n_c, &mut crate::rng::seeded(seed))
    }

    /// Line-oriented text: a header line followed by one string per line.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "pool n_qubits={} locality={} size={}",
            self.n_qubits,
            self.locality,
            self.members.len()
        )?;
        for p in &self.members {
            writeln!(w, "{p}")?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("missing pool header".into()))??;
        let fields = parse_header(&header, "pool")?;
        let field = |key: &str| -> Result<usize> {
            fields
                .iter()
                .find(|(k, _)| k == key)
                .and_then(|(_, v)| v.parse().ok())
                .ok_or_else(|| Error::Format(format!("pool header lacks {key}")))
        };
        let (n_qubits, locality, size) = (field("n_qubits")?, field("locality")?, field("size")?);
        let mut members = Vec::with_capacity(size);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            members.push(line.parse()?);
        }
        if members.len() != size {
            return Err(Error::Format(format!(
                "pool header declares {size} members, found {}",
                members.len()
            )));
        }
        OperatorPool::new(n_qubits, locality, members)
    }
}

pub(crate) fn parse_header(line: &str, tag: &str) -> Result<Vec<(String, String)>> {
    let mut parts = line.split_whitespace();
    if parts.next() != Some(tag) {
        return Err(Error::Format(format!(
            "expected {tag:?} header, got {line:?}"
        )));
    }
    parts
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| Error::Format(format!("bad header field {kv:?}")))
        })
        .collect()
}

/// Number of strings with weight in `1..=locality`.
pub fn pool_size(n_qubits: usize, locality: usize) -> u128 {
    (1..=locality.min(n_qubits))
        .map(|w| binomial(n_qubits, w) * 3u128.pow(w as u32))
        .sum()
}

fn binomial(n: usize, k: usize) -> u128 {
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// k-subsets of 0..n in lexicographic order.
struct Combinations {
    n: usize,
    current: Option<Vec<usize>>,
}

impl Combinations {
    fn new(n: usize, k: usize) -> Self {
        Combinations {
            n,
            current: (k <= n).then(|| (0..k).collect()),
        }
    }
}

impl Iterator for Combinations {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let out = self.current.clone()?;
        let k = out.len();
        let mut next = out.clone();
        let mut i = k;
        loop {
            if i == 0 {
                self.current = None;
                break;
            }
            i -= 1;
            if next[i] < self.n - k + i {
                next[i] += 1;
                for j in i + 1..k {
                    next[j] = next[j - 1] + 1;
                }
                self.current = Some(next);
                break;
            }
        }
        Some(out)
    }
}
