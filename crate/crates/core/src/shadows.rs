//! Classical shadows from random single-qubit Pauli-basis measurements.
//!
//! A snapshot records the measured basis and outcome bit of every qubit. For
//! a Pauli string `P` of weight `w` the snapshot estimator is
//! `prod_{q in supp P} 3 s_q` when every supported qubit was measured in the
//! basis of its letter (`s_q = +1` for outcome 0, `-1` for outcome 1) and
//! zero otherwise, which is `Tr[P rho_hat]` for the inverted measurement
//! channel without forming the snapshot matrices. Expectations are
//! median-of-means over `K` contiguous batches.

use std::io::{Read, Write};
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rayon::prelude::*;

use crate::circuit::BoundCircuit;
use crate::error::{Error, Result};
use crate::pauli::{Letter, PauliString};
use crate::provider::{ExpectationProvider, StreamCounter, Usage};
use crate::rng;
use crate::statevector::Statevector;

const MAGIC: &[u8; 4] = b"CVSH";
const FORMAT_VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Snapshot {
    /// Full-weight string naming the measured basis of each qubit.
    basis: PauliString,
    /// Bit `q` is the outcome on qubit `q`.
    outcomes: u64,
}

impl Snapshot {
    pub fn new(bases: &[Letter], outcomes: &[bool]) -> Result<Self> {
        if bases.len() != outcomes.len() {
            return Err(Error::LengthMismatch(format!(
                "{} bases for {} outcomes",
                bases.len(),
                outcomes.len()
            )));
        }
        if bases.contains(&Letter::I) {
            return Err(Error::InvalidArgument(
                "snapshot basis must be X, Y or Z".into(),
            ));
        }
        let bits = outcomes
            .iter()
            .enumerate()
            .fold(0u64, |acc, (q, &b)| acc | ((b as u64) << q));
        Ok(Snapshot {
            basis: PauliString::from_letters(bases)?,
            outcomes: bits,
        })
    }

    pub fn n_qubits(&self) -> usize {
        self.basis.n_qubits()
    }

    pub fn bases(&self) -> Vec<Letter> {
        self.basis.letters()
    }

    pub fn outcome(&self, q: usize) -> bool {
        (self.outcomes >> q) & 1 == 1
    }

    /// Single-snapshot estimate of `<P>`.
    pub fn estimate(&self, p: &PauliString) -> f64 {
        let support = p.support();
        let mismatch =
            ((self.basis.x_mask() ^ p.x_mask()) | (self.basis.z_mask() ^ p.z_mask())) & support;
        if mismatch != 0 {
            return 0.0;
        }
        let magnitude = 3f64.powi(p.weight() as i32);
        if (self.outcomes & support).count_ones() % 2 == 0 {
            magnitude
        } else {
            -magnitude
        }
    }
}

/// Snapshots in acquisition order, split into `n_batches` contiguous batches
/// of `floor(len / n_batches)` snapshots each.
#[derive(Debug, Clone, PartialEq)]
pub struct ShadowSet {
    n_qubits: usize,
    snapshots: Vec<Snapshot>,
    n_batches: usize,
}

impl ShadowSet {
    pub fn new(n_qubits: usize, snapshots: Vec<Snapshot>, n_batches: usize) -> Result<Self> {
        if snapshots.iter().any(|s| s.n_qubits() != n_qubits) {
            return Err(Error::InvalidArgument(
                "snapshot qubit count differs".into(),
            ));
        }
        let set = ShadowSet {
            n_qubits,
            snapshots,
            n_batches: 1,
        };
        set.with_batches(n_batches)
    }

    /// Draws `n_snapshots` independent snapshots of `state`: uniformly random
    /// bases, outcomes from the Born distribution in that basis.
    pub fn acquire(state: &Statevector, n_snapshots: usize, seed: u64) -> Result<Self> {
        if n_snapshots == 0 {
            return Err(Error::InvalidArgument(
                "at least one snapshot is required".into(),
            ));
        }
        let n = state.n_qubits();
        let snapshots = (0..n_snapshots)
            .into_par_iter()
            .with_min_len(256)
            .map(|i| draw_snapshot(state, &mut rng::stream(seed, i as u64)))
            .collect::<Result<Vec<_>>>()?;
        Ok(ShadowSet {
            n_qubits: n,
            snapshots,
            n_batches: 1,
        })
    }

    pub fn with_batches(mut self, n_batches: usize) -> Result<Self> {
        if n_batches == 0 || n_batches > self.snapshots.len().max(1) {
            return Err(Error::InvalidArgument(format!(
                "{n_batches} batches for {} snapshots",
                self.snapshots.len()
            )));
        }
        self.n_batches = n_batches;
        Ok(self)
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn n_batches(&self) -> usize {
        self.n_batches
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    /// Median over batches of the mean single-snapshot estimate.
    pub fn estimate(&self, p: &PauliString) -> Result<f64> {
        if self.snapshots.is_empty() {
            return Err(Error::Empty("shadow set"));
        }
        if p.is_identity() {
            return Err(Error::IdentityString);
        }
        if p.n_qubits() != self.n_qubits {
            return Err(Error::QubitMismatch {
                left: self.n_qubits,
                right: p.n_qubits(),
            });
        }
        let per_batch = self.snapshots.len() / self.n_batches;
        let mut means: Vec<f64> = self
            .snapshots
            .chunks_exact(per_batch)
            .take(self.n_batches)
            .map(|batch| batch.iter().map(|s| s.estimate(p)).sum::<f64>() / per_batch as f64)
            .collect();
        Ok(median(&mut means))
    }

    pub fn estimate_many(&self, strings: &[PauliString]) -> Result<Vec<f64>> {
        strings.par_iter().map(|p| self.estimate(p)).collect()
    }

    /// Binary record: magic, version, qubit count, batch count, snapshot
    /// count, then per snapshot the bases as 2-bit codes (X=1, Y=2, Z=3)
    /// followed by the outcome bits, each packed little-endian into bytes.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&[FORMAT_VERSION, self.n_qubits as u8])?;
        w.write_all(&(self.n_batches as u32).to_le_bytes())?;
        w.write_all(&(self.snapshots.len() as u64).to_le_bytes())?;
        let (basis_bytes, outcome_bytes) = record_widths(self.n_qubits);
        for s in &self.snapshots {
            let mut codes = 0u128;
            for (q, letter) in s.bases().iter().enumerate() {
                let code = match letter {
                    Letter::X => 1u128,
                    Letter::Y => 2,
                    Letter::Z => 3,
                    Letter::I => unreachable!("snapshots never hold identity"),
                };
                codes |= code << (2 * q);
            }
            w.write_all(&codes.to_le_bytes()[..basis_bytes])?;
            w.write_all(&s.outcomes.to_le_bytes()[..outcome_bytes])?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; 18];
        r.read_exact(&mut header)?;
        if &header[..4] != MAGIC || header[4] != FORMAT_VERSION {
            return Err(Error::Format("not a shadow record".into()));
        }
        let n_qubits = header[5] as usize;
        let n_batches = u32::from_le_bytes(header[6..10].try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(header[10..18].try_into().unwrap()) as usize;
        if n_qubits == 0 || n_qubits > 64 {
            return Err(Error::Format(format!("bad qubit count {n_qubits}")));
        }
        let (basis_bytes, outcome_bytes) = record_widths(n_qubits);
        let mut snapshots = Vec::with_capacity(count.min(1 << 24));
        let mut buf = vec![0u8; basis_bytes + outcome_bytes];
        for _ in 0..count {
            r.read_exact(&mut buf)?;
            let mut code_bytes = [0u8; 16];
            code_bytes[..basis_bytes].copy_from_slice(&buf[..basis_bytes]);
            let codes = u128::from_le_bytes(code_bytes);
            let mut outcome_buf = [0u8; 8];
            outcome_buf[..outcome_bytes].copy_from_slice(&buf[basis_bytes..]);
            let outcomes = u64::from_le_bytes(outcome_buf);
            let bases = (0..n_qubits)
                .map(|q| match (codes >> (2 * q)) & 3 {
                    1 => Ok(Letter::X),
                    2 => Ok(Letter::Y),
                    3 => Ok(Letter::Z),
                    _ => Err(Error::Format("invalid basis code".into())),
                })
                .collect::<Result<Vec<_>>>()?;
            let bits: Vec<bool> = (0..n_qubits).map(|q| (outcomes >> q) & 1 == 1).collect();
            snapshots.push(Snapshot::new(&bases, &bits)?);
        }
        ShadowSet::new(n_qubits, snapshots, n_batches)
    }
}

fn record_widths(n_qubits: usize) -> (usize, usize) {
    ((2 * n_qubits).div_ceil(8), n_qubits.div_ceil(8))
}

fn draw_snapshot<R: Rng + ?Sized>(state: &Statevector, rng: &mut R) -> Result<Snapshot> {
    const BASES: [Letter; 3] = [Letter::X, Letter::Y, Letter::Z];
    let n = state.n_qubits();
    let bases: Vec<Letter> = (0..n).map(|_| BASES[rng.random_range(0..3)]).collect();
    let mut rotated = state.clone();
    for (q, letter) in bases.iter().enumerate() {
        match letter {
            Letter::X => rotated.apply_hadamard(q),
            Letter::Y => {
                rotated.apply_sdg(q);
                rotated.apply_hadamard(q);
            }
            _ => {}
        }
    }
    let u: f64 = rng.random();
    let mut cumulative = 0.0;
    let mut outcome = rotated.dim() - 1;
    for (i, a) in rotated.amplitudes().iter().enumerate() {
        cumulative += a.norm_sqr();
        if u < cumulative {
            outcome = i;
            break;
        }
    }
    let bits: Vec<bool> = (0..n).map(|q| (outcome >> q) & 1 == 1).collect();
    Snapshot::new(&bases, &bits)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}

/// Median-of-means sample plan for `n_observables` Pauli strings of weight
/// `locality`: `K = ceil(2 ln(2M / delta))` batches of
/// `ceil(34 * 3^l / epsilon^2)` snapshots.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleBudget {
    pub epsilon: f64,
    pub delta: f64,
    pub locality: usize,
    pub n_observables: usize,
    pub n_batches: usize,
    pub n_per_batch: usize,
}

impl SampleBudget {
    pub fn total(&self) -> usize {
        self.n_batches * self.n_per_batch
    }
}

pub fn plan_budget(
    epsilon: f64,
    delta: f64,
    locality: usize,
    n_observables: usize,
) -> Result<SampleBudget> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "delta must lie in (0, 1], got {delta}"
        )));
    }
    if n_observables == 0 {
        return Err(Error::InvalidArgument("at least one observable".into()));
    }
    // Guard against 0.1^2 style rounding pushing an exact integer up by one.
    let ceil = |x: f64| (x - 1e-9 * x.abs().max(1.0)).ceil().max(1.0) as usize;
    let n_batches = ceil(2.0 * (2.0 * n_observables as f64 / delta).ln());
    let n_per_batch = ceil(34.0 * 3f64.powi(locality as i32) / (epsilon * epsilon));
    Ok(SampleBudget {
        epsilon,
        delta,
        locality,
        n_observables,
        n_batches,
        n_per_batch,
    })
}

/// Answers every query from one fresh shadow set per circuit point.
#[derive(Debug)]
pub struct ShadowProvider {
    budget: SampleBudget,
    seed: u64,
    streams: StreamCounter,
    snapshots: AtomicU64,
}

impl ShadowProvider {
    pub fn new(budget: SampleBudget, seed: u64) -> Self {
        ShadowProvider {
            budget,
            seed,
            streams: StreamCounter::default(),
            snapshots: AtomicU64::new(0),
        }
    }

    pub fn budget(&self) -> &SampleBudget {
        &self.budget
    }
}

pub fn shadow_provider(budget: SampleBudget, seed: u64) -> ShadowProvider {
    ShadowProvider::new(budget, seed)
}

impl ExpectationProvider for ShadowProvider {
    fn estimate_batch(
        &self,
        points: &[BoundCircuit<'_>],
        strings: &[PauliString],
    ) -> Result<Vec<Vec<f64>>> {
        let base = self.streams.reserve(points.len());
        let total = self.budget.total();
        self.snapshots
            .fetch_add((total * points.len()) as u64, Ordering::Relaxed);
        points
            .par_iter()
            .enumerate()
            .map(|(i, point)| {
                let state = point.prepare()?;
                let seed = rng::derive_seed(self.seed, base + i as u64);
                let shadows =
                    ShadowSet::acquire(&state, total, seed)?.with_batches(self.budget.n_batches)?;
                Ok(shadows
                    .estimate_many(strings)?
                    .into_iter()
                    .map(|v| v.clamp(-1.0, 1.0))
                    .collect())
            })
            .collect()
    }

    fn usage(&self) -> Usage {
        Usage {
            points: self.streams.issued(),
            snapshots: self.snapshots.load(Ordering::Relaxed),
        }
    }
}
