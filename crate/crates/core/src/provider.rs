//! Sources of Pauli expectation values.
//!
//! Covariances and Jacobians are assembled purely from expectation values of
//! Pauli strings, so the same optimiser runs against exact simulation, noisy
//! estimates or classical shadows. Queries arrive in batches of circuit
//! points; stochastic providers reserve a contiguous block of stream indices
//! per batch so results do not depend on thread scheduling.

use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;

use crate::circuit::BoundCircuit;
use crate::error::Result;
use crate::pauli::PauliString;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Usage {
    /// Circuit configurations evaluated.
    pub points: u64,
    /// Classical-shadow snapshots drawn, when applicable.
    pub snapshots: u64,
}

pub trait ExpectationProvider: Send + Sync {
    /// Estimates `<P>` for every string at every point; `result[i][j]` belongs
    /// to `points[i]` and `strings[j]`. Values lie in [-1, 1].
    fn estimate_batch(
        &self,
        points: &[BoundCircuit<'_>],
        strings: &[PauliString],
    ) -> Result<Vec<Vec<f64>>>;

    fn estimate(&self, point: &BoundCircuit<'_>, strings: &[PauliString]) -> Result<Vec<f64>> {
        Ok(self
            .estimate_batch(std::slice::from_ref(point), strings)?
            .pop()
            .expect("one row per point"))
    }

    fn usage(&self) -> Usage;
}

impl<P: ExpectationProvider + ?Sized> ExpectationProvider for Box<P> {
    fn estimate_batch(
        &self,
        points: &[BoundCircuit<'_>],
        strings: &[PauliString],
    ) -> Result<Vec<Vec<f64>>> {
        (**self).estimate_batch(points, strings)
    }

    fn usage(&self) -> Usage {
        (**self).usage()
    }
}

impl<P: ExpectationProvider + ?Sized> ExpectationProvider for &P {
    fn estimate_batch(
        &self,
        points: &[BoundCircuit<'_>],
        strings: &[PauliString],
    ) -> Result<Vec<Vec<f64>>> {
        (**self).estimate_batch(points, strings)
    }

    fn usage(&self) -> Usage {
        (**self).usage()
    }
}

/// Exact statevector expectations.
#[derive(Debug, Default)]
pub struct ExactProvider {
    points: AtomicU64,
}

impl ExactProvider {
    pub fn new() -> Self {
        Self::default()
    }
}

impl ExpectationProvider for ExactProvider {
    fn estimate_batch(
        &self,
        points: &[BoundCircuit<'_>],
        strings: &[PauliString],
    ) -> Result<Vec<Vec<f64>>> {
        self.points
            .fetch_add(points.len() as u64, Ordering::Relaxed);
        points
            .par_iter()
            .map(|point| {
                let state = point.prepare()?;
                Ok(strings
                    .par_iter()
                    .with_min_len(64)
                    .map(|p| state.pauli_expectation(p).clamp(-1.0, 1.0))
                    .collect())
            })
            .collect()
    }

    fn usage(&self) -> Usage {
        Usage {
            points: self.points.load(Ordering::Relaxed),
            snapshots: 0,
        }
    }
}

/// Hands out disjoint blocks of stream indices to successive batches.
#[derive(Debug, Default)]
pub(crate) struct StreamCounter(AtomicU64);

impl StreamCounter {
    pub(crate) fn reserve(&self, n: usize) -> u64 {
        self.0.fetch_add(n as u64, Ordering::Relaxed)
    }

    pub(crate) fn issued(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }
}
