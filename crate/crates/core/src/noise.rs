//! Synthetic noise on top of another expectation provider.

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::circuit::BoundCircuit;
use crate::error::{Error, Result};
use crate::pauli::PauliString;
use crate::provider::{ExpectationProvider, StreamCounter, Usage};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShotNoiseConfig {
    pub n_shots: u64,
    pub seed: u64,
}

impl ShotNoiseConfig {
    pub fn new(n_shots: u64, seed: u64) -> Result<Self> {
        if n_shots == 0 {
            return Err(Error::InvalidArgument("n_shots must be at least 1".into()));
        }
        Ok(ShotNoiseConfig { n_shots, seed })
    }

    pub fn std_dev(&self) -> f64 {
        1.0 / (self.n_shots as f64).sqrt()
    }
}

/// Adds an independent `N(0, 1/N_s)` draw to every returned expectation.
#[derive(Debug)]
pub struct ShotNoiseProvider<P> {
    inner: P,
    config: ShotNoiseConfig,
    streams: StreamCounter,
}

impl<P: ExpectationProvider> ShotNoiseProvider<P> {
    pub fn new(inner: P, config: ShotNoiseConfig) -> Self {
        ShotNoiseProvider {
            inner,
            config,
            streams: StreamCounter::default(),
        }
    }
}

pub fn shot_noisy_provider<P: ExpectationProvider>(
    inner: P,
    config: ShotNoiseConfig,
) -> ShotNoiseProvider<P> {
    ShotNoiseProvider::new(inner, config)
}

impl<P: ExpectationProvider> ExpectationProvider for ShotNoiseProvider<P> {
    fn estimate_batch(
        &self,
        points: &[BoundCircuit<'_>],
        strings: &[PauliString],
    ) -> Result<Vec<Vec<f64>>> {
        let base = self.streams.reserve(points.len());
        let exact = self.inner.estimate_batch(points, strings)?;
        let normal = Normal::new(0.0, self.config.std_dev()).expect("finite std");
        Ok(exact
            .into_par_iter()
            .enumerate()
            .map(|(i, row)| {
                let mut rng = rng::stream(self.config.seed, base + i as u64);
                row.into_iter()
                    .map(|v| (v + normal.sample(&mut rng)).clamp(-1.0, 1.0))
                    .collect()
            })
            .collect())
    }

    fn usage(&self) -> Usage {
        self.inner.usage()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircuitNoiseConfig {
    pub fidelity: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl CircuitNoiseConfig {
    pub const DEFAULT_SIGMA: f64 = 0.01;

    pub fn new(fidelity: f64, sigma: f64, seed: u64) -> Result<Self> {
        if !(fidelity > 0.0 && fidelity <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "fidelity must lie in (0, 1], got {fidelity}"
            )));
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sigma must be >= 0, got {sigma}"
            )));
        }
        Ok(CircuitNoiseConfig {
            fidelity,
            sigma,
            seed,
        })
    }
}

/// `F <O>_ideal + (1 - F) eps_O` with `eps_O ~ N(0, sigma^2)` drawn once per
/// observable: the overlap of a fixed error state with `O`.
#[derive(Debug)]
pub struct CircuitNoiseProvider<P> {
    inner: P,
    config: CircuitNoiseConfig,
}

impl<P: ExpectationProvider> CircuitNoiseProvider<P> {
    pub fn new(inner: P, config: CircuitNoiseConfig) -> Self {
        CircuitNoiseProvider { inner, config }
    }

    /// The fixed error-state overlap of `p`.
    pub fn offset(&self, p: &PauliString) -> f64 {
        if self.config.sigma == 0.0 {
            return 0.0;
        }
        let key = rng::derive_seed(p.x_mask(), p.z_mask() ^ ((p.n_qubits() as u64) << 58));
        let mut rng = rng::stream(self.config.seed, key);
        Normal::new(0.0, self.config.sigma)
            .expect("finite sigma")
            .sample(&mut rng)
    }
}

pub fn circuit_noisy_provider<P: ExpectationProvider>(
    inner: P,
    config: CircuitNoiseConfig,
) -> CircuitNoiseProvider<P> {
    CircuitNoiseProvider::new(inner, config)
}

impl<P: ExpectationProvider> ExpectationProvider for CircuitNoiseProvider<P> {
    fn estimate_batch(
        &self,
        points: &[BoundCircuit<'_>],
        strings: &[PauliString],
    ) -> Result<Vec<Vec<f64>>> {
        let exact = self.inner.estimate_batch(points, strings)?;
        let offsets: Vec<f64> = strings.iter().map(|p| self.offset(p)).collect();
        let f = self.config.fidelity;
        Ok(exact
            .into_iter()
            .map(|row| {
                row.into_iter()
                    .zip(&offsets)
                    .map(|(v, eps)| (f * v + (1.0 - f) * eps).clamp(-1.0, 1.0))
                    .collect()
            })
            .collect())
    }

    fn usage(&self) -> Usage {
        self.inner.usage()
    }
}

/// Circuit fidelity `(1 - eps1)^n1 (1 - eps2)^n2` from single- and two-qubit
/// gate error rates and gate counts.
pub fn fidelity_from_rates(eps1: f64, eps2: f64, n1_gates: u32, n2_gates: u32) -> Result<f64> {
    for eps in [eps1, eps2] {
        if !(0.0..1.0).contains(&eps) {
            return Err(Error::InvalidArgument(format!(
                "error rate {eps} outside [0, 1)"
            )));
        }
    }
    Ok((1.0 - eps1).powi(n1_gates as i32) * (1.0 - eps2).powi(n2_gates as i32))
}
