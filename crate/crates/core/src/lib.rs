//! Covariance root finding for variational eigenstate preparation.
//!
//! A parametrised state is an eigenstate of `H` exactly when every covariance
//! `<O_k H> - <O_k><H>` against a pool of Pauli strings vanishes. This crate
//! samples those covariances from an [`ExpectationProvider`], builds their
//! Jacobian with the parameter-shift rule and drives them to zero with a
//! damped Gauss-Newton (Levenberg-Marquardt) iteration.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod circuit;
pub mod covariance;
pub mod error;
pub mod hamiltonians;
pub mod noise;
pub mod operator;
pub mod pauli;
pub mod provider;
pub mod rng;
pub mod shadows;
pub mod solver;
pub mod statevector;

pub use baselines::{Baseline, GdConfig, GdTarget, NatGradConfig};
pub use circuit::{build_hea, Ansatz, BoundCircuit, FixedGate, Gate};
pub use covariance::{CovariancePlan, CovarianceSystem, StackedSystem};
pub use error::{Error, Result};
pub use hamiltonians::{make_recompilation, make_spin_ring, RecompilationTask, SpinRingTask};
pub use noise::{CircuitNoiseConfig, CircuitNoiseProvider, ShotNoiseConfig, ShotNoiseProvider};
pub use operator::{exact_eigensystem, Eigensystem, HermitianOperator};
pub use pauli::{Letter, OperatorPool, PauliString, Phase, PhasedPauli};
pub use provider::{ExactProvider, ExpectationProvider, Usage};
pub use shadows::{plan_budget, SampleBudget, ShadowProvider, ShadowSet, Snapshot};
pub use solver::{
    covar_iterate, lm_step, IterationRecord, IterationTrace, LmConfig, Monitor, Problem,
    Regularizer, RunOutcome,
};
pub use statevector::Statevector;
