//! Drivers that turn a validated [`ExperimentConfig`] into runs and files.
//!
//! Seeds run in parallel; each writes its own trace files and returns a row,
//! and the coordinator writes the merged summary afterwards. Nothing random
//! depends on thread scheduling, so identical configs give identical files.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use covar_core::baselines::run_baseline;
use covar_core::solver::{noise_floor_probe, overdetermination_demo, NoiseFloorSettings};
use covar_core::{
    build_hea, covar_iterate, exact_eigensystem, make_recompilation, make_spin_ring, plan_budget,
    rng, Ansatz, Baseline, CircuitNoiseConfig, CircuitNoiseProvider, Eigensystem, ExactProvider,
    ExpectationProvider, GdConfig, GdTarget, HermitianOperator, IterationTrace, LmConfig, Monitor,
    NatGradConfig, OperatorPool, Problem, Regularizer, RunOutcome, ShadowProvider, ShotNoiseConfig,
    ShotNoiseProvider,
};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, OptimizerKind, ProviderConfig, RegularizerKind, TaskConfig};
use crate::error::CliError;
use crate::summary::{write_json, write_rows, write_trace, Quartiles, RunSummary, SeedRow};

// Stream tags keep the random draws of different roles independent.
const INIT_STREAM: u64 = 0x1417;
const PROVIDER_STREAM: u64 = 0x9201;
const SOLVER_STREAM: u64 = 0x50_17e2;
const HANDOVER_STREAM: u64 = 0x4a0d;

/// Everything a seed needs to run an optimiser.
struct Setup {
    circuit: Ansatz,
    hamiltonian: HermitianOperator,
    monitor: Monitor,
    theta0: Vec<f64>,
    spectrum: Spectrum,
}

enum Spectrum {
    /// `-sum_j Z_j` on `n` qubits: eigenvalues `-n + 2k`.
    Recompilation(usize),
    Exact(Eigensystem),
}

impl Spectrum {
    fn ground(&self) -> f64 {
        match self {
            Spectrum::Recompilation(n) => -(*n as f64),
            Spectrum::Exact(e) => e.ground_energy(),
        }
    }

    fn nearest(&self, energy: f64) -> (usize, f64) {
        match self {
            Spectrum::Recompilation(n) => {
                let k = ((energy + *n as f64) / 2.0).round().clamp(0.0, *n as f64);
                (k as usize, (energy - (2.0 * k - *n as f64)).abs())
            }
            Spectrum::Exact(e) => e.nearest(energy),
        }
    }
}

fn random_angles(n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng::stream(seed, INIT_STREAM);
    (0..n).map(|_| r.random_range(-PI..PI)).collect()
}

fn ring_spectrum(
    n: usize,
    coupling: f64,
    hamiltonian_seed: u64,
) -> Result<(HermitianOperator, Eigensystem), CliError> {
    let ring = make_spin_ring(n, coupling, hamiltonian_seed)?;
    let eig = exact_eigensystem(&ring.hamiltonian)?;
    Ok((ring.hamiltonian, eig))
}

fn setup(config: &ExperimentConfig, seed: u64) -> Result<Setup, CliError> {
    match &config.task {
        TaskConfig::Recompilation {
            qubits,
            layers,
            perturbation,
        } => {
            let (task, theta0) = make_recompilation(*qubits, *layers, seed, *perturbation)?;
            Ok(Setup {
                circuit: task.circuit().clone(),
                hamiltonian: task.hamiltonian.clone(),
                monitor: Monitor::Recompilation,
                theta0,
                spectrum: Spectrum::Recompilation(*qubits),
            })
        }
        TaskConfig::SpinRing {
            qubits,
            layers,
            coupling,
            hamiltonian_seed,
        }
        | TaskConfig::LocalTrapEscape {
            qubits,
            layers,
            coupling,
            hamiltonian_seed,
            ..
        }
        | TaskConfig::ConvergenceDistribution {
            qubits,
            layers,
            coupling,
            hamiltonian_seed,
            ..
        } => {
            let (hamiltonian, eig) = ring_spectrum(*qubits, *coupling, *hamiltonian_seed)?;
            let circuit = build_hea(*qubits, *layers)?;
            let theta0 = random_angles(circuit.n_params(), seed);
            Ok(Setup {
                circuit,
                hamiltonian,
                monitor: Monitor::Energy,
                theta0,
                spectrum: Spectrum::Exact(eig),
            })
        }
        _ => unreachable!("only optimisation tasks build a setup"),
    }
}

/// Builds the configured provider, with `shots` overriding the shot count
/// of shot-noise providers.
pub fn make_provider(
    config: &ExperimentConfig,
    seed: u64,
    shots: Option<u64>,
    n_constraints: usize,
) -> Result<Box<dyn ExpectationProvider>, CliError> {
    let seed = rng::derive_seed(seed, PROVIDER_STREAM);
    Ok(match &config.provider {
        ProviderConfig::Exact => match shots {
            Some(s) => Box::new(ShotNoiseProvider::new(
                ExactProvider::new(),
                ShotNoiseConfig::new(s, seed)?,
            )),
            None => Box::new(ExactProvider::new()),
        },
        ProviderConfig::ShotNoise { shots: base } => Box::new(ShotNoiseProvider::new(
            ExactProvider::new(),
            ShotNoiseConfig::new(shots.unwrap_or(*base), seed)?,
        )),
        ProviderConfig::CircuitNoise {
            fidelity,
            sigma,
            shots: base,
        } => {
            let noisy = CircuitNoiseProvider::new(
                ExactProvider::new(),
                CircuitNoiseConfig::new(*fidelity, *sigma, seed)?,
            );
            match shots.or(*base) {
                Some(s) => Box::new(ShotNoiseProvider::new(
                    noisy,
                    ShotNoiseConfig::new(s, rng::derive_seed(seed, 1))?,
                )),
                None => Box::new(noisy),
            }
        }
        ProviderConfig::Shadows { epsilon, delta } => {
            // Products O_k H_a reach weight q plus the largest Hamiltonian
            // term weight; every product and every constraint is estimated.
            let h_weight = 2;
            let locality = (config.pool_locality + h_weight).min(config.task.qubits());
            let n_h = 4 * config.task.qubits();
            let observables = n_constraints * (n_h + 1) + n_h;
            let budget = plan_budget(*epsilon, *delta, locality, observables)?;
            Box::new(ShadowProvider::new(budget, seed))
        }
    })
}

fn lm_config(config: &ExperimentConfig, n_constraints: usize) -> LmConfig {
    let o = &config.optimizer;
    let mut c = LmConfig::new(n_constraints);
    c.lambda0 = o.lambda0;
    c.lambda_growth = o.lambda_growth;
    c.regularizer = match o.regularizer {
        RegularizerKind::Identity => Regularizer::Identity,
        RegularizerKind::NormalDiagonal => Regularizer::NormalDiagonal,
    };
    c.max_component_step = o.max_component_step;
    c.max_iterations = o.iterations;
    c.convergence_tol = o.convergence_tol;
    c.resample_each_iteration = o.resample_each_iteration;
    c.linesearch_enabled = o.linesearch;
    c.fresh_acceptance_sample = o.fresh_acceptance_sample;
    c
}

fn nat_grad(config: &ExperimentConfig, iterations: usize, stop_energy: Option<f64>) -> Baseline {
    let mut c = NatGradConfig::new(iterations);
    c.learning_rate = config.optimizer.nat_grad_learning_rate;
    c.stop_energy = stop_energy;
    Baseline::NaturalGradient(c)
}

fn jitter(theta: &[f64], scale: f64, seed: u64) -> Vec<f64> {
    if scale == 0.0 {
        return theta.to_vec();
    }
    let mut r = rng::stream(seed, HANDOVER_STREAM);
    theta
        .iter()
        .map(|t| t + r.random_range(-scale..=scale))
        .collect()
}

struct Optimised {
    outcome: RunOutcome,
    /// Natural-gradient phase preceding CoVaR, if any.
    initialisation: Option<IterationTrace>,
}

fn optimise(
    config: &ExperimentConfig,
    setup: &Setup,
    pool: &OperatorPool,
    provider: &dyn ExpectationProvider,
    n_constraints: usize,
    seed: u64,
) -> Result<Optimised, CliError> {
    let problem = Problem::new(&setup.circuit, &setup.hamiltonian, pool.members())
        .with_monitor(setup.monitor)
        .with_wall_time(config.record_wall_time);
    let o = &config.optimizer;
    let solver_seed = rng::derive_seed(seed, SOLVER_STREAM);
    let gd = |target| {
        let mut c = GdConfig::new(target, o.iterations);
        c.learning_rate = o.learning_rate;
        Baseline::GradientDescent(c)
    };
    let single = |outcome| Optimised {
        outcome,
        initialisation: None,
    };
    Ok(match o.kind {
        OptimizerKind::Covar => single(covar_iterate(
            provider,
            &problem,
            &setup.theta0,
            &lm_config(config, n_constraints),
            solver_seed,
        )?),
        OptimizerKind::Vqe => single(run_baseline(
            &gd(GdTarget::Energy),
            provider,
            &problem,
            &setup.theta0,
        )?),
        OptimizerKind::VarianceVqe => single(run_baseline(
            &gd(GdTarget::Variance),
            provider,
            &problem,
            &setup.theta0,
        )?),
        OptimizerKind::NatGrad => single(run_baseline(
            &nat_grad(config, o.iterations, None),
            provider,
            &problem,
            &setup.theta0,
        )?),
        OptimizerKind::NatGradThenCovar => {
            let stop = setup.spectrum.ground() + o.target_gap;
            let init = run_baseline(
                &nat_grad(config, o.nat_grad_iterations, Some(stop)),
                provider,
                &problem,
                &setup.theta0,
            )?;
            let start = jitter(&init.theta, o.handover_perturbation, seed);
            let outcome = covar_iterate(
                provider,
                &problem,
                &start,
                &lm_config(config, n_constraints),
                solver_seed,
            )?;
            Optimised {
                outcome,
                initialisation: Some(init.trace),
            }
        }
    })
}

fn seed_row(
    setup: &Setup,
    optimised: &Optimised,
    provider: &dyn ExpectationProvider,
    seed: u64,
    n_constraints: usize,
    n_shots: Option<u64>,
) -> SeedRow {
    let trace = &optimised.outcome.trace;
    let last = trace.last().expect("traces hold the initial record");
    let (index, gap) = setup.spectrum.nearest(last.energy);
    let usage = provider.usage();
    SeedRow {
        seed,
        n_constraints,
        n_shots,
        energy: last.energy,
        delta_e: last.energy - setup.spectrum.ground(),
        nearest_eigen_index: index,
        nearest_eigen_gap: gap,
        variance: last.variance,
        infidelity: last.infidelity,
        infidelity_max_basis: last.infidelity_max_basis,
        iterations: trace.iterations(),
        flagged: trace.flagged(),
        converged: optimised.outcome.converged,
        provider_points: usage.points,
        snapshots: usage.snapshots,
    }
}

fn task_name(task: &TaskConfig) -> &'static str {
    match task {
        TaskConfig::Recompilation { .. } => "recompilation",
        TaskConfig::SpinRing { .. } => "spin_ring",
        TaskConfig::OverdeterminationDemo { .. } => "overdetermination_demo",
        TaskConfig::NoiseFloorProbe { .. } => "noise_floor_probe",
        TaskConfig::LocalTrapEscape { .. } => "local_trap_escape",
        TaskConfig::ConvergenceDistribution { .. } => "convergence_distribution",
    }
}

fn optimizer_name(kind: OptimizerKind) -> &'static str {
    match kind {
        OptimizerKind::Covar => "covar",
        OptimizerKind::Vqe => "vqe",
        OptimizerKind::VarianceVqe => "variance_vqe",
        OptimizerKind::NatGrad => "nat_grad",
        OptimizerKind::NatGradThenCovar => "nat_grad_then_covar",
    }
}

fn seed_dir(base: &Path, seed: u64) -> Result<PathBuf, CliError> {
    let dir = base.join(format!("seed_{seed}"));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

/// One point of a constraint-count / shot-count sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n_constraints: usize,
    pub constraint_ratio: f64,
    pub n_shots: Option<u64>,
    pub seeds: usize,
    pub median_infidelity: Option<f64>,
    pub median_delta_e: f64,
    pub lower_delta_e: f64,
    pub upper_delta_e: f64,
    pub median_iterations: f64,
}

/// What a finished experiment reports back to the caller.
#[derive(Debug, Clone, PartialEq)]
pub enum Report {
    Runs(Vec<RunSummary>),
    Sweep(Vec<SweepRow>),
    Overdetermination(Vec<OverdeterminationRow>),
    NoiseFloor(Vec<NoiseFloorOutput>),
    LocalTrap(LocalTrapSummary),
    Distribution(DistributionSummary),
}

/// Runs the experiment described by `config`, writing into
/// `config.output_dir`.
pub fn run(config: &ExperimentConfig) -> Result<Report, CliError> {
    fs::create_dir_all(&config.output_dir)?;
    match &config.task {
        TaskConfig::Recompilation { .. } | TaskConfig::SpinRing { .. } => run_optimisation(config),
        TaskConfig::OverdeterminationDemo { .. } => {
            overdetermination(config).map(Report::Overdetermination)
        }
        TaskConfig::NoiseFloorProbe { .. } => noise_floor(config).map(Report::NoiseFloor),
        TaskConfig::LocalTrapEscape { .. } => local_trap_escape(config).map(Report::LocalTrap),
        TaskConfig::ConvergenceDistribution { .. } => {
            convergence_distribution(config).map(Report::Distribution)
        }
    }
}

fn run_ensemble(
    config: &ExperimentConfig,
    pool: &OperatorPool,
    out: &Path,
    n_constraints: usize,
    shots: Option<u64>,
) -> Result<RunSummary, CliError> {
    let rows = config
        .seeds
        .par_iter()
        .map(|&seed| {
            let setup = setup(config, seed)?;
            let provider = make_provider(config, seed, shots, n_constraints)?;
            let optimised = optimise(config, &setup, pool, provider.as_ref(), n_constraints, seed)?;
            let dir = seed_dir(out, seed)?;
            write_trace(&dir.join("trace.csv"), &optimised.outcome.trace)?;
            if let Some(init) = &optimised.initialisation {
                write_trace(&dir.join("init_trace.csv"), init)?;
            }
            let n_shots = shots.or(match config.provider {
                ProviderConfig::ShotNoise { shots } => Some(shots),
                ProviderConfig::CircuitNoise { shots, .. } => shots,
                _ => None,
            });
            Ok(seed_row(
                &setup,
                &optimised,
                provider.as_ref(),
                seed,
                n_constraints,
                n_shots,
            ))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let summary = RunSummary::new(
        task_name(&config.task),
        optimizer_name(config.optimizer.kind),
        rows,
    );
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

fn run_optimisation(config: &ExperimentConfig) -> Result<Report, CliError> {
    let pool = OperatorPool::enumerate(config.task.qubits(), config.pool_locality)?;
    if !config.is_sweep() {
        let summary = run_ensemble(
            config,
            &pool,
            &config.output_dir,
            config.constraints_for(None),
            None,
        )?;
        return Ok(Report::Runs(vec![summary]));
    }
    let sweep = config.sweep.clone().unwrap_or_default();
    let nu = config.task.n_params() as f64;
    let counts: Vec<usize> = if sweep.constraint_ratios.is_empty() {
        vec![config.constraints_for(None)]
    } else {
        sweep
            .constraint_ratios
            .iter()
            .map(|r| config.constraints_for(Some(*r)))
            .collect()
    };
    let shots: Vec<Option<u64>> = if sweep.shots.is_empty() {
        vec![None]
    } else {
        sweep.shots.iter().copied().map(Some).collect()
    };
    let mut table = Vec::new();
    for &n_c in &counts {
        for &s in &shots {
            let name = match s {
                Some(s) => format!("nc_{n_c}_shots_{s}"),
                None => format!("nc_{n_c}"),
            };
            let dir = config.output_dir.join(name);
            fs::create_dir_all(&dir)?;
            let summary = run_ensemble(config, &pool, &dir, n_c, s)?;
            let delta = summary.aggregates["delta_e"];
            table.push(SweepRow {
                n_constraints: n_c,
                constraint_ratio: n_c as f64 / nu,
                n_shots: s,
                seeds: summary.rows.len(),
                median_infidelity: summary.aggregates.get("infidelity").map(|q| q.median),
                median_delta_e: delta.median,
                lower_delta_e: delta.lower,
                upper_delta_e: delta.upper,
                median_iterations: summary.aggregates["iterations"].median,
            });
        }
    }
    write_rows(&config.output_dir.join("sweep.csv"), &table)?;
    Ok(Report::Sweep(table))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverdeterminationRow {
    pub seed: u64,
    pub parameter: usize,
    pub disturbance: f64,
    pub n_constraints: usize,
    pub usable_constraints: usize,
    pub ls_estimate: f64,
    pub mean_newton: f64,
    pub ls_closer: bool,
}

fn overdetermination(config: &ExperimentConfig) -> Result<Vec<OverdeterminationRow>, CliError> {
    let TaskConfig::OverdeterminationDemo {
        qubits,
        layers,
        parameter,
        disturbance,
    } = config.task
    else {
        unreachable!()
    };
    let pool = OperatorPool::enumerate(qubits, config.pool_locality)?;
    let n_c = config.constraints_for(None);
    // One fixed circuit; the seed list picks the constraint samples.
    let (task, _) = make_recompilation(qubits, layers, 0, 0.0)?;
    let index = parameter.unwrap_or(task.ansatz.n_params() / 2);
    let rows = config
        .seeds
        .par_iter()
        .map(|&seed| {
            let picks = rand::seq::index::sample(&mut rng::seeded(seed), pool.len(), n_c);
            let constraints: Vec<_> = picks.into_iter().map(|i| pool.members()[i]).collect();
            let est = overdetermination_demo(
                task.circuit(),
                &task.hidden_params,
                index,
                disturbance,
                &constraints,
                &task.hamiltonian,
            )?;
            Ok(OverdeterminationRow {
                seed,
                parameter: index,
                disturbance,
                n_constraints: n_c,
                usable_constraints: est.newton_estimates.len(),
                ls_estimate: est.ls_estimate,
                mean_newton: est.mean_newton,
                ls_closer: est.ls_estimate.abs() < est.mean_newton.abs(),
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    write_rows(&config.output_dir.join("overdetermination.csv"), &rows)?;
    write_json(&config.output_dir.join("summary.json"), &rows)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseFloorOutput {
    pub seed: u64,
    pub n_constraints: usize,
    pub constraint_ratio: f64,
    pub n_shots: u64,
    pub step_error_std: f64,
    pub exact_step_norm: f64,
}

fn noise_floor(config: &ExperimentConfig) -> Result<Vec<NoiseFloorOutput>, CliError> {
    let TaskConfig::NoiseFloorProbe {
        qubits,
        layers,
        perturbation,
        noise_seeds,
        lambda,
    } = config.task
    else {
        unreachable!()
    };
    let pool = OperatorPool::enumerate(qubits, config.pool_locality)?;
    let sweep = config.sweep.clone().unwrap_or_default();
    let counts: Vec<usize> = if sweep.constraint_ratios.is_empty() {
        vec![config.constraints_for(None)]
    } else {
        sweep
            .constraint_ratios
            .iter()
            .map(|r| config.constraints_for(Some(*r)))
            .collect()
    };
    let shots = if sweep.shots.is_empty() {
        match config.provider {
            ProviderConfig::ShotNoise { shots } => vec![shots],
            _ => unreachable!("validation requires shots"),
        }
    } else {
        sweep.shots.clone()
    };
    let nu = config.task.n_params() as f64;
    let per_seed = config
        .seeds
        .par_iter()
        .map(|&seed| {
            let (task, theta) = make_recompilation(qubits, layers, seed, perturbation)?;
            let problem = Problem::new(task.circuit(), &task.hamiltonian, pool.members());
            let settings = NoiseFloorSettings {
                n_constraints: counts.clone(),
                n_shots: shots.clone(),
                n_noise_seeds: noise_seeds,
                lambda,
                seed,
            };
            Ok(noise_floor_probe(&problem, &theta, &settings)?
                .into_iter()
                .map(|r| NoiseFloorOutput {
                    seed,
                    n_constraints: r.n_constraints,
                    constraint_ratio: r.n_constraints as f64 / nu,
                    n_shots: r.n_shots,
                    step_error_std: r.step_error_std,
                    exact_step_norm: r.exact_step_norm,
                })
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let rows: Vec<NoiseFloorOutput> = per_seed.into_iter().flatten().collect();
    write_rows(&config.output_dir.join("noise_floor.csv"), &rows)?;
    write_json(&config.output_dir.join("summary.json"), &rows)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalTrapRow {
    pub seed: u64,
    pub descent_iterations: usize,
    pub stalled: bool,
    pub delta_e_stall: f64,
    pub delta_e_final: f64,
    pub covar_iterations: usize,
    /// The CoVaR phase was skipped because the stall point already solves
    /// the root problem.
    pub covar_skipped: bool,
    /// Some CoVaR iterate had a higher energy than the stall point.
    pub transient_increase: bool,
    pub nearest_eigen_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalTrapSummary {
    pub rows: Vec<LocalTrapRow>,
    pub delta_e_stall: Quartiles,
    pub delta_e_final: Quartiles,
    /// Median stall gap over median final gap.
    pub improvement: f64,
}

fn local_trap_escape(config: &ExperimentConfig) -> Result<LocalTrapSummary, CliError> {
    let TaskConfig::LocalTrapEscape {
        learning_rate,
        stall_threshold,
        max_descent_iterations,
        ..
    } = config.task
    else {
        unreachable!()
    };
    let pool = OperatorPool::enumerate(config.task.qubits(), config.pool_locality)?;
    let n_c = config.constraints_for(None);
    let rows = config
        .seeds
        .par_iter()
        .map(|&seed| {
            let setup = setup(config, seed)?;
            let problem = Problem::new(&setup.circuit, &setup.hamiltonian, pool.members())
                .with_wall_time(config.record_wall_time);
            let mut gd = GdConfig::new(GdTarget::Energy, max_descent_iterations);
            gd.learning_rate = learning_rate;
            gd.stall_threshold = Some(stall_threshold);
            let provider = make_provider(config, seed, None, n_c)?;
            let descent = run_baseline(
                &Baseline::GradientDescent(gd),
                provider.as_ref(),
                &problem,
                &setup.theta0,
            )?;
            let dir = seed_dir(&config.output_dir, seed)?;
            write_trace(&dir.join("descent.csv"), &descent.trace)?;
            let stall = *descent.trace.last().expect("initial record");
            let ground = setup.spectrum.ground();
            let skip = stall.f_norm <= config.optimizer.convergence_tol;
            let (final_energy, covar_iterations, transient) = if skip {
                (stall.energy, 0, false)
            } else {
                let cfg = lm_config(config, n_c);
                let out = covar_iterate(
                    provider.as_ref(),
                    &problem,
                    &descent.theta,
                    &cfg,
                    rng::derive_seed(seed, SOLVER_STREAM),
                )?;
                write_trace(&dir.join("trace.csv"), &out.trace)?;
                let peak = out
                    .trace
                    .records
                    .iter()
                    .map(|r| r.energy)
                    .fold(f64::NEG_INFINITY, f64::max);
                let last = out.trace.last().expect("initial record");
                (last.energy, out.trace.iterations(), peak > stall.energy)
            };
            Ok(LocalTrapRow {
                seed,
                descent_iterations: descent.trace.iterations(),
                stalled: descent.converged,
                delta_e_stall: stall.energy - ground,
                delta_e_final: final_energy - ground,
                covar_iterations,
                covar_skipped: skip,
                transient_increase: transient,
                nearest_eigen_index: setup.spectrum.nearest(final_energy).0,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let stall: Vec<f64> = rows.iter().map(|r| r.delta_e_stall).collect();
    let fin: Vec<f64> = rows.iter().map(|r| r.delta_e_final).collect();
    let delta_e_stall =
        Quartiles::of(&stall).ok_or_else(|| CliError::Invalid("no finite energies".into()))?;
    let delta_e_final =
        Quartiles::of(&fin).ok_or_else(|| CliError::Invalid("no finite energies".into()))?;
    let summary = LocalTrapSummary {
        improvement: delta_e_stall.median / delta_e_final.median,
        rows,
        delta_e_stall,
        delta_e_final,
    };
    write_rows(&config.output_dir.join("local_trap.csv"), &summary.rows)?;
    write_json(&config.output_dir.join("summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionRun {
    pub seed: u64,
    pub target_gap: f64,
    pub initial_overlap: f64,
    /// `None` when the final energy is not within tolerance of any
    /// eigenvalue.
    pub eigen_index: Option<usize>,
    pub final_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapBucket {
    pub upper_edge: f64,
    pub runs: usize,
    pub ground_fraction: Option<f64>,
    pub unconverged: usize,
    /// `(eigenstate index, count)` pairs in ascending index order.
    pub reached: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub runs: Vec<DistributionRun>,
    pub buckets: Vec<OverlapBucket>,
    /// Rank correlation between bucket position and ground-state fraction
    /// over the non-empty buckets.
    pub spearman: Option<f64>,
}

/// Average ranks, ties sharing the mean of their positions.
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for k in &order[i..=j] {
            out[*k] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman's rank correlation; `None` when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    use statrs::statistics::Statistics;
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let (mx, my) = (rx.iter().mean(), ry.iter().mean());
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        None
    } else {
        Some(cov / (vx * vy).sqrt())
    }
}

pub fn bucket_runs(runs: &[DistributionRun], edges: &[f64]) -> Vec<OverlapBucket> {
    let mut buckets: Vec<OverlapBucket> = edges
        .iter()
        .map(|&upper_edge| OverlapBucket {
            upper_edge,
            runs: 0,
            ground_fraction: None,
            unconverged: 0,
            reached: Vec::new(),
        })
        .collect();
    for run in runs {
        let b = edges
            .iter()
            .position(|e| run.initial_overlap < *e)
            .unwrap_or(edges.len() - 1);
        let bucket = &mut buckets[b];
        bucket.runs += 1;
        match run.eigen_index {
            None => bucket.unconverged += 1,
            Some(k) => match bucket.reached.binary_search_by_key(&k, |(i, _)| *i) {
                Ok(pos) => bucket.reached[pos].1 += 1,
                Err(pos) => bucket.reached.insert(pos, (k, 1)),
            },
        }
    }
    for bucket in &mut buckets {
        if bucket.runs > 0 {
            let ground = bucket
                .reached
                .iter()
                .find(|(k, _)| *k == 0)
                .map_or(0, |(_, c)| *c);
            bucket.ground_fraction = Some(ground as f64 / bucket.runs as f64);
        }
    }
    buckets
}

fn convergence_distribution(config: &ExperimentConfig) -> Result<DistributionSummary, CliError> {
    let TaskConfig::ConvergenceDistribution {
        ref target_gaps,
        ref overlap_edges,
        ..
    } = config.task
    else {
        unreachable!()
    };
    let pool = OperatorPool::enumerate(config.task.qubits(), config.pool_locality)?;
    let n_c = config.constraints_for(None);
    let jobs: Vec<(u64, f64)> = config
        .seeds
        .iter()
        .flat_map(|&s| target_gaps.iter().map(move |&g| (s, g)))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(seed, gap)| {
            let setup = setup(config, seed)?;
            let Spectrum::Exact(eig) = &setup.spectrum else {
                unreachable!()
            };
            let problem = Problem::new(&setup.circuit, &setup.hamiltonian, pool.members())
                .with_wall_time(config.record_wall_time);
            let provider = ExactProvider::new();
            let init = run_baseline(
                &nat_grad(
                    config,
                    config.optimizer.nat_grad_iterations,
                    Some(eig.ground_energy() + gap),
                ),
                &provider,
                &problem,
                &setup.theta0,
            )?;
            let start = jitter(&init.theta, config.optimizer.handover_perturbation, seed);
            let overlap = setup.circuit.prepare(&start)?.fidelity(&eig.state(0)?)?;
            let out = covar_iterate(
                &provider,
                &problem,
                &start,
                &lm_config(config, n_c),
                rng::derive_seed(seed, SOLVER_STREAM),
            )?;
            let last = out.trace.last().expect("initial record");
            let (k, d) = eig.nearest(last.energy);
            Ok(DistributionRun {
                seed,
                target_gap: gap,
                initial_overlap: overlap,
                eigen_index: (d < config.eigen_tolerance).then_some(k),
                final_gap: last.energy - eig.ground_energy(),
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let buckets = bucket_runs(&runs, overlap_edges);
    let (pos, frac): (Vec<f64>, Vec<f64>) = buckets
        .iter()
        .enumerate()
        .filter_map(|(i, b)| b.ground_fraction.map(|f| (i as f64, f)))
        .unzip();
    let summary = DistributionSummary {
        spearman: spearman(&pos, &frac),
        runs,
        buckets,
    };
    write_rows(&config.output_dir.join("runs.csv"), &summary.runs)?;
    write_json(&config.output_dir.join("summary.json"), &summary)?;
    Ok(summary)
}
