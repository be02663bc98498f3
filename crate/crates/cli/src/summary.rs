//! Per-seed result rows, their quartile aggregates and the files they are
//! written to.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use covar_core::{IterationRecord, IterationTrace};
use serde::{Deserialize, Serialize};
use statrs::statistics::{Data, Median, OrderStatistics};

use crate::error::CliError;

/// Final metrics of one optimisation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRow {
    pub seed: u64,
    pub n_constraints: usize,
    pub n_shots: Option<u64>,
    pub energy: f64,
    /// `E - E0` against the exact ground energy.
    pub delta_e: f64,
    pub nearest_eigen_index: usize,
    pub nearest_eigen_gap: f64,
    pub variance: f64,
    pub infidelity: Option<f64>,
    pub infidelity_max_basis: Option<f64>,
    pub iterations: usize,
    pub flagged: usize,
    pub converged: bool,
    pub provider_points: u64,
    pub snapshots: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub lower: f64,
    pub median: f64,
    pub upper: f64,
}

impl Quartiles {
    pub fn of(values: &[f64]) -> Option<Quartiles> {
        if values.is_empty() || values.iter().any(|v| v.is_nan()) {
            return None;
        }
        let mut data = Data::new(values.to_vec());
        Some(Quartiles {
            lower: data.lower_quartile(),
            median: data.median(),
            upper: data.upper_quartile(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub task: String,
    pub optimizer: String,
    pub rows: Vec<SeedRow>,
    pub aggregates: BTreeMap<String, Quartiles>,
}

impl RunSummary {
    pub fn new(task: &str, optimizer: &str, rows: Vec<SeedRow>) -> RunSummary {
        let aggregates = aggregate(&rows);
        RunSummary {
            task: task.to_string(),
            optimizer: optimizer.to_string(),
            rows,
            aggregates,
        }
    }
}

type Column = (&'static str, fn(&SeedRow) -> Option<f64>);

/// Quartiles of every numeric column that is present in all rows.
pub fn aggregate(rows: &[SeedRow]) -> BTreeMap<String, Quartiles> {
    let mut out = BTreeMap::new();
    let columns: [Column; 6] = [
        ("delta_e", |r| Some(r.delta_e)),
        ("nearest_eigen_gap", |r| Some(r.nearest_eigen_gap)),
        ("infidelity", |r| r.infidelity),
        ("infidelity_max_basis", |r| r.infidelity_max_basis),
        ("iterations", |r| Some(r.iterations as f64)),
        ("flagged", |r| Some(r.flagged as f64)),
    ];
    for (name, get) in columns {
        let values: Option<Vec<f64>> = rows.iter().map(get).collect();
        if let Some(q) = values.as_deref().and_then(Quartiles::of) {
            out.insert(name.to_string(), q);
        }
    }
    out
}

fn fmt_option(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn record_fields(r: &IterationRecord) -> [String; 10] {
    [
        r.iter.to_string(),
        r.f_norm.to_string(),
        r.lambda.to_string(),
        r.step_norm.to_string(),
        r.energy.to_string(),
        r.variance.to_string(),
        fmt_option(r.infidelity),
        fmt_option(r.infidelity_max_basis),
        r.flagged.to_string(),
        r.wall_ms.to_string(),
    ]
}

pub fn write_trace(path: &Path, trace: &IterationTrace) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(IterationRecord::COLUMNS)?;
    for r in &trace.records {
        w.write_record(record_fields(r))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a trace written by [`write_trace`].
pub fn read_trace(path: &Path) -> Result<Vec<BTreeMap<String, String>>, CliError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}
