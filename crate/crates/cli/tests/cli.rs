use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use covar_cli::experiments::{
    DistributionSummary, LocalTrapSummary, OverdeterminationRow, SweepRow,
};
use covar_cli::summary::{aggregate, read_trace};
use covar_cli::RunSummary;
use covar_core::IterationRecord;
use tempfile::TempDir;

fn covar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_covar"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, body).unwrap();
    path
}

fn run_ok(config: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", config.to_str().unwrap()];
    args.extend_from_slice(extra);
    let out = covar(&args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn minimal(out: &Path) -> String {
    format!(
        r#"
seeds = [0]
output_dir = "{}"
[task]
kind = "recompilation"
qubits = 4
layers = 2
[optimizer]
iterations = 30
"#,
        out.display()
    )
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> T {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn minimal_recompilation_writes_trace_and_summary() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let config = write_config(tmp.path(), &minimal(&out));
    run_ok(&config, &[]);
    let trace = out.join("seed_0").join("trace.csv");
    let header = fs::read_to_string(&trace)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string();
    assert_eq!(header, IterationRecord::COLUMNS.join(","));
    let summary: RunSummary = read_json(&out.join("summary.json"));
    assert_eq!(summary.rows.len(), 1);
    let infidelity = summary.rows[0].infidelity.unwrap();
    assert!(infidelity < 1e-6, "{infidelity}");
    let rows = read_trace(&trace).unwrap();
    let last: f64 = rows.last().unwrap()["infidelity"].parse().unwrap();
    assert_eq!(last, infidelity);
    assert_eq!(summary.aggregates, aggregate(&summary.rows));
}

#[test]
fn invalid_configs_exit_2_and_write_nothing() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let good = minimal(&out);
    let cases = [
        "this is not toml".to_string(),
        good.replace("qubits = 4", "qubits = 4\nflavour = 1"),
        good.replace("seeds = [0]", "seeds = []"),
        good.replace("kind = \"recompilation\"", "kind = \"unknown\""),
        format!("{good}[provider]\nkind = \"shot_noise\"\nshots = 0\n"),
    ];
    for body in cases {
        let config = write_config(tmp.path(), &body);
        let result = covar(&["run", config.to_str().unwrap()]);
        assert_eq!(result.status.code(), Some(2), "{body}");
        assert!(!out.exists(), "{body}");
    }
    let missing = covar(&["run", tmp.path().join("nope.toml").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn validate_writes_nothing_and_sweep_requires_a_table() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let config = write_config(tmp.path(), &minimal(&out));
    let v = covar(&["validate", config.to_str().unwrap()]);
    assert!(v.status.success());
    assert_eq!(String::from_utf8_lossy(&v.stdout).trim(), "ok");
    assert!(!out.exists());
    let s = covar(&["sweep", config.to_str().unwrap()]);
    assert_eq!(s.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn constraint_sweep_writes_table() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let body = format!(
        r#"
seeds = [0, 1, 2]
output_dir = "{}"
[task]
kind = "recompilation"
qubits = 6
layers = 2
[optimizer]
iterations = 20
convergence_tol = 0.0
[sweep]
constraint_ratios = [1, 2, 5, 10]
"#,
        out.display()
    );
    let config = write_config(tmp.path(), &body);
    let result = covar(&["sweep", config.to_str().unwrap()]);
    assert!(
        result.status.success(),
        "{}",
        String::from_utf8_lossy(&result.stderr)
    );
    let mut reader = csv::Reader::from_path(out.join("sweep.csv")).unwrap();
    let rows: Vec<SweepRow> = reader.deserialize().collect::<Result<_, _>>().unwrap();
    assert_eq!(
        rows.iter().map(|r| r.n_constraints).collect::<Vec<_>>(),
        vec![30, 60, 150, 300]
    );
    assert!(rows
        .iter()
        .all(|r| r.seeds == 3 && r.median_infidelity.is_some()));
    assert!(rows[3].median_infidelity.unwrap() <= rows[0].median_infidelity.unwrap());
    for r in &rows {
        let s: RunSummary = read_json(
            &out.join(format!("nc_{}", r.n_constraints))
                .join("summary.json"),
        );
        assert_eq!(
            s.aggregates["infidelity"].median,
            r.median_infidelity.unwrap()
        );
    }
}

fn all_files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(
                    path.strip_prefix(root).unwrap().to_path_buf(),
                    fs::read(&path).unwrap(),
                );
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

#[test]
fn outputs_are_bit_reproducible() {
    let tmp = TempDir::new().unwrap();
    let body = r#"
seeds = [3, 4]
output_dir = "unused"
pool_locality = 2
constraint_ratio = 2.0
[task]
kind = "spin_ring"
qubits = 4
layers = 2
[provider]
kind = "shot_noise"
shots = 10000
[optimizer]
iterations = 8
"#;
    let config = write_config(tmp.path(), body);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_ok(&config, &["--out-dir", a.to_str().unwrap()]);
    run_ok(
        &config,
        &["--out-dir", b.to_str().unwrap(), "--threads", "1"],
    );
    let (fa, fb) = (all_files(&a), all_files(&b));
    assert_eq!(fa.len(), 3);
    assert_eq!(fa, fb);
}

#[test]
fn seed_offset_shifts_seeds() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let config = write_config(tmp.path(), &minimal(&out));
    run_ok(&config, &["--seed-offset", "5"]);
    let summary: RunSummary = read_json(&out.join("summary.json"));
    assert_eq!(summary.rows[0].seed, 5);
    assert!(out.join("seed_5").join("trace.csv").exists());
}

#[test]
fn every_optimizer_runs() {
    for kind in ["vqe", "variance_vqe", "nat_grad", "nat_grad_then_covar"] {
        let tmp = TempDir::new().unwrap();
        let out = tmp.path().join("out");
        let body = format!(
            r#"
seeds = [1]
output_dir = "{}"
pool_locality = 2
[task]
kind = "spin_ring"
qubits = 4
layers = 1
[optimizer]
kind = "{kind}"
iterations = 10
target_gap = 2.0
"#,
            out.display()
        );
        let config = write_config(tmp.path(), &body);
        run_ok(&config, &[]);
        let summary: RunSummary = read_json(&out.join("summary.json"));
        assert_eq!(summary.optimizer, kind);
        assert!(summary.rows[0].iterations <= 10);
        let init = out.join("seed_1").join("init_trace.csv");
        assert_eq!(init.exists(), kind == "nat_grad_then_covar", "{kind}");
    }
}

#[test]
fn noisy_providers_report_usage() {
    for provider in [
        "kind = \"circuit_noise\"\nfidelity = 0.9\nshots = 100000",
        "kind = \"shadows\"\nepsilon = 0.5\ndelta = 0.1",
    ] {
        let tmp = TempDir::new().unwrap();
        let out = tmp.path().join("out");
        let body = format!(
            "seeds = [0]\noutput_dir = \"{}\"\npool_locality = 1\nn_constraints = 6\n[task]\nkind = \"recompilation\"\nqubits = 3\nlayers = 1\n[optimizer]\niterations = 2\n[provider]\n{provider}\n",
            out.display()
        );
        let config = write_config(tmp.path(), &body);
        run_ok(&config, &[]);
        let summary: RunSummary = read_json(&out.join("summary.json"));
        let row = &summary.rows[0];
        assert!(row.provider_points > 0);
        assert_eq!(
            row.snapshots > 0,
            provider.contains("shadows"),
            "{provider}"
        );
    }
}

#[test]
fn overdetermination_demo_table() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let body = format!(
        "seeds = [0, 1, 2, 3]\noutput_dir = \"{}\"\nn_constraints = 200\n[task]\nkind = \"overdetermination_demo\"\nqubits = 6\nlayers = 2\n",
        out.display()
    );
    let config = write_config(tmp.path(), &body);
    run_ok(&config, &[]);
    let mut reader = csv::Reader::from_path(out.join("overdetermination.csv")).unwrap();
    let rows: Vec<OverdeterminationRow> = reader.deserialize().collect::<Result<_, _>>().unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows
        .iter()
        .all(|r| r.parameter == 15 && r.disturbance == 0.5 && r.usable_constraints > 0));
}

#[test]
fn noise_floor_table() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let body = format!(
        "seeds = [0]\noutput_dir = \"{}\"\npool_locality = 2\n[task]\nkind = \"noise_floor_probe\"\nqubits = 3\nlayers = 1\nnoise_seeds = 4\n[sweep]\nconstraint_ratios = [1, 2]\nshots = [1000, 100000]\n",
        out.display()
    );
    let config = write_config(tmp.path(), &body);
    run_ok(&config, &[]);
    let text = fs::read_to_string(out.join("noise_floor.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 4);
}

#[test]
fn local_trap_escape_improves_and_can_skip() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let body = format!(
        r#"
seeds = [0, 1, 2]
output_dir = "{}"
[task]
kind = "local_trap_escape"
qubits = 4
layers = 2
coupling = 0.3
stall_threshold = 1e-4
[optimizer]
iterations = 30
"#,
        out.display()
    );
    let config = write_config(tmp.path(), &body);
    run_ok(&config, &[]);
    let summary: LocalTrapSummary = read_json(&out.join("summary.json"));
    assert_eq!(summary.rows.len(), 3);
    assert!(
        summary.delta_e_final.median < summary.delta_e_stall.median,
        "{summary:?}"
    );
    assert!(summary.rows.iter().all(|r| !r.covar_skipped && r.stalled));

    let skip = body.replace(
        "iterations = 30",
        "iterations = 30\nconvergence_tol = 100.0",
    );
    let config = write_config(tmp.path(), &skip);
    let out2 = tmp.path().join("skip");
    run_ok(&config, &["--out-dir", out2.to_str().unwrap()]);
    let summary: LocalTrapSummary = read_json(&out2.join("summary.json"));
    for r in &summary.rows {
        assert!(r.covar_skipped && r.covar_iterations == 0 && r.delta_e_final == r.delta_e_stall);
    }
}

#[test]
fn convergence_distribution_classifies_every_run() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let body = format!(
        r#"
seeds = [0, 1]
output_dir = "{}"
pool_locality = 2
[task]
kind = "convergence_distribution"
qubits = 4
layers = 2
target_gaps = [0.5, 1.5]
[optimizer]
iterations = 20
nat_grad_iterations = 300
"#,
        out.display()
    );
    let config = write_config(tmp.path(), &body);
    run_ok(&config, &[]);
    let summary: DistributionSummary = read_json(&out.join("summary.json"));
    assert_eq!(summary.runs.len(), 4);
    assert_eq!(summary.buckets.iter().map(|b| b.runs).sum::<usize>(), 4);
    for b in &summary.buckets {
        let classified: usize = b.reached.iter().map(|(_, c)| c).sum();
        assert_eq!(classified + b.unconverged, b.runs);
    }
    assert!(summary
        .runs
        .iter()
        .all(|r| (0.0..=1.0 + 1e-12).contains(&r.initial_overlap)));
}
