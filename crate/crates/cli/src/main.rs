use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use covar_cli::{run, CliError, ExperimentConfig, Report};

#[derive(Parser)]
#[command(
    name = "covar",
    version,
    about = "Run covariance root-finding experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Added to every seed in the config.
    #[arg(long, global = true, default_value_t = 0)]
    seed_offset: u64,
    /// Overrides `output_dir` from the config.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads; all cores by default.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run { config: PathBuf },
    /// Parse and check a config without running anything.
    Validate { config: PathBuf },
    /// Like `run`, but the config must contain a non-empty `[sweep]` table.
    Sweep { config: PathBuf },
}

fn load(cli: &Cli, path: &Path) -> Result<ExperimentConfig, CliError> {
    let mut config = ExperimentConfig::from_path(path)?;
    for seed in &mut config.seeds {
        *seed = seed
            .checked_add(cli.seed_offset)
            .ok_or_else(|| CliError::Invalid("seed offset overflows".into()))?;
    }
    if let Some(dir) = &cli.out_dir {
        config.output_dir = dir.clone();
    }
    config.validate()?;
    Ok(config)
}

fn describe(report: &Report) -> String {
    match report {
        Report::Runs(s) => {
            let rows: usize = s.iter().map(|x| x.rows.len()).sum();
            let median = s[0]
                .aggregates
                .get("delta_e")
                .map_or(f64::NAN, |q| q.median);
            format!("{rows} runs, median delta_e {median:.3e}")
        }
        Report::Sweep(rows) => format!("{} sweep points", rows.len()),
        Report::Overdetermination(rows) => format!(
            "least squares closer in {}/{} samples",
            rows.iter().filter(|r| r.ls_closer).count(),
            rows.len()
        ),
        Report::NoiseFloor(rows) => format!("{} noise-floor rows", rows.len()),
        Report::LocalTrap(s) => format!(
            "median delta_e {:.3e} at stall, {:.3e} after CoVaR",
            s.delta_e_stall.median, s.delta_e_final.median
        ),
        Report::Distribution(s) => format!("{} runs, spearman {:?}", s.runs.len(), s.spearman),
    }
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Invalid("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Invalid(e.to_string()))?;
    }
    match &cli.command {
        Command::Validate { config } => {
            load(cli, config)?;
            println!("ok");
        }
        Command::Run { config } => {
            let config = load(cli, config)?;
            let report = run(&config)?;
            println!("{} -> {}", describe(&report), config.output_dir.display());
        }
        Command::Sweep { config } => {
            let config = load(cli, config)?;
            if !config.is_sweep() {
                return Err(CliError::Invalid(
                    "sweep needs a non-empty [sweep] table".into(),
                ));
            }
            let report = run(&config)?;
            println!("{} -> {}", describe(&report), config.output_dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
