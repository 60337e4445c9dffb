//! `biop` command-line driver. Failures print a single line
//! `error: kind=<kind> message="<text>"` on stderr and exit nonzero.

use std::path::PathBuf;
use std::process::ExitCode;

use biop::error::BiopError;
use biop::experiment::{self, ExperimentConfig};
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "biop", version, about = "Data-driven finite-horizon LQG experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for independent cells.
    #[arg(long)]
    workers: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, BiopError> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if self.workers.is_some() {
            cfg.output.workers = self.workers;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Model-based versus noiseless data-driven solve.
    NoiselessDemo {
        #[command(flatten)]
        common: Common,
    },
    /// The (ρ, σ) robustness sweep; writes a CSV and a `.meta.json` sidecar.
    RobustSweep {
        #[command(flatten)]
        common: Common,
        /// CSV destination; defaults to `output.path` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Record per-cell wall-clock time (makes the CSV nondeterministic).
        #[arg(long)]
        record_timing: bool,
        /// Overrides the inner solver of the robust program.
        #[arg(long)]
        inner_solver: Option<String>,
    },
    /// Error level ε for every (ρ, σ) of the grid, as CSV on stdout.
    CalibrateEpsilon {
        #[command(flatten)]
        common: Common,
    },
}

fn run(cli: Cli) -> Result<(), BiopError> {
    match cli.command {
        Command::NoiselessDemo { common } => {
            let cfg = common.load()?;
            for r in experiment::run_noiseless_demo(&cfg)? {
                println!(
                    "rho={} J_model={:.10} J_data={:.10} rel_diff={:.3e} K_diff_fro={:.3e} J_data_on_plant={:.10} pe_rank={}/{}",
                    r.rho,
                    r.j_model,
                    r.j_data,
                    r.relative_difference,
                    r.controller_difference,
                    r.j_data_on_plant,
                    r.pe_rank,
                    r.pe_required
                );
            }
        }
        Command::RobustSweep {
            common,
            out,
            record_timing,
            inner_solver,
        } => {
            let mut cfg = common.load()?;
            cfg.output.record_timing |= record_timing;
            if let Some(name) = inner_solver {
                cfg.solver.inner_solver = name;
            }
            if let Some(path) = out {
                cfg.output.path = Some(path);
            }
            cfg.validate()?;
            let path = cfg
                .output
                .path
                .clone()
                .ok_or_else(|| BiopError::Config("no output path: pass --out or set output.path".into()))?;
            let result = experiment::run_robust_sweep(&cfg)?;
            experiment::emit_csv(&result.records, &path)?;
            let meta = experiment::write_metadata(&path, &cfg, &result)?;
            let failed = result.records.iter().filter(|r| !r.is_ok()).count();
            println!(
                "wrote {} rows ({failed} failed) to {} and {}",
                result.records.len(),
                path.display(),
                meta.display()
            );
        }
        Command::CalibrateEpsilon { common } => {
            let cfg = common.load()?;
            println!("rho,sigma,epsilon,percentile,n_realizations,seed");
            for c in experiment::run_calibration(&cfg)? {
                println!(
                    "{},{},{:.11e},{},{},{}",
                    c.rho, c.sigma, c.epsilon, c.percentile, c.n_realizations, c.seed
                );
            }
        }
    }
    Ok(())
}

fn error_line(kind: &str, message: &str) -> String {
    format!("error: kind={kind} message={message:?}")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let first = e.to_string();
            let first = first.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("{}", error_line("usage", first));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::debug!("{e:?}");
            eprintln!("{}", error_line(e.kind(), &e.to_string()));
            ExitCode::from(match e {
                BiopError::Config(_) | BiopError::UnknownStrategy { .. } => 2,
                _ => 1,
            })
        }
    }
}
