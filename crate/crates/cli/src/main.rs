use clap::{Args, Parser, Subcommand};
use laxoc::exec::{init_threads_from_env, Exec};
use laxoc::pipeline::{self, RunConfig};
use laxoc::problem::{builtin_names, make_builtin, tunables};
use laxoc::rollout::MitigationMode;
use laxoc::Error;
use std::path::PathBuf;
use std::process::ExitCode;

const EXIT_NOT_CONVERGED: u8 = 2;
const EXIT_CONFIG: u8 = 3;

/// Optimal control through the convexified Lax formula: solve, reconstruct
/// admissible controls, and compare against grid and enumeration oracles.
#[derive(Parser)]
#[command(name = "laxoc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve, decompose, synthesize and roll out; writes CSV and summary.json.
    Solve(RunArgs),
    /// Compare the relaxed value with the grid (hjb) or enumeration (brute) oracle.
    Oracle(RunArgs),
    /// Sweep K and tabulate objective and gaps.
    Convergence {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated increasing K values (default: config `convergence_k`).
        #[arg(long, value_delimiter = ',')]
        ks: Option<Vec<usize>>,
    },
    /// List the built-in problems and their tunables.
    ListProblems,
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: config `out_dir`, else `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// `max_likelihood` or `min_residual`.
    #[arg(long)]
    mitigate: Option<MitigationMode>,
    /// Number of time steps.
    #[arg(long)]
    k: Option<usize>,
}

impl RunArgs {
    fn load(&self) -> Result<(RunConfig, PathBuf), Error> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(m) = self.mitigate {
            cfg.mitigate = Some(m);
        }
        if let Some(k) = self.k {
            cfg.k = k;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = Some(o.clone());
        }
        cfg.validate()?;
        let out = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
        Ok((cfg, out))
    }
}

/// Config, problem-definition and oracle-precondition errors map to exit 3.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Problem(_) | Error::Oracle(_) | Error::Json(_) => EXIT_CONFIG,
        Error::Solve(laxoc::error::SolveError::BadOptions(_)) => EXIT_CONFIG,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<u8, Error> {
    let exec = Exec::available();
    match cli.command {
        Command::ListProblems => {
            for name in builtin_names() {
                let spec = make_builtin(name, &Default::default())?;
                println!(
                    "{name}\tn={} m={} horizon=[{}, {}]\ttunables: {}",
                    spec.state_dim,
                    spec.control_dim,
                    spec.horizon.0,
                    spec.horizon.1,
                    tunables(name).unwrap_or(&[]).join(", ")
                );
            }
            Ok(0)
        }
        Command::Solve(args) => {
            let (cfg, out) = args.load()?;
            let outcome = pipeline::run_solve(&cfg, exec)?;
            pipeline::write_solve_artifacts(&outcome, &out)?;
            let s = &outcome.summary;
            println!(
                "{}: objective {:.8} ({:?}), realized {:.8}, sup_gap {:.3e}, switches {}",
                s.problem, s.objective, s.status, s.realized_cost, s.sup_gap, s.switch_count
            );
            println!("wrote {}", out.display());
            Ok(if outcome.converged() { 0 } else { EXIT_NOT_CONVERGED })
        }
        Command::Oracle(args) => {
            let (cfg, out) = args.load()?;
            let cfg = RunConfig {
                out_dir: Some(out.clone()),
                ..cfg
            };
            let report = pipeline::run_oracle(&cfg, exec)?;
            pipeline::write_oracle_report(&report, &out)?;
            println!(
                "{} {:?}: lax {:.6}, oracle {:.6}, gap {:.3e}, {}",
                report.problem,
                report.mode,
                report.lax_objective,
                report.oracle_value,
                report.comparison.gap,
                if report.pass { "pass" } else { "fail" }
            );
            Ok(0)
        }
        Command::Convergence { run, ks } => {
            let (cfg, out) = run.load()?;
            let ks = ks.unwrap_or_else(|| cfg.convergence_k.clone());
            let rows = pipeline::run_convergence(&cfg, &ks, exec)?;
            std::fs::create_dir_all(&out)?;
            let path = out.join("convergence.csv");
            pipeline::write_convergence_csv(&path, &rows)?;
            for r in &rows {
                println!(
                    "K={:<5} objective {:.8} sup_gap {:.3e} cost_gap {:.3e} switches {}",
                    r.k, r.objective, r.sup_gap, r.cost_gap, r.switch_count
                );
            }
            println!("wrote {}", path.display());
            Ok(if rows.iter().all(|r| r.converged) { 0 } else { EXIT_NOT_CONVERGED })
        }
    }
}

fn main() -> ExitCode {
    init_threads_from_env();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
