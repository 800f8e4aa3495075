use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use lvcert_cli::commands::{
    cmd_certify, cmd_equilibrium, cmd_lyapunov_check, cmd_reproduce, cmd_simulate, ExampleId,
    LyapunovCheckArgs, SimulateArgs, EXIT_OK, EXIT_USAGE,
};
use lvcert_cli::report::CertificateReport;
use lvcert_cli::system::{parse_list, SystemFile};
use lvcert_core::search::SearchBudget;
use std::io::Write;
use std::path::PathBuf;

/// Certify global attractivity of interior equilibria of Lotka-Volterra systems.
#[derive(Parser)]
#[command(name = "lvcert", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct BudgetArgs {
    /// Number of search restarts per stage.
    #[arg(long, default_value_t = 64)]
    budget_restarts: usize,
    /// Objective evaluations per restart.
    #[arg(long, default_value_t = 2000)]
    budget_evals: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(clap::Args)]
struct TolArgs {
    #[arg(long, default_value_t = 1e-9)]
    rtol: f64,
    #[arg(long, default_value_t = 1e-12)]
    atol: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Example {
    Example1,
    Example2,
    Structured,
}

#[derive(Subcommand)]
enum Command {
    /// Print the interior equilibrium (exit 2: not interior, 3: singular).
    Equilibrium { system: PathBuf },
    /// Search for a certificate and write a report (exit 0: found, 1: inconclusive).
    Certify {
        system: PathBuf,
        #[command(flatten)]
        budget: BudgetArgs,
        /// Report path.
        #[arg(long, default_value = "lvcert-report.toml")]
        out: PathBuf,
    },
    /// Integrate the normalized dynamics and emit CSV.
    Simulate {
        system: PathBuf,
        /// Initial state, comma separated; rationals allowed.
        #[arg(long)]
        x0: String,
        /// Read x0 and write states in the original coordinates.
        #[arg(long)]
        raw: bool,
        #[arg(long, default_value_t = 100.0)]
        t_end: f64,
        #[command(flatten)]
        tol: TolArgs,
        /// Number of equally spaced output times (default: every accepted step).
        #[arg(long)]
        samples: Option<usize>,
        /// CSV path (default: standard output).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a certificate's Lyapunov function along a simulated trajectory.
    LyapunovCheck {
        system: PathBuf,
        /// Report written by `certify`.
        #[arg(long)]
        certificate: PathBuf,
        #[arg(long)]
        x0: String,
        #[arg(long, default_value_t = 100.0)]
        t_end: f64,
        #[arg(long, default_value_t = 1e-12)]
        rtol: f64,
        #[arg(long, default_value_t = 1e-14)]
        atol: f64,
    },
    /// Re-run a shipped example and compare with the expected outcome.
    Reproduce {
        #[arg(value_enum)]
        example: Example,
        #[command(flatten)]
        budget: BudgetArgs,
        /// Number of random initial conditions for the simulation ensemble.
        #[arg(long, default_value_t = 100)]
        ensemble: usize,
        /// Directory for the report bundle.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn budget(args: &BudgetArgs, a: Option<&lvcert_core::Matrix>) -> SearchBudget {
    let base = a.map_or_else(SearchBudget::default, SearchBudget::for_matrix);
    SearchBudget {
        max_restarts: args.budget_restarts,
        max_evals_per_restart: args.budget_evals,
        seed: args.seed,
        ..base
    }
}

fn configure_threads() -> Result<()> {
    if let Ok(value) = std::env::var("LVCERT_THREADS") {
        let n: usize = value
            .trim()
            .parse()
            .with_context(|| format!("LVCERT_THREADS={value:?} is not a thread count"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("configuring the thread pool")?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<i32> {
    configure_threads()?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let code = match cli.command {
        Command::Equilibrium { system } => {
            let sys = SystemFile::read(&system)?.load()?;
            cmd_equilibrium(&sys, &mut out)?
        }
        Command::Certify { system, budget: b, out: report } => {
            let file = SystemFile::read(&system)?;
            let a = file.load()?.normalized().ok().map(|(a, _)| a);
            cmd_certify(&file, &budget(&b, a.as_ref()), &report, &mut out)?
        }
        Command::Simulate { system, x0, raw, t_end, tol, samples, out: csv } => {
            let sys = SystemFile::read(&system)?.load()?;
            let x0 = parse_list(&x0)?;
            let args = SimulateArgs {
                x0: &x0,
                raw,
                t_end,
                rtol: tol.rtol,
                atol: tol.atol,
                samples,
                csv: csv.as_deref(),
            };
            cmd_simulate(&sys, &args, &mut out)?
        }
        Command::LyapunovCheck { system, certificate, x0, t_end, rtol, atol } => {
            let sys = SystemFile::read(&system)?.load()?;
            let report = CertificateReport::read(&certificate)?;
            let x0 = parse_list(&x0)?;
            let args = LyapunovCheckArgs { x0: &x0, t_end, rtol, atol };
            cmd_lyapunov_check(&sys, &report, &args, &mut out)?
        }
        Command::Reproduce { example, budget: b, ensemble, out: dir } => {
            let id = match example {
                Example::Example1 => ExampleId::Example1,
                Example::Example2 => ExampleId::Example2,
                Example::Structured => ExampleId::Structured,
            };
            let a = id.system_file().load()?.normalized().ok().map(|(a, _)| a);
            cmd_reproduce(id, &budget(&b, a.as_ref()), ensemble, dir.as_deref(), &mut out)?
        }
    };
    out.flush()?;
    Ok(code)
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            std::process::exit(if e.use_stderr() { EXIT_USAGE } else { EXIT_OK });
        }
    };
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_USAGE
        }
    };
    std::process::exit(code);
}
