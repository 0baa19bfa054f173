//! Command-line front end: `solve`, `simulate`, `verify`, `clearing-scaling`.
//!
//! Exit codes: 0 success, 1 invalid input or I/O failure, 2 numerical failure
//! (blow-up, singular matrix, non-integrable moment), 3 failed verification.

mod output;
mod verify;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use mfeq_core::equilibrium::build_theta_coefficients;
use mfeq_core::model::TimeGrid;
use mfeq_core::riccati::{solve_system_with, SolveOptions};
use mfeq_core::scenario::{load_scenario, reference_scenario, Scenario};
use mfeq_core::simulate::{clearing_report, clearing_scaling, simulate_agents, simulate_common, AgentOptions};
use mfeq_core::{Error, RiccatiSolution};

pub use verify::{run_checks, Check};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "mfeq", version, about = "Mean-field equilibrium risk premium: coefficients, filter and Monte Carlo")]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Scenario file (JSON). The built-in reference economy when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    scenario: Option<PathBuf>,
    /// Master seed for all random streams
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Number of agents, overriding the scenario's population size.
    #[arg(long, global = true, value_name = "N")]
    agents: Option<usize>,
    /// Steps of the coefficient integration grid.
    #[arg(long = "ode-steps", global = true, value_name = "N")]
    ode_steps: Option<usize>,
    /// Steps of the simulation grid.
    #[arg(long = "sim-steps", global = true, value_name = "N")]
    sim_steps: Option<usize>,
    /// Output directory, created if missing
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Integrate the coefficient system and write riccati.csv.
    Solve,
    /// Simulate one market path and the agent population.
    Simulate {
        /// Mirror agent noise in pairs.
        #[arg(long)]
        antithetic: bool,
    },
    /// Check the equilibrium invariants and print a report.
    Verify,
    /// Fit the decay rate of the average position against population size.
    ClearingScaling {
        /// Population sizes, comma separated
        #[arg(long, value_delimiter = ',', default_value = "100,400,1600,6400")]
        sizes: Vec<usize>,
        /// Independent seeds per size
        #[arg(long, default_value_t = 20)]
        replications: usize,
    },
}

/// Reason a command stopped.
#[derive(Debug)]
enum Failure {
    Core(Error),
    Verification(usize),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type Outcome = std::result::Result<(), Failure>;

fn resolve(args: &CommonArgs) -> mfeq_core::Result<Scenario> {
    let mut s = match &args.scenario {
        Some(p) => load_scenario(p)?,
        None => reference_scenario(),
    };
    if let Some(seed) = args.seed {
        s.run.seed = seed;
    }
    if let Some(n) = args.agents {
        s.run.n_agents_override = Some(n);
    }
    if let Some(n) = args.ode_steps {
        s.run.n_steps_ode = n;
    }
    if let Some(n) = args.sim_steps {
        s.run.n_steps_sim = n;
    }
    if let Some(dir) = &args.out {
        s.run.out_dir = dir.clone();
    }
    s.run.validate()?;
    s.effective_population().validate(s.params.dims)?;
    Ok(s)
}

pub(crate) fn solve_on(s: &Scenario, n_steps: usize) -> mfeq_core::Result<RiccatiSolution> {
    let grid = TimeGrid::new(n_steps, s.params.horizon)?;
    let opts = SolveOptions { blowup_bound: s.run.blowup_bound, ..Default::default() };
    solve_system_with(&s.params, &s.liability, &s.population, &grid, opts)
}

fn ensure_dir(dir: &Path) -> mfeq_core::Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.display().to_string(), source })
}

fn cmd_solve(s: &Scenario) -> Outcome {
    let sol = solve_on(s, s.run.n_steps_ode)?;
    ensure_dir(&s.run.out_dir)?;
    let path = s.run.out_dir.join("riccati.csv");
    output::write_riccati(&path, &sol)?;
    println!("solved {} steps on [0, {}]", s.run.n_steps_ode, s.params.horizon);
    println!("A00(0) = {:?}", sol.a00[0].as_slice());
    println!("A11(0) = {:?}", sol.a11[0].as_slice());
    println!("A10(0) = {:?}", sol.a10[0].as_slice());
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_simulate(s: &Scenario, antithetic: bool) -> Outcome {
    let sol = solve_on(s, s.run.n_steps_sim)?;
    let coeffs = build_theta_coefficients(&sol, &s.params, &s.prior)?;
    let pop = s.effective_population();
    let market = simulate_common(&s.params, &coeffs, &sol, s.run.seed, 0)?;
    let opts = AgentOptions { antithetic, keep_paths: 0 };
    let ens = simulate_agents(&s.params, &s.liability, &pop, &sol, &market, &s.params.vol, s.run.seed, opts)?;
    let report = clearing_report(&ens)?;

    let dir = &s.run.out_dir;
    ensure_dir(dir)?;
    output::write_paths(&dir.join("paths.csv"), &market)?;
    output::write_clearing(&dir.join("clearing.csv"), &sol.grid, &ens)?;
    output::write_wealth(&dir.join("wealth.csv"), &ens)?;
    let summary = output::summary(s, &pop, &coeffs, &report, &ens, antithetic);
    output::write_json(&dir.join("summary.json"), &summary)?;

    println!("simulated {} agents over {} steps (seed {})", pop.n_agents, s.run.n_steps_sim, s.run.seed);
    println!("clearing: sup |mean pi| = {:e}, rms = {:e}", report.sup_abs_mean, report.l2_mean);
    println!("wrote paths.csv, clearing.csv, wealth.csv, summary.json in {}", dir.display());
    Ok(())
}

fn cmd_verify(s: &Scenario) -> Outcome {
    let checks = run_checks(s)?;
    let text = verify::format_report(&checks);
    print!("{text}");
    ensure_dir(&s.run.out_dir)?;
    let path = s.run.out_dir.join("verify.tsv");
    std::fs::write(&path, &text).map_err(|source| Error::Io { path: path.display().to_string(), source })?;
    let failed = checks.iter().filter(|c| !c.pass).count();
    if failed > 0 {
        return Err(Failure::Verification(failed));
    }
    Ok(())
}

fn cmd_scaling(s: &Scenario, sizes: &[usize], replications: usize) -> Outcome {
    if sizes.len() < 2 || sizes.contains(&0) || replications == 0 {
        return Err(Error::Validation("need at least two positive sizes and one replication".into()).into());
    }
    let sol = solve_on(s, s.run.n_steps_sim)?;
    let coeffs = build_theta_coefficients(&sol, &s.params, &s.prior)?;
    let pop = s.effective_population();
    let sc = clearing_scaling(&s.params, &s.liability, &pop, &sol, &coeffs, sizes, replications, s.run.seed)?;
    ensure_dir(&s.run.out_dir)?;
    let path = s.run.out_dir.join("clearing_scaling.csv");
    output::write_scaling(&path, &sc)?;
    println!("n_agents\tmean_l2\tmean_sup");
    for &n in sizes {
        let rows: Vec<_> = sc.rows.iter().filter(|r| r.n_agents == n).collect();
        let k = rows.len() as f64;
        let l2 = rows.iter().map(|r| r.report.l2_mean).sum::<f64>() / k;
        let sup = rows.iter().map(|r| r.report.sup_abs_mean).sum::<f64>() / k;
        println!("{n}\t{l2:e}\t{sup:e}");
    }
    println!("slope\t{}", sc.slope);
    println!("wrote {}", path.display());
    Ok(())
}

fn dispatch(cli: Cli) -> Outcome {
    let s = resolve(&cli.common)?;
    match cli.command {
        Command::Solve => cmd_solve(&s),
        Command::Simulate { antithetic } => cmd_simulate(&s, antithetic),
        Command::Verify => cmd_verify(&s),
        Command::ClearingScaling { sizes, replications } => cmd_scaling(&s, &sizes, replications),
    }
}

fn thread_cap() -> Option<usize> {
    std::env::var("MFEQ_THREADS").ok()?.trim().parse().ok().filter(|&n| n > 0)
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let work = move || dispatch(cli);
    let outcome = match thread_cap() {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(work),
            Err(e) => {
                eprintln!("error: thread pool: {e}");
                return EXIT_INPUT;
            }
        },
        None => work(),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(Failure::Verification(n)) => {
            eprintln!("verification failed: {n} check(s)");
            EXIT_VERIFY
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                EXIT_NUMERICAL
            } else {
                EXIT_INPUT
            }
        }
    }
}
