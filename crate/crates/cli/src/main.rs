use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use tubempc::check::{self, check_invariants};
use tubempc::output::{self, PlotContext};
use tubempc::scenario::Scenario;
use tubempc::sim::{self, SimOptions};
use tubempc::tube;

#[derive(Parser)]
#[command(
    name = "tubempc",
    version,
    about = "Tube-based robust NMPC simulator for an underactuated AUV"
)]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario, write the log and plots, and check the invariants.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Monte Carlo runs with seeds seed, seed + 1, ...
        #[arg(long, default_value_t = 1)]
        runs: usize,
        /// Worker threads for Monte Carlo runs.
        #[arg(long)]
        workers: Option<usize>,
        /// Record solver wall time in the log (makes it non-reproducible).
        #[arg(long)]
        timing: bool,
    },
    /// Check a trajectory log against a scenario.
    Check { log: PathBuf, scenario: PathBuf },
    /// Certify the tube of a scenario and write the parameters to a file.
    Certify {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw the plots for a trajectory log.
    Plot {
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Scenario for obstacles, reference and bounds in the plots.
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
}

fn load(path: &Path) -> Result<Scenario> {
    Scenario::load(path).with_context(|| format!("loading scenario {}", path.display()))
}

fn run(
    scenario: &Path,
    out: &Path,
    seed: Option<u64>,
    runs: usize,
    workers: Option<usize>,
    timing: bool,
) -> Result<bool> {
    let mut s = load(scenario)?;
    if let Some(seed) = seed {
        s = s.with_seed(seed);
    }
    println!(
        "tube: sigma = {:.6}, rho_tilde = {:.6}, xi_tilde = {:.6}; horizon {} <= {:.6}",
        s.tube.sigma,
        s.tube.rho_tilde,
        s.tube.xi_tilde,
        s.fhocp.horizon(),
        s.horizon_limit
    );
    let ctx = PlotContext::from_scenario(&s);
    if runs <= 1 {
        let log = sim::run_scenario_with(&s, SimOptions { record_timing: timing })?;
        let written = output::emit_outputs(&log, &ctx, out)?;
        for p in &written {
            println!("wrote {}", p.display());
        }
        let report = check_invariants(&log, &s);
        print!("{report}");
        return Ok(report.passed());
    }
    if timing {
        bail!("--timing is only supported for single runs");
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let workers = workers.unwrap_or_else(sim::default_workers);
    let results = sim::run_monte_carlo(&s, runs, s.seed, workers);
    let summary_path = out.join("summary.csv");
    let mut summary =
        fs::File::create(&summary_path).with_context(|| format!("creating {}", summary_path.display()))?;
    writeln!(
        summary,
        "run,seed,passed,steps,max_rho_norm,min_ed,min_clearance,fallbacks"
    )?;
    let mut all = true;
    for r in &results {
        let dir = out.join(format!("run_{:04}", r.index));
        match &r.log {
            Ok(log) => {
                let run_s = s.with_seed(r.seed);
                fs::create_dir_all(&dir)?;
                output::write_csv_file(log, &dir.join("trajectory.csv"))?;
                let report = check_invariants(log, &run_s);
                let sm = check::summarize(log);
                writeln!(
                    summary,
                    "{},{},{},{},{},{},{},{}",
                    r.index,
                    r.seed,
                    report.passed(),
                    sm.steps,
                    sm.max_rho,
                    sm.min_ed,
                    sm.min_clearance,
                    sm.fallbacks
                )?;
                println!(
                    "run {} (seed {}): {}",
                    r.index,
                    r.seed,
                    if report.passed() { "PASS" } else { "FAIL" }
                );
                if !report.passed() {
                    print!("{report}");
                }
                all &= report.passed();
            }
            Err(e) => {
                writeln!(summary, "{},{},false,0,,,,", r.index, r.seed)?;
                println!("run {} (seed {}): FAIL: {e}", r.index, r.seed);
                all = false;
            }
        }
    }
    println!("wrote {}", summary_path.display());
    Ok(all)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let outcome = match cli.command {
        Command::Run {
            scenario,
            out,
            seed,
            runs,
            workers,
            timing,
        } => run(&scenario, &out, seed, runs, workers, timing),
        Command::Check { log, scenario } => (|| {
            let s = load(&scenario)?;
            let log = output::read_csv_file(&log)?;
            let report = check_invariants(&log, &s);
            print!("{report}");
            Ok(report.passed())
        })(),
        Command::Certify { scenario, out } => (|| {
            let s = load(&scenario)?;
            let Some(request) = s.certification else {
                bail!(
                    "{}: the tube section does not request certification",
                    scenario.display()
                );
            };
            let p = s.tube;
            tube::write_artifact(&out, &p, Some(&request))?;
            println!(
                "L1 = {}, L2 = {}, J_lower = {}, xi_tilde = {}, sigma = {}, rho_tilde = {}",
                p.lip1, p.lip2, p.j_lower, p.xi_tilde, p.sigma, p.rho_tilde
            );
            println!("wrote {}", out.display());
            Ok(true)
        })(),
        Command::Plot { log, out, scenario } => (|| {
            let ctx = match scenario {
                Some(path) => PlotContext::from_scenario(&load(&path)?),
                None => PlotContext::default(),
            };
            let log = output::read_csv_file(&log)?;
            for p in output::emit_plots(&log, &ctx, &out)? {
                println!("wrote {}", p.display());
            }
            Ok(true)
        })(),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
