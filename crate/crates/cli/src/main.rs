use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;

use cityeq::scenario::{config_schema, run_scenario, run_zero_noise, RunOptions, RunSummary, ScenarioConfig};
use cityeq::selfcheck::{self_check, SelfCheckOptions};
use cityeq::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const EXIT_CHECK: u8 = 4;

#[derive(Parser)]
#[command(name = "cityeq", version, about = "Spatial equilibrium of wages, residences and rents")]
struct Cli {
    /// Only print errors.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to the scenario's output_dir, then ./out.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the number of grid nodes per axis.
    #[arg(long)]
    nodes: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the scenario at its configured parameters.
    Solve(ScenarioArgs),
    /// Run the scenario's parameter sweep with continuation.
    Sweep {
        #[command(flatten)]
        args: ScenarioArgs,
        /// Walk the sweep from the last value to the first.
        #[arg(long)]
        reverse: bool,
    },
    /// Shrink the noise level and check the noiseless clearing conditions.
    Zeronoise(ScenarioArgs),
    /// Run the built-in oracle suite.
    Check {
        /// Monte Carlo draws.
        #[arg(long, default_value_t = 100_000)]
        draws: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, hide = true)]
        tamper_quadrature: bool,
    },
    /// Print the scenario JSON schema.
    Schema,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. }
        | Error::InvalidDomain { .. }
        | Error::InvalidResolution(_)
        | Error::InvalidParameter { .. }
        | Error::InvalidPreference(_)
        | Error::InvalidWage(_)
        | Error::NonPositiveSigma(_)
        | Error::NumericInput(_) => EXIT_CONFIG,
        Error::NotConverged(_) | Error::Refused(_) => EXIT_SOLVER,
        _ => EXIT_FAILURE,
    }
}

fn load(args: &ScenarioArgs) -> Result<(ScenarioConfig, PathBuf), Error> {
    let mut cfg = ScenarioConfig::from_path(&args.config)?;
    if let Some(n) = args.nodes {
        cfg.grid.nodes_per_axis = n;
        cfg.validate()?;
    }
    let out = args
        .out
        .clone()
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    Ok((cfg, out))
}

fn print_summary(s: &RunSummary) {
    for r in &s.runs {
        let wages: Vec<String> = r.wages.iter().map(|w| format!("{w:.6}")).collect();
        println!(
            "{} = {:<8} {} residual {:.2e}  iterations {:>3}  wages [{}]",
            s.sweep_parameter,
            r.value,
            if r.converged { "ok  " } else { "FAIL" },
            r.residual_norm,
            r.iterations,
            wages.join(", ")
        );
    }
    if let Some(z) = &s.zero_noise {
        let v = &z.verification;
        println!(
            "zero-noise verification at sigma = {}: {} (slack {:.3e})",
            z.rows.last().map_or(f64::NAN, |r| r.sigma),
            if v.passed { "passed" } else { "FAILED" },
            v.slack
        );
        for o in &v.options {
            println!(
                "  option {}: demand {:.6} in [{:.6}, {:.6}]  margin {:+.3e}",
                o.option, o.demand, o.mass_strict, o.mass_weak, o.margin
            );
        }
    }
    println!("total {:.2} s", s.total_seconds);
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Schema => {
            println!("{}", config_schema());
            Ok(0)
        }
        Command::Check { draws, seed, tamper_quadrature } => {
            let report = self_check(&SelfCheckOptions {
                monte_carlo_draws: Some(draws),
                tamper_quadrature,
                seed,
            });
            for c in &report.checks {
                if !cli.quiet || !c.passed {
                    println!(
                        "{} {:<22} value {:<12.4e} {}",
                        if c.passed { "PASS" } else { "FAIL" },
                        c.name,
                        c.value,
                        c.detail
                    );
                }
            }
            Ok(if report.passed { 0 } else { EXIT_CHECK })
        }
        Command::Solve(args) => {
            let (cfg, out) = load(&args)?;
            let mut opts = RunOptions::new(out);
            opts.single = true;
            finish(cli.quiet, run_scenario(&cfg, &opts)?)
        }
        Command::Sweep { args, reverse } => {
            let (cfg, out) = load(&args)?;
            let mut opts = RunOptions::new(out);
            opts.reverse = reverse;
            finish(cli.quiet, run_scenario(&cfg, &opts)?)
        }
        Command::Zeronoise(args) => {
            let (cfg, out) = load(&args)?;
            finish(cli.quiet, run_zero_noise(&cfg, &out)?)
        }
    }
}

fn finish(quiet: bool, s: RunSummary) -> Result<u8, Error> {
    if !quiet {
        print_summary(&s);
    }
    if s.all_converged {
        Ok(0)
    } else {
        for r in s.runs.iter().filter(|r| !r.converged) {
            error!("{} = {}: {}", s.sweep_parameter, r.value, r.error.as_deref().unwrap_or("not converged"));
        }
        Ok(EXIT_SOLVER)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "error" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::NotConverged(r) = &e {
                for ev in &r.events {
                    eprintln!("  {ev}");
                }
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
