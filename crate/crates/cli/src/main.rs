//! Command line driver: cone membership checks, scenario runs, parameter
//! sweeps, randomized verification suites, and decay fits on recorded series.
//!
//! Exit codes: 0 success, 1 configuration or input errors, 2 a checked
//! assertion failed, 3 the solver failed to converge or the run diverged.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use num_complex::Complex64;

use extinguish_core::cone::{cone_contains, rotate};
use extinguish_core::diagnostics::{fit_decay, DecayKind};
use extinguish_core::scenarios::{
    catalog, parse_config, read_series_csv, run_scenario, sweep, verify_suite, RunSummary,
    VerifySuite,
};
use extinguish_core::Error;

#[derive(Parser)]
#[command(
    name = "extinguish",
    version,
    about = "Damped Schrodinger evolution: finite-time extinction experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Test whether a coefficient is admissible for a given exponent.
    ///
    /// Admissible means Im a > 0 and 2*sqrt(m)*Im a >= (1-m)*|Re a|, with
    /// strict inequality required when Re a >= 0. For admissible input the
    /// rotation witness b (|b| = 1, Re b > 0, Im b < 0) is printed.
    CheckCone {
        /// Nonlinearity exponent, in (0, 1).
        #[arg(long)]
        m: f64,
        /// Coefficient as `re,im`.
        #[arg(long, value_parser = parse_complex)]
        a: Complex64,
    },
    /// Execute one scenario config and write series.csv, summary.txt,
    /// snapshots and a plot script into its output directory.
    Run {
        /// Path to a config file, or the name of a built-in scenario.
        #[arg(long)]
        config: String,
    },
    /// Re-run one config with a single key set to each of several values,
    /// in parallel, each run in its own subdirectory.
    Sweep {
        /// Path to a config file, or the name of a built-in scenario.
        #[arg(long)]
        config: String,
        /// Key to vary, as `section.key` (for example source.eps_star).
        #[arg(long)]
        vary: String,
        /// Comma-separated list of values to substitute.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
    /// Run a randomized property suite and print a JSON report.
    Verify {
        /// One of: cone, resolvent, evolve, diagnostics, all.
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Base sample count; expensive properties cap their own counts.
        #[arg(long, default_value_t = 500)]
        trials: u64,
    },
    /// Fit a decay law to the mass column of a recorded series.csv.
    Fit {
        #[arg(long)]
        csv: PathBuf,
        /// `exp` fits log(mass) against t; `power` against log(1 + t - t0).
        #[arg(long, value_parser = parse_kind)]
        kind: DecayKind,
    },
}

fn parse_complex(s: &str) -> Result<Complex64, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(format!("`{s}` is not a `re,im` pair"));
    }
    let re = parts[0]
        .parse::<f64>()
        .map_err(|_| format!("`{}` is not a number", parts[0]))?;
    let im = parts[1]
        .parse::<f64>()
        .map_err(|_| format!("`{}` is not a number", parts[1]))?;
    Ok(Complex64::new(re, im))
}

fn parse_kind(s: &str) -> Result<DecayKind, String> {
    match s {
        "exp" => Ok(DecayKind::Exponential),
        "power" => Ok(DecayKind::Power),
        _ => Err(format!("`{s}` is not `exp` or `power`")),
    }
}

/// Configuration problems exit 1; solver trouble exits 3.
fn exit_for(err: &Error) -> ExitCode {
    match err {
        Error::NonConvergence { .. } | Error::Divergence { .. } => ExitCode::from(3),
        _ => ExitCode::from(1),
    }
}

/// Reads config text from a file path, falling back to the built-in catalog
/// when the argument names a shipped scenario instead of a file.
fn load_config_text(spec: &str) -> Result<String, Error> {
    let path = std::path::Path::new(spec);
    if path.is_file() {
        return Ok(std::fs::read_to_string(path)?);
    }
    for (name, text) in catalog() {
        if *name == spec {
            return Ok((*text).to_string());
        }
    }
    Err(Error::ConfigValidation(format!(
        "`{spec}` is neither a readable file nor a built-in scenario (built-ins: {})",
        catalog()
            .iter()
            .map(|(n, _)| *n)
            .collect::<Vec<_>>()
            .join(", ")
    )))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), |x| format!("{x:.17e}"))
}

fn print_summary(s: &RunSummary) {
    println!("scenario = {}", s.scenario);
    println!("config_hash = {:016x}", s.config_hash);
    println!("wall_clock_s = {:.3}", s.wall_clock_s);
    println!("t_extinction = {}", fmt_opt(s.extinction.t_num));
    println!("t_star_bound = {:.17e}", s.extinction.t_star_bound);
    println!("delta = {:.17e}", s.extinction.delta);
    println!("c_emp = {:.17e}", s.extinction.c_emp);
    println!(
        "decay_rate = {}",
        fmt_opt(s.decay.map(|d| d.rate_or_exponent))
    );
    println!("r2 = {}", fmt_opt(s.decay.map(|d| d.r2)));
    println!("max_mass_residual = {:.17e}", s.max_mass_residual);
    println!("max_step_quotient = {}", fmt_opt(s.max_step_quotient));
    println!(
        "worst_contraction_ratio = {}",
        fmt_opt(s.worst_contraction_ratio)
    );
    println!("final_mass_ratio = {:.17e}", s.final_mass_ratio);
    for flag in &s.flags {
        println!(
            "flag {} = {}",
            flag.name,
            if flag.pass { "pass" } else { "fail" }
        );
    }
}

fn cmd_check_cone(m: f64, a: Complex64) -> ExitCode {
    if !(m > 0.0 && m < 1.0) {
        eprintln!("error: exponent m must lie in (0, 1), got {m}");
        return ExitCode::from(1);
    }
    let lhs = 2.0 * m.sqrt() * a.im;
    let rhs = (1.0 - m) * a.re.abs();
    println!("m = {m}");
    println!("a = {a}");
    println!("Im(a) = {} (require > 0)", a.im);
    println!("2*sqrt(m)*Im(a) = {lhs}");
    println!("(1-m)*|Re(a)| = {rhs}");
    println!(
        "required: 2*sqrt(m)*Im(a) {} (1-m)*|Re(a)|",
        if a.re >= 0.0 { ">" } else { ">=" }
    );
    if !cone_contains(m, a) {
        println!("in_cone = false");
        return ExitCode::from(2);
    }
    println!("in_cone = true");
    match rotate(m, a) {
        Ok(rot) => {
            let b = rot.b;
            let prod = a * b;
            println!("witness_b = {b}");
            println!("witness_theta = {}", rot.theta_b);
            println!("witness_modulus_error = {:e}", (b.norm() - 1.0).abs());
            println!("rotated_product = {prod}");
            println!(
                "rotated_margin = {:e}",
                2.0 * m.sqrt() * prod.im - (1.0 - m) * prod.re.abs()
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn cmd_run(config: &str) -> ExitCode {
    let text = match load_config_text(config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_for(&e);
        }
    };
    let parsed = match parse_config(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_for(&e);
        }
    };
    let dir = parsed.output_dir.display().to_string();
    match run_scenario(&parsed) {
        Ok(summary) => {
            print_summary(&summary);
            println!("output_dir = {dir}");
            if summary.all_pass() {
                ExitCode::SUCCESS
            } else {
                eprintln!("error: one or more checked assertions failed");
                ExitCode::from(2)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_for(&e)
        }
    }
}

fn cmd_sweep(config: &str, vary: &str, values: &[String]) -> ExitCode {
    let text = match load_config_text(config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_for(&e);
        }
    };
    let entries = match sweep(&text, vary, values) {
        Ok(entries) => entries,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_for(&e);
        }
    };
    let mut any_entry_failed = false;
    let mut largest_passing: Option<f64> = None;
    for entry in &entries {
        match &entry.outcome {
            Ok(summary) => {
                let pass = summary.all_pass();
                let flags = summary
                    .flags
                    .iter()
                    .map(|f| format!("{}:{}", f.name, if f.pass { "pass" } else { "fail" }))
                    .collect::<Vec<_>>()
                    .join(",");
                println!(
                    "{vary} = {} => {} t_ext = {} flags = {}",
                    entry.value,
                    if pass { "pass" } else { "FAIL" },
                    fmt_opt(summary.extinction.t_num),
                    if flags.is_empty() { "none" } else { &flags },
                );
                if pass {
                    if let Ok(v) = entry.value.parse::<f64>() {
                        largest_passing =
                            Some(largest_passing.map_or(v, |cur: f64| cur.max(v)));
                    }
                } else {
                    any_entry_failed = true;
                }
            }
            Err(e) => {
                println!("{vary} = {} => ERROR {e}", entry.value);
                any_entry_failed = true;
            }
        }
    }
    println!("largest_passing = {}", fmt_opt(largest_passing));
    if any_entry_failed {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    }
}

fn cmd_verify(suite: &str, seed: u64, trials: u64) -> ExitCode {
    let suite: VerifySuite = match suite.parse() {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let report = verify_suite(suite, seed, trials);
    match serde_json::to_string_pretty(&report) {
        Ok(json) => println!("{json}"),
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    if report.all_passed {
        ExitCode::SUCCESS
    } else {
        eprintln!("error: at least one property failed; see counterexamples above");
        ExitCode::from(2)
    }
}

fn cmd_fit(csv: &PathBuf, kind: DecayKind) -> ExitCode {
    let series = match read_series_csv(csv) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_for(&e);
        }
    };
    if series.is_empty() {
        eprintln!("error: series is empty");
        return ExitCode::from(1);
    }
    let window = (
        series.times()[0],
        *series.times().last().expect("nonempty"),
    );
    match fit_decay(&series, kind, window) {
        Ok(fit) => {
            println!(
                "kind = {}",
                match kind {
                    DecayKind::Exponential => "exp",
                    DecayKind::Power => "power",
                }
            );
            println!("window = {}, {}", window.0, window.1);
            println!("fitted = {:.17e}", fit.rate_or_exponent);
            println!("r2 = {:.17e}", fit.r2);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_for(&e)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::CheckCone { m, a } => cmd_check_cone(m, a),
        Command::Run { config } => cmd_run(&config),
        Command::Sweep {
            config,
            vary,
            values,
        } => cmd_sweep(&config, &vary, &values),
        Command::Verify {
            suite,
            seed,
            trials,
        } => cmd_verify(&suite, seed, trials),
        Command::Fit { csv, kind } => cmd_fit(&csv, kind),
    }
}
