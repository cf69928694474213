//! `fallsphere` command-line front-end.
//!
//! Exit status: 0 success, 1 runtime error, 2 usage error, 3 simplicity not
//! certified, 4 not transversal, 5 complex crossing, 6 not resolved at this
//! resolution, 7 identity check failed or underresolved.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use fallsphere::run::{self, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "fallsphere", version, about = "Steady bifurcation of a sphere falling in a viscous liquid")]
struct Cli {
    /// Run configuration (TOML); defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Azimuthal wavenumber for spectrum, critical and symmetry.
    #[arg(long, global = true, value_name = "M")]
    mode: Option<u32>,
    #[arg(long, global = true, value_name = "LAMBDA")]
    lambda_min: Option<f64>,
    #[arg(long, global = true, value_name = "LAMBDA")]
    lambda_max: Option<f64>,
    /// Output directory (overrides the config).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Use the closed-form operator family instead of the flow problem.
    #[arg(long, global = true)]
    manufactured: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the identity suite and print a pass/fail table.
    Verify,
    /// Compute or extend the axisymmetric base branch.
    Base,
    /// Leading eigenvalues along the stored branch.
    Spectrum,
    /// Locate the critical parameter and certify the bifurcation.
    Critical,
    /// Evaluate the symmetry-breaking functional at the critical point.
    Symmetry,
}

fn config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(v) = cli.lambda_min {
        cfg.lambda.min = v;
    }
    if let Some(v) = cli.lambda_max {
        cfg.lambda.max = v;
    }
    if let Some(out) = &cli.out {
        cfg.output = out.clone();
    }
    if let (Some(m), Command::Spectrum) = (cli.mode, &cli.command) {
        cfg.modes = vec![m];
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<u8> {
    let cfg = config(cli)?;
    let mode = cli.mode.unwrap_or(1);
    match cli.command {
        Command::Verify => {
            let report = run::cmd_verify(&cfg)?;
            print!("{}", report.table());
            println!("elapsed {:.1} s", report.seconds);
            let path = cfg.output.join("verify.toml");
            run::write_report(&path, &cfg.fingerprint(), &report)?;
            if report.passed() {
                Ok(0)
            } else {
                for r in report.failures() {
                    eprintln!("failed: {} (residual {:.3e} > {:.1e})", r.identity, r.residual, r.tolerance);
                }
                if !report.underresolved.is_empty() {
                    eprintln!("quadrature underresolved; identities not judged");
                }
                Ok(7)
            }
        }
        Command::Base => {
            let out = run::cmd_base(&cfg)?;
            println!(
                "branch: {} points ({} reused, {} computed), lambda up to {}",
                out.branch.points.len(),
                out.reused,
                out.computed,
                out.branch.last().map_or(0.0, |p| p.lambda)
            );
            if let Some(t) = &out.branch.truncated {
                println!("truncated: {t}");
            }
            println!("wrote {}", out.csv.display());
            Ok(0)
        }
        Command::Spectrum => {
            for p in run::cmd_spectrum(&cfg)? {
                println!("wrote {}", p.display());
            }
            Ok(0)
        }
        Command::Critical => {
            let out = run::cmd_critical(&cfg, mode, cli.manufactured)?;
            let r = &out.report;
            println!("status: {:?}", r.status);
            if let Some(l0) = r.lambda0 {
                println!("lambda0 = {l0:.12e}");
            }
            if let Some(t) = &r.transversality {
                println!("mu'(lambda0): difference {:.6e}, formula {:.6e}", t.mu_prime_fd, t.mu_prime_formula);
            }
            for n in &r.notes {
                println!("note: {n}");
            }
            for f in &out.files {
                println!("wrote {}", f.display());
            }
            Ok(run::exit_code(r.status) as u8)
        }
        Command::Symmetry => {
            let (s, path) = run::cmd_symmetry(&cfg, mode)?;
            println!("status: {:?}", s.status);
            match (&s.symmetry, s.lambda0) {
                (Some(sb), Some(l0)) => {
                    println!("lambda0 = {l0:.12e}");
                    println!("functional = {:.12e}", sb.functional);
                    println!("omega_e3 = {:.12e}", sb.omega_e3);
                    println!("-(8pi/lambda0) omega_e3 = {:.12e}", sb.predicted_negative);
                }
                _ => println!("no critical point in the bracket"),
            }
            println!("wrote {}", path.display());
            Ok(run::exit_code(s.status) as u8)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
