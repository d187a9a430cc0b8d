use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hamsde_cli::experiments::{cmd_geom, cmd_opcheck, cmd_sample, cmd_sweep, cmd_toy, run_dir};
use hamsde_cli::repro::{self, Check, ReproSettings, Status};
use hamsde_cli::{CliError, CliResult, Command, Config};

const PRECEDENCE: &str = "Parameters are resolved in increasing precedence: built-in defaults, \
then the --config file (flat `key = value` lines, `#` comments, keys named like the long flags), \
then command-line flags. The resolved set is written to meta.txt in the run directory.\n\n\
Exit codes: 0 success, 2 validation error, 3 divergence, 4 I/O error.";

#[derive(Parser)]
#[command(name = "hamsde", version, about = "Hamiltonian SDE samplers and convergence-order checks", after_help = PRECEDENCE)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

macro_rules! params {
    ($name:ident { $($field:ident : $key:literal => $help:literal),* $(,)? }) => {
        #[derive(Args)]
        #[command(after_help = PRECEDENCE)]
        struct $name {
            /// Config file with `key = value` lines
            #[arg(long)]
            config: Option<PathBuf>,
            $(
                #[doc = $help]
                #[arg(long = $key)]
                $field: Option<String>,
            )*
        }

        impl $name {
            fn overrides(&self) -> Vec<(String, String)> {
                let mut out = Vec::new();
                $(
                    if let Some(v) = &self.$field {
                        out.push(($key.to_string(), v.clone()));
                    }
                )*
                out
            }
        }
    };
}

params!(SampleArgs {
    model: "model" => "Model: toy, lingauss or logistic2d",
    data: "data" => "CSV data file (synthetic data when omitted)",
    data_seed: "data-seed" => "Seed of the synthetic data set",
    noise_var: "noise-var" => "Observation noise variance, or auto",
    prior_var: "prior-var" => "Prior variance, or auto",
    scheme: "scheme" => "euler, leapfrog, spv, lie-trotter, symmetric, mt3, sghmc, hmc or exact",
    eta: "eta" => "Step size",
    c: "C" => "Friction",
    mass: "mass" => "Mass diagonal: one value or a comma list",
    k: "K" => "Number of mini-batches",
    mode: "mode" => "Batch schedule: full, perm or iid",
    nl: "nl" => "Inner leapfrog steps (lie-trotter, symmetric, hmc)",
    vhat: "vhat" => "Gradient-noise estimate for sghmc",
    n: "n" => "Kept samples",
    burn_in: "burn-in" => "Burn-in steps",
    thin: "thin" => "Thinning interval",
    seed: "seed" => "Master seed",
    jobs: "jobs" => "Worker threads",
    out: "out" => "Output directory (default runs/<command>-<time>-seed<seed>)",
});

params!(SweepArgs {
    model: "model" => "Model: toy, lingauss or logistic2d",
    data: "data" => "CSV data file (synthetic data when omitted)",
    data_seed: "data-seed" => "Seed of the synthetic data set",
    noise_var: "noise-var" => "Observation noise variance, or auto",
    prior_var: "prior-var" => "Prior variance, or auto",
    scheme: "scheme" => "Comma list of schemes (exact allowed for the toy model)",
    eta_grid: "eta-grid" => "Comma list of step sizes",
    c: "C" => "Friction",
    mass: "mass" => "Mass diagonal: one value or a comma list",
    k: "K" => "Comma list of batch counts",
    mode: "mode" => "Batch schedule: full, perm or iid",
    nl: "nl" => "Inner leapfrog steps",
    vhat: "vhat" => "Gradient-noise estimate for sghmc",
    n: "n" => "Kept samples per replicate",
    reps: "reps" => "Replicate chains per cell",
    burn_in: "burn-in" => "Burn-in steps, or auto",
    thin: "thin" => "Thinning interval, or auto",
    seed: "seed" => "Master seed",
    jobs: "jobs" => "Worker threads",
    out: "out" => "Output directory",
});

params!(ToyArgs {
    data: "data" => "Toy CSV with the two observations",
    noise_var: "noise-var" => "Observation noise variance",
    prior_var: "prior-var" => "Prior variance",
    eta: "eta" => "Step size of the exact kernel",
    c: "C" => "Friction",
    n: "n" => "Kept samples (at least 10000)",
    burn_in: "burn-in" => "Burn-in steps",
    thin: "thin" => "Thinning interval, or auto",
    bins: "bins" => "Histogram bins",
    seed: "seed" => "Master seed",
    jobs: "jobs" => "Worker threads",
    out: "out" => "Output directory",
});

params!(OpcheckArgs {
    trials: "trials" => "Random generator draws",
    k: "K" => "Comma list of generator counts (at most 6)",
    dims: "dims" => "Comma list of matrix sizes",
    eta: "eta" => "Largest step of the halving grid",
    points: "points" => "Grid points",
    norm: "norm" => "spectral or frobenius",
    seed: "seed" => "Master seed",
    jobs: "jobs" => "Worker threads",
    out: "out" => "Output directory",
});

params!(GeomArgs {
    model: "model" => "Model: toy, lingauss or logistic2d",
    data: "data" => "CSV data file (synthetic data when omitted)",
    data_seed: "data-seed" => "Seed of the synthetic data set",
    noise_var: "noise-var" => "Observation noise variance, or auto",
    prior_var: "prior-var" => "Prior variance, or auto",
    scheme: "scheme" => "Comma list of schemes",
    eta: "eta" => "Step size",
    c: "C" => "Comma list of frictions",
    mass: "mass" => "Mass diagonal: one value or a comma list",
    nl: "nl" => "Inner leapfrog steps",
    eps: "eps" => "Finite-difference step of the Jacobian",
    seed: "seed" => "Seed of the base point",
    jobs: "jobs" => "Worker threads",
    out: "out" => "Output directory",
});

params!(ReproArgs {
    n: "n" => "Kept samples per replicate in the gap and orders sweeps",
    reps: "reps" => "Replicate chains per sweep cell",
    seed: "seed" => "Master seed",
    jobs: "jobs" => "Worker threads",
    out: "out" => "Output directory",
});

#[derive(Subcommand)]
enum Cmd {
    /// Run one chain and write its trace
    Sample(SampleArgs),
    /// Step-size sweep with KS, moment errors and fitted slopes
    Sweep(SweepArgs),
    /// Full-batch vs mini-batch exact kernel on the 1-D toy model
    Toy(ToyArgs),
    /// Operator-splitting error orders on random matrices
    Opcheck(OpcheckArgs),
    /// Jacobian determinants and symplecticity of one step
    Geom(GeomArgs),
    /// Reproduction checks: gap, toy, orders, splitting, geometry, momentum, all, or golden
    Repro {
        /// gap, toy, orders, splitting, geometry, momentum, all, or golden
        which: String,
        /// Rewrite the golden file from the oracles (golden only)
        #[arg(long)]
        regen_golden: bool,
        /// Golden value file
        #[arg(long)]
        golden_file: Option<PathBuf>,
        #[command(flatten)]
        args: ReproArgs,
    },
}

fn resolve(command: Command, file: &Option<PathBuf>, overrides: Vec<(String, String)>) -> CliResult<Config> {
    Config::resolve(command, file.as_deref(), &overrides)
}

fn print_checks(checks: &[Check]) {
    for c in checks {
        println!("{:<8} {:<44} {:>12.6}  {}", c.status.name(), c.name, c.value, c.requirement);
    }
}

fn run(cli: Cli) -> CliResult<bool> {
    match cli.command {
        Cmd::Sample(a) => {
            let dir = cmd_sample(resolve(Command::Sample, &a.config, a.overrides())?)?;
            println!("{}", dir.display());
        }
        Cmd::Sweep(a) => {
            let (dir, _, groups) = cmd_sweep(resolve(Command::Sweep, &a.config, a.overrides())?)?;
            for g in &groups {
                if let Some(f) = g.fit {
                    println!("{} K={} {}: slope {:.3} (r² {:.3})", g.method.name(), g.k, g.functional.name(), f.slope, f.r2);
                }
            }
            println!("{}", dir.display());
        }
        Cmd::Toy(a) => {
            let (dir, results) = cmd_toy(resolve(Command::Toy, &a.config, a.overrides())?)?;
            for r in &results {
                println!("{}: KS {:.5}", r.mode.name(), r.ks);
            }
            println!("{}", dir.display());
        }
        Cmd::Opcheck(a) => {
            let (dir, fits) = cmd_opcheck(resolve(Command::Opcheck, &a.config, a.overrides())?)?;
            let inside = fits.iter().filter(|f| f.in_band()).count();
            println!("{inside}/{} slopes in band", fits.len());
            println!("{}", dir.display());
        }
        Cmd::Geom(a) => {
            let (dir, _) = cmd_geom(resolve(Command::Geom, &a.config, a.overrides())?)?;
            println!("{}", dir.display());
        }
        Cmd::Repro {
            which,
            regen_golden,
            golden_file,
            args,
        } => {
            if which == "golden" {
                let file = golden_file.unwrap_or_else(repro::default_golden_path);
                let checks = repro::golden(&file, regen_golden)?;
                print_checks(&checks);
                return Ok(checks.iter().all(|c| c.status == Status::Pass));
            }
            if regen_golden || golden_file.is_some() {
                return Err(CliError::invalid("--regen-golden and --golden-file apply to `repro golden` only"));
            }
            if which != "all" && !repro::TARGETS.contains(&which.as_str()) {
                return Err(CliError::invalid(format!(
                    "unknown reproduction '{which}' ({}, all, golden)",
                    repro::TARGETS.join(", ")
                )));
            }
            let mut cfg = resolve(Command::Repro, &args.config, args.overrides())?;
            let s = ReproSettings {
                n: cfg.get("n")?,
                reps: cfg.get("reps")?,
                seed: cfg.get("seed")?,
                jobs: cfg.get("jobs")?,
            };
            if s.jobs == 0 || s.n == 0 || s.reps < 2 {
                return Err(CliError::invalid("repro needs n >= 1, reps >= 2 and jobs >= 1"));
            }
            let dir = run_dir(&cfg)?;
            cfg.set("out", &dir.display().to_string())?;
            hamsde_cli::experiments::write(&dir, "meta.txt", &format!("which = {which}\n{}", cfg.echo()))?;
            let checks = repro::run(&which, &dir, s)?;
            print_checks(&checks);
            println!("{}", dir.display());
            return Ok(checks.iter().all(|c| c.status == Status::Pass));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
