//! The `sample`, `sweep`, `toy`, `opcheck` and `geom` commands. Each is a
//! pure function of its configuration: outputs depend only on the config and
//! seed, and reruns overwrite them byte for byte.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use hamsde::analytic_toy::{run_exact_chain, ToyMode, ToyParams};
use hamsde::batching::{BatchMode, BatchSchedule};
use hamsde::chain::{run_chain, ChainConfig, Init, Trace};
use hamsde::geometry::{
    jacobian_fd, leapfrog_det_target, lie_trotter_det_target, symplectic_residual, FrozenStep,
};
use hamsde::integrators::{IntegratorSpec, Scheme};
use hamsde::metrics::{ks_vs_gaussian, normal_cdf, EmpiricalSample};
use hamsde::operator_lab::{
    error_order_slope, geometric_grid, splitting_errors, GeneratorSet, LabMode, Norm, MAX_ENUMERATED_K,
};
use hamsde::phase_space::{NoiseSource, RngStream, State};
use hamsde::potentials::ToyData;
use rayon::prelude::*;

use crate::config::{Command, Config};
use crate::error::{CliError, CliResult};
use crate::models::{self, Method};
use crate::sweep::{run_sweep, slopes, slopes_csv, summary_csv, CellResult, GroupSlope, SweepPlan};

/// Run directory: `out` if set, else `runs/<command>-<unix time>-seed<seed>`.
pub fn run_dir(cfg: &Config) -> CliResult<PathBuf> {
    let out = cfg.raw("out");
    if !out.is_empty() {
        return Ok(PathBuf::from(out));
    }
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    let seed: u64 = cfg.get("seed")?;
    Ok(PathBuf::from("runs").join(format!("{}-{secs}-seed{seed}", cfg.command.name())))
}

pub fn write(dir: &Path, name: &str, contents: &str) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn chain_config(cfg: &Config) -> CliResult<ChainConfig> {
    let c = ChainConfig {
        n_samples: cfg.get("n")?,
        burn_in: cfg.get("burn-in")?,
        thinning: cfg.get("thin")?,
        init: Init::Prior,
        seed: cfg.get("seed")?,
        stream: 0,
    };
    c.validate()?;
    Ok(c)
}

fn batch_setup(cfg: &Config) -> CliResult<(usize, BatchMode)> {
    let k: usize = cfg.get("K")?;
    let mode: BatchMode = cfg.get("mode")?;
    if k == 0 {
        return Err(CliError::invalid("K must be >= 1"));
    }
    if mode == BatchMode::Full && k != 1 {
        return Err(CliError::invalid("mode full needs K = 1"));
    }
    Ok((k, mode))
}

fn meta_text(trace_meta: &str, cfg: &Config) -> String {
    format!("{trace_meta}{}", cfg.echo())
}

/// One chain; writes `trace.csv` and `meta.txt`. On divergence the kept
/// samples and a `divergence.txt` report are written before failing.
pub fn cmd_sample(mut cfg: Config) -> CliResult<PathBuf> {
    let method: Method = cfg.get("scheme")?;
    let eta: f64 = cfg.get("eta")?;
    let (k, mode) = batch_setup(&cfg)?;
    let (_, potential) = models::build_model(&mut cfg, k)?;
    let chain = chain_config(&cfg)?;
    let d = potential.dim();
    let dir = run_dir(&cfg)?;
    let result = match method {
        Method::Exact => {
            let data = potential
                .toy_data()
                .ok_or_else(|| CliError::invalid("scheme exact is only available for the toy model"))?;
            let toy_mode = match (mode, k) {
                (BatchMode::Full, 1) => ToyMode::Full,
                (BatchMode::IidUniform, 2) => ToyMode::MiniBatch,
                _ => return Err(CliError::invalid("scheme exact supports mode full, or mode iid with K = 2")),
            };
            let params = ToyParams::new(data.clone(), cfg.get("C")?)?;
            if !(eta > 0.0) {
                return Err(CliError::invalid(format!("step size must be > 0, got {eta}")));
            }
            run_exact_chain(&params, eta, toy_mode, &chain)
        }
        Method::Integrator(scheme) => {
            let spec = models::spec(&cfg, scheme, eta, d)?;
            let sched = BatchSchedule::new(mode, k, chain.schedule_stream())?;
            run_chain(&potential, &spec, sched, &chain)
        }
    };
    match result {
        Ok(trace) => {
            write(&dir, "trace.csv", &trace.to_csv(d))?;
            write(&dir, "meta.txt", &meta_text(&trace.meta.to_text(), &cfg))?;
            Ok(dir)
        }
        Err(hamsde::Error::Divergence(rep)) => {
            if let Some(partial) = &rep.partial {
                write(&dir, "trace.csv", &partial.to_csv(d))?;
            }
            write(&dir, "meta.txt", &cfg.echo())?;
            write(&dir, "divergence.txt", &format!("{rep}\n"))?;
            Err(CliError::Divergence(rep.to_string()))
        }
        Err(e) => Err(e.into()),
    }
}

/// Sweep plan from a `sweep` config.
pub fn sweep_plan(cfg: &Config, d: usize) -> CliResult<SweepPlan> {
    let friction: f64 = cfg.get("C")?;
    if !(friction > 0.0) {
        return Err(CliError::invalid(format!("C must be > 0, got {friction}")));
    }
    let ks: Vec<usize> = cfg.list("K")?;
    if ks.contains(&0) {
        return Err(CliError::invalid("K must be >= 1"));
    }
    let plan = SweepPlan {
        methods: cfg.list("scheme")?,
        etas: cfg.list("eta-grid")?,
        ks,
        mode: cfg.get("mode")?,
        friction,
        mass: models::mass(cfg, d)?,
        inner_steps: cfg.get("nl")?,
        v_hat: cfg.get("vhat")?,
        n: cfg.get("n")?,
        reps: cfg.get("reps")?,
        burn_in: cfg.get_opt("burn-in")?,
        thinning: cfg.get_opt("thin")?,
        seed: cfg.get("seed")?,
        jobs: cfg.get("jobs")?,
    };
    if plan.ks.iter().any(|&k| k > 1) && plan.mode == BatchMode::Full {
        return Err(CliError::invalid("K > 1 needs mode perm or iid"));
    }
    Ok(plan)
}

/// Writes `summary.csv`, `slopes.csv` and `meta.txt`.
pub fn cmd_sweep(mut cfg: Config) -> CliResult<(PathBuf, Vec<CellResult>, Vec<GroupSlope>)> {
    let (_, potential) = models::build_model(&mut cfg, 1)?;
    let plan = sweep_plan(&cfg, potential.dim())?;
    let cells = run_sweep(&potential, &plan)?;
    let groups = slopes(&cells);
    let dir = run_dir(&cfg)?;
    write(&dir, "summary.csv", &summary_csv(&cells))?;
    write(&dir, "slopes.csv", &slopes_csv(&groups))?;
    write(&dir, "meta.txt", &cfg.echo())?;
    Ok((dir, cells, groups))
}

/// KS of one exact toy chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyResult {
    pub mode: ToyMode,
    pub ks: f64,
    pub mean: f64,
    pub var: f64,
    pub histogram: String,
}

/// `bin_lo,bin_hi,count,density,analytic_density`, equal bins over
/// mean ± 6 sd of the posterior.
pub fn histogram_csv(x: &[f64], mean: f64, var: f64, bins: usize) -> String {
    let sd = var.sqrt();
    let (lo, hi) = (mean - 6.0 * sd, mean + 6.0 * sd);
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0u64; bins];
    for &v in x {
        if v >= lo && v < hi {
            counts[(((v - lo) / width) as usize).min(bins - 1)] += 1;
        }
    }
    let mut s = String::from("bin_lo,bin_hi,count,density,analytic_density\n");
    for (b, &c) in counts.iter().enumerate() {
        let a = lo + b as f64 * width;
        let z = |t: f64| (t - mean) / sd;
        let mass = normal_cdf(z(a + width)) - normal_cdf(z(a));
        let _ = writeln!(
            s,
            "{a},{},{c},{},{}",
            a + width,
            c as f64 / (x.len() as f64 * width),
            mass / width
        );
    }
    s
}

/// Exact-kernel chains in full and mini-batch mode for the toy model,
/// driven by the same Gaussian draws.
pub fn toy_run(params: &ToyParams, eta: f64, chain: &ChainConfig, bins: usize, jobs: usize) -> CliResult<Vec<ToyResult>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::invalid(e.to_string()))?;
    let (mean, var) = (params.x_bar(), params.sigma_l2());
    pool.install(|| {
        [ToyMode::Full, ToyMode::MiniBatch]
            .par_iter()
            .map(|&mode| {
                let trace: Trace = run_exact_chain(params, eta, mode, chain)?;
                let x: Vec<f64> = trace.states.iter().map(|s| s.theta[0]).collect();
                let n = x.len() as f64;
                let m = x.iter().sum::<f64>() / n;
                let v = x.iter().map(|t| (t - m).powi(2)).sum::<f64>() / n;
                let hist = histogram_csv(&x, mean, var, bins);
                let ks = ks_vs_gaussian(&EmpiricalSample::new(x)?, mean, var)?;
                Ok(ToyResult {
                    mode,
                    ks,
                    mean: m,
                    var: v,
                    histogram: hist,
                })
            })
            .collect()
    })
}

/// Toy thinning when the config says `auto`: about one time unit.
pub fn toy_thinning(eta: f64) -> u64 {
    ((1.0 / eta).round() as u64).max(1)
}

pub fn toy_params(cfg: &Config) -> CliResult<ToyParams> {
    let data = cfg.raw("data");
    let (x1, x2) = if data.is_empty() {
        let r = ToyData::reference();
        (r.x1, r.x2)
    } else {
        hamsde::potentials::read_toy_csv(Path::new(data))?
    };
    Ok(ToyParams::new(
        ToyData {
            x1,
            x2,
            sigma_x2: cfg.get("noise-var")?,
            sigma_theta2: cfg.get("prior-var")?,
        },
        cfg.get("C")?,
    )?)
}

/// Writes `hist_full.csv`, `hist_minibatch.csv`, `summary.csv`, `meta.txt`.
pub fn cmd_toy(mut cfg: Config) -> CliResult<(PathBuf, Vec<ToyResult>)> {
    let eta: f64 = cfg.get("eta")?;
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(CliError::invalid(format!("step size must be > 0, got {eta}")));
    }
    if cfg.is_auto("thin") {
        cfg.set("thin", &toy_thinning(eta).to_string())?;
    }
    let n: usize = cfg.get("n")?;
    if n < 10_000 {
        return Err(CliError::invalid(format!("toy needs n >= 10000, got {n}")));
    }
    let bins: usize = cfg.get("bins")?;
    if bins == 0 {
        return Err(CliError::invalid("bins must be >= 1"));
    }
    let params = toy_params(&cfg)?;
    let chain = chain_config(&cfg)?;
    let results = toy_run(&params, eta, &chain, bins, cfg.get("jobs")?)?;
    let dir = run_dir(&cfg)?;
    let mut summary = String::from("mode,eta,n,ks,mean,var,post_mean,post_var\n");
    for r in &results {
        write(&dir, &format!("hist_{}.csv", r.mode.name()), &r.histogram)?;
        let _ = writeln!(
            summary,
            "{},{eta},{n},{},{},{},{},{}",
            r.mode.name(),
            r.ks,
            r.mean,
            r.var,
            params.x_bar(),
            params.sigma_l2()
        );
    }
    write(&dir, "summary.csv", &summary)?;
    write(&dir, "meta.txt", &cfg.echo())?;
    Ok((dir, results))
}

/// Slope of one operator-lab trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSlope {
    pub trial: usize,
    pub k: usize,
    pub n: usize,
    pub mode: LabMode,
    pub slope: f64,
    pub r2: f64,
}

impl TrialSlope {
    /// Within ±0.3 of the expected order.
    pub fn in_band(&self) -> bool {
        (self.slope - self.mode.expected_slope()).abs() <= 0.3
    }
}

/// Random generator sets cycling through `ks` and `dims`; returns the error
/// rows (`trial,K,n,mode,eta,error`) and per-trial slopes.
pub fn opcheck_run(
    trials: usize,
    ks: &[usize],
    dims: &[usize],
    etas: &[f64],
    norm: Norm,
    seed: u64,
    jobs: usize,
) -> CliResult<(String, Vec<TrialSlope>)> {
    if let Some(&k) = ks.iter().find(|&&k| k > MAX_ENUMERATED_K || k < 1) {
        return Err(CliError::invalid(format!(
            "K = {k} outside 1..={MAX_ENUMERATED_K} (randomized expectation enumerates K! orderings)"
        )));
    }
    if dims.contains(&0) {
        return Err(CliError::invalid("dims must be >= 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::invalid(e.to_string()))?;
    let per_trial: Vec<CliResult<(String, Vec<TrialSlope>)>> = pool.install(|| {
        (0..trials)
            .into_par_iter()
            .map(|t| {
                let k = ks[t % ks.len()];
                let n = dims[(t / ks.len()) % dims.len()];
                let g = GeneratorSet::random(k, n, &mut RngStream::new(seed, t as u64));
                let mut rows = String::new();
                let mut fits = Vec::new();
                for mode in LabMode::ALL {
                    let errs = splitting_errors(&g, etas, mode, norm)?;
                    for (eta, e) in etas.iter().zip(&errs) {
                        let _ = writeln!(rows, "{t},{k},{n},{},{eta},{e}", mode.name());
                    }
                    let (slope, r2) = error_order_slope(etas, &errs).unwrap_or((f64::NAN, f64::NAN));
                    fits.push(TrialSlope {
                        trial: t,
                        k,
                        n,
                        mode,
                        slope,
                        r2,
                    });
                }
                Ok((rows, fits))
            })
            .collect()
    });
    let mut rows = String::from("trial,K,n,mode,eta,error\n");
    let mut fits = Vec::new();
    for r in per_trial {
        let (text, f) = r?;
        rows.push_str(&text);
        fits.extend(f);
    }
    Ok((rows, fits))
}

pub fn trial_slopes_csv(fits: &[TrialSlope]) -> String {
    let mut s = String::from("trial,K,n,mode,slope,r2,expected,in_band\n");
    for f in fits {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            f.trial,
            f.k,
            f.n,
            f.mode.name(),
            f.slope,
            f.r2,
            f.mode.expected_slope(),
            f.in_band()
        );
    }
    s
}

/// Writes `opcheck.csv`, `slopes.csv` and `meta.txt`.
pub fn cmd_opcheck(cfg: Config) -> CliResult<(PathBuf, Vec<TrialSlope>)> {
    let norm = match cfg.raw("norm") {
        "spectral" => Norm::Spectral,
        "frobenius" => Norm::Frobenius,
        other => return Err(CliError::invalid(format!("unknown norm '{other}'"))),
    };
    let eta: f64 = cfg.get("eta")?;
    let points: usize = cfg.get("points")?;
    if !(eta > 0.0) || points < 3 {
        return Err(CliError::invalid("opcheck needs eta > 0 and points >= 3"));
    }
    let (rows, fits) = opcheck_run(
        cfg.get("trials")?,
        &cfg.list::<usize>("K")?,
        &cfg.list::<usize>("dims")?,
        &geometric_grid(eta, points),
        norm,
        cfg.get("seed")?,
        cfg.get("jobs")?,
    )?;
    let dir = run_dir(&cfg)?;
    write(&dir, "opcheck.csv", &rows)?;
    write(&dir, "slopes.csv", &trial_slopes_csv(&fits))?;
    write(&dir, "meta.txt", &cfg.echo())?;
    Ok((dir, fits))
}

/// One row of the quasi-symplecticity table.
#[derive(Debug, Clone, PartialEq)]
pub struct GeomRow {
    pub scheme: Scheme,
    pub eta: f64,
    pub friction: f64,
    pub det_j: f64,
    pub det_target: Option<f64>,
    pub symp_residual: f64,
}

impl GeomRow {
    pub fn det_residual(&self) -> Option<f64> {
        self.det_target.map(|t| (self.det_j - t).abs())
    }
}

/// Determinant target where one is known: damped leapfrog (SGHMC with
/// Ṽ = 0 is the same map) and the Lie-Trotter family.
pub fn det_target(spec: &IntegratorSpec) -> Option<f64> {
    match spec.scheme {
        Scheme::Leapfrog => Some(leapfrog_det_target(spec.eta, spec.friction, &spec.mass)),
        Scheme::Sghmc if spec.v_hat == 0.0 => Some(leapfrog_det_target(spec.eta, spec.friction, &spec.mass)),
        Scheme::LieTrotter | Scheme::HmcPartial => Some(lie_trotter_det_target(
            spec.eta,
            spec.friction,
            &spec.mass,
            spec.inner_steps,
        )),
        _ => None,
    }
}

pub fn geom_csv(rows: &[GeomRow]) -> String {
    let mut s = String::from("scheme,eta,C,det_J,det_target,det_residual,symp_residual\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.scheme,
            r.eta,
            r.friction,
            r.det_j,
            r.det_target.map_or(String::new(), |v| v.to_string()),
            r.det_residual().map_or(String::new(), |v| v.to_string()),
            r.symp_residual
        );
    }
    s
}

/// Writes `geom.csv` and `meta.txt`.
pub fn cmd_geom(mut cfg: Config) -> CliResult<(PathBuf, Vec<GeomRow>)> {
    let (_, potential) = models::build_model(&mut cfg, 1)?;
    let d = potential.dim();
    let schemes: Vec<Scheme> = cfg.list("scheme")?;
    let frictions: Vec<f64> = cfg.list("C")?;
    let eta: f64 = cfg.get("eta")?;
    let eps: f64 = cfg.get("eps")?;
    let seed: u64 = cfg.get("seed")?;
    let mass = models::mass(&cfg, d)?;
    let nl: usize = cfg.get("nl")?;
    if !(eta > 0.0) {
        return Err(CliError::invalid(format!("step size must be > 0, got {eta}")));
    }
    let field = potential.full();
    let mut rows = Vec::new();
    for (i, &scheme) in schemes.iter().enumerate() {
        for (j, &c) in frictions.iter().enumerate() {
            let spec = IntegratorSpec::new(scheme, eta, c, mass.clone())?.with_inner_steps(nl)?;
            let mut rng = RngStream::new(seed, (i * frictions.len() + j) as u64);
            let frozen = FrozenStep::new(spec.clone(), &field, &mut rng);
            let z0 = State {
                r: rng.standard_normal(d),
                theta: rng.standard_normal(d),
            };
            let jac = jacobian_fd(&frozen, &z0, eps)?;
            rows.push(GeomRow {
                scheme,
                eta,
                friction: c,
                det_j: jac.determinant(),
                det_target: det_target(&spec),
                symp_residual: symplectic_residual(&jac)?,
            });
        }
    }
    let dir = run_dir(&cfg)?;
    write(&dir, "geom.csv", &geom_csv(&rows))?;
    write(&dir, "meta.txt", &cfg.echo())?;
    Ok((dir, rows))
}

/// Resolves a config for `command` (used by tests and the repro harness).
pub fn config(command: Command, overrides: &[(&str, &str)]) -> CliResult<Config> {
    let owned: Vec<(String, String)> = overrides
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    Config::resolve(command, None, &owned)
}
