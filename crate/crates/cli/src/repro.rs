//! Reproduction harness: bottleneck and order-of-convergence checks with a
//! markdown report and a machine-readable pass/fail table, plus golden
//! values regenerated from independent oracles.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use hamsde::analytic_toy::{toy_transition, ToyMode, ToyParams};
use hamsde::batching::{BatchMode, BatchSchedule};
use hamsde::chain::{run_chain, ChainConfig, Init};
use hamsde::geometry::{
    jacobian_fd, leapfrog_det_target, lie_trotter_det_target, symplectic_residual, FrozenStep,
};
use hamsde::integrators::{IntegratorSpec, Scheme, MT3_W2_WEIGHT};
use hamsde::operator_lab::{
    bch_truncated, geometric_grid, matrix_exp, splitting_errors, GeneratorSet, LabMode, Norm,
};
use hamsde::phase_space::{MassMatrix, NoiseSource, RngStream, State};
use hamsde::potentials::{synthetic_logistic, Potential};
use hamsde::reference::stationary_moments;
use nalgebra::Vector2;

use crate::error::{CliError, CliResult};
use crate::experiments::{opcheck_run, toy_run, toy_thinning, write};
use crate::models::{sweep_instance, unit_instance, Method};
use rayon::prelude::*;
use crate::sweep::{
    fit_window, run_sweep, slope_of, slopes, slopes_csv, summary_csv, Functional, SlopeFit, SweepPlan,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    Inconclusive,
}

impl Status {
    pub fn name(self) -> &'static str {
        match self {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::Inconclusive => "inconclusive",
        }
    }

    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Status::Pass
        } else {
            Status::Fail
        }
    }
}

/// One assertion of a reproduction run.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub requirement: String,
    pub status: Status,
}

impl Check {
    pub fn new(name: &str, value: f64, requirement: &str, ok: bool) -> Self {
        Check {
            name: name.to_string(),
            value,
            requirement: requirement.to_string(),
            status: Status::from_bool(ok),
        }
    }

    /// A slope comparison that refuses to decide when any fit has r² < 0.9.
    pub fn slopes(name: &str, fits: &[Option<SlopeFit>], requirement: &str, decide: impl Fn(&[f64]) -> (f64, bool)) -> Self {
        let usable: Option<Vec<SlopeFit>> = fits.iter().copied().collect();
        match usable {
            Some(f) if f.iter().all(SlopeFit::conclusive) => {
                let s: Vec<f64> = f.iter().map(|x| x.slope).collect();
                let (value, ok) = decide(&s);
                Check::new(name, value, requirement, ok)
            }
            _ => Check {
                name: name.to_string(),
                value: f64::NAN,
                requirement: format!("{requirement} (r² < 0.9 or failed fit)"),
                status: Status::Inconclusive,
            },
        }
    }
}

pub fn passfail_csv(checks: &[Check]) -> String {
    let mut s = String::from("check,value,requirement,status\n");
    for c in checks {
        let _ = writeln!(s, "{},{},\"{}\",{}", c.name, c.value, c.requirement, c.status.name());
    }
    s
}

pub fn report_md(title: &str, checks: &[Check], notes: &str) -> String {
    let mut s = format!("# {title}\n\n| check | value | requirement | status |\n|---|---|---|---|\n");
    for c in checks {
        let _ = writeln!(s, "| {} | {:.6} | {} | {} |", c.name, c.value, c.requirement, c.status.name());
    }
    if !notes.is_empty() {
        let _ = write!(s, "\n{notes}\n");
    }
    s
}

fn write_report(dir: &Path, title: &str, checks: &[Check], notes: &str) -> CliResult<()> {
    write(dir, "report.md", &report_md(title, checks, notes))?;
    write(dir, "passfail.csv", &passfail_csv(checks))
}

/// Harness sizes.
#[derive(Debug, Clone, Copy)]
pub struct ReproSettings {
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub jobs: usize,
}

/// Plan for the default linear-Gaussian sweep (C = 10, η = 0.04 … 0.005).
pub fn default_plan(methods: Vec<Method>, ks: Vec<usize>, s: ReproSettings) -> SweepPlan {
    SweepPlan {
        methods,
        etas: vec![0.04, 0.02, 0.01, 0.005],
        ks,
        mode: BatchMode::PermutationSweep,
        friction: 10.0,
        mass: MassMatrix::identity(2),
        inner_steps: 1,
        v_hat: 0.0,
        n: s.n,
        reps: s.reps,
        burn_in: None,
        thinning: None,
        seed: s.seed,
        jobs: s.jobs,
    }
}

/// Paired full-batch / K = 8 sweeps of MT3 and Lie-Trotter; slopes of the
/// E[θ²] error.
pub fn gap_checks(s: ReproSettings) -> CliResult<(Vec<Check>, String, String)> {
    let mt3 = Method::Integrator(Scheme::Mt3);
    let lt = Method::Integrator(Scheme::LieTrotter);
    let plan = default_plan(vec![mt3, lt], vec![1, 8], s);
    let cells = run_sweep(&sweep_instance(1)?, &plan)?;
    let groups = slopes(&cells);
    let f = |m, k| slope_of(&groups, m, k, Functional::SecondMoment);
    let checks = vec![
        Check::slopes(
            "gap.mt3_gap",
            &[f(mt3, 1), f(mt3, 8)],
            "slope(full) - slope(K=8) >= 0.4",
            |v| (v[0] - v[1], v[0] - v[1] >= 0.4),
        ),
        Check::slopes(
            "gap.lie_trotter_gap",
            &[f(lt, 1), f(lt, 8)],
            "|slope(full) - slope(K=8)| <= 0.4",
            |v| ((v[0] - v[1]).abs(), (v[0] - v[1]).abs() <= 0.4),
        ),
    ];
    Ok((checks, summary_csv(&cells), slopes_csv(&groups)))
}

pub fn repro_gap(dir: &Path, s: ReproSettings) -> CliResult<Vec<Check>> {
    let (checks, summary, slopes) = gap_checks(s)?;
    write(dir, "summary.csv", &summary)?;
    write(dir, "slopes.csv", &slopes)?;
    write_report(
        dir,
        "Mini-batch bottleneck on the linear-Gaussian model",
        &checks,
        &format!("{} kept samples x {} replicates per cell, seed {}.", s.n, s.reps, s.seed),
    )?;
    Ok(checks)
}

/// Replicate chain pairs averaged at the small step, where both KS values
/// sit at the Monte Carlo noise floor.
pub const TOY_SMALL_ETA_REPS: usize = 8;

/// KS of the exact toy chains at η = 0.4 (one chain per mode) and η = 0.01
/// (mean over replicate chains). Rows are (η, mode, stream, KS).
pub fn toy_checks(n: usize, seed: u64, jobs: usize) -> CliResult<(Vec<Check>, Vec<(f64, ToyMode, u64, f64)>)> {
    let params = ToyParams::reference();
    let mut ks = Vec::new();
    for (eta, reps) in [(0.4, 1), (0.01, TOY_SMALL_ETA_REPS)] {
        for stream in 0..reps as u64 {
            let chain = ChainConfig {
                n_samples: n,
                burn_in: 1000,
                thinning: toy_thinning(eta),
                init: Init::Prior,
                seed,
                stream,
            };
            for r in toy_run(&params, eta, &chain, 128, jobs)? {
                ks.push((eta, r.mode, stream, r.ks));
            }
        }
    }
    let mean = |eta: f64, mode| {
        let v: Vec<f64> = ks.iter().filter(|k| k.0 == eta && k.1 == mode).map(|k| k.3).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let (full, mini) = (mean(0.4, ToyMode::Full), mean(0.4, ToyMode::MiniBatch));
    let (full_s, mini_s) = (mean(0.01, ToyMode::Full), mean(0.01, ToyMode::MiniBatch));
    let checks = vec![
        Check::new("toy.full_ks", full, "< 0.012", full < 0.012),
        Check::new("toy.minibatch_ks", mini, "> 0.05", mini > 0.05),
        Check::new("toy.separation", mini / full, "minibatch/full > 10", mini > 10.0 * full),
        Check::new(
            "toy.small_eta_ratio",
            mini_s / full_s,
            &format!("mean minibatch/full KS < 3 at eta = 0.01 over {TOY_SMALL_ETA_REPS} chain pairs"),
            mini_s < 3.0 * full_s,
        ),
    ];
    Ok((checks, ks))
}

pub fn repro_toy(dir: &Path, n: usize, seed: u64, jobs: usize) -> CliResult<Vec<Check>> {
    let (checks, ks) = toy_checks(n, seed, jobs)?;
    let mut s = String::from("eta,mode,stream,ks\n");
    for (eta, mode, stream, k) in ks {
        let _ = writeln!(s, "{eta},{},{stream},{k}", mode.name());
    }
    write(dir, "summary.csv", &s)?;
    write_report(dir, "Toy model: exact kernel with and without mini-batches", &checks, "")?;
    Ok(checks)
}

/// Fraction of in-band slopes per lab mode over 100 random generator sets.
pub fn opcheck_checks(seed: u64, jobs: usize) -> CliResult<Vec<Check>> {
    let (_, fits) = opcheck_run(100, &[2, 3, 4], &[2, 3, 4], &geometric_grid(0.1, 5), Norm::Spectral, seed, jobs)?;
    Ok(LabMode::ALL
        .iter()
        .map(|&mode| {
            let of_mode: Vec<_> = fits.iter().filter(|f| f.mode == mode).collect();
            let frac = of_mode.iter().filter(|f| f.in_band()).count() as f64 / of_mode.len() as f64;
            let lo = mode.expected_slope() - 0.3;
            Check::new(
                &format!("opcheck.{}", mode.name()),
                frac,
                &format!("slope in [{lo:.1}, {:.1}] for >= 95% of draws", lo + 0.6),
                frac >= 0.95,
            )
        })
        .collect())
}

/// Slope of ‖exp(εA)exp(εB) − exp(Z₂(εA, εB))‖ for random pairs.
pub fn bch_slopes(pairs: usize, seed: u64) -> CliResult<Vec<f64>> {
    let eps = geometric_grid(0.1, 5);
    (0..pairs)
        .map(|p| {
            let g = GeneratorSet::random(2, 3, &mut RngStream::new(seed, 1000 + p as u64));
            let (a, b) = (&g.mats()[0], &g.mats()[1]);
            let errs: Vec<f64> = eps
                .iter()
                .map(|&e| {
                    let z = bch_truncated(&(a * e), &(b * e), 2)?;
                    Ok(Norm::Spectral.of(&(matrix_exp(&(a * e)) * matrix_exp(&(b * e)) - matrix_exp(&z))))
                })
                .collect::<hamsde::Result<_>>()?;
            Ok(hamsde::operator_lab::error_order_slope(&eps, &errs)?.0)
        })
        .collect()
}

/// Exact stationary θ-variance error (relative, coordinate mean) of a
/// full-batch scheme on a quadratic potential.
pub fn exact_variance_error(p: &Potential, spec: &IntegratorSpec) -> CliResult<f64> {
    let post = p.analytic_posterior()?;
    let (_, cov) = stationary_moments(p, spec)?;
    let d = p.dim();
    Ok((0..d)
        .map(|i| ((cov[(d + i, d + i)] - post.variance(i)) / post.variance(i)).abs())
        .sum::<f64>()
        / d as f64)
}

/// Slopes of the exact stationary variance error of Lie-Trotter for
/// N_l = 1 and N_l = 10 on the default grid.
pub fn inner_step_slopes(scheme: Scheme) -> CliResult<Vec<Option<SlopeFit>>> {
    let p = sweep_instance(1)?;
    let etas = [0.04, 0.02, 0.01, 0.005];
    [1usize, 10]
        .iter()
        .map(|&nl| {
            let errs: Vec<f64> = etas
                .iter()
                .map(|&eta| {
                    let spec = IntegratorSpec::new(scheme, eta, 10.0, MassMatrix::identity(2))?.with_inner_steps(nl)?;
                    exact_variance_error(&p, &spec)
                })
                .collect::<CliResult<_>>()?;
            Ok(fit_window(&etas, &errs))
        })
        .collect()
}

pub fn splitting_checks(seed: u64, jobs: usize) -> CliResult<Vec<Check>> {
    let mut checks = opcheck_checks(seed, jobs)?;
    let bch = bch_slopes(20, seed)?;
    let worst = bch.iter().map(|s| (s - 3.0).abs()).fold(0.0, f64::max);
    checks.push(Check::new("bch.order2", worst, "max |slope - 3| <= 0.1 over 20 pairs", worst <= 0.1));
    // One generator: every splitting is exact.
    let g = GeneratorSet::random(1, 3, &mut RngStream::new(seed, 999));
    let degenerate = LabMode::ALL
        .iter()
        .map(|&m| splitting_errors(&g, &[0.1], m, Norm::Spectral).map(|e| e[0]))
        .collect::<hamsde::Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    checks.push(Check::new("opcheck.k1_exact", degenerate, "<= 1e-13", degenerate <= 1e-13));
    checks.extend(equivalence_checks(seed)?);
    for scheme in [Scheme::LieTrotter, Scheme::HmcPartial] {
        let fits = inner_step_slopes(scheme)?;
        checks.push(Check::slopes(
            &format!("{}.nl_independence", scheme.name()),
            &fits,
            "|slope(N_l=1) - slope(N_l=10)| <= 0.4",
            |v| ((v[0] - v[1]).abs(), (v[0] - v[1]).abs() <= 0.4),
        ));
    }
    Ok(checks)
}

pub fn repro_splitting(dir: &Path, seed: u64, jobs: usize) -> CliResult<Vec<Check>> {
    let checks = splitting_checks(seed, jobs)?;
    write_report(
        dir,
        "Splitting orders, BCH truncation and N_l independence",
        &checks,
        "N_l slopes use the exact stationary covariance of each scheme's linear step map.",
    )?;
    Ok(checks)
}

/// Full-batch variance-error slopes of the five order-tested schemes on the
/// default linear-Gaussian instance.
pub fn order_checks(s: ReproSettings) -> CliResult<(Vec<Check>, String, String)> {
    let targets = [
        (Scheme::Euler, 0.8),
        (Scheme::LieTrotter, 1.6),
        (Scheme::Symmetric, 1.6),
        (Scheme::Spv, 1.6),
        (Scheme::Mt3, 2.5),
    ];
    let methods = targets.iter().map(|(sc, _)| Method::Integrator(*sc)).collect();
    let cells = run_sweep(&sweep_instance(1)?, &default_plan(methods, vec![1], s))?;
    let groups = slopes(&cells);
    let checks = targets
        .iter()
        .map(|&(sc, min)| {
            let fit = slope_of(&groups, Method::Integrator(sc), 1, Functional::Variance);
            Check::slopes(&format!("order.{}", sc.name()), &[fit], &format!("slope >= {min}"), |v| {
                (v[0], v[0] >= min)
            })
        })
        .collect();
    Ok((checks, summary_csv(&cells), slopes_csv(&groups)))
}

pub fn repro_orders(dir: &Path, s: ReproSettings) -> CliResult<Vec<Check>> {
    let (checks, summary, slopes) = order_checks(s)?;
    write(dir, "summary.csv", &summary)?;
    write(dir, "slopes.csv", &slopes)?;
    write_report(
        dir,
        "Full-batch weak orders on the linear-Gaussian model",
        &checks,
        &format!("{} kept samples x {} replicates per cell, seed {}.", s.n, s.reps, s.seed),
    )?;
    Ok(checks)
}

/// Worst one-step Jacobian statistics over `states` random points.
struct JacobianStats {
    leapfrog_det_rel: f64,
    lie_trotter_det_rel: f64,
    leapfrog_symp: f64,
    euler_symp: f64,
}

fn jacobian_stats(p: &Potential, states: usize, seed: u64, stream: u64) -> CliResult<JacobianStats> {
    let d = p.dim();
    let field = p.full();
    let mass = MassMatrix::identity(d);
    let spec = |scheme, c| IntegratorSpec::new(scheme, 0.1, c, mass.clone());
    let mut rng = RngStream::new(seed, stream);
    let mut out = JacobianStats {
        leapfrog_det_rel: 0.0,
        lie_trotter_det_rel: 0.0,
        leapfrog_symp: 0.0,
        euler_symp: f64::INFINITY,
    };
    for _ in 0..states {
        let z0 = State {
            r: rng.standard_normal(d),
            theta: rng.standard_normal(d),
        };
        let det = |spec: IntegratorSpec, rng: &mut RngStream| -> CliResult<f64> {
            Ok(jacobian_fd(&FrozenStep::new(spec, &field, rng), &z0, 1e-5)?.determinant())
        };
        let lf = det(spec(Scheme::Leapfrog, 2.0)?, &mut rng)?;
        let lf_target = leapfrog_det_target(0.1, 2.0, &mass);
        out.leapfrog_det_rel = out.leapfrog_det_rel.max((lf - lf_target).abs() / lf_target);
        let lt = det(spec(Scheme::LieTrotter, 2.0)?, &mut rng)?;
        let lt_target = lie_trotter_det_target(0.1, 2.0, &mass, 1);
        out.lie_trotter_det_rel = out.lie_trotter_det_rel.max((lt - lt_target).abs() / lt_target);
        let symp = |scheme, rng: &mut RngStream| -> CliResult<f64> {
            let j = jacobian_fd(&FrozenStep::new(spec(scheme, 0.0)?, &field, rng), &z0, 1e-5)?;
            Ok(symplectic_residual(&j)?)
        };
        out.leapfrog_symp = out.leapfrog_symp.max(symp(Scheme::Leapfrog, &mut rng)?);
        out.euler_symp = out.euler_symp.min(symp(Scheme::Euler, &mut rng)?);
    }
    Ok(out)
}

/// Determinant identities at η = 0.1, C = 2 and the Euler/leapfrog
/// symplectic residual ratio at C = 0, on a quadratic and a logistic
/// potential.
pub fn geometry_checks(seed: u64) -> CliResult<Vec<Check>> {
    let logistic = Potential::logistic(synthetic_logistic(100, [1.0, -0.5], &mut RngStream::new(seed, 0)), 1.0, 1)?;
    let mut checks = Vec::new();
    for (name, p, stream) in [("quadratic", sweep_instance(1)?, 1), ("logistic", logistic, 2)] {
        let st = jacobian_stats(&p, 10, seed, stream)?;
        checks.push(Check::new(
            &format!("geom.{name}.leapfrog_det"),
            st.leapfrog_det_rel,
            "relative error <= 1e-6 over 10 states",
            st.leapfrog_det_rel <= 1e-6,
        ));
        checks.push(Check::new(
            &format!("geom.{name}.lie_trotter_det"),
            st.lie_trotter_det_rel,
            "relative error <= 1e-6 over 10 states",
            st.lie_trotter_det_rel <= 1e-6,
        ));
        let ratio = st.euler_symp / st.leapfrog_symp.max(f64::MIN_POSITIVE);
        checks.push(Check::new(
            &format!("geom.{name}.euler_vs_leapfrog_symp"),
            ratio,
            "min euler / max leapfrog residual >= 10 at C = 0",
            ratio >= 10.0,
        ));
    }
    Ok(checks)
}

pub fn repro_geometry(dir: &Path, seed: u64) -> CliResult<Vec<Check>> {
    let checks = geometry_checks(seed)?;
    write_report(dir, "One-step Jacobian identities", &checks, "")?;
    Ok(checks)
}

/// HMC with partial refreshment against Lie-Trotter on shared seeds, M = I:
/// the kept traces must be bit-identical.
pub fn equivalence_checks(seed: u64) -> CliResult<Vec<Check>> {
    let p = sweep_instance(1)?;
    [1usize, 3, 10]
        .iter()
        .map(|&nl| {
            let cfg = ChainConfig {
                n_samples: 2000,
                burn_in: 100,
                thinning: 1,
                init: Init::Prior,
                seed,
                stream: nl as u64,
            };
            let trace = |scheme| -> CliResult<Vec<State>> {
                let spec = IntegratorSpec::new(scheme, 0.01, 10.0, MassMatrix::identity(2))?.with_inner_steps(nl)?;
                let sched = BatchSchedule::new(BatchMode::Full, 1, cfg.schedule_stream())?;
                Ok(run_chain(&p, &spec, sched, &cfg)?.states)
            };
            let (a, b) = (trace(Scheme::HmcPartial)?, trace(Scheme::LieTrotter)?);
            let differing = a.iter().zip(&b).filter(|(x, y)| x != y).count() + a.len().abs_diff(b.len());
            Ok(Check::new(
                &format!("hmc.bit_identical_nl{nl}"),
                differing as f64,
                "0 differing states in 2000",
                differing == 0,
            ))
        })
        .collect()
}

/// Momentum variance of every scheme at η = 0.005, C = 5 on the unit-scale
/// instance, against M = I with a batch-means standard error.
pub fn momentum_checks(n: usize, seed: u64, jobs: usize) -> CliResult<Vec<Check>> {
    const BATCHES: usize = 50;
    if n < 10 * BATCHES {
        return Err(CliError::invalid(format!("momentum check needs n >= {}", 10 * BATCHES)));
    }
    let p = unit_instance(1)?;
    let schemes = [
        Scheme::Euler,
        Scheme::Leapfrog,
        Scheme::Spv,
        Scheme::LieTrotter,
        Scheme::Symmetric,
        Scheme::Mt3,
        Scheme::Sghmc,
        Scheme::HmcPartial,
    ];
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::invalid(e.to_string()))?;
    let per_scheme: Vec<CliResult<Vec<Check>>> = pool.install(|| {
        schemes
            .par_iter()
            .enumerate()
            .map(|(i, &scheme)| {
                let cfg = ChainConfig {
                    n_samples: n,
                    burn_in: 2000,
                    thinning: 100,
                    init: Init::Prior,
                    seed,
                    stream: i as u64,
                };
                let spec = IntegratorSpec::new(scheme, 0.005, 5.0, MassMatrix::identity(2))?;
                let sched = BatchSchedule::new(BatchMode::Full, 1, cfg.schedule_stream())?;
                let states = run_chain(&p, &spec, sched, &cfg)?.states;
                (0..p.dim())
                    .map(|c| {
                        let sq: Vec<f64> = states.iter().map(|s| s.r[c] * s.r[c]).collect();
                        let (v, se) = batch_mean_se(&sq, BATCHES);
                        let z = (v - 1.0) / se;
                        Ok(Check::new(
                            &format!("momentum.{}.r{c}", scheme.name()),
                            z,
                            "|E[r²] - 1| <= 4 batch-means standard errors",
                            z.abs() <= 4.0,
                        ))
                    })
                    .collect()
            })
            .collect()
    });
    let mut checks = Vec::new();
    for c in per_scheme {
        checks.extend(c?);
    }
    Ok(checks)
}

/// Mean and batch-means standard error of a correlated series.
fn batch_mean_se(x: &[f64], batches: usize) -> (f64, f64) {
    let len = x.len() / batches;
    let means: Vec<f64> = x
        .chunks_exact(len)
        .take(batches)
        .map(|b| b.iter().sum::<f64>() / len as f64)
        .collect();
    let m = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|b| (b - m).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (m, (var / batches as f64).sqrt())
}

pub fn repro_momentum(dir: &Path, n: usize, seed: u64, jobs: usize) -> CliResult<Vec<Check>> {
    let checks = momentum_checks(n, seed, jobs)?;
    write_report(
        dir,
        "Stationary momentum variance",
        &checks,
        "Values are z-scores of the sample E[r²] against 1 (thinning 100, 50 batches).",
    )?;
    Ok(checks)
}

/// A frozen number with its provenance and comparison band.
#[derive(Debug, Clone, PartialEq)]
pub struct GoldenRecord {
    pub key: String,
    pub value: f64,
    pub provenance: String,
    pub tolerance: f64,
}

fn rec(key: &str, value: f64, provenance: &str, tolerance: f64) -> GoldenRecord {
    GoldenRecord {
        key: key.to_string(),
        value,
        provenance: provenance.to_string(),
        tolerance,
    }
}

/// Golden values, each recomputed from its oracle.
pub fn golden_records() -> CliResult<Vec<GoldenRecord>> {
    let toy = ToyParams::reference();
    let (mean, cov) = toy_transition(&Vector2::new(0.5, 1.0), 0.4, &toy, toy.x_bar());
    let m1 = MassMatrix::identity(1);
    let m2 = MassMatrix::identity(2);
    let p = sweep_instance(1)?;
    let post = p.analytic_posterior()?;
    let mut out = vec![
        rec("toy.posterior_mean", toy.x_bar(), "conjugate posterior (x1 + x2)/v", 1e-15),
        rec("toy.posterior_var", toy.sigma_l2(), "conjugate posterior sigma_x2/v", 1e-15),
        rec("toy.transition_mean_r", mean[0], "closed-form 2x2 exponential, eta=0.4 from (0.5, 1)", 1e-12),
        rec("toy.transition_mean_theta", mean[1], "closed-form 2x2 exponential, eta=0.4 from (0.5, 1)", 1e-12),
        rec("toy.transition_cov_rr", cov[(0, 0)], "stationary cov minus pushed cov, eta=0.4", 1e-12),
        rec("toy.transition_cov_rtheta", cov[(0, 1)], "stationary cov minus pushed cov, eta=0.4", 1e-12),
        rec("toy.transition_cov_thetatheta", cov[(1, 1)], "stationary cov minus pushed cov, eta=0.4", 1e-12),
        rec("ou.noise_sd_c1_eta0.5", (1.0 - (-1.0f64).exp()).sqrt(), "sqrt(1 - exp(-2C eta)), M=1, C=1, eta=0.5", 1e-15),
        rec("mt3.w2_weight", MT3_W2_WEIGHT, "1/(2 sqrt 3): exact theta-noise variance 2C eta^3/3", 1e-15),
        rec("geom.leapfrog_det_eta0.1_c2_d2", leapfrog_det_target(0.1, 2.0, &m2), "(1 - eta C)^2", 1e-15),
        rec("geom.lie_trotter_det_eta0.1_c2", lie_trotter_det_target(0.1, 2.0, &m1, 1), "exp(-eta C)", 1e-15),
        rec("sweep.posterior_mean_0", post.mean[0], "conjugate linear-Gaussian posterior, data seed 1", 1e-12),
        rec("sweep.posterior_mean_1", post.mean[1], "conjugate linear-Gaussian posterior, data seed 1", 1e-12),
        rec("sweep.posterior_var_0", post.variance(0), "conjugate linear-Gaussian posterior, data seed 1", 1e-12),
        rec("sweep.posterior_var_1", post.variance(1), "conjugate linear-Gaussian posterior, data seed 1", 1e-12),
    ];
    for (scheme, eta) in [(Scheme::Euler, 0.01), (Scheme::LieTrotter, 0.01), (Scheme::Mt3, 0.01), (Scheme::Spv, 0.01)] {
        let spec = IntegratorSpec::new(scheme, eta, 10.0, m2.clone())?;
        out.push(rec(
            &format!("sweep.exact_var_err.{}.eta{eta}", scheme.name()),
            exact_variance_error(&p, &spec)?,
            "discrete Lyapunov sum of the scheme's affine step map, C=10",
            1e-9,
        ));
    }
    Ok(out)
}

pub fn golden_csv(records: &[GoldenRecord]) -> String {
    let mut s = String::from("key,value,tolerance,provenance\n");
    for r in records {
        let _ = writeln!(s, "{},{:e},{:e},\"{}\"", r.key, r.value, r.tolerance, r.provenance);
    }
    s
}

pub fn parse_golden(text: &str) -> CliResult<Vec<GoldenRecord>> {
    let bad = |i: usize| CliError::invalid(format!("golden file line {}: malformed", i + 1));
    text.lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let mut parts = l.splitn(4, ',');
            let key = parts.next().ok_or_else(|| bad(i))?;
            let value = parts.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad(i))?;
            let tolerance = parts.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad(i))?;
            let provenance = parts.next().ok_or_else(|| bad(i))?.trim_matches('"');
            Ok(rec(key, value, provenance, tolerance))
        })
        .collect()
}

/// Compares fresh oracle values against `file`, or rewrites it when
/// `regen` is set. Returns one check per record.
pub fn golden(file: &Path, regen: bool) -> CliResult<Vec<Check>> {
    let fresh = golden_records()?;
    if regen {
        if let Some(parent) = file.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(file, golden_csv(&fresh))?;
    }
    let text = std::fs::read_to_string(file).map_err(|e| CliError::Io(format!("{}: {e}", file.display())))?;
    let frozen = parse_golden(&text)?;
    let mut checks = Vec::new();
    for f in &fresh {
        let check = match frozen.iter().find(|g| g.key == f.key) {
            Some(g) => {
                let diff = (g.value - f.value).abs();
                Check::new(&f.key, diff, &format!("|frozen - oracle| <= {:e}", g.tolerance), diff <= g.tolerance)
            }
            None => Check::new(&f.key, f64::NAN, "present in golden file", false),
        };
        checks.push(check);
    }
    Ok(checks)
}

/// Runs one named reproduction into `dir`.
/// Individual reproductions run by `all`.
pub const TARGETS: [&str; 6] = ["gap", "toy", "orders", "splitting", "geometry", "momentum"];

pub fn run(which: &str, dir: &Path, s: ReproSettings) -> CliResult<Vec<Check>> {
    match which {
        "gap" => repro_gap(dir, s),
        "toy" => repro_toy(dir, 100_000, s.seed, s.jobs),
        "splitting" => repro_splitting(dir, s.seed, s.jobs),
        "orders" => repro_orders(dir, s),
        "geometry" => repro_geometry(dir, s.seed),
        "momentum" => repro_momentum(dir, 100_000, s.seed, s.jobs),
        "all" => {
            let mut all = Vec::new();
            for w in TARGETS {
                all.extend(run(w, &dir.join(w), s)?);
            }
            write_report(dir, "All reproductions", &all, "")?;
            Ok(all)
        }
        other => Err(CliError::invalid(format!(
            "unknown reproduction '{other}' ({}, all, golden)",
            TARGETS.join(", ")
        ))),
    }
}

pub fn default_golden_path() -> PathBuf {
    PathBuf::from("crates/cli/tests/golden/golden.csv")
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn golden_round_trip() {
        let recs = golden_records().unwrap();
        let parsed = parse_golden(&golden_csv(&recs)).unwrap();
        assert_eq!(parsed.len(), recs.len());
        for (a, b) in recs.iter().zip(&parsed) {
            assert_eq!(a.key, b.key);
            assert_eq!(a.value, b.value);
            assert_eq!(a.provenance, b.provenance);
        }
    }

    #[test]
    fn inconclusive_slopes_do_not_decide() {
        let weak = SlopeFit {
            slope: 2.0,
            r2: 0.5,
            eta_max: 0.1,
            eta_min: 0.01,
            points: 4,
        };
        let c = Check::slopes("x", &[Some(weak), Some(weak)], "gap", |v| (v[0] - v[1], true));
        assert_eq!(c.status, Status::Inconclusive);
        let c = Check::slopes("x", &[None], "gap", |_| (0.0, true));
        assert_eq!(c.status, Status::Inconclusive);
    }

    #[test]
    fn single_generator_splitting_is_exact() {
        let g = GeneratorSet::new(vec![DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0])]).unwrap();
        for m in LabMode::ALL {
            assert!(splitting_errors(&g, &[0.1], m, Norm::Spectral).unwrap()[0] < 1e-14);
        }
    }
}
