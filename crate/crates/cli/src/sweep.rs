//! Step-size sweeps: replicate chains per (method, η, K) cell, moment and
//! Kolmogorov errors against the analytic posterior, and log-log slope fits.

use std::fmt::Write as _;

use hamsde::analytic_toy::{run_exact_chain, ToyMode, ToyParams};
use hamsde::batching::{BatchMode, BatchSchedule};
use hamsde::chain::{ChainConfig, Init};
use hamsde::integrators::IntegratorSpec;
use hamsde::metrics::{ks_vs_gaussian, mean_var, self_distance, EmpiricalSample};
use hamsde::operator_lab::error_order_slope;
use hamsde::phase_space::{MassMatrix, RngStream, State};
use hamsde::potentials::{GaussianPosterior, Potential};
use hamsde::reference::{run_coupled, LinearReference};
use rayon::prelude::*;

use crate::error::{CliError, CliResult};
use crate::models::Method;

/// Everything a sweep needs besides the model.
#[derive(Debug, Clone)]
pub struct SweepPlan {
    pub methods: Vec<Method>,
    pub etas: Vec<f64>,
    pub ks: Vec<usize>,
    /// Batch mode for cells with K > 1.
    pub mode: BatchMode,
    pub friction: f64,
    pub mass: MassMatrix,
    pub inner_steps: usize,
    pub v_hat: f64,
    /// Kept samples per replicate chain.
    pub n: usize,
    pub reps: usize,
    /// `None`: max(2000, ⌈10/τ⌉) steps, τ the time per step.
    pub burn_in: Option<u64>,
    /// `None`: max(1, round(0.2/τ)) steps.
    pub thinning: Option<u64>,
    pub seed: u64,
    pub jobs: usize,
}

impl SweepPlan {
    fn chain_config(&self, time_per_step: f64, rep: usize) -> ChainConfig {
        ChainConfig {
            n_samples: self.n,
            burn_in: self
                .burn_in
                .unwrap_or_else(|| 2000u64.max((10.0 / time_per_step).ceil() as u64)),
            thinning: self
                .thinning
                .unwrap_or_else(|| ((0.2 / time_per_step).round() as u64).max(1)),
            init: Init::Prior,
            seed: self.seed,
            stream: rep as u64,
        }
    }

    fn spec(&self, method: Method, eta: f64) -> CliResult<Option<IntegratorSpec>> {
        match method {
            Method::Exact => {
                if !(eta > 0.0) {
                    return Err(CliError::invalid(format!("step size must be > 0, got {eta}")));
                }
                Ok(None)
            }
            Method::Integrator(s) => Ok(Some(
                IntegratorSpec::new(s, eta, self.friction, self.mass.clone())?
                    .with_inner_steps(self.inner_steps)?
                    .with_v_hat(self.v_hat)?,
            )),
        }
    }

    fn mode_for(&self, k: usize) -> BatchMode {
        if k == 1 {
            BatchMode::Full
        } else {
            self.mode
        }
    }
}

/// One (method, η, K) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub method: Method,
    pub eta: f64,
    pub k: usize,
    pub mode: BatchMode,
    pub n: usize,
    /// Replicate mean of the largest per-coordinate one-sample KS distance.
    pub ks: f64,
    pub ks_q05_self: f64,
    pub ks_q95_self: f64,
    /// Coordinate mean of |replicate-averaged sample mean − posterior mean|.
    pub mean_err: f64,
    /// Same for the sample variance.
    pub var_err: f64,
    /// Coordinate mean of |relative variance error|, control-variate
    /// estimate (quadratic models with an integrator only).
    pub var_rel_cv: Option<f64>,
    /// Coordinate mean of |E[θ²] error| / posterior variance, control-variate
    /// estimate.
    pub second_rel_cv: Option<f64>,
}

struct RepResult {
    ks: f64,
    mean: Vec<f64>,
    var: Vec<f64>,
    var_cv: Option<Vec<f64>>,
    second_cv: Option<Vec<f64>>,
}

fn ks_of(states: &[State], post: &GaussianPosterior) -> CliResult<f64> {
    let d = post.dim();
    let mut worst: f64 = 0.0;
    for i in 0..d {
        let s = EmpiricalSample::new(states.iter().map(|z| z.theta[i]).collect())?;
        worst = worst.max(ks_vs_gaussian(&s, post.mean[i], post.variance(i))?);
    }
    Ok(worst)
}

fn plain_moments(states: &[State], d: usize) -> CliResult<(Vec<f64>, Vec<f64>)> {
    let mut means = Vec::with_capacity(d);
    let mut vars = Vec::with_capacity(d);
    for i in 0..d {
        let x: Vec<f64> = states.iter().map(|z| z.theta[i]).collect();
        let (m, v) = mean_var(&x)?;
        means.push(m);
        vars.push(v);
    }
    Ok((means, vars))
}

fn run_rep(
    potential: &Potential,
    plan: &SweepPlan,
    method: Method,
    eta: f64,
    k: usize,
    rep: usize,
    reference: Option<&LinearReference>,
) -> CliResult<RepResult> {
    let post = potential.analytic_posterior()?;
    let d = potential.dim();
    let mode = plan.mode_for(k);
    match plan.spec(method, eta)? {
        None => {
            let data = potential
                .toy_data()
                .ok_or_else(|| CliError::invalid("the exact kernel exists only for the toy model"))?;
            let toy_mode = match mode {
                BatchMode::Full => ToyMode::Full,
                BatchMode::IidUniform if k == 2 => ToyMode::MiniBatch,
                _ => {
                    return Err(CliError::invalid(
                        "the exact toy kernel supports K = 1, or K = 2 with iid batches",
                    ))
                }
            };
            let params = ToyParams::new(data.clone(), plan.friction)?;
            let cfg = plan.chain_config(eta, rep);
            let trace = run_exact_chain(&params, eta, toy_mode, &cfg)?;
            let (mean, var) = plain_moments(&trace.states, d)?;
            Ok(RepResult {
                ks: ks_of(&trace.states, &post)?,
                mean,
                var,
                var_cv: None,
                second_cv: None,
            })
        }
        Some(spec) => {
            let cfg = plan.chain_config(spec.time_per_step(), rep);
            let sched = BatchSchedule::new(mode, k, cfg.schedule_stream())?;
            let reference = reference.ok_or_else(|| CliError::invalid("missing reference"))?;
            let run = run_coupled(potential, &spec, sched, &cfg, reference)?;
            let (mean, var) = plain_moments(&run.kept, d)?;
            let var_cv = run.var_theta_cv();
            // Full-batch chains on quadratic targets have the exact
            // stationary mean, so their E[θ²] error equals the variance
            // error; the variance estimator is much less noisy.
            let second_cv = if k == 1 {
                var_cv.clone() + post.mean.component_mul(&post.mean)
            } else {
                run.second_theta_cv()
            };
            Ok(RepResult {
                ks: ks_of(&run.kept, &post)?,
                mean,
                var,
                var_cv: Some(var_cv.iter().copied().collect()),
                second_cv: Some(second_cv.iter().copied().collect()),
            })
        }
    }
}

fn average(rows: impl Iterator<Item = Vec<f64>>) -> Vec<f64> {
    let mut acc: Vec<f64> = Vec::new();
    let mut n = 0.0;
    for r in rows {
        if acc.is_empty() {
            acc = vec![0.0; r.len()];
        }
        for (a, v) in acc.iter_mut().zip(&r) {
            *a += v;
        }
        n += 1.0;
    }
    acc.iter().map(|a| a / n).collect()
}

fn coord_mean(x: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = x.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

/// Self-distance band of KS between two n-point samples of one law.
/// KS is distribution-free, so a standard-normal oracle serves every cell.
pub fn self_band(n: usize, seed: u64) -> CliResult<(f64, f64)> {
    let mut rng = RngStream::new(seed, 1 << 41);
    let size = (10 * n).clamp(2 * n, 1_000_000.max(2 * n));
    let oracle = EmpiricalSample::new((0..size).map(|_| rng.normal()).collect())?;
    let (q05, _, q95) = self_distance(&oracle, n, 50, &mut rng)?;
    Ok((q05, q95))
}

/// Runs every cell of `plan` on `base` (repartitioned per K).
pub fn run_sweep(base: &Potential, plan: &SweepPlan) -> CliResult<Vec<CellResult>> {
    let post = base.analytic_posterior().map_err(|_| {
        CliError::invalid(format!(
            "sweep needs an analytic posterior; model {} has none",
            base.model_name()
        ))
    })?;
    if plan.reps == 0 || plan.n == 0 {
        return Err(CliError::invalid("reps and n must be >= 1"));
    }
    let mut models = Vec::new();
    for &k in &plan.ks {
        models.push(base.repartition(k)?);
    }
    // Validate every cell and build the references before any compute.
    let mut cells = Vec::new();
    for (ki, &k) in plan.ks.iter().enumerate() {
        for &method in &plan.methods {
            for &eta in &plan.etas {
                let reference = match plan.spec(method, eta)? {
                    Some(spec) => Some(LinearReference::new(&models[ki], &spec)?),
                    None => None,
                };
                cells.push((ki, k, method, eta, reference));
            }
        }
    }
    let (ks_q05_self, ks_q95_self) = self_band(plan.n, plan.seed)?;
    let tasks: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..plan.reps).map(move |r| (c, r)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.jobs.max(1))
        .build()
        .map_err(|e| CliError::invalid(e.to_string()))?;
    let reps: Vec<CliResult<RepResult>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(c, r)| {
                let (ki, k, method, eta, reference) = &cells[c];
                run_rep(&models[*ki], plan, *method, *eta, *k, r, reference.as_ref())
            })
            .collect()
    });
    let mut reps = reps.into_iter();
    let mut out = Vec::with_capacity(cells.len());
    for (_, k, method, eta, _) in &cells {
        let rs: Vec<RepResult> = (0..plan.reps)
            .map(|_| reps.next().expect("one result per task"))
            .collect::<CliResult<_>>()?;
        let mean = average(rs.iter().map(|r| r.mean.clone()));
        let var = average(rs.iter().map(|r| r.var.clone()));
        let d = mean.len();
        let var_rel_cv = rs[0].var_cv.as_ref().map(|_| {
            let v = average(rs.iter().map(|r| r.var_cv.clone().unwrap()));
            coord_mean((0..d).map(|i| ((v[i] - post.variance(i)) / post.variance(i)).abs()))
        });
        let second_rel_cv = rs[0].second_cv.as_ref().map(|_| {
            let s = average(rs.iter().map(|r| r.second_cv.clone().unwrap()));
            coord_mean((0..d).map(|i| {
                let target = post.variance(i) + post.mean[i].powi(2);
                ((s[i] - target) / post.variance(i)).abs()
            }))
        });
        out.push(CellResult {
            method: *method,
            eta: *eta,
            k: *k,
            mode: plan.mode_for(*k),
            n: plan.n,
            ks: coord_mean(rs.iter().map(|r| r.ks)),
            ks_q05_self,
            ks_q95_self,
            mean_err: coord_mean((0..d).map(|i| (mean[i] - post.mean[i]).abs())),
            var_err: coord_mean((0..d).map(|i| (var[i] - post.variance(i)).abs())),
            var_rel_cv,
            second_rel_cv,
        });
    }
    Ok(out)
}

/// A log-log fit over the asymptotic part of a grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub r2: f64,
    pub eta_max: f64,
    pub eta_min: f64,
    pub points: usize,
}

impl SlopeFit {
    /// Fits below r² = 0.9 are not trusted for pass/fail decisions.
    pub fn conclusive(&self) -> bool {
        self.r2 >= 0.9
    }
}

/// Fits on the whole grid, then drops the largest η while r² < 0.95 and more
/// than three points remain. Returns the first fit with r² ≥ 0.95, otherwise
/// the whole-grid fit. `None` if an error is zero or non-finite.
pub fn fit_window(etas: &[f64], errors: &[f64]) -> Option<SlopeFit> {
    let mut idx: Vec<usize> = (0..etas.len()).collect();
    idx.sort_by(|&a, &b| etas[b].total_cmp(&etas[a]));
    let fit = |ids: &[usize]| -> Option<SlopeFit> {
        let e: Vec<f64> = ids.iter().map(|&i| etas[i]).collect();
        let y: Vec<f64> = ids.iter().map(|&i| errors[i]).collect();
        let (slope, r2) = error_order_slope(&e, &y).ok()?;
        Some(SlopeFit {
            slope,
            r2,
            eta_max: e[0],
            eta_min: e[e.len() - 1],
            points: e.len(),
        })
    };
    let whole = fit(&idx)?;
    let mut start = 0;
    let mut current = whole;
    while current.r2 < 0.95 && idx.len() - start > 3 {
        start += 1;
        current = fit(&idx[start..])?;
    }
    Some(if current.r2 >= 0.95 { current } else { whole })
}

/// Which error a slope is fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Functional {
    Variance,
    SecondMoment,
}

impl Functional {
    pub fn name(self) -> &'static str {
        match self {
            Functional::Variance => "var",
            Functional::SecondMoment => "theta2",
        }
    }

    fn of(self, c: &CellResult) -> Option<f64> {
        match self {
            Functional::Variance => c.var_rel_cv,
            Functional::SecondMoment => c.second_rel_cv,
        }
    }
}

/// Slope of one (method, K) group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSlope {
    pub method: Method,
    pub k: usize,
    pub mode: BatchMode,
    pub functional: Functional,
    pub fit: Option<SlopeFit>,
}

pub fn slopes(cells: &[CellResult]) -> Vec<GroupSlope> {
    let mut groups: Vec<(Method, usize, BatchMode)> = Vec::new();
    for c in cells {
        if !groups.contains(&(c.method, c.k, c.mode)) {
            groups.push((c.method, c.k, c.mode));
        }
    }
    let mut out = Vec::new();
    for (method, k, mode) in groups {
        let members: Vec<&CellResult> = cells
            .iter()
            .filter(|c| c.method == method && c.k == k && c.mode == mode)
            .collect();
        for functional in [Functional::Variance, Functional::SecondMoment] {
            let vals: Option<Vec<f64>> = members.iter().map(|c| functional.of(c)).collect();
            let Some(vals) = vals else { continue };
            let etas: Vec<f64> = members.iter().map(|c| c.eta).collect();
            out.push(GroupSlope {
                method,
                k,
                mode,
                functional,
                fit: if etas.len() >= 3 { fit_window(&etas, &vals) } else { None },
            });
        }
    }
    out
}

pub fn slope_of(groups: &[GroupSlope], method: Method, k: usize, functional: Functional) -> Option<SlopeFit> {
    groups
        .iter()
        .find(|g| g.method == method && g.k == k && g.functional == functional)
        .and_then(|g| g.fit)
}

fn opt(x: Option<f64>) -> String {
    x.map_or(String::new(), |v| v.to_string())
}

pub const SUMMARY_HEADER: &str =
    "scheme,eta,K,mode,n,ks,ks_q05_self,ks_q95_self,mean_err,var_err,var_rel_cv,theta2_rel_cv";

pub fn summary_csv(cells: &[CellResult]) -> String {
    let mut s = format!("{SUMMARY_HEADER}\n");
    for c in cells {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            c.method.name(),
            c.eta,
            c.k,
            c.mode.name(),
            c.n,
            c.ks,
            c.ks_q05_self,
            c.ks_q95_self,
            c.mean_err,
            c.var_err,
            opt(c.var_rel_cv),
            opt(c.second_rel_cv)
        );
    }
    s
}

pub fn slopes_csv(groups: &[GroupSlope]) -> String {
    let mut s = String::from("scheme,K,mode,functional,slope,r2,eta_max,eta_min,points,status\n");
    for g in groups {
        let (fit, status) = match g.fit {
            Some(f) if f.conclusive() => (Some(f), "ok"),
            Some(f) => (Some(f), "inconclusive"),
            None => (None, "inconclusive"),
        };
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            g.method.name(),
            g.k,
            g.mode.name(),
            g.functional.name(),
            opt(fit.map(|f| f.slope)),
            opt(fit.map(|f| f.r2)),
            opt(fit.map(|f| f.eta_max)),
            opt(fit.map(|f| f.eta_min)),
            fit.map_or(String::new(), |f| f.points.to_string()),
            status
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_drops_the_pre_asymptotic_point() {
        let etas = [0.04, 0.02, 0.01, 0.005];
        // Exact η³ below 0.02, saturated at 0.04.
        let errs = [1.2e-5, 8e-6, 1e-6, 1.25e-7];
        let f = fit_window(&etas, &errs).unwrap();
        assert_eq!(f.points, 3);
        assert!((f.slope - 3.0).abs() < 1e-12);
        assert_eq!((f.eta_max, f.eta_min), (0.02, 0.005));
        let clean = fit_window(&etas, &[8e-3, 2e-3, 5e-4, 1.25e-4]).unwrap();
        assert_eq!(clean.points, 4);
        assert!((clean.slope - 2.0).abs() < 1e-12);
        assert!(fit_window(&etas, &[1.0, 0.0, 1.0, 1.0]).is_none());
    }
}
