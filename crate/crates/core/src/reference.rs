//! Exact reference chains for quadratic potentials.
//!
//! On a quadratic U the SDE is linear, so its time-t transition is the
//! Gaussian z' = E(z − c) + c + Lξ with E = exp(t𝒜),
//! 𝒜 = [[−CM⁻¹, −H], [M⁻¹, 0]] in z = (r, θ), c = (0, μ) and
//! LLᵀ = S − ESEᵀ, S = diag(M, H⁻¹). Driving the reference with the same
//! normal draws as an integrator chain makes the two trajectories strongly
//! correlated, and since the reference is exact for any square root L, the
//! difference of their ergodic averages plus the known posterior value is an
//! unbiased, low-variance estimate of the integrator's ergodic average.
//!
//! L is the square root of the exact covariance closest (in Frobenius norm) to
//! the integrator's own noise map B, found by orthogonal Procrustes.

use nalgebra::{DMatrix, DVector};

use crate::batching::BatchSchedule;
use crate::chain::ChainConfig;
use crate::error::{Error, Result};
use crate::geometry::ReplayNoise;
use crate::integrators::{self, IntegratorSpec};
use crate::operator_lab::matrix_exp;
use crate::phase_space::{NoiseSource, RngStream, State};
use crate::potentials::{Batch, GaussianPosterior, Potential};

/// Passes draws through from an inner source and keeps a copy of each.
pub struct RecordingNoise<'a> {
    inner: &'a mut dyn NoiseSource,
    pub draws: Vec<DVector<f64>>,
}

impl<'a> RecordingNoise<'a> {
    pub fn new(inner: &'a mut dyn NoiseSource) -> Self {
        RecordingNoise {
            inner,
            draws: Vec::with_capacity(2),
        }
    }
}

impl NoiseSource for RecordingNoise<'_> {
    fn standard_normal(&mut self, d: usize) -> DVector<f64> {
        let w = self.inner.standard_normal(d);
        self.draws.push(w.clone());
        w
    }
}

/// Normal vectors fed to the reference per step (two d-vectors; schemes that
/// draw one get an auxiliary second vector).
pub const REFERENCE_DRAWS: usize = 2;

fn symmetric_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let vals = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// Exact discrete skeleton of the full-batch linear SDE.
#[derive(Debug, Clone)]
pub struct LinearReference {
    pub exp: DMatrix<f64>,
    pub center: DVector<f64>,
    pub factor: DMatrix<f64>,
    pub posterior: GaussianPosterior,
}

impl LinearReference {
    /// Reference for one step of `spec` on `potential`.
    pub fn new(potential: &Potential, spec: &IntegratorSpec) -> Result<Self> {
        let h = potential.constant_hessian().ok_or(Error::UnsupportedModel {
            model: potential.model_name(),
            what: "exact reference needs a quadratic potential",
        })?;
        let post = potential.analytic_posterior()?;
        let d = potential.dim();
        let m = spec.mass.diag();
        let c = spec.friction;
        let mut drift = DMatrix::zeros(2 * d, 2 * d);
        for i in 0..d {
            drift[(i, i)] = -c / m[i];
            drift[(d + i, i)] = 1.0 / m[i];
        }
        drift.view_mut((0, d), (d, d)).copy_from(&(-&h));
        let exp = matrix_exp(&(drift * spec.time_per_step()));
        let mut s = DMatrix::zeros(2 * d, 2 * d);
        for i in 0..d {
            s[(i, i)] = m[i];
        }
        s.view_mut((d, d), (d, d)).copy_from(&post.covariance);
        let cov = &s - &exp * &s * exp.transpose();
        let root = symmetric_sqrt(&cov);

        let b = noise_map(potential, spec)?;
        let svd = (root.transpose() * &b).svd(true, true);
        let q = svd.u.unwrap() * svd.v_t.unwrap();
        let factor = root * q;

        let mut center = DVector::zeros(2 * d);
        center.rows_mut(d, d).copy_from(&post.mean);
        Ok(LinearReference {
            exp,
            center,
            factor,
            posterior: post,
        })
    }

    pub fn step(&self, z: &DVector<f64>, xi: &DVector<f64>) -> DVector<f64> {
        &self.exp * (z - &self.center) + &self.center + &self.factor * xi
    }
}

/// Response of one full-batch step to unit normal draws: the 2d × 2d matrix
/// B with step(0, ξ) = step(0, 0) + Bξ on a quadratic potential.
pub fn noise_map(potential: &Potential, spec: &IntegratorSpec) -> Result<DMatrix<f64>> {
    let d = potential.dim();
    let field = potential.bind(Batch::Full, 1.0);
    let zero = State::zeros(d);
    let draws = spec.scheme.noise_draws();
    let run = |xi: &DVector<f64>| -> Result<DVector<f64>> {
        let ws = (0..draws).map(|k| xi.rows(k * d, d).into_owned()).collect();
        Ok(integrators::step(&zero, &field, spec, &mut ReplayNoise::new(ws))?.to_stacked())
    };
    let n = REFERENCE_DRAWS * d;
    let base = run(&DVector::zeros(n))?;
    let mut b = DMatrix::zeros(2 * d, n);
    for j in 0..draws * d {
        let mut e = DVector::zeros(n);
        e[j] = 1.0;
        b.set_column(j, &(run(&e)? - &base));
    }
    Ok(b)
}

/// Affine form of one full-batch step on a quadratic potential:
/// step(z, ξ) = Az + a + Bξ in the stacked ordering, ξ of length
/// `noise_draws · d`.
pub fn step_map(
    potential: &Potential,
    spec: &IntegratorSpec,
) -> Result<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> {
    if potential.constant_hessian().is_none() {
        return Err(Error::UnsupportedModel {
            model: potential.model_name(),
            what: "affine step map needs a quadratic potential",
        });
    }
    let d = potential.dim();
    let field = potential.bind(Batch::Full, 1.0);
    let draws = spec.scheme.noise_draws();
    let run = |z: &DVector<f64>, xi: &DVector<f64>| -> Result<DVector<f64>> {
        let ws = (0..draws).map(|k| xi.rows(k * d, d).into_owned()).collect();
        Ok(integrators::step(&State::from_stacked(z), &field, spec, &mut ReplayNoise::new(ws))?.to_stacked())
    };
    let (zero_z, zero_xi) = (DVector::zeros(2 * d), DVector::zeros(draws * d));
    let offset = run(&zero_z, &zero_xi)?;
    let mut a = DMatrix::zeros(2 * d, 2 * d);
    for j in 0..2 * d {
        let mut e = zero_z.clone();
        e[j] = 1.0;
        a.set_column(j, &(run(&e, &zero_xi)? - &offset));
    }
    let mut b = DMatrix::zeros(2 * d, draws * d);
    for j in 0..draws * d {
        let mut e = zero_xi.clone();
        e[j] = 1.0;
        b.set_column(j, &(run(&zero_z, &e)? - &offset));
    }
    Ok((a, offset, b))
}

/// Exact stationary mean and covariance of the full-batch chain on a
/// quadratic potential: m = Am + a and Σ = AΣAᵀ + BBᵀ, the latter summed by
/// doubling. Fails if the step map is not contracting.
pub fn stationary_moments(potential: &Potential, spec: &IntegratorSpec) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (a, offset, b) = step_map(potential, spec)?;
    let n = a.nrows();
    let unstable = || Error::config(format!("{} at eta = {} has no stationary law", spec.scheme, spec.eta));
    let mean = (DMatrix::identity(n, n) - &a).lu().solve(&offset).ok_or_else(unstable)?;
    let mut cov = &b * b.transpose();
    let mut pow = a;
    for _ in 0..64 {
        if pow.abs().max() < 1e-18 {
            if !cov.iter().all(|v| v.is_finite()) {
                return Err(unstable());
            }
            return Ok((mean, cov));
        }
        cov += &pow * &cov * pow.transpose();
        pow = &pow * &pow;
    }
    Err(unstable())
}

/// Running sums of θ, θ², r² over kept states.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub n: usize,
    pub sum_theta: DVector<f64>,
    pub sum_theta2: DVector<f64>,
    pub sum_r: DVector<f64>,
    pub sum_r2: DVector<f64>,
}

impl Moments {
    pub fn new(d: usize) -> Self {
        Moments {
            n: 0,
            sum_theta: DVector::zeros(d),
            sum_theta2: DVector::zeros(d),
            sum_r: DVector::zeros(d),
            sum_r2: DVector::zeros(d),
        }
    }

    pub fn push(&mut self, r: &DVector<f64>, theta: &DVector<f64>) {
        self.n += 1;
        self.sum_theta += theta;
        self.sum_theta2 += theta.component_mul(theta);
        self.sum_r += r;
        self.sum_r2 += r.component_mul(r);
    }

    pub fn mean_theta(&self) -> DVector<f64> {
        &self.sum_theta / self.n as f64
    }

    pub fn second_theta(&self) -> DVector<f64> {
        &self.sum_theta2 / self.n as f64
    }

    /// Population variance of θ.
    pub fn var_theta(&self) -> DVector<f64> {
        let m = self.mean_theta();
        self.second_theta() - m.component_mul(&m)
    }

    pub fn var_r(&self) -> DVector<f64> {
        let m = &self.sum_r / self.n as f64;
        &self.sum_r2 / self.n as f64 - m.component_mul(&m)
    }
}

/// Kept-sample moments of an integrator chain and of its coupled reference.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledRun {
    pub chain: Moments,
    /// Kept chain states.
    pub kept: Vec<State>,
    pub reference: Moments,
    pub posterior: GaussianPosterior,
}

impl CoupledRun {
    /// Control-variate estimate of the chain's stationary variance of θ.
    pub fn var_theta_cv(&self) -> DVector<f64> {
        self.chain.var_theta() - self.reference.var_theta() + self.posterior.variances()
    }

    /// Control-variate estimate of the chain's stationary E[θ²].
    pub fn second_theta_cv(&self) -> DVector<f64> {
        let m = &self.posterior.mean;
        self.chain.second_theta() - self.reference.second_theta()
            + self.posterior.variances()
            + m.component_mul(m)
    }

    /// Control-variate estimate of the chain's stationary mean of θ.
    pub fn mean_theta_cv(&self) -> DVector<f64> {
        self.chain.mean_theta() - self.reference.mean_theta() + &self.posterior.mean
    }
}

/// Stream of the auxiliary draws padding single-draw schemes.
pub fn aux_stream(cfg: &ChainConfig) -> RngStream {
    RngStream::new(cfg.seed, (1 << 40) + cfg.stream)
}

/// Runs an integrator chain together with its exact coupled reference.
/// Both start from the same draw of the exact stationary law; the chain's
/// own trajectory is the one `run_chain` would produce from that start.
pub fn run_coupled(
    potential: &Potential,
    spec: &IntegratorSpec,
    mut sched: BatchSchedule,
    cfg: &ChainConfig,
    reference: &LinearReference,
) -> Result<CoupledRun> {
    spec.validate()?;
    cfg.validate()?;
    let d = potential.dim();
    let post = &reference.posterior;
    let mut init_rng = cfg.init_stream();
    let chol = post
        .covariance
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NonFinite("posterior covariance".into()))?;
    let theta = &post.mean + chol.l() * init_rng.standard_normal(d);
    let r = spec.mass.diag().map(|m| m.sqrt() * init_rng.normal());
    let mut z = State { r, theta };
    let mut zr = z.to_stacked();

    let mut noise = cfg.noise_stream();
    let mut aux = aux_stream(cfg);
    let draws = spec.scheme.noise_draws();
    let single = sched.k() == 1;
    let mut chain = Moments::new(d);
    let mut refm = Moments::new(d);
    let mut kept = Vec::with_capacity(cfg.n_samples);
    let mut xi = DVector::zeros(REFERENCE_DRAWS * d);
    for n in 1..=cfg.total_steps() {
        let (batch, scale) = sched.next_batch();
        let batch = if single { Batch::Full } else { batch };
        let mut rec = RecordingNoise::new(&mut noise);
        z = integrators::step(&z, &potential.bind(batch, scale), spec, &mut rec).map_err(|e| match e {
            Error::Divergence(mut rep) => {
                rep.step = n;
                Error::Divergence(rep)
            }
            other => other,
        })?;
        for (k, w) in rec.draws.iter().enumerate() {
            xi.rows_mut(k * d, d).copy_from(w);
        }
        for k in draws..REFERENCE_DRAWS {
            xi.rows_mut(k * d, d).copy_from(&aux.standard_normal(d));
        }
        zr = reference.step(&zr, &xi);
        if n > cfg.burn_in && (n - cfg.burn_in) % cfg.thinning == 0 {
            chain.push(&z.r, &z.theta);
            kept.push(z.clone());
            refm.push(&zr.rows(0, d).into_owned(), &zr.rows(d, d).into_owned());
        }
    }
    Ok(CoupledRun {
        chain,
        kept,
        reference: refm,
        posterior: post.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::batching::BatchMode;
    use crate::chain::{run_chain, Init};
    use crate::integrators::Scheme;
    use crate::phase_space::MassMatrix;
    use crate::potentials::TrigRegression;

    fn model(k: usize) -> Potential {
        TrigRegression {
            n: 32,
            n_features: 2,
            noise_var: 4.0,
            prior_var: 1.0,
            coef_scale: 1.0,
            frequencies: None,
        }
        .build(&mut RngStream::new(1, 0), k)
        .unwrap()
    }

    #[test]
    fn factor_is_a_square_root_of_the_exact_covariance() {
        let p = model(1);
        for scheme in [Scheme::Leapfrog, Scheme::Mt3, Scheme::LieTrotter] {
            let spec = IntegratorSpec::new(scheme, 0.1, 2.0, MassMatrix::identity(2))
                .unwrap()
                .with_inner_steps(if scheme == Scheme::LieTrotter { 3 } else { 1 })
                .unwrap();
            let r = LinearReference::new(&p, &spec).unwrap();
            let d = 2;
            let h = p.constant_hessian().unwrap();
            let mut s = DMatrix::zeros(4, 4);
            s.view_mut((0, 0), (d, d)).fill_with_identity();
            s.view_mut((d, d), (d, d)).copy_from(&h.try_inverse().unwrap());
            let cov = &s - &r.exp * &s * r.exp.transpose();
            let ll = &r.factor * r.factor.transpose();
            assert!((ll - cov).abs().max() < 1e-12);
            // Stationary law is preserved by the reference kernel.
            let pushed = &r.exp * &s * r.exp.transpose() + &r.factor * r.factor.transpose();
            assert!((pushed - &s).abs().max() < 1e-12);
        }
    }

    #[test]
    fn noise_map_of_leapfrog() {
        let p = model(1);
        let (eta, c) = (0.1, 2.0);
        let spec = IntegratorSpec::new(Scheme::Leapfrog, eta, c, MassMatrix::identity(2)).unwrap();
        let b = noise_map(&p, &spec).unwrap();
        let s = (2.0 * c * eta).sqrt();
        // r' gets s·w, θ' gets (η/2)·s·w; auxiliary columns are empty.
        for i in 0..2 {
            assert!((b[(i, i)] - s).abs() < 1e-12);
            assert!((b[(2 + i, i)] - 0.5 * eta * s).abs() < 1e-12);
            assert!(b.column(2 + i).norm() < 1e-15);
        }
    }

    #[test]
    fn coupled_chain_matches_run_chain_trajectory() {
        let p = model(4);
        let spec = IntegratorSpec::new(Scheme::Symmetric, 0.05, 2.0, MassMatrix::identity(2)).unwrap();
        let cfg = ChainConfig {
            n_samples: 20,
            burn_in: 5,
            thinning: 3,
            seed: 3,
            ..Default::default()
        };
        let reference = LinearReference::new(&p, &spec).unwrap();
        let sched = || BatchSchedule::new(BatchMode::PermutationSweep, 4, cfg.schedule_stream()).unwrap();
        let run = run_coupled(&p, &spec, sched(), &cfg, &reference).unwrap();
        // Rebuild the same start and compare to a plain chain.
        let post = p.analytic_posterior().unwrap();
        let mut init_rng = cfg.init_stream();
        let theta = &post.mean + post.covariance.clone().cholesky().unwrap().l() * init_rng.standard_normal(2);
        let r = DVector::from_fn(2, |_, _| init_rng.normal());
        let plain_cfg = ChainConfig {
            init: Init::Fixed(State { r, theta }),
            ..cfg.clone()
        };
        let t = run_chain(&p, &spec, sched(), &plain_cfg).unwrap();
        let mut m = Moments::new(2);
        for s in &t.states {
            m.push(&s.r, &s.theta);
        }
        assert_eq!(m, run.chain);
        assert_eq!(run.kept, t.states);
    }

    #[test]
    fn control_variate_is_accurate_for_exact_dynamics() {
        // A small-η symmetric splitting chain: the CV estimate of the
        // variance is far tighter than the plain estimate.
        let p = model(1);
        let spec = IntegratorSpec::new(Scheme::Symmetric, 0.02, 2.0, MassMatrix::identity(2)).unwrap();
        let reference = LinearReference::new(&p, &spec).unwrap();
        let cfg = ChainConfig {
            n_samples: 5000,
            burn_in: 1000,
            thinning: 10,
            seed: 1,
            ..Default::default()
        };
        let run = run_coupled(&p, &spec, BatchSchedule::full(), &cfg, &reference).unwrap();
        let post = p.analytic_posterior().unwrap();
        let cv = run.var_theta_cv();
        let plain = run.chain.var_theta();
        for i in 0..2 {
            let v = post.variance(i);
            let cv_err = (cv[i] - v).abs() / v;
            let plain_err = (plain[i] - v).abs() / v;
            assert!(cv_err < 2e-3, "{cv_err}");
            assert!(cv_err < plain_err || plain_err < 2e-3);
        }
    }

    #[test]
    fn stationary_moments_agree_with_coupled_chains() {
        let p = model(1);
        let post = p.analytic_posterior().unwrap();
        for scheme in [Scheme::Euler, Scheme::Mt3, Scheme::LieTrotter] {
            let spec = IntegratorSpec::new(scheme, 0.1, 2.0, MassMatrix::identity(2)).unwrap();
            let (mean, cov) = stationary_moments(&p, &spec).unwrap();
            // Every scheme leaves the posterior mean fixed on a linear target.
            assert!((mean.rows(2, 2) - &post.mean).abs().max() < 1e-12);
            assert!(mean.rows(0, 2).abs().max() < 1e-12);
            let reference = LinearReference::new(&p, &spec).unwrap();
            let cfg = ChainConfig {
                n_samples: 20_000,
                burn_in: 1000,
                thinning: 5,
                seed: 4,
                ..Default::default()
            };
            let cv = run_coupled(&p, &spec, BatchSchedule::full(), &cfg, &reference)
                .unwrap()
                .var_theta_cv();
            for i in 0..2 {
                let exact = cov[(2 + i, 2 + i)];
                let tol = (0.05 * (exact - post.variance(i)).abs()).max(5e-4 * exact);
                assert!((cv[i] - exact).abs() < tol,
                    "{scheme} {i}: cv {} exact {exact}", cv[i]);
            }
        }
    }

    #[test]
    fn stationary_covariance_approaches_the_target() {
        let p = model(1);
        let post = p.analytic_posterior().unwrap();
        let moments = |scheme: Scheme, eta: f64| {
            let spec = IntegratorSpec::new(scheme, eta, 2.0, MassMatrix::identity(2)).unwrap();
            stationary_moments(&p, &spec).unwrap().1
        };
        let theta_err = |eta: f64| (moments(Scheme::Euler, eta).view((2, 2), (2, 2)) - &post.covariance).abs().max();
        let (a, b) = (theta_err(0.02), theta_err(0.01));
        assert!(a > 0.0 && (a / b - 2.0).abs() < 0.1, "{a} {b}");
        // The damped leapfrog keeps the θ-marginal exact on quadratics; the
        // bias sits in the momentum.
        let lf = moments(Scheme::Leapfrog, 0.1);
        assert!((lf.view((2, 2), (2, 2)) - &post.covariance).abs().max() < 1e-12);
        assert!((lf.view((0, 0), (2, 2)) - DMatrix::<f64>::identity(2, 2)).abs().max() > 1e-4);
        let unstable = IntegratorSpec::new(Scheme::Euler, 3.0, 2.0, MassMatrix::identity(2)).unwrap();
        assert!(stationary_moments(&p, &unstable).is_err());
    }
}
