//! One-step transition kernels ψ(z; η) for the Hamiltonian SDE
//!
//!   dθ = M⁻¹r dt,   dr = −∇U(θ) dt − C M⁻¹r dt + √(2C) dW.
//!
//! Every step takes a force field already bound to the current batch (with
//! the K rescale applied) and a noise source. The number of N(0, I) vectors
//! drawn per step is fixed per scheme, see [`Scheme::noise_draws`].

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;

use crate::error::{DivergenceReport, Error, Result};
use crate::phase_space::{MassMatrix, NoiseSource, State};
use crate::potentials::Field;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    Euler,
    Leapfrog,
    Spv,
    LieTrotter,
    Symmetric,
    Mt3,
    Sghmc,
    HmcPartial,
}

impl Scheme {
    pub const ALL: [Scheme; 8] = [
        Scheme::Euler,
        Scheme::Leapfrog,
        Scheme::Spv,
        Scheme::LieTrotter,
        Scheme::Symmetric,
        Scheme::Mt3,
        Scheme::Sghmc,
        Scheme::HmcPartial,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Euler => "euler",
            Scheme::Leapfrog => "leapfrog",
            Scheme::Spv => "spv",
            Scheme::LieTrotter => "lie-trotter",
            Scheme::Symmetric => "symmetric",
            Scheme::Mt3 => "mt3",
            Scheme::Sghmc => "sghmc",
            Scheme::HmcPartial => "hmc",
        }
    }

    /// Standard-normal d-vectors consumed by one step.
    pub fn noise_draws(self) -> usize {
        match self {
            Scheme::Symmetric | Scheme::Mt3 => 2,
            _ => 1,
        }
    }

    /// Simulated time covered by one step of size η.
    pub fn time_per_step(self, eta: f64, inner_steps: usize) -> f64 {
        match self {
            Scheme::LieTrotter | Scheme::HmcPartial => eta * inner_steps as f64,
            _ => eta,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .iter()
            .copied()
            .find(|sc| sc.name() == s)
            .or(match s {
                "lie_trotter" | "lt" => Some(Scheme::LieTrotter),
                "hmc_partial" | "hmc-partial" => Some(Scheme::HmcPartial),
                _ => None,
            })
            .ok_or_else(|| Error::config(format!("unknown scheme '{s}'")))
    }
}

/// Step size, friction, mass and scheme knobs.
///
/// Fields are public so that probes can build η = 0 or C = 0 specs directly;
/// [`IntegratorSpec::new`] and [`IntegratorSpec::validate`] enforce the
/// sampling contract (η > 0).
#[derive(Debug, Clone, PartialEq)]
pub struct IntegratorSpec {
    pub scheme: Scheme,
    pub eta: f64,
    pub friction: f64,
    pub mass: MassMatrix,
    /// N_l, Lie-Trotter and HMC only.
    pub inner_steps: usize,
    /// Ṽ, SGHMC only.
    pub v_hat: f64,
}

impl IntegratorSpec {
    pub fn new(scheme: Scheme, eta: f64, friction: f64, mass: MassMatrix) -> Result<Self> {
        let spec = IntegratorSpec {
            scheme,
            eta,
            friction,
            mass,
            inner_steps: 1,
            v_hat: 0.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_inner_steps(mut self, n: usize) -> Result<Self> {
        self.inner_steps = n;
        self.validate()?;
        Ok(self)
    }

    pub fn with_v_hat(mut self, v: f64) -> Result<Self> {
        self.v_hat = v;
        self.validate()?;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.mass.dim()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::config(format!("step size must be > 0, got {}", self.eta)));
        }
        self.validate_knobs()
    }

    /// Everything except η > 0.
    fn validate_knobs(&self) -> Result<()> {
        if !(self.friction >= 0.0 && self.friction.is_finite()) {
            return Err(Error::config(format!("friction must be >= 0, got {}", self.friction)));
        }
        if self.inner_steps < 1 {
            return Err(Error::config("inner steps N_l must be >= 1"));
        }
        if !(self.v_hat >= 0.0) {
            return Err(Error::config(format!("v_hat must be >= 0, got {}", self.v_hat)));
        }
        if self.scheme == Scheme::Sghmc && self.v_hat > self.friction {
            return Err(Error::config(format!(
                "sghmc needs v_hat <= C (noise covariance 2(C - v_hat) eta), got v_hat = {} > C = {}",
                self.v_hat, self.friction
            )));
        }
        if self.scheme == Scheme::HmcPartial && !self.mass.is_identity() {
            return Err(Error::config("hmc partial refreshment requires M = I"));
        }
        Ok(())
    }

    /// Simulated time covered by one step.
    pub fn time_per_step(&self) -> f64 {
        self.scheme.time_per_step(self.eta, self.inner_steps)
    }
}

/// Partial-refreshment coefficient α = exp(−ηN_lC).
pub fn hmc_alpha(spec: &IntegratorSpec) -> f64 {
    (-spec.eta * spec.inner_steps as f64 * spec.friction).exp()
}

fn check_dims(z: &State, field: &dyn Field, mass: &MassMatrix) -> Result<()> {
    for got in [z.r.len(), field.dim(), mass.dim()] {
        if got != z.dim() {
            return Err(Error::DimensionMismatch {
                expected: z.dim(),
                got,
            });
        }
    }
    Ok(())
}

/// Exact OU kernel with constant forcing f over time t:
/// r' = e^{−tCM⁻¹}(r − μ) + μ + √(M(1 − e^{−2tCM⁻¹})) w, μ = −(M/C) f.
/// At C = 0 this is the limit r − t f, without noise.
pub fn ou_exact_step(
    r: &DVector<f64>,
    f: Option<&DVector<f64>>,
    t: f64,
    friction: f64,
    mass: &MassMatrix,
    w: &DVector<f64>,
) -> DVector<f64> {
    DVector::from_fn(r.len(), |i, _| {
        let m = mass.diag()[i];
        if friction == 0.0 {
            return r[i] - f.map_or(0.0, |f| t * f[i]);
        }
        let x = -t * friction / m;
        let a = x.exp();
        // (1 − a)·M/C, accurate for small tC/M.
        let drive = f.map_or(0.0, |f| -x.exp_m1() * m / friction * f[i]);
        let sd = (-m * (2.0 * x).exp_m1()).sqrt();
        a * r[i] - drive + sd * w[i]
    })
}

/// One step of `spec.scheme`. Non-finite results become a divergence error.
pub fn step(
    z: &State,
    field: &dyn Field,
    spec: &IntegratorSpec,
    noise: &mut dyn NoiseSource,
) -> Result<State> {
    check_dims(z, field, &spec.mass)?;
    let out = match spec.scheme {
        Scheme::Euler => euler_step(z, field, spec, noise),
        Scheme::Leapfrog => leapfrog_step(z, field, spec, noise),
        Scheme::Spv => spv_step(z, field, spec, noise),
        Scheme::LieTrotter => lie_trotter_step(z, field, spec, noise),
        Scheme::Symmetric => symmetric_step(z, field, spec, noise),
        Scheme::Mt3 => mt3_step(z, field, spec, noise),
        Scheme::Sghmc => sghmc_step(z, field, spec, noise),
        Scheme::HmcPartial => hmc_partial_step(z, field, spec, noise),
    }?;
    if !out.is_finite() {
        return Err(Error::Divergence(Box::new(DivergenceReport {
            step: 0,
            eta: spec.eta,
            scheme: spec.scheme.name().to_string(),
            state: out,
            partial: None,
        })));
    }
    Ok(out)
}

/// Damped leapfrog with injected noise of standard deviation `amp` per
/// coordinate (before M is applied).
fn damped_leapfrog(
    z: &State,
    field: &dyn Field,
    spec: &IntegratorSpec,
    amp: f64,
    w: &DVector<f64>,
) -> Result<State> {
    let (eta, c, mass) = (spec.eta, spec.friction, &spec.mass);
    let theta_half = &z.theta + mass.inv_mul(&z.r) * (0.5 * eta);
    let g = field.gradient(&theta_half)?;
    let r = &z.r - g * eta - mass.inv_mul(&z.r) * (eta * c) + w * amp;
    let theta = theta_half + mass.inv_mul(&r) * (0.5 * eta);
    Ok(State { r, theta })
}

/// Deterministic leapfrog, the H-part integrator of the splitting schemes.
pub fn deterministic_leapfrog(
    z: &State,
    field: &dyn Field,
    eta: f64,
    mass: &MassMatrix,
) -> Result<State> {
    let theta_half = &z.theta + mass.inv_mul(&z.r) * (0.5 * eta);
    let r = &z.r - field.gradient(&theta_half)? * eta;
    let theta = theta_half + mass.inv_mul(&r) * (0.5 * eta);
    Ok(State { r, theta })
}

/// √(2(C − Ṽ)η)
fn injected_sd(c: f64, v_hat: f64, eta: f64) -> f64 {
    (2.0 * (c - v_hat) * eta).sqrt()
}

pub fn leapfrog_step(
    z: &State,
    field: &dyn Field,
    spec: &IntegratorSpec,
    noise: &mut dyn NoiseSource,
) -> Result<State> {
    let w = noise.standard_normal(z.dim());
    damped_leapfrog(z, field, spec, injected_sd(spec.friction, 0.0, spec.eta), &w)
}

pub fn sghmc_step(
    z: &State,
    field: &dyn Field,
    spec: &IntegratorSpec,
    noise: &mut dyn NoiseSource,
) -> Result<State> {
    let w = noise.standard_normal(z.dim());
    damped_leapfrog(z, field, spec, injected_sd(spec.friction, spec.v_hat, spec.eta), &w)
}

pub fn euler_step(
    z: &State,
    field: &dyn Field,
    spec: &IntegratorSpec,
    noise: &mut dyn NoiseSource,
) -> Result<State> {
    let (eta, c, mass) = (spec.eta, spec.friction, &spec.mass);
    let w = noise.standard_normal(z.dim());
    let v = mass.inv_mul(&z.r);
    let theta = &z.theta + &v * eta;
    let r = &z.r - v * (eta * c) - field.gradient(&z.theta)? * eta + w * (2.0 * c * eta).sqrt();
    Ok(State { r, theta })
}

pub fn spv_step(
    z: &State,
    field: &dyn Field,
    spec: &IntegratorSpec,
    noise: &mut dyn NoiseSource,
) -> Result<State> {
    let (eta, mass) = (spec.eta, &spec.mass);
    let w = noise.standard_normal(z.dim());
    let theta_half = &z.theta + mass.inv_mul(&z.r) * (0.5 * eta);
    let g = field.gradient(&theta_half)?;
    let r = ou_exact_step(&z.r, Some(&g), eta, spec.friction, mass, &w);
    let theta = theta_half + mass.inv_mul(&r) * (0.5 * eta);
    Ok(State { r, theta })
}

/// N_l deterministic leapfrog steps, then an exact OU refresh over N_lη.
pub fn lie_trotter_step(
    z: &State,
    field: &dyn Field,
    spec: &IntegratorSpec,
    noise: &mut dyn NoiseSource,
) -> Result<State> {
    let mut s = z.clone();
    for _ in 0..spec.inner_steps {
        s = deterministic_leapfrog(&s, field, spec.eta, &spec.mass)?;
    }
    let w = noise.standard_normal(z.dim());
    let t = spec.eta * spec.inner_steps as f64;
    s.r = ou_exact_step(&s.r, None, t, spec.friction, &spec.mass, &w);
    Ok(s)
}

/// Partial refreshment r' = αr* + √(1 − α²)w after N_l leapfrog steps.
/// With M = I this is the Lie-Trotter kernel, and it is built from the same
/// operations so the two agree bit for bit.
pub fn hmc_partial_step(
    z: &State,
    field: &dyn Field,
    spec: &IntegratorSpec,
    noise: &mut dyn NoiseSource,
) -> Result<State> {
    if !spec.mass.is_identity() {
        return Err(Error::config("hmc partial refreshment requires M = I"));
    }
    lie_trotter_step(z, field, spec, noise)
}

/// Half OU refresh, leapfrog of size η, half OU refresh.
pub fn symmetric_step(
    z: &State,
    field: &dyn Field,
    spec: &IntegratorSpec,
    noise: &mut dyn NoiseSource,
) -> Result<State> {
    let (c, mass) = (spec.friction, &spec.mass);
    let half = 0.5 * spec.eta;
    let w1 = noise.standard_normal(z.dim());
    let w2 = noise.standard_normal(z.dim());
    let s = State {
        r: ou_exact_step(&z.r, None, half, c, mass, &w1),
        theta: z.theta.clone(),
    };
    let mut s = deterministic_leapfrog(&s, field, spec.eta, mass)?;
    s.r = ou_exact_step(&s.r, None, half, c, mass, &w2);
    Ok(s)
}

/// Weight of w₂ in the η^{3/2} noise terms. With 1/(2√3) the pair
/// (w₁/2 + w₂/(2√3), w₁) has the covariance of (∫W ds/η, W(η)) for a Wiener
/// process, which third order requires.
pub const MT3_W2_WEIGHT: f64 = 0.288_675_134_594_812_9;

/// Three-stage quasi-symplectic scheme of weak order three. The stages are
/// implicit in r only through the friction term, solved elementwise.
pub fn mt3_step(
    z: &State,
    field: &dyn Field,
    spec: &IntegratorSpec,
    noise: &mut dyn NoiseSource,
) -> Result<State> {
    let (eta, c, mass) = (spec.eta, spec.friction, &spec.mass);
    let m = mass.diag();
    let d = z.dim();
    let w1 = noise.standard_normal(d);
    let w2 = noise.standard_normal(d);

    // r_s = (rhs − a ∇U(θ_s)) / (1 + a C/M)
    let solve = |rhs: &DVector<f64>, g: &DVector<f64>, a: f64| {
        DVector::from_fn(d, |i, _| (rhs[i] - a * g[i]) / (1.0 + a * c / m[i]))
    };
    let force = |g: &DVector<f64>, r: &DVector<f64>| -g - mass.inv_mul(r) * c;

    let v = mass.inv_mul(&z.r);
    let theta1 = &z.theta + &v * (7.0 / 24.0 * eta);
    let g1 = field.gradient(&theta1)?;
    let r1 = solve(&z.r, &g1, 7.0 / 24.0 * eta);
    let f1 = force(&g1, &r1);

    let theta2 = &z.theta + &v * (25.0 / 24.0 * eta) + mass.inv_mul(&f1) * (0.5 * eta * eta);
    let g2 = field.gradient(&theta2)?;
    let r2 = solve(&(&z.r + &f1 * (2.0 / 3.0 * eta)), &g2, 3.0 / 8.0 * eta);
    let f2 = force(&g2, &r2);

    let theta3 = &z.theta
        + &v * eta
        + mass.inv_mul(&f1) * (17.0 / 36.0 * eta * eta)
        + mass.inv_mul(&f2) * (eta * eta / 36.0);
    let g3 = field.gradient(&theta3)?;
    let r3 = solve(&(&z.r + (&f1 - &f2) * (2.0 / 3.0 * eta)), &g3, eta);

    let s = (2.0 * c).sqrt();
    let (e12, e32, e52) = (eta.sqrt(), eta.powf(1.5), eta.powf(2.5));
    let wm = &w1 * 0.5 + &w2 * MT3_W2_WEIGHT;
    let sw1_m = mass.inv_mul(&w1) * s;
    let sw1_m2 = mass.inv_mul(&sw1_m);
    let hv = field.hessian_vec(&theta3, &sw1_m)?;

    let theta = theta3 + mass.inv_mul(&wm) * (e32 * s) - &sw1_m2 * (c * e52 / 6.0);
    let r = r3 + &w1 * (e12 * s) - mass.inv_mul(&wm) * (c * e32 * s) - hv * (e52 / 6.0)
        + sw1_m2 * (e52 * c * c / 6.0);
    Ok(State { r, theta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase_space::{RngStream, ZeroNoise};
    use crate::potentials::Quadratic;
    use approx::assert_relative_eq;

    fn spec(scheme: Scheme, eta: f64, c: f64, d: usize) -> IntegratorSpec {
        IntegratorSpec {
            scheme,
            eta,
            friction: c,
            mass: MassMatrix::identity(d),
            inner_steps: 1,
            v_hat: 0.0,
        }
    }

    fn s1(r: f64, th: f64) -> State {
        State::from_slices(&[r], &[th]).unwrap()
    }

    #[test]
    fn validation() {
        let m = MassMatrix::identity(1);
        assert!(IntegratorSpec::new(Scheme::Leapfrog, 0.0, 1.0, m.clone()).is_err());
        assert!(IntegratorSpec::new(Scheme::Leapfrog, 0.1, -1.0, m.clone()).is_err());
        let sg = IntegratorSpec::new(Scheme::Sghmc, 0.1, 1.0, m.clone()).unwrap();
        assert!(sg.clone().with_v_hat(2.0).is_err());
        assert!(sg.with_v_hat(1.0).is_ok());
        let lt = IntegratorSpec::new(Scheme::LieTrotter, 0.1, 1.0, m).unwrap();
        assert!(lt.with_inner_steps(0).is_err());
        let m2 = MassMatrix::new(DVector::from_element(1, 2.0)).unwrap();
        assert!(IntegratorSpec::new(Scheme::HmcPartial, 0.1, 1.0, m2).is_err());
        assert_eq!("lie-trotter".parse::<Scheme>().unwrap(), Scheme::LieTrotter);
        assert!("rk4".parse::<Scheme>().is_err());
    }

    #[test]
    fn zero_step_is_identity_for_every_scheme() {
        let u = Quadratic::diagonal(DVector::from_column_slice(&[1.0, 3.0]));
        let z = State::from_slices(&[0.3, -1.2], &[2.0, 0.5]).unwrap();
        for scheme in Scheme::ALL {
            let sp = spec(scheme, 0.0, 2.0, 2);
            let mut rng = RngStream::new(1, 0);
            let out = step(&z, &u, &sp, &mut rng).unwrap();
            assert_eq!(out, z, "{scheme}");
        }
    }

    #[test]
    fn free_flight_without_force_or_friction() {
        let u = Quadratic::zero(2);
        let mass = MassMatrix::new(DVector::from_column_slice(&[1.0, 4.0])).unwrap();
        let z = State::from_slices(&[1.0, 2.0], &[0.0, 1.0]).unwrap();
        for scheme in Scheme::ALL {
            if scheme == Scheme::HmcPartial {
                continue;
            }
            let mut sp = spec(scheme, 0.1, 0.0, 2);
            sp.mass = mass.clone();
            let out = step(&z, &u, &sp, &mut RngStream::new(3, 0)).unwrap();
            assert_relative_eq!(out.r, z.r, epsilon = 1e-15);
            assert_relative_eq!(out.theta[0], 0.1, epsilon = 1e-15);
            assert_relative_eq!(out.theta[1], 1.05, epsilon = 1e-15);
        }
    }

    #[test]
    fn leapfrog_and_euler_golden_values() {
        let u = Quadratic::isotropic(1);
        let z = s1(0.0, 1.0);
        let lf = step(&z, &u, &spec(Scheme::Leapfrog, 0.1, 0.0, 1), &mut ZeroNoise).unwrap();
        assert_relative_eq!(lf.r[0], -0.1, epsilon = 1e-15);
        assert_relative_eq!(lf.theta[0], 0.995, epsilon = 1e-15);
        let eu = step(&z, &u, &spec(Scheme::Euler, 0.1, 0.0, 1), &mut ZeroNoise).unwrap();
        assert_relative_eq!(eu.r[0], -0.1, epsilon = 1e-15);
        assert_eq!(eu.theta[0], 1.0);
    }

    #[test]
    fn ou_golden_values_and_limits() {
        let m = MassMatrix::identity(1);
        let one = DVector::from_element(1, 1.0);
        let zero = DVector::zeros(1);
        let mean = ou_exact_step(&one, None, 0.5, 1.0, &m, &zero);
        assert_relative_eq!(mean[0], 0.606_530_659_712_633_4, epsilon = 1e-15);
        let sd = ou_exact_step(&zero, None, 0.5, 1.0, &m, &one);
        assert_relative_eq!(sd[0], 0.795_060_097_620_650_1, epsilon = 1e-15);
        assert_eq!(ou_exact_step(&one, None, 0.0, 1.0, &m, &one), one);
        // C = 0: deterministic r − t f.
        let f = DVector::from_element(1, 2.0);
        assert_eq!(ou_exact_step(&one, Some(&f), 0.1, 0.0, &m, &one)[0], 0.8);
        // Tiny C approaches the same limit.
        let near = ou_exact_step(&one, Some(&f), 0.1, 1e-9, &m, &zero);
        assert_relative_eq!(near[0], 0.8, epsilon = 1e-9);
    }

    #[test]
    fn ou_long_time_draws_are_stationary() {
        let m = MassMatrix::new(DVector::from_element(1, 2.5)).unwrap();
        let mut rng = RngStream::new(21, 0);
        let start = DVector::from_element(1, 7.0);
        let n = 1_000_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let w = rng.standard_normal(1);
            let x = ou_exact_step(&start, None, 1e3, 1.0, &m, &w)[0];
            s1 += x;
            s2 += x * x;
        }
        let mean = s1 / n as f64;
        let var = s2 / n as f64 - mean * mean;
        let sd_mean = (2.5 / n as f64).sqrt();
        let sd_var = 2.5 * (2.0 / n as f64).sqrt();
        assert!(mean.abs() < 4.0 * sd_mean);
        assert!((var - 2.5).abs() < 4.0 * sd_var);
    }

    #[test]
    fn ou_semigroup_in_law() {
        // Both legs are affine Gaussian maps; compose means and variances exactly.
        let m = MassMatrix::new(DVector::from_element(1, 1.7)).unwrap();
        let (c, t1, t2) = (0.8, 0.3, 0.45);
        let r0 = DVector::from_element(1, 1.3);
        let z = DVector::zeros(1);
        let o = DVector::from_element(1, 1.0);
        let a = |t: f64| ou_exact_step(&o, None, t, c, &m, &z)[0];
        let s = |t: f64| ou_exact_step(&z, None, t, c, &m, &o)[0];
        let mean2 = ou_exact_step(&ou_exact_step(&r0, None, t1, c, &m, &z), None, t2, c, &m, &z);
        assert_relative_eq!(mean2[0], ou_exact_step(&r0, None, t1 + t2, c, &m, &z)[0], epsilon = 1e-15);
        let var2 = a(t2).powi(2) * s(t1).powi(2) + s(t2).powi(2);
        assert!((var2 - s(t1 + t2).powi(2)).abs() < 1e-12);
    }

    #[test]
    fn symmetric_without_force_is_one_ou_step_in_law() {
        let u = Quadratic::zero(1);
        let (eta, c) = (0.3, 1.5);
        let sp = spec(Scheme::Symmetric, eta, c, 1);
        let z = s1(1.0, 0.0);
        let mut rng = RngStream::new(8, 0);
        let n = 1_000_000;
        let (mut s1_, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let r = step(&z, &u, &sp, &mut rng).unwrap().r[0];
            s1_ += r;
            s2 += r * r;
        }
        let mean = s1_ / n as f64;
        let var = s2 / n as f64 - mean * mean;
        let exp_mean = (-c * eta).exp();
        let exp_var = 1.0 - (-2.0 * c * eta).exp();
        assert!((mean - exp_mean).abs() < 4.0 * (exp_var / n as f64).sqrt());
        assert!((var - exp_var).abs() < 4.0 * exp_var * (2.0 / n as f64).sqrt());
    }

    #[test]
    fn lie_trotter_alpha_and_hmc_equivalence() {
        let sp = IntegratorSpec::new(Scheme::HmcPartial, 0.01, 5.0, MassMatrix::identity(3))
            .unwrap()
            .with_inner_steps(10)
            .unwrap();
        assert_relative_eq!(hmc_alpha(&sp), (-0.5f64).exp(), epsilon = 1e-15);
        let lt = IntegratorSpec {
            scheme: Scheme::LieTrotter,
            ..sp.clone()
        };
        let u = Quadratic::diagonal(DVector::from_column_slice(&[1.0, 2.0, 5.0]));
        let mut a = State::from_slices(&[0.1, 0.2, -0.3], &[1.0, -1.0, 0.5]).unwrap();
        let mut b = a.clone();
        let (mut ra, mut rb) = (RngStream::new(4, 2), RngStream::new(4, 2));
        for _ in 0..200 {
            a = step(&a, &u, &sp, &mut ra).unwrap();
            b = step(&b, &u, &lt, &mut rb).unwrap();
            assert_eq!(a, b);
        }
        // α = 1: deterministic leapfrog loop.
        let free = IntegratorSpec { friction: 0.0, ..sp.clone() };
        let z = State::from_slices(&[0.1, 0.2, -0.3], &[1.0, -1.0, 0.5]).unwrap();
        let mut det = z.clone();
        for _ in 0..10 {
            det = deterministic_leapfrog(&det, &u, 0.01, &free.mass).unwrap();
        }
        assert_eq!(step(&z, &u, &free, &mut RngStream::new(0, 0)).unwrap(), det);
        // α = 0: momentum is a fresh draw, independent of r*.
        let hot = IntegratorSpec { friction: 1e6, ..sp };
        let mut rng = RngStream::new(5, 0);
        let w = rng.clone().standard_normal(3);
        assert_eq!(step(&z, &u, &hot, &mut rng).unwrap().r, w);
    }

    #[test]
    fn lie_trotter_inner_steps_conserve_energy() {
        let u = Quadratic::isotropic(1);
        let m = MassMatrix::identity(1);
        let mut z = s1(0.0, 1.0);
        let h0 = crate::phase_space::hamiltonian(&z, &u, &m).unwrap();
        let mut drift: f64 = 0.0;
        for _ in 0..1000 {
            z = deterministic_leapfrog(&z, &u, 0.01, &m).unwrap();
            let h = crate::phase_space::hamiltonian(&z, &u, &m).unwrap();
            drift = drift.max((h - h0).abs());
        }
        assert!(drift < 1e-3, "{drift}");
    }

    #[test]
    fn sghmc_reductions_and_noise_amplitude() {
        let u = Quadratic::isotropic(2);
        let z = State::from_slices(&[0.5, -0.5], &[1.0, 2.0]).unwrap();
        let lf = spec(Scheme::Leapfrog, 0.05, 3.0, 2);
        let sg = spec(Scheme::Sghmc, 0.05, 3.0, 2);
        let a = step(&z, &u, &lf, &mut RngStream::new(9, 9)).unwrap();
        let b = step(&z, &u, &sg, &mut RngStream::new(9, 9)).unwrap();
        assert_eq!(a, b);
        // Ṽ = C: no injected noise.
        let full = IntegratorSpec { v_hat: 3.0, ..sg.clone() };
        let x = step(&z, &u, &full, &mut RngStream::new(1, 0)).unwrap();
        let y = step(&z, &u, &full, &mut RngStream::new(2, 0)).unwrap();
        assert_eq!(x, y);
        // Noise std at η = 0.01, C = 5, Ṽ = 1: response of r' to a unit draw.
        let sp = IntegratorSpec {
            eta: 0.01,
            friction: 5.0,
            v_hat: 1.0,
            ..spec(Scheme::Sghmc, 0.01, 5.0, 1)
        };
        let u0 = Quadratic::zero(1);
        struct Unit;
        impl NoiseSource for Unit {
            fn standard_normal(&mut self, d: usize) -> DVector<f64> {
                DVector::from_element(d, 1.0)
            }
        }
        let r = step(&s1(0.0, 0.0), &u0, &sp, &mut Unit).unwrap().r[0];
        assert_relative_eq!(r, 0.282_842_712_474_619, epsilon = 1e-15);
    }

    #[test]
    fn spv_small_friction_recovers_leapfrog_momentum() {
        let u = Quadratic::isotropic(1);
        let z = s1(0.3, 1.0);
        let spv = step(&z, &u, &spec(Scheme::Spv, 0.1, 1e-10, 1), &mut ZeroNoise).unwrap();
        let lf = step(&z, &u, &spec(Scheme::Leapfrog, 0.1, 0.0, 1), &mut ZeroNoise).unwrap();
        assert_relative_eq!(spv.r[0], lf.r[0], epsilon = 1e-9);
        assert_relative_eq!(spv.theta[0], lf.theta[0], epsilon = 1e-9);
    }

    #[test]
    fn mt3_stage_multiplier_and_trivial_limits() {
        let a: f64 = 1.0 / (1.0 + 7.0 / 24.0 * 0.1 * 2.0);
        assert_relative_eq!(a, 0.944_881_889_763_779_5, epsilon = 1e-15);
        // Constant force g, C = 2: stage-1 momentum is (r − a g)/(1 + a C).
        struct Const;
        impl Field for Const {
            fn dim(&self) -> usize {
                1
            }
            fn value(&self, t: &DVector<f64>) -> Result<f64> {
                Ok(t[0])
            }
            fn gradient(&self, _: &DVector<f64>) -> Result<DVector<f64>> {
                Ok(DVector::from_element(1, 1.0))
            }
            fn hessian_vec(&self, _: &DVector<f64>, _: &DVector<f64>) -> Result<DVector<f64>> {
                Ok(DVector::zeros(1))
            }
        }
        // With a constant force the exact drift-only flow is known; MT3 is
        // third order, so its deterministic part matches to O(η⁴).
        let z = s1(0.4, 0.0);
        let exact = |eta: f64| {
            let c = 2.0;
            let e = (-c * eta).exp();
            let r_inf = -1.0 / c;
            let r = r_inf + (0.4 - r_inf) * e;
            let th = r_inf * eta + (0.4 - r_inf) * (1.0 - e) / c;
            (r, th)
        };
        let errs: Vec<f64> = [0.1, 0.05]
            .iter()
            .map(|&eta| {
                let out = step(&z, &Const, &spec(Scheme::Mt3, eta, 2.0, 1), &mut ZeroNoise).unwrap();
                let (r, th) = exact(eta);
                (out.r[0] - r).abs().max((out.theta[0] - th).abs())
            })
            .collect();
        assert!(errs[0] / errs[1] > 12.0, "{errs:?}");
        let u = Quadratic::zero(1);
        let out = step(&z, &u, &spec(Scheme::Mt3, 0.1, 0.0, 1), &mut RngStream::new(2, 0)).unwrap();
        assert_relative_eq!(out.r[0], 0.4, epsilon = 1e-15);
        assert_relative_eq!(out.theta[0], 0.04, epsilon = 1e-15);
    }

    #[test]
    fn mt3_one_step_noise_covariance_matches_wiener_integrals() {
        // U ≡ 0, M = I: the exact step has θ-noise variance 2Cη³/3 to leading order.
        let (eta, c) = (0.01, 1.0);
        let u = Quadratic::zero(1);
        let sp = spec(Scheme::Mt3, eta, c, 1);
        let probe = |w1: f64, w2: f64| {
            struct Fixed(Vec<f64>);
            impl NoiseSource for Fixed {
                fn standard_normal(&mut self, d: usize) -> DVector<f64> {
                    DVector::from_element(d, self.0.remove(0))
                }
            }
            step(&s1(0.0, 0.0), &u, &sp, &mut Fixed(vec![w1, w2])).unwrap()
        };
        let a = probe(1.0, 0.0);
        let b = probe(0.0, 1.0);
        let var_theta = a.theta[0].powi(2) + b.theta[0].powi(2);
        assert_relative_eq!(var_theta, 2.0 * c * eta.powi(3) / 3.0, max_relative = 0.05);
    }

    #[test]
    fn divergence_is_reported() {
        struct Blow;
        impl Field for Blow {
            fn dim(&self) -> usize {
                1
            }
            fn value(&self, _: &DVector<f64>) -> Result<f64> {
                Ok(0.0)
            }
            fn gradient(&self, _: &DVector<f64>) -> Result<DVector<f64>> {
                Ok(DVector::from_element(1, f64::NAN))
            }
            fn hessian_vec(&self, _: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
                Ok(v.clone())
            }
        }
        let err = step(&s1(0.0, 0.0), &Blow, &spec(Scheme::Leapfrog, 0.1, 1.0, 1), &mut ZeroNoise);
        match err {
            Err(Error::Divergence(rep)) => assert_eq!(rep.scheme, "leapfrog"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn deterministic_given_stream() {
        let u = Quadratic::diagonal(DVector::from_column_slice(&[1.0, 4.0]));
        let z = State::from_slices(&[0.1, 0.2], &[1.0, -1.0]).unwrap();
        for scheme in Scheme::ALL {
            let sp = spec(scheme, 0.05, 1.0, 2);
            let a = step(&z, &u, &sp, &mut RngStream::new(11, 1)).unwrap();
            let b = step(&z, &u, &sp, &mut RngStream::new(11, 1)).unwrap();
            assert_eq!(a, b);
        }
    }
}
