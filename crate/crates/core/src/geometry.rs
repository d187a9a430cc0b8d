//! Quasi-symplecticity checks: finite-difference Jacobians of one step with
//! frozen noise, determinant targets, and the symplectic residual.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::integrators::{self, IntegratorSpec};
use crate::operator_lab::spectral_norm;
use crate::phase_space::{MassMatrix, NoiseSource, RngStream, State};
use crate::potentials::Field;

/// Replays a fixed list of normal vectors, in order.
#[derive(Debug, Clone)]
pub struct ReplayNoise {
    draws: Vec<DVector<f64>>,
    next: usize,
}

impl ReplayNoise {
    pub fn new(draws: Vec<DVector<f64>>) -> Self {
        ReplayNoise { draws, next: 0 }
    }
}

impl NoiseSource for ReplayNoise {
    fn standard_normal(&mut self, d: usize) -> DVector<f64> {
        let w = self.draws[self.next].clone();
        assert_eq!(w.len(), d, "replayed draw has the wrong dimension");
        self.next += 1;
        w
    }
}

/// One integrator step with its noise fixed in advance: a deterministic map.
pub struct FrozenStep<'a> {
    pub spec: IntegratorSpec,
    pub field: &'a dyn Field,
    pub noise: Vec<DVector<f64>>,
}

impl<'a> FrozenStep<'a> {
    /// Freezes the draws the scheme would take from `rng`.
    pub fn new(spec: IntegratorSpec, field: &'a dyn Field, rng: &mut RngStream) -> Self {
        let d = spec.dim();
        let noise = (0..spec.scheme.noise_draws())
            .map(|_| rng.standard_normal(d))
            .collect();
        FrozenStep { spec, field, noise }
    }

    pub fn apply(&self, z: &State) -> Result<State> {
        integrators::step(z, self.field, &self.spec, &mut ReplayNoise::new(self.noise.clone()))
    }
}

/// Central-difference Jacobian in the ordering z = [r; θ].
pub fn jacobian_fd(f: &FrozenStep, z0: &State, eps: f64) -> Result<DMatrix<f64>> {
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::config(format!("probe size {eps} outside [1e-7, 1e-3]")));
    }
    let base = z0.to_stacked();
    let n = base.len();
    let mut jac = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut plus = base.clone();
        let mut minus = base.clone();
        plus[j] += eps;
        minus[j] -= eps;
        let fp = f.apply(&State::from_stacked(&plus))?.to_stacked();
        let fm = f.apply(&State::from_stacked(&minus))?.to_stacked();
        let col = (fp - fm) / (2.0 * eps);
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Jacobian probe".into()));
        }
        jac.set_column(j, &col);
    }
    Ok(jac)
}

/// Π(1 − ηC/Mᵢᵢ)
pub fn leapfrog_det_target(eta: f64, friction: f64, mass: &MassMatrix) -> f64 {
    mass.diag().iter().map(|m| 1.0 - eta * friction / m).product()
}

/// Π exp(−N_l ηC/Mᵢᵢ)
pub fn lie_trotter_det_target(eta: f64, friction: f64, mass: &MassMatrix, inner_steps: usize) -> f64 {
    let t = eta * inner_steps as f64;
    mass.diag().iter().map(|m| (-t * friction / m).exp()).product()
}

fn check_square(j: &DMatrix<f64>, d: usize) -> Result<()> {
    if !j.is_square() || j.nrows() != 2 * d {
        return Err(Error::DimensionMismatch {
            expected: 2 * d,
            got: j.nrows(),
        });
    }
    Ok(())
}

pub fn det_residual_leapfrog(j: &DMatrix<f64>, eta: f64, friction: f64, mass: &MassMatrix) -> Result<f64> {
    check_square(j, mass.dim())?;
    Ok((j.determinant() - leapfrog_det_target(eta, friction, mass)).abs())
}

pub fn det_residual_lie_trotter(
    j: &DMatrix<f64>,
    eta: f64,
    friction: f64,
    mass: &MassMatrix,
    inner_steps: usize,
) -> Result<f64> {
    check_square(j, mass.dim())?;
    Ok((j.determinant() - lie_trotter_det_target(eta, friction, mass, inner_steps)).abs())
}

/// 𝕁 = [[0, −I], [I, 0]]
pub fn symplectic_form(d: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2 * d, 2 * d);
    for i in 0..d {
        j[(i, d + i)] = -1.0;
        j[(d + i, i)] = 1.0;
    }
    j
}

/// ‖Ωᵀ𝕁Ω − 𝕁‖ in the spectral norm.
pub fn symplectic_residual(omega: &DMatrix<f64>) -> Result<f64> {
    let n = omega.nrows();
    if !omega.is_square() || n % 2 != 0 {
        return Err(Error::config("symplectic residual needs an even square matrix"));
    }
    let j = symplectic_form(n / 2);
    Ok(spectral_norm(&(omega.transpose() * &j * omega - j)))
}
