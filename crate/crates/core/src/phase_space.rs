//! Phase-space points, the diagonal mass matrix, energies, and the seeded
//! random streams every stochastic step draws from.

use nalgebra::DVector;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::potentials::Field;

/// A point z = (r, θ) of phase space.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub r: DVector<f64>,
    pub theta: DVector<f64>,
}

impl State {
    pub fn new(r: DVector<f64>, theta: DVector<f64>) -> Result<Self> {
        if r.len() != theta.len() {
            return Err(Error::DimensionMismatch {
                expected: theta.len(),
                got: r.len(),
            });
        }
        if r.is_empty() {
            return Err(Error::config("state dimension must be at least 1"));
        }
        Ok(State { r, theta })
    }

    pub fn from_slices(r: &[f64], theta: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(r), DVector::from_column_slice(theta))
    }

    pub fn zeros(d: usize) -> Self {
        State {
            r: DVector::zeros(d),
            theta: DVector::zeros(d),
        }
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn is_finite(&self) -> bool {
        self.r.iter().chain(self.theta.iter()).all(|v| v.is_finite())
    }

    /// Stacked vector [r; θ], the ordering used for Jacobians.
    pub fn to_stacked(&self) -> DVector<f64> {
        let d = self.dim();
        DVector::from_fn(2 * d, |i, _| if i < d { self.r[i] } else { self.theta[i - d] })
    }

    pub fn from_stacked(z: &DVector<f64>) -> Self {
        let d = z.len() / 2;
        State {
            r: z.rows(0, d).into_owned(),
            theta: z.rows(d, d).into_owned(),
        }
    }
}

/// Diagonal, strictly positive mass matrix M.
#[derive(Debug, Clone, PartialEq)]
pub struct MassMatrix {
    diag: DVector<f64>,
}

impl MassMatrix {
    pub fn new(diag: DVector<f64>) -> Result<Self> {
        if diag.is_empty() {
            return Err(Error::config("mass matrix must have at least one entry"));
        }
        if let Some(bad) = diag.iter().find(|m| !(**m > 0.0 && m.is_finite())) {
            return Err(Error::config(format!(
                "mass matrix entries must be finite and > 0, got {bad}"
            )));
        }
        Ok(MassMatrix { diag })
    }

    pub fn identity(d: usize) -> Self {
        MassMatrix {
            diag: DVector::from_element(d, 1.0),
        }
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn diag(&self) -> &DVector<f64> {
        &self.diag
    }

    pub fn is_identity(&self) -> bool {
        self.diag.iter().all(|&m| m == 1.0)
    }

    /// M⁻¹ v
    pub fn inv_mul(&self, v: &DVector<f64>) -> DVector<f64> {
        v.component_div(&self.diag)
    }

    /// M v
    pub fn mul(&self, v: &DVector<f64>) -> DVector<f64> {
        v.component_mul(&self.diag)
    }

    /// Diagonal of exp(−t C M⁻¹).
    pub fn decay(&self, friction: f64, t: f64) -> DVector<f64> {
        self.diag.map(|m| (-t * friction / m).exp())
    }

    fn check(&self, v: &DVector<f64>) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: v.len(),
            });
        }
        Ok(())
    }
}

/// T(r) = ½ rᵀM⁻¹r.
pub fn kinetic_energy(r: &DVector<f64>, mass: &MassMatrix) -> Result<f64> {
    mass.check(r)?;
    Ok(0.5
        * r.iter()
            .zip(mass.diag.iter())
            .map(|(ri, mi)| ri * ri / mi)
            .sum::<f64>())
}

/// H(z) = U(θ) + T(r).
pub fn hamiltonian(z: &State, potential: &dyn Field, mass: &MassMatrix) -> Result<f64> {
    if potential.dim() != z.dim() {
        return Err(Error::DimensionMismatch {
            expected: potential.dim(),
            got: z.dim(),
        });
    }
    Ok(potential.value(&z.theta)? + kinetic_energy(&z.r, mass)?)
}

/// Source of standard-normal vectors consumed by the integrators.
pub trait NoiseSource {
    fn standard_normal(&mut self, d: usize) -> DVector<f64>;
}

/// A seeded, splittable random stream. Identical `(seed, stream_id)` pairs
/// reproduce identical draws.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        RngStream {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// A fresh stream on the same seed, for a sub-task such as a replicate chain.
    pub fn substream(&self, stream_id: u64) -> Self {
        RngStream::new(self.seed, stream_id)
    }

    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform on {0, …, n−1}.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
}

impl NoiseSource for RngStream {
    fn standard_normal(&mut self, d: usize) -> DVector<f64> {
        standard_normal_vector(self, d)
    }
}

/// d iid N(0, 1) draws.
pub fn standard_normal_vector(rng: &mut RngStream, d: usize) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.normal())
}

/// Noise source that always returns zeros; turns every scheme into its
/// deterministic skeleton.
#[derive(Debug, Default, Clone, Copy)]
pub struct ZeroNoise;

impl NoiseSource for ZeroNoise {
    fn standard_normal(&mut self, d: usize) -> DVector<f64> {
        DVector::zeros(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::Quadratic;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn kinetic_energy_examples() {
        let m = MassMatrix::identity(2);
        assert_eq!(kinetic_energy(&v(&[0.0, 0.0]), &m).unwrap(), 0.0);
        assert_eq!(kinetic_energy(&v(&[3.0, 4.0]), &m).unwrap(), 12.5);
        let m4 = MassMatrix::new(v(&[4.0])).unwrap();
        assert_eq!(kinetic_energy(&v(&[2.0]), &m4).unwrap(), 0.5);
    }

    #[test]
    fn kinetic_energy_rejects_dimension_mismatch() {
        let m = MassMatrix::identity(3);
        assert!(matches!(
            kinetic_energy(&v(&[1.0]), &m),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn mass_matrix_rejects_nonpositive() {
        assert!(MassMatrix::new(v(&[1.0, 0.0])).is_err());
        assert!(MassMatrix::new(v(&[-1.0])).is_err());
        assert!(MassMatrix::new(v(&[f64::NAN])).is_err());
    }

    #[test]
    fn hamiltonian_examples() {
        let u = Quadratic::isotropic(2);
        let m = MassMatrix::identity(2);
        let z = State::from_slices(&[0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert_eq!(hamiltonian(&z, &u, &m).unwrap(), 0.0);
        let z = State::from_slices(&[3.0, 4.0], &[1.0, 0.0]).unwrap();
        assert_relative_eq!(hamiltonian(&z, &u, &m).unwrap(), 13.0);
    }

    #[test]
    fn state_rejects_unequal_dims() {
        assert!(State::from_slices(&[1.0], &[1.0, 2.0]).is_err());
        assert!(State::from_slices(&[], &[]).is_err());
    }

    #[test]
    fn same_seed_same_stream_reproduces() {
        let mut a = RngStream::new(7, 3);
        let mut b = RngStream::new(7, 3);
        assert_eq!(standard_normal_vector(&mut a, 16), standard_normal_vector(&mut b, 16));
        let mut c = RngStream::new(7, 4);
        assert_ne!(standard_normal_vector(&mut a, 16), standard_normal_vector(&mut c, 16));
    }

    #[test]
    fn normal_draws_have_unit_moments() {
        let n = 1_000_000;
        let mut rng = RngStream::new(11, 0);
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let x = rng.normal();
            s1 += x;
            s2 += x * x;
        }
        let mean = s1 / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt(), "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn distinct_streams_are_uncorrelated() {
        let n = 200_000;
        let mut a = RngStream::new(5, 0);
        let mut b = RngStream::new(5, 1);
        let c: f64 = (0..n).map(|_| a.normal() * b.normal()).sum::<f64>() / n as f64;
        assert!(c.abs() < 4.0 / (n as f64).sqrt());
    }

    proptest! {
        #[test]
        fn kinetic_energy_is_quadratic(
            r in proptest::collection::vec(-10.0f64..10.0, 1..6),
            alpha in -5.0f64..5.0,
        ) {
            let m = MassMatrix::new(DVector::from_fn(r.len(), |i, _| 0.5 + i as f64)).unwrap();
            let r = DVector::from_vec(r);
            let base = kinetic_energy(&r, &m).unwrap();
            let scaled = kinetic_energy(&(&r * alpha), &m).unwrap();
            prop_assert!((scaled - alpha * alpha * base).abs() <= 1e-10 * (1.0 + scaled.abs()));
        }

        #[test]
        fn hamiltonian_invariant_under_joint_permutation(
            r in proptest::collection::vec(-3.0f64..3.0, 3),
            th in proptest::collection::vec(-3.0f64..3.0, 3),
            m in proptest::collection::vec(0.1f64..4.0, 3),
            h in proptest::collection::vec(0.1f64..4.0, 3),
        ) {
            let perm = [2usize, 0, 1];
            let pick = |xs: &Vec<f64>| DVector::from_fn(3, |i, _| xs[perm[i]]);
            let z = State::new(DVector::from_vec(r.clone()), DVector::from_vec(th.clone())).unwrap();
            let zp = State::new(pick(&r), pick(&th)).unwrap();
            let mm = MassMatrix::new(DVector::from_vec(m.clone())).unwrap();
            let mp = MassMatrix::new(pick(&m)).unwrap();
            let u = Quadratic::diagonal(DVector::from_vec(h.clone()));
            let up = Quadratic::diagonal(pick(&h));
            let a = hamiltonian(&z, &u, &mm).unwrap();
            let b = hamiltonian(&zp, &up, &mp).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }
}
