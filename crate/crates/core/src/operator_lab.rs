//! Operator-splitting error orders on small dense matrices: generators become matrices,
//! semigroups become exact matrix exponentials, and error orders become
//! log-log slopes.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::phase_space::RngStream;

/// Largest K for which all K! orderings are enumerated.
pub const MAX_ENUMERATED_K: usize = 6;

/// exp(A) by scaling and squaring with a 24-term Taylor polynomial.
pub fn matrix_exp(a: &DMatrix<f64>) -> DMatrix<f64> {
    assert!(a.is_square(), "matrix_exp needs a square matrix");
    let n = a.nrows();
    let norm = a.iter().map(|x| x.abs()).fold(0.0, f64::max) * n as f64;
    // Scale so that the ∞-norm bound is at most ½.
    let s = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a / 2f64.powi(s);
    let mut term = DMatrix::<f64>::identity(n, n);
    let mut sum = term.clone();
    for k in 1..=24 {
        term = &term * &scaled / k as f64;
        sum += &term;
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    sum
}

/// Largest singular value, by 50 power iterations on MᵀM.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    let n = m.ncols();
    if n == 0 {
        return 0.0;
    }
    let mtm = m.transpose() * m;
    // Fixed, generic start vector keeps the result deterministic.
    let mut v = DVector::from_fn(n, |i, _| 1.0 + 0.37 * i as f64);
    v /= v.norm();
    for _ in 0..50 {
        let w = &mtm * &v;
        let nw = w.norm();
        if nw == 0.0 {
            return 0.0;
        }
        v = w / nw;
    }
    (&mtm * &v).dot(&v).max(0.0).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Norm {
    Spectral,
    Frobenius,
}

impl Norm {
    pub fn of(self, m: &DMatrix<f64>) -> f64 {
        match self {
            Norm::Spectral => spectral_norm(m),
            Norm::Frobenius => m.norm(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Norm::Spectral => "spectral",
            Norm::Frobenius => "frobenius",
        }
    }
}

/// K generators Lᵢ of a common dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSet {
    mats: Vec<DMatrix<f64>>,
}

impl GeneratorSet {
    pub fn new(mats: Vec<DMatrix<f64>>) -> Result<Self> {
        let first = mats
            .first()
            .ok_or_else(|| Error::config("a generator set needs at least one matrix"))?;
        let n = first.nrows();
        for m in &mats {
            if !m.is_square() || m.nrows() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: m.nrows().max(m.ncols()),
                });
            }
            if m.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("generator entry".into()));
            }
        }
        Ok(GeneratorSet { mats })
    }

    /// K matrices of size n×n with iid U(−1, 1) entries.
    pub fn random(k: usize, n: usize, rng: &mut RngStream) -> Self {
        let mats = (0..k)
            .map(|_| DMatrix::from_fn(n, n, |_, _| 2.0 * rng.uniform() - 1.0))
            .collect();
        GeneratorSet { mats }
    }

    pub fn k(&self) -> usize {
        self.mats.len()
    }

    pub fn dim(&self) -> usize {
        self.mats[0].nrows()
    }

    pub fn mats(&self) -> &[DMatrix<f64>] {
        &self.mats
    }

    pub fn sum(&self) -> DMatrix<f64> {
        self.mats
            .iter()
            .fold(DMatrix::zeros(self.dim(), self.dim()), |acc, m| acc + m)
    }

    /// exp(ηK·L): the flow the splitting products approximate.
    pub fn exact(&self, eta: f64) -> DMatrix<f64> {
        matrix_exp(&(self.sum() * (eta * self.k() as f64)))
    }

    /// exp(ηK L_{order[last]}) ⋯ exp(ηK L_{order[0]}): `order[0]` acts first.
    pub fn ordered_product(&self, order: &[usize], eta: f64) -> DMatrix<f64> {
        let scale = eta * self.k() as f64;
        order.iter().fold(DMatrix::identity(self.dim(), self.dim()), |acc, &i| {
            matrix_exp(&(&self.mats[i] * scale)) * acc
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ordering {
    /// L₁ acts first.
    Forward,
    /// L_K acts first.
    Backward,
    /// Mean of the two.
    Averaged,
}

impl Ordering {
    pub fn name(self) -> &'static str {
        match self {
            Ordering::Forward => "forward",
            Ordering::Backward => "backward",
            Ordering::Averaged => "averaged",
        }
    }
}

pub fn splitting_product(g: &GeneratorSet, eta: f64, order: Ordering) -> DMatrix<f64> {
    let fwd: Vec<usize> = (0..g.k()).collect();
    let bwd: Vec<usize> = (0..g.k()).rev().collect();
    match order {
        Ordering::Forward => g.ordered_product(&fwd, eta),
        Ordering::Backward => g.ordered_product(&bwd, eta),
        Ordering::Averaged => (g.ordered_product(&fwd, eta) + g.ordered_product(&bwd, eta)) * 0.5,
    }
}

/// Mean of the ordered product over all K! orderings.
pub fn randomized_expectation(g: &GeneratorSet, eta: f64) -> Result<DMatrix<f64>> {
    let k = g.k();
    if k > MAX_ENUMERATED_K {
        return Err(Error::SizeLimit(format!(
            "K = {k} exceeds the enumeration limit of {MAX_ENUMERATED_K}"
        )));
    }
    let n = g.dim();
    let mut acc = DMatrix::zeros(n, n);
    let mut count = 0usize;
    for perm in (0..k).permutations(k) {
        acc += g.ordered_product(&perm, eta);
        count += 1;
    }
    Ok(acc / count as f64)
}

fn comm(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a * b - b * a
}

/// Baker–Campbell–Hausdorff series log(eᴬeᴮ) through commutators of the
/// given degree (2 to 5).
pub fn bch_truncated(a: &DMatrix<f64>, b: &DMatrix<f64>, order: usize) -> Result<DMatrix<f64>> {
    if !(2..=5).contains(&order) {
        return Err(Error::config(format!("BCH order must be in 2..=5, got {order}")));
    }
    if !a.is_square() || a.shape() != b.shape() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            got: b.nrows(),
        });
    }
    let ab = comm(a, b);
    let mut z = a + b + &ab * 0.5;
    if order >= 3 {
        let a_ab = comm(a, &ab);
        let b_ba = comm(b, &(-&ab));
        z += (a_ab + b_ba) / 12.0;
    }
    if order >= 4 {
        z -= comm(b, &comm(a, &ab)) / 24.0;
    }
    if order >= 5 {
        let ba = -&ab;
        let aaaab = comm(a, &comm(a, &comm(a, &ab)));
        let bbbba = comm(b, &comm(b, &comm(b, &ba)));
        let abbba = comm(a, &comm(b, &comm(b, &ba)));
        let baaab = comm(b, &comm(a, &comm(a, &ab)));
        let babab = comm(b, &comm(a, &comm(b, &ab)));
        let ababa = comm(a, &comm(b, &comm(a, &ba)));
        z += (aaaab + bbbba) * (-1.0 / 720.0)
            + (abbba + baaab) * (1.0 / 360.0)
            + (babab + ababa) * (1.0 / 120.0);
    }
    Ok(z)
}

/// Least-squares fit of log(error) on log(η): returns (slope, r²).
pub fn error_order_slope(etas: &[f64], errors: &[f64]) -> Result<(f64, f64)> {
    if etas.len() != errors.len() {
        return Err(Error::DimensionMismatch {
            expected: etas.len(),
            got: errors.len(),
        });
    }
    if etas.len() < 3 {
        return Err(Error::config("slope fit needs at least 3 points"));
    }
    if etas
        .iter()
        .chain(errors)
        .any(|v| !(*v > 0.0 && v.is_finite()))
    {
        return Err(Error::config("slope fit needs positive, finite values"));
    }
    let x: Vec<f64> = etas.iter().map(|e| e.ln()).collect();
    let y: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx <= 1e-300 {
        return Err(Error::config("slope fit needs distinct step sizes"));
    }
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok((slope, r2))
}

/// η, η/2, η/4, …
pub fn geometric_grid(start: f64, points: usize) -> Vec<f64> {
    (0..points).map(|i| start / 2f64.powi(i as i32)).collect()
}

/// Which approximation a lab trial measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabMode {
    Forward,
    Averaged,
    Randomized,
}

impl LabMode {
    pub const ALL: [LabMode; 3] = [LabMode::Forward, LabMode::Averaged, LabMode::Randomized];

    pub fn name(self) -> &'static str {
        match self {
            LabMode::Forward => "forward",
            LabMode::Averaged => "averaged",
            LabMode::Randomized => "randomized",
        }
    }

    /// Expected error order.
    pub fn expected_slope(self) -> f64 {
        match self {
            LabMode::Forward => 2.0,
            _ => 3.0,
        }
    }
}

/// ‖approximation(η) − exp(ηKL)‖ for each η.
pub fn splitting_errors(g: &GeneratorSet, etas: &[f64], mode: LabMode, norm: Norm) -> Result<Vec<f64>> {
    etas.iter()
        .map(|&eta| {
            let approx = match mode {
                LabMode::Forward => splitting_product(g, eta, Ordering::Forward),
                LabMode::Averaged => splitting_product(g, eta, Ordering::Averaged),
                LabMode::Randomized => randomized_expectation(g, eta)?,
            };
            Ok(norm.of(&(approx - g.exact(eta))))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn m2(a: f64, b: f64, c: f64, d: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[a, b, c, d])
    }

    fn pair() -> GeneratorSet {
        GeneratorSet::new(vec![m2(0.0, 1.0, -1.0, 0.0), m2(0.0, 0.0, 1.0, 0.0)]).unwrap()
    }

    #[test]
    fn matrix_exp_examples() {
        assert_eq!(matrix_exp(&DMatrix::zeros(3, 3)), DMatrix::identity(3, 3));
        let d = matrix_exp(&m2(1.5, 0.0, 0.0, -2.0));
        assert_relative_eq!(d[(0, 0)], 1.5f64.exp(), max_relative = 1e-12);
        assert_relative_eq!(d[(1, 1)], (-2f64).exp(), max_relative = 1e-12);
        let r = matrix_exp(&(m2(0.0, -1.0, 1.0, 0.0) * std::f64::consts::FRAC_PI_2));
        assert!((r - m2(0.0, -1.0, 1.0, 0.0)).abs().max() < 1e-12);
        // Large norm: exp(A) exp(−A) = I.
        let a = DMatrix::from_fn(4, 4, |i, j| ((i * 4 + j) as f64).sin() * 3.0);
        let prod = matrix_exp(&a) * matrix_exp(&(-&a));
        assert!((prod - DMatrix::identity(4, 4)).abs().max() < 1e-9);
    }

    #[test]
    fn spectral_norm_examples() {
        assert_relative_eq!(spectral_norm(&m2(3.0, 0.0, 0.0, -4.0)), 4.0, epsilon = 1e-12);
        let a = m2(1.0, 2.0, 3.0, 4.0);
        // σ_max² is the largest eigenvalue of AᵀA.
        let ev = (a.transpose() * &a).symmetric_eigen().eigenvalues.max();
        assert_relative_eq!(spectral_norm(&a), ev.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn single_generator_is_exact() {
        let g = GeneratorSet::new(vec![m2(0.1, 0.4, -0.3, 0.2)]).unwrap();
        for o in [Ordering::Forward, Ordering::Backward, Ordering::Averaged] {
            assert_eq!(splitting_product(&g, 0.1, o), matrix_exp(&(g.mats()[0].clone() * 0.1)));
        }
        assert_eq!(randomized_expectation(&g, 0.1).unwrap(), splitting_product(&g, 0.1, Ordering::Forward));
        let err = splitting_errors(&g, &[0.1], LabMode::Randomized, Norm::Spectral).unwrap();
        assert!(err[0] < 1e-15);
    }

    #[test]
    fn commuting_generators_split_exactly() {
        let g = GeneratorSet::new(vec![m2(0.3, 0.0, 0.0, -0.2), m2(-0.5, 0.0, 0.0, 0.7)]).unwrap();
        for o in [Ordering::Forward, Ordering::Backward, Ordering::Averaged] {
            assert!((splitting_product(&g, 0.2, o) - g.exact(0.2)).abs().max() < 1e-12);
        }
    }

    #[test]
    fn noncommuting_pair_slopes() {
        let etas = [0.1, 0.05, 0.025];
        let fwd = splitting_errors(&pair(), &etas, LabMode::Forward, Norm::Spectral).unwrap();
        let avg = splitting_errors(&pair(), &etas, LabMode::Averaged, Norm::Spectral).unwrap();
        let (sf, _) = error_order_slope(&etas, &fwd).unwrap();
        let (sa, _) = error_order_slope(&etas, &avg).unwrap();
        assert!((1.8..=2.2).contains(&sf), "{sf}");
        assert!((2.8..=3.2).contains(&sa), "{sa}");
    }

    #[test]
    fn two_orderings_average_is_the_randomized_expectation() {
        let g = pair();
        let r = randomized_expectation(&g, 0.07).unwrap();
        assert!((r - splitting_product(&g, 0.07, Ordering::Averaged)).abs().max() < 1e-15);
    }

    #[test]
    fn randomized_triple_is_third_order() {
        let mut rng = RngStream::new(4, 0);
        let g = GeneratorSet::random(3, 3, &mut rng);
        let etas = geometric_grid(0.1, 4);
        let e = splitting_errors(&g, &etas, LabMode::Randomized, Norm::Spectral).unwrap();
        let (s, _) = error_order_slope(&etas, &e).unwrap();
        assert!((2.7..=3.3).contains(&s), "{s}");
    }

    #[test]
    fn enumeration_limit() {
        let g = GeneratorSet::random(7, 2, &mut RngStream::new(1, 0));
        assert!(matches!(randomized_expectation(&g, 0.1), Err(Error::SizeLimit(_))));
    }

    #[test]
    fn reverse_pair_decomposition() {
        for k in 2..=4 {
            let g = GeneratorSet::random(k, 3, &mut RngStream::new(k as u64, 0));
            let eta = 0.05;
            let mut acc = DMatrix::zeros(3, 3);
            let mut count = 0;
            for perm in (0..k).permutations(k) {
                let rev: Vec<usize> = perm.iter().rev().copied().collect();
                acc += (g.ordered_product(&perm, eta) + g.ordered_product(&rev, eta)) * 0.5;
                count += 1;
            }
            let paired = acc / count as f64;
            let r = randomized_expectation(&g, eta).unwrap();
            assert!((paired - r).abs().max() < 1e-12);
        }
    }

    #[test]
    fn bch_examples() {
        let a = m2(0.2, 0.0, 0.0, -0.1);
        let b = m2(-0.3, 0.0, 0.0, 0.5);
        for order in 2..=5 {
            assert_eq!(bch_truncated(&a, &b, order).unwrap(), &a + &b);
        }
        assert!(bch_truncated(&a, &b, 1).is_err());
        assert!(bch_truncated(&a, &b, 6).is_err());
        let (a, b) = (pair().mats()[0].clone(), pair().mats()[1].clone());
        let anti = bch_truncated(&a, &b, 2).unwrap() - bch_truncated(&b, &a, 2).unwrap();
        assert!((anti - comm(&a, &b)).abs().max() < 1e-15);
    }

    #[test]
    fn bch_truncation_orders() {
        let mut rng = RngStream::new(8, 0);
        let a = DMatrix::from_fn(3, 3, |_, _| 2.0 * rng.uniform() - 1.0);
        let b = DMatrix::from_fn(3, 3, |_, _| 2.0 * rng.uniform() - 1.0);
        for order in 2..=5 {
            let eps = geometric_grid(0.2, 4);
            let errs: Vec<f64> = eps
                .iter()
                .map(|&e| {
                    let (ea, eb) = (&a * e, &b * e);
                    let lhs = matrix_exp(&ea) * matrix_exp(&eb);
                    spectral_norm(&(lhs - matrix_exp(&bch_truncated(&ea, &eb, order).unwrap())))
                })
                .collect();
            let (s, _) = error_order_slope(&eps, &errs).unwrap();
            assert!((s - (order as f64 + 1.0)).abs() < 0.25, "order {order}: {s}");
        }
    }

    #[test]
    fn slope_fit_examples() {
        let etas = geometric_grid(0.1, 4);
        let sq: Vec<f64> = etas.iter().map(|e| 3.0 * e * e).collect();
        let (s, r2) = error_order_slope(&etas, &sq).unwrap();
        assert!((s - 2.0).abs() < 1e-10 && (r2 - 1.0).abs() < 1e-12);
        let cu: Vec<f64> = etas.iter().map(|e| e.powi(3)).collect();
        assert!((error_order_slope(&etas, &cu).unwrap().0 - 3.0).abs() < 1e-10);
        assert!(error_order_slope(&etas[..2], &sq[..2]).is_err());
        assert!(error_order_slope(&[0.1, 0.1, 0.1], &[1.0, 2.0, 3.0]).is_err());
        assert!(error_order_slope(&etas, &[1.0, 0.0, 1.0, 1.0]).is_err());
    }
}
