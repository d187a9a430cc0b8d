//! Kolmogorov distances, self-distance calibration and moment errors.

use nalgebra::DVector;

use crate::chain::Trace;
use crate::error::{Error, Result};
use crate::phase_space::RngStream;
use crate::potentials::GaussianPosterior;

/// Sorted, finite, nonempty sample.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalSample {
    values: Vec<f64>,
}

impl EmpiricalSample {
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptySample);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sample value".into()));
        }
        values.sort_by(f64::total_cmp);
        Ok(EmpiricalSample { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// sup |F_a − F_b| over right-continuous ECDFs.
pub fn kolmogorov_distance(a: &EmpiricalSample, b: &EmpiricalSample) -> f64 {
    let (x, y) = (&a.values, &b.values);
    let (na, nb) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < x.len() && j < y.len() {
        // Step past every copy of the smallest remaining value in both samples.
        let t = x[i].min(y[j]);
        while i < x.len() && x[i] <= t {
            i += 1;
        }
        while j < y.len() && y[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// One-sample KS distance against N(mean, variance).
pub fn ks_vs_gaussian(a: &EmpiricalSample, mean: f64, variance: f64) -> Result<f64> {
    if !(variance > 0.0 && variance.is_finite()) {
        return Err(Error::config(format!("variance must be > 0, got {variance}")));
    }
    let sd = variance.sqrt();
    let n = a.len() as f64;
    Ok(a.values
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal_cdf((x - mean) / sd);
            ((i + 1) as f64 / n - f).abs().max((f - i as f64 / n).abs())
        })
        .fold(0.0, f64::max))
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// m draws without replacement (partial Fisher–Yates).
fn subsample(values: &[f64], m: usize, rng: &mut RngStream) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    for i in 0..m {
        let j = i + rng.below(values.len() - i);
        idx.swap(i, j);
    }
    idx[..m].iter().map(|&i| values[i]).collect()
}

/// (q05, q50, q95) of the KS distance between two independent m-subsamples
/// of the oracle, over `reps` repetitions.
pub fn self_distance(
    oracle: &EmpiricalSample,
    m: usize,
    reps: usize,
    rng: &mut RngStream,
) -> Result<(f64, f64, f64)> {
    if m == 0 || m > oracle.len() {
        return Err(Error::config(format!(
            "subsample size {m} must be in 1..={}",
            oracle.len()
        )));
    }
    if reps < 20 {
        return Err(Error::config("self-distance needs at least 20 repetitions"));
    }
    let mut d: Vec<f64> = (0..reps)
        .map(|_| {
            let a = EmpiricalSample::new(subsample(oracle.values(), m, rng)).unwrap();
            let b = EmpiricalSample::new(subsample(oracle.values(), m, rng)).unwrap();
            kolmogorov_distance(&a, &b)
        })
        .collect();
    d.sort_by(f64::total_cmp);
    Ok((
        quantile_sorted(&d, 0.05),
        quantile_sorted(&d, 0.5),
        quantile_sorted(&d, 0.95),
    ))
}

/// Sample mean and population variance (n in the denominator, so n = 1
/// gives variance 0).
pub fn mean_var(x: &[f64]) -> Result<(f64, f64)> {
    if x.is_empty() {
        return Err(Error::EmptySample);
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var))
}

/// Componentwise |sample mean − posterior mean| and |sample variance −
/// posterior variance| of θ.
pub fn moment_errors(trace: &Trace, post: &GaussianPosterior) -> Result<(DVector<f64>, DVector<f64>)> {
    if trace.is_empty() {
        return Err(Error::EmptySample);
    }
    let d = trace.dim();
    if post.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: post.dim(),
        });
    }
    let mut me = DVector::zeros(d);
    let mut ve = DVector::zeros(d);
    for i in 0..d {
        let (m, v) = mean_var(&trace.series(i, crate::chain::Component::Theta))?;
        me[i] = (m - post.mean[i]).abs();
        ve[i] = (v - post.variance(i)).abs();
    }
    Ok((me, ve))
}
