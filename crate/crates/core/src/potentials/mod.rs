//! Negative log posteriors U(θ) = −Σ log p(x|θ) − log p(θ), split into K
//! sub-potentials over contiguous blocks of the data.
//!
//! Each sub-potential carries its share of the likelihood plus `prior / K`,
//! so that Σᵢ Uᵢ = U exactly. Batch gradients are returned raw; the factor K
//! used by the splitting schemes is applied through [`BoundField`].

mod data;

pub use data::{read_linear_csv, read_logistic_csv, read_toy_csv, LinearData, LogisticData};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::phase_space::RngStream;

/// Scalar field U(θ) with analytic derivatives.
pub trait Field {
    fn dim(&self) -> usize;
    fn value(&self, theta: &DVector<f64>) -> Result<f64>;
    fn gradient(&self, theta: &DVector<f64>) -> Result<DVector<f64>>;
    /// (∇²U(θ)) v
    fn hessian_vec(&self, theta: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>>;
}

/// Which sub-potential to evaluate. Batch indices are zero-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Batch {
    Full,
    Index(usize),
}

/// U(θ) = ½ (θ − c)ᵀ H (θ − c). Mostly a test fixture; H = 0 gives ∇U ≡ 0.
#[derive(Debug, Clone)]
pub struct Quadratic {
    pub hessian: DMatrix<f64>,
    pub center: DVector<f64>,
}

impl Quadratic {
    pub fn new(hessian: DMatrix<f64>, center: DVector<f64>) -> Self {
        assert_eq!(hessian.nrows(), center.len());
        assert_eq!(hessian.ncols(), center.len());
        Quadratic { hessian, center }
    }

    pub fn isotropic(d: usize) -> Self {
        Self::new(DMatrix::identity(d, d), DVector::zeros(d))
    }

    pub fn diagonal(h: DVector<f64>) -> Self {
        let d = h.len();
        Self::new(DMatrix::from_diagonal(&h), DVector::zeros(d))
    }

    pub fn zero(d: usize) -> Self {
        Self::new(DMatrix::zeros(d, d), DVector::zeros(d))
    }
}

impl Field for Quadratic {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn value(&self, theta: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim(), theta)?;
        let e = theta - &self.center;
        Ok(0.5 * e.dot(&(&self.hessian * &e)))
    }

    fn gradient(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), theta)?;
        Ok(&self.hessian * (theta - &self.center))
    }

    fn hessian_vec(&self, theta: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), theta)?;
        check_dim(self.dim(), v)?;
        Ok(&self.hessian * v)
    }
}

/// Exact Gaussian posterior N(mean, covariance).
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPosterior {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl GaussianPosterior {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn variance(&self, i: usize) -> f64 {
        self.covariance[(i, i)]
    }

    pub fn variances(&self) -> DVector<f64> {
        self.covariance.diagonal()
    }
}

/// Conjugate 1-D Gaussian model: two observations x₁, x₂ with
/// likelihood variance σ_x² and a N(0, σ_θ²) prior.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyData {
    pub x1: f64,
    pub x2: f64,
    pub sigma_x2: f64,
    pub sigma_theta2: f64,
}

impl ToyData {
    /// x₁ = 4, x₂ = −3.2, σ_x² = 2, σ_θ² = 0.5.
    pub fn reference() -> Self {
        ToyData {
            x1: 4.0,
            x2: -3.2,
            sigma_x2: 2.0,
            sigma_theta2: 0.5,
        }
    }

    fn obs(&self) -> [f64; 2] {
        [self.x1, self.x2]
    }

    /// v = σ_x²/σ_θ² + 2
    pub fn v(&self) -> f64 {
        self.sigma_x2 / self.sigma_theta2 + 2.0
    }

    /// σ_l² = (1/σ_θ² + 2/σ_x²)⁻¹
    pub fn sigma_l2(&self) -> f64 {
        1.0 / (1.0 / self.sigma_theta2 + 2.0 / self.sigma_x2)
    }

    /// x̄ = (x₁ + x₂)/v
    pub fn posterior_mean(&self) -> f64 {
        (self.x1 + self.x2) / self.v()
    }

    /// x̄ᵢ = 2xᵢ/v, the minimiser of the K = 2 sub-potential.
    pub fn batch_center(&self, i: usize) -> f64 {
        2.0 * self.obs()[i] / self.v()
    }
}

#[derive(Debug, Clone)]
struct LinearBatch {
    gram: DMatrix<f64>,
    rhs: DVector<f64>,
    yy: f64,
}

#[derive(Debug, Clone)]
enum Model {
    Toy(ToyData),
    Linear {
        data: LinearData,
        noise_var: f64,
        prior_precision: DVector<f64>,
        batches: Vec<LinearBatch>,
        full: LinearBatch,
    },
    Logistic {
        data: LogisticData,
        prior_var: f64,
    },
}

/// A potential with a fixed partition of its data into K contiguous batches.
#[derive(Debug, Clone)]
pub struct Potential {
    model: Model,
    n_batches: usize,
    /// `bounds[i]..bounds[i+1]` are the data rows of batch i.
    bounds: Vec<usize>,
}

/// Contiguous near-equal blocks; the first `n % k` blocks take one extra row.
fn block_bounds(n: usize, k: usize) -> Vec<usize> {
    let (q, rem) = (n / k, n % k);
    let mut bounds = Vec::with_capacity(k + 1);
    bounds.push(0);
    for i in 0..k {
        let len = q + usize::from(i < rem);
        bounds.push(bounds[i] + len);
    }
    bounds
}

fn check_dim(expected: usize, v: &DVector<f64>) -> Result<()> {
    if v.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            got: v.len(),
        });
    }
    Ok(())
}

fn check_batches(n: usize, k: usize) -> Result<()> {
    if k < 1 {
        return Err(Error::config("number of batches K must be >= 1"));
    }
    if k > n.max(1) {
        return Err(Error::config(format!(
            "cannot split {n} observations into {k} non-empty batches"
        )));
    }
    Ok(())
}

/// log(1 + eᵃ) without overflow.
fn softplus(a: f64) -> f64 {
    a.max(0.0) + (-a.abs()).exp().ln_1p()
}

fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

impl Potential {
    /// Toy model; `k` must be 1 or 2.
    pub fn toy(data: ToyData, k: usize) -> Result<Self> {
        if !(data.sigma_x2 > 0.0 && data.sigma_theta2 > 0.0) {
            return Err(Error::config("toy variances must be > 0"));
        }
        check_batches(2, k)?;
        Ok(Potential {
            model: Model::Toy(data),
            n_batches: k,
            bounds: block_bounds(2, k),
        })
    }

    /// Conjugate linear-Gaussian regression y = Φθ + ε, ε ~ N(0, σ²),
    /// θ ~ N(0, diag(prior_var)).
    pub fn linear_gaussian(
        data: LinearData,
        noise_var: f64,
        prior_var: DVector<f64>,
        k: usize,
    ) -> Result<Self> {
        let d = data.features.ncols();
        if d == 0 {
            return Err(Error::config("linear model needs at least one feature"));
        }
        if prior_var.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: prior_var.len(),
            });
        }
        if !(noise_var > 0.0) || prior_var.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::config("noise and prior variances must be > 0"));
        }
        let n = data.features.nrows();
        // An empty data set is allowed (posterior = prior) with a single batch.
        if n == 0 {
            if k != 1 {
                return Err(Error::config("an empty data set admits only K = 1"));
            }
        } else {
            check_batches(n, k)?;
        }
        let bounds = block_bounds(n, k);
        let batches: Vec<LinearBatch> = bounds
            .windows(2)
            .map(|w| {
                let rows = data.features.rows(w[0], w[1] - w[0]);
                let y = data.targets.rows(w[0], w[1] - w[0]);
                LinearBatch {
                    gram: rows.transpose() * rows / noise_var,
                    rhs: rows.transpose() * y / noise_var,
                    yy: y.dot(&y) / (2.0 * noise_var),
                }
            })
            .collect();
        let full = batches.iter().fold(
            LinearBatch {
                gram: DMatrix::zeros(d, d),
                rhs: DVector::zeros(d),
                yy: 0.0,
            },
            |acc, b| LinearBatch {
                gram: acc.gram + &b.gram,
                rhs: acc.rhs + &b.rhs,
                yy: acc.yy + b.yy,
            },
        );
        Ok(Potential {
            model: Model::Linear {
                data,
                noise_var,
                prior_precision: prior_var.map(|v| 1.0 / v),
                batches,
                full,
            },
            n_batches: k,
            bounds,
        })
    }

    /// Logistic regression with labels in {0, 1} and an isotropic Gaussian prior.
    pub fn logistic(data: LogisticData, prior_var: f64, k: usize) -> Result<Self> {
        let n = data.features.nrows();
        if n == 0 {
            return Err(Error::MalformedData("logistic model needs n >= 1".into()));
        }
        if data.labels.len() != n {
            return Err(Error::MalformedData(format!(
                "{} feature rows but {} labels",
                n,
                data.labels.len()
            )));
        }
        if let Some(bad) = data.labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
            return Err(Error::MalformedData(format!("label {bad} is not 0 or 1")));
        }
        if !(prior_var > 0.0) {
            return Err(Error::config("prior variance must be > 0"));
        }
        check_batches(n, k)?;
        Ok(Potential {
            model: Model::Logistic { data, prior_var },
            n_batches: k,
            bounds: block_bounds(n, k),
        })
    }

    /// Same model, data re-split into `k` contiguous batches.
    pub fn repartition(&self, k: usize) -> Result<Self> {
        match &self.model {
            Model::Toy(t) => Potential::toy(t.clone(), k),
            Model::Linear {
                data,
                noise_var,
                prior_precision,
                ..
            } => Potential::linear_gaussian(
                data.clone(),
                *noise_var,
                prior_precision.map(|p| 1.0 / p),
                k,
            ),
            Model::Logistic { data, prior_var } => Potential::logistic(data.clone(), *prior_var, k),
        }
    }

    pub fn model_name(&self) -> &'static str {
        match self.model {
            Model::Toy(_) => "toy",
            Model::Linear { .. } => "lingauss",
            Model::Logistic { .. } => "logistic2d",
        }
    }

    pub fn dim(&self) -> usize {
        match &self.model {
            Model::Toy(_) => 1,
            Model::Linear { data, .. } => data.features.ncols(),
            Model::Logistic { data, .. } => data.features.ncols(),
        }
    }

    pub fn n_batches(&self) -> usize {
        self.n_batches
    }

    pub fn n_observations(&self) -> usize {
        *self.bounds.last().unwrap()
    }

    pub fn toy_data(&self) -> Option<&ToyData> {
        match &self.model {
            Model::Toy(t) => Some(t),
            _ => None,
        }
    }

    /// Prior variances per coordinate (used to initialise chains from the prior).
    pub fn prior_variances(&self) -> DVector<f64> {
        match &self.model {
            Model::Toy(t) => DVector::from_element(1, t.sigma_theta2),
            Model::Linear {
                prior_precision, ..
            } => prior_precision.map(|p| 1.0 / p),
            Model::Logistic { data, prior_var } => {
                DVector::from_element(data.features.ncols(), *prior_var)
            }
        }
    }

    fn rows(&self, batch: Batch) -> Result<std::ops::Range<usize>> {
        match batch {
            Batch::Full => Ok(0..self.n_observations()),
            Batch::Index(i) if i < self.n_batches => Ok(self.bounds[i]..self.bounds[i + 1]),
            Batch::Index(i) => Err(Error::BatchOutOfRange {
                batch: i,
                n_batches: self.n_batches,
            }),
        }
    }

    /// Share of the prior carried by `batch`.
    fn prior_share(&self, batch: Batch) -> f64 {
        match batch {
            Batch::Full => 1.0,
            Batch::Index(_) => 1.0 / self.n_batches as f64,
        }
    }

    pub fn value(&self, theta: &DVector<f64>, batch: Batch) -> Result<f64> {
        check_dim(self.dim(), theta)?;
        let rows = self.rows(batch)?;
        let w = self.prior_share(batch);
        Ok(match &self.model {
            Model::Toy(t) => {
                let th = theta[0];
                let obs = t.obs();
                let lik: f64 = rows.map(|j| (obs[j] - th).powi(2)).sum::<f64>() / (2.0 * t.sigma_x2);
                lik + w * th * th / (2.0 * t.sigma_theta2)
            }
            Model::Linear {
                prior_precision,
                batches,
                full,
                ..
            } => {
                let b = match batch {
                    Batch::Full => full,
                    Batch::Index(i) => &batches[i],
                };
                let quad = 0.5 * theta.dot(&(&b.gram * theta)) - b.rhs.dot(theta) + b.yy;
                let prior: f64 = theta
                    .iter()
                    .zip(prior_precision.iter())
                    .map(|(t, p)| 0.5 * p * t * t)
                    .sum();
                quad + w * prior
            }
            Model::Logistic { data, prior_var } => {
                let mut lik = 0.0;
                for j in rows {
                    let m = data.features.row(j).transpose().dot(theta);
                    let s = 2.0 * data.labels[j] - 1.0;
                    lik += softplus(-s * m);
                }
                lik + w * theta.norm_squared() / (2.0 * prior_var)
            }
        })
    }

    pub fn gradient(&self, theta: &DVector<f64>, batch: Batch) -> Result<DVector<f64>> {
        check_dim(self.dim(), theta)?;
        let rows = self.rows(batch)?;
        let w = self.prior_share(batch);
        Ok(match &self.model {
            Model::Toy(t) => {
                let th = theta[0];
                let obs = t.obs();
                let g: f64 = rows.map(|j| th - obs[j]).sum::<f64>() / t.sigma_x2;
                DVector::from_element(1, g + w * th / t.sigma_theta2)
            }
            Model::Linear {
                prior_precision,
                batches,
                full,
                ..
            } => {
                let b = match batch {
                    Batch::Full => full,
                    Batch::Index(i) => &batches[i],
                };
                &b.gram * theta - &b.rhs + theta.component_mul(prior_precision) * w
            }
            Model::Logistic { data, prior_var } => {
                let mut g = theta * (w / prior_var);
                for j in rows {
                    let x = data.features.row(j).transpose();
                    let s = 2.0 * data.labels[j] - 1.0;
                    let m = x.dot(theta);
                    g -= x * (s * sigmoid(-s * m));
                }
                g
            }
        })
    }

    pub fn hessian_vec(
        &self,
        theta: &DVector<f64>,
        v: &DVector<f64>,
        batch: Batch,
    ) -> Result<DVector<f64>> {
        check_dim(self.dim(), theta)?;
        check_dim(self.dim(), v)?;
        let rows = self.rows(batch)?;
        let w = self.prior_share(batch);
        Ok(match &self.model {
            Model::Toy(t) => {
                let n = rows.len() as f64;
                v * (n / t.sigma_x2 + w / t.sigma_theta2)
            }
            Model::Linear {
                prior_precision,
                batches,
                full,
                ..
            } => {
                let b = match batch {
                    Batch::Full => full,
                    Batch::Index(i) => &batches[i],
                };
                &b.gram * v + v.component_mul(prior_precision) * w
            }
            Model::Logistic { data, prior_var } => {
                let mut h = v * (w / prior_var);
                for j in rows {
                    let x = data.features.row(j).transpose();
                    let p = sigmoid(x.dot(theta));
                    h += &x * (p * (1.0 - p) * x.dot(v));
                }
                h
            }
        })
    }

    /// Exact conjugate posterior; logistic regression has none.
    pub fn analytic_posterior(&self) -> Result<GaussianPosterior> {
        match &self.model {
            Model::Toy(t) => Ok(GaussianPosterior {
                mean: DVector::from_element(1, t.posterior_mean()),
                covariance: DMatrix::from_element(1, 1, t.sigma_l2()),
            }),
            Model::Linear {
                prior_precision,
                full,
                ..
            } => {
                let precision = &full.gram + DMatrix::from_diagonal(prior_precision);
                let chol = precision.clone().cholesky().ok_or_else(|| {
                    Error::NonFinite("posterior precision is not positive definite".into())
                })?;
                let mean = chol.solve(&full.rhs);
                let mut cov = chol.inverse();
                cov = (&cov + cov.transpose()) * 0.5;
                Ok(GaussianPosterior {
                    mean,
                    covariance: cov,
                })
            }
            Model::Logistic { .. } => Err(Error::UnsupportedModel {
                model: "logistic2d",
                what: "no closed-form posterior",
            }),
        }
    }

    /// Full-batch Hessian for quadratic models (θ-independent).
    pub fn constant_hessian(&self) -> Option<DMatrix<f64>> {
        match &self.model {
            Model::Toy(t) => Some(DMatrix::from_element(1, 1, 1.0 / t.sigma_l2())),
            Model::Linear {
                prior_precision,
                full,
                ..
            } => Some(&full.gram + DMatrix::from_diagonal(prior_precision)),
            Model::Logistic { .. } => None,
        }
    }

    /// Gradient provider for `batch`, multiplied by `scale`.
    pub fn bind(&self, batch: Batch, scale: f64) -> BoundField<'_> {
        BoundField {
            potential: self,
            batch,
            scale,
        }
    }

    pub fn full(&self) -> BoundField<'_> {
        self.bind(Batch::Full, 1.0)
    }
}

/// `scale · U_batch`, the force field an integrator step sees.
#[derive(Debug, Clone, Copy)]
pub struct BoundField<'a> {
    pub potential: &'a Potential,
    pub batch: Batch,
    pub scale: f64,
}

impl Field for BoundField<'_> {
    fn dim(&self) -> usize {
        self.potential.dim()
    }

    fn value(&self, theta: &DVector<f64>) -> Result<f64> {
        Ok(self.scale * self.potential.value(theta, self.batch)?)
    }

    fn gradient(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.potential.gradient(theta, self.batch)? * self.scale)
    }

    fn hessian_vec(&self, theta: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.potential.hessian_vec(theta, v, self.batch)? * self.scale)
    }
}

impl Field for Potential {
    fn dim(&self) -> usize {
        Potential::dim(self)
    }

    fn value(&self, theta: &DVector<f64>) -> Result<f64> {
        Potential::value(self, theta, Batch::Full)
    }

    fn gradient(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        Potential::gradient(self, theta, Batch::Full)
    }

    fn hessian_vec(&self, theta: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        Potential::hessian_vec(self, theta, v, Batch::Full)
    }
}

/// Two-feature logistic regression, labels in {0, 1}, N(0, I) prior.
pub fn make_logistic_2d(features: DMatrix<f64>, labels: DVector<f64>) -> Result<Potential> {
    if features.ncols() != 2 {
        return Err(Error::MalformedData(format!(
            "expected 2 feature columns, got {}",
            features.ncols()
        )));
    }
    Potential::logistic(LogisticData { features, labels }, 1.0, 1)
}

/// Synthetic regression on a trigonometric basis.
///
/// Inputs are iid uniform on [0, 2π); feature 2j is sin(ω_j x) and feature
/// 2j+1 is cos(ω_j x), with ω_j = j + 1 unless `frequencies` is given.
/// True coefficients are N(0, coef_scale²) and targets carry N(0, noise_var)
/// noise.
#[derive(Debug, Clone)]
pub struct TrigRegression {
    pub n: usize,
    pub n_features: usize,
    pub noise_var: f64,
    pub prior_var: f64,
    pub coef_scale: f64,
    pub frequencies: Option<Vec<f64>>,
}

impl TrigRegression {
    pub fn frequency(&self, j: usize) -> f64 {
        match &self.frequencies {
            Some(f) => f[j],
            None => (j + 1) as f64,
        }
    }

    pub fn generate(&self, rng: &mut RngStream) -> Result<LinearData> {
        if self.n_features == 0 {
            return Err(Error::config("n_features must be >= 1"));
        }
        if let Some(f) = &self.frequencies {
            if f.len() < self.n_features.div_ceil(2) {
                return Err(Error::config("not enough basis frequencies"));
            }
        }
        let xs: Vec<f64> = (0..self.n)
            .map(|_| rng.uniform() * std::f64::consts::TAU)
            .collect();
        let features = DMatrix::from_fn(self.n, self.n_features, |i, j| {
            let w = self.frequency(j / 2);
            if j % 2 == 0 {
                (w * xs[i]).sin()
            } else {
                (w * xs[i]).cos()
            }
        });
        let coef = DVector::from_fn(self.n_features, |_, _| self.coef_scale * rng.normal());
        let noise_sd = self.noise_var.sqrt();
        let targets = &features * coef + DVector::from_fn(self.n, |_, _| noise_sd * rng.normal());
        Ok(LinearData { features, targets })
    }

    pub fn build(&self, rng: &mut RngStream, k: usize) -> Result<Potential> {
        let data = self.generate(rng)?;
        Potential::linear_gaussian(
            data,
            self.noise_var,
            DVector::from_element(self.n_features, self.prior_var),
            k,
        )
    }
}

/// Synthetic two-feature logistic data: x ~ N(0, I), y ~ Bernoulli(σ(θ*ᵀx)).
pub fn synthetic_logistic(n: usize, true_theta: [f64; 2], rng: &mut RngStream) -> LogisticData {
    let features = DMatrix::from_fn(n, 2, |_, _| rng.normal());
    let labels = DVector::from_fn(n, |i, _| {
        let m = true_theta[0] * features[(i, 0)] + true_theta[1] * features[(i, 1)];
        if rng.uniform() < sigmoid(m) {
            1.0
        } else {
            0.0
        }
    });
    LogisticData { features, labels }
}
