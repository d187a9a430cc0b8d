//! Exact transition kernels of the conjugate 1-D toy model, for full-batch
//! and mini-batch dynamics. With M = 1 the SDE is linear,
//!
//!   dz = A (z − [0, c]) dt + [√(2C) dW, 0],   A = [[−C, −σ_l⁻²], [1, 0]],
//!
//! in z = (r, θ). Full-batch dynamics use c = x̄; a mini-batch step picks
//! c = x̄ᵢ with probability ½ and keeps the full-data curvature in A.

use nalgebra::{Matrix2, Vector2};

use crate::chain::{prior_state, run_kernel, ChainConfig, Init, Trace, TraceMeta};
use crate::error::{Error, Result};
use crate::phase_space::{RngStream, State};
use crate::potentials::ToyData;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyParams {
    pub data: ToyData,
    pub friction: f64,
}

impl ToyParams {
    pub fn new(data: ToyData, friction: f64) -> Result<Self> {
        if !(data.sigma_x2 > 0.0 && data.sigma_theta2 > 0.0) {
            return Err(Error::config("toy variances must be > 0"));
        }
        if !(friction > 0.0 && friction.is_finite()) {
            return Err(Error::config("toy friction must be > 0"));
        }
        Ok(ToyParams { data, friction })
    }

    /// x₁ = 4, x₂ = −3.2, σ_x² = 2, σ_θ² = 0.5, C = 2.
    pub fn reference() -> Self {
        ToyParams {
            data: ToyData::reference(),
            friction: 2.0,
        }
    }

    pub fn v(&self) -> f64 {
        self.data.v()
    }

    pub fn sigma_l2(&self) -> f64 {
        self.data.sigma_l2()
    }

    pub fn x_bar(&self) -> f64 {
        self.data.posterior_mean()
    }

    pub fn x_bar_i(&self, i: usize) -> f64 {
        self.data.batch_center(i)
    }

    pub fn drift(&self) -> Matrix2<f64> {
        Matrix2::new(-self.friction, -1.0 / self.sigma_l2(), 1.0, 0.0)
    }

    /// diag(1, σ_l²), the stationary covariance of the full-batch SDE.
    pub fn stationary_cov(&self) -> Matrix2<f64> {
        Matrix2::new(1.0, 0.0, 0.0, self.sigma_l2())
    }
}

/// (mean, variance) of the exact posterior of θ.
pub fn toy_posterior(p: &ToyParams) -> (f64, f64) {
    (p.x_bar(), p.sigma_l2())
}

/// exp(tA) for a 2×2 matrix.
///
/// Uses exp(tA) = e^{tτ} (cosh(tδ) I + sinh(tδ)/δ (A − τI)) with τ = tr A / 2,
/// δ² = τ² − det A; trigonometric when δ² < 0, and a power series in (tδ)²
/// when the eigenvalues (nearly) coincide.
pub fn matexp2(a: &Matrix2<f64>, t: f64) -> Matrix2<f64> {
    let tau = 0.5 * a.trace();
    let delta2 = tau * tau - a.determinant();
    let x2 = delta2 * t * t;
    let (ch, sh_over_delta) = if x2.abs() < 1e-3 {
        let ch = 1.0 + x2 / 2.0 + x2 * x2 / 24.0 + x2 * x2 * x2 / 720.0;
        let sh = t * (1.0 + x2 / 6.0 + x2 * x2 / 120.0 + x2 * x2 * x2 / 5040.0);
        (ch, sh)
    } else if delta2 > 0.0 {
        let d = delta2.sqrt();
        ((t * d).cosh(), (t * d).sinh() / d)
    } else {
        let w = (-delta2).sqrt();
        ((t * w).cos(), (t * w).sin() / w)
    };
    let shifted = a - Matrix2::identity() * tau;
    (Matrix2::identity() * ch + shifted * sh_over_delta) * (t * tau).exp()
}

/// Mean and covariance of z(η) given z(0) = z₀ under drift centre `center`.
pub fn toy_transition(
    z0: &Vector2<f64>,
    eta: f64,
    p: &ToyParams,
    center: f64,
) -> (Vector2<f64>, Matrix2<f64>) {
    let e = matexp2(&p.drift(), eta);
    let c = Vector2::new(0.0, center);
    let mean = e * (z0 - c) + c;
    let s = p.stationary_cov();
    let cov = s - e * s * e.transpose();
    (mean, clamp_psd(&cov))
}

/// Symmetrises and clamps eigenvalues in [−1e-12, 0) to zero.
fn clamp_psd(cov: &Matrix2<f64>) -> Matrix2<f64> {
    let sym = (cov + cov.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
        return sym;
    }
    let vals = eig.eigenvalues.map(|l| if l < 0.0 && l >= -1e-12 { 0.0 } else { l });
    eig.eigenvectors * Matrix2::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// Lower Cholesky factor of a PSD 2×2 matrix, tolerating zero pivots.
fn chol2(c: &Matrix2<f64>) -> Matrix2<f64> {
    let l11 = c[(0, 0)].max(0.0).sqrt();
    let l21 = if l11 > 0.0 { c[(1, 0)] / l11 } else { 0.0 };
    let l22 = (c[(1, 1)] - l21 * l21).max(0.0).sqrt();
    Matrix2::new(l11, 0.0, l21, l22)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToyMode {
    Full,
    /// Each step uses the centre of one observation, chosen by a fair coin.
    MiniBatch,
}

impl ToyMode {
    pub fn name(self) -> &'static str {
        match self {
            ToyMode::Full => "full",
            ToyMode::MiniBatch => "minibatch",
        }
    }
}

/// Precomputed exact kernel for a fixed η.
#[derive(Debug, Clone)]
pub struct ToyKernel {
    pub params: ToyParams,
    pub eta: f64,
    pub mode: ToyMode,
    exp: Matrix2<f64>,
    chol: Matrix2<f64>,
}

impl ToyKernel {
    pub fn new(params: ToyParams, eta: f64, mode: ToyMode) -> Result<Self> {
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(Error::config(format!("step size must be >= 0, got {eta}")));
        }
        let exp = matexp2(&params.drift(), eta);
        let (_, cov) = toy_transition(&Vector2::zeros(), eta, &params, 0.0);
        Ok(ToyKernel {
            params,
            eta,
            mode,
            exp,
            chol: chol2(&cov),
        })
    }

    pub fn step(&self, z0: &Vector2<f64>, rng: &mut RngStream) -> Vector2<f64> {
        let batch = match self.mode {
            ToyMode::Full => 0,
            ToyMode::MiniBatch => rng.below(2),
        };
        self.step_on(z0, batch, rng)
    }

    /// Step with the batch index given; `batch` is ignored in full mode.
    pub fn step_on(&self, z0: &Vector2<f64>, batch: usize, rng: &mut RngStream) -> Vector2<f64> {
        let center = match self.mode {
            ToyMode::Full => self.params.x_bar(),
            ToyMode::MiniBatch => self.params.x_bar_i(batch),
        };
        if self.eta == 0.0 {
            return *z0;
        }
        let c = Vector2::new(0.0, center);
        let w = Vector2::new(rng.normal(), rng.normal());
        self.exp * (z0 - c) + c + self.chol * w
    }
}

/// One exact step from z₀ = (r, θ).
pub fn toy_exact_step(
    z0: &Vector2<f64>,
    eta: f64,
    p: &ToyParams,
    mode: ToyMode,
    rng: &mut RngStream,
) -> Result<Vector2<f64>> {
    Ok(ToyKernel::new(p.clone(), eta, mode)?.step(z0, rng))
}

/// Chain of exact-kernel steps under the usual burn-in/thinning protocol.
pub fn run_exact_chain(p: &ToyParams, eta: f64, mode: ToyMode, cfg: &ChainConfig) -> Result<Trace> {
    if !(eta > 0.0) {
        return Err(Error::config(format!("step size must be > 0, got {eta}")));
    }
    let kernel = ToyKernel::new(p.clone(), eta, mode)?;
    let init = match &cfg.init {
        Init::Prior => prior_state(
            &nalgebra::DVector::from_element(1, p.data.sigma_theta2),
            &nalgebra::DVector::from_element(1, 1.0),
            &mut cfg.init_stream(),
        ),
        Init::Fixed(s) => {
            if s.dim() != 1 {
                return Err(Error::DimensionMismatch {
                    expected: 1,
                    got: s.dim(),
                });
            }
            s.clone()
        }
    };
    let mut meta = TraceMeta::for_chain(cfg);
    meta.push("model", "toy");
    meta.push("scheme", "exact");
    meta.push("eta", eta);
    meta.push("C", p.friction);
    meta.push("mode", mode.name());
    meta.push("K", if mode == ToyMode::Full { 1 } else { 2 });
    meta.push("x1", p.data.x1);
    meta.push("x2", p.data.x2);
    meta.push("sigma_x2", p.data.sigma_x2);
    meta.push("sigma_theta2", p.data.sigma_theta2);
    // Coins on their own stream, so full and mini-batch chains with equal
    // seeds share their Gaussian draws.
    let mut rng = cfg.noise_stream();
    let mut coins = cfg.schedule_stream();
    run_kernel(cfg, init, eta, meta, |s| {
        let batch = match mode {
            ToyMode::Full => 0,
            ToyMode::MiniBatch => coins.below(2),
        };
        let z = kernel.step_on(&Vector2::new(s.r[0], s.theta[0]), batch, &mut rng);
        Ok(State::from_slices(&[z[0]], &[z[1]]).expect("1-d state"))
    })
}
