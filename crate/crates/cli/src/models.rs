//! Model construction and method parsing shared by the commands.

use std::path::Path;
use std::str::FromStr;

use hamsde::integrators::{IntegratorSpec, Scheme};
use hamsde::phase_space::{MassMatrix, RngStream};
use hamsde::potentials::{
    read_linear_csv, read_logistic_csv, read_toy_csv, synthetic_logistic, Potential, ToyData, TrigRegression,
};
use nalgebra::DVector;

use crate::config::Config;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Toy,
    LinGauss,
    Logistic2d,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Toy => "toy",
            ModelKind::LinGauss => "lingauss",
            ModelKind::Logistic2d => "logistic2d",
        }
    }

    /// (noise variance, prior variance) used when the config says `auto`.
    fn default_variances(self) -> (f64, f64) {
        match self {
            ModelKind::Toy => (2.0, 0.5),
            ModelKind::LinGauss => (SWEEP_NOISE_VAR, 1.0),
            ModelKind::Logistic2d => (f64::NAN, 1.0),
        }
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "toy" => Ok(ModelKind::Toy),
            "lingauss" => Ok(ModelKind::LinGauss),
            "logistic2d" => Ok(ModelKind::Logistic2d),
            _ => Err(format!("unknown model '{s}' (toy, lingauss, logistic2d)")),
        }
    }
}

/// An integrator, or the exact transition kernel of the toy model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Integrator(Scheme),
    Exact,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Integrator(s) => s.name(),
            Method::Exact => "exact",
        }
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "exact" {
            Ok(Method::Exact)
        } else {
            s.parse::<Scheme>().map(Method::Integrator).map_err(|e| e.to_string())
        }
    }
}

pub const SWEEP_NOISE_VAR: f64 = 0.32;

/// Default linear-Gaussian data: 64 points on a sin/cos basis with
/// frequency 1, coefficients of scale 0.3. Its posterior has variances near
/// 0.01 and a mean 3–6 sd away from the origin.
pub fn sweep_generator(noise_var: f64, prior_var: f64) -> TrigRegression {
    TrigRegression {
        n: 64,
        n_features: 2,
        noise_var,
        prior_var,
        coef_scale: 0.3,
        frequencies: None,
    }
}

/// The default linear-Gaussian instance, split into `k` batches.
pub fn sweep_instance(k: usize) -> hamsde::Result<Potential> {
    sweep_generator(SWEEP_NOISE_VAR, 1.0).build(&mut RngStream::new(1, 0), k)
}

/// Unit-scale instance: same design, noise variance 32 (posterior
/// precision about 2).
pub fn unit_instance(k: usize) -> hamsde::Result<Potential> {
    sweep_generator(32.0, 1.0).build(&mut RngStream::new(1, 0), k)
}

/// Builds the configured model with `k` batches. `auto` variances are
/// replaced by the model defaults in `cfg`, so the echo shows them.
pub fn build_model(cfg: &mut Config, k: usize) -> CliResult<(ModelKind, Potential)> {
    let kind: ModelKind = if cfg.command == crate::config::Command::Toy {
        ModelKind::Toy
    } else {
        cfg.get("model")?
    };
    let (nv_default, pv_default) = kind.default_variances();
    if cfg.is_auto("noise-var") {
        let v = if nv_default.is_nan() { "unused".to_string() } else { nv_default.to_string() };
        cfg.set("noise-var", &v)?;
    }
    if cfg.is_auto("prior-var") {
        cfg.set("prior-var", &pv_default.to_string())?;
    }
    let prior_var: f64 = cfg.get("prior-var")?;
    let data = cfg.raw("data").to_string();
    let data_path = (!data.is_empty()).then(|| Path::new(&data).to_path_buf());
    let potential = match kind {
        ModelKind::Toy => {
            let sigma_x2: f64 = cfg.get("noise-var")?;
            let (x1, x2) = match &data_path {
                Some(p) => read_toy_csv(p)?,
                None => {
                    let r = ToyData::reference();
                    (r.x1, r.x2)
                }
            };
            Potential::toy(
                ToyData {
                    x1,
                    x2,
                    sigma_x2,
                    sigma_theta2: prior_var,
                },
                k,
            )?
        }
        ModelKind::LinGauss => {
            let noise_var: f64 = cfg.get("noise-var")?;
            match &data_path {
                Some(p) => {
                    let data = read_linear_csv(p)?;
                    let d = data.features.ncols();
                    Potential::linear_gaussian(data, noise_var, DVector::from_element(d, prior_var), k)?
                }
                None => {
                    let seed: u64 = cfg.get("data-seed")?;
                    sweep_generator(noise_var, prior_var).build(&mut RngStream::new(seed, 0), k)?
                }
            }
        }
        ModelKind::Logistic2d => {
            let data = match &data_path {
                Some(p) => read_logistic_csv(p)?,
                None => {
                    let seed: u64 = cfg.get("data-seed")?;
                    synthetic_logistic(100, [1.0, -0.5], &mut RngStream::new(seed, 0))
                }
            };
            if data.features.ncols() != 2 {
                return Err(CliError::invalid(format!(
                    "logistic2d needs 2 feature columns, got {}",
                    data.features.ncols()
                )));
            }
            Potential::logistic(data, prior_var, k)?
        }
    };
    Ok((kind, potential))
}

/// Mass diagonal: one value for all coordinates or a comma list of length d.
pub fn mass(cfg: &Config, d: usize) -> CliResult<MassMatrix> {
    let m: Vec<f64> = cfg.list("mass")?;
    let diag = match m.len() {
        1 => DVector::from_element(d, m[0]),
        n if n == d => DVector::from_vec(m),
        n => {
            return Err(CliError::invalid(format!("mass has {n} entries, model dimension is {d}")))
        }
    };
    Ok(MassMatrix::new(diag)?)
}

/// Integrator spec from the `C`, `nl`, `vhat` and `mass` keys.
pub fn spec(cfg: &Config, scheme: Scheme, eta: f64, d: usize) -> CliResult<IntegratorSpec> {
    let friction: f64 = cfg.get("C")?;
    if !(friction > 0.0) {
        return Err(CliError::invalid(format!("C must be > 0, got {friction}")));
    }
    let s = IntegratorSpec::new(scheme, eta, friction, mass(cfg, d)?)?
        .with_inner_steps(cfg.get("nl")?)?
        .with_v_hat(cfg.get("vhat")?)?;
    Ok(s)
}
