//! Sampling chains: burn-in, thinning, trace collection and the ergodic
//! diagnostics computed on traces.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use nalgebra::DVector;

use crate::batching::BatchSchedule;
use crate::error::{Error, Result};
use crate::integrators::{self, IntegratorSpec};
use crate::phase_space::{RngStream, State};
use crate::potentials::Potential;

/// Where a chain starts.
#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    /// θ from the prior, r ~ N(0, M).
    Prior,
    Fixed(State),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainConfig {
    pub n_samples: usize,
    pub burn_in: u64,
    pub thinning: u64,
    pub init: Init,
    pub seed: u64,
    /// Chain index; selects independent random streams under the same seed.
    pub stream: u64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            n_samples: 1000,
            burn_in: 2000,
            thinning: 500,
            init: Init::Prior,
            seed: 0,
            stream: 0,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thinning < 1 {
            return Err(Error::config("thinning must be >= 1"));
        }
        Ok(())
    }

    /// Stream feeding the integrator's normal draws.
    pub fn noise_stream(&self) -> RngStream {
        RngStream::new(self.seed, 3 * self.stream)
    }

    /// Stream for the batch schedule.
    pub fn schedule_stream(&self) -> RngStream {
        RngStream::new(self.seed, 3 * self.stream + 1)
    }

    /// Stream for the initial state.
    pub fn init_stream(&self) -> RngStream {
        RngStream::new(self.seed, 3 * self.stream + 2)
    }

    pub fn total_steps(&self) -> u64 {
        self.burn_in + self.n_samples as u64 * self.thinning
    }
}

/// Reproducibility record of a run. Wall time is measured but never written
/// to output files, so reruns stay byte-identical.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TraceMeta {
    /// Ordered key/value pairs describing every setting that shaped the run.
    pub fields: Vec<(String, String)>,
    pub wall_time_secs: f64,
}

impl TraceMeta {
    pub fn push(&mut self, key: &str, value: impl ToString) {
        match self.fields.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value.to_string(),
            None => self.fields.push((key.to_string(), value.to_string())),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.fields
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn for_chain(cfg: &ChainConfig) -> Self {
        let mut m = TraceMeta::default();
        m.push("seed", cfg.seed);
        m.push("stream", cfg.stream);
        m.push("n_samples", cfg.n_samples);
        m.push("burn_in", cfg.burn_in);
        m.push("thinning", cfg.thinning);
        match &cfg.init {
            Init::Prior => m.push("init", "prior"),
            Init::Fixed(s) => {
                m.push("init", "fixed");
                m.push("init_theta", join(s.theta.iter()));
                m.push("init_r", join(s.r.iter()));
            }
        }
        m
    }

    pub fn add_spec(&mut self, spec: &IntegratorSpec) {
        self.push("scheme", spec.scheme);
        self.push("eta", spec.eta);
        self.push("C", spec.friction);
        self.push("mass", join(spec.mass.diag().iter()));
        self.push("nl", spec.inner_steps);
        self.push("vhat", spec.v_hat);
    }

    pub fn add_schedule(&mut self, sched: &BatchSchedule) {
        self.push("mode", sched.mode());
        self.push("K", sched.k());
    }

    /// `key = value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.fields {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

fn join<'a>(xs: impl Iterator<Item = &'a f64>) -> String {
    xs.map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// Kept samples of a chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub states: Vec<State>,
    /// Integrator step index of each kept state (1-based count of steps taken).
    pub steps: Vec<u64>,
    /// Simulated time per integrator step.
    pub time_per_step: f64,
    /// Total simulated time of the run, burn-in included.
    pub effective_time: f64,
    pub meta: TraceMeta,
}

impl Trace {
    pub fn empty(time_per_step: f64, meta: TraceMeta) -> Self {
        Trace {
            states: Vec::new(),
            steps: Vec::new(),
            time_per_step,
            effective_time: 0.0,
            meta,
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, State::dim)
    }

    /// One coordinate as a series.
    pub fn series(&self, coord: usize, which: Component) -> Vec<f64> {
        self.states
            .iter()
            .map(|s| match which {
                Component::Theta => s.theta[coord],
                Component::R => s.r[coord],
            })
            .collect()
    }

    /// `step,time,theta_0..theta_{d-1},r_0..r_{d-1}`
    pub fn to_csv(&self, d: usize) -> String {
        let mut s = String::from("step,time");
        for i in 0..d {
            let _ = write!(s, ",theta_{i}");
        }
        for i in 0..d {
            let _ = write!(s, ",r_{i}");
        }
        s.push('\n');
        for (z, step) in self.states.iter().zip(&self.steps) {
            let _ = write!(s, "{},{}", step, *step as f64 * self.time_per_step);
            for x in z.theta.iter().chain(z.r.iter()) {
                let _ = write!(s, ",{x}");
            }
            s.push('\n');
        }
        s
    }

    /// Writes `trace.csv` and `meta.txt` into `dir`.
    pub fn write_files(&self, dir: &Path, d: usize) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::File::create(dir.join("trace.csv"))?.write_all(self.to_csv(d).as_bytes())?;
        std::fs::File::create(dir.join("meta.txt"))?.write_all(self.meta.to_text().as_bytes())?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    R,
    Theta,
}

/// Draws θ ~ N(0, diag(prior_var)) and r ~ N(0, M).
pub fn prior_state(prior_var: &DVector<f64>, mass_diag: &DVector<f64>, rng: &mut RngStream) -> State {
    let theta = prior_var.map(|v| v.sqrt() * rng.normal());
    let r = mass_diag.map(|m| m.sqrt() * rng.normal());
    State { r, theta }
}

/// Runs any one-step kernel under the burn-in/thinning protocol of `cfg`.
/// Divergence errors are completed with the step index and the kept samples.
pub fn run_kernel(
    cfg: &ChainConfig,
    init: State,
    time_per_step: f64,
    meta: TraceMeta,
    mut kernel: impl FnMut(&State) -> Result<State>,
) -> Result<Trace> {
    cfg.validate()?;
    let started = std::time::Instant::now();
    let mut trace = Trace::empty(time_per_step, meta);
    trace.states.reserve(cfg.n_samples);
    let total = cfg.total_steps();
    let mut z = init;
    for n in 1..=total {
        z = match kernel(&z) {
            Ok(next) => next,
            Err(Error::Divergence(mut rep)) => {
                rep.step = n;
                trace.effective_time = n as f64 * time_per_step;
                rep.partial = Some(trace);
                return Err(Error::Divergence(rep));
            }
            Err(e) => return Err(e),
        };
        if n > cfg.burn_in && (n - cfg.burn_in) % cfg.thinning == 0 {
            trace.states.push(z.clone());
            trace.steps.push(n);
        }
    }
    trace.effective_time = total as f64 * time_per_step;
    trace.meta.wall_time_secs = started.elapsed().as_secs_f64();
    Ok(trace)
}

/// Runs one chain of `spec` on `potential` with batches drawn from `sched`.
pub fn run_chain(
    potential: &Potential,
    spec: &IntegratorSpec,
    mut sched: BatchSchedule,
    cfg: &ChainConfig,
) -> Result<Trace> {
    spec.validate()?;
    cfg.validate()?;
    let d = potential.dim();
    if spec.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: spec.dim(),
        });
    }
    if sched.k() > 1 && sched.k() != potential.n_batches() {
        return Err(Error::config(format!(
            "schedule K = {} does not match the potential's {} batches",
            sched.k(),
            potential.n_batches()
        )));
    }
    let init = match &cfg.init {
        Init::Prior => prior_state(
            &potential.prior_variances(),
            spec.mass.diag(),
            &mut cfg.init_stream(),
        ),
        Init::Fixed(s) => {
            if s.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: s.dim(),
                });
            }
            s.clone()
        }
    };
    let mut meta = TraceMeta::for_chain(cfg);
    meta.push("model", potential.model_name());
    meta.add_spec(spec);
    meta.add_schedule(&sched);
    let mut noise = cfg.noise_stream();
    // A one-batch schedule is the full potential whatever its partition.
    let single = sched.k() == 1;
    run_kernel(cfg, init, spec.time_per_step(), meta, |z| {
        let (batch, scale) = sched.next_batch();
        let batch = if single { crate::potentials::Batch::Full } else { batch };
        integrators::step(z, &potential.bind(batch, scale), spec, &mut noise)
    })
}

/// Mean of φ over the kept states.
pub fn ergodic_average(trace: &Trace, phi: impl Fn(&State) -> f64) -> Result<f64> {
    if trace.is_empty() {
        return Err(Error::EmptySample);
    }
    Ok(trace.states.iter().map(phi).sum::<f64>() / trace.len() as f64)
}

/// Lag-1 sample autocorrelation Σ(xₜ − x̄)(xₜ₊₁ − x̄) / Σ(xₜ − x̄)².
pub fn acf1_series(x: &[f64]) -> Result<f64> {
    if x.len() < 3 {
        return Err(Error::config("acf1 needs at least 3 samples"));
    }
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let den: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    if den == 0.0 {
        return Err(Error::DegenerateVariance);
    }
    let num: f64 = x.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum();
    Ok(num / den)
}

pub fn acf1(trace: &Trace, coord: usize, which: Component) -> Result<f64> {
    if coord >= trace.dim() {
        return Err(Error::DimensionMismatch {
            expected: trace.dim(),
            got: coord,
        });
    }
    acf1_series(&trace.series(coord, which))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::batching::BatchMode;
    use crate::integrators::Scheme;
    use crate::phase_space::MassMatrix;
    use crate::potentials::ToyData;

    fn toy(k: usize) -> Potential {
        Potential::toy(ToyData::reference(), k).unwrap()
    }

    fn spec(scheme: Scheme) -> IntegratorSpec {
        IntegratorSpec::new(scheme, 0.05, 2.0, MassMatrix::identity(1)).unwrap()
    }

    #[test]
    fn zero_samples_gives_empty_trace_with_meta() {
        let cfg = ChainConfig {
            n_samples: 0,
            burn_in: 10,
            ..Default::default()
        };
        let t = run_chain(&toy(1), &spec(Scheme::Leapfrog), BatchSchedule::full(), &cfg).unwrap();
        assert!(t.is_empty());
        assert_eq!(t.meta.get("scheme"), Some("leapfrog"));
        assert_eq!(t.meta.get("seed"), Some("0"));
        assert!(ergodic_average(&t, |_| 1.0).is_err());
    }

    #[test]
    fn same_seed_same_trace() {
        let cfg = ChainConfig {
            n_samples: 50,
            burn_in: 20,
            thinning: 3,
            seed: 17,
            ..Default::default()
        };
        let p = toy(2);
        let run = || {
            let s = BatchSchedule::new(BatchMode::PermutationSweep, 2, cfg.schedule_stream()).unwrap();
            run_chain(&p, &spec(Scheme::Mt3), s, &cfg).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.states, b.states);
        assert_eq!(a.to_csv(1), b.to_csv(1));
        assert_eq!(a.meta.to_text(), b.meta.to_text());
        assert_eq!(a.steps[0], 23);
        assert_eq!(a.len(), 50);
        assert!((a.effective_time - (20.0 + 150.0) * 0.05).abs() < 1e-12);
    }

    #[test]
    fn effective_time_independent_of_k() {
        let cfg = ChainConfig {
            n_samples: 10,
            burn_in: 0,
            thinning: 4,
            ..Default::default()
        };
        let a = run_chain(&toy(1), &spec(Scheme::Leapfrog), BatchSchedule::full(), &cfg).unwrap();
        let s = BatchSchedule::new(BatchMode::PermutationSweep, 2, cfg.schedule_stream()).unwrap();
        let b = run_chain(&toy(2), &spec(Scheme::Leapfrog), s, &cfg).unwrap();
        assert_eq!(a.effective_time, b.effective_time);
        assert!((a.effective_time - 40.0 * 0.05).abs() < 1e-12);
    }

    #[test]
    fn csv_layout() {
        let cfg = ChainConfig {
            n_samples: 2,
            burn_in: 0,
            thinning: 1,
            init: Init::Fixed(State::from_slices(&[0.0], &[1.0]).unwrap()),
            ..Default::default()
        };
        let t = run_chain(&toy(1), &spec(Scheme::Euler), BatchSchedule::full(), &cfg).unwrap();
        let csv = t.to_csv(1);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "step,time,theta_0,r_0");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("1,0.05,"));
        assert!(t.meta.to_text().contains("init = fixed\n"));
    }

    #[test]
    fn divergence_carries_partial_trace() {
        let p = toy(1);
        let sp = IntegratorSpec::new(Scheme::Euler, 3.0, 0.0, MassMatrix::identity(1)).unwrap();
        let cfg = ChainConfig {
            n_samples: 10_000,
            burn_in: 0,
            thinning: 1,
            init: Init::Fixed(State::from_slices(&[0.0], &[1.0]).unwrap()),
            ..Default::default()
        };
        match run_chain(&p, &sp, BatchSchedule::full(), &cfg) {
            Err(Error::Divergence(rep)) => {
                assert!(rep.step > 1);
                assert_eq!(rep.partial.as_ref().unwrap().len() as u64, rep.step - 1);
                assert!(rep.to_string().contains("euler"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn schedule_must_match_partition() {
        let cfg = ChainConfig::default();
        let s = BatchSchedule::new(BatchMode::IidUniform, 3, cfg.schedule_stream()).unwrap();
        assert!(run_chain(&toy(2), &spec(Scheme::Leapfrog), s, &cfg).is_err());
    }

    #[test]
    fn acf1_examples() {
        let alt: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let a = acf1_series(&alt).unwrap();
        assert!((a + 1.0).abs() <= 2.0 / 1000.0);
        let mut rng = RngStream::new(3, 0);
        let iid: Vec<f64> = (0..10_000).map(|_| rng.normal()).collect();
        assert!(acf1_series(&iid).unwrap().abs() < 0.04);
        assert!(matches!(acf1_series(&[2.0; 10]), Err(Error::DegenerateVariance)));
        assert!(acf1_series(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn ergodic_average_of_one_is_one() {
        let cfg = ChainConfig {
            n_samples: 7,
            burn_in: 0,
            thinning: 2,
            ..Default::default()
        };
        let t = run_chain(&toy(1), &spec(Scheme::Symmetric), BatchSchedule::full(), &cfg).unwrap();
        assert_eq!(ergodic_average(&t, |_| 1.0).unwrap(), 1.0);
    }
}
