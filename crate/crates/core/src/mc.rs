//! Gaussian sampling, closed-loop Monte Carlo runs, empirical violation
//! rates and the receding-horizon driver.
//!
//! Every run draws from its own ChaCha stream keyed by `(seed, run index)`,
//! so batches are bit-identical whatever the thread count.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::chance::PolytopicConstraint;
use crate::ellipsoidal::EllipsoidalConstraint;
use crate::error::{dim_err, Error, Result};
use crate::horizon::SystemModel;
use crate::linalg;
use crate::policy::{simulate_recursion, PolicyParams};
use crate::solver::SolveReport;
use crate::specfun::normal_quantile;

/// Environment variable capping the worker threads of [`simulate_runs`].
pub const THREADS_ENV: &str = "CCMPC_THREADS";

/// Two-sided 95% normal quantile used by the Wilson interval.
pub const WILSON_Z: f64 = 1.959_963_984_540_054;

/// Standard normal stream keyed by `(seed, stream)`.
pub struct NormalStream {
    rng: ChaCha8Rng,
}

impl NormalStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng }
    }

    /// Uniform on the open interval (0, 1).
    pub fn uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) / (1u64 << 53) as f64
    }

    pub fn normal(&mut self) -> f64 {
        normal_quantile(self.uniform())
    }

    pub fn normals(&mut self, k: usize) -> DVector<f64> {
        DVector::from_fn(k, |_, _| self.normal())
    }
}

/// Draws `w̄ = C z` for a fixed factor `C Cᵀ = Σ̄`.
#[derive(Debug, Clone)]
pub struct NoiseSampler {
    factor: DMatrix<f64>,
    seed: u64,
}

impl NoiseSampler {
    pub fn new(sigma_bar: &DMatrix<f64>, seed: u64) -> Result<Self> {
        Ok(Self { factor: linalg::semidefinite_cholesky(sigma_bar)?, seed })
    }

    pub fn from_model(model: &SystemModel, seed: u64) -> Self {
        Self { factor: model.sigma_factor(), seed }
    }

    pub fn dim(&self) -> usize {
        self.factor.nrows()
    }

    pub fn sample(&self, run_index: u64) -> DVector<f64> {
        let z = NormalStream::new(self.seed, run_index).normals(self.factor.ncols());
        &self.factor * z
    }
}

/// One draw of `w̄ ~ N(0, Σ̄)` for run `run_index`.
pub fn sample_noise(sigma_bar: &DMatrix<f64>, seed: u64, run_index: u64) -> Result<DVector<f64>> {
    Ok(NoiseSampler::new(sigma_bar, seed)?.sample(run_index))
}

/// A hard constraint `η(x̄, ū) ≤ 0` checked on simulated trajectories.
pub trait HardConstraint: Sync {
    fn violated(&self, xbar: &DVector<f64>, ubar: &DVector<f64>) -> bool;
}

impl HardConstraint for PolytopicConstraint {
    fn violated(&self, xbar: &DVector<f64>, ubar: &DVector<f64>) -> bool {
        !self.satisfied(xbar, ubar)
    }
}

impl HardConstraint for EllipsoidalConstraint {
    fn violated(&self, xbar: &DVector<f64>, ubar: &DVector<f64>) -> bool {
        let mut z = DVector::zeros(xbar.len() + ubar.len());
        z.rows_mut(0, xbar.len()).copy_from(xbar);
        z.rows_mut(xbar.len(), ubar.len()).copy_from(ubar);
        self.eval(&z) > 0.0
    }
}

/// One closed-loop trajectory with the noise that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Run {
    /// `x(0) … x(N)` stacked.
    pub xbar: DVector<f64>,
    /// `u(0) … u(N−1)` stacked.
    pub ubar: DVector<f64>,
    pub wbar: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunBatch {
    pub seed: u64,
    pub n: usize,
    pub m: usize,
    pub horizon: usize,
    pub runs: Vec<Run>,
}

impl RunBatch {
    pub fn len(&self) -> usize {
        self.runs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    pub fn state(&self, run: usize, t: usize) -> DVector<f64> {
        self.runs[run].xbar.rows(t * self.n, self.n).into_owned()
    }

    pub fn input(&self, run: usize, t: usize) -> DVector<f64> {
        self.runs[run].ubar.rows(t * self.m, self.m).into_owned()
    }

    /// Per-run violation flags.
    pub fn violations(&self, constraint: &dyn HardConstraint) -> Vec<bool> {
        self.runs.par_iter().map(|r| constraint.violated(&r.xbar, &r.ubar)).collect()
    }

    /// One row per `(run, t)`: `run,t,x1..xn,u1..um`; inputs are blank at `t = N`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["run".to_string(), "t".to_string()];
        header.extend((1..=self.n).map(|i| format!("x{i}")));
        header.extend((1..=self.m).map(|i| format!("u{i}")));
        w.write_record(&header)?;
        for (k, r) in self.runs.iter().enumerate() {
            for t in 0..=self.horizon {
                let mut rec = vec![k.to_string(), t.to_string()];
                rec.extend(r.xbar.rows(t * self.n, self.n).iter().map(|v| v.to_string()));
                if t < self.horizon {
                    rec.extend(r.ubar.rows(t * self.m, self.m).iter().map(|v| v.to_string()));
                } else {
                    rec.extend(std::iter::repeat_n(String::new(), self.m));
                }
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs `f` on a pool capped by `CCMPC_THREADS` when set. A cap at or
/// above the size of the current pool changes nothing.
pub fn with_thread_cap<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    match std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        Some(k) if k > 0 && k < rayon::current_num_threads() => {
            match rayon::ThreadPoolBuilder::new().num_threads(k).build() {
                Ok(pool) => pool.install(f),
                Err(_) => f(),
            }
        }
        _ => f(),
    }
}

/// `runs` independent closed-loop simulations of the policy.
pub fn simulate_runs(theta: &PolicyParams, model: &SystemModel, runs: usize, seed: u64) -> Result<RunBatch> {
    if theta.layout() != crate::policy::PolicyLayout::of(model) {
        return Err(dim_err("policy layout does not match the model"));
    }
    let sampler = NoiseSampler::from_model(model, seed);
    let (n, m, h) = (model.n(), model.m(), model.horizon());
    let out: Result<Vec<Run>> = with_thread_cap(|| {
        (0..runs)
            .into_par_iter()
            .map(|k| {
                let wbar = sampler.sample(k as u64);
                let (xs, us) = simulate_recursion(theta, model, model.x0(), &wbar)?;
                let xbar = DVector::from_iterator((h + 1) * n, xs.iter().flat_map(|x| x.iter().copied()));
                let ubar = DVector::from_iterator(h * m, us.iter().flat_map(|u| u.iter().copied()));
                Ok(Run { xbar, ubar, wbar })
            })
            .collect()
    });
    Ok(RunBatch { seed, n, m, horizon: h, runs: out? })
}

/// Violation fraction with its Wilson 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ViolationEstimate {
    pub violations: usize,
    pub runs: usize,
    pub rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl ViolationEstimate {
    pub fn from_counts(violations: usize, runs: usize) -> Result<Self> {
        if runs == 0 {
            return Err(Error::Domain("no runs to estimate from".into()));
        }
        if violations > runs {
            return Err(Error::Domain(format!("{violations} violations in {runs} runs")));
        }
        let (lo, hi) = wilson_interval(violations, runs, WILSON_Z);
        let rate = violations as f64 / runs as f64;
        Ok(Self { violations, runs, rate, ci_low: lo.min(rate), ci_high: hi.max(rate) })
    }
}

/// Wilson score interval for `k` successes in `n` trials.
pub fn wilson_interval(k: usize, n: usize, z: f64) -> (f64, f64) {
    let n = n as f64;
    let p = k as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

pub fn estimate_violation(batch: &RunBatch, constraint: &dyn HardConstraint) -> Result<ViolationEstimate> {
    if batch.is_empty() {
        return Err(Error::Domain("empty batch".into()));
    }
    let k = batch.violations(constraint).into_iter().filter(|v| *v).count();
    ViolationEstimate::from_counts(k, batch.len())
}

/// What happened at one receding-horizon step.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub step: usize,
    /// `None` when synthesis returned an error.
    pub report: Option<SolveReport>,
    pub error: Option<String>,
    /// The applied input came from an earlier policy.
    pub fallback: bool,
    pub state: DVector<f64>,
    pub input: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct RecedingHorizonRun {
    /// `steps + 1` visited states, starting at `x0`.
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub records: Vec<StepRecord>,
}

/// Closed loop that re-solves from each measured state and applies `u(0)`.
///
/// When a step does not return an optimal policy the last optimal policy
/// keeps running: its next input is evaluated on the noise realized since
/// it was computed, and past its horizon the input is zero. The per-step
/// noise is `N(0, Σ₀)` with `Σ₀` the leading `n × n` block of `Σ̄`.
pub fn receding_horizon<F>(model: &SystemModel, steps: usize, seed: u64, mut synthesize: F) -> Result<RecedingHorizonRun>
where
    F: FnMut(&SystemModel) -> Result<(PolicyParams, SolveReport)>,
{
    let (n, m, h) = (model.n(), model.m(), model.horizon());
    let sigma0 = model.sigma_bar().view((0, 0), (n, n)).into_owned();
    let sampler = NoiseSampler::new(&sigma0, seed)?;
    let mut x = model.x0().clone();
    let mut states = vec![x.clone()];
    let mut inputs = Vec::with_capacity(steps);
    let mut records = Vec::with_capacity(steps);
    // Last optimal policy and the noise observed since it was computed.
    let mut active: Option<(PolicyParams, Vec<DVector<f64>>)> = None;

    for k in 0..steps {
        let local = model.with_x0(x.clone())?;
        let (report, error, fresh) = match synthesize(&local) {
            Ok((p, r)) if r.is_optimal() => (Some(r), None, Some(p)),
            Ok((_, r)) => (Some(r), None, None),
            Err(e) => (None, Some(e.to_string()), None),
        };
        let fallback = fresh.is_none();
        if let Some(p) = fresh {
            active = Some((p, Vec::new()));
        }
        let u = match &active {
            Some((p, seen)) if seen.len() < h => {
                let j = seen.len();
                let mut u = p.dbar().rows(j * m, m).into_owned();
                for (i, w) in seen.iter().enumerate() {
                    u += p.gbar().view((j * m, i * n), (m, n)) * w;
                }
                u
            }
            _ => DVector::zeros(m),
        };
        let w = sampler.sample(k as u64);
        records.push(StepRecord { step: k, report, error, fallback, state: x.clone(), input: u.clone() });
        x = model.a() * &x + model.b() * &u + &w;
        if let Some((_, seen)) = active.as_mut() {
            seen.push(w);
        }
        states.push(x.clone());
        inputs.push(u);
    }
    Ok(RecedingHorizonRun { states, inputs, records })
}
