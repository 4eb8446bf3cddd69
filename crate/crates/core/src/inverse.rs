//! Bayesian inference of the angle of attack from two pressure sensors.
//!
//! The likelihood uses the trained surrogate evaluated at the sensor points;
//! the prior is uniform on `[1, 45]` degrees. Sampling is plain HMC with a
//! fixed number of leapfrog steps and dual-averaging step-size adaptation.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::TaylorHoodSpace;
use crate::mesh::{Point, Rect};
use crate::nn::MlpParams;
use crate::precond::Preconditioner;

pub const DEFAULT_SIGMA: f64 = 0.5;
pub const PRIOR_SUPPORT: (f64, f64) = (1.0, 45.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub points: [Point; 2],
    pub sigma: f64,
}

impl SensorSpec {
    /// Two sensors on the top edge of `obstacle`, at 8% and 99% of its width.
    pub fn on_obstacle(obstacle: &Rect, sigma: f64) -> Self {
        let w = obstacle.x1 - obstacle.x0;
        SensorSpec {
            points: [
                [obstacle.x0 + 0.08 * w, obstacle.y1],
                [obstacle.x0 + 0.99 * w, obstacle.y1],
            ],
            sigma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("sensor noise sigma must be positive, got {}", self.sigma)));
        }
        Ok(())
    }
}

/// Surrogate restricted to the sensor pressures: `p^ = W M^{-T} p~`, with
/// `W` the P1 interpolation weights at the sensors.
#[derive(Debug, Clone)]
pub struct SensorModel {
    pub params: MlpParams,
    /// `None` if the network outputs physical coefficients.
    pub pre: Option<Arc<Preconditioner>>,
    pub sensors: SensorSpec,
    n_u: usize,
    n_p: usize,
    /// Per sensor, `(vertex, weight)` pairs.
    weights: [Vec<(usize, f64)>; 2],
}

impl SensorModel {
    pub fn new(
        params: MlpParams,
        pre: Option<Arc<Preconditioner>>,
        space: &TaylorHoodSpace,
        sensors: SensorSpec,
    ) -> Result<Self> {
        sensors.validate()?;
        let (n_u, n_p) = (space.n_u(), space.n_p());
        crate::error::check_len("sensor model network output", n_u + n_p, params.output_dim())?;
        let mesh = space.mesh();
        let locate = |x: Point| -> Result<Vec<(usize, f64)>> {
            let (t, bary) = mesh.locate_point(x)?;
            Ok(mesh.triangles[t].iter().copied().zip(bary).collect())
        };
        let weights = [locate(sensors.points[0])?, locate(sensors.points[1])?];
        Ok(SensorModel {
            params,
            pre,
            sensors,
            n_u,
            n_p,
            weights,
        })
    }

    /// Sensor pressures of physical P1 coefficients `p`.
    pub fn interpolate(&self, p: &[f64]) -> Result<[f64; 2]> {
        crate::error::check_len("sensor pressure field", self.n_p, p.len())?;
        let eval = |w: &[(usize, f64)]| w.iter().map(|&(v, c)| c * p[v]).sum();
        Ok([eval(&self.weights[0]), eval(&self.weights[1])])
    }

    fn physical_pressure(&self, lambda_deg: f64) -> Result<Vec<f64>> {
        let out = self.params.forward(&[lambda_deg])?;
        let mut p = out[self.n_u..].to_vec();
        if let Some(pre) = &self.pre {
            pre.solve_mt(&mut p);
        }
        Ok(p)
    }

    pub fn predict(&self, lambda_deg: f64) -> Result<[f64; 2]> {
        self.interpolate(&self.physical_pressure(lambda_deg)?)
    }

    /// `d/dlambda <c, p^(lambda)>`.
    pub fn directional_derivative(&self, lambda_deg: f64, c: [f64; 2]) -> Result<f64> {
        // Cotangent on the network output: [0; M^{-1} W^T c].
        let mut q = vec![0.0; self.n_p];
        for (w, ck) in self.weights.iter().zip(c) {
            for &(v, wt) in w {
                q[v] += wt * ck;
            }
        }
        if let Some(pre) = &self.pre {
            pre.solve_m(&mut q);
        }
        let mut cot = vec![0.0; self.n_u];
        cot.extend(q);
        let (_, gx) = self.params.backward(&[lambda_deg], &cot)?;
        Ok(gx[0])
    }

    /// `d p^ / d lambda` for both sensors.
    pub fn derivative(&self, lambda_deg: f64) -> Result<[f64; 2]> {
        Ok([
            self.directional_derivative(lambda_deg, [1.0, 0.0])?,
            self.directional_derivative(lambda_deg, [0.0, 1.0])?,
        ])
    }
}

/// Free-function form of [`SensorModel::predict`].
pub fn predict_sensor_pressure(model: &SensorModel, lambda_deg: f64) -> Result<[f64; 2]> {
    model.predict(lambda_deg)
}

/// An unnormalized log density on the real line with its derivative.
pub trait LogDensity {
    /// `(log density, derivative)`; `(-inf, 0)` outside the support.
    fn log_density(&self, x: f64) -> Result<(f64, f64)>;

    fn support(&self) -> (f64, f64) {
        (f64::NEG_INFINITY, f64::INFINITY)
    }
}

/// Gaussian sensor likelihood times the uniform prior.
#[derive(Debug, Clone)]
pub struct Posterior {
    pub model: SensorModel,
    pub observations: Vec<[f64; 2]>,
    pub support: (f64, f64),
}

impl Posterior {
    pub fn new(model: SensorModel, observations: Vec<[f64; 2]>) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::Config("at least one observation is required".into()));
        }
        if observations.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Config("observations must be finite".into()));
        }
        Ok(Posterior {
            model,
            observations,
            support: PRIOR_SUPPORT,
        })
    }

    /// `-sum_i ||p^ - y_i||^2 / sigma^2` and its derivative (no support check).
    pub fn log_likelihood(&self, lambda_deg: f64) -> Result<(f64, f64)> {
        let ph = self.model.predict(lambda_deg)?;
        let s2 = self.model.sensors.sigma * self.model.sensors.sigma;
        let mut ll = 0.0;
        let mut c = [0.0; 2];
        for y in &self.observations {
            for k in 0..2 {
                let r = ph[k] - y[k];
                ll -= r * r / s2;
                c[k] -= 2.0 * r / s2;
            }
        }
        let d = self.model.directional_derivative(lambda_deg, c)?;
        Ok((ll, d))
    }
}

impl LogDensity for Posterior {
    fn log_density(&self, x: f64) -> Result<(f64, f64)> {
        let (lo, hi) = self.support;
        if !(lo..=hi).contains(&x) {
            return Ok((f64::NEG_INFINITY, 0.0));
        }
        self.log_likelihood(x)
    }

    fn support(&self) -> (f64, f64) {
        self.support
    }
}

/// Log posterior and derivative at `lambda_deg`.
pub fn log_posterior(posterior: &Posterior, lambda_deg: f64) -> Result<(f64, f64)> {
    posterior.log_density(lambda_deg)
}

/// Standard normal, for sampler checks against a known distribution.
#[derive(Debug, Clone, Copy)]
pub struct StandardNormalDensity;

impl LogDensity for StandardNormalDensity {
    fn log_density(&self, x: f64) -> Result<(f64, f64)> {
        Ok((-0.5 * x * x, -x))
    }
}

/// `m` draws of `p^(true_lambda) + sigma * N(0, I)`.
pub fn synthesize_observations(
    model: &SensorModel,
    true_lambda: f64,
    m: usize,
    sigma: f64,
    seed: u64,
) -> Result<Vec<[f64; 2]>> {
    let ph = model.predict(true_lambda)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..m)
        .map(|_| {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            [ph[0] + sigma * a, ph[1] + sigma * b]
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HmcConfig {
    pub warmup: usize,
    pub samples: usize,
    pub leapfrog_steps: usize,
    pub target_accept: f64,
    pub seed: u64,
    /// Relative uniform jitter of the step size after warmup.
    pub jitter: f64,
}

impl Default for HmcConfig {
    fn default() -> Self {
        HmcConfig {
            warmup: 1000,
            samples: 1000,
            leapfrog_steps: 16,
            target_accept: 0.8,
            seed: 0,
            jitter: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorRun {
    pub sampler: String,
    pub initial_position: f64,
    pub warmup: usize,
    pub samples: Vec<f64>,
    /// Step size used at each warmup iteration.
    pub step_size_trace: Vec<f64>,
    /// Adapted step size used (before jitter) after warmup.
    pub step_size: f64,
    pub warmup_acceptance_rate: f64,
    /// Mean Metropolis acceptance probability over the sampling phase.
    pub acceptance_rate: f64,
}

impl PosteriorRun {
    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    /// Sample standard deviation (`n - 1` denominator).
    pub fn std(&self) -> f64 {
        let m = self.mean();
        let n = self.samples.len() as f64;
        (self.samples.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt()
    }

    pub fn summary(&self) -> serde_json::Value {
        serde_json::json!({
            "sampler": self.sampler,
            "mean": self.mean(),
            "std": self.std(),
            "acceptance_rate": self.acceptance_rate,
            "warmup_acceptance_rate": self.warmup_acceptance_rate,
            "step_size": self.step_size,
            "warmup": self.warmup,
            "samples": self.samples.len(),
        })
    }
}

struct State {
    x: f64,
    logp: f64,
    grad: f64,
}

/// Moves `x` back into `[lo, hi]` by mirroring, flipping `p` once per bounce.
fn reflect(x: f64, p: f64, lo: f64, hi: f64) -> (f64, f64) {
    if (lo..=hi).contains(&x) {
        return (x, p);
    }
    // Unfolded, the path is periodic with period 2w; odd bounce counts land
    // in the second half of the period.
    let w = hi - lo;
    let t = (x - lo).rem_euclid(2.0 * w);
    if t <= w {
        ((lo + t).clamp(lo, hi), p)
    } else {
        ((hi - (t - w)).clamp(lo, hi), -p)
    }
}

fn leapfrog<D: LogDensity>(target: &D, s: &State, p0: f64, eps: f64, steps: usize) -> Result<(State, f64)> {
    let (lo, hi) = target.support();
    let mut x = s.x;
    let mut p = p0 + 0.5 * eps * s.grad;
    let mut logp = s.logp;
    let mut grad = s.grad;
    for k in 0..steps {
        (x, p) = reflect(x + eps * p, p, lo, hi);
        (logp, grad) = target.log_density(x)?;
        if !logp.is_finite() {
            break;
        }
        let half = if k + 1 == steps { 0.5 } else { 1.0 };
        p += half * eps * grad;
    }
    Ok((State { x, logp, grad }, p))
}

fn accept_prob(current: &State, p0: f64, proposal: &State, p1: f64) -> f64 {
    let h0 = -current.logp + 0.5 * p0 * p0;
    let h1 = -proposal.logp + 0.5 * p1 * p1;
    let a = (h0 - h1).exp().min(1.0);
    if a.is_nan() {
        0.0
    } else {
        a
    }
}

fn initial_step_size<D: LogDensity>(target: &D, s: &State, rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut eps = 1.0;
    let p: f64 = rng.sample(StandardNormal);
    let (prop, p1) = leapfrog(target, s, p, eps, 1)?;
    let mut a = accept_prob(s, p, &prop, p1);
    let dir = if a > 0.5 { 1.0 } else { -1.0 };
    for _ in 0..100 {
        if a.powf(dir) <= 2f64.powf(-dir) {
            break;
        }
        eps *= 2f64.powf(dir);
        let (prop, p1) = leapfrog(target, s, p, eps, 1)?;
        a = accept_prob(s, p, &prop, p1);
    }
    Ok(eps)
}

/// HMC with dual-averaging step-size adaptation starting at `init`.
pub fn run_hmc<D: LogDensity>(target: &D, cfg: &HmcConfig, init: f64) -> Result<PosteriorRun> {
    if cfg.warmup == 0 || cfg.samples == 0 || cfg.leapfrog_steps == 0 {
        return Err(Error::Config("warmup, samples and leapfrog_steps must be positive".into()));
    }
    let (logp, grad) = target.log_density(init)?;
    if !logp.is_finite() {
        return Err(Error::Config(format!("initial position {init} has zero density")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = State { x: init, logp, grad };

    // Steps longer than a bounded support only wrap around it; the cap also
    // keeps adaptation finite on flat densities.
    let (lo, hi) = target.support();
    let max_log_eps = if hi - lo < f64::INFINITY { (hi - lo).ln() } else { f64::MAX.ln() - 10.0 };
    let eps0 = initial_step_size(target, &state, &mut rng)?.min(max_log_eps.exp());
    let mu = (10.0 * eps0).ln();
    let (gamma, t0, kappa) = (0.05, 10.0, 0.75);
    let mut h_bar = 0.0;
    let mut log_eps = eps0.ln();
    let mut log_eps_bar = 0.0;
    let mut trace = Vec::with_capacity(cfg.warmup);
    let mut warm_accepts = 0usize;

    let transition = |state: &mut State, eps: f64, rng: &mut ChaCha8Rng| -> Result<(f64, bool)> {
        let p0: f64 = rng.sample(StandardNormal);
        let (prop, p1) = leapfrog(target, state, p0, eps, cfg.leapfrog_steps)?;
        let a = if prop.logp.is_finite() { accept_prob(state, p0, &prop, p1) } else { 0.0 };
        let u: f64 = rng.gen();
        let accepted = u < a;
        if accepted {
            *state = prop;
        }
        Ok((a, accepted))
    };

    for m in 1..=cfg.warmup {
        let eps = log_eps.exp();
        trace.push(eps);
        let (a, accepted) = transition(&mut state, eps, &mut rng)?;
        warm_accepts += accepted as usize;
        let mf = m as f64;
        let w = 1.0 / (mf + t0);
        h_bar = (1.0 - w) * h_bar + w * (cfg.target_accept - a);
        log_eps = (mu - mf.sqrt() / gamma * h_bar).min(max_log_eps);
        let eta = mf.powf(-kappa);
        log_eps_bar = eta * log_eps + (1.0 - eta) * log_eps_bar;
    }
    if warm_accepts == 0 {
        return Err(Error::Sampler {
            message: "every warmup proposal was rejected".into(),
            step_sizes: trace,
        });
    }
    let eps = log_eps_bar.min(max_log_eps).exp();
    let mut samples = Vec::with_capacity(cfg.samples);
    let mut acc_sum = 0.0;
    for _ in 0..cfg.samples {
        let j: f64 = rng.gen_range(-1.0..=1.0);
        let (a, _) = transition(&mut state, eps * (1.0 + cfg.jitter * j), &mut rng)?;
        acc_sum += a;
        samples.push(state.x);
    }
    Ok(PosteriorRun {
        sampler: "hmc-dual-averaging".into(),
        initial_position: init,
        warmup: cfg.warmup,
        samples,
        step_size_trace: trace,
        step_size: eps,
        warmup_acceptance_rate: warm_accepts as f64 / cfg.warmup as f64,
        acceptance_rate: acc_sum / cfg.samples as f64,
    })
}

/// Grid point of highest density inside the support, a starting position
/// for the chain.
pub fn grid_mode<D: LogDensity>(target: &D, lo: f64, hi: f64, n: usize) -> Result<f64> {
    let mut best = (f64::NEG_INFINITY, 0.5 * (lo + hi));
    for i in 0..n.max(2) {
        let x = lo + (hi - lo) * i as f64 / (n.max(2) - 1) as f64;
        let (lp, _) = target.log_density(x)?;
        if lp > best.0 {
            best = (lp, x);
        }
    }
    Ok(best.1)
}

/// Samples the angle posterior, starting at the grid mode of the prior range.
pub fn invert(posterior: &Posterior, cfg: &HmcConfig) -> Result<PosteriorRun> {
    let (lo, hi) = posterior.support;
    let init = grid_mode(posterior, lo, hi, 89)?;
    run_hmc(posterior, cfg, init)
}
