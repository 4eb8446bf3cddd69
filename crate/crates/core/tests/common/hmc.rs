//! Sampler checks against posteriors known in closed form.

use pfnn::fem::TaylorHoodSpace;
use pfnn::inverse::{invert, synthesize_observations, HmcConfig, Posterior, SensorModel, SensorSpec};
use pfnn::mesh::Rect;
use pfnn::nn::{init_xavier_scaled, MlpParams};
use statrs::distribution::{ContinuousCDF, Normal};

use super::desk_space;

pub const OBSTACLE: Rect = Rect {
    x0: 2.0,
    y0: 2.0,
    x1: 3.0,
    y1: 3.0,
};

/// Network whose pressure output is `p0 + lambda * slope` (identity input).
pub fn affine_pressure_network(space: &TaylorHoodSpace, p0: &[f64], slope: &[f64]) -> MlpParams {
    let n_u = space.n_u();
    let mut p = init_xavier_scaled(&[1, n_u + p0.len()], 0).unwrap();
    let layer = &mut p.layers[0];
    layer.weights.iter_mut().for_each(|w| *w = 0.0);
    layer.bias.iter_mut().for_each(|b| *b = 0.0);
    for (k, (a, s)) in p0.iter().zip(slope).enumerate() {
        layer.bias[n_u + k] = *a;
        layer.weights[n_u + k] = *s;
    }
    p
}

pub fn linear_field(space: &TaylorHoodSpace, c: [f64; 3]) -> Vec<f64> {
    space.mesh().vertices.iter().map(|v| c[0] + c[1] * v[0] + c[2] * v[1]).collect()
}

/// Kolmogorov-Smirnov statistic of `xs` against `cdf`.
pub fn ks_statistic(xs: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic critical value at the 1% level.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.628 / (n as f64).sqrt()
}

pub fn affine_model(sigma: f64) -> SensorModel {
    let space = desk_space();
    let base = linear_field(&space, [0.0, 0.1, 0.2]);
    let slope = linear_field(&space, [-0.3, 0.01, -0.02]);
    let net = affine_pressure_network(&space, &base, &slope);
    SensorModel::new(net, None, &space, SensorSpec::on_obstacle(&OBSTACLE, sigma)).unwrap()
}

pub struct AnalyticCheck {
    pub mean: f64,
    pub std: f64,
    pub mu: f64,
    pub sd: f64,
    pub ks: f64,
    pub critical: f64,
}

/// Inverts 10 observations through an affine surrogate. Then `p^` is affine
/// in lambda and the posterior is a Gaussian (truncated far in its tails)
/// with known mean and spread.
pub fn analytic_posterior_check(samples: usize, seed: u64) -> AnalyticCheck {
    let model = affine_model(0.5);
    let obs = synthesize_observations(&model, 20.0, 10, 0.5, 5).unwrap();
    let s = model.derivative(0.0).unwrap();
    let p0 = model.predict(0.0).unwrap();
    let m = obs.len() as f64;
    let s2 = s[0] * s[0] + s[1] * s[1];
    let ybar = [0, 1].map(|k| obs.iter().map(|y| y[k]).sum::<f64>() / m);
    let mu = (s[0] * (ybar[0] - p0[0]) + s[1] * (ybar[1] - p0[1])) / s2;
    // log density -m s2 (lambda - mu)^2 / sigma^2 gives variance sigma^2 / (2 m s2).
    let sd = (0.25 / (2.0 * m * s2)).sqrt();
    assert!(mu - 4.0 * sd > 1.0 && mu + 4.0 * sd < 45.0, "posterior should sit inside the support");
    let post = Posterior::new(model, obs).unwrap();
    let run = invert(
        &post,
        &HmcConfig {
            warmup: 500,
            samples,
            seed,
            ..Default::default()
        },
    )
    .unwrap();
    let normal = Normal::new(mu, sd).unwrap();
    AnalyticCheck {
        mean: run.mean(),
        std: run.std(),
        mu,
        sd,
        ks: ks_statistic(&run.samples, |x| normal.cdf(x)),
        critical: ks_critical_1pct(samples),
    }
}
