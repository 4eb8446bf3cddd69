mod common;

use std::sync::Arc;

use common::desk_space;
use common::hmc::{
    affine_model, affine_pressure_network, analytic_posterior_check, ks_critical_1pct, ks_statistic, linear_field,
    OBSTACLE,
};
use pfnn::fem::StokesOperator;
use pfnn::inverse::{
    grid_mode, log_posterior, run_hmc, synthesize_observations, HmcConfig, LogDensity, Posterior, SensorModel,
    SensorSpec, StandardNormalDensity,
};
use pfnn::precond::Preconditioner;
use pfnn::Result;
use statrs::distribution::{ContinuousCDF, Normal, Uniform};

#[test]
fn sensor_at_vertex_returns_nodal_value() {
    let space = desk_space();
    let verts = &space.mesh().vertices;
    let v = verts.iter().position(|p| p[0] == 2.5 && p[1] == 3.0).unwrap();
    let w = verts.iter().position(|p| p[0] == 0.5 && p[1] == 4.5).unwrap();
    let spec = SensorSpec {
        points: [verts[v], verts[w]],
        sigma: 0.5,
    };
    let p: Vec<f64> = (0..space.n_p()).map(|i| (i as f64 * 0.37).sin()).collect();
    let net = affine_pressure_network(&space, &p, &vec![0.0; p.len()]);
    let model = SensorModel::new(net, None, &space, spec).unwrap();
    let got = model.interpolate(&p).unwrap();
    assert!((got[0] - p[v]).abs() < 1e-14 && (got[1] - p[w]).abs() < 1e-14);
}

#[test]
fn interpolation_is_exact_for_linear_pressure() {
    let space = desk_space();
    let c = [0.7, -1.3, 2.1];
    let p = linear_field(&space, c);
    let spec = SensorSpec::on_obstacle(&OBSTACLE, 0.5);
    let net = affine_pressure_network(&space, &p, &vec![0.0; p.len()]);
    let model = SensorModel::new(net, None, &space, spec).unwrap();
    let got = model.predict(10.0).unwrap();
    for (g, x) in got.iter().zip(spec.points) {
        assert!((g - (c[0] + c[1] * x[0] + c[2] * x[1])).abs() < 1e-12);
    }
}

#[test]
fn preconditioned_output_is_recovered_before_interpolation() {
    let space = desk_space();
    let op = StokesOperator::assemble(&space, 1.0).unwrap();
    let pre = Arc::new(Preconditioner::from_operator(&op).unwrap());
    let p = linear_field(&space, [1.0, 0.5, -0.25]);
    let (_, pt) = pre.to_preconditioned(&vec![0.0; space.n_u()], &p);
    let spec = SensorSpec::on_obstacle(&OBSTACLE, 0.5);
    let physical = SensorModel::new(affine_pressure_network(&space, &p, &p), None, &space, spec).unwrap();
    let tilde = SensorModel::new(affine_pressure_network(&space, &pt, &pt), Some(pre), &space, spec).unwrap();
    for lambda in [1.0, 13.0] {
        let (a, b) = (physical.predict(lambda).unwrap(), tilde.predict(lambda).unwrap());
        assert!((a[0] - b[0]).abs() < 1e-10 && (a[1] - b[1]).abs() < 1e-10);
        let (da, db) = (physical.derivative(lambda).unwrap(), tilde.derivative(lambda).unwrap());
        assert!((da[0] - db[0]).abs() < 1e-10 && (da[1] - db[1]).abs() < 1e-10);
    }
}

#[test]
fn noiseless_observations_equal_prediction() {
    let model = affine_model(0.5);
    let obs = synthesize_observations(&model, 12.0, 4, 0.0, 1).unwrap();
    let ph = model.predict(12.0).unwrap();
    assert!(obs.iter().all(|y| *y == ph));
}

#[test]
fn observation_noise_has_requested_spread() {
    let model = affine_model(0.5);
    let ph = model.predict(7.0).unwrap();
    let obs = synthesize_observations(&model, 7.0, 10_000, 0.5, 11).unwrap();
    for k in 0..2 {
        let n = obs.len() as f64;
        let mean = obs.iter().map(|y| y[k]).sum::<f64>() / n;
        let var = obs.iter().map(|y| (y[k] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var.sqrt() - 0.5).abs() <= 0.03 * 0.5, "sensor {k}: std {}", var.sqrt());
        assert!((mean - ph[k]).abs() <= 4.0 * 0.5 / n.sqrt());
    }
    let again = synthesize_observations(&model, 7.0, 10, 0.5, 11).unwrap();
    assert_eq!(&again[..], &obs[..10]);
}

#[test]
fn likelihood_scales_with_noise() {
    let obs = synthesize_observations(&affine_model(0.5), 20.0, 6, 0.5, 3).unwrap();
    let narrow = Posterior::new(affine_model(0.5), obs.clone()).unwrap();
    let wide = Posterior::new(affine_model(1.0), obs).unwrap();
    for lambda in [2.0, 20.0, 44.0] {
        let (a, da) = narrow.log_likelihood(lambda).unwrap();
        let (b, db) = wide.log_likelihood(lambda).unwrap();
        assert!((b - a / 4.0).abs() <= 1e-12 * a.abs());
        assert!((db - da / 4.0).abs() <= 1e-12 * da.abs().max(1e-300));
    }
}

#[test]
fn posterior_is_zero_outside_prior() {
    let model = affine_model(0.5);
    let obs = synthesize_observations(&model, 10.0, 3, 0.5, 3).unwrap();
    let post = Posterior::new(model, obs).unwrap();
    assert_eq!(log_posterior(&post, 0.5).unwrap().0, f64::NEG_INFINITY);
    assert_eq!(log_posterior(&post, 45.5).unwrap().0, f64::NEG_INFINITY);
    assert!(log_posterior(&post, 45.0).unwrap().0.is_finite());
    assert!(Posterior::new(affine_model(0.5), Vec::new()).is_err());
}

#[test]
fn affine_surrogate_posterior_is_recovered() {
    let c = analytic_posterior_check(4000, 2);
    let n = 4000f64;
    assert!((c.mean - c.mu).abs() < 15.0 * c.sd / n.sqrt(), "{} vs {}", c.mean, c.mu);
    assert!((c.std / c.sd - 1.0).abs() < 0.1, "{} vs {}", c.std, c.sd);
    assert!(c.ks < c.critical, "KS {}", c.ks);
}

#[test]
fn standard_normal_passes_ks() {
    let run = run_hmc(
        &StandardNormalDensity,
        &HmcConfig {
            warmup: 1000,
            samples: 2000,
            seed: 7,
            ..Default::default()
        },
        0.0,
    )
    .unwrap();
    let normal = Normal::new(0.0, 1.0).unwrap();
    let d = ks_statistic(&run.samples, |x| normal.cdf(x));
    assert!(d < ks_critical_1pct(2000), "KS {d}");
}

struct UnitBox;

impl LogDensity for UnitBox {
    fn log_density(&self, x: f64) -> Result<(f64, f64)> {
        Ok(if (0.0..=1.0).contains(&x) { (0.0, 0.0) } else { (f64::NEG_INFINITY, 0.0) })
    }

    fn support(&self) -> (f64, f64) {
        (0.0, 1.0)
    }
}

#[test]
fn reflection_samples_uniform_support() {
    let run = run_hmc(
        &UnitBox,
        &HmcConfig {
            warmup: 200,
            samples: 2000,
            seed: 4,
            ..Default::default()
        },
        0.3,
    )
    .unwrap();
    let u = Uniform::new(0.0, 1.0).unwrap();
    let d = ks_statistic(&run.samples, |x| u.cdf(x));
    assert!(d < ks_critical_1pct(2000), "KS {d}");
}

#[test]
fn hmc_is_seeded() {
    let cfg = HmcConfig {
        warmup: 100,
        samples: 100,
        seed: 21,
        ..Default::default()
    };
    let a = run_hmc(&StandardNormalDensity, &cfg, 0.1).unwrap();
    let b = run_hmc(&StandardNormalDensity, &cfg, 0.1).unwrap();
    let c = run_hmc(&StandardNormalDensity, &HmcConfig { seed: 22, ..cfg }, 0.1).unwrap();
    assert_eq!(a.samples, b.samples);
    assert_ne!(a.samples, c.samples);
    assert_eq!(a.step_size_trace.len(), 100);
}

#[test]
fn grid_mode_finds_peak() {
    struct Peak;
    impl LogDensity for Peak {
        fn log_density(&self, x: f64) -> Result<(f64, f64)> {
            Ok((-(x - 17.0).powi(2), -2.0 * (x - 17.0)))
        }
    }
    assert_eq!(grid_mode(&Peak, 1.0, 45.0, 89).unwrap(), 17.0);
}
