//! Central finite-difference checks of every hand-written derivative. Each
//! returns a relative error.

use std::sync::Arc;

use super::{desk_space, rel_err, rng, uniform_vec};
use pfnn::fem::{ns_jacobian_action, residual_navier_stokes};
use pfnn::inverse::{log_posterior, synthesize_observations, Posterior, SensorModel, SensorSpec};
use pfnn::mesh::Rect;
use pfnn::nn::{init_xavier_scaled, InputMap, MlpParams};
use pfnn::reference::solve_stokes_with;
use pfnn::train::{loss, loss_and_gradient, FlowProblem, ProblemKind};
use rand::seq::index::sample;

pub const TOL: f64 = 1e-5;

pub fn central<F: FnMut(f64) -> f64>(mut f: F, h: f64) -> f64 {
    (f(h) - f(-h)) / (2.0 * h)
}

/// `(parameter error, input error)` of `MlpParams::backward` for a network
/// of widths `arch`.
pub fn mlp_backward_error(arch: &[usize], seed: u64) -> (f64, f64) {
    let mut r = rng(seed);
    let mut p = init_xavier_scaled(arch, seed).unwrap();
    let n_out = *arch.last().unwrap();
    p.input_map = vec![InputMap::to_unit_interval(1.0, 45.0)];
    let theta0: Vec<f64> = p.flatten().iter().zip(uniform_vec(&mut r, p.num_params(), 0.1)).map(|(a, b)| a + b).collect();
    p.set_flat(&theta0).unwrap();
    let x = [17.0];
    let cot = uniform_vec(&mut r, n_out, 1.0);
    let objective = |q: &MlpParams, x: f64| -> f64 { q.forward(&[x]).unwrap().iter().zip(&cot).map(|(a, b)| a * b).sum() };
    let (g, gx) = p.backward(&x, &cot).unwrap();
    let fd: Vec<f64> = (0..p.num_params())
        .map(|i| {
            central(
                |h| {
                    let mut t = theta0.clone();
                    t[i] += h;
                    let mut q = p.clone();
                    q.set_flat(&t).unwrap();
                    objective(&q, x[0])
                },
                1e-6,
            )
        })
        .collect();
    let fdx = central(|h| objective(&p, x[0] + h), 1e-5);
    (rel_err(&fd, &g), ((fdx - gx[0]) / gx[0]).abs())
}

/// A small SELU network whose output is near the Stokes solution of the
/// first training angle, perturbed so residuals are O(0.1).
fn near_solution_network(problem: &FlowProblem, preconditioned: bool, seed: u64) -> MlpParams {
    let n_out = problem.n_out();
    let mut p = init_xavier_scaled(&[1, 6, n_out], seed).unwrap();
    p.input_map = vec![InputMap::to_unit_interval(1.0, 45.0)];
    let s = &problem.samples[0];
    let sol = solve_stokes_with(&s.sys, &problem.pre).unwrap();
    let (u, q) = if preconditioned {
        problem.pre.to_preconditioned(&sol.u, &sol.p)
    } else {
        (sol.u, sol.p)
    };
    let mut r = rng(seed);
    let noise = uniform_vec(&mut r, n_out, 0.1);
    let last = p.layers.last_mut().unwrap();
    for (k, v) in u.iter().chain(&q).enumerate() {
        last.bias[k] = v + noise[k];
    }
    let theta: Vec<f64> = p.flatten().iter().zip(uniform_vec(&mut r, p.num_params(), 0.05)).map(|(a, b)| a + b).collect();
    p.set_flat(&theta).unwrap();
    p
}

/// Loss gradient against finite differences on every first-layer parameter
/// plus random others, 30 probes in total.
pub fn loss_gradient_error(kind: ProblemKind, preconditioned: bool, seed: u64) -> f64 {
    let problem = FlowProblem::new(kind, desk_space(), 1.0, &[3.0, 30.0]).unwrap();
    let p = near_solution_network(&problem, preconditioned, seed);
    let theta0 = p.flatten();
    let (_, g) = loss_and_gradient(&problem, &p, preconditioned).unwrap();
    let mut r = rng(seed ^ 0x5a);
    let first = p.layers[0].num_params();
    let mut idx: Vec<usize> = (0..first).collect();
    idx.extend(sample(&mut r, theta0.len() - first, 30 - first).into_iter().map(|i| i + first));
    let mut fd = Vec::new();
    let mut an = Vec::new();
    for &i in &idx {
        fd.push(central(
            |h| {
                let mut t = theta0.clone();
                t[i] += h;
                let mut q = p.clone();
                q.set_flat(&t).unwrap();
                loss(&problem, &q, preconditioned).unwrap()
            },
            1e-6,
        ));
        an.push(g[i]);
    }
    rel_err(&fd, &an)
}

/// Navier-Stokes Jacobian action in a random direction.
pub fn ns_jacobian_error(seed: u64) -> f64 {
    let problem = FlowProblem::new(ProblemKind::NavierStokes, desk_space(), 0.5, &[12.0]).unwrap();
    let sys = &problem.samples[0].sys;
    let sol = solve_stokes_with(sys, &problem.pre).unwrap();
    let mut r = rng(seed);
    let u: Vec<f64> = sol.u.iter().zip(uniform_vec(&mut r, sys.n_u(), 0.2)).map(|(a, b)| a + b).collect();
    let p = sol.p.clone();
    let du = uniform_vec(&mut r, sys.n_u(), 1.0);
    let dp = uniform_vec(&mut r, sys.n_p(), 1.0);
    let (ju, jp) = ns_jacobian_action(sys, &problem.ct, &u, &du, &dp).unwrap();
    let h = 1e-4;
    let eval = |s: f64| {
        let uu: Vec<f64> = u.iter().zip(&du).map(|(a, b)| a + s * b).collect();
        let pp: Vec<f64> = p.iter().zip(&dp).map(|(a, b)| a + s * b).collect();
        residual_navier_stokes(sys, &problem.ct, &uu, &pp).unwrap()
    };
    let (pu, pp) = eval(h);
    let (mu, mp) = eval(-h);
    let fd: Vec<f64> = pu.iter().zip(&mu).chain(pp.iter().zip(&mp)).map(|(a, b)| (a - b) / (2.0 * h)).collect();
    let an: Vec<f64> = ju.iter().chain(&jp).copied().collect();
    rel_err(&fd, &an)
}

/// Worst relative error of the log-posterior derivative over a few angles.
pub fn log_posterior_error(seed: u64) -> f64 {
    let problem = FlowProblem::new(ProblemKind::Stokes, desk_space(), 1.0, &[1.0]).unwrap();
    let mut p = init_xavier_scaled(&[1, 6, 6, problem.n_out()], seed).unwrap();
    p.input_map = vec![InputMap::to_unit_interval(1.0, 45.0)];
    let sensors = SensorSpec::on_obstacle(&Rect::new(2.0, 2.0, 3.0, 3.0), 0.5);
    let model = SensorModel::new(p, Some(Arc::clone(&problem.pre)), &problem.space, sensors).unwrap();
    let obs = synthesize_observations(&model, 5.0, 10, 0.5, seed).unwrap();
    let post = Posterior::new(model, obs).unwrap();
    [3.0, 7.5, 20.0, 40.0]
        .iter()
        .map(|&lambda| {
            let (_, d) = log_posterior(&post, lambda).unwrap();
            let fd = central(|h| log_posterior(&post, lambda + h).unwrap().0, 1e-5);
            ((fd - d) / d).abs()
        })
        .fold(0.0, f64::max)
}
