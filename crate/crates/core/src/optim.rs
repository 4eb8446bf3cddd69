//! L-BFGS with a strong-Wolfe line search on a flat parameter vector.
//!
//! One call to [`lbfgs_step`] performs exactly one quasi-Newton update, so
//! the outer training loop records one loss value per iteration. The line
//! search follows the bracketing/zoom scheme with cubic interpolation used
//! by common deep-learning L-BFGS implementations.

use std::collections::VecDeque;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm_inf};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsConfig {
    pub history_size: usize,
    pub c1: f64,
    pub c2: f64,
    pub initial_step: f64,
    /// Stop when `max |g_i|` falls to this value.
    pub grad_tol: f64,
    pub max_line_search_evals: usize,
    /// Zoom stops once the bracket is shorter than this (in `max |d_i|` units).
    pub interval_tol: f64,
    /// Curvature pairs with `s^T y <= eps ||s|| ||y||` are skipped.
    pub curvature_eps: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            history_size: 100,
            c1: 1e-4,
            c2: 0.9,
            initial_step: 1.0,
            grad_tol: 1e-12,
            max_line_search_evals: 25,
            interval_tol: 1e-9,
            curvature_eps: 1e-10,
        }
    }
}

impl LbfgsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return Err(Error::Config(format!("need 0 < c1 < c2 < 1, got c1={} c2={}", self.c1, self.c2)));
        }
        if self.history_size == 0 || self.max_line_search_evals == 0 {
            return Err(Error::Config("history_size and max_line_search_evals must be positive".into()));
        }
        Ok(())
    }
}

/// Optimizer state and per-iteration traces.
#[derive(Debug, Clone, Default)]
pub struct TrainState {
    pub iteration: usize,
    s_hist: VecDeque<Vec<f64>>,
    y_hist: VecDeque<Vec<f64>>,
    loss: Option<f64>,
    grad: Option<Vec<f64>>,
    pub loss_trace: Vec<f64>,
    pub wall_ms: Vec<f64>,
    pub stalls: usize,
    pub consecutive_stalls: usize,
    pub evaluations: usize,
}

impl TrainState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn history_len(&self) -> usize {
        self.s_hist.len()
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.loss
    }

    pub fn gradient(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Curvature products `s^T y` of the stored pairs.
    pub fn curvatures(&self) -> Vec<f64> {
        self.s_hist.iter().zip(&self.y_hist).map(|(s, y)| dot(s, y)).collect()
    }

    fn push_pair(&mut self, s: Vec<f64>, y: Vec<f64>, cfg: &LbfgsConfig) {
        let sy = dot(&s, &y);
        if sy > cfg.curvature_eps * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if self.s_hist.len() == cfg.history_size {
                self.s_hist.pop_front();
                self.y_hist.pop_front();
            }
            self.s_hist.push_back(s);
            self.y_hist.push_back(y);
        }
    }

    /// Two-loop recursion: `-H g`.
    fn direction(&self, g: &[f64]) -> Vec<f64> {
        let mut q: Vec<f64> = g.iter().map(|v| -v).collect();
        let k = self.s_hist.len();
        if k == 0 {
            return q;
        }
        let rho: Vec<f64> = (0..k).map(|i| 1.0 / dot(&self.s_hist[i], &self.y_hist[i])).collect();
        let mut alpha = vec![0.0; k];
        for i in (0..k).rev() {
            alpha[i] = rho[i] * dot(&self.s_hist[i], &q);
            axpy(-alpha[i], &self.y_hist[i], &mut q);
        }
        let (s, y) = (&self.s_hist[k - 1], &self.y_hist[k - 1]);
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
        for i in 0..k {
            let beta = rho[i] * dot(&self.y_hist[i], &q);
            axpy(alpha[i] - beta, &self.s_hist[i], &mut q);
        }
        q
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepStatus {
    /// Gradient already below tolerance; nothing was changed.
    Converged,
    Accepted { step: f64, evaluations: usize },
    /// The line search did not find sufficient decrease; parameters are
    /// unchanged and the curvature history was cleared.
    Stalled { evaluations: usize },
}

/// Minimizer of the cubic through `(x1, f1, g1)`, `(x2, f2, g2)`, clamped
/// to `bounds` (default: the interval between the points).
pub fn cubic_interpolate(x1: f64, f1: f64, g1: f64, x2: f64, f2: f64, g2: f64, bounds: Option<(f64, f64)>) -> f64 {
    let (lo, hi) = bounds.unwrap_or(if x1 <= x2 { (x1, x2) } else { (x2, x1) });
    let d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2);
    let d2_sq = d1 * d1 - g1 * g2;
    if d2_sq >= 0.0 {
        let d2 = d2_sq.sqrt();
        let min_pos = if x1 <= x2 {
            x2 - (x2 - x1) * ((g2 + d2 - d1) / (g2 - g1 + 2.0 * d2))
        } else {
            x1 - (x1 - x2) * ((g1 + d2 - d1) / (g1 - g2 + 2.0 * d2))
        };
        if min_pos.is_finite() {
            return min_pos.max(lo).min(hi);
        }
    }
    0.5 * (lo + hi)
}

struct Probe {
    t: f64,
    f: f64,
    g: Vec<f64>,
    gtd: f64,
}

struct LineSearchResult {
    t: f64,
    f: f64,
    g: Vec<f64>,
    evals: usize,
}

fn sanitize(f: f64) -> f64 {
    if f.is_finite() {
        f
    } else {
        f64::INFINITY
    }
}

#[allow(clippy::too_many_arguments)]
fn strong_wolfe<F>(
    cfg: &LbfgsConfig,
    obj: &mut F,
    x: &[f64],
    mut t: f64,
    d: &[f64],
    f: f64,
    g: &[f64],
    gtd: f64,
) -> Result<LineSearchResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let d_norm = norm_inf(d);
    let mut eval = |t: f64| -> Result<Probe> {
        let mut xt = x.to_vec();
        axpy(t, d, &mut xt);
        let (fv, gv) = obj(&xt)?;
        let fv = sanitize(fv);
        let gtd = dot(&gv, d);
        Ok(Probe { t, f: fv, g: gv, gtd })
    };

    let mut new = eval(t)?;
    let mut evals = 1;
    let mut prev = Probe {
        t: 0.0,
        f,
        g: g.to_vec(),
        gtd,
    };
    let mut ls_iter = 0;
    let mut done = false;
    let mut bracket: Vec<Probe>;
    loop {
        if ls_iter >= cfg.max_line_search_evals {
            bracket = vec![
                Probe {
                    t: 0.0,
                    f,
                    g: g.to_vec(),
                    gtd,
                },
                new,
            ];
            break;
        }
        if new.f > f + cfg.c1 * new.t * gtd || (ls_iter > 1 && new.f >= prev.f) || !new.gtd.is_finite() {
            bracket = vec![prev, new];
            break;
        }
        if new.gtd.abs() <= -cfg.c2 * gtd {
            bracket = vec![new];
            done = true;
            break;
        }
        if new.gtd >= 0.0 {
            bracket = vec![prev, new];
            break;
        }
        let min_step = new.t + 0.01 * (new.t - prev.t);
        let max_step = new.t * 10.0;
        t = cubic_interpolate(prev.t, prev.f, prev.gtd, new.t, new.f, new.gtd, Some((min_step, max_step)));
        prev = new;
        new = eval(t)?;
        evals += 1;
        ls_iter += 1;
    }

    if bracket.len() == 1 {
        let p = bracket.pop().expect("one element");
        return Ok(LineSearchResult {
            t: p.t,
            f: p.f,
            g: p.g,
            evals,
        });
    }

    // Zoom.
    let mut insuf_progress = false;
    let (mut low, mut high) = if bracket[0].f <= bracket[1].f { (0, 1) } else { (1, 0) };
    while !done && ls_iter < cfg.max_line_search_evals {
        let (b0, b1) = (&bracket[0], &bracket[1]);
        if (b1.t - b0.t).abs() * d_norm < cfg.interval_tol {
            break;
        }
        let mut t = cubic_interpolate(b0.t, b0.f, b0.gtd, b1.t, b1.f, b1.gtd, None);
        let (bmin, bmax) = (b0.t.min(b1.t), b0.t.max(b1.t));
        let eps = 0.1 * (bmax - bmin);
        if (bmax - t).min(t - bmin) < eps {
            if insuf_progress || t >= bmax || t <= bmin {
                t = if (t - bmax).abs() < (t - bmin).abs() { bmax - eps } else { bmin + eps };
                insuf_progress = false;
            } else {
                insuf_progress = true;
            }
        } else {
            insuf_progress = false;
        }
        let p = eval(t)?;
        evals += 1;
        ls_iter += 1;
        if p.f > f + cfg.c1 * p.t * gtd || p.f >= bracket[low].f || !p.gtd.is_finite() {
            bracket[high] = p;
            (low, high) = if bracket[0].f <= bracket[1].f { (0, 1) } else { (1, 0) };
        } else {
            if p.gtd.abs() <= -cfg.c2 * gtd {
                done = true;
            } else if p.gtd * (bracket[high].t - bracket[low].t) >= 0.0 {
                bracket.swap(high, low);
            }
            bracket[low] = p;
        }
    }
    let p = bracket.swap_remove(low);
    Ok(LineSearchResult {
        t: p.t,
        f: p.f,
        g: p.g,
        evals,
    })
}

/// Performs one L-BFGS iteration on `x` in place.
///
/// `obj` returns the loss and its gradient. A non-finite loss at the current
/// point is an error; non-finite trial points inside the line search are
/// treated as infinitely bad.
pub fn lbfgs_step<F>(cfg: &LbfgsConfig, state: &mut TrainState, x: &mut [f64], obj: &mut F) -> Result<StepStatus>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let start = Instant::now();
    if state.grad.is_none() {
        let (f, g) = obj(x)?;
        if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("loss at iteration {}", state.iteration)));
        }
        state.evaluations += 1;
        state.loss = Some(f);
        state.grad = Some(g);
    }
    let f = state.loss.expect("set above");
    let g = state.grad.clone().expect("set above");
    if norm_inf(&g) <= cfg.grad_tol {
        return Ok(StepStatus::Converged);
    }

    let mut d = state.direction(&g);
    let mut gtd = dot(&g, &d);
    if !(gtd < 0.0) {
        // Not a descent direction: restart from steepest descent.
        state.s_hist.clear();
        state.y_hist.clear();
        d = g.iter().map(|v| -v).collect();
        gtd = dot(&g, &d);
    }
    let t0 = if state.s_hist.is_empty() {
        let g1: f64 = g.iter().map(|v| v.abs()).sum();
        (1.0f64).min(1.0 / g1) * cfg.initial_step
    } else {
        cfg.initial_step
    };

    let ls = strong_wolfe(cfg, obj, x, t0, &d, f, &g, gtd)?;
    state.evaluations += ls.evals;
    let accepted = ls.t > 0.0 && ls.f.is_finite() && ls.f <= f + cfg.c1 * ls.t * gtd;
    let status = if accepted {
        let s: Vec<f64> = d.iter().map(|v| ls.t * v).collect();
        let y: Vec<f64> = ls.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        axpy(1.0, &s, x);
        state.push_pair(s, y, cfg);
        state.loss = Some(ls.f);
        state.grad = Some(ls.g);
        state.consecutive_stalls = 0;
        StepStatus::Accepted {
            step: ls.t,
            evaluations: ls.evals,
        }
    } else {
        state.s_hist.clear();
        state.y_hist.clear();
        state.stalls += 1;
        state.consecutive_stalls += 1;
        StepStatus::Stalled { evaluations: ls.evals }
    };
    state.iteration += 1;
    state.loss_trace.push(state.loss.expect("set"));
    state.wall_ms.push(start.elapsed().as_secs_f64() * 1e3);
    Ok(status)
}
