//! Residual losses over a set of angles, their exact parameter gradients,
//! and the L-BFGS training loop.
//!
//! The network maps the angle `lambda` (degrees) to all discrete
//! coefficients. With `preconditioned = false` the output is read as
//! `(u, p)` and the loss is the mean squared residual; otherwise it is read
//! as `(u~, p~)` and the residual is the two-sided preconditioned one.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{
    ns_jacobian_transpose_action, residual_navier_stokes, ConvectionTensor, StokesOperator, StokesSystem,
    TaylorHoodSpace,
};
use crate::linalg::{dot, norm2_sq, spmv, CsrMatrix};
use crate::mesh::{generate_structured, DomainSpec, Mesh, Rect};
use crate::nn::{init_xavier_scaled, InputMap, MlpParams};
use crate::optim::{lbfgs_step, LbfgsConfig, StepStatus, TrainState};
use crate::precond::{
    preconditioned_ns_jacobian_transpose, preconditioned_ns_with_rhs, preconditioned_stokes_with_rhs,
    recover_physical, Preconditioner,
};
use crate::reference::{find_reference, ReferenceSolution};

/// Range of angles the parametric input map normalizes to `[-1, 1]`.
pub const LAMBDA_RANGE: (f64, f64) = (1.0, 45.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    Stokes,
    NavierStokes,
}

/// Mesh source: a structured channel or a Gmsh file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshConfig {
    pub width: f64,
    pub height: f64,
    pub resolution: usize,
    /// `[x0, y0, x1, y1]`; absent for an empty channel.
    pub obstacle: Option<[f64; 4]>,
    /// When set, the other fields are ignored.
    pub gmsh: Option<PathBuf>,
}

impl Default for MeshConfig {
    fn default() -> Self {
        let d = DomainSpec::default();
        let o = d.obstacle.expect("default has an obstacle");
        MeshConfig {
            width: d.width,
            height: d.height,
            resolution: d.resolution,
            obstacle: Some([o.x0, o.y0, o.x1, o.y1]),
            gmsh: None,
        }
    }
}

impl MeshConfig {
    pub fn domain(&self) -> DomainSpec {
        DomainSpec {
            width: self.width,
            height: self.height,
            obstacle: self.obstacle.map(|[a, b, c, d]| Rect::new(a, b, c, d)),
            resolution: self.resolution,
        }
    }

    pub fn build(&self) -> Result<Mesh> {
        match &self.gmsh {
            Some(path) => {
                let bytes = std::fs::read(path)?;
                crate::mesh::parse_gmsh(&bytes)
            }
            None => generate_structured(&self.domain()),
        }
    }
}

fn default_hidden() -> Vec<usize> {
    vec![50; 5]
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub problem: ProblemKind,
    pub eta: f64,
    /// Training angles in degrees.
    pub lambda_train: Vec<f64>,
    #[serde(default = "default_true")]
    pub preconditioned: bool,
    pub max_iterations: usize,
    #[serde(default)]
    pub seed: u64,
    /// Widths of the SELU hidden layers; empty for a linear network.
    #[serde(default = "default_hidden")]
    pub hidden_layers: Vec<usize>,
    /// Write a checkpoint every this many iterations (0 disables).
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub mesh: MeshConfig,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_train.is_empty() {
            return Err(Error::Config("lambda_train must not be empty".into()));
        }
        if self.lambda_train.iter().any(|l| !l.is_finite()) {
            return Err(Error::Config("lambda_train contains a non-finite angle".into()));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Config(format!("eta must be positive, got {}", self.eta)));
        }
        if self.hidden_layers.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        if self.mesh.gmsh.is_none() {
            self.mesh.domain().validate()?;
        }
        Ok(())
    }

    /// A network is parametric when it is trained on more than one angle.
    pub fn parametric(&self) -> bool {
        self.lambda_train.len() > 1
    }

    /// Network widths for `n_out` outputs.
    pub fn architecture(&self, n_out: usize) -> Vec<usize> {
        let mut arch = vec![1];
        arch.extend(&self.hidden_layers);
        arch.push(n_out);
        arch
    }
}

/// `n` equidistant angles covering `[1, 45]` degrees.
pub fn equidistant_angles(n: usize) -> Vec<f64> {
    let (lo, hi) = LAMBDA_RANGE;
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Initial network for `config` with `n_out` outputs.
pub fn init_network(config: &TrainConfig, n_out: usize) -> Result<MlpParams> {
    let mut p = init_xavier_scaled(&config.architecture(n_out), config.seed)?;
    if config.parametric() {
        p.input_map = vec![InputMap::to_unit_interval(LAMBDA_RANGE.0, LAMBDA_RANGE.1)];
    }
    Ok(p)
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub sys: StokesSystem,
    /// `L^{-1} f`.
    pub lf: Vec<f64>,
    /// `M^{-1} g`.
    pub mg: Vec<f64>,
}

/// Everything needed to evaluate losses: the discrete space, operators and
/// factors shared across angles, and per-angle right-hand sides.
#[derive(Debug, Clone)]
pub struct FlowProblem {
    pub kind: ProblemKind,
    pub space: Arc<TaylorHoodSpace>,
    pub operator: Arc<StokesOperator>,
    pub pre: Arc<Preconditioner>,
    /// Empty for Stokes.
    pub ct: Arc<ConvectionTensor>,
    pub samples: Vec<Sample>,
    mass_u: Arc<CsrMatrix>,
    mass_p: Arc<CsrMatrix>,
}

impl FlowProblem {
    pub fn new(kind: ProblemKind, space: TaylorHoodSpace, eta: f64, lambdas: &[f64]) -> Result<Self> {
        let operator = Arc::new(StokesOperator::assemble(&space, eta)?);
        let pre = Arc::new(Preconditioner::from_operator(&operator)?);
        let ct = Arc::new(match kind {
            ProblemKind::Stokes => ConvectionTensor::empty(space.num_nodes()),
            ProblemKind::NavierStokes => ConvectionTensor::assemble(&space),
        });
        let mass_u = Arc::new(space.p2_mass());
        let mass_p = Arc::new(space.p1_mass());
        let mut problem = FlowProblem {
            kind,
            space: Arc::new(space),
            operator,
            pre,
            ct,
            samples: Vec::new(),
            mass_u,
            mass_p,
        };
        problem.samples = problem.build_samples(lambdas)?;
        Ok(problem)
    }

    pub fn from_config(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let space = TaylorHoodSpace::new(config.mesh.build()?)?;
        Self::new(config.problem, space, config.eta, &config.lambda_train)
    }

    fn build_samples(&self, lambdas: &[f64]) -> Result<Vec<Sample>> {
        lambdas
            .iter()
            .map(|&l| {
                let sys = StokesSystem::new(&self.space, self.operator.clone(), l)?;
                let (lf, mg) = self.pre.rhs(&sys)?;
                Ok(Sample { sys, lf, mg })
            })
            .collect()
    }

    /// Same operators and factors, different angles.
    pub fn with_lambdas(&self, lambdas: &[f64]) -> Result<Self> {
        let mut out = self.clone();
        out.samples = self.build_samples(lambdas)?;
        Ok(out)
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.sys.lambda_deg).collect()
    }

    pub fn n_u(&self) -> usize {
        self.operator.n_u()
    }

    pub fn n_p(&self) -> usize {
        self.operator.n_p()
    }

    pub fn n_out(&self) -> usize {
        self.n_u() + self.n_p()
    }

    /// Residual of sample `i` at network output `(a, b)`. Returns the
    /// residual and the physical velocity it was evaluated at.
    fn residual(&self, i: usize, a: &[f64], b: &[f64], preconditioned: bool) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let s = &self.samples[i];
        match (preconditioned, self.kind) {
            (false, ProblemKind::Stokes) => {
                let (ru, rp) = crate::fem::residual_stokes(&s.sys, a, b)?;
                Ok((ru, rp, a.to_vec()))
            }
            (false, ProblemKind::NavierStokes) => {
                let (ru, rp) = residual_navier_stokes(&s.sys, &self.ct, a, b)?;
                Ok((ru, rp, a.to_vec()))
            }
            (true, ProblemKind::Stokes) => {
                let (ru, rp) = preconditioned_stokes_with_rhs(&self.pre, a, b, &s.lf, &s.mg);
                Ok((ru, rp, Vec::new()))
            }
            (true, ProblemKind::NavierStokes) => Ok(preconditioned_ns_with_rhs(
                &self.pre, &s.sys, &self.ct, a, b, &s.lf, &s.mg,
            )),
        }
    }

    /// `J^T r` for sample `i`, `u` being the physical velocity.
    fn jacobian_transpose(&self, i: usize, u: &[f64], ru: &[f64], rp: &[f64], preconditioned: bool) -> Result<(Vec<f64>, Vec<f64>)> {
        let s = &self.samples[i];
        if preconditioned {
            Ok(match self.kind {
                ProblemKind::Stokes => self.pre.apply_block(ru, rp),
                ProblemKind::NavierStokes => preconditioned_ns_jacobian_transpose(&self.pre, &s.sys, &self.ct, u, ru, rp),
            })
        } else {
            ns_jacobian_transpose_action(&s.sys, &self.ct, u, ru, rp)
        }
    }

    /// Physical coefficients `(u, p)` predicted by `params` at `lambda_deg`.
    pub fn predict(&self, params: &MlpParams, lambda_deg: f64, preconditioned: bool) -> Result<(Vec<f64>, Vec<f64>)> {
        let (a, b) = params.forward_split(&[lambda_deg], self.n_u())?;
        crate::error::check_len("network output", self.n_out(), a.len() + b.len())?;
        if preconditioned {
            recover_physical(&self.pre, &a, &b)
        } else {
            Ok((a, b))
        }
    }

    /// Per-sample squared residual norms.
    pub fn residual_norms_sq(&self, params: &MlpParams, preconditioned: bool) -> Result<Vec<f64>> {
        (0..self.samples.len())
            .into_par_iter()
            .map(|i| {
                let lambda = self.samples[i].sys.lambda_deg;
                let (a, b) = params.forward_split(&[lambda], self.n_u())?;
                crate::error::check_len("network output", self.n_out(), a.len() + b.len())?;
                let (ru, rp, _) = self.residual(i, &a, &b, preconditioned)?;
                finite_or(norm2_sq(&ru) + norm2_sq(&rp), lambda)
            })
            .collect()
    }
}

fn finite_or(v: f64, lambda: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("residual for lambda = {lambda}")))
    }
}

/// Mean over the samples of `||R||^2` at the raw network output.
pub fn loss_plain(problem: &FlowProblem, params: &MlpParams) -> Result<f64> {
    loss(problem, params, false)
}

/// Mean over the samples of the squared preconditioned residual.
pub fn loss_preconditioned(problem: &FlowProblem, params: &MlpParams) -> Result<f64> {
    loss(problem, params, true)
}

pub fn loss(problem: &FlowProblem, params: &MlpParams, preconditioned: bool) -> Result<f64> {
    let per = problem.residual_norms_sq(params, preconditioned)?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// Loss and its gradient with respect to the flat parameters.
pub fn loss_and_gradient(problem: &FlowProblem, params: &MlpParams, preconditioned: bool) -> Result<(f64, Vec<f64>)> {
    let n = problem.samples.len();
    let scale = 2.0 / n as f64;
    let parts: Vec<(f64, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let lambda = problem.samples[i].sys.lambda_deg;
            let trace = params.forward_trace(&[lambda])?;
            let out = trace.output();
            crate::error::check_len("network output", problem.n_out(), out.len())?;
            let (a, b) = out.split_at(problem.n_u());
            let (ru, rp, u) = problem.residual(i, a, b, preconditioned)?;
            let l = finite_or(norm2_sq(&ru) + norm2_sq(&rp), lambda)?;
            let (gu, gp) = problem.jacobian_transpose(i, &u, &ru, &rp, preconditioned)?;
            let cot: Vec<f64> = gu.iter().chain(&gp).map(|v| scale * v).collect();
            let (g, _) = params.backward_from_trace(&trace, &cot)?;
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient for lambda = {lambda}")));
            }
            Ok((l, g))
        })
        .collect::<Result<_>>()?;
    let mut total = 0.0;
    let mut grad = vec![0.0; params.num_params()];
    for (l, g) in parts {
        total += l;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    Ok((total / n as f64, grad))
}

pub fn loss_gradient(problem: &FlowProblem, params: &MlpParams, preconditioned: bool) -> Result<Vec<f64>> {
    Ok(loss_and_gradient(problem, params, preconditioned)?.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIterations,
    Converged,
    /// 50 consecutive rejected steps.
    Stalled,
}

/// Consecutive rejected L-BFGS steps that end training.
pub const MAX_CONSECUTIVE_STALLS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    /// Loss after each iteration.
    pub loss: Vec<f64>,
    pub wall_ms: Vec<f64>,
    pub initial_loss: f64,
    /// `(lambda, ||R||)` per training angle at the final parameters.
    pub final_residual_norms: Vec<(f64, f64)>,
    pub setup_ms: f64,
    pub train_ms: f64,
    pub stalls: usize,
    pub stop_reason: StopReason,
}

impl LossReport {
    pub fn iterations(&self) -> usize {
        self.loss.len()
    }

    /// `iteration,loss,wall_ms` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,loss,wall_ms\n");
        for (i, (l, w)) in self.loss.iter().zip(&self.wall_ms).enumerate() {
            s.push_str(&format!("{},{:e},{:.3}\n", i + 1, l, w));
        }
        s
    }

    /// Same rows without the timing column, for byte-identical reruns.
    pub fn to_csv_without_timing(&self) -> String {
        let mut s = String::from("iteration,loss\n");
        for (i, l) in self.loss.iter().enumerate() {
            s.push_str(&format!("{},{:e}\n", i + 1, l));
        }
        s
    }
}

/// Runs L-BFGS on `params` for at most `max_iterations` steps.
/// `on_checkpoint(iteration, params)` is called every `checkpoint_every`
/// iterations when that is nonzero.
pub fn train(
    problem: &FlowProblem,
    params: &mut MlpParams,
    preconditioned: bool,
    max_iterations: usize,
    checkpoint_every: usize,
    on_checkpoint: &mut dyn FnMut(usize, &MlpParams) -> Result<()>,
) -> Result<LossReport> {
    let cfg = LbfgsConfig::default();
    let start = Instant::now();
    let mut theta = params.flatten();
    let mut state = TrainState::new();
    let mut model = params.clone();
    let mut objective = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        model.set_flat(x)?;
        loss_and_gradient(problem, &model, preconditioned)
    };
    let initial_loss = loss(problem, params, preconditioned)?;
    let mut stop_reason = StopReason::MaxIterations;
    for _ in 0..max_iterations {
        let status = lbfgs_step(&cfg, &mut state, &mut theta, &mut objective)?;
        match status {
            StepStatus::Converged => {
                stop_reason = StopReason::Converged;
                break;
            }
            StepStatus::Stalled { .. } if state.consecutive_stalls >= MAX_CONSECUTIVE_STALLS => {
                stop_reason = StopReason::Stalled;
                break;
            }
            _ => {}
        }
        if checkpoint_every > 0 && state.iteration.is_multiple_of(checkpoint_every) {
            params.set_flat(&theta)?;
            on_checkpoint(state.iteration, params)?;
        }
    }
    params.set_flat(&theta)?;
    let train_ms = start.elapsed().as_secs_f64() * 1e3;
    let norms = problem.residual_norms_sq(params, preconditioned)?;
    Ok(LossReport {
        loss: state.loss_trace.clone(),
        wall_ms: state.wall_ms.clone(),
        initial_loss,
        final_residual_norms: problem.lambdas().into_iter().zip(norms.into_iter().map(f64::sqrt)).collect(),
        setup_ms: 0.0,
        train_ms,
        stalls: state.stalls,
        stop_reason,
    })
}

/// Builds the problem and network from `config` and trains.
pub fn run_training(config: &TrainConfig) -> Result<(MlpParams, LossReport)> {
    run_training_with(config, &mut |_, _| Ok(()))
}

pub fn run_training_with(
    config: &TrainConfig,
    on_checkpoint: &mut dyn FnMut(usize, &MlpParams) -> Result<()>,
) -> Result<(MlpParams, LossReport)> {
    let setup = Instant::now();
    let problem = FlowProblem::from_config(config)?;
    let mut params = init_network(config, problem.n_out())?;
    let setup_ms = setup.elapsed().as_secs_f64() * 1e3;
    let mut report = train(
        &problem,
        &mut params,
        config.preconditioned,
        config.max_iterations,
        config.checkpoint_every,
        on_checkpoint,
    )?;
    report.setup_ms = setup_ms;
    Ok((params, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    Ux,
    Uy,
    P,
}

impl Field {
    pub const ALL: [Field; 3] = [Field::Ux, Field::Uy, Field::P];

    pub fn name(self) -> &'static str {
        match self {
            Field::Ux => "u_x",
            Field::Uy => "u_y",
            Field::P => "p",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub lambda: f64,
    pub field: Field,
    pub l2_rel: f64,
    pub linf_rel: f64,
}

/// Relative errors of `value` against `reference`: FEM L2 with mass matrix
/// `mass`, and coefficient-wise maximum. A zero reference falls back to
/// absolute errors.
pub fn relative_errors(mass: &CsrMatrix, value: &[f64], reference: &[f64]) -> (f64, f64) {
    let e: Vec<f64> = value.iter().zip(reference).map(|(a, b)| a - b).collect();
    let el2 = dot(&e, &spmv(mass, &e)).max(0.0).sqrt();
    let rl2 = dot(reference, &spmv(mass, reference)).max(0.0).sqrt();
    let einf = e.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let rinf = reference.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let rel = |e: f64, r: f64| if r > 0.0 { e / r } else { e };
    (rel(el2, rl2), rel(einf, rinf))
}

/// Error rows for physical coefficients `(u, p)` against `reference`.
pub fn field_errors(problem: &FlowProblem, u: &[f64], p: &[f64], reference: &ReferenceSolution) -> Result<Vec<ErrorRow>> {
    let n = problem.space.num_nodes();
    crate::error::check_len("field_errors u", problem.n_u(), u.len())?;
    crate::error::check_len("field_errors p", problem.n_p(), p.len())?;
    crate::error::check_len("field_errors reference u", problem.n_u(), reference.u.len())?;
    crate::error::check_len("field_errors reference p", problem.n_p(), reference.p.len())?;
    Ok(Field::ALL
        .iter()
        .map(|&field| {
            let (l2_rel, linf_rel) = match field {
                Field::Ux => relative_errors(&problem.mass_u, &u[..n], &reference.u[..n]),
                Field::Uy => relative_errors(&problem.mass_u, &u[n..], &reference.u[n..]),
                Field::P => relative_errors(&problem.mass_p, p, &reference.p),
            };
            ErrorRow {
                lambda: reference.lambda_deg,
                field,
                l2_rel,
                linf_rel,
            }
        })
        .collect())
}

/// Errors of the network prediction at each of `lambdas`.
pub fn evaluate_errors(
    problem: &FlowProblem,
    params: &MlpParams,
    preconditioned: bool,
    references: &[ReferenceSolution],
    lambdas: &[f64],
) -> Result<Vec<ErrorRow>> {
    let mut rows = Vec::with_capacity(3 * lambdas.len());
    for &l in lambdas {
        let reference = find_reference(references, l)?;
        let (u, p) = problem.predict(params, l, preconditioned)?;
        rows.extend(field_errors(problem, &u, &p, reference)?);
    }
    Ok(rows)
}

/// `lambda,field,l2_rel,linf_rel` rows with a header line.
pub fn errors_to_csv(rows: &[ErrorRow]) -> String {
    let mut s = String::from("lambda,field,l2_rel,linf_rel\n");
    for r in rows {
        s.push_str(&format!("{},{},{:e},{:e}\n", r.lambda, r.field.name(), r.l2_rel, r.linf_rel));
    }
    s
}

/// Mean relative L2 error per field over `rows`.
pub fn mean_l2_by_field(rows: &[ErrorRow]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (k, f) in Field::ALL.iter().enumerate() {
        let v: Vec<f64> = rows.iter().filter(|r| r.field == *f).map(|r| r.l2_rel).collect();
        out[k] = if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
    }
    out
}
