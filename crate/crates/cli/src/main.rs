//! `pfnn` command-line front end.
//!
//! Every command writes its artifacts plus a `manifest.json` into `--out`.
//! Exit codes: 0 success, 1 numerical failure, 2 usage or configuration
//! error, 3 I/O or format error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use pfnn::checkpoint::Checkpoint;
use pfnn::fem::TaylorHoodSpace;
use pfnn::inverse::{self, HmcConfig, Posterior, SensorModel, SensorSpec};
use pfnn::mesh::{write_gmsh, Mesh, Rect};
use pfnn::nn::MlpParams;
use pfnn::precond::{spectral_check, Preconditioner, SPECTRAL_SIZE_LIMIT};
use pfnn::reference::{solve_ns_continuation, solve_stokes_with, NewtonOptions, ReferenceSolution};
use pfnn::train::{
    errors_to_csv, evaluate_errors, run_training_with, FlowProblem, MeshConfig, ProblemKind, TrainConfig,
};
use pfnn::{Error, Result};

#[derive(Parser)]
#[command(name = "pfnn", version, about = "Preconditioned FEM-based neural network surrogates for channel flow")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a structured mesh or validate a Gmsh file.
    Mesh(MeshCmd),
    /// Train a surrogate from a TOML configuration.
    Train(TrainCmd),
    /// Compare a trained network against reference solutions.
    Eval(EvalCmd),
    /// Compute reference solutions with the direct or Newton solver.
    Reference(ReferenceCmd),
    /// Eigenvalue check of the preconditioned Stokes operator.
    Spectral(SpectralCmd),
    /// Sample the angle-of-attack posterior with HMC.
    Invert(InvertCmd),
}

#[derive(Args, Clone)]
struct MeshArgs {
    /// Channel width.
    #[arg(long, default_value_t = 5.0)]
    width: f64,
    /// Channel height.
    #[arg(long, default_value_t = 5.0)]
    height: f64,
    /// Cells per unit length.
    #[arg(long = "res", default_value_t = 2)]
    resolution: usize,
    /// Obstacle `x0,y0,x1,y1`, or `none`.
    #[arg(long, default_value = "2,2,3,3")]
    obstacle: String,
    /// Read a Gmsh 2.2 ASCII file instead of generating.
    #[arg(long = "from")]
    from: Option<PathBuf>,
}

impl MeshArgs {
    fn obstacle(&self) -> Result<Option<[f64; 4]>> {
        if self.obstacle.eq_ignore_ascii_case("none") {
            return Ok(None);
        }
        let v: Vec<f64> = self
            .obstacle
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Config(format!("bad --obstacle {:?}: {e}", self.obstacle)))?;
        let arr: [f64; 4] = v
            .try_into()
            .map_err(|_| Error::Config("--obstacle needs four comma-separated numbers".into()))?;
        Ok(Some(arr))
    }

    fn config(&self) -> Result<MeshConfig> {
        Ok(MeshConfig {
            width: self.width,
            height: self.height,
            resolution: self.resolution,
            obstacle: self.obstacle()?,
            gmsh: self.from.clone(),
        })
    }
}

#[derive(Args)]
struct MeshCmd {
    #[command(flatten)]
    mesh: MeshArgs,
    /// Only validate the mesh; with `--from`, nothing is written.
    #[arg(long)]
    validate: bool,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainCmd {
    /// TOML training configuration.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Override `max_iterations` from the configuration.
    #[arg(long)]
    iterations: Option<usize>,
}

#[derive(Args)]
struct EvalCmd {
    /// Network checkpoint written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory with reference checkpoints written by `reference`.
    #[arg(long)]
    references: PathBuf,
    /// Comma-separated angles; defaults to every reference found.
    #[arg(long, value_delimiter = ',')]
    angles: Vec<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReferenceCmd {
    /// Training configuration supplying mesh, problem and viscosity.
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated angles; defaults to `lambda_train`.
    #[arg(long, value_delimiter = ',')]
    angles: Vec<f64>,
    /// Override the viscosity from the configuration.
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SpectralCmd {
    #[command(flatten)]
    mesh: MeshArgs,
    #[arg(long, default_value_t = 1.0)]
    eta: f64,
    /// Largest `N_u + N_p` accepted for the dense eigensolve.
    #[arg(long, default_value_t = SPECTRAL_SIZE_LIMIT)]
    limit: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InvertCmd {
    /// Network checkpoint written by `train` (preconditioned).
    #[arg(long)]
    checkpoint: PathBuf,
    /// CSV with columns `p1,p2`, one observation per row.
    #[arg(long, conflicts_with = "synthesize")]
    observations: Option<PathBuf>,
    /// Generate observations from the surrogate at `--true-lambda`.
    #[arg(long)]
    synthesize: bool,
    #[arg(long, default_value_t = 5.0)]
    true_lambda: f64,
    /// Number of synthetic observations.
    #[arg(long, default_value_t = 10)]
    count: usize,
    #[arg(long, default_value_t = inverse::DEFAULT_SIGMA)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    noise_seed: u64,
    #[arg(long, default_value_t = 1000)]
    warmup: usize,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    config: Value,
    git_describe: String,
    seed: Option<u64>,
    started_unix: f64,
    finished_unix: f64,
    outputs: Vec<String>,
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

/// Collects written files and emits the manifest at the end.
struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
    started: f64,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            files: Vec::new(),
            started: unix_now(),
        })
    }

    fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, contents)?;
        self.files.push(name.to_string());
        Ok(path)
    }

    fn write_json(&mut self, name: &str, v: &Value) -> Result<PathBuf> {
        let mut s = serde_json::to_string_pretty(v)?;
        s.push('\n');
        self.write(name, s)
    }

    fn save_checkpoint(&mut self, name: &str, ck: &Checkpoint) -> Result<PathBuf> {
        self.write(name, ck.to_bytes()?)
    }

    fn finish(mut self, command: &str, config: Value, seed: Option<u64>) -> Result<()> {
        self.files.push("manifest.json".into());
        let m = RunManifest {
            command: command.into(),
            config,
            git_describe: git_describe(),
            seed,
            started_unix: self.started,
            finished_unix: unix_now(),
            outputs: self.files.clone(),
        };
        let mut s = serde_json::to_string_pretty(&m)?;
        s.push('\n');
        fs::write(self.dir.join("manifest.json"), s)?;
        Ok(())
    }
}

fn read_config(path: &Path) -> Result<TrainConfig> {
    let text = fs::read_to_string(path)?;
    let cfg: TrainConfig =
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?;
    cfg.validate()?;
    Ok(cfg)
}

fn build_mesh(cfg: &MeshConfig) -> Result<Mesh> {
    let mesh = cfg.build()?;
    mesh.validate()?;
    Ok(mesh)
}

fn cmd_mesh(args: MeshCmd) -> Result<()> {
    let cfg = args.mesh.config()?;
    if cfg.gmsh.is_none() {
        cfg.domain().validate()?;
    }
    let mesh = build_mesh(&cfg)?;
    let summary = serde_json::to_value(mesh.summary())?;
    println!("{}", serde_json::to_string(&summary)?);
    let Some(out) = args.out else {
        if args.validate || cfg.gmsh.is_some() {
            return Ok(());
        }
        return Err(Error::Config("--out is required unless --validate is given".into()));
    };
    let mut o = Outputs::new(&out)?;
    if !(args.validate && cfg.gmsh.is_some()) {
        o.write("mesh.msh", write_gmsh(&mesh))?;
    }
    o.write_json("mesh_summary.json", &summary)?;
    o.finish("mesh", serde_json::to_value(&cfg)?, None)
}

fn network_checkpoint(params: &MlpParams, cfg: &TrainConfig) -> Result<Checkpoint> {
    params.to_checkpoint(json!({ "config": cfg }))
}

fn cmd_train(args: TrainCmd) -> Result<()> {
    let mut cfg = read_config(&args.config)?;
    if let Some(n) = args.iterations {
        cfg.max_iterations = n;
    }
    let mut o = Outputs::new(&args.out)?;
    let snapshot = cfg.clone();
    let (params, report) = run_training_with(&cfg, &mut |it, p| {
        let ck = network_checkpoint(p, &snapshot)?;
        o.save_checkpoint(&format!("checkpoint_{it:06}.ckpt"), &ck)?;
        Ok(())
    })?;
    o.save_checkpoint("network.ckpt", &network_checkpoint(&params, &cfg)?)?;
    o.write("loss.csv", report.to_csv())?;
    o.write_json("report.json", &serde_json::to_value(&report)?)?;
    println!(
        "{} iterations, final loss {:e} ({:?})",
        report.iterations(),
        report.loss.last().copied().unwrap_or(report.initial_loss),
        report.stop_reason
    );
    o.finish("train", serde_json::to_value(&cfg)?, Some(cfg.seed))
}

fn load_network(path: &Path) -> Result<(MlpParams, TrainConfig)> {
    let ck = Checkpoint::load(path)?;
    let (params, extra) = MlpParams::from_checkpoint(&ck)?;
    let cfg: TrainConfig = serde_json::from_value(extra["config"].clone())
        .map_err(|e| Error::Checkpoint(format!("checkpoint lacks a training configuration: {e}")))?;
    Ok((params, cfg))
}

fn load_references(dir: &Path) -> Result<Vec<ReferenceSolution>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "ckpt"))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        let ck = Checkpoint::load(&p)?;
        if ck.kind() == Some("reference") {
            out.push(ReferenceSolution::from_checkpoint(&ck)?);
        }
    }
    Ok(out)
}

fn cmd_eval(args: EvalCmd) -> Result<()> {
    let (params, cfg) = load_network(&args.checkpoint)?;
    let refs = load_references(&args.references)?;
    let angles = if args.angles.is_empty() {
        refs.iter().map(|r| r.lambda_deg).collect()
    } else {
        args.angles.clone()
    };
    if angles.is_empty() {
        return Err(Error::Config("no angles to evaluate and no references found".into()));
    }
    for &a in &angles {
        pfnn::reference::find_reference(&refs, a)?;
    }
    let problem = FlowProblem::from_config(&cfg)?;
    let rows = evaluate_errors(&problem, &params, cfg.preconditioned, &refs, &angles)?;
    let mut o = Outputs::new(&args.out)?;
    o.write("errors.csv", errors_to_csv(&rows))?;
    o.finish(
        "eval",
        json!({ "checkpoint": args.checkpoint, "references": args.references, "angles": angles, "train": cfg }),
        Some(cfg.seed),
    )
}

fn cmd_reference(args: ReferenceCmd) -> Result<()> {
    let mut cfg = read_config(&args.config)?;
    if let Some(eta) = args.eta {
        cfg.eta = eta;
        cfg.validate()?;
    }
    let angles = if args.angles.is_empty() {
        cfg.lambda_train.clone()
    } else {
        args.angles.clone()
    };
    if angles.iter().any(|a| !a.is_finite()) {
        return Err(Error::Config("angles must be finite".into()));
    }
    let space = TaylorHoodSpace::new(build_mesh(&cfg.mesh)?)?;
    let mut o = Outputs::new(&args.out)?;
    let mut summaries = Vec::new();
    match cfg.problem {
        ProblemKind::Stokes => {
            let problem = FlowProblem::new(ProblemKind::Stokes, space, cfg.eta, &angles)?;
            for s in &problem.samples {
                let sol = solve_stokes_with(&s.sys, &problem.pre)?;
                o.save_checkpoint(&reference_name(sol.lambda_deg), &sol.to_checkpoint()?)?;
                summaries.push(sol.summary());
            }
        }
        ProblemKind::NavierStokes => {
            let ct = pfnn::fem::assemble_convection(&space);
            for &a in &angles {
                let res = solve_ns_continuation(&space, &ct, cfg.eta, a, NewtonOptions::default())?;
                let mut s = res.solution.summary();
                s["continuation_stages"] = json!(res.stages);
                s["stage_iterations"] = json!(res.stage_iterations);
                o.save_checkpoint(&reference_name(a), &res.solution.to_checkpoint()?)?;
                summaries.push(s);
            }
        }
    }
    o.write_json("references.json", &Value::Array(summaries))?;
    o.finish("reference", json!({ "train": cfg, "angles": angles }), None)
}

fn reference_name(lambda: f64) -> String {
    format!("reference_{lambda:08.3}.ckpt")
}

fn cmd_spectral(args: SpectralCmd) -> Result<()> {
    let cfg = args.mesh.config()?;
    if cfg.gmsh.is_none() {
        cfg.domain().validate()?;
    }
    let space = TaylorHoodSpace::new(build_mesh(&cfg)?)?;
    let n = space.n_u() + space.n_p();
    if n > args.limit {
        return Err(Error::TooLarge { size: n, limit: args.limit });
    }
    let op = pfnn::fem::StokesOperator::assemble(&space, args.eta)?;
    let pre = Preconditioner::from_operator(&op)?;
    let report = spectral_check(&pre, args.limit)?;
    let mut o = Outputs::new(&args.out)?;
    o.write_json("spectral.json", &serde_json::to_value(&report)?)?;
    println!(
        "eigenvalues: {} (clusters {:?}), max distance {:e}, passed: {}",
        report.eigenvalues.len(),
        report.cluster_counts,
        report.max_distance,
        report.passed
    );
    o.finish("spectral", json!({ "mesh": cfg, "eta": args.eta }), None)?;
    if report.passed {
        Ok(())
    } else {
        Err(Error::Solver("spectral check failed".into()))
    }
}

fn read_observations(path: &Path) -> Result<Vec<[f64; 2]>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.chars().any(|c| c.is_ascii_alphabetic())) {
            continue;
        }
        let v: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                line: i + 1,
                message: format!("bad observation: {e}"),
            })?;
        let row: [f64; 2] = v.try_into().map_err(|_| Error::Parse {
            line: i + 1,
            message: "expected two columns".into(),
        })?;
        out.push(row);
    }
    Ok(out)
}

fn observations_csv(obs: &[[f64; 2]]) -> String {
    let mut s = String::from("p1,p2\n");
    for y in obs {
        s.push_str(&format!("{:e},{:e}\n", y[0], y[1]));
    }
    s
}

fn cmd_invert(args: InvertCmd) -> Result<()> {
    if args.observations.is_none() && !args.synthesize {
        return Err(Error::Config("give --observations FILE or --synthesize".into()));
    }
    if args.warmup == 0 || args.samples == 0 {
        return Err(Error::Config("--warmup and --samples must be positive".into()));
    }
    let (params, cfg) = load_network(&args.checkpoint)?;
    let mesh = build_mesh(&cfg.mesh)?;
    let obstacle = cfg
        .mesh
        .obstacle
        .map(|[a, b, c, d]| Rect::new(a, b, c, d))
        .ok_or_else(|| Error::Config("inversion needs a mesh with an obstacle for the sensors".into()))?;
    let space = TaylorHoodSpace::new(mesh)?;
    let pre = if cfg.preconditioned {
        let op = pfnn::fem::StokesOperator::assemble(&space, cfg.eta)?;
        Some(Arc::new(Preconditioner::from_operator(&op)?))
    } else {
        None
    };
    let sensors = SensorSpec::on_obstacle(&obstacle, args.sigma);
    let model = SensorModel::new(params, pre, &space, sensors)?;
    let observations = match &args.observations {
        Some(p) => read_observations(p)?,
        None => inverse::synthesize_observations(&model, args.true_lambda, args.count, args.sigma, args.noise_seed)?,
    };
    let posterior = Posterior::new(model, observations.clone())?;
    let hmc = HmcConfig {
        warmup: args.warmup,
        samples: args.samples,
        seed: args.seed,
        ..Default::default()
    };
    let run = inverse::invert(&posterior, &hmc)?;
    let mut o = Outputs::new(&args.out)?;
    o.write("observations.csv", observations_csv(&observations))?;
    let mut samples = String::from("index,lambda\n");
    for (i, x) in run.samples.iter().enumerate() {
        samples.push_str(&format!("{i},{x:e}\n"));
    }
    o.write("samples.csv", samples)?;
    let mut trace = String::from("iteration,step_size\n");
    for (i, e) in run.step_size_trace.iter().enumerate() {
        trace.push_str(&format!("{},{e:e}\n", i + 1));
    }
    o.write("step_sizes.csv", trace)?;
    let mut summary = run.summary();
    summary["sensors"] = serde_json::to_value(sensors)?;
    o.write_json("summary.json", &summary)?;
    println!("posterior mean {:.4} std {:.4} acceptance {:.3}", run.mean(), run.std(), run.acceptance_rate);
    o.finish(
        "invert",
        json!({
            "checkpoint": args.checkpoint,
            "observations": args.observations,
            "synthesize": args.synthesize,
            "true_lambda": args.true_lambda,
            "count": args.count,
            "sigma": args.sigma,
            "noise_seed": args.noise_seed,
            "hmc": hmc,
        }),
        Some(args.seed),
    )
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("PFNN_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| Error::Config(format!("PFNN_THREADS must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Mesh(a) => cmd_mesh(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Reference(a) => cmd_reference(a),
        Command::Spectral(a) => cmd_spectral(a),
        Command::Invert(a) => cmd_invert(a),
    }
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
