//! Property checks shared by the proptest suite and the acceptance run.

use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

use pfnn::checkpoint::Checkpoint;
use pfnn::fem::{StokesOperator, TaylorHoodSpace};
use pfnn::inverse::{run_hmc, HmcConfig, StandardNormalDensity};
use pfnn::mesh::{generate_structured, DomainSpec, Rect};
use pfnn::nn::{init_xavier_scaled, InputMap, MlpParams};
use pfnn::train::{equidistant_angles, loss, run_training, FlowProblem, MeshConfig, ProblemKind, TrainConfig};

use super::oracles::{convection_defect, preconditioned_loss_via_physical};

/// Small channels with an optional interior obstacle.
pub fn domains() -> impl Strategy<Value = DomainSpec> {
    (2usize..=4, 2usize..=4, 1usize..=2, any::<bool>(), 0.0f64..1.0, 0.0f64..1.0).prop_map(
        |(w, h, res, with_obstacle, sx, sy)| {
            let (w, h) = (w as f64, h as f64);
            let obstacle = with_obstacle.then(|| {
                let x0 = 0.6 + sx * (w - 2.2);
                let y0 = 0.6 + sy * (h - 2.2);
                Rect::new(x0, y0, x0 + 1.0, y0 + 1.0)
            });
            DomainSpec {
                width: w,
                height: h,
                obstacle,
                resolution: res,
            }
        },
    )
}

fn space(spec: &DomainSpec) -> Result<TaylorHoodSpace, TestCaseError> {
    let mesh = generate_structured(spec).map_err(|e| TestCaseError::reject(e.to_string()))?;
    TaylorHoodSpace::new(mesh).map_err(|e| TestCaseError::reject(e.to_string()))
}

pub fn two_path_loss(spec: &DomainSpec, navier_stokes: bool, seed: u64) -> Result<(), TestCaseError> {
    let kind = if navier_stokes { ProblemKind::NavierStokes } else { ProblemKind::Stokes };
    let problem = FlowProblem::new(kind, space(spec)?, 0.7, &[2.0, 19.0, 44.0]).unwrap();
    let mut p = init_xavier_scaled(&[1, 4, problem.n_out()], seed).unwrap();
    p.input_map = vec![InputMap::to_unit_interval(1.0, 45.0)];
    let a = loss(&problem, &p, true).unwrap();
    let b = preconditioned_loss_via_physical(&problem, &p);
    prop_assert!((a - b).abs() <= 1e-12 * a.abs(), "{a} vs {b}");
    Ok(())
}

pub fn convection_matches_dense(spec: &DomainSpec) -> Result<(), TestCaseError> {
    let d = convection_defect(&space(spec)?);
    prop_assert!(d <= 1e-12, "defect {d:e}");
    Ok(())
}

pub fn stiffness_symmetric(spec: &DomainSpec, eta: f64) -> Result<(), TestCaseError> {
    let op = StokesOperator::assemble(&space(spec)?, eta).unwrap();
    let d = op.symmetry_defect();
    prop_assert!(d <= 1e-12, "defect {d:e}");
    Ok(())
}

/// Networks with arbitrary bit patterns survive a checkpoint round trip.
pub fn checkpoint_bit_exact(arch: &[usize], seed: u64, bits: &[u64]) -> Result<(), TestCaseError> {
    let mut p = init_xavier_scaled(arch, seed).unwrap();
    p.input_map = vec![InputMap { shift: 3.25, scale: 1.0 / 3.0 }];
    let theta: Vec<f64> = (0..p.num_params()).map(|i| f64::from_bits(bits[i % bits.len()] ^ i as u64)).collect();
    p.set_flat(&theta).unwrap();
    let extra = serde_json::json!({"note": "round trip"});
    let ck = p.to_checkpoint(extra.clone()).unwrap();
    let bytes = ck.to_bytes().unwrap();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    prop_assert_eq!(back.to_bytes().unwrap(), bytes);
    let (q, e) = MlpParams::from_checkpoint(&back).unwrap();
    let qb: Vec<u64> = q.flatten().iter().map(|v| v.to_bits()).collect();
    let pb: Vec<u64> = theta.iter().map(|v| v.to_bits()).collect();
    prop_assert_eq!(qb, pb);
    prop_assert_eq!(q.arch(), p.arch());
    prop_assert_eq!(q.input_map, p.input_map);
    prop_assert_eq!(q.seed, seed);
    prop_assert_eq!(e, extra);
    Ok(())
}

pub fn init_deterministic(arch: &[usize], seed: u64) -> Result<(), TestCaseError> {
    let a = init_xavier_scaled(arch, seed).unwrap();
    let b = init_xavier_scaled(arch, seed).unwrap();
    let c = init_xavier_scaled(arch, seed.wrapping_add(1)).unwrap();
    let bits = |p: &MlpParams| p.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    prop_assert_eq!(bits(&a), bits(&b));
    prop_assert_ne!(bits(&a), bits(&c));
    Ok(())
}

pub fn hmc_deterministic(seed: u64, init: f64) -> Result<(), TestCaseError> {
    let cfg = HmcConfig {
        warmup: 50,
        samples: 50,
        seed,
        ..Default::default()
    };
    let a = run_hmc(&StandardNormalDensity, &cfg, init).unwrap();
    let b = run_hmc(&StandardNormalDensity, &cfg, init).unwrap();
    prop_assert_eq!(a, b);
    Ok(())
}

/// Two identical training runs give byte-identical loss traces and weights.
pub fn training_deterministic(seed: u64) -> Result<(), TestCaseError> {
    let cfg = TrainConfig {
        problem: ProblemKind::NavierStokes,
        eta: 1.0,
        lambda_train: equidistant_angles(2),
        preconditioned: true,
        max_iterations: 8,
        seed,
        hidden_layers: vec![4],
        checkpoint_every: 0,
        mesh: MeshConfig {
            resolution: 1,
            ..MeshConfig::default()
        },
    };
    let (p1, r1) = run_training(&cfg).unwrap();
    let (p2, r2) = run_training(&cfg).unwrap();
    prop_assert_eq!(r1.to_csv_without_timing(), r2.to_csv_without_timing());
    let bits = |p: &MlpParams| p.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    prop_assert_eq!(bits(&p1), bits(&p2));
    Ok(())
}

pub fn architectures() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..6, 0..3).prop_flat_map(|hidden| {
        (1usize..8).prop_map(move |out| {
            let mut arch = vec![1];
            arch.extend(&hidden);
            arch.push(out);
            arch
        })
    })
}
