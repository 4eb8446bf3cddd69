#![allow(dead_code)]

pub mod fd;
pub mod hmc;
pub mod oracles;
pub mod props;

use pfnn::fem::TaylorHoodSpace;
use pfnn::mesh::{generate_structured, DomainSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// 5x5 channel, unit square obstacle at [2,3]^2, two cells per unit.
pub fn desk_space() -> TaylorHoodSpace {
    space_with_resolution(2)
}

pub fn space_with_resolution(res: usize) -> TaylorHoodSpace {
    let spec = DomainSpec {
        resolution: res,
        ..DomainSpec::default()
    };
    TaylorHoodSpace::new(generate_structured(&spec).unwrap()).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.gen_range(-1.0..1.0)).collect()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(f64::MIN_POSITIVE)
}
