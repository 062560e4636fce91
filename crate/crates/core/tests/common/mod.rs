#![allow(dead_code)]

use dualmatch::instances::{generate_path, make_synthetic_multi, ArrivalGenerator, RewardSpec};
use dualmatch::{Grid, Instance, SamplePath};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A valid synthetic instance with `m` affiliates and random parameters.
pub fn random_instance(rng: &mut impl Rng, m: usize, horizon: usize) -> Instance {
    let rho: Vec<f64> = (0..m).map(|_| rng.random_range(0.15..0.6)).collect();
    let budget = 0.9 / m as f64;
    let tied: Vec<f64> = rho.iter().map(|r| rng.random_range(0.0..0.8) * r.min(budget)).collect();
    let low: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..0.5)).collect();
    let high: Vec<f64> = low.iter().map(|l| rng.random_range(*l..1.0)).collect();
    let epsilon = rng.random_range(0.0..0.3);
    let alpha = rng.random_range(0.5..4.0);
    let gamma = rng.random_range(0.0..6.0);
    make_synthetic_multi(m, horizon, &tied, RewardSpec::Uniform { low, high }, &rho, epsilon)
        .expect("valid synthetic instance")
        .with_penalties(alpha, gamma)
}

pub fn path_for(instance: &Instance, seed: u64, path: u64) -> SamplePath {
    let generator = ArrivalGenerator::from_instance(instance).expect("generator");
    generate_path(instance, &generator, seed, path).expect("path")
}

pub fn column_services(values: &[f64]) -> Vec<Grid> {
    values.iter().map(|&s| Grid::column(&[s])).collect()
}
