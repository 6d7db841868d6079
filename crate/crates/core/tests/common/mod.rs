//! Shared fixtures for integration tests.
#![allow(dead_code)]

pub mod dense;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tnc_core::dataset::{AmplitudeVector, Dataset};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn unit_vector(rng: &mut impl Rng, len: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    normalise(v)
}

pub fn normalise(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// `per_class` noisy copies of a random non-negative prototype per class.
pub fn clustered(qubits: usize, classes: usize, per_class: usize, noise: f64, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let dim = 1 << qubits;
    let protos: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..dim).map(|_| r.gen_range(0.0..1.0f64).powi(3)).collect())
        .collect();
    let mut items = Vec::new();
    for k in 0..per_class {
        for (label, p) in protos.iter().enumerate() {
            let _ = k;
            let v: Vec<f64> = p.iter().map(|x| (x + noise * r.gen_range(0.0..1.0)).max(0.0)).collect();
            items.push(AmplitudeVector::new(v, label).unwrap());
        }
    }
    Dataset::new(items, classes).unwrap()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
