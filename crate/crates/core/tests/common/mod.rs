#![allow(dead_code)]

pub mod oracles;

use covproto_core::{FeatureVector, PrototypeBank, SymMatrix};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

pub fn normal_vec(rng: &mut StdRng, d: usize, scale: f64) -> Vec<f64> {
    (0..d)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

pub fn feature(rng: &mut StdRng, d: usize, scale: f64) -> FeatureVector {
    FeatureVector::new(normal_vec(rng, d, scale))
}

/// A Aᵀ / d + 0.1 I for Gaussian A: well conditioned but not diagonal.
pub fn random_spd(rng: &mut StdRng, d: usize) -> Vec<Vec<f64>> {
    let a: Vec<Vec<f64>> = (0..d).map(|_| normal_vec(rng, d, 1.0)).collect();
    (0..d)
        .map(|i| {
            (0..d)
                .map(|j| {
                    let s: f64 = (0..d).map(|k| a[i][k] * a[j][k]).sum::<f64>() / d as f64;
                    s + if i == j { 0.1 } else { 0.0 }
                })
                .collect()
        })
        .collect()
}

/// Rescales to unit diagonal.
pub fn unit_diagonal(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = m.len();
    (0..d)
        .map(|i| {
            (0..d)
                .map(|j| m[i][j] / (m[i][i] * m[j][j]).sqrt())
                .collect()
        })
        .collect()
}

pub fn rows(m: &SymMatrix) -> Vec<Vec<f64>> {
    (0..m.dim()).map(|i| m.row(i).to_vec()).collect()
}

pub fn sym(rows: &[Vec<f64>]) -> SymMatrix {
    SymMatrix::from_rows(rows).unwrap()
}

pub fn random_bank(rng: &mut StdRng, classes: usize, heads: usize, d: usize) -> PrototypeBank {
    let protos = (0..classes)
        .map(|_| (0..heads).map(|_| feature(rng, d, 1.0)).collect())
        .collect();
    PrototypeBank::new(protos).unwrap()
}

pub fn bank_rows(bank: &PrototypeBank) -> Vec<Vec<Vec<f64>>> {
    (0..bank.class_count())
        .map(|c| {
            (0..bank.heads())
                .map(|m| bank.get(c, m).as_slice().to_vec())
                .collect()
        })
        .collect()
}

/// Bank from a flat class-major parameter vector.
pub fn bank_from_flat(flat: &[f64], classes: usize, heads: usize, d: usize) -> PrototypeBank {
    let protos = (0..classes)
        .map(|c| {
            (0..heads)
                .map(|m| {
                    let start = (c * heads + m) * d;
                    FeatureVector::new(flat[start..start + d].to_vec())
                })
                .collect()
        })
        .collect();
    PrototypeBank::new(protos).unwrap()
}

pub fn flatten(vs: &[Vec<f64>]) -> Vec<f64> {
    vs.iter().flatten().copied().collect()
}
