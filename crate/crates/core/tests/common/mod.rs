//! Independent oracles shared by the integration and acceptance suites.
#![allow(dead_code)]

use std::f64::consts::TAU;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// O(N^2) DFT of a real sequence, one-sided.
pub fn naive_dft(x: &[f64], n_fft: usize) -> Vec<Complex64> {
    (0..=n_fft / 2)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(n, &v)| {
                    let angle = -TAU * (k * n) as f64 / n_fft as f64;
                    Complex64::new(v * angle.cos(), v * angle.sin())
                })
                .sum()
        })
        .collect()
}

/// Symmetric Hamming window computed from its textbook formula.
pub fn hamming(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.54 - 0.46 * (TAU * n as f64 / (len - 1) as f64).cos())
        .collect()
}

pub fn random_signal(n: usize, amplitude: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-amplitude..amplitude)).collect()
}

/// Brute-force nearest neighbour by cosine, ties to the smallest id.
pub fn brute_force_nearest(enrolled: &[(String, Vec<f64>)], test: &[f64]) -> String {
    let cos = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    };
    let mut sorted: Vec<&(String, Vec<f64>)> = enrolled.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    let mut best: Option<(&str, f64)> = None;
    for (id, v) in sorted {
        let s = cos(v, test);
        match best {
            Some((_, b)) if s <= b => {}
            _ => best = Some((id, s)),
        }
    }
    best.expect("non-empty").0.to_string()
}
