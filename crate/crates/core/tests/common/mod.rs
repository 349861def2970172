#![allow(dead_code)]

use kiw_core::fields::{binomial, catalog_field, FieldJet};
use rand::Rng;

fn quadratic_block<R: Rng>(rng: &mut R, n: usize, scale: f64) -> Vec<f64> {
    let p = 1 + n + n * (n + 1) / 2;
    (0..p).map(|_| scale * rng.gen_range(-1.0..1.0)).collect()
}

fn fourier_block<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let mut b = vec![rng.gen_range(-1.0..1.0)];
    b.extend((0..n).map(|_| rng.gen_range(-2i32..=2) as f64));
    b.push(rng.gen_range(0.0..6.0));
    b
}

/// A random analytic catalog k-form (`k = 0` gives a scalar).
pub fn random_form<R: Rng>(rng: &mut R, n: usize, k: usize) -> FieldJet {
    let c = binomial(n, k);
    let choice = rng.gen_range(0..3);
    if k == 0 {
        return match choice {
            0 => catalog_field("quadratic_scalar", &quadratic_block(rng, n, 1.0), n),
            1 => catalog_field("gaussian_bump", &[rng.gen_range(0.7..1.5)], n),
            _ => catalog_field("fourier_scalar", &fourier_block(rng, n), n),
        }
        .unwrap();
    }
    let mut p = vec![k as f64];
    match choice {
        0 => {
            for _ in 0..c {
                p.extend(quadratic_block(rng, n, 1.0));
            }
            catalog_field("quadratic_form", &p, n)
        }
        1 => {
            p.push(rng.gen_range(0.7..1.5));
            p.extend((0..c).map(|_| rng.gen_range(-1.0..1.0)));
            catalog_field("gaussian_form", &p, n)
        }
        _ => {
            for _ in 0..c {
                p.extend(fourier_block(rng, n));
            }
            catalog_field("fourier_form", &p, n)
        }
    }
    .unwrap()
}

/// A random analytic catalog vector field of moderate size.
pub fn random_vector<R: Rng>(rng: &mut R, n: usize) -> FieldJet {
    match rng.gen_range(0..4) {
        0 => {
            let p: Vec<f64> = (0..n).flat_map(|_| quadratic_block(rng, n, 0.5)).collect();
            catalog_field("quadratic_vector", &p, n)
        }
        1 => {
            let p: Vec<f64> = (0..n).flat_map(|_| fourier_block(rng, n)).collect();
            catalog_field("fourier_vector", &p, n)
        }
        2 => {
            let mut p = vec![rng.gen_range(0.7..1.5)];
            p.extend((0..n).map(|_| rng.gen_range(-1.0..1.0)));
            catalog_field("gaussian_vector", &p, n)
        }
        _ => {
            let p: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            catalog_field("linear_vector", &p, n)
        }
    }
    .unwrap()
}

pub fn random_point<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}
