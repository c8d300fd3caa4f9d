//! Small dense helpers shared by the potential and taming modules.

use nalgebra::{DMatrix, DVector};

const POWER_ITERATIONS: usize = 50;
const POWER_TOLERANCE: f64 = 1e-9;

/// Spectral norm estimate by power iteration on `MᵀM`.
///
/// Runs at most 50 iterations and stops early once the relative change of
/// the estimate drops below 1e-9. Works for non-symmetric matrices.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    let n = m.ncols();
    if n == 0 {
        return 0.0;
    }
    if n == 1 && m.nrows() == 1 {
        return m[(0, 0)].abs();
    }
    let gram = m.transpose() * m;
    // Generic start vector; a fixed choice keeps the estimate deterministic.
    let mut v = DVector::from_fn(n, |i, _| 1.0 + 0.5 / (i as f64 + 1.0));
    v /= v.norm();
    let mut estimate = 0.0_f64;
    for _ in 0..POWER_ITERATIONS {
        let w = &gram * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = norm.sqrt();
        v = w / norm;
        if (next - estimate).abs() <= POWER_TOLERANCE * next.max(1e-300) {
            estimate = next;
            break;
        }
        estimate = next;
    }
    estimate
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm_sq(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
