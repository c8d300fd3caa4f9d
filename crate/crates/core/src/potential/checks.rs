//! Sampled verification of a model's declared regularity constants.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{ParameterVector, PotentialModel};
use crate::linalg::{distance, dot, norm_sq, spectral_norm};
use crate::margin::{InequalityCheck, MarginTracker};

/// `n` seeded points with uniformly random direction and `|θ|` uniform on `[0, max_norm]`.
pub fn random_points(dim: usize, n: usize, max_norm: f64, seed: u64) -> Vec<ParameterVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = dim.max(1);
    (0..n)
        .map(|_| {
            let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = norm_sq(&v).sqrt();
            let radius = max_norm * rng.random::<f64>();
            if norm > 0.0 {
                v.iter_mut().for_each(|x| *x *= radius / norm);
            }
            ParameterVector::new(v).expect("finite by construction")
        })
        .collect()
}

/// One [`InequalityCheck`] per regularity property.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularityReport {
    pub checks: Vec<InequalityCheck>,
}

impl RegularityReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn get(&self, property: &str) -> Option<&InequalityCheck> {
        self.checks.iter().find(|c| c.property == property)
    }

    /// CSV with header `property,pass,worst_margin,witness_norm,n_points`.
    pub fn to_csv(&self) -> String {
        crate::margin::checks_to_csv(&self.checks)
    }
}

/// Checks dissipativity, Hessian and gradient growth at every point, and the
/// two local Lipschitz bounds on consecutive pairs plus `points.len()` random pairs.
pub fn check_regularity(
    model: &PotentialModel,
    points: &[ParameterVector],
    seed: u64,
) -> RegularityReport {
    let c = model.constants();
    let l = c.growth_degree as i32;
    let mut dissipative = MarginTracker::new("dissipativity");
    let mut hess_growth = MarginTracker::new("hessian_growth");
    let mut grad_growth = MarginTracker::new("gradient_growth");
    let mut grad_lip = MarginTracker::new("gradient_local_lipschitz");
    let mut hess_lip = MarginTracker::new("hessian_local_lipschitz");

    let grads: Vec<Vec<f64>> = points.iter().map(|p| model.gradient(p.as_slice())).collect();
    let hessians: Vec<_> = points.iter().map(|p| model.hessian(p.as_slice())).collect();

    for ((p, g), h) in points.iter().zip(&grads).zip(&hessians) {
        let r = p.norm();
        dissipative.record(dot(g, p.as_slice()), c.a * r * r - c.b, r);
        hess_growth.record(c.hessian_growth * (1.0 + r.powi(l)), spectral_norm(h), r);
        grad_growth.record(
            c.gradient_growth * (1.0 + r.powi(l + 1)),
            norm_sq(g).sqrt(),
            r,
        );
    }

    let n = points.len();
    let mut pairs: Vec<(usize, usize)> = (1..n).map(|i| (i - 1, i)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if n > 1 {
        pairs.extend((0..n).map(|_| crate::margin::distinct_pair(&mut rng, n)));
    }
    for (i, j) in pairs {
        let (p, q) = (points[i].as_slice(), points[j].as_slice());
        let (rp, rq) = (points[i].norm(), points[j].norm());
        let gap = distance(p, q);
        let base = 1.0 + rp + rq;
        grad_lip.record(
            c.hessian_growth * base.powi(l) * gap,
            distance(&grads[i], &grads[j]),
            rp.max(rq),
        );
        hess_lip.record(
            c.hessian_lipschitz * base.powi(l - 1) * gap,
            spectral_norm(&(&hessians[i] - &hessians[j])),
            rp.max(rq),
        );
    }

    RegularityReport {
        checks: vec![
            dissipative.finish(),
            hess_growth.finish(),
            grad_growth.finish(),
            grad_lip.finish(),
            hess_lip.finish(),
        ],
    }
}
