//! The tamed drift
//!
//! ```text
//! h_λ(θ) = aθ + (h(θ) − aθ) / (1 + λ|θ|^{(l+1)/ε_h})^{ε_h}
//! ```
//!
//! its Jacobian, the admissible step cap `λ_max`, and sampled checks of the
//! growth, dissipativity, Lipschitz and approximation properties of `h_λ`.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{KtulaError, Result};
use crate::linalg::{distance, dot, norm_sq, spectral_norm};
use crate::margin::{InequalityCheck, MarginTracker};
use crate::potential::{ParameterVector, PotentialModel, RegularityConstants};

/// Number of random pairs added to the consecutive pairs in Lipschitz checks.
pub const RANDOM_PAIRS: usize = 100;

/// `(λ, ε_h, a, l)` of the taming map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TamingParams {
    pub step: f64,
    pub exponent: f64,
    pub a: f64,
    pub l: u32,
}

pub(crate) fn check_exponent(eps_h: f64) -> Result<()> {
    if !(eps_h > 0.0 && eps_h <= 0.5) {
        return Err(KtulaError::InvalidParameter(format!(
            "taming exponent eps_h must lie in (0, 1/2], got {eps_h}"
        )));
    }
    Ok(())
}

impl TamingParams {
    pub fn new(step: f64, exponent: f64, a: f64, l: u32) -> Result<Self> {
        if !(step.is_finite() && step > 0.0) {
            return Err(KtulaError::InvalidParameter(format!(
                "step size must be > 0, got {step}"
            )));
        }
        check_exponent(exponent)?;
        if !(a.is_finite() && a > 0.0) {
            return Err(KtulaError::InvalidParameter(format!("a must be > 0, got {a}")));
        }
        if l < 1 {
            return Err(KtulaError::InvalidParameter("l must be >= 1".into()));
        }
        Ok(Self {
            step,
            exponent,
            a,
            l,
        })
    }

    /// Parameters sharing `a` and `l` with the model's constants.
    pub fn for_model(model: &PotentialModel, step: f64, exponent: f64) -> Result<Self> {
        let c = model.constants();
        Self::new(step, exponent, c.a, c.growth_degree)
    }

    /// The power `(l+1)/ε_h` applied to `|θ|`.
    pub fn power(&self) -> f64 {
        (self.l as f64 + 1.0) / self.exponent
    }

    fn check_model(&self, model: &PotentialModel) -> Result<()> {
        let c = model.constants();
        if self.a != c.a || self.l != c.growth_degree {
            return Err(KtulaError::Configuration(format!(
                "taming uses (a, l) = ({}, {}) but the model declares ({}, {})",
                self.a, self.l, c.a, c.growth_degree
            )));
        }
        Ok(())
    }
}

/// Precomputed pieces of the taming factor for the hot loop.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Tamer {
    step: f64,
    a: f64,
    exponent: f64,
    half_power: f64,
    /// `(l+1)/(2ε_h)` when it is a small integer.
    int_half_power: Option<i32>,
}

impl Tamer {
    pub(crate) fn new(tp: &TamingParams) -> Self {
        let half_power = tp.power() / 2.0;
        let rounded = half_power.round();
        let int_half_power = ((half_power - rounded).abs() < 1e-12 && rounded <= 64.0)
            .then_some(rounded as i32);
        Self {
            step: tp.step,
            a: tp.a,
            exponent: tp.exponent,
            half_power,
            int_half_power,
        }
    }

    /// `|θ|^{(l+1)/ε_h}` from `|θ|²`; zero at the origin.
    #[inline]
    pub(crate) fn norm_power(&self, r2: f64) -> f64 {
        if r2 == 0.0 {
            return 0.0;
        }
        match self.int_half_power {
            Some(k) => r2.powi(k),
            None => (self.half_power * r2.ln()).exp(),
        }
    }

    /// `(1 + λ|θ|^{(l+1)/ε_h})^{ε_h}`.
    #[inline]
    pub(crate) fn denominator(&self, r2: f64) -> f64 {
        let base = 1.0 + self.step * self.norm_power(r2);
        if self.exponent == 0.5 {
            base.sqrt()
        } else {
            base.powf(self.exponent)
        }
    }

    /// Overwrites `h` (holding `h(θ)`) with `h_λ(θ)`.
    #[inline]
    pub(crate) fn tame_in_place(&self, theta: &[f64], h: &mut [f64]) {
        let inv = 1.0 / self.denominator(norm_sq(theta));
        for (hi, t) in h.iter_mut().zip(theta) {
            let at = self.a * t;
            *hi = at + (*hi - at) * inv;
        }
    }
}

/// `h_λ(θ)` without dimension checks; writes into `out`.
pub fn tamed_drift_into(model: &PotentialModel, tp: &TamingParams, theta: &[f64], out: &mut [f64]) {
    model.gradient_into(theta, out);
    Tamer::new(tp).tame_in_place(theta, out);
}

fn check_point(model: &PotentialModel, theta: &ParameterVector) -> Result<()> {
    if theta.dim() != model.dim() {
        return Err(KtulaError::DimensionMismatch {
            expected: model.dim(),
            got: theta.dim(),
        });
    }
    Ok(())
}

/// Tamed drift `h_λ(θ)`.
pub fn tamed_drift(
    model: &PotentialModel,
    tp: &TamingParams,
    theta: &ParameterVector,
) -> Result<Vec<f64>> {
    tp.check_model(model)?;
    check_point(model, theta)?;
    let mut out = vec![0.0; theta.dim()];
    tamed_drift_into(model, tp, theta.as_slice(), &mut out);
    if out.iter().any(|x| !x.is_finite()) {
        return Err(KtulaError::Overflow {
            evaluator: "h_lambda",
        });
    }
    Ok(out)
}

fn jacobian_unchecked(model: &PotentialModel, tp: &TamingParams, theta: &[f64]) -> DMatrix<f64> {
    let d = theta.len();
    let tamer = Tamer::new(tp);
    let a = tp.a;
    let r2 = norm_sq(theta);
    let rk = tamer.norm_power(r2);
    let base = 1.0 + tp.step * rk;
    let h = model.gradient(theta);
    let mut jac = model.hessian(theta);
    for i in 0..d {
        jac[(i, i)] -= a;
    }
    jac *= base;
    // |θ|^{k−2} with k ≥ 4, so the term vanishes at the origin.
    let rk2 = if r2 == 0.0 { 0.0 } else { rk / r2 };
    let coeff = tp.step * (tp.l as f64 + 1.0) * rk2;
    if coeff != 0.0 {
        for i in 0..d {
            let row = coeff * (h[i] - a * theta[i]);
            for j in 0..d {
                jac[(i, j)] -= row * theta[j];
            }
        }
    }
    jac /= base.powf(1.0 + tp.exponent);
    for i in 0..d {
        jac[(i, i)] += a;
    }
    jac
}

/// Jacobian `∇h_λ(θ)`:
///
/// ```text
/// aI + [(1+λ|θ|^k)(H − aI) − λ(l+1)|θ|^{k−2}(hθᵀ − aθθᵀ)] / (1+λ|θ|^k)^{1+ε_h},   k = (l+1)/ε_h
/// ```
pub fn tamed_drift_jacobian(
    model: &PotentialModel,
    tp: &TamingParams,
    theta: &ParameterVector,
) -> Result<DMatrix<f64>> {
    tp.check_model(model)?;
    check_point(model, theta)?;
    let jac = jacobian_unchecked(model, tp, theta.as_slice());
    if jac.iter().any(|x| !x.is_finite()) {
        return Err(KtulaError::Overflow {
            evaluator: "grad_h_lambda",
        });
    }
    Ok(jac)
}

/// `λ_max` together with `L₀`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepCap {
    pub l0: f64,
    pub lambda_max: f64,
}

/// `L₀ = 2a + 4K_H + (l+1)(2K_h + a)`.
pub fn l0(rc: &RegularityConstants) -> f64 {
    2.0 * rc.a + 4.0 * rc.hessian_growth + (rc.growth_degree as f64 + 1.0) * (2.0 * rc.gradient_growth + rc.a)
}

/// `min{1, 1/(8a), (1/(6L₀))^{1/(1−ε_h)}}` for raw `a` and `L₀`.
pub fn lambda_max_from(a: f64, l0: f64, eps_h: f64) -> Result<f64> {
    check_exponent(eps_h)?;
    let third = (1.0 / (6.0 * l0)).powf(1.0 / (1.0 - eps_h));
    Ok(1f64.min(1.0 / (8.0 * a)).min(third))
}

/// Step cap `λ_max` for the given constants.
pub fn lambda_max(rc: &RegularityConstants, eps_h: f64) -> Result<StepCap> {
    let l0 = l0(rc);
    Ok(StepCap {
        l0,
        lambda_max: lambda_max_from(rc.a, l0, eps_h)?,
    })
}

/// `L_∇ = (10√2 + 4/ε_h)(l+1)² max{K_H, L, K_h, a}`.
pub fn l_nabla(rc: &RegularityConstants, eps_h: f64) -> f64 {
    let l1 = rc.growth_degree as f64 + 1.0;
    let m = rc
        .hessian_growth
        .max(rc.hessian_lipschitz)
        .max(rc.gradient_growth)
        .max(rc.a);
    (10.0 * 2f64.sqrt() + 4.0 / eps_h) * l1 * l1 * m
}

/// Per-property results of [`verify_taming_properties`].
#[derive(Debug, Clone, PartialEq)]
pub struct TamingReport {
    pub checks: Vec<InequalityCheck>,
}

impl TamingReport {
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

/// Evaluates the taming inequalities on `points`:
///
/// * `dissipativity`: `⟨h_λ(θ),θ⟩ ≥ a|θ|² − b`
/// * `linear_growth`: `|h_λ(θ)| ≤ 2a|θ| + 2K_h λ^{−1/2}`
/// * `polynomial_growth`: `|h_λ(θ)| ≤ (2a + K_h)(1 + |θ|^{l+1})`
/// * `lipschitz`: `|h_λ(θ) − h_λ(θ̄)| ≤ L₀ λ^{−ε_h}|θ − θ̄|`
/// * `jacobian_lipschitz`: `‖∇h_λ(θ) − ∇h_λ(θ̄)‖ ≤ L_∇(1+|θ|+|θ̄|)^{(l+1)(1/ε_h+1)−2}|θ − θ̄|`
/// * `approximation`: `|h(θ) − h_λ(θ)|² ≤ 4λ²(K_h + a)²(1 + |θ|^{2(l+1)(1+1/ε_h)})`
///
/// Pair properties use all consecutive pairs plus [`RANDOM_PAIRS`] pairs drawn from `seed`.
pub fn verify_taming_properties(
    model: &PotentialModel,
    tp: &TamingParams,
    points: &[ParameterVector],
    seed: u64,
) -> Result<TamingReport> {
    tp.check_model(model)?;
    if tp.step >= 1.0 {
        return Err(KtulaError::HypothesisViolation(format!(
            "taming properties need 0 < lambda < 1, got {}",
            tp.step
        )));
    }
    if points.is_empty() {
        return Err(KtulaError::InvalidParameter("no points to check".into()));
    }
    for p in points {
        check_point(model, p)?;
    }
    let c = model.constants();
    let (a, b, kh) = (c.a, c.b, c.gradient_growth);
    let l1 = c.growth_degree as f64 + 1.0;
    let lam = tp.step;
    let eps_h = tp.exponent;
    let cap = lambda_max(c, eps_h)?;
    let lip = cap.l0 * lam.powf(-eps_h);
    let lnab = l_nabla(c, eps_h);
    let jac_power = l1 * (1.0 / eps_h + 1.0) - 2.0;
    let approx_power = 2.0 * l1 * (1.0 + 1.0 / eps_h);

    let mut dissipative = MarginTracker::new("dissipativity");
    let mut linear = MarginTracker::new("linear_growth");
    let mut poly = MarginTracker::new("polynomial_growth");
    let mut lipschitz = MarginTracker::new("lipschitz");
    let mut jac_lip = MarginTracker::new("jacobian_lipschitz");
    let mut approx = MarginTracker::new("approximation");

    let tamer = Tamer::new(tp);
    let mut drifts = Vec::with_capacity(points.len());
    for p in points {
        let theta = p.as_slice();
        let r = p.norm();
        let h = model.gradient(theta);
        let mut hl = h.clone();
        tamer.tame_in_place(theta, &mut hl);
        let hl_norm = norm_sq(&hl).sqrt();
        dissipative.record(dot(&hl, theta), a * r * r - b, r);
        linear.record(2.0 * a * r + 2.0 * kh / lam.sqrt(), hl_norm, r);
        poly.record((2.0 * a + kh) * (1.0 + r.powf(l1)), hl_norm, r);
        let gap2: f64 = h.iter().zip(&hl).map(|(x, y)| (x - y) * (x - y)).sum();
        let bound = 4.0 * lam * lam * (kh + a) * (kh + a) * (1.0 + r.powf(approx_power));
        approx.record(bound, gap2, r);
        drifts.push(hl);
    }

    let n = points.len();
    let mut pairs: Vec<(usize, usize)> = (1..n).map(|i| (i - 1, i)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if n > 1 {
        pairs.extend((0..RANDOM_PAIRS).map(|_| crate::margin::distinct_pair(&mut rng, n)));
    }
    for (i, j) in pairs {
        let (p, q) = (points[i].as_slice(), points[j].as_slice());
        let (rp, rq) = (points[i].norm(), points[j].norm());
        let gap = distance(p, q);
        lipschitz.record(lip * gap, distance(&drifts[i], &drifts[j]), rp.max(rq));
        let diff = jacobian_unchecked(model, tp, p) - jacobian_unchecked(model, tp, q);
        jac_lip.record(
            lnab * (1.0 + rp + rq).powf(jac_power) * gap,
            spectral_norm(&diff),
            rp.max(rq),
        );
    }

    Ok(TamingReport {
        checks: vec![
            dissipative.finish(),
            linear.finish(),
            poly.finish(),
            lipschitz.finish(),
            jac_lip.finish(),
            approx.finish(),
        ],
    })
}
