//! Analytic constants of the kTULA error bounds and the step-size, iteration
//! and inverse-temperature prescriptions derived from them.
//!
//! Several constants contain factors such as `2^{6((l+1)/ε_h+l)+8}` or
//! `c_p` with `p` in the hundreds, so every constant is carried as its natural
//! logarithm. [`Quantity::value`] is `exp(ln)` and may be `inf`; prescriptions
//! are computed from the logarithms and stay meaningful either way.

use std::collections::BTreeMap;

use crate::error::{KtulaError, Result};
use crate::format::fmt_f64;
use crate::linalg::spectral_norm;
use crate::potential::{PotentialModel, RegularityConstants};
use crate::sampler::InitialLaw;
use crate::taming::{check_exponent, l0, l_nabla, lambda_max};

pub const DEFAULT_EPSILON: f64 = 0.1;
pub const DEFAULT_C_LS: f64 = 1.0;

/// Source of `E|θ₀|^k` for even `k`.
#[derive(Debug, Clone, PartialEq)]
pub enum MomentOracle {
    /// Known law of `θ₀`.
    Law(InitialLaw),
    /// Explicit values keyed by the exponent `k`.
    Table(BTreeMap<u32, f64>),
}

impl MomentOracle {
    /// `ln E|θ₀|^k` for even `k ≥ 2`.
    pub fn ln_moment(&self, dim: usize, order: u32) -> Result<f64> {
        let p = order / 2;
        match self {
            MomentOracle::Law(InitialLaw::Constant(c)) => {
                let r2: f64 = c.iter().map(|x| x * x).sum();
                Ok(if r2 == 0.0 { f64::NEG_INFINITY } else { p as f64 * r2.ln() })
            }
            MomentOracle::Law(InitialLaw::Gaussian { sigma }) => {
                let d = dim as f64;
                let ln_prod: f64 = (0..p).map(|k| (d + 2.0 * k as f64).ln()).sum();
                Ok(if *sigma == 0.0 {
                    f64::NEG_INFINITY
                } else {
                    ln_prod + order as f64 * sigma.ln()
                })
            }
            MomentOracle::Table(t) => t
                .get(&order)
                .map(|v| v.ln())
                .ok_or(KtulaError::MissingMoment { order }),
        }
    }

    /// `E|θ₀|^k` computed directly (exact for small orders).
    pub fn moment(&self, dim: usize, order: u32) -> Result<f64> {
        match self {
            MomentOracle::Law(law) => Ok(law.even_moment(dim, order / 2)),
            MomentOracle::Table(t) => t.get(&order).copied().ok_or(KtulaError::MissingMoment { order }),
        }
    }
}

/// Everything the constants depend on.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundInputs {
    pub rc: RegularityConstants,
    pub dim: usize,
    pub beta: f64,
    pub epsilon_h: f64,
    pub epsilon: f64,
    pub c_ls: f64,
    pub init: MomentOracle,
    /// Fisher information of the initial law.
    pub j0: f64,
    /// `KL(π₀ ‖ π_β)`; needed for `C₃` and the prescriptions.
    pub kl0: Option<f64>,
    /// Spectral norm of `H(0)`, which equals `‖∇h_λ(0)‖`.
    pub hessian_norm_at_origin: f64,
}

impl BoundInputs {
    /// Inputs for `model` with default `ε`, `C_LS`, no `KL₀`, and `J₀ = d/σ²` for
    /// a Gaussian initial law (infinite for a point mass).
    pub fn for_model(model: &PotentialModel, beta: f64, epsilon_h: f64, init: InitialLaw) -> Self {
        let dim = model.dim();
        let j0 = match &init {
            InitialLaw::Gaussian { sigma } => dim as f64 / (sigma * sigma),
            InitialLaw::Constant(_) => f64::INFINITY,
        };
        Self {
            rc: *model.constants(),
            dim,
            beta,
            epsilon_h,
            epsilon: DEFAULT_EPSILON,
            c_ls: DEFAULT_C_LS,
            init: MomentOracle::Law(init),
            j0,
            kl0: None,
            hessian_norm_at_origin: spectral_norm(&model.hessian(&vec![0.0; dim])),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 1 {
            return Err(KtulaError::InvalidDimension("d must be >= 1".into()));
        }
        check_exponent(self.epsilon_h)?;
        let positive = [("beta", self.beta), ("epsilon", self.epsilon), ("c_ls", self.c_ls)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(KtulaError::InvalidParameter(format!(
                    "{name} must be finite and > 0, got {v}"
                )));
            }
        }
        if !(self.j0 >= 0.0) {
            return Err(KtulaError::InvalidParameter(format!("j0 must be >= 0, got {}", self.j0)));
        }
        if let Some(k) = self.kl0 {
            if !(k >= 0.0) {
                return Err(KtulaError::InvalidParameter(format!("kl0 must be >= 0, got {k}")));
            }
        }
        if !(self.hessian_norm_at_origin >= 0.0 && self.hessian_norm_at_origin.is_finite()) {
            return Err(KtulaError::InvalidParameter("‖H(0)‖ must be finite".into()));
        }
        Ok(())
    }

    fn dimf(&self) -> f64 {
        self.dim as f64
    }

    fn l(&self) -> f64 {
        self.rc.growth_degree as f64
    }
}

/// A constant carried as its logarithm, with the direct value when it is representable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantity {
    pub value: f64,
    pub ln: f64,
}

impl Quantity {
    fn from_ln(ln: f64) -> Self {
        Self { value: ln.exp(), ln }
    }

    fn exact(value: f64) -> Self {
        Self {
            value,
            ln: value.ln(),
        }
    }

    /// `true` when the direct value overflowed.
    pub fn overflowed(&self) -> bool {
        !self.value.is_finite() && self.ln.is_finite()
    }
}

/// `ln(e^x + e^y)`.
fn ln_add(x: f64, y: f64) -> f64 {
    let (hi, lo) = if x >= y { (x, y) } else { (y, x) };
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    if hi == f64::INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

fn ln_sum(terms: &[f64]) -> f64 {
    terms.iter().fold(f64::NEG_INFINITY, |acc, &t| ln_add(acc, t))
}

/// `⌈x⌉`, treating values within `1e-9` of an integer as that integer.
pub fn ceil_tol(x: f64) -> u32 {
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r as u32
    } else {
        x.ceil() as u32
    }
}

/// `c₀ = 2b + 8K_h² + 2d/β`.
fn c0(inputs: &BoundInputs) -> f64 {
    let kh = inputs.rc.gradient_growth;
    2.0 * inputs.rc.b + 8.0 * kh * kh + 2.0 * inputs.dimf() / inputs.beta
}

/// `ln c_p` for `p ≥ 2`.
fn ln_cp(inputs: &BoundInputs, p: u32) -> f64 {
    let rc = &inputs.rc;
    let (a, b, kh) = (rc.a, rc.b, rc.gradient_growth);
    let pf = p as f64;
    let d_beta = inputs.dimf() / inputs.beta;
    let ln2 = std::f64::consts::LN_2;
    let q = pf * (2.0 * pf - 1.0);
    // (1+2/a)^{p−1}(1+2b+8K_h²)^p(1+2^{2p−1}p(2p−1)d/β)
    let first = (pf - 1.0) * (2.0 / a).ln_1p()
        + pf * (1.0 + 2.0 * b + 8.0 * kh * kh).ln()
        + ln_add(0.0, (2.0 * pf - 1.0) * ln2 + q.ln() + d_beta.ln());
    // 2^{2p−4}(2p(2p−1))^{p+1} max{1, d/β}^p
    let second = (2.0 * pf - 4.0) * ln2 + (pf + 1.0) * (2.0 * q).ln() + pf * d_beta.max(1.0).ln();
    // a · max{1, 2^{2p}p(2p−1)d/(aβ)}^p
    let inner = 2.0 * pf * ln2 + q.ln() + (d_beta / a).ln();
    let third = a.ln() + pf * inner.max(0.0);
    ln_sum(&[first, second, third])
}

/// `c₀` for `p = 0` and `c_p` for `p ≥ 2`; `p = 1` is undefined and rejected.
pub fn moment_constants(inputs: &BoundInputs, p: u32) -> Result<Quantity> {
    inputs.validate()?;
    match p {
        0 => Ok(Quantity::exact(c0(inputs))),
        1 => Err(KtulaError::InvalidParameter(
            "c_p is defined for p = 0 and p >= 2 only".into(),
        )),
        _ => Ok(Quantity::from_ln(ln_cp(inputs, p))),
    }
}

/// `M₂ = E|θ₀|² + c₀(1 + 1/a)`.
pub fn second_moment_bound(inputs: &BoundInputs) -> Result<f64> {
    inputs.validate()?;
    Ok(inputs.init.moment(inputs.dim, 2)? + c0(inputs) * (1.0 + 1.0 / inputs.rc.a))
}

/// `(c̃₁, c̃₂) = (2β, 2β√M₂)`.
pub fn log_density_gradient_constants(inputs: &BoundInputs) -> Result<(f64, f64)> {
    let m2 = second_moment_bound(inputs)?;
    Ok((2.0 * inputs.beta, 2.0 * inputs.beta * m2.sqrt()))
}

/// Every constant of the error bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub l0: f64,
    pub l_nabla: f64,
    pub k_nabla: f64,
    pub lambda_max: f64,
    pub c0: f64,
    pub moment_bound: f64,
    pub c_tilde_1: f64,
    pub c_tilde_2: f64,
    /// `(p, c_p)` for every order the constants use.
    pub c_p: Vec<(u32, Quantity)>,
    pub c_psi: Quantity,
    pub c_j: Quantity,
    pub c_d_eps: Quantity,
    pub c_d: Quantity,
    pub c_0: f64,
    pub c_1: Quantity,
    pub c_2: f64,
    /// Needs `KL₀`.
    pub c_3: Option<Quantity>,
    pub c_4: Quantity,
    pub c_5: f64,
    /// `2 − ε_h − ε(1 − ε_h/2)`.
    pub rate: f64,
}

impl BoundReport {
    /// `(name, quantity)` rows in display order.
    pub fn rows(&self) -> Vec<(String, Quantity)> {
        let mut rows = vec![
            ("L0".to_string(), Quantity::exact(self.l0)),
            ("L_nabla".into(), Quantity::exact(self.l_nabla)),
            ("K_nabla".into(), Quantity::exact(self.k_nabla)),
            ("lambda_max".into(), Quantity::exact(self.lambda_max)),
            ("c0".into(), Quantity::exact(self.c0)),
            ("moment_bound_M2".into(), Quantity::exact(self.moment_bound)),
            ("c_tilde_1".into(), Quantity::exact(self.c_tilde_1)),
            ("c_tilde_2".into(), Quantity::exact(self.c_tilde_2)),
        ];
        for (p, q) in &self.c_p {
            rows.push((format!("c_{p}"), *q));
        }
        rows.extend([
            ("C_psi".to_string(), self.c_psi),
            ("C_J".into(), self.c_j),
            ("C_D_eps".into(), self.c_d_eps),
            ("C_D".into(), self.c_d),
            ("C0".into(), Quantity::exact(self.c_0)),
            ("C1".into(), self.c_1),
            ("C2".into(), Quantity::exact(self.c_2)),
        ]);
        if let Some(c3) = self.c_3 {
            rows.push(("C3".into(), c3));
        }
        rows.push(("C4".into(), self.c_4));
        rows.push(("C5".into(), Quantity { value: self.c_5, ln: f64::NAN }));
        rows.push(("rate".into(), Quantity::exact(self.rate)));
        rows
    }

    /// CSV `constant,value`; overflowed constants add a `ln_<name>` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("constant,value\n");
        for (name, q) in self.rows() {
            s.push_str(&format!("{name},{}\n", fmt_f64(q.value)));
            if q.overflowed() {
                s.push_str(&format!("ln_{name},{}\n", fmt_f64(q.ln)));
            }
        }
        s
    }
}

/// The rate exponent `2 − ε_h − ε(1 − ε_h/2)`.
pub fn rate_exponent(epsilon_h: f64, epsilon: f64) -> f64 {
    2.0 - epsilon_h - epsilon * (1.0 - epsilon_h / 2.0)
}

/// Evaluates every constant.
pub fn theorem_constants(inputs: &BoundInputs) -> Result<BoundReport> {
    inputs.validate()?;
    let rc = &inputs.rc;
    let (a, b, kh) = (rc.a, rc.b, rc.gradient_growth);
    let l = inputs.l();
    let eps_h = inputs.epsilon_h;
    let eps = inputs.epsilon;
    let d = inputs.dimf();
    let beta = inputs.beta;
    let ln2 = std::f64::consts::LN_2;
    let ln_a1 = (1.0 / a).ln_1p();

    let cap = lambda_max(rc, eps_h)?;
    let l0v = l0(rc);
    let lnab = l_nabla(rc, eps_h);
    let k_nabla = (10.0 * 2f64.sqrt() + 4.0 / eps_h)
        * (l + 1.0)
        * (l + 1.0)
        * rc.hessian_growth
            .max(rc.hessian_lipschitz)
            .max(kh)
            .max(a)
            .max(inputs.hessian_norm_at_origin)
            .max(1.0);
    let c0v = c0(inputs);
    let m2 = second_moment_bound(inputs)?;
    let (ct1, ct2) = log_density_gradient_constants(inputs)?;

    let q1 = ceil_tol(4.0 * ((l + 1.0) / eps_h + l) / eps);
    let q2 = ceil_tol((l + 1.0) * (1.0 / eps_h + 1.0) - 2.0);
    let q3 = ceil_tol(2.0 * ((l + 1.0) / eps_h + l));
    let ql = rc.growth_degree + 1;
    let mut orders = vec![2, q1, q2, q3, ql];
    orders.sort_unstable();
    orders.dedup();
    let c_p: Vec<(u32, Quantity)> = orders
        .iter()
        .map(|&p| (p, Quantity::from_ln(ln_cp(inputs, p))))
        .collect();
    let ln_c = |p: u32| c_p.iter().find(|(q, _)| *q == p).map(|(_, v)| v.ln).unwrap();
    let ln_one_plus_moment = |order: u32| -> Result<f64> {
        Ok(ln_add(0.0, inputs.init.ln_moment(inputs.dim, order)?))
    };

    let ln_knab = k_nabla.ln();
    let ln_c_d_eps = (2.0 * (l + 1.0) * (1.0 / eps_h + 1.0) + 13.0 * eps / 4.0) * ln2
        + 2.0 * ln_knab
        + (eps - 2.0) * beta.ln()
        + 0.75 * eps * ln_a1
        + 0.25 * eps * ln_c(2)
        + 0.25 * eps * ln_c(q1)
        + 0.5 * eps * ln_one_plus_moment((2 * q1).max(4))?;

    let ln_c_psi = ln_one_plus_moment(2 * q2)?
        + (4.0 * (l + 1.0) * (1.0 / eps_h + 1.0) - 1.0) * ln2
        + 2.0 * d.ln()
        + 2.0 * lnab.ln()
        + ln_a1
        + ln_c(q2);

    let ln_c_j = ln_sum(&[
        inputs.j0.ln(),
        4f64.ln() + ln_c_psi - 2.0 * l0v.ln(),
        (6.0 * d * beta * l0v).ln(),
    ]);

    let tail = (l0v * l0v * d / beta).max((1.0 + a + kh).powi(4) + 16.0 * (1.0 + d / beta).powi(2));
    let ln_c_d = ln_one_plus_moment(2 * q3)?
        + (6.0 * ((l + 1.0) / eps_h + l) + 8.0) * ln2
        + 2.0 * ln_knab
        + ln_a1
        + ln_c(q3)
        + tail.ln();

    let c_0 = 1.5 * inputs.c_ls;
    let c_2 = (2.0 * inputs.c_ls).sqrt();
    let ln_c1 = (40.0 * beta / (3.0 * inputs.c_ls)).ln()
        + ln_add(ln_c_d_eps + (1.0 - eps / 2.0) * ln_c_j, ln2 + ln_c_d);

    let ln_mterm = ln_sum(&[
        0.5 * ln_add(
            inputs.init.ln_moment(inputs.dim, 2 * rc.growth_degree + 2)?,
            ln_c(ql) + ln_a1,
        ),
        0.5 * (l + 1.0) * (2.0 * (b + (d + 2.0 * l) / beta) / a).ln(),
        0.0,
    ]);
    let c_3 = inputs.kl0.map(|kl0| {
        Quantity::from_ln(l * ln2 + kh.ln() + c_2.ln() + 0.5 * kl0.ln() + ln_mterm)
    });
    let c_4 = Quantity::from_ln(c_2.ln() + 0.5 * ln_c1 + ln_mterm);
    let kh_big = rc.hessian_growth;
    let inner = kh_big
        * std::f64::consts::E
        * (1.0 + 4.0 * (b / a).sqrt().max((2.0 * d / (beta * kh_big)).sqrt())).powf(l)
        / a
        * (beta * b / d + 1.0);
    let c_5 = d / 2.0 * inner.ln() + ln2;

    Ok(BoundReport {
        l0: l0v,
        l_nabla: lnab,
        k_nabla,
        lambda_max: cap.lambda_max,
        c0: c0v,
        moment_bound: m2,
        c_tilde_1: ct1,
        c_tilde_2: ct2,
        c_p,
        c_psi: Quantity::from_ln(ln_c_psi),
        c_j: Quantity::from_ln(ln_c_j),
        c_d_eps: Quantity::from_ln(ln_c_d_eps),
        c_d: Quantity::from_ln(ln_c_d),
        c_0,
        c_1: Quantity::from_ln(ln_c1),
        c_2,
        c_3,
        c_4,
        c_5,
        rate: rate_exponent(eps_h, eps),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrescriptionMode {
    Kl,
    W2,
    ExcessRisk,
}

impl PrescriptionMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            PrescriptionMode::Kl => "kl",
            PrescriptionMode::W2 => "w2",
            PrescriptionMode::ExcessRisk => "excess_risk",
        }
    }
}

/// Step size, iteration count and (for excess risk) inverse temperature that
/// guarantee accuracy `δ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prescription {
    pub mode: PrescriptionMode,
    pub delta: f64,
    pub lambda: f64,
    /// `ln λ`, finite even when `λ` underflows to 0.
    pub ln_lambda: f64,
    /// `⌈n⌉`, clamped at 0; `inf` if it does not fit in an `f64`.
    pub n_steps: f64,
    /// `ln n` before rounding.
    pub ln_n_steps: f64,
    pub beta: Option<f64>,
}

impl Prescription {
    pub fn to_csv_rows(&self) -> String {
        let m = self.mode.as_str();
        let mut s = format!("{m}_lambda,{}\n", fmt_f64(self.lambda));
        if self.lambda == 0.0 {
            s.push_str(&format!("ln_{m}_lambda,{}\n", fmt_f64(self.ln_lambda)));
        }
        s.push_str(&format!("{m}_n,{}\n", fmt_f64(self.n_steps)));
        if !self.n_steps.is_finite() {
            s.push_str(&format!("ln_{m}_n,{}\n", fmt_f64(self.ln_n_steps)));
        }
        if let Some(b) = self.beta {
            s.push_str(&format!("{m}_beta,{}\n", fmt_f64(b)));
        }
        s
    }
}

/// Builds a prescription from `ln λ₁` (the accuracy-driven step), the cap,
/// and `n ≥ (scale/C₀) · max{1/λ₁, 1/λ_max} · log_arg`.
fn assemble(
    mode: PrescriptionMode,
    delta: f64,
    ln_lambda1: f64,
    lambda_max: f64,
    scale_over_c0: f64,
    log_arg: f64,
    beta: Option<f64>,
) -> Prescription {
    let ln_lambda = ln_lambda1.min(lambda_max.ln());
    let lambda = ln_lambda1.exp().min(lambda_max);
    let ln_n = scale_over_c0.ln() - ln_lambda + log_arg.ln();
    let n = if log_arg <= 0.0 {
        0.0
    } else {
        ln_n.exp().ceil()
    };
    Prescription {
        mode,
        delta,
        lambda,
        ln_lambda,
        n_steps: n,
        ln_n_steps: ln_n,
        beta,
    }
}

/// KL prescription from raw constants:
/// `λ = min{(δ/(2C₁))^{1/r}, λ_max}`, `n ≥ (1/C₀) max{(2C₁/δ)^{1/r}, 1/λ_max} log(2KL₀/δ)`.
pub fn kl_prescription(c0: f64, ln_c1: f64, lambda_max: f64, kl0: f64, delta: f64, rate: f64) -> Prescription {
    let ln_l1 = (delta.ln() - std::f64::consts::LN_2 - ln_c1) / rate;
    assemble(PrescriptionMode::Kl, delta, ln_l1, lambda_max, 1.0 / c0, (2.0 * kl0 / delta).ln(), None)
}

/// `β ≥ max{1, 9d²/δ², (3d/δ) log(K_H(1+4(√(b/a)+√(2d/K_H)))^l (b+1)(d+1)/(ad)) + 6 log 2/δ}`.
pub fn excess_risk_beta(rc: &RegularityConstants, dim: usize, delta: f64) -> f64 {
    let d = dim as f64;
    let (a, b, k) = (rc.a, rc.b, rc.hessian_growth);
    let inner = k * (1.0 + 4.0 * ((b / a).sqrt() + (2.0 * d / k).sqrt())).powi(rc.growth_degree as i32)
        * (b + 1.0)
        * (d + 1.0)
        / (a * d);
    let third = 3.0 * d / delta * inner.ln() + 6.0 * std::f64::consts::LN_2 / delta;
    1f64.max(9.0 * d * d / (delta * delta)).max(third)
}

/// `(λ, n)` and for excess risk also `β` guaranteeing accuracy `δ`.
///
/// Excess-risk constants are evaluated at the prescribed `β`; `KL₀` is used
/// as supplied.
pub fn prescribe(inputs: &BoundInputs, mode: PrescriptionMode, delta: f64) -> Result<Prescription> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(KtulaError::InvalidParameter(format!("delta must be > 0, got {delta}")));
    }
    let kl0 = inputs.kl0.ok_or_else(|| {
        KtulaError::InvalidParameter("KL(pi_0 || pi_beta) is required for prescriptions".into())
    })?;
    let rate = rate_exponent(inputs.epsilon_h, inputs.epsilon);
    let ln2 = std::f64::consts::LN_2;
    match mode {
        PrescriptionMode::Kl => {
            let r = theorem_constants(inputs)?;
            Ok(kl_prescription(r.c_0, r.c_1.ln, r.lambda_max, kl0, delta, rate))
        }
        PrescriptionMode::W2 => {
            let r = theorem_constants(inputs)?;
            let ln_l1 = 2.0 / rate * (delta.ln() - ln2 - r.c_2.ln() - 0.5 * r.c_1.ln);
            Ok(assemble(
                mode,
                delta,
                ln_l1,
                r.lambda_max,
                2.0 / r.c_0,
                (2.0 * r.c_2 * kl0.sqrt() / delta).ln(),
                None,
            ))
        }
        PrescriptionMode::ExcessRisk => {
            let beta = excess_risk_beta(&inputs.rc, inputs.dim, delta);
            let at_beta = BoundInputs {
                beta,
                ..inputs.clone()
            };
            let r = theorem_constants(&at_beta)?;
            let c3 = r.c_3.expect("kl0 supplied");
            let ln_l1 = 2.0 / rate * (delta.ln() - 3f64.ln() - r.c_4.ln);
            Ok(assemble(
                mode,
                delta,
                ln_l1,
                r.lambda_max,
                2.0 / r.c_0,
                3f64.ln() + c3.ln - delta.ln(),
                Some(beta),
            ))
        }
    }
}
