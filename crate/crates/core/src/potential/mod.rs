//! Potentials `u` with gradient `h = ∇u`, Hessian `H = ∇²u`, and the
//! regularity constants the sampler and the bound calculator rely on.
//!
//! Three potentials are bundled:
//!
//! * the double well `u(θ) = |θ|⁴/4 − |θ|²/2`,
//! * the quadratic `u(θ) = a|θ|²/2` (linear drift, used for exact checks),
//! * a regularised single-hidden-layer SiLU network regression objective
//!   (see [`neural`]).

mod checks;
pub mod neural;

pub use checks::{check_regularity, random_points, RegularityReport};
pub use neural::{DataMoments, NeuralNetObjective, NeuralNetObjectiveSpec};

use nalgebra::DMatrix;

use crate::error::{KtulaError, Result};
use crate::linalg::norm_sq;

/// A point in parameter space. All coordinates are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(KtulaError::InvalidDimension(
                "parameter vector must have at least one coordinate".into(),
            ));
        }
        if let Some(i) = coords.iter().position(|c| !c.is_finite()) {
            return Err(KtulaError::InvalidParameter(format!(
                "coordinate {i} is not finite ({})",
                coords[i]
            )));
        }
        Ok(Self(coords))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim.max(1)])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm_sq(&self.0).sqrt()
    }
}

impl AsRef<[f64]> for ParameterVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Dissipativity and polynomial-growth constants of a potential.
///
/// * `⟨h(θ),θ⟩ ≥ a|θ|² − b`
/// * `‖H(θ) − H(θ̄)‖ ≤ L(1+|θ|+|θ̄|)^{l−1}|θ−θ̄|`
/// * `‖H(θ)‖ ≤ K_H(1+|θ|^l)`, `|h(θ)| ≤ K_h(1+|θ|^{l+1})`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularityConstants {
    pub a: f64,
    pub b: f64,
    pub hessian_lipschitz: f64,
    pub growth_degree: u32,
    pub hessian_growth: f64,
    pub gradient_growth: f64,
}

impl RegularityConstants {
    pub fn new(
        a: f64,
        b: f64,
        hessian_lipschitz: f64,
        growth_degree: u32,
        hessian_growth: f64,
        gradient_growth: f64,
    ) -> Result<Self> {
        let named = [
            ("a", a),
            ("b", b),
            ("L", hessian_lipschitz),
            ("K_H", hessian_growth),
            ("K_h", gradient_growth),
        ];
        for (name, v) in named {
            if !(v.is_finite() && v > 0.0) {
                return Err(KtulaError::InvalidParameter(format!(
                    "regularity constant {name} must be finite and > 0, got {v}"
                )));
            }
        }
        if growth_degree < 1 {
            return Err(KtulaError::InvalidParameter(
                "growth degree l must be >= 1".into(),
            ));
        }
        Ok(Self {
            a,
            b,
            hessian_lipschitz,
            growth_degree,
            hessian_growth,
            gradient_growth,
        })
    }
}

#[derive(Debug, Clone)]
enum Kind {
    DoubleWell,
    Quadratic { a: f64 },
    NeuralNet(Box<NeuralNetObjective>),
}

/// A twice-differentiable potential with declared regularity constants.
///
/// Models are immutable once built and every evaluator is a pure function of
/// `(model, θ)`, so a model can be shared freely between worker threads.
#[derive(Debug, Clone)]
pub struct PotentialModel {
    dim: usize,
    kind: Kind,
    constants: RegularityConstants,
    label: String,
}

/// Quadratic potentials need `b > 0`; this value keeps `b` positive without
/// moving any bound materially.
pub const QUADRATIC_DISSIPATIVITY_OFFSET: f64 = 1e-12;

/// `u(θ) = |θ|⁴/4 − |θ|²/2` with `a = 1/2, b = 9/4, L = 3, l = 2, K_H = 3, K_h = 2`.
pub fn make_double_well(dim: usize) -> Result<PotentialModel> {
    if dim < 1 {
        return Err(KtulaError::InvalidDimension(format!(
            "double well needs d >= 1, got {dim}"
        )));
    }
    Ok(PotentialModel {
        dim,
        kind: Kind::DoubleWell,
        constants: RegularityConstants::new(0.5, 2.25, 3.0, 2, 3.0, 2.0)?,
        label: "double_well".into(),
    })
}

/// `u(θ) = a|θ|²/2`.
pub fn make_quadratic(dim: usize, a: f64) -> Result<PotentialModel> {
    if dim < 1 {
        return Err(KtulaError::InvalidDimension(format!(
            "quadratic needs d >= 1, got {dim}"
        )));
    }
    if !(a.is_finite() && a > 0.0) {
        return Err(KtulaError::InvalidParameter(format!(
            "quadratic curvature a must be > 0, got {a}"
        )));
    }
    Ok(PotentialModel {
        dim,
        kind: Kind::Quadratic { a },
        constants: RegularityConstants::new(a, QUADRATIC_DISSIPATIVITY_OFFSET, a, 1, a, a)?,
        label: "quadratic".into(),
    })
}

/// Empirical-risk network objective; constants from [`nn_regularity_constants`].
pub fn make_neural_net_objective(spec: NeuralNetObjectiveSpec) -> Result<PotentialModel> {
    let objective = NeuralNetObjective::new(spec)?;
    let constants = objective.regularity_constants()?;
    Ok(PotentialModel {
        dim: objective.dim(),
        kind: Kind::NeuralNet(Box::new(objective)),
        constants,
        label: "neural_net".into(),
    })
}

/// Regularity constants of the network objective evaluated on its dataset.
pub fn nn_regularity_constants(spec: &NeuralNetObjectiveSpec) -> Result<RegularityConstants> {
    spec.validate()?;
    neural::constants_from_moments(
        spec.hidden_width,
        spec.eta,
        &spec.data_moments(),
        spec.input_weight_norm(),
    )
}

impl PotentialModel {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn constants(&self) -> &RegularityConstants {
        &self.constants
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn neural_net(&self) -> Option<&NeuralNetObjective> {
        match &self.kind {
            Kind::NeuralNet(nn) => Some(nn),
            _ => None,
        }
    }

    /// `u(θ)` without dimension or finiteness checks.
    pub fn value(&self, theta: &[f64]) -> f64 {
        match &self.kind {
            Kind::DoubleWell => {
                let r2 = norm_sq(theta);
                0.25 * r2 * r2 - 0.5 * r2
            }
            Kind::Quadratic { a } => 0.5 * a * norm_sq(theta),
            Kind::NeuralNet(nn) => nn.value(theta),
        }
    }

    /// Writes `h(θ)` into `out` without dimension or finiteness checks.
    pub fn gradient_into(&self, theta: &[f64], out: &mut [f64]) {
        match &self.kind {
            Kind::DoubleWell => {
                let s = norm_sq(theta) - 1.0;
                for (o, t) in out.iter_mut().zip(theta) {
                    *o = t * s;
                }
            }
            Kind::Quadratic { a } => {
                for (o, t) in out.iter_mut().zip(theta) {
                    *o = a * t;
                }
            }
            Kind::NeuralNet(nn) => nn.gradient_into(theta, out),
        }
    }

    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; theta.len()];
        self.gradient_into(theta, &mut out);
        out
    }

    /// `H(θ)` without dimension or finiteness checks.
    pub fn hessian(&self, theta: &[f64]) -> DMatrix<f64> {
        let d = theta.len();
        match &self.kind {
            Kind::DoubleWell => {
                let s = norm_sq(theta) - 1.0;
                DMatrix::from_fn(d, d, |i, j| {
                    let outer = 2.0 * theta[i] * theta[j];
                    if i == j {
                        s + outer
                    } else {
                        outer
                    }
                })
            }
            Kind::Quadratic { a } => DMatrix::from_diagonal_element(d, d, *a),
            Kind::NeuralNet(nn) => nn.hessian(theta),
        }
    }

    fn check_dim(&self, theta: &ParameterVector) -> Result<()> {
        if theta.dim() != self.dim {
            return Err(KtulaError::DimensionMismatch {
                expected: self.dim,
                got: theta.dim(),
            });
        }
        Ok(())
    }

    pub fn eval_u(&self, theta: &ParameterVector) -> Result<f64> {
        self.check_dim(theta)?;
        let v = self.value(theta.as_slice());
        if !v.is_finite() {
            return Err(KtulaError::Overflow { evaluator: "u" });
        }
        Ok(v)
    }

    pub fn eval_grad(&self, theta: &ParameterVector) -> Result<Vec<f64>> {
        self.check_dim(theta)?;
        let g = self.gradient(theta.as_slice());
        if g.iter().any(|x| !x.is_finite()) {
            return Err(KtulaError::Overflow { evaluator: "h" });
        }
        Ok(g)
    }

    pub fn eval_hessian(&self, theta: &ParameterVector) -> Result<DMatrix<f64>> {
        self.check_dim(theta)?;
        let h = self.hessian(theta.as_slice());
        if h.iter().any(|x| !x.is_finite()) {
            return Err(KtulaError::Overflow { evaluator: "H" });
        }
        Ok(h)
    }
}
