//! Regularised empirical risk of a one-hidden-layer SiLU network.
//!
//! ```text
//! N(θ, z) = Σ_i W_i σ₀(⟨c_i, z⟩ + b_i),   σ₀(x) = x / (1 + e^{-x})
//! u(θ)    = mean_k (y_k − N(θ, z_k))² + (η/6)|θ|⁶
//! ```
//!
//! The input weights `c` are fixed; the parameter is `θ = (W_1..W_{d₁}, b_1..b_{d₁})`.
//! Gradient and Hessian are written out partial by partial with the shorthand
//! `x_i = ⟨c_i, z⟩ + b_i` and `s_i = 1/(1 + e^{-x_i})`.

use std::io::BufRead;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::RegularityConstants;
use crate::error::{KtulaError, Result};
use crate::linalg::norm_sq;

#[derive(Debug, Clone, PartialEq)]
pub struct DataPoint {
    pub z: Vec<f64>,
    pub y: f64,
}

/// Everything that defines the network objective.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralNetObjectiveSpec {
    /// Hidden width `d₁`; the parameter dimension is `2 d₁`.
    pub hidden_width: usize,
    /// Input dimension `m − 1`.
    pub input_dim: usize,
    /// Fixed input weights, row-major `d₁ × (m−1)`.
    pub input_weights: Vec<f64>,
    /// Regularisation strength `η > 0`.
    pub eta: f64,
    pub data: Vec<DataPoint>,
}

/// Empirical moments `E[(1+|X|)^k]` for `k ∈ {1, 2, 6}`, with `X = (z, y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataMoments {
    pub first: f64,
    pub second: f64,
    pub sixth: f64,
}

impl NeuralNetObjectiveSpec {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_width < 1 {
            return Err(KtulaError::InvalidSpec("hidden width must be >= 1".into()));
        }
        if self.input_dim < 1 {
            return Err(KtulaError::InvalidSpec("input dimension must be >= 1".into()));
        }
        if self.input_weights.len() != self.hidden_width * self.input_dim {
            return Err(KtulaError::InvalidSpec(format!(
                "input weights must have {} entries, got {}",
                self.hidden_width * self.input_dim,
                self.input_weights.len()
            )));
        }
        if !self.input_weights.iter().all(|w| w.is_finite()) {
            return Err(KtulaError::InvalidSpec("input weights must be finite".into()));
        }
        if self.input_weights.iter().all(|&w| w == 0.0) {
            return Err(KtulaError::InvalidSpec(
                "input weights must have a nonzero entry".into(),
            ));
        }
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(KtulaError::InvalidSpec(format!("eta must be > 0, got {}", self.eta)));
        }
        if self.data.is_empty() {
            return Err(KtulaError::InvalidSpec("dataset is empty".into()));
        }
        for (k, p) in self.data.iter().enumerate() {
            if p.z.len() != self.input_dim {
                return Err(KtulaError::InvalidSpec(format!(
                    "data point {k} has {} inputs, expected {}",
                    p.z.len(),
                    self.input_dim
                )));
            }
            if !(p.y.is_finite() && p.z.iter().all(|v| v.is_finite())) {
                return Err(KtulaError::InvalidSpec(format!("data point {k} is not finite")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        2 * self.hidden_width
    }

    /// Euclidean norm of the flattened input-weight matrix.
    pub fn input_weight_norm(&self) -> f64 {
        norm_sq(&self.input_weights).sqrt()
    }

    pub fn data_moments(&self) -> DataMoments {
        let n = self.data.len() as f64;
        let (mut m1, mut m2, mut m6) = (0.0, 0.0, 0.0);
        for p in &self.data {
            let r = 1.0 + (norm_sq(&p.z) + p.y * p.y).sqrt();
            m1 += r;
            m2 += r * r;
            m6 += r.powi(6);
        }
        DataMoments {
            first: m1 / n,
            second: m2 / n,
            sixth: m6 / n,
        }
    }

    /// Seeded standard-normal input weights.
    pub fn random_input_weights(hidden_width: usize, input_dim: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..hidden_width * input_dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect()
    }

    /// Seeded synthetic regression problem.
    ///
    /// Inputs are standard normal; targets come from a "teacher" network with
    /// the same input weights and parameters drawn from `N(0, 0.5²)`, plus
    /// `N(0, 0.1²)` label noise.
    pub fn synthetic(
        hidden_width: usize,
        input_dim: usize,
        n_samples: usize,
        eta: f64,
        seed: u64,
    ) -> Result<Self> {
        let input_weights = Self::random_input_weights(hidden_width, input_dim, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let teacher: Vec<f64> = (0..2 * hidden_width)
            .map(|_| 0.5 * Distribution::<f64>::sample(&StandardNormal, &mut rng))
            .collect();
        let mut spec = Self {
            hidden_width,
            input_dim,
            input_weights,
            eta,
            data: Vec::with_capacity(n_samples),
        };
        for _ in 0..n_samples {
            let z: Vec<f64> = (0..input_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let noise: f64 = StandardNormal.sample(&mut rng);
            let y = spec.predict(&teacher, &z) + 0.1 * noise;
            spec.data.push(DataPoint { z, y });
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Reads a dataset from CSV with header `z_1,...,z_{m-1},y`.
    pub fn read_dataset<R: BufRead>(reader: R) -> Result<(usize, Vec<DataPoint>)> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| KtulaError::InvalidSpec("dataset CSV is empty".into()))??;
        let cols: Vec<&str> = header.trim().split(',').map(str::trim).collect();
        let input_dim = cols.len().saturating_sub(1);
        let expected: Vec<String> = (1..=input_dim)
            .map(|i| format!("z_{i}"))
            .chain(std::iter::once("y".to_string()))
            .collect();
        if input_dim == 0 || cols != expected.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(KtulaError::InvalidSpec(format!(
                "dataset header must be z_1,...,z_{{m-1}},y; got `{}`",
                header.trim()
            )));
        }
        let mut data = Vec::new();
        for (row, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let values: std::result::Result<Vec<f64>, _> =
                line.split(',').map(|s| s.trim().parse::<f64>()).collect();
            let values = values.map_err(|e| {
                KtulaError::InvalidSpec(format!("dataset row {}: {e}", row + 2))
            })?;
            if values.len() != input_dim + 1 {
                return Err(KtulaError::InvalidSpec(format!(
                    "dataset row {} has {} fields, expected {}",
                    row + 2,
                    values.len(),
                    input_dim + 1
                )));
            }
            data.push(DataPoint {
                z: values[..input_dim].to_vec(),
                y: values[input_dim],
            });
        }
        Ok((input_dim, data))
    }

    /// Writes the dataset as CSV with header `z_1,...,z_{m-1},y`.
    pub fn write_dataset<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        let header: Vec<String> = (1..=self.input_dim)
            .map(|i| format!("z_{i}"))
            .chain(std::iter::once("y".into()))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for p in &self.data {
            let row: Vec<String> = p
                .z
                .iter()
                .chain(std::iter::once(&p.y))
                .map(|v| crate::format::fmt_f64(*v))
                .collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    fn pre_activation(&self, i: usize, theta: &[f64], z: &[f64]) -> f64 {
        let row = &self.input_weights[i * self.input_dim..(i + 1) * self.input_dim];
        row.iter().zip(z).map(|(c, x)| c * x).sum::<f64>() + theta[self.hidden_width + i]
    }

    /// Network output `N(θ, z)`.
    pub fn predict(&self, theta: &[f64], z: &[f64]) -> f64 {
        (0..self.hidden_width)
            .map(|i| {
                let x = self.pre_activation(i, theta, z);
                theta[i] * x * sigmoid(x)
            })
            .sum()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Constants from the dataset moments, input-weight norm, width and `η`:
///
/// * `L   = (320d₁² + 20η) E[1+|X|] (1+|c|)`
/// * `K_H = (256d₁² + 5η) E[(1+|X|)²] (1+|c|)²`
/// * `K_h = (48d₁ + η) E[(1+|X|)²] (1+|c|)²`
/// * `a = η/2`, `l = 4`
/// * `b = 96ηd₁E[(1+|X|)²](1+|c|)²/min{1,η} + 96³d₁³E[(1+|X|)⁶](1+|c|)⁶/min{1,η}²`
pub fn constants_from_moments(
    hidden_width: usize,
    eta: f64,
    moments: &DataMoments,
    input_weight_norm: f64,
) -> Result<RegularityConstants> {
    let d1 = hidden_width as f64;
    let c1 = 1.0 + input_weight_norm;
    let m = eta.min(1.0);
    let lipschitz = (320.0 * d1 * d1 + 20.0 * eta) * moments.first * c1;
    let k_hess = (256.0 * d1 * d1 + 5.0 * eta) * moments.second * c1 * c1;
    let k_grad = (48.0 * d1 + eta) * moments.second * c1 * c1;
    let b = 96.0 * eta * d1 * moments.second * c1 * c1 / m
        + 96f64.powi(3) * d1.powi(3) * moments.sixth * c1.powi(6) / (m * m);
    RegularityConstants::new(eta / 2.0, b, lipschitz, 4, k_hess, k_grad)
}

/// The network objective bound to a validated spec.
#[derive(Debug, Clone)]
pub struct NeuralNetObjective {
    spec: NeuralNetObjectiveSpec,
}

/// Per-sample activations for one hidden unit.
#[derive(Clone, Copy)]
struct Unit {
    /// `x_i σ(x_i) = σ₀(x_i)`
    act: f64,
    /// `σ₀'(x_i) = s_i + x_i s_i(1 − s_i)`
    d1: f64,
    /// `σ₀''(x_i) = 2 s_i(1 − s_i) + x_i s_i(1 − s_i)(1 − 2s_i)`
    d2: f64,
}

impl NeuralNetObjective {
    pub fn new(spec: NeuralNetObjectiveSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self { spec })
    }

    pub fn spec(&self) -> &NeuralNetObjectiveSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    pub fn regularity_constants(&self) -> Result<RegularityConstants> {
        constants_from_moments(
            self.spec.hidden_width,
            self.spec.eta,
            &self.spec.data_moments(),
            self.spec.input_weight_norm(),
        )
    }

    fn units(&self, theta: &[f64], z: &[f64], out: &mut [Unit]) {
        for (i, u) in out.iter_mut().enumerate() {
            let x = self.spec.pre_activation(i, theta, z);
            let s = sigmoid(x);
            let ds = s * (1.0 - s);
            *u = Unit {
                act: x * s,
                d1: s + x * ds,
                d2: 2.0 * ds + x * ds * (1.0 - 2.0 * s),
            };
        }
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        let n = self.spec.data.len() as f64;
        let risk: f64 = self
            .spec
            .data
            .iter()
            .map(|p| {
                let r = p.y - self.spec.predict(theta, &p.z);
                r * r
            })
            .sum::<f64>()
            / n;
        let r2 = norm_sq(theta);
        risk + self.spec.eta / 6.0 * r2 * r2 * r2
    }

    pub fn gradient_into(&self, theta: &[f64], out: &mut [f64]) {
        let d1 = self.spec.hidden_width;
        let n = self.spec.data.len() as f64;
        let mut units = vec![Unit { act: 0.0, d1: 0.0, d2: 0.0 }; d1];
        out.iter_mut().for_each(|o| *o = 0.0);
        for p in &self.spec.data {
            self.units(theta, &p.z, &mut units);
            let net: f64 = (0..d1).map(|i| theta[i] * units[i].act).sum();
            let r = p.y - net;
            for i in 0..d1 {
                // ∂_{W_i}: −2E[(Y−N) x_i s_i]
                out[i] += -2.0 * r * units[i].act;
                // ∂_{b_i}: −2E[(Y−N) W_i (s_i + x_i s_i(1−s_i))]
                out[d1 + i] += -2.0 * r * theta[i] * units[i].d1;
            }
        }
        let r2 = norm_sq(theta);
        let reg = self.spec.eta * r2 * r2;
        for (o, t) in out.iter_mut().zip(theta) {
            *o = *o / n + reg * t;
        }
    }

    pub fn hessian(&self, theta: &[f64]) -> DMatrix<f64> {
        let d1 = self.spec.hidden_width;
        let d = 2 * d1;
        let n = self.spec.data.len() as f64;
        let w = &theta[..d1];
        let mut h = DMatrix::<f64>::zeros(d, d);
        let mut units = vec![Unit { act: 0.0, d1: 0.0, d2: 0.0 }; d1];
        for p in &self.spec.data {
            self.units(theta, &p.z, &mut units);
            let net: f64 = (0..d1).map(|i| w[i] * units[i].act).sum();
            let r = p.y - net;
            for i in 0..d1 {
                let ui = units[i];
                for j in 0..d1 {
                    let uj = units[j];
                    if i == j {
                        h[(i, i)] += 2.0 * ui.act * ui.act;
                        h[(d1 + i, d1 + i)] +=
                            2.0 * w[i] * w[i] * ui.d1 * ui.d1 - 2.0 * r * w[i] * ui.d2;
                        let wb = 2.0 * ui.act * w[i] * ui.d1 - 2.0 * r * ui.d1;
                        h[(i, d1 + i)] += wb;
                        h[(d1 + i, i)] += wb;
                    } else {
                        h[(i, j)] += 2.0 * ui.act * uj.act;
                        h[(d1 + i, d1 + j)] += 2.0 * w[i] * w[j] * ui.d1 * uj.d1;
                        // ∂_{W_i b_j}
                        h[(i, d1 + j)] += 2.0 * ui.act * w[j] * uj.d1;
                        // ∂_{b_i W_j}
                        h[(d1 + i, j)] += 2.0 * uj.act * w[i] * ui.d1;
                    }
                }
            }
        }
        h /= n;
        let eta = self.spec.eta;
        let r2 = norm_sq(theta);
        let r4 = r2 * r2;
        for i in 0..d {
            for j in 0..d {
                let mut reg = 4.0 * eta * r2 * theta[i] * theta[j];
                if i == j {
                    reg += eta * r4;
                }
                h[(i, j)] += reg;
            }
        }
        h
    }
}
