//! Independent oracles for the Gibbs target `π_β ∝ exp(−βu)`: trapezoid
//! quadrature in one and two dimensions, grid search for `inf u`, and long
//! fine-step reference chains.

use crate::error::{KtulaError, Result};
use crate::format::fmt_f64;
use crate::potential::PotentialModel;
use crate::sampler::{run_chains, Algorithm, ChainConfig, InitialLaw, SampleBatch, DEFAULT_DIVERGENCE_THRESHOLD};
use crate::taming::lambda_max;

/// Relative weight `e^{−βu}` must fall below this at the edge of the grid.
pub const DECAY_TOLERANCE: f64 = 1e-16;

/// Default cap on exhaustive grid evaluations in [`grid_minimize`].
pub const GRID_POINT_CAP: usize = 2_000_000;

/// Coordinate-descent sweeps after the grid search.
pub const REFINEMENT_SWEEPS: usize = 200;

/// Symmetric uniform grid `x_i = R(2i − (G−1))/(G−1)`, `i = 0..G`.
fn symmetric_grid(r: f64, g: usize) -> Vec<f64> {
    let m = (g - 1) as f64;
    (0..g).map(|i| r * (2.0 * i as f64 - m) / m).collect()
}

fn check_extent(r: f64, g: usize) -> Result<()> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(KtulaError::InvalidParameter(format!("extent R must be > 0, got {r}")));
    }
    if g < 3 {
        return Err(KtulaError::InvalidParameter(format!("grid size must be >= 3, got {g}")));
    }
    Ok(())
}

/// Tabulated one-dimensional `π_β`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTarget {
    pub beta: f64,
    pub grid: Vec<f64>,
    /// Normalised density at the grid points.
    pub density: Vec<f64>,
    /// Trapezoid cumulative distribution, from 0 to 1.
    pub cdf: Vec<f64>,
    /// `ln Z` with `Z = ∫ e^{−βu}`.
    pub ln_normalizer: f64,
    /// `moments[k−1] = ∫ x^k π_β(x) dx` for `k = 1..=6`.
    pub moments: [f64; 6],
}

impl ReferenceTarget {
    pub fn spacing(&self) -> f64 {
        self.grid[1] - self.grid[0]
    }

    pub fn extent(&self) -> f64 {
        *self.grid.last().unwrap()
    }

    pub fn normalizer(&self) -> f64 {
        self.ln_normalizer.exp()
    }

    pub fn moment(&self, k: usize) -> f64 {
        self.moments[k - 1]
    }

    pub fn mean(&self) -> f64 {
        self.moments[0]
    }

    /// Distribution function by linear interpolation; 0 and 1 outside the grid.
    pub fn cdf_at(&self, x: f64) -> f64 {
        let (lo, hi) = (self.grid[0], self.extent());
        if x <= lo {
            return 0.0;
        }
        if x >= hi {
            return 1.0;
        }
        let t = (x - lo) / self.spacing();
        let i = (t.floor() as usize).min(self.grid.len() - 2);
        let w = t - i as f64;
        self.cdf[i] + w * (self.cdf[i + 1] - self.cdf[i])
    }

    /// Inverse of the interpolated distribution function.
    pub fn quantile(&self, u: f64) -> f64 {
        if u <= 0.0 {
            return self.grid[0];
        }
        if u >= 1.0 {
            return self.extent();
        }
        let i = self.cdf.partition_point(|&c| c < u).clamp(1, self.grid.len() - 1);
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        if c1 <= c0 {
            return self.grid[i];
        }
        self.grid[i - 1] + (u - c0) / (c1 - c0) * self.spacing()
    }

    /// CSV `x,density,cdf`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,density,cdf\n");
        for ((x, p), c) in self.grid.iter().zip(&self.density).zip(&self.cdf) {
            s.push_str(&format!("{},{},{}\n", fmt_f64(*x), fmt_f64(*p), fmt_f64(*c)));
        }
        s
    }
}

/// Trapezoid rule for samples on a uniform grid.
fn trapezoid(values: &[f64], h: f64) -> f64 {
    let n = values.len();
    let inner: f64 = values[1..n - 1].iter().sum();
    h * (inner + 0.5 * (values[0] + values[n - 1]))
}

/// Symmetric-pair trapezoid sum; odd integrands of a symmetric density cancel exactly.
fn trapezoid_paired(values: &[f64], h: f64) -> f64 {
    let n = values.len();
    let mut s = 0.0;
    for i in 0..n / 2 {
        let w = if i == 0 { 0.5 } else { 1.0 };
        s += w * (values[i] + values[n - 1 - i]);
    }
    if n % 2 == 1 {
        s += values[n / 2];
    }
    h * s
}

/// Quadrature table of `π_β` for a one-dimensional model on `[−R, R]` with `G` points.
pub fn quadrature_target_1d(model: &PotentialModel, beta: f64, r: f64, g: usize) -> Result<ReferenceTarget> {
    if model.dim() != 1 {
        return Err(KtulaError::InvalidDimension(format!(
            "1-D quadrature needs d = 1, got {}",
            model.dim()
        )));
    }
    check_extent(r, g)?;
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(KtulaError::InvalidParameter(format!("beta must be > 0, got {beta}")));
    }
    let grid = symmetric_grid(r, g);
    let h = grid[1] - grid[0];
    let energy: Vec<f64> = grid.iter().map(|x| beta * model.value(&[*x])).collect();
    let e_min = energy.iter().copied().fold(f64::INFINITY, f64::min);
    if !e_min.is_finite() {
        return Err(KtulaError::Overflow { evaluator: "u" });
    }
    let weight: Vec<f64> = energy.iter().map(|e| (e_min - e).exp()).collect();
    let edge = weight[0].max(weight[g - 1]);
    if edge > DECAY_TOLERANCE {
        return Err(KtulaError::Extent(format!(
            "exp(-beta u) at the boundary is {edge:e} of its maximum; raise R above {r}"
        )));
    }
    let mass = trapezoid(&weight, h);
    let density: Vec<f64> = weight.iter().map(|w| w / mass).collect();
    let mut cdf = Vec::with_capacity(g);
    let mut acc = 0.0;
    cdf.push(0.0);
    for i in 1..g {
        acc += 0.5 * h * (density[i - 1] + density[i]);
        cdf.push(acc);
    }
    let total = acc;
    cdf.iter_mut().for_each(|c| *c /= total);
    let mut moments = [0.0; 6];
    for (k, m) in moments.iter_mut().enumerate() {
        let integrand: Vec<f64> = grid
            .iter()
            .zip(&density)
            .map(|(x, p)| x.powi(k as i32 + 1) * p)
            .collect();
        *m = trapezoid_paired(&integrand, h);
    }
    Ok(ReferenceTarget {
        beta,
        grid,
        density,
        cdf,
        ln_normalizer: mass.ln() - e_min,
        moments,
    })
}

/// Default grid size per axis for two-dimensional quadrature.
pub const GRID_2D: usize = 256;

/// `π_β` on a `G × G` grid over `[−R, R]²`, as masses of the `(G−1)²` cells.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceGrid2d {
    pub beta: f64,
    /// Cell edges along each axis.
    pub edges: Vec<f64>,
    /// Row-major `(G−1) × (G−1)` cell masses summing to 1; row index is coordinate 0.
    pub cell_mass: Vec<f64>,
    pub ln_normalizer: f64,
}

impl ReferenceGrid2d {
    pub fn cells_per_axis(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn extent(&self) -> f64 {
        *self.edges.last().unwrap()
    }
}

/// Two-dimensional quadrature; cell masses from the corner average.
pub fn quadrature_target_2d(model: &PotentialModel, beta: f64, r: f64, g: usize) -> Result<ReferenceGrid2d> {
    if model.dim() != 2 {
        return Err(KtulaError::InvalidDimension(format!(
            "2-D quadrature needs d = 2, got {}",
            model.dim()
        )));
    }
    check_extent(r, g)?;
    let edges = symmetric_grid(r, g);
    let h = edges[1] - edges[0];
    let mut energy = vec![0.0; g * g];
    for i in 0..g {
        for j in 0..g {
            energy[i * g + j] = beta * model.value(&[edges[i], edges[j]]);
        }
    }
    let e_min = energy.iter().copied().fold(f64::INFINITY, f64::min);
    let weight: Vec<f64> = energy.iter().map(|e| (e_min - e).exp()).collect();
    let mut edge_max: f64 = 0.0;
    for k in 0..g {
        edge_max = edge_max
            .max(weight[k])
            .max(weight[(g - 1) * g + k])
            .max(weight[k * g])
            .max(weight[k * g + g - 1]);
    }
    if edge_max > DECAY_TOLERANCE {
        return Err(KtulaError::Extent(format!(
            "exp(-beta u) at the boundary is {edge_max:e} of its maximum; raise R above {r}"
        )));
    }
    let c = g - 1;
    let mut cell_mass = vec![0.0; c * c];
    for i in 0..c {
        for j in 0..c {
            let w = weight[i * g + j] + weight[(i + 1) * g + j] + weight[i * g + j + 1] + weight[(i + 1) * g + j + 1];
            cell_mass[i * c + j] = 0.25 * h * h * w;
        }
    }
    let total: f64 = cell_mass.iter().sum();
    cell_mass.iter_mut().for_each(|m| *m /= total);
    Ok(ReferenceGrid2d {
        beta,
        edges,
        cell_mass,
        ln_normalizer: total.ln() - e_min,
    })
}

/// `KL(N(0, σ²I_d) ‖ π_β)` for `d ∈ {1, 2}` by quadrature on `[−R, R]^d`.
///
/// Uses `KL = −H(N(0,σ²I_d)) + β E[u] + ln Z`.
pub fn kl_gaussian_init(model: &PotentialModel, beta: f64, sigma: f64, r: f64, g: usize) -> Result<f64> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Ok(f64::INFINITY);
    }
    let d = model.dim();
    let gauss = |x: f64| (-0.5 * x * x / (sigma * sigma)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    let entropy = 0.5 * d as f64 * (2.0 * std::f64::consts::PI * std::f64::consts::E * sigma * sigma).ln();
    match d {
        1 => {
            let target = quadrature_target_1d(model, beta, r, g)?;
            let h = target.spacing();
            let integrand: Vec<f64> = target.grid.iter().map(|x| gauss(*x) * model.value(&[*x])).collect();
            Ok(-entropy + beta * trapezoid(&integrand, h) + target.ln_normalizer)
        }
        2 => {
            let target = quadrature_target_2d(model, beta, r, g)?;
            let e = &target.edges;
            let h = e[1] - e[0];
            let mut rows = Vec::with_capacity(g);
            for &x in e {
                let row: Vec<f64> = e.iter().map(|&y| gauss(x) * gauss(y) * model.value(&[x, y])).collect();
                rows.push(trapezoid(&row, h));
            }
            Ok(-entropy + beta * trapezoid(&rows, h) + target.ln_normalizer)
        }
        _ => Err(KtulaError::InvalidDimension(format!(
            "quadrature KL is available for d in {{1, 2}}, got {d}"
        ))),
    }
}

/// Grid search over `box_` followed by coordinate descent; returns `(θ*, u*)`.
///
/// The per-axis resolution is reduced if `resolution^d` exceeds [`GRID_POINT_CAP`].
pub fn grid_minimize(model: &PotentialModel, box_: &[(f64, f64)], resolution: usize) -> Result<(Vec<f64>, f64)> {
    let d = model.dim();
    if box_.len() != d {
        return Err(KtulaError::DimensionMismatch {
            expected: d,
            got: box_.len(),
        });
    }
    if resolution < 2 {
        return Err(KtulaError::InvalidParameter("resolution must be >= 2".into()));
    }
    if box_.iter().any(|(lo, hi)| !(lo < hi) || !lo.is_finite() || !hi.is_finite()) {
        return Err(KtulaError::InvalidParameter("box bounds must satisfy lo < hi".into()));
    }
    let mut per_axis = resolution;
    while per_axis > 2 && (per_axis as f64).powi(d as i32) > GRID_POINT_CAP as f64 {
        per_axis -= 1;
    }
    let axes: Vec<Vec<f64>> = box_
        .iter()
        .map(|&(lo, hi)| {
            (0..per_axis)
                .map(|i| lo + (hi - lo) * i as f64 / (per_axis - 1) as f64)
                .collect()
        })
        .collect();
    let total = per_axis.pow(d as u32);
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut theta = vec![0.0; d];
    for idx in 0..total {
        let mut rem = idx;
        for k in 0..d {
            theta[k] = axes[k][rem % per_axis];
            rem /= per_axis;
        }
        let v = model.value(&theta);
        if v.is_finite() && best.as_ref().is_none_or(|(_, b)| v < *b) {
            best = Some((theta.clone(), v));
        }
    }
    let (mut x, mut fx) = best.ok_or_else(|| {
        KtulaError::InvalidParameter("u is not finite anywhere on the search grid".into())
    })?;
    let mut steps: Vec<f64> = box_
        .iter()
        .map(|(lo, hi)| (hi - lo) / (per_axis - 1) as f64)
        .collect();
    for _ in 0..REFINEMENT_SWEEPS {
        let mut improved = false;
        for k in 0..d {
            for dir in [1.0, -1.0] {
                let mut y = x.clone();
                y[k] += dir * steps[k];
                let fy = model.value(&y);
                if fy < fx {
                    x = y;
                    fx = fy;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            steps.iter_mut().for_each(|s| *s *= 0.5);
        }
    }
    Ok((x, fx))
}

/// Options for [`reference_chain`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceChainOptions {
    pub n_chains: usize,
    pub thinning: usize,
    pub epsilon_h: f64,
    pub init: InitialLaw,
}

impl Default for ReferenceChainOptions {
    fn default() -> Self {
        Self {
            n_chains: 4,
            thinning: 100,
            epsilon_h: 0.5,
            init: InitialLaw::Gaussian { sigma: 1.0 },
        }
    }
}

/// A fine-step kTULA batch standing in for `π_β`; burn-in is `n_ref/2`.
pub fn reference_chain(
    model: &PotentialModel,
    beta: f64,
    lambda_ref: f64,
    n_ref: usize,
    seed: u64,
    options: &ReferenceChainOptions,
) -> Result<SampleBatch> {
    let cap = lambda_max(model.constants(), options.epsilon_h)?;
    if lambda_ref > cap.lambda_max / 4.0 {
        return Err(KtulaError::InvalidParameter(format!(
            "reference step {lambda_ref} exceeds lambda_max/4 = {}",
            cap.lambda_max / 4.0
        )));
    }
    let init = match &options.init {
        InitialLaw::Constant(c) if c.len() != model.dim() => InitialLaw::Constant(vec![c[0]; model.dim()]),
        other => other.clone(),
    };
    let config = ChainConfig {
        model: model.clone(),
        beta,
        lambda: lambda_ref,
        epsilon_h: options.epsilon_h,
        n_steps: n_ref,
        n_chains: options.n_chains,
        burn_in: n_ref / 2,
        thinning: options.thinning,
        seed,
        init,
        algorithm: Algorithm::Ktula,
        divergence_threshold: DEFAULT_DIVERGENCE_THRESHOLD,
    };
    run_chains(&config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::{make_double_well, make_quadratic};

    #[test]
    fn double_well_target_is_symmetric_and_normalised() {
        let m = make_double_well(1).unwrap();
        let t = quadrature_target_1d(&m, 1.0, 6.0, 4001).unwrap();
        assert_eq!(t.mean(), 0.0);
        assert_eq!(t.moment(3), 0.0);
        assert_eq!(t.moment(5), 0.0);
        let mass = trapezoid(&t.density, t.spacing());
        assert!((mass - 1.0).abs() < 1e-8);
        assert_eq!(*t.cdf.last().unwrap(), 1.0);
        assert!(t.cdf.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn gaussian_second_moment() {
        let m = make_quadratic(1, 1.0).unwrap();
        let t = quadrature_target_1d(&m, 1.0, 10.0, 4001).unwrap();
        assert!((t.moment(2) - 1.0).abs() < 1e-6);
        assert!((t.moment(4) - 3.0).abs() < 1e-6);
        assert!((t.ln_normalizer - 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-8);
    }

    #[test]
    fn insufficient_extent_rejected() {
        let m = make_quadratic(1, 1.0).unwrap();
        assert!(matches!(
            quadrature_target_1d(&m, 1.0, 3.0, 101),
            Err(KtulaError::Extent(_))
        ));
    }

    #[test]
    fn quantile_inverts_cdf() {
        let m = make_double_well(1).unwrap();
        let t = quadrature_target_1d(&m, 1.0, 6.0, 2001).unwrap();
        for &x in t.grid.iter().step_by(37) {
            let c = t.cdf_at(x);
            if c > 1e-12 && c < 1.0 - 1e-12 {
                assert!((t.quantile(c) - x).abs() <= t.spacing(), "x={x}");
            }
        }
    }

    #[test]
    fn minimise_double_well() {
        let m = make_double_well(1).unwrap();
        let (x, u) = grid_minimize(&m, &[(-3.0, 3.0)], 10_000).unwrap();
        assert!((u + 0.25).abs() < 1e-6);
        assert!((x[0].abs() - 1.0).abs() < 1e-3);
        let q = make_quadratic(2, 1.0).unwrap();
        let (x, u) = grid_minimize(&q, &[(-1.0, 1.3), (-2.0, 1.0)], 50).unwrap();
        assert!(u < 1e-12 && x.iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn kl_of_matching_gaussian_is_zero() {
        let q = make_quadratic(1, 1.0).unwrap();
        let kl = kl_gaussian_init(&q, 1.0, 1.0, 12.0, 4001).unwrap();
        assert!(kl.abs() < 1e-8, "{kl}");
        let q2 = make_quadratic(2, 1.0).unwrap();
        let kl2 = kl_gaussian_init(&q2, 1.0, 2.0, 14.0, 801).unwrap();
        // KL(N(0,4I₂) ‖ N(0,I₂)) = 4 − 1 − ln 4
        assert!((kl2 - (3.0 - 4f64.ln())).abs() < 1e-6, "{kl2}");
    }

    #[test]
    fn reference_step_is_capped() {
        let m = make_double_well(1).unwrap();
        let opts = ReferenceChainOptions::default();
        assert!(reference_chain(&m, 1.0, 1e-5, 100, 0, &opts).is_err());
        assert!(reference_chain(&m, 1.0, 9e-6, 100, 0, &opts).is_ok());
    }
}
