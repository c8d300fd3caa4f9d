//! Distances between samples and references, moments, excess risk and
//! step-size rate fits.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{KtulaError, Result};
use crate::format::fmt_f64;
use crate::linalg::{dot, norm_sq};
use crate::potential::PotentialModel;
use crate::reference::{ReferenceGrid2d, ReferenceTarget};
use crate::sampler::SampleBatch;

/// Default number of projections for [`sliced_w2`].
pub const DEFAULT_PROJECTIONS: usize = 64;

/// Reference mass that must fall inside the KL histogram range.
pub const KL_MASS_TOLERANCE: f64 = 1e-6;

/// Anything with a quantile function.
pub trait Quantile {
    fn quantile(&self, u: f64) -> f64;
}

impl Quantile for ReferenceTarget {
    fn quantile(&self, u: f64) -> f64 {
        ReferenceTarget::quantile(self, u)
    }
}

impl<F: Fn(f64) -> f64> Quantile for F {
    fn quantile(&self, u: f64) -> f64 {
        self(u)
    }
}

fn require_samples(batch: &SampleBatch) -> Result<()> {
    if batch.healthy_chains().next().is_none() {
        return Err(KtulaError::AllChainsDiverged {
            n_chains: batch.chains.len(),
            first_steps: batch.divergence_flags(),
        });
    }
    Ok(())
}

/// Mean of `|θ|^{2p}` over rows of a row-major `n × dim` sample matrix.
pub fn moment_of_samples(samples: &[f64], dim: usize, p: u32) -> f64 {
    let n = samples.len() / dim;
    if n == 0 {
        return f64::NAN;
    }
    samples
        .chunks_exact(dim)
        .map(|row| norm_sq(row).powi(p as i32))
        .sum::<f64>()
        / n as f64
}

/// Mean of `|θ|^{2p}` over kept samples of the non-divergent chains.
pub fn empirical_moment(batch: &SampleBatch, p: u32) -> Result<f64> {
    require_samples(batch)?;
    if p == 0 {
        return Err(KtulaError::InvalidParameter("moment order p must be >= 1".into()));
    }
    let samples = batch.pooled_samples();
    if samples.is_empty() {
        return Err(KtulaError::InvalidParameter("batch holds no kept samples".into()));
    }
    Ok(moment_of_samples(&samples, batch.dim(), p))
}

/// `(1/n) Σ |x_(i) − Q((i − 1/2)/n)|` with `x_(i)` the order statistics.
pub fn wasserstein1_1d<Q: Quantile + ?Sized>(samples: &[f64], reference: &Q) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, x)| (x - reference.quantile((i as f64 + 0.5) / n)).abs())
        .sum::<f64>()
        / n
}

/// [`wasserstein1_1d`] on the pooled samples of a one-dimensional batch.
pub fn wasserstein1_batch<Q: Quantile + ?Sized>(batch: &SampleBatch, reference: &Q) -> Result<f64> {
    if batch.dim() != 1 {
        return Err(KtulaError::InvalidDimension(format!(
            "1-D Wasserstein distance needs d = 1, got {}",
            batch.dim()
        )));
    }
    require_samples(batch)?;
    Ok(wasserstein1_1d(&batch.pooled_samples(), reference))
}

/// `n` seeded uniform unit vectors in `ℝ^dim`.
pub fn random_directions(dim: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| loop {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = norm_sq(&v).sqrt();
            if norm > 0.0 {
                break v.into_iter().map(|x| x / norm).collect();
            }
        })
        .collect()
}

/// Every `n_large/n`-th row so both sets have `n` rows.
fn subsample(rows: &[f64], dim: usize, n: usize) -> Vec<f64> {
    let total = rows.len() / dim;
    if total == n {
        return rows.to_vec();
    }
    (0..n)
        .flat_map(|i| {
            let k = i * total / n;
            rows[k * dim..(k + 1) * dim].iter().copied()
        })
        .collect()
}

/// Sliced `W₂` with explicit unit directions; `a`, `b` are row-major with `dim` columns.
pub fn sliced_w2_with_directions(a: &[f64], b: &[f64], dim: usize, directions: &[Vec<f64>]) -> Result<f64> {
    if a.len() % dim != 0 || b.len() % dim != 0 {
        return Err(KtulaError::DimensionMismatch {
            expected: dim,
            got: if a.len() % dim != 0 { a.len() % dim } else { b.len() % dim },
        });
    }
    if let Some(dir) = directions.iter().find(|d| d.len() != dim) {
        return Err(KtulaError::DimensionMismatch {
            expected: dim,
            got: dir.len(),
        });
    }
    let n = (a.len() / dim).min(b.len() / dim);
    if n == 0 || directions.is_empty() {
        return Err(KtulaError::InvalidParameter("sliced W2 needs samples and directions".into()));
    }
    let a = subsample(a, dim, n);
    let b = subsample(b, dim, n);
    let mut total = 0.0;
    for dir in directions {
        let mut pa: Vec<f64> = a.chunks_exact(dim).map(|r| dot(r, dir)).collect();
        let mut pb: Vec<f64> = b.chunks_exact(dim).map(|r| dot(r, dir)).collect();
        pa.sort_by(f64::total_cmp);
        pb.sort_by(f64::total_cmp);
        total += pa.iter().zip(&pb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n as f64;
    }
    Ok((total / directions.len() as f64).sqrt())
}

/// Root mean over `n_proj` seeded projections of the squared 1-D `W₂` between the
/// projected samples.
pub fn sliced_w2(a: &SampleBatch, b: &SampleBatch, n_proj: usize, seed: u64) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(KtulaError::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    require_samples(a)?;
    require_samples(b)?;
    let dirs = random_directions(a.dim(), n_proj, seed);
    sliced_w2_with_directions(&a.pooled_samples(), &b.pooled_samples(), a.dim(), &dirs)
}

/// `Σ p_i ln(p_i/q_i)` over bins with `p_i > 0`; `q_i` is floored at the
/// smallest positive normal `f64`.
pub fn kl_from_masses(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi / qi.max(f64::MIN_POSITIVE)).ln())
        .sum::<f64>()
        .max(0.0)
}

/// Histogram masses with `1/(n·bins)` added to every bin, renormalised.
fn smoothed_histogram(counts: &[u64], n: usize) -> Vec<f64> {
    let bins = counts.len() as f64;
    let nf = n as f64;
    let total = 1.0 + 1.0 / nf;
    counts
        .iter()
        .map(|&c| (c as f64 / nf + 1.0 / (nf * bins)) / total)
        .collect()
}

/// `KL(p̂ ‖ q)` between a smoothed histogram on `[−extent, extent]` and the
/// reference mass of each bin.
pub fn grid_kl_1d(samples: &[f64], reference: &ReferenceTarget, bins: usize, extent: f64) -> Result<f64> {
    if bins == 0 || samples.is_empty() {
        return Err(KtulaError::InvalidParameter("grid KL needs bins and samples".into()));
    }
    let inside = reference.cdf_at(extent) - reference.cdf_at(-extent);
    if inside < 1.0 - KL_MASS_TOLERANCE {
        return Err(KtulaError::Extent(format!(
            "reference mass in [-{extent}, {extent}] is {inside}; widen the extent"
        )));
    }
    if let Some(x) = samples.iter().find(|x| !(x.abs() <= extent)) {
        return Err(KtulaError::Extent(format!(
            "sample {x} lies outside [-{extent}, {extent}]"
        )));
    }
    let width = 2.0 * extent / bins as f64;
    let mut counts = vec![0u64; bins];
    for x in samples {
        let k = (((x + extent) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    let p = smoothed_histogram(&counts, samples.len());
    let q: Vec<f64> = (0..bins)
        .map(|k| {
            let lo = -extent + k as f64 * width;
            let hi = if k + 1 == bins { extent } else { lo + width };
            (reference.cdf_at(hi) - reference.cdf_at(lo)) / inside
        })
        .collect();
    Ok(kl_from_masses(&p, &q))
}

/// Smallest symmetric range holding every sample and all but `10⁻⁸` of the
/// reference mass on each side.
pub fn kl_extent(samples: &[f64], reference: &ReferenceTarget) -> f64 {
    let tail = reference.quantile(1e-8).abs().max(reference.quantile(1.0 - 1e-8).abs());
    samples.iter().fold(tail, |m, x| m.max(x.abs()))
}

/// Two-dimensional analogue of [`grid_kl_1d`] on the reference's own cells.
pub fn grid_kl_2d(samples: &[f64], reference: &ReferenceGrid2d) -> Result<f64> {
    let c = reference.cells_per_axis();
    let extent = reference.extent();
    let n = samples.len() / 2;
    if n == 0 || samples.len() % 2 != 0 {
        return Err(KtulaError::InvalidParameter("grid KL needs 2-D samples".into()));
    }
    let width = 2.0 * extent / c as f64;
    let mut counts = vec![0u64; c * c];
    for row in samples.chunks_exact(2) {
        if !(row[0].abs() <= extent && row[1].abs() <= extent) {
            return Err(KtulaError::Extent(format!(
                "sample ({}, {}) lies outside the reference grid",
                row[0], row[1]
            )));
        }
        let i = (((row[0] + extent) / width) as usize).min(c - 1);
        let j = (((row[1] + extent) / width) as usize).min(c - 1);
        counts[i * c + j] += 1;
    }
    Ok(kl_from_masses(&smoothed_histogram(&counts, n), &reference.cell_mass))
}

/// Mean of `u` over the final states of non-divergent chains, minus `u_star`.
/// Not clamped at zero.
pub fn excess_risk(batch: &SampleBatch, model: &PotentialModel, u_star: f64) -> Result<f64> {
    require_samples(batch)?;
    let finals = batch.final_states();
    let mean = finals.iter().map(|t| model.value(t)).sum::<f64>() / finals.len() as f64;
    Ok(mean - u_star)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    W1_1d,
    SlicedW2,
    KlGrid,
    MomentGap,
}

impl Metric {
    pub fn as_str(&self) -> &'static str {
        match self {
            Metric::W1_1d => "w1_1d",
            Metric::SlicedW2 => "sliced_w2",
            Metric::KlGrid => "kl_grid",
            Metric::MomentGap => "moment_gap",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = KtulaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "w1_1d" => Ok(Metric::W1_1d),
            "sliced_w2" => Ok(Metric::SlicedW2),
            "kl_grid" => Ok(Metric::KlGrid),
            "moment_gap" => Ok(Metric::MomentGap),
            other => Err(KtulaError::Usage(format!(
                "unknown metric `{other}` (expected w1_1d, sliced_w2, kl_grid or moment_gap)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub lambda: f64,
    pub error: f64,
    pub error_std: f64,
}

impl CurvePoint {
    /// Mean and sample standard deviation of per-group errors.
    pub fn from_groups(lambda: f64, errors: &[f64]) -> Self {
        let n = errors.len() as f64;
        let mean = errors.iter().sum::<f64>() / n;
        let var = if errors.len() > 1 {
            errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            lambda,
            error: mean,
            error_std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorCurve {
    pub points: Vec<CurvePoint>,
    pub metric: Metric,
}

impl ErrorCurve {
    pub fn new(points: Vec<CurvePoint>, metric: Metric) -> Result<Self> {
        let lambdas: Vec<f64> = points.iter().map(|p| p.lambda).collect();
        let inc = lambdas.windows(2).all(|w| w[1] > w[0]);
        let dec = lambdas.windows(2).all(|w| w[1] < w[0]);
        if !(inc || dec) {
            return Err(KtulaError::InvalidParameter(
                "step sizes must be strictly monotone".into(),
            ));
        }
        if points.iter().any(|p| !(p.error.is_finite() && p.error >= 0.0)) {
            return Err(KtulaError::InvalidParameter("errors must be finite and >= 0".into()));
        }
        Ok(Self { points, metric })
    }

    /// CSV `lambda,error,error_std,metric`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("lambda,error,error_std,metric\n");
        for p in &self.points {
            s.push_str(&format!(
                "{},{},{},{}\n",
                fmt_f64(p.lambda),
                fmt_f64(p.error),
                fmt_f64(p.error_std),
                self.metric.as_str()
            ));
        }
        s
    }
}

/// Ordinary least squares of `ln error` on `ln λ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

impl RateFit {
    /// CSV `slope,intercept,r2` with one data row.
    pub fn to_csv(&self) -> String {
        format!(
            "slope,intercept,r2\n{},{},{}\n",
            fmt_f64(self.slope),
            fmt_f64(self.intercept),
            fmt_f64(self.r2)
        )
    }
}

pub fn fit_rate(curve: &ErrorCurve) -> Result<RateFit> {
    let pts = &curve.points;
    if pts.len() < 3 {
        return Err(KtulaError::Fit(format!(
            "rate fitting needs at least 3 points, got {}",
            pts.len()
        )));
    }
    if pts.iter().any(|p| !(p.error > 0.0) || !(p.lambda > 0.0)) {
        return Err(KtulaError::Fit("errors and step sizes must be > 0".into()));
    }
    let xs: Vec<f64> = pts.iter().map(|p| p.lambda.ln()).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.error.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    let r2 = if syy == 0.0 { 1.0 } else { (1.0 - sse / syy).clamp(0.0, 1.0) };
    Ok(RateFit { slope, intercept, r2 })
}
