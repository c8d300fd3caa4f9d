//! kTULA and ULA chains.
//!
//! Chain `k` of a run seeded with `s` draws from `ChaCha8Rng::seed_from_u64(s)`
//! switched to stream `k`, so every chain is reproducible on its own and chains
//! never share random numbers. Gaussian increments use the ziggurat sampler of
//! `rand_distr::StandardNormal`. With a Gaussian initial law the first `d`
//! normals of the stream give `θ₀`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{KtulaError, Result};
use crate::linalg::norm_sq;
use crate::potential::PotentialModel;
use crate::taming::{check_exponent, lambda_max, Tamer, TamingParams};

pub const DEFAULT_DIVERGENCE_THRESHOLD: f64 = 1e12;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "KTULA_THREADS";

/// Chains are processed in blocks of this size when a trace is requested.
const TRACE_BLOCK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Ktula,
    Ula,
}

impl Algorithm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::Ktula => "ktula",
            Algorithm::Ula => "ula",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = KtulaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ktula" => Ok(Algorithm::Ktula),
            "ula" => Ok(Algorithm::Ula),
            other => Err(KtulaError::Usage(format!(
                "unknown algorithm `{other}` (expected ktula or ula)"
            ))),
        }
    }
}

/// Initial law of `θ₀`.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialLaw {
    Constant(Vec<f64>),
    /// Isotropic `N(0, σ²I_d)`.
    Gaussian { sigma: f64 },
}

impl InitialLaw {
    /// `E|θ₀|^{2p}`.
    pub fn even_moment(&self, dim: usize, p: u32) -> f64 {
        match self {
            InitialLaw::Constant(c) => norm_sq(c).powi(p as i32),
            InitialLaw::Gaussian { sigma } => {
                let d = dim as f64;
                (0..p).map(|k| d + 2.0 * k as f64).product::<f64>() * sigma.powi(2 * p as i32)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ChainConfig {
    pub model: PotentialModel,
    pub beta: f64,
    pub lambda: f64,
    pub epsilon_h: f64,
    pub n_steps: usize,
    pub n_chains: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub seed: u64,
    pub init: InitialLaw,
    pub algorithm: Algorithm,
    pub divergence_threshold: f64,
}

impl ChainConfig {
    /// A single kTULA chain with no burn-in, no thinning and `θ₀ = 0`.
    pub fn new(model: PotentialModel, beta: f64, lambda: f64, n_steps: usize) -> Self {
        let dim = model.dim();
        Self {
            model,
            beta,
            lambda,
            epsilon_h: 0.5,
            n_steps,
            n_chains: 1,
            burn_in: 0,
            thinning: 1,
            seed: 0,
            init: InitialLaw::Constant(vec![0.0; dim]),
            algorithm: Algorithm::Ktula,
            divergence_threshold: DEFAULT_DIVERGENCE_THRESHOLD,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [("beta", self.beta), ("lambda", self.lambda)];
        for (name, v) in positive {
            if !(v > 0.0) || v.is_nan() {
                return Err(KtulaError::InvalidParameter(format!(
                    "{name} must be > 0, got {v}"
                )));
            }
        }
        check_exponent(self.epsilon_h)?;
        if self.n_steps < 1 || self.n_chains < 1 || self.thinning < 1 {
            return Err(KtulaError::InvalidParameter(
                "n_steps, n_chains and thinning must be >= 1".into(),
            ));
        }
        if self.burn_in >= self.n_steps {
            return Err(KtulaError::InvalidParameter(format!(
                "burn_in ({}) must be < n_steps ({})",
                self.burn_in, self.n_steps
            )));
        }
        if !(self.divergence_threshold > 0.0) {
            return Err(KtulaError::InvalidParameter(
                "divergence_threshold must be > 0".into(),
            ));
        }
        match &self.init {
            InitialLaw::Constant(c) => {
                if c.len() != self.model.dim() {
                    return Err(KtulaError::DimensionMismatch {
                        expected: self.model.dim(),
                        got: c.len(),
                    });
                }
                if c.iter().any(|x| !x.is_finite()) {
                    return Err(KtulaError::InvalidParameter(
                        "initial state must be finite".into(),
                    ));
                }
            }
            InitialLaw::Gaussian { sigma } => {
                if !(sigma.is_finite() && *sigma >= 0.0) {
                    return Err(KtulaError::InvalidParameter(format!(
                        "initial sigma must be >= 0, got {sigma}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn taming(&self) -> Result<TamingParams> {
        TamingParams::for_model(&self.model, self.lambda, self.epsilon_h)
    }

    /// Number of samples a non-divergent chain keeps.
    pub fn kept_per_chain(&self) -> usize {
        (self.n_steps - self.burn_in) / self.thinning
    }

    /// Step index of the `k`-th kept sample (0-based `k`).
    pub fn kept_step(&self, k: usize) -> usize {
        self.burn_in + (k + 1) * self.thinning
    }
}

/// Running sums of `|θ|^{2p}`, `p = 1..4`, over post-burn-in steps.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MomentAccumulator {
    pub count: u64,
    pub sums: [f64; 4],
}

impl MomentAccumulator {
    #[inline]
    fn push(&mut self, r2: f64) {
        self.count += 1;
        let r4 = r2 * r2;
        self.sums[0] += r2;
        self.sums[1] += r4;
        self.sums[2] += r4 * r2;
        self.sums[3] += r4 * r4;
    }

    /// Mean of `|θ|^{2p}` for `p ∈ 1..=4`; `None` when empty or `p` is out of range.
    pub fn mean(&self, p: usize) -> Option<f64> {
        if self.count == 0 || !(1..=4).contains(&p) {
            return None;
        }
        Some(self.sums[p - 1] / self.count as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainResult {
    /// Kept samples, row-major `n_kept × d`.
    pub samples: Vec<f64>,
    pub moments: MomentAccumulator,
    /// First step at which the chain left the threshold ball or became non-finite.
    pub diverged_at: Option<usize>,
    /// State after the last step (the frozen state for divergent chains).
    pub final_state: Vec<f64>,
}

impl ChainResult {
    pub fn n_kept(&self, dim: usize) -> usize {
        self.samples.len() / dim
    }
}

#[derive(Debug, Clone)]
pub struct SampleBatch {
    pub config: ChainConfig,
    pub chains: Vec<ChainResult>,
    pub warnings: Vec<String>,
}

impl SampleBatch {
    pub fn dim(&self) -> usize {
        self.config.model.dim()
    }

    pub fn healthy_chains(&self) -> impl Iterator<Item = &ChainResult> {
        self.chains.iter().filter(|c| c.diverged_at.is_none())
    }

    pub fn divergence_flags(&self) -> Vec<Option<usize>> {
        self.chains.iter().map(|c| c.diverged_at).collect()
    }

    pub fn n_diverged(&self) -> usize {
        self.chains.iter().filter(|c| c.diverged_at.is_some()).count()
    }

    /// Kept samples of non-divergent chains in chain order, row-major `n × d`.
    pub fn pooled_samples(&self) -> Vec<f64> {
        self.healthy_chains()
            .flat_map(|c| c.samples.iter().copied())
            .collect()
    }

    /// Coordinate `i` of every pooled sample.
    pub fn coordinate(&self, i: usize) -> Vec<f64> {
        let d = self.dim();
        self.healthy_chains()
            .flat_map(|c| c.samples.iter().skip(i).step_by(d).copied())
            .collect()
    }

    /// Final states of non-divergent chains.
    pub fn final_states(&self) -> Vec<&[f64]> {
        self.healthy_chains().map(|c| c.final_state.as_slice()).collect()
    }
}

fn check_step_inputs(model: &PotentialModel, theta: &[f64], xi: &[f64]) -> Result<()> {
    let d = model.dim();
    for len in [theta.len(), xi.len()] {
        if len != d {
            return Err(KtulaError::DimensionMismatch {
                expected: d,
                got: len,
            });
        }
    }
    Ok(())
}

fn finish_step(theta: &[f64], drift: &mut [f64], step: f64, noise: f64, xi: &[f64]) -> Result<Vec<f64>> {
    for ((d, t), x) in drift.iter_mut().zip(theta).zip(xi) {
        *d = t - step * *d + noise * x;
    }
    if drift.iter().any(|x| !x.is_finite()) {
        return Err(KtulaError::Diverged { step: 1 });
    }
    Ok(drift.to_vec())
}

/// One kTULA step `θ − λh_λ(θ) + √(2λ/β) ξ`.
pub fn ktula_step(
    theta: &[f64],
    model: &PotentialModel,
    tp: &TamingParams,
    beta: f64,
    xi: &[f64],
) -> Result<Vec<f64>> {
    check_step_inputs(model, theta, xi)?;
    let mut drift = model.gradient(theta);
    Tamer::new(tp).tame_in_place(theta, &mut drift);
    finish_step(theta, &mut drift, tp.step, (2.0 * tp.step / beta).sqrt(), xi)
}

/// One ULA step `θ − λh(θ) + √(2λ/β) ξ`.
pub fn ula_step(
    theta: &[f64],
    model: &PotentialModel,
    lambda: f64,
    beta: f64,
    xi: &[f64],
) -> Result<Vec<f64>> {
    check_step_inputs(model, theta, xi)?;
    let mut drift = model.gradient(theta);
    finish_step(theta, &mut drift, lambda, (2.0 * lambda / beta).sqrt(), xi)
}

/// Runs every chain of `config`.
pub fn run_chains(config: &ChainConfig) -> Result<SampleBatch> {
    run_impl(config, false).map(|(batch, _)| batch)
}

/// Like [`run_chains`], also returning the ensemble mean of `|θ_n|²` for
/// `n = 0..=n_steps`, averaged over non-divergent chains in chain order.
pub fn run_chains_with_trace(config: &ChainConfig) -> Result<(SampleBatch, Vec<f64>)> {
    run_impl(config, true)
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let threads = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| KtulaError::Configuration(format!("thread pool: {e}")))
}

fn run_impl(config: &ChainConfig, trace: bool) -> Result<(SampleBatch, Vec<f64>)> {
    config.validate()?;
    let tp = config.taming()?;
    let mut warnings = Vec::new();
    let cap = lambda_max(config.model.constants(), config.epsilon_h)?;
    if config.lambda > cap.lambda_max {
        let msg = format!(
            "step size {} exceeds lambda_max {}; moment and convergence bounds do not apply",
            config.lambda, cap.lambda_max
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let pool = thread_pool()?;
    let mut chains = Vec::with_capacity(config.n_chains);
    let mut trace_sum = if trace { vec![0.0; config.n_steps + 1] } else { Vec::new() };
    let block = if trace { TRACE_BLOCK } else { config.n_chains };
    let mut start = 0;
    while start < config.n_chains {
        let end = (start + block).min(config.n_chains);
        let results: Vec<(ChainResult, Vec<f64>)> = pool.install(|| {
            (start..end)
                .into_par_iter()
                .map(|k| run_one(config, &tp, k, trace))
                .collect()
        });
        for (chain, tr) in results {
            if trace && chain.diverged_at.is_none() {
                for (s, v) in trace_sum.iter_mut().zip(&tr) {
                    *s += v;
                }
            }
            chains.push(chain);
        }
        start = end;
    }
    let healthy = chains.iter().filter(|c| c.diverged_at.is_none()).count();
    if healthy == 0 {
        return Err(KtulaError::AllChainsDiverged {
            n_chains: config.n_chains,
            first_steps: chains.iter().map(|c| c.diverged_at).collect(),
        });
    }
    if trace {
        trace_sum.iter_mut().for_each(|s| *s /= healthy as f64);
    }
    Ok((
        SampleBatch {
            config: config.clone(),
            chains,
            warnings,
        },
        trace_sum,
    ))
}

fn run_one(config: &ChainConfig, tp: &TamingParams, chain: usize, trace: bool) -> (ChainResult, Vec<f64>) {
    let d = config.model.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(chain as u64);
    let mut theta: Vec<f64> = match &config.init {
        InitialLaw::Constant(c) => c.clone(),
        InitialLaw::Gaussian { sigma } => (0..d)
            .map(|_| sigma * Distribution::<f64>::sample(&StandardNormal, &mut rng))
            .collect(),
    };
    let tamer = Tamer::new(tp);
    let tame = config.algorithm == Algorithm::Ktula;
    let step = config.lambda;
    let noise = (2.0 * step / config.beta).sqrt();
    let threshold_sq = config.divergence_threshold * config.divergence_threshold;
    let mut drift = vec![0.0; d];
    let mut samples = Vec::with_capacity(config.kept_per_chain() * d);
    let mut moments = MomentAccumulator::default();
    let mut diverged_at = None;
    let mut tr = Vec::new();
    if trace {
        tr.reserve(config.n_steps + 1);
        tr.push(norm_sq(&theta));
    }
    let mut next_keep = config.burn_in + config.thinning;

    for n in 1..=config.n_steps {
        config.model.gradient_into(&theta, &mut drift);
        if tame {
            tamer.tame_in_place(&theta, &mut drift);
        }
        for (t, g) in theta.iter_mut().zip(&drift) {
            let xi: f64 = StandardNormal.sample(&mut rng);
            *t += -step * g + noise * xi;
        }
        let r2 = norm_sq(&theta);
        if !(r2 <= threshold_sq) {
            diverged_at = Some(n);
            break;
        }
        if trace {
            tr.push(r2);
        }
        if n > config.burn_in {
            moments.push(r2);
            if n == next_keep {
                samples.extend_from_slice(&theta);
                next_keep += config.thinning;
            }
        }
    }
    (
        ChainResult {
            samples,
            moments,
            diverged_at,
            final_state: theta,
        },
        tr,
    )
}
