//! The `ktula` command-line interface.
//!
//! Every run resolves its configuration, writes `manifest.cfg` into the output
//! directory, then writes its CSV outputs next to it. The manifest is itself a
//! valid `--config` file.

mod config;

use std::fmt::Write as _;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use config::{parse_pairs, PotentialKind, Settings, KEYS};

use crate::bounds::{prescribe, theorem_constants, BoundInputs, PrescriptionMode};
use crate::diagnostics::{
    empirical_moment, excess_risk, fit_rate, grid_kl_1d, grid_kl_2d, kl_extent, sliced_w2,
    wasserstein1_batch, CurvePoint, ErrorCurve, Metric,
};
use crate::error::{KtulaError, Result};
use crate::format::fmt_f64;
use crate::potential::{
    check_regularity, make_double_well, make_neural_net_objective, make_quadratic, random_points,
    NeuralNetObjectiveSpec, PotentialModel,
};
use crate::reference::{
    grid_minimize, kl_gaussian_init, quadrature_target_1d, quadrature_target_2d, reference_chain,
    ReferenceChainOptions, ReferenceTarget, GRID_2D,
};
use crate::sampler::{run_chains, ChainConfig, InitialLaw, SampleBatch};
use crate::taming::{lambda_max, verify_taming_properties, TamingParams};

/// Name of the manifest written into every output directory.
pub const MANIFEST_FILE: &str = "manifest.cfg";

#[derive(Parser, Debug)]
#[command(name = "ktula", version, about = "Tamed unadjusted Langevin sampling toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run kTULA or ULA chains and write samples and moments.
    Sample(RunArgs),
    /// Error-versus-step-size curve and fitted rate.
    Sweep(RunArgs),
    /// Check the tamed drift and regularity inequalities on random points.
    VerifyTaming(RunArgs),
    /// Evaluate the analytic constants and (λ, n, β) prescriptions.
    Bounds(RunArgs),
    /// Sample at large β and report excess risk against a grid minimum.
    Optimize(RunArgs),
    /// Tabulate the one-dimensional target by quadrature.
    Reference(RunArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Treat λ > λ_max and failed inequality checks as errors.
    #[arg(long)]
    strict: bool,
}

impl Command {
    fn parts(&self) -> (&'static str, &RunArgs, &'static [&'static str]) {
        match self {
            Command::Sample(a) => ("sample", a, &["samples.csv", "moments.csv"]),
            Command::Sweep(a) => ("sweep", a, &["curve.csv", "rate.csv"]),
            Command::VerifyTaming(a) => ("verify-taming", a, &["taming.csv", "regularity.csv"]),
            Command::Bounds(a) => ("bounds", a, &["bounds.csv"]),
            Command::Optimize(a) => ("optimize", a, &["optimize.csv"]),
            Command::Reference(a) => ("reference", a, &["reference.csv", "reference_moments.csv"]),
        }
    }
}

/// Exit code for an error: 1 for usage and configuration problems, 2 for
/// numerical failures.
pub fn exit_code(err: &KtulaError) -> i32 {
    match err {
        KtulaError::Overflow { .. }
        | KtulaError::HypothesisViolation(_)
        | KtulaError::Diverged { .. }
        | KtulaError::AllChainsDiverged { .. }
        | KtulaError::Extent(_)
        | KtulaError::Fit(_) => 2,
        _ => 1,
    }
}

/// Runs the CLI on `args` (including the program name) and returns the exit code.
pub fn dispatch(args: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn run(command: &Command) -> Result<()> {
    let (name, args, outputs) = command.parts();
    let mut settings = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| KtulaError::Usage(format!("cannot read config {}: {e}", path.display())))?;
            Settings::parse(&text)?
        }
        None => Settings::default(),
    };
    if let Some(seed) = args.seed {
        settings.seed = seed;
    }
    fs::create_dir_all(&args.out)?;
    write_manifest(&args.out, name, &settings, outputs)?;
    let model = build_model(&settings)?;
    let files = match command {
        Command::Sample(_) => sample(&settings, &model, args.strict)?,
        Command::Sweep(_) => sweep(&settings, &model, args.strict)?,
        Command::VerifyTaming(_) => verify_taming(&settings, &model, args.strict)?,
        Command::Bounds(_) => bounds(&settings, &model)?,
        Command::Optimize(_) => optimize(&settings, &model, args.strict)?,
        Command::Reference(_) => reference(&settings, &model)?,
    };
    for (file, body) in files {
        fs::write(args.out.join(file), body)?;
    }
    Ok(())
}

fn write_manifest(out: &Path, name: &str, settings: &Settings, outputs: &[&str]) -> Result<()> {
    let mut text = String::new();
    let _ = writeln!(text, "# ktula run manifest");
    let _ = writeln!(text, "# subcommand: {name}");
    let _ = writeln!(text, "# version: {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(text, "# seed: {}", settings.seed);
    let _ = writeln!(text, "# outputs: {}", outputs.join(", "));
    text.push_str(&settings.to_config_text());
    fs::write(out.join(MANIFEST_FILE), text)?;
    Ok(())
}

/// The potential described by `settings`.
pub fn build_model(s: &Settings) -> Result<PotentialModel> {
    match s.potential {
        PotentialKind::DoubleWell => make_double_well(s.dim),
        PotentialKind::Quadratic => make_quadratic(s.dim, s.quadratic_a),
        PotentialKind::NeuralNet => {
            let spec = match &s.nn_data {
                Some(path) => {
                    let file = fs::File::open(path).map_err(|e| {
                        KtulaError::Usage(format!("cannot open dataset {}: {e}", path.display()))
                    })?;
                    let (input_dim, data) = NeuralNetObjectiveSpec::read_dataset(BufReader::new(file))?;
                    NeuralNetObjectiveSpec {
                        hidden_width: s.nn_hidden,
                        input_dim,
                        input_weights: NeuralNetObjectiveSpec::random_input_weights(
                            s.nn_hidden,
                            input_dim,
                            s.nn_seed,
                        ),
                        eta: s.nn_eta,
                        data,
                    }
                }
                None => NeuralNetObjectiveSpec::synthetic(
                    s.nn_hidden,
                    s.nn_inputs,
                    s.nn_samples,
                    s.nn_eta,
                    s.nn_seed,
                )?,
            };
            make_neural_net_objective(spec)
        }
    }
}

/// A single constant is broadcast to every coordinate.
fn resolved_init(s: &Settings, dim: usize) -> InitialLaw {
    match &s.init {
        InitialLaw::Constant(c) if c.len() == 1 && dim > 1 => InitialLaw::Constant(vec![c[0]; dim]),
        other => other.clone(),
    }
}

fn chain_config(s: &Settings, model: &PotentialModel, lambda: f64, n_steps: usize, burn_in: usize, seed: u64) -> ChainConfig {
    ChainConfig {
        model: model.clone(),
        beta: s.beta,
        lambda,
        epsilon_h: s.epsilon_h,
        n_steps,
        n_chains: s.n_chains,
        burn_in,
        thinning: s.thinning,
        seed,
        init: resolved_init(s, model.dim()),
        algorithm: s.algorithm,
        divergence_threshold: s.divergence_threshold,
    }
}

fn enforce_cap(s: &Settings, model: &PotentialModel, lambdas: &[f64], strict: bool) -> Result<()> {
    if !strict {
        return Ok(());
    }
    let cap = lambda_max(model.constants(), s.epsilon_h)?.lambda_max;
    if let Some(l) = lambdas.iter().find(|l| **l > cap) {
        return Err(KtulaError::Configuration(format!(
            "step size {l} exceeds lambda_max = {cap} (--strict)"
        )));
    }
    Ok(())
}

fn report_warnings(batch: &SampleBatch) {
    for w in &batch.warnings {
        eprintln!("warning: {w}");
    }
}

type Outputs = Vec<(&'static str, String)>;

fn sample(s: &Settings, model: &PotentialModel, strict: bool) -> Result<Outputs> {
    enforce_cap(s, model, &[s.lambda], strict)?;
    let cfg = chain_config(s, model, s.lambda, s.n_steps, s.burn_in, s.seed);
    let batch = run_chains(&cfg)?;
    report_warnings(&batch);
    let d = model.dim();

    let mut samples = String::from("chain,step");
    for i in 0..d {
        let _ = write!(samples, ",coord_{i}");
    }
    samples.push('\n');
    let mut moments = String::from("chain,n,mean_sq_norm,mean_norm_p4,mean_norm_p6,mean_norm_p8,diverged\n");
    for (c, chain) in batch.chains.iter().enumerate() {
        for (k, row) in chain.samples.chunks_exact(d).enumerate() {
            let _ = write!(samples, "{c},{}", cfg.kept_step(k));
            for x in row {
                let _ = write!(samples, ",{}", fmt_f64(*x));
            }
            samples.push('\n');
        }
        let m = &chain.moments;
        let mean = |p| fmt_f64(m.mean(p).unwrap_or(f64::NAN));
        let _ = writeln!(
            moments,
            "{c},{},{},{},{},{},{}",
            m.count,
            mean(1),
            mean(2),
            mean(3),
            mean(4),
            chain.diverged_at.unwrap_or(0)
        );
    }
    Ok(vec![("samples.csv", samples), ("moments.csv", moments)])
}

/// Error of one batch against whatever reference the metric needs.
enum SweepReference {
    Quadrature(ReferenceTarget),
    Grid2d(crate::reference::ReferenceGrid2d),
    Chain(SampleBatch),
}

fn sweep(s: &Settings, model: &PotentialModel, strict: bool) -> Result<Outputs> {
    if s.lambdas.len() < 3 {
        return Err(KtulaError::Usage(format!(
            "rate fitting needs at least 3 step sizes in `lambdas`, got {}",
            s.lambdas.len()
        )));
    }
    if s.groups < 1 || !(s.horizon > 0.0) {
        return Err(KtulaError::Usage("`groups` must be >= 1 and `horizon` > 0".into()));
    }
    enforce_cap(s, model, &s.lambdas, strict)?;
    let d = model.dim();
    let reference = match (s.metric, d) {
        (Metric::W1_1d, 1) | (Metric::KlGrid, 1) | (Metric::MomentGap, 1) => {
            SweepReference::Quadrature(quadrature_target_1d(model, s.beta, s.reference_r, s.reference_g)?)
        }
        (Metric::W1_1d, _) => {
            return Err(KtulaError::Usage(format!("metric w1_1d needs dim = 1, got {d}")));
        }
        (Metric::KlGrid, 2) => SweepReference::Grid2d(quadrature_target_2d(model, s.beta, s.reference_r, GRID_2D)?),
        (Metric::KlGrid, _) => {
            return Err(KtulaError::Usage(format!("metric kl_grid needs dim <= 2, got {d}")));
        }
        (Metric::SlicedW2, _) | (Metric::MomentGap, _) => {
            let cap = lambda_max(model.constants(), s.epsilon_h)?.lambda_max;
            let smallest = s.lambdas.iter().copied().fold(f64::INFINITY, f64::min);
            let lambda_ref = smallest.min(cap) / 4.0;
            let n_ref = (s.horizon / lambda_ref).ceil() as usize;
            let options = ReferenceChainOptions {
                n_chains: s.n_chains * s.groups,
                thinning: s.thinning,
                epsilon_h: s.epsilon_h,
                init: resolved_init(s, d),
            };
            SweepReference::Chain(reference_chain(
                model,
                s.beta,
                lambda_ref,
                n_ref,
                s.seed.wrapping_add(u64::MAX / 2),
                &options,
            )?)
        }
    };

    let mut points = Vec::with_capacity(s.lambdas.len());
    for (i, &lambda) in s.lambdas.iter().enumerate() {
        let n_steps = (s.horizon / lambda).ceil() as usize;
        let mut errors = Vec::with_capacity(s.groups);
        for g in 0..s.groups {
            let seed = s.seed.wrapping_add((i * s.groups + g) as u64);
            let batch = run_chains(&chain_config(s, model, lambda, n_steps, n_steps / 2, seed))?;
            if g == 0 {
                report_warnings(&batch);
            }
            errors.push(batch_error(s, &batch, &reference, seed)?);
        }
        points.push(CurvePoint::from_groups(lambda, &errors));
    }
    let curve = ErrorCurve::new(points, s.metric)?;
    let fit = fit_rate(&curve)?;
    Ok(vec![("curve.csv", curve.to_csv()), ("rate.csv", fit.to_csv())])
}

fn batch_error(s: &Settings, batch: &SampleBatch, reference: &SweepReference, seed: u64) -> Result<f64> {
    match (s.metric, reference) {
        (Metric::W1_1d, SweepReference::Quadrature(t)) => wasserstein1_batch(batch, t),
        (Metric::KlGrid, SweepReference::Quadrature(t)) => {
            let samples = batch.pooled_samples();
            let extent = s.extent.unwrap_or_else(|| kl_extent(&samples, t));
            grid_kl_1d(&samples, t, s.bins, extent)
        }
        (Metric::KlGrid, SweepReference::Grid2d(t)) => grid_kl_2d(&batch.pooled_samples(), t),
        (Metric::MomentGap, SweepReference::Quadrature(t)) => Ok((empirical_moment(batch, 1)? - t.moment(2)).abs()),
        (Metric::MomentGap, SweepReference::Chain(r)) => {
            Ok((empirical_moment(batch, 1)? - empirical_moment(r, 1)?).abs())
        }
        (Metric::SlicedW2, SweepReference::Chain(r)) => sliced_w2(batch, r, s.n_proj, seed),
        _ => unreachable!("reference kind is chosen from the metric"),
    }
}

fn verify_taming(s: &Settings, model: &PotentialModel, strict: bool) -> Result<Outputs> {
    let tp = TamingParams::for_model(model, s.lambda, s.epsilon_h)?;
    let points = random_points(model.dim(), s.n_points, s.radius, s.seed);
    let taming = verify_taming_properties(model, &tp, &points, s.seed)?;
    let regularity = check_regularity(model, &points, s.seed);
    let failed: Vec<&str> = taming
        .checks
        .iter()
        .chain(&regularity.checks)
        .filter(|c| !c.pass)
        .map(|c| c.property.as_str())
        .collect();
    let files = vec![("taming.csv", taming.to_csv()), ("regularity.csv", regularity.to_csv())];
    if !failed.is_empty() {
        eprintln!("warning: failed checks: {}", failed.join(", "));
        if strict {
            return Err(KtulaError::HypothesisViolation(format!(
                "failed checks: {}",
                failed.join(", ")
            )));
        }
    }
    Ok(files)
}

/// `KL(π₀ ‖ π_β)` by quadrature when the initial law is Gaussian and `d ≤ 2`.
fn auto_kl0(s: &Settings, model: &PotentialModel) -> Result<Option<f64>> {
    match (&s.init, model.dim()) {
        (InitialLaw::Gaussian { sigma }, 1) => {
            kl_gaussian_init(model, s.beta, *sigma, s.reference_r, s.reference_g).map(Some)
        }
        (InitialLaw::Gaussian { sigma }, 2) => kl_gaussian_init(model, s.beta, *sigma, s.reference_r, GRID_2D).map(Some),
        _ => Ok(None),
    }
}

fn bounds(s: &Settings, model: &PotentialModel) -> Result<Outputs> {
    let mut inputs = BoundInputs::for_model(model, s.beta, s.epsilon_h, resolved_init(s, model.dim()));
    inputs.epsilon = s.epsilon;
    inputs.c_ls = s.c_ls;
    if let Some(j0) = s.j0 {
        inputs.j0 = j0;
    }
    inputs.kl0 = match s.kl0 {
        Some(k) => Some(k),
        None => auto_kl0(s, model)?,
    };
    inputs.validate()?;
    let report = theorem_constants(&inputs)?;
    let mut csv = report.to_csv();
    match inputs.kl0 {
        Some(kl0) => {
            let _ = writeln!(csv, "kl0,{}", fmt_f64(kl0));
            for mode in [PrescriptionMode::Kl, PrescriptionMode::W2, PrescriptionMode::ExcessRisk] {
                csv.push_str(&prescribe(&inputs, mode, s.delta)?.to_csv_rows());
            }
        }
        None => eprintln!("warning: kl0 unavailable for this initial law and dimension; set `kl0` for prescriptions"),
    }
    Ok(vec![("bounds.csv", csv)])
}

fn optimize(s: &Settings, model: &PotentialModel, strict: bool) -> Result<Outputs> {
    enforce_cap(s, model, &[s.lambda], strict)?;
    let d = model.dim();
    let box_ = if s.box_.len() == 1 && d > 1 {
        vec![s.box_[0]; d]
    } else {
        s.box_.clone()
    };
    let (theta_star, u_star) = grid_minimize(model, &box_, s.resolution)?;
    let batch = run_chains(&chain_config(s, model, s.lambda, s.n_steps, s.burn_in, s.seed))?;
    report_warnings(&batch);
    let risk = excess_risk(&batch, model, u_star)?;
    let mut csv = String::from("quantity,value\n");
    let _ = writeln!(csv, "u_star,{}", fmt_f64(u_star));
    let _ = writeln!(csv, "mean_final_u,{}", fmt_f64(u_star + risk));
    let _ = writeln!(csv, "excess_risk,{}", fmt_f64(risk));
    let _ = writeln!(csv, "healthy_chains,{}", batch.chains.len() - batch.n_diverged());
    for (i, x) in theta_star.iter().enumerate() {
        let _ = writeln!(csv, "theta_star_{i},{}", fmt_f64(*x));
    }
    Ok(vec![("optimize.csv", csv)])
}

fn reference(s: &Settings, model: &PotentialModel) -> Result<Outputs> {
    if model.dim() != 1 {
        return Err(KtulaError::InvalidDimension(format!(
            "the reference table is one-dimensional, got dim = {}",
            model.dim()
        )));
    }
    let target = quadrature_target_1d(model, s.beta, s.reference_r, s.reference_g)?;
    let mut moments = String::from("quantity,value\n");
    let _ = writeln!(moments, "ln_normalizer,{}", fmt_f64(target.ln_normalizer));
    for k in 1..=6 {
        let _ = writeln!(moments, "moment_{k},{}", fmt_f64(target.moment(k)));
    }
    Ok(vec![("reference.csv", target.to_csv()), ("reference_moments.csv", moments)])
}
