use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use ktula::bounds::{theorem_constants, BoundInputs};
use ktula::diagnostics::{excess_risk, grid_kl_1d, kl_extent, wasserstein1_1d};
use ktula::potential::{
    make_double_well, make_neural_net_objective, make_quadratic, random_points, NeuralNetObjectiveSpec,
    ParameterVector, PotentialModel,
};
use ktula::reference::{grid_minimize, quadrature_target_1d};
use ktula::sampler::{run_chains, run_chains_with_trace, Algorithm, ChainConfig, InitialLaw};
use ktula::taming::{lambda_max, tamed_drift, tamed_drift_jacobian, verify_taming_properties, TamingParams};
use ktula::KtulaError;
use tempfile::TempDir;

/// Runs one criterion, prints its `[PASS]`/`[FAIL]` line and returns the verdict.
fn criterion(id: &str, limit: Duration, body: impl FnOnce() -> (bool, String)) -> bool {
    let start = Instant::now();
    let (ok, detail) = body();
    let elapsed = start.elapsed();
    let in_time = elapsed < limit;
    let pass = ok && in_time;
    println!(
        "[{}] {id}: {detail}; {:.1}s (limit {}s)",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
    pass
}

fn pv(v: &[f64]) -> ParameterVector {
    ParameterVector::new(v.to_vec()).unwrap()
}

fn nn_model(d1: usize, inputs: usize, n: usize, seed: u64) -> PotentialModel {
    make_neural_net_objective(NeuralNetObjectiveSpec::synthetic(d1, inputs, n, 1.0, seed).unwrap()).unwrap()
}

fn ac1_taming_property_suite() -> bool {
    criterion("AC1 taming properties", Duration::from_secs(10), || {
        let mut worst = f64::INFINITY;
        let mut runs = Vec::new();
        for eps in [0.1, 0.25, 0.5] {
            runs.push((make_double_well(2).unwrap(), eps));
        }
        runs.push((nn_model(3, 2, 8, 0), 0.5));
        for (model, eps) in &runs {
            let tp = TamingParams::for_model(model, 1e-5, *eps).unwrap();
            let points = random_points(model.dim(), 10_000, 10.0, 1);
            let report = verify_taming_properties(model, &tp, &points, 2).unwrap();
            for c in &report.checks {
                worst = worst.min(c.worst_margin);
            }
        }
        (worst >= -1e-9, format!("worst margin {worst:.3e} over 4 runs × 10⁴ points"))
    })
}

fn ac2_jacobian_consistency() -> bool {
    criterion("AC2 Jacobian and gradient FD", Duration::from_secs(30), || {
        let h = 1e-5;
        let models = [make_double_well(3).unwrap(), nn_model(3, 2, 8, 0)];
        let mut worst_jac: f64 = 0.0;
        for model in &models {
            let d = model.dim();
            let tp = TamingParams::for_model(model, 1e-5, 0.5).unwrap();
            for p in random_points(d, 200, 10.0, 3) {
                let theta = p.as_slice();
                let jac = tamed_drift_jacobian(model, &tp, &p).unwrap();
                let mut err: f64 = 0.0;
                for j in 0..d {
                    let mut up = theta.to_vec();
                    let mut dn = theta.to_vec();
                    up[j] += h;
                    dn[j] -= h;
                    let hu = tamed_drift(model, &tp, &pv(&up)).unwrap();
                    let hd = tamed_drift(model, &tp, &pv(&dn)).unwrap();
                    for i in 0..d {
                        err = err.max((jac[(i, j)] - (hu[i] - hd[i]) / (2.0 * h)).abs());
                    }
                }
                worst_jac = worst_jac.max(err / jac.amax().max(1.0));
            }
        }
        let nn = &models[1];
        let mut worst_grad: f64 = 0.0;
        for p in random_points(nn.dim(), 200, 10.0, 4) {
            let theta = p.as_slice();
            let g = nn.gradient(theta);
            let mut err: f64 = 0.0;
            for j in 0..theta.len() {
                let mut up = theta.to_vec();
                let mut dn = theta.to_vec();
                up[j] += h;
                dn[j] -= h;
                err = err.max((g[j] - (nn.value(&up) - nn.value(&dn)) / (2.0 * h)).abs());
            }
            let scale = g.iter().fold(1.0f64, |m, x| m.max(x.abs()));
            worst_grad = worst_grad.max(err / scale);
        }
        (
            worst_jac < 1e-5 && worst_grad < 1e-5,
            format!("max rel error Jacobian {worst_jac:.2e}, NN gradient {worst_grad:.2e}"),
        )
    })
}

fn ac3_constants_calculator() -> bool {
    criterion("AC3 exact constants", Duration::from_secs(1), || {
        let m = make_double_well(10).unwrap();
        let cap = lambda_max(m.constants(), 0.5).unwrap();
        let mut ok = cap.l0 == 26.5 && cap.lambda_max == (1.0f64 / 159.0).powi(2);
        let mut inputs = BoundInputs::for_model(&m, 1.0, 0.5, InitialLaw::Constant(vec![0.0; 10]));
        inputs.j0 = 10.0;
        let r = theorem_constants(&inputs).unwrap();
        ok &= r.c0 == 56.5 && r.moment_bound == 169.5;
        for c_ls in [0.5, 1.0, 2.0] {
            inputs.c_ls = c_ls;
            let r = theorem_constants(&inputs).unwrap();
            ok &= r.c_0 == 3.0 * c_ls / 2.0 && r.c_2 == (2.0 * c_ls).sqrt();
        }
        (
            ok,
            format!(
                "L0 = {}, lambda_max = {:e}, c0 = {}, M2 = {}, C0/C2 over C_LS ∈ {{0.5, 1, 2}}",
                cap.l0, cap.lambda_max, r.c0, r.moment_bound
            ),
        )
    })
}

fn ac4_moment_boundedness() -> bool {
    criterion("AC4 moment bound", Duration::from_secs(120), || {
        let mut cfg = ChainConfig::new(make_double_well(10).unwrap(), 1.0, 3e-5, 200_000);
        cfg.n_chains = 64;
        cfg.burn_in = 100_000;
        cfg.thinning = 1000;
        let (_, trace) = run_chains_with_trace(&cfg).unwrap();
        let peak = trace.iter().copied().fold(0.0, f64::max);
        (peak <= 169.5, format!("max running mean |θ_n|² = {peak:.4} (bound 169.5)"))
    })
}

fn ac5_stability_contrast() -> bool {
    criterion("AC5 ULA diverges, kTULA does not", Duration::from_secs(10), || {
        let mut cfg = ChainConfig::new(make_double_well(1).unwrap(), 1.0, 0.1, 100_000);
        cfg.n_chains = 64;
        cfg.burn_in = 50_000;
        cfg.thinning = 1000;
        cfg.init = InitialLaw::Constant(vec![10.0]);
        cfg.divergence_threshold = 1e12;
        cfg.algorithm = Algorithm::Ula;
        let flags = match run_chains(&cfg) {
            Ok(batch) => batch.divergence_flags(),
            Err(KtulaError::AllChainsDiverged { first_steps, .. }) => first_steps,
            Err(e) => panic!("{e}"),
        };
        let early = flags.iter().filter(|s| matches!(s, Some(k) if *k <= 5)).count();
        cfg.algorithm = Algorithm::Ktula;
        let ktula_flags = run_chains(&cfg).unwrap().n_diverged();
        (
            early >= 63 && ktula_flags == 0,
            format!("ULA flagged within 5 steps in {early}/64; kTULA flags {ktula_flags}/64 over 10⁵ steps"),
        )
    })
}

fn ac6_linear_drift() -> bool {
    criterion("AC6 quadratic kTULA = ULA", Duration::from_secs(60), || {
        let mut cfg = ChainConfig::new(make_quadratic(2, 1.0).unwrap(), 1.0, 0.1, 1_000_100);
        cfg.n_chains = 16;
        cfg.burn_in = 100;
        cfg.thinning = 16;
        cfg.init = InitialLaw::Gaussian { sigma: 1.0 };
        let k = run_chains(&cfg).unwrap();
        cfg.algorithm = Algorithm::Ula;
        let u = run_chains(&cfg).unwrap();
        let identical = k.chains == u.chains;
        let target = 2.0 / (2.0 - 0.1);
        let mut worst: f64 = 0.0;
        let mut n = 0;
        for i in 0..2 {
            let xs = k.coordinate(i);
            n = xs.len();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n as f64 - 1.0);
            worst = worst.max((var / target - 1.0).abs());
        }
        (
            identical && n >= 1_000_000 && worst < 0.02,
            format!("bitwise equal {identical}; {n} kept per coordinate; worst variance deviation {:.3}%", 100.0 * worst),
        )
    })
}

fn ac7_sampling_accuracy() -> bool {
    criterion("AC7 double-well accuracy", Duration::from_secs(180), || {
        let model = make_double_well(1).unwrap();
        let reference = quadrature_target_1d(&model, 1.0, 8.0, 20001).unwrap();
        let mut cfg = ChainConfig::new(model, 1.0, 1e-5, 10_000_000);
        cfg.n_chains = 64;
        cfg.burn_in = 5_000_000;
        cfg.thinning = 100;
        cfg.init = InitialLaw::Gaussian { sigma: 1.0 };
        let samples = run_chains(&cfg).unwrap().pooled_samples();
        let w1 = wasserstein1_1d(&samples, &reference);
        let kl = grid_kl_1d(&samples, &reference, 512, kl_extent(&samples, &reference)).unwrap();
        (w1 < 0.05 && kl < 0.02, format!("W1 = {w1:.4}, KL = {kl:.4} from {} samples", samples.len()))
    })
}

fn ac8_rate_sweep() -> bool {
    criterion("AC8 rate sweep", Duration::from_secs(900), || {
        let tmp = TempDir::new().unwrap();
        let p = tmp.path();
        fs::write(
            p.join("sweep.cfg"),
            "potential = double_well\ndim = 1\nlambdas = 2e-5,1e-5,5e-6,2.5e-6\ngroups = 8\n\
             n_chains = 64\nhorizon = 10\nthinning = 100\nmetric = w1_1d\n",
        )
        .unwrap();
        let out = ktula(&["sweep", "--config", "sweep.cfg", "--out", "s"], p);
        if !out.status.success() {
            return (false, format!("sweep failed: {}", String::from_utf8_lossy(&out.stderr)));
        }
        let rate = fs::read_to_string(p.join("s/rate.csv")).unwrap();
        let row: Vec<f64> = rate.lines().nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
        let (slope, r2) = (row[0], row[2]);
        let curve = fs::read_to_string(p.join("s/curve.csv")).unwrap();
        let errors: Vec<&str> = curve.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
        (
            (0.4..=1.3).contains(&slope) && r2 > 0.8,
            format!("slope {slope:.3}, r² {r2:.3}, errors [{}]", errors.join(", ")),
        )
    })
}

fn ac9_optimization() -> bool {
    criterion("AC9 excess risk", Duration::from_secs(300), || {
        let mut cfg = ChainConfig::new(make_double_well(2).unwrap(), 20.0, 1e-5, 1_000_000);
        cfg.n_chains = 64;
        cfg.burn_in = 500_000;
        cfg.thinning = 1000;
        cfg.init = InitialLaw::Gaussian { sigma: 1.0 };
        let batch = run_chains(&cfg).unwrap();
        let risk = excess_risk(&batch, &cfg.model, -0.25).unwrap();

        let nn = nn_model(2, 2, 8, 0);
        let (_, u_star) = grid_minimize(&nn, &vec![(-3.0, 3.0); nn.dim()], 41).unwrap();
        cfg.model = nn;
        let batch = run_chains(&cfg).unwrap();
        let gap = excess_risk(&batch, &cfg.model, u_star).unwrap();
        (
            risk < 0.15 && gap.abs() < 0.2,
            format!("double-well excess risk {risk:.4}; NN mean final u − u* = {gap:.4}"),
        )
    })
}

fn ktula(args: &[&str], dir: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_ktula"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ac10_reproducibility() -> bool {
    criterion("AC10 manifest reruns", Duration::from_secs(60), || {
        let tmp = TempDir::new().unwrap();
        let p = tmp.path();
        let cases: &[(&str, &str, &[&str])] = &[
            ("sample", "dim = 2\nn_steps = 20000\nburn_in = 10000\nn_chains = 4\n", &["samples.csv", "moments.csv"]),
            (
                "sweep",
                "lambdas = 4e-5,2e-5,1e-5\ngroups = 2\nhorizon = 0.5\nn_chains = 2\nreference_g = 4001\n",
                &["curve.csv", "rate.csv"],
            ),
            ("verify-taming", "n_points = 500\n", &["taming.csv", "regularity.csv"]),
            ("bounds", "dim = 4\n", &["bounds.csv"]),
            ("optimize", "dim = 2\nbeta = 20\nn_steps = 20000\nburn_in = 10000\n", &["optimize.csv"]),
            ("reference", "", &["reference.csv", "reference_moments.csv"]),
        ];
        let mut compared = 0;
        let mut mismatches = Vec::new();
        for (cmd, cfg, files) in cases {
            let name = format!("{cmd}.cfg");
            fs::write(p.join(&name), cfg).unwrap();
            let (a, b) = (format!("{cmd}-a"), format!("{cmd}-b"));
            if !ktula(&[cmd, "--config", &name, "--out", &a], p).status.success() {
                mismatches.push(format!("{cmd} failed"));
                continue;
            }
            let manifest = format!("{a}/manifest.cfg");
            if !ktula(&[cmd, "--config", &manifest, "--out", &b], p).status.success() {
                mismatches.push(format!("{cmd} rerun failed"));
                continue;
            }
            for f in *files {
                compared += 1;
                if fs::read(p.join(&a).join(f)).unwrap() != fs::read(p.join(&b).join(f)).unwrap() {
                    mismatches.push(format!("{cmd}/{f}"));
                }
            }
        }
        (
            mismatches.is_empty(),
            format!("{compared} CSVs compared across 6 subcommands; mismatches {mismatches:?}"),
        )
    })
}

fn main() {
    let criteria: [fn() -> bool; 10] = [
        ac1_taming_property_suite,
        ac2_jacobian_consistency,
        ac3_constants_calculator,
        ac4_moment_boundedness,
        ac5_stability_contrast,
        ac6_linear_drift,
        ac7_sampling_accuracy,
        ac8_rate_sweep,
        ac9_optimization,
        ac10_reproducibility,
    ];
    let failed = criteria.iter().filter(|c| !c()).count();
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
