use ktula::bounds::{
    kl_prescription, moment_constants, prescribe, second_moment_bound, theorem_constants, BoundInputs,
    PrescriptionMode,
};
use ktula::potential::{make_double_well, make_quadratic};
use ktula::sampler::InitialLaw;
use ktula::taming::lambda_max;

fn dw_inputs(d: usize, beta: f64) -> BoundInputs {
    let m = make_double_well(d).unwrap();
    let mut inputs = BoundInputs::for_model(&m, beta, 0.5, InitialLaw::Gaussian { sigma: 1.0 });
    inputs.kl0 = Some(0.5);
    inputs
}

fn ols_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

#[test]
fn c1_grows_polynomially_in_dimension() {
    let dims = [2usize, 4, 8, 16];
    let xs: Vec<f64> = dims.iter().map(|d| (*d as f64).ln()).collect();
    // θ₀ = 0 makes every initial-moment factor 1, so only the constants' own
    // dimension dependence is measured; J₀ is supplied since a point mass has none.
    let ys: Vec<f64> = dims
        .iter()
        .map(|&d| {
            let m = make_double_well(d).unwrap();
            let mut inputs = BoundInputs::for_model(&m, 1.0, 0.5, InitialLaw::Constant(vec![0.0; d]));
            inputs.j0 = d as f64;
            theorem_constants(&inputs).unwrap().c_1.ln
        })
        .collect();
    let slope = ols_slope(&xs, &ys);
    // l = 2, ε_h = 1/2: upper limit 2(l+1)(1/ε_h+1)+2 = 20.
    assert!((1.0..=20.0).contains(&slope), "slope {slope}");
}

#[test]
fn report_step_cap_is_the_taming_cap() {
    for eps in [0.1, 0.25, 0.5] {
        let m = make_double_well(3).unwrap();
        let inputs = BoundInputs::for_model(&m, 1.0, eps, InitialLaw::Constant(vec![0.0; 3]));
        let r = theorem_constants(&inputs).unwrap();
        assert_eq!(r.lambda_max.to_bits(), lambda_max(m.constants(), eps).unwrap().lambda_max.to_bits());
    }
}

#[test]
fn w2_prescription_is_kl_prescription_at_transformed_accuracy() {
    for d in [1usize, 3] {
        let inputs = dw_inputs(d, 2.0);
        let r = theorem_constants(&inputs).unwrap();
        for delta in [0.5, 0.1, 0.01] {
            let w2 = prescribe(&inputs, PrescriptionMode::W2, delta).unwrap();
            // (δ'/(2C₁))^{1/r} = (δ/(2C₂√C₁))^{2/r} with δ' = δ²/(2C₂²).
            let delta_kl = delta * delta / (2.0 * r.c_2 * r.c_2);
            let kl = prescribe(&inputs, PrescriptionMode::Kl, delta_kl).unwrap();
            assert!((w2.ln_lambda - kl.ln_lambda).abs() < 1e-9 * kl.ln_lambda.abs().max(1.0));
            assert!((w2.ln_n_steps - kl.ln_n_steps).abs() < 1e-9 * kl.ln_n_steps.abs().max(1.0));
        }
    }
}

#[test]
fn smaller_accuracy_never_loosens_the_prescription() {
    let inputs = dw_inputs(2, 1.0);
    for mode in [PrescriptionMode::Kl, PrescriptionMode::W2] {
        let mut delta = 0.5;
        let mut prev = prescribe(&inputs, mode, delta).unwrap();
        for _ in 0..6 {
            delta /= 2.0;
            let next = prescribe(&inputs, mode, delta).unwrap();
            assert!(next.ln_lambda <= prev.ln_lambda, "{mode:?}");
            assert!(next.ln_n_steps >= prev.ln_n_steps, "{mode:?}");
            prev = next;
        }
    }
}

#[test]
fn step_is_clamped_by_cap() {
    let p = kl_prescription(1.5, 0.0, 0.01, 1.0, 0.02, 1.425);
    assert_eq!(p.lambda, 0.01);
    let q = kl_prescription(1.5, 0.0, 1.0, 1.0, 0.02, 1.425);
    assert!((q.lambda - 0.01f64.powf(1.0 / 1.425)).abs() < 1e-15);
    // n = (1/C₀) · (1/λ) · ln(2KL₀/δ).
    let expect = (1.0 / 1.5 / q.lambda * (2.0f64 / 0.02).ln()).ceil();
    assert_eq!(q.n_steps, expect);
}

#[test]
fn c0_monotone_in_dimension_and_temperature() {
    let c0 = |d: usize, beta: f64| moment_constants(&dw_inputs(d, beta), 0).unwrap().value;
    for d in 1..10 {
        assert!(c0(d + 1, 1.0) > c0(d, 1.0));
    }
    for beta in [0.5, 1.0, 2.0, 4.0] {
        assert!(c0(3, 2.0 * beta) < c0(3, beta));
    }
}

#[test]
fn moment_bound_uses_initial_second_moment() {
    let m = make_quadratic(4, 1.0).unwrap();
    let zero = BoundInputs::for_model(&m, 1.0, 0.5, InitialLaw::Constant(vec![0.0; 4]));
    let gauss = BoundInputs::for_model(&m, 1.0, 0.5, InitialLaw::Gaussian { sigma: 2.0 });
    let diff = second_moment_bound(&gauss).unwrap() - second_moment_bound(&zero).unwrap();
    assert!((diff - 16.0).abs() < 1e-12);
}

#[test]
fn excess_risk_prescription_reports_beta() {
    let inputs = dw_inputs(2, 1.0);
    let p = prescribe(&inputs, PrescriptionMode::ExcessRisk, 0.1).unwrap();
    let beta = p.beta.unwrap();
    // 9d²/δ² = 3600 is one of the candidates.
    assert!(beta >= 3600.0 * (1.0 - 1e-12));
    assert!(p.ln_n_steps.is_finite() && p.ln_lambda.is_finite());
}

#[test]
fn prescriptions_need_initial_kl() {
    let m = make_double_well(1).unwrap();
    let inputs = BoundInputs::for_model(&m, 1.0, 0.5, InitialLaw::Gaussian { sigma: 1.0 });
    assert!(prescribe(&inputs, PrescriptionMode::Kl, 0.1).is_err());
    assert!(theorem_constants(&inputs).unwrap().c_3.is_none());
}
