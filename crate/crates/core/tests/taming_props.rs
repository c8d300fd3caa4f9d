use ktula::linalg::spectral_norm;
use ktula::potential::{
    make_double_well, make_neural_net_objective, make_quadratic, random_points, NeuralNetObjectiveSpec,
    ParameterVector, PotentialModel, RegularityConstants,
};
use ktula::taming::{
    l0, l_nabla, lambda_max, lambda_max_from, tamed_drift, tamed_drift_jacobian, verify_taming_properties,
    TamingParams,
};

fn pv(v: &[f64]) -> ParameterVector {
    ParameterVector::new(v.to_vec()).unwrap()
}

fn nn_model(d1: usize) -> PotentialModel {
    make_neural_net_objective(NeuralNetObjectiveSpec::synthetic(d1, 3, 8, 1.0, 2).unwrap()).unwrap()
}

/// Largest entrywise deviation between the Jacobian and central differences of
/// `h_λ`, relative to the largest Jacobian entry.
fn jacobian_fd_error(model: &PotentialModel, tp: &TamingParams, theta: &[f64], h: f64) -> f64 {
    let d = theta.len();
    let jac = tamed_drift_jacobian(model, tp, &pv(theta)).unwrap();
    let mut worst: f64 = 0.0;
    for j in 0..d {
        let mut up = theta.to_vec();
        let mut dn = theta.to_vec();
        up[j] += h;
        dn[j] -= h;
        let hu = tamed_drift(model, tp, &pv(&up)).unwrap();
        let hd = tamed_drift(model, tp, &pv(&dn)).unwrap();
        for i in 0..d {
            worst = worst.max((jac[(i, j)] - (hu[i] - hd[i]) / (2.0 * h)).abs());
        }
    }
    worst / jac.amax().max(1.0)
}

#[test]
fn jacobian_matches_finite_differences() {
    let models = [make_double_well(3).unwrap(), nn_model(3)];
    for model in &models {
        for &(lambda, eps) in &[(1e-5, 0.5), (0.01, 0.5), (0.01, 0.25)] {
            let tp = TamingParams::for_model(model, lambda, eps).unwrap();
            for p in random_points(model.dim(), 50, 3.0, 1) {
                let e = jacobian_fd_error(model, &tp, p.as_slice(), 1e-5);
                assert!(e < 1e-5, "{} λ={lambda} ε_h={eps}: {e}", model.label());
            }
        }
    }
}

#[test]
fn jacobian_at_a_point_on_an_axis() {
    let m = make_double_well(2).unwrap();
    let tp = TamingParams::for_model(&m, 0.01, 0.5).unwrap();
    assert!(jacobian_fd_error(&m, &tp, &[2.0, 0.0], 1e-5) < 1e-5);
}

#[test]
fn quadratic_jacobian_is_scaled_identity() {
    let m = make_quadratic(3, 2.0).unwrap();
    let tp = TamingParams::for_model(&m, 0.3, 0.5).unwrap();
    for p in random_points(3, 20, 5.0, 4) {
        let jac = tamed_drift_jacobian(&m, &tp, &p).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 2.0 } else { 0.0 };
                assert!((jac[(i, j)] - expect).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn taming_error_halves_with_step() {
    let m = make_double_well(2).unwrap();
    for p in random_points(2, 200, 10.0, 8) {
        if p.norm() < 1e-3 {
            continue;
        }
        let h = m.gradient(p.as_slice());
        let err = |lambda: f64| {
            let tp = TamingParams::for_model(&m, lambda, 0.5).unwrap();
            let hl = tamed_drift(&m, &tp, &p).unwrap();
            h.iter().zip(&hl).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
        };
        // The ratio tends to 1/2 from above; start where λ|θ|^k = 0.1.
        let mut lambda = (0.1 / p.norm().powi(6)).min(0.5);
        for _ in 0..6 {
            let (e1, e2) = (err(lambda), err(lambda / 2.0));
            if e1 > 0.0 {
                assert!(e2 <= e1 / 2.0 * 1.05, "|θ|={} λ={lambda}: {e1} -> {e2}", p.norm());
            }
            lambda /= 2.0;
        }
    }
}

#[test]
fn linear_growth_of_tamed_drift() {
    let models = [make_double_well(2).unwrap(), nn_model(2)];
    for model in &models {
        let c = *model.constants();
        for &lambda in &[1e-5, 1e-3, 0.1] {
            let tp = TamingParams::for_model(model, lambda, 0.5).unwrap();
            let bound = 2.0 * c.a + 2.0 * c.gradient_growth / lambda.sqrt();
            for p in random_points(model.dim(), 500, 50.0, 3) {
                let hl = tamed_drift(model, &tp, &p).unwrap();
                let norm = hl.iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!(norm / (1.0 + p.norm()) <= bound + 1e-9);
            }
        }
    }
}

#[test]
fn property_suite_passes_for_bundled_models() {
    let models = [make_double_well(1).unwrap(), make_double_well(4).unwrap(), make_quadratic(2, 1.0).unwrap(), nn_model(2)];
    for model in &models {
        for &eps in &[0.1, 0.25, 0.5] {
            let tp = TamingParams::for_model(model, 1e-5, eps).unwrap();
            let points = random_points(model.dim(), 1000, 10.0, 12);
            let report = verify_taming_properties(model, &tp, &points, 3).unwrap();
            for c in &report.checks {
                assert!(c.pass, "{} ε_h={eps} {}: {}", model.label(), c.property, c.worst_margin);
            }
        }
    }
}

#[test]
fn quadratic_approximation_margin_equals_bound() {
    let m = make_quadratic(1, 1.0).unwrap();
    let tp = TamingParams::for_model(&m, 0.1, 0.5).unwrap();
    let points = vec![pv(&[0.0])];
    let report = verify_taming_properties(&m, &tp, &points, 0).unwrap();
    let approx = report.get("approximation").unwrap();
    // 4λ²(K_h + a)²(1 + 0) with K_h = a = 1.
    assert!((approx.worst_margin - 4.0 * 0.01 * 4.0).abs() < 1e-12);
}

#[test]
fn step_cap_is_monotone_in_constants() {
    let base = RegularityConstants::new(0.5, 2.25, 3.0, 2, 3.0, 2.0).unwrap();
    let cap = |rc: &RegularityConstants| lambda_max(rc, 0.5).unwrap().lambda_max;
    let c0 = cap(&base);
    for scale in [1.5, 2.0, 10.0] {
        let bigger_a = RegularityConstants::new(0.5 * scale, 2.25, 3.0, 2, 3.0, 2.0).unwrap();
        let bigger_kh = RegularityConstants::new(0.5, 2.25, 3.0, 2, 3.0 * scale, 2.0).unwrap();
        let bigger_kg = RegularityConstants::new(0.5, 2.25, 3.0, 2, 3.0, 2.0 * scale).unwrap();
        assert!(cap(&bigger_a) <= c0);
        assert!(cap(&bigger_kh) <= c0);
        assert!(cap(&bigger_kg) <= c0);
    }
    assert_eq!(l0(&base), 26.5);
    assert_eq!(lambda_max_from(0.5, 26.5, 0.5).unwrap(), c0);
}

#[test]
fn origin_jacobian_has_unit_norm() {
    let m = make_double_well(3).unwrap();
    let tp = TamingParams::for_model(&m, 1e-3, 0.5).unwrap();
    let j0 = tamed_drift_jacobian(&m, &tp, &ParameterVector::zeros(3)).unwrap();
    assert!((spectral_norm(&j0) - 1.0).abs() < 1e-9);
    assert!(l_nabla(m.constants(), 0.5) > 1.0);
}
