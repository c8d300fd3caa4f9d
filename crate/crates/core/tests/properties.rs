use ktula::cli::Settings;
use ktula::diagnostics::{kl_from_masses, moment_of_samples, wasserstein1_1d, Quantile};
use ktula::potential::{make_double_well, ParameterVector};
use ktula::taming::{tamed_drift, TamingParams};
use proptest::prelude::*;

/// Empirical quantile of a finite sample, matching the midpoint grid used by W1.
struct Empirical(Vec<f64>);

impl Empirical {
    fn new(mut xs: Vec<f64>) -> Self {
        xs.sort_by(f64::total_cmp);
        Empirical(xs)
    }
}

impl Quantile for Empirical {
    fn quantile(&self, u: f64) -> f64 {
        let n = self.0.len();
        let i = ((u * n as f64).floor() as usize).min(n - 1);
        self.0[i]
    }
}

fn masses(raw: &[f64]) -> Vec<f64> {
    let total: f64 = raw.iter().sum();
    raw.iter().map(|x| x / total).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn moments_scale_homogeneously(
        xs in prop::collection::vec(-5.0f64..5.0, 2..60),
        c in 0.1f64..4.0,
        p in 1u32..5,
    ) {
        let dim = 2;
        let n = xs.len() / dim * dim;
        let xs = &xs[..n];
        prop_assume!(n > 0);
        let base = moment_of_samples(xs, dim, p);
        let scaled: Vec<f64> = xs.iter().map(|x| c * x).collect();
        let expect = c.powi(2 * p as i32) * base;
        let got = moment_of_samples(&scaled, dim, p);
        prop_assert!((got - expect).abs() <= 1e-10 * expect.abs().max(1e-300));
    }

    #[test]
    fn kl_is_nonnegative_and_zero_on_equal_masses(
        raw in prop::collection::vec((1e-6f64..1.0, 1e-6f64..1.0), 1..40),
    ) {
        let p = masses(&raw.iter().map(|r| r.0).collect::<Vec<_>>());
        let q = masses(&raw.iter().map(|r| r.1).collect::<Vec<_>>());
        prop_assert!(kl_from_masses(&p, &q) >= 0.0);
        prop_assert!(kl_from_masses(&p, &p).abs() < 1e-12);
    }

    #[test]
    fn empirical_w1_is_symmetric(
        a in prop::collection::vec(-10.0f64..10.0, 1..50),
        b in prop::collection::vec(-10.0f64..10.0, 1..50),
    ) {
        let n = a.len().min(b.len());
        let (a, b) = (a[..n].to_vec(), b[..n].to_vec());
        let ab = wasserstein1_1d(&a, &Empirical::new(b.clone()));
        let ba = wasserstein1_1d(&b, &Empirical::new(a.clone()));
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!(wasserstein1_1d(&a, &Empirical::new(a.clone())) < 1e-12);
    }

    #[test]
    fn tamed_drift_grows_at_most_linearly(
        coords in prop::collection::vec(-100.0f64..100.0, 3),
        ln_lambda in -14.0f64..-1.0,
        eps in prop::sample::select(vec![0.1, 0.25, 0.5]),
    ) {
        let model = make_double_well(3).unwrap();
        let c = *model.constants();
        let lambda = ln_lambda.exp();
        let tp = TamingParams::for_model(&model, lambda, eps).unwrap();
        let theta = ParameterVector::new(coords).unwrap();
        let h = tamed_drift(&model, &tp, &theta).unwrap();
        let norm = h.iter().map(|x| x * x).sum::<f64>().sqrt();
        let bound = 2.0 * c.a + 2.0 * c.gradient_growth / lambda.sqrt();
        prop_assert!(norm / (1.0 + theta.norm()) <= bound * (1.0 + 1e-12));
    }

    #[test]
    fn parameter_vectors_reject_non_finite_entries(
        mut coords in prop::collection::vec(-1e6f64..1e6, 1..8),
        idx in any::<prop::sample::Index>(),
        bad in prop::sample::select(vec![f64::NAN, f64::INFINITY, f64::NEG_INFINITY]),
    ) {
        prop_assert!(ParameterVector::new(coords.clone()).is_ok());
        let i = idx.index(coords.len());
        coords[i] = bad;
        prop_assert!(ParameterVector::new(coords).is_err());
    }

    #[test]
    fn config_text_round_trips(
        dim in 1usize..6,
        beta in 0.01f64..100.0,
        lambda in 1e-8f64..1e-2,
        seed in any::<u64>(),
        n_chains in 1usize..100,
        eps in prop::sample::select(vec![0.1, 0.25, 0.5]),
        kl0 in prop::option::of(0.0f64..10.0),
    ) {
        let mut s = Settings::default();
        s.dim = dim;
        s.beta = beta;
        s.lambda = lambda;
        s.seed = seed;
        s.n_chains = n_chains;
        s.epsilon_h = eps;
        s.kl0 = kl0;
        let text = s.to_config_text();
        let back = Settings::parse(&text).unwrap();
        prop_assert_eq!(&back, &s);
        prop_assert_eq!(back.to_config_text(), text);
    }
}
