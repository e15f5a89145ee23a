use fbm_infoflow::identities::{debruijn_check_additive, entropy_power_profile, kl_flow_check, stein_check, TestFunction};
use fbm_infoflow::infofunc::{entropy, generalized_fisher, kl_divergence, relative_fisher};
use fbm_infoflow::montecarlo::{mc_expectation, RunningStats};
use fbm_infoflow::suite::SuiteConfig;
use fbm_infoflow::{
    covariance, sample_path, solve_phi, ChannelSpec, Curvature, DensityField, Hurst, IdentityReport, InitialLaw,
    QuadratureSpec, SamplingMethod, SigmaModel, WeightFunction,
};
use proptest::prelude::*;

const DOMAIN: (f64, f64) = (-1e9, 1e9);

fn h(v: f64) -> Hurst {
    Hurst::new(v).unwrap()
}

fn sinh_channel(x0: f64, hv: f64) -> ChannelSpec {
    ChannelSpec::multiplicative(SigmaModel::sqrt_one_plus_square(DOMAIN).unwrap(), x0, h(hv))
}

proptest! {
    #[test]
    fn report_passes_iff_within_tolerance(lhs in -1e3f64..1e3, rhs in -1e3f64..1e3, tol in 0.0f64..10.0) {
        let r = IdentityReport::new("x", 1.0, 0.5, lhs, rhs, tol, String::new());
        prop_assert_eq!(r.abs_discrepancy, (lhs - rhs).abs());
        prop_assert_eq!(r.passed, r.abs_discrepancy <= tol);
    }

    #[test]
    fn curvature_splits_at_zero(g in -1e3f64..1e3) {
        prop_assert_eq!(Curvature::of(g) == Curvature::Convex, g > 0.0);
        prop_assert_eq!(Curvature::of(0.0), Curvature::Concave);
    }

    #[test]
    fn hurst_outside_unit_interval_is_rejected(v in prop_oneof![-5.0f64..=0.0, 1.0f64..5.0]) {
        prop_assert!(Hurst::new(v).is_err());
    }

    #[test]
    fn covariance_is_symmetric_and_bounded(s in 0.0f64..10.0, t in 0.0f64..10.0, hv in 0.01f64..0.99) {
        let (hs, c) = (h(hv), covariance(s, t, h(hv)).unwrap());
        prop_assert_eq!(c, covariance(t, s, hs).unwrap());
        prop_assert!((covariance(t, t, hs).unwrap() - t.powf(2.0 * hv)).abs() <= 1e-12 * (1.0 + t.powf(2.0 * hv)));
        let bound = (s.powf(2.0 * hv) * t.powf(2.0 * hv)).sqrt();
        prop_assert!(c.abs() <= bound * (1.0 + 1e-12) + 1e-300);
    }

    #[test]
    fn paths_are_reproducible_and_pinned(hv in 0.05f64..0.95, n in 2usize..64, seed in any::<u64>()) {
        let grid: Vec<f64> = (0..n).map(|k| k as f64 * 0.1).collect();
        for method in [SamplingMethod::Cholesky, SamplingMethod::Circulant] {
            let a = sample_path(&grid, h(hv), method, seed).unwrap();
            let b = sample_path(&grid, h(hv), method, seed).unwrap();
            prop_assert_eq!(&a.values, &b.values);
            prop_assert_eq!(a.values[0], 0.0);
            prop_assert_eq!(a.values.len(), n);
        }
    }

    #[test]
    fn welford_merge_is_split_invariant(data in prop::collection::vec(-1e3f64..1e3, 2..300), cut in 0usize..300) {
        let cut = cut.min(data.len());
        let mut whole = RunningStats::default();
        data.iter().for_each(|&x| whole.push(x));
        let (mut left, mut right) = (RunningStats::default(), RunningStats::default());
        data[..cut].iter().for_each(|&x| left.push(x));
        data[cut..].iter().for_each(|&x| right.push(x));
        left.merge(&right);
        prop_assert_eq!(left.count(), whole.count());
        prop_assert!((left.mean() - whole.mean()).abs() <= 1e-9 * (1.0 + whole.mean().abs()));
        prop_assert!((left.variance() - whole.variance()).abs() <= 1e-8 * (1.0 + whole.variance()));
    }

    #[test]
    fn gaussian_functionals(m1 in -3.0f64..3.0, m2 in -3.0f64..3.0, v in 0.05f64..20.0) {
        let q = QuadratureSpec::default();
        let (p, r) = (DensityField::gaussian(m1, v), DensityField::gaussian(m2, v));
        let exact = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * v).ln();
        prop_assert!((entropy(&p, &q).unwrap() - exact).abs() <= 1e-14 * exact.abs().max(1.0));
        let kl = kl_divergence(&p, &r, &q).unwrap();
        prop_assert!(kl >= 0.0);
        prop_assert!((kl - (m1 - m2).powi(2) / (2.0 * v)).abs() <= 1e-8 * (1.0 + kl));
        let rf = relative_fisher(&p, &r, &WeightFunction::One, &q).unwrap();
        prop_assert!(rf >= 0.0);
        prop_assert!((rf - (m1 - m2).powi(2) / (v * v)).abs() <= 1e-8 * (1.0 + rf));
        prop_assert!((generalized_fisher(&p, &WeightFunction::One, &q).unwrap() - 1.0 / v).abs() <= 1e-8 / v);
    }

    #[test]
    fn stein_holds_for_any_normal(mu in -3.0f64..3.0, v in 0.1f64..4.0, pick in 0usize..4) {
        let r = [TestFunction::Linear, TestFunction::Square, TestFunction::Cube, TestFunction::Sine][pick].clone();
        let rep = stein_check(mu, v, &r, 1e-9, &QuadratureSpec::default()).unwrap();
        prop_assert!(rep.abs_discrepancy <= 1e-10 * (1.0 + rep.lhs.abs()), "{rep:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sinh_flow_inverts(x0 in -2.0f64..2.0, z in -3.0f64..3.0) {
        let phi = solve_phi(&SigmaModel::sqrt_one_plus_square(DOMAIN).unwrap(), x0, (-4.0, 4.0), 1e-10).unwrap();
        let x = phi.eval(z).unwrap();
        prop_assert!((phi.invert(x).unwrap() - z).abs() <= 1e-9);
        prop_assert!((x - (x0.asinh() + z).sinh()).abs() <= 1e-8 * (1.0 + x.abs()));
    }

    #[test]
    fn pushforward_fields_are_densities(x0 in -1.0f64..1.0, hv in 0.2f64..0.9, t in 0.2f64..2.0, x in -5.0f64..5.0) {
        let field = sinh_channel(x0, hv).density_at(t).unwrap();
        prop_assert!(field.density(x) >= 0.0);
        let mass = field.mass(&QuadratureSpec::default()).unwrap();
        prop_assert!((mass - 1.0).abs() <= field.mass_tolerance());
        let step = 1e-4;
        let fd = (field.ln_density(x + step) - field.ln_density(x - step)) / (2.0 * step);
        let score = field.score(x).unwrap();
        prop_assert!((fd - score).abs() <= 1e-5 * score.abs().max(1.0), "fd {fd} score {score}");
    }

    #[test]
    fn kl_flow_rhs_is_never_positive(x0 in -2.0f64..2.0, y0 in -2.0f64..2.0, hv in 0.2f64..0.9, t in 0.3f64..2.0) {
        let c = |x| ChannelSpec::multiplicative(SigmaModel::constant(1.3, DOMAIN).unwrap(), x, h(hv));
        let out = kl_flow_check(&c(x0), &c(y0), t, 1e-3, 1e-5).unwrap();
        prop_assert!(out.report.rhs <= 0.0);
        prop_assert!(out.non_increasing);
        prop_assert!(out.report.passed, "{:?}", out.report);
    }

    #[test]
    fn additive_gaussian_rhs_is_closed_form(v0 in 0.1f64..5.0, hv in 0.1f64..0.9, t in 0.2f64..3.0) {
        let channel = ChannelSpec::additive(InitialLaw::gaussian(0.3, v0).unwrap(), h(hv));
        let r = debruijn_check_additive(&channel, t, 1e-3 * t.max(1.0), 1e-6).unwrap();
        let exact = hv * t.powf(2.0 * hv - 1.0) / (v0 + t.powf(2.0 * hv));
        prop_assert!((r.rhs - exact).abs() <= 1e-14 * exact);
        prop_assert!(r.passed, "{r:?}");
    }

    #[test]
    fn gaussian_curvature_follows_hurst(hv in prop_oneof![0.05f64..0.45, 0.55f64..0.95], t in 0.2f64..3.0) {
        let channel = ChannelSpec::additive(InitialLaw::gaussian(0.0, 1.0).unwrap(), h(hv));
        let profile = entropy_power_profile(&channel, &[t], 1e-2 * t.min(1.0)).unwrap();
        let expected = if hv > 0.5 { Curvature::Convex } else { Curvature::Concave };
        prop_assert_eq!(profile.classification[0], expected);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn monte_carlo_is_reproducible_across_pools(seed in any::<u64>(), threads in 1usize..5) {
        let channel = sinh_channel(0.2, 0.6);
        let g = |x: f64| Ok(x.tanh());
        let pooled = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let a = pooled.install(|| mc_expectation(&channel, 1.0, &g, 40_000, seed)).unwrap();
        let b = mc_expectation(&channel, 1.0, &g, 40_000, seed).unwrap();
        prop_assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        prop_assert_eq!(a.std_error.to_bits(), b.std_error.to_bits());
        prop_assert_eq!(a.n_samples, 40_000);
    }

    #[test]
    fn config_rejects_bad_time_grids(bad in prop_oneof![Just(0.0f64), -5.0f64..0.0]) {
        let text = format!(
            r#"{{"suites": ["stein"], "channel": {{"variant": "additive", "initial": {{"kind": "gaussian", "mean": 0, "variance": 1}}}},
                "t_grid": [1.0, {bad}], "hurst_grid": [0.5], "output": "x"}}"#
        );
        prop_assert!(SuiteConfig::from_json(&text).is_err());
    }
}

#[test]
fn constant_test_function_has_no_spread() {
    let est = mc_expectation(&sinh_channel(0.0, 0.5), 1.0, &|_| Ok(1.0), 1000, 3).unwrap();
    assert_eq!(est.mean, 1.0);
    assert_eq!(est.std_error, 0.0);
}
