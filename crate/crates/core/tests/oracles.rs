// Frozen reference values, checked through the public API only.

use fbm_infoflow::doss::z_domain_for;
use fbm_infoflow::identities::{
    debruijn_check_additive, debruijn_check_mult, entropy_power_profile, fokker_planck_check, kl_flow_check,
    stein_check, FokkerPlanckOptions, TestFunction,
};
use fbm_infoflow::infofunc::{entropy, entropy_power, generalized_fisher, kl_divergence, relative_fisher};
use fbm_infoflow::{
    covariance, solve_phi, ChannelSpec, Curvature, DensityField, GridLaw, Hurst, InitialLaw, QuadratureSpec,
    SigmaModel, WeightFunction,
};
use std::sync::Arc;

const DOMAIN: (f64, f64) = (-1e9, 1e9);

fn h(v: f64) -> Hurst {
    Hurst::new(v).unwrap()
}

fn close(a: f64, b: f64, tol: f64) {
    assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol:e})");
}

fn constant_channel(c: f64, x0: f64, hv: f64) -> ChannelSpec {
    ChannelSpec::multiplicative(SigmaModel::constant(c, DOMAIN).unwrap(), x0, h(hv))
}

#[test]
fn sigma_jets() {
    let s = SigmaModel::sqrt_one_plus_square(DOMAIN).unwrap();
    assert_eq!(s.eval(0.0, 0).unwrap(), 1.0);
    assert_eq!(s.eval(0.0, 1).unwrap(), 0.0);
    assert_eq!(SigmaModel::constant(2.0, DOMAIN).unwrap().eval(5.0, 2).unwrap(), 0.0);
}

#[test]
fn covariance_values() {
    close(covariance(1.0, 1.0, h(0.5)).unwrap(), 1.0, 1e-15);
    close(covariance(1.0, 2.0, h(0.5)).unwrap(), 1.0, 1e-15);
    close(covariance(1.0, 2.0, h(0.75)).unwrap(), std::f64::consts::SQRT_2, 1e-12);
}

#[test]
fn flows_and_inverses() {
    let tol = 1e-10;
    let sinh = solve_phi(&SigmaModel::sqrt_one_plus_square(DOMAIN).unwrap(), 0.0, (-5.0, 5.0), tol).unwrap();
    for i in 0..=80 {
        let z = -4.0 + 0.1 * i as f64;
        let rel = (sinh.eval(z).unwrap() - z.sinh()).abs() / z.sinh().abs().max(1.0);
        assert!(rel <= 10.0 * tol, "z = {z}: {rel:e}");
    }
    close(sinh.invert(1.1752011936438014).unwrap(), 1.0, 1e-10);

    let shift = solve_phi(&SigmaModel::identity(DOMAIN).unwrap(), 3.0, (-5.0, 5.0), tol).unwrap();
    close(shift.eval(-5.0).unwrap(), -2.0, tol);
    close(shift.eval(5.0).unwrap(), 8.0, tol);
    close(shift.invert(3.0).unwrap(), 0.0, tol);

    let linear = solve_phi(&SigmaModel::constant(1.5, DOMAIN).unwrap(), -2.0, (-5.0, 5.0), tol).unwrap();
    close(linear.eval(2.0).unwrap(), 1.0, tol);
    close(linear.invert(-2.0).unwrap(), 0.0, tol);
}

#[test]
fn pushforward_density_values() {
    for hv in [0.25, 0.5, 0.75] {
        let phi = solve_phi(&SigmaModel::constant(1.0, DOMAIN).unwrap(), 0.0, z_domain_for(1.0, h(hv)), 1e-10).unwrap();
        close(phi.pushforward_density(1.0, h(hv), 0.0).unwrap(), 0.3989423, 1e-7);
    }
}

#[test]
fn channel_fields() {
    let additive = ChannelSpec::additive(InitialLaw::gaussian(0.0, 1.0).unwrap(), h(0.5));
    close(additive.density_at(1.0).unwrap().density(0.0), 0.2820948, 1e-7);

    let unit = constant_channel(1.0, 0.0, 0.3).density_at(1.0).unwrap();
    assert_eq!(unit.gaussian_params(), Some((0.0, 1.0)));

    let law = GridLaw::from_fn((-12.0, 12.0), 2401, |x| (-0.5 * x * x).exp()).unwrap();
    let field = ChannelSpec::additive(InitialLaw::Grid(law), h(0.75)).density_at(2.0).unwrap();
    let exact = DensityField::gaussian(0.0, 1.0 + 2f64.powf(1.5));
    for i in 0..=40 {
        let x = -6.0 + 0.3 * i as f64;
        close(field.density(x), exact.density(x), 1e-6);
    }
}

#[test]
fn scores() {
    close(DensityField::gaussian(0.0, 1.0).score(0.0).unwrap(), 0.0, 0.0);
    close(DensityField::gaussian(0.0, 2.0).score(1.0).unwrap(), -0.5, 1e-15);
}

#[test]
fn information_functionals() {
    let q = QuadratureSpec::default();
    close(entropy(&DensityField::gaussian(0.0, 1.0), &q).unwrap(), 1.4189385, 1e-7);
    close(entropy(&DensityField::gaussian(0.0, 2.0), &q).unwrap(), 1.7655121, 1e-7);
    let unit = DensityField::grid(GridLaw::uniform((0.0, 1.0), 101).unwrap());
    close(entropy(&unit, &q).unwrap(), 0.0, 1e-6);
    close(entropy_power(&unit, &q).unwrap(), 0.0585498, 1e-7);
    close(entropy_power(&DensityField::gaussian(0.0, 3.0), &q).unwrap(), 3.0, 1e-8);

    let g = |v: f64| DensityField::gaussian(0.0, v);
    close(generalized_fisher(&g(0.5), &WeightFunction::One, &q).unwrap(), 2.0, 1e-8);
    let sigma2 = WeightFunction::SigmaSquared(SigmaModel::sqrt_one_plus_square(DOMAIN).unwrap());
    close(generalized_fisher(&g(1.0), &sigma2, &q).unwrap(), 4.0, 1e-8);
    let four = WeightFunction::Custom(Arc::new(|_| 4.0));
    close(generalized_fisher(&g(1.5), &four, &q).unwrap(), 4.0 / 1.5, 1e-8);

    let (p, r) = (DensityField::gaussian(0.0, 1.0), DensityField::gaussian(1.0, 1.0));
    close(kl_divergence(&p, &p, &q).unwrap(), 0.0, q.abs_tol);
    close(kl_divergence(&p, &r, &q).unwrap(), 0.5, 1e-9);
    let (a, b) = (DensityField::gaussian(0.5, 2.0), DensityField::gaussian(-1.0, 2.0));
    close(kl_divergence(&a, &b, &q).unwrap(), 2.25 / 4.0, 1e-9);
    close(relative_fisher(&a, &a, &WeightFunction::One, &q).unwrap(), 0.0, q.abs_tol);
    close(relative_fisher(&a, &b, &WeightFunction::One, &q).unwrap(), 2.25 / 4.0, 1e-9);
    close(relative_fisher(&a, &b, &four, &q).unwrap(), 2.25, 1e-8);
}

#[test]
fn debruijn_values() {
    for hv in [0.25, 0.5, 0.75] {
        let r = debruijn_check_mult(&constant_channel(1.5, 0.0, hv), 1.0, 1e-3, 1e-6).unwrap();
        close(r.lhs, hv, 1e-8);
        close(r.rhs, hv, 1e-8);
        assert!(r.passed);
    }
    // unit sigma under Brownian noise: rhs is half the Fisher information
    let r = debruijn_check_mult(&constant_channel(1.0, 0.0, 0.5), 1.0, 1e-3, 1e-6).unwrap();
    close(r.rhs, 0.5, 1e-10);

    let sinh = ChannelSpec::multiplicative(SigmaModel::sqrt_one_plus_square(DOMAIN).unwrap(), 0.0, h(0.75));
    assert!(debruijn_check_mult(&sinh, 1.0, 1e-3, 1e-4).unwrap().passed);

    let gauss = |hv| ChannelSpec::additive(InitialLaw::gaussian(0.0, 1.0).unwrap(), h(hv));
    close(debruijn_check_additive(&gauss(0.75), 1.0, 1e-3, 1e-6).unwrap().rhs, 0.375, 1e-15);
    close(debruijn_check_additive(&gauss(0.5), 1.0, 1e-3, 1e-6).unwrap().rhs, 0.25, 1e-15);
    let uniform = ChannelSpec::additive(InitialLaw::Grid(GridLaw::uniform((-1.0, 1.0), 801).unwrap()), h(0.3));
    assert!(debruijn_check_additive(&uniform, 0.5, 1e-3, 1e-4).unwrap().passed);
}

#[test]
fn kl_flow_values() {
    let same = kl_flow_check(&constant_channel(1.0, 0.2, 0.6), &constant_channel(1.0, 0.2, 0.6), 1.0, 1e-3, 1e-8)
        .unwrap();
    close(same.report.lhs, 0.0, 1e-8);
    close(same.report.rhs, 0.0, 1e-8);

    let out = kl_flow_check(&constant_channel(1.0, 0.0, 0.75), &constant_channel(1.0, 1.0, 0.75), 1.0, 1e-3, 1e-5)
        .unwrap();
    close(out.report.rhs, -0.75, 1e-8);
    assert!(out.report.passed && out.non_increasing);
}

#[test]
fn fokker_planck_values() {
    let grid: Vec<f64> = (0..=32).map(|i| -4.0 + 0.25 * i as f64).collect();
    let opts = FokkerPlanckOptions::default();
    let heat = fokker_planck_check(&constant_channel(1.0, 0.0, 0.5), 1.0, &grid, 1e-3, 1e-5, &opts).unwrap();
    assert!(heat.passed, "{heat:?}");
    let rough = fokker_planck_check(&constant_channel(2.0, 0.0, 0.25), 1.0, &grid, 1e-3, 1e-5, &opts).unwrap();
    assert!(rough.passed, "{rough:?}");
    let sinh = ChannelSpec::multiplicative(SigmaModel::sqrt_one_plus_square(DOMAIN).unwrap(), 0.0, h(0.75));
    assert!(fokker_planck_check(&sinh, 1.0, &grid, 1e-3, 1e-3, &opts).unwrap().passed);
}

#[test]
fn stein_values() {
    let q = QuadratureSpec::default();
    let r = stein_check(1.3, 0.7, &TestFunction::Linear, 1e-10, &q).unwrap();
    close(r.lhs, 0.7, 1e-12);
    close(r.rhs, 0.7, 1e-12);
    let r = stein_check(0.0, 1.0, &TestFunction::Square, 1e-10, &q).unwrap();
    close(r.lhs, 0.0, 1e-12);
    close(r.rhs, 0.0, 1e-12);
    let r = stein_check(0.0, 1.0, &TestFunction::Cube, 1e-10, &q).unwrap();
    close(r.lhs, 3.0, 1e-12);
    close(r.rhs, 3.0, 1e-12);
}

#[test]
fn entropy_power_values() {
    let gauss = |hv| ChannelSpec::additive(InitialLaw::gaussian(0.0, 1.0).unwrap(), h(hv));
    let linear = entropy_power_profile(&gauss(0.5), &[0.5, 1.0, 3.0], 1e-2).unwrap();
    for (i, t) in [0.5, 1.0, 3.0].into_iter().enumerate() {
        close(linear.g_values[i], 0.0, 1e-12);
        close(linear.entropy_power[i], 1.0 + t, 1e-8);
        assert_eq!(linear.classification[i], Curvature::Concave);
    }
    let smooth = entropy_power_profile(&gauss(0.75), &[1.0], 1e-2).unwrap();
    close(smooth.g_values[0], 0.1875, 1e-10);
    assert_eq!(smooth.classification[0], Curvature::Convex);
    let rough = entropy_power_profile(&gauss(0.3), &[1.0], 1e-2).unwrap();
    close(rough.g_values[0], -0.06, 1e-10);
    assert_eq!(rough.classification[0], Curvature::Concave);
}
