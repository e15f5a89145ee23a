//! Numerical checks of the entropy-flow identities.
//!
//! Every check returns an [`IdentityReport`] holding both sides, their
//! absolute discrepancy and the tolerance it was judged against. Time
//! derivatives are central differences with one Richardson step: with
//! `D(δ) = [f(t+δ) - f(t-δ)] / 2δ` the reported value is
//! `(4 D(δ/2) - D(δ)) / 3`, accurate to O(δ⁴).

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::channels::{Channel, ChannelSpec, ChannelVariant, DensityField, InitialLaw};
use crate::error::{Error, Result};
use crate::infofunc::{self, WeightFunction};
use crate::quad::{GaussHermite, QuadratureSpec};

/// Relative agreement required between the two algebraic forms of the
/// multiplicative De Bruijn right-hand side.
pub const FORM_CROSS_CHECK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub identity: String,
    pub t: f64,
    pub hurst: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub abs_discrepancy: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub method_notes: String,
}

impl IdentityReport {
    pub fn new(identity: &str, t: f64, hurst: f64, lhs: f64, rhs: f64, tolerance: f64, notes: String) -> Self {
        let abs_discrepancy = (lhs - rhs).abs();
        IdentityReport {
            identity: identity.to_string(),
            t,
            hurst,
            lhs,
            rhs,
            abs_discrepancy,
            tolerance,
            passed: abs_discrepancy <= tolerance,
            method_notes: notes,
        }
    }
}

/// Default finite-difference step in time.
pub fn default_fd_step(t: f64) -> f64 {
    1e-3 * t.max(1.0)
}

fn check_step(t: f64, step: f64) -> Result<()> {
    if !(step > 0.0 && step < t) {
        return Err(Error::Step { step, t });
    }
    Ok(())
}

/// Central difference of `f` at `t` with one Richardson extrapolation.
pub fn richardson_derivative<F>(mut f: F, t: f64, step: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    check_step(t, step)?;
    let coarse = (f(t + step)? - f(t - step)?) / (2.0 * step);
    let half = 0.5 * step;
    let fine = (f(t + half)? - f(t - half)?) / step;
    Ok((4.0 * fine - coarse) / 3.0)
}

/// Second central difference with one Richardson extrapolation.
pub fn richardson_second_derivative<F>(mut f: F, t: f64, step: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    check_step(t, step)?;
    let center = f(t)?;
    let coarse = (f(t + step)? - 2.0 * center + f(t - step)?) / (step * step);
    let half = 0.5 * step;
    let fine = (f(t + half)? - 2.0 * center + f(t - half)?) / (half * half);
    Ok((4.0 * fine - coarse) / 3.0)
}

fn prefactor(h: f64, t: f64) -> f64 {
    h * t.powf(2.0 * h - 1.0)
}

fn multiplicative_parts(channel: &ChannelSpec) -> Result<(&crate::sigma::SigmaModel, f64)> {
    match &channel.variant {
        ChannelVariant::Multiplicative { sigma, x0 } => Ok((sigma, *x0)),
        ChannelVariant::Additive { .. } => Err(Error::InvalidParameter(
            "this check needs a multiplicative channel".into(),
        )),
    }
}

/// Entropy flow of the multiplicative channel against
/// `H t^{2H-1} { J_{σ²} - E[(σ²)''] + E[σσ'' + σ'²] }`.
pub fn debruijn_check_mult(channel: &ChannelSpec, t: f64, fd_step: f64, tol: f64) -> Result<IdentityReport> {
    debruijn_check_mult_with(channel, t, fd_step, tol, &QuadratureSpec::tight())
}

pub fn debruijn_check_mult_with(
    channel: &ChannelSpec,
    t: f64,
    fd_step: f64,
    tol: f64,
    quad: &QuadratureSpec,
) -> Result<IdentityReport> {
    let (sigma, _) = multiplicative_parts(channel)?;
    check_step(t, fd_step)?;
    let prepared = channel.prepare(t + fd_step)?;
    let lhs = richardson_derivative(|s| infofunc::entropy(&prepared.density_at(s)?, quad), t, fd_step)?;

    let field = prepared.density_at(t)?;
    let fisher = infofunc::generalized_fisher(&field, &WeightFunction::SigmaSquared(sigma.clone()), quad)?;
    let (curvature, square_curvature) = if sigma.constant_value().is_some() {
        (0.0, 0.0)
    } else {
        let c = infofunc::expectation(
            &field,
            |x| {
                let (s, d1, d2) = sigma.jet(x)?;
                Ok(s * d2 + d1 * d1)
            },
            quad,
        )?;
        let c2 = infofunc::expectation(
            &field,
            |x| {
                let (s, d1, d2) = sigma.jet(x)?;
                Ok(2.0 * s * d2 + 2.0 * d1 * d1)
            },
            quad,
        )?;
        (c, c2)
    };
    let k = prefactor(channel.hurst.value(), t);
    let raw = k * (fisher - square_curvature + curvature);
    let simplified = k * (fisher - curvature);
    if (raw - simplified).abs() > FORM_CROSS_CHECK * (1.0 + simplified.abs()) {
        return Err(Error::Quadrature {
            value: simplified,
            estimate: (raw - simplified).abs(),
        });
    }
    let notes = format!(
        "fd_step={fd_step:e} richardson; J_sigma2={fisher:.12e}; E[ss''+s'^2]={curvature:.12e}; raw_form={raw:.15e}"
    );
    Ok(IdentityReport::new(
        "debruijn-mult",
        t,
        channel.hurst.value(),
        lhs,
        simplified,
        tol,
        notes,
    ))
}

/// Entropy flow of the additive channel against `H t^{2H-1} J_1(X_t)`.
pub fn debruijn_check_additive(channel: &ChannelSpec, t: f64, fd_step: f64, tol: f64) -> Result<IdentityReport> {
    debruijn_check_additive_with(channel, t, fd_step, tol, &QuadratureSpec::tight())
}

pub fn debruijn_check_additive_with(
    channel: &ChannelSpec,
    t: f64,
    fd_step: f64,
    tol: f64,
    quad: &QuadratureSpec,
) -> Result<IdentityReport> {
    let initial = match &channel.variant {
        ChannelVariant::Additive { initial } => initial,
        ChannelVariant::Multiplicative { .. } => {
            return Err(Error::InvalidParameter("this check needs an additive channel".into()))
        }
    };
    check_step(t, fd_step)?;
    let prepared = channel.prepare(t + fd_step)?;
    let lhs = richardson_derivative(|s| infofunc::entropy(&prepared.density_at(s)?, quad), t, fd_step)?;
    let h = channel.hurst.value();
    let (rhs, how) = match initial {
        InitialLaw::Gaussian { variance, .. } => (prefactor(h, t) / (variance + channel.hurst.variance_at(t)), "closed form"),
        InitialLaw::Grid(_) => {
            let j = infofunc::generalized_fisher(&prepared.density_at(t)?, &WeightFunction::One, quad)?;
            (prefactor(h, t) * j, "quadrature J_1")
        }
    };
    Ok(IdentityReport::new(
        "debruijn-additive",
        t,
        h,
        lhs,
        rhs,
        tol,
        format!("fd_step={fd_step:e} richardson; rhs {how}"),
    ))
}

/// KL flow check together with the monotonicity corollary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlFlowOutcome {
    pub report: IdentityReport,
    /// K at t - δ, t, t + δ.
    pub kl_values: [f64; 3],
    pub non_increasing: bool,
}

/// `d/dt K(X_t ‖ Y_t)` against `-H t^{2H-1} J_{σ²}(X_t ‖ Y_t)` for two
/// multiplicative channels sharing σ and H.
pub fn kl_flow_check(x: &ChannelSpec, y: &ChannelSpec, t: f64, fd_step: f64, tol: f64) -> Result<KlFlowOutcome> {
    kl_flow_check_with(x, y, t, fd_step, tol, &QuadratureSpec::tight())
}

pub fn kl_flow_check_with(
    x: &ChannelSpec,
    y: &ChannelSpec,
    t: f64,
    fd_step: f64,
    tol: f64,
    quad: &QuadratureSpec,
) -> Result<KlFlowOutcome> {
    let (sx, _) = multiplicative_parts(x)?;
    let (sy, _) = multiplicative_parts(y)?;
    if x.hurst != y.hurst || !sx.same_function(sy) {
        return Err(Error::InvalidParameter(
            "KL flow needs two multiplicative channels with the same sigma and H".into(),
        ));
    }
    check_step(t, fd_step)?;
    let px = x.prepare(t + fd_step)?;
    let py = y.prepare(t + fd_step)?;
    let kl = |s: f64| -> Result<f64> { infofunc::kl_divergence(&px.density_at(s)?, &py.density_at(s)?, quad) };
    let lhs = richardson_derivative(kl, t, fd_step)?;
    let rf = infofunc::relative_fisher(
        &px.density_at(t)?,
        &py.density_at(t)?,
        &WeightFunction::SigmaSquared(sx.clone()),
        quad,
    )?;
    let rhs = -prefactor(x.hurst.value(), t) * rf;
    let kl_values = [kl(t - fd_step)?, kl(t)?, kl(t + fd_step)?];
    let slack = quad.abs_tol;
    let non_increasing = kl_values[1] <= kl_values[0] + slack && kl_values[2] <= kl_values[1] + slack;
    let report = IdentityReport::new(
        "kl-flow",
        t,
        x.hurst.value(),
        lhs,
        rhs,
        tol,
        format!("fd_step={fd_step:e} richardson; relative_fisher={rf:.12e}; non_increasing={non_increasing}"),
    );
    Ok(KlFlowOutcome {
        report,
        kl_values,
        non_increasing,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FokkerPlanckOptions {
    /// Spatial step of the five-point stencils.
    pub spatial_step: f64,
    /// Largest admissible estimated error of the spatial operator.
    pub resolution_bound: f64,
}

impl Default for FokkerPlanckOptions {
    fn default() -> Self {
        FokkerPlanckOptions {
            spatial_step: 1e-3,
            resolution_bound: 1e-5,
        }
    }
}

/// Five-point first and second derivatives at step `h`.
fn stencil(f: &impl Fn(f64) -> f64, x: f64, h: f64) -> (f64, f64) {
    let (m2, m1, c, p1, p2) = (f(x - 2.0 * h), f(x - h), f(x), f(x + h), f(x + 2.0 * h));
    let d1 = (m2 - 8.0 * m1 + 8.0 * p1 - p2) / (12.0 * h);
    let d2 = (-m2 + 16.0 * m1 - 30.0 * c + 16.0 * p1 - p2) / (12.0 * h * h);
    (d1, d2)
}

/// `∂t P - H t^{2H-1} ( -∂x[σσ' P] + ∂xx[σ² P] )` at each point of `x_grid`.
///
/// The spatial operator is expanded with analytic σ derivatives into
/// `(σ'² + σσ'') P + 3σσ' P' + σ² P''`; only P is differenced.
pub fn fokker_planck_residual(
    channel: &ChannelSpec,
    t: f64,
    x_grid: &[f64],
    fd_step_t: f64,
    opts: &FokkerPlanckOptions,
) -> Result<Vec<f64>> {
    let (sigma, _) = multiplicative_parts(channel)?;
    check_step(t, fd_step_t)?;
    if !(opts.spatial_step > 0.0) {
        return Err(Error::InvalidParameter("spatial step must be positive".into()));
    }
    let prepared = channel.prepare(t + fd_step_t)?;
    let times = [t - fd_step_t, t - 0.5 * fd_step_t, t, t + 0.5 * fd_step_t, t + fd_step_t];
    let fields: Vec<DensityField> = times.iter().map(|&s| prepared.density_at(s)).collect::<Result<_>>()?;
    let (lo, hi) = fields[2].domain();
    let hx = opts.spatial_step;
    let k = prefactor(channel.hurst.value(), t);
    x_grid
        .iter()
        .map(|&x| {
            if !(x - 4.0 * hx > lo && x + 4.0 * hx < hi) {
                return Err(Error::Range { x, lo, hi });
            }
            let dp_coarse = (fields[4].density(x) - fields[0].density(x)) / (2.0 * fd_step_t);
            let dp_fine = (fields[3].density(x) - fields[1].density(x)) / fd_step_t;
            let dt_p = (4.0 * dp_fine - dp_coarse) / 3.0;

            let p = |u: f64| fields[2].density(u);
            let (d1, d2) = stencil(&p, x, hx);
            let (d1_wide, d2_wide) = stencil(&p, x, 2.0 * hx);
            let (s, s1, s2) = sigma.jet(x)?;
            let error = 3.0 * (s * s1).abs() * (d1 - d1_wide).abs() / 15.0 + s * s * (d2 - d2_wide).abs() / 15.0;
            if error > opts.resolution_bound {
                return Err(Error::Resolution(format!(
                    "estimated spatial error {error:e} at x = {x} exceeds {:e}",
                    opts.resolution_bound
                )));
            }
            let operator = (s1 * s1 + s * s2) * p(x) + 3.0 * s * s1 * d1 + s * s * d2;
            Ok(dt_p - k * operator)
        })
        .collect()
}

/// Report form of [`fokker_planck_residual`]: lhs is the largest absolute
/// residual, rhs is zero.
pub fn fokker_planck_check(
    channel: &ChannelSpec,
    t: f64,
    x_grid: &[f64],
    fd_step_t: f64,
    tol: f64,
    opts: &FokkerPlanckOptions,
) -> Result<IdentityReport> {
    let residual = fokker_planck_residual(channel, t, x_grid, fd_step_t, opts)?;
    let worst = residual.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    let notes = format!(
        "fd_step_t={fd_step_t:e} richardson; spatial_step={:e}; points={}",
        opts.spatial_step,
        x_grid.len()
    );
    Ok(IdentityReport::new("fokker-planck", t, channel.hurst.value(), worst, 0.0, tol, notes))
}

/// Test function r with its derivative.
#[derive(Clone)]
pub enum TestFunction {
    Linear,
    Square,
    Cube,
    Sine,
    Custom {
        name: String,
        r: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        dr: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    },
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name())
    }
}

impl TestFunction {
    pub fn name(&self) -> &str {
        match self {
            TestFunction::Linear => "y",
            TestFunction::Square => "y^2",
            TestFunction::Cube => "y^3",
            TestFunction::Sine => "sin(y)",
            TestFunction::Custom { name, .. } => name,
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "y" | "linear" => Ok(TestFunction::Linear),
            "y^2" | "square" => Ok(TestFunction::Square),
            "y^3" | "cube" => Ok(TestFunction::Cube),
            "sin" | "sin(y)" | "sine" => Ok(TestFunction::Sine),
            other => Err(Error::Config(format!("unknown Stein test function '{other}'"))),
        }
    }

    pub fn value(&self, y: f64) -> f64 {
        match self {
            TestFunction::Linear => y,
            TestFunction::Square => y * y,
            TestFunction::Cube => y * y * y,
            TestFunction::Sine => y.sin(),
            TestFunction::Custom { r, .. } => r(y),
        }
    }

    pub fn derivative(&self, y: f64) -> f64 {
        match self {
            TestFunction::Linear => 1.0,
            TestFunction::Square => 2.0 * y,
            TestFunction::Cube => 3.0 * y * y,
            TestFunction::Sine => y.cos(),
            TestFunction::Custom { dr, .. } => dr(y),
        }
    }
}

const STEIN_NODES: usize = 64;
const STEIN_CHECK_NODES: usize = 96;

/// `E[r(Y)(Y - μ)]` against `v E[r'(Y)]` under `Normal(μ, v)`.
///
/// Both sides use 64-point Gauss-Hermite; a 96-point rule must agree to
/// the tolerances of `quad`, otherwise the rule is deemed unconverged.
pub fn stein_check(mu: f64, variance: f64, r: &TestFunction, tol: f64, quad: &QuadratureSpec) -> Result<IdentityReport> {
    if !(variance > 0.0 && variance.is_finite() && mu.is_finite()) {
        return Err(Error::InvalidParameter(format!("Stein check needs variance > 0, got {variance}")));
    }
    let sides = |n: usize| {
        let gh = GaussHermite::new(n);
        let lhs = gh.gaussian_expectation(mu, variance, |y| r.value(y) * (y - mu));
        let rhs = variance * gh.gaussian_expectation(mu, variance, |y| r.derivative(y));
        (lhs, rhs)
    };
    let (lhs, rhs) = sides(STEIN_NODES);
    let (lhs_ref, rhs_ref) = sides(STEIN_CHECK_NODES);
    for (a, b) in [(lhs, lhs_ref), (rhs, rhs_ref)] {
        let drift = (a - b).abs();
        if !drift.is_finite() || drift > quad.abs_tol.max(quad.rel_tol * b.abs()) {
            return Err(Error::Quadrature { value: a, estimate: drift });
        }
    }
    Ok(IdentityReport::new(
        "stein",
        0.0,
        0.5,
        lhs,
        rhs,
        tol,
        format!("r={}; mu={mu}; variance={variance}; gauss-hermite n={STEIN_NODES} vs {STEIN_CHECK_NODES}", r.name()),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Curvature {
    Convex,
    Concave,
}

impl Curvature {
    /// g = 0 falls on the concave side.
    pub fn of(g: f64) -> Self {
        if g > 0.0 {
            Curvature::Convex
        } else {
            Curvature::Concave
        }
    }
}

impl fmt::Display for Curvature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Curvature::Convex => "convex",
            Curvature::Concave => "concave",
        })
    }
}

/// Entropy power of an additive channel along a time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexityProfile {
    pub hurst: f64,
    pub t_grid: Vec<f64>,
    pub entropy_power: Vec<f64>,
    pub fisher: Vec<f64>,
    pub g_values: Vec<f64>,
    pub classification: Vec<Curvature>,
    /// Richardson second difference of N in t.
    pub second_difference: Vec<f64>,
    /// 2 N g.
    pub predicted: Vec<f64>,
}

impl ConvexityProfile {
    /// |d²N/dt² - 2Ng| at each point.
    pub fn second_difference_error(&self) -> Vec<f64> {
        self.second_difference
            .iter()
            .zip(&self.predicted)
            .map(|(a, b)| (a - b).abs())
            .collect()
    }

    /// True when every point satisfies `|d²N - 2Ng| ≤ rel |2Ng| + floor`.
    pub fn agrees(&self, rel: f64, floor: f64) -> bool {
        self.second_difference_error()
            .iter()
            .zip(&self.predicted)
            .all(|(e, p)| *e <= rel * p.abs() + floor)
    }
}

/// g(t) = 2H²t^{4H-2}J² + H(2H-1)t^{2H-2}J + Ht^{2H-1} dJ/dt for the
/// additive channel, with N(X_t)'' checked against 2Ng.
pub fn entropy_power_profile(channel: &ChannelSpec, t_grid: &[f64], fd_step: f64) -> Result<ConvexityProfile> {
    entropy_power_profile_with(channel, t_grid, fd_step, &QuadratureSpec::tight())
}

pub fn entropy_power_profile_with(
    channel: &ChannelSpec,
    t_grid: &[f64],
    fd_step: f64,
    quad: &QuadratureSpec,
) -> Result<ConvexityProfile> {
    let gaussian = match &channel.variant {
        ChannelVariant::Additive { initial } => matches!(initial, InitialLaw::Gaussian { .. }),
        ChannelVariant::Multiplicative { .. } => {
            return Err(Error::InvalidParameter("entropy-power profile needs an additive channel".into()))
        }
    };
    if t_grid.is_empty() {
        return Err(Error::Grid("empty time grid".into()));
    }
    let t_max = t_grid.iter().fold(0.0f64, |m, &t| m.max(t));
    let prepared: Channel = channel.prepare(t_max + fd_step)?;
    let h = channel.hurst.value();
    let fisher_at = |s: f64| infofunc::generalized_fisher(&prepared.density_at(s)?, &WeightFunction::One, quad);
    let power_at = |s: f64| infofunc::entropy_power(&prepared.density_at(s)?, quad);

    let mut profile = ConvexityProfile {
        hurst: h,
        t_grid: t_grid.to_vec(),
        entropy_power: Vec::with_capacity(t_grid.len()),
        fisher: Vec::with_capacity(t_grid.len()),
        g_values: Vec::with_capacity(t_grid.len()),
        classification: Vec::with_capacity(t_grid.len()),
        second_difference: Vec::with_capacity(t_grid.len()),
        predicted: Vec::with_capacity(t_grid.len()),
    };
    for &t in t_grid {
        check_step(t, fd_step)?;
        let j = fisher_at(t)?;
        let dj = if gaussian {
            -2.0 * prefactor(h, t) * j * j
        } else {
            richardson_derivative(fisher_at, t, fd_step)?
        };
        let g = 2.0 * h * h * t.powf(4.0 * h - 2.0) * j * j
            + h * (2.0 * h - 1.0) * t.powf(2.0 * h - 2.0) * j
            + prefactor(h, t) * dj;
        let n = power_at(t)?;
        profile.entropy_power.push(n);
        profile.fisher.push(j);
        profile.g_values.push(g);
        profile.classification.push(Curvature::of(g));
        profile.second_difference.push(richardson_second_derivative(power_at, t, fd_step)?);
        profile.predicted.push(2.0 * n * g);
    }
    Ok(profile)
}
