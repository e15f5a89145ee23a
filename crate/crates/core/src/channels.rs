//! Channel models and the marginal density of their output.
//!
//! * `Multiplicative { σ, x0 }`: `X_t = φ(B^H_t)`; the density is the
//!   push-forward of `Normal(0, t^{2H})` through the Doss-Sussmann flow.
//! * `Additive { initial }`: `X_t = X_0 + B^H_t`; Gaussian initial laws stay
//!   Gaussian, grid-specified laws are convolved with the Gaussian kernel.
//!
//! A [`DensityField`] carries an analytic tag when it is Gaussian so that
//! the functionals in [`crate::infofunc`] can use closed forms.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::doss::{self, PhiSolution};
use crate::error::{Error, Result};
use crate::fbm::Hurst;
use crate::sigma::SigmaModel;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;
/// Gaussian fields and mixture tails extend this many standard deviations.
const GAUSSIAN_DOMAIN_WIDTH: f64 = 10.0;
/// Integration chart of push-forward fields, in standard deviations of z.
const FLOW_CHART_WIDTH: f64 = 8.0;
pub const DEFAULT_MASS_TOLERANCE: f64 = 1e-8;

/// A density given by its values on a uniform grid over `[lo, hi]`,
/// linearly interpolated between nodes and zero outside.
#[derive(Debug, Clone, PartialEq)]
pub struct GridLaw {
    lo: f64,
    hi: f64,
    values: Vec<f64>,
}

impl GridLaw {
    pub fn new(domain: (f64, f64), values: Vec<f64>) -> Result<Self> {
        let (lo, hi) = domain;
        if !(lo < hi && lo.is_finite() && hi.is_finite()) || values.len() < 2 {
            return Err(Error::InvalidParameter(
                "grid density needs a finite interval and at least two values".into(),
            ));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidParameter(format!("grid density value {v} is negative or not finite")));
        }
        let law = GridLaw { lo, hi, values };
        let mass = law.mass();
        if (mass - 1.0).abs() > DEFAULT_MASS_TOLERANCE {
            return Err(Error::InvalidParameter(format!(
                "grid density integrates to {mass}, expected 1 within {DEFAULT_MASS_TOLERANCE:e}"
            )));
        }
        Ok(law)
    }

    /// Samples `f` on `points` nodes and rescales to unit trapezoid mass.
    pub fn from_fn(domain: (f64, f64), points: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        if points < 2 {
            return Err(Error::InvalidParameter("grid density needs at least two points".into()));
        }
        let step = (domain.1 - domain.0) / (points - 1) as f64;
        let mut values: Vec<f64> = (0..points).map(|j| f(domain.0 + j as f64 * step)).collect();
        let raw = GridLaw {
            lo: domain.0,
            hi: domain.1,
            values: values.clone(),
        };
        let mass = raw.mass();
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::InvalidParameter(format!("grid density has mass {mass}")));
        }
        values.iter_mut().for_each(|v| *v /= mass);
        GridLaw::new(domain, values)
    }

    pub fn uniform(domain: (f64, f64), points: usize) -> Result<Self> {
        let height = 1.0 / (domain.1 - domain.0);
        GridLaw::new(domain, vec![height; points.max(2)])
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.values.len() - 1) as f64
    }

    pub fn node(&self, j: usize) -> f64 {
        self.lo + j as f64 * self.step()
    }

    /// Trapezoid weights times values; sums to the mass.
    fn trapezoid_weights(&self) -> Vec<f64> {
        let step = self.step();
        let last = self.values.len() - 1;
        self.values
            .iter()
            .enumerate()
            .map(|(j, v)| if j == 0 || j == last { 0.5 * v * step } else { v * step })
            .collect()
    }

    /// Exact mass of the piecewise-linear interpolant.
    pub fn mass(&self) -> f64 {
        self.trapezoid_weights().iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.cell_moments().0
    }

    pub fn second_moment(&self) -> f64 {
        self.cell_moments().1
    }

    /// First and second moments of the piecewise-linear density, exactly.
    fn cell_moments(&self) -> (f64, f64) {
        let step = self.step();
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for k in 0..self.values.len() - 1 {
            let (a, b) = (self.node(k), self.node(k) + step);
            let (fa, fb) = (self.values[k], self.values[k + 1]);
            // ∫ x^p (fa (b-x) + fb (x-a)) / step dx over [a, b]
            m1 += step * (fa * (2.0 * a + b) + fb * (a + 2.0 * b)) / 6.0;
            m2 += step * (fa * (3.0 * a * a + 2.0 * a * b + b * b) + fb * (a * a + 2.0 * a * b + 3.0 * b * b)) / 12.0;
        }
        (m1, m2)
    }

    fn cell(&self, x: f64) -> Option<(usize, f64)> {
        if !(x >= self.lo && x <= self.hi) {
            return None;
        }
        let u = (x - self.lo) / self.step();
        let k = (u.floor() as usize).min(self.values.len() - 2);
        Some((k, u - k as f64))
    }

    pub fn density(&self, x: f64) -> f64 {
        match self.cell(x) {
            Some((k, s)) => self.values[k] * (1.0 - s) + self.values[k + 1] * s,
            None => 0.0,
        }
    }

    /// Slope of the interpolant over the cell containing x.
    fn slope(&self, x: f64) -> f64 {
        match self.cell(x) {
            Some((k, _)) => (self.values[k + 1] - self.values[k]) / self.step(),
            None => 0.0,
        }
    }

    /// Inverse CDF of the piecewise-linear law.
    pub fn quantile(&self, u: f64) -> f64 {
        let step = self.step();
        let mut acc = 0.0;
        for k in 0..self.values.len() - 1 {
            let (fa, fb) = (self.values[k], self.values[k + 1]);
            let cell_mass = 0.5 * (fa + fb) * step;
            if acc + cell_mass >= u || k == self.values.len() - 2 {
                let r = (u - acc).clamp(0.0, cell_mass);
                let slope = (fb - fa) / step;
                // fa s + slope s²/2 = r, in the cancellation-free form
                let disc = (fa * fa + 2.0 * slope * r).max(0.0);
                let denom = fa + disc.sqrt();
                let s = if denom > 0.0 { 2.0 * r / denom } else { 0.0 };
                return self.node(k) + s.min(step);
            }
            acc += cell_mass;
        }
        self.hi
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialLaw {
    Gaussian { mean: f64, variance: f64 },
    Grid(GridLaw),
}

impl InitialLaw {
    pub fn gaussian(mean: f64, variance: f64) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite() && mean.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "initial Gaussian needs finite mean and positive variance, got ({mean}, {variance})"
            )));
        }
        Ok(InitialLaw::Gaussian { mean, variance })
    }

    pub fn mean(&self) -> f64 {
        match self {
            InitialLaw::Gaussian { mean, .. } => *mean,
            InitialLaw::Grid(g) => g.mean(),
        }
    }

    pub fn second_moment(&self) -> f64 {
        match self {
            InitialLaw::Gaussian { mean, variance } => variance + mean * mean,
            InitialLaw::Grid(g) => g.second_moment(),
        }
    }
}

#[derive(Debug, Clone)]
pub enum ChannelVariant {
    Multiplicative { sigma: SigmaModel, x0: f64 },
    Additive { initial: InitialLaw },
}

#[derive(Debug, Clone)]
pub struct ChannelSpec {
    pub variant: ChannelVariant,
    pub hurst: Hurst,
}

impl ChannelSpec {
    pub fn multiplicative(sigma: SigmaModel, x0: f64, hurst: Hurst) -> Self {
        ChannelSpec {
            variant: ChannelVariant::Multiplicative { sigma, x0 },
            hurst,
        }
    }

    pub fn additive(initial: InitialLaw, hurst: Hurst) -> Self {
        ChannelSpec {
            variant: ChannelVariant::Additive { initial },
            hurst,
        }
    }

    pub fn with_hurst(&self, hurst: Hurst) -> Self {
        ChannelSpec {
            variant: self.variant.clone(),
            hurst,
        }
    }

    pub fn is_multiplicative(&self) -> bool {
        matches!(self.variant, ChannelVariant::Multiplicative { .. })
    }

    pub fn sigma(&self) -> Option<&SigmaModel> {
        match &self.variant {
            ChannelVariant::Multiplicative { sigma, .. } => Some(sigma),
            ChannelVariant::Additive { .. } => None,
        }
    }

    /// Solves whatever the channel needs to produce densities up to `t_max`.
    pub fn prepare(&self, t_max: f64) -> Result<Channel> {
        if !(t_max > 0.0 && t_max.is_finite()) {
            return Err(Error::InvalidParameter(format!("t_max must be positive, got {t_max}")));
        }
        let phi = match &self.variant {
            ChannelVariant::Multiplicative { sigma, x0 } => {
                let z_domain = doss::z_domain_for(t_max, self.hurst);
                Some(Arc::new(doss::solve_phi(sigma, *x0, z_domain, doss::DEFAULT_ODE_TOLERANCE)?))
            }
            ChannelVariant::Additive { initial } => {
                if !initial.second_moment().is_finite() {
                    return Err(Error::InvalidParameter("initial law has no finite second moment".into()));
                }
                None
            }
        };
        Ok(Channel {
            spec: self.clone(),
            phi,
            t_max,
        })
    }

    pub fn density_at(&self, t: f64) -> Result<DensityField> {
        if !(t > 0.0) && self.is_multiplicative() {
            return Err(Error::DegenerateTime);
        }
        self.prepare(t.max(f64::MIN_POSITIVE))?.density_at(t)
    }
}

/// A channel with its flow solved on a z domain wide enough for `t ≤ t_max`.
#[derive(Debug, Clone)]
pub struct Channel {
    spec: ChannelSpec,
    phi: Option<Arc<PhiSolution>>,
    t_max: f64,
}

impl Channel {
    pub fn spec(&self) -> &ChannelSpec {
        &self.spec
    }

    pub fn hurst(&self) -> Hurst {
        self.spec.hurst
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn phi(&self) -> Option<&Arc<PhiSolution>> {
        self.phi.as_ref()
    }

    pub fn density_at(&self, t: f64) -> Result<DensityField> {
        if !(t >= 0.0) {
            return Err(Error::Domain {
                what: "t",
                value: t,
                domain: "[0, inf)".into(),
            });
        }
        let v = self.spec.hurst.variance_at(t);
        match &self.spec.variant {
            ChannelVariant::Multiplicative { sigma, x0 } => {
                if t == 0.0 {
                    return Err(Error::DegenerateTime);
                }
                if t > self.t_max * (1.0 + 1e-12) {
                    return Err(Error::InvalidParameter(format!(
                        "t = {t} exceeds the prepared horizon {}",
                        self.t_max
                    )));
                }
                if let Some(c) = sigma.constant_value() {
                    return Ok(DensityField::gaussian(*x0, c * c * v));
                }
                let phi = self.phi.clone().expect("multiplicative channel carries a flow");
                Ok(DensityField::pushforward(phi, v))
            }
            ChannelVariant::Additive { initial } => match initial {
                InitialLaw::Gaussian { mean, variance } => Ok(DensityField::gaussian(*mean, variance + v)),
                InitialLaw::Grid(g) if t == 0.0 => Ok(DensityField::grid(g.clone())),
                InitialLaw::Grid(g) => DensityField::mixture(g, v),
            },
        }
    }
}

/// Gaussian-kernel convolution of a grid law by trapezoid quadrature:
/// `Σ_j w_j ϕ_v(x - y_j)` with weights summing to one.
#[derive(Debug, Clone)]
pub struct GaussianMixture {
    lo: f64,
    step: f64,
    weights: Vec<f64>,
    variance: f64,
}

impl GaussianMixture {
    fn hi(&self) -> f64 {
        self.lo + (self.weights.len() - 1) as f64 * self.step
    }

    /// Node range whose kernels contribute more than e^{-40} of the nearest one.
    fn window(&self, x: f64) -> (usize, usize) {
        let hi = self.hi();
        let d_min = if x < self.lo {
            self.lo - x
        } else if x > hi {
            x - hi
        } else {
            0.0
        };
        let reach = (d_min * d_min + 80.0 * self.variance).sqrt();
        let n = self.weights.len();
        let a = ((x - reach - self.lo) / self.step).floor().max(0.0) as usize;
        let b = (((x + reach - self.lo) / self.step).ceil().max(0.0) as usize).min(n - 1);
        (a.min(n - 1), b)
    }

    /// (ln p(x), score(x)).
    fn log_density_and_score(&self, x: f64) -> (f64, f64) {
        let (a, b) = self.window(x);
        let (s, two_v) = (self.step, 2.0 * self.variance);
        let j0 = (((x.clamp(self.lo, self.hi()) - self.lo) / s).round() as usize).clamp(a, b);
        let d0 = x - (self.lo + j0 as f64 * s);
        // kernel ratios between neighbouring nodes form a geometric sequence
        let decay = (-s * s / self.variance).exp();
        let mut sum = self.weights[j0];
        let mut moment = self.weights[j0] * d0;
        for (dir, end) in [(1.0, b), (-1.0, a)] {
            let mut g = 1.0;
            let mut ratio = ((2.0 * dir * d0 * s - s * s) / two_v).exp();
            let mut j = j0;
            while j != end && g > 0.0 {
                j = if dir > 0.0 { j + 1 } else { j - 1 };
                g *= ratio;
                ratio *= decay;
                let d = x - (self.lo + j as f64 * s);
                sum += self.weights[j] * g;
                moment += self.weights[j] * g * d;
            }
        }
        let ln_p = sum.ln() - d0 * d0 / two_v - LN_SQRT_2PI - 0.5 * self.variance.ln();
        (ln_p, -moment / (sum * self.variance))
    }
}

#[derive(Debug, Clone)]
pub enum FieldKind {
    Gaussian { mean: f64, variance: f64 },
    /// Law of φ(Z), Z ~ Normal(0, variance).
    PushForward { phi: Arc<PhiSolution>, variance: f64 },
    Grid(Arc<GridLaw>),
    Mixture(Arc<GaussianMixture>),
}

/// Integration chart: the coordinate u in which a field is integrated,
/// with `x = map(u)` and breakpoints in u.
#[derive(Debug, Clone)]
pub(crate) struct Chart {
    pub breaks: Vec<f64>,
}

/// Everything the functionals need at one chart node.
#[derive(Debug, Clone, Copy)]
pub(crate) struct FieldPoint {
    pub x: f64,
    /// dx/du.
    pub jacobian: f64,
    pub density: f64,
    pub ln_density: f64,
    /// ∂x ln p; NaN where the density vanishes.
    pub score: f64,
}

/// A one-dimensional probability density with its score.
#[derive(Debug, Clone)]
pub struct DensityField {
    kind: FieldKind,
    domain: (f64, f64),
    mass_tolerance: f64,
}

/// Densities below this are treated as zero.
pub const DENSITY_FLOOR: f64 = 1e-300;

impl DensityField {
    pub fn gaussian(mean: f64, variance: f64) -> Self {
        let half = GAUSSIAN_DOMAIN_WIDTH * variance.sqrt();
        DensityField {
            kind: FieldKind::Gaussian { mean, variance },
            domain: (mean - half, mean + half),
            mass_tolerance: DEFAULT_MASS_TOLERANCE,
        }
    }

    pub fn pushforward(phi: Arc<PhiSolution>, variance: f64) -> Self {
        let domain = phi.range();
        DensityField {
            kind: FieldKind::PushForward { phi, variance },
            domain,
            mass_tolerance: DEFAULT_MASS_TOLERANCE,
        }
    }

    pub fn grid(law: GridLaw) -> Self {
        let domain = law.domain();
        DensityField {
            kind: FieldKind::Grid(Arc::new(law)),
            domain,
            mass_tolerance: DEFAULT_MASS_TOLERANCE,
        }
    }

    /// Convolution of `law` with a centered Gaussian of variance `kernel_variance`.
    pub fn mixture(law: &GridLaw, kernel_variance: f64) -> Result<Self> {
        let std = kernel_variance.sqrt();
        let step = law.step();
        if std < 2.0 * step {
            return Err(Error::Resolution(format!(
                "kernel standard deviation {std:e} is below two grid steps ({step:e})"
            )));
        }
        let mut weights = law.trapezoid_weights();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        let half = GAUSSIAN_DOMAIN_WIDTH * std;
        let (lo, hi) = law.domain();
        Ok(DensityField {
            kind: FieldKind::Mixture(Arc::new(GaussianMixture {
                lo,
                step,
                weights,
                variance: kernel_variance,
            })),
            domain: (lo - half, hi + half),
            mass_tolerance: DEFAULT_MASS_TOLERANCE,
        })
    }

    pub fn kind(&self) -> &FieldKind {
        &self.kind
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    pub fn mass_tolerance(&self) -> f64 {
        self.mass_tolerance
    }

    /// (mean, variance) when the field is tagged Gaussian.
    pub fn gaussian_params(&self) -> Option<(f64, f64)> {
        match self.kind {
            FieldKind::Gaussian { mean, variance } => Some((mean, variance)),
            _ => None,
        }
    }

    pub fn ln_density(&self, x: f64) -> f64 {
        match &self.kind {
            FieldKind::Gaussian { mean, variance } => {
                -(x - mean).powi(2) / (2.0 * variance) - LN_SQRT_2PI - 0.5 * variance.ln()
            }
            FieldKind::PushForward { phi, variance } => match phi.invert(x) {
                Ok(z) => {
                    -z * z / (2.0 * variance) - LN_SQRT_2PI - 0.5 * variance.ln()
                        - phi.sigma().raw(x, 0).ln()
                }
                Err(_) => f64::NEG_INFINITY,
            },
            FieldKind::Grid(g) => g.density(x).ln(),
            FieldKind::Mixture(m) => m.log_density_and_score(x).0,
        }
    }

    pub fn density(&self, x: f64) -> f64 {
        self.ln_density(x).exp()
    }

    /// ∂x ln p(x).
    pub fn score(&self, x: f64) -> Result<f64> {
        let ln_p = self.ln_density(x);
        if !(ln_p.exp() > DENSITY_FLOOR) {
            return Err(Error::Tail { x });
        }
        self.log_score(x)
    }

    /// Score computed from the log-density, usable wherever ln p is finite
    /// even if p itself underflows.
    pub(crate) fn log_score(&self, x: f64) -> Result<f64> {
        if self.ln_density(x) == f64::NEG_INFINITY {
            return Err(Error::Tail { x });
        }
        Ok(match &self.kind {
            FieldKind::Gaussian { mean, variance } => -(x - mean) / variance,
            FieldKind::PushForward { phi, variance } => {
                let z = phi.invert(x)?;
                let (s, ds, _) = phi.sigma().jet(x)?;
                (-z / variance - ds) / s
            }
            FieldKind::Grid(g) => g.slope(x) / g.density(x),
            FieldKind::Mixture(m) => m.log_density_and_score(x).1,
        })
    }

    pub(crate) fn chart(&self) -> Chart {
        let mut breaks = match &self.kind {
            FieldKind::Gaussian { mean, variance } => {
                let s = variance.sqrt();
                [-10.0, -6.0, -3.0, -1.0, 0.0, 1.0, 3.0, 6.0, 10.0]
                    .iter()
                    .map(|k| mean + k * s)
                    .collect()
            }
            FieldKind::PushForward { phi, variance } => {
                let s = variance.sqrt();
                let (lo, hi) = phi.z_table();
                let lo = lo.max(-FLOW_CHART_WIDTH * s);
                let hi = hi.min(FLOW_CHART_WIDTH * s);
                let mut b = vec![lo];
                b.extend(
                    [-6.0, -3.0, -1.0, 0.0, 1.0, 3.0, 6.0]
                        .iter()
                        .map(|k| k * s)
                        .filter(|&u| u > lo && u < hi),
                );
                b.push(hi);
                b
            }
            FieldKind::Grid(g) => {
                let n = g.values.len();
                let stride = n.div_ceil(2048).max(1);
                let mut b: Vec<f64> = (0..n).step_by(stride).map(|j| g.node(j)).collect();
                if *b.last().unwrap() < g.hi {
                    b.push(g.hi);
                }
                b
            }
            FieldKind::Mixture(m) => {
                let (lo, hi) = self.domain;
                let s = m.variance.sqrt();
                let spacing = s.max((m.hi() - m.lo) / 64.0);
                let mut b = vec![lo, m.lo - 3.0 * s];
                let mut u = m.lo;
                while u < m.hi() {
                    b.push(u);
                    u += spacing;
                }
                b.extend([m.hi(), m.hi() + 3.0 * s, hi]);
                b
            }
        };
        breaks.dedup();
        Chart { breaks }
    }

    /// Chart coordinate of x; clamps outside the chart.
    pub(crate) fn chart_coordinate(&self, x: f64) -> f64 {
        match &self.kind {
            FieldKind::PushForward { phi, .. } => {
                let (lo, hi) = phi.range();
                if x <= lo {
                    phi.z_table().0
                } else if x >= hi {
                    phi.z_table().1
                } else {
                    phi.invert(x).unwrap_or(0.0)
                }
            }
            _ => x,
        }
    }

    pub(crate) fn point(&self, u: f64) -> Result<FieldPoint> {
        match &self.kind {
            FieldKind::PushForward { phi, variance } => {
                let x = phi.eval(u)?;
                let (s, ds, _) = phi.sigma().jet(x)?;
                let ln_density = -u * u / (2.0 * variance) - LN_SQRT_2PI - 0.5 * variance.ln() - s.ln();
                Ok(FieldPoint {
                    x,
                    jacobian: s,
                    density: ln_density.exp(),
                    ln_density,
                    score: (-u / variance - ds) / s,
                })
            }
            FieldKind::Gaussian { mean, variance } => {
                let ln_density = self.ln_density(u);
                Ok(FieldPoint {
                    x: u,
                    jacobian: 1.0,
                    density: ln_density.exp(),
                    ln_density,
                    score: -(u - mean) / variance,
                })
            }
            FieldKind::Grid(g) => {
                let density = g.density(u);
                Ok(FieldPoint {
                    x: u,
                    jacobian: 1.0,
                    density,
                    ln_density: density.ln(),
                    score: if density > DENSITY_FLOOR { g.slope(u) / density } else { f64::NAN },
                })
            }
            FieldKind::Mixture(m) => {
                let (ln_density, score) = m.log_density_and_score(u);
                Ok(FieldPoint {
                    x: u,
                    jacobian: 1.0,
                    density: ln_density.exp(),
                    ln_density,
                    score,
                })
            }
        }
    }

    /// ∫ p over the integration chart.
    pub fn mass(&self, quad: &crate::quad::QuadratureSpec) -> Result<f64> {
        let chart = self.chart();
        let r = crate::quad::integrate(
            |u| {
                let p = self.point(u)?;
                Ok(p.density * p.jacobian)
            },
            &chart.breaks,
            quad,
        )?;
        Ok(r.value)
    }
}

/// Normal density, used by tests and oracles.
pub fn normal_pdf(x: f64, mean: f64, variance: f64) -> f64 {
    (-(x - mean).powi(2) / (2.0 * variance)).exp() / (2.0 * PI * variance).sqrt()
}
