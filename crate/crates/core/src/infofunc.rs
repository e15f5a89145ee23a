//! Information functionals of one-dimensional densities.
//!
//! | functional | definition |
//! |---|---|
//! | [`entropy`] | h(X) = -∫ f ln f |
//! | [`generalized_fisher`] | J_b(X) = ∫ f b (∂x ln f)² |
//! | [`kl_divergence`] | K(X‖Y) = ∫ f ln(f/g) |
//! | [`relative_fisher`] | J_b(X‖Y) = ∫ f b (∂x ln(f/g))² |
//! | [`entropy_power`] | N(X) = e^{2h}/(2πe) |
//!
//! Gaussian-tagged fields use closed forms unless [`Evaluation::Quadrature`]
//! is requested; everything else is integrated with adaptive Gauss-Kronrod
//! in the field's chart coordinate.

use std::f64::consts::{E, PI};
use std::fmt;
use std::sync::Arc;

use crate::channels::{DensityField, FieldKind, DENSITY_FLOOR};
use crate::error::{Error, Result};
use crate::quad::{integrate, QuadratureSpec};
use crate::sigma::SigmaModel;

/// Positive weight b(x) of the generalized Fisher information.
#[derive(Clone)]
pub enum WeightFunction {
    One,
    SigmaSquared(SigmaModel),
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for WeightFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightFunction::One => write!(f, "One"),
            WeightFunction::SigmaSquared(s) => write!(f, "SigmaSquared({:?})", s.kind()),
            WeightFunction::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl WeightFunction {
    pub fn eval(&self, x: f64) -> Result<f64> {
        let b = match self {
            WeightFunction::One => 1.0,
            WeightFunction::SigmaSquared(s) => s.value(x)?.powi(2),
            WeightFunction::Custom(f) => f(x),
        };
        if !(b > 0.0) {
            return Err(Error::Domain {
                what: "weight b(x)",
                value: b,
                domain: "(0, inf)".into(),
            });
        }
        Ok(b)
    }

    fn constant_value(&self) -> Option<f64> {
        match self {
            WeightFunction::One => Some(1.0),
            WeightFunction::SigmaSquared(s) => s.constant_value().map(|c| c * c),
            WeightFunction::Custom(_) => None,
        }
    }
}

/// Whether Gaussian-tagged fields may use closed forms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Evaluation {
    #[default]
    Auto,
    Quadrature,
}

impl Evaluation {
    fn gaussian(self, field: &DensityField) -> Option<(f64, f64)> {
        match self {
            Evaluation::Auto => field.gaussian_params(),
            Evaluation::Quadrature => None,
        }
    }
}

/// E[g(X)] = ∫ p g.
pub fn expectation<G>(field: &DensityField, mut g: G, quad: &QuadratureSpec) -> Result<f64>
where
    G: FnMut(f64) -> Result<f64>,
{
    let chart = field.chart();
    let r = integrate(
        |u| {
            let p = field.point(u)?;
            if p.density <= DENSITY_FLOOR {
                return Ok(0.0);
            }
            Ok(p.density * g(p.x)? * p.jacobian)
        },
        &chart.breaks,
        quad,
    )?;
    Ok(r.value)
}

pub fn entropy(field: &DensityField, quad: &QuadratureSpec) -> Result<f64> {
    entropy_with(field, quad, Evaluation::Auto)
}

pub fn entropy_with(field: &DensityField, quad: &QuadratureSpec, mode: Evaluation) -> Result<f64> {
    if let Some((_, v)) = mode.gaussian(field) {
        return Ok(0.5 * (2.0 * PI * E * v).ln());
    }
    let chart = field.chart();
    let r = integrate(
        |u| {
            let p = field.point(u)?;
            if p.density <= DENSITY_FLOOR {
                return Ok(0.0);
            }
            Ok(-p.density * p.ln_density * p.jacobian)
        },
        &chart.breaks,
        quad,
    )?;
    Ok(r.value)
}

pub fn generalized_fisher(field: &DensityField, b: &WeightFunction, quad: &QuadratureSpec) -> Result<f64> {
    generalized_fisher_with(field, b, quad, Evaluation::Auto)
}

pub fn generalized_fisher_with(
    field: &DensityField,
    b: &WeightFunction,
    quad: &QuadratureSpec,
    mode: Evaluation,
) -> Result<f64> {
    if let (Some((_, v)), Some(c)) = (mode.gaussian(field), b.constant_value()) {
        return Ok(c / v);
    }
    let chart = field.chart();
    let r = integrate(
        |u| {
            let p = field.point(u)?;
            if p.density <= DENSITY_FLOOR {
                return Ok(0.0);
            }
            Ok(p.density * b.eval(p.x)? * p.score * p.score * p.jacobian)
        },
        &chart.breaks,
        quad,
    )?;
    Ok(r.value)
}

/// Support of a field: where its density can be positive.
fn support(field: &DensityField) -> (f64, f64) {
    match field.kind() {
        FieldKind::Gaussian { .. } | FieldKind::Mixture(_) => (f64::NEG_INFINITY, f64::INFINITY),
        _ => field.domain(),
    }
}

/// Breakpoints of p's chart clipped to the support of q.
fn joint_breaks(p: &DensityField, q: &DensityField, quad: &QuadratureSpec) -> Result<Vec<f64>> {
    let full = p.chart().breaks;
    let (q_lo, q_hi) = support(q);
    let lo = if q_lo.is_finite() { p.chart_coordinate(q_lo) } else { f64::NEG_INFINITY };
    let hi = if q_hi.is_finite() { p.chart_coordinate(q_hi) } else { f64::INFINITY };
    let first = full[0];
    let last = *full.last().unwrap();
    if lo <= first && hi >= last {
        return Ok(full);
    }
    let (a, b) = (lo.max(first), hi.min(last));
    if !(a < b) {
        return Err(Error::Support { x: first });
    }
    let mut breaks = vec![a];
    breaks.extend(full.iter().copied().filter(|&u| u > a && u < b));
    breaks.push(b);
    // p must not put mass where q cannot be evaluated
    let inside = integrate(
        |u| {
            let pt = p.point(u)?;
            Ok(pt.density * pt.jacobian)
        },
        &breaks,
        quad,
    )?
    .value;
    let total = p.mass(quad)?;
    if total - inside > 1e-9 {
        let x = p.point(if a > first { a } else { b })?.x;
        return Err(Error::Support { x });
    }
    Ok(breaks)
}

const SUPPORT_THRESHOLD: f64 = 1e-12;

pub fn kl_divergence(p: &DensityField, q: &DensityField, quad: &QuadratureSpec) -> Result<f64> {
    kl_divergence_with(p, q, quad, Evaluation::Auto)
}

pub fn kl_divergence_with(p: &DensityField, q: &DensityField, quad: &QuadratureSpec, mode: Evaluation) -> Result<f64> {
    if let (Some((m1, v1)), Some((m2, v2))) = (mode.gaussian(p), mode.gaussian(q)) {
        return Ok(0.5 * ((v2 / v1).ln() + (v1 + (m1 - m2).powi(2)) / v2 - 1.0));
    }
    let breaks = joint_breaks(p, q, quad)?;
    let r = integrate(
        |u| {
            let pt = p.point(u)?;
            if pt.density <= DENSITY_FLOOR {
                return Ok(0.0);
            }
            let ln_q = q.ln_density(pt.x);
            if ln_q == f64::NEG_INFINITY {
                if pt.density >= SUPPORT_THRESHOLD {
                    return Err(Error::Support { x: pt.x });
                }
                return Ok(0.0);
            }
            Ok(pt.density * (pt.ln_density - ln_q) * pt.jacobian)
        },
        &breaks,
        quad,
    )?;
    Ok(r.value)
}

pub fn relative_fisher(
    p: &DensityField,
    q: &DensityField,
    b: &WeightFunction,
    quad: &QuadratureSpec,
) -> Result<f64> {
    relative_fisher_with(p, q, b, quad, Evaluation::Auto)
}

pub fn relative_fisher_with(
    p: &DensityField,
    q: &DensityField,
    b: &WeightFunction,
    quad: &QuadratureSpec,
    mode: Evaluation,
) -> Result<f64> {
    if let (Some((m1, v1)), Some((m2, v2)), Some(c)) = (mode.gaussian(p), mode.gaussian(q), b.constant_value()) {
        // score difference a x + k is affine
        let a = 1.0 / v2 - 1.0 / v1;
        let k = m1 / v1 - m2 / v2;
        return Ok(c * (a * a * v1 + (a * m1 + k).powi(2)));
    }
    let breaks = joint_breaks(p, q, quad)?;
    let r = integrate(
        |u| {
            let pt = p.point(u)?;
            if pt.density <= DENSITY_FLOOR {
                return Ok(0.0);
            }
            let score_q = match q.log_score(pt.x) {
                Ok(s) => s,
                Err(Error::Tail { .. }) if pt.density < SUPPORT_THRESHOLD => return Ok(0.0),
                Err(Error::Tail { x }) => return Err(Error::Support { x }),
                Err(e) => return Err(e),
            };
            let d = pt.score - score_q;
            Ok(pt.density * b.eval(pt.x)? * d * d * pt.jacobian)
        },
        &breaks,
        quad,
    )?;
    Ok(r.value)
}

pub fn entropy_power(field: &DensityField, quad: &QuadratureSpec) -> Result<f64> {
    entropy_power_with(field, quad, Evaluation::Auto)
}

pub fn entropy_power_with(field: &DensityField, quad: &QuadratureSpec, mode: Evaluation) -> Result<f64> {
    Ok(entropy_power_from_entropy(entropy_with(field, quad, mode)?))
}

pub fn entropy_power_from_entropy(h: f64) -> f64 {
    (2.0 * h).exp() / (2.0 * PI * E)
}
