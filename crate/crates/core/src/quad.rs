//! Quadrature: globally adaptive Gauss-Kronrod (21-point) on a finite
//! interval with breakpoints, and Gauss-Hermite rules for Gaussian
//! expectations.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum QuadratureRule {
    #[default]
    GaussKronrod21,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureSpec {
    pub rule: QuadratureRule,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            rule: QuadratureRule::GaussKronrod21,
            abs_tol: 1e-10,
            rel_tol: 1e-8,
            max_subdivisions: 2000,
        }
    }
}

impl QuadratureSpec {
    /// Tolerances used under finite differences in time, where quadrature
    /// error is amplified by 1/δ.
    pub fn tight() -> Self {
        QuadratureSpec {
            abs_tol: 1e-14,
            rel_tol: 1e-13,
            max_subdivisions: 4000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0 && self.rel_tol > 0.0) || self.max_subdivisions == 0 {
            return Err(Error::InvalidParameter(format!(
                "quadrature tolerances must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

#[allow(clippy::excessive_precision)]
const XGK: [f64; 11] = [
    0.995657163025808080735527280689003,
    0.973906528517171720077964012084452,
    0.930157491355708226001207180059508,
    0.865063366688984510732096688423493,
    0.780817726586416897063717578345042,
    0.679409568299024406234327365114874,
    0.562757134668604683339000099272694,
    0.433395394129247190799265943165784,
    0.294392862701460198131126603103866,
    0.148874338981631210884826001129720,
    0.000000000000000000000000000000000,
];

#[allow(clippy::excessive_precision)]
const WGK: [f64; 11] = [
    0.011694638867371874278064396062192,
    0.032558162307964727478818972459390,
    0.054755896574351996031381300244580,
    0.075039674810919952767043140916190,
    0.093125454583697605535065465083366,
    0.109387158802297641899210590325805,
    0.123491976262065851077600525478220,
    0.134709217311473325928054001771707,
    0.142775938577060080797094273138717,
    0.147739104901338491374841515972068,
    0.149445554002916905664936468389821,
];

/// Gauss weights for the odd-indexed Kronrod nodes.
#[allow(clippy::excessive_precision)]
const WG: [f64; 5] = [
    0.066671344308688137593568809893332,
    0.149451349150580593145776339657697,
    0.219086362515982043995534934228163,
    0.269266719309996355091226921569469,
    0.295524224714752870173892994651338,
];

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn kronrod21<F>(f: &mut F, a: f64, b: f64) -> Result<Segment>
where
    F: FnMut(f64) -> Result<f64>,
{
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center)?;
    let mut lower = [0.0; 10];
    let mut upper = [0.0; 10];
    let mut kronrod = WGK[10] * fc;
    let mut gauss = 0.0;
    let mut resabs = (WGK[10] * fc).abs();
    for j in 0..10 {
        let dx = half * XGK[j];
        lower[j] = f(center - dx)?;
        upper[j] = f(center + dx)?;
        kronrod += WGK[j] * (lower[j] + upper[j]);
        resabs += WGK[j] * (lower[j].abs() + upper[j].abs());
        if j % 2 == 1 {
            gauss += WG[j / 2] * (lower[j] + upper[j]);
        }
    }
    let value = kronrod * half;
    if !value.is_finite() {
        return Err(Error::Quadrature {
            value,
            estimate: f64::INFINITY,
        });
    }
    // QUADPACK error scaling
    let mean = 0.5 * kronrod;
    let mut resasc = WGK[10] * (fc - mean).abs();
    for j in 0..10 {
        resasc += WGK[j] * ((lower[j] - mean).abs() + (upper[j] - mean).abs());
    }
    let resasc = resasc * half.abs();
    let resabs = resabs * half.abs();
    let mut error = ((kronrod - gauss) * half).abs();
    if resasc != 0.0 && error != 0.0 {
        error = resasc * (200.0 * error / resasc).powf(1.5).min(1.0);
    }
    error = error.max(50.0 * f64::EPSILON * resabs);
    Ok(Segment { a, b, value, error })
}

/// Integrates `f` over `[breaks[0], breaks[last]]`, starting from the
/// partition given by the (sorted) breakpoints.
pub fn integrate<F>(mut f: F, breaks: &[f64], spec: &QuadratureSpec) -> Result<QuadResult>
where
    F: FnMut(f64) -> Result<f64>,
{
    spec.validate()?;
    if breaks.len() < 2 {
        return Err(Error::InvalidParameter("need at least two breakpoints".into()));
    }
    let mut heap = BinaryHeap::with_capacity(2 * breaks.len());
    for w in breaks.windows(2) {
        if !(w[1] >= w[0]) {
            return Err(Error::InvalidParameter(format!("breakpoints not sorted: {w:?}")));
        }
        if w[1] > w[0] {
            heap.push(kronrod21(&mut f, w[0], w[1])?);
        }
    }
    let mut evaluations = 21 * heap.len();
    let mut subdivisions = heap.len();
    loop {
        let value: f64 = heap.iter().map(|s| s.value).sum();
        let error: f64 = heap.iter().map(|s| s.error).sum();
        if error <= spec.abs_tol.max(spec.rel_tol * value.abs()) {
            return Ok(QuadResult {
                value,
                error,
                evaluations,
            });
        }
        if subdivisions >= spec.max_subdivisions {
            return Err(Error::Quadrature {
                value,
                estimate: error,
            });
        }
        let worst = match heap.pop() {
            Some(s) => s,
            None => {
                return Ok(QuadResult {
                    value,
                    error,
                    evaluations,
                })
            }
        };
        let mid = 0.5 * (worst.a + worst.b);
        if !(mid > worst.a && mid < worst.b) {
            // interval at machine resolution; nothing left to refine
            let estimate = error;
            return Err(Error::Quadrature { value, estimate });
        }
        heap.push(kronrod21(&mut f, worst.a, mid)?);
        heap.push(kronrod21(&mut f, mid, worst.b)?);
        evaluations += 42;
        subdivisions += 1;
    }
}

/// Nodes and weights for ∫ e^{-x²} f(x) dx (physicists' Hermite).
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// Newton iteration on the orthonormal Hermite recurrence.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        const PIM4: f64 = 0.751_125_544_464_942_5; // π^{-1/4}
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        let m = n.div_ceil(2);
        let mut z = 0.0f64;
        for i in 0..m {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-0.16667),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * nodes[0],
                3 => 1.91 * z - 0.91 * nodes[1],
                _ => 2.0 * z - nodes[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..100 {
                let mut p1 = PIM4;
                let mut p2 = 0.0;
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            nodes[i] = z;
            nodes[n - 1 - i] = -z;
            weights[i] = 2.0 / (pp * pp);
            weights[n - 1 - i] = weights[i];
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        GaussHermite { nodes, weights }
    }

    /// E[f(Y)] for Y ~ Normal(mean, variance).
    pub fn gaussian_expectation<F: FnMut(f64) -> f64>(&self, mean: f64, variance: f64, mut f: F) -> f64 {
        let scale = (2.0 * variance).sqrt();
        let sum: f64 = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(mean + scale * x))
            .sum();
        sum / std::f64::consts::PI.sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kronrod_tables_are_consistent() {
        let kw: f64 = 2.0 * WGK[..10].iter().sum::<f64>() + WGK[10];
        let gw: f64 = 2.0 * WG.iter().sum::<f64>();
        assert!((kw - 2.0).abs() < 1e-15);
        assert!((gw - 2.0).abs() < 1e-15);
        // exact for polynomials: Kronrod degree 31, Gauss degree 19
        for k in (0..=30).step_by(2) {
            let exact = 2.0 / (k as f64 + 1.0);
            let mut kr = WGK[10] * if k == 0 { 1.0 } else { 0.0 };
            let mut ga = 0.0;
            for j in 0..10 {
                kr += 2.0 * WGK[j] * XGK[j].powi(k);
                if j % 2 == 1 {
                    ga += 2.0 * WG[j / 2] * XGK[j].powi(k);
                }
            }
            assert!((kr - exact).abs() < 1e-14, "kronrod degree {k}");
            if k <= 18 {
                assert!((ga - exact).abs() < 1e-14, "gauss degree {k}");
            }
        }
    }

    #[test]
    fn integrates_smooth_functions() {
        let spec = QuadratureSpec::tight();
        let r = integrate(|x: f64| Ok((-x * x / 2.0).exp()), &[-12.0, 0.0, 12.0], &spec).unwrap();
        assert!((r.value - (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-13);
        let r = integrate(|x: f64| Ok(x.sqrt()), &[0.0, 1.0], &QuadratureSpec::default()).unwrap();
        assert!((r.value - 2.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn reports_non_convergence() {
        let spec = QuadratureSpec {
            max_subdivisions: 3,
            ..QuadratureSpec::tight()
        };
        let err = integrate(|x: f64| Ok((1.0 / x).sin()), &[1e-6, 1.0], &spec).unwrap_err();
        assert!(matches!(err, Error::Quadrature { .. }));
    }

    #[test]
    fn propagates_integrand_errors() {
        let err = integrate(|_| Err(Error::Tail { x: 1.0 }), &[0.0, 1.0], &QuadratureSpec::default());
        assert_eq!(err.unwrap_err(), Error::Tail { x: 1.0 });
    }

    #[test]
    fn hermite_moments() {
        let gh = GaussHermite::new(64);
        let w: f64 = gh.weights.iter().sum();
        assert!((w - std::f64::consts::PI.sqrt()).abs() < 1e-13);
        assert!((gh.gaussian_expectation(0.0, 1.0, |y| y.powi(4)) - 3.0).abs() < 1e-12);
        assert!((gh.gaussian_expectation(2.0, 0.5, |y| y) - 2.0).abs() < 1e-13);
        // E cos(Y) = e^{-1/2} for standard normal
        let c = gh.gaussian_expectation(0.0, 1.0, f64::cos);
        assert!((c - (-0.5f64).exp()).abs() < 1e-14);
        let gh5 = GaussHermite::new(5);
        assert_eq!(gh5.nodes[2], 0.0);
        assert!((gh5.gaussian_expectation(0.0, 1.0, |y| y * y) - 1.0).abs() < 1e-14);
    }
}
