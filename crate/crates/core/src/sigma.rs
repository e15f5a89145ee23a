//! Diffusion coefficient σ(x) and its first two derivatives.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Analytic σ supplied by the caller together with σ' and σ''.
#[derive(Clone)]
pub struct CustomSigma {
    pub name: String,
    pub value: ScalarFn,
    pub first: ScalarFn,
    pub second: ScalarFn,
}

impl fmt::Debug for CustomSigma {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomSigma").field("name", &self.name).finish()
    }
}

#[derive(Debug, Clone)]
pub enum SigmaKind {
    Constant(f64),
    /// σ(x) = √(1 + x²); its flow from 0 is sinh.
    SqrtOnePlusSquare,
    /// σ ≡ 1, the unit-drift flow φ(z) = x0 + z.
    Identity,
    Custom(CustomSigma),
}

const SCAN_POINTS: usize = 1025;
const PROBE_POINTS: usize = 64;
const DERIVATIVE_TOLERANCE: f64 = 1e-6;

/// σ on a finite working domain `[lo, hi]`.
///
/// Construction scans the domain to confirm `σ ≥ positivity_floor` and
/// compares the derivative callbacks against central differences at 64
/// probe points. Derivatives of order above two are never needed.
#[derive(Debug, Clone)]
pub struct SigmaModel {
    kind: SigmaKind,
    domain: (f64, f64),
    positivity_floor: f64,
}

impl SigmaModel {
    pub fn new(kind: SigmaKind, domain: (f64, f64), positivity_floor: f64) -> Result<Self> {
        let (lo, hi) = domain;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidParameter(format!(
                "working domain [{lo}, {hi}] must be a finite non-empty interval"
            )));
        }
        if !(positivity_floor > 0.0 && positivity_floor.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "positivity floor must be positive, got {positivity_floor}"
            )));
        }
        if let SigmaKind::Constant(c) = kind {
            if !c.is_finite() {
                return Err(Error::InvalidParameter(format!("constant sigma {c}")));
            }
        }
        let model = SigmaModel {
            kind,
            domain,
            positivity_floor,
        };
        model.check_positivity()?;
        model.check_derivatives()?;
        Ok(model)
    }

    pub fn constant(c: f64, domain: (f64, f64)) -> Result<Self> {
        Self::new(SigmaKind::Constant(c), domain, c.abs().max(f64::MIN_POSITIVE))
    }

    pub fn sqrt_one_plus_square(domain: (f64, f64)) -> Result<Self> {
        Self::new(SigmaKind::SqrtOnePlusSquare, domain, 1.0)
    }

    pub fn identity(domain: (f64, f64)) -> Result<Self> {
        Self::new(SigmaKind::Identity, domain, 1.0)
    }

    pub fn kind(&self) -> &SigmaKind {
        &self.kind
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    pub fn positivity_floor(&self) -> f64 {
        self.positivity_floor
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.domain.0 && x <= self.domain.1
    }

    /// Whether both models describe the same function (domains may differ).
    pub fn same_function(&self, other: &SigmaModel) -> bool {
        match (&self.kind, &other.kind) {
            (SigmaKind::Custom(a), SigmaKind::Custom(b)) => {
                Arc::ptr_eq(&a.value, &b.value) || (a.name == b.name && !a.name.is_empty())
            }
            (SigmaKind::SqrtOnePlusSquare, SigmaKind::SqrtOnePlusSquare) => true,
            _ => self.constant_value().is_some() && self.constant_value() == other.constant_value(),
        }
    }

    /// Returns the value of σ when it does not depend on x.
    pub fn constant_value(&self) -> Option<f64> {
        match self.kind {
            SigmaKind::Constant(c) => Some(c),
            SigmaKind::Identity => Some(1.0),
            _ => None,
        }
    }

    /// σ(x), σ'(x) or σ''(x) for `order` 0, 1 or 2.
    pub fn eval(&self, x: f64, order: u8) -> Result<f64> {
        if order > 2 {
            return Err(Error::UnsupportedOrder(order));
        }
        if !self.contains(x) {
            return Err(Error::Domain {
                what: "x",
                value: x,
                domain: format!("[{}, {}]", self.domain.0, self.domain.1),
            });
        }
        Ok(self.raw(x, order))
    }

    pub fn value(&self, x: f64) -> Result<f64> {
        self.eval(x, 0)
    }

    /// (σ, σ', σ'') at x.
    pub fn jet(&self, x: f64) -> Result<(f64, f64, f64)> {
        self.eval(x, 0)?;
        Ok((self.raw(x, 0), self.raw(x, 1), self.raw(x, 2)))
    }

    pub(crate) fn raw(&self, x: f64, order: u8) -> f64 {
        match (&self.kind, order) {
            (SigmaKind::Constant(c), 0) => *c,
            (SigmaKind::Constant(_), _) => 0.0,
            (SigmaKind::Identity, 0) => 1.0,
            (SigmaKind::Identity, _) => 0.0,
            (SigmaKind::SqrtOnePlusSquare, 0) => x.hypot(1.0),
            (SigmaKind::SqrtOnePlusSquare, 1) => x / x.hypot(1.0),
            (SigmaKind::SqrtOnePlusSquare, _) => x.hypot(1.0).powi(-3),
            (SigmaKind::Custom(c), 0) => (c.value)(x),
            (SigmaKind::Custom(c), 1) => (c.first)(x),
            (SigmaKind::Custom(c), _) => (c.second)(x),
        }
    }

    /// Scan points: uniform in x plus uniform in asinh(x), so that wide
    /// domains are still sampled densely near the origin.
    fn scan_points(&self, count: usize) -> Vec<f64> {
        let (lo, hi) = self.domain;
        let (alo, ahi) = (lo.asinh(), hi.asinh());
        let step = 1.0 / (count - 1) as f64;
        let mut pts = Vec::with_capacity(2 * count);
        for i in 0..count {
            let s = i as f64 * step;
            pts.push(lo + (hi - lo) * s);
            pts.push((alo + (ahi - alo) * s).sinh().clamp(lo, hi));
        }
        pts
    }

    fn check_positivity(&self) -> Result<()> {
        for x in self.scan_points(SCAN_POINTS) {
            let s = self.raw(x, 0);
            if !(s >= self.positivity_floor) {
                return Err(Error::InvalidParameter(format!(
                    "sigma({x}) = {s} is below the positivity floor {}",
                    self.positivity_floor
                )));
            }
        }
        Ok(())
    }

    fn check_derivatives(&self) -> Result<()> {
        let (lo, hi) = self.domain;
        for (i, x) in self.scan_points(PROBE_POINTS / 2).into_iter().enumerate() {
            // keep the stencil inside the domain
            let h = 1e-5 * (1.0 + x.abs());
            let x = x.clamp(lo + 2.0 * h, hi - 2.0 * h);
            if !(x - h >= lo && x + h <= hi) {
                continue;
            }
            for order in 1..=2u8 {
                let analytic = self.raw(x, order);
                let fd = (self.raw(x + h, order - 1) - self.raw(x - h, order - 1)) / (2.0 * h);
                if !((analytic - fd).abs() <= DERIVATIVE_TOLERANCE * (1.0 + analytic.abs())) {
                    return Err(Error::InvalidParameter(format!(
                        "sigma derivative of order {order} disagrees with finite differences at \
                         probe {i} (x = {x}): analytic {analytic}, numeric {fd}"
                    )));
                }
            }
        }
        Ok(())
    }
}
