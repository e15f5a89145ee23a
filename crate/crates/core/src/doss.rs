//! Doss-Sussmann flow: φ' = σ(φ), φ(0) = x0.
//!
//! The multiplicative channel `dX = σ(X) ∘ dB^H` has the solution
//! `X_t = φ(B^H_t)`, so the law of `X_t` is the push-forward of
//! `Normal(0, t^{2H})` under φ. φ is tabulated once on a uniform lattice
//! (spacing [`TABLE_STEP`], always containing z = 0) and evaluated by cubic
//! Hermite interpolation whose node slopes are σ(φ) exactly.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::fbm::Hurst;
use crate::sigma::SigmaModel;

/// Lattice spacing of the φ table.
pub const TABLE_STEP: f64 = 1.0 / 1024.0;
/// Half-width of the z domain in standard deviations of `B^H_{t_max}`.
pub const Z_DOMAIN_WIDTH: f64 = 8.0;
pub const DEFAULT_ODE_TOLERANCE: f64 = 1e-12;

/// `[-8 t_max^H, 8 t_max^H]`.
pub fn z_domain_for(t_max: f64, h: Hurst) -> (f64, f64) {
    let half = Z_DOMAIN_WIDTH * t_max.powf(h.value());
    (-half, half)
}

#[derive(Debug, Clone)]
pub struct PhiSolution {
    sigma: SigmaModel,
    x0: f64,
    z_domain: (f64, f64),
    /// z of the first table node.
    z_first: f64,
    values: Vec<f64>,
    slopes: Vec<f64>,
    ode_tolerance: f64,
}

/// Dormand-Prince 5(4) tableau.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// One DOPRI5 step of the autonomous scalar ODE y' = σ(y). Returns the
/// 5th-order solution, the embedded error estimate and σ at the new point.
fn dopri_step(sigma: &SigmaModel, y: f64, k1: f64, h: f64) -> Option<(f64, f64, f64)> {
    let f = |y: f64| sigma.value(y).ok();
    let k2 = f(y + h * A21 * k1)?;
    let k3 = f(y + h * (A31 * k1 + A32 * k2))?;
    let k4 = f(y + h * (A41 * k1 + A42 * k2 + A43 * k3))?;
    let k5 = f(y + h * (A51 * k1 + A52 * k2 + A53 * k3 + A54 * k4))?;
    let k6 = f(y + h * (A61 * k1 + A62 * k2 + A63 * k3 + A64 * k4 + A65 * k5))?;
    let y_new = y + h * (B1 * k1 + B3 * k3 + B4 * k4 + B5 * k5 + B6 * k6);
    let k7 = f(y_new)?;
    let err = h * (E1 * k1 + E3 * k3 + E4 * k4 + E5 * k5 + E6 * k6 + E7 * k7);
    Some((y_new, err.abs(), k7))
}

/// Advances the flow from node to node in direction `dir`, sub-stepping
/// adaptively inside each lattice cell so the local error stays below
/// `tol · (1 + |φ|)`.
fn march(
    sigma: &SigmaModel,
    x0: f64,
    nodes: usize,
    dir: f64,
    tol: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut values = Vec::with_capacity(nodes + 1);
    let mut slopes = Vec::with_capacity(nodes + 1);
    let s0 = sigma.value(x0).map_err(|_| Error::FlowEscape { z: 0.0 })?;
    values.push(x0);
    slopes.push(s0);
    let mut y = x0;
    let mut k1 = s0;
    let mut h_try = TABLE_STEP;
    for node in 1..=nodes {
        let z_start = (node - 1) as f64 * TABLE_STEP;
        let mut done = 0.0;
        while done < TABLE_STEP {
            let h = h_try.min(TABLE_STEP - done);
            let escape = Error::FlowEscape {
                z: dir * (z_start + done),
            };
            let (y_new, err, k_new) = dopri_step(sigma, y, k1, dir * h).ok_or(escape.clone())?;
            let scale = tol * (1.0 + y.abs().max(y_new.abs()));
            let ratio = err / scale;
            if ratio <= 1.0 {
                y = y_new;
                k1 = k_new;
                done += h;
                if TABLE_STEP - done < 1e-15 * TABLE_STEP {
                    done = TABLE_STEP;
                }
                let grow = if ratio == 0.0 { 5.0 } else { (0.9 * ratio.powf(-0.2)).clamp(0.2, 5.0) };
                h_try = (h * grow).min(TABLE_STEP);
            } else {
                h_try = h * (0.9 * ratio.powf(-0.2)).clamp(0.1, 0.9);
                if h_try < 1e-14 {
                    return Err(escape);
                }
            }
        }
        values.push(y);
        slopes.push(k1);
    }
    Ok((values, slopes))
}

/// Solves φ' = σ(φ), φ(0) = x0 on a lattice covering `z_domain`.
pub fn solve_phi(sigma: &SigmaModel, x0: f64, z_domain: (f64, f64), tol: f64) -> Result<PhiSolution> {
    let (lo, hi) = z_domain;
    if !(lo <= 0.0 && hi >= 0.0 && lo < hi && lo.is_finite() && hi.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "z domain [{lo}, {hi}] must be finite and contain 0"
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("ode tolerance must be positive, got {tol}")));
    }
    let n_neg = (-lo / TABLE_STEP).ceil() as usize;
    let n_pos = (hi / TABLE_STEP).ceil() as usize;
    let (neg_v, neg_s) = march(sigma, x0, n_neg, -1.0, tol)?;
    let (pos_v, pos_s) = march(sigma, x0, n_pos, 1.0, tol)?;
    let mut values: Vec<f64> = neg_v.into_iter().rev().collect();
    let mut slopes: Vec<f64> = neg_s.into_iter().rev().collect();
    values.extend_from_slice(&pos_v[1..]);
    slopes.extend_from_slice(&pos_s[1..]);

    if let Some(k) = values.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter(format!(
            "flow table is not strictly increasing at node {k}; sigma too small for the lattice"
        )));
    }
    let mut phi = PhiSolution {
        sigma: sigma.clone(),
        x0,
        z_domain,
        z_first: -(n_neg as f64) * TABLE_STEP,
        values,
        slopes,
        ode_tolerance: tol,
    };
    phi.limit_slopes();
    Ok(phi)
}

impl PhiSolution {
    pub fn sigma(&self) -> &SigmaModel {
        &self.sigma
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    /// Requested z domain (the table may extend slightly beyond it).
    pub fn z_domain(&self) -> (f64, f64) {
        self.z_domain
    }

    pub fn ode_tolerance(&self) -> f64 {
        self.ode_tolerance
    }

    /// z interval covered by the table.
    pub fn z_table(&self) -> (f64, f64) {
        (self.z_first, self.z_first + (self.values.len() - 1) as f64 * TABLE_STEP)
    }

    /// φ(z_table) as an x interval.
    pub fn range(&self) -> (f64, f64) {
        (self.values[0], *self.values.last().unwrap())
    }

    pub fn table_len(&self) -> usize {
        self.values.len()
    }

    /// Fritsch-Carlson limiter; a no-op whenever the lattice resolves φ,
    /// which keeps the node slopes equal to σ(φ).
    fn limit_slopes(&mut self) {
        for k in 0..self.values.len() - 1 {
            let secant = (self.values[k + 1] - self.values[k]) / TABLE_STEP;
            let alpha = self.slopes[k] / secant;
            let beta = self.slopes[k + 1] / secant;
            let r = alpha * alpha + beta * beta;
            if r > 9.0 {
                let tau = 3.0 / r.sqrt();
                self.slopes[k] = tau * alpha * secant;
                self.slopes[k + 1] = tau * beta * secant;
            }
        }
    }

    fn locate(&self, z: f64) -> Result<(usize, f64)> {
        let (lo, hi) = self.z_table();
        if !(z >= lo && z <= hi) {
            return Err(Error::Domain {
                what: "z",
                value: z,
                domain: format!("[{lo}, {hi}]"),
            });
        }
        let u = (z - self.z_first) / TABLE_STEP;
        let k = (u.floor() as usize).min(self.values.len() - 2);
        Ok((k, u - k as f64))
    }

    fn hermite(&self, k: usize, s: f64) -> f64 {
        let (y0, y1) = (self.values[k], self.values[k + 1]);
        let (m0, m1) = (self.slopes[k] * TABLE_STEP, self.slopes[k + 1] * TABLE_STEP);
        let s2 = s * s;
        let s3 = s2 * s;
        (2.0 * s3 - 3.0 * s2 + 1.0) * y0 + (s3 - 2.0 * s2 + s) * m0 + (-2.0 * s3 + 3.0 * s2) * y1 + (s3 - s2) * m1
    }

    /// d/ds of the Hermite cell polynomial.
    fn hermite_ds(&self, k: usize, s: f64) -> f64 {
        let (y0, y1) = (self.values[k], self.values[k + 1]);
        let (m0, m1) = (self.slopes[k] * TABLE_STEP, self.slopes[k + 1] * TABLE_STEP);
        let s2 = s * s;
        (6.0 * s2 - 6.0 * s) * (y0 - y1) + (3.0 * s2 - 4.0 * s + 1.0) * m0 + (3.0 * s2 - 2.0 * s) * m1
    }

    /// φ(z).
    pub fn eval(&self, z: f64) -> Result<f64> {
        if z == 0.0 {
            return Ok(self.x0);
        }
        let (k, s) = self.locate(z)?;
        Ok(self.hermite(k, s))
    }

    /// φ'(z) = σ(φ(z)), evaluated analytically.
    pub fn derivative(&self, z: f64) -> Result<f64> {
        self.sigma.value(self.eval(z)?)
    }

    /// φ^{-1}(x): bracketing on the table, then safeguarded Newton on the
    /// cell polynomial.
    pub fn invert(&self, x: f64) -> Result<f64> {
        let (lo, hi) = self.range();
        if !(x >= lo && x <= hi) {
            return Err(Error::Range { x, lo, hi });
        }
        if x == self.x0 {
            return Ok(0.0);
        }
        let k = self.values.partition_point(|&v| v <= x).clamp(1, self.values.len() - 1) - 1;
        let (mut a, mut b) = (0.0, 1.0);
        let (y0, y1) = (self.values[k], self.values[k + 1]);
        let mut s = ((x - y0) / (y1 - y0)).clamp(0.0, 1.0);
        let tol = 1e-12 * (1.0 + x.abs());
        for _ in 0..100 {
            let r = self.hermite(k, s) - x;
            if r.abs() <= 0.25 * tol {
                break;
            }
            if r > 0.0 {
                b = s;
            } else {
                a = s;
            }
            let d = self.hermite_ds(k, s);
            let mut next = s - r / d;
            if !(next > a && next < b) || !d.is_finite() || d <= 0.0 {
                next = 0.5 * (a + b);
            }
            if next == s {
                break;
            }
            s = next;
        }
        Ok(self.z_first + (k as f64 + s) * TABLE_STEP)
    }

    /// Density of `φ(B^H_t)` at x: `ϕ_{0,t^{2H}}(φ^{-1}(x)) / σ(x)`.
    pub fn pushforward_density(&self, t: f64, h: Hurst, x: f64) -> Result<f64> {
        if !(t > 0.0) {
            return Err(Error::DegenerateTime);
        }
        let z = self.invert(x)?;
        let v = h.variance_at(t);
        let gauss = (-0.5 * z * z / v).exp() / (2.0 * PI * v).sqrt();
        Ok(gauss / self.sigma.value(x)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::{integrate, QuadratureSpec};
    use proptest::prelude::*;

    const TOL: f64 = 1e-12;
    const DOMAIN: (f64, f64) = (-1e9, 1e9);

    fn sinh_flow() -> PhiSolution {
        let s = SigmaModel::sqrt_one_plus_square(DOMAIN).unwrap();
        solve_phi(&s, 0.0, (-8.0, 8.0), TOL).unwrap()
    }

    #[test]
    fn identity_flow_is_a_shift() {
        let s = SigmaModel::identity(DOMAIN).unwrap();
        let phi = solve_phi(&s, 3.0, (-5.0, 5.0), TOL).unwrap();
        assert_eq!(phi.eval(0.0).unwrap(), 3.0);
        for i in 0..=1000 {
            let z = -5.0 + 0.01 * i as f64;
            assert!((phi.eval(z).unwrap() - (3.0 + z)).abs() <= TOL, "{z}");
        }
        assert_eq!(phi.invert(3.0).unwrap(), 0.0);
    }

    #[test]
    fn constant_flow_is_linear() {
        let s = SigmaModel::constant(2.5, DOMAIN).unwrap();
        let phi = solve_phi(&s, -1.0, (-3.0, 3.0), TOL).unwrap();
        for i in 0..=600 {
            let z = -3.0 + 0.01 * i as f64;
            assert!((phi.eval(z).unwrap() - (-1.0 + 2.5 * z)).abs() <= 10.0 * TOL);
        }
        assert_eq!(phi.invert(-1.0).unwrap(), 0.0);
    }

    #[test]
    fn sqrt_one_plus_square_flow_is_sinh() {
        let phi = sinh_flow();
        let mut worst: f64 = 0.0;
        for i in 0..=8000 {
            let z = -4.0 + 0.001 * i as f64;
            if z == 0.0 {
                continue;
            }
            let rel = (phi.eval(z).unwrap() - z.sinh()).abs() / z.sinh().abs();
            worst = worst.max(rel);
        }
        assert!(worst <= 10.0 * TOL, "max relative error {worst:e}");
        let z = phi.invert(1f64.sinh()).unwrap();
        assert!((z - 1.0).abs() < 1e-10);
    }

    #[test]
    fn ode_residual_on_table() {
        // sixth-order central differences of the tabulated values
        let phi = sinh_flow();
        let c = [1.0 / 60.0, -3.0 / 20.0, 3.0 / 4.0];
        for k in (3..phi.values.len() - 3).step_by(97) {
            let v = &phi.values;
            let d = (c[2] * (v[k + 1] - v[k - 1]) + c[1] * (v[k + 2] - v[k - 2]) + c[0] * (v[k + 3] - v[k - 3]))
                / TABLE_STEP;
            let target = phi.sigma.value(v[k]).unwrap();
            assert!((d - target).abs() <= 10.0 * TOL * (1.0 + target.abs()), "node {k}");
        }
    }

    #[test]
    fn flow_escape_reports_z() {
        let s = SigmaModel::sqrt_one_plus_square((-100.0, 100.0)).unwrap();
        match solve_phi(&s, 0.0, (-8.0, 8.0), TOL) {
            Err(Error::FlowEscape { z }) => assert!(z.abs() > 5.0 && z.abs() < 5.4, "{z}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invert_rejects_out_of_range() {
        let phi = sinh_flow();
        assert!(matches!(phi.invert(1e6), Err(Error::Range { .. })));
    }

    #[test]
    fn density_examples() {
        let h = Hurst::new(0.3).unwrap();
        let s = SigmaModel::constant(1.0, DOMAIN).unwrap();
        let phi = solve_phi(&s, 0.0, (-8.0, 8.0), TOL).unwrap();
        let p = phi.pushforward_density(1.0, h, 0.0).unwrap();
        assert!((p - 1.0 / (2.0 * PI).sqrt()).abs() < 1e-15);
        assert_eq!(phi.pushforward_density(0.0, h, 0.0), Err(Error::DegenerateTime));

        // constant sigma: Gaussian(x0, c² t^{2H}) pointwise
        let c = 1.7;
        let s = SigmaModel::constant(c, DOMAIN).unwrap();
        let phi = solve_phi(&s, 0.4, (-8.0, 8.0), TOL).unwrap();
        let h = Hurst::new(0.75).unwrap();
        let v = c * c * h.variance_at(0.8);
        for i in 0..=100 {
            let x = 0.4 - 4.0 + 0.08 * i as f64;
            let exact = (-(x - 0.4f64).powi(2) / (2.0 * v)).exp() / (2.0 * PI * v).sqrt();
            let p = phi.pushforward_density(0.8, h, x).unwrap();
            assert!((p - exact).abs() <= 1e-10 * exact, "{x}");
        }
    }

    #[test]
    fn density_normalizes() {
        let phi = sinh_flow();
        let h = Hurst::new(0.75).unwrap();
        let (lo, hi) = phi.range();
        // integrate in z to stay away from the heavy x tails: x = φ(z), dx = σ dz
        let spec = QuadratureSpec::default();
        let mass = integrate(
            |z| {
                let x = phi.eval(z)?;
                Ok(phi.pushforward_density(1.0, h, x)? * phi.derivative(z)?)
            },
            &[-8.0, -2.0, 0.0, 2.0, 8.0],
            &spec,
        )
        .unwrap();
        assert!((mass.value - 1.0).abs() < 1e-8, "{}", mass.value);
        assert!(lo < -1000.0 && hi > 1000.0);
    }

    #[test]
    fn density_matches_monte_carlo_histogram() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let phi = sinh_flow();
        let h = Hurst::new(0.75).unwrap();
        let n = 1_000_000;
        let edges: Vec<f64> = (0..=20).map(|i| -3.0 + 0.3 * i as f64).collect();
        let mut counts = vec![0u64; edges.len() - 1];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..n {
            let z: f64 = StandardNormal.sample(&mut rng);
            let x = z.sinh();
            if x >= edges[0] && x < edges[edges.len() - 1] {
                counts[((x - edges[0]) / 0.3) as usize] += 1;
            }
        }
        let spec = QuadratureSpec::tight();
        for (b, &count) in counts.iter().enumerate() {
            let p = integrate(
                |x| phi.pushforward_density(1.0, h, x),
                &[edges[b], edges[b + 1]],
                &spec,
            )
            .unwrap()
            .value;
            let expected = p * n as f64;
            let se = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((count as f64 - expected).abs() <= 4.0 * se, "bin {b}: {count} vs {expected}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]
        #[test]
        fn round_trip_and_monotone(z1 in -7.9f64..7.9, dz in 1e-6f64..0.5) {
            let phi = &*SINH;
            let x = phi.eval(z1).unwrap();
            prop_assert!((phi.invert(x).unwrap() - z1).abs() <= 1e-10);
            let z2 = (z1 + dz).min(7.99);
            prop_assert!(phi.eval(z2).unwrap() > x);
        }
    }

    static SINH: std::sync::LazyLock<PhiSolution> = std::sync::LazyLock::new(sinh_flow);
}
