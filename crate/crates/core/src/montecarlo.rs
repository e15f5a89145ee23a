//! Monte Carlo oracle sampling `X_t` from the endpoint `B^H_t` alone.
//!
//! Samples are drawn in fixed batches. Batch `b` uses a ChaCha8 stream
//! `(seed, b)`, batches run in parallel and are merged in batch order, so
//! an estimate depends only on `(channel, t, g, n, seed)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channels::{Channel, ChannelSpec, ChannelVariant, DensityField, InitialLaw};
use crate::error::{Error, Result};
use crate::fbm::Hurst;
use crate::infofunc;
use crate::quad::QuadratureSpec;
use crate::sigma::SigmaModel;

pub const BATCH: u64 = 1 << 14;
pub const MIN_SAMPLES: u64 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_samples: u64,
    pub seed: u64,
}

impl McEstimate {
    /// Whether `value` lies within `k` standard errors plus `floor`.
    pub fn agrees_with(&self, value: f64, k: f64, floor: f64) -> bool {
        (self.mean - value).abs() <= k * self.std_error + floor
    }
}

/// Welford accumulator with Chan's pairwise merge.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningStats {
    n: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &RunningStats) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        self.mean += d * other.n as f64 / n as f64;
        self.m2 += other.m2 + d * d * (self.n as f64 * other.n as f64 / n as f64);
        self.n = n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn std_error(&self) -> f64 {
        (self.variance() / self.n as f64).sqrt()
    }
}

/// Draws `X_t` for a prepared channel.
fn draw(channel: &Channel, sd: f64, rng: &mut ChaCha8Rng) -> Result<f64> {
    let z: f64 = rng.sample(StandardNormal);
    match &channel.spec().variant {
        ChannelVariant::Multiplicative { sigma, x0 } => match sigma.constant_value() {
            Some(c) => Ok(x0 + c * sd * z),
            None => channel.phi().expect("multiplicative channel carries a flow").eval(sd * z),
        },
        ChannelVariant::Additive { initial } => {
            let start = match initial {
                InitialLaw::Gaussian { mean, variance } => {
                    let w: f64 = rng.sample(StandardNormal);
                    mean + variance.sqrt() * w
                }
                InitialLaw::Grid(law) => law.quantile(rng.random::<f64>()),
            };
            Ok(start + sd * z)
        }
    }
}

/// E[g(X_t)] by plain Monte Carlo on a channel prepared for horizon ≥ t.
pub fn mc_expectation_prepared<G>(channel: &Channel, t: f64, g: &G, n: u64, seed: u64) -> Result<McEstimate>
where
    G: Fn(f64) -> Result<f64> + Sync,
{
    if n < MIN_SAMPLES {
        return Err(Error::InvalidParameter(format!("need at least {MIN_SAMPLES} samples, got {n}")));
    }
    if !(t > 0.0 && t <= channel.t_max() * (1.0 + 1e-12)) {
        return Err(Error::Domain {
            what: "t",
            value: t,
            domain: format!("(0, {}]", channel.t_max()),
        });
    }
    let sd = channel.hurst().variance_at(t).sqrt();
    let batches = n.div_ceil(BATCH);
    let parts: Vec<RunningStats> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b);
            let start = b * BATCH;
            let end = (start + BATCH).min(n);
            let mut stats = RunningStats::default();
            for index in start..end {
                let x = draw(channel, sd, &mut rng).map_err(|e| Error::SampleEvaluation {
                    index,
                    reason: e.to_string(),
                })?;
                let v = g(x).map_err(|e| Error::SampleEvaluation {
                    index,
                    reason: e.to_string(),
                })?;
                if !v.is_finite() {
                    return Err(Error::SampleEvaluation {
                        index,
                        reason: format!("g({x}) = {v}"),
                    });
                }
                stats.push(v);
            }
            Ok(stats)
        })
        .collect::<Result<_>>()?;
    let mut total = RunningStats::default();
    for p in &parts {
        total.merge(p);
    }
    Ok(McEstimate {
        mean: total.mean(),
        std_error: total.std_error(),
        n_samples: total.count(),
        seed,
    })
}

pub fn mc_expectation<G>(channel: &ChannelSpec, t: f64, g: &G, n: u64, seed: u64) -> Result<McEstimate>
where
    G: Fn(f64) -> Result<f64> + Sync,
{
    mc_expectation_prepared(&channel.prepare(t)?, t, g, n, seed)
}

/// Plug-in entropy estimate `-mean ln P_t(X)` with the analytic density.
pub fn mc_entropy(channel: &ChannelSpec, t: f64, n: u64, seed: u64) -> Result<McEstimate> {
    let prepared = channel.prepare(t)?;
    let field = prepared.density_at(t)?;
    let g = |x: f64| Ok(-field.ln_density(x));
    mc_expectation_prepared(&prepared, t, &g, n, seed)
}

/// Test function of a canonical case; it may need the density at time t.
pub type CaseFunction = Box<dyn Fn(&DensityField, f64) -> Result<f64> + Send + Sync>;

/// One (channel, g) pair of the cross-method oracle.
pub struct CanonicalCase {
    pub name: &'static str,
    pub channel: ChannelSpec,
    pub t: f64,
    pub g: CaseFunction,
}

impl std::fmt::Debug for CanonicalCase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CanonicalCase")
            .field("name", &self.name)
            .field("t", &self.t)
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseOutcome {
    pub name: String,
    pub quadrature: f64,
    pub estimate: McEstimate,
    pub agrees: bool,
}

/// The twelve canonical expectation pairs.
pub fn canonical_cases() -> Result<Vec<CanonicalCase>> {
    const DOMAIN: (f64, f64) = (-1e9, 1e9);
    let h = |v: f64| Hurst::new(v);
    let sqrt1p = SigmaModel::sqrt_one_plus_square(DOMAIN)?;
    let mult = |sigma: &SigmaModel, x0: f64, hv: f64| -> Result<ChannelSpec> {
        Ok(ChannelSpec::multiplicative(sigma.clone(), x0, h(hv)?))
    };
    let uniform = InitialLaw::Grid(crate::channels::GridLaw::uniform((-1.0, 1.0), 801)?);
    let s = sqrt1p.clone();
    let s2 = sqrt1p.clone();
    Ok(vec![
        CanonicalCase {
            name: "const1-square",
            channel: mult(&SigmaModel::constant(1.0, DOMAIN)?, 0.0, 0.75)?,
            t: 1.0,
            g: Box::new(|_, x| Ok(x * x)),
        },
        CanonicalCase {
            name: "sqrt1p-curvature",
            channel: mult(&sqrt1p, 0.0, 0.5)?,
            t: 1.0,
            g: Box::new(move |_, x| {
                let (v, d1, d2) = s.jet(x)?;
                Ok(v * d2 + d1 * d1)
            }),
        },
        CanonicalCase {
            name: "sqrt1p-square",
            channel: mult(&sqrt1p, 0.0, 0.75)?,
            t: 1.0,
            g: Box::new(|_, x| Ok(x * x)),
        },
        CanonicalCase {
            name: "sqrt1p-fisher-integrand",
            channel: mult(&sqrt1p, 0.0, 0.3)?,
            t: 0.5,
            g: Box::new(move |p, x| Ok(s2.value(x)?.powi(2) * p.score(x)?.powi(2))),
        },
        CanonicalCase {
            name: "sqrt1p-log-density",
            channel: mult(&sqrt1p, 0.0, 0.75)?,
            t: 2.0,
            g: Box::new(|p, x| Ok(-p.ln_density(x))),
        },
        CanonicalCase {
            name: "sqrt1p-shifted-tanh",
            channel: mult(&sqrt1p, 0.5, 0.6)?,
            t: 1.0,
            g: Box::new(|_, x| Ok(x.tanh())),
        },
        CanonicalCase {
            name: "const2-cos",
            channel: mult(&SigmaModel::constant(2.0, DOMAIN)?, 1.0, 0.25)?,
            t: 2.0,
            g: Box::new(|_, x| Ok(x.cos())),
        },
        CanonicalCase {
            name: "additive-gaussian-square",
            channel: ChannelSpec::additive(InitialLaw::gaussian(0.0, 1.0)?, h(0.75)?),
            t: 1.0,
            g: Box::new(|_, x| Ok(x * x)),
        },
        CanonicalCase {
            name: "additive-gaussian-score",
            channel: ChannelSpec::additive(InitialLaw::gaussian(1.0, 0.25)?, h(0.3)?),
            t: 0.5,
            g: Box::new(|p, x| Ok(p.score(x)?.powi(2))),
        },
        CanonicalCase {
            name: "additive-uniform-fourth",
            channel: ChannelSpec::additive(uniform.clone(), h(0.5)?),
            t: 1.0,
            g: Box::new(|_, x| Ok(x.powi(4))),
        },
        CanonicalCase {
            name: "additive-uniform-log-density",
            channel: ChannelSpec::additive(uniform, h(0.7)?),
            t: 1.0,
            g: Box::new(|p, x| Ok(-p.ln_density(x))),
        },
        CanonicalCase {
            name: "identity-abs",
            channel: mult(&SigmaModel::identity(DOMAIN)?, 3.0, 0.5)?,
            t: 1.5,
            g: Box::new(|_, x| Ok((x - 3.0).abs())),
        },
    ])
}

/// Runs one canonical case against adaptive quadrature of the same
/// expectation; agreement means within `k` standard errors plus the
/// quadrature's absolute tolerance.
pub fn run_case(case: &CanonicalCase, n: u64, seed: u64, k: f64, quad: &QuadratureSpec) -> Result<CaseOutcome> {
    let prepared = case.channel.prepare(case.t)?;
    let field = prepared.density_at(case.t)?;
    let g = |x: f64| (case.g)(&field, x);
    let quadrature = infofunc::expectation(&field, g, quad)?;
    let estimate = mc_expectation_prepared(&prepared, case.t, &g, n, seed)?;
    Ok(CaseOutcome {
        name: case.name.to_string(),
        quadrature,
        agrees: estimate.agrees_with(quadrature, k, quad.abs_tol),
        estimate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const DOMAIN: (f64, f64) = (-1e9, 1e9);

    #[test]
    fn welford_merge_matches_single_pass() {
        let data: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 * 0.3 - 7.0).collect();
        let mut whole = RunningStats::default();
        data.iter().for_each(|&x| whole.push(x));
        let mut parts: Vec<RunningStats> = data
            .chunks(77)
            .map(|c| {
                let mut s = RunningStats::default();
                c.iter().for_each(|&x| s.push(x));
                s
            })
            .collect();
        let mut merged = RunningStats::default();
        parts.iter_mut().for_each(|p| merged.merge(p));
        assert_eq!(merged.count(), 1000);
        assert!((merged.mean() - whole.mean()).abs() < 1e-12);
        assert!((merged.variance() - whole.variance()).abs() < 1e-10);
    }

    #[test]
    fn constant_function_has_zero_error() {
        let c = ChannelSpec::multiplicative(SigmaModel::constant(1.0, DOMAIN).unwrap(), 0.0, Hurst::new(0.75).unwrap());
        let e = mc_expectation(&c, 1.0, &|_| Ok(1.0), 1000, 1).unwrap();
        assert_eq!(e.mean, 1.0);
        assert_eq!(e.std_error, 0.0);
        assert_eq!(e.n_samples, 1000);
    }

    #[test]
    fn gaussian_second_moment_and_determinism() {
        let c = ChannelSpec::multiplicative(SigmaModel::constant(1.0, DOMAIN).unwrap(), 0.0, Hurst::new(0.75).unwrap());
        let a = mc_expectation(&c, 1.0, &|x| Ok(x * x), 100_000, 7).unwrap();
        let b = mc_expectation(&c, 1.0, &|x| Ok(x * x), 100_000, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.agrees_with(1.0, 4.0, 0.0), "{a:?}");
    }

    #[test]
    fn failures_carry_the_sample_index() {
        let c = ChannelSpec::additive(InitialLaw::gaussian(0.0, 1.0).unwrap(), Hurst::new(0.5).unwrap());
        let err = mc_expectation(&c, 1.0, &|x| Ok(if x > 0.0 { f64::NAN } else { x }), 1000, 3).unwrap_err();
        assert!(matches!(err, Error::SampleEvaluation { .. }));
        assert!(mc_expectation(&c, 1.0, &|x| Ok(x), 10, 3).is_err());
    }

    #[test]
    fn entropy_plug_in_matches_closed_form() {
        let c = ChannelSpec::additive(InitialLaw::gaussian(0.0, 1.0).unwrap(), Hurst::new(0.5).unwrap());
        let e = mc_entropy(&c, 1.0, 200_000, 11).unwrap();
        let h = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * 2.0).ln();
        assert!(e.agrees_with(h, 4.0, 0.0), "{e:?} vs {h}");
    }
}
