//! Fractional Brownian motion: covariance and exact-in-law samplers.
//!
//! $$
//! \mathbb E[B_s^H B_t^H] = \tfrac12\left(t^{2H} + s^{2H} - |t-s|^{2H}\right)
//! $$

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hurst exponent in the open interval (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
pub struct Hurst(f64);

impl Hurst {
    pub fn new(value: f64) -> Result<Self> {
        if value > 0.0 && value < 1.0 {
            Ok(Hurst(value))
        } else {
            Err(Error::Domain {
                what: "H",
                value,
                domain: "(0, 1)".into(),
            })
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    /// Var(B^H_t) = t^{2H}.
    #[inline]
    pub fn variance_at(self, t: f64) -> f64 {
        t.powf(2.0 * self.0)
    }
}

impl<'de> Deserialize<'de> for Hurst {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        Hurst::new(v).map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for Hurst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub fn covariance(s: f64, t: f64, h: Hurst) -> Result<f64> {
    for v in [s, t] {
        if !(v >= 0.0) {
            return Err(Error::Domain {
                what: "time",
                value: v,
                domain: "[0, inf)".into(),
            });
        }
    }
    let two_h = 2.0 * h.value();
    Ok(0.5 * (t.powf(two_h) + s.powf(two_h) - (t - s).abs().powf(two_h)))
}

/// Autocovariance of unit-step fractional Gaussian noise at lag `k`.
fn fgn_autocovariance(k: usize, h: Hurst) -> f64 {
    let two_h = 2.0 * h.value();
    let k = k as f64;
    0.5 * ((k + 1.0).powf(two_h) - 2.0 * k.powf(two_h) + (k - 1.0).abs().powf(two_h))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMethod {
    Cholesky,
    Circulant,
}

impl FromStr for SamplingMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cholesky" => Ok(SamplingMethod::Cholesky),
            "circulant" => Ok(SamplingMethod::Circulant),
            other => Err(Error::InvalidParameter(format!(
                "unknown sampling method `{other}` (expected cholesky or circulant)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FbmPath {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub hurst: Hurst,
    pub seed: u64,
    /// Method actually used to draw the path.
    pub method: SamplingMethod,
    /// Set when a circulant embedding was not positive semi-definite and
    /// the Cholesky sampler was used instead.
    pub fell_back: bool,
}

enum Engine {
    Cholesky {
        factor: DMatrix<f64>,
    },
    Circulant {
        sqrt_eigen: Vec<f64>,
        fft: Arc<dyn Fft<f64>>,
        step_scale: f64,
    },
}

/// Precomputed sampler for a fixed `(grid, H, method)`; draws are a pure
/// function of the seed.
pub struct FbmSampler {
    times: Vec<f64>,
    /// Index of the first strictly positive time (0 or 1).
    offset: usize,
    hurst: Hurst,
    requested: SamplingMethod,
    engine: Engine,
}

impl FbmSampler {
    pub fn new(grid: &[f64], h: Hurst, method: SamplingMethod) -> Result<Self> {
        validate_grid(grid)?;
        let offset = usize::from(grid[0] == 0.0);
        let positive = &grid[offset..];
        if positive.is_empty() {
            return Err(Error::Grid("grid has no positive time".into()));
        }
        let engine = match method {
            SamplingMethod::Cholesky => cholesky_engine(positive, h)?,
            SamplingMethod::Circulant => {
                let step = uniform_step(grid)?;
                match circulant_engine(positive.len(), step, h) {
                    Some(engine) => engine,
                    None => cholesky_engine(positive, h)?,
                }
            }
        };
        Ok(FbmSampler {
            times: grid.to_vec(),
            offset,
            hurst: h,
            requested: method,
            engine,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn method(&self) -> SamplingMethod {
        match self.engine {
            Engine::Cholesky { .. } => SamplingMethod::Cholesky,
            Engine::Circulant { .. } => SamplingMethod::Circulant,
        }
    }

    pub fn fell_back(&self) -> bool {
        self.requested != self.method()
    }

    pub fn sample(&self, seed: u64) -> FbmPath {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = vec![0.0; self.times.len()];
        self.sample_into(&mut rng, &mut values);
        FbmPath {
            times: self.times.clone(),
            values,
            hurst: self.hurst,
            seed,
            method: self.method(),
            fell_back: self.fell_back(),
        }
    }

    /// Fills `out` (one value per grid time) with a fresh draw from `rng`.
    pub fn sample_into<R: rand::Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        assert_eq!(out.len(), self.times.len());
        let (head, body) = out.split_at_mut(self.offset);
        head.fill(0.0);
        match &self.engine {
            Engine::Cholesky { factor } => {
                let n = body.len();
                let z = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
                let x = factor * z;
                body.copy_from_slice(x.as_slice());
            }
            Engine::Circulant {
                sqrt_eigen,
                fft,
                step_scale,
            } => {
                let mut buf: Vec<Complex<f64>> = sqrt_eigen
                    .iter()
                    .map(|&s| {
                        let re: f64 = StandardNormal.sample(rng);
                        let im: f64 = StandardNormal.sample(rng);
                        Complex::new(s * re, s * im)
                    })
                    .collect();
                fft.process(&mut buf);
                let mut acc = 0.0;
                for (v, c) in body.iter_mut().zip(&buf) {
                    acc += step_scale * c.re;
                    *v = acc;
                }
            }
        }
    }
}

pub fn sample_path(grid: &[f64], h: Hurst, method: SamplingMethod, seed: u64) -> Result<FbmPath> {
    Ok(FbmSampler::new(grid, h, method)?.sample(seed))
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Grid("empty grid".into()));
    }
    if !(grid[0] >= 0.0) || grid.iter().any(|t| !t.is_finite()) {
        return Err(Error::Grid("times must be finite and non-negative".into()));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Grid("times must be strictly increasing".into()));
    }
    Ok(())
}

/// Step of a grid of the form `kΔ`, k = 1..n (or k = 0..n).
fn uniform_step(grid: &[f64]) -> Result<f64> {
    let positive: Vec<f64> = grid.iter().copied().filter(|&t| t > 0.0).collect();
    let step = positive[0];
    for (k, &t) in positive.iter().enumerate() {
        let expected = (k + 1) as f64 * step;
        if (t - expected).abs() > 1e-9 * expected {
            return Err(Error::Grid(format!(
                "circulant sampling needs a uniform grid k*dt; time {t} at index {k} expected {expected}"
            )));
        }
    }
    Ok(step)
}

fn cholesky_engine(times: &[f64], h: Hurst) -> Result<Engine> {
    let n = times.len();
    let cov = DMatrix::from_fn(n, n, |i, j| {
        covariance(times[i], times[j], h).expect("grid validated")
    });
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::Grid("fBm covariance is not positive definite on this grid".into()))?;
    Ok(Engine::Cholesky { factor: chol.unpack() })
}

/// Davies-Harte embedding of the increment covariance in a circulant of
/// size 2n. Returns `None` when the embedding has a negative eigenvalue.
fn circulant_engine(n: usize, step: f64, h: Hurst) -> Option<Engine> {
    let m = 2 * n;
    let mut row: Vec<Complex<f64>> = (0..m)
        .map(|j| {
            let lag = if j <= n { j } else { m - j };
            Complex::new(fgn_autocovariance(lag, h), 0.0)
        })
        .collect();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(m);
    fft.process(&mut row);
    let max = row.iter().map(|c| c.re).fold(0.0, f64::max);
    let mut sqrt_eigen = Vec::with_capacity(m);
    for c in &row {
        if c.re < -1e-10 * max {
            return None;
        }
        sqrt_eigen.push((c.re.max(0.0) / m as f64).sqrt());
    }
    Some(Engine::Circulant {
        sqrt_eigen,
        fft,
        step_scale: step.powf(h.value()),
    })
}

/// Empirical second moments `E[B_{t_i} B_{t_j}]` (i ≤ j, positive times
/// only) with their standard errors, packed row by row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalCovariance {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
    pub paths: u64,
}

impl EmpiricalCovariance {
    /// Index of entry (i, j), i ≤ j, in the packed arrays.
    pub fn index(&self, i: usize, j: usize) -> usize {
        let n = self.times.len();
        i * n - i * (i + 1) / 2 + j
    }

    /// Largest |empirical - exact| in standard errors.
    pub fn max_z_score(&self, h: Hurst) -> Result<f64> {
        let mut worst = 0.0f64;
        for i in 0..self.times.len() {
            for j in i..self.times.len() {
                let k = self.index(i, j);
                let exact = covariance(self.times[i], self.times[j], h)?;
                worst = worst.max((self.mean[k] - exact).abs() / self.std_error[k]);
            }
        }
        Ok(worst)
    }

    /// Largest entrywise difference between two estimates in combined
    /// standard errors.
    pub fn max_z_difference(&self, other: &EmpiricalCovariance) -> f64 {
        self.mean
            .iter()
            .zip(&other.mean)
            .zip(self.std_error.iter().zip(&other.std_error))
            .map(|((a, b), (sa, sb))| (a - b).abs() / (sa * sa + sb * sb).sqrt())
            .fold(0.0, f64::max)
    }
}

const COVARIANCE_BATCH: u64 = 1 << 12;

/// Estimates the covariance of `paths` draws; batch `b` uses ChaCha8
/// stream `(seed, b)` so the result does not depend on thread count.
pub fn empirical_covariance(sampler: &FbmSampler, paths: u64, seed: u64) -> EmpiricalCovariance {
    use rayon::prelude::*;

    use crate::montecarlo::RunningStats;

    let offset = sampler.offset;
    let n = sampler.times.len() - offset;
    let entries = n * (n + 1) / 2;
    let batches = paths.div_ceil(COVARIANCE_BATCH);
    let parts: Vec<Vec<RunningStats>> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b);
            let mut stats = vec![RunningStats::default(); entries];
            let mut path = vec![0.0; sampler.times.len()];
            let count = COVARIANCE_BATCH.min(paths - b * COVARIANCE_BATCH);
            for _ in 0..count {
                sampler.sample_into(&mut rng, &mut path);
                let x = &path[offset..];
                let mut k = 0;
                for i in 0..n {
                    for j in i..n {
                        stats[k].push(x[i] * x[j]);
                        k += 1;
                    }
                }
            }
            stats
        })
        .collect();
    let mut total = vec![RunningStats::default(); entries];
    for part in &parts {
        for (t, p) in total.iter_mut().zip(part) {
            t.merge(p);
        }
    }
    EmpiricalCovariance {
        times: sampler.times[offset..].to_vec(),
        mean: total.iter().map(RunningStats::mean).collect(),
        std_error: total.iter().map(RunningStats::std_error).collect(),
        paths,
    }
}
