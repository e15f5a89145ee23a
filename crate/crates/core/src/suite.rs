//! Config-driven batch verification.
//!
//! A [`SuiteConfig`] names the identities to check, a channel and the
//! `(t, H)` grid. [`run_suite`] runs every combination on a thread pool,
//! writes `<output>.csv`, `<output>.json` and, for the entropy-power
//! suite, `<output>_entropy_power.csv`.
//!
//! Exit codes: 0 all rows passed, 1 some row failed, 2 bad config,
//! 3 a numerical error (reported with its suite, t and H).

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channels::{ChannelSpec, ChannelVariant, GridLaw, InitialLaw};
use crate::error::{Error, Result};
use crate::fbm::{self, FbmSampler, Hurst, SamplingMethod};
use crate::identities::{
    self, Curvature, FokkerPlanckOptions, IdentityReport, TestFunction,
};
use crate::montecarlo::{self, McEstimate};
use crate::quad::QuadratureSpec;
use crate::sigma::SigmaModel;

pub const THREADS_ENV: &str = "FBM_INFOFLOW_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    DebruijnMult,
    DebruijnAdditive,
    KlFlow,
    FokkerPlanck,
    Stein,
    EntropyPower,
    FbmStats,
    Equivalence,
}

impl Suite {
    pub const ALL: [Suite; 8] = [
        Suite::DebruijnMult,
        Suite::DebruijnAdditive,
        Suite::KlFlow,
        Suite::FokkerPlanck,
        Suite::Stein,
        Suite::EntropyPower,
        Suite::FbmStats,
        Suite::Equivalence,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::DebruijnMult => "debruijn-mult",
            Suite::DebruijnAdditive => "debruijn-additive",
            Suite::KlFlow => "kl-flow",
            Suite::FokkerPlanck => "fokker-planck",
            Suite::Stein => "stein",
            Suite::EntropyPower => "entropy-power",
            Suite::FbmStats => "fbm-stats",
            Suite::Equivalence => "equivalence",
        }
    }

    /// Absolute tolerance, except entropy-power (relative to |2Ng|) and
    /// fbm-stats (standard errors).
    pub fn default_tolerance(self) -> f64 {
        match self {
            Suite::DebruijnMult | Suite::DebruijnAdditive | Suite::EntropyPower => 1e-4,
            Suite::KlFlow => 1e-5,
            Suite::FokkerPlanck => 1e-3,
            Suite::Stein => 1e-10,
            Suite::FbmStats => 5.0,
            Suite::Equivalence => 1e-6,
        }
    }

    /// Suites whose identities carry the t^{2H-1} prefactor.
    fn singular_near_zero(self) -> bool {
        !matches!(self, Suite::Stein | Suite::FbmStats)
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL.into_iter().find(|x| x.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Suite::ALL.iter().map(|x| x.name()).collect();
            Error::Config(format!("unknown suite '{s}', expected one of {}", names.join(", ")))
        })
    }
}

fn default_domain() -> [f64; 2] {
    [-1e9, 1e9]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SigmaConfig {
    Constant {
        c: f64,
        #[serde(default = "default_domain")]
        domain: [f64; 2],
    },
    Sqrt1p {
        #[serde(default = "default_domain")]
        domain: [f64; 2],
    },
    Identity {
        #[serde(default = "default_domain")]
        domain: [f64; 2],
    },
}

impl SigmaConfig {
    pub fn build(&self) -> Result<SigmaModel> {
        match self {
            SigmaConfig::Constant { c, domain } => SigmaModel::constant(*c, (domain[0], domain[1])),
            SigmaConfig::Sqrt1p { domain } => SigmaModel::sqrt_one_plus_square((domain[0], domain[1])),
            SigmaConfig::Identity { domain } => SigmaModel::identity((domain[0], domain[1])),
        }
    }
}

fn default_grid_points() -> usize {
    801
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum InitialConfig {
    Gaussian {
        mean: f64,
        variance: f64,
    },
    Uniform {
        domain: [f64; 2],
        #[serde(default = "default_grid_points")]
        points: usize,
    },
    Grid {
        domain: [f64; 2],
        values: Vec<f64>,
    },
}

impl InitialConfig {
    pub fn build(&self) -> Result<InitialLaw> {
        match self {
            InitialConfig::Gaussian { mean, variance } => InitialLaw::gaussian(*mean, *variance),
            InitialConfig::Uniform { domain, points } => {
                Ok(InitialLaw::Grid(GridLaw::uniform((domain[0], domain[1]), *points)?))
            }
            InitialConfig::Grid { domain, values } => {
                Ok(InitialLaw::Grid(GridLaw::new((domain[0], domain[1]), values.clone())?))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "lowercase", deny_unknown_fields)]
pub enum ChannelConfig {
    Multiplicative {
        sigma: SigmaConfig,
        #[serde(default)]
        x0: f64,
        #[serde(default)]
        hurst: Option<f64>,
    },
    Additive {
        initial: InitialConfig,
        #[serde(default)]
        hurst: Option<f64>,
    },
}

impl ChannelConfig {
    /// Builds the channel; the H given here is a placeholder that the
    /// suite grid overrides.
    pub fn build(&self) -> Result<ChannelSpec> {
        match self {
            ChannelConfig::Multiplicative { sigma, x0, hurst } => Ok(ChannelSpec::multiplicative(
                sigma.build()?,
                *x0,
                Hurst::new(hurst.unwrap_or(0.5))?,
            )),
            ChannelConfig::Additive { initial, hurst } => Ok(ChannelSpec::additive(
                initial.build()?,
                Hurst::new(hurst.unwrap_or(0.5))?,
            )),
        }
    }
}

fn default_oracle_method() -> String {
    "mc".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    #[serde(default = "default_oracle_method")]
    pub method: String,
    pub samples: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FokkerPlanckConfig {
    pub x_range: [f64; 2],
    pub points: usize,
    pub spatial_step: f64,
    pub resolution_bound: f64,
}

impl Default for FokkerPlanckConfig {
    fn default() -> Self {
        let o = FokkerPlanckOptions::default();
        FokkerPlanckConfig {
            x_range: [-4.0, 4.0],
            points: 33,
            spatial_step: o.spatial_step,
            resolution_bound: o.resolution_bound,
        }
    }
}

impl FokkerPlanckConfig {
    fn grid(&self) -> Vec<f64> {
        let [a, b] = self.x_range;
        if self.points == 1 {
            return vec![0.5 * (a + b)];
        }
        (0..self.points)
            .map(|i| a + (b - a) * i as f64 / (self.points - 1) as f64)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FbmStatsConfig {
    pub points: usize,
    pub paths: u64,
    pub seed: u64,
}

impl Default for FbmStatsConfig {
    fn default() -> Self {
        FbmStatsConfig {
            points: 64,
            paths: 10_000,
            seed: 1,
        }
    }
}

fn default_t_min() -> f64 {
    0.05
}

fn default_stein_function() -> String {
    "y^3".into()
}

fn default_entropy_power_floor() -> f64 {
    1e-6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    pub suites: Vec<Suite>,
    pub channel: ChannelConfig,
    /// Second channel for suites whose model differs from `channel`.
    #[serde(default)]
    pub companion: Option<ChannelConfig>,
    pub t_grid: Vec<f64>,
    pub hurst_grid: Vec<f64>,
    #[serde(default)]
    pub tolerances: BTreeMap<Suite, f64>,
    #[serde(default)]
    pub fd_steps: BTreeMap<Suite, f64>,
    pub output: PathBuf,
    #[serde(default)]
    pub oracle: Option<OracleConfig>,
    /// Below this t, points with H < 1/2 are skipped.
    #[serde(default = "default_t_min")]
    pub t_min: f64,
    /// Starting point of the second KL channel; defaults to x0 + 1.
    #[serde(default)]
    pub kl_y0: Option<f64>,
    #[serde(default = "default_stein_function")]
    pub stein_function: String,
    #[serde(default)]
    pub fokker_planck: FokkerPlanckConfig,
    #[serde(default)]
    pub fbm_stats: FbmStatsConfig,
    #[serde(default = "QuadratureSpec::tight")]
    pub quadrature: QuadratureSpec,
    #[serde(default = "default_entropy_power_floor")]
    pub entropy_power_floor: f64,
}

impl SuiteConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: SuiteConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn tolerance(&self, suite: Suite) -> f64 {
        self.tolerances.get(&suite).copied().unwrap_or_else(|| suite.default_tolerance())
    }

    pub fn fd_step(&self, suite: Suite, t: f64) -> f64 {
        self.fd_steps
            .get(&suite)
            .copied()
            .unwrap_or_else(|| identities::default_fd_step(t))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.suites.is_empty() {
            return bad("suites must not be empty".into());
        }
        if self.t_grid.is_empty() || self.hurst_grid.is_empty() {
            return bad("t_grid and hurst_grid must not be empty".into());
        }
        if let Some(t) = self.t_grid.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
            return bad(format!("t_grid entry {t} is not a positive time"));
        }
        for &h in &self.hurst_grid {
            Hurst::new(h).map_err(|e| Error::Config(format!("hurst_grid: {e}")))?;
        }
        for (suite, tol) in &self.tolerances {
            if !(*tol >= 0.0) {
                return bad(format!("tolerance for {suite} must be non-negative, got {tol}"));
            }
        }
        for (suite, step) in &self.fd_steps {
            if !(*step > 0.0) {
                return bad(format!("fd step for {suite} must be positive, got {step}"));
            }
        }
        if !(self.t_min >= 0.0) {
            return bad(format!("t_min must be non-negative, got {}", self.t_min));
        }
        if let Some(o) = &self.oracle {
            if o.method != "mc" {
                return bad(format!("unknown oracle '{}', expected mc", o.method));
            }
            if o.samples < montecarlo::MIN_SAMPLES {
                return bad(format!("oracle needs at least {} samples", montecarlo::MIN_SAMPLES));
            }
        }
        if self.fokker_planck.points == 0 || !(self.fokker_planck.spatial_step > 0.0) {
            return bad("fokker_planck needs points > 0 and spatial_step > 0".into());
        }
        if self.fbm_stats.points == 0 || self.fbm_stats.paths < 2 {
            return bad("fbm_stats needs points > 0 and paths >= 2".into());
        }
        self.quadrature.validate().map_err(|e| Error::Config(e.to_string()))?;
        TestFunction::parse(&self.stein_function)?;
        let channels = self.channels()?;
        for &suite in &self.suites {
            channels.for_suite(suite)?;
        }
        Ok(())
    }

    fn channels(&self) -> Result<Channels> {
        let wrap = |e: Error| Error::Config(format!("channel: {e}"));
        let primary = self.channel.build().map_err(wrap)?;
        let companion = match &self.companion {
            Some(c) => Some(c.build().map_err(wrap)?),
            None => None,
        };
        let pick = |mult: bool| {
            std::iter::once(&primary)
                .chain(companion.as_ref())
                .find(|c| c.is_multiplicative() == mult)
                .cloned()
        };
        let multiplicative = pick(true);
        let additive = pick(false).unwrap_or_else(|| {
            ChannelSpec::additive(
                InitialLaw::Gaussian {
                    mean: 0.0,
                    variance: 1.0,
                },
                primary.hurst,
            )
        });
        Ok(Channels {
            multiplicative,
            additive,
        })
    }
}

/// Channels resolved for each family of suites.
struct Channels {
    multiplicative: Option<ChannelSpec>,
    /// Additive suites fall back to a standard Gaussian initial law.
    additive: ChannelSpec,
}

impl Channels {
    fn for_suite(&self, suite: Suite) -> Result<Option<&ChannelSpec>> {
        match suite {
            Suite::DebruijnMult | Suite::KlFlow | Suite::FokkerPlanck => match &self.multiplicative {
                Some(c) => Ok(Some(c)),
                None => Err(Error::Config(format!("suite {suite} needs a multiplicative channel"))),
            },
            Suite::Stein | Suite::Equivalence => match &self.additive.variant {
                ChannelVariant::Additive {
                    initial: InitialLaw::Gaussian { .. },
                } => Ok(Some(&self.additive)),
                _ => Err(Error::Config(format!("suite {suite} needs a Gaussian initial law"))),
            },
            Suite::DebruijnAdditive | Suite::EntropyPower => Ok(Some(&self.additive)),
            Suite::FbmStats => Ok(None),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    #[serde(flatten)]
    pub report: IdentityReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mc_rhs: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mc_std_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyPowerPoint {
    pub t: f64,
    pub hurst: f64,
    pub entropy_power: f64,
    pub fisher: f64,
    pub g: f64,
    pub classification: Curvature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub suite: Suite,
    pub t: f64,
    pub hurst: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericalFailure {
    pub suite: Suite,
    pub t: f64,
    pub hurst: f64,
    pub error: String,
}

impl fmt::Display for NumericalFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at t={} H={}: {}", self.suite, self.t, self.hurst, self.error)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteOutcome {
    pub exit_code: i32,
    pub rows: Vec<ReportRow>,
    pub entropy_power: Vec<EntropyPowerPoint>,
    pub excluded: Vec<Exclusion>,
    pub errors: Vec<NumericalFailure>,
    /// Rows whose KL values increased over [t-δ, t+δ].
    pub monotonicity_failures: usize,
    pub files: Vec<PathBuf>,
}

impl SuiteOutcome {
    pub fn failed_rows(&self) -> usize {
        self.rows.iter().filter(|r| !r.report.passed).count()
    }
}

#[derive(Serialize)]
struct JsonReport<'a> {
    tool: &'static str,
    version: &'static str,
    generated_unix: u64,
    exit_code: i32,
    config: &'a SuiteConfig,
    rows: &'a [ReportRow],
    entropy_power: &'a [EntropyPowerPoint],
    excluded: &'a [Exclusion],
    errors: &'a [NumericalFailure],
    monotonicity_failures: usize,
}

#[derive(Default)]
struct TaskOutput {
    rows: Vec<ReportRow>,
    entropy_power: Option<EntropyPowerPoint>,
    non_monotone: bool,
}

fn plain(report: IdentityReport) -> ReportRow {
    ReportRow {
        report,
        mc_rhs: None,
        mc_std_error: None,
    }
}

fn with_mc(report: IdentityReport, scale: f64, estimate: Option<McEstimate>) -> ReportRow {
    ReportRow {
        report,
        mc_rhs: estimate.map(|e| scale * e.mean),
        mc_std_error: estimate.map(|e| scale.abs() * e.std_error),
    }
}

fn prefactor(h: f64, t: f64) -> f64 {
    h * t.powf(2.0 * h - 1.0)
}

fn run_task(config: &SuiteConfig, channels: &Channels, suite: Suite, t: f64, h: f64) -> Result<TaskOutput> {
    let hurst = Hurst::new(h)?;
    let tol = config.tolerance(suite);
    let step = config.fd_step(suite, t);
    let quad = &config.quadrature;
    let oracle = config.oracle.as_ref();
    let channel = channels.for_suite(suite)?.map(|c| c.with_hurst(hurst));
    let mc = |spec: &ChannelSpec, g: &(dyn Fn(&crate::channels::DensityField, f64) -> Result<f64> + Sync)| {
        oracle
            .map(|o| {
                let prepared = spec.prepare(t)?;
                let field = prepared.density_at(t)?;
                montecarlo::mc_expectation_prepared(&prepared, t, &|x| g(&field, x), o.samples, o.seed)
            })
            .transpose()
    };
    let mut out = TaskOutput::default();
    match suite {
        Suite::DebruijnMult => {
            let ch = channel.expect("resolved");
            let report = identities::debruijn_check_mult_with(&ch, t, step, tol, quad)?;
            let sigma = ch.sigma().expect("multiplicative").clone();
            let est = mc(&ch, &|p, x| {
                let (s, d1, d2) = sigma.jet(x)?;
                Ok(s * s * p.score(x)?.powi(2) - (s * d2 + d1 * d1))
            })?;
            out.rows.push(with_mc(report, prefactor(h, t), est));
        }
        Suite::DebruijnAdditive => {
            let ch = channel.expect("resolved");
            let report = identities::debruijn_check_additive_with(&ch, t, step, tol, quad)?;
            let est = mc(&ch, &|p, x| Ok(p.score(x)?.powi(2)))?;
            out.rows.push(with_mc(report, prefactor(h, t), est));
        }
        Suite::KlFlow => {
            let x = channel.expect("resolved");
            let (sigma, x0) = match &x.variant {
                ChannelVariant::Multiplicative { sigma, x0 } => (sigma.clone(), *x0),
                ChannelVariant::Additive { .. } => unreachable!("resolved as multiplicative"),
            };
            let y = ChannelSpec::multiplicative(sigma.clone(), config.kl_y0.unwrap_or(x0 + 1.0), hurst);
            let outcome = identities::kl_flow_check_with(&x, &y, t, step, tol, quad)?;
            out.non_monotone = !outcome.non_increasing;
            let est = match oracle {
                Some(_) => {
                    let q = y.prepare(t)?.density_at(t)?;
                    mc(&x, &|p, v| Ok(sigma.value(v)?.powi(2) * (p.score(v)? - q.score(v)?).powi(2)))?
                }
                None => None,
            };
            out.rows.push(with_mc(outcome.report, -prefactor(h, t), est));
        }
        Suite::FokkerPlanck => {
            let ch = channel.expect("resolved");
            let fp = &config.fokker_planck;
            let opts = FokkerPlanckOptions {
                spatial_step: fp.spatial_step,
                resolution_bound: fp.resolution_bound,
            };
            let report = identities::fokker_planck_check(&ch, t, &fp.grid(), step, tol, &opts)?;
            out.rows.push(plain(report));
        }
        Suite::Stein | Suite::Equivalence => {
            let ch = channel.expect("resolved");
            let (mean, v0) = match &ch.variant {
                ChannelVariant::Additive {
                    initial: InitialLaw::Gaussian { mean, variance },
                } => (*mean, *variance),
                _ => unreachable!("resolved as Gaussian additive"),
            };
            let variance = v0 + hurst.variance_at(t);
            let r = TestFunction::parse(&config.stein_function)?;
            let mut stein = identities::stein_check(mean, variance, &r, tol, quad)?;
            stein.t = t;
            stein.hurst = h;
            let rr = r.clone();
            let est = mc(&ch, &move |_, y| Ok(rr.derivative(y)))?;
            if suite == Suite::Stein {
                out.rows.push(with_mc(stein, variance, est));
            } else {
                stein.identity = "equivalence:stein".into();
                out.rows.push(with_mc(stein, variance, est));
                let mut flow = identities::debruijn_check_additive_with(&ch, t, step, tol, quad)?;
                flow.identity = "equivalence:debruijn-additive".into();
                out.rows.push(plain(flow));
            }
        }
        Suite::EntropyPower => {
            let ch = channel.expect("resolved");
            let p = identities::entropy_power_profile_with(&ch, &[t], step, quad)?;
            let predicted = p.predicted[0];
            let tolerance = tol * predicted.abs() + config.entropy_power_floor;
            let notes = format!(
                "fd_step={step:e} richardson; lhs=d2N/dt2 rhs=2Ng; g={:e}; class={}; tolerance={tol:e}*|rhs|+{:e}",
                p.g_values[0], p.classification[0], config.entropy_power_floor
            );
            out.rows.push(plain(IdentityReport::new(
                "entropy-power",
                t,
                h,
                p.second_difference[0],
                predicted,
                tolerance,
                notes,
            )));
            out.entropy_power = Some(EntropyPowerPoint {
                t,
                hurst: h,
                entropy_power: p.entropy_power[0],
                fisher: p.fisher[0],
                g: p.g_values[0],
                classification: p.classification[0],
            });
        }
        Suite::FbmStats => {
            let s = &config.fbm_stats;
            let grid: Vec<f64> = (1..=s.points).map(|k| t * k as f64 / s.points as f64).collect();
            let chol = FbmSampler::new(&grid, hurst, SamplingMethod::Cholesky)?;
            let circ = FbmSampler::new(&grid, hurst, SamplingMethod::Circulant)?;
            let a = fbm::empirical_covariance(&chol, s.paths, s.seed);
            let b = fbm::empirical_covariance(&circ, s.paths, s.seed.wrapping_add(1));
            let (za, zb, zab) = (a.max_z_score(hurst)?, b.max_z_score(hurst)?, a.max_z_difference(&b));
            let worst = za.max(zb).max(zab);
            let notes = format!(
                "paths={} points={}; max z cholesky={za:.4} circulant={zb:.4} cross={zab:.4}; circulant_fell_back={}",
                s.paths,
                s.points,
                circ.fell_back()
            );
            out.rows.push(plain(IdentityReport::new("fbm-stats", t, h, worst, 0.0, tol, notes)));
        }
    }
    Ok(out)
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got '{v}'")))?;
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| Error::Config(e.to_string()))
}

/// Runs every `(suite, t, H)` combination and writes the reports.
///
/// `Err` is returned only for configuration and I/O problems (exit 2);
/// numerical failures are collected in the outcome.
pub fn run_suite(config: &SuiteConfig) -> Result<SuiteOutcome> {
    config.validate()?;
    let channels = config.channels()?;
    let mut tasks = Vec::new();
    let mut excluded = Vec::new();
    for &suite in &config.suites {
        for &t in &config.t_grid {
            for &h in &config.hurst_grid {
                if suite.singular_near_zero() && h < 0.5 && t < config.t_min {
                    excluded.push(Exclusion {
                        suite,
                        t,
                        hurst: h,
                        reason: format!("t < t_min = {} with H < 1/2", config.t_min),
                    });
                } else {
                    tasks.push((suite, t, h));
                }
            }
        }
    }
    let pool = thread_pool()?;
    let results: Vec<Result<TaskOutput>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(suite, t, h)| run_task(config, &channels, suite, t, h))
            .collect()
    });

    let mut outcome = SuiteOutcome {
        exit_code: 0,
        rows: Vec::new(),
        entropy_power: Vec::new(),
        excluded,
        errors: Vec::new(),
        monotonicity_failures: 0,
        files: Vec::new(),
    };
    for (&(suite, t, hurst), result) in tasks.iter().zip(results) {
        match result {
            Ok(out) => {
                outcome.rows.extend(out.rows);
                outcome.entropy_power.extend(out.entropy_power);
                outcome.monotonicity_failures += usize::from(out.non_monotone);
            }
            Err(e) => outcome.errors.push(NumericalFailure {
                suite,
                t,
                hurst,
                error: e.to_string(),
            }),
        }
    }
    outcome.exit_code = if !outcome.errors.is_empty() {
        3
    } else if outcome.failed_rows() > 0 || outcome.monotonicity_failures > 0 {
        1
    } else {
        0
    };
    outcome.files = write_reports(config, &outcome)?;
    Ok(outcome)
}

fn report_paths(output: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let stem = output
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "report".into());
    let dir = output.parent().unwrap_or(Path::new(""));
    (
        dir.join(format!("{stem}.csv")),
        dir.join(format!("{stem}.json")),
        dir.join(format!("{stem}_entropy_power.csv")),
    )
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn header_line(generated: u64) -> String {
    format!(
        "# fbm-infoflow {} report generated_unix={generated}\n",
        env!("CARGO_PKG_VERSION")
    )
}

/// CSV body of the identity report (no header comment).
/// Shortest round-trip form, switching to exponent notation for very
/// small or large magnitudes.
fn num(x: f64) -> String {
    format!("{x:?}")
}

pub fn rows_csv(rows: &[ReportRow], with_mc: bool) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![
        "identity",
        "t",
        "hurst",
        "lhs",
        "rhs",
        "abs_discrepancy",
        "tolerance",
        "passed",
        "method_notes",
    ];
    if with_mc {
        header.extend(["mc_rhs", "mc_std_error"]);
    }
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(&header).map_err(io)?;
    let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
    for row in rows {
        let r = &row.report;
        let mut record = vec![
            r.identity.clone(),
            num(r.t),
            num(r.hurst),
            num(r.lhs),
            num(r.rhs),
            num(r.abs_discrepancy),
            num(r.tolerance),
            r.passed.to_string(),
            r.method_notes.clone(),
        ];
        if with_mc {
            record.push(opt(row.mc_rhs));
            record.push(opt(row.mc_std_error));
        }
        w.write_record(&record).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
}

pub fn entropy_power_csv(points: &[EntropyPowerPoint]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(["t", "hurst", "entropy_power", "fisher", "g", "classification"])
        .map_err(io)?;
    for p in points {
        w.write_record([
            num(p.t),
            num(p.hurst),
            num(p.entropy_power),
            num(p.fisher),
            num(p.g),
            p.classification.to_string(),
        ])
        .map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
}

fn write_file(path: &Path, header: &str, body: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut f = fs::File::create(path)?;
    f.write_all(header.as_bytes())?;
    f.write_all(body.as_bytes())?;
    Ok(())
}

fn write_reports(config: &SuiteConfig, outcome: &SuiteOutcome) -> Result<Vec<PathBuf>> {
    let generated = unix_now();
    let header = header_line(generated);
    let (csv_path, json_path, ep_path) = report_paths(&config.output);
    write_file(&csv_path, &header, &rows_csv(&outcome.rows, config.oracle.is_some())?)?;
    let json = JsonReport {
        tool: "fbm-infoflow",
        version: env!("CARGO_PKG_VERSION"),
        generated_unix: generated,
        exit_code: outcome.exit_code,
        config,
        rows: &outcome.rows,
        entropy_power: &outcome.entropy_power,
        excluded: &outcome.excluded,
        errors: &outcome.errors,
        monotonicity_failures: outcome.monotonicity_failures,
    };
    let text = serde_json::to_string_pretty(&json).map_err(|e| Error::Io(e.to_string()))?;
    write_file(&json_path, "", &(text + "\n"))?;
    let mut files = vec![csv_path, json_path];
    if config.suites.contains(&Suite::EntropyPower) {
        write_file(&ep_path, &header, &entropy_power_csv(&outcome.entropy_power)?)?;
        files.push(ep_path);
    }
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(extra: &str) -> String {
        format!(
            r#"{{
                "suites": ["debruijn-mult", "stein"],
                "channel": {{"variant": "multiplicative", "sigma": {{"kind": "constant", "c": 2.0}}}},
                "t_grid": [0.5, 1.0],
                "hurst_grid": [0.3, 0.7],
                "output": "unused"{extra}
            }}"#
        )
    }

    #[test]
    fn parses_and_resolves_defaults() {
        let c = SuiteConfig::from_json(&config("")).unwrap();
        assert_eq!(c.suites, vec![Suite::DebruijnMult, Suite::Stein]);
        assert_eq!(c.tolerance(Suite::Stein), 1e-10);
        assert_eq!(c.fd_step(Suite::DebruijnMult, 2.0), 2e-3);
        assert_eq!(c.t_min, 0.05);
        assert_eq!(c.quadrature, QuadratureSpec::tight());
    }

    #[test]
    fn unknown_suite_is_named() {
        let text = config("").replace("\"stein\"", "\"foo\"");
        let err = SuiteConfig::from_json(&text).unwrap_err();
        assert!(matches!(&err, Error::Config(m) if m.contains("foo")), "{err}");
        assert!("foo".parse::<Suite>().unwrap_err().to_string().contains("foo"));
        assert_eq!("kl-flow".parse::<Suite>().unwrap(), Suite::KlFlow);
    }

    #[test]
    fn validation_rejects_bad_grids_and_fields() {
        for bad in [
            config("").replace("[0.5, 1.0]", "[]"),
            config("").replace("[0.5, 1.0]", "[0.0, 1.0]"),
            config("").replace("[0.3, 0.7]", "[1.2]"),
            config(", \"bogus\": 1"),
            config(", \"stein_function\": \"y^9\""),
            config("").replace("\"debruijn-mult\", \"stein\"", ""),
        ] {
            assert!(matches!(SuiteConfig::from_json(&bad), Err(Error::Config(_))), "{bad}");
        }
        let mult_on_additive = config("").replace(
            r#"{"variant": "multiplicative", "sigma": {"kind": "constant", "c": 2.0}}"#,
            r#"{"variant": "additive", "initial": {"kind": "gaussian", "mean": 0, "variance": 1}}"#,
        );
        assert!(SuiteConfig::from_json(&mult_on_additive).is_err());
    }

    #[test]
    fn csv_quotes_notes_and_adds_mc_columns() {
        let row = ReportRow {
            report: IdentityReport::new("stein", 1.0, 0.5, 1.0, 1.0, 0.1, "a, b".into()),
            mc_rhs: Some(0.5),
            mc_std_error: None,
        };
        let body = rows_csv(&[row], true).unwrap();
        let lines: Vec<&str> = body.lines().collect();
        assert!(lines[0].ends_with("method_notes,mc_rhs,mc_std_error"));
        assert_eq!(lines[1], "stein,1.0,0.5,1.0,1.0,0.0,0.1,true,\"a, b\",0.5,");
    }
}
