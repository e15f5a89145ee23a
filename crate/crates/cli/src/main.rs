use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fbm_infoflow::suite::{
    run_suite, ChannelConfig, FbmStatsConfig, FokkerPlanckConfig, InitialConfig, OracleConfig, SigmaConfig, Suite,
    SuiteConfig, SuiteOutcome,
};
use fbm_infoflow::{sample_path, Hurst, QuadratureSpec, SamplingMethod};

#[derive(Parser)]
#[command(name = "fbm-infoflow", version, about = "Entropy-flow identity checks for fBm-driven channels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one suite configured from flags.
    #[command(allow_negative_numbers = true)]
    Verify(VerifyArgs),
    /// Run every suite of a JSON config file.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Fractional Brownian motion utilities.
    Fbm {
        #[command(subcommand)]
        command: FbmCommand,
    },
}

#[derive(Subcommand)]
enum FbmCommand {
    /// Write one path on the grid k·dt, k = 1..n, as CSV (time,value).
    Sample {
        #[arg(long = "h")]
        hurst: f64,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        dt: f64,
        #[arg(long, default_value = "circulant")]
        method: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SigmaFlag {
    Constant,
    Sqrt1p,
    Identity,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitialFlag {
    Gaussian,
    Uniform,
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleFlag {
    Mc,
}

#[derive(Args)]
struct VerifyArgs {
    /// Suite name, e.g. debruijn-mult or entropy-power.
    suite: String,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values_t = [0.5, 1.0, 2.0])]
    t_grid: Vec<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values_t = [0.3, 0.5, 0.75])]
    hurst_grid: Vec<f64>,
    #[arg(long, value_enum, default_value = "sqrt1p")]
    sigma: SigmaFlag,
    /// Value of a constant sigma.
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    #[arg(long, default_value_t = 0.0)]
    x0: f64,
    #[arg(long, value_enum, default_value = "gaussian")]
    initial: InitialFlag,
    #[arg(long, default_value_t = 0.0)]
    mean: f64,
    #[arg(long, default_value_t = 1.0)]
    variance: f64,
    /// Support of a uniform initial law.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values_t = [-1.0, 1.0])]
    support: Vec<f64>,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    fd_step: Option<f64>,
    #[arg(long, default_value_t = 0.05)]
    t_min: f64,
    #[arg(long)]
    kl_y0: Option<f64>,
    #[arg(long, default_value = "y^3")]
    stein_function: String,
    #[arg(long, value_enum)]
    oracle: Option<OracleFlag>,
    #[arg(long, default_value_t = 100_000)]
    samples: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 10_000)]
    fbm_paths: u64,
    #[arg(long, default_value = "report")]
    output: PathBuf,
}

impl VerifyArgs {
    fn into_config(self) -> Result<SuiteConfig, String> {
        let suite: Suite = self.suite.parse().map_err(|e| format!("{e}"))?;
        let sigma = match self.sigma {
            SigmaFlag::Constant => SigmaConfig::Constant {
                c: self.c,
                domain: [-1e9, 1e9],
            },
            SigmaFlag::Sqrt1p => SigmaConfig::Sqrt1p { domain: [-1e9, 1e9] },
            SigmaFlag::Identity => SigmaConfig::Identity { domain: [-1e9, 1e9] },
        };
        let initial = match self.initial {
            InitialFlag::Gaussian => InitialConfig::Gaussian {
                mean: self.mean,
                variance: self.variance,
            },
            InitialFlag::Uniform => {
                let [lo, hi] = <[f64; 2]>::try_from(self.support.as_slice())
                    .map_err(|_| "--support takes two values lo,hi".to_string())?;
                InitialConfig::Uniform {
                    domain: [lo, hi],
                    points: 801,
                }
            }
        };
        let single = |v: Option<f64>| v.map(|x| BTreeMap::from([(suite, x)])).unwrap_or_default();
        Ok(SuiteConfig {
            suites: vec![suite],
            channel: ChannelConfig::Multiplicative {
                sigma,
                x0: self.x0,
                hurst: None,
            },
            companion: Some(ChannelConfig::Additive { initial, hurst: None }),
            t_grid: self.t_grid,
            hurst_grid: self.hurst_grid,
            tolerances: single(self.tolerance),
            fd_steps: single(self.fd_step),
            output: self.output,
            oracle: self.oracle.map(|_| OracleConfig {
                method: "mc".into(),
                samples: self.samples,
                seed: self.seed,
            }),
            t_min: self.t_min,
            kl_y0: self.kl_y0,
            stein_function: self.stein_function,
            fokker_planck: FokkerPlanckConfig::default(),
            fbm_stats: FbmStatsConfig {
                paths: self.fbm_paths,
                seed: self.seed,
                ..FbmStatsConfig::default()
            },
            quadrature: QuadratureSpec::tight(),
            entropy_power_floor: 1e-6,
        })
    }
}

fn config_error(message: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {message}");
    ExitCode::from(2)
}

fn execute(config: &SuiteConfig) -> ExitCode {
    match run_suite(config) {
        Ok(outcome) => {
            summarize(&outcome);
            ExitCode::from(outcome.exit_code as u8)
        }
        Err(e) => config_error(e),
    }
}

fn summarize(outcome: &SuiteOutcome) {
    // a closed stdout must not turn a finished run into a panic
    let mut out = io::stdout().lock();
    let failed = outcome.failed_rows();
    let _ = writeln!(
        out,
        "{} rows, {} passed, {} failed, {} excluded",
        outcome.rows.len(),
        outcome.rows.len() - failed,
        failed,
        outcome.excluded.len()
    );
    for row in outcome.rows.iter().filter(|r| !r.report.passed) {
        let r = &row.report;
        let _ = writeln!(
            out,
            "FAIL {} t={} H={}: |lhs-rhs| = {:e} > {:e}",
            r.identity, r.t, r.hurst, r.abs_discrepancy, r.tolerance
        );
    }
    if outcome.monotonicity_failures > 0 {
        let _ = writeln!(out, "FAIL kl-flow: KL increased at {} points", outcome.monotonicity_failures);
    }
    for e in &outcome.errors {
        eprintln!("numerical error: {e}");
    }
    for f in &outcome.files {
        let _ = writeln!(out, "wrote {}", f.display());
    }
}

fn sample(hurst: f64, n: usize, dt: f64, method: &str, seed: u64, out: &PathBuf) -> ExitCode {
    let run = || -> Result<(), String> {
        let h = Hurst::new(hurst).map_err(|e| e.to_string())?;
        let method: SamplingMethod = method.parse().map_err(|e: fbm_infoflow::Error| e.to_string())?;
        if n == 0 || dt.is_nan() || dt <= 0.0 {
            return Err(format!("need n > 0 and dt > 0, got n={n} dt={dt}"));
        }
        let grid: Vec<f64> = (1..=n).map(|k| k as f64 * dt).collect();
        let path = sample_path(&grid, h, method, seed).map_err(|e| e.to_string())?;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["time", "value"]).map_err(|e| e.to_string())?;
        for (t, v) in path.times.iter().zip(&path.values) {
            w.write_record([format!("{t:?}"), format!("{v:?}")]).map_err(|e| e.to_string())?;
        }
        let bytes = w.into_inner().map_err(|e| e.to_string())?;
        if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| e.to_string())?;
        }
        fs::write(out, bytes).map_err(|e| format!("{}: {e}", out.display()))?;
        if path.fell_back {
            eprintln!("note: circulant embedding not positive semi-definite, used Cholesky");
        }
        Ok(())
    };
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => config_error(e),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config } => match SuiteConfig::load(&config) {
            Ok(c) => execute(&c),
            Err(e) => config_error(e),
        },
        Command::Verify(args) => match args.into_config() {
            Ok(c) => execute(&c),
            Err(e) => config_error(e),
        },
        Command::Fbm {
            command:
                FbmCommand::Sample {
                    hurst,
                    n,
                    dt,
                    method,
                    seed,
                    out,
                },
        } => sample(hurst, n, dt, &method, seed, &out),
    }
}
