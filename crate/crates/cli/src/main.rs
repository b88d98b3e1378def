use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use fastdp::Error;
use fastdp::harness::adjacency::AdjacencyMode;
use fastdp::harness::audit::{AuditConfig, run_stability_audit};
use fastdp::harness::bench::{BenchConfig, run_bench};
use fastdp::harness::calibrate::{PtrCalibrationConfig, run_ptr_calibration};
use fastdp::harness::sweep::{SweepConfig, SweepTarget, run_accuracy_sweep};
use fastdp::harness::synth::{CovarianceSpec, Distribution, GenSpec, OutlierSpec, generate};
use fastdp::harness::{default_lambda0, trial_rng};
use fastdp::io::{DataFormat, ResultsRecord, read_dataset, write_dataset};
use fastdp::mechanism::{learn_gaussian, private_covariance, private_mean};

#[derive(Parser)]
#[command(name = "fastdp", version, about = "Private mean and covariance estimation with stability-based PTR")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Gen(GenArgs),
    /// Privately estimate the mean of a dataset.
    EstimateMean(EstimateArgs),
    /// Privately estimate the covariance of a dataset.
    EstimateCov(EstimateArgs),
    /// Privately learn mean and covariance together.
    LearnGaussian(EstimateArgs),
    /// Check the stability bounds on adjacent synthetic datasets.
    AuditStability(AuditArgs),
    /// Median error of a private estimator across sample sizes.
    SweepAccuracy(SweepArgs),
    /// Compare PTR pass rates with the closed form.
    CalibratePtr(CalibrateArgs),
    /// Time the incremental ladder against the naive one.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Bin,
}

impl From<Format> for DataFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => DataFormat::Csv,
            Format::Bin => DataFormat::Bin,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DistributionArg {
    Gaussian,
    ScaledBernoulli,
    PlantedOutliers,
}

#[derive(Clone, Copy, ValueEnum)]
enum CovarianceArg {
    Identity,
    Diagonal,
    Rotated,
}

#[derive(Args, Clone)]
struct PrivacyArgs {
    #[arg(long, default_value_t = 1.0)]
    eps: f64,
    #[arg(long, default_value_t = 1e-6)]
    delta: f64,
    /// Outlier threshold; the default heuristic is used when omitted.
    #[arg(long, conflicts_with = "lambda0_auto")]
    lambda0: Option<f64>,
    /// Use the default threshold 4(d + 2 ln(2n²/β)), β = 0.1.
    #[arg(long)]
    lambda0_auto: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl PrivacyArgs {
    fn lambda0(&self, d: usize, n: usize) -> f64 {
        self.lambda0.unwrap_or_else(|| default_lambda0(d, n))
    }
}

#[derive(Args, Clone)]
struct ShapeArgs {
    #[arg(long, value_enum, default_value = "gaussian")]
    distribution: DistributionArg,
    #[arg(long, value_enum, default_value = "identity")]
    covariance: CovarianceArg,
    /// Condition number for diagonal and rotated covariances.
    #[arg(long, default_value_t = 1.0)]
    condition: f64,
}

impl ShapeArgs {
    fn covariance(&self) -> CovarianceSpec {
        match self.covariance {
            CovarianceArg::Identity => CovarianceSpec::Identity,
            CovarianceArg::Diagonal => CovarianceSpec::Diagonal { condition: self.condition },
            CovarianceArg::Rotated => CovarianceSpec::RotatedDiagonal { condition: self.condition },
        }
    }

    fn distribution(&self) -> Distribution {
        match self.distribution {
            DistributionArg::Gaussian => Distribution::Gaussian,
            DistributionArg::ScaledBernoulli => Distribution::ScaledBernoulliSubgaussian,
            DistributionArg::PlantedOutliers => Distribution::GaussianWithPlantedOutliers,
        }
    }
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    d: usize,
    #[command(flatten)]
    shape: ShapeArgs,
    /// Comma-separated mean vector (zero when omitted).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    mean: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    outliers: usize,
    #[arg(long, default_value_t = 100.0)]
    magnitude: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    input: PathBuf,
    /// Input format; sniffed from the magic bytes when omitted.
    #[arg(long, value_enum)]
    format: Option<Format>,
    #[command(flatten)]
    privacy: PrivacyArgs,
    /// Results JSON path (stdout when omitted).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct AuditArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    d: usize,
    #[command(flatten)]
    shape: ShapeArgs,
    #[arg(long, default_value_t = 200)]
    pairs: usize,
    #[arg(long, default_value_t = 1)]
    bases: usize,
    #[command(flatten)]
    privacy: PrivacyArgs,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TargetArg {
    Mean,
    Covariance,
    Gaussian,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_enum, default_value = "mean")]
    target: TargetArg,
    #[arg(long)]
    d: usize,
    /// Comma-separated sample sizes.
    #[arg(long, value_delimiter = ',', required = true)]
    ns: Vec<usize>,
    #[arg(long, default_value_t = 50)]
    trials: usize,
    #[command(flatten)]
    shape: ShapeArgs,
    #[command(flatten)]
    privacy: PrivacyArgs,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long, default_value_t = 100_000)]
    trials: usize,
    /// Single privacy setting instead of the default pair of settings.
    #[arg(long, requires = "delta")]
    eps: Option<f64>,
    #[arg(long, requires = "eps")]
    delta: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 50_000)]
    n: usize,
    #[arg(long, default_value_t = 50)]
    d: usize,
    #[arg(long, default_value_t = 30)]
    k: usize,
    #[arg(long)]
    lambda0: Option<f64>,
    #[arg(long, default_value_t = 20)]
    outliers: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Replay the downdates against fresh factorizations.
    #[arg(long)]
    verify: bool,
    #[arg(long)]
    output: Option<PathBuf>,
}

enum Failure {
    Input(String),
    Range(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::ParameterRange(_) => Failure::Range(e.to_string()),
            other => Failure::Input(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

fn emit<T: Serialize>(value: &T, path: Option<&Path>) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => writeln!(File::create(p)?, "{text}")?,
        None => println!("{text}"),
    }
    Ok(())
}

#[derive(Serialize)]
struct EstimateConfig<'a> {
    command: &'a str,
    input: &'a Path,
    n: usize,
    d: usize,
    eps: f64,
    delta: f64,
    lambda0: f64,
    seed: u64,
}

fn estimate(command: &str, args: &EstimateArgs) -> Result<(), Failure> {
    let x = read_dataset(&args.input, args.format.map(Into::into))?;
    let p = &args.privacy;
    let lambda0 = p.lambda0(x.d(), x.n());
    let mut rng = trial_rng(p.seed, 0);
    let start = Instant::now();
    let out = match command {
        "estimate-mean" => private_mean(&x, p.eps, p.delta, lambda0, &mut rng)?,
        "estimate-cov" => private_covariance(&x, p.eps, p.delta, lambda0, &mut rng)?,
        _ => learn_gaussian(&x, p.eps, p.delta, lambda0, &mut rng)?,
    };
    let timing_ms = start.elapsed().as_secs_f64() * 1e3;
    let config = EstimateConfig {
        command,
        input: &args.input,
        n: x.n(),
        d: x.d(),
        eps: p.eps,
        delta: p.delta,
        lambda0,
        seed: p.seed,
    };
    emit(&ResultsRecord::from_output(config, &out, timing_ms), args.output.as_deref())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Gen(a) => {
            let spec = GenSpec {
                distribution: a.shape.distribution(),
                n: a.n,
                d: a.d,
                mean: a.mean.clone(),
                covariance: a.shape.covariance(),
                outliers: (a.outliers > 0 || a.shape.distribution() == Distribution::GaussianWithPlantedOutliers)
                    .then_some(OutlierSpec {
                        count: a.outliers,
                        magnitude: a.magnitude,
                    }),
                seed: a.seed,
            };
            let g = generate(&spec)?;
            write_dataset(&g.data, &a.output, a.format.into())?;
        }
        Command::EstimateMean(a) => estimate("estimate-mean", &a)?,
        Command::EstimateCov(a) => estimate("estimate-cov", &a)?,
        Command::LearnGaussian(a) => estimate("learn-gaussian", &a)?,
        Command::AuditStability(a) => {
            let p = &a.privacy;
            let spec = GenSpec {
                distribution: a.shape.distribution(),
                outliers: (a.shape.distribution() == Distribution::GaussianWithPlantedOutliers)
                    .then_some(OutlierSpec { count: 1, magnitude: 100.0 }),
                ..GenSpec::gaussian(a.n, a.d, a.shape.covariance(), p.seed)
            };
            let mut config = AuditConfig::for_privacy(spec, p.eps, p.delta, p.lambda0(a.d, a.n), a.pairs, p.seed)?;
            config.bases = a.bases;
            config.modes = AdjacencyMode::ALL.to_vec();
            let result = run_stability_audit(&config)?;
            emit(&result, a.output.as_deref())?;
        }
        Command::SweepAccuracy(a) => {
            let p = &a.privacy;
            let config = SweepConfig {
                target: match a.target {
                    TargetArg::Mean => SweepTarget::Mean,
                    TargetArg::Covariance => SweepTarget::Covariance,
                    TargetArg::Gaussian => SweepTarget::Gaussian,
                },
                distribution: a.shape.distribution(),
                d: a.d,
                ns: a.ns.clone(),
                trials: a.trials,
                eps: p.eps,
                delta: p.delta,
                lambda0: p.lambda0,
                covariance: a.shape.covariance(),
                seed: p.seed,
            };
            fastdp::mechanism::derive_params(p.eps, p.delta, p.lambda0.unwrap_or(1.0), 1)?;
            let result = run_accuracy_sweep(&config)?;
            emit(&result, a.output.as_deref())?;
        }
        Command::CalibratePtr(a) => {
            let mut config = PtrCalibrationConfig {
                trials: a.trials,
                seed: a.seed,
                ..Default::default()
            };
            if let (Some(eps), Some(delta)) = (a.eps, a.delta) {
                fastdp::mechanism::derive_params(eps, delta, 1.0, 1)?;
                config.settings = vec![(eps, delta)];
            }
            emit(&run_ptr_calibration(&config), a.output.as_deref())?;
        }
        Command::Bench(a) => {
            let config = BenchConfig {
                n: a.n,
                d: a.d,
                k: a.k,
                lambda0: a.lambda0.unwrap_or_else(|| default_lambda0(a.d, a.n / 2)),
                outliers: a.outliers,
                seed: a.seed,
                verify_downdates: a.verify,
            };
            emit(&run_bench(&config)?, a.output.as_deref())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Range(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
