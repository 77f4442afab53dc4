use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use spikesolve::certificate::{construct_fourier_certificate_with, verify_qic, CertificateOptions, QicConstants, FOURIER_QIC};
use spikesolve::experiment::{self, builtin, calibrated_lambda, ExperimentConfig, LambdaRule, SolveSummary};
use spikesolve::guarantees::{output_localization, GuaranteeConstants};
use spikesolve::io::{self, SamplesFile};
use spikesolve::noise::{calibration_table, NoiseModel};
use spikesolve::solver::{solve, SolverConfig};
use spikesolve::{DiscreteMeasure, Error, MeasurementFamily};

/// Spike recovery from noisy Fourier or Chebyshev moments.
#[derive(Parser)]
#[command(name = "spikesolve", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// A positive number or `auto`.
    #[arg(long, global = true)]
    lambda: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the truth and one noisy sample vector.
    Simulate {
        #[arg(long)]
        scenario: Option<String>,
        /// Trial whose noise substream is used.
        #[arg(long, default_value_t = 0)]
        trial: usize,
    },
    /// Solve the BLASSO for a sample file.
    Solve {
        #[arg(long)]
        samples: PathBuf,
        /// Dual grid nodes.
        #[arg(long)]
        grid: Option<usize>,
        /// Ground truth; adds guarantees.json and spikes.csv.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Isolation constants `C_a,C_b` for the guarantees.
        #[arg(long)]
        qic: Option<String>,
    },
    /// Build and verify a Fourier certificate for a measure.
    Certify {
        #[arg(long)]
        measure: PathBuf,
        #[arg(long)]
        fc: usize,
        #[arg(long)]
        qic: Option<String>,
        #[arg(long)]
        grid: Option<usize>,
    },
    /// Closed-form noise tail bounds next to Monte Carlo exceedance.
    Calibrate {
        /// `fourier:<fc>` or `chebyshev:<m>`.
        #[arg(long, default_value = "fourier:64")]
        family: String,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value_t = 8192)]
        grid: usize,
        /// Comma-separated levels; defaults to multiples of the λ rule.
        #[arg(long)]
        u: Option<String>,
    },
    /// Run a scenario into a run directory.
    Run {
        #[arg(long)]
        scenario: Option<String>,
    },
    /// Summarize a run directory.
    Report { run_dir: Option<PathBuf> },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numerical { .. } => 2,
        _ => 1,
    }
}

fn parse_family(s: &str) -> Result<MeasurementFamily, Error> {
    let bad = || Error::Config(format!("family must be fourier:<fc> or chebyshev:<m>, got {s:?}"));
    let (kind, n) = s.split_once(':').ok_or_else(bad)?;
    let n: usize = n.parse().map_err(|_| bad())?;
    match kind {
        "fourier" => MeasurementFamily::fourier(n),
        "chebyshev" => MeasurementFamily::chebyshev(n),
        _ => Err(bad()),
    }
    .map_err(|e| Error::Config(e.to_string()))
}

fn parse_lambda(s: &str) -> Result<LambdaRule, Error> {
    if s == "auto" {
        return Ok(LambdaRule::Auto);
    }
    match s.parse::<f64>() {
        Ok(value) if value > 0.0 && value.is_finite() => Ok(LambdaRule::Explicit { value }),
        _ => Err(Error::Config(format!("--lambda must be a positive number or auto, got {s:?}"))),
    }
}

fn parse_qic(s: Option<&str>) -> Result<QicConstants, Error> {
    let Some(s) = s else { return Ok(FOURIER_QIC) };
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| Error::Config(format!("--qic must be C_a,C_b, got {s:?}")))?;
    match v[..] {
        [a, b] => QicConstants::new(a, b).map_err(|e| Error::Config(e.to_string())),
        _ => Err(Error::Config(format!("--qic must be C_a,C_b, got {s:?}"))),
    }
}

fn out_dir(common: &Common) -> Result<PathBuf, Error> {
    let dir = common.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

/// The configuration from `--config` or a scenario, with flag overrides.
fn load_config(common: &Common, scenario: Option<&str>) -> Result<ExperimentConfig, Error> {
    let mut cfg = match (&common.config, scenario) {
        (Some(_), Some(_)) => return Err(Error::Config("give either --config or --scenario".into())),
        (Some(path), None) => io::read_json(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
        (None, Some(name)) => builtin(name)?,
        (None, None) => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(trials) = common.trials {
        cfg.trials = trials;
    }
    if let Some(l) = &common.lambda {
        cfg.lambda = parse_lambda(l)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn simulate(common: &Common, scenario: Option<&str>, trial: usize) -> Result<u8, Error> {
    let cfg = load_config(common, scenario)?;
    let (truth, y) = experiment::simulate(&cfg, trial)?;
    let dir = out_dir(common)?;
    io::write_json(&dir.join("measure.json"), &truth)?;
    io::write_json(&dir.join("samples.json"), &SamplesFile::new(&y, Some(cfg.noise.sigma)))?;
    println!("wrote measure.json and samples.json to {}", dir.display());
    Ok(0)
}

fn solve_cmd(
    common: &Common,
    samples: &Path,
    grid: Option<usize>,
    truth: Option<&Path>,
    qic: Option<&str>,
) -> Result<u8, Error> {
    let file = io::read_samples(samples).map_err(|e| Error::Config(format!("{}: {e}", samples.display())))?;
    let fam = file.family;
    let y = file.samples().map_err(|e| Error::Config(e.to_string()))?;
    let lambda = match common.lambda.as_deref().map(parse_lambda).transpose()? {
        Some(LambdaRule::Explicit { value }) => value,
        Some(_) | None => {
            let sigma = file
                .sigma
                .filter(|s| *s > 0.0)
                .ok_or_else(|| Error::Config("--lambda auto needs a positive sigma in the sample file".into()))?;
            calibrated_lambda(fam, sigma).map_err(|e| Error::Config(e.to_string()))?
        }
    };
    let mut cfg = SolverConfig::new(fam, lambda);
    if let Some(g) = grid {
        cfg.dual_grid = g;
    }
    let res = solve(fam, &y, &cfg)?;
    let dir = out_dir(common)?;
    io::write_json(&dir.join("result.json"), &SolveSummary::new(&res, lambda))?;
    io::write_dualpoly_csv(&dir.join("dualpoly.csv"), &res.dual_coefficients, 16 * fam.size())?;
    println!(
        "{} atoms, objective {}, gap {:e}, optimality {}",
        res.measure.len(),
        io::fmt_f64(res.objective),
        res.gap,
        if res.optimality.passed { "passed" } else { "FAILED" }
    );
    if let Some(path) = truth {
        let t: DiscreteMeasure = io::read_json(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let q = parse_qic(qic)?;
        let c_c = match fam {
            MeasurementFamily::Fourier { .. } => std::f64::consts::PI.powi(2),
            MeasurementFamily::Chebyshev { .. } => 4.0 / (1.0 - q.c0() * q.c0()),
        };
        let k = GuaranteeConstants::new(q, c_c, fam.effective_m(), res.lambda_effective)?;
        let loc = output_localization(&res.measure, Some(&t), &k)?;
        io::write_spikes_csv(&dir.join("spikes.csv"), &loc.spikes)?;
        io::write_json(
            &dir.join("guarantees.json"),
            &serde_json::json!({ "constants": k, "localization": loc }),
        )?;
    }
    Ok(if res.optimality.passed { 0 } else { 2 })
}

fn certify(common: &Common, measure: &Path, fc: usize, qic: Option<&str>, grid: Option<usize>) -> Result<u8, Error> {
    let mu: DiscreteMeasure = io::read_json(measure).map_err(|e| Error::Config(format!("{}: {e}", measure.display())))?;
    let q = parse_qic(qic)?;
    let fam = MeasurementFamily::fourier(fc).map_err(|e| Error::Config(e.to_string()))?;
    let support = mu.locations();
    let phases: Vec<f64> = mu.atoms().iter().map(|a| a.phase).collect();
    let opts = CertificateOptions {
        require_large_cutoff: false,
    };
    let p = construct_fourier_certificate_with(&support, &phases, fc, opts)?;
    let grid = grid.unwrap_or(64 * fam.size());
    let report = verify_qic(&p, &support, &phases, q, grid)?;
    let dir = out_dir(common)?;
    io::write_json(&dir.join("certificate.json"), &report)?;
    io::write_dualpoly_csv(&dir.join("dualpoly.csv"), &p, 16 * fam.size())?;
    println!(
        "certificate {} with margin {:e}",
        if report.passed { "passed" } else { "FAILED" },
        report.qic_margin
    );
    Ok(0)
}

fn calibrate(common: &Common, family: &str, sigma: f64, grid: usize, u: Option<&str>) -> Result<u8, Error> {
    let dir = out_dir(common)?;
    if let Some(path) = &common.config {
        let mut cfg: ExperimentConfig =
            io::read_json(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if cfg.calibration.is_empty() {
            return Err(Error::Config("the configuration has no calibration cases".into()));
        }
        cfg.seed = common.seed.unwrap_or(cfg.seed);
        cfg.trials = common.trials.unwrap_or(cfg.trials);
        experiment::run_scenario(&cfg, &dir)?;
        return Ok(0);
    }
    let fam = parse_family(family)?;
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!("--sigma must be positive, got {sigma}")));
    }
    let levels: Vec<f64> = match u {
        Some(s) => s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| Error::Config(format!("--u must be a comma-separated list, got {s:?}")))?,
        None => {
            let base = calibrated_lambda(fam, sigma).map_err(|e| Error::Config(e.to_string()))?;
            [0.5, 0.625, 0.75, 0.875, 1.0].iter().map(|m| m * base).collect()
        }
    };
    let model = NoiseModel::for_family(fam, sigma, common.seed.unwrap_or(0)).map_err(|e| Error::Config(e.to_string()))?;
    let rows = calibration_table(fam, &model, &levels, common.trials.unwrap_or(2000), grid)
        .map_err(|e| Error::Config(e.to_string()))?;
    io::write_calibration_csv(&dir.join("calibration.csv"), &rows)?;
    for r in &rows {
        println!(
            "u={} bound={} mc={} [{}, {}]",
            io::fmt_f64(r.u),
            io::fmt_f64(r.analytic_bound),
            io::fmt_f64(r.mc_exceedance),
            io::fmt_f64(r.mc_low),
            io::fmt_f64(r.mc_high)
        );
    }
    Ok(0)
}

fn run(common: &Common, scenario: Option<&str>) -> Result<u8, Error> {
    let cfg = load_config(common, scenario)?;
    let dir = common
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("run-{}", cfg.scenario)));
    let record = experiment::run_scenario(&cfg, &dir)?;
    let ag = &record.aggregate;
    println!(
        "{}: {} trials, {} failed, localization {}/{} conditioned ok, detection {}/{} conditioned ok",
        cfg.scenario,
        ag.trials,
        ag.failed_trials,
        ag.localization_conditioned - ag.localization_violating,
        ag.localization_conditioned,
        ag.detection_conditioned - ag.detection_violating,
        ag.detection_conditioned
    );
    println!("run directory: {}", dir.display());
    Ok(if ag.guarantee_violation {
        3
    } else if ag.numerical_failures > 0 {
        2
    } else {
        0
    })
}

fn report(common: &Common, run_dir: Option<&Path>) -> Result<u8, Error> {
    let dir = run_dir
        .map(Path::to_path_buf)
        .or_else(|| common.out.clone())
        .ok_or_else(|| Error::Config("report needs a run directory".into()))?;
    let v: serde_json::Value = io::read_json(&dir.join("results.json"))
        .map_err(|e| Error::Config(format!("{}: {e}", dir.join("results.json").display())))?;
    let ag = &v["aggregate"];
    println!("scenario: {}", v["config"]["scenario"].as_str().unwrap_or("?"));
    println!("format: {}", v["format"].as_str().unwrap_or("?"));
    if let Some(obj) = ag.as_object() {
        for (k, val) in obj {
            println!("{k}: {val}");
        }
    }
    Ok(if ag["guarantee_violation"].as_bool() == Some(true) { 3 } else { 0 })
}

fn configure_threads() -> Result<(), Error> {
    let Ok(raw) = std::env::var("SPIKESOLVE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("SPIKESOLVE_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))
}

fn main() -> ExitCode {
    // usage errors share the configuration exit code
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let c = &cli.common;
    let result = configure_threads().and_then(|()| match &cli.command {
        Command::Simulate { scenario, trial } => simulate(c, scenario.as_deref(), *trial),
        Command::Solve {
            samples,
            grid,
            truth,
            qic,
        } => solve_cmd(c, samples, *grid, truth.as_deref(), qic.as_deref()),
        Command::Certify { measure, fc, qic, grid } => certify(c, measure, *fc, qic.as_deref(), *grid),
        Command::Calibrate { family, sigma, grid, u } => calibrate(c, family, *sigma, *grid, u.as_deref()),
        Command::Run { scenario } => run(c, scenario.as_deref()),
        Command::Report { run_dir } => report(c, run_dir.as_deref()),
    });
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("spikesolve: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
