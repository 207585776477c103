//! `ratiofit` command-line tool: fit enlarged models to CSV data, generate
//! synthetic benchmark data and run declarative experiments.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ratiofit::harness::{
    gen_density_synth, gen_reg_synth, gen_reg_toy, read_numeric_csv, read_regression_csv, run_experiment,
    ContaminationMode, ExperimentSpec, Generator,
};
use ratiofit::{
    detect_outliers, detect_outliers_reg, fit_enlarged, fit_enlarged_reg, Error, FitOptions, GammaScoreConfig, RegData,
    SampleSet,
};
use serde_json::json;

#[derive(Parser)]
#[command(name = "ratiofit", version, about = "Robust fitting with enlarged models and contamination-ratio estimates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PhiArg {
    Power,
    Sphere,
}

#[derive(clap::Args)]
struct FitArgs {
    /// Seed for the random restarts.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = FitOptions::default().n_starts)]
    n_starts: usize,
    #[arg(long, default_value_t = FitOptions::default().max_iter)]
    max_iter: usize,
    #[arg(long, default_value_t = FitOptions::default().tol)]
    tol: f64,
}

impl FitArgs {
    fn options(&self) -> FitOptions {
        FitOptions {
            seed: self.seed,
            n_starts: self.n_starts,
            max_iter: self.max_iter,
            tol: self.tol,
            ..FitOptions::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Fit c·N(μ, Σ) to every column of a headed CSV file.
    FitDensity {
        csv: PathBuf,
        #[arg(long)]
        gamma: f64,
        #[arg(long, value_enum, default_value = "power")]
        phi: PhiArg,
        #[command(flatten)]
        fit: FitArgs,
    },
    /// Fit the enlarged linear regression model; the target is the last column unless named.
    FitReg {
        csv: PathBuf,
        #[arg(long)]
        gamma: f64,
        #[arg(long)]
        target: Option<String>,
        #[command(flatten)]
        fit: FitArgs,
    },
    /// Run an experiment described by a `key = value` spec file; the table goes to stdout.
    Bench {
        #[arg(long)]
        spec: PathBuf,
        /// Also write a JSON summary with the full metadata.
        #[arg(long)]
        json_out: Option<PathBuf>,
    },
    /// Write one synthetic training set as CSV.
    Gen {
        #[arg(long)]
        generator: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 5)]
        d: usize,
        #[arg(long, default_value_t = 0.0)]
        ratio: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the planted outlier indices here, one per line.
        #[arg(long)]
        plant_out: Option<PathBuf>,
    },
}

/// Failure classes mapped to exit codes.
enum Failure {
    Config(String),
    Data(String),
    AllFailed(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Data(_) => 2,
            Failure::AllFailed(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Data(m) | Failure::AllFailed(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Config(_) | Error::InvalidInput(_) | Error::InvalidPhi(_) | Error::InvalidTrim { .. } => {
                Failure::Config(msg)
            }
            Error::Data(_) | Error::Io(_) | Error::Csv(_) | Error::DimensionMismatch { .. } | Error::EmptyTestSet => {
                Failure::Data(msg)
            }
            _ => Failure::AllFailed(msg),
        }
    }
}

fn fit_density(csv: PathBuf, gamma: f64, phi: PhiArg, opts: FitOptions) -> Result<String, Failure> {
    let cfg = match phi {
        PhiArg::Power => GammaScoreConfig::power(gamma)?,
        PhiArg::Sphere => GammaScoreConfig::sphere(gamma)?,
    };
    let table = read_numeric_csv(csv)?;
    let samples = SampleSet::new(table.values)?;
    let fit = fit_enlarged(&samples, &cfg, &opts)?;
    let outliers = detect_outliers(&samples, &fit)?;
    let cov: Vec<Vec<f64>> = fit.theta_hat.cov().row_iter().map(|r| r.iter().copied().collect()).collect();
    let out = json!({
        "c_hat": fit.c_hat,
        "c_raw": fit.c_raw,
        "contamination": fit.contamination(),
        "branch": fit.branch,
        "mean": fit.theta_hat.mean().as_slice(),
        "cov": cov,
        "columns": table.names,
        "outliers": outliers,
        "converged": fit.converged,
        "iterations": fit.iterations,
        "final_score": fit.final_score,
        "dropped_rows": table.dropped,
    });
    Ok(serde_json::to_string_pretty(&out).expect("serializable"))
}

fn fit_reg(csv: PathBuf, gamma: f64, target: Option<String>, opts: FitOptions) -> Result<String, Failure> {
    let data = read_regression_csv(csv, target.as_deref())?;
    let fit = fit_enlarged_reg(&data.data, gamma, &opts)?;
    let outliers = detect_outliers_reg(&data.data, &fit)?;
    let out = json!({
        "c_hat": fit.c_hat,
        "c_raw": fit.c_raw,
        "contamination": fit.contamination(),
        "branch": fit.branch,
        "beta": fit.theta_hat.beta.as_slice(),
        "intercept": fit.theta_hat.intercept,
        "sigma": fit.theta_hat.sigma,
        "features": data.feature_names,
        "target": data.target_name,
        "outliers": outliers,
        "converged": fit.converged,
        "iterations": fit.iterations,
        "final_score": fit.final_score,
        "dropped_rows": data.dropped,
    });
    Ok(serde_json::to_string_pretty(&out).expect("serializable"))
}

fn bench(spec_path: PathBuf, json_out: Option<PathBuf>) -> Result<String, Failure> {
    let text = std::fs::read_to_string(&spec_path)
        .map_err(|e| Failure::Config(format!("cannot read {}: {e}", spec_path.display())))?;
    let spec = ExperimentSpec::from_config_str(&text)?;
    let table = run_experiment(&spec)?;
    if let Some(path) = json_out {
        let body = serde_json::to_string_pretty(&table.to_json()).expect("serializable");
        std::fs::write(&path, body).map_err(|e| Failure::Data(format!("cannot write {}: {e}", path.display())))?;
    }
    if table.all_failed() {
        return Err(Failure::AllFailed(format!("every method failed on every replication\n{}", table.to_csv())));
    }
    Ok(table.to_csv())
}

fn write_matrix(header: &[String], rows: impl Iterator<Item = Vec<f64>>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        let fields: Vec<String> = r.iter().map(f64::to_string).collect();
        let _ = writeln!(out, "{}", fields.join(","));
    }
    out
}

fn regression_csv(data: &RegData) -> String {
    let d = data.dim();
    let mut header: Vec<String> = (1..=d).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    write_matrix(
        &header,
        (0..data.len()).map(|i| {
            let mut r: Vec<f64> = data.x().row(i).iter().copied().collect();
            r.push(data.y()[i]);
            r
        }),
    )
}

fn generate(generator: &str, n: usize, d: usize, ratio: f64, seed: u64) -> Result<(String, Vec<usize>), Failure> {
    if !(0.0..0.5).contains(&ratio) {
        return Err(Failure::Config(format!("ratio must lie in [0, 0.5), got {ratio}")));
    }
    let generator: Generator = generator.parse()?;
    Ok(match generator {
        Generator::DensitySynth => {
            let (s, plant) = gen_density_synth(seed, n, d, ratio)?;
            let header: Vec<String> = (1..=d).map(|j| format!("x{j}")).collect();
            (write_matrix(&header, (0..s.len()).map(|i| s.row(i))), plant)
        }
        Generator::RegToy => {
            let (data, plant) = gen_reg_toy(seed, n, ratio)?;
            (regression_csv(&data), plant)
        }
        Generator::RegSynthY | Generator::RegSynthXy => {
            let mode = if generator == Generator::RegSynthY { ContaminationMode::YOnly } else { ContaminationMode::Xy };
            let s = gen_reg_synth(seed, n, 0, d, ratio, mode)?;
            (regression_csv(&s.train), s.plant)
        }
        Generator::CsvBenchY | Generator::CsvBenchXy => {
            return Err(Failure::Config("csv_bench generators read existing data; use `bench`".into()));
        }
    })
}

fn write_file(path: &PathBuf, body: &str) -> Result<(), Failure> {
    std::fs::write(path, body).map_err(|e| Failure::Data(format!("cannot write {}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<String, Failure> {
    match cli.command {
        Command::FitDensity { csv, gamma, phi, fit } => fit_density(csv, gamma, phi, fit.options()),
        Command::FitReg { csv, gamma, target, fit } => fit_reg(csv, gamma, target, fit.options()),
        Command::Bench { spec, json_out } => bench(spec, json_out),
        Command::Gen { generator, out, n, d, ratio, seed, plant_out } => {
            let (body, plant) = generate(&generator, n, d, ratio, seed)?;
            write_file(&out, &body)?;
            if let Some(p) = plant_out {
                let lines: String = plant.iter().map(|i| format!("{i}\n")).collect();
                write_file(&p, &lines)?;
            }
            Ok(format!("wrote {} rows to {} ({} planted)", n, out.display(), plant.len()))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(out) => {
            println!("{}", out.trim_end());
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
