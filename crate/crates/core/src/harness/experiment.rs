//! Declarative experiment specs, replication runner and result tables.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::Serialize;

use crate::baselines::{self, fit_baseline, rmse, BaselineKind, DEFAULT_HUBER_K};
use crate::density::{detect_outliers, fit_enlarged};
use crate::error::{Error, Result};
use crate::fit::FitOptions;
use crate::harness::data::{
    apply_standardizer, column_standardizer, contaminate_csv, read_regression_csv, CsvRegression, CSV_X_FACTOR,
    CSV_Y_FACTOR,
};
use crate::harness::synth::{
    gen_density_synth, gen_reg_synth, gen_reg_toy, gen_reg_toy_clean, rng, ContaminationMode, SYNTH_NOISE_SD,
};
use crate::harness::{label_tag, stream_seed};
use crate::regression::{detect_outliers_reg, fit_enlarged_reg, RegData};
use crate::score::{GammaScoreConfig, SampleSet};
use crate::stats::{mean, std_dev};

const DATA_TAG: u64 = 0xD47A;
const TEST_TAG: u64 = 0x7E57;
const SPLIT_TAG: u64 = 0x5B17;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Density,
    Regression,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    DensitySynth,
    RegToy,
    RegSynthY,
    RegSynthXy,
    CsvBenchY,
    CsvBenchXy,
}

impl Generator {
    pub fn task(self) -> Task {
        match self {
            Generator::DensitySynth => Task::Density,
            _ => Task::Regression,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Generator::DensitySynth => "density_synth",
            Generator::RegToy => "reg_toy",
            Generator::RegSynthY => "reg_synth_y",
            Generator::RegSynthXy => "reg_synth_xy",
            Generator::CsvBenchY => "csv_bench_y",
            Generator::CsvBenchXy => "csv_bench_xy",
        }
    }
}

impl FromStr for Generator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "density_synth" => Generator::DensitySynth,
            "reg_toy" => Generator::RegToy,
            "reg_synth_y" => Generator::RegSynthY,
            "reg_synth_xy" => Generator::RegSynthXy,
            "csv_bench_y" => Generator::CsvBenchY,
            "csv_bench_xy" => Generator::CsvBenchXy,
            other => return Err(Error::Config(format!("unknown generator `{other}`"))),
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "density" => Ok(Task::Density),
            "regression" => Ok(Task::Regression),
            other => Err(Error::Config(format!("unknown task `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Method {
    L2,
    L1,
    Huber,
    Lts,
    GemMc,
    /// Enlarged model fitted with the density-power score.
    SPower,
    /// Sample mean and covariance (density task only).
    Mle,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::L2 => "L2",
            Method::L1 => "L1",
            Method::Huber => "Huber",
            Method::Lts => "LTS",
            Method::GemMc => "GemMc",
            Method::SPower => "S_power",
            Method::Mle => "MLE",
        }
    }

    fn supports(self, task: Task) -> bool {
        match task {
            Task::Density => matches!(self, Method::SPower | Method::Mle),
            Task::Regression => !matches!(self, Method::Mle),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "l2" => Method::L2,
            "l1" => Method::L1,
            "huber" => Method::Huber,
            "lts" => Method::Lts,
            "gemmc" => Method::GemMc,
            "s_power" | "spower" => Method::SPower,
            "mle" => Method::Mle,
            _ => return Err(Error::Config(format!("unknown method `{s}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSpec {
    pub task: Task,
    pub generator: Generator,
    pub n_train: usize,
    pub n_test: usize,
    pub d: usize,
    pub contamination: f64,
    pub gammas: Vec<f64>,
    pub methods: Vec<Method>,
    pub replications: usize,
    pub seed: u64,
    /// Source file for the `csv_bench_*` generators.
    pub csv: Option<PathBuf>,
    /// Target column for CSV data; the last column when unset.
    pub target: Option<String>,
    pub huber_k: f64,
    pub n_starts: usize,
}

impl ExperimentSpec {
    /// Defaults for a generator: `n_train = 100`, `n_test = 1000`, `γ = 0.1`,
    /// every method valid for the task, 100 replications.
    pub fn new(generator: Generator) -> Self {
        let task = generator.task();
        let (d, n_train, methods) = match task {
            Task::Density => (2, 50, vec![Method::SPower, Method::Mle]),
            Task::Regression => (
                if generator == Generator::RegToy { 1 } else { 5 },
                100,
                vec![Method::L2, Method::L1, Method::Huber, Method::Lts, Method::GemMc, Method::SPower],
            ),
        };
        Self {
            task,
            generator,
            n_train,
            n_test: 1000,
            d,
            contamination: 0.0,
            gammas: vec![0.1],
            methods,
            replications: 100,
            seed: 0,
            csv: None,
            target: None,
            huber_k: DEFAULT_HUBER_K,
            n_starts: FitOptions::default().n_starts,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.task != self.generator.task() {
            return bad(format!("generator `{}` does not belong to this task", self.generator.name()));
        }
        if self.replications == 0 {
            return bad("replications must be at least 1".into());
        }
        if !(0.0..0.5).contains(&self.contamination) {
            return bad(format!("contamination must lie in [0, 0.5), got {}", self.contamination));
        }
        if self.methods.is_empty() {
            return bad("at least one method is required".into());
        }
        if let Some(m) = self.methods.iter().find(|m| !m.supports(self.task)) {
            return bad(format!("method `{m}` is not available for this task"));
        }
        if self.methods.contains(&Method::SPower) && (self.gammas.is_empty() || self.gammas.iter().any(|g| !(*g > 0.0)))
        {
            return bad("gammas must be a non-empty list of positive numbers".into());
        }
        if self.d == 0 || self.n_train <= self.d + 1 {
            return bad(format!("need d >= 1 and n_train > d + 1 (d = {}, n_train = {})", self.d, self.n_train));
        }
        if self.generator == Generator::RegToy && self.d != 1 {
            return bad("reg_toy is one-dimensional; set d = 1".into());
        }
        if self.task == Task::Regression && self.n_test == 0 {
            return bad("n_test must be positive for regression".into());
        }
        if matches!(self.generator, Generator::CsvBenchY | Generator::CsvBenchXy) && self.csv.is_none() {
            return bad("csv_bench generators need a `csv` path".into());
        }
        if !(self.huber_k > 0.0) || self.n_starts == 0 {
            return bad("huber_k must be positive and n_starts at least 1".into());
        }
        Ok(())
    }

    /// Parses the flat `key = value` format; lists are comma separated and
    /// `#` starts a comment.
    pub fn from_config_str(text: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            if kv.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key `{}`", lineno + 1, k.trim())));
            }
        }
        let generator: Generator =
            kv.remove("generator").ok_or_else(|| Error::Config("missing key `generator`".into()))?.parse()?;
        let mut spec = Self::new(generator);
        if let Some(t) = kv.remove("task") {
            spec.task = t.parse()?;
        }
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Config(format!("bad value for `{key}`: `{v}`")))
        }
        let d_default = spec.d;
        for (key, value) in kv {
            let v = value.as_str();
            match key.as_str() {
                "n_train" => spec.n_train = num(&key, v)?,
                "n_test" => spec.n_test = num(&key, v)?,
                "d" => spec.d = num(&key, v)?,
                "contamination" => spec.contamination = num(&key, v)?,
                "replications" => spec.replications = num(&key, v)?,
                "seed" => spec.seed = num(&key, v)?,
                "huber_k" => spec.huber_k = num(&key, v)?,
                "n_starts" => spec.n_starts = num(&key, v)?,
                "gammas" => {
                    spec.gammas = split_list(v).map(|g| num(&key, g)).collect::<Result<_>>()?;
                }
                "methods" => spec.methods = split_list(v).map(str::parse).collect::<Result<_>>()?,
                "csv" => spec.csv = Some(PathBuf::from(v)),
                "target" => spec.target = Some(v.to_string()),
                other => return Err(Error::Config(format!("unknown key `{other}`"))),
            }
        }
        let _ = d_default;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        let task = match self.task {
            Task::Density => "density",
            Task::Regression => "regression",
        };
        out += &format!("task = {task}\ngenerator = {}\n", self.generator.name());
        out += &format!("n_train = {}\nn_test = {}\nd = {}\n", self.n_train, self.n_test, self.d);
        out += &format!("contamination = {}\n", self.contamination);
        let gammas: Vec<String> = self.gammas.iter().map(f64::to_string).collect();
        out += &format!("gammas = {}\n", gammas.join(", "));
        let methods: Vec<&str> = self.methods.iter().map(|m| m.name()).collect();
        out += &format!("methods = {}\n", methods.join(", "));
        out += &format!("replications = {}\nseed = {}\n", self.replications, self.seed);
        out += &format!("huber_k = {}\nn_starts = {}\n", self.huber_k, self.n_starts);
        if let Some(p) = &self.csv {
            out += &format!("csv = {}\n", p.display());
        }
        if let Some(t) = &self.target {
            out += &format!("target = {t}\n");
        }
        out
    }

    /// `(method, γ)` cells in output order; S_power expands over `gammas`.
    pub fn cells(&self) -> Vec<(Method, Option<f64>)> {
        let mut out = Vec::new();
        for &m in &self.methods {
            if m == Method::SPower {
                out.extend(self.gammas.iter().map(|&g| (m, Some(g))));
            } else {
                out.push((m, None));
            }
        }
        out
    }
}

fn split_list(v: &str) -> impl Iterator<Item = &str> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty())
}

fn cell_label(method: Method, gamma: Option<f64>) -> String {
    match gamma {
        Some(g) => format!("{}@{g}", method.name()),
        None => method.name().to_string(),
    }
}

/// Outcome of one method on one replication.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellOutcome {
    pub method: Method,
    pub gamma: Option<f64>,
    /// Test RMSE (regression) or parameter RMSE against `(0, I)` (density).
    pub rmse: Option<f64>,
    /// Estimated contamination ratio `1 − ĉ`.
    pub ratio: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub error: Option<String>,
}

impl CellOutcome {
    fn failed(method: Method, gamma: Option<f64>, err: Error) -> Self {
        Self { method, gamma, rmse: None, ratio: None, precision: None, recall: None, error: Some(err.to_string()) }
    }
}

/// Training/test data of one replication.
#[derive(Debug, Clone)]
pub enum ReplicationData {
    Density { train: SampleSet, plant: Vec<usize> },
    Regression { train: RegData, test: RegData, plant: Option<Vec<usize>> },
}

/// Data shared by all replications (the loaded CSV, if any).
#[derive(Debug, Clone, Default)]
pub struct ExperimentContext {
    pub csv: Option<CsvRegression>,
}

impl ExperimentContext {
    pub fn load(spec: &ExperimentSpec) -> Result<Self> {
        let csv = match (&spec.generator, &spec.csv) {
            (Generator::CsvBenchY | Generator::CsvBenchXy, Some(path)) => {
                let c = read_regression_csv(path, spec.target.as_deref())?;
                if c.data.dim() != spec.d {
                    return Err(Error::Config(format!(
                        "d = {} but the CSV has {} feature columns",
                        spec.d,
                        c.data.dim()
                    )));
                }
                if c.data.len() < spec.n_train + spec.n_test {
                    return Err(Error::Data(format!(
                        "CSV has {} usable rows, need n_train + n_test = {}",
                        c.data.len(),
                        spec.n_train + spec.n_test
                    )));
                }
                Some(c)
            }
            _ => None,
        };
        Ok(Self { csv })
    }
}

/// Generates (and for CSV data, splits, standardizes and contaminates) the
/// data for replication `rep`. The test split is never contaminated.
pub fn replication_data(spec: &ExperimentSpec, ctx: &ExperimentContext, rep: u64) -> Result<ReplicationData> {
    let data_seed = stream_seed(spec.seed, &[rep, DATA_TAG]);
    let ratio = spec.contamination;
    Ok(match spec.generator {
        Generator::DensitySynth => {
            let (train, plant) = gen_density_synth(data_seed, spec.n_train, spec.d, ratio)?;
            ReplicationData::Density { train, plant }
        }
        Generator::RegToy => {
            let (train, plant) = gen_reg_toy(data_seed, spec.n_train, ratio)?;
            let test = gen_reg_toy_clean(stream_seed(spec.seed, &[rep, TEST_TAG]), spec.n_test)?;
            ReplicationData::Regression { train, test, plant: Some(plant) }
        }
        Generator::RegSynthY | Generator::RegSynthXy => {
            let mode =
                if spec.generator == Generator::RegSynthY { ContaminationMode::YOnly } else { ContaminationMode::Xy };
            let s = gen_reg_synth(data_seed, spec.n_train, spec.n_test, spec.d, ratio, mode)?;
            ReplicationData::Regression { train: s.train, test: s.test, plant: Some(s.plant) }
        }
        Generator::CsvBenchY | Generator::CsvBenchXy => {
            let csv = ctx.csv.as_ref().ok_or_else(|| Error::Config("CSV data not loaded".into()))?;
            let mode =
                if spec.generator == Generator::CsvBenchY { ContaminationMode::YOnly } else { ContaminationMode::Xy };
            let mut split_rng = rng(stream_seed(spec.seed, &[rep, SPLIT_TAG]));
            let rows = sample(&mut split_rng, csv.data.len(), spec.n_train + spec.n_test).into_vec();
            let (train_rows, test_rows) = rows.split_at(spec.n_train);
            let train = csv.data.select(train_rows);
            let test = csv.data.select(test_rows);
            let (m, s) = column_standardizer(train.x());
            let train = RegData::new(apply_standardizer(train.x(), &m, &s), train.y().clone())?;
            let test = RegData::new_unchecked_size(apply_standardizer(test.x(), &m, &s), test.y().clone())?;
            let (train, plant) = contaminate_csv(&train, data_seed, ratio, mode)?;
            ReplicationData::Regression { train, test, plant: Some(plant) }
        }
    })
}

fn precision_recall(detected: &[usize], plant: &[usize]) -> (Option<f64>, Option<f64>) {
    let hits = detected.iter().filter(|i| plant.contains(i)).count() as f64;
    let precision = (!detected.is_empty()).then(|| hits / detected.len() as f64);
    let recall = (!plant.is_empty()).then(|| hits / plant.len() as f64);
    (precision, recall)
}

/// RMSE of `(μ̂, Σ̂)` entries against the standard normal `(0, I)`.
pub fn density_param_rmse(mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let d = mean.len();
    let mut ss = mean.norm_squared();
    for j in 0..d {
        for k in 0..d {
            let target = if j == k { 1.0 } else { 0.0 };
            ss += (cov[(j, k)] - target).powi(2);
        }
    }
    (ss / (d + d * d) as f64).sqrt()
}

fn run_cell(
    spec: &ExperimentSpec,
    data: &ReplicationData,
    method: Method,
    gamma: Option<f64>,
    opts: &FitOptions,
) -> Result<CellOutcome> {
    let mut out = CellOutcome { method, gamma, rmse: None, ratio: None, precision: None, recall: None, error: None };
    match data {
        ReplicationData::Density { train, plant } => match method {
            Method::SPower => {
                let cfg = GammaScoreConfig::power(gamma.expect("S_power cell has gamma"))?;
                let fit = fit_enlarged(train, &cfg, opts)?;
                out.rmse = Some(density_param_rmse(fit.theta_hat.mean(), fit.theta_hat.cov()));
                out.ratio = Some(fit.contamination());
                (out.precision, out.recall) = precision_recall(&detect_outliers(train, &fit)?, plant);
            }
            Method::Mle => {
                let x = train.points();
                let n = x.nrows() as f64;
                let mean = x.row_mean().transpose();
                let mut cov = DMatrix::zeros(x.ncols(), x.ncols());
                for row in x.row_iter() {
                    let r = row.transpose() - &mean;
                    cov += &r * r.transpose() / n;
                }
                out.rmse = Some(density_param_rmse(&mean, &cov));
            }
            _ => return Err(Error::Config(format!("method {method} is not a density method"))),
        },
        ReplicationData::Regression { train, test, plant } => {
            let params = match method {
                Method::SPower => {
                    let fit = fit_enlarged_reg(train, gamma.expect("S_power cell has gamma"), opts)?;
                    out.ratio = Some(fit.contamination());
                    if let Some(plant) = plant {
                        (out.precision, out.recall) = precision_recall(&detect_outliers_reg(train, &fit)?, plant);
                    }
                    fit.theta_hat
                }
                Method::L2 => fit_baseline(train, &BaselineKind::L2, opts)?,
                Method::L1 => fit_baseline(train, &BaselineKind::L1, opts)?,
                Method::Huber => fit_baseline(train, &BaselineKind::Huber { k: spec.huber_k }, opts)?,
                Method::Lts => fit_baseline(train, &BaselineKind::Lts { trim_ratio: spec.contamination }, opts)?,
                Method::GemMc => fit_baseline(train, &BaselineKind::GemMc, opts)?,
                Method::Mle => return Err(Error::Config("MLE is a density method".into())),
            };
            out.rmse = Some(rmse(&params, test)?);
        }
    }
    Ok(out)
}

/// Fit options for one `(replication, cell)`; seeds are split per stream so
/// adding a method does not change the draws of the others.
pub fn cell_options(spec: &ExperimentSpec, rep: u64, method: Method, gamma: Option<f64>) -> FitOptions {
    FitOptions {
        seed: stream_seed(spec.seed, &[rep, label_tag(&cell_label(method, gamma))]),
        n_starts: spec.n_starts,
        ..FitOptions::default()
    }
}

/// Every cell of replication `rep`; fitting failures are recorded, not raised.
pub fn run_replication(spec: &ExperimentSpec, ctx: &ExperimentContext, rep: u64) -> Result<Vec<CellOutcome>> {
    let data = replication_data(spec, ctx, rep)?;
    Ok(spec
        .cells()
        .into_iter()
        .map(|(m, g)| {
            let opts = cell_options(spec, rep, m, g);
            run_cell(spec, &data, m, g, &opts).unwrap_or_else(|e| CellOutcome::failed(m, g, e))
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub method: String,
    pub gamma: Option<f64>,
    pub contamination: f64,
    pub rmse_mean: f64,
    pub rmse_std: f64,
    pub ratio_mean: Option<f64>,
    pub ratio_std: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub failures: usize,
    pub replications: usize,
}

/// Defaults and protocol choices echoed into every JSON summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metadata {
    pub spec: ExperimentSpec,
    pub max_iter: usize,
    pub tol: f64,
    pub n_subsets: usize,
    pub huber_k: f64,
    pub huber_scale: &'static str,
    pub lts_random_starts: usize,
    pub lts_initial_csteps: usize,
    pub lts_refined_starts: usize,
    pub lts_trim_ratio: &'static str,
    pub gemmc_scale: &'static str,
    pub l1_smoothing: &'static str,
    pub outlier_count_rule: &'static str,
    pub density_contamination_selection: &'static str,
    pub regression_contamination_selection: &'static str,
    pub xy_outlier_resampling: &'static str,
    pub synth_noise_sd: f64,
    pub csv_y_factor: f64,
    pub csv_x_factor: f64,
    pub csv_standardization: &'static str,
    pub csv_dropped_rows: Option<usize>,
    pub density_rmse_meaning: &'static str,
    pub rng: &'static str,
}

impl Metadata {
    fn new(spec: &ExperimentSpec, ctx: &ExperimentContext) -> Self {
        let fo = FitOptions::default();
        Self {
            spec: spec.clone(),
            max_iter: fo.max_iter,
            tol: fo.tol,
            n_subsets: fo.n_subsets,
            huber_k: spec.huber_k,
            huber_scale: "1.4826 * MAD of residuals, re-estimated every iteration",
            lts_random_starts: baselines::LTS_RANDOM_STARTS,
            lts_initial_csteps: baselines::LTS_INITIAL_CSTEPS,
            lts_refined_starts: baselines::LTS_REFINED,
            lts_trim_ratio: "true contamination ratio of the spec",
            gemmc_scale: "1.4826 * MAD of residuals, alternated with fixed-scale IRLS",
            l1_smoothing: "sqrt(r^2 + eps^2), eps = 1e-8 * MAD(y)",
            outlier_count_rule: "floor(n * (1 - c_hat) + 0.5)",
            density_contamination_selection: "exactly floor(ratio * n) rows, chosen uniformly",
            regression_contamination_selection: "independent Bernoulli(ratio) per row",
            xy_outlier_resampling: "each x coordinate independently from N(0, 1e4)",
            synth_noise_sd: SYNTH_NOISE_SD,
            csv_y_factor: CSV_Y_FACTOR,
            csv_x_factor: CSV_X_FACTOR,
            csv_standardization: "features standardized with training-split mean/sd before contamination",
            csv_dropped_rows: ctx.csv.as_ref().map(|c| c.dropped),
            density_rmse_meaning: "RMSE of (mu, Sigma) entries against (0, I)",
            rng: "ChaCha8, seeds split per (replication, data|method) stream",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
    pub metadata: Metadata,
}

fn opt_mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| mean(v))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.filter(|x| x.is_finite()).map(|x| x.to_string()).unwrap_or_default()
}

impl ResultTable {
    pub const CSV_HEADER: &'static str =
        "method,gamma,contamination,rmse_mean,rmse_std,ratio_mean,ratio_std,precision,recall,failures,replications";

    fn aggregate(spec: &ExperimentSpec, ctx: &ExperimentContext, per_rep: &[Vec<CellOutcome>]) -> Self {
        let rows = spec
            .cells()
            .into_iter()
            .enumerate()
            .map(|(k, (m, g))| {
                let cells: Vec<&CellOutcome> = per_rep.iter().map(|r| &r[k]).collect();
                let pick =
                    |f: fn(&CellOutcome) -> Option<f64>| -> Vec<f64> { cells.iter().filter_map(|c| f(c)).collect() };
                let rmses = pick(|c| c.rmse);
                let ratios = pick(|c| c.ratio);
                ResultRow {
                    method: m.name().to_string(),
                    gamma: g,
                    contamination: spec.contamination,
                    rmse_mean: opt_mean(&rmses).unwrap_or(f64::NAN),
                    rmse_std: if rmses.is_empty() { f64::NAN } else { std_dev(&rmses) },
                    ratio_mean: opt_mean(&ratios),
                    ratio_std: (!ratios.is_empty()).then(|| std_dev(&ratios)),
                    precision: opt_mean(&pick(|c| c.precision)),
                    recall: opt_mean(&pick(|c| c.recall)),
                    failures: cells.iter().filter(|c| c.error.is_some()).count(),
                    replications: cells.len(),
                }
            })
            .collect();
        Self { rows, metadata: Metadata::new(spec, ctx) }
    }

    pub fn row(&self, method: &str, gamma: Option<f64>) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.method == method && r.gamma == gamma)
    }

    /// True when every cell failed on every replication.
    pub fn all_failed(&self) -> bool {
        self.rows.iter().all(|r| r.failures == r.replications)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let fields = [
                r.method.clone(),
                fmt_opt(r.gamma),
                r.contamination.to_string(),
                fmt_opt(Some(r.rmse_mean)),
                fmt_opt(Some(r.rmse_std)),
                fmt_opt(r.ratio_mean),
                fmt_opt(r.ratio_std),
                fmt_opt(r.precision),
                fmt_opt(r.recall),
                r.failures.to_string(),
                r.replications.to_string(),
            ];
            out += &fields.join(",");
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("result table is serializable")
    }
}

/// Runs every replication (in parallel) and aggregates per cell.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ResultTable> {
    spec.validate()?;
    let ctx = ExperimentContext::load(spec)?;
    let per_rep: Vec<Vec<CellOutcome>> = (0..spec.replications as u64)
        .into_par_iter()
        .map(|rep| run_replication(spec, &ctx, rep))
        .collect::<Result<_>>()?;
    Ok(ResultTable::aggregate(spec, &ctx, &per_rep))
}
