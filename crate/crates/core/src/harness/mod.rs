//! Experiment orchestration: Monte-Carlo runs over seeded paths with common
//! random numbers, regret estimates, sweeps, canonical recipes and output
//! tables.

mod recipes;

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use recipes::*;

use crate::algorithms::{run_episode, AlgorithmSpec, Episode};
use crate::error::{Error, Result};
use crate::instances::{generate_path, validate_instance, ArrivalGenerator};
use crate::model::{Diagnostics, Instance, SamplePath};
use crate::offline::opt_value;

/// Environment variable capping the worker pool.
pub const THREADS_ENV: &str = "DUALMATCH_THREADS";

/// Shared worker pool, sized by `DUALMATCH_THREADS` when set.
pub fn worker_pool() -> &'static rayon::ThreadPool {
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let threads = std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .filter(|&n| n > 0)
            .unwrap_or(0);
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("worker pool")
    })
}

/// Evaluates `job` on paths `0..num_paths` in the worker pool. Results come
/// back in path order; failures carry the seed and path.
pub fn for_each_path<T, F>(seed: u64, num_paths: usize, job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    worker_pool().install(|| {
        (0..num_paths as u64)
            .into_par_iter()
            .map(|p| job(p).map_err(|e| e.at_path(seed, p)))
            .collect()
    })
}

/// What to write and how much of it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputSpec {
    #[serde(default)]
    pub dir: Option<PathBuf>,
    /// Per-path rows when true, only per-algorithm aggregates otherwise.
    #[serde(default = "yes")]
    pub per_path: bool,
    #[serde(default)]
    pub diagnostics: bool,
}

fn yes() -> bool {
    true
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            dir: None,
            per_path: true,
            diagnostics: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecipeName {
    Example41,
    NearCriticalRatio,
    Impossibility,
    BatchTable,
    ShiftRobustness,
    DpGap,
}

impl RecipeName {
    pub const ALL: [RecipeName; 6] = [
        RecipeName::Example41,
        RecipeName::NearCriticalRatio,
        RecipeName::Impossibility,
        RecipeName::BatchTable,
        RecipeName::ShiftRobustness,
        RecipeName::DpGap,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            RecipeName::Example41 => "example41",
            RecipeName::NearCriticalRatio => "near_critical_ratio",
            RecipeName::Impossibility => "impossibility",
            RecipeName::BatchTable => "batch_table",
            RecipeName::ShiftRobustness => "shift_robustness",
            RecipeName::DpGap => "dp_gap",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|r| r.as_str() == name.replace('-', "_"))
            .ok_or_else(|| {
                let names: Vec<&str> = Self::ALL.iter().map(|r| r.as_str()).collect();
                Error::InvalidParameter(format!("unknown recipe {name:?}; expected one of {}", names.join(", ")))
            })
    }
}

fn one() -> usize {
    1
}

/// A full experiment description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub instance: Instance,
    pub algorithms: Vec<AlgorithmSpec>,
    #[serde(default = "one")]
    pub num_paths: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub outputs: OutputSpec,
    #[serde(default)]
    pub recipe: Option<RecipeName>,
}

impl ExperimentConfig {
    pub fn new(instance: Instance, algorithms: Vec<AlgorithmSpec>, num_paths: usize, seed: u64) -> Self {
        ExperimentConfig {
            instance,
            algorithms,
            num_paths,
            seed,
            outputs: OutputSpec::default(),
            recipe: None,
        }
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Rejects configurations that cannot run: invalid instances, no paths,
    /// unknown algorithms.
    pub fn check(&self) -> Result<()> {
        if self.num_paths == 0 {
            return Err(Error::InvalidParameter("num_paths must be at least 1".into()));
        }
        let report = validate_instance(&self.instance);
        if !report.is_ok() {
            return Err(Error::InvalidParameter(report.errors.join("; ")));
        }
        for spec in &self.algorithms {
            spec.check()?;
        }
        Ok(())
    }
}

/// One row of the results table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunRow {
    pub path: u64,
    pub algo: String,
    pub reward: f64,
    pub overalloc: f64,
    pub avg_backlog: f64,
    pub objective: f64,
    pub stopping_time: usize,
}

/// One row of the regret table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegretRow {
    pub path: u64,
    pub opt: f64,
    pub algo: String,
    pub alg_value: f64,
    pub regret: f64,
}

/// Paired OPT - ALG statistics of one algorithm.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegretEstimate {
    pub algo: String,
    pub mean_opt: f64,
    pub mean_alg: f64,
    pub mean_regret: f64,
    pub std_error: f64,
    pub per_path: Vec<RegretRow>,
}

/// Mean and standard error of the mean.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

pub fn mean(values: &[f64]) -> f64 {
    mean_and_se(values).0
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Everything produced by one path: the optimum when requested and one
/// episode per algorithm, in configuration order.
pub struct PathOutcome {
    pub path: u64,
    pub sample: SamplePath,
    pub opt: Option<f64>,
    pub episodes: Vec<Episode>,
}

/// Runs every algorithm on the same seeded paths and hands each path's
/// outcome to `reduce` inside the worker, so only reduced values are kept.
pub fn monte_carlo<T, R>(
    instance: &Instance,
    algorithms: &[AlgorithmSpec],
    num_paths: usize,
    seed: u64,
    with_opt: bool,
    diagnostics: bool,
    reduce: R,
) -> Result<Vec<T>>
where
    T: Send,
    R: Fn(PathOutcome) -> T + Sync + Send,
{
    let generator = ArrivalGenerator::from_instance(instance)?;
    for spec in algorithms {
        spec.check()?;
    }
    for_each_path(seed, num_paths, |p| {
        let sample = generate_path(instance, &generator, seed, p)?;
        run_on_path(instance, algorithms, sample, seed, p, with_opt, diagnostics).map(&reduce)
    })
}

/// Runs the algorithms on a given path.
pub fn run_on_path(
    instance: &Instance,
    algorithms: &[AlgorithmSpec],
    sample: SamplePath,
    seed: u64,
    path: u64,
    with_opt: bool,
    diagnostics: bool,
) -> Result<PathOutcome> {
    let opt = if with_opt { Some(opt_value(instance, &sample)?) } else { None };
    let episodes = algorithms
        .iter()
        .map(|spec| {
            let mut policy = spec.build(instance)?;
            run_episode(policy.as_mut(), instance, &sample, seed, path, diagnostics)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PathOutcome {
        path,
        sample,
        opt,
        episodes,
    })
}

/// Results of [`run_experiment`].
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ExperimentOutput {
    pub runs: Vec<RunRow>,
    pub regret: Vec<RegretEstimate>,
    /// (path, algorithm, series) when diagnostics were requested.
    #[serde(skip)]
    pub diagnostics: Vec<(u64, String, Diagnostics)>,
}

fn row(path: u64, algo: &str, ep: &Episode) -> RunRow {
    let r = &ep.result;
    RunRow {
        path,
        algo: algo.to_string(),
        reward: r.total_reward,
        overalloc: r.over_allocation,
        avg_backlog: r.avg_backlog,
        objective: r.objective,
        stopping_time: r.stopping_time,
    }
}

/// Runs the configured algorithms on every path; with `with_opt` the offline
/// optimum is solved on each path and regret aggregated per algorithm.
pub fn run_experiment(config: &ExperimentConfig, with_opt: bool) -> Result<ExperimentOutput> {
    config.check()?;
    let names: Vec<String> = config.algorithms.iter().map(|a| a.name.clone()).collect();
    let keep_diag = config.outputs.diagnostics;
    let per_path = monte_carlo(
        &config.instance,
        &config.algorithms,
        config.num_paths,
        config.seed,
        with_opt,
        keep_diag,
        |outcome| {
            let rows: Vec<RunRow> = outcome.episodes.iter().zip(&names).map(|(ep, n)| row(outcome.path, n, ep)).collect();
            let diag: Vec<(u64, String, Diagnostics)> = outcome
                .episodes
                .into_iter()
                .zip(&names)
                .filter_map(|(ep, n)| ep.result.diagnostics.map(|d| (outcome.path, n.clone(), d)))
                .collect();
            (outcome.opt, rows, diag)
        },
    )?;
    let mut out = ExperimentOutput::default();
    for (_, rows, diag) in &per_path {
        out.runs.extend(rows.iter().cloned());
        out.diagnostics.extend(diag.iter().cloned());
    }
    if with_opt {
        for (k, name) in names.iter().enumerate() {
            let per: Vec<RegretRow> = per_path
                .iter()
                .map(|(opt, rows, _)| {
                    let opt = opt.expect("optimum requested");
                    let alg = rows[k].objective;
                    RegretRow {
                        path: rows[k].path,
                        opt,
                        algo: name.clone(),
                        alg_value: alg,
                        regret: opt - alg,
                    }
                })
                .collect();
            let regrets: Vec<f64> = per.iter().map(|r| r.regret).collect();
            let (mean_regret, std_error) = mean_and_se(&regrets);
            out.regret.push(RegretEstimate {
                algo: name.clone(),
                mean_opt: mean(&per.iter().map(|r| r.opt).collect::<Vec<_>>()),
                mean_alg: mean(&per.iter().map(|r| r.alg_value).collect::<Vec<_>>()),
                mean_regret,
                std_error,
                per_path: per,
            });
        }
    }
    Ok(out)
}

/// Regret estimate for every configured algorithm.
pub fn estimate_regret(config: &ExperimentConfig) -> Result<Vec<RegretEstimate>> {
    Ok(run_experiment(config, true)?.regret)
}

/// A named table of plain values.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
    Empty,
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl<T: Into<Cell>> From<Option<T>> for Cell {
    fn from(v: Option<T>) -> Self {
        v.map_or(Cell::Empty, Into::into)
    }
}

impl std::fmt::Display for Cell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Cell::Int(v) => write!(f, "{v}"),
            Cell::Float(v) => write!(f, "{v}"),
            Cell::Text(s) => f.write_str(s),
            Cell::Empty => Ok(()),
        }
    }
}

impl Cell {
    fn to_json(&self) -> serde_json::Value {
        match self {
            Cell::Int(v) => (*v).into(),
            Cell::Float(v) => serde_json::Number::from_f64(*v).map_or(serde_json::Value::Null, Into::into),
            Cell::Text(s) => s.clone().into(),
            Cell::Empty => serde_json::Value::Null,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Table {
            name: name.to_string(),
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len(), "table {}", self.name);
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|c| c.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        self.rows
            .iter()
            .map(|row| {
                let obj: serde_json::Map<String, serde_json::Value> =
                    self.header.iter().cloned().zip(row.iter().map(Cell::to_json)).collect();
                serde_json::Value::Object(obj)
            })
            .collect()
    }

    /// Writes `<dir>/<name>.csv` or `<dir>/<name>.json`; returns the file path.
    pub fn save(&self, dir: &Path, format: Format) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        match format {
            Format::Csv => {
                let path = dir.join(format!("{}.csv", self.name));
                self.write_csv(std::fs::File::create(&path)?)?;
                Ok(path)
            }
            Format::Json => {
                let path = dir.join(format!("{}.json", self.name));
                std::fs::write(&path, serde_json::to_string_pretty(&self.to_json())?)?;
                Ok(path)
            }
        }
    }
}

pub const RESULTS_HEADER: &[&str] = &["path", "algo", "reward", "overalloc", "avg_backlog", "objective", "stopping_time"];
pub const REGRET_HEADER: &[&str] = &["path", "opt", "algo", "alg_value", "regret"];

pub fn results_table(rows: &[RunRow]) -> Table {
    let mut t = Table::new("results", RESULTS_HEADER);
    for r in rows {
        t.push(vec![
            r.path.into(),
            r.algo.as_str().into(),
            r.reward.into(),
            r.overalloc.into(),
            r.avg_backlog.into(),
            r.objective.into(),
            r.stopping_time.into(),
        ]);
    }
    t
}

pub fn regret_table(estimates: &[RegretEstimate]) -> Table {
    let mut t = Table::new("regret", REGRET_HEADER);
    let mut rows: Vec<&RegretRow> = estimates.iter().flat_map(|e| &e.per_path).collect();
    rows.sort_by_key(|r| r.path);
    for r in rows {
        t.push(vec![r.path.into(), r.opt.into(), r.algo.as_str().into(), r.alg_value.into(), r.regret.into()]);
    }
    t
}

pub fn regret_summary_table(estimates: &[RegretEstimate]) -> Table {
    let mut t = Table::new("regret_summary", &["algo", "mean_opt", "mean_alg", "mean_regret", "std_error", "paths"]);
    for e in estimates {
        t.push(vec![
            e.algo.as_str().into(),
            e.mean_opt.into(),
            e.mean_alg.into(),
            e.mean_regret.into(),
            e.std_error.into(),
            e.per_path.len().into(),
        ]);
    }
    t
}

/// Per-algorithm means of the results table.
pub fn aggregate_table(rows: &[RunRow]) -> Table {
    let mut t = Table::new(
        "aggregate",
        &["algo", "paths", "reward", "overalloc", "avg_backlog", "objective", "objective_se"],
    );
    let mut names: Vec<&str> = Vec::new();
    for r in rows {
        if !names.contains(&r.algo.as_str()) {
            names.push(&r.algo);
        }
    }
    for name in names {
        let mine: Vec<&RunRow> = rows.iter().filter(|r| r.algo == name).collect();
        let pick = |f: fn(&RunRow) -> f64| mean(&mine.iter().map(|r| f(r)).collect::<Vec<_>>());
        let (obj, se) = mean_and_se(&mine.iter().map(|r| r.objective).collect::<Vec<_>>());
        t.push(vec![
            name.into(),
            mine.len().into(),
            pick(|r| r.reward).into(),
            pick(|r| r.overalloc).into(),
            pick(|r| r.avg_backlog).into(),
            obj.into(),
            se.into(),
        ]);
    }
    t
}

/// Per-period diagnostics in long format.
pub fn diagnostics_table(series: &[(u64, String, Diagnostics)]) -> Table {
    let mut t = Table::new(
        "diagnostics",
        &["path", "algo", "t", "backlog", "theta", "lambda", "drift", "pseudo_reward", "matched"],
    );
    for (path, algo, d) in series {
        for k in 0..d.backlog.len() {
            t.push(vec![
                (*path).into(),
                algo.as_str().into(),
                (k + 1).into(),
                d.backlog[k].into(),
                d.theta.get(k).map(|v| v.iter().sum::<f64>()).into(),
                d.lambda.get(k).map(|v| v.iter().sum::<f64>()).into(),
                d.drift.get(k).copied().into(),
                d.pseudo_reward.get(k).copied().into(),
                d.matched.get(k).copied().flatten().map(|i| i + 1).into(),
            ]);
        }
    }
    t
}

/// Parameter grid of a sweep. Empty axes keep the configured value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    #[serde(default)]
    pub alpha: Vec<f64>,
    #[serde(default)]
    pub gamma: Vec<f64>,
    #[serde(default)]
    pub epsilon: Vec<f64>,
    #[serde(default)]
    pub horizon: Vec<usize>,
    /// Multiplies every step size (eta, or k for the inverse-sqrt schedules).
    #[serde(default)]
    pub eta_scale: Vec<f64>,
    /// Multiplies the backlog weight zeta.
    #[serde(default)]
    pub zeta_scale: Vec<f64>,
}

/// One grid point of a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub horizon: usize,
    pub eta_scale: f64,
    pub zeta_scale: f64,
}

impl SweepGrid {
    pub fn points(&self, base: &Instance) -> Vec<SweepPoint> {
        fn axis<T: Copy>(values: &[T], default: T) -> Vec<T> {
            if values.is_empty() {
                vec![default]
            } else {
                values.to_vec()
            }
        }
        let mut out = Vec::new();
        for &alpha in &axis(&self.alpha, base.alpha) {
            for &gamma in &axis(&self.gamma, base.gamma) {
                for &epsilon in &axis(&self.epsilon, base.epsilon) {
                    for &horizon in &axis(&self.horizon, base.horizon) {
                        for &eta_scale in &axis(&self.eta_scale, 1.0) {
                            for &zeta_scale in &axis(&self.zeta_scale, 1.0) {
                                out.push(SweepPoint {
                                    alpha,
                                    gamma,
                                    epsilon,
                                    horizon,
                                    eta_scale,
                                    zeta_scale,
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// Applies a grid point: penalties, slack and horizon on the instance,
/// scaled step sizes on each algorithm (defaults resolved first).
pub fn apply_point(config: &ExperimentConfig, point: &SweepPoint) -> ExperimentConfig {
    let mut next = config.clone();
    let inst = &mut next.instance;
    inst.alpha = point.alpha;
    inst.gamma = point.gamma;
    inst.epsilon = point.epsilon;
    inst.horizon = point.horizon;
    let resolved = next.instance.clone();
    for spec in &mut next.algorithms {
        let (eta, zeta) = crate::algorithms::default_steps(&resolved);
        spec.eta = Some(spec.eta.unwrap_or(eta) * point.eta_scale);
        spec.k = Some(spec.k.unwrap_or(1.0) * point.eta_scale);
        spec.zeta = Some(spec.zeta.unwrap_or(zeta) * point.zeta_scale);
    }
    next
}

/// Runs the configuration at every grid point and returns one aggregate row
/// per (point, algorithm).
pub fn sweep(config: &ExperimentConfig, grid: &SweepGrid, with_opt: bool) -> Result<Table> {
    let mut table = Table::new(
        "sweep",
        &[
            "alpha",
            "gamma",
            "epsilon",
            "T",
            "eta_scale",
            "zeta_scale",
            "algo",
            "paths",
            "reward",
            "overalloc",
            "avg_backlog",
            "objective",
            "mean_opt",
            "mean_regret",
        ],
    );
    for point in grid.points(&config.instance) {
        let cfg = apply_point(config, &point);
        let out = run_experiment(&cfg, with_opt)?;
        for (k, spec) in cfg.algorithms.iter().enumerate() {
            let mine: Vec<&RunRow> = out.runs.iter().filter(|r| r.algo == spec.name).collect();
            let avg = |f: fn(&RunRow) -> f64| mean(&mine.iter().map(|r| f(r)).collect::<Vec<_>>());
            let regret = out.regret.get(k);
            table.push(vec![
                point.alpha.into(),
                point.gamma.into(),
                point.epsilon.into(),
                point.horizon.into(),
                point.eta_scale.into(),
                point.zeta_scale.into(),
                spec.name.as_str().into(),
                mine.len().into(),
                avg(|r| r.reward).into(),
                avg(|r| r.overalloc).into(),
                avg(|r| r.avg_backlog).into(),
                avg(|r| r.objective).into(),
                regret.map(|r| r.mean_opt).into(),
                regret.map(|r| r.mean_regret).into(),
            ]);
        }
    }
    Ok(table)
}
