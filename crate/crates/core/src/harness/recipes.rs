use std::sync::Arc;

use serde::Serialize;

use super::{for_each_path, mean, mean_and_se, monte_carlo, quantile, Cell, RunRow, Table};
use crate::algorithms::{run_episode, AlgorithmSpec, Policy, Sampling};
use crate::error::Result;
use crate::grid::Grid;
use crate::instances::{
    draw_services, make_lower_bound_instance, make_synthetic_multi, make_uniform_single, path_rng,
    ArrivalGenerator, LowerBound, Purpose, RewardSpec, Trace,
};
use crate::model::{Instance, SamplePath, ServiceMode};
use crate::offline::{dp_oracle_single_affiliate, opt_value};

/// Tables and a JSON summary produced by a recipe.
#[derive(Clone, Debug)]
pub struct RecipeOutput {
    pub name: String,
    pub tables: Vec<Table>,
    pub summary: serde_json::Value,
}

fn algo(name: &str, eta: Option<f64>, zeta: Option<f64>, k: Option<f64>) -> AlgorithmSpec {
    AlgorithmSpec {
        name: name.to_string(),
        eta,
        zeta,
        k,
        ..Default::default()
    }
}

/// Single affiliate, Uniform(0,1) rewards, capacity ratio 1/2, service slack 0.1.
pub fn example41_instance(horizon: usize) -> Result<Instance> {
    Ok(make_uniform_single(horizon, 0.5, 0.1)?.with_penalties(1.0, 0.0))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Example41Config {
    pub horizon: usize,
    pub num_paths: usize,
    pub seed: u64,
    /// Scale of the `k / sqrt(t)` step size.
    pub k: f64,
}

impl Default for Example41Config {
    fn default() -> Self {
        Example41Config {
            horizon: 2000,
            num_paths: 1000,
            seed: 0,
            k: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Example41 {
    pub config: Example41Config,
    /// Periods at which the combined price is recorded: sqrt(T), T^(2/3), T/2.
    pub snapshot_times: Vec<usize>,
    /// `phi[k][p]`: theta + lambda in force at `snapshot_times[k]` on path `p`.
    pub phi: Vec<Vec<f64>>,
    /// Mean total backlog at the end of each period.
    pub mean_backlog: Vec<f64>,
    /// Fraction of paths matching the case of each period.
    pub acceptance: Vec<f64>,
}

pub fn example41_snapshot_times(horizon: usize) -> Vec<usize> {
    let t = horizon as f64;
    [t.sqrt(), t.powf(2.0 / 3.0), 0.5 * t]
        .iter()
        .map(|v| (v.round() as usize).clamp(1, horizon))
        .collect()
}

/// Runs CO-DL on the uniform single-affiliate instance and records the
/// distribution of its price and the mean backlog over time.
pub fn recipe_example41(config: &Example41Config) -> Result<Example41> {
    let instance = example41_instance(config.horizon)?;
    let times = example41_snapshot_times(config.horizon);
    let algos = [algo("co-dl", None, None, Some(config.k))];
    let per_path = monte_carlo(&instance, &algos, config.num_paths, config.seed, false, true, |outcome| {
        let diag = outcome.episodes[0].result.diagnostics.as_ref().expect("diagnostics requested");
        let phi: Vec<f64> = times.iter().map(|&t| diag.theta[t - 1][0] + diag.lambda[t - 1][0]).collect();
        let accepted: Vec<bool> = diag.matched.iter().map(|m| m.is_some()).collect();
        (phi, diag.backlog.clone(), accepted)
    })?;
    let n = per_path.len() as f64;
    let horizon = config.horizon;
    let mut mean_backlog = vec![0.0; horizon];
    let mut acceptance = vec![0.0; horizon];
    for (_, backlog, accepted) in &per_path {
        for t in 0..horizon {
            mean_backlog[t] += backlog[t] / n;
            acceptance[t] += if accepted[t] { 1.0 / n } else { 0.0 };
        }
    }
    let phi = (0..times.len()).map(|k| per_path.iter().map(|(p, _, _)| p[k]).collect()).collect();
    Ok(Example41 {
        config: config.clone(),
        snapshot_times: times,
        phi,
        mean_backlog,
        acceptance,
    })
}

impl Example41 {
    pub fn output(&self) -> RecipeOutput {
        let mut phi = Table::new("example41_phi", &["t", "path", "phi"]);
        for (k, &t) in self.snapshot_times.iter().enumerate() {
            for (p, v) in self.phi[k].iter().enumerate() {
                phi.push(vec![t.into(), p.into(), (*v).into()]);
            }
        }
        let mut series = Table::new("example41_series", &["t", "mean_backlog", "acceptance_rate"]);
        for t in 0..self.mean_backlog.len() {
            series.push(vec![(t + 1).into(), self.mean_backlog[t].into(), self.acceptance[t].into()]);
        }
        let mut quant = Table::new("example41_quantiles", &["t", "mean", "q05", "q50", "q95"]);
        for (k, &t) in self.snapshot_times.iter().enumerate() {
            let v = &self.phi[k];
            quant.push(vec![
                t.into(),
                mean(v).into(),
                quantile(v, 0.05).into(),
                quantile(v, 0.5).into(),
                quantile(v, 0.95).into(),
            ]);
        }
        let max_backlog = self.mean_backlog.iter().copied().fold(0.0, f64::max);
        RecipeOutput {
            name: "example41".into(),
            tables: vec![quant, phi, series],
            summary: serde_json::json!({
                "config": self.config,
                "snapshot_times": self.snapshot_times,
                "max_mean_backlog": max_backlog,
            }),
        }
    }
}

/// Service-slack regimes of the near-critical experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// epsilon = 0.1
    Stable,
    /// epsilon = 0.5 / sqrt(T)
    NearCritical,
    /// epsilon = 0.5 / T
    Critical,
}

impl Regime {
    pub fn epsilon(&self, horizon: usize) -> f64 {
        let t = horizon as f64;
        match self {
            Regime::Stable => 0.1,
            Regime::NearCritical => 0.5 / t.sqrt(),
            Regime::Critical => 0.5 / t,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Stable => "stable",
            Regime::NearCritical => "near_critical",
            Regime::Critical => "critical",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NearCriticalConfig {
    pub horizons: Vec<usize>,
    pub num_paths: usize,
    pub seed: u64,
    pub regimes: Vec<Regime>,
    pub alpha: f64,
    /// Also keep the per-period acceptance series.
    pub series: bool,
}

impl Default for NearCriticalConfig {
    fn default() -> Self {
        NearCriticalConfig {
            horizons: vec![500, 1000, 2000, 4000],
            num_paths: 500,
            seed: 0,
            regimes: vec![Regime::Stable, Regime::NearCritical, Regime::Critical],
            alpha: 1.0,
            series: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NearCriticalRow {
    pub horizon: usize,
    pub regime: Regime,
    pub epsilon: f64,
    pub gamma: f64,
    pub mean_opt: f64,
    /// E[OPT - ALG] for CA-DL and CO-DL.
    pub diff_ca: f64,
    pub diff_co: f64,
    pub ratio: f64,
    pub ca_avg_backlog: f64,
    pub co_avg_backlog: f64,
    pub ca_acceptance: f64,
    pub co_acceptance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NearCritical {
    pub rows: Vec<NearCriticalRow>,
    /// (T, regime, algorithm, mean acceptance per period).
    #[serde(skip)]
    pub series: Vec<(usize, Regime, String, Vec<f64>)>,
}

/// Compares CA-DL and CO-DL on the uniform instance with `gamma = sqrt(T)`
/// across slack regimes.
pub fn recipe_near_critical_ratio(config: &NearCriticalConfig) -> Result<NearCritical> {
    let mut rows = Vec::new();
    let mut series = Vec::new();
    for &horizon in &config.horizons {
        for &regime in &config.regimes {
            let t = horizon as f64;
            let gamma = t.sqrt();
            let epsilon = regime.epsilon(horizon);
            let instance = make_uniform_single(horizon, 0.5, epsilon)?.with_penalties(config.alpha, gamma);
            let zeta = match regime {
                Regime::Stable => 10.0 / t.sqrt(),
                _ => (gamma / t).sqrt(),
            };
            let algos = [algo("ca-dl", Some(1.0 / t.sqrt()), Some(zeta), None), algo("co-dl", None, None, Some(1.0))];
            let keep_series = config.series;
            let per_path = monte_carlo(&instance, &algos, config.num_paths, config.seed, true, false, |outcome| {
                let opt = outcome.opt.expect("optimum requested");
                let stats: Vec<(f64, f64, f64)> = outcome
                    .episodes
                    .iter()
                    .map(|ep| {
                        let accepted = ep.decisions.iter().filter(|d| d.matched().is_some()).count() as f64;
                        (ep.result.objective, ep.result.avg_backlog, accepted / horizon as f64)
                    })
                    .collect();
                let z: Vec<Vec<bool>> = if keep_series {
                    outcome
                        .episodes
                        .iter()
                        .map(|ep| ep.decisions.iter().map(|d| d.matched().is_some()).collect())
                        .collect()
                } else {
                    Vec::new()
                };
                (opt, stats, z)
            })?;
            let column = |k: usize, f: fn(&(f64, f64, f64)) -> f64| -> Vec<f64> {
                per_path.iter().map(|(_, s, _)| f(&s[k])).collect()
            };
            let opts: Vec<f64> = per_path.iter().map(|(o, _, _)| *o).collect();
            let diff = |k: usize| mean(&opts.iter().zip(column(k, |s| s.0)).map(|(o, a)| o - a).collect::<Vec<_>>());
            let (diff_ca, diff_co) = (diff(0), diff(1));
            rows.push(NearCriticalRow {
                horizon,
                regime,
                epsilon,
                gamma,
                mean_opt: mean(&opts),
                diff_ca,
                diff_co,
                ratio: diff_co / diff_ca,
                ca_avg_backlog: mean(&column(0, |s| s.1)),
                co_avg_backlog: mean(&column(1, |s| s.1)),
                ca_acceptance: mean(&column(0, |s| s.2)),
                co_acceptance: mean(&column(1, |s| s.2)),
            });
            if keep_series {
                for (k, name) in ["ca-dl", "co-dl"].iter().enumerate() {
                    let n = per_path.len() as f64;
                    let mut rate = vec![0.0; horizon];
                    for (_, _, z) in &per_path {
                        for (t, &hit) in z[k].iter().enumerate() {
                            if hit {
                                rate[t] += 1.0 / n;
                            }
                        }
                    }
                    series.push((horizon, regime, name.to_string(), rate));
                }
            }
        }
    }
    Ok(NearCritical { rows, series })
}

impl NearCritical {
    pub fn row(&self, horizon: usize, regime: Regime) -> Option<&NearCriticalRow> {
        self.rows.iter().find(|r| r.horizon == horizon && r.regime == regime)
    }

    pub fn output(&self) -> RecipeOutput {
        let mut ratio = Table::new(
            "near_critical_ratio",
            &[
                "T",
                "regime",
                "epsilon",
                "gamma",
                "mean_opt",
                "diff_ca",
                "diff_co",
                "ratio",
                "ca_avg_backlog",
                "co_avg_backlog",
                "ca_acceptance",
                "co_acceptance",
            ],
        );
        for r in &self.rows {
            ratio.push(vec![
                r.horizon.into(),
                r.regime.as_str().into(),
                r.epsilon.into(),
                r.gamma.into(),
                r.mean_opt.into(),
                r.diff_ca.into(),
                r.diff_co.into(),
                r.ratio.into(),
                r.ca_avg_backlog.into(),
                r.co_avg_backlog.into(),
                r.ca_acceptance.into(),
                r.co_acceptance.into(),
            ]);
        }
        let mut accept = Table::new("near_critical_acceptance", &["T", "regime", "algo", "t", "mean_z"]);
        for (horizon, regime, name, rate) in &self.series {
            for (t, v) in rate.iter().enumerate() {
                accept.push(vec![
                    (*horizon).into(),
                    regime.as_str().into(),
                    name.as_str().into(),
                    (t + 1).into(),
                    (*v).into(),
                ]);
            }
        }
        RecipeOutput {
            name: "near_critical_ratio".into(),
            tables: vec![ratio, accept],
            summary: serde_json::to_value(&self.rows).unwrap_or_default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImpossibilityConfig {
    pub horizon: usize,
    pub gamma: f64,
    pub epsilon: f64,
    pub num_paths: usize,
    pub seed: u64,
}

impl Default for ImpossibilityConfig {
    fn default() -> Self {
        ImpossibilityConfig {
            horizon: 2500,
            gamma: 0.0,
            epsilon: 0.1,
            num_paths: 1000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImpossibilityPath {
    pub path: u64,
    pub opt: f64,
    /// `min(S_T, T/2)`: matching only in periods whose server is available.
    pub service_following: f64,
    pub cadl_objective: f64,
    pub cadl_acceptances: f64,
    pub cadl_total_backlog: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Impossibility {
    pub config: ImpossibilityConfig,
    pub paths: Vec<ImpossibilityPath>,
}

/// Every case free with reward one: the optimum follows the server, an
/// online policy cannot.
pub fn recipe_impossibility(config: &ImpossibilityConfig) -> Result<Impossibility> {
    let instance = make_lower_bound_instance(LowerBound::AllOnes, config.horizon, config.epsilon)?.with_penalties(1.0, config.gamma);
    let cap = instance.capacity(0, 0);
    let paths = monte_carlo(&instance, &[AlgorithmSpec::named("ca-dl")], config.num_paths, config.seed, true, false, |o| {
        let served = o.sample.services.iter().filter(|s| s.get(0, 0) >= 1.0).count() as f64;
        let ep = &o.episodes[0];
        ImpossibilityPath {
            path: o.path,
            opt: o.opt.expect("optimum requested"),
            service_following: served.min(cap),
            cadl_objective: ep.result.objective,
            cadl_acceptances: ep.result.total_reward,
            cadl_total_backlog: ep.result.avg_backlog * config.horizon as f64,
        }
    })?;
    Ok(Impossibility {
        config: config.clone(),
        paths,
    })
}

impl Impossibility {
    pub fn mean_of(&self, f: fn(&ImpossibilityPath) -> f64) -> f64 {
        mean(&self.paths.iter().map(f).collect::<Vec<_>>())
    }

    pub fn output(&self) -> RecipeOutput {
        let mut t = Table::new(
            "impossibility",
            &["path", "opt", "service_following", "cadl_objective", "cadl_acceptances", "cadl_total_backlog"],
        );
        for p in &self.paths {
            t.push(vec![
                p.path.into(),
                p.opt.into(),
                p.service_following.into(),
                p.cadl_objective.into(),
                p.cadl_acceptances.into(),
                p.cadl_total_backlog.into(),
            ]);
        }
        RecipeOutput {
            name: "impossibility".into(),
            tables: vec![t],
            summary: serde_json::json!({
                "config": self.config,
                "mean_opt": self.mean_of(|p| p.opt),
                "mean_service_following": self.mean_of(|p| p.service_following),
                "mean_cadl_acceptances": self.mean_of(|p| p.cadl_acceptances),
                "mean_cadl_total_backlog": self.mean_of(|p| p.cadl_total_backlog),
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DpGapRow {
    pub horizon: usize,
    pub gamma: f64,
    pub value: f64,
    /// T/2 - value.
    pub gap: f64,
    pub non_threshold_periods: usize,
}

pub fn recipe_dp_gap(horizons: &[usize], gammas: &[f64]) -> Result<Vec<DpGapRow>> {
    let mut rows = Vec::new();
    for &horizon in horizons {
        for &gamma in gammas {
            let dp = dp_oracle_single_affiliate(horizon, gamma)?;
            rows.push(DpGapRow {
                horizon,
                gamma,
                value: dp.value,
                gap: 0.5 * horizon as f64 - dp.value,
                non_threshold_periods: dp.non_threshold_periods.len(),
            });
        }
    }
    Ok(rows)
}

pub fn dp_gap_output(rows: &[DpGapRow]) -> RecipeOutput {
    let mut t = Table::new("dp_gap", &["T", "gamma", "dp_value", "gap", "non_threshold_periods"]);
    for r in rows {
        t.push(vec![
            r.horizon.into(),
            r.gamma.into(),
            r.value.into(),
            r.gap.into(),
            r.non_threshold_periods.into(),
        ]);
    }
    RecipeOutput {
        name: "dp_gap".into(),
        tables: vec![t],
        summary: serde_json::to_value(rows).unwrap_or_default(),
    }
}

/// Three affiliates whose arrival mix changes at `switch_at`: before it the
/// first affiliate draws the best rewards and few tied cases, after it the
/// third affiliate is the attractive one and the first receives many tied
/// cases.
#[derive(Clone, Debug)]
pub struct ShiftScenario {
    pub instance: Instance,
    pub before: ArrivalGenerator,
    pub after: ArrivalGenerator,
    pub switch_at: usize,
}

pub const SHIFT_RHO: [f64; 3] = [0.25, 0.35, 0.4];

fn shift_generators() -> (ArrivalGenerator, ArrivalGenerator) {
    let before = ArrivalGenerator::Synthetic {
        tied_probs: vec![0.05, 0.1, 0.1],
        rewards: RewardSpec::Uniform {
            low: vec![0.4, 0.1, 0.0],
            high: vec![1.0, 0.6, 0.5],
        },
    };
    let after = ArrivalGenerator::Synthetic {
        tied_probs: vec![0.2, 0.05, 0.05],
        rewards: RewardSpec::Uniform {
            low: vec![0.0, 0.1, 0.4],
            high: vec![0.5, 0.6, 1.0],
        },
    };
    (before, after)
}

impl ShiftScenario {
    /// Deterministic service at the capacity ratios, penalties alpha = 3, gamma = 5.
    pub fn new(horizon: usize, switch_at: usize) -> Result<Self> {
        let (before, after) = shift_generators();
        let ArrivalGenerator::Synthetic { tied_probs, rewards } = &before else {
            unreachable!()
        };
        let instance = make_synthetic_multi(3, horizon, tied_probs, rewards.clone(), &SHIFT_RHO, 0.0)?
            .with_penalties(3.0, 5.0)
            .with_service(ServiceMode::Deterministic);
        Ok(ShiftScenario {
            instance,
            before,
            after,
            switch_at,
        })
    }

    pub fn path(&self, seed: u64, path: u64) -> SamplePath {
        let horizon = self.instance.horizon;
        let arrivals = (0..horizon)
            .map(|t| {
                let source = if t < self.switch_at { &self.before } else { &self.after };
                source.arrival_at(seed, path, t)
            })
            .collect();
        let services: Vec<Grid> = (0..horizon).map(|t| draw_services(&self.instance, seed, path, t)).collect();
        SamplePath { arrivals, services }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BatchTableConfig {
    pub horizon: usize,
    pub num_paths: usize,
    pub seed: u64,
    pub batch: usize,
    pub iterations: usize,
}

impl Default for BatchTableConfig {
    fn default() -> Self {
        BatchTableConfig {
            horizon: 600,
            num_paths: 20,
            seed: 0,
            batch: 30,
            iterations: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AlgoSummary {
    pub algo: String,
    pub paths: usize,
    pub reward: f64,
    pub overalloc: f64,
    pub avg_backlog: f64,
    pub objective: f64,
    pub objective_se: f64,
}

fn summarize(names: &[String], rows: &[RunRow]) -> Vec<AlgoSummary> {
    names
        .iter()
        .map(|name| {
            let mine: Vec<&RunRow> = rows.iter().filter(|r| &r.algo == name).collect();
            let avg = |f: fn(&RunRow) -> f64| mean(&mine.iter().map(|r| f(r)).collect::<Vec<_>>());
            let (objective, objective_se) = mean_and_se(&mine.iter().map(|r| r.objective).collect::<Vec<_>>());
            AlgoSummary {
                algo: name.clone(),
                paths: mine.len(),
                reward: avg(|r| r.reward),
                overalloc: avg(|r| r.overalloc),
                avg_backlog: avg(|r| r.avg_backlog),
                objective,
                objective_se,
            }
        })
        .collect()
}

fn summary_table(name: &str, summary: &[AlgoSummary]) -> Table {
    let mut t = Table::new(name, &["algo", "paths", "reward", "overalloc", "avg_backlog", "objective", "objective_se"]);
    for s in summary {
        t.push(vec![
            s.algo.as_str().into(),
            s.paths.into(),
            s.reward.into(),
            s.overalloc.into(),
            s.avg_backlog.into(),
            s.objective.into(),
            s.objective_se.into(),
        ]);
    }
    t
}

fn rows_table(name: &str, rows: &[RunRow]) -> Table {
    let mut t = super::results_table(rows);
    t.name = name.to_string();
    t
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BatchTable {
    pub config: BatchTableConfig,
    pub rows: Vec<RunRow>,
    pub summary: Vec<AlgoSummary>,
}

/// RO-Learning against its two batched variants on the shift scenario.
pub fn recipe_batch_table(config: &BatchTableConfig) -> Result<BatchTable> {
    let scenario = ShiftScenario::new(config.horizon, config.horizon / 2)?;
    let specs = [
        AlgorithmSpec::named("ro-learning"),
        AlgorithmSpec {
            batch: Some(config.batch),
            ..AlgorithmSpec::named("ro-learning-b")
        },
        AlgorithmSpec {
            batch: Some(config.batch),
            iterations: Some(config.iterations),
            ..AlgorithmSpec::named("ro-learning-b-iterate")
        },
    ];
    let names: Vec<String> = specs.iter().map(|s| s.name.clone()).collect();
    let per_path = for_each_path(config.seed, config.num_paths, |p| {
        let sample = scenario.path(config.seed, p);
        specs
            .iter()
            .map(|spec| {
                let mut policy = spec.build(&scenario.instance)?;
                let ep = run_episode(policy.as_mut(), &scenario.instance, &sample, config.seed, p, false)?;
                Ok(super::row(p, &spec.name, &ep))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let rows: Vec<RunRow> = per_path.into_iter().flatten().collect();
    Ok(BatchTable {
        config: config.clone(),
        summary: summarize(&names, &rows),
        rows,
    })
}

impl BatchTable {
    pub fn objective(&self, algo: &str) -> Option<f64> {
        self.summary.iter().find(|s| s.algo == algo).map(|s| s.objective)
    }

    pub fn output(&self) -> RecipeOutput {
        RecipeOutput {
            name: "batch_table".into(),
            tables: vec![summary_table("batch_table", &self.summary), rows_table("batch_table_paths", &self.rows)],
            summary: serde_json::json!({ "config": self.config, "algorithms": self.summary }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ShiftRobustnessConfig {
    pub horizon: usize,
    pub num_paths: usize,
    pub seed: u64,
    pub replications: usize,
}

impl Default for ShiftRobustnessConfig {
    fn default() -> Self {
        ShiftRobustnessConfig {
            horizon: 120,
            num_paths: 5,
            seed: 0,
            replications: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ShiftRobustness {
    pub config: ShiftRobustnessConfig,
    pub rows: Vec<RunRow>,
    pub summary: Vec<AlgoSummary>,
    pub mean_opt: f64,
}

fn pool_from(generator: &ArrivalGenerator, size: usize, seed: u64) -> Trace {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::from_rng(&mut path_rng(seed, 0, Purpose::Pool));
    let arrivals = (0..size).map(|_| generator.sample(&mut rng)).collect();
    Trace { arrivals, services: None }
}

/// Sampling with a pool from the previous regime against Sampling with a
/// pool from the current one and RO-Learning, all run on the current regime.
pub fn recipe_shift_robustness(config: &ShiftRobustnessConfig) -> Result<ShiftRobustness> {
    let scenario = ShiftScenario::new(config.horizon, 0)?;
    let stale = Arc::new(pool_from(&scenario.before, config.horizon, config.seed));
    let fresh = Arc::new(pool_from(&scenario.after, config.horizon, config.seed ^ 1));
    let names: Vec<String> = ["sampling-stale-pool", "sampling-current-pool", "ro-learning"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let per_path = for_each_path(config.seed, config.num_paths, |p| {
        let sample = scenario.path(config.seed, p);
        let inst = &scenario.instance;
        let mut policies: Vec<Box<dyn Policy>> = vec![
            Box::new(Sampling::new(stale.clone(), config.replications)),
            Box::new(Sampling::new(fresh.clone(), config.replications)),
            AlgorithmSpec::named("ro-learning").build(inst)?,
        ];
        let rows = policies
            .iter_mut()
            .zip(&names)
            .map(|(policy, name)| {
                let ep = run_episode(policy.as_mut(), inst, &sample, config.seed, p, false)?;
                Ok(super::row(p, name, &ep))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((opt_value(inst, &sample)?, rows))
    })?;
    let mean_opt = mean(&per_path.iter().map(|(o, _)| *o).collect::<Vec<_>>());
    let rows: Vec<RunRow> = per_path.into_iter().flat_map(|(_, r)| r).collect();
    Ok(ShiftRobustness {
        config: config.clone(),
        summary: summarize(&names, &rows),
        rows,
        mean_opt,
    })
}

impl ShiftRobustness {
    pub fn output(&self) -> RecipeOutput {
        let mut summary = summary_table("shift_robustness", &self.summary);
        summary.header.push("mean_opt".into());
        for row in &mut summary.rows {
            row.push(Cell::Float(self.mean_opt));
        }
        RecipeOutput {
            name: "shift_robustness".into(),
            tables: vec![summary, rows_table("shift_robustness_paths", &self.rows)],
            summary: serde_json::json!({ "config": self.config, "algorithms": self.summary, "mean_opt": self.mean_opt }),
        }
    }
}
