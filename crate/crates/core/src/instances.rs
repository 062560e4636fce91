//! Arrival generators, canonical and synthetic instances, trace files and
//! instance validation.
//!
//! Randomness is drawn from counter-based streams keyed by
//! (seed, path, purpose, period), so arrivals, services and algorithm
//! coin flips never share a stream and any single period can be regenerated
//! on its own.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::model::{ArrivalType, Instance, SamplePath, ServiceMode};

/// Independent randomness streams of an experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Purpose {
    Arrival = 1,
    Service = 2,
    Algorithm = 3,
    Pool = 4,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Generator keyed by (seed, path, purpose); individual periods are separate
/// ChaCha streams of it.
pub fn path_rng(seed: u64, path: u64, purpose: Purpose) -> ChaCha8Rng {
    let key = splitmix(splitmix(seed) ^ splitmix(path.wrapping_add(0x5851_F42D_4C95_7F2D)) ^ (purpose as u64) << 56);
    ChaCha8Rng::seed_from_u64(key)
}

pub fn stream_rng(seed: u64, path: u64, purpose: Purpose, t: u64) -> ChaCha8Rng {
    let mut rng = path_rng(seed, path, purpose);
    rng.set_stream(t);
    rng
}

/// Reward distribution for a synthetic multi-affiliate instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RewardSpec {
    /// Independent uniform rewards on `[low_i, high_i]` per affiliate.
    Uniform { low: Vec<f64>, high: Vec<f64> },
    /// A discrete table of reward vectors drawn with the given probabilities.
    Table { values: Vec<Vec<f64>>, probs: Vec<f64> },
}

impl RewardSpec {
    fn width(&self) -> Option<usize> {
        match self {
            RewardSpec::Uniform { low, high } => (low.len() == high.len()).then_some(low.len()),
            RewardSpec::Table { values, probs } => {
                let m = values.first()?.len();
                (values.len() == probs.len() && values.iter().all(|v| v.len() == m)).then_some(m)
            }
        }
    }

    fn check(&self, m: usize) -> Result<()> {
        if self.width() != Some(m) {
            return Err(Error::Dimension(format!("reward spec does not describe {m} affiliates")));
        }
        match self {
            RewardSpec::Uniform { low, high } => {
                for (i, (lo, hi)) in low.iter().zip(high).enumerate() {
                    if !(0.0 <= *lo && lo <= hi && *hi <= 1.0) {
                        return Err(Error::InvalidParameter(format!(
                            "reward box for affiliate {} must satisfy 0 <= low <= high <= 1",
                            i + 1
                        )));
                    }
                }
            }
            RewardSpec::Table { values, probs } => {
                if values.iter().flatten().any(|w| !(0.0..=1.0).contains(w)) {
                    return Err(Error::InvalidParameter("reward table entries must lie in [0,1]".into()));
                }
                if probs.iter().any(|p| *p < 0.0) || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidParameter("reward table probabilities must sum to 1".into()));
                }
            }
        }
        Ok(())
    }

    fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        match self {
            RewardSpec::Uniform { low, high } => low
                .iter()
                .zip(high)
                .map(|(lo, hi)| lo + (hi - lo) * rng.random::<f64>())
                .collect(),
            RewardSpec::Table { values, probs } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (v, p) in values.iter().zip(probs) {
                    acc += p;
                    if u < acc {
                        return v.clone();
                    }
                }
                values.last().cloned().unwrap_or_default()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    pub tied_probs: Vec<f64>,
    pub rewards: RewardSpec,
}

/// Arrival source as written in an instance file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArrivalSpec {
    UniformSingle {},
    LbTiedFree {},
    LbThreeReward {},
    LbDeterministic {},
    LbBernoulli {},
    SyntheticMulti { params: SyntheticParams },
    Trace { trace_path: PathBuf },
}

/// Sampler of i.i.d. arrivals.
#[derive(Clone, Debug)]
pub enum ArrivalGenerator {
    /// One affiliate, free cases, Uniform(0,1) rewards.
    UniformSingle,
    /// One affiliate, reward one; tied with probability `tied_prob`.
    TiedFree { tied_prob: f64 },
    /// One affiliate, free cases with rewards 1, 2/3 and 1/3.
    ThreeReward { p_one: f64, p_two_thirds: f64 },
    /// One affiliate, every case free with reward one.
    AllOnes,
    /// One affiliate, free cases with reward one or zero, each with probability 1/2.
    BernoulliReward,
    Synthetic { tied_probs: Vec<f64>, rewards: RewardSpec },
    /// Replays a recorded trace; `sample` draws rows uniformly with replacement.
    Trace(Arc<Trace>),
}

impl ArrivalGenerator {
    pub fn from_instance(instance: &Instance) -> Result<Self> {
        let horizon = instance.horizon as f64;
        Ok(match &instance.arrival {
            ArrivalSpec::UniformSingle {} => ArrivalGenerator::UniformSingle,
            ArrivalSpec::LbTiedFree {} => ArrivalGenerator::TiedFree {
                tied_prob: 0.5 - instance.epsilon,
            },
            ArrivalSpec::LbThreeReward {} => {
                let p = 1.0 / horizon.sqrt();
                if p > 0.5 {
                    return Err(Error::InvalidParameter("three-reward instance needs T >= 4".into()));
                }
                ArrivalGenerator::ThreeReward {
                    p_one: 0.5 - p,
                    p_two_thirds: p,
                }
            }
            ArrivalSpec::LbDeterministic {} => ArrivalGenerator::AllOnes,
            ArrivalSpec::LbBernoulli {} => ArrivalGenerator::BernoulliReward,
            ArrivalSpec::SyntheticMulti { params } => ArrivalGenerator::Synthetic {
                tied_probs: params.tied_probs.clone(),
                rewards: params.rewards.clone(),
            },
            ArrivalSpec::Trace { trace_path } => ArrivalGenerator::Trace(Arc::new(load_trace(trace_path)?)),
        })
    }

    /// Draws one arrival.
    pub fn sample(&self, rng: &mut impl Rng) -> ArrivalType {
        match self {
            ArrivalGenerator::UniformSingle => ArrivalType::free(vec![rng.random::<f64>()]),
            ArrivalGenerator::TiedFree { tied_prob } => {
                if rng.random::<f64>() < *tied_prob {
                    ArrivalType::tied(vec![1.0], 0)
                } else {
                    ArrivalType::free(vec![1.0])
                }
            }
            ArrivalGenerator::ThreeReward { p_one, p_two_thirds } => {
                let u: f64 = rng.random();
                let w = if u < *p_one {
                    1.0
                } else if u < p_one + p_two_thirds {
                    2.0 / 3.0
                } else {
                    1.0 / 3.0
                };
                ArrivalType::free(vec![w])
            }
            ArrivalGenerator::AllOnes => ArrivalType::free(vec![1.0]),
            ArrivalGenerator::BernoulliReward => {
                ArrivalType::free(vec![if rng.random::<f64>() < 0.5 { 1.0 } else { 0.0 }])
            }
            ArrivalGenerator::Synthetic { tied_probs, rewards } => {
                let reward = rewards.sample(rng);
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (i, p) in tied_probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return ArrivalType::tied(reward, i);
                    }
                }
                ArrivalType::free(reward)
            }
            ArrivalGenerator::Trace(trace) => {
                let k = rng.random_range(0..trace.arrivals.len());
                trace.arrivals[k].clone()
            }
        }
    }

    /// The arrival of period `t` (0-based) on path `path`.
    pub fn arrival_at(&self, seed: u64, path: u64, t: usize) -> ArrivalType {
        match self {
            ArrivalGenerator::Trace(trace) => trace.arrivals[t].clone(),
            _ => self.sample(&mut stream_rng(seed, path, Purpose::Arrival, t as u64)),
        }
    }
}

/// Builds the single-affiliate instance with Uniform(0,1) rewards.
pub fn make_uniform_single(horizon: usize, rho: f64, epsilon: f64) -> Result<Instance> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidParameter(format!("capacity ratio {rho} outside (0,1)")));
    }
    if epsilon < 0.0 || rho + epsilon >= 1.0 {
        return Err(Error::InvalidParameter(format!(
            "service rate {} must lie in [rho, 1)",
            rho + epsilon
        )));
    }
    Ok(Instance::base(horizon, &[rho], epsilon, ArrivalSpec::UniformSingle {}))
}

/// Regret lower-bound instances, all with one affiliate of capacity T/2.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LowerBound {
    /// Reward one; tied with probability 1/2 - epsilon.
    TiedFree,
    /// Rewards 1, 2/3, 1/3 with probabilities 1/2 - 1/sqrt(T), 1/sqrt(T), 1/2.
    ThreeReward,
    /// Every case free with reward one.
    AllOnes,
    /// Reward one or zero with equal probability, no service slack.
    Bernoulli,
}

pub fn make_lower_bound_instance(which: LowerBound, horizon: usize, epsilon: f64) -> Result<Instance> {
    if horizon < 4 {
        return Err(Error::InvalidParameter("lower-bound instances need T >= 4".into()));
    }
    let (spec, epsilon) = match which {
        LowerBound::TiedFree => (ArrivalSpec::LbTiedFree {}, epsilon),
        LowerBound::ThreeReward => (ArrivalSpec::LbThreeReward {}, epsilon),
        LowerBound::AllOnes => (ArrivalSpec::LbDeterministic {}, epsilon),
        LowerBound::Bernoulli => (ArrivalSpec::LbBernoulli {}, 0.0),
    };
    if !(0.0..0.5).contains(&epsilon) {
        return Err(Error::InvalidParameter(format!("epsilon {epsilon} outside [0, 0.5)")));
    }
    Ok(Instance::base(horizon, &[0.5], epsilon, spec))
}

/// Builds a multi-affiliate instance whose cases are tied to `i` with
/// probability `tied_probs[i]` and free otherwise.
pub fn make_synthetic_multi(
    m: usize,
    horizon: usize,
    tied_probs: &[f64],
    rewards: RewardSpec,
    rho: &[f64],
    epsilon: f64,
) -> Result<Instance> {
    let params = SyntheticParams {
        tied_probs: tied_probs.to_vec(),
        rewards,
    };
    check_synthetic(m, &params, rho)?;
    Ok(Instance::base(horizon, rho, epsilon, ArrivalSpec::SyntheticMulti { params }))
}

fn check_synthetic(m: usize, params: &SyntheticParams, rho: &[f64]) -> Result<()> {
    if params.tied_probs.len() != m || rho.len() != m {
        return Err(Error::Dimension(format!("tied_probs and rho must have {m} entries")));
    }
    params.rewards.check(m)?;
    if params.tied_probs.iter().any(|p| *p < 0.0) || params.tied_probs.iter().sum::<f64>() > 1.0 + 1e-12 {
        return Err(Error::InvalidParameter("tied probabilities must be non-negative and sum to at most 1".into()));
    }
    for (i, (p, r)) in params.tied_probs.iter().zip(rho).enumerate() {
        if p >= r {
            return Err(Error::InvalidParameter(format!(
                "affiliate {}: tied probability {p} must be below its capacity ratio {r}",
                i + 1
            )));
        }
    }
    Ok(())
}

/// Service availability of period `t` (0-based).
pub fn draw_services(instance: &Instance, seed: u64, path: u64, t: usize) -> Grid {
    let (m, l) = (instance.m, instance.l);
    match instance.service_mode {
        ServiceMode::Deterministic => instance.rho.clone(),
        ServiceMode::Bernoulli | ServiceMode::Idle => {
            let mut rng = stream_rng(seed, path, Purpose::Service, t as u64);
            let mut s = Grid::zeros(m, l);
            for i in 0..m {
                for j in 0..l {
                    if rng.random::<f64>() < instance.service_rate(i, j) {
                        s.set(i, j, 1.0);
                    }
                }
            }
            s
        }
    }
}

/// Seeds of the arrival and service streams of a path.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PathSeeds {
    pub arrival: u64,
    pub service: u64,
}

impl PathSeeds {
    pub fn shared(seed: u64) -> Self {
        PathSeeds {
            arrival: seed,
            service: seed,
        }
    }
}

/// Draws a full sample path. Traces that carry service columns supply the
/// availabilities directly.
pub fn sample_path(instance: &Instance, generator: &ArrivalGenerator, seeds: PathSeeds, path: u64) -> Result<SamplePath> {
    let horizon = instance.horizon;
    if let ArrivalGenerator::Trace(trace) = generator {
        if trace.arrivals.len() != horizon {
            return Err(Error::Dimension(format!(
                "trace has {} rows but T = {horizon}",
                trace.arrivals.len()
            )));
        }
    }
    let arrivals: Vec<ArrivalType> = (0..horizon).map(|t| generator.arrival_at(seeds.arrival, path, t)).collect();
    let services = match generator {
        ArrivalGenerator::Trace(trace) if trace.services.is_some() => {
            let rows = trace.services.as_ref().unwrap();
            rows.iter()
                .map(|s| {
                    let mut g = Grid::zeros(instance.m, instance.l);
                    for i in 0..instance.m {
                        for j in 0..instance.l {
                            g.set(i, j, s[i]);
                        }
                    }
                    g
                })
                .collect()
        }
        _ => (0..horizon).map(|t| draw_services(instance, seeds.service, path, t)).collect(),
    };
    Ok(SamplePath { arrivals, services })
}

pub fn generate_path(instance: &Instance, generator: &ArrivalGenerator, seed: u64, path: u64) -> Result<SamplePath> {
    sample_path(instance, generator, PathSeeds::shared(seed), path)
}

/// A recorded arrival sequence with optional service availabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub arrivals: Vec<ArrivalType>,
    pub services: Option<Vec<Vec<f64>>>,
}

impl Trace {
    pub fn from_path(path: &SamplePath) -> Self {
        Trace {
            arrivals: path.arrivals.clone(),
            services: Some(path.services.iter().map(|g| g.first_column()).collect()),
        }
    }

    pub fn len(&self) -> usize {
        self.arrivals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrivals.is_empty()
    }
}

fn reward_text(w: f64) -> String {
    // 17 significant digits round-trip every f64 exactly.
    format!("{w:.16e}")
}

pub fn write_trace<W: Write>(trace: &Trace, writer: W) -> Result<()> {
    let first = trace
        .arrivals
        .first()
        .ok_or_else(|| Error::Trace { line: 0, message: "no rows".into() })?;
    let m = first.reward.len();
    let consumption_shape = first.consumption.as_ref().map(|n| n.shape());
    let mut header = vec!["t".to_string(), "target".to_string()];
    header.extend((1..=m).map(|i| format!("w_{i}")));
    if let Some((rows, cols)) = consumption_shape {
        for i in 1..=rows {
            for j in 1..=cols {
                header.push(format!("n_{i}_{j}"));
            }
        }
    }
    if trace.services.is_some() {
        header.extend((1..=m).map(|i| format!("s_{i}")));
    }
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(&header)?;
    for (t, a) in trace.arrivals.iter().enumerate() {
        if a.reward.len() != m || a.consumption.as_ref().map(|n| n.shape()) != consumption_shape {
            return Err(Error::Trace {
                line: t + 2,
                message: "rows disagree on the number of columns".into(),
            });
        }
        let mut row = vec![(t + 1).to_string(), a.target.to_string()];
        row.extend(a.reward.iter().map(|w| reward_text(*w)));
        if let Some(n) = &a.consumption {
            row.extend(n.as_slice().iter().map(|v| v.to_string()));
        }
        if let Some(services) = &trace.services {
            let s = services.get(t).ok_or_else(|| Error::Trace {
                line: t + 2,
                message: "missing service row".into(),
            })?;
            row.extend(s.iter().map(|v| v.to_string()));
        }
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_trace<R: Read>(reader: R) -> Result<Trace> {
    let mut input = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(reader);
    let mut records = input.records();
    let header = match records.next() {
        Some(h) => h?,
        None => return Err(Error::Trace { line: 1, message: "no rows".into() }),
    };
    let names: Vec<&str> = header.iter().collect();
    if names.len() < 3 || names[0] != "t" || names[1] != "target" {
        return Err(Error::Trace {
            line: 1,
            message: "header must start with t,target,w_1".into(),
        });
    }
    let count = |prefix: &str| names.iter().filter(|n| n.starts_with(prefix)).count();
    let m = count("w_");
    let n_cols = count("n_");
    let s_cols = count("s_");
    if m == 0 || (n_cols % m != 0) || (s_cols != 0 && s_cols != m) || names.len() != 2 + m + n_cols + s_cols {
        return Err(Error::Trace { line: 1, message: "unrecognised column layout".into() });
    }
    let l = n_cols / m;
    let mut arrivals = Vec::new();
    let mut services = Vec::new();
    for (k, record) in records.enumerate() {
        let line = k + 2;
        let record = record?;
        let bad = |message: String| Error::Trace { line, message };
        if record.len() != names.len() {
            return Err(bad(format!("expected {} fields, found {}", names.len(), record.len())));
        }
        let num = |idx: usize| -> Result<f64> {
            record[idx]
                .parse::<f64>()
                .map_err(|_| bad(format!("column {} is not a number: {:?}", names[idx], &record[idx])))
        };
        let target: usize = record[1]
            .parse()
            .map_err(|_| bad(format!("target is not an integer: {:?}", &record[1])))?;
        let reward = (0..m).map(|i| num(2 + i)).collect::<Result<Vec<_>>>()?;
        let mut arrival = ArrivalType {
            reward,
            target,
            consumption: None,
        };
        if l > 0 {
            let values = (0..n_cols).map(|k| num(2 + m + k)).collect::<Result<Vec<_>>>()?;
            let rows: Vec<Vec<f64>> = values.chunks(l).map(|c| c.to_vec()).collect();
            arrival.consumption = Grid::from_rows(&rows);
        }
        arrival
            .validate(m, l.max(1), f64::INFINITY)
            .map_err(|e| bad(e.to_string()))?;
        if s_cols > 0 {
            services.push((0..m).map(|i| num(2 + m + n_cols + i)).collect::<Result<Vec<_>>>()?);
        }
        arrivals.push(arrival);
    }
    if arrivals.is_empty() {
        return Err(Error::Trace { line: 2, message: "no rows".into() });
    }
    Ok(Trace {
        arrivals,
        services: (s_cols > 0).then_some(services),
    })
}

pub fn save_trace(trace: &Trace, path: impl AsRef<Path>) -> Result<()> {
    write_trace(trace, std::fs::File::create(path)?)
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<Trace> {
    read_trace(std::fs::File::open(path)?)
}

/// Hard errors and soft warnings about an instance.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.errors.is_empty() && self.warnings.is_empty()
    }

    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }
}

pub fn validate_instance(instance: &Instance) -> ValidationReport {
    let mut report = ValidationReport::default();
    if let Err(e) = instance.check_shape() {
        report.errors.push(e.to_string());
        return report;
    }
    for i in 0..instance.m {
        for j in 0..instance.l {
            let rho = instance.rho.get(i, j);
            if rho <= 0.0 || rho > 1.0 {
                report.errors.push(format!("rho[{}][{}] = {rho} outside (0,1]", i + 1, j + 1));
            }
            let r = instance.service_rate(i, j);
            if r >= 1.0 {
                report.errors.push(format!("service rate r[{}][{}] = {r} must be below 1", i + 1, j + 1));
            }
        }
    }
    if instance.epsilon < 0.0 {
        report.errors.push("epsilon must be non-negative".into());
    }
    if instance.alpha < 0.0 || instance.gamma < 0.0 {
        report.errors.push("alpha and gamma must be non-negative".into());
    }
    if !(instance.n_bar.is_finite() && instance.n_bar > 0.0) {
        report.errors.push("n_bar must be a positive finite constant".into());
    }
    let single_affiliate = matches!(
        instance.arrival,
        ArrivalSpec::UniformSingle {}
            | ArrivalSpec::LbTiedFree {}
            | ArrivalSpec::LbThreeReward {}
            | ArrivalSpec::LbDeterministic {}
            | ArrivalSpec::LbBernoulli {}
    );
    if single_affiliate && instance.m != 1 {
        report.errors.push("this arrival kind has a single affiliate".into());
    }
    match &instance.arrival {
        ArrivalSpec::SyntheticMulti { params } => {
            if let Err(e) = check_synthetic(instance.m, params, &instance.base_rho()) {
                report.errors.push(e.to_string());
            }
        }
        ArrivalSpec::LbThreeReward {} if instance.horizon < 4 => {
            report.errors.push("three-reward instance needs T >= 4".into());
        }
        ArrivalSpec::LbTiedFree {} if instance.epsilon >= 0.5 => {
            report.errors.push("tied-free instance needs epsilon < 0.5".into());
        }
        _ => {}
    }
    let total: f64 = instance.base_rho().iter().sum();
    if total > 1.0 + 1e-12 {
        report.warnings.push(format!("Σρ > 1 ({total})"));
    }
    if instance.epsilon == 0.0 {
        report.warnings.push("ε = 0: near-critical regime".into());
    }
    if instance.alpha < 1.0 {
        report.warnings.push(format!("α = {} below 1", instance.alpha));
    }
    report
}
