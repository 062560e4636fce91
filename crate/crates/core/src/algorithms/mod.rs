//! Online matching policies and the episode driver.
//!
//! Every policy decides a batch of arrivals at a time (a batch of one for
//! the online rules) and updates its own dual prices inside `decide`.

mod batch;
mod sampling;

use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use batch::{batch_b_decide, batch_iterate_decide, RoLearningB, RoLearningBIterate};
pub use sampling::{penalized_reward, sampling_decide, Future, Sampling};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::instances::{path_rng, ArrivalGenerator, Purpose, Trace};
use crate::model::{
    check_capacity_feasibility, drift_diagnostics, ArrivalType, Decision, Diagnostics, Instance, PathState,
    RunResult, SamplePath, FEAS_TOL,
};

/// Step-size rule of the dual updates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSchedule {
    Fixed(f64),
    /// `k / sqrt(t)` at iteration `t`.
    InvSqrt(f64),
}

impl StepSchedule {
    pub fn at(&self, t: usize) -> f64 {
        match *self {
            StepSchedule::Fixed(eta) => eta,
            StepSchedule::InvSqrt(k) => k / (t as f64).sqrt(),
        }
    }
}

/// Learned prices for over-allocation (`theta`) and capacity (`lambda`).
#[derive(Clone, Debug, PartialEq)]
pub struct DualState {
    pub theta: Grid,
    pub lambda: Grid,
    pub zeta: f64,
    pub schedule: StepSchedule,
    /// Iteration counter, starting at 1.
    pub t: usize,
    pub theta_cap: f64,
    pub lambda_cap: f64,
}

impl DualState {
    pub fn new(instance: &Instance, zeta: f64, schedule: StepSchedule) -> Self {
        let start = (-1.0f64).exp();
        DualState {
            theta: Grid::filled(instance.m, instance.l, start),
            lambda: Grid::filled(instance.m, instance.l, start),
            zeta,
            schedule,
            t: 1,
            theta_cap: instance.alpha,
            lambda_cap: instance.lambda_cap(),
        }
    }

    pub fn step_size(&self) -> f64 {
        self.schedule.at(self.t)
    }

    /// Combined price of affiliate `i` on the first resource type.
    pub fn phi(&self, i: usize) -> f64 {
        self.theta.get(i, 0) + self.lambda.get(i, 0)
    }

    /// Multiplicative step `x <- min(x * exp(eta * g), cap)` on both prices.
    pub fn apply(&mut self, gradient: &Grid, eta: f64) {
        let theta = self.theta.as_mut_slice();
        let lambda = self.lambda.as_mut_slice();
        for (k, g) in gradient.as_slice().iter().enumerate() {
            let factor = (eta * g).exp();
            theta[k] = (theta[k] * factor).min(self.theta_cap);
            lambda[k] = (lambda[k] * factor).min(self.lambda_cap);
        }
    }

    pub fn in_box(&self) -> bool {
        let ok = |v: &f64, cap: f64| (0.0..=cap).contains(v);
        self.theta.as_slice().iter().all(|v| ok(v, self.theta_cap))
            && self.lambda.as_slice().iter().all(|v| ok(v, self.lambda_cap))
    }
}

/// Index of the largest value, lowest index on ties.
pub(crate) fn argmax(values: impl IntoIterator<Item = f64>) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.into_iter().enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best
}

/// Dual-adjusted score of each affiliate for the base model.
pub fn adjusted_scores(duals: &DualState, state: &PathState, arrival: &ArrivalType, backlog_weight: f64) -> Vec<f64> {
    (0..arrival.reward.len())
        .map(|i| {
            arrival.reward[i]
                - (duals.theta.get(i, 0) + duals.lambda.get(i, 0) + backlog_weight * state.backlog.get(i, 0))
        })
        .collect()
}

fn gated_decide(duals: &DualState, instance: &Instance, state: &PathState, arrival: &ArrivalType, backlog_weight: f64) -> Decision {
    let m = instance.m;
    if let Some(i) = arrival.tied_to() {
        return Decision::unit(m, i);
    }
    if !(0..m).all(|i| state.free_allowance(instance, i, 0) > FEAS_TOL) {
        return Decision::zero(m);
    }
    match argmax(adjusted_scores(duals, state, arrival, backlog_weight)) {
        Some((i, score)) if score >= 0.0 && state.free_fits(instance, i, arrival) => Decision::unit(m, i),
        _ => Decision::zero(m),
    }
}

/// Congestion-aware rule: highest score `w - theta - lambda - zeta * b` if
/// non-negative, and only while every affiliate has capacity left.
pub fn cadl_decide(duals: &DualState, instance: &Instance, state: &PathState, arrival: &ArrivalType) -> Decision {
    gated_decide(duals, instance, state, arrival, duals.zeta)
}

/// One multiplicative update with gradient `z - rho` at the current step size.
pub fn cadl_update(duals: &mut DualState, decision: &Decision, instance: &Instance) {
    let rho = &instance.rho;
    let gradient: Vec<f64> = (0..instance.m).map(|i| decision.z[i] - rho.get(i, 0)).collect();
    let eta = duals.step_size();
    duals.apply(&Grid::column(&gradient), eta);
    duals.t += 1;
}

/// Congestion-oblivious rule: the same gate and score without the backlog term.
pub fn codl_decide(duals: &DualState, instance: &Instance, state: &PathState, arrival: &ArrivalType) -> Decision {
    gated_decide(duals, instance, state, arrival, 0.0)
}

pub fn codl_update(duals: &mut DualState, decision: &Decision, instance: &Instance) {
    cadl_update(duals, decision, instance)
}

/// Matches every free case to the best-scoring affiliate that still has room,
/// even at a negative score.
pub fn ro_learning_decide(duals: &DualState, instance: &Instance, state: &PathState, arrival: &ArrivalType) -> Decision {
    let m = instance.m;
    if let Some(i) = arrival.tied_to() {
        return Decision::unit(m, i);
    }
    let scores = adjusted_scores(duals, state, arrival, duals.zeta);
    let eligible = (0..m).filter(|&i| state.free_fits(instance, i, arrival));
    let mut best: Option<(usize, f64)> = None;
    for i in eligible {
        if best.is_none_or(|(_, b)| scores[i] > b) {
            best = Some((i, scores[i]));
        }
    }
    best.map_or_else(|| Decision::zero(m), |(i, _)| Decision::unit(m, i))
}

fn eligible_with_room(instance: &Instance, state: &PathState, arrival: &ArrivalType) -> Vec<(usize, f64)> {
    (0..instance.m)
        .filter(|&i| state.free_fits(instance, i, arrival))
        .map(|i| (i, state.free_allowance(instance, i, 0)))
        .collect()
}

fn pick_weighted(candidates: &[(usize, f64)], rng: &mut impl Rng) -> Option<usize> {
    match candidates {
        [] => None,
        [(i, _)] => Some(*i),
        _ => {
            let dist = WeightedIndex::new(candidates.iter().map(|(_, w)| *w)).ok()?;
            Some(candidates[dist.sample(rng)].0)
        }
    }
}

/// Picks an affiliate with probability proportional to its remaining capacity.
pub fn random_decide(instance: &Instance, state: &PathState, arrival: &ArrivalType, rng: &mut impl Rng) -> Decision {
    let m = instance.m;
    if let Some(i) = arrival.tied_to() {
        return Decision::unit(m, i);
    }
    pick_weighted(&eligible_with_room(instance, state, arrival), rng).map_or_else(|| Decision::zero(m), |i| Decision::unit(m, i))
}

/// Picks the affiliate with the smallest backlog; ties are broken at random
/// in proportion to remaining capacity.
pub fn min_backlog_decide(instance: &Instance, state: &PathState, arrival: &ArrivalType, rng: &mut impl Rng) -> Decision {
    let m = instance.m;
    if let Some(i) = arrival.tied_to() {
        return Decision::unit(m, i);
    }
    let candidates = eligible_with_room(instance, state, arrival);
    let lowest = candidates
        .iter()
        .map(|&(i, _)| state.backlog.get(i, 0))
        .fold(f64::INFINITY, f64::min);
    let ties: Vec<(usize, f64)> = candidates
        .into_iter()
        .filter(|&(i, _)| state.backlog.get(i, 0) <= lowest + 1e-12)
        .collect();
    pick_weighted(&ties, rng).map_or_else(|| Decision::zero(m), |i| Decision::unit(m, i))
}

/// Inputs available to a policy when it decides a batch.
pub struct DecisionContext<'a> {
    pub instance: &'a Instance,
    pub state: &'a PathState,
    /// Arrivals after the current batch; only hindsight variants read it.
    pub future: &'a [ArrivalType],
    pub rng: &'a mut ChaCha8Rng,
}

pub trait Policy: Send {
    fn name(&self) -> &str;

    fn batch_size(&self) -> usize {
        1
    }

    /// Decides every arrival in `batch` and performs the policy's own updates.
    fn decide(&mut self, ctx: &mut DecisionContext<'_>, batch: &[ArrivalType]) -> Result<Vec<Decision>>;

    fn duals(&self) -> Option<&DualState> {
        None
    }
}

/// The variants built on [`DualState`] with one update per case.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DualRule {
    CongestionAware,
    CongestionOblivious,
    Robust,
}

#[derive(Clone, Debug)]
pub struct DualPolicy {
    pub rule: DualRule,
    pub duals: DualState,
    label: String,
}

impl DualPolicy {
    pub fn ca_dl(instance: &Instance, eta: f64, zeta: f64) -> Self {
        Self::with_label(DualRule::CongestionAware, DualState::new(instance, zeta, StepSchedule::Fixed(eta)), "ca-dl")
    }

    pub fn co_dl(instance: &Instance, k: f64) -> Self {
        Self::with_label(DualRule::CongestionOblivious, DualState::new(instance, 0.0, StepSchedule::InvSqrt(k)), "co-dl")
    }

    pub fn ro_learning(instance: &Instance, eta: f64, zeta: f64) -> Self {
        Self::with_label(DualRule::Robust, DualState::new(instance, zeta, StepSchedule::Fixed(eta)), "ro-learning")
    }

    pub fn with_label(rule: DualRule, duals: DualState, label: &str) -> Self {
        DualPolicy {
            rule,
            duals,
            label: label.to_string(),
        }
    }
}

impl Policy for DualPolicy {
    fn name(&self) -> &str {
        &self.label
    }

    fn decide(&mut self, ctx: &mut DecisionContext<'_>, batch: &[ArrivalType]) -> Result<Vec<Decision>> {
        let mut out = Vec::with_capacity(batch.len());
        for arrival in batch {
            let d = match self.rule {
                DualRule::CongestionAware => cadl_decide(&self.duals, ctx.instance, ctx.state, arrival),
                DualRule::CongestionOblivious => codl_decide(&self.duals, ctx.instance, ctx.state, arrival),
                DualRule::Robust => ro_learning_decide(&self.duals, ctx.instance, ctx.state, arrival),
            };
            cadl_update(&mut self.duals, &d, ctx.instance);
            out.push(d);
        }
        Ok(out)
    }

    fn duals(&self) -> Option<&DualState> {
        Some(&self.duals)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Baseline {
    Random,
    MinBacklog,
}

impl Policy for Baseline {
    fn name(&self) -> &str {
        match self {
            Baseline::Random => "random",
            Baseline::MinBacklog => "min-backlog",
        }
    }

    fn decide(&mut self, ctx: &mut DecisionContext<'_>, batch: &[ArrivalType]) -> Result<Vec<Decision>> {
        Ok(batch
            .iter()
            .map(|a| match self {
                Baseline::Random => random_decide(ctx.instance, ctx.state, a, ctx.rng),
                Baseline::MinBacklog => min_backlog_decide(ctx.instance, ctx.state, a, ctx.rng),
            })
            .collect())
    }
}

/// Decisions and scores of one (policy, path) run.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub result: RunResult,
    pub decisions: Vec<Decision>,
}

/// Runs a policy over a whole sample path. Algorithm randomness comes from
/// the (seed, path) algorithm stream. Any decision breaking type or capacity
/// feasibility aborts the run.
pub fn run_episode(
    policy: &mut dyn Policy,
    instance: &Instance,
    path: &SamplePath,
    seed: u64,
    path_index: u64,
    diagnostics: bool,
) -> Result<Episode> {
    let horizon = path.len();
    if path.services.len() != horizon {
        return Err(Error::Dimension("path has mismatched service rows".into()));
    }
    let mut rng = path_rng(seed, path_index, Purpose::Algorithm);
    let mut state = PathState::new(instance);
    let mut decisions = Vec::with_capacity(horizon);
    let mut diag = diagnostics.then(Diagnostics::default);
    let zero_duals = DualState::new(instance, 0.0, StepSchedule::Fixed(0.0));
    let rho = instance.base_rho();
    let batch_size = policy.batch_size().max(1);
    let mut t = 0;
    while t < horizon {
        let end = (t + batch_size).min(horizon);
        let snapshot = diag.as_ref().map(|_| policy.duals().cloned().unwrap_or_else(|| zero_duals.clone()));
        let batch = &path.arrivals[t..end];
        let chosen = {
            let mut ctx = DecisionContext {
                instance,
                state: &state,
                future: &path.arrivals[end..],
                rng: &mut rng,
            };
            policy.decide(&mut ctx, batch)?
        };
        if chosen.len() != batch.len() {
            return Err(Error::Dimension(format!(
                "{} returned {} decisions for {} arrivals",
                policy.name(),
                chosen.len(),
                batch.len()
            )));
        }
        for (k, (decision, arrival)) in chosen.into_iter().zip(batch).enumerate() {
            let period = t + k + 1;
            decision.check_type(arrival).map_err(|e| Error::Infeasible {
                period,
                reason: format!("{}: {e}", policy.name()),
            })?;
            if !check_capacity_feasibility(instance, &state, &decision, arrival) {
                return Err(Error::Infeasible {
                    period,
                    reason: format!("{} broke the free-case capacity", policy.name()),
                });
            }
            let draw = path.draw(t + k);
            if let (Some(diag), Some(duals)) = (diag.as_mut(), snapshot.as_ref()) {
                if instance.l == 1 {
                    let rec = drift_diagnostics(
                        &state.base_backlog(),
                        &decision,
                        &draw.s.first_column(),
                        duals,
                        arrival,
                        &rho,
                    );
                    diag.drift.push(rec.drift);
                    diag.pseudo_reward.push(rec.pseudo_reward);
                }
                diag.theta.push(duals.theta.as_slice().to_vec());
                diag.lambda.push(duals.lambda.as_slice().to_vec());
                diag.matched.push(decision.matched());
            }
            state.advance(instance, &decision, &draw, arrival)?;
            if let Some(diag) = diag.as_mut() {
                diag.backlog.push(state.backlog.sum());
            }
            decisions.push(decision);
        }
        t = end;
    }
    let mut result = RunResult::from_state(instance, &state);
    result.diagnostics = diag;
    Ok(Episode { result, decisions })
}

/// Default `(eta, zeta)`: `1/sqrt(T)` and `10/sqrt(T)`.
pub fn default_steps(instance: &Instance) -> (f64, f64) {
    let root = (instance.horizon as f64).sqrt();
    (1.0 / root, 10.0 / root)
}

/// Algorithm selection as written in configs and on the command line.
/// Missing step sizes default to `eta = 1/sqrt(T)`, `zeta = 10/sqrt(T)`, `k = 1`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replications: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool_trace: Option<std::path::PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
}

pub const ALGORITHM_NAMES: &[&str] = &[
    "ca-dl",
    "co-dl",
    "ro-learning",
    "sampling",
    "random",
    "min-backlog",
    "ro-learning-b",
    "ro-learning-b-iterate",
    "ca-dl-m",
    "co-dl-m",
];

impl AlgorithmSpec {
    pub fn named(name: &str) -> Self {
        AlgorithmSpec {
            name: name.to_string(),
            ..Default::default()
        }
    }

    pub fn check(&self) -> Result<()> {
        if !ALGORITHM_NAMES.contains(&self.name.as_str()) {
            return Err(Error::InvalidParameter(format!(
                "unknown algorithm {:?}; expected one of {}",
                self.name,
                ALGORITHM_NAMES.join(", ")
            )));
        }
        let positive = [self.eta, self.k].into_iter().flatten().all(|v| v > 0.0);
        let non_negative = self.zeta.is_none_or(|z| z >= 0.0);
        let counts = [self.replications, self.batch, self.iterations].into_iter().flatten().all(|v| v >= 1);
        if !(positive && non_negative && counts) {
            return Err(Error::InvalidParameter(format!("{}: step sizes and counts must be positive", self.name)));
        }
        Ok(())
    }

    /// Builds the policy for `instance`. Sampling draws its pool from the
    /// trace file when given, otherwise from the instance's own generator on
    /// a dedicated stream.
    pub fn build(&self, instance: &Instance) -> Result<Box<dyn Policy>> {
        self.check()?;
        let (default_eta, default_zeta) = default_steps(instance);
        let eta = self.eta.unwrap_or(default_eta);
        let zeta = self.zeta.unwrap_or(default_zeta);
        let k = self.k.unwrap_or(1.0);
        let base = |p: Box<dyn Policy>| -> Result<Box<dyn Policy>> {
            instance.require_base()?;
            Ok(p)
        };
        match self.name.as_str() {
            "ca-dl" => base(Box::new(DualPolicy::ca_dl(instance, eta, zeta))),
            "co-dl" => base(Box::new(DualPolicy::co_dl(instance, k))),
            "ro-learning" => base(Box::new(DualPolicy::ro_learning(instance, eta, zeta))),
            "random" => base(Box::new(Baseline::Random)),
            "min-backlog" => base(Box::new(Baseline::MinBacklog)),
            "sampling" => {
                let pool = match &self.pool_trace {
                    Some(path) => crate::instances::load_trace(path)?,
                    None => generated_pool(instance, instance.horizon)?,
                };
                base(Box::new(Sampling::new(Arc::new(pool), self.replications.unwrap_or(5))))
            }
            "ro-learning-b" => base(Box::new(RoLearningB::new(
                DualState::new(instance, zeta, StepSchedule::Fixed(eta)),
                self.batch.unwrap_or(30),
            ))),
            "ro-learning-b-iterate" => base(Box::new(RoLearningBIterate::new(
                DualState::new(instance, zeta, StepSchedule::Fixed(eta)),
                self.batch.unwrap_or(30),
                self.iterations.unwrap_or(10),
            ))),
            "ca-dl-m" => Ok(Box::new(crate::generalized::GeneralizedPolicy::ca_dl_m(instance, eta, zeta))),
            "co-dl-m" => Ok(Box::new(crate::generalized::GeneralizedPolicy::co_dl_m(instance, k))),
            _ => unreachable!("checked above"),
        }
    }
}

/// A pool of `size` arrivals from the instance generator on the pool stream.
pub fn generated_pool(instance: &Instance, size: usize) -> Result<Trace> {
    let generator = ArrivalGenerator::from_instance(instance)?;
    let mut rng = path_rng(0, 0, Purpose::Pool);
    let arrivals = (0..size.max(1)).map(|_| generator.sample(&mut rng)).collect();
    Ok(Trace { arrivals, services: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{generate_path, make_lower_bound_instance, ArrivalSpec, LowerBound};

    fn two_affiliates() -> Instance {
        Instance::base(10, &[0.5, 0.5], 0.1, ArrivalSpec::UniformSingle {}).with_penalties(3.0, 1.0)
    }

    #[test]
    fn tied_case_forced() {
        let inst = two_affiliates();
        let duals = DualState::new(&inst, 0.0, StepSchedule::Fixed(0.1));
        let state = PathState::new(&inst);
        let a = ArrivalType::tied(vec![0.0, 1.0], 1);
        assert_eq!(cadl_decide(&duals, &inst, &state, &a), Decision::unit(2, 1));
        assert_eq!(ro_learning_decide(&duals, &inst, &state, &a), Decision::unit(2, 1));
    }

    #[test]
    fn score_example() {
        let inst = two_affiliates();
        let mut duals = DualState::new(&inst, 1.0, StepSchedule::Fixed(0.1));
        duals.theta = Grid::column(&[0.1, 0.0]);
        duals.lambda = Grid::column(&[0.2, 0.1]);
        let mut state = PathState::new(&inst);
        state.backlog = Grid::column(&[0.0, 0.5]);
        let a = ArrivalType::free(vec![0.9, 0.8]);
        let scores = adjusted_scores(&duals, &state, &a, duals.zeta);
        assert!((scores[0] - 0.6).abs() < 1e-12 && (scores[1] - 0.2).abs() < 1e-12);
        assert_eq!(cadl_decide(&duals, &inst, &state, &a), Decision::unit(2, 0));
    }

    #[test]
    fn negative_scores_leave_case_unmatched() {
        let inst = two_affiliates();
        let duals = DualState::new(&inst, 0.0, StepSchedule::Fixed(0.1));
        let state = PathState::new(&inst);
        let a = ArrivalType::free(vec![0.1, 0.2]);
        assert_eq!(cadl_decide(&duals, &inst, &state, &a), Decision::zero(2));
        // The robust variant still matches, picking the less negative score.
        assert_eq!(ro_learning_decide(&duals, &inst, &state, &a), Decision::unit(2, 1));
    }

    #[test]
    fn global_gate_versus_per_affiliate() {
        let inst = two_affiliates();
        let duals = DualState::new(&inst, 0.0, StepSchedule::Fixed(0.1));
        let mut state = PathState::new(&inst);
        state.cum_free_matched.set(0, 0, 5.0);
        state.remaining.set(0, 0, 0.0);
        let a = ArrivalType::free(vec![1.0, 0.9]);
        assert_eq!(cadl_decide(&duals, &inst, &state, &a), Decision::zero(2));
        assert_eq!(ro_learning_decide(&duals, &inst, &state, &a), Decision::unit(2, 1));
    }

    #[test]
    fn update_rules() {
        let inst = Instance::base(10, &[0.5], 0.1, ArrivalSpec::UniformSingle {}).with_penalties(3.0, 0.0);
        let mut duals = DualState::new(&inst, 0.0, StepSchedule::Fixed(0.0));
        let before = duals.clone();
        cadl_update(&mut duals, &Decision::unit(1, 0), &inst);
        assert_eq!((duals.theta.clone(), duals.lambda.clone()), (before.theta.clone(), before.lambda.clone()));

        let mut duals = DualState::new(&inst, 0.0, StepSchedule::Fixed(0.1));
        cadl_update(&mut duals, &Decision::unit(1, 0), &inst);
        assert!((duals.theta.get(0, 0) - 0.386741).abs() < 1e-6);

        duals.theta.set(0, 0, 3.0);
        cadl_update(&mut duals, &Decision::unit(1, 0), &inst);
        assert_eq!(duals.theta.get(0, 0), 3.0);
    }

    #[test]
    fn inverse_sqrt_schedule() {
        assert_eq!(StepSchedule::InvSqrt(1.0).at(4), 0.5);
    }

    #[test]
    fn random_in_proportion_to_capacity() {
        let inst = Instance::base(10, &[0.4, 0.6], 0.1, ArrivalSpec::UniformSingle {});
        let state = PathState::new(&inst);
        let a = ArrivalType::free(vec![0.5, 0.5]);
        let mut rng = path_rng(3, 0, Purpose::Algorithm);
        let n = 20_000;
        let first = (0..n)
            .filter(|_| random_decide(&inst, &state, &a, &mut rng).matched() == Some(0))
            .count() as f64
            / n as f64;
        assert!((first - 0.4).abs() < 0.015, "{first}");
    }

    #[test]
    fn min_backlog_choice() {
        let inst = Instance::base(10, &[0.3, 0.3, 0.3], 0.1, ArrivalSpec::UniformSingle {});
        let mut state = PathState::new(&inst);
        state.backlog = Grid::column(&[2.0, 0.0, 5.0]);
        let a = ArrivalType::free(vec![0.5; 3]);
        let mut rng = path_rng(3, 0, Purpose::Algorithm);
        for _ in 0..20 {
            assert_eq!(min_backlog_decide(&inst, &state, &a, &mut rng).matched(), Some(1));
        }
        let single = Instance::base(10, &[0.5], 0.1, ArrivalSpec::UniformSingle {});
        let s = PathState::new(&single);
        assert_eq!(random_decide(&single, &s, &ArrivalType::free(vec![0.2]), &mut rng), Decision::unit(1, 0));
    }

    #[test]
    fn cadl_on_all_ones_stops() {
        let inst = make_lower_bound_instance(LowerBound::AllOnes, 200, 0.1).unwrap().with_penalties(3.0, 1.0);
        let gen = ArrivalGenerator::from_instance(&inst).unwrap();
        let path = generate_path(&inst, &gen, 1, 0).unwrap();
        let mut policy = DualPolicy::ca_dl(&inst, 0.1, 0.0);
        let ep = run_episode(&mut policy, &inst, &path, 1, 0, false).unwrap();
        let first_unmatched = ep.decisions.iter().position(|d| d.matched().is_none()).unwrap();
        assert!(ep.decisions[..first_unmatched].iter().all(|d| d.matched() == Some(0)));
        assert!(ep.result.stopping_time <= inst.horizon);
        assert_eq!(ep.result.total_reward, 100.0);
    }

    #[test]
    fn spec_names_resolve() {
        let inst = Instance::base(40, &[0.5, 0.5], 0.1, ArrivalSpec::SyntheticMulti {
            params: crate::instances::SyntheticParams {
                tied_probs: vec![0.1, 0.1],
                rewards: crate::instances::RewardSpec::Uniform {
                    low: vec![0.0, 0.0],
                    high: vec![1.0, 1.0],
                },
            },
        });
        for name in ALGORITHM_NAMES {
            let mut spec = AlgorithmSpec::named(name);
            spec.batch = Some(5);
            spec.iterations = Some(2);
            spec.replications = Some(2);
            assert!(spec.build(&inst).is_ok(), "{name}");
        }
        assert!(AlgorithmSpec::named("greedy").build(&inst).is_err());
    }
}
