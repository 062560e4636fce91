//! Domain types and per-period dynamics: backlog, capacity accounting and the
//! penalised objective.
//!
//! Affiliates are indexed from 0 internally. An arrival's `target` follows the
//! external convention: 0 marks a free case and `k >= 1` ties the case to
//! affiliate `k - 1`.

use serde::{Deserialize, Serialize};

use crate::algorithms::DualState;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::instances::ArrivalSpec;

/// Slack used when comparing accumulated capacities and decision sums.
pub const FEAS_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ServiceMode {
    Bernoulli,
    Deterministic,
    Idle,
}

/// One arriving case.
#[derive(Clone, Debug, PartialEq)]
pub struct ArrivalType {
    pub reward: Vec<f64>,
    pub target: usize,
    /// Units of each resource type consumed at each affiliate; all ones when absent.
    pub consumption: Option<Grid>,
}

impl ArrivalType {
    pub fn free(reward: Vec<f64>) -> Self {
        ArrivalType {
            reward,
            target: 0,
            consumption: None,
        }
    }

    /// A case tied to the 0-based `affiliate`.
    pub fn tied(reward: Vec<f64>, affiliate: usize) -> Self {
        ArrivalType {
            reward,
            target: affiliate + 1,
            consumption: None,
        }
    }

    pub fn with_consumption(mut self, consumption: Grid) -> Self {
        self.consumption = Some(consumption);
        self
    }

    pub fn is_free(&self) -> bool {
        self.target == 0
    }

    /// The 0-based affiliate of a tied case.
    pub fn tied_to(&self) -> Option<usize> {
        self.target.checked_sub(1)
    }

    #[inline]
    pub fn usage(&self, i: usize, j: usize) -> f64 {
        match &self.consumption {
            Some(n) => n.get(i, j),
            None => 1.0,
        }
    }

    pub fn validate(&self, m: usize, l: usize, n_bar: f64) -> Result<()> {
        if self.reward.len() != m {
            return Err(Error::Dimension(format!(
                "reward has {} entries, expected {m}",
                self.reward.len()
            )));
        }
        if let Some(w) = self.reward.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(Error::InvalidParameter(format!("reward {w} outside [0,1]")));
        }
        if self.target > m {
            return Err(Error::InvalidParameter(format!(
                "target {} outside 0..={m}",
                self.target
            )));
        }
        if let Some(n) = &self.consumption {
            if n.shape() != (m, l) {
                return Err(Error::Dimension(format!(
                    "consumption is {:?}, expected ({m}, {l})",
                    n.shape()
                )));
            }
            if let Some(v) = n.as_slice().iter().find(|v| !(0.0..=n_bar).contains(*v)) {
                return Err(Error::InvalidParameter(format!(
                    "consumption {v} outside [0, {n_bar}]"
                )));
            }
        }
        Ok(())
    }
}

fn default_resource_types() -> usize {
    1
}

fn default_n_bar() -> f64 {
    10.0
}

/// Static description of a problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub m: usize,
    #[serde(default = "default_resource_types")]
    pub l: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub rho: Grid,
    pub epsilon: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub service_mode: ServiceMode,
    pub arrival: ArrivalSpec,
    #[serde(default = "default_n_bar")]
    pub n_bar: f64,
}

impl Instance {
    /// Base-model instance with one resource type per affiliate.
    pub fn base(horizon: usize, rho: &[f64], epsilon: f64, arrival: ArrivalSpec) -> Self {
        Instance {
            m: rho.len(),
            l: 1,
            horizon,
            rho: Grid::column(rho),
            epsilon,
            alpha: 1.0,
            gamma: 0.0,
            service_mode: ServiceMode::Bernoulli,
            arrival,
            n_bar: default_n_bar(),
        }
    }

    pub fn with_penalties(mut self, alpha: f64, gamma: f64) -> Self {
        self.alpha = alpha;
        self.gamma = gamma;
        self
    }

    pub fn with_service(mut self, mode: ServiceMode) -> Self {
        self.service_mode = mode;
        self
    }

    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = horizon;
        self
    }

    #[inline]
    pub fn capacity(&self, i: usize, j: usize) -> f64 {
        self.rho.get(i, j) * self.horizon as f64
    }

    #[inline]
    pub fn service_rate(&self, i: usize, j: usize) -> f64 {
        self.rho.get(i, j) + self.epsilon
    }

    pub fn min_rho(&self) -> f64 {
        self.rho.min()
    }

    /// Upper end of the box for the capacity dual.
    pub fn lambda_cap(&self) -> f64 {
        (1.0 + 2.0 * self.alpha) / self.min_rho()
    }

    /// Capacity ratios of the first resource type.
    pub fn base_rho(&self) -> Vec<f64> {
        self.rho.first_column()
    }

    pub fn check_shape(&self) -> Result<()> {
        if self.m == 0 || self.l == 0 || self.horizon == 0 {
            return Err(Error::InvalidParameter("m, l and T must be positive".into()));
        }
        if self.rho.shape() != (self.m, self.l) {
            return Err(Error::Dimension(format!(
                "rho is {:?}, expected ({}, {})",
                self.rho.shape(),
                self.m,
                self.l
            )));
        }
        Ok(())
    }

    pub fn require_base(&self) -> Result<()> {
        if self.l != 1 {
            return Err(Error::InvalidParameter(format!(
                "this operation needs one resource type per affiliate, instance has l = {}",
                self.l
            )));
        }
        Ok(())
    }
}

/// A matching decision for one case.
#[derive(Clone, Debug, PartialEq)]
pub struct Decision {
    pub z: Vec<f64>,
}

impl Decision {
    pub fn zero(m: usize) -> Self {
        Decision { z: vec![0.0; m] }
    }

    pub fn unit(m: usize, i: usize) -> Self {
        let mut z = vec![0.0; m];
        z[i] = 1.0;
        Decision { z }
    }

    /// The affiliate receiving the case, for integral decisions.
    pub fn matched(&self) -> Option<usize> {
        self.z.iter().position(|&v| v > 0.5)
    }

    pub fn is_integral(&self) -> bool {
        let ones = self.z.iter().filter(|&&v| v == 1.0).count();
        ones <= 1 && self.z.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn total(&self) -> f64 {
        self.z.iter().sum()
    }

    /// Checks membership in the type-feasibility set of `arrival`.
    pub fn check_type(&self, arrival: &ArrivalType) -> Result<()> {
        let m = arrival.reward.len();
        if self.z.len() != m {
            return Err(Error::Dimension(format!(
                "decision has {} entries, expected {m}",
                self.z.len()
            )));
        }
        if let Some(i) = arrival.tied_to() {
            if self.z.iter().enumerate().any(|(k, &v)| v != if k == i { 1.0 } else { 0.0 }) {
                return Err(Error::InvalidParameter(format!(
                    "tied case must be matched to affiliate {}",
                    i + 1
                )));
            }
            return Ok(());
        }
        if self.z.iter().any(|&v| !(-FEAS_TOL..=1.0 + FEAS_TOL).contains(&v)) || self.total() > 1.0 + FEAS_TOL {
            return Err(Error::InvalidParameter("free decision outside the simplex".into()));
        }
        Ok(())
    }
}

/// Service availability for one period.
#[derive(Clone, Debug, PartialEq)]
pub struct ServiceDraw {
    pub s: Grid,
}

impl ServiceDraw {
    pub fn new(s: Grid) -> Self {
        ServiceDraw { s }
    }

    /// Effective availability given the current idle flags.
    pub fn effective(&self, state: &PathState) -> Grid {
        let mut u = self.s.clone();
        for (k, v) in u.as_mut_slice().iter_mut().enumerate() {
            if state.idle[k] {
                *v = 1.0;
            }
        }
        u
    }
}

/// Realised arrivals and service availabilities for one sample path.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePath {
    pub arrivals: Vec<ArrivalType>,
    pub services: Vec<Grid>,
}

impl SamplePath {
    pub fn len(&self) -> usize {
        self.arrivals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrivals.is_empty()
    }

    pub fn draw(&self, t: usize) -> ServiceDraw {
        ServiceDraw::new(self.services[t].clone())
    }

    /// Number of cases tied to each affiliate.
    pub fn tied_counts(&self, m: usize) -> Vec<f64> {
        let mut counts = vec![0.0; m];
        for a in &self.arrivals {
            if let Some(i) = a.tied_to() {
                counts[i] += 1.0;
            }
        }
        counts
    }
}

/// Evolving state of one sample path.
#[derive(Clone, Debug, PartialEq)]
pub struct PathState {
    /// Periods completed so far.
    pub t: usize,
    pub remaining: Grid,
    pub backlog: Grid,
    /// Idle flags, row-major over (affiliate, resource type).
    pub idle: Vec<bool>,
    pub cum_matched: Vec<f64>,
    pub cum_free_matched: Grid,
    pub cum_tied_matched: Grid,
    pub stopped: bool,
    pub stopping_time: Option<usize>,
    pub total_reward: f64,
    /// Running sum over periods of the total backlog.
    pub backlog_sum: f64,
}

impl PathState {
    pub fn new(instance: &Instance) -> Self {
        let (m, l) = (instance.m, instance.l);
        let mut remaining = Grid::zeros(m, l);
        for i in 0..m {
            for j in 0..l {
                remaining.set(i, j, instance.capacity(i, j));
            }
        }
        PathState {
            t: 0,
            remaining,
            backlog: Grid::zeros(m, l),
            idle: vec![false; m * l],
            cum_matched: vec![0.0; m],
            cum_free_matched: Grid::zeros(m, l),
            cum_tied_matched: Grid::zeros(m, l),
            stopped: false,
            stopping_time: None,
            total_reward: 0.0,
            backlog_sum: 0.0,
        }
    }

    /// Backlog of the first resource type at each affiliate.
    pub fn base_backlog(&self) -> Vec<f64> {
        self.backlog.first_column()
    }

    /// Units of free-case capacity still available at (i, j).
    pub fn free_allowance(&self, instance: &Instance, i: usize, j: usize) -> f64 {
        (instance.capacity(i, j) - self.cum_tied_matched.get(i, j)).max(0.0) - self.cum_free_matched.get(i, j)
    }

    /// Whether a free case matched to `i` fits the remaining allowance on every resource type.
    pub fn free_fits(&self, instance: &Instance, i: usize, arrival: &ArrivalType) -> bool {
        (0..instance.l).all(|j| arrival.usage(i, j) <= self.free_allowance(instance, i, j) + FEAS_TOL)
    }

    /// Applies one period of dynamics in place.
    pub fn advance(
        &mut self,
        instance: &Instance,
        decision: &Decision,
        draw: &ServiceDraw,
        arrival: &ArrivalType,
    ) -> Result<()> {
        let (m, l) = (instance.m, instance.l);
        if decision.z.len() != m || arrival.reward.len() != m || draw.s.shape() != (m, l) || self.backlog.shape() != (m, l) {
            return Err(Error::Dimension("state, decision, draw and instance disagree".into()));
        }
        if draw.s.as_slice().iter().any(|&v| v < 0.0) || decision.z.iter().any(|&v| v < -FEAS_TOL) {
            return Err(Error::InvalidParameter("negative service or decision entry".into()));
        }
        let idle_mode = instance.service_mode == ServiceMode::Idle;
        let mut period_backlog = 0.0;
        for i in 0..m {
            let z = decision.z[i];
            for j in 0..l {
                let k = i * l + j;
                let load = arrival.usage(i, j) * z;
                let q = self.backlog.get(i, j) + load;
                let s = draw.s.get(i, j);
                let avail = if idle_mode && self.idle[k] { 1.0 } else { s };
                let next = (q - avail).max(0.0);
                if idle_mode {
                    self.idle[k] = q == 0.0 && (self.idle[k] || s >= 1.0);
                }
                self.backlog.set(i, j, next);
                period_backlog += next;
                self.remaining.add(i, j, -load);
                if arrival.is_free() {
                    self.cum_free_matched.add(i, j, load);
                } else {
                    self.cum_tied_matched.add(i, j, load);
                }
            }
            self.cum_matched[i] += z;
            self.total_reward += arrival.reward[i] * z;
        }
        self.backlog_sum += period_backlog;
        self.t += 1;
        if !self.stopped {
            let hit = (0..m).any(|i| {
                (0..l).any(|j| {
                    self.cum_free_matched.get(i, j) + self.cum_tied_matched.get(i, j)
                        >= instance.capacity(i, j) - FEAS_TOL
                })
            });
            if hit {
                self.stopped = true;
                self.stopping_time = Some(self.t);
            }
        }
        Ok(())
    }

    /// Total over-allocation beyond the static capacities.
    pub fn over_allocation(&self, instance: &Instance) -> f64 {
        let mut total = 0.0;
        for i in 0..instance.m {
            for j in 0..instance.l {
                let used = self.cum_free_matched.get(i, j) + self.cum_tied_matched.get(i, j);
                total += (used - instance.capacity(i, j)).max(0.0);
            }
        }
        total
    }
}

/// Functional form of [`PathState::advance`].
pub fn step_backlog(
    instance: &Instance,
    state: &PathState,
    decision: &Decision,
    draw: &ServiceDraw,
    arrival: &ArrivalType,
) -> Result<PathState> {
    let mut next = state.clone();
    next.advance(instance, decision, draw, arrival)?;
    Ok(next)
}

/// True iff applying `decision` keeps the free-case tallies within the
/// capacity left over by tied cases. Tied decisions always pass.
pub fn check_capacity_feasibility(
    instance: &Instance,
    state: &PathState,
    decision: &Decision,
    arrival: &ArrivalType,
) -> bool {
    if !arrival.is_free() {
        return true;
    }
    if decision.z.len() != instance.m {
        return false;
    }
    (0..instance.m).all(|i| {
        let z = decision.z[i];
        z == 0.0
            || (0..instance.l).all(|j| {
                let after = state.cum_free_matched.get(i, j) + arrival.usage(i, j) * z;
                let cap = (instance.capacity(i, j) - state.cum_tied_matched.get(i, j)).max(0.0);
                after <= cap + FEAS_TOL
            })
    })
}

/// Per-period series recorded when diagnostics are enabled.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    /// Total backlog at the end of each period.
    pub backlog: Vec<f64>,
    /// Dual prices in force when each period's case was decided (row-major grids).
    pub theta: Vec<Vec<f64>>,
    pub lambda: Vec<Vec<f64>>,
    pub drift: Vec<f64>,
    pub pseudo_reward: Vec<f64>,
    pub matched: Vec<Option<usize>>,
}

/// Outcome of one (algorithm, sample path) pair.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunResult {
    pub total_reward: f64,
    pub over_allocation: f64,
    pub avg_backlog: f64,
    pub objective: f64,
    pub net_matching_reward: f64,
    pub stopping_time: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<Diagnostics>,
}

impl RunResult {
    pub fn from_state(instance: &Instance, state: &PathState) -> Self {
        let over_allocation = state.over_allocation(instance);
        let avg_backlog = state.backlog_sum / instance.horizon as f64;
        let nmr = state.total_reward - instance.alpha * over_allocation;
        RunResult {
            total_reward: state.total_reward,
            over_allocation,
            avg_backlog,
            objective: nmr - instance.gamma * avg_backlog,
            net_matching_reward: nmr,
            stopping_time: state.stopping_time.unwrap_or(instance.horizon),
            diagnostics: None,
        }
    }
}

/// Replays a decision sequence on a sample path and scores it, rejecting the
/// first period whose decision breaks type or capacity feasibility.
pub fn evaluate_objective(instance: &Instance, path: &SamplePath, decisions: &[Decision]) -> Result<RunResult> {
    replay(instance, path, decisions, true)
}

/// Scores a decision sequence without the capacity check. Type feasibility
/// is still enforced; over-allocation from free cases is simply penalised.
pub fn score_unchecked(instance: &Instance, path: &SamplePath, decisions: &[Decision]) -> Result<RunResult> {
    replay(instance, path, decisions, false)
}

fn replay(instance: &Instance, path: &SamplePath, decisions: &[Decision], check_capacity: bool) -> Result<RunResult> {
    if decisions.len() != path.len() || path.services.len() != path.len() {
        return Err(Error::Dimension(format!(
            "{} decisions for a path of {} arrivals",
            decisions.len(),
            path.len()
        )));
    }
    let mut state = PathState::new(instance);
    for (t, (decision, arrival)) in decisions.iter().zip(&path.arrivals).enumerate() {
        decision.check_type(arrival).map_err(|e| Error::Infeasible {
            period: t + 1,
            reason: e.to_string(),
        })?;
        if check_capacity && !check_capacity_feasibility(instance, &state, decision, arrival) {
            return Err(Error::Infeasible {
                period: t + 1,
                reason: "free matches exceed the capacity left by tied cases".into(),
            });
        }
        state.advance(instance, decision, &path.draw(t), arrival)?;
    }
    Ok(RunResult::from_state(instance, &state))
}

/// Lyapunov drift of one base-model period.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DriftRecord {
    pub psi_before: f64,
    pub psi_after: f64,
    pub drift: f64,
    pub pseudo_reward: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
}

/// Half the squared Euclidean norm.
pub fn psi(backlog: &[f64]) -> f64 {
    0.5 * backlog.iter().map(|b| b * b).sum::<f64>()
}

/// Drift of the quadratic potential with its two-sided bound, plus the
/// pseudo-reward under the given dual prices.
pub fn drift_diagnostics(
    prev_backlog: &[f64],
    decision: &Decision,
    service: &[f64],
    duals: &DualState,
    arrival: &ArrivalType,
    rho: &[f64],
) -> DriftRecord {
    let m = prev_backlog.len();
    let next: Vec<f64> = (0..m)
        .map(|i| (prev_backlog[i] + decision.z[i] - service[i]).max(0.0))
        .collect();
    let psi_before = psi(prev_backlog);
    let psi_after = psi(&next);
    let drift = psi_after - psi_before;
    let linear: f64 = (0..m).map(|i| prev_backlog[i] * (decision.z[i] - service[i])).sum();
    let mut pseudo_reward = -duals.zeta * drift;
    for i in 0..m {
        let slack = rho[i] - decision.z[i];
        pseudo_reward += arrival.reward[i] * decision.z[i]
            + duals.theta.get(i, 0) * slack
            + duals.lambda.get(i, 0) * slack;
    }
    DriftRecord {
        psi_before,
        psi_after,
        drift,
        pseudo_reward,
        lower_bound: linear,
        upper_bound: linear + (1 + m) as f64 / 2.0,
    }
}
