//! Hindsight benchmarks: the offline optimum and its dual, exhaustive search
//! for tiny paths, the backlog-free surrogate program, the static dual and
//! the single-affiliate dynamic program.

use std::collections::BinaryHeap;

use microlp::{ComparisonOp, OptimizationDirection, Problem, Variable};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{check_capacity_feasibility, ArrivalType, Decision, Instance, PathState, SamplePath, ServiceMode, FEAS_TOL};

pub(crate) fn solve(problem: &Problem) -> Result<microlp::Solution> {
    let outcome = problem.solve().map_err(|e| Error::Solver(e.to_string()))?;
    outcome
        .into_solution()
        .map_err(|_| Error::Solver("solve interrupted before a feasible point was found".into()))
}

/// Dual prices certifying an offline optimum.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DualCertificate {
    pub theta: Vec<f64>,
    pub lambda: Vec<f64>,
    /// One row per period.
    pub beta: Vec<Vec<f64>>,
    pub value: f64,
    /// Whether no affiliate receives more tied cases than its capacity; the
    /// certificate value equals the primal optimum on this event.
    pub tied_within_capacity: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OfflineSolution {
    #[serde(skip)]
    pub decisions: Vec<Decision>,
    /// One row per period, row-major over (affiliate, resource type).
    pub backlog_vars: Vec<Vec<f64>>,
    pub objective_value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dual_certificate: Option<DualCertificate>,
}

impl OfflineSolution {
    pub fn is_integral(&self, tol: f64) -> bool {
        self.decisions
            .iter()
            .flat_map(|d| d.z.iter())
            .all(|v| v.abs() < tol || (v - 1.0).abs() < tol)
    }
}

fn tied_load(instance: &Instance, arrivals: &[ArrivalType]) -> Vec<Vec<f64>> {
    let mut load = vec![vec![0.0; instance.l]; instance.m];
    for a in arrivals {
        if let Some(i) = a.tied_to() {
            for (j, v) in load[i].iter_mut().enumerate() {
                *v += a.usage(i, j);
            }
        }
    }
    load
}

/// Offline optimum over a realised path: capacity feasibility enforced only
/// at the horizon, over-allocation and backlog penalised.
pub fn solve_opt(instance: &Instance, path: &SamplePath) -> Result<OfflineSolution> {
    instance.check_shape()?;
    if instance.service_mode == ServiceMode::Idle {
        return Err(Error::InvalidParameter(
            "the offline program is defined for bernoulli and deterministic service only".into(),
        ));
    }
    let (m, l) = (instance.m, instance.l);
    let g = instance.gamma / instance.horizon as f64;
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let mut constant = 0.0;
    let z: Vec<Option<Vec<Variable>>> = path
        .arrivals
        .iter()
        .map(|a| {
            if a.is_free() {
                Some((0..m).map(|i| lp.add_var(a.reward[i], (0.0, 1.0))).collect())
            } else {
                let i = a.tied_to().unwrap();
                constant += a.reward[i];
                None
            }
        })
        .collect();
    if m > 1 {
        for vars in z.iter().flatten() {
            let row: Vec<(Variable, f64)> = vars.iter().map(|&v| (v, 1.0)).collect();
            lp.add_constraint(row.as_slice(), ComparisonOp::Le, 1.0);
        }
    }
    let tied = tied_load(instance, &path.arrivals);
    for i in 0..m {
        for j in 0..l {
            let cap = instance.capacity(i, j);
            let row: Vec<(Variable, f64)> = z
                .iter()
                .zip(&path.arrivals)
                .filter_map(|(vars, a)| vars.as_ref().map(|v| (v[i], a.usage(i, j))))
                .filter(|(_, n)| *n != 0.0)
                .collect();
            let over = lp.add_var(-instance.alpha, (0.0, f64::INFINITY));
            let mut with_over = row.clone();
            with_over.push((over, -1.0));
            lp.add_constraint(with_over.as_slice(), ComparisonOp::Le, cap - tied[i][j]);
            if !row.is_empty() {
                lp.add_constraint(row.as_slice(), ComparisonOp::Le, (cap - tied[i][j]).max(0.0));
            }
        }
    }
    let mut backlog_vars: Vec<Vec<Variable>> = Vec::new();
    if g > 0.0 {
        for (t, a) in path.arrivals.iter().enumerate() {
            let mut row_vars = Vec::with_capacity(m * l);
            for i in 0..m {
                for j in 0..l {
                    let b = lp.add_var(-g, (0.0, f64::INFINITY));
                    // b_t - b_{t-1} - n z_t >= -s_t (+ n for a tied case)
                    let mut row = vec![(b, 1.0)];
                    if t > 0 {
                        row.push((backlog_vars[t - 1][i * l + j], -1.0));
                    }
                    let n = a.usage(i, j);
                    let mut rhs = -path.services[t].get(i, j);
                    match &z[t] {
                        Some(vars) => row.push((vars[i], -n)),
                        None if a.tied_to() == Some(i) => rhs += n,
                        None => {}
                    }
                    lp.add_constraint(row.as_slice(), ComparisonOp::Ge, rhs);
                    row_vars.push(b);
                }
            }
            backlog_vars.push(row_vars);
        }
    }
    let solution = solve(&lp)?;
    let decisions: Vec<Decision> = z
        .iter()
        .zip(&path.arrivals)
        .map(|(vars, a)| match vars {
            Some(v) => Decision {
                z: v.iter().map(|&x| solution.var_value(x).clamp(0.0, 1.0)).collect(),
            },
            None => Decision::unit(m, a.tied_to().unwrap()),
        })
        .collect();
    let backlog_vars = if g > 0.0 {
        backlog_vars
            .iter()
            .map(|row| row.iter().map(|&b| solution.var_value(b)).collect())
            .collect()
    } else {
        backlog_recursion(instance, path, &decisions)
    };
    let fits = (0..m).all(|i| (0..l).all(|j| tied[i][j] <= instance.capacity(i, j) + 1e-9));
    let dual_certificate = if l == 1 && fits { Some(solve_offline_dual(instance, path)?) } else { None };
    Ok(OfflineSolution {
        decisions,
        backlog_vars,
        objective_value: solution.objective() + constant,
        dual_certificate,
    })
}

/// Backlog implied by (possibly fractional) decisions.
pub fn backlog_recursion(instance: &Instance, path: &SamplePath, decisions: &[Decision]) -> Vec<Vec<f64>> {
    let (m, l) = (instance.m, instance.l);
    let mut b = vec![0.0; m * l];
    let mut out = Vec::with_capacity(path.len());
    for (t, (a, d)) in path.arrivals.iter().zip(decisions).enumerate() {
        for i in 0..m {
            for j in 0..l {
                let k = i * l + j;
                b[k] = (b[k] + a.usage(i, j) * d.z[i] - path.services[t].get(i, j)).max(0.0);
            }
        }
        out.push(b.clone());
    }
    out
}

/// The dual program of the offline optimum (one resource type per affiliate).
pub fn solve_offline_dual(instance: &Instance, path: &SamplePath) -> Result<DualCertificate> {
    instance.require_base()?;
    let (m, horizon) = (instance.m, path.len());
    let tied = path.tied_counts(m);
    if (0..m).any(|i| tied[i] > instance.capacity(i, 0) + 1e-9) {
        return Err(Error::InvalidParameter(
            "the dual certificate exists only when tied cases fit every capacity".into(),
        ));
    }
    let g = instance.gamma / instance.horizon as f64;
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let theta: Vec<Variable> = (0..m).map(|i| lp.add_var(instance.capacity(i, 0), (0.0, instance.alpha))).collect();
    let mut lambda_cost: Vec<f64> = (0..m).map(|i| instance.capacity(i, 0)).collect();
    let mut theta_cost = lambda_cost.clone();
    let mut beta_cost: Vec<Vec<f64>> = (0..horizon)
        .map(|t| (0..m).map(|i| path.services[t].get(i, 0)).collect())
        .collect();
    let mut constant = 0.0;
    for (t, a) in path.arrivals.iter().enumerate() {
        if let Some(i) = a.tied_to() {
            constant += a.reward[i];
            theta_cost[i] -= 1.0;
            lambda_cost[i] -= 1.0;
            beta_cost[t][i] -= 1.0;
        }
    }
    // theta was created with its capacity coefficient; fold the tied terms in through a copy.
    let theta_adjust: Vec<Variable> = (0..m)
        .map(|i| lp.add_var(theta_cost[i] - instance.capacity(i, 0), (f64::NEG_INFINITY, f64::INFINITY)))
        .collect();
    for i in 0..m {
        lp.add_constraint([(theta_adjust[i], 1.0), (theta[i], -1.0)].as_slice(), ComparisonOp::Eq, 0.0);
    }
    let lambda: Vec<Variable> = (0..m).map(|i| lp.add_var(lambda_cost[i], (0.0, f64::INFINITY))).collect();
    let beta: Vec<Vec<Variable>> = (0..horizon)
        .map(|t| {
            (0..m)
                .map(|i| {
                    let upper = if g > 0.0 { f64::INFINITY } else { 0.0 };
                    lp.add_var(beta_cost[t][i], (0.0, upper))
                })
                .collect()
        })
        .collect();
    for i in 0..m {
        for t in 0..horizon {
            let row: Vec<(Variable, f64)> = if t + 1 < horizon {
                vec![(beta[t][i], 1.0), (beta[t + 1][i], -1.0)]
            } else {
                vec![(beta[t][i], 1.0)]
            };
            lp.add_constraint(row.as_slice(), ComparisonOp::Le, g);
        }
    }
    for (t, a) in path.arrivals.iter().enumerate() {
        if a.is_free() {
            let y = lp.add_var(1.0, (0.0, f64::INFINITY));
            for i in 0..m {
                lp.add_constraint(
                    [(y, 1.0), (theta[i], 1.0), (lambda[i], 1.0), (beta[t][i], 1.0)].as_slice(),
                    ComparisonOp::Ge,
                    a.reward[i],
                );
            }
        }
    }
    let solution = solve(&lp)?;
    Ok(DualCertificate {
        theta: theta.iter().map(|&v| solution.var_value(v)).collect(),
        lambda: lambda.iter().map(|&v| solution.var_value(v)).collect(),
        beta: beta
            .iter()
            .map(|row| row.iter().map(|&v| solution.var_value(v)).collect())
            .collect(),
        value: solution.objective() + constant,
        tied_within_capacity: (0..m).all(|i| tied[i] <= instance.capacity(i, 0) + 1e-9),
    })
}

/// True when the single-affiliate fast path applies.
fn single_affiliate_free(instance: &Instance, path: &SamplePath) -> bool {
    instance.m == 1
        && instance.l == 1
        && instance.service_mode == ServiceMode::Bernoulli
        && path.arrivals.iter().all(|a| a.is_free() && a.consumption.is_none())
}

/// Value of the offline optimum; single-affiliate paths without tied cases
/// use an exact combinatorial solver, everything else the LP.
pub fn opt_value(instance: &Instance, path: &SamplePath) -> Result<f64> {
    if single_affiliate_free(instance, path) {
        let rewards: Vec<f64> = path.arrivals.iter().map(|a| a.reward[0]).collect();
        let service: Vec<bool> = path.services.iter().map(|s| s.get(0, 0) >= 1.0).collect();
        let g = instance.gamma / instance.horizon as f64;
        return Ok(single_affiliate_opt(&rewards, &service, instance.capacity(0, 0), g));
    }
    Ok(solve_opt(instance, path)?.objective_value)
}

/// Total value and match count of the best assignment when each match also
/// pays `price`. A case arriving at `t` and served at slot `tau >= t` earns
/// `w_t - g (tau - t)`; cases never served wait until the horizon.
fn priced_assignment(rewards: &[f64], service: &[bool], g: f64, price: f64) -> (f64, usize) {
    #[derive(PartialEq)]
    struct Key(f64);
    impl Eq for Key {}
    impl PartialOrd for Key {
        fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(other))
        }
    }
    impl Ord for Key {
        fn cmp(&self, other: &Self) -> std::cmp::Ordering {
            self.0.total_cmp(&other.0)
        }
    }
    let horizon = rewards.len();
    let mut waiting = BinaryHeap::with_capacity(horizon);
    let (mut value, mut count) = (0.0, 0usize);
    for tau in 1..=horizon {
        waiting.push(Key(rewards[tau - 1] + g * tau as f64 - price));
        if service[tau - 1] {
            if let Some(Key(top)) = waiting.peek() {
                let gain = top - g * tau as f64;
                if gain > 0.0 {
                    value += gain;
                    count += 1;
                    waiting.pop();
                }
            }
        }
    }
    let terminal = g * (horizon + 1) as f64;
    for Key(v) in waiting {
        if v - terminal > 0.0 {
            value += v - terminal;
            count += 1;
        }
    }
    (value, count)
}

/// Offline optimum of one affiliate with only free cases: capacity `cap`,
/// unit waiting cost `g` per period. Exact up to the bisection tolerance.
pub fn single_affiliate_opt(rewards: &[f64], service: &[bool], cap: f64, g: f64) -> f64 {
    let (v0, n0) = priced_assignment(rewards, service, g, 0.0);
    if n0 as f64 <= cap {
        return v0;
    }
    let (mut lo, mut hi) = (0.0, rewards.iter().copied().fold(0.0, f64::max) + 1.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if (priced_assignment(rewards, service, g, mid).1 as f64) > cap {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let dual = |price: f64| priced_assignment(rewards, service, g, price).0 + price * cap;
    dual(lo).min(dual(hi))
}

/// Exhaustive search over integral decision sequences (T <= 12, m <= 3).
/// A sequence is kept only if free matches fit the capacity left by tied
/// cases at every period, including periods after later tied arrivals.
pub fn brute_force_opt(instance: &Instance, path: &SamplePath) -> Result<OfflineSolution> {
    let (m, horizon) = (instance.m, path.len());
    if horizon > 12 || m > 3 {
        return Err(Error::TooLarge(format!("exhaustive search needs T <= 12 and m <= 3, got T = {horizon}, m = {m}")));
    }
    struct Search<'a> {
        instance: &'a Instance,
        path: &'a SamplePath,
        current: Vec<Decision>,
        best: Option<(f64, Vec<Decision>)>,
    }
    impl Search<'_> {
        fn visit(&mut self, state: &PathState) -> Result<()> {
            let t = state.t;
            if t == self.path.len() {
                let value = crate::model::RunResult::from_state(self.instance, state).objective;
                if self.best.as_ref().is_none_or(|(v, _)| value > *v) {
                    self.best = Some((value, self.current.clone()));
                }
                return Ok(());
            }
            let arrival = &self.path.arrivals[t];
            let m = self.instance.m;
            let options: Vec<Decision> = match arrival.tied_to() {
                Some(i) => vec![Decision::unit(m, i)],
                None => std::iter::once(Decision::zero(m)).chain((0..m).map(|i| Decision::unit(m, i))).collect(),
            };
            for decision in options {
                if !check_capacity_feasibility(self.instance, state, &decision, arrival) {
                    continue;
                }
                let mut next = state.clone();
                next.advance(self.instance, &decision, &self.path.draw(t), arrival)?;
                if !free_within_capacity(self.instance, &next) {
                    continue;
                }
                self.current.push(decision);
                self.visit(&next)?;
                self.current.pop();
            }
            Ok(())
        }
    }
    let mut search = Search {
        instance,
        path,
        current: Vec::with_capacity(horizon),
        best: None,
    };
    search.visit(&PathState::new(instance))?;
    let (value, decisions) = search.best.expect("the all-zero sequence is always feasible");
    Ok(OfflineSolution {
        backlog_vars: backlog_recursion(instance, path, &decisions),
        decisions,
        objective_value: value,
        dual_certificate: None,
    })
}

fn free_within_capacity(instance: &Instance, state: &PathState) -> bool {
    (0..instance.m).all(|i| {
        (0..instance.l).all(|j| {
            let room = (instance.capacity(i, j) - state.cum_tied_matched.get(i, j)).max(0.0);
            state.cum_free_matched.get(i, j) <= room + FEAS_TOL
        })
    })
}

/// Reward-maximising plan without backlog, for the base model.
#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateSolution {
    pub value: f64,
    pub decisions: Vec<Decision>,
}

/// Maximises total reward minus `alpha` times over-allocation beyond
/// `capacity`, with free matches limited to the capacity left by tied cases.
pub fn solve_surrogate(arrivals: &[ArrivalType], capacity: &[f64], alpha: f64) -> Result<SurrogateSolution> {
    let m = capacity.len();
    if arrivals.iter().any(|a| a.reward.len() != m) {
        return Err(Error::Dimension("arrivals and capacities disagree on m".into()));
    }
    if m == 1 && arrivals.iter().all(|a| a.is_free()) {
        return Ok(surrogate_single(arrivals, capacity[0]));
    }
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let mut tied = vec![0.0; m];
    let mut constant = 0.0;
    let z: Vec<Option<Vec<Variable>>> = arrivals
        .iter()
        .map(|a| match a.tied_to() {
            Some(i) => {
                tied[i] += 1.0;
                constant += a.reward[i];
                None
            }
            None => Some((0..m).map(|i| lp.add_var(a.reward[i], (0.0, 1.0))).collect()),
        })
        .collect();
    for vars in z.iter().flatten() {
        if m > 1 {
            let row: Vec<(Variable, f64)> = vars.iter().map(|&v| (v, 1.0)).collect();
            lp.add_constraint(row.as_slice(), ComparisonOp::Le, 1.0);
        }
    }
    for i in 0..m {
        let row: Vec<(Variable, f64)> = z.iter().flatten().map(|v| (v[i], 1.0)).collect();
        let over = lp.add_var(-alpha, (0.0, f64::INFINITY));
        let mut with_over = row.clone();
        with_over.push((over, -1.0));
        lp.add_constraint(with_over.as_slice(), ComparisonOp::Le, capacity[i] - tied[i]);
        if !row.is_empty() {
            lp.add_constraint(row.as_slice(), ComparisonOp::Le, (capacity[i] - tied[i]).max(0.0));
        }
    }
    let solution = solve(&lp)?;
    let decisions = z
        .iter()
        .zip(arrivals)
        .map(|(vars, a)| match vars {
            Some(v) => Decision {
                z: v.iter().map(|&x| solution.var_value(x).clamp(0.0, 1.0)).collect(),
            },
            None => Decision::unit(m, a.tied_to().unwrap()),
        })
        .collect();
    Ok(SurrogateSolution {
        value: solution.objective() + constant,
        decisions,
    })
}

/// One affiliate, free cases only: take the largest rewards up to capacity.
fn surrogate_single(arrivals: &[ArrivalType], capacity: f64) -> SurrogateSolution {
    let mut order: Vec<usize> = (0..arrivals.len()).collect();
    order.sort_by(|&a, &b| arrivals[b].reward[0].total_cmp(&arrivals[a].reward[0]).then(a.cmp(&b)));
    let mut left = capacity.max(0.0);
    let mut decisions = vec![Decision::zero(1); arrivals.len()];
    let mut value = 0.0;
    for k in order {
        let w = arrivals[k].reward[0];
        if left <= 0.0 || w <= 0.0 {
            break;
        }
        let take = left.min(1.0);
        decisions[k].z[0] = take;
        value += take * w;
        left -= take;
    }
    SurrogateSolution { value, decisions }
}

/// The surrogate program on a full arrival sequence with the instance capacities.
pub fn solve_surrogate_primal(instance: &Instance, arrivals: &[ArrivalType]) -> Result<OfflineSolution> {
    instance.require_base()?;
    let capacity: Vec<f64> = (0..instance.m).map(|i| instance.capacity(i, 0)).collect();
    let sol = solve_surrogate(arrivals, &capacity, instance.alpha)?;
    Ok(OfflineSolution {
        decisions: sol.decisions,
        backlog_vars: Vec::new(),
        objective_value: sol.value,
        dual_certificate: None,
    })
}

/// Arrival law for the static dual problem.
#[derive(Clone, Debug, PartialEq)]
pub enum StaticDualInput {
    /// Equally weighted observed arrivals.
    Sample(Vec<ArrivalType>),
    /// Explicit discrete distribution: (type, probability).
    Distribution(Vec<(ArrivalType, f64)>),
}

impl StaticDualInput {
    fn weighted(&self) -> Vec<(&ArrivalType, f64)> {
        match self {
            StaticDualInput::Sample(items) => {
                let p = 1.0 / items.len() as f64;
                items.iter().map(|a| (a, p)).collect()
            }
            StaticDualInput::Distribution(items) => items.iter().map(|(a, p)| (a, *p)).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StaticDualSolution {
    pub theta: Vec<f64>,
    pub lambda: Vec<f64>,
    /// Combined price theta + lambda, which alone determines the dual value.
    pub phi: Vec<f64>,
    pub value: f64,
}

/// Dual function at combined prices `phi`.
pub fn static_dual_value(input: &StaticDualInput, rho: &[f64], phi: &[f64]) -> f64 {
    let mut value: f64 = rho.iter().zip(phi).map(|(r, p)| r * p).sum();
    for (a, p) in input.weighted() {
        let best = match a.tied_to() {
            Some(i) => a.reward[i] - phi[i],
            None => a.reward.iter().zip(phi).map(|(w, f)| w - f).fold(0.0, f64::max),
        };
        value += p * best;
    }
    value
}

/// Minimises the static dual over the price box. For one affiliate without
/// tied cases the smallest minimiser is returned.
pub fn solve_static_dual(input: &StaticDualInput, instance: &Instance) -> Result<StaticDualSolution> {
    let weighted = input.weighted();
    if weighted.is_empty() || weighted.iter().any(|(_, p)| !p.is_finite() || *p < 0.0) {
        return Err(Error::InvalidParameter("static dual needs a non-empty distribution with finite weights".into()));
    }
    let m = instance.m;
    if weighted.iter().any(|(a, _)| a.reward.len() != m) {
        return Err(Error::Dimension("arrival types disagree with the instance".into()));
    }
    let rho = instance.base_rho();
    let cap = instance.alpha + instance.lambda_cap();
    let phi = if m == 1 && weighted.iter().all(|(a, _)| a.is_free()) {
        // Right derivative at phi is rho - P(w > phi); the smallest minimiser
        // is the smallest kink where it is non-negative.
        let mut kinks: Vec<f64> = std::iter::once(0.0).chain(weighted.iter().map(|(a, _)| a.reward[0])).collect();
        kinks.sort_by(f64::total_cmp);
        let above = |x: f64| -> f64 { weighted.iter().filter(|(a, _)| a.reward[0] > x).map(|(_, p)| p).sum() };
        let best = kinks
            .into_iter()
            .filter(|&x| x >= 0.0)
            .find(|&x| above(x) <= rho[0] + 1e-12)
            .unwrap_or(0.0);
        vec![best.min(cap)]
    } else {
        let mut lp = Problem::new(OptimizationDirection::Minimize);
        let mut phi_cost = rho.clone();
        for (a, p) in &weighted {
            if let Some(i) = a.tied_to() {
                phi_cost[i] -= p;
            }
        }
        let phi_vars: Vec<Variable> = (0..m).map(|i| lp.add_var(phi_cost[i], (0.0, cap))).collect();
        for (a, p) in &weighted {
            if a.is_free() {
                let y = lp.add_var(*p, (0.0, f64::INFINITY));
                for i in 0..m {
                    lp.add_constraint([(y, 1.0), (phi_vars[i], 1.0)].as_slice(), ComparisonOp::Ge, a.reward[i]);
                }
            }
        }
        let solution = solve(&lp)?;
        phi_vars.iter().map(|&v| solution.var_value(v).clamp(0.0, cap)).collect()
    };
    let theta: Vec<f64> = phi.iter().map(|p| p.min(instance.alpha)).collect();
    let lambda: Vec<f64> = phi.iter().zip(&theta).map(|(p, t)| p - t).collect();
    Ok(StaticDualSolution {
        value: static_dual_value(input, &rho, &phi),
        theta,
        lambda,
        phi,
    })
}

/// Exact backward induction for one affiliate with Bernoulli(1/2) rewards
/// and services, capacity ignored.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DpSolution {
    pub value: f64,
    /// For each period, the smallest reachable backlog at which a reward-one
    /// case is rejected (`t` when it is accepted everywhere).
    pub thresholds: Vec<usize>,
    /// Periods whose acceptance set is not of the form {b < threshold}.
    pub non_threshold_periods: Vec<usize>,
}

pub const DP_MAX_HORIZON: usize = 5000;

pub fn dp_oracle_single_affiliate(horizon: usize, gamma: f64) -> Result<DpSolution> {
    if horizon == 0 || horizon > DP_MAX_HORIZON {
        return Err(Error::TooLarge(format!("DP horizon must be in 1..={DP_MAX_HORIZON}, got {horizon}")));
    }
    let g = gamma / horizon as f64;
    let size = horizon + 2;
    let mut next = vec![0.0f64; size];
    let mut current = vec![0.0; size];
    let mut thresholds = vec![0; horizon];
    let mut non_threshold = Vec::new();
    for t in (1..=horizon).rev() {
        let mut threshold = None;
        let mut broken = false;
        // Payoff charges the backlog carried into the period.
        for b in 0..size {
            let accept = 0.5 * next[b] + 0.5 * next[(b + 1).min(size - 1)];
            let reject = 0.5 * next[b.saturating_sub(1)] + 0.5 * next[b];
            // Ties (up to rounding) count as acceptance.
            let take = 1.0 + accept >= reject - 1e-9;
            current[b] = -g * b as f64 + 0.5 * (1.0 + accept).max(reject) + 0.5 * reject;
            // Backlog before period t is at most t - 1.
            if b < t {
                match (take, threshold) {
                    (false, None) => threshold = Some(b),
                    (true, Some(_)) => broken = true,
                    _ => {}
                }
            }
        }
        thresholds[t - 1] = threshold.unwrap_or(t);
        if broken {
            non_threshold.push(t);
        }
        std::mem::swap(&mut next, &mut current);
    }
    non_threshold.reverse();
    Ok(DpSolution {
        value: next[0],
        thresholds,
        non_threshold_periods: non_threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::instances::ArrivalSpec;

    fn single(horizon: usize, alpha: f64, gamma: f64) -> Instance {
        Instance::base(horizon, &[1.0 / horizon as f64], 0.0, ArrivalSpec::UniformSingle {}).with_penalties(alpha, gamma)
    }

    fn one_case(w: f64, s: f64) -> SamplePath {
        SamplePath {
            arrivals: vec![ArrivalType::free(vec![w])],
            services: vec![Grid::column(&[s])],
        }
    }

    #[test]
    fn single_step_match() {
        let sol = solve_opt(&single(1, 3.0, 5.0), &one_case(0.7, 1.0)).unwrap();
        assert!((sol.objective_value - 0.7).abs() < 1e-9);
        assert!((sol.decisions[0].z[0] - 1.0).abs() < 1e-9);
        assert!(sol.backlog_vars[0][0].abs() < 1e-9);
    }

    #[test]
    fn single_step_congestion_blocks_match() {
        let sol = solve_opt(&single(1, 3.0, 5.0), &one_case(0.7, 0.0)).unwrap();
        assert!(sol.objective_value.abs() < 1e-9);
        assert!(sol.decisions[0].z[0].abs() < 1e-9);
    }

    #[test]
    fn dual_matches_primal_on_small_path() {
        let inst = Instance::base(4, &[0.5, 0.25], 0.1, ArrivalSpec::UniformSingle {}).with_penalties(2.0, 3.0);
        let path = SamplePath {
            arrivals: vec![
                ArrivalType::free(vec![0.9, 0.4]),
                ArrivalType::tied(vec![0.3, 0.8], 1),
                ArrivalType::free(vec![0.6, 0.7]),
                ArrivalType::free(vec![0.2, 0.95]),
            ],
            services: vec![
                Grid::column(&[0.0, 1.0]),
                Grid::column(&[1.0, 0.0]),
                Grid::column(&[0.0, 0.0]),
                Grid::column(&[1.0, 1.0]),
            ],
        };
        let sol = solve_opt(&inst, &path).unwrap();
        let cert = sol.dual_certificate.unwrap();
        assert!(cert.tied_within_capacity);
        assert!((cert.value - sol.objective_value).abs() < 1e-7, "{} vs {}", cert.value, sol.objective_value);
        let brute = brute_force_opt(&inst, &path).unwrap();
        assert!(sol.objective_value >= brute.objective_value - 1e-9);
    }

    #[test]
    fn fast_single_affiliate_matches_lp() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..60 {
            let horizon = rng.random_range(1..25);
            let rho = rng.random_range(0.05..0.9);
            let gamma = rng.random_range(0.0..8.0);
            let inst = Instance::base(horizon, &[rho], 0.05, ArrivalSpec::UniformSingle {}).with_penalties(3.0, gamma);
            let path = SamplePath {
                arrivals: (0..horizon).map(|_| ArrivalType::free(vec![rng.random()])).collect(),
                services: (0..horizon).map(|_| Grid::column(&[if rng.random_bool(0.5) { 1.0 } else { 0.0 }])).collect(),
            };
            let fast = opt_value(&inst, &path).unwrap();
            let lp = solve_opt(&inst, &path).unwrap().objective_value;
            assert!((fast - lp).abs() < 1e-7, "fast {fast} lp {lp}");
        }
    }

    #[test]
    fn brute_force_two_period() {
        let inst = Instance::base(2, &[0.5], 0.0, ArrivalSpec::UniformSingle {}).with_penalties(3.0, 5.0);
        let path = SamplePath {
            arrivals: vec![ArrivalType::free(vec![0.6]), ArrivalType::free(vec![0.8])],
            services: vec![Grid::column(&[1.0]); 2],
        };
        let sol = brute_force_opt(&inst, &path).unwrap();
        assert!((sol.objective_value - 0.8).abs() < 1e-12);
        assert_eq!(sol.decisions[1].matched(), Some(0));
        let lp = solve_opt(&inst, &path).unwrap();
        assert!((lp.objective_value - 0.8).abs() < 1e-9);
    }

    #[test]
    fn brute_force_zero_rewards() {
        let inst = Instance::base(3, &[0.5], 0.1, ArrivalSpec::UniformSingle {}).with_penalties(1.0, 1.0);
        let path = SamplePath {
            arrivals: vec![ArrivalType::free(vec![0.0]); 3],
            services: vec![Grid::column(&[1.0]); 3],
        };
        let sol = brute_force_opt(&inst, &path).unwrap();
        assert_eq!(sol.objective_value, 0.0);
        assert!(sol.decisions.iter().all(|d| d.matched().is_none()));
        let big = SamplePath {
            arrivals: vec![ArrivalType::free(vec![0.0]); 13],
            services: vec![Grid::column(&[1.0]); 13],
        };
        assert!(matches!(brute_force_opt(&inst.with_horizon(13), &big), Err(Error::TooLarge(_))));
    }

    #[test]
    fn surrogate_top_rewards() {
        let arrivals: Vec<ArrivalType> = [0.3, 0.9, 0.1, 0.7, 0.5].iter().map(|&w| ArrivalType::free(vec![w])).collect();
        let inst = Instance::base(5, &[0.5], 0.1, ArrivalSpec::UniformSingle {}).with_penalties(1.0, 7.0);
        // capacity 2.5: two full matches and half of the third.
        let sol = solve_surrogate_primal(&inst, &arrivals).unwrap();
        assert!((sol.objective_value - (0.9 + 0.7 + 0.25)).abs() < 1e-12);
        let lp = {
            let inst2 = Instance::base(5, &[0.5, 1e-9], 0.1, ArrivalSpec::UniformSingle {}).with_penalties(1.0, 0.0);
            let two: Vec<ArrivalType> = arrivals.iter().map(|a| ArrivalType::free(vec![a.reward[0], 0.0])).collect();
            solve_surrogate_primal(&inst2, &two).unwrap().objective_value
        };
        assert!((lp - sol.objective_value).abs() < 1e-7);
    }

    #[test]
    fn static_dual_median() {
        let inst = Instance::base(4, &[0.5], 0.1, ArrivalSpec::UniformSingle {}).with_penalties(3.0, 0.0);
        let sample: Vec<ArrivalType> = [0.2, 0.9, 0.6, 0.4].iter().map(|&w| ArrivalType::free(vec![w])).collect();
        let input = StaticDualInput::Sample(sample);
        let sol = solve_static_dual(&input, &inst).unwrap();
        assert!((sol.phi[0] - 0.4).abs() < 1e-12);
        let grid_min = (0..=1000)
            .map(|k| static_dual_value(&input, &[0.5], &[k as f64 / 1000.0]))
            .fold(f64::INFINITY, f64::min);
        assert!((sol.value - grid_min).abs() < 1e-12);
        assert_eq!(sol.theta[0] + sol.lambda[0], sol.phi[0]);
    }

    #[test]
    fn static_dual_degenerate() {
        let inst = Instance::base(4, &[1.0], 0.0, ArrivalSpec::UniformSingle {}).with_penalties(3.0, 0.0);
        let input = StaticDualInput::Sample(vec![ArrivalType::free(vec![0.7]); 5]);
        let sol = solve_static_dual(&input, &inst).unwrap();
        assert_eq!(sol.phi[0], 0.0);
        assert!((sol.value - 0.7).abs() < 1e-12);
    }

    #[test]
    fn static_dual_lp_path_agrees_with_closed_form() {
        let inst = Instance::base(6, &[0.5, 0.3], 0.1, ArrivalSpec::UniformSingle {}).with_penalties(3.0, 0.0);
        let sample: Vec<ArrivalType> = [0.2, 0.9, 0.6, 0.4, 0.75, 0.1]
            .iter()
            .map(|&w| ArrivalType::free(vec![w, 0.0]))
            .collect();
        let input = StaticDualInput::Sample(sample);
        let sol = solve_static_dual(&input, &inst).unwrap();
        let grid_min = (0..=100)
            .map(|k| static_dual_value(&input, &[0.5, 0.3], &[k as f64 / 100.0, 0.0]))
            .fold(f64::INFINITY, f64::min);
        assert!((sol.value - grid_min).abs() < 1e-9);
    }

    #[test]
    fn dp_one_period() {
        for gamma in [0.0, 1.0, 10.0] {
            assert!((dp_oracle_single_affiliate(1, gamma).unwrap().value - 0.5).abs() < 1e-15);
        }
        assert!(dp_oracle_single_affiliate(0, 1.0).is_err());
        assert!(dp_oracle_single_affiliate(DP_MAX_HORIZON + 1, 1.0).is_err());
    }

    #[test]
    fn dp_bounded_by_half_horizon() {
        for horizon in [2, 10, 57, 200] {
            for gamma in [0.0, 1.0, 4.0, 25.0] {
                let dp = dp_oracle_single_affiliate(horizon, gamma).unwrap();
                assert!(dp.value <= 0.5 * horizon as f64 + 1e-9);
                assert!(dp.non_threshold_periods.is_empty(), "T={horizon} gamma={gamma}");
            }
        }
    }
}
