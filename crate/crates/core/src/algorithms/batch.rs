use microlp::{ComparisonOp, OptimizationDirection, Problem, Variable};

use super::{argmax, DecisionContext, DualState, Policy};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::model::{ArrivalType, Decision, Instance, PathState, FEAS_TOL};
use crate::offline::solve;

/// Integral free-case room per affiliate for the whole batch, counting tied
/// cases inside the batch against the capacity.
fn batch_free_room(instance: &Instance, state: &PathState, batch: &[ArrivalType]) -> Vec<f64> {
    (0..instance.m)
        .map(|i| {
            let tied_here = batch.iter().filter(|a| a.tied_to() == Some(i)).count() as f64;
            let cap = instance.capacity(i, 0) - state.cum_tied_matched.get(i, 0) - tied_here;
            (cap.max(0.0) - state.cum_free_matched.get(i, 0)).max(0.0) + FEAS_TOL
        })
        .map(f64::floor)
        .collect()
}

fn scores(duals: &DualState, state: &PathState, batch: &[ArrivalType]) -> Vec<Vec<f64>> {
    batch
        .iter()
        .enumerate()
        .map(|(k, a)| {
            (0..a.reward.len())
                .map(|i| {
                    let first = if k == 0 { duals.zeta * state.backlog.get(i, 0) } else { 0.0 };
                    a.reward[i] - duals.theta.get(i, 0) - duals.lambda.get(i, 0) - first
                })
                .collect()
        })
        .collect()
}

/// The within-batch program. Free cases must be matched somewhere; a slack
/// with a large penalty covers batches whose capacity runs out.
struct BatchProgram<'a> {
    instance: &'a Instance,
    state: &'a PathState,
    batch: &'a [ArrivalType],
    room: Vec<f64>,
    /// Adds over-allocation and deterministic-flow backlog terms.
    congestion: bool,
}

impl BatchProgram<'_> {
    fn solve(&self, duals: &DualState) -> Result<Vec<Vec<f64>>> {
        let (m, size) = (self.instance.m, self.batch.len());
        let score = scores(duals, self.state, self.batch);
        let spread = score.iter().flatten().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let big = 1.0 + 2.0 * (spread + self.instance.alpha + self.instance.gamma);
        let mut lp = Problem::new(OptimizationDirection::Maximize);
        let z: Vec<Option<Vec<Variable>>> = self
            .batch
            .iter()
            .zip(&score)
            .map(|(a, s)| a.is_free().then(|| (0..m).map(|i| lp.add_var(s[i], (0.0, 1.0))).collect()))
            .collect();
        for vars in z.iter().flatten() {
            let slack = lp.add_var(-big, (0.0, 1.0));
            let mut row: Vec<(Variable, f64)> = vars.iter().map(|&v| (v, 1.0)).collect();
            row.push((slack, 1.0));
            lp.add_constraint(row.as_slice(), ComparisonOp::Eq, 1.0);
        }
        for i in 0..m {
            let row: Vec<(Variable, f64)> = z.iter().flatten().map(|v| (v[i], 1.0)).collect();
            if !row.is_empty() {
                lp.add_constraint(row.as_slice(), ComparisonOp::Le, self.room[i]);
            }
        }
        if self.congestion {
            let g = self.instance.gamma / size as f64;
            for i in 0..m {
                let tied_here = self.batch.iter().filter(|a| a.tied_to() == Some(i)).count() as f64;
                let over = lp.add_var(-self.instance.alpha, (0.0, f64::INFINITY));
                let mut row: Vec<(Variable, f64)> = z.iter().flatten().map(|v| (v[i], 1.0)).collect();
                row.push((over, -1.0));
                lp.add_constraint(row.as_slice(), ComparisonOp::Le, self.state.remaining.get(i, 0) - tied_here);
                if g > 0.0 {
                    let rho = self.instance.rho.get(i, 0);
                    let mut prev: Option<Variable> = None;
                    for (k, a) in self.batch.iter().enumerate() {
                        let b = lp.add_var(-g, (0.0, f64::INFINITY));
                        let mut row = vec![(b, 1.0)];
                        let mut rhs = -rho;
                        match prev {
                            Some(p) => row.push((p, -1.0)),
                            None => rhs += self.state.backlog.get(i, 0),
                        }
                        match &z[k] {
                            Some(vars) => row.push((vars[i], -1.0)),
                            None if a.tied_to() == Some(i) => rhs += 1.0,
                            None => {}
                        }
                        lp.add_constraint(row.as_slice(), ComparisonOp::Ge, rhs);
                        prev = Some(b);
                    }
                }
            }
        }
        let solution = solve(&lp)?;
        Ok(z
            .iter()
            .zip(self.batch)
            .map(|(vars, a)| match vars {
                Some(v) => v.iter().map(|&x| solution.var_value(x).clamp(0.0, 1.0)).collect(),
                None => Decision::unit(m, a.tied_to().unwrap()).z,
            })
            .collect())
    }
}

fn batch_gradient(instance: &Instance, plan: &[Vec<f64>]) -> Grid {
    let gradient: Vec<f64> = (0..instance.m)
        .map(|i| plan.iter().map(|z| z[i] - instance.rho.get(i, 0)).sum())
        .collect();
    Grid::column(&gradient)
}

fn tag(batch_index: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Solver(msg) => Error::Solver(format!("batch {batch_index}: {msg}")),
        other => other,
    }
}

/// Maximises the summed adjusted scores over a batch (backlog term on the
/// first case only), then applies one batched dual update at step `eta`.
pub fn batch_b_decide(
    duals: &mut DualState,
    instance: &Instance,
    state: &PathState,
    batch: &[ArrivalType],
) -> Result<Vec<Decision>> {
    let program = BatchProgram {
        instance,
        state,
        batch,
        room: batch_free_room(instance, state, batch),
        congestion: false,
    };
    let plan = program.solve(duals)?;
    let decisions: Vec<Decision> = plan
        .iter()
        .map(|z| Decision {
            z: z.iter().map(|&v| if v > 0.5 { 1.0 } else { 0.0 }).collect(),
        })
        .collect();
    let rounded: Vec<Vec<f64>> = decisions.iter().map(|d| d.z.clone()).collect();
    let eta = duals.step_size();
    duals.apply(&batch_gradient(instance, &rounded), eta);
    duals.t += 1;
    Ok(decisions)
}

/// Alternates `iterations` solves of the congestion-aware batch program with
/// dual steps of size `eta / iterations`, then rounds the last iterate to its
/// largest coordinate.
pub fn batch_iterate_decide(
    duals: &mut DualState,
    instance: &Instance,
    state: &PathState,
    batch: &[ArrivalType],
    iterations: usize,
) -> Result<Vec<Decision>> {
    if iterations == 0 {
        return Err(Error::InvalidParameter("batch iterations must be at least 1".into()));
    }
    let room = batch_free_room(instance, state, batch);
    let program = BatchProgram {
        instance,
        state,
        batch,
        room: room.clone(),
        congestion: true,
    };
    let eta = duals.step_size() / iterations as f64;
    let mut plan = Vec::new();
    for _ in 0..iterations {
        plan = program.solve(duals)?;
        duals.apply(&batch_gradient(instance, &plan), eta);
    }
    duals.t += 1;
    let m = instance.m;
    let mut used = vec![0.0; m];
    Ok(plan
        .iter()
        .zip(batch)
        .map(|(z, a)| {
            if let Some(i) = a.tied_to() {
                return Decision::unit(m, i);
            }
            let mut order: Vec<usize> = (0..m).filter(|&i| z[i] > FEAS_TOL).collect();
            order.sort_by(|&x, &y| z[y].total_cmp(&z[x]).then(x.cmp(&y)));
            debug_assert!(order.first() == argmax(z.iter().copied()).map(|(i, _)| i).as_ref() || order.is_empty());
            match order.into_iter().find(|&i| used[i] + 1.0 <= room[i] + FEAS_TOL) {
                Some(i) => {
                    used[i] += 1.0;
                    Decision::unit(m, i)
                }
                None => Decision::zero(m),
            }
        })
        .collect())
}

/// Batched robust variant.
#[derive(Clone, Debug)]
pub struct RoLearningB {
    pub duals: DualState,
    batch: usize,
    batches_done: usize,
}

impl RoLearningB {
    pub fn new(duals: DualState, batch: usize) -> Self {
        RoLearningB {
            duals,
            batch: batch.max(1),
            batches_done: 0,
        }
    }
}

impl Policy for RoLearningB {
    fn name(&self) -> &str {
        "ro-learning-b"
    }

    fn batch_size(&self) -> usize {
        self.batch
    }

    fn decide(&mut self, ctx: &mut DecisionContext<'_>, batch: &[ArrivalType]) -> Result<Vec<Decision>> {
        let out = batch_b_decide(&mut self.duals, ctx.instance, ctx.state, batch).map_err(tag(self.batches_done))?;
        self.batches_done += 1;
        Ok(out)
    }

    fn duals(&self) -> Option<&DualState> {
        Some(&self.duals)
    }
}

/// Batched primal-dual variant with inner iterations.
#[derive(Clone, Debug)]
pub struct RoLearningBIterate {
    pub duals: DualState,
    batch: usize,
    iterations: usize,
    batches_done: usize,
}

impl RoLearningBIterate {
    pub fn new(duals: DualState, batch: usize, iterations: usize) -> Self {
        RoLearningBIterate {
            duals,
            batch: batch.max(1),
            iterations: iterations.max(1),
            batches_done: 0,
        }
    }
}

impl Policy for RoLearningBIterate {
    fn name(&self) -> &str {
        "ro-learning-b-iterate"
    }

    fn batch_size(&self) -> usize {
        self.batch
    }

    fn decide(&mut self, ctx: &mut DecisionContext<'_>, batch: &[ArrivalType]) -> Result<Vec<Decision>> {
        let out = batch_iterate_decide(&mut self.duals, ctx.instance, ctx.state, batch, self.iterations)
            .map_err(tag(self.batches_done))?;
        self.batches_done += 1;
        Ok(out)
    }

    fn duals(&self) -> Option<&DualState> {
        Some(&self.duals)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algorithms::{cadl_update, ro_learning_decide, StepSchedule};
    use crate::instances::ArrivalSpec;

    fn inst(rho: &[f64], horizon: usize) -> Instance {
        Instance::base(horizon, rho, 0.1, ArrivalSpec::UniformSingle {}).with_penalties(3.0, 5.0)
    }

    #[test]
    fn batch_of_one_reduces_to_robust_rule() {
        let instance = inst(&[0.3, 0.3], 10);
        let mut state = PathState::new(&instance);
        state.backlog = Grid::column(&[1.0, 0.0]);
        for a in [
            ArrivalType::free(vec![0.9, 0.5]),
            ArrivalType::free(vec![0.1, 0.2]),
            ArrivalType::tied(vec![0.4, 0.4], 1),
        ] {
            let mut batched = DualState::new(&instance, 0.3, StepSchedule::Fixed(0.2));
            let mut single = batched.clone();
            let d = batch_b_decide(&mut batched, &instance, &state, std::slice::from_ref(&a)).unwrap();
            let expected = ro_learning_decide(&single, &instance, &state, &a);
            cadl_update(&mut single, &expected, &instance);
            assert_eq!(d, vec![expected]);
            assert!((batched.theta.get(0, 0) - single.theta.get(0, 0)).abs() < 1e-15);
            assert!((batched.lambda.get(1, 0) - single.lambda.get(1, 0)).abs() < 1e-15);
        }
    }

    #[test]
    fn shared_unit_of_capacity() {
        // Affiliate 1 has one unit of room left; the better case takes it.
        let instance = inst(&[0.1, 0.5], 10);
        let mut state = PathState::new(&instance);
        state.cum_free_matched.set(0, 0, 0.0);
        state.cum_tied_matched.set(0, 0, 0.0);
        let duals = DualState::new(&instance, 0.0, StepSchedule::Fixed(0.0));
        let batch = vec![ArrivalType::free(vec![0.9, 0.5]), ArrivalType::free(vec![0.8, 0.6])];
        let mut d = duals.clone();
        let out = batch_b_decide(&mut d, &instance, &state, &batch).unwrap();
        // Enumeration: (1,1) infeasible; (1,2) scores 0.9+0.6, (2,1) 0.5+0.8.
        assert_eq!(out[0].matched(), Some(0));
        assert_eq!(out[1].matched(), Some(1));
    }

    #[test]
    fn all_tied_batch_updates_duals() {
        let instance = inst(&[0.5], 10);
        let state = PathState::new(&instance);
        let mut duals = DualState::new(&instance, 0.0, StepSchedule::Fixed(0.1));
        let batch = vec![ArrivalType::tied(vec![0.2], 0); 3];
        let out = batch_b_decide(&mut duals, &instance, &state, &batch).unwrap();
        assert!(out.iter().all(|d| *d == Decision::unit(1, 0)));
        let expected = ((-1.0f64) + 0.1 * 1.5).exp();
        assert!((duals.theta.get(0, 0) - expected).abs() < 1e-12);
    }

    #[test]
    fn tied_iterations_compose() {
        let instance = inst(&[0.5], 10);
        let state = PathState::new(&instance);
        let batch = vec![ArrivalType::tied(vec![0.2], 0)];
        let mut iterated = DualState::new(&instance, 0.0, StepSchedule::Fixed(0.1));
        let out = batch_iterate_decide(&mut iterated, &instance, &state, &batch, 4).unwrap();
        assert_eq!(out, vec![Decision::unit(1, 0)]);
        let mut once = DualState::new(&instance, 0.0, StepSchedule::Fixed(0.1));
        once.apply(&Grid::column(&[0.5]), 0.1);
        assert!((iterated.theta.get(0, 0) - once.theta.get(0, 0)).abs() < 1e-12);
    }

    #[test]
    fn iterate_without_congestion_matches_batch_primal() {
        let instance = Instance::base(10, &[0.2, 0.3], 0.1, ArrivalSpec::UniformSingle {}).with_penalties(3.0, 0.0);
        let state = PathState::new(&instance);
        let batch = vec![
            ArrivalType::free(vec![0.9, 0.5]),
            ArrivalType::free(vec![0.3, 0.7]),
            ArrivalType::free(vec![0.6, 0.1]),
        ];
        let mut a = DualState::new(&instance, 0.0, StepSchedule::Fixed(0.1));
        let mut b = a.clone();
        assert_eq!(
            batch_b_decide(&mut a, &instance, &state, &batch).unwrap(),
            batch_iterate_decide(&mut b, &instance, &state, &batch, 1).unwrap()
        );
    }

    #[test]
    fn inner_backlog_follows_flow() {
        let instance = Instance::base(10, &[0.5], 0.1, ArrivalSpec::UniformSingle {}).with_penalties(3.0, 4.0);
        let state = PathState::new(&instance);
        let batch = vec![ArrivalType::free(vec![0.9]), ArrivalType::free(vec![0.9])];
        let program = BatchProgram {
            instance: &instance,
            state: &state,
            batch: &batch,
            room: batch_free_room(&instance, &state, &batch),
            congestion: true,
        };
        let duals = DualState::new(&instance, 0.0, StepSchedule::Fixed(0.1));
        let plan = program.solve(&duals).unwrap();
        // Both cases must be matched; flow backlog is (0.5, 1.0) and the program value is
        // 2 * (0.9 - 2/e) - 2 * (0.5 + 1.0).
        let mut flow = 0.0;
        let mut total = 0.0;
        for z in &plan {
            flow = (flow + z[0] - 0.5f64).max(0.0);
            total += flow;
        }
        assert!((plan[0][0] - 1.0).abs() < 1e-9 && (plan[1][0] - 1.0).abs() < 1e-9);
        assert!((total - 1.5).abs() < 1e-9);
    }
}
