//! Multi-resource matching (each case consumes several resource types at its
//! affiliate) and the idle-server service model.

use crate::algorithms::{argmax, DecisionContext, DualState, Policy, StepSchedule};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::model::{step_backlog, ArrivalType, Decision, Instance, PathState, ServiceDraw, ServiceMode, FEAS_TOL};

/// Prices on every (affiliate, resource type) pair; the same type as the
/// base model, whose grids have a single column.
pub type GeneralizedDualState = DualState;

/// `w_i - sum_j n_ij (theta_ij + lambda_ij + zeta b_ij)` for each affiliate.
pub fn generalized_scores(duals: &DualState, state: &PathState, arrival: &ArrivalType) -> Vec<f64> {
    let l = duals.theta.cols();
    (0..arrival.reward.len())
        .map(|i| {
            let mut price = 0.0;
            for j in 0..l {
                price += arrival.usage(i, j)
                    * (duals.theta.get(i, j) + duals.lambda.get(i, j) + duals.zeta * state.backlog.get(i, j));
            }
            arrival.reward[i] - price
        })
        .collect()
}

/// Highest non-negative score while every resource type still has room;
/// tied cases go to their affiliate.
pub fn cadl_m_decide(duals: &DualState, instance: &Instance, state: &PathState, arrival: &ArrivalType) -> Decision {
    let m = instance.m;
    if let Some(i) = arrival.tied_to() {
        return Decision::unit(m, i);
    }
    let open = (0..m).all(|i| (0..instance.l).all(|j| state.free_allowance(instance, i, j) > FEAS_TOL));
    if !open {
        return Decision::zero(m);
    }
    match argmax(generalized_scores(duals, state, arrival)) {
        Some((i, score)) if score >= 0.0 && state.free_fits(instance, i, arrival) => Decision::unit(m, i),
        _ => Decision::zero(m),
    }
}

/// Multiplicative update with gradient `n_ij z_i - rho_ij`.
pub fn cadl_m_update(duals: &mut DualState, decision: &Decision, arrival: &ArrivalType, instance: &Instance) {
    let (m, l) = (instance.m, instance.l);
    let mut gradient = Grid::zeros(m, l);
    for i in 0..m {
        for j in 0..l {
            gradient.set(i, j, arrival.usage(i, j) * decision.z[i] - instance.rho.get(i, j));
        }
    }
    let eta = duals.step_size();
    duals.apply(&gradient, eta);
    duals.t += 1;
}

/// One period under idle-server service.
pub fn idle_step(
    instance: &Instance,
    state: &PathState,
    decision: &Decision,
    draw: &ServiceDraw,
    arrival: &ArrivalType,
) -> Result<PathState> {
    if instance.service_mode != ServiceMode::Idle {
        return Err(Error::InvalidParameter("idle_step needs service_mode = idle".into()));
    }
    step_backlog(instance, state, decision, draw, arrival)
}

/// Multi-resource dual policies.
#[derive(Clone, Debug)]
pub struct GeneralizedPolicy {
    pub duals: DualState,
    label: &'static str,
}

impl GeneralizedPolicy {
    pub fn ca_dl_m(instance: &Instance, eta: f64, zeta: f64) -> Self {
        GeneralizedPolicy {
            duals: DualState::new(instance, zeta, StepSchedule::Fixed(eta)),
            label: "ca-dl-m",
        }
    }

    pub fn co_dl_m(instance: &Instance, k: f64) -> Self {
        GeneralizedPolicy {
            duals: DualState::new(instance, 0.0, StepSchedule::InvSqrt(k)),
            label: "co-dl-m",
        }
    }
}

impl Policy for GeneralizedPolicy {
    fn name(&self) -> &str {
        self.label
    }

    fn decide(&mut self, ctx: &mut DecisionContext<'_>, batch: &[ArrivalType]) -> Result<Vec<Decision>> {
        Ok(batch
            .iter()
            .map(|a| {
                let d = cadl_m_decide(&self.duals, ctx.instance, ctx.state, a);
                cadl_m_update(&mut self.duals, &d, a, ctx.instance);
                d
            })
            .collect())
    }

    fn duals(&self) -> Option<&DualState> {
        Some(&self.duals)
    }
}
