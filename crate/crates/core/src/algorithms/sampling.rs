use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;

use super::{DecisionContext, Policy};
use crate::error::{Error, Result};
use crate::instances::Trace;
use crate::model::{ArrivalType, Decision, Instance, PathState};
use crate::offline::solve_surrogate;

/// Current reward reduced by the waiting time implied by the backlog:
/// `w - (gamma/T) * ceil((b - rho)/rho)` when `b > 0`.
pub fn penalized_reward(reward: f64, backlog: f64, rho: f64, gamma: f64, horizon: usize) -> f64 {
    if backlog > 0.0 {
        reward - gamma / horizon as f64 * ((backlog - rho) / rho).ceil()
    } else {
        reward
    }
}

/// Where simulated futures come from.
#[derive(Clone, Copy, Debug)]
pub enum Future<'a> {
    /// Resample the remaining arrivals from a trace, with replacement.
    Pool(&'a Trace),
    /// Use the given arrivals as the future in every replication.
    Known(&'a [ArrivalType]),
}

/// Re-solves the backlog-free program on `replications` simulated futures and
/// returns the affiliate case `t` went to most often (lowest index on ties,
/// leaving it unmatched only when that wins outright).
pub fn sampling_decide(
    instance: &Instance,
    state: &PathState,
    arrival: &ArrivalType,
    future: Future<'_>,
    replications: usize,
    rng: &mut impl Rng,
) -> Result<Decision> {
    let m = instance.m;
    if let Some(i) = arrival.tied_to() {
        return Ok(Decision::unit(m, i));
    }
    if replications == 0 {
        return Err(Error::InvalidParameter("sampling needs at least one replication".into()));
    }
    let horizon = instance.horizon;
    let steps_left = horizon.saturating_sub(state.t + 1);
    let futures: Vec<Vec<ArrivalType>> = match future {
        Future::Pool(pool) => {
            if pool.is_empty() {
                return Err(Error::InvalidParameter("sampling pool is empty".into()));
            }
            (0..replications)
                .map(|_| {
                    (0..steps_left)
                        .map(|_| pool.arrivals[rng.random_range(0..pool.len())].clone())
                        .collect()
                })
                .collect()
        }
        Future::Known(rest) => vec![rest.to_vec(); replications],
    };
    let current = ArrivalType {
        reward: (0..m)
            .map(|i| {
                penalized_reward(
                    arrival.reward[i],
                    state.backlog.get(i, 0),
                    instance.service_rate(i, 0),
                    instance.gamma,
                    horizon,
                )
            })
            .collect(),
        ..arrival.clone()
    };
    let capacity: Vec<f64> = (0..m).map(|i| state.remaining.get(i, 0)).collect();
    let votes: Vec<Option<usize>> = futures
        .into_par_iter()
        .map(|rest| {
            let mut program = Vec::with_capacity(rest.len() + 1);
            program.push(current.clone());
            program.extend(rest);
            let plan = solve_surrogate(&program, &capacity, instance.alpha)?;
            let z = &plan.decisions[0].z;
            let unmatched = 1.0 - z.iter().sum::<f64>();
            Ok(super::argmax(z.iter().copied()).and_then(|(i, v)| (v > unmatched).then_some(i)))
        })
        .collect::<Result<_>>()?;
    let mut tally = vec![0usize; m + 1];
    for v in &votes {
        tally[v.unwrap_or(m)] += 1;
    }
    let winner = super::argmax(tally.iter().map(|&c| c as f64)).map(|(i, _)| i).unwrap_or(m);
    if winner < m && state.free_fits(instance, winner, arrival) {
        Ok(Decision::unit(m, winner))
    } else {
        Ok(Decision::zero(m))
    }
}

#[derive(Clone, Debug)]
enum Source {
    Pool(Arc<Trace>),
    Hindsight,
}

/// Re-solving benchmark built on [`sampling_decide`].
#[derive(Clone, Debug)]
pub struct Sampling {
    source: Source,
    replications: usize,
}

impl Sampling {
    pub fn new(pool: Arc<Trace>, replications: usize) -> Self {
        Sampling {
            source: Source::Pool(pool),
            replications,
        }
    }

    /// Uses the realised remaining arrivals as the only simulated future.
    pub fn hindsight(replications: usize) -> Self {
        Sampling {
            source: Source::Hindsight,
            replications,
        }
    }
}

impl Policy for Sampling {
    fn name(&self) -> &str {
        "sampling"
    }

    fn decide(&mut self, ctx: &mut DecisionContext<'_>, batch: &[ArrivalType]) -> Result<Vec<Decision>> {
        let mut out = Vec::with_capacity(batch.len());
        for (k, arrival) in batch.iter().enumerate() {
            let rest: Vec<ArrivalType>;
            let future = match &self.source {
                Source::Pool(pool) => Future::Pool(pool),
                Source::Hindsight => {
                    rest = batch[k + 1..].iter().chain(ctx.future).cloned().collect();
                    Future::Known(&rest)
                }
            };
            out.push(sampling_decide(ctx.instance, ctx.state, arrival, future, self.replications, ctx.rng)?);
        }
        Ok(out)
    }
}
