mod common;

use approx::assert_relative_eq;
use common::{path_for, random_instance, rng};
use dualmatch::algorithms::{
    cadl_decide, cadl_update, run_episode, AlgorithmSpec, DecisionContext, DualPolicy, DualRule, DualState, Policy,
    StepSchedule,
};
use dualmatch::generalized::GeneralizedPolicy;
use dualmatch::harness::{for_each_path, run_experiment, ExperimentConfig};
use dualmatch::instances::{path_rng, sample_path, ArrivalGenerator, ArrivalSpec, PathSeeds, Purpose};
use dualmatch::model::{
    check_capacity_feasibility, drift_diagnostics, evaluate_objective, psi, score_unchecked,
};
use dualmatch::offline::{dp_oracle_single_affiliate, solve_opt, solve_static_dual, StaticDualInput};
use dualmatch::{ArrivalType, Decision, Grid, Instance, PathState, SamplePath, ServiceDraw, ServiceMode};
use proptest::prelude::*;
use rand::Rng;

fn random_decisions(path: &SamplePath, m: usize, rng: &mut impl Rng) -> Vec<Decision> {
    path.arrivals
        .iter()
        .map(|a| match a.tied_to() {
            Some(i) => Decision::unit(m, i),
            None => {
                let k = rng.random_range(0..=m);
                if k == m {
                    Decision::zero(m)
                } else {
                    Decision::unit(m, k)
                }
            }
        })
        .collect()
}

/// Straight-line recomputation of reward, over-allocation and backlog.
fn objective_by_hand(instance: &Instance, path: &SamplePath, decisions: &[Decision]) -> f64 {
    let m = instance.m;
    let mut backlog = vec![0.0; m];
    let mut used = vec![0.0; m];
    let mut reward = 0.0;
    let mut backlog_total = 0.0;
    for t in 0..path.len() {
        for i in 0..m {
            let z = decisions[t].z[i];
            reward += path.arrivals[t].reward[i] * z;
            used[i] += z;
            backlog[i] = f64::max(backlog[i] + z - path.services[t].get(i, 0), 0.0);
            backlog_total += backlog[i];
        }
    }
    let over: f64 = (0..m).map(|i| f64::max(used[i] - instance.capacity(i, 0), 0.0)).sum();
    reward - instance.alpha * over - instance.gamma * backlog_total / instance.horizon as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn drift_two_sided_bound(
        backlog in prop::collection::vec(0u32..30, 1..5),
        pick in 0usize..6,
        services in prop::collection::vec(any::<bool>(), 5),
    ) {
        let m = backlog.len();
        let prev: Vec<f64> = backlog.iter().map(|&b| b as f64).collect();
        let decision = if pick < m { Decision::unit(m, pick) } else { Decision::zero(m) };
        let s: Vec<f64> = services[..m].iter().map(|&x| if x { 1.0 } else { 0.0 }).collect();
        let inst = Instance::base(10, &vec![0.2; m], 0.1, ArrivalSpec::UniformSingle {});
        let duals = DualState::new(&inst, 0.5, StepSchedule::Fixed(0.1));
        let rec = drift_diagnostics(&prev, &decision, &s, &duals, &ArrivalType::free(vec![0.5; m]), &vec![0.2; m]);
        let next: Vec<f64> = (0..m).map(|i| (prev[i] + decision.z[i] - s[i]).max(0.0)).collect();
        let drift = psi(&next) - psi(&prev);
        let linear: f64 = (0..m).map(|i| prev[i] * (decision.z[i] - s[i])).sum();
        prop_assert_eq!(rec.drift, drift);
        prop_assert!(linear <= drift + 1e-12);
        prop_assert!(drift <= linear + (1 + m) as f64 / 2.0 + 1e-12);
    }

    #[test]
    fn backlog_non_negative_and_integral(seed in any::<u64>(), m in 1usize..4) {
        let mut r = rng(seed);
        let inst = random_instance(&mut r, m, 60);
        let path = path_for(&inst, seed, 0);
        let decisions = random_decisions(&path, m, &mut r);
        let mut state = PathState::new(&inst);
        for t in 0..path.len() {
            state.advance(&inst, &decisions[t], &path.draw(t), &path.arrivals[t]).unwrap();
            for &b in state.backlog.as_slice() {
                prop_assert!(b >= 0.0);
                prop_assert_eq!(b.fract(), 0.0);
            }
        }
    }

    #[test]
    fn idle_mode_dominates(seed in any::<u64>(), m in 1usize..4) {
        let mut r = rng(seed);
        let base = random_instance(&mut r, m, 80);
        let idle = base.clone().with_service(ServiceMode::Idle);
        let path = path_for(&base, seed, 0);
        let decisions = random_decisions(&path, m, &mut r);
        let mut plain = PathState::new(&base);
        let mut parked = PathState::new(&idle);
        for t in 0..path.len() {
            let draw = path.draw(t);
            let u = draw.effective(&parked);
            for k in 0..m {
                prop_assert!(u.as_slice()[k] >= draw.s.as_slice()[k]);
            }
            let queued: Vec<f64> = (0..m).map(|i| parked.backlog.get(i, 0) + decisions[t].z[i]).collect();
            plain.advance(&base, &decisions[t], &draw, &path.arrivals[t]).unwrap();
            parked.advance(&idle, &decisions[t], &draw, &path.arrivals[t]).unwrap();
            for i in 0..m {
                prop_assert!(parked.backlog.get(i, 0) <= plain.backlog.get(i, 0));
                if parked.idle[i] {
                    prop_assert_eq!(queued[i], 0.0);
                }
            }
        }
    }

    #[test]
    fn objective_matches_hand_recomputation(seed in any::<u64>(), m in 1usize..4, horizon in 1usize..9) {
        let mut r = rng(seed);
        let inst = random_instance(&mut r, m, horizon);
        let path = path_for(&inst, seed, 1);
        let decisions = random_decisions(&path, m, &mut r);
        let scored = score_unchecked(&inst, &path, &decisions).unwrap();
        assert_relative_eq!(scored.objective, objective_by_hand(&inst, &path, &decisions), epsilon = 1e-12);
        if let Ok(checked) = evaluate_objective(&inst, &path, &decisions) {
            prop_assert_eq!(checked.objective, scored.objective);
        }
    }

    #[test]
    fn duals_stay_in_box_and_shadow_tracks_backlog(seed in any::<u64>(), m in 1usize..5) {
        let mut r = rng(seed);
        let inst = random_instance(&mut r, m, 200);
        let path = path_for(&inst, seed, 2);
        let (eta, zeta) = (r.random_range(0.01..1.0), r.random_range(0.0..2.0));
        let mut duals = DualState::new(&inst, zeta, StepSchedule::Fixed(eta));
        let mut state = PathState::new(&inst);
        let mut shadow = vec![0.0; m];
        let lambda_cap = (1.0 + 2.0 * inst.alpha) / inst.min_rho();
        for t in 0..path.len() {
            let a = &path.arrivals[t];
            let d = cadl_decide(&duals, &inst, &state, a);
            prop_assert!(check_capacity_feasibility(&inst, &state, &d, a));
            cadl_update(&mut duals, &d, &inst);
            for i in 0..m {
                prop_assert!((0.0..=inst.alpha).contains(&duals.theta.get(i, 0)));
                prop_assert!((0.0..=lambda_cap).contains(&duals.lambda.get(i, 0)));
            }
            let s = path.services[t].first_column();
            state.advance(&inst, &d, &path.draw(t), a).unwrap();
            for i in 0..m {
                shadow[i] = f64::max(shadow[i] + zeta * (d.z[i] - s[i]), 0.0);
                assert_relative_eq!(shadow[i], zeta * state.backlog.get(i, 0), epsilon = 1e-9, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn multiplicative_update_is_entropic_mirror_step(
        start in 0.001f64..3.0,
        eta in 0.001f64..2.0,
        rho in 0.05f64..0.95,
        matched in any::<bool>(),
        alpha in 0.5f64..5.0,
    ) {
        let inst = Instance::base(100, &[rho], 0.0, ArrivalSpec::UniformSingle {}).with_penalties(alpha, 0.0);
        let mut duals = DualState::new(&inst, 0.0, StepSchedule::Fixed(eta));
        duals.theta.set(0, 0, start.min(alpha));
        duals.lambda.set(0, 0, start);
        let z = if matched { 1.0 } else { 0.0 };
        let d = if matched { Decision::unit(1, 0) } else { Decision::zero(1) };
        cadl_update(&mut duals, &d, &inst);
        // argmin over [0, cap] of eta*(rho - z)*x + x*ln(x/x0) - x, by
        // bisection on the sign of its derivative in log space.
        let mirror = |x0: f64, cap: f64| -> f64 {
            let slope = |y: f64| eta * (rho - z) + y - x0.ln();
            if slope(cap.ln()) <= 0.0 {
                return cap;
            }
            let (mut lo, mut hi) = (-700.0f64, cap.ln());
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if slope(mid) > 0.0 { hi = mid } else { lo = mid }
            }
            (0.5 * (lo + hi)).exp()
        };
        let theta = mirror(start.min(alpha), alpha);
        let lambda = mirror(start, inst.lambda_cap());
        assert_relative_eq!(duals.theta.get(0, 0), theta, max_relative = 1e-12);
        assert_relative_eq!(duals.lambda.get(0, 0), lambda, max_relative = 1e-12);
    }

    #[test]
    fn codl_ignores_service_draws(seed in any::<u64>(), service_a in any::<u64>(), service_b in any::<u64>()) {
        let mut r = rng(seed);
        let inst = random_instance(&mut r, 3, 150);
        let generator = ArrivalGenerator::from_instance(&inst).unwrap();
        let run = |service: u64| {
            let path = sample_path(&inst, &generator, PathSeeds { arrival: seed, service }, 0).unwrap();
            let mut policy = DualPolicy::co_dl(&inst, 1.0);
            run_episode(&mut policy, &inst, &path, seed, 0, false).unwrap().decisions
        };
        prop_assert_eq!(run(service_a), run(service_b));
    }

    #[test]
    fn every_algorithm_feasible_and_replayable(seed in any::<u64>(), m in 1usize..4) {
        let mut r = rng(seed);
        let inst = random_instance(&mut r, m, 40);
        let path = path_for(&inst, seed, 3);
        for name in ["ca-dl", "co-dl", "ro-learning", "random", "min-backlog", "ro-learning-b", "ro-learning-b-iterate", "ca-dl-m", "co-dl-m"] {
            let spec = AlgorithmSpec { batch: Some(7), iterations: Some(3), ..AlgorithmSpec::named(name) };
            let mut policy = spec.build(&inst).unwrap();
            let ep = run_episode(policy.as_mut(), &inst, &path, seed, 3, false).unwrap();
            let replay = evaluate_objective(&inst, &path, &ep.decisions).unwrap();
            prop_assert_eq!(replay.objective, ep.result.objective);
            prop_assert!(ep.decisions.iter().all(|d| d.is_integral()));
        }
    }

    #[test]
    fn generalized_reduces_to_base(seed in any::<u64>(), m in 1usize..4) {
        let mut r = rng(seed);
        let inst = random_instance(&mut r, m, 120);
        let path = path_for(&inst, seed, 4);
        let (eta, zeta) = (r.random_range(0.01..0.5), r.random_range(0.0..1.0));
        let mut base = DualPolicy::ca_dl(&inst, eta, zeta);
        let mut general = GeneralizedPolicy::ca_dl_m(&inst, eta, zeta);
        let a = run_episode(&mut base, &inst, &path, seed, 4, true).unwrap();
        let b = run_episode(&mut general, &inst, &path, seed, 4, true).unwrap();
        prop_assert_eq!(&a.decisions, &b.decisions);
        let (da, db) = (a.result.diagnostics.unwrap(), b.result.diagnostics.unwrap());
        prop_assert_eq!(da.theta, db.theta);
        prop_assert_eq!(da.lambda, db.lambda);
        prop_assert_eq!(base.duals.theta, general.duals.theta);
    }

    #[test]
    fn optimal_backlog_follows_recursion(seed in any::<u64>(), m in 1usize..3, horizon in 2usize..15) {
        let mut r = rng(seed);
        let mut inst = random_instance(&mut r, m, horizon);
        inst.gamma = r.random_range(0.5..6.0);
        let path = path_for(&inst, seed, 5);
        let sol = solve_opt(&inst, &path).unwrap();
        let mut b = vec![0.0; m];
        for t in 0..horizon {
            for i in 0..m {
                b[i] = f64::max(b[i] + sol.decisions[t].z[i] - path.services[t].get(i, 0), 0.0);
                prop_assert!((sol.backlog_vars[t][i] - b[i]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn static_dual_subgradient_sign(rewards in prop::collection::vec(0.0f64..1.0, 1..40), rho in 0.05f64..0.95) {
        let inst = Instance::base(rewards.len(), &[rho], 0.0, ArrivalSpec::UniformSingle {}).with_penalties(3.0, 0.0);
        let sample: Vec<ArrivalType> = rewards.iter().map(|&w| ArrivalType::free(vec![w])).collect();
        let sol = solve_static_dual(&StaticDualInput::Sample(sample), &inst).unwrap();
        let phi = sol.phi[0];
        let t = rewards.len() as f64;
        let at_least = rewards.iter().filter(|&&w| w >= phi).count() as f64;
        let above = rewards.iter().filter(|&&w| w > phi).count() as f64;
        prop_assert!(above <= rho * t + 1e-9);
        prop_assert!(phi == 0.0 || at_least >= rho * t - 1e-9);
    }
}

#[test]
fn generalized_runs_respect_every_resource() {
    let mut r = rng(17);
    for trial in 0..30u64 {
        let m = 1 + (trial % 3) as usize;
        let l = 2;
        let horizon = 80;
        let mut inst = random_instance(&mut r, m, horizon);
        inst.l = l;
        inst.rho = Grid::from_rows(&(0..m).map(|_| vec![r.random_range(0.2..0.6), r.random_range(0.2..0.6)]).collect::<Vec<_>>()).unwrap();
        let arrivals: Vec<ArrivalType> = (0..horizon)
            .map(|_| {
                let reward: Vec<f64> = (0..m).map(|_| r.random::<f64>()).collect();
                let usage = Grid::from_rows(&(0..m).map(|_| vec![r.random_range(0..3) as f64, r.random_range(0..3) as f64]).collect::<Vec<_>>()).unwrap();
                let a = if r.random::<f64>() < 0.1 { ArrivalType::tied(reward, r.random_range(0..m)) } else { ArrivalType::free(reward) };
                a.with_consumption(usage)
            })
            .collect();
        let services = (0..horizon)
            .map(|_| Grid::from_rows(&(0..m).map(|_| vec![(r.random::<f64>() < 0.5) as u8 as f64; l]).collect::<Vec<_>>()).unwrap())
            .collect();
        let path = SamplePath { arrivals, services };
        for mut policy in [GeneralizedPolicy::ca_dl_m(&inst, 0.1, 0.3), GeneralizedPolicy::co_dl_m(&inst, 1.0)] {
            let ep = run_episode(&mut policy, &inst, &path, trial, 0, false).unwrap();
            let mut state = PathState::new(&inst);
            for (t, d) in ep.decisions.iter().enumerate() {
                assert!(check_capacity_feasibility(&inst, &state, d, &path.arrivals[t]));
                state.advance(&inst, d, &path.draw(t), &path.arrivals[t]).unwrap();
                assert!(state.backlog.as_slice().iter().all(|&b| b >= 0.0));
                assert!(policy.duals.in_box());
            }
        }
    }
}

#[test]
fn idle_transition_table() {
    let inst = Instance::base(10, &[0.5], 0.1, ArrivalSpec::UniformSingle {}).with_service(ServiceMode::Idle);
    let case = ArrivalType::free(vec![0.5]);
    for backlog in [0.0, 1.0, 2.0] {
        for idle in [false, true] {
            for z in [0.0, 1.0] {
                for s in [0.0, 1.0] {
                    let mut state = PathState::new(&inst);
                    state.backlog.set(0, 0, backlog);
                    state.idle[0] = idle;
                    let d = if z == 1.0 { Decision::unit(1, 0) } else { Decision::zero(1) };
                    state.advance(&inst, &d, &ServiceDraw::new(Grid::column(&[s])), &case).unwrap();
                    let q = backlog + z;
                    let u = if idle { 1.0 } else { s };
                    assert_eq!(state.backlog.get(0, 0), (q - u).max(0.0));
                    assert_eq!(state.idle[0], q == 0.0 && (idle || s == 1.0));
                }
            }
        }
    }
}

#[test]
fn arrivals_identical_across_threads() {
    let inst = dualmatch::instances::make_uniform_single(500, 0.5, 0.1).unwrap();
    let generator = ArrivalGenerator::from_instance(&inst).unwrap();
    let sequential: Vec<ArrivalType> = (0..500).map(|t| generator.arrival_at(9, 3, t)).collect();
    let handles: Vec<_> = (0..4)
        .map(|k| {
            let g = generator.clone();
            std::thread::spawn(move || (0..500).rev().filter(|t| t % 4 == k).map(|t| (t, g.arrival_at(9, 3, t))).collect::<Vec<_>>())
        })
        .collect();
    for h in handles {
        for (t, a) in h.join().unwrap() {
            assert_eq!(a, sequential[t]);
        }
    }
}

#[test]
fn every_algorithm_sees_the_same_path() {
    let mut r = rng(5);
    let inst = random_instance(&mut r, 2, 50);
    let seen = for_each_path(21, 6, |p| Ok(path_for(&inst, 21, p))).unwrap();
    for (p, path) in seen.iter().enumerate() {
        let generator = ArrivalGenerator::from_instance(&inst).unwrap();
        assert_eq!(path, &dualmatch::instances::generate_path(&inst, &generator, 21, p as u64).unwrap());
    }
    let config = ExperimentConfig::new(
        inst.clone(),
        vec![AlgorithmSpec::named("ca-dl"), AlgorithmSpec::named("random"), AlgorithmSpec::named("ca-dl")],
        6,
        21,
    );
    let out = run_experiment(&config, true).unwrap();
    let first: Vec<_> = out.runs.iter().filter(|r| r.algo == "ca-dl").collect();
    for pair in first.chunks(2) {
        assert_eq!(pair[0], pair[1]);
    }
    for row in &out.runs {
        let expected = row.reward - inst.alpha * row.overalloc - inst.gamma * row.avg_backlog;
        assert!((row.objective - expected).abs() < 1e-9);
    }
    for est in &out.regret {
        assert!((est.mean_regret - (est.mean_opt - est.mean_alg)).abs() < 1e-9);
        assert!(est.per_path.iter().all(|p| p.regret >= -1e-6));
    }
}

#[test]
fn recipes_are_deterministic() {
    use dualmatch::harness::{recipe_batch_table, recipe_example41, BatchTableConfig, Example41Config};
    let ex = Example41Config { horizon: 200, num_paths: 20, seed: 4, k: 1.0 };
    assert_eq!(recipe_example41(&ex).unwrap(), recipe_example41(&ex).unwrap());
    let batch = BatchTableConfig { horizon: 60, num_paths: 3, seed: 4, batch: 10, iterations: 3 };
    assert_eq!(recipe_batch_table(&batch).unwrap(), recipe_batch_table(&batch).unwrap());
}

#[test]
fn dp_policies_are_thresholds_and_gap_grows() {
    let mut previous_t: Option<f64> = None;
    for horizon in [20, 50, 100, 200] {
        let mut previous_gamma: Option<f64> = None;
        for gamma in [0.5, 1.0, 2.0, 4.0] {
            let dp = dp_oracle_single_affiliate(horizon, gamma).unwrap();
            assert!(dp.non_threshold_periods.is_empty(), "T={horizon} gamma={gamma}");
            let gap = 0.5 * horizon as f64 - dp.value;
            if let Some(g) = previous_gamma {
                assert!(gap > g);
            }
            previous_gamma = Some(gap);
            if gamma == 1.0 {
                if let Some(g) = previous_t {
                    assert!(gap > g);
                }
                previous_t = Some(gap);
            }
        }
    }
}

#[test]
fn mixed_policy_schedules() {
    // CO-DL is CA-DL with no backlog weight and the same step schedule.
    let mut r = rng(8);
    let inst = random_instance(&mut r, 3, 100);
    let path = path_for(&inst, 8, 0);
    let mut co = DualPolicy::co_dl(&inst, 0.7);
    let mut ca = DualPolicy::with_label(DualRule::CongestionAware, DualState::new(&inst, 0.0, StepSchedule::InvSqrt(0.7)), "ca-dl");
    let a = run_episode(&mut co, &inst, &path, 8, 0, false).unwrap();
    let b = run_episode(&mut ca, &inst, &path, 8, 0, false).unwrap();
    assert_eq!(a.decisions, b.decisions);
    assert_eq!(co.duals.theta, ca.duals.theta);
    let mut ctx_rng = path_rng(8, 0, Purpose::Algorithm);
    let state = PathState::new(&inst);
    let mut ctx = DecisionContext { instance: &inst, state: &state, future: &[], rng: &mut ctx_rng };
    let mut fresh = DualPolicy::co_dl(&inst, 0.7);
    let d = fresh.decide(&mut ctx, &path.arrivals[..1]).unwrap();
    assert_eq!(d[0], a.decisions[0]);
}
