//! Property tests of the structural invariants on random instances.

use codesign::analysis::{monte_carlo_prediction_error, price_of_anarchy, social_good};
use codesign::criteria::{criterion_value, d_local_gradient, eval_local};
use codesign::design::{information_matrix, local_information_matrix, pseudo_inverse};
use codesign::game::{best_response, solve_equilibrium, GameConfig, GameOptions};
use codesign::instances;
use codesign::linalg;
use codesign::mechanism::{
    effective_utility, published_pi_star, scaling_factor, solve_w_max, standalone_value, MechanismKind, MechanismSpec,
};
use codesign::solver::{benefit_from_collaboration, kw_certificate, solve_optimal_design, SolverOptions};
use codesign::{AgentProfile, CriterionKind, DesignSpace, Error};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use proptest::test_runner::Config;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config(cases: u32) -> Config {
    Config { cases, failure_persistence: None, ..Config::default() }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn weights(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(0.1..2.0)).collect()
}

fn value(agent: &AgentProfile, space: &DesignSpace, w: &[f64]) -> f64 {
    eval_local(agent, space, w).unwrap().or_neg_inf()
}

/// Random space with `agents` groups, each spanning at least `min_rank`
/// dimensions, together with random costs.
fn instance(seed: u64, agents: usize, min_rank: usize) -> (DesignSpace, Vec<AgentProfile>) {
    let mut r = rng(seed);
    let d = r.random_range(2..=3);
    let n = r.random_range((agents * min_rank.max(1)).max(d)..=agents * min_rank.max(1) + 3);
    let space = instances::random_space(&mut r, d, n, agents, min_rank);
    let costs: Vec<f64> = (0..agents).map(|_| r.random_range(0.5..2.0)).collect();
    let agents = AgentProfile::all_d(&space, &costs).unwrap();
    (space, agents)
}

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn information_matrix_is_linear(seed in any::<u64>(), a in 0.0..3.0f64, b in 0.0..3.0f64) {
        let mut r = rng(seed);
        let space = instances::random_space(&mut r, 3, 6, 2, 1);
        let (w1, w2) = (weights(&mut r, 6), weights(&mut r, 6));
        let mix: Vec<f64> = w1.iter().zip(&w2).map(|(x, y)| a * x + b * y).collect();
        let lhs = information_matrix(&space, &mix).unwrap().matrix;
        let rhs = information_matrix(&space, &w1).unwrap().matrix * a + information_matrix(&space, &w2).unwrap().matrix * b;
        prop_assert!(linalg::max_abs(&(lhs - rhs)) <= 1e-12 * (1.0 + a + b) * 4.0);
    }

    #[test]
    fn pseudo_inverse_inverts_on_the_range(seed in any::<u64>()) {
        let mut r = rng(seed);
        let space = instances::random_space(&mut r, 4, 6, 1, 0);
        let w: Vec<f64> = (0..6).map(|_| if r.random_bool(0.5) { r.random_range(0.1..2.0) } else { 0.0 }).collect();
        let m = information_matrix(&space, &w).unwrap();
        let p = pseudo_inverse(&m);
        let back = &m.matrix * &p.matrix * &m.matrix;
        prop_assert!(linalg::max_abs(&(back - &m.matrix)) <= 1e-9 * (1.0 + linalg::max_abs(&m.matrix)));
    }

    #[test]
    fn local_information_is_basis_invariant(seed in any::<u64>()) {
        let mut r = rng(seed);
        let space = instances::random_space(&mut r, 4, 8, 2, 2);
        let w = weights(&mut r, 8);
        let agent = AgentProfile::new(&space, 0, 1.0, CriterionKind::D).unwrap();
        let k = agent.rank();
        let q = DMatrix::from_fn(k, k, |_, _| r.random_range(-1.0..1.0)).qr().q();
        let rotated = agent.reparameterized(&q).unwrap();
        let spectrum = |a: &AgentProfile| {
            let mut e: Vec<f64> = linalg::sym_eigen(&local_information_matrix(&space, &w, a).unwrap().matrix)
                .eigenvalues.iter().copied().collect();
            e.sort_by(|x, y| x.partial_cmp(y).unwrap());
            e
        };
        let (s0, s1) = (spectrum(&agent), spectrum(&rotated));
        for (x, y) in s0.iter().zip(&s1) {
            prop_assert!((x - y).abs() <= 1e-10 * (1.0 + x.abs()));
        }
        prop_assert!((value(&agent, &space, &w) - value(&rotated, &space, &w)).abs() <= 1e-10);
    }

    #[test]
    fn local_information_without_outside_data_is_the_own_sum(seed in any::<u64>()) {
        let mut r = rng(seed);
        let space = instances::random_space(&mut r, 3, 7, 2, 2);
        let agent = AgentProfile::new(&space, 0, 1.0, CriterionKind::D).unwrap();
        let w: Vec<f64> = (0..7).map(|i| if agent.contains(i) { r.random_range(0.1..2.0) } else { 0.0 }).collect();
        let a = agent.basis();
        let mut direct = DMatrix::zeros(agent.rank(), agent.rank());
        for &i in agent.group() {
            let z = a.transpose() * space.point(i);
            direct.ger(w[i], &z, &z, 1.0);
        }
        let local = local_information_matrix(&space, &w, &agent).unwrap().matrix;
        prop_assert!(linalg::max_abs(&(local - direct)) <= 1e-9);
    }

    #[test]
    fn criteria_are_homogeneous(seed in any::<u64>(), lambda in 0.1..10.0f64) {
        let mut r = rng(seed);
        let space = instances::random_space(&mut r, 3, 6, 1, 0);
        let m = information_matrix(&space, &weights(&mut r, 6)).unwrap().matrix;
        let scaled = &m * lambda;
        let pts = space.points();
        for kind in [CriterionKind::D, CriterionKind::A, CriterionKind::E, CriterionKind::G, CriterionKind::V(None)] {
            let f = criterion_value(&kind, &m, pts).finite().unwrap();
            let g = criterion_value(&kind, &scaled, pts).finite().unwrap();
            let expect = if kind.is_d() { f + 3.0 * lambda.ln() } else { f / lambda };
            prop_assert!((g - expect).abs() <= 1e-10 * (1.0 + expect.abs()), "{kind:?}: {g} vs {expect}");
        }
    }

    #[test]
    fn d_local_is_concave_in_own_block(seed in any::<u64>(), t in 0.0..1.0f64) {
        let mut r = rng(seed);
        let space = instances::random_space(&mut r, 3, 7, 2, 1);
        let agent = AgentProfile::new(&space, 0, 1.0, CriterionKind::D).unwrap();
        let w1 = weights(&mut r, 7);
        let mut w2 = w1.clone();
        for &i in agent.group() {
            w2[i] = r.random_range(0.1..2.0);
        }
        let mid: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| t * a + (1.0 - t) * b).collect();
        let chord = t * value(&agent, &space, &w1) + (1.0 - t) * value(&agent, &space, &w2);
        prop_assert!(value(&agent, &space, &mid) >= chord - 1e-9);
    }

    #[test]
    fn d_local_never_decreases_with_more_data(seed in any::<u64>(), i in 0usize..7, bump in 0.0..3.0f64) {
        let mut r = rng(seed);
        let space = instances::random_space(&mut r, 3, 7, 2, 1);
        let agent = AgentProfile::new(&space, 0, 1.0, CriterionKind::D).unwrap();
        let w = weights(&mut r, 7);
        let mut more = w.clone();
        more[i] += bump;
        prop_assert!(value(&agent, &space, &more) >= value(&agent, &space, &w) - 1e-12);
    }

    #[test]
    fn pooling_never_hurts_local_information(seed in any::<u64>()) {
        let mut r = rng(seed);
        let space = instances::random_space(&mut r, 3, 7, 2, 2);
        let agent = AgentProfile::new(&space, 1, 1.0, CriterionKind::D).unwrap();
        let w = weights(&mut r, 7);
        let own: Vec<f64> = (0..7).map(|i| if agent.contains(i) { w[i] } else { 0.0 }).collect();
        prop_assert!(value(&agent, &space, &own) <= value(&agent, &space, &w) + 1e-9);
    }
}

proptest! {
    #![proptest_config(config(32))]

    #[test]
    fn d_optimal_designs_are_certified(seed in any::<u64>()) {
        let mut r = rng(seed);
        let d = r.random_range(2..=5);
        let n = r.random_range(d..=20);
        let space = instances::random_space(&mut r, d, n, 1, 0);
        let opt = solve_optimal_design(&CriterionKind::D, &space, None, &SolverOptions::default()).unwrap();
        let cert = kw_certificate(&space, &opt.pi).unwrap();
        prop_assert!((cert - d as f64).abs() <= 1e-3 * d as f64);
    }

    #[test]
    fn optimal_information_does_not_depend_on_point_order(seed in any::<u64>()) {
        let mut r = rng(seed);
        let space = instances::random_space(&mut r, 3, 8, 1, 0);
        let order: Vec<usize> = (0..8).rev().collect();
        let shuffled = DesignSpace::new(order.iter().map(|&i| space.to_rows()[i].clone()).collect(), vec![(0..8).collect()]).unwrap();
        let a = solve_optimal_design(&CriterionKind::D, &space, None, &SolverOptions::tight()).unwrap();
        let b = solve_optimal_design(&CriterionKind::D, &shuffled, None, &SolverOptions::tight()).unwrap();
        let ma = information_matrix(&space, &a.pi).unwrap().matrix;
        let mb = information_matrix(&shuffled, &b.pi).unwrap().matrix;
        prop_assert!(linalg::max_abs(&(ma - mb)) <= 1e-6);
    }

    #[test]
    fn restricted_designs_never_beat_the_full_space(seed in any::<u64>(), drop in 0usize..8) {
        let mut r = rng(seed);
        let space = instances::random_space(&mut r, 3, 8, 1, 0);
        let keep: Vec<usize> = (0..8).filter(|&i| i != drop).collect();
        let sub = DesignSpace::new(keep.iter().map(|&i| space.to_rows()[i].clone()).collect(), vec![(0..7).collect()]);
        let Ok(sub) = sub else { return Ok(()) };
        let full = solve_optimal_design(&CriterionKind::D, &space, None, &SolverOptions::tight()).unwrap();
        let part = solve_optimal_design(&CriterionKind::D, &sub, None, &SolverOptions::tight()).unwrap();
        prop_assert!(part.value <= full.value + 1e-9);
    }

    #[test]
    fn scaling_factors_lie_in_the_unit_interval(seed in any::<u64>()) {
        let (space, agents) = instance(seed, 2, 1);
        let mut r = rng(seed ^ 1);
        let w = weights(&mut r, space.n_points());
        let pi_star = published_pi_star(&space).unwrap();
        let w_max = weights(&mut r, space.n_points());
        let mechs = [
            MechanismSpec::Fed,
            MechanismSpec::InfoMax { w_max },
            MechanismSpec::PureEff { pi_star: pi_star.clone() },
            MechanismSpec::Eff { pi_star, n_max: r.random_range(0.5..5.0) },
        ];
        for mech in &mechs {
            for a in &agents {
                match scaling_factor(mech, a, &space, &w) {
                    Ok(s) => prop_assert!((0.0..=1.0).contains(&s), "{mech:?}: {s}"),
                    Err(e) => prop_assert!(matches!(e, Error::DegenerateOutsideMass(_)), "{e}"),
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(config(12))]

    #[test]
    fn w_max_is_tight_and_dominates_federated_play(seed in any::<u64>()) {
        let (space, agents) = instance(seed, 2, 2);
        let wm = solve_w_max(&space, &agents).unwrap();
        let mech = MechanismSpec::InfoMax { w_max: wm.w.clone() };
        for a in &agents {
            let v = standalone_value(a, &space).unwrap().value;
            let u = effective_utility(&mech, a, &space, &wm.w).unwrap().or_neg_inf();
            prop_assert!((u - v).abs() <= 1e-5, "agent {}: {u} vs {v}", a.index());
        }
        let fed = GameConfig::new(space.clone(), agents, MechanismSpec::Fed, GameOptions::default()).unwrap();
        let rep = solve_equilibrium(&fed, None).unwrap();
        prop_assert!(rep.total_information <= wm.log_det + 1e-6);
    }

    #[test]
    fn dilating_a_w_max_block_breaks_rationality(seed in any::<u64>()) {
        let (space, agents) = instance(seed, 2, 2);
        let ranks: usize = agents.iter().map(|a| a.rank()).sum();
        prop_assume!(ranks > space.dim());
        let wm = solve_w_max(&space, &agents).unwrap();
        for a in &agents {
            if a.block_mass(&wm.w) <= 1e-9 {
                continue;
            }
            let mut w = wm.w.clone();
            for &i in a.group() {
                w[i] *= 1.001;
            }
            let worst = agents
                .iter()
                .map(|b| {
                    let u = effective_utility(&MechanismSpec::Fed, b, &space, &w).unwrap().or_neg_inf();
                    u - standalone_value(b, &space).unwrap().value
                })
                .fold(f64::INFINITY, f64::min);
            prop_assert!(worst < 0.0, "dilating agent {} keeps everyone rational ({worst:e})", a.index());
        }
    }

    #[test]
    fn linear_reparameterization_shifts_d_utility_by_a_constant(seed in any::<u64>()) {
        let (space, agents) = instance(seed, 2, 2);
        let mut r = rng(seed ^ 2);
        let a = &agents[0];
        let k = a.rank();
        let t = DMatrix::<f64>::identity(k, k) * 1.5 + DMatrix::from_fn(k, k, |_, _| r.random_range(-0.4..0.4));
        let log_det = t.clone().lu().determinant().abs().ln();
        let b = a.reparameterized(&t).unwrap();
        let w = weights(&mut r, space.n_points());
        let mech = MechanismSpec::Fed;
        let u = |p: &AgentProfile, x: &[f64]| effective_utility(&mech, p, &space, x).unwrap().or_neg_inf();
        prop_assert!((u(&b, &w) - u(a, &w) + 2.0 * log_det).abs() <= 1e-9);
        let i = a.group()[0];
        let mut moved = w.clone();
        moved[i] += 0.3;
        prop_assert!(((u(&b, &moved) - u(&b, &w)) - (u(a, &moved) - u(a, &w))).abs() <= 1e-9);
    }

    #[test]
    fn federated_equilibria_satisfy_first_order_conditions(seed in any::<u64>(), equal in any::<bool>()) {
        let (space, mut agents) = instance(seed, 2, 1);
        if equal {
            agents = agents.iter().map(|a| a.with_cost(1.0)).collect();
        }
        let fed = GameConfig::new(space.clone(), agents.clone(), MechanismSpec::Fed, GameOptions::default()).unwrap();
        let rep = solve_equilibrium(&fed, None).unwrap();
        prop_assume!(rep.converged);
        for a in &agents {
            for &i in a.group() {
                let g = d_local_gradient(a, &space, &rep.w, i).unwrap();
                if rep.w[i] > 1e-7 {
                    prop_assert!((g - a.cost()).abs() <= 1e-6, "point {i}: {g} vs {}", a.cost());
                } else {
                    prop_assert!(g <= a.cost() + 1e-6);
                }
            }
        }
        if equal {
            prop_assert!((rep.total_contribution() - space.dim() as f64).abs() <= 1e-6);
        }
    }

    #[test]
    fn best_responses_never_lower_own_utility(seed in any::<u64>(), kind in 0usize..4) {
        let (space, agents) = instance(seed, 2, 1);
        let mech = MechanismSpec::publish(MechanismKind::ALL[kind], &space, &agents);
        prop_assume!(mech.is_ok());
        let game = GameConfig::new(space.clone(), agents.clone(), mech.unwrap(), GameOptions::default()).unwrap();
        let mut r = rng(seed ^ 3);
        let w = weights(&mut r, space.n_points());
        for (k, a) in agents.iter().enumerate() {
            let block = best_response(&game, k, &w).unwrap();
            let mut next = w.clone();
            for (&i, b) in a.group().iter().zip(&block) {
                next[i] = *b;
            }
            let (before, after) = (game.utility(k, &w), game.utility(k, &next));
            prop_assert!(after >= before - 1e-9 * (1.0 + before.abs()), "agent {k}: {after} < {before}");
        }
    }

    #[test]
    fn equilibria_are_deterministic(seed in any::<u64>()) {
        let (space, agents) = instance(seed, 2, 1);
        let mech = MechanismSpec::publish(MechanismKind::InfoMax, &space, &agents).unwrap();
        let game = GameConfig::new(space, agents, mech, GameOptions { seed, ..GameOptions::default() }).unwrap();
        let a = solve_equilibrium(&game, None).unwrap();
        let b = solve_equilibrium(&game, None).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn social_good_is_concave(seed in any::<u64>(), t in 0.0..1.0f64) {
        let (space, agents) = instance(seed, 2, 2);
        let mut r = rng(seed ^ 4);
        let mech = MechanismSpec::InfoMax { w_max: weights(&mut r, space.n_points()) };
        let (w1, w2) = (weights(&mut r, space.n_points()), weights(&mut r, space.n_points()));
        let mid: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| t * a + (1.0 - t) * b).collect();
        let sg = |w: &[f64]| social_good(&space, &agents, &mech, w).unwrap().or_neg_inf();
        prop_assert!(sg(&mid) >= t * sg(&w1) + (1.0 - t) * sg(&w2) - 1e-9);
    }

    #[test]
    fn price_of_anarchy_is_at_least_one(seed in any::<u64>()) {
        let (space, agents) = instance(seed, 2, 1);
        let poa = price_of_anarchy(&space, &agents).unwrap();
        // the optimum is a max over a set containing w_max; the ratio reads
        // as "at least one" only when the strategic social good is positive
        prop_assert!(poa.optimal_social_good >= poa.strategic_social_good - 1e-9);
        if poa.strategic_social_good > 0.0 {
            prop_assert!(poa.ratio >= 1.0 - 1e-6, "{}", poa.ratio);
        }
        if let Some(bound) = poa.bound {
            prop_assert!(poa.ratio <= bound + 1e-6);
        }
    }

    #[test]
    fn collaboration_never_loses_information(seed in any::<u64>()) {
        let (space, agents) = instance(seed, 3, 1);
        for a in &agents {
            prop_assert!(benefit_from_collaboration(a, &space).unwrap() >= -1e-9);
        }
    }
}

/// Halving the trials inflates the root-mean-square relative error by about
/// √2; the gate allows 2.5×.
#[test]
fn monte_carlo_error_shrinks_with_more_trials() {
    let space = DesignSpace::new(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]], vec![vec![0, 1, 2]]).unwrap();
    let pi = [0.25, 0.25, 0.5];
    let x = DVector::from_vec(vec![1.0, -0.5]);
    let rms = |trials: usize| {
        let sq: f64 = (0..24)
            .map(|seed| {
                let e =
                    monte_carlo_prediction_error(&space, &pi, 2000, trials, seed, std::slice::from_ref(&x)).unwrap();
                e[0].relative_error.powi(2)
            })
            .sum();
        (sq / 24.0).sqrt()
    };
    let (full, half) = (rms(400), rms(200));
    assert!(half <= 2.5 * full, "{half} vs {full}");
    assert!(half >= full / 2.5, "{half} vs {full}");
}
