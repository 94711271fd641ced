use meanking::bases::{haar_random_basis_set, rank_of_span, transition_tensor, DEFAULT_RANK_TOL};
use meanking::experiments::run_game;
use meanking::linalg::haar_unitary;
use meanking::model::{debias_lower_bound, debias_objective, solve_model_lp};
use meanking::sdp::unambiguous_value;
use meanking::strategy::{build_strategy, verify_strategy};
use meanking::{BasisSet, C64};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random_unitary(d: usize, seed: u64) -> DMatrix<C64> {
    haar_unitary(d, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Multiplies every basis vector by an arbitrary phase.
fn rephased(bs: &BasisSet, seed: u64) -> BasisSet {
    let d = bs.dim();
    let unitaries = bs
        .unitaries()
        .iter()
        .enumerate()
        .map(|(b, u)| {
            let mut u = u.clone();
            for i in 0..d {
                let angle = (seed.wrapping_mul(31 + b as u64).wrapping_add(i as u64) % 1000) as f64 * 0.00628;
                let phase = C64::from_polar(1.0, angle);
                for r in 0..d {
                    u[(r, i)] *= phase;
                }
            }
            u
        })
        .collect();
    BasisSet::from_unitaries(unitaries, 1e-10).unwrap()
}

fn max_tensor_diff(a: &BasisSet, b: &BasisSet) -> f64 {
    let (ta, tb) = (transition_tensor(a), transition_tensor(b));
    let k = a.count();
    let mut worst = 0.0f64;
    for x in 0..k {
        for y in 0..k {
            worst = worst.max((ta.pair(x, y) - tb.pair(x, y)).amax());
        }
    }
    worst
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn pair_marginals_are_doubly_stochastic_over_d(d in 2usize..5, k in 1usize..5, seed in any::<u64>()) {
        let t = transition_tensor(&haar_random_basis_set(d, k, seed).unwrap());
        for b in 0..k {
            for c in 0..k {
                let m = t.pair(b, c);
                for i in 0..d {
                    prop_assert!((m.row(i).sum() - 1.0 / d as f64).abs() < 1e-12);
                    prop_assert!((m.column(i).sum() - 1.0 / d as f64).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn global_rotation_changes_nothing(d in 2usize..4, seed in any::<u64>()) {
        let bs = haar_random_basis_set(d, d + 1, seed).unwrap();
        let rot = bs.rotated(&random_unitary(d, seed ^ 0x5a5a)).unwrap();
        prop_assert!(max_tensor_diff(&bs, &rot) < 1e-12);
        prop_assert_eq!(rank_of_span(&bs, DEFAULT_RANK_TOL).rank, rank_of_span(&rot, DEFAULT_RANK_TOL).rank);
        let (a, b) = (unambiguous_value(&bs).unwrap(), unambiguous_value(&rot).unwrap());
        prop_assert!((a.value - b.value).abs() < 3e-6, "{} vs {}", a.value, b.value);
    }

    #[test]
    fn vector_phases_change_nothing(d in 2usize..4, seed in any::<u64>()) {
        let bs = haar_random_basis_set(d, d + 1, seed).unwrap();
        let ph = rephased(&bs, seed);
        prop_assert!(max_tensor_diff(&bs, &ph) < 1e-12);
        let (a, b) = (unambiguous_value(&bs).unwrap(), unambiguous_value(&ph).unwrap());
        prop_assert!((a.value - b.value).abs() < 3e-6);
    }

    #[test]
    fn debias_objective_respects_its_bound(d in 2usize..6, k in 2usize..6, seed in any::<u64>()) {
        let bs = haar_random_basis_set(d, k, seed).unwrap();
        prop_assert!(debias_objective(&bs) >= debias_lower_bound(d, k) - 1e-12);
    }

    #[test]
    fn value_is_a_probability_and_one_exactly_when_classical(seed in any::<u64>()) {
        let bs = haar_random_basis_set(2, 3, seed).unwrap();
        let res = unambiguous_value(&bs).unwrap();
        prop_assert!(res.converged);
        prop_assert!(res.value > 0.0 && res.value <= 1.0 + 1e-9);
        let lp = solve_model_lp(&transition_tensor(&bs)).unwrap();
        prop_assert_eq!(lp.is_feasible(), res.value > 1.0 - 1e-5);
    }

    #[test]
    fn classical_qubit_sets_give_safe_strategies(seed in any::<u64>()) {
        let bs = haar_random_basis_set(2, 3, seed).unwrap();
        let lp = solve_model_lp(&transition_tensor(&bs)).unwrap();
        prop_assume!(lp.is_feasible());
        let st = build_strategy(&bs, &lp.jd).unwrap();
        let rep = verify_strategy(&bs, &st).unwrap();
        prop_assert!(rep.passes(1e-8));
        prop_assert_eq!(run_game(&bs, &st, 500, seed).unwrap().failures, 0);
    }

    #[test]
    fn basis_json_round_trip_is_exact(d in 2usize..5, k in 1usize..4, seed in any::<u64>()) {
        let bs = haar_random_basis_set(d, k, seed).unwrap();
        let back = BasisSet::from_json(&bs.to_json().unwrap()).unwrap();
        for b in 0..k {
            prop_assert_eq!(bs.unitary(b), back.unitary(b));
        }
    }
}
