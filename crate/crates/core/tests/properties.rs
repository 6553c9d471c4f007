use lqmfg::fbs::solve_decoupled;
use lqmfg::instances::{random_psd_instance, ScalarData};
use lqmfg::linops::{growth_bound, mat_exp, HilbertSpace};
use lqmfg::riccati::{p_bound, solve_riccati_p};
use lqmfg::scenario::{parse_config, render, split_seed};
use lqmfg::verify::{monte_carlo_consistency, MCConfig};
use lqmfg::{Operator, State, TimeGrid};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn riccati_path_is_self_adjoint_nonnegative_and_bounded(seed in any::<u64>(), dim in 1usize..=5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let problem = random_psd_instance(&mut rng, dim, 1.0);
        let sp = &problem.space;
        let p = solve_riccati_p(&problem, &TimeGrid::new(1.0, 100).unwrap()).unwrap();
        let gb = growth_bound(sp, &problem.a, 1.0, 1000).unwrap();
        let bound = p_bound(&problem, &gb);
        for v in &p.values {
            prop_assert!(sp.self_adjoint_defect(v) <= 1e-10 * (1.0 + sp.op_norm(v)));
            prop_assert!(sp.eig_range(v).0 >= -1e-9 * (1.0 + sp.op_norm(v)));
            prop_assert!(sp.op_norm(v) <= bound * (1.0 + 1e-6));
        }
    }

    #[test]
    fn weighted_adjoint_identity(seed in any::<u64>(), weights in prop::collection::vec(0.1f64..10.0, 1..6)) {
        let sp = HilbertSpace::new(weights.clone()).unwrap();
        let n = weights.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = |rng: &mut ChaCha8Rng| rand::Rng::random_range(rng, -1.0..1.0);
        let l = Operator::from_fn(n, n, |_, _| g(&mut rng));
        let x = State::from_fn(n, |_, _| g(&mut rng));
        let y = State::from_fn(n, |_, _| g(&mut rng));
        let lhs = sp.inner(&(&l * &x), &y);
        let rhs = sp.inner(&x, &(sp.adjoint(&l) * &y));
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn semigroup_law(a in prop::collection::vec(-0.8f64..0.8, 9), s in 0.0f64..1.0, t in 0.0f64..1.0) {
        let a = Operator::from_vec(3, 3, a);
        let lhs = mat_exp(&a, s).unwrap() * mat_exp(&a, t).unwrap();
        let rhs = mat_exp(&a, s + t).unwrap();
        prop_assert!((lhs - rhs).amax() <= 1e-10);
    }

    #[test]
    fn config_render_round_trip(
        a in -2.0f64..2.0,
        qbar in 0.0f64..1.0,
        s in -2.0f64..0.0,
        sigma in 0.0f64..0.5,
        horizon in 0.1f64..3.0,
        seed in any::<u64>(),
        steps in 2usize..500,
    ) {
        let text = format!(
            "name = p\nkind = scalar\na = {a}\nqbar = {qbar}\ns = {s}\nsigma = {sigma}\nT = {horizon}\nseed = {seed}\nsteps = {steps}\nrun = riccati,decoupled\n"
        );
        let sc = parse_config(&text).unwrap();
        let again = parse_config(&render(&sc)).unwrap();
        prop_assert_eq!(render(&again), render(&sc));
        prop_assert_eq!(again.seed, seed);
        prop_assert_eq!(again.n_steps, Some(steps));
    }

    #[test]
    fn seed_splitting_separates_stages(seed in any::<u64>(), index in 0u64..1000) {
        prop_assert_eq!(split_seed(seed, "montecarlo", index), split_seed(seed, "montecarlo", index));
        prop_assert_ne!(split_seed(seed, "montecarlo", index), split_seed(seed, "instance", index));
        prop_assert_ne!(split_seed(seed, "montecarlo", index), split_seed(seed, "montecarlo", index + 1));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn monte_carlo_is_reproducible(seed in any::<u64>(), n_paths in 2usize..300) {
        let problem = ScalarData { sigma: 0.2, ..Default::default() }.build();
        let p = solve_riccati_p(&problem, &TimeGrid::new(1.0, 50).unwrap()).unwrap();
        let sol = solve_decoupled(&problem, &p).unwrap();
        let cfg = MCConfig::new(n_paths, seed);
        let a = monte_carlo_consistency(&problem, &sol, &cfg).unwrap();
        let b = monte_carlo_consistency(&problem, &sol, &cfg).unwrap();
        prop_assert_eq!(&a.mean_path.values, &b.mean_path.values);
        prop_assert_eq!(&a.stderr_path.values, &b.stderr_path.values);
        prop_assert_eq!(a.cost, b.cost);
    }
}
