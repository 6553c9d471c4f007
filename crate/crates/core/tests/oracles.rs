//! Both forward-backward routes against a shooting oracle that enforces the
//! terminal condition on `r` by linear superposition.

use lqmfg::fbs::{solve_decoupled, solve_picard};
use lqmfg::instances::{random_dissipative_instance, scalar_q2, ScalarData};
use lqmfg::riccati::solve_riccati_p;
use lqmfg::verify::shooting_solution;
use lqmfg::{MfgProblem, OperatorPath, State, TimeGrid, VectorPath};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// `r(T) + Qbar_T S_T z(T) + c_T` as a function of `r(0)`.
fn terminal_defect(problem: &MfgProblem, p: &OperatorPath, r_init: &State) -> State {
    let sol = shooting_solution(problem, p, r_init).unwrap();
    sol.r.last() + &problem.qbart * &problem.st * sol.z.last() + &problem.affine_ct
}

/// The shooting trajectory whose `r(0)` zeroes the terminal defect.
fn oracle(problem: &MfgProblem, p: &OperatorPath) -> (VectorPath, VectorPath) {
    let d = problem.dim();
    let base = terminal_defect(problem, p, &State::zeros(d));
    let mut jac = DMatrix::zeros(d, d);
    for j in 0..d {
        let mut e = State::zeros(d);
        e[j] = 1.0;
        jac.set_column(j, &(terminal_defect(problem, p, &e) - &base));
    }
    let r0 = jac.lu().solve(&(-base)).expect("nonsingular shooting map");
    let sol = shooting_solution(problem, p, &r0).unwrap();
    (sol.z, sol.r)
}

fn assert_matches_oracle(problem: &MfgProblem, tol: f64) {
    let sp = &problem.space;
    let p = solve_riccati_p(problem, &TimeGrid::default_for(problem.horizon).unwrap()).unwrap();
    let (z, r) = oracle(problem, &p);
    for sol in [solve_decoupled(problem, &p).unwrap(), solve_picard(problem, &p, 1e-13, 300).unwrap()] {
        let gap = sol.z.sup_distance(&z, sp) + sol.r.sup_distance(&r, sp);
        assert!(gap <= tol, "{} differs from the shooting oracle by {gap:e}", sol.method.as_str());
    }
}

#[test]
fn q2_matches_shooting() {
    assert_matches_oracle(&scalar_q2(1.0), 1e-8);
}

#[test]
fn q2_with_affine_terms_matches_shooting() {
    let problem =
        ScalarData { q: 1.0, qbar: 1.0, qt: 0.0, qbart: 1.0, s: -1.0, st: -1.0, c: 0.3, ct: -0.2, ..Default::default() }
            .build();
    assert_matches_oracle(&problem, 1e-8);
}

#[test]
fn random_dissipative_instances_match_shooting() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for dim in 1..=4 {
        assert_matches_oracle(&random_dissipative_instance(&mut rng, dim, 1.0), 1e-7);
    }
}

#[test]
fn uncoupled_mean_is_a_closed_loop_exponential() {
    // P = 1 and r = 0, so z' = -z.
    let problem = ScalarData::default().build();
    let p = solve_riccati_p(&problem, &TimeGrid::default_for(1.0).unwrap()).unwrap();
    let sol = solve_decoupled(&problem, &p).unwrap();
    for (k, t) in sol.grid().nodes().enumerate() {
        assert!((sol.z.values[k][0] - (-t).exp()).abs() <= 1e-9);
        assert_eq!(sol.r.values[k][0], 0.0);
    }
}
