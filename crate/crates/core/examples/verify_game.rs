//! Standing assumptions, uniqueness regime and the monotonicity identity on a
//! coupled scalar game.

use lqmfg::instances::{scalar_q2, ScalarData};
use lqmfg::riccati::solve_riccati_p;
use lqmfg::verify::{check_standing_assumptions, monotonicity_probe, shooting_solution, uniqueness_report};
use lqmfg::{State, TimeGrid};

fn main() -> lqmfg::Result<()> {
    let problem = scalar_q2(1.0);
    let mut report = check_standing_assumptions(&problem, 1e-10);
    let (uniqueness, contraction) = uniqueness_report(&problem, 1e-10)?;
    report = report.merge(uniqueness);
    print!("{}", report.render_text());
    println!("C_T = {:.4}", contraction.c_t);

    let p = solve_riccati_p(&problem, &TimeGrid::default_for(problem.horizon)?)?;
    let a = shooting_solution(&problem, &p, &State::from_element(1, 0.0))?;
    let b = shooting_solution(&problem, &p, &State::from_element(1, 0.4))?;
    let probe = monotonicity_probe(&problem, &a, &b, 1e-8)?;
    println!("identity error {:.3e} (K = {:.3})", probe.max_error, probe.k_const);
    if let Some(chain) = probe.sign_chain {
        println!(
            "f(0) = {:.1e}, max f' = {:.3e}, terminal form = {:.3e}, holds = {}",
            chain.f0, chain.max_f_prime, chain.terminal_form, chain.holds
        );
    }

    let hostile = ScalarData { qbar: 1.0, qbart: 1.0, s: 5.0, st: 5.0, horizon: 3.0, ..Default::default() }.build();
    let (rep, c) = uniqueness_report(&hostile, 1e-10)?;
    println!("hostile coupling: regime = {}, C_T = {:.3e}", rep.regime.map_or("?", |r| r.as_str()), c.c_t);
    Ok(())
}
