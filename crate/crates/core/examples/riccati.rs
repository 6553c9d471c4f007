//! Backward Riccati solve for a scalar coupled game, with its residual and the
//! a-priori bound.

use lqmfg::instances::scalar_q2;
use lqmfg::linops::growth_bound;
use lqmfg::riccati::{p_bound, residual_tol, riccati_residual, solve_riccati_p};
use lqmfg::TimeGrid;

fn main() -> lqmfg::Result<()> {
    let problem = scalar_q2(1.0);
    let grid = TimeGrid::new(problem.horizon, 1000)?;
    let p = solve_riccati_p(&problem, &grid)?;

    // P' = P^2 - 2, P(T) = 1 has the closed form below.
    let s = 2f64.sqrt();
    let c = (1.0 - s) / (1.0 + s);
    let exact = |t: f64| {
        let e = c * (2.0 * s * (t - problem.horizon)).exp();
        s * (1.0 + e) / (1.0 - e)
    };
    for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
        println!("t = {t:4.2}  P = {:.12}  exact = {:.12}", p.at(t)[(0, 0)], exact(t));
    }

    let residual = riccati_residual(&p, &problem)?;
    println!("mild residual {residual:.3e} (tolerance {:.3e})", residual_tol(&problem));
    let gb = growth_bound(&problem.space, &problem.a, problem.horizon, 1000)?;
    println!("sup |P| = {:.6}, a-priori bound = {:.6}", p.sup_norm(&problem.space), p_bound(&problem, &gb));
    Ok(())
}
