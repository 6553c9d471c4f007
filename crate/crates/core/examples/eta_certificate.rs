//! The eta fixed point behind the decoupling r = eta z: single-step certificate
//! on a short horizon and restart continuation on a long one.

use lqmfg::eta::{eta_contraction_params, solve_eta};
use lqmfg::instances::scalar_q2;
use lqmfg::linops::semigroup_sup;
use lqmfg::riccati::solve_riccati_p;
use lqmfg::TimeGrid;

fn main() -> lqmfg::Result<()> {
    for horizon in [0.1, 2.0] {
        let problem = scalar_q2(horizon);
        let p = solve_riccati_p(&problem, &TimeGrid::default_for(horizon)?)?;
        let mt = semigroup_sup(&problem.space, &problem.a, horizon, 1000)?;
        let params = eta_contraction_params(&problem, &p, mt)?;
        println!("T = {horizon}: first step tau = {:.4e}, radius {:.3}", params.tau, params.radius_r);

        let (eta, cert) = solve_eta(&problem, &p)?;
        println!(
            "  segments {}, sweeps {}, worst sweep ratio {:.3}, beta_T = {:.4}",
            cert.segments.len(),
            cert.total_sweeps,
            cert.max_sweep_ratio,
            cert.beta_t
        );
        println!("  eta(0) = {:.8}, eta(T) = {:.8}", eta.values[0][(0, 0)], eta.values.last().unwrap()[(0, 0)]);
    }
    Ok(())
}
