//! Simulates many agents under the equilibrium feedback and compares their
//! empirical mean with the mean-field trajectory, then estimates the cost.

use lqmfg::fbs::solve_decoupled;
use lqmfg::instances::ScalarData;
use lqmfg::riccati::solve_riccati_p;
use lqmfg::verify::{monte_carlo_consistency, MCConfig};
use lqmfg::TimeGrid;

fn main() -> lqmfg::Result<()> {
    let problem = ScalarData { sigma: 0.1, qbar: 0.5, qbart: 0.5, s: -1.0, st: -1.0, ..Default::default() }.build();
    let p = solve_riccati_p(&problem, &TimeGrid::default_for(problem.horizon)?)?;
    let sol = solve_decoupled(&problem, &p)?;

    let mc = monte_carlo_consistency(&problem, &sol, &MCConfig::new(10_000, 42))?;
    for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let k = sol.grid().nearest_index(t);
        println!(
            "t = {t:4.2}  z = {:+.6}  ensemble = {:+.6}  stderr = {:.2e}",
            sol.z.values[k][0], mc.mean_path.values[k][0], mc.stderr_path.values[k]
        );
    }
    println!("max deviation {:.3e}, within allowance: {}", mc.max_deviation, mc.contract_ok);
    let value = sol.value(&problem.space, 0.0, &problem.z0).unwrap_or(f64::NAN);
    println!("cost {:.6} +/- {:.6}, value v(0, z0) = {value:.6}", mc.cost.mean, mc.cost.stderr);
    Ok(())
}
