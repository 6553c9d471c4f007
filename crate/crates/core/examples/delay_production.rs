//! Production planning with delayed investment: lift the delay into a transport
//! state, solve the game and refine the discretization.

use lqmfg::delay::{build_delay_problem, lift_initial, segment_refinement_study, DelayParams, Kernel};
use lqmfg::fbs::solve_decoupled;
use lqmfg::riccati::solve_riccati_p;
use lqmfg::verify::uniqueness_report;
use lqmfg::TimeGrid;

fn main() -> lqmfg::Result<()> {
    let params = DelayParams {
        kernel: Kernel::ExponentialDecay { scale: 1.0, rate: 1.0 },
        past: Kernel::Constant(0.5),
        n_seg: 8,
        ..Default::default()
    };
    println!("lifted initial state {:.4?}", lift_initial(&params).as_slice());

    let problem = build_delay_problem(&params)?;
    let (report, _) = uniqueness_report(&problem, 1e-10)?;
    println!("regime = {}", report.regime.map_or("?", |r| r.as_str()));

    let p = solve_riccati_p(&problem, &TimeGrid::default_for(params.horizon)?)?;
    let sol = solve_decoupled(&problem, &p)?;
    for t in [0.0, 0.5, 1.0] {
        let z = sol.z.at(t);
        let r = sol.r.at(t);
        println!("t = {t:3.1}  mean production {:.6}  price of capital {:+.6}", z[0], r[0]);
    }

    let study = segment_refinement_study(&params, &[4, 8, 16])?;
    println!("refinement gaps {:.3?}, ratios {:.3?}", study.gaps, study.ratios);
    Ok(())
}
