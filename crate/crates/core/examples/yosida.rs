//! Replaces the generator by its Yosida approximants and watches the solutions
//! converge.

use lqmfg::delay::{build_delay_problem, DelayParams};
use lqmfg::instances::ScalarData;
use lqmfg::riccati::solve_riccati_p;
use lqmfg::verify::yosida_convergence_study;
use lqmfg::TimeGrid;

fn main() -> lqmfg::Result<()> {
    let scalar = ScalarData { a: -1.0, qbar: 0.5, qbart: 0.5, s: -1.0, st: -1.0, ..Default::default() }.build();
    let p = solve_riccati_p(&scalar, &TimeGrid::default_for(1.0)?)?;
    let study = yosida_convergence_study(&scalar, &p, &[10.0, 100.0, 1000.0])?;
    println!("scalar A = -1");
    for (n, g) in study.ns.iter().zip(&study.gaps) {
        println!("  n = {n:6}  gap = {g:.4e}");
    }
    println!("  ratios {:.4?}", study.ratios);

    let delay = build_delay_problem(&DelayParams { n_seg: 8, ..Default::default() })?;
    let p = solve_riccati_p(&delay, &TimeGrid::default_for(delay.horizon)?)?;
    let study = yosida_convergence_study(&delay, &p, &[50.0, 200.0, 800.0])?;
    println!("delay transport, 8 cells: gaps {:.3?}, monotone {}", study.gaps, study.monotone);
    Ok(())
}
