//! Backward operator Riccati equation for the quadratic value coefficient.
//!
//! `P' = -(P A + A* P - P G P + Q + Qbar)`, `P(T) = Q_T + Qbar_T`, with
//! `G = B R^{-1} B*`.

use crate::error::{MfgError, Result};
use crate::linops::{mat_exp, GrowthBound, HilbertSpace, Operator};
use crate::path::{OperatorPath, TimeGrid};
use crate::problem::MfgProblem;
use crate::quad::interval_stencil;

/// Norm above which a solution is declared divergent.
pub const BLOW_UP: f64 = 1e12;
/// Relative tolerance for the positivity assertion.
pub const PSD_RTOL: f64 = 1e-9;
/// Largest `h ||A||` taken by one RK4 stage; stiffer cells are subdivided.
const STIFF_STEP: f64 = 0.02;

fn riccati_rhs(p: &Operator, a: &Operator, a_adj: &Operator, gain: &Operator, q_sum: &Operator) -> Operator {
    // right-hand side in reversed time s = T - t
    p * a + a_adj * p - p * gain * p + q_sum
}

pub fn solve_riccati_p(problem: &MfgProblem, grid: &TimeGrid) -> Result<OperatorPath> {
    problem.validate()?;
    check_horizon(problem, grid)?;
    let coef = problem.coefficients()?;
    let sp = &problem.space;
    let h = grid.step();
    let (a, a_adj, g, q) = (&problem.a, &coef.a_adj, &coef.gain, &coef.q_sum);
    let f = |p: &Operator| riccati_rhs(p, a, a_adj, g, q);

    let n = grid.n_steps;
    let sub = ((h * sp.op_norm(a) / STIFF_STEP).ceil() as usize).max(1);
    let hs = h / sub as f64;
    let mut values = vec![Operator::zeros(0, 0); n + 1];
    let mut p = coef.qt_sum.clone();
    values[n] = p.clone();
    for k in (0..n).rev() {
        for _ in 0..sub {
            let k1 = f(&p);
            let k2 = f(&(&p + &k1 * (0.5 * hs)));
            let k3 = f(&(&p + &k2 * (0.5 * hs)));
            let k4 = f(&(&p + &k3 * hs));
            p += (k1 + (k2 + k3) * 2.0 + k4) * (hs / 6.0);
            p = sp.symmetrize(&p);
        }
        let t = grid.node(k);
        let norm = sp.op_norm(&p);
        if !norm.is_finite() || norm > BLOW_UP {
            return Err(MfgError::Divergence { node: k, t, norm });
        }
        let (min_eig, _) = sp.eig_range(&p);
        if min_eig < -PSD_RTOL * norm.max(1.0) {
            return Err(MfgError::PositivityLoss { node: k, t, min_eig });
        }
        values[k] = p.clone();
    }
    OperatorPath::new(*grid, values, true)
}

fn check_horizon(problem: &MfgProblem, grid: &TimeGrid) -> Result<()> {
    let ok = grid.start.abs() <= 1e-12
        && (grid.end - problem.horizon).abs() <= 1e-12 * (1.0 + problem.horizon);
    if ok {
        Ok(())
    } else {
        Err(MfgError::GridMismatch(format!(
            "grid covers [{}, {}] but the horizon is {}",
            grid.start, grid.end, problem.horizon
        )))
    }
}

/// Largest W-norm of `(P(t) - M(t)) x` over nodes and unit coordinate probes,
/// where `M(t)` is the variation-of-constants right-hand side with its
/// integral evaluated by a fourth-order composite rule on the nodes of `p`.
pub fn riccati_residual(p: &OperatorPath, problem: &MfgProblem) -> Result<f64> {
    check_horizon(problem, &p.grid)?;
    let coef = problem.coefficients()?;
    let sp = &problem.space;
    let h = p.grid.step();
    // E(j h) and its adjoint for the stencil offsets
    let exps = (-2..=3)
        .map(|j| {
            let e = mat_exp(&problem.a, j as f64 * h)?;
            let ea = sp.adjoint(&e);
            Ok((e, ea))
        })
        .collect::<Result<Vec<_>>>()?;
    let exp = |offset: isize| &exps[(offset + 2) as usize];
    let forcing: Vec<Operator> =
        p.values.iter().map(|pk| &coef.q_sum - pk * &coef.gain * pk).collect();

    let n = p.grid.n_steps;
    let nodes = n + 1;
    let (e1, e1_adj) = exp(1);
    let mut mild = coef.qt_sum.clone();
    let mut worst = probe_residual(sp, &(&p.values[n] - &mild));
    for k in (0..n).rev() {
        let mut next = e1_adj * &mild * e1;
        let (first, weights) = interval_stencil(nodes, k, h);
        for (j, w) in weights.iter().enumerate() {
            let node = first + j;
            let (e, ea) = exp(node as isize - k as isize);
            next += ea * &forcing[node] * e * *w;
        }
        mild = next;
        worst = worst.max(probe_residual(sp, &(&p.values[k] - &mild)));
    }
    Ok(worst)
}

/// `max_j |D e_j|_W / sqrt(w_j)`: the action of `D` on W-unit coordinate vectors.
fn probe_residual(space: &HilbertSpace, d: &Operator) -> f64 {
    let w = space.weights();
    (0..d.ncols())
        .map(|j| {
            let col = d.column(j).into_owned();
            space.norm(&col) / w[j].sqrt()
        })
        .fold(0.0, f64::max)
}

/// Default certificate tolerance `1e-6 (1 + ||Q_T + Qbar_T||)`.
pub fn residual_tol(problem: &MfgProblem) -> f64 {
    1e-6 * (1.0 + problem.space.op_norm(&(&problem.qt + &problem.qbart)))
}

/// A-priori bound `M^2 e^{2 omega+ T} (||Q_T + Qbar_T|| + T ||Q + Qbar||)`.
pub fn p_bound(problem: &MfgProblem, gb: &GrowthBound) -> f64 {
    let sp = &problem.space;
    let t = problem.horizon;
    let terminal = sp.op_norm(&(&problem.qt + &problem.qbart));
    let running = sp.op_norm(&(&problem.q + &problem.qbar));
    gb.m * gb.m * (2.0 * gb.omega_plus() * t).exp() * (terminal + t * running)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{scalar_equilibrium, scalar_q2, ScalarData};
    use crate::linops::growth_bound;

    /// Scalar RK4 for `p' = p^2 - q` backward from `p(T) = g`.
    pub(crate) fn scalar_oracle(q: f64, g: f64, horizon: f64, steps: usize) -> f64 {
        let h = horizon / steps as f64;
        let f = |p: f64| q - p * p;
        let mut p = g;
        for _ in 0..steps {
            let k1 = f(p);
            let k2 = f(p + 0.5 * h * k1);
            let k3 = f(p + 0.5 * h * k2);
            let k4 = f(p + h * k3);
            p += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        p
    }

    #[test]
    fn equilibrium_is_constant() {
        let prob = scalar_equilibrium();
        let p = solve_riccati_p(&prob, &TimeGrid::new(1.0, 200).unwrap()).unwrap();
        for v in &p.values {
            assert!((v[(0, 0)] - 1.0).abs() < 1e-14);
        }
        assert!(riccati_residual(&p, &prob).unwrap() <= 1e-9);
    }

    #[test]
    fn lyapunov_case_is_linear_in_time() {
        let prob = ScalarData { b: 0.0, q: 3.0, qt: 2.0, ..Default::default() }.build();
        let grid = TimeGrid::new(1.0, 50).unwrap();
        let p = solve_riccati_p(&prob, &grid).unwrap();
        for (k, v) in p.values.iter().enumerate() {
            let t = grid.node(k);
            assert!((v[(0, 0)] - (2.0 + 3.0 * (1.0 - t))).abs() < 1e-12);
        }
    }

    #[test]
    fn q2_matches_fine_oracle() {
        let prob = scalar_q2(1.0);
        let p = solve_riccati_p(&prob, &TimeGrid::new(1.0, 1000).unwrap()).unwrap();
        let oracle = scalar_oracle(2.0, 1.0, 1.0, 100_000);
        assert!((p.values[0][(0, 0)] - oracle).abs() <= 1e-8);
        assert!(riccati_residual(&p, &prob).unwrap() <= 1e-6);
    }

    #[test]
    fn terminal_value_is_exact() {
        let prob = scalar_q2(0.7);
        let p = solve_riccati_p(&prob, &TimeGrid::new(0.7, 30).unwrap()).unwrap();
        assert_eq!(p.values[30], &prob.qt + &prob.qbart);
    }

    #[test]
    fn residual_of_constant_solution() {
        let prob = ScalarData { b: 0.0, q: 0.0, qbar: 0.0, qt: 1.5, ..Default::default() }.build();
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let p = OperatorPath::constant(grid, Operator::from_element(1, 1, 1.5), true);
        assert_eq!(riccati_residual(&p, &prob).unwrap(), 0.0);
    }

    #[test]
    fn residual_rejects_foreign_grid() {
        let prob = scalar_equilibrium();
        let p = OperatorPath::constant(TimeGrid::new(2.0, 10).unwrap(), Operator::identity(1, 1), true);
        assert!(matches!(riccati_residual(&p, &prob), Err(MfgError::GridMismatch(_))));
    }

    #[test]
    fn p_bound_examples() {
        let prob = scalar_equilibrium();
        let gb = growth_bound(&prob.space, &prob.a, 1.0, 100).unwrap();
        assert_eq!(p_bound(&prob, &gb), 2.0);
        assert_eq!(p_bound(&scalar_q2(1.0), &gb), 3.0);
        let zero = ScalarData { q: 0.0, qt: 0.0, ..Default::default() }.build();
        assert_eq!(p_bound(&zero, &gb), 0.0);
    }

    #[test]
    fn fourth_order_in_time() {
        let prob = scalar_q2(1.0);
        let oracle = scalar_oracle(2.0, 1.0, 1.0, 100_000);
        let err = |n: usize| {
            let p = solve_riccati_p(&prob, &TimeGrid::new(1.0, n).unwrap()).unwrap();
            (p.values[0][(0, 0)] - oracle).abs()
        };
        let ratio = err(20) / err(40);
        assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
    }
}
