//! Auxiliary Riccati equation for the decoupling operator `eta`.
//!
//! Backward form:
//! `eta' = (P G - A*) eta - eta (A - G P) + Qbar S + eta G eta`,
//! `eta(T) = -Qbar_T S_T`.
//!
//! The solvers work with the time-inverted unknown `f(s) = eta(T - s)`,
//! which solves `f' = A* f + f A - F(f)` with
//! `F(f) = Qbar S + P G f + f G P + f G f`, `f(0) = -Qbar_T S_T`,
//! through the fixed point of the variation-of-constants map
//! `f(s) = E(s)* f(0) E(s) - int_0^s E(s - u)* F(u) E(s - u) du`.

use crate::error::{MfgError, Result};
use crate::linops::{is_psd, mat_exp, semigroup_sup, HilbertSpace, Operator};
use crate::path::{OperatorPath, TimeGrid};
use crate::problem::MfgProblem;
use crate::quad::interval_stencil;

/// Successive-difference tolerance of the local fixed-point iteration.
pub const SWEEP_TOL: f64 = 1e-10;
pub const MAX_SWEEPS: usize = 200;
pub const MAX_SEGMENTS: usize = 1_000_000;
/// Sub-steps of the fixed-point quadrature per solver cell (at least).
pub const SUB_STEPS: usize = 4;
/// Fewest sub-cells in one continuation segment.
const MIN_SEGMENT_CELLS: usize = 2;
/// Sample count used for `M_T = sup ||e^{tA}||`.
pub const SEMIGROUP_SAMPLES: usize = 1000;
const BISECTION_ITERS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EtaSegment {
    pub start: f64,
    pub end: f64,
    pub radius: f64,
}

/// Contraction data for the `eta` fixed point.
///
/// `tau` is the certified step for the first segment; `global_ok` reports that
/// a solution on the whole horizon has been certified (either one step covers
/// `[0, T]` or the continuation route succeeded).
#[derive(Debug, Clone, PartialEq)]
pub struct EtaCertificate {
    pub radius_r: f64,
    pub tau: f64,
    pub beta_t: f64,
    pub global_ok: bool,
    pub segments: Vec<EtaSegment>,
    pub max_sweep_ratio: f64,
    pub total_sweeps: usize,
}

/// Norm inputs of the contraction inequalities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EtaNorms {
    /// `M_T`
    pub mt: f64,
    /// `||Qbar_T S_T||`
    pub terminal: f64,
    /// `||Qbar S||`
    pub running: f64,
    /// `sup_t ||P(t)||`
    pub p_sup: f64,
    /// `||B R^{-1} B*||`
    pub gain_norm: f64,
    pub horizon: f64,
}

impl EtaNorms {
    pub fn from_problem(problem: &MfgProblem, p: &OperatorPath, mt: f64) -> Result<Self> {
        let coef = problem.coefficients()?;
        let sp = &problem.space;
        Ok(Self {
            mt,
            terminal: sp.op_norm(&coef.qbart_st),
            running: sp.op_norm(&coef.qbar_s),
            p_sup: p.sup_norm(sp),
            gain_norm: coef.gain_norm,
            horizon: problem.horizon,
        })
    }

    /// First-step radius `2 M_T^2 ||Qbar_T S_T||`.
    pub fn radius(&self) -> f64 {
        2.0 * self.mt * self.mt * self.terminal
    }

    /// `beta_T = M_T^2 (||Qbar_T S_T|| + T ||Qbar S||) exp(2 T M_T^2 sup||P|| ||B R^{-1} B*||)`.
    pub fn beta_t(&self) -> f64 {
        let m2 = self.mt * self.mt;
        m2 * (self.terminal + self.horizon * self.running)
            * (2.0 * self.horizon * m2 * self.p_sup * self.gain_norm).exp()
    }

    /// Radius used after each restart, `2 M_T^2 beta_T`.
    pub fn restart_radius(&self) -> f64 {
        2.0 * self.mt * self.mt * self.beta_t()
    }

    /// Both contraction inequalities at step `tau` for ball radius `r` around a
    /// datum of norm `n0`.
    pub fn holds(&self, tau: f64, r: f64, n0: f64) -> bool {
        let m2 = self.mt * self.mt;
        let c = self.gain_norm;
        let p = self.p_sup;
        let ball = m2 * (n0 + tau * (self.running + 2.0 * r * p * c + r * r * c)) <= r;
        let lipschitz = tau * m2 * (2.0 * p * c + 2.0 * r * c) <= 0.5;
        ball && lipschitz
    }
}

/// Largest `tau` in `[0, T]` (bisection) for which [`EtaNorms::holds`] is true;
/// zero when no positive step qualifies.
pub fn largest_contraction_step(norms: &EtaNorms, r: f64, n0: f64) -> f64 {
    let t = norms.horizon;
    if norms.holds(t, r, n0) {
        return t;
    }
    if !norms.holds(0.0, r, n0) {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, t);
    for _ in 0..BISECTION_ITERS {
        let mid = 0.5 * (lo + hi);
        if norms.holds(mid, r, n0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

pub fn eta_contraction_params(problem: &MfgProblem, p: &OperatorPath, mt: f64) -> Result<EtaCertificate> {
    if !(mt >= 1.0) {
        return Err(MfgError::InvalidProblem(format!("M_T must be >= 1, got {mt}")));
    }
    let norms = EtaNorms::from_problem(problem, p, mt)?;
    let r = norms.radius();
    let tau = largest_contraction_step(&norms, r, norms.terminal);
    Ok(EtaCertificate {
        radius_r: r,
        tau,
        beta_t: norms.beta_t(),
        global_ok: tau >= norms.horizon,
        segments: Vec::new(),
        max_sweep_ratio: 0.0,
        total_sweeps: 0,
    })
}

struct Workspace<'a> {
    space: &'a HilbertSpace,
    gain: Operator,
    qbar_s: Operator,
    /// `(E(j h), E(j h)*)` for `j = -2..=3`.
    exps: Vec<(Operator, Operator)>,
}

impl<'a> Workspace<'a> {
    fn new(problem: &'a MfgProblem, h: f64) -> Result<Self> {
        let coef = problem.coefficients()?;
        let sp = &problem.space;
        let exps = (-2..=3)
            .map(|j| {
                let e = mat_exp(&problem.a, j as f64 * h)?;
                let ea = sp.adjoint(&e);
                Ok((e, ea))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { space: sp, gain: coef.gain, qbar_s: coef.qbar_s, exps })
    }

    fn exp(&self, offset: isize) -> &(Operator, Operator) {
        &self.exps[(offset + 2) as usize]
    }

    fn forcing(&self, p: &Operator, f: &Operator) -> Operator {
        let gf = &self.gain * f;
        let pgf = p * &gf;
        // P G f + f G P = P G f + (P G f)* for self-adjoint P, f, G
        &self.qbar_s + &pgf + self.space.adjoint(&pgf) + f * &gf
    }

    /// One application of the fixed-point map on uniform sub-nodes of step `h`.
    fn sweep(&self, p_nodes: &[Operator], f: &[Operator], h: f64) -> Vec<Operator> {
        let n = f.len();
        let forcing: Vec<Operator> = p_nodes.iter().zip(f).map(|(p, fk)| self.forcing(p, fk)).collect();
        let (e1, e1_adj) = self.exp(1);
        let mut out = Vec::with_capacity(n);
        let mut acc = f[0].clone();
        out.push(acc.clone());
        for k in 0..n - 1 {
            let mut next = e1_adj * &acc * e1;
            let (first, weights) = interval_stencil(n, k, h);
            for (j, w) in weights.iter().enumerate() {
                let node = first + j;
                let (e, ea) = self.exp(k as isize + 1 - node as isize);
                next -= ea * &forcing[node] * e * *w;
            }
            acc = self.space.symmetrize(&next);
            out.push(acc.clone());
        }
        out
    }

    fn solve(&self, p_nodes: &[Operator], f_start: &Operator, h: f64) -> Result<(Vec<Operator>, Vec<f64>)> {
        self.solve_from(p_nodes, vec![f_start.clone(); p_nodes.len()], h)
    }

    /// Iterates from `guess`; the first entry of `guess` is the initial datum.
    fn solve_from(&self, p_nodes: &[Operator], guess: Vec<Operator>, h: f64) -> Result<(Vec<Operator>, Vec<f64>)> {
        let mut f = guess;
        let mut diffs = Vec::new();
        for sweep in 1..=MAX_SWEEPS {
            let next = self.sweep(p_nodes, &f, h);
            let diff = next
                .iter()
                .zip(&f)
                .map(|(a, b)| self.space.op_norm(&(a - b)))
                .fold(0.0, f64::max);
            f = next;
            diffs.push(diff);
            if !diff.is_finite() || diff > 1e12 {
                return Err(MfgError::ContractionFailure { sweeps: sweep, last_diff: diff });
            }
            if diff <= SWEEP_TOL {
                return Ok((f, diffs));
            }
        }
        Err(MfgError::ContractionFailure {
            sweeps: MAX_SWEEPS,
            last_diff: *diffs.last().unwrap_or(&f64::NAN),
        })
    }
}

/// Ratios of consecutive sweep differences above the roundoff floor.
pub fn sweep_ratios(diffs: &[f64], scale: f64) -> Vec<f64> {
    let floor = 1e-12 * (1.0 + scale);
    diffs
        .windows(2)
        .filter(|w| w[0] > floor && w[1] > floor)
        .map(|w| w[1] / w[0])
        .collect()
}

/// Forward-time solution on `[s_a, s_b]` with `f(s_a) = eta_start`.
#[derive(Debug, Clone)]
pub struct LocalEta {
    /// `f` on a uniform grid over `[s_a, s_b]`; `f(s) = eta(T - s)`.
    pub path: OperatorPath,
    pub sweep_diffs: Vec<f64>,
    pub ratios: Vec<f64>,
}

/// Fixed point of the time-inverted map on the forward interval `interval`.
pub fn solve_eta_local(
    problem: &MfgProblem,
    p: &OperatorPath,
    interval: (f64, f64),
    eta_start: &Operator,
) -> Result<LocalEta> {
    let (sa, sb) = interval;
    let horizon = problem.horizon;
    if !(0.0 <= sa && sa < sb && sb <= horizon * (1.0 + 1e-12)) {
        return Err(MfgError::InvalidProblem(format!(
            "interval [{sa}, {sb}] is not inside [0, {horizon}]"
        )));
    }
    problem.space.check_operator("eta_start", eta_start)?;
    if !problem.space.is_self_adjoint(eta_start, 1e-9) && problem.space.op_norm(eta_start) > 0.0 {
        return Err(MfgError::SymmetryViolation {
            defect: problem.space.self_adjoint_defect(eta_start),
            tol: 1e-9 * problem.space.op_norm(eta_start),
        });
    }
    let target = p.grid.step() / SUB_STEPS as f64;
    let n = (((sb - sa) / target).ceil() as usize).max(2);
    let grid = TimeGrid::on_interval(sa, sb, n)?;
    let ws = Workspace::new(problem, grid.step())?;
    let p_nodes: Vec<Operator> = grid.nodes().map(|s| p.at(horizon - s)).collect();
    let (values, diffs) = ws.solve(&p_nodes, eta_start, grid.step())?;
    let scale = values.iter().map(|v| problem.space.op_norm(v)).fold(0.0, f64::max);
    Ok(LocalEta {
        path: OperatorPath::new(grid, values, true)?,
        ratios: sweep_ratios(&diffs, scale),
        sweep_diffs: diffs,
    })
}

/// Splits `total` cells into a first segment of at most `first` cells and
/// near-equal segments of at most `rest` cells.
fn segment_cells(total: usize, first: usize, rest: usize) -> Vec<usize> {
    let head = first.min(total);
    let mut cells = vec![head];
    let remaining = total - head;
    if remaining > 0 {
        let count = remaining.div_ceil(rest);
        let base = remaining / count;
        let extra = remaining % count;
        cells.extend((0..count).map(|i| base + usize::from(i < extra)));
    }
    cells
}

struct Continuation {
    forward: Vec<Operator>,
    segments: Vec<EtaSegment>,
    max_ratio: f64,
    total_sweeps: usize,
}

/// Chains local fixed points over `[0, T]` in forward time: a first segment of
/// length at most `first.0` (radius `first.1`), then segments of length at
/// most `rest.0` (radius `rest.1`).
fn continuation(
    problem: &MfgProblem,
    p: &OperatorPath,
    first: (f64, f64),
    rest: (f64, f64),
) -> Result<Continuation> {
    let sp = &problem.space;
    let horizon = problem.horizon;
    let grid = p.grid;
    let h = grid.step();
    let est_segments = 1.0 + (horizon - first.0).max(0.0) / rest.0;
    if est_segments > MAX_SEGMENTS as f64 {
        return Err(MfgError::Pathological { segments: est_segments.ceil() as usize });
    }
    let min_tau = first.0.min(rest.0);
    let sub = ((MIN_SEGMENT_CELLS as f64 * h / min_tau).ceil() as usize).max(SUB_STEPS);
    let hs = h / sub as f64;
    let total = grid.n_steps * sub;
    let first_cells = ((first.0 / hs).floor() as usize).max(1);
    let rest_cells = ((rest.0 / hs).floor() as usize).max(1);
    let cells = segment_cells(total, first_cells, rest_cells);
    if cells.len() > MAX_SEGMENTS {
        return Err(MfgError::Pathological { segments: cells.len() });
    }

    let ws = Workspace::new(problem, hs)?;
    let terminal = -problem.coefficients()?.qbart_st;
    let mut forward = vec![Operator::zeros(0, 0); grid.len()];
    forward[0] = terminal.clone();
    let mut segments = Vec::with_capacity(cells.len());
    let mut start_cell = 0usize;
    let mut f_start = terminal;
    let mut slope: Option<Operator> = None;
    let mut max_ratio: f64 = 0.0;
    let mut total_sweeps = 0;
    let node_time = |c: usize| if c == total { horizon } else { c as f64 * hs };
    for (i, &m) in cells.iter().enumerate() {
        let p_nodes: Vec<Operator> =
            (start_cell..=start_cell + m).map(|c| p.at(horizon - node_time(c))).collect();
        // linear extrapolation of the previous segment as the first iterate
        let guess: Vec<Operator> = (0..=m)
            .map(|j| match &slope {
                Some(d) if j > 0 => &f_start + d * j as f64,
                _ => f_start.clone(),
            })
            .collect();
        let (values, diffs) = ws.solve_from(&p_nodes, guess, hs)?;
        let scale = values.iter().map(|v| sp.op_norm(v)).fold(0.0, f64::max);
        max_ratio = sweep_ratios(&diffs, scale).into_iter().fold(max_ratio, f64::max);
        total_sweeps += diffs.len();
        for (j, v) in values.iter().enumerate() {
            let c = start_cell + j;
            if c.is_multiple_of(sub) && c > 0 {
                forward[c / sub] = v.clone();
            }
        }
        segments.push(EtaSegment {
            start: node_time(start_cell),
            end: node_time(start_cell + m),
            radius: if i == 0 { first.1 } else { rest.1 },
        });
        f_start = values.last().expect("segment has nodes").clone();
        slope = Some(&f_start - &values[values.len() - 2]);
        start_cell += m;
    }
    Ok(Continuation { forward, segments, max_ratio, total_sweeps })
}

fn check_dissipative(problem: &MfgProblem) -> Result<()> {
    let sp = &problem.space;
    let coef = problem.coefficients()?;
    for (name, op) in [("-Qbar S", -&coef.qbar_s), ("-Qbar_T S_T", -&coef.qbart_st)] {
        let tol = 1e-10 * (1.0 + sp.op_norm(&op));
        let report = is_psd(sp, &op, tol)
            .map_err(|e| MfgError::Precondition(format!("{name} is not self-adjoint: {e}")))?;
        if !report.is_psd {
            return Err(MfgError::Precondition(format!(
                "{name} is not nonnegative (min eigenvalue {:.3e})",
                report.min_eig
            )));
        }
    }
    Ok(())
}

fn into_backward(grid: TimeGrid, mut forward: Vec<Operator>) -> Result<OperatorPath> {
    forward.reverse();
    OperatorPath::new(grid, forward, true)
}

/// Continuation over `[0, T]` under the dissipativity preconditions; returns
/// `eta` in the original (backward) orientation.
pub fn solve_eta_global(problem: &MfgProblem, p: &OperatorPath) -> Result<(OperatorPath, EtaCertificate)> {
    check_dissipative(problem)?;
    let sp = &problem.space;
    let mt = semigroup_sup(sp, &problem.a, problem.horizon, SEMIGROUP_SAMPLES)?;
    let norms = EtaNorms::from_problem(problem, p, mt)?;
    let beta_t = norms.beta_t();
    let r0 = norms.radius();
    let tau0 = largest_contraction_step(&norms, r0, norms.terminal);
    let r1 = norms.restart_radius();
    let tau1 = largest_contraction_step(&norms, r1, beta_t);
    if !(tau1 > 0.0) {
        return Err(MfgError::Certificate(format!(
            "no admissible continuation step (beta_T = {beta_t:.3e}, restart radius {r1:.3e})"
        )));
    }
    let first = if tau0 > 0.0 { (tau0, r0) } else { (tau1, r1) };
    let run = continuation(problem, p, first, (tau1, r1))?;

    let tol_low = -1e-8 * (1.0 + beta_t);
    let tol_high = beta_t * (1.0 + 1e-6) + 1e-12;
    for (k, f) in run.forward.iter().enumerate() {
        let (lo, hi) = sp.eig_range(f);
        if lo < tol_low || hi > tol_high {
            return Err(MfgError::Certificate(format!(
                "eigenvalues [{lo:.3e}, {hi:.3e}] of the time-inverted solution at s = {:.6} \
                 leave [0, beta_T = {beta_t:.6e}]",
                p.grid.node(k)
            )));
        }
    }
    let eta = into_backward(p.grid, run.forward)?;
    Ok((
        eta,
        EtaCertificate {
            radius_r: first.1,
            tau: first.0,
            beta_t,
            global_ok: true,
            segments: run.segments,
            max_sweep_ratio: run.max_ratio,
            total_sweeps: run.total_sweeps,
        },
    ))
}

/// Whichever route applies: one contraction step over the whole horizon when
/// the certified step covers it, otherwise the dissipative continuation.
pub fn solve_eta(problem: &MfgProblem, p: &OperatorPath) -> Result<(OperatorPath, EtaCertificate)> {
    let mt = semigroup_sup(&problem.space, &problem.a, problem.horizon, SEMIGROUP_SAMPLES)?;
    let mut cert = eta_contraction_params(problem, p, mt)?;
    if cert.global_ok {
        let run = continuation(problem, p, (problem.horizon, cert.radius_r), (problem.horizon, cert.radius_r))?;
        cert.segments = run.segments;
        cert.max_sweep_ratio = run.max_ratio;
        cert.total_sweeps = run.total_sweeps;
        return Ok((into_backward(p.grid, run.forward)?, cert));
    }
    solve_eta_global(problem, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{scalar_equilibrium, scalar_q2};
    use crate::riccati::solve_riccati_p;

    fn norms(p_sup: f64, terminal: f64) -> EtaNorms {
        EtaNorms { mt: 1.0, terminal, running: 1.0, p_sup, gain_norm: 1.0, horizon: 1.0 }
    }

    #[test]
    fn radius_formula() {
        assert_eq!(norms(1.0, 1.0).radius(), 2.0);
        assert_eq!(norms(1.0, 0.0).radius(), 0.0);
    }

    #[test]
    fn step_binds_on_lipschitz_constraint() {
        let n = norms(2f64.sqrt(), 1.0);
        let tau = largest_contraction_step(&n, 2.0, 1.0);
        let binding = 1.0 / (2.0 * (2.0 * 2f64.sqrt() + 4.0));
        assert!((tau - binding).abs() < 1e-6, "{tau} vs {binding}");
    }

    #[test]
    fn zero_terminal_coupling_uses_lipschitz_bound_only() {
        let n = EtaNorms { running: 0.0, ..norms(1.0, 0.0) };
        let tau = largest_contraction_step(&n, 0.0, 0.0);
        assert!((tau - 0.25).abs() < 1e-6);
    }

    #[test]
    fn beta_formula() {
        let b = norms(2f64.sqrt(), 1.0).beta_t();
        assert!((b - 2.0 * (2.0 * 2f64.sqrt()).exp()).abs() < 1e-12);
        assert!((b - 33.84).abs() < 0.01);
    }

    #[test]
    fn uncoupled_problem_gives_zero() {
        let prob = scalar_equilibrium();
        let p = solve_riccati_p(&prob, &TimeGrid::new(1.0, 100).unwrap()).unwrap();
        let (eta, cert) = solve_eta_global(&prob, &p).unwrap();
        assert!(eta.values.iter().all(|v| v[(0, 0)] == 0.0));
        assert_eq!(cert.beta_t, 0.0);
        let local = solve_eta_local(&prob, &p, (0.0, 0.1), &Operator::zeros(1, 1)).unwrap();
        assert!(local.path.values.iter().all(|v| v[(0, 0)] == 0.0));
    }

    #[test]
    fn precondition_is_checked() {
        let mut prob = scalar_q2(1.0);
        prob.s = Operator::from_element(1, 1, 1.0);
        let p = solve_riccati_p(&prob, &TimeGrid::new(1.0, 100).unwrap()).unwrap();
        assert!(matches!(solve_eta_global(&prob, &p), Err(MfgError::Precondition(_))));
    }

    /// Joint RK4 for `(p, f)` in forward time on the scalar q=2 data.
    fn q2_oracle(horizon: f64, steps: usize) -> f64 {
        let rhs = |p: f64, f: f64| (2.0 - p * p, 1.0 - 2.0 * p * f - f * f);
        let h = horizon / steps as f64;
        let (mut p, mut f) = (1.0, 1.0);
        for _ in 0..steps {
            let k1 = rhs(p, f);
            let k2 = rhs(p + 0.5 * h * k1.0, f + 0.5 * h * k1.1);
            let k3 = rhs(p + 0.5 * h * k2.0, f + 0.5 * h * k2.1);
            let k4 = rhs(p + h * k3.0, f + h * k3.1);
            p += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
            f += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
        }
        f
    }

    #[test]
    fn local_solve_matches_dense_oracle() {
        let prob = scalar_q2(0.05);
        let p = solve_riccati_p(&prob, &TimeGrid::default_for(0.05).unwrap()).unwrap();
        let start = Operator::from_element(1, 1, 1.0);
        let local = solve_eta_local(&prob, &p, (0.0, 0.05), &start).unwrap();
        let end = local.path.values.last().unwrap()[(0, 0)];
        let oracle = q2_oracle(0.05, 100_000);
        assert!((end - oracle).abs() < 1e-8, "{end} vs {oracle}");
        assert!(local.ratios.iter().all(|r| *r <= 0.5), "{:?}", local.ratios);
    }

    #[test]
    fn global_solve_matches_dense_oracle() {
        let prob = scalar_q2(1.0);
        let p = solve_riccati_p(&prob, &TimeGrid::default_for(1.0).unwrap()).unwrap();
        let (eta, cert) = solve_eta_global(&prob, &p).unwrap();
        let oracle = q2_oracle(1.0, 100_000);
        assert!((eta.values[0][(0, 0)] - oracle).abs() < 1e-6, "{} vs {oracle}", eta.values[0][(0, 0)]);
        assert_eq!(eta.values.last().unwrap()[(0, 0)], 1.0);
        assert!(cert.global_ok && cert.max_sweep_ratio <= 0.55);
        for v in &eta.values {
            assert!(v[(0, 0)] >= 0.0 && v[(0, 0)] <= cert.beta_t);
        }
    }

    #[test]
    fn segment_split() {
        assert_eq!(segment_cells(10, 4, 3), vec![4, 3, 3]);
        assert_eq!(segment_cells(10, 20, 3), vec![10]);
        assert_eq!(segment_cells(11, 4, 3), vec![4, 3, 2, 2]);
    }
}
