//! Forward-backward system for the population mean `z` and the linear value
//! coefficient `r`:
//!
//! ```text
//! z' = (A - G P) z - G r,                 z(0) = z0
//! r' = -(A* - P G) r + Qbar S z + c,      r(T) = -Qbar_T S_T z(T) - c_T
//! ```
//!
//! solved either by fixed-point iteration on `r` or by the decoupling
//! `r = eta z + kappa`.

use crate::error::{MfgError, Result};
use crate::eta::{solve_eta, EtaCertificate};
use crate::linops::{growth_bound, mat_exp, GrowthBound, HilbertSpace, Operator, State};
use crate::path::{OperatorPath, ScalarPath, TimeGrid, VectorPath};
use crate::problem::{Coefficients, MfgProblem};
use crate::quad::{interval_stencil, tail_integrals};
use crate::riccati::BLOW_UP;

pub const PICARD_TOL: f64 = 1e-10;
pub const PICARD_MAX_ITER: usize = 200;
/// Slack added to `C_T` when comparing measured sweep ratios.
pub const RATIO_SLACK: f64 = 0.05;
pub const GROWTH_SAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Decoupled,
    Picard,
    Shooting,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Decoupled => "decoupled",
            Method::Picard => "picard",
            Method::Shooting => "shooting",
        }
    }
}

/// Small-horizon contraction constant and its ingredients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractionReport {
    pub c_t: f64,
    pub c_br: f64,
    pub c_qbart_st: f64,
    pub c_qbar_s: f64,
    pub beta: f64,
    pub is_contraction: bool,
}

/// `C_T = M^2 (C_QTST + C_QS T) T C_BR exp(2 M e^{wT} C_BR beta T + 2 w T)`.
pub fn contraction_constant_from(
    gb: &GrowthBound,
    c_br: f64,
    c_qbart_st: f64,
    c_qbar_s: f64,
    beta: f64,
    horizon: f64,
) -> ContractionReport {
    let (m, w, t) = (gb.m, gb.omega, horizon);
    let c_t = m * m * (c_qbart_st + c_qbar_s * t) * t * c_br
        * (2.0 * m * (w * t).exp() * c_br * beta * t + 2.0 * w * t).exp();
    ContractionReport { c_t, c_br, c_qbart_st, c_qbar_s, beta, is_contraction: c_t < 1.0 }
}

pub fn contraction_constant(problem: &MfgProblem, gb: &GrowthBound) -> Result<ContractionReport> {
    let coef = problem.coefficients()?;
    let sp = &problem.space;
    let t = problem.horizon;
    let beta = gb.m * gb.m * (2.0 * gb.omega * t).exp()
        * (sp.op_norm(&coef.qt_sum) + t * sp.op_norm(&coef.q_sum));
    Ok(contraction_constant_from(
        gb,
        coef.gain_norm,
        sp.op_norm(&coef.qbart_st),
        sp.op_norm(&coef.qbar_s),
        beta,
        t,
    ))
}

#[derive(Debug, Clone, Default)]
pub struct Diagnostics {
    pub iterations: usize,
    pub sweep_diffs: Vec<f64>,
    pub contraction_ratios: Vec<f64>,
    pub contraction: Option<ContractionReport>,
    /// Whether every measured ratio stayed below `C_T + 0.05` (only when `C_T < 1`).
    pub ratio_check: Option<bool>,
    pub residual_z: f64,
    pub residual_r: f64,
    pub eta_certificate: Option<EtaCertificate>,
    pub notes: Vec<String>,
}

/// `(P, z, r, s)` on a common grid.
#[derive(Debug, Clone)]
pub struct LqmSolution {
    pub p: OperatorPath,
    pub z: VectorPath,
    pub r: VectorPath,
    /// Absent when the problem has affine terms.
    pub s: Option<ScalarPath>,
    pub eta: Option<OperatorPath>,
    pub method: Method,
    pub diagnostics: Diagnostics,
}

impl LqmSolution {
    pub fn grid(&self) -> TimeGrid {
        self.p.grid
    }

    pub fn value(&self, space: &HilbertSpace, t: f64, x: &State) -> Option<f64> {
        self.s.as_ref().map(|s| value_function(space, &self.p, &self.r, s, t, x))
    }
}

/// Values of a path at nodes and midpoints, `2 n_steps + 1` entries.
fn half_nodes_op(path: &OperatorPath) -> Vec<Operator> {
    let g = path.grid;
    let h = g.step();
    let mut out = Vec::with_capacity(2 * g.n_steps + 1);
    for k in 0..g.n_steps {
        out.push(path.values[k].clone());
        out.push(path.at(g.node(k) + 0.5 * h));
    }
    out.push(path.values[g.n_steps].clone());
    out
}

fn half_nodes_vec(path: &VectorPath) -> Vec<State> {
    let g = path.grid;
    let h = g.step();
    let mut out = Vec::with_capacity(2 * g.n_steps + 1);
    for k in 0..g.n_steps {
        out.push(path.values[k].clone());
        out.push(path.at(g.node(k) + 0.5 * h));
    }
    out.push(path.values[g.n_steps].clone());
    out
}

fn guard(space: &HilbertSpace, x: &State, node: usize, t: f64) -> Result<()> {
    let norm = space.norm(x);
    if !norm.is_finite() || norm > BLOW_UP {
        return Err(MfgError::Divergence { node, t, norm });
    }
    Ok(())
}

/// RK4 for `x' = M(t) x + g(t)` with coefficients given at half nodes.
/// Runs forward from `x(t_0)` or backward from `x(t_N)`.
fn linear_rk4(
    space: &HilbertSpace,
    grid: &TimeGrid,
    m: &[Operator],
    g: &[State],
    start: State,
    backward: bool,
) -> Result<Vec<State>> {
    let n = grid.n_steps;
    let h = grid.step();
    let f = |i: usize, x: &State| &m[i] * x + &g[i];
    let mut out = vec![State::zeros(0); n + 1];
    let mut x = start;
    if backward {
        out[n] = x.clone();
        for k in (0..n).rev() {
            let (i0, im, i1) = (2 * k + 2, 2 * k + 1, 2 * k);
            let k1 = f(i0, &x);
            let k2 = f(im, &(&x - &k1 * (0.5 * h)));
            let k3 = f(im, &(&x - &k2 * (0.5 * h)));
            let k4 = f(i1, &(&x - &k3 * h));
            x -= (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0);
            guard(space, &x, k, grid.node(k))?;
            out[k] = x.clone();
        }
    } else {
        out[0] = x.clone();
        for k in 0..n {
            let (i0, im, i1) = (2 * k, 2 * k + 1, 2 * k + 2);
            let k1 = f(i0, &x);
            let k2 = f(im, &(&x + &k1 * (0.5 * h)));
            let k3 = f(im, &(&x + &k2 * (0.5 * h)));
            let k4 = f(i1, &(&x + &k3 * h));
            x += (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0);
            guard(space, &x, k + 1, grid.node(k + 1))?;
            out[k + 1] = x.clone();
        }
    }
    Ok(out)
}

/// Coefficients shared by every sweep on a fixed `P`.
struct Propagator<'a> {
    problem: &'a MfgProblem,
    coef: Coefficients,
    grid: TimeGrid,
    /// `A - G P` at half nodes.
    z_drift: Vec<Operator>,
    /// `-(A* - P G)` at half nodes.
    r_drift: Vec<Operator>,
}

impl<'a> Propagator<'a> {
    fn new(problem: &'a MfgProblem, p: &OperatorPath) -> Result<Self> {
        problem.check_structure()?;
        let grid = p.grid;
        if (grid.end - problem.horizon).abs() > 1e-12 * (1.0 + problem.horizon) || grid.start != 0.0 {
            return Err(MfgError::GridMismatch(format!(
                "P lives on [{}, {}], horizon is {}",
                grid.start, grid.end, problem.horizon
            )));
        }
        let coef = problem.coefficients()?;
        let ph = half_nodes_op(p);
        let z_drift = ph.iter().map(|pk| &problem.a - &coef.gain * pk).collect();
        let r_drift = ph.iter().map(|pk| pk * &coef.gain - &coef.a_adj).collect();
        Ok(Self { problem, coef, grid, z_drift, r_drift })
    }

    fn z_from_r(&self, r: &VectorPath) -> Result<VectorPath> {
        self.grid.require_same(&r.grid)?;
        let g: Vec<State> = half_nodes_vec(r).iter().map(|rk| -(&self.coef.gain * rk)).collect();
        let vals = linear_rk4(&self.problem.space, &self.grid, &self.z_drift, &g, self.problem.z0.clone(), false)?;
        VectorPath::new(self.grid, vals)
    }

    fn r_from_z(&self, z: &VectorPath) -> Result<VectorPath> {
        self.grid.require_same(&z.grid)?;
        let pr = self.problem;
        let g: Vec<State> =
            half_nodes_vec(z).iter().map(|zk| &self.coef.qbar_s * zk + &pr.affine_c).collect();
        let terminal = -(&self.coef.qbart_st * z.last()) - &pr.affine_ct;
        let vals = linear_rk4(&pr.space, &self.grid, &self.r_drift, &g, terminal, true)?;
        VectorPath::new(self.grid, vals)
    }
}

/// Forward map `r -> z`.
pub fn propagate_z(problem: &MfgProblem, p: &OperatorPath, r: &VectorPath) -> Result<VectorPath> {
    Propagator::new(problem, p)?.z_from_r(r)
}

/// Backward map `z -> r`.
pub fn propagate_r(problem: &MfgProblem, p: &OperatorPath, z: &VectorPath) -> Result<VectorPath> {
    Propagator::new(problem, p)?.r_from_z(z)
}

fn ratios(diffs: &[f64], scale: f64) -> Vec<f64> {
    let floor = 1e-13 * (1.0 + scale);
    diffs
        .windows(2)
        .filter(|w| w[0] > floor && w[1] > floor)
        .map(|w| w[1] / w[0])
        .collect()
}

/// Fixed-point iteration `r <- Phi(Psi(r))` from `r = 0`.
pub fn solve_picard(problem: &MfgProblem, p: &OperatorPath, tol: f64, max_iter: usize) -> Result<LqmSolution> {
    let r0 = VectorPath::zeros(p.grid, problem.dim());
    solve_picard_from(problem, p, &r0, tol, max_iter)
}

pub fn solve_picard_from(
    problem: &MfgProblem,
    p: &OperatorPath,
    r0: &VectorPath,
    tol: f64,
    max_iter: usize,
) -> Result<LqmSolution> {
    let prop = Propagator::new(problem, p)?;
    let sp = &problem.space;
    let gb = growth_bound(sp, &problem.a, problem.horizon, GROWTH_SAMPLES)?;
    let report = contraction_constant(problem, &gb)?;
    let mut r = r0.clone();
    let mut diffs = Vec::new();
    let mut z = None;
    for it in 1..=max_iter.max(1) {
        let sweep = prop.z_from_r(&r).and_then(|zk| Ok((prop.r_from_z(&zk)?, zk)));
        let (rk, zk) = match sweep {
            Ok(v) => v,
            Err(MfgError::Divergence { .. }) => {
                diffs.push(f64::INFINITY);
                break;
            }
            Err(e) => return Err(e),
        };
        let diff = rk.sup_distance(&r, sp);
        diffs.push(diff);
        r = rk;
        z = Some(zk);
        if !diff.is_finite() || diff > BLOW_UP {
            break;
        }
        if diff <= tol {
            break;
        }
        if it == max_iter {
            break;
        }
    }
    let last_diff = *diffs.last().expect("at least one sweep");
    if !(last_diff <= tol) {
        return Err(MfgError::NoCertificate {
            c_t: report.c_t,
            iterations: diffs.len(),
            last_diff,
            last_iterate: Box::new(r),
        });
    }
    let z = z.expect("at least one sweep");
    let scale = r.sup_norm(sp).max(z.sup_norm(sp));
    let measured = ratios(&diffs, scale);
    let mut diagnostics = Diagnostics {
        iterations: diffs.len(),
        contraction_ratios: measured.clone(),
        sweep_diffs: diffs,
        contraction: Some(report),
        ..Default::default()
    };
    if report.is_contraction {
        let ok = measured.iter().all(|q| *q <= report.c_t + RATIO_SLACK);
        diagnostics.ratio_check = Some(ok);
        if !ok {
            diagnostics.notes.push(format!(
                "measured sweep ratio exceeds C_T + {RATIO_SLACK} (C_T = {:.4})",
                report.c_t
            ));
        }
    } else {
        diagnostics.notes.push(format!(
            "C_T = {:.4} >= 1: convergence is not covered by the small-horizon estimate",
            report.c_t
        ));
    }
    finish(problem, p, z, r, None, Method::Picard, diagnostics)
}

fn finish(
    problem: &MfgProblem,
    p: &OperatorPath,
    z: VectorPath,
    r: VectorPath,
    eta: Option<OperatorPath>,
    method: Method,
    mut diagnostics: Diagnostics,
) -> Result<LqmSolution> {
    diagnostics.residual_z = mild_residual_z(problem, p, &z, &r)?;
    diagnostics.residual_r = mild_residual_r(problem, p, &z, &r)?;
    let s = if problem.has_affine_terms() { None } else { Some(compute_s(problem, p, &z, &r)?) };
    Ok(LqmSolution { p: p.clone(), z, r, s, eta, method, diagnostics })
}

/// Decoupled route: `eta`, then `kappa`, then `z`, then `r = eta z + kappa`.
pub fn solve_decoupled(problem: &MfgProblem, p: &OperatorPath) -> Result<LqmSolution> {
    let prop = Propagator::new(problem, p)?;
    let (eta, cert) = solve_eta(problem, p)?;
    let sp = &problem.space;
    let coef = &prop.coef;
    let grid = p.grid;
    let eh = half_nodes_op(&eta);

    let kappa = if problem.has_affine_terms() {
        let m: Vec<Operator> =
            prop.r_drift.iter().zip(&eh).map(|(d, e)| d + e * &coef.gain).collect();
        let g = vec![problem.affine_c.clone(); 2 * grid.n_steps + 1];
        let vals = linear_rk4(sp, &grid, &m, &g, -problem.affine_ct.clone(), true)?;
        VectorPath::new(grid, vals)?
    } else {
        VectorPath::zeros(grid, problem.dim())
    };

    let m: Vec<Operator> = prop.z_drift.iter().zip(&eh).map(|(d, e)| d - &coef.gain * e).collect();
    let g: Vec<State> = half_nodes_vec(&kappa).iter().map(|k| -(&coef.gain * k)).collect();
    let zv = linear_rk4(sp, &grid, &m, &g, problem.z0.clone(), false)?;
    let rv: Vec<State> = zv
        .iter()
        .zip(&eta.values)
        .zip(&kappa.values)
        .map(|((z, e), k)| e * z + k)
        .collect();
    let z = VectorPath::new(grid, zv)?;
    let r = VectorPath::new(grid, rv)?;
    let diagnostics = Diagnostics { eta_certificate: Some(cert), ..Default::default() };
    finish(problem, p, z, r, Some(eta), Method::Decoupled, diagnostics)
}

/// Exponentials `e^{jhA}` for `j = -2..=3`.
fn stencil_exps(a: &Operator, h: f64) -> Result<Vec<Operator>> {
    (-2..=3).map(|j| mat_exp(a, j as f64 * h)).collect()
}

/// `max_t |z(t) - [e^{tA} z0 - int_0^t e^{(t-s)A} (G P z + G r)(s) ds]|_W`.
pub fn mild_residual_z(problem: &MfgProblem, p: &OperatorPath, z: &VectorPath, r: &VectorPath) -> Result<f64> {
    p.grid.require_same(&z.grid)?;
    p.grid.require_same(&r.grid)?;
    let coef = problem.coefficients()?;
    let sp = &problem.space;
    let grid = p.grid;
    let h = grid.step();
    let exps = stencil_exps(&problem.a, h)?;
    let e = |off: isize| &exps[(off + 2) as usize];
    let n = grid.len();
    let g: Vec<State> = (0..n).map(|k| &coef.gain * (&p.values[k] * &z.values[k] + &r.values[k])).collect();
    let mut mild = problem.z0.clone();
    let mut worst = sp.norm(&(&z.values[0] - &mild));
    for k in 0..n - 1 {
        let mut next = e(1) * &mild;
        let (first, w) = interval_stencil(n, k, h);
        for (j, c) in w.iter().enumerate() {
            let node = first + j;
            next -= e(k as isize + 1 - node as isize) * &g[node] * *c;
        }
        mild = next;
        worst = worst.max(sp.norm(&(&z.values[k + 1] - &mild)));
    }
    Ok(worst)
}

/// `max_t |r(t) - [e^{(T-t)A*} r(T) - int_t^T e^{(s-t)A*} (P G r + Qbar S z + c)(s) ds]|_W`,
/// with `r(T)` taken from its terminal condition.
pub fn mild_residual_r(problem: &MfgProblem, p: &OperatorPath, z: &VectorPath, r: &VectorPath) -> Result<f64> {
    p.grid.require_same(&z.grid)?;
    p.grid.require_same(&r.grid)?;
    let coef = problem.coefficients()?;
    let sp = &problem.space;
    let grid = p.grid;
    let h = grid.step();
    let exps: Vec<Operator> = stencil_exps(&problem.a, h)?.iter().map(|e| sp.adjoint(e)).collect();
    let e = |off: isize| &exps[(off + 2) as usize];
    let n = grid.len();
    let g: Vec<State> = (0..n)
        .map(|k| &p.values[k] * (&coef.gain * &r.values[k]) + &coef.qbar_s * &z.values[k] + &problem.affine_c)
        .collect();
    let mut mild = -(&coef.qbart_st * z.last()) - &problem.affine_ct;
    let mut worst = sp.norm(&(r.last() - &mild));
    for k in (0..n - 1).rev() {
        let mut next = e(1) * &mild;
        let (first, w) = interval_stencil(n, k, h);
        for (j, c) in w.iter().enumerate() {
            let node = first + j;
            next -= e(node as isize - k as isize) * &g[node] * *c;
        }
        mild = next;
        worst = worst.max(sp.norm(&(&r.values[k] - &mild)));
    }
    Ok(worst)
}

/// `s(t) = 1/2 <Qbar_T S_T z(T), S_T z(T)> + int_t^T [1/2 Tr(sigma sigma* P)
/// - 1/2 <G r, r> + 1/2 <Qbar S z, S z>] du`.
pub fn compute_s(problem: &MfgProblem, p: &OperatorPath, z: &VectorPath, r: &VectorPath) -> Result<ScalarPath> {
    if problem.has_affine_terms() {
        return Err(MfgError::Unsupported(
            "the scalar offset s is only available without affine terms".into(),
        ));
    }
    p.grid.require_same(&z.grid)?;
    p.grid.require_same(&r.grid)?;
    let coef = problem.coefficients()?;
    let sp = &problem.space;
    let sig_adj = sp.input_adjoint(&problem.sigma);
    let integrand: Vec<f64> = (0..p.grid.len())
        .map(|k| {
            let (pk, zk, rk) = (&p.values[k], &z.values[k], &r.values[k]);
            let trace = (&sig_adj * pk * &problem.sigma).trace();
            let sz = &problem.s * zk;
            0.5 * trace - 0.5 * sp.inner(&(&coef.gain * rk), rk) + 0.5 * sp.inner(&(&problem.qbar * &sz), &sz)
        })
        .collect();
    let zt = z.last();
    let stz = &problem.st * zt;
    let terminal = 0.5 * sp.inner(&(&coef.qbart_st * zt), &stz);
    let tails = tail_integrals(&integrand, p.grid.step());
    ScalarPath::new(p.grid, tails.into_iter().map(|v| terminal + v).collect())
}

/// `v(t, x) = 1/2 <P(t) x, x> + <r(t), x> + s(t)` at the nearest node.
pub fn value_function(
    space: &HilbertSpace,
    p: &OperatorPath,
    r: &VectorPath,
    s: &ScalarPath,
    t: f64,
    x: &State,
) -> f64 {
    let k = p.grid.nearest_index(t);
    0.5 * space.inner(&(&p.values[k] * x), x) + space.inner(&r.values[k], x) + s.values[k]
}

/// `alpha(t, x) = -R^{-1} B* (P(t) x + r(t))` at the nearest node.
pub fn feedback_control(problem: &MfgProblem, p: &OperatorPath, r: &VectorPath, t: f64, x: &State) -> Result<State> {
    let coef = problem.coefficients()?;
    let k = p.grid.nearest_index(t);
    Ok(-(&coef.r_inv * (&coef.b_adj * (&p.values[k] * x + &r.values[k]))))
}
