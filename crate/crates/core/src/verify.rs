//! Certificates on concrete instances: standing assumptions, uniqueness
//! regime, the monotonicity identity, Yosida convergence and Monte-Carlo
//! consistency of the population mean.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{MfgError, Result};
use crate::fbs::{contraction_constant, solve_decoupled, ContractionReport, LqmSolution, Method};
use crate::linops::{yosida, GrowthBound, Operator, State};
use crate::path::{OperatorPath, ScalarPath, TimeGrid, VectorPath};
use crate::problem::{r_spectrum, MfgProblem};
use crate::quad::composite_weights;
use crate::riccati::BLOW_UP;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Dissipative,
    SmallT,
    None,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Dissipative => "dissipative",
            Regime::SmallT => "small_T",
            Regime::None => "none",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    pub checks: Vec<Check>,
    pub regime: Option<Regime>,
    pub notes: Vec<String>,
}

impl VerificationReport {
    fn new() -> Self {
        Self { checks: Vec::new(), regime: None, notes: Vec::new() }
    }

    fn push(&mut self, name: &str, passed: bool, measured: f64) {
        self.checks.push(Check { name: name.to_string(), passed, measured });
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn merge(mut self, other: VerificationReport) -> Self {
        self.checks.extend(other.checks);
        self.regime = other.regime.or(self.regime);
        self.notes.extend(other.notes);
        self
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let status = if c.passed { "PASS" } else { "FAIL" };
            let _ = writeln!(out, "[{status}] {} (measured {:.6e})", c.name, c.measured);
        }
        if let Some(r) = self.regime {
            let _ = writeln!(out, "regime = {}", r.as_str());
        }
        for n in &self.notes {
            let _ = writeln!(out, "note: {n}");
        }
        out
    }

    pub fn render_key_values(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let key = c
                .name
                .split(|ch: char| !ch.is_ascii_alphanumeric())
                .filter(|w| !w.is_empty())
                .map(str::to_ascii_lowercase)
                .collect::<Vec<_>>()
                .join("_");
            let _ = writeln!(out, "{key}.passed={}", c.passed);
            let _ = writeln!(out, "{key}.measured={:e}", c.measured);
        }
        if let Some(r) = self.regime {
            let _ = writeln!(out, "regime={}", r.as_str());
        }
        out
    }
}

/// Sign and symmetry requirements on the cost data. Failures are report entries.
pub fn check_standing_assumptions(problem: &MfgProblem, tol: f64) -> VerificationReport {
    let sp = &problem.space;
    let mut rep = VerificationReport::new();
    let nonneg = |rep: &mut VerificationReport, name: &str, op: &Operator| {
        let defect = sp.self_adjoint_defect(op);
        let (min, _) = sp.eig_range(op);
        let scale = 1.0 + sp.op_norm(op);
        rep.push(name, defect <= tol * scale && min >= -tol * scale, min);
    };
    nonneg(&mut rep, "Q nonnegative self-adjoint", &problem.q);
    nonneg(&mut rep, "Q_T nonnegative self-adjoint", &problem.qt);
    for (name, op) in [("Qbar self-adjoint", &problem.qbar), ("Qbar_T self-adjoint", &problem.qbart)] {
        let defect = sp.self_adjoint_defect(op);
        rep.push(name, defect <= tol * (1.0 + sp.op_norm(op)), defect);
    }
    nonneg(&mut rep, "Q + Qbar nonnegative self-adjoint", &(&problem.q + &problem.qbar));
    nonneg(&mut rep, "Q_T + Qbar_T nonnegative self-adjoint", &(&problem.qt + &problem.qbart));
    let (r_min, asym) = r_spectrum(&problem.r);
    rep.push("R self-adjoint", asym <= tol * (1.0 + r_min.abs()), asym);
    rep.push("R coercive", r_min >= problem.r_eps, r_min);
    let s_norm = sp.op_norm(&problem.s).max(sp.op_norm(&problem.st));
    rep.push("S, S_T bounded", s_norm.is_finite(), s_norm);
    rep
}

/// Dissipativity, the kernel implication and the small-horizon constant.
pub fn check_uniqueness_conditions(problem: &MfgProblem, gb: &GrowthBound, tol: f64) -> Result<VerificationReport> {
    let sp = &problem.space;
    let coef = problem.coefficients()?;
    let mut rep = VerificationReport::new();
    let mut dissipative = true;
    for (name, op) in [("-Qbar S nonnegative", -&coef.qbar_s), ("-Qbar_T S_T nonnegative", -&coef.qbart_st)] {
        let scale = 1.0 + sp.op_norm(&op);
        let defect = sp.self_adjoint_defect(&op);
        let (min, _) = sp.eig_range(&op);
        let ok = defect <= tol * scale && min >= -tol * scale;
        if min >= -tol * scale && defect > tol * scale {
            rep.notes.push(format!(
                "{name}: symmetric part is nonnegative but the operator is not self-adjoint (defect {defect:.3e})"
            ));
        }
        dissipative &= ok;
        rep.push(name, ok, min);
    }
    if dissipative {
        rep.push("kernel implication", true, 0.0);
        rep.notes.push(
            "kernel implication follows from nonnegativity: for self-adjoint L >= 0, <Lx, x> = 0 gives |L^{1/2} x| = 0, hence Lx = 0"
                .into(),
        );
    }
    let ct = contraction_constant(problem, gb)?;
    rep.push("C_T < 1", ct.is_contraction, ct.c_t);
    rep.regime = Some(if dissipative {
        Regime::Dissipative
    } else if ct.is_contraction {
        Regime::SmallT
    } else {
        Regime::None
    });
    Ok(rep)
}

/// Pair of trajectories for the monotonicity identity.
#[derive(Debug, Clone)]
pub struct MonotonicityProbe {
    /// `f(t) = <z_a - z_b, r_a - r_b>`
    pub f: ScalarPath,
    /// Central differences of `f` at interior nodes (first and last entries are one-sided).
    pub f_prime: Vec<f64>,
    /// `w(t) = -<R^{-1} B* r_hat, B* r_hat> + <z_hat, Qbar S z_hat>`
    pub w: ScalarPath,
    /// Max over interior nodes of `|f' - w|`.
    pub max_error: f64,
    /// `max_error / h^2`
    pub k_const: f64,
    pub sign_chain: Option<SignChain>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignChain {
    pub f0: f64,
    pub max_f_prime: f64,
    /// `<z_hat(T), -Qbar_T S_T z_hat(T)>`
    pub terminal_form: f64,
    pub holds: bool,
}

pub fn monotonicity_probe(
    problem: &MfgProblem,
    a: &LqmSolution,
    b: &LqmSolution,
    tol: f64,
) -> Result<MonotonicityProbe> {
    let grid = a.grid();
    grid.require_same(&b.grid())?;
    grid.require_same(&a.z.grid)?;
    grid.require_same(&b.r.grid)?;
    let sp = &problem.space;
    let coef = problem.coefficients()?;
    let n = grid.len();
    let h = grid.step();
    let zh: Vec<State> = (0..n).map(|k| &a.z.values[k] - &b.z.values[k]).collect();
    let rh: Vec<State> = (0..n).map(|k| &a.r.values[k] - &b.r.values[k]).collect();
    let f: Vec<f64> = (0..n).map(|k| sp.inner(&zh[k], &rh[k])).collect();
    let w: Vec<f64> = (0..n)
        .map(|k| {
            let br = &coef.b_adj * &rh[k];
            -(&coef.r_inv * &br).dot(&br) + sp.inner(&zh[k], &(&coef.qbar_s * &zh[k]))
        })
        .collect();
    let mut f_prime = vec![0.0; n];
    f_prime[0] = (f[1] - f[0]) / h;
    f_prime[n - 1] = (f[n - 1] - f[n - 2]) / h;
    let mut max_error: f64 = 0.0;
    for k in 1..n - 1 {
        f_prime[k] = (f[k + 1] - f[k - 1]) / (2.0 * h);
        max_error = max_error.max((f_prime[k] - w[k]).abs());
    }
    let dissipative = check_uniqueness_conditions(problem, &GrowthBound { m: 1.0, omega: 0.0 }, 1e-10)?
        .regime
        == Some(Regime::Dissipative);
    let sign_chain = dissipative.then(|| {
        let terminal_form = sp.inner(&zh[n - 1], &(-(&coef.qbart_st * &zh[n - 1])));
        let max_f_prime = f_prime[1..n - 1].iter().chain(w.iter()).copied().fold(f64::NEG_INFINITY, f64::max);
        let f0 = f[0];
        SignChain {
            f0,
            max_f_prime,
            terminal_form,
            holds: f0.abs() <= tol && max_f_prime <= tol && terminal_form >= -tol,
        }
    });
    Ok(MonotonicityProbe {
        f: ScalarPath::new(grid, f)?,
        f_prime,
        w: ScalarPath::new(grid, w)?,
        max_error,
        k_const: max_error / (h * h),
        sign_chain,
    })
}

/// Integrates the coupled linear system forward from `(z0, r_init)`.
///
/// The result satisfies both differential equations but, in general, not the
/// terminal condition on `r`; pairs of such trajectories are the natural
/// probes for the monotonicity identity.
pub fn shooting_solution(problem: &MfgProblem, p: &OperatorPath, r_init: &State) -> Result<LqmSolution> {
    problem.check_structure()?;
    problem.space.check_state("r_init", r_init)?;
    let coef = problem.coefficients()?;
    let grid = p.grid;
    let d = problem.dim();
    let h = grid.step();
    let rhs = |pk: &Operator, z: &State, r: &State| -> (State, State) {
        let dz = &problem.a * z - &coef.gain * (pk * z + r);
        let dr = pk * (&coef.gain * r) - &coef.a_adj * r + &coef.qbar_s * z + &problem.affine_c;
        (dz, dr)
    };
    let mut z = problem.z0.clone();
    let mut r = r_init.clone();
    let mut zs = vec![z.clone()];
    let mut rs = vec![r.clone()];
    for k in 0..grid.n_steps {
        let p0 = &p.values[k];
        let pm = p.at(grid.node(k) + 0.5 * h);
        let p1 = &p.values[k + 1];
        let k1 = rhs(p0, &z, &r);
        let k2 = rhs(&pm, &(&z + &k1.0 * (0.5 * h)), &(&r + &k1.1 * (0.5 * h)));
        let k3 = rhs(&pm, &(&z + &k2.0 * (0.5 * h)), &(&r + &k2.1 * (0.5 * h)));
        let k4 = rhs(p1, &(&z + &k3.0 * h), &(&r + &k3.1 * h));
        z += (k1.0 + (k2.0 + k3.0) * 2.0 + k4.0) * (h / 6.0);
        r += (k1.1 + (k2.1 + k3.1) * 2.0 + k4.1) * (h / 6.0);
        let norm = problem.space.norm(&z) + problem.space.norm(&r);
        if !norm.is_finite() || norm > BLOW_UP {
            return Err(MfgError::Divergence { node: k + 1, t: grid.node(k + 1), norm });
        }
        zs.push(z.clone());
        rs.push(r.clone());
    }
    debug_assert_eq!(zs[0].len(), d);
    Ok(LqmSolution {
        p: p.clone(),
        z: VectorPath::new(grid, zs)?,
        r: VectorPath::new(grid, rs)?,
        s: None,
        eta: None,
        method: Method::Shooting,
        diagnostics: Default::default(),
    })
}

/// Monte-Carlo settings.
#[derive(Debug, Clone, PartialEq)]
pub struct MCConfig {
    pub n_paths: usize,
    /// Simulation steps over `[0, T]`; must be a positive multiple of the
    /// solution grid's step count. Zero means "same as the solution grid".
    pub n_steps: usize,
    pub seed: u64,
    /// Coordinate covariance of a Gaussian initial law centred at `z0`.
    pub initial_cov: Option<Operator>,
    /// Constant `C` of the discretization allowance `C * step`.
    pub allowance: f64,
}

impl MCConfig {
    pub fn new(n_paths: usize, seed: u64) -> Self {
        Self { n_paths, n_steps: 0, seed, initial_cov: None, allowance: 10.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostEstimate {
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone)]
pub struct MCResult {
    pub mean_path: VectorPath,
    /// W-norm of the componentwise standard error of the mean.
    pub stderr_path: ScalarPath,
    pub deviation: ScalarPath,
    pub max_deviation: f64,
    pub cost: CostEstimate,
    pub step: f64,
    pub contract_ok: bool,
}

const BATCH: usize = 64;

/// Running moments of one batch of paths.
#[derive(Clone)]
struct Moments {
    count: f64,
    mean: Vec<State>,
    m2: Vec<State>,
    cost_mean: f64,
    cost_m2: f64,
}

impl Moments {
    fn new(nodes: usize, dim: usize) -> Self {
        Self {
            count: 0.0,
            mean: vec![State::zeros(dim); nodes],
            m2: vec![State::zeros(dim); nodes],
            cost_mean: 0.0,
            cost_m2: 0.0,
        }
    }

    fn add(&mut self, path: &[State], cost: f64) {
        self.count += 1.0;
        let n = self.count;
        for ((m, s), x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(path) {
            let delta = x - &*m;
            *m += &delta / n;
            let delta2 = x - &*m;
            *s += delta.component_mul(&delta2);
        }
        let delta = cost - self.cost_mean;
        self.cost_mean += delta / n;
        self.cost_m2 += delta * (cost - self.cost_mean);
    }

    /// Chan et al. pairwise combination.
    fn merge(a: Moments, b: Moments) -> Moments {
        if a.count == 0.0 {
            return b;
        }
        if b.count == 0.0 {
            return a;
        }
        let n = a.count + b.count;
        let (wa, wb) = (a.count / n, b.count / n);
        let cross = a.count * b.count / n;
        let mut out = a.clone();
        out.count = n;
        for k in 0..out.mean.len() {
            let delta = &b.mean[k] - &a.mean[k];
            out.mean[k] = &a.mean[k] * wa + &b.mean[k] * wb;
            out.m2[k] = &a.m2[k] + &b.m2[k] + delta.component_mul(&delta) * cross;
        }
        let delta = b.cost_mean - a.cost_mean;
        out.cost_mean = a.cost_mean * wa + b.cost_mean * wb;
        out.cost_m2 = a.cost_m2 + b.cost_m2 + delta * delta * cross;
        out
    }
}

/// Fixed-order pairwise tree reduction.
fn tree_reduce(mut items: Vec<Moments>) -> Moments {
    while items.len() > 1 {
        let mut next = Vec::with_capacity(items.len().div_ceil(2));
        let mut it = items.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(Moments::merge(a, b)),
                None => next.push(a),
            }
        }
        items = next;
    }
    items.pop().expect("at least one batch")
}

/// Closed-loop simulation data on the fine grid.
struct Simulator<'a> {
    problem: &'a MfgProblem,
    grid: TimeGrid,
    /// Affine RK4 maps `x -> phi_k x + offset_k`.
    phi: Vec<Operator>,
    offset: Vec<State>,
    noise: Operator,
    chol: Option<Operator>,
    /// `z` on the fine grid.
    z: Vec<State>,
    p: Vec<Operator>,
    r: Vec<State>,
    r_inv: Operator,
    b_adj: Operator,
    weights: Vec<f64>,
}

impl<'a> Simulator<'a> {
    fn new(problem: &'a MfgProblem, sol: &LqmSolution, cfg: &MCConfig) -> Result<Self> {
        problem.check_structure()?;
        if cfg.n_paths < 2 {
            return Err(MfgError::InvalidProblem("Monte-Carlo needs n_paths >= 2".into()));
        }
        let base = sol.grid();
        let n_steps = if cfg.n_steps == 0 { base.n_steps } else { cfg.n_steps };
        if n_steps % base.n_steps != 0 {
            return Err(MfgError::GridMismatch(format!(
                "Monte-Carlo steps {n_steps} must be a multiple of the solution grid's {}",
                base.n_steps
            )));
        }
        let grid = TimeGrid::new(base.horizon(), n_steps)?;
        let coef = problem.coefficients()?;
        let h = grid.step();
        let d = problem.dim();
        let drift = |t: f64| &problem.a - &coef.gain * sol.p.at(t);
        let forcing = |t: f64| -(&coef.gain * sol.r.at(t));
        let mut phi = Vec::with_capacity(n_steps);
        let mut offset = Vec::with_capacity(n_steps);
        for k in 0..n_steps {
            let t = grid.node(k);
            let (m0, mm, m1) = (drift(t), drift(t + 0.5 * h), drift(t + h));
            let (g0, gm, g1) = (forcing(t), forcing(t + 0.5 * h), forcing(t + h));
            // RK4 applied to x' = M x + g is affine in x
            let id = Operator::identity(d, d);
            let k1 = &m0;
            let k2 = &mm * (&id + k1 * (0.5 * h));
            let k3 = &mm * (&id + &k2 * (0.5 * h));
            let k4 = &m1 * (&id + &k3 * h);
            phi.push(&id + (k1 + (&k2 + &k3) * 2.0 + &k4) * (h / 6.0));
            let c1 = g0.clone();
            let c2 = &mm * (&c1 * (0.5 * h)) + &gm;
            let c3 = &mm * (&c2 * (0.5 * h)) + &gm;
            let c4 = &m1 * (&c3 * h) + &g1;
            offset.push((c1 + (c2 + c3) * 2.0 + c4) * (h / 6.0));
        }
        let chol = match &cfg.initial_cov {
            None => None,
            Some(c) => Some(
                c.clone()
                    .cholesky()
                    .ok_or_else(|| MfgError::InvalidProblem("initial covariance is not positive definite".into()))?
                    .l(),
            ),
        };
        let nodes: Vec<f64> = grid.nodes().collect();
        Ok(Self {
            problem,
            grid,
            phi,
            offset,
            noise: &problem.sigma * h.sqrt(),
            chol,
            z: nodes.iter().map(|&t| sol.z.at(t)).collect(),
            p: nodes.iter().map(|&t| sol.p.at(t)).collect(),
            r: nodes.iter().map(|&t| sol.r.at(t)).collect(),
            r_inv: coef.r_inv,
            b_adj: coef.b_adj,
            weights: composite_weights(grid.len(), h),
        })
    }

    fn path(&self, seed: u64, index: usize) -> Result<(Vec<State>, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index as u64);
        let pr = self.problem;
        let sp = &pr.space;
        let d = pr.dim();
        let mut x = pr.z0.clone();
        if let Some(l) = &self.chol {
            let e = State::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
            x += l * e;
        }
        let noise_dim = pr.noise_dim();
        let mut out = Vec::with_capacity(self.grid.len());
        let mut running = 0.0;
        for k in 0..=self.grid.n_steps {
            let alpha = -(&self.r_inv * (&self.b_adj * (&self.p[k] * &x + &self.r[k])));
            let dev = &x - &pr.s * &self.z[k];
            let integrand = 0.5 * ((&pr.r * &alpha).dot(&alpha)
                + sp.inner(&(&pr.q * &x), &x)
                + sp.inner(&(&pr.qbar * &dev), &dev))
                - sp.inner(&pr.affine_c, &x);
            running += self.weights[k] * integrand;
            if k == self.grid.n_steps {
                out.push(x);
                break;
            }
            let mut next = &self.phi[k] * &x + &self.offset[k];
            if noise_dim > 0 {
                let w = State::from_fn(noise_dim, |_, _| StandardNormal.sample(&mut rng));
                next += &self.noise * w;
            }
            let norm = sp.norm(&next);
            if !norm.is_finite() || norm > BLOW_UP {
                return Err(MfgError::SimulationBlowUp { path: index, t: self.grid.node(k + 1) });
            }
            out.push(std::mem::replace(&mut x, next));
        }
        let xt = out.last().expect("path has nodes");
        let zt = self.z.last().expect("grid has nodes");
        let dev = xt - &pr.st * zt;
        let terminal = 0.5 * (sp.inner(&(&pr.qt * xt), xt) + sp.inner(&(&pr.qbart * &dev), &dev))
            - sp.inner(&pr.affine_ct, xt);
        Ok((out, running + terminal))
    }
}

/// Ensemble mean of the closed-loop representative agent against `z`.
pub fn monte_carlo_consistency(problem: &MfgProblem, sol: &LqmSolution, cfg: &MCConfig) -> Result<MCResult> {
    let sim = Simulator::new(problem, sol, cfg)?;
    let nodes = sim.grid.len();
    let d = problem.dim();
    let n_batches = cfg.n_paths.div_ceil(BATCH);
    let batches: Vec<Moments> = (0..n_batches)
        .into_par_iter()
        .map(|b| {
            let mut m = Moments::new(nodes, d);
            for i in b * BATCH..((b + 1) * BATCH).min(cfg.n_paths) {
                let (path, cost) = sim.path(cfg.seed, i)?;
                m.add(&path, cost);
            }
            Ok(m)
        })
        .collect::<Result<Vec<_>>>()?;
    let total = tree_reduce(batches);
    let n = total.count;
    let sp = &problem.space;
    let stderr: Vec<f64> = total.m2.iter().map(|m2| sp.norm(&(m2 / ((n - 1.0) * n)).map(f64::sqrt))).collect();
    let deviation: Vec<f64> = total.mean.iter().zip(&sim.z).map(|(m, z)| sp.norm(&(m - z))).collect();
    let step = sim.grid.step();
    let contract_ok = deviation
        .iter()
        .zip(&stderr)
        .all(|(dev, se)| *dev <= 3.0 * se + cfg.allowance * step);
    let max_deviation = deviation.iter().copied().fold(0.0, f64::max);
    let cost = CostEstimate { mean: total.cost_mean, stderr: (total.cost_m2 / ((n - 1.0) * n)).sqrt() };
    Ok(MCResult {
        mean_path: VectorPath::new(sim.grid, total.mean)?,
        stderr_path: ScalarPath::new(sim.grid, stderr)?,
        deviation: ScalarPath::new(sim.grid, deviation)?,
        max_deviation,
        cost,
        step,
        contract_ok,
    })
}

/// Monte-Carlo estimate of the representative agent's cost with the
/// population mean frozen at `z`.
pub fn evaluate_cost(problem: &MfgProblem, sol: &LqmSolution, cfg: &MCConfig) -> Result<CostEstimate> {
    Ok(monte_carlo_consistency(problem, sol, cfg)?.cost)
}

#[derive(Debug, Clone, PartialEq)]
pub struct YosidaStudy {
    pub ns: Vec<f64>,
    /// `max_t (|z_n - z| + |r_n - r|)`
    pub gaps: Vec<f64>,
    pub ratios: Vec<f64>,
    pub monotone: bool,
    /// Last gap below `1e-4`.
    pub converged: bool,
}

/// Replaces `A` by its Yosida approximants (keeping `P`) and measures the
/// distance of the decoupled solutions to the reference one.
pub fn yosida_convergence_study(problem: &MfgProblem, p: &OperatorPath, ns: &[f64]) -> Result<YosidaStudy> {
    let reference = solve_decoupled(problem, p)?;
    let sp = &problem.space;
    let mut gaps = Vec::with_capacity(ns.len());
    for &n in ns {
        let approx = problem.with_generator(yosida(&problem.a, n)?);
        let sol = solve_decoupled(&approx, p)?;
        let gap = (0..p.grid.len())
            .map(|k| {
                sp.norm(&(&sol.z.values[k] - &reference.z.values[k]))
                    + sp.norm(&(&sol.r.values[k] - &reference.r.values[k]))
            })
            .fold(0.0, f64::max);
        gaps.push(gap);
    }
    let ratios: Vec<f64> = gaps.windows(2).filter(|w| w[0] > 0.0).map(|w| w[1] / w[0]).collect();
    let monotone = gaps.windows(2).all(|w| w[1] <= w[0]);
    let converged = gaps.last().is_some_and(|g| *g < 1e-4);
    Ok(YosidaStudy { ns: ns.to_vec(), gaps, ratios, monotone, converged })
}

/// Contraction report plus regime classification with the default sampling.
pub fn uniqueness_report(problem: &MfgProblem, tol: f64) -> Result<(VerificationReport, ContractionReport)> {
    let gb = crate::linops::growth_bound(&problem.space, &problem.a, problem.horizon, 1000)?;
    let rep = check_uniqueness_conditions(problem, &gb, tol)?;
    Ok((rep, contraction_constant(problem, &gb)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbs::solve_picard;
    use crate::instances::{scalar_equilibrium, scalar_q2, ScalarData};
    use crate::riccati::solve_riccati_p;

    fn p_of(problem: &MfgProblem) -> OperatorPath {
        solve_riccati_p(problem, &TimeGrid::default_for(problem.horizon).unwrap()).unwrap()
    }

    #[test]
    fn standing_assumptions_examples() {
        assert!(check_standing_assumptions(&scalar_equilibrium(), 1e-10).all_passed());
        let rep = check_standing_assumptions(&ScalarData { r: 0.0, ..Default::default() }.build(), 1e-10);
        let c = rep.check("R coercive").unwrap();
        assert!(!c.passed && c.measured == 0.0);
        let rep = check_standing_assumptions(&ScalarData { q: -1.0, qbar: 2.0, ..Default::default() }.build(), 1e-10);
        assert!(!rep.check("Q nonnegative self-adjoint").unwrap().passed);
        assert!(rep.check("Q + Qbar nonnegative self-adjoint").unwrap().passed);
    }

    #[test]
    fn regimes() {
        let gb = GrowthBound { m: 1.0, omega: 0.0 };
        let rep = check_uniqueness_conditions(&scalar_q2(1.0), &gb, 1e-10).unwrap();
        assert_eq!(rep.regime, Some(Regime::Dissipative));
        assert!(rep.render_text().contains("regime = dissipative"));
        let bad = ScalarData { qbar: 1.0, qbart: 1.0, s: 1.0, st: 1.0, horizon: 5.0, ..Default::default() }.build();
        let rep = check_uniqueness_conditions(&bad, &gb, 1e-10).unwrap();
        assert_eq!(rep.regime, Some(Regime::None));
        let small = ScalarData { qbar: 0.1, qbart: 0.1, s: 1.0, st: 1.0, horizon: 0.1, ..Default::default() }.build();
        let rep = check_uniqueness_conditions(&small, &gb, 1e-10).unwrap();
        assert_eq!(rep.regime, Some(Regime::SmallT));
    }

    #[test]
    fn projection_coupling_is_dissipative() {
        use crate::linops::HilbertSpace;
        let mut prob = scalar_q2(1.0);
        let d = 2;
        let proj = Operator::from_diagonal(&State::from_vec(vec![1.0, 0.0]));
        prob.space = HilbertSpace::euclidean(d);
        prob.a = Operator::zeros(d, d);
        prob.b = Operator::identity(d, 1);
        prob.q = Operator::identity(d, d);
        prob.qt = Operator::zeros(d, d);
        prob.qbar = proj.clone();
        prob.qbart = proj.clone();
        prob.s = -Operator::identity(d, d);
        prob.st = -Operator::identity(d, d);
        prob.sigma = Operator::zeros(d, 1);
        prob.z0 = State::from_element(d, 1.0);
        prob.affine_c = State::zeros(d);
        prob.affine_ct = State::zeros(d);
        let rep = check_uniqueness_conditions(&prob, &GrowthBound { m: 1.0, omega: 0.0 }, 1e-10).unwrap();
        assert_eq!(rep.regime, Some(Regime::Dissipative));
        assert!(rep.check("kernel implication").unwrap().passed);
    }

    #[test]
    fn probe_of_identical_solutions_vanishes() {
        let prob = scalar_q2(1.0);
        let p = p_of(&prob);
        let sol = solve_picard(&prob, &p, 1e-10, 200).unwrap();
        let probe = monotonicity_probe(&prob, &sol, &sol, 1e-8).unwrap();
        assert_eq!(probe.f.max_abs(), 0.0);
        assert_eq!(probe.w.max_abs(), 0.0);
    }

    #[test]
    fn shooting_pair_satisfies_identity() {
        let prob = scalar_q2(1.0);
        let p = p_of(&prob);
        let a = shooting_solution(&prob, &p, &State::from_element(1, 0.3)).unwrap();
        let b = shooting_solution(&prob, &p, &State::from_element(1, -0.2)).unwrap();
        let probe = monotonicity_probe(&prob, &a, &b, 1e-8).unwrap();
        assert!(probe.k_const <= 1e3, "K = {}", probe.k_const);
        let chain = probe.sign_chain.unwrap();
        assert!(chain.holds, "{chain:?}");
    }

    #[test]
    fn probe_rejects_grid_mismatch() {
        let prob = scalar_q2(1.0);
        let a = shooting_solution(&prob, &p_of(&prob), &State::zeros(1)).unwrap();
        let p2 = solve_riccati_p(&prob, &TimeGrid::new(1.0, 50).unwrap()).unwrap();
        let b = shooting_solution(&prob, &p2, &State::zeros(1)).unwrap();
        assert!(matches!(monotonicity_probe(&prob, &a, &b, 1e-8), Err(MfgError::GridMismatch(_))));
    }

    #[test]
    fn noiseless_mean_is_z_and_cost_is_value() {
        let prob = scalar_equilibrium();
        let sol = solve_picard(&prob, &p_of(&prob), 1e-10, 200).unwrap();
        let res = monte_carlo_consistency(&prob, &sol, &MCConfig::new(4, 1)).unwrap();
        assert!(res.max_deviation <= 1e-6);
        assert!((res.cost.mean - 0.5).abs() <= 1e-5, "{}", res.cost.mean);
        let v = sol.value(&prob.space, 0.0, &prob.z0).unwrap();
        assert!((res.cost.mean - v).abs() <= 1e-5);
    }

    #[test]
    fn noisy_run_is_reproducible_and_within_band() {
        let prob = scalar_equilibrium().with_sigma(Operator::from_element(1, 1, 0.1));
        let sol = solve_picard(&prob, &p_of(&prob), 1e-10, 200).unwrap();
        let cfg = MCConfig::new(1000, 42);
        let a = monte_carlo_consistency(&prob, &sol, &cfg).unwrap();
        let b = monte_carlo_consistency(&prob, &sol, &cfg).unwrap();
        assert!(a.contract_ok);
        assert_eq!(a.mean_path.values, b.mean_path.values);
        assert_eq!(a.stderr_path.values, b.stderr_path.values);
    }

    #[test]
    fn fine_simulation_grid_must_be_a_multiple() {
        let prob = scalar_equilibrium();
        let sol = solve_picard(&prob, &p_of(&prob), 1e-10, 200).unwrap();
        let cfg = MCConfig { n_steps: 301, ..MCConfig::new(4, 1) };
        assert!(matches!(monte_carlo_consistency(&prob, &sol, &cfg), Err(MfgError::GridMismatch(_))));
        let cfg = MCConfig { n_steps: 400, ..MCConfig::new(4, 1) };
        assert!(monte_carlo_consistency(&prob, &sol, &cfg).unwrap().max_deviation < 1e-6);
        assert!(monte_carlo_consistency(&prob, &sol, &MCConfig::new(1, 1)).is_err());
    }

    #[test]
    fn merge_matches_sequential_moments() {
        let xs: Vec<f64> = (0..37).map(|i| ((i * 7919) % 101) as f64 / 10.0).collect();
        let mut all = Moments::new(1, 1);
        let mut parts = vec![Moments::new(1, 1), Moments::new(1, 1), Moments::new(1, 1)];
        for (i, x) in xs.iter().enumerate() {
            all.add(&[State::from_element(1, *x)], *x);
            parts[i % 3].add(&[State::from_element(1, *x)], *x);
        }
        let merged = tree_reduce(parts);
        assert!((merged.mean[0][0] - all.mean[0][0]).abs() < 1e-12);
        assert!((merged.m2[0][0] - all.m2[0][0]).abs() < 1e-9);
        assert!((merged.cost_m2 - all.cost_m2).abs() < 1e-9);
    }

    #[test]
    fn yosida_of_zero_generator_has_no_gap() {
        let prob = scalar_q2(1.0);
        let study = yosida_convergence_study(&prob, &p_of(&prob), &[10.0, 100.0]).unwrap();
        assert_eq!(study.gaps, vec![0.0, 0.0]);
    }

    #[test]
    fn yosida_gaps_decay_like_one_over_n() {
        let prob = ScalarData { a: -1.0, qbar: 1.0, qbart: 1.0, s: -1.0, st: -1.0, ..Default::default() }.build();
        let study = yosida_convergence_study(&prob, &p_of(&prob), &[10.0, 100.0, 1000.0]).unwrap();
        assert!(study.monotone);
        for r in &study.ratios {
            assert!((0.05..=0.2).contains(r), "{:?}", study.ratios);
        }
    }
}
