//! Production planning with delayed investment effects, lifted to a state
//! `(k, x)` where `k` is the production level and `x` lives on the delay
//! segment `[-d, 0]`, then truncated to piecewise-constant cells.
//!
//! Cell `j` has centre `-d + (j + 1/2) d / n`. The segment part is
//! transported toward `0` by first-order upwinding with zero inflow at `-d`,
//! and its value in the last cell feeds the production level.

use std::fmt;

use crate::error::{MfgError, Result};
use crate::fbs::solve_decoupled;
use crate::linops::{HilbertSpace, Operator, State};
use crate::path::TimeGrid;
use crate::problem::MfgProblem;
use crate::riccati::solve_riccati_p;

/// A nonnegative function on `[-d, 0]`.
#[derive(Debug, Clone, PartialEq)]
pub enum Kernel {
    Constant(f64),
    /// `scale * exp(rate * xi)`: largest at `xi = 0` for positive `rate`.
    ExponentialDecay { scale: f64, rate: f64 },
    /// Uniform samples from `-d` to `0` inclusive, linearly interpolated.
    Samples(Vec<f64>),
}

impl Kernel {
    pub fn eval(&self, xi: f64, d: f64) -> f64 {
        match self {
            Kernel::Constant(v) => *v,
            Kernel::ExponentialDecay { scale, rate } => scale * (rate * xi).exp(),
            Kernel::Samples(s) => match s.len() {
                0 => 0.0,
                1 => s[0],
                n => {
                    let pos = ((xi + d) / d).clamp(0.0, 1.0) * (n - 1) as f64;
                    let i = (pos.floor() as usize).min(n - 2);
                    let w = pos - i as f64;
                    s[i] * (1.0 - w) + s[i + 1] * w
                }
            },
        }
    }

    fn check(&self, name: &str, nonnegative: bool) -> Result<()> {
        let values: Vec<f64> = match self {
            Kernel::Constant(v) => vec![*v],
            Kernel::ExponentialDecay { scale, rate } => vec![*scale, *rate],
            Kernel::Samples(s) => s.clone(),
        };
        if values.iter().any(|v| !v.is_finite()) {
            return Err(MfgError::InvalidProblem(format!("{name} has non-finite values")));
        }
        let negative = match self {
            Kernel::ExponentialDecay { scale, .. } => *scale < 0.0,
            _ => values.iter().any(|v| *v < 0.0),
        };
        if nonnegative && negative {
            return Err(MfgError::InvalidProblem(format!("{name} must be nonnegative")));
        }
        Ok(())
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kernel::Constant(v) => write!(f, "constant:{v:?}"),
            Kernel::ExponentialDecay { scale, rate } => write!(f, "exponential:{scale:?}:{rate:?}"),
            Kernel::Samples(s) => {
                let body: Vec<String> = s.iter().map(|v| format!("{v:?}")).collect();
                write!(f, "samples:{}", body.join(" "))
            }
        }
    }
}

impl std::str::FromStr for Kernel {
    type Err = MfgError;

    /// `constant:V`, `exponential:SCALE:RATE` or `samples:V0 V1 ...`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || MfgError::Config(format!("cannot parse kernel {s:?}"));
        let num = |t: &str| t.trim().parse::<f64>().map_err(|_| bad());
        let (tag, rest) = s.trim().split_once(':').ok_or_else(bad)?;
        match tag.trim() {
            "constant" => Ok(Kernel::Constant(num(rest)?)),
            "exponential" => {
                let (scale, rate) = rest.split_once(':').ok_or_else(bad)?;
                Ok(Kernel::ExponentialDecay { scale: num(scale)?, rate: num(rate)? })
            }
            "samples" => {
                let v = rest.split_whitespace().map(num).collect::<Result<Vec<_>>>()?;
                if v.is_empty() {
                    return Err(bad());
                }
                Ok(Kernel::Samples(v))
            }
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DelayParams {
    /// Delay length.
    pub d: f64,
    /// Weight of past investment in current production growth.
    pub kernel: Kernel,
    pub sigma: f64,
    /// Control weight.
    pub r_cost: f64,
    /// Tracking gain.
    pub beta: f64,
    /// Demand intercept.
    pub eta_price: f64,
    /// Demand slope.
    pub gamma: f64,
    pub horizon: f64,
    /// Initial production level.
    pub k0: f64,
    /// Investment rate before time zero.
    pub past: Kernel,
    pub n_seg: usize,
}

impl Default for DelayParams {
    fn default() -> Self {
        Self {
            d: 1.0,
            kernel: Kernel::Constant(1.0),
            sigma: 0.1,
            r_cost: 1.0,
            beta: 1.0,
            eta_price: 1.0,
            gamma: 1.0,
            horizon: 1.0,
            k0: 1.0,
            past: Kernel::Constant(0.0),
            n_seg: 32,
        }
    }
}

impl DelayParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [("d", self.d), ("r_cost", self.r_cost), ("T", self.horizon)];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(MfgError::InvalidProblem(format!("{name} must be positive, got {v}")));
            }
        }
        let nonneg = [("sigma", self.sigma), ("beta", self.beta), ("eta", self.eta_price), ("gamma", self.gamma)];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(MfgError::InvalidProblem(format!("{name} must be nonnegative, got {v}")));
            }
        }
        if !self.k0.is_finite() {
            return Err(MfgError::InvalidProblem("k0 must be finite".into()));
        }
        if self.n_seg == 0 {
            return Err(MfgError::InvalidProblem("n_seg must be at least 1".into()));
        }
        self.kernel.check("b_kernel", true)?;
        self.past.check("delta_past", false)
    }

    pub fn cell_width(&self) -> f64 {
        self.d / self.n_seg as f64
    }

    pub fn cell_centre(&self, j: usize) -> f64 {
        -self.d + (j as f64 + 0.5) * self.cell_width()
    }
}

/// Upwind transport generator on `(k, x_0, ..., x_{n-1})`.
pub fn delay_generator(n_seg: usize, width: f64) -> Operator {
    let dim = n_seg + 1;
    let mut a = Operator::zeros(dim, dim);
    a[(0, n_seg)] = 1.0;
    for j in 0..n_seg {
        a[(j + 1, j + 1)] = -1.0 / width;
        if j > 0 {
            a[(j + 1, j)] = 1.0 / width;
        }
    }
    a
}

pub fn build_delay_problem(params: &DelayParams) -> Result<MfgProblem> {
    params.validate()?;
    let n = params.n_seg;
    let dim = n + 1;
    let width = params.cell_width();
    let mut weights = vec![width; dim];
    weights[0] = 1.0;
    let space = HilbertSpace::new(weights)?;
    let a = delay_generator(n, width);
    let b = Operator::from_fn(dim, 1, |i, _| if i == 0 { 1.0 } else { params.kernel.eval(params.cell_centre(i - 1), params.d) });
    let mut first = Operator::zeros(dim, dim);
    first[(0, 0)] = 1.0;
    let coupling = Operator::identity(dim, dim) * (-params.beta * params.gamma);
    let mut sigma = Operator::zeros(dim, 1);
    sigma[(0, 0)] = params.sigma;
    let mut affine = State::zeros(dim);
    affine[0] = params.beta * params.eta_price;
    let problem = MfgProblem {
        a,
        b,
        q: Operator::zeros(dim, dim),
        qbar: first.clone(),
        qt: Operator::zeros(dim, dim),
        qbart: first,
        r: Operator::from_element(1, 1, 2.0 * params.r_cost),
        s: coupling.clone(),
        st: coupling,
        sigma,
        horizon: params.horizon,
        z0: lift_initial(params),
        affine_c: affine.clone(),
        affine_ct: affine,
        r_eps: 1e-9 * params.r_cost.min(1.0),
        space,
    };
    problem.validate()?;
    Ok(problem)
}

/// Initial state `(k0, x)` with `x(xi) = int_{-d}^{xi} b(theta) delta(theta - xi) dtheta`:
/// the part of past investment already committed but not yet delivered.
///
/// Full cells below `xi_j` use the midpoint rule; the half cell ending at
/// `xi_j` uses its own midpoint.
pub fn lift_initial(params: &DelayParams) -> State {
    let n = params.n_seg;
    let w = params.cell_width();
    let (b, past, d) = (&params.kernel, &params.past, params.d);
    let mut x = State::zeros(n + 1);
    x[0] = params.k0;
    for j in 0..n {
        let xj = params.cell_centre(j);
        let full: f64 = (0..j)
            .map(|i| {
                let xi = params.cell_centre(i);
                w * b.eval(xi, d) * past.eval(xi - xj, d)
            })
            .sum();
        let half = 0.5 * w * b.eval(xj - 0.25 * w, d) * past.eval(-0.25 * w, d);
        x[j + 1] = full + half;
    }
    x
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementStudy {
    pub segs: Vec<usize>,
    /// `max_t (|z_a - z_b| + |r_a - r_b|)` on the production coordinate,
    /// between consecutive refinements.
    pub gaps: Vec<f64>,
    pub ratios: Vec<f64>,
}

impl RefinementStudy {
    pub fn is_monotone(&self) -> bool {
        self.gaps.windows(2).all(|w| w[1] <= w[0])
    }
}

pub fn segment_refinement_study(params: &DelayParams, segs: &[usize]) -> Result<RefinementStudy> {
    if segs.windows(2).any(|w| w[1] < w[0]) {
        return Err(MfgError::InvalidProblem("segment counts must be non-decreasing".into()));
    }
    let grid = TimeGrid::default_for(params.horizon)?;
    let mut firsts = Vec::with_capacity(segs.len());
    for &n in segs {
        let problem = build_delay_problem(&DelayParams { n_seg: n, ..params.clone() })?;
        let p = solve_riccati_p(&problem, &grid)?;
        let sol = solve_decoupled(&problem, &p)?;
        firsts.push((sol.z.component(0).values, sol.r.component(0).values));
    }
    let gaps: Vec<f64> = firsts
        .windows(2)
        .map(|w| {
            let ((za, ra), (zb, rb)) = (&w[0], &w[1]);
            (0..za.len()).map(|k| (za[k] - zb[k]).abs() + (ra[k] - rb[k]).abs()).fold(0.0, f64::max)
        })
        .collect();
    let ratios = gaps.windows(2).filter(|w| w[0] > 0.0).map(|w| w[1] / w[0]).collect();
    Ok(RefinementStudy { segs: segs.to_vec(), gaps, ratios })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::ScalarData;
    use crate::linops::GrowthBound;
    use crate::verify::{check_uniqueness_conditions, Regime};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kernel_round_trip() {
        for k in [
            Kernel::Constant(1.5),
            Kernel::ExponentialDecay { scale: 2.0, rate: 0.5 },
            Kernel::Samples(vec![0.0, 0.25, 1.0]),
        ] {
            assert_eq!(k.to_string().parse::<Kernel>().unwrap(), k);
        }
        assert!("linear:2".parse::<Kernel>().is_err());
        let s = Kernel::Samples(vec![0.0, 1.0]);
        assert_eq!(s.eval(-0.5, 1.0), 0.5);
    }

    #[test]
    fn adjoint_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [4, 16, 64] {
            let prob = build_delay_problem(&DelayParams { n_seg: n, ..Default::default() }).unwrap();
            let sp = &prob.space;
            let a_adj = sp.adjoint(&prob.a);
            for _ in 0..20 {
                let x = State::from_fn(n + 1, |_, _| rng.random_range(-1.0..1.0));
                let y = State::from_fn(n + 1, |_, _| rng.random_range(-1.0..1.0));
                let defect = (sp.inner(&(&prob.a * &x), &y) - sp.inner(&x, &(&a_adj * &y))).abs();
                assert!(defect <= 1e-12, "defect {defect}");
            }
        }
    }

    #[test]
    fn coupling_is_a_scaled_projection() {
        let params = DelayParams { beta: 0.7, gamma: 1.3, n_seg: 5, ..Default::default() };
        let prob = build_delay_problem(&params).unwrap();
        assert_eq!(&prob.qbar * &prob.qbar, prob.qbar);
        let m = -(&prob.qbar * &prob.s);
        assert!((m[(0, 0)] - 0.91).abs() < 1e-15);
        assert_eq!(m.iter().filter(|v| **v != 0.0).count(), 1);
        let rep = check_uniqueness_conditions(&prob, &GrowthBound { m: 1.0, omega: 0.0 }, 1e-10).unwrap();
        assert_eq!(rep.regime, Some(Regime::Dissipative));
    }

    #[test]
    fn lift_examples() {
        let base = DelayParams { k0: 2.0, n_seg: 4, ..Default::default() };
        assert_eq!(lift_initial(&base).as_slice(), &[2.0, 0.0, 0.0, 0.0, 0.0]);
        let no_kernel = DelayParams { kernel: Kernel::Constant(0.0), past: Kernel::Constant(3.0), ..base.clone() };
        assert_eq!(lift_initial(&no_kernel).as_slice(), &[2.0, 0.0, 0.0, 0.0, 0.0]);
        // b = delta = 1, d = 1: x(xi) = xi + d at cell centres
        let ones = DelayParams { past: Kernel::Constant(1.0), ..base };
        let x = lift_initial(&ones);
        for j in 0..4 {
            assert!((x[j + 1] - (0.125 + 0.25 * j as f64)).abs() < 1e-15);
        }
    }

    /// Production level from the delay integral with investment `alpha` on
    /// `[0, t]` and the past profile before zero.
    fn direct_production(params: &DelayParams, alpha: impl Fn(f64) -> f64, t: f64, steps: usize) -> f64 {
        let d = params.d;
        let input = |s: f64| if s < 0.0 { params.past.eval(s, d) } else { alpha(s) };
        let rate = |s: f64| {
            let m = 2000;
            let h = d / m as f64;
            let delayed: f64 = (0..m)
                .map(|i| {
                    let xi = -d + (i as f64 + 0.5) * h;
                    h * params.kernel.eval(xi, d) * input(s + xi)
                })
                .sum();
            alpha(s) + delayed
        };
        let h = t / steps as f64;
        let simpson: f64 = (0..steps)
            .map(|k| {
                let s = k as f64 * h;
                h / 6.0 * (rate(s) + 4.0 * rate(s + 0.5 * h) + rate(s + h))
            })
            .sum();
        params.k0 + simpson
    }

    fn lifted_production(params: &DelayParams, alpha: impl Fn(f64) -> f64, t: f64, steps: usize) -> f64 {
        let prob = build_delay_problem(params).unwrap();
        let h = t / steps as f64;
        let f = |s: f64, x: &State| &prob.a * x + &prob.b * alpha(s);
        let mut x = prob.z0.clone();
        for k in 0..steps {
            let s = k as f64 * h;
            let k1 = f(s, &x);
            let k2 = f(s + 0.5 * h, &(&x + &k1 * (0.5 * h)));
            let k3 = f(s + 0.5 * h, &(&x + &k2 * (0.5 * h)));
            let k4 = f(s + h, &(&x + &k3 * h));
            x += (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0);
        }
        x[0]
    }

    #[test]
    fn lifted_dynamics_reproduce_the_delay_integral() {
        let params = DelayParams { past: Kernel::Constant(1.0), n_seg: 4, ..Default::default() };
        // no new investment: k(t) = k0 + d t - t^2 / 2 on [0, d]
        let exact = 1.0 + 1.0 - 0.5;
        let coarse = (lifted_production(&params, |_| 0.0, 1.0, 2000) - exact).abs();
        let fine_params = DelayParams { n_seg: 64, ..params.clone() };
        let fine = (lifted_production(&fine_params, |_| 0.0, 1.0, 4000) - exact).abs();
        assert!((direct_production(&params, |_| 0.0, 1.0, 200) - exact).abs() < 1e-6);
        assert!(fine < coarse && fine < 5e-3, "coarse {coarse}, fine {fine}");

        let smooth = DelayParams {
            kernel: Kernel::ExponentialDecay { scale: 1.0, rate: 1.0 },
            past: Kernel::Samples(vec![0.5, 1.0, 0.2]),
            n_seg: 64,
            ..Default::default()
        };
        let alpha = |s: f64| s.cos();
        let direct = direct_production(&smooth, alpha, 1.0, 200);
        let lifted = lifted_production(&smooth, alpha, 1.0, 4000);
        assert!((direct - lifted).abs() < 1e-2, "direct {direct}, lifted {lifted}");
    }

    #[test]
    fn no_kernel_reduces_to_scalar_problem() {
        let params = DelayParams {
            kernel: Kernel::Constant(0.0),
            n_seg: 1,
            beta: 0.8,
            gamma: 1.2,
            eta_price: 1.5,
            r_cost: 0.7,
            k0: 0.4,
            ..Default::default()
        };
        let prob = build_delay_problem(&params).unwrap();
        let grid = TimeGrid::default_for(1.0).unwrap();
        let sol = solve_decoupled(&prob, &solve_riccati_p(&prob, &grid).unwrap()).unwrap();
        let coupling = -params.beta * params.gamma;
        let affine = params.beta * params.eta_price;
        let scalar = ScalarData {
            r: 2.0 * params.r_cost,
            q: 0.0,
            qbar: 1.0,
            qt: 0.0,
            qbart: 1.0,
            s: coupling,
            st: coupling,
            sigma: params.sigma,
            z0: params.k0,
            c: affine,
            ct: affine,
            ..Default::default()
        }
        .build();
        let reference = solve_decoupled(&scalar, &solve_riccati_p(&scalar, &grid).unwrap()).unwrap();
        for k in 0..grid.len() {
            assert!((sol.z.values[k][0] - reference.z.values[k][0]).abs() <= 1e-8);
            assert!((sol.r.values[k][0] - reference.r.values[k][0]).abs() <= 1e-8);
        }
    }

    #[test]
    fn refinement_trivial_cases() {
        let params = DelayParams { kernel: Kernel::Constant(0.0), ..Default::default() };
        let study = segment_refinement_study(&params, &[2, 4, 8]).unwrap();
        assert!(study.gaps.iter().all(|g| *g < 1e-10), "{:?}", study.gaps);
        let study = segment_refinement_study(&DelayParams::default(), &[16, 16]).unwrap();
        assert_eq!(study.gaps, vec![0.0]);
        assert!(segment_refinement_study(&DelayParams::default(), &[8, 4]).is_err());
    }

    #[test]
    fn validation() {
        assert!(build_delay_problem(&DelayParams { n_seg: 0, ..Default::default() }).is_err());
        assert!(build_delay_problem(&DelayParams { r_cost: 0.0, ..Default::default() }).is_err());
        assert!(build_delay_problem(&DelayParams { kernel: Kernel::Constant(-1.0), ..Default::default() }).is_err());
    }
}
