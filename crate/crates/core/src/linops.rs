//! Finite-dimensional Hilbert-space scaffolding.
//!
//! States live in `R^dim` with a diagonal Gram matrix `W`, so that
//! `<x, y>_W = sum_i w_i x_i y_i`. Operators are plain coordinate matrices;
//! every metric notion (adjoint, norm, positivity) is taken with respect to
//! `W`. Control and noise spaces are Euclidean.

use nalgebra::{DMatrix, DVector};

use crate::error::{MfgError, Result};

/// Coordinate matrix of a bounded operator.
pub type Operator = DMatrix<f64>;
/// Coordinate vector of a state.
pub type State = DVector<f64>;

/// Relative tolerance used when deciding whether an operator is self-adjoint.
pub const SELF_ADJOINT_RTOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct HilbertSpace {
    weights: DVector<f64>,
    sqrt_weights: DVector<f64>,
}

impl HilbertSpace {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(MfgError::InvalidProblem("Hilbert space must have dim >= 1".into()));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(MfgError::InvalidProblem(format!(
                "Gram weights must be finite and strictly positive, got {w}"
            )));
        }
        let weights = DVector::from_vec(weights);
        let sqrt_weights = weights.map(f64::sqrt);
        Ok(Self { weights, sqrt_weights })
    }

    pub fn euclidean(dim: usize) -> Self {
        Self::new(vec![1.0; dim.max(1)]).expect("unit weights are valid")
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn inner(&self, x: &State, y: &State) -> f64 {
        x.iter().zip(y.iter()).zip(self.weights.iter()).map(|((a, b), w)| w * a * b).sum()
    }

    pub fn norm(&self, x: &State) -> f64 {
        self.inner(x, x).max(0.0).sqrt()
    }

    /// `W^{1/2} L W^{-1/2}`: the operator expressed in a W-orthonormal basis.
    pub fn to_orthonormal(&self, l: &Operator) -> Operator {
        let s = &self.sqrt_weights;
        Operator::from_fn(l.nrows(), l.ncols(), |i, j| l[(i, j)] * s[i] / s[j])
    }

    /// Inverse of [`HilbertSpace::to_orthonormal`].
    pub fn from_orthonormal(&self, l: &Operator) -> Operator {
        let s = &self.sqrt_weights;
        Operator::from_fn(l.nrows(), l.ncols(), |i, j| l[(i, j)] * s[j] / s[i])
    }

    /// Maps an orthonormal-coordinate vector back to W-coordinates.
    pub fn vector_from_orthonormal(&self, x: &State) -> State {
        x.component_div(&self.sqrt_weights)
    }

    /// Maps an orthonormal-coordinate input operator (Euclidean -> H) to W-coordinates.
    pub fn input_from_orthonormal(&self, b: &Operator) -> Operator {
        let s = &self.sqrt_weights;
        Operator::from_fn(b.nrows(), b.ncols(), |i, j| b[(i, j)] / s[i])
    }

    /// W-operator norm `sup_{|x|_W = 1} |Lx|_W`.
    pub fn op_norm(&self, l: &Operator) -> f64 {
        spectral_norm(&self.to_orthonormal(l))
    }

    /// Norm of an input operator from a Euclidean space into H.
    pub fn input_norm(&self, b: &Operator) -> f64 {
        let s = &self.sqrt_weights;
        spectral_norm(&Operator::from_fn(b.nrows(), b.ncols(), |i, j| b[(i, j)] * s[i]))
    }

    /// W-adjoint `L* = W^{-1} L^T W`.
    pub fn adjoint(&self, l: &Operator) -> Operator {
        let w = &self.weights;
        Operator::from_fn(l.ncols(), l.nrows(), |i, j| l[(j, i)] * w[j] / w[i])
    }

    /// Adjoint of an input operator `B: R^m -> H`, i.e. `B* = B^T W`.
    pub fn input_adjoint(&self, b: &Operator) -> Operator {
        let w = &self.weights;
        Operator::from_fn(b.ncols(), b.nrows(), |i, j| b[(j, i)] * w[j])
    }

    pub fn symmetrize(&self, l: &Operator) -> Operator {
        (l + self.adjoint(l)) * 0.5
    }

    /// `||L - L*||_W`.
    pub fn self_adjoint_defect(&self, l: &Operator) -> f64 {
        self.op_norm(&(l - self.adjoint(l)))
    }

    pub fn is_self_adjoint(&self, l: &Operator, rtol: f64) -> bool {
        self.self_adjoint_defect(l) <= rtol * self.op_norm(l)
    }

    /// Extreme eigenvalues of the symmetrized orthonormal form.
    pub fn eig_range(&self, l: &Operator) -> (f64, f64) {
        let e = self.to_orthonormal(l);
        let sym = (&e + e.transpose()) * 0.5;
        let ev = sym.symmetric_eigenvalues();
        (ev.min(), ev.max())
    }

    pub fn check_operator(&self, name: &str, l: &Operator) -> Result<()> {
        if l.nrows() != self.dim() || l.ncols() != self.dim() {
            return Err(MfgError::Dimension(format!(
                "{name} is {}x{}, expected {}x{}",
                l.nrows(),
                l.ncols(),
                self.dim(),
                self.dim()
            )));
        }
        ensure_finite(name, l)
    }

    pub fn check_state(&self, name: &str, x: &State) -> Result<()> {
        if x.len() != self.dim() {
            return Err(MfgError::Dimension(format!(
                "{name} has length {}, expected {}",
                x.len(),
                self.dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(MfgError::InvalidOperator(format!("{name} has non-finite entries")));
        }
        Ok(())
    }
}

pub(crate) fn ensure_finite(name: &str, l: &Operator) -> Result<()> {
    if l.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(MfgError::InvalidOperator(format!("{name} has non-finite entries")))
    }
}

pub(crate) fn spectral_norm(m: &Operator) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    if m.nrows() == 1 || m.ncols() == 1 {
        return m.norm();
    }
    m.clone().singular_values().max()
}

/// `e^{tA}` by scaling and squaring with a Padé approximant.
pub fn mat_exp(a: &Operator, t: f64) -> Result<Operator> {
    if a.nrows() != a.ncols() {
        return Err(MfgError::InvalidOperator("matrix exponential of a non-square matrix".into()));
    }
    ensure_finite("A", a)?;
    if !t.is_finite() {
        return Err(MfgError::InvalidOperator(format!("non-finite time {t}")));
    }
    if t == 0.0 || a.iter().all(|v| *v == 0.0) {
        return Ok(Operator::identity(a.nrows(), a.ncols()));
    }
    let e = (a * t).exp();
    ensure_finite("exp(tA)", &e)?;
    Ok(e)
}

/// Largest real part of the spectrum of `a`.
pub fn spectral_abscissa(a: &Operator) -> Result<f64> {
    ensure_finite("A", a)?;
    let ev = a.clone().complex_eigenvalues();
    let mut best = f64::NEG_INFINITY;
    for z in ev.iter() {
        if !z.re.is_finite() || !z.im.is_finite() {
            return Err(MfgError::Spectral("eigensolver returned non-finite values".into()));
        }
        best = best.max(z.re);
    }
    Ok(best)
}

/// Yosida approximant `A_n = n^2 (nI - A)^{-1} - nI`, evaluated as `n (nI - A)^{-1} A`.
pub fn yosida(a: &Operator, n: f64) -> Result<Operator> {
    ensure_finite("A", a)?;
    let abscissa = spectral_abscissa(a)?;
    if !(n > abscissa) || !n.is_finite() {
        return Err(MfgError::Resolvent { n, abscissa });
    }
    let dim = a.nrows();
    let shifted = Operator::identity(dim, dim) * n - a;
    let lu = shifted.lu();
    let x = lu.solve(a).ok_or(MfgError::Resolvent { n, abscissa })?;
    let an = x * n;
    if an.iter().any(|v| !v.is_finite()) {
        return Err(MfgError::Resolvent { n, abscissa });
    }
    Ok(an)
}

/// Constants `(M, omega)` with `||e^{tA}||_W <= M e^{omega t}` on `[0, horizon]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthBound {
    pub m: f64,
    pub omega: f64,
}

impl GrowthBound {
    pub fn omega_plus(&self) -> f64 {
        self.omega.max(0.0)
    }
}

/// Samples `t -> ||e^{tA}||_W` on a uniform grid of `grid_points` over `[0, horizon]`.
pub fn semigroup_norms(
    space: &HilbertSpace,
    a: &Operator,
    horizon: f64,
    grid_points: usize,
) -> Result<Vec<(f64, f64)>> {
    if !(horizon > 0.0) || grid_points < 2 {
        return Err(MfgError::InvalidProblem(format!(
            "growth bound needs horizon > 0 and >= 2 grid points (got {horizon}, {grid_points})"
        )));
    }
    space.check_operator("A", a)?;
    let dt = horizon / (grid_points - 1) as f64;
    let step = mat_exp(a, dt)?;
    let mut e = Operator::identity(a.nrows(), a.ncols());
    let mut out = Vec::with_capacity(grid_points);
    for k in 0..grid_points {
        let t = k as f64 * dt;
        if k > 0 {
            e = &e * &step;
            // re-anchor periodically to keep the product honest
            if k % 64 == 0 {
                e = mat_exp(a, t)?;
            }
        }
        out.push((t, space.op_norm(&e)));
    }
    Ok(out)
}

pub fn growth_bound(
    space: &HilbertSpace,
    a: &Operator,
    horizon: f64,
    grid_points: usize,
) -> Result<GrowthBound> {
    let omega = spectral_abscissa(a)?;
    let m = semigroup_norms(space, a, horizon, grid_points)?
        .into_iter()
        .map(|(t, n)| n * (-omega * t).exp())
        .fold(1.0_f64, f64::max);
    Ok(GrowthBound { m, omega })
}

/// `M_T = sup_{t in [0,T]} ||e^{tA}||_W`, floored at 1.
pub fn semigroup_sup(
    space: &HilbertSpace,
    a: &Operator,
    horizon: f64,
    grid_points: usize,
) -> Result<f64> {
    Ok(semigroup_norms(space, a, horizon, grid_points)?
        .into_iter()
        .map(|(_, n)| n)
        .fold(1.0_f64, f64::max))
}

pub fn adjoint(space: &HilbertSpace, l: &Operator) -> Operator {
    space.adjoint(l)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsdReport {
    pub is_psd: bool,
    pub min_eig: f64,
    pub max_eig: f64,
}

/// Membership test for the nonnegative self-adjoint cone.
pub fn is_psd(space: &HilbertSpace, l: &Operator, tol: f64) -> Result<PsdReport> {
    space.check_operator("L", l)?;
    let defect = space.self_adjoint_defect(l);
    let allowed = SELF_ADJOINT_RTOL * space.op_norm(l);
    if defect > allowed {
        return Err(MfgError::SymmetryViolation { defect, tol: allowed });
    }
    let (min_eig, max_eig) = space.eig_range(l);
    Ok(PsdReport { is_psd: min_eig >= -tol, min_eig, max_eig })
}
