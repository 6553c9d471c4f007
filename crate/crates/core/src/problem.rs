//! Problem data of a linear-quadratic mean-field game on a truncated space.

use crate::error::{MfgError, Result};
use crate::linops::{ensure_finite, spectral_norm, HilbertSpace, Operator, State};

/// Tolerance used by [`MfgProblem::validate`] for cone membership.
pub const ASSUMPTION_TOL: f64 = 1e-10;

/// All operators and scalars of the game.
///
/// `b` maps the (Euclidean) control space into the state space and `sigma`
/// maps the (Euclidean) noise space into it, so both may be rectangular.
#[derive(Debug, Clone, PartialEq)]
pub struct MfgProblem {
    pub space: HilbertSpace,
    pub a: Operator,
    pub b: Operator,
    pub q: Operator,
    pub qbar: Operator,
    pub qt: Operator,
    pub qbart: Operator,
    pub r: Operator,
    pub s: Operator,
    pub st: Operator,
    pub sigma: Operator,
    pub horizon: f64,
    pub z0: State,
    pub affine_c: State,
    pub affine_ct: State,
    pub r_eps: f64,
}

/// Composite operators that every solver needs.
#[derive(Debug, Clone)]
pub struct Coefficients {
    /// `A*`
    pub a_adj: Operator,
    /// `B R^{-1} B*`
    pub gain: Operator,
    pub r_inv: Operator,
    /// `B*`
    pub b_adj: Operator,
    /// `Q + Qbar`
    pub q_sum: Operator,
    /// `Q_T + Qbar_T`
    pub qt_sum: Operator,
    /// `Qbar S`
    pub qbar_s: Operator,
    /// `Qbar_T S_T`
    pub qbart_st: Operator,
    /// `||B R^{-1} B*||`
    pub gain_norm: f64,
}

impl MfgProblem {
    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn control_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn noise_dim(&self) -> usize {
        self.sigma.ncols()
    }

    pub fn has_affine_terms(&self) -> bool {
        self.affine_c.iter().chain(self.affine_ct.iter()).any(|v| *v != 0.0)
    }

    /// Shapes, finiteness and horizon only.
    pub fn check_structure(&self) -> Result<()> {
        let n = self.dim();
        for (name, op) in [
            ("A", &self.a),
            ("Q", &self.q),
            ("Qbar", &self.qbar),
            ("Q_T", &self.qt),
            ("Qbar_T", &self.qbart),
            ("S", &self.s),
            ("S_T", &self.st),
        ] {
            self.space.check_operator(name, op)?;
        }
        if self.b.nrows() != n || self.b.ncols() == 0 {
            return Err(MfgError::Dimension(format!(
                "B is {}x{}, expected {n} rows and at least one column",
                self.b.nrows(),
                self.b.ncols()
            )));
        }
        let m = self.b.ncols();
        if self.r.nrows() != m || self.r.ncols() != m {
            return Err(MfgError::Dimension(format!(
                "R is {}x{}, expected {m}x{m}",
                self.r.nrows(),
                self.r.ncols()
            )));
        }
        if self.sigma.nrows() != n {
            return Err(MfgError::Dimension(format!(
                "sigma has {} rows, expected {n}",
                self.sigma.nrows()
            )));
        }
        ensure_finite("B", &self.b)?;
        ensure_finite("R", &self.r)?;
        ensure_finite("sigma", &self.sigma)?;
        self.space.check_state("z0", &self.z0)?;
        self.space.check_state("affine_c", &self.affine_c)?;
        self.space.check_state("affine_cT", &self.affine_ct)?;
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(MfgError::InvalidProblem(format!("horizon must be > 0, got {}", self.horizon)));
        }
        if !(self.r_eps.is_finite() && self.r_eps > 0.0) {
            return Err(MfgError::InvalidProblem(format!("R_eps must be > 0, got {}", self.r_eps)));
        }
        Ok(())
    }

    /// Structure plus the standing sign conditions on the cost data.
    pub fn validate(&self) -> Result<()> {
        self.check_structure()?;
        let sp = &self.space;
        let cone = |name: &str, op: &Operator| -> Result<()> {
            let scale = 1.0 + sp.op_norm(op);
            if sp.self_adjoint_defect(op) > ASSUMPTION_TOL * scale {
                return Err(MfgError::InvalidProblem(format!("{name} is not self-adjoint")));
            }
            let (min, _) = sp.eig_range(op);
            if min < -ASSUMPTION_TOL * scale {
                return Err(MfgError::InvalidProblem(format!(
                    "{name} must be nonnegative, min eigenvalue {min:.3e}"
                )));
            }
            Ok(())
        };
        cone("Q", &self.q)?;
        cone("Q_T", &self.qt)?;
        cone("Q + Qbar", &(&self.q + &self.qbar))?;
        cone("Q_T + Qbar_T", &(&self.qt + &self.qbart))?;
        for (name, op) in [("Qbar", &self.qbar), ("Qbar_T", &self.qbart)] {
            let defect = sp.self_adjoint_defect(op);
            if defect > ASSUMPTION_TOL * (1.0 + sp.op_norm(op)) {
                return Err(MfgError::InvalidProblem(format!(
                    "{name} is not self-adjoint (defect {defect:.3e})"
                )));
            }
        }
        let (r_min, asym) = r_spectrum(&self.r);
        if asym > ASSUMPTION_TOL * (1.0 + spectral_norm(&self.r)) {
            return Err(MfgError::InvalidProblem("R is not symmetric".into()));
        }
        if r_min < self.r_eps {
            return Err(MfgError::InvalidProblem(format!(
                "R is not coercive: min eigenvalue {r_min:.3e} < R_eps = {:.3e}",
                self.r_eps
            )));
        }
        Ok(())
    }

    pub fn coefficients(&self) -> Result<Coefficients> {
        let sp = &self.space;
        let r_inv = self
            .r
            .clone()
            .try_inverse()
            .ok_or_else(|| MfgError::InvalidProblem("R is singular".into()))?;
        let b_adj = sp.input_adjoint(&self.b);
        let gain = sp.symmetrize(&(&self.b * &r_inv * &b_adj));
        let gain_norm = sp.op_norm(&gain);
        Ok(Coefficients {
            a_adj: sp.adjoint(&self.a),
            gain,
            r_inv,
            b_adj,
            q_sum: &self.q + &self.qbar,
            qt_sum: &self.qt + &self.qbart,
            qbar_s: &self.qbar * &self.s,
            qbart_st: &self.qbart * &self.st,
            gain_norm,
        })
    }

    /// Same data with the generator replaced.
    pub fn with_generator(&self, a: Operator) -> Self {
        Self { a, ..self.clone() }
    }

    pub fn with_horizon(&self, horizon: f64) -> Self {
        Self { horizon, ..self.clone() }
    }

    pub fn with_sigma(&self, sigma: Operator) -> Self {
        Self { sigma, ..self.clone() }
    }
}

/// Minimum eigenvalue of the symmetric part of `R` and its asymmetry.
pub(crate) fn r_spectrum(r: &Operator) -> (f64, f64) {
    let asym = spectral_norm(&(r - r.transpose()));
    let sym = (r + r.transpose()) * 0.5;
    (sym.symmetric_eigenvalues().min(), asym)
}
