//! Ready-made problem instances: scalar benchmarks and seeded random suites.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::linops::{HilbertSpace, Operator, State};
use crate::problem::MfgProblem;

/// Scalar game data; every operator is a 1x1 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarData {
    pub a: f64,
    pub b: f64,
    pub r: f64,
    pub q: f64,
    pub qbar: f64,
    pub qt: f64,
    pub qbart: f64,
    pub s: f64,
    pub st: f64,
    pub sigma: f64,
    pub z0: f64,
    pub c: f64,
    pub ct: f64,
    pub horizon: f64,
}

impl Default for ScalarData {
    fn default() -> Self {
        Self {
            a: 0.0,
            b: 1.0,
            r: 1.0,
            q: 1.0,
            qbar: 0.0,
            qt: 1.0,
            qbart: 0.0,
            s: 0.0,
            st: 0.0,
            sigma: 0.0,
            z0: 1.0,
            c: 0.0,
            ct: 0.0,
            horizon: 1.0,
        }
    }
}

impl ScalarData {
    pub fn build(&self) -> MfgProblem {
        let m = |v: f64| Operator::from_element(1, 1, v);
        let v = |x: f64| State::from_element(1, x);
        MfgProblem {
            space: HilbertSpace::euclidean(1),
            a: m(self.a),
            b: m(self.b),
            q: m(self.q),
            qbar: m(self.qbar),
            qt: m(self.qt),
            qbart: m(self.qbart),
            r: m(self.r),
            s: m(self.s),
            st: m(self.st),
            sigma: m(self.sigma),
            horizon: self.horizon,
            z0: v(self.z0),
            affine_c: v(self.c),
            affine_ct: v(self.ct),
            r_eps: 1e-6,
        }
    }
}

/// `A = 0, B = R = Q = Q_T = 1`, no coupling: `P = 1`, `r = 0`, `z = e^{-t}`.
pub fn scalar_equilibrium() -> MfgProblem {
    ScalarData::default().build()
}

/// `A = 0, B = R = 1, Q + Qbar = 2, Q_T + Qbar_T = 1` with dissipative coupling
/// `Qbar S = Qbar_T S_T = -1`.
pub fn scalar_q2(horizon: f64) -> MfgProblem {
    ScalarData {
        q: 1.0,
        qbar: 1.0,
        qt: 0.0,
        qbart: 1.0,
        s: -1.0,
        st: -1.0,
        horizon,
        ..ScalarData::default()
    }
    .build()
}

fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn scaled_to<R: Rng + ?Sized>(rng: &mut R, m: DMatrix<f64>, max_norm: f64) -> DMatrix<f64> {
    let n = if m.nrows() > 1 && m.ncols() > 1 { m.clone().singular_values().max() } else { m.norm() };
    if n == 0.0 {
        return m;
    }
    m * (rng.random_range(0.2..1.0) * max_norm / n)
}

fn gaussian_scaled<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, max_norm: f64) -> DMatrix<f64> {
    let g = gaussian_matrix(rng, rows, cols);
    scaled_to(rng, g, max_norm)
}

/// Random symmetric nonnegative matrix with spectral norm at most `max_norm`.
fn psd<R: Rng + ?Sized>(rng: &mut R, dim: usize, max_norm: f64) -> DMatrix<f64> {
    let g = gaussian_matrix(rng, dim, dim);
    scaled_to(rng, &g * g.transpose(), max_norm)
}

fn orthogonal<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> DMatrix<f64> {
    gaussian_matrix(rng, dim, dim).qr().q()
}

fn random_weights<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> HilbertSpace {
    HilbertSpace::new((0..dim).map(|_| rng.random_range(0.5..2.0)).collect())
        .expect("weights drawn from a positive range")
}

fn random_state<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> State {
    State::from_fn(dim, |_, _| rng.random_range(-1.0..1.0))
}

/// Assembles a problem whose operators are given in W-orthonormal coordinates.
#[allow(clippy::too_many_arguments)]
fn from_orthonormal_data(
    space: HilbertSpace,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    q: DMatrix<f64>,
    qbar: DMatrix<f64>,
    qt: DMatrix<f64>,
    qbart: DMatrix<f64>,
    r: DMatrix<f64>,
    s: DMatrix<f64>,
    st: DMatrix<f64>,
    sigma: DMatrix<f64>,
    horizon: f64,
    z0: State,
) -> MfgProblem {
    let dim = space.dim();
    let op = |m: &DMatrix<f64>| space.from_orthonormal(m);
    MfgProblem {
        a: op(&a),
        b: space.input_from_orthonormal(&b),
        q: op(&q),
        qbar: op(&qbar),
        qt: op(&qt),
        qbart: op(&qbart),
        r,
        s: op(&s),
        st: op(&st),
        sigma: space.input_from_orthonormal(&sigma),
        horizon,
        z0: space.vector_from_orthonormal(&z0),
        affine_c: State::zeros(dim),
        affine_ct: State::zeros(dim),
        r_eps: 1e-6,
        space,
    }
}

/// Random instance with `||A|| <= 2` and nonnegative cost data, weighted space.
pub fn random_psd_instance<R: Rng + ?Sized>(rng: &mut R, dim: usize, horizon: f64) -> MfgProblem {
    let space = random_weights(rng, dim);
    let m = rng.random_range(1..=dim.min(3));
    let a = gaussian_scaled(rng, dim, dim, 2.0);
    let b = gaussian_scaled(rng, dim, m, 1.5);
    let q = psd(rng, dim, 2.0);
    let qt = psd(rng, dim, 2.0);
    // Qbar may be indefinite as long as Q + Qbar stays nonnegative.
    let qbar = psd(rng, dim, 1.0) - &q * rng.random_range(0.0..1.0);
    let qbart = psd(rng, dim, 1.0) - &qt * rng.random_range(0.0..1.0);
    let r = psd(rng, m, 1.0) + DMatrix::identity(m, m) * rng.random_range(0.5..1.5);
    let s = gaussian_scaled(rng, dim, dim, 1.0);
    let st = gaussian_scaled(rng, dim, dim, 1.0);
    let sigma = gaussian_scaled(rng, dim, dim, 0.5);
    let z0 = random_state(rng, dim);
    from_orthonormal_data(space, a, b, q, qbar, qt, qbart, r, s, st, sigma, horizon, z0)
}

/// Random instance with `-Qbar S` and `-Qbar_T S_T` self-adjoint and nonnegative.
///
/// `Qbar` and `S` share an eigenbasis (likewise `Qbar_T`, `S_T`), with
/// nonnegative spectrum for `Qbar` and nonpositive spectrum for `S`. The
/// generator is a skew part minus a nonnegative part, so `e^{tA}` is a contraction.
pub fn random_dissipative_instance<R: Rng + ?Sized>(
    rng: &mut R,
    dim: usize,
    horizon: f64,
) -> MfgProblem {
    let space = random_weights(rng, dim);
    let m = rng.random_range(1..=dim.min(2));
    let g = gaussian_matrix(rng, dim, dim);
    let skew = scaled_to(rng, &g - g.transpose(), 0.5);
    let a = skew - psd(rng, dim, 0.5);
    let b = gaussian_scaled(rng, dim, m, 1.0);
    let q = psd(rng, dim, 1.0);
    let qt = psd(rng, dim, 1.0);
    let coupled = |rng: &mut R| {
        let v = orthogonal(rng, dim);
        let lam = DMatrix::from_diagonal(&State::from_fn(dim, |_, _| rng.random_range(0.0..1.0)));
        let mu = DMatrix::from_diagonal(&State::from_fn(dim, |_, _| rng.random_range(0.0..1.0)));
        (&v * lam * v.transpose(), -(&v * mu * v.transpose()))
    };
    let (qbar, s) = coupled(rng);
    let (qbart, st) = coupled(rng);
    let r = DMatrix::identity(m, m) * rng.random_range(0.8..1.5);
    let sigma = gaussian_scaled(rng, dim, 1, 0.3);
    let z0 = random_state(rng, dim);
    from_orthonormal_data(space, a, b, q, qbar, qt, qbart, r, s, st, sigma, horizon, z0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_instances_validate() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for k in 0..40 {
            let dim = 1 + k % 6;
            random_psd_instance(&mut rng, dim, 1.0).validate().unwrap();
            random_dissipative_instance(&mut rng, dim.min(5), 1.0).validate().unwrap();
        }
    }

    #[test]
    fn dissipative_coupling_is_nonpositive() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let p = random_dissipative_instance(&mut rng, 4, 1.0);
            let c = p.coefficients().unwrap();
            assert!(p.space.eig_range(&(&p.a + p.space.adjoint(&p.a))).1 <= 1e-12);
            for op in [&c.qbar_s, &c.qbart_st] {
                assert!(p.space.self_adjoint_defect(op) < 1e-12);
                assert!(p.space.eig_range(op).1 <= 1e-12);
            }
        }
    }

    #[test]
    fn psd_suite_respects_generator_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let p = random_psd_instance(&mut rng, 5, 1.0);
            assert!(p.space.op_norm(&p.a) <= 2.0 + 1e-12);
        }
    }
}
