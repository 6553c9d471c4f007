//! Uniform time grids and time-indexed paths of operators, states and scalars.

use crate::error::{MfgError, Result};
use crate::linops::{HilbertSpace, Operator, State};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub start: f64,
    pub end: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    /// Uniform grid on `[0, horizon]`.
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        Self::on_interval(0.0, horizon, n_steps)
    }

    pub fn on_interval(start: f64, end: f64, n_steps: usize) -> Result<Self> {
        if n_steps < 2 {
            return Err(MfgError::InvalidProblem("n_steps must be >= 2".into()));
        }
        if !(start.is_finite() && end.is_finite() && end > start) {
            return Err(MfgError::InvalidProblem(format!("bad time interval [{start}, {end}]")));
        }
        Ok(Self { start, end, n_steps })
    }

    /// `max(200, ceil(200 T))` steps on `[0, T]`.
    pub fn default_for(horizon: f64) -> Result<Self> {
        let n = (200.0 * horizon).ceil().max(200.0) as usize;
        Self::new(horizon, n)
    }

    pub fn horizon(&self) -> f64 {
        self.end - self.start
    }

    pub fn step(&self) -> f64 {
        self.horizon() / self.n_steps as f64
    }

    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn node(&self, i: usize) -> f64 {
        if i == self.n_steps {
            self.end
        } else {
            self.start + i as f64 * self.step()
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(|i| self.node(i))
    }

    pub fn nearest_index(&self, t: f64) -> usize {
        let x = ((t - self.start) / self.step()).round();
        x.clamp(0.0, self.n_steps as f64) as usize
    }

    pub fn same_as(&self, other: &TimeGrid) -> bool {
        self.n_steps == other.n_steps
            && (self.start - other.start).abs() <= 1e-12 * (1.0 + self.start.abs())
            && (self.end - other.end).abs() <= 1e-12 * (1.0 + self.end.abs())
    }

    pub fn require_same(&self, other: &TimeGrid) -> Result<()> {
        if self.same_as(other) {
            Ok(())
        } else {
            Err(MfgError::GridMismatch(format!(
                "[{}, {}] with {} steps vs [{}, {}] with {} steps",
                self.start, self.end, self.n_steps, other.start, other.end, other.n_steps
            )))
        }
    }

    /// Lagrange weights of the (at most) four nodes nearest to `t`.
    pub(crate) fn stencil(&self, t: f64) -> (usize, Vec<f64>) {
        let n_nodes = self.len();
        let width = n_nodes.min(4);
        let h = self.step();
        let x = ((t - self.start) / h).clamp(0.0, self.n_steps as f64);
        let cell = (x.floor() as usize).min(self.n_steps - 1);
        let first = cell.saturating_sub(1).min(n_nodes - width);
        let weights = (0..width)
            .map(|j| {
                let xj = (first + j) as f64;
                (0..width)
                    .filter(|&m| m != j)
                    .map(|m| {
                        let xm = (first + m) as f64;
                        (x - xm) / (xj - xm)
                    })
                    .product()
            })
            .collect();
        (first, weights)
    }
}

fn interpolate<T>(grid: &TimeGrid, values: &[T], t: f64) -> T
where
    T: Clone + std::ops::Mul<f64, Output = T> + std::ops::Add<T, Output = T>,
{
    let i = grid.nearest_index(t);
    if (grid.node(i) - t).abs() <= 1e-12 * grid.step() {
        return values[i].clone();
    }
    let (first, w) = grid.stencil(t);
    let mut acc = values[first].clone() * w[0];
    for (j, wj) in w.iter().enumerate().skip(1) {
        acc = acc + values[first + j].clone() * *wj;
    }
    acc
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatorPath {
    pub grid: TimeGrid,
    pub values: Vec<Operator>,
    pub symmetric: bool,
}

impl OperatorPath {
    pub fn new(grid: TimeGrid, values: Vec<Operator>, symmetric: bool) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(MfgError::GridMismatch(format!(
                "{} operator values for {} nodes",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, values, symmetric })
    }

    pub fn constant(grid: TimeGrid, value: Operator, symmetric: bool) -> Self {
        Self { grid, values: vec![value; grid.len()], symmetric }
    }

    /// Cubic interpolation between nodes; exact at nodes.
    pub fn at(&self, t: f64) -> Operator {
        interpolate(&self.grid, &self.values, t)
    }

    pub fn at_node(&self, i: usize) -> &Operator {
        &self.values[i]
    }

    pub fn sup_norm(&self, space: &HilbertSpace) -> f64 {
        self.values.iter().map(|v| space.op_norm(v)).fold(0.0, f64::max)
    }

    pub fn sup_distance(&self, other: &OperatorPath, space: &HilbertSpace) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| space.op_norm(&(a - b)))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorPath {
    pub grid: TimeGrid,
    pub values: Vec<State>,
}

impl VectorPath {
    pub fn new(grid: TimeGrid, values: Vec<State>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(MfgError::GridMismatch(format!(
                "{} state values for {} nodes",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: TimeGrid, dim: usize) -> Self {
        Self { grid, values: vec![State::zeros(dim); grid.len()] }
    }

    pub fn at(&self, t: f64) -> State {
        interpolate(&self.grid, &self.values, t)
    }

    pub fn at_node(&self, i: usize) -> &State {
        &self.values[i]
    }

    pub fn first(&self) -> &State {
        &self.values[0]
    }

    pub fn last(&self) -> &State {
        self.values.last().expect("paths have at least three nodes")
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn sup_distance(&self, other: &VectorPath, space: &HilbertSpace) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| space.norm(&(a - b)))
            .fold(0.0, f64::max)
    }

    pub fn sup_norm(&self, space: &HilbertSpace) -> f64 {
        self.values.iter().map(|v| space.norm(v)).fold(0.0, f64::max)
    }

    /// Path of a single coordinate.
    pub fn component(&self, k: usize) -> ScalarPath {
        ScalarPath { grid: self.grid, values: self.values.iter().map(|v| v[k]).collect() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarPath {
    pub grid: TimeGrid,
    pub values: Vec<f64>,
}

impl ScalarPath {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(MfgError::GridMismatch(format!(
                "{} scalar values for {} nodes",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn at(&self, t: f64) -> f64 {
        interpolate(&self.grid, &self.values, t)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_rejects_too_few_steps() {
        assert!(TimeGrid::new(1.0, 1).is_err());
        assert!(TimeGrid::new(0.0, 10).is_err());
    }

    #[test]
    fn default_grid_size() {
        assert_eq!(TimeGrid::default_for(0.5).unwrap().n_steps, 200);
        assert_eq!(TimeGrid::default_for(3.2).unwrap().n_steps, 640);
    }

    #[test]
    fn last_node_is_exact() {
        let g = TimeGrid::new(0.3, 7).unwrap();
        assert_eq!(g.node(7), 0.3);
        assert_eq!(g.nearest_index(0.3), 7);
        assert_eq!(g.nearest_index(-1.0), 0);
    }

    #[test]
    fn cubic_interpolation_is_exact_on_cubics() {
        let g = TimeGrid::new(1.0, 10).unwrap();
        let f = |t: f64| 1.0 - 2.0 * t + 0.5 * t * t - 3.0 * t * t * t;
        let p = ScalarPath::new(g, g.nodes().map(f).collect()).unwrap();
        for &t in &[0.0, 0.01, 0.37, 0.55, 0.96, 1.0] {
            assert!((p.at(t) - f(t)).abs() < 1e-13, "t = {t}");
        }
    }

    #[test]
    fn interpolation_with_three_nodes() {
        let g = TimeGrid::new(1.0, 2).unwrap();
        let f = |t: f64| 2.0 + t - t * t;
        let p = ScalarPath::new(g, g.nodes().map(f).collect()).unwrap();
        assert!((p.at(0.3) - f(0.3)).abs() < 1e-14);
    }
}
