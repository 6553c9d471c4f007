//! Composite quadrature on uniform grids.
//!
//! The interval rules integrate the cubic through the four nearest nodes over a
//! single cell, which gives fourth-order cumulative integrals without any
//! constraint on the parity of the node count.

/// Node weights of the composite trapezoid rule.
pub fn trapezoid_weights(n_nodes: usize, h: f64) -> Vec<f64> {
    let mut w = vec![h; n_nodes];
    if n_nodes > 0 {
        w[0] = 0.5 * h;
        w[n_nodes - 1] = 0.5 * h;
    }
    if n_nodes == 1 {
        w[0] = 0.0;
    }
    w
}

/// Weights for `int_{t_i}^{t_{i+1}}` in terms of nodes `first..first + len`.
pub fn interval_stencil(n_nodes: usize, i: usize, h: f64) -> (usize, Vec<f64>) {
    assert!(n_nodes >= 2 && i + 1 < n_nodes, "interval {i} outside a grid of {n_nodes} nodes");
    match n_nodes {
        2 => (0, vec![0.5 * h, 0.5 * h]),
        3 => {
            let c = h / 12.0;
            if i == 0 {
                (0, vec![5.0 * c, 8.0 * c, -c])
            } else {
                (0, vec![-c, 8.0 * c, 5.0 * c])
            }
        }
        _ => {
            let c = h / 24.0;
            if i == 0 {
                (0, vec![9.0 * c, 19.0 * c, -5.0 * c, c])
            } else if i + 2 == n_nodes {
                (n_nodes - 4, vec![c, -5.0 * c, 19.0 * c, 9.0 * c])
            } else {
                (i - 1, vec![-c, 13.0 * c, 13.0 * c, -c])
            }
        }
    }
}

/// Node weights of the fourth-order composite rule over the whole grid.
pub fn composite_weights(n_nodes: usize, h: f64) -> Vec<f64> {
    let mut w = vec![0.0; n_nodes];
    if n_nodes < 2 {
        return w;
    }
    for i in 0..n_nodes - 1 {
        let (first, st) = interval_stencil(n_nodes, i, h);
        for (j, c) in st.iter().enumerate() {
            w[first + j] += c;
        }
    }
    w
}

pub fn integrate(values: &[f64], h: f64) -> f64 {
    composite_weights(values.len(), h).iter().zip(values).map(|(w, v)| w * v).sum()
}

/// `out[k] = int_{t_k}^{t_end} f`, fourth order.
pub fn tail_integrals(values: &[f64], h: f64) -> Vec<f64> {
    let n = values.len();
    let mut out = vec![0.0; n];
    for i in (0..n.saturating_sub(1)).rev() {
        let (first, st) = interval_stencil(n, i, h);
        let piece: f64 = st.iter().enumerate().map(|(j, c)| c * values[first + j]).sum();
        out[i] = out[i + 1] + piece;
    }
    out
}
