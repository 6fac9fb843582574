//! Adaptive-moment optimizer state, in a dense per-tensor flavor and a lazy
//! per-row flavor for subgraph SGD.

use ndarray::{Array1, Array2};

#[derive(Debug, Clone, Copy)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            lr: 0.03,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment buffers for one dense tensor, flattened to a vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    /// One update over a full tensor; params and grad iterate in lockstep.
    pub fn step<'a, P, G>(&mut self, p: &AdamParams, params: P, grads: G)
    where
        P: Iterator<Item = &'a mut f64>,
        G: Iterator<Item = f64>,
    {
        self.t += 1;
        let bc1 = 1.0 - p.beta1.powi(self.t as i32);
        let bc2 = 1.0 - p.beta2.powi(self.t as i32);
        for (idx, (w, g)) in params.zip(grads).enumerate() {
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            *m = p.beta1 * *m + (1.0 - p.beta1) * g;
            *v = p.beta2 * *v + (1.0 - p.beta2) * g * g;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            *w -= p.lr * mhat / (vhat.sqrt() + p.eps);
        }
    }

    pub fn step_array2(&mut self, p: &AdamParams, params: &mut Array2<f64>, grads: &Array2<f64>) {
        self.step(p, params.iter_mut(), grads.iter().copied());
    }

    pub fn step_array1(&mut self, p: &AdamParams, params: &mut Array1<f64>, grads: &Array1<f64>) {
        self.step(p, params.iter_mut(), grads.iter().copied());
    }
}

/// Row-wise moment buffers with per-row step counters. Only rows that are
/// touched pay any cost; untouched rows keep their parameters bit-identical.
#[derive(Debug, Clone)]
pub struct RowAdamState {
    m: Array2<f64>,
    v: Array2<f64>,
    t: Vec<u64>,
}

impl RowAdamState {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            m: Array2::zeros((rows, cols)),
            v: Array2::zeros((rows, cols)),
            t: vec![0; rows],
        }
    }

    /// Update a single row with its gradient slice.
    pub fn step_row(&mut self, p: &AdamParams, row: usize, params: &mut Array2<f64>, grad: &[f64]) {
        self.t[row] += 1;
        let t = self.t[row];
        let bc1 = 1.0 - p.beta1.powi(t as i32);
        let bc2 = 1.0 - p.beta2.powi(t as i32);
        for (k, &g) in grad.iter().enumerate() {
            let m = &mut self.m[[row, k]];
            let v = &mut self.v[[row, k]];
            *m = p.beta1 * *m + (1.0 - p.beta1) * g;
            *v = p.beta2 * *v + (1.0 - p.beta2) * g * g;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            params[[row, k]] -= p.lr * mhat / (vhat.sqrt() + p.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_gradient_is_noop() {
        let p = AdamParams::default();
        let mut st = AdamState::new(2);
        let mut w = array![[1.0, -2.0]];
        let g = array![[0.0, 0.0]];
        st.step_array2(&p, &mut w, &g);
        assert_eq!(w, array![[1.0, -2.0]]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // With fresh moments the bias-corrected update is lr * sign(g) up to eps.
        let p = AdamParams {
            lr: 0.1,
            ..Default::default()
        };
        let mut st = AdamState::new(1);
        let mut w = array![0.0];
        let g = array![3.0];
        st.step_array1(&p, &mut w, &g);
        assert!((w[0] + 0.1).abs() < 1e-6);
    }

    #[test]
    fn row_state_matches_dense_on_always_sampled_row() {
        let p = AdamParams::default();
        let mut dense = AdamState::new(3);
        let mut lazy = RowAdamState::new(2, 3);
        let mut w_dense = array![[0.5, -0.5, 1.0]];
        let mut w_lazy = array![[0.5, -0.5, 1.0], [9.0, 9.0, 9.0]];
        for step in 0..10 {
            let g = [0.1 * (step as f64 + 1.0), -0.2, 0.05];
            let ga = array![[g[0], g[1], g[2]]];
            dense.step_array2(&p, &mut w_dense, &ga);
            lazy.step_row(&p, 0, &mut w_lazy, &g);
        }
        for k in 0..3 {
            assert!((w_dense[[0, k]] - w_lazy[[0, k]]).abs() < 1e-15);
            assert_eq!(w_lazy[[1, k]], 9.0);
        }
    }
}
