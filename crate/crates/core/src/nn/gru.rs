//! Gated recurrent unit layer.
//!
//! ```text
//! z_t = sigmoid(W_z u_t + U_z h_{t-1} + b_z)
//! r_t = sigmoid(W_r u_t + U_r h_{t-1} + b_r)
//! c_t = tanh(W_h u_t + U_h (r_t ⊙ h_{t-1}) + b_h)
//! h_t = (1 - z_t) ⊙ h_{t-1} + z_t ⊙ c_t
//! ```
//!
//! One bias per gate, `h_0 = 0`.

use rand::Rng;

use super::{check_len, sigmoid, xavier_uniform_init, Matrix};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct GruLayer {
    pub w_z: Matrix,
    pub u_z: Matrix,
    pub b_z: Vec<f64>,
    pub w_r: Matrix,
    pub u_r: Matrix,
    pub b_r: Vec<f64>,
    pub w_h: Matrix,
    pub u_h: Matrix,
    pub b_h: Vec<f64>,
}

/// Per-step activations kept for backpropagation through time.
#[derive(Clone, Debug, Default)]
pub struct GruCache {
    pub inputs: Vec<Vec<f64>>,
    /// `h_0 ..= h_T`; `states[t]` is the state before step `t`.
    pub states: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
    r: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    rh: Vec<Vec<f64>>,
}

impl GruCache {
    /// Hidden outputs `h_1 ..= h_T`.
    pub fn outputs(&self) -> &[Vec<f64>] {
        &self.states[1..]
    }
}

impl GruLayer {
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        GruLayer {
            w_z: xavier_uniform_init(hidden, input, rng),
            u_z: xavier_uniform_init(hidden, hidden, rng),
            b_z: vec![0.0; hidden],
            w_r: xavier_uniform_init(hidden, input, rng),
            u_r: xavier_uniform_init(hidden, hidden, rng),
            b_r: vec![0.0; hidden],
            w_h: xavier_uniform_init(hidden, input, rng),
            u_h: xavier_uniform_init(hidden, hidden, rng),
            b_h: vec![0.0; hidden],
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        GruLayer {
            w_z: Matrix::zeros(hidden, input),
            u_z: Matrix::zeros(hidden, hidden),
            b_z: vec![0.0; hidden],
            w_r: Matrix::zeros(hidden, input),
            u_r: Matrix::zeros(hidden, hidden),
            b_r: vec![0.0; hidden],
            w_h: Matrix::zeros(hidden, input),
            u_h: Matrix::zeros(hidden, hidden),
            b_h: vec![0.0; hidden],
        }
    }

    pub fn input_size(&self) -> usize {
        self.w_z.cols
    }

    pub fn hidden_size(&self) -> usize {
        self.w_z.rows
    }

    pub fn zeros_like(&self) -> Self {
        GruLayer::zeros(self.input_size(), self.hidden_size())
    }

    /// `3 (in·h + h² + h)`.
    pub fn param_count(&self) -> usize {
        let (i, h) = (self.input_size(), self.hidden_size());
        3 * (i * h + h * h + h)
    }

    /// Parameter blocks in manifest order.
    pub(crate) fn blocks(&self) -> [(&'static str, (usize, usize), &[f64]); 9] {
        let (i, h) = (self.input_size(), self.hidden_size());
        [
            ("w_z", (h, i), &self.w_z.data),
            ("u_z", (h, h), &self.u_z.data),
            ("b_z", (h, 1), &self.b_z),
            ("w_r", (h, i), &self.w_r.data),
            ("u_r", (h, h), &self.u_r.data),
            ("b_r", (h, 1), &self.b_r),
            ("w_h", (h, i), &self.w_h.data),
            ("u_h", (h, h), &self.u_h.data),
            ("b_h", (h, 1), &self.b_h),
        ]
    }

    pub(crate) fn blocks_mut(&mut self) -> [&mut [f64]; 9] {
        [
            &mut self.w_z.data,
            &mut self.u_z.data,
            &mut self.b_z,
            &mut self.w_r.data,
            &mut self.u_r.data,
            &mut self.b_r,
            &mut self.w_h.data,
            &mut self.u_h.data,
            &mut self.b_h,
        ]
    }

    /// Runs the recursion over `inputs` from a zero state.
    pub fn forward(&self, inputs: Vec<Vec<f64>>) -> Result<GruCache> {
        let h = self.hidden_size();
        let steps = inputs.len();
        let mut cache = GruCache {
            states: Vec::with_capacity(steps + 1),
            z: Vec::with_capacity(steps),
            r: Vec::with_capacity(steps),
            c: Vec::with_capacity(steps),
            rh: Vec::with_capacity(steps),
            inputs: Vec::new(),
        };
        cache.states.push(vec![0.0; h]);
        for u in &inputs {
            check_len("gru input", self.input_size(), u.len())?;
            let prev = cache.states.last().expect("initial state");

            let mut z = self.b_z.clone();
            self.w_z.matvec_add(u, &mut z);
            self.u_z.matvec_add(prev, &mut z);
            z.iter_mut().for_each(|v| *v = sigmoid(*v));

            let mut r = self.b_r.clone();
            self.w_r.matvec_add(u, &mut r);
            self.u_r.matvec_add(prev, &mut r);
            r.iter_mut().for_each(|v| *v = sigmoid(*v));

            let rh: Vec<f64> = r.iter().zip(prev).map(|(a, b)| a * b).collect();
            let mut c = self.b_h.clone();
            self.w_h.matvec_add(u, &mut c);
            self.u_h.matvec_add(&rh, &mut c);
            c.iter_mut().for_each(|v| *v = v.tanh());

            let next: Vec<f64> = (0..h).map(|k| (1.0 - z[k]) * prev[k] + z[k] * c[k]).collect();
            cache.z.push(z);
            cache.r.push(r);
            cache.c.push(c);
            cache.rh.push(rh);
            cache.states.push(next);
        }
        cache.inputs = inputs;
        Ok(cache)
    }

    /// Backpropagation through time.
    ///
    /// `d_outputs[t]` is `dL/dh_{t+1}` from the layer above. Parameter
    /// gradients are accumulated into `grads`; the returned vectors are
    /// `dL/du_t` for the layer below.
    pub fn backward(&self, cache: &GruCache, d_outputs: &[Vec<f64>], grads: &mut GruLayer) -> Vec<Vec<f64>> {
        let h = self.hidden_size();
        let steps = cache.inputs.len();
        let mut d_inputs = vec![vec![0.0; self.input_size()]; steps];
        let mut dh_next = vec![0.0; h];
        let mut da_z = vec![0.0; h];
        let mut da_r = vec![0.0; h];
        let mut da_c = vec![0.0; h];
        let mut d_rh = vec![0.0; h];

        for t in (0..steps).rev() {
            let u = &cache.inputs[t];
            let prev = &cache.states[t];
            let (z, r, c) = (&cache.z[t], &cache.r[t], &cache.c[t]);
            let dh: Vec<f64> = dh_next.iter().zip(&d_outputs[t]).map(|(a, b)| a + b).collect();

            let mut dprev = vec![0.0; h];
            for k in 0..h {
                dprev[k] = dh[k] * (1.0 - z[k]);
                let dc = dh[k] * z[k];
                let dz = dh[k] * (c[k] - prev[k]);
                da_c[k] = dc * (1.0 - c[k] * c[k]);
                da_z[k] = dz * z[k] * (1.0 - z[k]);
            }

            // Candidate path.
            grads.w_h.outer_add(&da_c, u);
            grads.u_h.outer_add(&da_c, &cache.rh[t]);
            add_into(&mut grads.b_h, &da_c);
            d_rh.iter_mut().for_each(|v| *v = 0.0);
            self.u_h.matvec_t_add(&da_c, &mut d_rh);
            for k in 0..h {
                dprev[k] += d_rh[k] * r[k];
                da_r[k] = d_rh[k] * prev[k] * r[k] * (1.0 - r[k]);
            }

            grads.w_r.outer_add(&da_r, u);
            grads.u_r.outer_add(&da_r, prev);
            add_into(&mut grads.b_r, &da_r);

            grads.w_z.outer_add(&da_z, u);
            grads.u_z.outer_add(&da_z, prev);
            add_into(&mut grads.b_z, &da_z);

            self.u_r.matvec_t_add(&da_r, &mut dprev);
            self.u_z.matvec_t_add(&da_z, &mut dprev);

            let du = &mut d_inputs[t];
            self.w_h.matvec_t_add(&da_c, du);
            self.w_r.matvec_t_add(&da_r, du);
            self.w_z.matvec_t_add(&da_z, du);

            dh_next = dprev;
        }
        d_inputs
    }
}

fn add_into(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}
