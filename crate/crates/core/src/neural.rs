//! Dense feed-forward networks with reverse-mode gradients and Adam.
//!
//! Parameters live in one flat `Vec<f64>`: for each layer the weight matrix
//! (row-major, one row per output unit) followed by the bias vector. Adam,
//! gradient clipping, soft target updates and the snapshot format all work
//! on that flat view.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("network shapes differ")]
    ShapeMismatch,
    #[error("bad snapshot: {0}")]
    BadSnapshot(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative given the pre-activation and the activation output.
    pub fn derivative(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => post * (1.0 - post),
            Activation::Tanh => 1.0 - post * post,
        }
    }

    fn tag(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Sigmoid => 2,
            Activation::Tanh => 3,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => Activation::Identity,
            1 => Activation::Relu,
            2 => Activation::Sigmoid,
            3 => Activation::Tanh,
            _ => return None,
        })
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseNet {
    sizes: Vec<usize>,
    acts: Vec<Activation>,
    params: Vec<f64>,
    /// Start of each layer's weights in `params`.
    offsets: Vec<usize>,
}

/// Intermediate values of one forward pass over a batch of rows, needed by
/// the reverse pass. Every buffer is row-major with `rows` rows.
#[derive(Clone, Debug, Default)]
pub struct Trace {
    pub rows: usize,
    /// `values[0]` is the input, `values[l + 1]` the output of layer `l`.
    pub values: Vec<Vec<f64>>,
    /// Pre-activations of each layer.
    pub pre: Vec<Vec<f64>>,
}

impl Trace {
    /// Output of the last layer, all rows.
    pub fn output(&self) -> &[f64] {
        self.values.last().expect("trace has an input")
    }
}

/// `c ← a·bᵀ + beta·c` for row-major `a` (m×k), `b` (n×k), `c` (m×n).
fn gemm_abt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], beta: f64, c: &mut [f64]) {
    debug_assert!(a.len() >= m * k && b.len() >= n * k && c.len() >= m * n);
    // SAFETY: the slices cover every index reached through the given strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `c ← aᵀ·b + beta·c` for row-major `a` (k×m), `b` (k×n), `c` (m×n).
fn gemm_atb(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], beta: f64, c: &mut [f64]) {
    debug_assert!(a.len() >= m * k && b.len() >= n * k && c.len() >= m * n);
    // SAFETY: as above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            1,
            m as isize,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `c ← a·b` for row-major `a` (m×k), `b` (k×n), `c` (m×n).
fn gemm_ab(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert!(a.len() >= m * k && b.len() >= n * k && c.len() >= m * n);
    // SAFETY: as above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn layout(sizes: &[usize]) -> (Vec<usize>, usize) {
    let mut offsets = Vec::with_capacity(sizes.len().saturating_sub(1));
    let mut total = 0;
    for w in sizes.windows(2) {
        offsets.push(total);
        total += w[0] * w[1] + w[1];
    }
    (offsets, total)
}

impl DenseNet {
    /// All-zero network.
    pub fn zeros(sizes: &[usize], acts: &[Activation]) -> Self {
        assert!(
            sizes.len() >= 2,
            "need at least an input and an output layer"
        );
        assert_eq!(acts.len(), sizes.len() - 1, "one activation per layer");
        let (offsets, total) = layout(sizes);
        Self {
            sizes: sizes.to_vec(),
            acts: acts.to_vec(),
            params: vec![0.0; total],
            offsets,
        }
    }

    /// Weights and biases uniform in `±1/sqrt(fan_in)`.
    pub fn new(sizes: &[usize], acts: &[Activation], rng: &mut impl Rng) -> Self {
        let mut net = Self::zeros(sizes, acts);
        for l in 0..net.num_layers() {
            let fan_in = net.sizes[l];
            let bound = 1.0 / (fan_in as f64).sqrt();
            let start = net.offsets[l];
            let end = start + fan_in * net.sizes[l + 1] + net.sizes[l + 1];
            for p in &mut net.params[start..end] {
                *p = rng.random_range(-bound..bound);
            }
        }
        net
    }

    /// Hidden layers use `hidden_act`, the output layer `out_act`.
    pub fn mlp(
        input: usize,
        hidden: &[usize],
        output: usize,
        hidden_act: Activation,
        out_act: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        let mut acts = vec![hidden_act; hidden.len()];
        acts.push(out_act);
        Self::new(&sizes, &acts, rng)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activations(&self) -> &[Activation] {
        &self.acts
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn same_shape(&self, other: &DenseNet) -> bool {
        self.sizes == other.sizes && self.acts == other.acts
    }

    fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let (i, o) = (self.sizes[l], self.sizes[l + 1]);
        let start = self.offsets[l];
        let w = &self.params[start..start + i * o];
        let b = &self.params[start + i * o..start + i * o + o];
        (w, b)
    }

    /// Weight matrix of layer `l`, row-major with one row per output unit.
    pub fn weights(&self, l: usize) -> &[f64] {
        self.layer(l).0
    }

    pub fn bias(&self, l: usize) -> &[f64] {
        self.layer(l).1
    }

    pub fn weights_mut(&mut self, l: usize) -> &mut [f64] {
        let (i, o) = (self.sizes[l], self.sizes[l + 1]);
        let start = self.offsets[l];
        &mut self.params[start..start + i * o]
    }

    pub fn bias_mut(&mut self, l: usize) -> &mut [f64] {
        let (i, o) = (self.sizes[l], self.sizes[l + 1]);
        let start = self.offsets[l] + i * o;
        &mut self.params[start..start + o]
    }

    fn check_rows(&self, input: &[f64], rows: usize) -> Result<(), NeuralError> {
        let expected = self.sizes[0] * rows;
        if input.len() != expected || rows == 0 {
            return Err(NeuralError::DimensionMismatch {
                expected,
                got: input.len(),
            });
        }
        Ok(())
    }

    /// Affine part of layer `l` applied to `rows` stacked inputs.
    fn affine(&self, l: usize, x: &[f64], rows: usize) -> Vec<f64> {
        let (w, b) = self.layer(l);
        let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
        let mut z = Vec::with_capacity(rows * n_out);
        for _ in 0..rows {
            z.extend_from_slice(b);
        }
        gemm_abt(rows, n_in, n_out, x, w, 1.0, &mut z);
        z
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NeuralError> {
        self.forward_batch(input, 1)
    }

    /// Forward pass over `rows` inputs stacked row-major; the result holds
    /// `rows × output_dim` values.
    pub fn forward_batch(&self, inputs: &[f64], rows: usize) -> Result<Vec<f64>, NeuralError> {
        self.check_rows(inputs, rows)?;
        let mut x = self.affine(0, inputs, rows);
        let mut l = 0;
        loop {
            let act = self.acts[l];
            x.iter_mut().for_each(|v| *v = act.apply(*v));
            l += 1;
            if l == self.num_layers() {
                return Ok(x);
            }
            x = self.affine(l, &x, rows);
        }
    }

    pub fn forward_trace(&self, input: &[f64]) -> Result<Trace, NeuralError> {
        self.forward_batch_trace(input, 1)
    }

    pub fn forward_batch_trace(&self, inputs: &[f64], rows: usize) -> Result<Trace, NeuralError> {
        self.check_rows(inputs, rows)?;
        let mut values = Vec::with_capacity(self.sizes.len());
        let mut pre_all = Vec::with_capacity(self.num_layers());
        values.push(inputs.to_vec());
        for l in 0..self.num_layers() {
            let pre = self.affine(l, &values[l], rows);
            let act = self.acts[l];
            let post = pre.iter().map(|&z| act.apply(z)).collect();
            pre_all.push(pre);
            values.push(post);
        }
        Ok(Trace {
            rows,
            values,
            pre: pre_all,
        })
    }

    /// Reverse pass. Adds `∂(upstream · output)/∂θ`, summed over the trace's
    /// rows, into `grad` (same layout as [`DenseNet::params`]) and returns
    /// the gradient with respect to the input, one row per trace row.
    pub fn backward_into(
        &self,
        trace: &Trace,
        upstream: &[f64],
        grad: &mut [f64],
    ) -> Result<Vec<f64>, NeuralError> {
        if grad.len() != self.params.len() {
            return Err(NeuralError::ShapeMismatch);
        }
        Ok(self
            .reverse(trace, upstream, Some(grad), true)?
            .unwrap_or_default())
    }

    /// Like [`DenseNet::backward_into`] without the input gradient.
    pub fn accumulate_param_grad(
        &self,
        trace: &Trace,
        upstream: &[f64],
        grad: &mut [f64],
    ) -> Result<(), NeuralError> {
        if grad.len() != self.params.len() {
            return Err(NeuralError::ShapeMismatch);
        }
        self.reverse(trace, upstream, Some(grad), false)?;
        Ok(())
    }

    /// Gradient of `upstream · output` with respect to the input only.
    pub fn input_gradient(&self, trace: &Trace, upstream: &[f64]) -> Result<Vec<f64>, NeuralError> {
        Ok(self
            .reverse(trace, upstream, None, true)?
            .unwrap_or_default())
    }

    fn reverse(
        &self,
        trace: &Trace,
        upstream: &[f64],
        mut grad: Option<&mut [f64]>,
        want_input: bool,
    ) -> Result<Option<Vec<f64>>, NeuralError> {
        let rows = trace.rows;
        if upstream.len() != self.output_dim() * rows {
            return Err(NeuralError::DimensionMismatch {
                expected: self.output_dim() * rows,
                got: upstream.len(),
            });
        }
        if trace.pre.len() != self.num_layers() || trace.values[0].len() != rows * self.input_dim()
        {
            return Err(NeuralError::ShapeMismatch);
        }
        let last = self.num_layers() - 1;
        let mut delta: Vec<f64> = upstream
            .iter()
            .zip(trace.pre[last].iter().zip(&trace.values[last + 1]))
            .map(|(&u, (&z, &a))| u * self.acts[last].derivative(z, a))
            .collect();
        for l in (0..self.num_layers()).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let x = &trace.values[l];
            let start = self.offsets[l];
            if let Some(grad) = grad.as_deref_mut() {
                let (gw, gb) = grad[start..start + n_in * n_out + n_out].split_at_mut(n_in * n_out);
                gemm_atb(n_out, rows, n_in, &delta, x, 1.0, gw);
                for row in delta.chunks_exact(n_out) {
                    for (g, &d) in gb.iter_mut().zip(row) {
                        *g += d;
                    }
                }
            }
            if l == 0 && !want_input {
                return Ok(None);
            }
            let mut prev = vec![0.0; rows * n_in];
            gemm_ab(rows, n_out, n_in, &delta, self.layer(l).0, &mut prev);
            if l > 0 {
                let act = self.acts[l - 1];
                for ((p, &z), &a) in prev.iter_mut().zip(&trace.pre[l - 1]).zip(&trace.values[l]) {
                    *p *= act.derivative(z, a);
                }
            }
            delta = prev;
        }
        Ok(Some(delta))
    }

    /// Parameter gradient and input gradient of `upstream · output`.
    pub fn backward(
        &self,
        trace: &Trace,
        upstream: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>), NeuralError> {
        let mut grad = vec![0.0; self.params.len()];
        let input_grad = self.backward_into(trace, upstream, &mut grad)?;
        Ok((grad, input_grad))
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// Binary snapshot, little endian throughout:
    ///
    /// ```text
    /// magic      8 bytes  "SATNNET1"
    /// n_sizes    u64
    /// sizes      n_sizes × u64
    /// acts       (n_sizes - 1) × u8   0 identity, 1 relu, 2 sigmoid, 3 tanh
    /// params     f64 × total          per layer: weights row-major, then biases
    /// ```
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> Result<(), NeuralError> {
        w.write_all(SNAPSHOT_MAGIC)?;
        w.write_all(&(self.sizes.len() as u64).to_le_bytes())?;
        for &s in &self.sizes {
            w.write_all(&(s as u64).to_le_bytes())?;
        }
        for a in &self.acts {
            w.write_all(&[a.tag()])?;
        }
        for p in &self.params {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_snapshot<R: Read>(mut r: R) -> Result<Self, NeuralError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != SNAPSHOT_MAGIC {
            return Err(NeuralError::BadSnapshot("wrong magic".into()));
        }
        let mut buf = [0u8; 8];
        r.read_exact(&mut buf)?;
        let n = u64::from_le_bytes(buf) as usize;
        if !(2..=64).contains(&n) {
            return Err(NeuralError::BadSnapshot(format!("{n} layer sizes")));
        }
        let mut sizes = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut buf)?;
            let s = u64::from_le_bytes(buf) as usize;
            if s == 0 || s > 1 << 20 {
                return Err(NeuralError::BadSnapshot(format!("layer size {s}")));
            }
            sizes.push(s);
        }
        let mut acts = Vec::with_capacity(n - 1);
        for _ in 0..n - 1 {
            let mut t = [0u8; 1];
            r.read_exact(&mut t)?;
            acts.push(
                Activation::from_tag(t[0])
                    .ok_or_else(|| NeuralError::BadSnapshot(format!("activation tag {}", t[0])))?,
            );
        }
        let mut net = Self::zeros(&sizes, &acts);
        for p in &mut net.params {
            r.read_exact(&mut buf)?;
            *p = f64::from_le_bytes(buf);
        }
        Ok(net)
    }
}

const SNAPSHOT_MAGIC: &[u8; 8] = b"SATNNET1";

/// Mean squared error and its gradient with respect to `pred`.
pub fn mse(pred: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let n = pred.len() as f64;
    let loss = pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t).powi(2))
        .sum::<f64>()
        / n;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| 2.0 * (p - t) / n)
        .collect();
    (loss, grad)
}

/// Rescales `grad` in place so its L2 norm is at most `max_norm`. Returns
/// the norm before clipping.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm.is_finite() {
        let scale = max_norm / norm;
        for g in grad.iter_mut() {
            *g *= scale;
        }
    }
    norm
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(num_params: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update of `params` along `-grad`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<(), NeuralError> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(NeuralError::ShapeMismatch);
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = flush(b1 * *m + (1.0 - b1) * g);
            *v = flush(b2 * *v + (1.0 - b2) * g * g);
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Flushes subnormals to zero.
#[inline]
fn flush(x: f64) -> f64 {
    if x.abs() < f64::MIN_POSITIVE {
        0.0
    } else {
        x
    }
}

/// Finite-difference gradient check. It only ever calls `forward`, so it is
/// independent of the reverse pass it validates.
pub mod gradcheck {
    use super::*;

    #[derive(Clone, Debug, Default, PartialEq)]
    pub struct GradCheckReport {
        /// Largest relative error over parameters and inputs.
        pub max_rel_error: f64,
        pub checked: usize,
        /// Coordinates skipped because ±h crossed a ReLU kink.
        pub skipped: usize,
    }

    pub fn rel_error(a: f64, b: f64) -> f64 {
        let scale = a.abs().max(b.abs());
        if scale < 1e-7 {
            (a - b).abs()
        } else {
            (a - b).abs() / scale
        }
    }

    fn relu_mask(net: &DenseNet, input: &[f64]) -> Vec<bool> {
        let t = net.forward_trace(input).expect("shape checked");
        t.pre.iter().flatten().map(|&z| z > 0.0).collect()
    }

    fn objective(net: &DenseNet, input: &[f64], weights: &[f64]) -> f64 {
        let out = net.forward(input).expect("shape checked");
        out.iter().zip(weights).map(|(o, w)| o * w).sum()
    }

    /// Compares `analytic` (parameter gradient then input gradient of
    /// `weights · net(input)`) with central differences of step `h`.
    pub fn check(
        net: &DenseNet,
        input: &[f64],
        weights: &[f64],
        analytic_params: &[f64],
        analytic_input: &[f64],
        h: f64,
    ) -> GradCheckReport {
        let mut report = GradCheckReport::default();
        let mut probe = net.clone();
        for i in 0..net.num_params() {
            let orig = probe.params[i];
            probe.params[i] = orig + h;
            let mask_p = relu_mask(&probe, input);
            let fp = objective(&probe, input, weights);
            probe.params[i] = orig - h;
            let mask_m = relu_mask(&probe, input);
            let fm = objective(&probe, input, weights);
            probe.params[i] = orig;
            if mask_p != mask_m {
                report.skipped += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * h);
            report.max_rel_error = report
                .max_rel_error
                .max(rel_error(analytic_params[i], numeric));
            report.checked += 1;
        }
        let mut x = input.to_vec();
        for i in 0..x.len() {
            let orig = x[i];
            x[i] = orig + h;
            let mask_p = relu_mask(net, &x);
            let fp = objective(net, &x, weights);
            x[i] = orig - h;
            let mask_m = relu_mask(net, &x);
            let fm = objective(net, &x, weights);
            x[i] = orig;
            if mask_p != mask_m {
                report.skipped += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * h);
            report.max_rel_error = report
                .max_rel_error
                .max(rel_error(analytic_input[i], numeric));
            report.checked += 1;
        }
        report
    }

    /// Runs [`check`] against the network's own reverse pass.
    pub fn check_net(net: &DenseNet, input: &[f64], weights: &[f64], h: f64) -> GradCheckReport {
        let trace = net.forward_trace(input).expect("input matches");
        let (gp, gi) = net.backward(&trace, weights).expect("weights match");
        check(net, input, weights, &gp, &gi, h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut net = DenseNet::zeros(&[3, 3], &[Activation::Identity]);
        for i in 0..3 {
            net.weights_mut(0)[i * 3 + i] = 1.0;
        }
        assert_eq!(
            net.forward(&[1.5, -2.0, 0.25]).unwrap(),
            vec![1.5, -2.0, 0.25]
        );
    }

    #[test]
    fn relu_and_bias_only() {
        let mut net = DenseNet::zeros(&[2, 2], &[Activation::Relu]);
        net.weights_mut(0).copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(net.forward(&[-1.0, 2.0]).unwrap(), vec![0.0, 2.0]);

        let mut z = DenseNet::zeros(&[4, 2], &[Activation::Sigmoid]);
        z.bias_mut(0).copy_from_slice(&[0.0, 3.0]);
        let out = z.forward(&[9.0, 9.0, 9.0, 9.0]).unwrap();
        assert_eq!(out, vec![0.5, sigmoid(3.0)]);
    }

    #[test]
    fn dimension_mismatch() {
        let net = DenseNet::zeros(&[2, 1], &[Activation::Identity]);
        assert!(matches!(
            net.forward(&[1.0]),
            Err(NeuralError::DimensionMismatch {
                expected: 2,
                got: 1
            })
        ));
        let t = net.forward_trace(&[1.0, 1.0]).unwrap();
        assert!(net.backward(&t, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn scalar_linear_derivative() {
        let mut net = DenseNet::zeros(&[1, 1], &[Activation::Identity]);
        net.weights_mut(0)[0] = 0.4;
        let t = net.forward_trace(&[3.0]).unwrap();
        let (g, gi) = net.backward(&t, &[1.0]).unwrap();
        assert_eq!(g, vec![3.0, 1.0]);
        assert_eq!(gi, vec![0.4]);
    }

    #[test]
    fn relu_blocks_gradient_when_inactive() {
        let mut net = DenseNet::zeros(&[1, 1, 1], &[Activation::Relu, Activation::Identity]);
        net.weights_mut(0)[0] = 1.0;
        net.bias_mut(0)[0] = -5.0;
        net.weights_mut(1)[0] = 2.0;
        let t = net.forward_trace(&[1.0]).unwrap();
        let (g, gi) = net.backward(&t, &[1.0]).unwrap();
        assert_eq!(&g[..2], &[0.0, 0.0]);
        assert_eq!(gi, vec![0.0]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut r = rng(5);
        for acts in [
            [Activation::Relu, Activation::Relu, Activation::Identity],
            [Activation::Tanh, Activation::Relu, Activation::Sigmoid],
        ] {
            let net = DenseNet::new(&[5, 16, 12, 3], &acts, &mut r);
            let input: Vec<f64> = (0..5).map(|_| r.random_range(-1.0..1.0)).collect();
            let w: Vec<f64> = (0..3).map(|_| r.random_range(-1.0..1.0)).collect();
            let rep = gradcheck::check_net(&net, &input, &w, 1e-5);
            assert!(rep.max_rel_error < 1e-4, "{rep:?}");
            assert!(rep.checked > net.num_params());
        }
    }

    #[test]
    fn batch_matches_rows() {
        let mut r = rng(31);
        let net = DenseNet::mlp(7, &[64, 64], 3, Activation::Relu, Activation::Tanh, &mut r);
        let rows = 10;
        let xs: Vec<f64> = (0..rows * 7).map(|_| r.random_range(-1.0..1.0)).collect();
        let up: Vec<f64> = (0..rows * 3).map(|_| r.random_range(-1.0..1.0)).collect();
        let batch = net.forward_batch(&xs, rows).unwrap();
        let trace = net.forward_batch_trace(&xs, rows).unwrap();
        assert_eq!(trace.output(), &batch[..]);
        let (g, gi) = net.backward(&trace, &up).unwrap();

        let mut g_rows = vec![0.0; net.num_params()];
        for i in 0..rows {
            let x = &xs[i * 7..(i + 1) * 7];
            let out = net.forward(x).unwrap();
            for (a, b) in out.iter().zip(&batch[i * 3..(i + 1) * 3]) {
                assert!((a - b).abs() < 1e-12);
            }
            let t = net.forward_trace(x).unwrap();
            let gi_row = net
                .backward_into(&t, &up[i * 3..(i + 1) * 3], &mut g_rows)
                .unwrap();
            for (a, b) in gi_row.iter().zip(&gi[i * 7..(i + 1) * 7]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        for (a, b) in g.iter().zip(&g_rows) {
            assert!((a - b).abs() < 1e-12);
        }
        let mut g_only = vec![0.0; net.num_params()];
        net.accumulate_param_grad(&trace, &up, &mut g_only).unwrap();
        assert_eq!(g_only, g);
        assert!(net.forward_batch(&xs, rows + 1).is_err());
    }

    #[test]
    fn adam_first_step_and_zero_grad() {
        let mut p = [0.0];
        let mut opt = AdamState::new(1, 0.001);
        opt.step(&mut p, &[1.0]).unwrap();
        assert!((p[0] + 0.001).abs() < 1e-9);

        let mut q = [0.3, -0.2];
        let mut opt = AdamState::new(2, 0.001);
        for _ in 0..10 {
            opt.step(&mut q, &[0.0, 0.0]).unwrap();
        }
        assert_eq!(q, [0.3, -0.2]);
        assert_eq!(opt.steps(), 10);
        assert!(opt.step(&mut q, &[0.0]).is_err());
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut r = rng(9);
            let mut p: Vec<f64> = (0..20).map(|_| r.random_range(-1.0..1.0)).collect();
            let mut opt = AdamState::new(20, 0.01);
            for _ in 0..50 {
                let g: Vec<f64> = p.iter().map(|x| 2.0 * x + 0.1).collect();
                opt.step(&mut p, &g).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn adam_fits_a_regression_batch() {
        let mut r = rng(17);
        let mut net = DenseNet::mlp(
            3,
            &[64, 64],
            1,
            Activation::Relu,
            Activation::Identity,
            &mut r,
        );
        let xs: Vec<Vec<f64>> = (0..10)
            .map(|_| (0..3).map(|_| r.random_range(-1.0..1.0)).collect())
            .collect();
        let ys: Vec<f64> = xs.iter().map(|x| x[0] - 0.5 * x[1] * x[2] + 0.3).collect();
        let loss = |net: &DenseNet| {
            xs.iter()
                .zip(&ys)
                .map(|(x, y)| (net.forward(x).unwrap()[0] - y).powi(2))
                .sum::<f64>()
                / xs.len() as f64
        };
        let initial = loss(&net);
        let mut opt = AdamState::new(net.num_params(), 0.001);
        for _ in 0..200 {
            let mut g = vec![0.0; net.num_params()];
            for (x, y) in xs.iter().zip(&ys) {
                let t = net.forward_trace(x).unwrap();
                let d = 2.0 * (t.output()[0] - y) / xs.len() as f64;
                net.backward_into(&t, &[d], &mut g).unwrap();
            }
            opt.step(net.params_mut(), &g).unwrap();
        }
        assert!(loss(&net) < 0.1 * initial, "{} vs {}", loss(&net), initial);
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut g = vec![30.0, 40.0];
        assert_eq!(clip_grad_norm(&mut g, 10.0), 50.0);
        assert!((g[0] - 6.0).abs() < 1e-12 && (g[1] - 8.0).abs() < 1e-12);
        let mut small = vec![0.1, 0.2];
        clip_grad_norm(&mut small, 10.0);
        assert_eq!(small, vec![0.1, 0.2]);
    }

    #[test]
    fn long_clipped_training_stays_finite() {
        let mut r = rng(23);
        let mut net = DenseNet::mlp(2, &[8], 1, Activation::Relu, Activation::Identity, &mut r);
        let mut opt = AdamState::new(net.num_params(), 0.001);
        for i in 0..100_000u32 {
            let x = [((i % 17) as f64) - 8.0, ((i % 5) as f64) * 100.0];
            let y = if i % 2 == 0 { 1e6 } else { -1e6 };
            let t = net.forward_trace(&x).unwrap();
            let (_, mut g) = {
                let (l, g) = mse(t.output(), &[y]);
                (l, net.backward(&t, &g).unwrap().0)
            };
            clip_grad_norm(&mut g, 10.0);
            opt.step(net.params_mut(), &g).unwrap();
        }
        assert!(net.is_finite());
    }

    #[test]
    fn snapshot_round_trip() {
        let net = DenseNet::mlp(
            4,
            &[6, 5],
            2,
            Activation::Relu,
            Activation::Sigmoid,
            &mut rng(1),
        );
        let mut bytes = Vec::new();
        net.write_snapshot(&mut bytes).unwrap();
        assert_eq!(&bytes[..8], b"SATNNET1");
        assert_eq!(bytes.len(), 8 + 8 + 4 * 8 + 3 + 8 * net.num_params());
        let back = DenseNet::read_snapshot(&bytes[..]).unwrap();
        assert_eq!(back, net);
        assert!(DenseNet::read_snapshot(&bytes[..20]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(DenseNet::read_snapshot(&bad[..]).is_err());
    }

    #[test]
    fn mse_gradient() {
        let (l, g) = mse(&[1.0, 3.0], &[0.0, 1.0]);
        assert_eq!(l, 2.5);
        assert_eq!(g, vec![1.0, 2.0]);
    }
}
