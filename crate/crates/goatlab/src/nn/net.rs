//! Dense feed-forward networks with reverse-mode gradients.
//!
//! Parameters are `f64` throughout and every operation runs in a fixed
//! sequential order, so results are bit-reproducible for a given seed.
//! Batched entry points are the primary API; the single-sample forms are
//! thin wrappers with identical semantics.

use rand::distributions::{Distribution, Uniform};
use rand_chacha::ChaCha12Rng;
use rand_chacha::rand_core::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::derive_seed;

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

/// Nonlinearity applied to the final layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Identity,
    Tanh,
    /// Clamp outputs to `[lo, hi]`; gradient passes through inside the
    /// interval (inclusive) and is zero where the clamp is active.
    Clip { lo: f64, hi: f64 },
}

/// Fully connected network: `layer_sizes = [in, h1, ..., out]`.
///
/// Layer `k` stores its weight matrix row-major as `out_k x in_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layer_sizes: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    hidden: Vec<Activation>,
    output: OutputActivation,
}

/// Parameter-shaped gradient (or moment) buffers mirroring a `Network`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl ParamGrads {
    pub fn zeros_like(net: &Network) -> Self {
        ParamGrads {
            weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    /// `self += factor * other`; shapes must match.
    pub fn scaled_add(&mut self, other: &ParamGrads, factor: f64) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            axpy(factor, b, a);
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            axpy(factor, b, a);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for w in &mut self.weights {
            for v in w.iter_mut() {
                *v *= factor;
            }
        }
        for b in &mut self.biases {
            for v in b.iter_mut() {
                *v *= factor;
            }
        }
    }

    /// Largest absolute entry; useful for divergence diagnostics.
    pub fn max_abs(&self) -> f64 {
        let mut m = 0.0f64;
        for w in self.weights.iter().chain(self.biases.iter()) {
            for &v in w {
                m = m.max(v.abs());
            }
        }
        m
    }
}

/// Fixed-order dot product with four independent accumulator lanes, which
/// lets the compiler vectorize without changing the summation order
/// between runs.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let (a4, a_rest) = a.split_at(a.len() - a.len() % 4);
    let (b4, b_rest) = b.split_at(a4.len());
    for (ca, cb) in a4.chunks_exact(4).zip(b4.chunks_exact(4)) {
        acc[0] += ca[0] * cb[0];
        acc[1] += ca[1] * cb[1];
        acc[2] += ca[2] * cb[2];
        acc[3] += ca[3] * cb[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in a_rest.iter().zip(b_rest) {
        s += x * y;
    }
    s
}

/// `y += alpha * x` elementwise.
#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

impl Network {
    /// Build a network with scaled-uniform weight init,
    /// `U(-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out)))`, zero biases.
    ///
    /// The same `(layer_sizes, activations, seed)` always yields identical
    /// parameters.
    pub fn new(
        layer_sizes: &[usize],
        hidden: Activation,
        output: OutputActivation,
        seed: u64,
    ) -> Result<Network> {
        validate_sizes(layer_sizes)?;
        if let OutputActivation::Clip { lo, hi } = output {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::config(format!(
                    "clip output bounds must be finite with lo < hi, got [{lo}, {hi}]"
                )));
            }
        }
        let n_layers = layer_sizes.len() - 1;
        let mut weights = Vec::with_capacity(n_layers);
        let mut biases = Vec::with_capacity(n_layers);
        for k in 0..n_layers {
            let (fan_in, fan_out) = (layer_sizes[k], layer_sizes[k + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit);
            let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, 0xA11 + k as u64));
            let w: Vec<f64> = (0..fan_in * fan_out).map(|_| dist.sample(&mut rng)).collect();
            weights.push(w);
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Network {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            hidden: vec![hidden; n_layers.saturating_sub(1)],
            output,
        })
    }

    /// Assemble a network from explicit parameters (tests, checkpoints).
    pub fn from_parts(
        layer_sizes: Vec<usize>,
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
        hidden: Vec<Activation>,
        output: OutputActivation,
    ) -> Result<Network> {
        validate_sizes(&layer_sizes)?;
        let n_layers = layer_sizes.len() - 1;
        if weights.len() != n_layers || biases.len() != n_layers {
            return Err(Error::shape(format!(
                "expected {n_layers} weight/bias layers, got {}/{}",
                weights.len(),
                biases.len()
            )));
        }
        if hidden.len() != n_layers - 1 {
            return Err(Error::shape(format!(
                "expected {} hidden activation tags, got {}",
                n_layers - 1,
                hidden.len()
            )));
        }
        for k in 0..n_layers {
            let (fan_in, fan_out) = (layer_sizes[k], layer_sizes[k + 1]);
            if weights[k].len() != fan_in * fan_out {
                return Err(Error::shape(format!(
                    "layer {k}: weight length {} != {fan_out}x{fan_in}",
                    weights[k].len()
                )));
            }
            if biases[k].len() != fan_out {
                return Err(Error::shape(format!(
                    "layer {k}: bias length {} != {fan_out}",
                    biases[k].len()
                )));
            }
        }
        Ok(Network { layer_sizes, weights, biases, hidden, output })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }
    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }
    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }
    pub fn hidden_activations(&self) -> &[Activation] {
        &self.hidden
    }
    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }
    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }
    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }
    pub(crate) fn params_mut(&mut self) -> (&mut Vec<Vec<f64>>, &mut Vec<Vec<f64>>) {
        (&mut self.weights, &mut self.biases)
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    fn check_input(&self, xs: &[f64], batch: usize) -> Result<()> {
        if batch == 0 {
            return Err(Error::shape("batch size must be positive".to_string()));
        }
        if xs.len() != batch * self.input_dim() {
            return Err(Error::shape(format!(
                "input length {} != batch {batch} x input dim {}",
                xs.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Batched forward pass; `xs` is row-major `batch x input_dim`.
    /// Returns row-major `batch x output_dim`.
    pub fn forward_batch(&self, xs: &[f64], batch: usize) -> Result<Vec<f64>> {
        self.check_input(xs, batch)?;
        let mut a = xs.to_vec();
        let n_layers = self.weights.len();
        for k in 0..n_layers {
            let z = self.affine(k, &a, batch);
            a = z;
            if k + 1 < n_layers {
                apply_hidden(self.hidden[k], &mut a);
            } else {
                apply_output(self.output, &mut a);
            }
        }
        Ok(a)
    }

    /// Single-sample forward pass.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.forward_batch(x, 1)
    }

    fn affine(&self, k: usize, a: &[f64], batch: usize) -> Vec<f64> {
        let in_dim = self.layer_sizes[k];
        let out_dim = self.layer_sizes[k + 1];
        let w = &self.weights[k];
        let b = &self.biases[k];
        let mut z = vec![0.0; batch * out_dim];
        for bi in 0..batch {
            let xrow = &a[bi * in_dim..(bi + 1) * in_dim];
            let zrow = &mut z[bi * out_dim..(bi + 1) * out_dim];
            for (o, zo) in zrow.iter_mut().enumerate() {
                *zo = dot(&w[o * in_dim..(o + 1) * in_dim], xrow) + b[o];
            }
        }
        z
    }

    /// Batched reverse-mode pass. `upstream` is `d(scalar loss)/d(output)`,
    /// row-major `batch x output_dim`; the result accumulates over the batch,
    /// i.e. it is the gradient of `sum_b upstream_b . output_b`.
    pub fn backward_batch(&self, xs: &[f64], batch: usize, upstream: &[f64]) -> Result<ParamGrads> {
        Ok(self.backprop(xs, batch, upstream, false)?.0)
    }

    /// Forward pass plus backward pass in one sweep: `make_upstream` receives
    /// the outputs (`batch x output_dim`) and returns the loss gradient with
    /// respect to them. Saves recomputing the forward activations.
    pub fn forward_backward_batch<F>(
        &self,
        xs: &[f64],
        batch: usize,
        make_upstream: F,
    ) -> Result<(Vec<f64>, ParamGrads)>
    where
        F: FnOnce(&[f64]) -> Vec<f64>,
    {
        let (outputs, grads, _) = self.backprop_with(xs, batch, make_upstream, false)?;
        Ok((outputs, grads))
    }

    /// Single-sample reverse-mode pass.
    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<ParamGrads> {
        self.backward_batch(x, 1, upstream)
    }

    /// As [`backward_batch`](Self::backward_batch), but also returns the
    /// gradient with respect to the inputs (`batch x input_dim`). Needed by
    /// policy objectives that differentiate a critic through its action input.
    pub fn backward_batch_with_input_grad(
        &self,
        xs: &[f64],
        batch: usize,
        upstream: &[f64],
    ) -> Result<(ParamGrads, Vec<f64>)> {
        let (grads, dx) = self.backprop(xs, batch, upstream, true)?;
        Ok((grads, dx.unwrap()))
    }

    fn backprop(
        &self,
        xs: &[f64],
        batch: usize,
        upstream: &[f64],
        want_input_grad: bool,
    ) -> Result<(ParamGrads, Option<Vec<f64>>)> {
        let (_, grads, dx) =
            self.backprop_with(xs, batch, |_| upstream.to_vec(), want_input_grad)?;
        Ok((grads, dx))
    }

    fn backprop_with<F>(
        &self,
        xs: &[f64],
        batch: usize,
        make_upstream: F,
        want_input_grad: bool,
    ) -> Result<(Vec<f64>, ParamGrads, Option<Vec<f64>>)>
    where
        F: FnOnce(&[f64]) -> Vec<f64>,
    {
        self.check_input(xs, batch)?;
        let n_layers = self.weights.len();

        // Forward, caching each layer input and the output pre-activation.
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(n_layers + 1);
        acts.push(xs.to_vec());
        let mut last_z = Vec::new();
        for k in 0..n_layers {
            let mut z = self.affine(k, &acts[k], batch);
            if k + 1 < n_layers {
                apply_hidden(self.hidden[k], &mut z);
                acts.push(z);
            } else {
                last_z = z.clone();
                apply_output(self.output, &mut z);
                acts.push(z);
            }
        }

        let upstream = make_upstream(acts.last().unwrap());
        if upstream.len() != batch * self.output_dim() {
            return Err(Error::shape(format!(
                "upstream length {} != batch {batch} x output dim {}",
                upstream.len(),
                self.output_dim()
            )));
        }
        let mut grads = ParamGrads::zeros_like(self);
        // Delta at the output layer.
        let mut delta: Vec<f64> = upstream
            .iter()
            .zip(last_z.iter())
            .map(|(&u, &z)| u * output_deriv(self.output, z))
            .collect();

        let mut input_grad = None;
        for k in (0..n_layers).rev() {
            let in_dim = self.layer_sizes[k];
            let out_dim = self.layer_sizes[k + 1];
            let x = &acts[k];
            let (dw, db) = (&mut grads.weights[k], &mut grads.biases[k]);
            for bi in 0..batch {
                let drow = &delta[bi * out_dim..(bi + 1) * out_dim];
                let xrow = &x[bi * in_dim..(bi + 1) * in_dim];
                for (o, &d) in drow.iter().enumerate() {
                    axpy(d, xrow, &mut dw[o * in_dim..(o + 1) * in_dim]);
                    db[o] += d;
                }
            }
            if k == 0 && !want_input_grad {
                break;
            }
            // d(lower activation) = delta . W
            let w = &self.weights[k];
            let mut dx = vec![0.0; batch * in_dim];
            for bi in 0..batch {
                let drow = &delta[bi * out_dim..(bi + 1) * out_dim];
                let dxrow = &mut dx[bi * in_dim..(bi + 1) * in_dim];
                for (o, &d) in drow.iter().enumerate() {
                    axpy(d, &w[o * in_dim..(o + 1) * in_dim], dxrow);
                }
            }
            if k == 0 {
                input_grad = Some(dx);
            } else {
                // Through the hidden nonlinearity, using its activation value.
                let act = self.hidden[k - 1];
                for (dv, &av) in dx.iter_mut().zip(acts[k].iter()) {
                    *dv *= hidden_deriv_from_act(act, av);
                }
                delta = dx;
            }
        }
        let outputs = acts.pop().unwrap();
        Ok((outputs, grads, input_grad))
    }
}

fn validate_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::config(format!(
            "need at least input and output layer sizes, got {layer_sizes:?}"
        )));
    }
    if layer_sizes.iter().any(|&s| s == 0) {
        return Err(Error::config(format!("layer sizes must be positive, got {layer_sizes:?}")));
    }
    Ok(())
}

fn apply_hidden(act: Activation, z: &mut [f64]) {
    match act {
        Activation::Tanh => {
            for v in z.iter_mut() {
                *v = v.tanh();
            }
        }
        Activation::Relu => {
            for v in z.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
    }
}

/// Derivative of a hidden activation expressed through its output value.
/// For relu the kink at zero takes derivative zero.
fn hidden_deriv_from_act(act: Activation, a: f64) -> f64 {
    match act {
        Activation::Tanh => 1.0 - a * a,
        Activation::Relu => {
            if a > 0.0 {
                1.0
            } else {
                0.0
            }
        }
    }
}

fn apply_output(out: OutputActivation, z: &mut [f64]) {
    match out {
        OutputActivation::Identity => {}
        OutputActivation::Tanh => {
            for v in z.iter_mut() {
                *v = v.tanh();
            }
        }
        OutputActivation::Clip { lo, hi } => {
            for v in z.iter_mut() {
                *v = v.clamp(lo, hi);
            }
        }
    }
}

fn output_deriv(out: OutputActivation, z: f64) -> f64 {
    match out {
        OutputActivation::Identity => 1.0,
        OutputActivation::Tanh => {
            let t = z.tanh();
            1.0 - t * t
        }
        OutputActivation::Clip { lo, hi } => {
            if (lo..=hi).contains(&z) {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// Central-difference gradient of `loss_fn(forward(x))` with respect to every
/// parameter. Slow by construction; used as the oracle for the analytic
/// backward pass. `h` must be positive.
pub fn finite_diff_grad<F>(net: &Network, x: &[f64], loss_fn: F, h: f64) -> Result<ParamGrads>
where
    F: Fn(&[f64]) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::config(format!("finite-difference step must be positive, got {h}")));
    }
    let mut work = net.clone();
    let mut grads = ParamGrads::zeros_like(net);
    let n_layers = net.weights.len();
    for k in 0..n_layers {
        for which in 0..2 {
            let len = if which == 0 { net.weights[k].len() } else { net.biases[k].len() };
            for i in 0..len {
                let eval = |w: &mut Network, delta: f64| -> Result<f64> {
                    {
                        let (ws, bs) = w.params_mut();
                        if which == 0 {
                            ws[k][i] += delta;
                        } else {
                            bs[k][i] += delta;
                        }
                    }
                    let out = w.forward(x)?;
                    let l = loss_fn(&out);
                    {
                        let (ws, bs) = w.params_mut();
                        if which == 0 {
                            ws[k][i] -= delta;
                        } else {
                            bs[k][i] -= delta;
                        }
                    }
                    Ok(l)
                };
                let plus = eval(&mut work, h)?;
                let minus = eval(&mut work, -h)?;
                let g = (plus - minus) / (2.0 * h);
                if which == 0 {
                    grads.weights[k][i] = g;
                } else {
                    grads.biases[k][i] = g;
                }
            }
        }
    }
    Ok(grads)
}
