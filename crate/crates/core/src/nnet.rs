//! Small feed-forward networks with exact reverse-mode gradients and AdamW.
//!
//! An [`MlpNet`] maps `(z, t)` to an output vector. The scalar time is lifted
//! through a fixed sinusoidal embedding of width [`TIME_EMBED_DIM`] and
//! concatenated to `z`, so the first layer sees `m + TIME_EMBED_DIM` inputs.
//!
//! Batched evaluation works on row-major matrices: one sample per row.
//! Weights are stored as `(fan_in, fan_out)` so a layer computes `x·W + b`.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Width of the sinusoidal time embedding appended to every input.
pub const TIME_EMBED_DIM: usize = 8;

/// Hidden-layer nonlinearity. The output layer is always linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    /// Tanh approximation of GELU.
    Gelu,
}

impl Activation {
    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Gelu => "gelu",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tanh" => Some(Activation::Tanh),
            "gelu" => Some(Activation::Gelu),
            _ => None,
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + tanh(GELU_C * (x + GELU_A * x * x * x)))
}

/// `tanh` through one `exp`; absolute error stays below `1e-15`.
#[inline]
pub fn tanh(x: f64) -> f64 {
    let e = (2.0 * x.abs()).exp();
    (1.0 - 2.0 / (e + 1.0)).copysign(x)
}

fn gelu_grad(x: f64) -> f64 {
    let th = tanh(GELU_C * (x + GELU_A * x * x * x));
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// `[sin(pi 2^j t)]_{j<4} ++ [cos(pi 2^j t)]_{j<4}`.
pub fn time_embedding(t: f64) -> [f64; TIME_EMBED_DIM] {
    let half = TIME_EMBED_DIM / 2;
    let mut out = [0.0; TIME_EMBED_DIM];
    for j in 0..half {
        let w = PI * (1u64 << j) as f64;
        out[j] = (w * t).sin();
        out[half + j] = (w * t).cos();
    }
    out
}

/// Builds the network input matrix `[z | embed(t)]` for a batch.
pub fn network_inputs(z: ArrayView2<'_, f64>, t: &[f64]) -> Result<Array2<f64>> {
    check_dim(z.nrows(), t.len())?;
    let m = z.ncols();
    let mut x = Array2::zeros((z.nrows(), m + TIME_EMBED_DIM));
    for (i, (mut row, zi)) in x.rows_mut().into_iter().zip(z.rows()).enumerate() {
        for j in 0..m {
            row[j] = zi[j];
        }
        let e = time_embedding(t[i]);
        for j in 0..TIME_EMBED_DIM {
            row[m + j] = e[j];
        }
    }
    Ok(x)
}

/// Same as [`network_inputs`] with one shared time for every row.
pub fn network_inputs_at(z: ArrayView2<'_, f64>, t: f64) -> Array2<f64> {
    let ts = vec![t; z.nrows()];
    network_inputs(z, &ts).expect("row count matches by construction")
}

/// Feed-forward network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNet {
    layer_sizes: Vec<usize>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    activation: Activation,
    seed: u64,
}

/// Intermediate values of a batched forward pass, kept for backprop.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `acts[0]` is the input; `acts[l]` is the input to layer `l`.
    acts: Vec<Array2<f64>>,
    /// Pre-activations of hidden layers (only kept for GELU).
    pre: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl ForwardTrace {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    pub fn into_output(self) -> Array2<f64> {
        self.output
    }
}

impl MlpNet {
    /// Seeded network with per-layer `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` init.
    pub fn new(layer_sizes: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
        let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let scale = 1.0 / (fan_in as f64).sqrt();
            weights.push(Array2::from_shape_fn((fan_in, fan_out), |_| {
                rng.random_range(-scale..=scale)
            }));
            biases.push(Array1::from_shape_fn(fan_out, |_| rng.random_range(-scale..=scale)));
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            activation,
            seed,
        })
    }

    /// Network with every parameter set to zero.
    pub fn zeros(layer_sizes: &[usize], activation: Activation) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights: layer_sizes.windows(2).map(|w| Array2::zeros((w[0], w[1]))).collect(),
            biases: layer_sizes[1..].iter().map(|&n| Array1::zeros(n)).collect(),
            activation,
            seed: 0,
        })
    }

    /// Builds a net from explicit parameters, checking shapes and finiteness.
    pub fn from_parts(
        weights: Vec<Array2<f64>>,
        biases: Vec<Array1<f64>>,
        activation: Activation,
        seed: u64,
    ) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::InvalidSpec(format!(
                "{} weight matrices but {} bias vectors",
                weights.len(),
                biases.len()
            )));
        }
        let mut layer_sizes = vec![weights[0].nrows()];
        for (l, (w, b)) in weights.iter().zip(&biases).enumerate() {
            check_dim(*layer_sizes.last().expect("nonempty"), w.nrows())?;
            check_dim(w.ncols(), b.len())?;
            if !w.iter().chain(b.iter()).all(|v| v.is_finite()) {
                return Err(Error::NonFiniteLayer { layer: l });
            }
            layer_sizes.push(w.ncols());
        }
        validate_sizes(&layer_sizes)?;
        Ok(Self {
            layer_sizes,
            weights,
            biases,
            activation,
            seed,
        })
    }

    /// Layer sizes including the time-embedding columns of the input.
    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Array1<f64>] {
        &mut self.biases
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    /// Full input width, time embedding included.
    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    /// Width of the `z` part of the input.
    pub fn state_dim(&self) -> usize {
        self.layer_sizes[0].saturating_sub(TIME_EMBED_DIM)
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated nonempty")
    }

    pub fn num_params(&self) -> usize {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.len() + b.len())
            .sum()
    }

    /// Parameters flattened layer by layer: weight (row-major) then bias.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }

    /// Inverse of [`MlpNet::params_flat`].
    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        check_dim(self.num_params(), flat.len())?;
        let mut pos = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            for v in w.iter_mut() {
                *v = flat[pos];
                pos += 1;
            }
            for v in b.iter_mut() {
                *v = flat[pos];
                pos += 1;
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .zip(&self.biases)
            .all(|(w, b)| w.iter().chain(b.iter()).all(|v| v.is_finite()))
    }

    /// Evaluates the net at a single `(z, t)`.
    pub fn forward(&self, z: &[f64], t: f64) -> Result<Vec<f64>> {
        check_dim(self.state_dim(), z.len())?;
        let mut x = Vec::with_capacity(self.input_dim());
        x.extend_from_slice(z);
        x.extend_from_slice(&time_embedding(t));
        let x = Array2::from_shape_vec((1, x.len()), x).expect("row shape");
        Ok(self.forward_batch(x.view())?.into_output().into_raw_vec_and_offset().0)
    }

    /// Batched evaluation on prepared inputs (see [`network_inputs`]).
    pub fn forward_batch(&self, inputs: ArrayView2<'_, f64>) -> Result<ForwardTrace> {
        check_dim(self.input_dim(), inputs.ncols())?;
        let last = self.weights.len() - 1;
        let keep_pre = self.activation == Activation::Gelu;
        let mut acts = Vec::with_capacity(self.weights.len());
        let mut pre_store = Vec::new();
        acts.push(inputs.to_owned());
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = acts[l].dot(w);
            z += b;
            if !z.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFiniteLayer { layer: l });
            }
            if l == last {
                return Ok(ForwardTrace {
                    acts,
                    pre: pre_store,
                    output: z,
                });
            }
            let a = match self.activation {
                Activation::Tanh => z.mapv(tanh),
                Activation::Gelu => z.mapv(gelu),
            };
            if keep_pre {
                pre_store.push(z);
            }
            acts.push(a);
        }
        unreachable!("network has at least one layer")
    }

    /// Pulls `d_output` (`n x out`) back to parameter gradients.
    pub fn backward(&self, trace: &ForwardTrace, d_output: ArrayView2<'_, f64>) -> Result<Gradients> {
        check_dim(self.output_dim(), d_output.ncols())?;
        check_dim(trace.output.nrows(), d_output.nrows())?;
        let n_layers = self.weights.len();
        let mut gw = Vec::with_capacity(n_layers);
        let mut gb = Vec::with_capacity(n_layers);
        let mut delta = d_output.to_owned();
        for l in (0..n_layers).rev() {
            gw.push(trace.acts[l].t().dot(&delta));
            gb.push(delta.sum_axis(Axis(0)));
            if l > 0 {
                let mut back = delta.dot(&self.weights[l].t());
                match self.activation {
                    Activation::Tanh => {
                        Zip::from(&mut back)
                            .and(&trace.acts[l])
                            .for_each(|d, &a| *d *= 1.0 - a * a);
                    }
                    Activation::Gelu => {
                        Zip::from(&mut back)
                            .and(&trace.pre[l - 1])
                            .for_each(|d, &p| *d *= gelu_grad(p));
                    }
                }
                delta = back;
            }
        }
        gw.reverse();
        gb.reverse();
        Ok(Gradients {
            weights: gw,
            biases: gb,
        })
    }
}

fn validate_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::InvalidSpec(format!(
            "network needs at least 2 layer sizes, got {}",
            layer_sizes.len()
        )));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::InvalidSpec("layer sizes must be positive".into()));
    }
    Ok(())
}

/// Layer sizes for a field on `R^dim` with the given hidden widths.
pub fn field_layer_sizes(dim: usize, hidden: &[usize], out: usize) -> Vec<usize> {
    let mut sizes = Vec::with_capacity(hidden.len() + 2);
    sizes.push(dim + TIME_EMBED_DIM);
    sizes.extend_from_slice(hidden);
    sizes.push(out);
    sizes
}

/// Per-parameter gradients, shaped like the owning [`MlpNet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &MlpNet) -> Self {
        Self {
            weights: net.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: net.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b.iter()))
    }

    /// Gradients flattened in the order of [`MlpNet::params_flat`].
    pub fn flat(&self) -> Vec<f64> {
        self.values().copied().collect()
    }

    pub fn norm_sq(&self) -> f64 {
        self.values().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn dot(&self, other: &Gradients) -> f64 {
        self.values().zip(other.values()).map(|(a, b)| a * b).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    pub fn scale(&mut self, c: f64) {
        for w in &mut self.weights {
            *w *= c;
        }
        for b in &mut self.biases {
            *b *= c;
        }
    }

    fn matches(&self, net: &MlpNet) -> bool {
        self.weights.len() == net.weights.len()
            && self.weights.iter().zip(&net.weights).all(|(g, w)| g.dim() == w.dim())
            && self.biases.iter().zip(&net.biases).all(|(g, b)| g.dim() == b.dim())
    }
}

/// Loss value plus one [`Gradients`] per participating net.
#[derive(Debug, Clone)]
pub struct LossAndGrads {
    pub loss: f64,
    pub grads: Vec<Gradients>,
}

/// Exact gradients of a scalar loss built on the outputs of several nets.
///
/// Every net is evaluated on the same `inputs`. The closure receives the
/// output matrices in order and must return the loss together with
/// `dloss/doutput` for each net.
pub fn loss_gradients<F>(nets: &[&MlpNet], inputs: ArrayView2<'_, f64>, loss: F) -> Result<LossAndGrads>
where
    F: FnOnce(&[&Array2<f64>]) -> Result<(f64, Vec<Array2<f64>>)>,
{
    let traces = nets
        .iter()
        .map(|n| n.forward_batch(inputs))
        .collect::<Result<Vec<_>>>()?;
    let outputs: Vec<&Array2<f64>> = traces.iter().map(|t| t.output()).collect();
    let (value, d_outputs) = loss(&outputs)?;
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss { row: None });
    }
    check_dim(nets.len(), d_outputs.len())?;
    let grads = nets
        .iter()
        .zip(&traces)
        .zip(&d_outputs)
        .map(|((net, trace), d)| net.backward(trace, d.view()))
        .collect::<Result<Vec<_>>>()?;
    Ok(LossAndGrads { loss: value, grads })
}

/// AdamW hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub epsilon: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.01,
            epsilon: 1e-8,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.weight_decay >= 0.0
            && self.epsilon >= 0.0
            && [self.learning_rate, self.weight_decay, self.epsilon]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid AdamW hyperparameters {self:?}")))
        }
    }
}

/// Moment accumulators for one net.
#[derive(Debug, Clone)]
pub struct OptimState {
    first_moment: Gradients,
    second_moment: Gradients,
    step_count: u64,
    hyper: AdamWConfig,
}

impl OptimState {
    pub fn new(net: &MlpNet, hyper: AdamWConfig) -> Result<Self> {
        hyper.validate()?;
        Ok(Self {
            first_moment: Gradients::zeros_like(net),
            second_moment: Gradients::zeros_like(net),
            step_count: 0,
            hyper,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn hyper(&self) -> &AdamWConfig {
        &self.hyper
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.hyper.learning_rate = lr;
    }

    /// One AdamW update: decoupled decay `w -= lr*wd*w`, then the
    /// bias-corrected Adam step.
    pub fn step(&mut self, net: &mut MlpNet, grads: &Gradients) -> Result<()> {
        if !grads.matches(net) || !self.first_moment.matches(net) {
            return Err(Error::DimensionMismatch {
                expected: net.num_params(),
                got: grads.values().count(),
            });
        }
        if !grads.is_finite() {
            return Err(Error::NonFiniteLoss { row: None });
        }
        self.step_count += 1;
        let AdamWConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            weight_decay: wd,
            epsilon: eps,
        } = self.hyper;
        let bc1 = 1.0 - b1.powi(self.step_count as i32);
        let bc2 = 1.0 - b2.powi(self.step_count as i32);
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *p -= lr * wd * *p;
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bc1;
            let denom = (*v / bc2).sqrt() + eps;
            if m_hat != 0.0 {
                *p -= lr * m_hat / denom;
            }
        };
        for l in 0..net.weights.len() {
            Zip::from(&mut net.weights[l])
                .and(&grads.weights[l])
                .and(&mut self.first_moment.weights[l])
                .and(&mut self.second_moment.weights[l])
                .for_each(|p, &g, m, v| update(p, g, m, v));
            Zip::from(&mut net.biases[l])
                .and(&grads.biases[l])
                .and(&mut self.first_moment.biases[l])
                .and(&mut self.second_moment.biases[l])
                .for_each(|p, &g, m, v| update(p, g, m, v));
        }
        Ok(())
    }
}
