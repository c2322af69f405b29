//! Mixture-of-experts flow matching.
//!
//! `K` expert fields `u_k(z, t)` and a gate producing routing weights
//! `pi(z, t)` on the simplex model the target velocity as the mixture
//! `sum_k pi_k N(u*; u_k, sigma^2 I)`. Training minimises
//!
//! ```text
//! -log sum_k pi_k exp(-|u_k - u*|^2 / (2 sigma^2))
//! ```
//!
//! averaged over the batch, i.e. the mixture NLL without the constant
//! Gaussian normaliser `(2 pi sigma^2)^(m/2)`. Sampling draws one expert at
//! `t = 0` from `pi(z0, 0)` and integrates only that expert.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::checkpoint::FlowModel;
use crate::datasets::{log_sum_exp, MixtureSpec, SampleSet};
use crate::error::{check_dim, Error, Result};
use crate::flow::{
    derive_seed, euler_sample, noise_for_index, run_training, TrainBatch, TrainConfig, Trajectory, FIELD_TAG, GATE_TAG,
};
use crate::nnet::{field_layer_sizes, ForwardTrace, Gradients, MlpNet};
use crate::point::Point;

/// Expert fields, gate and kernel width.
#[derive(Debug, Clone, PartialEq)]
pub struct MoeFlowModel {
    experts: Vec<MlpNet>,
    gate: MlpNet,
    sigma: f64,
}

/// Posterior expert weights for one velocity target.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    pub gamma: Vec<f64>,
}

/// How the trajectory-level expert is chosen at `t = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    /// `e ~ Cat(pi(z0, 0))`.
    Sampled,
    /// `argmax pi(z0, 0)`, lowest index on ties.
    Greedy,
}

impl SamplingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SamplingMode::Sampled => "sampled",
            SamplingMode::Greedy => "greedy",
        }
    }
}

impl std::str::FromStr for SamplingMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sampled" => Ok(SamplingMode::Sampled),
            "greedy" => Ok(SamplingMode::Greedy),
            _ => Err(Error::InvalidConfig(format!("unknown sampling mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExpertAssignment {
    pub expert_id: usize,
    pub mode: SamplingMode,
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma.is_finite() && sigma > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "sigma must be finite and > 0, got {sigma}"
        )))
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_space_normalise(logits)
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|l| l - lse).collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `gamma_k ∝ pi_k exp(-|u* - u_k|^2 / (2 sigma^2))`, evaluated in log space.
pub fn responsibilities_from(pi: &[f64], experts: &[Vec<f64>], u_star: &[f64], sigma: f64) -> Result<Responsibilities> {
    check_sigma(sigma)?;
    check_dim(pi.len(), experts.len())?;
    if !pi.iter().chain(u_star).all(|v| v.is_finite()) || !experts.iter().flatten().all(|v| v.is_finite()) {
        return Err(Error::InvalidSpec("responsibilities need finite inputs".into()));
    }
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut logits = Vec::with_capacity(pi.len());
    for (p, u) in pi.iter().zip(experts) {
        check_dim(u_star.len(), u.len())?;
        logits.push(p.ln() - sq_dist(u, u_star) * inv);
    }
    Ok(Responsibilities {
        gamma: log_space_normalise(&logits),
    })
}

/// Softmax that tolerates `-inf` entries (zero routing weight).
fn log_space_normalise(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

impl MoeFlowModel {
    pub fn new(experts: Vec<MlpNet>, gate: MlpNet, sigma: f64) -> Result<Self> {
        check_sigma(sigma)?;
        if experts.is_empty() {
            return Err(Error::InvalidConfig("need at least one expert".into()));
        }
        let dim = experts[0].state_dim();
        for e in &experts {
            check_dim(dim, e.state_dim())?;
            check_dim(dim, e.output_dim())?;
        }
        check_dim(dim, gate.state_dim())?;
        check_dim(experts.len(), gate.output_dim())?;
        Ok(Self { experts, gate, sigma })
    }

    /// Seeded fresh model. Expert `k` has the same initial weights as a VFM
    /// field trained with seed `seed` when `k = 0`.
    pub fn init(dim: usize, k: usize, sigma: f64, cfg: &TrainConfig, gate_hidden: &[usize]) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidConfig("K must be at least 1".into()));
        }
        let experts = (0..k)
            .map(|i| {
                MlpNet::new(
                    &field_layer_sizes(dim, &cfg.hidden, dim),
                    cfg.activation,
                    derive_seed(cfg.seed, FIELD_TAG + 16 * i as u64),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let gate = MlpNet::new(
            &field_layer_sizes(dim, gate_hidden, k),
            cfg.activation,
            derive_seed(cfg.seed, GATE_TAG),
        )?;
        Self::new(experts, gate, sigma)
    }

    pub fn k(&self) -> usize {
        self.experts.len()
    }

    pub fn dim(&self) -> usize {
        self.gate.state_dim()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn experts(&self) -> &[MlpNet] {
        &self.experts
    }

    pub fn experts_mut(&mut self) -> &mut [MlpNet] {
        &mut self.experts
    }

    pub fn gate(&self) -> &MlpNet {
        &self.gate
    }

    pub fn gate_mut(&mut self) -> &mut MlpNet {
        &mut self.gate
    }

    pub fn with_sigma(&self, sigma: f64) -> Result<Self> {
        check_sigma(sigma)?;
        Ok(Self { sigma, ..self.clone() })
    }

    /// Routing weights `pi(z, t)`.
    pub fn gating(&self, z: &[f64], t: f64) -> Result<Vec<f64>> {
        let logits = self.gate.forward(z, t)?;
        if !logits.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteLayer {
                layer: self.gate.num_layers() - 1,
            });
        }
        Ok(softmax(&logits))
    }

    /// Every expert's velocity at `(z, t)`.
    pub fn expert_velocities(&self, z: &[f64], t: f64) -> Result<Vec<Vec<f64>>> {
        self.experts.iter().map(|e| e.forward(z, t)).collect()
    }

    pub fn responsibilities(&self, z: &[f64], t: f64, u_star: &[f64]) -> Result<Responsibilities> {
        let pi = self.gating(z, t)?;
        let us = self.expert_velocities(z, t)?;
        responsibilities_from(&pi, &us, u_star, self.sigma)
    }

    /// Batched gate logits and expert outputs on the batch inputs.
    fn forward_all(&self, inputs: &Array2<f64>) -> Result<(ForwardTrace, Vec<ForwardTrace>)> {
        let gate = self.gate.forward_batch(inputs.view())?;
        let experts = self
            .experts
            .iter()
            .map(|e| e.forward_batch(inputs.view()))
            .collect::<Result<Vec<_>>>()?;
        Ok((gate, experts))
    }

    /// Mean responsibilities over a batch, one entry per expert.
    pub fn mean_responsibilities(&self, batch: &TrainBatch) -> Result<Vec<f64>> {
        let (gate, experts) = self.forward_all(&batch.inputs())?;
        let outs: Vec<&Array2<f64>> = experts.iter().map(|t| t.output()).collect();
        let mut mean = vec![0.0; self.k()];
        for i in 0..batch.len() {
            let row = nll_row(
                gate.output().row(i).as_slice().expect("contiguous"),
                &outs,
                i,
                batch,
                self.sigma,
            );
            for (m, g) in mean.iter_mut().zip(&row.gamma) {
                *m += g / batch.len() as f64;
            }
        }
        Ok(mean)
    }

    /// Frozen expert as a plain vector field.
    pub fn expert_field(&self, k: usize) -> Result<&MlpNet> {
        self.experts
            .get(k)
            .ok_or_else(|| Error::InvalidConfig(format!("expert {k} out of range for K = {}", self.k())))
    }

    /// Picks the trajectory-level expert from `pi(z0, 0)`; `u` is a uniform draw
    /// used only in sampled mode.
    pub fn assign(&self, z0: &[f64], mode: SamplingMode, u: f64) -> Result<ExpertAssignment> {
        let pi = self.gating(z0, 0.0)?;
        let expert_id = match mode {
            SamplingMode::Greedy => {
                let mut best = 0;
                for (k, &p) in pi.iter().enumerate() {
                    if p > pi[best] {
                        best = k;
                    }
                }
                best
            }
            SamplingMode::Sampled => {
                let cdf: Vec<f64> = pi
                    .iter()
                    .scan(0.0, |acc, p| {
                        *acc += p;
                        Some(*acc)
                    })
                    .collect();
                crate::datasets::pick(&cdf, u)
            }
        };
        Ok(ExpertAssignment { expert_id, mode })
    }
}

struct RowTerms {
    loss: f64,
    gamma: Vec<f64>,
    pi: Vec<f64>,
}

fn nll_row(logits: &[f64], experts: &[&Array2<f64>], i: usize, batch: &TrainBatch, sigma: f64) -> RowTerms {
    let inv = 1.0 / (2.0 * sigma * sigma);
    let log_pi = log_softmax(logits);
    let u_star = batch.u_star.row(i);
    let a: Vec<f64> = log_pi
        .iter()
        .zip(experts)
        .map(|(lp, e)| {
            let d2: f64 = e.row(i).iter().zip(u_star.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
            lp - d2 * inv
        })
        .collect();
    let lse = log_sum_exp(&a);
    RowTerms {
        loss: -lse,
        gamma: a.iter().map(|v| (v - lse).exp()).collect(),
        pi: log_pi.iter().map(|v| v.exp()).collect(),
    }
}

/// Loss plus gradients for every expert and the gate.
#[derive(Debug, Clone)]
pub struct MoeLossAndGrads {
    pub loss: f64,
    pub expert_grads: Vec<Gradients>,
    pub gate_grad: Gradients,
}

/// Batch mean of the mixture NLL.
pub fn moefm_nll(model: &MoeFlowModel, batch: &TrainBatch) -> Result<f64> {
    let (gate, experts) = model.forward_all(&batch.inputs())?;
    let outs: Vec<&Array2<f64>> = experts.iter().map(|t| t.output()).collect();
    let mut total = 0.0;
    for i in 0..batch.len() {
        let row = nll_row(
            gate.output().row(i).as_slice().expect("contiguous"),
            &outs,
            i,
            batch,
            model.sigma,
        );
        if !row.loss.is_finite() {
            return Err(Error::NonFiniteLoss { row: Some(i) });
        }
        total += row.loss;
    }
    Ok(total / batch.len() as f64)
}

/// [`moefm_nll`] with exact gradients.
///
/// Per row: `dL/du_k = gamma_k (u_k - u*) / sigma^2` and
/// `dL/dlogit_k = pi_k - gamma_k`.
pub fn moefm_nll_and_grads(model: &MoeFlowModel, batch: &TrainBatch) -> Result<MoeLossAndGrads> {
    nll_and_grads_parts(&model.experts, &model.gate, model.sigma, batch)
}

const GAMMA_FLUSH: f64 = 1e-200;

fn nll_and_grads_parts(experts: &[MlpNet], gate: &MlpNet, sigma: f64, batch: &TrainBatch) -> Result<MoeLossAndGrads> {
    let dim = gate.state_dim();
    check_dim(dim, batch.u_star.ncols())?;
    let inputs = batch.inputs();
    let gate_tr = gate.forward_batch(inputs.view())?;
    let traces = experts
        .iter()
        .map(|e| e.forward_batch(inputs.view()))
        .collect::<Result<Vec<_>>>()?;
    let outs: Vec<&Array2<f64>> = traces.iter().map(|t| t.output()).collect();
    let n = batch.len();
    let k = experts.len();
    let scale = 1.0 / n as f64;
    let inv_var = 1.0 / (sigma * sigma);
    let mut d_gate = Array2::zeros((n, k));
    let mut d_experts: Vec<Array2<f64>> = (0..k).map(|_| Array2::zeros((n, dim))).collect();
    let mut total = 0.0;
    for i in 0..n {
        let row = nll_row(
            gate_tr.output().row(i).as_slice().expect("contiguous"),
            &outs,
            i,
            batch,
            sigma,
        );
        if !row.loss.is_finite() {
            return Err(Error::NonFiniteLoss { row: Some(i) });
        }
        total += row.loss;
        let u_star = batch.u_star.row(i);
        for j in 0..k {
            d_gate[[i, j]] = scale * (row.pi[j] - row.gamma[j]);
            // Negligible responsibilities would otherwise feed subnormals into the backward pass.
            let gamma = if row.gamma[j] < GAMMA_FLUSH { 0.0 } else { row.gamma[j] };
            let c = scale * gamma * inv_var;
            let mut d = d_experts[j].row_mut(i);
            for ((dj, u), us) in d.iter_mut().zip(outs[j].row(i).iter()).zip(u_star.iter()) {
                *dj = c * (u - us);
            }
        }
    }
    let expert_grads = experts
        .iter()
        .zip(&traces)
        .zip(&d_experts)
        .map(|((e, tr), d)| e.backward(tr, d.view()))
        .collect::<Result<Vec<_>>>()?;
    let gate_grad = gate.backward(&gate_tr, d_gate.view())?;
    Ok(MoeLossAndGrads {
        loss: total * scale,
        expert_grads,
        gate_grad,
    })
}

/// MoE-FM training settings on top of the shared [`TrainConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MoeConfig {
    pub k: usize,
    pub sigma: f64,
    /// Hidden widths of the gate; empty means "same as the experts".
    pub gate_hidden: Vec<usize>,
    /// Held-out batch size for the utilisation statistics.
    pub utilization_batch: usize,
}

impl Default for MoeConfig {
    fn default() -> Self {
        Self {
            k: 8,
            sigma: 0.1,
            gate_hidden: Vec::new(),
            utilization_batch: 2048,
        }
    }
}

impl MoeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("K must be at least 1".into()));
        }
        check_sigma(self.sigma)?;
        if self.gate_hidden.contains(&0) {
            return Err(Error::InvalidConfig("gate hidden widths must be positive".into()));
        }
        Ok(())
    }

    pub fn gate_hidden_or<'a>(&'a self, cfg: &'a TrainConfig) -> &'a [usize] {
        if self.gate_hidden.is_empty() {
            &cfg.hidden
        } else {
            &self.gate_hidden
        }
    }
}

#[derive(Debug, Clone)]
pub struct MoeOutcome {
    pub model: MoeFlowModel,
    pub losses: Vec<f64>,
    /// Mean responsibility per expert on a held-out batch.
    pub utilization: Vec<f64>,
}

/// Minimises the mixture NLL by AdamW over all experts and the gate.
pub fn train_moefm(spec: &MixtureSpec, cfg: &TrainConfig, moe: &MoeConfig) -> Result<MoeOutcome> {
    moe.validate()?;
    spec.validate()?;
    let init = MoeFlowModel::init(spec.dim(), moe.k, moe.sigma, cfg, moe.gate_hidden_or(cfg))?;
    let sigma = moe.sigma;
    let k = moe.k;
    let rebuild = |nets: &[MlpNet]| MoeFlowModel {
        experts: nets[..k].to_vec(),
        gate: nets[k].clone(),
        sigma,
    };
    let mut nets: Vec<MlpNet> = init.experts.iter().cloned().chain([init.gate.clone()]).collect();
    let losses = run_training(
        &mut nets,
        spec,
        cfg,
        |nets, batch| {
            let r = nll_and_grads_parts(&nets[..k], &nets[k], sigma, batch)?;
            let mut grads = r.expert_grads;
            grads.push(r.gate_grad);
            Ok((r.loss, grads))
        },
        |nets| FlowModel::MoeFm(rebuild(nets)),
    )?;
    let model = rebuild(&nets);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(11);
    let held_out = TrainBatch::draw(spec, moe.utilization_batch.max(1), cfg.t_epsilon, &mut rng)?;
    let utilization = model.mean_responsibilities(&held_out)?;
    log::info!("expert utilisation: {utilization:?}");
    Ok(MoeOutcome {
        model,
        losses,
        utilization,
    })
}

/// Integrates one trajectory with the expert chosen at `t = 0`.
///
/// `rng` supplies the categorical draw in sampled mode (one uniform).
pub fn frozen_routing_sample<R: Rng>(
    model: &MoeFlowModel,
    z0: &Point,
    steps: usize,
    mode: SamplingMode,
    rng: &mut R,
) -> Result<Trajectory> {
    check_dim(model.dim(), z0.dim())?;
    let u = rng.random::<f64>();
    let assignment = model.assign(z0, mode, u)?;
    let mut tr = euler_sample(&model.experts[assignment.expert_id], z0, steps)?;
    tr.expert_id = Some(assignment.expert_id);
    Ok(tr)
}

/// Endpoints of `n` frozen-routing trajectories.
#[derive(Debug, Clone)]
pub struct Generated {
    pub samples: SampleSet,
    pub expert_ids: Vec<usize>,
    pub trajectories: Vec<Trajectory>,
}

/// Generates `n` samples. Sample `i` draws its noise and its expert from RNG
/// stream `i` of the master seed, so output does not depend on scheduling.
pub fn generate(model: &MoeFlowModel, n: usize, steps: usize, mode: SamplingMode, seed: u64) -> Result<Generated> {
    let results: Vec<Result<Trajectory>> = crate::par_map(n, |i| {
        let (z0, mut rng) = noise_for_index(seed, i as u64, model.dim());
        frozen_routing_sample(model, &z0, steps, mode, &mut rng)
    });
    collect_generated(results, model.dim())
}

pub(crate) fn collect_generated(results: Vec<Result<Trajectory>>, dim: usize) -> Result<Generated> {
    let mut points = Array2::zeros((results.len(), dim));
    let mut expert_ids = Vec::with_capacity(results.len());
    let mut trajectories = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(tr) => {
                points.row_mut(i).assign(&tr.end().view());
                expert_ids.push(tr.expert_id.unwrap_or(0));
                trajectories.push(tr);
            }
            Err(e) => failures.push((i, e.to_string())),
        }
    }
    if !failures.is_empty() {
        return Err(Error::GenerationFailed { failures });
    }
    Ok(Generated {
        samples: SampleSet::from_points(points),
        expert_ids,
        trajectories,
    })
}
