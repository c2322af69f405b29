//! Reference values for the conditional optima and the kernel-width limits.
//!
//! Two Monte-Carlo weight schemes estimate expectations conditional on
//! `(z_t, t)`:
//!
//! * [`WeightScheme::GaussianPath`] draws `z1 ~ p1` and weights it by the exact
//!   path density `N(z_t; t z1, (1 - t)^2 I)`; the pair's `z0` is then fixed by
//!   the interpolation constraint.
//! * [`WeightScheme::Kernel`] draws independent `(z0, z1)` and weights the pair
//!   by a Gaussian kernel of width `h` around `z_t - (t z1 + (1 - t) z0)`.
//!
//! Both are self-normalised; standard errors use the delta method.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::datasets::{log_sum_exp, MixtureSpec};
use crate::error::{check_dim, Error, Result};
use crate::flow::TrainBatch;
use crate::moefm::{moefm_nll_and_grads, responsibilities_from, MoeFlowModel};
use crate::point::Point;

/// Effective sample size below which an estimate is refused.
pub const MIN_ESS: f64 = 100.0;
/// `pi_hat_k` below this leaves `u_hat_k` undefined.
pub const PI_FLOOR: f64 = 1e-6;
/// Kernel widths swept by [`sigma_inf_limit_check`].
pub const SIGMA_SWEEP: [f64; 3] = [10.0, 100.0, 1000.0];

/// Conditioning pair `(z_t, t)` plus Monte-Carlo settings.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbePoint {
    pub z_t: Point,
    pub t: f64,
    pub mc_samples: usize,
    pub seed: u64,
}

impl ProbePoint {
    pub fn new(z_t: impl Into<Point>, t: f64, mc_samples: usize, seed: u64) -> Result<Self> {
        let p = Self {
            z_t: z_t.into(),
            t,
            mc_samples,
            seed,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t > 0.0 && self.t <= 1.0 - 1e-3) {
            return Err(Error::InvalidSpec(format!(
                "probe time {} outside (0, 1 - 1e-3]",
                self.t
            )));
        }
        if self.mc_samples == 0 {
            return Err(Error::InvalidSpec("mc_samples must be positive".into()));
        }
        if !self.z_t.is_finite() {
            return Err(Error::InvalidSpec("probe state must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum WeightScheme {
    GaussianPath,
    Kernel { bandwidth: f64 },
}

impl WeightScheme {
    /// Kernel scheme with `h = 0.05 (1 - t)`.
    pub fn kernel_for(t: f64) -> Self {
        WeightScheme::Kernel {
            bandwidth: 0.05 * (1.0 - t),
        }
    }
}

/// Monte-Carlo estimate with per-coordinate standard errors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Estimate {
    pub value: Point,
    pub std_error: Point,
    pub ess: f64,
}

/// Weighted draws of the regression target `z1 - z0` given the probe.
struct Draws {
    /// Weights scaled so the largest is 1.
    weights: Vec<f64>,
    targets: Vec<Vec<f64>>,
    ess: f64,
}

fn draw(spec: &MixtureSpec, probe: &ProbePoint, scheme: WeightScheme) -> Result<Draws> {
    probe.validate()?;
    spec.validate()?;
    let dim = spec.dim();
    check_dim(dim, probe.z_t.dim())?;
    let t = probe.t;
    let z = &probe.z_t;
    let mut rng = ChaCha8Rng::seed_from_u64(probe.seed);
    let z1s = spec.sample_with(probe.mc_samples, &mut rng)?;
    let mut log_w = Vec::with_capacity(probe.mc_samples);
    let mut targets = Vec::with_capacity(probe.mc_samples);
    match scheme {
        WeightScheme::GaussianPath => {
            let var = (1.0 - t) * (1.0 - t);
            for z1 in z1s.rows() {
                let d2: f64 = z1.iter().zip(z.iter()).map(|(a, b)| (b - t * a).powi(2)).sum();
                log_w.push(-d2 / (2.0 * var));
                targets.push(z1.iter().zip(z.iter()).map(|(a, b)| (a - b) / (1.0 - t)).collect());
            }
        }
        WeightScheme::Kernel { bandwidth } => {
            if !(bandwidth > 0.0 && bandwidth.is_finite()) {
                return Err(Error::InvalidSpec(format!(
                    "kernel bandwidth must be > 0, got {bandwidth}"
                )));
            }
            for z1 in z1s.rows() {
                let z0: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                let mut d2 = 0.0;
                for j in 0..dim {
                    d2 += (z[j] - (t * z1[j] + (1.0 - t) * z0[j])).powi(2);
                }
                log_w.push(-d2 / (2.0 * bandwidth * bandwidth));
                targets.push(z1.iter().zip(&z0).map(|(a, b)| a - b).collect());
            }
        }
    }
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
    let (s1, s2) = weights.iter().fold((0.0, 0.0), |(a, b), w| (a + w, b + w * w));
    let ess = if s2 > 0.0 { s1 * s1 / s2 } else { 0.0 };
    if !(ess >= MIN_ESS) {
        return Err(Error::LowEffectiveSampleSize { ess, min: MIN_ESS });
    }
    Ok(Draws { weights, targets, ess })
}

/// Self-normalised mean of `x` under weights `w * g`, with delta-method error.
fn weighted_mean(w: &[f64], g: &[f64], xs: &[Vec<f64>]) -> Option<(Vec<f64>, Vec<f64>)> {
    let dim = xs.first().map_or(0, Vec::len);
    let total: f64 = w.iter().zip(g).map(|(a, b)| a * b).sum();
    if !(total > 0.0) {
        return None;
    }
    let mut mean = vec![0.0; dim];
    for ((wi, gi), x) in w.iter().zip(g).zip(xs) {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += wi * gi * v;
        }
    }
    for m in &mut mean {
        *m /= total;
    }
    let mut var = vec![0.0; dim];
    for ((wi, gi), x) in w.iter().zip(g).zip(xs) {
        let c = wi * gi;
        for ((s, v), m) in var.iter_mut().zip(x).zip(&mean) {
            *s += c * c * (v - m) * (v - m);
        }
    }
    Some((mean, var.into_iter().map(|s| s.sqrt() / total).collect()))
}

/// Monte-Carlo `E[z1 - z0 | z_t, t]` with the exact path weights.
pub fn vfm_optimum(spec: &MixtureSpec, probe: &ProbePoint) -> Result<Estimate> {
    vfm_optimum_with(spec, probe, WeightScheme::GaussianPath)
}

pub fn vfm_optimum_with(spec: &MixtureSpec, probe: &ProbePoint, scheme: WeightScheme) -> Result<Estimate> {
    let d = draw(spec, probe, scheme)?;
    let ones = vec![1.0; d.weights.len()];
    let (value, se) = weighted_mean(&d.weights, &ones, &d.targets).expect("ESS check guarantees mass");
    Ok(Estimate {
        value: Point(value),
        std_error: Point(se),
        ess: d.ess,
    })
}

/// Closed-form `E[z1 - z0 | z_t, t] = (E[z1 | z_t] - z_t) / (1 - t)` for a
/// Gaussian mixture target.
///
/// Per component, `z_t ~ N(t mu, (t^2 s^2 + (1 - t)^2) I)` and
/// `E[z1 | z_t, c] = mu + t s^2 (z_t - t mu) / (t^2 s^2 + (1 - t)^2)`.
pub fn vfm_optimum_exact(spec: &MixtureSpec, z_t: &[f64], t: f64) -> Result<Point> {
    if !(0.0..1.0).contains(&t) {
        return Err(Error::InvalidSpec(format!("time {t} outside [0, 1)")));
    }
    let comps = spec.components()?;
    check_dim(spec.dim(), z_t.len())?;
    let m = z_t.len() as f64;
    let mut log_post = Vec::with_capacity(comps.len());
    let mut cond = Vec::with_capacity(comps.len());
    for c in &comps {
        let var = t * t * c.std * c.std + (1.0 - t) * (1.0 - t);
        let d2: f64 = z_t.iter().zip(&c.mean).map(|(z, mu)| (z - t * mu).powi(2)).sum();
        log_post.push(c.weight.ln() - 0.5 * m * var.ln() - d2 / (2.0 * var));
        cond.push(
            z_t.iter()
                .zip(&c.mean)
                .map(|(z, mu)| mu + t * c.std * c.std * (z - t * mu) / var)
                .collect::<Vec<_>>(),
        );
    }
    let lse = log_sum_exp(&log_post);
    let mut e_z1 = vec![0.0; z_t.len()];
    for (lp, c) in log_post.iter().zip(&cond) {
        let w = (lp - lse).exp();
        for (e, v) in e_z1.iter_mut().zip(c) {
            *e += w * v;
        }
    }
    Ok(Point(e_z1.iter().zip(z_t).map(|(e, z)| (e - z) / (1.0 - t)).collect()))
}

/// Conditional optima of the mixture objective at one probe.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MoeOptima {
    pub pi: Vec<f64>,
    pub pi_std_error: Vec<f64>,
    /// `None` where `pi_hat_k < PI_FLOOR`.
    pub u: Vec<Option<Point>>,
    pub u_std_error: Vec<Option<Point>>,
    pub ess: f64,
    /// Smallest routing weight of the frozen gate at the probe (reported, not enforced).
    pub min_gate_weight: f64,
}

/// `pi_hat_k = E[gamma_k]` and `u_hat_k = E[gamma_k u*] / E[gamma_k]`, with the
/// frozen model supplying `gamma`.
pub fn moefm_optima(spec: &MixtureSpec, probe: &ProbePoint, model: &MoeFlowModel) -> Result<MoeOptima> {
    moefm_optima_with(spec, probe, model, WeightScheme::GaussianPath)
}

pub fn moefm_optima_with(
    spec: &MixtureSpec,
    probe: &ProbePoint,
    model: &MoeFlowModel,
    scheme: WeightScheme,
) -> Result<MoeOptima> {
    check_dim(model.dim(), spec.dim())?;
    let d = draw(spec, probe, scheme)?;
    let pi = model.gating(&probe.z_t, probe.t)?;
    let us = model.expert_velocities(&probe.z_t, probe.t)?;
    let k = model.k();
    let mut gammas: Vec<Vec<f64>> = vec![Vec::with_capacity(d.weights.len()); k];
    for u_star in &d.targets {
        let g = responsibilities_from(&pi, &us, u_star, model.sigma())?;
        for (col, v) in gammas.iter_mut().zip(g.gamma) {
            col.push(v);
        }
    }
    let ones = vec![1.0; d.weights.len()];
    let mut out = MoeOptima {
        pi: Vec::with_capacity(k),
        pi_std_error: Vec::with_capacity(k),
        u: Vec::with_capacity(k),
        u_std_error: Vec::with_capacity(k),
        ess: d.ess,
        min_gate_weight: pi.iter().copied().fold(f64::INFINITY, f64::min),
    };
    for g in &gammas {
        let as_rows: Vec<Vec<f64>> = g.iter().map(|v| vec![*v]).collect();
        let (p, se) = weighted_mean(&d.weights, &ones, &as_rows).expect("ESS check guarantees mass");
        out.pi.push(p[0]);
        out.pi_std_error.push(se[0]);
        match weighted_mean(&d.weights, g, &d.targets) {
            Some((u, se)) if p[0] >= PI_FLOOR => {
                out.u.push(Some(Point(u)));
                out.u_std_error.push(Some(Point(se)));
            }
            _ => {
                out.u.push(None);
                out.u_std_error.push(None);
            }
        }
    }
    Ok(out)
}

/// Deterministic reference for a 1-D mixture.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadratureOptima {
    pub u_vfm: f64,
    pub pi: Vec<f64>,
    pub u: Vec<Option<f64>>,
}

/// Nodes per Gaussian component in [`quadrature_optima`].
pub const QUADRATURE_NODES: usize = 2001;

/// Conditional optima by quadrature over `z1` (the path fixes `z0`).
///
/// Point masses contribute a single exact node; Gaussian components use the
/// trapezoid rule on `mean +- 8 std`.
pub fn quadrature_optima(
    spec: &MixtureSpec,
    z_t: f64,
    t: f64,
    model: Option<&MoeFlowModel>,
) -> Result<QuadratureOptima> {
    if spec.dim() != 1 {
        return Err(Error::Unsupported("quadrature oracle is one-dimensional".into()));
    }
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::InvalidSpec(format!("time {t} outside (0, 1)")));
    }
    let mut nodes: Vec<(f64, f64)> = Vec::new(); // (z1, log weight)
    for c in spec.components()? {
        if c.weight == 0.0 {
            continue;
        }
        if c.std == 0.0 {
            nodes.push((c.mean[0], c.weight.ln()));
            continue;
        }
        let (lo, hi) = (c.mean[0] - 8.0 * c.std, c.mean[0] + 8.0 * c.std);
        let h = (hi - lo) / (QUADRATURE_NODES - 1) as f64;
        for i in 0..QUADRATURE_NODES {
            let x = lo + h * i as f64;
            let edge = if i == 0 || i == QUADRATURE_NODES - 1 { 0.5 } else { 1.0 };
            let log_pdf = -0.5 * ((x - c.mean[0]) / c.std).powi(2) - (c.std * (2.0 * std::f64::consts::PI).sqrt()).ln();
            nodes.push((x, c.weight.ln() + log_pdf + (edge * h).ln()));
        }
    }
    let var = (1.0 - t) * (1.0 - t);
    let log_w: Vec<f64> = nodes
        .iter()
        .map(|(z1, lw)| lw - (z_t - t * z1).powi(2) / (2.0 * var))
        .collect();
    let lse = log_sum_exp(&log_w);
    let w: Vec<f64> = log_w.iter().map(|l| (l - lse).exp()).collect();
    let targets: Vec<f64> = nodes.iter().map(|(z1, _)| (z1 - z_t) / (1.0 - t)).collect();
    let u_vfm = w.iter().zip(&targets).map(|(a, b)| a * b).sum();
    let Some(model) = model else {
        return Ok(QuadratureOptima {
            u_vfm,
            pi: Vec::new(),
            u: Vec::new(),
        });
    };
    check_dim(1, model.dim())?;
    let pi_gate = model.gating(&[z_t], t)?;
    let us = model.expert_velocities(&[z_t], t)?;
    let mut pi = vec![0.0; model.k()];
    let mut num = vec![0.0; model.k()];
    for (wi, u_star) in w.iter().zip(&targets) {
        let g = responsibilities_from(&pi_gate, &us, &[*u_star], model.sigma())?;
        for k in 0..model.k() {
            pi[k] += wi * g.gamma[k];
            num[k] += wi * g.gamma[k] * u_star;
        }
    }
    let u = pi
        .iter()
        .zip(&num)
        .map(|(p, n)| (*p >= PI_FLOOR).then(|| n / p))
        .collect();
    Ok(QuadratureOptima { u_vfm, pi, u })
}

/// Argmin-distance set and routing renormalised over it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HardAssignment {
    pub members: Vec<usize>,
    /// Length `K`; zero outside `members`.
    pub pi: Vec<f64>,
}

/// Hard assignment from routing weights and squared expert distances.
/// Squared distances within a relative `1e-12` of the minimum tie.
pub fn hard_assignment(pi: &[f64], sq_dists: &[f64]) -> Result<HardAssignment> {
    check_dim(pi.len(), sq_dists.len())?;
    if pi.is_empty() || !sq_dists.iter().all(|d| d.is_finite()) {
        return Err(Error::InvalidSpec("hard assignment needs finite distances".into()));
    }
    let min = sq_dists.iter().copied().fold(f64::INFINITY, f64::min);
    let tol = 1e-12 * min.max(f64::MIN_POSITIVE);
    let members: Vec<usize> = (0..pi.len()).filter(|&k| sq_dists[k] - min <= tol).collect();
    let mass: f64 = members.iter().map(|&k| pi[k]).sum();
    let mut out = vec![0.0; pi.len()];
    for &k in &members {
        out[k] = if mass > 0.0 {
            pi[k] / mass
        } else {
            1.0 / members.len() as f64
        };
    }
    Ok(HardAssignment { members, pi: out })
}

/// Limit of the responsibilities as `sigma -> 0` for a frozen model.
pub fn sigma_zero_limit(model: &MoeFlowModel, z: &[f64], t: f64, u_star: &[f64]) -> Result<HardAssignment> {
    let pi = model.gating(z, t)?;
    let us = model.expert_velocities(z, t)?;
    let d: Vec<f64> = us
        .iter()
        .map(|u| u.iter().zip(u_star).map(|(a, b)| (a - b) * (a - b)).sum())
        .collect();
    hard_assignment(&pi, &d)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SigmaSweepRow {
    pub sigma: f64,
    /// `max over rows of |gamma - pi|_inf`.
    pub max_deviation: f64,
    /// Norm of the loss gradient over all expert parameters.
    pub expert_grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SigmaSweep {
    pub rows: Vec<SigmaSweepRow>,
    pub deviation_monotone: bool,
    pub grad_monotone: bool,
}

impl SigmaSweep {
    pub fn passed(&self) -> bool {
        self.deviation_monotone && self.grad_monotone
    }
}

/// Sweeps `sigma` over [`SIGMA_SWEEP`] with the model's nets frozen.
pub fn sigma_inf_limit_check(model: &MoeFlowModel, batch: &TrainBatch) -> Result<SigmaSweep> {
    sigma_sweep(model, batch, &SIGMA_SWEEP)
}

pub fn sigma_sweep(model: &MoeFlowModel, batch: &TrainBatch, sigmas: &[f64]) -> Result<SigmaSweep> {
    let mut rows = Vec::with_capacity(sigmas.len());
    for &sigma in sigmas {
        let m = model.with_sigma(sigma)?;
        let mut max_deviation: f64 = 0.0;
        for i in 0..batch.len() {
            let z = batch.z_t.row(i).to_vec();
            let pi = m.gating(&z, batch.t[i])?;
            let g = responsibilities_from(
                &pi,
                &m.expert_velocities(&z, batch.t[i])?,
                &batch.u_star.row(i).to_vec(),
                sigma,
            )?;
            for (a, b) in g.gamma.iter().zip(&pi) {
                max_deviation = max_deviation.max((a - b).abs());
            }
        }
        let grads = moefm_nll_and_grads(&m, batch)?;
        let expert_grad_norm = grads.expert_grads.iter().map(|g| g.norm_sq()).sum::<f64>().sqrt();
        rows.push(SigmaSweepRow {
            sigma,
            max_deviation,
            expert_grad_norm,
        });
    }
    let monotone = |f: fn(&SigmaSweepRow) -> f64| rows.windows(2).all(|w| f(&w[0]) >= f(&w[1]));
    Ok(SigmaSweep {
        deviation_monotone: monotone(|r| r.max_deviation),
        grad_monotone: monotone(|r| r.expert_grad_norm),
        rows,
    })
}
