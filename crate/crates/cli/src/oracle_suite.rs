//! Fixture-driven oracle checks behind `moeflow oracle-check`.
//!
//! Every check compares a library quantity with an independent reference and
//! records the tolerance it was held to.

use moeflow::flow::TrainBatch;
use moeflow::oracle::{
    moefm_optima, quadrature_optima, sigma_inf_limit_check, sigma_zero_limit, vfm_optimum, vfm_optimum_exact,
    vfm_optimum_with, Estimate, ProbePoint, SigmaSweep, WeightScheme,
};
use moeflow::{Activation, MixtureSpec, MlpNet, MoeFlowModel, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{CliResult, Context};

/// Probe grid for the two-point target.
pub const PROBE_Z: [f64; 3] = [-1.0, 0.0, 1.0];
pub const PROBE_T: [f64; 3] = [0.2, 0.5, 0.8];
const MC_SIGMAS: f64 = 3.0;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub estimate: f64,
    pub reference: f64,
    pub std_error: f64,
    /// Largest allowed `|estimate - reference|`.
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub passed: bool,
    pub checks: Vec<Check>,
    pub sigma_sweep: SigmaSweep,
}

#[derive(Debug, Clone)]
pub struct SuiteOptions {
    pub mc_samples: usize,
    pub seed: u64,
    /// Negative-test fixture: permute the responsibilities before comparing them.
    pub corrupt_gamma: bool,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            mc_samples: 100_000,
            seed: 0,
            corrupt_gamma: false,
        }
    }
}

fn check(name: impl Into<String>, estimate: f64, reference: f64, std_error: f64, tolerance: f64) -> Check {
    let passed = (estimate - reference).abs() <= tolerance && estimate.is_finite();
    Check {
        name: name.into(),
        estimate,
        reference,
        std_error,
        tolerance,
        passed,
    }
}

/// MoE whose experts output `values` and whose gate outputs `logits`.
pub fn constant_model(values: &[f64], logits: &[f64], sigma: f64) -> CliResult<MoeFlowModel> {
    let constant = |out: &[f64], seed: u64| -> CliResult<MlpNet> {
        let mut net = MlpNet::new(
            &moeflow::nnet::field_layer_sizes(1, &[4], out.len()),
            Activation::Tanh,
            seed,
        )
        .context("fixture net")?;
        // Parameters are laid out layer by layer, so the output bias comes last.
        let mut flat = vec![0.0; net.num_params()];
        let tail = flat.len() - out.len();
        flat[tail..].copy_from_slice(out);
        net.set_params_flat(&flat).context("fixture params")?;
        Ok(net)
    };
    let experts = values
        .iter()
        .enumerate()
        .map(|(i, v)| constant(&[*v], i as u64))
        .collect::<CliResult<Vec<_>>>()?;
    MoeFlowModel::new(experts, constant(logits, 99)?, sigma).context("fixture model")
}

fn probe(z: f64, t: f64, n: usize, seed: u64) -> CliResult<ProbePoint> {
    ProbePoint::new(vec![z], t, n, seed).context("probe")
}

fn scalar(e: &Estimate) -> (f64, f64) {
    (e.value[0], e.std_error[0])
}

/// Runs the default one-dimensional suite on the `+-1` two-point target.
pub fn run_suite(opts: &SuiteOptions) -> CliResult<OracleReport> {
    let spec = MixtureSpec::two_point(1.0);
    let n = opts.mc_samples;
    let mut checks = Vec::new();
    let mut seed = opts.seed;
    let mut next_seed = || {
        seed = seed.wrapping_add(1);
        seed
    };

    for &z in &PROBE_Z {
        for &t in &PROBE_T {
            let (v, se) = scalar(&vfm_optimum(&spec, &probe(z, t, n, next_seed())?).context("vfm optimum")?);
            let exact = vfm_optimum_exact(&spec, &[z], t).context("closed form")?[0];
            checks.push(check(
                format!("vfm_optimum z={z} t={t}"),
                v,
                exact,
                se,
                MC_SIGMAS * se + 1e-12,
            ));
            if z == 0.0 {
                checks.push(check(
                    format!("symmetric probe z=0 t={t}"),
                    v,
                    0.0,
                    se,
                    MC_SIGMAS * se + 1e-12,
                ));
            }
        }
    }

    let (a, sa) = scalar(&vfm_optimum(&spec, &probe(0.4, 0.5, n, next_seed())?).context("replicate a")?);
    let (b, sb) = scalar(&vfm_optimum(&spec, &probe(0.4, 0.5, n, next_seed())?).context("replicate b")?);
    let combined = (sa * sa + sb * sb).sqrt();
    checks.push(check(
        "seed replication z=0.4 t=0.5",
        a,
        b,
        combined,
        MC_SIGMAS * combined,
    ));

    let kernel_probe = probe(0.4, 0.5, 4 * n, next_seed())?;
    let (k, sk) =
        scalar(&vfm_optimum_with(&spec, &kernel_probe, WeightScheme::kernel_for(0.5)).context("kernel estimate")?);
    let combined = (sk * sk + sa * sa).sqrt();
    checks.push(check(
        "kernel vs path weights z=0.4 t=0.5",
        k,
        a,
        combined,
        MC_SIGMAS * combined,
    ));

    // Two experts pre-set near the branch velocities.
    let (z, t) = (0.1, 0.5);
    let branch = |c: f64| (c - z) / (1.0 - t);
    let branch_model = constant_model(&[branch(1.0) - 0.05, branch(-1.0) + 0.05], &[0.0, 0.0], 0.05)?;
    let quad = quadrature_optima(&spec, z, t, Some(&branch_model)).context("quadrature")?;
    let mc = moefm_optima(&spec, &probe(z, t, n, next_seed())?, &branch_model).context("moefm optima")?;
    for k in 0..2 {
        let (pi, q) = (mc.pi[k], quad.pi[k]);
        let se = mc.pi_std_error[k];
        checks.push(check(
            format!("pi_hat[{k}] vs quadrature"),
            pi,
            q,
            se,
            (MC_SIGMAS * se).max(0.02 * q.abs()),
        ));
        let u = mc.u[k].as_ref().map_or(f64::NAN, |p| p[0]);
        let uq = quad.u[k].unwrap_or(f64::NAN);
        let se = mc.u_std_error[k].as_ref().map_or(f64::NAN, |p| p[0]);
        checks.push(check(
            format!("u_hat[{k}] vs quadrature"),
            u,
            uq,
            se,
            (MC_SIGMAS * se).max(0.02 * uq.abs()),
        ));
    }
    let gap = (quad.u[0].unwrap_or(0.0) - quad.u[1].unwrap_or(0.0)).abs();
    checks.push(check("branch experts separate", gap, 2.0 / (1.0 - t), 0.0, 0.5));

    let single = constant_model(&[0.3], &[0.0], 0.1)?;
    let p = probe(0.5, 0.5, n, next_seed())?;
    let collapse = moefm_optima(&spec, &p, &single).context("K=1 optima")?;
    let direct = vfm_optimum(&spec, &p).context("K=1 vfm")?;
    let u1 = collapse.u[0].as_ref().map_or(f64::NAN, |p| p[0]);
    checks.push(check("K=1 collapse u_hat", u1, direct.value[0], 0.0, 0.0));
    checks.push(check("K=1 collapse pi_hat", collapse.pi[0], 1.0, 0.0, 0.0));

    let three = constant_model(&[1.5, -0.5, -2.0], &[0.2, -0.1, 0.0], 0.5)?;
    let p = probe(0.2, 0.4, n, next_seed())?;
    let o = moefm_optima(&spec, &p, &three).context("total expectation")?;
    let v = vfm_optimum(&spec, &p).context("total expectation vfm")?;
    let mix: f64 =
        o.pi.iter()
            .zip(&o.u)
            .map(|(p, u)| p * u.as_ref().map_or(f64::NAN, |u| u[0]))
            .sum();
    checks.push(check("total expectation", mix, v.value[0], v.std_error[0], 1e-9));

    // Hard-assignment limit: distances (0.1, 0.9) to the target at sigma = 1e-4.
    let near_far = constant_model(&[0.1, 0.9], &[0.0, 0.5], 1e-4)?;
    let limit = sigma_zero_limit(&near_far, &[0.0], 0.3, &[0.0]).context("hard assignment")?;
    let mut gamma = near_far
        .responsibilities(&[0.0], 0.3, &[0.0])
        .context("responsibilities")?
        .gamma;
    if opts.corrupt_gamma {
        gamma.reverse();
    }
    let dev = gamma
        .iter()
        .zip(&limit.pi)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    checks.push(check("sigma->0 matches hard assignment", dev, 0.0, 0.0, 1e-6));

    checks.push(one_hot_check(opts.seed)?);

    let sweep = sigma_fixture(opts.seed)?;
    let last = sweep.rows.last().expect("three sweep rows");
    checks.push(check("sigma=1e3 |gamma - pi|_inf", last.max_deviation, 0.0, 0.0, 1e-3));
    checks.push(check(
        "sigma=1e3 expert gradient norm",
        last.expert_grad_norm,
        0.0,
        0.0,
        1e-6,
    ));
    checks.push(check(
        "sigma sweep monotone",
        f64::from(u8::from(sweep.passed())),
        1.0,
        0.0,
        0.0,
    ));

    Ok(OracleReport {
        passed: checks.iter().all(|c| c.passed),
        checks,
        sigma_sweep: sweep,
    })
}

fn small_experts(k: usize, sigma: f64, seed: u64) -> CliResult<MoeFlowModel> {
    let cfg = TrainConfig {
        hidden: vec![6],
        seed,
        activation: Activation::Tanh,
        ..TrainConfig::default()
    };
    MoeFlowModel::init(1, k, sigma, &cfg, &[4]).context("fixture experts")
}

fn fixture_batch(seed: u64) -> CliResult<TrainBatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
    TrainBatch::draw(&MixtureSpec::two_point(1.0), 128, 1e-3, &mut rng).context("fixture batch")
}

/// At `sigma = 1e-3` the nearest expert takes all responsibility whenever the
/// two smallest distances differ by at least 0.1.
fn one_hot_check(seed: u64) -> CliResult<Check> {
    let model = small_experts(3, 1e-3, seed.wrapping_add(1))?;
    let batch = fixture_batch(seed)?;
    let mut worst: f64 = 1.0;
    for i in 0..batch.len() {
        let z = batch.z_t.row(i).to_vec();
        let target = batch.u_star.row(i).to_vec();
        let us = model.expert_velocities(&z, batch.t[i]).context("experts")?;
        let mut d: Vec<f64> = us.iter().map(|u| (u[0] - target[0]).abs()).collect();
        d.sort_by(f64::total_cmp);
        if d[1] - d[0] < 0.1 {
            continue;
        }
        let g = model
            .responsibilities(&z, batch.t[i], &target)
            .context("responsibilities")?;
        worst = worst.min(g.gamma.iter().copied().fold(0.0, f64::max));
    }
    Ok(check("sigma=1e-3 responsibilities one-hot", worst, 1.0, 0.0, 1e-6))
}

/// Sweep fixture: three small tanh experts on a +-1 batch.
pub fn sigma_fixture(seed: u64) -> CliResult<SigmaSweep> {
    let model = small_experts(3, 0.1, seed.wrapping_add(1))?;
    sigma_inf_limit_check(&model, &fixture_batch(seed)?).context("sigma sweep")
}
