//! Vanilla flow matching along the linear path `z_t = t z1 + (1 - t) z0`.

use ndarray::{Array2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, FlowModel};
use crate::datasets::{MixtureSpec, SampleSet};
use crate::error::{check_dim, Error, Result};
use crate::nnet::{
    field_layer_sizes, loss_gradients, network_inputs, Activation, AdamWConfig, LossAndGrads, MlpNet, OptimState,
};
use crate::point::Point;

/// `t z1 + (1 - t) z0`.
pub fn interpolate(z0: &[f64], z1: &[f64], t: f64) -> Result<Point> {
    check_dim(z0.len(), z1.len())?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidSpec(format!("time {t} outside [0, 1]")));
    }
    Ok(z0
        .iter()
        .zip(z1)
        .map(|(a, b)| t * b + (1.0 - t) * a)
        .collect::<Vec<_>>()
        .into())
}

/// Regression target `z1 - z0`.
pub fn target_velocity(z0: &[f64], z1: &[f64]) -> Result<Point> {
    check_dim(z0.len(), z1.len())?;
    Ok(z0.iter().zip(z1).map(|(a, b)| b - a).collect::<Vec<_>>().into())
}

/// A minibatch of path samples with their regression targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainBatch {
    pub z0: Array2<f64>,
    pub z1: Array2<f64>,
    pub t: Vec<f64>,
    pub z_t: Array2<f64>,
    pub u_star: Array2<f64>,
}

impl TrainBatch {
    pub fn new(z0: Array2<f64>, z1: Array2<f64>, t: Vec<f64>) -> Result<Self> {
        check_dim(z0.nrows(), z1.nrows())?;
        check_dim(z0.ncols(), z1.ncols())?;
        check_dim(z0.nrows(), t.len())?;
        if let Some(bad) = t.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidSpec(format!("time {bad} outside [0, 1]")));
        }
        let mut z_t = Array2::zeros(z0.raw_dim());
        for (i, &ti) in t.iter().enumerate() {
            Zip::from(z_t.row_mut(i))
                .and(z0.row(i))
                .and(z1.row(i))
                .for_each(|zt, &a, &b| *zt = ti * b + (1.0 - ti) * a);
        }
        let u_star = &z1 - &z0;
        Ok(Self { z0, z1, t, z_t, u_star })
    }

    /// Fresh batch: `z1 ~ spec`, `z0 ~ N(0, I)`, `t ~ U(eps, 1 - eps)`.
    pub fn draw<R: Rng>(spec: &MixtureSpec, n: usize, t_epsilon: f64, rng: &mut R) -> Result<Self> {
        let z1 = spec.sample_with(n, rng)?;
        let z0 = Array2::from_shape_simple_fn(z1.raw_dim(), || rng.sample(StandardNormal));
        let t = (0..n).map(|_| rng.random_range(t_epsilon..(1.0 - t_epsilon))).collect();
        Self::new(z0, z1, t)
    }

    /// Like [`TrainBatch::draw`] but the second half of the rows negates the
    /// first half's `(z0, z1)` at the same `t`. Needs a target symmetric under
    /// `x -> -x` and an even `n`.
    pub fn draw_antithetic<R: Rng>(spec: &MixtureSpec, n: usize, t_epsilon: f64, rng: &mut R) -> Result<Self> {
        if !n.is_multiple_of(2) {
            return Err(Error::InvalidConfig(
                "antithetic batches need an even batch size".into(),
            ));
        }
        if !spec.is_point_symmetric()? {
            return Err(Error::InvalidConfig(
                "antithetic batches need a target symmetric under negation".into(),
            ));
        }
        let half = Self::draw(spec, n / 2, t_epsilon, rng)?;
        let z0 = ndarray::concatenate![Axis(0), half.z0, half.z0.mapv(|v| -v)];
        let z1 = ndarray::concatenate![Axis(0), half.z1, half.z1.mapv(|v| -v)];
        let t = half.t.iter().chain(&half.t).copied().collect();
        Self::new(z0, z1, t)
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Network inputs `[z_t | embed(t)]`.
    pub fn inputs(&self) -> Array2<f64> {
        network_inputs(self.z_t.view(), &self.t).expect("batch rows are consistent")
    }
}

/// Anything that can be integrated by the Euler stepper.
pub trait VectorField {
    fn dim(&self) -> usize;
    fn velocity(&self, z: &[f64], t: f64) -> Result<Vec<f64>>;
}

impl VectorField for MlpNet {
    fn dim(&self) -> usize {
        self.state_dim()
    }

    fn velocity(&self, z: &[f64], t: f64) -> Result<Vec<f64>> {
        self.forward(z, t)
    }
}

/// A field given by a closure; handy for analytic checks.
pub struct FnField<F> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(&[f64], f64) -> Vec<f64>> VectorField for FnField<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn velocity(&self, z: &[f64], t: f64) -> Result<Vec<f64>> {
        Ok((self.f)(z, t))
    }
}

/// Ordered `(t, z_t)` states from `t = 0` to `t = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<(f64, Point)>,
    pub expert_id: Option<usize>,
    pub steps: usize,
}

impl Trajectory {
    pub fn start(&self) -> &Point {
        &self.states[0].1
    }

    pub fn end(&self) -> &Point {
        &self.states[self.states.len() - 1].1
    }
}

/// Explicit Euler with `steps` uniform steps on `[0, 1]`.
pub fn euler_sample<F: VectorField + ?Sized>(field: &F, z0: &Point, steps: usize) -> Result<Trajectory> {
    if steps == 0 {
        return Err(Error::InvalidConfig("Euler sampling needs at least one step".into()));
    }
    check_dim(field.dim(), z0.dim())?;
    let dt = 1.0 / steps as f64;
    let mut states = Vec::with_capacity(steps + 1);
    let mut z = z0.clone();
    states.push((0.0, z.clone()));
    for i in 0..steps {
        let t = i as f64 / steps as f64;
        let u = field.velocity(&z, t)?;
        check_dim(z.dim(), u.len())?;
        for (zj, uj) in z.iter_mut().zip(&u) {
            *zj += dt * uj;
        }
        if !z.is_finite() {
            return Err(Error::NonFiniteState { step: i });
        }
        states.push(((i + 1) as f64 / steps as f64, z.clone()));
    }
    Ok(Trajectory {
        states,
        expert_id: None,
        steps,
    })
}

/// Mean over rows of `|u_pred - u_star|^2`.
pub fn vfm_loss(field: &MlpNet, batch: &TrainBatch) -> Result<f64> {
    let pred = field.forward_batch(batch.inputs().view())?.into_output();
    squared_error_loss(&pred, &batch.u_star).map(|(l, _)| l)
}

/// [`vfm_loss`] together with exact parameter gradients.
pub fn vfm_loss_and_grads(field: &MlpNet, batch: &TrainBatch) -> Result<LossAndGrads> {
    loss_gradients(&[field], batch.inputs().view(), |outs| {
        let (loss, d) = squared_error_loss(outs[0], &batch.u_star)?;
        Ok((loss, vec![d]))
    })
}

fn squared_error_loss(pred: &Array2<f64>, target: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    check_dim(target.ncols(), pred.ncols())?;
    check_dim(target.nrows(), pred.nrows())?;
    let n = pred.nrows() as f64;
    let diff = pred - target;
    let mut total = 0.0;
    for (i, row) in diff.rows().into_iter().enumerate() {
        let r: f64 = row.iter().map(|v| v * v).sum();
        if !r.is_finite() {
            return Err(Error::NonFiniteLoss { row: Some(i) });
        }
        total += r;
    }
    Ok((total / n, diff * (2.0 / n)))
}

/// Optimisation settings shared by VFM and MoE-FM training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub optimizer: AdamWConfig,
    /// Times are drawn from `U(t_epsilon, 1 - t_epsilon)`.
    pub t_epsilon: f64,
    /// Draw antithetic batches (see [`TrainBatch::draw_antithetic`]).
    pub antithetic: bool,
    pub schedule: LrSchedule,
}

/// Learning-rate multiplier: linear warmup from 0, then linear interpolation
/// from 1 at the end of warmup to `final_fraction` at the last step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrSchedule {
    pub warmup_steps: usize,
    pub final_fraction: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            warmup_steps: 0,
            final_fraction: 1.0,
        }
    }
}

impl LrSchedule {
    pub fn factor(&self, step: usize, total: usize) -> f64 {
        if step < self.warmup_steps {
            return (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = total.saturating_sub(self.warmup_steps + 1);
        if span == 0 {
            return 1.0;
        }
        let frac = (step - self.warmup_steps) as f64 / span as f64;
        1.0 + (self.final_fraction - 1.0) * frac.min(1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.final_fraction >= 0.0 && self.final_fraction.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "final_fraction must be finite and >= 0, got {}",
                self.final_fraction
            )));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            batch_size: 256,
            seed: 0,
            hidden: vec![128, 128, 128],
            activation: Activation::Tanh,
            optimizer: AdamWConfig::default(),
            t_epsilon: 1e-3,
            antithetic: false,
            schedule: LrSchedule::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidConfig("steps must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::InvalidConfig("hidden widths must be positive".into()));
        }
        if !(self.t_epsilon >= 0.0 && self.t_epsilon < 0.5) {
            return Err(Error::InvalidConfig(format!(
                "t_epsilon {} outside [0, 0.5)",
                self.t_epsilon
            )));
        }
        if self.antithetic && !self.batch_size.is_multiple_of(2) {
            return Err(Error::InvalidConfig(
                "antithetic batches need an even batch size".into(),
            ));
        }
        self.schedule.validate()?;
        self.optimizer.validate()
    }
}

/// SplitMix64 step, used to derive independent seeds from a master seed.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed tag for the `k`-th field (the VFM field is field 0).
pub(crate) const FIELD_TAG: u64 = 1;
pub(crate) const GATE_TAG: u64 = 2;
const DATA_STREAM: u64 = 7;

/// Shared minibatch loop: draws batches, evaluates `loss`, steps AdamW on every net.
pub(crate) fn run_training<L, C>(
    nets: &mut [MlpNet],
    spec: &MixtureSpec,
    cfg: &TrainConfig,
    mut loss: L,
    to_checkpoint: C,
) -> Result<Vec<f64>>
where
    L: FnMut(&[MlpNet], &TrainBatch) -> Result<(f64, Vec<crate::nnet::Gradients>)>,
    C: Fn(&[MlpNet]) -> FlowModel,
{
    cfg.validate()?;
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(DATA_STREAM);
    let mut states = nets
        .iter()
        .map(|n| OptimState::new(n, cfg.optimizer))
        .collect::<Result<Vec<_>>>()?;
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch = if cfg.antithetic {
            TrainBatch::draw_antithetic(spec, cfg.batch_size, cfg.t_epsilon, &mut rng)?
        } else {
            TrainBatch::draw(spec, cfg.batch_size, cfg.t_epsilon, &mut rng)?
        };
        let diverged = |nets: &[MlpNet]| Error::Diverged {
            step,
            last_finite: Box::new(Checkpoint {
                model: to_checkpoint(nets),
                seed: cfg.seed,
            }),
        };
        let (value, grads) = match loss(nets, &batch) {
            Ok(v) => v,
            Err(Error::NonFiniteLoss { .. } | Error::NonFiniteLayer { .. }) => {
                return Err(diverged(nets));
            }
            Err(e) => return Err(e),
        };
        if !grads.iter().all(|g| g.is_finite()) {
            return Err(diverged(nets));
        }
        let lr = cfg.optimizer.learning_rate * cfg.schedule.factor(step, cfg.steps);
        for ((net, st), g) in nets.iter_mut().zip(&mut states).zip(&grads) {
            st.set_learning_rate(lr);
            st.step(net, g)?;
        }
        if step % 1000 == 0 {
            log::debug!("step {step}: loss {value:.6}");
        }
        losses.push(value);
    }
    Ok(losses)
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct VfmOutcome {
    pub field: MlpNet,
    /// Minibatch loss at every step, before that step's update.
    pub losses: Vec<f64>,
}

/// Fresh (untrained) VFM field for a `dim`-dimensional target.
pub fn init_field(dim: usize, cfg: &TrainConfig) -> Result<MlpNet> {
    MlpNet::new(
        &field_layer_sizes(dim, &cfg.hidden, dim),
        cfg.activation,
        derive_seed(cfg.seed, FIELD_TAG),
    )
}

/// Minimises the VFM regression loss by AdamW on fresh minibatches.
pub fn train_vfm(spec: &MixtureSpec, cfg: &TrainConfig) -> Result<VfmOutcome> {
    spec.validate()?;
    let mut nets = vec![init_field(spec.dim(), cfg)?];
    let losses = run_training(
        &mut nets,
        spec,
        cfg,
        |nets, batch| {
            let r = vfm_loss_and_grads(&nets[0], batch)?;
            Ok((r.loss, r.grads))
        },
        |nets| FlowModel::Vfm(nets[0].clone()),
    )?;
    Ok(VfmOutcome {
        field: nets.pop().expect("one field"),
        losses,
    })
}

/// Pushes `n` noise draws through a single field; draw `i` uses RNG stream `i`.
pub fn generate_vfm(field: &MlpNet, n: usize, steps: usize, seed: u64) -> Result<(SampleSet, Vec<Trajectory>)> {
    let dim = field.state_dim();
    let results = crate::par_map(n, |i| {
        let z0 = noise_for_index(seed, i as u64, dim).0;
        euler_sample(field, &z0, steps).map(|mut tr| {
            tr.expert_id = Some(0);
            tr
        })
    });
    let g = crate::moefm::collect_generated(results, dim)?;
    Ok((g.samples, g.trajectories))
}

/// Initial noise and the generator positioned after it, for sample `index`.
pub(crate) fn noise_for_index(seed: u64, index: u64, dim: usize) -> (Point, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let z0: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    (Point(z0), rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn interpolation_examples() {
        assert_eq!(interpolate(&[0.0, 0.0], &[2.0, 4.0], 0.5).unwrap().0, vec![1.0, 2.0]);
        assert_eq!(interpolate(&[1.0, -1.0], &[3.0, 1.0], 0.25).unwrap().0, vec![1.5, -0.5]);
        let (a, b) = ([0.3, -7.0], [2.5, 1.25]);
        assert_eq!(interpolate(&a, &b, 0.0).unwrap().0, a.to_vec());
        assert_eq!(interpolate(&a, &b, 1.0).unwrap().0, b.to_vec());
        assert!(interpolate(&a, &[1.0], 0.5).is_err());
        assert!(interpolate(&a, &b, 1.5).is_err());
    }

    #[test]
    fn target_velocity_examples() {
        assert_eq!(target_velocity(&[1.0, 2.0], &[1.0, 2.0]).unwrap().0, vec![0.0, 0.0]);
        assert_eq!(target_velocity(&[0.0, 0.0], &[1.0, 1.0]).unwrap().0, vec![1.0, 1.0]);
        assert_eq!(target_velocity(&[-2.0, 3.0], &[4.0, -1.0]).unwrap().0, vec![6.0, -4.0]);
        assert!(target_velocity(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn batch_invariants() {
        let b = TrainBatch::new(
            array![[0.0, 1.0], [2.0, -2.0]],
            array![[1.0, 1.0], [0.0, 0.0]],
            vec![0.5, 0.25],
        )
        .unwrap();
        assert_eq!(b.z_t, array![[0.5, 1.0], [1.5, -1.5]]);
        assert_eq!(b.u_star, array![[1.0, 0.0], [-2.0, 2.0]]);
        assert!(TrainBatch::new(array![[0.0]], array![[1.0]], vec![0.1, 0.2]).is_err());
    }

    fn zero_field(dim: usize) -> MlpNet {
        MlpNet::zeros(&field_layer_sizes(dim, &[4], dim), Activation::Tanh).unwrap()
    }

    #[test]
    fn vfm_loss_zero_field_single_row() {
        let b = TrainBatch::new(array![[0.0, 0.0]], array![[1.0, 1.0]], vec![0.3]).unwrap();
        assert_abs_diff_eq!(vfm_loss(&zero_field(2), &b).unwrap(), 2.0, epsilon = 1e-15);
    }

    #[test]
    fn vfm_loss_is_zero_for_exact_predictions() {
        // A zero field is exact when every target is zero.
        let z = array![[0.4, -1.0], [2.0, 0.5]];
        let b = TrainBatch::new(z.clone(), z, vec![0.2, 0.9]).unwrap();
        assert_eq!(vfm_loss(&zero_field(2), &b).unwrap(), 0.0);
    }

    #[test]
    fn vfm_loss_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let b = TrainBatch::draw(&MixtureSpec::grid_default(), 16, 1e-3, &mut rng).unwrap();
        let net = MlpNet::new(&field_layer_sizes(2, &[8], 2), Activation::Tanh, 1).unwrap();
        let perm: Vec<usize> = (0..16).rev().collect();
        let pick = |a: &Array2<f64>| a.select(ndarray::Axis(0), &perm);
        let t: Vec<f64> = perm.iter().map(|&i| b.t[i]).collect();
        let shuffled = TrainBatch::new(pick(&b.z0), pick(&b.z1), t).unwrap();
        assert_abs_diff_eq!(
            vfm_loss(&net, &b).unwrap(),
            vfm_loss(&net, &shuffled).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn euler_constant_field_is_exact() {
        let f = FnField {
            dim: 2,
            f: |_: &[f64], _| vec![1.0, 0.0],
        };
        for steps in [1, 3, 4, 8] {
            let tr = euler_sample(&f, &Point::zeros(2), steps).unwrap();
            assert_eq!(tr.end().0, vec![1.0, 0.0]);
            assert_eq!(tr.states.len(), steps + 1);
            assert_eq!(tr.states[0].0, 0.0);
            assert_eq!(tr.states[steps].0, 1.0);
        }
    }

    #[test]
    fn euler_linear_decay_recurrence() {
        let f = FnField {
            dim: 1,
            f: |z: &[f64], _| vec![-z[0]],
        };
        let tr = euler_sample(&f, &Point(vec![1.0]), 4).unwrap();
        assert_eq!(tr.end().0[0], 0.316_406_25);
        for (i, (t, _)) in tr.states.iter().enumerate() {
            assert_abs_diff_eq!(*t, i as f64 / 4.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn euler_reports_blow_up_step() {
        let f = FnField {
            dim: 1,
            f: |z: &[f64], _| vec![z[0] * 1e300],
        };
        let err = euler_sample(&f, &Point(vec![1e10]), 4).unwrap_err();
        assert!(matches!(err, Error::NonFiniteState { step: 0 }), "{err}");
        assert!(euler_sample(&f, &Point(vec![1.0]), 0).is_err());
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(0, 1), derive_seed(0, 2));
        assert_ne!(derive_seed(0, 1), derive_seed(1, 1));
        assert_eq!(derive_seed(5, 3), derive_seed(5, 3));
    }

    #[test]
    fn degenerate_target_training_clusters_samples() {
        let c = [1.0, -0.5];
        let cfg = TrainConfig {
            steps: 600,
            batch_size: 64,
            hidden: vec![32, 32],
            optimizer: AdamWConfig {
                learning_rate: 3e-3,
                ..AdamWConfig::default()
            },
            ..TrainConfig::default()
        };
        let out = train_vfm(&MixtureSpec::point_mass(&c), &cfg).unwrap();
        let (samples, _) = generate_vfm(&out.field, 200, 4, 3).unwrap();
        for j in 0..2 {
            let mean = samples.points.column(j).sum() / 200.0;
            assert!((mean - c[j]).abs() < 0.1, "coord {j} mean {mean}");
        }
        let head: f64 = out.losses[..50].iter().sum::<f64>() / 50.0;
        let tail: f64 = out.losses[out.losses.len() - 50..].iter().sum::<f64>() / 50.0;
        assert!(tail < head, "loss did not decrease: {head} -> {tail}");
    }

    #[test]
    fn schedule_warms_up_then_decays() {
        let s = LrSchedule {
            warmup_steps: 4,
            final_fraction: 0.0,
        };
        assert_eq!(s.factor(0, 14), 0.25);
        assert_eq!(s.factor(3, 14), 1.0);
        assert_eq!(s.factor(4, 14), 1.0);
        assert!((s.factor(9, 14) - 4.0 / 9.0).abs() < 1e-15);
        assert_eq!(s.factor(13, 14), 0.0);
        let flat = LrSchedule::default();
        assert!((0..10).all(|i| flat.factor(i, 10) == 1.0));
        assert!(LrSchedule {
            warmup_steps: 0,
            final_fraction: -0.1
        }
        .validate()
        .is_err());
    }

    #[test]
    fn antithetic_rows_mirror() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let b = TrainBatch::draw_antithetic(&MixtureSpec::two_point(1.0), 6, 1e-3, &mut rng).unwrap();
        for i in 0..3 {
            assert_eq!(b.z0[[i + 3, 0]], -b.z0[[i, 0]]);
            assert_eq!(b.z1[[i + 3, 0]], -b.z1[[i, 0]]);
            assert_eq!(b.t[i + 3], b.t[i]);
        }
        assert!(TrainBatch::draw_antithetic(&MixtureSpec::two_point(1.0), 5, 1e-3, &mut rng).is_err());
        assert!(TrainBatch::draw_antithetic(&MixtureSpec::point_mass(&[1.0]), 4, 1e-3, &mut rng).is_err());
        let odd = TrainConfig {
            antithetic: true,
            batch_size: 7,
            ..TrainConfig::default()
        };
        assert!(odd.validate().is_err());
    }
}
