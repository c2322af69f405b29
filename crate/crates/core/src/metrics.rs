//! Sample-quality and transport metrics.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::{MixtureSpec, SampleSet};
use crate::error::{check_dim, Error, Result};
use crate::flow::Trajectory;

/// Kernel bandwidths for the summed RBF kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MmdConfig {
    pub bandwidths: Vec<f64>,
}

impl Default for MmdConfig {
    fn default() -> Self {
        Self {
            bandwidths: vec![0.2, 0.5, 1.0, 2.0, 5.0],
        }
    }
}

impl MmdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bandwidths.is_empty() || !self.bandwidths.iter().all(|s| s.is_finite() && *s > 0.0) {
            return Err(Error::InvalidConfig(
                "MMD bandwidths must be a nonempty list of positive reals".into(),
            ));
        }
        Ok(())
    }

    fn coefficients(&self) -> Vec<f64> {
        self.bandwidths.iter().map(|s| -1.0 / (2.0 * s * s)).collect()
    }
}

#[inline]
fn kernel(coef: &[f64], d2: f64) -> f64 {
    coef.iter().map(|c| (c * d2).exp()).sum()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn rows(set: &SampleSet) -> Vec<Vec<f64>> {
    set.points.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// `sum_{i != j} k(x_i, x_j)`, rows in parallel, reduced in index order.
fn within_sum(xs: &[Vec<f64>], coef: &[f64]) -> f64 {
    crate::par_map(xs.len(), |i| {
        (i + 1..xs.len())
            .map(|j| kernel(coef, sq_dist(&xs[i], &xs[j])))
            .sum::<f64>()
    })
    .into_iter()
    .sum::<f64>()
        * 2.0
}

fn cross_sum(xs: &[Vec<f64>], ys: &[Vec<f64>], coef: &[f64]) -> f64 {
    crate::par_map(xs.len(), |i| {
        ys.iter().map(|y| kernel(coef, sq_dist(&xs[i], y))).sum::<f64>()
    })
    .into_iter()
    .sum()
}

fn check_sets(x: &SampleSet, y: &SampleSet) -> Result<()> {
    if x.len() < 2 || y.len() < 2 {
        return Err(Error::InvalidSpec(format!(
            "unbiased MMD needs at least 2 points per set, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    check_dim(x.dim(), y.dim())
}

/// Unbiased squared MMD. Negative values are returned as-is.
pub fn mmd2_unbiased(x: &SampleSet, y: &SampleSet, cfg: &MmdConfig) -> Result<f64> {
    cfg.validate()?;
    check_sets(x, y)?;
    let coef = cfg.coefficients();
    let (xs, ys) = (rows(x), rows(y));
    let (n, m) = (xs.len() as f64, ys.len() as f64);
    Ok(
        within_sum(&xs, &coef) / (n * (n - 1.0)) + within_sum(&ys, &coef) / (m * (m - 1.0))
            - 2.0 * cross_sum(&xs, &ys, &coef) / (n * m),
    )
}

/// A reference set with its within-sample term cached, for repeated comparisons.
#[derive(Debug, Clone)]
pub struct MmdReference {
    rows: Vec<Vec<f64>>,
    within: f64,
    cfg: MmdConfig,
}

impl MmdReference {
    pub fn new(y: &SampleSet, cfg: MmdConfig) -> Result<Self> {
        cfg.validate()?;
        check_sets(y, y)?;
        let rows = rows(y);
        let m = rows.len() as f64;
        let within = within_sum(&rows, &cfg.coefficients()) / (m * (m - 1.0));
        Ok(Self { rows, within, cfg })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Same value as `mmd2_unbiased(x, reference)`.
    pub fn mmd2(&self, x: &SampleSet) -> Result<f64> {
        if x.len() < 2 {
            return Err(Error::InvalidSpec(
                "unbiased MMD needs at least 2 generated points".into(),
            ));
        }
        check_dim(self.rows[0].len(), x.dim())?;
        let coef = self.cfg.coefficients();
        let xs = rows(x);
        let (n, m) = (xs.len() as f64, self.rows.len() as f64);
        Ok(within_sum(&xs, &coef) / (n * (n - 1.0)) + self.within - 2.0 * cross_sum(&xs, &self.rows, &coef) / (n * m))
    }
}

/// Permutation two-sample test on the MMD statistic.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PermutationTest {
    pub statistic: f64,
    /// `(1 - alpha)` quantile of the permutation null.
    pub threshold: f64,
    pub alpha: f64,
    pub permutations: usize,
    pub rejects: bool,
}

pub fn permutation_test(
    x: &SampleSet,
    y: &SampleSet,
    cfg: &MmdConfig,
    permutations: usize,
    alpha: f64,
    seed: u64,
) -> Result<PermutationTest> {
    cfg.validate()?;
    check_sets(x, y)?;
    if permutations == 0 || !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidConfig(
            "need at least one permutation and alpha in (0, 1)".into(),
        ));
    }
    let coef = cfg.coefficients();
    let pooled: Vec<Vec<f64>> = rows(x).into_iter().chain(rows(y)).collect();
    let total = pooled.len();
    let gram: Vec<Vec<f64>> = crate::par_map(total, |i| {
        (0..total)
            .map(|j| {
                if i == j {
                    0.0
                } else {
                    kernel(&coef, sq_dist(&pooled[i], &pooled[j]))
                }
            })
            .collect()
    });
    let n = x.len();
    let stat_for = |idx: &[usize]| {
        let (a, b) = idx.split_at(n);
        let block =
            |p: &[usize], q: &[usize]| -> f64 { p.iter().map(|&i| q.iter().map(|&j| gram[i][j]).sum::<f64>()).sum() };
        let (nf, mf) = (a.len() as f64, b.len() as f64);
        block(a, a) / (nf * (nf - 1.0)) + block(b, b) / (mf * (mf - 1.0)) - 2.0 * block(a, b) / (nf * mf)
    };
    let identity: Vec<usize> = (0..total).collect();
    let statistic = stat_for(&identity);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let orders: Vec<Vec<usize>> = (0..permutations)
        .map(|_| {
            let mut p = identity.clone();
            p.shuffle(&mut rng);
            p
        })
        .collect();
    let mut null: Vec<f64> = crate::par_map(permutations, |i| stat_for(&orders[i]));
    null.sort_by(f64::total_cmp);
    let rank = (((1.0 - alpha) * permutations as f64).ceil() as usize).clamp(1, permutations) - 1;
    let threshold = null[rank];
    Ok(PermutationTest {
        statistic,
        threshold,
        alpha,
        permutations,
        rejects: statistic > threshold,
    })
}

/// Arc length over chord length of a trajectory.
pub fn straightness(traj: &Trajectory) -> Result<f64> {
    if traj.states.len() < 2 {
        return Err(Error::InvalidSpec("straightness needs at least two states".into()));
    }
    let arc: f64 = traj.states.windows(2).map(|w| sq_dist(&w[0].1, &w[1].1).sqrt()).sum();
    let chord = sq_dist(traj.start(), traj.end()).sqrt();
    if chord == 0.0 {
        return Err(Error::InvalidSpec(
            "straightness undefined for a zero-length chord".into(),
        ));
    }
    Ok(arc / chord)
}

/// Mean and max straightness over a set of trajectories.
pub fn straightness_summary(trajs: &[Trajectory]) -> Result<(f64, f64)> {
    if trajs.is_empty() {
        return Err(Error::InvalidSpec("no trajectories to summarise".into()));
    }
    let vals = trajs.iter().map(straightness).collect::<Result<Vec<_>>>()?;
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    Ok((mean, vals.iter().copied().fold(f64::NEG_INFINITY, f64::max)))
}

/// Fraction of components with a sample within `radius` of their mean.
/// `radius = None` uses three times each component's std.
pub fn mode_coverage(samples: &SampleSet, spec: &MixtureSpec, radius: Option<f64>) -> Result<f64> {
    if matches!(spec, MixtureSpec::Halfmoon { .. }) {
        return Err(Error::Unsupported(
            "mode coverage needs a grid or explicit mixture".into(),
        ));
    }
    if let Some(r) = radius {
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::InvalidConfig(format!("coverage radius must be > 0, got {r}")));
        }
    }
    check_dim(spec.dim(), samples.dim())?;
    let comps = spec.components()?;
    let mut covered = 0;
    for c in &comps {
        let r = radius.unwrap_or(3.0 * c.std);
        if !(r > 0.0) {
            return Err(Error::InvalidConfig(
                "default radius is zero for a point-mass component".into(),
            ));
        }
        if samples
            .points
            .rows()
            .into_iter()
            .any(|x| sq_dist(x.as_slice().expect("row"), &c.mean) <= r * r)
        {
            covered += 1;
        }
    }
    Ok(covered as f64 / comps.len() as f64)
}

/// Evaluation summary for one generated set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mmd2: f64,
    pub straightness_mean: Option<f64>,
    pub straightness_max: Option<f64>,
    /// `None` for targets without mixture components.
    pub mode_coverage: Option<f64>,
    pub n_samples: usize,
    pub steps: Option<usize>,
}
