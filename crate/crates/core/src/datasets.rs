//! Synthetic target distributions: a square lattice of Gaussians, two
//! interleaved half-moons, and explicit isotropic Gaussian mixtures.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::point::Point;

/// One isotropic Gaussian component. `std = 0` is a point mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub std: f64,
}

/// Analytic description of a target distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum MixtureSpec {
    /// `side x side` equal-weight lattice on `[-half_width, half_width]^2`.
    Grid {
        side: usize,
        half_width: f64,
        std: f64,
    },
    /// Two interleaved unit-style half circles with Gaussian noise.
    Halfmoon {
        radius: f64,
        noise_std: f64,
        vertical_offset: f64,
        horizontal_offset: f64,
    },
    Explicit {
        components: Vec<Component>,
    },
}

impl Default for MixtureSpec {
    fn default() -> Self {
        MixtureSpec::grid_default()
    }
}

impl MixtureSpec {
    /// 5x5 lattice on `[-2, 2]^2`, component std 0.05.
    pub fn grid_default() -> Self {
        MixtureSpec::Grid {
            side: 5,
            half_width: 2.0,
            std: 0.05,
        }
    }

    /// Unit radius, noise 0.08, inner arc centred at `(1, 0.5)` before recentring.
    pub fn halfmoon_default() -> Self {
        MixtureSpec::Halfmoon {
            radius: 1.0,
            noise_std: 0.08,
            vertical_offset: 0.5,
            horizontal_offset: 1.0,
        }
    }

    /// Equal-weight point masses at `+c` and `-c` in one dimension.
    pub fn two_point(c: f64) -> Self {
        MixtureSpec::Explicit {
            components: vec![
                Component {
                    weight: 0.5,
                    mean: vec![-c],
                    std: 0.0,
                },
                Component {
                    weight: 0.5,
                    mean: vec![c],
                    std: 0.0,
                },
            ],
        }
    }

    pub fn point_mass(at: &[f64]) -> Self {
        MixtureSpec::Explicit {
            components: vec![Component {
                weight: 1.0,
                mean: at.to_vec(),
                std: 0.0,
            }],
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            MixtureSpec::Grid { .. } => "grid",
            MixtureSpec::Halfmoon { .. } => "halfmoon",
            MixtureSpec::Explicit { .. } => "explicit",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            MixtureSpec::Grid { .. } | MixtureSpec::Halfmoon { .. } => 2,
            MixtureSpec::Explicit { components } => components.first().map_or(0, |c| c.mean.len()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        match self {
            MixtureSpec::Grid { side, half_width, std } => {
                if *side == 0 {
                    return bad("grid side must be at least 1".into());
                }
                if !(half_width.is_finite() && *half_width >= 0.0) {
                    return bad(format!("grid half_width must be finite and >= 0, got {half_width}"));
                }
                if !(std.is_finite() && *std >= 0.0) {
                    return bad(format!("grid std must be finite and >= 0, got {std}"));
                }
            }
            MixtureSpec::Halfmoon {
                radius,
                noise_std,
                vertical_offset,
                horizontal_offset,
            } => {
                if !(radius.is_finite() && *radius > 0.0) {
                    return bad(format!("halfmoon radius must be > 0, got {radius}"));
                }
                if !(noise_std.is_finite() && *noise_std >= 0.0) {
                    return bad(format!("halfmoon noise_std must be >= 0, got {noise_std}"));
                }
                if !(vertical_offset.is_finite() && horizontal_offset.is_finite()) {
                    return bad("halfmoon offsets must be finite".into());
                }
            }
            MixtureSpec::Explicit { components } => {
                if components.is_empty() {
                    return bad("explicit mixture has no components".into());
                }
                let dim = components[0].mean.len();
                if dim == 0 {
                    return bad("component means must have dimension >= 1".into());
                }
                let mut total = 0.0;
                for (i, c) in components.iter().enumerate() {
                    if c.mean.len() != dim {
                        return bad(format!("component {i} has dimension {}, expected {dim}", c.mean.len()));
                    }
                    if !(c.weight.is_finite() && c.weight >= 0.0) {
                        return bad(format!("component {i} has invalid weight {}", c.weight));
                    }
                    if !(c.std.is_finite() && c.std >= 0.0) {
                        return bad(format!("component {i} has invalid std {}", c.std));
                    }
                    if !c.mean.iter().all(|v| v.is_finite()) {
                        return bad(format!("component {i} has a non-finite mean"));
                    }
                    total += c.weight;
                }
                if (total - 1.0).abs() > 1e-12 {
                    return bad(format!("component weights sum to {total}, expected 1"));
                }
            }
        }
        Ok(())
    }

    /// Gaussian components; the grid expands to its lattice.
    pub fn components(&self) -> Result<Vec<Component>> {
        self.validate()?;
        match self {
            MixtureSpec::Grid { side, half_width, std } => {
                let coord = |i: usize| {
                    if *side == 1 {
                        0.0
                    } else {
                        -half_width + 2.0 * half_width * i as f64 / (*side - 1) as f64
                    }
                };
                let w = 1.0 / (side * side) as f64;
                let mut out = Vec::with_capacity(side * side);
                for i in 0..*side {
                    for j in 0..*side {
                        out.push(Component {
                            weight: w,
                            mean: vec![coord(i), coord(j)],
                            std: *std,
                        });
                    }
                }
                Ok(out)
            }
            MixtureSpec::Explicit { components } => Ok(components.clone()),
            MixtureSpec::Halfmoon { .. } => Err(Error::Unsupported(
                "half-moon target has no Gaussian-mixture form".into(),
            )),
        }
    }

    /// Whether the law of `-X` equals the law of `X`.
    pub fn is_point_symmetric(&self) -> Result<bool> {
        self.validate()?;
        match self {
            // Lattices are centred and the two arcs are point reflections of each other.
            MixtureSpec::Grid { .. } | MixtureSpec::Halfmoon { .. } => Ok(true),
            MixtureSpec::Explicit { components } => Ok(components.iter().all(|c| {
                components.iter().any(|d| {
                    d.weight == c.weight && d.std == c.std && d.mean.iter().zip(&c.mean).all(|(a, b)| *a == -*b)
                })
            })),
        }
    }

    /// Distance from `x` to the nearest noiseless half-moon arc.
    pub fn distance_to_arcs(&self, x: &[f64]) -> Result<f64> {
        let MixtureSpec::Halfmoon { radius, .. } = self else {
            return Err(Error::Unsupported("distance_to_arcs needs a half-moon spec".into()));
        };
        check_dim(2, x.len())?;
        let (upper, lower) = self.arc_centres();
        // Upper arc: centre + r(cos th, sin th), th in [0, pi]. Lower: centre - r(cos th, sin th).
        let arc = |c: [f64; 2], sign: f64| {
            let (dx, dy) = (sign * (x[0] - c[0]), sign * (x[1] - c[1]));
            if dy >= 0.0 {
                ((dx * dx + dy * dy).sqrt() - radius).abs()
            } else {
                let e1 = ((dx - radius).powi(2) + dy * dy).sqrt();
                let e2 = ((dx + radius).powi(2) + dy * dy).sqrt();
                e1.min(e2)
            }
        };
        Ok(arc(upper, 1.0).min(arc(lower, -1.0)))
    }

    /// Centres of the upper and lower arcs after recentring the point cloud.
    fn arc_centres(&self) -> ([f64; 2], [f64; 2]) {
        match self {
            MixtureSpec::Halfmoon {
                radius,
                vertical_offset,
                horizontal_offset,
                ..
            } => {
                let (h, v) = (horizontal_offset * radius, vertical_offset * radius);
                ([-h / 2.0, -v / 2.0], [h / 2.0, v / 2.0])
            }
            _ => unreachable!("arc centres only exist for half-moons"),
        }
    }

    /// Log density `log sum_i w_i N(x; mu_i, s_i^2 I)`.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        if matches!(self, MixtureSpec::Halfmoon { .. }) {
            return Err(Error::Unsupported("half-moon target has no closed-form density".into()));
        }
        let comps = self.components()?;
        check_dim(self.dim(), x.len())?;
        let m = x.len() as f64;
        let mut terms = Vec::with_capacity(comps.len());
        for c in &comps {
            if c.weight == 0.0 {
                continue;
            }
            if c.std == 0.0 {
                return Err(Error::Unsupported("point-mass component has no density".into()));
            }
            let d2: f64 = x.iter().zip(&c.mean).map(|(a, b)| (a - b) * (a - b)).sum();
            let var = c.std * c.std;
            terms.push(c.weight.ln() - 0.5 * m * (2.0 * PI * var).ln() - d2 / (2.0 * var));
        }
        Ok(log_sum_exp(&terms))
    }

    /// `n` i.i.d. draws with the given seed.
    pub fn sample(&self, n: usize, seed: u64) -> Result<SampleSet> {
        if n == 0 {
            return Err(Error::InvalidSpec("sample count must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points = self.sample_with(n, &mut rng)?;
        Ok(SampleSet {
            points,
            fingerprint: fingerprint(&format!("{self:?}"), seed),
        })
    }

    /// Draws `n` points from an existing generator (used by training loops).
    pub fn sample_with<R: Rng>(&self, n: usize, rng: &mut R) -> Result<Array2<f64>> {
        self.validate()?;
        let dim = self.dim();
        let mut out = Array2::zeros((n, dim));
        match self {
            MixtureSpec::Halfmoon { radius, noise_std, .. } => {
                let (upper, lower) = self.arc_centres();
                for mut row in out.rows_mut() {
                    let theta = rng.random_range(0.0..=PI);
                    let (c, s) = (theta.cos(), theta.sin());
                    let (x, y) = if rng.random_bool(0.5) {
                        (upper[0] + radius * c, upper[1] + radius * s)
                    } else {
                        (lower[0] - radius * c, lower[1] - radius * s)
                    };
                    let nx: f64 = rng.sample(StandardNormal);
                    let ny: f64 = rng.sample(StandardNormal);
                    row[0] = x + noise_std * nx;
                    row[1] = y + noise_std * ny;
                }
            }
            _ => {
                let comps = self.components()?;
                let cdf: Vec<f64> = comps
                    .iter()
                    .scan(0.0, |acc, c| {
                        *acc += c.weight;
                        Some(*acc)
                    })
                    .collect();
                for mut row in out.rows_mut() {
                    let k = pick(&cdf, rng.random::<f64>());
                    let c = &comps[k];
                    for j in 0..dim {
                        let e: f64 = rng.sample(StandardNormal);
                        row[j] = c.mean[j] + c.std * e;
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Index of the first cumulative weight exceeding `u`.
pub(crate) fn pick(cdf: &[f64], u: f64) -> usize {
    let total = *cdf.last().expect("nonempty cdf");
    let target = u * total;
    cdf.iter().position(|&c| target < c).unwrap_or(cdf.len() - 1)
}

pub fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// A batch of points (one per row) plus a fingerprint of what generated it.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub points: Array2<f64>,
    pub fingerprint: u64,
}

impl SampleSet {
    pub fn from_points(points: Array2<f64>) -> Self {
        let fingerprint = fingerprint(&format!("{:?}", points.shape()), points.len() as u64);
        Self { points, fingerprint }
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.points.row(i)
    }

    pub fn point(&self, i: usize) -> Point {
        Point::from(self.points.row(i))
    }

    pub fn is_finite(&self) -> bool {
        self.points.iter().all(|v| v.is_finite())
    }
}

/// Standard normal draws, `n x m`.
pub fn sample_noise(n: usize, m: usize, seed: u64) -> SampleSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = Array2::from_shape_simple_fn((n, m), || rng.sample(StandardNormal));
    SampleSet {
        points,
        fingerprint: fingerprint(&format!("noise/{m}"), seed),
    }
}

/// 64-bit FNV-1a over a description string and a seed.
pub fn fingerprint(desc: &str, seed: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in desc.bytes().chain(seed.to_le_bytes()) {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn degenerate_mixture_repeats_mean() {
        let s = MixtureSpec::point_mass(&[3.0, -1.0]).sample(50, 1).unwrap();
        for r in s.points.rows() {
            assert_eq!(r.to_vec(), vec![3.0, -1.0]);
        }
    }

    #[test]
    fn grid_mean_is_centred() {
        let spec = MixtureSpec::grid_default();
        let n = 100_000;
        let s = spec.sample(n, 7).unwrap();
        // Per-coordinate population variance: lattice variance + std^2.
        let lattice_var = [-2.0f64, -1.0, 0.0, 1.0, 2.0].iter().map(|v| v * v).sum::<f64>() / 5.0;
        let se = ((lattice_var + 0.05 * 0.05) / n as f64).sqrt();
        for j in 0..2 {
            let mean = s.points.column(j).sum() / n as f64;
            assert!(mean.abs() < 3.0 * se, "coord {j}: mean {mean}, 3se {}", 3.0 * se);
        }
    }

    #[test]
    fn noiseless_halfmoon_lies_on_arcs() {
        let spec = MixtureSpec::Halfmoon {
            radius: 1.0,
            noise_std: 0.0,
            vertical_offset: 0.5,
            horizontal_offset: 1.0,
        };
        let s = spec.sample(2000, 3).unwrap();
        for r in s.points.rows() {
            let d = spec.distance_to_arcs(r.as_slice().unwrap()).unwrap();
            assert!(d < 1e-9, "point {r} off arcs by {d}");
        }
    }

    #[test]
    fn standard_normal_log_density_at_origin() {
        let spec = MixtureSpec::Explicit {
            components: vec![Component {
                weight: 1.0,
                mean: vec![0.0, 0.0],
                std: 1.0,
            }],
        };
        assert_abs_diff_eq!(
            spec.log_density(&[0.0, 0.0]).unwrap(),
            -(2.0 * PI).ln(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn symmetric_pair_density_at_origin() {
        let mu = [0.6, -0.8];
        let pair = MixtureSpec::Explicit {
            components: vec![
                Component {
                    weight: 0.5,
                    mean: mu.to_vec(),
                    std: 0.7,
                },
                Component {
                    weight: 0.5,
                    mean: vec![-mu[0], -mu[1]],
                    std: 0.7,
                },
            ],
        };
        let single = MixtureSpec::Explicit {
            components: vec![Component {
                weight: 1.0,
                mean: mu.to_vec(),
                std: 0.7,
            }],
        };
        assert_abs_diff_eq!(
            pair.log_density(&[0.0, 0.0]).unwrap(),
            single.log_density(&[0.0, 0.0]).unwrap(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn grid_density_integrates_to_one() {
        // Trapezoid rule on [-3, 3]^2; the quadrature step resolves std 0.05.
        let spec = MixtureSpec::grid_default();
        let n = 601;
        let (lo, hi) = (-3.0, 3.0);
        let h = (hi - lo) / (n - 1) as f64;
        let w = |i: usize| if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                let x = [lo + i as f64 * h, lo + j as f64 * h];
                total += w(i) * w(j) * spec.log_density(&x).unwrap().exp();
            }
        }
        total *= h * h;
        assert!((total - 1.0).abs() < 1e-3, "integral {total}");
    }

    #[test]
    fn halfmoon_has_no_density() {
        let spec = MixtureSpec::halfmoon_default();
        assert!(matches!(spec.log_density(&[0.0, 0.0]), Err(Error::Unsupported(_))));
    }

    #[test]
    fn grid_weights_sum_to_one() {
        let comps = MixtureSpec::grid_default().components().unwrap();
        assert_eq!(comps.len(), 25);
        let total: f64 = comps.iter().map(|c| c.weight).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(MixtureSpec::Explicit { components: vec![] }.sample(3, 0).is_err());
        let neg = MixtureSpec::Grid {
            side: 5,
            half_width: 2.0,
            std: -0.1,
        };
        assert!(matches!(neg.sample(3, 0), Err(Error::InvalidSpec(_))));
        let unnormalised = MixtureSpec::Explicit {
            components: vec![Component {
                weight: 0.7,
                mean: vec![0.0],
                std: 1.0,
            }],
        };
        assert!(unnormalised.validate().is_err());
        assert!(MixtureSpec::grid_default().sample(0, 0).is_err());
    }

    #[test]
    fn noise_moments() {
        let s = sample_noise(100_000, 2, 11);
        for j in 0..2 {
            let col = s.points.column(j);
            let mean = col.sum() / col.len() as f64;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / col.len() as f64;
            assert!(mean.abs() < 0.02, "mean {mean}");
            assert!((var - 1.0).abs() < 0.05, "var {var}");
        }
    }

    #[test]
    fn noise_is_seed_deterministic() {
        assert_eq!(sample_noise(10, 3, 5), sample_noise(10, 3, 5));
        assert_ne!(sample_noise(10, 3, 5).points, sample_noise(10, 3, 6).points);
        let one = sample_noise(1, 4, 0);
        assert_eq!(one.points.shape(), &[1, 4]);
        assert!(one.is_finite());
    }

    #[test]
    fn same_seed_same_samples() {
        for spec in [MixtureSpec::grid_default(), MixtureSpec::halfmoon_default()] {
            assert_eq!(spec.sample(100, 9).unwrap(), spec.sample(100, 9).unwrap());
        }
    }

    #[test]
    fn point_symmetry() {
        assert!(MixtureSpec::grid_default().is_point_symmetric().unwrap());
        assert!(MixtureSpec::two_point(2.0).is_point_symmetric().unwrap());
        assert!(!MixtureSpec::point_mass(&[1.0, 0.0]).is_point_symmetric().unwrap());
        let moons = MixtureSpec::halfmoon_default();
        assert!(moons.is_point_symmetric().unwrap());
        let s = moons.sample(20_000, 3).unwrap();
        for j in 0..2 {
            assert!(s.points.column(j).mean().unwrap().abs() < 0.03);
        }
    }
}
