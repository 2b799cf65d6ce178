//! Attacks on local datasets and shared models, robust aggregation rules,
//! and differential-privacy mechanisms.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::localmodel::LocalDataset;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackKind {
    /// Add `delta` to the labels of a random `fraction` of rows.
    LabelPoison { delta: f64, fraction: f64 },
    /// Add `delta_x` to the feature vectors of a random `fraction` of rows.
    FeaturePoison { delta_x: Vec<f64>, fraction: f64 },
    /// Replace the blocks a victim shares with its neighbors.
    ModelPoison { rule: Replacement },
    /// Share a block of huge magnitude.
    Dos { magnitude: f64 },
    /// Stamp `trigger_value` into feature `trigger_feature` and relabel.
    Backdoor {
        trigger_feature: usize,
        trigger_value: f64,
        target_label: f64,
        fraction: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Replacement {
    Constant { value: Vec<f64> },
    Scale { factor: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    #[serde(flatten)]
    pub kind: AttackKind,
    pub victims: Vec<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl AttackSpec {
    pub fn validate(&self, n: usize) -> Result<()> {
        let fraction = match &self.kind {
            AttackKind::LabelPoison { fraction, .. }
            | AttackKind::FeaturePoison { fraction, .. }
            | AttackKind::Backdoor { fraction, .. } => Some(*fraction),
            _ => None,
        };
        if let Some(f) = fraction {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::param("fraction", format!("must lie in [0, 1], got {f}")));
            }
        }
        if let Some(&v) = self.victims.iter().find(|&&v| v >= n) {
            return Err(Error::param("victims", format!("node {v} out of range for {n} nodes")));
        }
        Ok(())
    }

    pub fn is_data_attack(&self) -> bool {
        matches!(
            self.kind,
            AttackKind::LabelPoison { .. } | AttackKind::FeaturePoison { .. } | AttackKind::Backdoor { .. }
        )
    }

    pub fn targets(&self, node: usize) -> bool {
        self.victims.contains(&node)
    }

    /// Block that `node` shares in place of `block`, if it is a model-level victim.
    pub fn outgoing(&self, node: usize, block: &DVector<f64>) -> Option<DVector<f64>> {
        if !self.targets(node) {
            return None;
        }
        match &self.kind {
            AttackKind::ModelPoison {
                rule: Replacement::Constant { value },
            } => Some(if value.len() == block.len() {
                DVector::from_column_slice(value)
            } else {
                DVector::from_element(block.len(), value.first().copied().unwrap_or(0.0))
            }),
            AttackKind::ModelPoison {
                rule: Replacement::Scale { factor },
            } => Some(block * *factor),
            AttackKind::Dos { magnitude } => Some(DVector::from_element(block.len(), *magnitude)),
            _ => None,
        }
    }
}

/// Copy of `ds` with the data attack applied to a seeded random subset of
/// `⌊fraction·m⌋` rows. Non-data attacks leave the dataset unchanged.
pub fn poison_dataset(ds: &LocalDataset, spec: &AttackSpec, node: usize) -> Result<LocalDataset> {
    spec.validate(usize::MAX)?;
    let fraction = match &spec.kind {
        AttackKind::LabelPoison { fraction, .. }
        | AttackKind::FeaturePoison { fraction, .. }
        | AttackKind::Backdoor { fraction, .. } => *fraction,
        _ => return Ok(ds.clone()),
    };
    let m = ds.len();
    let count = ((fraction * m as f64).floor() as usize).min(m);
    let mut r = rng::stream(spec.seed, "attack/rows", &[node as u64]);
    let rows = rand::seq::index::sample(&mut r, m, count).into_vec();
    let mut x = ds.x().clone();
    let mut y = ds.y().clone();
    match &spec.kind {
        AttackKind::LabelPoison { delta, .. } => {
            for &r in &rows {
                y[r] += delta;
            }
        }
        AttackKind::FeaturePoison { delta_x, .. } => {
            if delta_x.len() != ds.dim() {
                return Err(Error::DimensionMismatch {
                    expected: ds.dim(),
                    got: delta_x.len(),
                });
            }
            for &r in &rows {
                for (c, dx) in delta_x.iter().enumerate() {
                    x[(r, c)] += dx;
                }
            }
        }
        AttackKind::Backdoor {
            trigger_feature,
            trigger_value,
            target_label,
            ..
        } => {
            if *trigger_feature >= ds.dim() {
                return Err(Error::param("trigger_feature", "index exceeds feature dimension"));
            }
            for &r in &rows {
                x[(r, *trigger_feature)] = *trigger_value;
                y[r] = *target_label;
            }
        }
        _ => unreachable!(),
    }
    LocalDataset::new(x, y)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RobustAgg {
    #[default]
    Mean,
    Clipped { lower: f64, upper: f64 },
    Trimmed { trim: usize },
    GeoMedian { tol: f64, max_iter: usize },
}

impl RobustAgg {
    pub fn validate(&self) -> Result<()> {
        match *self {
            RobustAgg::Clipped { lower, upper } if !(lower <= upper) => {
                Err(Error::param("clipped", format!("lower {lower} exceeds upper {upper}")))
            }
            RobustAgg::GeoMedian { tol, max_iter } if !(tol > 0.0) || max_iter == 0 => {
                Err(Error::param("geomedian", "tol and max_iter must be positive"))
            }
            _ => Ok(()),
        }
    }

    /// Combine neighbor blocks with edge weights into one block.
    pub fn aggregate(&self, blocks: &[DVector<f64>], weights: &[f64]) -> Result<DVector<f64>> {
        if blocks.is_empty() {
            return Err(Error::Precondition("aggregation needs at least one neighbor".into()));
        }
        if blocks.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                expected: blocks.len(),
                got: weights.len(),
            });
        }
        let d = blocks[0].len();
        if let Some(b) = blocks.iter().find(|b| b.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: b.len(),
            });
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::param("weights", "must have a positive sum"));
        }
        match *self {
            RobustAgg::Mean => Ok(weighted_sum(blocks, weights, |_, v| v) / total),
            RobustAgg::Clipped { lower, upper } => {
                Ok(weighted_sum(blocks, weights, |_, v| v.clamp(lower, upper)) / total)
            }
            RobustAgg::Trimmed { trim } => trimmed_mean(blocks, weights, trim, total),
            RobustAgg::GeoMedian { tol, max_iter } => {
                Ok(weighted_geometric_median(blocks, weights, tol, max_iter)?.point)
            }
        }
    }
}

fn weighted_sum(blocks: &[DVector<f64>], weights: &[f64], f: impl Fn(usize, f64) -> f64) -> DVector<f64> {
    let mut acc = DVector::zeros(blocks[0].len());
    for (b, &a) in blocks.iter().zip(weights) {
        for (c, v) in b.iter().enumerate() {
            acc[c] += a * f(c, *v);
        }
    }
    acc
}

fn trimmed_mean(blocks: &[DVector<f64>], weights: &[f64], trim: usize, total: f64) -> Result<DVector<f64>> {
    let count = blocks.len();
    if count <= 2 * trim {
        return Err(Error::Precondition(format!(
            "trimming {trim} from each side needs more than {} neighbors, got {count}",
            2 * trim
        )));
    }
    let kept = count - 2 * trim;
    let c = count as f64 / kept as f64;
    let d = blocks[0].len();
    let mut out = DVector::zeros(d);
    let mut order: Vec<usize> = (0..count).collect();
    for coord in 0..d {
        order.sort_by(|&a, &b| blocks[a][coord].total_cmp(&blocks[b][coord]).then(a.cmp(&b)));
        out[coord] = order[trim..count - trim]
            .iter()
            .map(|&j| weights[j] * c * blocks[j][coord])
            .sum::<f64>()
            / total;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoMedian {
    pub point: DVector<f64>,
    /// Norm of the best summed subgradient at `point`.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub fn geometric_median(points: &[DVector<f64>], tol: f64, max_iter: usize) -> Result<GeoMedian> {
    weighted_geometric_median(points, &vec![1.0; points.len()], tol, max_iter)
}

/// Weiszfeld iteration for `argmin_y Σ a_j ‖y − x_j‖`.
pub fn weighted_geometric_median(
    points: &[DVector<f64>],
    weights: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<GeoMedian> {
    if points.is_empty() {
        return Err(Error::Precondition("geometric median needs at least one point".into()));
    }
    if points.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            expected: points.len(),
            got: weights.len(),
        });
    }
    if weights.iter().any(|&a| !(a > 0.0)) {
        return Err(Error::param("weights", "must be positive"));
    }
    let scale = points.iter().map(|p| p.amax()).fold(1.0, f64::max);
    let coincide = 1e-12 * scale;

    // A data point is optimal iff the pull of the others fits in its own ball.
    for x in points {
        let (pull, own) = pull_at(points, weights, x, coincide);
        if pull.norm() <= own {
            return Ok(GeoMedian {
                point: x.clone(),
                residual: 0.0,
                iterations: 0,
                converged: true,
            });
        }
    }

    let total: f64 = weights.iter().sum();
    let mut y = points.iter().zip(weights).map(|(p, a)| p * *a).sum::<DVector<f64>>() / total;
    let mut residual = f64::INFINITY;
    for it in 0..=max_iter {
        let (pull, own) = pull_at(points, weights, &y, coincide);
        residual = (pull.norm() - own).max(0.0);
        if residual <= tol {
            return Ok(GeoMedian {
                point: y,
                residual,
                iterations: it,
                converged: true,
            });
        }
        if it == max_iter {
            break;
        }
        let mut num = DVector::zeros(y.len());
        let mut den = 0.0;
        for (x, &a) in points.iter().zip(weights) {
            let dist = (x - &y).norm();
            if dist > coincide {
                num += x * (a / dist);
                den += a / dist;
            }
        }
        let step = num / den;
        y = if own > 0.0 {
            // Damped move off a data point.
            let t = (own / pull.norm()).min(1.0);
            &step * (1.0 - t) + &y * t
        } else {
            step
        };
    }
    log::warn!("geometric median stopped after {max_iter} iterations with residual {residual:e}");
    Ok(GeoMedian {
        point: y,
        residual,
        iterations: max_iter,
        converged: false,
    })
}

/// Sum of `a_j (x_j − y)/‖x_j − y‖` over points away from `y`, and the total
/// weight of points coinciding with `y`.
fn pull_at(points: &[DVector<f64>], weights: &[f64], y: &DVector<f64>, coincide: f64) -> (DVector<f64>, f64) {
    let mut pull = DVector::zeros(y.len());
    let mut own = 0.0;
    for (x, &a) in points.iter().zip(weights) {
        let diff = x - y;
        let dist = diff.norm();
        if dist > coincide {
            pull += diff * (a / dist);
        } else {
            own += a;
        }
    }
    (pull, own)
}

/// Noise scale `√(2 ln(1.25/δ))·Δ₂/ε` of the Gaussian mechanism.
pub fn gaussian_sigma(sensitivity: f64, eps: f64, delta: f64) -> Result<f64> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::param("eps", format!("must be positive, got {eps}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::param("delta", format!("must lie in (0, 1), got {delta}")));
    }
    if !(sensitivity.is_finite() && sensitivity >= 0.0) {
        return Err(Error::param("sensitivity", "must be nonnegative"));
    }
    Ok((2.0 * (1.25 / delta).ln()).sqrt() * sensitivity / eps)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseKind {
    Gaussian { sigma: f64 },
    Laplace { b: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DPMechanism {
    #[serde(flatten)]
    pub kind: NoiseKind,
    #[serde(default)]
    pub seed: u64,
}

impl DPMechanism {
    pub fn gaussian(sigma: f64, seed: u64) -> Self {
        Self {
            kind: NoiseKind::Gaussian { sigma },
            seed,
        }
    }

    pub fn laplace(b: f64, seed: u64) -> Self {
        Self {
            kind: NoiseKind::Laplace { b },
            seed,
        }
    }

    /// Scale zero is accepted and yields no noise.
    pub fn validate(&self) -> Result<()> {
        let s = match self.kind {
            NoiseKind::Gaussian { sigma } => sigma,
            NoiseKind::Laplace { b } => b,
        };
        if !(s.is_finite() && s >= 0.0) {
            return Err(Error::param("noise scale", format!("must be nonnegative, got {s}")));
        }
        Ok(())
    }

    /// Noise vector for the given counter (e.g. `[node, event]`).
    pub fn sample(&self, d: usize, counter: &[u64]) -> DVector<f64> {
        let mut r = rng::stream(self.seed, "dp/noise", counter);
        match self.kind {
            NoiseKind::Gaussian { sigma } => {
                DVector::from_fn(d, |_, _| sigma * r.sample::<f64, _>(StandardNormal))
            }
            NoiseKind::Laplace { b } => DVector::from_fn(d, |_, _| {
                let u: f64 = r.random::<f64>() - 0.5;
                -b * u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }),
        }
    }
}

pub fn dp_noise(block: &DVector<f64>, mech: &DPMechanism, counter: &[u64]) -> DVector<f64> {
    block + mech.sample(block.len(), counter)
}

/// Whether `exp(ε)·p_d_to_d2 + p_d2_to_d ≥ 1 − δ − slack`.
pub fn dp_test_bound(eps: f64, delta: f64, p_d_to_d2: f64, p_d2_to_d: f64, slack: f64) -> bool {
    eps.exp() * p_d_to_d2 + p_d2_to_d >= 1.0 - delta - slack
}

/// Projection `I − ccᵀ/‖c‖²` onto the orthogonal complement of `c`.
pub fn private_feature_map(c: &DVector<f64>) -> Result<DMatrix<f64>> {
    let nsq = c.norm_squared();
    if !(nsq > 1e-24) {
        return Err(Error::param("c", "cross-covariance vector is (numerically) zero"));
    }
    let d = c.len();
    let f = DMatrix::identity(d, d) - (c * c.transpose()) / nsq;
    Ok((&f + f.transpose()) * 0.5)
}

/// `(1/m) X̂ᵀ s` with column-centered `X̂`.
pub fn cross_cov_estimate(x: &DMatrix<f64>, s: &DVector<f64>) -> Result<DVector<f64>> {
    let m = x.nrows();
    if m == 0 {
        return Err(Error::Precondition("cross-covariance needs at least one row".into()));
    }
    if s.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: s.len(),
        });
    }
    let mut centered = x.clone();
    for mut col in centered.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    Ok(centered.transpose() * s / m as f64)
}

/// Whether `f` is a symmetric idempotent matrix with eigenvalues in {0, 1}.
pub fn is_projector(f: &DMatrix<f64>, tol: f64) -> Result<bool> {
    let sym = (f - f.transpose()).amax() <= tol;
    let idem = (f * f - f).amax() <= tol;
    let eig = linalg::sym_eigenvalues(f)?;
    Ok(sym && idem && eig.iter().all(|&l| l.abs() <= tol || (l - 1.0).abs() <= tol))
}
