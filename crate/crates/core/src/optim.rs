//! Gradient descent and its variants, with the rate theory used to size
//! learning rates and iteration budgets.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::localmodel::LocalLoss;

/// The objective may grow to this multiple of its initial magnitude before
/// a run is declared divergent.
pub const DIVERGENCE_FACTOR: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LRSchedule {
    Constant { eta: f64 },
    /// `η_k = c/k`, `k ≥ 1`.
    Diminishing { c: f64 },
    /// `1/(λ₁ + λ_d)` for the extreme eigenvalues of `Q`.
    Optimal { lambda_min: f64, lambda_max: f64 },
}

impl LRSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LRSchedule::Constant { eta } if !(eta.is_finite() && eta > 0.0) => {
                Err(Error::param("eta", format!("must be positive, got {eta}")))
            }
            LRSchedule::Diminishing { c } if !(c.is_finite() && c > 0.0) => {
                Err(Error::param("c", format!("must be positive, got {c}")))
            }
            LRSchedule::Optimal {
                lambda_min,
                lambda_max,
            } => optimal_rate(lambda_min, lambda_max).map(|_| ()),
            _ => Ok(()),
        }
    }

    /// Step size of iteration `k` (1-based).
    pub fn rate(&self, k: usize) -> f64 {
        match *self {
            LRSchedule::Constant { eta } => eta,
            LRSchedule::Diminishing { c } => c / k.max(1) as f64,
            LRSchedule::Optimal {
                lambda_min,
                lambda_max,
            } => 1.0 / (lambda_min + lambda_max),
        }
    }

    /// Whether the rates tend to zero with a divergent sum and a convergent
    /// sum of squares. Holds exactly for the `c/k` rule.
    pub fn is_diminishing(&self) -> bool {
        matches!(self, LRSchedule::Diminishing { .. })
    }

    /// `c/k` with `c = 1/(2λ_d)`.
    pub fn default_diminishing(lambda_max: f64) -> Result<Self> {
        if !(lambda_max.is_finite() && lambda_max > 0.0) {
            return Err(Error::param("lambda_max", "must be positive"));
        }
        Ok(LRSchedule::Diminishing {
            c: 1.0 / (2.0 * lambda_max),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopRule {
    pub max_iters: usize,
    /// Stop once `|f(w^k) − f(w^{k+1})| ≤ obj_tol`.
    #[serde(default)]
    pub obj_tol: Option<f64>,
    /// Stop once `‖w^k − ŵ‖ ≤ dist_tol`; needs `oracle`.
    #[serde(default)]
    pub dist_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<DVector<f64>>,
    #[serde(default)]
    pub keep_iterates: bool,
}

impl StopRule {
    pub fn iters(max_iters: usize) -> Self {
        Self {
            max_iters,
            obj_tol: None,
            dist_tol: None,
            oracle: None,
            keep_iterates: false,
        }
    }

    pub fn with_obj_tol(mut self, tol: f64) -> Self {
        self.obj_tol = Some(tol);
        self
    }

    pub fn with_oracle(mut self, oracle: DVector<f64>, dist_tol: Option<f64>) -> Self {
        self.oracle = Some(oracle);
        self.dist_tol = dist_tol;
        self
    }

    pub fn keeping_iterates(mut self) -> Self {
        self.keep_iterates = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, tol) in [("obj_tol", self.obj_tol), ("dist_tol", self.dist_tol)] {
            if let Some(t) = tol {
                if !(t.is_finite() && t >= 0.0) {
                    return Err(Error::param(name, format!("must be nonnegative, got {t}")));
                }
            }
        }
        if self.dist_tol.is_some() && self.oracle.is_none() {
            return Err(Error::param("dist_tol", "requires an oracle solution"));
        }
        Ok(())
    }

    fn dist(&self, w: &DVector<f64>) -> Option<f64> {
        self.oracle.as_ref().map(|o| (w - o).norm())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIters,
    ObjTol,
    DistTol,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub k: usize,
    pub objective: f64,
    pub grad_norm: f64,
    pub dist: Option<f64>,
}

/// Iteration log; record `k = 0` describes the starting point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub records: Vec<IterRecord>,
    pub reason: StopReason,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub iterates: Vec<DVector<f64>>,
}

impl Trace {
    pub fn iterations(&self) -> usize {
        self.records.last().map_or(0, |r| r.k)
    }

    /// Successive distance ratios `‖w^{k+1} − ŵ‖/‖w^k − ŵ‖`, skipping steps
    /// that start at the oracle.
    pub fn distance_ratios(&self) -> Vec<f64> {
        self.records
            .windows(2)
            .filter_map(|p| match (p[0].dist, p[1].dist) {
                (Some(a), Some(b)) if a > 0.0 => Some(b / a),
                _ => None,
            })
            .collect()
    }
}

fn checked_eval(loss: &dyn LocalLoss, w: &DVector<f64>, k: usize) -> Result<(f64, DVector<f64>)> {
    let f = loss.value(w);
    let g = loss.gradient(w);
    if !f.is_finite() || g.iter().any(|x| !x.is_finite()) {
        return Err(Error::Divergence {
            k,
            reason: "non-finite objective or gradient".into(),
        });
    }
    Ok((f, g))
}

/// The gradient step `w ↦ P(w + ε^k − η_k ∇f(w + ε^k))` with optional
/// projection `P` and perturbation `ε^k`.
pub struct GdEngine<'a> {
    loss: &'a dyn LocalLoss,
    sched: LRSchedule,
    stop: StopRule,
    projector: Option<&'a dyn Fn(&DVector<f64>) -> DVector<f64>>,
}

impl<'a> GdEngine<'a> {
    pub fn new(loss: &'a dyn LocalLoss, sched: LRSchedule, stop: StopRule) -> Result<Self> {
        sched.validate()?;
        stop.validate()?;
        Ok(Self {
            loss,
            sched,
            stop,
            projector: None,
        })
    }

    pub fn with_projector(mut self, p: &'a dyn Fn(&DVector<f64>) -> DVector<f64>) -> Self {
        self.projector = Some(p);
        self
    }

    pub fn run(&self, w0: &DVector<f64>) -> Result<(DVector<f64>, Trace)> {
        self.run_perturbed(w0, |_, _| None)
    }

    /// `perturb(k, w^k)` may return a perturbation added to the iterate
    /// before step `k → k+1` (0-based).
    pub fn run_perturbed<F>(&self, w0: &DVector<f64>, mut perturb: F) -> Result<(DVector<f64>, Trace)>
    where
        F: FnMut(usize, &DVector<f64>) -> Option<DVector<f64>>,
    {
        let d = self.loss.dim();
        if w0.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: w0.len(),
            });
        }
        let mut w = match self.projector {
            Some(p) => p(w0),
            None => w0.clone(),
        };
        let (mut f, mut g) = checked_eval(self.loss, &w, 0)?;
        let limit = DIVERGENCE_FACTOR * f.abs().max(1.0);
        let mut records = vec![IterRecord {
            k: 0,
            objective: f,
            grad_norm: g.norm(),
            dist: self.stop.dist(&w),
        }];
        let mut iterates = Vec::new();
        if self.stop.keep_iterates {
            iterates.push(w.clone());
        }
        let hit_dist = |r: &IterRecord| matches!((r.dist, self.stop.dist_tol), (Some(e), Some(t)) if e <= t);
        let mut reason = StopReason::MaxIters;
        if hit_dist(&records[0]) {
            return Ok((w, Trace { records, reason: StopReason::DistTol, iterates }));
        }
        for k in 1..=self.stop.max_iters {
            let eta = self.sched.rate(k);
            let step_grad;
            let base = match perturb(k - 1, &w) {
                Some(eps) => {
                    if eps.len() != d {
                        return Err(Error::DimensionMismatch {
                            expected: d,
                            got: eps.len(),
                        });
                    }
                    let v = &w + eps;
                    step_grad = checked_eval(self.loss, &v, k)?.1;
                    v
                }
                None => {
                    step_grad = g.clone();
                    w.clone()
                }
            };
            let mut next = base - step_grad * eta;
            if let Some(p) = self.projector {
                next = p(&next);
            }
            let (f_next, g_next) = checked_eval(self.loss, &next, k)?;
            if f_next > limit {
                return Err(Error::Divergence {
                    k,
                    reason: format!("objective {f_next:e} exceeds {DIVERGENCE_FACTOR:e} times its initial magnitude"),
                });
            }
            let rec = IterRecord {
                k,
                objective: f_next,
                grad_norm: g_next.norm(),
                dist: self.stop.dist(&next),
            };
            let obj_change = (f - f_next).abs();
            w = next;
            f = f_next;
            g = g_next;
            if self.stop.keep_iterates {
                iterates.push(w.clone());
            }
            let done_dist = hit_dist(&rec);
            records.push(rec);
            if done_dist {
                reason = StopReason::DistTol;
                break;
            }
            if matches!(self.stop.obj_tol, Some(t) if obj_change <= t) {
                reason = StopReason::ObjTol;
                break;
            }
        }
        Ok((w, Trace { records, reason, iterates }))
    }
}

pub fn gd_run(
    loss: &dyn LocalLoss,
    w0: &DVector<f64>,
    sched: LRSchedule,
    stop: StopRule,
) -> Result<(DVector<f64>, Trace)> {
    GdEngine::new(loss, sched, stop)?.run(w0)
}

pub fn projected_gd_run(
    loss: &dyn LocalLoss,
    projector: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    w0: &DVector<f64>,
    sched: LRSchedule,
    stop: StopRule,
) -> Result<(DVector<f64>, Trace)> {
    GdEngine::new(loss, sched, stop)?
        .with_projector(projector)
        .run(w0)
}

/// `max{|1 − 2ηλ₁|, |1 − 2ηλ_d|}`.
pub fn contraction(eta: f64, lambda_min: f64, lambda_max: f64) -> f64 {
    (1.0 - 2.0 * eta * lambda_min)
        .abs()
        .max((1.0 - 2.0 * eta * lambda_max).abs())
}

/// `(η*, κ*)` with `η* = 1/(λ₁ + λ_d)`.
pub fn optimal_rate(lambda_min: f64, lambda_max: f64) -> Result<(f64, f64)> {
    if !(lambda_min.is_finite() && lambda_min > 0.0) {
        return Err(Error::param("lambda_min", format!("must be positive, got {lambda_min}")));
    }
    if !(lambda_max.is_finite() && lambda_max >= lambda_min) {
        return Err(Error::param("lambda_max", "must be at least lambda_min"));
    }
    let ratio = lambda_max / lambda_min;
    Ok((1.0 / (lambda_min + lambda_max), (ratio - 1.0) / (ratio + 1.0)))
}

/// Smallest `k` with `κ^k r0 ≤ ε`.
pub fn iters_needed(kappa: f64, r0: f64, eps: f64) -> Result<usize> {
    if !(kappa.is_finite() && (0.0..1.0).contains(&kappa)) {
        return Err(Error::param("kappa", format!("must lie in [0, 1), got {kappa}")));
    }
    if !(r0 > 0.0 && eps > 0.0) {
        return Err(Error::param("r0/eps", "must be positive"));
    }
    if eps >= r0 {
        return Ok(0);
    }
    if kappa == 0.0 {
        return Ok(1);
    }
    let x = (r0 / eps).ln() / (1.0 / kappa).ln();
    // Absorb round-off so exact powers (e.g. 0.1^6 vs 1e-6) are not bumped up.
    let k = (x - 1e-9 * x.max(1.0)).ceil();
    Ok(k.max(0.0) as usize)
}

/// `κ^k r0 + Σ_{k'=1..k} κ^{k'} ‖ε^{k−k'}‖` with `k = norms.len()`.
pub fn perturbed_bound(kappa: f64, r0: f64, norms: &[f64]) -> f64 {
    let k = norms.len();
    let mut bound = kappa.powi(k as i32) * r0;
    let mut pow = 1.0;
    for kp in 1..=k {
        pow *= kappa;
        bound += pow * norms[k - kp];
    }
    bound
}
