//! GTVMin problems: local losses coupled by a total-variation penalty.
//!
//! With quadratic losses and the squared-norm penalty the objective is itself
//! a quadratic `wᵀQw + qᵀw + c` in the stacked parameters, which gives an exact
//! oracle solution and the spectral bounds on `Q`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EmpGraph, Penalty};
use crate::linalg;
use crate::localmodel::{LocalDataset, LocalLoss, QuadLoss};
use crate::params::StackedParams;

/// Smallest eigenvalue of `Q` below which the minimizer is considered non-unique.
pub const SINGULAR_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct GTVMinProblem {
    graph: EmpGraph,
    losses: Vec<Arc<dyn LocalLoss>>,
    alpha: f64,
    penalty: Penalty,
}

/// Spectral summaries of the local quadratic parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigSummaries {
    /// `max_i λ_d(Q_i)`.
    pub lambda_max: f64,
    /// `λ₁` of the average `(1/n)Σ Q_i`.
    pub lambda_bar_min: f64,
    /// `λ̄_min/(4λ_max)`; absent when `λ_max = 0`.
    pub rho: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigBounds {
    pub upper: f64,
    /// Absent unless `λ₂ > 0` and `λ̄_min > 0`.
    pub lower: Option<f64>,
    pub summaries: EigSummaries,
    pub lambda2: f64,
}

impl GTVMinProblem {
    pub fn new(
        graph: EmpGraph,
        losses: Vec<Arc<dyn LocalLoss>>,
        alpha: f64,
        penalty: Penalty,
    ) -> Result<Self> {
        if losses.len() != graph.n() {
            return Err(Error::DimensionMismatch {
                expected: graph.n(),
                got: losses.len(),
            });
        }
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::param("alpha", format!("must be nonnegative, got {alpha}")));
        }
        let d = losses[0].dim();
        if let Some(bad) = losses.iter().find(|l| l.dim() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: bad.dim(),
            });
        }
        Ok(Self {
            graph,
            losses,
            alpha,
            penalty,
        })
    }

    /// Squared-norm penalty over quadratic losses.
    pub fn quadratic(graph: EmpGraph, losses: Vec<QuadLoss>, alpha: f64) -> Result<Self> {
        let losses = losses
            .into_iter()
            .map(|l| Arc::new(l) as Arc<dyn LocalLoss>)
            .collect();
        Self::new(graph, losses, alpha, Penalty::SqNorm)
    }

    /// Squared-error losses `(1/m_i)‖y − Xw‖² + ridge‖w‖²` of the datasets.
    pub fn from_datasets(graph: EmpGraph, data: &[LocalDataset], ridge: f64, alpha: f64) -> Result<Self> {
        let losses = data
            .iter()
            .map(|ds| QuadLoss::from_dataset(ds, ridge))
            .collect::<Result<Vec<_>>>()?;
        Self::quadratic(graph, losses, alpha)
    }

    pub fn graph(&self) -> &EmpGraph {
        &self.graph
    }

    pub fn losses(&self) -> &[Arc<dyn LocalLoss>] {
        &self.losses
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn penalty(&self) -> Penalty {
        self.penalty
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    pub fn dim(&self) -> usize {
        self.losses[0].dim()
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        Self::new(self.graph.clone(), self.losses.clone(), alpha, self.penalty)
    }

    pub fn quad_losses(&self) -> Result<Vec<&QuadLoss>> {
        self.losses
            .iter()
            .enumerate()
            .map(|(i, l)| {
                l.as_quadratic()
                    .ok_or_else(|| Error::NotQuadratic(format!("loss at node {i}")))
            })
            .collect()
    }

    fn require_quadratic(&self) -> Result<Vec<&QuadLoss>> {
        if self.penalty != Penalty::SqNorm {
            return Err(Error::NotQuadratic("penalty is not the squared norm".into()));
        }
        self.quad_losses()
    }

    /// `(Q, q, c)` with `Q = blockdiag(Q_i) + α(L⊗I)`.
    pub fn assemble(&self) -> Result<(DMatrix<f64>, DVector<f64>, f64)> {
        let quads = self.require_quadratic()?;
        let (n, d) = (self.n(), self.dim());
        let mut q_mat = DMatrix::zeros(n * d, n * d);
        let mut q_vec = DVector::zeros(n * d);
        let mut c = 0.0;
        for (i, l) in quads.iter().enumerate() {
            q_mat.view_mut((i * d, i * d), (d, d)).copy_from(l.q_mat());
            q_vec.rows_mut(i * d, d).copy_from(l.q_vec());
            c += l.offset();
        }
        for e in self.graph.edges() {
            let a = self.alpha * e.weight;
            for k in 0..d {
                let (r, s) = (e.i * d + k, e.j * d + k);
                q_mat[(r, r)] += a;
                q_mat[(s, s)] += a;
                q_mat[(r, s)] -= a;
                q_mat[(s, r)] -= a;
            }
        }
        Ok((q_mat, q_vec, c))
    }

    pub fn check_params(&self, w: &StackedParams) -> Result<()> {
        if w.n() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                got: w.n(),
            });
        }
        if w.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: w.dim(),
            });
        }
        Ok(())
    }

    pub fn local_losses(&self, w: &StackedParams) -> Result<Vec<f64>> {
        self.check_params(w)?;
        Ok(self
            .losses
            .iter()
            .enumerate()
            .map(|(i, l)| l.value(&w.block_owned(i)))
            .collect())
    }

    /// `Σ L_i(w_i) + α·GTV(w)`.
    pub fn objective(&self, w: &StackedParams) -> Result<f64> {
        let local: f64 = self.local_losses(w)?.iter().sum();
        Ok(local + self.alpha * self.graph.gtv_value(w, self.penalty)?)
    }

    /// Exact minimizer from `2Qŵ = −q`.
    pub fn solve_direct(&self) -> Result<StackedParams> {
        let (q_mat, q_vec, _) = self.assemble()?;
        let lmin = linalg::min_eigenvalue(&q_mat)?;
        if lmin <= SINGULAR_TOL {
            return Err(Error::NonUnique { lambda_min: lmin });
        }
        let w = linalg::spd_solve_refined(&(q_mat * 2.0), &(-q_vec), 2)?;
        StackedParams::from_flat(self.n(), self.dim(), w)
    }

    pub fn eig_summaries(&self) -> Result<EigSummaries> {
        let quads = self.quad_losses()?;
        let d = self.dim();
        let mut lambda_max: f64 = 0.0;
        let mut avg = DMatrix::zeros(d, d);
        for l in &quads {
            lambda_max = lambda_max.max(linalg::max_eigenvalue(l.q_mat())?);
            avg += l.q_mat();
        }
        avg /= quads.len() as f64;
        let lambda_bar_min = linalg::min_eigenvalue(&avg)?.max(0.0);
        let rho = (lambda_max > 0.0).then(|| lambda_bar_min / (4.0 * lambda_max));
        Ok(EigSummaries {
            lambda_max,
            lambda_bar_min,
            rho,
        })
    }

    /// Upper bound `λ_max + 2α·d_max` on the spectrum of `Q` and, when the
    /// graph is connected and `λ̄_min > 0`, the lower bound
    /// `min{λ₂αρ², λ̄_min/2}/(1 + ρ²)`.
    pub fn eig_bounds(&self) -> Result<EigBounds> {
        self.require_quadratic()?;
        let s = self.eig_summaries()?;
        let lambda2 = self.graph.spectrum()?.lambda2();
        let upper = s.lambda_max + 2.0 * self.alpha * self.graph.degrees().max;
        let lower = match s.rho {
            Some(rho) if lambda2 > 0.0 && s.lambda_bar_min > 0.0 => {
                Some((lambda2 * self.alpha * rho * rho).min(s.lambda_bar_min / 2.0) / (1.0 + rho * rho))
            }
            _ => None,
        };
        Ok(EigBounds {
            upper,
            lower,
            summaries: s,
            lambda2,
        })
    }

    /// `(1/(λ₂α)) Σ (1/m_i)‖ε_i‖²`, bounding the total squared deviation of
    /// the solution from its node average.
    pub fn variation_bound(&self, noise_sq_norms: &[f64], sizes: &[usize]) -> Result<f64> {
        if noise_sq_norms.len() != self.n() || sizes.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                got: noise_sq_norms.len().min(sizes.len()),
            });
        }
        if self.alpha <= 0.0 {
            return Err(Error::param("alpha", "must be positive"));
        }
        let lambda2 = self.graph.spectrum()?.lambda2();
        if lambda2 <= 0.0 {
            return Err(Error::Disconnected("variation bound needs λ₂ > 0".into()));
        }
        Ok(noise_term(noise_sq_norms, sizes, 0..self.n())? / (lambda2 * self.alpha))
    }

    /// Bound on `Σ_{i∈C} ‖ŵ_i − avg_C ŵ‖²` for a cluster `C` whose nodes share
    /// `w̄_C`; `r` is the largest solution norm outside `C`.
    pub fn clustered_bound(
        &self,
        cluster: &[usize],
        noise_sq_norms: &[f64],
        sizes: &[usize],
        w_bar_sq_norm: f64,
        r: f64,
    ) -> Result<f64> {
        if noise_sq_norms.len() != self.n() || sizes.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                got: noise_sq_norms.len().min(sizes.len()),
            });
        }
        if self.alpha <= 0.0 {
            return Err(Error::param("alpha", "must be positive"));
        }
        let (sub, boundary) = self.graph.induced(cluster)?;
        let lambda2 = if sub.n() == 1 { 0.0 } else { sub.spectrum()?.lambda2() };
        if lambda2 <= 0.0 {
            return Err(Error::Disconnected("cluster subgraph is not connected".into()));
        }
        let noise = noise_term(noise_sq_norms, sizes, cluster.iter().copied())?;
        let coupling = self.alpha * boundary * 2.0 * (w_bar_sq_norm + r * r);
        Ok((noise + coupling) / (self.alpha * lambda2))
    }

    /// Bound on `Σ‖ŵ_i − w̃_i‖²` after adding `ε_i` to the labels, given the
    /// per-node `‖ε_i‖²`.
    pub fn sensitivity_bound(&self, perturbation_sq_norms: &[f64]) -> Result<f64> {
        if perturbation_sq_norms.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                got: perturbation_sq_norms.len(),
            });
        }
        let b = self.eig_bounds()?;
        let rho = b.summaries.rho.unwrap_or(0.0);
        if b.lambda2 <= 0.0 || b.summaries.lambda_bar_min <= 0.0 {
            return Err(Error::Precondition(
                "sensitivity bound needs a connected graph and λ̄_min > 0".into(),
            ));
        }
        let denom = (b.lambda2 * self.alpha * rho * rho).min(b.summaries.lambda_bar_min / 2.0);
        if denom <= 0.0 {
            return Err(Error::Precondition("sensitivity bound needs α > 0".into()));
        }
        let total: f64 = perturbation_sq_norms.iter().sum();
        Ok(b.summaries.lambda_max * (1.0 + rho * rho).powi(2) / (denom * denom) * total)
    }
}

fn noise_term(sq_norms: &[f64], sizes: &[usize], nodes: impl Iterator<Item = usize>) -> Result<f64> {
    let mut acc = 0.0;
    for i in nodes {
        if sq_norms[i] == 0.0 {
            continue;
        }
        if sizes[i] == 0 {
            return Err(Error::param("sizes", format!("node {i} has noise but no samples")));
        }
        acc += sq_norms[i] / sizes[i] as f64;
    }
    Ok(acc)
}
