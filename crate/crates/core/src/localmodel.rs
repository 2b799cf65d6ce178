//! Local datasets and local loss functions.
//!
//! Quadratic losses `L(w) = wᵀQw + qᵀw + c` are the workhorse: they come out of
//! (ridge) linear regression on a local dataset, have closed-form gradients
//! and proximal maps, and are what the spectral bounds talk about. Other
//! losses plug in through [`LocalLoss`].

use std::fmt::Debug;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng;

/// Features `x` (m×d) and labels `y` (m) of one node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalDataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
}

impl LocalDataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                got: y.len(),
            });
        }
        Ok(Self { x, y })
    }

    pub fn empty(d: usize) -> Self {
        Self {
            x: DMatrix::zeros(0, d),
            y: DVector::zeros(0),
        }
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: &[f64]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: bad.len(),
            });
        }
        let x = DMatrix::from_fn(rows.len(), d, |r, c| rows[r][c]);
        Self::new(x, DVector::from_column_slice(labels))
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn row(&self, r: usize) -> DVector<f64> {
        self.x.row(r).transpose()
    }

    /// Dataset made of the given row indices (in that order).
    pub fn select(&self, rows: &[usize]) -> Self {
        let x = DMatrix::from_fn(rows.len(), self.dim(), |r, c| self.x[(rows[r], c)]);
        let y = DVector::from_fn(rows.len(), |r, _| self.y[rows[r]]);
        Self { x, y }
    }

    pub fn with_labels(&self, y: DVector<f64>) -> Result<Self> {
        Self::new(self.x.clone(), y)
    }

    /// Average squared error `(1/m)‖y − Xw‖²`; `None` for an empty dataset.
    pub fn mean_squared_error(&self, w: &DVector<f64>) -> Option<f64> {
        if self.is_empty() {
            return None;
        }
        let r = &self.y - &self.x * w;
        Some(r.norm_squared() / self.len() as f64)
    }

    /// Parse `f1,…,fd,label` CSV text. The header is required; its last
    /// column must be `label`.
    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header = reader.headers()?.clone();
        let cols = header.len();
        if cols < 2 || header.get(cols - 1) != Some("label") {
            return Err(Error::Parse {
                line: 1,
                msg: "header must be `f1,…,fd,label` with at least one feature".into(),
            });
        }
        let d = cols - 1;
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (k, rec) in reader.records().enumerate() {
            let rec = rec?;
            let line = k + 2;
            if rec.len() != cols {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected {cols} fields, found {}", rec.len()),
                });
            }
            let mut vals = Vec::with_capacity(cols);
            for field in rec.iter() {
                let v: f64 = field.parse().map_err(|_| Error::Parse {
                    line,
                    msg: format!("non-numeric field `{field}`"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        line,
                        msg: format!("non-finite field `{field}`"),
                    });
                }
                vals.push(v);
            }
            labels.push(vals.pop().unwrap_or_default());
            rows.push(vals);
        }
        if rows.is_empty() {
            return Ok(Self::empty(d));
        }
        Self::from_rows(&rows, &labels)
    }

    pub fn to_csv(&self) -> String {
        let mut out: Vec<String> = (1..=self.dim()).map(|j| format!("f{j}")).collect();
        out.push("label".into());
        let mut text = out.join(",");
        text.push('\n');
        for r in 0..self.len() {
            let mut fields: Vec<String> = self.x.row(r).iter().map(|v| v.to_string()).collect();
            fields.push(self.y[r].to_string());
            text.push_str(&fields.join(","));
            text.push('\n');
        }
        text
    }
}

/// Loss contract a node exposes to the solvers.
pub trait LocalLoss: Debug + Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, w: &DVector<f64>) -> f64;
    fn gradient(&self, w: &DVector<f64>) -> DVector<f64>;

    /// `argmin_w' L(w') + (ρ/2)‖v − w'‖²`, when the loss offers one.
    fn prox(&self, _v: &DVector<f64>, _rho: f64) -> Option<Result<DVector<f64>>> {
        None
    }

    fn as_quadratic(&self) -> Option<&QuadLoss> {
        None
    }
}

/// Value and gradient with a dimension check.
pub fn eval(loss: &dyn LocalLoss, w: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
    if w.len() != loss.dim() {
        return Err(Error::DimensionMismatch {
            expected: loss.dim(),
            got: w.len(),
        });
    }
    Ok((loss.value(w), loss.gradient(w)))
}

/// `L(w) = wᵀQw + qᵀw + c` with symmetric PSD `Q`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuadLoss {
    q_mat: DMatrix<f64>,
    q_vec: DVector<f64>,
    c: f64,
    #[serde(skip)]
    sigma: OnceLock<f64>,
}

impl PartialEq for QuadLoss {
    fn eq(&self, other: &Self) -> bool {
        self.q_mat == other.q_mat && self.q_vec == other.q_vec && self.c == other.c
    }
}

impl QuadLoss {
    pub fn new(q_mat: DMatrix<f64>, q_vec: DVector<f64>, c: f64) -> Result<Self> {
        let d = q_mat.nrows();
        if q_mat.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: q_mat.ncols(),
            });
        }
        if q_vec.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: q_vec.len(),
            });
        }
        let scale = q_mat.amax().max(1.0);
        if (&q_mat - q_mat.transpose()).amax() > 1e-12 * scale {
            return Err(Error::param("Q", "matrix is not symmetric"));
        }
        if d > 0 && linalg::min_eigenvalue(&q_mat)? < -1e-10 * scale {
            return Err(Error::param("Q", "matrix is not positive semidefinite"));
        }
        Ok(Self {
            q_mat,
            q_vec,
            c,
            sigma: OnceLock::new(),
        })
    }

    pub fn zero(d: usize) -> Self {
        Self {
            q_mat: DMatrix::zeros(d, d),
            q_vec: DVector::zeros(d),
            c: 0.0,
            sigma: OnceLock::new(),
        }
    }

    /// Scalar loss `a·w² + b·w + c`.
    pub fn scalar(a: f64, b: f64, c: f64) -> Result<Self> {
        Self::new(
            DMatrix::from_element(1, 1, a),
            DVector::from_element(1, b),
            c,
        )
    }

    /// `(1/m)‖y − Xw‖² + ridge‖w‖²`; the zero data term for an empty dataset.
    pub fn from_dataset(ds: &LocalDataset, ridge: f64) -> Result<Self> {
        if !(ridge.is_finite() && ridge >= 0.0) {
            return Err(Error::param("ridge", format!("must be nonnegative, got {ridge}")));
        }
        let d = ds.dim();
        if d == 0 {
            return Err(Error::param("d", "feature dimension must be at least 1"));
        }
        let mut q_mat = DMatrix::identity(d, d) * ridge;
        let mut q_vec = DVector::zeros(d);
        let mut c = 0.0;
        let m = ds.len();
        if m > 0 {
            let inv_m = 1.0 / m as f64;
            let xt = ds.x().transpose();
            q_mat += (&xt * ds.x()) * inv_m;
            q_vec = (&xt * ds.y()) * (-2.0 * inv_m);
            c = ds.y().norm_squared() * inv_m;
        }
        // XᵀX is symmetric in exact arithmetic; remove round-off asymmetry.
        let q_mat = (&q_mat + q_mat.transpose()) * 0.5;
        Ok(Self {
            q_mat,
            q_vec,
            c,
            sigma: OnceLock::new(),
        })
    }

    pub fn q_mat(&self) -> &DMatrix<f64> {
        &self.q_mat
    }

    pub fn q_vec(&self) -> &DVector<f64> {
        &self.q_vec
    }

    pub fn offset(&self) -> f64 {
        self.c
    }

    /// Strong convexity coefficient `2·λ_min(Q)`, clamped at zero.
    pub fn strong_convexity(&self) -> f64 {
        *self.sigma.get_or_init(|| {
            linalg::min_eigenvalue(&self.q_mat)
                .map(|l| (2.0 * l).max(0.0))
                .unwrap_or(0.0)
        })
    }

    pub fn prox_quad(&self, v: &DVector<f64>, rho: f64) -> Result<DVector<f64>> {
        if !(rho.is_finite() && rho > 0.0) {
            return Err(Error::param("rho", format!("must be positive, got {rho}")));
        }
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: v.len(),
            });
        }
        if self.q_mat.iter().all(|&x| x == 0.0) {
            return Ok(v - &self.q_vec / rho);
        }
        let d = self.dim();
        let a = &self.q_mat * 2.0 + DMatrix::identity(d, d) * rho;
        let b = v * rho - &self.q_vec;
        linalg::spd_solve(&a, &b)
    }

    /// Unique minimizer `−Q⁻¹q/2`; errors when `Q` is singular.
    pub fn minimizer(&self) -> Result<DVector<f64>> {
        let lmin = linalg::min_eigenvalue(&self.q_mat)?;
        if lmin <= 1e-10 {
            return Err(Error::NonUnique { lambda_min: lmin });
        }
        linalg::spd_solve(&(&self.q_mat * 2.0), &(-&self.q_vec))
    }

    /// Add `ρ_e·(1/m')‖u − test_x·w‖²` for user-supplied prediction guesses `u`.
    pub fn augment_explainability(
        &self,
        test_x: &DMatrix<f64>,
        guesses: &DVector<f64>,
        rho_e: f64,
    ) -> Result<Self> {
        if !(rho_e.is_finite() && rho_e >= 0.0) {
            return Err(Error::param("rho_e", format!("must be nonnegative, got {rho_e}")));
        }
        if test_x.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: test_x.ncols(),
            });
        }
        if test_x.nrows() != guesses.len() {
            return Err(Error::DimensionMismatch {
                expected: test_x.nrows(),
                got: guesses.len(),
            });
        }
        let m = test_x.nrows();
        if m == 0 || rho_e == 0.0 {
            return Ok(self.clone());
        }
        let s = rho_e / m as f64;
        let xt = test_x.transpose();
        let q_mat = &self.q_mat + (&xt * test_x) * s;
        let q_mat = (&q_mat + q_mat.transpose()) * 0.5;
        Ok(Self {
            q_mat,
            q_vec: &self.q_vec - (&xt * guesses) * (2.0 * s),
            c: self.c + guesses.norm_squared() * s,
            sigma: OnceLock::new(),
        })
    }
}

impl LocalLoss for QuadLoss {
    fn dim(&self) -> usize {
        self.q_vec.len()
    }

    fn value(&self, w: &DVector<f64>) -> f64 {
        w.dot(&(&self.q_mat * w)) + self.q_vec.dot(w) + self.c
    }

    fn gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.q_mat * w * 2.0 + &self.q_vec
    }

    fn prox(&self, v: &DVector<f64>, rho: f64) -> Option<Result<DVector<f64>>> {
        Some(self.prox_quad(v, rho))
    }

    fn as_quadratic(&self) -> Option<&QuadLoss> {
        Some(self)
    }
}

/// `y = X w̄ + ε` with standard normal features and `N(0, σ²)` noise.
pub fn generate_local(w_bar: &DVector<f64>, m: usize, noise_std: f64, seed: u64) -> Result<LocalDataset> {
    generate_local_with_noise(w_bar, m, noise_std, seed).map(|(ds, _)| ds)
}

/// Like [`generate_local`] but also returns the noise vector.
pub fn generate_local_with_noise(
    w_bar: &DVector<f64>,
    m: usize,
    noise_std: f64,
    seed: u64,
) -> Result<(LocalDataset, DVector<f64>)> {
    if !(noise_std.is_finite() && noise_std >= 0.0) {
        return Err(Error::param("noise_std", format!("must be nonnegative, got {noise_std}")));
    }
    let d = w_bar.len();
    let mut r = rng::stream(seed, "data/local", &[m as u64, d as u64]);
    let x = DMatrix::from_fn(m, d, |_, _| r.sample::<f64, _>(StandardNormal));
    let noise = DVector::from_fn(m, |_, _| noise_std * r.sample::<f64, _>(StandardNormal));
    let y = &x * w_bar + &noise;
    Ok((LocalDataset::new(x, y)?, noise))
}

/// Upper bound `(4/m²)‖Xᵀn‖²/λ₁²` on `‖ŵ − w̄‖²` for least squares with
/// label noise `n`, where `λ₁` is the smallest eigenvalue of `(1/m)XᵀX`.
pub fn linreg_error_bound(ds: &LocalDataset, noise: &DVector<f64>) -> Result<f64> {
    if noise.len() != ds.len() {
        return Err(Error::DimensionMismatch {
            expected: ds.len(),
            got: noise.len(),
        });
    }
    let m = ds.len() as f64;
    if ds.is_empty() {
        return Err(Error::Precondition("empty dataset".into()));
    }
    let gram = (ds.x().transpose() * ds.x()) / m;
    let l1 = linalg::min_eigenvalue(&gram)?;
    if l1 <= 1e-12 {
        return Err(Error::NonUnique { lambda_min: l1 });
    }
    let xtn = ds.x().transpose() * noise;
    Ok(4.0 / (m * m) * xtn.norm_squared() / (l1 * l1))
}
