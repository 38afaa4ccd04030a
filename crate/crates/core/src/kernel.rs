//! Gaussian-kernel decision functions and the smooth surrogate of the 0-1
//! treatment-agreement indicator.

use std::path::Path;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Arm;
use crate::error::{Error, Result};

/// Anything that maps covariates to an arm.
pub trait Policy: Sync {
    fn assign(&self, x: &[f64]) -> Arm;
}

impl<F> Policy for F
where
    F: Fn(&[f64]) -> Arm + Sync,
{
    fn assign(&self, x: &[f64]) -> Arm {
        self(x)
    }
}

/// Treats everybody with the same arm.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstantPolicy(pub Arm);

impl Policy for ConstantPolicy {
    fn assign(&self, _x: &[f64]) -> Arm {
        self.0
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()
}

fn gaussian(a: &[f64], b: &[f64], bandwidth: f64) -> f64 {
    (-sq_dist(a, b) / (2.0 * bandwidth * bandwidth)).exp()
}

/// `K_ij = exp(-‖x_i - x_j‖² / (2 bandwidth²))`.
pub fn gram(x: &[Vec<f64>], bandwidth: f64) -> Result<DMatrix<f64>> {
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(Error::InvalidInput(format!(
            "bandwidth must be positive, got {bandwidth}"
        )));
    }
    let n = x.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (0..n).map(|j| gaussian(&x[i], &x[j], bandwidth)).collect())
        .collect();
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

/// Median of the positive pairwise Euclidean distances; 1 when all points coincide.
pub fn median_bandwidth(x: &[Vec<f64>]) -> f64 {
    let mut d: Vec<f64> = (0..x.len())
        .flat_map(|i| ((i + 1)..x.len()).map(move |j| (i, j)))
        .map(|(i, j)| sq_dist(&x[i], &x[j]).sqrt())
        .filter(|&v| v > 0.0)
        .collect();
    if d.is_empty() {
        return 1.0;
    }
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    *m
}

/// Per-column centering and scaling applied before the kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Column means and standard deviations; constant columns keep scale 1.
    pub fn fit(x: &[Vec<f64>]) -> Self {
        let p = x.first().map_or(0, Vec::len);
        let n = x.len().max(1) as f64;
        let mean: Vec<f64> = (0..p)
            .map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n)
            .collect();
        let scale = (0..p)
            .map(|j| {
                let var = x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
                if var > 0.0 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, scale }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

/// Training covariates, bandwidth and Gram matrix, with the eigendecomposition
/// of the Gram matrix computed on first use.
#[derive(Debug)]
pub struct KernelModel {
    bandwidth: f64,
    train_x: Vec<Vec<f64>>,
    scaler: Option<Standardizer>,
    gram: DMatrix<f64>,
    spectrum: OnceLock<SymmetricEigen<f64, nalgebra::Dyn>>,
}

impl Clone for KernelModel {
    fn clone(&self) -> Self {
        KernelModel {
            bandwidth: self.bandwidth,
            train_x: self.train_x.clone(),
            scaler: self.scaler.clone(),
            gram: self.gram.clone(),
            spectrum: self.spectrum.clone(),
        }
    }
}

impl KernelModel {
    /// `bandwidth = None` picks the median heuristic on the (scaled) covariates.
    pub fn new(
        x: &[Vec<f64>],
        bandwidth: Option<f64>,
        scaler: Option<Standardizer>,
    ) -> Result<Self> {
        let train_x: Vec<Vec<f64>> = match &scaler {
            Some(s) => x.iter().map(|r| s.apply(r)).collect(),
            None => x.to_vec(),
        };
        let bandwidth = bandwidth.unwrap_or_else(|| median_bandwidth(&train_x));
        let gram = gram(&train_x, bandwidth)?;
        Ok(KernelModel {
            bandwidth,
            train_x,
            scaler,
            gram,
            spectrum: OnceLock::new(),
        })
    }

    /// A model over an arbitrary symmetric PSD matrix, for tests and custom kernels.
    /// Out-of-sample evaluation is unavailable.
    pub fn precomputed(gram: DMatrix<f64>) -> Result<Self> {
        if !gram.is_square() {
            return Err(Error::InvalidInput("gram matrix must be square".into()));
        }
        Ok(KernelModel {
            bandwidth: f64::NAN,
            train_x: Vec::new(),
            scaler: None,
            gram,
            spectrum: OnceLock::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.gram.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.gram.nrows() == 0
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn train_x(&self) -> &[Vec<f64>] {
        &self.train_x
    }

    pub fn scaler(&self) -> Option<&Standardizer> {
        self.scaler.as_ref()
    }

    /// Eigenvalues (clamped at 0) and orthonormal eigenvectors of `K`.
    pub fn spectrum(&self) -> &SymmetricEigen<f64, nalgebra::Dyn> {
        self.spectrum.get_or_init(|| {
            let mut eig = self.gram.clone().symmetric_eigen();
            eig.eigenvalues.iter_mut().for_each(|v| *v = v.max(0.0));
            eig
        })
    }

    pub fn apply(&self, beta: &DVector<f64>) -> DVector<f64> {
        &self.gram * beta
    }

    /// `Σ_j β_j k(x, X_j)` for a raw (unscaled) covariate vector.
    pub fn score(&self, beta: &[f64], x: &[f64]) -> f64 {
        let x = match &self.scaler {
            Some(s) => s.apply(x),
            None => x.to_vec(),
        };
        self.train_x
            .iter()
            .zip(beta)
            .map(|(xj, b)| b * gaussian(&x, xj, self.bandwidth))
            .sum()
    }
}

/// Piecewise-quadratic surrogate `L = L₁ - L₂` of the step `I(u > 0)` with
/// transition half-width `δ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateLoss {
    pub delta: f64,
}

/// `L`, `L₁`, `L₂` and the derivatives of the convex parts at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValues {
    pub l: f64,
    pub l1: f64,
    pub l2: f64,
    pub dl1: f64,
    pub dl2: f64,
}

impl Default for SurrogateLoss {
    fn default() -> Self {
        SurrogateLoss { delta: 1.0 }
    }
}

impl SurrogateLoss {
    pub fn new(delta: f64) -> Result<Self> {
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::InvalidInput(format!(
                "delta must be positive, got {delta}"
            )));
        }
        Ok(SurrogateLoss { delta })
    }

    pub fn l(&self, u: f64) -> f64 {
        let d = self.delta;
        if u < -d {
            0.0
        } else if u < 0.0 {
            0.5 * (1.0 + u / d).powi(2)
        } else if u < d {
            1.0 - 0.5 * (1.0 - u / d).powi(2)
        } else {
            1.0
        }
    }

    pub fn l1(&self, u: f64) -> f64 {
        let d = self.delta;
        if u <= -d {
            0.0
        } else if u <= 0.0 {
            0.5 * (1.0 + u / d).powi(2)
        } else {
            0.5 + u / d
        }
    }

    pub fn l2(&self, u: f64) -> f64 {
        let d = self.delta;
        if u <= 0.0 {
            0.0
        } else if u <= d {
            0.5 * (u / d).powi(2)
        } else {
            u / d - 0.5
        }
    }

    pub fn dl1(&self, u: f64) -> f64 {
        let d = self.delta;
        if u <= -d {
            0.0
        } else if u <= 0.0 {
            (1.0 + u / d) / d
        } else {
            1.0 / d
        }
    }

    pub fn dl2(&self, u: f64) -> f64 {
        let d = self.delta;
        if u <= 0.0 {
            0.0
        } else if u <= d {
            u / (d * d)
        } else {
            1.0 / d
        }
    }

    /// Second derivative of `L₁` (one-sided at the kinks of `L₁'`).
    pub fn d2l1(&self, u: f64) -> f64 {
        if u > -self.delta && u <= 0.0 {
            1.0 / (self.delta * self.delta)
        } else {
            0.0
        }
    }

    pub fn d2l2(&self, u: f64) -> f64 {
        if u > 0.0 && u <= self.delta {
            1.0 / (self.delta * self.delta)
        } else {
            0.0
        }
    }

    pub fn eval(&self, u: f64) -> LossValues {
        LossValues {
            l: self.l(u),
            l1: self.l1(u),
            l2: self.l2(u),
            dl1: self.dl1(u),
            dl2: self.dl2(u),
        }
    }
}

/// A learned rule `d(x) = sign(Σ_j β_j k(x, X_j))`, zero mapped to `+1`.
#[derive(Clone, Debug)]
pub struct TreatmentRule {
    pub model: KernelModel,
    pub beta: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RuleFile {
    bandwidth: f64,
    scaler: Option<Standardizer>,
    train_x: Vec<Vec<f64>>,
    beta: Vec<f64>,
}

impl TreatmentRule {
    pub fn new(model: KernelModel, beta: Vec<f64>) -> Result<Self> {
        if beta.len() != model.len() {
            return Err(Error::InvalidInput(format!(
                "beta has length {}, model has {} training points",
                beta.len(),
                model.len()
            )));
        }
        Ok(TreatmentRule { model, beta })
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        self.model.score(&self.beta, x)
    }

    pub fn decision(&self, x: &[f64]) -> Arm {
        Arm::from_score(self.score(x))
    }

    pub fn to_json(&self) -> Result<String> {
        let file = RuleFile {
            bandwidth: self.model.bandwidth,
            scaler: self.model.scaler.clone(),
            train_x: self.model.train_x.clone(),
            beta: self.beta.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    /// Rebuilds the rule, including its Gram matrix, from [`TreatmentRule::to_json`] output.
    pub fn from_json(s: &str) -> Result<Self> {
        let f: RuleFile = serde_json::from_str(s)?;
        let gram = gram(&f.train_x, f.bandwidth)?;
        let model = KernelModel {
            bandwidth: f.bandwidth,
            train_x: f.train_x,
            scaler: f.scaler,
            gram,
            spectrum: OnceLock::new(),
        };
        TreatmentRule::new(model, f.beta)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

impl Policy for TreatmentRule {
    fn assign(&self, x: &[f64]) -> Arm {
        self.decision(x)
    }
}
