//! Censoring-survival estimators `Ŝ_C(t | x, a)`.
//!
//! Both estimators model the censoring time, so a subject with `Δ = 0`
//! contributes an event and one with `Δ = 1` is censored.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Arm, Dataset};
use crate::error::{Error, Result};

/// Right-continuous, nonincreasing step function starting at 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepCurve {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl StepCurve {
    /// Curve equal to 1 everywhere.
    pub fn one() -> Self {
        StepCurve {
            times: Vec::new(),
            values: Vec::new(),
        }
    }

    /// `values[k]` holds on `[times[k], times[k+1])`; times must increase.
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::InvalidInput(
                "curve times and values differ in length".into(),
            ));
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidInput(
                "curve times must be strictly increasing".into(),
            ));
        }
        Ok(StepCurve { times, values })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `S(t)`.
    pub fn at(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&s| s <= t);
        if k == 0 {
            1.0
        } else {
            self.values[k - 1]
        }
    }

    /// `S(t-)`.
    pub fn left_limit(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&s| s < t);
        if k == 0 {
            1.0
        } else {
            self.values[k - 1]
        }
    }
}

/// Product-limit estimate of the censoring survival from `(Y, Δ)` pairs.
/// The risk set at `t` is `#{Y >= t}`.
pub fn km_censoring_curve(times: &[f64], events: &[bool]) -> StepCurve {
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let mut at_risk = times.len();
    let mut surv = 1.0;
    let (mut knots, mut values) = (Vec::new(), Vec::new());
    let mut k = 0;
    while k < order.len() {
        let t = times[order[k]];
        let mut tied = 0;
        let mut censored = 0;
        while k + tied < order.len() && times[order[k + tied]] == t {
            if !events[order[k + tied]] {
                censored += 1;
            }
            tied += 1;
        }
        if censored > 0 {
            surv *= 1.0 - censored as f64 / at_risk as f64;
            knots.push(t);
            values.push(surv);
        }
        at_risk -= tied;
        k += tied;
    }
    StepCurve {
        times: knots,
        values,
    }
}

/// Which columns enter the Cox censoring model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoxDesign {
    /// Covariate indices, in order.
    pub covariates: Vec<usize>,
    /// Include the arm sign `A` as a column.
    pub arm: bool,
    /// Include `A · x_k` for every selected covariate.
    pub interactions: bool,
}

impl CoxDesign {
    /// All covariates, the arm, and all arm interactions.
    pub fn full(p: usize) -> Self {
        CoxDesign {
            covariates: (0..p).collect(),
            arm: true,
            interactions: true,
        }
    }

    pub fn width(&self) -> usize {
        let k = self.covariates.len();
        k + usize::from(self.arm) + if self.interactions { k } else { 0 }
    }

    pub fn row(&self, x: &[f64], arm: Arm) -> Vec<f64> {
        let a = arm.sign();
        let mut z: Vec<f64> = self.covariates.iter().map(|&j| x[j]).collect();
        if self.arm {
            z.push(a);
        }
        if self.interactions {
            z.extend(self.covariates.iter().map(|&j| a * x[j]));
        }
        z
    }
}

/// Fitted proportional-hazards model for the censoring time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoxFit {
    pub design: CoxDesign,
    pub coefficients: Vec<f64>,
    pub standard_errors: Vec<f64>,
    /// Column means the linear predictor is centered on.
    pub means: Vec<f64>,
    /// Breslow cumulative baseline hazard at the centered design.
    pub baseline_times: Vec<f64>,
    pub baseline_cumhaz: Vec<f64>,
    pub iterations: usize,
    pub log_likelihood: f64,
}

impl CoxFit {
    fn linear_predictor(&self, x: &[f64], arm: Arm) -> f64 {
        self.design
            .row(x, arm)
            .iter()
            .zip(&self.means)
            .zip(&self.coefficients)
            .map(|((z, m), b)| (z - m) * b)
            .sum()
    }

    fn cumhaz(&self, t: f64, strict: bool) -> f64 {
        let k = if strict {
            self.baseline_times.partition_point(|&s| s < t)
        } else {
            self.baseline_times.partition_point(|&s| s <= t)
        };
        if k == 0 {
            0.0
        } else {
            self.baseline_cumhaz[k - 1]
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum CensorSurvival {
    /// `Ŝ_C ≡ s`; used for known censoring and for tests.
    Constant(f64),
    KaplanMeierByArm {
        treated: StepCurve,
        control: StepCurve,
    },
    CoxPh(CoxFit),
}

impl CensorSurvival {
    /// `Ŝ_C(t | x, a)`.
    pub fn survival(&self, t: f64, x: &[f64], arm: Arm) -> f64 {
        match self {
            CensorSurvival::Constant(s) => *s,
            CensorSurvival::KaplanMeierByArm { treated, control } => match arm {
                Arm::Treated => treated.at(t),
                Arm::Control => control.at(t),
            },
            CensorSurvival::CoxPh(fit) => {
                (-fit.cumhaz(t, false) * fit.linear_predictor(x, arm).exp()).exp()
            }
        }
    }

    /// `Ŝ_C(t- | x, a)`, the estimate of `P(C >= t | x, a)` used in the weights.
    pub fn survival_left(&self, t: f64, x: &[f64], arm: Arm) -> f64 {
        match self {
            CensorSurvival::Constant(s) => *s,
            CensorSurvival::KaplanMeierByArm { treated, control } => match arm {
                Arm::Treated => treated.left_limit(t),
                Arm::Control => control.left_limit(t),
            },
            CensorSurvival::CoxPh(fit) => {
                (-fit.cumhaz(t, true) * fit.linear_predictor(x, arm).exp()).exp()
            }
        }
    }

    /// Writes the fitted curves as CSV: `arm,time,survival` for Kaplan–Meier,
    /// `time,cumulative_hazard` (baseline) for Cox.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        match self {
            CensorSurvival::Constant(s) => {
                w.write_record(["time", "survival"])?;
                w.write_record(["0".to_string(), s.to_string()])?;
            }
            CensorSurvival::KaplanMeierByArm { treated, control } => {
                w.write_record(["arm", "time", "survival"])?;
                for (arm, curve) in [(Arm::Treated, treated), (Arm::Control, control)] {
                    w.write_record([arm.to_string(), "0".into(), "1".into()])?;
                    for (t, s) in curve.times.iter().zip(&curve.values) {
                        w.write_record([arm.to_string(), t.to_string(), s.to_string()])?;
                    }
                }
            }
            CensorSurvival::CoxPh(fit) => {
                w.write_record(["time", "cumulative_hazard"])?;
                for (t, h) in fit.baseline_times.iter().zip(&fit.baseline_cumhaz) {
                    w.write_record([t.to_string(), h.to_string()])?;
                }
            }
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

/// Separate censoring Kaplan–Meier curves for the two arms.
pub fn fit_km(data: &Dataset) -> Result<CensorSurvival> {
    let curve = |arm: Arm| -> Result<StepCurve> {
        let (times, events): (Vec<f64>, Vec<bool>) = data
            .subjects()
            .iter()
            .filter(|s| s.arm == arm)
            .map(|s| (s.time, s.event))
            .unzip();
        if times.is_empty() {
            return Err(Error::EmptyArm(arm));
        }
        Ok(km_censoring_curve(&times, &events))
    };
    Ok(CensorSurvival::KaplanMeierByArm {
        treated: curve(Arm::Treated)?,
        control: curve(Arm::Control)?,
    })
}

const COX_MAX_ITER: usize = 100;
const COX_GRAD_TOL: f64 = 1e-8;

struct PartialLikelihood {
    loglik: f64,
    grad: DVector<f64>,
    info: DMatrix<f64>,
}

/// Breslow partial likelihood; `order` sorts subjects by decreasing time.
fn partial_likelihood(
    z: &[Vec<f64>],
    times: &[f64],
    is_event: &[bool],
    order: &[usize],
    beta: &DVector<f64>,
) -> PartialLikelihood {
    let p = beta.len();
    let mut loglik = 0.0;
    let mut grad = DVector::zeros(p);
    let mut info = DMatrix::zeros(p, p);
    let mut s0 = 0.0;
    let mut s1 = DVector::<f64>::zeros(p);
    let mut s2 = DMatrix::<f64>::zeros(p, p);
    let mut k = 0;
    while k < order.len() {
        let t = times[order[k]];
        let mut end = k;
        while end < order.len() && times[order[end]] == t {
            let i = order[end];
            let zi = DVector::from_column_slice(&z[i]);
            let r = zi.dot(beta).exp();
            s0 += r;
            s1.axpy(r, &zi, 1.0);
            s2.ger(r, &zi, &zi, 1.0);
            end += 1;
        }
        let mut d = 0.0;
        for &i in &order[k..end] {
            if is_event[i] {
                let zi = DVector::from_column_slice(&z[i]);
                loglik += zi.dot(beta);
                grad += &zi;
                d += 1.0;
            }
        }
        if d > 0.0 {
            let mean = &s1 / s0;
            loglik -= d * s0.ln();
            grad.axpy(-d, &mean, 1.0);
            info += (&s2 / s0 - &mean * mean.transpose()) * d;
        }
        k = end;
    }
    PartialLikelihood { loglik, grad, info }
}

/// Proportional-hazards model for the censoring time by Newton–Raphson on
/// the Breslow partial likelihood, with a Breslow baseline hazard.
pub fn fit_cox(data: &Dataset, design: &CoxDesign) -> Result<CensorSurvival> {
    let n = data.len();
    let subjects = data.subjects();
    if let Some(&j) = design.covariates.iter().find(|&&j| j >= data.dim()) {
        return Err(Error::InvalidInput(format!(
            "covariate index {j} out of range for dimension {}",
            data.dim()
        )));
    }
    let is_event: Vec<bool> = subjects.iter().map(|s| !s.event).collect();
    if !is_event.iter().any(|&e| e) {
        return Err(Error::NoCensoringEvents);
    }
    let times: Vec<f64> = subjects.iter().map(|s| s.time).collect();
    let p = design.width();
    let raw: Vec<Vec<f64>> = subjects.iter().map(|s| design.row(&s.x, s.arm)).collect();
    let means: Vec<f64> = (0..p)
        .map(|j| raw.iter().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    let z: Vec<Vec<f64>> = raw
        .iter()
        .map(|r| r.iter().zip(&means).map(|(v, m)| v - m).collect())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| times[b].total_cmp(&times[a]));

    let mut beta = DVector::<f64>::zeros(p);
    let mut pl = partial_likelihood(&z, &times, &is_event, &order, &beta);
    let mut iterations = 0;
    while pl.grad.norm() > COX_GRAD_TOL {
        if iterations == COX_MAX_ITER {
            return Err(Error::CoxNonConvergence {
                iterations,
                grad_norm: pl.grad.norm(),
            });
        }
        iterations += 1;
        let chol = pl
            .info
            .clone()
            .cholesky()
            .ok_or(Error::SingularInformation)?;
        let step = chol.solve(&pl.grad);
        let mut scale = 1.0;
        loop {
            let trial = &beta + &step * scale;
            let next = partial_likelihood(&z, &times, &is_event, &order, &trial);
            if next.loglik.is_finite() && next.loglik >= pl.loglik - 1e-12 * pl.loglik.abs() {
                beta = trial;
                pl = next;
                break;
            }
            scale *= 0.5;
            if scale < 1e-10 {
                return Err(Error::CoxNonConvergence {
                    iterations,
                    grad_norm: pl.grad.norm(),
                });
            }
        }
    }
    let cov = pl
        .info
        .clone()
        .cholesky()
        .ok_or(Error::SingularInformation)?
        .inverse();
    let standard_errors = (0..p).map(|j| cov[(j, j)].sqrt()).collect();

    // Breslow: increments d_k / Σ_{Y_j >= t_k} exp(z_j β), accumulated forward.
    let risk: Vec<f64> = z
        .iter()
        .map(|zi| DVector::from_column_slice(zi).dot(&beta).exp())
        .collect();
    let mut increments: Vec<(f64, f64)> = Vec::new();
    let mut s0 = 0.0;
    let mut k = 0;
    while k < n {
        let t = times[order[k]];
        let mut d = 0.0;
        while k < n && times[order[k]] == t {
            s0 += risk[order[k]];
            if is_event[order[k]] {
                d += 1.0;
            }
            k += 1;
        }
        if d > 0.0 {
            increments.push((t, d / s0));
        }
    }
    increments.reverse();
    let mut cum = 0.0;
    let (baseline_times, baseline_cumhaz) = increments
        .into_iter()
        .map(|(t, h)| {
            cum += h;
            (t, cum)
        })
        .unzip();

    Ok(CensorSurvival::CoxPh(CoxFit {
        design: design.clone(),
        coefficients: beta.iter().copied().collect(),
        standard_errors,
        means,
        baseline_times,
        baseline_cumhaz,
        iterations,
        log_likelihood: pl.loglik,
    }))
}
