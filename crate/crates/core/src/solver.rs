//! Proximal DC algorithm with ε-active knot enumeration, over a growing
//! random sample ([`fit_sampled`]) or the full data ([`fit_deterministic`]).
//!
//! Each outer iteration linearizes the concave part of every ε-active knot at
//! the current iterate, solves the strongly convex proximal subproblem for each,
//! and keeps the candidate with the smallest objective-plus-proximal value.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::KernelModel;
use crate::objective::{active_indices, ConvexModel, DcObjective, SampleState, SampledProblem};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Proximal weight; the penalty is `‖β - β_ref‖² / (2ρ)`.
    pub rho: f64,
    /// Slack of the active knot set.
    pub eps: f64,
    /// Draws added to the sample each iteration; `None` means `max(32, ⌈n/20⌉)`.
    pub delta_nu: Option<usize>,
    pub max_outer: usize,
    /// Relative step threshold: stop after two steps with
    /// `‖Δβ‖ <= tol_step · (1 + ‖β‖)`.
    pub tol_step: f64,
    /// Subproblem gradient tolerance, relative to `1 + |F|`.
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            rho: 1.0,
            eps: 1e-4,
            delta_nu: None,
            max_outer: 200,
            tol_step: 1e-5,
            inner_tol: 1e-7,
            inner_max_iter: 500,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return bad(format!("rho must be positive, got {}", self.rho));
        }
        if !(self.eps >= 0.0) {
            return bad(format!("eps must be nonnegative, got {}", self.eps));
        }
        if self.delta_nu == Some(0) {
            return bad("delta_nu must be at least 1".into());
        }
        if !(self.tol_step > 0.0) || !(self.inner_tol > 0.0) {
            return bad("tolerances must be positive".into());
        }
        if self.max_outer == 0 || self.inner_max_iter == 0 {
            return bad("iteration caps must be positive".into());
        }
        Ok(())
    }

    pub fn sample_increment(&self, n: usize) -> usize {
        self.delta_nu.unwrap_or_else(|| 32.max(n.div_ceil(20)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    /// `N_ν`.
    pub sample_size: usize,
    /// `Ṽ(β^ν)` on the iteration's sample.
    pub value_before: f64,
    /// `Ṽ(β^{ν+1})` on the same sample.
    pub value_after: f64,
    pub step_norm: f64,
    pub active_size: usize,
    /// Value of the knot whose subproblem was accepted.
    pub chosen_knot: f64,
    /// `value_before - value_after - ‖Δβ‖²/(2ρ)`; nonnegative up to solver error.
    pub ledger_gap: f64,
    /// Subproblems that needed the doubled iteration budget.
    pub retries: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    StepTolerance,
    MaxIterations,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub beta: Vec<f64>,
    /// `α̂` (CVaR) or `ĉ` (bPOE) attaining the inner minimum on the full data.
    pub inner_scalar: f64,
    /// Full-data objective at `beta`.
    pub objective: f64,
    pub trace: Vec<TraceEntry>,
    pub converged: bool,
    pub reason: StopReason,
    pub config: SolverConfig,
}

impl FitResult {
    pub fn beta_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.beta)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Source of sample growth for [`fit_sampled`].
pub trait Sampler {
    /// Grows `state` in place; must only add indices.
    fn grow(&mut self, state: &mut SampleState);
}

/// `batch` i.i.d. uniform draws with replacement per call.
pub struct UniformSampler {
    rng: ChaCha8Rng,
    n: usize,
    batch: usize,
}

impl UniformSampler {
    pub fn new(n: usize, batch: usize, seed: u64) -> Self {
        UniformSampler {
            rng: ChaCha8Rng::seed_from_u64(seed),
            n,
            batch,
        }
    }
}

impl Sampler for UniformSampler {
    fn grow(&mut self, state: &mut SampleState) {
        let draws: Vec<usize> = (0..self.batch)
            .map(|_| self.rng.random_range(0..self.n))
            .collect();
        state.extend(&draws);
    }
}

/// Fills the sample with every index once and never grows it further.
pub struct IdentitySampler;

impl Sampler for IdentitySampler {
    fn grow(&mut self, state: &mut SampleState) {
        if state.is_empty() {
            *state = SampleState::full(state.counts().len());
        }
    }
}

/// Eigenvalues of `K` below this fraction of the largest are left out of the
/// dense Newton block.
const BLOCK_CUTOFF: f64 = 1e-4;
const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

/// Eigenvalues sorted in decreasing order and the matching eigenvectors.
struct SortedSpectrum {
    values: Vec<f64>,
    vectors: DMatrix<f64>,
}

impl SortedSpectrum {
    fn of(kernel: &KernelModel) -> Self {
        let eig = kernel.spectrum();
        let mut idx: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        SortedSpectrum {
            values: idx.iter().map(|&k| eig.eigenvalues[k]).collect(),
            vectors: eig.eigenvectors.select_columns(idx.iter()),
        }
    }
}

/// `model(β) + ‖β - β_ref‖² / (2ρ)` and its gradient.
fn prox_value(model: &ConvexModel<'_>, rho: f64, beta: &DVector<f64>) -> (f64, DVector<f64>) {
    let (v, g) = model.value_and_gradient(beta);
    let diff = beta - model.beta_ref();
    (v + diff.norm_squared() / (2.0 * rho), g + diff / rho)
}

/// Minimizes `model(β) + ‖β - β_ref‖²/(2ρ)` from `β_ref` by damped Newton
/// steps. The Hessian `K D K + 2λK + I/ρ` is formed exactly on the leading
/// eigenvectors of `K` and approximated by its diagonal on the rest; values
/// and gradients are exact, and every accepted step decreases the objective.
pub fn solve_prox_subproblem(
    model: &ConvexModel<'_>,
    rho: f64,
    inner_tol: f64,
    max_iter: usize,
) -> Result<DVector<f64>> {
    let spectrum = SortedSpectrum::of(model.problem().objective().kernel());
    solve_with_spectrum(model, &spectrum, rho, inner_tol, max_iter)
}

fn solve_with_spectrum(
    model: &ConvexModel<'_>,
    spectrum: &SortedSpectrum,
    rho: f64,
    inner_tol: f64,
    max_iter: usize,
) -> Result<DVector<f64>> {
    let lambda = model.problem().objective().lambda;
    let n = spectrum.values.len();
    let e_max = spectrum.values.first().copied().unwrap_or(0.0);
    let mut beta = model.beta_ref().clone();
    let (mut f, mut g) = prox_value(model, rho, &beta);
    if !f.is_finite() {
        return Err(Error::InvalidInput(
            "subproblem value is not finite at the reference point".into(),
        ));
    }
    for _ in 0..max_iter {
        if g.norm() <= inner_tol * (1.0 + f.abs()) {
            return Ok(beta);
        }
        let d = model.curvature(&beta);
        let d_max = d.iter().copied().fold(0.0, f64::max);
        // Cross terms e_k e_l (VᵀDV)_kl are bounded by e_k e_max d_max.
        let r = spectrum
            .values
            .iter()
            .take_while(|&&e| e > 0.0 && e * e_max * d_max > BLOCK_CUTOFF / rho)
            .count();
        let gz = spectrum.vectors.tr_mul(&g);
        let mut dz = DVector::zeros(n);
        for k in r..n {
            dz[k] = -gz[k] / (2.0 * lambda * spectrum.values[k] + 1.0 / rho);
        }
        if r > 0 {
            let vr = spectrum.vectors.columns(0, r);
            let mut w = vr.clone_owned();
            for (i, di) in d.iter().enumerate() {
                w.row_mut(i).scale_mut(di.sqrt());
            }
            let mut h = w.tr_mul(&w);
            for a in 0..r {
                for b in 0..r {
                    h[(a, b)] *= spectrum.values[a] * spectrum.values[b];
                }
                h[(a, a)] += 2.0 * lambda * spectrum.values[a] + 1.0 / rho;
            }
            let rhs = -gz.rows(0, r).clone_owned();
            let sol = h
                .cholesky()
                .map(|c| c.solve(&rhs))
                .ok_or(Error::SingularInformation)?;
            dz.rows_mut(0, r).copy_from(&sol);
        }
        let dir = &spectrum.vectors * dz;
        let slope = g.dot(&dir);
        let dir = if slope < 0.0 { dir } else { -&g * rho };
        let slope = g.dot(&dir);

        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let trial = &beta + &dir * t;
            let (ft, gt) = prox_value(model, rho, &trial);
            if ft < f && ft <= f + ARMIJO * t * slope {
                beta = trial;
                f = ft;
                g = gt;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // Rounding in the value now exceeds the predicted decrease: this is
            // the minimizer to working precision.
            return Ok(beta);
        }
    }
    if g.norm() <= inner_tol * (1.0 + f.abs()) {
        return Ok(beta);
    }
    Err(Error::SubproblemNotConverged {
        iterations: max_iter,
        residual: g.norm(),
        best: beta.iter().copied().collect(),
    })
}

struct Candidate {
    beta: DVector<f64>,
    score: f64,
    knot: usize,
    retried: bool,
}

/// One outer iteration on a fixed sample.
fn outer_step(
    problem: &SampledProblem<'_>,
    beta: &DVector<f64>,
    cfg: &SolverConfig,
    spectrum: &SortedSpectrum,
    iteration: usize,
    sample_size: usize,
) -> Result<(DVector<f64>, TraceEntry)> {
    let eval = problem.evaluate(beta);
    let active = active_indices(&eval.inner, cfg.eps);
    let candidates: Vec<Result<Candidate>> = active
        .par_iter()
        .map(|&k| {
            let model = problem.convex_model(beta, k);
            let (next, retried) = match solve_with_spectrum(
                &model,
                spectrum,
                cfg.rho,
                cfg.inner_tol,
                cfg.inner_max_iter,
            ) {
                Ok(b) => (b, false),
                Err(e) if e.is_solver_failure() => (
                    solve_with_spectrum(
                        &model,
                        spectrum,
                        cfg.rho,
                        cfg.inner_tol,
                        2 * cfg.inner_max_iter,
                    )?,
                    true,
                ),
                Err(e) => return Err(e),
            };
            let score = problem.value(&next) + (&next - beta).norm_squared() / (2.0 * cfg.rho);
            Ok(Candidate {
                beta: next,
                score,
                knot: k,
                retried,
            })
        })
        .collect();
    let candidates = candidates.into_iter().collect::<Result<Vec<_>>>()?;
    let retries = candidates.iter().filter(|c| c.retried).count();
    let best = candidates
        .into_iter()
        .reduce(|a, b| if b.score < a.score { b } else { a })
        .expect("active set is never empty");
    let step_norm = (&best.beta - beta).norm();
    let value_after = problem.value(&best.beta);
    let entry = TraceEntry {
        iteration,
        sample_size,
        value_before: eval.value,
        value_after,
        step_norm,
        active_size: active.len(),
        chosen_knot: problem.knots()[best.knot].value,
        ledger_gap: eval.value - best.score,
        retries,
    };
    Ok((best.beta, entry))
}

fn check_start(obj: &DcObjective, cfg: &SolverConfig, beta0: &DVector<f64>) -> Result<()> {
    cfg.validate()?;
    if beta0.len() != obj.len() {
        return Err(Error::InvalidInput(format!(
            "beta0 has length {}, expected {}",
            beta0.len(),
            obj.len()
        )));
    }
    Ok(())
}

fn finish(
    obj: &DcObjective,
    cfg: &SolverConfig,
    beta: DVector<f64>,
    trace: Vec<TraceEntry>,
    converged: bool,
) -> FitResult {
    let full = obj.full();
    let objective = full.value(&beta);
    let inner_scalar = full.inner_scalar(&beta);
    FitResult {
        beta: beta.iter().copied().collect(),
        inner_scalar,
        objective,
        trace,
        converged,
        reason: if converged {
            StopReason::StepTolerance
        } else {
            StopReason::MaxIterations
        },
        config: cfg.clone(),
    }
}

/// The sampled algorithm driven by an arbitrary [`Sampler`].
pub fn fit_with_sampler(
    obj: &DcObjective,
    cfg: &SolverConfig,
    beta0: &DVector<f64>,
    sampler: &mut dyn Sampler,
) -> Result<FitResult> {
    check_start(obj, cfg, beta0)?;
    let mut beta = beta0.clone();
    let mut state = SampleState::empty(obj.len());
    let mut trace = Vec::new();
    let mut small_steps = 0;
    let spectrum = SortedSpectrum::of(obj.kernel());
    for iteration in 0..cfg.max_outer {
        sampler.grow(&mut state);
        let problem = obj.sampled(&state);
        let (next, entry) = outer_step(&problem, &beta, cfg, &spectrum, iteration, state.len())?;
        // Early samples can miss whole regions of the data and produce spurious
        // zero steps, so the step test only counts once N_ν reaches n.
        let small =
            state.len() >= obj.len() && entry.step_norm <= cfg.tol_step * (1.0 + beta.norm());
        trace.push(entry);
        beta = next;
        small_steps = if small { small_steps + 1 } else { 0 };
        if small_steps == 2 {
            return Ok(finish(obj, cfg, beta, trace, true));
        }
    }
    Ok(finish(obj, cfg, beta, trace, false))
}

/// Sampled DCA: `Δ_ν` uniform draws are added to the sample every iteration.
pub fn fit_sampled(
    obj: &DcObjective,
    cfg: &SolverConfig,
    beta0: &DVector<f64>,
) -> Result<FitResult> {
    let mut sampler = UniformSampler::new(obj.len(), cfg.sample_increment(obj.len()), cfg.seed);
    fit_with_sampler(obj, cfg, beta0, &mut sampler)
}

/// Full-data DCA: every iteration uses all subjects once.
pub fn fit_deterministic(
    obj: &DcObjective,
    cfg: &SolverConfig,
    beta0: &DVector<f64>,
) -> Result<FitResult> {
    check_start(obj, cfg, beta0)?;
    let problem = obj.full();
    let spectrum = SortedSpectrum::of(obj.kernel());
    let mut beta = beta0.clone();
    let mut trace = Vec::new();
    let mut small_steps = 0;
    for iteration in 0..cfg.max_outer {
        let (next, entry) = outer_step(&problem, &beta, cfg, &spectrum, iteration, obj.len())?;
        let small = entry.step_norm <= cfg.tol_step * (1.0 + beta.norm());
        trace.push(entry);
        beta = next;
        small_steps = if small { small_steps + 1 } else { 0 };
        if small_steps == 2 {
            return Ok(finish(obj, cfg, beta, trace, true));
        }
    }
    Ok(finish(obj, cfg, beta, trace, false))
}

/// Smallest knot attaining the full-data inner minimum at `beta`.
pub fn extract_inner_scalar(obj: &DcObjective, beta: &DVector<f64>) -> f64 {
    obj.full().inner_scalar(beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::SurrogateLoss;
    use crate::objective::Criterion;
    use std::sync::Arc;

    fn identity_objective(n: usize, weights: Vec<f64>, lambda: f64) -> DcObjective {
        let k = Arc::new(KernelModel::precomputed(DMatrix::identity(n, n)).unwrap());
        let times = (1..=n).map(|t| t as f64).collect();
        let signs = (0..n)
            .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        DcObjective::new(
            Criterion::Cvar { gamma: 0.5 },
            k,
            times,
            signs,
            weights,
            lambda,
            SurrogateLoss::default(),
        )
        .unwrap()
    }

    #[test]
    fn zero_model_returns_reference() {
        let obj = identity_objective(4, vec![0.0; 4], 0.0);
        let pr = obj.full();
        let beta_ref = DVector::from_vec(vec![0.3, -1.0, 2.0, 0.0]);
        let model = pr.convex_model(&beta_ref, 0);
        let out = solve_prox_subproblem(&model, 0.7, 1e-10, 50).unwrap();
        assert_eq!(out, beta_ref);
    }

    #[test]
    fn ridge_only_closed_form() {
        let (lambda, rho) = (0.3, 0.8);
        let obj = identity_objective(5, vec![0.0; 5], lambda);
        let pr = obj.full();
        let beta_ref = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0, -0.25]);
        let model = pr.convex_model(&beta_ref, 2);
        let out = solve_prox_subproblem(&model, rho, 1e-12, 50).unwrap();
        let expected = &beta_ref / (1.0 + 2.0 * lambda * rho);
        assert!((out - expected).amax() < 1e-8);
    }

    #[test]
    fn zero_rho_is_rejected() {
        let cfg = SolverConfig {
            rho: 0.0,
            ..SolverConfig::default()
        };
        let obj = identity_objective(3, vec![1.0; 3], 0.1);
        assert!(fit_deterministic(&obj, &cfg, &DVector::zeros(3)).is_err());
        let cfg = SolverConfig {
            delta_nu: Some(0),
            ..SolverConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn default_increment() {
        let cfg = SolverConfig::default();
        assert_eq!(cfg.sample_increment(100), 32);
        assert_eq!(cfg.sample_increment(1000), 50);
        assert_eq!(cfg.sample_increment(1001), 51);
    }

    #[test]
    fn identity_sampler_fills_once() {
        let mut s = SampleState::empty(3);
        IdentitySampler.grow(&mut s);
        IdentitySampler.grow(&mut s);
        assert_eq!(s, SampleState::full(3));
    }
}
