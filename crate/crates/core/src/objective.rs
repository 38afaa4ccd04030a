//! Empirical CVaR, bPOE and mean objectives over a Gaussian-kernel decision
//! function, written as a minimum over finitely many knots of DC functions.
//!
//! With `u_i = A_i (Kβ)_i` and per-subject weight `W_i`, every criterion has
//! the form
//!
//! ```text
//! V(β) = min_k [ κ_k + (1/N) Σ_i m_i W_i L(u_i) g(i, k) ] + λ βᵀKβ
//! ```
//!
//! where `m_i` is the multiplicity of subject `i` in the current sample and
//! `N = Σ m_i`:
//!
//! | criterion | knot value       | `κ_k`    | `g(i, k)`                      |
//! |-----------|------------------|----------|--------------------------------|
//! | CVaR      | `α = Y_j`        | `-α γ`   | `(α - Y_i)₊`                   |
//! | bPOE      | `c = 1/(Y_j-τ)`  | `0`      | `max(0, c(τ - Y_i) + 1)`       |
//! | bPOE      | `c = 0`          | `0`      | `1`                            |
//! | mean      | (single knot)    | `0`      | `-Y_i`                         |
//!
//! Splitting `L = L₁ - L₂` and `g = g⁺ - g⁻` gives `V = φ₁ + λβᵀKβ - max_k φ₂,ₖ`
//! with
//!
//! ```text
//! φ₁    = (1/N) Σ m W [L₁ P_i + L₂ Q_i]
//! φ₂,ₖ  = -κ_k + (1/N) Σ m W [L₁ (P_i - g⁺) + L₂ (Q_i - g⁻) + L₂ g⁺ + L₁ g⁻]
//! ```
//!
//! for any `P_i >= g⁺(i, k)` and `Q_i >= g⁻(i, k)` over all knots. The
//! default [`Majorant::MaxGap`] takes the smallest such bounds. The
//! [`Majorant::SumOfGaps`] choice `P_i = Σ_k g⁺(i, k)` (counting sample
//! multiplicity) is the aggregate `Ȳ_i = Σ_k (Y_k - Y_i)₊` of the CVaR case.

use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernel::{KernelModel, SurrogateLoss};

/// Relative tolerance used to decide that two inner values tie.
pub const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Criterion {
    Cvar { gamma: f64 },
    Bpoe { tau: f64 },
    Mean,
}

impl Criterion {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Criterion::Cvar { gamma } if !(gamma > 0.0 && gamma < 1.0) => Err(Error::InvalidInput(
                format!("gamma must lie in (0, 1), got {gamma}"),
            )),
            Criterion::Bpoe { tau } if !(tau > 0.0) || !tau.is_finite() => Err(
                Error::InvalidInput(format!("tau must be positive, got {tau}")),
            ),
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Criterion::Cvar { .. } => "cvar",
            Criterion::Bpoe { .. } => "bpoe",
            Criterion::Mean => "mean",
        }
    }
}

/// How the convex part `φ₁` bounds the knot-dependent factors `g⁺`, `g⁻`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Majorant {
    /// `P_i = max_k g⁺(i, k)`. Keeps `φ₁` and `φ₂` of the same order as the
    /// objective, so values stay accurate near a subproblem minimizer.
    #[default]
    MaxGap,
    /// `P_i = Σ_k g⁺(i, k)` over the sample multiset. Both parts grow with the
    /// sample size and the largest gap and cancel in the difference, so
    /// rounding limits how far a subproblem can be solved.
    SumOfGaps,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum KnotKind {
    /// `g = (anchor - Y_i)₊ · scale`.
    Gap { anchor: f64, scale: f64 },
    /// `g = 1`.
    Unit,
    /// `g = -Y_i`.
    NegTime,
}

/// One candidate value of the inner scalar.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Knot {
    /// `α` for CVaR, `c` for bPOE, 0 for the mean criterion.
    pub value: f64,
    /// Multiplicity of the knot in the sample.
    pub count: u32,
    kappa: f64,
    kind: KnotKind,
}

impl Knot {
    fn g(&self, y: f64) -> f64 {
        match self.kind {
            KnotKind::Gap { anchor, scale } => (anchor - y).max(0.0) * scale,
            KnotKind::Unit => 1.0,
            KnotKind::NegTime => -y,
        }
    }
}

/// Multiset `I_ν` of subject indices drawn so far.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleState {
    counts: Vec<u32>,
    size: usize,
}

impl SampleState {
    pub fn empty(n: usize) -> Self {
        SampleState {
            counts: vec![0; n],
            size: 0,
        }
    }

    /// Every subject exactly once.
    pub fn full(n: usize) -> Self {
        SampleState {
            counts: vec![1; n],
            size: n,
        }
    }

    pub fn from_indices(n: usize, indices: &[usize]) -> Self {
        let mut s = Self::empty(n);
        s.extend(indices);
        s
    }

    pub fn extend(&mut self, indices: &[usize]) {
        for &i in indices {
            self.counts[i] += 1;
        }
        self.size += indices.len();
    }

    /// `N_ν`.
    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    /// `self ⊇ other` as multisets.
    pub fn contains(&self, other: &SampleState) -> bool {
        self.counts.len() == other.counts.len()
            && self.counts.iter().zip(&other.counts).all(|(a, b)| a >= b)
    }
}

/// Kernelized empirical objective over the full dataset.
#[derive(Clone, Debug)]
pub struct DcObjective {
    pub criterion: Criterion,
    pub loss: SurrogateLoss,
    pub lambda: f64,
    pub majorant: Majorant,
    kernel: Arc<KernelModel>,
    times: Vec<f64>,
    signs: Vec<f64>,
    weights: Vec<f64>,
}

impl DcObjective {
    pub fn new(
        criterion: Criterion,
        kernel: Arc<KernelModel>,
        times: Vec<f64>,
        signs: Vec<f64>,
        weights: Vec<f64>,
        lambda: f64,
        loss: SurrogateLoss,
    ) -> Result<Self> {
        criterion.validate()?;
        let n = kernel.len();
        if n == 0 {
            return Err(Error::InvalidInput(
                "objective needs at least one subject".into(),
            ));
        }
        if times.len() != n || signs.len() != n || weights.len() != n {
            return Err(Error::InvalidInput(format!(
                "times/signs/weights must all have length {n}"
            )));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidInput(format!(
                "lambda must be nonnegative, got {lambda}"
            )));
        }
        if signs.iter().any(|&a| a != 1.0 && a != -1.0) {
            return Err(Error::InvalidInput("arm signs must be +1 or -1".into()));
        }
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidInput(
                "weights must be finite and nonnegative".into(),
            ));
        }
        if times.iter().any(|&t| !(t >= 0.0) || !t.is_finite()) {
            return Err(Error::InvalidInput(
                "times must be finite and nonnegative".into(),
            ));
        }
        Ok(DcObjective {
            criterion,
            loss,
            lambda,
            majorant: Majorant::default(),
            kernel,
            times,
            signs,
            weights,
        })
    }

    pub fn from_dataset(
        criterion: Criterion,
        data: &Dataset,
        weights: Vec<f64>,
        kernel: Arc<KernelModel>,
        lambda: f64,
        loss: SurrogateLoss,
    ) -> Result<Self> {
        Self::new(
            criterion,
            kernel,
            data.times(),
            data.arm_signs(),
            weights,
            lambda,
            loss,
        )
    }

    pub fn with_majorant(mut self, majorant: Majorant) -> Self {
        self.majorant = majorant;
        self
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn kernel(&self) -> &Arc<KernelModel> {
        &self.kernel
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn signs(&self) -> &[f64] {
        &self.signs
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// The objective restricted to the sample multiset `state`.
    pub fn sampled(&self, state: &SampleState) -> SampledProblem<'_> {
        SampledProblem::new(self, state)
    }

    pub fn full(&self) -> SampledProblem<'_> {
        SampledProblem::new(self, &SampleState::full(self.len()))
    }

    /// `Kβ` and `u_i = A_i (Kβ)_i`.
    pub fn margins(&self, beta: &DVector<f64>) -> (DVector<f64>, Vec<f64>) {
        let kb = self.kernel.apply(beta);
        let u = kb.iter().zip(&self.signs).map(|(k, a)| a * k).collect();
        (kb, u)
    }
}

/// Objective value with the inner values at every knot.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    /// `min_k inner_k + λβᵀKβ`.
    pub value: f64,
    pub ridge: f64,
    /// `κ_k + (1/N) Σ m W L g(·, k)`, ridge excluded.
    pub inner: Vec<f64>,
    /// Knots attaining the minimum up to the tie tolerance.
    pub argmin: Vec<usize>,
}

/// The objective over one sample multiset: knots, majorants and sorted times.
#[derive(Clone, Debug)]
pub struct SampledProblem<'a> {
    obj: &'a DcObjective,
    /// `m_i / N`.
    mult: Vec<f64>,
    knots: Vec<Knot>,
    p: Vec<f64>,
    q: Vec<f64>,
    /// Sampled subjects by increasing time.
    order: Vec<usize>,
    /// Per knot, the number of sorted subjects with `Y < anchor`.
    below: Vec<usize>,
}

fn distinct_with_counts(mut values: Vec<(f64, u32)>) -> Vec<(f64, u32)> {
    values.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, u32)> = Vec::new();
    for (v, c) in values {
        match out.last_mut() {
            Some(last) if last.0 == v => last.1 += c,
            _ => out.push((v, c)),
        }
    }
    out
}

impl<'a> SampledProblem<'a> {
    fn new(obj: &'a DcObjective, state: &SampleState) -> Self {
        assert_eq!(state.counts.len(), obj.len(), "sample state size mismatch");
        assert!(!state.is_empty(), "sample state is empty");
        let total = state.len() as f64;
        let mult: Vec<f64> = state.counts.iter().map(|&c| c as f64 / total).collect();
        let sampled_times = distinct_with_counts(
            state
                .counts
                .iter()
                .enumerate()
                .filter(|(_, &c)| c > 0)
                .map(|(i, &c)| (obj.times[i], c))
                .collect(),
        );
        let mut knots: Vec<Knot> = match obj.criterion {
            Criterion::Cvar { gamma } => sampled_times
                .iter()
                .map(|&(y, count)| Knot {
                    value: y,
                    count,
                    kappa: -gamma * y,
                    kind: KnotKind::Gap {
                        anchor: y,
                        scale: 1.0,
                    },
                })
                .collect(),
            Criterion::Bpoe { tau } => {
                let mut k: Vec<Knot> = sampled_times
                    .iter()
                    .filter(|&&(y, _)| y > tau)
                    .map(|&(y, count)| {
                        let c = 1.0 / (y - tau);
                        Knot {
                            value: c,
                            count,
                            kappa: 0.0,
                            kind: KnotKind::Gap {
                                anchor: y,
                                scale: c,
                            },
                        }
                    })
                    .collect();
                k.push(Knot {
                    value: 0.0,
                    count: 1,
                    kappa: 0.0,
                    kind: KnotKind::Unit,
                });
                k
            }
            Criterion::Mean => vec![Knot {
                value: 0.0,
                count: 1,
                kappa: 0.0,
                kind: KnotKind::NegTime,
            }],
        };
        knots.sort_by(|a, b| a.value.total_cmp(&b.value));

        let mut order: Vec<usize> = (0..obj.len()).filter(|&i| state.counts[i] > 0).collect();
        order.sort_by(|&a, &b| obj.times[a].total_cmp(&obj.times[b]));
        let sorted_times: Vec<f64> = order.iter().map(|&i| obj.times[i]).collect();
        let below = knots
            .iter()
            .map(|k| match k.kind {
                KnotKind::Gap { anchor, .. } => sorted_times.partition_point(|&y| y < anchor),
                _ => 0,
            })
            .collect();

        let (p, q) = majorants(obj, &knots, &state.counts);
        SampledProblem {
            obj,
            mult,
            knots,
            p,
            q,
            order,
            below,
        }
    }

    pub fn objective(&self) -> &DcObjective {
        self.obj
    }

    pub fn knots(&self) -> &[Knot] {
        &self.knots
    }

    /// The majorants `(P_i, Q_i)`; zero for subjects outside the sample.
    pub fn aggregates(&self) -> (&[f64], &[f64]) {
        (&self.p, &self.q)
    }

    /// `g(i, k)` for every subject.
    pub fn knot_factors(&self, k: usize) -> Vec<f64> {
        self.obj.times.iter().map(|&y| self.knots[k].g(y)).collect()
    }

    fn ridge(&self, beta: &DVector<f64>, kb: &DVector<f64>) -> f64 {
        self.obj.lambda * beta.dot(kb)
    }

    /// Inner values for margins `u`, all knots at once via prefix sums over
    /// the time-sorted sample.
    pub fn inner_values(&self, u: &[f64]) -> Vec<f64> {
        let obj = self.obj;
        let coef = |i: usize| self.mult[i] * obj.weights[i] * obj.loss.l(u[i]);
        // prefix[r] = Σ_{s < r} c, prefix_y[r] = Σ_{s < r} c·Y over sorted order
        let mut prefix = Vec::with_capacity(self.order.len() + 1);
        let mut prefix_y = Vec::with_capacity(self.order.len() + 1);
        let (mut c_sum, mut cy_sum) = (0.0, 0.0);
        prefix.push(0.0);
        prefix_y.push(0.0);
        for &i in &self.order {
            let c = coef(i);
            c_sum += c;
            cy_sum += c * obj.times[i];
            prefix.push(c_sum);
            prefix_y.push(cy_sum);
        }
        self.knots
            .iter()
            .zip(&self.below)
            .map(|(k, &b)| {
                let s = match k.kind {
                    KnotKind::Gap { anchor, scale } => scale * (anchor * prefix[b] - prefix_y[b]),
                    KnotKind::Unit => c_sum,
                    KnotKind::NegTime => -cy_sum,
                };
                k.kappa + s
            })
            .collect()
    }

    /// Inner value at knot `k` by direct summation.
    pub fn inner_value_direct(&self, u: &[f64], k: usize) -> f64 {
        let obj = self.obj;
        let knot = &self.knots[k];
        knot.kappa
            + (0..obj.len())
                .map(|i| self.mult[i] * obj.weights[i] * obj.loss.l(u[i]) * knot.g(obj.times[i]))
                .sum::<f64>()
    }

    pub fn evaluate(&self, beta: &DVector<f64>) -> Evaluation {
        let (kb, u) = self.obj.margins(beta);
        let inner = self.inner_values(&u);
        let ridge = self.ridge(beta, &kb);
        let min = inner.iter().copied().fold(f64::INFINITY, f64::min);
        let argmin = active_indices(&inner, 0.0);
        Evaluation {
            value: min + ridge,
            ridge,
            inner,
            argmin,
        }
    }

    pub fn value(&self, beta: &DVector<f64>) -> f64 {
        self.evaluate(beta).value
    }

    /// `M̃_ε(β)`: knots whose inner value is within `eps` of the minimum.
    pub fn active_set(&self, beta: &DVector<f64>, eps: f64) -> Vec<usize> {
        let (_, u) = self.obj.margins(beta);
        active_indices(&self.inner_values(&u), eps)
    }

    pub fn phi1(&self, u: &[f64]) -> f64 {
        let obj = self.obj;
        (0..obj.len())
            .filter(|&i| self.mult[i] > 0.0)
            .map(|i| {
                let v = obj.loss.eval(u[i]);
                self.mult[i] * obj.weights[i] * (v.l1 * self.p[i] + v.l2 * self.q[i])
            })
            .sum()
    }

    pub fn phi2(&self, u: &[f64], k: usize) -> f64 {
        let obj = self.obj;
        let knot = &self.knots[k];
        -knot.kappa
            + (0..obj.len())
                .filter(|&i| self.mult[i] > 0.0)
                .map(|i| {
                    let v = obj.loss.eval(u[i]);
                    let g = knot.g(obj.times[i]);
                    let (gp, gm) = (g.max(0.0), (-g).max(0.0));
                    self.mult[i]
                        * obj.weights[i]
                        * (v.l1 * (self.p[i] - gp)
                            + v.l2 * (self.q[i] - gm)
                            + v.l2 * gp
                            + v.l1 * gm)
                })
                .sum::<f64>()
    }

    /// `∇φ₂,ₖ(β) = K (A ∘ a)`.
    pub fn phi2_gradient(&self, u: &[f64], k: usize) -> DVector<f64> {
        let obj = self.obj;
        let knot = &self.knots[k];
        let a = DVector::from_iterator(
            obj.len(),
            (0..obj.len()).map(|i| {
                if self.mult[i] == 0.0 {
                    return 0.0;
                }
                let g = knot.g(obj.times[i]);
                let (gp, gm) = (g.max(0.0), (-g).max(0.0));
                let (d1, d2) = (obj.loss.dl1(u[i]), obj.loss.dl2(u[i]));
                obj.signs[i]
                    * self.mult[i]
                    * obj.weights[i]
                    * (d1 * (self.p[i] - gp + gm) + d2 * (self.q[i] - gm + gp))
            }),
        );
        obj.kernel.apply(&a)
    }

    /// `φ₁(β) + λβᵀKβ - max_k φ₂,ₖ(β)`.
    pub fn dc_value(&self, beta: &DVector<f64>) -> f64 {
        let (kb, u) = self.obj.margins(beta);
        let max_phi2 = (0..self.knots.len())
            .map(|k| self.phi2(&u, k))
            .fold(f64::NEG_INFINITY, f64::max);
        self.phi1(&u) + self.ridge(beta, &kb) - max_phi2
    }

    /// Convex model of knot `k` at `beta_ref`: `φ₂,ₖ` replaced by its tangent.
    pub fn convex_model(&self, beta_ref: &DVector<f64>, k: usize) -> ConvexModel<'_> {
        let (_, u) = self.obj.margins(beta_ref);
        ConvexModel {
            problem: self,
            knot: k,
            beta_ref: beta_ref.clone(),
            phi2_ref: self.phi2(&u, k),
            phi2_grad: self.phi2_gradient(&u, k),
        }
    }

    /// Smallest knot value attaining the inner minimum at `beta`.
    pub fn inner_scalar(&self, beta: &DVector<f64>) -> f64 {
        let e = self.evaluate(beta);
        self.knots[e.argmin[0]].value
    }
}

/// `(P_i, Q_i)` for every subject with positive multiplicity.
fn majorants(obj: &DcObjective, knots: &[Knot], counts: &[u32]) -> (Vec<f64>, Vec<f64>) {
    let n = obj.len();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    let mut gaps: Vec<(f64, f64, f64)> = knots
        .iter()
        .filter_map(|k| match k.kind {
            KnotKind::Gap { anchor, scale } => Some((anchor, scale, k.count as f64)),
            _ => None,
        })
        .collect();
    gaps.sort_by(|a, b| a.0.total_cmp(&b.0));
    let unit: f64 = knots
        .iter()
        .filter(|k| k.kind == KnotKind::Unit)
        .map(|k| k.count as f64)
        .sum();
    let neg: f64 = knots
        .iter()
        .filter(|k| k.kind == KnotKind::NegTime)
        .map(|k| k.count as f64)
        .sum();

    match obj.majorant {
        Majorant::SumOfGaps => {
            // suffix sums of count·scale·anchor and count·scale over anchors
            let m = gaps.len();
            let mut suf_a = vec![0.0; m + 1];
            let mut suf_s = vec![0.0; m + 1];
            for r in (0..m).rev() {
                let (a, s, c) = gaps[r];
                suf_a[r] = suf_a[r + 1] + c * s * a;
                suf_s[r] = suf_s[r + 1] + c * s;
            }
            for i in (0..n).filter(|&i| counts[i] > 0) {
                let y = obj.times[i];
                let r = gaps.partition_point(|g| g.0 <= y);
                p[i] = (suf_a[r] - y * suf_s[r]).max(0.0) + unit;
                q[i] = neg * y;
            }
        }
        Majorant::MaxGap => {
            // For fixed Y_i, (a - Y_i)₊ · scale(a) is monotone in the anchor a
            // (scale ≡ 1, or scale = 1/(a - τ) with every a > τ), so the max over
            // gap knots sits at the smallest or the largest anchor.
            let ends = [gaps.first(), gaps.last()];
            for i in (0..n).filter(|&i| counts[i] > 0) {
                let y = obj.times[i];
                let gap_max = ends
                    .iter()
                    .flatten()
                    .map(|&&(a, s, _)| (a - y).max(0.0) * s)
                    .fold(0.0, f64::max);
                p[i] = if unit > 0.0 {
                    gap_max.max(1.0)
                } else {
                    gap_max
                };
                q[i] = if neg > 0.0 { y } else { 0.0 };
            }
        }
    }
    (p, q)
}

/// Indices within `eps` (plus the relative tie tolerance) of the minimum.
pub fn active_indices(inner: &[f64], eps: f64) -> Vec<usize> {
    let min = inner.iter().copied().fold(f64::INFINITY, f64::min);
    let cutoff = min + eps + TIE_TOLERANCE * min.abs().max(1.0);
    inner
        .iter()
        .enumerate()
        .filter(|(_, &v)| v <= cutoff)
        .map(|(k, _)| k)
        .collect()
}

/// `φ₁(β) - [φ₂,ₖ(β_ref) + ⟨∇φ₂,ₖ(β_ref), β - β_ref⟩] + λβᵀKβ`.
#[derive(Clone, Debug)]
pub struct ConvexModel<'p> {
    problem: &'p SampledProblem<'p>,
    knot: usize,
    beta_ref: DVector<f64>,
    phi2_ref: f64,
    phi2_grad: DVector<f64>,
}

impl<'p> ConvexModel<'p> {
    pub fn knot(&self) -> usize {
        self.knot
    }

    pub fn beta_ref(&self) -> &DVector<f64> {
        &self.beta_ref
    }

    pub fn problem(&self) -> &SampledProblem<'p> {
        self.problem
    }

    pub fn value(&self, beta: &DVector<f64>) -> f64 {
        self.value_and_gradient(beta).0
    }

    pub fn value_and_gradient(&self, beta: &DVector<f64>) -> (f64, DVector<f64>) {
        let pr = self.problem;
        let obj = pr.obj;
        let (kb, u) = obj.margins(beta);
        // ∇(φ₁ + λβᵀKβ) = K (A ∘ a + 2λβ)
        let mut phi1 = 0.0;
        let mut a = beta * (2.0 * obj.lambda);
        for i in 0..obj.len() {
            if pr.mult[i] == 0.0 {
                continue;
            }
            let v = obj.loss.eval(u[i]);
            let c = pr.mult[i] * obj.weights[i];
            phi1 += c * (v.l1 * pr.p[i] + v.l2 * pr.q[i]);
            a[i] += obj.signs[i] * c * (v.dl1 * pr.p[i] + v.dl2 * pr.q[i]);
        }
        let diff = beta - &self.beta_ref;
        let value = phi1 + obj.lambda * beta.dot(&kb) - (self.phi2_ref + self.phi2_grad.dot(&diff));
        let grad = obj.kernel.apply(&a) - &self.phi2_grad;
        (value, grad)
    }

    /// Curvature `D_i` of the model along `u_i`, so the Hessian is
    /// `K diag(D) K + 2λK` wherever `L₁`, `L₂` are twice differentiable.
    pub fn curvature(&self, beta: &DVector<f64>) -> Vec<f64> {
        let pr = self.problem;
        let obj = pr.obj;
        let (_, u) = obj.margins(beta);
        (0..obj.len())
            .map(|i| {
                if pr.mult[i] == 0.0 {
                    return 0.0;
                }
                pr.mult[i]
                    * obj.weights[i]
                    * (obj.loss.d2l1(u[i]) * pr.p[i] + obj.loss.d2l2(u[i]) * pr.q[i])
            })
            .collect()
    }
}

/// `ψ(β, α; Z_i) = αγ - L(A_i K_iᵀβ) W_i (α - Y_i)₊`.
pub fn psi(obj: &DcObjective, beta: &DVector<f64>, alpha: f64, i: usize) -> f64 {
    let Criterion::Cvar { gamma } = obj.criterion else {
        panic!("psi is defined for the CVaR criterion only");
    };
    let row = obj.kernel.gram().row(i);
    let u = obj.signs[i] * row.dot(&beta.transpose());
    alpha * gamma - obj.loss.l(u) * obj.weights[i] * (alpha - obj.times[i]).max(0.0)
}

/// `V(β)` over the full data with its argmin knot set.
pub fn full_objective(obj: &DcObjective, beta: &DVector<f64>) -> (f64, Vec<usize>) {
    let e = obj.full().evaluate(beta);
    (e.value, e.argmin)
}

pub fn sampled_objective(obj: &DcObjective, state: &SampleState, beta: &DVector<f64>) -> f64 {
    obj.sampled(state).value(beta)
}

pub fn epsilon_active_set(
    obj: &DcObjective,
    state: &SampleState,
    beta: &DVector<f64>,
    eps: f64,
) -> Vec<usize> {
    obj.sampled(state).active_set(beta, eps)
}

/// `-(1/n) Σ L(u_i) W_i Y_i + λβᵀKβ`, summed directly.
pub fn mean_objective(obj: &DcObjective, beta: &DVector<f64>) -> f64 {
    let (kb, u) = obj.margins(beta);
    let n = obj.len() as f64;
    let s: f64 = (0..obj.len())
        .map(|i| obj.loss.l(u[i]) * obj.weights[i] * obj.times[i])
        .sum();
    -s / n + obj.lambda * beta.dot(&kb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn toy(criterion: Criterion, times: &[f64], weights: &[f64], lambda: f64) -> DcObjective {
        let n = times.len();
        let x: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64 * 0.37]).collect();
        let kernel = Arc::new(KernelModel::new(&x, Some(0.5), None).unwrap());
        let signs = (0..n)
            .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        DcObjective::new(
            criterion,
            kernel,
            times.to_vec(),
            signs,
            weights.to_vec(),
            lambda,
            SurrogateLoss::default(),
        )
        .unwrap()
    }

    #[test]
    fn psi_reference_cases() {
        let obj = toy(
            Criterion::Cvar { gamma: 0.5 },
            &[1.0, 2.0, 3.0],
            &[0.0, 2.0, 2.0],
            0.1,
        );
        let zero = DVector::zeros(3);
        assert_eq!(psi(&obj, &zero, 4.0, 0), 2.0);
        assert_eq!(psi(&obj, &zero, 1.5, 1), 0.75);
        // α = Y + 1, W = 2, L(0) = 1/2
        assert!((psi(&obj, &zero, 3.0, 1) - (0.5 * 3.0 - 0.5 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn zero_beta_has_no_ridge() {
        let obj = toy(
            Criterion::Cvar { gamma: 0.3 },
            &[1.0, 2.0, 4.0],
            &[1.0, 2.0, 0.5],
            7.0,
        );
        let zero = DVector::zeros(3);
        let (v, _) = full_objective(&obj, &zero);
        let brute = [1.0, 2.0, 4.0]
            .iter()
            .map(|&a| -(0..3).map(|i| psi(&obj, &zero, a, i)).sum::<f64>() / 3.0)
            .fold(f64::INFINITY, f64::min);
        assert!((v - brute).abs() < 1e-14);
    }

    #[test]
    fn singleton_sample() {
        let obj = toy(
            Criterion::Cvar { gamma: 0.4 },
            &[1.0, 2.5, 4.0],
            &[1.0, 2.0, 3.0],
            0.2,
        );
        let beta = DVector::from_vec(vec![0.3, -0.2, 0.5]);
        let kb = obj.kernel().apply(&beta);
        let state = SampleState::from_indices(3, &[1]);
        let v = sampled_objective(&obj, &state, &beta);
        assert!((v - (-2.5 * 0.4 + 0.2 * beta.dot(&kb))).abs() < 1e-14);
        let twice = SampleState::from_indices(3, &[1, 1]);
        assert_eq!(sampled_objective(&obj, &twice, &beta), v);
    }

    #[test]
    fn active_set_examples() {
        let inner = [1.0, 1.05, 2.0];
        assert_eq!(active_indices(&inner, 0.1), vec![0, 1]);
        assert_eq!(active_indices(&inner, 0.0), vec![0]);
        assert_eq!(active_indices(&inner, f64::INFINITY), vec![0, 1, 2]);
    }

    #[test]
    fn bpoe_zero_knot_is_mean_loss() {
        let obj = toy(
            Criterion::Bpoe { tau: 1.5 },
            &[1.0, 2.0, 3.0, 0.5],
            &[1.0, 2.0, 0.0, 1.0],
            0.3,
        );
        let pr = obj.full();
        let c0 = pr.knots().iter().position(|k| k.value == 0.0).unwrap();
        let beta = DVector::from_vec(vec![0.1, 0.4, -0.3, 0.2]);
        let (_, u) = obj.margins(&beta);
        let direct: f64 = (0..4)
            .map(|i| obj.loss.l(u[i]) * obj.weights()[i])
            .sum::<f64>()
            / 4.0;
        assert!((pr.inner_values(&u)[c0] - direct).abs() < 1e-14);
        // only Y = 2, 3 exceed τ
        assert_eq!(pr.knots().len(), 3);
    }

    #[test]
    fn mean_objective_cases() {
        let times = [1.0, 2.0, 5.0];
        let obj = toy(Criterion::Mean, &times, &[2.0, 2.0, 1.0], 0.5);
        let zero = DVector::zeros(3);
        assert!(
            (mean_objective(&obj, &zero) + (2.0 * 1.0 + 2.0 * 2.0 + 5.0) * 0.5 / 3.0).abs() < 1e-14
        );
        let beta = DVector::from_vec(vec![1.0, -0.5, 2.0]);
        assert!((full_objective(&obj, &beta).0 - mean_objective(&obj, &beta)).abs() < 1e-13);

        let silent = toy(Criterion::Mean, &times, &[0.0; 3], 0.5);
        let kb = silent.kernel().apply(&beta);
        assert!((mean_objective(&silent, &beta) - 0.5 * beta.dot(&kb)).abs() < 1e-14);
    }

    #[test]
    fn aggregate_identity_for_cvar() {
        let times = [0.5, 3.0, 1.0, 2.0, 3.0];
        let obj = toy(Criterion::Cvar { gamma: 0.5 }, &times, &[1.0; 5], 0.1)
            .with_majorant(Majorant::SumOfGaps);
        let pr = obj.full();
        let (p, _) = pr.aggregates();
        for i in 0..5 {
            let ybar: f64 = times.iter().map(|&yk| (yk - times[i]).max(0.0)).sum();
            assert!((p[i] - ybar).abs() < 1e-14);
            for j in 0..5 {
                let yhat: f64 = (0..5)
                    .filter(|&k| k != j)
                    .map(|k| (times[k] - times[i]).max(0.0))
                    .sum();
                assert!((p[i] - (yhat + (times[j] - times[i]).max(0.0))).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn max_gap_aggregate_for_cvar() {
        let times = [0.5, 3.0, 1.0, 2.0, 3.0];
        let obj = toy(Criterion::Cvar { gamma: 0.5 }, &times, &[1.0; 5], 0.1)
            .with_majorant(Majorant::MaxGap);
        let pr = obj.full();
        let (p, q) = pr.aggregates();
        for i in 0..5 {
            let gap = times
                .iter()
                .map(|&yk| (yk - times[i]).max(0.0))
                .fold(0.0, f64::max);
            assert_eq!(p[i], gap);
            assert_eq!(q[i], 0.0);
        }
    }

    #[test]
    fn precomputed_kernel_is_accepted() {
        let k = Arc::new(KernelModel::precomputed(DMatrix::identity(2, 2)).unwrap());
        let obj = DcObjective::new(
            Criterion::Mean,
            k,
            vec![1.0, 2.0],
            vec![1.0, -1.0],
            vec![1.0, 1.0],
            0.0,
            SurrogateLoss::default(),
        )
        .unwrap();
        assert_eq!(obj.len(), 2);
        assert!(DcObjective::new(
            Criterion::Cvar { gamma: 1.0 },
            obj.kernel().clone(),
            vec![1.0, 2.0],
            vec![1.0, -1.0],
            vec![1.0, 1.0],
            0.0,
            SurrogateLoss::default(),
        )
        .is_err());
    }
}
