//! Value functions of a treatment rule: empirical versions on simulated
//! potential outcomes, brute-force oracles, and inverse-probability-weighted
//! estimates on observational data.

use serde::{Deserialize, Serialize};

use crate::censor::CensorSurvival;
use crate::data::Dataset;
use crate::kernel::Policy;
use crate::simgen::{generate_potential_outcomes, ScenarioSpec};

fn sorted(t: &[f64]) -> Vec<f64> {
    let mut s = t.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

pub fn empirical_v_mean(t: &[f64]) -> f64 {
    assert!(!t.is_empty(), "empty sample");
    t.iter().sum::<f64>() / t.len() as f64
}

/// Lower-tail restricted mean `∫₀^γ Q(p) dp`, i.e. `E[T I{T <= Q_γ}]` with the
/// atom at the quantile split so exactly mass `γ` is counted.
pub fn empirical_v1(t: &[f64], gamma: f64) -> f64 {
    assert!(!t.is_empty(), "empty sample");
    let s = sorted(t);
    let n = s.len() as f64;
    let mut mass = 0.0;
    let mut total = 0.0;
    for &v in &s {
        let take = (gamma - mass).min(1.0 / n);
        if take <= 0.0 {
            break;
        }
        total += take * v;
        mass += 1.0 / n;
    }
    total
}

/// `mean(T · I{T <= Q̂})` with `Q̂` the smallest order statistic `T_(k)` with
/// `k/n > γ`; every atom at `Q̂` is counted in full.
pub fn empirical_v1_plugin(t: &[f64], gamma: f64) -> f64 {
    assert!(!t.is_empty(), "empty sample");
    let s = sorted(t);
    let n = s.len();
    let k = (1..=n).find(|&k| k as f64 / n as f64 > gamma).unwrap_or(n);
    let q = s[k - 1];
    s.iter().filter(|&&v| v <= q).sum::<f64>() / n as f64
}

/// `sup_α { αγ - mean[(α - T)₊] }`, searched over the order statistics.
pub fn cvar_oracle(t: &[f64], gamma: f64) -> f64 {
    weighted_cvar_oracle(t, &vec![1.0; t.len()], gamma).0
}

/// `sup_α (1/n) Σ w_i [αγ - (α - T_i)₊]` and the smallest maximizing `α`,
/// by direct enumeration over the sample values.
pub fn weighted_cvar_oracle(t: &[f64], w: &[f64], gamma: f64) -> (f64, f64) {
    assert_eq!(t.len(), w.len());
    let n = t.len() as f64;
    let mut best = (f64::NEG_INFINITY, f64::NAN);
    for &alpha in &sorted(t) {
        let v: f64 = t
            .iter()
            .zip(w)
            .map(|(&ti, &wi)| wi * (alpha * gamma - (alpha - ti).max(0.0)))
            .sum::<f64>()
            / n;
        if v > best.0 {
            best = (v, alpha);
        }
    }
    best
}

/// Buffered survival probability `1 - min_c mean[max(0, c(τ - T) + 1)]`
/// over `c ∈ {0} ∪ {1/(T_j - τ) : T_j > τ}`; `1` when `τ <= min T`.
pub fn bpoe_oracle(t: &[f64], tau: f64) -> f64 {
    assert!(!t.is_empty(), "empty sample");
    let min = t.iter().copied().fold(f64::INFINITY, f64::min);
    if tau <= min {
        return 1.0;
    }
    if tau > empirical_v_mean(t) {
        return 0.0;
    }
    let n = t.len() as f64;
    let inner = |c: f64| {
        t.iter()
            .map(|&v| (c * (tau - v) + 1.0).max(0.0))
            .sum::<f64>()
            / n
    };
    let best = t
        .iter()
        .filter(|&&v| v > tau)
        .map(|&v| inner(1.0 / (v - tau)))
        .fold(inner(0.0), f64::min);
    1.0 - best
}

/// Solves `mean of the lowest fraction p = τ` on the sorted sample and returns
/// `(1 - p, q̂)` where `q̂` is the quantile at `p`.
pub fn bpoe_scan(t: &[f64], tau: f64) -> (f64, f64) {
    let s = sorted(t);
    let n = s.len() as f64;
    if tau <= s[0] {
        return (1.0, s[0]);
    }
    let mut cum = 0.0;
    for (k, &v) in s.iter().enumerate() {
        let p0 = k as f64 / n;
        let next = cum + v / n;
        if next >= tau * (p0 + 1.0 / n) {
            // cum + (p - p0) v = τ p on this segment
            let p = (cum - p0 * v) / (tau - v);
            return (1.0 - p, v);
        }
        cum = next;
    }
    (0.0, s[s.len() - 1])
}

/// Fraction of `t` strictly above `q`.
pub fn exceedance(t: &[f64], q: f64) -> f64 {
    t.iter().filter(|&&v| v > q).count() as f64 / t.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub v_mean: f64,
    pub v1: f64,
    pub v2: f64,
    pub gamma: f64,
    pub tau: f64,
    pub n_test: usize,
}

/// `V`, `V¹` and `V²` of `rule` on `n_test` potential outcomes from `spec`.
pub fn evaluate_rule_simulation(
    spec: &ScenarioSpec,
    rule: &dyn Policy,
    gamma: f64,
    tau: f64,
    n_test: usize,
    seed: u64,
) -> EvalReport {
    let t = generate_potential_outcomes(spec, rule, n_test, seed);
    EvalReport {
        v_mean: empirical_v_mean(&t),
        v1: empirical_v1(&t, gamma),
        v2: bpoe_oracle(&t, tau),
        gamma,
        tau,
        n_test,
    }
}

/// The three weighted estimates on held-out data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IpwReport {
    /// `Ṽ`, weighted mean survival.
    pub v: f64,
    /// `Ṽ¹` at the supplied `α̂`.
    pub v1: f64,
    /// `M̃²` at the supplied `ĉ`; smaller is better.
    pub m2: f64,
}

/// IPW estimates for `rule` on `data`, with `Ŝ_C(Y-)` clamped at `floor`.
/// The CVaR term uses `I(α̂ >= Y)`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_rule_ipw(
    data: &Dataset,
    rule: &dyn Policy,
    s_hat: &CensorSurvival,
    gamma: f64,
    tau: f64,
    alpha_hat: f64,
    c_hat: f64,
    floor: f64,
) -> IpwReport {
    let n = data.len() as f64;
    let (mut v, mut v1, mut m2) = (0.0, 0.0, 0.0);
    for (i, s) in data.subjects().iter().enumerate() {
        if rule.assign(&s.x) != s.arm {
            continue;
        }
        let ip = 1.0 / data.propensity_of(i);
        let ipcw = if s.event {
            1.0 / s_hat.survival_left(s.time, &s.x, s.arm).max(floor)
        } else {
            0.0
        };
        let shortfall = if alpha_hat >= s.time {
            alpha_hat - s.time
        } else {
            0.0
        };
        v += ip * ipcw * s.time;
        v1 += ip * (alpha_hat * gamma - ipcw * shortfall);
        m2 += ip * ipcw * (c_hat * (tau - s.time) + 1.0).max(0.0);
    }
    IpwReport {
        v: v / n,
        v1: v1 / n,
        m2: m2 / n,
    }
}

/// Welford mean and variance accumulator.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RunningStats {
    count: usize,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Sample standard deviation (0 for fewer than two values).
    pub fn sd(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.m2 / (self.count - 1) as f64).sqrt()
        }
    }
}

impl FromIterator<f64> for RunningStats {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = RunningStats::default();
        iter.into_iter().for_each(|x| s.push(x));
        s
    }
}

/// Mean, standard deviation and count over replications.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub count: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let s: RunningStats = values.iter().copied().collect();
        Summary {
            mean: s.mean(),
            sd: s.sd(),
            count: s.count(),
        }
    }

    /// Standard error of the mean.
    pub fn se(&self) -> f64 {
        if self.count == 0 {
            f64::NAN
        } else {
            self.sd / (self.count as f64).sqrt()
        }
    }
}

/// Linearly interpolated sample quantile (`(n - 1) p` positioning).
pub fn quantile(values: &[f64], p: f64) -> f64 {
    let s = sorted(values);
    let h = (s.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    s[lo] + (h - lo as f64) * (s[hi] - s[lo])
}

/// Minimum, quartiles and maximum, the numbers behind a boxplot.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiveNumber {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl FiveNumber {
    pub fn of(values: &[f64]) -> Self {
        FiveNumber {
            min: quantile(values, 0.0),
            q1: quantile(values, 0.25),
            median: quantile(values, 0.5),
            q3: quantile(values, 0.75),
            max: quantile(values, 1.0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_examples() {
        assert_eq!(empirical_v_mean(&[1.0, 2.0, 3.0]), 2.0);
        assert_eq!(empirical_v_mean(&[4.25; 7]), 4.25);
        let t: Vec<f64> = (0..1000)
            .map(|k| (k as f64 * 0.37).sin() * 10.0 + 11.0)
            .collect();
        let streaming: RunningStats = t.iter().copied().collect();
        assert!((streaming.mean() - empirical_v_mean(&t)).abs() < 1e-12);
    }

    #[test]
    fn four_point_tail() {
        let t = [3.0, 1.0, 4.0, 2.0];
        assert_eq!(empirical_v1(&t, 0.5), 0.75);
        assert_eq!(cvar_oracle(&t, 0.5), 0.75);
        assert_eq!(empirical_v1_plugin(&t, 0.5), 1.5);
        assert_eq!(weighted_cvar_oracle(&t, &[1.0; 4], 0.5).1, 2.0);
    }

    #[test]
    fn full_mass_limit() {
        let t = [0.5, 3.0, 1.25, 9.0];
        assert!((empirical_v1(&t, 1.0 - 1e-12) - empirical_v_mean(&t)).abs() < 1e-9);
        assert_eq!(empirical_v1_plugin(&t, 0.999), empirical_v_mean(&t));
    }

    #[test]
    fn constant_sample() {
        let t = [2.5; 6];
        assert!((cvar_oracle(&t, 0.3) - 0.75).abs() < 1e-15);
        assert!((empirical_v1(&t, 0.3) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn bpoe_cases() {
        let t = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(bpoe_oracle(&t, 2.0), 0.25);
        assert_eq!(bpoe_oracle(&t, 0.5), 1.0);
        assert_eq!(bpoe_oracle(&t, 1.0), 1.0);
        assert_eq!(bpoe_oracle(&t, 2.6), 0.0);
        let (v2, q) = bpoe_scan(&t, 2.0);
        assert!((v2 - 0.25).abs() < 1e-15);
        assert_eq!(q, 3.0);
    }

    #[test]
    fn quantiles() {
        let v = [4.0, 1.0, 3.0, 2.0, 5.0];
        let f = FiveNumber::of(&v);
        assert_eq!(
            (f.min, f.q1, f.median, f.q3, f.max),
            (1.0, 2.0, 3.0, 4.0, 5.0)
        );
        assert_eq!(quantile(&[0.0, 10.0], 0.3), 3.0);
    }

    #[test]
    fn summary_sd() {
        let s = Summary::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.sd - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(Summary::of(&[7.0]).sd, 0.0);
    }
}
