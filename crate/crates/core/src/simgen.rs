//! Seeded generators for the three accelerated-failure-time scenarios, the
//! two-group illustrative example and potential-outcome test sets.
//!
//! Every draw comes from a ChaCha8 stream keyed by `(seed, stream id)`, so a
//! generator is a pure function of its spec and replications can be spread
//! over workers by giving each one a distinct stream.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, LogNormal, StandardNormal, Weibull};
use serde::{Deserialize, Serialize};

use crate::data::{Arm, Dataset, Propensity, Subject};
use crate::error::{Error, Result};
use crate::kernel::Policy;

const TRAIN_STREAM: u64 = 1;
const TEST_STREAM: u64 = 2;

/// Horizon for the illustrative example, which has no restriction time.
pub const ILLUSTRATIVE_HORIZON: f64 = 1e6;

/// ChaCha8 generator on stream `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A child seed for task `stream` derived from a master seed.
pub fn child_seed(master: u64, stream: u64) -> u64 {
    stream_rng(master, stream).next_u64()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioId {
    S1,
    S2,
    S3,
    Illustrative,
}

impl FromStr for ScenarioId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s1" | "1" => Ok(ScenarioId::S1),
            "s2" | "2" => Ok(ScenarioId::S2),
            "s3" | "3" => Ok(ScenarioId::S3),
            "illustrative" | "illus" => Ok(ScenarioId::Illustrative),
            _ => Err(Error::UnknownScenario(s.to_string())),
        }
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScenarioId::S1 => "S1",
            ScenarioId::S2 => "S2",
            ScenarioId::S3 => "S3",
            ScenarioId::Illustrative => "ILLUSTRATIVE",
        })
    }
}

/// Additive error on the log-time scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ErrorDist {
    Normal {
        mean: f64,
        sd: f64,
    },
    /// Survival `exp(-(t / scale)^shape)`.
    Weibull {
        scale: f64,
        shape: f64,
    },
    /// `exp(N(mu, sigma²))`.
    LogNormal {
        mu: f64,
        sigma: f64,
    },
}

impl ErrorDist {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            ErrorDist::Normal { mean, sd } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + sd * z
            }
            ErrorDist::Weibull { scale, shape } => Weibull::new(scale, shape)
                .expect("valid weibull")
                .sample(rng),
            ErrorDist::LogNormal { mu, sigma } => LogNormal::new(mu, sigma)
                .expect("valid lognormal")
                .sample(rng),
        }
    }
}

/// `b0 + b·x + (a0 + a·x)·A` over three covariates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearPredictor {
    pub intercept: f64,
    pub main: [f64; 3],
    pub arm_intercept: f64,
    pub arm: [f64; 3],
}

impl LinearPredictor {
    pub fn eval(&self, x: &[f64], a: Arm) -> f64 {
        let main: f64 = self.main.iter().zip(x).map(|(b, v)| b * v).sum();
        self.intercept + main + a.sign() * self.contrast(x)
    }

    /// The coefficient of `A`, `a0 + a·x`.
    pub fn contrast(&self, x: &[f64]) -> f64 {
        self.arm_intercept + self.arm.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }

    /// Coefficients on the design `(x1, x2, x3, A, A·x1, A·x2, A·x3)`; the
    /// intercept is dropped.
    pub fn design_coefficients(&self) -> Vec<f64> {
        let mut c = self.main.to_vec();
        c.push(self.arm_intercept);
        c.extend_from_slice(&self.arm);
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub id: ScenarioId,
    pub n: usize,
    pub horizon: f64,
    pub seed: u64,
    pub error: ErrorDist,
    /// Log failure time model (unused by the illustrative example).
    pub aft: LinearPredictor,
    /// Censoring hazard `½ t^{-½} exp(lp)` (unused by the illustrative example).
    pub cox: LinearPredictor,
}

impl ScenarioSpec {
    pub fn new(id: ScenarioId, n: usize, seed: u64) -> Self {
        let zero = LinearPredictor {
            intercept: 0.0,
            main: [0.0; 3],
            arm_intercept: 0.0,
            arm: [0.0; 3],
        };
        let (horizon, error, aft, cox) = match id {
            ScenarioId::S1 => (
                10.0,
                ErrorDist::Normal { mean: 0.0, sd: 1.0 },
                LinearPredictor {
                    intercept: 0.0,
                    main: [-1.0, 0.5, 0.5],
                    arm_intercept: 0.0,
                    arm: [1.0, 0.5, -0.5],
                },
                LinearPredictor {
                    intercept: -1.0,
                    main: [-0.8, -0.8, 0.4],
                    arm_intercept: 0.6,
                    arm: [-0.5, 0.3, -0.5],
                },
            ),
            ScenarioId::S2 => (
                20.0,
                ErrorDist::Weibull {
                    scale: 0.3,
                    shape: 0.5,
                },
                LinearPredictor {
                    intercept: -1.2,
                    main: [2.4, 0.0, -1.8],
                    arm_intercept: 1.2,
                    arm: [-1.6, -1.0, 0.0],
                },
                LinearPredictor {
                    intercept: -1.5,
                    main: [1.0, 0.0, 0.0],
                    arm_intercept: -0.5,
                    arm: [1.8, -0.6, 0.0],
                },
            ),
            ScenarioId::S3 => (
                20.0,
                ErrorDist::LogNormal {
                    mu: 0.0,
                    sigma: 2.0,
                },
                LinearPredictor {
                    intercept: 0.3,
                    main: [0.6, -0.1, 0.3],
                    arm_intercept: 0.8,
                    arm: [-1.0, -2.0, 0.5],
                },
                LinearPredictor {
                    intercept: -0.5,
                    main: [-1.5, 0.5, 0.0],
                    arm_intercept: 1.2,
                    arm: [-0.6, -1.4, -0.2],
                },
            ),
            ScenarioId::Illustrative => (
                ILLUSTRATIVE_HORIZON,
                ErrorDist::Normal { mean: 1.0, sd: 1.0 },
                zero,
                zero,
            ),
        };
        ScenarioSpec {
            id,
            n,
            horizon,
            seed,
            error,
            aft,
            cox,
        }
    }

    fn draw_covariates<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self.id {
            ScenarioId::Illustrative => vec![if rng.random_bool(0.5) { 1.0 } else { 0.0 }],
            _ => (0..3).map(|_| rng.random::<f64>()).collect(),
        }
    }

    /// Failure time `min(T̃, h)` for covariates `x` under arm `a`, consuming
    /// the same draws whatever the arm.
    fn draw_failure<R: Rng + ?Sized>(&self, rng: &mut R, x: &[f64], a: Arm) -> f64 {
        let log_t = match self.id {
            ScenarioId::Illustrative => {
                let z: f64 = StandardNormal.sample(rng);
                let (mean, sd) = illustrative_cell(x[0] == 1.0, a);
                mean + sd * z
            }
            _ => self.aft.eval(x, a) + self.error.sample(rng),
        };
        log_t.exp().min(self.horizon)
    }

    /// `C = (E · exp(-lp))²` with `E ~ Exp(1)`, inverting `Λ(t) = √t · e^lp`.
    fn draw_censoring<R: Rng + ?Sized>(&self, rng: &mut R, x: &[f64], a: Arm) -> f64 {
        let e: f64 = Exp1.sample(rng);
        (e * (-self.cox.eval(x, a)).exp()).powi(2)
    }

    /// Decision rule maximizing the mean failure time: the sign of the
    /// arm contrast (male → +1, female → -1 in the illustrative example).
    pub fn mean_optimal_rule(&self) -> impl Policy + '_ {
        move |x: &[f64]| match self.id {
            ScenarioId::Illustrative => {
                if x[0] == 1.0 {
                    Arm::Treated
                } else {
                    Arm::Control
                }
            }
            _ => Arm::from_score(self.aft.contrast(x)),
        }
    }
}

/// `(mean, sd)` of log T for one group × arm cell of the illustrative example.
pub fn illustrative_cell(male: bool, arm: Arm) -> (f64, f64) {
    match (male, arm) {
        (true, Arm::Treated) | (false, Arm::Control) => (1.0, 1.0),
        (true, Arm::Control) | (false, Arm::Treated) => (0.95, 0.5),
    }
}

/// Training data for `spec`; bit-identical for identical specs.
pub fn generate(spec: &ScenarioSpec) -> Result<Dataset> {
    if spec.n == 0 {
        return Err(Error::InvalidInput("sample size must be at least 1".into()));
    }
    if spec.id == ScenarioId::Illustrative {
        return generate_illustrative(spec.n, spec.seed);
    }
    let mut rng = stream_rng(spec.seed, TRAIN_STREAM);
    let subjects = (0..spec.n)
        .map(|_| {
            let x = spec.draw_covariates(&mut rng);
            let a = if rng.random_bool(0.5) {
                Arm::Treated
            } else {
                Arm::Control
            };
            let t = spec.draw_failure(&mut rng, &x, a);
            let c = spec.draw_censoring(&mut rng, &x, a);
            let event = t <= c;
            Subject::new(x, a, t.min(c), event)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(subjects, Propensity::randomized(), spec.horizon)
}

/// Two-group example: covariate `1` for male, `0` for female, no censoring.
pub fn generate_illustrative(n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidInput("sample size must be at least 1".into()));
    }
    let spec = ScenarioSpec::new(ScenarioId::Illustrative, n, seed);
    let mut rng = stream_rng(seed, TRAIN_STREAM);
    let subjects = (0..n)
        .map(|_| {
            let x = spec.draw_covariates(&mut rng);
            let a = if rng.random_bool(0.5) {
                Arm::Treated
            } else {
                Arm::Control
            };
            let t = spec.draw_failure(&mut rng, &x, a);
            Subject::new(x, a, t, true)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(subjects, Propensity::randomized(), ILLUSTRATIVE_HORIZON)
}

/// Uncensored failure times of `n_test` fresh covariate draws, each treated
/// according to `rule`. Covariate and noise draws do not depend on the rule, so
/// two rules evaluated with one seed share common random numbers.
pub fn generate_potential_outcomes(
    spec: &ScenarioSpec,
    rule: &dyn Policy,
    n_test: usize,
    seed: u64,
) -> Vec<f64> {
    let mut rng = stream_rng(seed, TEST_STREAM);
    (0..n_test)
        .map(|_| {
            let x = spec.draw_covariates(&mut rng);
            let a = rule.assign(&x);
            spec.draw_failure(&mut rng, &x, a)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean(v: &[f64]) -> f64 {
        v.iter().sum::<f64>() / v.len() as f64
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = ScenarioSpec::new(ScenarioId::S2, 300, 17);
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = ScenarioSpec::new(ScenarioId::S2, 300, 18);
        assert_ne!(generate(&spec).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn horizon_and_dimension() {
        for id in [ScenarioId::S1, ScenarioId::S2, ScenarioId::S3] {
            let data = generate(&ScenarioSpec::new(id, 2000, 3)).unwrap();
            assert_eq!(data.dim(), 3);
            assert!(data.times().iter().all(|&t| t <= data.horizon()));
        }
        assert_eq!(ScenarioSpec::new(ScenarioId::S1, 1, 0).horizon, 10.0);
        assert_eq!(ScenarioSpec::new(ScenarioId::S3, 1, 0).horizon, 20.0);
    }

    #[test]
    fn zero_size_is_rejected() {
        assert!(generate(&ScenarioSpec::new(ScenarioId::S1, 0, 1)).is_err());
        assert!("S4".parse::<ScenarioId>().is_err());
    }

    #[test]
    fn marginals_at_large_n() {
        let n = 100_000;
        let data = generate(&ScenarioSpec::new(ScenarioId::S1, n, 5)).unwrap();
        let se = (0.25f64 / n as f64).sqrt();
        let treated = data
            .subjects()
            .iter()
            .filter(|s| s.arm == Arm::Treated)
            .count() as f64
            / n as f64;
        assert!((treated - 0.5).abs() < 3.0 * se);
        let x_se = (1.0f64 / 12.0 / n as f64).sqrt();
        for k in 0..3 {
            let m = mean(&data.subjects().iter().map(|s| s.x[k]).collect::<Vec<_>>());
            assert!((m - 0.5).abs() < 3.0 * x_se, "x{} mean {m}", k + 1);
        }
    }

    #[test]
    fn censoring_survival_matches_inverse_transform() {
        // P(C > t) = exp(-√t · e^lp) for a fixed covariate vector and arm.
        let spec = ScenarioSpec::new(ScenarioId::S1, 1, 0);
        let x = [0.3, 0.6, 0.9];
        let lp = spec.cox.eval(&x, Arm::Treated);
        let mut rng = stream_rng(99, 7);
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| spec.draw_censoring(&mut rng, &x, Arm::Treated))
            .collect();
        for t in [0.25f64, 1.0, 4.0] {
            let analytic = (-t.sqrt() * lp.exp()).exp();
            let empirical = draws.iter().filter(|&&c| c > t).count() as f64 / n as f64;
            let se = (analytic * (1.0 - analytic) / n as f64).sqrt();
            assert!(
                (empirical - analytic).abs() < 3.0 * se,
                "t={t}: {empirical} vs {analytic}"
            );
        }
    }

    #[test]
    fn illustrative_cells() {
        let n = 200_000;
        let data = generate_illustrative(n, 11).unwrap();
        assert_eq!(data.censoring_fraction(), 0.0);
        let log_t = |male: bool, arm: Arm| -> Vec<f64> {
            data.subjects()
                .iter()
                .filter(|s| (s.x[0] == 1.0) == male && s.arm == arm)
                .map(|s| s.time.ln())
                .collect()
        };
        let male_treated = log_t(true, Arm::Treated);
        let m = mean(&male_treated);
        let se = 1.0 / (male_treated.len() as f64).sqrt();
        assert!((m - 1.0).abs() < 3.0 * se, "male treated mean {m}");

        let female_treated = log_t(false, Arm::Treated);
        let fm = mean(&female_treated);
        let sd = (female_treated.iter().map(|v| (v - fm).powi(2)).sum::<f64>()
            / (female_treated.len() - 1) as f64)
            .sqrt();
        assert!((sd - 0.5).abs() < 0.01, "female treated sd {sd}");
    }

    #[test]
    fn potential_outcomes_are_reproducible() {
        let spec = ScenarioSpec::new(ScenarioId::S1, 1, 0);
        let plus = |_: &[f64]| Arm::Treated;
        let minus = |_: &[f64]| Arm::Control;
        let a = generate_potential_outcomes(&spec, &plus, 1000, 4);
        assert_eq!(a, generate_potential_outcomes(&spec, &plus, 1000, 4));
        let b = generate_potential_outcomes(&spec, &minus, 1000, 4);
        assert_ne!(mean(&a), mean(&b));
    }

    #[test]
    fn contrast_rule_beats_alternatives() {
        let spec = ScenarioSpec::new(ScenarioId::S1, 1, 0);
        let oracle = spec.mean_optimal_rule();
        let plus = |_: &[f64]| Arm::Treated;
        let minus = |_: &[f64]| Arm::Control;
        // Pseudo-random assignment keyed on the covariate bits.
        let random = |x: &[f64]| {
            if x[0].to_bits().count_ones().is_multiple_of(2) {
                Arm::Treated
            } else {
                Arm::Control
            }
        };
        let value = |rule: &dyn Policy| mean(&generate_potential_outcomes(&spec, rule, 10_000, 8));
        let best = value(&oracle);
        for other in [value(&plus), value(&minus), value(&random)] {
            assert!(best > other, "{best} <= {other}");
        }
    }
}
