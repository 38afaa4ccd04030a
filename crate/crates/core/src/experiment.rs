//! Replicated simulation studies and repeated k-fold cross-validation.
//!
//! Both harnesses fan out over a dedicated worker pool. Every replication or
//! repeat derives its own seed from the master seed, so results do not depend
//! on the number of workers.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::censor::CensorSurvival;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::{evaluate_rule_ipw, evaluate_rule_simulation, EvalReport, FiveNumber, Summary};
use crate::learn::{fit_method, LearnConfig, Method, MethodRule};
use crate::objective::Criterion;
use crate::simgen::{child_seed, generate, stream_rng, ScenarioId, ScenarioSpec};

/// Stream reserved for the test set shared by all replications.
const TEST_STREAM: u64 = u64::MAX;

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidInput(format!("cannot start worker pool: {e}")))
}

fn check_levels(gamma: f64, tau: f64) -> Result<()> {
    Criterion::Cvar { gamma }.validate()?;
    Criterion::Bpoe { tau }.validate()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub scenario: ScenarioId,
    pub n: usize,
    pub repeats: usize,
    pub gamma: f64,
    pub tau: f64,
    pub n_test: usize,
    pub seed: u64,
    /// `0` uses one worker per available core.
    pub workers: usize,
    pub methods: Vec<Method>,
    pub learn: LearnConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scenario: ScenarioId::S1,
            n: 500,
            repeats: 20,
            gamma: 0.5,
            tau: 0.5,
            n_test: 10_000,
            seed: 1,
            workers: 0,
            methods: Method::ALL.to_vec(),
            learn: LearnConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRow {
    pub replication: usize,
    pub method: Method,
    pub v_mean: f64,
    pub v1: f64,
    pub v2: f64,
    /// Outer iterations; zero for constant rules.
    pub iterations: usize,
    pub converged: bool,
}

/// Replication statistics of the three value functions for one method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub v_mean: Summary,
    pub v1: Summary,
    pub v2: Summary,
}

/// Boxplot quantiles per method and value function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub method: Method,
    pub measure: String,
    pub stats: FiveNumber,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub rows: Vec<ReplicationRow>,
    pub summaries: Vec<MethodSummary>,
}

type Measure = (&'static str, fn(&ReplicationRow) -> f64);

fn rows_for(rows: &[ReplicationRow], method: Method, f: fn(&ReplicationRow) -> f64) -> Vec<f64> {
    rows.iter().filter(|r| r.method == method).map(f).collect()
}

impl ExperimentReport {
    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }

    /// Per-replication differences `a - b` of one value function.
    pub fn paired_differences(
        &self,
        a: Method,
        b: Method,
        f: fn(&ReplicationRow) -> f64,
    ) -> Vec<f64> {
        let xa = rows_for(&self.rows, a, f);
        let xb = rows_for(&self.rows, b, f);
        xa.iter().zip(&xb).map(|(x, y)| x - y).collect()
    }

    pub fn plot_data(&self) -> Vec<PlotRow> {
        let measures: [Measure; 3] = [("v_mean", |r| r.v_mean), ("v1", |r| r.v1), ("v2", |r| r.v2)];
        self.config
            .methods
            .iter()
            .flat_map(|&method| {
                measures.iter().map(move |(name, f)| PlotRow {
                    method,
                    measure: name.to_string(),
                    stats: FiveNumber::of(&rows_for(&self.rows, method, *f)),
                })
            })
            .collect()
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        check_levels(self.gamma, self.tau)?;
        if self.n == 0 || self.repeats == 0 || self.n_test == 0 {
            return Err(Error::InvalidInput(
                "n, repeats and n_test must be positive".into(),
            ));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidInput("no methods selected".into()));
        }
        self.learn.solver.validate()
    }

    /// Training seed of replication `r`.
    pub fn replication_seed(&self, r: usize) -> u64 {
        child_seed(self.seed, r as u64)
    }

    /// Seed of the test set every rule is evaluated on.
    pub fn test_seed(&self) -> u64 {
        child_seed(self.seed, TEST_STREAM)
    }
}

fn run_replication(cfg: &ExperimentConfig, r: usize) -> Result<Vec<ReplicationRow>> {
    let seed = cfg.replication_seed(r);
    let spec = ScenarioSpec::new(cfg.scenario, cfg.n, seed);
    let data = generate(&spec)?;
    let censor = cfg.learn.censor.fit(&data)?;
    let mut learn = cfg.learn.clone();
    learn.solver.seed = seed;
    cfg.methods
        .iter()
        .map(|&method| {
            let rule = fit_method(method, &data, cfg.gamma, cfg.tau, &learn, &censor)?;
            let EvalReport { v_mean, v1, v2, .. } = evaluate_rule_simulation(
                &spec,
                &rule,
                cfg.gamma,
                cfg.tau,
                cfg.n_test,
                cfg.test_seed(),
            );
            let (iterations, converged) = rule
                .fitted()
                .map_or((0, true), |f| (f.fit.trace.len(), f.fit.converged));
            Ok(ReplicationRow {
                replication: r,
                method,
                v_mean,
                v1,
                v2,
                iterations,
                converged,
            })
        })
        .collect()
}

/// Generates, fits every method and evaluates on a common test set, once per replication.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let per_rep: Vec<Result<Vec<ReplicationRow>>> = pool(cfg.workers)?.install(|| {
        (0..cfg.repeats)
            .into_par_iter()
            .map(|r| run_replication(cfg, r))
            .collect()
    });
    let mut rows = Vec::with_capacity(cfg.repeats * cfg.methods.len());
    for rep in per_rep {
        rows.extend(rep?);
    }
    let summaries = cfg
        .methods
        .iter()
        .map(|&method| MethodSummary {
            method,
            v_mean: Summary::of(&rows_for(&rows, method, |r| r.v_mean)),
            v1: Summary::of(&rows_for(&rows, method, |r| r.v1)),
            v2: Summary::of(&rows_for(&rows, method, |r| r.v2)),
        })
        .collect();
    Ok(ExperimentReport {
        config: cfg.clone(),
        rows,
        summaries,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvConfig {
    pub folds: usize,
    pub repeats: usize,
    pub gamma: f64,
    pub tau: f64,
    pub seed: u64,
    pub workers: usize,
    pub methods: Vec<Method>,
    pub learn: LearnConfig,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            folds: 5,
            repeats: 200,
            gamma: 0.5,
            tau: 0.5,
            seed: 1,
            workers: 0,
            methods: Method::ALL.to_vec(),
            learn: LearnConfig::default(),
        }
    }
}

impl CvConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        check_levels(self.gamma, self.tau)?;
        if self.folds < 2 || self.folds > n {
            return Err(Error::InvalidInput(format!(
                "folds must be between 2 and the sample size {n}, got {}",
                self.folds
            )));
        }
        if self.repeats == 0 || self.methods.is_empty() {
            return Err(Error::InvalidInput(
                "repeats and methods must be nonempty".into(),
            ));
        }
        self.learn.solver.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub repeat: usize,
    pub fold: usize,
    pub method: Method,
    pub v: f64,
    pub v1: f64,
    pub m2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub method: Method,
    pub v: Summary,
    pub v1: Summary,
    pub m2: Summary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub config: CvConfig,
    pub rows: Vec<CvRow>,
    /// Statistics over repeats of the fold-averaged metrics.
    pub summaries: Vec<CvSummary>,
}

/// Random partition of `0..n` into `k` folds of near-equal size.
pub fn fold_indices(n: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream_rng(seed, 0));
    let mut folds = vec![Vec::new(); k];
    for (pos, i) in idx.into_iter().enumerate() {
        folds[pos % k].push(i);
    }
    folds
}

fn inner_scalars(
    train: &Dataset,
    cfg: &CvConfig,
    learn: &LearnConfig,
    censor: &CensorSurvival,
    rules: &mut Vec<(Method, MethodRule)>,
) -> Result<(f64, f64)> {
    // α̂ and ĉ always come from the CVaR and bPOE fits, whichever methods are reported.
    let mut scalar = |m: Method| -> Result<f64> {
        if let Some((_, rule)) = rules.iter().find(|(k, _)| *k == m) {
            return Ok(rule.fitted().expect("learned").fit.inner_scalar);
        }
        let rule = fit_method(m, train, cfg.gamma, cfg.tau, learn, censor)?;
        let s = rule.fitted().expect("learned").fit.inner_scalar;
        rules.push((m, rule));
        Ok(s)
    };
    Ok((scalar(Method::Cvar)?, scalar(Method::Bpoe)?))
}

fn run_fold(
    data: &Dataset,
    cfg: &CvConfig,
    repeat: usize,
    fold: usize,
    test_idx: &[usize],
    seed: u64,
) -> Result<Vec<CvRow>> {
    let in_test: std::collections::HashSet<usize> = test_idx.iter().copied().collect();
    let train_idx: Vec<usize> = (0..data.len()).filter(|i| !in_test.contains(i)).collect();
    let train = data.subset(&train_idx);
    let test = data.subset(test_idx);
    let censor = cfg.learn.censor.fit(&train)?;
    let mut learn = cfg.learn.clone();
    learn.solver.seed = seed;
    let mut rules = Vec::new();
    for &m in &cfg.methods {
        if m != Method::Cvar && m != Method::Bpoe {
            rules.push((
                m,
                fit_method(m, &train, cfg.gamma, cfg.tau, &learn, &censor)?,
            ));
        }
    }
    let (alpha_hat, c_hat) = inner_scalars(&train, cfg, &learn, &censor, &mut rules)?;
    Ok(cfg
        .methods
        .iter()
        .map(|&method| {
            let (_, rule) = rules
                .iter()
                .find(|(k, _)| *k == method)
                .expect("fitted above");
            let r = evaluate_rule_ipw(
                &test,
                rule,
                &censor,
                cfg.gamma,
                cfg.tau,
                alpha_hat,
                c_hat,
                cfg.learn.survival_floor,
            );
            CvRow {
                repeat,
                fold,
                method,
                v: r.v,
                v1: r.v1,
                m2: r.m2,
            }
        })
        .collect())
}

/// Repeated k-fold cross-validation of every method with IPW metrics on the
/// held-out folds. Censoring models and rules see training folds only.
pub fn run_cv(data: &Dataset, cfg: &CvConfig) -> Result<CvReport> {
    cfg.validate(data.len())?;
    let tasks: Vec<(usize, usize)> = (0..cfg.repeats)
        .flat_map(|r| (0..cfg.folds).map(move |f| (r, f)))
        .collect();
    let per_task: Vec<Result<Vec<CvRow>>> = pool(cfg.workers)?.install(|| {
        tasks
            .par_iter()
            .map(|&(r, f)| {
                let seed = child_seed(cfg.seed, r as u64);
                let folds = fold_indices(data.len(), cfg.folds, seed);
                run_fold(data, cfg, r, f, &folds[f], seed)
            })
            .collect()
    });
    let mut rows = Vec::new();
    for t in per_task {
        rows.extend(t?);
    }
    let fold_mean = |method: Method, f: fn(&CvRow) -> f64| -> Vec<f64> {
        (0..cfg.repeats)
            .map(|r| {
                let v: Vec<f64> = rows
                    .iter()
                    .filter(|row| row.repeat == r && row.method == method)
                    .map(f)
                    .collect();
                v.iter().sum::<f64>() / v.len() as f64
            })
            .collect()
    };
    let summaries = cfg
        .methods
        .iter()
        .map(|&method| CvSummary {
            method,
            v: Summary::of(&fold_mean(method, |r| r.v)),
            v1: Summary::of(&fold_mean(method, |r| r.v1)),
            m2: Summary::of(&fold_mean(method, |r| r.m2)),
        })
        .collect();
    Ok(CvReport {
        config: cfg.clone(),
        rows,
        summaries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_partition_the_sample() {
        let folds = fold_indices(23, 5, 9);
        let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        assert!(folds.iter().all(|f| f.len() == 4 || f.len() == 5));
        assert_eq!(folds, fold_indices(23, 5, 9));
    }

    #[test]
    fn seeds_are_distinct() {
        let cfg = ExperimentConfig::default();
        assert_ne!(cfg.replication_seed(0), cfg.replication_seed(1));
        assert_ne!(cfg.replication_seed(0), cfg.test_seed());
    }

    #[test]
    fn invalid_configs() {
        let cfg = ExperimentConfig {
            repeats: 0,
            ..ExperimentConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cv = CvConfig::default();
        assert!(cv.validate(3).is_err());
        assert!(cv.validate(100).is_ok());
    }
}
