//! End-to-end fitting: censoring model, weights, kernel, objective and solver.

use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::censor::{fit_cox, fit_km, CensorSurvival, CoxDesign};
use crate::data::{ipw_weights, Arm, Dataset, DEFAULT_SURVIVAL_FLOOR};
use crate::error::{Error, Result};
use crate::kernel::{
    ConstantPolicy, KernelModel, Policy, Standardizer, SurrogateLoss, TreatmentRule,
};
use crate::objective::{Criterion, DcObjective, Majorant};
use crate::solver::{fit_deterministic, fit_sampled, FitResult, SolverConfig};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CensorModel {
    #[default]
    KaplanMeier,
    Cox {
        #[serde(default)]
        design: Option<CoxDesign>,
    },
}

impl CensorModel {
    /// Fits the model; Cox defaults to all covariates, the arm and interactions.
    pub fn fit(&self, data: &Dataset) -> Result<CensorSurvival> {
        match self {
            CensorModel::KaplanMeier => fit_km(data),
            CensorModel::Cox { design } => {
                let design = design
                    .clone()
                    .unwrap_or_else(|| CoxDesign::full(data.dim()));
                fit_cox(data, &design)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    #[default]
    Sampled,
    Deterministic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnConfig {
    pub lambda: f64,
    /// `None` selects the median pairwise distance.
    pub bandwidth: Option<f64>,
    /// Standardize covariate columns before the kernel.
    pub standardize: bool,
    pub delta: f64,
    pub majorant: Majorant,
    pub censor: CensorModel,
    pub survival_floor: f64,
    pub algorithm: Algorithm,
    pub solver: SolverConfig,
}

impl Default for LearnConfig {
    fn default() -> Self {
        LearnConfig {
            lambda: 0.01,
            bandwidth: None,
            standardize: false,
            delta: 1.0,
            majorant: Majorant::default(),
            censor: CensorModel::default(),
            survival_floor: DEFAULT_SURVIVAL_FLOOR,
            algorithm: Algorithm::default(),
            solver: SolverConfig::default(),
        }
    }
}

/// A learned rule with everything needed to reproduce or inspect it.
#[derive(Clone, Debug)]
pub struct FittedRule {
    pub criterion: Criterion,
    pub rule: TreatmentRule,
    pub fit: FitResult,
    pub censor: CensorSurvival,
}

/// Builds the weighted objective for `data` under `criterion`.
pub fn build_objective(
    data: &Dataset,
    criterion: Criterion,
    cfg: &LearnConfig,
    censor: &CensorSurvival,
) -> Result<DcObjective> {
    if data.is_empty() {
        return Err(Error::InvalidInput("cannot fit on an empty dataset".into()));
    }
    let x = data.covariates();
    let scaler = cfg.standardize.then(|| Standardizer::fit(&x));
    let kernel = Arc::new(KernelModel::new(&x, cfg.bandwidth, scaler)?);
    let weights = ipw_weights(data, censor, cfg.survival_floor);
    let loss = SurrogateLoss::new(cfg.delta)?;
    Ok(
        DcObjective::from_dataset(criterion, data, weights, kernel, cfg.lambda, loss)?
            .with_majorant(cfg.majorant),
    )
}

pub fn fit_rule(data: &Dataset, criterion: Criterion, cfg: &LearnConfig) -> Result<FittedRule> {
    let censor = cfg.censor.fit(data)?;
    fit_rule_with_censor(data, criterion, cfg, censor)
}

/// [`fit_rule`] with a censoring model fitted elsewhere.
pub fn fit_rule_with_censor(
    data: &Dataset,
    criterion: Criterion,
    cfg: &LearnConfig,
    censor: CensorSurvival,
) -> Result<FittedRule> {
    let obj = build_objective(data, criterion, cfg, &censor)?;
    let beta0 = DVector::zeros(obj.len());
    let fit = match cfg.algorithm {
        Algorithm::Sampled => fit_sampled(&obj, &cfg.solver, &beta0)?,
        Algorithm::Deterministic => fit_deterministic(&obj, &cfg.solver, &beta0)?,
    };
    let model = Arc::try_unwrap(obj.kernel().clone()).unwrap_or_else(|k| (*k).clone());
    let rule = TreatmentRule::new(model, fit.beta.clone())?;
    Ok(FittedRule {
        criterion,
        rule,
        fit,
        censor,
    })
}

/// The rules compared in experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Cvar,
    Bpoe,
    Mean,
    AllTreated,
    AllControl,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Cvar,
        Method::Bpoe,
        Method::Mean,
        Method::AllTreated,
        Method::AllControl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Cvar => "cvar",
            Method::Bpoe => "bpoe",
            Method::Mean => "mean",
            Method::AllTreated => "all_treated",
            Method::AllControl => "all_control",
        }
    }

    pub fn criterion(self, gamma: f64, tau: f64) -> Option<Criterion> {
        match self {
            Method::Cvar => Some(Criterion::Cvar { gamma }),
            Method::Bpoe => Some(Criterion::Bpoe { tau }),
            Method::Mean => Some(Criterion::Mean),
            Method::AllTreated | Method::AllControl => None,
        }
    }
}

/// Either a learned kernel rule or a constant one.
#[derive(Clone, Debug)]
pub enum MethodRule {
    Learned(Box<FittedRule>),
    Constant(ConstantPolicy),
}

impl MethodRule {
    pub fn fitted(&self) -> Option<&FittedRule> {
        match self {
            MethodRule::Learned(f) => Some(f),
            MethodRule::Constant(_) => None,
        }
    }
}

impl Policy for MethodRule {
    fn assign(&self, x: &[f64]) -> Arm {
        match self {
            MethodRule::Learned(f) => f.rule.decision(x),
            MethodRule::Constant(c) => c.assign(x),
        }
    }
}

/// Fits one method; constant rules need no data.
pub fn fit_method(
    method: Method,
    data: &Dataset,
    gamma: f64,
    tau: f64,
    cfg: &LearnConfig,
    censor: &CensorSurvival,
) -> Result<MethodRule> {
    Ok(match method {
        Method::AllTreated => MethodRule::Constant(ConstantPolicy(Arm::Treated)),
        Method::AllControl => MethodRule::Constant(ConstantPolicy(Arm::Control)),
        m => {
            let criterion = m.criterion(gamma, tau).expect("learned method");
            MethodRule::Learned(Box::new(fit_rule_with_censor(
                data,
                criterion,
                cfg,
                censor.clone(),
            )?))
        }
    })
}
