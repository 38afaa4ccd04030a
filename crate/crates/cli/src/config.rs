//! The run configuration: a TOML file overlaid with command-line flags.

use std::fmt;
use std::path::{Path, PathBuf};

use robust_itr::data::{load_csv, CsvSchema};
use robust_itr::learn::{Algorithm, CensorModel, LearnConfig, Method};
use robust_itr::{Criterion, Dataset, Majorant, ScenarioId};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Simulate,
    #[default]
    Train,
    Evaluate,
    Experiment,
    Cv,
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Command::Simulate => "simulate",
            Command::Train => "train",
            Command::Evaluate => "evaluate",
            Command::Experiment => "experiment",
            Command::Cv => "cv",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum CriterionKind {
    #[default]
    Cvar,
    Bpoe,
    Mean,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Columns `x1..xp, arm, time, event` with arms coded `1` / `-1`.
    #[default]
    Standard,
    /// The ACTG 175 trial layout.
    Actg175,
}

/// Where a dataset comes from and how its columns map onto the model.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub path: Option<PathBuf>,
    pub preset: Preset,
    /// Defaults to the preset's columns; for `standard`, every `x<k>` column.
    pub covariates: Option<Vec<String>>,
    pub arm: Option<String>,
    pub time: Option<String>,
    pub event: Option<String>,
    pub propensity: Option<String>,
    pub treated_labels: Option<Vec<String>>,
    pub control_labels: Option<Vec<String>>,
    /// Follow-up horizon; no truncation when absent.
    pub horizon: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    pub output: PathBuf,
    pub seed: u64,
    /// Worker threads for `experiment` and `cv`; 0 uses every core.
    pub workers: usize,
    pub scenario: Option<ScenarioId>,
    pub n: usize,
    pub criterion: CriterionKind,
    pub gamma: f64,
    pub tau: f64,
    pub n_test: usize,
    pub repeats: usize,
    pub folds: usize,
    pub methods: Vec<Method>,
    /// Rule file read by `evaluate`.
    pub model: Option<PathBuf>,
    /// `α̂` and `ĉ` for IPW evaluation of a stored rule.
    pub alpha_hat: Option<f64>,
    pub c_hat: Option<f64>,
    pub plot_data: bool,
    pub data: DataConfig,
    pub learn: LearnConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: Command::default(),
            output: PathBuf::from("out"),
            seed: 1,
            workers: 0,
            scenario: None,
            n: 500,
            criterion: CriterionKind::default(),
            gamma: 0.5,
            tau: 0.5,
            n_test: 10_000,
            repeats: 20,
            folds: 5,
            methods: Method::ALL.to_vec(),
            model: None,
            alpha_hat: None,
            c_hat: None,
            plot_data: false,
            data: DataConfig::default(),
            learn: LearnConfig::default(),
        }
    }
}

/// Flags shared by every subcommand. Each one overrides the file value.
#[derive(Clone, Debug, Default, clap::Args)]
pub struct Flags {
    /// TOML configuration file.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// S1, S2, S3 or illustrative.
    #[arg(long)]
    pub scenario: Option<ScenarioId>,
    /// Training sample size for simulated data.
    #[arg(long)]
    pub n: Option<usize>,
    /// CSV dataset.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long, value_enum)]
    pub criterion: Option<CriterionKind>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub bandwidth: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub max_outer: Option<usize>,
    #[arg(long, value_enum)]
    pub algorithm: Option<AlgorithmArg>,
    #[arg(long, value_enum)]
    pub majorant: Option<MajorantArg>,
    #[arg(long, value_enum)]
    pub censor: Option<CensorArg>,
    /// Rule file for `evaluate`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub alpha_hat: Option<f64>,
    #[arg(long)]
    pub c_hat: Option<f64>,
    /// Also write boxplot quantiles per method.
    #[arg(long)]
    pub plot_data: bool,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
pub enum AlgorithmArg {
    Sampled,
    Deterministic,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
pub enum MajorantArg {
    MaxGap,
    SumOfGaps,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
pub enum CensorArg {
    Km,
    Cox,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("invalid configuration: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always representable")
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Usage(m) => CliError::Usage(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// File values (or defaults) overlaid with the flags that were given.
    pub fn resolve(command: Command, flags: &Flags) -> Result<Self, CliError> {
        let mut c = match &flags.config {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        c.command = command;
        macro_rules! set {
            ($flag:ident => $($field:tt)+) => {
                if let Some(v) = flags.$flag.clone() {
                    c.$($field)+ = v;
                }
            };
        }
        set!(out => output);
        set!(seed => seed);
        set!(workers => workers);
        set!(n => n);
        set!(criterion => criterion);
        set!(gamma => gamma);
        set!(tau => tau);
        set!(n_test => n_test);
        set!(repeats => repeats);
        set!(folds => folds);
        set!(lambda => learn.lambda);
        set!(rho => learn.solver.rho);
        set!(eps => learn.solver.eps);
        set!(max_outer => learn.solver.max_outer);
        set!(preset => data.preset);
        if flags.scenario.is_some() {
            c.scenario = flags.scenario;
        }
        if flags.data.is_some() {
            c.data.path = flags.data.clone();
        }
        if flags.horizon.is_some() {
            c.data.horizon = flags.horizon;
        }
        if flags.bandwidth.is_some() {
            c.learn.bandwidth = flags.bandwidth;
        }
        if flags.model.is_some() {
            c.model = flags.model.clone();
        }
        if flags.alpha_hat.is_some() {
            c.alpha_hat = flags.alpha_hat;
        }
        if flags.c_hat.is_some() {
            c.c_hat = flags.c_hat;
        }
        if let Some(a) = flags.algorithm {
            c.learn.algorithm = match a {
                AlgorithmArg::Sampled => Algorithm::Sampled,
                AlgorithmArg::Deterministic => Algorithm::Deterministic,
            };
        }
        if let Some(m) = flags.majorant {
            c.learn.majorant = match m {
                MajorantArg::MaxGap => Majorant::MaxGap,
                MajorantArg::SumOfGaps => Majorant::SumOfGaps,
            };
        }
        if let Some(k) = flags.censor {
            c.learn.censor = match k {
                CensorArg::Km => CensorModel::KaplanMeier,
                CensorArg::Cox => CensorModel::Cox { design: None },
            };
        }
        c.plot_data |= flags.plot_data;
        Ok(c)
    }

    pub fn criterion(&self) -> Criterion {
        match self.criterion {
            CriterionKind::Cvar => Criterion::Cvar { gamma: self.gamma },
            CriterionKind::Bpoe => Criterion::Bpoe { tau: self.tau },
            CriterionKind::Mean => Criterion::Mean,
        }
    }

    pub fn scenario(&self) -> Result<ScenarioId, CliError> {
        self.scenario.ok_or_else(|| {
            CliError::Usage(format!("`{}` needs a scenario (--scenario)", self.command))
        })
    }

    pub fn data_path(&self) -> Option<&Path> {
        self.data.path.as_deref()
    }

    /// Loads the configured CSV.
    pub fn load_data(&self) -> Result<Dataset, CliError> {
        let path = self.data_path().ok_or_else(|| {
            CliError::Usage(format!("`{}` needs a dataset (--data)", self.command))
        })?;
        let schema = self.schema(path)?;
        Ok(load_csv(path, &schema)?)
    }

    fn schema(&self, path: &Path) -> Result<CsvSchema, CliError> {
        let d = &self.data;
        let horizon = d.horizon.unwrap_or(f64::MAX);
        let mut s = match d.preset {
            Preset::Standard => CsvSchema::standard(0, horizon),
            Preset::Actg175 => CsvSchema::actg175(horizon),
        };
        match &d.covariates {
            Some(cols) => s.covariates = cols.clone(),
            None if d.preset == Preset::Standard => s.covariates = numbered_columns(path)?,
            None => {}
        }
        let text = |v: &Option<String>, dst: &mut String| {
            if let Some(v) = v {
                *dst = v.clone();
            }
        };
        text(&d.arm, &mut s.arm);
        text(&d.time, &mut s.time);
        text(&d.event, &mut s.event);
        if d.propensity.is_some() {
            s.propensity = d.propensity.clone();
        }
        if let Some(l) = &d.treated_labels {
            s.treated_labels = l.clone();
        }
        if let Some(l) = &d.control_labels {
            s.control_labels = l.clone();
        }
        Ok(s)
    }
}

/// Header columns named `x1`, `x2`, ... in file order.
fn numbered_columns(path: &Path) -> Result<Vec<String>, CliError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::Data(e.to_string()))?;
    let headers = rdr.headers().map_err(|e| CliError::Data(e.to_string()))?;
    let cols: Vec<String> = headers
        .iter()
        .filter(|h| {
            h.strip_prefix('x')
                .is_some_and(|k| !k.is_empty() && k.chars().all(|c| c.is_ascii_digit()))
        })
        .map(str::to_string)
        .collect();
    if cols.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no covariate columns named x1, x2, ...; list them under [data] covariates",
            path.display()
        )));
    }
    Ok(cols)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_rejected_with_position() {
        let err = RunConfig::from_toml("seed = 3\ngama = 0.4\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("gama"), "{msg}");
        assert!(msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn flags_override_file_values() {
        let flags = Flags {
            gamma: Some(0.3),
            lambda: Some(0.2),
            ..Flags::default()
        };
        let c = RunConfig::resolve(Command::Train, &flags).unwrap();
        assert_eq!((c.gamma, c.learn.lambda, c.tau), (0.3, 0.2, 0.5));
    }
}
