//! Right-censored treatment data: subjects, datasets, CSV ingestion and
//! inverse-probability weights.
//!
//! Arms are mapped to [`Arm::Treated`] (`+1`) and [`Arm::Control`] (`-1`) at
//! ingestion; nothing downstream sees the raw labels. Observed times are
//! truncated at the dataset horizon `h` when a [`Dataset`] is built.

use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::censor::CensorSurvival;
use crate::error::{Error, Result};

/// Lower clamp applied to the censoring survival before it is inverted.
pub const DEFAULT_SURVIVAL_FLOOR: f64 = 0.05;

/// Treatment label, `+1` or `-1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arm {
    Treated,
    Control,
}

impl Arm {
    pub fn sign(self) -> f64 {
        match self {
            Arm::Treated => 1.0,
            Arm::Control => -1.0,
        }
    }

    /// Sign convention of the decision rules: zero goes to `Treated`.
    pub fn from_score(score: f64) -> Arm {
        if score >= 0.0 {
            Arm::Treated
        } else {
            Arm::Control
        }
    }

    pub fn opposite(self) -> Arm {
        match self {
            Arm::Treated => Arm::Control,
            Arm::Control => Arm::Treated,
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arm::Treated => f.write_str("+1"),
            Arm::Control => f.write_str("-1"),
        }
    }
}

/// One observation `(X, A, Y = min(T, C), Δ = I{T <= C})`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub x: Vec<f64>,
    pub arm: Arm,
    pub time: f64,
    pub event: bool,
}

impl Subject {
    pub fn new(x: Vec<f64>, arm: Arm, time: f64, event: bool) -> Result<Self> {
        if !time.is_finite() || time < 0.0 {
            return Err(Error::InvalidInput(format!(
                "observed time must be finite and nonnegative, got {time}"
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite covariate".into()));
        }
        Ok(Subject {
            x,
            arm,
            time,
            event,
        })
    }
}

/// Propensity `π(A_i | X_i)` of the arm each subject actually received.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Propensity {
    /// Randomized design: `π(+1 | x) = treated`, `π(-1 | x) = 1 - treated`.
    Constant { treated: f64 },
    /// Per-subject propensity of the received arm.
    Observed(Vec<f64>),
}

impl Propensity {
    pub fn randomized() -> Self {
        Propensity::Constant { treated: 0.5 }
    }

    /// Propensity of subject `i` having received `arm`.
    pub fn received(&self, i: usize, arm: Arm) -> f64 {
        match self {
            Propensity::Constant { treated } => match arm {
                Arm::Treated => *treated,
                Arm::Control => 1.0 - treated,
            },
            Propensity::Observed(p) => p[i],
        }
    }
}

/// Immutable collection of subjects sharing one covariate dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    subjects: Vec<Subject>,
    propensity: Propensity,
    horizon: f64,
}

impl Dataset {
    /// Validates the subjects and truncates follow-up at `horizon`.
    ///
    /// A subject followed beyond `h` has `min(T, h)` observed exactly, so its
    /// time becomes `h` with the event indicator set.
    pub fn new(mut subjects: Vec<Subject>, propensity: Propensity, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidInput(format!(
                "horizon must be positive and finite, got {horizon}"
            )));
        }
        if let Some(first) = subjects.first() {
            let p = first.x.len();
            if let Some(k) = subjects.iter().position(|s| s.x.len() != p) {
                return Err(Error::InvalidInput(format!(
                    "subject {} has {} covariates, expected {p}",
                    k + 1,
                    subjects[k].x.len()
                )));
            }
        }
        match &propensity {
            Propensity::Constant { treated } => {
                if !(*treated > 0.0 && *treated < 1.0) {
                    return Err(Error::InvalidInput(format!(
                        "propensity must lie in (0, 1), got {treated}"
                    )));
                }
            }
            Propensity::Observed(p) => {
                if p.len() != subjects.len() {
                    return Err(Error::InvalidInput(
                        "propensity vector length differs from subject count".into(),
                    ));
                }
                if let Some(k) = p.iter().position(|v| !(*v > 0.0 && *v < 1.0)) {
                    return Err(Error::InvalidInput(format!(
                        "propensity {} at row {} outside (0, 1)",
                        p[k],
                        k + 1
                    )));
                }
            }
        }
        for s in &mut subjects {
            if s.time > horizon {
                s.time = horizon;
                s.event = true;
            }
        }
        Ok(Dataset {
            subjects,
            propensity,
            horizon,
        })
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn propensity(&self) -> &Propensity {
        &self.propensity
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    /// Covariate dimension `p` (0 for an empty dataset).
    pub fn dim(&self) -> usize {
        self.subjects.first().map_or(0, |s| s.x.len())
    }

    pub fn propensity_of(&self, i: usize) -> f64 {
        self.propensity.received(i, self.subjects[i].arm)
    }

    pub fn times(&self) -> Vec<f64> {
        self.subjects.iter().map(|s| s.time).collect()
    }

    pub fn arm_signs(&self) -> Vec<f64> {
        self.subjects.iter().map(|s| s.arm.sign()).collect()
    }

    pub fn covariates(&self) -> Vec<Vec<f64>> {
        self.subjects.iter().map(|s| s.x.clone()).collect()
    }

    pub fn censoring_fraction(&self) -> f64 {
        if self.subjects.is_empty() {
            return 0.0;
        }
        let censored = self.subjects.iter().filter(|s| !s.event).count();
        censored as f64 / self.subjects.len() as f64
    }

    /// Rows `indices` in the given order, keeping per-subject propensities.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let subjects = indices.iter().map(|&i| self.subjects[i].clone()).collect();
        let propensity = match &self.propensity {
            Propensity::Constant { treated } => Propensity::Constant { treated: *treated },
            Propensity::Observed(p) => {
                Propensity::Observed(indices.iter().map(|&i| p[i]).collect())
            }
        };
        Dataset {
            subjects,
            propensity,
            horizon: self.horizon,
        }
    }
}

/// Column mapping used to read a dataset from CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    /// Covariate columns, in model order.
    pub covariates: Vec<String>,
    pub arm: String,
    pub time: String,
    pub event: String,
    /// Optional column holding `π(A_i | X_i)`; overrides `constant_propensity`.
    pub propensity: Option<String>,
    pub treated_labels: Vec<String>,
    pub control_labels: Vec<String>,
    /// Drop rows whose arm matches neither label set instead of failing.
    pub skip_unmapped_arms: bool,
    pub horizon: f64,
    /// `π(+1 | x)` when no propensity column is given.
    pub constant_propensity: f64,
}

impl CsvSchema {
    /// The layout written by [`write_csv`]: `x1..xp, arm, time, event`.
    pub fn standard(p: usize, horizon: f64) -> Self {
        CsvSchema {
            covariates: (1..=p).map(|k| format!("x{k}")).collect(),
            arm: "arm".into(),
            time: "time".into(),
            event: "event".into(),
            propensity: None,
            treated_labels: vec!["1".into()],
            control_labels: vec!["-1".into()],
            skip_unmapped_arms: false,
            horizon,
            constant_propensity: 0.5,
        }
    }

    /// ACTG 175 (`speff2trial` layout): ZDV+ddI (`arms == 1`) against ddI
    /// monotherapy (`arms == 3`), twelve baseline covariates, follow-up in days.
    /// Rows from the other two arms are skipped.
    pub fn actg175(horizon: f64) -> Self {
        let covariates = [
            "gender", "homo", "race", "symptom", "drugs", "hemo", "str2", "age", "wtkg", "karnof",
            "cd40", "cd80",
        ];
        CsvSchema {
            covariates: covariates.iter().map(|s| s.to_string()).collect(),
            arm: "arms".into(),
            time: "days".into(),
            event: "cens".into(),
            propensity: None,
            treated_labels: vec!["1".into()],
            control_labels: vec!["3".into()],
            skip_unmapped_arms: true,
            horizon,
            constant_propensity: 0.5,
        }
    }

    fn map_arm(&self, raw: &str) -> Option<Arm> {
        if self.treated_labels.iter().any(|l| label_matches(l, raw)) {
            Some(Arm::Treated)
        } else if self.control_labels.iter().any(|l| label_matches(l, raw)) {
            Some(Arm::Control)
        } else {
            None
        }
    }
}

fn label_matches(label: &str, raw: &str) -> bool {
    let (label, raw) = (label.trim(), raw.trim());
    if label == raw {
        return true;
    }
    match (label.parse::<f64>(), raw.parse::<f64>()) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

/// Parses a dataset; row numbers in errors count data rows from 1.
pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let cov_idx = schema
        .covariates
        .iter()
        .map(|c| column(c))
        .collect::<Result<Vec<_>>>()?;
    let arm_idx = column(&schema.arm)?;
    let time_idx = column(&schema.time)?;
    let event_idx = column(&schema.event)?;
    let prop_idx = schema.propensity.as_deref().map(column).transpose()?;

    let mut subjects = Vec::new();
    let mut propensities = Vec::new();
    for (k, record) in rdr.records().enumerate() {
        let row = k + 1;
        let record = record?;
        let cell = |idx: usize, name: &str| -> Result<f64> {
            let raw = record.get(idx).unwrap_or("").trim();
            raw.parse::<f64>().map_err(|_| Error::NonNumeric {
                row,
                column: name.to_string(),
                value: raw.to_string(),
            })
        };
        let raw_arm = record.get(arm_idx).unwrap_or("").trim();
        let arm = match schema.map_arm(raw_arm) {
            Some(a) => a,
            None if schema.skip_unmapped_arms => continue,
            None => {
                return Err(Error::UnknownArm {
                    row,
                    value: raw_arm.to_string(),
                })
            }
        };
        let x = cov_idx
            .iter()
            .zip(&schema.covariates)
            .map(|(&i, name)| cell(i, name))
            .collect::<Result<Vec<_>>>()?;
        let time = cell(time_idx, &schema.time)?;
        if time < 0.0 {
            return Err(Error::NegativeTime(row));
        }
        let event_raw = cell(event_idx, &schema.event)?;
        let event = if event_raw == 1.0 {
            true
        } else if event_raw == 0.0 {
            false
        } else {
            return Err(Error::InvalidEvent {
                row,
                value: record.get(event_idx).unwrap_or("").to_string(),
            });
        };
        if let Some(pi) = prop_idx {
            propensities.push(cell(pi, schema.propensity.as_deref().unwrap_or_default())?);
        }
        let subject = Subject::new(x, arm, time, event)
            .map_err(|e| Error::InvalidInput(format!("row {row}: {e}")))?;
        subjects.push(subject);
    }
    let propensity = if prop_idx.is_some() {
        Propensity::Observed(propensities)
    } else {
        Propensity::Constant {
            treated: schema.constant_propensity,
        }
    };
    Dataset::new(subjects, propensity, schema.horizon)
}

/// Writes the [`CsvSchema::standard`] layout, plus a `propensity` column when
/// propensities are per subject. Floats use the shortest exact representation.
pub fn write_csv<W: Write>(data: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let p = data.dim();
    let observed = matches!(data.propensity, Propensity::Observed(_));
    let mut header: Vec<String> = (1..=p).map(|k| format!("x{k}")).collect();
    header.extend(["arm", "time", "event"].map(String::from));
    if observed {
        header.push("propensity".into());
    }
    w.write_record(&header)?;
    for (i, s) in data.subjects.iter().enumerate() {
        let mut row: Vec<String> = s.x.iter().map(|v| v.to_string()).collect();
        row.push(if s.arm == Arm::Treated { "1" } else { "-1" }.into());
        row.push(s.time.to_string());
        row.push(if s.event { "1" } else { "0" }.into());
        if let Propensity::Observed(pv) = &data.propensity {
            row.push(pv[i].to_string());
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// A subject paired with its inverse-probability weight
/// `W_i = Δ_i / (π(A_i|X_i) · max(Ŝ_C(Y_i-|X_i,A_i), floor))`.
#[derive(Clone, Copy, Debug)]
pub struct WeightedSubject<'a> {
    pub subject: &'a Subject,
    pub weight: f64,
}

pub fn attach_weights<'a>(
    data: &'a Dataset,
    s_hat: &CensorSurvival,
    floor: f64,
) -> Vec<WeightedSubject<'a>> {
    data.subjects
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let weight = if s.event {
                let surv = s_hat.survival_left(s.time, &s.x, s.arm).max(floor);
                1.0 / (data.propensity_of(i) * surv)
            } else {
                0.0
            };
            WeightedSubject { subject: s, weight }
        })
        .collect()
}

/// The weights of [`attach_weights`] as a plain vector.
pub fn ipw_weights(data: &Dataset, s_hat: &CensorSurvival, floor: f64) -> Vec<f64> {
    attach_weights(data, s_hat, floor)
        .into_iter()
        .map(|w| w.weight)
        .collect()
}
