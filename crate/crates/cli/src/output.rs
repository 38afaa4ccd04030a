//! Artifact writing. Report numbers carry 12 significant digits.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::CliError;

/// `x` rounded to 12 significant digits.
pub fn round12(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.11e}").parse().expect("formatted float parses")
}

/// Shortest text of `x` after rounding to 12 significant digits.
pub fn num(x: f64) -> String {
    round12(x).to_string()
}

fn round_value(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(x) = n.as_f64() {
                *v = serde_json::Number::from_f64(round12(x)).map_or(Value::Null, Value::Number);
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_value),
        Value::Object(map) => map.values_mut().for_each(round_value),
        _ => {}
    }
}

pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root)
            .map_err(|e| CliError::Data(format!("cannot create {}: {e}", root.display())))?;
        Ok(OutDir {
            root: root.to_path_buf(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        fs::write(&path, contents)
            .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }

    /// Pretty JSON with every float rounded to 12 significant digits.
    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let mut v = serde_json::to_value(value).map_err(|e| CliError::Data(e.to_string()))?;
        round_value(&mut v);
        let mut text =
            serde_json::to_string_pretty(&v).map_err(|e| CliError::Data(e.to_string()))?;
        text.push('\n');
        self.write(name, text)
    }

    /// A CSV file from a header and preformatted rows.
    pub fn write_table(
        &self,
        name: &str,
        header: &[&str],
        rows: &[Vec<String>],
    ) -> Result<PathBuf, CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| CliError::Data(e.to_string());
        w.write_record(header).map_err(err)?;
        for r in rows {
            w.write_record(r).map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
        self.write(name, bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_digits() {
        assert_eq!(num(1.0 / 3.0), "0.333333333333");
        assert_eq!(num(2.0 / 3.0 * 1e-7), "0.0000000666666666667");
        assert_eq!(num(1234567.89012345), "1234567.89012");
        assert_eq!(num(0.25), "0.25");
        assert_eq!(num(0.0), "0");
    }

    #[test]
    fn json_numbers_are_rounded() {
        let mut v = serde_json::json!({"a": [1.0 / 3.0, 2], "b": {"c": 0.1}});
        round_value(&mut v);
        assert_eq!(v["a"][0].as_f64(), Some(0.333333333333));
        assert_eq!(v["a"][1].as_u64(), Some(2));
        assert_eq!(v["b"]["c"].as_f64(), Some(0.1));
    }
}
