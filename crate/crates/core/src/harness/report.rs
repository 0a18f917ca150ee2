use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::RNG_ALGORITHM;

pub const REPORT_FORMAT_VERSION: u32 = 1;

/// Run conditions recorded beside every report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvStamp {
    pub dtype: String,
    pub threads: usize,
    pub seed: u64,
    pub rng: String,
    pub optimizer: String,
}

impl EnvStamp {
    pub fn new(dtype: &str, seed: u64, optimizer: &str) -> Self {
        Self {
            dtype: dtype.into(),
            threads: rayon::current_num_threads(),
            seed,
            rng: RNG_ALGORITHM.into(),
            optimizer: optimizer.into(),
        }
    }
}

/// One table of per-step (or per-case) metrics plus named final metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format_version: u32,
    pub command: String,
    pub environment: EnvStamp,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// Labels for rows when the table is keyed by name rather than by a number.
    pub row_labels: Vec<String>,
    pub summary: Vec<(String, f64)>,
    pub notes: Vec<String>,
}

impl RunReport {
    pub fn new(command: &str, environment: EnvStamp, columns: &[&str]) -> Self {
        Self {
            format_version: REPORT_FORMAT_VERSION,
            command: command.into(),
            environment,
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            row_labels: Vec::new(),
            summary: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(Error::Dimension(format!("row of {} values for {} columns", row.len(), self.columns.len())));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn push_labeled(&mut self, label: &str, row: Vec<f64>) -> Result<()> {
        self.push_row(row)?;
        self.row_labels.push(label.into());
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: f64) {
        match self.summary.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => self.summary.push((key.into(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.summary.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    /// Every emitted number must be finite.
    pub fn validate(&self) -> Result<()> {
        for (i, row) in self.rows.iter().enumerate() {
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("{} row {i}, column {}", self.command, self.columns[j])));
            }
        }
        if let Some((k, _)) = self.summary.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{} summary {k}", self.command)));
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let labeled = !self.row_labels.is_empty();
        let mut out = String::new();
        if labeled {
            out.push_str("name,");
        }
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for (i, row) in self.rows.iter().enumerate() {
            if labeled {
                let _ = write!(out, "{},", self.row_labels[i]);
            }
            let cells: Vec<String> = row.iter().map(|v| format_number(*v)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    /// `key,value` lines: environment stamp, then final metrics.
    pub fn summary_csv(&self) -> String {
        let e = &self.environment;
        let mut out = String::from("key,value\n");
        let _ = writeln!(out, "format_version,{}", self.format_version);
        let _ = writeln!(out, "command,{}", self.command);
        let _ = writeln!(out, "dtype,{}", e.dtype);
        let _ = writeln!(out, "threads,{}", e.threads);
        let _ = writeln!(out, "seed,{}", e.seed);
        let _ = writeln!(out, "rng,{}", e.rng.replace(',', ";"));
        let _ = writeln!(out, "optimizer,{}", e.optimizer.replace(',', ";"));
        for (k, v) in &self.summary {
            let _ = writeln!(out, "{k},{}", format_number(*v));
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    /// Writes `<command>.csv`, `<command>.summary.csv` and, when asked, `<command>.json` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>, json: bool) -> Result<Vec<PathBuf>> {
        self.validate()?;
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let mut put = |name: String, body: String| -> Result<()> {
            let p = dir.join(name);
            fs::write(&p, body)?;
            written.push(p);
            Ok(())
        };
        put(format!("{}.csv", self.command), self.to_csv())?;
        put(format!("{}.summary.csv", self.command), self.summary_csv())?;
        if json {
            put(format!("{}.json", self.command), self.to_json()?)?;
        }
        Ok(written)
    }
}

/// Shortest text that reads back to the same `f64`.
pub fn format_number(v: f64) -> String {
    format!("{v:?}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report() -> RunReport {
        let mut r = RunReport::new("demo", EnvStamp::new("f64", 3, "gd"), &["step", "loss"]);
        r.push_row(vec![0.0, 1.5]).unwrap();
        r.push_row(vec![1.0, 0.1]).unwrap();
        r.set("final_loss", 0.1);
        r
    }

    #[test]
    fn csv_layout() {
        let csv = report().to_csv();
        assert_eq!(csv, "step,loss\n0.0,1.5\n1.0,0.1\n");
        let s = report().summary_csv();
        assert!(s.starts_with("key,value\nformat_version,1\ncommand,demo\n"));
        assert!(s.ends_with("final_loss,0.1\n"));
    }

    #[test]
    fn numbers_read_back_exactly() {
        for v in [0.1, 1.0 / 3.0, 1e-300, -2.5e17, 0.9000000000000001] {
            assert_eq!(format_number(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn non_finite_values_are_refused() {
        let mut r = report();
        r.push_row(vec![2.0, f64::NAN]).unwrap();
        assert!(matches!(r.validate(), Err(Error::NonFinite(_))));
        let mut r = report();
        r.set("x", f64::INFINITY);
        let dir = tempfile::tempdir().unwrap();
        assert!(r.write(dir.path(), false).is_err());
    }

    #[test]
    fn json_mirror_carries_the_same_fields() {
        let mut r = report();
        r.push_row(vec![0.9066893041136841, 115.15266149964661]).unwrap();
        let back: RunReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn row_width_is_checked() {
        assert!(report().push_row(vec![1.0]).is_err());
    }
}
