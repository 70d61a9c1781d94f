//! Experiment reports and their deterministic serialization.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::capacity::GridMeta;
use crate::config::Format;
use crate::error::Result;

/// One checked claim. `pass` is usually `lhs ≤ rhs + tolerance`.
#[derive(Clone, Debug, Serialize)]
pub struct ReportRow {
    pub claim: String,
    pub instance: String,
    pub lhs: f64,
    pub rhs: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub n: usize,
    pub spacing: f64,
    pub extent: usize,
    pub delta: Option<f64>,
    /// Kept out of report.csv/report.json so that reruns compare equal.
    #[serde(skip)]
    pub wallclock_s: f64,
}

impl ReportRow {
    pub fn le(claim: &str, instance: impl Into<String>, lhs: f64, rhs: f64, tolerance: f64, grid: &GridMeta) -> Self {
        let pass = lhs <= rhs + tolerance;
        Self::with_pass(claim, instance, lhs, rhs, tolerance, pass, grid)
    }

    pub fn with_pass(
        claim: &str,
        instance: impl Into<String>,
        lhs: f64,
        rhs: f64,
        tolerance: f64,
        pass: bool,
        grid: &GridMeta,
    ) -> Self {
        ReportRow {
            claim: claim.into(),
            instance: instance.into(),
            lhs,
            rhs,
            tolerance,
            pass,
            n: grid.n,
            spacing: grid.spacing,
            extent: grid.extent,
            delta: grid.delta,
            wallclock_s: 0.0,
        }
    }

    pub fn timed(mut self, seconds: f64) -> Self {
        self.wallclock_s = seconds;
        self
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FittedConstant {
    pub value: f64,
    /// Spread of the fitted quantity over the fit sample, or the RMS of a
    /// regression, depending on the constant.
    pub fit_residual: f64,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Table { columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentReport {
    pub name: String,
    pub seed: u64,
    pub rows: Vec<ReportRow>,
    pub constants: BTreeMap<String, FittedConstant>,
    pub tables: BTreeMap<String, Table>,
    #[serde(skip)]
    pub figures: Vec<(String, String)>,
    #[serde(skip)]
    pub fields: Vec<(String, crate::field::GridField)>,
}

impl ExperimentReport {
    pub fn new(name: &str, seed: u64) -> Self {
        ExperimentReport {
            name: name.into(),
            seed,
            rows: Vec::new(),
            constants: BTreeMap::new(),
            tables: BTreeMap::new(),
            figures: Vec::new(),
            fields: Vec::new(),
        }
    }

    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| !r.pass).count()
    }

    pub fn constant(&mut self, name: &str, value: f64, fit_residual: f64) {
        self.constants.insert(name.into(), FittedConstant { value, fit_residual });
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).map_err(|e| std::io::Error::other(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Writes `report.csv`, `report.json`, `figures/*.svg`, `fields/*.bin`
    /// and `timing.csv` under `dir`; returns the files written.
    pub fn write(&self, dir: &Path, formats: &[Format]) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut out = Vec::new();
        if formats.contains(&Format::Csv) {
            let p = dir.join("report.csv");
            std::fs::write(&p, self.to_csv()?)?;
            out.push(p);
        }
        if formats.contains(&Format::Json) {
            let p = dir.join("report.json");
            std::fs::write(&p, self.to_json()?)?;
            out.push(p);
        }
        if formats.contains(&Format::Svg) && !self.figures.is_empty() {
            let fig = dir.join("figures");
            std::fs::create_dir_all(&fig)?;
            for (name, svg) in &self.figures {
                let p = fig.join(format!("{name}.svg"));
                std::fs::write(&p, svg)?;
                out.push(p);
            }
        }
        if !self.fields.is_empty() {
            let fd = dir.join("fields");
            std::fs::create_dir_all(&fd)?;
            for (name, f) in &self.fields {
                let p = fd.join(format!("{name}.bin"));
                f.write_binary(&p)?;
                out.push(p);
            }
        }
        let mut t = String::from("claim,instance,wallclock_s\n");
        for r in &self.rows {
            t.push_str(&format!("{},{},{:.3}\n", r.claim, r.instance.replace(',', ";"), r.wallclock_s));
        }
        let p = dir.join("timing.csv");
        std::fs::write(&p, t)?;
        out.push(p);
        Ok(out)
    }
}
