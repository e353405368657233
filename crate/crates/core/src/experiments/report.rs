//! Report and artifact plumbing: per-criterion verdicts, JSON reports,
//! CSV tables and the run manifest.
//!
//! Reports contain only deterministic content (verdicts, measured values,
//! tolerances, config echo, seed), so re-running with the same seed and
//! worker count reproduces them byte for byte. Wall-clock information
//! lives in the manifest, which is written before any computation starts
//! (interrupted runs still leave a valid manifest) and finalized at the
//! end.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::McEstimate;
use crate::tail::TailCurve;

use super::config::ExperimentConfig;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("artifact io: {0}")]
    Io(String),
}

fn io_err<E: std::fmt::Display>(path: &Path) -> impl FnOnce(E) -> ReportError + '_ {
    move |e| ReportError::Io(format!("{}: {e}", path.display()))
}

/// One named check with its verdict.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CriterionResult {
    pub name: String,
    pub pass: bool,
    pub measured: f64,
    /// Human-readable target, e.g. "-2.75 +- 0.25".
    pub target: String,
    pub details: String,
}

impl CriterionResult {
    pub fn new(
        name: &str,
        pass: bool,
        measured: f64,
        target: impl Into<String>,
        details: impl Into<String>,
    ) -> Self {
        Self {
            name: name.to_string(),
            pass,
            measured,
            target: target.into(),
            details: details.into(),
        }
    }

    pub fn line(&self) -> String {
        format!(
            "[{}] {}: measured {:.6} target {} {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.target,
            self.details
        )
    }
}

/// Per-experiment report: every verdict traces to a named criterion and
/// the full resolved config rides along for reproduction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub experiment: String,
    pub seed: u64,
    pub criteria: Vec<CriterionResult>,
    /// Free-form numeric results backing the verdicts.
    pub values: serde_json::Value,
    pub config: ExperimentConfig,
}

impl ComparisonReport {
    pub fn all_pass(&self) -> bool {
        self.criteria.iter().all(|c| c.pass)
    }

    pub fn print_lines(&self) {
        for c in &self.criteria {
            println!("{}", c.line());
        }
    }
}

/// Run manifest: config hash, seed, versions and wall time. Written up
/// front with `wall_time_ms: null`, rewritten complete at the end.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub package_version: String,
    pub experiment: String,
    pub config_hash_hex: String,
    pub seed: u64,
    pub workers: usize,
    pub wall_time_ms: Option<u128>,
    pub outcome: Option<String>,
}

impl Manifest {
    pub fn begin(experiment: &str, cfg: &ExperimentConfig, workers: usize) -> Self {
        Self {
            schema_version: 1,
            package_version: env!("CARGO_PKG_VERSION").to_string(),
            experiment: experiment.to_string(),
            config_hash_hex: format!("{:016x}", cfg.config_hash()),
            seed: cfg.seed,
            workers,
            wall_time_ms: None,
            outcome: None,
        }
    }
}

pub fn ensure_dir(dir: &Path) -> Result<(), ReportError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ReportError> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(text.as_bytes()).map_err(io_err(path))?;
    f.write_all(b"\n").map_err(io_err(path))?;
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<(), ReportError> {
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(text.as_bytes()).map_err(io_err(path))?;
    Ok(())
}

/// Tail curve CSV: columns n, p_hat, stderr, method, ess.
pub fn tail_curve_csv(curve: &TailCurve) -> String {
    let mut out = String::from("n,p_hat,stderr,method,ess\n");
    for i in 0..curve.grid.len() {
        out.push_str(&format!(
            "{},{},{},{:?},{}\n",
            curve.grid[i],
            curve.estimates[i].value,
            curve.estimates[i].stderr,
            curve.methods[i],
            curve.ess[i]
        ));
    }
    out
}

/// Generic estimate row helper for small CSV tables.
pub fn estimate_csv_row(label: &str, est: &McEstimate) -> String {
    format!("{label},{},{},{}\n", est.value, est.stderr, est.samples)
}

/// Gnuplot-ready two-column data with a comment header.
pub fn plot_data(header: &str, rows: &[(f64, f64)]) -> String {
    let mut out = format!("# {header}\n");
    for (x, y) in rows {
        out.push_str(&format!("{x} {y}\n"));
    }
    out
}

/// Paths for one experiment run under the output root.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub dir: PathBuf,
}

impl RunPaths {
    pub fn new(root: &Path, experiment: &str) -> Result<Self, ReportError> {
        let dir = root.join(experiment);
        ensure_dir(&dir)?;
        Ok(Self { dir })
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write_manifest(&self, manifest: &Manifest) -> Result<(), ReportError> {
        write_json(&self.file("manifest.json"), manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    #[test]
    fn criterion_lines_format() {
        let c = CriterionResult::new("slope", true, -2.71, "-2.75 +- 0.25", "fit of 5 points");
        assert!(c.line().starts_with("[PASS] slope"));
        let c = CriterionResult::new("slope", false, -3.3, "-2.75 +- 0.25", "");
        assert!(c.line().starts_with("[FAIL] slope"));
    }

    #[test]
    fn manifest_roundtrip_and_stages() {
        let cfg = ExperimentConfig::default();
        let mut m = Manifest::begin("tail", &cfg, 4);
        assert!(m.wall_time_ms.is_none());
        let dir = tempfile::tempdir().unwrap();
        let paths = RunPaths::new(dir.path(), "tail").unwrap();
        paths.write_manifest(&m).unwrap();
        // interrupted runs leave valid JSON
        let text = std::fs::read_to_string(paths.file("manifest.json")).unwrap();
        let parsed: Manifest = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed.seed, cfg.seed);
        m.wall_time_ms = Some(123);
        m.outcome = Some("ok".into());
        paths.write_manifest(&m).unwrap();
    }

    #[test]
    fn csv_helpers() {
        let est = McEstimate::new(0.5, 0.01, 100, RngStream::new(1, 2));
        let row = estimate_csv_row("x", &est);
        assert_eq!(row, "x,0.5,0.01,100\n");
    }
}
