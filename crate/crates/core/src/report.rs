//! Report files: per-run JSON, the grid index, and the summary tables built
//! from a directory of reports.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::experiment::{GridJob, REALIZED_EPSILON};
use crate::metrics::last_k_mean;
use crate::trainers::RunReport;

/// Epochs averaged for the label diagnostics.
pub const LAST_K: usize = 10;

pub fn save_report(report: &RunReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(BufWriter::new(file), report)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))
}

pub fn load_report(path: impl AsRef<Path>) -> Result<RunReport> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(None, None, format!("{}: {e}", path.display())))
}

/// Per-epoch diagnostics next to a report: `x.json` gets `x.diagnostics.csv`.
pub fn save_diagnostics(report: &RunReport, json_path: &Path) -> Result<PathBuf> {
    let path = json_path.with_extension("diagnostics.csv");
    let mut out = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
    report.write_diagnostics_csv(&mut out).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndexRow {
    pub run: usize,
    pub kind: String,
    pub alpha: f64,
    pub theta: f64,
    pub q: usize,
    /// Realized noise level of the training split when the run succeeded.
    pub epsilon: Option<f64>,
    pub seed: u64,
    pub test_map: Option<f64>,
    pub status: &'static str,
    pub error: String,
    pub report: String,
}

impl IndexRow {
    pub fn new(run: usize, job: &GridJob, result: &Result<RunReport>, report: Option<&Path>) -> Self {
        let cfg = &job.config;
        let (test_map, status, error) = match result {
            Ok(r) => (Some(r.final_stats.test_map), "ok", String::new()),
            Err(e) => (None, "error", e.to_string()),
        };
        Self {
            run,
            kind: cfg.trainer.to_string(),
            alpha: cfg.train.alpha,
            theta: cfg.train.theta,
            q: cfg.train.q,
            epsilon: match result {
                Ok(r) => r.config.get(REALIZED_EPSILON).and_then(|v| v.parse().ok()),
                Err(_) => cfg.noise.epsilon.or(cfg.train.epsilon),
            },
            seed: job.seed,
            test_map,
            status,
            error,
            report: report
                .and_then(|p| p.file_name())
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
        }
    }
}

/// Index CSV flushed after every row.
pub struct IndexWriter {
    path: PathBuf,
    out: csv::Writer<File>,
}

impl IndexWriter {
    pub fn create(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            out: csv::Writer::from_writer(file),
            path,
        })
    }

    pub fn append(&mut self, row: &IndexRow) -> Result<()> {
        let io = |e: csv::Error| Error::io(&self.path, std::io::Error::other(e));
        self.out.serialize(row).map_err(io)?;
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Reports found in a directory plus the files that could not be read.
#[derive(Debug, Default)]
pub struct ReportSet {
    pub reports: Vec<(PathBuf, RunReport)>,
    pub skipped: Vec<(PathBuf, String)>,
}

/// Reads every `*.json` in `dir` (not recursive), sorted by file name.
pub fn load_dir(dir: impl AsRef<Path>) -> Result<ReportSet> {
    let dir = dir.as_ref();
    let mut paths = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "json") {
            paths.push(path);
        }
    }
    paths.sort();
    let mut set = ReportSet::default();
    for path in paths {
        match load_report(&path) {
            Ok(r) => set.reports.push((path, r)),
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                set.skipped.push((path, e.to_string()));
            }
        }
    }
    Ok(set)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub kind: String,
    pub alpha: String,
    pub noise: String,
    pub epsilon: String,
    pub runs: usize,
    pub seeds: String,
    pub test_map_mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub test_map_std: f64,
    pub label_precision_last10: Option<f64>,
    pub label_recall_last10: Option<f64>,
    /// Every config entry, `key=value` joined by `;`.
    pub config: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlphaRow {
    pub kind: String,
    pub noise: String,
    pub alpha: f64,
    pub runs: usize,
    pub label_precision_last10: f64,
    pub label_recall_last10: f64,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Last-k means of label precision and recall, if every epoch has them.
pub fn label_last_k(report: &RunReport, k: usize) -> Option<(f64, f64)> {
    let precision: Option<Vec<f64>> = report.epochs.iter().map(|e| e.label_precision).collect();
    let recall: Option<Vec<f64>> = report.epochs.iter().map(|e| e.label_recall).collect();
    let (p, r) = (precision?, recall?);
    let k = k.min(p.len());
    Some((last_k_mean(&p, k).ok()?, last_k_mean(&r, k).ok()?))
}

fn get(report: &RunReport, key: &str) -> String {
    report.config.get(key).cloned().unwrap_or_default()
}

/// One row per distinct config echo, aggregated over seeds.
pub fn summarize(reports: &[RunReport]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<&BTreeMap<String, String>, Vec<&RunReport>> = BTreeMap::new();
    for r in reports {
        groups.entry(&r.config).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(config, runs)| {
            let first = runs[0];
            let maps: Vec<f64> = runs.iter().map(|r| r.final_stats.test_map).collect();
            let labels: Option<Vec<(f64, f64)>> = runs.iter().map(|r| label_last_k(r, LAST_K)).collect();
            let (lp, lr) = match labels {
                Some(v) if !v.is_empty() => {
                    let (p, r): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
                    (Some(mean(&p)), Some(mean(&r)))
                }
                _ => (None, None),
            };
            SummaryRow {
                kind: first.kind.to_string(),
                alpha: get(first, "selection.alpha"),
                noise: get(first, "noise.strategy"),
                epsilon: get(first, REALIZED_EPSILON),
                runs: runs.len(),
                seeds: runs.iter().map(|r| r.seed.to_string()).collect::<Vec<_>>().join(" "),
                test_map_mean: mean(&maps),
                test_map_std: sample_std(&maps),
                label_precision_last10: lp,
                label_recall_last10: lr,
                config: config.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";"),
            }
        })
        .collect()
}

/// Last-10 label precision/recall per (kind, noise, α), averaged over runs.
/// Runs without a ledger are left out.
pub fn alpha_sweep(reports: &[RunReport]) -> Vec<AlphaRow> {
    let mut groups: BTreeMap<(String, String, String), Vec<(f64, (f64, f64))>> = BTreeMap::new();
    for r in reports {
        let Some(pr) = label_last_k(r, LAST_K) else { continue };
        let Ok(alpha) = get(r, "selection.alpha").parse::<f64>() else { continue };
        let key = (r.kind.to_string(), get(r, "noise.strategy"), get(r, "selection.alpha"));
        groups.entry(key).or_default().push((alpha, pr));
    }
    let mut rows: Vec<AlphaRow> = groups
        .into_iter()
        .map(|((kind, noise, _), runs)| {
            let (p, r): (Vec<f64>, Vec<f64>) = runs.iter().map(|(_, pr)| *pr).unzip();
            AlphaRow {
                kind,
                noise,
                alpha: runs[0].0,
                runs: runs.len(),
                label_precision_last10: mean(&p),
                label_recall_last10: mean(&r),
            }
        })
        .collect();
    rows.sort_by(|a, b| (&a.kind, &a.noise).cmp(&(&b.kind, &b.noise)).then(a.alpha.total_cmp(&b.alpha)));
    rows
}

pub fn write_csv<T: Serialize>(rows: &[T], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let mut out = csv::Writer::from_path(path).map_err(io)?;
    for row in rows {
        out.serialize(row).map_err(io)?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainers::{EpochStats, FinalStats, TrainerKind};

    fn report(alpha: f64, seed: u64, test_map: f64, precision: &[f64]) -> RunReport {
        let mut config = BTreeMap::new();
        config.insert("selection.alpha".to_string(), alpha.to_string());
        config.insert("noise.strategy".to_string(), "uniform".to_string());
        RunReport {
            config,
            kind: TrainerKind::COTEACHING,
            seed,
            epochs: precision
                .iter()
                .enumerate()
                .map(|(epoch, &p)| EpochStats {
                    epoch,
                    train_loss: vec![0.1, 0.1],
                    val_map: vec![0.5, 0.5],
                    label_precision: Some(p),
                    label_recall: Some(1.0 - p),
                    kept_fraction: 1.0,
                    refurbished_count: 0,
                    tau: vec![0.0],
                })
                .collect(),
            final_stats: FinalStats {
                test_map,
                selected_network: 0,
                test_map_per_network: vec![test_map, test_map],
                val_map_per_network: vec![0.5, 0.5],
                tau_final: vec![0.0],
            },
            wall_clock_secs: 1.0,
        }
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let r = report(1.0, 3, 0.7, &[0.5, 0.6]);
        let path = dir.path().join("r.json");
        save_report(&r, &path).unwrap();
        assert_eq!(load_report(&path).unwrap(), r);
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"final\""));
    }

    #[test]
    fn seeds_aggregate_into_one_row() {
        let rs = [report(1.0, 0, 0.6, &[0.5]), report(1.0, 1, 0.7, &[0.5]), report(1.0, 2, 0.8, &[0.5])];
        let rows = summarize(&rs);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].runs, 3);
        assert_eq!(rows[0].seeds, "0 1 2");
        approx::assert_abs_diff_eq!(rows[0].test_map_mean, 0.7, epsilon = 1e-12);
        approx::assert_abs_diff_eq!(rows[0].test_map_std, 0.1, epsilon = 1e-12);
    }

    #[test]
    fn alpha_rows_recompute_from_series() {
        let series: Vec<f64> = (0..15).map(|i| i as f64 / 20.0).collect();
        let rs = [report(0.5, 0, 0.6, &series), report(1.5, 0, 0.6, &[0.9; 12]), report(0.25, 0, 0.6, &[0.2; 3])];
        let rows = alpha_sweep(&rs);
        assert_eq!(rows.iter().map(|r| r.alpha).collect::<Vec<_>>(), vec![0.25, 0.5, 1.5]);
        let expected = series[5..].iter().sum::<f64>() / 10.0;
        approx::assert_abs_diff_eq!(rows[1].label_precision_last10, expected, epsilon = 1e-12);
        approx::assert_abs_diff_eq!(rows[1].label_recall_last10, 1.0 - expected, epsilon = 1e-12);
        // fewer than ten epochs: all of them
        approx::assert_abs_diff_eq!(rows[0].label_precision_last10, 0.2, epsilon = 1e-12);
    }

    #[test]
    fn corrupt_files_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        save_report(&report(1.0, 0, 0.6, &[0.5]), dir.path().join("a.json")).unwrap();
        save_report(&report(1.0, 1, 0.8, &[0.5]), dir.path().join("b.json")).unwrap();
        fs::write(dir.path().join("c.json"), "{ not json").unwrap();
        fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let set = load_dir(dir.path()).unwrap();
        assert_eq!(set.reports.len(), 2);
        assert_eq!(set.skipped.len(), 1);
        assert!(set.skipped[0].0.ends_with("c.json"));
    }
}
