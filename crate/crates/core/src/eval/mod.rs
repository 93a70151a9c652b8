//! Evaluation harness: unbiased test accuracy, best/last extraction, and
//! cross-seed aggregation into paper-style tables.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datasets::BiasedDataset;
use crate::debias::DebiasModel;
use crate::scalar::Scalar;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("empty test set")]
    EmptyTestSet,
    #[error("run metrics invalid: {0}")]
    BadMetrics(String),
    #[error("mixed provenance in cell {0}: runs disagree on config hash")]
    MixedConfig(String),
    #[error("unknown report format: {0}")]
    UnknownFormat(String),
    #[error("io error: {0}")]
    Io(String),
}

/// One per-epoch metrics record (the NDJSON line schema).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub ce_orig: f64,
    pub ce_trans: f64,
    pub cl: f64,
    pub test_acc: f64,
    pub lr: f64,
    pub wall_s: f64,
}

/// Full trajectory of one training run plus its provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMetrics {
    pub dataset: String,
    pub ratio: f64,
    pub method: String,
    pub seed: u64,
    /// Hash of the run configuration with the seed zeroed, chained with
    /// upstream artifact hashes; identical across seeds of one cell.
    pub config_hash: String,
    pub records: Vec<EpochRecord>,
}

impl RunMetrics {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.records.is_empty() {
            return Err(EvalError::BadMetrics("no epoch records".into()));
        }
        for (i, r) in self.records.iter().enumerate() {
            if r.epoch != i + 1 {
                return Err(EvalError::BadMetrics(format!(
                    "epochs must be contiguous from 1; record {i} has epoch {}",
                    r.epoch
                )));
            }
            if !(0.0..=1.0).contains(&r.test_acc) {
                return Err(EvalError::BadMetrics(format!(
                    "test_acc {} outside [0,1] at epoch {}",
                    r.test_acc, r.epoch
                )));
            }
        }
        Ok(())
    }

    /// Maximum test accuracy over epochs (ties go to the earliest epoch).
    pub fn best_acc(&self) -> f64 {
        self.records.iter().map(|r| r.test_acc).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn last_acc(&self) -> f64 {
        self.records.last().map(|r| r.test_acc).unwrap_or(0.0)
    }
}

/// Exact top-1 accuracy of a model on an unbiased test split.
pub fn unbiased_accuracy<S: Scalar>(
    model: &mut DebiasModel<S>,
    test: &BiasedDataset,
) -> Result<f64, EvalError> {
    if test.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    let mut correct = 0usize;
    let chunk = 512;
    for start in (0..test.len()).step_by(chunk) {
        let end = (start + chunk).min(test.len());
        let indices: Vec<usize> = (start..end).collect();
        let (x01, labels) = crate::debias::train::batch01::<S>(test, &indices);
        let xm = x01.mapv(|v| v + v - S::one());
        let logits = model.logits(&xm, false);
        for (row, &label) in labels.iter().enumerate() {
            let mut best = 0usize;
            let mut bestv = logits[[row, 0]];
            for j in 1..test.num_classes() {
                if logits[[row, j]] > bestv {
                    bestv = logits[[row, j]];
                    best = j;
                }
            }
            if best == label {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / test.len() as f64)
}

/// One (dataset, ratio, method) cell of the aggregate table. Accuracy
/// values are percentages rounded to two decimals, mirroring the usual
/// table formatting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub dataset: String,
    pub ratio: f64,
    pub method: String,
    pub best_mean: f64,
    pub best_std: f64,
    pub last_mean: f64,
    pub last_std: f64,
    pub n_runs: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AggregateReport {
    pub cells: Vec<ReportCell>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

fn pct(v: f64) -> f64 {
    (v * 100.0 * 100.0).round() / 100.0
}

fn method_rank(m: &str) -> usize {
    match m {
        "vanilla" => 0,
        "cdvg-no-g" => 1,
        "cdvg-no-cl" => 2,
        "cdvg" => 3,
        _ => 4,
    }
}

/// Aggregate per-seed runs into mean ± sample std of best and last-epoch
/// accuracy per (dataset, ratio, method) cell.
pub fn aggregate_runs(runs: &[RunMetrics]) -> Result<AggregateReport, EvalError> {
    let mut groups: BTreeMap<(String, String, String), Vec<&RunMetrics>> = BTreeMap::new();
    for run in runs {
        run.validate()?;
        let key = (run.dataset.clone(), format!("{:.6}", run.ratio), run.method.clone());
        groups.entry(key).or_default().push(run);
    }
    let mut cells = Vec::new();
    for ((dataset, _, method), group) in &groups {
        let hash0 = &group[0].config_hash;
        if group.iter().any(|r| &r.config_hash != hash0) {
            return Err(EvalError::MixedConfig(format!("{dataset}/{method}")));
        }
        let best: Vec<f64> = group.iter().map(|r| r.best_acc()).collect();
        let last: Vec<f64> = group.iter().map(|r| r.last_acc()).collect();
        let (bm, bs) = mean_std(&best);
        let (lm, ls) = mean_std(&last);
        cells.push(ReportCell {
            dataset: dataset.clone(),
            ratio: group[0].ratio,
            method: method.clone(),
            best_mean: pct(bm),
            best_std: pct(bs),
            last_mean: pct(lm),
            last_std: pct(ls),
            n_runs: group.len(),
        });
    }
    cells.sort_by(|a, b| {
        (a.dataset.as_str(), a.ratio, method_rank(&a.method))
            .partial_cmp(&(b.dataset.as_str(), b.ratio, method_rank(&b.method)))
            .unwrap()
    });
    Ok(AggregateReport { cells })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Text,
}

impl std::str::FromStr for ReportFormat {
    type Err = EvalError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "text" | "txt" => Ok(ReportFormat::Text),
            other => Err(EvalError::UnknownFormat(other.to_string())),
        }
    }
}

/// Render the report to CSV or a fixed-width text table.
pub fn render_report(report: &AggregateReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => {
            let mut out =
                String::from("dataset,ratio,method,best_mean,best_std,last_mean,last_std,n_runs\n");
            for c in &report.cells {
                out.push_str(&format!(
                    "{},{},{},{:.2},{:.2},{:.2},{:.2},{}\n",
                    c.dataset, c.ratio, c.method, c.best_mean, c.best_std, c.last_mean, c.last_std, c.n_runs
                ));
            }
            out
        }
        ReportFormat::Text => {
            let mut out = format!(
                "{:<20} {:>7} {:<12} {:>16} {:>16} {:>6}\n",
                "dataset", "ratio", "method", "best", "last", "runs"
            );
            out.push_str(&"-".repeat(82));
            out.push('\n');
            for c in &report.cells {
                out.push_str(&format!(
                    "{:<20} {:>7} {:<12} {:>8.2} ± {:>5.2} {:>8.2} ± {:>5.2} {:>6}\n",
                    c.dataset, c.ratio, c.method, c.best_mean, c.best_std, c.last_mean, c.last_std, c.n_runs
                ));
            }
            out
        }
    }
}

/// Write the report; returns the written path.
pub fn emit_report(
    report: &AggregateReport,
    format: ReportFormat,
    path: &Path,
) -> Result<(), EvalError> {
    std::fs::write(path, render_report(report, format)).map_err(|e| EvalError::Io(e.to_string()))
}

/// Parse a CSV report back (inverse of [`render_report`] for CSV).
pub fn read_report_csv(text: &str) -> Result<AggregateReport, EvalError> {
    let mut cells = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if ln == 0 || line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(EvalError::BadMetrics(format!("csv line {ln} has {} fields", f.len())));
        }
        let parse = |s: &str| s.parse::<f64>().map_err(|e| EvalError::BadMetrics(e.to_string()));
        cells.push(ReportCell {
            dataset: f[0].to_string(),
            ratio: parse(f[1])?,
            method: f[2].to_string(),
            best_mean: parse(f[3])?,
            best_std: parse(f[4])?,
            last_mean: parse(f[5])?,
            last_std: parse(f[6])?,
            n_runs: f[7].parse().map_err(|e: std::num::ParseIntError| EvalError::BadMetrics(e.to_string()))?,
        });
    }
    Ok(AggregateReport { cells })
}

/// Read one run directory (`run.json` + `metrics.ndjson`).
pub fn read_run(dir: &Path) -> Result<RunMetrics, EvalError> {
    let meta_text = std::fs::read_to_string(dir.join("run.json"))
        .map_err(|e| EvalError::Io(format!("{}: {e}", dir.display())))?;
    let meta: serde_json::Value =
        serde_json::from_str(&meta_text).map_err(|e| EvalError::BadMetrics(e.to_string()))?;
    let metrics_text = std::fs::read_to_string(dir.join("metrics.ndjson"))
        .map_err(|e| EvalError::Io(format!("{}: {e}", dir.display())))?;
    let mut records = Vec::new();
    for line in metrics_text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        records.push(
            serde_json::from_str::<EpochRecord>(line)
                .map_err(|e| EvalError::BadMetrics(e.to_string()))?,
        );
    }
    let run = RunMetrics {
        dataset: meta["dataset"].as_str().unwrap_or_default().to_string(),
        ratio: meta["ratio"].as_f64().unwrap_or_default(),
        method: meta["method"].as_str().unwrap_or_default().to_string(),
        seed: meta["seed"].as_u64().unwrap_or_default(),
        config_hash: meta["config_hash"].as_str().unwrap_or_default().to_string(),
        records,
    };
    run.validate()?;
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(method: &str, seed: u64, accs: &[f64]) -> RunMetrics {
        RunMetrics {
            dataset: "colored_mnist".into(),
            ratio: 0.005,
            method: method.into(),
            seed,
            config_hash: "h0".into(),
            records: accs
                .iter()
                .enumerate()
                .map(|(i, &a)| EpochRecord {
                    epoch: i + 1,
                    ce_orig: 1.0,
                    ce_trans: 1.0,
                    cl: 0.0,
                    test_acc: a,
                    lr: 1e-3,
                    wall_s: 0.1,
                })
                .collect(),
        }
    }

    #[test]
    fn single_run_has_zero_std() {
        let rep = aggregate_runs(&[run("cdvg", 1, &[0.5, 0.7, 0.6])]).unwrap();
        let c = &rep.cells[0];
        assert_eq!(c.n_runs, 1);
        assert_eq!(c.best_std, 0.0);
        assert_eq!(c.last_std, 0.0);
        assert_eq!(c.best_mean, 70.0);
        assert_eq!(c.last_mean, 60.0);
    }

    #[test]
    fn known_mean_and_sample_std() {
        let rep = aggregate_runs(&[
            run("vanilla", 1, &[0.10]),
            run("vanilla", 2, &[0.20]),
            run("vanilla", 3, &[0.30]),
        ])
        .unwrap();
        let c = &rep.cells[0];
        assert!((c.last_mean - 20.0).abs() < 1e-9);
        assert!((c.last_std - 10.0).abs() < 1e-9);
        assert!((c.best_mean - 20.0).abs() < 1e-9);
    }

    #[test]
    fn monotone_run_has_best_equal_last() {
        let r = run("cdvg", 1, &[0.1, 0.2, 0.3, 0.4]);
        assert_eq!(r.best_acc(), r.last_acc());
    }

    #[test]
    fn aggregation_is_permutation_invariant() {
        let a = run("cdvg", 1, &[0.5, 0.7]);
        let b = run("cdvg", 2, &[0.6, 0.65]);
        let r1 = aggregate_runs(&[a.clone(), b.clone()]).unwrap();
        let r2 = aggregate_runs(&[b, a]).unwrap();
        assert_eq!(r1, r2);
    }

    #[test]
    fn mixed_config_hashes_are_rejected() {
        let a = run("cdvg", 1, &[0.5]);
        let mut b = run("cdvg", 2, &[0.6]);
        b.config_hash = "other".into();
        assert!(matches!(aggregate_runs(&[a, b]), Err(EvalError::MixedConfig(_))));
    }

    #[test]
    fn non_contiguous_epochs_are_rejected() {
        let mut r = run("cdvg", 1, &[0.5, 0.6]);
        r.records[1].epoch = 5;
        assert!(matches!(aggregate_runs(&[r]), Err(EvalError::BadMetrics(_))));
    }

    #[test]
    fn csv_round_trips_to_equal_report() {
        let rep = aggregate_runs(&[
            run("vanilla", 1, &[0.1234, 0.2345]),
            run("vanilla", 2, &[0.3456, 0.1]),
            run("cdvg", 1, &[0.9, 0.95]),
        ])
        .unwrap();
        let csv = render_report(&rep, ReportFormat::Csv);
        let back = read_report_csv(&csv).unwrap();
        assert_eq!(rep, back);
    }

    #[test]
    fn empty_report_renders_header_only() {
        let csv = render_report(&AggregateReport::default(), ReportFormat::Csv);
        assert_eq!(csv.lines().count(), 1);
        assert!(csv.starts_with("dataset,ratio,method"));
    }

    #[test]
    fn methods_are_ordered_vanilla_to_cdvg() {
        let rep = aggregate_runs(&[
            run("cdvg", 1, &[0.9]),
            run("vanilla", 1, &[0.1]),
            run("cdvg-no-cl", 1, &[0.5]),
            run("cdvg-no-g", 1, &[0.4]),
        ])
        .unwrap();
        let methods: Vec<&str> = rep.cells.iter().map(|c| c.method.as_str()).collect();
        assert_eq!(methods, vec!["vanilla", "cdvg-no-g", "cdvg-no-cl", "cdvg"]);
    }
}
