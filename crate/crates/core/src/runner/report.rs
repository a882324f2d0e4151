use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::metrics::{is_percentage_metric, MetricReport};
use crate::synth::SynthesisMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    Failed,
}

/// One `(mode, size, seed)` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub mode: SynthesisMode,
    /// Synthetic samples per class used for training.
    pub size: usize,
    pub seed: u64,
    pub status: CellStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Digest of the (text1, text2, label) sequence of the synthetic pool.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_digest: Option<String>,
}

/// Mean and sample standard deviation of one metric over the seeds of a
/// `(mode, size)` group. Left empty when any seed of the group failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mode: SynthesisMode,
    pub size: usize,
    pub metric: String,
    pub n: usize,
    pub failed: usize,
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentManifest {
    pub artifact_version: String,
    pub backend: String,
    pub model_name: String,
    pub task_id: String,
    pub task_digest: String,
    pub config_digest: String,
    pub generation_digest: String,
    pub train_digest: String,
    pub parallel: bool,
    pub workers: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_model: Option<String>,
    /// Excluded from reproducibility comparisons.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// "pipeline" or "scaling".
    pub kind: String,
    pub cells: Vec<Cell>,
    pub aggregates: Vec<Aggregate>,
    pub environment: EnvironmentManifest,
}

impl RunReport {
    pub fn failed_cells(&self) -> usize {
        self.cells.iter().filter(|c| c.status == CellStatus::Failed).count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// JSON with timestamps removed, for reproducibility checks.
    pub fn canonical_json(&self) -> String {
        let mut r = self.clone();
        r.environment.generated_at = None;
        r.to_json()
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Groups cells by `(mode, size)` and summarizes every metric seen in the
/// group. Groups keep first-seen order.
pub fn aggregate(cells: &[Cell]) -> Vec<Aggregate> {
    let mut groups: Vec<((SynthesisMode, usize), Vec<&Cell>)> = Vec::new();
    for c in cells {
        match groups.iter_mut().find(|(k, _)| *k == (c.mode, c.size)) {
            Some((_, v)) => v.push(c),
            None => groups.push(((c.mode, c.size), vec![c])),
        }
    }
    let mut out = Vec::new();
    for ((mode, size), group) in groups {
        let failed = group.iter().filter(|c| c.status == CellStatus::Failed).count();
        let per_cell: Vec<BTreeMap<String, f64>> = group
            .iter()
            .filter_map(|c| c.metrics.as_ref().map(MetricReport::values))
            .collect();
        let names: BTreeSet<&String> = per_cell.iter().flat_map(|m| m.keys()).collect();
        for name in names {
            let values: Vec<f64> = per_cell.iter().filter_map(|m| m.get(name).copied()).collect();
            let complete = failed == 0 && values.len() == group.len();
            let (mean, std) = if complete {
                let (m, s) = mean_std(&values);
                (Some(m), Some(s))
            } else {
                (None, None)
            };
            out.push(Aggregate { mode, size, metric: name.clone(), n: values.len(), failed, mean, std });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Markdown,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(format!("unknown report format {other:?} (json|md|csv)")),
        }
    }
}

pub fn render_report(report: &RunReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => report.to_json(),
        ReportFormat::Markdown => render_markdown(report),
        ReportFormat::Csv => render_csv(report, None),
    }
}

fn show(metric: &str, v: f64) -> f64 {
    if is_percentage_metric(metric) {
        v * 100.0
    } else {
        v
    }
}

/// Grid of `(mode, size)` rows by metric columns, each `mean±std`.
/// Ratio metrics are shown x100.
fn render_markdown(report: &RunReport) -> String {
    let mut rows: Vec<(SynthesisMode, usize)> = Vec::new();
    let mut metrics: BTreeSet<&str> = BTreeSet::new();
    for a in &report.aggregates {
        if !rows.contains(&(a.mode, a.size)) {
            rows.push((a.mode, a.size));
        }
        metrics.insert(&a.metric);
    }
    for c in &report.cells {
        if !rows.contains(&(c.mode, c.size)) {
            rows.push((c.mode, c.size));
        }
    }
    let metrics: Vec<&str> = metrics.into_iter().collect();
    let mut out = String::new();
    let _ = writeln!(out, "# {} report: {}\n", report.kind, report.environment.task_id);
    let _ = write!(out, "| mode | per class |");
    for m in &metrics {
        let _ = write!(out, " {m} |");
    }
    out.push('\n');
    out.push_str("|---|---|");
    for _ in &metrics {
        out.push_str("---|");
    }
    out.push('\n');

    let mut footnotes: Vec<String> = Vec::new();
    for (mode, size) in &rows {
        let _ = write!(out, "| {mode} | {size} |");
        let failures: Vec<&Cell> = report
            .cells
            .iter()
            .filter(|c| c.mode == *mode && c.size == *size && c.status == CellStatus::Failed)
            .collect();
        let mut marker = String::new();
        if !failures.is_empty() {
            footnotes.push(
                failures
                    .iter()
                    .map(|c| format!("seed {}: {}", c.seed, c.error.as_deref().unwrap_or("failed")))
                    .collect::<Vec<_>>()
                    .join("; "),
            );
            marker = format!("[^{}]", footnotes.len());
        }
        for m in &metrics {
            let agg = report.aggregates.iter().find(|a| a.mode == *mode && a.size == *size && a.metric == *m);
            match agg.and_then(|a| a.mean.zip(a.std)) {
                Some((mean, std)) => {
                    let _ = write!(out, " {:.2}±{:.1} |", show(m, mean), show(m, std));
                }
                None => {
                    let _ = write!(out, " —{marker} |");
                }
            }
        }
        if metrics.is_empty() {
            let _ = write!(out, "{marker}");
        }
        out.push('\n');
    }
    if !footnotes.is_empty() {
        out.push('\n');
        for (i, f) in footnotes.iter().enumerate() {
            let _ = writeln!(out, "[^{}]: failed cells: {f}", i + 1);
        }
    }
    let seeds: BTreeSet<u64> = report.cells.iter().map(|c| c.seed).collect();
    let _ = writeln!(
        out,
        "\nValues are mean±std over {} seed(s); ratio metrics are x100. Backend: {} ({}).",
        seeds.len(),
        report.environment.backend,
        report.environment.model_name
    );
    out
}

/// Long format `mode,size,seed,metric,value`, optionally for one mode.
/// Failed cells contribute no rows.
pub fn render_csv(report: &RunReport, mode: Option<SynthesisMode>) -> String {
    let mut out = String::from("mode,size,seed,metric,value\n");
    for c in &report.cells {
        if mode.is_some_and(|m| m != c.mode) {
            continue;
        }
        if let Some(m) = &c.metrics {
            for (name, v) in m.values() {
                let _ = writeln!(out, "{},{},{},{},{}", c.mode, c.size, c.seed, name, v);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(mode: SynthesisMode, seed: u64, acc: Option<f64>) -> Cell {
        let metrics = acc.map(|a| {
            let mut m = MetricReport::default();
            m.downstream.insert("accuracy".into(), a);
            m
        });
        Cell {
            mode,
            size: 10,
            seed,
            status: if acc.is_some() { CellStatus::Ok } else { CellStatus::Failed },
            metrics,
            error: acc.is_none().then(|| "backend down".to_string()),
            dataset_digest: None,
        }
    }

    fn report(cells: Vec<Cell>) -> RunReport {
        RunReport {
            kind: "pipeline".into(),
            aggregates: aggregate(&cells),
            cells,
            environment: EnvironmentManifest {
                artifact_version: "0".into(),
                backend: "mock".into(),
                model_name: "m".into(),
                task_id: "t".into(),
                task_digest: String::new(),
                config_digest: String::new(),
                generation_digest: String::new(),
                train_digest: String::new(),
                parallel: false,
                workers: 1,
                reference_model: None,
                generated_at: None,
            },
        }
    }

    #[test]
    fn sample_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(mean_std(&[0.7]), (0.7, 0.0));
    }

    #[test]
    fn markdown_cells_are_mean_pm_std() {
        let r = report(vec![
            cell(SynthesisMode::ZeroShot, 0, Some(0.5)),
            cell(SynthesisMode::ZeroShot, 1, Some(0.7)),
            cell(SynthesisMode::Kadg, 0, Some(0.8)),
            cell(SynthesisMode::Kadg, 1, Some(0.8)),
        ]);
        let md = render_report(&r, ReportFormat::Markdown);
        assert!(md.contains("| zero_shot | 10 | 60.00±14.1 |"), "{md}");
        assert!(md.contains("| kadg | 10 | 80.00±0.0 |"), "{md}");
    }

    #[test]
    fn failed_cell_renders_dash_with_footnote() {
        let r = report(vec![cell(SynthesisMode::ZeroShot, 0, Some(0.5)), cell(SynthesisMode::ZeroShot, 1, None)]);
        let md = render_report(&r, ReportFormat::Markdown);
        assert!(md.contains("| zero_shot | 10 | —[^1] |"), "{md}");
        assert!(md.contains("[^1]: failed cells: seed 1: backend down"), "{md}");
    }

    #[test]
    fn json_round_trip() {
        let r = report(vec![cell(SynthesisMode::FewShot, 3, Some(0.123456789))]);
        let back = RunReport::from_json(&render_report(&r, ReportFormat::Json)).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn csv_long_format() {
        let r = report(vec![cell(SynthesisMode::Kadg, 2, Some(0.25))]);
        assert_eq!(render_csv(&r, None), "mode,size,seed,metric,value\nkadg,10,2,accuracy,0.25\n");
        assert_eq!(render_csv(&r, Some(SynthesisMode::ZeroShot)), "mode,size,seed,metric,value\n");
    }
}
