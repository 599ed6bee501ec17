//! Metric rows, per-run reports, and paper-shaped result tables.
//!
//! `metrics.csv` holds one row per recorded value with columns
//! `task,objective,fraction,seed,epoch,split,metric,value` (values as
//! fractions in [0, 1]); `curves.csv` holds the per-epoch validation
//! trajectory in the same format. Tables under `tables/` render the values
//! in the conventional x100 scale and can always be regenerated from the
//! CSV logs alone.

use super::config::ExclusionPolicy;
use crate::data::Bucket;
use crate::error::{Error, Result};
use crate::training::EpochLog;
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::Path;

pub const OBJECTIVE_ROWS: [&str; 5] = ["none", "nur", "nug", "mur", "ini"];
pub const TASK_COLS: [&str; 4] = ["bsp", "dap", "nur", "nug"];

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub task: String,
    /// Pretraining condition ("none" for the baseline row).
    pub objective: String,
    pub fraction: f64,
    pub seed: u64,
    pub epoch: usize,
    /// "valid" or "test".
    pub split: String,
    pub metric: String,
    pub value: f64,
}

impl MetricRow {
    fn sort_key(&self) -> (String, String, String, u64, usize, String, String) {
        (
            self.task.clone(),
            self.objective.clone(),
            format!("{:.6}", self.fraction),
            self.seed,
            self.epoch,
            self.split.clone(),
            self.metric.clone(),
        )
    }

    fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.task,
            self.objective,
            self.fraction,
            self.seed,
            self.epoch,
            self.split,
            self.metric,
            self.value
        )
    }

    fn parse(line: &str) -> Result<MetricRow> {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 8 {
            return Err(Error::Corpus(format!("bad metrics row: {line}")));
        }
        let err = |what: &str| Error::Corpus(format!("bad {what} in metrics row: {line}"));
        Ok(MetricRow {
            task: parts[0].to_string(),
            objective: parts[1].to_string(),
            fraction: parts[2].parse().map_err(|_| err("fraction"))?,
            seed: parts[3].parse().map_err(|_| err("seed"))?,
            epoch: parts[4].parse().map_err(|_| err("epoch"))?,
            split: parts[5].to_string(),
            metric: parts[6].to_string(),
            value: parts[7].parse().map_err(|_| err("value"))?,
        })
    }
}

const METRICS_HEADER: &str = "task,objective,fraction,seed,epoch,split,metric,value";

pub fn write_metric_rows(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut sorted: Vec<&MetricRow> = rows.iter().collect();
    sorted.sort_by_key(|r| r.sort_key());
    let mut text = String::from(METRICS_HEADER);
    text.push('\n');
    for row in sorted {
        text.push_str(&row.to_csv());
        text.push('\n');
    }
    super::write_atomic(path, text.as_bytes())
}

pub fn read_metric_rows(path: &Path) -> Result<Vec<MetricRow>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != METRICS_HEADER {
                return Err(Error::Corpus(format!(
                    "{}: unexpected header {line}",
                    path.display()
                )));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        rows.push(MetricRow::parse(line)?);
    }
    Ok(rows)
}

/// Serializable per-cell evaluation report.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub task: String,
    pub objective: String,
    pub fraction: f64,
    pub seed: u64,
    pub metric: String,
    /// Test value in [0, 1] at the best-validation epoch.
    pub value: f64,
    /// The same value in the conventional x100 scale.
    pub value_x100: f64,
    pub best_epoch: usize,
    pub curve: Vec<EpochLog>,
    /// Context-length breakdown (generation task only):
    /// (bucket, value, example count).
    pub buckets: Option<Vec<(String, f64, usize)>>,
}

impl EvalReport {
    pub fn rows(&self) -> (Vec<MetricRow>, Vec<MetricRow>) {
        let mut metrics = vec![MetricRow {
            task: self.task.clone(),
            objective: self.objective.clone(),
            fraction: self.fraction,
            seed: self.seed,
            epoch: self.best_epoch,
            split: "test".into(),
            metric: self.metric.clone(),
            value: self.value,
        }];
        if let Some(buckets) = &self.buckets {
            for (bucket, value, count) in buckets {
                metrics.push(MetricRow {
                    task: self.task.clone(),
                    objective: self.objective.clone(),
                    fraction: self.fraction,
                    seed: self.seed,
                    epoch: self.best_epoch,
                    split: "test".into(),
                    metric: format!("{}_{bucket}", self.metric),
                    value: *value,
                });
                metrics.push(MetricRow {
                    task: self.task.clone(),
                    objective: self.objective.clone(),
                    fraction: self.fraction,
                    seed: self.seed,
                    epoch: self.best_epoch,
                    split: "test".into(),
                    metric: format!("n_{bucket}"),
                    value: *count as f64,
                });
            }
        }
        let curves = self
            .curve
            .iter()
            .map(|e| MetricRow {
                task: self.task.clone(),
                objective: self.objective.clone(),
                fraction: self.fraction,
                seed: self.seed,
                epoch: e.epoch,
                split: "valid".into(),
                metric: self.metric.clone(),
                value: e.valid_value,
            })
            .collect();
        (metrics, curves)
    }
}

pub fn write_reports(path: &Path, reports: &[EvalReport]) -> Result<()> {
    let text = serde_json::to_string_pretty(reports)
        .map_err(|e| Error::json(path.display().to_string(), e))?;
    super::write_atomic(path, text.as_bytes())
}

/// The pretraining-by-task matrix with excluded cells, mean over seeds.
#[derive(Debug)]
pub struct ResultsTable {
    /// `cells[(objective, task)]` -> mean test value in [0, 1].
    pub cells: BTreeMap<(String, String), f64>,
    pub exclusion: ExclusionPolicy,
}

impl ResultsTable {
    /// Aggregate test rows for one fraction into the matrix.
    pub fn from_rows(rows: &[MetricRow], fraction: f64, exclusion: ExclusionPolicy) -> Self {
        let mut sums: BTreeMap<(String, String), (f64, usize)> = BTreeMap::new();
        for row in rows {
            if row.split != "test" || (row.fraction - fraction).abs() > 1e-12 {
                continue;
            }
            // Only the headline metric, not bucket breakdowns or counts.
            if row.metric != task_metric(&row.task) {
                continue;
            }
            let entry = sums
                .entry((row.objective.clone(), row.task.clone()))
                .or_insert((0.0, 0));
            entry.0 += row.value;
            entry.1 += 1;
        }
        let cells = sums
            .into_iter()
            .map(|(key, (sum, n))| (key, sum / n as f64))
            .collect();
        ResultsTable { cells, exclusion }
    }

    pub fn populated(&self) -> usize {
        self.cells.len()
    }

    pub fn excluded_cells(&self) -> Vec<(String, String)> {
        OBJECTIVE_ROWS
            .iter()
            .flat_map(|o| TASK_COLS.iter().map(move |t| (o.to_string(), t.to_string())))
            .filter(|(o, t)| self.exclusion.excludes(o, t))
            .collect()
    }

    /// Render in the x100 convention, `--` for excluded cells.
    pub fn to_csv(&self) -> String {
        let mut text = String::from("pretraining,bsp_f1,dap_f1,nur_hits1,nug_bleu4\n");
        for objective in OBJECTIVE_ROWS {
            text.push_str(objective);
            for task in TASK_COLS {
                text.push(',');
                if self.exclusion.excludes(objective, task) {
                    text.push_str("--");
                } else {
                    match self.cells.get(&(objective.to_string(), task.to_string())) {
                        Some(v) => text.push_str(&format!("{:.2}", v * 100.0)),
                        None => text.push_str(""),
                    }
                }
            }
            text.push('\n');
        }
        text
    }
}

pub fn task_metric(task: &str) -> &'static str {
    match task {
        "bsp" | "dap" => "f1",
        "nur" => "hits1",
        _ => "bleu4",
    }
}

/// Context-length table: rows are pretraining conditions, columns the
/// bucket BLEU values (x100) with example counts; absent buckets stay
/// blank.
pub fn ctxlen_table_csv(rows: &[MetricRow], conditions: &[&str]) -> String {
    let mut text =
        String::from("pretraining,short,n_short,medium,n_medium,long,n_long\n");
    for condition in conditions {
        text.push_str(condition);
        for bucket in Bucket::ALL {
            let name = bucket.name();
            let value = mean_metric(rows, condition, &format!("bleu4_{name}"));
            let count = mean_metric(rows, condition, &format!("n_{name}"));
            match (value, count) {
                (Some(v), Some(n)) => {
                    text.push_str(&format!(",{:.2},{}", v * 100.0, n as usize));
                }
                _ => text.push_str(",--,0"),
            }
        }
        text.push('\n');
    }
    text
}

fn mean_metric(rows: &[MetricRow], objective: &str, metric: &str) -> Option<f64> {
    let values: Vec<f64> = rows
        .iter()
        .filter(|r| {
            r.split == "test" && r.objective == objective && r.metric == metric && r.task == "nug"
        })
        .map(|r| r.value)
        .collect();
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// File name for a fraction's limited-data table: 0.01 -> `limited_1pct`.
pub fn fraction_label(fraction: f64) -> String {
    let pct = fraction * 100.0;
    if (pct - pct.round()).abs() < 1e-9 {
        format!("{}pct", pct.round() as i64)
    } else {
        format!("{}pct", pct).replace('.', "p")
    }
}
