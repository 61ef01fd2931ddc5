use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::Serialize;

use super::metrics::MetricsReport;
use super::RunOutcome;
use crate::config::{Setting, SweepAxis};
use crate::error::{Error, Result};
use crate::features::FeatureKind;

pub const CSV_HEADER: [&str; 10] = ["axis_value", "repeat_seed", "acc", "pre", "rec", "f1", "tp", "fp", "tn", "fn"];

/// All runs of one axis value.
#[derive(Debug, Clone)]
pub struct Group {
    pub axis_value: String,
    pub runs: Vec<Arc<RunOutcome>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricStats {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl MetricStats {
    fn from_fn(runs: &[Arc<RunOutcome>], stat: impl Fn(&[f64]) -> f64) -> Self {
        let col = |f: fn(&MetricsReport) -> f64| stat(&runs.iter().map(|r| f(&r.metrics)).collect::<Vec<_>>());
        MetricStats {
            accuracy: col(|m| m.accuracy),
            precision: col(|m| m.precision),
            recall: col(|m| m.recall),
            f1: col(|m| m.f1),
        }
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; 0 for fewer than two values.
pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

impl Group {
    pub fn mean(&self) -> MetricStats {
        MetricStats::from_fn(&self.runs, mean)
    }

    pub fn sd(&self) -> MetricStats {
        MetricStats::from_fn(&self.runs, sample_sd)
    }

    pub fn mean_accuracy(&self) -> f64 {
        self.mean().accuracy
    }

    pub fn feature_dim(&self) -> usize {
        self.runs.first().map_or(0, |r| r.feature_dim)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub setting: Setting,
    pub axis: Option<SweepAxis>,
    pub feature_kind: FeatureKind,
    pub groups: Vec<Group>,
}

#[derive(Serialize)]
struct RunSummary<'a> {
    repeat_seed: u64,
    train_size: usize,
    eval_size: usize,
    #[serde(flatten)]
    metrics: &'a MetricsReport,
}

#[derive(Serialize)]
struct GroupSummary<'a> {
    axis_value: &'a str,
    feature_dim: usize,
    mean: MetricStats,
    sd: MetricStats,
    runs: Vec<RunSummary<'a>>,
}

#[derive(Serialize)]
struct Summary<'a> {
    setting: Setting,
    axis: Option<&'static str>,
    feature_kind: FeatureKind,
    groups: Vec<GroupSummary<'a>>,
}

impl ExperimentReport {
    pub fn group(&self, axis_value: &str) -> Option<&Group> {
        self.groups.iter().find(|g| g.axis_value == axis_value)
    }

    /// One row per run; floats have fixed precision so reruns are
    /// byte-identical.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER)?;
        for g in &self.groups {
            for r in &g.runs {
                let m = &r.metrics;
                w.write_record([
                    g.axis_value.clone(),
                    r.seed.to_string(),
                    format!("{:.6}", m.accuracy),
                    format!("{:.6}", m.precision),
                    format!("{:.6}", m.recall),
                    format!("{:.6}", m.f1),
                    m.tp.to_string(),
                    m.fp.to_string(),
                    m.tn.to_string(),
                    m.fn_.to_string(),
                ])?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Evaluation(format!("csv buffer: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_json(&self) -> String {
        let summary = Summary {
            setting: self.setting,
            axis: self.axis.map(SweepAxis::name),
            feature_kind: self.feature_kind,
            groups: self
                .groups
                .iter()
                .map(|g| GroupSummary {
                    axis_value: &g.axis_value,
                    feature_dim: g.feature_dim(),
                    mean: g.mean(),
                    sd: g.sd(),
                    runs: g
                        .runs
                        .iter()
                        .map(|r| RunSummary {
                            repeat_seed: r.seed,
                            train_size: r.train_size,
                            eval_size: r.eval_size,
                            metrics: &r.metrics,
                        })
                        .collect(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&summary).expect("summary serializes")
    }

    /// Writes `report.csv` and `report.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv_path = dir.join("report.csv");
        fs::write(&csv_path, self.to_csv()?).map_err(|e| Error::io(&csv_path, e))?;
        let json_path = dir.join("report.json");
        fs::write(&json_path, self.to_json()).map_err(|e| Error::io(&json_path, e))
    }
}
