//! Per-event metrics and their CSV / JSON-lines serialization.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detection::DetectionReport;
use crate::error::{Error, Result};

/// One row per simulator event that changes the global model (plus the initial row).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub event_index: u64,
    pub sim_time: f64,
    pub event_kind: String,
    /// Set when exactly one node's update was aggregated.
    pub node_id: Option<usize>,
    /// Number of updates mixed into the model at this event.
    pub updates: usize,
    pub version: u64,
    pub global_accuracy: Option<f64>,
    pub global_loss: Option<f64>,
    /// `comm / (comp + comm)` over the run so far; empty while both are zero.
    pub kappa_cumulative: Option<f64>,
    pub comm_time_cum: f64,
    /// Computation time including time spent waiting at aggregation barriers.
    pub comp_time_cum: f64,
    /// The waiting part of `comp_time_cum`.
    pub wait_time_cum: f64,
    /// Largest staleness among the aggregated updates.
    pub staleness: Option<u64>,
    /// Fewest local epochs among the aggregated updates.
    pub local_epochs: Option<usize>,
    pub epsilon_total: f64,
    pub delta_total: f64,
    /// Semicolon-separated ids of nodes flagged by detection at this event.
    pub flagged: String,
    pub asr: Option<f64>,
}

impl MetricsRow {
    pub const HEADER: [&'static str; 18] = [
        "event_index",
        "sim_time",
        "event_kind",
        "node_id",
        "updates",
        "version",
        "global_accuracy",
        "global_loss",
        "kappa_cumulative",
        "comm_time_cum",
        "comp_time_cum",
        "wait_time_cum",
        "staleness",
        "local_epochs",
        "epsilon_total",
        "delta_total",
        "flagged",
        "asr",
    ];

    pub fn flagged_nodes(&self) -> Vec<usize> {
        self.flagged
            .split(';')
            .filter(|s| !s.is_empty())
            .filter_map(|s| s.parse().ok())
            .collect()
    }
}

/// Everything a simulation run reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    /// Which workload produced the run, e.g. `"classifier"` or `"quadratic"`.
    pub workload: String,
    pub seed: u64,
    pub rows: Vec<MetricsRow>,
    pub staleness_histogram: BTreeMap<u64, u64>,
    pub detection_reports: Vec<DetectionReport>,
    /// Simulated time of the last aggregation.
    pub makespan: f64,
    /// Set when the composed δ reached `1/K`.
    pub delta_warning: bool,
}

impl MetricsLog {
    pub fn new(workload: &str, seed: u64) -> Self {
        Self {
            workload: workload.to_string(),
            seed,
            rows: Vec::new(),
            staleness_histogram: BTreeMap::new(),
            detection_reports: Vec::new(),
            makespan: 0.0,
            delta_warning: false,
        }
    }

    pub fn last(&self) -> Option<&MetricsRow> {
        self.rows.last()
    }

    pub fn final_accuracy(&self) -> Option<f64> {
        self.rows.iter().rev().find_map(|r| r.global_accuracy)
    }

    pub fn final_kappa(&self) -> Option<f64> {
        self.rows.iter().rev().find_map(|r| r.kappa_cumulative)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricsFormat {
    Csv,
    JsonLines,
}

/// Write the rows of `log` with a fixed column order.
pub fn emit_metrics(log: &MetricsLog, path: impl AsRef<Path>, format: MetricsFormat) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    match format {
        MetricsFormat::Csv => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
            w.write_record(MetricsRow::HEADER)?;
            for row in &log.rows {
                w.serialize(row)?;
            }
            w.flush()?;
        }
        MetricsFormat::JsonLines => {
            let mut w = file;
            for row in &log.rows {
                serde_json::to_writer(&mut w, row)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

pub fn read_metrics_csv(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != MetricsRow::HEADER {
        return Err(Error::Config(format!("unexpected metrics header: {header:?}")));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn read_metrics_jsonl(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>> {
    let reader = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            rows.push(serde_json::from_str(&line)?);
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(i: u64) -> MetricsRow {
        MetricsRow {
            event_index: i,
            sim_time: 0.1 * i as f64 + 1.0 / 3.0,
            event_kind: "aggregate".into(),
            node_id: if i % 2 == 0 { Some(i as usize) } else { None },
            updates: 1,
            version: i,
            global_accuracy: Some(0.123456789 * i as f64),
            global_loss: None,
            kappa_cumulative: Some(1.0 / 7.0),
            comm_time_cum: 2.0_f64.sqrt() * i as f64,
            comp_time_cum: 1e-300,
            wait_time_cum: 0.0,
            staleness: Some(i),
            local_epochs: Some(2),
            epsilon_total: 8.0 * i as f64,
            delta_total: 1e-3 * i as f64,
            flagged: if i == 2 { "3;7".into() } else { String::new() },
            asr: None,
        }
    }

    #[test]
    fn header_matches_field_order() {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.serialize(row(1)).unwrap();
        let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
        assert_eq!(text.lines().next().unwrap(), MetricsRow::HEADER.join(","));
    }

    #[test]
    fn empty_log_writes_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        emit_metrics(&MetricsLog::new("classifier", 1), &path, MetricsFormat::Csv).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(text.starts_with("event_index,sim_time,event_kind"));
        assert!(read_metrics_csv(&path).unwrap().is_empty());
    }

    #[test]
    fn csv_and_jsonl_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let mut log = MetricsLog::new("classifier", 1);
        log.rows = (0..5).map(row).collect();
        let csv_path = dir.path().join("m.csv");
        let json_path = dir.path().join("m.jsonl");
        emit_metrics(&log, &csv_path, MetricsFormat::Csv).unwrap();
        emit_metrics(&log, &json_path, MetricsFormat::JsonLines).unwrap();
        let from_csv = read_metrics_csv(&csv_path).unwrap();
        let from_json = read_metrics_jsonl(&json_path).unwrap();
        assert_eq!(from_csv, log.rows);
        assert_eq!(from_json, log.rows);
        assert_eq!(from_csv[2].flagged_nodes(), vec![3, 7]);
    }
}
