//! CSV and JSON emission of run reports.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::MetricsReport;
use crate::error::{Result, SimError};

pub const CSV_COLUMNS: [&str; 12] = [
    "scenario",
    "seed",
    "protocol",
    "nstart",
    "row",
    "flow_id",
    "n_app_packets",
    "completion_s",
    "goodput_Bps",
    "load_mean",
    "load_p25",
    "load_p75",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(format!("unknown format {other:?}, expected csv or json")),
        }
    }
}

fn csv_err(e: csv::Error) -> SimError {
    SimError::contract(format!("CSV writer: {e}"))
}

/// One flow row per measured flow, then one summary row, per report.
pub fn write_csv<W: Write>(reports: &[MetricsReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_COLUMNS).map_err(csv_err)?;
    for r in reports {
        let nstart = r.nstart.map(|n| n.to_string()).unwrap_or_default();
        let seed = r.seed.to_string();
        let head = [r.scenario.as_str(), seed.as_str(), r.protocol.as_str(), &nstart];
        for f in &r.flows {
            let rest = [
                "flow".to_string(),
                f.flow_id.to_string(),
                f.n_app_packets.to_string(),
                format!("{:.6}", f.completion_s),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
            ];
            w.write_record(head.iter().copied().chain(rest.iter().map(String::as_str)))
                .map_err(csv_err)?;
        }
        let s = &r.summary;
        let rest = [
            "summary".to_string(),
            String::new(),
            String::new(),
            String::new(),
            format!("{:.3}", s.goodput_bps),
            format!("{:.6}", s.load_mean),
            format!("{:.6}", s.load_p25),
            format!("{:.6}", s.load_p75),
        ];
        w.write_record(head.iter().copied().chain(rest.iter().map(String::as_str)))
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| SimError::contract(format!("CSV flush: {e}")))
}

pub fn to_csv_string(reports: &[MetricsReport]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(reports, &mut buf)?;
    Ok(String::from_utf8(buf).expect("CSV is UTF-8"))
}

pub fn to_json_string(reports: &[MetricsReport]) -> Result<String> {
    serde_json::to_string_pretty(reports)
        .map_err(|e| SimError::contract(format!("JSON encoding: {e}")))
}

/// Writes `reports` to `path` in `format`.
pub fn emit(reports: &[MetricsReport], format: Format, path: &Path) -> Result<()> {
    let text = match format {
        Format::Csv => to_csv_string(reports)?,
        Format::Json => to_json_string(reports)?,
    };
    std::fs::write(path, text).map_err(|e| SimError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}
