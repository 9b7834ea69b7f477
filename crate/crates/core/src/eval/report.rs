//! Line-delimited JSON evaluation reports: one record per mixture, then a
//! summary row of medians.

use serde::{Deserialize, Serialize};

use super::metrics::median;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureRecord {
    pub id: String,
    pub si_snr_in: f64,
    pub si_snr_out: f64,
    pub cos_target: f64,
    pub cos_interf: f64,
    pub vad_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub count: usize,
    pub median_si_snr_in: f64,
    pub median_si_snr_out: f64,
    pub median_si_snr_gain: f64,
    pub median_cos_target: f64,
    pub median_cos_interf: f64,
    pub median_vad_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "row", rename_all = "snake_case")]
pub enum ReportRow {
    Mixture(MixtureRecord),
    Summary(ReportSummary),
}

pub fn summarize(records: &[MixtureRecord]) -> Result<ReportSummary> {
    if records.is_empty() {
        return Err(Error::input("no records to summarize"));
    }
    let col = |f: fn(&MixtureRecord) -> f64| median(&records.iter().map(f).collect::<Vec<_>>());
    Ok(ReportSummary {
        count: records.len(),
        median_si_snr_in: col(|r| r.si_snr_in),
        median_si_snr_out: col(|r| r.si_snr_out),
        median_si_snr_gain: col(|r| r.si_snr_out - r.si_snr_in),
        median_cos_target: col(|r| r.cos_target),
        median_cos_interf: col(|r| r.cos_interf),
        median_vad_acc: col(|r| r.vad_acc),
    })
}

/// Renders the records and their summary as JSON lines.
pub fn render_report(records: &[MixtureRecord]) -> Result<String> {
    let summary = summarize(records)?;
    let mut out = String::new();
    let rows = records
        .iter()
        .cloned()
        .map(ReportRow::Mixture)
        .chain(std::iter::once(ReportRow::Summary(summary)));
    for row in rows {
        out.push_str(&serde_json::to_string(&row).map_err(|e| Error::Format(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

/// Parses a report produced by [`render_report`].
pub fn parse_report(text: &str) -> Result<(Vec<MixtureRecord>, ReportSummary)> {
    let mut records = Vec::new();
    let mut summary = None;
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let row: ReportRow =
            serde_json::from_str(line).map_err(|e| Error::Format(format!("report line {}: {e}", n + 1)))?;
        match row {
            ReportRow::Mixture(r) if summary.is_none() => records.push(r),
            ReportRow::Mixture(_) => return Err(Error::Format("record after the summary row".into())),
            ReportRow::Summary(s) => summary = Some(s),
        }
    }
    let summary = summary.ok_or_else(|| Error::Format("report has no summary row".into()))?;
    Ok((records, summary))
}
