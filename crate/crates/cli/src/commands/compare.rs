//! `posekit compare`: a run's metrics next to published reference values.

use std::fmt::Write;
use std::path::PathBuf;

use anyhow::Result;
use serde::Deserialize;

use super::eval::EvalReport;
use super::read_json;

const REFERENCE_JSON: &str = include_str!("../../data/published_reference.json");

#[derive(clap::Args, Clone, Debug)]
pub struct CompareArgs {
    /// `report.json` written by `posekit eval`.
    pub report: PathBuf,
}

#[derive(Clone, Debug, Deserialize)]
pub struct ReferenceRow {
    pub name: String,
    pub source: String,
    pub pdj: Option<f64>,
    pub l2: Option<f64>,
    pub bplp_c: Option<f64>,
}

#[derive(Clone, Debug, Deserialize)]
pub struct Reference {
    pub version: u32,
    pub label: String,
    pub note: String,
    pub rows: Vec<ReferenceRow>,
}

pub fn reference() -> Reference {
    serde_json::from_str(REFERENCE_JSON).expect("bundled reference data is valid")
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "absent".into(), |v| format!("{v:.2}"))
}

/// Renders the comparison table. PDJ is shown as a percentage on both sides.
pub fn table(report: &EvalReport, reference: &Reference) -> String {
    let rows: Vec<(String, [String; 3])> = std::iter::once((
        "this run".to_string(),
        [
            cell(Some(100.0 * report.metrics.pdj)),
            cell(Some(report.metrics.l2)),
            cell(report.bplp.as_ref().map(|b| b.bplp_c)),
        ],
    ))
    .chain(reference.rows.iter().map(|r| {
        (format!("{} [{}]", r.name, reference.label), [cell(r.pdj), cell(r.l2), cell(r.bplp_c)])
    }))
    .collect();
    let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
    let mut s = String::new();
    let _ = writeln!(s, "{:width$}  {:>8}  {:>8}  {:>8}", "row", "PDJ (%)", "L2 (%)", "BPLP-C");
    for (name, [a, b, c]) in &rows {
        let _ = writeln!(s, "{name:width$}  {a:>8}  {b:>8}  {c:>8}");
    }
    let _ = writeln!(
        s,
        "PDJ@{} over {} frames. {}",
        report.metrics.threshold, report.metrics.n_frames, reference.note
    );
    s
}

pub fn run(args: &CompareArgs) -> Result<String> {
    let report: EvalReport = read_json(&args.report, None)?;
    Ok(table(&report, &reference()))
}
