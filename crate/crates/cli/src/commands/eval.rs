//! `posekit eval`: keypoint and proportion metrics for aligned frames.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use posekit::metrics::{evaluate, parse_annotations, reports_to_csv};
use posekit::{bplp_consistency, BplpReport, Error, FrameAnnotation, Limb, MetricsReport};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::exit::AlignmentError;
use crate::output::{read_input, OutputDir};

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";

#[derive(clap::Args, Clone, Debug)]
pub struct EvalArgs {
    /// Ground-truth annotations (JSON Lines).
    #[arg(long)]
    pub gt: PathBuf,
    /// Predicted keypoints (JSON Lines).
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// PDJ radius as a fraction of the person diagonal.
    #[arg(long, default_value_t = 0.05)]
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metrics: MetricsReport,
    /// Absent when fewer than two frames were evaluated.
    #[serde(default)]
    pub bplp: Option<BplpReport>,
}

fn read_records(path: &Path, out: &mut OutputDir) -> Result<Vec<FrameAnnotation>> {
    let bytes = read_input(path, Some(out))?;
    let text = String::from_utf8(bytes).with_context(|| format!("{}: not UTF-8", path.display()))?;
    parse_annotations(&text).with_context(|| format!("parsing {}", path.display()))
}

fn by_frame_id(records: Vec<FrameAnnotation>, what: &str) -> Result<BTreeMap<String, FrameAnnotation>> {
    let mut map = BTreeMap::new();
    for r in records {
        let id = r.frame_id.clone();
        if map.insert(id.clone(), r).is_some() {
            return Err(AlignmentError(format!("duplicate frame id `{id}` in {what}")).into());
        }
    }
    Ok(map)
}

fn list(ids: &[&String]) -> String {
    ids.iter().map(|s| format!("`{s}`")).collect::<Vec<_>>().join(", ")
}

/// Joins ground truth and predictions on frame id, in frame id order.
/// Any id present on one side only is an error naming every such id.
pub fn join(gt: Vec<FrameAnnotation>, pred: Vec<FrameAnnotation>) -> Result<Vec<(FrameAnnotation, FrameAnnotation)>> {
    let gt = by_frame_id(gt, "ground truth")?;
    let mut pred = by_frame_id(pred, "predictions")?;
    let missing: Vec<&String> = gt.keys().filter(|k| !pred.contains_key(*k)).collect();
    let extra: Vec<&String> = pred.keys().filter(|k| !gt.contains_key(*k)).collect();
    if !missing.is_empty() || !extra.is_empty() {
        let mut msg = String::from("frame ids do not match");
        if !missing.is_empty() {
            msg.push_str(&format!("; no prediction for {}", list(&missing)));
        }
        if !extra.is_empty() {
            msg.push_str(&format!("; no ground truth for {}", list(&extra)));
        }
        return Err(AlignmentError(msg).into());
    }
    Ok(gt.into_iter().map(|(id, g)| (g, pred.remove(&id).expect("ids checked"))).collect())
}

/// Computes the report for already joined frames.
pub fn report(pairs: &[(FrameAnnotation, FrameAnnotation)], threshold: f64) -> Result<EvalReport> {
    if !(threshold > 0.0 && threshold.is_finite()) {
        return Err(Error::InvalidConfig(format!("threshold must be positive, got {threshold}")).into());
    }
    let gt: Vec<FrameAnnotation> = pairs.iter().map(|p| p.0.clone()).collect();
    let pred: Vec<&FrameAnnotation> = pairs.iter().map(|p| &p.1).collect();
    let metrics = evaluate(&gt, &pred, threshold)?;
    let bplp = match bplp_consistency(&pred, &Limb::ALL) {
        Ok(b) => Some(b),
        Err(Error::TooFewFrames { .. }) => None,
        Err(e) => return Err(e.into()),
    };
    Ok(EvalReport { metrics, bplp })
}

pub fn run(args: &EvalArgs) -> Result<String> {
    let mut out = OutputDir::create(&args.out)?;
    let gt = read_records(&args.gt, &mut out)?;
    let pred = read_records(&args.pred, &mut out)?;
    let pairs = join(gt, pred)?;
    let r = report(&pairs, args.threshold)?;
    out.write_json(REPORT_JSON, &r)?;
    out.write(REPORT_CSV, reports_to_csv(&r.metrics, r.bplp.as_ref()).as_bytes())?;
    let config = json!({
        "gt": args.gt.display().to_string(),
        "pred": args.pred.display().to_string(),
        "threshold": args.threshold,
    });
    out.finish("eval", config, 0)?;
    let bplp = r.bplp.as_ref().map_or("absent".to_string(), |b| format!("{:.4}", b.bplp_c));
    Ok(format!(
        "{} frames: PDJ@{} {:.4}, L2 {:.4}%, BPLP-C {bplp}",
        r.metrics.n_frames, r.metrics.threshold, r.metrics.pdj, r.metrics.l2
    ))
}
