//! Keypoint accuracy (PDJ, per-joint accuracy, normalized L2) and limb
//! proportion consistency (BPLP, BPLP-C).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::template::{Keypoint, KeypointSet, PoseEstimate};

/// Floor applied to each per-limb standard deviation before taking BPLP-C.
pub const BPLP_EPSILON: f64 = 1e-6;

/// Torso lengths at or below this (pixels) are rejected.
pub const MIN_TORSO: f64 = 1e-9;

/// Annotation coordinates are kept on a grid of this spacing (2⁻²⁰ px) so
/// that `x ↦ (W−1) − x` is exact in floating point and flipping twice
/// restores the input bit for bit.
pub const COORDINATE_LATTICE: f64 = 1.0 / 1_048_576.0;

pub fn snap_to_lattice(v: f64) -> f64 {
    (v / COORDINATE_LATTICE).round() * COORDINATE_LATTICE
}

fn is_false(b: &bool) -> bool {
    !*b
}

/// One frame's ground-truth (or predicted) keypoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameAnnotation {
    pub frame_id: String,
    pub subject_id: String,
    /// `[width, height]` in pixels.
    pub image_size: [u32; 2],
    pub keypoints: KeypointSet,
    /// Set on records produced by flipping.
    #[serde(default, skip_serializing_if = "is_false")]
    pub flipped: bool,
}

impl FrameAnnotation {
    pub fn snapped(mut self) -> Self {
        self.keypoints = self.keypoints.map(|p| Point2::new(snap_to_lattice(p.x), snap_to_lattice(p.y)));
        self
    }
}

/// Anything that carries the 15 evaluation keypoints.
pub trait HasKeypoints {
    fn keypoints(&self) -> &KeypointSet;

    /// Used in error messages.
    fn label(&self) -> &str {
        "?"
    }
}

impl HasKeypoints for KeypointSet {
    fn keypoints(&self) -> &KeypointSet {
        self
    }
}

impl HasKeypoints for FrameAnnotation {
    fn keypoints(&self) -> &KeypointSet {
        &self.keypoints
    }

    fn label(&self) -> &str {
        &self.frame_id
    }
}

impl HasKeypoints for PoseEstimate {
    fn keypoints(&self) -> &KeypointSet {
        &self.keypoints
    }
}

impl<T: HasKeypoints + ?Sized> HasKeypoints for &T {
    fn keypoints(&self) -> &KeypointSet {
        (**self).keypoints()
    }

    fn label(&self) -> &str {
        (**self).label()
    }
}

/// Parses JSON Lines annotations. Blank lines are skipped; errors name the line.
pub fn parse_annotations(source: &str) -> Result<Vec<FrameAnnotation>> {
    source
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Schema(format!("line {}: {e}", i + 1)))
        })
        .collect()
}

pub fn read_annotations(path: impl AsRef<Path>) -> Result<Vec<FrameAnnotation>> {
    parse_annotations(&std::fs::read_to_string(path)?)
}

/// One compact JSON object per line, each terminated by `\n`.
pub fn annotations_to_jsonl(records: &[FrameAnnotation]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("annotations serialize"));
        out.push('\n');
    }
    out
}

/// Mirrors keypoints across the vertical centre line of a `width`-pixel
/// frame and swaps left/right labels.
pub fn flip_keypoints(k: &KeypointSet, width: u32) -> KeypointSet {
    let xmax = width as f64 - 1.0;
    KeypointSet::from_fn(|kp| {
        let p = k[kp.mirror()];
        Point2::new(xmax - p.x, p.y)
    })
}

/// Horizontal flip of an annotation; toggles the `flipped` flag.
pub fn flip_annotation(a: &FrameAnnotation) -> FrameAnnotation {
    FrameAnnotation {
        frame_id: a.frame_id.clone(),
        subject_id: a.subject_id.clone(),
        image_size: a.image_size,
        keypoints: flip_keypoints(&a.keypoints, a.image_size[0]),
        flipped: !a.flipped,
    }
}

/// Diagonal of the keypoints' axis-aligned bounding box.
pub fn person_diagonal(gt: &impl HasKeypoints) -> Result<f64> {
    let k = gt.keypoints();
    let (mut x0, mut y0) = (f64::INFINITY, f64::INFINITY);
    let (mut x1, mut y1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (_, p) in k.iter() {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
    }
    let d = (x1 - x0).hypot(y1 - y0);
    if d > 0.0 {
        Ok(d)
    } else {
        Err(Error::DegenerateBox(gt.label().to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub threshold: f64,
    pub pdj: f64,
    pub per_joint: BTreeMap<Keypoint, f64>,
    /// Mean keypoint distance as a percentage of the frame width.
    pub l2: f64,
    pub n_frames: usize,
}

fn check_aligned(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::LengthMismatch { left: a, right: b });
    }
    if a == 0 {
        return Err(Error::Validation("no frames to evaluate".into()));
    }
    Ok(())
}

/// Fraction of joints within `threshold × person_diagonal` of ground truth,
/// averaged over frames, plus per-joint detection rates.
pub fn pdj<G: HasKeypoints, P: HasKeypoints>(
    gt: &[G],
    pred: &[P],
    threshold: f64,
) -> Result<(f64, BTreeMap<Keypoint, f64>)> {
    check_aligned(gt.len(), pred.len())?;
    let mut hits = [0usize; Keypoint::ALL.len()];
    let mut frame_sum = 0.0;
    for (g, p) in gt.iter().zip(pred) {
        let radius = threshold * person_diagonal(g)?;
        let mut detected = 0usize;
        for kp in Keypoint::ALL {
            if g.keypoints()[kp].distance(p.keypoints()[kp]) <= radius {
                hits[kp.index()] += 1;
                detected += 1;
            }
        }
        frame_sum += detected as f64 / Keypoint::ALL.len() as f64;
    }
    let n = gt.len() as f64;
    let per_joint = Keypoint::ALL.iter().map(|&k| (k, hits[k.index()] as f64 / n)).collect();
    Ok((frame_sum / n, per_joint))
}

/// Mean keypoint distance over `width`, ×100.
pub fn l2_error<P: HasKeypoints>(gt: &[FrameAnnotation], pred: &[P]) -> Result<f64> {
    check_aligned(gt.len(), pred.len())?;
    let mut sum = 0.0;
    for (g, p) in gt.iter().zip(pred) {
        let [w, h] = g.image_size;
        if w != h {
            return Err(Error::DimMismatch(format!(
                "frame `{}` is {w}x{h}; normalized L2 needs square frames",
                g.frame_id
            )));
        }
        let d: f64 = Keypoint::ALL
            .iter()
            .map(|&k| g.keypoints[k].distance(p.keypoints()[k]))
            .sum();
        sum += d / (Keypoint::ALL.len() as f64 * w as f64);
    }
    Ok(100.0 * sum / gt.len() as f64)
}

/// PDJ, per-joint accuracy and L2 in one report.
pub fn evaluate<P: HasKeypoints>(gt: &[FrameAnnotation], pred: &[P], threshold: f64) -> Result<MetricsReport> {
    let (pdj, per_joint) = pdj(gt, pred, threshold)?;
    Ok(MetricsReport {
        threshold,
        pdj,
        per_joint,
        l2: l2_error(gt, pred)?,
        n_frames: gt.len(),
    })
}

/// Segment limbs measured by BPLP.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Limb {
    LeftThigh,
    RightThigh,
    LeftShin,
    RightShin,
    LeftUpperArm,
    RightUpperArm,
    LeftForearm,
    RightForearm,
}

impl Limb {
    pub const ALL: [Limb; 8] = [
        Limb::LeftThigh,
        Limb::RightThigh,
        Limb::LeftShin,
        Limb::RightShin,
        Limb::LeftUpperArm,
        Limb::RightUpperArm,
        Limb::LeftForearm,
        Limb::RightForearm,
    ];

    pub fn endpoints(self) -> (Keypoint, Keypoint) {
        use Keypoint::*;
        match self {
            Limb::LeftThigh => (LeftHip, LeftKnee),
            Limb::RightThigh => (RightHip, RightKnee),
            Limb::LeftShin => (LeftKnee, LeftAnkle),
            Limb::RightShin => (RightKnee, RightAnkle),
            Limb::LeftUpperArm => (LeftShoulder, LeftElbow),
            Limb::RightUpperArm => (RightShoulder, RightElbow),
            Limb::LeftForearm => (LeftElbow, LeftWrist),
            Limb::RightForearm => (RightElbow, RightWrist),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Limb::LeftThigh => "left_thigh",
            Limb::RightThigh => "right_thigh",
            Limb::LeftShin => "left_shin",
            Limb::RightShin => "right_shin",
            Limb::LeftUpperArm => "left_upper_arm",
            Limb::RightUpperArm => "right_upper_arm",
            Limb::LeftForearm => "left_forearm",
            Limb::RightForearm => "right_forearm",
        }
    }
}

/// Neck-to-abdomen distance.
pub fn torso_length(k: &KeypointSet) -> f64 {
    k[Keypoint::Neck].distance(k[Keypoint::Abdomen])
}

/// Limb length over torso length, per limb.
pub fn bplp(pose: &impl HasKeypoints, limbs: &[Limb]) -> Result<BTreeMap<Limb, f64>> {
    let k = pose.keypoints();
    let torso = torso_length(k);
    if torso.is_nan() || torso <= MIN_TORSO {
        return Err(Error::DegenerateTorso(torso));
    }
    Ok(limbs
        .iter()
        .map(|&l| {
            let (a, b) = l.endpoints();
            (l, k[a].distance(k[b]) / torso)
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BplpReport {
    /// Population standard deviation of each limb's BPLP across frames.
    pub per_limb_std: BTreeMap<Limb, f64>,
    pub bplp_c: f64,
    pub n_frames: usize,
}

/// `1 / mean(max(σ_limb, ε))` over the given limbs.
pub fn bplp_consistency<P: HasKeypoints>(preds: &[P], limbs: &[Limb]) -> Result<BplpReport> {
    if preds.len() < 2 {
        return Err(Error::TooFewFrames { needed: 2, got: preds.len() });
    }
    if limbs.is_empty() {
        return Err(Error::Validation("empty limb set".into()));
    }
    let per_frame = preds.iter().map(|p| bplp(p, limbs)).collect::<Result<Vec<_>>>()?;
    let n = preds.len() as f64;
    let per_limb_std: BTreeMap<Limb, f64> = limbs
        .iter()
        .map(|l| {
            let mean = per_frame.iter().map(|f| f[l]).sum::<f64>() / n;
            let var = per_frame.iter().map(|f| (f[l] - mean).powi(2)).sum::<f64>() / n;
            (*l, var.sqrt())
        })
        .collect();
    let mean_std = per_limb_std.values().map(|s| s.max(BPLP_EPSILON)).sum::<f64>() / per_limb_std.len() as f64;
    Ok(BplpReport { per_limb_std, bplp_c: 1.0 / mean_std, n_frames: preds.len() })
}

/// `metric,key,value` rows for both reports.
pub fn reports_to_csv(m: &MetricsReport, b: Option<&BplpReport>) -> String {
    let mut s = String::from("metric,key,value\n");
    let _ = writeln!(s, "pdj,,{}", m.pdj);
    let _ = writeln!(s, "l2,,{}", m.l2);
    let _ = writeln!(s, "threshold,,{}", m.threshold);
    let _ = writeln!(s, "n_frames,,{}", m.n_frames);
    for (k, v) in &m.per_joint {
        let _ = writeln!(s, "per_joint,{k},{v}");
    }
    if let Some(b) = b {
        let _ = writeln!(s, "bplp_c,,{}", b.bplp_c);
        for (l, v) in &b.per_limb_std {
            let _ = writeln!(s, "bplp_std,{},{v}", l.name());
        }
    }
    s
}
