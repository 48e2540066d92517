//! `posekit synth`: a seeded synthetic sequence with ground truth.

use std::path::PathBuf;

use anyhow::Result;
use posekit::metrics::annotations_to_jsonl;
use posekit::{generate_synthetic_sequence, FrameAnnotation, SyntheticSequenceSpec, TransformSet};
use serde::Serialize;
use serde_json::json;

use super::{canvas_arg, load_template_arg, read_json};
use crate::output::OutputDir;
use crate::targets::write_frame;

pub const TARGETS_DIR: &str = "targets";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.jsonl";
pub const TRANSFORMS_FILE: &str = "transforms.jsonl";

#[derive(clap::Args, Clone, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Template JSON file, or `t_new` / `t_orig`.
    #[arg(long, default_value = "t_new")]
    pub template: String,
    /// Sequence spec JSON; the flags below override its fields.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long, env = "POSEKIT_SEED")]
    pub seed: Option<u64>,
    /// Standard deviation of additive pixel noise.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Peak limb rotation in radians.
    #[arg(long)]
    pub amplitude: Option<f64>,
    #[arg(long, num_args = 2, value_names = ["W", "H"])]
    pub canvas: Option<Vec<u32>>,
}

#[derive(Serialize)]
struct TransformRecord<'a> {
    frame_id: &'a str,
    transforms: &'a TransformSet,
}

pub fn resolve_spec(args: &SynthArgs, out: Option<&mut OutputDir>) -> Result<SyntheticSequenceSpec> {
    let mut spec: SyntheticSequenceSpec = match &args.spec {
        Some(p) => read_json(p, out)?,
        None => SyntheticSequenceSpec::default(),
    };
    if let Some(n) = args.frames {
        spec.n_frames = n;
    }
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    if let Some(v) = args.noise {
        spec.noise_sigma = v;
    }
    if let Some(v) = args.amplitude {
        spec.motion_amplitude = v;
    }
    spec.canvas = canvas_arg(args.canvas.as_deref(), spec.canvas)?;
    spec.validate()?;
    Ok(spec)
}

/// Writes `targets/<frame_id>/*.pfm`, ground-truth annotations and the
/// generating transforms.
pub fn run(args: &SynthArgs) -> Result<String> {
    let mut out = OutputDir::create(&args.out)?;
    let spec = resolve_spec(args, Some(&mut out))?;
    let t = load_template_arg(&args.template, Some(&mut out))?;
    let frames = generate_synthetic_sequence(&spec, &t)?;
    let mut transforms = String::new();
    for f in &frames {
        let id = &f.annotation.frame_id;
        write_frame(&mut out, &format!("{TARGETS_DIR}/{id}"), &f.target)?;
        transforms.push_str(&serde_json::to_string(&TransformRecord { frame_id: id, transforms: &f.transforms })?);
        transforms.push('\n');
    }
    let annotations: Vec<FrameAnnotation> = frames.iter().map(|f| f.annotation.clone()).collect();
    out.write(GROUND_TRUTH_FILE, annotations_to_jsonl(&annotations).as_bytes())?;
    out.write(TRANSFORMS_FILE, transforms.as_bytes())?;
    let config = json!({ "template": args.template, "spec": spec });
    out.finish("synth", config, spec.seed)?;
    Ok(format!(
        "generated {} frames for {} at {}x{} in {}",
        frames.len(),
        spec.subject_id(),
        spec.canvas.width,
        spec.canvas.height,
        args.out.display()
    ))
}
