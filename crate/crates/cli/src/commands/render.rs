//! `posekit render`: heatmaps and keypoints of an untransformed template.

use std::path::PathBuf;

use anyhow::Result;
use posekit::template::{render_template, RenderOptions};
use posekit::{transform_template_on, AffineTransform};
use serde_json::json;

use super::{canvas_arg, load_template_arg};
use crate::output::OutputDir;
use crate::targets::write_frame;

pub const KEYPOINTS_FILE: &str = "keypoints.json";

#[derive(clap::Args, Clone, Debug)]
pub struct RenderArgs {
    /// Template JSON file, or `t_new` / `t_orig`.
    #[arg(long, default_value = "t_new")]
    pub template: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Canvas size; defaults to the template's own canvas.
    #[arg(long, num_args = 2, value_names = ["W", "H"])]
    pub canvas: Option<Vec<u32>>,
}

/// Writes one PFM per part, `composite.pfm` and the posed template.
pub fn run(args: &RenderArgs) -> Result<String> {
    let mut out = OutputDir::create(&args.out)?;
    let t = load_template_arg(&args.template, Some(&mut out))?;
    let canvas = canvas_arg(args.canvas.as_deref(), t.canvas)?;
    let heat = render_template(&t, canvas, &RenderOptions::default())?;
    write_frame(&mut out, "", &heat)?;
    let pose = transform_template_on(&t, &[AffineTransform::IDENTITY; posekit::template::PART_COUNT], canvas)?;
    out.write_json(KEYPOINTS_FILE, &pose)?;
    let config = json!({ "template": args.template, "canvas": canvas });
    let manifest = out.finish("render", config, 0)?;
    Ok(format!(
        "rendered `{}` at {}x{}: {} files in {}",
        t.name,
        canvas.width,
        canvas.height,
        manifest.artifacts.keys().filter(|k| !k.starts_with("input:")).count(),
        args.out.display()
    ))
}
