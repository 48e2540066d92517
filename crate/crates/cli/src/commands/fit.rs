//! `posekit fit`: direct per-frame fitting of a targets directory.

use std::path::PathBuf;

use anyhow::Result;
use posekit::metrics::annotations_to_jsonl;
use posekit::{
    fit_sequence, fit_sequence_with_flip_check, Error, FitConfig, FitResult, FlipCheck, FrameAnnotation, LossReport,
    Mode, Parameterization, Perceptual,
};
use serde::Serialize;
use serde_json::json;

use super::{load_template_arg, read_json};
use crate::output::OutputDir;
use crate::targets::read_targets;

pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const FIT_LOG_FILE: &str = "fit_log.jsonl";
pub const FLIP_CHECK_FILE: &str = "flip_check.json";
pub const FRAMES_DIR: &str = "frames";

#[derive(clap::Args, Clone, Debug)]
pub struct FitArgs {
    /// Directory of frame directories, or a single frame directory.
    pub targets: PathBuf,
    /// Template JSON file, or `t_new` / `t_orig`.
    #[arg(long, default_value = "t_new")]
    pub template: String,
    #[arg(long)]
    pub out: PathBuf,
    /// FitConfig JSON; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `baseline18` or `coarse2fine20`.
    #[arg(long)]
    pub mode: Option<Mode>,
    /// `constrained` or `full_affine`.
    #[arg(long)]
    pub param: Option<Parameterization>,
    /// Include the pixel MSE term (the default).
    #[arg(long, conflicts_with = "no_mse")]
    pub use_mse: bool,
    /// Drop the pixel MSE term; needs `--perceptual`.
    #[arg(long)]
    pub no_mse: bool,
    /// Add a perceptual term: `identity` or `pyramid`.
    #[arg(long)]
    pub perceptual: Option<Perceptual>,
    /// Also fit the mirrored frames and report how well the two fits agree.
    #[arg(long)]
    pub flip_augment: bool,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Start each frame from the previous frame's fit.
    #[arg(long)]
    pub warm_start: bool,
    #[arg(long, env = "POSEKIT_SEED")]
    pub seed: Option<u64>,
    /// Subject id for the predictions; defaults to the targets directory name.
    #[arg(long)]
    pub subject: Option<String>,
}

#[derive(Serialize)]
struct FrameRecord<'a> {
    frame_id: &'a str,
    result: &'a FitResult,
}

#[derive(Serialize)]
struct LogRecord<'a> {
    frame_id: &'a str,
    iteration: usize,
    #[serde(flatten)]
    loss: &'a LossReport,
}

pub fn resolve_config(args: &FitArgs, out: Option<&mut OutputDir>) -> Result<FitConfig> {
    let mut cfg: FitConfig = match &args.config {
        Some(p) => read_json(p, out)?,
        None => FitConfig::default(),
    };
    if let Some(m) = args.mode {
        cfg.mode = m;
    }
    if let Some(p) = args.param {
        cfg.parameterization = p;
    }
    if args.use_mse {
        cfg.use_mse = true;
    }
    if args.no_mse {
        cfg.use_mse = false;
    }
    if args.perceptual.is_some() {
        cfg.perceptual = args.perceptual;
    }
    if let Some(n) = args.max_iters {
        cfg.max_iters = n;
    }
    if args.warm_start {
        cfg.warm_start = true;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Writes per-frame results, predictions, the loss log and a manifest.
pub fn run(args: &FitArgs) -> Result<String> {
    let mut out = OutputDir::create(&args.out)?;
    let cfg = resolve_config(args, Some(&mut out))?;
    let t = load_template_arg(&args.template, Some(&mut out))?;
    let frames = read_targets(&args.targets, Some(&mut out))?;
    let subject = args.subject.clone().unwrap_or_else(|| {
        args.targets
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "subject".into())
    });
    let targets: Vec<_> = frames.iter().map(|(_, h)| h.clone()).collect();
    let name_frame = |e: Error| {
        let id = match &e {
            Error::InFrame { index, .. } => frames[*index].0.clone(),
            _ => "?".into(),
        };
        anyhow::Error::new(e).context(format!("fitting frame `{id}`"))
    };
    let (results, flip) = if args.flip_augment {
        let (r, f) = fit_sequence_with_flip_check(&targets, &t, &cfg).map_err(name_frame)?;
        (r, Some(f))
    } else {
        (fit_sequence(&targets, &t, &cfg).map_err(name_frame)?, None)
    };

    let mut predictions = Vec::with_capacity(results.len());
    let mut log = String::new();
    for ((id, target), r) in frames.iter().zip(&results) {
        out.write_json(&format!("{FRAMES_DIR}/{id}.json"), &FrameRecord { frame_id: id, result: r })?;
        for (iteration, loss) in r.loss_trace.iter().enumerate() {
            log.push_str(&serde_json::to_string(&LogRecord { frame_id: id, iteration, loss })?);
            log.push('\n');
        }
        predictions.push(FrameAnnotation {
            frame_id: id.clone(),
            subject_id: subject.clone(),
            image_size: [target.width as u32, target.height as u32],
            keypoints: r.pose.keypoints,
            flipped: false,
        });
    }
    out.write(PREDICTIONS_FILE, annotations_to_jsonl(&predictions).as_bytes())?;
    out.write(FIT_LOG_FILE, log.as_bytes())?;
    if let Some(f) = &flip {
        out.write_json(FLIP_CHECK_FILE, f)?;
    }
    let config = json!({
        "targets": args.targets.display().to_string(),
        "template": args.template,
        "subject": subject,
        "flip_augment": args.flip_augment,
        "parameter_count": cfg.parameter_count(),
        "fit": cfg,
    });
    out.finish("fit", config, cfg.seed)?;
    Ok(summary(&results, flip.as_ref(), &cfg))
}

fn summary(results: &[FitResult], flip: Option<&FlipCheck>, cfg: &FitConfig) -> String {
    let n = results.len() as f64;
    let mean_loss = results.iter().map(|r| r.final_loss().total).sum::<f64>() / n;
    let converged = results.iter().filter(|r| r.converged).count();
    let mut s = format!(
        "fitted {} frames ({}/{}, {} parameters): mean final loss {mean_loss:.6e}, {converged} converged",
        results.len(),
        cfg.mode,
        cfg.parameterization,
        cfg.parameter_count()
    );
    if let Some(f) = flip {
        s.push_str(&format!(
            "; flip check max {:.4} px, mean {:.4} px",
            f.max_keypoint_discrepancy, f.mean_keypoint_discrepancy
        ));
    }
    s
}
