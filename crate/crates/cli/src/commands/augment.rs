//! `posekit augment`: flip a seeded subset of annotations.

use std::path::PathBuf;

use anyhow::{Context, Result};
use posekit::metrics::{annotations_to_jsonl, parse_annotations};
use posekit::{flip_annotation, Error, FrameAnnotation};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::output::read_input;

#[derive(clap::Args, Clone, Debug)]
pub struct AugmentArgs {
    /// Annotations (JSON Lines).
    pub annotations: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Share of frames to flip, rounded to the nearest count.
    #[arg(long, default_value_t = 0.5)]
    pub fraction: f64,
    #[arg(long, env = "POSEKIT_SEED", default_value_t = 0)]
    pub seed: u64,
}

/// Flips `round(fraction · n)` records chosen by `seed`, in place. Each
/// flipped record has its `flipped` flag toggled; order is preserved.
pub fn augment(records: &[FrameAnnotation], fraction: f64, seed: u64) -> Result<(Vec<FrameAnnotation>, usize)> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidConfig(format!("fraction must be in [0, 1], got {fraction}")).into());
    }
    let n = records.len();
    let k = ((fraction * n as f64).round() as usize).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![false; n];
    for i in rand::seq::index::sample(&mut rng, n, k) {
        chosen[i] = true;
    }
    let out = records
        .iter()
        .zip(&chosen)
        .map(|(r, &c)| if c { flip_annotation(r) } else { r.clone() })
        .collect();
    Ok((out, k))
}

pub fn run(args: &AugmentArgs) -> Result<String> {
    let bytes = read_input(&args.annotations, None)?;
    let text = String::from_utf8(bytes).with_context(|| format!("{}: not UTF-8", args.annotations.display()))?;
    let records = parse_annotations(&text).with_context(|| format!("parsing {}", args.annotations.display()))?;
    let (out, k) = augment(&records, args.fraction, args.seed)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    std::fs::write(&args.out, annotations_to_jsonl(&out)).with_context(|| format!("writing {}", args.out.display()))?;
    Ok(format!("flipped {k} of {} records into {}", records.len(), args.out.display()))
}
